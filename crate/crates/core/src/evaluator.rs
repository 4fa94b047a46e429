//! Model clients and correctness rules.
//!
//! A [`ModelClient`] turns an image into a raw [`ModelResponse`]; an
//! [`Evaluator`] turns that response plus the render's own ground truth into a
//! verdict. Evaluators hold no state, so correctness is a pure function of the
//! response and the render buffers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::RgbBuffer;
use crate::render::RenderOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Detection,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model timed out after {0:?}")]
    Timeout(Duration),
    #[error("model transport error: {0}")]
    Transport(String),
    #[error("malformed model response: {0}")]
    Schema(String),
}

/// One predicted box. Coordinates are normalized `[left, top, right, bottom]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box", alias = "bbox")]
    pub bbox: [f64; 4],
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelResponse {
    Scores(Vec<f64>),
    Detections(Vec<Detection>),
    /// Per-pixel foreground prediction, row-major.
    Mask(Vec<bool>),
}

impl ModelResponse {
    /// Parse the JSON body of the model HTTP protocol and check it against a
    /// vocabulary of `classes` entries.
    pub fn parse(body: &[u8], classes: usize) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Body {
            scores: Option<Vec<f64>>,
            detections: Option<Vec<Detection>>,
            mask: Option<Vec<u8>>,
        }
        let b: Body = serde_json::from_slice(body).map_err(|e| ModelError::Schema(e.to_string()))?;
        let resp = match (b.scores, b.detections, b.mask) {
            (Some(s), None, None) => ModelResponse::Scores(s),
            (None, Some(d), None) => ModelResponse::Detections(d),
            (None, None, Some(m)) => ModelResponse::Mask(m.into_iter().map(|v| v != 0).collect()),
            _ => return Err(ModelError::Schema("expected exactly one of scores, detections, mask".into())),
        };
        resp.validate(classes)?;
        Ok(resp)
    }

    pub fn validate(&self, classes: usize) -> Result<(), ModelError> {
        match self {
            ModelResponse::Scores(s) => {
                if s.len() != classes {
                    return Err(ModelError::Schema(format!("{} scores for {classes} classes", s.len())));
                }
                if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                    return Err(ModelError::Schema(format!("score {i} is not finite")));
                }
            }
            ModelResponse::Detections(ds) => {
                for (i, d) in ds.iter().enumerate() {
                    let [l, t, r, b] = d.bbox;
                    let inside = d.bbox.iter().all(|v| (0.0..=1.0).contains(v));
                    if !inside || l >= r || t >= b {
                        return Err(ModelError::Schema(format!("detection {i}: bad box {:?}", d.bbox)));
                    }
                    if d.class >= classes {
                        return Err(ModelError::Schema(format!("detection {i}: class {} out of range", d.class)));
                    }
                    if !d.score.is_finite() {
                        return Err(ModelError::Schema(format!("detection {i}: score is not finite")));
                    }
                }
            }
            ModelResponse::Mask(_) => {}
        }
        Ok(())
    }
}

/// Shared model handle. Implementations must tolerate concurrent `infer`
/// calls from several worker threads.
pub trait ModelClient: Send + Sync {
    fn vocabulary(&self) -> &[String];
    fn infer(&self, image: &RgbBuffer) -> Result<ModelResponse, ModelError>;
}

/// Class vocabulary file: one name per line, line index = class id. Blank
/// trailing lines are ignored.
pub fn load_vocabulary(path: &Path) -> std::io::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut names: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
    while names.last().is_some_and(|l| l.is_empty()) {
        names.pop();
    }
    Ok(names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyClass {
    pub name: String,
    pub color: [f64; 3],
}

fn default_classes() -> Vec<ToyClass> {
    [("red", [1.0, 0.0, 0.0]), ("green", [0.0, 1.0, 0.0]), ("blue", [0.0, 0.0, 1.0]), ("yellow", [1.0, 1.0, 0.0])]
        .into_iter()
        .map(|(n, c)| ToyClass { name: n.into(), color: c })
        .collect()
}

fn default_tolerance() -> f64 {
    0.05
}

/// Settings for the built-in nearest-centroid classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelSpec {
    #[serde(default = "default_classes")]
    pub classes: Vec<ToyClass>,
    /// Pixels within `ignore_tolerance` (max channel difference) of this colour
    /// are left out of the mean, e.g. a plain studio backdrop.
    #[serde(default)]
    pub ignore_color: Option<[f64; 3]>,
    #[serde(default = "default_tolerance")]
    pub ignore_tolerance: f64,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self { classes: default_classes(), ignore_color: None, ignore_tolerance: default_tolerance() }
    }
}

/// Mean-RGB nearest-centroid classifier; score of a class is the negated
/// squared distance from the mean colour to its centroid.
pub struct ToyCentroidModel {
    spec: ToyModelSpec,
    names: Vec<String>,
}

impl ToyCentroidModel {
    pub fn new(spec: ToyModelSpec) -> Self {
        let names = spec.classes.iter().map(|c| c.name.clone()).collect();
        Self { spec, names }
    }

    pub fn mean_color(&self, image: &RgbBuffer) -> [f64; 3] {
        let Some(ignore) = self.spec.ignore_color else {
            return image.mean();
        };
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for p in image.pixels() {
            let skip = (0..3).all(|c| (p[c] as f64 - ignore[c]).abs() <= self.spec.ignore_tolerance);
            if !skip {
                (0..3).for_each(|c| sum[c] += p[c] as f64);
                n += 1;
            }
        }
        if n == 0 {
            return image.mean();
        }
        sum.map(|s| s / n as f64)
    }
}

impl ModelClient for ToyCentroidModel {
    fn vocabulary(&self) -> &[String] {
        &self.names
    }

    fn infer(&self, image: &RgbBuffer) -> Result<ModelResponse, ModelError> {
        let m = self.mean_color(image);
        let scores = self
            .spec
            .classes
            .iter()
            .map(|c| -(0..3).map(|i| (m[i] - c.color[i]).powi(2)).sum::<f64>())
            .collect();
        Ok(ModelResponse::Scores(scores))
    }
}

/// Client for a model served over HTTP: POST a PNG, receive JSON.
pub struct HttpModelClient {
    agent: ureq::Agent,
    url: String,
    timeout: Duration,
    names: Vec<String>,
}

impl HttpModelClient {
    pub fn new(url: impl Into<String>, vocabulary: Vec<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().new_agent();
        Self { agent, url: url.into(), timeout, names: vocabulary }
    }
}

impl ModelClient for HttpModelClient {
    fn vocabulary(&self) -> &[String] {
        &self.names
    }

    fn infer(&self, image: &RgbBuffer) -> Result<ModelResponse, ModelError> {
        let png = image.to_png();
        let resp = self.agent.post(&self.url).header("content-type", "image/png").send(&png[..]);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(ModelError::Timeout(self.timeout)),
            Err(e) => return Err(ModelError::Transport(e.to_string())),
        };
        let body = match resp.body_mut().read_to_vec() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => return Err(ModelError::Timeout(self.timeout)),
            Err(e) => return Err(ModelError::Transport(e.to_string())),
        };
        ModelResponse::parse(&body, self.names.len())
    }
}

/// Memoizes responses by configuration id for the lifetime of one run.
/// Failures are not cached.
pub struct CachedModelClient {
    inner: Arc<dyn ModelClient>,
    cache: Mutex<HashMap<u64, ModelResponse>>,
}

impl CachedModelClient {
    pub fn new(inner: Arc<dyn ModelClient>) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn vocabulary(&self) -> &[String] {
        self.inner.vocabulary()
    }

    /// Returns the response and whether it came from the cache.
    pub fn infer(&self, config_id: u64, image: &RgbBuffer) -> Result<(ModelResponse, bool), ModelError> {
        if let Some(r) = self.cache.lock().unwrap().get(&config_id) {
            return Ok((r.clone(), true));
        }
        let r = self.inner.infer(image)?;
        self.cache.lock().unwrap().insert(config_id, r.clone());
        Ok((r, false))
    }

    pub fn len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Verdict of an evaluator. `is_correct = None` means not applicable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub is_correct: Option<bool>,
    pub metrics: BTreeMap<String, f64>,
}

/// Custom objective hook. Metric names must be stable across calls since
/// analyses key on them.
pub trait Evaluator: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(
        &self,
        output: &RenderOutput,
        response: &ModelResponse,
        label_ids: &BTreeSet<usize>,
    ) -> Result<Evaluation, ModelError>;
}

/// Index of the largest score; ties go to the lowest id.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub struct Top1;

impl Evaluator for Top1 {
    fn name(&self) -> &str {
        "top1"
    }

    fn evaluate(&self, _: &RenderOutput, response: &ModelResponse, label_ids: &BTreeSet<usize>) -> Result<Evaluation, ModelError> {
        let ModelResponse::Scores(scores) = response else {
            return Err(ModelError::Schema("classification needs a score vector".into()));
        };
        let top = argmax(scores).ok_or_else(|| ModelError::Schema("empty score vector".into()))?;
        let ok = label_ids.contains(&top);
        Ok(Evaluation { is_correct: Some(ok), metrics: BTreeMap::from([("top1_correct".to_string(), ok as u8 as f64)]) })
    }
}

/// Tight box around the foreground pixels, normalized so that pixel `x`
/// spans `[x/W, (x+1)/W)`. `None` when the mask is empty.
pub fn mask_bbox(seg: &[bool], width: u32, height: u32) -> Option<[f64; 4]> {
    let (w, h) = (width as usize, height as usize);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (i, _) in seg.iter().enumerate().filter(|(_, s)| **s) {
        let (x, y) = (i % w, i / w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    (x0 != usize::MAX).then(|| [x0 as f64 / w as f64, y0 as f64 / h as f64, (x1 + 1) as f64 / w as f64, (y1 + 1) as f64 / h as f64])
}

pub fn box_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let inter = area([a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub struct BoxMatch {
    pub iou_threshold: f64,
}

impl Default for BoxMatch {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

impl Evaluator for BoxMatch {
    fn name(&self) -> &str {
        "box_match"
    }

    fn evaluate(&self, output: &RenderOutput, response: &ModelResponse, label_ids: &BTreeSet<usize>) -> Result<Evaluation, ModelError> {
        let ModelResponse::Detections(dets) = response else {
            return Err(ModelError::Schema("detection needs a box list".into()));
        };
        let Some(gt) = mask_bbox(&output.seg, output.width, output.height) else {
            return Ok(Evaluation::default());
        };
        let best = dets
            .iter()
            .filter(|d| label_ids.contains(&d.class))
            .map(|d| box_iou(d.bbox, gt))
            .fold(0.0, f64::max);
        Ok(Evaluation {
            is_correct: Some(best >= self.iou_threshold),
            metrics: BTreeMap::from([("best_iou".to_string(), best)]),
        })
    }
}

/// Mask IoU of a predicted foreground mask against the render's own mask.
pub struct SegmentationIou {
    pub threshold: f64,
}

pub fn mask_iou(pred: &[bool], truth: &[bool]) -> f64 {
    let inter = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count();
    let union = pred.iter().zip(truth).filter(|(p, t)| **p || **t).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

impl Evaluator for SegmentationIou {
    fn name(&self) -> &str {
        "segmentation_iou"
    }

    fn evaluate(&self, output: &RenderOutput, response: &ModelResponse, _: &BTreeSet<usize>) -> Result<Evaluation, ModelError> {
        let ModelResponse::Mask(mask) = response else {
            return Err(ModelError::Schema("segmentation needs a mask".into()));
        };
        if mask.len() != output.seg.len() {
            return Err(ModelError::Schema(format!("mask has {} pixels, render has {}", mask.len(), output.seg.len())));
        }
        let iou = mask_iou(mask, &output.seg);
        Ok(Evaluation { is_correct: Some(iou >= self.threshold), metrics: BTreeMap::from([("mask_iou".to_string(), iou)]) })
    }
}

/// Everything logged about one inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1_label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<Detection>,
    /// `None` when the task does not apply (no object in frame).
    pub is_correct: Option<bool>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    pub latency: f64,
    #[serde(default)]
    pub cached: bool,
}

/// Map label names onto vocabulary ids; names missing from the vocabulary
/// are dropped.
pub fn label_ids(vocabulary: &[String], labels: &BTreeSet<String>) -> BTreeSet<usize> {
    vocabulary.iter().enumerate().filter(|(_, n)| labels.contains(*n)).map(|(i, _)| i).collect()
}

/// Run the model on `output` and grade the response for `task`.
pub fn evaluate(
    task: TaskKind,
    output: &RenderOutput,
    client: &CachedModelClient,
    config_id: u64,
    labels: &BTreeSet<usize>,
    iou_threshold: f64,
) -> Result<PredictionResult, ModelError> {
    let start = Instant::now();
    let (resp, cached) = client.infer(config_id, &output.rgb_image())?;
    let latency = start.elapsed().as_secs_f64();
    let vocab = client.vocabulary();
    let (eval, mut result) = match (task, &resp) {
        (TaskKind::Classification, ModelResponse::Scores(s)) => {
            let top1 = argmax(s);
            let r = PredictionResult {
                task,
                scores: s.clone(),
                top1,
                top1_label: top1.and_then(|i| vocab.get(i).cloned()),
                detections: Vec::new(),
                is_correct: None,
                metrics: BTreeMap::new(),
                latency,
                cached,
            };
            (Top1.evaluate(output, &resp, labels)?, r)
        }
        (TaskKind::Detection, ModelResponse::Detections(d)) => {
            let r = PredictionResult {
                task,
                scores: Vec::new(),
                top1: None,
                top1_label: None,
                detections: d.clone(),
                is_correct: None,
                metrics: BTreeMap::new(),
                latency,
                cached,
            };
            (BoxMatch { iou_threshold }.evaluate(output, &resp, labels)?, r)
        }
        _ => return Err(ModelError::Schema(format!("response does not fit a {task:?} task"))),
    };
    result.is_correct = eval.is_correct;
    result.metrics = eval.metrics;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use proptest::prelude::*;

    fn output(w: u32, h: u32, rgb: [f32; 3], seg: Vec<bool>) -> RenderOutput {
        RenderOutput {
            width: w,
            height: h,
            rgb: vec![rgb; (w * h) as usize],
            uv: Vec::new(),
            depth: Vec::new(),
            seg,
            render_time: 0.0,
        }
    }

    fn ids(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    fn top1(scores: Vec<f64>, labels: &[usize]) -> Option<bool> {
        Top1.evaluate(&output(1, 1, [0.0; 3], vec![]), &ModelResponse::Scores(scores), &ids(labels)).unwrap().is_correct
    }

    #[test]
    fn one_hot_on_label_is_correct() {
        assert_eq!(top1(vec![0.0, 1.0, 0.0], &[1]), Some(true));
        assert_eq!(top1(vec![0.0, 1.0, 0.0], &[2]), Some(false));
    }

    #[test]
    fn ties_go_to_lowest_id() {
        assert_eq!(top1(vec![0.5, 0.5, 0.0], &[0]), Some(true));
        assert_eq!(top1(vec![0.5, 0.5, 0.0], &[1]), Some(false));
    }

    #[test]
    fn toy_model_red_render() {
        let model = ToyCentroidModel::new(ToyModelSpec::default());
        let out = output(4, 4, [1.0, 0.0, 0.0], vec![]);
        let client = CachedModelClient::new(Arc::new(model));
        let r = evaluate(TaskKind::Classification, &out, &client, 0, &ids(&[0]), 0.5).unwrap();
        assert_eq!(r.top1_label.as_deref(), Some("red"));
        assert_eq!(r.is_correct, Some(true));
    }

    #[test]
    fn toy_model_solid_blue() {
        let model = ToyCentroidModel::new(ToyModelSpec::default());
        let ModelResponse::Scores(s) = model.infer(&RgbBuffer::solid(3, 3, [0.0, 0.0, 1.0])).unwrap() else { panic!() };
        assert_eq!(argmax(&s), Some(2));
        assert_eq!(s[2], 0.0);
        // Red centroid sits at squared distance 2.
        assert!((s[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn toy_model_ignores_backdrop() {
        let spec = ToyModelSpec { ignore_color: Some([1.0; 3]), ..ToyModelSpec::default() };
        let model = ToyCentroidModel::new(spec);
        // One red pixel on a white field: plain mean would be pinkish white.
        let img = RgbBuffer::from_fn(4, 4, |x, y| if x == 1 && y == 1 { [0.8, 0.0, 0.0] } else { [1.0; 3] });
        assert_eq!(model.mean_color(&img), [0.800000011920929, 0.0, 0.0]);
        // All-backdrop images fall back to the plain mean.
        assert_eq!(model.mean_color(&RgbBuffer::solid(2, 2, [1.0; 3])), [1.0; 3]);
    }

    #[test]
    fn vocabulary_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("classes.txt");
        std::fs::write(&p, "cat\ndog\n\n").unwrap();
        assert_eq!(load_vocabulary(&p).unwrap(), vec!["cat", "dog"]);
        let v = vec!["cat".to_string(), "dog".to_string()];
        assert_eq!(label_ids(&v, &BTreeSet::from(["dog".to_string(), "emu".to_string()])), ids(&[1]));
    }

    /// Serves `n` requests, answering each with `body` after `delay`.
    fn fixture_server(body: &'static str, delay: Duration, n: usize) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming().take(n) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut ctype = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if let Some(v) = l.strip_prefix("content-type:") {
                        ctype = v.trim().to_string();
                    }
                }
                let mut payload = vec![0; len];
                reader.read_exact(&mut payload).unwrap();
                assert_eq!(ctype, "image/png");
                assert!(RgbBuffer::decode(&payload).is_ok());
                std::thread::sleep(delay);
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        format!("http://{addr}/infer")
    }

    fn vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn http_client_parses_fixture_scores() {
        let url = fixture_server(r#"{"scores": [0.1, 0.7, 0.2]}"#, Duration::ZERO, 1);
        let client = HttpModelClient::new(url, vocab(3), Duration::from_secs(5));
        let r = client.infer(&RgbBuffer::solid(2, 2, [0.5; 3])).unwrap();
        assert_eq!(r, ModelResponse::Scores(vec![0.1, 0.7, 0.2]));
    }

    #[test]
    fn http_client_parses_detections() {
        let url = fixture_server(r#"{"detections": [{"box": [0.1, 0.2, 0.5, 0.6], "class": 1, "score": 0.9}]}"#, Duration::ZERO, 1);
        let client = HttpModelClient::new(url, vocab(2), Duration::from_secs(5));
        let r = client.infer(&RgbBuffer::solid(2, 2, [0.5; 3])).unwrap();
        assert_eq!(r, ModelResponse::Detections(vec![Detection { bbox: [0.1, 0.2, 0.5, 0.6], class: 1, score: 0.9 }]));
    }

    #[test]
    fn malformed_responses_are_schema_errors() {
        for body in [r#"{"scores": [1.0]}"#, r#"{"logits": [1, 2]}"#, "not json", r#"{"detections": [{"box": [0.5, 0, 0.2, 1], "class": 0, "score": 1}]}"#] {
            assert!(matches!(ModelResponse::parse(body.as_bytes(), 2), Err(ModelError::Schema(_))), "{body}");
        }
        let url = fixture_server(r#"{"scores": "x"}"#, Duration::ZERO, 1);
        let client = HttpModelClient::new(url, vocab(2), Duration::from_secs(5));
        assert!(matches!(client.infer(&RgbBuffer::solid(1, 1, [0.0; 3])), Err(ModelError::Schema(_))));
    }

    #[test]
    fn slow_server_times_out() {
        let url = fixture_server(r#"{"scores": [1.0]}"#, Duration::from_millis(800), 1);
        let client = HttpModelClient::new(url, vocab(1), Duration::from_millis(150));
        assert!(matches!(client.infer(&RgbBuffer::solid(1, 1, [0.0; 3])), Err(ModelError::Timeout(_))));
    }

    #[test]
    fn refused_connection_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let client = HttpModelClient::new(format!("http://127.0.0.1:{port}/"), vocab(1), Duration::from_secs(1));
        assert!(matches!(client.infer(&RgbBuffer::solid(1, 1, [0.0; 3])), Err(ModelError::Transport(_))));
    }

    #[test]
    fn cached_second_call_is_faster_and_identical() {
        let url = fixture_server(r#"{"scores": [0.25, 0.75]}"#, Duration::from_millis(50), 1);
        let client = CachedModelClient::new(Arc::new(HttpModelClient::new(url, vocab(2), Duration::from_secs(5))));
        let out = output(2, 2, [0.3; 3], vec![]);
        let first = evaluate(TaskKind::Classification, &out, &client, 7, &ids(&[1]), 0.5).unwrap();
        let second = evaluate(TaskKind::Classification, &out, &client, 7, &ids(&[1]), 0.5).unwrap();
        assert!(!first.cached && second.cached);
        assert!(second.latency < first.latency);
        assert_eq!(first.scores, second.scores);
        assert_eq!(first.is_correct, second.is_correct);
        assert_eq!(client.len(), 1);
    }

    fn det_output() -> RenderOutput {
        // 4x4 mask with foreground in columns 0..2, rows 0..2: box (0, 0, 0.5, 0.5).
        let seg = (0..16).map(|i| i % 4 < 2 && i / 4 < 2).collect();
        output(4, 4, [0.0; 3], seg)
    }

    fn det(bbox: [f64; 4], class: usize) -> Detection {
        Detection { bbox, class, score: 1.0 }
    }

    fn box_eval(dets: Vec<Detection>) -> Evaluation {
        BoxMatch::default().evaluate(&det_output(), &ModelResponse::Detections(dets), &ids(&[0])).unwrap()
    }

    #[test]
    fn mask_bbox_is_tight() {
        assert_eq!(mask_bbox(&det_output().seg, 4, 4), Some([0.0, 0.0, 0.5, 0.5]));
        assert_eq!(mask_bbox(&[false; 4], 2, 2), None);
    }

    #[test]
    fn identical_box_is_correct() {
        let e = box_eval(vec![det([0.0, 0.0, 0.5, 0.5], 0)]);
        assert_eq!(e.is_correct, Some(true));
        assert_eq!(e.metrics["best_iou"], 1.0);
        // Right box, wrong class.
        assert_eq!(box_eval(vec![det([0.0, 0.0, 0.5, 0.5], 1)]).is_correct, Some(false));
    }

    #[test]
    fn disjoint_box_is_incorrect() {
        let e = box_eval(vec![det([0.5, 0.5, 1.0, 1.0], 0)]);
        assert_eq!(e.is_correct, Some(false));
        assert_eq!(e.metrics["best_iou"], 0.0);
    }

    #[test]
    fn half_overlap_is_one_third() {
        // Two 0.5x0.5 boxes offset by half a width: intersection 0.125,
        // union 0.25 + 0.25 - 0.125 = 0.375.
        let e = box_eval(vec![det([0.25, 0.0, 0.75, 0.5], 0)]);
        assert!((e.metrics["best_iou"] - 0.125 / 0.375).abs() < 1e-12);
        assert_eq!(e.is_correct, Some(false));
    }

    #[test]
    fn empty_mask_is_not_applicable() {
        let out = output(2, 2, [0.0; 3], vec![false; 4]);
        let e = BoxMatch::default().evaluate(&out, &ModelResponse::Detections(vec![]), &ids(&[0])).unwrap();
        assert_eq!(e.is_correct, None);
    }

    #[test]
    fn segmentation_iou_cases() {
        let out = det_output();
        let eval = SegmentationIou { threshold: 0.5 };
        let run = |m: Vec<bool>| eval.evaluate(&out, &ModelResponse::Mask(m), &BTreeSet::new()).unwrap().metrics["mask_iou"];
        assert_eq!(run(out.seg.clone()), 1.0);
        assert_eq!(run(vec![false; 16]), 0.0);
        // Checkerboard: 2 of the 4 foreground pixels hit, 8 predicted in total.
        let checker: Vec<bool> = (0..16).map(|i| (i % 4 + i / 4) % 2 == 0).collect();
        let inter = checker.iter().zip(&out.seg).filter(|(a, b)| **a && **b).count();
        let union = checker.iter().zip(&out.seg).filter(|(a, b)| **a || **b).count();
        assert_eq!((inter, union), (2, 10));
        assert!((run(checker) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn toy_model_is_safe_to_share() {
        let client = Arc::new(CachedModelClient::new(Arc::new(ToyCentroidModel::new(ToyModelSpec::default()))));
        let handles: Vec<_> = (0..4u64)
            .map(|i| {
                let c = client.clone();
                std::thread::spawn(move || c.infer(i, &RgbBuffer::solid(2, 2, [0.0, 1.0, 0.0])).unwrap().0)
            })
            .collect();
        for h in handles {
            let ModelResponse::Scores(s) = h.join().unwrap() else { panic!() };
            assert_eq!(argmax(&s), Some(1));
        }
        assert_eq!(client.len(), 4);
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_verdict(scores in prop::collection::vec(-10.0f64..10.0, 1..8), k in 1e-3f64..1e3, label in 0usize..8) {
            let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
            prop_assert_eq!(top1(scores, &[label]), top1(scaled, &[label]));
        }

        #[test]
        fn box_order_does_not_matter(
            boxes in prop::collection::vec((0.0f64..0.5, 0.0f64..0.5, 0.01f64..0.5, 0.01f64..0.5, 0usize..2), 0..6),
            seed in any::<u64>(),
        ) {
            let dets: Vec<Detection> = boxes.iter().map(|&(l, t, w, h, c)| det([l, t, l + w, t + h], c)).collect();
            let mut shuffled = dets.clone();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(box_eval(dets), box_eval(shuffled));
        }
    }
}
