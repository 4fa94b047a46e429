//! Read-only HTTP/JSON view over run directories for the exploration UI.
//!
//! | endpoint                         | response                                        |
//! |----------------------------------|-------------------------------------------------|
//! | `GET /api/experiments`           | `[{id, manifest}]` for every run                 |
//! | `GET /api/params?run=`           | search-space dimensions plus meshes/environments |
//! | `GET /api/heatmap?run=&x=&y=&…`  | accuracy matrix, same JSON as the analysis module |
//! | `GET /api/records?…&cell=i,j`    | records behind one heatmap cell, by id          |
//! | `GET /api/render/{id}.png?run=`  | saved rgb image                                 |
//!
//! Filter queries: `x` and `y` name the two axis parameters (a `control.param`
//! key, `mesh` or `environment`). Any other parameter given as `key=value` is a
//! slider; unmentioned parameters, or `key=*`, are aggregated. Numeric slider
//! values must lie in the dimension's range and snap to the nearest value
//! present in the log. `run` may be omitted when only one run is served.

use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use lru::LruCache;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::analysis::{matrix_by_two_params, AxisValue, GroupKey, RecordFilter, RunData};
use crate::controls::Literal;
use crate::orchestrator::log::{LogRecord, MANIFEST_FILE, RESULTS_FILE};
use crate::policy::DimensionKind;
use crate::render::Modality;

const CACHE_ENTRIES: usize = 256;

/// Where runs come from.
#[derive(Debug, Clone)]
pub enum RunSource {
    /// A single run directory.
    Run(PathBuf),
    /// Every direct subdirectory holding a manifest.
    DataDir(PathBuf),
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(json!({ "error": self.message }))).into_response()
    }
}

type Stamp = (u64, Option<SystemTime>, Option<SystemTime>);

fn stamp(dir: &Path) -> Stamp {
    let meta = |f: &str| fs::metadata(dir.join(f)).ok();
    let log = meta(RESULTS_FILE);
    (
        log.as_ref().map_or(0, |m| m.len()),
        log.and_then(|m| m.modified().ok()),
        meta(MANIFEST_FILE).and_then(|m| m.modified().ok()),
    )
}

pub struct Dashboard {
    source: RunSource,
    runs: Mutex<HashMap<String, (Stamp, Arc<RunData>)>>,
    cache: Mutex<LruCache<(String, Stamp, String), Arc<String>>>,
}

impl Dashboard {
    pub fn new(source: RunSource) -> Self {
        Self {
            source,
            runs: Mutex::new(HashMap::new()),
            cache: Mutex::new(LruCache::new(NonZeroUsize::new(CACHE_ENTRIES).expect("nonzero"))),
        }
    }

    /// Run ids and directories, sorted by id.
    pub fn run_dirs(&self) -> Vec<(String, PathBuf)> {
        match &self.source {
            RunSource::Run(dir) => {
                let id = dir.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
                vec![(id, dir.clone())]
            }
            RunSource::DataDir(root) => {
                let mut out: Vec<(String, PathBuf)> = fs::read_dir(root)
                    .into_iter()
                    .flatten()
                    .flatten()
                    .map(|e| e.path())
                    .filter(|p| p.join(MANIFEST_FILE).is_file())
                    .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
                    .collect();
                out.sort();
                out
            }
        }
    }

    fn resolve(&self, run: Option<&str>) -> Result<(String, PathBuf), ApiError> {
        let dirs = self.run_dirs();
        match run {
            Some(id) => dirs
                .into_iter()
                .find(|(name, _)| name == id)
                .ok_or_else(|| ApiError::not_found(format!("unknown run '{id}'"))),
            None if dirs.len() == 1 => Ok(dirs.into_iter().next().unwrap()),
            None if dirs.is_empty() => Err(ApiError::not_found("no runs are being served")),
            None => Err(ApiError::bad_request("several runs are served; pass ?run=<id>")),
        }
    }

    /// Load a run, reloading it when its log or manifest changed.
    fn load(&self, run: Option<&str>) -> Result<(String, Stamp, Arc<RunData>), ApiError> {
        let (id, dir) = self.resolve(run)?;
        let now = stamp(&dir);
        if let Some((s, data)) = self.runs.lock().unwrap().get(&id) {
            if *s == now {
                return Ok((id, now, data.clone()));
            }
        }
        let data = Arc::new(RunData::load(&dir).map_err(|e| ApiError::internal(e.to_string()))?);
        self.runs.lock().unwrap().insert(id.clone(), (now, data.clone()));
        Ok((id, now, data))
    }

    fn cached(
        &self,
        run: Option<&str>,
        query: String,
        f: impl FnOnce(&RunData) -> Result<String, ApiError>,
    ) -> Result<Arc<String>, ApiError> {
        let (id, s, data) = self.load(run)?;
        let key = (id, s, query);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let body = Arc::new(f(&data)?);
        self.cache.lock().unwrap().put(key, body.clone());
        Ok(body)
    }
}

pub fn router(state: Arc<Dashboard>) -> Router {
    Router::new()
        .route("/api/experiments", get(experiments))
        .route("/api/params", get(params))
        .route("/api/heatmap", get(heatmap))
        .route("/api/records", get(records))
        .route("/api/render/{file}", get(render))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serve until the process exits. `on_bound` receives the bound address.
pub fn serve_blocking(
    source: RunSource,
    addr: SocketAddr,
    on_bound: impl FnOnce(SocketAddr) + Send,
) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, router(Arc::new(Dashboard::new(source)))).await
    })
}

fn json_body(body: Arc<String>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body.as_str().to_owned()).into_response()
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("json")
}

type Pairs = Query<Vec<(String, String)>>;

fn run_param(q: &[(String, String)]) -> Option<&str> {
    q.iter().find(|(k, _)| k == "run").map(|(_, v)| v.as_str())
}

/// Canonical cache key: pairs sorted so parameter order does not matter.
fn query_key(endpoint: &str, q: &[(String, String)]) -> String {
    let mut v: Vec<_> = q.iter().filter(|(k, _)| k != "run").collect();
    v.sort();
    format!("{endpoint}?{}", serde_json::to_string(&v).expect("json"))
}

async fn experiments(State(st): State<Arc<Dashboard>>) -> Result<Response, ApiError> {
    let mut out = Vec::new();
    for (id, dir) in st.run_dirs() {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| ApiError::internal(e.to_string()))?;
        let manifest: Value = serde_json::from_str(&text).map_err(|e| ApiError::internal(e.to_string()))?;
        out.push(json!({ "id": id, "manifest": manifest }));
    }
    Ok(axum::Json(out).into_response())
}

async fn params(State(st): State<Arc<Dashboard>>, Query(q): Pairs) -> Result<Response, ApiError> {
    let body = st.cached(run_param(&q), "params".into(), |data| {
        let dims: Vec<Value> = data
            .manifest
            .search_space
            .dimensions
            .iter()
            .map(|d| {
                let mut v = serde_json::to_value(d).expect("json");
                v["key"] = json!(d.key());
                v
            })
            .collect();
        Ok(json!({
            "run": data.manifest.name,
            "dimensions": dims,
            "meshes": data.manifest.meshes,
            "environments": data.manifest.environments,
        })
        .to_string())
    })?;
    Ok(json_body(body))
}

/// A parsed filter query.
#[derive(Debug)]
struct Filter {
    x: GroupKey,
    y: GroupKey,
    sliders: Vec<RecordFilter>,
}

const RESERVED: [&str; 4] = ["run", "x", "y", "cell"];

fn known_key(data: &RunData, key: &str) -> Result<GroupKey, ApiError> {
    match key {
        "mesh" => Ok(GroupKey::Mesh),
        "environment" => Ok(GroupKey::Environment),
        k if data.manifest.search_space.dimensions.iter().any(|d| d.key() == k) => {
            Ok(GroupKey::Param { key: k.into(), bins: None })
        }
        k => {
            let mut keys: Vec<String> = data.manifest.search_space.dimensions.iter().map(|d| d.key()).collect();
            keys.extend(["mesh".into(), "environment".into()]);
            Err(ApiError::bad_request(format!("unknown parameter '{k}'; available: {}", keys.join(", "))))
        }
    }
}

fn slider_value(data: &RunData, key: &GroupKey, raw: &str) -> Result<AxisValue, ApiError> {
    let name = key.name();
    let text_in = |list: &[String]| {
        if list.iter().any(|v| v == raw) {
            Ok(AxisValue::Text(raw.into()))
        } else {
            Err(ApiError::bad_request(format!("{name}: '{raw}' is not one of {}", list.join(", "))))
        }
    };
    let GroupKey::Param { key: k, .. } = key else {
        return match key {
            GroupKey::Mesh => text_in(&data.manifest.meshes),
            _ => text_in(&data.manifest.environments),
        };
    };
    let dim = data.manifest.search_space.dimensions.iter().find(|d| d.key() == *k).expect("checked by known_key");
    match &dim.kind {
        DimensionKind::Continuous { lo, hi } => {
            let v: f64 = raw.parse().map_err(|_| ApiError::bad_request(format!("{name}: '{raw}' is not a number")))?;
            if !(v >= *lo && v <= *hi) {
                return Err(ApiError::bad_request(format!("{name}: {v} is outside [{lo}, {hi}]")));
            }
            // Snap to the nearest logged value.
            let nearest = data
                .records
                .iter()
                .filter_map(|r| r.params.get(k).and_then(Literal::as_f64))
                .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()).then(a.total_cmp(b)));
            Ok(AxisValue::Number(nearest.unwrap_or(v)))
        }
        DimensionKind::Discrete { values } => {
            let found = values.iter().find(|l| l.to_string() == raw).ok_or_else(|| {
                let list: Vec<String> = values.iter().map(|l| l.to_string()).collect();
                ApiError::bad_request(format!("{name}: '{raw}' is not one of {}", list.join(", ")))
            })?;
            Ok(AxisValue::from_literal(found))
        }
    }
}

fn parse_filter(data: &RunData, q: &[(String, String)]) -> Result<Filter, ApiError> {
    let axes: Vec<&(String, String)> = q.iter().filter(|(k, _)| k == "x" || k == "y").collect();
    let xs: Vec<&str> = axes.iter().filter(|(k, _)| k == "x").map(|(_, v)| v.as_str()).collect();
    let ys: Vec<&str> = axes.iter().filter(|(k, _)| k == "y").map(|(_, v)| v.as_str()).collect();
    if axes.len() != 2 || xs.len() != 1 || ys.len() != 1 {
        return Err(ApiError::bad_request(format!(
            "exactly two axes are required (one x and one y), got {}",
            axes.len()
        )));
    }
    if xs[0] == ys[0] {
        return Err(ApiError::bad_request(format!("x and y must be different parameters, both are '{}'", xs[0])));
    }
    let x = known_key(data, xs[0])?;
    let y = known_key(data, ys[0])?;
    let mut sliders = Vec::new();
    let mut seen = Vec::new();
    for (k, v) in q.iter().filter(|(k, _)| !RESERVED.contains(&k.as_str())) {
        let key = known_key(data, k)?;
        if key == x || key == y {
            return Err(ApiError::bad_request(format!("'{k}' is an axis and cannot also be a slider")));
        }
        if seen.contains(k) {
            return Err(ApiError::bad_request(format!("'{k}' is given more than once")));
        }
        seen.push(k.clone());
        if v == "*" || v == "aggregate" {
            continue;
        }
        let value = slider_value(data, &key, v)?;
        sliders.push(RecordFilter { key, value });
    }
    Ok(Filter { x, y, sliders })
}

async fn heatmap(State(st): State<Arc<Dashboard>>, Query(q): Pairs) -> Result<Response, ApiError> {
    let body = st.cached(run_param(&q), query_key("heatmap", &q), |data| {
        let f = parse_filter(data, &q)?;
        Ok(to_json(&matrix_by_two_params(&data.records, &f.x, &f.y, &f.sliders)))
    })?;
    Ok(json_body(body))
}

async fn records(State(st): State<Arc<Dashboard>>, Query(q): Pairs) -> Result<Response, ApiError> {
    let body = st.cached(run_param(&q), query_key("records", &q), |data| {
        let f = parse_filter(data, &q)?;
        let m = matrix_by_two_params(&data.records, &f.x, &f.y, &f.sliders);
        let cell = q.iter().find(|(k, _)| k == "cell").map(|(_, v)| v.as_str());
        let target = match cell {
            None => None,
            Some(c) => {
                let parsed = c.split_once(',').and_then(|(i, j)| Some((i.trim().parse().ok()?, j.trim().parse().ok()?)));
                let (i, j): (usize, usize) =
                    parsed.ok_or_else(|| ApiError::bad_request(format!("cell must be 'i,j', got '{c}'")))?;
                if i >= m.x_values.len() || j >= m.y_values.len() {
                    return Err(ApiError::bad_request(format!(
                        "cell ({i},{j}) outside the {}x{} matrix",
                        m.x_values.len(),
                        m.y_values.len()
                    )));
                }
                Some((m.x_values[i].clone(), m.y_values[j].clone()))
            }
        };
        let mut out: Vec<&LogRecord> = data
            .records
            .iter()
            .filter(|r| r.is_correct.is_some() && f.sliders.iter().all(|s| s.matches(r)))
            .filter(|r| match &target {
                Some((xv, yv)) => f.x.value(r).as_ref() == Some(xv) && f.y.value(r).as_ref() == Some(yv),
                None => f.x.value(r).is_some() && f.y.value(r).is_some(),
            })
            .collect();
        out.sort_by_key(|r| r.id);
        Ok(to_json(&out))
    })?;
    Ok(json_body(body))
}

async fn render(
    State(st): State<Arc<Dashboard>>,
    UrlPath(file): UrlPath<String>,
    Query(q): Pairs,
) -> Result<Response, ApiError> {
    let id: u64 = file
        .strip_suffix(".png")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ApiError::not_found(format!("expected /api/render/<id>.png, got '{file}'")))?;
    let (_, _, data) = st.load(run_param(&q))?;
    let record = data.records.iter().find(|r| r.id == id).ok_or_else(|| ApiError::not_found(format!("no record {id}")))?;
    let hint = "no image saved for this record; rerun with `save_buffers: [rgb]` in the output section";
    let rel = record.buffers.get(&Modality::Rgb).ok_or_else(|| ApiError::not_found(hint))?;
    let bytes = fs::read(data.dir.join(rel)).map_err(|_| ApiError::not_found(hint))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}
