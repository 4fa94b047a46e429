use std::collections::BTreeMap;

use crate::controls::Literal;
use crate::evaluator::{PredictionResult, TaskKind};
use crate::experiment::RenderConfiguration;
use crate::orchestrator::log::{LogRecord, Timing};
use crate::scene::Resolution;

pub fn record(id: u64, mesh: &str, is_correct: Option<bool>) -> LogRecord {
    LogRecord {
        id,
        pair: 0,
        mesh: mesh.into(),
        environment: "env".into(),
        params: BTreeMap::new(),
        config: RenderConfiguration {
            mesh: mesh.into(),
            environment: "env".into(),
            controls: vec![],
            seed: 0,
            resolution: Resolution { width: 4, height: 4 },
        },
        is_correct,
        prediction: None,
        error: None,
        attempts: 1,
        timing: Timing { render: 0.0, infer: 0.0 },
        worker: None,
        buffers: BTreeMap::new(),
        warnings: vec![],
        object_pixels: 0,
        dummy: false,
    }
}

pub fn with_param(mut r: LogRecord, key: &str, value: Literal) -> LogRecord {
    r.params.insert(key.into(), value);
    r
}

pub fn with_label(mut r: LogRecord, label: &str) -> LogRecord {
    r.prediction = Some(PredictionResult {
        task: TaskKind::Classification,
        scores: vec![],
        top1: None,
        top1_label: Some(label.into()),
        detections: vec![],
        is_correct: r.is_correct,
        metrics: BTreeMap::new(),
        latency: 0.0,
        cached: false,
    });
    r
}
