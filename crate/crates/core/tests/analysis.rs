use std::path::Path;
use std::sync::Arc;

use scenediag_core::analysis::{run_report, AnalysisError, ReportOptions, RunData};
use scenediag_core::config::ExperimentConfig;
use scenediag_core::demo::{texture_bias_config_text, write_demo};
use scenediag_core::experiment::Experiment;
use scenediag_core::orchestrator::{run_experiment, RunOptions};

fn run(cfg: ExperimentConfig) {
    let exp = Arc::new(Experiment::from_config(cfg).unwrap());
    let summary = run_experiment(exp, RunOptions { local_workers: 2, ..Default::default() }).unwrap();
    assert_eq!(summary.exit_code(), 0);
}

fn demo_run(dir: &Path) -> RunData {
    let path = write_demo(dir, None).unwrap();
    run(ExperimentConfig::load(&path).unwrap());
    RunData::load(&dir.join("run")).unwrap()
}

#[test]
fn demo_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = demo_run(dir.path());
    assert_eq!(data.records.len(), 24);
    let opts = ReportOptions::default();

    let by_mesh = run_report(&data, "accuracy_by=mesh", &opts).unwrap();
    let rows = by_mesh.json["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().map(|r| r["n"].as_u64().unwrap()).sum::<u64>(), 24);
    assert!(by_mesh.csv.unwrap().starts_with("mesh,n,correct,accuracy\n"));

    let m = run_report(&data, "matrix=camera.zoom,background.environment", &opts).unwrap();
    let cells = m.json["result"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    for row in cells {
        assert_eq!(row.as_array().unwrap().len(), 3);
        for c in row.as_array().unwrap() {
            assert_eq!(c["n"], 4);
        }
    }
    // Environment is the effective one, set by the background control.
    let env = run_report(&data, "accuracy_by=environment", &opts).unwrap();
    assert_eq!(env.json["result"]["rows"].as_array().unwrap().len(), 2);

    let heat = run_report(&data, "uv_heatmap=8", &opts).unwrap();
    assert_eq!(heat.json["result"]["per_mesh"].as_object().unwrap().len(), 2);
    assert_eq!(heat.json["result"]["skipped_missing"], 0);

    let bc = run_report(&data, "background_complexity", &opts).unwrap();
    let envs = bc.json["result"]["environments"].as_array().unwrap();
    assert_eq!(envs[0]["complexity"], 0.0);
    assert!(envs[1]["complexity"].as_f64().unwrap() > 0.0);

    let c = run_report(&data, "consistency=camera", &opts).unwrap();
    assert_eq!(c.json["result"]["viewpoints"], 4);

    for spec in ["boxplot=environment", "liquid_simplex"] {
        run_report(&data, spec, &opts).unwrap();
    }
    let written = by_mesh_written(&data);
    assert!(written.iter().any(|p| p.ends_with("accuracy_by_mesh.json")));

    match run_report(&data, "nope", &opts) {
        Err(AnalysisError::UnknownReport { available, .. }) => assert!(available.contains("uv_heatmap")),
        other => panic!("{other:?}"),
    }
    match run_report(&data, "accuracy_by=camera.zom", &opts) {
        Err(e @ AnalysisError::UnknownKey { .. }) => assert!(e.to_string().contains("camera.zoom")),
        other => panic!("{other:?}"),
    }
}

fn by_mesh_written(data: &RunData) -> Vec<std::path::PathBuf> {
    let r = run_report(data, "accuracy_by=mesh", &ReportOptions::default()).unwrap();
    r.write(&data.dir.join("reports")).unwrap()
}

#[test]
fn uv_heatmap_without_buffers_says_how_to_fix_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = texture_bias_config_text(&dir.path().join("out").display().to_string());
    let mut cfg = ExperimentConfig::parse(&text, "t").unwrap();
    cfg.policy.counts.insert("orientation.yaw".into(), 1);
    cfg.policy.counts.insert("camera.zoom".into(), 1);
    run(cfg);
    let data = RunData::load(&dir.path().join("out")).unwrap();
    let err = run_report(&data, "uv_heatmap", &ReportOptions::default()).unwrap_err();
    assert!(err.to_string().contains("save_buffers: [uv]"), "{err}");
}
