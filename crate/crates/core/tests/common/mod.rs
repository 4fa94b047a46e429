#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::thread;

use scenediag_core::config::ExperimentConfig;
use scenediag_core::dashboard::{serve_blocking, RunSource};
use scenediag_core::demo::write_demo;
use scenediag_core::experiment::Experiment;
use scenediag_core::orchestrator::{run_experiment, RunOptions, RunSummary};

pub fn run_config(cfg: ExperimentConfig, workers: usize) -> RunSummary {
    let exp = Arc::new(Experiment::from_config(cfg).unwrap());
    run_experiment(exp, RunOptions { local_workers: workers, ..Default::default() }).unwrap()
}

/// Write and run the demo under `dir`; returns the run directory.
pub fn demo_run(dir: &Path, workers: usize) -> PathBuf {
    let path = write_demo(dir, None).unwrap();
    let summary = run_config(ExperimentConfig::load(&path).unwrap(), workers);
    assert_eq!(summary.exit_code(), 0);
    dir.join("run")
}

/// Start the dashboard on an ephemeral port in a background thread.
pub fn start_dashboard(source: RunSource) -> SocketAddr {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        serve_blocking(source, "127.0.0.1:0".parse().unwrap(), move |addr| tx.send(addr).unwrap()).unwrap();
    });
    rx.recv().unwrap()
}

pub fn get(addr: SocketAddr, path: &str) -> (u16, Vec<u8>) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
    let mut resp = agent.get(&format!("http://{addr}{path}")).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_vec().unwrap())
}

pub fn get_json(addr: SocketAddr, path: &str) -> (u16, serde_json::Value) {
    let (s, body) = get(addr, path);
    (s, serde_json::from_slice(&body).unwrap())
}
