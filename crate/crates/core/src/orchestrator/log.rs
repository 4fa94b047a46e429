//! Run artifacts: the JSON-lines result log, saved buffers and the manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::controls::{ControlWarning, Literal};
use crate::evaluator::{PredictionResult, TaskKind};
use crate::experiment::{ItemError, RenderConfiguration};
use crate::orchestrator::meter::Throughput;
use crate::policy::SearchSpace;
use crate::render::{buffers, Modality, RenderOutput};
use crate::scene::Resolution;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUFFERS_DIR: &str = "buffers";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub render: f64,
    pub infer: f64,
}

/// One line of `results.jsonl`: a finished configuration, completed or errored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub id: u64,
    /// Index of the (mesh, environment) pair whose policy proposed it.
    pub pair: usize,
    pub mesh: String,
    /// Environment actually rendered, after any environment control.
    pub environment: String,
    /// Every control parameter as `control.param`, defaults included.
    pub params: BTreeMap<String, Literal>,
    pub config: RenderConfiguration,
    pub is_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ItemError>,
    pub attempts: u32,
    pub timing: Timing,
    pub worker: Option<u64>,
    /// Saved buffer files relative to the run directory.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub buffers: BTreeMap<Modality, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ControlWarning>,
    pub object_pixels: usize,
    #[serde(default)]
    pub dummy: bool,
}

impl LogRecord {
    pub(crate) fn with_environment(mut self, environment: &str) -> Self {
        self.environment = environment.to_string();
        self
    }

    /// Copy with every scheduling-dependent field zeroed.
    pub fn canonical(&self) -> Self {
        let mut r = self.clone();
        r.timing = Timing::default();
        r.worker = None;
        if let Some(p) = &mut r.prediction {
            p.latency = 0.0;
            p.cached = false;
        }
        r
    }
}

/// Id-sorted canonical records, one JSON document per line.
pub fn canonical_log(records: &[LogRecord]) -> String {
    let mut sorted: Vec<LogRecord> = records.iter().map(LogRecord::canonical).collect();
    sorted.sort_by_key(|r| r.id);
    let mut out = String::new();
    for r in sorted {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct LoadedLog {
    pub records: Vec<LogRecord>,
    /// The final line was cut short (a crash mid-write) and was skipped.
    pub truncated_tail: bool,
}

/// Read a results log. Only a malformed final line is tolerated.
pub fn read_log(path: &Path) -> io::Result<LoadedLog> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let mut records = Vec::with_capacity(lines.len());
    let mut truncated_tail = false;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(_) if Some(i) == last => truncated_tail = true,
            Err(e) => {
                return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))
            }
        }
    }
    Ok(LoadedLog { records, truncated_tail })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    /// Finished with errored configurations, or stopped with work pending.
    Partial,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub scheduled: u64,
    pub completed: u64,
    pub errored: u64,
    pub pending: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SchedulerStats {
    pub instances_created: usize,
    pub max_active_instances: usize,
    pub workers_registered: usize,
    pub workers_rejected: usize,
    pub evictions: usize,
    pub requeues: u64,
    pub duplicates: u64,
    /// Largest number of items any single worker held at once.
    pub max_worker_in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub name: String,
    pub config_hash: String,
    pub asset_checksums: BTreeMap<String, String>,
    pub started_at: String,
    pub ended_at: Option<String>,
    pub status: RunStatus,
    pub totals: Totals,
    pub throughput: Throughput,
    pub stats: SchedulerStats,
    pub task: TaskKind,
    pub search_space: SearchSpace,
    pub meshes: Vec<String>,
    pub environments: Vec<String>,
    pub vocabulary: Vec<String>,
    pub resolution: Resolution,
    pub save_buffers: Vec<Modality>,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Where finished records go. Calls are serialized by the scheduler.
pub trait RecordSink: Send {
    /// Persist buffers for `id`, returning paths to put in the record.
    fn save_buffers(
        &mut self,
        id: u64,
        output: &RenderOutput,
        modalities: &[Modality],
    ) -> io::Result<BTreeMap<Modality, String>>;

    fn append(&mut self, record: &LogRecord) -> io::Result<()>;

    fn write_manifest(&mut self, manifest: &RunManifest) -> io::Result<()>;
}

/// Writes a run directory. Each record is handed to the OS before
/// `append` returns, so a crash loses at most the line being written.
pub struct RunWriter {
    dir: PathBuf,
    log: File,
}

impl RunWriter {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let log = OpenOptions::new().create(true).write(true).truncate(true).open(dir.join(RESULTS_FILE))?;
        let buffers = dir.join(BUFFERS_DIR);
        if buffers.exists() {
            fs::remove_dir_all(&buffers)?;
        }
        Ok(Self { dir: dir.to_path_buf(), log })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn write_manifest_atomic(dir: &Path, manifest: &RunManifest) -> io::Result<()> {
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(manifest).map_err(io::Error::other)?)?;
    fs::rename(tmp, dir.join(MANIFEST_FILE))
}

impl RecordSink for RunWriter {
    fn save_buffers(
        &mut self,
        id: u64,
        output: &RenderOutput,
        modalities: &[Modality],
    ) -> io::Result<BTreeMap<Modality, String>> {
        let rel = Path::new(BUFFERS_DIR).join(id.to_string());
        buffers::save(&self.dir.join(&rel), output, modalities).map_err(io::Error::other)?;
        Ok(modalities
            .iter()
            .map(|&m| (m, format!("{}/{id}/{}", BUFFERS_DIR, buffers::file_name(m))))
            .collect())
    }

    fn append(&mut self, record: &LogRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.flush()
    }

    fn write_manifest(&mut self, manifest: &RunManifest) -> io::Result<()> {
        write_manifest_atomic(&self.dir, manifest)
    }
}

/// Keeps everything in memory; for tests and benchmarks.
#[derive(Clone, Default)]
pub struct MemorySink {
    pub records: Arc<Mutex<Vec<LogRecord>>>,
    pub manifest: Arc<Mutex<Option<RunManifest>>>,
}

impl RecordSink for MemorySink {
    fn save_buffers(
        &mut self,
        id: u64,
        _output: &RenderOutput,
        modalities: &[Modality],
    ) -> io::Result<BTreeMap<Modality, String>> {
        Ok(modalities.iter().map(|&m| (m, format!("memory/{id}/{}", buffers::file_name(m)))).collect())
    }

    fn append(&mut self, record: &LogRecord) -> io::Result<()> {
        self.records.lock().unwrap().push(record.clone());
        Ok(())
    }

    fn write_manifest(&mut self, manifest: &RunManifest) -> io::Result<()> {
        *self.manifest.lock().unwrap() = Some(manifest.clone());
        Ok(())
    }
}
