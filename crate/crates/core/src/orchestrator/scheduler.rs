//! Queue state for one run. Every transition goes through `&mut self`, so
//! wrapping the scheduler in a mutex linearizes them.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::experiment::{ErrorClass, Experiment, ItemError, RenderConfiguration, WorkResult};
use crate::orchestrator::log::{
    LogRecord, RecordSink, RunManifest, RunStatus, SchedulerStats, Timing, Totals, MANIFEST_SCHEMA,
};
use crate::orchestrator::meter::ThroughputMeter;
use crate::policy::{HistoryEntry, Policy, PolicyError, PolicyProposal, ProposalGuard, ResultSummary, Step};
use crate::render::buffers::WireRender;
use crate::render::{Modality, RenderOutput};
use crate::scene::SceneState;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("policy for pair {pair}: {source}")]
    Policy { pair: usize, source: PolicyError },
    #[error("writing results: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkItem {
    pub id: u64,
    pub pair: usize,
    /// Zero-based; at most the configured retry count.
    pub attempt: u32,
    pub config: RenderConfiguration,
    pub scene: SceneState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    Item(Box<WorkItem>),
    /// Nothing available yet (slots full or waiting on feedback).
    Idle,
    Done,
    /// The worker is not registered, e.g. after eviction.
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Completion {
    Accepted,
    /// Not the current holder of the item, or already resolved. Ignored.
    Duplicate,
    /// Buffers failed validation; the item was retried or errored out.
    Invalid(ItemError),
}

struct Instance {
    pair: usize,
    policy: Box<dyn Policy>,
    guard: ProposalGuard,
    open_loop: bool,
    total: Option<u64>,
    history: Vec<HistoryEntry>,
    /// Issued and not yet resolved, by global id.
    issued: HashMap<u64, PolicyProposal>,
    exhausted: bool,
}

struct InFlight {
    worker: u64,
    item: WorkItem,
}

struct WorkerState {
    slots: usize,
    in_flight: usize,
    last_seen: Instant,
}

pub struct Scheduler {
    exp: Arc<Experiment>,
    sink: Box<dyn RecordSink>,
    max_active: usize,
    retries: u32,
    batch: usize,
    offsets: Vec<u64>,
    contiguous: bool,
    next_pair: usize,
    active: Vec<Instance>,
    queue: VecDeque<WorkItem>,
    in_flight: HashMap<u64, InFlight>,
    workers: HashMap<u64, WorkerState>,
    next_worker: u64,
    totals: Totals,
    stats: SchedulerStats,
    meter: ThroughputMeter,
    failure: Option<String>,
    started_at: String,
    max_materialized: usize,
}

impl Scheduler {
    pub fn new(exp: Arc<Experiment>, sink: Box<dyn RecordSink>) -> Result<Self, SchedulerError> {
        // Ids are contiguous across pairs when every policy knows its size
        // up front; otherwise each pair gets its own 2^32 block.
        let mut totals = Vec::with_capacity(exp.pairs.len());
        for pair in 0..exp.pairs.len() {
            let p = exp.make_policy(pair).map_err(|source| SchedulerError::Policy { pair, source })?;
            totals.push(p.total());
        }
        let contiguous = totals.iter().all(Option::is_some);
        let offsets = if contiguous {
            let mut acc = 0;
            totals
                .iter()
                .map(|t| {
                    let start = acc;
                    acc += t.unwrap();
                    start
                })
                .collect()
        } else {
            (0..totals.len() as u64).map(|p| p << 32).collect()
        };
        let orch = &exp.config.orchestrator;
        Ok(Self {
            max_active: orch.max_active.max(1),
            retries: orch.retries,
            batch: exp.config.policy.batch_size.max(1),
            exp,
            sink,
            offsets,
            contiguous,
            next_pair: 0,
            active: Vec::new(),
            queue: VecDeque::new(),
            in_flight: HashMap::new(),
            workers: HashMap::new(),
            next_worker: 0,
            totals: Totals::default(),
            stats: SchedulerStats::default(),
            meter: ThroughputMeter::new(Duration::from_secs(2)),
            failure: None,
            started_at: chrono::Utc::now().to_rfc3339(),
            max_materialized: 0,
        })
    }

    pub fn experiment(&self) -> &Arc<Experiment> {
        &self.exp
    }

    /// Most items ever held in the queue plus in flight at once.
    pub fn max_materialized(&self) -> usize {
        self.max_materialized
    }

    pub fn frontier_cap(&self) -> usize {
        self.max_active * self.batch
    }

    pub fn stats(&self) -> SchedulerStats {
        self.stats
    }

    pub fn totals(&self) -> Totals {
        let mut t = self.totals;
        t.pending = t.scheduled - t.completed - t.errored;
        t
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn register(&mut self, slots: u32, now: Instant) -> u64 {
        let id = self.next_worker;
        self.next_worker += 1;
        self.workers.insert(id, WorkerState { slots: slots.max(1) as usize, in_flight: 0, last_seen: now });
        self.stats.workers_registered += 1;
        id
    }

    pub fn note_rejected(&mut self) {
        self.stats.workers_rejected += 1;
    }

    pub fn connected_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn touch(&mut self, worker: u64, now: Instant) {
        if let Some(w) = self.workers.get_mut(&worker) {
            w.last_seen = now;
        }
    }

    pub fn is_done(&self) -> bool {
        self.failure.is_some()
            || (self.next_pair == self.exp.pairs.len()
                && self.active.is_empty()
                && self.queue.is_empty()
                && self.in_flight.is_empty())
    }

    pub fn assign(&mut self, worker: u64, now: Instant) -> Assignment {
        let Some(w) = self.workers.get_mut(&worker) else { return Assignment::Unknown };
        w.last_seen = now;
        if self.failure.is_some() {
            return Assignment::Done;
        }
        if w.in_flight >= w.slots {
            return Assignment::Idle;
        }
        if self.queue.is_empty() {
            self.refill();
        }
        match self.queue.pop_front() {
            Some(item) => {
                let w = self.workers.get_mut(&worker).expect("checked above");
                w.in_flight += 1;
                self.stats.max_worker_in_flight = self.stats.max_worker_in_flight.max(w.in_flight);
                self.in_flight.insert(item.id, InFlight { worker, item: item.clone() });
                Assignment::Item(Box::new(item))
            }
            None if self.is_done() => Assignment::Done,
            None => Assignment::Idle,
        }
    }

    pub fn complete(
        &mut self,
        worker: u64,
        id: u64,
        attempt: u32,
        render: Option<WireRender>,
        result: WorkResult,
        now: Instant,
    ) -> Completion {
        self.touch(worker, now);
        let Some(f) = self.take_in_flight(worker, id, attempt) else {
            self.stats.duplicates += 1;
            log::warn!("discarding duplicate response for item {id} (attempt {attempt}) from worker {worker}");
            return Completion::Duplicate;
        };
        let saved = self.exp.config.output.save_buffers.clone();
        let mut paths = BTreeMap::new();
        if !result.dummy && !saved.is_empty() {
            let output = match self.check_buffers(render, &saved) {
                Ok(o) => o,
                Err(msg) => {
                    let err = ItemError::new(ErrorClass::Protocol, msg);
                    self.retry_or_error(f.item, err.clone(), Some(worker));
                    return Completion::Invalid(err);
                }
            };
            match self.sink.save_buffers(id, &output, &saved) {
                Ok(p) => paths = p,
                Err(e) => {
                    self.fail_run(format!("saving buffers for item {id}: {e}"));
                    return Completion::Accepted;
                }
            }
        }
        let record = LogRecord {
            id,
            pair: f.item.pair,
            mesh: f.item.config.mesh.clone(),
            environment: f.item.scene.environment.clone(),
            params: self.exp.plan.expand(&f.item.config.controls),
            is_correct: result.is_correct,
            error: None,
            attempts: f.item.attempt + 1,
            timing: Timing { render: result.render_time, infer: result.infer_time },
            worker: Some(worker),
            buffers: paths,
            object_pixels: result.object_pixels,
            dummy: result.dummy,
            warnings: result.warnings,
            prediction: result.prediction,
            config: f.item.config,
        };
        self.meter.record(now);
        self.totals.completed += 1;
        self.finish(record);
        Completion::Accepted
    }

    /// A worker reported that it could not process an item.
    pub fn fail(&mut self, worker: u64, id: u64, attempt: u32, error: ItemError, now: Instant) -> bool {
        self.touch(worker, now);
        match self.take_in_flight(worker, id, attempt) {
            Some(f) => {
                log::warn!("item {id} attempt {attempt} failed on worker {worker}: {error}");
                self.retry_or_error(f.item, error, Some(worker));
                true
            }
            None => {
                self.stats.duplicates += 1;
                false
            }
        }
    }

    /// Forget a worker and put its items back in the queue.
    pub fn remove_worker(&mut self, worker: u64, reason: &str) {
        if self.workers.remove(&worker).is_none() {
            return;
        }
        let mut lost: Vec<u64> = self.in_flight.iter().filter(|(_, f)| f.worker == worker).map(|(&id, _)| id).collect();
        lost.sort_unstable();
        for id in lost {
            let f = self.in_flight.remove(&id).expect("listed above");
            let err = ItemError::new(ErrorClass::WorkerLost, format!("worker {worker} {reason}"));
            self.retry_or_error(f.item, err, Some(worker));
        }
    }

    /// Evict workers silent for longer than `limit`. Returns their ids.
    pub fn check_heartbeats(&mut self, now: Instant, limit: Duration) -> Vec<u64> {
        let mut stale: Vec<u64> = self
            .workers
            .iter()
            .filter(|(_, w)| now.saturating_duration_since(w.last_seen) > limit)
            .map(|(&id, _)| id)
            .collect();
        stale.sort_unstable();
        for &id in &stale {
            log::warn!("evicting worker {id}: no message for over {:.2}s", limit.as_secs_f64());
            self.stats.evictions += 1;
            self.remove_worker(id, "missed heartbeats");
        }
        stale
    }

    pub fn manifest(&mut self, now: Instant, finished: bool) -> RunManifest {
        let totals = self.totals();
        let status = match (finished, &self.failure) {
            (false, _) => RunStatus::Running,
            (true, Some(_)) => RunStatus::Failed,
            (true, None) if totals.errored > 0 || totals.pending > 0 => RunStatus::Partial,
            (true, None) => RunStatus::Complete,
        };
        let exp = &self.exp;
        let cfg = &exp.config;
        RunManifest {
            schema: MANIFEST_SCHEMA,
            name: cfg.name.clone(),
            config_hash: cfg.hash(),
            asset_checksums: exp.checksums.clone(),
            started_at: self.started_at.clone(),
            ended_at: finished.then(|| chrono::Utc::now().to_rfc3339()),
            status,
            totals,
            throughput: self.meter.snapshot(now),
            stats: self.stats,
            task: cfg.evaluator.task,
            search_space: exp.space().clone(),
            meshes: unique(exp.pairs.iter().map(|p| &p.mesh)),
            environments: unique(exp.pairs.iter().map(|p| &p.environment)),
            vocabulary: exp.vocabulary.clone(),
            resolution: exp.resolution(),
            save_buffers: cfg.output.save_buffers.clone(),
            seed: cfg.seed,
            config: cfg.clone(),
        }
    }

    pub fn write_manifest(&mut self, now: Instant, finished: bool) -> io::Result<RunManifest> {
        let m = self.manifest(now, finished);
        self.sink.write_manifest(&m)?;
        Ok(m)
    }

    fn take_in_flight(&mut self, worker: u64, id: u64, attempt: u32) -> Option<InFlight> {
        match self.in_flight.get(&id) {
            Some(f) if f.worker == worker && f.item.attempt == attempt => {}
            _ => return None,
        }
        if let Some(w) = self.workers.get_mut(&worker) {
            w.in_flight -= 1;
        }
        self.in_flight.remove(&id)
    }

    fn check_buffers(&self, render: Option<WireRender>, saved: &[Modality]) -> Result<RenderOutput, String> {
        let wire = render.ok_or("response carries no buffers")?;
        let out = wire.decode().map_err(|e| e.to_string())?;
        let res = self.exp.resolution();
        if (out.width, out.height) != (res.width, res.height) {
            return Err(format!("buffers are {}x{}, expected {}x{}", out.width, out.height, res.width, res.height));
        }
        if let Some(m) = saved.iter().find(|&&m| !out.has(m)) {
            return Err(format!("response is missing the {} buffer", m.name()));
        }
        out.check_invariants().map_err(|e| e.to_string())?;
        Ok(out)
    }

    fn retry_or_error(&mut self, mut item: WorkItem, error: ItemError, worker: Option<u64>) {
        if item.attempt < self.retries {
            item.attempt += 1;
            self.stats.requeues += 1;
            self.queue.push_front(item);
            return;
        }
        let record = self.error_record(&item, error, worker);
        self.totals.errored += 1;
        self.finish(record);
    }

    fn error_record(&self, item: &WorkItem, error: ItemError, worker: Option<u64>) -> LogRecord {
        self.unscened_error_record(item.id, item.pair, item.attempt + 1, &item.config, error, worker)
            .with_environment(&item.scene.environment)
    }

    fn unscened_error_record(
        &self,
        id: u64,
        pair: usize,
        attempts: u32,
        config: &RenderConfiguration,
        error: ItemError,
        worker: Option<u64>,
    ) -> LogRecord {
        LogRecord {
            id,
            pair,
            mesh: config.mesh.clone(),
            environment: config.environment.clone(),
            params: self.exp.plan.expand(&config.controls),
            config: config.clone(),
            is_correct: None,
            prediction: None,
            error: Some(error),
            attempts,
            timing: Timing::default(),
            worker,
            buffers: BTreeMap::new(),
            warnings: Vec::new(),
            object_pixels: 0,
            dummy: false,
        }
    }

    /// Log a resolved item and feed its outcome back to the policy.
    fn finish(&mut self, record: LogRecord) {
        if let Err(e) = self.sink.append(&record) {
            self.fail_run(format!("appending record {}: {e}", record.id));
            return;
        }
        let offset = self.offsets[record.pair];
        if let Some(inst) = self.active.iter_mut().find(|i| i.pair == record.pair) {
            if let Some(proposal) = inst.issued.remove(&record.id) {
                let score = record.prediction.as_ref().and_then(|p| p.top1.and_then(|t| p.scores.get(t).copied()));
                inst.history.push(HistoryEntry {
                    summary: ResultSummary { id: record.id - offset, is_correct: record.is_correct, score },
                    proposal,
                });
            }
        }
        self.retire();
    }

    fn fail_run(&mut self, message: String) {
        log::error!("{message}");
        self.failure.get_or_insert(message);
    }

    fn retire(&mut self) {
        self.active.retain(|i| !(i.exhausted && i.issued.is_empty()));
    }

    fn activate(&mut self) {
        while self.active.len() < self.max_active && self.next_pair < self.exp.pairs.len() {
            let pair = self.next_pair;
            self.next_pair += 1;
            match self.exp.make_policy(pair) {
                Ok(policy) => {
                    self.active.push(Instance {
                        pair,
                        open_loop: policy.is_open_loop(),
                        total: policy.total(),
                        policy,
                        guard: ProposalGuard::default(),
                        history: Vec::new(),
                        issued: HashMap::new(),
                        exhausted: false,
                    });
                    self.stats.instances_created += 1;
                }
                Err(e) => self.fail_run(format!("creating policy for pair {pair}: {e}")),
            }
        }
        self.stats.max_active_instances = self.stats.max_active_instances.max(self.active.len());
    }

    fn materialized(&self) -> usize {
        self.queue.len() + self.in_flight.len()
    }

    /// Ask active policies for more work, staying within the frontier cap.
    fn refill(&mut self) {
        let cap = self.frontier_cap();
        let contiguous = self.contiguous;
        loop {
            if self.failure.is_some() {
                return;
            }
            self.activate();
            let mut changed = false;
            let mut rejected = Vec::new();
            for idx in 0..self.active.len() {
                let materialized = self.materialized();
                if materialized > 0 && materialized + self.batch > cap {
                    break;
                }
                let inst = &mut self.active[idx];
                if inst.exhausted || (!inst.open_loop && !inst.issued.is_empty()) {
                    continue;
                }
                let batch = match inst.policy.next_batch(&inst.history) {
                    Ok(Step::Done) => {
                        inst.exhausted = true;
                        changed = true;
                        continue;
                    }
                    Ok(Step::Batch(b)) => b,
                    Err(e) => {
                        inst.exhausted = true;
                        let pair = inst.pair;
                        self.fail_run(format!("policy for pair {pair}: {e}"));
                        return;
                    }
                };
                if batch.is_empty() {
                    if inst.issued.is_empty() {
                        inst.exhausted = true;
                        changed = true;
                    }
                    continue;
                }
                let pair = inst.pair;
                let offset = self.offsets[pair];
                let check = inst.guard.check(self.exp.space(), &batch).and_then(|_| match inst.total {
                    Some(t) if contiguous => match batch.iter().find(|p| p.id >= t) {
                        Some(p) => Err(PolicyError::BadProposal { id: p.id, reason: format!("id beyond declared total {t}") }),
                        None => Ok(()),
                    },
                    _ => match batch.iter().find(|p| p.id >= 1 << 32) {
                        Some(p) => Err(PolicyError::BadProposal { id: p.id, reason: "id needs more than 32 bits".into() }),
                        None => Ok(()),
                    },
                });
                if let Err(e) = check {
                    self.fail_run(format!("policy for pair {pair}: {e}"));
                    return;
                }
                changed = true;
                for p in batch {
                    let id = offset + p.id;
                    let config = self.exp.configuration(pair, &p.point);
                    let inst = &mut self.active[idx];
                    inst.issued.insert(id, p);
                    self.totals.scheduled += 1;
                    match self.exp.scene(&config) {
                        Ok(scene) => self.queue.push_back(WorkItem { id, pair, attempt: 0, config, scene }),
                        Err(e) => rejected.push((id, pair, config, e)),
                    }
                }
                self.max_materialized = self.max_materialized.max(self.materialized());
            }
            // Configurations whose scene cannot be composed never reach a worker.
            for (id, pair, config, err) in rejected {
                let record = self.unscened_error_record(id, pair, 1, &config, err, None);
                self.totals.errored += 1;
                self.finish(record);
            }
            let before = self.active.len();
            self.retire();
            if !self.queue.is_empty() || !(changed || self.active.len() != before) {
                return;
            }
        }
    }
}

fn unique<'a>(names: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut v: Vec<String> = Vec::new();
    for n in names {
        if !v.contains(n) {
            v.push(n.clone());
        }
    }
    v
}

#[cfg(test)]
mod tests;
