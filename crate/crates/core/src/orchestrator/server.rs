//! TCP front of the scheduler: accepts workers, answers pulls, and drives
//! heartbeat checks and manifest refreshes until the run is over.

use std::collections::HashMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::experiment::{ErrorClass, Experiment, ItemError};
use crate::orchestrator::log::{RecordSink, RunManifest, RunStatus, RunWriter};
use crate::orchestrator::scheduler::{Assignment, Scheduler, SchedulerError};
use crate::orchestrator::worker::{run_worker, WorkerOptions, WorkerReport};
use crate::protocol::{read_message, write_message, Message};

/// How long a worker waits before pulling again when nothing is ready.
pub const IDLE_RETRY_MS: u64 = 2;
/// Heartbeats a worker may miss before eviction.
pub const MISSED_HEARTBEATS: u32 = 3;
const TICK: Duration = Duration::from_millis(10);
const MANIFEST_EVERY: Duration = Duration::from_secs(1);

pub struct RunOptions {
    /// In-process workers connected over loopback, like any other worker.
    pub local_workers: usize,
    pub slots: u32,
    pub dummy: bool,
    /// Overrides the configured bind address.
    pub bind: Option<String>,
    /// `kill_after` for each local worker, by index.
    pub worker_faults: Vec<Option<u64>>,
    pub renderer: Option<String>,
    /// Defaults to a run directory at the configured output path.
    pub sink: Option<Box<dyn RecordSink>>,
    /// Called once the listener is bound.
    pub on_listening: Option<Box<dyn FnOnce(SocketAddr) + Send>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            local_workers: 0,
            slots: 1,
            dummy: false,
            bind: None,
            worker_faults: Vec::new(),
            renderer: None,
            sink: None,
            on_listening: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub addr: SocketAddr,
    pub output_dir: Option<PathBuf>,
    pub max_materialized: usize,
    pub local_reports: Vec<Option<WorkerReport>>,
    pub elapsed: Duration,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        match self.manifest.status {
            RunStatus::Complete => 0,
            _ => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("{0}")]
    Scheduler(#[from] SchedulerError),
    #[error("preparing output: {0}")]
    Io(#[from] io::Error),
    #[error("no worker registered within {0:.1}s")]
    NoWorkers(f64),
}

impl OrchestratorError {
    /// Every variant is a startup failure.
    pub fn exit_code(&self) -> i32 {
        3
    }
}

struct Shared {
    sched: Mutex<Scheduler>,
    exp: Arc<Experiment>,
    finished: AtomicBool,
    conns: Mutex<HashMap<u64, TcpStream>>,
    heartbeat_secs: f64,
}

pub fn run_experiment(exp: Arc<Experiment>, mut opts: RunOptions) -> Result<RunSummary, OrchestratorError> {
    let started = Instant::now();
    let orch = exp.config.orchestrator.clone();
    let (sink, output_dir): (Box<dyn RecordSink>, _) = match opts.sink.take() {
        Some(s) => (s, None),
        None => {
            let dir = exp.config.output_dir();
            (Box::new(RunWriter::create(&dir)?), Some(dir))
        }
    };
    let mut sched = Scheduler::new(exp.clone(), sink)?;
    sched.write_manifest(Instant::now(), false)?;

    let bind = opts.bind.clone().unwrap_or_else(|| orch.bind.clone());
    let listener = TcpListener::bind(&bind).map_err(|source| OrchestratorError::Bind { addr: bind.clone(), source })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    log::info!("orchestrator listening on {addr}");
    if let Some(cb) = opts.on_listening.take() {
        cb(addr);
    }

    let shared = Arc::new(Shared {
        sched: Mutex::new(sched),
        exp: exp.clone(),
        finished: AtomicBool::new(false),
        conns: Mutex::new(HashMap::new()),
        heartbeat_secs: orch.heartbeat_secs,
    });
    let stop_accepting = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let (shared, stop) = (shared.clone(), stop_accepting.clone());
        thread::spawn(move || accept_loop(listener, shared, stop))
    };

    let locals: Vec<_> = (0..opts.local_workers)
        .map(|i| {
            let wopts = WorkerOptions {
                name: format!("local-{i}"),
                slots: opts.slots,
                dummy: opts.dummy,
                kill_after: opts.worker_faults.get(i).copied().flatten(),
                renderer: opts.renderer.clone(),
                ..WorkerOptions::default()
            };
            let target = addr.to_string();
            thread::spawn(move || match run_worker(&target, wopts) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::error!("local worker {i}: {e}");
                    None
                }
            })
        })
        .collect();

    let outcome = monitor(&shared, started);
    shared.finished.store(true, Ordering::SeqCst);
    let local_reports: Vec<_> = locals.into_iter().map(|h| h.join().ok().flatten()).collect();
    stop_accepting.store(true, Ordering::SeqCst);
    acceptor.join().ok();
    for (_, c) in shared.conns.lock().unwrap().drain() {
        c.shutdown(Shutdown::Both).ok();
    }

    let mut sched = shared.sched.lock().unwrap();
    let manifest = sched.write_manifest(Instant::now(), true)?;
    outcome?;
    Ok(RunSummary {
        manifest,
        addr,
        output_dir,
        max_materialized: sched.max_materialized(),
        local_reports,
        elapsed: started.elapsed(),
    })
}

/// Wait for the run to finish, evicting silent workers along the way.
fn monitor(shared: &Shared, started: Instant) -> Result<(), OrchestratorError> {
    let orch = &shared.exp.config.orchestrator;
    let limit = Duration::from_secs_f64(orch.heartbeat_secs * MISSED_HEARTBEATS as f64);
    let register_timeout = Duration::from_secs_f64(orch.register_timeout_secs);
    let mut last_manifest = Instant::now();
    let mut alone_since: Option<Instant> = None;
    loop {
        thread::sleep(TICK);
        let now = Instant::now();
        let mut s = shared.sched.lock().unwrap();
        for id in s.check_heartbeats(now, limit) {
            if let Some(c) = shared.conns.lock().unwrap().remove(&id) {
                c.shutdown(Shutdown::Both).ok();
            }
        }
        if s.is_done() {
            return Ok(());
        }
        if s.stats().workers_registered == 0 {
            if now - started > register_timeout {
                return Err(OrchestratorError::NoWorkers(register_timeout.as_secs_f64()));
            }
        } else if s.connected_workers() == 0 {
            // Every worker left. Give replacements the registration window,
            // then stop with the remaining work pending.
            let since = *alone_since.get_or_insert(now);
            if now - since > register_timeout {
                log::error!("all workers gone; stopping with work pending");
                return Ok(());
            }
        } else {
            alone_since = None;
        }
        if now - last_manifest >= MANIFEST_EVERY {
            last_manifest = now;
            if let Err(e) = s.write_manifest(now, false) {
                log::warn!("refreshing manifest: {e}");
            }
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false).ok();
                let shared = shared.clone();
                thread::spawn(move || {
                    if let Err(e) = handle(&shared, stream) {
                        log::info!("connection from {peer} ended: {e}");
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => log::warn!("accept: {e}"),
        }
    }
}

fn handle(shared: &Shared, mut stream: TcpStream) -> Result<(), Box<dyn std::error::Error>> {
    stream.set_nodelay(true).ok();
    let (name, slots, caps) = match read_message(&mut stream)? {
        Some(Message::Register { name, slots, capabilities }) => (name, slots, capabilities),
        other => {
            let got = other.map_or("end of stream", |m| m.kind());
            let err = ItemError::new(ErrorClass::Protocol, format!("expected REGISTER, got {got}"));
            write_message(&mut stream, &Message::item_error(None, None, &err))?;
            return Ok(());
        }
    };
    if !caps.dummy {
        if let Err(reason) = caps.check(&shared.exp) {
            log::warn!("rejecting worker '{name}': {reason}");
            shared.sched.lock().unwrap().note_rejected();
            let err = ItemError::new(ErrorClass::Capability, reason);
            write_message(&mut stream, &Message::item_error(None, None, &err))?;
            return Ok(());
        }
    }
    let dummy = caps.dummy;
    let id = shared.sched.lock().unwrap().register(slots, Instant::now());
    shared.conns.lock().unwrap().insert(id, stream.try_clone()?);
    log::info!("worker {id} '{name}' registered with {slots} slot(s){}", if dummy { " (dummy)" } else { "" });
    let hello = Message::Registered {
        worker_id: id,
        heartbeat_secs: shared.heartbeat_secs,
        experiment: (!dummy).then(|| Box::new(shared.exp.config.clone())),
    };
    let result = serve_worker(shared, &mut stream, id, dummy, hello);
    shared.sched.lock().unwrap().remove_worker(id, "disconnected");
    shared.conns.lock().unwrap().remove(&id);
    result
}

fn serve_worker(
    shared: &Shared,
    stream: &mut TcpStream,
    id: u64,
    dummy: bool,
    hello: Message,
) -> Result<(), Box<dyn std::error::Error>> {
    write_message(stream, &hello)?;
    let modalities = shared.exp.required_modalities();
    while let Some(msg) = read_message(stream)? {
        let now = Instant::now();
        let reply = match msg {
            Message::Pull if shared.finished.load(Ordering::SeqCst) => Message::Done,
            Message::Pull => match shared.sched.lock().unwrap().assign(id, now) {
                Assignment::Item(item) => {
                    let item = *item;
                    Message::RenderRequest {
                        id: item.id,
                        attempt: item.attempt,
                        scene: Box::new(item.scene),
                        modalities: modalities.clone(),
                        config: (!dummy).then(|| Box::new(item.config)),
                    }
                }
                Assignment::Idle => Message::Idle { retry_ms: IDLE_RETRY_MS },
                Assignment::Done => Message::Done,
                Assignment::Unknown => {
                    let err = ItemError::new(ErrorClass::WorkerLost, "worker was evicted");
                    write_message(stream, &Message::item_error(None, None, &err))?;
                    return Ok(());
                }
            },
            Message::RenderResponse { id: item, attempt, render, result } => {
                let mut s = shared.sched.lock().unwrap();
                match result {
                    Some(r) => {
                        s.complete(id, item, attempt, render, *r, now);
                    }
                    None => {
                        let err = ItemError::new(ErrorClass::Protocol, "response carries no result");
                        s.fail(id, item, attempt, err, now);
                    }
                }
                continue;
            }
            Message::Error { id: Some(item), attempt: Some(attempt), class, message } => {
                shared.sched.lock().unwrap().fail(id, item, attempt, ItemError { class, message }, now);
                continue;
            }
            Message::Error { message, .. } => {
                log::warn!("worker {id}: {message}");
                shared.sched.lock().unwrap().touch(id, now);
                continue;
            }
            Message::Heartbeat => {
                shared.sched.lock().unwrap().touch(id, now);
                continue;
            }
            other => Message::Error {
                id: None,
                attempt: None,
                class: ErrorClass::Protocol,
                message: format!("unexpected {} from a registered worker", other.kind()),
            },
        };
        write_message(stream, &reply)?;
    }
    Ok(())
}
