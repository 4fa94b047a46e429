//! Worker client: registers, pulls configurations, renders and infers them,
//! and sends results back. One thread per slot shares the connection.

use std::io;
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::experiment::{ErrorClass, Experiment, ItemError, Pipeline, WorkResult};
use crate::protocol::{read_message, write_message, Capabilities, Message, ProtocolError, RemoteRenderer};
use crate::render::RenderBackend;

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub name: String,
    pub slots: u32,
    /// Answer every request instantly without rendering or inferring.
    pub dummy: bool,
    /// Fault injection: drop the connection on receiving the n-th request
    /// (1-based) without answering it.
    pub kill_after: Option<u64>,
    /// Address of an external renderer to use instead of the built-in one.
    pub renderer: Option<String>,
    pub connect_attempts: u32,
    pub initial_backoff: Duration,
    /// Advertise these instead of the built-in capabilities.
    pub capabilities: Option<Capabilities>,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self {
            name: "worker".into(),
            slots: 1,
            dummy: false,
            kill_after: None,
            renderer: None,
            connect_attempts: 6,
            initial_backoff: Duration::from_millis(100),
            capabilities: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerReport {
    pub worker_id: u64,
    pub processed: u64,
    /// Stopped by `kill_after`.
    pub killed: bool,
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("could not reach orchestrator at {addr} after {attempts} attempts: {source}")]
    Connect { addr: String, attempts: u32, source: io::Error },
    #[error("registration rejected: {0}")]
    Rejected(String),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("setting up the experiment: {0}")]
    Setup(String),
}

impl WorkerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkerError::Protocol(_) => 1,
            _ => 3,
        }
    }
}

enum Event {
    Job(Message),
    Idle(u64),
    Stop,
}

fn connect(addr: &str, opts: &WorkerOptions) -> Result<TcpStream, WorkerError> {
    let mut backoff = opts.initial_backoff;
    let attempts = opts.connect_attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                log::info!("connect to {addr} failed ({e}), attempt {}/{attempts}", attempt + 1);
                last = Some(e);
                if attempt + 1 < attempts {
                    thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_secs(5));
                }
            }
        }
    }
    Err(WorkerError::Connect { addr: addr.into(), attempts, source: last.expect("at least one attempt") })
}

pub fn run_worker(addr: &str, opts: WorkerOptions) -> Result<WorkerReport, WorkerError> {
    let mut stream = connect(addr, &opts)?;
    stream.set_nodelay(true).ok();
    let capabilities = opts.capabilities.clone().unwrap_or_else(|| Capabilities::builtin(opts.dummy));
    let register = Message::Register { name: opts.name.clone(), slots: opts.slots.max(1), capabilities };
    write_message(&mut stream, &register).map_err(ProtocolError::from)?;
    let (worker_id, heartbeat, config) = match read_message(&mut stream)? {
        Some(Message::Registered { worker_id, heartbeat_secs, experiment }) => (worker_id, heartbeat_secs, experiment),
        Some(Message::Error { message, .. }) => return Err(WorkerError::Rejected(message)),
        other => {
            return Err(ProtocolError::Unexpected {
                expected: "REGISTERED",
                got: other.map_or("end of stream".into(), |m| m.kind().into()),
            }
            .into())
        }
    };

    let pipeline = match (opts.dummy, config) {
        (true, _) => None,
        (false, None) => return Err(WorkerError::Setup("orchestrator sent no experiment config".into())),
        (false, Some(cfg)) => {
            let exp = Arc::new(Experiment::from_config(*cfg).map_err(|e| WorkerError::Setup(e.to_string()))?);
            let backend: Arc<dyn RenderBackend> = match &opts.renderer {
                Some(r) => Arc::new(
                    RemoteRenderer::connect(r.as_str(), &exp.required_modalities())
                        .map_err(|e| WorkerError::Setup(e.to_string()))?,
                ),
                None => exp.builtin_backend(),
            };
            Some(Arc::new(Pipeline::new(exp, backend)))
        }
    };

    let writer = Arc::new(Mutex::new(stream.try_clone().map_err(ProtocolError::from)?));
    let (tx, rx) = mpsc::channel::<Event>();
    let rx = Arc::new(Mutex::new(rx));
    let processed = Arc::new(AtomicU64::new(0));

    let reader = {
        let mut stream = stream.try_clone().map_err(ProtocolError::from)?;
        let kill_after = opts.kill_after;
        let slots = opts.slots.max(1);
        thread::spawn(move || {
            let mut requests = 0u64;
            let killed = loop {
                let msg = match read_message(&mut stream) {
                    Ok(Some(m)) => m,
                    Ok(None) | Err(_) => break false,
                };
                let event = match msg {
                    Message::RenderRequest { .. } => {
                        requests += 1;
                        if kill_after == Some(requests) {
                            log::warn!("fault injection: dropping connection on request {requests}");
                            stream.shutdown(Shutdown::Both).ok();
                            break true;
                        }
                        Event::Job(msg)
                    }
                    Message::Idle { retry_ms } => Event::Idle(retry_ms),
                    Message::Done => Event::Stop,
                    Message::Error { class: ErrorClass::WorkerLost, message, .. } => {
                        log::warn!("orchestrator dropped this worker: {message}");
                        break false;
                    }
                    Message::Error { message, .. } => {
                        log::warn!("orchestrator reported: {message}");
                        continue;
                    }
                    _ => continue,
                };
                if tx.send(event).is_err() {
                    break false;
                }
            };
            // Release every slot still waiting for a reply.
            for _ in 0..slots {
                tx.send(Event::Stop).ok();
            }
            killed
        })
    };

    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let heartbeat = {
        let writer = writer.clone();
        let period = Duration::from_secs_f64(heartbeat.max(0.01));
        thread::spawn(move || {
            while let Err(RecvTimeoutError::Timeout) = stop_rx.recv_timeout(period) {
                if write_message(&mut *writer.lock().unwrap(), &Message::Heartbeat).is_err() {
                    break;
                }
            }
        })
    };

    let slots: Vec<_> = (0..opts.slots.max(1))
        .map(|_| {
            let (writer, rx, pipeline, processed) = (writer.clone(), rx.clone(), pipeline.clone(), processed.clone());
            thread::spawn(move || slot_loop(&writer, &rx, pipeline.as_deref(), &processed))
        })
        .collect();
    for s in slots {
        s.join().ok();
    }
    stop_tx.send(()).ok();
    heartbeat.join().ok();
    stream.shutdown(Shutdown::Both).ok();
    let killed = reader.join().unwrap_or(false);
    Ok(WorkerReport { worker_id, processed: processed.load(Ordering::Relaxed), killed })
}

fn slot_loop(writer: &Mutex<TcpStream>, rx: &Mutex<Receiver<Event>>, pipeline: Option<&Pipeline>, processed: &AtomicU64) {
    loop {
        if write_message(&mut *writer.lock().unwrap(), &Message::Pull).is_err() {
            return;
        }
        let event = match rx.lock().unwrap().recv() {
            Ok(e) => e,
            Err(_) => return,
        };
        let Event::Job(Message::RenderRequest { id, attempt, scene, config, .. }) = event else {
            match event {
                Event::Idle(ms) => {
                    thread::sleep(Duration::from_millis(ms));
                    continue;
                }
                _ => return,
            }
        };
        let reply = match (pipeline, config) {
            (None, _) => {
                Message::RenderResponse { id, attempt, render: None, result: Some(Box::new(WorkResult::dummy())) }
            }
            (Some(p), Some(cfg)) => match p.process(id, &cfg, &scene) {
                Ok((result, render)) => Message::RenderResponse { id, attempt, render, result: Some(Box::new(result)) },
                Err(e) => Message::item_error(Some(id), Some(attempt), &e),
            },
            (Some(_), None) => Message::item_error(
                Some(id),
                Some(attempt),
                &ItemError::new(ErrorClass::Protocol, "request carries no configuration"),
            ),
        };
        if write_message(&mut *writer.lock().unwrap(), &reply).is_err() {
            return;
        }
        processed.fetch_add(1, Ordering::Relaxed);
    }
}
