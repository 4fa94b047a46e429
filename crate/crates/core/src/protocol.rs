//! Length-prefixed JSON messages over TCP.
//!
//! Frame layout: a 4-byte big-endian payload length followed by that many
//! bytes of UTF-8 JSON. Every message is an object whose `type` field names
//! the message kind. Render buffers travel inside `RENDER_RESPONSE` as base64
//! with a CRC32 per buffer (see [`crate::render::buffers`]).
//!
//! Orchestrator and workers speak the full set. An external renderer only
//! needs three: it announces itself with `REGISTER`, answers each
//! `RENDER_REQUEST` (a scene plus the modalities wanted) with a
//! `RENDER_RESPONSE` carrying buffers, and reports failures with `ERROR`.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::experiment::{ErrorClass, Experiment, ItemError, RenderConfiguration, WorkResult};
use crate::render::buffers::WireRender;
use crate::render::{Modality, RenderBackend, RenderError, RenderOutput};
use crate::scene::SceneState;

/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: usize = 256 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected message: expected {expected}, got {got}")]
    Unexpected { expected: &'static str, got: String },
}

/// What a worker or renderer can do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    /// Built-in control names the worker can apply.
    pub controls: Vec<String>,
    /// Whether config-defined external filter programs can run.
    #[serde(default)]
    pub external_filters: bool,
    pub modalities: Vec<Modality>,
    #[serde(default)]
    pub dummy: bool,
}

impl Capabilities {
    /// Everything the built-in control library and rasterizer offer.
    pub fn builtin(dummy: bool) -> Self {
        let reg = crate::controls::ControlRegistry::with_builtins(&["_".into()], &[]);
        Self {
            controls: reg.names().map(String::from).collect(),
            external_filters: true,
            modalities: Modality::ALL.to_vec(),
            dummy,
        }
    }

    /// Reason the worker cannot serve `exp`, if any.
    pub fn check(&self, exp: &Experiment) -> Result<(), String> {
        let (controls, external) = exp.required_controls();
        let missing: Vec<&str> =
            controls.iter().filter(|c| !self.controls.contains(c)).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(format!("worker lacks controls: {}", missing.join(", ")));
        }
        if external && !self.external_filters {
            return Err("worker cannot run external filter programs".into());
        }
        let missing: Vec<&str> = exp
            .required_modalities()
            .into_iter()
            .filter(|m| !self.modalities.contains(m))
            .map(Modality::name)
            .collect();
        if !missing.is_empty() {
            return Err(format!("worker cannot produce buffers: {}", missing.join(", ")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Register {
        name: String,
        slots: u32,
        capabilities: Capabilities,
    },
    Registered {
        worker_id: u64,
        heartbeat_secs: f64,
        /// Absent for dummy workers.
        experiment: Option<Box<ExperimentConfig>>,
    },
    Error {
        id: Option<u64>,
        attempt: Option<u32>,
        class: ErrorClass,
        message: String,
    },
    /// Worker has a free slot.
    Pull,
    RenderRequest {
        id: u64,
        attempt: u32,
        scene: Box<SceneState>,
        modalities: Vec<Modality>,
        /// Present when the receiver also post-processes and infers.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<Box<RenderConfiguration>>,
    },
    RenderResponse {
        id: u64,
        attempt: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        render: Option<WireRender>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<Box<WorkResult>>,
    },
    /// Nothing to hand out right now; pull again after `retry_ms`.
    Idle {
        retry_ms: u64,
    },
    /// The run is over.
    Done,
    Heartbeat,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Register { .. } => "REGISTER",
            Message::Registered { .. } => "REGISTERED",
            Message::Error { .. } => "ERROR",
            Message::Pull => "PULL",
            Message::RenderRequest { .. } => "RENDER_REQUEST",
            Message::RenderResponse { .. } => "RENDER_RESPONSE",
            Message::Idle { .. } => "IDLE",
            Message::Done => "DONE",
            Message::Heartbeat => "HEARTBEAT",
        }
    }

    pub fn item_error(id: Option<u64>, attempt: Option<u32>, e: &ItemError) -> Self {
        Message::Error { id, attempt, class: e.class, message: e.message.clone() }
    }
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("messages serialize");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}

/// Read one message. `Ok(None)` on a clean end of stream between frames.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(ProtocolError::TooLarge(n));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Truncated,
        _ => ProtocolError::Io(e),
    })?;
    Ok(Some(serde_json::from_slice(&body)?))
}

/// Render backend that forwards scenes to an external renderer.
pub struct RemoteRenderer {
    name: String,
    modalities: Vec<Modality>,
    stream: Mutex<TcpStream>,
    next_id: AtomicU64,
}

impl RemoteRenderer {
    /// Connect and read the renderer's `REGISTER`. Fails up front when the
    /// renderer cannot produce every modality in `required`.
    pub fn connect(addr: impl ToSocketAddrs, required: &[Modality]) -> Result<Self, RenderError> {
        let remote = |e: &dyn std::fmt::Display| RenderError::Remote(e.to_string());
        let mut stream = TcpStream::connect(addr).map_err(|e| remote(&e))?;
        stream.set_nodelay(true).ok();
        let (name, caps) = match read_message(&mut stream).map_err(|e| remote(&e))? {
            Some(Message::Register { name, capabilities, .. }) => (name, capabilities),
            other => {
                return Err(RenderError::Remote(format!(
                    "expected REGISTER, got {}",
                    other.map_or("end of stream", |m| m.kind())
                )))
            }
        };
        let missing: Vec<&str> =
            required.iter().filter(|m| !caps.modalities.contains(m)).map(|m| m.name()).collect();
        if !missing.is_empty() {
            return Err(RenderError::Remote(format!(
                "capability mismatch: renderer '{name}' does not produce {}",
                missing.join(", ")
            )));
        }
        Ok(Self { name, modalities: caps.modalities, stream: Mutex::new(stream), next_id: AtomicU64::new(0) })
    }
}

impl RenderBackend for RemoteRenderer {
    fn name(&self) -> &str {
        &self.name
    }

    fn modalities(&self) -> Vec<Modality> {
        self.modalities.clone()
    }

    fn render(&self, state: &SceneState) -> Result<RenderOutput, RenderError> {
        let remote = |e: &dyn std::fmt::Display| RenderError::Remote(e.to_string());
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut stream = self.stream.lock().unwrap();
        let req = Message::RenderRequest {
            id,
            attempt: 0,
            scene: Box::new(state.clone()),
            modalities: self.modalities.clone(),
            config: None,
        };
        write_message(&mut *stream, &req).map_err(|e| remote(&e))?;
        loop {
            match read_message(&mut *stream).map_err(|e| remote(&e))? {
                Some(Message::Heartbeat) => continue,
                Some(Message::RenderResponse { id: rid, render: Some(wire), .. }) if rid == id => {
                    let out = wire.decode().map_err(|e| remote(&e))?;
                    out.check_invariants()?;
                    return Ok(out);
                }
                Some(Message::Error { message, .. }) => return Err(RenderError::Remote(message)),
                other => {
                    return Err(RenderError::Remote(format!(
                        "unexpected reply {}",
                        other.map_or("end of stream", |m| m.kind())
                    )))
                }
            }
        }
    }
}

/// Serve one renderer connection until the peer hangs up.
pub fn serve_render_connection(mut stream: TcpStream, backend: &dyn RenderBackend) -> Result<(), ProtocolError> {
    stream.set_nodelay(true).ok();
    let hello = Message::Register {
        name: backend.name().to_string(),
        slots: 1,
        capabilities: Capabilities {
            controls: Vec::new(),
            external_filters: false,
            modalities: backend.modalities(),
            dummy: false,
        },
    };
    write_message(&mut stream, &hello)?;
    while let Some(msg) = read_message(&mut stream)? {
        let reply = match msg {
            Message::RenderRequest { id, attempt, scene, modalities, .. } => match backend.render(&scene) {
                Ok(out) => Message::RenderResponse {
                    id,
                    attempt,
                    render: Some(WireRender::encode(&out, &modalities, false)),
                    result: None,
                },
                Err(e) => Message::item_error(Some(id), Some(attempt), &ItemError::new(ErrorClass::Render, e)),
            },
            Message::Heartbeat => continue,
            other => Message::Error {
                id: None,
                attempt: None,
                class: ErrorClass::Protocol,
                message: format!("renderer does not handle {}", other.kind()),
            },
        };
        write_message(&mut stream, &reply)?;
    }
    Ok(())
}

/// Accept renderer clients forever, one thread per connection.
pub fn serve_render_requests(listener: TcpListener, backend: Arc<dyn RenderBackend>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let backend = backend.clone();
        std::thread::spawn(move || {
            if let Err(e) = serve_render_connection(stream, &*backend) {
                log::warn!("render connection ended: {e}");
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{AssetStore, BuiltinRasterizer, RenderSettings};
    use crate::scene::{default_scene, primitives, EnvironmentSource, Resolution};

    fn fixture() -> (Arc<BuiltinRasterizer>, SceneState) {
        let mut assets = AssetStore::new();
        let mesh = primitives::uv_sphere("ball", 1.0, 12, 24);
        let env = crate::scene::load_environment("grey", &EnvironmentSource::Color([0.4, 0.5, 0.6])).unwrap();
        let state = default_scene(&mesh, &env, Resolution { width: 32, height: 24 }).unwrap();
        assets.add_mesh(mesh).add_environment(env);
        (Arc::new(BuiltinRasterizer::new(Arc::new(assets), RenderSettings::default())), state)
    }

    fn spawn_server(backend: Arc<dyn RenderBackend>) -> std::net::SocketAddr {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || serve_render_requests(listener, backend));
        addr
    }

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            Message::Pull,
            Message::Idle { retry_ms: 5 },
            Message::Error { id: Some(3), attempt: Some(1), class: ErrorClass::Render, message: "x".into() },
            Message::Register { name: "w".into(), slots: 2, capabilities: Capabilities::builtin(false) },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        assert_eq!(u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize, br#"{"type":"PULL"}"#.len());
        let mut r = &buf[..];
        for m in &msgs {
            assert_eq!(read_message(&mut r).unwrap().as_ref(), Some(m));
        }
        assert!(read_message(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncated_and_oversized_frames() {
        let frame = encode_frame(&Message::Done);
        assert!(matches!(read_message(&mut &frame[..frame.len() - 1]), Err(ProtocolError::Truncated)));
        assert!(matches!(read_message(&mut &frame[..2]), Err(ProtocolError::Truncated)));
        let big = ((MAX_FRAME + 1) as u32).to_be_bytes();
        assert!(matches!(read_message(&mut &big[..]), Err(ProtocolError::TooLarge(_))));
        let mut junk = 3u32.to_be_bytes().to_vec();
        junk.extend_from_slice(b"{{{");
        assert!(matches!(read_message(&mut &junk[..]), Err(ProtocolError::Json(_))));
    }

    #[test]
    fn remote_renderer_matches_in_process_call() {
        let (backend, state) = fixture();
        let addr = spawn_server(backend.clone());
        let remote = RemoteRenderer::connect(addr, &Modality::ALL).unwrap();
        let local = backend.render(&state).unwrap();
        let mut far = remote.render(&state).unwrap();
        far.render_time = local.render_time;
        assert!(local.same_buffers(&far));
        // Byte-level equality of every buffer.
        for m in Modality::ALL {
            let a = WireRender::encode(&local, &[m], false).buffers[&m].data.clone();
            let b = WireRender::encode(&far, &[m], false).buffers[&m].data.clone();
            assert_eq!(a, b, "{m:?}");
        }
    }

    struct RgbOnly(Arc<BuiltinRasterizer>);

    impl RenderBackend for RgbOnly {
        fn name(&self) -> &str {
            "rgb-only"
        }
        fn modalities(&self) -> Vec<Modality> {
            vec![Modality::Rgb, Modality::Seg]
        }
        fn render(&self, s: &SceneState) -> Result<RenderOutput, RenderError> {
            self.0.render(s)
        }
    }

    #[test]
    fn missing_uv_is_rejected_at_registration() {
        let (backend, _) = fixture();
        let addr = spawn_server(Arc::new(RgbOnly(backend)));
        let err = RemoteRenderer::connect(addr, &[Modality::Rgb, Modality::Uv]).err().unwrap().to_string();
        assert!(err.contains("capability") && err.contains("uv"), "{err}");
    }

    #[test]
    fn truncated_payload_fails_checksum() {
        let (backend, state) = fixture();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let caps = Capabilities { controls: vec![], external_filters: false, modalities: vec![Modality::Rgb], dummy: false };
            write_message(&mut s, &Message::Register { name: "bad".into(), slots: 1, capabilities: caps }).unwrap();
            let Some(Message::RenderRequest { id, scene, .. }) = read_message(&mut s).unwrap() else { panic!() };
            let out = backend.render(&scene).unwrap();
            let mut wire = WireRender::encode(&out, &[Modality::Rgb], false);
            let buf = wire.buffers.get_mut(&Modality::Rgb).unwrap();
            // Drop the last 4 base64 characters: still valid base64, 3 bytes short.
            buf.data.truncate(buf.data.len() - 4);
            write_message(&mut s, &Message::RenderResponse { id, attempt: 0, render: Some(wire), result: None }).unwrap();
        });
        let remote = RemoteRenderer::connect(addr, &[Modality::Rgb]).unwrap();
        let err = remote.render(&state).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn render_errors_come_back_as_error_messages() {
        let (backend, mut state) = fixture();
        state.mesh = "nope".into();
        let addr = spawn_server(backend);
        let remote = RemoteRenderer::connect(addr, &[Modality::Rgb]).unwrap();
        let err = remote.render(&state).unwrap_err().to_string();
        assert!(err.contains("nope"), "{err}");
    }
}
