//! The serving side of a peer: a TCP accept loop that feeds frames to an
//! [`Agent`] and writes its responses back, with bounded-grace shutdown and
//! optional register persistence.

use std::fmt;
use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::agent::{Agent, AgentState};
use crate::protocol::{encode_frame, error_code, DecodeError, FrameReader, Message};
use crate::skill::SkillError;

/// How long [`NodeHandle::join`] waits for in-flight connections.
pub const DEFAULT_GRACE: Duration = Duration::from_secs(5);
/// Accept-loop poll interval while idle.
const ACCEPT_POLL: Duration = Duration::from_millis(20);
/// Per-connection read timeout; bounds how stale the stop flag can get.
const READ_POLL: Duration = Duration::from_millis(150);

/// Errors from starting or stopping a node.
#[derive(Debug, Error)]
pub enum NodeError {
    #[error("failed to bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("failed to persist the register: {0}")]
    Persist(#[from] SkillError),
    #[error("a node thread panicked")]
    Panicked,
    #[error("connections still active after the grace period")]
    Draining,
}

/// Serving options.
#[derive(Debug, Clone, Default)]
pub struct NodeOptions {
    /// When set, the agent's register is saved here on clean shutdown.
    pub register_path: Option<PathBuf>,
    /// Grace period for in-flight connections at shutdown; `None` means
    /// [`DEFAULT_GRACE`].
    pub grace: Option<Duration>,
}

/// Starts serving `agent` on `addr` with default options.
pub fn serve<A: ToSocketAddrs + fmt::Debug>(agent: Agent, addr: A) -> Result<NodeHandle, NodeError> {
    serve_with(agent, addr, NodeOptions::default())
}

/// Starts serving `agent` on `addr`. Returns immediately; the node accepts
/// concurrent connections on background threads until the handle is stopped.
/// Each connection processes its frames sequentially; all agent mutations
/// are serialized through one lock, so snapshots are always consistent.
pub fn serve_with<A: ToSocketAddrs + fmt::Debug>(
    agent: Agent,
    addr: A,
    options: NodeOptions,
) -> Result<NodeHandle, NodeError> {
    let bind_err = |source: io::Error| NodeError::Bind {
        addr: format!("{addr:?}"),
        source,
    };
    let listener = TcpListener::bind(&addr).map_err(bind_err)?;
    let local_addr = listener.local_addr().map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;

    let agent = Arc::new(Mutex::new(agent));
    let stop = Arc::new(AtomicBool::new(false));
    let grace = options.grace.unwrap_or(DEFAULT_GRACE);
    let accept = thread::spawn({
        let agent = agent.clone();
        let stop = stop.clone();
        move || accept_loop(listener, agent, stop, grace)
    });
    Ok(NodeHandle {
        agent: Some(agent),
        stop,
        accept: Some(accept),
        local_addr,
        register_path: options.register_path,
    })
}

/// A running node. Dropping the handle signals shutdown but detaches the
/// threads; call [`NodeHandle::join`] for an orderly stop.
#[derive(Debug)]
pub struct NodeHandle {
    // Option so join() can move the Arc out of a Drop type.
    agent: Option<Arc<Mutex<Agent>>>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    local_addr: SocketAddr,
    register_path: Option<PathBuf>,
}

impl NodeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// A consistent copy of the agent's state, safe to read during traffic.
    pub fn snapshot(&self) -> AgentState {
        match self.shared_agent().lock() {
            Ok(agent) => agent.snapshot(),
            Err(poisoned) => poisoned.into_inner().snapshot(),
        }
    }

    /// Runs `f` on the live agent through the same serialized path the serve
    /// loop uses — how outbound work (e.g. acquiring skills) is done while
    /// serving.
    pub fn with_agent<T>(&self, f: impl FnOnce(&mut Agent) -> T) -> T {
        match self.shared_agent().lock() {
            Ok(mut agent) => f(&mut agent),
            Err(poisoned) => f(&mut poisoned.into_inner()),
        }
    }

    /// Signals shutdown without waiting.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Stops the node, waits for in-flight connections (bounded by the grace
    /// period), persists the register when configured, and returns the agent.
    pub fn join(mut self) -> Result<Agent, NodeError> {
        self.stop();
        if let Some(accept) = self.accept.take() {
            accept.join().map_err(|_| NodeError::Panicked)?;
        }
        let shared = self.agent.take().expect("agent present until join");
        let agent = Arc::try_unwrap(shared).map_err(|_| NodeError::Draining)?;
        let agent = match agent.into_inner() {
            Ok(agent) => agent,
            Err(poisoned) => poisoned.into_inner(),
        };
        if let Some(path) = &self.register_path {
            agent.register().save(path)?;
        }
        Ok(agent)
    }
}

impl NodeHandle {
    fn shared_agent(&self) -> &Arc<Mutex<Agent>> {
        self.agent.as_ref().expect("agent present until join")
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(
    listener: TcpListener,
    agent: Arc<Mutex<Agent>>,
    stop: Arc<AtomicBool>,
    grace: Duration,
) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                workers.retain(|w| !w.is_finished());
                let agent = agent.clone();
                let stop = stop.clone();
                workers.push(thread::spawn(move || connection_loop(stream, agent, stop)));
            }
            // WouldBlock is the idle case; other accept errors are transient
            // (e.g. aborted handshakes) and never kill the loop.
            Err(_) => thread::sleep(ACCEPT_POLL),
        }
    }
    // Drain within the grace period; stragglers are detached, and the agent
    // Arc they hold keeps join() honest via Draining.
    let deadline = Instant::now() + grace;
    loop {
        workers.retain(|w| !w.is_finished());
        if workers.is_empty() || Instant::now() >= deadline {
            break;
        }
        thread::sleep(Duration::from_millis(5));
    }
}

fn connection_loop(stream: TcpStream, agent: Arc<Mutex<Agent>>, stop: Arc<AtomicBool>) {
    if stream.set_read_timeout(Some(READ_POLL)).is_err() {
        return;
    }
    let mut writer = match stream.try_clone() {
        Ok(writer) => writer,
        Err(_) => return,
    };
    let mut reader = FrameReader::new(stream);
    loop {
        match reader.read_frame() {
            Ok(Some(message)) => {
                let response = match agent.lock() {
                    Ok(mut agent) => agent.handle_incoming(message),
                    Err(_) => return,
                };
                if let Some(response) = response {
                    let Ok(frame) = encode_frame(&response) else { return };
                    if writer.write_all(&frame).is_err() {
                        return;
                    }
                }
            }
            // Clean end of stream at a frame boundary.
            Ok(None) => return,
            Err(DecodeError::Io(e))
                if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut =>
            {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
            }
            // Peer vanished mid-frame or the socket broke: nothing to answer.
            Err(DecodeError::Io(_)) | Err(DecodeError::ShortRead { .. }) => return,
            // An oversized length forfeits framing; answer and hang up.
            Err(e @ DecodeError::CapExceeded { .. }) => {
                send_bad_frame(&mut writer, &e);
                return;
            }
            // Payload-level garbage consumed exactly one frame: answer and
            // keep serving this connection (framing is still aligned).
            Err(e) => send_bad_frame(&mut writer, &e),
        }
    }
}

fn send_bad_frame(writer: &mut TcpStream, error: &DecodeError) {
    let reply = Message::ProtocolError {
        code: error_code::BAD_FRAME.to_string(),
        detail: error.to_string(),
    };
    if let Ok(frame) = encode_frame(&reply) {
        let _ = writer.write_all(&frame);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Counters;
    use crate::skill::{AgentId, SkillDescriptor};
    use crate::transport::{TcpTransport, Transport};
    use std::io::Read;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn provider_agent() -> Agent {
        let mut agent = Agent::new(id("Provider1"));
        agent
            .integrate_skill(
                SkillDescriptor::const_string("get_weather", "returns current weather", "Sunny, 22C")
                    .unwrap(),
            )
            .unwrap();
        agent
    }

    #[test]
    fn clean_startup_and_shutdown_with_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("register.tsv");
        let node = serve_with(
            provider_agent(),
            "127.0.0.1:0",
            NodeOptions {
                register_path: Some(path.clone()),
                grace: Some(Duration::from_millis(500)),
            },
        )
        .unwrap();
        assert_ne!(node.local_addr().port(), 0);
        let state = node.snapshot();
        assert_eq!(state.counters, Counters::default());

        let agent = node.join().unwrap();
        assert_eq!(agent.counters(), Counters::default());
        let reloaded = crate::skill::SkillRegister::load(&path).unwrap();
        assert_eq!(reloaded, *agent.register());
    }

    #[test]
    fn requestor_acquires_over_real_tcp() {
        let node = serve(provider_agent(), "127.0.0.1:0").unwrap();

        let mut requestor = Agent::new(id("Calendar"));
        requestor
            .register_mut()
            .record("get_weather", "returns current weather", id("Provider1"))
            .unwrap();
        let mut transport = TcpTransport::new();
        transport.add_peer(id("Provider1"), node.local_addr()).unwrap();

        let detected = requestor
            .skill_flow("check the weather please", &transport)
            .unwrap();
        assert_eq!(detected, vec!["get_weather".to_string()]);
        assert_eq!(requestor.execute_skill("get_weather").unwrap(), "Sunny, 22C");

        // The ack is in flight when skill_flow returns; wait for the node to
        // drain it so counters settle.
        let deadline = Instant::now() + Duration::from_secs(2);
        while node.snapshot().counters.messages_received < 2 && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(10));
        }
        let state = node.snapshot();
        assert_eq!(state.counters.messages_received, 2);
        assert_eq!(state.counters.messages_sent, 1);
        assert_eq!(state.counters.skills_served, 1);
        assert!(state.register.lookup("get_weather").contains(&id("Calendar")));

        node.join().unwrap();
    }

    #[test]
    fn malformed_frames_are_answered_and_isolated() {
        let node = serve(provider_agent(), "127.0.0.1:0").unwrap();
        let mut stream = TcpStream::connect(node.local_addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();

        // Well-framed garbage payload → bad_frame reply, connection stays up.
        let garbage = b"{\"type\":\"mystery\"}";
        stream.write_all(&(garbage.len() as u32).to_be_bytes()).unwrap();
        stream.write_all(garbage).unwrap();
        let mut reader = FrameReader::new(stream.try_clone().unwrap());
        let reply = loop {
            match reader.read_frame() {
                Ok(Some(m)) => break m,
                Ok(None) => panic!("connection closed"),
                Err(DecodeError::Io(e)) if e.kind() == io::ErrorKind::WouldBlock => continue,
                Err(e) => panic!("bad reply: {e}"),
            }
        };
        assert!(
            matches!(&reply, Message::ProtocolError { code, .. } if code == error_code::BAD_FRAME)
        );

        // The same connection still serves a well-formed request.
        let request = Message::SkillRequest {
            skill: "get_weather".into(),
            requester: id("Calendar"),
            text: "please".into(),
        };
        stream.write_all(&encode_frame(&request).unwrap()).unwrap();
        let reply = loop {
            match reader.read_frame() {
                Ok(Some(m)) => break m,
                Ok(None) => panic!("connection closed"),
                Err(DecodeError::Io(e)) if e.kind() == io::ErrorKind::WouldBlock => continue,
                Err(e) => panic!("bad reply: {e}"),
            }
        };
        assert!(matches!(reply, Message::SkillTransfer { .. }));

        // An oversized length header gets an answer, then the node hangs up.
        let mut oversized = TcpStream::connect(node.local_addr()).unwrap();
        oversized
            .set_read_timeout(Some(Duration::from_secs(5)))
            .unwrap();
        oversized.write_all(&u32::MAX.to_be_bytes()).unwrap();
        let mut reader = FrameReader::new(oversized.try_clone().unwrap());
        let reply = loop {
            match reader.read_frame() {
                Ok(Some(m)) => break m,
                Ok(None) => panic!("connection closed before replying"),
                Err(DecodeError::Io(e)) if e.kind() == io::ErrorKind::WouldBlock => continue,
                Err(e) => panic!("bad reply: {e}"),
            }
        };
        assert!(
            matches!(&reply, Message::ProtocolError { code, .. } if code == error_code::BAD_FRAME)
        );
        let mut rest = Vec::new();
        oversized.read_to_end(&mut rest).unwrap();
        assert!(rest.is_empty(), "node should close after a framing breach");

        // And the node still accepts fresh connections afterwards.
        let state = node.snapshot();
        assert_eq!(state.counters.skills_served, 1);
        let mut transport = TcpTransport::new();
        transport.add_peer(id("Provider1"), node.local_addr()).unwrap();
        let mut conn = transport.connect(&id("Provider1")).unwrap();
        conn.send(&request).unwrap();
        assert!(matches!(conn.recv().unwrap(), Message::SkillTransfer { .. }));

        node.join().unwrap();
    }

    #[test]
    fn concurrent_requestors_all_get_identical_descriptors() {
        let node = serve(provider_agent(), "127.0.0.1:0").unwrap();
        let addr = node.local_addr();
        let clients = 8;
        let handles: Vec<_> = (0..clients)
            .map(|i| {
                thread::spawn(move || {
                    let mut transport = TcpTransport::new();
                    let peer = id("Provider1");
                    transport.add_peer(peer.clone(), addr).unwrap();
                    let mut conn = transport.connect(&peer).unwrap();
                    conn.send(&Message::SkillRequest {
                        skill: "get_weather".into(),
                        requester: id(&format!("Client{i}")),
                        text: "please".into(),
                    })
                    .unwrap();
                    match conn.recv().unwrap() {
                        Message::SkillTransfer { descriptor } => descriptor,
                        other => panic!("unexpected reply {other:?}"),
                    }
                })
            })
            .collect();
        let descriptors: Vec<SkillDescriptor> =
            handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(descriptors.windows(2).all(|w| w[0] == w[1]));

        let state = node.snapshot();
        assert_eq!(state.counters.skills_served, clients as u64);
        // Register invariants hold under concurrency: every client recorded.
        let owners = state.register.lookup("get_weather");
        assert_eq!(owners.len(), 1 + clients);

        node.join().unwrap();
    }
}
