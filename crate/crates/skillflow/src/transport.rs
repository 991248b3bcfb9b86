//! Transports: how an agent reaches a peer.
//!
//! [`TcpTransport`] speaks the frame format over real sockets using a peer
//! table (agent id → socket address). [`LoopbackNet`] is an in-process
//! network with identical semantics — every message still round-trips
//! through the real codec — plus an injectable fault schedule and latency,
//! which keeps integration tests and the benchmark deterministic.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{self, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::protocol::{decode_frame, encode_frame, DecodeError, EncodeError, FrameReader, Message};
use crate::skill::AgentId;

/// Default time to wait for a connection or a reply.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Errors raised by transports and connections.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer `{0}` is not in the peer table")]
    UnknownPeer(String),
    #[error("connection to {peer} refused: {reason}")]
    ConnectRefused { peer: String, reason: String },
    #[error("timed out waiting for {peer}")]
    Timeout { peer: String },
    #[error("connection to {peer} closed")]
    Closed { peer: String },
    #[error("injected fault talking to {peer}")]
    InjectedFault { peer: String },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("i/o with {peer}: {source}")]
    Io { peer: String, source: io::Error },
}

impl TransportError {
    pub fn is_timeout(&self) -> bool {
        match self {
            TransportError::Timeout { .. } => true,
            TransportError::Io { source, .. } => matches!(
                source.kind(),
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
            ),
            _ => false,
        }
    }

    pub fn is_connect_refused(&self) -> bool {
        matches!(
            self,
            TransportError::ConnectRefused { .. } | TransportError::UnknownPeer(_)
        )
    }
}

/// One open, bidirectional conversation with a peer.
pub trait Connection: Send {
    fn send(&mut self, message: &Message) -> Result<(), TransportError>;
    /// Waits for the next message, up to the transport's timeout.
    fn recv(&mut self) -> Result<Message, TransportError>;
}

/// Opens connections to peers by agent id.
pub trait Transport {
    fn connect(&self, peer: &AgentId) -> Result<Box<dyn Connection>, TransportError>;
}

// ---------------------------------------------------------------------------
// TCP
// ---------------------------------------------------------------------------

/// TCP transport with an explicit peer table.
#[derive(Debug, Clone, Default)]
pub struct TcpTransport {
    peers: HashMap<AgentId, SocketAddr>,
    timeout: Option<Duration>,
}

impl TcpTransport {
    /// Transport with the default 10 s connect/read timeout.
    pub fn new() -> Self {
        TcpTransport {
            peers: HashMap::new(),
            timeout: Some(DEFAULT_TIMEOUT),
        }
    }

    /// Overrides the connect/read timeout. `None` blocks indefinitely.
    pub fn with_timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    /// Adds or replaces a peer address. `addr` may be anything resolvable,
    /// e.g. `"127.0.0.1:7401"`.
    pub fn add_peer(&mut self, id: AgentId, addr: impl ToSocketAddrs) -> Result<(), TransportError> {
        let resolved = addr
            .to_socket_addrs()
            .map_err(|source| TransportError::Io {
                peer: id.to_string(),
                source,
            })?
            .next()
            .ok_or_else(|| TransportError::ConnectRefused {
                peer: id.to_string(),
                reason: "address resolved to nothing".to_string(),
            })?;
        self.peers.insert(id, resolved);
        Ok(())
    }

    pub fn peer_addr(&self, id: &AgentId) -> Option<SocketAddr> {
        self.peers.get(id).copied()
    }

    /// Connects straight to an address, bypassing the peer table. `label`
    /// names the peer in errors.
    pub fn connect_addr(
        &self,
        label: &str,
        addr: SocketAddr,
    ) -> Result<Box<dyn Connection>, TransportError> {
        let stream = match self.timeout {
            Some(t) => TcpStream::connect_timeout(&addr, t),
            None => TcpStream::connect(addr),
        }
        .map_err(|source| {
            if source.kind() == io::ErrorKind::TimedOut {
                TransportError::Timeout {
                    peer: label.to_string(),
                }
            } else {
                TransportError::ConnectRefused {
                    peer: label.to_string(),
                    reason: source.to_string(),
                }
            }
        })?;
        stream
            .set_read_timeout(self.timeout)
            .and_then(|_| stream.set_write_timeout(self.timeout))
            .map_err(|source| TransportError::Io {
                peer: label.to_string(),
                source,
            })?;
        let reader_stream = stream.try_clone().map_err(|source| TransportError::Io {
            peer: label.to_string(),
            source,
        })?;
        Ok(Box::new(TcpConnection {
            peer: label.to_string(),
            writer: stream,
            reader: FrameReader::new(reader_stream),
        }))
    }
}

impl Transport for TcpTransport {
    fn connect(&self, peer: &AgentId) -> Result<Box<dyn Connection>, TransportError> {
        let addr = self
            .peers
            .get(peer)
            .copied()
            .ok_or_else(|| TransportError::UnknownPeer(peer.to_string()))?;
        self.connect_addr(peer.as_str(), addr)
    }
}

struct TcpConnection {
    peer: String,
    writer: TcpStream,
    reader: FrameReader<TcpStream>,
}

impl Connection for TcpConnection {
    fn send(&mut self, message: &Message) -> Result<(), TransportError> {
        let frame = encode_frame(message)?;
        self.writer
            .write_all(&frame)
            .and_then(|_| self.writer.flush())
            .map_err(|source| TransportError::Io {
                peer: self.peer.clone(),
                source,
            })
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        match self.reader.read_frame() {
            Ok(Some(message)) => Ok(message),
            Ok(None) => Err(TransportError::Closed {
                peer: self.peer.clone(),
            }),
            Err(DecodeError::Io(source))
                if matches!(
                    source.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                Err(TransportError::Timeout {
                    peer: self.peer.clone(),
                })
            }
            Err(e) => Err(e.into()),
        }
    }
}

// ---------------------------------------------------------------------------
// Loopback
// ---------------------------------------------------------------------------

/// A peer's serving behavior: one message in, optionally one reply out.
pub type LoopbackHandler = Box<dyn FnMut(Message) -> Option<Message> + Send>;

#[derive(Default)]
struct LoopbackState {
    /// `None` while a handler is checked out for a call.
    handlers: HashMap<AgentId, Option<LoopbackHandler>>,
    offline: HashSet<AgentId>,
    fail_next_connect: HashSet<AgentId>,
    connects: u64,
    latency: Duration,
}

/// Deterministic in-process network.
///
/// Peers are registered as handlers; every `send` encodes the message with
/// the real codec, decodes it on the "remote" side, runs the handler, and
/// queues its reply (codec round trip again) for `recv`. Faults are
/// injectable: peers can be taken offline, and single connects can be made
/// to fail. Successful connects are counted, which doubles as the
/// communication-exchange metric in tests and the benchmark.
#[derive(Clone, Default)]
pub struct LoopbackNet {
    state: Arc<Mutex<LoopbackState>>,
}

impl LoopbackNet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers (or replaces) a peer's serving handler.
    pub fn register_handler(
        &self,
        id: AgentId,
        handler: impl FnMut(Message) -> Option<Message> + Send + 'static,
    ) {
        let mut state = self.state.lock().expect("loopback state poisoned");
        state.handlers.insert(id, Some(Box::new(handler)));
    }

    /// Marks a peer offline (connects refused) or back online.
    pub fn set_offline(&self, id: &AgentId, offline: bool) {
        let mut state = self.state.lock().expect("loopback state poisoned");
        if offline {
            state.offline.insert(id.clone());
        } else {
            state.offline.remove(id);
        }
    }

    /// The next connect to `id` fails with an injected fault.
    pub fn fail_next_connect(&self, id: &AgentId) {
        let mut state = self.state.lock().expect("loopback state poisoned");
        state.fail_next_connect.insert(id.clone());
    }

    /// Simulated per-send latency (defaults to zero: fully deterministic).
    pub fn set_latency(&self, latency: Duration) {
        self.state.lock().expect("loopback state poisoned").latency = latency;
    }

    /// Number of successful connects so far.
    pub fn exchange_count(&self) -> u64 {
        self.state.lock().expect("loopback state poisoned").connects
    }
}

impl Transport for LoopbackNet {
    fn connect(&self, peer: &AgentId) -> Result<Box<dyn Connection>, TransportError> {
        let mut state = self.state.lock().expect("loopback state poisoned");
        if state.fail_next_connect.remove(peer) {
            return Err(TransportError::InjectedFault {
                peer: peer.to_string(),
            });
        }
        if state.offline.contains(peer) {
            return Err(TransportError::ConnectRefused {
                peer: peer.to_string(),
                reason: "peer offline".to_string(),
            });
        }
        if !state.handlers.contains_key(peer) {
            return Err(TransportError::UnknownPeer(peer.to_string()));
        }
        state.connects += 1;
        Ok(Box::new(LoopbackConnection {
            net: self.state.clone(),
            peer: peer.clone(),
            inbox: VecDeque::new(),
        }))
    }
}

struct LoopbackConnection {
    net: Arc<Mutex<LoopbackState>>,
    peer: AgentId,
    inbox: VecDeque<Message>,
}

impl Connection for LoopbackConnection {
    fn send(&mut self, message: &Message) -> Result<(), TransportError> {
        // Full codec round trip: the peer sees exactly what the wire would
        // carry.
        let frame = encode_frame(message)?;
        let delivered = decode_frame(&frame)?;

        // Check the handler out of the shared state so the call itself runs
        // without holding the network lock (the handler may lock its agent,
        // and other threads may be inside the network concurrently).
        let (mut handler, latency) = {
            let mut state = self.net.lock().expect("loopback state poisoned");
            if state.offline.contains(&self.peer) {
                return Err(TransportError::Closed {
                    peer: self.peer.to_string(),
                });
            }
            let slot = state
                .handlers
                .get_mut(&self.peer)
                .ok_or_else(|| TransportError::UnknownPeer(self.peer.to_string()))?;
            let handler = slot.take().ok_or_else(|| TransportError::ConnectRefused {
                peer: self.peer.to_string(),
                reason: "peer busy".to_string(),
            })?;
            (handler, state.latency)
        };
        if !latency.is_zero() {
            std::thread::sleep(latency);
        }
        let reply = handler(delivered);

        let mut state = self.net.lock().expect("loopback state poisoned");
        if let Some(slot) = state.handlers.get_mut(&self.peer) {
            *slot = Some(handler);
        }
        drop(state);

        if let Some(reply) = reply {
            let frame = encode_frame(&reply)?;
            self.inbox.push_back(decode_frame(&frame)?);
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        // Replies are produced synchronously by `send`; an empty inbox will
        // stay empty, which is this transport's deterministic "timeout".
        self.inbox.pop_front().ok_or(TransportError::Timeout {
            peer: self.peer.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::error_code;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn echo_net() -> LoopbackNet {
        let net = LoopbackNet::new();
        net.register_handler(id("echo"), |message| match message {
            Message::TaskText { text } => Some(Message::TaskText {
                text: format!("echo: {text}"),
            }),
            Message::Ack { .. } => None,
            _ => Some(Message::ProtocolError {
                code: error_code::UNSUPPORTED.to_string(),
                detail: "echo only".to_string(),
            }),
        });
        net
    }

    #[test]
    fn loopback_round_trips_through_the_codec() {
        let net = echo_net();
        let mut conn = net.connect(&id("echo")).unwrap();
        conn.send(&Message::TaskText {
            text: "hello".into(),
        })
        .unwrap();
        assert_eq!(
            conn.recv().unwrap(),
            Message::TaskText {
                text: "echo: hello".into()
            }
        );
        // No reply pending → deterministic timeout.
        assert!(conn.recv().unwrap_err().is_timeout());
        assert_eq!(net.exchange_count(), 1);
    }

    #[test]
    fn loopback_handlers_can_decline_to_reply() {
        let net = echo_net();
        let mut conn = net.connect(&id("echo")).unwrap();
        conn.send(&Message::Ack {
            reference: "get_weather".into(),
        })
        .unwrap();
        assert!(conn.recv().unwrap_err().is_timeout());
    }

    fn connect_err(
        result: Result<Box<dyn Connection>, TransportError>,
    ) -> TransportError {
        match result {
            Ok(_) => panic!("connect unexpectedly succeeded"),
            Err(e) => e,
        }
    }

    #[test]
    fn loopback_fault_schedule() {
        let net = echo_net();
        let peer = id("echo");

        net.fail_next_connect(&peer);
        assert!(matches!(
            connect_err(net.connect(&peer)),
            TransportError::InjectedFault { .. }
        ));
        // The fault is one-shot.
        assert!(net.connect(&peer).is_ok());

        net.set_offline(&peer, true);
        assert!(connect_err(net.connect(&peer)).is_connect_refused());

        // Going offline mid-conversation closes the stream.
        net.set_offline(&peer, false);
        let mut conn = net.connect(&peer).unwrap();
        net.set_offline(&peer, true);
        assert!(matches!(
            conn.send(&Message::TaskText { text: "x".into() }),
            Err(TransportError::Closed { .. })
        ));

        assert!(matches!(
            connect_err(net.connect(&id("nobody"))),
            TransportError::UnknownPeer(_)
        ));
        // Offline and fault connects never counted as exchanges.
        assert_eq!(net.exchange_count(), 2);
    }

    #[test]
    fn tcp_unknown_peer_and_refused_connect() {
        let transport = TcpTransport::new().with_timeout(Some(Duration::from_millis(200)));
        assert!(matches!(
            connect_err(transport.connect(&id("ghost"))),
            TransportError::UnknownPeer(_)
        ));

        // Bind a listener, take its port, then drop it: connections to the
        // now-free port are refused.
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let mut transport = TcpTransport::new().with_timeout(Some(Duration::from_millis(200)));
        transport.add_peer(id("gone"), addr).unwrap();
        let err = connect_err(transport.connect(&id("gone")));
        assert!(err.is_connect_refused(), "got {err:?}");
    }

    #[test]
    fn tcp_frames_cross_a_real_socket() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = FrameReader::new(stream.try_clone().unwrap());
            let mut writer = stream;
            while let Some(message) = reader.read_frame().unwrap() {
                let reply = match message {
                    Message::TaskText { text } => Message::TaskText {
                        text: text.to_uppercase(),
                    },
                    other => other,
                };
                writer.write_all(&encode_frame(&reply).unwrap()).unwrap();
            }
        });

        let mut transport = TcpTransport::new().with_timeout(Some(Duration::from_secs(5)));
        transport.add_peer(id("server"), addr).unwrap();
        let mut conn = transport.connect(&id("server")).unwrap();
        conn.send(&Message::TaskText {
            text: "quiet".into(),
        })
        .unwrap();
        assert_eq!(
            conn.recv().unwrap(),
            Message::TaskText {
                text: "QUIET".into()
            }
        );
        drop(conn);
        server.join().unwrap();
    }
}
