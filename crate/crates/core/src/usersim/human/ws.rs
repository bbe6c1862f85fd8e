//! WebSocket transport for the human bridge.
//!
//! Consoles connect to `ws://host:port/session/<session_id>`. Each text frame
//! carries one bridge message. A console that reconnects is sent the session's
//! `session_start` and the pending `agent_turn` again.

// tungstenite::Error is large; it only travels up to the connection loop.
#![allow(clippy::result_large_err)]

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use tungstenite::handshake::server::{Request, Response};
use tungstenite::{Message, WebSocket};

use super::{BridgeMessage, BridgeTransport};
use crate::usersim::UserSimError;

const POLL: Duration = Duration::from_millis(25);

#[derive(Default)]
struct SlotState {
    start: Option<BridgeMessage>,
    pending: Option<BridgeMessage>,
    conn: Option<Sender<BridgeMessage>>,
    generation: u64,
}

struct Slot {
    state: Mutex<SlotState>,
    inbound_tx: Mutex<Sender<BridgeMessage>>,
    inbound_rx: Mutex<Receiver<BridgeMessage>>,
}

impl Slot {
    fn new() -> Self {
        let (tx, rx) = mpsc::channel();
        Self { state: Mutex::default(), inbound_tx: Mutex::new(tx), inbound_rx: Mutex::new(rx) }
    }
}

type Slots = Arc<Mutex<HashMap<String, Arc<Slot>>>>;

/// Accepts console connections and routes them to sessions by id.
pub struct WsHub {
    slots: Slots,
    addr: SocketAddr,
}

impl WsHub {
    pub fn bind(addr: &str) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let slots: Slots = Arc::default();
        let accept_slots = slots.clone();
        thread::Builder::new().name("bridge-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                match stream {
                    Ok(stream) => {
                        let slots = accept_slots.clone();
                        thread::spawn(move || {
                            if let Err(e) = serve_connection(stream, &slots) {
                                log::debug!("console connection ended: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?;
        Ok(Self { slots, addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url_for(&self, session_id: &str) -> String {
        format!("ws://{}/session/{}", self.addr, session_id)
    }

    /// Transport for one session; consoles may connect before or after this call.
    pub fn transport(&self, session_id: &str) -> Arc<WsTransport> {
        let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        let slot = slots.entry(session_id.to_string()).or_insert_with(|| Arc::new(Slot::new())).clone();
        Arc::new(WsTransport { slot })
    }

    pub fn is_connected(&self, session_id: &str) -> bool {
        let slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        slots.get(session_id).is_some_and(|s| s.state.lock().unwrap_or_else(|e| e.into_inner()).conn.is_some())
    }
}

pub struct WsTransport {
    slot: Arc<Slot>,
}

impl BridgeTransport for WsTransport {
    fn send(&self, msg: &BridgeMessage) -> Result<(), UserSimError> {
        let mut st = self.slot.state.lock().unwrap_or_else(|e| e.into_inner());
        match msg {
            BridgeMessage::SessionStart { .. } => st.start = Some(msg.clone()),
            BridgeMessage::AgentTurn { .. } => st.pending = Some(msg.clone()),
            BridgeMessage::SessionEnd { .. } => st.pending = None,
            _ => {}
        }
        if let Some(conn) = &st.conn {
            if conn.send(msg.clone()).is_err() {
                st.conn = None;
            }
        }
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> Result<Option<BridgeMessage>, UserSimError> {
        let got = self.slot.inbound_rx.lock().unwrap_or_else(|e| e.into_inner()).recv_timeout(timeout);
        match got {
            Ok(msg) => {
                if matches!(msg, BridgeMessage::HumanReply(_)) {
                    self.slot.state.lock().unwrap_or_else(|e| e.into_inner()).pending = None;
                }
                Ok(Some(msg))
            }
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(UserSimError::BridgeClosed),
        }
    }
}

fn session_from_path(path: &str) -> Option<String> {
    let id = path.trim_end_matches('/').rsplit('/').next()?;
    (!id.is_empty()).then(|| id.to_string())
}

fn send_text(ws: &mut WebSocket<TcpStream>, msg: &BridgeMessage) -> tungstenite::Result<()> {
    ws.send(Message::text(msg.to_line()))
}

fn serve_connection(stream: TcpStream, slots: &Slots) -> Result<(), Box<dyn std::error::Error>> {
    stream.set_read_timeout(Some(POLL))?;
    let seen = Arc::new(Mutex::new(String::new()));
    let sink = seen.clone();
    let mut ws = tungstenite::accept_hdr(stream, move |req: &Request, resp: Response| {
        *sink.lock().unwrap_or_else(|e| e.into_inner()) = req.uri().path().to_string();
        Ok(resp)
    })?;
    let path = seen.lock().unwrap_or_else(|e| e.into_inner()).clone();

    let slot =
        session_from_path(&path).and_then(|id| slots.lock().unwrap_or_else(|e| e.into_inner()).get(&id).cloned());
    let Some(slot) = slot else {
        send_text(&mut ws, &BridgeMessage::Error { message: format!("unknown session path `{path}`") })?;
        ws.close(None)?;
        return Ok(());
    };

    let (tx, rx) = mpsc::channel();
    let generation = {
        let mut st = slot.state.lock().unwrap_or_else(|e| e.into_inner());
        st.generation += 1;
        st.conn = Some(tx);
        for m in st.start.iter().chain(st.pending.iter()) {
            send_text(&mut ws, m)?;
        }
        st.generation
    };
    let inbound = slot.inbound_tx.lock().unwrap_or_else(|e| e.into_inner()).clone();

    let result = pump(&mut ws, &rx, &inbound);
    let mut st = slot.state.lock().unwrap_or_else(|e| e.into_inner());
    if st.generation == generation {
        st.conn = None;
    }
    result
}

fn pump(
    ws: &mut WebSocket<TcpStream>,
    outbound: &Receiver<BridgeMessage>,
    inbound: &Sender<BridgeMessage>,
) -> Result<(), Box<dyn std::error::Error>> {
    loop {
        loop {
            match outbound.try_recv() {
                Ok(m) => send_text(ws, &m)?,
                Err(TryRecvError::Empty) => break,
                // a newer connection for the same session took over
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    return Ok(());
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => match BridgeMessage::from_line(&text) {
                Ok(m @ BridgeMessage::HumanReply(_)) => {
                    let _ = inbound.send(m);
                }
                Ok(other) => log::debug!("console sent {}, ignored", other.type_name()),
                Err(e) => send_text(ws, &BridgeMessage::Error { message: format!("bad message: {e}") })?,
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
}
