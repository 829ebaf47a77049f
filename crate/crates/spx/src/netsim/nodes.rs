//! Protocol endpoints wrapped as simulator nodes.
//!
//! [`AnyClient`] and [`AnyServer`] give the two handshake families one
//! interface, used both here and by the loopback runner. The nodes drive the
//! workload (echo transfer, page load, or handshake only) over the record
//! layer once their handshake completes.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::engine::{EdgeAction, ProtocolId, SpxEdge};
use crate::noixe::{NoixeClient, NoixeServer};
use crate::record::RecordChannel;
use crate::see::Enclave;
use crate::tlx::{TlxClient, TlxServer};
use crate::wire::{Direction, Flight, Tag, WireMessage};

use super::{Ctx, Outcome, OutcomeKind, SimNode};

/// Plaintext bytes per record in the TLS-style family.
pub const TLX_RECORD_BLOCK: usize = 1024;
/// Plaintext bytes per record in the Noise-style family: the 65535-byte
/// message cap minus the AEAD tag.
pub const NOISE_RECORD_BLOCK: usize = 65535 - 16;

/// Deterministic workload payload.
pub fn workload_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    ChaCha12Rng::seed_from_u64(seed).fill_bytes(&mut out);
    out
}

/// Payload of one page object.
pub fn object_payload(seed: u64, index: u64, len: usize) -> Vec<u8> {
    workload_bytes(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15), len)
}

// ---------------------------------------------------------------------------
// Family-erasing endpoint wrappers

pub enum AnyClient {
    Tlx(TlxClient),
    Noixe(NoixeClient),
}

impl AnyClient {
    pub fn start(&mut self) -> Flight {
        match self {
            AnyClient::Tlx(c) => c.start(),
            AnyClient::Noixe(c) => c.start(),
        }
    }

    pub fn on_frame(&mut self, msg: &WireMessage) -> Result<Vec<Flight>, String> {
        match self {
            AnyClient::Tlx(c) => c.on_frame(msg).map_err(|e| e.to_string()),
            AnyClient::Noixe(c) => c.on_frame(msg).map_err(|e| e.to_string()),
        }
    }

    pub fn is_established(&self) -> bool {
        match self {
            AnyClient::Tlx(c) => c.is_established(),
            AnyClient::Noixe(c) => c.is_established(),
        }
    }

    /// Block size the family uses for bulk records.
    pub fn record_block(&self) -> usize {
        match self {
            AnyClient::Tlx(_) => TLX_RECORD_BLOCK,
            AnyClient::Noixe(_) => NOISE_RECORD_BLOCK,
        }
    }

    /// Client-side record channel, once established.
    pub fn record_channel(&self) -> Option<RecordChannel> {
        match self {
            AnyClient::Tlx(c) => Some(RecordChannel::symmetric(
                c.session_key()?.clone(),
                Direction::ClientToServer,
            )),
            AnyClient::Noixe(c) => {
                let (k1, k2) = c.transport_keys()?;
                Some(RecordChannel::asymmetric(
                    k1.clone(),
                    k2.clone(),
                    Direction::ClientToServer,
                ))
            }
        }
    }

    /// Raw session keys for key-triangle assertions.
    pub fn session_key_bytes(&self) -> Vec<[u8; 32]> {
        match self {
            AnyClient::Tlx(c) => c.session_key().map(|k| vec![*k.bytes()]).unwrap_or_default(),
            AnyClient::Noixe(c) => c
                .transport_keys()
                .map(|(k1, k2)| vec![*k1.bytes(), *k2.bytes()])
                .unwrap_or_default(),
        }
    }

    /// (tag, direction) log of every frame this client saw or sent. The
    /// TLS-style client records this for transparency checks.
    pub fn observed(&self) -> Vec<(Tag, Direction)> {
        match self {
            AnyClient::Tlx(c) => c.observed().to_vec(),
            AnyClient::Noixe(_) => Vec::new(),
        }
    }
}

pub enum AnyServer {
    Tlx(TlxServer),
    Noixe(NoixeServer),
}

impl AnyServer {
    /// Returns response flights, or the error plus an abort flight to emit.
    pub fn on_frame(&mut self, msg: &WireMessage) -> Result<Vec<Flight>, (String, Flight)> {
        match self {
            AnyServer::Tlx(s) => s.on_frame(msg).map_err(|(e, f)| (e.to_string(), f)),
            AnyServer::Noixe(s) => s.on_frame(msg).map_err(|(e, f)| (e.to_string(), f)),
        }
    }

    pub fn is_established(&self) -> bool {
        match self {
            AnyServer::Tlx(s) => s.is_established(),
            AnyServer::Noixe(s) => s.is_established(),
        }
    }

    pub fn record_channel(&self) -> Option<RecordChannel> {
        match self {
            AnyServer::Tlx(s) => Some(RecordChannel::symmetric(
                s.session_key()?.clone(),
                Direction::ServerToClient,
            )),
            AnyServer::Noixe(s) => {
                let (k1, k2) = s.transport_keys()?;
                Some(RecordChannel::asymmetric(
                    k2.clone(),
                    k1.clone(),
                    Direction::ServerToClient,
                ))
            }
        }
    }

    pub fn session_key_bytes(&self) -> Vec<[u8; 32]> {
        match self {
            AnyServer::Tlx(s) => s.session_key().map(|k| vec![*k.bytes()]).unwrap_or_default(),
            AnyServer::Noixe(s) => s
                .transport_keys()
                .map(|(k1, k2)| vec![*k1.bytes(), *k2.bytes()])
                .unwrap_or_default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Workload

/// What the client does once the channel is up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Workload {
    /// Establish and stop.
    HandshakeOnly,
    /// Send `bytes` upstream in family-sized blocks; the server echoes each
    /// record; verify the echo bit-exact; close.
    Echo { bytes: usize },
    /// Request `objects` objects of `object_bytes` each, sequentially, and
    /// verify every one.
    PageLoad { objects: u64, object_bytes: usize },
}

// ---------------------------------------------------------------------------
// Client node

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClientPhase {
    Handshaking,
    Transferring,
    AwaitClose,
    Done,
    Failed,
}

pub struct ClientNode {
    peer: usize,
    client: AnyClient,
    workload: Workload,
    workload_seed: u64,
    phase: ClientPhase,
    chan: Option<RecordChannel>,
    /// Echo: plaintext blocks awaiting their echo, in flight order.
    outstanding: VecDeque<Vec<u8>>,
    /// PageLoad: index of the object currently streaming in.
    current_object: u64,
    object_received: Vec<u8>,
    bytes_verified: usize,
    corrupt: bool,
    established_at_us: Option<u64>,
    finished_at_us: Option<u64>,
}

impl ClientNode {
    pub fn new(peer: usize, client: AnyClient, workload: Workload, workload_seed: u64) -> Self {
        ClientNode {
            peer,
            client,
            workload,
            workload_seed,
            phase: ClientPhase::Handshaking,
            chan: None,
            outstanding: VecDeque::new(),
            current_object: 0,
            object_received: Vec::new(),
            bytes_verified: 0,
            corrupt: false,
            established_at_us: None,
            finished_at_us: None,
        }
    }

    fn fail(&mut self) {
        self.phase = ClientPhase::Failed;
    }

    /// The underlying handshake finished (workload may still be running).
    pub fn established(&self) -> bool {
        self.client.is_established()
    }

    /// Workload ran to completion and verified.
    pub fn finished_ok(&self) -> bool {
        self.phase == ClientPhase::Done
    }

    fn on_established(&mut self, ctx: &mut Ctx) {
        self.established_at_us = Some(ctx.now_us());
        self.chan = self.client.record_channel();
        match self.workload {
            Workload::HandshakeOnly => {
                self.phase = ClientPhase::Done;
                self.finished_at_us = Some(ctx.now_us());
            }
            Workload::Echo { bytes } => {
                self.phase = ClientPhase::Transferring;
                let file = workload_bytes(self.workload_seed, bytes);
                let block = self.client.record_block();
                let chan = self.chan.as_mut().expect("established");
                for chunk in file.chunks(block.max(1)) {
                    self.outstanding.push_back(chunk.to_vec());
                    ctx.send(self.peer, vec![chan.seal(chunk)]);
                }
                if self.outstanding.is_empty() {
                    self.close(ctx);
                }
            }
            Workload::PageLoad { .. } => {
                self.phase = ClientPhase::Transferring;
                self.request_object(ctx, 0);
            }
        }
    }

    fn request_object(&mut self, ctx: &mut Ctx, index: u64) {
        self.current_object = index;
        self.object_received.clear();
        let chan = self.chan.as_mut().expect("established");
        ctx.send(self.peer, vec![chan.seal(&index.to_be_bytes())]);
    }

    fn close(&mut self, ctx: &mut Ctx) {
        ctx.send(self.peer, vec![WireMessage::new(Tag::AppClose, Vec::new())]);
        self.phase = ClientPhase::AwaitClose;
    }

    fn on_record(&mut self, ctx: &mut Ctx, msg: &WireMessage) {
        let Some(chan) = self.chan.as_mut() else {
            self.fail();
            return;
        };
        let Ok(plaintext) = chan.open(msg) else {
            self.corrupt = true;
            self.fail();
            return;
        };
        match self.workload {
            Workload::HandshakeOnly => self.fail(),
            Workload::Echo { .. } => match self.outstanding.pop_front() {
                Some(expected) if expected == plaintext => {
                    self.bytes_verified += plaintext.len();
                    if self.outstanding.is_empty() {
                        self.close(ctx);
                    }
                }
                _ => {
                    self.corrupt = true;
                    self.fail();
                }
            },
            Workload::PageLoad { objects, object_bytes } => {
                self.object_received.extend_from_slice(&plaintext);
                if self.object_received.len() < object_bytes {
                    return;
                }
                let expected =
                    object_payload(self.workload_seed, self.current_object, object_bytes);
                if self.object_received != expected {
                    self.corrupt = true;
                    self.fail();
                    return;
                }
                self.bytes_verified += expected.len();
                if self.current_object + 1 < objects {
                    self.request_object(ctx, self.current_object + 1);
                } else {
                    self.close(ctx);
                }
            }
        }
    }
}

impl SimNode for ClientNode {
    fn on_start(&mut self, ctx: &mut Ctx) {
        let first = self.client.start();
        ctx.send(self.peer, first);
    }

    fn on_flight(&mut self, ctx: &mut Ctx, _from: usize, flight: &Flight) {
        for msg in flight {
            match self.phase {
                ClientPhase::Failed | ClientPhase::Done => return,
                ClientPhase::Handshaking => {
                    let was_established = self.client.is_established();
                    match self.client.on_frame(msg) {
                        Ok(flights) => {
                            for f in flights {
                                ctx.send(self.peer, f);
                            }
                            if !was_established && self.client.is_established() {
                                self.on_established(ctx);
                            }
                        }
                        Err(_) => self.fail(),
                    }
                }
                ClientPhase::Transferring | ClientPhase::AwaitClose => match msg.tag {
                    Tag::Record => self.on_record(ctx, msg),
                    Tag::AppClose if self.phase == ClientPhase::AwaitClose => {
                        self.phase = ClientPhase::Done;
                        self.finished_at_us = Some(ctx.now_us());
                    }
                    Tag::Abort => self.fail(),
                    _ => self.fail(),
                },
            }
        }
    }

    fn is_settled(&self) -> bool {
        matches!(self.phase, ClientPhase::Done | ClientPhase::Failed)
    }

    fn outcome(&self) -> Outcome {
        let kind = match self.phase {
            ClientPhase::Done => OutcomeKind::Success,
            ClientPhase::Failed if self.corrupt => OutcomeKind::CorruptTransfer,
            ClientPhase::Failed => OutcomeKind::Aborted,
            _ => OutcomeKind::Deadlock,
        };
        Outcome {
            kind,
            bytes_transferred: self.bytes_verified,
            session_keys: self.client.session_key_bytes(),
            observed: self.client.observed(),
            phases: Vec::new(),
            granted_session: None,
            established_at_us: self.established_at_us,
            finished_at_us: self.finished_at_us,
        }
    }
}

// ---------------------------------------------------------------------------
// Server node (also serves as the split proxy when placed at the edge)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServerPhase {
    Serving,
    Done,
    Failed,
}

pub struct ServerNode {
    peer: usize,
    server: AnyServer,
    workload: Workload,
    workload_seed: u64,
    phase: ServerPhase,
    chan: Option<RecordChannel>,
    record_block: usize,
    bytes_served: usize,
    established_at_us: Option<u64>,
}

impl ServerNode {
    pub fn new(peer: usize, server: AnyServer, workload: Workload, workload_seed: u64) -> Self {
        let record_block = match &server {
            AnyServer::Tlx(_) => TLX_RECORD_BLOCK,
            AnyServer::Noixe(_) => NOISE_RECORD_BLOCK,
        };
        ServerNode {
            peer,
            server,
            workload,
            workload_seed,
            phase: ServerPhase::Serving,
            chan: None,
            record_block,
            bytes_served: 0,
            established_at_us: None,
        }
    }

    pub fn session_key_bytes(&self) -> Vec<[u8; 32]> {
        self.server.session_key_bytes()
    }

    fn on_record(&mut self, ctx: &mut Ctx, msg: &WireMessage, echo_flight: &mut Flight) {
        let _ = ctx;
        let Some(chan) = self.chan.as_mut() else {
            self.phase = ServerPhase::Failed;
            return;
        };
        match serve_record(
            chan,
            self.workload,
            self.workload_seed,
            self.record_block,
            msg,
            echo_flight,
        ) {
            Ok(n) => self.bytes_served += n,
            Err(_) => self.phase = ServerPhase::Failed,
        }
    }
}

/// Serve one incoming application record: echo it back, or — for a page-load
/// workload — treat it as an object request and stream the object in
/// record-sized chunks. Returns the number of payload bytes appended to
/// `responses`.
fn serve_record(
    chan: &mut RecordChannel,
    workload: Workload,
    workload_seed: u64,
    record_block: usize,
    msg: &WireMessage,
    responses: &mut Flight,
) -> Result<usize, ()> {
    let plaintext = chan.open(msg).map_err(|_| ())?;
    match workload {
        Workload::PageLoad { object_bytes, .. } => {
            let index_bytes = <[u8; 8]>::try_from(plaintext.as_slice()).map_err(|_| ())?;
            let object = object_payload(workload_seed, u64::from_be_bytes(index_bytes), object_bytes);
            let mut served = 0;
            for chunk in object.chunks(record_block) {
                responses.push(chan.seal(chunk));
                served += chunk.len();
            }
            Ok(served)
        }
        _ => {
            // Echo service: return every record as-is.
            responses.push(chan.seal(&plaintext));
            Ok(plaintext.len())
        }
    }
}

impl SimNode for ServerNode {
    fn on_flight(&mut self, ctx: &mut Ctx, _from: usize, flight: &Flight) {
        let mut responses: Flight = Vec::new();
        for msg in flight {
            if self.phase == ServerPhase::Failed {
                return;
            }
            match msg.tag {
                Tag::Record => self.on_record(ctx, msg, &mut responses),
                Tag::AppClose => {
                    responses.push(WireMessage::new(Tag::AppClose, Vec::new()));
                    self.phase = ServerPhase::Done;
                }
                _ => {
                    let was_established = self.server.is_established();
                    match self.server.on_frame(msg) {
                        Ok(flights) => {
                            if !responses.is_empty() {
                                ctx.send(self.peer, std::mem::take(&mut responses));
                            }
                            for f in flights {
                                ctx.send(self.peer, f);
                            }
                            if !was_established && self.server.is_established() {
                                self.established_at_us = Some(ctx.now_us());
                                self.chan = self.server.record_channel();
                            }
                        }
                        Err((_, abort_flight)) => {
                            self.phase = ServerPhase::Failed;
                            ctx.send(self.peer, abort_flight);
                            return;
                        }
                    }
                }
            }
        }
        if !responses.is_empty() {
            ctx.send(self.peer, responses);
        }
    }

    fn is_settled(&self) -> bool {
        // A serving endpoint is passive: it settles once the handshake is up
        // (or it failed); closure is the client's business.
        match self.phase {
            ServerPhase::Done | ServerPhase::Failed => true,
            ServerPhase::Serving => self.server.is_established(),
        }
    }

    fn outcome(&self) -> Outcome {
        let kind = match self.phase {
            ServerPhase::Done => OutcomeKind::Success,
            ServerPhase::Failed => OutcomeKind::Aborted,
            ServerPhase::Serving if self.server.is_established() => OutcomeKind::Success,
            ServerPhase::Serving => OutcomeKind::Deadlock,
        };
        Outcome {
            kind,
            bytes_transferred: self.bytes_served,
            session_keys: self.server.session_key_bytes(),
            observed: Vec::new(),
            phases: Vec::new(),
            granted_session: None,
            established_at_us: self.established_at_us,
            finished_at_us: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Edge node

pub struct EdgeNode {
    client_side: usize,
    server_side: usize,
    edge: SpxEdge,
    enclave: Arc<Enclave>,
    failed: Option<String>,
}

impl EdgeNode {
    pub fn new(client_side: usize, server_side: usize, edge: SpxEdge, enclave: Arc<Enclave>) -> Self {
        EdgeNode {
            client_side,
            server_side,
            edge,
            enclave,
            failed: None,
        }
    }

    pub fn enclave(&self) -> &Arc<Enclave> {
        &self.enclave
    }
}

impl SimNode for EdgeNode {
    fn on_flight(&mut self, ctx: &mut Ctx, from: usize, flight: &Flight) {
        if self.failed.is_some() {
            return;
        }
        let dir = if from == self.client_side {
            Direction::ClientToServer
        } else {
            Direction::ServerToClient
        };
        let mut to_client: Flight = Vec::new();
        let mut to_server: Flight = Vec::new();
        let mut reports: Vec<Flight> = Vec::new();
        for msg in flight {
            match self.edge.on_frame(dir, msg) {
                Ok(actions) => {
                    for action in actions {
                        match action {
                            EdgeAction::Relay(d, m) => match d {
                                Direction::ClientToServer => to_server.push(m),
                                Direction::ServerToClient => to_client.push(m),
                            },
                            EdgeAction::SendReport(m) => reports.push(vec![m]),
                        }
                    }
                }
                Err(e) => {
                    self.failed = Some(e.to_string());
                    break;
                }
            }
        }
        if !to_server.is_empty() {
            ctx.send(self.server_side, to_server);
        }
        if !to_client.is_empty() {
            ctx.send(self.client_side, to_client);
        }
        for report in reports {
            ctx.send(self.server_side, report);
        }
    }

    fn is_settled(&self) -> bool {
        use crate::engine::Phase;
        self.failed.is_some()
            || self.edge.is_passthrough()
            || matches!(self.edge.phase(), Phase::Established | Phase::Aborted)
    }

    fn outcome(&self) -> Outcome {
        use crate::engine::Phase;
        let kind = if self.edge.is_passthrough() {
            OutcomeKind::Success
        } else {
            match self.edge.phase() {
                Phase::Established => OutcomeKind::Success,
                Phase::Aborted => OutcomeKind::Aborted,
                _ if self.failed.is_some() => OutcomeKind::Aborted,
                _ => OutcomeKind::Deadlock,
            }
        };
        let mut session_keys = Vec::new();
        if let Some(id) = self.edge.session_id() {
            if let Ok(session) = self.enclave.session_get(&id) {
                session_keys.push(*session.session_key.bytes());
                if let Some(peer) = &session.peer_key {
                    session_keys.push(*peer.bytes());
                }
            }
        }
        Outcome {
            kind,
            bytes_transferred: 0,
            session_keys,
            observed: Vec::new(),
            phases: self
                .edge
                .phase_history()
                .iter()
                .map(|p| format!("{p:?}"))
                .collect(),
            granted_session: self.edge.session_id().map(|id| id.to_hex()),
            established_at_us: None,
            finished_at_us: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Serving edge node

/// Edge that serves the workload itself once the session keys have been
/// granted, instead of relaying application records upstream. The handshake
/// path is identical to [`EdgeNode`]; only post-establishment records from
/// the client are intercepted and answered locally.
pub struct ServingEdgeNode {
    relay: EdgeNode,
    workload: Workload,
    workload_seed: u64,
    chan: Option<RecordChannel>,
    record_block: usize,
    bytes_served: usize,
    failed: bool,
}

impl ServingEdgeNode {
    pub fn new(
        client_side: usize,
        server_side: usize,
        edge: SpxEdge,
        enclave: Arc<Enclave>,
        workload: Workload,
        workload_seed: u64,
    ) -> Self {
        ServingEdgeNode {
            relay: EdgeNode::new(client_side, server_side, edge, enclave),
            workload,
            workload_seed,
            chan: None,
            record_block: 0,
            bytes_served: 0,
            failed: false,
        }
    }

    pub fn bytes_served(&self) -> usize {
        self.bytes_served
    }

    /// Build (once) the server-side record channel from the granted session.
    fn ensure_channel(&mut self) -> bool {
        if self.chan.is_some() {
            return true;
        }
        let Some(id) = self.relay.edge.session_id() else {
            return false;
        };
        let Ok(session) = self.relay.enclave.session_get(&id) else {
            return false;
        };
        let (chan, block) = match session.protocol {
            ProtocolId::Tlx => (
                RecordChannel::symmetric(session.session_key.clone(), Direction::ServerToClient),
                TLX_RECORD_BLOCK,
            ),
            ProtocolId::Noixe(_) => {
                let Some(peer) = session.peer_key.clone() else {
                    return false;
                };
                (
                    RecordChannel::asymmetric(
                        peer,
                        session.session_key.clone(),
                        Direction::ServerToClient,
                    ),
                    NOISE_RECORD_BLOCK,
                )
            }
        };
        self.chan = Some(chan);
        self.record_block = block;
        true
    }
}

impl SimNode for ServingEdgeNode {
    fn on_flight(&mut self, ctx: &mut Ctx, from: usize, flight: &Flight) {
        use crate::engine::Phase;
        if self.failed {
            return;
        }
        let serve = self.relay.edge.phase() == Phase::Established
            && from == self.relay.client_side
            && flight
                .iter()
                .all(|m| matches!(m.tag, Tag::Record | Tag::AppClose));
        if !serve {
            self.relay.on_flight(ctx, from, flight);
            return;
        }
        let mut responses: Flight = Vec::new();
        for msg in flight {
            match msg.tag {
                Tag::Record => {
                    if !self.ensure_channel() {
                        self.failed = true;
                        return;
                    }
                    let workload = self.workload;
                    let seed = self.workload_seed;
                    let block = self.record_block;
                    let chan = self.chan.as_mut().expect("channel just built");
                    match serve_record(chan, workload, seed, block, msg, &mut responses) {
                        Ok(n) => self.bytes_served += n,
                        Err(()) => {
                            self.failed = true;
                            return;
                        }
                    }
                }
                _ => responses.push(WireMessage::new(Tag::AppClose, Vec::new())),
            }
        }
        if !responses.is_empty() {
            ctx.send(self.relay.client_side, responses);
        }
    }

    fn is_settled(&self) -> bool {
        self.failed || self.relay.is_settled()
    }

    fn outcome(&self) -> Outcome {
        let mut outcome = self.relay.outcome();
        if self.failed {
            outcome.kind = OutcomeKind::Aborted;
        }
        outcome.bytes_transferred = self.bytes_served;
        outcome
    }
}

/// Endpoint that takes no part in the run (the origin during split serving).
pub struct IdleNode;

impl SimNode for IdleNode {
    fn on_flight(&mut self, _: &mut Ctx, _: usize, _: &Flight) {}

    fn is_settled(&self) -> bool {
        true
    }

    fn outcome(&self) -> Outcome {
        Outcome {
            kind: OutcomeKind::Success,
            ..Outcome::default()
        }
    }
}
