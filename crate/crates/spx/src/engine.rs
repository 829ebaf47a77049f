//! Protocol-generic SPX engine.
//!
//! The edge-side state machine implements six operations, the same six for
//! every protocol family:
//!
//! * **detect** — recognize a handshake opening and piggyback the SPX request
//!   marker on it;
//! * **relay** — pass handshake traffic through unmodified (except for SPX
//!   piggybacks), replicating protocol state via a [`ProtocolAdapter`];
//! * **bind** — once the adapter says the bind point is reached, attest an
//!   enclave-minted ephemeral key against the server's challenge nonce and
//!   send the report;
//! * **forward** — strip SPX data from server messages so the client sees a
//!   vanilla handshake;
//! * **grant** — accept the server's session-key grant, decryptable only with
//!   the attested ephemeral key, and register the session in the enclave;
//! * **resume** — explicitly unsupported; the stub exists so callers get a
//!   typed answer instead of a protocol error.
//!
//! Phase order is enforced: Idle → Detected → Relaying → Bound → Granted →
//! Established, with Aborted reachable from anywhere. A grant is only
//! accepted in Bound, and only if it authenticates against the exact
//! (nonce, server ephemeral, edge ephemeral, protocol) tuple that was bound.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, KeyPair, PublicKey, SymmetricKey, NONCE_LEN, SIG_LEN};
use crate::noixe::Pattern;
use crate::see::{Enclave, Measurement, SeeError};
use crate::wire::{Direction, Tag, WireMessage};

/// Serialized SPX offer size; padded to match the attestation report so the
/// on-wire overhead formula stays exact.
pub const OFFER_LEN: usize = 512;
/// Default padded size of the grant frame payload.
pub const GRANT_PAD_DEFAULT: usize = 128;

const OFFER_CONTEXT: &[u8] = b"spx-offer-v1";
const GRANT_CONTEXT: &[u8] = b"spx-grant-v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    /// Bind point reached (or bind requested) without a server nonce.
    #[error("no server nonce recorded; cannot bind")]
    NoNonce,
    /// Grant or offer failed cryptographic verification.
    #[error("authentication failure")]
    AuthFailure,
    /// Relayed traffic broke the expected message sequence.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    /// Event arrived in a phase that cannot accept it.
    #[error("invalid phase {phase:?} for {event}")]
    InvalidPhase { phase: Phase, event: &'static str },
    /// Enclave refused an operation.
    #[error("enclave: {0}")]
    See(#[from] SeeError),
}

/// Lifecycle of one SPX-assisted connection at the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Detected,
    Relaying,
    Bound,
    Granted,
    Established,
    Aborted,
}

/// Which protocol family a connection speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProtocolId {
    Tlx,
    Noixe(Pattern),
}

impl ProtocolId {
    pub fn to_bytes(self) -> [u8; 2] {
        match self {
            ProtocolId::Tlx => [1, 0],
            ProtocolId::Noixe(p) => [2, p as u8],
        }
    }

    pub fn from_bytes(bytes: [u8; 2]) -> Option<Self> {
        match bytes {
            [1, 0] => Some(ProtocolId::Tlx),
            [2, p] => Pattern::from_byte(p).map(ProtocolId::Noixe),
            _ => None,
        }
    }
}

/// Identifier of a granted session, also the host-store file name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Display for SessionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Everything the edge needs to serve a granted session. Sealable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpxSession {
    pub session_id: SessionId,
    pub protocol: ProtocolId,
    /// Send/receive key (TLX: the single session key; NoiXe: the
    /// initiator→responder transport key).
    pub session_key: SymmetricKey,
    /// Second transport key for protocols that split per direction.
    pub peer_key: Option<SymmetricKey>,
    pub client_id: String,
    pub server_id: String,
    /// Reserved for resumption; always carried, never interpreted.
    pub resume_blob: Option<Vec<u8>>,
}

impl SpxSession {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128);
        out.extend_from_slice(&self.session_id.0);
        out.extend_from_slice(&self.protocol.to_bytes());
        out.push(self.session_key.algo().id());
        out.extend_from_slice(self.session_key.bytes());
        match &self.peer_key {
            Some(k) => {
                out.push(1);
                out.extend_from_slice(k.bytes());
            }
            None => out.push(0),
        }
        for id in [&self.client_id, &self.server_id] {
            let bytes = id.as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
            out.extend_from_slice(bytes);
        }
        match &self.resume_blob {
            Some(blob) => {
                out.push(1);
                out.extend_from_slice(&(blob.len() as u32).to_be_bytes());
                out.extend_from_slice(blob);
            }
            None => out.push(0),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Option<&[u8]> {
            if bytes.len() - *at < n {
                return None;
            }
            let slice = &bytes[*at..*at + n];
            *at += n;
            Some(slice)
        };
        let session_id = SessionId(take(&mut at, 16)?.try_into().ok()?);
        let protocol = ProtocolId::from_bytes(take(&mut at, 2)?.try_into().ok()?)?;
        let algo = crypto::AeadAlgo::from_id(take(&mut at, 1)?[0])?;
        debug_assert_eq!(algo, crypto::AeadAlgo::ChaCha20Poly1305);
        let session_key = SymmetricKey::new(take(&mut at, 32)?.try_into().ok()?);
        let peer_key = match take(&mut at, 1)?[0] {
            0 => None,
            1 => Some(SymmetricKey::new(take(&mut at, 32)?.try_into().ok()?)),
            _ => return None,
        };
        let mut ids = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = u16::from_be_bytes(take(&mut at, 2)?.try_into().ok()?) as usize;
            ids.push(String::from_utf8(take(&mut at, len)?.to_vec()).ok()?);
        }
        let server_id = ids.pop()?;
        let client_id = ids.pop()?;
        let resume_blob = match take(&mut at, 1)?[0] {
            0 => None,
            1 => {
                let len = u32::from_be_bytes(take(&mut at, 4)?.try_into().ok()?) as usize;
                Some(take(&mut at, len)?.to_vec())
            }
            _ => return None,
        };
        if at != bytes.len() {
            return None;
        }
        Some(SpxSession {
            session_id,
            protocol,
            session_key,
            peer_key,
            client_id,
            server_id,
            resume_blob,
        })
    }
}

/// Server's answer to the SPX request marker: a challenge nonce plus a signed
/// ephemeral key for the grant channel. Rides as an extension TLV inside the
/// server's existing hello/prologue response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpxOffer {
    pub status: OfferStatus,
    pub nonce: [u8; 16],
    pub server_eph: PublicKey,
    pub signature: [u8; SIG_LEN],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferStatus {
    Ok,
    NotCapable,
}

impl SpxOffer {
    /// Build and sign an offer with the server's identity key.
    pub fn build(
        identity: &crypto::SigningKeyPair,
        nonce: [u8; 16],
        server_eph: PublicKey,
    ) -> SpxOffer {
        let signature = crypto::sign(identity, &Self::signed_bytes(&nonce, &server_eph));
        SpxOffer {
            status: OfferStatus::Ok,
            nonce,
            server_eph,
            signature: signature.bytes,
        }
    }

    pub fn not_capable() -> SpxOffer {
        SpxOffer {
            status: OfferStatus::NotCapable,
            nonce: [0u8; 16],
            server_eph: [0u8; 32],
            signature: [0u8; SIG_LEN],
        }
    }

    fn signed_bytes(nonce: &[u8; 16], server_eph: &PublicKey) -> Vec<u8> {
        let mut buf = Vec::with_capacity(OFFER_CONTEXT.len() + 48);
        buf.extend_from_slice(OFFER_CONTEXT);
        buf.extend_from_slice(nonce);
        buf.extend_from_slice(server_eph);
        buf
    }

    pub fn verify(&self, identity_public: &PublicKey) -> bool {
        self.status == OfferStatus::Ok
            && crypto::verify(
                identity_public,
                &Self::signed_bytes(&self.nonce, &self.server_eph),
                &self.signature,
            )
    }

    /// Fixed 512-byte encoding: status ‖ nonce ‖ ephemeral ‖ signature ‖ padding.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(OFFER_LEN);
        out.push(match self.status {
            OfferStatus::Ok => 1,
            OfferStatus::NotCapable => 0,
        });
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.server_eph);
        out.extend_from_slice(&self.signature);
        out.resize(OFFER_LEN, 0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<SpxOffer> {
        if bytes.len() != OFFER_LEN {
            return None;
        }
        let status = match bytes[0] {
            0 => OfferStatus::NotCapable,
            1 => OfferStatus::Ok,
            _ => return None,
        };
        Some(SpxOffer {
            status,
            nonce: bytes[1..17].try_into().ok()?,
            server_eph: bytes[17..49].try_into().ok()?,
            signature: bytes[49..49 + SIG_LEN].try_into().ok()?,
        })
    }
}

/// Key the grant is sealed under: DH between the server's offer ephemeral and
/// the attested edge ephemeral, bound to the challenge nonce and both public
/// keys.
fn grant_key(
    dh_secret: &[u8; 32],
    nonce: &[u8; 16],
    server_eph: &PublicKey,
    edge_eph: &PublicKey,
) -> SymmetricKey {
    let mut info = Vec::with_capacity(GRANT_CONTEXT.len() + 16 + 64);
    info.extend_from_slice(GRANT_CONTEXT);
    info.extend_from_slice(nonce);
    info.extend_from_slice(server_eph);
    info.extend_from_slice(edge_eph);
    let mut ck = [0u8; 32];
    ck.copy_from_slice(dh_secret);
    SymmetricKey::new(crypto::hkdf(&ck, &info, 1)[0])
}

fn grant_aad(protocol: ProtocolId, nonce: &[u8; 16], server_eph: &PublicKey, edge_eph: &PublicKey) -> Vec<u8> {
    let mut aad = Vec::with_capacity(2 + 16 + 64);
    aad.extend_from_slice(&protocol.to_bytes());
    aad.extend_from_slice(nonce);
    aad.extend_from_slice(server_eph);
    aad.extend_from_slice(edge_eph);
    aad
}

/// Server side: seal session-key material to the attested edge ephemeral.
/// Returns the grant frame payload, zero-padded to `pad_to`.
pub fn seal_grant(
    server_eph: &KeyPair,
    edge_eph_public: &PublicKey,
    nonce: &[u8; 16],
    protocol: ProtocolId,
    key_material: &[u8],
    pad_to: usize,
) -> Result<Vec<u8>, EngineError> {
    let shared = crypto::dh(server_eph, edge_eph_public).map_err(|_| EngineError::AuthFailure)?;
    let key = grant_key(&shared, nonce, &server_eph.public(), edge_eph_public);
    let aead_nonce = [0u8; NONCE_LEN]; // key is single-use
    let ct = crypto::aead_seal(
        &key,
        &aead_nonce,
        &grant_aad(protocol, nonce, &server_eph.public(), edge_eph_public),
        key_material,
    );
    let mut payload = Vec::with_capacity(pad_to.max(32 + NONCE_LEN + 2 + ct.len()));
    payload.extend_from_slice(&server_eph.public());
    payload.extend_from_slice(&aead_nonce);
    payload.extend_from_slice(&(ct.len() as u16).to_be_bytes());
    payload.extend_from_slice(&ct);
    if payload.len() < pad_to {
        payload.resize(pad_to, 0);
    }
    Ok(payload)
}

/// Edge side: open a grant payload with the attested ephemeral key.
pub fn open_grant(
    edge_eph: &KeyPair,
    expected_server_eph: &PublicKey,
    nonce: &[u8; 16],
    protocol: ProtocolId,
    payload: &[u8],
) -> Result<Vec<u8>, EngineError> {
    if payload.len() < 32 + NONCE_LEN + 2 {
        return Err(EngineError::AuthFailure);
    }
    let server_eph: PublicKey = payload[..32].try_into().unwrap();
    if &server_eph != expected_server_eph {
        return Err(EngineError::AuthFailure);
    }
    let mut aead_nonce = [0u8; NONCE_LEN];
    aead_nonce.copy_from_slice(&payload[32..32 + NONCE_LEN]);
    let ct_len =
        u16::from_be_bytes(payload[32 + NONCE_LEN..32 + NONCE_LEN + 2].try_into().unwrap()) as usize;
    let ct_start = 32 + NONCE_LEN + 2;
    if payload.len() < ct_start + ct_len {
        return Err(EngineError::AuthFailure);
    }
    let ct = &payload[ct_start..ct_start + ct_len];
    if payload[ct_start + ct_len..].iter().any(|&b| b != 0) {
        return Err(EngineError::AuthFailure);
    }
    let shared = crypto::dh(edge_eph, &server_eph).map_err(|_| EngineError::AuthFailure)?;
    let key = grant_key(&shared, nonce, &server_eph, &edge_eph.public());
    crypto::aead_open(
        &key,
        &aead_nonce,
        &grant_aad(protocol, nonce, &server_eph, &edge_eph.public()),
        ct,
    )
    .map_err(|_| EngineError::AuthFailure)
}

/// What an adapter tells the engine to do after replicating one frame.
#[derive(Debug, Default)]
pub struct AdapterStep {
    /// Frame to relay onward (already stripped/normalized for its receiver).
    /// None = consume.
    pub forward: Option<WireMessage>,
    /// SPX offer extracted from this frame, if it carried one.
    pub offer: Option<SpxOffer>,
    /// Send the attestation report (as its own flight) after forwarding.
    pub bind_after_forward: bool,
    /// Client-visible handshake is complete once this frame is forwarded.
    pub handshake_complete: bool,
}

/// Protocol-specific knowledge the generic engine drives: expected message
/// sequence, state replication, SPX extension handling, and the bind point.
pub trait ProtocolAdapter: Send {
    fn protocol(&self) -> ProtocolId;
    /// Would this opening client frame start a handshake of this protocol?
    fn is_initiation(&self, msg: &WireMessage) -> bool;
    /// Validate sequence, replicate state, and describe the relay action.
    fn absorb(&mut self, msg: &WireMessage, dir: Direction) -> Result<AdapterStep, EngineError>;
}

/// Result of a resume attempt. There is exactly one variant on purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResumeOutcome {
    Unsupported,
}

/// Action the edge machine must carry out, in order.
#[derive(Debug)]
pub enum EdgeAction {
    /// Relay a frame onward in the given direction, same flight as its peers.
    Relay(Direction, WireMessage),
    /// Send the attestation report to the server as its own flight.
    SendReport(WireMessage),
}

/// Configuration for one SPX edge connection.
#[derive(Clone)]
pub struct EdgeConfig {
    /// Pinned server identity (certificate key / prologue signing key).
    pub server_identity: PublicKey,
    pub client_id: String,
    pub server_id: String,
    pub grant_pad: usize,
}

/// Server-side attestation settings: what a report must show before the
/// server grants session keys, and how large the sealed grant is padded.
#[derive(Clone)]
pub struct AttestPolicy {
    pub expected_measurement: Measurement,
    pub platform_public: PublicKey,
    pub grant_pad: usize,
}

/// Per-connection SPX edge state machine.
pub struct SpxEdge {
    adapter: Box<dyn ProtocolAdapter>,
    enclave: Arc<Enclave>,
    config: EdgeConfig,
    phase: Phase,
    history: Vec<Phase>,
    /// Enclave-minted ephemeral; erased once the session is established.
    ephemeral: Option<KeyPair>,
    offer: Option<SpxOffer>,
    session_id: Option<SessionId>,
    /// True when this connection is being relayed without SPX (unknown
    /// protocol or server not capable).
    passthrough: bool,
}

impl SpxEdge {
    pub fn new(adapter: Box<dyn ProtocolAdapter>, enclave: Arc<Enclave>, config: EdgeConfig) -> Self {
        SpxEdge {
            adapter,
            enclave,
            config,
            phase: Phase::Idle,
            history: vec![Phase::Idle],
            ephemeral: None,
            offer: None,
            session_id: None,
            passthrough: false,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Every phase this connection has been in, in order.
    pub fn phase_history(&self) -> &[Phase] {
        &self.history
    }

    pub fn session_id(&self) -> Option<SessionId> {
        self.session_id
    }

    pub fn is_passthrough(&self) -> bool {
        self.passthrough
    }

    /// True once the ephemeral private key has been erased.
    pub fn ephemeral_erased(&self) -> bool {
        self.ephemeral.is_none()
    }

    /// Public half of the bound ephemeral (test instrumentation).
    pub fn ephemeral_public(&self) -> Option<PublicKey> {
        self.ephemeral.as_ref().map(|k| k.public())
    }

    fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
        self.history.push(phase);
    }

    fn abort(&mut self, err: EngineError) -> EngineError {
        self.set_phase(Phase::Aborted);
        err
    }

    /// Resumption is not implemented; the stub reports that and changes nothing.
    pub fn resume(&mut self, _resume_blob: &[u8]) -> ResumeOutcome {
        ResumeOutcome::Unsupported
    }

    /// Feed one frame through the engine. Frames of the same incoming flight
    /// must be fed in order; the returned actions preserve flight grouping
    /// (Relay actions join the current outgoing flight, SendReport opens its
    /// own).
    pub fn on_frame(
        &mut self,
        dir: Direction,
        msg: &WireMessage,
    ) -> Result<Vec<EdgeAction>, EngineError> {
        if self.phase == Phase::Aborted {
            return Err(EngineError::InvalidPhase {
                phase: Phase::Aborted,
                event: "frame",
            });
        }
        if self.passthrough {
            return Ok(vec![EdgeAction::Relay(dir, msg.clone())]);
        }

        // SPX-internal frames are the engine's own business, never the adapter's.
        if msg.is_spx_internal() {
            return match msg.tag {
                Tag::SpxGrant if dir == Direction::ServerToClient => {
                    self.accept_grant(msg).map(|()| Vec::new())
                }
                Tag::Abort => {
                    self.set_phase(Phase::Aborted);
                    Ok(vec![EdgeAction::Relay(dir, msg.clone())])
                }
                _ => Err(self.abort(EngineError::ProtocolViolation(format!(
                    "unexpected SPX-internal frame {:?} from {:?}",
                    msg.tag, dir
                )))),
            };
        }

        match self.phase {
            Phase::Idle => {
                if dir != Direction::ClientToServer || !self.adapter.is_initiation(msg) {
                    // Not a handshake this engine speaks: relay blindly.
                    self.passthrough = true;
                    return Ok(vec![EdgeAction::Relay(dir, msg.clone())]);
                }
                self.set_phase(Phase::Detected);
                // The adapter returns the initiation frame with the SPX
                // request extension already embedded for the server.
                let step = self.adapter.absorb(msg, dir).map_err(|e| self.abort(e))?;
                self.set_phase(Phase::Relaying);
                let forward = step.forward.expect("initiation frame must be forwarded");
                Ok(vec![EdgeAction::Relay(dir, forward)])
            }
            Phase::Relaying | Phase::Bound | Phase::Granted | Phase::Established => {
                let step = self.adapter.absorb(msg, dir).map_err(|e| self.abort(e))?;
                let mut actions = Vec::with_capacity(2);
                if let Some(offer) = step.offer {
                    self.take_offer(offer)?;
                }
                if let Some(forward) = step.forward {
                    actions.push(EdgeAction::Relay(dir, forward));
                }
                if step.bind_after_forward && self.phase == Phase::Relaying {
                    if let Some(report) = self.bind()? {
                        actions.push(EdgeAction::SendReport(report));
                    }
                }
                Ok(actions)
            }
            Phase::Detected | Phase::Aborted => Err(self.abort(EngineError::InvalidPhase {
                phase: self.phase,
                event: "frame",
            })),
        }
    }

    fn take_offer(&mut self, offer: SpxOffer) -> Result<(), EngineError> {
        if offer.status == OfferStatus::NotCapable {
            // Server declined: keep relaying vanilla, no SPX internals.
            self.passthrough = true;
            return Ok(());
        }
        if !offer.verify(&self.config.server_identity) {
            return Err(self.abort(EngineError::AuthFailure));
        }
        // Mint the ephemeral now, while the handshake is still in flight.
        self.ephemeral = Some(self.enclave.gen_ephemeral());
        self.offer = Some(offer);
        Ok(())
    }

    /// Produce the attestation report for the recorded offer. Public so the
    /// bind operation can be exercised directly; `on_frame` calls it at the
    /// adapter's bind point. Returns None when the server never offered
    /// (vanilla server): the connection continues as a plain relay.
    pub fn bind(&mut self) -> Result<Option<WireMessage>, EngineError> {
        if self.passthrough || (self.offer.is_none() && self.phase == Phase::Relaying) {
            // No offer arrived by the bind point: degrade to plain relay.
            self.passthrough = true;
            return Ok(None);
        }
        let Some(offer) = &self.offer else {
            return Err(EngineError::NoNonce);
        };
        let eph = self
            .ephemeral
            .as_ref()
            .expect("ephemeral minted when the offer was recorded");
        let report = self
            .enclave
            .attest(&eph.public(), &offer.nonce)
            .map_err(EngineError::See)?;
        self.set_phase(Phase::Bound);
        Ok(Some(WireMessage::spx_internal(
            Tag::SpxReport,
            report.to_bytes(),
        )))
    }

    fn accept_grant(&mut self, msg: &WireMessage) -> Result<(), EngineError> {
        if self.phase != Phase::Bound {
            return Err(self.abort(EngineError::InvalidPhase {
                phase: self.phase,
                event: "grant",
            }));
        }
        let offer = self.offer.as_ref().expect("bound phase implies an offer");
        let eph = self.ephemeral.as_ref().expect("bound phase implies an ephemeral");
        let protocol = self.adapter.protocol();
        let material = open_grant(eph, &offer.server_eph, &offer.nonce, protocol, &msg.payload)
            .map_err(|e| {
                self.set_phase(Phase::Aborted);
                e
            })?;
        let (session_key, peer_key) = match (protocol, material.len()) {
            (ProtocolId::Tlx, 32) => {
                (SymmetricKey::new(material[..32].try_into().unwrap()), None)
            }
            (ProtocolId::Noixe(_), 64) => (
                SymmetricKey::new(material[..32].try_into().unwrap()),
                Some(SymmetricKey::new(material[32..].try_into().unwrap())),
            ),
            _ => return Err(self.abort(EngineError::AuthFailure)),
        };
        self.set_phase(Phase::Granted);
        let session = SpxSession {
            session_id: self.enclave.fresh_session_id(),
            protocol,
            session_key,
            peer_key,
            client_id: self.config.client_id.clone(),
            server_id: self.config.server_id.clone(),
            resume_blob: None,
        };
        let id = session.session_id;
        self.enclave.session_put(session).map_err(EngineError::See)?;
        self.session_id = Some(id);
        // Serving key is registered; the ephemeral has done its job.
        self.ephemeral = None;
        self.set_phase(Phase::Established);
        Ok(())
    }
}
