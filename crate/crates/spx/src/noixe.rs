//! Noise-style handshake family.
//!
//! Five interactive patterns over X25519 + ChaCha20-Poly1305 + SHA-256, all
//! preceded by a prologue round in which the client announces the protocol
//! by name and the server confirms it (the attestation offer rides the
//! confirmation). Alongside the usual initiator/responder roles there is a
//! third, passive role — the handler — that replicates the symmetric state
//! from observed bytes alone, without ever holding a private key of either
//! party.
//!
//! Message convention: the handshake hash starts from the 32-byte ASCII
//! protocol name, the prologue bytes and any pre-shared responder static are
//! mixed in, and every handshake message is tokens followed by an
//! (optionally encrypted) payload, capped at 65535 bytes. Nonces are
//! big-endian frame counters. `split` hands out the initiator→responder key
//! first.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{self, KeyPair, PublicKey, SymmetricKey, TAG_LEN};
use crate::engine::{
    seal_grant, AdapterStep, AttestPolicy, EngineError, ProtocolAdapter, ProtocolId, SpxOffer,
};
use crate::see::{verify_report, Verdict};
use crate::wire::{Direction, Flight, Tag, WireMessage, EXT_SPX_OFFER, EXT_SPX_REQUEST};

/// Hard cap on one handshake or transport message.
pub const MAX_NOISE_MESSAGE: usize = 65535;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NoixeError {
    #[error("not this role's turn to send")]
    OutOfTurn,
    #[error("message authentication failed")]
    AuthFailure,
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("{0} key required by the pattern is missing")]
    MissingKey(&'static str),
    #[error("message exceeds the 65535-byte cap")]
    Oversized,
    #[error("handshake already finished")]
    Finished,
    #[error("remote static key does not match the configured pin")]
    StaticMismatch,
    #[error("unsupported or mismatched protocol name")]
    WrongProtocol,
    #[error("unexpected message {got:?}")]
    UnexpectedMessage { got: Tag },
    #[error("peer aborted the handshake")]
    Aborted,
}

// ---------------------------------------------------------------------------
// Patterns

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    serde::Serialize,
    serde::Deserialize,
)]
#[repr(u8)]
pub enum Pattern {
    Nn = 0,
    Nk = 1,
    Xk = 2,
    Xx = 3,
    Ik = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    E,
    S,
    Ee,
    Es,
    Se,
    Ss,
}

use Token::*;

impl Pattern {
    pub fn all() -> [Pattern; 5] {
        [Pattern::Nn, Pattern::Nk, Pattern::Xk, Pattern::Xx, Pattern::Ik]
    }

    pub fn from_byte(b: u8) -> Option<Pattern> {
        Some(match b {
            0 => Pattern::Nn,
            1 => Pattern::Nk,
            2 => Pattern::Xk,
            3 => Pattern::Xx,
            4 => Pattern::Ik,
            _ => return None,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Pattern::Nn => "NN",
            Pattern::Nk => "NK",
            Pattern::Xk => "XK",
            Pattern::Xx => "XX",
            Pattern::Ik => "IK",
        }
    }

    /// Full protocol name; exactly 32 bytes, so it doubles as the initial
    /// handshake hash.
    pub fn protocol_name(self) -> [u8; 32] {
        let mut name = [0u8; 32];
        name[..6].copy_from_slice(b"Noise_");
        name[6..8].copy_from_slice(self.label().as_bytes());
        name[8..].copy_from_slice(b"_25519_ChaChaPoly_SHA256");
        name
    }

    /// Token lists, one per handshake message, initiator first.
    pub fn messages(self) -> &'static [&'static [Token]] {
        match self {
            Pattern::Nn => &[&[E], &[E, Ee]],
            Pattern::Nk => &[&[E, Es], &[E, Ee]],
            Pattern::Xk => &[&[E, Es], &[E, Ee], &[S, Se]],
            Pattern::Xx => &[&[E], &[E, Ee, S, Es], &[S, Se]],
            Pattern::Ik => &[&[E, Es, S, Ss], &[E, Ee, Se]],
        }
    }

    /// Responder's static key is distributed out of band before the run.
    pub fn pre_shared_responder_static(self) -> bool {
        matches!(self, Pattern::Nk | Pattern::Xk | Pattern::Ik)
    }

    /// Initiator sends its static key during the handshake.
    pub fn initiator_sends_static(self) -> bool {
        matches!(self, Pattern::Xk | Pattern::Xx | Pattern::Ik)
    }

    /// Responder sends its static key during the handshake (instead of
    /// pre-sharing it).
    pub fn responder_sends_static(self) -> bool {
        matches!(self, Pattern::Xx)
    }

    /// True when the last handshake message travels server→client. Decides
    /// whether the grant can ride the final flight or needs its own.
    pub fn server_final(self) -> bool {
        self.messages().len() % 2 == 0
    }

    /// Handshake message index (1-based) after which the edge binds: the
    /// first flight that carried a DH token, except that the two-message
    /// patterns whose first DH sits in the *final* server flight bind one
    /// flight early — the report must reach the server before it composes
    /// that flight, or the grant could not ride along.
    pub fn bind_after_message(self) -> usize {
        let first_dh = self
            .messages()
            .iter()
            .position(|tokens| tokens.iter().any(|t| !matches!(t, E | S)))
            .expect("every pattern has a DH token")
            + 1;
        if self.server_final() {
            first_dh.min(self.messages().len() - 1)
        } else {
            first_dh
        }
    }
}

/// Prologue body: the protocol name for the announced pattern.
pub fn prologue_encode(pattern: Pattern) -> Vec<u8> {
    pattern.protocol_name().to_vec()
}

/// Recognize an announced protocol name.
pub fn prologue_detect(body: &[u8]) -> Option<Pattern> {
    Pattern::all()
        .into_iter()
        .find(|p| body == p.protocol_name())
}

// ---------------------------------------------------------------------------
// Symmetric machinery

struct CipherState {
    k: Option<SymmetricKey>,
    n: u64,
}

impl CipherState {
    fn encrypt(&mut self, ad: &[u8], pt: &[u8]) -> Vec<u8> {
        match &self.k {
            Some(k) => {
                let ct = crypto::aead_seal(k, &crypto::counter_nonce(self.n), ad, pt);
                self.n += 1;
                ct
            }
            None => pt.to_vec(),
        }
    }

    fn decrypt(&mut self, ad: &[u8], ct: &[u8]) -> Result<Vec<u8>, NoixeError> {
        match &self.k {
            Some(k) => {
                let pt = crypto::aead_open(k, &crypto::counter_nonce(self.n), ad, ct)
                    .map_err(|_| NoixeError::AuthFailure)?;
                self.n += 1;
                Ok(pt)
            }
            None => Ok(ct.to_vec()),
        }
    }

    fn has_key(&self) -> bool {
        self.k.is_some()
    }
}

struct SymmetricState {
    ck: [u8; 32],
    h: [u8; 32],
    cipher: CipherState,
}

impl SymmetricState {
    fn new(protocol_name: &[u8; 32]) -> Self {
        SymmetricState {
            ck: *protocol_name,
            h: *protocol_name,
            cipher: CipherState { k: None, n: 0 },
        }
    }

    fn mix_hash(&mut self, data: &[u8]) {
        let mut buf = Vec::with_capacity(32 + data.len());
        buf.extend_from_slice(&self.h);
        buf.extend_from_slice(data);
        self.h = crypto::hash(&buf);
    }

    fn mix_key(&mut self, ikm: &[u8]) {
        let out = crypto::hkdf(&self.ck, ikm, 2);
        self.ck = out[0];
        self.cipher = CipherState {
            k: Some(SymmetricKey::new(out[1])),
            n: 0,
        };
    }

    fn encrypt_and_hash(&mut self, pt: &[u8]) -> Vec<u8> {
        let h = self.h;
        let ct = self.cipher.encrypt(&h, pt);
        self.mix_hash(&ct);
        ct
    }

    fn decrypt_and_hash(&mut self, ct: &[u8]) -> Result<Vec<u8>, NoixeError> {
        let h = self.h;
        let pt = self.cipher.decrypt(&h, ct)?;
        self.mix_hash(ct);
        Ok(pt)
    }

    fn split(&self) -> (SymmetricKey, SymmetricKey) {
        let out = crypto::hkdf(&self.ck, b"", 2);
        (SymmetricKey::new(out[0]), SymmetricKey::new(out[1]))
    }
}

// ---------------------------------------------------------------------------
// Handshake state (initiator / responder)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

pub struct HandshakeState {
    pattern: Pattern,
    role: Role,
    sym: SymmetricState,
    s: Option<KeyPair>,
    e: KeyPair,
    rs: Option<PublicKey>,
    re: Option<PublicKey>,
    msg_index: usize,
}

impl HandshakeState {
    /// `static_kp` is required when the pattern has this side send `s`;
    /// `remote_static` is required on the initiator for pre-shared patterns.
    pub fn new<R: RngCore + CryptoRng>(
        rng: &mut R,
        pattern: Pattern,
        role: Role,
        prologue: &[u8],
        static_kp: Option<KeyPair>,
        remote_static: Option<PublicKey>,
    ) -> Result<Self, NoixeError> {
        let needs_static = match role {
            Role::Initiator => pattern.initiator_sends_static(),
            Role::Responder => {
                pattern.pre_shared_responder_static() || pattern.responder_sends_static()
            }
        };
        if needs_static && static_kp.is_none() {
            return Err(NoixeError::MissingKey("local static"));
        }
        if role == Role::Initiator && pattern.pre_shared_responder_static() && remote_static.is_none()
        {
            return Err(NoixeError::MissingKey("responder static"));
        }
        let mut sym = SymmetricState::new(&pattern.protocol_name());
        sym.mix_hash(prologue);
        if pattern.pre_shared_responder_static() {
            match role {
                Role::Initiator => sym.mix_hash(&remote_static.unwrap()),
                Role::Responder => sym.mix_hash(&static_kp.as_ref().unwrap().public()),
            }
        }
        Ok(HandshakeState {
            pattern,
            role,
            sym,
            s: static_kp,
            e: KeyPair::generate(rng),
            rs: remote_static,
            re: None,
            msg_index: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.msg_index == self.pattern.messages().len()
    }

    pub fn my_turn(&self) -> bool {
        !self.is_finished()
            && (self.msg_index % 2 == 0) == (self.role == Role::Initiator)
    }

    pub fn handshake_hash(&self) -> [u8; 32] {
        self.sym.h
    }

    /// Chaining key, exposed for replication checks.
    pub fn chaining_key(&self) -> [u8; 32] {
        self.sym.ck
    }

    /// Remote static learned in-band or configured up front.
    pub fn remote_static(&self) -> Option<PublicKey> {
        self.rs
    }

    /// Transport keys, initiator→responder first.
    pub fn split(&self) -> Result<(SymmetricKey, SymmetricKey), NoixeError> {
        if !self.is_finished() {
            return Err(NoixeError::OutOfTurn);
        }
        Ok(self.sym.split())
    }

    fn dh_for(&self, token: Token) -> Result<[u8; 32], NoixeError> {
        // es/se always mean (initiator e, responder s) / (initiator s,
        // responder e), no matter which side executes them.
        let initiator = self.role == Role::Initiator;
        let local_s = || self.s.as_ref().ok_or(NoixeError::MissingKey("local static"));
        let remote_s = || self.rs.ok_or(NoixeError::MissingKey("remote static"));
        let remote_e = || self.re.ok_or(NoixeError::MissingKey("remote ephemeral"));
        let result = match token {
            Ee => crypto::dh(&self.e, &remote_e()?),
            Ss => crypto::dh(local_s()?, &remote_s()?),
            Es if initiator => crypto::dh(&self.e, &remote_s()?),
            Es => crypto::dh(local_s()?, &remote_e()?),
            Se if initiator => crypto::dh(local_s()?, &remote_e()?),
            Se => crypto::dh(&self.e, &remote_s()?),
            E | S => unreachable!("not a DH token"),
        };
        result.map_err(|_| NoixeError::AuthFailure)
    }

    pub fn write_message(&mut self, payload: &[u8]) -> Result<Vec<u8>, NoixeError> {
        if self.is_finished() {
            return Err(NoixeError::Finished);
        }
        if !self.my_turn() {
            return Err(NoixeError::OutOfTurn);
        }
        let tokens = self.pattern.messages()[self.msg_index];
        let mut out = Vec::with_capacity(96 + payload.len());
        for token in tokens {
            match token {
                E => {
                    out.extend_from_slice(&self.e.public());
                    let pub_bytes = self.e.public();
                    self.sym.mix_hash(&pub_bytes);
                }
                S => {
                    let s_pub = self
                        .s
                        .as_ref()
                        .ok_or(NoixeError::MissingKey("local static"))?
                        .public();
                    let ct = self.sym.encrypt_and_hash(&s_pub);
                    out.extend_from_slice(&ct);
                }
                dh => {
                    let ikm = self.dh_for(*dh)?;
                    self.sym.mix_key(&ikm);
                }
            }
        }
        out.extend_from_slice(&self.sym.encrypt_and_hash(payload));
        if out.len() > MAX_NOISE_MESSAGE {
            return Err(NoixeError::Oversized);
        }
        self.msg_index += 1;
        Ok(out)
    }

    pub fn read_message(&mut self, message: &[u8]) -> Result<Vec<u8>, NoixeError> {
        if self.is_finished() {
            return Err(NoixeError::Finished);
        }
        if self.my_turn() {
            return Err(NoixeError::OutOfTurn);
        }
        if message.len() > MAX_NOISE_MESSAGE {
            return Err(NoixeError::Oversized);
        }
        let tokens = self.pattern.messages()[self.msg_index];
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], NoixeError> {
            if message.len() - at < n {
                return Err(NoixeError::Malformed("handshake message"));
            }
            let slice = &message[at..at + n];
            at += n;
            Ok(slice)
        };
        for token in tokens {
            match token {
                E => {
                    let bytes: PublicKey = take(32)?.try_into().unwrap();
                    self.re = Some(bytes);
                    self.sym.mix_hash(&bytes);
                }
                S => {
                    let len = if self.sym.cipher.has_key() { 32 + TAG_LEN } else { 32 };
                    let ct = take(len)?.to_vec();
                    let pt = self.sym.decrypt_and_hash(&ct)?;
                    let learned: PublicKey = pt
                        .as_slice()
                        .try_into()
                        .map_err(|_| NoixeError::Malformed("static key"))?;
                    if let Some(expected) = self.rs {
                        if expected != learned {
                            return Err(NoixeError::StaticMismatch);
                        }
                    }
                    self.rs = Some(learned);
                }
                dh => {
                    let ikm = self.dh_for(*dh)?;
                    self.sym.mix_key(&ikm);
                }
            }
        }
        let payload_ct = &message[at..];
        let payload = self.sym.decrypt_and_hash(payload_ct)?;
        self.msg_index += 1;
        Ok(payload)
    }
}

// ---------------------------------------------------------------------------
// Handler: passive replication from observed bytes

/// The edge's replication of the symmetric state. Holds no private keys, so
/// the handshake hash tracks the endpoints exactly while the chaining key is
/// exact only until the first DH output is mixed; after that the handler
/// keeps the last computable value and says so.
pub struct Handler {
    pattern: Pattern,
    sym: SymmetricState,
    ck_exact: bool,
    msg_index: usize,
}

impl Handler {
    /// `responder_static` must be supplied for patterns that pre-share it;
    /// it is public knowledge the edge is configured with.
    pub fn new(
        pattern: Pattern,
        prologue: &[u8],
        responder_static: Option<PublicKey>,
    ) -> Result<Self, NoixeError> {
        let mut sym = SymmetricState::new(&pattern.protocol_name());
        sym.mix_hash(prologue);
        if pattern.pre_shared_responder_static() {
            let rs = responder_static.ok_or(NoixeError::MissingKey("responder static"))?;
            sym.mix_hash(&rs);
        }
        Ok(Handler {
            pattern,
            sym,
            ck_exact: true,
            msg_index: 0,
        })
    }

    pub fn pattern(&self) -> Pattern {
        self.pattern
    }

    pub fn h(&self) -> [u8; 32] {
        self.sym.h
    }

    pub fn ck(&self) -> [u8; 32] {
        self.sym.ck
    }

    /// Whether [`ck`](Self::ck) still equals the endpoints' chaining key.
    pub fn ck_exact(&self) -> bool {
        self.ck_exact
    }

    pub fn message_index(&self) -> usize {
        self.msg_index
    }

    pub fn is_finished(&self) -> bool {
        self.msg_index == self.pattern.messages().len()
    }

    /// Direction the next handshake message must travel.
    pub fn expected_direction(&self) -> Direction {
        if self.msg_index % 2 == 0 {
            Direction::ClientToServer
        } else {
            Direction::ServerToClient
        }
    }

    /// Replicate one observed handshake message.
    pub fn absorb_message(&mut self, message: &[u8]) -> Result<(), NoixeError> {
        if self.is_finished() {
            return Err(NoixeError::Finished);
        }
        if message.len() > MAX_NOISE_MESSAGE {
            return Err(NoixeError::Oversized);
        }
        let tokens = self.pattern.messages()[self.msg_index];
        let mut at = 0usize;
        let mut has_key = self.sym.cipher.has_key();
        for token in tokens {
            match token {
                E => {
                    if message.len() - at < 32 {
                        return Err(NoixeError::Malformed("handshake message"));
                    }
                    let bytes = message[at..at + 32].to_vec();
                    at += 32;
                    self.sym.mix_hash(&bytes);
                }
                S => {
                    let len = if has_key { 32 + TAG_LEN } else { 32 };
                    if message.len() - at < len {
                        return Err(NoixeError::Malformed("handshake message"));
                    }
                    let bytes = message[at..at + len].to_vec();
                    at += len;
                    self.sym.mix_hash(&bytes);
                }
                _dh => {
                    // The DH output is not observable: the chaining key
                    // freezes here, the hash does not depend on it.
                    has_key = true;
                    self.ck_exact = false;
                    // Mark the cipher keyed so static-key lengths parse; the
                    // key value itself is unknowable and never used.
                    if !self.sym.cipher.has_key() {
                        self.sym.cipher.k = Some(SymmetricKey::new([0u8; 32]));
                    }
                }
            }
        }
        let payload = &message[at..];
        if has_key && payload.len() < TAG_LEN {
            return Err(NoixeError::Malformed("handshake payload"));
        }
        self.sym.mix_hash(payload);
        self.msg_index += 1;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Client (initiator)

pub struct NoixeClientConfig {
    pub pattern: Pattern,
    /// Initiator's static identity, for patterns that send `s`.
    pub static_kp: Option<KeyPair>,
    /// Responder's static key: required pre-knowledge for NK/XK/IK, an
    /// optional pin checked against the in-band static for XX.
    pub server_static: Option<PublicKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClientState {
    Start,
    WaitPrologueAck,
    Handshake,
    Established,
    Failed,
}

pub struct NoixeClient {
    hs: HandshakeState,
    pattern: Pattern,
    state: ClientState,
    transport: Option<(SymmetricKey, SymmetricKey)>,
}

impl NoixeClient {
    pub fn new<R: RngCore + CryptoRng>(
        rng: &mut R,
        config: NoixeClientConfig,
    ) -> Result<Self, NoixeError> {
        let prologue = prologue_encode(config.pattern);
        let rs = if config.pattern.pre_shared_responder_static() {
            Some(config.server_static.ok_or(NoixeError::MissingKey("responder static"))?)
        } else {
            config.server_static
        };
        Ok(NoixeClient {
            hs: HandshakeState::new(
                rng,
                config.pattern,
                Role::Initiator,
                &prologue,
                config.static_kp,
                rs,
            )?,
            pattern: config.pattern,
            state: ClientState::Start,
            transport: None,
        })
    }

    pub fn start(&mut self) -> Flight {
        assert_eq!(self.state, ClientState::Start);
        self.state = ClientState::WaitPrologueAck;
        vec![WireMessage::with_ext_zone(
            Tag::NoisePrologue,
            &prologue_encode(self.pattern),
        )]
    }

    pub fn is_established(&self) -> bool {
        self.state == ClientState::Established
    }

    /// (initiator→responder, responder→initiator) transport keys.
    pub fn transport_keys(&self) -> Option<&(SymmetricKey, SymmetricKey)> {
        self.transport.as_ref()
    }

    pub fn handshake_hash(&self) -> [u8; 32] {
        self.hs.handshake_hash()
    }

    fn fail(&mut self, err: NoixeError) -> NoixeError {
        self.state = ClientState::Failed;
        err
    }

    pub fn on_frame(&mut self, msg: &WireMessage) -> Result<Vec<Flight>, NoixeError> {
        if msg.tag == Tag::Abort {
            return Err(self.fail(NoixeError::Aborted));
        }
        match (self.state, msg.tag) {
            (ClientState::WaitPrologueAck, Tag::NoisePrologue) => {
                if msg.ext_body() != Some(&prologue_encode(self.pattern)[..]) {
                    return Err(self.fail(NoixeError::WrongProtocol));
                }
                self.state = ClientState::Handshake;
                let first = self.hs.write_message(&[]).map_err(|e| self.fail(e))?;
                Ok(vec![vec![WireMessage::new(Tag::NoiseHandshake, first)]])
            }
            (ClientState::Handshake, Tag::NoiseHandshake) => {
                self.hs.read_message(&msg.payload).map_err(|e| self.fail(e))?;
                let mut flights = Vec::new();
                if self.hs.is_finished() {
                    self.transport = Some(self.hs.split().expect("finished"));
                    self.state = ClientState::Established;
                } else if self.hs.my_turn() {
                    let next = self.hs.write_message(&[]).map_err(|e| self.fail(e))?;
                    flights.push(vec![WireMessage::new(Tag::NoiseHandshake, next)]);
                    if self.hs.is_finished() {
                        self.transport = Some(self.hs.split().expect("finished"));
                        self.state = ClientState::Established;
                    }
                }
                Ok(flights)
            }
            (_, got) => Err(self.fail(NoixeError::UnexpectedMessage { got })),
        }
    }
}

// ---------------------------------------------------------------------------
// Server (responder)

pub struct NoixeServerConfig {
    pub pattern: Pattern,
    /// Responder's static identity, for every pattern but NN.
    pub static_kp: Option<KeyPair>,
    /// Signs attestation offers; pinned at the edge.
    pub identity: crypto::SigningKeyPair,
    /// None: the server declines attestation requests.
    pub attest: Option<AttestPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServerState {
    WaitPrologue,
    Handshake,
    /// Server's final message (or standalone grant) gated on the report.
    WaitReport,
    Established,
    Failed,
}

pub struct NoixeServer {
    config: NoixeServerConfig,
    hs: HandshakeState,
    state: ServerState,
    grant_eph: Option<KeyPair>,
    nonce: [u8; 16],
    spx_requested: bool,
    attested_edge_eph: Option<PublicKey>,
    transport: Option<(SymmetricKey, SymmetricKey)>,
}

impl NoixeServer {
    pub fn new<R: RngCore + CryptoRng>(
        rng: &mut R,
        config: NoixeServerConfig,
    ) -> Result<Self, NoixeError> {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let grant_eph = Some(KeyPair::generate(rng));
        let prologue = prologue_encode(config.pattern);
        let hs = HandshakeState::new(
            rng,
            config.pattern,
            Role::Responder,
            &prologue,
            config.static_kp.as_ref().map(|k| KeyPair::from_private(k.private_bytes())),
            None,
        )?;
        Ok(NoixeServer {
            config,
            hs,
            state: ServerState::WaitPrologue,
            grant_eph,
            nonce,
            spx_requested: false,
            attested_edge_eph: None,
            transport: None,
        })
    }

    pub fn is_established(&self) -> bool {
        self.state == ServerState::Established
    }

    pub fn transport_keys(&self) -> Option<&(SymmetricKey, SymmetricKey)> {
        self.transport.as_ref()
    }

    pub fn handshake_hash(&self) -> [u8; 32] {
        self.hs.handshake_hash()
    }

    pub fn chaining_key(&self) -> [u8; 32] {
        self.hs.chaining_key()
    }

    pub fn identity_public(&self) -> PublicKey {
        self.config.identity.public()
    }

    fn fail(&mut self, err: NoixeError) -> (NoixeError, Flight) {
        self.state = ServerState::Failed;
        (err, vec![WireMessage::spx_internal(Tag::Abort, vec![])])
    }

    pub fn on_frame(&mut self, msg: &WireMessage) -> Result<Vec<Flight>, (NoixeError, Flight)> {
        if msg.tag == Tag::Abort {
            self.state = ServerState::Failed;
            return Err((NoixeError::Aborted, vec![]));
        }
        if msg.is_spx_internal() {
            return match msg.tag {
                Tag::SpxReport => self.on_report(msg),
                got => Err(self.fail(NoixeError::UnexpectedMessage { got })),
            };
        }
        match (self.state, msg.tag) {
            (ServerState::WaitPrologue, Tag::NoisePrologue) => {
                if msg.ext_body() != Some(&prologue_encode(self.config.pattern)[..]) {
                    return Err(self.fail(NoixeError::WrongProtocol));
                }
                self.spx_requested = msg.find_ext(EXT_SPX_REQUEST).is_some();
                let mut ack = WireMessage::with_ext_zone(
                    Tag::NoisePrologue,
                    &prologue_encode(self.config.pattern),
                );
                if self.spx_requested {
                    let offer = if self.config.attest.is_some() {
                        let eph = self.grant_eph.as_ref().expect("minted at construction");
                        SpxOffer::build(&self.config.identity, self.nonce, eph.public())
                    } else {
                        SpxOffer::not_capable()
                    };
                    ack = ack.with_ext(EXT_SPX_OFFER, &offer.encode());
                }
                self.state = ServerState::Handshake;
                Ok(vec![vec![ack]])
            }
            (ServerState::Handshake, Tag::NoiseHandshake) => {
                self.hs.read_message(&msg.payload).map_err(|e| self.fail(e))?;
                if self.hs.is_finished() {
                    // Client-final pattern: handshake done, the grant (if
                    // any) goes out on its own.
                    self.transport = Some(self.hs.split().expect("finished"));
                    return self.after_crypto_finished();
                }
                if !self.hs.my_turn() {
                    return Ok(vec![]);
                }
                let final_message = self.hs.msg_index + 1 == self.config.pattern.messages().len();
                if final_message && self.expects_grant() && self.attested_edge_eph.is_none() {
                    // Hold the grant-carrying flight until the edge binds.
                    self.state = ServerState::WaitReport;
                    return Ok(vec![]);
                }
                Ok(vec![self.write_next().map_err(|e| self.fail(e))?])
            }
            (_, got) => Err(self.fail(NoixeError::UnexpectedMessage { got })),
        }
    }

    fn expects_grant(&self) -> bool {
        self.spx_requested && self.config.attest.is_some()
    }

    /// Write the responder's next handshake message; appends the grant when
    /// this is the final message of a server-final pattern.
    fn write_next(&mut self) -> Result<Flight, NoixeError> {
        let message = self.hs.write_message(&[])?;
        let mut flight = Vec::with_capacity(2);
        if self.hs.is_finished() {
            self.transport = Some(self.hs.split().expect("finished"));
            if self.expects_grant() {
                flight.push(self.grant_frame());
            }
            self.state = ServerState::Established;
        }
        flight.push(WireMessage::new(Tag::NoiseHandshake, message));
        Ok(flight)
    }

    /// Handshake crypto is complete on a client-final pattern: grant (or
    /// finish outright when no attestation is in play).
    fn after_crypto_finished(&mut self) -> Result<Vec<Flight>, (NoixeError, Flight)> {
        if !self.expects_grant() {
            self.state = ServerState::Established;
            return Ok(vec![]);
        }
        if self.attested_edge_eph.is_none() {
            self.state = ServerState::WaitReport;
            return Ok(vec![]);
        }
        let grant = self.grant_frame();
        self.state = ServerState::Established;
        Ok(vec![vec![grant]])
    }

    fn grant_frame(&mut self) -> WireMessage {
        let policy = self.config.attest.as_ref().expect("grant requires a policy");
        let (k1, k2) = self.transport.as_ref().expect("split before granting");
        let mut material = Vec::with_capacity(64);
        material.extend_from_slice(k1.bytes());
        material.extend_from_slice(k2.bytes());
        let payload = seal_grant(
            self.grant_eph.as_ref().expect("minted at construction"),
            self.attested_edge_eph.as_ref().expect("grant follows attestation"),
            &self.nonce,
            ProtocolId::Noixe(self.config.pattern),
            &material,
            policy.grant_pad,
        )
        .expect("grant sealing with verified inputs");
        WireMessage::spx_internal(Tag::SpxGrant, payload)
    }

    fn on_report(&mut self, msg: &WireMessage) -> Result<Vec<Flight>, (NoixeError, Flight)> {
        let Some(policy) = &self.config.attest else {
            return Err(self.fail(NoixeError::UnexpectedMessage { got: msg.tag }));
        };
        if !self.spx_requested || self.attested_edge_eph.is_some() {
            return Err(self.fail(NoixeError::UnexpectedMessage { got: msg.tag }));
        }
        match verify_report(
            &msg.payload,
            &policy.expected_measurement,
            &self.nonce,
            &policy.platform_public,
        ) {
            Verdict::Accept => {
                let report = crate::see::AttestationReport::from_bytes(&msg.payload)
                    .expect("verified report parses");
                self.attested_edge_eph = Some(report.ephemeral_public);
                if self.state == ServerState::WaitReport {
                    if self.hs.is_finished() {
                        // Client-final pattern: emit the standalone grant.
                        let grant = self.grant_frame();
                        self.state = ServerState::Established;
                        return Ok(vec![vec![grant]]);
                    }
                    self.state = ServerState::Handshake;
                    return Ok(vec![self.write_next().map_err(|e| self.fail(e))?]);
                }
                Ok(vec![])
            }
            Verdict::Reject(_) => Err(self.fail(NoixeError::AuthFailure)),
        }
    }
}

// ---------------------------------------------------------------------------
// Edge adapter

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    ClientPrologue,
    PrologueAck,
    Handshake,
    Transport,
}

/// Replicates the pattern run for the generic engine via a [`Handler`].
pub struct NoixeAdapter {
    supported: Vec<Pattern>,
    /// Origin's static DH key, needed to replicate pre-shared pre-messages.
    server_static: Option<PublicKey>,
    expect: Expect,
    handler: Option<Handler>,
    pattern: Option<Pattern>,
}

impl NoixeAdapter {
    pub fn new(supported: Vec<Pattern>, server_static: Option<PublicKey>) -> Self {
        NoixeAdapter {
            supported,
            server_static,
            expect: Expect::ClientPrologue,
            handler: None,
            pattern: None,
        }
    }

    pub fn handler(&self) -> Option<&Handler> {
        self.handler.as_ref()
    }

    fn violation(msg: &str) -> EngineError {
        EngineError::ProtocolViolation(msg.to_string())
    }
}

impl ProtocolAdapter for NoixeAdapter {
    fn protocol(&self) -> ProtocolId {
        ProtocolId::Noixe(self.pattern.unwrap_or(Pattern::Xx))
    }

    fn is_initiation(&self, msg: &WireMessage) -> bool {
        msg.tag == Tag::NoisePrologue
            && msg
                .ext_body()
                .and_then(prologue_detect)
                .is_some_and(|p| self.supported.contains(&p))
    }

    fn absorb(&mut self, msg: &WireMessage, dir: Direction) -> Result<AdapterStep, EngineError> {
        use Direction::{ClientToServer as C2S, ServerToClient as S2C};
        let mut step = AdapterStep::default();
        match (self.expect, dir, msg.tag) {
            (Expect::ClientPrologue, C2S, Tag::NoisePrologue) => {
                let body = msg
                    .ext_body()
                    .ok_or_else(|| Self::violation("bad prologue"))?;
                let pattern =
                    prologue_detect(body).ok_or_else(|| Self::violation("unknown protocol"))?;
                if pattern.pre_shared_responder_static() && self.server_static.is_none() {
                    return Err(Self::violation("pattern needs the origin's static key"));
                }
                self.handler = Some(
                    Handler::new(pattern, body, self.server_static)
                        .map_err(|e| Self::violation(&e.to_string()))?,
                );
                self.pattern = Some(pattern);
                step.forward = Some(msg.with_ext(EXT_SPX_REQUEST, &[]));
                self.expect = Expect::PrologueAck;
            }
            (Expect::PrologueAck, S2C, Tag::NoisePrologue) => {
                if let Some(bytes) = msg.find_ext(EXT_SPX_OFFER) {
                    step.offer = Some(SpxOffer::decode(&bytes).ok_or(EngineError::AuthFailure)?);
                }
                step.forward = Some(msg.without_spx_exts());
                self.expect = Expect::Handshake;
            }
            (Expect::Handshake, _, Tag::NoiseHandshake) => {
                let handler = self.handler.as_mut().expect("set at prologue");
                if dir != handler.expected_direction() {
                    return Err(Self::violation("handshake message from the wrong side"));
                }
                handler
                    .absorb_message(&msg.payload)
                    .map_err(|e| Self::violation(&e.to_string()))?;
                step.forward = Some(msg.clone());
                let pattern = self.pattern.expect("set at prologue");
                if handler.message_index() == pattern.bind_after_message() {
                    step.bind_after_forward = true;
                }
                if handler.is_finished() {
                    step.handshake_complete = true;
                    self.expect = Expect::Transport;
                }
            }
            (Expect::Transport, _, Tag::Record | Tag::AppClose) => {
                step.forward = Some(msg.clone());
            }
            (_, _, got) => {
                return Err(Self::violation(&format!("unexpected {got:?}")));
            }
        }
        Ok(step)
    }
}
