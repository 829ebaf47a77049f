//! TLS-style handshake family.
//!
//! The client is deliberately plain: it speaks the vanilla protocol and has
//! no code path for edge piggybacks. The server understands the attestation
//! request/offer extensions and issues grants; the edge adapter replicates
//! handshake state for the generic engine.
//!
//! Handshake shape (one frame per line, grouped into flights):
//!
//! ```text
//! client                          server
//!   ClientHello            →
//!                          ←      ServerHello            (offer ext rides here)
//!                          ←      Certificate, ServerKeyExchange, ServerHelloDone
//!   ClientKeyExchange,
//!   ChangeCipherSpec,
//!   Finished               →
//!                                 (edge report arrives as its own flight)
//!                          ←      [grant,] ChangeCipherSpec, Finished
//! ```
//!
//! Key schedule: `master = hkdf(dh_secret, client_random ‖ server_random)`;
//! the session key is the master secret itself, used by both directions of
//! the record layer. Finished data is `hkdf(master, label ‖ transcript)` over
//! the running transcript, which never includes ChangeCipherSpec frames,
//! SPX-internal frames, or SPX extension bytes.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{self, KeyPair, PublicKey, SigningKeyPair, SymmetricKey, SIG_LEN};
use crate::engine::{
    seal_grant, AdapterStep, AttestPolicy, EngineError, ProtocolAdapter, ProtocolId, SpxOffer,
};
use crate::see::{verify_report, Verdict};
use crate::wire::{Direction, Flight, Tag, Transcript, WireMessage, EXT_SPX_OFFER, EXT_SPX_REQUEST};

/// The one cipher suite this family negotiates.
pub const SUITE_X25519_CHACHA: u8 = 0x01;
/// Padded certificate size.
pub const DEFAULT_CERT_LEN: usize = 3072;
/// Default padded grant payload size.
pub const DEFAULT_GRANT_PAD: usize = crate::engine::GRANT_PAD_DEFAULT;

const CERT_CONTEXT: &[u8] = b"tlx-cert-v1";
const SKX_CONTEXT: &[u8] = b"tlx-skx-v1";
const FINISHED_CLIENT: &[u8] = b"tlx client finished";
const FINISHED_SERVER: &[u8] = b"tlx server finished";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TlxError {
    #[error("certificate key does not match the configured pin")]
    CertMismatch,
    #[error("finished verification failed")]
    FinishedMismatch,
    #[error("signature verification failed")]
    BadSignature,
    #[error("no common cipher suite")]
    WrongSuite,
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("unexpected message {got:?}, expected {expected}")]
    UnexpectedMessage { expected: &'static str, got: Tag },
    #[error("peer aborted the handshake")]
    Aborted,
    #[error("key agreement failed")]
    KeyAgreement,
}

// ---------------------------------------------------------------------------
// Certificate

/// Serialize a self-signed certificate, zero-padded to `cert_len`:
/// subject length (u16) ‖ subject ‖ public key ‖ signature ‖ padding.
pub fn build_certificate(identity: &SigningKeyPair, subject: &str, cert_len: usize) -> Vec<u8> {
    let subject = subject.as_bytes();
    assert!(subject.len() <= u16::MAX as usize);
    let mut signed = Vec::with_capacity(CERT_CONTEXT.len() + subject.len() + 32);
    signed.extend_from_slice(CERT_CONTEXT);
    signed.extend_from_slice(subject);
    signed.extend_from_slice(&identity.public());
    let sig = crypto::sign(identity, &signed);

    let mut out = Vec::with_capacity(cert_len.max(2 + subject.len() + 32 + SIG_LEN));
    out.extend_from_slice(&(subject.len() as u16).to_be_bytes());
    out.extend_from_slice(subject);
    out.extend_from_slice(&identity.public());
    out.extend_from_slice(&sig.bytes);
    if out.len() < cert_len {
        out.resize(cert_len, 0);
    }
    out
}

/// Parse and self-verify a certificate; returns (subject, public key).
pub fn parse_certificate(bytes: &[u8]) -> Result<(String, PublicKey), TlxError> {
    if bytes.len() < 2 {
        return Err(TlxError::Malformed("certificate"));
    }
    let subject_len = u16::from_be_bytes(bytes[..2].try_into().unwrap()) as usize;
    let need = 2 + subject_len + 32 + SIG_LEN;
    if bytes.len() < need {
        return Err(TlxError::Malformed("certificate"));
    }
    let subject = std::str::from_utf8(&bytes[2..2 + subject_len])
        .map_err(|_| TlxError::Malformed("certificate subject"))?
        .to_string();
    let public_key: PublicKey = bytes[2 + subject_len..2 + subject_len + 32]
        .try_into()
        .unwrap();
    let sig: [u8; SIG_LEN] = bytes[2 + subject_len + 32..need].try_into().unwrap();
    if bytes[need..].iter().any(|&b| b != 0) {
        return Err(TlxError::Malformed("certificate padding"));
    }
    let mut signed = Vec::with_capacity(CERT_CONTEXT.len() + subject_len + 32);
    signed.extend_from_slice(CERT_CONTEXT);
    signed.extend_from_slice(subject.as_bytes());
    signed.extend_from_slice(&public_key);
    if !crypto::verify(&public_key, &signed, &sig) {
        return Err(TlxError::BadSignature);
    }
    Ok((subject, public_key))
}

fn skx_signed_bytes(client_random: &[u8; 32], server_random: &[u8; 32], dh_pub: &PublicKey) -> Vec<u8> {
    let mut buf = Vec::with_capacity(SKX_CONTEXT.len() + 96);
    buf.extend_from_slice(SKX_CONTEXT);
    buf.extend_from_slice(client_random);
    buf.extend_from_slice(server_random);
    buf.extend_from_slice(dh_pub);
    buf
}

fn derive_master(dh_secret: &[u8; 32], client_random: &[u8; 32], server_random: &[u8; 32]) -> SymmetricKey {
    let mut randoms = Vec::with_capacity(64);
    randoms.extend_from_slice(client_random);
    randoms.extend_from_slice(server_random);
    SymmetricKey::new(crypto::hkdf(dh_secret, &randoms, 1)[0])
}

fn finished_data(master: &SymmetricKey, label: &[u8], transcript_digest: &[u8; 32]) -> [u8; 32] {
    let mut input = Vec::with_capacity(label.len() + 32);
    input.extend_from_slice(label);
    input.extend_from_slice(transcript_digest);
    let mut key = [0u8; 32];
    key.copy_from_slice(master.bytes());
    crypto::hkdf(&key, &input, 1)[0]
}

// ---------------------------------------------------------------------------
// Client

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClientState {
    Start,
    WaitServerHello,
    WaitCertificate,
    WaitServerKex,
    WaitServerHelloDone,
    WaitServerCcs,
    WaitServerFinished,
    Established,
    Failed,
}

/// Vanilla protocol client. Knows nothing about edges or attestation.
pub struct TlxClient {
    pinned_server_key: Option<PublicKey>,
    state: ClientState,
    transcript: Transcript,
    client_random: [u8; 32],
    server_random: [u8; 32],
    eph: KeyPair,
    server_sig_key: Option<PublicKey>,
    master: Option<SymmetricKey>,
    observed: Vec<(Tag, Direction)>,
}

impl TlxClient {
    /// `pin`: expected server certificate key; None disables pinning.
    pub fn new<R: RngCore + CryptoRng>(rng: &mut R, pin: Option<PublicKey>) -> Self {
        let mut client_random = [0u8; 32];
        rng.fill_bytes(&mut client_random);
        TlxClient {
            pinned_server_key: pin,
            state: ClientState::Start,
            transcript: Transcript::new(),
            client_random,
            server_random: [0u8; 32],
            eph: KeyPair::generate(rng),
            server_sig_key: None,
            master: None,
            observed: Vec::new(),
        }
    }

    /// Opening flight.
    pub fn start(&mut self) -> Flight {
        assert_eq!(self.state, ClientState::Start);
        let mut body = Vec::with_capacity(34);
        body.extend_from_slice(&self.client_random);
        body.push(1); // number of offered suites
        body.push(SUITE_X25519_CHACHA);
        let hello = WireMessage::with_ext_zone(Tag::TlxClientHello, &body);
        self.transcript.absorb(&hello);
        self.note(&hello, Direction::ClientToServer);
        self.state = ClientState::WaitServerHello;
        vec![hello]
    }

    pub fn is_established(&self) -> bool {
        self.state == ClientState::Established
    }

    pub fn session_key(&self) -> Option<&SymmetricKey> {
        if self.state == ClientState::Established {
            self.master.as_ref()
        } else {
            None
        }
    }

    /// Every handshake frame this client sent or received, in order — the
    /// client's view of the conversation.
    pub fn observed(&self) -> &[(Tag, Direction)] {
        &self.observed
    }

    fn note(&mut self, msg: &WireMessage, dir: Direction) {
        self.observed.push((msg.tag, dir));
    }

    fn fail(&mut self, err: TlxError) -> TlxError {
        self.state = ClientState::Failed;
        err
    }

    /// Feed one received frame; returns flights to send in response.
    pub fn on_frame(&mut self, msg: &WireMessage) -> Result<Vec<Flight>, TlxError> {
        self.note(msg, Direction::ServerToClient);
        if msg.tag == Tag::Abort {
            return Err(self.fail(TlxError::Aborted));
        }
        match (self.state, msg.tag) {
            (ClientState::WaitServerHello, Tag::TlxServerHello) => {
                let body = msg
                    .ext_body()
                    .ok_or_else(|| TlxError::Malformed("server hello"))
                    .map_err(|e| self.fail(e))?;
                if body.len() != 33 {
                    return Err(self.fail(TlxError::Malformed("server hello")));
                }
                self.server_random.copy_from_slice(&body[..32]);
                if body[32] != SUITE_X25519_CHACHA {
                    return Err(self.fail(TlxError::WrongSuite));
                }
                self.transcript.absorb(msg);
                self.state = ClientState::WaitCertificate;
                Ok(vec![])
            }
            (ClientState::WaitCertificate, Tag::TlxCertificate) => {
                let (_subject, key) = parse_certificate(&msg.payload).map_err(|e| self.fail(e))?;
                if let Some(pin) = &self.pinned_server_key {
                    if &key != pin {
                        return Err(self.fail(TlxError::CertMismatch));
                    }
                }
                self.server_sig_key = Some(key);
                self.transcript.absorb(msg);
                self.state = ClientState::WaitServerKex;
                Ok(vec![])
            }
            (ClientState::WaitServerKex, Tag::TlxServerKeyExchange) => {
                if msg.payload.len() != 32 + SIG_LEN {
                    return Err(self.fail(TlxError::Malformed("server key exchange")));
                }
                let dh_pub: PublicKey = msg.payload[..32].try_into().unwrap();
                let sig: [u8; SIG_LEN] = msg.payload[32..].try_into().unwrap();
                let signer = self.server_sig_key.expect("certificate precedes key exchange");
                let signed = skx_signed_bytes(&self.client_random, &self.server_random, &dh_pub);
                if !crypto::verify(&signer, &signed, &sig) {
                    return Err(self.fail(TlxError::BadSignature));
                }
                let dh_secret =
                    crypto::dh(&self.eph, &dh_pub).map_err(|_| self.fail(TlxError::KeyAgreement))?;
                self.master = Some(derive_master(
                    &dh_secret,
                    &self.client_random,
                    &self.server_random,
                ));
                self.transcript.absorb(msg);
                self.state = ClientState::WaitServerHelloDone;
                Ok(vec![])
            }
            (ClientState::WaitServerHelloDone, Tag::TlxServerHelloDone) => {
                self.transcript.absorb(msg);
                // Respond with the full key-exchange flight.
                let kex = WireMessage::new(Tag::TlxClientKeyExchange, self.eph.public().to_vec());
                self.transcript.absorb(&kex);
                let ccs = WireMessage::new(Tag::TlxChangeCipherSpec, vec![]);
                let master = self.master.as_ref().expect("master set with key exchange");
                let verify =
                    finished_data(master, FINISHED_CLIENT, &self.transcript.digest());
                let finished = WireMessage::new(Tag::TlxFinished, verify.to_vec());
                self.transcript.absorb(&finished);
                for m in [&kex, &ccs, &finished] {
                    self.note(m, Direction::ClientToServer);
                }
                self.state = ClientState::WaitServerCcs;
                Ok(vec![vec![kex, ccs, finished]])
            }
            (ClientState::WaitServerCcs, Tag::TlxChangeCipherSpec) => {
                self.state = ClientState::WaitServerFinished;
                Ok(vec![])
            }
            (ClientState::WaitServerFinished, Tag::TlxFinished) => {
                let master = self.master.as_ref().expect("master set with key exchange");
                let expected =
                    finished_data(master, FINISHED_SERVER, &self.transcript.digest());
                if msg.payload != expected {
                    return Err(self.fail(TlxError::FinishedMismatch));
                }
                self.transcript.absorb(msg);
                self.state = ClientState::Established;
                Ok(vec![])
            }
            (_, got) => {
                let expected = match self.state {
                    ClientState::WaitServerHello => "server hello",
                    ClientState::WaitCertificate => "certificate",
                    ClientState::WaitServerKex => "server key exchange",
                    ClientState::WaitServerHelloDone => "server hello done",
                    ClientState::WaitServerCcs => "change cipher spec",
                    ClientState::WaitServerFinished => "finished",
                    _ => "nothing",
                };
                Err(self.fail(TlxError::UnexpectedMessage { expected, got }))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Server

pub struct TlxServerConfig {
    pub identity: SigningKeyPair,
    pub subject: String,
    pub cert_len: usize,
    /// None: the server declines attestation requests ("not capable").
    pub attest: Option<AttestPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServerState {
    WaitClientHello,
    WaitClientKex,
    WaitClientCcs,
    WaitClientFinished,
    /// Handshake done on the client side; final flight gated on the report.
    WaitReport,
    Established,
    Failed,
}

/// Extension-capable server: answers attestation requests with an offer,
/// verifies the edge's report, and grants the session key alongside its
/// final flight.
pub struct TlxServer {
    config: TlxServerConfig,
    state: ServerState,
    transcript: Transcript,
    client_random: [u8; 32],
    server_random: [u8; 32],
    dh: KeyPair,
    /// Ephemeral for the grant channel, minted when an offer is issued.
    grant_eph: Option<KeyPair>,
    nonce: [u8; 16],
    spx_requested: bool,
    attested_edge_eph: Option<PublicKey>,
    master: Option<SymmetricKey>,
}

impl TlxServer {
    pub fn new<R: RngCore + CryptoRng>(rng: &mut R, config: TlxServerConfig) -> Self {
        let mut server_random = [0u8; 32];
        rng.fill_bytes(&mut server_random);
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        TlxServer {
            config,
            state: ServerState::WaitClientHello,
            transcript: Transcript::new(),
            client_random: [0u8; 32],
            server_random,
            dh: KeyPair::generate(rng),
            grant_eph: Some(KeyPair::generate(rng)),
            nonce,
            spx_requested: false,
            attested_edge_eph: None,
            master: None,
        }
    }

    pub fn is_established(&self) -> bool {
        self.state == ServerState::Established
    }

    pub fn session_key(&self) -> Option<&SymmetricKey> {
        if self.state == ServerState::Established {
            self.master.as_ref()
        } else {
            None
        }
    }

    /// Identity key the offer and key exchange are signed with.
    pub fn identity_public(&self) -> PublicKey {
        self.config.identity.public()
    }

    fn fail(&mut self, err: TlxError) -> (TlxError, Flight) {
        self.state = ServerState::Failed;
        (err, vec![WireMessage::spx_internal(Tag::Abort, vec![])])
    }

    /// Feed one received frame; returns flights to send. On error the caller
    /// should transmit the accompanying abort flight and drop the connection.
    pub fn on_frame(&mut self, msg: &WireMessage) -> Result<Vec<Flight>, (TlxError, Flight)> {
        if msg.tag == Tag::Abort {
            self.state = ServerState::Failed;
            return Err((TlxError::Aborted, vec![]));
        }
        if msg.is_spx_internal() {
            return match msg.tag {
                Tag::SpxReport => self.on_report(msg),
                _ => Err(self.fail(TlxError::UnexpectedMessage {
                    expected: "attestation report",
                    got: msg.tag,
                })),
            };
        }
        match (self.state, msg.tag) {
            (ServerState::WaitClientHello, Tag::TlxClientHello) => {
                let Some(body) = msg.ext_body() else {
                    return Err(self.fail(TlxError::Malformed("client hello")));
                };
                if body.len() < 33 || body.len() != 33 + body[32] as usize {
                    return Err(self.fail(TlxError::Malformed("client hello")));
                }
                self.client_random.copy_from_slice(&body[..32]);
                if !body[33..].contains(&SUITE_X25519_CHACHA) {
                    return Err(self.fail(TlxError::WrongSuite));
                }
                self.spx_requested = msg.find_ext(EXT_SPX_REQUEST).is_some();
                self.transcript.absorb(msg);

                // Server hello, with the attestation offer riding along when
                // requested and supported.
                let mut sh_body = Vec::with_capacity(33);
                sh_body.extend_from_slice(&self.server_random);
                sh_body.push(SUITE_X25519_CHACHA);
                let mut hello = WireMessage::with_ext_zone(Tag::TlxServerHello, &sh_body);
                if self.spx_requested {
                    let offer = if self.config.attest.is_some() {
                        let eph = self.grant_eph.as_ref().expect("minted at construction");
                        SpxOffer::build(&self.config.identity, self.nonce, eph.public())
                    } else {
                        SpxOffer::not_capable()
                    };
                    hello = hello.with_ext(EXT_SPX_OFFER, &offer.encode());
                }
                self.transcript.absorb(&hello);

                let cert = WireMessage::new(
                    Tag::TlxCertificate,
                    build_certificate(&self.config.identity, &self.config.subject, self.config.cert_len),
                );
                self.transcript.absorb(&cert);
                let signed =
                    skx_signed_bytes(&self.client_random, &self.server_random, &self.dh.public());
                let sig = crypto::sign(&self.config.identity, &signed);
                let mut skx_payload = Vec::with_capacity(32 + SIG_LEN);
                skx_payload.extend_from_slice(&self.dh.public());
                skx_payload.extend_from_slice(&sig.bytes);
                let skx = WireMessage::new(Tag::TlxServerKeyExchange, skx_payload);
                self.transcript.absorb(&skx);
                let done = WireMessage::new(Tag::TlxServerHelloDone, vec![]);
                self.transcript.absorb(&done);

                self.state = ServerState::WaitClientKex;
                Ok(vec![vec![hello], vec![cert, skx, done]])
            }
            (ServerState::WaitClientKex, Tag::TlxClientKeyExchange) => {
                if msg.payload.len() != 32 {
                    return Err(self.fail(TlxError::Malformed("client key exchange")));
                }
                let client_pub: PublicKey = msg.payload[..].try_into().unwrap();
                let dh_secret = crypto::dh(&self.dh, &client_pub)
                    .map_err(|_| self.fail(TlxError::KeyAgreement))?;
                self.master = Some(derive_master(
                    &dh_secret,
                    &self.client_random,
                    &self.server_random,
                ));
                self.transcript.absorb(msg);
                self.state = ServerState::WaitClientCcs;
                Ok(vec![])
            }
            (ServerState::WaitClientCcs, Tag::TlxChangeCipherSpec) => {
                self.state = ServerState::WaitClientFinished;
                Ok(vec![])
            }
            (ServerState::WaitClientFinished, Tag::TlxFinished) => {
                let master = self.master.as_ref().expect("master set with key exchange");
                let expected = finished_data(master, FINISHED_CLIENT, &self.transcript.digest());
                if msg.payload != expected {
                    return Err(self.fail(TlxError::FinishedMismatch));
                }
                self.transcript.absorb(msg);
                if self.spx_requested && self.config.attest.is_some() {
                    // Hold the final flight until the edge's report arrives.
                    match self.attested_edge_eph {
                        Some(_) => {
                            let flight = self.final_flight();
                            self.state = ServerState::Established;
                            Ok(vec![flight])
                        }
                        None => {
                            self.state = ServerState::WaitReport;
                            Ok(vec![])
                        }
                    }
                } else {
                    let flight = self.final_flight();
                    self.state = ServerState::Established;
                    Ok(vec![flight])
                }
            }
            (_, got) => Err(self.fail(TlxError::UnexpectedMessage {
                expected: "next handshake message",
                got,
            })),
        }
    }

    fn on_report(&mut self, msg: &WireMessage) -> Result<Vec<Flight>, (TlxError, Flight)> {
        let Some(policy) = &self.config.attest else {
            return Err(self.fail(TlxError::UnexpectedMessage {
                expected: "no attestation traffic",
                got: msg.tag,
            }));
        };
        if !self.spx_requested || self.attested_edge_eph.is_some() {
            return Err(self.fail(TlxError::UnexpectedMessage {
                expected: "a single report after a request",
                got: msg.tag,
            }));
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
                    let flight = self.final_flight();
                    self.state = ServerState::Established;
                    Ok(vec![flight])
                } else {
                    Ok(vec![])
                }
            }
            Verdict::Reject(_) => Err(self.fail(TlxError::BadSignature)),
        }
    }

    /// The server's closing flight; includes the grant when an attested edge
    /// ephemeral is on file.
    fn final_flight(&mut self) -> Flight {
        let master = self.master.as_ref().expect("established implies master");
        let mut flight = Vec::with_capacity(3);
        if let (Some(edge_eph), Some(policy)) = (&self.attested_edge_eph, &self.config.attest) {
            let grant_eph = self.grant_eph.as_ref().expect("minted at construction");
            let payload = seal_grant(
                grant_eph,
                edge_eph,
                &self.nonce,
                ProtocolId::Tlx,
                master.bytes(),
                policy.grant_pad,
            )
            .expect("grant sealing with verified inputs");
            flight.push(WireMessage::spx_internal(Tag::SpxGrant, payload));
        }
        flight.push(WireMessage::new(Tag::TlxChangeCipherSpec, vec![]));
        let verify = finished_data(master, FINISHED_SERVER, &self.transcript.digest());
        let finished = WireMessage::new(Tag::TlxFinished, verify.to_vec());
        self.transcript.absorb(&finished);
        flight.push(finished);
        flight
    }
}

// ---------------------------------------------------------------------------
// Edge adapter

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    ClientHello,
    ServerHello,
    Certificate,
    ServerKex,
    ServerHelloDone,
    ClientKex,
    ClientCcs,
    ClientFinished,
    ServerCcs,
    ServerFinished,
    Transport,
}

/// Replicates the handshake for the generic engine: knows the expected frame
/// sequence, where the offer rides, where to strip, and when to bind.
pub struct TlxAdapter {
    pinned_server_key: PublicKey,
    expect: Expect,
    transcript: Transcript,
    client_random: [u8; 32],
    server_random: [u8; 32],
    suite: u8,
}

impl TlxAdapter {
    pub fn new(pinned_server_key: PublicKey) -> Self {
        TlxAdapter {
            pinned_server_key,
            expect: Expect::ClientHello,
            transcript: Transcript::new(),
            client_random: [0u8; 32],
            server_random: [0u8; 32],
            suite: 0,
        }
    }

    /// Negotiated suite as replicated from the server hello.
    pub fn suite(&self) -> u8 {
        self.suite
    }

    pub fn transcript_digest(&self) -> [u8; 32] {
        self.transcript.digest()
    }

    fn violation(&self, got: Tag) -> EngineError {
        EngineError::ProtocolViolation(format!("{got:?} while expecting {:?}", self.expect))
    }
}

impl ProtocolAdapter for TlxAdapter {
    fn protocol(&self) -> ProtocolId {
        ProtocolId::Tlx
    }

    fn is_initiation(&self, msg: &WireMessage) -> bool {
        msg.tag == Tag::TlxClientHello
    }

    fn absorb(&mut self, msg: &WireMessage, dir: Direction) -> Result<AdapterStep, EngineError> {
        use Direction::{ClientToServer as C2S, ServerToClient as S2C};
        let mut step = AdapterStep::default();
        match (self.expect, dir, msg.tag) {
            (Expect::ClientHello, C2S, Tag::TlxClientHello) => {
                let body = msg
                    .ext_body()
                    .filter(|b| b.len() >= 33)
                    .ok_or_else(|| EngineError::ProtocolViolation("bad client hello".into()))?;
                self.client_random.copy_from_slice(&body[..32]);
                self.transcript.absorb(msg);
                step.forward = Some(msg.with_ext(EXT_SPX_REQUEST, &[]));
                self.expect = Expect::ServerHello;
            }
            (Expect::ServerHello, S2C, Tag::TlxServerHello) => {
                let body = msg
                    .ext_body()
                    .filter(|b| b.len() == 33)
                    .ok_or_else(|| EngineError::ProtocolViolation("bad server hello".into()))?;
                self.server_random.copy_from_slice(&body[..32]);
                self.suite = body[32];
                if let Some(bytes) = msg.find_ext(EXT_SPX_OFFER) {
                    step.offer = Some(SpxOffer::decode(&bytes).ok_or(EngineError::AuthFailure)?);
                }
                self.transcript.absorb(msg);
                step.forward = Some(msg.without_spx_exts());
                self.expect = Expect::Certificate;
            }
            (Expect::Certificate, S2C, Tag::TlxCertificate) => {
                let (_, key) = parse_certificate(&msg.payload)
                    .map_err(|_| EngineError::ProtocolViolation("bad certificate".into()))?;
                if key != self.pinned_server_key {
                    // A terminating middlebox or impostor: never bind to it.
                    return Err(EngineError::AuthFailure);
                }
                self.transcript.absorb(msg);
                step.forward = Some(msg.clone());
                self.expect = Expect::ServerKex;
            }
            (Expect::ServerKex, S2C, Tag::TlxServerKeyExchange) => {
                if msg.payload.len() != 32 + SIG_LEN {
                    return Err(EngineError::ProtocolViolation("bad key exchange".into()));
                }
                let dh_pub: PublicKey = msg.payload[..32].try_into().unwrap();
                let sig: [u8; SIG_LEN] = msg.payload[32..].try_into().unwrap();
                let signed = skx_signed_bytes(&self.client_random, &self.server_random, &dh_pub);
                if !crypto::verify(&self.pinned_server_key, &signed, &sig) {
                    return Err(EngineError::AuthFailure);
                }
                self.transcript.absorb(msg);
                step.forward = Some(msg.clone());
                self.expect = Expect::ServerHelloDone;
            }
            (Expect::ServerHelloDone, S2C, Tag::TlxServerHelloDone) => {
                self.transcript.absorb(msg);
                step.forward = Some(msg.clone());
                self.expect = Expect::ClientKex;
            }
            (Expect::ClientKex, C2S, Tag::TlxClientKeyExchange) => {
                self.transcript.absorb(msg);
                step.forward = Some(msg.clone());
                self.expect = Expect::ClientCcs;
            }
            (Expect::ClientCcs, C2S, Tag::TlxChangeCipherSpec) => {
                step.forward = Some(msg.clone());
                self.expect = Expect::ClientFinished;
            }
            (Expect::ClientFinished, C2S, Tag::TlxFinished) => {
                self.transcript.absorb(msg);
                step.forward = Some(msg.clone());
                // The client's key-exchange flight is fully relayed: attest.
                step.bind_after_forward = true;
                self.expect = Expect::ServerCcs;
            }
            (Expect::ServerCcs, S2C, Tag::TlxChangeCipherSpec) => {
                step.forward = Some(msg.clone());
                self.expect = Expect::ServerFinished;
            }
            (Expect::ServerFinished, S2C, Tag::TlxFinished) => {
                self.transcript.absorb(msg);
                step.forward = Some(msg.clone());
                step.handshake_complete = true;
                self.expect = Expect::Transport;
            }
            (Expect::Transport, _, Tag::Record | Tag::AppClose) => {
                step.forward = Some(msg.clone());
            }
            (_, _, got) => return Err(self.violation(got)),
        }
        Ok(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EdgeAction, EdgeConfig, Phase, SpxEdge};
    use crate::see::{Enclave, MemoryCap};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::sync::Arc;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn server_config(r: &mut ChaCha12Rng, attest: Option<AttestPolicy>) -> TlxServerConfig {
        TlxServerConfig {
            identity: SigningKeyPair::generate(r),
            subject: "origin.example".into(),
            cert_len: DEFAULT_CERT_LEN,
            attest,
        }
    }

    /// Drive a direct client↔server handshake to completion.
    fn run_direct(
        client: &mut TlxClient,
        server: &mut TlxServer,
    ) -> Result<(), TlxError> {
        let mut to_server: Vec<Flight> = vec![client.start()];
        let mut to_client: Vec<Flight> = Vec::new();
        for _ in 0..10 {
            for flight in std::mem::take(&mut to_server) {
                for msg in flight {
                    to_client.extend(server.on_frame(&msg).map_err(|(e, _)| e)?);
                }
            }
            for flight in std::mem::take(&mut to_client) {
                for msg in flight {
                    to_server.extend(client.on_frame(&msg)?);
                }
            }
            if client.is_established() && server.is_established() {
                return Ok(());
            }
        }
        panic!("handshake did not converge");
    }

    #[test]
    fn direct_run_agrees_on_keys() {
        let mut r = rng(1);
        let config = server_config(&mut r, None);
        let pin = config.identity.public();
        let mut server = TlxServer::new(&mut r, config);
        let mut client = TlxClient::new(&mut r, Some(pin));
        run_direct(&mut client, &mut server).unwrap();
        assert_eq!(client.session_key().unwrap(), server.session_key().unwrap());
    }

    #[test]
    fn master_matches_independent_derivation() {
        // Recompute the key schedule outside the state machines.
        let mut r = rng(2);
        let config = server_config(&mut r, None);
        let pin = config.identity.public();
        let mut server = TlxServer::new(&mut r, config);
        let mut client = TlxClient::new(&mut r, Some(pin));
        // Capture the DH keys before the run consumes the RNG further.
        let client_eph = KeyPair::from_private(client.eph.private_bytes());
        let server_dh_pub = server.dh.public();
        let (cr, sr) = (client.client_random, server.server_random);
        run_direct(&mut client, &mut server).unwrap();

        let dh = crypto::dh(&client_eph, &server_dh_pub).unwrap();
        let mut randoms = Vec::new();
        randoms.extend_from_slice(&cr);
        randoms.extend_from_slice(&sr);
        let expected = crypto::hkdf(&dh, &randoms, 1)[0];
        assert_eq!(client.session_key().unwrap().bytes(), &expected);
    }

    #[test]
    fn certificate_round_trip_and_tamper() {
        let mut r = rng(3);
        let identity = SigningKeyPair::generate(&mut r);
        let cert = build_certificate(&identity, "origin.example", DEFAULT_CERT_LEN);
        assert_eq!(cert.len(), DEFAULT_CERT_LEN);
        let (subject, key) = parse_certificate(&cert).unwrap();
        assert_eq!(subject, "origin.example");
        assert_eq!(key, identity.public());

        let mut bad = cert.clone();
        bad[3] ^= 1; // flip a subject byte
        assert!(matches!(
            parse_certificate(&bad),
            Err(TlxError::BadSignature) | Err(TlxError::Malformed(_))
        ));
        let mut padded = cert;
        *padded.last_mut().unwrap() = 1; // non-zero padding
        assert_eq!(parse_certificate(&padded), Err(TlxError::Malformed("certificate padding")));
    }

    #[test]
    fn pinned_client_rejects_other_certificate() {
        let mut r = rng(4);
        let config = server_config(&mut r, None);
        let mut server = TlxServer::new(&mut r, config);
        // Pin an unrelated key: exactly what a terminating proxy would trip.
        let other = SigningKeyPair::generate(&mut r).public();
        let mut client = TlxClient::new(&mut r, Some(other));
        assert_eq!(
            run_direct(&mut client, &mut server),
            Err(TlxError::CertMismatch)
        );
    }

    #[test]
    fn tampered_server_finished_is_rejected() {
        let mut r = rng(5);
        let config = server_config(&mut r, None);
        let pin = config.identity.public();
        let mut server = TlxServer::new(&mut r, config);
        let mut client = TlxClient::new(&mut r, Some(pin));

        let mut to_server: Vec<Flight> = vec![client.start()];
        let mut result = Ok(());
        'outer: for _ in 0..10 {
            let mut to_client: Vec<Flight> = Vec::new();
            for flight in std::mem::take(&mut to_server) {
                for msg in flight {
                    to_client.extend(server.on_frame(&msg).map_err(|(e, _)| e).unwrap());
                }
            }
            for flight in to_client {
                for mut msg in flight {
                    if msg.tag == Tag::TlxFinished {
                        msg.payload[0] ^= 1;
                    }
                    match client.on_frame(&msg) {
                        Ok(flights) => to_server.extend(flights),
                        Err(e) => {
                            result = Err(e);
                            break 'outer;
                        }
                    }
                }
            }
        }
        assert_eq!(result, Err(TlxError::FinishedMismatch));
    }

    #[test]
    fn out_of_order_message_is_rejected() {
        let mut r = rng(6);
        let config = server_config(&mut r, None);
        let mut server = TlxServer::new(&mut r, config);
        let fin = WireMessage::new(Tag::TlxFinished, vec![0; 32]);
        let err = server.on_frame(&fin).unwrap_err().0;
        assert!(matches!(err, TlxError::UnexpectedMessage { .. }));
    }

    // -- the full edge pipeline ---------------------------------------------

    struct SpxRun {
        client: TlxClient,
        server: TlxServer,
        edge: SpxEdge,
        enclave: Arc<Enclave>,
    }

    fn spx_setup(seed: u64) -> SpxRun {
        let mut r = rng(seed);
        let enclave = Arc::new(Enclave::new("edge-fn-manifest", MemoryCap::Unbounded, &mut r));
        let attest = AttestPolicy {
            expected_measurement: enclave.measurement(),
            platform_public: enclave.platform_public(),
            grant_pad: DEFAULT_GRANT_PAD,
        };
        let config = server_config(&mut r, Some(attest));
        let pin = config.identity.public();
        let server = TlxServer::new(&mut r, config);
        let client = TlxClient::new(&mut r, Some(pin));
        let edge = SpxEdge::new(
            Box::new(TlxAdapter::new(pin)),
            Arc::clone(&enclave),
            EdgeConfig {
                server_identity: pin,
                client_id: "client-1".into(),
                server_id: "origin.example".into(),
                grant_pad: DEFAULT_GRANT_PAD,
            },
        );
        SpxRun {
            client,
            server,
            edge,
            enclave,
        }
    }

    /// Pump client↔edge↔server until both endpoints establish.
    fn pump(run: &mut SpxRun) -> Result<(), String> {
        use Direction::{ClientToServer as C2S, ServerToClient as S2C};
        let mut from_client: Vec<Flight> = vec![run.client.start()];
        let mut from_server: Vec<Flight> = Vec::new();
        for _ in 0..12 {
            let mut to_server: Vec<Flight> = Vec::new();
            let mut to_client: Vec<Flight> = Vec::new();
            for flight in std::mem::take(&mut from_client) {
                let mut relayed = Vec::new();
                let mut reports = Vec::new();
                for msg in &flight {
                    for action in run.edge.on_frame(C2S, msg).map_err(|e| e.to_string())? {
                        match action {
                            EdgeAction::Relay(_, m) => relayed.push(m),
                            EdgeAction::SendReport(m) => reports.push(m),
                        }
                    }
                }
                // The relayed flight stays intact; the report follows it.
                if !relayed.is_empty() {
                    to_server.push(relayed);
                }
                for report in reports {
                    to_server.push(vec![report]);
                }
            }
            for flight in std::mem::take(&mut from_server) {
                let mut relayed = Vec::new();
                for msg in &flight {
                    for action in run.edge.on_frame(S2C, msg).map_err(|e| e.to_string())? {
                        match action {
                            EdgeAction::Relay(_, m) => relayed.push(m),
                            EdgeAction::SendReport(m) => to_server.push(vec![m]),
                        }
                    }
                }
                if !relayed.is_empty() {
                    to_client.push(relayed);
                }
            }
            for flight in to_server {
                for msg in flight {
                    from_server.extend(run.server.on_frame(&msg).map_err(|(e, _)| e.to_string())?);
                }
            }
            for flight in to_client {
                for msg in flight {
                    from_client.extend(run.client.on_frame(&msg).map_err(|e| e.to_string())?);
                }
            }
            if run.client.is_established()
                && run.server.is_established()
                && run.edge.phase() == Phase::Established
            {
                return Ok(());
            }
        }
        Err("spx run did not converge".into())
    }

    #[test]
    fn spx_run_grants_the_session_key_to_the_edge() {
        let mut run = spx_setup(7);
        pump(&mut run).unwrap();

        // Key triangle: client == server == edge-granted.
        let client_key = run.client.session_key().unwrap().clone();
        assert_eq!(&client_key, run.server.session_key().unwrap());
        let session_id = run.edge.session_id().unwrap();
        let session = run.enclave.session_get(&session_id).unwrap();
        assert_eq!(session.session_key, client_key);
        assert_eq!(session.peer_key, None);
        assert_eq!(session.protocol, ProtocolId::Tlx);

        // The ephemeral is gone, and the phase history is the full ladder.
        assert!(run.edge.ephemeral_erased());
        assert_eq!(
            run.edge.phase_history(),
            &[
                Phase::Idle,
                Phase::Detected,
                Phase::Relaying,
                Phase::Bound,
                Phase::Granted,
                Phase::Established
            ]
        );
    }

    #[test]
    fn spx_client_view_matches_direct_run() {
        // Direct baseline.
        let mut r = rng(8);
        let config = server_config(&mut r, None);
        let pin = config.identity.public();
        let mut server = TlxServer::new(&mut r, config);
        let mut direct_client = TlxClient::new(&mut r, Some(pin));
        run_direct(&mut direct_client, &mut server).unwrap();

        // Edge-mediated run.
        let mut run = spx_setup(9);
        pump(&mut run).unwrap();

        let direct: Vec<_> = direct_client.observed().to_vec();
        let via_edge: Vec<_> = run.client.observed().to_vec();
        assert_eq!(direct, via_edge);
    }

    #[test]
    fn not_capable_server_degrades_to_passthrough() {
        let mut r = rng(10);
        let enclave = Arc::new(Enclave::new("edge-fn-manifest", MemoryCap::Unbounded, &mut r));
        let config = server_config(&mut r, None); // no attestation support
        let pin = config.identity.public();
        let mut run = SpxRun {
            server: TlxServer::new(&mut r, config),
            client: TlxClient::new(&mut r, Some(pin)),
            edge: SpxEdge::new(
                Box::new(TlxAdapter::new(pin)),
                Arc::clone(&enclave),
                EdgeConfig {
                    server_identity: pin,
                    client_id: "client-1".into(),
                    server_id: "origin.example".into(),
                    grant_pad: DEFAULT_GRANT_PAD,
                },
            ),
            enclave,
        };
        // The pump only terminates when the client and server establish; the
        // edge ends as a passthrough relay with no session.
        let err = pump(&mut run).unwrap_err();
        assert_eq!(err, "spx run did not converge");
        assert!(run.client.is_established());
        assert!(run.server.is_established());
        assert!(run.edge.is_passthrough());
        assert_eq!(run.edge.session_id(), None);
    }

    #[test]
    fn stale_nonce_report_aborts_the_handshake() {
        let mut r = rng(11);
        let enclave = Arc::new(Enclave::new("edge-fn-manifest", MemoryCap::Unbounded, &mut r));
        let attest = AttestPolicy {
            expected_measurement: enclave.measurement(),
            platform_public: enclave.platform_public(),
            grant_pad: DEFAULT_GRANT_PAD,
        };
        let config = server_config(&mut r, Some(attest));
        let mut server = TlxServer::new(&mut r, config);

        // Walk the server to the point where it expects the report.
        let mut client = TlxClient::new(&mut r, None);
        let hello = client.start().remove(0).with_ext(EXT_SPX_REQUEST, &[]);
        let mut to_client: Vec<WireMessage> = Vec::new();
        for flight in server.on_frame(&hello).unwrap() {
            to_client.extend(flight);
        }
        let mut to_server: Vec<WireMessage> = Vec::new();
        for msg in to_client {
            let stripped = msg.without_spx_exts();
            for flight in client.on_frame(&stripped).unwrap() {
                to_server.extend(flight);
            }
        }
        for msg in to_server {
            server.on_frame(&msg).unwrap();
        }

        // Report with a fresh key but the wrong nonce.
        let eph = enclave.gen_ephemeral();
        let report = enclave.attest(&eph.public(), &[9u8; 16]).unwrap();
        let msg = WireMessage::spx_internal(Tag::SpxReport, report.to_bytes());
        let (err, abort) = server.on_frame(&msg).unwrap_err();
        assert_eq!(err, TlxError::BadSignature);
        assert_eq!(abort[0].tag, Tag::Abort);
        assert!(!server.is_established());
    }
}
