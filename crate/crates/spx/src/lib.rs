//! Edge-terminated secure-channel framework.
//!
//! A client and an origin server run an ordinary handshake (a TLS-style one
//! or a Noise-style one) while an edge proxy between them transparently
//! replicates the protocol state, attests an enclave-minted ephemeral key to
//! the server, and receives the session keys sealed to that key — letting the
//! edge serve the session at the origin's behest without ever being able to
//! impersonate the origin on its own and without the client seeing anything
//! but the vanilla protocol.
//!
//! Crate layout, bottom up:
//!
//! * [`crypto`] — X25519, Ed25519, ChaCha20-Poly1305, SHA-256, HKDF.
//! * [`wire`] — the shared frame format, tag registry, extension TLVs, and
//!   piggyback-proof transcripts.
//! * [`see`] — the simulated shielded execution environment: measurement,
//!   attestation, sealing, and a capped in-enclave session table that spills
//!   sealed blobs to host storage.
//! * [`engine`] — the protocol-generic edge state machine (detect, relay,
//!   bind, forward, grant, resume) plus offer/grant sealing.
//! * [`record`] — the post-handshake authenticated record channel.
//! * [`tlx`] — the TLS-style family: vanilla client, extension-capable
//!   server, edge adapter.
//! * [`noixe`] — the Noise-style family: initiator, responder, and the
//!   passive handler role, over five handshake patterns.
//! * [`netsim`] — deterministic discrete-event network simulator, attack
//!   scenarios, trace accounting, and a loopback-TCP runner.
//! * [`bench`] — benchmark workloads and statistics for the CLI.

pub mod bench;
pub mod crypto;
pub mod engine;
pub mod netsim;
pub mod noixe;
pub mod record;
pub mod see;
pub mod tlx;
pub mod wire;
