//! Frame format shared by both protocol families.
//!
//! Every message on a link is one frame:
//!
//! ```text
//! +--------+---------+---------------------+----------------+
//! | tag: 1 | flags:1 | length: 4 (BE)      | payload        |
//! +--------+---------+---------------------+----------------+
//! ```
//!
//! Flag bit 0 marks a frame as SPX-internal (attestation report, grant,
//! abort): such frames are consumed by the edge and the server and are never
//! part of any handshake transcript.
//!
//! Hello and prologue frames can carry SPX piggybacks in a trailing extension
//! block of TLVs (type: 1 byte, length: 2 bytes BE, value). Payloads of those
//! tags are self-describing: they open with a big-endian u16 length of the
//! protocol-proper body, and the extension block is everything after the
//! body. That keeps extension handling — embedding, stripping, and byte
//! accounting — independent of any one protocol's message layout, and lets
//! transcripts hash the piggyback-free form so the endpoints agree no matter
//! what rode along in transit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames larger than this are refused outright.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
/// Encoded size of the frame header.
pub const HEADER_LEN: usize = 6;

/// Frame is SPX-internal: never forwarded to the client, never hashed.
pub const FLAG_SPX_INTERNAL: u8 = 0b0000_0001;

/// Zero-value extension the edge piggybacks on the client's opening message
/// to request an SPX attestation offer from the server.
pub const EXT_SPX_REQUEST: u8 = 0xE0;
/// SPX offer extension carried in a server hello / prologue response.
pub const EXT_SPX_OFFER: u8 = 0xE1;

/// Single registry of frame tags across both protocol families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tag {
    TlxClientHello = 0x01,
    TlxServerHello = 0x02,
    TlxCertificate = 0x03,
    TlxServerKeyExchange = 0x04,
    TlxServerHelloDone = 0x05,
    TlxClientKeyExchange = 0x06,
    TlxChangeCipherSpec = 0x07,
    TlxFinished = 0x08,
    NoisePrologue = 0x10,
    NoiseHandshake = 0x11,
    /// Post-handshake application record (both families).
    Record = 0x20,
    /// Client is done; lets every endpoint wind down cleanly.
    AppClose = 0x21,
    /// Enclave attestation report, edge -> server. SPX-internal.
    SpxReport = 0x30,
    /// Session-key grant, server -> edge. SPX-internal.
    SpxGrant = 0x31,
    /// Fatal alert; the only alert in the protocol. SPX-internal flag so it
    /// never perturbs transcripts.
    Abort = 0x3F,
}

impl Tag {
    pub fn from_byte(b: u8) -> Option<Tag> {
        Some(match b {
            0x01 => Tag::TlxClientHello,
            0x02 => Tag::TlxServerHello,
            0x03 => Tag::TlxCertificate,
            0x04 => Tag::TlxServerKeyExchange,
            0x05 => Tag::TlxServerHelloDone,
            0x06 => Tag::TlxClientKeyExchange,
            0x07 => Tag::TlxChangeCipherSpec,
            0x08 => Tag::TlxFinished,
            0x10 => Tag::NoisePrologue,
            0x11 => Tag::NoiseHandshake,
            0x20 => Tag::Record,
            0x21 => Tag::AppClose,
            0x30 => Tag::SpxReport,
            0x31 => Tag::SpxGrant,
            0x3F => Tag::Abort,
            _ => return None,
        })
    }

    /// Whether payloads of this tag use the length-prefixed body + trailing
    /// extension block convention.
    pub fn has_ext_zone(self) -> bool {
        matches!(
            self,
            Tag::TlxClientHello | Tag::TlxServerHello | Tag::NoisePrologue
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown frame tag {0:#04x}")]
    UnknownTag(u8),
    #[error("payload of {0} bytes exceeds the 16 MiB cap")]
    Oversized(usize),
    #[error("malformed extension block")]
    BadExtension,
}

/// Which way a frame travels on a client↔server path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::ClientToServer => Direction::ServerToClient,
            Direction::ServerToClient => Direction::ClientToServer,
        }
    }

    /// Single-byte encoding used as AEAD associated data by record channels.
    pub fn as_byte(self) -> u8 {
        match self {
            Direction::ClientToServer => 0,
            Direction::ServerToClient => 1,
        }
    }
}

/// Messages that travel together as one unit of transmission.
pub type Flight = Vec<WireMessage>;

/// One decoded frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub tag: Tag,
    pub flags: u8,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(tag: Tag, payload: Vec<u8>) -> Self {
        WireMessage {
            tag,
            flags: 0,
            payload,
        }
    }

    pub fn spx_internal(tag: Tag, payload: Vec<u8>) -> Self {
        WireMessage {
            tag,
            flags: FLAG_SPX_INTERNAL,
            payload,
        }
    }

    pub fn is_spx_internal(&self) -> bool {
        self.flags & FLAG_SPX_INTERNAL != 0
    }

    /// Build an extensible payload: u16 body length, body, empty ext block.
    pub fn with_ext_zone(tag: Tag, body: &[u8]) -> Self {
        debug_assert!(tag.has_ext_zone());
        assert!(body.len() <= u16::MAX as usize, "body too large");
        let mut payload = Vec::with_capacity(2 + body.len());
        payload.extend_from_slice(&(body.len() as u16).to_be_bytes());
        payload.extend_from_slice(body);
        WireMessage::new(tag, payload)
    }

    /// Offset of the extension block, when this payload has one.
    fn ext_offset(&self) -> Option<usize> {
        if !self.tag.has_ext_zone() || self.payload.len() < 2 {
            return None;
        }
        let body_len = u16::from_be_bytes(self.payload[..2].try_into().unwrap()) as usize;
        (self.payload.len() >= 2 + body_len).then_some(2 + body_len)
    }

    /// Protocol-proper body of an extension-zone payload.
    pub fn ext_body(&self) -> Option<&[u8]> {
        self.ext_offset().map(|off| &self.payload[2..off])
    }

    /// Copy with one extension appended to the extension block.
    pub fn with_ext(&self, ext_type: u8, value: &[u8]) -> WireMessage {
        debug_assert!(self.ext_offset().is_some(), "payload has no ext zone");
        let mut msg = self.clone();
        push_ext(&mut msg.payload, ext_type, value);
        msg
    }

    /// Value of the first extension of the given type, if present and the
    /// extension block parses.
    pub fn find_ext(&self, ext_type: u8) -> Option<Vec<u8>> {
        let off = self.ext_offset()?;
        parse_exts(&self.payload, off)
            .ok()?
            .into_iter()
            .find(|(t, _)| *t == ext_type)
            .map(|(_, v)| v)
    }

    /// Copy with all SPX extensions removed: the form the client sees and the
    /// form every transcript hashes. Frames without an extension zone (or
    /// with one that does not parse) are returned unchanged so every observer
    /// of the same bytes transforms them the same way.
    pub fn without_spx_exts(&self) -> WireMessage {
        let Some(off) = self.ext_offset() else {
            return self.clone();
        };
        let Ok(exts) = parse_exts(&self.payload, off) else {
            return self.clone();
        };
        let mut payload = self.payload[..off].to_vec();
        for (t, v) in &exts {
            if *t != EXT_SPX_REQUEST && *t != EXT_SPX_OFFER {
                push_ext(&mut payload, *t, v);
            }
        }
        WireMessage {
            tag: self.tag,
            flags: self.flags,
            payload,
        }
    }

    /// Total SPX extension value bytes riding in this frame (byte accounting;
    /// TLV headers and frame headers are transport overhead, not SPX data).
    pub fn spx_ext_value_bytes(&self) -> usize {
        let Some(off) = self.ext_offset() else {
            return 0;
        };
        parse_exts(&self.payload, off)
            .map(|exts| {
                exts.iter()
                    .filter(|(t, _)| *t == EXT_SPX_REQUEST || *t == EXT_SPX_OFFER)
                    .map(|(_, v)| v.len())
                    .sum()
            })
            .unwrap_or(0)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

/// Encode one frame. Panics only on payloads past the hard cap, which
/// `decode` would refuse anyway.
pub fn encode(msg: &WireMessage) -> Vec<u8> {
    assert!(msg.payload.len() <= MAX_PAYLOAD, "payload exceeds 16 MiB cap");
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len());
    out.push(msg.tag as u8);
    out.push(msg.flags);
    out.extend_from_slice(&(msg.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&msg.payload);
    out
}

/// Decode one frame from the front of `bytes`; returns the frame and how many
/// bytes it consumed.
pub fn decode(bytes: &[u8]) -> Result<(WireMessage, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let tag = Tag::from_byte(bytes[0]).ok_or(WireError::UnknownTag(bytes[0]))?;
    let flags = bytes[1];
    let len = u32::from_be_bytes(bytes[2..6].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversized(len));
    }
    if bytes.len() < HEADER_LEN + len {
        return Err(WireError::Truncated {
            needed: HEADER_LEN + len,
            have: bytes.len(),
        });
    }
    Ok((
        WireMessage {
            tag,
            flags,
            payload: bytes[HEADER_LEN..HEADER_LEN + len].to_vec(),
        },
        HEADER_LEN + len,
    ))
}

/// Append one TLV to a payload under construction.
pub fn push_ext(payload: &mut Vec<u8>, ext_type: u8, value: &[u8]) {
    assert!(value.len() <= u16::MAX as usize, "extension value too large");
    payload.push(ext_type);
    payload.extend_from_slice(&(value.len() as u16).to_be_bytes());
    payload.extend_from_slice(value);
}

/// Parse the TLV block that starts at `offset` in `payload`.
pub fn parse_exts(payload: &[u8], offset: usize) -> Result<Vec<(u8, Vec<u8>)>, WireError> {
    let mut exts = Vec::new();
    let mut at = offset;
    while at < payload.len() {
        if payload.len() - at < 3 {
            return Err(WireError::BadExtension);
        }
        let ext_type = payload[at];
        let len = u16::from_be_bytes(payload[at + 1..at + 3].try_into().unwrap()) as usize;
        at += 3;
        if payload.len() - at < len {
            return Err(WireError::BadExtension);
        }
        exts.push((ext_type, payload[at..at + len].to_vec()));
        at += len;
    }
    Ok(exts)
}

/// Running hash of a handshake as both ends of a connection see it.
///
/// The digest chains one SHA-256 per absorbed frame over the frame's
/// SPX-free encoding, so it is order-sensitive and starts at the hash of
/// the empty string. SPX-internal frames are skipped entirely and SPX
/// extensions are stripped before hashing — SPX must not disturb what the
/// endpoints agree on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    running: [u8; 32],
    count: u64,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript {
            running: crate::crypto::hash(b""),
            count: 0,
        }
    }

    /// Absorb a frame. SPX-internal frames are ignored; SPX extensions and
    /// flag bits are removed from everything else before hashing.
    pub fn absorb(&mut self, msg: &WireMessage) {
        if msg.is_spx_internal() {
            return;
        }
        let mut clean = msg.without_spx_exts();
        clean.flags = 0;
        let bytes = encode(&clean);
        let mut buf = Vec::with_capacity(32 + bytes.len());
        buf.extend_from_slice(&self.running);
        buf.extend_from_slice(&bytes);
        self.running = crate::crypto::hash(&buf);
        self.count += 1;
    }

    pub fn digest(&self) -> [u8; 32] {
        self.running
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

impl Default for Transcript {
    fn default() -> Self {
        Self::new()
    }
}
