//! Authenticated record channel shared by every protocol family after its
//! handshake completes.
//!
//! Each endpoint seals with its sending key and opens with its receiving key;
//! nonces are per-direction big-endian counters starting at zero, and the
//! single-byte direction is bound as associated data so a reflected record
//! can never authenticate.

use crate::crypto::{self, CryptoError, SymmetricKey, NONCE_LEN};
use crate::wire::{Direction, Tag, WireMessage};

/// One endpoint's view of an established connection.
pub struct RecordChannel {
    send_key: SymmetricKey,
    recv_key: SymmetricKey,
    send_dir: Direction,
    send_seq: u64,
    recv_seq: u64,
}

impl RecordChannel {
    /// Channel where both directions share one key (single-key families).
    pub fn symmetric(key: SymmetricKey, send_dir: Direction) -> Self {
        let recv_key = key.clone();
        RecordChannel {
            send_key: key,
            recv_key,
            send_dir,
            send_seq: 0,
            recv_seq: 0,
        }
    }

    /// Channel with distinct keys per direction.
    pub fn asymmetric(send_key: SymmetricKey, recv_key: SymmetricKey, send_dir: Direction) -> Self {
        RecordChannel {
            send_key,
            recv_key,
            send_dir,
            send_seq: 0,
            recv_seq: 0,
        }
    }

    pub fn send_direction(&self) -> Direction {
        self.send_dir
    }

    pub fn seal(&mut self, plaintext: &[u8]) -> WireMessage {
        let nonce = crypto::counter_nonce(self.send_seq);
        self.send_seq += 1;
        let ct = crypto::aead_seal(&self.send_key, &nonce, &[self.send_dir.as_byte()], plaintext);
        WireMessage::new(Tag::Record, ct)
    }

    pub fn open(&mut self, msg: &WireMessage) -> Result<Vec<u8>, CryptoError> {
        debug_assert_eq!(msg.tag, Tag::Record);
        let nonce = crypto::counter_nonce(self.recv_seq);
        let pt = crypto::aead_open(
            &self.recv_key,
            &nonce,
            &[self.send_dir.flip().as_byte()],
            &msg.payload,
        )?;
        self.recv_seq += 1;
        Ok(pt)
    }
}

/// Sanity bound: a counter nonce must fit the AEAD nonce.
const _: () = assert!(NONCE_LEN == 12);
