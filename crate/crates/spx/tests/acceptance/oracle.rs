//! Hand-rolled straight-line recomputation of the Noise-style handshake
//! state transitions, independent of the library under test: HMAC and the
//! two-output key derivation are written out from their definitions, and
//! every pattern is a literal token-by-token sequence rather than a
//! table-driven interpreter. Used as both initiator and responder against
//! the real endpoints; transport keys must agree bit for bit.

use rand::RngCore;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use spx::noixe::{prologue_encode, Pattern};

fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

fn hmac_sha256(key: &[u8; 32], data: &[u8]) -> [u8; 32] {
    let mut ipad = [0x36u8; 64];
    let mut opad = [0x5cu8; 64];
    for i in 0..32 {
        ipad[i] ^= key[i];
        opad[i] ^= key[i];
    }
    let inner = sha256(&[&ipad[..], data].concat());
    sha256(&[&opad[..], &inner[..]].concat())
}

/// Two-output key derivation: temp = HMAC(ck, ikm); t1 = HMAC(temp, 0x01);
/// t2 = HMAC(temp, t1 ‖ 0x02).
fn hkdf2(ck: &[u8; 32], ikm: &[u8]) -> ([u8; 32], [u8; 32]) {
    let temp = hmac_sha256(ck, ikm);
    let t1 = hmac_sha256(&temp, &[0x01]);
    let t2 = hmac_sha256(&temp, &[&t1[..], &[0x02][..]].concat());
    (t1, t2)
}

fn aead_seal(k: &[u8; 32], n: u64, ad: &[u8], pt: &[u8]) -> Vec<u8> {
    use chacha20poly1305::aead::{Aead, Payload};
    use chacha20poly1305::{ChaCha20Poly1305, KeyInit, Nonce};
    let mut nonce = [0u8; 12];
    nonce[4..].copy_from_slice(&n.to_be_bytes());
    ChaCha20Poly1305::new(k.into())
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: pt, aad: ad })
        .expect("seal never fails")
}

fn aead_open(k: &[u8; 32], n: u64, ad: &[u8], ct: &[u8]) -> Vec<u8> {
    use chacha20poly1305::aead::{Aead, Payload};
    use chacha20poly1305::{ChaCha20Poly1305, KeyInit, Nonce};
    let mut nonce = [0u8; 12];
    nonce[4..].copy_from_slice(&n.to_be_bytes());
    ChaCha20Poly1305::new(k.into())
        .decrypt(Nonce::from_slice(&nonce), Payload { msg: ct, aad: ad })
        .expect("oracle decrypt must verify")
}

/// X25519 key pair for the oracle's side of the exchange.
pub struct Dh {
    secret: x25519_dalek::StaticSecret,
    pub public: [u8; 32],
}

impl Dh {
    pub fn gen(rng: &mut ChaCha12Rng) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        let secret = x25519_dalek::StaticSecret::from(bytes);
        let public = *x25519_dalek::PublicKey::from(&secret).as_bytes();
        Dh { secret, public }
    }

    fn dh(&self, peer: &[u8; 32]) -> [u8; 32] {
        *self
            .secret
            .diffie_hellman(&x25519_dalek::PublicKey::from(*peer))
            .as_bytes()
    }
}

/// Symmetric state: chaining key, transcript hash, message key + counter.
struct St {
    ck: [u8; 32],
    h: [u8; 32],
    k: Option<[u8; 32]>,
    n: u64,
}

impl St {
    fn new(pattern: Pattern) -> St {
        let name = pattern.protocol_name();
        let mut st = St { ck: name, h: name, k: None, n: 0 };
        // The prologue round-trips in the clear before the first message.
        st.mix_hash(&prologue_encode(pattern));
        st
    }

    fn mix_hash(&mut self, data: &[u8]) {
        self.h = sha256(&[&self.h[..], data].concat());
    }

    fn mix_key(&mut self, ikm: &[u8; 32]) {
        let (ck, k) = hkdf2(&self.ck, ikm);
        self.ck = ck;
        self.k = Some(k);
        self.n = 0;
    }

    /// encrypt-and-hash; plaintext passthrough before any key is mixed.
    fn enc(&mut self, pt: &[u8]) -> Vec<u8> {
        match self.k {
            Some(k) => {
                let ct = aead_seal(&k, self.n, &self.h, pt);
                self.n += 1;
                self.mix_hash(&ct);
                ct
            }
            None => {
                self.mix_hash(pt);
                pt.to_vec()
            }
        }
    }

    fn dec(&mut self, ct: &[u8]) -> Vec<u8> {
        match self.k {
            Some(k) => {
                let pt = aead_open(&k, self.n, &self.h, ct);
                self.n += 1;
                self.mix_hash(ct);
                pt
            }
            None => {
                self.mix_hash(ct);
                ct.to_vec()
            }
        }
    }

    fn split(&self) -> ([u8; 32], [u8; 32]) {
        hkdf2(&self.ck, b"")
    }
}

pub struct OracleKeys {
    /// initiator→responder transport key.
    pub k1: [u8; 32],
    /// responder→initiator transport key.
    pub k2: [u8; 32],
    /// Final transcript hash.
    pub h: [u8; 32],
}

fn finish(st: St) -> OracleKeys {
    let (k1, k2) = st.split();
    OracleKeys { k1, k2, h: st.h }
}

/// Slice a 32-byte public key off the front of a message.
fn take_pub(msg: &[u8], at: &mut usize) -> [u8; 32] {
    let out: [u8; 32] = msg[*at..*at + 32].try_into().expect("32-byte public");
    *at += 32;
    out
}

/// Slice an encrypted static (32 + 16 tag) off the front of a message.
fn take_enc_static(msg: &[u8], at: &mut usize) -> Vec<u8> {
    let out = msg[*at..*at + 48].to_vec();
    *at += 48;
    out
}

/// Drive the initiator side of `pattern` straight-line. `exchange` delivers
/// one handshake message to the responder and returns its reply, or `None`
/// when the responder has nothing left to say.
pub fn run_initiator(
    pattern: Pattern,
    e: Dh,
    s: Option<Dh>,
    rs: Option<[u8; 32]>,
    exchange: &mut dyn FnMut(Vec<u8>) -> Option<Vec<u8>>,
) -> OracleKeys {
    let mut st = St::new(pattern);
    match pattern {
        Pattern::Nn => {
            // -> e        <- e, ee
            let mut m1 = e.public.to_vec();
            st.mix_hash(&e.public);
            m1.extend(st.enc(b""));
            let m2 = exchange(m1).expect("responder replies");
            let mut at = 0;
            let re = take_pub(&m2, &mut at);
            st.mix_hash(&re);
            st.mix_key(&e.dh(&re));
            assert!(st.dec(&m2[at..]).is_empty());
            finish(st)
        }
        Pattern::Nk => {
            // pre: <- s   -> e, es   <- e, ee
            let rs = rs.expect("responder static is pre-shared");
            st.mix_hash(&rs);
            let mut m1 = e.public.to_vec();
            st.mix_hash(&e.public);
            st.mix_key(&e.dh(&rs));
            m1.extend(st.enc(b""));
            let m2 = exchange(m1).expect("responder replies");
            let mut at = 0;
            let re = take_pub(&m2, &mut at);
            st.mix_hash(&re);
            st.mix_key(&e.dh(&re));
            assert!(st.dec(&m2[at..]).is_empty());
            finish(st)
        }
        Pattern::Xk => {
            // pre: <- s   -> e, es   <- e, ee   -> s, se
            let s = s.expect("initiator sends a static");
            let rs = rs.expect("responder static is pre-shared");
            st.mix_hash(&rs);
            let mut m1 = e.public.to_vec();
            st.mix_hash(&e.public);
            st.mix_key(&e.dh(&rs));
            m1.extend(st.enc(b""));
            let m2 = exchange(m1).expect("responder replies");
            let mut at = 0;
            let re = take_pub(&m2, &mut at);
            st.mix_hash(&re);
            st.mix_key(&e.dh(&re));
            assert!(st.dec(&m2[at..]).is_empty());
            let mut m3 = st.enc(&s.public);
            st.mix_key(&s.dh(&re));
            m3.extend(st.enc(b""));
            assert!(exchange(m3).is_none(), "handshake ends on the initiator's message");
            finish(st)
        }
        Pattern::Xx => {
            // -> e   <- e, ee, s, es   -> s, se
            let s = s.expect("initiator sends a static");
            let mut m1 = e.public.to_vec();
            st.mix_hash(&e.public);
            m1.extend(st.enc(b""));
            let m2 = exchange(m1).expect("responder replies");
            let mut at = 0;
            let re = take_pub(&m2, &mut at);
            st.mix_hash(&re);
            st.mix_key(&e.dh(&re));
            let rs: [u8; 32] = st
                .dec(&take_enc_static(&m2, &mut at))
                .try_into()
                .expect("responder static decrypts to 32 bytes");
            st.mix_key(&e.dh(&rs));
            assert!(st.dec(&m2[at..]).is_empty());
            let mut m3 = st.enc(&s.public);
            st.mix_key(&s.dh(&re));
            m3.extend(st.enc(b""));
            assert!(exchange(m3).is_none(), "handshake ends on the initiator's message");
            finish(st)
        }
        Pattern::Ik => {
            // pre: <- s   -> e, es, s, ss   <- e, ee, se
            let s = s.expect("initiator sends a static");
            let rs = rs.expect("responder static is pre-shared");
            st.mix_hash(&rs);
            let mut m1 = e.public.to_vec();
            st.mix_hash(&e.public);
            st.mix_key(&e.dh(&rs));
            m1.extend(st.enc(&s.public));
            st.mix_key(&s.dh(&rs));
            m1.extend(st.enc(b""));
            let m2 = exchange(m1).expect("responder replies");
            let mut at = 0;
            let re = take_pub(&m2, &mut at);
            st.mix_hash(&re);
            st.mix_key(&e.dh(&re));
            st.mix_key(&s.dh(&re));
            assert!(st.dec(&m2[at..]).is_empty());
            finish(st)
        }
    }
}

/// Drive the responder side of `pattern` straight-line. `msg1` is the
/// initiator's first message; `reply` delivers the responder's message and
/// returns the initiator's next one, or `None` when the responder's message
/// ended the handshake.
pub fn run_responder(
    pattern: Pattern,
    e: Dh,
    s: Option<Dh>,
    msg1: Vec<u8>,
    reply: &mut dyn FnMut(Vec<u8>) -> Option<Vec<u8>>,
) -> OracleKeys {
    let mut st = St::new(pattern);
    match pattern {
        Pattern::Nn => {
            let mut at = 0;
            let re = take_pub(&msg1, &mut at);
            st.mix_hash(&re);
            assert!(st.dec(&msg1[at..]).is_empty());
            let mut m2 = e.public.to_vec();
            st.mix_hash(&e.public);
            st.mix_key(&e.dh(&re));
            m2.extend(st.enc(b""));
            assert!(reply(m2).is_none(), "handshake ends on the responder's message");
            finish(st)
        }
        Pattern::Nk => {
            let s = s.expect("responder owns the pre-shared static");
            st.mix_hash(&s.public);
            let mut at = 0;
            let re = take_pub(&msg1, &mut at);
            st.mix_hash(&re);
            st.mix_key(&s.dh(&re));
            assert!(st.dec(&msg1[at..]).is_empty());
            let mut m2 = e.public.to_vec();
            st.mix_hash(&e.public);
            st.mix_key(&e.dh(&re));
            m2.extend(st.enc(b""));
            assert!(reply(m2).is_none(), "handshake ends on the responder's message");
            finish(st)
        }
        Pattern::Xk => {
            let s = s.expect("responder owns the pre-shared static");
            st.mix_hash(&s.public);
            let mut at = 0;
            let re = take_pub(&msg1, &mut at);
            st.mix_hash(&re);
            st.mix_key(&s.dh(&re));
            assert!(st.dec(&msg1[at..]).is_empty());
            let mut m2 = e.public.to_vec();
            st.mix_hash(&e.public);
            st.mix_key(&e.dh(&re));
            m2.extend(st.enc(b""));
            let m3 = reply(m2).expect("initiator finishes");
            let mut at = 0;
            let ri: [u8; 32] = st
                .dec(&take_enc_static(&m3, &mut at))
                .try_into()
                .expect("initiator static decrypts to 32 bytes");
            st.mix_key(&e.dh(&ri));
            assert!(st.dec(&m3[at..]).is_empty());
            finish(st)
        }
        Pattern::Xx => {
            let s = s.expect("responder sends a static");
            let mut at = 0;
            let re = take_pub(&msg1, &mut at);
            st.mix_hash(&re);
            assert!(st.dec(&msg1[at..]).is_empty());
            let mut m2 = e.public.to_vec();
            st.mix_hash(&e.public);
            st.mix_key(&e.dh(&re));
            m2.extend(st.enc(&s.public));
            st.mix_key(&s.dh(&re));
            m2.extend(st.enc(b""));
            let m3 = reply(m2).expect("initiator finishes");
            let mut at = 0;
            let ri: [u8; 32] = st
                .dec(&take_enc_static(&m3, &mut at))
                .try_into()
                .expect("initiator static decrypts to 32 bytes");
            st.mix_key(&e.dh(&ri));
            assert!(st.dec(&m3[at..]).is_empty());
            finish(st)
        }
        Pattern::Ik => {
            let s = s.expect("responder owns the pre-shared static");
            st.mix_hash(&s.public);
            let mut at = 0;
            let re = take_pub(&msg1, &mut at);
            st.mix_hash(&re);
            st.mix_key(&s.dh(&re));
            let ri: [u8; 32] = st
                .dec(&take_enc_static(&msg1, &mut at))
                .try_into()
                .expect("initiator static decrypts to 32 bytes");
            st.mix_key(&s.dh(&ri));
            assert!(st.dec(&msg1[at..]).is_empty());
            let mut m2 = e.public.to_vec();
            st.mix_hash(&e.public);
            st.mix_key(&e.dh(&re));
            st.mix_key(&e.dh(&ri));
            m2.extend(st.enc(b""));
            assert!(reply(m2).is_none(), "handshake ends on the responder's message");
            finish(st)
        }
    }
}
