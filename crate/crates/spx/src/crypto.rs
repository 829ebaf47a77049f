//! Deterministic cryptographic primitives shared by every other module.
//!
//! One algorithm per job, chosen once for the whole workspace: X25519 for
//! Diffie-Hellman, Ed25519 for signatures, ChaCha20-Poly1305 for AEAD,
//! SHA-256 for hashing and HKDF. Nonces for counter-based callers are 12-byte
//! big-endian counters; everything here takes explicit nonces and never keeps
//! hidden state, so identical inputs always produce identical outputs.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

/// 32-byte X25519 / Ed25519 public key.
pub type PublicKey = [u8; 32];

/// Length of an AEAD authentication tag.
pub const TAG_LEN: usize = 16;
/// Length of an AEAD nonce.
pub const NONCE_LEN: usize = 12;
/// Length of an Ed25519 signature.
pub const SIG_LEN: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    /// DH peer key is the all-zero encoding or a low-order point.
    #[error("invalid Diffie-Hellman public key")]
    InvalidPoint,
    /// AEAD tag did not verify (wrong key, nonce, AAD, or tampered data).
    #[error("authentication failure")]
    AuthFailure,
}

/// X25519 key pair. The public half is the base-point multiple of the
/// private scalar; the private half is wiped on drop.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct KeyPair {
    private: [u8; 32],
    #[zeroize(skip)]
    public: PublicKey,
}

impl KeyPair {
    /// Generate a fresh DH key pair from the caller's RNG.
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut private = [0u8; 32];
        rng.fill_bytes(&mut private);
        Self::from_private(private)
    }

    /// Deterministic construction from a private scalar.
    pub fn from_private(private: [u8; 32]) -> Self {
        let secret = x25519_dalek::StaticSecret::from(private);
        let public = x25519_dalek::PublicKey::from(&secret).to_bytes();
        KeyPair { private, public }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    /// Private scalar, exposed for instrumentation and sealing only.
    pub fn private_bytes(&self) -> [u8; 32] {
        self.private
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Never print the private half.
        write!(f, "KeyPair({})", hex::encode(self.public))
    }
}

/// X25519 shared secret. Rejects the all-zero peer encoding up front and any
/// peer key whose shared point collapses to zero (low-order points).
pub fn dh(local: &KeyPair, remote_public: &PublicKey) -> Result<[u8; 32], CryptoError> {
    if remote_public.iter().all(|&b| b == 0) {
        return Err(CryptoError::InvalidPoint);
    }
    let secret = x25519_dalek::StaticSecret::from(local.private_bytes());
    let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(*remote_public));
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidPoint);
    }
    Ok(shared.to_bytes())
}

/// Ed25519 signing key pair, kept separate from the DH pair: the two live on
/// different curves and must never be conflated.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct SigningKeyPair {
    seed: [u8; 32],
    #[zeroize(skip)]
    public: PublicKey,
}

impl SigningKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        let key = SigningKey::from_bytes(&seed);
        let public = key.verifying_key().to_bytes();
        SigningKeyPair { seed, public }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn private_bytes(&self) -> [u8; 32] {
        self.seed
    }
}

impl std::fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigningKeyPair({})", hex::encode(self.public))
    }
}

/// Detached Ed25519 signature plus the public key it verifies under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub bytes: [u8; SIG_LEN],
    pub signer: PublicKey,
}

/// Sign `message` with the key's Ed25519 seed. Deterministic.
pub fn sign(key: &SigningKeyPair, message: &[u8]) -> Signature {
    let sk = SigningKey::from_bytes(&key.private_bytes());
    Signature {
        bytes: sk.sign(message).to_bytes(),
        signer: key.public(),
    }
}

/// Verify an Ed25519 signature. Total: malformed keys or signatures return
/// false rather than panicking.
pub fn verify(public: &PublicKey, message: &[u8], sig: &[u8; SIG_LEN]) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(public) else {
        return false;
    };
    vk.verify(message, &ed25519_dalek::Signature::from_bytes(sig))
        .is_ok()
}

/// AEAD algorithm registry. One entry; the field exists so sealed blobs and
/// sessions record what they were encrypted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AeadAlgo {
    ChaCha20Poly1305,
}

impl AeadAlgo {
    pub fn id(self) -> u8 {
        match self {
            AeadAlgo::ChaCha20Poly1305 => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(AeadAlgo::ChaCha20Poly1305),
            _ => None,
        }
    }
}

/// 32-byte symmetric key; wiped on drop.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct SymmetricKey {
    bytes: [u8; 32],
    #[zeroize(skip)]
    algo: AeadAlgo,
}

impl SymmetricKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        SymmetricKey {
            bytes,
            algo: AeadAlgo::ChaCha20Poly1305,
        }
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.bytes
    }

    pub fn algo(&self) -> AeadAlgo {
        self.algo
    }
}

impl PartialEq for SymmetricKey {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes && self.algo == other.algo
    }
}
impl Eq for SymmetricKey {}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Key material stays out of logs and assertion output.
        f.debug_struct("SymmetricKey")
            .field("algo", &self.algo)
            .field("bytes", &"<redacted>")
            .finish()
    }
}

/// ChaCha20-Poly1305 encrypt; returns ciphertext with the 16-byte tag
/// appended. Empty plaintext yields exactly the tag.
pub fn aead_seal(key: &SymmetricKey, nonce: &[u8; NONCE_LEN], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key.bytes()));
    cipher
        .encrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: plaintext,
                aad,
            },
        )
        .expect("ChaCha20-Poly1305 encryption is infallible for in-memory buffers")
}

/// ChaCha20-Poly1305 decrypt-and-verify.
pub fn aead_open(
    key: &SymmetricKey,
    nonce: &[u8; NONCE_LEN],
    aad: &[u8],
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key.bytes()));
    cipher
        .decrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: ciphertext,
                aad,
            },
        )
        .map_err(|_| CryptoError::AuthFailure)
}

/// SHA-256.
pub fn hash(data: &[u8]) -> [u8; 32] {
    use sha2::Digest;
    sha2::Sha256::digest(data).into()
}

/// HKDF-SHA256 with `ck` as salt and empty info, expanded into `n` 32-byte
/// outputs (n in 1..=3). This is exactly the Noise HKDF construction, reused
/// for every key derivation in the workspace.
pub fn hkdf(ck: &[u8; 32], input: &[u8], n: usize) -> Vec<[u8; 32]> {
    assert!((1..=3).contains(&n), "hkdf output count must be 1..=3");
    let hk = hkdf::Hkdf::<sha2::Sha256>::new(Some(ck), input);
    let mut okm = vec![0u8; 32 * n];
    hk.expand(&[], &mut okm)
        .expect("32*n is a valid HKDF-SHA256 output length");
    okm.chunks_exact(32)
        .map(|c| {
            let mut out = [0u8; 32];
            out.copy_from_slice(c);
            out
        })
        .collect()
}

/// Render a message counter as a 12-byte big-endian AEAD nonce.
pub fn counter_nonce(counter: u64) -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[4..].copy_from_slice(&counter.to_be_bytes());
    nonce
}
