//! Client-side authenticated encryption. Data leaves the client only as an
//! [`EncryptedEnvelope`]; the server stores and forwards envelope bytes
//! without ever holding a [`DataKey`], so decryption is possible only at the
//! client.
//!
//! The cipher sits behind [`AeadCipher`] (32-byte key, 16-byte nonce, 16-byte
//! tag); AES-256-GCM is the default. The envelope header (key id, nonce,
//! plaintext length) is bound into the authentication tag as associated data,
//! so flipping any serialized bit — header or body — fails [`open`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use aes_gcm::aead::generic_array::typenum::U16;
use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::aes::Aes256;
use aes_gcm::AesGcm;
use rand::RngCore;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 16;
pub const MAX_KEY_ID_LEN: usize = 255;

#[derive(Debug, thiserror::Error)]
pub enum EnvelopeError {
    /// Wrong key or any modified bit in the envelope.
    #[error("authentication failure: wrong key or tampered envelope")]
    AuthenticationFailure,
    #[error("key id {0:?} not in keyring")]
    KeyNotFound(String),
    #[error("invalid key id: {0}")]
    InvalidKeyId(&'static str),
    #[error("duplicate key id {0:?} in keyring")]
    DuplicateKeyId(String),
    #[error("malformed envelope: {0}")]
    Malformed(&'static str),
    #[error("keyring line {0}: {1}")]
    KeyringParse(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Authenticated cipher interface: 32-byte key, 16-byte nonce, 16-byte tag.
/// Implementations must fail `open` on any change to nonce, aad, ciphertext
/// or tag.
pub trait AeadCipher {
    fn seal_detached(
        &self,
        key: &[u8; KEY_LEN],
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        buf: &mut [u8],
    ) -> [u8; TAG_LEN];

    fn open_detached(
        &self,
        key: &[u8; KEY_LEN],
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        buf: &mut [u8],
        tag: &[u8; TAG_LEN],
    ) -> Result<(), EnvelopeError>;
}

/// AES-256-GCM with a 16-byte nonce (GCM hashes non-96-bit nonces through
/// GHASH, so the full 16 bytes contribute).
#[derive(Debug, Default, Clone, Copy)]
pub struct Aes256Gcm16;

type Gcm = AesGcm<Aes256, U16, U16>;

impl AeadCipher for Aes256Gcm16 {
    fn seal_detached(
        &self,
        key: &[u8; KEY_LEN],
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        buf: &mut [u8],
    ) -> [u8; TAG_LEN] {
        let cipher = Gcm::new_from_slice(key).expect("32-byte key");
        let tag = cipher
            .encrypt_in_place_detached(nonce.as_slice().into(), aad, buf)
            .expect("gcm encrypt is infallible for in-range lengths");
        tag.into()
    }

    fn open_detached(
        &self,
        key: &[u8; KEY_LEN],
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        buf: &mut [u8],
        tag: &[u8; TAG_LEN],
    ) -> Result<(), EnvelopeError> {
        let cipher = Gcm::new_from_slice(key).expect("32-byte key");
        cipher
            .decrypt_in_place_detached(nonce.as_slice().into(), aad, buf, tag.as_slice().into())
            .map_err(|_| EnvelopeError::AuthenticationFailure)
    }
}

/// A named 32-byte client secret. Never serialized into envelopes or sent to
/// the server; only its `key_id` travels.
#[derive(Clone, PartialEq, Eq)]
pub struct DataKey {
    key_id: String,
    key_bytes: [u8; KEY_LEN],
}

impl fmt::Debug for DataKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DataKey")
            .field("key_id", &self.key_id)
            .field("key_bytes", &"<redacted>")
            .finish()
    }
}

impl DataKey {
    pub fn new(key_id: impl Into<String>, key_bytes: [u8; KEY_LEN]) -> Result<Self, EnvelopeError> {
        let key_id = key_id.into();
        if key_id.is_empty() {
            return Err(EnvelopeError::InvalidKeyId("empty"));
        }
        if key_id.len() > MAX_KEY_ID_LEN {
            return Err(EnvelopeError::InvalidKeyId("longer than 255 bytes"));
        }
        Ok(Self { key_id, key_bytes })
    }

    /// Fresh random key from the OS generator.
    pub fn generate(key_id: impl Into<String>) -> Result<Self, EnvelopeError> {
        let mut key_bytes = [0u8; KEY_LEN];
        rand::rngs::OsRng.fill_bytes(&mut key_bytes);
        Self::new(key_id, key_bytes)
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn key_bytes(&self) -> &[u8; KEY_LEN] {
        &self.key_bytes
    }
}

/// Client-local key file: one `key_id = <64 hex digits>` line per key.
#[derive(Debug, Default)]
pub struct Keyring {
    keys: BTreeMap<String, DataKey>,
}

impl Keyring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: DataKey) -> Result<(), EnvelopeError> {
        if self.keys.contains_key(key.key_id()) {
            return Err(EnvelopeError::DuplicateKeyId(key.key_id().to_string()));
        }
        self.keys.insert(key.key_id().to_string(), key);
        Ok(())
    }

    pub fn get(&self, key_id: &str) -> Option<&DataKey> {
        self.keys.get(key_id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvelopeError> {
        let text = std::fs::read_to_string(path)?;
        let mut ring = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (id, hex_key) = line.split_once('=').ok_or_else(|| {
                EnvelopeError::KeyringParse(lineno, "expected `key_id = hex`".into())
            })?;
            let bytes = hex::decode(hex_key.trim())
                .map_err(|e| EnvelopeError::KeyringParse(lineno, format!("bad hex key: {e}")))?;
            let key_bytes: [u8; KEY_LEN] = bytes
                .try_into()
                .map_err(|_| EnvelopeError::KeyringParse(lineno, "key must be 32 bytes".into()))?;
            let key = DataKey::new(id.trim(), key_bytes)
                .map_err(|e| EnvelopeError::KeyringParse(lineno, e.to_string()))?;
            ring.insert(key)
                .map_err(|e| EnvelopeError::KeyringParse(lineno, e.to_string()))?;
        }
        Ok(ring)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EnvelopeError> {
        let mut out = String::new();
        for key in self.keys.values() {
            out.push_str(key.key_id());
            out.push_str(" = ");
            out.push_str(&hex::encode(key.key_bytes()));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Client-sealed authenticated ciphertext: the only form data ever takes on
/// the server or the wire.
///
/// Wire layout (big-endian):
/// `key_id_len u8 || key_id || nonce (16) || plaintext_len u64 || ciphertext || auth_tag (16)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedEnvelope {
    pub key_id: String,
    pub nonce: [u8; NONCE_LEN],
    pub plaintext_len: u64,
    pub ciphertext: Vec<u8>,
    pub auth_tag: [u8; TAG_LEN],
}

impl EncryptedEnvelope {
    /// Header prefix fed to the cipher as associated data.
    fn header_bytes(key_id: &str, nonce: &[u8; NONCE_LEN], plaintext_len: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + key_id.len() + NONCE_LEN + 8);
        out.push(key_id.len() as u8);
        out.extend_from_slice(key_id.as_bytes());
        out.extend_from_slice(nonce);
        out.extend_from_slice(&plaintext_len.to_be_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Self::header_bytes(&self.key_id, &self.nonce, self.plaintext_len);
        out.reserve(self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.auth_tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        if bytes.is_empty() {
            return Err(EnvelopeError::Malformed("empty"));
        }
        let id_len = bytes[0] as usize;
        let header_len = 1 + id_len + NONCE_LEN + 8;
        if bytes.len() < header_len + TAG_LEN {
            return Err(EnvelopeError::Malformed("shorter than header + tag"));
        }
        let key_id = std::str::from_utf8(&bytes[1..1 + id_len])
            .map_err(|_| EnvelopeError::Malformed("key id is not utf-8"))?
            .to_string();
        if key_id.is_empty() {
            return Err(EnvelopeError::Malformed("empty key id"));
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[1 + id_len..1 + id_len + NONCE_LEN]);
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&bytes[1 + id_len + NONCE_LEN..header_len]);
        let plaintext_len = u64::from_be_bytes(len_bytes);
        let body = &bytes[header_len..];
        let ct_len = body.len() - TAG_LEN;
        if ct_len as u64 != plaintext_len {
            return Err(EnvelopeError::Malformed(
                "ciphertext length disagrees with plaintext_len",
            ));
        }
        let ciphertext = body[..ct_len].to_vec();
        let mut auth_tag = [0u8; TAG_LEN];
        auth_tag.copy_from_slice(&body[ct_len..]);
        Ok(Self {
            key_id,
            nonce,
            plaintext_len,
            ciphertext,
            auth_tag,
        })
    }

    pub fn serialized_len(&self) -> usize {
        1 + self.key_id.len() + NONCE_LEN + 8 + self.ciphertext.len() + TAG_LEN
    }
}

/// Seal `payload` under `key` with a fresh random nonce.
pub fn seal(payload: &[u8], key: &DataKey) -> Result<EncryptedEnvelope, EnvelopeError> {
    let mut nonce = [0u8; NONCE_LEN];
    rand::rngs::OsRng.fill_bytes(&mut nonce);
    seal_with_nonce(&Aes256Gcm16, payload, key, nonce)
}

/// Seal with an explicit cipher and nonce. The caller is responsible for
/// nonce uniqueness per key.
pub fn seal_with_nonce<C: AeadCipher>(
    cipher: &C,
    payload: &[u8],
    key: &DataKey,
    nonce: [u8; NONCE_LEN],
) -> Result<EncryptedEnvelope, EnvelopeError> {
    let plaintext_len = payload.len() as u64;
    let aad = EncryptedEnvelope::header_bytes(key.key_id(), &nonce, plaintext_len);
    let mut buf = payload.to_vec();
    let auth_tag = cipher.seal_detached(key.key_bytes(), &nonce, &aad, &mut buf);
    Ok(EncryptedEnvelope {
        key_id: key.key_id().to_string(),
        nonce,
        plaintext_len,
        ciphertext: buf,
        auth_tag,
    })
}

/// Recover the payload. Fails with [`EnvelopeError::AuthenticationFailure`]
/// on a wrong key or any modified bit.
pub fn open(env: &EncryptedEnvelope, key: &DataKey) -> Result<Vec<u8>, EnvelopeError> {
    open_with(&Aes256Gcm16, env, key)
}

pub fn open_with<C: AeadCipher>(
    cipher: &C,
    env: &EncryptedEnvelope,
    key: &DataKey,
) -> Result<Vec<u8>, EnvelopeError> {
    let aad = EncryptedEnvelope::header_bytes(&env.key_id, &env.nonce, env.plaintext_len);
    let mut buf = env.ciphertext.clone();
    cipher.open_detached(key.key_bytes(), &env.nonce, &aad, &mut buf, &env.auth_tag)?;
    Ok(buf)
}

/// Open using the keyring entry named by the envelope's `key_id`.
pub fn open_with_keyring(
    env: &EncryptedEnvelope,
    keyring: &Keyring,
) -> Result<Vec<u8>, EnvelopeError> {
    let key = keyring
        .get(&env.key_id)
        .ok_or_else(|| EnvelopeError::KeyNotFound(env.key_id.clone()))?;
    open(env, key)
}
