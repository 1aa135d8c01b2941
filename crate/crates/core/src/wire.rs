//! Framed binary client/server protocol. Every message is one frame:
//! `magic "AAS1" || frame_type u8 || length u32 (big-endian) || payload`.
//!
//! The handshake establishes a per-session chaff/transport key from a
//! pre-shared principal secret and fresh nonces from both sides:
//!
//! ```text
//! C -> S  HELLO      principal, client_nonce, declared stamps
//! S -> C  HELLO_ACK  server_nonce, server_proof
//! C -> S  ACK        client_proof
//! S -> C  ACK        session established
//! ```
//!
//! Both proofs are HMACs over the nonce exchange keyed by the pre-shared
//! secret; the fresh server nonce makes a replayed transcript fail with
//! `BadCredential`. The derived session key never equals a data key — data
//! keys stay on the client.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::crypto::{hmac_sha256, mac_eq, sha256};

pub const MAGIC: [u8; 4] = *b"AAS1";
pub const FRAME_HEADER_LEN: usize = 4 + 1 + 4;
pub const MAX_FRAME_PAYLOAD: usize = 16 * 1024 * 1024;
pub const SESSION_NONCE_LEN: usize = 16;

const SESSION_KEY_DOMAIN: &[u8] = b"aas/session/v1";
const SERVER_PROOF_DOMAIN: &[u8] = b"aas/proof/server/v1";
const CLIENT_PROOF_DOMAIN: &[u8] = b"aas/proof/client/v1";
const SESSION_ID_DOMAIN: &[u8] = b"aas/session-id/v1";

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("bad frame magic")]
    BadMagic,
    #[error("unknown frame type {0}")]
    BadType(u8),
    #[error("frame length mismatch: declared {declared}, available {available}")]
    LengthMismatch { declared: usize, available: usize },
    #[error("frame payload of {0} bytes exceeds the 16 MiB limit")]
    Oversize(usize),
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("connection lost")]
    ConnectionLost,
    #[error("server error {code:?}: {message}")]
    ServerError { code: ErrorCode, message: String },
    #[error("unknown principal")]
    UnknownPrincipal,
    #[error("credential verification failed")]
    BadCredential,
    #[error("declared stamps missing or empty")]
    StampsMissing,
    #[error("unexpected frame {got:?}, expected {expected}")]
    UnexpectedFrame { got: FrameType, expected: &'static str },
    #[error("principals file line {0} is not `name = hex`")]
    PrincipalsParse(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Hello = 1,
    HelloAck = 2,
    Put = 3,
    Get = 4,
    Delete = 5,
    List = 6,
    Stream = 7,
    Ack = 8,
    Err = 9,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => FrameType::Hello,
            2 => FrameType::HelloAck,
            3 => FrameType::Put,
            4 => FrameType::Get,
            5 => FrameType::Delete,
            6 => FrameType::List,
            7 => FrameType::Stream,
            8 => FrameType::Ack,
            9 => FrameType::Err,
            _ => return None,
        })
    }
}

/// Error codes carried in ERR frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    NotFound = 1,
    Denied = 2,
    Storage = 3,
    BadRequest = 4,
    BadCredential = 5,
    UnknownPrincipal = 6,
    StampsMissing = 7,
    Protocol = 8,
    Internal = 9,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        Some(match v {
            1 => ErrorCode::NotFound,
            2 => ErrorCode::Denied,
            3 => ErrorCode::Storage,
            4 => ErrorCode::BadRequest,
            5 => ErrorCode::BadCredential,
            6 => ErrorCode::UnknownPrincipal,
            7 => ErrorCode::StampsMissing,
            8 => ErrorCode::Protocol,
            9 => ErrorCode::Internal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(frame_type: FrameType, payload: Vec<u8>) -> Self {
        Self {
            frame_type,
            payload,
        }
    }
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(frame.frame_type as u8);
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    out
}

/// Decode one frame from the front of `bytes`; returns the frame and the
/// number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(WireError::LengthMismatch {
            declared: FRAME_HEADER_LEN,
            available: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    let frame_type = FrameType::from_byte(bytes[4]).ok_or(WireError::BadType(bytes[4]))?;
    let declared = u32::from_be_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if declared > MAX_FRAME_PAYLOAD {
        return Err(WireError::Oversize(declared));
    }
    let available = bytes.len() - FRAME_HEADER_LEN;
    if available < declared {
        return Err(WireError::LengthMismatch {
            declared,
            available,
        });
    }
    Ok((
        Frame {
            frame_type,
            payload: bytes[FRAME_HEADER_LEN..FRAME_HEADER_LEN + declared].to_vec(),
        },
        FRAME_HEADER_LEN + declared,
    ))
}

/// Read exactly one frame from a byte stream.
pub fn read_frame(reader: &mut impl Read) -> Result<Frame, WireError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    reader.read_exact(&mut header)?;
    if header[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    let frame_type = FrameType::from_byte(header[4]).ok_or(WireError::BadType(header[4]))?;
    let declared = u32::from_be_bytes(header[5..9].try_into().unwrap()) as usize;
    if declared > MAX_FRAME_PAYLOAD {
        return Err(WireError::Oversize(declared));
    }
    let mut payload = vec![0u8; declared];
    reader.read_exact(&mut payload)?;
    Ok(Frame {
        frame_type,
        payload,
    })
}

pub fn write_frame(writer: &mut impl Write, frame: &Frame) -> Result<Vec<u8>, WireError> {
    let bytes = encode_frame(frame);
    writer.write_all(&bytes)?;
    writer.flush()?;
    Ok(bytes)
}

// --- field helpers ---------------------------------------------------------

fn push_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn take_str16(bytes: &[u8], off: &mut usize) -> Result<String, WireError> {
    let len = bytes
        .get(*off..*off + 2)
        .ok_or(WireError::Malformed("string length"))?;
    let len = u16::from_be_bytes(len.try_into().unwrap()) as usize;
    *off += 2;
    let s = bytes
        .get(*off..*off + len)
        .ok_or(WireError::Malformed("string body"))?;
    *off += len;
    String::from_utf8(s.to_vec()).map_err(|_| WireError::Malformed("string utf-8"))
}

// --- handshake payloads ----------------------------------------------------

/// Client-declared stamps carried in HELLO; the network address stamp is
/// always the server-observed peer address, never client-claimed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeclaredStamps {
    pub location_zone: String,
    pub application: String,
    pub device_id: String,
}

impl DeclaredStamps {
    pub fn is_complete(&self) -> bool {
        !self.location_zone.is_empty() && !self.application.is_empty() && !self.device_id.is_empty()
    }
}

/// HELLO payload: `principal_len u8 || principal || client_nonce (16) ||`
/// stamps as `u16`-length-prefixed UTF-8 fields in fixed order
/// (location_zone, application, device_id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloPayload {
    pub principal: String,
    pub client_nonce: [u8; SESSION_NONCE_LEN],
    pub stamps: DeclaredStamps,
}

impl HelloPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.principal.len() + SESSION_NONCE_LEN + 32);
        out.push(self.principal.len() as u8);
        out.extend_from_slice(self.principal.as_bytes());
        out.extend_from_slice(&self.client_nonce);
        push_str16(&mut out, &self.stamps.location_zone);
        push_str16(&mut out, &self.stamps.application);
        push_str16(&mut out, &self.stamps.device_id);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let plen = *bytes.first().ok_or(WireError::Malformed("hello payload"))? as usize;
        let mut off = 1usize;
        let principal = bytes
            .get(off..off + plen)
            .ok_or(WireError::Malformed("hello principal"))?;
        let principal = std::str::from_utf8(principal)
            .map_err(|_| WireError::Malformed("hello principal utf-8"))?
            .to_string();
        off += plen;
        let nonce = bytes
            .get(off..off + SESSION_NONCE_LEN)
            .ok_or(WireError::Malformed("hello nonce"))?;
        let mut client_nonce = [0u8; SESSION_NONCE_LEN];
        client_nonce.copy_from_slice(nonce);
        off += SESSION_NONCE_LEN;
        let location_zone = take_str16(bytes, &mut off)?;
        let application = take_str16(bytes, &mut off)?;
        let device_id = take_str16(bytes, &mut off)?;
        if off != bytes.len() {
            return Err(WireError::Malformed("hello trailing bytes"));
        }
        Ok(Self {
            principal,
            client_nonce,
            stamps: DeclaredStamps {
                location_zone,
                application,
                device_id,
            },
        })
    }
}

/// HELLO_ACK payload: `server_nonce (16) || server_proof (32)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloAckPayload {
    pub server_nonce: [u8; SESSION_NONCE_LEN],
    pub server_proof: [u8; 32],
}

impl HelloAckPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SESSION_NONCE_LEN + 32);
        out.extend_from_slice(&self.server_nonce);
        out.extend_from_slice(&self.server_proof);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != SESSION_NONCE_LEN + 32 {
            return Err(WireError::Malformed("hello-ack payload"));
        }
        let mut server_nonce = [0u8; SESSION_NONCE_LEN];
        server_nonce.copy_from_slice(&bytes[..SESSION_NONCE_LEN]);
        let mut server_proof = [0u8; 32];
        server_proof.copy_from_slice(&bytes[SESSION_NONCE_LEN..]);
        Ok(Self {
            server_nonce,
            server_proof,
        })
    }
}

// --- request payloads ------------------------------------------------------

/// Owner-qualified object name. Requests carry the owner explicitly so the
/// gateway can refuse (and log) cross-principal access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectRef {
    pub owner: String,
    pub object_id: String,
}

impl ObjectRef {
    pub fn new(owner: impl Into<String>, object_id: impl Into<String>) -> Self {
        Self {
            owner: owner.into(),
            object_id: object_id.into(),
        }
    }

    pub fn qualified(&self) -> String {
        format!("{}/{}", self.owner, self.object_id)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 + self.owner.len() + self.object_id.len());
        out.push(self.owner.len() as u8);
        out.extend_from_slice(self.owner.as_bytes());
        push_str16(&mut out, &self.object_id);
        out
    }

    /// Decode from the front of `bytes`; returns the reference and bytes
    /// consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), WireError> {
        let olen = *bytes.first().ok_or(WireError::Malformed("object ref"))? as usize;
        let mut off = 1usize;
        let owner = bytes
            .get(off..off + olen)
            .ok_or(WireError::Malformed("object owner"))?;
        let owner = std::str::from_utf8(owner)
            .map_err(|_| WireError::Malformed("object owner utf-8"))?
            .to_string();
        off += olen;
        let object_id = take_str16(bytes, &mut off)?;
        Ok((Self { owner, object_id }, off))
    }
}

pub fn encode_list_ack(ids: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(ids.len() as u32).to_be_bytes());
    for id in ids {
        push_str16(&mut out, id);
    }
    out
}

pub fn decode_list_ack(bytes: &[u8]) -> Result<Vec<String>, WireError> {
    let count = bytes
        .get(..4)
        .ok_or(WireError::Malformed("list count"))
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))? as usize;
    let mut off = 4usize;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(take_str16(bytes, &mut off)?);
    }
    if off != bytes.len() {
        return Err(WireError::Malformed("list trailing bytes"));
    }
    Ok(ids)
}

pub fn encode_err(code: ErrorCode, message: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + message.len());
    out.extend_from_slice(&(code as u16).to_be_bytes());
    push_str16(&mut out, message);
    out
}

pub fn decode_err(bytes: &[u8]) -> Result<(ErrorCode, String), WireError> {
    let code = bytes
        .get(..2)
        .ok_or(WireError::Malformed("err code"))
        .map(|b| u16::from_be_bytes(b.try_into().unwrap()))?;
    let code = ErrorCode::from_u16(code).ok_or(WireError::Malformed("err code value"))?;
    let mut off = 2usize;
    let message = take_str16(bytes, &mut off)?;
    Ok((code, message))
}

// --- session key derivation --------------------------------------------------

pub fn derive_session_key(
    psk: &[u8; 32],
    client_nonce: &[u8; SESSION_NONCE_LEN],
    server_nonce: &[u8; SESSION_NONCE_LEN],
) -> [u8; 32] {
    hmac_sha256(psk, &[SESSION_KEY_DOMAIN, client_nonce, server_nonce])
}

pub fn derive_session_id(
    client_nonce: &[u8; SESSION_NONCE_LEN],
    server_nonce: &[u8; SESSION_NONCE_LEN],
) -> [u8; 16] {
    let digest = sha256(&[SESSION_ID_DOMAIN, client_nonce, server_nonce]);
    digest[..16].try_into().unwrap()
}

pub fn server_proof(
    psk: &[u8; 32],
    client_nonce: &[u8; SESSION_NONCE_LEN],
    server_nonce: &[u8; SESSION_NONCE_LEN],
) -> [u8; 32] {
    hmac_sha256(psk, &[SERVER_PROOF_DOMAIN, client_nonce, server_nonce])
}

/// Client proof binds the fresh server nonce and the declared stamps, so a
/// replayed transcript (or altered stamps) cannot authenticate.
pub fn client_proof(
    psk: &[u8; 32],
    client_nonce: &[u8; SESSION_NONCE_LEN],
    server_nonce: &[u8; SESSION_NONCE_LEN],
    hello_payload: &[u8],
) -> [u8; 32] {
    let stamps_digest = sha256(&[hello_payload]);
    hmac_sha256(
        psk,
        &[CLIENT_PROOF_DOMAIN, server_nonce, client_nonce, &stamps_digest],
    )
}

pub fn proofs_equal(a: &[u8; 32], b: &[u8; 32]) -> bool {
    mac_eq(a, b)
}

/// One authenticated connection's shared state, as seen by either endpoint.
#[derive(Debug, Clone)]
pub struct Session {
    pub session_id: [u8; 16],
    pub session_key: [u8; 32],
    pub principal: String,
    /// Peer address as observed by the server.
    pub network_address: String,
    pub stamps: DeclaredStamps,
}

// --- principal table ---------------------------------------------------------

/// Pre-shared principal secrets: one `name = <64 hex digits>` line per
/// principal. At desk scale the same file provisions server and clients.
#[derive(Debug, Default)]
pub struct PrincipalTable {
    secrets: BTreeMap<String, [u8; 32]>,
}

impl PrincipalTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, principal: impl Into<String>, secret: [u8; 32]) {
        self.secrets.insert(principal.into(), secret);
    }

    pub fn secret(&self, principal: &str) -> Option<&[u8; 32]> {
        self.secrets.get(principal)
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WireError> {
        let text = std::fs::read_to_string(path)?;
        let mut table = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = || WireError::PrincipalsParse(idx + 1);
            let (name, hex_secret) = line.split_once('=').ok_or_else(parse_err)?;
            let bytes = hex::decode(hex_secret.trim()).map_err(|_| parse_err())?;
            let secret: [u8; 32] = bytes.try_into().map_err(|_| parse_err())?;
            table.insert(name.trim(), secret);
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WireError> {
        let mut out = String::new();
        for (name, secret) in &self.secrets {
            out.push_str(name);
            out.push_str(" = ");
            out.push_str(&hex::encode(secret));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
