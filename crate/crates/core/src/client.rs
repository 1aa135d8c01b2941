//! Client endpoint: connects, runs the mutual handshake, and moves envelope
//! bytes through the chaffed transport. Optional taps tee every frame, byte
//! for byte, into capture transcripts for the adversary harness.

use std::io::Read;
use std::net::TcpStream;

use rand::RngCore;

use crate::adversary::Tap;
use crate::chaff::{self, ChaffError, ChaffPolicy, MergedStream};
use crate::wire::{
    self, client_proof, decode_err, decode_list_ack, derive_session_id, derive_session_key,
    encode_frame, DeclaredStamps, ErrorCode, Frame, FrameType, HelloAckPayload, HelloPayload,
    ObjectRef, Session, WireError, SESSION_NONCE_LEN,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Chaff(#[from] ChaffError),
}

pub struct Client {
    stream: TcpStream,
    session: Session,
    tx_tap: Option<Tap>,
    rx_tap: Option<Tap>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("principal", &self.session.principal)
            .field("session_id", &hex::encode(self.session.session_id))
            .finish()
    }
}

impl Client {
    pub fn connect(
        addr: &str,
        principal: &str,
        psk: &[u8; 32],
        stamps: DeclaredStamps,
    ) -> Result<Self, ClientError> {
        Self::connect_tapped(addr, principal, psk, stamps, None, None)
    }

    /// Connect with passive capture taps on the transmit and receive sides.
    pub fn connect_tapped(
        addr: &str,
        principal: &str,
        psk: &[u8; 32],
        stamps: DeclaredStamps,
        tx_tap: Option<Tap>,
        rx_tap: Option<Tap>,
    ) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(WireError::Io)?;
        stream.set_nodelay(true).map_err(WireError::Io)?;
        let mut client = Self {
            stream,
            session: Session {
                session_id: [0; 16],
                session_key: [0; 32],
                principal: principal.to_string(),
                network_address: String::new(),
                stamps: stamps.clone(),
            },
            tx_tap,
            rx_tap,
        };
        client.handshake(principal, psk, stamps)?;
        Ok(client)
    }

    fn handshake(
        &mut self,
        principal: &str,
        psk: &[u8; 32],
        stamps: DeclaredStamps,
    ) -> Result<(), ClientError> {
        let mut client_nonce = [0u8; SESSION_NONCE_LEN];
        rand::rngs::OsRng.fill_bytes(&mut client_nonce);
        let hello = HelloPayload {
            principal: principal.to_string(),
            client_nonce,
            stamps,
        };
        let hello_bytes = hello.encode();
        self.send(&Frame::new(FrameType::Hello, hello_bytes.clone()))?;

        let ack = self.recv()?;
        let ack = match ack.frame_type {
            FrameType::HelloAck => HelloAckPayload::decode(&ack.payload)?,
            FrameType::Err => return Err(handshake_err(&ack.payload).into()),
            other => {
                return Err(WireError::UnexpectedFrame {
                    got: other,
                    expected: "HELLO_ACK",
                }
                .into())
            }
        };
        let expect = wire::server_proof(psk, &client_nonce, &ack.server_nonce);
        if !wire::proofs_equal(&expect, &ack.server_proof) {
            return Err(WireError::BadCredential.into());
        }

        let proof = client_proof(psk, &client_nonce, &ack.server_nonce, &hello_bytes);
        self.send(&Frame::new(FrameType::Ack, proof.to_vec()))?;
        let done = self.recv()?;
        match done.frame_type {
            FrameType::Ack => {}
            FrameType::Err => return Err(handshake_err(&done.payload).into()),
            other => {
                return Err(WireError::UnexpectedFrame {
                    got: other,
                    expected: "ACK",
                }
                .into())
            }
        }

        self.session.session_key = derive_session_key(psk, &client_nonce, &ack.server_nonce);
        self.session.session_id = derive_session_id(&client_nonce, &ack.server_nonce);
        self.session.network_address = self
            .stream
            .local_addr()
            .map(|a| a.to_string())
            .unwrap_or_default();
        Ok(())
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Chaff the envelope bytes under the session key and store them under
    /// `object`.
    pub fn put(
        &mut self,
        object: &ObjectRef,
        envelope_bytes: &[u8],
        policy: &ChaffPolicy,
    ) -> Result<(), ClientError> {
        let stream = chaff::merge_payload(envelope_bytes, policy, &self.session.session_key)?;
        let mut payload = object.encode();
        payload.extend_from_slice(&stream.to_bytes());
        self.send(&Frame::new(FrameType::Put, payload))?;
        self.expect_ack()?;
        Ok(())
    }

    /// Fetch and de-chaff the stored envelope bytes for `object`.
    pub fn get(&mut self, object: &ObjectRef) -> Result<Vec<u8>, ClientError> {
        self.send(&Frame::new(FrameType::Get, object.encode()))?;
        let frame = self.recv()?;
        match frame.frame_type {
            FrameType::Stream => {
                let stream = MergedStream::from_bytes(&frame.payload)?;
                Ok(chaff::extract(&stream, &self.session.session_key)?)
            }
            FrameType::Err => Err(server_err(&frame.payload).into()),
            other => Err(WireError::UnexpectedFrame {
                got: other,
                expected: "STREAM",
            }
            .into()),
        }
    }

    pub fn delete(&mut self, object: &ObjectRef) -> Result<(), ClientError> {
        self.send(&Frame::new(FrameType::Delete, object.encode()))?;
        self.expect_ack()?;
        Ok(())
    }

    pub fn list(&mut self) -> Result<Vec<String>, ClientError> {
        self.send(&Frame::new(FrameType::List, Vec::new()))?;
        let payload = self.expect_ack()?;
        Ok(decode_list_ack(&payload)?)
    }

    fn expect_ack(&mut self) -> Result<Vec<u8>, ClientError> {
        let frame = self.recv()?;
        match frame.frame_type {
            FrameType::Ack => Ok(frame.payload),
            FrameType::Err => Err(server_err(&frame.payload).into()),
            other => Err(WireError::UnexpectedFrame {
                got: other,
                expected: "ACK",
            }
            .into()),
        }
    }

    fn send(&mut self, frame: &Frame) -> Result<(), WireError> {
        let bytes = encode_frame(frame);
        if let Some(tap) = &self.tx_tap {
            tap.record(&bytes);
        }
        std::io::Write::write_all(&mut self.stream, &bytes)?;
        std::io::Write::flush(&mut self.stream)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, WireError> {
        let (frame, raw) = read_frame_raw(&mut self.stream)?;
        if let Some(tap) = &self.rx_tap {
            tap.record(&raw);
        }
        Ok(frame)
    }
}

/// Read one frame, returning both the parsed frame and its raw bytes (the
/// taps must capture exactly what crossed the wire).
pub(crate) fn read_frame_raw(reader: &mut impl Read) -> Result<(Frame, Vec<u8>), WireError> {
    let mut header = [0u8; wire::FRAME_HEADER_LEN];
    reader.read_exact(&mut header).map_err(map_eof)?;
    if header[..4] != wire::MAGIC {
        return Err(WireError::BadMagic);
    }
    let frame_type = FrameType::from_byte(header[4]).ok_or(WireError::BadType(header[4]))?;
    let declared = u32::from_be_bytes(header[5..9].try_into().unwrap()) as usize;
    if declared > wire::MAX_FRAME_PAYLOAD {
        return Err(WireError::Oversize(declared));
    }
    let mut payload = vec![0u8; declared];
    reader.read_exact(&mut payload).map_err(map_eof)?;
    let mut raw = Vec::with_capacity(wire::FRAME_HEADER_LEN + declared);
    raw.extend_from_slice(&header);
    raw.extend_from_slice(&payload);
    Ok((
        Frame {
            frame_type,
            payload,
        },
        raw,
    ))
}

fn map_eof(e: std::io::Error) -> WireError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        WireError::ConnectionLost
    } else {
        WireError::Io(e)
    }
}

fn server_err(payload: &[u8]) -> WireError {
    match decode_err(payload) {
        Ok((code, message)) => WireError::ServerError { code, message },
        Err(e) => e,
    }
}

fn handshake_err(payload: &[u8]) -> WireError {
    match decode_err(payload) {
        Ok((ErrorCode::UnknownPrincipal, _)) => WireError::UnknownPrincipal,
        Ok((ErrorCode::BadCredential, _)) => WireError::BadCredential,
        Ok((ErrorCode::StampsMissing, _)) => WireError::StampsMissing,
        Ok((code, message)) => WireError::ServerError { code, message },
        Err(e) => e,
    }
}
