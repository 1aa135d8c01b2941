//! Server endpoint: accepts sessions, verifies handshake proofs against the
//! principal table, de-chaffs incoming streams under the session key, and
//! routes every operation through the gateway. Failed handshakes and
//! pre-auth frames are logged as DENIED attempts; envelope bytes pass
//! through opaque.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::RngCore;

use crate::chaff::{self, ChaffPolicy, MergedStream};
use crate::client::read_frame_raw;
use crate::clock::Clock;
use crate::gateway::{Gateway, GatewayError, OpResult, Operation, RequesterStamps};
use crate::ledger::{Ledger, LedgerError, OpKind, Outcome};
use crate::wire::{
    client_proof, derive_session_id, derive_session_key, encode_err, encode_list_ack, server_proof,
    write_frame, ErrorCode, Frame, FrameType, HelloAckPayload, HelloPayload, ObjectRef,
    PrincipalTable, Session, WireError, SESSION_NONCE_LEN,
};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

pub struct ServerConfig {
    pub listen_addr: String,
    pub data_dir: PathBuf,
    pub ledger_path: PathBuf,
    pub principals: PrincipalTable,
    /// Policy used to re-chaff GET responses.
    pub chaff_policy: ChaffPolicy,
}

struct Shared {
    gateway: Gateway,
    principals: PrincipalTable,
    chaff_policy: ChaffPolicy,
}

/// Running server. Dropping the handle shuts the accept loop down; open
/// connections end when their peers hang up.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
    shared: Arc<Shared>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn gateway(&self) -> &Gateway {
        &self.shared.gateway
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        self.shared.gateway.ledger()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Block until the accept loop ends (it runs until shutdown).
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // poke the listener so accept() returns
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop();
        }
    }
}

/// Bind and start serving on a background thread.
pub fn spawn(config: ServerConfig, clock: Arc<dyn Clock>) -> Result<ServerHandle, ServerError> {
    let ledger = Arc::new(Ledger::open(&config.ledger_path)?);
    let gateway = Gateway::new(&config.data_dir, ledger, clock)?;
    let shared = Arc::new(Shared {
        gateway,
        principals: config.principals,
        chaff_policy: config.chaff_policy,
    });
    let listener = TcpListener::bind(&config.listen_addr)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));

    let accept_shared = shared.clone();
    let accept_shutdown = shutdown.clone();
    let accept_thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if accept_shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let shared = accept_shared.clone();
            std::thread::spawn(move || {
                let _ = handle_connection(stream, &shared);
            });
        }
    });

    Ok(ServerHandle {
        addr,
        shutdown,
        accept_thread: Some(accept_thread),
        shared,
    })
}

fn send_err(stream: &mut TcpStream, code: ErrorCode, message: &str) {
    let _ = write_frame(stream, &Frame::new(FrameType::Err, encode_err(code, message)));
}

fn handle_connection(mut stream: TcpStream, shared: &Shared) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "unknown".into());

    let session = match server_handshake(&mut stream, shared, &peer) {
        Ok(session) => session,
        Err(_) => return Ok(()), // logged and answered inside
    };
    let requester = RequesterStamps::from_session(&session);

    loop {
        let frame = match read_frame_raw(&mut stream) {
            Ok((frame, _)) => frame,
            Err(WireError::ConnectionLost) => return Ok(()),
            Err(WireError::Io(_)) => return Ok(()),
            Err(_) => {
                send_err(&mut stream, ErrorCode::Protocol, "unreadable frame");
                return Ok(());
            }
        };
        match frame.frame_type {
            FrameType::Put => handle_put(&mut stream, shared, &session, &requester, &frame)?,
            FrameType::Get => handle_get(&mut stream, shared, &session, &requester, &frame)?,
            FrameType::Delete => handle_delete(&mut stream, shared, &requester, &frame)?,
            FrameType::List => handle_list(&mut stream, shared, &requester)?,
            other => {
                send_err(
                    &mut stream,
                    ErrorCode::Protocol,
                    &format!("unexpected frame {other:?} in session"),
                );
                return Ok(());
            }
        }
    }
}

/// Server side of the four-frame handshake. Every failure is answered with
/// an ERR frame and logged as a DENIED attempt before the connection closes.
fn server_handshake(
    stream: &mut TcpStream,
    shared: &Shared,
    peer: &str,
) -> Result<Session, WireError> {
    let deny_auth = |obj: &str| {
        let _ = shared.gateway.log_attempt(
            &RequesterStamps::unauthenticated(peer),
            OpKind::Auth,
            obj,
            Outcome::Denied,
        );
    };

    let (first, _) = match read_frame_raw(stream) {
        Ok(v) => v,
        Err(WireError::ConnectionLost) | Err(WireError::Io(_)) => {
            return Err(WireError::ConnectionLost); // peer said nothing; no attempt to log
        }
        Err(e) => {
            deny_auth("");
            send_err(stream, ErrorCode::Protocol, "unreadable frame");
            return Err(e);
        }
    };

    let hello_bytes = match first.frame_type {
        FrameType::Hello => first.payload,
        // replayed or out-of-order data frame: log it under its own op kind
        FrameType::Put | FrameType::Get | FrameType::Delete | FrameType::List => {
            let op = match first.frame_type {
                FrameType::Put => OpKind::Put,
                FrameType::Get => OpKind::Get,
                FrameType::Delete => OpKind::Delete,
                _ => OpKind::List,
            };
            let object = ObjectRef::decode(&first.payload)
                .map(|(o, _)| o.qualified())
                .unwrap_or_default();
            let _ = shared.gateway.log_attempt(
                &RequesterStamps::unauthenticated(peer),
                op,
                &object,
                Outcome::Denied,
            );
            send_err(stream, ErrorCode::Denied, "handshake required");
            return Err(WireError::BadCredential);
        }
        other => {
            deny_auth("");
            send_err(stream, ErrorCode::Protocol, "expected HELLO");
            return Err(WireError::UnexpectedFrame {
                got: other,
                expected: "HELLO",
            });
        }
    };

    let hello = match HelloPayload::decode(&hello_bytes) {
        Ok(h) => h,
        Err(e) => {
            deny_auth("");
            send_err(stream, ErrorCode::BadRequest, "malformed HELLO");
            return Err(e);
        }
    };
    if !hello.stamps.is_complete() {
        deny_auth("");
        send_err(stream, ErrorCode::StampsMissing, "declared stamps incomplete");
        return Err(WireError::StampsMissing);
    }
    let Some(psk) = shared.principals.secret(&hello.principal) else {
        deny_auth("");
        send_err(stream, ErrorCode::UnknownPrincipal, "unknown principal");
        return Err(WireError::UnknownPrincipal);
    };

    let mut server_nonce = [0u8; SESSION_NONCE_LEN];
    rand::rngs::OsRng.fill_bytes(&mut server_nonce);
    let ack = HelloAckPayload {
        server_nonce,
        server_proof: server_proof(psk, &hello.client_nonce, &server_nonce),
    };
    write_frame(stream, &Frame::new(FrameType::HelloAck, ack.encode()))?;

    let proof_frame = match read_frame_raw(stream) {
        Ok((f, _)) => f,
        Err(e) => {
            deny_auth("");
            return Err(e);
        }
    };
    let ok = proof_frame.frame_type == FrameType::Ack
        && proof_frame.payload.len() == 32
        && {
            let mut got = [0u8; 32];
            got.copy_from_slice(&proof_frame.payload);
            let expect = client_proof(psk, &hello.client_nonce, &server_nonce, &hello_bytes);
            crate::wire::proofs_equal(&expect, &got)
        };
    if !ok {
        deny_auth("");
        send_err(stream, ErrorCode::BadCredential, "credential verification failed");
        return Err(WireError::BadCredential);
    }

    write_frame(stream, &Frame::new(FrameType::Ack, Vec::new()))?;
    Ok(Session {
        session_id: derive_session_id(&hello.client_nonce, &server_nonce),
        session_key: derive_session_key(psk, &hello.client_nonce, &server_nonce),
        principal: hello.principal,
        network_address: peer.to_string(),
        stamps: hello.stamps,
    })
}

fn gateway_err_code(err: &GatewayError) -> (ErrorCode, String) {
    let code = match err {
        GatewayError::Denied => ErrorCode::Denied,
        GatewayError::NotFound => ErrorCode::NotFound,
        GatewayError::Invalid(_) => ErrorCode::BadRequest,
        GatewayError::Storage(_) => ErrorCode::Storage,
        GatewayError::Ledger(_) => ErrorCode::Internal,
    };
    (code, err.to_string())
}

fn handle_put(
    stream: &mut TcpStream,
    shared: &Shared,
    session: &Session,
    requester: &RequesterStamps,
    frame: &Frame,
) -> Result<(), WireError> {
    let Ok((object, consumed)) = ObjectRef::decode(&frame.payload) else {
        send_err(stream, ErrorCode::BadRequest, "malformed PUT");
        return Ok(());
    };
    // de-chaff the transported stream back to opaque envelope bytes
    let envelope_bytes = MergedStream::from_bytes(&frame.payload[consumed..])
        .and_then(|s| chaff::extract(&s, &session.session_key));
    let envelope_bytes = match envelope_bytes {
        Ok(b) => b,
        Err(_) => {
            let _ = shared.gateway.log_attempt(
                requester,
                OpKind::Put,
                &object.qualified(),
                Outcome::Error,
            );
            send_err(stream, ErrorCode::BadRequest, "undecodable stream");
            return Ok(());
        }
    };
    match shared.gateway.authorize_and_execute(
        requester,
        Operation::Put {
            object,
            envelope_bytes,
        },
    ) {
        Ok(_) => {
            write_frame(stream, &Frame::new(FrameType::Ack, Vec::new()))?;
        }
        Err(e) => {
            let (code, msg) = gateway_err_code(&e);
            send_err(stream, code, &msg);
        }
    }
    Ok(())
}

fn handle_get(
    stream: &mut TcpStream,
    shared: &Shared,
    session: &Session,
    requester: &RequesterStamps,
    frame: &Frame,
) -> Result<(), WireError> {
    let Ok((object, _)) = ObjectRef::decode(&frame.payload) else {
        send_err(stream, ErrorCode::BadRequest, "malformed GET");
        return Ok(());
    };
    match shared
        .gateway
        .authorize_and_execute(requester, Operation::Get { object })
    {
        Ok(OpResult::Envelope(envelope_bytes)) => {
            // re-chaff under the session key with the server's policy
            match chaff::merge_payload(&envelope_bytes, &shared.chaff_policy, &session.session_key)
            {
                Ok(merged) => {
                    write_frame(stream, &Frame::new(FrameType::Stream, merged.to_bytes()))?;
                }
                Err(_) => send_err(stream, ErrorCode::Internal, "re-chaff failed"),
            }
        }
        Ok(_) => send_err(stream, ErrorCode::Internal, "unexpected result"),
        Err(e) => {
            let (code, msg) = gateway_err_code(&e);
            send_err(stream, code, &msg);
        }
    }
    Ok(())
}

fn handle_delete(
    stream: &mut TcpStream,
    shared: &Shared,
    requester: &RequesterStamps,
    frame: &Frame,
) -> Result<(), WireError> {
    let Ok((object, _)) = ObjectRef::decode(&frame.payload) else {
        send_err(stream, ErrorCode::BadRequest, "malformed DELETE");
        return Ok(());
    };
    match shared
        .gateway
        .authorize_and_execute(requester, Operation::Delete { object })
    {
        Ok(_) => {
            write_frame(stream, &Frame::new(FrameType::Ack, Vec::new()))?;
        }
        Err(e) => {
            let (code, msg) = gateway_err_code(&e);
            send_err(stream, code, &msg);
        }
    }
    Ok(())
}

fn handle_list(
    stream: &mut TcpStream,
    shared: &Shared,
    requester: &RequesterStamps,
) -> Result<(), WireError> {
    match shared
        .gateway
        .authorize_and_execute(requester, Operation::List)
    {
        Ok(OpResult::Listing(ids)) => {
            write_frame(stream, &Frame::new(FrameType::Ack, encode_list_ack(&ids)))?;
        }
        Ok(_) => send_err(stream, ErrorCode::Internal, "unexpected result"),
        Err(e) => {
            let (code, msg) = gateway_err_code(&e);
            send_err(stream, code, &msg);
        }
    }
    Ok(())
}
