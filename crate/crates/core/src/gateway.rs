//! Layer 3, the secure access gateway: the sole path to stored objects. It
//! executes blind operations on opaque envelope bytes (the server holds no
//! data key and never parses past length checks), enforces owner-match, and
//! appends exactly one stamped ledger entry per access attempt — OK, DENIED,
//! NOT_FOUND or ERROR alike. An access is acknowledged only after its log
//! block is flushed; there is no unlogged success.

use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use crate::clock::Clock;
use crate::ledger::{Ledger, LedgerError, NewEntry, OpKind, Outcome};
use crate::wire::{ObjectRef, Session};

pub const MAX_OBJECT_ID_LEN: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("access denied")]
    Denied,
    #[error("object not found")]
    NotFound,
    #[error("invalid request: {0}")]
    Invalid(&'static str),
    #[error("storage failure: {0}")]
    Storage(#[source] io::Error),
    #[error("ledger failure: {0}")]
    Ledger(#[from] LedgerError),
}

/// Stamps describing the requester, resolved server-side: identity is the
/// authenticated principal (never client-claimed) and network is the
/// observed peer address.
#[derive(Debug, Clone)]
pub struct RequesterStamps {
    pub identity: String,
    pub network: String,
    pub location_zone: String,
    pub application: String,
    pub device_id: String,
}

impl RequesterStamps {
    pub fn from_session(session: &Session) -> Self {
        Self {
            identity: session.principal.clone(),
            network: session.network_address.clone(),
            location_zone: session.stamps.location_zone.clone(),
            application: session.stamps.application.clone(),
            device_id: session.stamps.device_id.clone(),
        }
    }

    /// Stamps for attempts that never authenticated; unknown fields are
    /// recorded explicitly rather than dropped.
    pub fn unauthenticated(network: impl Into<String>) -> Self {
        Self {
            identity: "unauthenticated".into(),
            network: network.into(),
            location_zone: "unknown".into(),
            application: "unknown".into(),
            device_id: "unknown".into(),
        }
    }
}

/// A blind operation over envelope bytes. The gateway neither opens nor
/// inspects them.
#[derive(Debug, Clone)]
pub enum Operation {
    Put {
        object: ObjectRef,
        envelope_bytes: Vec<u8>,
    },
    Get {
        object: ObjectRef,
    },
    Delete {
        object: ObjectRef,
    },
    List,
}

impl Operation {
    pub fn op_kind(&self) -> OpKind {
        match self {
            Operation::Put { .. } => OpKind::Put,
            Operation::Get { .. } => OpKind::Get,
            Operation::Delete { .. } => OpKind::Delete,
            Operation::List => OpKind::List,
        }
    }

    fn object(&self) -> Option<&ObjectRef> {
        match self {
            Operation::Put { object, .. }
            | Operation::Get { object }
            | Operation::Delete { object } => Some(object),
            Operation::List => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpResult {
    Done,
    Envelope(Vec<u8>),
    Listing(Vec<String>),
}

pub struct Gateway {
    storage: Storage,
    ledger: Arc<Ledger>,
    clock: Arc<dyn Clock>,
    object_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Gateway {
    pub fn new(
        data_dir: impl Into<PathBuf>,
        ledger: Arc<Ledger>,
        clock: Arc<dyn Clock>,
    ) -> io::Result<Self> {
        let storage = Storage::new(data_dir.into())?;
        Ok(Self {
            storage,
            ledger,
            clock,
            object_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    /// Execute one access attempt: validate, enforce owner-match, run the
    /// blind storage operation, and append the stamped ledger entry. The
    /// entry is durable before a success is returned; a ledger failure turns
    /// the whole request into a failure.
    pub fn authorize_and_execute(
        &self,
        requester: &RequesterStamps,
        op: Operation,
    ) -> Result<OpResult, GatewayError> {
        let op_kind = op.op_kind();
        let logged_object = op.object().map(|o| o.qualified()).unwrap_or_default();

        let result = self.execute_inner(requester, &op);
        let outcome = match &result {
            Ok(_) => Outcome::Ok,
            Err(GatewayError::Denied) => Outcome::Denied,
            Err(GatewayError::NotFound) => Outcome::NotFound,
            Err(_) => Outcome::Error,
        };
        self.log_attempt(requester, op_kind, &logged_object, outcome)?;
        result
    }

    fn execute_inner(
        &self,
        requester: &RequesterStamps,
        op: &Operation,
    ) -> Result<OpResult, GatewayError> {
        if let Some(object) = op.object() {
            if object.object_id.is_empty() {
                return Err(GatewayError::Invalid("empty object id"));
            }
            if object.object_id.len() > MAX_OBJECT_ID_LEN {
                return Err(GatewayError::Invalid("object id longer than 256 bytes"));
            }
            if object.owner.is_empty() {
                return Err(GatewayError::Invalid("empty owner"));
            }
            // owner-match: a principal reaches only its own objects
            if object.owner != requester.identity {
                return Err(GatewayError::Denied);
            }
        }

        match op {
            Operation::Put {
                object,
                envelope_bytes,
            } => {
                if envelope_bytes.is_empty() {
                    return Err(GatewayError::Invalid("empty envelope"));
                }
                let _guard = self.lock_object(object);
                let guard = _guard.lock().expect("object lock poisoned");
                let res = self.storage.put(object, envelope_bytes);
                drop(guard);
                res.map(|_| OpResult::Done).map_err(GatewayError::Storage)
            }
            Operation::Get { object } => {
                let _guard = self.lock_object(object);
                let guard = _guard.lock().expect("object lock poisoned");
                let res = self.storage.get(object);
                drop(guard);
                match res {
                    Ok(Some(bytes)) => Ok(OpResult::Envelope(bytes)),
                    Ok(None) => Err(GatewayError::NotFound),
                    Err(e) => Err(GatewayError::Storage(e)),
                }
            }
            Operation::Delete { object } => {
                let _guard = self.lock_object(object);
                let guard = _guard.lock().expect("object lock poisoned");
                let res = self.storage.delete(object);
                drop(guard);
                match res {
                    Ok(true) => Ok(OpResult::Done),
                    Ok(false) => Err(GatewayError::NotFound),
                    Err(e) => Err(GatewayError::Storage(e)),
                }
            }
            Operation::List => self
                .storage
                .list(&requester.identity)
                .map(OpResult::Listing)
                .map_err(GatewayError::Storage),
        }
    }

    fn lock_object(&self, object: &ObjectRef) -> Arc<Mutex<()>> {
        let mut locks = self.object_locks.lock().expect("lock table poisoned");
        locks
            .entry(object.qualified())
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone()
    }

    /// Assemble the six-stamp log entry for one attempt. Never blocks the
    /// access path: time comes from the injected clock and all other fields
    /// are already resolved.
    pub fn collect_stamps(
        &self,
        requester: &RequesterStamps,
        op: OpKind,
        object_id: &str,
        outcome: Outcome,
    ) -> NewEntry {
        NewEntry {
            time_ns: self.clock.now_ns(),
            identity: requester.identity.clone(),
            network: requester.network.clone(),
            location_zone: requester.location_zone.clone(),
            application: requester.application.clone(),
            device_id: requester.device_id.clone(),
            op,
            object_id: object_id.to_string(),
            outcome,
        }
    }

    /// Append one stamped entry; used by `authorize_and_execute` and by the
    /// transport layer for attempts that fail before reaching an operation
    /// (bad handshakes, undecodable streams).
    pub fn log_attempt(
        &self,
        requester: &RequesterStamps,
        op: OpKind,
        object_id: &str,
        outcome: Outcome,
    ) -> Result<(), LedgerError> {
        let entry = self.collect_stamps(requester, op, object_id, outcome);
        self.ledger.append(entry)?;
        Ok(())
    }
}

// --- storage backend ---------------------------------------------------------

/// Directory-per-owner key-value store: `data_dir/hex(owner)/hex(object_id)`
/// holds the raw envelope bytes. Put goes through a temp file and rename so
/// a crash never leaves a half-written object.
struct Storage {
    root: PathBuf,
}

impl Storage {
    fn new(root: PathBuf) -> io::Result<Self> {
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn object_path(&self, object: &ObjectRef) -> PathBuf {
        self.root
            .join(hex::encode(&object.owner))
            .join(hex::encode(&object.object_id))
    }

    fn put(&self, object: &ObjectRef, bytes: &[u8]) -> io::Result<()> {
        let path = self.object_path(object);
        let dir = path.parent().expect("object path has parent");
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".tmp-{}",
            hex::encode(rand::random::<[u8; 8]>())
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            io::Write::write_all(&mut f, bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn get(&self, object: &ObjectRef) -> io::Result<Option<Vec<u8>>> {
        match std::fs::read(self.object_path(object)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn delete(&self, object: &ObjectRef) -> io::Result<bool> {
        match std::fs::remove_file(self.object_path(object)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Owner's object ids, sorted lexicographically.
    fn list(&self, owner: &str) -> io::Result<Vec<String>> {
        let dir = self.root.join(hex::encode(owner));
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if name.starts_with(".tmp-") {
                continue;
            }
            if let Ok(raw) = hex::decode(name) {
                if let Ok(id) = String::from_utf8(raw) {
                    ids.push(id);
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
