//! Tamper-evident, append-only store of access-log entries. Each entry is
//! wrapped in a [`LedgerBlock`] whose hash chains to its predecessor, so any
//! byte change in an earlier record invalidates every later block hash. A
//! sidecar file mirrors the tail hash after each append, making truncation
//! (not just mutation) detectable.
//!
//! This is the artifact shown to auditors instead of the data itself: blocks
//! carry log stamps only, never envelope bytes.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::Serialize;

use crate::crypto::sha256;

pub const HASH_LEN: usize = 32;
const GENESIS_PREV: [u8; HASH_LEN] = [0u8; HASH_LEN];

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("ledger corrupt at block {0}")]
    Corrupt(u64),
    #[error("entry field exceeds 65535 bytes")]
    FieldTooLong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OpKind {
    Put,
    Get,
    Delete,
    List,
    /// Handshake / authentication attempt that never reached an operation.
    Auth,
}

impl OpKind {
    fn to_byte(self) -> u8 {
        match self {
            OpKind::Put => 1,
            OpKind::Get => 2,
            OpKind::Delete => 3,
            OpKind::List => 4,
            OpKind::Auth => 5,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => OpKind::Put,
            2 => OpKind::Get,
            3 => OpKind::Delete,
            4 => OpKind::List,
            5 => OpKind::Auth,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Put => "PUT",
            OpKind::Get => "GET",
            OpKind::Delete => "DELETE",
            OpKind::List => "LIST",
            OpKind::Auth => "AUTH",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Ok,
    Denied,
    NotFound,
    Error,
}

impl Outcome {
    fn to_byte(self) -> u8 {
        match self {
            Outcome::Ok => 0,
            Outcome::Denied => 1,
            Outcome::NotFound => 2,
            Outcome::Error => 3,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Outcome::Ok,
            1 => Outcome::Denied,
            2 => Outcome::NotFound,
            3 => Outcome::Error,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "OK",
            Outcome::Denied => "DENIED",
            Outcome::NotFound => "NOT_FOUND",
            Outcome::Error => "ERROR",
        }
    }
}

/// One stamped record per storage access attempt: the six stamps plus the
/// operation and its outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessLogEntry {
    pub seq: u64,
    pub time_ns: u64,
    pub identity: String,
    pub network: String,
    pub location_zone: String,
    pub application: String,
    pub device_id: String,
    pub op: OpKind,
    pub object_id: String,
    pub outcome: Outcome,
}

/// Entry fields before the ledger assigns `seq` (and clamps `time_ns`
/// non-decreasing).
#[derive(Debug, Clone)]
pub struct NewEntry {
    pub time_ns: u64,
    pub identity: String,
    pub network: String,
    pub location_zone: String,
    pub application: String,
    pub device_id: String,
    pub op: OpKind,
    pub object_id: String,
    pub outcome: Outcome,
}

impl AccessLogEntry {
    /// Canonical serialization: fixed field order, `u16`-length-prefixed
    /// strings, big-endian integers. This is what `entry_hash` digests.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, LedgerError> {
        let mut out = Vec::with_capacity(64 + self.identity.len() + self.object_id.len());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.time_ns.to_be_bytes());
        for s in [
            &self.identity,
            &self.network,
            &self.location_zone,
            &self.application,
            &self.device_id,
        ] {
            push_str(&mut out, s)?;
        }
        out.push(self.op.to_byte());
        push_str(&mut out, &self.object_id)?;
        out.push(self.outcome.to_byte());
        Ok(out)
    }

    fn from_canonical(bytes: &[u8]) -> Option<Self> {
        let mut off = 0usize;
        let seq = take_u64(bytes, &mut off)?;
        let time_ns = take_u64(bytes, &mut off)?;
        let identity = take_str(bytes, &mut off)?;
        let network = take_str(bytes, &mut off)?;
        let location_zone = take_str(bytes, &mut off)?;
        let application = take_str(bytes, &mut off)?;
        let device_id = take_str(bytes, &mut off)?;
        let op = OpKind::from_byte(*bytes.get(off)?)?;
        off += 1;
        let object_id = take_str(bytes, &mut off)?;
        let outcome = Outcome::from_byte(*bytes.get(off)?)?;
        off += 1;
        if off != bytes.len() {
            return None;
        }
        Some(Self {
            seq,
            time_ns,
            identity,
            network,
            location_zone,
            application,
            device_id,
            op,
            object_id,
            outcome,
        })
    }
}

fn push_str(out: &mut Vec<u8>, s: &str) -> Result<(), LedgerError> {
    if s.len() > u16::MAX as usize {
        return Err(LedgerError::FieldTooLong);
    }
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn take_u64(bytes: &[u8], off: &mut usize) -> Option<u64> {
    let v = bytes.get(*off..*off + 8)?;
    *off += 8;
    Some(u64::from_be_bytes(v.try_into().unwrap()))
}

fn take_str(bytes: &[u8], off: &mut usize) -> Option<String> {
    let len = bytes.get(*off..*off + 2)?;
    let len = u16::from_be_bytes(len.try_into().unwrap()) as usize;
    *off += 2;
    let s = bytes.get(*off..*off + len)?;
    *off += len;
    String::from_utf8(s.to_vec()).ok()
}

/// Hash-chained wrapper around one entry. Block 0 chains from 32 zero bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerBlock {
    pub entry: AccessLogEntry,
    pub entry_hash: [u8; HASH_LEN],
    pub prev_hash: [u8; HASH_LEN],
    pub block_hash: [u8; HASH_LEN],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyOutcome {
    Ok,
    /// Lowest sequence number whose block fails verification.
    FirstBad(u64),
}

/// Conjunction of optional predicates; an absent field matches everything.
/// `time_range` is half-open `[start, end)`.
#[derive(Debug, Clone, Default)]
pub struct LedgerFilter {
    pub identity: Option<String>,
    pub object_id: Option<String>,
    pub time_range: Option<(u64, u64)>,
    pub outcome: Option<Outcome>,
    pub op: Option<OpKind>,
}

impl LedgerFilter {
    pub fn matches(&self, entry: &AccessLogEntry) -> bool {
        if let Some(id) = &self.identity {
            if &entry.identity != id {
                return false;
            }
        }
        if let Some(obj) = &self.object_id {
            if &entry.object_id != obj {
                return false;
            }
        }
        if let Some((start, end)) = self.time_range {
            if entry.time_ns < start || entry.time_ns >= end {
                return false;
            }
        }
        if let Some(outcome) = self.outcome {
            if entry.outcome != outcome {
                return false;
            }
        }
        if let Some(op) = self.op {
            if entry.op != op {
                return false;
            }
        }
        true
    }
}

struct Inner {
    path: PathBuf,
    tail_path: PathBuf,
    file: File,
    next_seq: u64,
    prev_hash: [u8; HASH_LEN],
    last_time_ns: u64,
}

/// Single-appender ledger handle. Appends are totally ordered and flushed
/// before they return; readers see a consistent snapshot ending at the last
/// flushed block.
pub struct Ledger {
    inner: RwLock<Inner>,
}

struct RawBlock {
    entry_bytes: Vec<u8>,
    entry_hash: [u8; HASH_LEN],
    prev_hash: [u8; HASH_LEN],
    block_hash: [u8; HASH_LEN],
}

/// Result of scanning a ledger file: cleanly parsed blocks, plus whether the
/// byte stream ended mid-record.
struct Scan {
    raw: Vec<RawBlock>,
    parse_failed: bool,
}

fn scan_file(path: &Path) -> Result<Scan, LedgerError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut raw = Vec::new();
    let mut off = 0usize;
    while off < bytes.len() {
        let Some(len_bytes) = bytes.get(off..off + 4) else {
            return Ok(Scan { raw, parse_failed: true });
        };
        let record_len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        off += 4;
        if record_len < 3 * HASH_LEN || bytes.len() < off + record_len {
            return Ok(Scan { raw, parse_failed: true });
        }
        let record = &bytes[off..off + record_len];
        off += record_len;
        let split = record_len - 3 * HASH_LEN;
        let entry_bytes = record[..split].to_vec();
        let mut entry_hash = [0u8; HASH_LEN];
        entry_hash.copy_from_slice(&record[split..split + HASH_LEN]);
        let mut prev_hash = [0u8; HASH_LEN];
        prev_hash.copy_from_slice(&record[split + HASH_LEN..split + 2 * HASH_LEN]);
        let mut block_hash = [0u8; HASH_LEN];
        block_hash.copy_from_slice(&record[split + 2 * HASH_LEN..]);
        raw.push(RawBlock {
            entry_bytes,
            entry_hash,
            prev_hash,
            block_hash,
        });
    }
    Ok(Scan { raw, parse_failed: false })
}

fn read_tail(tail_path: &Path) -> Result<Option<(u64, [u8; HASH_LEN])>, LedgerError> {
    let bytes = match std::fs::read(tail_path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if bytes.len() != 8 + HASH_LEN {
        return Ok(Some((u64::MAX, [0u8; HASH_LEN]))); // unreadable sidecar: force mismatch
    }
    let count = u64::from_be_bytes(bytes[..8].try_into().unwrap());
    let mut hash = [0u8; HASH_LEN];
    hash.copy_from_slice(&bytes[8..]);
    Ok(Some((count, hash)))
}

fn write_tail(tail_path: &Path, count: u64, hash: &[u8; HASH_LEN]) -> Result<(), LedgerError> {
    let mut buf = Vec::with_capacity(8 + HASH_LEN);
    buf.extend_from_slice(&count.to_be_bytes());
    buf.extend_from_slice(hash);
    let mut f = File::create(tail_path)?;
    f.write_all(&buf)?;
    f.sync_data()?;
    Ok(())
}

/// Verify the chain of already-scanned blocks; returns the lowest failing
/// index, or the parsed blocks on success.
fn verify_scan(scan: &Scan, tail: Option<(u64, [u8; HASH_LEN])>, check_tail: bool) -> VerifyOutcome {
    let mut prev = GENESIS_PREV;
    for (idx, raw) in scan.raw.iter().enumerate() {
        let seq = idx as u64;
        let entry_hash = sha256(&[&raw.entry_bytes]);
        if entry_hash != raw.entry_hash
            || raw.prev_hash != prev
            || sha256(&[&raw.prev_hash, &raw.entry_hash]) != raw.block_hash
        {
            return VerifyOutcome::FirstBad(seq);
        }
        let Some(entry) = AccessLogEntry::from_canonical(&raw.entry_bytes) else {
            return VerifyOutcome::FirstBad(seq);
        };
        if entry.seq != seq {
            return VerifyOutcome::FirstBad(seq);
        }
        prev = raw.block_hash;
    }
    let count = scan.raw.len() as u64;
    if scan.parse_failed {
        return VerifyOutcome::FirstBad(count);
    }
    if check_tail {
        match tail {
            Some((tail_count, tail_hash)) => {
                if tail_count > count {
                    // file is shorter than the recorded tail: truncation
                    return VerifyOutcome::FirstBad(count);
                }
                if tail_count == count && count > 0 && tail_hash != prev {
                    return VerifyOutcome::FirstBad(count - 1);
                }
                // tail_count == count - 1 is the append-crash window, repaired
                // on open; anything older is flagged at the sidecar's horizon.
                if tail_count + 1 < count {
                    return VerifyOutcome::FirstBad(tail_count);
                }
            }
            None => {
                if count > 0 {
                    // nonempty ledger with no tail anchor: tail unverifiable
                    return VerifyOutcome::FirstBad(count - 1);
                }
            }
        }
    }
    VerifyOutcome::Ok
}

impl Ledger {
    /// Open (or create) the ledger at `path`. Verifies the existing chain and
    /// repairs a sidecar left one append behind by a crash.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LedgerError> {
        let path = path.into();
        let tail_path = tail_path_for(&path);
        let scan = scan_file(&path)?;
        let tail = read_tail(&tail_path)?;

        // chain must be sound before we accept appends
        match verify_scan(&scan, tail, false) {
            VerifyOutcome::Ok => {}
            VerifyOutcome::FirstBad(seq) => return Err(LedgerError::Corrupt(seq)),
        }
        let count = scan.raw.len() as u64;
        let prev_hash = scan
            .raw
            .last()
            .map(|b| b.block_hash)
            .unwrap_or(GENESIS_PREV);
        match tail {
            Some((tail_count, _)) if tail_count > count => {
                return Err(LedgerError::Corrupt(count)); // truncated since last run
            }
            Some((tail_count, tail_hash)) if tail_count == count => {
                if count > 0 && tail_hash != prev_hash {
                    return Err(LedgerError::Corrupt(count - 1));
                }
            }
            _ => {
                // missing or behind: complete the interrupted append
                if count > 0 {
                    write_tail(&tail_path, count, &prev_hash)?;
                }
            }
        }

        let last_time_ns = scan
            .raw
            .last()
            .and_then(|b| AccessLogEntry::from_canonical(&b.entry_bytes))
            .map(|e| e.time_ns)
            .unwrap_or(0);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            inner: RwLock::new(Inner {
                path,
                tail_path,
                file,
                next_seq: count,
                prev_hash,
                last_time_ns,
            }),
        })
    }

    /// Append one entry; durable (block and sidecar flushed) before it
    /// returns. `time_ns` is clamped so timestamps never decrease with seq.
    pub fn append(&self, new: NewEntry) -> Result<LedgerBlock, LedgerError> {
        let mut inner = self.inner.write().expect("ledger lock poisoned");
        let entry = AccessLogEntry {
            seq: inner.next_seq,
            time_ns: new.time_ns.max(inner.last_time_ns),
            identity: new.identity,
            network: new.network,
            location_zone: new.location_zone,
            application: new.application,
            device_id: new.device_id,
            op: new.op,
            object_id: new.object_id,
            outcome: new.outcome,
        };
        let entry_bytes = entry.canonical_bytes()?;
        let entry_hash = sha256(&[&entry_bytes]);
        let prev_hash = inner.prev_hash;
        let block_hash = sha256(&[&prev_hash, &entry_hash]);

        let record_len = (entry_bytes.len() + 3 * HASH_LEN) as u32;
        let mut record = Vec::with_capacity(4 + record_len as usize);
        record.extend_from_slice(&record_len.to_be_bytes());
        record.extend_from_slice(&entry_bytes);
        record.extend_from_slice(&entry_hash);
        record.extend_from_slice(&prev_hash);
        record.extend_from_slice(&block_hash);
        inner.file.write_all(&record)?;
        inner.file.sync_data()?;

        let count = inner.next_seq + 1;
        let tail_path = inner.tail_path.clone();
        write_tail(&tail_path, count, &block_hash)?;

        inner.next_seq = count;
        inner.prev_hash = block_hash;
        inner.last_time_ns = entry.time_ns;
        Ok(LedgerBlock {
            entry,
            entry_hash,
            prev_hash,
            block_hash,
        })
    }

    /// Recompute the hash chain from disk. With a `range`, verification still
    /// anchors at genesis but stops after `hi`, and the tail sidecar is only
    /// consulted when the range reaches the end of the log.
    pub fn verify(&self, range: Option<(u64, u64)>) -> Result<VerifyOutcome, LedgerError> {
        let inner = self.inner.read().expect("ledger lock poisoned");
        verify_at(&inner.path, &inner.tail_path, range)
    }

    /// Entries matching every provided predicate, in seq order.
    pub fn query(&self, filter: &LedgerFilter) -> Result<Vec<AccessLogEntry>, LedgerError> {
        Ok(self
            .blocks()?
            .into_iter()
            .map(|b| b.entry)
            .filter(|e| filter.matches(e))
            .collect())
    }

    /// All blocks currently on disk, parsed but not re-verified.
    pub fn blocks(&self) -> Result<Vec<LedgerBlock>, LedgerError> {
        let inner = self.inner.read().expect("ledger lock poisoned");
        let scan = scan_file(&inner.path)?;
        let mut out = Vec::with_capacity(scan.raw.len());
        for (idx, raw) in scan.raw.iter().enumerate() {
            let entry = AccessLogEntry::from_canonical(&raw.entry_bytes)
                .ok_or(LedgerError::Corrupt(idx as u64))?;
            out.push(LedgerBlock {
                entry,
                entry_hash: raw.entry_hash,
                prev_hash: raw.prev_hash,
                block_hash: raw.block_hash,
            });
        }
        Ok(out)
    }

    pub fn len(&self) -> Result<u64, LedgerError> {
        let inner = self.inner.read().expect("ledger lock poisoned");
        Ok(inner.next_seq)
    }

    pub fn is_empty(&self) -> Result<bool, LedgerError> {
        Ok(self.len()? == 0)
    }

    pub fn path(&self) -> PathBuf {
        self.inner.read().expect("ledger lock poisoned").path.clone()
    }
}

fn tail_path_for(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".tail");
    PathBuf::from(os)
}

/// Verify a ledger file without opening it for appends (no repairs).
pub fn verify_path(path: impl AsRef<Path>, range: Option<(u64, u64)>) -> Result<VerifyOutcome, LedgerError> {
    let path = path.as_ref();
    verify_at(path, &tail_path_for(path), range)
}

fn verify_at(
    path: &Path,
    tail_path: &Path,
    range: Option<(u64, u64)>,
) -> Result<VerifyOutcome, LedgerError> {
    let mut scan = scan_file(path)?;
    let tail = read_tail(tail_path)?;
    match range {
        None => Ok(verify_scan(&scan, tail, true)),
        // Verification always anchors at genesis: a range cannot be trusted
        // without its prefix, so failures below `lo` are still reported.
        Some((_lo, hi)) => {
            let covers_tail = hi + 1 >= scan.raw.len() as u64 && !scan.parse_failed;
            if (hi + 1) < scan.raw.len() as u64 {
                scan.raw.truncate((hi + 1) as usize);
                scan.parse_failed = false;
            }
            Ok(verify_scan(&scan, tail, covers_tail))
        }
    }
}
