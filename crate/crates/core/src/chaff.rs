//! Layer 1 transport obfuscation: ciphertext is split into fixed-size
//! benches, interleaved with fake benches at keyed pseudorandom positions,
//! and sent as one [`MergedStream`]. The receiver re-derives the placement
//! from the shared session key and discards the fakes without inspection.
//!
//! Placement comes from a partial Fisher-Yates shuffle driven by a ChaCha20
//! stream seeded from `(session_key, stream_nonce)`, so both endpoints derive
//! the identical [`MergePlan`] and a passive observer, lacking the key,
//! learns nothing positional. Fake benches are ChaCha20 keystream under an
//! independently derived key, which makes them byte-indistinguishable from
//! sealed ciphertext.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::crypto::sha256;
use crate::envelope::{self, DataKey, EncryptedEnvelope};

pub const STREAM_NONCE_LEN: usize = 16;
pub const DEFAULT_BENCH_SIZE: usize = 64;
pub const MAX_BENCH_SIZE: usize = u16::MAX as usize;

/// key_id used for the in-stream sealed header envelope.
const HEADER_KEY_ID: &str = "s";

const PLAN_DOMAIN: &[u8] = b"aas/plan/v1";
const CHAFF_DOMAIN: &[u8] = b"aas/chaff/v1";

#[derive(Debug, thiserror::Error)]
pub enum ChaffError {
    #[error("bench size must be at least 1 byte")]
    ZeroBenchSize,
    #[error("real_count {real} exceeds total_count {total}")]
    CountOverflow { real: u32, total: u32 },
    #[error("invalid chaff policy: {0}")]
    PolicyInvalid(&'static str),
    #[error("stream header failed to open: wrong session key or tampering")]
    HeaderAuthFailure,
    #[error("bench count disagrees with stream header")]
    TruncatedStream,
    #[error("malformed merged stream: {0}")]
    Malformed(&'static str),
}

/// Fake-to-real bench ratio as an exact non-negative rational, so the size
/// law `total = real + ceil(real * ratio)` is integer-exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    num: u32,
    den: u32,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self, ChaffError> {
        if den == 0 {
            return Err(ChaffError::PolicyInvalid("ratio denominator is zero"));
        }
        let g = gcd(num.max(1), den);
        Ok(Self {
            num: num / if num == 0 { 1 } else { g },
            den: if num == 0 { 1 } else { den / g },
        })
    }

    /// Accepts `2`, `0.25`, or `1/4`.
    pub fn parse(text: &str) -> Result<Self, ChaffError> {
        let text = text.trim();
        if let Some((n, d)) = text.split_once('/') {
            let num = n.trim().parse().map_err(|_| bad_ratio())?;
            let den = d.trim().parse().map_err(|_| bad_ratio())?;
            return Self::new(num, den);
        }
        if let Some((int, frac)) = text.split_once('.') {
            if frac.len() > 9 || frac.chars().any(|c| !c.is_ascii_digit()) {
                return Err(bad_ratio());
            }
            let int: u32 = if int.is_empty() {
                0
            } else {
                int.parse().map_err(|_| bad_ratio())?
            };
            let den = 10u32.pow(frac.len() as u32);
            let frac: u32 = if frac.is_empty() {
                0
            } else {
                frac.parse().map_err(|_| bad_ratio())?
            };
            let num = int
                .checked_mul(den)
                .and_then(|v| v.checked_add(frac))
                .ok_or_else(bad_ratio)?;
            return Self::new(num, den);
        }
        let num = text.parse().map_err(|_| bad_ratio())?;
        Self::new(num, 1)
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// `ceil(real * num / den)` — any ratio > 0 yields at least one fake
    /// bench for one real bench.
    pub fn fake_count(&self, real: u64) -> u64 {
        let prod = real as u128 * self.num as u128;
        ((prod + self.den as u128 - 1) / self.den as u128) as u64
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn bad_ratio() -> ChaffError {
    ChaffError::PolicyInvalid("ratio must be an integer, decimal, or n/d fraction")
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Transmission-time / security trade-off presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    Speed,
    Balanced,
    Security,
}

impl Priority {
    pub fn default_ratio(self) -> Ratio {
        match self {
            Priority::Speed => Ratio { num: 1, den: 4 },
            Priority::Balanced => Ratio { num: 1, den: 1 },
            Priority::Security => Ratio { num: 2, den: 1 },
        }
    }

    pub fn parse(text: &str) -> Result<Self, ChaffError> {
        match text.to_ascii_lowercase().as_str() {
            "speed" => Ok(Priority::Speed),
            "balanced" => Ok(Priority::Balanced),
            "security" => Ok(Priority::Security),
            _ => Err(ChaffError::PolicyInvalid(
                "priority must be speed, balanced, or security",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChaffPolicy {
    pub ratio: Ratio,
    pub priority: Priority,
    pub bench_size: usize,
}

impl ChaffPolicy {
    /// Policy with the priority's default ratio and the default bench size.
    pub fn for_priority(priority: Priority) -> Self {
        Self {
            ratio: priority.default_ratio(),
            priority,
            bench_size: DEFAULT_BENCH_SIZE,
        }
    }

    pub fn with_ratio(mut self, ratio: Ratio) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn with_bench_size(mut self, bench_size: usize) -> Self {
        self.bench_size = bench_size;
        self
    }

    pub fn validate(&self) -> Result<(), ChaffError> {
        if self.bench_size == 0 {
            return Err(ChaffError::ZeroBenchSize);
        }
        if self.bench_size > MAX_BENCH_SIZE {
            return Err(ChaffError::PolicyInvalid("bench size exceeds 65535"));
        }
        Ok(())
    }
}

impl Default for ChaffPolicy {
    fn default() -> Self {
        Self::for_priority(Priority::Balanced)
    }
}

/// Fixed-size benches stored back to back. A bench carries no real/fake flag;
/// realness is positional knowledge held in the [`MergePlan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchList {
    bench_size: usize,
    bytes: Vec<u8>,
}

impl BenchList {
    pub fn bench_size(&self) -> usize {
        self.bench_size
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / self.bench_size
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn bench(&self, idx: usize) -> &[u8] {
        &self.bytes[idx * self.bench_size..(idx + 1) * self.bench_size]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.bytes.chunks_exact(self.bench_size)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Split `data` into `ceil(len/bench_size)` benches, zero-padding the last.
/// Concatenating the benches and truncating to `data.len()` reproduces
/// `data`.
pub fn split_benches(data: &[u8], bench_size: usize) -> Result<BenchList, ChaffError> {
    if bench_size == 0 {
        return Err(ChaffError::ZeroBenchSize);
    }
    let count = data.len().div_ceil(bench_size);
    let mut bytes = vec![0u8; count * bench_size];
    bytes[..data.len()].copy_from_slice(data);
    Ok(BenchList { bench_size, bytes })
}

/// Real-bench placement for one stream. Fully determined by
/// `(session_key, stream_nonce, real_count, total_count)`; both endpoints
/// derive the identical plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePlan {
    total_count: u32,
    real_count: u32,
    /// Indices in derivation order: real bench `j` sits at
    /// `real_positions[j]`.
    real_positions: Vec<u32>,
}

impl MergePlan {
    pub fn total_count(&self) -> u32 {
        self.total_count
    }

    pub fn real_count(&self) -> u32 {
        self.real_count
    }

    pub fn real_positions(&self) -> &[u32] {
        &self.real_positions
    }
}

/// First `real_count` outputs of a keyed pseudorandom permutation of
/// `[0, total_count)` — a partial Fisher-Yates shuffle over a ChaCha20
/// stream seeded from the session key and stream nonce.
pub fn derive_plan(
    session_key: &[u8; 32],
    stream_nonce: &[u8; STREAM_NONCE_LEN],
    real_count: u32,
    total_count: u32,
) -> Result<MergePlan, ChaffError> {
    if real_count > total_count {
        return Err(ChaffError::CountOverflow {
            real: real_count,
            total: total_count,
        });
    }
    let seed = sha256(&[PLAN_DOMAIN, session_key, stream_nonce]);
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut indices: Vec<u32> = (0..total_count).collect();
    for i in 0..real_count as usize {
        let j = rng.gen_range(i..total_count as usize);
        indices.swap(i, j);
    }
    indices.truncate(real_count as usize);
    Ok(MergePlan {
        total_count,
        real_count,
        real_positions: indices,
    })
}

fn derive_chaff_key(session_key: &[u8; 32], stream_nonce: &[u8; STREAM_NONCE_LEN]) -> [u8; 32] {
    sha256(&[CHAFF_DOMAIN, session_key, stream_nonce])
}

/// ChaCha20 keystream words reserved per fake bench, so bench `counter + 1`
/// starts on a fresh word boundary.
fn words_per_bench(bench_size: usize) -> u128 {
    bench_size.div_ceil(4) as u128
}

/// Deterministic fake bench: keystream window `counter` of a ChaCha20 stream
/// keyed independently of any data key.
pub fn gen_fake_bench(
    chaff_key: &[u8; 32],
    counter: u64,
    bench_size: usize,
) -> Result<Vec<u8>, ChaffError> {
    if bench_size == 0 {
        return Err(ChaffError::ZeroBenchSize);
    }
    let mut rng = ChaCha20Rng::from_seed(*chaff_key);
    rng.set_word_pos(counter as u128 * words_per_bench(bench_size));
    let mut bench = vec![0u8; bench_size];
    rng.fill(&mut bench[..]);
    Ok(bench)
}

fn session_header_key(session_key: &[u8; 32]) -> DataKey {
    DataKey::new(HEADER_KEY_ID, *session_key).expect("fixed header key id is valid")
}

/// Wire unit: `total_count` benches of which `real_count` (hidden inside the
/// sealed header) are real, at positions known only to holders of the
/// session key.
///
/// Wire layout (big-endian): `stream_nonce (16) || bench_size u16 ||
/// total_count u32 || sealed_header_len u16 || sealed_header || benches
/// (total_count x bench_size)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedStream {
    pub stream_nonce: [u8; STREAM_NONCE_LEN],
    pub bench_size: u16,
    pub total_count: u32,
    pub sealed_header: Vec<u8>,
    /// Flat bench bytes, `total_count * bench_size` long.
    pub benches: Vec<u8>,
}

impl MergedStream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            STREAM_NONCE_LEN + 2 + 4 + 2 + self.sealed_header.len() + self.benches.len(),
        );
        out.extend_from_slice(&self.stream_nonce);
        out.extend_from_slice(&self.bench_size.to_be_bytes());
        out.extend_from_slice(&self.total_count.to_be_bytes());
        out.extend_from_slice(&(self.sealed_header.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.sealed_header);
        out.extend_from_slice(&self.benches);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChaffError> {
        if bytes.len() < STREAM_NONCE_LEN + 2 + 4 + 2 {
            return Err(ChaffError::Malformed("shorter than fixed header"));
        }
        let mut stream_nonce = [0u8; STREAM_NONCE_LEN];
        stream_nonce.copy_from_slice(&bytes[..STREAM_NONCE_LEN]);
        let mut off = STREAM_NONCE_LEN;
        let bench_size = u16::from_be_bytes([bytes[off], bytes[off + 1]]);
        off += 2;
        let total_count =
            u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        off += 4;
        let header_len = u16::from_be_bytes([bytes[off], bytes[off + 1]]) as usize;
        off += 2;
        if bytes.len() < off + header_len {
            return Err(ChaffError::Malformed("sealed header cut short"));
        }
        let sealed_header = bytes[off..off + header_len].to_vec();
        off += header_len;
        if bench_size == 0 {
            return Err(ChaffError::ZeroBenchSize);
        }
        let bench_bytes = total_count as usize * bench_size as usize;
        if bytes.len() - off != bench_bytes {
            return Err(ChaffError::TruncatedStream);
        }
        Ok(Self {
            stream_nonce,
            bench_size,
            total_count,
            sealed_header,
            benches: bytes[off..].to_vec(),
        })
    }

    pub fn serialized_len(&self) -> usize {
        STREAM_NONCE_LEN + 2 + 4 + 2 + self.sealed_header.len() + self.benches.len()
    }

    pub fn bench(&self, idx: usize) -> &[u8] {
        let bs = self.bench_size as usize;
        &self.benches[idx * bs..(idx + 1) * bs]
    }
}

/// Interleave `real` benches with fakes per `policy`. Real benches keep
/// their order at the plan's positions; every other slot is ChaCha20
/// keystream.
pub fn merge(
    real: &BenchList,
    policy: &ChaffPolicy,
    session_key: &[u8; 32],
    stream_nonce: &[u8; STREAM_NONCE_LEN],
    payload_len: u64,
) -> Result<MergedStream, ChaffError> {
    policy.validate()?;
    if real.bench_size() != policy.bench_size {
        return Err(ChaffError::PolicyInvalid(
            "bench list size disagrees with policy bench_size",
        ));
    }
    let bs = policy.bench_size;
    let real_count = real.len();
    if real_count > u32::MAX as usize {
        return Err(ChaffError::PolicyInvalid("too many real benches"));
    }
    let top = real_count as u64 * bs as u64;
    let consistent = payload_len <= top && (real_count == 0 || top < payload_len + bs as u64);
    if !consistent {
        return Err(ChaffError::PolicyInvalid(
            "payload_len disagrees with bench count",
        ));
    }

    let fake_count = policy.ratio.fake_count(real_count as u64);
    let total = real_count as u64 + fake_count;
    if total > u32::MAX as u64 {
        return Err(ChaffError::PolicyInvalid("stream exceeds u32 bench count"));
    }
    let total = total as u32;

    let plan = derive_plan(session_key, stream_nonce, real_count as u32, total)?;

    // One keystream pass covers all fakes: fake j occupies window j, matching
    // gen_fake_bench(chaff_key, j, bs) exactly. Fake counters run in
    // ascending position order.
    let chaff_key = derive_chaff_key(session_key, stream_nonce);
    let wpb = words_per_bench(bs) as usize;
    let mut fake_bytes = vec![0u8; fake_count as usize * wpb * 4];
    if !fake_bytes.is_empty() {
        let mut rng = ChaCha20Rng::from_seed(chaff_key);
        rng.fill(&mut fake_bytes[..]);
    }

    let mut benches = vec![0u8; total as usize * bs];
    let mut by_position: Vec<Option<u32>> = vec![None; total as usize];
    for (j, &p) in plan.real_positions().iter().enumerate() {
        by_position[p as usize] = Some(j as u32);
    }
    let mut fake_idx = 0usize;
    for (pos, slot) in by_position.iter().enumerate() {
        let dst = &mut benches[pos * bs..(pos + 1) * bs];
        match slot {
            Some(j) => dst.copy_from_slice(real.bench(*j as usize)),
            None => {
                let start = fake_idx * wpb * 4;
                dst.copy_from_slice(&fake_bytes[start..start + bs]);
                fake_idx += 1;
            }
        }
    }

    let mut header_plain = [0u8; 12];
    header_plain[..4].copy_from_slice(&(real_count as u32).to_be_bytes());
    header_plain[4..].copy_from_slice(&payload_len.to_be_bytes());
    let header_env = envelope::seal_with_nonce(
        &envelope::Aes256Gcm16,
        &header_plain,
        &session_header_key(session_key),
        *stream_nonce,
    )
    .expect("header seal cannot fail");

    Ok(MergedStream {
        stream_nonce: *stream_nonce,
        bench_size: bs as u16,
        total_count: total,
        sealed_header: header_env.to_bytes(),
        benches,
    })
}

/// Split `payload` into benches and merge in one step with a fresh random
/// stream nonce.
pub fn merge_payload(
    payload: &[u8],
    policy: &ChaffPolicy,
    session_key: &[u8; 32],
) -> Result<MergedStream, ChaffError> {
    let mut stream_nonce = [0u8; STREAM_NONCE_LEN];
    rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut stream_nonce);
    let real = split_benches(payload, policy.bench_size)?;
    merge(&real, policy, session_key, &stream_nonce, payload.len() as u64)
}

/// Open the sealed header and re-derive the placement plan plus the true
/// payload length. Fails without the right session key.
pub fn stream_plan(
    stream: &MergedStream,
    session_key: &[u8; 32],
) -> Result<(MergePlan, u64), ChaffError> {
    let bs = stream.bench_size as usize;
    if bs == 0 {
        return Err(ChaffError::ZeroBenchSize);
    }
    if stream.benches.len() != stream.total_count as usize * bs {
        return Err(ChaffError::TruncatedStream);
    }
    let header_env = EncryptedEnvelope::from_bytes(&stream.sealed_header)
        .map_err(|_| ChaffError::HeaderAuthFailure)?;
    let header_plain = envelope::open(&header_env, &session_header_key(session_key))
        .map_err(|_| ChaffError::HeaderAuthFailure)?;
    if header_plain.len() != 12 {
        return Err(ChaffError::HeaderAuthFailure);
    }
    let real_count = u32::from_be_bytes(header_plain[..4].try_into().unwrap());
    let payload_len = u64::from_be_bytes(header_plain[4..].try_into().unwrap());
    if real_count > stream.total_count {
        return Err(ChaffError::TruncatedStream);
    }
    let top = real_count as u64 * bs as u64;
    if payload_len > top || (real_count > 0 && top >= payload_len + bs as u64) {
        return Err(ChaffError::TruncatedStream);
    }
    let plan = derive_plan(
        session_key,
        &stream.stream_nonce,
        real_count,
        stream.total_count,
    )?;
    Ok((plan, payload_len))
}

/// Recover the original payload: open the sealed header, re-derive the plan,
/// collect real benches in derivation order, drop the padding.
pub fn extract(stream: &MergedStream, session_key: &[u8; 32]) -> Result<Vec<u8>, ChaffError> {
    let (plan, payload_len) = stream_plan(stream, session_key)?;
    let mut out = Vec::with_capacity(plan.real_count() as usize * stream.bench_size as usize);
    for &p in plan.real_positions() {
        out.extend_from_slice(stream.bench(p as usize));
    }
    out.truncate(payload_len as usize);
    Ok(out)
}
