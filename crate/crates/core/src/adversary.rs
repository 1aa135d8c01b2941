//! Passive-attacker harness: tee the wire, try to tell real benches from
//! fakes with a fixed battery of statistical distinguishers, and replay
//! captured frames against a live server. The battery's best accuracy is the
//! artifact's operational measure of transport confusion; the replay path
//! checks that captured traffic is worthless to an active re-sender.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::clock::{Clock, SystemClock};
use crate::wire::{self, Frame, FrameType, WireError};

pub const MIN_BATTERY_SAMPLES: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum AdversaryError {
    #[error("need at least {MIN_BATTERY_SAMPLES} benches, got {0}")]
    InsufficientSamples(usize),
    #[error("labels and samples disagree in length")]
    LabelMismatch,
    #[error("malformed transcript: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One captured wire unit: the raw bytes of a single frame, byte-identical
/// to what crossed the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    pub timestamp_ns: u64,
    pub bytes: Vec<u8>,
}

/// Ordered capture of one direction of a connection.
///
/// File format (big-endian): `(timestamp_ns u64 || len u32 || bytes)*`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptureTranscript {
    pub records: Vec<CaptureRecord>,
}

impl CaptureTranscript {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_bytes(&self) -> usize {
        self.records.iter().map(|r| r.bytes.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_bytes() + 12 * self.records.len());
        for r in &self.records {
            out.extend_from_slice(&r.timestamp_ns.to_be_bytes());
            out.extend_from_slice(&(r.bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&r.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AdversaryError> {
        let mut records = Vec::new();
        let mut off = 0usize;
        while off < bytes.len() {
            let ts = bytes
                .get(off..off + 8)
                .ok_or(AdversaryError::Malformed("record timestamp"))?;
            let timestamp_ns = u64::from_be_bytes(ts.try_into().unwrap());
            off += 8;
            let len = bytes
                .get(off..off + 4)
                .ok_or(AdversaryError::Malformed("record length"))?;
            let len = u32::from_be_bytes(len.try_into().unwrap()) as usize;
            off += 4;
            let body = bytes
                .get(off..off + len)
                .ok_or(AdversaryError::Malformed("record body"))?;
            off += len;
            records.push(CaptureRecord {
                timestamp_ns,
                bytes: body.to_vec(),
            });
        }
        Ok(Self { records })
    }

    /// Parse each captured record as a frame (replay and inspection both
    /// need this; the capture itself never interprets bytes).
    pub fn frames(&self) -> Result<Vec<Frame>, WireError> {
        self.records
            .iter()
            .map(|r| wire::decode_frame(&r.bytes).map(|(f, _)| f))
            .collect()
    }

    /// Known-plaintext scan over the concatenated capture.
    pub fn contains(&self, needle: &[u8]) -> bool {
        if needle.is_empty() {
            return true;
        }
        let mut all = Vec::with_capacity(self.total_bytes());
        for r in &self.records {
            all.extend_from_slice(&r.bytes);
        }
        all.windows(needle.len()).any(|w| w == needle)
    }
}

/// Passive in-process tee. The endpoint under test writes through its stream
/// normally; the tap just keeps a copy of every frame.
#[derive(Clone, Default)]
pub struct Tap {
    inner: Arc<Mutex<CaptureTranscript>>,
}

impl Tap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, bytes: &[u8]) {
        let timestamp_ns = SystemClock.now_ns();
        self.inner
            .lock()
            .expect("tap lock poisoned")
            .records
            .push(CaptureRecord {
                timestamp_ns,
                bytes: bytes.to_vec(),
            });
    }

    pub fn snapshot(&self) -> CaptureTranscript {
        self.inner.lock().expect("tap lock poisoned").clone()
    }
}

// --- bench classification battery ------------------------------------------

/// One bench with its out-of-band ground truth (from the test harness, never
/// the wire) and its position in the stream.
#[derive(Debug, Clone)]
pub struct BenchSample {
    pub bytes: Vec<u8>,
    pub position: u32,
    pub is_real: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistinguisherScore {
    pub name: &'static str,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub samples: usize,
    pub results: Vec<DistinguisherScore>,
    pub best: DistinguisherScore,
}

fn mean_byte(bytes: &[u8]) -> f64 {
    if bytes.is_empty() {
        return 0.0;
    }
    bytes.iter().map(|&b| b as f64).sum::<f64>() / bytes.len() as f64
}

fn byte_entropy(bytes: &[u8]) -> f64 {
    if bytes.is_empty() {
        return 0.0;
    }
    let mut counts = [0u32; 256];
    for &b in bytes {
        counts[b as usize] += 1;
    }
    let n = bytes.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn adjacent_correlation(bytes: &[u8]) -> f64 {
    if bytes.len() < 2 {
        return 0.0;
    }
    let mean = mean_byte(bytes);
    let mut cov = 0.0;
    let mut var = 0.0;
    for w in bytes.windows(2) {
        cov += (w[0] as f64 - mean) * (w[1] as f64 - mean);
    }
    for &b in bytes {
        var += (b as f64 - mean).powi(2);
    }
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}

/// Best achievable accuracy of a single-threshold classifier on `scores`,
/// trying both orientations and every cut between distinct score values.
fn best_threshold_accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let total_real = labels.iter().filter(|&&l| l).count();

    // walking the cut from left to right: predict "real" at/above the cut
    let mut best = 0.5_f64;
    let mut reals_below = 0usize;
    let mut eval = |reals_below: usize, below: usize| {
        let fakes_below = below - reals_below;
        let reals_above = total_real - reals_below;
        let correct_pred_real_above = reals_above + fakes_below;
        let acc = correct_pred_real_above as f64 / n as f64;
        let acc_flipped = 1.0 - acc;
        if acc > best {
            best = acc;
        }
        if acc_flipped > best {
            best = acc_flipped;
        }
    };
    eval(0, 0);
    for (i, &idx) in order.iter().enumerate() {
        if labels[idx] {
            reals_below += 1;
        }
        // only cut where the score actually changes (plus the far end)
        if i + 1 == n || scores[order[i + 1]] != scores[idx] {
            eval(reals_below, i + 1);
        }
    }
    best
}

/// Run the fixed distinguisher battery and report the best accuracy. Ground
/// truth must come from the harness; the wire carries no labels.
pub fn classify_benches(samples: &[BenchSample]) -> Result<BatteryReport, AdversaryError> {
    if samples.len() < MIN_BATTERY_SAMPLES {
        return Err(AdversaryError::InsufficientSamples(samples.len()));
    }
    let labels: Vec<bool> = samples.iter().map(|s| s.is_real).collect();
    let batteries: [(&'static str, Box<dyn Fn(&BenchSample) -> f64>); 4] = [
        ("byte-frequency", Box::new(|s: &BenchSample| mean_byte(&s.bytes))),
        ("entropy", Box::new(|s: &BenchSample| byte_entropy(&s.bytes))),
        (
            "pairwise-correlation",
            Box::new(|s: &BenchSample| adjacent_correlation(&s.bytes)),
        ),
        (
            "position-parity",
            Box::new(|s: &BenchSample| (s.position % 2) as f64),
        ),
    ];

    let mut results = Vec::with_capacity(batteries.len());
    for (name, score_fn) in &batteries {
        let scores: Vec<f64> = samples.iter().map(|s| score_fn(s)).collect();
        let accuracy = best_threshold_accuracy(&scores, &labels);
        results.push(DistinguisherScore { name, accuracy });
    }
    let best = *results
        .iter()
        .max_by(|a, b| a.accuracy.partial_cmp(&b.accuracy).unwrap())
        .expect("battery is non-empty");
    Ok(BatteryReport {
        samples: samples.len(),
        results,
        best,
    })
}

/// Slice the bench region out of a captured merged-stream body using only
/// clear header fields — exactly what a passive observer can do.
pub fn benches_from_stream_bytes(stream_bytes: &[u8]) -> Result<Vec<Vec<u8>>, AdversaryError> {
    let stream = crate::chaff::MergedStream::from_bytes(stream_bytes)
        .map_err(|_| AdversaryError::Malformed("merged stream"))?;
    Ok((0..stream.total_count as usize)
        .map(|i| stream.bench(i).to_vec())
        .collect())
}

/// Label the benches of a captured stream with harness-side knowledge of the
/// session key. The bytes are exactly what crossed the wire; only the labels
/// come from out-of-band key material.
pub fn labeled_benches_from_stream(
    stream_bytes: &[u8],
    session_key: &[u8; 32],
) -> Result<Vec<BenchSample>, AdversaryError> {
    let stream = crate::chaff::MergedStream::from_bytes(stream_bytes)
        .map_err(|_| AdversaryError::Malformed("merged stream"))?;
    let (plan, _) = crate::chaff::stream_plan(&stream, session_key)
        .map_err(|_| AdversaryError::Malformed("stream header"))?;
    let mut is_real = vec![false; stream.total_count as usize];
    for &p in plan.real_positions() {
        is_real[p as usize] = true;
    }
    Ok((0..stream.total_count as usize)
        .map(|i| BenchSample {
            bytes: stream.bench(i).to_vec(),
            position: i as u32,
            is_real: is_real[i],
        })
        .collect())
}

// --- replay ------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
pub struct ReplayOutcome {
    pub frames_sent: usize,
    /// ACK or STREAM responses to replayed data frames — any of these means
    /// the replay achieved an operation.
    pub ok_outcomes: usize,
    pub err_frames: usize,
    pub other_frames: usize,
}

/// Re-send every captured client frame, in order, over a fresh connection.
/// Stops when the server hangs up.
pub fn replay_transcript(
    addr: &str,
    transcript: &CaptureTranscript,
) -> Result<ReplayOutcome, AdversaryError> {
    let mut outcome = ReplayOutcome::default();
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_millis(2000)))?;
    stream.set_nodelay(true)?;

    for record in &transcript.records {
        if stream.write_all(&record.bytes).is_err() {
            break;
        }
        let _ = stream.flush();
        outcome.frames_sent += 1;
        match read_frame_best_effort(&mut stream) {
            Some(frame) => match frame.frame_type {
                FrameType::Ack | FrameType::Stream => outcome.ok_outcomes += 1,
                FrameType::Err => outcome.err_frames += 1,
                _ => outcome.other_frames += 1,
            },
            None => break, // connection closed or timed out
        }
    }
    Ok(outcome)
}

fn read_frame_best_effort(stream: &mut TcpStream) -> Option<Frame> {
    let mut header = [0u8; wire::FRAME_HEADER_LEN];
    stream.read_exact(&mut header).ok()?;
    if header[..4] != wire::MAGIC {
        return None;
    }
    let frame_type = FrameType::from_byte(header[4])?;
    let len = u32::from_be_bytes(header[5..9].try_into().unwrap()) as usize;
    if len > wire::MAX_FRAME_PAYLOAD {
        return None;
    }
    let mut payload = vec![0u8; len];
    stream.read_exact(&mut payload).ok()?;
    Some(Frame {
        frame_type,
        payload,
    })
}
