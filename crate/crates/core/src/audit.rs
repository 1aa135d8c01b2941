//! Layer 4: rule-driven auditing over ledger entries. Users write their own
//! breach criteria as one-line rules; interim/final audits run them on an
//! operator schedule, external audits restrict the scan to one principal's
//! own entries, and the third-party export carries log stamps and chain
//! hashes only — never data.
//!
//! Rule grammar (one rule per line, `#` comments allowed):
//!
//! ```text
//! rule <id> scope id=<glob> object=<glob> when <predicate>
//! ```
//!
//! with predicate one of `time_window HH:MM-HH:MM` (allowed daily UTC window,
//! may wrap midnight), `network_allow <cidr>[,<cidr>...]`,
//! `location_allow <zone>[,...]`, `device_allow <id>[,...]`,
//! `rate_limit <n> per <seconds>s` (sliding window per identity), and
//! `outcome_watch denied`. A finding is emitted for every (rule, entry) pair
//! where the entry is in the rule's scope and violates the predicate.

use std::collections::BTreeMap;
use std::net::IpAddr;

use rand::RngCore;
use serde::Serialize;

use crate::ledger::{AccessLogEntry, Ledger, LedgerError, VerifyOutcome};

pub const DEFAULT_INTERIM_EVERY_NS: u64 = 90 * 24 * 3600 * 1_000_000_000;
pub const DEFAULT_FINAL_EVERY_NS: u64 = 365 * 24 * 3600 * 1_000_000_000;

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("rule parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("invalid CIDR block {0:?}")]
    InvalidCidr(String),
    #[error("invalid time window {0:?}")]
    InvalidWindow(String),
    #[error("audit period start must not exceed end")]
    BadPeriod,
    #[error("external audit requires a scope identity")]
    ScopeRequired,
    #[error("ledger unavailable: {0}")]
    Ledger(#[from] LedgerError),
}

/// `*`-only glob, matched byte-wise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glob {
    pattern: String,
}

impl Glob {
    pub fn new(pattern: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
        }
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn matches(&self, text: &str) -> bool {
        let (p, t) = (self.pattern.as_bytes(), text.as_bytes());
        let (mut pi, mut ti) = (0usize, 0usize);
        let mut star: Option<(usize, usize)> = None;
        while ti < t.len() {
            if pi < p.len() && p[pi] == t[ti] && p[pi] != b'*' {
                pi += 1;
                ti += 1;
            } else if pi < p.len() && p[pi] == b'*' {
                star = Some((pi, ti));
                pi += 1;
            } else if let Some((sp, st)) = star {
                pi = sp + 1;
                ti = st + 1;
                star = Some((sp, st + 1));
            } else {
                return false;
            }
        }
        while pi < p.len() && p[pi] == b'*' {
            pi += 1;
        }
        pi == p.len()
    }
}

/// IPv4 or IPv6 network in prefix notation; a bare address is a host block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cidr {
    net: IpAddr,
    prefix: u8,
}

impl Cidr {
    pub fn parse(text: &str) -> Result<Self, AuditError> {
        let bad = || AuditError::InvalidCidr(text.to_string());
        let (addr_part, prefix_part) = match text.split_once('/') {
            Some((a, p)) => (a, Some(p)),
            None => (text, None),
        };
        let net: IpAddr = addr_part.trim().parse().map_err(|_| bad())?;
        let max = if net.is_ipv4() { 32 } else { 128 };
        let prefix = match prefix_part {
            Some(p) => p.trim().parse::<u8>().map_err(|_| bad())?,
            None => max,
        };
        if prefix > max {
            return Err(bad());
        }
        Ok(Self { net, prefix })
    }

    pub fn contains(&self, ip: IpAddr) -> bool {
        match (self.net, ip) {
            (IpAddr::V4(n), IpAddr::V4(a)) => {
                if self.prefix == 0 {
                    return true;
                }
                let shift = 32 - self.prefix as u32;
                (u32::from(n) >> shift) == (u32::from(a) >> shift)
            }
            (IpAddr::V6(n), IpAddr::V6(a)) => {
                if self.prefix == 0 {
                    return true;
                }
                let shift = 128 - self.prefix as u32;
                (u128::from(n) >> shift) == (u128::from(a) >> shift)
            }
            _ => false,
        }
    }
}

impl std::fmt::Display for Cidr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.net, self.prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    /// Allowed daily UTC window `[start, end)` in minutes of day; wraps
    /// midnight when `start > end`.
    TimeWindow { start_min: u16, end_min: u16 },
    NetworkAllow(Vec<Cidr>),
    LocationAllow(Vec<String>),
    DeviceAllow(Vec<String>),
    /// More than `max` scoped accesses by one identity within any trailing
    /// `window_secs` window is a finding on each access past the limit.
    RateLimit { max: u64, window_secs: u64 },
    /// Flag every DENIED outcome.
    OutcomeWatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleScope {
    pub identity: Glob,
    pub object: Glob,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRule {
    pub rule_id: String,
    pub scope: RuleScope,
    pub predicate: Predicate,
}

impl AuditRule {
    pub fn in_scope(&self, entry: &AccessLogEntry) -> bool {
        self.scope.identity.matches(&entry.identity) && self.scope.object.matches(&entry.object_id)
    }
}

// --- rule parsing ----------------------------------------------------------

struct Cursor<'a> {
    line: usize,
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next whitespace-delimited token, with its 1-based column.
    fn token(&mut self) -> Option<(usize, &'a str)> {
        self.skip_ws();
        if self.pos >= self.text.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.text.len() && !self.text.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some((start + 1, &self.text[start..self.pos]))
    }

    fn expect(&mut self, word: &str) -> Result<(), AuditError> {
        match self.token() {
            Some((_, t)) if t == word => Ok(()),
            Some((col, t)) => Err(self.err(col, format!("expected {word:?}, found {t:?}"))),
            None => Err(self.err(self.pos + 1, format!("expected {word:?}, found end of rule"))),
        }
    }

    fn required(&mut self, what: &str) -> Result<(usize, &'a str), AuditError> {
        self.token()
            .ok_or_else(|| self.err(self.pos + 1, format!("expected {what}, found end of rule")))
    }

    fn err(&self, col: usize, msg: String) -> AuditError {
        AuditError::Parse {
            line: self.line,
            col,
            msg,
        }
    }
}

fn parse_kv<'a>(
    cur: &Cursor<'_>,
    col: usize,
    token: &'a str,
    key: &str,
) -> Result<&'a str, AuditError> {
    token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| cur.err(col, format!("expected {key}=<glob>, found {token:?}")))
}

fn parse_hhmm(cur: &Cursor<'_>, col: usize, text: &str) -> Result<u16, AuditError> {
    let bad = || cur.err(col, format!("invalid time {text:?}, expected HH:MM"));
    let (h, m) = text.split_once(':').ok_or_else(bad)?;
    if h.len() != 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: u16 = h.parse().map_err(|_| bad())?;
    let m: u16 = m.parse().map_err(|_| bad())?;
    if h > 23 || m > 59 {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

/// Compile one rule line. Line numbers in errors are 1-based positions in
/// the enclosing rules text (1 for a standalone rule).
pub fn compile_rule(spec: &str) -> Result<AuditRule, AuditError> {
    compile_rule_at(spec, 1)
}

fn compile_rule_at(spec: &str, line: usize) -> Result<AuditRule, AuditError> {
    let mut cur = Cursor {
        line,
        text: spec,
        pos: 0,
    };
    cur.expect("rule")?;
    let (_, rule_id) = cur.required("rule id")?;
    cur.expect("scope")?;
    let (col, tok) = cur.required("id=<glob>")?;
    let identity = Glob::new(parse_kv(&cur, col, tok, "id")?);
    let (col, tok) = cur.required("object=<glob>")?;
    let object = Glob::new(parse_kv(&cur, col, tok, "object")?);
    cur.expect("when")?;
    let (col, kind) = cur.required("predicate")?;

    let predicate = match kind {
        "time_window" => {
            let (wcol, w) = cur.required("HH:MM-HH:MM")?;
            let (start, end) = w
                .split_once('-')
                .ok_or_else(|| cur.err(wcol, format!("invalid window {w:?}")))?;
            let start_min = parse_hhmm(&cur, wcol, start)?;
            let end_min = parse_hhmm(&cur, wcol, end)?;
            if start_min == end_min {
                return Err(AuditError::InvalidWindow(w.to_string()));
            }
            Predicate::TimeWindow { start_min, end_min }
        }
        "network_allow" => {
            let (_, list) = cur.required("cidr list")?;
            let mut blocks = Vec::new();
            for part in list.split(',') {
                blocks.push(Cidr::parse(part)?);
            }
            Predicate::NetworkAllow(blocks)
        }
        "location_allow" => {
            let (_, list) = cur.required("zone list")?;
            Predicate::LocationAllow(list.split(',').map(str::to_string).collect())
        }
        "device_allow" => {
            let (_, list) = cur.required("device list")?;
            Predicate::DeviceAllow(list.split(',').map(str::to_string).collect())
        }
        "rate_limit" => {
            let (ncol, n) = cur.required("max count")?;
            let max: u64 = n
                .parse()
                .map_err(|_| cur.err(ncol, format!("invalid count {n:?}")))?;
            cur.expect("per")?;
            let (wcol, w) = cur.required("window like 60s")?;
            let secs = w
                .strip_suffix('s')
                .and_then(|v| v.parse::<u64>().ok())
                .ok_or_else(|| cur.err(wcol, format!("invalid window {w:?}, expected <n>s")))?;
            if secs == 0 {
                return Err(AuditError::InvalidWindow(w.to_string()));
            }
            Predicate::RateLimit {
                max,
                window_secs: secs,
            }
        }
        "outcome_watch" => {
            let (ocol, o) = cur.required("denied")?;
            if o != "denied" {
                return Err(
                    cur.err(ocol, format!("outcome_watch supports only denied, found {o:?}"))
                );
            }
            Predicate::OutcomeWatch
        }
        other => {
            return Err(cur.err(col, format!("unknown predicate {other:?}")));
        }
    };

    if let Some((col, tok)) = cur.token() {
        return Err(cur.err(col, format!("unexpected trailing token {tok:?}")));
    }
    Ok(AuditRule {
        rule_id: rule_id.to_string(),
        scope: RuleScope { identity, object },
        predicate,
    })
}

/// Compile a rules file: one rule per line, blank lines and `#` comments
/// skipped.
pub fn compile_rules(text: &str) -> Result<Vec<AuditRule>, AuditError> {
    let mut rules = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        rules.push(compile_rule_at(line, idx + 1)?);
    }
    Ok(rules)
}

// --- evaluation ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub rule_id: String,
    pub seq: u64,
    pub explanation: String,
}

fn minute_of_day(time_ns: u64) -> u16 {
    ((time_ns / 60_000_000_000) % 1440) as u16
}

fn fmt_hhmm(min: u16) -> String {
    format!("{:02}:{:02}", min / 60, min % 60)
}

fn in_window(minute: u16, start: u16, end: u16) -> bool {
    if start < end {
        (start..end).contains(&minute)
    } else {
        minute >= start || minute < end
    }
}

fn entry_ip(entry: &AccessLogEntry) -> Option<IpAddr> {
    entry
        .network
        .parse::<std::net::SocketAddr>()
        .map(|sa| sa.ip())
        .ok()
        .or_else(|| entry.network.parse::<IpAddr>().ok())
}

/// Evaluate `rules` against `entries` (already scope-filtered to the audit's
/// period and principal). A finding is emitted for every violating
/// (rule, entry) pair, ordered by entry seq then rule order.
pub fn evaluate_rules(rules: &[AuditRule], entries: &[AccessLogEntry]) -> Vec<Finding> {
    let mut findings = Vec::new();
    for entry in entries {
        for rule in rules {
            if !rule.in_scope(entry) {
                continue;
            }
            let explanation = match &rule.predicate {
                Predicate::TimeWindow { start_min, end_min } => {
                    let minute = minute_of_day(entry.time_ns);
                    if in_window(minute, *start_min, *end_min) {
                        continue;
                    }
                    format!(
                        "access at {} outside allowed window {}-{}",
                        fmt_hhmm(minute),
                        fmt_hhmm(*start_min),
                        fmt_hhmm(*end_min)
                    )
                }
                Predicate::NetworkAllow(blocks) => {
                    let allowed = entry_ip(entry)
                        .map(|ip| blocks.iter().any(|b| b.contains(ip)))
                        .unwrap_or(false);
                    if allowed {
                        continue;
                    }
                    let list: Vec<String> = blocks.iter().map(|b| b.to_string()).collect();
                    format!(
                        "network {} outside allowed ranges {}",
                        entry.network,
                        list.join(",")
                    )
                }
                Predicate::LocationAllow(zones) => {
                    if zones.iter().any(|z| z == &entry.location_zone) {
                        continue;
                    }
                    format!(
                        "location {} not in allowed zones {}",
                        entry.location_zone,
                        zones.join(",")
                    )
                }
                Predicate::DeviceAllow(devices) => {
                    if devices.iter().any(|d| d == &entry.device_id) {
                        continue;
                    }
                    format!(
                        "device {} not in allowed devices {}",
                        entry.device_id,
                        devices.join(",")
                    )
                }
                Predicate::RateLimit { max, window_secs } => {
                    let window_ns = window_secs.saturating_mul(1_000_000_000);
                    let lo = entry.time_ns.saturating_sub(window_ns);
                    // trailing window (t-W, t], same identity, in rule scope
                    let count = entries
                        .iter()
                        .filter(|e| {
                            e.identity == entry.identity
                                && rule.in_scope(e)
                                && e.time_ns > lo
                                && e.time_ns <= entry.time_ns
                        })
                        .count() as u64;
                    if count <= *max {
                        continue;
                    }
                    format!(
                        "{count} accesses by {} within {window_secs}s exceeds limit {max}",
                        entry.identity
                    )
                }
                Predicate::OutcomeWatch => {
                    if entry.outcome != crate::ledger::Outcome::Denied {
                        continue;
                    }
                    "denied access attempt".to_string()
                }
            };
            findings.push(Finding {
                rule_id: rule.rule_id.clone(),
                seq: entry.seq,
                explanation,
            });
        }
    }
    findings
}

// --- reports ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AuditType {
    Interim,
    Final,
    External,
}

impl AuditType {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditType::Interim => "INTERIM",
            AuditType::Final => "FINAL",
            AuditType::External => "EXTERNAL",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditTotals {
    pub entries_scanned: u64,
    pub by_outcome: BTreeMap<String, u64>,
    pub by_op: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub report_id: String,
    pub audit_type: AuditType,
    pub period_start_ns: u64,
    pub period_end_ns: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scope_identity: Option<String>,
    pub findings: Vec<Finding>,
    pub totals: AuditTotals,
    /// `"OK"` or `"FIRST_BAD <seq>"`.
    pub ledger_verification: String,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn fresh_report_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn verification_string(outcome: VerifyOutcome) -> String {
    match outcome {
        VerifyOutcome::Ok => "OK".to_string(),
        VerifyOutcome::FirstBad(seq) => format!("FIRST_BAD {seq}"),
    }
}

/// Scan the ledger over `[period_start_ns, period_end_ns)` and evaluate
/// `rules`. EXTERNAL audits require `scope_identity` and see only that
/// principal's entries (as actor, or as owner of the touched object).
/// Deterministic given ledger and rules, up to `report_id`.
pub fn run_audit(
    ledger: &Ledger,
    audit_type: AuditType,
    period: (u64, u64),
    rules: &[AuditRule],
    scope_identity: Option<&str>,
) -> Result<AuditReport, AuditError> {
    let (start, end) = period;
    if start > end {
        return Err(AuditError::BadPeriod);
    }
    if audit_type == AuditType::External && scope_identity.is_none() {
        return Err(AuditError::ScopeRequired);
    }

    let verification = verification_string(ledger.verify(None)?);
    let mut entries = ledger.query(&crate::ledger::LedgerFilter {
        time_range: Some((start, end)),
        ..Default::default()
    })?;
    if audit_type == AuditType::External {
        let scope = scope_identity.expect("checked above");
        let owner_prefix = format!("{scope}/");
        entries.retain(|e| e.identity == scope || e.object_id.starts_with(&owner_prefix));
    }

    let mut totals = AuditTotals {
        entries_scanned: entries.len() as u64,
        ..Default::default()
    };
    for e in &entries {
        *totals
            .by_outcome
            .entry(e.outcome.as_str().into())
            .or_insert(0) += 1;
        *totals.by_op.entry(e.op.as_str().into()).or_insert(0) += 1;
    }

    Ok(AuditReport {
        report_id: fresh_report_id(),
        audit_type,
        period_start_ns: start,
        period_end_ns: end,
        scope_identity: scope_identity.map(str::to_string),
        findings: evaluate_rules(rules, &entries),
        totals,
        ledger_verification: verification,
    })
}

// --- scheduling ------------------------------------------------------------

/// Interim/final audit cadence over an injectable clock. `due` hands back
/// every period whose end has passed, in chronological order, each exactly
/// once; adjacent periods partition elapsed time.
#[derive(Debug, Clone)]
pub struct AuditScheduler {
    start_ns: u64,
    interim_every_ns: u64,
    final_every_ns: u64,
    next_interim: u64,
    next_final: u64,
}

impl AuditScheduler {
    pub fn new(start_ns: u64, interim_every_ns: u64, final_every_ns: u64) -> Self {
        assert!(
            interim_every_ns > 0 && final_every_ns > 0,
            "cadence must be positive"
        );
        Self {
            start_ns,
            interim_every_ns,
            final_every_ns,
            next_interim: 0,
            next_final: 0,
        }
    }

    pub fn with_defaults(start_ns: u64) -> Self {
        Self::new(start_ns, DEFAULT_INTERIM_EVERY_NS, DEFAULT_FINAL_EVERY_NS)
    }

    /// Periods due at `now_ns`, ordered by period end (interim before final
    /// on ties).
    pub fn due(&mut self, now_ns: u64) -> Vec<(AuditType, (u64, u64))> {
        let mut out = Vec::new();
        loop {
            let interim_end = self
                .start_ns
                .checked_add((self.next_interim + 1) * self.interim_every_ns);
            let final_end = self
                .start_ns
                .checked_add((self.next_final + 1) * self.final_every_ns);
            let interim_due = interim_end.map(|e| e <= now_ns).unwrap_or(false);
            let final_due = final_end.map(|e| e <= now_ns).unwrap_or(false);
            match (interim_due, final_due) {
                (false, false) => break,
                (true, false) => self.push_interim(&mut out),
                (false, true) => self.push_final(&mut out),
                (true, true) => {
                    if interim_end <= final_end {
                        self.push_interim(&mut out);
                    } else {
                        self.push_final(&mut out);
                    }
                }
            }
        }
        out
    }

    fn push_interim(&mut self, out: &mut Vec<(AuditType, (u64, u64))>) {
        let start = self.start_ns + self.next_interim * self.interim_every_ns;
        out.push((AuditType::Interim, (start, start + self.interim_every_ns)));
        self.next_interim += 1;
    }

    fn push_final(&mut self, out: &mut Vec<(AuditType, (u64, u64))>) {
        let start = self.start_ns + self.next_final * self.final_every_ns;
        out.push((AuditType::Final, (start, start + self.final_every_ns)));
        self.next_final += 1;
    }

    /// Run every due audit against the ledger with the operator rule set.
    pub fn run_due(
        &mut self,
        ledger: &Ledger,
        rules: &[AuditRule],
        now_ns: u64,
    ) -> Result<Vec<AuditReport>, AuditError> {
        let mut reports = Vec::new();
        for (ty, period) in self.due(now_ns) {
            reports.push(run_audit(ledger, ty, period, rules, None)?);
        }
        Ok(reports)
    }
}

// --- third-party export ----------------------------------------------------

#[derive(Debug, Serialize)]
struct ExportHeader<'a> {
    export: &'a str,
    version: u32,
    period_start_ns: u64,
    period_end_ns: u64,
    record_count: u64,
    ledger_verification: String,
}

#[derive(Debug, Serialize)]
struct ExportRecord<'a> {
    seq: u64,
    time_ns: u64,
    identity: &'a str,
    network: &'a str,
    location_zone: &'a str,
    application: &'a str,
    device_id: &'a str,
    op: &'a str,
    object_id: &'a str,
    outcome: &'a str,
    entry_hash: String,
    prev_hash: String,
    block_hash: String,
}

/// Newline-delimited JSON for third-party auditors: one header line, then
/// one record per ledger entry in the period. Contains log fields and chain
/// hashes only; envelope bytes never enter this path.
pub fn export_for_tpa(ledger: &Ledger, period: (u64, u64)) -> Result<Vec<u8>, AuditError> {
    let (start, end) = period;
    if start > end {
        return Err(AuditError::BadPeriod);
    }
    let verification = verification_string(ledger.verify(None)?);
    let blocks: Vec<_> = ledger
        .blocks()?
        .into_iter()
        .filter(|b| b.entry.time_ns >= start && b.entry.time_ns < end)
        .collect();

    let mut out = Vec::new();
    let header = ExportHeader {
        export: "aas-log-export",
        version: 1,
        period_start_ns: start,
        period_end_ns: end,
        record_count: blocks.len() as u64,
        ledger_verification: verification,
    };
    out.extend_from_slice(
        serde_json::to_string(&header)
            .expect("header serializes")
            .as_bytes(),
    );
    out.push(b'\n');
    for block in &blocks {
        let e = &block.entry;
        let record = ExportRecord {
            seq: e.seq,
            time_ns: e.time_ns,
            identity: &e.identity,
            network: &e.network,
            location_zone: &e.location_zone,
            application: &e.application,
            device_id: &e.device_id,
            op: e.op.as_str(),
            object_id: &e.object_id,
            outcome: e.outcome.as_str(),
            entry_hash: hex::encode(block.entry_hash),
            prev_hash: hex::encode(block.prev_hash),
            block_hash: hex::encode(block.block_hash),
        };
        out.extend_from_slice(
            serde_json::to_string(&record)
                .expect("record serializes")
                .as_bytes(),
        );
        out.push(b'\n');
    }
    Ok(out)
}
