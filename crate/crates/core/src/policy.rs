//! Channel switching decisions.
//!
//! Every rule is a pure function of the connection's queue length Q(i), its
//! current-flow size f(i), the DCH pool occupancy and the request set R, so
//! the policies can be exercised without the event kernel.
//!
//! | kind   | FACH -> DCH trigger              | waiter selection               |
//! |--------|----------------------------------|--------------------------------|
//! | QS     | Q > T_h                          | max Q                          |
//! | FS     | f > s                            | max Q                          |
//! | QSFS   | Q > T_h and f > s                | max Q                          |
//! | FS-DCH | f <= s, or f > s and Q > T_h     | new flows by age, then max Q   |
//! | MT     | Q > T_h                          | oldest request (FCFS)          |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;
use crate::ConnId;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no waiting request to grant")]
    EmptyRequestSet,
    #[error("invalid policy parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "qs")]
    Qs,
    #[serde(rename = "fs")]
    Fs,
    #[serde(rename = "qsfs")]
    Qsfs,
    #[serde(rename = "fsdch", alias = "fs-dch")]
    FsDch,
    #[serde(rename = "mt")]
    Mt,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [PolicyKind::Qs, PolicyKind::Fs, PolicyKind::Qsfs, PolicyKind::FsDch, PolicyKind::Mt];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Qs => "qs",
            PolicyKind::Fs => "fs",
            PolicyKind::Qsfs => "qsfs",
            PolicyKind::FsDch => "fsdch",
            PolicyKind::Mt => "mt",
        }
    }

    /// Whether the kind reads the flow size f(i) anywhere in its rules.
    pub fn uses_flow_size(self) -> bool {
        matches!(self, PolicyKind::Fs | PolicyKind::Qsfs | PolicyKind::FsDch)
    }

    pub fn uses_queue_threshold(self) -> bool {
        !matches!(self, PolicyKind::Fs)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qs" => Ok(PolicyKind::Qs),
            "fs" => Ok(PolicyKind::Fs),
            "qsfs" => Ok(PolicyKind::Qsfs),
            "fsdch" | "fs-dch" => Ok(PolicyKind::FsDch),
            "mt" => Ok(PolicyKind::Mt),
            other => Err(format!("unknown policy `{other}` (expected qs, fs, qsfs, fsdch or mt)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Upper queue threshold T_h, packets.
    pub t_high: u64,
    /// Lower queue threshold T_l, packets.
    pub t_low: u64,
    /// Flow-size threshold s, packets.
    pub s: u64,
    /// Inactivity timer T_out, seconds.
    pub t_out: f64,
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.t_high < self.t_low {
            return Err(PolicyError::InvalidParameter {
                field: "t_h",
                reason: format!("T_h ({}) must be at least T_l ({})", self.t_high, self.t_low),
            });
        }
        if !(self.t_out > 0.0 && self.t_out.is_finite()) {
            return Err(PolicyError::InvalidParameter {
                field: "t_out",
                reason: format!("must be positive, got {}", self.t_out),
            });
        }
        Ok(())
    }

    fn is_new_flow(&self, served: u64) -> bool {
        served <= self.s
    }
}

/// U_dch and N_dch at the instant of a decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolView {
    pub used: usize,
    pub total: usize,
}

impl PoolView {
    pub fn is_full(&self) -> bool {
        self.used >= self.total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnqueueAction {
    SwitchNow,
    AddRequest,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServedAction {
    StartTimer,
    PreemptNow,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerAction {
    /// Switch to FACH; `reset_flow` says whether f(i) is zeroed once the
    /// connection arrives there.
    VacateAndGrant { reset_flow: bool },
    RestartTimer,
}

/// Whether a FACH-settled connection wants a DCH.
pub fn wants_dch(cfg: &PolicyConfig, queue_len: u64, served: u64) -> bool {
    let over_th = queue_len > cfg.t_high;
    match cfg.kind {
        PolicyKind::Qs | PolicyKind::Mt => over_th,
        PolicyKind::Fs => served > cfg.s,
        PolicyKind::Qsfs => over_th && served > cfg.s,
        PolicyKind::FsDch => cfg.is_new_flow(served) || over_th,
    }
}

/// Decision after a packet joins the NodeB queue of a FACH-settled connection.
pub fn on_enqueue(cfg: &PolicyConfig, queue_len: u64, served: u64, pool: PoolView) -> EnqueueAction {
    if !wants_dch(cfg, queue_len, served) {
        EnqueueAction::None
    } else if pool.is_full() {
        EnqueueAction::AddRequest
    } else {
        EnqueueAction::SwitchNow
    }
}

/// Decision after a DCH occupant finishes sending a packet. `served` already
/// includes that packet.
pub fn on_served_dch(
    cfg: &PolicyConfig,
    queue_len: u64,
    served: u64,
    pool: PoolView,
    waiters: bool,
    timer_pending: bool,
) -> ServedAction {
    if queue_len >= cfg.t_low {
        return ServedAction::None;
    }
    if cfg.kind == PolicyKind::FsDch && !cfg.is_new_flow(served) && pool.is_full() && waiters {
        return ServedAction::PreemptNow;
    }
    if timer_pending {
        ServedAction::None
    } else {
        ServedAction::StartTimer
    }
}

/// Decision when the inactivity timer of a DCH occupant fires.
pub fn on_timer_expired(cfg: &PolicyConfig, queue_len: u64, served: u64, pool: PoolView, waiters: bool) -> TimerAction {
    if queue_len < cfg.t_low && pool.is_full() && waiters {
        let reset_flow = match cfg.kind {
            PolicyKind::Qs | PolicyKind::Mt => false,
            PolicyKind::Fs | PolicyKind::Qsfs => true,
            PolicyKind::FsDch => cfg.is_new_flow(served),
        };
        TimerAction::VacateAndGrant { reset_flow }
    } else {
        TimerAction::RestartTimer
    }
}

/// Whether an idle period of T_out on the FACH ends the current flow.
pub fn resets_flow_on_fach_idle(kind: PolicyKind) -> bool {
    kind.uses_flow_size()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RequestEntry {
    pub conn: ConnId,
    pub enqueued_at: SimTime,
}

impl RequestEntry {
    /// W(i): how long the request has waited.
    pub fn waited(&self, now: SimTime) -> f64 {
        now - self.enqueued_at
    }
}

/// The set R of pending switch-to-DCH requests, at most one per connection.
#[derive(Clone, Debug, Default)]
pub struct RequestSet {
    entries: Vec<RequestEntry>,
}

impl RequestSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, conn: ConnId) -> bool {
        self.entries.iter().any(|e| e.conn == conn)
    }

    pub fn get(&self, conn: ConnId) -> Option<&RequestEntry> {
        self.entries.iter().find(|e| e.conn == conn)
    }

    /// Adds a request; a connection already waiting keeps its original timestamp.
    pub fn add(&mut self, conn: ConnId, now: SimTime) -> bool {
        if self.contains(conn) {
            return false;
        }
        self.entries.push(RequestEntry { conn, enqueued_at: now });
        true
    }

    pub fn remove(&mut self, conn: ConnId) -> Option<RequestEntry> {
        let pos = self.entries.iter().position(|e| e.conn == conn)?;
        Some(self.entries.remove(pos))
    }

    pub fn iter(&self) -> impl Iterator<Item = &RequestEntry> {
        self.entries.iter()
    }
}

/// Per-waiter facts needed to pick a winner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaiterView {
    pub queue_len: u64,
    pub served: u64,
}

/// Picks which waiting connection gets the next DCH. Ties go to the lowest
/// connection id. The entry is not removed here; the caller removes it once
/// the switch has actually begun.
pub fn select_waiter<F>(cfg: &PolicyConfig, requests: &RequestSet, view: F) -> Result<ConnId, PolicyError>
where
    F: Fn(ConnId) -> WaiterView,
{
    let by_queue = |entries: &mut dyn Iterator<Item = &RequestEntry>| {
        entries
            .map(|e| (e.conn, view(e.conn).queue_len))
            .min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)))
            .map(|(c, _)| c)
    };
    let oldest = |entries: &mut dyn Iterator<Item = &RequestEntry>| {
        entries
            .min_by(|a, b| a.enqueued_at.cmp(&b.enqueued_at).then(a.conn.cmp(&b.conn)))
            .map(|e| e.conn)
    };

    let winner = match cfg.kind {
        PolicyKind::Qs | PolicyKind::Fs | PolicyKind::Qsfs => by_queue(&mut requests.iter()),
        PolicyKind::Mt => oldest(&mut requests.iter()),
        PolicyKind::FsDch => {
            let mut fresh = requests.iter().filter(|e| cfg.is_new_flow(view(e.conn).served)).peekable();
            if fresh.peek().is_some() {
                oldest(&mut fresh)
            } else {
                by_queue(&mut requests.iter())
            }
        }
    };
    winner.ok_or(PolicyError::EmptyRequestSet)
}

/// A DCH just became free: grants it to the chosen waiter, if any.
pub fn on_dch_freed<F>(cfg: &PolicyConfig, requests: &RequestSet, view: F) -> Option<ConnId>
where
    F: Fn(ConnId) -> WaiterView,
{
    if requests.is_empty() {
        return None;
    }
    select_waiter(cfg, requests, view).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: PolicyKind) -> PolicyConfig {
        PolicyConfig { kind, t_high: 4, t_low: 1, s: 5, t_out: 0.5 }
    }

    const FREE: PoolView = PoolView { used: 0, total: 1 };
    const FULL: PoolView = PoolView { used: 1, total: 1 };

    fn t(secs: f64) -> SimTime {
        SimTime::from_secs(secs)
    }

    #[test]
    fn qs_switches_when_queue_exceeds_threshold() {
        assert_eq!(on_enqueue(&cfg(PolicyKind::Qs), 5, 0, FREE), EnqueueAction::SwitchNow);
        assert_eq!(on_enqueue(&cfg(PolicyKind::Qs), 4, 0, FREE), EnqueueAction::None);
        assert_eq!(on_enqueue(&cfg(PolicyKind::Qs), 5, 0, FULL), EnqueueAction::AddRequest);
    }

    #[test]
    fn fs_uses_flow_size_only() {
        assert_eq!(on_enqueue(&cfg(PolicyKind::Fs), 0, 6, FREE), EnqueueAction::SwitchNow);
        assert_eq!(on_enqueue(&cfg(PolicyKind::Fs), 50, 5, FREE), EnqueueAction::None);
    }

    #[test]
    fn qsfs_needs_both_conditions() {
        assert_eq!(on_enqueue(&cfg(PolicyKind::Qsfs), 6, 2, FREE), EnqueueAction::None);
        assert_eq!(on_enqueue(&cfg(PolicyKind::Qsfs), 2, 9, FREE), EnqueueAction::None);
        assert_eq!(on_enqueue(&cfg(PolicyKind::Qsfs), 6, 9, FULL), EnqueueAction::AddRequest);
    }

    #[test]
    fn fsdch_new_flow_requests_immediately() {
        assert_eq!(on_enqueue(&cfg(PolicyKind::FsDch), 1, 0, FULL), EnqueueAction::AddRequest);
        assert_eq!(on_enqueue(&cfg(PolicyKind::FsDch), 1, 0, FREE), EnqueueAction::SwitchNow);
        // Old flow: only a long queue brings it back.
        assert_eq!(on_enqueue(&cfg(PolicyKind::FsDch), 3, 9, FREE), EnqueueAction::None);
        assert_eq!(on_enqueue(&cfg(PolicyKind::FsDch), 5, 9, FREE), EnqueueAction::SwitchNow);
    }

    #[test]
    fn served_on_dch_starts_timer_when_queue_drains() {
        let qs = cfg(PolicyKind::Qs);
        assert_eq!(on_served_dch(&qs, 0, 3, FULL, true, false), ServedAction::StartTimer);
        assert_eq!(on_served_dch(&qs, 0, 3, FULL, true, true), ServedAction::None);
        assert_eq!(on_served_dch(&qs, 2, 3, FULL, true, false), ServedAction::None);
    }

    #[test]
    fn fsdch_preempts_old_flows_when_others_wait() {
        let c = cfg(PolicyKind::FsDch);
        assert_eq!(on_served_dch(&c, 0, 12, FULL, true, false), ServedAction::PreemptNow);
        assert_eq!(on_served_dch(&c, 0, 12, FULL, false, false), ServedAction::StartTimer);
        // New flows follow the timer rule even with waiters.
        assert_eq!(on_served_dch(&c, 0, 3, FULL, true, false), ServedAction::StartTimer);
    }

    #[test]
    fn timer_expiry_vacates_only_with_waiters() {
        let qs = cfg(PolicyKind::Qs);
        assert_eq!(on_timer_expired(&qs, 0, 9, FULL, true), TimerAction::VacateAndGrant { reset_flow: false });
        assert_eq!(on_timer_expired(&qs, 0, 9, FULL, false), TimerAction::RestartTimer);
        assert_eq!(on_timer_expired(&qs, 3, 9, FULL, true), TimerAction::RestartTimer);
    }

    #[test]
    fn flow_reset_on_vacate_per_kind() {
        let vacate = |kind, served| on_timer_expired(&cfg(kind), 0, served, FULL, true);
        assert_eq!(vacate(PolicyKind::Fs, 9), TimerAction::VacateAndGrant { reset_flow: true });
        assert_eq!(vacate(PolicyKind::Qsfs, 9), TimerAction::VacateAndGrant { reset_flow: true });
        assert_eq!(vacate(PolicyKind::Mt, 9), TimerAction::VacateAndGrant { reset_flow: false });
        assert_eq!(vacate(PolicyKind::FsDch, 3), TimerAction::VacateAndGrant { reset_flow: true });
        assert_eq!(vacate(PolicyKind::FsDch, 9), TimerAction::VacateAndGrant { reset_flow: false });
    }

    #[test]
    fn fach_idle_reset_only_for_flow_size_kinds() {
        assert!(!resets_flow_on_fach_idle(PolicyKind::Qs));
        assert!(!resets_flow_on_fach_idle(PolicyKind::Mt));
        assert!(resets_flow_on_fach_idle(PolicyKind::Fs));
        assert!(resets_flow_on_fach_idle(PolicyKind::Qsfs));
        assert!(resets_flow_on_fach_idle(PolicyKind::FsDch));
    }

    #[test]
    fn request_set_is_idempotent() {
        let mut r = RequestSet::new();
        assert!(r.add(ConnId(1), t(1.0)));
        assert!(!r.add(ConnId(1), t(2.0)));
        assert_eq!(r.len(), 1);
        assert_eq!(r.get(ConnId(1)).unwrap().enqueued_at, t(1.0));
        assert!((r.get(ConnId(1)).unwrap().waited(t(3.5)) - 2.5).abs() < 1e-12);
        assert!(r.remove(ConnId(1)).is_some());
        assert!(r.remove(ConnId(1)).is_none());
    }

    fn requests(entries: &[(u32, f64)]) -> RequestSet {
        let mut r = RequestSet::new();
        for &(c, at) in entries {
            r.add(ConnId(c), t(at));
        }
        r
    }

    #[test]
    fn qs_grants_longest_queue() {
        let r = requests(&[(0, 0.0), (1, 1.0)]);
        let view = |c: ConnId| WaiterView { queue_len: [3, 9][c.index()], served: 0 };
        assert_eq!(select_waiter(&cfg(PolicyKind::Qs), &r, view), Ok(ConnId(1)));
    }

    #[test]
    fn mt_grants_oldest_request() {
        let r = requests(&[(0, 2.0), (1, 1.0)]);
        let view = |c: ConnId| WaiterView { queue_len: [30, 9][c.index()], served: 0 };
        assert_eq!(select_waiter(&cfg(PolicyKind::Mt), &r, view), Ok(ConnId(1)));
    }

    #[test]
    fn fsdch_new_flows_outrank_queue_length() {
        // now = 10: a waited 2 s, b waited 5 s, c is an old flow with a long queue.
        let r = requests(&[(0, 8.0), (1, 5.0), (2, 0.0)]);
        let view = |c: ConnId| match c.0 {
            0 => WaiterView { queue_len: 1, served: 3 },
            1 => WaiterView { queue_len: 1, served: 3 },
            _ => WaiterView { queue_len: 40, served: 9 },
        };
        assert_eq!(select_waiter(&cfg(PolicyKind::FsDch), &r, view), Ok(ConnId(1)));
    }

    #[test]
    fn fsdch_old_flows_by_queue_length() {
        let r = requests(&[(2, 0.0), (3, 1.0)]);
        let view = |c: ConnId| WaiterView { queue_len: if c.0 == 2 { 40 } else { 7 }, served: 9 };
        assert_eq!(select_waiter(&cfg(PolicyKind::FsDch), &r, view), Ok(ConnId(2)));
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let r = requests(&[(4, 0.0), (2, 0.0), (3, 0.0)]);
        let view = |_| WaiterView { queue_len: 5, served: 0 };
        for kind in PolicyKind::ALL {
            assert_eq!(select_waiter(&cfg(kind), &r, view), Ok(ConnId(2)), "{kind}");
        }
    }

    #[test]
    fn empty_request_set_rejected() {
        let view = |_| WaiterView { queue_len: 0, served: 0 };
        assert_eq!(select_waiter(&cfg(PolicyKind::Qs), &RequestSet::new(), view), Err(PolicyError::EmptyRequestSet));
    }

    #[test]
    fn freed_channel_goes_to_a_waiter_or_stays_idle() {
        let view = |_| WaiterView { queue_len: 5, served: 0 };
        let c = cfg(PolicyKind::Qs);
        assert_eq!(on_dch_freed(&c, &requests(&[(7, 0.0)]), view), Some(ConnId(7)));
        assert_eq!(on_dch_freed(&c, &RequestSet::new(), view), None);

        // Two free channels, three waiters: two sequential grants.
        let mut r = requests(&[(0, 0.0), (1, 0.0), (2, 0.0)]);
        let q = |c: ConnId| WaiterView { queue_len: [4, 8, 6][c.index()], served: 0 };
        let first = on_dch_freed(&c, &r, q).unwrap();
        r.remove(first);
        let second = on_dch_freed(&c, &r, q).unwrap();
        assert_eq!((first, second), (ConnId(1), ConnId(2)));
    }

    #[test]
    fn validation() {
        let mut c = cfg(PolicyKind::Qs);
        c.t_high = 0;
        assert!(c.validate().is_err());
        let mut c = cfg(PolicyKind::Qs);
        c.t_out = 0.0;
        assert!(c.validate().is_err());
        assert!(cfg(PolicyKind::FsDch).validate().is_ok());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.as_str().parse::<PolicyKind>(), Ok(kind));
        }
        assert_eq!("FS-DCH".parse::<PolicyKind>(), Ok(PolicyKind::FsDch));
        assert!("lifo".parse::<PolicyKind>().is_err());
    }
}
