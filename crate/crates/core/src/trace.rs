//! Event trace: one line per record, `time kind subject detail`.

use std::fmt;
use std::io::{self, Write};

use crate::radio::Channel;
use crate::sim::SimTime;
use crate::traffic::{BurstId, Phase};
use crate::ConnId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerKind {
    /// DCH inactivity timer.
    Inactivity,
    /// FACH idle timer ending a flow.
    FlowIdle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceEvent {
    BurstGenerated { conn: ConnId, burst: BurstId, size: u64, next_phase: Phase },
    PacketArrival { conn: ConnId, seq: u64, queue_len: usize },
    /// `conn` is `None` for CBR signalling. On the FACH, `served` is the
    /// chosen connection's f(i) and `min_served` the smallest f(i) among the
    /// candidates at selection time.
    TxStart { channel: Channel, conn: Option<ConnId>, seq: u64, served: u64, min_served: u64 },
    TxComplete { channel: Channel, conn: Option<ConnId>, seq: u64 },
    SwitchBegin { conn: ConnId, from: Channel, to: Channel, completes_at: SimTime },
    SwitchComplete { conn: ConnId, from: Channel, to: Channel },
    TimerExpiry { conn: ConnId, timer: TimerKind },
    CbrEmission { waiting: usize },
    AckArrival { conn: ConnId, seq: u64 },
    BurstComplete { conn: ConnId, burst: BurstId, response: f64 },
    RequestAdded { conn: ConnId, pending: usize },
    /// A freed DCH handed to a waiter. `new_flow_waiting` says whether any
    /// entry in R was a new flow (f <= s) at grant time.
    Grant { conn: ConnId, channel: Channel, winner_new_flow: bool, new_flow_waiting: bool },
    FlowReset { conn: ConnId },
}

impl TraceEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceEvent::BurstGenerated { .. } => "burst-generation",
            TraceEvent::PacketArrival { .. } => "packet-arrival-at-queue",
            TraceEvent::TxStart { .. } => "transmission-start",
            TraceEvent::TxComplete { .. } => "transmission-complete",
            TraceEvent::SwitchBegin { .. } => "switch-begin",
            TraceEvent::SwitchComplete { .. } => "switch-complete",
            TraceEvent::TimerExpiry { .. } => "timer-expiry",
            TraceEvent::CbrEmission { .. } => "cbr-emission",
            TraceEvent::AckArrival { .. } => "ack-arrival",
            TraceEvent::BurstComplete { .. } => "burst-complete",
            TraceEvent::RequestAdded { .. } => "request",
            TraceEvent::Grant { .. } => "grant",
            TraceEvent::FlowReset { .. } => "flow-reset",
        }
    }
}

struct Subject(Option<ConnId>, Option<Channel>);

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.0, self.1) {
            (Some(c), _) => write!(f, "conn{}", c.0),
            (None, Some(ch)) => write!(f, "{ch}"),
            (None, None) => f.write_str("cbr"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub event: TraceEvent,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ", self.time, self.event.kind())?;
        match self.event {
            TraceEvent::BurstGenerated { conn, burst, size, next_phase } => {
                let phase = if next_phase == Phase::Off { "off" } else { "on" };
                write!(f, "{} burst={} size={size} next={phase}", Subject(Some(conn), None), burst.0)
            }
            TraceEvent::PacketArrival { conn, seq, queue_len } => {
                write!(f, "{} seq={seq} q={queue_len}", Subject(Some(conn), None))
            }
            TraceEvent::TxStart { channel, conn: Some(c), seq, served, min_served } => {
                write!(f, "{channel} conn={} seq={seq} f={served} fmin={min_served}", c.0)
            }
            TraceEvent::TxStart { channel, conn: None, .. } => write!(f, "{channel} cbr"),
            TraceEvent::TxComplete { channel, conn: Some(c), seq } => write!(f, "{channel} conn={} seq={seq}", c.0),
            TraceEvent::TxComplete { channel, conn: None, .. } => write!(f, "{channel} cbr"),
            TraceEvent::SwitchBegin { conn, from, to, completes_at } => {
                write!(f, "{} {from}->{to} until={completes_at}", Subject(Some(conn), None))
            }
            TraceEvent::SwitchComplete { conn, from, to } => write!(f, "{} {from}->{to}", Subject(Some(conn), None)),
            TraceEvent::TimerExpiry { conn, timer } => {
                let which = match timer {
                    TimerKind::Inactivity => "inactivity",
                    TimerKind::FlowIdle => "flow-idle",
                };
                write!(f, "{} {which}", Subject(Some(conn), None))
            }
            TraceEvent::CbrEmission { waiting } => write!(f, "{} waiting={waiting}", Subject(None, None)),
            TraceEvent::AckArrival { conn, seq } => write!(f, "{} seq={seq}", Subject(Some(conn), None)),
            TraceEvent::BurstComplete { conn, burst, response } => {
                write!(f, "{} burst={} response={response:.9}", Subject(Some(conn), None), burst.0)
            }
            TraceEvent::RequestAdded { conn, pending } => write!(f, "{} pending={pending}", Subject(Some(conn), None)),
            TraceEvent::Grant { conn, channel, winner_new_flow, new_flow_waiting } => write!(
                f,
                "{} {channel} new_flow={winner_new_flow} new_flow_waiting={new_flow_waiting}",
                Subject(Some(conn), None)
            ),
            TraceEvent::FlowReset { conn } => write!(f, "{} f=0", Subject(Some(conn), None)),
        }
    }
}

/// Where trace records go. Records are only built when a sink is active.
#[derive(Default)]
pub enum TraceSink {
    #[default]
    Off,
    Memory(Vec<TraceRecord>),
    Writer { out: Box<dyn Write + Send>, error: Option<io::Error> },
}

impl TraceSink {
    pub fn memory() -> Self {
        TraceSink::Memory(Vec::new())
    }

    pub fn writer(out: Box<dyn Write + Send>) -> Self {
        TraceSink::Writer { out, error: None }
    }

    pub fn is_on(&self) -> bool {
        !matches!(self, TraceSink::Off)
    }

    pub fn push(&mut self, time: SimTime, event: TraceEvent) {
        match self {
            TraceSink::Off => {}
            TraceSink::Memory(records) => records.push(TraceRecord { time, event }),
            TraceSink::Writer { out, error } => {
                if error.is_none() {
                    if let Err(e) = writeln!(out, "{}", TraceRecord { time, event }) {
                        *error = Some(e);
                    }
                }
            }
        }
    }

    /// Flushes a writer sink and returns the in-memory records, if any.
    pub fn finish(self) -> io::Result<Vec<TraceRecord>> {
        match self {
            TraceSink::Off => Ok(Vec::new()),
            TraceSink::Memory(records) => Ok(records),
            TraceSink::Writer { mut out, error } => {
                if let Some(e) = error {
                    return Err(e);
                }
                out.flush()?;
                Ok(Vec::new())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let rec = TraceRecord {
            time: SimTime::from_secs(1.5),
            event: TraceEvent::SwitchBegin {
                conn: ConnId(2),
                from: Channel::Fach,
                to: Channel::Dch(0),
                completes_at: SimTime::from_secs(1.75),
            },
        };
        assert_eq!(rec.to_string(), "1.500000000 switch-begin conn2 fach->dch0 until=1.750000000");
        let cbr = TraceRecord { time: SimTime::ZERO, event: TraceEvent::CbrEmission { waiting: 1 } };
        assert_eq!(cbr.to_string(), "0.000000000 cbr-emission cbr waiting=1");
    }

    #[test]
    fn off_sink_records_nothing() {
        let mut sink = TraceSink::Off;
        sink.push(SimTime::ZERO, TraceEvent::FlowReset { conn: ConnId(0) });
        assert!(sink.finish().unwrap().is_empty());
    }
}
