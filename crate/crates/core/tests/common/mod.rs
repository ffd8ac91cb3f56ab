#![allow(dead_code)]

use std::collections::HashMap;

use chanswitch::model::{RunOutcome, SimOptions, Simulation};
use chanswitch::radio::Channel;
use chanswitch::trace::{TraceEvent, TraceRecord, TraceSink};
use chanswitch::{ConnId, FachDiscipline, PolicyKind, ScenarioConfig};

pub fn traced(cfg: ScenarioConfig) -> RunOutcome {
    let opts = SimOptions { audit: true, trace: TraceSink::memory(), ..Default::default() };
    Simulation::new(cfg, opts).unwrap().run().unwrap()
}

pub fn short(policy: PolicyKind, n_tcp: usize, seed: u64, duration_s: f64) -> ScenarioConfig {
    ScenarioConfig { policy, n_tcp, seed, duration_s, ..Default::default() }
}

/// Checks that need the whole event sequence rather than a snapshot.
pub fn trace_violations(trace: &[TraceRecord], policy: PolicyKind, scheduler: FachDiscipline) -> Vec<String> {
    let mut out = Vec::new();
    let mut switching: HashMap<ConnId, f64> = HashMap::new();
    for r in trace {
        let t = r.time.as_secs();
        match r.event {
            TraceEvent::SwitchBegin { conn, .. } => {
                switching.insert(conn, t);
            }
            TraceEvent::SwitchComplete { conn, .. } => {
                if switching.remove(&conn).is_none() {
                    out.push(format!("{t}: conn{} completed a switch it never began", conn.0));
                }
            }
            TraceEvent::TxStart { conn: Some(c), channel, seq, served, min_served } => {
                if let Some(since) = switching.get(&c) {
                    out.push(format!("{t}: conn{} seq {seq} sent on {channel} while switching since {since}", c.0));
                }
                if channel == Channel::Fach && scheduler == FachDiscipline::Las && served != min_served {
                    out.push(format!("{t}: LAS served conn{} with f={served} while min f={min_served}", c.0));
                }
            }
            TraceEvent::Grant { conn, winner_new_flow, new_flow_waiting, .. }
                if policy == PolicyKind::FsDch && new_flow_waiting && !winner_new_flow =>
            {
                out.push(format!("{t}: FS-DCH granted old flow conn{} over a waiting new flow", conn.0));
            }
            _ => {}
        }
    }
    out
}

pub fn lines(trace: &[TraceRecord]) -> Vec<String> {
    trace.iter().map(|r| r.to_string()).collect()
}
