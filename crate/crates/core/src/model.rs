//! The single-cell downlink model: sources and senders, backhaul, NodeB
//! queues, FACH and DCH transmitters, the switch manager and the policy
//! engine, driven by one event queue.

use std::collections::VecDeque;

use crate::config::ScenarioConfig;
use crate::error::Error;
use crate::metrics::{BurstLog, BurstRecord, ChannelUsage, ResponseStats};
use crate::policy::{self, EnqueueAction, PolicyConfig, PoolView, RequestSet, ServedAction, TimerAction, WaiterView};
use crate::radio::{
    Assignment, CbrSource, Channel, FachCandidate, FachScheduler, FachSelection, NodeBQueue, RadioRates, SwitchManager,
};
use crate::sim::{Fired, LazyTimer, Scheduler, SimTime};
use crate::trace::{TimerKind, TraceEvent, TraceRecord, TraceSink};
use crate::traffic::{route_ack, Burst, BurstId, DataPacket, OnOffSource, PacketSizes, TcpSender};
use crate::ConnId;

/// Holds every connection on one channel type and disables the policy.
/// Used to validate the transmission model against closed-form times.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pin {
    Fach,
    /// Connection i switches onto DCH i at time zero and stays there.
    Dch,
}

/// A burst injected at a fixed time instead of by the ON/OFF sources.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScriptedBurst {
    pub at: f64,
    pub conn: ConnId,
    pub size: u64,
}

#[derive(Default)]
pub struct SimOptions {
    pub pin: Option<Pin>,
    /// Replaces the ON/OFF sources when set.
    pub script: Option<Vec<ScriptedBurst>>,
    /// Check model invariants after every event.
    pub audit: bool,
    pub trace: TraceSink,
}

#[derive(Clone, Copy, Debug)]
enum Ev {
    SourceBurst(ConnId),
    ScriptBurst(usize),
    PacketArrival(ConnId),
    FachComplete,
    DchComplete(u32),
    SwitchComplete(ConnId),
    DchTimer(ConnId),
    FachIdleTimer(ConnId),
    CbrEmit,
    AckArrival { conn: ConnId, seq: u64 },
}

#[derive(Clone, Copy, Debug)]
enum FachTx {
    Cbr,
    Data(DataPacket),
}

struct ConnState {
    source: Option<OnOffSource>,
    sender: TcpSender,
    backhaul: VecDeque<DataPacket>,
    backhaul_free_at: SimTime,
    queue: NodeBQueue,
    /// f(i): packets served in the current flow.
    served: u64,
    dch_timer: LazyTimer,
    idle_timer: LazyTimer,
    on_air: bool,
    reset_flow_on_fach: bool,
    next_script_burst: u64,
    fach_data_served: u64,
    dch_data_served: u64,
}

/// Counters gathered alongside the burst log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub events: u64,
    pub packets_generated: u64,
    pub packets_delivered: u64,
    pub bursts_generated: u64,
    /// Bursts generated after the warmup cutoff.
    pub bursts_after_warmup: u64,
    pub switches: u64,
    pub switches_after_warmup: u64,
    pub off_transitions: u64,
    /// DATA packets each connection had served on the FACH.
    pub fach_data_served: Vec<u64>,
    pub dch_data_served: Vec<u64>,
    pub cbr_sent: u64,
    /// Longest wait of a CBR packet between emission and start of transmission.
    pub max_cbr_wait: f64,
    pub util_fach: f64,
    pub util_dch: f64,
    pub ignored_acks: u64,
}

pub struct RunOutcome {
    pub config: ScenarioConfig,
    pub stats: RunStats,
    pub bursts: Vec<BurstRecord>,
    pub response: Result<ResponseStats, crate::metrics::MetricsError>,
    pub violations: Vec<String>,
    pub trace: Vec<TraceRecord>,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    policy: PolicyConfig,
    pin: Option<Pin>,
    script: Vec<ScriptedBurst>,
    rates: RadioRates,
    sizes: PacketSizes,
    warmup: SimTime,
    end: SimTime,

    sched: Scheduler<Ev>,
    conns: Vec<ConnState>,
    switches: SwitchManager,
    fach: FachScheduler,
    fach_tx: Option<(FachTx, SimTime)>,
    dch_tx: Vec<Option<(DataPacket, SimTime)>>,
    cbr: Option<CbrSource>,
    cbr_waiting: VecDeque<SimTime>,
    requests: RequestSet,

    log: BurstLog,
    usage: ChannelUsage,
    stats: RunStats,
    trace: TraceSink,
    audit: bool,
    violations: Vec<String>,

    released: Vec<DataPacket>,
    candidates: Vec<FachCandidate>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig, options: SimOptions) -> Result<Self, Error> {
        cfg.validate()?;
        let policy = cfg.policy_config();
        policy.validate()?;
        if options.pin == Some(Pin::Dch) && cfg.n_dch < cfg.n_tcp {
            return Err(Error::Config(crate::config::ConfigError::Invalid {
                field: "n_dch",
                reason: format!("pinning {} connections to DCH needs as many channels", cfg.n_tcp),
            }));
        }
        let scripted = options.script.is_some();
        let mut conns = Vec::with_capacity(cfg.n_tcp);
        for i in 0..cfg.n_tcp {
            let id = ConnId(i as u32);
            let source = if scripted { None } else { Some(OnOffSource::new(id, &cfg.on_off(), cfg.seed)?) };
            conns.push(ConnState {
                source,
                sender: TcpSender::new(id, cfg.initial_cwnd, cfg.w_max),
                backhaul: VecDeque::new(),
                backhaul_free_at: SimTime::ZERO,
                queue: NodeBQueue::default(),
                served: 0,
                dch_timer: LazyTimer::default(),
                idle_timer: LazyTimer::default(),
                on_air: false,
                reset_flow_on_fach: false,
                next_script_burst: 0,
                fach_data_served: 0,
                dch_data_served: 0,
            });
        }
        let warmup = SimTime::from_secs(cfg.warmup_cutoff_s());
        Ok(Simulation {
            policy,
            pin: options.pin,
            script: options.script.unwrap_or_default(),
            rates: cfg.rates(),
            sizes: cfg.packet_sizes(),
            warmup,
            end: SimTime::from_secs(cfg.duration_s),
            sched: Scheduler::new(),
            conns,
            switches: SwitchManager::new(cfg.n_tcp, cfg.n_dch, cfg.switch_delay_s),
            fach: FachScheduler::new(cfg.scheduler),
            fach_tx: None,
            dch_tx: vec![None; cfg.n_dch],
            cbr: cfg.cbr_enabled.then(|| CbrSource::new(cfg.cbr_interval_s)),
            cbr_waiting: VecDeque::new(),
            requests: RequestSet::new(),
            log: BurstLog::new(warmup),
            usage: ChannelUsage::new(warmup),
            stats: RunStats::default(),
            trace: options.trace,
            audit: options.audit,
            violations: Vec::new(),
            released: Vec::new(),
            candidates: Vec::new(),
            cfg,
        })
    }

    /// Runs to the configured duration.
    pub fn run(mut self) -> Result<RunOutcome, Error> {
        self.start()?;
        while let Some((now, _, ev)) = self.sched.pop_next(self.end) {
            self.handle(now, ev)?;
            if self.audit {
                self.check_invariants(now);
            }
        }
        self.sched.advance_to(self.end)?;
        self.finish()
    }

    fn start(&mut self) -> Result<(), Error> {
        for i in 0..self.conns.len() {
            if let Some(src) = self.conns[i].source.as_mut() {
                let delay = src.initial_delay();
                self.sched.schedule(SimTime::from_secs(delay), Ev::SourceBurst(ConnId(i as u32)))?;
            }
        }
        for idx in 0..self.script.len() {
            let at = SimTime::from_secs(self.script[idx].at);
            self.sched.schedule(at, Ev::ScriptBurst(idx))?;
        }
        if self.cbr.is_some() {
            self.sched.schedule(SimTime::ZERO, Ev::CbrEmit)?;
        }
        if self.pin == Some(Pin::Dch) {
            for i in 0..self.conns.len() {
                self.begin_switch(ConnId(i as u32), Channel::Dch(i), SimTime::ZERO)?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutcome, Error> {
        let (util_fach, util_dch) = self.usage.utilization(self.end, self.cfg.n_dch);
        self.stats.util_fach = util_fach;
        self.stats.util_dch = util_dch;
        self.stats.events = self.sched.dispatched();
        self.stats.switches = self.switches.switches_started();
        self.stats.fach_data_served = self.conns.iter().map(|c| c.fach_data_served).collect();
        self.stats.dch_data_served = self.conns.iter().map(|c| c.dch_data_served).collect();
        self.stats.off_transitions = self.conns.iter().filter_map(|c| c.source.as_ref()).map(|s| s.off_transitions()).sum();
        self.stats.ignored_acks = self.conns.iter().map(|c| c.sender.ignored_acks()).sum();
        for c in &self.conns {
            for b in c.sender.unfinished_bursts() {
                self.log.censor(b.conn, b.id, b.size, b.generated_at, self.end)?;
            }
        }
        let response = self.log.summarize();
        let trace = self.trace.finish().map_err(|e| Error::Io(e.to_string()))?;
        Ok(RunOutcome {
            config: self.cfg,
            stats: self.stats,
            bursts: self.log.records().to_vec(),
            response,
            violations: self.violations,
            trace,
        })
    }

    fn conn(&self, c: ConnId) -> &ConnState {
        &self.conns[c.index()]
    }

    fn conn_mut(&mut self, c: ConnId) -> &mut ConnState {
        &mut self.conns[c.index()]
    }

    fn record(&mut self, now: SimTime, event: TraceEvent) {
        self.trace.push(now, event);
    }

    fn pool_view(&self) -> PoolView {
        let pool = self.switches.pool();
        PoolView { used: pool.used(), total: pool.capacity() }
    }

    fn policy_active(&self) -> bool {
        self.pin.is_none()
    }

    fn handle(&mut self, now: SimTime, ev: Ev) -> Result<(), Error> {
        match ev {
            Ev::SourceBurst(c) => {
                let next = self.conn_mut(c).source.as_mut().expect("source event without a source").next_burst_event(now);
                self.sched.schedule(now + next.delay, Ev::SourceBurst(c))?;
                if self.trace.is_on() {
                    let b = next.burst;
                    self.record(now, TraceEvent::BurstGenerated { conn: c, burst: b.id, size: b.size, next_phase: next.phase });
                }
                self.emit_burst(now, next.burst)
            }
            Ev::ScriptBurst(idx) => {
                let s = self.script[idx];
                let conn = self.conn_mut(s.conn);
                let burst = Burst { id: BurstId(conn.next_script_burst), conn: s.conn, size: s.size, generated_at: now };
                conn.next_script_burst += 1;
                if self.trace.is_on() {
                    let next_phase = crate::traffic::Phase::On;
                    self.record(now, TraceEvent::BurstGenerated { conn: s.conn, burst: burst.id, size: s.size, next_phase });
                }
                self.emit_burst(now, burst)
            }
            Ev::PacketArrival(c) => self.on_packet_arrival(now, c),
            Ev::FachComplete => self.on_fach_complete(now),
            Ev::DchComplete(ch) => self.on_dch_complete(now, ch as usize),
            Ev::SwitchComplete(c) => self.on_switch_complete(now, c),
            Ev::DchTimer(c) => self.on_dch_timer(now, c),
            Ev::FachIdleTimer(c) => {
                match self.conn_mut(c).idle_timer.fire(now) {
                    Fired::Expired => {}
                    Fired::Requeue(at) => return self.queue_timer(at, Ev::FachIdleTimer(c)),
                    Fired::Stale => return Ok(()),
                }
                self.record(now, TraceEvent::TimerExpiry { conn: c, timer: TimerKind::FlowIdle });
                let on_fach = self.switches.assignment(c).settled() == Some(Channel::Fach);
                if on_fach && self.conn(c).queue.is_empty() {
                    self.conn_mut(c).served = 0;
                    self.record(now, TraceEvent::FlowReset { conn: c });
                }
                Ok(())
            }
            Ev::CbrEmit => {
                let cbr = self.cbr.as_mut().expect("CBR event without a CBR source");
                let next = cbr.cbr_tick();
                self.cbr_waiting.push_back(now);
                self.sched.schedule(next, Ev::CbrEmit)?;
                let waiting = self.cbr_waiting.len();
                self.record(now, TraceEvent::CbrEmission { waiting });
                self.try_start_fach(now)
            }
            Ev::AckArrival { conn, seq } => {
                self.record(now, TraceEvent::AckArrival { conn, seq });
                let mut released = std::mem::take(&mut self.released);
                let done = self.conn_mut(conn).sender.on_ack(seq, &mut released);
                self.send(now, conn, &mut released)?;
                self.released = released;
                if let Some(b) = done {
                    let rec = BurstRecord {
                        conn,
                        burst: b.id,
                        size: b.size,
                        generated_at: b.generated_at,
                        completed_at: now,
                        finished: true,
                    };
                    self.record(now, TraceEvent::BurstComplete { conn, burst: b.id, response: rec.response_time() });
                    self.log.record(rec)?;
                }
                Ok(())
            }
        }
    }

    fn emit_burst(&mut self, now: SimTime, burst: Burst) -> Result<(), Error> {
        self.stats.packets_generated += burst.size;
        self.stats.bursts_generated += 1;
        if now >= self.warmup {
            self.stats.bursts_after_warmup += 1;
        }
        let c = burst.conn;
        let mut released = std::mem::take(&mut self.released);
        self.conn_mut(c).sender.on_burst(&burst, &mut released);
        self.send(now, c, &mut released)?;
        self.released = released;
        Ok(())
    }

    /// Puts released packets on the connection's backhaul link.
    fn send(&mut self, now: SimTime, c: ConnId, released: &mut Vec<DataPacket>) -> Result<(), Error> {
        let serialization = f64::from(self.sizes.data) * 8.0 / self.cfg.backhaul_rate_bps;
        let delay = self.cfg.backhaul_delay_s;
        for pkt in released.drain(..) {
            let conn = &mut self.conns[c.index()];
            let start = conn.backhaul_free_at.max(now);
            let done = start + serialization;
            conn.backhaul_free_at = done;
            conn.backhaul.push_back(pkt);
            self.sched.schedule(done + delay, Ev::PacketArrival(c))?;
        }
        Ok(())
    }

    fn on_packet_arrival(&mut self, now: SimTime, c: ConnId) -> Result<(), Error> {
        let conn = self.conn_mut(c);
        let pkt = conn.backhaul.pop_front().expect("arrival without a packet on the backhaul");
        conn.queue.push(pkt);
        let queue_len = conn.queue.len();
        self.record(now, TraceEvent::PacketArrival { conn: c, seq: pkt.seq, queue_len });

        match *self.switches.assignment(c) {
            Assignment::Settled(Channel::Fach) => {
                self.conn_mut(c).idle_timer.stop();
                self.evaluate_on_fach(now, c)?;
                self.try_start_fach(now)
            }
            Assignment::Settled(Channel::Dch(ch)) => {
                if self.conn(c).dch_timer.is_running() {
                    self.start_dch_timer(now, c)?;
                }
                self.try_start_dch(now, ch)
            }
            // Decisions wait until the switch settles.
            Assignment::Switching(_) => Ok(()),
        }
    }

    /// Applies the FACH->DCH trigger to a FACH-settled connection.
    fn evaluate_on_fach(&mut self, now: SimTime, c: ConnId) -> Result<(), Error> {
        if !self.policy_active() {
            return Ok(());
        }
        let conn = self.conn(c);
        let action = policy::on_enqueue(&self.policy, conn.queue.len() as u64, conn.served, self.pool_view());
        match action {
            EnqueueAction::SwitchNow => {
                let free = self.switches.pool().first_free().expect("pool reported a free channel");
                self.requests.remove(c);
                self.begin_switch(c, Channel::Dch(free), now)
            }
            EnqueueAction::AddRequest => {
                if self.requests.add(c, now) {
                    let pending = self.requests.len();
                    self.record(now, TraceEvent::RequestAdded { conn: c, pending });
                }
                Ok(())
            }
            EnqueueAction::None => Ok(()),
        }
    }

    fn begin_switch(&mut self, c: ConnId, to: Channel, now: SimTime) -> Result<(), Error> {
        let job = self.switches.begin_switch(c, to, now)?;
        let conn = &mut self.conns[c.index()];
        conn.dch_timer.stop();
        conn.idle_timer.stop();
        if now >= self.warmup {
            self.stats.switches_after_warmup += 1;
        }
        self.sched.schedule(job.completes_at, Ev::SwitchComplete(c))?;
        self.record(now, TraceEvent::SwitchBegin { conn: c, from: job.from, to: job.to, completes_at: job.completes_at });
        Ok(())
    }

    fn on_switch_complete(&mut self, now: SimTime, c: ConnId) -> Result<(), Error> {
        let (job, freed) = self.switches.complete_switch(c)?;
        self.record(now, TraceEvent::SwitchComplete { conn: c, from: job.from, to: job.to });
        match job.to {
            Channel::Fach => {
                let conn = self.conn_mut(c);
                if std::mem::take(&mut conn.reset_flow_on_fach) {
                    conn.served = 0;
                    self.record(now, TraceEvent::FlowReset { conn: c });
                }
                if let Some(index) = freed {
                    self.grant_freed(now, index)?;
                }
                if self.conn(c).queue.is_empty() {
                    self.start_idle_timer(now, c)?;
                } else {
                    self.evaluate_on_fach(now, c)?;
                }
                self.try_start_fach(now)
            }
            Channel::Dch(index) => {
                self.try_start_dch(now, index)?;
                let conn = self.conn(c);
                if self.policy_active() && (conn.queue.len() as u64) < self.policy.t_low && !conn.dch_timer.is_running() {
                    self.start_dch_timer(now, c)?;
                }
                Ok(())
            }
        }
    }

    fn grant_freed(&mut self, now: SimTime, index: usize) -> Result<(), Error> {
        if !self.policy_active() {
            return Ok(());
        }
        let view = |c: ConnId| {
            let conn = &self.conns[c.index()];
            WaiterView { queue_len: conn.queue.len() as u64, served: conn.served }
        };
        let Some(winner) = policy::on_dch_freed(&self.policy, &self.requests, view) else {
            return Ok(());
        };
        if self.trace.is_on() {
            let s = self.policy.s;
            let new_flow_waiting = self.requests.iter().any(|e| self.conns[e.conn.index()].served <= s);
            let winner_new_flow = self.conns[winner.index()].served <= s;
            let channel = Channel::Dch(index);
            self.record(now, TraceEvent::Grant { conn: winner, channel, winner_new_flow, new_flow_waiting });
        }
        self.begin_switch(winner, Channel::Dch(index), now)?;
        self.requests.remove(winner);
        Ok(())
    }

    fn queue_timer(&mut self, at: SimTime, ev: Ev) -> Result<(), Error> {
        self.sched.schedule(at, ev)?;
        Ok(())
    }

    fn start_dch_timer(&mut self, now: SimTime, c: ConnId) -> Result<(), Error> {
        let deadline = now + self.policy.t_out;
        match self.conn_mut(c).dch_timer.arm(deadline) {
            Some(at) => self.queue_timer(at, Ev::DchTimer(c)),
            None => Ok(()),
        }
    }

    fn start_idle_timer(&mut self, now: SimTime, c: ConnId) -> Result<(), Error> {
        if !self.policy_active() || !policy::resets_flow_on_fach_idle(self.policy.kind) {
            return Ok(());
        }
        let deadline = now + self.policy.t_out;
        match self.conn_mut(c).idle_timer.arm(deadline) {
            Some(at) => self.queue_timer(at, Ev::FachIdleTimer(c)),
            None => Ok(()),
        }
    }

    fn on_dch_timer(&mut self, now: SimTime, c: ConnId) -> Result<(), Error> {
        match self.conn_mut(c).dch_timer.fire(now) {
            Fired::Expired => {}
            Fired::Requeue(at) => return self.queue_timer(at, Ev::DchTimer(c)),
            Fired::Stale => return Ok(()),
        }
        self.record(now, TraceEvent::TimerExpiry { conn: c, timer: TimerKind::Inactivity });
        if !matches!(self.switches.assignment(c), Assignment::Settled(Channel::Dch(_))) {
            return Ok(());
        }
        let conn = self.conn(c);
        if conn.on_air {
            // A packet is still on the air; the channel is not idle yet.
            return self.start_dch_timer(now, c);
        }
        let waiters = !self.requests.is_empty();
        match policy::on_timer_expired(&self.policy, conn.queue.len() as u64, conn.served, self.pool_view(), waiters) {
            TimerAction::VacateAndGrant { reset_flow } => {
                self.conn_mut(c).reset_flow_on_fach = reset_flow;
                self.begin_switch(c, Channel::Fach, now)
            }
            TimerAction::RestartTimer => self.start_dch_timer(now, c),
        }
    }

    fn try_start_fach(&mut self, now: SimTime) -> Result<(), Error> {
        if self.fach_tx.is_some() {
            return Ok(());
        }
        self.candidates.clear();
        for (i, conn) in self.conns.iter().enumerate() {
            if !conn.queue.is_empty() && self.switches.assignments()[i] == Assignment::Settled(Channel::Fach) {
                self.candidates.push(FachCandidate { conn: ConnId(i as u32), served: conn.served });
            }
        }
        match self.fach.select_next(!self.cbr_waiting.is_empty(), &self.candidates) {
            FachSelection::Idle => Ok(()),
            FachSelection::Cbr => {
                let queued_at = self.cbr_waiting.pop_front().expect("CBR selected with nothing waiting");
                self.stats.max_cbr_wait = self.stats.max_cbr_wait.max(now - queued_at);
                let done = now + self.rates.tx_time(Channel::Fach, self.sizes.cbr);
                self.fach_tx = Some((FachTx::Cbr, now));
                self.sched.schedule(done, Ev::FachComplete)?;
                self.record(now, TraceEvent::TxStart { channel: Channel::Fach, conn: None, seq: 0, served: 0, min_served: 0 });
                Ok(())
            }
            FachSelection::Conn(c) => {
                let min_served = self.candidates.iter().map(|k| k.served).min().unwrap_or(0);
                let conn = self.conn_mut(c);
                let pkt = conn.queue.pop().expect("selected connection has a backlog");
                conn.on_air = true;
                let served = conn.served;
                let drained = conn.queue.is_empty();
                let done = now + self.rates.tx_time(Channel::Fach, self.sizes.data);
                self.fach_tx = Some((FachTx::Data(pkt), now));
                self.sched.schedule(done, Ev::FachComplete)?;
                self.record(now, TraceEvent::TxStart { channel: Channel::Fach, conn: Some(c), seq: pkt.seq, served, min_served });
                if drained {
                    self.start_idle_timer(now, c)?;
                }
                Ok(())
            }
        }
    }

    fn on_fach_complete(&mut self, now: SimTime) -> Result<(), Error> {
        let (tx, started) = self.fach_tx.take().expect("FACH completion while idle");
        self.usage.add_fach(started, now);
        match tx {
            FachTx::Cbr => {
                self.stats.cbr_sent += 1;
                self.record(now, TraceEvent::TxComplete { channel: Channel::Fach, conn: None, seq: 0 });
            }
            FachTx::Data(pkt) => {
                let c = pkt.conn;
                self.conn_mut(c).fach_data_served += 1;
                self.deliver(now, pkt, Channel::Fach)?;
                let still_on_fach = self.switches.assignment(c).settled() == Some(Channel::Fach);
                if still_on_fach && !self.conn(c).queue.is_empty() {
                    self.evaluate_on_fach(now, c)?;
                }
            }
        }
        self.try_start_fach(now)
    }

    fn try_start_dch(&mut self, now: SimTime, index: usize) -> Result<(), Error> {
        if self.dch_tx[index].is_some() {
            return Ok(());
        }
        let Some(c) = self.switches.pool().occupant(index) else {
            return Ok(());
        };
        if self.switches.assignment(c).settled() != Some(Channel::Dch(index)) {
            return Ok(());
        }
        let conn = self.conn_mut(c);
        let Some(pkt) = conn.queue.pop() else {
            return Ok(());
        };
        conn.on_air = true;
        let served = conn.served;
        let done = now + self.rates.tx_time(Channel::Dch(index), self.sizes.data);
        self.dch_tx[index] = Some((pkt, now));
        self.sched.schedule(done, Ev::DchComplete(index as u32))?;
        let channel = Channel::Dch(index);
        self.record(now, TraceEvent::TxStart { channel, conn: Some(c), seq: pkt.seq, served, min_served: served });
        Ok(())
    }

    fn on_dch_complete(&mut self, now: SimTime, index: usize) -> Result<(), Error> {
        let (pkt, started) = self.dch_tx[index].take().expect("DCH completion while idle");
        self.usage.add_dch(started, now);
        let c = pkt.conn;
        self.conn_mut(c).dch_data_served += 1;
        self.deliver(now, pkt, Channel::Dch(index))?;

        if self.policy_active() {
            let conn = self.conn(c);
            let action = policy::on_served_dch(
                &self.policy,
                conn.queue.len() as u64,
                conn.served,
                self.pool_view(),
                !self.requests.is_empty(),
                conn.dch_timer.is_running(),
            );
            match action {
                ServedAction::StartTimer => self.start_dch_timer(now, c)?,
                ServedAction::PreemptNow => {
                    self.conn_mut(c).reset_flow_on_fach = false;
                    self.begin_switch(c, Channel::Fach, now)?;
                }
                ServedAction::None => {}
            }
        }
        self.try_start_dch(now, index)
    }

    /// The packet reaches the mobile; f(i) counts it and its ACK heads back.
    fn deliver(&mut self, now: SimTime, pkt: DataPacket, channel: Channel) -> Result<(), Error> {
        let c = pkt.conn;
        let conn = self.conn_mut(c);
        conn.on_air = false;
        conn.served += 1;
        self.stats.packets_delivered += 1;
        self.record(now, TraceEvent::TxComplete { channel, conn: Some(c), seq: pkt.seq });
        let path = route_ack(self.switches.assignment(c), &self.rates, self.sizes.ack, self.cfg.backhaul_delay_s);
        let at = now + self.cfg.radio_delay_s + path.delay;
        self.sched.schedule(at, Ev::AckArrival { conn: c, seq: pkt.seq })?;
        Ok(())
    }

    fn check_invariants(&mut self, now: SimTime) {
        let pool = self.switches.pool();
        if pool.used() > pool.capacity() {
            self.violations.push(format!("{now}: U_dch {} > N_dch {}", pool.used(), pool.capacity()));
        }
        for (index, ch) in pool.channels().iter().enumerate() {
            let Some(c) = ch.occupant else { continue };
            let here = Channel::Dch(index);
            let consistent = match self.switches.assignment(c) {
                Assignment::Settled(at) => *at == here,
                Assignment::Switching(job) => job.from == here || job.to == here,
            };
            if !consistent {
                self.violations.push(format!("{now}: dch{index} occupant conn{} is elsewhere", c.0));
            }
            let holdings = pool.channels().iter().filter(|o| o.occupant == Some(c)).count();
            if holdings > 1 {
                self.violations.push(format!("{now}: conn{} holds {holdings} channels", c.0));
            }
        }

        let in_system: u64 = self
            .conns
            .iter()
            .map(|c| (c.sender.buffered() + c.backhaul.len() + c.queue.len()) as u64 + u64::from(c.on_air))
            .sum();
        if self.stats.packets_generated != self.stats.packets_delivered + in_system {
            self.violations.push(format!(
                "{now}: packet conservation: generated {} != delivered {} + in system {in_system}",
                self.stats.packets_generated, self.stats.packets_delivered
            ));
        }

        let mut seen = Vec::with_capacity(self.requests.len());
        for e in self.requests.iter() {
            if seen.contains(&e.conn) {
                self.violations.push(format!("{now}: duplicate request for conn{}", e.conn.0));
            }
            seen.push(e.conn);
            if self.switches.assignment(e.conn).settled() != Some(Channel::Fach) {
                self.violations.push(format!("{now}: request for conn{} which is not settled on FACH", e.conn.0));
            }
        }

        for (i, c) in self.conns.iter().enumerate() {
            if c.sender.in_flight() > c.sender.window() {
                self.violations.push(format!("{now}: conn{i} in flight {} > window {}", c.sender.in_flight(), c.sender.window()));
            }
        }
    }
}
