//! ON/OFF burst sources and the loss-free, ACK-clocked sender that feeds the
//! NodeB queues over the backhaul.

use std::collections::VecDeque;

use crate::radio::{Assignment, Channel, RadioRates};
use crate::sim::{DistError, Exponential, ParetoBurst, RngStream, SimTime};
use crate::ConnId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BurstId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketClass {
    Data,
    Ack,
    Cbr,
}

/// Packet sizes by class, in bytes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketSizes {
    pub data: u32,
    pub ack: u32,
    pub cbr: u32,
}

impl PacketSizes {
    pub fn bytes(&self, class: PacketClass) -> u32 {
        match class {
            PacketClass::Data => self.data,
            PacketClass::Ack => self.ack,
            PacketClass::Cbr => self.cbr,
        }
    }
}

/// A DATA packet on its way from a sender to a mobile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataPacket {
    pub conn: ConnId,
    pub seq: u64,
    pub burst: BurstId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Burst {
    pub id: BurstId,
    pub conn: ConnId,
    pub size: u64,
    pub generated_at: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    On,
    Off,
}

#[derive(Clone, Copy, Debug)]
pub struct OnOffParams {
    pub pareto_shape: f64,
    /// Mean burst size in packets.
    pub mean_burst_packets: f64,
    pub mean_on_gap: f64,
    pub p_off: f64,
    pub mean_off: f64,
}

/// What a source does when its pending event fires.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NextBurst {
    pub burst: Burst,
    /// Phase the source is in until its next burst.
    pub phase: Phase,
    /// Delay until the next burst.
    pub delay: f64,
}

/// Per-connection ON/OFF source. Within an ON period bursts are separated
/// by exponential gaps; after each burst the source turns OFF with a fixed
/// probability and resumes with a burst after an exponential OFF period.
pub struct OnOffSource {
    conn: ConnId,
    phase: Phase,
    next_id: u64,
    p_off: f64,
    sizes: ParetoBurst,
    on_gap: Exponential,
    off_len: Exponential,
    size_rng: RngStream,
    gap_rng: RngStream,
    off_rng: RngStream,
    off_len_rng: RngStream,
    off_transitions: u64,
}

impl OnOffSource {
    pub fn new(conn: ConnId, params: &OnOffParams, master_seed: u64) -> Result<Self, DistError> {
        let stream = |what: &str| RngStream::new(master_seed, format!("{what}/{}", conn.0));
        Ok(OnOffSource {
            conn,
            phase: Phase::On,
            next_id: 0,
            p_off: params.p_off,
            sizes: ParetoBurst::new(params.pareto_shape, params.mean_burst_packets)?,
            on_gap: Exponential::with_mean(params.mean_on_gap)?,
            off_len: Exponential::with_mean(params.mean_off)?,
            size_rng: stream("burst-size"),
            gap_rng: stream("burst-gap"),
            off_rng: stream("off-decision"),
            off_len_rng: stream("off-duration"),
            off_transitions: 0,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn off_transitions(&self) -> u64 {
        self.off_transitions
    }

    /// Delay before the very first burst.
    pub fn initial_delay(&mut self) -> f64 {
        self.on_gap.sample(&mut self.gap_rng)
    }

    /// Fires the pending source event: an OFF source resumes, then the burst
    /// is emitted and the next gap drawn.
    pub fn next_burst_event(&mut self, now: SimTime) -> NextBurst {
        self.phase = Phase::On;
        let burst = Burst {
            id: BurstId(self.next_id),
            conn: self.conn,
            size: self.sizes.sample(&mut self.size_rng),
            generated_at: now,
        };
        self.next_id += 1;
        let (phase, delay) = if self.off_rng.bernoulli(self.p_off) {
            self.off_transitions += 1;
            (Phase::Off, self.off_len.sample(&mut self.off_len_rng))
        } else {
            (Phase::On, self.on_gap.sample(&mut self.gap_rng))
        };
        self.phase = phase;
        NextBurst { burst, phase, delay }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompletedBurst {
    pub id: BurstId,
    pub size: u64,
    pub generated_at: SimTime,
}

#[derive(Clone, Copy, Debug)]
struct BurstProgress {
    id: BurstId,
    size: u64,
    generated_at: SimTime,
    outstanding: u64,
}

/// Loss-free window-controlled sender: slow-start growth of one packet per
/// ACK, capped at `w_max`, one ACK per DATA packet.
pub struct TcpSender {
    conn: ConnId,
    cwnd: f64,
    w_max: u32,
    in_flight: u32,
    buffer: VecDeque<DataPacket>,
    next_seq: u64,
    highest_acked: Option<u64>,
    unacked: Vec<DataPacket>,
    bursts: VecDeque<BurstProgress>,
    ignored_acks: u64,
}

impl TcpSender {
    pub fn new(conn: ConnId, initial_cwnd: u32, w_max: u32) -> Self {
        TcpSender {
            conn,
            cwnd: f64::from(initial_cwnd.min(w_max)),
            w_max,
            in_flight: 0,
            buffer: VecDeque::new(),
            next_seq: 0,
            highest_acked: None,
            unacked: Vec::new(),
            bursts: VecDeque::new(),
            ignored_acks: 0,
        }
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn highest_acked(&self) -> Option<u64> {
        self.highest_acked
    }

    /// ACKs that matched no outstanding packet. Always zero in a correct model.
    pub fn ignored_acks(&self) -> u64 {
        self.ignored_acks
    }

    pub fn window(&self) -> u32 {
        (self.cwnd.floor() as u32).min(self.w_max)
    }

    /// Appends a burst to the send buffer and releases what the window allows.
    pub fn on_burst(&mut self, burst: &Burst, released: &mut Vec<DataPacket>) {
        debug_assert_eq!(burst.conn, self.conn);
        for _ in 0..burst.size {
            self.buffer.push_back(DataPacket { conn: self.conn, seq: self.next_seq, burst: burst.id });
            self.next_seq += 1;
        }
        self.bursts.push_back(BurstProgress {
            id: burst.id,
            size: burst.size,
            generated_at: burst.generated_at,
            outstanding: burst.size,
        });
        self.release(released);
    }

    /// Handles the ACK for `seq`. Returns the burst whose last outstanding
    /// packet this ACK covered, if any.
    pub fn on_ack(&mut self, seq: u64, released: &mut Vec<DataPacket>) -> Option<CompletedBurst> {
        let Some(pos) = self.unacked.iter().position(|p| p.seq == seq) else {
            self.ignored_acks += 1;
            return None;
        };
        let pkt = self.unacked.swap_remove(pos);
        self.in_flight -= 1;
        self.highest_acked = Some(self.highest_acked.map_or(seq, |h| h.max(seq)));
        self.cwnd = (self.cwnd + 1.0).min(f64::from(self.w_max));

        let completed = self.settle_burst(pkt.burst);
        self.release(released);
        completed
    }

    /// Bursts with at least one packet not yet acknowledged, oldest first.
    pub fn unfinished_bursts(&self) -> impl Iterator<Item = Burst> + '_ {
        self.bursts.iter().filter(|b| b.outstanding > 0).map(|b| Burst {
            id: b.id,
            conn: self.conn,
            size: b.size,
            generated_at: b.generated_at,
        })
    }

    fn settle_burst(&mut self, id: BurstId) -> Option<CompletedBurst> {
        let front = self.bursts.front()?.id.0;
        let slot = self.bursts.get_mut((id.0 - front) as usize)?;
        debug_assert_eq!(slot.id, id);
        slot.outstanding -= 1;
        let done = (slot.outstanding == 0).then_some(CompletedBurst {
            id: slot.id,
            size: slot.size,
            generated_at: slot.generated_at,
        });
        while self.bursts.front().is_some_and(|b| b.outstanding == 0) {
            self.bursts.pop_front();
        }
        done
    }

    fn release(&mut self, released: &mut Vec<DataPacket>) {
        while self.in_flight < self.window() {
            let Some(pkt) = self.buffer.pop_front() else { break };
            self.in_flight += 1;
            self.unacked.push(pkt);
            released.push(pkt);
        }
    }
}

/// Path taken by an ACK back to its sender.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AckPath {
    pub channel: Channel,
    pub delay: f64,
}

/// ACKs ride the connection's pre-switch channel while a switch is in
/// progress. They consume no radio capacity; the uplink costs the ACK's
/// serialization time at the channel rate plus the backhaul latency.
pub fn route_ack(assignment: &Assignment, rates: &RadioRates, ack_bytes: u32, backhaul_delay: f64) -> AckPath {
    let channel = match assignment {
        Assignment::Settled(ch) => *ch,
        Assignment::Switching(job) => job.from,
    };
    let rate = rates.rate(channel);
    AckPath { channel, delay: f64::from(ack_bytes) * 8.0 / rate + backhaul_delay }
}
