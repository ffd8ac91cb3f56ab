//! NodeB side of the downlink: per-connection queues, the shared FACH with
//! its CBR signalling source, the DCH pool and the switch manager.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;
use crate::traffic::DataPacket;
use crate::ConnId;

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("{0} is already transmitting")]
    ChannelBusy(Channel),
    #[error("connection {0} already has a switch in progress")]
    AlreadySwitching(ConnId),
    #[error("connection {0} is already on {1}")]
    AlreadyOn(ConnId, Channel),
    #[error("{channel} is not free for connection {conn}")]
    ChannelUnavailable { conn: ConnId, channel: Channel },
    #[error("connection {0} has no switch in progress")]
    NotSwitching(ConnId),
    #[error("connection {conn} does not occupy {channel}")]
    NotOccupant { conn: ConnId, channel: Channel },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Fach,
    Dch(usize),
}

impl Channel {
    pub fn is_dch(self) -> bool {
        matches!(self, Channel::Dch(_))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Fach => f.write_str("fach"),
            Channel::Dch(i) => write!(f, "dch{i}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadioRates {
    pub fach_bps: f64,
    pub dch_bps: f64,
}

impl RadioRates {
    pub fn rate(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Fach => self.fach_bps,
            Channel::Dch(_) => self.dch_bps,
        }
    }

    pub fn tx_time(&self, channel: Channel, bytes: u32) -> f64 {
        transmission_time(bytes, self.rate(channel))
    }
}

pub fn transmission_time(bytes: u32, rate_bps: f64) -> f64 {
    f64::from(bytes) * 8.0 / rate_bps
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchJob {
    pub conn: ConnId,
    pub from: Channel,
    pub to: Channel,
    pub started_at: SimTime,
    pub completes_at: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Assignment {
    Settled(Channel),
    Switching(SwitchJob),
}

impl Assignment {
    pub fn settled(&self) -> Option<Channel> {
        match self {
            Assignment::Settled(ch) => Some(*ch),
            Assignment::Switching(_) => None,
        }
    }

    pub fn is_switching(&self) -> bool {
        matches!(self, Assignment::Switching(_))
    }
}

/// Packets waiting at the NodeB for one connection. `len()` is Q(i); the
/// packet currently on a transmitter is not counted.
#[derive(Debug, Default)]
pub struct NodeBQueue {
    packets: VecDeque<DataPacket>,
}

impl NodeBQueue {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn push(&mut self, pkt: DataPacket) {
        self.packets.push_back(pkt);
    }

    pub fn pop(&mut self) -> Option<DataPacket> {
        self.packets.pop_front()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FachDiscipline {
    #[default]
    Ps,
    Las,
}

impl fmt::Display for FachDiscipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FachDiscipline::Ps => "ps",
            FachDiscipline::Las => "las",
        })
    }
}

impl FromStr for FachDiscipline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ps" => Ok(FachDiscipline::Ps),
            "las" => Ok(FachDiscipline::Las),
            other => Err(format!("unknown FACH scheduler `{other}` (expected ps or las)")),
        }
    }
}

/// A connection eligible for FACH service: settled on FACH and backlogged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FachCandidate {
    pub conn: ConnId,
    /// Packets served in the connection's current flow, f(i).
    pub served: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FachSelection {
    Cbr,
    Conn(ConnId),
    Idle,
}

/// Chooses what the FACH transmits next. CBR signalling always goes first;
/// it never interrupts a packet already on the air because selection only
/// happens when the transmitter is idle.
#[derive(Clone, Debug)]
pub struct FachScheduler {
    discipline: FachDiscipline,
    cursor: Option<ConnId>,
}

impl FachScheduler {
    pub fn new(discipline: FachDiscipline) -> Self {
        FachScheduler { discipline, cursor: None }
    }

    pub fn discipline(&self) -> FachDiscipline {
        self.discipline
    }

    pub fn cursor(&self) -> Option<ConnId> {
        self.cursor
    }

    /// `candidates` must be sorted by connection id.
    pub fn select_next(&mut self, cbr_waiting: bool, candidates: &[FachCandidate]) -> FachSelection {
        if cbr_waiting {
            return FachSelection::Cbr;
        }
        let pick = match self.discipline {
            FachDiscipline::Ps => {
                let after = |c: &&FachCandidate| self.cursor.is_none_or(|cur| c.conn > cur);
                candidates.iter().find(after).or_else(|| candidates.first())
            }
            // min_by_key keeps the first minimum, i.e. the lowest id on ties.
            FachDiscipline::Las => candidates.iter().min_by_key(|c| c.served),
        };
        match pick {
            Some(c) => {
                self.cursor = Some(c.conn);
                FachSelection::Conn(c.conn)
            }
            None => FachSelection::Idle,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DchChannel {
    pub occupant: Option<ConnId>,
}

/// The N_dch dedicated channels. A channel is occupied from the moment a
/// connection starts switching onto it until its switch away completes.
#[derive(Clone, Debug)]
pub struct DchPool {
    channels: Vec<DchChannel>,
}

impl DchPool {
    pub fn new(n_dch: usize) -> Self {
        DchPool { channels: vec![DchChannel::default(); n_dch] }
    }

    pub fn capacity(&self) -> usize {
        self.channels.len()
    }

    /// U_dch.
    pub fn used(&self) -> usize {
        self.channels.iter().filter(|c| c.occupant.is_some()).count()
    }

    pub fn is_full(&self) -> bool {
        self.used() == self.capacity()
    }

    pub fn first_free(&self) -> Option<usize> {
        self.channels.iter().position(|c| c.occupant.is_none())
    }

    pub fn occupant(&self, index: usize) -> Option<ConnId> {
        self.channels.get(index).and_then(|c| c.occupant)
    }

    pub fn channels(&self) -> &[DchChannel] {
        &self.channels
    }

    fn reserve(&mut self, index: usize, conn: ConnId) -> Result<(), RadioError> {
        match self.channels.get_mut(index) {
            Some(slot) if slot.occupant.is_none() => {
                slot.occupant = Some(conn);
                Ok(())
            }
            _ => Err(RadioError::ChannelUnavailable { conn, channel: Channel::Dch(index) }),
        }
    }

    fn release(&mut self, index: usize, conn: ConnId) -> Result<(), RadioError> {
        match self.channels.get_mut(index) {
            Some(slot) if slot.occupant == Some(conn) => {
                slot.occupant = None;
                Ok(())
            }
            _ => Err(RadioError::NotOccupant { conn, channel: Channel::Dch(index) }),
        }
    }
}

/// Tracks which channel each connection uses and runs FACH<->DCH switches.
#[derive(Clone, Debug)]
pub struct SwitchManager {
    switch_delay: f64,
    assignments: Vec<Assignment>,
    pool: DchPool,
    switches_started: u64,
}

impl SwitchManager {
    /// Every connection starts settled on the FACH.
    pub fn new(n_conn: usize, n_dch: usize, switch_delay: f64) -> Self {
        SwitchManager {
            switch_delay,
            assignments: vec![Assignment::Settled(Channel::Fach); n_conn],
            pool: DchPool::new(n_dch),
            switches_started: 0,
        }
    }

    pub fn assignment(&self, conn: ConnId) -> &Assignment {
        &self.assignments[conn.index()]
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn pool(&self) -> &DchPool {
        &self.pool
    }

    pub fn switches_started(&self) -> u64 {
        self.switches_started
    }

    /// Starts a switch. Switching onto a DCH reserves it immediately, so it
    /// counts toward U_dch for the whole switch interval.
    pub fn begin_switch(&mut self, conn: ConnId, to: Channel, now: SimTime) -> Result<SwitchJob, RadioError> {
        let from = match self.assignments[conn.index()] {
            Assignment::Switching(_) => return Err(RadioError::AlreadySwitching(conn)),
            Assignment::Settled(ch) if ch == to => return Err(RadioError::AlreadyOn(conn, ch)),
            Assignment::Settled(ch) => ch,
        };
        if let Channel::Dch(index) = to {
            self.pool.reserve(index, conn)?;
        }
        let job = SwitchJob { conn, from, to, started_at: now, completes_at: now + self.switch_delay };
        self.assignments[conn.index()] = Assignment::Switching(job);
        self.switches_started += 1;
        Ok(job)
    }

    /// Settles the connection on its target channel. Returns the index of a
    /// DCH that became free, if the switch vacated one.
    pub fn complete_switch(&mut self, conn: ConnId) -> Result<(SwitchJob, Option<usize>), RadioError> {
        let Assignment::Switching(job) = self.assignments[conn.index()] else {
            return Err(RadioError::NotSwitching(conn));
        };
        let freed = match job.from {
            Channel::Dch(index) => {
                self.pool.release(index, conn)?;
                Some(index)
            }
            Channel::Fach => None,
        };
        self.assignments[conn.index()] = Assignment::Settled(job.to);
        Ok((job, freed))
    }
}

/// Constant-bit-rate signalling source inside the NodeB.
#[derive(Clone, Debug)]
pub struct CbrSource {
    interval: f64,
    ticks: u64,
}

impl CbrSource {
    pub fn new(interval: f64) -> Self {
        CbrSource { interval, ticks: 0 }
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Registers one emission and returns the time of the next. Tick times
    /// are `n * interval`, so they do not accumulate rounding drift.
    pub fn cbr_tick(&mut self) -> SimTime {
        self.ticks += 1;
        SimTime::from_secs(self.ticks as f64 * self.interval)
    }
}
