//! Response-time and slowdown accounting, channel utilization, and the
//! closed-form transfer-time estimate for FACH versus DCH.

use std::collections::HashSet;

use thiserror::Error;

use crate::sim::SimTime;
use crate::traffic::BurstId;
use crate::ConnId;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("burst {burst:?} of connection {conn} recorded twice")]
    DuplicateRecord { conn: ConnId, burst: BurstId },
    #[error("burst {burst:?} of connection {conn} completes at {completed_at} before it was generated at {generated_at}")]
    CompletedBeforeGenerated { conn: ConnId, burst: BurstId, generated_at: SimTime, completed_at: SimTime },
    #[error("no bursts generated after the warmup cutoff")]
    NoRecords,
    #[error("transfer needs at least one packet of positive size")]
    EmptyTransfer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurstRecord {
    pub conn: ConnId,
    pub burst: BurstId,
    /// Packets in the burst.
    pub size: u64,
    pub generated_at: SimTime,
    /// When the sender received the ACK of the burst's last packet, or the
    /// end of the run for a burst that never finished.
    pub completed_at: SimTime,
    /// False for a burst still in progress when the run ended.
    pub finished: bool,
}

impl BurstRecord {
    pub fn response_time(&self) -> f64 {
        self.completed_at - self.generated_at
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseStats {
    /// Post-warmup bursts, finished or not.
    pub n_bursts: u64,
    /// Of those, bursts cut off by the end of the run. Their response time
    /// is taken up to the end, so the means are lower bounds when this is
    /// non-zero.
    pub n_censored: u64,
    pub mean_response: f64,
    pub mean_size: f64,
    /// Mean response time over mean burst size, seconds per packet.
    pub slowdown_aggregate: f64,
    /// Mean over bursts of response time over burst size.
    pub slowdown_per_burst: f64,
}

/// Collects completed bursts, plus the bursts still unfinished when the run
/// ends. Bursts generated before the warmup cutoff are kept out of the
/// statistics but still checked for duplicates.
#[derive(Debug)]
pub struct BurstLog {
    warmup_cutoff: SimTime,
    seen: HashSet<(ConnId, BurstId)>,
    records: Vec<BurstRecord>,
    excluded: u64,
}

impl BurstLog {
    pub fn new(warmup_cutoff: SimTime) -> Self {
        BurstLog { warmup_cutoff, seen: HashSet::new(), records: Vec::new(), excluded: 0 }
    }

    pub fn warmup_cutoff(&self) -> SimTime {
        self.warmup_cutoff
    }

    pub fn record(&mut self, rec: BurstRecord) -> Result<(), MetricsError> {
        if rec.completed_at <= rec.generated_at {
            return Err(MetricsError::CompletedBeforeGenerated {
                conn: rec.conn,
                burst: rec.burst,
                generated_at: rec.generated_at,
                completed_at: rec.completed_at,
            });
        }
        if !self.seen.insert((rec.conn, rec.burst)) {
            return Err(MetricsError::DuplicateRecord { conn: rec.conn, burst: rec.burst });
        }
        if rec.generated_at < self.warmup_cutoff {
            self.excluded += 1;
        } else {
            self.records.push(rec);
        }
        Ok(())
    }

    /// Records a burst that was still in progress at `end`. Counting these
    /// keeps a setting that starves some connections from being judged only
    /// by the bursts that got through.
    pub fn censor(&mut self, conn: ConnId, burst: BurstId, size: u64, generated_at: SimTime, end: SimTime) -> Result<(), MetricsError> {
        if end < generated_at {
            return Err(MetricsError::CompletedBeforeGenerated { conn, burst, generated_at, completed_at: end });
        }
        if !self.seen.insert((conn, burst)) {
            return Err(MetricsError::DuplicateRecord { conn, burst });
        }
        if generated_at < self.warmup_cutoff {
            self.excluded += 1;
        } else {
            self.records.push(BurstRecord { conn, burst, size, generated_at, completed_at: end, finished: false });
        }
        Ok(())
    }

    /// Post-warmup records in completion order, censored bursts last.
    pub fn records(&self) -> &[BurstRecord] {
        &self.records
    }

    pub fn excluded(&self) -> u64 {
        self.excluded
    }

    pub fn summarize(&self) -> Result<ResponseStats, MetricsError> {
        summarize(&self.records)
    }
}

pub fn summarize(records: &[BurstRecord]) -> Result<ResponseStats, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let n = records.len() as f64;
    let mut total_response = 0.0;
    let mut total_size = 0.0;
    let mut total_ratio = 0.0;
    let mut censored = 0;
    for r in records {
        censored += u64::from(!r.finished);
        let t = r.response_time();
        total_response += t;
        total_size += r.size as f64;
        total_ratio += t / r.size as f64;
    }
    let mean_response = total_response / n;
    let mean_size = total_size / n;
    Ok(ResponseStats {
        n_bursts: records.len() as u64,
        n_censored: censored,
        mean_response,
        mean_size,
        slowdown_aggregate: mean_response / mean_size,
        slowdown_per_burst: total_ratio / n,
    })
}

/// Busy time of the radio channels inside a measurement window.
#[derive(Clone, Debug)]
pub struct ChannelUsage {
    window_start: f64,
    fach_busy: f64,
    dch_busy: f64,
}

impl ChannelUsage {
    pub fn new(window_start: SimTime) -> Self {
        ChannelUsage { window_start: window_start.as_secs(), fach_busy: 0.0, dch_busy: 0.0 }
    }

    fn clipped(&self, start: SimTime, end: SimTime) -> f64 {
        (end.as_secs() - start.as_secs().max(self.window_start)).max(0.0)
    }

    pub fn add_fach(&mut self, start: SimTime, end: SimTime) {
        self.fach_busy += self.clipped(start, end);
    }

    pub fn add_dch(&mut self, start: SimTime, end: SimTime) {
        self.dch_busy += self.clipped(start, end);
    }

    /// (FACH, DCH) busy fractions up to `end`; the DCH figure is averaged
    /// over the `n_dch` channels.
    pub fn utilization(&self, end: SimTime, n_dch: usize) -> (f64, f64) {
        let span = end.as_secs() - self.window_start;
        if span <= 0.0 || n_dch == 0 {
            return (0.0, 0.0);
        }
        (self.fach_busy / span, self.dch_busy / (span * n_dch as f64))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferChannel {
    Fach,
    Dch,
}

/// Channel figures for the closed-form estimate; kilo units are decimal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferModel {
    pub fach_bps: f64,
    pub dch_bps: f64,
    pub cbr_bps: f64,
    pub dch_setup: f64,
}

impl Default for TransferModel {
    fn default() -> Self {
        TransferModel { fach_bps: 33_000.0, dch_bps: 384_000.0, cbr_bps: 24_000.0, dch_setup: 0.250 }
    }
}

impl TransferModel {
    /// Time to push `n_packets` of `packet_bytes` through a channel. On the
    /// FACH, active signalling traffic is taken off the top of the rate.
    pub fn estimate_transfer_time(
        &self,
        n_packets: u64,
        packet_bytes: u32,
        channel: TransferChannel,
        cbr_active: bool,
        include_setup: bool,
    ) -> Result<f64, MetricsError> {
        if n_packets == 0 || packet_bytes == 0 {
            return Err(MetricsError::EmptyTransfer);
        }
        let bits = n_packets as f64 * f64::from(packet_bytes) * 8.0;
        Ok(match channel {
            TransferChannel::Dch => (if include_setup { self.dch_setup } else { 0.0 }) + bits / self.dch_bps,
            TransferChannel::Fach => bits / (self.fach_bps - if cbr_active { self.cbr_bps } else { 0.0 }),
        })
    }
}

pub fn estimate_transfer_time(
    n_packets: u64,
    packet_bytes: u32,
    channel: TransferChannel,
    cbr_active: bool,
    include_setup: bool,
) -> Result<f64, MetricsError> {
    TransferModel::default().estimate_transfer_time(n_packets, packet_bytes, channel, cbr_active, include_setup)
}
