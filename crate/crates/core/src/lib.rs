//! Discrete-event simulator for FACH/DCH channel switching on the downlink
//! of a single UMTS cell.
//!
//! TCP-like senders push ON/OFF bursty traffic over a backhaul link into
//! per-connection NodeB queues. Each connection is served either on the
//! shared, slow FACH (alongside priority CBR signalling) or on one of a few
//! fast dedicated channels; a switching policy moves connections between
//! the two at a fixed switching cost. Runs report burst response time and
//! slowdown so policies can be compared.

pub mod config;
mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod radio;
pub mod sim;
pub mod trace;
pub mod traffic;

use std::fmt;

pub use config::{ConfigError, ScenarioConfig};
pub use error::Error;
pub use experiment::{compare, run, sweep, RunSummary, SweepParam, SweepSpec};
pub use model::{Pin, ScriptedBurst, SimOptions, Simulation};
pub use policy::{PolicyConfig, PolicyKind};
pub use radio::{Channel, FachDiscipline};

/// Index of a TCP connection (and of its mobile destination).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnId(pub u32);

impl ConnId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ConnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
