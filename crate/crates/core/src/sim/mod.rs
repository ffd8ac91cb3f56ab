//! Event-driven simulation kernel: clock, event queue and seeded random streams.

mod rng;
mod scheduler;
mod time;
mod timer;

pub use rng::{derive_seed, sample_exponential, sample_pareto_burst, DistError, Exponential, ParetoBurst, RngStream};
pub use scheduler::{EventHandle, Scheduler, SimError};
pub use time::SimTime;
pub use timer::{Fired, LazyTimer};
