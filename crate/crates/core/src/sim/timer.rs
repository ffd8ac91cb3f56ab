use super::SimTime;

/// A restartable timeout that keeps at most one event in the queue.
///
/// Restarting only moves the deadline. When the queued event fires before the
/// deadline, the owner re-queues it for the deadline instead of treating it
/// as an expiry. This keeps cancelled timers out of the heap, which matters
/// when a timer is pushed back on every packet.
#[derive(Clone, Copy, Debug, Default)]
pub struct LazyTimer {
    deadline: Option<SimTime>,
    queued: Option<SimTime>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fired {
    /// The deadline has passed; the timer is now stopped.
    Expired,
    /// Early wake-up; queue an event for this time.
    Requeue(SimTime),
    /// The timer was stopped after this event was queued.
    Stale,
}

impl LazyTimer {
    pub fn is_running(&self) -> bool {
        self.deadline.is_some()
    }

    pub fn deadline(&self) -> Option<SimTime> {
        self.deadline
    }

    /// Sets the deadline. Returns the time to queue an event for, if none is
    /// queued yet. Deadlines must not move earlier than a queued event.
    pub fn arm(&mut self, deadline: SimTime) -> Option<SimTime> {
        debug_assert!(self.queued.is_none_or(|q| q <= deadline));
        self.deadline = Some(deadline);
        if self.queued.is_some() {
            return None;
        }
        self.queued = Some(deadline);
        self.queued
    }

    pub fn stop(&mut self) {
        self.deadline = None;
    }

    /// Call when the queued event fires.
    pub fn fire(&mut self, now: SimTime) -> Fired {
        self.queued = None;
        match self.deadline {
            None => Fired::Stale,
            Some(d) if d > now => {
                self.queued = Some(d);
                Fired::Requeue(d)
            }
            Some(_) => {
                self.deadline = None;
                Fired::Expired
            }
        }
    }
}
