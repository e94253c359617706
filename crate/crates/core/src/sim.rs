//! Deterministic discrete-event engine: simulation clock, event calendar with
//! cancellable handles, and seeded random-number streams.
//!
//! Events are ordered by `(time, seq)` where `seq` is the scheduling order, so
//! simultaneous events always pop in the order they were scheduled. A run with
//! the same configuration and seed therefore produces the same event trace.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled at t={at} but the clock is already at t={now}")]
    ScheduledInPast { at: f64, now: f64 },
    #[error("time value {0} is not a finite, non-negative number of minutes")]
    InvalidTime(f64),
    #[error("unknown event handle #{0}")]
    UnknownHandle(u64),
    #[error("event handle #{0} was already dispatched")]
    AlreadyDispatched(u64),
    #[error("horizon t={horizon} lies before the current clock t={now}")]
    HorizonInPast { horizon: f64, now: f64 },
    #[error("exponential rate must be positive, got {0}")]
    NonPositiveRate(f64),
}

/// Simulation time in minutes.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime<T>(T);

impl<T: Real> SimTime<T> {
    pub fn zero() -> Self {
        SimTime(T::zero())
    }

    pub fn from_minutes(minutes: T) -> Result<Self, SimError> {
        if minutes.is_finite() && minutes >= T::zero() {
            Ok(SimTime(minutes))
        } else {
            Err(SimError::InvalidTime(minutes.as_f64()))
        }
    }

    #[inline]
    pub fn minutes(self) -> T {
        self.0
    }

    /// Time `delta` minutes later.
    pub fn after(self, delta: T) -> Result<Self, SimError> {
        Self::from_minutes(self.0 + delta)
    }
}

impl<T: Real> fmt::Display for SimTime<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of a charger port (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortId(pub usize);

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Arrival,
    PatienceExpiry(AgentId),
    FastPhaseComplete(PortId),
    ChargeComplete(PortId),
    EndOfHorizon,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::PatienceExpiry(_) => "patience_expiry",
            EventKind::FastPhaseComplete(_) => "fast_phase_complete",
            EventKind::ChargeComplete(_) => "charge_complete",
            EventKind::EndOfHorizon => "end_of_horizon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<T> {
    pub time: SimTime<T>,
    pub seq: u64,
    pub kind: EventKind,
}

/// Handle returned by [`EventCalendar::schedule`]; permits cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Pending,
    Cancelled,
    Dispatched,
}

struct Entry<T>(Event<T>);

impl<T: Real> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Real> Eq for Entry<T> {}

impl<T: Real> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // times are validated finite on insertion
        self.0
            .time
            .minutes()
            .partial_cmp(&other.0.time.minutes())
            .unwrap_or(Ordering::Equal)
            .then(self.0.seq.cmp(&other.0.seq))
    }
}

/// Bookkeeping totals; `scheduled == dispatched + cancelled + pending` always.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CalendarStats {
    pub scheduled: u64,
    pub dispatched: u64,
    pub cancelled: u64,
    pub pending: u64,
}

/// Future-event list ordered by `(time, seq)`.
pub struct EventCalendar<T> {
    now: SimTime<T>,
    heap: BinaryHeap<Reverse<Entry<T>>>,
    slots: Vec<Slot>,
    stats: CalendarStats,
}

impl<T: Real> Default for EventCalendar<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> EventCalendar<T> {
    pub fn new() -> Self {
        EventCalendar {
            now: SimTime::zero(),
            heap: BinaryHeap::new(),
            slots: Vec::new(),
            stats: CalendarStats::default(),
        }
    }

    #[inline]
    pub fn now(&self) -> SimTime<T> {
        self.now
    }

    pub fn stats(&self) -> CalendarStats {
        self.stats
    }

    pub fn is_empty(&self) -> bool {
        self.stats.pending == 0
    }

    pub fn schedule(&mut self, time: SimTime<T>, kind: EventKind) -> Result<EventHandle, SimError> {
        let t = time.minutes();
        if !t.is_finite() {
            return Err(SimError::InvalidTime(t.as_f64()));
        }
        if t < self.now.minutes() {
            return Err(SimError::ScheduledInPast {
                at: t.as_f64(),
                now: self.now.minutes().as_f64(),
            });
        }
        let seq = self.slots.len() as u64;
        self.slots.push(Slot::Pending);
        self.heap.push(Reverse(Entry(Event { time, seq, kind })));
        self.stats.scheduled += 1;
        self.stats.pending += 1;
        Ok(EventHandle(seq))
    }

    /// Schedules `kind` to fire `delay` minutes from now.
    pub fn schedule_in(&mut self, delay: T, kind: EventKind) -> Result<EventHandle, SimError> {
        let at = self.now.after(delay)?;
        self.schedule(at, kind)
    }

    /// Voids a pending event. Cancelling twice is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) -> Result<(), SimError> {
        let slot = self
            .slots
            .get_mut(handle.0 as usize)
            .ok_or(SimError::UnknownHandle(handle.0))?;
        match *slot {
            Slot::Pending => {
                *slot = Slot::Cancelled;
                self.stats.pending -= 1;
                self.stats.cancelled += 1;
                Ok(())
            }
            Slot::Cancelled => Ok(()),
            Slot::Dispatched => Err(SimError::AlreadyDispatched(handle.0)),
        }
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        matches!(self.slots.get(handle.0 as usize), Some(Slot::Pending))
    }

    fn discard_cancelled(&mut self) {
        while let Some(Reverse(Entry(ev))) = self.heap.peek() {
            if self.slots[ev.seq as usize] == Slot::Cancelled {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime<T>> {
        self.discard_cancelled();
        self.heap.peek().map(|Reverse(Entry(ev))| ev.time)
    }

    /// Pops the next live event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event<T>> {
        self.discard_cancelled();
        let Reverse(Entry(ev)) = self.heap.pop()?;
        self.slots[ev.seq as usize] = Slot::Dispatched;
        self.stats.pending -= 1;
        self.stats.dispatched += 1;
        self.now = ev.time;
        Some(ev)
    }

    /// Pops the next live event if it is due at or before `horizon`.
    pub fn pop_until(&mut self, horizon: SimTime<T>) -> Option<Event<T>> {
        match self.peek_time() {
            Some(t) if t.minutes() <= horizon.minutes() => self.pop(),
            _ => None,
        }
    }

    /// Dispatches every live event with `time <= horizon` to `handler`, one at
    /// a time, then sets the clock to `horizon`. Returns the dispatch count.
    pub fn run_until<H>(&mut self, horizon: SimTime<T>, handler: &mut H) -> Result<u64, H::Error>
    where
        H: Handler<T> + ?Sized,
    {
        if horizon.minutes() < self.now.minutes() {
            return Err(SimError::HorizonInPast {
                horizon: horizon.minutes().as_f64(),
                now: self.now.minutes().as_f64(),
            }
            .into());
        }
        let mut dispatched = 0;
        while let Some(ev) = self.pop_until(horizon) {
            dispatched += 1;
            handler.handle(self, ev)?;
        }
        self.now = horizon;
        Ok(dispatched)
    }
}

/// Receives dispatched events. Handlers run synchronously and may schedule or
/// cancel further events through the calendar they are given.
pub trait Handler<T: Real> {
    type Error: From<SimError>;

    fn handle(&mut self, calendar: &mut EventCalendar<T>, event: Event<T>) -> Result<(), Self::Error>;
}

impl<T, F, E> Handler<T> for F
where
    T: Real,
    E: From<SimError>,
    F: FnMut(&mut EventCalendar<T>, Event<T>) -> Result<(), E>,
{
    type Error = E;

    fn handle(&mut self, calendar: &mut EventCalendar<T>, event: Event<T>) -> Result<(), E> {
        self(calendar, event)
    }
}

/// What a random stream is used for. Each purpose gets its own substream so
/// that, for example, arrival times do not shift when a scenario consumes
/// more or fewer service-time draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Arrivals,
    InitialSoc,
    UserType,
    TargetSoc,
    ServiceTime,
    Patience,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Arrivals => 1,
            Purpose::InitialSoc => 2,
            Purpose::UserType => 3,
            Purpose::TargetSoc => 4,
            Purpose::ServiceTime => 5,
            Purpose::Patience => 6,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `seed ⊕ hash(replication, purpose)`.
pub fn derive_seed(seed: u64, purpose: Purpose, replication: u64) -> u64 {
    let h = splitmix64(splitmix64(replication) ^ purpose.tag().wrapping_mul(0xD1B5_4A32_D192_ED03));
    seed ^ h
}

/// Reproducible random stream keyed by `(seed, purpose, replication)`.
#[derive(Clone)]
pub struct RngStream {
    seed: u64,
    purpose: Purpose,
    replication: u64,
    rng: ChaCha8Rng,
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream")
            .field("seed", &self.seed)
            .field("purpose", &self.purpose)
            .field("replication", &self.replication)
            .finish()
    }
}

impl RngStream {
    pub fn new(seed: u64, purpose: Purpose, replication: u64) -> Self {
        RngStream {
            seed,
            purpose,
            replication,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, replication)),
        }
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    pub fn replication(&self) -> u64 {
        self.replication
    }

    /// Uniform draw on `[0, 1)`.
    pub fn unit<T: Real>(&mut self) -> T {
        T::sample_unit(&mut self.rng)
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform<T: Real>(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * self.unit::<T>()
    }

    /// Exponential delay with the given rate (per minute).
    pub fn sample_exponential<T: Real>(&mut self, rate: T) -> Result<T, SimError> {
        if !(rate > T::zero()) || !rate.is_finite() {
            return Err(SimError::NonPositiveRate(rate.as_f64()));
        }
        Ok(T::sample_exp1(&mut self.rng) / rate)
    }
}
