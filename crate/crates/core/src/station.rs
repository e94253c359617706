//! Charging-station state machine.
//!
//! Arrivals are admitted (or balk) according to the active scenario, wait in
//! an [`ImpatientQueue`] with a patience timer each, and are served by a
//! [`Charger`] with one or two ports. A port charges in `Fast` mode up to the
//! knee SoC and then in `Slow` mode; at most one port may be in `Fast` mode at
//! any instant, so on a two-port charger the second port can start a fast
//! session as soon as the first switches to slow.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    assumed_wait, sample_agent, AgentConfig, AgentError, AgentStreams, ChargingProfile, Disposition, EvAgent,
};
use crate::real::Real;
use crate::sim::{
    AgentId, CalendarStats, Event, EventCalendar, EventHandle, EventKind, Handler, PortId, Purpose, RngStream,
    SimError, SimTime,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("agent {0} is not waiting in the queue")]
    NotQueued(AgentId),
    #[error("queue is full ({0} slots)")]
    QueueFull(usize),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("port {0} is in the wrong state for this event")]
    PortState(PortId),
    #[error("invariant violated at t={t}: {what}")]
    Invariant { t: f64, what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// No voluntary balking; arrivals balk only when the queue is full.
    BlockingFC,
    /// Arrivals look at the station and balk on their own wait assumption.
    ObservationFC,
    /// The station shares an estimated wait with arrivals.
    InformedFC,
    /// As `InformedFC`, with the two-mode two-port charger.
    Informed2PortCharge,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::BlockingFC,
        ScenarioKind::ObservationFC,
        ScenarioKind::InformedFC,
        ScenarioKind::Informed2PortCharge,
    ];

    pub fn is_informed(self) -> bool {
        matches!(self, ScenarioKind::InformedFC | ScenarioKind::Informed2PortCharge)
    }

    pub fn port_count(self) -> usize {
        match self {
            ScenarioKind::Informed2PortCharge => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::BlockingFC => "BlockingFC",
            ScenarioKind::ObservationFC => "ObservationFC",
            ScenarioKind::InformedFC => "InformedFC",
            ScenarioKind::Informed2PortCharge => "Informed2PortCharge",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                format!(
                    "unknown scenario '{s}' (expected one of BlockingFC, ObservationFC, InformedFC, Informed2PortCharge)"
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Join,
    BalkForced,
    BalkVoluntary,
}

/// Estimator of the mean queue wait fed by served agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WqEstimator<T> {
    Cumulative,
    /// Exponentially weighted with smoothing factor `alpha` in (0, 1].
    Ewma(T),
}

/// SoC used as the target when an informed arrival sizes its patience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatienceTarget {
    Knee,
    Target,
}

/// Occupancy term of the shared wait estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EwtOccupancy {
    /// Time until a port can start the next fast session.
    Port,
    /// Remaining fast-phase time only; a slow occupant adds nothing.
    FastPhase,
}

/// How long a session occupies a port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ServiceModel<T> {
    /// Fast phase to the knee, then slow phase to the agent's target.
    SocDerived,
    /// A single phase with Exp(rate) duration (queueing-theory check mode).
    Exponential { rate: T },
}

/// How long a queued agent tolerates waiting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PatienceModel<T> {
    /// The agent's own threshold, z × T(SoC → knee).
    Threshold,
    Infinite,
    /// Exp(rate) patience per queued agent.
    Exponential {
        rate: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationConfig<T> {
    pub scenario: ScenarioKind,
    pub lambda: T,
    pub horizon: T,
    /// Waiting slots, excluding the ports.
    pub queue_capacity: usize,
    pub wq_estimator: WqEstimator<T>,
    pub patience_target: PatienceTarget,
    pub ewt_occupancy: EwtOccupancy,
    pub service: ServiceModel<T>,
    pub patience: PatienceModel<T>,
    /// Count reneged agents' waits in the reported average wait.
    pub avg_wait_includes_reneged: bool,
    /// Stop generating arrivals after this many and end the run.
    pub max_arrivals: Option<u64>,
    /// Keep every finished agent and the enqueue/service order for audits.
    pub record_agents: bool,
    pub record_trace: bool,
    /// Accumulate time spent with `n` EVs in the system.
    pub record_occupancy: bool,
    /// Check structural invariants after every dispatched event.
    pub audit: bool,
}

impl<T: Real> StationConfig<T> {
    pub fn new(scenario: ScenarioKind, lambda: T, horizon: T) -> Self {
        StationConfig {
            scenario,
            lambda,
            horizon,
            queue_capacity: 5,
            wq_estimator: WqEstimator::Cumulative,
            patience_target: PatienceTarget::Knee,
            ewt_occupancy: EwtOccupancy::Port,
            service: ServiceModel::SocDerived,
            patience: PatienceModel::Threshold,
            avg_wait_includes_reneged: true,
            max_arrivals: None,
            record_agents: true,
            record_trace: false,
            record_occupancy: false,
            audit: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct WaitEstimator<T> {
    kind: WqEstimator<T>,
    value: T,
    samples: u64,
}

impl<T: Real> WaitEstimator<T> {
    fn new(kind: WqEstimator<T>) -> Self {
        WaitEstimator {
            kind,
            value: T::zero(),
            samples: 0,
        }
    }

    fn update(&mut self, wait: T) {
        self.samples += 1;
        self.value = match self.kind {
            WqEstimator::Cumulative => self.value + (wait - self.value) / T::count(self.samples),
            WqEstimator::Ewma(alpha) => self.value + alpha * (wait - self.value),
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueEntry<T> {
    pub agent: AgentId,
    pub entry_time: T,
    /// `None` only when patience is unbounded.
    pub timer: Option<EventHandle>,
}

/// Bounded FIFO that also lets any entry leave from its current position.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpatientQueue<T> {
    capacity: usize,
    entries: VecDeque<QueueEntry<T>>,
}

impl<T: Real> ImpatientQueue<T> {
    pub fn new(capacity: usize) -> Self {
        ImpatientQueue {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn push(&mut self, entry: QueueEntry<T>) -> Result<(), StationError> {
        if self.is_full() {
            return Err(StationError::QueueFull(self.capacity));
        }
        self.entries.push_back(entry);
        Ok(())
    }

    pub fn pop_front(&mut self) -> Option<QueueEntry<T>> {
        self.entries.pop_front()
    }

    /// Removes `agent` wherever it is; everyone behind it moves up one slot.
    pub fn remove(&mut self, agent: AgentId) -> Option<QueueEntry<T>> {
        let pos = self.position(agent)?;
        self.entries.remove(pos)
    }

    /// 0-based position from the head.
    pub fn position(&self, agent: AgentId) -> Option<usize> {
        self.entries.iter().position(|e| e.agent == agent)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry<T>> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortState {
    Idle,
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Port<T> {
    pub state: PortState,
    pub occupant: Option<AgentId>,
    /// End of the current phase.
    pub phase_end: Option<T>,
    /// When the occupant unplugs.
    pub session_end: Option<T>,
}

impl<T> Port<T> {
    fn idle() -> Self {
        Port {
            state: PortState::Idle,
            occupant: None,
            phase_end: None,
            session_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Charger<T> {
    ports: Vec<Port<T>>,
}

impl<T: Real> Charger<T> {
    pub fn with_ports(n: usize) -> Self {
        assert!(n == 1 || n == 2, "a charger has one or two ports");
        Charger {
            ports: (0..n).map(|_| Port::idle()).collect(),
        }
    }

    pub fn ports(&self) -> &[Port<T>] {
        &self.ports
    }

    pub fn port(&self, id: PortId) -> &Port<T> {
        &self.ports[id.0]
    }

    pub fn fast_count(&self) -> usize {
        self.ports.iter().filter(|p| p.state == PortState::Fast).count()
    }

    pub fn occupied(&self) -> usize {
        self.ports.iter().filter(|p| p.occupant.is_some()).count()
    }

    /// Port that may start a fast session now: an idle port while no port is
    /// fast charging. Ports are tried in order, so an idle charger uses port 0.
    pub fn eligible_port(&self) -> Option<PortId> {
        if self.fast_count() > 0 {
            return None;
        }
        self.ports.iter().position(|p| p.state == PortState::Idle).map(PortId)
    }

    /// Minutes until [`Self::eligible_port`] would return a port, assuming no
    /// new sessions start: the fast budget must be free and a port unplugged.
    pub fn time_until_available(&self, now: T) -> T {
        let fast_free = self
            .ports
            .iter()
            .filter(|p| p.state == PortState::Fast)
            .filter_map(|p| p.phase_end)
            .fold(now, T::max);
        let port_free = self
            .ports
            .iter()
            .map(|p| match p.state {
                PortState::Idle => now,
                _ => p.session_end.unwrap_or(now),
            })
            .fold(T::infinity(), T::min);
        (fast_free.max(port_free) - now).max(T::zero())
    }

    /// Minutes left in the current fast phase, 0 if no port is fast.
    pub fn remaining_fast_phase(&self, now: T) -> T {
        self.ports
            .iter()
            .filter(|p| p.state == PortState::Fast)
            .filter_map(|p| p.phase_end)
            .fold(now, T::max)
            - now
    }

    /// Plugs `agent` into `port` in fast mode.
    pub fn start_fast(
        &mut self,
        port: PortId,
        agent: AgentId,
        phase_end: T,
        session_end: T,
    ) -> Result<(), StationError> {
        if self.eligible_port().is_none() || self.ports[port.0].state != PortState::Idle {
            return Err(StationError::PortState(port));
        }
        self.ports[port.0] = Port {
            state: PortState::Fast,
            occupant: Some(agent),
            phase_end: Some(phase_end),
            session_end: Some(session_end),
        };
        Ok(())
    }

    fn switch_to_slow(&mut self, port: PortId) -> Result<(), StationError> {
        let p = &mut self.ports[port.0];
        if p.state != PortState::Fast {
            return Err(StationError::PortState(port));
        }
        p.state = PortState::Slow;
        p.phase_end = p.session_end;
        Ok(())
    }

    fn release(&mut self, port: PortId) -> Result<AgentId, StationError> {
        let p = &mut self.ports[port.0];
        let agent = p.occupant.ok_or(StationError::PortState(port))?;
        *p = Port::idle();
        Ok(agent)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub arrivals: u64,
    pub balked_forced: u64,
    pub balked_voluntary: u64,
    pub reneged: u64,
    pub served: u64,
    pub in_system_at_end: u64,
}

impl Counters {
    /// Agents that entered the queue (or went straight to a port).
    pub fn queued(&self) -> u64 {
        self.served + self.reneged + self.in_system_at_end
    }

    pub fn conserved(&self) -> bool {
        self.arrivals == self.balked_forced + self.balked_voluntary + self.reneged + self.served + self.in_system_at_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord<T> {
    pub t: T,
    pub kind: &'static str,
    pub agent: Option<AgentId>,
    pub port: Option<PortId>,
    pub queue_len: usize,
    pub n_sys: usize,
}

/// Everything a finished replication leaves behind.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome<T> {
    pub scenario: ScenarioKind,
    pub replication: u64,
    pub seed: u64,
    /// Time at which the run closed (the horizon, or the last arrival when
    /// `max_arrivals` ends the run).
    pub end_time: T,
    pub counters: Counters,
    /// Sum and count of realized queue waits over agents that left the queue.
    pub wait_sum: T,
    pub wait_count: u64,
    pub awt_trace: Vec<(T, T)>,
    pub ewt_trace: Vec<(T, T)>,
    /// Finished agents ordered by id (empty unless `record_agents`).
    pub agents: Vec<EvAgent<T>>,
    pub enqueue_order: Vec<AgentId>,
    pub service_order: Vec<AgentId>,
    pub trace: Vec<TraceRecord<T>>,
    /// Time spent with `n` EVs in the system, indexed by `n`.
    pub occupancy: Vec<T>,
    pub max_queue_len: usize,
    pub max_fast_ports: usize,
    pub final_wq_estimate: T,
    pub calendar: CalendarStats,
    pub dispatched: u64,
}

impl<T: Real> ReplicationOutcome<T> {
    pub fn avg_wait(&self) -> T {
        if self.wait_count == 0 {
            T::zero()
        } else {
            self.wait_sum / T::count(self.wait_count)
        }
    }
}

/// One replication's station: queue, charger and bookkeeping.
pub struct Station<T: Real> {
    config: StationConfig<T>,
    profile: ChargingProfile<T>,
    agent_config: AgentConfig<T>,
    replication: u64,
    seed: u64,

    queue: ImpatientQueue<T>,
    charger: Charger<T>,
    live: HashMap<AgentId, EvAgent<T>>,
    finished: Vec<EvAgent<T>>,
    wq: WaitEstimator<T>,
    counters: Counters,
    wait_sum: T,
    wait_count: u64,
    closed: bool,
    end_time: T,

    arrival_stream: RngStream,
    agent_streams: AgentStreams,
    service_stream: RngStream,
    patience_stream: RngStream,
    next_id: u64,

    awt_trace: Vec<(T, T)>,
    ewt_trace: Vec<(T, T)>,
    enqueue_order: Vec<AgentId>,
    service_order: Vec<AgentId>,
    trace: Vec<TraceRecord<T>>,
    occupancy: Vec<T>,
    last_change: T,
    max_queue_len: usize,
    max_fast_ports: usize,
    dispatched: u64,
}

impl<T: Real> Station<T> {
    pub fn new(
        config: StationConfig<T>,
        profile: ChargingProfile<T>,
        agent_config: AgentConfig<T>,
        seed: u64,
        replication: u64,
    ) -> Self {
        let ports = config.scenario.port_count();
        let queue = ImpatientQueue::new(config.queue_capacity);
        let wq = WaitEstimator::new(config.wq_estimator);
        Station {
            profile,
            agent_config,
            replication,
            seed,
            queue,
            charger: Charger::with_ports(ports),
            live: HashMap::new(),
            finished: Vec::new(),
            wq,
            counters: Counters::default(),
            wait_sum: T::zero(),
            wait_count: 0,
            closed: false,
            end_time: T::zero(),
            arrival_stream: RngStream::new(seed, Purpose::Arrivals, replication),
            agent_streams: AgentStreams::new(seed, replication),
            service_stream: RngStream::new(seed, Purpose::ServiceTime, replication),
            patience_stream: RngStream::new(seed, Purpose::Patience, replication),
            next_id: 0,
            awt_trace: Vec::new(),
            ewt_trace: Vec::new(),
            enqueue_order: Vec::new(),
            service_order: Vec::new(),
            trace: Vec::new(),
            occupancy: Vec::new(),
            last_change: T::zero(),
            max_queue_len: 0,
            max_fast_ports: 0,
            dispatched: 0,
            config,
        }
    }

    pub fn queue(&self) -> &ImpatientQueue<T> {
        &self.queue
    }

    pub fn charger(&self) -> &Charger<T> {
        &self.charger
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn wq_estimate(&self) -> T {
        self.wq.value
    }

    pub fn agent(&self, id: AgentId) -> Option<&EvAgent<T>> {
        self.live.get(&id).or_else(|| self.finished.iter().find(|a| a.id == id))
    }

    /// EVs waiting plus EVs plugged in.
    pub fn n_sys(&self) -> usize {
        self.queue.len() + self.charger.occupied()
    }

    /// Wait the station shares with arrivals: W_q × N_queue plus the
    /// occupancy term selected by [`EwtOccupancy`].
    pub fn estimated_wait(&self, now: T) -> T {
        let occupancy = match self.config.ewt_occupancy {
            EwtOccupancy::Port => self.charger.time_until_available(now),
            EwtOccupancy::FastPhase => self.charger.remaining_fast_phase(now),
        };
        self.wq.value * T::count(self.queue.len() as u64) + occupancy
    }

    fn has_room(&self) -> bool {
        !self.queue.is_full() || (self.queue.is_empty() && self.charger.eligible_port().is_some())
    }

    /// Decides whether `agent` joins. Also returns the wait the agent assumed,
    /// for scenarios where it forms one.
    pub fn admit_decision(&self, agent: &EvAgent<T>, now: T) -> Result<(Admission, Option<T>), StationError> {
        if !self.has_room() {
            return Ok((Admission::BalkForced, None));
        }
        match self.config.scenario {
            ScenarioKind::BlockingFC => Ok((Admission::Join, None)),
            ScenarioKind::ObservationFC => {
                let awt = assumed_wait(
                    agent.user_type,
                    agent.soc_arrive,
                    self.queue.len(),
                    self.n_sys(),
                    &self.profile,
                    self.agent_config.soc_range,
                );
                let verdict = if awt <= agent.patience_threshold {
                    Admission::Join
                } else {
                    Admission::BalkVoluntary
                };
                Ok((verdict, Some(awt)))
            }
            ScenarioKind::InformedFC | ScenarioKind::Informed2PortCharge => {
                let target = match self.config.patience_target {
                    PatienceTarget::Knee => self.profile.knee_soc,
                    PatienceTarget::Target => agent.target_soc,
                };
                let tolerance = agent.impatience_factor * self.profile.charge_time(agent.soc_arrive, target)?;
                let verdict = if self.estimated_wait(now) <= tolerance {
                    Admission::Join
                } else {
                    Admission::BalkVoluntary
                };
                Ok((verdict, None))
            }
        }
    }

    /// Handles an arriving agent: records the shared/assumed waits, decides,
    /// and either queues, serves, or dismisses it.
    pub fn arrive(&mut self, cal: &mut EventCalendar<T>, mut agent: EvAgent<T>) -> Result<Admission, StationError> {
        let now = cal.now().minutes();
        self.counters.arrivals += 1;
        if self.config.scenario.is_informed() {
            self.ewt_trace.push((now, self.estimated_wait(now)));
        }
        let (decision, awt) = self.admit_decision(&agent, now)?;
        if let Some(awt) = awt {
            self.awt_trace.push((now, awt));
        }
        match decision {
            Admission::BalkForced => {
                agent.dispose(Disposition::BalkedForced)?;
                self.counters.balked_forced += 1;
                self.retire(agent);
            }
            Admission::BalkVoluntary => {
                agent.dispose(Disposition::BalkedVoluntary)?;
                self.counters.balked_voluntary += 1;
                self.retire(agent);
            }
            Admission::Join => {
                let id = agent.id;
                agent.queue_entry_time = Some(now);
                if self.config.record_agents {
                    self.enqueue_order.push(id);
                }
                self.live.insert(id, agent);
                match self.charger.eligible_port() {
                    Some(port) if self.queue.is_empty() => self.start_service(cal, id, port)?,
                    _ => {
                        self.enqueue(cal, id, now)?;
                    }
                }
            }
        }
        Ok(decision)
    }

    /// Appends a live agent to the queue and arms its patience timer.
    pub fn enqueue(
        &mut self,
        cal: &mut EventCalendar<T>,
        id: AgentId,
        now: T,
    ) -> Result<Option<EventHandle>, StationError> {
        if self.queue.is_full() {
            return Err(StationError::QueueFull(self.queue.capacity()));
        }
        let patience = self
            .live
            .get(&id)
            .ok_or(StationError::UnknownAgent(id))?
            .patience_threshold;
        let timer = if patience.is_finite() {
            Some(cal.schedule(SimTime::from_minutes(now + patience)?, EventKind::PatienceExpiry(id))?)
        } else {
            None
        };
        self.queue.push(QueueEntry {
            agent: id,
            entry_time: now,
            timer,
        })?;
        self.max_queue_len = self.max_queue_len.max(self.queue.len());
        Ok(timer)
    }

    pub fn on_patience_expiry(&mut self, cal: &mut EventCalendar<T>, id: AgentId) -> Result<(), StationError> {
        let now = cal.now().minutes();
        let entry = self.queue.remove(id).ok_or(StationError::NotQueued(id))?;
        let mut agent = self.live.remove(&id).ok_or(StationError::UnknownAgent(id))?;
        if self.config.audit && now != entry.entry_time + agent.patience_threshold {
            return Err(StationError::Invariant {
                t: now.as_f64(),
                what: format!("agent {id} reneged at a time other than entry + patience"),
            });
        }
        agent.dispose(Disposition::Reneged)?;
        self.counters.reneged += 1;
        if self.config.avg_wait_includes_reneged {
            self.wait_sum = self.wait_sum + agent.patience_threshold;
            self.wait_count += 1;
        }
        self.retire(agent);
        Ok(())
    }

    fn start_service(&mut self, cal: &mut EventCalendar<T>, id: AgentId, port: PortId) -> Result<(), StationError> {
        let now = cal.now().minutes();
        let agent = self.live.get_mut(&id).ok_or(StationError::UnknownAgent(id))?;
        agent.service_start = Some(now);
        let wait = now - agent.queue_entry_time.unwrap_or(now);
        let (fast, slow) = match self.config.service {
            ServiceModel::SocDerived => {
                let fast = self.profile.fast_time(agent.soc_arrive);
                let slow = if agent.target_soc > self.profile.knee_soc {
                    self.profile.charge_time(self.profile.knee_soc, agent.target_soc)?
                } else {
                    T::zero()
                };
                (fast, slow)
            }
            ServiceModel::Exponential { rate } => (self.service_stream.sample_exponential(rate)?, T::zero()),
        };
        let phase_end = now + fast;
        self.charger.start_fast(port, id, phase_end, phase_end + slow)?;
        cal.schedule(SimTime::from_minutes(phase_end)?, EventKind::FastPhaseComplete(port))?;
        self.wait_sum = self.wait_sum + wait;
        self.wait_count += 1;
        if self.config.record_agents {
            self.service_order.push(id);
        }
        Ok(())
    }

    /// Offers the fast budget to the head of the queue.
    fn pull_from_queue(&mut self, cal: &mut EventCalendar<T>) -> Result<(), StationError> {
        while let Some(port) = self.charger.eligible_port() {
            let Some(entry) = self.queue.pop_front() else { break };
            if let Some(timer) = entry.timer {
                cal.cancel(timer)?;
            }
            self.start_service(cal, entry.agent, port)?;
        }
        Ok(())
    }

    pub fn on_fast_phase_complete(&mut self, cal: &mut EventCalendar<T>, port: PortId) -> Result<(), StationError> {
        let p = *self.charger.port(port);
        if p.state != PortState::Fast {
            return Err(StationError::PortState(port));
        }
        let id = p.occupant.ok_or(StationError::PortState(port))?;
        let continues = match self.config.service {
            ServiceModel::SocDerived => {
                let agent = self.live.get(&id).ok_or(StationError::UnknownAgent(id))?;
                agent.target_soc > self.profile.knee_soc
            }
            ServiceModel::Exponential { .. } => false,
        };
        if continues {
            self.charger.switch_to_slow(port)?;
            let end = self
                .charger
                .port(port)
                .session_end
                .ok_or(StationError::PortState(port))?;
            cal.schedule(SimTime::from_minutes(end)?, EventKind::ChargeComplete(port))?;
        } else {
            self.finish_session(port)?;
        }
        self.pull_from_queue(cal)
    }

    pub fn on_charge_complete(&mut self, cal: &mut EventCalendar<T>, port: PortId) -> Result<(), StationError> {
        if self.charger.port(port).state != PortState::Slow {
            return Err(StationError::PortState(port));
        }
        self.finish_session(port)?;
        self.pull_from_queue(cal)
    }

    fn finish_session(&mut self, port: PortId) -> Result<(), StationError> {
        let id = self.charger.release(port)?;
        let mut agent = self.live.remove(&id).ok_or(StationError::UnknownAgent(id))?;
        agent.dispose(Disposition::Served)?;
        self.counters.served += 1;
        if let Some(w) = agent.service_wait() {
            self.wq.update(w);
        }
        self.retire(agent);
        Ok(())
    }

    fn on_arrival_event(&mut self, cal: &mut EventCalendar<T>) -> Result<(), StationError> {
        let now = cal.now().minutes();
        let id = AgentId(self.next_id);
        self.next_id += 1;
        let mut agent = sample_agent(&mut self.agent_streams, id, now, &self.agent_config, &self.profile);
        match self.config.patience {
            PatienceModel::Threshold => {}
            PatienceModel::Infinite => agent.patience_threshold = T::infinity(),
            PatienceModel::Exponential { rate } => {
                agent.patience_threshold = if rate > T::zero() {
                    self.patience_stream.sample_exponential(rate)?
                } else {
                    T::infinity()
                };
            }
        }
        let more = self
            .config
            .max_arrivals
            .is_none_or(|max| self.counters.arrivals + 1 < max);
        if more {
            let gap = self.arrival_stream.sample_exponential(self.config.lambda)?;
            cal.schedule_in(gap, EventKind::Arrival)?;
        }
        self.arrive(cal, agent)?;
        if !more {
            self.close(now);
        }
        Ok(())
    }

    /// Marks everyone still waiting or charging as in-system-at-end.
    fn close(&mut self, now: T) {
        if self.closed {
            return;
        }
        self.account_occupancy(now);
        self.closed = true;
        self.end_time = now;
        let mut remaining: Vec<EvAgent<T>> = self.live.drain().map(|(_, a)| a).collect();
        remaining.sort_by_key(|a| a.id);
        for mut agent in remaining {
            let marked = agent.dispose(Disposition::InSystemAtEnd);
            debug_assert!(marked.is_ok());
            self.counters.in_system_at_end += 1;
            self.retire(agent);
        }
    }

    fn retire(&mut self, agent: EvAgent<T>) {
        if self.config.record_agents {
            self.finished.push(agent);
        }
    }

    fn account_occupancy(&mut self, now: T) {
        if !self.config.record_occupancy || self.closed {
            return;
        }
        let n = self.n_sys();
        if self.occupancy.len() <= n {
            self.occupancy.resize(n + 1, T::zero());
        }
        self.occupancy[n] = self.occupancy[n] + (now - self.last_change);
        self.last_change = now;
    }

    fn audit(&self, now: T) -> Result<(), StationError> {
        let fail = |what: String| Err(StationError::Invariant { t: now.as_f64(), what });
        if self.charger.fast_count() > 1 {
            return fail("more than one port in fast mode".into());
        }
        if self.queue.len() > self.queue.capacity() {
            return fail("queue exceeds capacity".into());
        }
        for (i, p) in self.charger.ports().iter().enumerate() {
            if p.occupant.is_some() != (p.state != PortState::Idle) {
                return fail(format!("port {i} occupancy disagrees with its state"));
            }
        }
        if !self.closed && self.live.len() != self.n_sys() {
            return fail(format!("{} live agents but n_sys = {}", self.live.len(), self.n_sys()));
        }
        Ok(())
    }

    /// Runs a full replication: first arrival, end-of-horizon marker, then
    /// every event up to the horizon.
    pub fn run(mut self) -> Result<ReplicationOutcome<T>, StationError> {
        let mut cal = EventCalendar::new();
        let first = self.arrival_stream.sample_exponential(self.config.lambda)?;
        let horizon = SimTime::from_minutes(self.config.horizon)?;
        cal.schedule(horizon, EventKind::EndOfHorizon)?;
        if self.config.max_arrivals != Some(0) {
            cal.schedule(SimTime::from_minutes(first)?, EventKind::Arrival)?;
        }
        while !self.closed {
            let Some(ev) = cal.pop_until(horizon) else { break };
            self.handle(&mut cal, ev)?;
        }
        self.close(horizon.minutes());
        Ok(self.into_outcome(cal.stats()))
    }

    fn into_outcome(mut self, calendar: CalendarStats) -> ReplicationOutcome<T> {
        self.finished.sort_by_key(|a| a.id);
        ReplicationOutcome {
            scenario: self.config.scenario,
            replication: self.replication,
            seed: self.seed,
            end_time: self.end_time,
            counters: self.counters,
            wait_sum: self.wait_sum,
            wait_count: self.wait_count,
            awt_trace: self.awt_trace,
            ewt_trace: self.ewt_trace,
            agents: self.finished,
            enqueue_order: self.enqueue_order,
            service_order: self.service_order,
            trace: self.trace,
            occupancy: self.occupancy,
            max_queue_len: self.max_queue_len,
            max_fast_ports: self.max_fast_ports,
            final_wq_estimate: self.wq.value,
            calendar,
            dispatched: self.dispatched,
        }
    }
}

impl<T: Real> Handler<T> for Station<T> {
    type Error = StationError;

    fn handle(&mut self, cal: &mut EventCalendar<T>, event: Event<T>) -> Result<(), StationError> {
        if self.closed {
            return Ok(());
        }
        let now = event.time.minutes();
        self.dispatched += 1;
        self.account_occupancy(now);
        let (agent, port) = match event.kind {
            EventKind::Arrival => {
                self.on_arrival_event(cal)?;
                (Some(AgentId(self.next_id - 1)), None)
            }
            EventKind::PatienceExpiry(id) => {
                self.on_patience_expiry(cal, id)?;
                (Some(id), None)
            }
            EventKind::FastPhaseComplete(port) => {
                let occupant = self.charger.port(port).occupant;
                self.on_fast_phase_complete(cal, port)?;
                (occupant, Some(port))
            }
            EventKind::ChargeComplete(port) => {
                let occupant = self.charger.port(port).occupant;
                self.on_charge_complete(cal, port)?;
                (occupant, Some(port))
            }
            EventKind::EndOfHorizon => {
                self.close(now);
                (None, None)
            }
        };
        self.max_fast_ports = self.max_fast_ports.max(self.charger.fast_count());
        if self.config.audit {
            self.audit(now)?;
        }
        if self.config.record_trace {
            self.trace.push(TraceRecord {
                t: now,
                kind: event.kind.name(),
                agent,
                port,
                queue_len: self.queue.len(),
                n_sys: self.n_sys(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::UserType;
    use approx::assert_abs_diff_eq;

    fn station(scenario: ScenarioKind) -> (Station<f64>, EventCalendar<f64>) {
        station_with(scenario, EwtOccupancy::Port)
    }

    fn station_with(scenario: ScenarioKind, ewt: EwtOccupancy) -> (Station<f64>, EventCalendar<f64>) {
        let mut cfg = StationConfig::new(scenario, 0.6, 1019.0);
        cfg.ewt_occupancy = ewt;
        cfg.record_trace = true;
        let st = Station::new(cfg, ChargingProfile::default(), AgentConfig::default(), 7, 0);
        (st, EventCalendar::new())
    }

    fn ev(id: u64, soc: f64, target: f64, patience: f64) -> EvAgent<f64> {
        EvAgent {
            id: AgentId(id),
            arrival_time: 0.0,
            soc_arrive: soc,
            target_soc: target,
            user_type: UserType::Standard,
            impatience_factor: 0.6,
            patience_threshold: patience,
            queue_entry_time: None,
            service_start: None,
            disposition: Disposition::Pending,
        }
    }

    /// Moves the clock to `t`; only valid while nothing earlier is pending.
    fn advance(cal: &mut EventCalendar<f64>, t: f64) {
        cal.schedule(SimTime::from_minutes(t).unwrap(), EventKind::EndOfHorizon)
            .unwrap();
        let e = cal.pop().unwrap();
        assert_eq!((e.time.minutes(), e.kind), (t, EventKind::EndOfHorizon));
    }

    fn step(st: &mut Station<f64>, cal: &mut EventCalendar<f64>) -> Event<f64> {
        let e = cal.pop().expect("pending event");
        st.handle(cal, e).unwrap();
        e
    }

    // soc whose fast phase lasts `minutes`
    fn soc_for(minutes: f64) -> f64 {
        80.0 - 1.25 * minutes
    }

    #[test]
    fn empty_station_estimates_zero() {
        for s in ScenarioKind::ALL {
            let (st, _) = station(s);
            assert_eq!(st.estimated_wait(0.0), 0.0);
        }
    }

    #[test]
    fn estimate_counts_queue_and_remaining_fast_phase() {
        for (scenario, ewt) in [
            (ScenarioKind::BlockingFC, EwtOccupancy::Port),
            (ScenarioKind::Informed2PortCharge, EwtOccupancy::Port),
            (ScenarioKind::InformedFC, EwtOccupancy::FastPhase),
        ] {
            let (mut st, mut cal) = station_with(scenario, ewt);
            st.wq.value = 20.0;
            st.arrive(&mut cal, ev(0, soc_for(10.0), 80.0, 100.0)).unwrap();
            st.arrive(&mut cal, ev(1, 10.0, 100.0, 100.0)).unwrap();
            st.arrive(&mut cal, ev(2, 10.0, 100.0, 100.0)).unwrap();
            assert_eq!(st.queue().len(), 2);
            assert_abs_diff_eq!(st.estimated_wait(0.0), 50.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn slow_occupant_on_two_ports_leaves_no_wait() {
        for ewt in [EwtOccupancy::Port, EwtOccupancy::FastPhase] {
            let (mut st, mut cal) = station_with(ScenarioKind::Informed2PortCharge, ewt);
            st.arrive(&mut cal, ev(0, soc_for(10.0), 100.0, 100.0)).unwrap();
            let e = step(&mut st, &mut cal);
            assert_eq!(e.kind, EventKind::FastPhaseComplete(PortId(0)));
            assert_eq!(st.charger().port(PortId(0)).state, PortState::Slow);
            assert_eq!(st.estimated_wait(10.0), 0.0);
        }
    }

    #[test]
    fn fast_phase_rule_ignores_slow_occupant_on_single_port() {
        let (mut st, mut cal) = station_with(ScenarioKind::InformedFC, EwtOccupancy::FastPhase);
        st.arrive(&mut cal, ev(0, soc_for(10.0), 100.0, 100.0)).unwrap();
        assert_abs_diff_eq!(st.estimated_wait(0.0), 10.0, epsilon = 1e-12);
        step(&mut st, &mut cal);
        assert_eq!(st.estimated_wait(10.0), 0.0);
    }

    #[test]
    fn slow_occupant_on_single_port_blocks_until_unplugged() {
        let (mut st, mut cal) = station(ScenarioKind::InformedFC);
        st.arrive(&mut cal, ev(0, soc_for(10.0), 100.0, 100.0)).unwrap();
        step(&mut st, &mut cal);
        assert_abs_diff_eq!(st.estimated_wait(10.0), 64.0, epsilon = 1e-12);
        advance(&mut cal, 40.0);
        assert_abs_diff_eq!(st.estimated_wait(40.0), 34.0, epsilon = 1e-12);
    }

    #[test]
    fn full_queue_forces_balk_in_every_scenario() {
        for scenario in ScenarioKind::ALL {
            let (mut st, mut cal) = station(scenario);
            st.arrive(&mut cal, ev(0, 10.0, 100.0, 1e9)).unwrap();
            for i in 1..=5 {
                let id = AgentId(i);
                st.live.insert(id, ev(i, 10.0, 100.0, 1e9));
                st.enqueue(&mut cal, id, 0.0).unwrap();
            }
            assert!(st.queue().is_full());
            let (d, _) = st.admit_decision(&ev(9, 59.0, 100.0, 0.1), 0.0).unwrap();
            assert_eq!(d, Admission::BalkForced, "{scenario}");
            assert_eq!(
                st.arrive(&mut cal, ev(9, 59.0, 100.0, 0.1)).unwrap(),
                Admission::BalkForced
            );
            assert_eq!(st.counters().balked_forced, 1);
        }
    }

    #[test]
    fn blocking_scenario_ignores_patience() {
        let (mut st, mut cal) = station(ScenarioKind::BlockingFC);
        st.arrive(&mut cal, ev(0, 10.0, 100.0, 1.0)).unwrap();
        let (d, awt) = st.admit_decision(&ev(1, 10.0, 100.0, 0.1), 0.0).unwrap();
        assert_eq!((d, awt), (Admission::Join, None));
    }

    #[test]
    fn informed_agent_balks_when_estimate_exceeds_tolerance() {
        let (mut st, mut cal) = station(ScenarioKind::InformedFC);
        st.wq.value = 20.0;
        st.arrive(&mut cal, ev(0, soc_for(10.0), 80.0, 100.0)).unwrap();
        for i in 1..=2 {
            st.live.insert(AgentId(i), ev(i, 10.0, 100.0, 1e9));
            st.enqueue(&mut cal, AgentId(i), 0.0).unwrap();
        }
        // tolerance 0.6 × 56 = 33.6 < 50
        let a = ev(3, 10.0, 100.0, 33.6);
        assert_eq!(st.admit_decision(&a, 0.0).unwrap().0, Admission::BalkVoluntary);
        st.wq.value = 5.0;
        // 10 + 2 × 5 = 20 <= 33.6
        assert_eq!(st.admit_decision(&a, 0.0).unwrap().0, Admission::Join);
    }

    #[test]
    fn observation_uses_user_type_assumption() {
        let (mut st, mut cal) = station(ScenarioKind::ObservationFC);
        st.arrive(&mut cal, ev(0, 10.0, 100.0, 1e9)).unwrap();
        for i in 1..=2 {
            st.live.insert(AgentId(i), ev(i, 10.0, 100.0, 1e9));
            st.enqueue(&mut cal, AgentId(i), 0.0).unwrap();
        }
        let mut p = ev(3, 10.0, 100.0, 36.0);
        p.user_type = UserType::Pessimist;
        assert_eq!(
            st.admit_decision(&p, 0.0).unwrap(),
            (Admission::BalkVoluntary, Some(180.0))
        );
        let mut o = ev(4, 10.0, 100.0, 33.0);
        o.user_type = UserType::Optimist;
        assert_eq!(st.admit_decision(&o, 0.0).unwrap(), (Admission::Join, Some(32.0)));
    }

    #[test]
    fn enqueue_arms_timer_at_patience() {
        let (mut st, mut cal) = station(ScenarioKind::BlockingFC);
        st.arrive(&mut cal, ev(0, 5.0, 100.0, 1e9)).unwrap();
        advance(&mut cal, 2.0);
        st.arrive(&mut cal, ev(1, 10.0, 100.0, 0.6 * 56.0)).unwrap();
        let entry = st.queue().iter().next().copied().unwrap();
        assert_eq!(entry.entry_time, 2.0);
        assert!(cal.is_pending(entry.timer.unwrap()));
        let e = step(&mut st, &mut cal);
        assert_eq!(e.kind, EventKind::PatienceExpiry(AgentId(1)));
        assert_abs_diff_eq!(e.time.minutes(), 35.6, epsilon = 1e-12);
        assert_eq!(st.counters().reneged, 1);
        assert_eq!(st.agent(AgentId(1)).unwrap().disposition, Disposition::Reneged);
    }

    #[test]
    fn queue_positions_follow_entry_order() {
        let mut q = ImpatientQueue::<f64>::new(3);
        for i in 0..3 {
            q.push(QueueEntry {
                agent: AgentId(i),
                entry_time: i as f64,
                timer: None,
            })
            .unwrap();
        }
        assert!(matches!(
            q.push(QueueEntry {
                agent: AgentId(9),
                entry_time: 0.0,
                timer: None
            }),
            Err(StationError::QueueFull(3))
        ));
        assert_eq!(q.position(AgentId(0)), Some(0));
        assert_eq!(q.position(AgentId(1)), Some(1));
        q.remove(AgentId(1)).unwrap();
        assert_eq!(q.position(AgentId(2)), Some(1));
        assert!(q.remove(AgentId(1)).is_none());
    }

    #[test]
    fn mid_queue_renege_advances_followers() {
        let (mut st, mut cal) = station(ScenarioKind::BlockingFC);
        st.arrive(&mut cal, ev(0, 5.0, 100.0, 1e9)).unwrap();
        st.arrive(&mut cal, ev(1, 10.0, 100.0, 50.0)).unwrap();
        st.arrive(&mut cal, ev(2, 10.0, 100.0, 10.0)).unwrap();
        st.arrive(&mut cal, ev(3, 10.0, 100.0, 50.0)).unwrap();
        let e = step(&mut st, &mut cal);
        assert_eq!(
            (e.time.minutes(), e.kind),
            (10.0, EventKind::PatienceExpiry(AgentId(2)))
        );
        let order: Vec<_> = st.queue().iter().map(|e| e.agent).collect();
        assert_eq!(order, vec![AgentId(1), AgentId(3)]);
        assert_eq!(st.queue().position(AgentId(3)), Some(1));
    }

    #[test]
    fn service_before_expiry_cancels_timer() {
        let (mut st, mut cal) = station(ScenarioKind::BlockingFC);
        st.arrive(&mut cal, ev(0, soc_for(10.0), 80.0, 1e9)).unwrap();
        st.arrive(&mut cal, ev(1, 10.0, 100.0, 11.0)).unwrap();
        let timer = st.queue().iter().next().unwrap().timer.unwrap();
        let e = step(&mut st, &mut cal);
        assert_eq!(e.kind, EventKind::FastPhaseComplete(PortId(0)));
        assert!(!cal.is_pending(timer));
        assert_eq!(st.counters().reneged, 0);
        assert_eq!(st.agent(AgentId(1)).unwrap().service_start, Some(10.0));
        while let Some(e) = cal.pop() {
            assert_ne!(e.kind, EventKind::PatienceExpiry(AgentId(1)));
            st.handle(&mut cal, e).unwrap();
        }
    }

    #[test]
    fn whole_queue_reneges_during_long_session() {
        let (mut st, mut cal) = station(ScenarioKind::BlockingFC);
        st.arrive(&mut cal, ev(0, 5.0, 100.0, 1e9)).unwrap();
        for i in 1..=5 {
            st.arrive(&mut cal, ev(i, 10.0, 100.0, 5.0 * i as f64)).unwrap();
        }
        while !st.queue().is_empty() {
            step(&mut st, &mut cal);
        }
        assert_eq!(st.counters().reneged, 5);
        assert_eq!(st.charger().port(PortId(0)).occupant, Some(AgentId(0)));
    }

    #[test]
    fn port_allocation_respects_fast_budget() {
        let mut c = Charger::<f64>::with_ports(2);
        assert_eq!(c.eligible_port(), Some(PortId(0)));
        c.start_fast(PortId(0), AgentId(0), 10.0, 74.0).unwrap();
        assert_eq!(c.eligible_port(), None);
        assert!(c.start_fast(PortId(1), AgentId(1), 10.0, 74.0).is_err());
        c.switch_to_slow(PortId(0)).unwrap();
        assert_eq!(c.eligible_port(), Some(PortId(1)));
        c.start_fast(PortId(1), AgentId(1), 20.0, 84.0).unwrap();
        assert_eq!(c.fast_count(), 1);
        assert_eq!(c.occupied(), 2);
        c.release(PortId(0)).unwrap();
        assert_eq!(c.eligible_port(), None);

        let mut single = Charger::<f64>::with_ports(1);
        single.start_fast(PortId(0), AgentId(0), 10.0, 74.0).unwrap();
        single.switch_to_slow(PortId(0)).unwrap();
        assert_eq!(single.eligible_port(), None);
    }

    #[test]
    fn full_target_adds_slow_phase() {
        let (mut st, mut cal) = station(ScenarioKind::InformedFC);
        st.arrive(&mut cal, ev(0, 10.0, 100.0, 33.6)).unwrap();
        let e = step(&mut st, &mut cal);
        assert_eq!(
            (e.time.minutes(), e.kind),
            (56.0, EventKind::FastPhaseComplete(PortId(0)))
        );
        assert_eq!(st.charger().port(PortId(0)).state, PortState::Slow);
        let e = step(&mut st, &mut cal);
        assert_eq!(
            (e.time.minutes(), e.kind),
            (120.0, EventKind::ChargeComplete(PortId(0)))
        );
        assert_eq!(st.counters().served, 1);
        assert_eq!(st.n_sys(), 0);
    }

    #[test]
    fn knee_target_releases_at_fast_phase_end() {
        let (mut st, mut cal) = station(ScenarioKind::Informed2PortCharge);
        st.arrive(&mut cal, ev(0, 10.0, 80.0, 33.6)).unwrap();
        step(&mut st, &mut cal);
        assert_eq!(st.counters().served, 1);
        assert_eq!(st.charger().port(PortId(0)).state, PortState::Idle);
        assert!(cal.is_empty());
    }

    #[test]
    fn switch_to_slow_starts_next_fast_session() {
        let (mut st, mut cal) = station(ScenarioKind::Informed2PortCharge);
        st.arrive(&mut cal, ev(0, soc_for(10.0), 100.0, 1e9)).unwrap();
        st.arrive(&mut cal, ev(1, 10.0, 100.0, 1e9)).unwrap();
        assert_eq!(st.queue().len(), 1);
        step(&mut st, &mut cal);
        let p = st.charger().ports();
        assert_eq!((p[0].state, p[1].state), (PortState::Slow, PortState::Fast));
        assert_eq!(p[1].occupant, Some(AgentId(1)));
        assert_eq!(st.agent(AgentId(1)).unwrap().service_start, Some(10.0));
        assert!(st.queue().is_empty());
    }

    #[test]
    fn completion_pulls_queue_head() {
        let (mut st, mut cal) = station(ScenarioKind::BlockingFC);
        st.arrive(&mut cal, ev(0, soc_for(10.0), 100.0, 1e9)).unwrap();
        for i in 1..=3 {
            st.arrive(&mut cal, ev(i, 10.0, 100.0, 1e9)).unwrap();
        }
        step(&mut st, &mut cal);
        assert_eq!(st.queue().len(), 3);
        let e = step(&mut st, &mut cal);
        assert_eq!((e.time.minutes(), e.kind), (74.0, EventKind::ChargeComplete(PortId(0))));
        assert_eq!(st.queue().len(), 2);
        assert_eq!(st.charger().port(PortId(0)).occupant, Some(AgentId(1)));
        assert_eq!(st.agent(AgentId(1)).unwrap().service_start, Some(74.0));
    }

    #[test]
    fn cumulative_estimator_is_arithmetic_mean() {
        let mut w = WaitEstimator::new(WqEstimator::Cumulative);
        for x in [10.0, 20.0, 30.0] {
            w.update(x);
        }
        assert_abs_diff_eq!(w.value, 20.0, epsilon = 1e-12);
        let mut e = WaitEstimator::new(WqEstimator::Ewma(0.5));
        for x in [10.0, 20.0] {
            e.update(x);
        }
        assert_abs_diff_eq!(e.value, 12.5, epsilon = 1e-12);
    }

    #[test]
    fn estimator_tracks_served_waits() {
        let (mut st, mut cal) = station(ScenarioKind::BlockingFC);
        for i in 0..4 {
            st.arrive(&mut cal, ev(i, soc_for(10.0), 80.0, 1e9)).unwrap();
        }
        while !cal.is_empty() {
            step(&mut st, &mut cal);
        }
        // waits 0, 10, 20, 30
        assert_abs_diff_eq!(st.wq_estimate(), 15.0, epsilon = 1e-12);
        assert_eq!(st.counters().served, 4);
    }

    #[test]
    fn short_run_conserves_agents() {
        for scenario in ScenarioKind::ALL {
            let mut cfg = StationConfig::new(scenario, 0.6, 1019.0);
            cfg.record_trace = true;
            let out = Station::new(cfg, ChargingProfile::default(), AgentConfig::default(), 3, 1)
                .run()
                .unwrap();
            assert!(out.counters.conserved(), "{scenario}: {:?}", out.counters);
            assert_eq!(out.agents.len() as u64, out.counters.arrivals);
            assert!(out.agents.iter().all(|a| a.disposition != Disposition::Pending));
            assert!(out.max_fast_ports <= 1);
            assert!(out.max_queue_len <= 5);
            assert_eq!(out.end_time, 1019.0);
            assert_eq!(out.trace.last().unwrap().kind, "end_of_horizon");
            assert_eq!(
                out.calendar.pending + out.calendar.dispatched + out.calendar.cancelled,
                out.calendar.scheduled
            );
        }
    }

    #[test]
    fn scenario_names_parse() {
        for s in ScenarioKind::ALL {
            assert_eq!(s.name().to_lowercase().parse::<ScenarioKind>().unwrap(), s);
        }
        assert!("nope".parse::<ScenarioKind>().is_err());
    }
}
