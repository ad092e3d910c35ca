//! Seeded discrete-event simulator of one statistically homogeneous cell.
//!
//! New calls arrive as a Poisson stream split across classes by weight.
//! Elastic calls carry an exponentially distributed data volume with mean
//! `C_{m,r} * mean_duration`, drained at their current allocation, so a call
//! degraded to a fraction of its request lasts proportionally longer.
//! Non-elastic calls hold for an exponential time. Each call also gets an
//! exponential dwell time. When it expires the call hands off out of the cell
//! and the call that handed off before it hands off in, as a priority-0
//! request carrying its remaining service. The cell thus stands in for its
//! statistically identical neighbours: every outgoing handover is matched by
//! an incoming one, but the incoming call is a different call, so it cannot
//! simply reclaim the bandwidth that was just released.
//!
//! Completion events are invalidated lazily: every allocation change bumps the
//! call's version and schedules a fresh completion, and events carrying an old
//! version are skipped when popped.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::metrics::{finalize, BatchCounters, Diagnostics, EventOutcome, Recorder, RunMetrics, MIN_BATCHES};
use crate::model::{
    default_classes, Call, CallId, CellState, ClassId, MatrixViolation, Origin, PolicyMatrix,
    RequestPriority, Service, TrafficClass, BANDWIDTH_TOLERANCE,
};
use crate::policy::{admit, prepare, restore_on_departure, Outcome, Reallocation, Rejection, SchemeKind};

/// Relative tolerance for delivered versus drawn work of an elastic call.
pub const WORK_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub capacity_kbps: f64,
    /// Class parameters; their `arrival_weight`s form the class mix.
    pub classes: Vec<TrafficClass>,
    /// Total new-call arrival rate, calls per second.
    pub lambda: f64,
    /// Mean cell dwell time in seconds; `None` disables handovers.
    pub mean_dwell: Option<f64>,
    pub scheme: SchemeKind,
    pub sim_duration: f64,
    pub warmup: f64,
    pub seed: u64,
    pub batches: usize,
    /// Check cell invariants after every event and count violations.
    pub check_invariants: bool,
}

impl ScenarioConfig {
    /// 6 Mbps cell, four reference classes mixed 3:3:1:2, 120 s calls, 240 s dwell.
    pub fn reference() -> Self {
        ScenarioConfig {
            capacity_kbps: 6000.0,
            classes: default_classes(),
            lambda: 0.5,
            mean_dwell: Some(240.0),
            scheme: SchemeKind::ProposedPriorityMultilevel,
            sim_duration: 100_000.0,
            warmup: 5_000.0,
            seed: 1,
            batches: 20,
            check_invariants: false,
        }
    }

    /// Validates the scenario and returns the matrix after applying the scheme.
    pub fn prepare(&self) -> Result<PolicyMatrix, ScenarioError> {
        if !(self.capacity_kbps > 0.0 && self.capacity_kbps.is_finite()) {
            return Err(ScenarioError::Capacity(self.capacity_kbps));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ScenarioError::ArrivalRate(self.lambda));
        }
        if let Some(d) = self.mean_dwell {
            if !(d > 0.0) {
                return Err(ScenarioError::Dwell(d));
            }
        }
        if !(self.warmup >= 0.0 && self.sim_duration > self.warmup && self.sim_duration.is_finite()) {
            return Err(ScenarioError::Horizon { warmup: self.warmup, duration: self.sim_duration });
        }
        if self.batches < MIN_BATCHES {
            return Err(ScenarioError::Batches(self.batches));
        }
        let matrix = prepare(&PolicyMatrix::new(self.classes.clone()), self.scheme)?;
        let mix: f64 = self.classes.iter().map(|c| c.arrival_weight).sum();
        if !(mix > 0.0) {
            return Err(ScenarioError::ClassMix);
        }
        Ok(matrix)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ScenarioError {
    #[error("capacity must be positive, got {0}")]
    Capacity(f64),
    #[error("arrival rate must be positive, got {0}")]
    ArrivalRate(f64),
    #[error("mean dwell time must be positive, got {0}")]
    Dwell(f64),
    #[error("need 0 <= warmup ({warmup}) < duration ({duration})")]
    Horizon { warmup: f64, duration: f64 },
    #[error("need at least {MIN_BATCHES} batches, got {0}")]
    Batches(usize),
    #[error("class mix weights must sum to a positive value")]
    ClassMix,
    #[error(transparent)]
    Matrix(#[from] MatrixViolation),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    NewArrival,
    Completion { call: CallId, version: u64 },
    DwellExpiry { call: CallId },
}

#[derive(Clone, Copy, Debug)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so that `BinaryHeap` pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One processed event, for reproducibility checks.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: EventKind,
    pub allocated: f64,
    pub live_calls: usize,
}

/// Advances a call's outstanding service by `dt` seconds at its current allocation.
pub fn service_dynamics(call: &Call, dt: f64) -> Call {
    let mut next = call.clone();
    drain(&mut next, dt);
    next
}

fn drain(call: &mut Call, dt: f64) {
    call.service = match call.service {
        Service::Work(w) => Service::Work((w - call.allocation * dt).max(0.0)),
        Service::Time(t) => Service::Time((t - dt).max(0.0)),
    };
}

struct Lineage {
    root_admitted_at: f64,
    drawn_work: f64,
    delivered: f64,
}

struct Streams {
    arrivals: ChaCha8Rng,
    class: ChaCha8Rng,
    work: ChaCha8Rng,
    dwell: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Streams { arrivals: stream(0), class: stream(1), work: stream(2), dwell: stream(3) }
    }
}

fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    Exp1.sample(rng)
}

struct Simulator<'a> {
    cfg: &'a ScenarioConfig,
    matrix: PolicyMatrix,
    state: CellState,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    next_id: u64,
    versions: HashMap<CallId, u64>,
    lineages: HashMap<CallId, Lineage>,
    streams: Streams,
    mix: WeightedIndex<f64>,
    recorder: Recorder,
    diag: Diagnostics,
    warned: Vec<bool>,
    trace: Option<Vec<TraceRecord>>,
    /// Call that handed off out of the cell and waits to hand off back in.
    in_transit: Option<Call>,
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a ScenarioConfig, matrix: PolicyMatrix, trace: bool) -> Self {
        let m = matrix.num_classes();
        let mix = WeightedIndex::new(cfg.classes.iter().map(|c| c.arrival_weight))
            .expect("class mix validated");
        Simulator {
            cfg,
            state: CellState::new(cfg.capacity_kbps),
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            next_id: 0,
            versions: HashMap::new(),
            lineages: HashMap::new(),
            streams: Streams::new(cfg.seed),
            mix,
            recorder: Recorder::new(m, cfg.capacity_kbps, cfg.warmup, cfg.sim_duration, cfg.batches),
            diag: Diagnostics {
                min_allocation: matrix.classes().iter().map(|c| c.requested_kbps).collect(),
                min_degraded_to: vec![vec![None; m + 1]; m],
                ..Diagnostics::default()
            },
            warned: vec![false; m],
            trace: trace.then(Vec::new),
            in_transit: None,
            matrix,
        }
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event { time, seq: self.seq, kind });
    }

    fn is_stale(&self, kind: &EventKind) -> bool {
        match *kind {
            EventKind::NewArrival => false,
            EventKind::Completion { call, version } => self.versions.get(&call) != Some(&version),
            EventKind::DwellExpiry { call } => !self.state.contains(call),
        }
    }

    fn run(mut self) -> (Vec<BatchCounters>, Diagnostics, Option<Vec<TraceRecord>>) {
        let first = exp1(&mut self.streams.arrivals) / self.cfg.lambda;
        self.schedule(first, EventKind::NewArrival);
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.cfg.sim_duration {
                break;
            }
            if self.is_stale(&ev.kind) {
                continue;
            }
            self.advance_to(ev.time);
            match ev.kind {
                EventKind::NewArrival => self.on_arrival(),
                EventKind::Completion { call, .. } => self.on_completion(call),
                EventKind::DwellExpiry { call } => self.on_dwell_expiry(call),
            }
            self.diag.events += 1;
            if self.cfg.check_invariants {
                if let Err(e) = self.state.check(&self.matrix) {
                    self.violation(e.to_string());
                }
            }
            if let Some(trace) = &mut self.trace {
                trace.push(TraceRecord {
                    time: ev.time,
                    kind: ev.kind,
                    allocated: self.state.allocated(),
                    live_calls: self.state.len(),
                });
            }
            self.compact_queue();
        }
        self.advance_to(self.cfg.sim_duration);
        (self.recorder.into_batches(), self.diag, self.trace)
    }

    fn violation(&mut self, what: String) {
        self.diag.invariant_violations += 1;
        if self.diag.first_violation.is_none() {
            self.diag.first_violation = Some(format!("t={}: {what}", self.now));
        }
    }

    fn compact_queue(&mut self) {
        if self.queue.len() > 4096 && self.queue.len() > 8 * (self.state.len() + 2) {
            let queue = std::mem::take(&mut self.queue);
            self.queue = queue.into_iter().filter(|e| !self.is_stale(&e.kind)).collect();
        }
    }

    fn advance_to(&mut self, t: f64) {
        let dt = t - self.now;
        if dt <= 0.0 {
            return;
        }
        self.recorder.advance(self.now, t, &self.state);
        for call in self.state.calls_mut() {
            if let Service::Work(_) = call.service {
                if let Some(l) = self.lineages.get_mut(&call.root) {
                    l.delivered += call.allocation * dt;
                }
            }
            drain(call, dt);
        }
        self.now = t;
    }

    fn schedule_completion(&mut self, id: CallId) {
        let Some(call) = self.state.get(id) else { return };
        let at = self.now + call.time_to_completion();
        let version = self.versions.entry(id).and_modify(|v| *v += 1).or_insert(0);
        let version = *version;
        self.schedule(at, EventKind::Completion { call: id, version });
    }

    fn apply_reallocations(&mut self, changes: &[Reallocation], priority: Option<RequestPriority>) {
        for r in changes {
            let Some(call) = self.state.get(r.call) else { continue };
            let class = call.class;
            let elastic = matches!(call.service, Service::Work(_));
            if let Some(p) = priority {
                let floor = self.matrix.floor(class, p);
                if self.cfg.check_invariants && r.new < floor - BANDWIDTH_TOLERANCE {
                    self.violation(format!("call {} degraded to {} below floor {floor}", r.call, r.new));
                }
                let slot = &mut self.diag.min_degraded_to[class.0][p.level()];
                *slot = Some(slot.map_or(r.new, |v| v.min(r.new)));
                let min = &mut self.diag.min_allocation[class.0];
                *min = min.min(r.new);
            }
            if elastic {
                self.schedule_completion(r.call);
            }
        }
    }

    fn draw_dwell(&mut self) -> Option<f64> {
        self.cfg.mean_dwell.map(|d| exp1(&mut self.streams.dwell) * d)
    }

    fn on_arrival(&mut self) {
        let next = self.now + exp1(&mut self.streams.arrivals) / self.cfg.lambda;
        self.schedule(next, EventKind::NewArrival);

        let class = ClassId(self.mix.sample(&mut self.streams.class));
        let spec = self.matrix.class(class);
        let x = exp1(&mut self.streams.work);
        let service = if spec.elastic {
            Service::Work(x * spec.requested_kbps * spec.mean_duration)
        } else {
            Service::Time(x * spec.mean_duration)
        };
        let dwell = self.draw_dwell();

        let id = CallId(self.next_id);
        self.next_id += 1;
        let candidate = Call {
            id,
            class,
            allocation: 0.0,
            service,
            origin: Origin::New,
            root: id,
            admitted_at: self.now,
        };
        let p = RequestPriority::new_call(class);
        let decision = admit(&mut self.state, candidate, p, &self.matrix);
        match decision.outcome {
            Outcome::Admitted { granted } => {
                self.recorder.record(self.now, EventOutcome::NewAdmitted { class });
                let drawn_work = match service {
                    Service::Work(w) => w,
                    Service::Time(_) => 0.0,
                };
                self.lineages
                    .insert(id, Lineage { root_admitted_at: self.now, drawn_work, delivered: 0.0 });
                self.on_admitted(id, class, granted, &decision.degradations, p, dwell);
            }
            Outcome::Rejected(reason) => {
                self.warn_oversized(class, reason);
                self.recorder.record(self.now, EventOutcome::NewBlocked { class });
            }
        }
    }

    fn on_admitted(
        &mut self,
        id: CallId,
        class: ClassId,
        granted: f64,
        degradations: &[Reallocation],
        p: RequestPriority,
        dwell: Option<f64>,
    ) {
        self.apply_reallocations(degradations, Some(p));
        let min = &mut self.diag.min_allocation[class.0];
        *min = min.min(granted);
        self.schedule_completion(id);
        if let Some(d) = dwell {
            self.schedule(self.now + d, EventKind::DwellExpiry { call: id });
        }
    }

    fn warn_oversized(&mut self, class: ClassId, reason: Rejection) {
        if reason == Rejection::ExceedsCapacity && !self.warned[class.0] {
            self.warned[class.0] = true;
            warn!(
                "class '{}' requests {} kbps, more than the cell capacity {} kbps; every request is rejected",
                self.matrix.class(class).name,
                self.matrix.requested(class),
                self.cfg.capacity_kbps
            );
        }
    }

    /// Removes a call and hands its bandwidth back to degraded calls.
    fn depart(&mut self, id: CallId) -> Option<Call> {
        let call = self.state.remove(id)?;
        self.versions.remove(&id);
        let changes = restore_on_departure(&mut self.state, call.allocation, &self.matrix);
        self.apply_reallocations(&changes, None);
        Some(call)
    }

    fn on_completion(&mut self, id: CallId) {
        let Some(call) = self.depart(id) else { return };
        if let Some(l) = self.lineages.remove(&call.root) {
            if l.drawn_work > 0.0 {
                let err = (l.delivered - l.drawn_work).abs() / l.drawn_work;
                self.diag.max_work_error = self.diag.max_work_error.max(err);
                if self.cfg.check_invariants && err > WORK_TOLERANCE {
                    self.violation(format!("call {id} delivered {} of {} kbit", l.delivered, l.drawn_work));
                }
            }
        }
        self.recorder.record(self.now, EventOutcome::Completed { class: call.class });
    }

    fn on_dwell_expiry(&mut self, id: CallId) {
        let Some(outgoing) = self.depart(id) else { return };
        if let Some(incoming) = self.in_transit.replace(outgoing) {
            self.handover_in(incoming);
        }
    }

    fn handover_in(&mut self, call: Call) {
        let class = call.class;
        let new_id = CallId(self.next_id);
        self.next_id += 1;
        let candidate = Call {
            id: new_id,
            allocation: 0.0,
            origin: Origin::Handover,
            admitted_at: self.now,
            ..call
        };
        let p = RequestPriority::handover();
        let decision = admit(&mut self.state, candidate, p, &self.matrix);
        match decision.outcome {
            Outcome::Admitted { granted } => {
                self.recorder.record(self.now, EventOutcome::HandoverAdmitted { class });
                let dwell = self.draw_dwell();
                self.on_admitted(new_id, class, granted, &decision.degradations, p, dwell);
            }
            Outcome::Rejected(reason) => {
                self.warn_oversized(class, reason);
                let root_admitted_at =
                    self.lineages.remove(&call.root).map_or(f64::NEG_INFINITY, |l| l.root_admitted_at);
                self.recorder.record(self.now, EventOutcome::HandoverDropped { class, root_admitted_at });
            }
        }
    }
}

/// Raw per-batch observations plus diagnostics, before estimation.
#[derive(Clone, Debug)]
pub struct RawRun {
    pub batches: Vec<BatchCounters>,
    pub diagnostics: Diagnostics,
}

/// Simulates `[0, sim_duration]` and returns the raw batches.
pub fn run_raw(config: &ScenarioConfig) -> Result<RawRun, ScenarioError> {
    let matrix = config.prepare()?;
    let (batches, diagnostics, _) = Simulator::new(config, matrix, false).run();
    Ok(RawRun { batches, diagnostics })
}

/// Simulates one scenario. Equal configurations give bit-identical results.
pub fn run(config: &ScenarioConfig) -> Result<RunMetrics, ScenarioError> {
    let raw = run_raw(config)?;
    Ok(finalize(&raw.batches, &config.class_names(), raw.diagnostics)
        .expect("batch count validated"))
}

/// Like [`run`], also returning one record per processed event.
pub fn run_traced(config: &ScenarioConfig) -> Result<(RunMetrics, Vec<TraceRecord>), ScenarioError> {
    let matrix = config.prepare()?;
    let (batches, diagnostics, trace) = Simulator::new(config, matrix, true).run();
    let metrics =
        finalize(&batches, &config.class_names(), diagnostics).expect("batch count validated");
    Ok((metrics, trace.unwrap_or_default()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn web(allocation: f64, work: f64) -> Call {
        Call {
            id: CallId(0),
            class: ClassId(1),
            allocation,
            service: Service::Work(work),
            origin: Origin::New,
            root: CallId(0),
            admitted_at: 0.0,
        }
    }

    #[test]
    fn full_rate_mean_work_takes_mean_duration() {
        let c = web(120.0, 14_400.0);
        assert_eq!(c.time_to_completion(), 120.0);
        assert_eq!(service_dynamics(&c, 120.0).service, Service::Work(0.0));
    }

    #[test]
    fn half_rate_doubles_duration() {
        let c = web(60.0, 14_400.0);
        assert_eq!(c.time_to_completion(), 240.0);
        assert_eq!(service_dynamics(&c, 120.0).service, Service::Work(7_200.0));
    }

    #[test]
    fn voice_duration_ignores_allocation() {
        let mut c = web(32.0, 0.0);
        c.class = ClassId(0);
        c.service = Service::Time(90.0);
        assert_eq!(service_dynamics(&c, 30.0).service, Service::Time(60.0));
        c.allocation = 1.0;
        assert_eq!(service_dynamics(&c, 30.0).service, Service::Time(60.0));
    }

    #[test]
    fn events_pop_in_time_then_sequence_order() {
        let mut q = BinaryHeap::new();
        q.push(Event { time: 2.0, seq: 1, kind: EventKind::NewArrival });
        q.push(Event { time: 1.0, seq: 3, kind: EventKind::NewArrival });
        q.push(Event { time: 1.0, seq: 2, kind: EventKind::NewArrival });
        let order: Vec<u64> = std::iter::from_fn(|| q.pop()).map(|e| e.seq).collect();
        assert_eq!(order, vec![2, 3, 1]);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut c = ScenarioConfig::reference();
        c.lambda = 0.0;
        assert!(matches!(c.prepare(), Err(ScenarioError::ArrivalRate(_))));
        let mut c = ScenarioConfig::reference();
        c.warmup = c.sim_duration;
        assert!(matches!(c.prepare(), Err(ScenarioError::Horizon { .. })));
        let mut c = ScenarioConfig::reference();
        c.classes.iter_mut().for_each(|k| k.arrival_weight = 0.0);
        assert_eq!(c.prepare(), Err(ScenarioError::ClassMix));
        let mut c = ScenarioConfig::reference();
        c.classes[1].gamma[2] = 0.9;
        assert!(matches!(c.prepare(), Err(ScenarioError::Matrix(_))));
    }

    #[test]
    fn short_run_is_clean() {
        let mut c = ScenarioConfig::reference();
        c.sim_duration = 5_000.0;
        c.warmup = 500.0;
        c.lambda = 1.0;
        c.check_invariants = true;
        let m = run(&c).unwrap();
        assert_eq!(m.diagnostics.invariant_violations, 0, "{:?}", m.diagnostics.first_violation);
        assert!(m.diagnostics.events > 1000);
        assert!(m.diagnostics.max_work_error <= WORK_TOLERANCE);
    }
}
