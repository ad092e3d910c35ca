//! Domain types shared by the policy, the simulator and the oracles.
//!
//! Class indices are 0-based in code. The priority of a new call of the class
//! at index `i` is `i + 1`; handovers of every class share priority 0.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Absolute tolerance for bandwidth comparisons, in kbps.
pub const BANDWIDTH_TOLERANCE: f64 = 1e-6;

/// Relative tolerance for the floor/degradation-factor consistency check.
pub const FLOOR_REL_TOLERANCE: f64 = 1e-9;

/// Index of a traffic class (0-based position in the policy matrix).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub usize);

impl ClassId {
    /// 1-based class number `m`.
    pub fn number(self) -> usize {
        self.0 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CallId(pub u64);

impl fmt::Display for CallId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Admission priority of a request. 0 is the highest (handover of any class),
/// `M` the lowest (new call of the last class).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestPriority(usize);

impl RequestPriority {
    pub const HANDOVER: RequestPriority = RequestPriority(0);

    pub fn handover() -> Self {
        Self::HANDOVER
    }

    /// Priority of a new call of `class`.
    pub fn new_call(class: ClassId) -> Self {
        RequestPriority(class.number())
    }

    /// Raw priority level; fails if it exceeds the number of classes.
    pub fn from_level(level: usize, num_classes: usize) -> Option<Self> {
        (level <= num_classes).then_some(RequestPriority(level))
    }

    pub fn level(self) -> usize {
        self.0
    }
}

/// Static parameters of one traffic class.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficClass {
    pub name: String,
    /// Requested bandwidth per call, kbps.
    pub requested_kbps: f64,
    /// Degradation factors indexed by request priority `p = 0..=M`.
    pub gamma: Vec<f64>,
    /// Relative share of new-call arrivals.
    pub arrival_weight: f64,
    /// Mean call duration at full allocation, seconds.
    pub mean_duration: f64,
    /// Whether the call is a fixed data volume whose duration stretches when degraded.
    pub elastic: bool,
}

impl TrafficClass {
    /// Builds a class whose degradation row follows `gamma[p] = decay * gamma[p - 1]`.
    pub fn with_decay(
        name: impl Into<String>,
        requested_kbps: f64,
        gamma0: f64,
        decay: f64,
        num_classes: usize,
        arrival_weight: f64,
        mean_duration: f64,
        elastic: bool,
    ) -> Self {
        TrafficClass {
            name: name.into(),
            requested_kbps,
            gamma: gamma_row(gamma0, decay, num_classes),
            arrival_weight,
            mean_duration,
            elastic,
        }
    }

    pub fn floor(&self, p: RequestPriority) -> f64 {
        (1.0 - self.gamma[p.level()]) * self.requested_kbps
    }
}

/// `gamma[0] = gamma0`, `gamma[p] = decay * gamma[p - 1]` for `p = 1..=num_classes`.
pub fn gamma_row(gamma0: f64, decay: f64, num_classes: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(num_classes + 1);
    let mut g = gamma0;
    for _ in 0..=num_classes {
        row.push(g);
        g *= decay;
    }
    row
}

/// The full degradation matrix plus the cached floors `C_{m,p}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyMatrix {
    classes: Vec<TrafficClass>,
    floors: Vec<Vec<f64>>,
}

impl PolicyMatrix {
    /// Builds the matrix and derives the floors. Does not validate; see [`validate_matrix`].
    pub fn new(classes: Vec<TrafficClass>) -> Self {
        let floors = classes
            .iter()
            .map(|c| c.gamma.iter().map(|g| (1.0 - g) * c.requested_kbps).collect())
            .collect();
        PolicyMatrix { classes, floors }
    }

    /// The four-class configuration used throughout the analysis: voice, web
    /// browsing, streaming video and background traffic.
    pub fn reference() -> Self {
        PolicyMatrix::new(default_classes())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[TrafficClass] {
        &self.classes
    }

    pub fn class(&self, id: ClassId) -> &TrafficClass {
        &self.classes[id.0]
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> {
        (0..self.classes.len()).map(ClassId)
    }

    pub fn requested(&self, id: ClassId) -> f64 {
        self.classes[id.0].requested_kbps
    }

    pub fn gamma(&self, id: ClassId, p: RequestPriority) -> f64 {
        self.classes[id.0].gamma[p.level()]
    }

    /// Minimum allocation of a class-`id` call when admitting a priority-`p` request.
    pub fn floor(&self, id: ClassId, p: RequestPriority) -> f64 {
        self.floors[id.0][p.level()]
    }

    /// Lowest floor any policy action may push a class-`id` call to.
    pub fn absolute_floor(&self, id: ClassId) -> f64 {
        self.floor(id, RequestPriority::HANDOVER)
    }

    pub fn floors(&self) -> &[Vec<f64>] {
        &self.floors
    }

    /// Replaces every degradation factor through `f(class, p, gamma)` and
    /// recomputes the floors.
    pub fn map_gamma(&self, mut f: impl FnMut(ClassId, usize, f64) -> f64) -> PolicyMatrix {
        let classes = self
            .classes
            .iter()
            .enumerate()
            .map(|(m, c)| TrafficClass {
                gamma: c.gamma.iter().enumerate().map(|(p, &g)| f(ClassId(m), p, g)).collect(),
                ..c.clone()
            })
            .collect();
        PolicyMatrix::new(classes)
    }
}

/// Reference four-class configuration with the 3:3:1:2 arrival mix and 120 s
/// mean undegraded duration.
pub fn default_classes() -> Vec<TrafficClass> {
    const M: usize = 4;
    vec![
        TrafficClass::with_decay("voice", 32.0, 0.0, 0.95, M, 3.0, 120.0, false),
        TrafficClass::with_decay("web", 120.0, 0.6, 0.95, M, 3.0, 120.0, true),
        TrafficClass::with_decay("video", 256.0, 0.7, 0.95, M, 1.0, 120.0, true),
        TrafficClass::with_decay("background", 60.0, 0.8, 0.95, M, 2.0, 120.0, true),
    ]
}

/// First rule a policy matrix breaks. Class numbers are 1-based.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum MatrixViolation {
    #[error("policy matrix has no classes")]
    Empty,
    #[error("class {class}: requested bandwidth must be positive, got {value}")]
    NonPositiveBandwidth { class: usize, value: f64 },
    #[error("class {class}: mean duration must be positive, got {value}")]
    NonPositiveDuration { class: usize, value: f64 },
    #[error("class {class}: arrival weight must be non-negative, got {value}")]
    NegativeWeight { class: usize, value: f64 },
    #[error("class {class}: expected {expected} degradation factors, got {got}")]
    RowLength { class: usize, expected: usize, got: usize },
    #[error("gamma({class},{priority}) = {value} outside [0, 1)")]
    OutOfRange { class: usize, priority: usize, value: f64 },
    #[error("gamma({class},{priority}) = {value} exceeds the previous factor {prev_value}")]
    Ordering { class: usize, priority: usize, value: f64, prev_value: f64 },
    #[error("class {class} is not elastic but gamma({class},{priority}) = {value} is non-zero")]
    InelasticDegradation { class: usize, priority: usize, value: f64 },
    #[error("floor C({class},{priority}) = {floor} inconsistent with its degradation factor")]
    FloorMismatch { class: usize, priority: usize, floor: f64 },
}

impl MatrixViolation {
    /// Offending `(m, p)` pair, when the violation concerns a single entry.
    pub fn entry(&self) -> Option<(usize, usize)> {
        match *self {
            MatrixViolation::OutOfRange { class, priority, .. }
            | MatrixViolation::Ordering { class, priority, .. }
            | MatrixViolation::InelasticDegradation { class, priority, .. }
            | MatrixViolation::FloorMismatch { class, priority, .. } => Some((class, priority)),
            _ => None,
        }
    }
}

/// Checks every row against `1 > gamma(m,0) >= gamma(m,1) >= ... >= gamma(m,M) >= 0`
/// and the floors against their definition. Reports the first offending entry.
pub fn validate_matrix(matrix: &PolicyMatrix) -> Result<(), MatrixViolation> {
    let num = matrix.num_classes();
    if num == 0 {
        return Err(MatrixViolation::Empty);
    }
    for (i, c) in matrix.classes.iter().enumerate() {
        let class = i + 1;
        if !(c.requested_kbps > 0.0) || !c.requested_kbps.is_finite() {
            return Err(MatrixViolation::NonPositiveBandwidth { class, value: c.requested_kbps });
        }
        if !(c.mean_duration > 0.0) || !c.mean_duration.is_finite() {
            return Err(MatrixViolation::NonPositiveDuration { class, value: c.mean_duration });
        }
        if !(c.arrival_weight >= 0.0) || !c.arrival_weight.is_finite() {
            return Err(MatrixViolation::NegativeWeight { class, value: c.arrival_weight });
        }
        if c.gamma.len() != num + 1 {
            return Err(MatrixViolation::RowLength { class, expected: num + 1, got: c.gamma.len() });
        }
        for (p, &g) in c.gamma.iter().enumerate() {
            if !(0.0..1.0).contains(&g) {
                return Err(MatrixViolation::OutOfRange { class, priority: p, value: g });
            }
            if p > 0 && g > c.gamma[p - 1] {
                return Err(MatrixViolation::Ordering {
                    class,
                    priority: p,
                    value: g,
                    prev_value: c.gamma[p - 1],
                });
            }
            if !c.elastic && g != 0.0 {
                return Err(MatrixViolation::InelasticDegradation { class, priority: p, value: g });
            }
            let floor = matrix.floors[i][p];
            let implied = (c.requested_kbps - floor) / c.requested_kbps;
            let floor_ok = floor <= c.requested_kbps
                && (p == 0 || floor >= matrix.floors[i][p - 1])
                && (implied - g).abs() <= FLOOR_REL_TOLERANCE * g.abs().max(1.0);
            if !floor_ok {
                return Err(MatrixViolation::FloorMismatch { class, priority: p, floor });
            }
        }
    }
    Ok(())
}

/// Whether a call entered the cell as a fresh request or as a handover.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    New,
    Handover,
}

/// Outstanding service of a live call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Service {
    /// Elastic calls carry a data volume in kbit, drained at the allocated rate.
    Work(f64),
    /// Non-elastic calls hold for a fixed time in seconds.
    Time(f64),
}

/// A call currently holding bandwidth in the cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Call {
    pub id: CallId,
    pub class: ClassId,
    /// Current allocation `C_{m,a}`, kbps.
    pub allocation: f64,
    pub service: Service,
    pub origin: Origin,
    /// Id of the new call this lineage started from.
    pub root: CallId,
    pub admitted_at: f64,
}

impl Call {
    /// Seconds until completion if the allocation stays unchanged.
    pub fn time_to_completion(&self) -> f64 {
        match self.service {
            Service::Work(w) => w / self.allocation,
            Service::Time(t) => t,
        }
    }
}

/// Degradation `(C_{m,r} - C_{m,a}) / C_{m,r}` of a live call.
pub fn degradation_of(call: &Call, matrix: &PolicyMatrix) -> f64 {
    let requested = matrix.requested(call.class);
    (requested - call.allocation) / requested
}

/// Allocation corresponding to a degradation fraction.
pub fn allocation_for(class: ClassId, degradation: f64, matrix: &PolicyMatrix) -> f64 {
    (1.0 - degradation) * matrix.requested(class)
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum StateViolation {
    #[error("cached allocation {cached} differs from the sum of live allocations {actual}")]
    StaleTotal { cached: f64, actual: f64 },
    #[error("allocated {allocated} kbps exceeds capacity {capacity} kbps")]
    OverCapacity { allocated: f64, capacity: f64 },
    #[error("call {id} holds {allocation} kbps outside [{floor}, {requested}]")]
    AllocationOutOfBounds { id: CallId, allocation: f64, floor: f64, requested: f64 },
    #[error("call {id} has negative remaining service")]
    NegativeService { id: CallId },
}

/// The cell: its capacity and the calls currently holding bandwidth.
#[derive(Clone, Debug)]
pub struct CellState {
    capacity: f64,
    calls: BTreeMap<CallId, Call>,
    allocated: f64,
}

impl CellState {
    pub fn new(capacity_kbps: f64) -> Self {
        CellState { capacity: capacity_kbps, calls: BTreeMap::new(), allocated: 0.0 }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn allocated(&self) -> f64 {
        self.allocated
    }

    pub fn free(&self) -> f64 {
        (self.capacity - self.allocated).max(0.0)
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    /// Live calls in ascending id order.
    pub fn calls(&self) -> impl Iterator<Item = &Call> {
        self.calls.values()
    }

    pub fn calls_mut(&mut self) -> impl Iterator<Item = &mut Call> {
        self.calls.values_mut()
    }

    pub fn get(&self, id: CallId) -> Option<&Call> {
        self.calls.get(&id)
    }

    pub fn contains(&self, id: CallId) -> bool {
        self.calls.contains_key(&id)
    }

    pub fn insert(&mut self, call: Call) {
        self.allocated += call.allocation;
        if let Some(old) = self.calls.insert(call.id, call) {
            self.allocated -= old.allocation;
        }
    }

    pub fn remove(&mut self, id: CallId) -> Option<Call> {
        let call = self.calls.remove(&id)?;
        self.allocated -= call.allocation;
        if self.calls.is_empty() {
            self.allocated = 0.0;
        }
        Some(call)
    }

    /// Changes one call's allocation and returns the previous value.
    pub fn set_allocation(&mut self, id: CallId, allocation: f64) -> Option<f64> {
        let call = self.calls.get_mut(&id)?;
        let old = call.allocation;
        call.allocation = allocation;
        self.allocated += allocation - old;
        Some(old)
    }

    /// Recomputes the cached total from scratch.
    pub fn resync(&mut self) {
        self.allocated = self.calls.values().map(|c| c.allocation).sum();
    }

    /// Checks the cached total, the capacity bound and every call's bounds.
    pub fn check(&self, matrix: &PolicyMatrix) -> Result<(), StateViolation> {
        let actual: f64 = self.calls.values().map(|c| c.allocation).sum();
        if (actual - self.allocated).abs() > BANDWIDTH_TOLERANCE {
            return Err(StateViolation::StaleTotal { cached: self.allocated, actual });
        }
        if actual > self.capacity + BANDWIDTH_TOLERANCE {
            return Err(StateViolation::OverCapacity { allocated: actual, capacity: self.capacity });
        }
        for call in self.calls.values() {
            let floor = matrix.absolute_floor(call.class);
            let requested = matrix.requested(call.class);
            if call.allocation <= 0.0
                || call.allocation < floor - BANDWIDTH_TOLERANCE
                || call.allocation > requested + BANDWIDTH_TOLERANCE
            {
                return Err(StateViolation::AllocationOutOfBounds {
                    id: call.id,
                    allocation: call.allocation,
                    floor,
                    requested,
                });
            }
            let remaining = match call.service {
                Service::Work(w) => w,
                Service::Time(t) => t,
            };
            if remaining < 0.0 {
                return Err(StateViolation::NegativeService { id: call.id });
            }
        }
        Ok(())
    }
}
