//! Priority-based multi-level admission and bandwidth adaptation.
//!
//! A request of priority `p` may push every existing call of class `m` down to
//! its floor `C_{m,p} = (1 - gamma(m,p)) * C_{m,r}`. Floors rise as priority
//! drops, so handovers (p = 0) can reclaim the most bandwidth and new calls of
//! the last class the least. The bandwidth between the two floors stays
//! reserved for higher priority requests.

use std::fmt;
use std::str::FromStr;

use crate::model::{
    validate_matrix, Call, CallId, CellState, ClassId, MatrixViolation, PolicyMatrix,
    RequestPriority, BANDWIDTH_TOLERANCE,
};

/// One allocation change applied to an existing call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reallocation {
    pub call: CallId,
    pub old: f64,
    pub new: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejection {
    /// Free bandwidth plus releasable headroom is below the requester's own floor.
    InsufficientBandwidth,
    /// The requested bandwidth exceeds the whole cell; a configuration problem.
    ExceedsCapacity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Admitted { granted: f64 },
    Rejected(Rejection),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissionDecision {
    pub outcome: Outcome,
    /// Existing calls degraded to make room, ascending by call id.
    pub degradations: Vec<Reallocation>,
}

impl AdmissionDecision {
    fn rejected(reason: Rejection) -> Self {
        AdmissionDecision { outcome: Outcome::Rejected(reason), degradations: Vec::new() }
    }

    pub fn is_admitted(&self) -> bool {
        matches!(self.outcome, Outcome::Admitted { .. })
    }

    pub fn granted(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Admitted { granted } => Some(granted),
            Outcome::Rejected(_) => None,
        }
    }
}

/// The admission scheme under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// Priority-dependent multi-level floors.
    ProposedPriorityMultilevel,
    /// Every request may degrade calls down to the handover floor.
    AdaptiveNonPriority,
    /// No degradation at all: complete sharing.
    NonAdaptiveNonPriority,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [
        SchemeKind::ProposedPriorityMultilevel,
        SchemeKind::AdaptiveNonPriority,
        SchemeKind::NonAdaptiveNonPriority,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::ProposedPriorityMultilevel => "proposed_priority_multilevel",
            SchemeKind::AdaptiveNonPriority => "adaptive_non_priority",
            SchemeKind::NonAdaptiveNonPriority => "non_adaptive_non_priority",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "proposed_priority_multilevel" | "proposed" => Ok(SchemeKind::ProposedPriorityMultilevel),
            "adaptive_non_priority" | "adaptive" => Ok(SchemeKind::AdaptiveNonPriority),
            "non_adaptive_non_priority" | "non_adaptive" => Ok(SchemeKind::NonAdaptiveNonPriority),
            other => Err(format!("unknown scheme '{other}'")),
        }
    }
}

/// Rewrites the matrix for `scheme`. The proposed scheme leaves it untouched.
pub fn apply_scheme(matrix: &PolicyMatrix, scheme: SchemeKind) -> PolicyMatrix {
    match scheme {
        SchemeKind::ProposedPriorityMultilevel => matrix.clone(),
        SchemeKind::AdaptiveNonPriority => {
            let handover: Vec<f64> =
                matrix.class_ids().map(|m| matrix.gamma(m, RequestPriority::HANDOVER)).collect();
            matrix.map_gamma(|m, _, _| handover[m.0])
        }
        SchemeKind::NonAdaptiveNonPriority => matrix.map_gamma(|_, _, _| 0.0),
    }
}

/// Bandwidth `call` can still give up for a priority-`p` request:
/// `max(0, C_{m,a} - C_{m,p})`. For an undegraded call this is `gamma(m,p) * C_{m,r}`.
pub fn releasable_per_call(call: &Call, p: RequestPriority, matrix: &PolicyMatrix) -> f64 {
    (call.allocation - matrix.floor(call.class, p)).max(0.0)
}

/// Total releasable headroom in the cell for a priority-`p` request.
pub fn releasable_total(state: &CellState, p: RequestPriority, matrix: &PolicyMatrix) -> f64 {
    state.calls().map(|c| releasable_per_call(c, p, matrix)).sum()
}

/// Tries to admit `candidate` at priority `p`.
///
/// The candidate's `allocation` field is ignored and overwritten with the
/// granted bandwidth. On admission the existing calls are degraded in place
/// and the candidate is inserted; on rejection `state` is left untouched.
///
/// The requester gets its full request whenever free bandwidth plus the
/// releasable headroom covers it; the shortfall is then taken from every
/// adaptive call in proportion to its headroom. Otherwise every call drops to
/// its floor and the requester is admitted with what that frees, provided it
/// reaches the requester's own floor `C_{q,p}`.
pub fn admit(
    state: &mut CellState,
    mut candidate: Call,
    p: RequestPriority,
    matrix: &PolicyMatrix,
) -> AdmissionDecision {
    let class = candidate.class;
    let want = matrix.requested(class);
    if want > state.capacity() + BANDWIDTH_TOLERANCE {
        return AdmissionDecision::rejected(Rejection::ExceedsCapacity);
    }
    let free = state.free();
    let own_floor = matrix.floor(class, p);

    if free + BANDWIDTH_TOLERANCE >= want {
        candidate.allocation = want;
        state.insert(candidate);
        return AdmissionDecision { outcome: Outcome::Admitted { granted: want }, degradations: vec![] };
    }

    // (id, current allocation, floor at this priority) for calls with headroom.
    let headroom: Vec<(CallId, f64, f64)> = state
        .calls()
        .map(|c| (c.id, c.allocation, matrix.floor(c.class, p)))
        .filter(|&(_, old, floor)| old > floor)
        .collect();
    let total: f64 = headroom.iter().map(|&(_, old, floor)| old - floor).sum();
    let shortfall = want - free;

    let (granted, degradations) = if shortfall <= total {
        let degradations: Vec<Reallocation> = headroom
            .iter()
            .filter_map(|&(id, old, floor)| {
                let take = shortfall * (old - floor) / total;
                let new = (old - take).max(floor);
                (new < old).then_some(Reallocation { call: id, old, new })
            })
            .collect();
        (want, degradations)
    } else if free + total + BANDWIDTH_TOLERANCE >= own_floor {
        let degradations = headroom
            .iter()
            .map(|&(id, old, floor)| Reallocation { call: id, old, new: floor })
            .collect();
        ((free + total).min(want), degradations)
    } else {
        return AdmissionDecision::rejected(Rejection::InsufficientBandwidth);
    };

    for d in &degradations {
        state.set_allocation(d.call, d.new);
    }
    candidate.allocation = granted;
    state.insert(candidate);
    AdmissionDecision { outcome: Outcome::Admitted { granted }, degradations }
}

/// Hands `freed` kbps back to degraded calls in proportion to their deficits
/// `C_{m,r} - C_{m,a}`, until no call is degraded or the bandwidth is used up.
///
/// `freed` is clamped to the cell's currently free bandwidth. Returns one entry
/// per call whose allocation grew, ascending by call id.
pub fn restore_on_departure(
    state: &mut CellState,
    freed: f64,
    matrix: &PolicyMatrix,
) -> Vec<Reallocation> {
    let mut remaining = freed.min(state.free());
    let mut changes: Vec<Reallocation> = Vec::new();
    let max_rounds = state.len();
    for _ in 0..max_rounds {
        if remaining <= BANDWIDTH_TOLERANCE {
            break;
        }
        let deficits: Vec<(CallId, f64, f64)> = state
            .calls()
            .map(|c| (c.id, c.allocation, matrix.requested(c.class)))
            .filter(|&(_, old, requested)| requested > old)
            .collect();
        let total: f64 = deficits.iter().map(|&(_, old, requested)| requested - old).sum();
        if total <= 0.0 {
            break;
        }
        let mut granted_sum = 0.0;
        for &(id, old, requested) in &deficits {
            let deficit = requested - old;
            let grant = deficit.min(remaining * deficit / total);
            if grant <= 0.0 {
                continue;
            }
            let new = if grant >= deficit { requested } else { old + grant };
            state.set_allocation(id, new);
            granted_sum += new - old;
            match changes.iter_mut().find(|c| c.call == id) {
                Some(c) => c.new = new,
                None => changes.push(Reallocation { call: id, old, new }),
            }
        }
        remaining -= granted_sum;
    }
    if state.allocated() > state.capacity() {
        state.resync();
    }
    changes.sort_by_key(|c| c.call);
    changes
}

/// Checks a matrix after applying `scheme`; the configuration error surfaced
/// before any admission is attempted.
pub fn prepare(matrix: &PolicyMatrix, scheme: SchemeKind) -> Result<PolicyMatrix, MatrixViolation> {
    validate_matrix(matrix)?;
    let out = apply_scheme(matrix, scheme);
    validate_matrix(&out)?;
    Ok(out)
}

/// Priority of a request for `class`, given whether it is a handover.
pub fn priority_of(class: ClassId, handover: bool) -> RequestPriority {
    if handover {
        RequestPriority::handover()
    } else {
        RequestPriority::new_call(class)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Origin, Service};

    fn call(id: u64, class: usize, allocation: f64) -> Call {
        Call {
            id: CallId(id),
            class: ClassId(class),
            allocation,
            service: Service::Work(1.0),
            origin: Origin::New,
            root: CallId(id),
            admitted_at: 0.0,
        }
    }

    /// 600 kbps cell holding four voice calls and three full-rate web calls.
    fn toy_cell() -> CellState {
        let mut cell = CellState::new(600.0);
        for i in 0..4 {
            cell.insert(call(i, 0, 32.0));
        }
        for i in 4..7 {
            cell.insert(call(i, 1, 120.0));
        }
        cell
    }

    #[test]
    fn releasable_examples() {
        let m = PolicyMatrix::reference();
        let p = |l| RequestPriority::from_level(l, 4).unwrap();
        assert!((releasable_per_call(&call(1, 1, 120.0), p(0), &m) - 72.0).abs() < 1e-9);
        assert!((releasable_per_call(&call(1, 2, 256.0), p(2), &m) - 161.728).abs() < 1e-9);
        for l in 0..=4 {
            assert_eq!(releasable_per_call(&call(1, 0, 32.0), p(l), &m), 0.0);
        }
        // 120 * (1 - 0.6 * 0.95^4) = 61.35555
        assert!((m.floor(ClassId(1), p(4)) - 61.35555).abs() < 1e-9);
        assert!((releasable_per_call(&call(1, 1, 72.0), p(4), &m) - 10.64445).abs() < 1e-9);
        assert_eq!(releasable_per_call(&call(1, 1, 50.0), p(4), &m), 0.0);
    }

    #[test]
    fn toy_video_admission_degrades_web_to_72() {
        let m = PolicyMatrix::reference();
        let mut cell = toy_cell();
        let p = RequestPriority::new_call(ClassId(2));
        let d = admit(&mut cell, call(7, 2, 0.0), p, &m);
        assert_eq!(d.granted(), Some(256.0));
        assert_eq!(d.degradations.len(), 3);
        for r in &d.degradations {
            assert_eq!(r.old, 120.0);
            assert!((r.new - 72.0).abs() < 1e-9, "{r:?}");
        }
        assert!((cell.allocated() - 600.0).abs() < 1e-9);
    }

    #[test]
    fn toy_video_rejected_without_adaptation() {
        let m = apply_scheme(&PolicyMatrix::reference(), SchemeKind::NonAdaptiveNonPriority);
        let mut cell = toy_cell();
        let before = cell.allocated();
        let d = admit(&mut cell, call(7, 2, 0.0), RequestPriority::new_call(ClassId(2)), &m);
        assert_eq!(d.outcome, Outcome::Rejected(Rejection::InsufficientBandwidth));
        assert_eq!(cell.allocated(), before);
        assert_eq!(cell.len(), 7);
    }

    #[test]
    fn empty_cell_admits_at_request() {
        let m = PolicyMatrix::reference();
        for q in 0..4 {
            let mut cell = CellState::new(6000.0);
            let d = admit(&mut cell, call(1, q, 0.0), RequestPriority::new_call(ClassId(q)), &m);
            assert_eq!(d.granted(), Some(m.requested(ClassId(q))));
            assert!(d.degradations.is_empty());
        }
    }

    #[test]
    fn voice_saturated_cell_rejects() {
        let m = PolicyMatrix::reference();
        let mut cell = CellState::new(100.0);
        for i in 0..3 {
            cell.insert(call(i, 0, 32.0));
        }
        for q in 0..4 {
            let d = admit(&mut cell, call(9, q, 0.0), RequestPriority::handover(), &m);
            assert!(!d.is_admitted());
        }
    }

    #[test]
    fn degraded_admission_down_to_own_floor() {
        let m = PolicyMatrix::reference();
        // One web call and 30 kbps free: a web handover can free 72 and be
        // admitted at 102 kbps, above its own floor of 48.
        let mut cell = CellState::new(150.0);
        cell.insert(call(1, 1, 120.0));
        let d = admit(&mut cell, call(2, 1, 0.0), RequestPriority::handover(), &m);
        assert!((d.granted().unwrap() - 102.0).abs() < 1e-9);
        assert!((cell.get(CallId(1)).unwrap().allocation - 48.0).abs() < 1e-9);
        assert!(cell.allocated() <= 150.0 + 1e-9);
    }

    #[test]
    fn oversized_request_rejected() {
        let m = PolicyMatrix::reference();
        let mut cell = CellState::new(200.0);
        let d = admit(&mut cell, call(1, 2, 0.0), RequestPriority::handover(), &m);
        assert_eq!(d.outcome, Outcome::Rejected(Rejection::ExceedsCapacity));
    }

    #[test]
    fn restore_examples() {
        let m = PolicyMatrix::reference();
        let mut cell = CellState::new(1000.0);
        cell.insert(call(1, 1, 72.0));
        let ch = restore_on_departure(&mut cell, 100.0, &m);
        assert_eq!(ch, vec![Reallocation { call: CallId(1), old: 72.0, new: 120.0 }]);
        assert!((cell.free() - 880.0).abs() < 1e-9);

        let mut cell = CellState::new(192.0);
        cell.insert(call(1, 1, 72.0));
        cell.insert(call(2, 1, 72.0));
        let ch = restore_on_departure(&mut cell, 48.0, &m);
        assert_eq!(ch.len(), 2);
        for c in ch {
            assert!((c.new - 96.0).abs() < 1e-9);
        }

        let mut cell = CellState::new(200.0);
        cell.insert(call(1, 1, 120.0));
        assert!(restore_on_departure(&mut cell, 50.0, &m).is_empty());
        assert_eq!(cell.free(), 80.0);
    }

    #[test]
    fn restore_with_zero_is_noop() {
        let m = PolicyMatrix::reference();
        let mut cell = CellState::new(192.0);
        cell.insert(call(1, 1, 72.0));
        assert!(restore_on_departure(&mut cell, 0.0, &m).is_empty());
        assert_eq!(cell.get(CallId(1)).unwrap().allocation, 72.0);
    }

    #[test]
    fn schemes_rewrite_matrix() {
        let m = PolicyMatrix::reference();
        assert_eq!(apply_scheme(&m, SchemeKind::ProposedPriorityMultilevel), m);
        let anp = apply_scheme(&m, SchemeKind::AdaptiveNonPriority);
        assert!(anp.class(ClassId(1)).gamma.iter().all(|&g| g == 0.6));
        assert_eq!(validate_matrix(&anp), Ok(()));
        let nanp = apply_scheme(&m, SchemeKind::NonAdaptiveNonPriority);
        assert!(nanp.classes().iter().all(|c| c.gamma.iter().all(|&g| g == 0.0)));
        assert_eq!(validate_matrix(&nanp), Ok(()));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in SchemeKind::ALL {
            assert_eq!(s.as_str().parse::<SchemeKind>(), Ok(s));
        }
        assert!("bogus".parse::<SchemeKind>().is_err());
    }
}
