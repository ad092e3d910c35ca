//! Post-warmup counters, time-weighted accumulators and batch-means estimates.

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::{CellState, ClassId};

/// Minimum number of batches for a confidence interval.
pub const MIN_BATCHES: usize = 10;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MetricsError {
    #[error("need at least {MIN_BATCHES} batches, got {0}")]
    InsufficientBatches(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounters {
    pub new_admitted: u64,
    pub new_blocks: u64,
    pub handover_attempts: u64,
    pub handover_drops: u64,
    pub completions: u64,
    /// Admitted new calls (counted in their admission batch) whose lineage ended in a drop.
    pub forced_terminations: u64,
}

impl ClassCounters {
    pub fn new_arrivals(&self) -> u64 {
        self.new_admitted + self.new_blocks
    }

    fn add(&mut self, o: &ClassCounters) {
        self.new_admitted += o.new_admitted;
        self.new_blocks += o.new_blocks;
        self.handover_attempts += o.handover_attempts;
        self.handover_drops += o.handover_drops;
        self.completions += o.completions;
        self.forced_terminations += o.forced_terminations;
    }
}

/// Raw observations for one equal-length time batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchCounters {
    pub classes: Vec<ClassCounters>,
    /// Integral over time of the summed allocation of live calls, per class (kbit).
    pub alloc_area: Vec<f64>,
    /// Integral over time of the number of live calls, per class (call-seconds).
    pub count_area: Vec<f64>,
    /// Integral over time of allocated bandwidth (kbit).
    pub used_area: f64,
    pub span: f64,
    pub capacity: f64,
}

impl BatchCounters {
    fn new(num_classes: usize, capacity: f64) -> Self {
        BatchCounters {
            classes: vec![ClassCounters::default(); num_classes],
            alloc_area: vec![0.0; num_classes],
            count_area: vec![0.0; num_classes],
            used_area: 0.0,
            span: 0.0,
            capacity,
        }
    }

    pub fn total(&self) -> ClassCounters {
        let mut t = ClassCounters::default();
        self.classes.iter().for_each(|c| t.add(c));
        t
    }
}

/// Something that happened at an event boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventOutcome {
    NewAdmitted { class: ClassId },
    NewBlocked { class: ClassId },
    HandoverAdmitted { class: ClassId },
    /// `root_admitted_at` is when the lineage's original new call was admitted.
    HandoverDropped { class: ClassId, root_admitted_at: f64 },
    Completed { class: ClassId },
}

/// Accumulates outcomes into equal-time batches over `[warmup, end]`.
#[derive(Clone, Debug)]
pub struct Recorder {
    warmup: f64,
    end: f64,
    batch_len: f64,
    batches: Vec<BatchCounters>,
    alloc_scratch: Vec<f64>,
    count_scratch: Vec<f64>,
}

impl Recorder {
    pub fn new(num_classes: usize, capacity: f64, warmup: f64, end: f64, batches: usize) -> Self {
        Recorder {
            warmup,
            end,
            batch_len: (end - warmup) / batches as f64,
            batches: vec![BatchCounters::new(num_classes, capacity); batches],
            alloc_scratch: vec![0.0; num_classes],
            count_scratch: vec![0.0; num_classes],
        }
    }

    fn batch_of(&self, time: f64) -> Option<usize> {
        if time < self.warmup || time > self.end {
            return None;
        }
        let i = ((time - self.warmup) / self.batch_len) as usize;
        Some(i.min(self.batches.len() - 1))
    }

    pub fn record(&mut self, time: f64, outcome: EventOutcome) {
        let Some(b) = self.batch_of(time) else { return };
        let batch = &mut self.batches[b];
        match outcome {
            EventOutcome::NewAdmitted { class } => batch.classes[class.0].new_admitted += 1,
            EventOutcome::NewBlocked { class } => batch.classes[class.0].new_blocks += 1,
            EventOutcome::HandoverAdmitted { class } => {
                batch.classes[class.0].handover_attempts += 1
            }
            EventOutcome::HandoverDropped { class, root_admitted_at } => {
                batch.classes[class.0].handover_attempts += 1;
                batch.classes[class.0].handover_drops += 1;
                if let Some(rb) = self.batch_of(root_admitted_at) {
                    self.batches[rb].classes[class.0].forced_terminations += 1;
                }
            }
            EventOutcome::Completed { class } => batch.classes[class.0].completions += 1,
        }
    }

    /// Integrates the cell's state, held constant over `[from, to)`.
    pub fn advance(&mut self, from: f64, to: f64, state: &CellState) {
        let from = from.max(self.warmup);
        let to = to.min(self.end);
        if to <= from {
            return;
        }
        self.alloc_scratch.iter_mut().for_each(|v| *v = 0.0);
        self.count_scratch.iter_mut().for_each(|v| *v = 0.0);
        for call in state.calls() {
            self.alloc_scratch[call.class.0] += call.allocation;
            self.count_scratch[call.class.0] += 1.0;
        }
        let used = state.allocated();
        let mut t = from;
        while t < to {
            let b = self.batch_of(t).expect("time within the observation window");
            let batch_end = if b + 1 == self.batches.len() {
                to
            } else {
                (self.warmup + (b + 1) as f64 * self.batch_len).min(to)
            };
            let dt = batch_end - t;
            if dt <= 0.0 {
                break;
            }
            let batch = &mut self.batches[b];
            for (i, (a, n)) in self.alloc_scratch.iter().zip(&self.count_scratch).enumerate() {
                batch.alloc_area[i] += a * dt;
                batch.count_area[i] += n * dt;
            }
            batch.used_area += used * dt;
            batch.span += dt;
            t = batch_end;
        }
    }

    pub fn into_batches(self) -> Vec<BatchCounters> {
        self.batches
    }
}

/// Batch-means point estimate with a 95% Student-t half-width.
///
/// `mean` is `None` when no batch had a non-zero denominator; `half_width` is
/// additionally `None` when fewer than two batches contributed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Estimate {
    pub mean: Option<f64>,
    pub half_width: Option<f64>,
    pub batches: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Estimate {
        let n = samples.len();
        if n == 0 {
            return Estimate::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Estimate { mean: Some(mean), half_width: None, batches: n };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        Estimate { mean: Some(mean), half_width: Some(t * (var / n as f64).sqrt()), batches: n }
    }

    /// Per-batch ratios, skipping batches whose denominator is zero.
    pub fn from_ratios(pairs: impl Iterator<Item = (f64, f64)>) -> Estimate {
        let samples: Vec<f64> = pairs.filter(|&(_, d)| d > 0.0).map(|(n, d)| n / d).collect();
        Estimate::from_samples(&samples)
    }

    pub fn is_defined(&self) -> bool {
        self.mean.is_some()
    }

    pub fn value(&self) -> f64 {
        self.mean.unwrap_or(f64::NAN)
    }

    pub fn hw(&self) -> f64 {
        self.half_width.unwrap_or(f64::NAN)
    }
}

/// Estimates for one traffic class, or for all classes together.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub totals: ClassCounters,
    pub new_block: Estimate,
    pub handover_drop: Estimate,
    pub forced_termination: Estimate,
    /// Time-weighted mean allocation per live call, kbps.
    pub mean_allocation: Estimate,
    /// Time-average number of live calls.
    pub mean_calls: Estimate,
}

/// Engine-side checks carried alongside the estimates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub events: u64,
    /// Invariant violations seen when checking was enabled.
    pub invariant_violations: u64,
    pub first_violation: Option<String>,
    /// Lowest allocation any call of each class held, over the whole run.
    pub min_allocation: Vec<f64>,
    /// Lowest allocation an admission at priority `p` degraded a class to: `[class][p]`.
    pub min_degraded_to: Vec<Vec<Option<f64>>>,
    /// Largest relative error between drawn and delivered work at completion.
    pub max_work_error: f64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.events += other.events;
        self.invariant_violations += other.invariant_violations;
        if self.first_violation.is_none() {
            self.first_violation = other.first_violation.clone();
        }
        if self.min_allocation.is_empty() {
            self.min_allocation = other.min_allocation.clone();
            self.min_degraded_to = other.min_degraded_to.clone();
        } else {
            for (a, b) in self.min_allocation.iter_mut().zip(&other.min_allocation) {
                *a = a.min(*b);
            }
            for (ra, rb) in self.min_degraded_to.iter_mut().zip(&other.min_degraded_to) {
                for (a, b) in ra.iter_mut().zip(rb) {
                    *a = match (*a, *b) {
                        (Some(x), Some(y)) => Some(x.min(y)),
                        (x, y) => x.or(y),
                    };
                }
            }
        }
        self.max_work_error = self.max_work_error.max(other.max_work_error);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub classes: Vec<ClassMetrics>,
    pub aggregate: ClassMetrics,
    /// Time-average of allocated / capacity.
    pub utilization: Estimate,
    pub batches: usize,
    pub diagnostics: Diagnostics,
}

impl RunMetrics {
    pub fn class(&self, id: ClassId) -> &ClassMetrics {
        &self.classes[id.0]
    }
}

fn class_metrics(name: &str, batches: &[BatchCounters], pick: impl Fn(&BatchCounters) -> (ClassCounters, f64, f64)) -> ClassMetrics {
    let rows: Vec<(ClassCounters, f64, f64, f64)> = batches
        .iter()
        .map(|b| {
            let (c, alloc, count) = pick(b);
            (c, alloc, count, b.span)
        })
        .collect();
    let mut totals = ClassCounters::default();
    rows.iter().for_each(|(c, ..)| totals.add(c));
    ClassMetrics {
        name: name.to_string(),
        totals,
        new_block: Estimate::from_ratios(
            rows.iter().map(|(c, ..)| (c.new_blocks as f64, c.new_arrivals() as f64)),
        ),
        handover_drop: Estimate::from_ratios(
            rows.iter().map(|(c, ..)| (c.handover_drops as f64, c.handover_attempts as f64)),
        ),
        forced_termination: Estimate::from_ratios(
            rows.iter().map(|(c, ..)| (c.forced_terminations as f64, c.new_admitted as f64)),
        ),
        mean_allocation: Estimate::from_ratios(rows.iter().map(|&(_, a, n, _)| (a, n))),
        mean_calls: Estimate::from_ratios(rows.iter().map(|&(_, _, n, span)| (n, span))),
    }
}

/// Turns raw batches (possibly pooled from several replications) into estimates.
pub fn finalize(
    batches: &[BatchCounters],
    class_names: &[String],
    diagnostics: Diagnostics,
) -> Result<RunMetrics, MetricsError> {
    if batches.len() < MIN_BATCHES {
        return Err(MetricsError::InsufficientBatches(batches.len()));
    }
    let classes = class_names
        .iter()
        .enumerate()
        .map(|(i, name)| class_metrics(name, batches, |b| (b.classes[i], b.alloc_area[i], b.count_area[i])))
        .collect();
    let aggregate = class_metrics("all", batches, |b| {
        (b.total(), b.alloc_area.iter().sum(), b.count_area.iter().sum())
    });
    let utilization =
        Estimate::from_ratios(batches.iter().map(|b| (b.used_area, b.span * b.capacity)));
    Ok(RunMetrics { classes, aggregate, utilization, batches: batches.len(), diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Call, CallId, Origin, Service};

    #[test]
    fn identical_batches_have_zero_width() {
        let e = Estimate::from_samples(&[0.25; 20]);
        assert_eq!(e.mean, Some(0.25));
        assert_eq!(e.half_width, Some(0.0));
    }

    #[test]
    fn half_width_uses_student_t() {
        // Ten samples 0..9: mean 4.5, s^2 = 55/6, t(0.975, 9) = 2.262157.
        let s: Vec<f64> = (0..10).map(f64::from).collect();
        let e = Estimate::from_samples(&s);
        let expected = 2.262157 * (55.0f64 / 6.0 / 10.0).sqrt();
        assert!((e.hw() - expected).abs() < 1e-5, "{}", e.hw());
    }

    #[test]
    fn zero_denominators_are_undefined() {
        let e = Estimate::from_ratios((0..20).map(|_| (0.0, 0.0)));
        assert!(!e.is_defined());
        assert!(e.value().is_nan());
    }

    #[test]
    fn record_routes_outcomes() {
        let web = ClassId(1);
        let mut r = Recorder::new(4, 600.0, 10.0, 110.0, 10);
        r.record(5.0, EventOutcome::NewBlocked { class: web });
        r.record(15.0, EventOutcome::NewBlocked { class: web });
        r.record(15.0, EventOutcome::NewAdmitted { class: web });
        r.record(55.0, EventOutcome::HandoverDropped { class: web, root_admitted_at: 15.0 });
        r.record(60.0, EventOutcome::Completed { class: ClassId(0) });
        let b = r.into_batches();
        assert_eq!(b[0].classes[1].new_blocks, 1);
        assert_eq!(b[0].classes[1].new_admitted, 1);
        assert_eq!(b[0].classes[1].forced_terminations, 1);
        assert_eq!(b[4].classes[1].handover_drops, 1);
        assert_eq!(b[4].classes[1].handover_attempts, 1);
        assert_eq!(b[5].classes[0].completions, 1);
        let total: u64 = b.iter().map(|x| x.total().new_blocks).sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn advance_splits_across_batches() {
        let mut cell = CellState::new(100.0);
        cell.insert(Call {
            id: CallId(0),
            class: ClassId(0),
            allocation: 32.0,
            service: Service::Time(1.0),
            origin: Origin::New,
            root: CallId(0),
            admitted_at: 0.0,
        });
        let mut r = Recorder::new(1, 100.0, 0.0, 100.0, 10);
        r.advance(0.0, 100.0, &cell);
        let b = r.into_batches();
        for batch in &b {
            assert!((batch.span - 10.0).abs() < 1e-9);
            assert!((batch.alloc_area[0] - 320.0).abs() < 1e-9);
        }
        let m = finalize(&b, &["voice".into()], Diagnostics::default()).unwrap();
        assert!((m.class(ClassId(0)).mean_allocation.value() - 32.0).abs() < 1e-12);
        assert!((m.utilization.value() - 0.32).abs() < 1e-12);
        assert!(!m.aggregate.handover_drop.is_defined());
    }

    #[test]
    fn too_few_batches() {
        let b = vec![BatchCounters::new(1, 1.0); 5];
        assert_eq!(
            finalize(&b, &["x".into()], Diagnostics::default()).unwrap_err(),
            MetricsError::InsufficientBatches(5)
        );
    }
}
