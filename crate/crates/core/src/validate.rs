//! Simulator-versus-oracle checks in reduced modes: no adaptation, no
//! handovers, complete sharing. In these modes the continuous simulator
//! coincides with a quantized multirate loss system.

use std::fmt;

use crate::engine::{run, ScenarioConfig, ScenarioError};
use crate::metrics::Estimate;
use crate::model::TrafficClass;
use crate::oracle::{erlang_b, kaufman_roberts, MultirateSystem, OracleError};
use crate::policy::SchemeKind;

/// Relative error accepted when the confidence interval misses the oracle.
pub const REL_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct ValidationCase {
    pub name: String,
    pub scenario: ScenarioConfig,
    /// Oracle inputs: per-class offered loads and channel widths.
    pub oracle: MultirateSystem,
}

#[derive(Clone, Debug)]
pub struct ClassCheck {
    pub class: String,
    pub simulated: Estimate,
    pub expected: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: String,
    pub arrivals: u64,
    pub checks: Vec<ClassCheck>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for CaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ({} arrivals)", self.name, self.arrivals)?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<12} simulated {:.6} ± {:.6}  oracle {:.6}  rel.err {:.4}  {}",
                c.class,
                c.simulated.value(),
                c.simulated.hw(),
                c.expected,
                c.rel_error,
                if c.passed { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ValidationError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// A pass is a relative error within [`REL_TOLERANCE`] or an oracle value
/// inside the simulated 95% interval.
pub fn agrees(simulated: &Estimate, expected: f64) -> (bool, f64) {
    let Some(mean) = simulated.mean else { return (false, f64::NAN) };
    let rel = if expected > 0.0 { (mean - expected).abs() / expected } else { mean.abs() };
    let within_ci = simulated.half_width.is_some_and(|hw| (mean - expected).abs() <= hw);
    (rel <= REL_TOLERANCE || within_ci, rel)
}

/// Offered loads implied by a scenario: `lambda * share_m * mean_duration_m`.
pub fn offered_loads(cfg: &ScenarioConfig) -> Vec<f64> {
    let total: f64 = cfg.classes.iter().map(|c| c.arrival_weight).sum();
    cfg.classes.iter().map(|c| cfg.lambda * c.arrival_weight / total * c.mean_duration).collect()
}

fn reduced(
    capacity_kbps: f64,
    classes: Vec<TrafficClass>,
    lambda: f64,
    arrivals: u64,
    seed: u64,
) -> ScenarioConfig {
    // Counted window sized with 1% slack so at least `arrivals` land after warmup.
    let window = 1.01 * arrivals as f64 / lambda;
    let warmup = window / 50.0;
    ScenarioConfig {
        capacity_kbps,
        classes,
        lambda,
        mean_dwell: None,
        scheme: SchemeKind::NonAdaptiveNonPriority,
        sim_duration: window + warmup,
        warmup,
        seed,
        batches: 20,
        check_invariants: false,
    }
}

fn case(name: &str, scenario: ScenarioConfig) -> Result<ValidationCase, ValidationError> {
    let loads = offered_loads(&scenario);
    let bw: Vec<(f64, f64)> =
        scenario.classes.iter().zip(&loads).map(|(c, &a)| (c.requested_kbps, a)).collect();
    let oracle = MultirateSystem::from_bandwidths(scenario.capacity_kbps, &bw, None)?;
    Ok(ValidationCase { name: name.to_string(), scenario, oracle })
}

/// Voice only, two 32 kbps channels, 1 Erlang offered: Erlang-B(2, 1) = 0.2.
pub fn erlang_case(arrivals: u64, seed: u64) -> Result<ValidationCase, ValidationError> {
    let voice = TrafficClass {
        name: "voice".into(),
        requested_kbps: 32.0,
        gamma: vec![0.0, 0.0],
        arrival_weight: 1.0,
        mean_duration: 120.0,
        elastic: false,
    };
    case("voice-only vs Erlang-B(2, 1)", reduced(64.0, vec![voice], 1.0 / 120.0, arrivals, seed))
}

/// 160 kbps (40 units of 4 kbps) shared by 32 kbps voice at 2 Erlangs and
/// 60 kbps elastic background traffic at 1 Erlang.
pub fn multirate_case(arrivals: u64, seed: u64) -> Result<ValidationCase, ValidationError> {
    let classes = vec![
        TrafficClass {
            name: "voice".into(),
            requested_kbps: 32.0,
            gamma: vec![0.0; 3],
            arrival_weight: 2.0,
            mean_duration: 120.0,
            elastic: false,
        },
        TrafficClass {
            name: "background".into(),
            requested_kbps: 60.0,
            gamma: vec![0.8, 0.76, 0.722],
            arrival_weight: 1.0,
            mean_duration: 120.0,
            elastic: true,
        },
    ];
    case("two-class vs Kaufman-Roberts", reduced(160.0, classes, 3.0 / 120.0, arrivals, seed))
}

pub fn standard_cases(arrivals: u64, seed: u64) -> Result<Vec<ValidationCase>, ValidationError> {
    Ok(vec![erlang_case(arrivals, seed)?, multirate_case(arrivals, seed)?])
}

/// Simulates `case` and compares per-class new-call blocking with the oracle.
pub fn check_case(case: &ValidationCase) -> Result<CaseReport, ValidationError> {
    let metrics = run(&case.scenario)?;
    let expected = kaufman_roberts(&case.oracle);
    let checks = metrics
        .classes
        .iter()
        .zip(expected)
        .map(|(m, expected)| {
            let (passed, rel_error) = agrees(&m.new_block, expected);
            ClassCheck { class: m.name.clone(), simulated: m.new_block, expected, rel_error, passed }
        })
        .collect();
    Ok(CaseReport { name: case.name.clone(), arrivals: metrics.aggregate.totals.new_arrivals(), checks })
}

/// Erlang-B value the voice-only case must reproduce.
pub fn erlang_reference() -> f64 {
    erlang_b(2, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erlang_case_oracle_is_erlang_b() {
        let c = erlang_case(1000, 1).unwrap();
        assert_eq!(c.oracle.capacity(), 2);
        assert!((kaufman_roberts(&c.oracle)[0] - erlang_reference()).abs() < 1e-12);
    }

    #[test]
    fn multirate_case_quantizes_to_40_units() {
        let c = multirate_case(1000, 1).unwrap();
        assert_eq!(c.oracle.capacity(), 40);
        let loads: Vec<f64> = c.oracle.classes().iter().map(|k| k.load).collect();
        assert!((loads[0] - 2.0).abs() < 1e-12 && (loads[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agreement_rule() {
        let e = Estimate { mean: Some(0.21), half_width: Some(0.001), batches: 20 };
        assert!(agrees(&e, 0.2).0);
        let e = Estimate { mean: Some(0.25), half_width: Some(0.06), batches: 20 };
        assert!(agrees(&e, 0.2).0);
        let e = Estimate { mean: Some(0.25), half_width: Some(0.01), batches: 20 };
        assert!(!agrees(&e, 0.2).0);
        assert!(!agrees(&Estimate::default(), 0.2).0);
    }
}
