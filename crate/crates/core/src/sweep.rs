//! Load sweeps across schemes and replications, and their CSV output.

use std::io::{self, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::engine::{run_raw, RawRun, ScenarioConfig, ScenarioError};
use crate::metrics::{finalize, ClassMetrics, Diagnostics, Estimate, RunMetrics};
use crate::policy::SchemeKind;

/// Environment variable overriding the number of worker threads.
pub const WORKERS_ENV: &str = "BWADAPT_WORKERS";

/// Column order of the sweep CSV. Part of the output contract.
pub const CSV_HEADER: &str = "scheme,lambda,class,new_block_prob,new_block_ci,ho_drop_prob,ho_drop_ci,forced_term_prob,forced_term_ci,mean_alloc_kbps,utilization";

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub lambda_grid: Vec<f64>,
    pub schemes: Vec<SchemeKind>,
    pub replications: usize,
    pub workers: usize,
}

impl SweepSpec {
    pub fn new(base: ScenarioConfig, lambda_grid: Vec<f64>, schemes: Vec<SchemeKind>, replications: usize) -> Self {
        SweepSpec { base, lambda_grid, schemes, replications, workers: default_workers() }
    }
}

pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("no schemes selected")]
    NoSchemes,
    #[error("need at least one replication")]
    NoReplications,
    #[error("{scheme} at lambda {lambda}: {source}")]
    Run { scheme: SchemeKind, lambda: f64, source: ScenarioError },
    #[error("a sweep worker panicked")]
    WorkerPanic,
}

/// Estimates for one (scheme, lambda) point, pooled over replications.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub scheme: SchemeKind,
    pub lambda: f64,
    pub metrics: RunMetrics,
}

/// Seed of replication `rep`. Independent of scheme and load, so every scheme
/// sees the same random streams at a given (lambda, replication).
pub fn replication_seed(base: u64, rep: usize) -> u64 {
    let mut z = base.wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every (scheme, lambda, replication) and pools each point's batches.
/// Results are ordered by scheme, then lambda, regardless of completion order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepPoint>, SweepError> {
    if spec.lambda_grid.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    if spec.schemes.is_empty() {
        return Err(SweepError::NoSchemes);
    }
    if spec.replications == 0 {
        return Err(SweepError::NoReplications);
    }
    let mut jobs = Vec::new();
    for &scheme in &spec.schemes {
        for &lambda in &spec.lambda_grid {
            for rep in 0..spec.replications {
                let mut cfg = spec.base.clone();
                cfg.scheme = scheme;
                cfg.lambda = lambda;
                cfg.seed = replication_seed(spec.base.seed, rep);
                jobs.push(cfg);
            }
        }
    }
    let results: Vec<Mutex<Option<Result<RawRun, ScenarioError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = spec.workers.clamp(1, jobs.len());
    let joined = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(cfg) = jobs.get(i) else { break };
                    let out = run_raw(cfg);
                    *results[i].lock().unwrap() = Some(out);
                })
            })
            .collect();
        handles.into_iter().all(|h| h.join().is_ok())
    });
    if !joined {
        return Err(SweepError::WorkerPanic);
    }

    let mut raws = results.into_iter().map(|m| m.into_inner().unwrap());
    let names = spec.base.class_names();
    let mut points = Vec::new();
    for &scheme in &spec.schemes {
        for &lambda in &spec.lambda_grid {
            let mut batches = Vec::new();
            let mut diagnostics = Diagnostics::default();
            for _ in 0..spec.replications {
                let raw = raws
                    .next()
                    .flatten()
                    .ok_or(SweepError::WorkerPanic)?
                    .map_err(|source| SweepError::Run { scheme, lambda, source })?;
                batches.extend(raw.batches);
                diagnostics.merge(&raw.diagnostics);
            }
            let metrics = finalize(&batches, &names, diagnostics).expect("batch count validated");
            points.push(SweepPoint { scheme, lambda, metrics });
        }
    }
    Ok(points)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

fn write_row(
    out: &mut impl Write,
    p: &SweepPoint,
    class: &ClassMetrics,
    utilization: &Estimate,
) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{}",
        p.scheme,
        num(p.lambda),
        class.name,
        num(class.new_block.value()),
        num(class.new_block.hw()),
        num(class.handover_drop.value()),
        num(class.handover_drop.hw()),
        num(class.forced_termination.value()),
        num(class.forced_termination.hw()),
        num(class.mean_allocation.value()),
        num(utilization.value()),
    )
}

/// One row per (scheme, lambda, class) followed by an `all` row per point.
/// Undefined estimates are written as `NaN`; lines end in LF.
pub fn write_csv(points: &[SweepPoint], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in points {
        for class in &p.metrics.classes {
            write_row(&mut out, p, class, &p.metrics.utilization)?;
        }
        write_row(&mut out, p, &p.metrics.aggregate, &p.metrics.utilization)?;
    }
    out.flush()
}

pub fn csv_string(points: &[SweepPoint]) -> String {
    let mut buf = Vec::new();
    write_csv(points, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SweepSpec {
        let mut base = ScenarioConfig::reference();
        base.sim_duration = 3_000.0;
        base.warmup = 300.0;
        let mut spec = SweepSpec::new(base, vec![0.2, 0.6], SchemeKind::ALL.to_vec(), 2);
        spec.workers = 3;
        spec
    }

    #[test]
    fn row_count_and_header() {
        let points = sweep(&small_spec()).unwrap();
        let csv = csv_string(&points);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 3 * 2 * (4 + 1));
        assert!(lines[1].starts_with("proposed_priority_multilevel,0.2,voice,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 11));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let mut spec = small_spec();
        let a = csv_string(&sweep(&spec).unwrap());
        spec.workers = 1;
        let b = csv_string(&sweep(&spec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = small_spec();
        spec.lambda_grid.clear();
        assert!(matches!(sweep(&spec), Err(SweepError::EmptyGrid)));
        let mut spec = small_spec();
        spec.replications = 0;
        assert!(matches!(sweep(&spec), Err(SweepError::NoReplications)));
        let mut spec = small_spec();
        spec.lambda_grid = vec![0.5, -1.0];
        assert!(matches!(sweep(&spec), Err(SweepError::Run { .. })));
    }

    #[test]
    fn seeds_differ_per_replication() {
        assert_ne!(replication_seed(1, 0), replication_seed(1, 1));
        assert_eq!(replication_seed(7, 3), replication_seed(7, 3));
    }
}
