//! Analytical loss-system baselines for validating the simulator in its
//! non-adaptive mode: Erlang-B, the Kaufman-Roberts recursion for complete
//! sharing multirate systems, and a brute-force CTMC solver over the same
//! state space.

use thiserror::Error;

/// Largest state space [`ctmc_solve`] will enumerate.
pub const MAX_CTMC_STATES: usize = 100_000;

/// Dense elimination is used up to this many states; Gauss-Seidel above.
const DENSE_LIMIT: usize = 400;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum OracleError {
    #[error("multirate system needs at least one class")]
    NoClasses,
    #[error("class {0} must occupy at least one channel")]
    ZeroChannels(usize),
    #[error("class {class} needs {channels} channels but capacity is {capacity}")]
    ClassTooWide { class: usize, channels: u32, capacity: u32 },
    #[error("class {0} has invalid offered load {1}")]
    BadLoad(usize, f64),
    #[error("bandwidth {0} kbps is not a multiple of the unit {1} kbps")]
    NotQuantizable(f64, f64),
    #[error("state space has more than {MAX_CTMC_STATES} states")]
    StateSpaceTooLarge,
    #[error("stationary solve did not converge (residual {0:e})")]
    NotConverged(f64),
}

/// Erlang-B blocking for `servers` circuits offered `load` Erlangs, by the
/// stable recursion `B(c) = a B(c-1) / (c + a B(c-1))`.
pub fn erlang_b(servers: u32, load: f64) -> f64 {
    let mut b = 1.0;
    for c in 1..=servers {
        b = load * b / (c as f64 + load * b);
    }
    b
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultirateClass {
    /// Channels (bandwidth units) per call.
    pub channels: u32,
    /// Offered load in Erlangs.
    pub load: f64,
}

/// A complete-sharing multirate loss system quantized to integer channels.
#[derive(Clone, Debug, PartialEq)]
pub struct MultirateSystem {
    capacity: u32,
    classes: Vec<MultirateClass>,
}

impl MultirateSystem {
    pub fn new(capacity: u32, classes: Vec<MultirateClass>) -> Result<Self, OracleError> {
        if classes.is_empty() {
            return Err(OracleError::NoClasses);
        }
        for (i, c) in classes.iter().enumerate() {
            if c.channels == 0 {
                return Err(OracleError::ZeroChannels(i));
            }
            if c.channels > capacity {
                return Err(OracleError::ClassTooWide { class: i, channels: c.channels, capacity });
            }
            if !(c.load >= 0.0 && c.load.is_finite()) {
                return Err(OracleError::BadLoad(i, c.load));
            }
        }
        Ok(MultirateSystem { capacity, classes })
    }

    /// Quantizes kbps figures into channels of `unit` kbps. With `unit = None`
    /// the unit is the gcd of all integer bandwidths.
    pub fn from_bandwidths(
        capacity_kbps: f64,
        classes: &[(f64, f64)],
        unit: Option<f64>,
    ) -> Result<Self, OracleError> {
        let unit = match unit {
            Some(u) => u,
            None => classes.iter().fold(0u64, |g, &(bw, _)| gcd(g, bw.round() as u64)) as f64,
        };
        let quantize = |bw: f64| -> Result<u32, OracleError> {
            let n = bw / unit;
            if unit <= 0.0 || (n - n.round()).abs() > 1e-9 {
                return Err(OracleError::NotQuantizable(bw, unit));
            }
            Ok(n.round() as u32)
        };
        let capacity = (capacity_kbps / unit + 1e-9).floor() as u32;
        let classes = classes
            .iter()
            .map(|&(bw, load)| Ok(MultirateClass { channels: quantize(bw)?, load }))
            .collect::<Result<Vec<_>, _>>()?;
        MultirateSystem::new(capacity, classes)
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn classes(&self) -> &[MultirateClass] {
        &self.classes
    }
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Normalized occupancy distribution `q(0..=C)` from
/// `j q(j) = sum_m a_m b_m q(j - b_m)`.
pub fn occupancy_distribution(sys: &MultirateSystem) -> Vec<f64> {
    let cap = sys.capacity as usize;
    let mut q = vec![0.0; cap + 1];
    q[0] = 1.0;
    for j in 1..=cap {
        let mut acc = 0.0;
        for c in &sys.classes {
            let b = c.channels as usize;
            if b <= j {
                acc += c.load * b as f64 * q[j - b];
            }
        }
        q[j] = acc / j as f64;
        if q[j] > 1e200 {
            for v in &mut q[..=j] {
                *v /= 1e200;
            }
        }
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    q
}

/// Per-class blocking probabilities under complete sharing.
pub fn kaufman_roberts(sys: &MultirateSystem) -> Vec<f64> {
    let q = occupancy_distribution(sys);
    let cap = sys.capacity as usize;
    sys.classes
        .iter()
        .map(|c| q[cap + 1 - c.channels as usize..].iter().sum::<f64>())
        .collect()
}

/// Stationary distribution over the per-class occupancy vectors.
#[derive(Clone, Debug)]
pub struct StationaryDistribution {
    /// Calls in progress per class, one vector per state.
    pub states: Vec<Vec<u32>>,
    pub probabilities: Vec<f64>,
    /// Max-norm of `pi Q` at the solution.
    pub residual: f64,
    channels: Vec<u32>,
    capacity: u32,
}

impl StationaryDistribution {
    /// Probability that an arrival of each class finds too few free channels.
    pub fn blocking(&self) -> Vec<f64> {
        self.channels
            .iter()
            .map(|&b| {
                self.states
                    .iter()
                    .zip(&self.probabilities)
                    .filter(|(s, _)| occupied(s, &self.channels) + b > self.capacity)
                    .map(|(_, p)| p)
                    .sum()
            })
            .collect()
    }
}

fn occupied(state: &[u32], channels: &[u32]) -> u32 {
    state.iter().zip(channels).map(|(n, b)| n * b).sum()
}

/// Sparse CTMC generator: per state, the off-diagonal `(target, rate)` pairs.
/// The diagonal is minus the row sum.
#[derive(Clone, Debug)]
pub struct Generator {
    pub transitions: Vec<Vec<(usize, f64)>>,
}

impl Generator {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.transitions[i].iter().map(|&(_, r)| r).sum()
    }

    /// Max-norm of `pi Q`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut flow = vec![0.0; self.len()];
        for (i, row) in self.transitions.iter().enumerate() {
            flow[i] -= pi[i] * self.exit_rate(i);
            for &(j, r) in row {
                flow[j] += pi[i] * r;
            }
        }
        flow.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Enumerates all occupancy vectors with `sum n_m b_m <= C` (unit service rate).
pub fn build_generator(sys: &MultirateSystem) -> Result<(Vec<Vec<u32>>, Generator), OracleError> {
    let channels: Vec<u32> = sys.classes.iter().map(|c| c.channels).collect();
    let mut states = Vec::new();
    let mut current = vec![0u32; channels.len()];
    enumerate(&channels, sys.capacity, 0, &mut current, &mut states)?;

    let index: std::collections::HashMap<Vec<u32>, usize> =
        states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut transitions = vec![Vec::new(); states.len()];
    for (i, s) in states.iter().enumerate() {
        let used = occupied(s, &channels);
        for (m, c) in sys.classes.iter().enumerate() {
            if used + c.channels <= sys.capacity && c.load > 0.0 {
                let mut t = s.clone();
                t[m] += 1;
                transitions[i].push((index[&t], c.load));
            }
            if s[m] > 0 {
                let mut t = s.clone();
                t[m] -= 1;
                transitions[i].push((index[&t], s[m] as f64));
            }
        }
    }
    Ok((states, Generator { transitions }))
}

fn enumerate(
    channels: &[u32],
    remaining: u32,
    class: usize,
    current: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) -> Result<(), OracleError> {
    if class == channels.len() {
        if out.len() >= MAX_CTMC_STATES {
            return Err(OracleError::StateSpaceTooLarge);
        }
        out.push(current.clone());
        return Ok(());
    }
    let max = remaining / channels[class];
    for n in 0..=max {
        current[class] = n;
        enumerate(channels, remaining - n * channels[class], class + 1, current, out)?;
    }
    current[class] = 0;
    Ok(())
}

/// Solves `pi Q = 0, sum pi = 1` for an irreducible generator.
pub fn solve_stationary(gen: &Generator) -> Result<(Vec<f64>, f64), OracleError> {
    let pi = if gen.len() <= DENSE_LIMIT { solve_dense(gen) } else { solve_gauss_seidel(gen) };
    let residual = gen.residual(&pi);
    if residual > 1e-10 || pi.iter().any(|p| !p.is_finite()) {
        return Err(OracleError::NotConverged(residual));
    }
    Ok((pi, residual))
}

/// Exhaustive stationary solve of the complete-sharing chain.
pub fn ctmc_solve(sys: &MultirateSystem) -> Result<StationaryDistribution, OracleError> {
    let (states, gen) = build_generator(sys)?;
    let (probabilities, residual) = solve_stationary(&gen)?;
    Ok(StationaryDistribution {
        states,
        probabilities,
        residual,
        channels: sys.classes.iter().map(|c| c.channels).collect(),
        capacity: sys.capacity,
    })
}

/// Gaussian elimination with partial pivoting on `Q^T pi = 0`, with the last
/// equation replaced by the normalization.
fn solve_dense(gen: &Generator) -> Vec<f64> {
    let n = gen.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for (i, row) in gen.transitions.iter().enumerate() {
        a[i][i] -= gen.exit_rate(i);
        for &(j, r) in row {
            a[j][i] += r;
        }
    }
    for v in a[n - 1].iter_mut() {
        *v = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / p;
            if f != 0.0 {
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (a[i][n] - s) / a[i][i];
    }
    x
}

fn solve_gauss_seidel(gen: &Generator) -> Vec<f64> {
    let n = gen.len();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in gen.transitions.iter().enumerate() {
        for &(j, r) in row {
            incoming[j].push((i, r));
        }
    }
    let exit: Vec<f64> = (0..n).map(|i| gen.exit_rate(i)).collect();
    let mut pi = vec![1.0 / n as f64; n];
    for sweep in 0..100_000 {
        for j in 0..n {
            let inflow: f64 = incoming[j].iter().map(|&(i, r)| pi[i] * r).sum();
            pi[j] = inflow / exit[j];
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        if sweep % 20 == 19 && gen.residual(&pi) <= 1e-13 {
            break;
        }
    }
    pi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erlang_b_values() {
        assert_eq!(erlang_b(0, 3.0), 1.0);
        assert!((erlang_b(2, 1.0) - 0.2).abs() < 1e-15);
        assert!((erlang_b(1, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn erlang_b_monotone() {
        for c in 1..20 {
            for k in 1..40 {
                let a = k as f64 * 0.5;
                assert!(erlang_b(c, a + 0.5) > erlang_b(c, a));
                assert!(erlang_b(c + 1, a) < erlang_b(c, a));
            }
        }
    }

    #[test]
    fn single_class_unit_width_is_erlang_b() {
        for c in 1..30 {
            let sys = MultirateSystem::new(c, vec![MultirateClass { channels: 1, load: 7.3 }]).unwrap();
            assert!((kaufman_roberts(&sys)[0] - erlang_b(c, 7.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_load_never_blocks() {
        let sys = MultirateSystem::new(
            10,
            vec![MultirateClass { channels: 1, load: 0.0 }, MultirateClass { channels: 3, load: 0.0 }],
        )
        .unwrap();
        assert!(kaufman_roberts(&sys).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn two_class_instance_matches_ctmc() {
        let sys = MultirateSystem::new(
            4,
            vec![MultirateClass { channels: 1, load: 1.0 }, MultirateClass { channels: 2, load: 1.0 }],
        )
        .unwrap();
        let kr = kaufman_roberts(&sys);
        let ctmc = ctmc_solve(&sys).unwrap();
        assert_eq!(ctmc.states.len(), 9);
        for (a, b) in kr.iter().zip(ctmc.blocking()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn mm11_closed_form() {
        let a = 2.5;
        let sys = MultirateSystem::new(1, vec![MultirateClass { channels: 1, load: a }]).unwrap();
        let d = ctmc_solve(&sys).unwrap();
        assert!((d.probabilities[0] - 1.0 / (1.0 + a)).abs() < 1e-14);
        assert!((d.probabilities[1] - a / (1.0 + a)).abs() < 1e-14);
    }

    #[test]
    fn generator_rows_balance() {
        let sys = MultirateSystem::new(
            6,
            vec![MultirateClass { channels: 1, load: 1.5 }, MultirateClass { channels: 3, load: 0.4 }],
        )
        .unwrap();
        let (_, gen) = build_generator(&sys).unwrap();
        // Diagonal is defined as minus the off-diagonal sum, so each row of Q
        // sums to zero; check that the uniform vector times Q has zero total flow.
        let pi = vec![1.0; gen.len()];
        let mut flow = vec![0.0; gen.len()];
        for (i, row) in gen.transitions.iter().enumerate() {
            flow[i] -= pi[i] * gen.exit_rate(i);
            for &(j, r) in row {
                flow[j] += r;
                assert_ne!(i, j);
            }
        }
        assert!(flow.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn iterative_solver_agrees_with_dense() {
        let sys = MultirateSystem::new(
            60,
            vec![
                MultirateClass { channels: 1, load: 20.0 },
                MultirateClass { channels: 2, load: 6.0 },
                MultirateClass { channels: 5, load: 2.0 },
            ],
        )
        .unwrap();
        let (_, gen) = build_generator(&sys).unwrap();
        assert!(gen.len() > DENSE_LIMIT);
        let (pi, res) = solve_stationary(&gen).unwrap();
        assert!(res <= 1e-10);
        let ctmc = ctmc_solve(&sys).unwrap();
        let kr = kaufman_roberts(&sys);
        for (a, b) in kr.iter().zip(ctmc.blocking()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_space_cap() {
        let sys = MultirateSystem::new(
            400,
            vec![
                MultirateClass { channels: 1, load: 1.0 },
                MultirateClass { channels: 1, load: 1.0 },
                MultirateClass { channels: 1, load: 1.0 },
            ],
        )
        .unwrap();
        assert_eq!(ctmc_solve(&sys).unwrap_err(), OracleError::StateSpaceTooLarge);
    }

    #[test]
    fn quantization_uses_gcd() {
        let sys = MultirateSystem::from_bandwidths(
            6000.0,
            &[(32.0, 1.0), (120.0, 1.0), (256.0, 1.0), (60.0, 1.0)],
            None,
        )
        .unwrap();
        assert_eq!(sys.capacity(), 1500);
        let ch: Vec<u32> = sys.classes().iter().map(|c| c.channels).collect();
        assert_eq!(ch, vec![8, 30, 64, 15]);
    }
}
