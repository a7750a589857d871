//! Expected time/energy costs of synchronous federated averaging and the
//! relaxed objective used to choose `(K, E)`.
//!
//! The exact expected round time is the expected maximum of `K` round times
//! drawn without replacement from the population. The approximate objective
//! replaces it with the population-mean round time and eliminates `R` through
//! the convergence bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{check_e, check_k, BoundParams, ControlPoint, CostMeans, CostWeights, Population, RngSeed};

/// Expected (or realized) total time, energy and their γ-blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub expected_time: f64,
    pub expected_energy: f64,
    pub weighted_total: f64,
}

impl CostBreakdown {
    pub fn new(time: f64, energy: f64, weights: CostWeights) -> Self {
        Self {
            expected_time: time,
            expected_energy: energy,
            weighted_total: weights.blend(time, energy),
        }
    }
}

/// Value of the relaxed objective. `relative` marks a value computed from the
/// ratio `ρ` alone, i.e. the true objective divided by the unknown `B0/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    pub relative: bool,
}

/// Partial-participation penalty `(N−K)/(K(N−1))`, zero for `N = 1`.
#[inline]
pub fn phi(n: usize, k: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (n as f64 - k) / (k * (n as f64 - 1.0))
    }
}

/// `E[e_tot] = K·(e_p·E + e_m)·R` with population-mean unit energies.
pub fn expected_energy(pop: &Population, k: usize, e: usize, r: usize) -> Result<f64> {
    check_k(k as f64, pop.len())?;
    check_e(e as f64)?;
    if r < 1 {
        return invalid("round count r must be >= 1");
    }
    let m = pop.means();
    Ok(k as f64 * (m.e_p * e as f64 + m.e_m) * r as f64)
}

/// Probability weights `w_i = C(i−1, K−1)/C(N, K)` that the `i`-th smallest
/// of `N` values (1-based) is the maximum of a uniformly drawn `K`-subset.
/// Entry `i − 1` of the returned vector holds `w_i`; entries below `K` are zero.
pub fn straggler_weights(n: usize, k: usize) -> Vec<f64> {
    assert!(1 <= k && k <= n, "need 1 <= k <= n, got k = {k}, n = {n}");
    // ln C(N, K) = Σ_{j=1..K} ln((N−K+j)/j)
    let ln_binom: f64 = (1..=k)
        .map(|j| ((n - k + j) as f64 / j as f64).ln())
        .sum();
    let mut w = vec![0.0; n];
    let mut cur = (-ln_binom).exp();
    w[k - 1] = cur;
    // C(i, K−1)/C(i−1, K−1) = i/(i−K+1)
    for i in k..n {
        cur *= i as f64 / (i - k + 1) as f64;
        w[i] = cur;
    }
    w
}

/// Expected maximum of a uniformly sampled `K`-subset of `sorted` (ascending).
pub fn expected_max_sorted(sorted: &[f64], k: usize) -> f64 {
    let w = straggler_weights(sorted.len(), k);
    let sum: f64 = w.iter().sum();
    assert!(
        (sum - 1.0).abs() <= 1e-9,
        "straggler weights sum to {sum} for n = {}, k = {k}",
        sorted.len()
    );
    w.iter().zip(sorted).skip(k - 1).map(|(w, t)| w * t).sum()
}

/// Exact expected per-round time (the straggler's expected time) for `K`
/// uniformly sampled clients each running `E` local iterations.
pub fn expected_round_time_exact(pop: &Population, k: usize, e: usize) -> Result<f64> {
    check_k(k as f64, pop.len())?;
    check_e(e as f64)?;
    // the order of t_k depends on E, so sort after applying it
    let mut t = pop.round_times(e as f64);
    t.sort_by(f64::total_cmp);
    Ok(expected_max_sorted(&t, k))
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Monte Carlo estimate of the expected straggler time: mean over `trials`
/// of the max round time among `K` clients drawn without replacement.
pub fn expected_round_time_mc(
    pop: &Population,
    k: usize,
    e: usize,
    trials: usize,
    seed: &RngSeed,
) -> Result<McEstimate> {
    check_k(k as f64, pop.len())?;
    check_e(e as f64)?;
    if trials == 0 {
        return invalid("trials must be >= 1");
    }
    let t = pop.round_times(e as f64);
    let n = t.len();
    let mut rng = seed.rng();
    let mut idx: Vec<usize> = (0..n).collect();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        // partial Fisher–Yates: the first k slots become the sample
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let pick = rng.gen_range(j..n);
            idx.swap(j, pick);
            max = max.max(t[idx[j]]);
        }
        sum += max;
        sum_sq += max * max;
    }
    let mean = sum / trials as f64;
    let var = if trials > 1 {
        ((sum_sq - trials as f64 * mean * mean) / (trials as f64 - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_error: (var / trials as f64).sqrt(),
        trials,
    })
}

/// Approximate expected total time `(t_p·E + t_m)·R` using mean unit times.
pub fn approx_expected_time(pop: &Population, e: f64, r: f64) -> Result<f64> {
    check_e(e)?;
    if !(r >= 0.0) {
        return invalid(format!("round count r = {r} must be >= 0"));
    }
    let m = pop.means();
    Ok((m.t_p * e + m.t_m) * r)
}

/// Relaxed objective with ratio `ρ` (`A0 = ρ`, `B0 = ε = 1`). Works on
/// continuous `(K, E)` and performs no range checks.
#[inline]
pub fn p3_relative(means: &CostMeans, n: usize, gamma: f64, rho: f64, k: f64, e: f64) -> f64 {
    let per_round = (1.0 - gamma) * (means.t_p * e + means.t_m) + gamma * k * (means.e_p * e + means.e_m);
    per_round * (rho + (1.0 + phi(n, k)) * e * e) / e
}

/// Relaxed expected total cost with `R` eliminated through the bound. Uses
/// absolute `A0, B0, ε` when known, otherwise returns the value divided by
/// `B0/ε` and flags it relative.
pub fn p3_objective(
    pop: &Population,
    weights: CostWeights,
    bound: &BoundParams,
    point: &ControlPoint,
) -> Result<ObjectiveValue> {
    let n = pop.len();
    check_k(point.k, n)?;
    check_e(point.e)?;
    let rel = p3_relative(&pop.means(), n, weights.gamma(), bound.ratio_rho(), point.k, point.e);
    Ok(match bound.absolutes() {
        Some((_, b0)) => ObjectiveValue {
            value: rel * b0 / bound.epsilon(),
            relative: false,
        },
        None => ObjectiveValue {
            value: rel,
            relative: true,
        },
    })
}

/// Expected total cost from the exact straggler formula and the expected
/// energy over `R` rounds.
pub fn exact_expected_total_cost(
    pop: &Population,
    weights: CostWeights,
    k: usize,
    e: usize,
    r: usize,
) -> Result<CostBreakdown> {
    let energy = expected_energy(pop, k, e, r)?;
    let time = expected_round_time_exact(pop, k, e)? * r as f64;
    Ok(CostBreakdown::new(time, energy, weights))
}

/// Rounds needed for the bound to meet `ε` with equality:
/// `R = (A0 + B0(1+φ(K))E²)/(ε·E)`.
pub fn r_required(bound: &BoundParams, k: f64, e: f64, n: usize) -> Result<f64> {
    let (a0, b0) = bound.require_absolutes()?;
    check_k(k, n)?;
    check_e(e)?;
    Ok((a0 + b0 * (1.0 + phi(n, k)) * e * e) / (bound.epsilon() * e))
}
