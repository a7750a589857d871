//! Alternate convex search over `(K, E)` for the relaxed cost objective.
//!
//! For fixed `E` the objective is strictly convex in `K` with a closed-form
//! stationary point; for fixed `K` it is strictly convex in `E` and its
//! stationary point is the unique positive root of a cubic. ACS alternates the
//! two exact block updates, projecting onto `1 ≤ K ≤ N` and `E ≥ 1`, and then
//! rounds the continuous limit to the best of its four integer neighbours.

use std::io::Write;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{p3_relative, phi};
use crate::cubic;
use crate::error::{invalid, Result};
use crate::model::{check_e, check_k, ControlPoint, CostMeans, CostWeights, Population};

pub const DEFAULT_EPS0: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_INIT_E: f64 = 10.0;

/// The relaxed problem in ratio form: population means, `N`, `γ` and `ρ = A0/B0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P3Problem {
    pub means: CostMeans,
    pub n: usize,
    pub gamma: f64,
    pub rho: f64,
}

impl P3Problem {
    pub fn new(pop: &Population, weights: CostWeights, rho: f64) -> Result<Self> {
        Self::from_means(pop.means(), pop.len(), weights.gamma(), rho)
    }

    pub fn from_means(means: CostMeans, n: usize, gamma: f64, rho: f64) -> Result<Self> {
        if n == 0 {
            return invalid("N must be >= 1");
        }
        if !(0.0..=1.0).contains(&gamma) {
            return invalid(format!("gamma = {gamma} must lie in [0, 1]"));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return invalid(format!("rho = {rho} must be positive and finite"));
        }
        let m = means;
        if [m.t_p, m.t_m, m.e_p, m.e_m].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("mean unit costs must be nonnegative and finite");
        }
        Ok(Self { means, n, gamma, rho })
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..*self }
    }

    /// Objective divided by `B0/ε`.
    #[inline]
    pub fn objective(&self, k: f64, e: f64) -> f64 {
        p3_relative(&self.means, self.n, self.gamma, self.rho, k, e)
    }

    /// `∂/∂E` of [`Self::objective`].
    pub fn d_objective_de(&self, k: f64, e: f64) -> f64 {
        let (a, b) = self.e_coefficients(k);
        let c = 1.0 + phi(self.n, k);
        2.0 * a * c * e - b * self.rho / (e * e) + b * c
    }

    /// Per-round cost split `a·E + b`.
    fn e_coefficients(&self, k: f64) -> (f64, f64) {
        let g = self.gamma;
        let m = &self.means;
        (
            (1.0 - g) * m.t_p + g * k * m.e_p,
            (1.0 - g) * m.t_m + g * k * m.e_m,
        )
    }

    /// Unprojected minimiser in `K` for fixed `E`.
    pub fn closed_form_k(&self, e: f64) -> f64 {
        if self.n == 1 {
            return 1.0;
        }
        if self.gamma == 0.0 {
            return f64::INFINITY;
        }
        let n = self.n as f64;
        let m = &self.means;
        let num = (1.0 - self.gamma) * n * (m.t_p * e.powi(3) + m.t_m * e * e);
        let den = self.gamma * ((n - 2.0) * e * e + self.rho * (n - 1.0)) * (m.e_p * e + m.e_m);
        if den == 0.0 {
            return f64::INFINITY;
        }
        (num / den).sqrt()
    }

    /// Unprojected stationary `E` for fixed `K`: the positive root of
    /// `c3·E³ + E² − ρ/(1+φ(K)) = 0`, `c3 = 2a/b` for per-round cost `a·E + b`.
    pub fn stationary_e(&self, k: f64) -> f64 {
        let (a, b) = self.e_coefficients(k);
        let q = self.rho / (1.0 + phi(self.n, k));
        if b == 0.0 {
            // no per-round fixed cost: the objective increases in E
            return 0.0;
        }
        let c3 = 2.0 * a / b;
        if c3 == 0.0 {
            return q.sqrt();
        }
        let candidates: Vec<f64> = cubic::real_roots(c3, 1.0, 0.0, -q)
            .into_iter()
            .filter(|r| *r > 0.0 && r.is_finite())
            .collect();
        assert!(!candidates.is_empty(), "no positive root for c3 = {c3}, q = {q}");
        candidates
            .into_iter()
            .min_by(|x, y| self.objective(k, *x).total_cmp(&self.objective(k, *y)))
            .expect("nonempty")
    }

    fn project_k(&self, k: f64) -> f64 {
        k.clamp(1.0, self.n as f64)
    }

    /// Alternate convex search from `init`.
    pub fn acs(&self, init: ControlPoint, eps0: f64, max_iters: usize) -> Result<AcsTrace> {
        check_k(init.k, self.n)?;
        check_e(init.e)?;
        if !(eps0 > 0.0) {
            return invalid(format!("eps0 = {eps0} must be positive"));
        }
        let mut iterates = vec![ControlPoint::new(init.k, init.e)];
        let mut cur = (init.k, init.e);
        let mut converged = false;
        for _ in 0..max_iters {
            let k = self.project_k(self.closed_form_k(cur.1));
            let e = self.stationary_e(k).max(1.0);
            let step = ((k - cur.0).powi(2) + (e - cur.1).powi(2)).sqrt();
            cur = (k, e);
            iterates.push(ControlPoint::new(k, e));
            if step <= eps0 {
                converged = true;
                break;
            }
        }
        let (final_integer_point, objective_at_final) = self.round(cur.0, cur.1);
        Ok(AcsTrace {
            iterates,
            converged,
            final_integer_point,
            objective_at_final,
        })
    }

    /// Best of the four floor/ceil combinations, skipping infeasible floors.
    pub fn round(&self, k: f64, e: f64) -> (ControlPoint, f64) {
        let combos = [
            (k.ceil(), e.ceil()),
            (k.ceil(), e.floor()),
            (k.floor(), e.ceil()),
            (k.floor(), e.floor()),
        ];
        let mut best: Option<(ControlPoint, f64)> = None;
        for (kc, ec) in combos {
            if kc < 1.0 || ec < 1.0 || kc > self.n as f64 {
                continue;
            }
            let v = self.objective(kc, ec);
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((ControlPoint::new(kc, ec), v));
            }
        }
        best.expect("ceil(K), ceil(E) is always feasible")
    }

    /// Exact integer argmin over the grid; ties go to smaller `K`, then smaller `E`.
    pub fn grid_argmin(
        &self,
        k_range: RangeInclusive<usize>,
        e_range: RangeInclusive<usize>,
    ) -> Result<(ControlPoint, f64)> {
        if k_range.is_empty() || e_range.is_empty() {
            return invalid("grid ranges must be nonempty");
        }
        if *k_range.start() < 1 || *k_range.end() > self.n {
            return invalid(format!("K range {k_range:?} outside [1, {}]", self.n));
        }
        if *e_range.start() < 1 {
            return invalid("E range must start at >= 1");
        }
        let ks: Vec<usize> = k_range.collect();
        let best = ks
            .par_iter()
            .map(|&k| {
                let mut best = (f64::INFINITY, k, 0usize);
                for e in e_range.clone() {
                    let v = self.objective(k as f64, e as f64);
                    if v < best.0 {
                        best = (v, k, e);
                    }
                }
                best
            })
            .reduce(
                || (f64::INFINITY, usize::MAX, usize::MAX),
                |a, b| {
                    if b.0 < a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                        b
                    } else {
                        a
                    }
                },
            );
        Ok((ControlPoint::integer(best.1, best.2), best.0))
    }
}

/// Iterates of one ACS run and its rounded result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsTrace {
    /// `z_0, z_1, …` (continuous).
    pub iterates: Vec<ControlPoint>,
    pub converged: bool,
    pub final_integer_point: ControlPoint,
    /// Relative objective (divided by `B0/ε`) at the rounded point.
    pub objective_at_final: f64,
}

impl AcsTrace {
    /// Last continuous iterate.
    pub fn continuous(&self) -> ControlPoint {
        *self.iterates.last().expect("trace holds z_0")
    }

    /// CSV block `iteration,k,e,objective` evaluated with `problem`.
    pub fn write_csv<W: Write>(&self, problem: &P3Problem, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "k", "e", "objective"])?;
        for (i, z) in self.iterates.iter().enumerate() {
            w.write_record([
                i.to_string(),
                z.k.to_string(),
                z.e.to_string(),
                problem.objective(z.k, z.e).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Default starting point `(N, 10)`.
pub fn default_init(n: usize) -> ControlPoint {
    ControlPoint::new(n as f64, DEFAULT_INIT_E)
}

/// Stationary `K` of the relaxed objective for fixed `E`, unprojected.
/// Returns `+∞` for `γ = 0` and `1` for `N = 1`.
pub fn closed_form_k(e: f64, pop: &Population, weights: CostWeights, rho: f64) -> Result<f64> {
    check_e(e)?;
    Ok(P3Problem::new(pop, weights, rho)?.closed_form_k(e))
}

/// Stationary `E` of the relaxed objective for fixed `K`, unprojected.
pub fn solve_cubic_e(k: f64, pop: &Population, weights: CostWeights, rho: f64) -> Result<f64> {
    check_k(k, pop.len())?;
    Ok(P3Problem::new(pop, weights, rho)?.stationary_e(k))
}

pub fn acs_optimize(
    pop: &Population,
    weights: CostWeights,
    rho: f64,
    init: ControlPoint,
    eps0: f64,
    max_iters: usize,
) -> Result<AcsTrace> {
    P3Problem::new(pop, weights, rho)?.acs(init, eps0, max_iters)
}

pub fn grid_search_p3(
    pop: &Population,
    weights: CostWeights,
    rho: f64,
    k_range: RangeInclusive<usize>,
    e_range: RangeInclusive<usize>,
) -> Result<ControlPoint> {
    Ok(P3Problem::new(pop, weights, rho)?.grid_argmin(k_range, e_range)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    /// First counterexample, or a summary of what was checked.
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, failure: Option<String>, summary: String) -> PropertyCheck {
    PropertyCheck {
        name: name.to_string(),
        passed: failure.is_none(),
        witness: failure.unwrap_or(summary),
    }
}

fn e_grid(max: usize) -> Vec<f64> {
    (1..=max).map(|e| e as f64).collect()
}

fn log_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| lo * (hi / lo).powf(i as f64 / (steps - 1) as f64))
        .collect()
}

/// Evaluate the solution-structure properties of the relaxed problem on grids
/// built from the population means:
///
/// * `biconvexity`: positive second differences in `K` (γ < 1) and `E`;
/// * `k_star_full_at_gamma0`: strict decrease in `K` for γ = 0;
/// * `k_star_one_at_gamma1`: strict increase in `K` for γ = 1;
/// * `unimodal_e_gamma0` / `unimodal_e_gamma1`: one sign change of the first
///   differences in `E` for each fixed `K`;
/// * `e_star_vs_time_ratio` / `e_star_vs_energy_ratio`: stationary `E`
///   nondecreasing in `t_m/t_p` (γ = 0) and `e_m/e_p` (γ = 1);
/// * `kstar_estar_vs_gamma`: ACS `(K*, E*)` nonincreasing in γ when
///   `e_m/t_m = e_p/t_p` (a proportional variant of the means is used otherwise).
pub fn property_check_suite(pop: &Population, rho: f64) -> Result<PropertyReport> {
    let base = P3Problem::from_means(pop.means(), pop.len(), 0.0, rho)?;
    let n = base.n;
    let e_max_for = |p: &P3Problem| -> usize {
        let e_stat = (1..=n)
            .map(|k| p.stationary_e(k as f64))
            .fold(1.0f64, f64::max);
        ((3.0 * e_stat).ceil() as usize).clamp(10, 5000)
    };
    let e_max = e_max_for(&base).max(e_max_for(&base.with_gamma(1.0)));
    let es = e_grid(e_max);
    let mut checks = Vec::new();

    // biconvexity on the integer grid
    let mut fail = None;
    'outer: for gamma in [0.0, 0.5, 1.0] {
        let p = base.with_gamma(gamma);
        for k in 2..n {
            for &e in es.iter().skip(1).take(es.len().saturating_sub(2)) {
                let kf = k as f64;
                let dkk = p.objective(kf + 1.0, e) - 2.0 * p.objective(kf, e) + p.objective(kf - 1.0, e);
                let dee = p.objective(kf, e + 1.0) - 2.0 * p.objective(kf, e) + p.objective(kf, e - 1.0);
                // γ = 1 makes the objective affine in K
                if (gamma < 1.0 && dkk <= 0.0) || dee <= 0.0 {
                    fail = Some(format!("gamma={gamma} K={k} E={e}: d2K={dkk:e} d2E={dee:e}"));
                    break 'outer;
                }
            }
        }
    }
    checks.push(check(
        "biconvexity",
        fail,
        format!("gamma in {{0, 0.5, 1}}, K in 2..{n}, E in 2..{}", e_max - 1),
    ));

    for (name, gamma, want_decrease) in [
        ("k_star_full_at_gamma0", 0.0, true),
        ("k_star_one_at_gamma1", 1.0, false),
    ] {
        let p = base.with_gamma(gamma);
        let mut fail = None;
        'outer: for &e in &es {
            for k in 1..n {
                let (a, b) = (p.objective(k as f64, e), p.objective(k as f64 + 1.0, e));
                let ok = if want_decrease { b < a } else { b > a };
                if !ok {
                    fail = Some(format!("E={e} K={k}: f(K)={a} f(K+1)={b}"));
                    break 'outer;
                }
            }
        }
        let trace = p.acs(default_init(n), DEFAULT_EPS0, DEFAULT_MAX_ITERS)?;
        let want_k = if want_decrease { n as f64 } else { 1.0 };
        if fail.is_none() && trace.final_integer_point.k != want_k {
            fail = Some(format!("ACS returned K*={} (want {want_k})", trace.final_integer_point.k));
        }
        checks.push(check(name, fail, format!("K* = {want_k} for E in 1..={e_max}")));
    }

    for (name, gamma) in [("unimodal_e_gamma0", 0.0), ("unimodal_e_gamma1", 1.0)] {
        let p = base.with_gamma(gamma);
        let mut fail = None;
        for k in 1..=n {
            let kf = k as f64;
            let diffs: Vec<f64> = es.windows(2).map(|w| p.objective(kf, w[1]) - p.objective(kf, w[0])).collect();
            let changes = diffs.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count();
            let increasing_only = diffs.iter().all(|d| *d > 0.0);
            // a stationary point below E = 2 leaves no room for the decreasing branch
            let ok = if p.stationary_e(kf) < 1.5 {
                changes == 0 && increasing_only || changes == 1 && diffs[0] < 0.0
            } else {
                changes == 1 && diffs[0] < 0.0
            };
            if !ok {
                fail = Some(format!("K={k}: {changes} sign changes over E in 1..={e_max}"));
                break;
            }
        }
        checks.push(check(name, fail, format!("every K in 1..={n}, E in 1..={e_max}")));
    }

    let ratios = log_grid(1e-2, 1e3, 40);
    let ks: Vec<f64> = {
        let mut v = vec![1.0, (n as f64 / 2.0).max(1.0).round(), n as f64];
        v.dedup();
        v
    };
    for (name, gamma) in [("e_star_vs_time_ratio", 0.0), ("e_star_vs_energy_ratio", 1.0)] {
        let mut fail = None;
        'outer: for &k in &ks {
            let mut prev = 0.0;
            for &ratio in &ratios {
                let mut m = base.means;
                if gamma == 0.0 {
                    m.t_m = ratio * m.t_p;
                } else {
                    m.e_m = ratio * m.e_p;
                }
                let e = P3Problem { means: m, ..base.with_gamma(gamma) }.stationary_e(k);
                if e < prev * (1.0 - 1e-12) {
                    fail = Some(format!("K={k} ratio={ratio:.4}: E*={e} < previous {prev}"));
                    break 'outer;
                }
                prev = e;
            }
        }
        checks.push(check(
            name,
            fail,
            format!("K in {ks:?}, ratio log-spaced in [1e-2, 1e3]"),
        ));
    }

    let mut means = base.means;
    let proportional = means.is_proportional(1e-9);
    if !proportional {
        // energies proportional to times with the same total scale
        let s = (means.e_p + means.e_m) / (means.t_p + means.t_m);
        means.e_p = s * means.t_p;
        means.e_m = s * means.t_m;
    }
    let prop_problem = P3Problem { means, ..base };
    let mut fail = None;
    let mut prev: Option<(f64, f64, f64)> = None;
    for i in 0..=10 {
        let gamma = i as f64 / 10.0;
        let trace = prop_problem.with_gamma(gamma).acs(default_init(n), DEFAULT_EPS0, DEFAULT_MAX_ITERS)?;
        let z = trace.continuous();
        if let Some((g0, k0, e0)) = prev {
            let tol = |x: f64| 1e-7 * x.abs().max(1.0);
            if z.k > k0 + tol(k0) || z.e > e0 + tol(e0) {
                fail = Some(format!(
                    "gamma {g0} -> {gamma}: (K*,E*) ({k0:.6},{e0:.6}) -> ({:.6},{:.6})",
                    z.k, z.e
                ));
                break;
            }
        }
        prev = Some((gamma, z.k, z.e));
    }
    checks.push(check(
        "kstar_estar_vs_gamma",
        fail,
        format!(
            "gamma in 0, 0.1, .., 1 ({} means)",
            if proportional { "population" } else { "proportional variant of the" }
        ),
    ));

    Ok(PropertyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeviceProfile;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn homogeneous(n: usize, t_p: f64, t_m: f64, e_p: f64, e_m: f64) -> Population {
        Population::uniform(vec![DeviceProfile::new(t_p, t_m, e_p, e_m).unwrap(); n]).unwrap()
    }

    fn w(g: f64) -> CostWeights {
        CostWeights::new(g).unwrap()
    }

    /// Bisection on the sign of ∂f/∂E over [1e-6, 1e6].
    fn bisect_stationary_e(p: &P3Problem, k: f64) -> f64 {
        let (mut lo, mut hi) = (1e-6, 1e6);
        assert!(p.d_objective_de(k, lo) < 0.0 && p.d_objective_de(k, hi) > 0.0);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if p.d_objective_de(k, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> P3Problem {
        let means = CostMeans::new(
            10f64.powf(rng.gen_range(-2.0..0.0)),
            10f64.powf(rng.gen_range(-1.0..1.0)),
            10f64.powf(rng.gen_range(-4.0..-2.0)),
            10f64.powf(rng.gen_range(-3.0..-1.0)),
        );
        P3Problem::from_means(
            means,
            rng.gen_range(2..=100),
            rng.gen_range(0.0..=1.0),
            10f64.powf(rng.gen_range(1.0..4.0)),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_k_examples() {
        let pop = homogeneous(2, 1.0, 1.0, 1.0, 1.0);
        let k = closed_form_k(1.0, &pop, w(0.5), 1.0).unwrap();
        assert_abs_diff_eq!(k, 2f64.sqrt(), epsilon = 1e-12);
        // stationarity by central finite difference
        let p = P3Problem::new(&pop, w(0.5), 1.0).unwrap();
        let h = 1e-6;
        let d = (p.objective(k + h, 1.0) - p.objective(k - h, 1.0)) / (2.0 * h);
        assert!(d.abs() < 1e-6, "derivative {d}");

        let pop = homogeneous(10, 0.1, 2.0, 1e-3, 2e-2);
        assert_eq!(closed_form_k(5.0, &pop, w(1.0), 100.0).unwrap(), 0.0);
        assert_eq!(closed_form_k(5.0, &pop, w(0.0), 100.0).unwrap(), f64::INFINITY);
        assert_eq!(closed_form_k(5.0, &homogeneous(1, 1.0, 1.0, 1.0, 1.0), w(0.5), 100.0).unwrap(), 1.0);
    }

    #[test]
    fn cubic_e_examples() {
        // γ = 0, t_m = 2 t_p gives c3 = 1; K = N, ρ = 2: E³ + E² − 2 = 0 → E = 1
        let pop = homogeneous(5, 1.0, 2.0, 1.0, 1.0);
        let e = solve_cubic_e(5.0, &pop, w(0.0), 2.0).unwrap();
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);

        // free computation: c3 = 0, E = sqrt(ρ/(1+φ)) = 2 at K = N
        let p = P3Problem::from_means(CostMeans::new(0.0, 1.0, 0.0, 1.0), 5, 0.4, 4.0).unwrap();
        assert_abs_diff_eq!(p.stationary_e(5.0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.stationary_e(5.0), bisect_stationary_e(&p, 5.0), epsilon = 1e-9);

        // zero per-round fixed cost: objective increases in E
        let p = P3Problem::from_means(CostMeans::new(1.0, 0.0, 1.0, 0.0), 5, 0.4, 4.0).unwrap();
        assert_eq!(p.stationary_e(3.0), 0.0);

        assert!(solve_cubic_e(6.0, &pop, w(0.0), 2.0).is_err());
    }

    #[test]
    fn cubic_e_matches_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let p = random_problem(&mut rng);
            let k = rng.gen_range(1.0..=p.n as f64);
            let got = p.stationary_e(k);
            let want = bisect_stationary_e(&p, k);
            assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{p:?} k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn acs_limits_in_gamma() {
        let pop = homogeneous(100, 0.1, 2.0, 1e-3, 2e-2);
        for init in [ControlPoint::new(1.0, 1.0), ControlPoint::new(37.5, 80.0), default_init(100)] {
            let t0 = acs_optimize(&pop, w(0.0), 3750.0, init, DEFAULT_EPS0, DEFAULT_MAX_ITERS).unwrap();
            assert!(t0.converged);
            assert_eq!(t0.final_integer_point.k, 100.0);
            let t1 = acs_optimize(&pop, w(1.0), 3750.0, init, DEFAULT_EPS0, DEFAULT_MAX_ITERS).unwrap();
            assert!(t1.converged);
            assert_eq!(t1.final_integer_point.k, 1.0);
        }
    }

    #[test]
    fn acs_descends_and_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let p = random_problem(&mut rng);
            let trace = p.acs(default_init(p.n), DEFAULT_EPS0, DEFAULT_MAX_ITERS).unwrap();
            assert!(trace.converged, "{p:?}");
            // after the first K update each half-step may not increase the objective
            let vals: Vec<f64> = trace.iterates.iter().skip(1).map(|z| p.objective(z.k, z.e)).collect();
            for pair in vals.windows(2) {
                assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{vals:?}");
            }
            let e_hi = (trace.continuous().e.ceil() as usize * 2).max(200);
            let (_, grid_best) = p.grid_argmin(1..=p.n, 1..=e_hi).unwrap();
            assert!(trace.objective_at_final <= grid_best * (1.0 + 1e-3), "{p:?}");
        }
    }

    #[test]
    fn acs_invariant_to_constant_scaling() {
        use crate::model::BoundParams;
        // only ρ enters the block updates
        let pop = homogeneous(50, 0.1, 2.0, 1e-3, 2e-2);
        let base = BoundParams::absolute(3000.0, 2.0, 0.1).unwrap();
        let a = acs_optimize(&pop, w(0.45), base.ratio_rho(), default_init(50), DEFAULT_EPS0, 100).unwrap();
        for c in [1e-3, 0.7, 13.0, 1e4] {
            let scaled = BoundParams::absolute(3000.0 * c, 2.0 * c, 0.1).unwrap();
            let b = acs_optimize(&pop, w(0.45), scaled.ratio_rho(), default_init(50), DEFAULT_EPS0, 100).unwrap();
            assert_eq!(a.final_integer_point, b.final_integer_point);
            assert_abs_diff_eq!(a.continuous().e, b.continuous().e, epsilon = 1e-9);
            assert_abs_diff_eq!(a.continuous().k, b.continuous().k, epsilon = 1e-9);
        }
    }

    #[test]
    fn acs_reports_non_convergence() {
        let pop = homogeneous(100, 0.1, 2.0, 1e-3, 2e-2);
        let t = acs_optimize(&pop, w(0.45), 3750.0, ControlPoint::new(1.0, 1.0), 1e-300, 1).unwrap();
        assert!(!t.converged);
        assert_eq!(t.iterates.len(), 2);
        assert!(t.final_integer_point.is_integral());
    }

    #[test]
    fn rounding_skips_infeasible_floor() {
        let p = P3Problem::from_means(CostMeans::new(0.1, 2.0, 1e-3, 2e-2), 10, 1.0, 5.0).unwrap();
        let (pt, _) = p.round(1.0, 1.0);
        assert_eq!((pt.k, pt.e), (1.0, 1.0));
    }

    #[test]
    fn grid_search_examples() {
        let pop = homogeneous(10, 0.1, 2.0, 1e-3, 2e-2);
        assert_eq!(
            grid_search_p3(&pop, w(0.3), 100.0, 4..=4, 7..=7).unwrap(),
            ControlPoint::integer(4, 7)
        );
        for e in [1usize, 5, 30] {
            let pt = grid_search_p3(&pop, w(0.0), 100.0, 1..=10, e..=e).unwrap();
            assert_eq!(pt.k, 10.0);
        }
        assert!(grid_search_p3(&pop, w(0.0), 100.0, 0..=10, 1..=2).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(grid_search_p3(&pop, w(0.0), 100.0, empty, 1..=2).is_err());
    }

    #[test]
    fn grid_ties_break_to_smaller_k_then_e() {
        // N = 1 forces K = 1; all objectives distinct in E, so check K ties via a flat problem
        let p = P3Problem::from_means(CostMeans::new(0.0, 0.0, 0.0, 0.0), 5, 0.5, 1.0).unwrap();
        let (pt, v) = p.grid_argmin(1..=5, 1..=5).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!((pt.k, pt.e), (1.0, 1.0));
    }

    #[test]
    fn property_suite_on_homogeneous_population() {
        let pop = homogeneous(20, 1.0, 1.0, 1.0, 1.0);
        let report = property_check_suite(&pop, 50.0).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert_eq!(report.checks.len(), 8);
    }

    #[test]
    fn trace_csv_has_one_row_per_iterate() {
        let p = P3Problem::from_means(CostMeans::new(0.1, 2.0, 1e-3, 2e-2), 100, 0.45, 3750.0).unwrap();
        let t = p.acs(default_init(100), DEFAULT_EPS0, DEFAULT_MAX_ITERS).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,k,e,objective\n"));
        assert_eq!(text.lines().count(), t.iterates.len() + 1);
    }
}
