//! Recovery of the bound ratio `ρ = A0/B0` from probing runs.
//!
//! Each probe runs FedAvg at some `(K, E)` and records the rounds needed to
//! reach two losses `F_a > F_b`. Under the convergence bound the product
//! `E·(R_b − R_a)` is proportional to `ρ + (1+φ(K))E²`, so any two probes give
//! a linear equation in `ρ`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cost::phi;
use crate::error::{invalid, Error, Result};
use crate::model::{check_k, BoundParams, ControlPoint, RngSeed};
use crate::sim::FedSimulator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimationSample {
    pub k_i: usize,
    pub e_i: usize,
    pub rounds_to_fa: usize,
    pub rounds_to_fb: usize,
    /// Seed of the probing run (informational).
    pub seed: u64,
}

impl EstimationSample {
    pub fn validate(&self, n: usize) -> Result<()> {
        check_k(self.k_i as f64, n)?;
        if self.e_i == 0 {
            return Err(Error::EOutOfRange(0.0));
        }
        if self.rounds_to_fa == 0 || self.rounds_to_fb < self.rounds_to_fa {
            return invalid(format!(
                "rounds (R_a, R_b) = ({}, {}) need 1 <= R_a <= R_b",
                self.rounds_to_fa, self.rounds_to_fb
            ));
        }
        Ok(())
    }

    /// `(1 + φ(K))·E²`
    fn coeff(&self, n: usize) -> f64 {
        let e = self.e_i as f64;
        (1.0 + phi(n, self.k_i as f64)) * e * e
    }

    /// `E·(R_b − R_a)`
    fn spread(&self) -> f64 {
        self.e_i as f64 * (self.rounds_to_fb - self.rounds_to_fa) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub ratio_rho: f64,
    pub pair_estimates: Vec<f64>,
    pub discarded_pairs: usize,
    /// `Σ R_b·E` over all probes.
    pub overhead_iterations: u64,
}

/// Run FedAvg from `w_0 = 0` and record the first rounds whose global loss is
/// at or below `f_a` and `f_b`.
pub fn probe_pair(
    sim: &FedSimulator,
    k: usize,
    e: usize,
    f_a: f64,
    f_b: f64,
    max_rounds: usize,
    seed: &RngSeed,
) -> Result<EstimationSample> {
    if !(f_b < f_a) || !f_b.is_finite() {
        return invalid(format!("estimation losses need F_b < F_a, got F_a = {f_a}, F_b = {f_b}"));
    }
    let mut r_a = None;
    let record = sim.run_until(k, e, seed, max_rounds, f_b, |round, loss| {
        if r_a.is_none() && loss <= f_a {
            r_a = Some(round);
        }
        loss <= f_b
    })?;
    match (r_a, record.complete) {
        (Some(rounds_to_fa), true) => Ok(EstimationSample {
            k_i: k,
            e_i: e,
            rounds_to_fa,
            rounds_to_fb: record.rounds_executed(),
            seed: seed.seed,
        }),
        (None, _) => Err(Error::UnreachableLoss {
            which: "F_a",
            k,
            e,
            threshold: f_a,
            max_rounds,
        }),
        (Some(_), false) => Err(Error::UnreachableLoss {
            which: "F_b",
            k,
            e,
            threshold: f_b,
            max_rounds,
        }),
    }
}

/// Solve the pair equation
/// `E_i ΔR_i / (E_j ΔR_j) = (ρ + c_i E_i²)/(ρ + c_j E_j²)` for `ρ`.
/// `None` for degenerate, nonpositive or nonfinite solutions.
fn solve_pair(a: &EstimationSample, b: &EstimationSample, n: usize) -> Option<f64> {
    let ratio = a.spread() / b.spread();
    let rho = (a.coeff(n) - ratio * b.coeff(n)) / (ratio - 1.0);
    (rho.is_finite() && rho > 0.0).then_some(rho)
}

/// Mean of the per-pair solutions over all unordered sample pairs, after
/// dropping infeasible ones. Samples are put in a canonical order first so
/// the result does not depend on input order.
pub fn estimate_ratio(samples: &[EstimationSample], n: usize) -> Result<EstimationReport> {
    if samples.len() < 2 {
        return invalid(format!("need at least 2 samples, got {}", samples.len()));
    }
    for s in samples {
        s.validate(n)?;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by_key(|s| (s.k_i, s.e_i, s.rounds_to_fa, s.rounds_to_fb, s.seed));

    let mut pair_estimates = Vec::new();
    let mut discarded_pairs = 0;
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            match solve_pair(a, b, n) {
                Some(rho) => pair_estimates.push(rho),
                None => discarded_pairs += 1,
            }
        }
    }
    if pair_estimates.is_empty() {
        return Err(Error::InconsistentSamples);
    }
    let ratio_rho = pair_estimates.iter().sum::<f64>() / pair_estimates.len() as f64;
    Ok(EstimationReport {
        ratio_rho,
        pair_estimates,
        discarded_pairs,
        overhead_iterations: overhead_iterations(samples),
    })
}

pub fn overhead_iterations(samples: &[EstimationSample]) -> u64 {
    samples
        .iter()
        .map(|s| s.rounds_to_fb as u64 * s.e_i as u64)
        .sum()
}

/// Probing iterations relative to the iterations the bound predicts for the
/// final point: `Σ R_b E · gap / (A0 + B0(1+φ(K*))E*²)`. With only the ratio
/// known, `A0 = ρ` and `B0 = 1`, i.e. the result is per unit `B0`.
pub fn overhead_ratio(
    samples: &[EstimationSample],
    bound: &BoundParams,
    final_point: &ControlPoint,
    n: usize,
    f_target_gap: f64,
) -> Result<f64> {
    if !(f_target_gap.is_finite() && f_target_gap > 0.0) {
        return invalid(format!("target gap {f_target_gap} must be positive"));
    }
    final_point.check(n)?;
    if !final_point.is_integral() {
        return invalid("final point must be integral");
    }
    let (a0, b0) = bound.absolutes().unwrap_or((bound.ratio_rho(), 1.0));
    let e = final_point.e;
    let denom = a0 + b0 * (1.0 + phi(n, final_point.k)) * e * e;
    Ok(overhead_iterations(samples) as f64 * f_target_gap / denom)
}

const CSV_HEADER: [&str; 5] = ["k", "e", "rounds_fa", "rounds_fb", "seed"];

pub fn write_samples_csv<W: Write>(samples: &[EstimationSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in samples {
        w.write_record([
            s.k_i.to_string(),
            s.e_i.to_string(),
            s.rounds_to_fa.to_string(),
            s.rounds_to_fb.to_string(),
            s.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<EstimationSample>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!("expected header {}", CSV_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| -> Result<u64> {
            row[i]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad value {:?} in column {}", &row[i], CSV_HEADER[i])))
        };
        out.push(EstimationSample {
            k_i: field(0)? as usize,
            e_i: field(1)? as usize,
            rounds_to_fa: field(2)? as usize,
            rounds_to_fb: field(3)? as usize,
            seed: field(4)?,
        });
    }
    Ok(out)
}

/// Round counts implied by the bound for a planted `(A0, B0, d)`:
/// `R(F) = (A0 + B0(1+φ)E²)/((F − F*)·E) + d`. Used to build test fixtures
/// and synthetic estimation inputs.
pub fn planted_rounds(a0: f64, b0: f64, d: f64, n: usize, k: usize, e: usize, gap: f64) -> f64 {
    let e = e as f64;
    (a0 + b0 * (1.0 + phi(n, k as f64)) * e * e) / (gap * e) + d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(k: usize, e: usize, ra: usize, rb: usize) -> EstimationSample {
        EstimationSample {
            k_i: k,
            e_i: e,
            rounds_to_fa: ra,
            rounds_to_fb: rb,
            seed: 0,
        }
    }

    #[test]
    fn planted_ratio_small() {
        // K = 1 gives φ = 1, so E·ΔR ∝ 10 + 2E²: 12 at E = 1, 18 at E = 2
        let s = [sample(1, 1, 1, 1 + 12), sample(1, 2, 1, 1 + 9)];
        let rep = estimate_ratio(&s, 5).unwrap();
        assert_relative_eq!(rep.ratio_rho, 10.0, max_relative = 1e-12);
        assert_eq!(rep.discarded_pairs, 0);
    }

    #[test]
    fn planted_ratio_full_participation() {
        // K = N: E·ΔR ∝ 10 + E², i.e. 11 and 14
        let s = [sample(4, 1, 3, 3 + 22), sample(4, 2, 3, 3 + 14)];
        let rep = estimate_ratio(&s, 4).unwrap();
        assert_relative_eq!(rep.ratio_rho, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let s = [sample(10, 10, 52, 106), sample(10, 10, 52, 106)];
        assert!(matches!(estimate_ratio(&s, 100), Err(Error::InconsistentSamples)));
    }

    #[test]
    fn diagonal_pair_order_of_magnitude() {
        let s = [sample(10, 10, 52, 106), sample(80, 80, 29, 48)];
        let rep = estimate_ratio(&s, 100).unwrap();
        assert!((3.0e3..4.0e3).contains(&rep.ratio_rho), "{}", rep.ratio_rho);
        assert_eq!(rep.overhead_iterations, 106 * 10 + 48 * 80);
    }

    #[test]
    fn overhead_formula() {
        // denominator ρ + (1+φ)E² = 75 + 25 = 100 at K = N, E = 5
        let s = [sample(3, 5, 4, 10)];
        let bound = BoundParams::from_ratio(75.0, 1.0).unwrap();
        let p = ControlPoint::integer(3, 5);
        assert_relative_eq!(overhead_ratio(&s, &bound, &p, 3, 1.0).unwrap(), 0.5, max_relative = 1e-12);
        let abs = BoundParams::absolute(150.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(overhead_ratio(&s, &abs, &p, 3, 1.0).unwrap(), 0.25, max_relative = 1e-12);

        let tiny = overhead_ratio(&s, &bound, &p, 3, 1e-12).unwrap();
        assert!(tiny < 1e-11);
        let doubled = [sample(3, 5, 4, 20)];
        assert_relative_eq!(overhead_ratio(&doubled, &bound, &p, 3, 1.0).unwrap(), 1.0, max_relative = 1e-12);

        assert!(overhead_ratio(&s, &bound, &p, 3, 0.0).is_err());
        assert!(overhead_ratio(&s, &bound, &ControlPoint::new(2.5, 5.0), 3, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(estimate_ratio(&[sample(1, 1, 1, 2)], 5).is_err());
        assert!(estimate_ratio(&[sample(1, 1, 3, 2), sample(1, 2, 1, 2)], 5).is_err());
        assert!(estimate_ratio(&[sample(6, 1, 1, 2), sample(1, 2, 1, 2)], 5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = vec![sample(10, 10, 52, 106), sample(80, 80, 29, 48)];
        let mut buf = Vec::new();
        write_samples_csv(&s, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("k,e,rounds_fa,rounds_fb,seed\n"));
        assert_eq!(read_samples_csv(buf.as_slice()).unwrap(), s);
        assert!(read_samples_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
