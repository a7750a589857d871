//! Shared domain types: device cost profiles, client populations, cost
//! weights, convergence-bound constants, control points and seeded RNG
//! streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Per-client unit costs. Times in seconds, energies in joules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Seconds per local iteration.
    pub t_p_unit: f64,
    /// Seconds per communication round.
    pub t_m_unit: f64,
    /// Joules per local iteration.
    pub e_p_unit: f64,
    /// Joules per communication round.
    pub e_m_unit: f64,
}

impl DeviceProfile {
    pub fn new(t_p_unit: f64, t_m_unit: f64, e_p_unit: f64, e_m_unit: f64) -> Result<Self> {
        let p = Self {
            t_p_unit,
            t_m_unit,
            e_p_unit,
            e_m_unit,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.fields() {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("device field {name} = {v} must be positive and finite"));
            }
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, f64); 4] {
        [
            ("t_p_unit", self.t_p_unit),
            ("t_m_unit", self.t_m_unit),
            ("e_p_unit", self.e_p_unit),
            ("e_m_unit", self.e_m_unit),
        ]
    }

    /// Per-round time `t_p·E + t_m`.
    #[inline]
    pub fn round_time(&self, e: f64) -> f64 {
        self.t_p_unit * e + self.t_m_unit
    }

    /// Per-round energy `e_p·E + e_m`.
    #[inline]
    pub fn round_energy(&self, e: f64) -> f64 {
        self.e_p_unit * e + self.e_m_unit
    }
}

/// Population-mean unit costs. These are the only population statistics the
/// approximate objective depends on.
///
/// Unlike [`DeviceProfile`], zero entries are allowed so degenerate cost
/// structures (e.g. free computation) can be analysed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMeans {
    pub t_p: f64,
    pub t_m: f64,
    pub e_p: f64,
    pub e_m: f64,
}

impl CostMeans {
    pub fn new(t_p: f64, t_m: f64, e_p: f64, e_m: f64) -> Self {
        Self { t_p, t_m, e_p, e_m }
    }

    /// True when `e_m/t_m = e_p/t_p` (relative tolerance `tol`).
    pub fn is_proportional(&self, tol: f64) -> bool {
        let lhs = self.e_m * self.t_p;
        let rhs = self.e_p * self.t_m;
        (lhs - rhs).abs() <= tol * lhs.abs().max(rhs.abs())
    }
}

/// An ordered set of clients with their unit costs and data weights `p_k = n_k / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    devices: Vec<DeviceProfile>,
    data_weights: Vec<f64>,
}

impl Population {
    /// Build directly from devices and weights. Weights must be nonnegative
    /// and sum to one.
    pub fn from_parts(devices: Vec<DeviceProfile>, data_weights: Vec<f64>) -> Result<Self> {
        if devices.is_empty() {
            return invalid("population must contain at least one device");
        }
        if devices.len() != data_weights.len() {
            return invalid(format!(
                "{} devices but {} data weights",
                devices.len(),
                data_weights.len()
            ));
        }
        for d in &devices {
            d.validate()?;
        }
        if data_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("data weights must be nonnegative and finite");
        }
        let sum: f64 = data_weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return invalid(format!("data weights sum to {sum}, expected 1"));
        }
        Ok(Self {
            devices,
            data_weights,
        })
    }

    /// Equal data weights `1/N`.
    pub fn uniform(devices: Vec<DeviceProfile>) -> Result<Self> {
        let n = devices.len().max(1);
        let w = vec![1.0 / n as f64; devices.len()];
        Self::from_parts(devices, w)
    }

    /// Same devices, data weights recomputed from per-client sample counts.
    pub fn with_sample_counts(&self, sample_counts: &[usize]) -> Result<Self> {
        build_population(self.devices.clone(), sample_counts)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn devices(&self) -> &[DeviceProfile] {
        &self.devices
    }

    pub fn data_weights(&self) -> &[f64] {
        &self.data_weights
    }

    /// True if every device has identical unit costs.
    pub fn is_homogeneous(&self) -> bool {
        self.devices.windows(2).all(|w| w[0] == w[1])
    }

    pub fn means(&self) -> CostMeans {
        let n = self.devices.len() as f64;
        let mut m = CostMeans::new(0.0, 0.0, 0.0, 0.0);
        for d in &self.devices {
            m.t_p += d.t_p_unit;
            m.t_m += d.t_m_unit;
            m.e_p += d.e_p_unit;
            m.e_m += d.e_m_unit;
        }
        m.t_p /= n;
        m.t_m /= n;
        m.e_p /= n;
        m.e_m /= n;
        m
    }

    /// Per-client round times `t_k = t_{k,p}·E + t_{k,m}` in device order.
    pub fn round_times(&self, e: f64) -> Vec<f64> {
        self.devices.iter().map(|d| d.round_time(e)).collect()
    }
}

/// Build a population with `p_k = n_k / Σ n`.
pub fn build_population(profiles: Vec<DeviceProfile>, sample_counts: &[usize]) -> Result<Population> {
    if profiles.is_empty() {
        return invalid("empty device list");
    }
    if profiles.len() != sample_counts.len() {
        return invalid(format!(
            "{} profiles but {} sample counts",
            profiles.len(),
            sample_counts.len()
        ));
    }
    if let Some(i) = sample_counts.iter().position(|&c| c == 0) {
        return invalid(format!("sample count of client {i} must be positive"));
    }
    let total: f64 = sample_counts.iter().map(|&c| c as f64).sum();
    let weights = sample_counts.iter().map(|&c| c as f64 / total).collect();
    Population::from_parts(profiles, weights)
}

/// Draw `n` devices whose fields are independent normals with the given
/// means and `std = mean · rel_std`, floored at `0.01 · mean`. Data weights are
/// uniform; use [`Population::with_sample_counts`] to attach a dataset.
pub fn draw_heterogeneous_population(
    n: usize,
    means: DeviceProfile,
    rel_std: f64,
    seed: &RngSeed,
) -> Result<Population> {
    if n == 0 {
        return invalid("population size must be >= 1");
    }
    means.validate()?;
    if !(0.0..1.0).contains(&rel_std) {
        return invalid(format!("rel_std = {rel_std} must lie in [0, 1)"));
    }
    let mut rng = seed.rng();
    let mut draw = |mean: f64| -> f64 {
        if rel_std == 0.0 {
            return mean;
        }
        let normal = Normal::new(mean, mean * rel_std).expect("std is finite and positive");
        normal.sample(&mut rng).max(0.01 * mean)
    };
    let devices = (0..n)
        .map(|_| DeviceProfile {
            t_p_unit: draw(means.t_p_unit),
            t_m_unit: draw(means.t_m_unit),
            e_p_unit: draw(means.e_p_unit),
            e_m_unit: draw(means.e_m_unit),
        })
        .collect();
    Population::uniform(devices)
}

/// Blend weight between time (`gamma = 0`) and energy (`gamma = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    gamma: f64,
}

impl CostWeights {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return invalid(format!("gamma = {gamma} must lie in [0, 1]"));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `(1 − γ)·time + γ·energy`.
    #[inline]
    pub fn blend(&self, time: f64, energy: f64) -> f64 {
        (1.0 - self.gamma) * time + self.gamma * energy
    }
}

/// Constants of the convergence bound `(A0 + B0(1+φ(K))E²)/(E·R) ≤ ε`.
///
/// Only the ratio `ρ = A0/B0` is ever identified from training probes; the
/// absolute constants are optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    ratio_rho: f64,
    a0: Option<f64>,
    b0: Option<f64>,
    epsilon: f64,
}

impl BoundParams {
    pub fn from_ratio(ratio_rho: f64, epsilon: f64) -> Result<Self> {
        if !(ratio_rho.is_finite() && ratio_rho > 0.0) {
            return invalid(format!("ratio rho = {ratio_rho} must be positive"));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return invalid(format!("epsilon = {epsilon} must be positive"));
        }
        Ok(Self {
            ratio_rho,
            a0: None,
            b0: None,
            epsilon,
        })
    }

    pub fn absolute(a0: f64, b0: f64, epsilon: f64) -> Result<Self> {
        if !(a0.is_finite() && a0 > 0.0 && b0.is_finite() && b0 > 0.0) {
            return invalid(format!("A0 = {a0}, B0 = {b0} must be positive"));
        }
        let mut p = Self::from_ratio(a0 / b0, epsilon)?;
        p.a0 = Some(a0);
        p.b0 = Some(b0);
        Ok(p)
    }

    pub fn ratio_rho(&self) -> f64 {
        self.ratio_rho
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `(A0, B0)` when both are known.
    pub fn absolutes(&self) -> Option<(f64, f64)> {
        self.a0.zip(self.b0)
    }

    pub fn require_absolutes(&self) -> Result<(f64, f64)> {
        self.absolutes().ok_or(Error::Unidentified)
    }
}

/// Candidate `(K, E)` with an optional round count `R`. Continuous while
/// searching, integral after rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub k: f64,
    pub e: f64,
    pub r: Option<f64>,
}

impl ControlPoint {
    pub fn new(k: f64, e: f64) -> Self {
        Self { k, e, r: None }
    }

    pub fn integer(k: usize, e: usize) -> Self {
        Self::new(k as f64, e as f64)
    }

    /// Checks `1 ≤ k ≤ n`, `e ≥ 1` and `r ≥ 1` when present.
    pub fn check(&self, n: usize) -> Result<()> {
        check_k(self.k, n)?;
        check_e(self.e)?;
        if let Some(r) = self.r {
            if !(r >= 1.0) {
                return invalid(format!("round count r = {r} must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn is_integral(&self) -> bool {
        self.k.fract() == 0.0 && self.e.fract() == 0.0
    }

    /// Integer `(K, E)`; panics on non-integral values.
    pub fn as_usize(&self) -> (usize, usize) {
        assert!(self.is_integral(), "control point {self:?} is not integral");
        (self.k as usize, self.e as usize)
    }
}

pub(crate) fn check_k(k: f64, n: usize) -> Result<()> {
    if k.is_nan() || k < 1.0 || k > n as f64 {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(())
}

pub(crate) fn check_e(e: f64) -> Result<()> {
    if e.is_nan() || e < 1.0 || e.is_infinite() {
        return Err(Error::EOutOfRange(e));
    }
    Ok(())
}

/// A seed plus a label naming its consumer. Identical `(seed, label)` pairs
/// produce identical draw sequences; different labels give independent
/// streams.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_label: String,
}

impl RngSeed {
    pub fn new(seed: u64, stream_label: impl Into<String>) -> Self {
        Self {
            seed,
            stream_label: stream_label.into(),
        }
    }

    /// Same seed, different consumer.
    pub fn relabel(&self, stream_label: impl Into<String>) -> Self {
        Self::new(self.seed, stream_label)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        self.rng_at(&[])
    }

    /// Independent stream keyed by an index path, e.g. `[round, client]`.
    pub fn rng_at(&self, path: &[u64]) -> ChaCha8Rng {
        let mut h = splitmix64(self.seed ^ fnv1a(self.stream_label.as_bytes()));
        for &p in path {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)));
        }
        let mut key = [0u8; 32];
        let mut s = h;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::RngCore;

    fn unit() -> DeviceProfile {
        DeviceProfile::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn default_means() -> DeviceProfile {
        DeviceProfile::new(0.1, 2.0, 1e-3, 2e-2).unwrap()
    }

    #[test]
    fn build_population_normalizes_counts() {
        let p = build_population(vec![unit()], &[10]).unwrap();
        assert_eq!(p.data_weights(), &[1.0]);

        let p = build_population(vec![unit(); 2], &[300, 300]).unwrap();
        assert_eq!(p.data_weights(), &[0.5, 0.5]);

        let p = build_population(vec![unit(); 3], &[100, 200, 700]).unwrap();
        for (w, want) in p.data_weights().iter().zip([0.1, 0.2, 0.7]) {
            assert_abs_diff_eq!(*w, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn build_population_preserves_order() {
        let a = DeviceProfile::new(1.0, 2.0, 3.0, 4.0).unwrap();
        let b = DeviceProfile::new(5.0, 6.0, 7.0, 8.0).unwrap();
        let p = build_population(vec![a, b], &[1, 3]).unwrap();
        assert_eq!(p.devices(), &[a, b]);
    }

    #[test]
    fn build_population_rejects_bad_input() {
        assert!(build_population(vec![], &[]).is_err());
        assert!(build_population(vec![unit(); 2], &[1, 0]).is_err());
        assert!(build_population(vec![unit(); 2], &[1]).is_err());
    }

    #[test]
    fn device_profile_rejects_nonpositive() {
        assert!(DeviceProfile::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(DeviceProfile::new(1.0, f64::INFINITY, 1.0, 1.0).is_err());
        assert!(DeviceProfile::new(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn zero_rel_std_reproduces_means() {
        let m = default_means();
        let p = draw_heterogeneous_population(7, m, 0.0, &RngSeed::new(3, "costs")).unwrap();
        assert!(p.devices().iter().all(|d| *d == m));
        assert!(p.is_homogeneous());
    }

    #[test]
    fn heterogeneous_draw_matches_target_means() {
        let m = default_means();
        let p = draw_heterogeneous_population(100, m, 1.0 / 3.0, &RngSeed::new(2024, "costs")).unwrap();
        let got = p.means();
        for (g, want) in [
            (got.t_p, m.t_p_unit),
            (got.t_m, m.t_m_unit),
            (got.e_p, m.e_p_unit),
            (got.e_m, m.e_m_unit),
        ] {
            assert!((g - want).abs() / want < 0.05, "mean {g} vs {want}");
        }
    }

    #[test]
    fn heterogeneous_draw_respects_floor() {
        let m = default_means();
        // 25_000 devices x 4 fields = 10^5 draws
        let p = draw_heterogeneous_population(25_000, m, 1.0 / 3.0, &RngSeed::new(9, "costs")).unwrap();
        for d in p.devices() {
            assert!(d.t_p_unit >= 0.01 * m.t_p_unit);
            assert!(d.t_m_unit >= 0.01 * m.t_m_unit);
            assert!(d.e_p_unit >= 0.01 * m.e_p_unit);
            assert!(d.e_m_unit >= 0.01 * m.e_m_unit);
        }
        // at rel_std close to 1 the floor is actually exercised
        let p = draw_heterogeneous_population(25_000, m, 0.9, &RngSeed::new(9, "costs")).unwrap();
        let floored = p
            .devices()
            .iter()
            .filter(|d| d.t_p_unit == 0.01 * m.t_p_unit)
            .count();
        assert!(floored > 0);
        assert!(p.devices().iter().all(|d| d.t_p_unit >= 0.01 * m.t_p_unit));
    }

    #[test]
    fn heterogeneous_draw_is_deterministic() {
        let m = default_means();
        let s = RngSeed::new(11, "costs");
        let a = draw_heterogeneous_population(50, m, 1.0 / 3.0, &s).unwrap();
        let b = draw_heterogeneous_population(50, m, 1.0 / 3.0, &s).unwrap();
        assert_eq!(a, b);
        let c = draw_heterogeneous_population(50, m, 1.0 / 3.0, &s.relabel("other")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn heterogeneous_draw_rejects_bad_rel_std() {
        let s = RngSeed::new(1, "costs");
        assert!(draw_heterogeneous_population(3, unit(), 1.0, &s).is_err());
        assert!(draw_heterogeneous_population(3, unit(), -0.1, &s).is_err());
        assert!(draw_heterogeneous_population(0, unit(), 0.1, &s).is_err());
    }

    #[test]
    fn rng_streams_are_keyed_by_label_and_path() {
        let s = RngSeed::new(5, "sgd");
        assert_eq!(s.rng().next_u64(), s.rng().next_u64());
        assert_ne!(s.rng().next_u64(), s.relabel("sampling").rng().next_u64());
        assert_ne!(s.rng_at(&[1, 2]).next_u64(), s.rng_at(&[2, 1]).next_u64());
        assert_eq!(s.rng_at(&[1, 2]).next_u64(), s.rng_at(&[1, 2]).next_u64());
    }

    #[test]
    fn bound_params_invariants() {
        let b = BoundParams::absolute(100.0, 4.0, 0.5).unwrap();
        assert_eq!(b.ratio_rho(), 25.0);
        assert_eq!(b.absolutes(), Some((100.0, 4.0)));
        let r = BoundParams::from_ratio(25.0, 1.0).unwrap();
        assert!(matches!(r.require_absolutes(), Err(Error::Unidentified)));
        assert!(BoundParams::from_ratio(0.0, 1.0).is_err());
        assert!(BoundParams::from_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn control_point_checks() {
        assert!(ControlPoint::new(1.0, 1.0).check(1).is_ok());
        assert!(ControlPoint::new(0.5, 1.0).check(10).is_err());
        assert!(ControlPoint::new(11.0, 1.0).check(10).is_err());
        assert!(ControlPoint::new(2.0, 0.9).check(10).is_err());
        let mut p = ControlPoint::new(2.0, 2.0);
        p.r = Some(0.0);
        assert!(p.check(10).is_err());
    }

    #[test]
    fn cost_weights_range() {
        assert!(CostWeights::new(-0.01).is_err());
        assert!(CostWeights::new(1.01).is_err());
        let w = CostWeights::new(0.25).unwrap();
        assert_eq!(w.blend(4.0, 8.0), 5.0);
    }
}
