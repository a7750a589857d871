//! Real roots of cubic polynomials by Cardano's method.

use std::f64::consts::PI;

/// Real roots of `a·x³ + b·x² + c·x + d = 0`, ascending, each refined by a
/// couple of Newton steps. Falls back to the quadratic (or linear) formula
/// when `a == 0`.
pub fn real_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    if a == 0.0 {
        return quadratic_roots(b, c, d);
    }
    // x = y − b/(3a) gives the depressed cubic y³ + p·y + q = 0
    let (b, c, d) = (b / a, c / a, d / a);
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);

    let mut roots = if disc > 0.0 {
        // one real root
        let s = disc.sqrt();
        // pick the sign that avoids cancellation
        let u = (-q / 2.0 - s.copysign(q)).cbrt();
        let v = if u != 0.0 { -p / (3.0 * u) } else { 0.0 };
        vec![u + v - shift]
    } else if p == 0.0 {
        // triple root
        vec![(-q).cbrt() - shift]
    } else {
        // three real roots: trigonometric form
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|j| m * (theta - 2.0 * PI * j as f64 / 3.0).cos() - shift)
            .collect()
    };

    for r in roots.iter_mut() {
        *r = polish(*r, |x| ((x + b) * x + c) * x + d, |x| (3.0 * x + 2.0 * b) * x + c);
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Real roots of `a·x² + b·x + c = 0`, ascending.
pub fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    // numerically stable pair
    let t = -0.5 * (b + disc.sqrt().copysign(b));
    let mut r = if t == 0.0 {
        vec![0.0]
    } else {
        vec![t / a, c / t]
    };
    r.sort_by(f64::total_cmp);
    r
}

fn polish(mut x: f64, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..3 {
        let d = df(x);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let next = x - f(x) / d;
        if !next.is_finite() || (f(next).abs() >= f(x).abs()) {
            break;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn three_distinct_roots() {
        // (x−1)(x−2)(x−3)
        let r = real_roots(1.0, -6.0, 11.0, -6.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_real_root() {
        // x³ + x² − 2 = (x − 1)(x² + 2x + 2)
        let r = real_roots(1.0, 1.0, 0.0, -2.0);
        assert_eq!(r.len(), 1);
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn triple_root() {
        // (x − 2)³
        let r = real_roots(1.0, -6.0, 12.0, -8.0);
        assert!(r.iter().all(|x| (x - 2.0).abs() < 1e-5), "{r:?}");
    }

    #[test]
    fn degenerate_quadratic() {
        let r = real_roots(0.0, 1.0, 0.0, -4.0);
        assert_eq!(r, vec![-2.0, 2.0]);
        assert!(quadratic_roots(1.0, 0.0, 1.0).is_empty());
        assert_eq!(quadratic_roots(0.0, 2.0, -4.0), vec![2.0]);
    }

    proptest! {
        #[test]
        fn roots_satisfy_polynomial(r1 in -50.0f64..50.0, r2 in -50.0f64..50.0, r3 in -50.0f64..50.0, a in 0.1f64..10.0) {
            let b = -a * (r1 + r2 + r3);
            let c = a * (r1 * r2 + r1 * r3 + r2 * r3);
            let d = -a * r1 * r2 * r3;
            let mut want = [r1, r2, r3];
            want.sort_by(f64::total_cmp);
            let got = real_roots(a, b, c, d);
            // close roots may merge numerically; every root found must be near a true root
            for g in &got {
                prop_assert!(want.iter().any(|w| (g - w).abs() < 1e-4 * (1.0 + w.abs())), "{got:?} vs {want:?}");
            }
            let min_gap = (want[1] - want[0]).min(want[2] - want[1]);
            if min_gap > 1e-2 {
                prop_assert_eq!(got.len(), 3);
            }
        }
    }
}
