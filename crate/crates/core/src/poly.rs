//! Dense real polynomials in ascending-power form, plus the bracketed
//! root/extremum location used to read step sizes off a fitted line model.
//!
//! Root location deliberately avoids companion matrices: the brackets handed
//! in by the line search are short and known, so a uniform sign-change scan
//! followed by bisection is both cheap and insensitive to nearly degenerate
//! leading coefficients.

use std::fmt;
use std::ops::RangeInclusive;

/// A polynomial `c0 + c1*s + c2*s^2 + ...`.
///
/// Trailing zero coefficients are trimmed on construction, so `degree()` is
/// always the index of the last non-zero coefficient (or 0 for the zero
/// polynomial).
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    coefficients: Vec<f64>,
}

/// Resolution of the grid scan and the bisection tolerance used when locating
/// crossings on a bracket.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootScan {
    pub cells: usize,
    pub tolerance: f64,
}

impl Default for RootScan {
    fn default() -> Self {
        Self {
            cells: 10_000,
            tolerance: 1e-10,
        }
    }
}

/// A point where a scanned function changes sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub position: f64,
    /// `true` when the function goes from negative to positive.
    pub rising: bool,
}

/// A local minimum of a polynomial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub position: f64,
    pub value: f64,
}

impl Polynomial {
    /// Builds a polynomial from ascending coefficients. An empty vector is
    /// treated as the zero polynomial.
    pub fn new(mut coefficients: Vec<f64>) -> Self {
        while coefficients.len() > 1 && coefficients.last() == Some(&0.0) {
            coefficients.pop();
        }
        if coefficients.is_empty() {
            coefficients.push(0.0);
        }
        Self { coefficients }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![value])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Horner evaluation.
    pub fn evaluate(&self, s: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc.mul_add(s, c))
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coefficients.len() == 1 {
            return Polynomial::zero();
        }
        Polynomial::new(
            self.coefficients
                .iter()
                .enumerate()
                .skip(1)
                .map(|(power, &c)| power as f64 * c)
                .collect(),
        )
    }

    /// Substitutes `s = scale * x + shift` and returns the result as a
    /// polynomial in `x`.
    pub fn compose_affine(&self, scale: f64, shift: f64) -> Polynomial {
        let mut acc = vec![0.0; self.coefficients.len()];
        let mut len = 0;
        for &c in self.coefficients.iter().rev() {
            // acc <- acc * (scale*x + shift) + c
            let mut next = vec![0.0; len + 1];
            for (i, &a) in acc.iter().take(len).enumerate() {
                next[i] += a * shift;
                next[i + 1] += a * scale;
            }
            next[0] += c;
            len += 1;
            acc[..len].copy_from_slice(&next[..len]);
        }
        Polynomial::new(acc)
    }

    /// The local minimum inside `bracket` with the smallest `|s|`.
    ///
    /// Minima are the `-` to `+` sign changes of the derivative. Returns
    /// `None` when the polynomial has no interior minimum on the bracket,
    /// which covers constants, lines and polynomials monotone on the bracket.
    pub fn closest_minimum_to_zero(
        &self,
        bracket: RangeInclusive<f64>,
        scan: &RootScan,
    ) -> Option<Minimum> {
        if self.degree() < 2 {
            return None;
        }
        let slope = self.derivative();
        find_crossings(|s| slope.evaluate(s), bracket, scan)
            .into_iter()
            .filter(|c| c.rising)
            .min_by(|a, b| a.position.abs().total_cmp(&b.position.abs()))
            .map(|c| Minimum {
                position: c.position,
                value: self.evaluate(c.position),
            })
    }

    /// The position in `bracket` closest to `anchor` where `|p(s)| = target`.
    ///
    /// Two crossings equally far from the anchor resolve to the larger `s`.
    pub fn solve_for_value_nearest(
        &self,
        target: f64,
        anchor: f64,
        bracket: RangeInclusive<f64>,
        scan: &RootScan,
    ) -> Option<f64> {
        let crossings = find_crossings(|s| self.evaluate(s).abs() - target, bracket, scan);
        let tie = 4.0 * scan.tolerance;
        crossings
            .into_iter()
            .map(|c| c.position)
            .reduce(|best, s| {
                let (d_best, d_s) = ((best - anchor).abs(), (s - anchor).abs());
                if (d_s - d_best).abs() <= tie {
                    best.max(s)
                } else if d_s < d_best {
                    s
                } else {
                    best
                }
            })
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (power, &c) in self.coefficients.iter().enumerate() {
            if c == 0.0 && self.coefficients.len() > 1 {
                continue;
            }
            if !first {
                f.write_str(if c < 0.0 { " - " } else { " + " })?;
            } else if c < 0.0 {
                f.write_str("-")?;
            }
            first = false;
            let mag = c.abs();
            match power {
                0 => write!(f, "{mag}")?,
                1 => write!(f, "{mag}s")?,
                _ => write!(f, "{mag}s^{power}")?,
            }
        }
        if first {
            f.write_str("0")?;
        }
        Ok(())
    }
}

/// Sign changes of `f` on `range`, found by scanning `scan.cells` uniform
/// cells and refining each change by bisection down to `scan.tolerance`.
///
/// Grid points where `f` is exactly zero count as a crossing only when the
/// sign actually flips across them; a run of exact zeros resolves to its
/// midpoint. Crossings are returned in increasing order.
pub fn find_crossings<F>(f: F, range: RangeInclusive<f64>, scan: &RootScan) -> Vec<Crossing>
where
    F: Fn(f64) -> f64,
{
    let (lo, hi) = (*range.start(), *range.end());
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Vec::new();
    }
    let cells = scan.cells.max(1);
    let width = hi - lo;
    let grid = |i: usize| {
        if i == cells {
            hi
        } else {
            lo + width * (i as f64 / cells as f64)
        }
    };

    let mut out = Vec::new();
    // Last grid point with a non-zero value, and where the current zero run began.
    let mut last_nonzero: Option<(f64, f64)> = None;
    let mut zero_run_start: Option<f64> = None;
    let mut zero_run_end = lo;

    for i in 0..=cells {
        let x = grid(i);
        let y = f(x);
        if y.is_nan() {
            last_nonzero = None;
            zero_run_start = None;
            continue;
        }
        if y == 0.0 {
            zero_run_start.get_or_insert(x);
            zero_run_end = x;
            continue;
        }
        if let Some((x_prev, y_prev)) = last_nonzero {
            if (y_prev < 0.0) != (y < 0.0) {
                let position = match zero_run_start {
                    Some(start) => 0.5 * (start + zero_run_end),
                    None => bisect(&f, x_prev, x, y_prev, scan.tolerance),
                };
                out.push(Crossing {
                    position,
                    rising: y > 0.0,
                });
            }
        }
        last_nonzero = Some((x, y));
        zero_run_start = None;
    }
    out
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, fa: f64, tol: f64) -> f64 {
    let negative_at_a = fa < 0.0;
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == negative_at_a {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(c: &[f64]) -> Polynomial {
        Polynomial::new(c.to_vec())
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(p(&[1.0]).evaluate(7.0), 1.0);
        assert_eq!(p(&[0.0, 0.0, 1.0]).evaluate(3.0), 9.0);
        assert_eq!(p(&[1.0, -2.0, 1.0]).evaluate(1.0), 0.0);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(p(&[1.0, -2.0, 1.0]).derivative(), p(&[-2.0, 2.0]));
        assert_eq!(p(&[5.0]).derivative(), p(&[0.0]));
        assert_eq!(p(&[0.0, 0.0, 0.0, 1.0]).derivative(), p(&[0.0, 0.0, 3.0]));
    }

    #[test]
    fn construction_trims_trailing_zeros() {
        assert_eq!(p(&[1.0, 2.0, 0.0, 0.0]).degree(), 1);
        assert_eq!(p(&[0.0, 0.0]).coefficients(), &[0.0]);
        assert_eq!(Polynomial::new(vec![]).coefficients(), &[0.0]);
    }

    #[test]
    fn parabola_vertex() {
        let m = p(&[1.0, -2.0, 1.0])
            .closest_minimum_to_zero(0.0..=10.0, &RootScan::default())
            .unwrap();
        assert!((m.position - 1.0).abs() < 1e-9);
        assert!(m.value.abs() < 1e-12);
    }

    #[test]
    fn line_has_no_minimum() {
        assert!(p(&[0.0, 1.0])
            .closest_minimum_to_zero(0.0..=10.0, &RootScan::default())
            .is_none());
        assert!(p(&[3.0])
            .closest_minimum_to_zero(0.0..=10.0, &RootScan::default())
            .is_none());
    }

    // Quartic with p'(s) = (s - 0.5)(s - 2)(s - 3.5).
    fn two_well_quartic() -> Polynomial {
        // (s-0.5)(s-2)(s-3.5) = s^3 - 6s^2 + 9.75s - 3.5; integrate.
        p(&[0.0, -3.5, 9.75 / 2.0, -2.0, 0.25])
    }

    /// Dense-grid brute force: the first grid local minimum from the left.
    fn grid_first_local_min(q: &Polynomial, lo: f64, hi: f64, h: f64) -> f64 {
        let n = ((hi - lo) / h).round() as usize;
        let v: Vec<f64> = (0..=n).map(|i| q.evaluate(lo + i as f64 * h)).collect();
        (1..n)
            .find(|&i| v[i] <= v[i - 1] && v[i] < v[i + 1])
            .map(|i| lo + i as f64 * h)
            .unwrap()
    }

    #[test]
    fn quartic_nearest_minimum_matches_dense_grid() {
        let q = two_well_quartic();
        let got = q
            .closest_minimum_to_zero(0.0..=10.0, &RootScan::default())
            .unwrap();
        let oracle = grid_first_local_min(&q, 0.0, 10.0, 1e-5);
        assert!((got.position - oracle).abs() < 2e-5, "{got:?} vs {oracle}");
        assert!((got.position - 0.5).abs() < 1e-8);
    }

    #[test]
    fn bracket_around_zero_picks_smallest_magnitude() {
        // Minima at -0.5 and 2.0 (p' = (s+0.5)(s-1)(s-2) has rising roots -0.5, 2).
        let q = p(&[0.0, 1.0, 0.25, -2.5 / 3.0, 0.25]);
        let m = q
            .closest_minimum_to_zero(-3.0..=3.0, &RootScan::default())
            .unwrap();
        assert!((m.position + 0.5).abs() < 1e-8, "{m:?}");
    }

    #[test]
    fn value_crossing_examples() {
        let scan = RootScan::default();
        let s = p(&[1.0, -2.0, 1.0])
            .solve_for_value_nearest(0.25, 1.0, 0.0..=4.0, &scan)
            .unwrap();
        assert!((s - 1.5).abs() < 1e-9, "tie must go to the larger root, got {s}");
        let s = p(&[0.0, 0.0, 1.0])
            .solve_for_value_nearest(4.0, 0.0, 0.0..=10.0, &scan)
            .unwrap();
        assert!((s - 2.0).abs() < 1e-9);
        assert!(p(&[0.0, 0.0, 1.0])
            .solve_for_value_nearest(400.0, 0.0, 0.0..=10.0, &scan)
            .is_none());
    }

    #[test]
    fn value_crossing_on_noisy_cubic_fit_matches_dense_grid() {
        use crate::regression::{fit_polynomial, SampleSet};
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let positions: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..3.0)).collect();
        let losses: Vec<f64> = positions
            .iter()
            .map(|&s| 0.1 + (s - 1.0) * (s - 1.0) * (0.5 + 0.2 * s) + noise.sample(&mut rng))
            .collect();
        let mut sorted = losses.clone();
        sorted.sort_by(f64::total_cmp);
        let target = crate::stats::quantile_sorted(&sorted, 0.75);
        let samples = SampleSet::new(positions, losses).unwrap();
        let fit = fit_polynomial(3, &samples).unwrap();

        let anchor = 1.0;
        let got = fit
            .solve_for_value_nearest(target, anchor, 0.0..=4.0, &RootScan::default())
            .unwrap();

        // Brute force: every grid cell where |p| - target changes sign.
        let h = 1e-5;
        let n = (4.0 / h) as usize;
        let g = |s: f64| fit.evaluate(s).abs() - target;
        let oracle = (0..n)
            .filter(|&i| (g(i as f64 * h) < 0.0) != (g((i + 1) as f64 * h) < 0.0))
            .map(|i| (i as f64 + 0.5) * h)
            .min_by(|a, b| (a - anchor).abs().total_cmp(&(b - anchor).abs()))
            .unwrap();
        assert!((got - oracle).abs() <= h, "{got} vs {oracle}");
    }

    #[test]
    fn compose_affine_matches_direct_substitution() {
        let q = p(&[1.0, -3.0, 0.5, 2.0]);
        let r = q.compose_affine(0.5, -1.0);
        for &x in &[-2.0, -0.3, 0.0, 1.7, 4.0] {
            let direct = q.evaluate(0.5 * x - 1.0);
            assert!((r.evaluate(x) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn display_is_readable() {
        assert_eq!(p(&[1.0, -2.0, 1.0]).to_string(), "1 - 2s + 1s^2");
        assert_eq!(p(&[0.0]).to_string(), "0");
    }

    fn naive(c: &[f64], s: f64) -> f64 {
        c.iter().enumerate().map(|(i, &ci)| ci * s.powi(i as i32)).sum()
    }

    proptest! {
        #[test]
        fn horner_matches_power_sum(
            c in prop::collection::vec(-10.0f64..10.0, 1..=11),
            s in -10.0f64..10.0,
        ) {
            let q = Polynomial::new(c.clone());
            let direct = naive(&c, s);
            let scale: f64 = c.iter().enumerate().map(|(i, ci)| (ci * s.powi(i as i32)).abs()).sum();
            prop_assert!((q.evaluate(s) - direct).abs() <= 1e-10 * scale.max(1.0));
        }

        #[test]
        fn derivative_matches_central_difference(
            c in prop::collection::vec(-10.0f64..10.0, 1..=6),
            s in -2.0f64..2.0,
        ) {
            let q = Polynomial::new(c);
            let h = 1e-6;
            let fd = (q.evaluate(s + h) - q.evaluate(s - h)) / (2.0 * h);
            prop_assert!((q.derivative().evaluate(s) - fd).abs() <= 1e-5 * (1.0 + fd.abs()));
        }

        #[test]
        fn nearest_minimum_is_first_rising_slope_crossing(
            c in prop::collection::vec(-5.0f64..5.0, 3..=7),
        ) {
            let q = Polynomial::new(c);
            let scan = RootScan::default();
            if let Some(m) = q.closest_minimum_to_zero(0.0..=4.0, &scan) {
                let d = q.derivative();
                let eps = 1e-7;
                prop_assert!(d.evaluate(m.position - eps) <= 0.0 || d.evaluate(m.position + eps) >= 0.0);
                let rising_before = find_crossings(|s| d.evaluate(s), 0.0..=4.0, &scan)
                    .into_iter()
                    .filter(|c| c.rising && c.position < m.position - 1e-9)
                    .count();
                prop_assert_eq!(rising_before, 0);
            }
        }

        #[test]
        fn value_crossing_hits_target(
            c in prop::collection::vec(-5.0f64..5.0, 2..=6),
            target in 0.0f64..5.0,
            anchor in 0.0f64..4.0,
        ) {
            let q = Polynomial::new(c);
            if let Some(s) = q.solve_for_value_nearest(target, anchor, 0.0..=4.0, &RootScan::default()) {
                let slope = q.derivative().evaluate(s).abs().max(1.0);
                prop_assert!((q.evaluate(s).abs() - target).abs() <= 1e-8 * slope);
            }
        }
    }
}
