//! Least-squares polynomial fits of sampled line losses and the k-fold
//! cross-validated choice of polynomial degree.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::poly::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("positions and losses differ in length ({positions} vs {losses})")]
    LengthMismatch { positions: usize, losses: usize },
    #[error("sample set is empty")]
    Empty,
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("degree {degree} needs at least {} samples, got {samples}", degree + 1)]
    TooFewSamples { degree: usize, samples: usize },
    #[error("design matrix is rank deficient for degree {degree}")]
    RankDeficient { degree: usize },
    #[error("{folds}-fold cross-validation needs at least {folds} samples, got {samples}")]
    InvalidFolds { folds: usize, samples: usize },
}

/// Paired step positions and measured batch losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    positions: Vec<f64>,
    losses: Vec<f64>,
}

impl SampleSet {
    pub fn new(positions: Vec<f64>, losses: Vec<f64>) -> Result<Self, FitError> {
        if positions.len() != losses.len() {
            return Err(FitError::LengthMismatch {
                positions: positions.len(),
                losses: losses.len(),
            });
        }
        if positions.is_empty() {
            return Err(FitError::Empty);
        }
        check_finite(&positions, &losses, 0)?;
        Ok(Self { positions, losses })
    }

    /// Appends samples; on error nothing is appended.
    pub fn extend(&mut self, positions: &[f64], losses: &[f64]) -> Result<(), FitError> {
        if positions.len() != losses.len() {
            return Err(FitError::LengthMismatch {
                positions: positions.len(),
                losses: losses.len(),
            });
        }
        check_finite(positions, losses, self.len())?;
        self.positions.extend_from_slice(positions);
        self.losses.extend_from_slice(losses);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.positions.iter().copied().zip(self.losses.iter().copied())
    }

    fn select(&self, indices: impl Iterator<Item = usize>) -> SampleSet {
        let (positions, losses) = indices.map(|i| (self.positions[i], self.losses[i])).unzip();
        SampleSet { positions, losses }
    }
}

fn check_finite(positions: &[f64], losses: &[f64], offset: usize) -> Result<(), FitError> {
    match positions
        .iter()
        .zip(losses)
        .position(|(s, l)| !s.is_finite() || !l.is_finite())
    {
        Some(i) => Err(FitError::NonFinite { index: offset + i }),
        None => Ok(()),
    }
}

/// Outcome of the cross-validated degree search.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub polynomial: Polynomial,
    pub chosen_degree: usize,
    /// Mean-squared CV test error for every degree tried, starting at 0.
    pub cv_test_errors: Vec<f64>,
}

/// Affine map of the sample positions onto `[-1, 1]`.
#[derive(Clone, Copy, Debug)]
struct Rescale {
    center: f64,
    half_width: f64,
}

impl Rescale {
    fn of(positions: &[f64]) -> Self {
        let (lo, hi) = positions
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        let half_width = 0.5 * (hi - lo);
        Self {
            center: 0.5 * (hi + lo),
            half_width: if half_width > 0.0 { half_width } else { 1.0 },
        }
    }

    fn apply(&self, s: f64) -> f64 {
        (s - self.center) / self.half_width
    }
}

/// Least-squares polynomial of the given degree through `samples`.
///
/// Positions are mapped onto `[-1, 1]` and the Vandermonde system is solved
/// through a Householder QR factorization; the coefficients are mapped back
/// so the result is a polynomial in the raw step position.
pub fn fit_polynomial(degree: usize, samples: &SampleSet) -> Result<Polynomial, FitError> {
    let n = samples.len();
    if n == 0 {
        return Err(FitError::Empty);
    }
    if degree + 1 > n {
        return Err(FitError::TooFewSamples { degree, samples: n });
    }
    let rescale = Rescale::of(&samples.positions);
    let design = vandermonde(&samples.positions, degree, rescale);
    let rhs = DVector::from_column_slice(&samples.losses);

    let qr = design.qr();
    let r = qr.r();
    let largest = r.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if r.diagonal().iter().any(|d| d.abs() <= 1e-13 * largest) {
        return Err(FitError::RankDeficient { degree });
    }
    let qt_y = qr.q().transpose() * rhs;
    let coeffs = r
        .solve_upper_triangular(&qt_y)
        .ok_or(FitError::RankDeficient { degree })?;

    let in_unit = Polynomial::new(coeffs.iter().copied().collect());
    Ok(in_unit.compose_affine(1.0 / rescale.half_width, -rescale.center / rescale.half_width))
}

fn vandermonde(positions: &[f64], degree: usize, rescale: Rescale) -> DMatrix<f64> {
    DMatrix::from_fn(positions.len(), degree + 1, |i, k| {
        rescale.apply(positions[i]).powi(k as i32)
    })
}

/// Relative RMS error below which a fit is treated as exact.
const EXACT_FIT_RMS: f64 = 1e-10;

/// Shuffled sample order used to assign cross-validation folds.
pub fn fold_permutation<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

/// Contiguous, near-equal index ranges into a permutation of `len` samples.
/// The first `len % folds` folds carry one extra sample.
pub fn fold_bounds(len: usize, folds: usize) -> Vec<Range<usize>> {
    let base = len / folds;
    let extra = len % folds;
    let mut start = 0;
    (0..folds)
        .map(|f| {
            let size = base + usize::from(f < extra);
            let range = start..start + size;
            start += size;
            range
        })
        .collect()
}

/// Mean over folds of the mean-squared test error of a degree-`degree` fit.
///
/// The samples are shuffled once with `rng` and then cut into contiguous
/// folds; each fold is the test set exactly once.
pub fn kfold_cv_error<R: Rng + ?Sized>(
    degree: usize,
    samples: &SampleSet,
    folds: usize,
    rng: &mut R,
) -> Result<f64, FitError> {
    check_folds(samples.len(), folds)?;
    let order = fold_permutation(samples.len(), rng);
    cv_error(degree, samples, &order, folds)
}

fn check_folds(len: usize, folds: usize) -> Result<(), FitError> {
    if folds < 2 || len < folds {
        return Err(FitError::InvalidFolds {
            folds,
            samples: len,
        });
    }
    Ok(())
}

fn cv_error(
    degree: usize,
    samples: &SampleSet,
    order: &[usize],
    folds: usize,
) -> Result<f64, FitError> {
    let bounds = fold_bounds(order.len(), folds);
    let mut total = 0.0;
    for test in &bounds {
        let train = samples.select(
            order[..test.start]
                .iter()
                .chain(&order[test.end..])
                .copied(),
        );
        let fit = fit_polynomial(degree, &train)?;
        let sq: f64 = order[test.clone()]
            .iter()
            .map(|&i| {
                let r = samples.losses[i] - fit.evaluate(samples.positions[i]);
                r * r
            })
            .sum();
        total += sq / test.len() as f64;
    }
    Ok(total / folds as f64)
}

/// Tries degrees `0, 1, 2, ...` and stops at the first whose CV error rises
/// above its predecessor's, keeping the predecessor. If the error never
/// rises up to `max_degree`, `max_degree` is kept. The chosen degree is then
/// refit on every sample.
///
/// A degree whose CV error is already at the rounding floor of the data
/// (RMS below `1e-10` of the largest loss) cannot be improved upon, so the
/// search stops there too. On noisy data this never triggers.
///
/// All degrees share one fold assignment drawn from `rng`.
pub fn select_degree_and_fit<R: Rng + ?Sized>(
    samples: &SampleSet,
    max_degree: usize,
    folds: usize,
    rng: &mut R,
) -> Result<FitReport, FitError> {
    check_folds(samples.len(), folds)?;
    let order = fold_permutation(samples.len(), rng);

    let scale = samples.losses.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let exact_floor = (EXACT_FIT_RMS * scale).powi(2);

    let mut cv_test_errors = Vec::with_capacity(max_degree + 1);
    let mut last = f64::INFINITY;
    let mut chosen = max_degree;
    for degree in 0..=max_degree {
        let err = cv_error(degree, samples, &order, folds)?;
        cv_test_errors.push(err);
        if last < err || last <= exact_floor {
            chosen = degree - 1;
            break;
        }
        last = err;
    }

    Ok(FitReport {
        polynomial: fit_polynomial(chosen, samples)?,
        chosen_degree: chosen,
        cv_test_errors,
    })
}
