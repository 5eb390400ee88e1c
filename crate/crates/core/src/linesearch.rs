//! Line search on the empirical loss by fitting polynomials to batch losses
//! sampled along a fixed line `theta0 + s * d`.
//!
//! Each search runs `rounds` rounds. A round draws `samples_per_round` step
//! positions uniformly from `[0, interval_width]`, measures one fresh batch
//! loss per position, refits a polynomial (degree picked by k-fold CV) to
//! all samples collected so far, and reads off the minimum closest to
//! `s = 0`. Between rounds the interval is resized around that minimum so
//! the sampled point cloud stays wider than it is high.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::poly::{Polynomial, RootScan};
use crate::regression::{select_degree_and_fit, FitError, FitReport, SampleSet};
use crate::stats::quantile_sorted;

/// Multiple of the sampled reach searched for a minimum, and of the
/// minimum searched for the interval-resizing crossing.
const BRACKET_FACTOR: f64 = 4.0;

/// Anything that can measure the loss of a fresh batch at step `s` along a
/// fixed line.
pub trait LineOracle {
    fn loss_at(&mut self, s: f64) -> f64;
}

impl<F: FnMut(f64) -> f64> LineOracle for F {
    fn loss_at(&mut self, s: f64) -> f64 {
        self(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineSearchError {
    #[error("invalid line search configuration: {0}")]
    InvalidConfig(String),
    #[error("oracle returned a non-finite loss at s = {position}")]
    NonFiniteLoss { position: f64 },
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchConfig {
    /// Interval adaptations `k`.
    pub rounds: usize,
    /// Losses sampled per adaptation `n`.
    pub samples_per_round: usize,
    pub initial_interval_width: f64,
    pub min_window_size: usize,
    pub folds: usize,
    pub max_degree: usize,
    /// Measure one extra loss at `s = 0` before the first round.
    pub measure_baseline: bool,
    pub scan: RootScan,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            samples_per_round: 100,
            initial_interval_width: 1.0,
            min_window_size: 50,
            folds: 5,
            max_degree: 10,
            measure_baseline: true,
            scan: RootScan::default(),
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<(), LineSearchError> {
        let bad = |msg: &str| Err(LineSearchError::InvalidConfig(msg.to_owned()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.samples_per_round < self.folds {
            return bad("samples_per_round must be at least folds");
        }
        if !(self.initial_interval_width > 0.0 && self.initial_interval_width.is_finite()) {
            return bad("initial_interval_width must be positive and finite");
        }
        if self.min_window_size == 0 {
            return bad("min_window_size must be at least 1");
        }
        Ok(())
    }

    /// Batches one search loads, baseline included.
    pub fn batches_per_search(&self) -> usize {
        self.rounds * self.samples_per_round + usize::from(self.measure_baseline)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchResult {
    /// Fitted minimum nearest to zero. Taken from the last round, or from
    /// the most recent earlier round if the last fit has no minimum (the
    /// degree search can settle on a constant when the samples straddle the
    /// vertex symmetrically).
    pub minimum_position: Option<f64>,
    /// `p(0) - p(minimum_position)` of `fit`.
    pub expected_improvement: Option<f64>,
    pub batches_consumed: usize,
    /// The fit `minimum_position` was read from (the last fit if none had one).
    pub fit: FitReport,
    /// Round that produced `minimum_position`.
    pub minimum_round: Option<usize>,
    pub samples: SampleSet,
    /// Round index of every sample (the baseline belongs to round 0).
    pub sample_rounds: Vec<usize>,
    /// Sampling interval width used in each round.
    pub interval_widths: Vec<f64>,
}

impl LineSearchResult {
    /// A search is usable only if it found a strictly positive minimum.
    pub fn is_valid(&self) -> bool {
        self.valid_minimum().is_some()
    }

    pub fn valid_minimum(&self) -> Option<f64> {
        self.minimum_position.filter(|&s| s > 0.0)
    }
}

/// Runs a line search, measuring every loss (including the `s = 0`
/// baseline) through `oracle`. `batches_consumed` equals the number of
/// oracle calls.
pub fn elf_line_search<O, R>(
    oracle: &mut O,
    config: &LineSearchConfig,
    rng: &mut R,
) -> Result<LineSearchResult, LineSearchError>
where
    O: LineOracle + ?Sized,
    R: Rng + ?Sized,
{
    search(oracle, config, None, rng)
}

/// Like [`elf_line_search`], but the `s = 0` loss was already measured by
/// the caller (for instance on the batch that defined the direction). It
/// still counts toward `batches_consumed`.
pub fn elf_line_search_with_baseline<O, R>(
    oracle: &mut O,
    config: &LineSearchConfig,
    baseline_loss: f64,
    rng: &mut R,
) -> Result<LineSearchResult, LineSearchError>
where
    O: LineOracle + ?Sized,
    R: Rng + ?Sized,
{
    search(oracle, config, Some(baseline_loss), rng)
}

fn search<O, R>(
    oracle: &mut O,
    config: &LineSearchConfig,
    baseline: Option<f64>,
    rng: &mut R,
) -> Result<LineSearchResult, LineSearchError>
where
    O: LineOracle + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    let mut cv_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut batches = 0usize;
    let mut measure = |s: f64, batches: &mut usize| {
        *batches += 1;
        let loss = oracle.loss_at(s);
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(LineSearchError::NonFiniteLoss { position: s })
        }
    };

    let mut samples = SampleSet::default();
    let mut sample_rounds = Vec::new();
    if config.measure_baseline {
        let loss = match baseline {
            Some(loss) => {
                batches += 1;
                loss
            }
            None => measure(0.0, &mut batches)?,
        };
        samples.extend(&[0.0], &[loss])?;
        sample_rounds.push(0);
    }

    let mut width = config.initial_interval_width;
    let mut interval_widths = Vec::with_capacity(config.rounds);
    let mut last: Option<(FitReport, Option<f64>)> = None;
    // Most recent round whose fit had a minimum.
    let mut best: Option<(usize, FitReport, f64)> = None;

    for round in 0..config.rounds {
        if let Some((fit, minimum)) = &last {
            width = next_interval_width(*minimum, &samples, &fit.polynomial, width, config);
        }
        interval_widths.push(width);

        let mut positions: Vec<f64> = (0..config.samples_per_round)
            .map(|_| rng.random::<f64>() * width)
            .collect();
        positions.sort_by(f64::total_cmp);
        let losses = positions
            .iter()
            .map(|&s| measure(s, &mut batches))
            .collect::<Result<Vec<_>, _>>()?;
        samples.extend(&positions, &losses)?;
        sample_rounds.extend(std::iter::repeat_n(round, positions.len()));

        let fit = select_degree_and_fit(&samples, config.max_degree, config.folds, &mut cv_rng)?;
        let reach = samples.positions().iter().fold(width, |m, &s| m.max(s));
        let minimum = fit
            .polynomial
            .closest_minimum_to_zero(0.0..=BRACKET_FACTOR * reach, &config.scan)
            .map(|m| m.position);
        if let Some(m) = minimum {
            best = Some((round, fit.clone(), m));
        }
        last = Some((fit, minimum));
    }

    let (last_fit, last_minimum) = last.expect("at least one round");
    let (fit, minimum_position, minimum_round) = match (last_minimum, best) {
        (Some(m), _) => (last_fit, Some(m), Some(config.rounds - 1)),
        (None, Some((round, fit, m))) => (fit, Some(m), Some(round)),
        (None, None) => (last_fit, None, None),
    };
    let expected_improvement = minimum_position
        .map(|s| fit.polynomial.evaluate(0.0) - fit.polynomial.evaluate(s));
    Ok(LineSearchResult {
        minimum_position,
        expected_improvement,
        batches_consumed: batches,
        fit,
        minimum_round,
        samples,
        sample_rounds,
        interval_widths,
    })
}

fn next_interval_width(
    minimum: Option<f64>,
    samples: &SampleSet,
    fit: &Polynomial,
    width: f64,
    config: &LineSearchConfig,
) -> f64 {
    match minimum {
        Some(m) if m > 0.0 => {
            chose_sample_interval(m, samples, fit, config.min_window_size, width, &config.scan)
        }
        // No minimum yet: widen while the fit is flat or still descends at
        // the far end, otherwise look closer to zero.
        _ => {
            let reach = samples.positions().iter().fold(width, |m, &s| m.max(s));
            if fit.degree() == 0 || fit.derivative().evaluate(BRACKET_FACTOR * reach) < 0.0 {
                BRACKET_FACTOR * width
            } else {
                0.5 * width
            }
        }
    }
}

/// Indices of the samples used to pick the resizing target: all positions in
/// `[0, 2 * minimum]`, or the `min_window_size` positions nearest to the
/// minimum when that range holds too few.
pub fn sample_window(minimum: f64, samples: &SampleSet, min_window_size: usize) -> Vec<usize> {
    let positions = samples.positions();
    let inside: Vec<usize> = (0..positions.len())
        .filter(|&i| (0.0..=2.0 * minimum).contains(&positions[i]))
        .collect();
    if inside.len() >= min_window_size {
        return inside;
    }
    let mut by_distance: Vec<usize> = (0..positions.len()).collect();
    by_distance.sort_by(|&a, &b| {
        (positions[a] - minimum)
            .abs()
            .total_cmp(&(positions[b] - minimum).abs())
            .then(a.cmp(&b))
    });
    by_distance.truncate(min_window_size);
    by_distance
}

/// New sampling interval width around the current minimum.
///
/// The target is the third quartile of the window's losses; the new width is
/// the position nearest to `minimum` where `|fit|` reaches it, searched on
/// `[0, max(4 * minimum, previous_width)]`. Without such a crossing the width
/// falls back to twice the larger of the minimum and the smallest positive
/// sampled position.
pub fn chose_sample_interval(
    minimum: f64,
    samples: &SampleSet,
    fit: &Polynomial,
    min_window_size: usize,
    previous_width: f64,
    scan: &RootScan,
) -> f64 {
    let window = sample_window(minimum, samples, min_window_size);
    let mut window_losses: Vec<f64> = window.iter().map(|&i| samples.losses()[i]).collect();
    window_losses.sort_by(f64::total_cmp);
    let target = quantile_sorted(&window_losses, 0.75);

    let bracket_end = (BRACKET_FACTOR * minimum).max(previous_width);
    fit.solve_for_value_nearest(target, minimum, 0.0..=bracket_end, scan)
        .unwrap_or_else(|| {
            let smallest_positive = samples
                .positions()
                .iter()
                .copied()
                .filter(|&s| s > 0.0)
                .fold(f64::INFINITY, f64::min);
            let base = if smallest_positive.is_finite() {
                minimum.max(smallest_positive)
            } else {
                minimum
            };
            2.0 * base
        })
}
