//! The ELF optimizer: SGD with a fixed step size that is re-measured by line
//! searches on the empirical loss whenever training stops improving as fast
//! as the last fit predicted.
//!
//! One run goes through three phases:
//!
//! 1. a short grid search over candidate step sizes that picks the largest
//!    one that still lowers the loss, used to seed the first search;
//! 2. an initial line-search phase;
//! 3. the main loop, which alternates SGD steps with new line-search phases
//!    whenever the trigger predicate holds at a window boundary.
//!
//! Every batch load counts as one step, including loads made by the grid
//! search and by line searches.

use nalgebra::DVector;
use rand::RngCore;
use thiserror::Error;

use crate::linesearch::{elf_line_search_with_baseline, LineSearchConfig, LineSearchError, LineSearchResult};
use crate::log::{Event, LogRow, TrainingLog};
use crate::poly::{find_crossings, Polynomial, RootScan};
use crate::problems::{BatchId, BatchStream, Split, StochasticProblem};
use crate::seeds::{self, SeedStreams};
use crate::stats::mean;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid ELF configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    LineSearch(#[from] LineSearchError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElfConfig {
    pub window_size: usize,
    pub loss_improvement_factor: f64,
    pub momentum_beta: f64,
    pub decrease_factor: f64,
    pub lines_to_average: usize,
    pub line_search: LineSearchConfig,
    pub grid_search_candidates: Vec<f64>,
    pub grid_search_probe_steps: usize,
    pub sample_from_validation: bool,
    /// Run a line-search phase right after the grid search, before any SGD
    /// step.
    pub initial_line_search: bool,
}

impl Default for ElfConfig {
    fn default() -> Self {
        Self {
            window_size: 150,
            loss_improvement_factor: 0.01,
            momentum_beta: 0.4,
            decrease_factor: 0.2,
            lines_to_average: 3,
            line_search: LineSearchConfig::default(),
            grid_search_candidates: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            grid_search_probe_steps: 20,
            sample_from_validation: true,
            initial_line_search: true,
        }
    }
}

impl ElfConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::InvalidConfig(m.to_owned()));
        if self.window_size == 0 {
            return bad("window_size must be at least 1");
        }
        if !(self.loss_improvement_factor >= 0.0) {
            return bad("loss_improvement_factor must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum_beta) {
            return bad("momentum_beta must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.decrease_factor) {
            return bad("decrease_factor must lie in [0, 1)");
        }
        if self.lines_to_average == 0 {
            return bad("lines_to_average must be at least 1");
        }
        if self.grid_search_candidates.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("grid search candidates must be positive and finite");
        }
        if !self.grid_search_candidates.is_empty() && self.grid_search_probe_steps == 0 {
            return bad("grid_search_probe_steps must be at least 1");
        }
        self.line_search.validate().map_err(ControllerError::from)
    }
}

/// Mutable optimizer state. `t` counts batch loads.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub theta: DVector<f64>,
    pub momentum_buffer: DVector<f64>,
    pub update_step: f64,
    /// Training losses of the SGD steps since the last line-search phase.
    pub losses: Vec<f64>,
    pub last_mean_loss: f64,
    pub t: i64,
    pub t_of_last_update: i64,
    pub expected_per_step_improvement: f64,
}

impl OptimizerState {
    pub fn new(theta: DVector<f64>) -> Self {
        let dim = theta.len();
        Self {
            theta,
            momentum_buffer: DVector::zeros(dim),
            update_step: 0.0,
            losses: Vec::new(),
            last_mean_loss: 0.0,
            t: 0,
            t_of_last_update: -1,
            expected_per_step_improvement: f64::INFINITY,
        }
    }

    /// `(real, expected)` improvement over the current window.
    pub fn improvements(&self) -> (f64, f64) {
        let real = self.last_mean_loss - mean(&self.losses);
        let expected = self.last_mean_loss
            - self.expected_per_step_improvement * (self.t - self.t_of_last_update) as f64;
        (real, expected)
    }

    fn direction_from_gradient(&mut self, gradient: &DVector<f64>, beta: f64) -> DVector<f64> {
        self.momentum_buffer *= beta;
        self.momentum_buffer += gradient;
        let norm = self.momentum_buffer.norm();
        if norm > 0.0 {
            -&self.momentum_buffer / norm
        } else {
            DVector::zeros(self.momentum_buffer.len())
        }
    }
}

/// Whether a new line-search phase starts at this iteration: only at window
/// boundaries, and only if the real improvement fell short of the scaled
/// expectation.
pub fn should_trigger(
    t: i64,
    t_of_last_update: i64,
    window_size: usize,
    real_improvement: f64,
    expected_improvement: f64,
    loss_improvement_factor: f64,
) -> bool {
    // A zero factor means a zero threshold, even before any finite
    // expectation exists.
    let threshold = if loss_improvement_factor == 0.0 {
        0.0
    } else {
        expected_improvement * loss_improvement_factor
    };
    (t - t_of_last_update + 1).rem_euclid(window_size as i64 + 1) == 0 && real_improvement <= threshold
}

/// The step `s_target > s_min` at which `fit` has given back a `delta`
/// fraction of the fitted improvement, i.e.
/// `fit(s_target) = fit(s_min) + delta * (fit(0) - fit(s_min))`.
///
/// Searched on `(s_min, bracket_end]`. Returns `s_min` when `delta` is zero
/// or no such point exists there.
pub fn apply_decrease_factor(fit: &Polynomial, s_min: f64, delta: f64, bracket_end: f64) -> f64 {
    if delta == 0.0 || bracket_end <= s_min {
        return s_min;
    }
    let at_min = fit.evaluate(s_min);
    let level = at_min + delta * (fit.evaluate(0.0) - at_min);
    find_crossings(|s| fit.evaluate(s) - level, s_min..=bracket_end, &RootScan::default())
        .into_iter()
        .find(|c| c.rising && c.position > s_min)
        .map_or(s_min, |c| c.position)
}

/// One probe of the initial grid search.
#[derive(Clone, Debug, PartialEq)]
pub struct GridProbe {
    pub step_size: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchOutcome {
    pub selected: f64,
    /// Mean loss of the probe batches at the starting point.
    pub baseline_loss: f64,
    /// Probes in the order they ran (descending step size).
    pub probes: Vec<GridProbe>,
    /// Batch loads: one pass for the baseline plus one per probe.
    pub batches: usize,
}

/// Picks the largest candidate step size whose short unit-gradient SGD probe
/// from `theta0` has a mean loss strictly below the loss at `theta0`, both
/// measured on the same `probe_steps` training batches. Candidates are tried
/// from the largest down; the smallest is returned if none improves.
pub fn initial_grid_search<P: StochasticProblem + ?Sized>(
    problem: &P,
    config: &ElfConfig,
    theta0: &DVector<f64>,
    train: &mut BatchStream,
) -> GridSearchOutcome {
    let mut candidates = config.grid_search_candidates.clone();
    candidates.sort_by(|a, b| b.total_cmp(a));
    if candidates.is_empty() {
        return GridSearchOutcome {
            selected: config.line_search.initial_interval_width,
            baseline_loss: f64::NAN,
            probes: Vec::new(),
            batches: 0,
        };
    }
    let batches: Vec<BatchId> = (0..config.grid_search_probe_steps)
        .map(|_| train.next_batch())
        .collect();
    let baseline_loss = mean(
        &batches
            .iter()
            .map(|&b| problem.batch_loss(theta0, b))
            .collect::<Vec<_>>(),
    );

    let mut probes = Vec::new();
    let mut selected = None;
    for &step_size in &candidates {
        let mut theta = theta0.clone();
        let mut losses = Vec::with_capacity(batches.len());
        for &b in &batches {
            let (loss, g) = problem.loss_and_gradient(&theta, b);
            losses.push(loss);
            let norm = g.norm();
            if norm > 0.0 && norm.is_finite() {
                theta.axpy(-step_size / norm, &g, 1.0);
            }
        }
        let mean_loss = mean(&losses);
        probes.push(GridProbe { step_size, mean_loss });
        if mean_loss < baseline_loss {
            selected = Some(step_size);
            break;
        }
    }
    let batches_used = batches.len() * (1 + probes.len());
    GridSearchOutcome {
        selected: selected.unwrap_or(*candidates.last().expect("non-empty")),
        baseline_loss,
        probes,
        batches: batches_used,
    }
}

/// A line search performed during training, kept for diagnostics.
#[derive(Clone, Debug)]
pub struct LineSearchRecord {
    /// Running index over the whole run.
    pub index: usize,
    /// Step counter when the search started.
    pub started_at: i64,
    pub result: LineSearchResult,
    /// Step actually taken along the line, if the search was valid.
    pub applied_step: Option<f64>,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct ElfRun {
    pub log: TrainingLog,
    pub searches: Vec<LineSearchRecord>,
    pub grid_search: GridSearchOutcome,
    pub state: OptimizerState,
    pub sgd_steps: u64,
}

/// Batch streams and randomness used by a run.
pub struct RunStreams {
    pub train: BatchStream,
    pub validation: BatchStream,
    pub line_search: Box<dyn RngCore>,
}

impl RunStreams {
    pub fn from_seed<P: StochasticProblem + ?Sized>(problem: &P, seed: u64) -> Self {
        let streams = SeedStreams::new(seed);
        Self {
            train: BatchStream::new(
                Split::Train,
                problem.batch_count(Split::Train),
                streams.seed(seeds::TRAIN_BATCHES),
            ),
            validation: BatchStream::new(
                Split::Validation,
                problem.batch_count(Split::Validation),
                streams.seed(seeds::VALIDATION_BATCHES),
            ),
            line_search: Box::new(streams.rng(seeds::LINE_SEARCH)),
        }
    }
}

/// Trains `problem` with ELF until `steps_to_train` batches have been loaded,
/// starting from the problem's initial parameters for `seed`.
pub fn run<P: StochasticProblem + ?Sized>(
    problem: &P,
    config: &ElfConfig,
    steps_to_train: u64,
    seed: u64,
) -> Result<ElfRun, ControllerError> {
    let theta = problem.initial_theta(&mut SeedStreams::new(seed).rng(seeds::INIT));
    run_from(problem, config, steps_to_train, theta, &mut RunStreams::from_seed(problem, seed))
}

pub fn run_from<P: StochasticProblem + ?Sized>(
    problem: &P,
    config: &ElfConfig,
    steps_to_train: u64,
    theta: DVector<f64>,
    streams: &mut RunStreams,
) -> Result<ElfRun, ControllerError> {
    config.validate()?;
    if steps_to_train == 0 {
        return Err(ControllerError::InvalidConfig("steps_to_train must be at least 1".into()));
    }
    let mut state = OptimizerState::new(theta);
    let mut log = TrainingLog::default();
    let mut searches = Vec::new();
    let mut sgd_steps = 0u64;

    let grid = initial_grid_search(problem, config, &state.theta, &mut streams.train);
    let per_pass = config.grid_search_probe_steps as i64;
    let passes = std::iter::once(grid.baseline_loss).chain(grid.probes.iter().map(|p| p.mean_loss));
    for (i, loss) in passes.enumerate().take(grid.batches / config.grid_search_probe_steps.max(1)) {
        state.t += per_pass;
        log.push(LogRow {
            step: state.t as u64,
            event: Event::GridSearch,
            train_loss: Some(loss).filter(|l| l.is_finite()),
            update_step: (i > 0).then(|| grid.probes[i - 1].step_size),
            expected_improvement: None,
            real_improvement: None,
        });
    }
    state.update_step = grid.selected;
    if grid.baseline_loss.is_finite() {
        state.last_mean_loss = grid.baseline_loss;
    }

    if config.initial_line_search {
        trigger_line_searches(
            problem,
            config,
            &mut state,
            streams,
            Some(grid.selected),
            &mut log,
            &mut searches,
        )?;
    }

    while state.t < steps_to_train as i64 {
        let (real, expected) = state.improvements();
        if should_trigger(
            state.t,
            state.t_of_last_update,
            config.window_size,
            real,
            expected,
            config.loss_improvement_factor,
        ) {
            trigger_line_searches(problem, config, &mut state, streams, None, &mut log, &mut searches)?;
            continue;
        }

        let batch = streams.train.next_batch();
        let (loss, gradient) = problem.loss_and_gradient(&state.theta, batch);
        if !loss.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(ControllerError::Diverged { step: state.t as u64 + 1 });
        }
        let direction = state.direction_from_gradient(&gradient, config.momentum_beta);
        state.theta.axpy(state.update_step, &direction, 1.0);
        state.losses.push(loss);
        state.t += 1;
        sgd_steps += 1;
        log.push(LogRow {
            step: state.t as u64,
            event: Event::Sgd,
            train_loss: Some(loss),
            update_step: Some(state.update_step),
            expected_improvement: Some(expected).filter(|v| v.is_finite()),
            real_improvement: Some(real).filter(|v| v.is_finite()),
        });
    }

    Ok(ElfRun {
        log,
        searches,
        grid_search: grid,
        state,
        sgd_steps,
    })
}

/// Runs `lines_to_average` consecutive line searches from the current point,
/// stepping along each valid one immediately, then sets the SGD step size to
/// the mean of the valid steps and resets the improvement window.
///
/// Each search direction is the normalized momentum buffer after adding the
/// gradient of a fresh training batch; that batch's loss doubles as the
/// search's `s = 0` sample. The other samples come from validation batches
/// when `sample_from_validation` is set.
pub fn trigger_line_searches<P: StochasticProblem + ?Sized>(
    problem: &P,
    config: &ElfConfig,
    state: &mut OptimizerState,
    streams: &mut RunStreams,
    first_interval_width: Option<f64>,
    log: &mut TrainingLog,
    searches: &mut Vec<LineSearchRecord>,
) -> Result<(), ControllerError> {
    let mut steps = Vec::new();
    let mut improvements = Vec::new();
    let mut start_loss = state.last_mean_loss;

    for line in 0..config.lines_to_average {
        let started_at = state.t;
        let batch = streams.train.next_batch();
        let (loss0, gradient) = problem.loss_and_gradient(&state.theta, batch);
        if !loss0.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(ControllerError::Diverged { step: state.t as u64 + 1 });
        }
        start_loss = loss0;
        let direction = state.direction_from_gradient(&gradient, config.momentum_beta);

        let mut ls_config = config.line_search.clone();
        if let (0, Some(width)) = (line, first_interval_width) {
            ls_config.initial_interval_width = width;
        }
        let theta0 = state.theta.clone();
        let (split_stream, rng) = if config.sample_from_validation {
            (&mut streams.validation, &mut streams.line_search)
        } else {
            (&mut streams.train, &mut streams.line_search)
        };
        let mut oracle = |s: f64| problem.batch_loss(&(&theta0 + &direction * s), split_stream.next_batch());
        let result = match elf_line_search_with_baseline(&mut oracle, &ls_config, loss0, rng) {
            Err(LineSearchError::NonFiniteLoss { .. }) => {
                return Err(ControllerError::Diverged { step: state.t as u64 + 1 })
            }
            other => other?,
        };
        state.t += result.batches_consumed as i64;

        let applied_step = result.valid_minimum().map(|s_min| {
            let reach = result.samples.positions().iter().fold(0.0f64, |m, &s| m.max(s));
            apply_decrease_factor(&result.fit.polynomial, s_min, config.decrease_factor, reach)
        });
        if let Some(step) = applied_step {
            state.theta.axpy(step, &direction, 1.0);
            steps.push(step);
            improvements.push(result.expected_improvement.unwrap_or(0.0));
        }
        log.push(LogRow {
            step: state.t as u64,
            event: Event::LineSearch,
            train_loss: Some(loss0),
            update_step: applied_step,
            expected_improvement: result.expected_improvement,
            real_improvement: None,
        });
        searches.push(LineSearchRecord {
            index: searches.len(),
            started_at,
            result,
            applied_step,
        });
    }

    if !steps.is_empty() {
        state.update_step = mean(&steps);
        state.expected_per_step_improvement = mean(&improvements) / config.window_size as f64;
    }
    // With no SGD steps since the last phase, the loss at the start of the
    // last search stands in for the window.
    state.last_mean_loss = if state.losses.is_empty() {
        start_loss
    } else {
        mean(&state.losses)
    };
    state.losses.clear();
    state.t_of_last_update = state.t;
    Ok(())
}
