//! Reference optimizers: SGD with momentum and Adam, both with an optional
//! step-decay learning-rate schedule.

use nalgebra::DVector;
use thiserror::Error;

use crate::log::{Event, LogRow, TrainingLog};
use crate::problems::{BatchStream, Split, StochasticProblem};
use crate::seeds::{self, SeedStreams};

/// Learning rates of the robustness-style grid used in comparisons.
pub const LEARNING_RATE_GRID: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid baseline configuration: {0}")]
    InvalidConfig(String),
    #[error("training loss became non-finite at step {step}")]
    Diverged { step: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant,
    /// Divide the rate by 10 once half and again once three quarters of
    /// `total_steps` have been taken.
    StepDecay { total_steps: u64 },
}

impl Schedule {
    /// Learning rate for the step with 0-based index `t`.
    pub fn learning_rate(&self, base: f64, t: u64) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::StepDecay { total_steps } => {
                let passed = [total_steps / 2, total_steps * 3 / 4]
                    .iter()
                    .filter(|&&m| t >= m)
                    .count();
                base * 0.1f64.powi(passed as i32)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub learning_rate: f64,
    /// SGD momentum.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: Schedule,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule: Schedule::Constant,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidConfig(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1 must lie in [0, 1)");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2 must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub theta: DVector<f64>,
    pub velocity: DVector<f64>,
    /// Steps taken so far.
    pub t: u64,
}

impl SgdState {
    pub fn new(theta: DVector<f64>) -> Self {
        let velocity = DVector::zeros(theta.len());
        Self { theta, velocity, t: 0 }
    }
}

/// `v <- momentum * v + g; theta <- theta - lr(t) * v`.
pub fn sgd_step(state: &mut SgdState, gradient: &DVector<f64>, config: &BaselineConfig) {
    let lr = config.schedule.learning_rate(config.learning_rate, state.t);
    state.velocity *= config.momentum;
    state.velocity += gradient;
    state.theta.axpy(-lr, &state.velocity, 1.0);
    state.t += 1;
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub theta: DVector<f64>,
    pub first_moment: DVector<f64>,
    pub second_moment: DVector<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(theta: DVector<f64>) -> Self {
        let n = theta.len();
        Self {
            theta,
            first_moment: DVector::zeros(n),
            second_moment: DVector::zeros(n),
            t: 0,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, gradient: &DVector<f64>, config: &BaselineConfig) {
    let lr = config.schedule.learning_rate(config.learning_rate, state.t);
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..gradient.len() {
        let g = gradient[i];
        let m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        state.theta[i] -= lr * (m / c1) / ((v / c2).sqrt() + config.epsilon);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub log: TrainingLog,
    pub theta: DVector<f64>,
}

/// Trains for exactly `steps` batches, starting from the problem's initial
/// parameters for `seed` and visiting training batches in the seed's order.
pub fn run_baseline<P: StochasticProblem + ?Sized>(
    problem: &P,
    kind: BaselineKind,
    config: &BaselineConfig,
    steps: u64,
    seed: u64,
) -> Result<BaselineRun, BaselineError> {
    let streams = SeedStreams::new(seed);
    let theta = problem.initial_theta(&mut streams.rng(seeds::INIT));
    run_baseline_from(problem, kind, config, steps, theta, seed)
}

pub fn run_baseline_from<P: StochasticProblem + ?Sized>(
    problem: &P,
    kind: BaselineKind,
    config: &BaselineConfig,
    steps: u64,
    theta: DVector<f64>,
    seed: u64,
) -> Result<BaselineRun, BaselineError> {
    config.validate()?;
    let streams = SeedStreams::new(seed);
    let mut batches = BatchStream::new(
        Split::Train,
        problem.batch_count(Split::Train),
        streams.seed(seeds::TRAIN_BATCHES),
    );
    let mut log = TrainingLog::default();
    let mut sgd = SgdState::new(theta.clone());
    let mut adam = AdamState::new(theta);

    for t in 0..steps {
        let batch = batches.next_batch();
        let current = match kind {
            BaselineKind::Sgd => &sgd.theta,
            BaselineKind::Adam => &adam.theta,
        };
        let (loss, gradient) = problem.loss_and_gradient(current, batch);
        if !loss.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(BaselineError::Diverged { step: t + 1 });
        }
        let lr = config.schedule.learning_rate(config.learning_rate, t);
        let event = match kind {
            BaselineKind::Sgd => {
                sgd_step(&mut sgd, &gradient, config);
                Event::Sgd
            }
            BaselineKind::Adam => {
                adam_step(&mut adam, &gradient, config);
                Event::Adam
            }
        };
        log.push(LogRow {
            step: t + 1,
            event,
            train_loss: Some(loss),
            update_step: Some(lr),
            expected_improvement: None,
            real_improvement: None,
        });
    }

    let theta = match kind {
        BaselineKind::Sgd => sgd.theta,
        BaselineKind::Adam => adam.theta,
    };
    Ok(BaselineRun { log, theta })
}
