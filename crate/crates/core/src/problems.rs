//! Desk-scale stochastic problems with batch loss and gradient oracles.
//!
//! Every problem owns a fixed, generated training split and validation split,
//! each cut into batches. The empirical loss is the mean batch loss over all
//! training batches.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::stats::quantile_sorted;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BatchId {
    pub split: Split,
    pub index: usize,
}

impl BatchId {
    pub fn train(index: usize) -> Self {
        Self { split: Split::Train, index }
    }

    pub fn validation(index: usize) -> Self {
        Self { split: Split::Validation, index }
    }
}

/// Batch loss/gradient oracle over a fixed, batched dataset.
///
/// `batch_loss` and `batch_gradient` must be pure functions of
/// `(theta, batch)`.
pub trait StochasticProblem {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn batch_count(&self, split: Split) -> usize;

    fn batch_loss(&self, theta: &DVector<f64>, batch: BatchId) -> f64;

    fn batch_gradient(&self, theta: &DVector<f64>, batch: BatchId) -> DVector<f64>;

    fn loss_and_gradient(&self, theta: &DVector<f64>, batch: BatchId) -> (f64, DVector<f64>) {
        (self.batch_loss(theta, batch), self.batch_gradient(theta, batch))
    }

    fn initial_theta(&self, rng: &mut dyn RngCore) -> DVector<f64>;

    /// Fraction of correctly classified examples, for problems with labels.
    fn accuracy(&self, _theta: &DVector<f64>, _split: Split) -> Option<f64> {
        None
    }
}

/// Mean batch loss over every training batch.
pub fn empirical_loss<P: StochasticProblem + ?Sized>(problem: &P, theta: &DVector<f64>) -> f64 {
    let n = problem.batch_count(Split::Train);
    (0..n)
        .map(|i| problem.batch_loss(theta, BatchId::train(i)))
        .sum::<f64>()
        / n as f64
}

/// Mean batch gradient over every training batch.
pub fn empirical_gradient<P: StochasticProblem + ?Sized>(
    problem: &P,
    theta: &DVector<f64>,
) -> DVector<f64> {
    let n = problem.batch_count(Split::Train);
    let mut g = DVector::zeros(problem.dim());
    for i in 0..n {
        g += problem.batch_gradient(theta, BatchId::train(i));
    }
    g / n as f64
}

/// Batch losses of every training batch along `theta0 + s * direction`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSectionProfile {
    pub steps: Vec<f64>,
    /// `per_batch[b][j]` is the loss of batch `b` at `steps[j]`.
    pub per_batch: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub lower_quartile: Vec<f64>,
    pub median: Vec<f64>,
    pub upper_quartile: Vec<f64>,
}

/// Densely samples every training batch loss along a line.
pub fn cross_section_profile<P: StochasticProblem + ?Sized>(
    problem: &P,
    theta0: &DVector<f64>,
    direction: &DVector<f64>,
    steps: &[f64],
) -> CrossSectionProfile {
    let batches = problem.batch_count(Split::Train);
    let points: Vec<DVector<f64>> = steps.iter().map(|&s| theta0 + direction * s).collect();
    let per_batch: Vec<Vec<f64>> = (0..batches)
        .map(|b| {
            points
                .iter()
                .map(|theta| problem.batch_loss(theta, BatchId::train(b)))
                .collect()
        })
        .collect();

    let mut mean = Vec::with_capacity(steps.len());
    let mut lower_quartile = Vec::with_capacity(steps.len());
    let mut median = Vec::with_capacity(steps.len());
    let mut upper_quartile = Vec::with_capacity(steps.len());
    for j in 0..steps.len() {
        let mut column: Vec<f64> = per_batch.iter().map(|row| row[j]).collect();
        mean.push(column.iter().sum::<f64>() / batches as f64);
        column.sort_by(f64::total_cmp);
        lower_quartile.push(quantile_sorted(&column, 0.25));
        median.push(quantile_sorted(&column, 0.5));
        upper_quartile.push(quantile_sorted(&column, 0.75));
    }
    CrossSectionProfile {
        steps: steps.to_vec(),
        per_batch,
        mean,
        lower_quartile,
        median,
        upper_quartile,
    }
}

/// `count` equally spaced points on `[lo, hi]` (a single point yields `lo`).
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Endless batch order over one split: each epoch visits every batch once in
/// a freshly shuffled order.
#[derive(Clone, Debug)]
pub struct BatchStream {
    split: Split,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    loads: usize,
}

impl BatchStream {
    pub fn new(split: Split, batch_count: usize, seed: u64) -> Self {
        assert!(batch_count > 0, "a batch stream needs at least one batch");
        Self {
            split,
            order: (0..batch_count).collect(),
            cursor: batch_count,
            rng: ChaCha8Rng::seed_from_u64(seed),
            loads: 0,
        }
    }

    pub fn next_batch(&mut self) -> BatchId {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let index = self.order[self.cursor];
        self.cursor += 1;
        self.loads += 1;
        BatchId { split: self.split, index }
    }

    /// Batches handed out so far.
    pub fn loads(&self) -> usize {
        self.loads
    }
}

fn gaussian_vector(dim: usize, rng: &mut dyn RngCore) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

// ---------------------------------------------------------------------------
// Noisy quadratic ensemble
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticEnsembleConfig {
    pub dim: usize,
    pub train_batches: usize,
    pub validation_batches: usize,
    /// Eigenvalues of every batch curvature matrix are drawn from this range.
    pub eigenvalue_range: (f64, f64),
    /// Standard deviation of the batch minimizers around the origin.
    pub offset_noise: f64,
    /// Batch constants are drawn uniformly from `[0, constant_max]`.
    pub constant_max: f64,
    /// Standard deviation of the initial parameters.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for QuadraticEnsembleConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            train_batches: 100,
            validation_batches: 100,
            eigenvalue_range: (0.5, 2.0),
            offset_noise: 0.5,
            constant_max: 0.1,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct Quadratic {
    curvature: DMatrix<f64>,
    center: DVector<f64>,
    constant: f64,
}

impl Quadratic {
    fn loss(&self, theta: &DVector<f64>) -> f64 {
        let delta = theta - &self.center;
        0.5 * delta.dot(&(&self.curvature * &delta)) + self.constant
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.curvature * (theta - &self.center)
    }
}

/// Batch losses `0.5 (theta - b)^T A (theta - b) + c` with one random
/// positive-definite `A`, center `b` and constant `c` per batch.
#[derive(Clone, Debug)]
pub struct NoisyQuadraticEnsemble {
    config: QuadraticEnsembleConfig,
    train: Vec<Quadratic>,
    validation: Vec<Quadratic>,
}

/// The empirical loss of a quadratic ensemble as one quadratic,
/// `0.5 theta^T H theta - theta^T r + k`.
#[derive(Clone, Debug)]
pub struct AverageQuadratic {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl AverageQuadratic {
    pub fn evaluate(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.hessian * theta)) - theta.dot(&self.linear) + self.constant
    }

    pub fn minimizer(&self) -> DVector<f64> {
        self.hessian
            .clone()
            .cholesky()
            .expect("average of positive-definite matrices is positive definite")
            .solve(&self.linear)
    }

    /// Exact minimizing step along `theta + s * direction`.
    pub fn line_minimum(&self, theta: &DVector<f64>, direction: &DVector<f64>) -> f64 {
        let slope = direction.dot(&(&self.hessian * theta)) - direction.dot(&self.linear);
        let curvature = direction.dot(&(&self.hessian * direction));
        -slope / curvature
    }
}

impl NoisyQuadraticEnsemble {
    pub fn new(config: QuadraticEnsembleConfig) -> Self {
        assert!(config.dim > 0 && config.train_batches > 0 && config.validation_batches > 0);
        let (lo, hi) = config.eigenvalue_range;
        assert!(0.0 < lo && lo <= hi, "eigenvalues must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let make = |rng: &mut ChaCha8Rng| {
            let g = DMatrix::<f64>::from_fn(config.dim, config.dim, |_, _| StandardNormal.sample(rng));
            let q = g.qr().q();
            let eig = Uniform::new_inclusive(lo, hi).unwrap();
            let lambda = DVector::from_iterator(config.dim, (0..config.dim).map(|_| eig.sample(rng)));
            let curvature: DMatrix<f64> = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
            let curvature = (&curvature + curvature.transpose()) * 0.5;
            Quadratic {
                curvature,
                center: gaussian_vector(config.dim, rng) * config.offset_noise,
                constant: rng.random::<f64>() * config.constant_max,
            }
        };
        let train = (0..config.train_batches).map(|_| make(&mut rng)).collect();
        let validation = (0..config.validation_batches).map(|_| make(&mut rng)).collect();
        Self { config, train, validation }
    }

    pub fn config(&self) -> &QuadraticEnsembleConfig {
        &self.config
    }

    fn batch(&self, id: BatchId) -> &Quadratic {
        match id.split {
            Split::Train => &self.train[id.index],
            Split::Validation => &self.validation[id.index],
        }
    }

    /// Closed form of the training-split empirical loss.
    pub fn average_quadratic(&self) -> AverageQuadratic {
        let n = self.train.len() as f64;
        let dim = self.config.dim;
        let mut hessian = DMatrix::zeros(dim, dim);
        let mut linear = DVector::zeros(dim);
        let mut constant = 0.0;
        for q in &self.train {
            let ab = &q.curvature * &q.center;
            hessian += &q.curvature;
            constant += 0.5 * q.center.dot(&ab) + q.constant;
            linear += ab;
        }
        AverageQuadratic {
            hessian: hessian / n,
            linear: linear / n,
            constant: constant / n,
        }
    }
}

impl StochasticProblem for NoisyQuadraticEnsemble {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn batch_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train.len(),
            Split::Validation => self.validation.len(),
        }
    }

    fn batch_loss(&self, theta: &DVector<f64>, batch: BatchId) -> f64 {
        self.batch(batch).loss(theta)
    }

    fn batch_gradient(&self, theta: &DVector<f64>, batch: BatchId) -> DVector<f64> {
        self.batch(batch).gradient(theta)
    }

    fn initial_theta(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        gaussian_vector(self.config.dim, rng) * self.config.init_scale
    }
}

// ---------------------------------------------------------------------------
// Synthetic classification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// One Gaussian cluster per class, means at `+-separation` along a fixed
    /// unit direction.
    TwoBlobs,
    /// Two clusters per class placed on the corners of a square in the first
    /// two features (XOR layout); not linearly separable.
    XorBlobs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub features: usize,
    /// Distance of each cluster mean from the origin, in units of the
    /// within-cluster standard deviation.
    pub separation: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::TwoBlobs,
            train_samples: 2048,
            validation_samples: 1024,
            features: 10,
            separation: 2.75,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// A labelled dataset cut into contiguous batches.
#[derive(Clone, Debug)]
struct Batched {
    features: Vec<DVector<f64>>,
    labels: Vec<f64>,
    batch_size: usize,
}

impl Batched {
    fn batch_count(&self) -> usize {
        self.labels.len().div_ceil(self.batch_size)
    }

    fn batch_range(&self, index: usize) -> std::ops::Range<usize> {
        let start = index * self.batch_size;
        start..(start + self.batch_size).min(self.labels.len())
    }
}

fn generate(config: &DatasetConfig, count: usize, rng: &mut ChaCha8Rng) -> Batched {
    let mut features = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let axis = DVector::from_element(config.features, 1.0 / (config.features as f64).sqrt());
    for _ in 0..count {
        let label = rng.random_bool(0.5);
        let noise = gaussian_vector(config.features, rng);
        let mean = match config.kind {
            DatasetKind::TwoBlobs => &axis * if label { config.separation } else { -config.separation },
            DatasetKind::XorBlobs => {
                let corner = rng.random_bool(0.5);
                let (a, b) = match (label, corner) {
                    (true, true) => (1.0, 1.0),
                    (true, false) => (-1.0, -1.0),
                    (false, true) => (1.0, -1.0),
                    (false, false) => (-1.0, 1.0),
                };
                let mut m = DVector::zeros(config.features);
                m[0] = a * config.separation;
                if config.features > 1 {
                    m[1] = b * config.separation;
                }
                m
            }
        };
        features.push(mean + noise);
        labels.push(if label { 1.0 } else { 0.0 });
    }
    Batched { features, labels, batch_size: config.batch_size }
}

/// Binary cross-entropy of a logit against a 0/1 label, computed stably.
fn logistic_loss(logit: f64, label: f64) -> f64 {
    // log(1 + e^z) - y z
    let softplus = if logit > 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    softplus - label * logit
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Linear logit `w . x + b`.
    Logistic,
    /// Two tanh hidden layers followed by a linear logit.
    Mlp { hidden: (usize, usize) },
}

/// Binary classification with cross-entropy loss on a generated dataset.
#[derive(Clone, Debug)]
pub struct SyntheticClassification {
    dataset: DatasetConfig,
    model: ModelKind,
    weight_decay: f64,
    train: Batched,
    validation: Batched,
}

/// Parameter blocks of the MLP inside the flat parameter vector.
struct MlpLayout {
    f: usize,
    h1: usize,
    h2: usize,
}

impl MlpLayout {
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.h1 * self.f
    }
    fn w2(&self) -> usize {
        self.b1() + self.h1
    }
    fn b2(&self) -> usize {
        self.w2() + self.h2 * self.h1
    }
    fn w3(&self) -> usize {
        self.b2() + self.h2
    }
    fn b3(&self) -> usize {
        self.w3() + self.h2
    }
    fn len(&self) -> usize {
        self.b3() + 1
    }
}

struct MlpForward {
    a1: Vec<f64>,
    a2: Vec<f64>,
    logit: f64,
}

impl SyntheticClassification {
    pub fn new(dataset: DatasetConfig, model: ModelKind) -> Self {
        assert!(dataset.batch_size > 0 && dataset.features > 0);
        assert!(dataset.train_samples > 0 && dataset.validation_samples > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(dataset.seed);
        let train = generate(&dataset, dataset.train_samples, &mut rng);
        let validation = generate(&dataset, dataset.validation_samples, &mut rng);
        Self { dataset, model, weight_decay: 0.0, train, validation }
    }

    /// Adds `0.5 * weight_decay * |theta|^2` to every batch loss.
    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        assert!(weight_decay >= 0.0 && weight_decay.is_finite());
        self.weight_decay = weight_decay;
        self
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn logistic(dataset: DatasetConfig) -> Self {
        Self::new(dataset, ModelKind::Logistic)
    }

    pub fn mlp(dataset: DatasetConfig, hidden: (usize, usize)) -> Self {
        Self::new(dataset, ModelKind::Mlp { hidden })
    }

    pub fn dataset(&self) -> &DatasetConfig {
        &self.dataset
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    fn data(&self, split: Split) -> &Batched {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
        }
    }

    fn layout(&self) -> Option<MlpLayout> {
        match self.model {
            ModelKind::Logistic => None,
            ModelKind::Mlp { hidden: (h1, h2) } => Some(MlpLayout {
                f: self.dataset.features,
                h1,
                h2,
            }),
        }
    }

    fn logit(&self, theta: &DVector<f64>, x: &DVector<f64>) -> f64 {
        match self.layout() {
            None => {
                let f = self.dataset.features;
                theta.rows(0, f).dot(x) + theta[f]
            }
            Some(l) => self.mlp_forward(theta, x, &l).logit,
        }
    }

    fn mlp_forward(&self, theta: &DVector<f64>, x: &DVector<f64>, l: &MlpLayout) -> MlpForward {
        let p = theta.as_slice();
        let a1: Vec<f64> = (0..l.h1)
            .map(|j| {
                let row = &p[l.w1() + j * l.f..l.w1() + (j + 1) * l.f];
                (row.iter().zip(x.iter()).map(|(w, xi)| w * xi).sum::<f64>() + p[l.b1() + j]).tanh()
            })
            .collect();
        let a2: Vec<f64> = (0..l.h2)
            .map(|k| {
                let row = &p[l.w2() + k * l.h1..l.w2() + (k + 1) * l.h1];
                (row.iter().zip(&a1).map(|(w, a)| w * a).sum::<f64>() + p[l.b2() + k]).tanh()
            })
            .collect();
        let logit = p[l.w3()..l.w3() + l.h2]
            .iter()
            .zip(&a2)
            .map(|(w, a)| w * a)
            .sum::<f64>()
            + p[l.b3()];
        MlpForward { a1, a2, logit }
    }

    /// Adds `scale * d(logit)/d(theta)` at input `x` into `grad`.
    fn accumulate_logit_gradient(&self, theta: &DVector<f64>, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) {
        match self.layout() {
            None => {
                let f = self.dataset.features;
                for i in 0..f {
                    grad[i] += scale * x[i];
                }
                grad[f] += scale;
            }
            Some(l) => {
                let p = theta.as_slice();
                let fw = self.mlp_forward(theta, x, &l);
                let g = grad.as_mut_slice();
                // Output layer.
                let mut delta2 = vec![0.0; l.h2];
                for k in 0..l.h2 {
                    g[l.w3() + k] += scale * fw.a2[k];
                    delta2[k] = scale * p[l.w3() + k] * (1.0 - fw.a2[k] * fw.a2[k]);
                }
                g[l.b3()] += scale;
                // Second hidden layer.
                let mut delta1 = vec![0.0; l.h1];
                for k in 0..l.h2 {
                    for j in 0..l.h1 {
                        g[l.w2() + k * l.h1 + j] += delta2[k] * fw.a1[j];
                        delta1[j] += delta2[k] * p[l.w2() + k * l.h1 + j];
                    }
                    g[l.b2() + k] += delta2[k];
                }
                // First hidden layer.
                for j in 0..l.h1 {
                    let d = delta1[j] * (1.0 - fw.a1[j] * fw.a1[j]);
                    for i in 0..l.f {
                        g[l.w1() + j * l.f + i] += d * x[i];
                    }
                    g[l.b1() + j] += d;
                }
            }
        }
    }
}

impl StochasticProblem for SyntheticClassification {
    fn name(&self) -> &str {
        match self.model {
            ModelKind::Logistic => "logistic",
            ModelKind::Mlp { .. } => "mlp",
        }
    }

    fn dim(&self) -> usize {
        match self.layout() {
            None => self.dataset.features + 1,
            Some(l) => l.len(),
        }
    }

    fn batch_count(&self, split: Split) -> usize {
        self.data(split).batch_count()
    }

    fn batch_loss(&self, theta: &DVector<f64>, batch: BatchId) -> f64 {
        let data = self.data(batch.split);
        let range = data.batch_range(batch.index);
        let len = range.len() as f64;
        range
            .map(|i| logistic_loss(self.logit(theta, &data.features[i]), data.labels[i]))
            .sum::<f64>()
            / len
            + 0.5 * self.weight_decay * theta.norm_squared()
    }

    fn batch_gradient(&self, theta: &DVector<f64>, batch: BatchId) -> DVector<f64> {
        self.loss_and_gradient(theta, batch).1
    }

    fn loss_and_gradient(&self, theta: &DVector<f64>, batch: BatchId) -> (f64, DVector<f64>) {
        let data = self.data(batch.split);
        let range = data.batch_range(batch.index);
        let len = range.len() as f64;
        let mut grad = DVector::zeros(self.dim());
        let mut loss = 0.0;
        for i in range {
            let x = &data.features[i];
            let y = data.labels[i];
            let z = self.logit(theta, x);
            loss += logistic_loss(z, y);
            self.accumulate_logit_gradient(theta, x, (sigmoid(z) - y) / len, &mut grad);
        }
        if self.weight_decay > 0.0 {
            grad.axpy(self.weight_decay, theta, 1.0);
        }
        (loss / len + 0.5 * self.weight_decay * theta.norm_squared(), grad)
    }

    fn initial_theta(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        match self.layout() {
            None => gaussian_vector(self.dim(), rng) * 0.01,
            Some(l) => {
                let mut theta = gaussian_vector(l.len(), rng);
                let scale_block = |theta: &mut DVector<f64>, start: usize, len: usize, fan_in: usize| {
                    let s = (1.0 / fan_in as f64).sqrt();
                    for v in theta.rows_mut(start, len).iter_mut() {
                        *v *= s;
                    }
                };
                scale_block(&mut theta, l.w1(), l.h1 * l.f, l.f);
                scale_block(&mut theta, l.w2(), l.h2 * l.h1, l.h1);
                scale_block(&mut theta, l.w3(), l.h2, l.h2);
                for range in [l.b1()..l.b1() + l.h1, l.b2()..l.b2() + l.h2, l.b3()..l.b3() + 1] {
                    for i in range {
                        theta[i] = 0.0;
                    }
                }
                theta
            }
        }
    }

    fn accuracy(&self, theta: &DVector<f64>, split: Split) -> Option<f64> {
        let data = self.data(split);
        let correct = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| (self.logit(theta, x) > 0.0) == (y > 0.5))
            .count();
        Some(correct as f64 / data.labels.len() as f64)
    }
}
