//! Experiment runner behind the `elf-run` binary.
//!
//! A [`RunConfig`] is a flat set of `key = value` settings. Values are
//! resolved from defaults, then an optional config file, then command-line
//! flags. Every output is built in memory first, so a failing run leaves no
//! files behind.
//!
//! Files written to the output directory:
//!
//! | file | columns |
//! |------|---------|
//! | `training_log.csv` | step, event, train_loss, update_step, expected_improvement, real_improvement |
//! | `line_<i>.csv` | round, s, loss |
//! | `fits.csv` | line_index, degree, c0 .. c<max_degree> |
//! | `config.txt` | the resolved configuration |
//! | `cross_section.csv` | s, mean, lower_quartile, median, upper_quartile, batch_0 .. (only with `--dump-cross-section`) |

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Parser;
use nalgebra::DVector;
use thiserror::Error;

use crate::baselines::{run_baseline, BaselineConfig, BaselineError, BaselineKind, Schedule};
use crate::controller::{self, ControllerError, ElfConfig};
use crate::linesearch::LineSearchConfig;
use crate::log::TrainingLog;
use crate::problems::{
    cross_section_profile, empirical_loss, uniform_grid, BatchId, DatasetConfig, DatasetKind,
    NoisyQuadraticEnsemble, QuadraticEnsembleConfig, Split, StochasticProblem, SyntheticClassification,
};
use crate::seeds::{self, SeedStreams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("malformed config line {line}: `{text}`")]
    Malformed { line: usize, text: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: u64 },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Diverged { .. } => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<ControllerError> for RunError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::Diverged { step } => RunError::Diverged { step },
            other => RunError::Invalid(other.to_string()),
        }
    }
}

impl From<BaselineError> for RunError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Diverged { step } => RunError::Diverged { step },
            other => RunError::Invalid(other.to_string()),
        }
    }
}

/// A named choice parsed from and printed as a lowercase word.
macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const NAMES: &'static [&'static str] = &[$($text),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("expected one of {}", Self::NAMES.join(", "))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

named_enum!(ProblemName {
    Quadratic => "quadratic",
    Logistic => "logistic",
    Mlp => "mlp",
});

named_enum!(OptimizerName {
    Elf => "elf",
    Sgd => "sgd",
    Adam => "adam",
});

named_enum!(DatasetName {
    TwoBlobs => "two_blobs",
    XorBlobs => "xor_blobs",
});

named_enum!(ScheduleName {
    Constant => "constant",
    StepDecay => "step_decay",
});

named_enum!(
    /// Parameters the cross-section dump is taken at.
    SnapshotName {
        Initial => "initial",
        Final => "final",
    }
);

/// Conversion between config values and their text form.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_config_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_config_value!(u64, usize, bool, ProblemName, OptimizerName, DatasetName, ScheduleName, SnapshotName);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e| format!("{e}"))
    }
    // Shortest text that parses back to the same value.
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            Err("empty path".into())
        } else {
            Ok(PathBuf::from(s))
        }
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Vec<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|v| f64::parse_value(v.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(f64::render).collect::<Vec<_>>().join(",")
    }
}

macro_rules! run_config {
    ($($(#[$meta:meta])* $field:ident: $t:ty = $default:expr),+ $(,)?) => {
        /// Every setting of one experiment. Field names double as config keys.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $($(#[$meta])* pub $field: $t),+
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default),+ }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),+];

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.render())),+]
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), RunError> {
                let value = value.trim();
                let invalid = |reason: String| RunError::InvalidValue {
                    key: key.to_owned(),
                    value: value.to_owned(),
                    reason,
                };
                match key.trim() {
                    $(stringify!($field) => self.$field = <$t>::parse_value(value).map_err(invalid)?,)+
                    other => return Err(RunError::UnknownKey(other.to_owned())),
                }
                Ok(())
            }
        }
    };
}

run_config! {
    problem: ProblemName = ProblemName::Quadratic,
    optimizer: OptimizerName = OptimizerName::Elf,
    /// Batch loads to train for; line-search and grid-search loads count.
    steps: u64 = 5_000,
    /// Examples per batch for the classification problems.
    batch_size: usize = 32,
    seed: u64 = 0,
    out: PathBuf = PathBuf::from("elf-output"),
    quiet: bool = false,
    dump_cross_section: bool = false,

    // Quadratic ensemble.
    dim: usize = 20,
    train_batches: usize = 100,
    validation_batches: usize = 100,
    eigenvalue_min: f64 = 0.5,
    eigenvalue_max: f64 = 2.0,
    offset_noise: f64 = 0.5,
    constant_max: f64 = 0.1,
    init_scale: f64 = 1.0,

    // Classification.
    dataset: DatasetName = DatasetName::TwoBlobs,
    train_samples: usize = 2048,
    validation_samples: usize = 1024,
    features: usize = 10,
    separation: f64 = 2.75,
    weight_decay: f64 = 1e-3,
    hidden1: usize = 16,
    hidden2: usize = 16,

    // ELF.
    window_size: usize = 150,
    loss_improvement_factor: f64 = 0.01,
    momentum_beta: f64 = 0.4,
    decrease_factor: f64 = 0.2,
    lines_to_average: usize = 3,
    rounds: usize = 5,
    samples_per_round: usize = 100,
    initial_interval_width: f64 = 1.0,
    min_window_size: usize = 50,
    folds: usize = 5,
    max_degree: usize = 10,
    grid_search_candidates: Vec<f64> = vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
    grid_search_probe_steps: usize = 20,
    sample_from_validation: bool = true,

    // SGD and Adam.
    learning_rate: f64 = 1e-2,
    momentum: f64 = 0.9,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    epsilon: f64 = 1e-8,
    schedule: ScheduleName = ScheduleName::Constant,

    // Cross-section dump.
    cross_section_points: usize = 50,
    cross_section_min: f64 = -0.3,
    cross_section_max: f64 = 0.7,
    cross_section_at: SnapshotName = SnapshotName::Final,
    /// Training batch whose negative gradient defines the dump direction.
    cross_section_batch: usize = 0,
}

impl RunConfig {
    /// Reads `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), RunError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| RunError::Malformed {
                line: i + 1,
                text: raw.to_owned(),
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, RunError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), RunError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| RunError::Malformed {
            line: 0,
            text: assignment.to_owned(),
        })?;
        self.set(key, value)
    }

    pub fn quadratic_config(&self) -> QuadraticEnsembleConfig {
        QuadraticEnsembleConfig {
            dim: self.dim,
            train_batches: self.train_batches,
            validation_batches: self.validation_batches,
            eigenvalue_range: (self.eigenvalue_min, self.eigenvalue_max),
            offset_noise: self.offset_noise,
            constant_max: self.constant_max,
            init_scale: self.init_scale,
            seed: SeedStreams::new(self.seed).seed(seeds::DATA),
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            kind: match self.dataset {
                DatasetName::TwoBlobs => DatasetKind::TwoBlobs,
                DatasetName::XorBlobs => DatasetKind::XorBlobs,
            },
            train_samples: self.train_samples,
            validation_samples: self.validation_samples,
            features: self.features,
            separation: self.separation,
            batch_size: self.batch_size,
            seed: SeedStreams::new(self.seed).seed(seeds::DATA),
        }
    }

    pub fn elf_config(&self) -> ElfConfig {
        ElfConfig {
            window_size: self.window_size,
            loss_improvement_factor: self.loss_improvement_factor,
            momentum_beta: self.momentum_beta,
            decrease_factor: self.decrease_factor,
            lines_to_average: self.lines_to_average,
            line_search: LineSearchConfig {
                rounds: self.rounds,
                samples_per_round: self.samples_per_round,
                initial_interval_width: self.initial_interval_width,
                min_window_size: self.min_window_size,
                folds: self.folds,
                max_degree: self.max_degree,
                ..Default::default()
            },
            grid_search_candidates: self.grid_search_candidates.clone(),
            grid_search_probe_steps: self.grid_search_probe_steps,
            sample_from_validation: self.sample_from_validation,
            initial_line_search: true,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            schedule: match self.schedule {
                ScheduleName::Constant => Schedule::Constant,
                ScheduleName::StepDecay => Schedule::StepDecay { total_steps: self.steps },
            },
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Invalid(m.to_owned()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        match self.problem {
            ProblemName::Quadratic => {
                if self.dim == 0 || self.train_batches == 0 || self.validation_batches == 0 {
                    return bad("dim, train_batches and validation_batches must be at least 1");
                }
                if !(self.eigenvalue_min > 0.0 && self.eigenvalue_min <= self.eigenvalue_max && self.eigenvalue_max.is_finite()) {
                    return bad("need 0 < eigenvalue_min <= eigenvalue_max");
                }
                for (name, v) in [
                    ("offset_noise", self.offset_noise),
                    ("constant_max", self.constant_max),
                    ("init_scale", self.init_scale),
                ] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(RunError::Invalid(format!("{name} must be non-negative and finite")));
                    }
                }
            }
            ProblemName::Logistic | ProblemName::Mlp => {
                if self.batch_size == 0 || self.features == 0 || self.train_samples == 0 || self.validation_samples == 0 {
                    return bad("batch_size, features, train_samples and validation_samples must be at least 1");
                }
                if !self.separation.is_finite() {
                    return bad("separation must be finite");
                }
                if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
                    return bad("weight_decay must be non-negative and finite");
                }
                if self.problem == ProblemName::Mlp && (self.hidden1 == 0 || self.hidden2 == 0) {
                    return bad("hidden layer widths must be at least 1");
                }
            }
        }
        match self.optimizer {
            OptimizerName::Elf => self.elf_config().validate()?,
            OptimizerName::Sgd | OptimizerName::Adam => self.baseline_config().validate()?,
        }
        if self.dump_cross_section {
            if self.cross_section_points == 0 {
                return bad("cross_section_points must be at least 1");
            }
            if !(self.cross_section_min.is_finite() && self.cross_section_max.is_finite()) {
                return bad("cross-section range must be finite");
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Box<dyn StochasticProblem> {
        match self.problem {
            ProblemName::Quadratic => Box::new(NoisyQuadraticEnsemble::new(self.quadratic_config())),
            ProblemName::Logistic => {
                Box::new(SyntheticClassification::logistic(self.dataset_config()).with_weight_decay(self.weight_decay))
            }
            ProblemName::Mlp => Box::new(
                SyntheticClassification::mlp(self.dataset_config(), (self.hidden1, self.hidden2))
                    .with_weight_decay(self.weight_decay),
            ),
        }
    }
}

/// Formats a float with 17 significant digits; non-finite values become
/// empty cells.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, format_float)
}

fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn training_log_csv(log: &TrainingLog) -> String {
    csv_text(
        &header(&["step", "event", "train_loss", "update_step", "expected_improvement", "real_improvement"]),
        log.rows.iter().map(|r| {
            vec![
                r.step.to_string(),
                r.event.to_string(),
                format_opt(r.train_loss),
                format_opt(r.update_step),
                format_opt(r.expected_improvement),
                format_opt(r.real_improvement),
            ]
        }),
    )
}

pub fn line_csv(record: &controller::LineSearchRecord) -> String {
    let r = &record.result;
    csv_text(
        &header(&["round", "s", "loss"]),
        r.samples
            .iter()
            .zip(&r.sample_rounds)
            .map(|((s, loss), round)| vec![round.to_string(), format_float(s), format_float(loss)]),
    )
}

pub fn fits_csv(records: &[controller::LineSearchRecord], max_degree: usize) -> String {
    let mut head = header(&["line_index", "degree"]);
    head.extend((0..=max_degree).map(|i| format!("c{i}")));
    csv_text(
        &head,
        records.iter().map(|rec| {
            let poly = &rec.result.fit.polynomial;
            let mut row = vec![rec.index.to_string(), rec.result.fit.chosen_degree.to_string()];
            row.extend((0..=max_degree).map(|i| poly.coefficients().get(i).map_or_else(String::new, |&c| format_float(c))));
            row
        }),
    )
}

/// Training-batch loss curves along `theta + s * direction`.
pub fn cross_section_csv(problem: &dyn StochasticProblem, theta: &DVector<f64>, direction: &DVector<f64>, steps: &[f64]) -> String {
    let profile = cross_section_profile(problem, theta, direction, steps);
    let mut head = header(&["s", "mean", "lower_quartile", "median", "upper_quartile"]);
    head.extend((0..profile.per_batch.len()).map(|b| format!("batch_{b}")));
    csv_text(
        &head,
        (0..steps.len()).map(|j| {
            let mut row = vec![
                format_float(profile.steps[j]),
                format_float(profile.mean[j]),
                format_float(profile.lower_quartile[j]),
                format_float(profile.median[j]),
                format_float(profile.upper_quartile[j]),
            ];
            row.extend(profile.per_batch.iter().map(|b| format_float(b[j])));
            row
        }),
    )
}

/// Unit direction of the negative gradient of one training batch, or the
/// zero vector where that gradient vanishes.
pub fn negative_unit_gradient(problem: &dyn StochasticProblem, theta: &DVector<f64>, batch: usize) -> DVector<f64> {
    let g = problem.batch_gradient(theta, BatchId::train(batch));
    let norm = g.norm();
    if norm > 0.0 {
        -g / norm
    } else {
        g
    }
}

/// Summary numbers of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub line_searches: usize,
    pub final_empirical_loss: f64,
    pub final_accuracy: Option<f64>,
}

/// Outputs of a run, not yet written anywhere.
#[derive(Clone, Debug)]
pub struct Artifacts {
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, String)>,
    pub log: TrainingLog,
    pub theta: DVector<f64>,
    pub summary: RunSummary,
}

impl Artifacts {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Creates `dir` if needed and writes every file into it.
    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        fs::create_dir_all(dir).map_err(|source| RunError::Io {
            context: format!("creating {}", dir.display()),
            source,
        })?;
        for (name, contents) in &self.files {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|source| RunError::Io {
                context: format!("writing {}", path.display()),
                source,
            })?;
        }
        Ok(())
    }
}

/// Runs the configured experiment and renders every output file in memory.
pub fn execute(config: &RunConfig) -> Result<Artifacts, RunError> {
    config.validate()?;
    let problem = config.build_problem();
    let problem = problem.as_ref();
    let theta0 = problem.initial_theta(&mut SeedStreams::new(config.seed).rng(seeds::INIT));

    let (log, theta, searches) = match config.optimizer {
        OptimizerName::Elf => {
            let run = controller::run(problem, &config.elf_config(), config.steps, config.seed)?;
            (run.log, run.state.theta, run.searches)
        }
        OptimizerName::Sgd | OptimizerName::Adam => {
            let kind = if config.optimizer == OptimizerName::Sgd { BaselineKind::Sgd } else { BaselineKind::Adam };
            let run = run_baseline(problem, kind, &config.baseline_config(), config.steps, config.seed)?;
            (run.log, run.theta, Vec::new())
        }
    };

    let final_empirical_loss = empirical_loss(problem, &theta);
    if !final_empirical_loss.is_finite() {
        return Err(RunError::Diverged { step: log.total_steps() });
    }

    let mut files = vec![("training_log.csv".to_owned(), training_log_csv(&log))];
    for rec in &searches {
        files.push((format!("line_{}.csv", rec.index), line_csv(rec)));
    }
    files.push(("fits.csv".to_owned(), fits_csv(&searches, config.max_degree)));
    files.push(("config.txt".to_owned(), config.to_text()));

    if config.dump_cross_section {
        if config.cross_section_batch >= problem.batch_count(Split::Train) {
            return Err(RunError::Invalid("cross_section_batch is out of range".into()));
        }
        let at = match config.cross_section_at {
            SnapshotName::Initial => &theta0,
            SnapshotName::Final => &theta,
        };
        let direction = negative_unit_gradient(problem, at, config.cross_section_batch);
        let grid = uniform_grid(config.cross_section_min, config.cross_section_max, config.cross_section_points);
        files.push(("cross_section.csv".to_owned(), cross_section_csv(problem, at, &direction, &grid)));
    }

    let summary = RunSummary {
        steps: log.total_steps(),
        line_searches: searches.len(),
        final_empirical_loss,
        final_accuracy: problem.accuracy(&theta, Split::Train),
    };
    Ok(Artifacts { files, log, theta, summary })
}

/// [`execute`], then write the files into `config.out`.
pub fn run_experiment(config: &RunConfig) -> Result<Artifacts, RunError> {
    let artifacts = execute(config)?;
    artifacts.write_to(&config.out)?;
    Ok(artifacts)
}

#[derive(Parser, Debug, Clone, Default)]
#[command(name = "elf-run", about = "Train a synthetic problem with ELF, SGD or Adam and write CSV diagnostics")]
pub struct Args {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// quadratic, logistic or mlp.
    #[arg(long, value_name = "NAME")]
    pub problem: Option<String>,
    /// elf, sgd or adam.
    #[arg(long, value_name = "NAME")]
    pub optimizer: Option<String>,
    /// Batch loads to train for.
    #[arg(long, value_name = "N")]
    pub steps: Option<u64>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Also write cross_section.csv.
    #[arg(long)]
    pub dump_cross_section: bool,
    /// Print nothing on success.
    #[arg(long)]
    pub quiet: bool,
}

impl Args {
    /// Defaults, then the config file, then flags and `--set` overrides.
    pub fn resolve(&self) -> Result<RunConfig, RunError> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|source| RunError::Io {
                context: format!("reading {}", path.display()),
                source,
            })?;
            config.apply_text(&text)?;
        }
        let flags = [
            ("problem", self.problem.clone()),
            ("optimizer", self.optimizer.clone()),
            ("steps", self.steps.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                config.set(key, &value)?;
            }
        }
        if self.dump_cross_section {
            config.dump_cross_section = true;
        }
        if self.quiet {
            config.quiet = true;
        }
        for assignment in &self.overrides {
            config.apply_override(assignment)?;
        }
        Ok(config)
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let config = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("elf-run: {e}");
            return e.exit_code();
        }
    };
    match run_experiment(&config) {
        Ok(artifacts) => {
            if !config.quiet {
                let s = &artifacts.summary;
                let accuracy = s.final_accuracy.map_or(String::new(), |a| format!(", train accuracy {:.4}", a));
                println!(
                    "{} on {}: {} steps, {} line searches, final empirical loss {:.6e}{}; wrote {}",
                    config.optimizer,
                    config.problem,
                    s.steps,
                    s.line_searches,
                    s.final_empirical_loss,
                    accuracy,
                    config.out.display()
                );
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("elf-run: {e}");
            e.exit_code()
        }
    }
}
