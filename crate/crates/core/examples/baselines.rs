// SGD with momentum and Adam over the learning-rate grid on synthetic
// logistic regression.
//
//     cargo run --release --example baselines

use elf::baselines::{run_baseline, BaselineConfig, BaselineKind, LEARNING_RATE_GRID};
use elf::problems::{empirical_loss, DatasetConfig, Split, StochasticProblem, SyntheticClassification};

pub struct BaselineResult {
    pub kind: BaselineKind,
    pub learning_rate: f64,
    pub final_loss: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn run_example() -> Vec<BaselineResult> {
    let problem = SyntheticClassification::logistic(DatasetConfig {
        train_samples: 512,
        validation_samples: 256,
        ..Default::default()
    })
    .with_weight_decay(1e-3);

    let mut results = Vec::new();
    for kind in [BaselineKind::Sgd, BaselineKind::Adam] {
        for lr in LEARNING_RATE_GRID {
            let config = BaselineConfig { learning_rate: lr, ..Default::default() };
            let result = match run_baseline(&problem, kind, &config, 1_000, 0) {
                Ok(run) => BaselineResult {
                    kind,
                    learning_rate: lr,
                    final_loss: Some(empirical_loss(&problem, &run.theta)),
                    accuracy: problem.accuracy(&run.theta, Split::Train),
                },
                Err(_) => BaselineResult { kind, learning_rate: lr, final_loss: None, accuracy: None },
            };
            match result.final_loss {
                Some(loss) => println!(
                    "{kind:?} lr {lr:e}: loss {loss:.5}, accuracy {:.4}",
                    result.accuracy.unwrap_or(f64::NAN)
                ),
                None => println!("{kind:?} lr {lr:e}: diverged"),
            }
            results.push(result);
        }
    }
    results
}

#[allow(dead_code)]
fn main() {
    run_example();
}
