// Trains a noisy quadratic ensemble with ELF and prints where the budget
// went.
//
//     cargo run --release --example train_elf

use elf::controller::{run, ElfConfig, ElfRun};
use elf::log::Event;
use elf::problems::{empirical_loss, NoisyQuadraticEnsemble, QuadraticEnsembleConfig, StochasticProblem};
use elf::seeds::{self, SeedStreams};

pub fn run_example() -> ElfRun {
    let problem = NoisyQuadraticEnsemble::new(QuadraticEnsembleConfig {
        dim: 10,
        train_batches: 50,
        validation_batches: 50,
        ..Default::default()
    });
    let config = ElfConfig::default();
    let seed = 0;
    let start = problem.initial_theta(&mut SeedStreams::new(seed).rng(seeds::INIT));

    let result = run(&problem, &config, 6_000, seed).expect("quadratics do not diverge");

    let avg = problem.average_quadratic();
    println!("grid search picked {}", result.grid_search.selected);
    for rec in &result.searches {
        println!(
            "line search {} at step {}: step {:?}, expected improvement {:?}",
            rec.index, rec.started_at, rec.applied_step, rec.result.expected_improvement
        );
    }
    println!(
        "batches: {} grid search, {} line search, {} sgd",
        result.log.batches_for(Event::GridSearch),
        result.log.batches_for(Event::LineSearch),
        result.log.batches_for(Event::Sgd)
    );
    println!(
        "empirical loss {:.4} -> {:.4} (optimum {:.4})",
        empirical_loss(&problem, &start),
        empirical_loss(&problem, &result.state.theta),
        avg.evaluate(&avg.minimizer())
    );
    result
}

#[allow(dead_code)]
fn main() {
    run_example();
}
