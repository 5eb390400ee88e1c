// Samples every batch loss along the negative unit gradient of one batch
// and compares the mean curve with the closed-form empirical loss.
//
//     cargo run --example cross_section

use elf::problems::{
    cross_section_profile, uniform_grid, BatchId, CrossSectionProfile, NoisyQuadraticEnsemble,
    QuadraticEnsembleConfig, StochasticProblem,
};
use elf::seeds::{self, SeedStreams};

pub fn run_example() -> (CrossSectionProfile, Vec<f64>) {
    let problem = NoisyQuadraticEnsemble::new(QuadraticEnsembleConfig {
        dim: 10,
        train_batches: 40,
        validation_batches: 10,
        ..Default::default()
    });
    let theta = problem.initial_theta(&mut SeedStreams::new(0).rng(seeds::INIT));
    let g = problem.batch_gradient(&theta, BatchId::train(0));
    let direction = -&g / g.norm();

    let steps = uniform_grid(-0.3, 0.7, 50);
    let profile = cross_section_profile(&problem, &theta, &direction, &steps);
    let avg = problem.average_quadratic();
    let closed_form: Vec<f64> = steps.iter().map(|&s| avg.evaluate(&(&theta + &direction * s))).collect();

    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "s", "mean", "q1", "q3", "exact");
    for j in (0..steps.len()).step_by(7) {
        println!(
            "{:>8.3} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            steps[j], profile.mean[j], profile.lower_quartile[j], profile.upper_quartile[j], closed_form[j]
        );
    }
    (profile, closed_form)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
