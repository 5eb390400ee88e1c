// Fits noisy samples of a cubic with cross-validated degree selection.
//
//     cargo run --example fit_polynomial

use elf::regression::{select_degree_and_fit, FitReport, SampleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn run_example() -> FitReport {
    let truth = |s: f64| 1.0 - 2.0 * s + 0.5 * s * s + 0.8 * s * s * s;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.05).unwrap();

    let positions: Vec<f64> = (0..400).map(|_| rng.random_range(-1.5..1.5)).collect();
    let losses: Vec<f64> = positions.iter().map(|&s| truth(s) + noise.sample(&mut rng)).collect();
    let samples = SampleSet::new(positions, losses).expect("finite samples");

    let report = select_degree_and_fit(&samples, 10, 5, &mut rng).expect("enough samples");
    println!("chosen degree: {}", report.chosen_degree);
    println!("fit: {}", report.polynomial);
    for (degree, err) in report.cv_test_errors.iter().enumerate() {
        println!("  degree {degree}: cv error {err:.6}");
    }
    report
}

#[allow(dead_code)]
fn main() {
    run_example();
}
