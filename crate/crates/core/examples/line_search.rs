// One ELF line search on a noisy one-dimensional loss: the empirical line is
// a parabola with its minimum at s = 2.5, each call adds batch noise.
//
//     cargo run --example line_search

use elf::linesearch::{elf_line_search, LineSearchConfig, LineSearchResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn run_example() -> LineSearchResult {
    let mut noise_rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut oracle = |s: f64| 0.4 * (s - 2.5) * (s - 2.5) + 1.0 + noise.sample(&mut noise_rng);

    let config = LineSearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let result = elf_line_search(&mut oracle, &config, &mut rng).expect("valid config");

    println!("interval widths per round: {:?}", result.interval_widths);
    println!("fit (degree {}): {}", result.fit.chosen_degree, result.fit.polynomial);
    match (result.minimum_position, result.expected_improvement) {
        (Some(s), Some(gain)) => println!("minimum at s = {s:.4}, expected improvement {gain:.4}"),
        _ => println!("no minimum found"),
    }
    println!("batches consumed: {}", result.batches_consumed);
    result
}

#[allow(dead_code)]
fn main() {
    run_example();
}
