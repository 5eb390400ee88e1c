// Runs a configured experiment and writes its CSV outputs, as the `elf-run`
// binary does.
//
//     cargo run --example run_experiment

use elf::cli::{run_experiment, Artifacts, RunConfig};

pub fn run_example() -> Artifacts {
    let mut config = RunConfig::from_text(
        "problem = logistic\n\
         optimizer = elf\n\
         steps = 3000\n\
         train_samples = 512\n\
         validation_samples = 256\n",
    )
    .expect("valid config");
    config.out = std::env::temp_dir().join(format!("elf-example-{}", std::process::id()));
    config.dump_cross_section = true;

    let artifacts = run_experiment(&config).expect("run succeeds");
    println!("wrote to {}:", config.out.display());
    for (name, contents) in &artifacts.files {
        println!("  {name} ({} lines)", contents.lines().count());
    }
    println!(
        "final empirical loss {:.5}, accuracy {:?}",
        artifacts.summary.final_empirical_loss, artifacts.summary.final_accuracy
    );
    std::fs::remove_dir_all(&config.out).ok();
    artifacts
}

#[allow(dead_code)]
fn main() {
    run_example();
}
