// A full run: four heterogeneous clients with 20% symmetric label noise.

use std::error::Error;

use hetfl::config::NoiseKind;
use hetfl::{run_federation, FederationConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut cfg = FederationConfig::with_defaults(4, 1);
    cfg.rounds = 5;
    cfg.local_epochs = 2;
    cfg.noise_kind = NoiseKind::Symmetric;
    cfg.noise_rate = 0.2;
    cfg.data_samples = 1500;

    let result = run_federation(&cfg)?;
    println!("round  accuracy  pairwise KL  local loss");
    for m in &result.per_round {
        println!(
            "{:>5}  {:>8.4}  {:>11.4}  {:>10.4}",
            m.round, m.average_accuracy, m.mean_pairwise_kl, m.mean_local_loss
        );
    }
    for (p, acc) in result.final_row.per_client_accuracy.iter().enumerate() {
        println!("client {p}: {acc:.4}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
