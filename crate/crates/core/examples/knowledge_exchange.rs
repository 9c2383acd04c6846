// One client aligning its outputs on public data with a frozen peer
// snapshot. Only the peer's softmax outputs are used.

use std::error::Error;

use hetfl::data::generate_synthetic;
use hetfl::federation::Client;
use hetfl::losses::kl_divergence;
use hetfl::models::ArchitectureRegistry;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let registry = ArchitectureRegistry::builtin(8, 5);
    let private = generate_synthetic(5, 8, 200, 1)?;
    let public = generate_synthetic(5, 8, 64, 2)?.features().clone();

    let mut student = Client::new(
        0,
        registry.init_model("mlp-shallow", 1)?,
        private.clone(),
        1e-3,
    );
    let peer = Client::new(1, registry.init_model("mlp-pyramid", 2)?, private, 1e-3);
    let snapshot = peer.compute_knowledge(&public, 1, 1.0)?;
    println!(
        "peer publishes {} x {} probabilities",
        snapshot.probs().rows(),
        snapshot.probs().row_len()
    );

    for step in 0..=10 {
        let own = student.compute_knowledge(&public, 1, 1.0)?;
        let kl = kl_divergence(snapshot.distribution(), own.distribution())?;
        println!("update {step:>2}: KL(peer || own) = {kl:.5}");
        student.collaborative_update(&[&snapshot], &public, 16, 1.0)?;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
