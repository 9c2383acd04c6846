// The built-in architectures and how clients are assigned to them.

use std::error::Error;

use hetfl::models::{heterogeneous_assignment, ArchitectureRegistry};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let registry = ArchitectureRegistry::builtin(16, 13);
    for id in registry.ids() {
        let spec = registry.get(id)?;
        println!(
            "{id:<12} depth {}  {:>6} parameters",
            spec.depth(),
            spec.parameter_count()
        );
    }
    // ad-hoc MLPs are parsed from their id
    let custom = registry.get("mlp-40-20")?;
    println!("mlp-40-20    {:>6} parameters", custom.parameter_count());

    println!(
        "4 clients: {:?}",
        heterogeneous_assignment(registry.zoo(), 4)
    );
    match registry.get("resnet-50") {
        Err(e) => println!("unknown id: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
