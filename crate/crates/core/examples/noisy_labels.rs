// Pair and symmetric label flipping through a transition matrix.

use std::error::Error;

use hetfl::data::{build_transition_matrix, corrupt_labels, generate_synthetic, FlipKind};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let data = generate_synthetic(5, 4, 5000, 1)?;

    for kind in [FlipKind::Pair, FlipKind::Symmetric] {
        let m = build_transition_matrix(kind, 0.2, 5)?;
        println!("{kind:?} flip, mu = 0.2, row 0: {:?}", m.row(0));
        let noisy = corrupt_labels(&data, &m, 7)?;
        let clean = noisy.clean_labels().unwrap_or(noisy.labels());
        let mut moved_to = [0usize; 5];
        for (&l, &y) in noisy.labels().iter().zip(clean) {
            if y == 0 && l != 0 {
                moved_to[l] += 1;
            }
        }
        println!(
            "  flipped {:.2}% of labels; class 0 flipped into {moved_to:?}",
            100.0 * noisy.flip_fraction()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
