//! Builds the log design of a small panel and checks the zero-sum
//! constraint on a projected coefficient vector.
//!
//! cargo run --example log_contrast_design

use fclr::design::{build_constraints, close, log_transform, zero_replace, CompositionBlock};
use fclr::FunctionalPanel;
use nalgebra::{DMatrix, DVector};

fn main() -> fclr::Result<()> {
    // raw counts with a zero, replaced and closed
    let counts = [12.0, 0.0, 30.0, 8.0];
    let shares = close(&zero_replace(&counts, 0.5)?)?;
    println!("closed shares: {shares:.4?}");

    let grid = vec![0.0, 0.5, 1.0];
    let block = CompositionBlock {
        name: "diet".into(),
        parts: vec!["fat".into(), "protein".into(), "carbs".into()],
        shares: grid
            .iter()
            .map(|t| DMatrix::from_row_slice(2, 3, &[0.2, 0.3 + 0.1 * t, 0.5 - 0.1 * t, 0.4, 0.4, 0.2]))
            .collect(),
    };
    let response = DMatrix::from_row_slice(2, 3, &[1.0, 1.2, 1.1, 0.3, 0.2, 0.4]);
    let panel = FunctionalPanel::new(vec!["a".into(), "b".into()], grid, response, vec![block], Vec::new())?;

    for (v, z) in log_transform(&panel)?.iter().enumerate() {
        println!("Z(t_{v}) =\n{z:.4}");
    }

    let k = 4;
    let cons = build_constraints(&panel.block_sizes(), k)?;
    let b = DVector::from_fn(panel.p() * k, |i, _| (i as f64).sin());
    let feasible = cons.project(&b);
    println!("|L b| before projection {:.3e}, after {:.3e}", cons.apply(&b).amax(), cons.apply(&feasible).amax());
    Ok(())
}
