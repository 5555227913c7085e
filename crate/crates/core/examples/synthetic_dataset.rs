//! Simulates a small panel with two compositions and one control, then
//! writes it in the long CSV format read by the `fclr` binary.
//!
//! cargo run --example synthetic_dataset -- out/synthetic

use std::path::PathBuf;

use fclr::cli::export_panel;
use fclr::design::ControlSeries;
use fclr::simulation::{simulate, truth_coefficients, SimConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclr::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()));
    std::fs::create_dir_all(&dir)?;

    let cfg = SimConfig {
        n: 24,
        p: 20,
        q: 2,
        grid_len: 10,
        n_test: 1,
        snr: 4.0,
        ..SimConfig::default()
    };
    let truth = truth_coefficients(cfg.p, cfg.q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut panel = simulate(&cfg, &truth, &mut rng)?.train;

    // An inert control: a unit-specific level plus a common trend.
    let temperature = DMatrix::from_fn(panel.n(), panel.grid.len(), |i, v| {
        (i % 5) as f64 * 0.5 + panel.grid[v]
    });
    panel.controls.push(ControlSeries {
        name: "temperature".into(),
        values: temperature,
    });

    let data = dir.join("panel.csv");
    let blocks = dir.join("blocks.toml");
    export_panel(&panel, "y", &data, &blocks)?;
    println!(
        "{} units, {} time points, parts {:?}",
        panel.n(),
        panel.grid.len(),
        panel.block_sizes()
    );
    println!("wrote {} and {}", data.display(), blocks.display());
    Ok(())
}
