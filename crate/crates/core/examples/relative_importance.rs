//! Share of each composition in the total squared coefficient mass over
//! time windows.
//!
//! cargo run --release --example relative_importance

use fclr::selection::{fit_at, relative_magnitude, CvSettings, Method};
use fclr::simulation::{simulate, truth_coefficients, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclr::Result<()> {
    let cfg = SimConfig { q: 4, n_test: 1, snr: 4.0, ..SimConfig::default() };
    let truth = truth_coefficients(cfg.p, cfg.q)?;
    let panel = simulate(&cfg, &truth, &mut ChaCha8Rng::seed_from_u64(4))?.train;
    let tuned = fit_at(&panel, &Method::Constrained, &CvSettings::default(), 0.5, 5)?;
    let windows = [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)];
    let shares = relative_magnitude(&tuned.coefficients, &tuned.spec, &panel.block_sizes(), &windows)?;
    let names: Vec<&str> = panel.blocks.iter().map(|b| b.name.as_str()).collect();
    println!("window        {}", names.iter().map(|n| format!("{n:>6}")).collect::<String>());
    for ((a, b), row) in windows.iter().zip(&shares) {
        println!("[{a:.2}, {b:.2}]  {}", row.iter().map(|s| format!("{s:>6.3}")).collect::<String>());
    }
    Ok(())
}
