//! Tunes the penalty and basis size by 10-fold cross-validation with the
//! one-standard-error rule.
//!
//! cargo run --release --example cross_validation

use fclr::selection::{cross_validate, kfold_partition, CvSettings, LambdaSpec, Method};
use fclr::simulation::{simulate, truth_coefficients, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclr::Result<()> {
    let cfg = SimConfig { q: 4, n_test: 1, ..SimConfig::default() };
    let truth = truth_coefficients(cfg.p, cfg.q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let panel = simulate(&cfg, &truth, &mut rng)?.train;
    let folds = kfold_partition(panel.n(), 10, &mut rng)?;
    let settings = CvSettings {
        k_grid: vec![4, 5, 6],
        lambdas: LambdaSpec::Geometric { len: 20, min_ratio: 1e-2 },
        ..CvSettings::default()
    };
    let cv = cross_validate(&panel, &Method::Constrained, &settings, &folds)?;
    let best = (0..cv.grid.len())
        .min_by(|&a, &b| cv.mean_error[a].total_cmp(&cv.mean_error[b]))
        .unwrap();
    for (i, &(lambda, k)) in cv.grid.iter().enumerate() {
        let mark = match (i == best, i == cv.chosen_index) {
            (true, true) => "min, chosen",
            (true, false) => "min",
            (false, true) => "chosen",
            _ => "",
        };
        println!("k {k} lambda {lambda:>8.4}  cv {:.4} +- {:.4}  {mark}", cv.mean_error[i], cv.se_error[i]);
    }
    println!("one-SE choice: lambda {:.4}, k {}", cv.chosen.0, cv.chosen.1);
    Ok(())
}
