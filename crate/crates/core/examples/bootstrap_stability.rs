//! Selection proportions of every curve over bootstrap resamples.
//!
//! cargo run --release --example bootstrap_stability

use fclr::selection::{bootstrap_stability, CvSettings, FoldPlan, LambdaSpec, TuningPlan};
use fclr::simulation::{simulate, truth_coefficients, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclr::Result<()> {
    let cfg = SimConfig { p: 20, q: 2, n: 40, n_test: 1, snr: 4.0, ..SimConfig::default() };
    let truth = truth_coefficients(cfg.p, cfg.q)?;
    let panel = simulate(&cfg, &truth, &mut ChaCha8Rng::seed_from_u64(8))?.train;
    let plan = TuningPlan {
        folds: FoldPlan::KFold(5),
        cv: CvSettings {
            k_grid: vec![5],
            lambdas: LambdaSpec::Geometric { len: 15, min_ratio: 1e-2 },
            ..CvSettings::default()
        },
    };
    let result = bootstrap_stability(&panel, 20, &plan, 1)?;
    for (j, (label, prop)) in panel.part_labels().iter().zip(&result.proportions).enumerate() {
        let tag = if truth.active.contains(&j) { "active" } else { "" };
        println!("{label:>6} {prop:.2} {tag}");
    }
    println!("{} resamples, {} not converged", result.replicates, result.nonconverged);
    Ok(())
}
