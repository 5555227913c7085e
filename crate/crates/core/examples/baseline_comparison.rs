//! Fits the constrained model and the reference-dropped baseline at the
//! same penalty and compares selection and test error.
//!
//! cargo run --release --example baseline_comparison

use fclr::selection::{active_set, fit_at, random_references, CvSettings, Method};
use fclr::simulation::{fpr_fnr, prediction_error, simulate, truth_coefficients, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclr::Result<()> {
    let cfg = SimConfig { p: 100, q: 4, n_test: 500, ..SimConfig::default() };
    let truth = truth_coefficients(cfg.p, cfg.q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = simulate(&cfg, &truth, &mut rng)?;
    let references = random_references(&cfg.block_sizes(), &mut rng);
    println!("baseline references: {references:?}");

    let settings = CvSettings::default();
    for method in [Method::Constrained, Method::Baseline { references }] {
        for lambda in [8.0, 2.0] {
            let tuned = fit_at(&data.train, &method, &settings, lambda, 5)?;
            let report = active_set(&tuned.coefficients, &tuned.spec, &data.train.grid, cfg.p)?;
            let (fpr, fnr) = fpr_fnr(&report.active_set, &truth.active, cfg.p)?;
            let pe = prediction_error(&tuned.coefficients, &tuned.fit.b_c_hat, &tuned.spec, &data.test)?;
            println!(
                "{} lambda {lambda:>4}: selected {:>3}, FPR {:>5.1}%, FNR {:>5.1}%, test error {pe:.3}",
                method.name(),
                report.active_set.len(),
                100.0 * fpr,
                100.0 * fnr
            );
        }
    }
    Ok(())
}
