//! Solves the constrained group-Lasso path and reports the selected curves
//! and solver diagnostics at each penalty.
//!
//! cargo run --release --example constrained_path

use fclr::design::build_constraints;
use fclr::selection::active_set;
use fclr::simulation::{fpr_fnr, simulate, truth_coefficients, SimConfig};
use fclr::solver::{kkt_residual, lambda_grid, lambda_max, solve_path};
use fclr::{BasisSpec, GramSystem, RegressionData, SolverConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclr::Result<()> {
    let cfg = SimConfig { q: 4, n_test: 1, ..SimConfig::default() };
    let truth = truth_coefficients(cfg.p, cfg.q)?;
    let panel = simulate(&cfg, &truth, &mut ChaCha8Rng::seed_from_u64(11))?.train;

    let k = 5;
    let spec = BasisSpec::new(4, k, (0.0, 1.0))?;
    let sys = GramSystem::from_data(&RegressionData::from_panel(&panel)?, &spec)?;
    let cons = build_constraints(&panel.block_sizes(), k)?;
    let lambdas = lambda_grid(lambda_max(&sys), 15, 1e-2);

    println!("{:>9} {:>6} {:>6} {:>6} {:>10} {:>10} {:>5}", "lambda", "|S|", "FPR", "FNR", "kkt", "|Lb|", "outer");
    for fit in solve_path(&sys, &cons, &lambdas, &SolverConfig::default())? {
        let report = active_set(&fit.b_hat, &spec, &panel.grid, panel.p())?;
        let (fpr, fnr) = fpr_fnr(&report.active_set, &truth.active, panel.p())?;
        println!(
            "{:>9.4} {:>6} {:>6.3} {:>6.3} {:>10.2e} {:>10.2e} {:>5}",
            fit.lambda,
            report.active_set.len(),
            fpr,
            fnr,
            kkt_residual(&sys, &cons, &fit, fit.lambda),
            fit.constraint_residual,
            fit.outer_iters
        );
    }
    Ok(())
}
