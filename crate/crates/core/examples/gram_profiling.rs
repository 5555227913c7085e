//! Assembles the Gram system with a control series, then recovers the
//! control coefficients from the profiled part coefficients.
//!
//! cargo run --example gram_profiling

use fclr::design::ControlSeries;
use fclr::simulation::{simulate, truth_coefficients, SimConfig};
use fclr::solver::augmented_lagrangian;
use fclr::{BasisSpec, GramSystem, RegressionData, SolverConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclr::Result<()> {
    let cfg = SimConfig { n: 30, p: 20, q: 4, n_test: 1, ..SimConfig::default() };
    let truth = truth_coefficients(cfg.p, cfg.q)?;
    let mut panel = simulate(&cfg, &truth, &mut ChaCha8Rng::seed_from_u64(3))?.train;
    // a control with a known effect of 2 added to the response
    let dose = DMatrix::from_fn(panel.n(), panel.grid.len(), |i, v| ((i + v) % 3) as f64);
    panel.response += &dose * 2.0;
    panel.controls.push(ControlSeries { name: "dose".into(), values: dose });

    let data = RegressionData::from_panel(&panel)?;
    let spec = BasisSpec::new(4, 5, (0.0, 1.0))?;
    let sys = GramSystem::from_data(&data, &spec)?;
    println!("profiled system: {} curves of {} coefficients", sys.curves(), sys.basis_size);

    let cons = fclr::design::build_constraints(&panel.block_sizes(), 5)?;
    let fit = augmented_lagrangian(&sys, &cons, &SolverConfig { lambda: 1.0, ..SolverConfig::default() }, None)?;
    let b_c = sys.recover_control(&fit.b_hat);
    println!("profiled loss at the fit: {:.4}", sys.profiled_loss(&fit.b_hat));
    for t in [0.0, 0.5, 1.0] {
        let v = spec.curves_at(b_c.as_slice(), t)?;
        println!("t = {t:.1}: intercept {:+.3}, dose effect {:+.3}", v[0], v[1]);
    }
    Ok(())
}
