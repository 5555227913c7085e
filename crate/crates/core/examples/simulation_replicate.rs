//! Runs a few replicates of a named study scenario for both methods.
//!
//! cargo run --release --example simulation_replicate -- table3-row2 3

use fclr::simulation::{run_replicate, scenario, truth_coefficients, MethodKind, StudySettings};

fn main() -> fclr::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "table3-row2".into());
    let reps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let cfg = scenario(&name)?;
    let truth = truth_coefficients(cfg.p, cfg.q)?;
    let methods = [MethodKind::Cgl, MethodKind::Bgl];
    println!("{name}: n {}, p {}, q {}, SNR {}", cfg.n, cfg.p, cfg.q, cfg.snr);
    for rep in 0..reps {
        let metrics = run_replicate(&name, &cfg, &truth, rep, &methods, &StudySettings::default())?;
        for (kind, m) in methods.iter().zip(metrics) {
            println!(
                "rep {rep} {}: FPR {:5.2}% FNR {:5.2}% PE {:.3} EE {:.3} (lambda {:.3}, k {})",
                kind.name(),
                m.fpr,
                m.fnr,
                m.prediction_error,
                m.estimation_error,
                m.lambda,
                m.k
            );
        }
    }
    Ok(())
}
