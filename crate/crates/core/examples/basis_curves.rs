//! Evaluates a clamped cubic B-spline basis and a curve built from it.
//!
//! cargo run --example basis_curves

use fclr::BasisSpec;

fn main() -> fclr::Result<()> {
    let spec = BasisSpec::new(4, 6, (0.0, 1.0))?;
    println!("knots: {:?}", spec.knots());
    println!("{:>5}  {:>48}  {:>6}", "t", "phi_1 .. phi_6", "sum");
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let phi = spec.eval(t)?;
        let cells: Vec<String> = phi.iter().map(|v| format!("{v:.4}")).collect();
        println!("{t:>5.2}  {}  {:>6.3}", cells.join(" "), phi.iter().sum::<f64>());
    }

    // two curves sharing the basis, stacked curve-major
    let coefs = [1.0, 0.5, 0.0, -0.5, -1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 1.0, 0.0];
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = spec.curves_at(&coefs, t)?;
        println!("beta({t:.2}) = [{:.3}, {:.3}]", v[0], v[1]);
    }
    Ok(())
}
