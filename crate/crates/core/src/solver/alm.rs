use nalgebra::{DMatrix, DVector};

use super::admm::{inner_group_lasso_cached, FactorCache};
use super::{objective, FitResult, SolverConfig, WarmStart};
use crate::design::ConstraintSet;
use crate::error::{Error, Result};
use crate::quadrature::GramSystem;

/// Required contraction of the constraint violation per outer iteration.
const CONTRACTION: f64 = 0.25;
/// Penalty growth when the violation does not contract.
const RHO_GROWTH: f64 = 10.0;

/// Matrices shared by consecutive fits on one system and constraint set:
/// the projected quadratic, `P K̃ P + ρ L̃ᵀ L̃` for the current `ρ`, and the
/// inner solver's factorizations of it.
pub(crate) struct AlmContext {
    k_proj: DMatrix<f64>,
    j_proj: DVector<f64>,
    a: DMatrix<f64>,
    a_rho: Option<f64>,
    factors: FactorCache,
}

impl AlmContext {
    pub(crate) fn new(sys: &GramSystem, constraints: &ConstraintSet) -> Self {
        let (k_proj, j_proj) = if constraints.rows() > 0 {
            (
                constraints.project_gram(&sys.k_tilde),
                constraints.project(&sys.j_tilde),
            )
        } else {
            (sys.k_tilde.clone(), sys.j_tilde.clone())
        };
        Self {
            a: k_proj.clone(),
            k_proj,
            j_proj,
            a_rho: None,
            factors: FactorCache::default(),
        }
    }

    fn set_rho(&mut self, constraints: &ConstraintSet, rho: f64) {
        if self.a_rho != Some(rho) {
            self.a.copy_from(&self.k_proj);
            constraints.add_scaled_gram(&mut self.a, rho);
            self.a_rho = Some(rho);
            self.factors.retag(rho.to_bits());
        }
    }
}

pub(crate) fn check_shapes(sys: &GramSystem, constraints: &ConstraintSet) -> Result<()> {
    let k = sys.basis_size;
    let dim = sys.j_tilde.len();
    if constraints.l_tilde.ncols() != dim || constraints.k != k {
        return Err(Error::Dimension(format!(
            "constraints act on {} coefficients with k = {}, system has {dim} with k = {k}",
            constraints.l_tilde.ncols(),
            constraints.k
        )));
    }
    Ok(())
}

/// Augmented Lagrangian outer loop.
///
/// Each pass minimizes `L_ρ(b, u)` (a group-Lasso problem in `b`), then
/// either multiplies `ρ` by 10 when `‖L̃b‖∞` failed to shrink by a factor 4,
/// or takes the dual step `u ← u + ρ L̃ b`. At least one pass is made, so a
/// feasible warm start is still refitted at the new penalty.
///
/// The passes use `P K̃ P` and `P J̃`, where `P` projects onto the null space
/// of `L̃`. Both quadratics agree on the feasible set, so the constrained
/// minimizer is the same, but the projected one has no curvature along the
/// constrained directions.
/// The returned multiplier is mapped back to the unprojected system.
pub fn augmented_lagrangian(
    sys: &GramSystem,
    constraints: &ConstraintSet,
    config: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<FitResult> {
    check_shapes(sys, constraints)?;
    let mut ctx = AlmContext::new(sys, constraints);
    augmented_lagrangian_in(&mut ctx, sys, constraints, config, warm)
}

pub(crate) fn augmented_lagrangian_in(
    ctx: &mut AlmContext,
    sys: &GramSystem,
    constraints: &ConstraintSet,
    config: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<FitResult> {
    config.validate()?;
    let k = sys.basis_size;
    let dim = sys.j_tilde.len();
    let rows = constraints.rows();
    let (mut b, mut u) = match warm {
        Some(w) if w.b.len() == dim && w.u.len() == rows => (w.b.clone(), w.u.clone()),
        Some(_) => return Err(Error::Dimension("warm start has the wrong shape".into())),
        None => (DVector::zeros(dim), DVector::zeros(rows)),
    };
    // Multiplier shift between the two systems at a feasible b.
    let shift = |b: &DVector<f64>| constraints.block_means(&(&sys.k_tilde * b - &sys.j_tilde));
    if rows > 0 {
        u += shift(&b);
    }
    let mut rho = warm.and_then(|w| w.rho).unwrap_or(config.rho0);
    let mut step = warm.and_then(|w| w.step).unwrap_or(config.admm_step);

    let mut err_prev = f64::INFINITY;
    let mut outer = 0;
    let mut inner_total = 0;
    let mut inner_ok = true;
    let mut last_rho = rho;
    let mut escalated_last = false;

    while outer < config.k_max && (outer == 0 || err_prev > config.epsilon) {
        outer += 1;
        ctx.set_rho(constraints, rho);
        let mut c = ctx.j_proj.clone();
        if rows > 0 {
            c -= constraints.transpose_apply(&u);
        }
        let mut settings = config.inner(step);
        if rows > 0 {
            // The violation left by an inexact solve is about tol / ρ; keep
            // it below ε so the contraction test measures the outer loop.
            settings.tol_cap = rho * config.epsilon;
        }
        let inner = inner_group_lasso_cached(
            &mut ctx.factors,
            &ctx.a,
            &c,
            config.lambda,
            k,
            &settings,
            Some(&b),
        );
        inner_total += inner.iterations;
        inner_ok = inner.converged;
        step = inner.step;
        b = inner.b;

        let err = constraints.residual(b.as_slice());
        last_rho = rho;
        if err > CONTRACTION * err_prev {
            rho *= RHO_GROWTH;
            escalated_last = true;
        } else {
            if rows > 0 {
                u += constraints.apply(&b) * rho;
            }
            escalated_last = false;
        }
        err_prev = err;
    }

    // After an escalation the multiplier estimate consistent with the last
    // subproblem is u + ρ L̃ b.
    let u_hat = if rows == 0 {
        u
    } else if escalated_last {
        &u + constraints.apply(&b) * last_rho - shift(&b)
    } else {
        &u - shift(&b)
    };
    let b_c_hat = sys.recover_control(&b);
    let residual = constraints.residual(b.as_slice());
    Ok(FitResult {
        lambda: config.lambda,
        objective: objective(sys, &b, config.lambda),
        b_c_hat,
        u_hat,
        outer_iters: outer,
        inner_iters_total: inner_total,
        constraint_residual: residual,
        converged: inner_ok && residual <= config.epsilon,
        rho,
        admm_step: step,
        basis_size: k,
        references: None,
        b_hat: b,
    })
}
