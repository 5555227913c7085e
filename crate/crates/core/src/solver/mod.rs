//! Zero-sum constrained group Lasso.
//!
//! The profiled problem
//!
//! ```text
//! minimize ½ bᵀ K̃ b − bᵀ J̃ + λ Σ_j ‖b_j‖₂   subject to  L̃ b = 0
//! ```
//!
//! is solved by an augmented Lagrangian outer loop whose subproblems are
//! plain group-Lasso problems handled by [`admm::inner_group_lasso`].

pub mod admm;
mod alm;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSpec;
use crate::design::ConstraintSet;
use crate::error::{Error, Result};
use crate::quadrature::GramSystem;

pub use admm::{inner_group_lasso, InnerResult, InnerSettings};
pub use alm::augmented_lagrangian;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Initial augmented penalty.
    pub rho0: f64,
    /// Outer feasibility tolerance on `‖L̃ b‖∞`.
    pub epsilon: f64,
    pub k_max: usize,
    pub admm_tol_abs: f64,
    pub admm_tol_rel: f64,
    pub admm_iter_max: usize,
    /// Initial ADMM step τ.
    pub admm_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            rho0: 1.0,
            epsilon: 1e-6,
            k_max: 50,
            admm_tol_abs: 1e-8,
            admm_tol_rel: 1e-6,
            admm_iter_max: 10_000,
            admm_step: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho0", self.rho0),
            ("epsilon", self.epsilon),
            ("admm_tol_abs", self.admm_tol_abs),
            ("admm_tol_rel", self.admm_tol_rel),
            ("admm_step", self.admm_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.k_max == 0 || self.admm_iter_max == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn inner(&self, step: f64) -> InnerSettings {
        InnerSettings {
            tol_abs: self.admm_tol_abs,
            tol_rel: self.admm_tol_rel,
            max_iter: self.admm_iter_max,
            step,
            tol_cap: f64::INFINITY,
        }
    }
}

/// Starting point of a fit. `rho` and `step` carry the penalty and ADMM step
/// reached by a previous fit along a path.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub b: DVector<f64>,
    pub u: DVector<f64>,
    pub rho: Option<f64>,
    pub step: Option<f64>,
}

impl WarmStart {
    pub fn from_fit(fit: &FitResult) -> Self {
        Self {
            b: fit.b_hat.clone(),
            u: fit.u_hat.clone(),
            rho: Some(fit.rho),
            step: Some(fit.admm_step),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub lambda: f64,
    /// Stacked curve coefficients, `b[j * k + a]`.
    pub b_hat: DVector<f64>,
    /// Control (intercept first) coefficients.
    pub b_c_hat: DVector<f64>,
    /// Multiplier of `L̃ b = 0`.
    pub u_hat: DVector<f64>,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    /// `‖L̃ b̂‖∞`
    pub constraint_residual: f64,
    /// Penalized loss `½∫‖r‖² + λ Σ ‖b_j‖`.
    pub objective: f64,
    pub converged: bool,
    pub rho: f64,
    pub admm_step: f64,
    pub basis_size: usize,
    /// Reference part per block for baseline fits.
    pub references: Option<Vec<usize>>,
}

impl FitResult {
    pub fn curves(&self) -> usize {
        self.b_hat.len() / self.basis_size
    }

    /// Indices of curves with a nonzero coefficient group.
    pub fn active_groups(&self) -> Vec<usize> {
        let k = self.basis_size;
        (0..self.curves())
            .filter(|&j| self.b_hat.rows(j * k, k).iter().any(|&x| x != 0.0))
            .collect()
    }
}

/// `(1 − κ/‖v‖₂)₊ v`
pub fn group_soft_threshold(v: &[f64], kappa: f64) -> Vec<f64> {
    let nv = admm::norm(v);
    if nv <= kappa {
        return vec![0.0; v.len()];
    }
    let scale = 1.0 - kappa / nv;
    v.iter().map(|x| x * scale).collect()
}

pub(crate) fn penalty(b: &DVector<f64>, k: usize) -> f64 {
    b.as_slice().chunks_exact(k).map(admm::norm).sum()
}

/// Penalized objective of the profiled problem at `b`.
pub fn objective(sys: &GramSystem, b: &DVector<f64>, lambda: f64) -> f64 {
    sys.profiled_loss(b) + lambda * penalty(b, sys.basis_size)
}

/// `max_j ‖J̃_j‖₂`: `b = 0` is optimal for every `λ` at or above it.
pub fn lambda_max(sys: &GramSystem) -> f64 {
    sys.j_tilde
        .as_slice()
        .chunks_exact(sys.basis_size)
        .map(admm::norm)
        .fold(0.0, f64::max)
}

/// Geometric grid of `len` values from `lambda_max` down to
/// `min_ratio · lambda_max`.
pub fn lambda_grid(lambda_max: f64, len: usize, min_ratio: f64) -> Vec<f64> {
    if len <= 1 || lambda_max <= 0.0 {
        return vec![lambda_max.max(0.0)];
    }
    let ratio = min_ratio.ln() / (len - 1) as f64;
    (0..len)
        .map(|i| lambda_max * (ratio * i as f64).exp())
        .collect()
}

/// Optimality certificate: the worst group stationarity violation of
/// `K̃ b − J̃ + L̃ᵀ u`, combined with `‖L̃ b‖∞`.
pub fn kkt_residual(
    sys: &GramSystem,
    constraints: &ConstraintSet,
    fit: &FitResult,
    lambda: f64,
) -> f64 {
    let mut g = &sys.k_tilde * &fit.b_hat - &sys.j_tilde;
    if constraints.rows() > 0 {
        g += constraints.transpose_apply(&fit.u_hat);
    }
    let penalty_part = admm::group_kkt(g.as_slice(), fit.b_hat.as_slice(), lambda, sys.basis_size);
    penalty_part.max(constraints.residual(fit.b_hat.as_slice()))
}

/// Fits a decreasing sequence of penalties, each warm-started from the
/// previous solution.
pub fn solve_path(
    sys: &GramSystem,
    constraints: &ConstraintSet,
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<FitResult>> {
    if lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("lambda path must be strictly decreasing".into()));
    }
    alm::check_shapes(sys, constraints)?;
    let mut ctx = alm::AlmContext::new(sys, constraints);
    let mut out: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let warm = out.last().map(WarmStart::from_fit);
        out.push(alm::augmented_lagrangian_in(
            &mut ctx,
            sys,
            constraints,
            &config.with_lambda(lambda),
            warm.as_ref(),
        )?);
    }
    Ok(out)
}

/// Maps reference-dropped coefficients back to all parts; the reference
/// curve of each block is minus the sum of the others.
pub fn expand_reference(
    reduced: &DVector<f64>,
    block_sizes: &[usize],
    references: &[usize],
    k: usize,
) -> DVector<f64> {
    let p: usize = block_sizes.iter().sum();
    let mut full = DVector::zeros(p * k);
    let mut src = 0;
    let mut dst = 0;
    for (&size, &r) in block_sizes.iter().zip(references) {
        for l in 0..size {
            if l == r {
                continue;
            }
            for a in 0..k {
                let val = reduced[(src) * k + a];
                full[(dst + l) * k + a] = val;
                full[(dst + r) * k + a] -= val;
            }
            src += 1;
        }
        dst += size;
    }
    full
}

/// Baseline group Lasso on a reference-dropped design: an unconstrained fit
/// whose coefficients are reported on all parts via [`expand_reference`].
pub fn fit_bgl(
    sys: &GramSystem,
    block_sizes: &[usize],
    references: &[usize],
    config: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<FitResult> {
    let k = sys.basis_size;
    let reduced_p = sys.curves();
    if block_sizes.len() != references.len()
        || block_sizes.iter().zip(references).any(|(&s, &r)| r >= s)
        || block_sizes.iter().map(|s| s - 1).sum::<usize>() != reduced_p
    {
        return Err(Error::Dimension(
            "references do not match the reference-dropped design".into(),
        ));
    }
    let unconstrained = ConstraintSet::empty(reduced_p, k);
    let mut fit = augmented_lagrangian(sys, &unconstrained, config, warm)?;
    fit.references = Some(references.to_vec());
    Ok(fit)
}

/// BGL fit with coefficients expanded to the full part set.
pub fn bgl_full_coefficients(fit: &FitResult, block_sizes: &[usize]) -> DVector<f64> {
    match &fit.references {
        Some(r) => expand_reference(&fit.b_hat, block_sizes, r, fit.basis_size),
        None => fit.b_hat.clone(),
    }
}

/// Pointwise predictions `ŷ_i(t_v) = Z_c β̂_c(t_v) + Z β̂(t_v)`.
pub fn predict_with(
    b: &DVector<f64>,
    b_c: &DVector<f64>,
    z: &[DMatrix<f64>],
    zc: &[DMatrix<f64>],
    spec: &BasisSpec,
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    if z.len() != grid.len() || zc.len() != grid.len() {
        return Err(Error::Dimension("design slices do not match the grid".into()));
    }
    let n = z.first().map_or(0, |m| m.nrows());
    let mut out = DMatrix::zeros(n, grid.len());
    for (v, &t) in grid.iter().enumerate() {
        let beta = DVector::from_vec(spec.curves_at(b.as_slice(), t)?);
        let beta_c = DVector::from_vec(spec.curves_at(b_c.as_slice(), t)?);
        if z[v].ncols() != beta.len() || zc[v].ncols() != beta_c.len() {
            return Err(Error::Dimension("coefficients do not match the design".into()));
        }
        let yhat = &z[v] * beta + &zc[v] * beta_c;
        out.set_column(v, &yhat);
    }
    Ok(out)
}

pub fn predict(
    fit: &FitResult,
    z: &[DMatrix<f64>],
    zc: &[DMatrix<f64>],
    spec: &BasisSpec,
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    predict_with(&fit.b_hat, &fit.b_c_hat, z, zc, spec, grid)
}
