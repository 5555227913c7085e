//! Tuning of `(λ, k)` by unit-level cross-validation, the one-standard-error
//! rule, active-set extraction and bootstrap selection stability.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::BasisSpec;
use crate::design::{build_constraints, ConstraintSet, FunctionalPanel, RegressionData};
use crate::error::{Error, Result};
use crate::quadrature::{trapezoid_weights, GramSystem};
use crate::solver::{
    bgl_full_coefficients, lambda_grid, lambda_max, predict_with, solve_path, FitResult,
    SolverConfig,
};

/// Constrained log-contrast fit or the reference-dropped baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Constrained,
    Baseline { references: Vec<usize> },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Constrained => "CGL",
            Method::Baseline { .. } => "BGL",
        }
    }

    pub fn regression_data(&self, panel: &FunctionalPanel) -> Result<RegressionData> {
        match self {
            Method::Constrained => RegressionData::from_panel(panel),
            Method::Baseline { references } => RegressionData::from_panel_alr(panel, references),
        }
    }

    pub fn constraints(&self, panel: &FunctionalPanel, k: usize) -> Result<ConstraintSet> {
        match self {
            Method::Constrained => build_constraints(&panel.block_sizes(), k),
            Method::Baseline { .. } => Ok(ConstraintSet::empty(panel.p() - panel.q(), k)),
        }
    }

    /// Coefficients on the full part set.
    pub fn full_coefficients(&self, fit: &FitResult, block_sizes: &[usize]) -> DVector<f64> {
        match self {
            Method::Constrained => fit.b_hat.clone(),
            Method::Baseline { .. } => bgl_full_coefficients(fit, block_sizes),
        }
    }

    fn tag(&self, fit: &mut FitResult) {
        if let Method::Baseline { references } = self {
            fit.references = Some(references.clone());
        }
    }
}

/// Draws one uniformly random reference part per block.
pub fn random_references<R: Rng>(block_sizes: &[usize], rng: &mut R) -> Vec<usize> {
    block_sizes.iter().map(|&s| rng.random_range(0..s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec {
    /// `len` values from `λ_max(k)` down to `min_ratio · λ_max(k)`.
    Geometric { len: usize, min_ratio: f64 },
    /// The same explicit decreasing values for every `k`.
    Explicit(Vec<f64>),
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Geometric {
            len: 50,
            min_ratio: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSettings {
    pub lambdas: LambdaSpec,
    pub k_grid: Vec<usize>,
    /// Spline order (4 = cubic).
    pub order: usize,
    pub solver: SolverConfig,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            lambdas: LambdaSpec::default(),
            k_grid: vec![4, 5, 6, 7, 8],
            order: 4,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldPlan {
    LeaveOneOut,
    KFold(usize),
}

impl FoldPlan {
    pub fn folds<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        match *self {
            FoldPlan::LeaveOneOut => Ok(loo_partition(n)),
            FoldPlan::KFold(k) => kfold_partition(n, k, rng),
        }
    }
}

pub fn loo_partition(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| vec![i]).collect()
}

/// Random partition of `0..n` into `folds` groups whose sizes differ by at
/// most one.
pub fn kfold_partition<R: Rng>(n: usize, folds: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidFolds(format!("{folds} folds for {n} units")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CvResult {
    /// `(λ, k)` pairs, grouped by `k` in `k_grid` order, `λ` decreasing.
    pub grid: Vec<(f64, usize)>,
    pub mean_error: Vec<f64>,
    pub se_error: Vec<f64>,
    /// `folds × pairs`
    pub fold_errors: DMatrix<f64>,
    pub chosen: (f64, usize),
    pub chosen_index: usize,
    /// Fold fits that did not meet the solver tolerances.
    pub nonconverged: usize,
}

fn lambdas_for(spec: &LambdaSpec, sys: &GramSystem) -> Vec<f64> {
    match spec {
        LambdaSpec::Geometric { len, min_ratio } => lambda_grid(lambda_max(sys), *len, *min_ratio),
        LambdaSpec::Explicit(v) => v.clone(),
    }
}

pub(crate) fn basis_for(grid: &[f64], order: usize, k: usize) -> Result<BasisSpec> {
    BasisSpec::new(order, k, (grid[0], grid[grid.len() - 1]))
}

/// Trapezoid-weighted mean squared residual per curve, averaged over units.
pub fn curve_mse(residual: &DMatrix<f64>, grid: &[f64]) -> Result<f64> {
    let w = trapezoid_weights(grid)?;
    let span = grid[grid.len() - 1] - grid[0];
    let n = residual.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for (v, wv) in w.iter().enumerate() {
            total += wv * residual[(i, v)].powi(2);
        }
    }
    Ok(total / (n as f64 * span))
}

fn validate_folds(folds: &[Vec<usize>], n: usize) -> Result<()> {
    if folds.is_empty() {
        return Err(Error::InvalidFolds("no folds".into()));
    }
    let mut seen = vec![false; n];
    for (f, fold) in folds.iter().enumerate() {
        if fold.is_empty() {
            return Err(Error::InvalidFolds(format!("fold {f} is empty")));
        }
        if fold.len() >= n {
            return Err(Error::InvalidFolds(format!("fold {f} leaves no training units")));
        }
        for &i in fold {
            if i >= n || seen[i] {
                return Err(Error::InvalidFolds(format!("unit {i} is repeated or out of range")));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidFolds("folds do not cover every unit".into()));
    }
    Ok(())
}

/// Held-out errors of one fold along the `λ` path for one `k`.
fn fold_path_errors(
    data: &RegressionData,
    constraints: &ConstraintSet,
    spec: &BasisSpec,
    lambdas: &[f64],
    test: &[usize],
    solver: &SolverConfig,
) -> Result<(Vec<f64>, usize)> {
    let n = data.n();
    let train: Vec<usize> = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
    let train_data = data.subset(&train);
    let test_data = data.subset(test);
    let sys = GramSystem::from_data(&train_data, spec)?;
    let fits = solve_path(&sys, constraints, lambdas, solver)?;
    let mut errors = Vec::with_capacity(fits.len());
    let mut bad = 0;
    for fit in &fits {
        if !fit.converged {
            bad += 1;
        }
        let yhat = predict_with(
            &fit.b_hat,
            &fit.b_c_hat,
            &test_data.z,
            &test_data.zc,
            spec,
            &test_data.grid,
        )?;
        errors.push(curve_mse(&(&test_data.y - yhat), &test_data.grid)?);
    }
    Ok((errors, bad))
}

/// Cross-validates `(λ, k)` over unit-level folds and applies the one-SE rule.
pub fn cross_validate(
    panel: &FunctionalPanel,
    method: &Method,
    settings: &CvSettings,
    folds: &[Vec<usize>],
) -> Result<CvResult> {
    let mut sorted: Vec<Vec<usize>> = folds.to_vec();
    for f in &mut sorted {
        f.sort_unstable();
    }
    validate_folds(&sorted, panel.n())?;
    if settings.k_grid.is_empty() {
        return Err(Error::Config("empty k grid".into()));
    }
    if let Some(&k) = settings.k_grid.iter().find(|&&k| k < settings.order) {
        return Err(Error::InvalidBasis {
            order: settings.order,
            count: k,
        });
    }
    let data = method.regression_data(panel)?;

    // λ grid per k from the full data.
    let mut per_k = Vec::with_capacity(settings.k_grid.len());
    for &k in &settings.k_grid {
        let spec = basis_for(&panel.grid, settings.order, k)?;
        let sys = GramSystem::from_data(&data, &spec)?;
        let lambdas = lambdas_for(&settings.lambdas, &sys);
        let constraints = method.constraints(panel, k)?;
        per_k.push((k, spec, lambdas, constraints));
    }

    let tasks: Vec<(usize, usize)> = (0..per_k.len())
        .flat_map(|ki| (0..sorted.len()).map(move |f| (ki, f)))
        .collect();
    let results: Vec<Result<(Vec<f64>, usize)>> = tasks
        .par_iter()
        .map(|&(ki, f)| {
            let (_, spec, lambdas, constraints) = &per_k[ki];
            fold_path_errors(&data, constraints, spec, lambdas, &sorted[f], &settings.solver)
        })
        .collect();

    let mut grid = Vec::new();
    for (k, _, lambdas, _) in &per_k {
        grid.extend(lambdas.iter().map(|&l| (l, *k)));
    }
    let nf = sorted.len();
    let mut fold_errors = DMatrix::zeros(nf, grid.len());
    let mut nonconverged = 0;
    let mut offsets = Vec::with_capacity(per_k.len());
    let mut acc = 0;
    for (_, _, lambdas, _) in &per_k {
        offsets.push(acc);
        acc += lambdas.len();
    }
    for (&(ki, f), res) in tasks.iter().zip(results) {
        let (errs, bad) = res?;
        nonconverged += bad;
        for (li, e) in errs.into_iter().enumerate() {
            fold_errors[(f, offsets[ki] + li)] = e;
        }
    }
    let (mean_error, se_error) = summarize(&fold_errors);
    let mut cv = CvResult {
        grid,
        mean_error,
        se_error,
        fold_errors,
        chosen: (0.0, 0),
        chosen_index: 0,
        nonconverged,
    };
    let idx = one_se_index(&cv.grid, &cv.mean_error, &cv.se_error)
        .ok_or_else(|| Error::Config("empty tuning grid".into()))?;
    cv.chosen_index = idx;
    cv.chosen = cv.grid[idx];
    Ok(cv)
}

fn summarize(fold_errors: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let nf = fold_errors.nrows() as f64;
    let mut means = Vec::with_capacity(fold_errors.ncols());
    let mut ses = Vec::with_capacity(fold_errors.ncols());
    for col in fold_errors.column_iter() {
        let mean = col.sum() / nf;
        let var = if nf > 1.0 {
            col.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        means.push(mean);
        ses.push((var / nf).sqrt());
    }
    (means, ses)
}

/// Index chosen by the one-standard-error rule: the largest `λ` whose mean
/// error is within one SE of the minimum; ties on `λ` go to the smallest `k`.
pub fn one_se_index(grid: &[(f64, usize)], mean: &[f64], se: &[f64]) -> Option<usize> {
    let best = (0..grid.len()).min_by(|&a, &b| mean[a].total_cmp(&mean[b]))?;
    let threshold = mean[best] + se[best];
    (0..grid.len())
        .filter(|&i| mean[i] <= threshold)
        .max_by(|&a, &b| {
            grid[a]
                .0
                .total_cmp(&grid[b].0)
                .then(grid[b].1.cmp(&grid[a].1))
        })
}

pub fn one_se_rule(cv: &CvResult) -> (f64, usize) {
    one_se_index(&cv.grid, &cv.mean_error, &cv.se_error)
        .map(|i| cv.grid[i])
        .expect("cross-validation grid is never empty")
}

/// A fit at tuned `(λ, k)` on the full panel.
#[derive(Debug, Clone)]
pub struct TunedFit {
    pub spec: BasisSpec,
    pub fit: FitResult,
    /// Coefficients on the full part set (baseline fits expanded).
    pub coefficients: DVector<f64>,
    pub kkt: f64,
}

/// Fits the full panel along the `λ` path of `k` down to `lambda`.
pub fn fit_at(
    panel: &FunctionalPanel,
    method: &Method,
    settings: &CvSettings,
    lambda: f64,
    k: usize,
) -> Result<TunedFit> {
    let spec = basis_for(&panel.grid, settings.order, k)?;
    let data = method.regression_data(panel)?;
    let sys = GramSystem::from_data(&data, &spec)?;
    let constraints = method.constraints(panel, k)?;
    let mut lambdas: Vec<f64> = lambdas_for(&settings.lambdas, &sys)
        .into_iter()
        .filter(|&l| l > lambda)
        .collect();
    lambdas.push(lambda);
    let mut fits = solve_path(&sys, &constraints, &lambdas, &settings.solver)?;
    let mut fit = fits.pop().expect("path is nonempty");
    method.tag(&mut fit);
    let kkt = crate::solver::kkt_residual(&sys, &constraints, &fit, lambda);
    let coefficients = method.full_coefficients(&fit, &panel.block_sizes());
    Ok(TunedFit {
        spec,
        fit,
        coefficients,
        kkt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub active_set: Vec<usize>,
    /// `(∫ β̂_j²)^{1/2}` on the observation grid.
    pub norms: Vec<f64>,
    pub shares: Vec<f64>,
}

/// Integrated L₂ norm of each stacked curve on `grid` (trapezoid).
pub fn curve_norms(coefs: &DVector<f64>, spec: &BasisSpec, grid: &[f64]) -> Result<Vec<f64>> {
    let w = trapezoid_weights(grid)?;
    let p = coefs.len() / spec.count();
    let mut sq = vec![0.0; p];
    for (&t, wv) in grid.iter().zip(&w) {
        let vals = spec.curves_at(coefs.as_slice(), t)?;
        for (s, v) in sq.iter_mut().zip(vals) {
            *s += wv * v * v;
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// `Ŝ = { j : ‖β̂_j‖ / Σ ‖β̂_l‖ ≥ 1/p }`; empty for an all-zero fit.
pub fn active_set(
    coefs: &DVector<f64>,
    spec: &BasisSpec,
    grid: &[f64],
    p: usize,
) -> Result<SelectionReport> {
    if coefs.len() != p * spec.count() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {p} curves of size {}",
            coefs.len(),
            spec.count()
        )));
    }
    let norms = curve_norms(coefs, spec, grid)?;
    Ok(report_from_norms(norms))
}

pub fn report_from_norms(norms: Vec<f64>) -> SelectionReport {
    let p = norms.len();
    let total: f64 = norms.iter().sum();
    if !(total > 0.0) {
        return SelectionReport {
            active_set: Vec::new(),
            shares: vec![0.0; p],
            norms,
        };
    }
    let shares: Vec<f64> = norms.iter().map(|n| n / total).collect();
    let threshold = 1.0 / p as f64;
    let active_set = shares
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= threshold)
        .map(|(j, _)| j)
        .collect();
    SelectionReport {
        active_set,
        norms,
        shares,
    }
}

/// Points per window for the integrals of the relative magnitudes.
const WINDOW_POINTS: usize = 201;

/// Share of each block in `Σ_l ∫_window β_{jl}²`, per window.
/// Returns `shares[window][block]`.
pub fn relative_magnitude(
    coefs: &DVector<f64>,
    spec: &BasisSpec,
    block_sizes: &[usize],
    windows: &[(f64, f64)],
) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = spec.domain();
    let p: usize = block_sizes.iter().sum();
    if coefs.len() != p * spec.count() {
        return Err(Error::Dimension("coefficients do not match the blocks".into()));
    }
    windows
        .iter()
        .map(|&(a, b)| {
            if !(a < b) || a < lo || b > hi {
                return Err(Error::OutOfDomain { t: if a < lo { a } else { b }, lo, hi });
            }
            let grid: Vec<f64> = (0..WINDOW_POINTS)
                .map(|i| a + (b - a) * i as f64 / (WINDOW_POINTS - 1) as f64)
                .collect();
            let w = trapezoid_weights(&grid)?;
            let mut per_block = vec![0.0; block_sizes.len()];
            for (&t, wv) in grid.iter().zip(&w) {
                let vals = spec.curves_at(coefs.as_slice(), t)?;
                let mut start = 0;
                for (j, &size) in block_sizes.iter().enumerate() {
                    per_block[j] += wv * vals[start..start + size].iter().map(|v| v * v).sum::<f64>();
                    start += size;
                }
            }
            let total: f64 = per_block.iter().sum();
            if !(total > 0.0) {
                return Err(Error::UndefinedShare(a, b));
            }
            Ok(per_block.into_iter().map(|s| s / total).collect())
        })
        .collect()
}

/// How tuning is done inside each bootstrap replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningPlan {
    pub folds: FoldPlan,
    pub cv: CvSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityResult {
    /// Per-curve selection proportion.
    pub proportions: Vec<f64>,
    pub replicates: usize,
    /// Replicates whose final fit did not converge.
    pub nonconverged: usize,
}

/// Independent ChaCha8 stream `stream` under a user seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Resamples units with replacement `replicates` times, retunes and refits
/// each resample, and reports how often every curve lands in `Ŝ`.
pub fn bootstrap_stability(
    panel: &FunctionalPanel,
    replicates: usize,
    tuning: &TuningPlan,
    seed: u64,
) -> Result<StabilityResult> {
    if replicates == 0 {
        return Err(Error::Config("at least one bootstrap replicate is required".into()));
    }
    let n = panel.n();
    let p = panel.p();
    let outcomes: Vec<Result<(Vec<usize>, bool)>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = panel.select_units(&idx);
            let folds = tuning.folds.folds(n, &mut rng)?;
            let cv = cross_validate(&sample, &Method::Constrained, &tuning.cv, &folds)?;
            let (lambda, k) = cv.chosen;
            let tuned = fit_at(&sample, &Method::Constrained, &tuning.cv, lambda, k)?;
            let report = active_set(&tuned.coefficients, &tuned.spec, &sample.grid, p)?;
            Ok((report.active_set, tuned.fit.converged))
        })
        .collect();
    let mut counts = vec![0usize; p];
    let mut nonconverged = 0;
    for o in outcomes {
        let (active, ok) = o?;
        for j in active {
            counts[j] += 1;
        }
        if !ok {
            nonconverged += 1;
        }
    }
    Ok(StabilityResult {
        proportions: counts
            .into_iter()
            .map(|c| c as f64 / replicates as f64)
            .collect(),
        replicates,
        nonconverged,
    })
}
