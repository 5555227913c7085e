//! ADMM for the group-Lasso subproblem
//!
//! ```text
//! minimize ½ bᵀ A b − bᵀ c + λ Σ_j ‖b_j‖₂
//! ```
//!
//! with equal-size contiguous groups. The splitting is `b = z`, so the
//! x-update is a linear solve with `A + τI` and the z-update is the group
//! soft-threshold. ADMM runs on a working set of groups; groups outside the
//! set are held at zero and admitted when they violate `‖g_j‖₂ ≤ λ`.
//!
//! When ADMM stalls on a stable support, the iterate is polished by Newton
//! steps on that support, with conjugate gradients preconditioned by the
//! ADMM factorization. A polished point is only accepted if it passes the
//! same optimality test as a plain ADMM iterate.

use std::rc::Rc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::group_soft_threshold;

/// Over-relaxation parameter of the z-update.
const RELAXATION: f64 = 1.6;
/// Residual-balancing ratio for step adaptation.
const BALANCE: f64 = 10.0;
/// Iterations between optimality checks.
const CHECK_EVERY: usize = 10;
/// Iterations before the first polishing attempt; plain ADMM usually
/// finishes well-conditioned warm-started problems sooner.
const POLISH_AFTER: usize = 50;
/// Step bounds relative to the largest diagonal entry of `A`.
const STEP_RANGE: (f64, f64) = (1e-8, 1e4);
/// Cached restricted matrices and factorizations.
const CACHE_SLOTS: usize = 6;

#[derive(Debug, Clone, Copy)]
pub struct InnerSettings {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub step: f64,
    /// Upper bound on the stopping tolerance.
    pub tol_cap: f64,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub b: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Group-Lasso KKT residual of `b`.
    pub kkt: f64,
    /// Final ADMM step, reusable as the next warm start.
    pub step: f64,
}

/// Per-group optimality residual of `b` given the smooth gradient `g`.
pub(crate) fn group_kkt(g: &[f64], b: &[f64], lambda: f64, k: usize) -> f64 {
    g.chunks_exact(k)
        .zip(b.chunks_exact(k))
        .map(|(gj, bj)| {
            let nb = norm(bj);
            if nb > 0.0 {
                let s = lambda / nb;
                gj.iter()
                    .zip(bj)
                    .map(|(g, b)| (g + s * b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            } else {
                (norm(gj) - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `A[:, W] b_W − c`, the smooth gradient when `b` vanishes off `W`.
fn gradient_on_support(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    b: &DVector<f64>,
    groups: &[usize],
    k: usize,
) -> DVector<f64> {
    let mut g = -c.clone();
    for &j in groups {
        for a_idx in 0..k {
            let col = j * k + a_idx;
            let coef = b[col];
            if coef != 0.0 {
                g.axpy(coef, &a.column(col), 1.0);
            }
        }
    }
    g
}

fn indices(groups: &[usize], k: usize) -> Vec<usize> {
    groups.iter().flat_map(|&j| (j * k)..(j * k + k)).collect()
}

fn gather(z: &DVector<f64>, groups: &[usize], k: usize) -> DVector<f64> {
    let idx = indices(groups, k);
    DVector::from_fn(idx.len(), |r, _| z[idx[r]])
}

fn scatter(zs: &DVector<f64>, groups: &[usize], k: usize, dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(dim);
    for (pos, &j) in groups.iter().enumerate() {
        out.rows_mut(j * k, k).copy_from(&zs.rows(pos * k, k));
    }
    out
}

fn scale_of(a: &DMatrix<f64>) -> f64 {
    let d = a.diagonal().amax();
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

fn clamp_step(step: f64, scale: f64) -> f64 {
    step.clamp(STEP_RANGE.0 * scale, STEP_RANGE.1 * scale)
}

fn factor(a: &DMatrix<f64>, step: f64) -> Cholesky<f64, Dyn> {
    // A is PSD only up to rounding; add jitter if the factorization fails.
    let scale = scale_of(a);
    let mut jitter = 0.0;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += step + jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return c;
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
    }
}

type Chol = Cholesky<f64, Dyn>;

/// Restricted matrices `A[W, W]` and factorizations of `A[W, W] + τI` for
/// one matrix `A`. Reusing it across calls is valid only while `A` is
/// unchanged; [`FactorCache::retag`] drops everything when it changes.
#[derive(Default)]
pub(crate) struct FactorCache {
    tag: Option<u64>,
    clock: u64,
    subs: Vec<(Vec<usize>, Rc<DMatrix<f64>>, u64)>,
    chols: Vec<(Vec<usize>, u64, Rc<Chol>, u64)>,
}

impl FactorCache {
    pub(crate) fn retag(&mut self, tag: u64) {
        if self.tag != Some(tag) {
            self.tag = Some(tag);
            self.subs.clear();
            self.chols.clear();
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn sub(&mut self, a: &DMatrix<f64>, groups: &[usize], k: usize) -> Rc<DMatrix<f64>> {
        let now = self.tick();
        if let Some(e) = self.subs.iter_mut().find(|e| e.0 == groups) {
            e.2 = now;
            return e.1.clone();
        }
        let idx = indices(groups, k);
        let m = Rc::new(DMatrix::from_fn(idx.len(), idx.len(), |r, s| a[(idx[r], idx[s])]));
        if self.subs.len() >= CACHE_SLOTS {
            let oldest = (0..self.subs.len()).min_by_key(|&i| self.subs[i].2).unwrap();
            self.subs.swap_remove(oldest);
        }
        self.subs.push((groups.to_vec(), m.clone(), now));
        m
    }

    fn chol(&mut self, sub: &DMatrix<f64>, groups: &[usize], step: f64) -> Rc<Chol> {
        let now = self.tick();
        let key = step.to_bits();
        if let Some(e) = self.chols.iter_mut().find(|e| e.1 == key && e.0 == groups) {
            e.3 = now;
            return e.2.clone();
        }
        let c = Rc::new(factor(sub, step));
        if self.chols.len() >= CACHE_SLOTS {
            let oldest = (0..self.chols.len()).min_by_key(|&i| self.chols[i].3).unwrap();
            self.chols.swap_remove(oldest);
        }
        self.chols.push((groups.to_vec(), key, c.clone(), now));
        c
    }
}

struct AdmmOutcome {
    z: DVector<f64>,
    iterations: usize,
    step: f64,
}

fn support_of(z: &DVector<f64>, k: usize) -> Vec<usize> {
    z.as_slice()
        .chunks_exact(k)
        .enumerate()
        .filter(|(_, c)| c.iter().any(|&x| x != 0.0))
        .map(|(j, _)| j)
        .collect()
}

/// `½ bᵀAb − cᵀb + λ Σ ‖b_j‖`
fn group_objective(a: &DMatrix<f64>, c: &DVector<f64>, b: &DVector<f64>, lambda: f64, k: usize) -> f64 {
    0.5 * b.dot(&(a * b)) - c.dot(b) + lambda * b.as_slice().chunks_exact(k).map(norm).sum::<f64>()
}

/// Preconditioned conjugate gradients for `J d = r`, `J` given as a product.
fn pcg(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    r0: &DVector<f64>,
    pre: &Chol,
    rtol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let mut x = DVector::zeros(r0.len());
    let mut r = r0.clone();
    let target = rtol * r0.norm();
    let mut y = pre.solve(&r);
    let mut d = y.clone();
    let mut ry = r.dot(&y);
    for _ in 0..max_iter {
        if r.norm() <= target {
            break;
        }
        let jd = apply(&d);
        let curv = d.dot(&jd);
        if !(curv > 0.0) {
            break;
        }
        let alpha = ry / curv;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &jd, 1.0);
        y = pre.solve(&r);
        let ry_new = r.dot(&y);
        d = &y + &d * (ry_new / ry);
        ry = ry_new;
    }
    x
}

/// Newton iterations on a fixed support where every group is nonzero:
/// solves `A b − c + λ b_j / ‖b_j‖ = 0`. `pre` factors `A + τI` and
/// preconditions the Newton systems. Returns `None` when a group collapses
/// or the line search stalls.
fn polish(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    z: &DVector<f64>,
    lambda: f64,
    k: usize,
    tol: f64,
    pre: &Chol,
) -> Option<DVector<f64>> {
    const NEWTON_STEPS: usize = 30;
    let mut b = z.clone();
    let mut phi = group_objective(a, c, &b, lambda, k);
    for _ in 0..NEWTON_STEPS {
        let mut f = a * &b - c;
        let mut units = Vec::with_capacity(b.len() / k);
        for (fj, bj) in f.as_mut_slice().chunks_exact_mut(k).zip(b.as_slice().chunks_exact(k)) {
            let nb = norm(bj);
            if !(nb > 0.0) {
                return None;
            }
            for (fv, bv) in fj.iter_mut().zip(bj) {
                *fv += lambda * bv / nb;
            }
            units.push((nb, bj.iter().map(|v| v / nb).collect::<Vec<_>>()));
        }
        let worst = f.as_slice().chunks_exact(k).map(norm).fold(0.0, f64::max);
        if worst <= tol {
            return Some(b);
        }
        let apply = |v: &DVector<f64>| {
            let mut out = a * v;
            for ((oj, vj), (nb, u)) in out
                .as_mut_slice()
                .chunks_exact_mut(k)
                .zip(v.as_slice().chunks_exact(k))
                .zip(&units)
            {
                let s = lambda / nb;
                let proj: f64 = u.iter().zip(vj).map(|(x, y)| x * y).sum();
                for ((o, vv), uu) in oj.iter_mut().zip(vj).zip(u) {
                    *o += s * (vv - uu * proj);
                }
            }
            out
        };
        let d = pcg(apply, &(-&f), pre, 1e-3_f64.min(worst), 4 * b.len().max(10));
        let slope = -f.dot(&d);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let trial = &b + &d * t;
            let phi_t = group_objective(a, c, &trial, lambda, k);
            if phi_t <= phi + 1e-4 * t * slope.min(0.0) {
                b = trial;
                phi = phi_t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    None
}

/// ADMM restricted to the working set `groups`, warm-started from `z0`.
/// Once the support stops changing, Newton polishing on that support is
/// attempted; a polished point is kept only if it passes the full test.
#[allow(clippy::too_many_arguments)]
fn admm(
    cache: &mut FactorCache,
    a_full: &DMatrix<f64>,
    c_full: &DVector<f64>,
    groups: &[usize],
    z0: DVector<f64>,
    lambda: f64,
    k: usize,
    tol: f64,
    max_iter: usize,
    step0: f64,
) -> AdmmOutcome {
    let a = cache.sub(a_full, groups, k);
    let c = gather(c_full, groups, k);
    let scale = scale_of(&a);
    let mut step = clamp_step(step0, scale);
    let mut chol = cache.chol(&a, groups, step);
    let mut z = z0;
    // The scaled dual that makes the warm start a fixed point when z0 is optimal.
    let mut w = (&c - &*a * &z) / step;
    let mut iterations = 0;
    let mut rhs = DVector::zeros(z.len());
    let mut z_old = z.clone();
    let local = z.len() / k;
    let mut last_support = support_of(&z, k);
    let mut next_polish = POLISH_AFTER;
    let mut backoff = POLISH_AFTER;
    while iterations < max_iter {
        iterations += 1;
        rhs.copy_from(&c);
        rhs.axpy(step, &z, 1.0);
        rhs.axpy(-step, &w, 1.0);
        let x = chol.solve(&rhs);
        let x_hat = &x * RELAXATION + &z * (1.0 - RELAXATION);
        z_old.copy_from(&z);
        let mut v = &x_hat + &w;
        let kappa = lambda / step;
        for chunk in v.as_mut_slice().chunks_exact_mut(k) {
            let shrunk = group_soft_threshold(chunk, kappa);
            chunk.copy_from_slice(&shrunk);
        }
        z = v;
        w += &x_hat - &z;

        if iterations % CHECK_EVERY == 0 || iterations == 1 {
            let g = &*a * &z - &c;
            if group_kkt(g.as_slice(), z.as_slice(), lambda, k) <= tol {
                break;
            }
            let support = support_of(&z, k);
            if support == last_support && !support.is_empty() && iterations >= next_polish {
                let polished = if support.len() == local {
                    polish(&a, &c, &z, lambda, k, 0.5 * tol, &chol)
                } else {
                    let global: Vec<usize> = support.iter().map(|&s| groups[s]).collect();
                    let a_s = cache.sub(a_full, &global, k);
                    let pre = cache.chol(&a_s, &global, step);
                    let zs = gather(&z, &support, k);
                    let cs = gather(&c, &support, k);
                    polish(&a_s, &cs, &zs, lambda, k, 0.5 * tol, &pre)
                        .map(|bs| scatter(&bs, &support, k, z.len()))
                };
                if let Some(p) = polished {
                    let gp = &*a * &p - &c;
                    if group_kkt(gp.as_slice(), p.as_slice(), lambda, k) <= tol {
                        z = p;
                        break;
                    }
                }
                next_polish = iterations + backoff;
                backoff *= 2;
            }
            last_support = support;
            let primal = (&x - &z).norm();
            let dual = step * (&z - &z_old).norm();
            let new_step = clamp_step(
                if primal > BALANCE * dual {
                    step * 2.0
                } else if dual > BALANCE * primal {
                    step / 2.0
                } else {
                    step
                },
                scale,
            );
            if new_step != step {
                w *= step / new_step;
                step = new_step;
                chol = cache.chol(&a, groups, step);
            }
        }
    }
    AdmmOutcome {
        z,
        iterations,
        step,
    }
}

/// Solves the group-Lasso subproblem with groups of size `k`.
///
/// On return `kkt <= min(max(tol_abs, tol_rel · ‖c‖₂), tol_cap)` unless the
/// iteration cap was reached, in which case `converged` is false and the
/// last iterate is returned.
pub fn inner_group_lasso(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    lambda: f64,
    k: usize,
    settings: &InnerSettings,
    warm: Option<&DVector<f64>>,
) -> InnerResult {
    inner_group_lasso_cached(&mut FactorCache::default(), a, c, lambda, k, settings, warm)
}

/// [`inner_group_lasso`] reusing factorizations of `a` held in `cache`.
pub(crate) fn inner_group_lasso_cached(
    cache: &mut FactorCache,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    lambda: f64,
    k: usize,
    settings: &InnerSettings,
    warm: Option<&DVector<f64>>,
) -> InnerResult {
    let dim = c.len();
    assert_eq!(a.shape(), (dim, dim));
    assert!(k > 0 && dim % k == 0, "groups must tile the coefficient vector");
    let groups = dim / k;
    let tol = settings
        .tol_abs
        .max(settings.tol_rel * c.norm())
        .min(settings.tol_cap);
    let mut b = warm.cloned().unwrap_or_else(|| DVector::zeros(dim));
    let mut step = settings.step;
    let mut total_iter = 0;

    let mut active: Vec<bool> = (0..groups)
        .map(|j| b.rows(j * k, k).iter().any(|&x| x != 0.0))
        .collect();
    loop {
        let support: Vec<usize> = (0..groups).filter(|&j| active[j]).collect();
        let g = gradient_on_support(a, c, &b, &support, k);
        let mut added = false;
        let mut outside = 0.0f64;
        for j in 0..groups {
            if active[j] {
                continue;
            }
            let excess = norm(&g.as_slice()[j * k..j * k + k]) - lambda;
            if excess > 0.5 * tol {
                active[j] = true;
                added = true;
            }
            outside = outside.max(excess.max(0.0));
        }
        let support: Vec<usize> = (0..groups).filter(|&j| active[j]).collect();
        if !added {
            let inside = if support.is_empty() {
                0.0
            } else {
                let gs = gather(&g, &support, k);
                let bs = gather(&b, &support, k);
                group_kkt(gs.as_slice(), bs.as_slice(), lambda, k)
            };
            let kkt = inside.max(outside);
            if kkt <= tol || total_iter >= settings.max_iter {
                return InnerResult {
                    b,
                    iterations: total_iter,
                    converged: kkt <= tol,
                    kkt,
                    step,
                };
            }
        }
        if support.is_empty() {
            // Nothing violates and nothing is active: b = 0 is optimal.
            return InnerResult {
                b,
                iterations: total_iter,
                converged: true,
                kkt: outside,
                step,
            };
        }
        let z0 = gather(&b, &support, k);
        let remaining = settings.max_iter.saturating_sub(total_iter).max(1);
        let out = admm(cache, a, c, &support, z0, lambda, k, 0.5 * tol, remaining, step);
        total_iter += out.iterations;
        step = out.step;
        b = scatter(&out.z, &support, k, dim);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> InnerSettings {
        InnerSettings {
            tol_abs: 1e-10,
            tol_rel: 1e-10,
            max_iter: 100_000,
            step: 1.0,
            tol_cap: f64::INFINITY,
        }
    }

    fn spd(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let x = DMatrix::from_fn(dim + 3, dim, |_, _| next());
        x.tr_mul(&x)
    }

    #[test]
    fn unpenalized_limit_solves_linear_system() {
        let a = spd(6, 3);
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0]);
        let res = inner_group_lasso(&a, &c, 0.0, 2, &settings(), None);
        assert!(res.converged);
        let direct = a.clone().cholesky().unwrap().solve(&c);
        assert!((&res.b - &direct).amax() < 1e-7);
    }

    #[test]
    fn large_lambda_gives_zero() {
        let a = spd(6, 5);
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0]);
        let lmax = c
            .as_slice()
            .chunks(3)
            .map(norm)
            .fold(0.0, f64::max);
        let res = inner_group_lasso(&a, &c, lmax * 1.0001, 3, &settings(), None);
        assert!(res.converged);
        assert_eq!(res.b.amax(), 0.0);
    }

    #[test]
    fn diagonal_scalar_lasso_closed_form() {
        let diag = [2.0, 0.5, 4.0, 1.0];
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&diag));
        let c = DVector::from_vec(vec![3.0, -0.2, -8.0, 0.7]);
        let lambda = 0.9;
        let res = inner_group_lasso(&a, &c, lambda, 1, &settings(), None);
        for i in 0..4 {
            let cj: f64 = c[i];
            let want = cj.signum() * (cj.abs() - lambda).max(0.0) / diag[i];
            assert!((res.b[i] - want).abs() < 1e-8, "{i}: {} vs {want}", res.b[i]);
        }
    }

    #[test]
    fn warm_start_at_optimum_returns_quickly() {
        let a = spd(8, 11);
        let c = DVector::from_fn(8, |i, _| (i as f64 * 0.7).cos() * 3.0);
        let cold = inner_group_lasso(&a, &c, 0.3, 2, &settings(), None);
        let warm = inner_group_lasso(&a, &c, 0.3, 2, &settings(), Some(&cold.b));
        assert!(warm.converged);
        assert!(warm.iterations <= cold.iterations);
        assert!((&warm.b - &cold.b).amax() < 1e-7);
    }
}
