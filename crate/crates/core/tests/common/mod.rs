//! Instance generators and independent reference solvers shared by the
//! integration tests.
#![allow(dead_code)]

use fclr::design::{CompositionBlock, ControlSeries};
use fclr::quadrature::trapezoid_weights;
use fclr::{BasisSpec, ConstraintSet, FunctionalPanel, GramSystem, RegressionData};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub mod checks;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random panel: softmax-of-Gaussian compositions, a response built from
/// a smooth log-contrast signal plus noise, and optional controls.
pub fn random_panel(seed: u64, n: usize, sizes: &[usize], grid_len: usize, controls: usize) -> FunctionalPanel {
    let mut r = rng(seed);
    let grid: Vec<f64> = (0..grid_len).map(|v| v as f64 / (grid_len - 1) as f64).collect();
    let blocks: Vec<CompositionBlock> = sizes
        .iter()
        .enumerate()
        .map(|(j, &s)| CompositionBlock {
            name: format!("b{j}"),
            parts: (0..s).map(|l| format!("b{j}p{l}")).collect(),
            shares: (0..grid_len)
                .map(|_| {
                    let mut m = DMatrix::from_fn(n, s, |_, _| {
                        let g: f64 = r.sample(StandardNormal);
                        (1.5 * g).exp()
                    });
                    for mut row in m.row_iter_mut() {
                        let t: f64 = row.sum();
                        row /= t;
                    }
                    m
                })
                .collect(),
        })
        .collect();
    let ctrl: Vec<ControlSeries> = (0..controls)
        .map(|c| ControlSeries {
            name: format!("c{c}"),
            values: DMatrix::from_fn(n, grid_len, |_, _| r.sample::<f64, _>(StandardNormal)),
        })
        .collect();
    let mut response = DMatrix::zeros(n, grid_len);
    for i in 0..n {
        for v in 0..grid_len {
            let t = grid[v];
            let mut y = 0.5 + t;
            for b in &blocks {
                let s = &b.shares[v];
                // contrast between the first two parts, varying in time
                y += (1.0 + t) * (s[(i, 0)].ln() - s[(i, 1)].ln());
            }
            for c in &ctrl {
                y += 0.3 * c.values[(i, v)];
            }
            let e: f64 = r.sample(StandardNormal);
            response[(i, v)] = y + 0.5 * e;
        }
    }
    FunctionalPanel::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        grid,
        response,
        blocks,
        ctrl,
    )
    .unwrap()
}

pub fn system(panel: &FunctionalPanel, k: usize) -> (GramSystem, ConstraintSet, BasisSpec) {
    let data = RegressionData::from_panel(panel).unwrap();
    let spec = BasisSpec::new(4.min(k), k, (panel.grid[0], *panel.grid.last().unwrap())).unwrap();
    let sys = GramSystem::from_data(&data, &spec).unwrap();
    let cons = fclr::design::build_constraints(&panel.block_sizes(), k).unwrap();
    (sys, cons, spec)
}

/// Solves `[[K, Lᵀ], [L, 0]] [b; ν] = [J; 0]` by a dense LU.
pub fn saddle(k: &DMatrix<f64>, j: &DVector<f64>, l: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let d = k.nrows();
    let m = l.nrows();
    let mut a = DMatrix::zeros(d + m, d + m);
    a.view_mut((0, 0), (d, d)).copy_from(k);
    a.view_mut((0, d), (d, m)).copy_from(&l.transpose());
    a.view_mut((d, 0), (m, d)).copy_from(l);
    let mut rhs = DVector::zeros(d + m);
    rhs.rows_mut(0, d).copy_from(j);
    let x = a.full_piv_lu().solve(&rhs).expect("saddle system is nonsingular");
    (x.rows(0, d).into_owned(), x.rows(d, m).into_owned())
}

/// Joint least squares over control and part coefficients, assembled
/// directly from the design on the grid (no profiling):
/// minimizes `∫ ‖y − Z_c Φ_c b_c − Z Φ b‖²` subject to `L̃ b = 0`.
/// Returns `(b, b_c)`.
pub fn joint_normal_equations(data: &RegressionData, spec: &BasisSpec, l_tilde: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let w = trapezoid_weights(&data.grid).unwrap();
    let k = spec.count();
    let p = data.p();
    let pc = data.controls();
    let d = (p + pc) * k;
    let mut g = DMatrix::zeros(d, d);
    let mut h = DVector::zeros(d);
    for (v, &t) in data.grid.iter().enumerate() {
        let phi = spec.eval(t).unwrap();
        for i in 0..data.n() {
            // row of the full design: [controls ⊗ φ, parts ⊗ φ]
            let mut x = DVector::zeros(d);
            for c in 0..pc {
                for a in 0..k {
                    x[c * k + a] = data.zc[v][(i, c)] * phi[a];
                }
            }
            for j in 0..p {
                for a in 0..k {
                    x[(pc + j) * k + a] = data.z[v][(i, j)] * phi[a];
                }
            }
            g += w[v] * &x * x.transpose();
            h += w[v] * data.y[(i, v)] * &x;
        }
    }
    let m = l_tilde.nrows();
    let mut l = DMatrix::zeros(m, d);
    l.view_mut((0, pc * k), (m, p * k)).copy_from(l_tilde);
    let (x, _) = saddle(&g, &h, &l);
    (x.rows(pc * k, p * k).into_owned(), x.rows(0, pc * k).into_owned())
}

fn group_objective(k_mat: &DMatrix<f64>, j: &DVector<f64>, b: &DVector<f64>, lambda: f64, k: usize) -> f64 {
    let pen: f64 = (0..b.len() / k).map(|g| b.rows(g * k, k).norm()).sum();
    0.5 * b.dot(&(k_mat * b)) - j.dot(b) + lambda * pen
}

/// Exhaustive reference for tiny constrained group-Lasso problems.
///
/// For every support `S` it looks for the interior stationary point of the
/// problem restricted to `S` (all groups of `S` nonzero) by damped Newton
/// steps on the equality-constrained KKT system. Each such point minimizes
/// the problem over supports contained in `S`, and the true support yields
/// the global minimizer, so the best candidate is the solution.
pub fn enumerate_active_sets(
    k_mat: &DMatrix<f64>,
    j: &DVector<f64>,
    cons: &ConstraintSet,
    lambda: f64,
) -> DVector<f64> {
    let k = cons.k;
    let dim = j.len();
    let p = dim / k;
    assert!(p <= 12, "enumeration is exponential in p");
    let block_of: Vec<usize> = cons
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat(b).take(s))
        .collect();
    let mut best = DVector::zeros(dim);
    let mut best_obj = group_objective(k_mat, j, &best, lambda, k);
    for mask in 1u32..(1 << p) {
        let groups: Vec<usize> = (0..p).filter(|g| mask & (1 << g) != 0).collect();
        // a block with a single active part forces that part to zero
        let mut per_block = vec![0; cons.block_sizes.len()];
        for &g in &groups {
            per_block[block_of[g]] += 1;
        }
        if per_block.iter().any(|&c| c == 1) {
            continue;
        }
        if let Some(b) = restricted_newton(k_mat, j, cons, lambda, &groups, &block_of) {
            let obj = group_objective(k_mat, j, &b, lambda, k);
            if obj < best_obj {
                best_obj = obj;
                best = b;
            }
        }
    }
    best
}

fn restricted_newton(
    k_mat: &DMatrix<f64>,
    j: &DVector<f64>,
    cons: &ConstraintSet,
    lambda: f64,
    groups: &[usize],
    block_of: &[usize],
) -> Option<DVector<f64>> {
    let k = cons.k;
    let idx: Vec<usize> = groups.iter().flat_map(|&g| (g * k)..(g * k + k)).collect();
    let m = idx.len();
    let ks = DMatrix::from_fn(m, m, |r, c| k_mat[(idx[r], idx[c])]);
    let js = DVector::from_fn(m, |r, _| j[idx[r]]);
    // zero-sum rows of the blocks that have active parts
    let mut blocks: Vec<usize> = groups.iter().map(|&g| block_of[g]).collect();
    blocks.dedup();
    let mut l = DMatrix::zeros(blocks.len() * k, m);
    for (bi, &blk) in blocks.iter().enumerate() {
        for (gi, &g) in groups.iter().enumerate() {
            if block_of[g] == blk {
                for a in 0..k {
                    l[(bi * k + a, gi * k + a)] = 1.0;
                }
            }
        }
    }
    // continuation in λ from the unpenalized restricted fit, where the
    // stationary point is exact; Newton from a distant start can stall at
    // the kink of a group norm
    let (mut b, _) = saddle(&ks, &js, &l);
    const STAGES: usize = 40;
    for stage in 1..=STAGES {
        let lam = lambda * stage as f64 / STAGES as f64;
        let f = |b: &DVector<f64>| -> f64 {
            let pen: f64 = (0..groups.len()).map(|g| b.rows(g * k, k).norm()).sum();
            0.5 * b.dot(&(&ks * b)) - js.dot(b) + lam * pen
        };
        for _ in 0..100 {
            let mut grad = &ks * &b - &js;
            let mut hess = ks.clone();
            for g in 0..groups.len() {
                let bg = b.rows(g * k, k).into_owned();
                let nrm = bg.norm();
                if nrm < 1e-13 {
                    return None;
                }
                let mut gg = grad.rows_mut(g * k, k);
                gg += lam * &bg / nrm;
                let block = DMatrix::identity(k, k) * (lam / nrm) - &bg * bg.transpose() * (lam / nrm.powi(3));
                let mut hv = hess.view_mut((g * k, g * k), (k, k));
                hv += block;
            }
            let (d, _) = saddle(&hess, &(-&grad), &l);
            let decrement = -grad.dot(&d);
            if decrement < 1e-24 {
                break;
            }
            let f0 = f(&b);
            let mut step = 1.0;
            while f(&(&b + &d * step)) > f0 - 1e-4 * step * decrement && step > 1e-12 {
                step *= 0.5;
            }
            if step <= 1e-12 {
                break;
            }
            b += &d * step;
        }
    }
    // accept only a stationary point; the restricted Hessian can be badly
    // conditioned, so the bar is relative to the data scale
    let mut grad = &ks * &b - &js;
    for g in 0..groups.len() {
        let bg = b.rows(g * k, k).into_owned();
        let mut gg = grad.rows_mut(g * k, k);
        gg += lambda * &bg / bg.norm();
    }
    let (_, nu) = saddle(&DMatrix::identity(m, m), &grad, &l);
    let resid = &grad - l.transpose() * nu;
    if resid.norm() < 1e-6 * (1.0 + js.norm()) {
        let mut full = DVector::zeros(j.len());
        for (r, &i) in idx.iter().enumerate() {
            full[i] = b[r];
        }
        Some(full)
    } else {
        None
    }
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
