//! Trapezoidal functional inner products and profiling of the control block.
//!
//! Every integral over the observation window is replaced by
//! `Σ_v w_v f(t_v)` with composite trapezoid weights, which is the same as
//! integrating the piecewise-linear interpolant of the observed curves.
//! Grids may be uneven.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::basis::BasisSpec;
use crate::design::{check_grid, RegressionData};
use crate::error::{Error, Result};

/// Relative ridge added to the control Gram matrix before factorization.
pub const CONTROL_RIDGE: f64 = 1e-10;

pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let v = grid.len();
    let mut w = vec![0.0; v];
    w[0] = (grid[1] - grid[0]) / 2.0;
    w[v - 1] = (grid[v - 1] - grid[v - 2]) / 2.0;
    for i in 1..v - 1 {
        w[i] = (grid[i + 1] - grid[i - 1]) / 2.0;
    }
    Ok(w)
}

/// `∫ f` over the grid span from samples of `f` on the grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} values on a grid of {}",
            values.len(),
            grid.len()
        )));
    }
    Ok(trapezoid_weights(grid)?
        .iter()
        .zip(values)
        .map(|(w, f)| w * f)
        .sum())
}

/// Quadrature-built normal-equation blocks of the penalized problem and
/// their profiled versions with the control coefficients eliminated.
#[derive(Debug, Clone)]
pub struct GramSystem {
    /// `∫ Φ̃ᵀ Zᵀ Z Φ̃`
    pub k: DMatrix<f64>,
    /// `∫ Φ̃ᵀ Zᵀ y`
    pub j: DVector<f64>,
    /// `∫ Φ̃_cᵀ Z_cᵀ Z_c Φ̃_c`
    pub m: DMatrix<f64>,
    /// `∫ Φ̃_cᵀ Z_cᵀ y`
    pub p: DVector<f64>,
    /// `∫ Φ̃_cᵀ Z_cᵀ Z Φ̃`
    pub q: DMatrix<f64>,
    /// `K − Qᵀ M⁻¹ Q`
    pub k_tilde: DMatrix<f64>,
    /// `J − Qᵀ M⁻¹ P`
    pub j_tilde: DVector<f64>,
    /// Basis size shared by every curve.
    pub basis_size: usize,
    /// `½∫yᵀy − ½ Pᵀ M⁻¹ P`: the profiled loss at `b = 0`.
    pub offset: f64,
    m_factor: Cholesky<f64, Dyn>,
}

impl GramSystem {
    pub fn from_data(data: &RegressionData, spec: &BasisSpec) -> Result<Self> {
        build_gram(&data.z, &data.zc, &data.y, spec, &data.grid)
    }

    /// Number of penalized curves.
    pub fn curves(&self) -> usize {
        self.j.len() / self.basis_size
    }

    /// `M⁻¹ (P − Q b)`
    pub fn recover_control(&self, b: &DVector<f64>) -> DVector<f64> {
        self.m_factor.solve(&(&self.p - &self.q * b))
    }

    /// `½ bᵀ K̃ b − bᵀ J̃ + offset`, i.e. half the integrated squared
    /// residual once the control coefficients are profiled out.
    pub fn profiled_loss(&self, b: &DVector<f64>) -> f64 {
        0.5 * b.dot(&(&self.k_tilde * b)) - b.dot(&self.j_tilde) + self.offset
    }
}

/// Accumulates `Σ_v w_v (Aᵥᵀ Bᵥ) ⊗ (φᵥ φᵥᵀ)` for the block-Kronecker Gram
/// matrices. `cross[v]` is the small `rows × cols` product at time `v`.
fn kron_accumulate(
    cross: &[DMatrix<f64>],
    weights: &[f64],
    local: &[(usize, Vec<f64>)],
    k: usize,
) -> DMatrix<f64> {
    let (rows, cols) = cross[0].shape();
    let mut out = DMatrix::zeros(rows * k, cols * k);
    for (v, c) in cross.iter().enumerate() {
        let (first, phi) = &local[v];
        let w = weights[v];
        for m in 0..cols {
            for l in 0..rows {
                let s = w * c[(l, m)];
                if s == 0.0 {
                    continue;
                }
                for (bi, pb) in phi.iter().enumerate() {
                    let col = m * k + first + bi;
                    let sb = s * pb;
                    for (ai, pa) in phi.iter().enumerate() {
                        out[(l * k + first + ai, col)] += sb * pa;
                    }
                }
            }
        }
    }
    out
}

fn kron_vector(
    cross: &[DVector<f64>],
    weights: &[f64],
    local: &[(usize, Vec<f64>)],
    k: usize,
) -> DVector<f64> {
    let rows = cross[0].len();
    let mut out = DVector::zeros(rows * k);
    for (v, c) in cross.iter().enumerate() {
        let (first, phi) = &local[v];
        for l in 0..rows {
            let s = weights[v] * c[l];
            for (ai, pa) in phi.iter().enumerate() {
                out[l * k + first + ai] += s * pa;
            }
        }
    }
    out
}

/// Builds `K, J, M, P, Q` by trapezoid quadrature and profiles out the
/// controls with a Cholesky solve against the (ridged) `M`.
pub fn build_gram(
    z: &[DMatrix<f64>],
    zc: &[DMatrix<f64>],
    y: &DMatrix<f64>,
    spec: &BasisSpec,
    grid: &[f64],
) -> Result<GramSystem> {
    let weights = trapezoid_weights(grid)?;
    let nv = grid.len();
    if z.len() != nv || zc.len() != nv || y.ncols() != nv {
        return Err(Error::Dimension("design slices do not match the grid".into()));
    }
    let n = y.nrows();
    if z.iter().chain(zc).any(|m| m.nrows() != n) {
        return Err(Error::Dimension("design slices do not match the response rows".into()));
    }
    let k = spec.count();
    let local = grid
        .iter()
        .map(|&t| spec.eval_local(t))
        .collect::<Result<Vec<_>>>()?;

    let yv: Vec<DVector<f64>> = (0..nv).map(|v| y.column(v).into_owned()).collect();
    let zz: Vec<_> = z.iter().map(|m| m.tr_mul(m)).collect();
    let zy: Vec<_> = z.iter().zip(&yv).map(|(m, y)| m.tr_mul(y)).collect();
    let cc: Vec<_> = zc.iter().map(|m| m.tr_mul(m)).collect();
    let cy: Vec<_> = zc.iter().zip(&yv).map(|(m, y)| m.tr_mul(y)).collect();
    let cz: Vec<_> = zc.iter().zip(z).map(|(c, m)| c.tr_mul(m)).collect();

    let k_mat = kron_accumulate(&zz, &weights, &local, k);
    let j = kron_vector(&zy, &weights, &local, k);
    let mut m = kron_accumulate(&cc, &weights, &local, k);
    let p = kron_vector(&cy, &weights, &local, k);
    let q = kron_accumulate(&cz, &weights, &local, k);
    let y_energy: f64 = yv
        .iter()
        .zip(&weights)
        .map(|(y, w)| w * y.norm_squared())
        .sum();

    let dim = m.nrows();
    let ridge = CONTROL_RIDGE * m.trace() / dim as f64;
    if !(ridge > 0.0) {
        return Err(Error::SingularControls);
    }
    for i in 0..dim {
        m[(i, i)] += ridge;
    }
    let m_factor = Cholesky::new(m.clone()).ok_or(Error::SingularControls)?;
    let m_inv_q = m_factor.solve(&q);
    let m_inv_p = m_factor.solve(&p);
    let mut k_tilde = &k_mat - q.tr_mul(&m_inv_q);
    symmetrize(&mut k_tilde);
    let j_tilde = &j - q.tr_mul(&m_inv_p);
    let offset = 0.5 * y_energy - 0.5 * p.dot(&m_inv_p);

    Ok(GramSystem {
        k: k_mat,
        j,
        m,
        p,
        q,
        k_tilde,
        j_tilde,
        basis_size: k,
        offset,
        m_factor,
    })
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
}

pub fn recover_control(sys: &GramSystem, b_hat: &DVector<f64>) -> DVector<f64> {
    sys.recover_control(b_hat)
}
