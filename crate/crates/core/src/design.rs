//! Panels of functional compositions and the regression design built from them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on the unit sum of a stored composition row.
pub const CLOSURE_TOL: f64 = 1e-8;

/// Default zero replacement for count data: the maximum rounding error.
pub const DEFAULT_ZERO_REPLACEMENT: f64 = 0.5;

/// One composition observed over time: `shares[v]` is the `n × p_j` matrix
/// of parts at grid point `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionBlock {
    pub name: String,
    pub parts: Vec<String>,
    pub shares: Vec<DMatrix<f64>>,
}

/// A non-compositional covariate, `n × V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSeries {
    pub name: String,
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalPanel {
    pub units: Vec<String>,
    pub grid: Vec<f64>,
    /// `n × V`
    pub response: DMatrix<f64>,
    pub blocks: Vec<CompositionBlock>,
    pub controls: Vec<ControlSeries>,
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InsufficientGrid(grid.len()));
    }
    for (v, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
            return Err(Error::InvalidGrid(v + 1));
        }
    }
    Ok(())
}

impl FunctionalPanel {
    /// Validates shapes, the grid and the simplex constraint of every row.
    pub fn new(
        units: Vec<String>,
        grid: Vec<f64>,
        response: DMatrix<f64>,
        blocks: Vec<CompositionBlock>,
        controls: Vec<ControlSeries>,
    ) -> Result<Self> {
        check_grid(&grid)?;
        let n = units.len();
        let v_len = grid.len();
        if response.shape() != (n, v_len) {
            return Err(Error::Dimension(format!(
                "response is {:?}, expected ({n}, {v_len})",
                response.shape()
            )));
        }
        if blocks.is_empty() {
            return Err(Error::Dimension("at least one composition block is required".into()));
        }
        for (j, block) in blocks.iter().enumerate() {
            if block.parts.len() < 2 {
                return Err(Error::DegenerateBlock {
                    block: j,
                    size: block.parts.len(),
                });
            }
            if block.shares.len() != v_len {
                return Err(Error::Dimension(format!(
                    "block `{}` has {} time slices, expected {v_len}",
                    block.name,
                    block.shares.len()
                )));
            }
            for (v, slice) in block.shares.iter().enumerate() {
                if slice.shape() != (n, block.parts.len()) {
                    return Err(Error::Dimension(format!(
                        "block `{}` slice {v} is {:?}",
                        block.name,
                        slice.shape()
                    )));
                }
                for i in 0..n {
                    let row = slice.row(i);
                    if row.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                        return Err(Error::InvalidComposition(format!(
                            "block `{}`, unit `{}`, time {}: nonpositive share",
                            block.name, units[i], grid[v]
                        )));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > CLOSURE_TOL {
                        return Err(Error::InvalidComposition(format!(
                            "block `{}`, unit `{}`, time {}: shares sum to {s}",
                            block.name, units[i], grid[v]
                        )));
                    }
                }
            }
        }
        for c in &controls {
            if c.values.shape() != (n, v_len) {
                return Err(Error::Dimension(format!(
                    "control `{}` is {:?}",
                    c.name,
                    c.values.shape()
                )));
            }
        }
        Ok(Self {
            units,
            grid,
            response,
            blocks,
            controls,
        })
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    /// Total number of parts across blocks.
    pub fn p(&self) -> usize {
        self.blocks.iter().map(|b| b.parts.len()).sum()
    }

    pub fn q(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.parts.len()).collect()
    }

    /// `block/part` labels in design column order.
    pub fn part_labels(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| b.parts.iter().map(move |p| format!("{}/{}", b.name, p)))
            .collect()
    }

    /// The panel restricted to (possibly repeated) units, in the given order.
    pub fn select_units(&self, idx: &[usize]) -> FunctionalPanel {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), m.ncols(), |i, c| m[(idx[i], c)]);
        FunctionalPanel {
            units: idx.iter().map(|&i| self.units[i].clone()).collect(),
            grid: self.grid.clone(),
            response: pick(&self.response),
            blocks: self
                .blocks
                .iter()
                .map(|b| CompositionBlock {
                    name: b.name.clone(),
                    parts: b.parts.clone(),
                    shares: b.shares.iter().map(pick).collect(),
                })
                .collect(),
            controls: self
                .controls
                .iter()
                .map(|c| ControlSeries {
                    name: c.name.clone(),
                    values: pick(&c.values),
                })
                .collect(),
        }
    }
}

/// Replaces zero counts by `epsilon`; positive counts are left untouched.
pub fn zero_replace(counts: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("zero replacement must be positive, got {epsilon}")));
    }
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::InvalidComposition("counts must be finite and nonnegative".into()));
    }
    if !counts.iter().any(|&c| c > 0.0) {
        return Err(Error::DegenerateRow { row: 0 });
    }
    Ok(counts
        .iter()
        .map(|&c| if c == 0.0 { epsilon } else { c })
        .collect())
}

/// Divides a strictly positive row by its sum.
pub fn close(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidComposition("empty row".into()));
    }
    if values.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidComposition(
            "closure requires strictly positive entries".into(),
        ));
    }
    let s: f64 = values.iter().sum();
    Ok(values.iter().map(|x| x / s).collect())
}

/// `Z(t_v)`: elementwise log of the concatenated compositions, one `n × p`
/// matrix per grid point.
pub fn log_transform(panel: &FunctionalPanel) -> Result<Vec<DMatrix<f64>>> {
    let n = panel.n();
    let p = panel.p();
    (0..panel.grid.len())
        .map(|v| {
            let mut z = DMatrix::zeros(n, p);
            let mut col = 0;
            for block in &panel.blocks {
                let s = &block.shares[v];
                for l in 0..s.ncols() {
                    for i in 0..n {
                        let x = s[(i, l)];
                        if !(x > 0.0) {
                            return Err(Error::InvalidComposition(format!(
                                "cannot take the log of share {x} (block `{}`, unit {i}, time index {v})",
                                block.name
                            )));
                        }
                        z[(i, col)] = x.ln();
                    }
                    col += 1;
                }
            }
            Ok(z)
        })
        .collect()
}

/// Additive log-ratio design: within block `j`, `log(x_l / x_r)` for every
/// part `l` except the reference `references[j]`.
pub fn alr_transform(panel: &FunctionalPanel, references: &[usize]) -> Result<Vec<DMatrix<f64>>> {
    if references.len() != panel.q() {
        return Err(Error::Dimension(format!(
            "{} references for {} blocks",
            references.len(),
            panel.q()
        )));
    }
    for (j, (&r, b)) in references.iter().zip(&panel.blocks).enumerate() {
        if r >= b.parts.len() {
            return Err(Error::Config(format!("reference {r} out of range for block {j}")));
        }
    }
    let logs = log_transform(panel)?;
    let n = panel.n();
    let reduced = panel.p() - panel.q();
    Ok(logs
        .iter()
        .map(|z| {
            let mut out = DMatrix::zeros(n, reduced);
            let mut src = 0;
            let mut dst = 0;
            for (b, &r) in panel.blocks.iter().zip(references) {
                for l in 0..b.parts.len() {
                    if l != r {
                        for i in 0..n {
                            out[(i, dst)] = z[(i, src + l)] - z[(i, src + r)];
                        }
                        dst += 1;
                    }
                }
                src += b.parts.len();
            }
            out
        })
        .collect())
}

/// `Z_c(t_v)`: a column of ones followed by the panel controls.
pub fn build_controls(panel: &FunctionalPanel) -> Vec<DMatrix<f64>> {
    let n = panel.n();
    let pc = panel.controls.len();
    (0..panel.grid.len())
        .map(|v| {
            DMatrix::from_fn(n, pc + 1, |i, c| {
                if c == 0 {
                    1.0
                } else {
                    panel.controls[c - 1].values[(i, v)]
                }
            })
        })
        .collect()
}

/// Zero-sum constraints on each composition: `L` (`q × p`) and `L ⊗ I_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub l: DMatrix<f64>,
    pub l_tilde: DMatrix<f64>,
    pub block_sizes: Vec<usize>,
    pub k: usize,
}

impl ConstraintSet {
    /// A set with no constraints over `p` curves (plain group Lasso).
    pub fn empty(p: usize, k: usize) -> Self {
        Self {
            l: DMatrix::zeros(0, p),
            l_tilde: DMatrix::zeros(0, p * k),
            block_sizes: Vec::new(),
            k,
        }
    }

    pub fn rows(&self) -> usize {
        self.l_tilde.nrows()
    }

    /// Adds `ρ L̃ᵀ L̃` to `a` in place.
    pub fn add_scaled_gram(&self, a: &mut DMatrix<f64>, rho: f64) {
        let k = self.k;
        let mut start = 0;
        for &size in &self.block_sizes {
            for l in start..start + size {
                for m in start..start + size {
                    for c in 0..k {
                        a[(l * k + c, m * k + c)] += rho;
                    }
                }
            }
            start += size;
        }
    }

    /// `L̃ b`
    pub fn apply(&self, b: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        let mut out = DVector::zeros(self.rows());
        let mut start = 0;
        for (j, &size) in self.block_sizes.iter().enumerate() {
            for l in start..start + size {
                for c in 0..k {
                    out[j * k + c] += b[l * k + c];
                }
            }
            start += size;
        }
        out
    }

    /// `L̃ᵀ u`
    pub fn transpose_apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        let mut out = DVector::zeros(self.l_tilde.ncols());
        let mut start = 0;
        for (j, &size) in self.block_sizes.iter().enumerate() {
            for l in start..start + size {
                for c in 0..k {
                    out[l * k + c] = u[j * k + c];
                }
            }
            start += size;
        }
        out
    }

    /// `(L̃ L̃ᵀ)⁻¹ L̃ x`: per block and basis coordinate, the mean of `x`.
    pub fn block_means(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = self.apply(x);
        for (j, &size) in self.block_sizes.iter().enumerate() {
            out.rows_mut(j * self.k, self.k).unscale_mut(size as f64);
        }
        out
    }

    /// Orthogonal projection onto the null space of `L̃`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.rows() == 0 {
            return x.clone();
        }
        x - self.transpose_apply(&self.block_means(x))
    }

    /// `P A P` with `P` the projection onto the null space of `L̃`.
    pub fn project_gram(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let half = |m: &DMatrix<f64>| {
            let mut out = m.clone();
            for mut col in out.column_iter_mut() {
                let p = self.project(&col.clone_owned());
                col.copy_from(&p);
            }
            out
        };
        let mut pap = half(&half(a).transpose()).transpose();
        for i in 0..pap.nrows() {
            for j in 0..i {
                let v = 0.5 * (pap[(i, j)] + pap[(j, i)]);
                pap[(i, j)] = v;
                pap[(j, i)] = v;
            }
        }
        pap
    }

    /// `‖L̃ b‖∞`
    pub fn residual(&self, b: &[f64]) -> f64 {
        let k = self.k;
        let mut worst: f64 = 0.0;
        let mut start = 0;
        for &size in &self.block_sizes {
            for a in 0..k {
                let s: f64 = (start..start + size).map(|l| b[l * k + a]).sum();
                worst = worst.max(s.abs());
            }
            start += size;
        }
        worst
    }
}

pub fn build_constraints(block_sizes: &[usize], k: usize) -> Result<ConstraintSet> {
    if k == 0 {
        return Err(Error::Config("basis size must be positive".into()));
    }
    if let Some((j, &size)) = block_sizes.iter().enumerate().find(|(_, &s)| s < 2) {
        return Err(Error::DegenerateBlock { block: j, size });
    }
    let q = block_sizes.len();
    let p: usize = block_sizes.iter().sum();
    let mut l = DMatrix::zeros(q, p);
    let mut l_tilde = DMatrix::zeros(q * k, p * k);
    let mut col = 0;
    for (j, &size) in block_sizes.iter().enumerate() {
        for c in col..col + size {
            l[(j, c)] = 1.0;
            for a in 0..k {
                l_tilde[(j * k + a, c * k + a)] = 1.0;
            }
        }
        col += size;
    }
    Ok(ConstraintSet {
        l,
        l_tilde,
        block_sizes: block_sizes.to_vec(),
        k,
    })
}

/// Design arrays of a panel in the form consumed by the Gram builder.
#[derive(Debug, Clone)]
pub struct RegressionData {
    pub grid: Vec<f64>,
    /// `n × p` per grid point.
    pub z: Vec<DMatrix<f64>>,
    /// `n × (p_c + 1)` per grid point.
    pub zc: Vec<DMatrix<f64>>,
    /// `n × V`
    pub y: DMatrix<f64>,
}

impl RegressionData {
    /// Log-contrast design of a panel.
    pub fn from_panel(panel: &FunctionalPanel) -> Result<Self> {
        Ok(Self {
            grid: panel.grid.clone(),
            z: log_transform(panel)?,
            zc: build_controls(panel),
            y: panel.response.clone(),
        })
    }

    /// Reference-dropped (log-ratio) design of a panel.
    pub fn from_panel_alr(panel: &FunctionalPanel, references: &[usize]) -> Result<Self> {
        Ok(Self {
            grid: panel.grid.clone(),
            z: alr_transform(panel, references)?,
            zc: build_controls(panel),
            y: panel.response.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.first().map_or(0, |z| z.ncols())
    }

    pub fn controls(&self) -> usize {
        self.zc.first().map_or(0, |z| z.ncols())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), m.ncols(), |i, c| m[(idx[i], c)]);
        Self {
            grid: self.grid.clone(),
            z: self.z.iter().map(pick).collect(),
            zc: self.zc.iter().map(pick).collect(),
            y: pick(&self.y),
        }
    }
}
