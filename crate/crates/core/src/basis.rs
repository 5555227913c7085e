//! Clamped B-spline bases with equispaced interior knots.
//!
//! Every coefficient curve of the model is represented as `Φ(t)ᵀ b` for the
//! same basis. `expand` builds the block-diagonal `I_p ⊗ Φ(t)ᵀ` that maps a
//! stacked coefficient vector (curve-major, `b[j * k + a]`) to the `p` curve
//! values at `t`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A clamped B-spline basis of a given order (polynomial degree `order - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    order: usize,
    count: usize,
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
}

impl BasisSpec {
    /// Builds a clamped basis with `count - order` equispaced interior knots.
    pub fn new(order: usize, count: usize, domain: (f64, f64)) -> Result<Self> {
        let (lo, hi) = domain;
        if order == 0 || count < order {
            return Err(Error::InvalidBasis { order, count });
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDomain(lo, hi));
        }
        let interior = count - order;
        let step = (hi - lo) / (interior + 1) as f64;
        let mut knots = Vec::with_capacity(count + order);
        knots.extend(std::iter::repeat_n(lo, order));
        knots.extend((1..=interior).map(|i| lo + step * i as f64));
        knots.extend(std::iter::repeat_n(hi, order));
        Ok(Self {
            order,
            count,
            lo,
            hi,
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions `k`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.order..self.count]
    }

    fn check(&self, t: f64) -> Result<()> {
        if t.is_nan() || t < self.lo || t > self.hi {
            return Err(Error::OutOfDomain {
                t,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }

    /// Index `s` with `knots[s] <= t < knots[s + 1]`; the last span is closed.
    fn span(&self, t: f64) -> usize {
        let last = self.count - 1;
        if t >= self.knots[self.count] {
            return last;
        }
        // knots[order-1..=count] is strictly increasing.
        let interior = &self.knots[self.order..self.count];
        self.order - 1 + interior.partition_point(|&kn| kn <= t)
    }

    /// The `order` possibly-nonzero basis values at `t` and the index of the
    /// first of them.
    pub fn eval_local(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        self.check(t)?;
        let degree = self.order - 1;
        let s = self.span(t);
        let u = &self.knots;
        let mut values = vec![0.0; self.order];
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        values[0] = 1.0;
        for j in 1..=degree {
            left[j] = t - u[s + 1 - j];
            right[j] = u[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        Ok((s - degree, values))
    }

    /// All `k` basis values `Φ(t)`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (first, local) = self.eval_local(t)?;
        let mut phi = vec![0.0; self.count];
        phi[first..first + self.order].copy_from_slice(&local);
        Ok(phi)
    }

    /// `V × k` matrix whose row `v` is `Φ(grid[v])ᵀ`.
    pub fn eval_grid(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(grid.len(), self.count);
        for (v, &t) in grid.iter().enumerate() {
            let (first, local) = self.eval_local(t)?;
            for (a, val) in local.into_iter().enumerate() {
                out[(v, first + a)] = val;
            }
        }
        Ok(out)
    }

    /// `I_p ⊗ Φ(t)ᵀ`, a `p × pk` matrix.
    pub fn expand(&self, t: f64, p: usize) -> Result<DMatrix<f64>> {
        let phi = self.eval(t)?;
        let k = self.count;
        let mut out = DMatrix::zeros(p, p * k);
        for j in 0..p {
            for (a, &val) in phi.iter().enumerate() {
                out[(j, j * k + a)] = val;
            }
        }
        Ok(out)
    }

    /// Values of the `coefs.len() / k` curves stacked in `coefs`, at `t`.
    pub fn curves_at(&self, coefs: &[f64], t: f64) -> Result<Vec<f64>> {
        let (first, local) = self.eval_local(t)?;
        Ok(coefs
            .chunks_exact(self.count)
            .map(|c| {
                c[first..first + self.order]
                    .iter()
                    .zip(&local)
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect())
    }
}

pub fn make_basis(order: usize, count: usize, domain: (f64, f64)) -> Result<BasisSpec> {
    BasisSpec::new(order, count, domain)
}

pub fn eval_basis(spec: &BasisSpec, t: f64) -> Result<Vec<f64>> {
    spec.eval(t)
}

pub fn expand_basis(spec: &BasisSpec, t: f64, p: usize) -> Result<DMatrix<f64>> {
    spec.expand(t, p)
}
