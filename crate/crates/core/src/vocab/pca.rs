use nalgebra::{DMatrix, SymmetricEigen};

use super::{add_into, Dataset};
use crate::error::{check_dim, PadError, Result};
use crate::par;

/// Projection onto the leading principal directions of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    input_dim: usize,
    mean: Vec<f64>,
    /// `output_dim x input_dim`, orthonormal rows.
    basis: Vec<f64>,
    /// Variance along each basis row, descending.
    eigenvalues: Vec<f64>,
    whiten: bool,
}

impl PcaProjection {
    pub fn new(
        input_dim: usize,
        mean: Vec<f64>,
        basis: Vec<f64>,
        eigenvalues: Vec<f64>,
        whiten: bool,
    ) -> Result<Self> {
        let d = eigenvalues.len();
        if input_dim == 0 || d == 0 || d > input_dim {
            return Err(PadError::InvalidInput(format!(
                "PCA output dimension {d} must lie in 1..={input_dim}"
            )));
        }
        check_dim(input_dim, mean.len())?;
        check_dim(d * input_dim, basis.len())?;
        if whiten && eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(PadError::Numerical("whitening needs positive eigenvalues".into()));
        }
        Ok(Self { input_dim, mean, basis, eigenvalues, whiten })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        &self.basis[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn whiten(&self) -> bool {
        self.whiten
    }

    /// `basis * (x - mean)`, divided by the per-axis standard deviation when
    /// whitening. The caller guarantees `x.len() == input_dim`.
    pub fn project_into<A: Copy + Into<f64>>(&self, x: &[A], out: &mut [f64]) {
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(&v, m)| v.into() - m).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.basis_row(i);
            let mut acc = 0.0;
            for (b, c) in row.iter().zip(&centred) {
                acc += b * c;
            }
            *o = if self.whiten { acc / self.eigenvalues[i].sqrt() } else { acc };
        }
    }

    pub fn project<A: Copy + Into<f64>>(&self, x: &[A]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let mut out = vec![0.0; self.output_dim()];
        self.project_into(x, &mut out);
        Ok(out)
    }

    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.output_dim(), y.len())?;
        let mut out = self.mean.clone();
        for (i, &c) in y.iter().enumerate() {
            let c = if self.whiten { c * self.eigenvalues[i].sqrt() } else { c };
            for (o, b) in out.iter_mut().zip(self.basis_row(i)) {
                *o += c * b;
            }
        }
        Ok(out)
    }
}

pub fn project<A: Copy + Into<f64>>(p: &PcaProjection, x: &[A]) -> Result<Vec<f64>> {
    p.project(x)
}

/// Relative eigenvalue cut-off below which a direction counts as rank
/// deficient.
const RANK_TOL: f64 = 1e-10;

/// Fits the top-`d` principal directions of `data` by eigendecomposition of
/// its covariance matrix.
pub fn train_pca(data: &Dataset, d: usize, whiten: bool) -> Result<PcaProjection> {
    let (n, dim) = (data.len(), data.dim());
    if d == 0 || d > dim {
        return Err(PadError::InvalidInput(format!("PCA output dimension {d} must lie in 1..={dim}")));
    }
    if n < d {
        return Err(PadError::InsufficientData(format!("{n} samples for {d} components")));
    }
    let (mean, cov) = covariance(data);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &cov));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top && eig.eigenvalues[i] > 0.0)
        .count();
    if rank < d {
        return Err(PadError::RankDeficient { requested: d, rank });
    }

    let mut basis = Vec::with_capacity(d * dim);
    let mut eigenvalues = Vec::with_capacity(d);
    for &i in &order[..d] {
        let col = eig.eigenvectors.column(i);
        // Sign convention: the largest-magnitude component is positive.
        let mut pivot = 0;
        for t in 1..dim {
            if col[t].abs() > col[pivot].abs() {
                pivot = t;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        basis.extend(col.iter().map(|v| sign * v));
        eigenvalues.push(eig.eigenvalues[i]);
    }
    PcaProjection::new(dim, mean, basis, eigenvalues, whiten)
}

/// Mean and population covariance (row-major `dim x dim`).
pub(crate) fn covariance(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let (n, dim) = (data.len(), data.dim());
    let sums = par::chunked_reduce(
        n,
        |r| {
            let mut s = vec![0.0; dim];
            for i in r {
                s.iter_mut().zip(data.row(i)).for_each(|(a, v)| *a += v);
            }
            s
        },
        add_into,
    )
    .unwrap_or_else(|| vec![0.0; dim]);
    let mean: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let upper = par::chunked_reduce(
        n,
        |r| {
            let mut s = vec![0.0; dim * dim];
            let mut c = vec![0.0; dim];
            for i in r {
                c.iter_mut()
                    .zip(data.row(i))
                    .zip(&mean)
                    .for_each(|((o, v), m)| *o = v - m);
                for a in 0..dim {
                    let ca = c[a];
                    let row = &mut s[a * dim..(a + 1) * dim];
                    for b in a..dim {
                        row[b] += ca * c[b];
                    }
                }
            }
            s
        },
        add_into,
    )
    .unwrap_or_else(|| vec![0.0; dim * dim]);
    let mut cov = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in a..dim {
            let v = upper[a * dim + b] / n as f64;
            cov[a * dim + b] = v;
            cov[b * dim + a] = v;
        }
    }
    (mean, cov)
}
