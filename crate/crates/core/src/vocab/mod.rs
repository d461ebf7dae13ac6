//! Vocabulary learning: k-means codebooks, PCA projections and
//! diagonal-covariance Gaussian mixtures.

mod gmm;
mod index;
mod kmeans;
mod pca;

pub use gmm::{posteriors, train_gmm, GmmModel, GmmOptions, GmmTrace};
pub use index::NearestCentroidIndex;
pub use kmeans::{
    assign, train_kmeans, train_kmeans_observed, Codebook, KmeansAlgorithm, KmeansOptions,
    KmeansStep, KmeansTrace,
};
pub use pca::{project, train_pca, PcaProjection};

use crate::error::{PadError, Result};

/// Dense row-major collection of equal-length training vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(PadError::InvalidInput("dataset dimension must be positive".into()));
        }
        if values.len() % dim != 0 {
            return Err(PadError::InvalidInput(format!(
                "{} values do not form rows of length {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PadError::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows<'a, T, I>(dim: usize, rows: I) -> Result<Self>
    where
        T: Copy + Into<f64> + 'a,
        I: IntoIterator<Item = &'a [T]>,
    {
        let mut values = Vec::new();
        for row in rows {
            if row.len() != dim {
                return Err(PadError::DimensionMismatch { expected: dim, got: row.len() });
            }
            values.extend(row.iter().map(|&v| v.into()));
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-dimension population variance.
    pub fn variances(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let d = self.dim;
        let sums = crate::par::chunked_reduce(
            self.len(),
            |r| {
                let mut s = vec![0.0; 2 * d];
                for i in r {
                    for (j, &v) in self.row(i).iter().enumerate() {
                        s[j] += v;
                        s[d + j] += v * v;
                    }
                }
                s
            },
            add_into,
        )
        .unwrap_or_else(|| vec![0.0; 2 * d]);
        (0..d)
            .map(|j| {
                let m = sums[j] / n;
                (sums[d + j] / n - m * m).max(0.0)
            })
            .collect()
    }
}

pub(crate) fn add_into(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
    a
}

/// Squared Euclidean distance with a fixed four-lane summation order.
#[inline]
pub fn sq_dist<A: Copy + Into<f64>>(a: &[A], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for lane in 0..4 {
            let i = c * 4 + lane;
            let t = a[i].into() - b[i];
            acc[lane] += t * t;
        }
    }
    for i in chunks * 4..a.len() {
        let t = a[i].into() - b[i];
        acc[0] += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}
