use nalgebra::{DMatrix, SymmetricEigen};

use super::kmeans::Codebook;
use super::{pca, sq_dist, Dataset};

/// Exact nearest-centroid search that prunes candidates cheaply.
///
/// Centroids are rotated onto their own principal axes and stored in `f32`.
/// A query is rotated the same way and partial distances are accumulated
/// along the high-variance axes first, abandoning a centroid as soon as it
/// cannot beat the best one seen. Survivors within a rounding margin of the
/// best are re-ranked with the exact `f64` distance, so the answer is always
/// the one [`Codebook::nearest`] returns.
#[derive(Debug, Clone)]
pub struct NearestCentroidIndex {
    codebook: Codebook,
    mean: Vec<f64>,
    /// Orthonormal rows, highest-variance axis first.
    rotation: Vec<f64>,
    rotated: Vec<f32>,
    max_norm2: f64,
}

const BLOCK: usize = 16;
const MARGIN: f64 = 1e-4;

impl NearestCentroidIndex {
    pub fn new(codebook: Codebook) -> Self {
        let dim = codebook.dim();
        let data = Dataset::new(dim, codebook.centroids().to_vec()).expect("codebook values are finite");
        let (mean, cov) = pca::covariance(&data);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &cov));
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut rotation = Vec::with_capacity(dim * dim);
        for &i in &order {
            rotation.extend(eig.eigenvectors.column(i).iter());
        }
        let mut index = Self { codebook, mean, rotation, rotated: Vec::new(), max_norm2: 0.0 };
        let mut buf = vec![0.0f32; dim];
        for j in 0..index.codebook.k() {
            let norm2 = index.rotate(index.codebook.centroid(j), &mut buf);
            index.max_norm2 = index.max_norm2.max(norm2);
            index.rotated.extend_from_slice(&buf);
        }
        index
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    /// Rotates `x` into `out` and returns its squared norm there.
    fn rotate<A: Copy + Into<f64>>(&self, x: &[A], out: &mut [f32]) -> f64 {
        let dim = self.codebook.dim();
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(&v, m)| v.into() - m).collect();
        let mut norm2 = 0.0;
        for (o, row) in out.iter_mut().zip(self.rotation.chunks_exact(dim)) {
            let v: f64 = row.iter().zip(&centred).map(|(r, c)| r * c).sum();
            norm2 += v * v;
            *o = v as f32;
        }
        norm2
    }

    /// Index of the nearest centroid, lowest index on ties. The caller
    /// guarantees `x.len() == dim`.
    pub fn nearest<A: Copy + Into<f64>>(&self, x: &[A]) -> usize {
        let (dim, k) = (self.codebook.dim(), self.codebook.k());
        if k == 1 {
            return 0;
        }
        let mut q = vec![0.0f32; dim];
        let q_norm2 = self.rotate(x, &mut q);
        let margin = (MARGIN * (1.0 + q_norm2 + self.max_norm2)) as f32;

        // Seed the bound with the centroid closest along the leading axes so
        // that most others are pruned after the first block.
        let head = dim.min(BLOCK);
        let first: Vec<f32> = self
            .rotated
            .chunks_exact(dim)
            .map(|c| partial(&q[..head], &c[..head]))
            .collect();
        let mut starter = 0;
        for (j, &v) in first.iter().enumerate() {
            if v < first[starter] {
                starter = j;
            }
        }
        let start_row = &self.rotated[starter * dim..(starter + 1) * dim];
        let mut best = first[starter] + partial(&q[head..], &start_row[head..]);

        let mut survivors: Vec<(usize, f32)> = Vec::new();
        for (j, c) in self.rotated.chunks_exact(dim).enumerate() {
            let limit = best + margin;
            let mut acc = first[j];
            if acc > limit {
                continue;
            }
            let mut pruned = false;
            for (qb, cb) in q[head..].chunks(BLOCK).zip(c[head..].chunks(BLOCK)) {
                acc += partial(qb, cb);
                if acc > limit {
                    pruned = true;
                    break;
                }
            }
            if !pruned {
                best = best.min(acc);
                survivors.push((j, acc));
            }
        }

        let cutoff = best + margin;
        let mut winner = (usize::MAX, f64::INFINITY);
        for (j, approx) in survivors {
            if approx > cutoff {
                continue;
            }
            let d = sq_dist(x, self.codebook.centroid(j));
            if d < winner.1 {
                winner = (j, d);
            }
        }
        winner.0
    }
}

#[inline]
fn partial(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        acc += t * t;
    }
    acc
}
