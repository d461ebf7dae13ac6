use serde::{Deserialize, Serialize};

use super::kmeans::{train_kmeans_observed, KmeansAlgorithm, KmeansOptions};
use super::Dataset;
use crate::error::{check_dim, PadError, Result};
use crate::{par, seed};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    /// `ln w_k - 0.5 * sum(ln 2 pi var)` per component.
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
}

impl GmmModel {
    pub fn new(dim: usize, weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if dim == 0 || k == 0 {
            return Err(PadError::InvalidInput("GMM needs a positive dimension and component count".into()));
        }
        check_dim(k * dim, means.len())?;
        check_dim(k * dim, variances.len())?;
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(PadError::Numerical("GMM weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(PadError::Numerical(format!("GMM weights sum to {total}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(PadError::Numerical("GMM means must be finite".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PadError::Numerical("GMM variances must be positive".into()));
        }
        let log_norm = weights
            .iter()
            .zip(variances.chunks_exact(dim))
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
        let inv_var = variances.iter().map(|v| 1.0 / v).collect();
        Ok(Self { dim, weights, means, variances, log_norm, inv_var })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    /// Writes the posteriors of `x` into `out` and returns `ln p(x)`.
    /// The caller guarantees matching lengths.
    pub fn posteriors_into<A: Copy + Into<f64>>(&self, x: &[A], out: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut top = f64::NEG_INFINITY;
        for (k, o) in out.iter_mut().enumerate() {
            let mu = &self.means[k * d..(k + 1) * d];
            let iv = &self.inv_var[k * d..(k + 1) * d];
            *o = self.log_norm[k] - 0.5 * weighted_sq(x, mu, iv);
            top = top.max(*o);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - top).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
        top + total.ln()
    }

    pub fn log_likelihood<A: Copy + Into<f64>>(&self, x: &[A]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let mut buf = vec![0.0; self.k()];
        Ok(self.posteriors_into(x, &mut buf))
    }
}

/// `sum (x - mu)^2 * iv` with four independent accumulators.
#[inline]
fn weighted_sq<A: Copy + Into<f64>>(x: &[A], mu: &[f64], iv: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let body = x.len() / 4 * 4;
    for ((xs, ms), vs) in x[..body].chunks_exact(4).zip(mu.chunks_exact(4)).zip(iv.chunks_exact(4)) {
        for l in 0..4 {
            let z = xs[l].into() - ms[l];
            lanes[l] += z * z * vs[l];
        }
    }
    let mut tail = 0.0;
    for t in body..x.len() {
        let z = x[t].into() - mu[t];
        tail += z * z * iv[t];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Soft assignment of `x` to each component, normalised to sum to one.
pub fn posteriors<A: Copy + Into<f64>>(g: &GmmModel, x: &[A]) -> Result<Vec<f64>> {
    check_dim(g.dim, x.len())?;
    let mut out = vec![0.0; g.k()];
    g.posteriors_into(x, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    /// Lloyd iterations used for the k-means initialisation.
    pub kmeans_iters: usize,
}

impl GmmOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, seed, max_iters: 100, tol: 1e-5, kmeans_iters: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GmmTrace {
    /// Mean per-point log-likelihood before each M-step.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub reseeded: Vec<usize>,
    pub variance_floor: f64,
}

const MIN_POINTS_PER_COMPONENT: usize = 10;
const DEGENERATE_WEIGHT: f64 = 1e-8;
const FLOOR_FACTOR: f64 = 1e-4;

pub fn train_gmm(data: &Dataset, opts: &GmmOptions) -> Result<(GmmModel, GmmTrace)> {
    let (n, dim, k) = (data.len(), data.dim(), opts.k);
    if k == 0 || opts.max_iters == 0 {
        return Err(PadError::InvalidInput("GMM needs at least one component and iteration".into()));
    }
    if n < MIN_POINTS_PER_COMPONENT * k {
        return Err(PadError::InsufficientData(format!(
            "{n} points for {k} components (need {})",
            MIN_POINTS_PER_COMPONENT * k
        )));
    }
    let data_var = data.variances();
    let floor = FLOOR_FACTOR * data_var.iter().sum::<f64>() / dim as f64;
    if !(floor > 0.0) {
        return Err(PadError::InsufficientDistinctPoints { needed: 2, found: 1 });
    }

    let mut km = KmeansOptions::new(k, seed::derive(opts.seed, "gmm-init"));
    km.max_iters = opts.kmeans_iters.max(1);
    km.algorithm = KmeansAlgorithm::Elkan;
    // The last observed assignment is the one the final centroids average,
    // and k-means never hands it over with an empty cluster.
    let mut hard = Vec::new();
    train_kmeans_observed(data, &km, |step| hard = step.assignments.to_vec())?;
    let init = accumulate(data, Resp::Hard(&hard, k));
    let mut model = maximise(&init, dim, floor, n)?;

    let mut trace = GmmTrace { variance_floor: floor, ..GmmTrace::default() };
    let mut reseeded = vec![false; k];
    let mut previous: Option<f64> = None;
    for _ in 0..opts.max_iters {
        let stats = accumulate(data, Resp::Soft(&model));
        let ll = stats.log_likelihood / n as f64;
        if !ll.is_finite() {
            return Err(PadError::Numerical("GMM log-likelihood is not finite".into()));
        }
        trace.log_likelihoods.push(ll);
        if let Some(p) = previous {
            if ll - p < opts.tol * p.abs() {
                trace.converged = true;
                break;
            }
        }
        previous = Some(ll);
        model = match degenerate(&stats, n) {
            None => maximise(&stats, dim, floor, n)?,
            Some(j) => {
                if reseeded[j] {
                    return Err(PadError::Numerical(format!(
                        "GMM component {j} collapsed again after reseeding"
                    )));
                }
                reseeded[j] = true;
                trace.reseeded.push(j);
                // The likelihood is no longer comparable across the reseed.
                previous = None;
                reseed(data, &model, &stats, j, &data_var, floor)?
            }
        };
    }
    Ok((model, trace))
}

/// Sufficient statistics: per component the responsibility mass, the first
/// moment and the second moment, plus the total log-likelihood.
struct Stats {
    k: usize,
    mass: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    log_likelihood: f64,
}

#[derive(Clone, Copy)]
enum Resp<'a> {
    Soft(&'a GmmModel),
    /// One-hot responsibilities from a cluster assignment.
    Hard(&'a [u32], usize),
}

/// Responsibilities below this add less than `n * 1e-14` to any statistic
/// and are skipped.
const NEGLIGIBLE_POSTERIOR: f64 = 1e-14;

fn accumulate(data: &Dataset, resp: Resp<'_>) -> Stats {
    let dim = data.dim();
    let k = match resp {
        Resp::Soft(m) => m.k(),
        Resp::Hard(_, k) => k,
    };
    let width = k * (1 + 2 * dim) + 1;
    let raw = par::chunked_reduce(
        data.len(),
        |r| {
            let mut acc = vec![0.0; width];
            let mut post = vec![0.0; k];
            for i in r {
                let x = data.row(i);
                match resp {
                    Resp::Soft(model) => acc[width - 1] += model.posteriors_into(x, &mut post),
                    Resp::Hard(a, _) => {
                        post.fill(0.0);
                        post[a[i] as usize] = 1.0;
                    }
                }
                let (mass, rest) = acc.split_at_mut(k);
                let (first, second) = rest.split_at_mut(k * dim);
                for (j, &a) in post.iter().enumerate() {
                    if a < NEGLIGIBLE_POSTERIOR {
                        continue;
                    }
                    mass[j] += a;
                    let f = &mut first[j * dim..(j + 1) * dim];
                    let s = &mut second[j * dim..(j + 1) * dim];
                    for ((f, s), &xt) in f.iter_mut().zip(s.iter_mut()).zip(x) {
                        let ax = a * xt;
                        *f += ax;
                        *s += ax * xt;
                    }
                }
            }
            acc
        },
        super::add_into,
    )
    .expect("non-empty data");
    Stats {
        k,
        mass: raw[..k].to_vec(),
        first: raw[k..k + k * dim].to_vec(),
        second: raw[k + k * dim..width - 1].to_vec(),
        log_likelihood: raw[width - 1],
    }
}

fn degenerate(stats: &Stats, n: usize) -> Option<usize> {
    stats.mass.iter().position(|&m| !(m / n as f64 >= DEGENERATE_WEIGHT))
}

fn maximise(stats: &Stats, dim: usize, floor: f64, n: usize) -> Result<GmmModel> {
    let k = stats.k;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k * dim);
    let mut variances = Vec::with_capacity(k * dim);
    for j in 0..k {
        let m = stats.mass[j];
        weights.push(m / n as f64);
        for t in 0..dim {
            let mu = stats.first[j * dim + t] / m;
            let var = stats.second[j * dim + t] / m - mu * mu;
            means.push(mu);
            variances.push(var.max(floor));
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel::new(dim, weights, means, variances)
}

/// Replaces component `j` by a broad Gaussian centred on the point the
/// current model explains worst, keeping the other components' M-step.
fn reseed(
    data: &Dataset,
    model: &GmmModel,
    stats: &Stats,
    j: usize,
    data_var: &[f64],
    floor: f64,
) -> Result<GmmModel> {
    let (n, dim, k) = (data.len(), data.dim(), model.k());
    let worst = par::chunked_reduce(
        n,
        |r| {
            let mut buf = vec![0.0; k];
            let mut best = (usize::MAX, f64::INFINITY);
            for i in r {
                let ll = model.posteriors_into(data.row(i), &mut buf);
                if ll < best.1 {
                    best = (i, ll);
                }
            }
            best
        },
        |a, b| if b.1 < a.1 { b } else { a },
    )
    .expect("non-empty data")
    .0;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k * dim);
    let mut variances = Vec::with_capacity(k * dim);
    for c in 0..k {
        if c == j {
            weights.push(1.0 / k as f64);
            means.extend_from_slice(data.row(worst));
            variances.extend(data_var.iter().map(|v| v.max(floor)));
            continue;
        }
        let m = stats.mass[c];
        weights.push((m / n as f64).max(DEGENERATE_WEIGHT));
        for t in 0..dim {
            let mu = stats.first[c * dim + t] / m;
            means.push(mu);
            variances.push((stats.second[c * dim + t] / m - mu * mu).max(floor));
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel::new(dim, weights, means, variances)
}
