use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{add_into, sq_dist, Dataset};
use crate::error::{check_dim, PadError, Result};
use crate::{par, seed};

/// `K` centroids of dimension `D`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, centroids: Vec<f64>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(PadError::InvalidInput(format!(
                "{} values do not form a non-empty codebook of dimension {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(PadError::Numerical("codebook has non-finite centroids".into()));
        }
        Ok(Self { dim, centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    #[inline]
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Exhaustive nearest centroid and its squared distance; ties go to the
    /// lowest index. The caller guarantees `x.len() == dim`.
    #[inline]
    pub fn nearest<A: Copy + Into<f64>>(&self, x: &[A]) -> (usize, f64) {
        nearest_in(&self.centroids, self.dim, x)
    }
}

#[inline]
fn nearest_in<A: Copy + Into<f64>>(centroids: &[f64], dim: usize, x: &[A]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Index of the closest centroid (lowest index on ties).
pub fn assign<A: Copy + Into<f64>>(cb: &Codebook, x: &[A]) -> Result<usize> {
    check_dim(cb.dim, x.len())?;
    Ok(cb.nearest(x).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmeansAlgorithm {
    /// Triangle-inequality accelerated Lloyd iterations.
    Elkan,
    /// Plain Lloyd iterations.
    Lloyd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansOptions {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub algorithm: KmeansAlgorithm,
}

impl KmeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, max_iters: 100, seed, algorithm: KmeansAlgorithm::Elkan }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansTrace {
    /// Within-cluster sum of squared distances after each centroid update.
    pub distortions: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub algorithm: KmeansAlgorithm,
}

/// State after an assignment step, handed to the observer of
/// [`train_kmeans_observed`] before centroids are recomputed.
pub struct KmeansStep<'a> {
    pub iteration: usize,
    pub assignments: &'a [u32],
    pub centroids: &'a [f64],
}

pub fn train_kmeans(data: &Dataset, opts: &KmeansOptions) -> Result<(Codebook, KmeansTrace)> {
    train_kmeans_observed(data, opts, |_| {})
}

/// Above this many point-centroid bounds Elkan's lower-bound matrix is
/// considered too large and plain Lloyd iterations are used instead.
const ELKAN_MAX_BOUNDS: usize = 1 << 27;

pub fn train_kmeans_observed(
    data: &Dataset,
    opts: &KmeansOptions,
    mut observe: impl FnMut(&KmeansStep<'_>),
) -> Result<(Codebook, KmeansTrace)> {
    let (n, dim, k) = (data.len(), data.dim(), opts.k);
    if k == 0 {
        return Err(PadError::InvalidInput("k-means needs at least one cluster".into()));
    }
    if n < k {
        return Err(PadError::InsufficientData(format!("{n} points for {k} clusters")));
    }
    if opts.max_iters == 0 {
        return Err(PadError::InvalidInput("k-means needs at least one iteration".into()));
    }
    let mut algorithm = opts.algorithm;
    if algorithm == KmeansAlgorithm::Elkan && n.saturating_mul(k) > ELKAN_MAX_BOUNDS {
        log::warn!("k-means: {n} x {k} bounds exceed the Elkan budget, using Lloyd iterations");
        algorithm = KmeansAlgorithm::Lloyd;
    }

    let mut centroids = kmeans_plus_plus(data, k, opts.seed)?;
    let mut elkan = None;
    let mut assignments = match algorithm {
        KmeansAlgorithm::Lloyd => lloyd_assign(data, &centroids),
        KmeansAlgorithm::Elkan => {
            let (state, a) = ElkanState::init(data, &centroids, k);
            elkan = Some(state);
            a
        }
    };

    let mut trace = KmeansTrace { distortions: Vec::new(), iterations: 0, converged: false, algorithm };
    let mut previous: Option<Vec<u32>> = None;
    for iteration in 0.. {
        let moved = reseed_empty(data, &mut centroids, &mut assignments, k);
        if let Some(state) = elkan.as_mut() {
            state.mark_reseeded(&moved);
        }
        observe(&KmeansStep { iteration, assignments: &assignments, centroids: &centroids });

        let unchanged = previous.as_ref().is_some_and(|p| p == &assignments);
        if unchanged && moved.is_empty() {
            trace.converged = true;
            break;
        }
        centroids = cluster_means(data, &assignments, &centroids, k);
        trace.distortions.push(distortion(data, &assignments, &centroids));
        trace.iterations = iteration + 1;
        if iteration + 1 == opts.max_iters {
            break;
        }
        previous = Some(assignments.clone());
        match elkan.as_mut() {
            Some(state) => state.step(data, &centroids, &mut assignments, k),
            None => assignments = lloyd_assign(data, &centroids),
        }
    }
    Ok((Codebook::new(dim, centroids)?, trace))
}

fn kmeans_plus_plus(data: &Dataset, k: usize, seed_value: u64) -> Result<Vec<f64>> {
    let (n, dim) = (data.len(), data.dim());
    let mut rng = seed::rng(seed_value);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(data.row(first));
    let mut d2 = vec![0.0f64; n];
    par::for_each_chunk_mut(&mut d2, 1, |start, chunk| {
        for (o, v) in chunk.iter_mut().enumerate() {
            *v = sq_dist(data.row(start + o), &centroids[..dim]);
        }
    });
    for found in 1..k {
        let total = par::chunked_reduce(n, |r| d2[r].iter().sum::<f64>(), |a, b| a + b).unwrap_or(0.0);
        if total <= 0.0 {
            return Err(PadError::InsufficientDistinctPoints { needed: k, found });
        }
        let target = rng.gen::<f64>() * total;
        let mut cum = 0.0;
        let mut pick = None;
        for (i, &v) in d2.iter().enumerate() {
            if v > 0.0 {
                pick = Some(i);
                cum += v;
                if cum > target {
                    break;
                }
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        let start = centroids.len();
        centroids.extend_from_slice(data.row(pick));
        let c = &centroids[start..];
        par::for_each_chunk_mut(&mut d2, 1, |s, chunk| {
            for (o, v) in chunk.iter_mut().enumerate() {
                *v = v.min(sq_dist(data.row(s + o), c));
            }
        });
    }
    Ok(centroids)
}

fn lloyd_assign(data: &Dataset, centroids: &[f64]) -> Vec<u32> {
    let mut out = vec![0u32; data.len()];
    par::for_each_chunk_mut(&mut out, 1, |start, chunk| {
        for (o, a) in chunk.iter_mut().enumerate() {
            *a = nearest_in(centroids, data.dim(), data.row(start + o)).0 as u32;
        }
    });
    out
}

/// Moves the point farthest from its centroid into each empty cluster, in
/// cluster order. Returns the moved points.
fn reseed_empty(data: &Dataset, centroids: &mut [f64], assignments: &mut [u32], k: usize) -> Vec<usize> {
    let dim = data.dim();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a as usize] += 1;
    }
    if counts.iter().all(|&c| c > 0) {
        return Vec::new();
    }
    let mut far: Vec<f64> = par::map_range(data.len(), |i| {
        let a = assignments[i] as usize;
        sq_dist(data.row(i), &centroids[a * dim..(a + 1) * dim])
    });
    let mut moved = Vec::new();
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for (i, &d) in far.iter().enumerate() {
            if counts[assignments[i] as usize] > 1 && best.map_or(true, |b| d > far[b]) {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        counts[assignments[i] as usize] -= 1;
        counts[j] = 1;
        assignments[i] = j as u32;
        centroids[j * dim..(j + 1) * dim].copy_from_slice(data.row(i));
        far[i] = 0.0;
        moved.push(i);
    }
    moved
}

fn cluster_means(data: &Dataset, assignments: &[u32], previous: &[f64], k: usize) -> Vec<f64> {
    let dim = data.dim();
    let sums = par::chunked_reduce(
        data.len(),
        |r| {
            let mut s = vec![0.0; k * (dim + 1)];
            for i in r {
                let a = assignments[i] as usize;
                s[k * dim + a] += 1.0;
                let acc = &mut s[a * dim..(a + 1) * dim];
                acc.iter_mut().zip(data.row(i)).for_each(|(x, v)| *x += v);
            }
            s
        },
        add_into,
    )
    .expect("non-empty data");
    let mut out = previous.to_vec();
    for j in 0..k {
        let count = sums[k * dim + j];
        if count > 0.0 {
            for t in 0..dim {
                out[j * dim + t] = sums[j * dim + t] / count;
            }
        }
    }
    out
}

fn distortion(data: &Dataset, assignments: &[u32], centroids: &[f64]) -> f64 {
    let dim = data.dim();
    par::chunked_reduce(
        data.len(),
        |r| {
            r.map(|i| {
                let a = assignments[i] as usize;
                sq_dist(data.row(i), &centroids[a * dim..(a + 1) * dim])
            })
            .sum::<f64>()
        },
        |a, b| a + b,
    )
    .unwrap_or(0.0)
}

/// Relative slack on every pruning test so that floating-point error in the
/// bounds never prunes a centroid Lloyd's exhaustive scan would choose.
const PRUNE_REL: f64 = 1e-9;
const PRUNE_ABS: f64 = 1e-12;

#[inline]
fn beyond(bound: f64, upper: f64) -> bool {
    bound > upper * (1.0 + PRUNE_REL) + PRUNE_ABS
}

/// Rounds toward negative infinity so a stored lower bound stays valid.
#[inline]
fn down(x: f64) -> f32 {
    let f = x as f32;
    if f64::from(f) > x {
        f.next_down()
    } else {
        f
    }
}

#[derive(Clone, Copy)]
struct PointBound {
    upper: f64,
    assigned: u32,
}

struct ElkanState {
    /// Centroids the bounds currently refer to.
    reference: Vec<f64>,
    lower: Vec<f32>,
    points: Vec<PointBound>,
}

impl ElkanState {
    fn init(data: &Dataset, centroids: &[f64], k: usize) -> (Self, Vec<u32>) {
        let (n, dim) = (data.len(), data.dim());
        let mut lower = vec![0.0f32; n * k];
        let mut points = vec![PointBound { upper: 0.0, assigned: 0 }; n];
        par::for_each_chunk_pair_mut(&mut lower, k, &mut points, 1, |start, lo, pts| {
            for (o, pb) in pts.iter_mut().enumerate() {
                let x = data.row(start + o);
                let mut best = (0usize, f64::INFINITY);
                for j in 0..k {
                    let sq = sq_dist(x, &centroids[j * dim..(j + 1) * dim]);
                    lo[o * k + j] = down(sq.sqrt());
                    if sq < best.1 {
                        best = (j, sq);
                    }
                }
                *pb = PointBound { upper: best.1.sqrt(), assigned: best.0 as u32 };
            }
        });
        let assignments = points.iter().map(|p| p.assigned).collect();
        (Self { reference: centroids.to_vec(), lower, points }, assignments)
    }

    fn mark_reseeded(&mut self, moved: &[usize]) {
        let k = self.lower.len() / self.points.len().max(1);
        for &i in moved {
            // The point now coincides with its centroid.
            self.points[i].upper = 0.0;
            self.lower[i * k..(i + 1) * k].fill(0.0);
        }
    }

    fn step(&mut self, data: &Dataset, centroids: &[f64], assignments: &mut [u32], k: usize) {
        let dim = data.dim();
        let shift: Vec<f64> = (0..k)
            .map(|j| {
                let r = &self.reference[j * dim..(j + 1) * dim];
                sq_dist(r, &centroids[j * dim..(j + 1) * dim]).sqrt()
            })
            .collect();
        // Half distances between centroids and, per centroid, the nearest one.
        let half: Vec<f64> = par::map_range(k * k, |idx| {
            let (a, b) = (idx / k, idx % k);
            if a == b {
                0.0
            } else {
                0.5 * sq_dist(&centroids[a * dim..(a + 1) * dim], &centroids[b * dim..(b + 1) * dim]).sqrt()
            }
        });
        let separation: Vec<f64> = (0..k)
            .map(|a| {
                (0..k)
                    .filter(|&b| b != a)
                    .map(|b| half[a * k + b])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();

        for (pb, &a) in self.points.iter_mut().zip(assignments.iter()) {
            pb.assigned = a;
        }
        par::for_each_chunk_pair_mut(&mut self.lower, k, &mut self.points, 1, |start, lo, pts| {
            for (o, pb) in pts.iter_mut().enumerate() {
                let x = data.row(start + o);
                let lo = &mut lo[o * k..(o + 1) * k];
                for (l, s) in lo.iter_mut().zip(&shift) {
                    *l = down((f64::from(*l) - s).max(0.0));
                }
                let mut a = pb.assigned as usize;
                let mut upper = pb.upper + shift[a];
                // The shifted upper bound is loose until recomputed.
                let mut stale = true;
                let mut sq_a = f64::NAN;
                if !beyond(separation[a], upper) {
                    for j in 0..k {
                        if j == a
                            || beyond(f64::from(lo[j]), upper)
                            || beyond(half[a * k + j], upper)
                        {
                            continue;
                        }
                        if stale {
                            sq_a = sq_dist(x, &centroids[a * dim..(a + 1) * dim]);
                            upper = sq_a.sqrt();
                            lo[a] = down(upper);
                            stale = false;
                            if beyond(f64::from(lo[j]), upper) || beyond(half[a * k + j], upper) {
                                continue;
                            }
                        }
                        let sq_j = sq_dist(x, &centroids[j * dim..(j + 1) * dim]);
                        let d_j = sq_j.sqrt();
                        lo[j] = down(d_j);
                        if sq_j < sq_a || (sq_j == sq_a && j < a) {
                            a = j;
                            sq_a = sq_j;
                            upper = d_j;
                        }
                    }
                }
                *pb = PointBound { upper, assigned: a as u32 };
            }
        });
        for (dst, pb) in assignments.iter_mut().zip(&self.points) {
            *dst = pb.assigned;
        }
        self.reference = centroids.to_vec();
    }
}
