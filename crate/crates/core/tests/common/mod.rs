//! Brute-force reference implementations used as test oracles. Each one is
//! written from the definitions with plain loops and shares no code with the
//! library beyond its data types.
#![allow(dead_code)]

use fpad::densesift::{Descriptor, DescriptorSet, DESCRIPTOR_LEN};
use fpad::ingest::{GrayImage, Label};
use fpad::vocab::{GmmModel, PcaProjection};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// Relative closeness of two vectors, measured against the larger infinity
/// norm.
pub fn vec_close(a: &[f64], b: &[f64], rel: f64) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Index of the closest centroid, lowest index on ties.
pub fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for j in 0..centroids.len() / dim {
        let d = sq_dist(x, &centroids[j * dim..(j + 1) * dim]);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.gen::<f32>()).unwrap()
}

/// Random descriptors with components in [0, 1). Positions are multiples of
/// 0.5 inside the image, so some land exactly on pyramid cell boundaries.
pub fn random_descriptors(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> DescriptorSet {
    let descriptors = (0..n)
        .map(|_| {
            let mut values = [0.0f32; DESCRIPTOR_LEN];
            values.iter_mut().for_each(|v| *v = rng.gen());
            Descriptor {
                x: rng.gen_range(0..=2 * w) as f32 * 0.5,
                y: rng.gen_range(0..=2 * h) as f32 * 0.5,
                scale: 5.0,
                values,
            }
        })
        .collect();
    DescriptorSet { width: w, height: h, descriptors }
}

pub fn as_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Random projection onto `d` distinct coordinate axes with a random mean.
pub fn axis_pca(rng: &mut ChaCha8Rng, d: usize, whiten: bool) -> PcaProjection {
    let input = DESCRIPTOR_LEN;
    let mut axes: Vec<usize> = (0..input).collect();
    for i in 0..d {
        let j = rng.gen_range(i..input);
        axes.swap(i, j);
    }
    let mut basis = vec![0.0; d * input];
    for (r, &a) in axes[..d].iter().enumerate() {
        basis[r * input + a] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    }
    let mean = (0..input).map(|_| rng.gen_range(0.3..0.7)).collect();
    let eig = (0..d).map(|_| rng.gen_range(0.05..0.2)).collect();
    PcaProjection::new(input, mean, basis, eig, whiten).unwrap()
}

pub fn pca_project(p: &PcaProjection, x: &[f64]) -> Vec<f64> {
    let (din, d) = (p.input_dim(), p.output_dim());
    let mut out = vec![0.0; d];
    for r in 0..d {
        let mut s = 0.0;
        for c in 0..din {
            s += p.basis()[r * din + c] * (x[c] - p.mean()[c]);
        }
        out[r] = if p.whiten() { s / p.eigenvalues()[r].sqrt() } else { s };
    }
    out
}

pub fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize, spread: f64) -> GmmModel {
    let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let means = (0..k * d).map(|_| rng.gen_range(-spread..spread)).collect();
    let vars = (0..k * d).map(|_| rng.gen_range(0.02..0.3)).collect();
    GmmModel::new(d, weights, means, vars).unwrap()
}

/// Posteriors from the plain density product, without log space.
pub fn posteriors_direct(g: &GmmModel, x: &[f64]) -> Vec<f64> {
    let d = g.dim();
    let mut dens = vec![0.0; g.k()];
    for k in 0..g.k() {
        let mut p = g.weights()[k];
        for t in 0..d {
            let v = g.variances()[k * d + t];
            let z = x[t] - g.means()[k * d + t];
            p *= (-z * z / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        dens[k] = p;
    }
    let total: f64 = dens.iter().sum();
    dens.iter().map(|p| p / total).collect()
}

/// Cell index along one axis: cells are `[c w/n, (c+1) w/n)`, the last one
/// closed on the far edge.
pub fn cell(pos: f64, side: usize, n: usize) -> usize {
    for c in 0..n {
        let lo = (c * side) as f64 / n as f64;
        let hi = ((c + 1) * side) as f64 / n as f64;
        if pos >= lo && (pos < hi || (c == n - 1 && pos <= hi)) {
            return c;
        }
    }
    panic!("position {pos} outside 0..={side}");
}

pub fn bow_counts(ds: &DescriptorSet, centroids: &[f64], levels: &[usize]) -> Vec<u32> {
    let k = centroids.len() / DESCRIPTOR_LEN;
    let cells: usize = levels.iter().map(|n| n * n).sum();
    let mut out = vec![0u32; k * cells];
    for desc in &ds.descriptors {
        let w = nearest(centroids, DESCRIPTOR_LEN, &as_f64(&desc.values));
        let mut base = 0;
        for &n in levels {
            let cx = cell(f64::from(desc.x), ds.width, n);
            let cy = cell(f64::from(desc.y), ds.height, n);
            out[(base + cy * n + cx) * k + w] += 1;
            base += n * n;
        }
    }
    out
}

pub fn vlad_raw(ds: &DescriptorSet, pca: &PcaProjection, centroids: &[f64]) -> Vec<f64> {
    let d = pca.output_dim();
    let mut out = vec![0.0; centroids.len()];
    for desc in &ds.descriptors {
        let y = pca_project(pca, &as_f64(&desc.values));
        let j = nearest(centroids, d, &y);
        for t in 0..d {
            out[j * d + t] += y[t] - centroids[j * d + t];
        }
    }
    out
}

/// Stacked `[phi1_k, phi2_k]` per component before any normalisation.
pub fn fv_raw(ds: &DescriptorSet, pca: &PcaProjection, g: &GmmModel) -> Vec<f64> {
    let (k, d) = (g.k(), g.dim());
    let n = ds.len() as f64;
    let mut out = vec![0.0; 2 * k * d];
    if ds.is_empty() {
        return out;
    }
    let ys: Vec<Vec<f64>> = ds.descriptors.iter().map(|x| pca_project(pca, &as_f64(&x.values))).collect();
    let alphas: Vec<Vec<f64>> = ys.iter().map(|y| posteriors_direct(g, y)).collect();
    for j in 0..k {
        let w = g.weights()[j];
        for t in 0..d {
            let mu = g.means()[j * d + t];
            let sd = g.variances()[j * d + t].sqrt();
            let (mut s1, mut s2) = (0.0, 0.0);
            for (y, a) in ys.iter().zip(&alphas) {
                let z = (y[t] - mu) / sd;
                s1 += a[j] * z;
                s2 += a[j] * (z * z - 1.0);
            }
            out[2 * j * d + t] = s1 / (n * w.sqrt());
            out[2 * j * d + d + t] = s2 / (n * (2.0 * w).sqrt());
        }
    }
    out
}

/// Plain Lloyd iterations from given centroids, mirroring the trainer's
/// schedule: assign, fill empty clusters with the farthest points, record
/// the assignment, stop when it repeats, otherwise move centroids to means.
pub struct LloydRun {
    pub assignments: Vec<Vec<u32>>,
    pub centroids: Vec<f64>,
    pub distortions: Vec<f64>,
}

pub fn lloyd(data: &[f64], dim: usize, init: &[f64], max_iters: usize) -> LloydRun {
    let n = data.len() / dim;
    let k = init.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = init.to_vec();
    let mut run = LloydRun { assignments: Vec::new(), centroids: Vec::new(), distortions: Vec::new() };
    let mut assign: Vec<u32> = (0..n).map(|i| nearest(&centroids, dim, row(i)) as u32).collect();
    for iteration in 0.. {
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a as usize] += 1;
        }
        let mut far: Vec<f64> =
            (0..n).map(|i| sq_dist(row(i), &centroids[assign[i] as usize * dim..][..dim])).collect();
        let mut moved = false;
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let mut best: Option<usize> = None;
            for i in 0..n {
                if counts[assign[i] as usize] > 1 && best.map_or(true, |b| far[i] > far[b]) {
                    best = Some(i);
                }
            }
            let Some(i) = best else { break };
            counts[assign[i] as usize] -= 1;
            counts[j] = 1;
            assign[i] = j as u32;
            centroids[j * dim..(j + 1) * dim].copy_from_slice(row(i));
            far[i] = 0.0;
            moved = true;
        }
        if !moved && run.assignments.last() == Some(&assign) {
            run.assignments.push(assign.clone());
            break;
        }
        run.assignments.push(assign.clone());
        for j in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] as usize == j).collect();
            if members.is_empty() {
                continue;
            }
            for t in 0..dim {
                centroids[j * dim + t] = members.iter().map(|&i| row(i)[t]).sum::<f64>() / members.len() as f64;
            }
        }
        run.distortions
            .push((0..n).map(|i| sq_dist(row(i), &centroids[assign[i] as usize * dim..][..dim])).sum());
        if iteration + 1 == max_iters {
            break;
        }
        assign = (0..n).map(|i| nearest(&centroids, dim, row(i)) as u32).collect();
    }
    run.centroids = centroids;
    run
}

/// Attacks with score at or above `t`, over all attacks.
pub fn apcer(scores: &[(f64, Label)], t: f64) -> f64 {
    let attacks: Vec<f64> = scores.iter().filter(|s| s.1 == Label::Attack).map(|s| s.0).collect();
    attacks.iter().filter(|&&s| s >= t).count() as f64 / attacks.len() as f64
}

/// Bona fide samples scoring below `t`, over all bona fide samples.
pub fn bpcer(scores: &[(f64, Label)], t: f64) -> f64 {
    let bf: Vec<f64> = scores.iter().filter(|s| s.1 == Label::BonaFide).map(|s| s.0).collect();
    bf.iter().filter(|&&s| s < t).count() as f64 / bf.len() as f64
}

/// Operating points at every distinct score plus one threshold above all.
pub fn operating_points(scores: &[(f64, Label)]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = scores.iter().map(|s| s.0).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    ts.push(f64::INFINITY);
    ts.iter().map(|&t| (t, apcer(scores, t), bpcer(scores, t))).collect()
}

/// Equal error rate: the apcer = bpcer crossing of the piecewise linear
/// curve through consecutive operating points.
pub fn d_eer(scores: &[(f64, Label)]) -> f64 {
    let pts = operating_points(scores);
    for i in 0..pts.len() {
        let (_, a, b) = pts[i];
        if a == b {
            return a;
        }
        if a < b {
            let (_, a0, b0) = pts[i - 1];
            let f = (a0 - b0) / ((a0 - b0) - (a - b));
            return a0 + f * (a - a0);
        }
    }
    unreachable!("the last operating point has apcer 0")
}

/// BPCER at the lowest operating threshold with APCER at most `target`.
pub fn bpcer_at(scores: &[(f64, Label)], target: f64) -> f64 {
    operating_points(scores)
        .into_iter()
        .find(|&(_, a, _)| a <= target + 1e-12)
        .map(|p| p.2)
        .unwrap()
}

pub fn random_scores(rng: &mut ChaCha8Rng, bf: usize, pa: usize, distinct: bool) -> Vec<(f64, Label)> {
    let draw = |rng: &mut ChaCha8Rng| {
        if distinct {
            rng.gen::<f64>()
        } else {
            f64::from(rng.gen_range(0..20u8)) / 20.0
        }
    };
    let mut out: Vec<(f64, Label)> = (0..bf).map(|_| (draw(rng), Label::BonaFide)).collect();
    out.extend((0..pa).map(|_| (draw(rng), Label::Attack)));
    out
}

/// Naive dense-SIFT descriptor at grid origin `(x0, y0)`: 2-D Gaussian
/// smoothing with sigma `scale / 3`, central differences, linear orientation
/// and bilinear spatial voting, then clip-renormalise repeated to a fixed
/// point. Returns the values and the mean gradient magnitude.
pub fn naive_descriptor(img: &GrayImage, x0: usize, y0: usize, scale: usize, clip: f64) -> (Vec<f64>, f64) {
    let (w, h) = (img.width(), img.height());
    let sigma = scale as f64 / 3.0;
    let r = (3.0 * sigma as f32).ceil() as isize;
    let g: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let gsum: f64 = g.iter().sum();
    let px = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        f64::from(img.get(x, y))
    };
    let smooth = |x: isize, y: isize| {
        let mut s = 0.0;
        for (a, ga) in (-r..=r).zip(&g) {
            for (b, gb) in (-r..=r).zip(&g) {
                s += ga * gb * px(x + b, y + a);
            }
        }
        s / (gsum * gsum)
    };
    let side = 4 * scale;
    // Smoothed values on the support plus a one-pixel ring for differences.
    let sm: Vec<Vec<f64>> = (0..side + 2)
        .map(|j| (0..side + 2).map(|i| smooth(x0 as isize + i as isize - 1, y0 as isize + j as isize - 1)).collect())
        .collect();
    let mut hist = vec![0.0; DESCRIPTOR_LEN];
    let mut grad_sum = 0.0;
    for ty in 0..side {
        for tx in 0..side {
            let (x, y) = (x0 + tx, y0 + ty);
            let at = |dx: isize, dy: isize| sm[(ty as isize + 1 + dy) as usize][(tx as isize + 1 + dx) as usize];
            let gx = if x == 0 { at(1, 0) - at(0, 0) } else if x == w - 1 { at(0, 0) - at(-1, 0) } else { 0.5 * (at(1, 0) - at(-1, 0)) };
            let gy = if y == 0 { at(0, 1) - at(0, 0) } else if y == h - 1 { at(0, 0) - at(0, -1) } else { 0.5 * (at(0, 1) - at(0, -1)) };
            let m = (gx * gx + gy * gy).sqrt();
            grad_sum += m;
            if m == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += 2.0 * std::f64::consts::PI;
            }
            let o = theta * 8.0 / (2.0 * std::f64::consts::PI);
            let o0 = o.floor();
            let fo = o - o0;
            let o0 = o0 as usize % 8;
            let spatial = |t: usize| {
                let u = (t as f64 + 0.5) / scale as f64 - 0.5;
                let b = u.floor();
                let f = u - b;
                let mut v = Vec::new();
                if b >= 0.0 && b < 4.0 {
                    v.push((b as usize, 1.0 - f));
                }
                if b + 1.0 >= 0.0 && b + 1.0 < 4.0 {
                    v.push(((b + 1.0) as usize, f));
                }
                v
            };
            for (by, wy) in spatial(ty) {
                for (bx, wx) in spatial(tx) {
                    let base = (by * 4 + bx) * 8;
                    hist[base + o0] += wy * wx * m * (1.0 - fo);
                    hist[base + (o0 + 1) % 8] += wy * wx * m * fo;
                }
            }
        }
    }
    clip_fixed_point(&mut hist, clip);
    (hist, grad_sum / (side * side) as f64)
}

/// Repeats L2 normalisation and clipping until nothing changes.
pub fn clip_fixed_point(v: &mut [f64], clip: f64) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(v) == 0.0 {
        return;
    }
    for _ in 0..100_000 {
        let n = norm(v);
        v.iter_mut().for_each(|x| *x /= n);
        let before = v.to_vec();
        v.iter_mut().for_each(|x| *x = x.min(clip));
        let n = norm(v);
        v.iter_mut().for_each(|x| *x /= n);
        if v.iter().zip(&before).all(|(a, b)| (a - b).abs() < 1e-13) {
            return;
        }
    }
}
