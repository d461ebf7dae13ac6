mod common;

use common::*;
use fpad::densesift::{Descriptor, DescriptorSet, DESCRIPTOR_LEN};
use fpad::encode::{
    encode_bow, encode_fv, encode_vlad, BowEncoder, EncodedVector, FisherEncoder, FvNorm, PyramidSpec, VladEncoder,
};
use fpad::vocab::{Codebook, GmmModel, PcaProjection};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_codebook(r: &mut ChaCha8Rng, k: usize, dim: usize, lo: f64, hi: f64) -> Codebook {
    Codebook::new(dim, (0..k * dim).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn unit_or_zero(e: &EncodedVector) -> bool {
    let n = norm(&e.values);
    n == 0.0 || (n - 1.0).abs() <= 1e-6
}

fn descriptor_at(values: &[f32], x: f32, y: f32) -> Descriptor {
    let mut v = [0.0f32; DESCRIPTOR_LEN];
    v.copy_from_slice(values);
    Descriptor { x, y, scale: 5.0, values: v }
}

/// A descriptor whose projection is exactly `target` under an axis-aligned
/// projection.
fn preimage(p: &PcaProjection, target: &[f64]) -> Vec<f32> {
    let mut x: Vec<f32> = p.mean().iter().map(|&m| m as f32).collect();
    for (r, &t) in target.iter().enumerate() {
        let row = p.basis_row(r);
        let axis = row.iter().position(|&b| b != 0.0).unwrap();
        x[axis] = (p.mean()[axis] + row[axis] * t) as f32;
    }
    x
}

#[test]
fn bow_matches_cell_and_nearest_word_oracle() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let ds = random_descriptors(&mut r, 200, 60 + seed as usize % 7, 48);
        let cb = random_codebook(&mut r, 8, DESCRIPTOR_LEN, 0.0, 1.0);
        let enc = BowEncoder::new(cb.clone(), PyramidSpec::default()).unwrap();
        let want = bow_counts(&ds, cb.centroids(), &[1, 2, 4]);
        assert_eq!(enc.histogram(&ds), want, "seed {seed}");
        let e = enc.encode(&ds);
        let total = want.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt();
        for (a, &c) in e.values.iter().zip(&want) {
            assert!((f64::from(*a) - f64::from(c) / total).abs() < 1e-6);
        }
    }
}

#[test]
fn bow_single_word_example() {
    let mut r = rng(1);
    let cb = random_codebook(&mut r, 16, DESCRIPTOR_LEN, 0.0, 1.0);
    let word: Vec<f32> = cb.centroid(7).iter().map(|&v| v as f32).collect();
    let ds = DescriptorSet {
        width: 50,
        height: 50,
        descriptors: (0..10).map(|i| descriptor_at(&word, i as f32 * 5.0, 20.0)).collect(),
    };
    let enc = BowEncoder::new(cb, PyramidSpec::new(vec![1]).unwrap()).unwrap();
    let h = enc.histogram(&ds);
    assert_eq!(h.len(), 16);
    assert!(h.iter().enumerate().all(|(i, &c)| c == if i == 7 { 10 } else { 0 }));
}

#[test]
fn boundary_positions_go_to_the_higher_cell() {
    let mut r = rng(2);
    let cb = random_codebook(&mut r, 2, DESCRIPTOR_LEN, 0.0, 1.0);
    let word: Vec<f32> = cb.centroid(0).iter().map(|&v| v as f32).collect();
    let place = |x, y| DescriptorSet { width: 40, height: 40, descriptors: vec![descriptor_at(&word, x, y)] };
    let enc = BowEncoder::new(cb, PyramidSpec::new(vec![2]).unwrap()).unwrap();
    let cell = |x, y| enc.histogram(&place(x, y)).iter().position(|&c| c == 1).unwrap() / 2;
    assert_eq!(cell(19.5, 0.0), 0);
    assert_eq!(cell(20.0, 0.0), 1);
    assert_eq!(cell(0.0, 20.0), 2);
    assert_eq!(cell(40.0, 40.0), 3);
}

#[test]
fn empty_sets_encode_to_zero_vectors() {
    let mut r = rng(3);
    let empty = DescriptorSet { width: 10, height: 10, descriptors: vec![] };
    let cb = random_codebook(&mut r, 8, DESCRIPTOR_LEN, 0.0, 1.0);
    let bow = encode_bow(&empty, &cb, &PyramidSpec::default()).unwrap();
    assert_eq!(bow.len(), 8 * 21);
    assert!(bow.empty && bow.values.iter().all(|&v| v == 0.0));
    let pca = axis_pca(&mut r, 6, false);
    let fv = encode_fv(&empty, &pca, &random_gmm(&mut r, 4, 6, 0.5)).unwrap();
    assert_eq!(fv.len(), 2 * 4 * 6);
    assert!(fv.values.iter().all(|&v| v == 0.0));
    let vlad = encode_vlad(&empty, &pca, &random_codebook(&mut r, 4, 6, -0.5, 0.5)).unwrap();
    assert_eq!(vlad.len(), 4 * 6);
    assert!(vlad.values.iter().all(|&v| v == 0.0));
}

#[test]
fn vlad_matches_residual_oracle() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let ds = random_descriptors(&mut r, 300, 40, 40);
        let pca = axis_pca(&mut r, 8, seed % 3 == 0);
        let scale = if pca.whiten() { 2.0 } else { 0.5 };
        let cb = random_codebook(&mut r, 5, 8, -scale, scale);
        let enc = VladEncoder::new(pca.clone(), cb.clone()).unwrap();
        let want = vlad_raw(&ds, &pca, cb.centroids());
        assert!(vec_close(&enc.residuals(&ds), &want, 1e-6), "seed {seed}");
        let e = enc.encode(&ds);
        let n = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        let want_unit: Vec<f64> = want.iter().map(|v| v / n).collect();
        assert!(vec_close(&as_f64(&e.values), &want_unit, 1e-6));
        assert!(unit_or_zero(&e));
    }
}

#[test]
fn vlad_examples() {
    let mut r = rng(4);
    let pca = axis_pca(&mut r, 6, false);
    let targets: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| r.gen_range(-0.3..0.3)).collect()).collect();
    let xs: Vec<Vec<f32>> = targets.iter().map(|t| preimage(&pca, t)).collect();
    // Centroids taken from the projected descriptors themselves.
    let cb = Codebook::new(6, xs.iter().flat_map(|x| pca.project(x).unwrap()).collect()).unwrap();
    let ds = DescriptorSet {
        width: 20,
        height: 20,
        descriptors: xs.iter().cycle().take(9).map(|x| descriptor_at(x, 1.0, 1.0)).collect(),
    };
    let e = encode_vlad(&ds, &pca, &cb).unwrap();
    assert!(e.values.iter().all(|&v| v == 0.0));

    let x: Vec<f32> = (0..DESCRIPTOR_LEN).map(|_| r.gen()).collect();
    let y = pca.project(&x).unwrap();
    let c0: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
    let c1: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
    let cb = Codebook::new(6, [c0.clone(), c1].concat()).unwrap();
    let single = DescriptorSet { width: 20, height: 20, descriptors: vec![descriptor_at(&x, 3.0, 3.0)] };
    let e = encode_vlad(&single, &pca, &cb).unwrap();
    let block0: Vec<f64> = y.iter().zip(&c0).map(|(a, b)| a - b).collect();
    let n = block0.iter().map(|v| v * v).sum::<f64>().sqrt();
    for t in 0..6 {
        assert!((f64::from(e.values[t]) - block0[t] / n).abs() < 1e-6);
        assert_eq!(e.values[6 + t], 0.0);
    }
}

#[test]
fn fisher_statistics_match_two_loop_oracle() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let ds = random_descriptors(&mut r, 100, 30, 30);
        let pca = axis_pca(&mut r, 8, false);
        let g = random_gmm(&mut r, 3, 8, 0.4);
        let enc = FisherEncoder::new(pca.clone(), g.clone(), FvNorm::Improved).unwrap();
        let want = fv_raw(&ds, &pca, &g);
        assert!(vec_close(&enc.statistics(&ds), &want, 1e-6), "seed {seed}");
        let mut improved: Vec<f64> = want.iter().map(|v| v.signum() * v.abs().sqrt()).collect();
        let n = improved.iter().map(|v| v * v).sum::<f64>().sqrt();
        improved.iter_mut().for_each(|v| *v /= n);
        let e = enc.encode(&ds);
        assert!(vec_close(&as_f64(&e.values), &improved, 1e-6));
        assert!(unit_or_zero(&e));
    }
}

#[test]
fn fisher_normalisation_modes() {
    let mut r = rng(5);
    let ds = random_descriptors(&mut r, 50, 30, 30);
    let pca = axis_pca(&mut r, 4, false);
    let g = random_gmm(&mut r, 2, 4, 0.4);
    let raw = fv_raw(&ds, &pca, &g);
    let none = FisherEncoder::new(pca.clone(), g.clone(), FvNorm::None).unwrap().encode(&ds);
    assert!(vec_close(&as_f64(&none.values), &raw, 1e-6));
    let l2 = FisherEncoder::new(pca, g, FvNorm::L2).unwrap().encode(&ds);
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(vec_close(&as_f64(&l2.values), &raw.iter().map(|v| v / n).collect::<Vec<_>>(), 1e-6));
}

#[test]
fn descriptors_at_a_single_mean_give_the_analytic_fisher_vector() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let pca = axis_pca(&mut r, 8, false);
        let x: Vec<f32> = (0..DESCRIPTOR_LEN).map(|_| r.gen()).collect();
        let mu = pca.project(&x).unwrap();
        let vars = (0..8).map(|_| r.gen_range(0.01..1.0)).collect();
        let g = GmmModel::new(8, vec![1.0], mu, vars).unwrap();
        let n = 1 + seed as usize % 40;
        let ds = DescriptorSet { width: 9, height: 9, descriptors: vec![descriptor_at(&x, 1.0, 1.0); n] };
        let phi = FisherEncoder::new(pca, g, FvNorm::None).unwrap().statistics(&ds);
        for t in 0..8 {
            assert!(phi[t].abs() < 1e-9);
            assert!((phi[8 + t] + 1.0 / 2f64.sqrt()).abs() < 1e-9);
        }
    }
}

#[test]
fn sampling_at_the_means_in_proportion_cancels_first_order_terms() {
    let mut r = rng(6);
    let (k, d, n) = (4, 8, 10_000);
    let pca = axis_pca(&mut r, d, false);
    let g0 = random_gmm(&mut r, k, d, 3.0);
    let xs: Vec<Vec<f32>> = (0..k).map(|j| preimage(&pca, g0.mean(j))).collect();
    // Means rounded through the f32 descriptor so projections land on them.
    let means: Vec<f64> = xs.iter().flat_map(|x| pca.project(x).unwrap()).collect();
    let g = GmmModel::new(d, g0.weights().to_vec(), means, g0.variances().to_vec()).unwrap();
    let mut descriptors = Vec::new();
    for j in 0..k {
        let count = (g.weights()[j] * n as f64).round() as usize;
        descriptors.extend(std::iter::repeat(descriptor_at(&xs[j], 0.0, 0.0)).take(count));
    }
    let ds = DescriptorSet { width: 1, height: 1, descriptors };
    let phi = FisherEncoder::new(pca, g, FvNorm::None).unwrap().statistics(&ds);
    let first: f64 = (0..k).flat_map(|j| phi[2 * j * d..(2 * j + 1) * d].to_vec()).map(|v| v * v).sum::<f64>().sqrt();
    assert!(first < 0.05, "first-order norm {first}");
}

#[test]
fn encodings_ignore_descriptor_order() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let ds = random_descriptors(&mut r, 150, 32, 32);
        let mut shuffled = ds.clone();
        shuffled.descriptors.shuffle(&mut r);
        let cb = random_codebook(&mut r, 6, DESCRIPTOR_LEN, 0.0, 1.0);
        let bow = BowEncoder::new(cb, PyramidSpec::default()).unwrap();
        assert_eq!(bow.histogram(&ds), bow.histogram(&shuffled));
        let pca = axis_pca(&mut r, 8, false);
        let fv = FisherEncoder::new(pca.clone(), random_gmm(&mut r, 3, 8, 0.4), FvNorm::Improved).unwrap();
        assert!(vec_close(&fv.statistics(&ds), &fv.statistics(&shuffled), 1e-9));
        let vlad = VladEncoder::new(pca, random_codebook(&mut r, 4, 8, -0.5, 0.5)).unwrap();
        assert!(vec_close(&vlad.residuals(&ds), &vlad.residuals(&shuffled), 1e-9));
    }
}

#[test]
fn duplicating_descriptors_scales_raw_counts_only() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let ds = random_descriptors(&mut r, 80, 32, 32);
        let mut twice = ds.clone();
        twice.descriptors.extend(ds.descriptors.clone());
        let cb = random_codebook(&mut r, 6, DESCRIPTOR_LEN, 0.0, 1.0);
        let bow = BowEncoder::new(cb, PyramidSpec::default()).unwrap();
        let doubled: Vec<u32> = bow.histogram(&ds).iter().map(|c| 2 * c).collect();
        assert_eq!(bow.histogram(&twice), doubled);
        assert!(vec_close(&as_f64(&bow.encode(&ds).values), &as_f64(&bow.encode(&twice).values), 1e-6));

        let pca = axis_pca(&mut r, 8, false);
        let fv = FisherEncoder::new(pca.clone(), random_gmm(&mut r, 3, 8, 0.4), FvNorm::Improved).unwrap();
        assert!(vec_close(&fv.statistics(&ds), &fv.statistics(&twice), 1e-9));

        let vlad = VladEncoder::new(pca, random_codebook(&mut r, 4, 8, -0.5, 0.5)).unwrap();
        let raw: Vec<f64> = vlad.residuals(&ds).iter().map(|v| 2.0 * v).collect();
        assert!(vec_close(&vlad.residuals(&twice), &raw, 1e-9));
        assert!(vec_close(&as_f64(&vlad.encode(&ds).values), &as_f64(&vlad.encode(&twice).values), 1e-6));
    }
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let mut r = rng(7);
    let pca = axis_pca(&mut r, 8, false);
    assert!(FisherEncoder::new(pca.clone(), random_gmm(&mut r, 2, 7, 0.4), FvNorm::Improved).is_err());
    assert!(VladEncoder::new(pca, random_codebook(&mut r, 2, 9, 0.0, 1.0)).is_err());
    assert!(BowEncoder::new(random_codebook(&mut r, 2, 64, 0.0, 1.0), PyramidSpec::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lengths_and_norms_follow_the_configuration(
        seed in 0u64..10_000,
        k in 1usize..12,
        d in 1usize..10,
        n in 0usize..60,
        levels in prop::collection::vec(1usize..5, 1..4),
    ) {
        let mut r = rng(seed);
        let ds = random_descriptors(&mut r, n, 24, 24);
        let pyramid = PyramidSpec::new(levels.clone()).unwrap();
        let cells: usize = levels.iter().map(|l| l * l).sum();
        let bow = encode_bow(&ds, &random_codebook(&mut r, k, DESCRIPTOR_LEN, 0.0, 1.0), &pyramid).unwrap();
        prop_assert_eq!(bow.len(), k * cells);
        prop_assert!(bow.values.iter().all(|&v| v >= 0.0));
        let pca = axis_pca(&mut r, d, false);
        let fv = encode_fv(&ds, &pca, &random_gmm(&mut r, k, d, 0.4)).unwrap();
        prop_assert_eq!(fv.len(), 2 * k * d);
        prop_assert!(unit_or_zero(&fv) && fv.values.iter().all(|v| v.is_finite()));
        let vlad = encode_vlad(&ds, &pca, &random_codebook(&mut r, k, d, -0.5, 0.5)).unwrap();
        prop_assert_eq!(vlad.len(), k * d);
        prop_assert!(unit_or_zero(&vlad));
    }
}
