mod common;

use common::rng;
use fpad::classify::{dual_score, select, train_dual, train_svm, DualScorer, LinearSvm, ScoreSource, SvmParams};
use fpad::ingest::Label;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn label(positive_side: bool) -> Label {
    if positive_side {
        Label::BonaFide
    } else {
        Label::Attack
    }
}

/// Points in `[-1, 1]^2` labelled by the side of `n . x = c`, keeping a gap
/// of `gap` on either side of the line.
fn separable(r: &mut ChaCha8Rng, n: usize, normal: (f64, f64), c: f64, gap: f64) -> (Vec<Vec<f32>>, Vec<Label>) {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    while xs.len() < n {
        let p = (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        let s = normal.0 * p.0 + normal.1 * p.1 - c;
        if s.abs() > gap {
            xs.push(vec![p.0 as f32, p.1 as f32]);
            ys.push(label(s > 0.0));
        }
    }
    (xs, ys)
}

/// Widest-margin separator over a grid of directions and offsets.
fn grid_separator(xs: &[Vec<f32>], ys: &[Label]) -> (f64, f64, f64) {
    let mut best = (f64::NEG_INFINITY, (0.0, 0.0, 0.0));
    for a in 0..720 {
        let theta = a as f64 * std::f64::consts::PI / 360.0;
        let (u, v) = (theta.cos(), theta.sin());
        for o in -200..=200 {
            let c = o as f64 * 0.01;
            let margin = xs
                .iter()
                .zip(ys)
                .map(|(x, &y)| {
                    let s = u * f64::from(x[0]) + v * f64::from(x[1]) - c;
                    if y == Label::BonaFide { s } else { -s }
                })
                .fold(f64::INFINITY, f64::min);
            if margin > best.0 {
                best = (margin, (u, v, c));
            }
        }
    }
    best.1
}

#[test]
fn separable_2d_set_is_fit_without_violations() {
    let mut r = rng(1);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..200 {
        let side = i % 2 == 0;
        let x1 = r.gen_range(1.05..3.0) * if side { 1.0 } else { -1.0 };
        xs.push(vec![x1 as f32, r.gen_range(-2.0..2.0) as f32]);
        ys.push(label(side));
    }
    let (svm, _) = train_svm(&xs, &ys, Label::BonaFide, &SvmParams::default(), 7).unwrap();
    for (x, &y) in xs.iter().zip(&ys) {
        let s = svm.decision(x).unwrap();
        assert_eq!(s > 0.0, y == Label::BonaFide);
        assert!(s * if y == Label::BonaFide { 1.0 } else { -1.0 } >= 1.0 - 1e-6, "margin {s}");
    }
}

#[test]
fn huge_lambda_shrinks_weights() {
    let mut r = rng(2);
    let (xs, ys) = separable(&mut r, 100, (1.0, 0.0), 0.0, 0.1);
    let params = SvmParams { lambda: 1e6, epochs: 20 };
    let (svm, _) = train_svm(&xs, &ys, Label::BonaFide, &params, 0).unwrap();
    assert!(svm.w.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-2);
}

#[test]
fn agrees_with_grid_searched_separator() {
    for seed in 0..5 {
        let mut r = rng(10 + seed);
        let theta: f64 = r.gen_range(0.0..std::f64::consts::TAU);
        let normal = (theta.cos(), theta.sin());
        let c = r.gen_range(-0.3..0.3);
        let (xs, ys) = separable(&mut r, 200, normal, c, 0.05);
        let (svm, _) = train_svm(&xs, &ys, Label::BonaFide, &SvmParams::default(), seed).unwrap();
        let (u, v, oc) = grid_separator(&xs, &ys);
        let (test, _) = separable(&mut r, 2000, normal, c, 0.0);
        let agree = test
            .iter()
            .filter(|x| {
                let a = svm.decision(x).unwrap() >= 0.0;
                let b = u * f64::from(x[0]) + v * f64::from(x[1]) - oc >= 0.0;
                a == b
            })
            .count();
        assert!(agree as f64 >= 0.99 * test.len() as f64, "seed {seed}: {agree}/2000");
    }
}

fn noisy(r: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f32>>, Vec<Label>) {
    let dir: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let s: f64 = x.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() + r.gen_range(-0.3..0.3);
        xs.push(x.iter().map(|&v| v as f32).collect());
        ys.push(label(s > 0.0));
    }
    (xs, ys)
}

#[test]
fn averaged_objective_settles() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let (xs, ys) = noisy(&mut r, 300, 10);
        let params = SvmParams { lambda: 1e-2, epochs: 30 };
        let (_, trace) = train_svm(&xs, &ys, Label::BonaFide, &params, seed).unwrap();
        assert_eq!(trace.objectives.len(), 29);
        for w in trace.objectives.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-3), "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn flipped_labels_negate_decisions() {
    let mut r = rng(3);
    let (xs, ys) = noisy(&mut r, 400, 8);
    let (held, _) = noisy(&mut r, 1000, 8);
    let params = SvmParams::default();
    let (bf, _) = train_svm(&xs, &ys, Label::BonaFide, &params, 5).unwrap();
    let (pa, _) = train_svm(&xs, &ys, Label::Attack, &params, 5).unwrap();
    let opposite = held
        .iter()
        .filter(|x| (bf.decision(x).unwrap() >= 0.0) != (pa.decision(x).unwrap() >= 0.0))
        .count();
    assert!(opposite >= 990, "{opposite}/1000");
}

#[test]
fn dual_scores_follow_training_sign() {
    let mut r = rng(4);
    let (xs, ys) = separable(&mut r, 300, (0.6, 0.8), 0.1, 0.05);
    let ds = train_dual(&xs, &ys, &SvmParams::default(), 9).unwrap();
    let agree = xs
        .iter()
        .filter(|x| {
            let s = dual_score(&ds, x, ScoreSource::Fv).unwrap();
            (s.value >= 0.0) == (s.s_bf >= 0.0)
        })
        .count();
    assert!(agree as f64 >= 0.99 * xs.len() as f64);
    assert_eq!(ds, train_dual(&xs, &ys, &SvmParams::default(), 9).unwrap());
}

#[test]
fn selection_examples() {
    assert_eq!(select(0.2, -0.5), 0.2);
    assert_eq!(select(0.9, 0.1), -0.1);
    assert_eq!(select(0.0, 0.7), 0.0);
    assert_eq!(select(0.0, -3.0), 0.0);
    assert_eq!(select(-0.4, 0.4), -0.4);
}

fn scorer(wb: f64, bb: f64, wp: f64, bp: f64) -> DualScorer {
    DualScorer::new(
        LinearSvm { w: vec![wb, -wb], b: bb, positive: Label::BonaFide },
        LinearSvm { w: vec![wp, 0.5 * wp], b: bp, positive: Label::Attack },
    )
    .unwrap()
}

proptest! {
    #[test]
    fn dual_score_is_scale_consistent(
        wb in -2.0f64..2.0, bb in -1.0f64..1.0, wp in -2.0f64..2.0, bp in -1.0f64..1.0,
        c in 0.01f64..100.0, x in prop::collection::vec(-1.0f32..1.0, 2),
    ) {
        let base = dual_score(&scorer(wb, bb, wp, bp), &x, ScoreSource::Bow).unwrap();
        let scaled = dual_score(&scorer(c * wb, c * bb, c * wp, c * bp), &x, ScoreSource::Bow).unwrap();
        prop_assert!((scaled.value - c * base.value).abs() <= 1e-9 * (1.0 + scaled.value.abs()));
        let picked_bf = |s: &fpad::classify::PadScore| s.value == s.s_bf;
        if base.s_bf.abs() != base.s_pa.abs() {
            prop_assert_eq!(picked_bf(&base), picked_bf(&scaled));
        }
    }
}
