//! Score fusion, error-rate metrics and DET curves.
//!
//! Scores are oriented so that higher means more bona fide: a sample is
//! accepted as bona fide when `score >= threshold`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::classify::{PadScore, ScoreSource};
use crate::error::{PadError, Result};
use crate::ingest::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl FusionWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let ok = alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0;
        if !ok || alpha + beta > 1.0 + 1e-12 {
            return Err(PadError::InvalidInput(format!(
                "fusion weights ({alpha}, {beta}) need alpha, beta >= 0 and alpha + beta <= 1"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn bow(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }

    pub fn apply(&self, fv: f64, vlad: f64, bow: f64) -> f64 {
        self.alpha * fv + self.beta * vlad + self.bow() * bow
    }
}

pub fn fuse(s_fv: &PadScore, s_vlad: &PadScore, s_bow: &PadScore, w: &FusionWeights) -> PadScore {
    PadScore {
        value: w.apply(s_fv.value, s_vlad.value, s_bow.value),
        source: ScoreSource::Fusion,
        s_bf: w.apply(s_fv.s_bf, s_vlad.s_bf, s_bow.s_bf),
        s_pa: w.apply(s_fv.s_pa, s_vlad.s_pa, s_bow.s_pa),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub label: Label,
    pub material: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRate {
    pub attacks: usize,
    pub apcer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub d_eer: f64,
    pub bpcer10: f64,
    pub bpcer20: f64,
    pub bpcer100: f64,
    pub bona_fide: usize,
    pub attacks: usize,
    /// APCER at `threshold` per attack material.
    pub per_material: BTreeMap<String, MaterialRate>,
    pub det: Vec<DetPoint>,
}

/// Error counts of labelled scores, sorted for threshold sweeps.
struct Sorted {
    bona_fide: Vec<f64>,
    attacks: Vec<f64>,
}

impl Sorted {
    fn new(scores: impl Iterator<Item = (f64, Label)>) -> Result<Self> {
        let (mut bona_fide, mut attacks) = (Vec::new(), Vec::new());
        for (s, label) in scores {
            if !s.is_finite() {
                return Err(PadError::InvalidInput(format!("non-finite score {s}")));
            }
            match label {
                Label::BonaFide => bona_fide.push(s),
                Label::Attack => attacks.push(s),
            }
        }
        if bona_fide.is_empty() || attacks.is_empty() {
            return Err(PadError::InsufficientData("evaluation needs both classes".into()));
        }
        bona_fide.sort_by(f64::total_cmp);
        attacks.sort_by(f64::total_cmp);
        Ok(Self { bona_fide, attacks })
    }

    /// Attacks with `score >= t`.
    fn accepted_attacks(&self, t: f64) -> usize {
        self.attacks.len() - self.attacks.partition_point(|&s| s < t)
    }

    /// Bona fide samples with `score < t`.
    fn rejected_bona_fide(&self, t: f64) -> usize {
        self.bona_fide.partition_point(|&s| s < t)
    }

    fn apcer(&self, t: f64) -> f64 {
        self.accepted_attacks(t) as f64 / self.attacks.len() as f64
    }

    fn bpcer(&self, t: f64) -> f64 {
        self.rejected_bona_fide(t) as f64 / self.bona_fide.len() as f64
    }

    /// Every distinct score in ascending order, then one threshold above
    /// the largest score.
    fn thresholds(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.bona_fide.iter().chain(&self.attacks).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        let top = *all.last().expect("both classes present");
        all.push(above(top));
        all
    }

    fn det(&self) -> Vec<DetPoint> {
        self.thresholds()
            .into_iter()
            .map(|t| DetPoint { threshold: t, apcer: self.apcer(t), bpcer: self.bpcer(t) })
            .collect()
    }

    /// BPCER at the smallest threshold whose APCER is at most `percent`%.
    fn bpcer_at(&self, det: &[DetPoint], percent: usize) -> f64 {
        let n = self.attacks.len();
        det.iter()
            .find(|p| self.accepted_attacks(p.threshold) * 100 <= percent * n)
            .map_or(1.0, |p| p.bpcer)
    }
}

/// A threshold strictly above `x` that stays finite.
fn above(x: f64) -> f64 {
    let step = x.abs().max(1.0);
    x + step
}

/// Rate where the DET curve crosses `apcer == bpcer`, interpolating linearly
/// between the two adjacent operating points.
fn crossing(det: &[DetPoint]) -> f64 {
    let mut prev: Option<&DetPoint> = None;
    for p in det {
        if p.apcer <= p.bpcer {
            return match prev {
                Some(q) if p.apcer < p.bpcer => {
                    let d0 = q.apcer - q.bpcer;
                    let d1 = p.apcer - p.bpcer;
                    let f = d0 / (d0 - d1);
                    q.apcer + f * (p.apcer - q.apcer)
                }
                _ => p.apcer,
            };
        }
        prev = Some(p);
    }
    // Unreachable with both classes present: the last point has apcer 0.
    det.last().map_or(0.5, |p| p.bpcer)
}

pub fn d_eer(scores: impl Iterator<Item = (f64, Label)>) -> Result<f64> {
    let sorted = Sorted::new(scores)?;
    Ok(crossing(&sorted.det()))
}

pub fn compute_report(scores: &[ScoredSample], threshold: f64) -> Result<EvalReport> {
    if !threshold.is_finite() {
        return Err(PadError::InvalidInput("threshold must be finite".into()));
    }
    let sorted = Sorted::new(scores.iter().map(|s| (s.score, s.label)))?;
    let det = sorted.det();
    let apcer = sorted.apcer(threshold);
    let bpcer = sorted.bpcer(threshold);

    let mut per_material: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.label == Label::Attack) {
        let e = per_material.entry(s.material.to_ascii_lowercase()).or_default();
        e.0 += 1;
        e.1 += usize::from(s.score >= threshold);
    }
    Ok(EvalReport {
        threshold,
        apcer,
        bpcer,
        acer: 0.5 * (apcer + bpcer),
        d_eer: crossing(&det),
        bpcer10: sorted.bpcer_at(&det, 10),
        bpcer20: sorted.bpcer_at(&det, 5),
        bpcer100: sorted.bpcer_at(&det, 1),
        bona_fide: sorted.bona_fide.len(),
        attacks: sorted.attacks.len(),
        per_material: per_material
            .into_iter()
            .map(|(m, (n, e))| (m, MaterialRate { attacks: n, apcer: e as f64 / n as f64 }))
            .collect(),
        det,
    })
}

/// Searches `{0, step, ..., 1}^2` with `alpha + beta <= 1` for the weights
/// minimising the fused D-EER. Ties keep the smaller alpha, then beta.
pub fn grid_search_weights(
    fv: &[ScoredSample],
    vlad: &[ScoredSample],
    bow: &[ScoredSample],
    step: f64,
) -> Result<(FusionWeights, f64)> {
    let n = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || (n * step - 1.0).abs() > 1e-9 {
        return Err(PadError::InvalidInput(format!("grid step {step} must divide 1")));
    }
    let n = n as usize;
    if fv.len() != vlad.len() || fv.len() != bow.len() {
        return Err(PadError::InvalidInput("score lists differ in length".into()));
    }
    for ((a, b), c) in fv.iter().zip(vlad).zip(bow) {
        if a.id != b.id || a.id != c.id || a.label != b.label || a.label != c.label {
            return Err(PadError::InvalidInput(format!("score lists misaligned at `{}`", a.id)));
        }
    }
    let mut best: Option<(FusionWeights, f64)> = None;
    for i in 0..=n {
        for j in 0..=(n - i) {
            let w = FusionWeights::new(i as f64 / n as f64, j as f64 / n as f64)?;
            let fused = fv
                .iter()
                .zip(vlad)
                .zip(bow)
                .map(|((a, b), c)| (w.apply(a.score, b.score, c.score), a.label));
            let e = d_eer(fused)?;
            if best.map_or(true, |(_, b)| e < b - 1e-12) {
                best = Some((w, e));
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

pub fn det_csv(det: &[DetPoint]) -> String {
    let mut out = String::from("threshold,apcer,bpcer\n");
    for p in det {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.apcer, p.bpcer);
    }
    out
}

const PLOT: f64 = 400.0;
const PAD: f64 = 60.0;
const RATE_MIN: f64 = 1e-3;
const RATE_MAX: f64 = 0.999;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// DET curves on normal-deviate axes: APCER horizontally, BPCER vertically.
pub fn det_svg(curves: &[(&str, &[DetPoint])]) -> String {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let lo = normal.inverse_cdf(RATE_MIN);
    let hi = normal.inverse_cdf(RATE_MAX);
    let scale = |r: f64| (normal.inverse_cdf(r.clamp(RATE_MIN, RATE_MAX)) - lo) / (hi - lo) * PLOT;
    let size = PLOT + 2.0 * PAD;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect x="{PAD}" y="{PAD}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#);
    for tick in [0.001, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99] {
        let p = scale(tick);
        let label = format!("{}", tick * 100.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{x}" y1="{PAD}" x2="{x}" y2="{b}" stroke="#ddd"/><text x="{x}" y="{t}" text-anchor="middle">{label}</text>"##,
            x = PAD + p,
            b = PAD + PLOT,
            t = PAD + PLOT + 15.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{PAD}" y1="{y}" x2="{r}" y2="{y}" stroke="#ddd"/><text x="{l}" y="{y}" text-anchor="end">{label}</text>"##,
            y = PAD + PLOT - p,
            r = PAD + PLOT,
            l = PAD - 5.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x}" y="{y}" text-anchor="middle">APCER (%)</text>"#,
        x = PAD + PLOT / 2.0,
        y = size - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{y}" transform="rotate(-90 15 {y})" text-anchor="middle">BPCER (%)</text>"#,
        y = PAD + PLOT / 2.0
    );
    for (c, (name, det)) in curves.iter().enumerate() {
        let colour = COLOURS[c % COLOURS.len()];
        let points: Vec<String> = det
            .iter()
            .map(|p| format!("{:.2},{:.2}", PAD + scale(p.apcer), PAD + PLOT - scale(p.bpcer)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" fill="{colour}">{name}</text>"#,
            x = PAD + PLOT - 80.0,
            y = PAD + 15.0 + 14.0 * c as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}
