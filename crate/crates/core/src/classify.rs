//! Linear SVMs trained by averaged stochastic subgradient descent, and the
//! two-SVM minimum-distance scorer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encode::EncodingKind;
use crate::error::{check_dim, PadError, Result};
use crate::ingest::Label;
use crate::{par, seed};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
    /// Class mapped to positive decision values.
    pub positive: Label,
}

impl LinearSvm {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn decision(&self, x: &[f32]) -> Result<f64> {
        check_dim(self.w.len(), x.len())?;
        Ok(dot(&self.w, x) + self.b)
    }
}

fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { lambda: 1e-4, epochs: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SvmTrace {
    /// Regularised hinge objective of the averaged model after each epoch.
    pub objectives: Vec<f64>,
}

/// Minimises `lambda/2 |w|^2 + mean hinge` with step size
/// `1 / (lambda (t + t0))`, returning the iterate average taken from the
/// second epoch on (or over the single epoch when `epochs == 1`).
pub fn train_svm<X: AsRef<[f32]> + Sync>(
    x: &[X],
    labels: &[Label],
    positive: Label,
    params: &SvmParams,
    seed_value: u64,
) -> Result<(LinearSvm, SvmTrace)> {
    if x.len() != labels.len() {
        return Err(PadError::InvalidInput(format!("{} vectors but {} labels", x.len(), labels.len())));
    }
    if !(params.lambda > 0.0 && params.lambda.is_finite()) || params.epochs == 0 {
        return Err(PadError::InvalidInput("SVM needs a positive lambda and at least one epoch".into()));
    }
    let Some(first) = x.first() else {
        return Err(PadError::InsufficientData("no training vectors".into()));
    };
    let dim = first.as_ref().len();
    for v in x {
        check_dim(dim, v.as_ref().len())?;
    }
    if !labels.contains(&Label::BonaFide) || !labels.contains(&Label::Attack) {
        return Err(PadError::InsufficientData("SVM training needs both classes".into()));
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l == positive { 1.0 } else { -1.0 }).collect();

    let lambda = params.lambda;
    // Schedule offset chosen so the first step has length sqrt(1/sqrt(lambda)).
    let typw = (1.0 / lambda.sqrt()).sqrt();
    let t0 = 1.0 / (typw * lambda);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut avg_w = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut averaged = 0usize;
    let average_from = usize::from(params.epochs > 1);

    let mut rng = seed::rng(seed_value);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut trace = SvmTrace::default();
    let mut t = 0.0f64;
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let xi = x[i].as_ref();
            let eta = 1.0 / (lambda * (t + t0));
            let margin = y[i] * (dot(&w, xi) + b);
            let decay = (1.0 - eta * lambda).max(0.0);
            if margin < 1.0 {
                let step = eta * y[i];
                for (wj, &xj) in w.iter_mut().zip(xi) {
                    *wj = *wj * decay + step * f64::from(xj);
                }
                b += step;
            } else {
                w.iter_mut().for_each(|wj| *wj *= decay);
            }
            t += 1.0;
            if epoch >= average_from {
                averaged += 1;
                let r = 1.0 / averaged as f64;
                for (a, wj) in avg_w.iter_mut().zip(&w) {
                    *a += (wj - *a) * r;
                }
                avg_b += (b - avg_b) * r;
            }
        }
        if epoch >= average_from {
            trace.objectives.push(objective(x, &y, &avg_w, avg_b, lambda));
        }
    }
    if avg_w.iter().any(|v| !v.is_finite()) || !avg_b.is_finite() {
        return Err(PadError::Numerical("SVM weights diverged".into()));
    }
    Ok((LinearSvm { w: avg_w, b: avg_b, positive }, trace))
}

fn objective<X: AsRef<[f32]> + Sync>(x: &[X], y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let hinge = par::chunked_reduce(
        x.len(),
        |r| r.map(|i| (1.0 - y[i] * (dot(w, x[i].as_ref()) + b)).max(0.0)).sum::<f64>(),
        |a, c| a + c,
    )
    .unwrap_or(0.0);
    0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>() + hinge / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Fv,
    Vlad,
    Bow,
    Fusion,
}

impl From<EncodingKind> for ScoreSource {
    fn from(kind: EncodingKind) -> Self {
        match kind {
            EncodingKind::Fv => ScoreSource::Fv,
            EncodingKind::Vlad => ScoreSource::Vlad,
            EncodingKind::Bow => ScoreSource::Bow,
        }
    }
}

/// Detection score; positive means bona fide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadScore {
    pub value: f64,
    pub source: ScoreSource,
    pub s_bf: f64,
    pub s_pa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualScorer {
    pub svm_bf: LinearSvm,
    pub svm_pa: LinearSvm,
}

impl DualScorer {
    pub fn new(svm_bf: LinearSvm, svm_pa: LinearSvm) -> Result<Self> {
        check_dim(svm_bf.dim(), svm_pa.dim())?;
        if svm_bf.positive != Label::BonaFide || svm_pa.positive != Label::Attack {
            return Err(PadError::InvalidInput(
                "dual scorer needs a bona fide positive and an attack positive SVM".into(),
            ));
        }
        Ok(Self { svm_bf, svm_pa })
    }

    pub fn dim(&self) -> usize {
        self.svm_bf.dim()
    }

    pub fn score(&self, x: &[f32], source: ScoreSource) -> Result<PadScore> {
        let s_bf = self.svm_bf.decision(x)?;
        let s_pa = self.svm_pa.decision(x)?;
        Ok(PadScore { value: select(s_bf, s_pa), source, s_bf, s_pa })
    }
}

/// The decision closer to its hyperplane, oriented so positive means bona
/// fide. Ties keep `s_bf`.
pub fn select(s_bf: f64, s_pa: f64) -> f64 {
    if s_bf.abs() <= s_pa.abs() {
        s_bf
    } else {
        -s_pa
    }
}

pub fn dual_score(ds: &DualScorer, x: &[f32], source: ScoreSource) -> Result<PadScore> {
    ds.score(x, source)
}

/// Trains the bona fide and attack SVMs concurrently with seeds derived
/// from `seed_value`.
pub fn train_dual<X: AsRef<[f32]> + Sync>(
    x: &[X],
    labels: &[Label],
    params: &SvmParams,
    seed_value: u64,
) -> Result<DualScorer> {
    let (bf, pa) = par::join(
        || train_svm(x, labels, Label::BonaFide, params, seed::derive(seed_value, "svm-bf")),
        || train_svm(x, labels, Label::Attack, params, seed::derive(seed_value, "svm-pa")),
    );
    DualScorer::new(bf?.0, pa?.0)
}
