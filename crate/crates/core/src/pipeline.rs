//! End-to-end protocol runs and the vocabulary-size sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classify::{train_dual, DualScorer, PadScore, ScoreSource, SvmParams};
use crate::densesift::{extract, DenseSiftParams, DescriptorSet, DESCRIPTOR_LEN};
use crate::encode::{
    BowEncoder, EncodedVector, EncoderSet, EncodingKind, FisherEncoder, FvNorm, PyramidSpec, VladEncoder,
};
use crate::error::{PadError, Result};
use crate::evalfuse::{
    compute_report, det_csv, det_svg, fuse, grid_search_weights, EvalReport, FusionWeights, ScoredSample,
};
use crate::ingest::{
    build_split, load_grayscale, load_manifest, stratified_holdout, Label, ProtocolName, ProtocolSpec,
    SampleRecord,
};
use crate::persist::{self, Model, ModelFile, ModelMeta, ScoreRow};
use crate::vocab::{
    train_gmm, train_kmeans, train_pca, Codebook, Dataset, GmmModel, GmmOptions, KmeansOptions, PcaProjection,
};
use crate::{par, seed};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FusionMode {
    /// Grid search on a validation split carved from the training data.
    Validation,
    Fixed { alpha: f64, beta: f64 },
    /// Grid search on the test scores themselves: an optimistic upper bound.
    Oracle,
}

// serde cannot combine `flatten` with `deny_unknown_fields`, so unknown keys
// inside this block are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    #[serde(flatten)]
    pub mode: FusionMode,
    pub step: f64,
    pub validation_fraction: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { mode: FusionMode::Validation, step: 0.1, validation_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub densesift: DenseSiftParams,
    pub k_fv: usize,
    pub k_vlad: usize,
    pub k_bow: usize,
    pub pca_dim: usize,
    pub pca_whiten: bool,
    pub pyramid: PyramidSpec,
    pub fv_norm: FvNorm,
    /// Descriptors drawn from the training images to fit every vocabulary.
    pub vocab_sample: usize,
    pub kmeans_iters: usize,
    pub gmm_iters: usize,
    pub gmm_tol: f64,
    pub gmm_init_iters: usize,
    pub svm: SvmParams,
    pub fusion: FusionConfig,
    pub acer_threshold: f64,
    pub protocol: ProtocolSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.csv"),
            output_dir: PathBuf::from("out"),
            seed: 0,
            threads: None,
            densesift: DenseSiftParams::default(),
            k_fv: 1024,
            k_vlad: 1024,
            k_bow: 1024,
            pca_dim: 64,
            pca_whiten: false,
            pyramid: PyramidSpec::default(),
            fv_norm: FvNorm::Improved,
            vocab_sample: 200_000,
            kmeans_iters: 100,
            gmm_iters: 100,
            gmm_tol: 1e-5,
            gmm_init_iters: 25,
            svm: SvmParams::default(),
            fusion: FusionConfig::default(),
            acer_threshold: 0.0,
            protocol: ProtocolSpec::default(),
        }
    }
}

const K_RANGE: std::ops::RangeInclusive<usize> = 2..=65536;

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PadError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PadError::format(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k_fv", self.k_fv), ("k_vlad", self.k_vlad), ("k_bow", self.k_bow)] {
            if !K_RANGE.contains(&k) {
                return Err(PadError::InvalidInput(format!("{name} = {k} is outside [2, 65536]")));
            }
        }
        if self.pca_dim == 0 || self.pca_dim > DESCRIPTOR_LEN {
            return Err(PadError::InvalidInput(format!("pca_dim = {} must lie in 1..=128", self.pca_dim)));
        }
        if self.vocab_sample == 0 || self.kmeans_iters == 0 || self.gmm_iters == 0 {
            return Err(PadError::InvalidInput("sample size and iteration counts must be positive".into()));
        }
        let vf = self.fusion.validation_fraction;
        if self.fusion.mode == FusionMode::Validation && !(vf > 0.0 && vf < 1.0) {
            return Err(PadError::InvalidInput(format!("validation_fraction {vf} must lie in (0, 1)")));
        }
        if let FusionMode::Fixed { alpha, beta } = self.fusion.mode {
            FusionWeights::new(alpha, beta)?;
        }
        if !self.acer_threshold.is_finite() {
            return Err(PadError::InvalidInput("acer_threshold must be finite".into()));
        }
        Ok(())
    }

    /// Canonical JSON of every setting that influences results (the output
    /// directory and thread count do not).
    pub fn canonical(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
            map.remove("threads");
        }
        v
    }

    pub fn config_hash(&self) -> String {
        persist::digest(self.canonical().to_string().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Fit,
    Validation,
    Test,
}

/// Split samples with their descriptors, shared by every vocabulary size.
pub struct Prepared {
    pub protocol: ProtocolName,
    pub samples: Vec<SampleRecord>,
    pub roles: Vec<Role>,
    pub descriptors: Vec<DescriptorSet>,
    pub extract_seconds: Vec<f64>,
    pub stage_seconds: Vec<(String, f64)>,
}

impl Prepared {
    fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.roles[i] == role).collect()
    }
}

fn timed<T>(stages: &mut Vec<(String, f64)>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    stages.push((name.to_string(), start.elapsed().as_secs_f64()));
    out
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads and extracts one image, returning the descriptors and the time
/// spent.
pub fn extract_sample(record: &SampleRecord, dir: &Path, params: &DenseSiftParams) -> Result<(DescriptorSet, f64)> {
    let start = Instant::now();
    let img = load_grayscale(record.resolve(dir))?;
    let ds = extract(&img, params);
    Ok((ds, start.elapsed().as_secs_f64()))
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mut stages = Vec::new();
    let records = load_manifest(&cfg.manifest).map_err(|e| e.in_stage("split"))?;
    let split = timed(&mut stages, "split", || build_split(&records, &cfg.protocol, seed::derive(cfg.seed, "split")))
        .map_err(|e| e.in_stage("split"))?;

    let mut roles = vec![Role::Fit; split.train.len()];
    if cfg.fusion.mode == FusionMode::Validation {
        let labels: Vec<Label> = split.train.iter().map(|r| r.label).collect();
        let (_, held) =
            stratified_holdout(&labels, cfg.fusion.validation_fraction, seed::derive(cfg.seed, "validation"));
        for i in held {
            roles[i] = Role::Validation;
        }
        let classes = |role| {
            let labels: Vec<Label> = (0..labels.len()).filter(|&i| roles[i] == role).map(|i| labels[i]).collect();
            labels.contains(&Label::BonaFide) && labels.contains(&Label::Attack)
        };
        if !classes(Role::Fit) || !classes(Role::Validation) {
            return Err(PadError::Protocol("validation split leaves a class empty".into()).in_stage("split"));
        }
    }
    roles.extend(std::iter::repeat(Role::Test).take(split.test.len()));
    let samples: Vec<SampleRecord> = split.train.into_iter().chain(split.test).collect();

    let dir = manifest_dir(&cfg.manifest);
    let extracted = timed(&mut stages, "extract", || {
        par::map(&samples, |r| extract_sample(r, &dir, &cfg.densesift)).into_iter().collect::<Result<Vec<_>>>()
    })
    .map_err(|e| e.in_stage("extract"))?;
    let (descriptors, extract_seconds) = extracted.into_iter().unzip();
    Ok(Prepared { protocol: split.name, samples, roles, descriptors, extract_seconds, stage_seconds: stages })
}

/// Uniform seeded subsample of the descriptors of the given images.
pub fn vocabulary_sample(sets: &[&DescriptorSet], budget: usize, seed_value: u64) -> Result<Dataset> {
    let offsets: Vec<usize> = sets
        .iter()
        .scan(0, |acc, s| {
            let start = *acc;
            *acc += s.len();
            Some(start)
        })
        .collect();
    let total: usize = sets.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(PadError::InsufficientData("training images produced no descriptors".into()));
    }
    let mut picks: Vec<usize> = if total > budget {
        index::sample(&mut seed::rng(seed_value), total, budget).into_vec()
    } else {
        (0..total).collect()
    };
    picks.sort_unstable();
    let mut values = Vec::with_capacity(picks.len() * DESCRIPTOR_LEN);
    for p in picks {
        let img = offsets.partition_point(|&o| o <= p) - 1;
        let d = &sets[img].descriptors[p - offsets[img]];
        values.extend(d.values.iter().map(|&v| f64::from(v)));
    }
    Dataset::new(DESCRIPTOR_LEN, values)
}

pub struct Vocabulary {
    pub pca: PcaProjection,
    pub gmm: GmmModel,
    pub vlad: Codebook,
    pub bow: Codebook,
}

pub fn train_vocabulary(sample: &Dataset, cfg: &PipelineConfig) -> Result<Vocabulary> {
    let pca = train_pca(sample, cfg.pca_dim, cfg.pca_whiten).map_err(|e| e.in_stage("pca"))?;
    let projected: Vec<f64> = par::map_range(sample.len(), |i| pca.project(sample.row(i)).expect("matching dims"))
        .into_iter()
        .flatten()
        .collect();
    let projected = Dataset::new(cfg.pca_dim, projected)?;

    let mut gmm_opts = GmmOptions::new(cfg.k_fv, seed::derive(cfg.seed, "gmm"));
    gmm_opts.max_iters = cfg.gmm_iters;
    gmm_opts.tol = cfg.gmm_tol;
    gmm_opts.kmeans_iters = cfg.gmm_init_iters;
    let kmeans = |k, stage| {
        let mut o = KmeansOptions::new(k, seed::derive(cfg.seed, stage));
        o.max_iters = cfg.kmeans_iters;
        o
    };
    let (gmm, (vlad, bow)) = par::join(
        || train_gmm(&projected, &gmm_opts).map_err(|e| e.in_stage("gmm")),
        || {
            par::join(
                || train_kmeans(&projected, &kmeans(cfg.k_vlad, "kmeans-vlad")).map_err(|e| e.in_stage("kmeans-vlad")),
                || train_kmeans(sample, &kmeans(cfg.k_bow, "kmeans-bow")).map_err(|e| e.in_stage("kmeans-bow")),
            )
        },
    );
    Ok(Vocabulary { pca, gmm: gmm?.0, vlad: vlad?.0, bow: bow?.0 })
}

impl Vocabulary {
    pub fn encoders(&self, cfg: &PipelineConfig) -> Result<EncoderSet> {
        Ok(EncoderSet {
            fv: FisherEncoder::new(self.pca.clone(), self.gmm.clone(), cfg.fv_norm)?,
            vlad: VladEncoder::new(self.pca.clone(), self.vlad.clone())?,
            bow: BowEncoder::new(self.bow.clone(), cfg.pyramid.clone())?,
        })
    }
}

/// Per-image encodings in [`EncodingKind::ALL`] order, plus encode times.
pub struct Encoded {
    pub vectors: Vec<[EncodedVector; 3]>,
    pub seconds: Vec<[f64; 3]>,
}

pub fn encode_all(encoders: &EncoderSet, sets: &[DescriptorSet]) -> Encoded {
    let out = par::map(sets, |ds| {
        let mut secs = [0.0; 3];
        let vs = EncodingKind::ALL.map(|kind| {
            let start = Instant::now();
            let v = encoders.encode(kind, ds);
            secs[kind_slot(kind)] = start.elapsed().as_secs_f64();
            v
        });
        (vs, secs)
    });
    let (vectors, seconds) = out.into_iter().unzip();
    Encoded { vectors, seconds }
}

fn kind_slot(kind: EncodingKind) -> usize {
    EncodingKind::ALL.iter().position(|&k| k == kind).expect("listed kind")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub encoder: String,
    pub protocol: ProtocolName,
    pub config_hash: String,
    /// Digest of every model file the scores depend on.
    pub models: BTreeMap<String, String>,
    pub fusion_weights: Option<FusionWeights>,
    pub fusion_mode: Option<FusionMode>,
    pub test_images: usize,
    pub empty_images: usize,
    pub config: Value,
    #[serde(flatten)]
    pub metrics: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingSummary {
    pub count: usize,
    pub mean: f64,
    pub p95: f64,
}

impl TimingSummary {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self { count: 0, mean: 0.0, p95: 0.0 };
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = ((0.95 * s.len() as f64).ceil() as usize).clamp(1, s.len());
        Self { count: s.len(), mean: s.iter().sum::<f64>() / s.len() as f64, p95: s[rank - 1] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEntry {
    pub path: PathBuf,
    pub digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub models: BTreeMap<String, ModelEntry>,
    pub reports: Vec<PathBuf>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub per_image_seconds: BTreeMap<String, TimingSummary>,
}

/// Results of one protocol run held in memory.
pub struct RunOutcome {
    pub reports: BTreeMap<String, ReportFile>,
    pub weights: FusionWeights,
    pub manifest: RunManifest,
    pub vector_len: BTreeMap<EncodingKind, usize>,
}

const INCOMPLETE: &str = "run.incomplete";

pub fn run_protocol(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| PadError::io(out, e))?;
    let marker = out.join(INCOMPLETE);
    persist::write_text(&marker, "run started\n")?;
    let result = prepare(cfg).and_then(|prep| run_prepared(cfg, &prep, out));
    match &result {
        Ok(_) => {
            std::fs::remove_file(&marker).map_err(|e| PadError::io(&marker, e))?;
        }
        Err(e) => {
            persist::write_text(&marker, &format!("outputs in this directory are stale: {e}\n"))?;
        }
    }
    result
}

fn model_meta(cfg: &PipelineConfig, depends_on: Vec<String>, params: Value) -> ModelMeta {
    ModelMeta { config_hash: cfg.config_hash(), depends_on, params }
}

fn save(
    out: &Path,
    entries: &mut BTreeMap<String, ModelEntry>,
    name: &str,
    model: Model,
    meta: ModelMeta,
) -> Result<String> {
    let rel = PathBuf::from("models").join(format!("{name}.padm"));
    let digest = persist::save_model(out.join(&rel), &ModelFile::new(model, meta))?;
    entries.insert(name.to_string(), ModelEntry { path: rel, digest: digest.clone() });
    Ok(digest)
}

/// Vocabulary training through reporting on already extracted descriptors.
pub fn run_prepared(cfg: &PipelineConfig, prep: &Prepared, out: &Path) -> Result<RunOutcome> {
    let mut stages = prep.stage_seconds.clone();
    let hash = cfg.config_hash();
    let fit = prep.indices(Role::Fit);
    let val = prep.indices(Role::Validation);
    let test = prep.indices(Role::Test);
    if test.is_empty() {
        return Err(PadError::Protocol("no test samples".into()));
    }

    let vocab = timed(&mut stages, "vocabulary", || {
        let sets: Vec<&DescriptorSet> = fit.iter().map(|&i| &prep.descriptors[i]).collect();
        let sample = vocabulary_sample(&sets, cfg.vocab_sample, seed::derive(cfg.seed, "vocab-sample"))?;
        train_vocabulary(&sample, cfg)
    })
    .map_err(|e| e.in_stage("vocabulary"))?;

    let mut models = BTreeMap::new();
    let pca_digest = save(
        out,
        &mut models,
        "pca",
        Model::Pca(vocab.pca.clone()),
        model_meta(cfg, vec![], serde_json::json!({ "d": cfg.pca_dim, "whiten": cfg.pca_whiten })),
    )?;
    let gmm_digest = save(
        out,
        &mut models,
        "gmm",
        Model::Gmm(vocab.gmm.clone()),
        model_meta(cfg, vec![pca_digest.clone()], serde_json::json!({ "k": cfg.k_fv })),
    )?;
    let vlad_digest = save(
        out,
        &mut models,
        "kmeans_vlad",
        Model::Kmeans(vocab.vlad.clone()),
        model_meta(cfg, vec![pca_digest.clone()], serde_json::json!({ "k": cfg.k_vlad })),
    )?;
    let bow_digest = save(
        out,
        &mut models,
        "kmeans_bow",
        Model::Kmeans(vocab.bow.clone()),
        model_meta(cfg, vec![], serde_json::json!({ "k": cfg.k_bow })),
    )?;
    let vocab_deps: BTreeMap<EncodingKind, Vec<String>> = [
        (EncodingKind::Fv, vec![pca_digest.clone(), gmm_digest]),
        (EncodingKind::Vlad, vec![pca_digest, vlad_digest]),
        (EncodingKind::Bow, vec![bow_digest]),
    ]
    .into();

    let encoders = vocab.encoders(cfg).map_err(|e| e.in_stage("encode"))?;
    let encoded = timed(&mut stages, "encode", || Ok(encode_all(&encoders, &prep.descriptors)))?;

    let scorers = timed(&mut stages, "svm", || {
        let labels: Vec<Label> = fit.iter().map(|&i| prep.samples[i].label).collect();
        par::map(&EncodingKind::ALL, |&kind| {
            let rows: Vec<&[f32]> = fit.iter().map(|&i| encoded.vectors[i][kind_slot(kind)].values.as_slice()).collect();
            train_dual(&rows, &labels, &cfg.svm, seed::derive(cfg.seed, &format!("svm-{kind}")))
        })
        .into_iter()
        .collect::<Result<Vec<DualScorer>>>()
    })
    .map_err(|e| e.in_stage("svm"))?;

    let mut svm_digests: BTreeMap<EncodingKind, Vec<String>> = BTreeMap::new();
    for (kind, scorer) in EncodingKind::ALL.iter().zip(&scorers) {
        let deps = vocab_deps[kind].clone();
        let params = serde_json::json!({
            "lambda": cfg.svm.lambda,
            "epochs": cfg.svm.epochs,
            "encoder": kind,
        });
        let mut digests = deps.clone();
        for (role, svm) in [("bf", &scorer.svm_bf), ("pa", &scorer.svm_pa)] {
            let d = save(
                out,
                &mut models,
                &format!("svm_{kind}_{role}"),
                Model::Svm(svm.clone()),
                model_meta(cfg, deps.clone(), params.clone()),
            )?;
            digests.push(d);
        }
        svm_digests.insert(*kind, digests);
    }

    // Per image, scores in EncodingKind::ALL order.
    let scores: Vec<[PadScore; 3]> = timed(&mut stages, "score", || {
        par::map_range(prep.samples.len(), |i| {
            let mut s = Vec::with_capacity(3);
            for (slot, kind) in EncodingKind::ALL.iter().enumerate() {
                s.push(scorers[slot].score(&encoded.vectors[i][slot].values, ScoreSource::from(*kind))?);
            }
            Ok([s[0], s[1], s[2]])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
    })
    .map_err(|e| e.in_stage("score"))?;

    let samples_of = |rows: &[usize], slot: usize| -> Vec<ScoredSample> {
        rows.iter()
            .map(|&i| ScoredSample {
                id: prep.samples[i].path.clone(),
                label: prep.samples[i].label,
                material: prep.samples[i].material.clone(),
                score: scores[i][slot].value,
            })
            .collect()
    };
    let weights = timed(&mut stages, "fusion", || match cfg.fusion.mode {
        FusionMode::Fixed { alpha, beta } => FusionWeights::new(alpha, beta),
        FusionMode::Validation => {
            grid_search_weights(&samples_of(&val, 0), &samples_of(&val, 1), &samples_of(&val, 2), cfg.fusion.step)
                .map(|r| r.0)
        }
        FusionMode::Oracle => {
            log::warn!("fusion weights tuned on the test scores: results are an optimistic upper bound");
            grid_search_weights(&samples_of(&test, 0), &samples_of(&test, 1), &samples_of(&test, 2), cfg.fusion.step)
                .map(|r| r.0)
        }
    })
    .map_err(|e| e.in_stage("fusion"))?;

    let fused: Vec<PadScore> = scores.iter().map(|s| fuse(&s[0], &s[1], &s[2], &weights)).collect();

    let empty_images = test.iter().filter(|&&i| prep.descriptors[i].is_empty()).count();
    let mut reports = BTreeMap::new();
    let mut report_paths = Vec::new();
    let mut curves = Vec::new();
    let names = ["fv", "vlad", "bow", "fpad"];
    for (slot, name) in names.iter().enumerate() {
        let score_of = |i: usize| if slot < 3 { scores[i][slot] } else { fused[i] };
        let rows: Vec<ScoreRow> = test
            .iter()
            .map(|&i| {
                let s = score_of(i);
                ScoreRow {
                    id: prep.samples[i].path.clone(),
                    label: prep.samples[i].label,
                    material: prep.samples[i].material.clone(),
                    score: s.value,
                    s_bf: s.s_bf,
                    s_pa: s.s_pa,
                }
            })
            .collect();
        persist::write_scores(out.join("scores").join(format!("{name}.csv")), &rows)?;
        let samples: Vec<ScoredSample> = rows
            .iter()
            .map(|r| ScoredSample { id: r.id.clone(), label: r.label, material: r.material.clone(), score: r.score })
            .collect();
        let metrics = compute_report(&samples, cfg.acer_threshold).map_err(|e| e.in_stage("evaluate"))?;
        let models_used: BTreeMap<String, String> = if slot < 3 {
            let kind = EncodingKind::ALL[slot];
            svm_digests[&kind].iter().enumerate().map(|(j, d)| (format!("{kind}_{j}"), d.clone())).collect()
        } else {
            models.iter().map(|(k, v)| (k.clone(), v.digest.clone())).collect()
        };
        let report = ReportFile {
            encoder: name.to_string(),
            protocol: prep.protocol,
            config_hash: hash.clone(),
            models: models_used,
            fusion_weights: (slot == 3).then_some(weights),
            fusion_mode: (slot == 3).then(|| cfg.fusion.mode.clone()),
            test_images: test.len(),
            empty_images,
            config: cfg.canonical(),
            metrics,
        };
        let rel = PathBuf::from("reports").join(format!("{name}.json"));
        persist::write_json(out.join(&rel), &report)?;
        persist::write_text(out.join("reports").join(format!("{name}_det.csv")), &det_csv(&report.metrics.det))?;
        report_paths.push(rel);
        reports.insert(name.to_string(), report);
    }
    for name in names {
        curves.push((name, reports[name].metrics.det.as_slice()));
    }
    persist::write_text(out.join("reports").join("det.svg"), &det_svg(&curves))?;

    let mut per_image = BTreeMap::new();
    per_image.insert("extract".to_string(), TimingSummary::of(&prep.extract_seconds));
    for kind in EncodingKind::ALL {
        let secs: Vec<f64> = encoded.seconds.iter().map(|s| s[kind_slot(kind)]).collect();
        per_image.insert(format!("encode_{kind}"), TimingSummary::of(&secs));
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: hash,
        seed: cfg.seed,
        models,
        reports: report_paths,
        stage_seconds: stages.into_iter().collect(),
        per_image_seconds: per_image,
    };
    persist::write_json(out.join("run_manifest.json"), &manifest)?;
    let vector_len = EncodingKind::ALL
        .iter()
        .map(|&k| (k, encoded.vectors.first().map_or(0, |v| v[kind_slot(k)].len())))
        .collect();
    Ok(RunOutcome { reports, weights, manifest, vector_len })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub encoder: String,
    pub d_eer: f64,
    pub acer: f64,
    pub vector_len: usize,
    pub encode_seconds_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
    /// Vocabulary size with the lowest D-EER per encoder (smallest K on ties).
    pub best_k: BTreeMap<String, usize>,
}

/// Runs the protocol once per vocabulary size, reusing one extraction.
/// Each run writes its outputs under `output_dir/k{K}`.
pub fn sweep_k(cfg: &PipelineConfig, ks: &[usize]) -> Result<SweepReport> {
    if ks.is_empty() {
        return Err(PadError::InvalidInput("no vocabulary sizes to sweep".into()));
    }
    let prep = prepare(cfg)?;
    let mut rows = Vec::new();
    for &k in ks {
        let mut c = cfg.clone();
        c.k_fv = k;
        c.k_vlad = k;
        c.k_bow = k;
        c.validate()?;
        c.output_dir = cfg.output_dir.join(format!("k{k}"));
        let outcome = run_prepared(&c, &prep, &c.output_dir)?;
        for (name, report) in &outcome.reports {
            let kind: Option<EncodingKind> = name.parse().ok();
            let timing = kind
                .map(|k| format!("encode_{k}"))
                .and_then(|key| outcome.manifest.per_image_seconds.get(&key))
                .map_or(0.0, |t| t.mean);
            rows.push(SweepRow {
                k,
                encoder: name.clone(),
                d_eer: report.metrics.d_eer,
                acer: report.metrics.acer,
                vector_len: kind.map_or(0, |k| outcome.vector_len[&k]),
                encode_seconds_mean: timing,
            });
        }
    }
    let mut best_k: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in &rows {
        let e = best_k.entry(r.encoder.clone()).or_insert((r.k, r.d_eer));
        if r.d_eer < e.1 || (r.d_eer == e.1 && r.k < e.0) {
            *e = (r.k, r.d_eer);
        }
    }
    let report = SweepReport {
        config_hash: cfg.config_hash(),
        rows,
        best_k: best_k.into_iter().map(|(k, v)| (k, v.0)).collect(),
    };
    persist::write_json(cfg.output_dir.join("sweep.json"), &report)?;
    let mut csv = String::from("k,encoder,d_eer,acer,vector_len,encode_seconds_mean\n");
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.k, r.encoder, r.d_eer, r.acer, r.vector_len, r.encode_seconds_mean
        ));
    }
    persist::write_text(cfg.output_dir.join("sweep.csv"), &csv)?;
    Ok(report)
}
