use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fpad::classify::{train_dual, DualScorer, ScoreSource, SvmParams};
use fpad::corpus::{self, CorpusSpec};
use fpad::densesift::{DenseSiftParams, DescriptorSet};
use fpad::encode::{BowEncoder, EncodingKind, FisherEncoder, FvNorm, PyramidSpec, VladEncoder};
use fpad::error::ErrorClass;
use fpad::evalfuse::{compute_report, det_csv, det_svg, grid_search_weights, FusionWeights, ScoredSample};
use fpad::ingest::{load_manifest, Label, ProtocolSpec, SampleRecord};
use fpad::persist::{self, Model, ModelFile, ModelMeta, ScoreRow, VectorBatch};
use fpad::pipeline::{self, FusionMode, PipelineConfig};
use fpad::vocab::{train_gmm, train_kmeans, train_pca, Dataset, GmmOptions, KmeansOptions};
use fpad::{par, seed, PadError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Bad flags or configuration, as opposed to bad data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

#[derive(Parser)]
#[command(name = "fpad", version, about = "Fingerprint presentation attack detection")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PAD_THREADS")]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with a manifest.
    GenCorpus(GenCorpusArgs),
    /// Extract dense descriptors for every manifest row.
    Extract(ExtractArgs),
    /// Train a k-means codebook, PCA projection or GMM.
    TrainVocab(TrainVocabArgs),
    /// Encode descriptor files into fixed-length vectors.
    Encode(EncodeArgs),
    /// Train the bona fide and attack SVMs.
    TrainSvm(TrainSvmArgs),
    /// Score vectors with a pair of SVMs.
    Score(ScoreArgs),
    /// Combine three score tables.
    Fuse(FuseArgs),
    /// Compute error rates and DET curves for a score table.
    Evaluate(EvaluateArgs),
    /// Run a complete protocol.
    RunProtocol(RunArgs),
    /// Run the protocol for several vocabulary sizes.
    SweepK(SweepArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    bona_fide: usize,
    #[arg(long, default_value_t = 100)]
    attacks: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SiftArgs {
    #[arg(long)]
    spacing: Option<usize>,
    /// Comma-separated bin sizes.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    contrast_threshold: Option<f32>,
}

impl SiftArgs {
    fn resolve(&self, base: DenseSiftParams) -> fpad::Result<DenseSiftParams> {
        DenseSiftParams::new(
            self.spacing.unwrap_or(base.spacing()),
            self.scales.clone().unwrap_or_else(|| base.scales().to_vec()),
            self.contrast_threshold.unwrap_or(base.contrast_threshold()),
            base.clip(),
        )
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory receiving one descriptor file per manifest row.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    sift: SiftArgs,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum VocabModel {
    Kmeans,
    Pca,
    Gmm,
}

#[derive(Args)]
struct TrainVocabArgs {
    /// Directory of descriptor files.
    #[arg(long)]
    descriptors: PathBuf,
    #[arg(long, value_enum)]
    model: VocabModel,
    #[arg(long)]
    out: PathBuf,
    /// Number of clusters or components.
    #[arg(long, default_value_t = 1024)]
    k: usize,
    /// Output dimensionality of a PCA projection.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long)]
    whiten: bool,
    /// Train in the space of this PCA projection.
    #[arg(long)]
    pca: Option<PathBuf>,
    #[arg(long, default_value_t = 200_000)]
    sample: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    descriptors: PathBuf,
    #[arg(long)]
    kind: EncodingKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pca: Option<PathBuf>,
    #[arg(long)]
    gmm: Option<PathBuf>,
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pyramid: Vec<usize>,
    #[arg(long, default_value = "improved")]
    fv_norm: FvNorm,
}

#[derive(Args)]
struct TrainSvmArgs {
    #[arg(long)]
    vectors: PathBuf,
    /// Manifest giving one label per vector row.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory receiving svm_bf.padm and svm_pa.padm.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    svm_bf: PathBuf,
    #[arg(long)]
    svm_pa: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    fv: PathBuf,
    #[arg(long)]
    vlad: PathBuf,
    #[arg(long)]
    bow: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, requires = "beta", conflicts_with = "grid_search")]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    beta: Option<f64>,
    /// Pick the weights minimising D-EER on these same scores (optimistic).
    #[arg(long)]
    grid_search: bool,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long)]
    det_csv: Option<PathBuf>,
    #[arg(long)]
    det_svg: Option<PathBuf>,
    /// Also print the report as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Vocabulary size for all three encoders.
    #[arg(long)]
    k: Option<usize>,
    /// Protocol as JSON, for example '{"kind":"known","test_fraction":0.5}'.
    #[arg(long)]
    protocol: Option<String>,
    /// Tune fusion weights on the test scores (optimistic upper bound).
    #[arg(long)]
    oracle_weights: bool,
    /// Print all reports as JSON on stdout.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    sift: SiftArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
    ks: Vec<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.is::<Usage>() {
                EXIT_USAGE
            } else {
                match e.downcast_ref::<PadError>().map(PadError::class) {
                    Some(ErrorClass::Numerical) => EXIT_NUMERICAL,
                    _ => EXIT_DATA,
                }
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config_threads = match &cli.command {
        Command::RunProtocol(a) | Command::SweepK(SweepArgs { run: a, .. }) => match &a.config {
            Some(p) => PipelineConfig::load(p).map_err(usage)?.threads,
            None => None,
        },
        _ => None,
    };
    if let Some(n) = cli.threads.or(config_threads) {
        if n == 0 {
            return Err(usage("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("building the thread pool")?;
    }
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Extract(a) => extract(a),
        Command::TrainVocab(a) => train_vocab(a),
        Command::Encode(a) => encode(a),
        Command::TrainSvm(a) => train_svm(a),
        Command::Score(a) => score(a),
        Command::Fuse(a) => fuse(a),
        Command::Evaluate(a) => evaluate(a),
        Command::RunProtocol(a) => run_protocol(a),
        Command::SweepK(a) => sweep_k(a),
    }
}

fn gen_corpus(a: GenCorpusArgs) -> anyhow::Result<()> {
    let spec = CorpusSpec { bona_fide: a.bona_fide, attacks: a.attacks, size: a.size, seed: a.seed, ..Default::default() };
    let records = corpus::generate(&a.out, &spec)?;
    println!("wrote {} images and {}", records.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn descriptor_file(dir: &Path, row: usize) -> PathBuf {
    dir.join(format!("{row:06}.pads"))
}

fn extract(a: ExtractArgs) -> anyhow::Result<()> {
    let base = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(usage)?.densesift,
        None => DenseSiftParams::default(),
    };
    let params = a.sift.resolve(base).map_err(usage)?;
    let records = load_manifest(&a.manifest)?;
    if records.is_empty() {
        log::warn!("{} lists no images; nothing to extract", a.manifest.display());
    }
    let dir = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    std::fs::create_dir_all(&a.out).map_err(|e| PadError::io(&a.out, e))?;
    let counts = par::map_range(records.len(), |i| -> fpad::Result<usize> {
        let (ds, _) = pipeline::extract_sample(&records[i], &dir, &params)?;
        persist::save_descriptors(descriptor_file(&a.out, i), &ds)?;
        Ok(ds.len())
    })
    .into_iter()
    .collect::<fpad::Result<Vec<_>>>()?;
    let empty = counts.iter().filter(|&&c| c == 0).count();
    println!("extracted {} descriptors from {} images ({empty} empty)", counts.iter().sum::<usize>(), counts.len());
    Ok(())
}

fn load_descriptor_dir(dir: &Path) -> anyhow::Result<Vec<DescriptorSet>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PadError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pads"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(PadError::InsufficientData(format!("no descriptor files in {}", dir.display())));
    }
    Ok(par::map(&files, |p| persist::load_descriptors(p)).into_iter().collect::<fpad::Result<Vec<_>>>()?)
}

fn load_kind(path: &Path, want: &str) -> anyhow::Result<ModelFile> {
    let m = persist::load_model(path)?;
    let got = format!("{:?}", m.model.kind()).to_ascii_lowercase();
    if got != want {
        bail!(PadError::format(path, format!("expected a {want} model, found {got}")));
    }
    Ok(m)
}

fn load_pca(path: &Path) -> anyhow::Result<(fpad::vocab::PcaProjection, String)> {
    let m = load_kind(path, "pca")?;
    let digest = m.digest();
    match m.model {
        Model::Pca(p) => Ok((p, digest)),
        _ => unreachable!(),
    }
}

fn train_vocab(a: TrainVocabArgs) -> anyhow::Result<()> {
    let sets = load_descriptor_dir(&a.descriptors)?;
    let refs: Vec<&DescriptorSet> = sets.iter().collect();
    let sample = pipeline::vocabulary_sample(&refs, a.sample, seed::derive(a.seed, "vocab-sample"))?;
    let (data, depends_on) = match &a.pca {
        Some(p) => {
            let (pca, digest) = load_pca(p)?;
            let rows = par::map_range(sample.len(), |i| pca.project(sample.row(i)))
                .into_iter()
                .collect::<fpad::Result<Vec<_>>>()?;
            (Dataset::new(pca.output_dim(), rows.concat())?, vec![digest])
        }
        None => (sample, vec![]),
    };
    let (model, params) = match a.model {
        VocabModel::Kmeans => {
            let mut o = KmeansOptions::new(a.k, seed::derive(a.seed, "kmeans"));
            o.max_iters = a.max_iters;
            let (cb, trace) = train_kmeans(&data, &o)?;
            log::info!("k-means stopped after {} iterations (converged: {})", trace.iterations, trace.converged);
            (Model::Kmeans(cb), serde_json::json!({ "k": a.k }))
        }
        VocabModel::Pca => {
            (Model::Pca(train_pca(&data, a.dim, a.whiten)?), serde_json::json!({ "d": a.dim, "whiten": a.whiten }))
        }
        VocabModel::Gmm => {
            let mut o = GmmOptions::new(a.k, seed::derive(a.seed, "gmm"));
            o.max_iters = a.max_iters;
            let (g, trace) = train_gmm(&data, &o)?;
            log::info!("EM ran {} iterations (converged: {})", trace.log_likelihoods.len(), trace.converged);
            (Model::Gmm(g), serde_json::json!({ "k": a.k }))
        }
    };
    let meta = ModelMeta { config_hash: String::new(), depends_on, params };
    let digest = persist::save_model(&a.out, &ModelFile::new(model, meta))?;
    println!("{}  {}", digest, a.out.display());
    Ok(())
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str, kind: EncodingKind) -> anyhow::Result<&'a Path> {
    p.as_deref().ok_or_else(|| usage(format!("--{flag} is required for {kind} encoding")))
}

fn encode(a: EncodeArgs) -> anyhow::Result<()> {
    let sets = load_descriptor_dir(&a.descriptors)?;
    let encode_with = |f: &(dyn Fn(&DescriptorSet) -> Vec<f32> + Sync)| par::map(&sets, |ds| f(ds));
    let rows = match a.kind {
        EncodingKind::Fv => {
            let (pca, _) = load_pca(require(&a.pca, "pca", a.kind)?)?;
            let Model::Gmm(gmm) = load_kind(require(&a.gmm, "gmm", a.kind)?, "gmm")?.model else { unreachable!() };
            let enc = FisherEncoder::new(pca, gmm, a.fv_norm)?;
            encode_with(&|ds| enc.encode(ds).values)
        }
        EncodingKind::Vlad => {
            let (pca, _) = load_pca(require(&a.pca, "pca", a.kind)?)?;
            let Model::Kmeans(cb) = load_kind(require(&a.codebook, "codebook", a.kind)?, "kmeans")?.model else {
                unreachable!()
            };
            let enc = VladEncoder::new(pca, cb)?;
            encode_with(&|ds| enc.encode(ds).values)
        }
        EncodingKind::Bow => {
            let Model::Kmeans(cb) = load_kind(require(&a.codebook, "codebook", a.kind)?, "kmeans")?.model else {
                unreachable!()
            };
            let enc = BowEncoder::new(cb, PyramidSpec::new(a.pyramid.clone())?)?;
            encode_with(&|ds| enc.encode(ds).values)
        }
    };
    let dim = rows.first().map_or(0, Vec::len);
    persist::save_vectors(&a.out, &VectorBatch { kind: a.kind, dim, rows })?;
    println!("encoded {} images into {dim}-dimensional {} vectors", sets.len(), a.kind);
    Ok(())
}

fn labelled(vectors: &Path, manifest: &Path) -> anyhow::Result<(VectorBatch, Vec<SampleRecord>)> {
    let batch = persist::load_vectors(vectors)?;
    let records = load_manifest(manifest)?;
    if records.len() != batch.rows.len() {
        bail!(PadError::InvalidInput(format!(
            "{} has {} rows but {} lists {} samples",
            vectors.display(),
            batch.rows.len(),
            manifest.display(),
            records.len()
        )));
    }
    Ok((batch, records))
}

fn train_svm(a: TrainSvmArgs) -> anyhow::Result<()> {
    let (batch, records) = labelled(&a.vectors, &a.manifest)?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let params = SvmParams { lambda: a.lambda, epochs: a.epochs };
    let ds = train_dual(&batch.rows, &labels, &params, a.seed)?;
    let meta = ModelMeta {
        config_hash: String::new(),
        depends_on: vec![persist::digest(&persist::vectors_to_bytes(&batch))],
        params: serde_json::json!({ "lambda": a.lambda, "epochs": a.epochs, "encoder": batch.kind }),
    };
    for (name, svm) in [("svm_bf", ds.svm_bf), ("svm_pa", ds.svm_pa)] {
        let path = a.out.join(format!("{name}.padm"));
        let digest = persist::save_model(&path, &ModelFile::new(Model::Svm(svm), meta.clone()))?;
        println!("{digest}  {}", path.display());
    }
    Ok(())
}

fn load_svm(path: &Path) -> anyhow::Result<(fpad::classify::LinearSvm, ModelMeta)> {
    let m = load_kind(path, "svm")?;
    match m.model {
        Model::Svm(s) => Ok((s, m.meta)),
        _ => unreachable!(),
    }
}

fn score(a: ScoreArgs) -> anyhow::Result<()> {
    let (batch, records) = labelled(&a.vectors, &a.manifest)?;
    let (bf, bf_meta) = load_svm(&a.svm_bf)?;
    let (pa, pa_meta) = load_svm(&a.svm_pa)?;
    if bf_meta.config_hash != pa_meta.config_hash || bf_meta.depends_on != pa_meta.depends_on {
        bail!(PadError::Stale(format!(
            "{} and {} were trained from different inputs",
            a.svm_bf.display(),
            a.svm_pa.display()
        )));
    }
    let scorer = DualScorer::new(bf, pa)?;
    let source = ScoreSource::from(batch.kind);
    let rows = records
        .iter()
        .zip(&batch.rows)
        .map(|(r, x)| {
            let s = scorer.score(x, source)?;
            Ok(ScoreRow {
                id: r.path.clone(),
                label: r.label,
                material: r.material.clone(),
                score: s.value,
                s_bf: s.s_bf,
                s_pa: s.s_pa,
            })
        })
        .collect::<fpad::Result<Vec<_>>>()?;
    persist::write_scores(&a.out, &rows)?;
    println!("scored {} samples", rows.len());
    Ok(())
}

fn to_samples(rows: &[ScoreRow]) -> Vec<ScoredSample> {
    rows.iter()
        .map(|r| ScoredSample { id: r.id.clone(), label: r.label, material: r.material.clone(), score: r.score })
        .collect()
}

fn fuse(a: FuseArgs) -> anyhow::Result<()> {
    let fixed = match (a.alpha, a.beta) {
        (Some(alpha), Some(beta)) => Some(FusionWeights::new(alpha, beta).map_err(usage)?),
        _ if a.grid_search => None,
        _ => return Err(usage("give --alpha and --beta, or --grid-search")),
    };
    let fv = persist::read_scores(&a.fv)?;
    let vlad = persist::read_scores(&a.vlad)?;
    let bow = persist::read_scores(&a.bow)?;
    let weights = match fixed {
        Some(w) => w,
        None => {
            log::warn!("fusion weights tuned on the scores being fused: results are optimistic");
            let (w, deer) = grid_search_weights(&to_samples(&fv), &to_samples(&vlad), &to_samples(&bow), a.step)?;
            println!("grid search D-EER {:.4}%", 100.0 * deer);
            w
        }
    };
    // Row order and labels must agree across the three tables.
    if fv.len() != vlad.len() || fv.len() != bow.len() {
        bail!(PadError::InvalidInput("score tables have different lengths".into()));
    }
    let mut rows = Vec::with_capacity(fv.len());
    for ((f, v), b) in fv.iter().zip(&vlad).zip(&bow) {
        if f.id != v.id || f.id != b.id || f.label != v.label || f.label != b.label {
            bail!(PadError::InvalidInput(format!("score tables disagree at `{}`", f.id)));
        }
        let s = weights.apply(f.score, v.score, b.score);
        rows.push(ScoreRow { score: s, s_bf: s, s_pa: -s, ..f.clone() });
    }
    persist::write_scores(&a.out, &rows)?;
    println!("alpha {} beta {} bow {}", weights.alpha, weights.beta, weights.bow());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let rows = persist::read_scores(&a.scores)?;
    let report = compute_report(&to_samples(&rows), a.threshold)?;
    persist::write_json(&a.out, &report)?;
    if let Some(p) = &a.det_csv {
        persist::write_text(p, &det_csv(&report.det))?;
    }
    if let Some(p) = &a.det_svg {
        let name = a.scores.file_stem().map_or("scores".into(), |s| s.to_string_lossy().into_owned());
        persist::write_text(p, &det_svg(&[(name.as_str(), report.det.as_slice())]))?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "D-EER {:.3}%  APCER {:.3}%  BPCER {:.3}%  ACER {:.3}%  BPCER20 {:.3}%",
            100.0 * report.d_eer,
            100.0 * report.apcer,
            100.0 * report.bpcer,
            100.0 * report.acer,
            100.0 * report.bpcer20
        );
    }
    Ok(())
}

fn pipeline_config(a: &RunArgs) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = &a.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.k {
        cfg.k_fv = k;
        cfg.k_vlad = k;
        cfg.k_bow = k;
    }
    if let Some(p) = &a.protocol {
        cfg.protocol = serde_json::from_str::<ProtocolSpec>(p)
            .map_err(|e| usage(format!("--protocol: {e}")))?;
    }
    if a.oracle_weights {
        cfg.fusion.mode = FusionMode::Oracle;
    }
    cfg.densesift = a.sift.resolve(cfg.densesift.clone()).map_err(usage)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn run_protocol(a: RunArgs) -> anyhow::Result<()> {
    let cfg = pipeline_config(&a)?;
    let outcome = pipeline::run_protocol(&cfg)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&outcome.reports)?);
        return Ok(());
    }
    println!("{:<6} {:>9} {:>9} {:>9} {:>9} {:>10}", "", "D-EER%", "APCER%", "BPCER%", "ACER%", "BPCER20%");
    for (name, r) in &outcome.reports {
        let m = &r.metrics;
        println!(
            "{:<6} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>10.3}",
            name,
            100.0 * m.d_eer,
            100.0 * m.apcer,
            100.0 * m.bpcer,
            100.0 * m.acer,
            100.0 * m.bpcer20
        );
    }
    let w = outcome.weights;
    println!("fusion weights: fv {} vlad {} bow {}", w.alpha, w.beta, w.bow());
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn sweep_k(a: SweepArgs) -> anyhow::Result<()> {
    let cfg = pipeline_config(&a.run)?;
    let report = pipeline::sweep_k(&cfg, &a.ks)?;
    let mut table: BTreeMap<(usize, String), (f64, usize, f64)> = BTreeMap::new();
    for r in &report.rows {
        table.insert((r.k, r.encoder.clone()), (r.d_eer, r.vector_len, r.encode_seconds_mean));
    }
    println!("{:>6} {:<6} {:>9} {:>10} {:>12}", "K", "enc", "D-EER%", "length", "encode ms");
    for ((k, enc), (deer, len, secs)) in &table {
        println!("{k:>6} {enc:<6} {:>9.3} {len:>10} {:>12.3}", 100.0 * deer, 1000.0 * secs);
    }
    for (enc, k) in &report.best_k {
        println!("best K for {enc}: {k}");
    }
    Ok(())
}
