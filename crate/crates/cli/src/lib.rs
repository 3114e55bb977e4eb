//! `binvis` command line: convert binaries to image stores, split, train,
//! evaluate, explain and ensemble.
//!
//! Every command writes its artifact plus `<artifact>.config.json` with the
//! fully resolved arguments. Nothing written embeds wall-clock time, so
//! identical inputs and seed give byte-identical outputs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3
//! numerical divergence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use binvis_core::baselines::ClassifierKind;
use binvis_core::corpus::{self, Corpus, Manifest, SplitAssignment, Subset};
use binvis_core::ensemble::{optimize_alpha, Metric};
use binvis_core::evaluate::{evaluate_probs, read_probs, report_write, write_probs, write_roc_csv, ReportFormat};
use binvis_core::imaging::{ImageStore, RenderOptions, DEFAULT_SIDE};
use binvis_core::interpret::{explain, write_overlay, ExplainParams, Fill, SlicParams};
use binvis_core::pipeline::{self, FeatureData, TrainSpec, TrainedModel};
use binvis_core::synth::{self, SynthParams};
use binvis_core::training::write_history;
use binvis_core::transfer::EmbeddingSet;
use binvis_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "binvis", version, about = "Classify binaries through their grayscale image renderings")]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Render every binary listed in a manifest into an image store.
    Convert(ConvertArgs),
    /// Stratified train/validation/test split of a store's corpus.
    Split(SplitArgs),
    /// Fit a classifier on the training subset.
    Train(TrainArgs),
    /// Score a model on one subset; writes a report and probabilities.
    Eval(EvalArgs),
    /// Super-pixel explanation of one image's top predictions.
    Explain(ExplainArgs),
    /// Pick the convex blend of two models' probabilities.
    Ensemble(EnsembleArgs),
    /// Write the synthetic four-family corpus (and optional embeddings).
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    /// CSV with header `path,label`; relative paths are taken from its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_store: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIDE)]
    pub size: usize,
    /// Skip files smaller than this many kilobytes (1 kb = 1024 bytes).
    #[arg(long)]
    pub min_kb: Option<f64>,
    /// Also write the 28x28 store used by the CNN.
    #[arg(long)]
    pub small_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    pub ratios: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArg {
    Knn,
    Gnb,
    Lda,
    Softmax,
    Svm,
    Mlp,
    Cnn,
}

impl From<ModelArg> for ClassifierKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Knn => ClassifierKind::Knn,
            ModelArg::Gnb => ClassifierKind::Gnb,
            ModelArg::Lda => ClassifierKind::Lda,
            ModelArg::Softmax => ClassifierKind::Softmax,
            ModelArg::Svm => ClassifierKind::LinearSvm,
            ModelArg::Mlp => ClassifierKind::Mlp,
            ModelArg::Cnn => ClassifierKind::SmallCnn,
        }
    }
}

/// Either an image store (labels from its corpus sidecar) or an
/// embedding file plus a corpus.
#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
    pub store: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub embeddings: Option<PathBuf>,
    /// Corpus sidecar (`<store>.corpus.json`); defaults to the store's.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub split: PathBuf,
    /// Project onto the first K principal components before fitting.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Neighbors for knn.
    #[arg(long)]
    pub k: Option<usize>,
    /// Learning rate for softmax, mlp and cnn.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetArg {
    Train,
    Val,
    Test,
}

impl From<SubsetArg> for Subset {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::Train => Subset::Train,
            SubsetArg::Val => Subset::Val,
            SubsetArg::Test => Subset::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long = "subset", value_enum, default_value = "test")]
    pub subset: SubsetArg,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    /// Probability output; defaults to the report path with extension `mprob`.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// ROC threshold sweep (two-class tasks only).
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// Positive class index for F1 and ROC on two-class tasks.
    #[arg(long)]
    pub positive: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FillArg {
    Mean,
    Zero,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Store holding the image at the model's resolution.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub image_id: String,
    #[arg(long, default_value_t = 200)]
    pub superpixels: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long, value_enum, default_value = "mean")]
    pub fill: FillArg,
    /// Explanation JSON; one `<stem>.class<k>.ppm` overlay is written per class.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EnsembleArgs {
    /// First and second model probabilities (`.mprob`).
    #[arg(long, num_args = 2, required = true)]
    pub probs: Vec<PathBuf>,
    /// Labels CSV written by `eval` next to its probabilities.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "accuracy", value_parser = parse_metric)]
    #[serde(serialize_with = "ser_display")]
    pub metric: Metric,
    #[arg(long, default_value_t = 0.01)]
    pub grid: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Alpha curve CSV; defaults to `<out stem>.curve.csv`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub per_family: usize,
    /// Also write noisy class-mean embeddings to this `.memb` file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 0.2)]
    pub embed_sigma: f64,
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    s.parse::<Metric>().map_err(|e| e.to_string())
}

fn ser_display<S: serde::Serializer>(m: &Metric, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(m.name())
}

/// A failed command, classified for the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Diverged(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged(_) => Failure::Diverged(e.to_string()),
            Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let body = || match &cli.command {
        Command::Convert(a) => convert(cli, a),
        Command::Split(a) => split(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Explain(a) => explain_cmd(cli, a),
        Command::Ensemble(a) => ensemble(cli, a),
        Command::Synth(a) => synth_cmd(cli, a),
    };
    match cli.threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Usage(e.to_string()))?
            .install(body),
        None => body(),
    }
}

fn out_path(cli: &Cli, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        cli.out_dir.join(p)
    }
}

fn ensure_parent(p: &Path) -> CliResult<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| io_failure(d, e)),
        _ => Ok(()),
    }
}

/// `<path>.<suffix>`, keeping the original extension.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write_config(cli: &Cli, artifact: &Path) -> CliResult<()> {
    #[derive(Serialize)]
    struct Resolved<'a> {
        tool: &'static str,
        version: &'static str,
        #[serde(flatten)]
        cli: &'a Cli,
    }
    let path = sibling(artifact, "config.json");
    let mut json = serde_json::to_vec_pretty(&Resolved {
        tool: "binvis",
        version: env!("CARGO_PKG_VERSION"),
        cli,
    })
    .map_err(|e| Failure::Data(e.to_string()))?;
    json.push(b'\n');
    std::fs::write(&path, json).map_err(|e| io_failure(&path, e))
}

fn convert(cli: &Cli, a: &ConvertArgs) -> CliResult<()> {
    let mut manifest = Manifest::read(&a.manifest)?;
    let listed = manifest.entries.len();
    if let Some(kb) = a.min_kb {
        manifest = corpus::filter_min_size(&manifest, kb);
    }
    let dropped = listed - manifest.entries.len();
    let ingested = corpus::ingest(
        &manifest,
        RenderOptions {
            side: a.size,
            small: a.small_out.is_some(),
        },
    )?;
    let store_path = out_path(cli, &a.out_store);
    ensure_parent(&store_path)?;
    ingested.store.write(&store_path)?;
    ingested.corpus.write(&Corpus::sidecar_path(&store_path))?;
    if let (Some(p), Some(small)) = (&a.small_out, &ingested.small_store) {
        let p = out_path(cli, p);
        ensure_parent(&p)?;
        small.write(&p)?;
        ingested.corpus.write(&Corpus::sidecar_path(&p))?;
    }
    write_config(cli, &store_path)?;
    println!(
        "converted {} of {listed} files into {} ({dropped} below the size floor, {} unreadable)",
        ingested.corpus.len(),
        store_path.display(),
        ingested.skipped.len()
    );
    for s in &ingested.skipped {
        println!("  skipped {}: {}", s.path, s.reason);
    }
    Ok(())
}

fn split(cli: &Cli, a: &SplitArgs) -> CliResult<()> {
    let ratios: [f64; 3] = a
        .ratios
        .clone()
        .try_into()
        .map_err(|_| Failure::Usage("--ratios needs three values".into()))?;
    let corpus = Corpus::read(&Corpus::sidecar_path(&a.store))?;
    let sp = corpus::split(&corpus, ratios, cli.seed)?;
    let out = out_path(cli, &a.out);
    ensure_parent(&out)?;
    sp.write(&out)?;
    write_config(cli, &out)?;
    println!(
        "split {} samples: {} train, {} val, {} test",
        corpus.len(),
        sp.train.len(),
        sp.val.len(),
        sp.test.len()
    );
    Ok(())
}

enum Loaded {
    Store(ImageStore),
    Embeddings(EmbeddingSet),
}

impl Loaded {
    fn data(&self) -> FeatureData<'_> {
        match self {
            Loaded::Store(s) => FeatureData::Store(s),
            Loaded::Embeddings(e) => FeatureData::Embeddings(e),
        }
    }
}

fn load_input(a: &InputArgs) -> CliResult<(Loaded, Corpus)> {
    match (&a.store, &a.embeddings) {
        (Some(store), None) => {
            let corpus_path = a.corpus.clone().unwrap_or_else(|| Corpus::sidecar_path(store));
            Ok((Loaded::Store(ImageStore::read(store)?), Corpus::read(&corpus_path)?))
        }
        (None, Some(emb)) => {
            let corpus_path = a
                .corpus
                .as_ref()
                .ok_or_else(|| Failure::Usage("--embeddings needs --corpus".into()))?;
            Ok((Loaded::Embeddings(EmbeddingSet::read(emb)?), Corpus::read(corpus_path)?))
        }
        _ => Err(Failure::Usage("give exactly one of --store and --embeddings".into())),
    }
}

fn train_spec(a: &TrainArgs, seed: u64) -> TrainSpec {
    let mut spec = TrainSpec::defaults(a.model.into(), seed, a.epochs);
    match &mut spec {
        TrainSpec::Knn(h) => {
            if let Some(k) = a.k {
                h.k = k;
            }
        }
        TrainSpec::Softmax(h) => h.lr = a.lr.unwrap_or(h.lr),
        TrainSpec::Mlp(h) => h.lr = a.lr.unwrap_or(h.lr),
        TrainSpec::SmallCnn(c) => c.lr = a.lr.unwrap_or(c.lr),
        _ => {}
    }
    spec
}

fn train(cli: &Cli, a: &TrainArgs) -> CliResult<()> {
    let (loaded, corpus) = load_input(&a.input)?;
    let sp = SplitAssignment::read(&a.split)?;
    let spec = train_spec(a, cli.seed);
    let out = pipeline::train(spec, loaded.data(), &corpus, &sp, a.pca)?;
    let path = out_path(cli, &a.out);
    ensure_parent(&path)?;
    out.model.write(&path)?;
    if let Some(h) = &out.history {
        let log = with_extension(&path, "history.csv");
        write_history(&log, h)?;
        for r in h {
            println!(
                "epoch {:>3}  loss {:.5}  train {:.2}%  val {:.2}%",
                r.epoch,
                r.loss,
                100.0 * r.train_accuracy,
                100.0 * r.val_accuracy
            );
        }
    }
    write_config(cli, &path)?;
    match out.selected_epoch {
        Some(e) => println!("saved {} (epoch {e}) to {}", a.out.display(), path.display()),
        None => println!("saved model to {}", path.display()),
    }
    Ok(())
}

fn write_labels(path: &Path, ids: &[String], labels: &[usize], names: &[String]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Data(e.to_string()))?;
    w.write_record(["id", "label_index", "label"]).map_err(|e| Failure::Data(e.to_string()))?;
    for (id, &l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string(), &names[l]])
            .map_err(|e| Failure::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    #[derive(serde::Deserialize)]
    struct Row {
        #[allow(dead_code)]
        id: String,
        label_index: usize,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    r.deserialize::<Row>()
        .map(|row| row.map(|r| r.label_index).map_err(|e| Failure::Data(format!("{}: {e}", path.display()))))
        .collect()
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    let model = TrainedModel::read(&a.model)?;
    let (loaded, corpus) = load_input(&a.input)?;
    if corpus.label_names != model.label_names {
        return Err(Failure::Data(format!(
            "model classes {:?} differ from corpus classes {:?}",
            model.label_names, corpus.label_names
        )));
    }
    let sp = SplitAssignment::read(&a.split)?;
    let ids = sp.ids(a.subset.into());
    let y = corpus.labels_for(ids)?;
    let probs = model.predict_ids(loaded.data(), ids)?;
    let (report, roc) = evaluate_probs(&probs, &y, &corpus.label_names, a.positive)?;

    let report_path = out_path(cli, &a.report);
    ensure_parent(&report_path)?;
    let format = match a.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    report_write(&report, &report_path, format)?;
    let probs_path = out_path(cli, &a.probs.clone().unwrap_or_else(|| with_extension(&a.report, "mprob")));
    ensure_parent(&probs_path)?;
    write_probs(&probs, &probs_path)?;
    write_labels(&with_extension(&probs_path, "labels.csv"), ids, &y, &corpus.label_names)?;
    if let Some(p) = &a.roc {
        match &roc {
            Some(r) => write_roc_csv(r, &out_path(cli, p))?,
            None => return Err(Failure::Usage("--roc needs a two-class task with both classes present".into())),
        }
    }
    write_config(cli, &report_path)?;
    println!("{} samples, accuracy {:.2}%", report.n_samples, 100.0 * report.accuracy);
    println!(
        "average TPR {:.2}%, average FPR {:.2}%",
        100.0 * report.avg_tpr,
        100.0 * report.avg_fpr
    );
    if let Some(f1) = report.f1 {
        println!("F1 {f1:.4}");
    }
    if let Some(auc) = report.auc {
        println!("AUC {auc:.4}");
    }
    Ok(())
}

fn explain_cmd(cli: &Cli, a: &ExplainArgs) -> CliResult<()> {
    let model = TrainedModel::read(&a.model)?;
    let store = ImageStore::read(&a.store)?;
    let img = store
        .get(&a.image_id)
        .ok_or_else(|| Failure::Data(format!("image {:?} not in {}", a.image_id, a.store.display())))?
        .to_square()?;
    let params = ExplainParams {
        top: a.top,
        slic: SlicParams {
            n_segments: a.superpixels,
            ..SlicParams::default()
        },
        n_samples: a.samples,
        fill: match a.fill {
            FillArg::Mean => Fill::SegmentMean,
            FillArg::Zero => Fill::Constant(0.0),
        },
        seed: cli.seed,
        ..ExplainParams::default()
    };
    let set = explain(&model, &img, params)?;
    let out = out_path(cli, &a.out);
    ensure_parent(&out)?;
    set.write_json(&out)?;
    let seg = set.segmentation.as_ref().expect("explain returns its segmentation");
    for e in &set.explanations {
        let ppm = with_extension(&out, &format!("class{}.ppm", e.target_class));
        write_overlay(&ppm, &img, seg, e)?;
        println!(
            "{:<16} p={:.4}  top segment {:?}  r2 {:.3}{}",
            model.label_names[e.target_class],
            e.target_probability,
            e.top_segment(),
            e.local_fit_r2,
            if e.degenerate { "  (constant output)" } else { "" }
        );
    }
    write_config(cli, &out)?;
    Ok(())
}

fn ensemble(cli: &Cli, a: &EnsembleArgs) -> CliResult<()> {
    let p1 = read_probs(&a.probs[0])?;
    let p2 = read_probs(&a.probs[1])?;
    let y = read_labels(&a.labels)?;
    let r = optimize_alpha(&p1, &p2, &y, a.metric, a.grid)?;
    let out = out_path(cli, &a.out);
    ensure_parent(&out)?;
    r.write_json(&out)?;
    let curve = out_path(cli, &a.curve.clone().unwrap_or_else(|| with_extension(&a.out, "curve.csv")));
    r.write_curve_csv(&curve)?;
    write_config(cli, &out)?;
    let first = r.per_alpha_curve.last().map(|c| c.1).unwrap_or(f64::NAN);
    let second = r.per_alpha_curve.first().map(|c| c.1).unwrap_or(f64::NAN);
    println!(
        "alpha {} -> {} {:.4} (first model alone {:.4}, second alone {:.4})",
        r.alpha, r.metric_name, r.objective_value, first, second
    );
    Ok(())
}

fn synth_cmd(cli: &Cli, a: &SynthArgs) -> CliResult<()> {
    let params = SynthParams {
        per_family: a.per_family,
        seed: cli.seed,
        ..SynthParams::default()
    };
    let files = synth::synth_corpus(&params)?;
    let dir = out_path(cli, &a.out);
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let manifest = synth::write_corpus(&dir, &files)?;
    let manifest_path = dir.join("manifest.csv");
    if let Some(e) = &a.embeddings {
        let samples: Vec<(String, usize)> = files.iter().map(|f| (f.path.clone(), f.family)).collect();
        let set = synth::class_mean_embeddings(&samples, synth::FAMILIES.len(), a.embed_dim, a.embed_sigma, cli.seed)?;
        let p = out_path(cli, e);
        ensure_parent(&p)?;
        set.write(&p)?;
    }
    write_config(cli, &manifest_path)?;
    println!("wrote {} files to {}", manifest.entries.len(), dir.display());
    Ok(())
}
