//! Command-line front end: `generate`, `train`, `predict`, `eval`, `plot`.
//!
//! [`Cli`] is the raw clap surface. [`RunConfig::from_cli`] merges it with the
//! optional config file and the built-in defaults, and [`run`] executes the
//! result inside a rayon pool sized by `--threads`.

pub mod config;
pub mod plot;

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use mimlcdl::convops::Pooling;
use mimlcdl::data::{
    generate_synthetic, load_dataset, load_model, save_dataset, save_model, write_atomic,
    ModelFile, StoredParams, SynthSpec,
};
use mimlcdl::metrics::{curve_csv, evaluate, label_matrix, EvalReport};
use mimlcdl::model::predict_all;
use mimlcdl::train::{encode, train, EpochRecord, ENCODE_EPOCHS};
use mimlcdl::{validate_dataset, Hyperparams};

use config::ConfigFile;

/// Process exit statuses, one per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Dimension = 6,
    Numerical = 7,
    Undefined = 8,
    Placement = 9,
    Csv = 10,
}

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0   success
  2   usage error (bad or unknown flag)
  3   invalid configuration or hyperparameter
  4   I/O failure
  5   malformed dataset or model file
  6   dimension mismatch between inputs
  7   numerical failure (non-finite objective, solver breakdown)
  8   metric undefined (labels hold a single class); report still written
  9   synthetic placement failed (signal too short for the bursts)
  10  malformed CSV input";

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }

    pub fn csv(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Csv, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(ExitKind::Io, format!("{}: {err}", path.display()))
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<mimlcdl::Error> for CliError {
    fn from(err: mimlcdl::Error) -> Self {
        use mimlcdl::Error as E;
        let kind = match &err {
            E::Config(_) => ExitKind::Config,
            E::Io(_) => ExitKind::Io,
            E::Format(_) | E::InvalidData(_) => ExitKind::Format,
            E::Dimension(_) => ExitKind::Dimension,
            E::Numerical(_) | E::NoConvergence(_) | E::NonFinite { .. } => ExitKind::Numerical,
            E::Undefined(_) => ExitKind::Undefined,
            E::Placement(_) => ExitKind::Placement,
        };
        CliError::new(kind, err.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Threshold rule for turning scores into labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Midpoint of the largest and smallest score.
    Dynamic,
    Fixed(f64),
}

impl FromStr for ThresholdMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "dynamic" {
            return Ok(ThresholdMode::Dynamic);
        }
        match s.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(v)) if v.is_finite() => Ok(ThresholdMode::Fixed(v)),
            _ => Err(format!("expected dynamic or fixed:<value>, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Avg,
    Max,
}

impl FromStr for PoolingArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, false)
    }
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Avg => Pooling::Avg,
            PoolingArg::Max => Pooling::Max,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mimlcdl",
    version,
    about = "Weakly supervised convolutional dictionary learning for multi-label signals",
    after_help = EXIT_CODES_HELP
)]
pub struct Cli {
    /// key = value file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for per-bag work (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic train/test sets and their feature bank.
    Generate(GenerateArgs),
    /// Learn dictionaries and projection from a dataset file.
    Train(TrainArgs),
    /// Encode bags with a trained model and write per-class scores.
    Predict(PredictArgs),
    /// Score predictions against dataset labels.
    Eval(EvalArgs),
    /// Render a loss, ROC or PR CSV as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_test: PathBuf,
    /// Feature-bank CSV [default: <out-train>.features.csv].
    #[arg(long)]
    pub features_out: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Signal-to-noise ratio in dB; `inf` disables noise [default: 10].
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Samples per bag [default: 1600].
    #[arg(long)]
    pub length: Option<usize>,
    /// Rows per bag [default: 1].
    #[arg(long)]
    pub height: Option<usize>,
    /// Training bags per label subset [default: 50].
    #[arg(long)]
    pub per_combo_train: Option<usize>,
    /// Test bags per label subset [default: 50].
    #[arg(long)]
    pub per_combo_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_out: PathBuf,
    /// CSV of epoch, objective and wall time.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    /// Shared atoms [default: 1].
    #[arg(long)]
    pub k0: Option<usize>,
    /// Atoms per class [default: 5].
    #[arg(long)]
    pub kc: Option<usize>,
    /// Comma-separated atoms per class; overrides --kc.
    #[arg(long)]
    pub kc_per_class: Option<KcList>,
    /// Atom length [default: 30].
    #[arg(long)]
    pub window: Option<usize>,
    /// Sparsity weight [default: 0.1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Label-loss weight [default: 0.01].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Nuclear-norm weight [default: 0.1].
    #[arg(long)]
    pub mu: Option<f64>,
    /// Extrapolation factor in [0, 1) [default: 0.9].
    #[arg(long)]
    pub delta: Option<f64>,
    /// ADMM penalty [default: 2].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Epoch budget [default: 60].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Relative objective change that stops training [default: 1e-4].
    #[arg(long)]
    pub tol: Option<f64>,
    /// [default: 50]
    #[arg(long)]
    pub admm_iters: Option<usize>,
    /// [default: 50]
    #[arg(long)]
    pub newton_iters: Option<usize>,
    /// Initialization seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scores_out: PathBuf,
    /// [default: avg]
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores CSV written by `predict`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Dataset file holding the true labels.
    #[arg(long)]
    pub labels_from: PathBuf,
    /// `dynamic` or `fixed:<value>` [default: dynamic].
    #[arg(long)]
    pub threshold: Option<ThresholdMode>,
    #[arg(long)]
    pub report_out: PathBuf,
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
    #[arg(long)]
    pub pr_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).multiple(false)))]
pub struct PlotArgs {
    #[arg(long, group = "source")]
    pub loss: Option<PathBuf>,
    #[arg(long, group = "source")]
    pub roc: Option<PathBuf>,
    #[arg(long, group = "source")]
    pub pr: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Comma-separated list of per-class atom counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KcList(pub Vec<usize>);

impl FromStr for KcList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(KcList)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub out_train: PathBuf,
    pub out_test: PathBuf,
    pub features_out: PathBuf,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data: PathBuf,
    pub model_out: PathBuf,
    pub loss_out: Option<PathBuf>,
    pub hp: Hyperparams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub model: PathBuf,
    pub data: PathBuf,
    pub scores_out: PathBuf,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub scores: PathBuf,
    pub labels_from: PathBuf,
    pub threshold: ThresholdMode,
    pub report_out: PathBuf,
    pub roc_out: Option<PathBuf>,
    pub pr_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Loss,
    Roc,
    Pr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotConfig {
    pub input: PathBuf,
    pub kind: PlotKind,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Generate(GenerateConfig),
    Train(TrainConfig),
    Predict(PredictConfig),
    Eval(EvalConfig),
    Plot(PlotConfig),
}

/// Fully resolved invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub threads: usize,
    pub action: Action,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> CliResult<Self> {
        let file = match &cli.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let threads = file.resolve(cli.threads, "threads", 0)?;
        let action = match cli.command {
            Command::Generate(a) => Action::Generate(resolve_generate(a, &file)?),
            Command::Train(a) => Action::Train(resolve_train(a, &file)?),
            Command::Predict(a) => Action::Predict(PredictConfig {
                pooling: file.resolve(a.pooling, "pooling", PoolingArg::Avg)?.into(),
                model: a.model,
                data: a.data,
                scores_out: a.scores_out,
            }),
            Command::Eval(a) => Action::Eval(EvalConfig {
                threshold: file.resolve(a.threshold, "threshold", ThresholdMode::Dynamic)?,
                scores: a.scores,
                labels_from: a.labels_from,
                report_out: a.report_out,
                roc_out: a.roc_out,
                pr_out: a.pr_out,
            }),
            Command::Plot(a) => {
                let (input, kind) = match (a.loss, a.roc, a.pr) {
                    (Some(p), None, None) => (p, PlotKind::Loss),
                    (None, Some(p), None) => (p, PlotKind::Roc),
                    (None, None, Some(p)) => (p, PlotKind::Pr),
                    _ => {
                        return Err(CliError::new(
                            ExitKind::Usage,
                            "give exactly one of --loss, --roc, --pr",
                        ))
                    }
                };
                Action::Plot(PlotConfig {
                    input,
                    kind,
                    out: a.out,
                })
            }
        };
        Ok(RunConfig { threads, action })
    }
}

fn resolve_generate(a: GenerateArgs, file: &ConfigFile) -> CliResult<GenerateConfig> {
    let defaults = SynthSpec::default();
    let length = file.resolve(a.length, "length", defaults.signal_len)?;
    let base = SynthSpec::for_length(length);
    let spec = SynthSpec {
        seed: file.resolve(a.seed, "seed", 0)?,
        snr_db: file.resolve(a.snr_db, "snr-db", base.snr_db)?,
        height: file.resolve(a.height, "height", base.height)?,
        per_combo_train: file.resolve(
            a.per_combo_train,
            "per-combo-train",
            base.per_combo_train,
        )?,
        per_combo_test: file.resolve(a.per_combo_test, "per-combo-test", base.per_combo_test)?,
        ..base
    };
    let features_out = a.features_out.unwrap_or_else(|| {
        let mut name = a.out_train.file_stem().unwrap_or_default().to_os_string();
        name.push(".features.csv");
        a.out_train.with_file_name(name)
    });
    Ok(GenerateConfig {
        out_train: a.out_train,
        out_test: a.out_test,
        features_out,
        spec,
    })
}

fn resolve_train(a: TrainArgs, file: &ConfigFile) -> CliResult<TrainConfig> {
    let d = Hyperparams::default();
    let kc_list = match a.kc_per_class {
        Some(list) => Some(list),
        None => file.get::<KcList>("kc-per-class")?,
    };
    let hp = Hyperparams {
        lambda: file.resolve(a.lambda, "lambda", d.lambda)?,
        eta: file.resolve(a.eta, "eta", d.eta)?,
        mu: file.resolve(a.mu, "mu", d.mu)?,
        delta: file.resolve(a.delta, "delta", d.delta)?,
        rho: file.resolve(a.rho, "rho", d.rho)?,
        eps: file.resolve(a.tol, "tol", d.eps)?,
        window: file.resolve(a.window, "window", d.window)?,
        k0: file.resolve(a.k0, "k0", d.k0)?,
        kc: file.resolve(a.kc, "kc", d.kc)?,
        kc_per_class: kc_list.map(|l| l.0),
        epochs: file.resolve(a.epochs, "epochs", d.epochs)?,
        admm_iters: file.resolve(a.admm_iters, "admm-iters", d.admm_iters)?,
        admm_tol: d.admm_tol,
        newton_iters: file.resolve(a.newton_iters, "newton-iters", d.newton_iters)?,
        seed: file.resolve(a.seed, "seed", d.seed)?,
    };
    hp.validate()?;
    Ok(TrainConfig {
        data: a.data,
        model_out: a.model_out,
        loss_out: a.loss_out,
        hp,
    })
}

/// What a successful command reports back.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Generated {
        train: usize,
        test: usize,
    },
    Trained {
        epochs: usize,
        initial: f64,
        last: f64,
    },
    Predicted {
        bags: usize,
        classes: usize,
    },
    Evaluated(EvalReport),
    Plotted {
        points: usize,
    },
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Generated { train, test } => {
                write!(f, "wrote {train} training and {test} test bags")
            }
            Outcome::Trained {
                epochs,
                initial,
                last,
            } => write!(
                f,
                "trained {epochs} epochs, objective {initial:.6} -> {last:.6}"
            ),
            Outcome::Predicted { bags, classes } => {
                write!(f, "scored {bags} bags x {classes} classes")
            }
            Outcome::Evaluated(r) => {
                let m = &r.metrics;
                write!(
                    f,
                    "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} subset {:.4} threshold {:.4}",
                    m.accuracy, m.precision, m.recall, m.f1, m.subset_accuracy, r.threshold
                )?;
                match (r.roc_auc(), r.pr_auc()) {
                    (Some(roc), Some(pr)) => write!(f, " roc_auc {roc:.4} pr_auc {pr:.4}"),
                    _ => Ok(()),
                }
            }
            Outcome::Plotted { points } => write!(f, "plotted {points} points"),
        }
    }
}

/// Executes `cfg` inside a thread pool of the requested size.
pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    run_with_progress(cfg, &mut |_| {})
}

/// [`run`], forwarding training epochs to `progress`.
pub fn run_with_progress(
    cfg: &RunConfig,
    progress: &mut (dyn FnMut(&EpochRecord) + Send),
) -> CliResult<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    pool.install(|| match &cfg.action {
        Action::Generate(c) => cmd_generate(c),
        Action::Train(c) => cmd_train(c, progress),
        Action::Predict(c) => cmd_predict(c),
        Action::Eval(c) => cmd_eval(c).map(Outcome::Evaluated),
        Action::Plot(c) => cmd_plot(c),
    })
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli =
        Cli::try_parse_from(args).map_err(|e| CliError::new(ExitKind::Usage, e.to_string()))?;
    run(&RunConfig::from_cli(cli)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, |w| {
        std::io::Write::write_all(w, text.as_bytes())?;
        Ok(())
    })
    .map_err(CliError::from)
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn cmd_generate(cfg: &GenerateConfig) -> CliResult<Outcome> {
    let set = generate_synthetic(&cfg.spec)?;
    save_dataset(&cfg.out_train, &set.train)?;
    save_dataset(&cfg.out_test, &set.test)?;
    write_text(&cfg.features_out, &set.features.to_csv())?;
    Ok(Outcome::Generated {
        train: set.train.len(),
        test: set.test.len(),
    })
}

/// Loss trace as `epoch,objective,wall_time` lines.
pub fn loss_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,objective,wall_time\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.objective, r.wall_time);
    }
    out
}

/// Trains on `cfg.data`; `progress` sees every recorded epoch.
pub fn cmd_train(cfg: &TrainConfig, progress: &mut dyn FnMut(&EpochRecord)) -> CliResult<Outcome> {
    let bags = load_dataset(&cfg.data)?;
    validate_dataset(&bags)?;
    let mut records = Vec::new();
    let state = train(&bags, &cfg.hp, &mut |r| {
        progress(r);
        records.push(*r);
    })?;
    save_model(
        &cfg.model_out,
        &ModelFile {
            model: state.model,
            projection: state.projection,
            params: StoredParams::from(&cfg.hp),
        },
    )?;
    if let Some(path) = &cfg.loss_out {
        write_text(path, &loss_csv(&records))?;
    }
    Ok(Outcome::Trained {
        epochs: records.last().map_or(0, |r| r.epoch),
        initial: records.first().map_or(f64::NAN, |r| r.objective),
        last: records.last().map_or(f64::NAN, |r| r.objective),
    })
}

/// Scores CSV with one `class_<c>` column per class.
pub fn scores_csv(scores: &Array2<f64>) -> String {
    let header = (0..scores.ncols())
        .map(|c| format!("class_{c}"))
        .collect::<Vec<_>>()
        .join(",");
    let mut out = header + "\n";
    for row in scores.rows() {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse_scores(text: &str) -> CliResult<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let cols = reader
        .headers()
        .map_err(|e| CliError::csv(e.to_string()))?
        .len();
    if cols == 0 {
        return Err(CliError::csv("empty scores file"));
    }
    let mut flat = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::csv(format!("scores: {e}")))?;
        for field in &record {
            flat.push(
                field
                    .parse::<f64>()
                    .map_err(|e| CliError::csv(format!("scores row {}: {e}", i + 1)))?,
            );
        }
    }
    let rows = flat.len() / cols;
    Ok(Array2::from_shape_vec((rows, cols), flat).expect("csv enforces equal row lengths"))
}

pub fn cmd_predict(cfg: &PredictConfig) -> CliResult<Outcome> {
    let file = load_model(&cfg.model)?;
    let bags = load_dataset(&cfg.data)?;
    let summary = validate_dataset(&bags)?;
    let model = &file.model;
    if summary.height != model.height || summary.classes != model.num_classes() {
        return Err(CliError::new(
            ExitKind::Dimension,
            format!(
                "data has {} rows and {} classes, model expects {} and {}",
                summary.height,
                summary.classes,
                model.height,
                model.num_classes()
            ),
        ));
    }
    let mut hp = Hyperparams {
        window: model.window,
        ..Hyperparams::default()
    };
    file.params.apply_to(&mut hp);
    let coeffs = encode(&bags, model, &file.projection, &hp, ENCODE_EPOCHS)?;
    let scores = predict_all(model, &coeffs, &file.projection, cfg.pooling)?;
    write_text(&cfg.scores_out, &scores_csv(&scores))?;
    Ok(Outcome::Predicted {
        bags: scores.nrows(),
        classes: scores.ncols(),
    })
}

/// Writes the report (and curves when defined).
///
/// Labels of a single class still produce a report, but the call then
/// fails with [`ExitKind::Undefined`].
pub fn cmd_eval(cfg: &EvalConfig) -> CliResult<EvalReport> {
    let scores = parse_scores(&read_text(&cfg.scores)?)?;
    let bags = load_dataset(&cfg.labels_from)?;
    let labels = label_matrix(&bags);
    if scores.dim() != labels.dim() {
        return Err(CliError::new(
            ExitKind::Dimension,
            format!(
                "scores are {:?} but labels are {:?}",
                scores.dim(),
                labels.dim()
            ),
        ));
    }
    let threshold = match cfg.threshold {
        ThresholdMode::Dynamic => None,
        ThresholdMode::Fixed(v) => Some(v),
    };
    let report = evaluate(scores.view(), labels.view(), threshold)?;
    write_text(&cfg.report_out, &report.to_csv())?;
    let Some(curves) = &report.curves else {
        return Err(CliError::new(
            ExitKind::Undefined,
            "labels hold a single class; ROC/PR areas are undefined",
        ));
    };
    if let Some(path) = &cfg.roc_out {
        write_text(path, &curve_csv("fpr,tpr", &curves.roc))?;
    }
    if let Some(path) = &cfg.pr_out {
        write_text(path, &curve_csv("recall,precision", &curves.pr))?;
    }
    Ok(report)
}

pub fn cmd_plot(cfg: &PlotConfig) -> CliResult<Outcome> {
    let table = plot::parse_csv(&read_text(&cfg.input)?)?;
    let (x, y, title) = match cfg.kind {
        PlotKind::Loss => {
            let y = table
                .header
                .iter()
                .position(|h| h == "objective")
                .unwrap_or(1);
            (0, y, "Training objective")
        }
        PlotKind::Roc => (0, 1, "ROC curve"),
        PlotKind::Pr => (0, 1, "Precision-recall curve"),
    };
    let svg = plot::render_svg(&table, x, &[y], title)?;
    write_text(&cfg.out, &svg)?;
    Ok(Outcome::Plotted {
        points: table.rows.len(),
    })
}
