//! `mpcl`: builds contrastive multi-hop reasoning data from an
//! entity-annotated corpus and trains the toy pair scorer on it.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use metapath_cl::counterfactual::Ratio;
use metapath_cl::dataset::{read_instances, stats, ContrastiveInstance};
use metapath_cl::pipeline::{self, PipelineConfig, Stage, StageContext, StageError};
use metapath_cl::sample::Sample;
use metapath_cl::seed;
use metapath_cl::trainer::gradcheck::Problem;
use metapath_cl::trainer::{evaluate, train, ScorerParams};
use metapath_cl::Error;

const CONFIG_ENV: &str = "MPCL_CONFIG";

#[derive(Parser)]
#[command(name = "mpcl", version, about = "Contrastive data construction for multi-hop reasoning")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for document-level stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check corpus files and report every malformed line.
    Validate(Inputs),
    /// Write the entity graph of every document as a tab-separated edge list.
    BuildGraph(StageIo),
    /// Extract positive instances (answer, context, meta-path).
    Extract {
        #[command(flatten)]
        io: StageIo,
        #[command(flatten)]
        opts: ExtractOpts,
    },
    /// Draw negative options and contexts for each positive instance.
    Negatives {
        #[command(flatten)]
        io: StageIo,
        /// Positive instances from `extract`.
        #[arg(long)]
        positives: PathBuf,
        #[command(flatten)]
        opts: NegativeOpts,
    },
    /// Append counterfactual copies after each sample.
    Counterfactual {
        #[command(flatten)]
        io: StageIo,
        /// Samples from `negatives`.
        #[arg(long)]
        samples: PathBuf,
        #[command(flatten)]
        opts: CounterfactualOpts,
    },
    /// Serialize contrastive instances in both orientations.
    Emit {
        /// Augmented samples from `counterfactual`.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Mixing ratio; must match the one the copies were made with.
        #[arg(long)]
        cf_ratio: Option<Ratio>,
        #[command(flatten)]
        opts: EmitOpts,
    },
    /// Train the pair scorer on emitted instances.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Where to write the parameter dump.
        #[arg(long)]
        params: PathBuf,
        /// Per-epoch metrics as JSON lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Compare analytic and finite-difference gradients on random problems.
    GradCheck {
        /// Number of random (parameters, batch) configurations.
        #[arg(long, default_value_t = 1)]
        configs: u64,
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Accuracy of trained parameters on emitted instances.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Summary statistics of an emitted instance file.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Every stage from corpus to instances, plus a manifest.
    Run {
        #[command(flatten)]
        inputs: Inputs,
        /// Output directory.
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        extract: ExtractOpts,
        #[command(flatten)]
        negatives: NegativeOpts,
        #[command(flatten)]
        counterfactual: CounterfactualOpts,
        #[command(flatten)]
        emit: EmitOpts,
    },
}

#[derive(Args)]
struct Inputs {
    /// Corpus files (one JSON document per line).
    #[arg(long, short, num_args = 1..)]
    input: Vec<PathBuf>,
}

#[derive(Args)]
struct StageIo {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct ExtractOpts {
    #[arg(long)]
    max_hops: Option<usize>,
    #[arg(long, value_parser = ["first", "all"])]
    mode: Option<String>,
    #[arg(long)]
    no_backtracking: bool,
    #[arg(long)]
    allow_empty_context: bool,
}

#[derive(Args)]
struct NegativeOpts {
    #[arg(long)]
    num_negatives: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    no_cross_document: bool,
    #[arg(long)]
    no_swap_fallback: bool,
}

#[derive(Args)]
struct CounterfactualOpts {
    /// `original:counterfactual`, e.g. `1:3`; `0` disables augmentation.
    #[arg(long)]
    cf_ratio: Option<Ratio>,
    #[arg(long)]
    include_prob: Option<f64>,
    #[arg(long, value_parser = ["uniform", "same-batch-documents"])]
    pool_strategy: Option<String>,
    #[arg(long)]
    answer_bank: bool,
}

#[derive(Args)]
struct EmitOpts {
    /// Keep the positive at index 0.
    #[arg(long)]
    no_shuffle_gold: bool,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    mlm_weight: Option<f64>,
}

/// Failure classes, one exit code each.
enum Failure {
    Runtime(String),
    Usage(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Format { .. } | Error::Config(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        let msg = e.to_string();
        match Failure::from(e.source) {
            Failure::Validation(_) => Failure::Validation(msg),
            _ => Failure::Runtime(msg),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

trait Tag<T> {
    fn tag(self, stage: Stage) -> Outcome<T>;
}

impl<T, E: Into<Error>> Tag<T> for Result<T, E> {
    fn tag(self, stage: Stage) -> Outcome<T> {
        self.stage(stage).map_err(Failure::from)
    }
}

/// Flag overrides, applied on top of the configuration file.
#[derive(Default)]
struct Overrides(Vec<(&'static str, &'static str, toml::Value)>);

impl Overrides {
    fn set(&mut self, section: &'static str, key: &'static str, v: impl Into<toml::Value>) {
        self.0.push((section, key, v.into()));
    }

    fn opt<T: Into<toml::Value>>(&mut self, section: &'static str, key: &'static str, v: Option<T>) {
        if let Some(v) = v {
            self.set(section, key, v);
        }
    }

    fn flag(&mut self, section: &'static str, key: &'static str, on: bool, value: bool) {
        if on {
            self.set(section, key, value);
        }
    }

    fn extract(&mut self, o: &ExtractOpts) {
        self.opt("extract", "max_hops", o.max_hops.map(|n| n as i64));
        self.opt("extract", "mode", o.mode.clone());
        self.flag("extract", "backtracking", o.no_backtracking, false);
        self.flag("extract", "require_context", o.allow_empty_context, false);
    }

    fn negatives(&mut self, o: &NegativeOpts) {
        self.opt("negatives", "num_negatives", o.num_negatives.map(|n| n as i64));
        self.opt("negatives", "pool_size", o.pool_size.map(|n| n as i64));
        self.flag("negatives", "allow_cross_document", o.no_cross_document, false);
        self.flag("negatives", "swap_fallback", o.no_swap_fallback, false);
    }

    fn counterfactual(&mut self, o: &CounterfactualOpts) {
        self.opt("counterfactual", "cf_ratio", o.cf_ratio.map(|r| r.to_string()));
        self.opt("counterfactual", "include_prob", o.include_prob);
        self.opt("counterfactual", "pool_strategy", o.pool_strategy.clone());
        self.flag("counterfactual", "answer_bank_negatives", o.answer_bank, true);
    }

    fn emit(&mut self, o: &EmitOpts) {
        self.flag("emit", "shuffle_gold", o.no_shuffle_gold, false);
    }

    fn train(&mut self, o: &TrainOpts) {
        self.opt("train", "epochs", o.epochs.map(|n| n as i64));
        self.opt("train", "learning_rate", o.learning_rate);
        self.opt("train", "batch_size", o.batch_size.map(|n| n as i64));
        self.opt("train", "mlm_weight", o.mlm_weight);
    }
}

/// Reads the configuration file (if any), applies the global flags and the
/// overrides, and checks the result.
fn resolve(cli: &Cli, over: Overrides, inputs: &[PathBuf], output: Option<&Path>) -> Outcome<PipelineConfig> {
    let mut table = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    if let Some(s) = cli.seed {
        let s = i64::try_from(s).map_err(|_| Failure::Usage(format!("seed {s} does not fit in a signed 64-bit integer")))?;
        table.insert("seed".into(), s.into());
    }
    if !table.contains_key("seed") {
        return Err(Failure::Usage("a seed is required: pass --seed or set `seed` in the config".into()));
    }
    if let Some(j) = cli.jobs {
        table.insert("jobs".into(), (j as i64).into());
    }
    if !inputs.is_empty() {
        let list = inputs.iter().map(|p| toml::Value::from(p.display().to_string())).collect::<Vec<_>>();
        table.insert("input".into(), list.into());
    }
    if let Some(o) = output {
        table.insert("output".into(), o.display().to_string().into());
    }
    for (section, key, value) in over.0 {
        let entry = table
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(key.into(), value);
            }
            _ => return Err(Failure::Validation(format!("`{section}` must be a table"))),
        }
    }
    let cfg: PipelineConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Failure::Validation(format!("config: {}", e.message())))?;
    cfg.validate()?;
    for p in &cfg.input {
        if !p.is_file() {
            return Err(Failure::Usage(format!("input not found: {}", p.display())));
        }
    }
    Ok(cfg)
}

fn require_inputs(cfg: &PipelineConfig) -> Outcome {
    if cfg.input.is_empty() {
        return Err(Failure::Usage("no input corpus: pass --input or set `input` in the config".into()));
    }
    Ok(())
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input not found: {}", path.display())))
    }
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_all<T: Serialize>(path: &Path, items: &[T], stage: Stage) -> Outcome {
    pipeline::write_jsonl(create(path)?, items).tag(stage)
}

fn load_instances(path: &Path) -> Outcome<Vec<ContrastiveInstance>> {
    require_file(path)?;
    let file = File::open(path)?;
    Ok(read_instances(BufReader::new(file)).collect::<Result<Vec<_>, _>>()?)
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Runtime(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn execute(cli: Cli) -> Outcome {
    let mut over = Overrides::default();
    match &cli.command {
        Command::Validate(inputs) => {
            let paths = resolve_unseeded(&cli, &inputs.input)?;
            let report = pipeline::check_corpus(&paths).tag(Stage::Ingest)?;
            for (path, e) in &report.errors {
                eprintln!("{}: {e}", path.display());
            }
            println!(
                "{} valid document(s), {} invalid line(s)",
                report.documents.len(),
                report.errors.len()
            );
            if !report.errors.is_empty() {
                return Err(Failure::Validation(format!("{} invalid line(s)", report.errors.len())));
            }
        }
        Command::BuildGraph(io) => {
            let cfg = resolve(&cli, over, &io.inputs.input, None)?;
            require_inputs(&cfg)?;
            let docs = pipeline::read_corpus(&cfg.input).tag(Stage::Ingest)?;
            let graphs = pipeline::build_graphs(&docs, cfg.jobs);
            let mut w = create(&io.output)?;
            w.write_all(pipeline::graph_listing(&docs, &graphs).as_bytes())?;
            w.flush()?;
        }
        Command::Extract { io, opts } => {
            over.extract(opts);
            let cfg = resolve(&cli, over, &io.inputs.input, None)?;
            require_inputs(&cfg)?;
            let docs = pipeline::read_corpus(&cfg.input).tag(Stage::Ingest)?;
            let graphs = pipeline::build_graphs(&docs, cfg.jobs);
            let positives = pipeline::extract_all(&docs, &graphs, &cfg.extract, cfg.jobs);
            write_all(&io.output, &positives, Stage::Extract)?;
            eprintln!("{} positive instance(s) from {} document(s)", positives.len(), docs.len());
        }
        Command::Negatives { io, positives, opts } => {
            over.negatives(opts);
            let cfg = resolve(&cli, over, &io.inputs.input, None)?;
            require_inputs(&cfg)?;
            require_file(positives)?;
            let docs = pipeline::read_corpus(&cfg.input).tag(Stage::Ingest)?;
            let pos = pipeline::read_jsonl(positives).tag(Stage::Negatives)?;
            let samples = pipeline::negatives_all(&docs, &pos, &cfg.negatives, cfg.seed, cfg.jobs).tag(Stage::Negatives)?;
            write_all(&io.output, &samples, Stage::Negatives)?;
            eprintln!("{} sample(s)", samples.len());
        }
        Command::Counterfactual { io, samples, opts } => {
            over.counterfactual(opts);
            let cfg = resolve(&cli, over, &io.inputs.input, None)?;
            require_inputs(&cfg)?;
            require_file(samples)?;
            let docs = pipeline::read_corpus(&cfg.input).tag(Stage::Ingest)?;
            let originals: Vec<Sample> = pipeline::read_jsonl(samples).tag(Stage::Counterfactual)?;
            let aug = pipeline::counterfactual_all(&docs, &originals, &cfg.counterfactual, cfg.seed, cfg.jobs)
                .tag(Stage::Counterfactual)?;
            write_all(&io.output, &aug.samples, Stage::Counterfactual)?;
            eprintln!("{} counterfactual cop(ies); skipped {:?}", aug.counterfactual, aug.skipped);
        }
        Command::Emit {
            samples,
            output,
            cf_ratio,
            opts,
        } => {
            over.opt("counterfactual", "cf_ratio", cf_ratio.map(|r| r.to_string()));
            over.emit(opts);
            let cfg = resolve(&cli, over, &[], None)?;
            require_file(samples)?;
            let aug: Vec<Sample> = pipeline::read_jsonl(samples).tag(Stage::Emit)?;
            let summary = pipeline::emit_all(&aug, &cfg.counterfactual, &cfg.emit, cfg.seed, create(output)?).tag(Stage::Emit)?;
            eprintln!(
                "{} instance(s), {} counterfactual; skipped {:?}",
                summary.records, summary.counterfactual, summary.skipped
            );
        }
        Command::Train {
            data,
            params,
            metrics,
            opts,
        } => {
            over.train(opts);
            let cfg = resolve(&cli, over, &[], None)?;
            let instances = load_instances(data)?;
            let mut tcfg = cfg.train.clone();
            tcfg.seed = cfg.seed;
            let (trained, history) = train(&instances, &tcfg).tag(Stage::Train)?;
            let mut w = create(params)?;
            trained.write_text(&mut w).tag(Stage::Train)?;
            w.flush()?;
            if let Some(path) = metrics {
                write_all(path, &history, Stage::Train)?;
            }
            if let Some(last) = history.last() {
                println!("epoch {} loss {:.6} accuracy {:.4}", last.epoch, last.loss, last.accuracy);
            }
        }
        Command::GradCheck {
            configs,
            coords,
            step,
            threshold,
        } => {
            let cfg = resolve(&cli, over, &[], None)?;
            let mut worst: f64 = 0.0;
            for i in 0..*configs {
                let problem = Problem::random(seed::derive_seed(cfg.seed, &["grad-check", &i.to_string()]));
                let r = problem.check(*coords, *step).map_err(Failure::from)?;
                println!(
                    "config {i}: max relative error {:.3e} over {} coordinates",
                    r.max_rel_error, r.coordinates
                );
                worst = worst.max(r.max_rel_error);
            }
            println!("max relative error {worst:.3e} (threshold {threshold:.0e})");
            if !(worst < *threshold) {
                return Err(Failure::Runtime(format!("gradient check failed: {worst:.3e} >= {threshold:.0e}")));
            }
        }
        Command::Eval { params, data } => {
            require_file(params)?;
            let p = ScorerParams::read_text(BufReader::new(File::open(params)?))?;
            let instances = load_instances(data)?;
            let acc = evaluate(&p, &instances)?;
            print_json(&serde_json::json!({ "instances": instances.len(), "accuracy": acc }))?;
        }
        Command::Stats { data } => {
            require_file(data)?;
            let s = stats(read_instances(BufReader::new(File::open(data)?)))?;
            print_json(&s)?;
        }
        Command::Run {
            inputs,
            output,
            extract,
            negatives,
            counterfactual,
            emit,
        } => {
            over.extract(extract);
            over.negatives(negatives);
            over.counterfactual(counterfactual);
            over.emit(emit);
            let cfg = resolve(&cli, over, &inputs.input, Some(output))?;
            require_inputs(&cfg)?;
            let manifest = pipeline::run_pipeline(&cfg)?;
            print_json(&manifest)?;
        }
    }
    Ok(())
}

/// `validate` needs no seed; it only reads the input list.
fn resolve_unseeded(cli: &Cli, inputs: &[PathBuf]) -> Outcome<Vec<PathBuf>> {
    let mut paths = inputs.to_vec();
    if paths.is_empty() {
        if let Some(path) = &cli.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
            if let Some(toml::Value::Array(xs)) = table.get("input") {
                paths = xs.iter().filter_map(|v| v.as_str().map(PathBuf::from)).collect();
            }
        }
    }
    if paths.is_empty() {
        return Err(Failure::Usage("no input corpus: pass --input or set `input` in the config".into()));
    }
    for p in &paths {
        require_file(p)?;
    }
    Ok(paths)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Runtime(m) | Failure::Usage(m) | Failure::Validation(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

