use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ncws::data::{apply_threshold, load_reviews, InputFormat, LoadReport};
use ncws::eval::{age_helpfulness_curve, curve_correlations, prf1};
use ncws::experiment::{
    age_curve_csv, align_truth, run_compare, score_records, text_report, train_artifact,
    write_reports, AutoOr, ExperimentConfig, TrainOptions,
};
use ncws::features::{FeaturePipeline, FeatureSet, DEFAULT_MAX_VOCAB};
use ncws::model::{predict_labels, ModelArtifact};
use ncws::negativity::{NegativitySpec, DEFAULT_EPSILON};
use ncws::synth::{generate, write_jsonl, write_truth, Exposure, SynthConfig};
use ncws::{BaseLoss, BinaryLabel, Dataset, ReviewRecord, RiskAssembly, TrainConfig};

#[derive(Parser)]
#[command(
    name = "ncws",
    version,
    about = "Positive/unlabelled review classification with negativity-weighted risk correction"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus and print its summary line.
    Ingest(IngestArgs),
    /// Generate a synthetic PU corpus plus a truth sidecar.
    Synth(SynthArgs),
    /// Extract a feature matrix to CSV.
    Featurize(FeaturizeArgs),
    /// Train one model on a whole corpus and save it.
    Train(TrainArgs),
    /// Score a corpus with a saved model.
    Evaluate(EvaluateArgs),
    /// Cross-validated comparison of the naive classifier and every correction.
    Compare(Box<CompareArgs>),
    /// Correlation between review age and helpful probability.
    Correlate(CorrelateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Corpus file (JSONL or CSV).
    #[arg(long)]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<InputFormat>,
    /// Minimum helpful votes for a positive label.
    #[arg(long, default_value_t = 1)]
    threshold: u64,
}

impl DataArgs {
    fn load_raw(&self) -> Result<LoadReport> {
        let format = self.format.unwrap_or_else(|| InputFormat::from_path(&self.input));
        let report = load_reviews(&self.input, format)?;
        if report.skipped > 0 {
            log::warn!(
                "{}: skipped {} malformed lines",
                self.input.display(),
                report.skipped
            );
        }
        Ok(report)
    }

    fn load(&self) -> Result<Dataset> {
        Ok(apply_threshold(self.load_raw()?.records, self.threshold)?)
    }

    fn name(&self) -> String {
        self.input
            .file_stem()
            .map_or("corpus".into(), |s| s.to_string_lossy().into_owned())
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Name used in the summary line; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    /// Re-emit the parsed records as clean JSONL.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long = "n", default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 0.45)]
    pos_frac: f64,
    #[arg(long, default_value_t = 3650)]
    max_age: u64,
    /// linear | logistic | step:<days>
    #[arg(long, default_value = "linear")]
    exposure: Exposure,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSONL output path.
    #[arg(long, default_value = "synth.jsonl")]
    output: PathBuf,
    /// Truth sidecar path; defaults to `<output stem>.truth.csv`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct FeatureArgs {
    /// len | nos | asl | poqs | structural | ugr | syn | rating | rating-norm | age | covariates | all
    #[arg(long, default_value = "all")]
    features: FeatureSet,
    #[arg(long, default_value_t = DEFAULT_MAX_VOCAB)]
    max_vocab: usize,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    feat: FeatureArgs,
    /// Dense CSV, or `row,col,value` triplets for `--features ugr`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    feat: FeatureArgs,
    /// naive | ncws | cpu | pconf | svmp
    #[arg(long, default_value = "ncws")]
    risk: RiskAssembly,
    /// hinge | double-hinge | logistic
    #[arg(long, default_value = "hinge")]
    loss: BaseLoss,
    /// Positive class prior for C-PU; `auto` uses the labelled fraction.
    #[arg(long, default_value = "auto")]
    prior: AutoOr,
    /// Weight on positive errors for SVM-P; `auto` uses n_U / n_P.
    #[arg(long, default_value = "auto")]
    penalty_ratio: AutoOr,
    /// age | constant:<v> | file:<path>
    #[arg(long, default_value = "age")]
    negativity: NegativitySpec,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// CSV `id,score` of positive confidences for P-conf (default 1 - n).
    #[arg(long)]
    confidence: Option<String>,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().l2_lambda)]
    l2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on raw features instead of standardised ones.
    #[arg(long)]
    no_standardize: bool,
    /// Keep the class imbalance instead of down-sampling unlabelled reviews.
    #[arg(long)]
    no_downsample: bool,
    #[arg(long)]
    save_model: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    load_model: PathBuf,
    /// `id,true_label` sidecar to score against hidden labels.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write per-review `id,score,squashed,prediction`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    decision_threshold: f64,
}

#[derive(Args)]
struct CompareArgs {
    /// Flat `key = value` config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    truth: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    max_vocab: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    /// Comma-separated, starting with naive.
    #[arg(long)]
    approaches: Option<String>,
    #[arg(long)]
    negativity: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    confidence: Option<String>,
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    penalty_ratio: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    l2: Option<String>,
    #[arg(long)]
    train_seed: Option<String>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for the report files.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

impl CompareArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("data.input", &self.input),
            ("data.format", &self.format),
            ("data.truth", &self.truth),
            ("data.threshold", &self.threshold),
            ("data.folds", &self.folds),
            ("data.seed", &self.seed),
            ("features.set", &self.features),
            ("features.max_vocab", &self.max_vocab),
            ("risk.loss", &self.loss),
            ("risk.approaches", &self.approaches),
            ("risk.negativity", &self.negativity),
            ("risk.epsilon", &self.epsilon),
            ("risk.confidence", &self.confidence),
            ("risk.prior", &self.prior),
            ("risk.penalty_ratio", &self.penalty_ratio),
            ("train.lr", &self.lr),
            ("train.epochs", &self.epochs),
            ("train.batch_size", &self.batch_size),
            ("train.l2", &self.l2),
            ("train.seed", &self.train_seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 30)]
    bin_days: u64,
    /// Write the age curve as CSV.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let report = args.data.load_raw()?;
    if let Some(out) = &args.output {
        write_jsonl(&report.records, out)?;
    }
    let dataset = apply_threshold(report.records, args.data.threshold)?;
    let name = args.name.clone().unwrap_or_else(|| args.data.name());
    println!("{}", dataset.summary(&name));
    if report.skipped > 0 {
        println!("skipped {} malformed lines", report.skipped);
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_instances: args.n,
        positive_fraction: args.pos_frac,
        max_age_days: args.max_age,
        exposure: args.exposure,
        feature_noise: args.noise,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let data = generate(&cfg)?;
    let truth_path = args.truth.clone().unwrap_or_else(|| truth_sidecar(&args.output));
    write_jsonl(data.dataset.records(), &args.output)?;
    write_truth(
        data.dataset
            .records()
            .map(|r| r.id.as_str())
            .zip(data.truth.iter().copied()),
        &truth_path,
    )?;
    let true_pos = data.truth.iter().filter(|t| t.is_positive()).count();
    println!("{}", data.dataset.summary(&stem(&args.output)));
    println!(
        "{true_pos} true positives; wrote {} and {}",
        args.output.display(),
        truth_path.display()
    );
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or("corpus".into(), |s| s.to_string_lossy().into_owned())
}

fn truth_sidecar(output: &Path) -> PathBuf {
    output.with_file_name(format!("{}.truth.csv", stem(output)))
}

fn featurize(args: &FeaturizeArgs) -> Result<()> {
    let dataset = args.data.load()?;
    let records: Vec<&ReviewRecord> = dataset.records().collect();
    let pipeline = FeaturePipeline::fit(
        &records,
        args.feat.features,
        args.feat.max_vocab,
        dataset.max_age_days(),
    )?;
    let file = std::fs::File::create(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let mut w = std::io::BufWriter::new(file);
    if args.feat.features == FeatureSet::Ugr {
        writeln!(w, "row,col,value")?;
        for (i, j, v) in pipeline.ugr_triplets(&records)? {
            writeln!(w, "{i},{j},{v}")?;
        }
        w.flush()?;
        let vocab_path = args.output.with_extension("vocab.csv");
        let mut vw = std::io::BufWriter::new(std::fs::File::create(&vocab_path)?);
        writeln!(vw, "col,term,df")?;
        if let Some(model) = &pipeline.tfidf {
            for (j, t) in model.terms().into_iter().enumerate() {
                writeln!(vw, "{j},{t},{}", model.doc_freq(t).unwrap_or(0))?;
            }
        }
        vw.flush()?;
        println!(
            "{} rows x {} terms (sparse) -> {}",
            records.len(),
            pipeline.schema().len(),
            args.output.display()
        );
        return Ok(());
    }
    let x = pipeline.transform(&records)?;
    let schema = pipeline.schema();
    writeln!(w, "id,label,{}", schema.join(","))?;
    for (i, (r, l)) in dataset.instances().iter().enumerate() {
        let row: Vec<String> = x.row(i).iter().map(f64::to_string).collect();
        writeln!(w, "{},{},{}", r.id, BinaryLabel::from(*l).as_i8(), row.join(","))?;
    }
    w.flush()?;
    println!(
        "{} rows x {} columns -> {}",
        x.rows(),
        x.cols(),
        args.output.display()
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let dataset = args.data.load()?;
    let opts = TrainOptions {
        features: args.feat.features,
        max_vocab: args.feat.max_vocab,
        assembly: args.risk,
        loss: args.loss,
        prior: args.prior,
        penalty_ratio: args.penalty_ratio,
        negativity: args.negativity.clone(),
        epsilon: args.epsilon,
        confidence: args.confidence.clone(),
        train: TrainConfig {
            learning_rate: args.lr,
            epochs: args.epochs,
            batch_size: args.batch_size,
            l2_lambda: args.l2,
            seed: args.seed,
        },
        standardize: !args.no_standardize,
        downsample: !args.no_downsample,
    };
    let artifact = train_artifact(&dataset, &opts)?;
    artifact.save(&args.save_model)?;
    println!(
        "trained {} ({}) on {} reviews, {} features -> {}",
        args.risk,
        artifact.risk.base,
        dataset.len(),
        artifact.feature_dim,
        args.save_model.display()
    );
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let dataset = args.data.load()?;
    let artifact = ModelArtifact::load(&args.load_model)?;
    let records: Vec<&ReviewRecord> = dataset.records().collect();
    let scores = score_records(&artifact, &records)?;
    let pred = predict_labels(&scores.raw, args.decision_threshold);
    let observed: Vec<BinaryLabel> = dataset.labels().into_iter().map(Into::into).collect();
    let mut targets = vec![("observed", observed)];
    if let Some(t) = &args.truth {
        targets.push(("truth", align_truth(&dataset, t)?));
    }
    println!("{}", dataset.summary(&args.data.name()));
    for (name, target) in &targets {
        let m = prf1(&pred, target)?;
        println!(
            "{name:<9} precision {:.4} recall {:.4} f1 {:.4} (tp {} fp {} fn {} tn {})",
            m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.tn
        );
    }
    if let Some(path) = &args.predictions {
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        writeln!(w, "id,score,squashed,prediction")?;
        for (i, r) in records.iter().enumerate() {
            writeln!(
                w,
                "{},{:.6},{:.6},{}",
                r.id,
                scores.raw[i],
                scores.squashed[i],
                pred[i].as_i8()
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<()> {
    let cfg = args.config()?;
    let report = run_compare(&cfg)?;
    let files = write_reports(&report, &args.out)?;
    print!("{}", text_report(&report));
    println!();
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn correlate(args: &CorrelateArgs) -> Result<()> {
    let dataset = args.data.load()?;
    let curve = age_helpfulness_curve(&dataset, args.bin_days)?;
    if let Some(out) = &args.output {
        std::fs::write(out, age_curve_csv("-", &curve))
            .with_context(|| format!("writing {}", out.display()))?;
    }
    let (p, s) = curve_correlations(&curve)?;
    println!("{}", dataset.summary(&args.data.name()));
    println!(
        "{} age bins of {} days: Pearson {p:.4}, Spearman {s:.4}",
        curve.len(),
        args.bin_days
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::Correlate(a) => correlate(a),
    }
}

/// Like `{:#}`, but skips causes whose text the outer message already carries.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // deliberately not reading RUST_LOG: runs depend only on flags and config
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            ExitCode::from(1)
        }
    }
}

