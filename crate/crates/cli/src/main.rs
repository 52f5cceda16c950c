//! `dsl`: train, apply, evaluate and benchmark deep super learner models.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dsl_core::benchmark::{align_classes, run_benchmark, BenchmarkReport};
use dsl_core::io::{self as dio, CsvOptions, LabelColumn, Vocabulary};
use dsl_core::learners::LearnerKind;
use dsl_core::{
    evaluate, predict, train, with_workers, Dataset, DslModel, EnsembleMode, LabelVector,
    LearnerSpec, MetricsRecord, TrainConfig,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_TRAINING: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "dsl",
    version,
    about = "Deep super learner for multi-class classification"
)]
struct Cli {
    /// Worker threads for training and prediction (default: DSL_WORKERS, else all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it to an archive
    Train(TrainArgs),
    /// Write class probabilities for every record as CSV
    Predict(PredictArgs),
    /// Print log loss and accuracy after each layer
    Evaluate(EvaluateArgs),
    /// Compare the deep super learner with its baselines on one split
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Label column name, or 0-based index when there is no such header
    #[arg(long, default_value = "label")]
    label_col: String,

    /// The CSV file has no header row
    #[arg(long)]
    no_header: bool,

    /// CSV field delimiter
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Args, Debug, Clone)]
struct EnsembleArgs {
    /// Number of cross-validation folds
    #[arg(long, default_value_t = 3)]
    folds: usize,

    /// Maximum number of layers
    #[arg(long, default_value_t = 20)]
    max_iterations: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Comma-separated base learners: lr, knn, rf, et, gbt
    #[arg(long, default_value = "lr,knn,rf,et,gbt")]
    learners: String,

    #[arg(long, value_enum, default_value_t = ModeArg::Deep)]
    mode: ModeArg,

    /// Refit each learner on all training records for prediction
    #[arg(long)]
    retrain_full: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    Deep,
    SingleLayer,
    SimpleAverage,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Table,
    Csv,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training data: a CSV file, or IMAGES,LABELS for IDX files
    #[arg(long)]
    data: String,

    #[command(flatten)]
    input: InputArgs,

    #[command(flatten)]
    ensemble: EnsembleArgs,

    /// Where to write the model archive
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,

    /// Records to score: a CSV file, or IMAGES[,LABELS] for IDX files
    #[arg(long)]
    data: String,

    #[command(flatten)]
    input: InputArgs,

    /// Output CSV (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,

    /// Labeled data: a CSV file, or IMAGES,LABELS for IDX files
    #[arg(long)]
    data: String,

    #[command(flatten)]
    input: InputArgs,

    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Training data: a CSV file, or IMAGES,LABELS for IDX files
    #[arg(long)]
    train: String,

    /// Test data in the same form; omit to split --train
    #[arg(long)]
    test: Option<String>,

    /// Stratified subset of the training data to use
    #[arg(long)]
    train_size: Option<usize>,

    /// Stratified subset of the test data (or held-out part of --train)
    #[arg(long)]
    test_size: Option<usize>,

    /// Seed for subsetting and splitting
    #[arg(long, default_value_t = 0)]
    split_seed: u64,

    /// Treat this CSV column as raw text and featurize it with TF-IDF
    #[arg(long)]
    text_col: Option<String>,

    /// TF-IDF vocabulary size
    #[arg(long, default_value_t = dio::DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,

    #[command(flatten)]
    input: InputArgs,

    #[command(flatten)]
    ensemble: EnsembleArgs,

    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Stage<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
    fn training(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_USAGE,
            error: e.into(),
        })
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_DATA,
            error: e.into(),
        })
    }

    fn training(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_TRAINING,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let workers = match cli.workers {
        Some(n) => Some(n),
        None => match std::env::var("DSL_WORKERS") {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| anyhow!("DSL_WORKERS must be a positive integer, got '{v}'"))
                    .usage()?,
            ),
            _ => None,
        },
    };
    with_workers(workers, || match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    })
    .usage()?
}

fn train_config(args: &EnsembleArgs) -> Result<TrainConfig, Failure> {
    let roster = args
        .learners
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<LearnerKind>().map(LearnerSpec::default_for))
        .collect::<Result<Vec<_>, _>>()
        .usage()?;
    let config = TrainConfig {
        folds: args.folds,
        roster,
        max_iterations: args.max_iterations,
        retrain_full: args.retrain_full,
        seed: args.seed,
        mode: match args.mode {
            ModeArg::Deep => EnsembleMode::Deep,
            ModeArg::SingleLayer => EnsembleMode::SingleLayer,
            ModeArg::SimpleAverage => EnsembleMode::SimpleAverage,
        },
    };
    config.validate().usage()?;
    Ok(config)
}

fn csv_options(
    input: &InputArgs,
    labeled: bool,
    class_names: Option<Vec<String>>,
) -> Result<CsvOptions, Failure> {
    let delimiter = u8::try_from(input.delimiter)
        .map_err(|_| anyhow!("delimiter must be a single ASCII character"))
        .usage()?;
    Ok(CsvOptions {
        label_column: labeled.then(|| LabelColumn::parse(&input.label_col)),
        has_header: !input.no_header,
        delimiter,
        class_names,
    })
}

/// `IMAGES,LABELS` names an IDX pair; anything else is a CSV file.
fn idx_pair(spec: &str) -> Option<(&str, &str)> {
    spec.split_once(',')
}

fn load_labeled(
    spec: &str,
    input: &InputArgs,
    class_names: Option<Vec<String>>,
) -> Result<Dataset, Failure> {
    let ds = match idx_pair(spec) {
        Some((images, labels)) => {
            dio::load_idx(images, labels).with_context(|| format!("loading {spec}"))
        }
        None => dio::load_csv_with(spec, &csv_options(input, true, class_names)?)
            .with_context(|| format!("loading {spec}")),
    }
    .data()?;
    Ok(ds)
}

fn labels_of(ds: &Dataset) -> Result<&LabelVector, Failure> {
    ds.require_labels().data()
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let config = train_config(&args.ensemble)?;
    let data = load_labeled(&args.data, &args.input, None)?;
    let model = train(&data, &config).training()?;
    let mut out = io::stdout().lock();
    for (t, layer) in model.layers().iter().enumerate() {
        let weights: Vec<String> = config
            .roster
            .iter()
            .zip(layer.weights.as_slice())
            .map(|(s, w)| format!("{}={w:.4}", s.kind().short_name()))
            .collect();
        let _ = writeln!(
            out,
            "layer {}: train log loss {:.4} weights {}",
            t + 1,
            layer.train_loss,
            weights.join(" ")
        );
    }
    dio::save_model(&model, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))
        .data()?;
    let _ = writeln!(
        out,
        "model with {} layer(s) written to {}",
        model.layers().len(),
        args.out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<DslModel, Failure> {
    dio::load_model(path)
        .with_context(|| format!("loading model {}", path.display()))
        .data()
}

fn cmd_predict(args: PredictArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let features = match idx_pair(&args.data) {
        Some((images, _)) => dio::load_idx_images(images),
        None if args.data.contains("idx3") => dio::load_idx_images(&args.data),
        None => {
            // a label column is dropped when present, so labeled files work too
            let with_label = dio::load_csv_with(&args.data, &csv_options(&args.input, true, None)?);
            match with_label {
                Ok(ds) => Ok(ds.features),
                Err(_) => dio::load_csv_with(&args.data, &csv_options(&args.input, false, None)?)
                    .map(|d| d.features),
            }
        }
    }
    .with_context(|| format!("loading {}", args.data))
    .data()?;
    let probs = predict(&model, &features).training()?;

    let mut text = String::new();
    let header: Vec<String> = if model.class_names().is_empty() {
        (0..model.n_classes()).map(|c| c.to_string()).collect()
    } else {
        model.class_names().to_vec()
    };
    let _ = writeln!(text, "{}", header.join(","));
    for row in probs.values().rows() {
        let cells: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(text, "{}", cells.join(","));
    }
    match &args.out {
        Some(path) => File::create(path)
            .and_then(|f| {
                let mut w = BufWriter::new(f);
                w.write_all(text.as_bytes())?;
                w.flush()
            })
            .with_context(|| format!("writing {}", path.display()))
            .data(),
        None => io::stdout().lock().write_all(text.as_bytes()).data(),
    }
}

fn metrics_table(rows: &[(String, MetricsRecord)], first_column: &str, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            let _ = writeln!(out, "{first_column},log_loss,accuracy");
            for (name, m) in rows {
                let _ = writeln!(out, "{name},{:.4},{:.2}", m.log_loss, 100.0 * m.accuracy);
            }
        }
        Format::Table => {
            let width = rows
                .iter()
                .map(|(n, _)| n.len())
                .chain([first_column.len()])
                .max()
                .unwrap_or(0);
            let _ = writeln!(
                out,
                "{first_column:<width$}  {:>8}  {:>9}",
                "log loss", "accuracy"
            );
            for (name, m) in rows {
                let _ = writeln!(
                    out,
                    "{name:<width$}  {:>8.4}  {:>8.2}%",
                    m.log_loss,
                    100.0 * m.accuracy
                );
            }
        }
    }
    out
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let names = (!model.class_names().is_empty()).then(|| model.class_names().to_vec());
    let data = load_labeled(&args.data, &args.input, names)?;
    let data = align_classes(&data, model.n_classes()).data()?;
    let records = evaluate(&model, &data).training()?;
    let rows: Vec<(String, MetricsRecord)> = records
        .into_iter()
        .enumerate()
        .map(|(t, m)| ((t + 1).to_string(), m))
        .collect();
    print!("{}", metrics_table(&rows, "layer", args.format));
    Ok(())
}

fn subset(ds: Dataset, size: Option<usize>, seed: u64) -> Result<Dataset, Failure> {
    match size {
        Some(n) if n < ds.n_rows() => Ok(ds.stratified_split(n, 0, seed).data()?.0),
        _ => Ok(ds),
    }
}

/// Loads a labeled text corpus; labels are numbered by first appearance in
/// `names`, which grows as new labels are seen.
fn load_text(
    spec: &str,
    input: &InputArgs,
    text_col: &str,
    names: &mut Vec<String>,
) -> Result<(Vec<Vec<String>>, Vec<usize>), Failure> {
    let (docs, raw) = dio::load_text_csv(
        spec,
        &LabelColumn::parse(&input.label_col),
        &LabelColumn::parse(text_col),
        !input.no_header,
    )
    .with_context(|| format!("loading {spec}"))
    .data()?;
    let labels = raw
        .into_iter()
        .map(|name| match names.iter().position(|n| *n == name) {
            Some(i) => i,
            None => {
                names.push(name);
                names.len() - 1
            }
        })
        .collect();
    Ok((docs, labels))
}

fn text_datasets(args: &BenchmarkArgs, text_col: &str) -> Result<(Dataset, Dataset), Failure> {
    let mut names = Vec::new();
    let (train_docs, train_labels) = load_text(&args.train, &args.input, text_col, &mut names)?;
    let (test_docs, test_labels) = match &args.test {
        Some(spec) => load_text(spec, &args.input, text_col, &mut names)?,
        None => (Vec::new(), Vec::new()),
    };
    let j = names.len();
    let vocab = Vocabulary::fit(&train_docs, args.vocab_size).data()?;
    let build = |docs: &[Vec<String>], labels: Vec<usize>| -> Result<Dataset, Failure> {
        let x = vocab.transform(docs).data()?;
        let y = LabelVector::new(labels, j).data()?;
        Ok(Dataset::labeled(x, y)
            .data()?
            .with_class_names(names.clone()))
    };
    let train_set = build(&train_docs, train_labels)?;
    if args.test.is_none() {
        return Ok((train_set.clone(), train_set));
    }
    Ok((train_set, build(&test_docs, test_labels)?))
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<(), Failure> {
    let config = train_config(&args.ensemble)?;
    let (train_set, test_set) = match (&args.text_col, &args.test) {
        (Some(col), Some(_)) => {
            let (tr, te) = text_datasets(&args, col)?;
            (
                subset(tr, args.train_size, args.split_seed)?,
                subset(te, args.test_size, args.split_seed)?,
            )
        }
        (Some(_), None) => {
            return Err(anyhow!(
                "text benchmarks need --test: the vocabulary is fit on the training corpus"
            ))
            .usage()
        }
        (None, Some(test)) => {
            let tr = load_labeled(&args.train, &args.input, None)?;
            let names = idx_pair(&args.train)
                .is_none()
                .then(|| tr.class_names.clone());
            let te = load_labeled(test, &args.input, names)?;
            (
                subset(tr, args.train_size, args.split_seed)?,
                subset(te, args.test_size, args.split_seed)?,
            )
        }
        (None, None) => {
            let all = load_labeled(&args.train, &args.input, None)?;
            let n = labels_of(&all)?.len();
            let test_size = args.test_size.unwrap_or(n / 5);
            let train_size = args.train_size.unwrap_or(n - test_size);
            all.stratified_split(train_size, test_size, args.split_seed)
                .data()?
        }
    };
    let report = run_benchmark(&train_set, &test_set, &config).training()?;
    print_benchmark(&report, train_set.n_rows(), test_set.n_rows(), args.format);
    Ok(())
}

fn print_benchmark(report: &BenchmarkReport, n_train: usize, n_test: usize, format: Format) {
    let rows: Vec<(String, MetricsRecord)> = report
        .rows
        .iter()
        .map(|r| (r.method.clone(), r.metrics))
        .collect();
    print!("{}", metrics_table(&rows, "method", format));
    if format == Format::Table {
        let losses: Vec<String> = report
            .dsl
            .train_losses()
            .iter()
            .map(|l| format!("{l:.4}"))
            .collect();
        println!(
            "\n{n_train} training / {n_test} test records; {} layer(s), train log loss by layer: {}; {:.1}s",
            report.dsl.layers().len(),
            losses.join(", "),
            report.elapsed.as_secs_f64()
        );
    }
}
