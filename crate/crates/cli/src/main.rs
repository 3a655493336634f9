use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use starcert::bench::{
    aggregate, per_class_table, read_rows_csv, run_benchmark, select_samples, write_aggregates_csv,
    write_per_class_csv, write_rows_csv, BenchPlan, Method, PerturbMode, SampleSelection,
};
use starcert::data::Dataset;
use starcert::network::{load_model, Network};
use starcert::preprocess::{apply_scaler, bytes_to_image, fit_scaler, normalize, resize_nearest, ScalerParams};
use starcert::specgen::{build_feature_spec, build_pixel_spec, FeatureMask, FeatureSchema, InputSpec};
use starcert::trainer::{evaluate, parse_arch, train, TrainConfig};
use starcert::verifier::{verify_exact, verify_query, ExactBudget, Verdict, VerifyConfig};
use starcert::vnnlib::{batch_emit, parse, BatchMode};

#[derive(Parser)]
#[command(name = "starcert", version, about = "Robustness verification for neural-network classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a binary file into a grayscale P5 image.
    Byteplot(ByteplotArgs),
    /// Standardize the feature columns of a CSV dataset.
    Scale(ScaleArgs),
    /// Train a small classifier and write its model JSON.
    Train(TrainArgs),
    /// Write one VNN-LIB robustness query per sample, mask and epsilon.
    GenVnnlib(GenArgs),
    /// Verify a single query; prints holds, violated or timeout.
    Verify(VerifyArgs),
    /// Sweep models, masks and epsilons over a verification set.
    Bench(BenchArgs),
    /// Recompute aggregate and per-class tables from a report CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct ByteplotArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Nearest-neighbor resize to N×N after conversion.
    #[arg(long)]
    resize: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the normalized pixel vector as one CSV row.
    #[arg(long)]
    vector: Option<PathBuf>,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the fitted parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Apply existing parameters instead of fitting.
    #[arg(long, conflicts_with = "params")]
    apply: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Hidden layers, e.g. `16,8` or `conv4,conv16`.
    #[arg(long, default_value = "")]
    arch: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Input shape `C,H,W` for conv layers.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    input_shape: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Held-out set to report metrics on.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Selection {
    /// Draw this many samples uniformly without replacement.
    #[arg(long)]
    samples: Option<usize>,
    /// Draw this many samples from every class.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Selection {
    fn pick(&self, data: &Dataset) -> Result<Vec<starcert::specgen::Sample>> {
        let sel = SampleSelection { count: self.samples, per_class: self.per_class, seed: self.seed };
        Ok(select_samples(data, &sel)?)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    data: PathBuf,
    /// Feature schema; pixel mode when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Defaults to all four presets in feature mode.
    #[arg(long)]
    mask: Vec<FeatureMask>,
    #[arg(long, required = true)]
    eps: Vec<f64>,
    #[command(flatten)]
    select: Selection,
    /// Output count; taken from the model when given, else from the labels.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset name used in file names; defaults to the data file stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Exact,
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    /// Falsifier sample count.
    #[arg(long, default_value_t = 500)]
    nr: usize,
    /// Per-query timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
}

impl MethodArgs {
    fn method(&self, seed: u64) -> Method {
        match self.method {
            MethodArg::Auto => {
                Method::Auto(VerifyConfig { num_samples: self.nr, timeout_s: self.timeout, seed, ..Default::default() })
            }
            MethodArg::Exact => Method::Exact(ExactBudget { timeout_s: self.timeout, ..Default::default() }),
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required_unless_present = "data", conflicts_with_all = ["data", "index", "eps", "schema"])]
    vnnlib: Option<PathBuf>,
    #[arg(long, requires_all = ["index", "eps"])]
    data: Option<PathBuf>,
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    mask: FeatureMask,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    method: MethodArgs,
    /// Write the verdict JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    mask: Vec<FeatureMask>,
    #[arg(long, required = true)]
    eps: Vec<f64>,
    #[command(flatten)]
    select: Selection,
    #[command(flatten)]
    method: MethodArgs,
    /// Concurrent queries; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory for report.csv, aggregates.csv and per_class.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
    /// Training set whose class counts go into the per-class table.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Byteplot(a) => byteplot(a),
        Command::Scale(a) => scale(a),
        Command::Train(a) => train_cmd(a),
        Command::GenVnnlib(a) => gen_vnnlib(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_net(path: &Path) -> Result<Network> {
    load_model(&read_text(path)?).with_context(|| format!("loading model {}", path.display()))
}

fn load_schema(path: Option<&PathBuf>) -> Result<Option<FeatureSchema>> {
    path.map(|p| FeatureSchema::from_json(&read_text(p)?).with_context(|| format!("loading schema {}", p.display())))
        .transpose()
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn default_masks(masks: Vec<FeatureMask>) -> Vec<FeatureMask> {
    if masks.is_empty() {
        FeatureMask::PRESETS.to_vec()
    } else {
        masks
    }
}

fn byteplot(a: ByteplotArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut img = bytes_to_image(&bytes, a.width)?;
    if let Some(n) = a.resize {
        img = resize_nearest(&img, n, n)?;
    }
    fs::write(&a.out, img.to_pgm()).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.vector {
        let row: Vec<String> = normalize(&img).iter().map(f64::to_string).collect();
        fs::write(path, row.join(",") + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}x{}", img.width(), img.height());
    Ok(())
}

fn scale(a: ScaleArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let params = match &a.apply {
        Some(p) => ScalerParams::from_json(&read_text(p)?)?,
        None => fit_scaler(&data.rows)?,
    };
    let rows = data.rows.iter().map(|r| apply_scaler(&params, r)).collect::<Result<Vec<_>, _>>()?;
    Dataset::new(data.feature_names, rows, data.labels)?.to_csv_path(&a.out)?;
    if let Some(p) = &a.params {
        fs::write(p, params.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let cfg = TrainConfig {
        hidden: parse_arch(&a.arch)?,
        input_shape: a.input_shape.map(|s| [s[0], s[1], s[2]]),
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        ..Default::default()
    };
    let out = train(&data, &cfg)?;
    fs::write(&a.out, out.doc.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    println!("train accuracy {:.4}", out.train_accuracy);
    if let Some(test) = &a.test {
        let m = evaluate(&out.network, &load_data(test)?)?;
        println!(
            "test accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
            m.accuracy, m.precision_macro, m.recall_macro, m.f1
        );
    }
    Ok(())
}

fn gen_vnnlib(a: GenArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let samples = a.select.pick(&data)?;
    let n_out = match &a.model {
        Some(m) => load_net(m)?.num_classes(),
        None => data.num_classes(),
    };
    let name = a.name.unwrap_or_else(|| stem(&a.data));
    let schema = load_schema(a.schema.as_ref())?;
    let masks = default_masks(a.mask);
    let mode = match &schema {
        Some(schema) => BatchMode::Features { schema, masks: &masks },
        None => BatchMode::Pixels,
    };
    let rows = batch_emit(&name, &samples, &a.eps, &mode, n_out, &a.out)?;
    println!("{} files written to {}", rows.len(), a.out.display());
    Ok(())
}

fn query_from_data(a: &VerifyArgs, data: &Path) -> Result<InputSpec> {
    let (index, eps) = (a.index.unwrap(), a.eps.unwrap());
    let sample = load_data(data)?.sample(index).ok_or_else(|| anyhow!("no sample at index {index}"))?;
    Ok(match load_schema(a.schema.as_ref())? {
        Some(schema) => build_feature_spec(&sample.x, sample.label, eps, &schema, &a.mask)?,
        None => {
            if eps < 0.0 || eps.fract() != 0.0 {
                bail!("pixel epsilon must be a non-negative integer k (meaning k/255), got {eps}");
            }
            build_pixel_spec(&sample.x, sample.label, eps as u32)?
        }
    })
}

fn verify(a: VerifyArgs) -> Result<()> {
    let net = load_net(&a.model)?;
    let spec = match (&a.vnnlib, &a.data) {
        (Some(path), _) => parse(&read_text(path)?)
            .and_then(|p| p.to_input_spec())
            .with_context(|| format!("reading query {}", path.display()))?,
        (None, Some(data)) => query_from_data(&a, data)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    let verdict: Verdict = match a.method.method(a.seed) {
        Method::Auto(cfg) => verify_query(&net, &spec, &cfg)?,
        Method::Exact(budget) => verify_exact(&net, &spec, &budget)?,
    };
    if let Some(out) = &a.out {
        fs::write(out, verdict.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{}", verdict.code.word());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let models = a.model.iter().map(|p| Ok((stem(p), load_net(p)?))).collect::<Result<Vec<_>>>()?;
    let mode = match load_schema(a.schema.as_ref())? {
        Some(schema) => PerturbMode::Features { schema, masks: default_masks(a.mask) },
        None => PerturbMode::Pixels,
    };
    let plan = BenchPlan {
        models,
        samples: a.select.pick(&data)?,
        mode,
        epsilons: a.eps,
        method: a.method.method(a.select.seed),
        workers: a.workers,
    };
    let report = run_benchmark(&plan)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_rows_csv(&report.rows, create(&a.out.join("report.csv"))?)?;
    write_aggregates_csv(&report.aggregates, create(&a.out.join("aggregates.csv"))?)?;
    let counts = class_counts(&data);
    write_per_class_csv(&per_class_table(&report.rows, Some(&counts)), create(&a.out.join("per_class.csv"))?)?;
    write_aggregates_csv(&report.aggregates, std::io::stdout().lock())?;
    Ok(())
}

fn class_counts(data: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; data.num_classes()];
    for &y in &data.labels {
        counts[y] += 1;
    }
    counts
}

fn report(a: ReportArgs) -> Result<()> {
    let file = File::open(&a.report).with_context(|| format!("opening {}", a.report.display()))?;
    let rows = read_rows_csv(file)?;
    let aggs = aggregate(&rows);
    let counts = a.data.as_deref().map(load_data).transpose()?.map(|d| class_counts(&d));
    let table = per_class_table(&rows, counts.as_deref());
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_aggregates_csv(&aggs, create(&dir.join("aggregates.csv"))?)?;
            write_per_class_csv(&table, create(&dir.join("per_class.csv"))?)?;
        }
        None => {
            write_aggregates_csv(&aggs, std::io::stdout().lock())?;
        }
    }
    Ok(())
}
