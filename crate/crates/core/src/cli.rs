//! Command-line front end. Every run writes a JSON manifest with the
//! effective arguments, the seed and SHA-256 hashes of inputs and outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attacks::{run_attack, AttackSpec};
use crate::container::write_atomic;
use crate::data::{gen_noise_ood_in, load_path, BlobSpec, CsvOptions, LabeledDataset, NoiseKind};
use crate::error::Error;
use crate::eval::{evaluate, gga_features, AurocMode, EvalOptions, Scorer};
use crate::features::{write_features_csv, FeatureRow};
use crate::landscape::{csm_surface, symmetric_axis, write_zeta_csv, zeta_stats, SurfaceOptions, ZetaClass, ZetaOptions, ZetaRow, DEFAULT_SIGMAS};
use crate::loda::{LodaConfig, LodaDetector};
use crate::nn::{accuracy, train, Architecture, LossKind, Model, TrainConfig};
use crate::saliency::{csm, CsmOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "gga", version, about = "Geometric gradient analysis toolkit", args_override_self = true)]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML file of `flag = value` pairs; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for relative output paths and manifests.
    #[arg(long, global = true, env = "GGA_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate a synthetic dataset (Gaussian blobs or noise images).
    Gen(GenArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Attack a dataset and save the adversarial batch.
    Attack(AttackArgs),
    /// Dump the cosine-similarity matrix of one sample.
    Csm(CsmArgs),
    /// Fit a LODA detector on features of correctly classified samples.
    FitDetector(FitArgs),
    /// Score a dataset with a fitted detector.
    Detect(DetectArgs),
    /// Evaluate detection of untrustworthy sets against a clean set.
    Eval(EvalArgs),
    /// Loss-landscape probes: ζ statistics or a mean-S1 surface.
    Landscape(LandscapeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// `blobs`, `uniform`, `gaussian` or `gaussian:<mean>`.
    #[arg(long, default_value = "blobs")]
    pub kind: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Minimum center distance in cluster standard deviations.
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.05)]
    pub spread: f64,
    /// Seed of the sample draw (blob centers use `--seed`); defaults to seed + 1.
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Per-sample shape of noise images, e.g. `1,28,28`.
    #[arg(long, default_value = "1,28,28", value_delimiter = ',')]
    pub shape: Vec<usize>,
    /// Tag stored in the dataset.
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(short, long, default_value = "data.ggad")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DataOpts {
    /// Per-sample shape for CSV data, e.g. `1,28,28`.
    #[arg(long, value_delimiter = ',')]
    pub csv_shape: Option<Vec<usize>>,
}

impl DataOpts {
    fn csv(&self) -> CsvOptions {
        CsvOptions {
            input_shape: self.csv_shape.clone(),
            domain: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training data (container, IDX or CSV).
    #[arg(long)]
    pub data: String,
    /// Held-out data for reporting accuracy.
    #[arg(long)]
    pub test: Option<String>,
    /// `cnn`, `cnn:c1,c2,hidden` or `mlp:w1,w2,...`; defaults to `cnn` for images and `mlp:32,32` otherwise.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value = "0.3,0.6,0.8", value_delimiter = ',')]
    pub lr_drop_points: Vec<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub lr_drop_factor: f64,
    /// Maximum random pixel shift for image augmentation.
    #[arg(long, default_value_t = 0)]
    pub shift: usize,
    #[command(flatten)]
    pub data_opts: DataOpts,
    #[arg(short, long, default_value = "model.ggam")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: String,
    /// Attack spec, e.g. `pgd:linf:eps=0.3:iters=70`.
    #[arg(long)]
    pub spec: String,
    /// Also attack misclassified samples.
    #[arg(long)]
    pub all: bool,
    /// Attack only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub data_opts: DataOpts,
    #[arg(short, long, default_value = "adversarial.ggad")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeatureOpts {
    /// Use only the N most probable classes.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Loss inside the saliency gradients (`sce` or `mse`).
    #[arg(long, default_value = "sce")]
    pub saliency_loss: String,
}

impl FeatureOpts {
    fn csm(&self) -> Result<CsmOptions, Error> {
        Ok(CsmOptions {
            top_n: self.top_n,
            loss: self.saliency_loss.parse()?,
        })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CsmArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: String,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[command(flatten)]
    pub features: FeatureOpts,
    /// Also write a PGM image of the matrix.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Pixels per matrix cell in the PGM image.
    #[arg(long, default_value_t = 16)]
    pub cell: usize,
    #[command(flatten)]
    pub data_opts: DataOpts,
    /// CSV output; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training data; only correctly classified labelled samples are used.
    #[arg(long)]
    pub data: String,
    #[arg(long, default_value_t = 100)]
    pub projections: usize,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Skip feature standardization.
    #[arg(long)]
    pub no_standardize: bool,
    /// Append the predicted-class probability to the features.
    #[arg(long)]
    pub with_softmax: bool,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
    /// Use at most N training samples.
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Export the training features as CSV.
    #[arg(long)]
    pub features_csv: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureOpts,
    #[command(flatten)]
    pub data_opts: DataOpts,
    #[arg(short, long, default_value = "detector.ggal")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub data: String,
    #[command(flatten)]
    pub data_opts: DataOpts,
    #[arg(short, long, default_value = "scores.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Fitted detector; required unless `--msp`.
    #[arg(long)]
    pub detector: Option<PathBuf>,
    /// Clean labelled test data.
    #[arg(long)]
    pub clean: String,
    /// Untrustworthy sets (attack batches or OOD data), tagged by their dataset tag.
    #[arg(long, num_args = 1.., required = true)]
    pub untrusted: Vec<String>,
    /// Score with the maximum softmax probability instead of the detector.
    #[arg(long)]
    pub msp: bool,
    /// `pooled` or `per-source`.
    #[arg(long, default_value = "pooled")]
    pub auroc: String,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
    #[command(flatten)]
    pub data_opts: DataOpts,
    /// Output prefix: writes PREFIX.json, PREFIX.csv and PREFIX-tags.csv.
    #[arg(short, long, default_value = "report")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LandscapeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: String,
    /// `zeta` or `surface`.
    #[arg(long, default_value = "zeta")]
    pub probe: String,
    #[arg(long, default_value = "0.01,0.05,0.1,0.5,1", value_delimiter = ',')]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub injections: usize,
    /// Number of samples probed for ζ.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Class whose loss defines ζ: `predicted` or `true`.
    #[arg(long, default_value = "predicted")]
    pub class: String,
    /// Sample used for the surface.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Attack giving the surface direction.
    #[arg(long, default_value = "pgd")]
    pub spec: String,
    /// Grid points per axis.
    #[arg(long, default_value_t = 41)]
    pub grid: usize,
    /// Grid half-width in multiples of the attack perturbation norm.
    #[arg(long, default_value_t = 2.0)]
    pub extent: f64,
    #[command(flatten)]
    pub features: FeatureOpts,
    #[command(flatten)]
    pub data_opts: DataOpts,
    #[arg(short, long, default_value = "landscape.csv")]
    pub output: PathBuf,
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::RequiresSoftplus(_) | Error::ClassOutOfRange { .. } => EXIT_USAGE,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::Undefined(_) => EXIT_NUMERIC,
            Error::ShapeMismatch { .. }
            | Error::Shape(_)
            | Error::Format { .. }
            | Error::Empty(_)
            | Error::Io(_)
            | Error::Json(_) => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.message.is_empty() {
                eprint!("{}", e.message);
            }
            return e.code;
        }
    };
    match execute(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn clap_exit(e: clap::Error) -> CliError {
    use clap::error::ErrorKind;
    let code = match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
        _ => EXIT_USAGE,
    };
    if code == EXIT_OK {
        let _ = e.print();
        return CliError {
            code,
            message: String::new(),
        };
    }
    CliError {
        code,
        message: e.render().to_string(),
    }
}

const GLOBAL_VALUE_FLAGS: [&str; 3] = ["--seed", "--config", "--out-dir"];

/// Position of the subcommand token in `argv`.
fn subcommand_position(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let token = argv[i].to_string_lossy();
        if GLOBAL_VALUE_FLAGS.contains(&token.as_ref()) {
            i += 2;
            continue;
        }
        if !token.starts_with('-') {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn toml_value_args(flag: &str, value: &toml::Value) -> Result<Vec<String>, CliError> {
    let scalar = |v: &toml::Value| -> Result<String, CliError> {
        match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            other => Err(usage(format!("config key `{flag}` has unsupported value {other}"))),
        }
    };
    match value {
        toml::Value::Boolean(true) => Ok(vec![format!("--{flag}")]),
        toml::Value::Boolean(false) => Ok(Vec::new()),
        toml::Value::Array(items) => {
            let values = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            let mut out = vec![format!("--{flag}")];
            if values.is_empty() {
                return Ok(Vec::new());
            }
            out.extend(values);
            Ok(out)
        }
        v => Ok(vec![format!("--{flag}"), scalar(v)?]),
    }
}

/// Arguments contributed by a config file for subcommand `name`.
fn config_args(path: &Path, name: &str) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("cannot read config {}: {e}", path.display()),
    })?;
    let table: toml::Table = text.parse().map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("cannot parse config {}: {e}", path.display()),
    })?;
    let root = Cli::command();
    let longs = |cmd: &clap::Command| -> Vec<String> {
        cmd.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect()
    };
    let sub = root
        .find_subcommand(name)
        .ok_or_else(|| usage(format!("unknown subcommand `{name}`")))?;
    let own = longs(sub);
    let globals = longs(&root);
    let mut args = Vec::new();
    for (key, value) in &table {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err(usage("config files cannot include other config files"));
        }
        if own.contains(&flag) || globals.contains(&flag) {
            args.extend(toml_value_args(&flag, value)?);
        } else if !root.get_subcommands().any(|c| longs(c).contains(&flag)) {
            return Err(usage(format!("unknown config key `{key}`")));
        }
    }
    Ok(args)
}

/// Parses the command line, merging a config file underneath explicit flags.
fn parse(argv: &[OsString]) -> Result<Cli, CliError> {
    let first = Cli::try_parse_from(argv).map_err(clap_exit)?;
    let Some(config) = &first.config else {
        return Ok(first);
    };
    let pos = subcommand_position(argv).ok_or_else(|| usage("missing subcommand"))?;
    let name = argv[pos].to_string_lossy().to_string();
    let mut merged: Vec<OsString> = vec![argv[0].clone(), argv[pos].clone()];
    merged.extend(config_args(config, &name)?.into_iter().map(OsString::from));
    merged.extend(argv[1..pos].iter().cloned());
    merged.extend(argv[pos + 1..].iter().cloned());
    Cli::try_parse_from(&merged).map_err(clap_exit)
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    seed: u64,
    argv: Vec<String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    details: serde_json::Value,
}

struct Run<'a> {
    cli: &'a Cli,
    argv: Vec<String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    details: serde_json::Map<String, serde_json::Value>,
}

impl<'a> Run<'a> {
    fn input(&mut self, spec: &str) -> Result<(), CliError> {
        for part in spec.split(',') {
            let p = Path::new(part);
            if p.is_file() {
                self.inputs.insert(part.to_string(), sha256_file(p)?);
            }
        }
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    fn out(&self, p: &Path) -> Result<PathBuf, CliError> {
        let path = resolve(&self.cli.out_dir, p);
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        Ok(path)
    }

    fn write_manifest(self, primary: Option<&Path>, name: &str) -> Result<(), CliError> {
        let path = match primary {
            Some(p) => {
                let mut s = p.as_os_str().to_owned();
                s.push(".manifest.json");
                PathBuf::from(s)
            }
            None => self.out(Path::new(&format!("{name}.manifest.json")))?,
        };
        let manifest = Manifest {
            tool: "gga",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.cli.command,
            seed: self.cli.seed,
            argv: self.argv,
            inputs: self.inputs,
            outputs: self.outputs,
            details: serde_json::Value::Object(self.details),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
        write_atomic(&path, text.as_bytes())?;
        Ok(())
    }
}

fn context<T>(what: impl std::fmt::Display, r: Result<T, Error>) -> Result<T, CliError> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{what}: {}", err.message);
        err
    })
}

fn load_data(run: &mut Run<'_>, spec: &str, opts: &DataOpts) -> Result<LabeledDataset, CliError> {
    let ds = context(spec, load_path(spec, &opts.csv()))?;
    run.input(spec)?;
    Ok(ds)
}

fn load_model(run: &mut Run<'_>, path: &Path) -> Result<Model, CliError> {
    let model = context(path.display(), Model::load(path))?;
    run.input(&path.to_string_lossy())?;
    Ok(model)
}

fn load_detector(run: &mut Run<'_>, path: &Path) -> Result<LodaDetector, CliError> {
    let det = context(path.display(), LodaDetector::load(path))?;
    run.input(&path.to_string_lossy())?;
    Ok(det)
}

fn parse_attack(text: &str, seed: u64) -> Result<AttackSpec, CliError> {
    let mut spec: AttackSpec = text.parse()?;
    if !text.split(':').any(|f| f.trim().starts_with("seed=")) {
        spec.config.seed = seed;
    }
    Ok(spec)
}

fn execute(cli: &Cli, argv: &[OsString]) -> Result<(), CliError> {
    let mut run = Run {
        cli,
        argv: argv.iter().map(|a| a.to_string_lossy().to_string()).collect(),
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
        details: serde_json::Map::new(),
    };
    fs::create_dir_all(&cli.out_dir)?;
    let seed = cli.seed;
    match &cli.command {
        Command::Gen(a) => {
            let ds = if a.kind == "blobs" {
                let spec = BlobSpec {
                    classes: a.classes,
                    dim: a.dim,
                    separation: a.separation,
                    spread: a.spread,
                    seed,
                };
                spec.sample(a.n, a.sample_seed.unwrap_or(seed.wrapping_add(1)))?
            } else {
                let kind: NoiseKind = a.kind.parse()?;
                gen_noise_ood_in(&a.shape, a.n, kind, seed, (0.0, 1.0))?
            };
            let ds = match &a.tag {
                Some(t) => ds.with_tag(t.clone()),
                None => ds,
            };
            let out = run.out(&a.output)?;
            ds.save(&out)?;
            run.output(&out)?;
            eprintln!("wrote {} samples to {}", ds.len(), out.display());
            run.write_manifest(Some(&out), "gen")
        }
        Command::Train(a) => {
            let data = load_data(&mut run, &a.data, &a.data_opts)?;
            let shape = data.input_shape().ok_or_else(|| Error::Empty("training set".into()))?.to_vec();
            let classes = data.num_classes();
            let arch: Architecture = match &a.arch {
                Some(s) => s.parse()?,
                None if shape.len() == 3 => Architecture::default(),
                None => Architecture::Mlp { hidden: vec![32, 32] },
            };
            let model = arch.build(&shape, classes, seed)?;
            let cfg = TrainConfig {
                learning_rate: a.lr,
                momentum: a.momentum,
                batch_size: a.batch_size,
                epochs: a.epochs,
                lr_drop_points: a.lr_drop_points.clone(),
                lr_drop_factor: a.lr_drop_factor,
                seed,
                shift_augment: a.shift,
            };
            let (model, history) = train(&model, &data, &cfg)?;
            if let Some(last) = history.last() {
                eprintln!("final epoch: loss {:.5}, train accuracy {:.4}", last.mean_loss, last.train_accuracy);
            }
            run.detail("history", &history);
            run.detail("train_accuracy", accuracy(&model, &data)?);
            if let Some(test) = &a.test {
                let test = load_data(&mut run, test, &a.data_opts)?;
                let acc = accuracy(&model, &test)?;
                eprintln!("test accuracy {acc:.4}");
                run.detail("test_accuracy", acc);
            }
            let out = run.out(&a.output)?;
            model.save(&out)?;
            run.output(&out)?;
            run.write_manifest(Some(&out), "train")
        }
        Command::Attack(a) => {
            let model = load_model(&mut run, &a.model)?;
            let mut data = load_data(&mut run, &a.data, &a.data_opts)?;
            if let Some(n) = a.limit {
                data = data.take(n);
            }
            let spec = parse_attack(&a.spec, seed)?;
            let batch = run_attack(&model, &data, &spec, !a.all)?;
            eprintln!(
                "{}: {} of {} attacks succeeded",
                spec.tag(),
                batch.success_count(),
                batch.results.len()
            );
            run.detail("spec", spec.to_string());
            run.detail("attempted", batch.results.len());
            run.detail("successful", batch.success_count());
            let out = run.out(&a.output)?;
            batch.to_dataset()?.save(&out)?;
            run.output(&out)?;
            run.write_manifest(Some(&out), "attack")
        }
        Command::Csm(a) => {
            let model = load_model(&mut run, &a.model)?;
            let data = load_data(&mut run, &a.data, &a.data_opts)?;
            let x = data
                .inputs
                .get(a.index)
                .ok_or_else(|| usage(format!("index {} out of range for {} samples", a.index, data.len())))?;
            let m = csm(&model, x, &a.features.csm()?)?;
            let text = m.to_csv();
            let primary = match &a.output {
                Some(p) => {
                    let out = run.out(p)?;
                    write_atomic(&out, text.as_bytes())?;
                    run.output(&out)?;
                    Some(out)
                }
                None => {
                    print!("{text}");
                    None
                }
            };
            if let Some(p) = &a.pgm {
                let out = run.out(p)?;
                write_atomic(&out, &m.to_pgm(a.cell))?;
                run.output(&out)?;
            }
            run.write_manifest(primary.as_deref(), "csm")
        }
        Command::FitDetector(a) => {
            let model = load_model(&mut run, &a.model)?;
            let data = load_data(&mut run, &a.data, &a.data_opts)?;
            let mut xs = Vec::new();
            let mut labels = Vec::new();
            for (i, x) in data.inputs.iter().enumerate() {
                if a.max_samples.is_some_and(|m| xs.len() >= m) {
                    break;
                }
                if let Some(y) = data.label(i) {
                    if model.predict(x)? == y {
                        xs.push(x.clone());
                        labels.push(y as i64);
                    }
                }
            }
            let csm_opts = a.features.csm()?;
            let feats = gga_features(&model, &xs, &csm_opts)?;
            let vectors: Vec<Vec<f64>> = feats.iter().map(|f| f.to_vec(a.with_softmax)).collect();
            let cfg = LodaConfig {
                projections: a.projections,
                bins: a.bins,
                standardize: !a.no_standardize,
                seed,
            };
            let mut det = LodaDetector::fit(&vectors, &cfg)?;
            let threshold = det.calibrate(&det.score_batch(&vectors)?, a.tpr)?;
            det.metadata.insert("top_n".into(), a.features.top_n.map(|n| n.to_string()).unwrap_or_default());
            det.metadata.insert("saliency_loss".into(), csm_opts.loss.to_string());
            det.metadata.insert("with_softmax".into(), a.with_softmax.to_string());
            eprintln!("fitted on {} samples, threshold {threshold}", vectors.len());
            run.detail("training_samples", vectors.len());
            run.detail("threshold", threshold);
            if let Some(p) = &a.features_csv {
                let rows: Vec<FeatureRow> = feats
                    .iter()
                    .zip(&labels)
                    .map(|(f, &label)| FeatureRow {
                        features: *f,
                        label,
                        source_tag: "clean".into(),
                    })
                    .collect();
                let mut buf = Vec::new();
                write_features_csv(&mut buf, &rows)?;
                let out = run.out(p)?;
                write_atomic(&out, &buf)?;
                run.output(&out)?;
            }
            let out = run.out(&a.output)?;
            det.save(&out)?;
            run.output(&out)?;
            run.write_manifest(Some(&out), "fit-detector")
        }
        Command::Detect(a) => {
            let model = load_model(&mut run, &a.model)?;
            let det = load_detector(&mut run, &a.detector)?;
            let data = load_data(&mut run, &a.data, &a.data_opts)?;
            let (csm_opts, with_softmax) = detector_features(&det)?;
            let feats = gga_features(&model, &data.inputs, &csm_opts)?;
            let mut text = String::from("index,score,flagged,predicted_class,label\n");
            let mut flagged = 0;
            for (i, f) in feats.iter().enumerate() {
                let s = det.score(&f.to_vec(with_softmax))?;
                let flag = det.is_flagged(s)?;
                flagged += usize::from(flag);
                text.push_str(&format!("{i},{s},{flag},{},{}\n", f.predicted_class, data.labels[i]));
            }
            eprintln!("flagged {flagged} of {} samples", feats.len());
            run.detail("flagged", flagged);
            let out = run.out(&a.output)?;
            write_atomic(&out, text.as_bytes())?;
            run.output(&out)?;
            run.write_manifest(Some(&out), "detect")
        }
        Command::Eval(a) => {
            let model = load_model(&mut run, &a.model)?;
            let clean = load_data(&mut run, &a.clean, &a.data_opts)?;
            let mut untrusted = Vec::new();
            for u in &a.untrusted {
                untrusted.push(load_data(&mut run, u, &a.data_opts)?);
            }
            let opts = EvalOptions {
                tpr: a.tpr,
                auroc_mode: a.auroc.parse::<AurocMode>()?,
            };
            let det;
            let scorer = if a.msp {
                Scorer::Msp
            } else {
                let path = a.detector.as_ref().ok_or_else(|| usage("eval needs --detector or --msp"))?;
                det = load_detector(&mut run, path)?;
                let (csm, with_softmax) = detector_features(&det)?;
                Scorer::Gga {
                    detector: &det,
                    csm,
                    with_softmax,
                }
            };
            let mut report = evaluate(&model, &scorer, &clean, &untrusted, &opts)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            report.metadata.insert("scorer".into(), if a.msp { "msp" } else { "gga" }.into());
            report.metadata.insert("seed".into(), seed.to_string());
            report.metadata.insert("model_sha256".into(), sha256_file(&a.model)?);
            if let Some(d) = &a.detector {
                report.metadata.insert("detector_sha256".into(), sha256_file(d)?);
            }
            for u in &untrusted {
                if let Some(spec) = u.metadata.get("attack") {
                    report.metadata.insert(format!("attack:{}", u.tag), spec.clone());
                }
            }
            let prefix = run.out(&a.output)?;
            let with_ext = |ext: &str| {
                let mut s = prefix.as_os_str().to_owned();
                s.push(ext);
                PathBuf::from(s)
            };
            let json = with_ext(".json");
            write_atomic(&json, report.to_json()?.as_bytes())?;
            let csv = with_ext(".csv");
            write_atomic(&csv, report.to_csv().as_bytes())?;
            let tags = with_ext("-tags.csv");
            write_atomic(&tags, report.tags_csv().as_bytes())?;
            for p in [&json, &csv, &tags] {
                run.output(p)?;
            }
            eprint!("{}", report.to_csv());
            run.write_manifest(Some(&json), "eval")
        }
        Command::Landscape(a) => {
            let model = load_model(&mut run, &a.model)?;
            let data = load_data(&mut run, &a.data, &a.data_opts)?;
            let out = run.out(&a.output)?;
            let mut buf = Vec::new();
            match a.probe.as_str() {
                "zeta" => {
                    let class = match a.class.as_str() {
                        "predicted" => ZetaClass::Predicted,
                        "true" => ZetaClass::True,
                        other => return Err(usage(format!("unknown ζ class `{other}`"))),
                    };
                    let sigmas = if a.sigmas.is_empty() { DEFAULT_SIGMAS.to_vec() } else { a.sigmas.clone() };
                    let loss: LossKind = a.features.saliency_loss.parse()?;
                    let mut rows = Vec::new();
                    for i in (0..data.len()).filter(|&i| data.label(i).is_some()).take(a.samples) {
                        let y = data.label(i).expect("labelled");
                        for (k, &sigma) in sigmas.iter().enumerate() {
                            let opts = ZetaOptions {
                                sigma,
                                injections: a.injections,
                                class,
                                loss,
                                seed: crate::attacks::sample_seed(seed, i * sigmas.len() + k),
                            };
                            rows.push(ZetaRow {
                                sample: i,
                                stats: zeta_stats(&model, &data.inputs[i], y, &opts)?,
                            });
                        }
                    }
                    write_zeta_csv(&mut buf, &rows)?;
                }
                "surface" => {
                    let x = data
                        .inputs
                        .get(a.index)
                        .ok_or_else(|| usage(format!("index {} out of range", a.index)))?;
                    let y = data
                        .label(a.index)
                        .ok_or_else(|| usage("surface sample needs a label"))?;
                    let mut spec = parse_attack(&a.spec, seed)?;
                    spec.config.clip_range = data.domain;
                    let one = data.subset(&[a.index]);
                    let batch = run_attack(&model, &one, &spec, false)?;
                    let adv = batch.results.first().ok_or_else(|| usage("surface sample was not attacked"))?;
                    if !adv.success {
                        return Err(CliError {
                            code: EXIT_NUMERIC,
                            message: format!("attack `{}` failed on sample {} (label {y})", a.spec, a.index),
                        });
                    }
                    let delta = adv.x_adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect::<Vec<_>>();
                    let gamma = crate::Tensor::new(x.shape().to_vec(), delta)?;
                    let extent = a.extent * gamma.norm();
                    let axis = symmetric_axis(extent, a.grid);
                    let opts = SurfaceOptions {
                        domain: data.domain,
                        csm: a.features.csm()?,
                        seed,
                    };
                    let grid = csm_surface(&model, x, &gamma, &axis, &axis, &opts)?;
                    run.detail("perturbation_norm", gamma.norm());
                    grid.write_csv(&mut buf)?;
                }
                other => return Err(usage(format!("unknown probe `{other}`; use zeta or surface"))),
            }
            write_atomic(&out, &buf)?;
            run.output(&out)?;
            run.write_manifest(Some(&out), "landscape")
        }
    }
}

/// Feature settings recorded in a detector by `fit-detector`.
fn detector_features(det: &LodaDetector) -> Result<(CsmOptions, bool), CliError> {
    let top_n = match det.metadata.get("top_n").map(String::as_str) {
        None | Some("") => None,
        Some(s) => Some(s.parse().map_err(|_| usage(format!("bad top_n `{s}` in detector")))?),
    };
    let loss = match det.metadata.get("saliency_loss") {
        Some(s) => s.parse()?,
        None => LossKind::Sce,
    };
    let with_softmax = det.metadata.get("with_softmax").is_some_and(|s| s == "true");
    Ok((CsmOptions { top_n, loss }, with_softmax))
}
