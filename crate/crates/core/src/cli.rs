//! The `diffhg` command-line front end.
//!
//! Every subcommand writes its primary output atomically and drops a
//! `<out>.config.json` sidecar with the fully resolved arguments next to it.
//! Exit codes: 0 success, 1 property or assertion failure, 2 invalid
//! configuration, 3 capacity exceeded.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{self, FitConfig, FitData, FitTrace};
use crate::hypergeom::{
    central_multi_log_pmf, chain_total_variation, ChainPmf, DrawVector, JointPmf, UrnSpec,
};
use crate::numerics::log_sum_exp;
use crate::reparam::{stream_rng, ChainSampler};
use crate::stats::{self, SweepConfig, SweepParam};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "diffhg", version, about = "Differentiable multivariate noncentral hypergeometric sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Draw samples with the exact or the differentiable sampler.
    Sample(SampleArgs),
    /// Joint and chain log-probabilities over the whole support.
    Pmf(PmfArgs),
    /// KS comparison of the two samplers along a parameter sweep.
    Kstest(KsArgs),
    /// Recover class weights from draws by SGD.
    Fit(FitArgs),
    /// Brute-force checks of the exact PMFs on small urns.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Exact,
    Differentiable,
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct UrnArgs {
    /// Class sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub m: Vec<usize>,
    /// Number of draws.
    #[arg(long)]
    pub n: usize,
    /// Class weights, comma separated; all ones when omitted.
    #[arg(long, value_delimiter = ',')]
    pub omega: Option<Vec<f64>>,
}

impl UrnArgs {
    fn weights(&self) -> Vec<f64> {
        self.omega.clone().unwrap_or_else(|| vec![1.0; self.m.len()])
    }

    fn urn(&self) -> Result<UrnSpec> {
        as_config(UrnSpec::from_weights(self.m.clone(), self.n, &self.weights()))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    pub urn: UrnArgs,
    #[arg(long, value_enum, default_value_t = SampleMode::Exact)]
    pub mode: SampleMode,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PmfArgs {
    #[command(flatten)]
    pub urn: UrnArgs,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct KsArgs {
    #[arg(long, value_delimiter = ',', default_value = "200,200,200")]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 180)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    pub omega: Vec<f64>,
    /// Swept parameter: omega<k>, m<k> or n.
    #[arg(long, default_value = "omega2")]
    pub sweep: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub values: Vec<f64>,
    /// Draws per sampler and grid point.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Exit 1 unless every corrected p-value exceeds the threshold.
    #[arg(long = "assert")]
    pub assert_pass: bool,
    /// Histogram output; defaults to `<out>.hist.<ext>`.
    #[arg(long)]
    pub hist_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, value_delimiter = ',', default_value = "200,200,200")]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 180)]
    pub n: usize,
    /// Ground-truth weights used to generate the dataset.
    #[arg(long, value_delimiter = ',', conflicts_with = "data")]
    pub omega_gt: Option<Vec<f64>>,
    /// CSV of observed draws with columns x_1..x_c; the last `--val` rows
    /// are held out.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Repeat the generated-data fit with class `--grid-class` set to each value.
    #[arg(long, value_delimiter = ',', requires = "omega_gt")]
    pub grid_values: Option<Vec<f64>>,
    /// 1-based class varied by `--grid-values`.
    #[arg(long, default_value_t = 2)]
    pub grid_class: usize,
    #[arg(long, default_value_t = 800)]
    pub train: usize,
    #[arg(long, default_value_t = 200)]
    pub val: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = fit::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub tau_init: Option<f64>,
    #[arg(long)]
    pub tau_final: Option<f64>,
    #[arg(long)]
    pub anneal_steps: Option<usize>,
    /// Initial log weights; zeros when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub init_log_omega: Option<Vec<f64>>,
    /// Model draws per validation datum.
    #[arg(long, default_value_t = 10)]
    pub val_draws: usize,
    /// Draws used for the fitted model's expected counts.
    #[arg(long, default_value_t = 2000)]
    pub expected_draws: usize,
    /// Summary JSON; defaults to `<out>.summary.json`.
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    /// Absolute tolerance on log-probability discrepancies.
    #[arg(long, default_value_t = 1e-10, allow_hyphen_values = true)]
    pub tolerance: f64,
    /// Two-class urns with random weights to add to the fixed cases.
    #[arg(long, default_value_t = 5)]
    pub random_urns: usize,
    #[command(flatten)]
    pub common: Common,
    /// Optional copy of the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Sample(a) => cmd_sample(a, &cli.command),
        Command::Pmf(a) => cmd_pmf(a, &cli.command),
        Command::Kstest(a) => cmd_kstest(a, &cli.command),
        Command::Fit(a) => cmd_fit(a, &cli.command),
        Command::OracleCheck(a) => cmd_oracle_check(a, &cli.command),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("diffhg: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Capacity { .. } => EXIT_CAPACITY,
        _ => EXIT_CONFIG,
    }
}

fn as_config<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Domain(msg) => Error::Config(msg),
        other => other,
    })
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_config_echo(out: &Path, command: &Command) -> Result<()> {
    let json = serde_json::to_vec_pretty(command)?;
    write_atomic(&sidecar_path(out, ".config.json"), &json)
}

/// Header plus rows, already formatted, as CSV bytes.
fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn indexed(prefix: &str, c: usize) -> Vec<String> {
    (1..=c).map(|i| format!("{prefix}_{i}")).collect()
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    draw_index: usize,
    x: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    soft: Option<&'a [f64]>,
}

pub fn cmd_sample(a: &SampleArgs, command: &Command) -> Result<i32> {
    let urn = a.urn.urn()?;
    if a.mode == SampleMode::Differentiable && !(a.tau > 0.0 && a.tau.is_finite()) {
        return Err(Error::Config("temperature must be finite and > 0".into()));
    }
    let sampler = ChainSampler::new(&urn)?;
    let mut rng = stream_rng(a.common.seed, 0);
    let c = urn.num_classes();
    let mut hard = Vec::with_capacity(a.count);
    let mut soft = Vec::new();
    for _ in 0..a.count {
        match a.mode {
            SampleMode::Exact => hard.push(sampler.sample_exact(&mut rng)),
            SampleMode::Differentiable => {
                let d = sampler.sample_differentiable_rng(a.tau, &mut rng)?;
                hard.push(d.hard_counts);
                soft.push(d.soft_counts);
            }
        }
    }
    let differentiable = a.mode == SampleMode::Differentiable;
    let bytes = match a.common.format {
        Format::Csv => {
            let mut header = vec!["draw_index".to_string()];
            header.extend(indexed("x", c));
            if differentiable {
                header.extend(indexed("soft", c));
            }
            let rows: Vec<Vec<String>> = hard
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let mut r = vec![i.to_string()];
                    r.extend(x.counts().iter().map(usize::to_string));
                    if differentiable {
                        r.extend(soft[i].iter().map(|&s| format_float(s)));
                    }
                    r
                })
                .collect();
            csv_bytes(&header, &rows)?
        }
        Format::Json => {
            let records: Vec<SampleRecord> = hard
                .iter()
                .enumerate()
                .map(|(i, x)| SampleRecord {
                    draw_index: i,
                    x: x.counts(),
                    soft: soft.get(i).map(Vec::as_slice),
                })
                .collect();
            json_bytes(&records)?
        }
    };
    write_atomic(&a.out, &bytes)?;
    write_config_echo(&a.out, command)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PmfRecord<'a> {
    x: &'a [usize],
    log_p_joint: f64,
    log_p_chain: f64,
}

pub fn cmd_pmf(a: &PmfArgs, command: &Command) -> Result<i32> {
    let urn = a.urn.urn()?;
    let joint = JointPmf::new(&urn)?;
    let chain = ChainPmf::new(&urn)?;
    let mut values = Vec::with_capacity(joint.support().len());
    for x in joint.support() {
        values.push((joint.log_pmf(x)?, chain.log_pmf(x)?));
    }
    let bytes = match a.common.format {
        Format::Csv => {
            let mut header = indexed("x", urn.num_classes());
            header.push("log_p_joint".into());
            header.push("log_p_chain".into());
            let rows: Vec<Vec<String>> = joint
                .support()
                .iter()
                .zip(&values)
                .map(|(x, (j, ch))| {
                    let mut r: Vec<String> = x.counts().iter().map(usize::to_string).collect();
                    r.push(format_float(*j));
                    r.push(format_float(*ch));
                    r
                })
                .collect();
            csv_bytes(&header, &rows)?
        }
        Format::Json => {
            let records: Vec<PmfRecord> = joint
                .support()
                .iter()
                .zip(&values)
                .map(|(x, &(log_p_joint, log_p_chain))| PmfRecord {
                    x: x.counts(),
                    log_p_joint,
                    log_p_chain,
                })
                .collect();
            json_bytes(&records)?
        }
    };
    write_atomic(&a.out, &bytes)?;
    write_config_echo(&a.out, command)?;
    Ok(EXIT_OK)
}

pub fn cmd_kstest(a: &KsArgs, command: &Command) -> Result<i32> {
    let cfg = SweepConfig {
        class_counts: a.m.clone(),
        draws: a.n,
        weights: a.omega.clone(),
        param: SweepParam::parse(&a.sweep)?,
        values: a.values.clone(),
        samples: a.samples,
        tau: a.tau,
        seed: a.common.seed,
    };
    if !(0.0..1.0).contains(&a.threshold) {
        return Err(Error::Config("threshold must lie in [0, 1)".into()));
    }
    let report = stats::ks_sensitivity_sweep(&cfg)?;
    let ext = match a.common.format {
        Format::Csv => ".hist.csv",
        Format::Json => ".hist.json",
    };
    let hist_path = a.hist_out.clone().unwrap_or_else(|| sidecar_path(&a.out, ext));
    let (table, hist) = match a.common.format {
        Format::Csv => {
            let header: Vec<String> = [
                "sweep_param",
                "sweep_value",
                "class",
                "D",
                "p_raw",
                "p_adjusted",
                "n_samples",
                "seed",
            ]
            .map(String::from)
            .to_vec();
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.sweep_param.clone(),
                        format_float(r.sweep_value),
                        r.class.to_string(),
                        format_float(r.statistic),
                        format_float(r.p_raw),
                        format_float(r.p_adjusted),
                        r.n_samples.to_string(),
                        r.seed.to_string(),
                    ]
                })
                .collect();
            let hist_header: Vec<String> = ["sweep_value", "class", "count", "differentiable", "exact"]
                .map(String::from)
                .to_vec();
            let hist_rows: Vec<Vec<String>> = report
                .histograms
                .iter()
                .map(|h| {
                    vec![
                        format_float(h.sweep_value),
                        h.class.to_string(),
                        h.count.to_string(),
                        h.differentiable.to_string(),
                        h.exact.to_string(),
                    ]
                })
                .collect();
            (csv_bytes(&header, &rows)?, csv_bytes(&hist_header, &hist_rows)?)
        }
        Format::Json => (json_bytes(&report.rows)?, json_bytes(&report.histograms)?),
    };
    write_atomic(&hist_path, &hist)?;
    write_atomic(&a.out, &table)?;
    write_config_echo(&a.out, command)?;

    let passing = report.passing(a.threshold);
    println!(
        "{passing}/{} tests with corrected p > {}",
        report.rows.len(),
        a.threshold
    );
    if a.assert_pass && passing < report.rows.len() {
        return Ok(EXIT_PROPERTY);
    }
    Ok(EXIT_OK)
}

/// Final state of one fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub run: usize,
    pub omega_gt: Option<Vec<f64>>,
    pub final_log_omega: Vec<f64>,
    pub final_val_loss: Option<f64>,
    /// Mean hard counts of the fitted model.
    pub expected_counts: Vec<f64>,
    pub dataset_means: Vec<f64>,
    pub steps: usize,
}

fn load_draws(path: &Path, classes: usize) -> Result<Vec<DrawVector>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let columns: Vec<usize> = (1..=classes)
        .map(|i| {
            let name = format!("x_{i}");
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("{} has no column {name}", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut draws = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let counts = columns
            .iter()
            .map(|&c| {
                record[c].trim().parse::<usize>().map_err(|_| {
                    Error::Config(format!("row {}: {:?} is not a count", line + 1, &record[c]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        draws.push(DrawVector::new(counts));
    }
    Ok(draws)
}

pub fn cmd_fit(a: &FitArgs, command: &Command) -> Result<i32> {
    let c = a.m.len();
    let defaults = FitConfig::with_defaults(c);
    let base = FitConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        tau_init: a.tau_init.unwrap_or(defaults.tau_init),
        tau_final: a.tau_final.unwrap_or(defaults.tau_final),
        anneal_steps: a.anneal_steps.unwrap_or(defaults.anneal_steps),
        seed: a.common.seed,
        init_log_weights: a.init_log_omega.clone().unwrap_or_else(|| vec![0.0; c]),
        validation_draws: a.val_draws,
    };
    base.validate()?;

    // (omega_gt, data) per run.
    let mut runs: Vec<(Option<Vec<f64>>, FitData)> = Vec::new();
    match (&a.omega_gt, &a.data) {
        (Some(gt), None) => {
            if a.train == 0 {
                return Err(Error::Config("--train must be positive".into()));
            }
            let grid: Vec<Option<f64>> = match &a.grid_values {
                Some(v) => v.iter().copied().map(Some).collect(),
                None => vec![None],
            };
            if a.grid_values.is_some() && !(1..=c).contains(&a.grid_class) {
                return Err(Error::Config(format!("--grid-class must lie in 1..={c}")));
            }
            for (run, value) in grid.into_iter().enumerate() {
                let mut w = gt.clone();
                if let Some(v) = value {
                    if let Some(slot) = w.get_mut(a.grid_class - 1) {
                        *slot = v;
                    }
                }
                let urn = as_config(UrnSpec::from_weights(a.m.clone(), a.n, &w))?;
                let mut rng = stream_rng(a.common.seed, DATA_STREAM_BASE + run as u64);
                let train = fit::generate_dataset(&urn, a.train, &mut rng)?;
                let validation = fit::generate_dataset(&urn, a.val, &mut rng)?;
                runs.push((
                    Some(w),
                    FitData {
                        class_counts: a.m.clone(),
                        train,
                        validation,
                    },
                ));
            }
        }
        (None, Some(path)) => {
            let draws = load_draws(path, c)?;
            if draws.len() <= a.val {
                return Err(Error::Config(format!(
                    "{} rows cannot hold {} validation rows and a training set",
                    draws.len(),
                    a.val
                )));
            }
            let split = draws.len() - a.val;
            let data = FitData {
                class_counts: a.m.clone(),
                train: draws[..split].to_vec(),
                validation: draws[split..].to_vec(),
            };
            if data.draws()? != a.n {
                return Err(Error::Config(format!("draws in {} do not sum to n = {}", path.display(), a.n)));
            }
            runs.push((None, data));
        }
        _ => return Err(Error::Config("exactly one of --omega-gt and --data is required".into())),
    }

    let mut traces: Vec<FitTrace> = Vec::new();
    let mut summaries = Vec::new();
    for (run, (gt, data)) in runs.iter().enumerate() {
        let cfg = FitConfig {
            seed: a.common.seed.wrapping_add(run as u64),
            ..base.clone()
        };
        let trace = as_config(fit::fit_omega(data, &cfg))?;
        let fitted = UrnSpec::new(a.m.clone(), a.n, trace.final_log_weights().to_vec())?;
        let expected_counts = fit::model_mean_counts(&fitted, a.expected_draws, cfg.seed, EXPECTED_STREAM)?;
        summaries.push(FitSummary {
            run,
            omega_gt: gt.clone(),
            final_log_omega: trace.final_log_weights().to_vec(),
            final_val_loss: trace.final_val_loss(),
            expected_counts,
            dataset_means: data.train_means(),
            steps: trace.records.len() - 1,
        });
        traces.push(trace);
    }

    let bytes = match a.common.format {
        Format::Csv => {
            let mut header: Vec<String> = ["run", "step", "epoch", "train_loss", "val_loss", "tau"]
                .map(String::from)
                .to_vec();
            header.extend(indexed("log_omega", c));
            let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
            let rows: Vec<Vec<String>> = traces
                .iter()
                .enumerate()
                .flat_map(|(run, t)| {
                    t.records.iter().map(move |r| {
                        let mut row = vec![
                            run.to_string(),
                            r.step.to_string(),
                            r.epoch.to_string(),
                            opt(r.train_loss),
                            opt(r.val_loss),
                            format_float(r.tau),
                        ];
                        row.extend(r.log_weights.iter().map(|&w| format_float(w)));
                        row
                    })
                })
                .collect();
            csv_bytes(&header, &rows)?
        }
        Format::Json => json_bytes(&traces)?,
    };
    let summary_path = a
        .summary_out
        .clone()
        .unwrap_or_else(|| sidecar_path(&a.out, ".summary.json"));
    write_atomic(&summary_path, &json_bytes(&summaries)?)?;
    write_atomic(&a.out, &bytes)?;
    write_config_echo(&a.out, command)?;
    for s in &summaries {
        println!(
            "run {}: log omega {:?}, val loss {:?}",
            s.run, s.final_log_omega, s.final_val_loss
        );
    }
    Ok(EXIT_OK)
}

const DATA_STREAM_BASE: u64 = 100;
const EXPECTED_STREAM: u64 = 50;

struct Check {
    name: String,
    worst: f64,
    passed: bool,
}

fn max_abs_gap(urn: &UrnSpec, f: impl Fn(&DrawVector) -> Result<(f64, f64)>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in JointPmf::new(urn)?.support() {
        let (a, b) = f(x)?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

fn oracle_urns(random: usize, seed: u64) -> Result<Vec<UrnSpec>> {
    use rand::Rng;
    let mut urns = vec![
        UrnSpec::from_weights(vec![3, 5, 4], 5, &[1.0, 1.0, 1.0])?,
        UrnSpec::from_weights(vec![3, 5, 4], 5, &[1.0, 2.0, 4.0])?,
        UrnSpec::from_weights(vec![6, 4], 5, &[1.0, 3.0])?,
        UrnSpec::from_weights(vec![2, 3, 2, 3], 4, &[1.0, 1.0, 1.0, 1.0])?,
        UrnSpec::from_weights(vec![2, 3, 2, 3], 4, &[0.5, 2.0, 1.0, 3.0])?,
        UrnSpec::from_weights(vec![10, 10, 10], 15, &[1.0, 5.0, 1.0])?,
    ];
    let mut rng = stream_rng(seed, 0);
    for _ in 0..random {
        let m = vec![rng.random_range(1..=12), rng.random_range(1..=12)];
        let n = rng.random_range(0..=m[0] + m[1]);
        let lw = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        urns.push(UrnSpec::new(m, n, lw)?);
    }
    Ok(urns)
}

fn run_checks(urns: &[UrnSpec], tol: f64, report: &mut String) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut push = |name: String, worst: f64| {
        checks.push(Check {
            passed: worst <= tol,
            name,
            worst,
        });
    };
    for urn in urns {
        let tag = format!("m={:?} n={} omega={:?}", urn.class_counts(), urn.draws(), weights_of(urn));
        let joint = JointPmf::new(urn)?;
        let chain = ChainPmf::new(urn)?;
        let lp_joint = joint
            .support()
            .iter()
            .map(|x| joint.log_pmf(x))
            .collect::<Result<Vec<_>>>()?;
        let lp_chain = joint
            .support()
            .iter()
            .map(|x| chain.log_pmf(x))
            .collect::<Result<Vec<_>>>()?;
        push(format!("joint normalization {tag}"), log_sum_exp(&lp_joint)?.abs());
        push(format!("chain normalization {tag}"), log_sum_exp(&lp_chain)?.abs());

        let uniform = urn.log_weights().windows(2).all(|w| w[0] == w[1]);
        if uniform {
            let gap = max_abs_gap(urn, |x| Ok((joint.log_pmf(x)?, central_multi_log_pmf(urn, x)?)))?;
            push(format!("central equality {tag}"), gap);
        }
        if uniform || urn.num_classes() == 2 {
            let gap = max_abs_gap(urn, |x| Ok((joint.log_pmf(x)?, chain.log_pmf(x)?)))?;
            push(format!("joint/chain equality {tag}"), gap);
        } else {
            let _ = writeln!(report, "INFO chain TV gap {tag}: {}", format_float(chain_total_variation(urn)?));
        }
    }
    Ok(checks)
}

fn weights_of(urn: &UrnSpec) -> Vec<f64> {
    urn.log_weights().iter().map(|w| w.exp()).collect()
}

pub fn cmd_oracle_check(a: &OracleArgs, command: &Command) -> Result<i32> {
    if a.tolerance.is_nan() {
        return Err(Error::Config("tolerance is NaN".into()));
    }
    let urns = oracle_urns(a.random_urns, a.common.seed)?;
    let mut info = String::new();
    let checks = run_checks(&urns, a.tolerance, &mut info)?;
    let mut report = String::new();
    for c in &checks {
        let _ = writeln!(
            report,
            "{} {} (max error {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            format_float(c.worst)
        );
    }
    report.push_str(&info);
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(report, "{} checks, {failed} failed", checks.len());
    print!("{report}");
    if let Some(out) = &a.out {
        let bytes = match a.common.format {
            Format::Csv => report.clone().into_bytes(),
            Format::Json => {
                #[derive(Serialize)]
                struct Row<'a> {
                    name: &'a str,
                    max_error: f64,
                    passed: bool,
                }
                let rows: Vec<Row> = checks
                    .iter()
                    .map(|c| Row {
                        name: &c.name,
                        max_error: c.worst,
                        passed: c.passed,
                    })
                    .collect();
                json_bytes(&rows)?
            }
        };
        write_atomic(out, &bytes)?;
        write_config_echo(out, command)?;
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_PROPERTY })
}
