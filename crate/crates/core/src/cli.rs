//! Command-line front end: `evaluate`, `forecast` and `validate`.
//!
//! Settings come from an optional flat TOML file and are overridden by
//! flags. Exit codes are 0 on success, 1 on data or runtime errors and 2 on
//! configuration errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::averaging::{AveragingMethod, BlockLength, McsStatistic, WeightTable};
use crate::data::{load_csv_long, load_hfd, CsvSchema, DataError, RatePanel};
use crate::harness::{forecast_production, run_stage1, run_stage2, ProductionForecast, StudyDesign};
use crate::metrics::ScoreKind;
use crate::transform::TransformSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Hfd,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "fertcast", version, about = "Model-averaged fertility forecasts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Two-stage evaluation: stage-1 weights, stage-2 scores.
    Evaluate(Common),
    /// Combined forecast for one country from its full history.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        country: String,
        #[arg(long, default_value = "frequentist")]
        method: String,
        /// Raw weight table from an earlier `evaluate`; computed when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Checks data and configuration without fitting anything.
    Validate(Common),
}

#[derive(Debug, Clone, Default, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<DataFormat>,
    #[arg(long, value_delimiter = ',')]
    countries: Option<Vec<String>>,
    #[arg(long)]
    horizons: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long = "mcs-alpha")]
    mcs_alpha: Option<f64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Keys accepted in the configuration file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub format: Option<DataFormat>,
    pub countries: Option<Vec<String>>,
    pub initial_fit_end: Option<i32>,
    pub in_sample_end: Option<i32>,
    pub holdout_end: Option<i32>,
    pub horizons: Option<usize>,
    pub kappa: Option<f64>,
    pub zero_floor: Option<f64>,
    pub components: Option<usize>,
    pub level: Option<f64>,
    pub models: Option<Vec<String>>,
    pub methods: Option<Vec<String>>,
    pub mcs_alpha: Option<f64>,
    pub mcs_statistic: Option<String>,
    pub bootstrap: Option<usize>,
    pub block_length: Option<usize>,
    pub seed: Option<u64>,
    pub lambda_window: Option<usize>,
    pub lambda_gap: Option<usize>,
    pub out: Option<PathBuf>,
    pub emit_raw: Option<bool>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // Paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub format: DataFormat,
    /// Empty means every country in the data.
    pub countries: Vec<String>,
    pub design: StudyDesign,
    pub out: PathBuf,
    pub emit_raw: bool,
}

fn parse_list<T: std::str::FromStr<Err = String>>(items: &[String]) -> Result<Vec<T>, CliError> {
    items.iter().map(|s| s.parse().map_err(CliError::Config)).collect()
}

impl RunConfig {
    /// Merges flags over the file; flags win.
    fn resolve(flags: &Common) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Self::merge(file, flags)
    }

    fn merge(file: FileConfig, flags: &Common) -> Result<Self, CliError> {
        let mut d = StudyDesign::default();
        let data = flags
            .data
            .clone()
            .or(file.data)
            .ok_or_else(|| CliError::Config("no data path given (--data or `data` key)".into()))?;
        let format = flags.format.or(file.format).unwrap_or_else(|| guess_format(&data));

        if let Some(v) = file.in_sample_end {
            d.in_sample_end = v;
        }
        if let Some(v) = file.holdout_end {
            d.holdout_end = v;
        }
        let horizons = flags.horizons.or(file.horizons);
        match (horizons, file.initial_fit_end) {
            (Some(h), Some(start)) if flags.horizons.is_none() => {
                d.horizon = h;
                d.initial_fit_end = start;
            }
            (Some(h), _) => {
                d.horizon = h;
                d.initial_fit_end = d.in_sample_end - h as i32;
            }
            (None, Some(start)) => {
                d.initial_fit_end = start;
                d.horizon = (d.in_sample_end - start).max(0) as usize;
            }
            (None, None) => d.initial_fit_end = d.in_sample_end - d.horizon as i32,
        }

        let kappa = flags.kappa.or(file.kappa).unwrap_or(d.transform.kappa);
        d.transform = TransformSpec {
            kappa,
            zero_floor: file.zero_floor,
        };
        d.components = flags.components.or(file.components).unwrap_or(d.components);
        d.level = file.level.unwrap_or(d.level);
        if let Some(m) = flags.models.as_ref().or(file.models.as_ref()) {
            d.models = parse_list(m)?;
        }
        if let Some(m) = flags.methods.as_ref().or(file.methods.as_ref()) {
            d.methods = parse_list(m)?;
        }
        d.mcs.alpha = flags.mcs_alpha.or(file.mcs_alpha).unwrap_or(d.mcs.alpha);
        d.mcs.bootstrap = flags.bootstrap.or(file.bootstrap).unwrap_or(d.mcs.bootstrap);
        d.mcs.seed = flags.seed.or(file.seed).unwrap_or(d.mcs.seed);
        if let Some(s) = &file.mcs_statistic {
            d.mcs.statistic = match s.to_ascii_lowercase().as_str() {
                "max" => McsStatistic::Max,
                "range" => McsStatistic::Range,
                other => return Err(CliError::Config(format!("unknown MCS statistic {other:?}"))),
            };
        }
        if let Some(b) = file.block_length {
            d.mcs.block_length = if b == 0 {
                BlockLength::Auto
            } else {
                BlockLength::Fixed(b)
            };
        }
        d.lambda_window = file.lambda_window.unwrap_or(d.lambda_window);
        d.lambda_gap = file.lambda_gap.unwrap_or(d.lambda_gap);
        d.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let countries = flags.countries.clone().or(file.countries).unwrap_or_default();
        let out = flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            data,
            format,
            countries,
            design: d,
            out,
            emit_raw: file.emit_raw.unwrap_or(true),
        })
    }
}

fn guess_format(path: &Path) -> DataFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
        _ => DataFormat::Hfd,
    }
}

/// Loads every panel under `path`: a long CSV, an HFD file, or a directory
/// of HFD files.
pub fn load_panels(path: &Path, format: DataFormat) -> Result<BTreeMap<String, RatePanel>, CliError> {
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "data path {} does not exist",
            path.display()
        )));
    }
    let named = |p: &Path, e: DataError| CliError::Runtime(format!("{}: {e}", p.display()));
    match format {
        DataFormat::Csv => load_csv_long(path, &CsvSchema::default()).map_err(|e| named(path, e)),
        DataFormat::Hfd if path.is_dir() => {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| {
                    named(
                        path,
                        DataError::Io {
                            path: path.display().to_string(),
                            source: e,
                        },
                    )
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(CliError::Runtime(format!("{}: no .txt files found", path.display())));
            }
            let mut out = BTreeMap::new();
            for f in files {
                let p = load_hfd(&f).map_err(|e| named(&f, e))?;
                out.insert(p.country.clone(), p);
            }
            Ok(out)
        }
        DataFormat::Hfd => {
            let p = load_hfd(path).map_err(|e| named(path, e))?;
            Ok(BTreeMap::from([(p.country.clone(), p)]))
        }
    }
}

fn select(all: BTreeMap<String, RatePanel>, wanted: &[String]) -> Result<Vec<RatePanel>, CliError> {
    if wanted.is_empty() {
        return Ok(all.into_values().collect());
    }
    let mut all = all;
    wanted
        .iter()
        .map(|c| {
            all.remove(c)
                .ok_or_else(|| CliError::Runtime(format!("unknown country {c:?} (not in the data)")))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CountryEntry {
    pub fingerprint: String,
    pub first_year: i32,
    pub last_year: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub huw_lambda: Option<f64>,
}

/// Everything needed to reproduce a run. Contains no timestamps.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub design: StudyDesign,
    pub countries: BTreeMap<String, CountryEntry>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, design: &StudyDesign, panels: &[RatePanel], lambdas: &BTreeMap<String, f64>) -> Self {
        let countries = panels
            .iter()
            .map(|p| {
                (
                    p.country.clone(),
                    CountryEntry {
                        fingerprint: p.fingerprint(),
                        first_year: p.first_year(),
                        last_year: p.last_year(),
                        huw_lambda: lambdas.get(&p.country).copied(),
                    },
                )
            })
            .collect();
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: design.mcs.seed,
            design: design.clone(),
            countries,
            outputs: Vec::new(),
        }
    }
}

/// Writes every file or none of them.
fn write_all(dir: &Path, files: Vec<(String, String)>, mut manifest: RunManifest) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    manifest.outputs = files.iter().map(|(n, _)| n.clone()).collect();
    let json = serde_json::to_string_pretty(&manifest).map_err(runtime)? + "\n";
    let mut files = files;
    files.push(("manifest.json".into(), json));
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(&name);
        if let Err(e) = fs::write(&path, body) {
            for w in &written {
                let _ = fs::remove_file(w);
            }
            return Err(runtime(format!("cannot write {}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let panels = select(load_panels(&cfg.data, cfg.format)?, &cfg.countries)?;
    let d = &cfg.design;
    let stage1 = run_stage1(&panels, d).map_err(runtime)?;
    let stage2 = run_stage2(&panels, d, &stage1.weights).map_err(runtime)?;

    let mut files = Vec::new();
    for (kind, stem) in [
        (ScoreKind::Point, "scores_point"),
        (ScoreKind::Interval, "scores_interval"),
    ] {
        files.push((format!("{stem}.csv"), stage2.scores.to_csv(kind, true)));
        if cfg.emit_raw {
            files.push((format!("{stem}_raw.csv"), stage2.scores.to_csv(kind, false)));
        }
    }
    for (method, table) in &stage1.weights {
        files.push((format!("weights_{method}.csv"), table.to_csv(true)));
        if cfg.emit_raw {
            files.push((format!("weights_{method}_raw.csv"), table.to_csv(false)));
        }
    }
    let manifest = RunManifest::new("evaluate", d, &panels, &stage1.lambdas);
    write_all(&cfg.out, files, manifest)
}

/// Rate-scale forecast table with one row per (horizon, age).
pub fn forecast_csv(p: &ProductionForecast) -> String {
    let f = &p.combined.forecast;
    let mut out = String::from("horizon,year,age,point,lower,upper\n");
    for h in 0..f.horizons() {
        for (x, age) in f.ages.ages().iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{age},{},{},{}",
                h + 1,
                p.years[h],
                f.point[(h, x)],
                f.lower[(h, x)],
                f.upper[(h, x)]
            );
        }
    }
    out
}

pub fn cmd_forecast(
    cfg: &RunConfig,
    country: &str,
    method: AveragingMethod,
    weights: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let all = load_panels(&cfg.data, cfg.format)?;
    let panel = all
        .get(country)
        .cloned()
        .ok_or_else(|| CliError::Runtime(format!("unknown country {country:?} (not in the data)")))?;
    let d = &cfg.design;
    let table = match weights {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
            WeightTable::from_csv(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?
        }
        None => {
            let design = StudyDesign {
                methods: vec![method],
                ..d.clone()
            };
            let panels = select(all, &cfg.countries)?;
            let mut s1 = run_stage1(&panels, &design).map_err(runtime)?;
            s1.weights
                .remove(&method)
                .expect("stage 1 returns every requested method")
        }
    };
    let p = forecast_production(&panel, d, &table, method, d.horizon).map_err(runtime)?;
    let lambdas: BTreeMap<String, f64> = p.lambda.map(|l| (p.country.clone(), l)).into_iter().collect();
    let manifest = RunManifest::new("forecast", d, std::slice::from_ref(&panel), &lambdas);
    let files = vec![(format!("forecast_{country}_{method}.csv"), forecast_csv(&p))];
    write_all(&cfg.out, files, manifest)
}

/// Problems found by `validate`; empty when the run would proceed.
pub fn validate_report(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let all = load_panels(&cfg.data, cfg.format)?;
    let panels = select(all, &cfg.countries)?;
    let d = &cfg.design;
    let need_first = d.initial_fit_end - d.min_fit_years() as i32 + 1;
    let mut problems = Vec::new();
    for p in &panels {
        if p.first_year() > need_first {
            problems.push(format!(
                "{}: starts in {}, but a {}-year horizon with {} components needs data from {need_first}",
                p.country,
                p.first_year(),
                d.horizon,
                d.components
            ));
        }
        if p.last_year() < d.holdout_end {
            problems.push(format!(
                "{}: ends in {}, holdout needs data through {}",
                p.country,
                p.last_year(),
                d.holdout_end
            ));
        }
    }
    Ok(problems)
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Evaluate(common) => {
            let cfg = RunConfig::resolve(&common)?;
            let written = cmd_evaluate(&cfg)?;
            Ok(format!("wrote {} files to {}", written.len(), cfg.out.display()))
        }
        Command::Forecast {
            common,
            country,
            method,
            weights,
        } => {
            let cfg = RunConfig::resolve(&common)?;
            let method: AveragingMethod = method.parse().map_err(CliError::Config)?;
            let written = cmd_forecast(&cfg, &country, method, weights.as_deref())?;
            Ok(format!("wrote {}", written[0].display()))
        }
        Command::Validate(common) => {
            let cfg = RunConfig::resolve(&common)?;
            let problems = validate_report(&cfg)?;
            if problems.is_empty() {
                Ok(format!(
                    "ok: design {}/{}/{}, H = {}",
                    cfg.design.initial_fit_end, cfg.design.in_sample_end, cfg.design.holdout_end, cfg.design.horizon
                ))
            } else {
                Err(CliError::Runtime(problems.join("\n")))
            }
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
