//! Command-line front end. [`run`] parses arguments, executes one command
//! and returns the process exit code.

use crate::aft::{self, AftError, AftFit, AftSpec, TimeScale};
use crate::distributions::{ErrorLaw, StandardLaw};
use crate::manifest::RunManifest;
use crate::mediation::{self, BootstrapConfig, Contrast, MediationError, MediationEstimates};
use crate::score_oracle::{self, Censoring, Line, ScoreBiasConfig, ScoreOracleError};
use crate::simulate::{self, CensoringScheme, SimError, SimScenario, Simulator};
use crate::survdata::{self, DataError, Dataset, Schema};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;
pub const EXIT_QUADRATURE: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("simulation: {0}")]
    Nonconvergence(String),
    #[error("score oracle: {0}")]
    Quadrature(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::Output { .. } => EXIT_DATA,
            CliError::Fit(_) => EXIT_FIT,
            CliError::Nonconvergence(_) => EXIT_NONCONVERGENCE,
            CliError::Quadrature(_) => EXIT_QUADRATURE,
        }
    }
}

impl From<AftError> for CliError {
    fn from(e: AftError) -> Self {
        CliError::Fit(e.to_string())
    }
}

impl From<MediationError> for CliError {
    fn from(e: MediationError) -> Self {
        CliError::Fit(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Nonconvergence { .. } => CliError::Nonconvergence(e.to_string()),
            SimError::Io(source) => CliError::Output {
                path: PathBuf::from("<output>"),
                source,
            },
            SimError::Data(d) => CliError::Data(d),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ScoreOracleError> for CliError {
    fn from(e: ScoreOracleError) -> Self {
        match e {
            ScoreOracleError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Quadrature(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LawArg {
    Normal,
    Weibull,
}

impl LawArg {
    fn law(self) -> StandardLaw {
        match self {
            LawArg::Normal => StandardLaw::Normal,
            LawArg::Weibull => StandardLaw::ExtremeValueMin,
        }
    }

    /// Gaussian survival regression models the time itself; Weibull models log time.
    fn default_scale(self) -> TimeScale {
        match self {
            LawArg::Normal => TimeScale::Identity,
            LawArg::Weibull => TimeScale::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Log,
    Identity,
}

#[derive(Debug, Parser)]
#[command(name = "aftmed", version, about = "Mediation analysis for censored survival outcomes under AFT models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    /// CSV file with one row per subject.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML column mapping; defaults to exposure, mediator, time1, time2.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub law: LawArg,
    /// Response scale; defaults to identity for normal and log for weibull.
    #[arg(long, value_enum)]
    pub time_scale: Option<ScaleArg>,
}

impl DataArgs {
    fn spec(&self, include_mediator: bool) -> AftSpec {
        let scale = match self.time_scale {
            Some(ScaleArg::Log) => TimeScale::Log,
            Some(ScaleArg::Identity) => TimeScale::Identity,
            None => self.law.default_scale(),
        };
        let law = ErrorLaw::from(self.law.law());
        AftSpec::new(law, scale, include_mediator).expect("closed-form law")
    }

    fn load(&self) -> Result<(Dataset, String), CliError> {
        let schema = match &self.schema {
            Some(p) => Schema::from_file(p)?,
            None => Schema::default(),
        };
        let data = survdata::read_csv(&self.data, &schema)?;
        let bytes = std::fs::read(&self.data).map_err(DataError::Io)?;
        let config = format!(
            "{}\n{:?}\n{:?}\n{}",
            crate::manifest::digest(&String::from_utf8_lossy(&bytes)),
            schema,
            self.law,
            self.time_scale.map_or("default".into(), |s| format!("{s:?}"))
        );
        Ok((data, config))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one AFT model and write it as JSON.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Leave the mediator out of the design (the reduced model).
        #[arg(long)]
        no_mediator: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate direct, indirect and total effects.
    Mediate {
        #[command(flatten)]
        data: DataArgs,
        /// Exposure levels `a,a*`.
        #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
        contrast: Contrast,
        /// Bootstrap replicates; 0 disables the bootstrap.
        #[arg(long, default_value_t = 500)]
        bootstrap: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo scenario and write figure data.
    Simulate {
        /// Scenario TOML file.
        #[arg(long, conflicts_with = "preset")]
        scenario: Option<PathBuf>,
        /// Built-in scenario.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the limiting expected score over a grid of censoring or
    /// truncation points.
    ScoreBias {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    NormalNone,
    NormalRight,
    NormalInterval,
    WeibullNone,
    WeibullRight,
}

impl Preset {
    pub fn scenario(self) -> SimScenario {
        match self {
            Preset::NormalNone => SimScenario::normal(CensoringScheme::None),
            Preset::NormalRight => SimScenario::normal(CensoringScheme::RightOnly { target_fraction: 0.7 }),
            Preset::NormalInterval => SimScenario::normal(CensoringScheme::default_interval(0.7)),
            Preset::WeibullNone => SimScenario::weibull(CensoringScheme::None),
            Preset::WeibullRight => SimScenario::weibull(CensoringScheme::RightOnly { target_fraction: 0.3 }),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(path: &Path, manifest: RunManifest) -> Result<(), CliError> {
    manifest.finish().write(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    law: StandardLaw,
    time_scale: TimeScale,
    n: usize,
    names: &'a [String],
    coefficients: &'a [f64],
    std_errors: Option<Vec<f64>>,
    log_scale: f64,
    log_scale_se: Option<f64>,
    scale: f64,
    loglik: f64,
    converged: bool,
    iterations: usize,
    max_abs_score: f64,
    floored_intervals: usize,
}

fn fit_report(fit: &AftFit, n: usize) -> String {
    let se = fit.std_errors();
    let p = fit.coefficients.len();
    let report = FitReport {
        law: fit.spec.law(),
        time_scale: fit.spec.time_scale(),
        n,
        names: &fit.names,
        coefficients: &fit.coefficients,
        std_errors: se.as_ref().map(|v| v[..p].to_vec()),
        log_scale: fit.log_scale,
        log_scale_se: se.as_ref().map(|v| v[p]),
        scale: fit.scale(),
        loglik: fit.loglik,
        converged: fit.converged,
        iterations: fit.iterations,
        max_abs_score: fit.max_abs_score,
        floored_intervals: fit.floored_intervals,
    };
    serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
}

fn cmd_fit(data: &DataArgs, no_mediator: bool, out: Option<&Path>) -> Result<(), CliError> {
    let (dataset, config) = data.load()?;
    let manifest = RunManifest::start("fit", &config, None);
    let fit = aft::fit(&data.spec(!no_mediator), &dataset, None)?;
    let text = fit_report(&fit, dataset.len());
    match out {
        Some(path) => {
            write_file(path, &text)?;
            write_manifest(&manifest_path(path), manifest)?;
        }
        None => print!("{text}"),
    }
    if !fit.converged {
        return Err(CliError::Fit(format!(
            "Newton iterations stopped after {} steps with max |score| {:e}",
            fit.iterations, fit.max_abs_score
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EffectRow {
    effect: &'static str,
    estimate: f64,
    se: Option<f64>,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
    bootstrap_lower: Option<f64>,
    bootstrap_upper: Option<f64>,
    time_ratio: f64,
    time_ratio_lower: Option<f64>,
    time_ratio_upper: Option<f64>,
    note: Option<&'static str>,
}

#[derive(Debug, Serialize)]
struct MediationReport<'a> {
    estimates: &'a MediationEstimates,
    table: Vec<EffectRow>,
}

const BIASED_TOTAL: &str = "reduced-model total effect; not consistent under censoring for this law";

fn effect_rows(est: &MediationEstimates) -> Vec<EffectRow> {
    est.effects()
        .into_iter()
        .map(|(name, e)| EffectRow {
            effect: name,
            estimate: e.estimate,
            se: e.se,
            ci_lower: e.normal_ci.map(|c| c.0),
            ci_upper: e.normal_ci.map(|c| c.1),
            bootstrap_lower: e.bootstrap.map(|b| b.lower),
            bootstrap_upper: e.bootstrap.map(|b| b.upper),
            time_ratio: e.time_ratio,
            time_ratio_lower: e.time_ratio_ci.map(|c| c.0),
            time_ratio_upper: e.time_ratio_ci.map(|c| c.1),
            note: (name == "Total (difference)" && est.total_difference_flagged).then_some(BIASED_TOTAL),
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn render_table(rows: &[EffectRow], level: f64) -> String {
    let mut s = String::new();
    let pct = format!("{:.0}% CI", level * 100.0);
    let _ = writeln!(s, "{:<24}{:>10}{:>10}   {}", "Effect", "Estimate", "SE", pct);
    for r in rows {
        let ci = match (r.ci_lower, r.ci_upper) {
            (Some(l), Some(u)) => format!("({l:.4}, {u:.4})"),
            _ => "-".into(),
        };
        let mark = if r.note.is_some() { " *" } else { "" };
        let _ = writeln!(s, "{:<24}{:>10.4}{:>10}   {}{}", r.effect, r.estimate, opt(r.se), ci, mark);
    }
    if rows.iter().any(|r| r.note.is_some()) {
        let _ = writeln!(s, "* {BIASED_TOTAL}");
    }
    s
}

fn cmd_mediate(
    data: &DataArgs,
    contrast: Contrast,
    bootstrap: usize,
    seed: u64,
    level: f64,
    workers: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Usage(format!("--level {level} must lie in (0, 1)")));
    }
    if bootstrap == 1 {
        return Err(CliError::Usage("--bootstrap needs 0 or at least 2 replicates".into()));
    }
    let (dataset, config) = data.load()?;
    let config = format!("{config}\ncontrast={contrast}\nB={bootstrap}\nlevel={level}");
    let mut manifest = RunManifest::start("mediate", &config, Some(seed));
    let boot = (bootstrap >= 2).then_some(BootstrapConfig {
        replicates: bootstrap,
        seed,
        level,
    });
    let spec = data.spec(true);
    let est = with_workers(workers, || mediation::analyze(&dataset, &spec, contrast, boot.as_ref()))??;
    let est = MediationEstimates { ci_level: level, ..est };
    if let Some(d) = est.bootstrap_dropped {
        manifest.nonconverged.push(("bootstrap".into(), d));
    }
    let rows = effect_rows(&est);
    let table = render_table(&rows, level);
    let report = MediationReport {
        estimates: &est,
        table: rows,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match out {
        Some(path) => {
            write_file(path, &json)?;
            write_manifest(&manifest_path(path), manifest)?;
            print!("{table}");
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_simulate(
    scenario: Option<&Path>,
    preset: Option<Preset>,
    seed: Option<u64>,
    replicates: Option<usize>,
    workers: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let mut sc = match (scenario, preset) {
        (Some(p), _) => SimScenario::from_file(p)?,
        (None, Some(p)) => p.scenario(),
        (None, None) => return Err(CliError::Usage("give --scenario or --preset".into())),
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(r) = replicates {
        sc.replicates = r;
    }
    sc.validate()?;
    let config = sc.to_toml_string();
    let mut manifest = RunManifest::start("simulate", &config, Some(sc.seed));
    std::fs::create_dir_all(out).map_err(|source| CliError::Output {
        path: out.to_path_buf(),
        source,
    })?;
    let sim = Simulator::new(sc)?;
    let result = with_workers(workers, || simulate::run_with(&sim));
    let run = match result? {
        Ok(r) => r,
        Err(e) => {
            manifest.note("error", &e);
            write_manifest(&out.join("manifest.json"), manifest)?;
            return Err(e.into());
        }
    };
    for s in &run.summaries {
        manifest.nonconverged.push((format!("n={}", s.n), s.nonconverged_count));
    }
    if let Some(loc) = run.censor_location {
        manifest.note("censor_location", loc);
        manifest.note("censor_scale", sim.scenario().censoring_scale());
        manifest.note("censor_law", format!("{:?}", sim.scenario().outcome_law));
    }
    if let Some(f) = run.pilot_fraction {
        manifest.note("pilot_censored_fraction", f);
    }
    if let CensoringScheme::RightAndInterval { lengths, probabilities, .. } = &sim.scenario().censoring {
        manifest.note("interval_lengths", format!("{lengths:?}"));
        manifest.note("interval_probabilities", format!("{probabilities:?}"));
    }
    let mut figure = Vec::new();
    simulate::write_figure_data(&run.summaries, &mut figure)?;
    let mut reps = Vec::new();
    simulate::write_replicates(&run.replicates, &mut reps)?;
    write_file(&out.join("figure_data.csv"), &String::from_utf8_lossy(&figure))?;
    write_file(&out.join("replicates.csv"), &String::from_utf8_lossy(&reps))?;
    write_file(&out.join("scenario.toml"), &config)?;
    write_manifest(&out.join("manifest.json"), manifest)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Censoring,
    Truncation,
}

/// Score-bias grid configuration. With `mediator_coef = 0` the true law is
/// the outcome law itself, so the assumed model is correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreBiasFile {
    pub outcome_law: StandardLaw,
    pub outcome_scale: f64,
    pub mediator_coef: f64,
    pub mediator_sd: f64,
    pub assumed_law: StandardLaw,
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub exposure_prob: f64,
    pub kind: GridKind,
    /// Marginal quantiles of the true response locating C or V. A censoring
    /// quantile of 1 means no censoring; a truncation quantile of 0 means
    /// no truncation.
    pub quantiles: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Also solve for the pseudo-true parameters at each grid point.
    #[serde(default)]
    pub solve_limit: bool,
}

fn default_tolerance() -> f64 {
    1e-10
}

impl ScoreBiasFile {
    pub fn config(&self, slope: f64, quantile: f64) -> Result<ScoreBiasConfig, CliError> {
        let (true_law, true_scale) = if self.mediator_coef == 0.0 {
            (ErrorLaw::from(self.outcome_law), self.outcome_scale)
        } else {
            let law = ErrorLaw::convolved(self.outcome_law, self.outcome_scale, self.mediator_coef, self.mediator_sd)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            (law, 1.0)
        };
        let truth = Line {
            intercept: self.intercept,
            slope,
        };
        let mut cfg = ScoreBiasConfig {
            true_law,
            true_scale,
            assumed_law: self.assumed_law,
            truth,
            probe: truth,
            probe_log_scale: None,
            exposure_prob: self.exposure_prob,
            censoring: Censoring::None,
            truncation: None,
        };
        if !(0.0..=1.0).contains(&quantile) {
            return Err(CliError::Usage(format!("quantile {quantile} outside [0, 1]")));
        }
        match self.kind {
            GridKind::Censoring if quantile < 1.0 => {
                cfg.censoring = Censoring::Fixed {
                    point: cfg.marginal_quantile(quantile),
                }
            }
            GridKind::Truncation if quantile > 0.0 => cfg.truncation = Some(cfg.marginal_quantile(quantile)),
            _ => {}
        }
        Ok(cfg)
    }
}

/// Builds the bias-surface CSV for a grid file.
pub fn score_bias_table(file: &ScoreBiasFile) -> Result<String, CliError> {
    let mut s = String::from(
        "kind,quantile,point,slope,expected_score_beta,quadrature_abs_error,probe_log_scale,profiled_intercept,profiled_score_beta,limit_slope,limit_bias\n",
    );
    for &slope in &file.slopes {
        for &q in &file.quantiles {
            let cfg = file.config(slope, q)?;
            let r = match file.kind {
                GridKind::Censoring => score_oracle::expected_score_right_censoring(&cfg, file.tolerance)?,
                GridKind::Truncation => score_oracle::expected_score_left_truncation(&cfg, file.tolerance)?,
            };
            let point = match (cfg.censoring, cfg.truncation) {
                (Censoring::Fixed { point }, _) => point.to_string(),
                (_, Some(v)) => v.to_string(),
                _ => "inf".into(),
            };
            let point = if file.kind == GridKind::Truncation && cfg.truncation.is_none() {
                "-inf".to_string()
            } else {
                point
            };
            // the slope score at the true intercept above, and at the intercept
            // the limiting fit would choose if the slope were right
            let profiled = score_oracle::profile_intercept(&cfg, file.tolerance)?;
            let at_profile = ScoreBiasConfig {
                probe: Line {
                    intercept: profiled.intercept,
                    slope,
                },
                probe_log_scale: Some(profiled.log_scale),
                ..cfg.clone()
            };
            let rp = score_oracle::expected_score(&at_profile, file.tolerance)?;
            let (ls, lb) = if file.solve_limit {
                let sol = score_oracle::mle_limit_probe(&cfg, file.tolerance)?;
                (sol.slope.to_string(), (sol.slope - slope).to_string())
            } else {
                (String::new(), String::new())
            };
            let kind = match file.kind {
                GridKind::Censoring => "censoring",
                GridKind::Truncation => "truncation",
            };
            let _ = writeln!(
                s,
                "{kind},{q},{point},{slope},{},{},{},{},{},{ls},{lb}",
                r.expected_score_beta,
                r.quadrature_abs_error,
                r.probe_log_scale,
                profiled.intercept,
                rp.expected_score_beta
            );
        }
    }
    Ok(s)
}

fn cmd_score_bias(config: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config).map_err(|e| CliError::Usage(format!("{}: {e}", config.display())))?;
    let file: ScoreBiasFile = toml::from_str(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = RunManifest::start("score-bias", &text, None);
    let table = score_bias_table(&file)?;
    write_file(out, &table)?;
    write_manifest(&manifest_path(out), manifest)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { data, no_mediator, out } => cmd_fit(&data, no_mediator, out.as_deref()),
        Command::Mediate {
            data,
            contrast,
            bootstrap,
            seed,
            level,
            workers,
            out,
        } => cmd_mediate(&data, contrast, bootstrap, seed, level, workers, out.as_deref()),
        Command::Simulate {
            scenario,
            preset,
            seed,
            replicates,
            workers,
            out,
        } => cmd_simulate(scenario.as_deref(), preset, seed, replicates, workers, &out),
        Command::ScoreBias { config, out } => cmd_score_bias(&config, &out),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
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
    match execute(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
