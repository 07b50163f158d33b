//! `passage-kit <scale|simulate|verify|identify> --config FILE`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::identify::{
    detect_levy_form, fit_csbp, fit_phi_grid, fit_pssmp, fit_triplet, FitResult, Hypothesis, LevyFormReport, PhiGrid,
    TransformGrid,
};
use crate::scale::{tabulate, write_transform_csv, ProcessSpec};
use crate::simulate::{sample_many, write_samples_csv, Sampler, SimConfig};
use crate::verify::{
    compare_mc_closed, martingale_residuals, multiplicativity_check, MCReport, MartingaleReport,
    MultiplicativityReport, VerifyOptions,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SEED_ENV: &str = "PASSAGE_KIT_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_BAND: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "passage-kit", version, about = "First-passage transforms: closed forms, Monte Carlo checks and fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate closed-form transforms as CSV.
    Scale(RunArgs),
    /// Dump first-passage samples as CSV.
    Simulate(RunArgs),
    /// Compare Monte Carlo estimates with the closed forms.
    Verify(RunArgs),
    /// Fit a parametric model to transform data.
    Identify(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    /// Worker threads; affects wall time only.
    #[arg(long)]
    threads: Option<usize>,
    /// Multiply every closed form in `verify` by this factor.
    #[arg(long, hide = true)]
    perturb_closed_form: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    Scale,
    Simulate,
    Verify,
    Identify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleSection {
    pub grid: Vec<f64>,
    /// Replaces `ψ^{-1}(p + q)` in the candidate `e^{-φ y}` by
    /// `factor · ψ^{-1}(p + q)`; a negative control when not 1.
    #[serde(default)]
    pub exponent_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicativitySection {
    /// Intermediate levels `a`, each checked against every `l <= a <= x`.
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySection {
    /// CSV with columns `x,l,q,value`, relative to the config file. Without
    /// it the data are generated from `spec` on the `q`, `x`, `l` grids.
    #[serde(default)]
    pub data: Option<PathBuf>,
    pub hypothesis: Hypothesis,
    #[serde(default)]
    pub p_known: Option<f64>,
    #[serde(default)]
    pub q_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present it must match the subcommand.
    #[serde(default)]
    pub command: Option<CommandName>,
    #[serde(default)]
    pub spec: Option<ProcessSpec>,
    #[serde(default)]
    pub specs: Vec<ProcessSpec>,
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default)]
    pub l: Vec<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Band half-width in standard errors for `verify`.
    #[serde(default)]
    pub band: Option<f64>,
    /// Output file stem; defaults to the command name.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub martingale: Option<MartingaleSection>,
    #[serde(default)]
    pub multiplicativity: Option<MultiplicativitySection>,
    #[serde(default)]
    pub identify: Option<IdentifySection>,
}

impl ExperimentConfig {
    pub fn all_specs(&self) -> Vec<ProcessSpec> {
        self.spec.iter().cloned().chain(self.specs.iter().cloned()).collect()
    }

    fn sim(&self) -> SimConfig {
        let mut s = SimConfig::default();
        if let Some(d) = self.delta {
            s.delta = d;
        }
        if let Some(h) = self.horizon {
            s.horizon = h;
        }
        s
    }

    pub fn validate(&self, command: CommandName) -> Result<()> {
        if let Some(c) = self.command {
            if c != command {
                return Err(Error::Validation(format!("config is for {c:?}, not {command:?}")));
            }
        }
        let specs = self.all_specs();
        if specs.is_empty() {
            return Err(Error::Validation("config needs `spec` or `specs`".into()));
        }
        let needs_grids = command != CommandName::Identify
            || self.identify.as_ref().is_some_and(|i| i.data.is_none());
        if needs_grids && (self.q.is_empty() || self.x.is_empty() || self.l.is_empty()) {
            return Err(Error::Validation("grids q, x and l must be nonempty".into()));
        }
        if matches!(command, CommandName::Simulate | CommandName::Verify) && self.n.is_none_or(|n| n < 1) {
            return Err(Error::Validation("stochastic commands need n >= 1".into()));
        }
        if command == CommandName::Simulate && (specs.len() != 1 || self.x.len() != 1 || self.l.len() != 1) {
            return Err(Error::Validation("simulate takes exactly one spec, one x and one l".into()));
        }
        if command == CommandName::Identify {
            if specs.len() != 1 {
                return Err(Error::Validation("identify takes exactly one spec".into()));
            }
            if self.identify.is_none() {
                return Err(Error::Validation("identify needs an `identify` section".into()));
            }
        }
        self.sim().validate()
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } | Error::Degenerate(_) => EXIT_NONCONVERGENCE,
        _ => EXIT_INVALID,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Validation(_) => "validation",
        Error::Domain(_) => "domain",
        Error::Degenerate(_) => "degenerate",
        Error::NonConvergence { .. } => "nonconvergence",
        Error::InsufficientData(_) => "insufficient_data",
        Error::Io(_) => "io",
        Error::Parse(_) => "parse",
    }
}

fn report_error(e: &Error, code: i32) {
    let msg = serde_json::json!({ "error": kind(e), "message": e.to_string(), "exit_code": code });
    eprintln!("{msg}");
}

struct Context {
    header: String,
    out_dir: PathBuf,
    stem: String,
    config_dir: PathBuf,
    perturb: Option<f64>,
}

impl Context {
    fn write(&self, ext: &str, body: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(format!("{}.{ext}", self.stem));
        let mut f = fs::File::create(&path)?;
        f.write_all(self.header.as_bytes())?;
        f.write_all(body.as_bytes())?;
        Ok(path)
    }
}

fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    run_with_args(std::env::args_os())
}

pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = match cli.command {
        Command::Scale(a) => (CommandName::Scale, a),
        Command::Simulate(a) => (CommandName::Simulate, a),
        Command::Verify(a) => (CommandName::Verify, a),
        Command::Identify(a) => (CommandName::Identify, a),
    };
    match execute(name, &args) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            report_error(&e, code);
            code
        }
    }
}

fn execute(name: CommandName, args: &RunArgs) -> Result<i32> {
    let bytes = fs::read(&args.config)?;
    let mut config: ExperimentConfig = serde_json::from_slice(&bytes)?;
    if let Ok(s) = std::env::var(SEED_ENV) {
        config.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
    }
    config.validate(name)?;
    let ctx = Context {
        header: format!("# passage-kit {VERSION} config={} seed={}\n", config_hash(&bytes), config.seed),
        out_dir: args.output_dir.clone(),
        stem: config.output.clone().unwrap_or_else(|| format!("{name:?}").to_lowercase()),
        config_dir: args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
        perturb: args.perturb_closed_form,
    };
    let run = || match name {
        CommandName::Scale => run_scale(&config, &ctx),
        CommandName::Simulate => run_simulate(&config, &ctx),
        CommandName::Verify => run_verify(&config, &ctx),
        CommandName::Identify => run_identify(&config, &ctx),
    };
    match args.threads {
        Some(0) => Err(Error::Validation("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Validation(e.to_string()))?
            .install(run),
        None => run(),
    }
}

fn run_scale(config: &ExperimentConfig, ctx: &Context) -> Result<i32> {
    let mut rows = Vec::new();
    for spec in config.all_specs() {
        rows.extend(tabulate(&spec, &config.q, &config.x, &config.l)?);
    }
    let mut buf = Vec::new();
    write_transform_csv(&mut buf, &rows)?;
    ctx.write("csv", &String::from_utf8_lossy(&buf))?;
    Ok(EXIT_OK)
}

fn run_simulate(config: &ExperimentConfig, ctx: &Context) -> Result<i32> {
    let spec = &config.all_specs()[0];
    let sampler = Sampler::new(spec, config.sim())?;
    let (x, l) = (config.x[0], config.l[0]);
    let samples = sample_many(&sampler, x, l, config.n.unwrap_or(0), config.seed, 0)?;
    let mut buf = Vec::new();
    write_samples_csv(&mut buf, &samples, 0)?;
    ctx.write("csv", &String::from_utf8_lossy(&buf))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct VerifyOutput {
    passed: bool,
    transforms: Vec<MCReport>,
    martingale: Vec<MartingaleReport>,
    multiplicativity: Vec<MultiplicativityReport>,
}

fn run_verify(config: &ExperimentConfig, ctx: &Context) -> Result<i32> {
    let n = config.n.unwrap_or(0);
    let seed = config.seed;
    let base = VerifyOptions {
        sim: config.sim(),
        band: config.band.unwrap_or(4.0),
        base_stream: 0,
        closed_form_factor: ctx.perturb.unwrap_or(1.0),
    };
    let mut block = 0u64;
    let mut next = || {
        let opts = VerifyOptions { base_stream: block << 32, ..base };
        block += 1;
        opts
    };
    let mut out = VerifyOutput { passed: true, transforms: Vec::new(), martingale: Vec::new(), multiplicativity: Vec::new() };
    for spec in config.all_specs() {
        for &q in &config.q {
            for &x in &config.x {
                for &l in config.l.iter().filter(|&&l| l <= x) {
                    out.transforms.push(compare_mc_closed(&spec, q, x, l, n, seed, &next())?);
                }
            }
        }
        if let (Some(m), ProcessSpec::Levy { triplet }) = (&config.martingale, &spec) {
            for &q in config.q.iter().filter(|&&q| q > 0.0) {
                let exponent = match m.exponent_factor {
                    Some(f) => {
                        let e = crate::exponent::Exponent::new(triplet)?;
                        Some(f * e.inverse(e.killing() + q)?.z)
                    }
                    None => None,
                };
                for &x in &config.x {
                    for &l in config.l.iter().filter(|&&l| l <= x) {
                        out.martingale
                            .push(martingale_residuals(triplet, q, x, l, &m.grid, n, seed, exponent, &next())?);
                    }
                }
            }
        }
        if let Some(m) = &config.multiplicativity {
            for &q in &config.q {
                for &x in &config.x {
                    for &l in config.l.iter().filter(|&&l| l <= x) {
                        for &a in m.a.iter().filter(|&&a| l <= a && a <= x) {
                            out.multiplicativity.push(multiplicativity_check(&spec, q, x, a, l, n, seed, &next())?);
                        }
                    }
                }
            }
        }
    }
    out.passed = out.transforms.iter().all(|r| r.passed)
        && out.martingale.iter().all(|r| r.passed)
        && out.multiplicativity.iter().all(|r| r.passed);
    let mut json = serde_json::to_string_pretty(&out)?;
    json.push('\n');
    ctx.write("json", &json)?;
    ctx.write("txt", &verify_table(&out))?;
    Ok(if out.passed { EXIT_OK } else { EXIT_BAND })
}

fn verify_table(out: &VerifyOutput) -> String {
    let mut rows: Vec<[String; 10]> = vec![[
        "check", "family", "q", "x", "l", "n", "estimate", "target", "stat", "pass",
    ]
    .map(String::from)];
    let f = |v: f64| format!("{v:.6}");
    for r in &out.transforms {
        rows.push([
            "transform".into(),
            r.family.clone(),
            f(r.q),
            f(r.x),
            f(r.l),
            r.n.to_string(),
            f(r.estimate),
            f(r.closed_form),
            format!("{:.3}", r.z_score),
            r.passed.to_string(),
        ]);
    }
    for r in &out.martingale {
        rows.push([
            "martingale".into(),
            "levy".into(),
            f(r.q),
            f(r.x),
            f(r.l),
            r.n.to_string(),
            f(r.means.last().copied().unwrap_or(f64::NAN)),
            f(r.target),
            format!("{:.3}", r.statistic),
            r.passed.to_string(),
        ]);
    }
    for r in &out.multiplicativity {
        rows.push([
            format!("markov a={}", f(r.a)),
            r.family.clone(),
            f(r.q),
            f(r.x),
            f(r.l),
            r.n.to_string(),
            f(r.direct),
            f(r.product),
            format!("{:.3}", r.z_score),
            r.passed.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..10).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

#[derive(Debug, Serialize)]
struct IdentifyOutput {
    levy_form: LevyFormReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_grid: Option<PhiGrid>,
    fit: FitResult,
}

fn run_identify(config: &ExperimentConfig, ctx: &Context) -> Result<i32> {
    let spec = &config.all_specs()[0];
    let section = config.identify.as_ref().expect("validated");
    let data = match &section.data {
        Some(path) => {
            let path = if path.is_absolute() { path.clone() } else { ctx.config_dir.join(path) };
            TransformGrid::read_csv(fs::File::open(path)?, section.q_min)?
        }
        None => TransformGrid::from_spec(spec, &config.q, &config.x, &config.l, section.q_min)?,
    };
    let levy_form = detect_levy_form(&data);
    let (phi_grid, fit) = match spec {
        ProcessSpec::Levy { .. } => {
            let phi = fit_phi_grid(&data)?;
            let fit = fit_triplet(&phi, section.hypothesis, section.p_known)?;
            (Some(phi), fit)
        }
        ProcessSpec::Pssmp { alpha, .. } => (None, fit_pssmp(&data, *alpha, section.hypothesis, section.p_known)?),
        ProcessSpec::Csbp { variant, theta, .. } => {
            (None, fit_csbp(&data, *variant, section.hypothesis, section.p_known, *theta)?)
        }
        ProcessSpec::KilledDrift(_) => {
            return Err(Error::Validation("identification is not available for the killed_drift family".into()))
        }
    };
    let converged = fit.converged;
    let mut json = serde_json::to_string_pretty(&IdentifyOutput { levy_form, phi_grid, fit })?;
    json.push('\n');
    ctx.write("json", &json)?;
    Ok(if converged { EXIT_OK } else { EXIT_NONCONVERGENCE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_short_hex() {
        let h = config_hash(b"{}");
        assert_eq!(h.len(), 16);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn grids_are_required() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"spec": {"family": "levy", "triplet": {"gamma": 0.0, "sigma2": 1.0}}, "q": [1.0], "x": [1.0]}"#,
        )
        .unwrap();
        assert!(cfg.validate(CommandName::Scale).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"spek": 1}"#).is_err());
    }
}
