//! Command-line pipeline: gen-env → solve → simulate → lift / pvar → diagnose → verify.
//!
//! All commands read one TOML [`RunConfig`]. Seeds derive from the single
//! top-level `seed`: stream 0 generates the environment, stream 1 drives the
//! diagnostics ensemble, stream 2 the `simulate` paths and stream 3 the
//! isotropy environments.
//!
//! Exit codes: 0 ok, 1 failed verdict, 2 usage or configuration error,
//! 3 integrity error (hash mismatch or inconsistent artifacts).

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrector::{sigma_gamma, solve_harmonic, CocycleField, FieldFile, HomogenizedStats, StatsFile, DEFAULT_TOL};
use crate::diagnostics::{isotropy_check, run_ensemble, DiagnosticsReport, EnsembleSpec, Mode, Source, Status, Thresholds};
use crate::env::{clusters, gen_env, ConductanceLaw, Environment};
use crate::error::{Error, Result};
use crate::pvar::{p2var_exact, pvar_capped, pvar_exact, pvar_greedy_lower};
use crate::rng::stream_seed;
use crate::roughpath::{ito_lift, rescale, stratonovich_lift, RealPath};
use crate::walk::{simulate, StartPolicy};

pub const SCHEMA_VERSION: u32 = 1;

/// Names accepted in `checks`.
pub const CHECKS: [&str; 11] = [
    "qv_limit",
    "ucv",
    "lindeberg",
    "corrector_pvar",
    "corrector_area",
    "corrector_area_mean",
    "mixed_q",
    "area_anomaly_ito",
    "area_anomaly_stratonovich",
    "gaussianity",
    "isotropy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; not part of the configuration hash.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub pvar: PvarConfig,
    #[serde(default)]
    pub isotropy: IsotropyConfig,
    /// Checks to run; `isotropy` is opt-in.
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_checks() -> Vec<String> {
    CHECKS.iter().filter(|c| **c != "isotropy").map(|c| c.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub law: ConductanceLaw,
    pub d: usize,
    pub side: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { law: ConductanceLaw::UniformInterval { a: 1.0, b: 10.0 }, d: 2, side: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iters: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub walks: usize,
    pub pvar_walks: usize,
    pub n_list: Vec<u64>,
    pub horizon: f64,
    pub p: f64,
    pub mode: Mode,
    /// Defaults to `e_1`.
    pub direction: Option<Vec<i64>>,
    pub delta: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { walks: 20_000, pvar_walks: 200, n_list: vec![25, 100, 400], horizon: 1.0, p: 6.0, mode: Mode::Quenched, direction: None, delta: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub walks: usize,
    pub horizon: f64,
    pub start: StartPolicy,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { walks: 10, horizon: 100.0, start: StartPolicy::UniformOnGiant }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PvarMethod {
    Exact,
    Greedy,
    Capped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvarConfig {
    pub p: f64,
    pub method: PvarMethod,
    /// Jumps per block for the capped method.
    pub block: usize,
}

impl Default for PvarConfig {
    fn default() -> Self {
        Self { p: 6.0, method: PvarMethod::Exact, block: 2_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsotropyConfig {
    pub envs: usize,
}

impl Default for IsotropyConfig {
    fn default() -> Self {
        Self { envs: 20 }
    }
}

fn config_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config { key: key.into(), reason: reason.into() }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            env: EnvConfig::default(),
            solver: SolverConfig::default(),
            ensemble: EnsembleConfig::default(),
            simulate: SimulateConfig::default(),
            pvar: PvarConfig::default(),
            isotropy: IsotropyConfig::default(),
            checks: default_checks(),
            thresholds: Thresholds::default(),
        }
    }
}

impl RunConfig {
    /// Parse and validate; errors name the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("<document>", e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path == "." { "<document>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.env.d == 2 || self.env.d == 3) {
            return Err(config_err("env.d", format!("only d ∈ {{2, 3}} is supported, got {}", self.env.d)));
        }
        if self.env.side < 4 || !self.env.side.is_multiple_of(2) {
            return Err(config_err("env.side", format!("must be even and ≥ 4, got {}", self.env.side)));
        }
        self.env.law.validate(self.env.d, self.env.side).map_err(|e| match e {
            Error::Parameter { field, reason } => config_err(format!("env.law.{field}"), reason),
            other => other,
        })?;
        if !(self.solver.tol > 0.0) {
            return Err(config_err("solver.tol", "must be positive"));
        }
        if self.solver.max_iters == 0 {
            return Err(config_err("solver.max_iters", "must be positive"));
        }
        self.ensemble_spec().validate(self.env.d).map_err(|e| match e {
            Error::Parameter { field, reason } => config_err(format!("ensemble.{field}"), reason),
            other => other,
        })?;
        if !(self.simulate.horizon > 0.0 && self.simulate.horizon.is_finite()) {
            return Err(config_err("simulate.horizon", "must be positive and finite"));
        }
        if !(self.pvar.p >= 1.0) {
            return Err(config_err("pvar.p", "must be at least 1"));
        }
        if self.pvar.block == 0 {
            return Err(config_err("pvar.block", "must be positive"));
        }
        if self.isotropy.envs < 2 {
            return Err(config_err("isotropy.envs", "need at least two environments"));
        }
        for (i, c) in self.checks.iter().enumerate() {
            if !CHECKS.contains(&c.as_str()) {
                return Err(config_err(format!("checks[{i}]"), format!("unknown check `{c}`; known: {}", CHECKS.join(", "))));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering (output directory excluded).
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("configuration serializes").as_bytes())
    }

    pub fn env_seed(&self) -> u64 {
        stream_seed(self.seed, 0)
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        let e = &self.ensemble;
        let direction = e.direction.clone().unwrap_or_else(|| {
            let mut v = vec![0; self.env.d];
            if let Some(first) = v.first_mut() {
                *first = 1;
            }
            v
        });
        EnsembleSpec {
            walks: e.walks,
            pvar_walks: e.pvar_walks,
            n_list: e.n_list.clone(),
            horizon: e.horizon,
            p: e.p,
            master_seed: stream_seed(self.seed, 1),
            mode: e.mode,
            direction,
            delta: e.delta,
        }
    }

    fn wants(&self, check: &str) -> bool {
        self.checks.iter().any(|c| c == check)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sidecar of `env.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMeta {
    pub schema_version: u32,
    pub config_hash: String,
    pub env_hash: String,
    pub law: ConductanceLaw,
    pub d: usize,
    pub side: usize,
    pub seed: u64,
    pub giant_size: usize,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub file: String,
    pub seed: u64,
    pub start: usize,
    pub jumps: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub env_hash: String,
    pub horizon: f64,
    pub start: StartPolicy,
    pub paths: Vec<PathEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftMeta {
    pub schema_version: u32,
    pub config_hash: String,
    pub input_sha256: String,
    pub kind: LiftArg,
    pub scale: Option<f64>,
    pub horizon: f64,
    pub jumps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvarOutput {
    pub schema_version: u32,
    pub config_hash: String,
    pub input_sha256: String,
    pub p: f64,
    pub method: PvarMethod,
    pub jumps: usize,
    /// Exact or greedy value, or the lower end of the capped interval.
    pub value: f64,
    pub upper: Option<f64>,
    pub partition: Option<Vec<f64>>,
    /// Itô level-2 (p/2)-variation, exact method only.
    pub level2: Option<f64>,
}

/// Wrapper adding provenance to the diagnostics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub report: DiagnosticsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LiftArg {
    Ito,
    Stratonovich,
}

#[derive(Debug, Parser)]
#[command(name = "rcm-rough", version, about = "Random conductance walks lifted to rough paths")]
pub struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the ensemble.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the environment: env.bin and env.json.
    GenEnv,
    /// Solve the corrector: field.json and stats.json.
    Solve {
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Simulate walks: paths/path_NNNNN.csv and paths/manifest.json.
    Simulate {
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Lift a path CSV to level 2.
    Lift {
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_enum, default_value = "ito")]
        kind: LiftArg,
        /// Rescale by n before lifting.
        #[arg(long)]
        scale: Option<f64>,
        /// Horizon of the rescaled path (defaults to the path horizon / n).
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// p-variation of a path CSV.
    Pvar {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<PvarMethod>,
        #[arg(long)]
        block: Option<usize>,
    },
    /// Run the Monte Carlo diagnostics: report.json and report.csv.
    Diagnose {
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Recompute and check the verdicts of a report.
    Verify {
        #[arg(long)]
        report: Option<PathBuf>,
        /// TOML file of thresholds overriding those stored in the report.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        field: Option<PathBuf>,
    },
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    VerdictFailure,
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::VerdictFailure) => 1,
        Err(Error::Integrity(_)) => 3,
        Err(_) => 2,
    }
}

/// Parse arguments, run, print errors, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = run(cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_err("--threads", "must be positive"));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenEnv => cmd_gen_env(&cfg),
        Command::Solve { env } => cmd_solve(&cfg, &env.unwrap_or_else(|| cfg.out.join("env.bin"))),
        Command::Simulate { env } => cmd_simulate(&cfg, &env.unwrap_or_else(|| cfg.out.join("env.bin"))),
        Command::Lift { path, kind, scale, horizon } => cmd_lift(&cfg, &path, kind, scale, horizon),
        Command::Pvar { path, p, method, block } => cmd_pvar(&cfg, &path, p, method, block),
        Command::Diagnose { env, field } => cmd_diagnose(
            &cfg,
            &env.unwrap_or_else(|| cfg.out.join("env.bin")),
            &field.unwrap_or_else(|| cfg.out.join("field.json")),
        ),
        Command::Verify { report, thresholds, env, field } => cmd_verify(
            &cfg,
            cli.config.is_some(),
            &report.unwrap_or_else(|| cfg.out.join("report.json")),
            thresholds.as_deref(),
            env.as_deref(),
            field.as_deref(),
        ),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn field_hash(field: &CocycleField) -> String {
    sha256_hex(&serde_json::to_vec(field).expect("field serializes"))
}

/// Load an environment file and check it against the configuration.
fn load_env(cfg: &RunConfig, path: &Path) -> Result<Environment> {
    let env = Environment::from_bytes(&fs::read(path)?)?;
    if env.law() != cfg.env.law || env.dim() != cfg.env.d || env.side() != cfg.env.side || env.seed() != cfg.env_seed() {
        return Err(Error::Integrity(format!("{} was not generated from this configuration", path.display())));
    }
    Ok(env)
}

fn load_field(env: &Environment, path: &Path) -> Result<(CocycleField, String)> {
    let file: FieldFile = read_json(path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Integrity(format!("{}: schema version {} is not {SCHEMA_VERSION}", path.display(), file.schema_version)));
    }
    if file.env_hash != env.hash() {
        return Err(Error::Integrity(format!("{} was solved on a different environment", path.display())));
    }
    let hash = field_hash(&file.field);
    Ok((file.field.reindex()?, hash))
}

pub fn cmd_gen_env(cfg: &RunConfig) -> Result<Outcome> {
    let env = gen_env(cfg.env.law, cfg.env.d, cfg.env.side, cfg.env_seed())?;
    let labels = clusters(&env);
    write(&cfg.out.join("env.bin"), &env.to_bytes())?;
    let meta = EnvMeta {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        env_hash: env.hash(),
        law: cfg.env.law,
        d: cfg.env.d,
        side: cfg.env.side,
        seed: cfg.env_seed(),
        giant_size: labels.giant_size,
        density: labels.density(),
    };
    write_json(&cfg.out.join("env.json"), &meta)?;
    println!("env {} ({} sites, giant cluster density {:.4})", meta.env_hash, env.num_sites(), meta.density);
    Ok(Outcome::Ok)
}

pub fn cmd_solve(cfg: &RunConfig, env_path: &Path) -> Result<Outcome> {
    let env = load_env(cfg, env_path)?;
    let labels = clusters(&env);
    let field = solve_harmonic(&env, &labels, cfg.solver.tol, cfg.solver.max_iters)?;
    let stats = sigma_gamma(&env, &labels, &field)?;
    let env_hash = env.hash();
    let fhash = field_hash(&field);
    println!(
        "solved in {} iterations, residual {:.3e}, Pythagoras defect {:.3e}",
        field.solver_iters,
        field.residual,
        stats.pythagoras_defect()
    );
    write_json(
        &cfg.out.join("field.json"),
        &FieldFile { schema_version: SCHEMA_VERSION, env_hash: env_hash.clone(), config_hash: cfg.hash(), field },
    )?;
    write_json(
        &cfg.out.join("stats.json"),
        &StatsFile { schema_version: SCHEMA_VERSION, env_hash, field_hash: fhash, config_hash: cfg.hash(), stats },
    )?;
    Ok(Outcome::Ok)
}

pub fn cmd_simulate(cfg: &RunConfig, env_path: &Path) -> Result<Outcome> {
    let env = load_env(cfg, env_path)?;
    let labels = clusters(&env);
    let master = stream_seed(cfg.seed, 2);
    let dir = cfg.out.join("paths");
    let mut paths = Vec::with_capacity(cfg.simulate.walks);
    for k in 0..cfg.simulate.walks {
        let seed = stream_seed(master, k as u64);
        let path = simulate(&env, &labels, cfg.simulate.horizon, seed, cfg.simulate.start)?;
        let csv = path.to_csv();
        let file = format!("path_{k:05}.csv");
        write(&dir.join(&file), csv.as_bytes())?;
        paths.push(PathEntry { file, seed, start: path.start, jumps: path.num_jumps(), sha256: sha256_hex(csv.as_bytes()) });
    }
    let manifest = PathManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        env_hash: env.hash(),
        horizon: cfg.simulate.horizon,
        start: cfg.simulate.start,
        paths,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!("wrote {} paths to {}", manifest.paths.len(), dir.display());
    Ok(Outcome::Ok)
}

fn read_path(path: &Path) -> Result<(RealPath, String)> {
    let text = fs::read_to_string(path)?;
    Ok((RealPath::from_csv(&text)?, sha256_hex(text.as_bytes())))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "path".into())
}

pub fn cmd_lift(cfg: &RunConfig, path: &Path, kind: LiftArg, scale: Option<f64>, horizon: Option<f64>) -> Result<Outcome> {
    let (mut real, input_sha256) = read_path(path)?;
    if let Some(n) = scale {
        let h = horizon.unwrap_or(real.horizon / n);
        real = rescale(&real, n, h)?;
    } else if horizon.is_some() {
        return Err(config_err("--horizon", "only meaningful together with --scale"));
    }
    let l2 = match kind {
        LiftArg::Ito => ito_lift(&real),
        LiftArg::Stratonovich => stratonovich_lift(&real),
    };
    let dir = cfg.out.join("lift");
    let name = format!("{}_{}", stem(path), if kind == LiftArg::Ito { "ito" } else { "stratonovich" });
    write(&dir.join(format!("{name}.csv")), l2.to_csv().as_bytes())?;
    let meta = LiftMeta {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        input_sha256,
        kind,
        scale,
        horizon: real.horizon,
        jumps: real.num_jumps(),
    };
    write_json(&dir.join(format!("{name}.json")), &meta)?;
    let t = l2.terminal();
    println!("terminal level-2 value: {:?}", t[..real.d].iter().map(|r| r[..real.d].to_vec()).collect::<Vec<_>>());
    Ok(Outcome::Ok)
}

pub fn cmd_pvar(cfg: &RunConfig, path: &Path, p: Option<f64>, method: Option<PvarMethod>, block: Option<usize>) -> Result<Outcome> {
    let (real, input_sha256) = read_path(path)?;
    let p = p.unwrap_or(cfg.pvar.p);
    let method = method.unwrap_or(cfg.pvar.method);
    let mut out = PvarOutput {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        input_sha256,
        p,
        method,
        jumps: real.num_jumps(),
        value: 0.0,
        upper: None,
        partition: None,
        level2: None,
    };
    match method {
        PvarMethod::Exact => {
            let r = pvar_exact(&real, p)?;
            out.value = r.value;
            out.partition = r.partition;
            if p >= 2.0 {
                out.level2 = Some(p2var_exact(&ito_lift(&real), p / 2.0)?.value);
            }
        }
        PvarMethod::Greedy => {
            let r = pvar_greedy_lower(&real, p)?;
            out.value = r.value;
            out.partition = r.partition;
        }
        PvarMethod::Capped => {
            let b = pvar_capped(&real, p, block.unwrap_or(cfg.pvar.block))?;
            out.value = b.lower;
            out.upper = Some(b.upper);
        }
    }
    write_json(&cfg.out.join("pvar").join(format!("{}.json", stem(path))), &out)?;
    match out.upper {
        Some(u) => println!("{p}-variation in [{:.6e}, {u:.6e}]", out.value),
        None => println!("{p}-variation {:.6e}", out.value),
    }
    Ok(Outcome::Ok)
}

fn isotropy_stats(cfg: &RunConfig) -> Result<Vec<HomogenizedStats>> {
    use rayon::prelude::*;
    let master = stream_seed(cfg.seed, 3);
    (0..cfg.isotropy.envs)
        .into_par_iter()
        .map(|k| {
            let env = gen_env(cfg.env.law, cfg.env.d, cfg.env.side, stream_seed(master, k as u64))?;
            let labels = clusters(&env);
            let field = solve_harmonic(&env, &labels, cfg.solver.tol, cfg.solver.max_iters)?;
            sigma_gamma(&env, &labels, &field)
        })
        .collect()
}

fn print_verdicts(report: &DiagnosticsReport) {
    let iso = report.isotropy.iter().flat_map(|r| r.verdicts.iter());
    for v in report.verdicts.iter().chain(iso) {
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        println!("[{tag}] {}: statistic {:.4e}, threshold {:.4e}; {}", v.check, v.statistic, v.threshold, v.detail);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

pub fn cmd_diagnose(cfg: &RunConfig, env_path: &Path, field_path: &Path) -> Result<Outcome> {
    let spec = cfg.ensemble_spec();
    let mut report = match spec.mode {
        Mode::Quenched => {
            let env = load_env(cfg, env_path)?;
            let labels = clusters(&env);
            let (field, fhash) = load_field(&env, field_path)?;
            let mut r = run_ensemble(&spec, &Source::Quenched { env: &env, labels: &labels, field: &field }, &cfg.thresholds)?;
            r.provenance.field_hash = Some(fhash);
            r
        }
        Mode::Annealed => {
            let src = Source::Annealed {
                law: cfg.env.law,
                d: cfg.env.d,
                side: cfg.env.side,
                tol: cfg.solver.tol,
                max_iters: cfg.solver.max_iters,
            };
            run_ensemble(&spec, &src, &cfg.thresholds)?
        }
    };
    report.provenance.config_hash = Some(cfg.hash());
    report.verdicts.retain(|v| cfg.wants(&v.check));
    if cfg.wants("isotropy") {
        report.isotropy = Some(isotropy_check(&isotropy_stats(cfg)?, cfg.solver.tol, cfg.thresholds.k_sigma)?);
    }
    let file = ReportFile { schema_version: SCHEMA_VERSION, config_hash: cfg.hash(), report };
    write_json(&cfg.out.join("report.json"), &file)?;
    write(&cfg.out.join("report.csv"), file.report.to_csv().as_bytes())?;
    print_verdicts(&file.report);
    Ok(if file.report.passed() { Outcome::Ok } else { Outcome::VerdictFailure })
}

pub fn cmd_verify(
    cfg: &RunConfig,
    config_given: bool,
    report_path: &Path,
    thresholds: Option<&Path>,
    env: Option<&Path>,
    field: Option<&Path>,
) -> Result<Outcome> {
    let file: ReportFile = read_json(report_path)?;
    let report = &file.report;
    if file.schema_version != SCHEMA_VERSION || report.schema_version != crate::diagnostics::SCHEMA_VERSION {
        return Err(Error::Integrity(format!("{}: unsupported schema version", report_path.display())));
    }
    if report.provenance.config_hash.as_deref() != Some(file.config_hash.as_str()) {
        return Err(Error::Integrity("report header and provenance disagree on the configuration".into()));
    }
    if config_given && cfg.hash() != file.config_hash {
        return Err(Error::Integrity("report was produced from a different configuration".into()));
    }
    if let Some(p) = env {
        let e = Environment::from_bytes(&fs::read(p)?)?;
        if report.provenance.env_hash.as_deref() != Some(e.hash().as_str()) {
            return Err(Error::Integrity(format!("{} is not the environment of this report", p.display())));
        }
        if let Some(fp) = field {
            let (_, h) = load_field(&e, fp)?;
            if report.provenance.field_hash.as_deref() != Some(h.as_str()) {
                return Err(Error::Integrity(format!("{} is not the field of this report", fp.display())));
            }
        }
    } else if field.is_some() {
        return Err(config_err("--field", "needs --env to be checked"));
    }

    let stored: BTreeSet<&str> = report.verdicts.iter().map(|v| v.check.as_str()).collect();
    let th = match thresholds {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let de = toml::Deserializer::parse(&text).map_err(|e| config_err("<thresholds>", e.to_string()))?;
            serde_path_to_error::deserialize(de).map_err(|e| config_err(format!("thresholds.{}", e.path()), e.into_inner().to_string()))?
        }
        None => report.thresholds,
    };
    let (mut verdicts, warnings) = report.recompute(&th);
    verdicts.retain(|v| stored.contains(v.check.as_str()));
    if thresholds.is_none() && verdicts != report.verdicts {
        return Err(Error::Integrity("stored verdicts do not follow from the stored summaries".into()));
    }
    let isotropy = match &report.isotropy {
        Some(iso) => {
            let again = iso.recompute()?;
            if again.verdicts != iso.verdicts {
                return Err(Error::Integrity("stored isotropy verdicts do not follow from the stored statistics".into()));
            }
            Some(again)
        }
        None => None,
    };
    let checked = DiagnosticsReport { verdicts, warnings, isotropy, thresholds: th, ..report.clone() };
    print_verdicts(&checked);
    let failed = checked.failed();
    if failed.is_empty() {
        println!("all verdicts pass");
        Ok(Outcome::Ok)
    } else {
        println!("failed: {}", failed.iter().map(|v| v.check.as_str()).collect::<Vec<_>>().join(", "));
        Ok(Outcome::VerdictFailure)
    }
}
