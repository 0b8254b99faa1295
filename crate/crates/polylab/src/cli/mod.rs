//! Experiment runner and verification harness: parses configs, schedules
//! replicas over a bounded worker pool, streams results to JSONL/CSV files
//! with full provenance, and runs the verification suites.
//!
//! Exit codes: 0 success, 2 config rejection (including budget overruns and
//! unknown flags), 3 verification-suite failure.
//!
//! Output layout per run: `<out>/<command>-<hash8>/data.jsonl`,
//! `summary.csv`, `manifest.json`. Data files never contain timestamps or
//! thread counts, so identical configs produce byte-identical data files at
//! any `--threads`; the manifest records wall time separately.

pub mod suites;

use crate::atoms::{atom_report, CesaroTrace, Schedule};
use crate::dp::{evolve, EvolveOptions};
use crate::env::EnvSpec;
use crate::fenergy::{
    estimate_alpha, estimate_p, gap_scan, lemma_dec_conditions, martingale_diagnostic,
    EstimatorOptions,
};
use crate::simplex::{lemma_utile_check, ConstraintSet};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("suite failure: {0}")]
    SuiteFailure(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::SuiteFailure(_) => 3,
            _ => 2,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "polylab",
    version,
    about = "Directed-polymer simulation laboratory: endpoint measures, atom localization, free energies, simplex lemmas"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (overridden by POLYLAB_THREADS; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory root.
    #[arg(long, global = true, default_value = "polylab-out")]
    out: PathBuf,
    /// JSON config file; explicit flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the endpoint-measure recursion over replicas and estimate p(beta).
    Simulate(SimulateArgs),
    /// Scan a beta grid for the quenched-annealed gap with shared seeds.
    Scan(ScanArgs),
    /// Estimate the greedy path constant alpha from max-plus recursions.
    Alpha(AlphaArgs),
    /// Stream epsilon-atom reports and Cesaro localization traces.
    Atoms(AtomsArgs),
    /// Verify the constrained-simplex minimization lemmas numerically.
    VerifyLemma(VerifyLemmaArgs),
    /// Martingale law-of-large-numbers diagnostic.
    Martingale(MartingaleArgs),
    /// Compare the forward recursion against the brute-force path oracle.
    OracleCheck(OracleCheckArgs),
    /// Evaluate the analytic environment conditions for a spec.
    Conditions(ConditionsArgs),
    /// Run a named verification suite (oracle|bounds|lemmas|localization|all).
    VerifySuite(VerifySuiteArgs),
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    /// Spec JSON, a preset name (gauss, exp1, exp1c, pareto4, uniform01,
    /// bern-<p>), or a path to a spec file.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Clamp the environment to [-L, L] (truncated Hamiltonian).
    #[arg(long)]
    trunc: Option<f64>,
    /// Window pruning threshold relative to the slice maximum.
    #[arg(long)]
    prune_rel: Option<f64>,
    /// Memory budget per slice, bytes.
    #[arg(long)]
    max_slice_bytes: Option<usize>,
    /// Also compute N(n) per replica and record the pathwise bound margin.
    #[arg(long)]
    pathwise: bool,
}

#[derive(Args, Debug, Clone)]
struct ScanArgs {
    #[arg(long)]
    spec: Option<String>,
    /// Comma-separated increasing beta grid.
    #[arg(long)]
    beta_grid: Option<String>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    prune_rel: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct AlphaArgs {
    #[arg(long)]
    spec: Option<String>,
    /// Comma-separated increasing horizons.
    #[arg(long)]
    n_list: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also report which phase-transition condition applies.
    #[arg(long)]
    dec_conditions: bool,
}

#[derive(Args, Debug, Clone)]
struct AtomsArgs {
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated fixed epsilon grid.
    #[arg(long)]
    eps_grid: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    /// Vanishing schedule: "log:<c>" for c/ln(j+2) or "pow:<c>,<gamma>".
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    prune_rel: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct VerifyLemmaArgs {
    /// Which lemma family: "inf" (atom-mass), "cap", or "utile".
    #[arg(long)]
    lemma: Option<String>,
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Cap block size k (eps = 1/k) for --lemma cap.
    #[arg(long)]
    cap_k: Option<u32>,
    #[arg(long)]
    n: Option<usize>,
    /// Bank rows.
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<u32>,
    /// Random feasible points for the optimality sweep.
    #[arg(long)]
    trials: Option<u32>,
    /// Beta interval "a,b" for --lemma utile.
    #[arg(long)]
    beta_range: Option<String>,
    /// Horizons for --lemma utile.
    #[arg(long)]
    n_list: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct MartingaleArgs {
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    d: Option<usize>,
    /// Fresh-layer resampling draws per step.
    #[arg(long)]
    samples: Option<u32>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct OracleCheckArgs {
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trunc: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct ConditionsArgs {
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct VerifySuiteArgs {
    /// oracle | bounds | lemmas | localization | all
    suite: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Reduced sizes for smoke testing.
    #[arg(long)]
    quick: bool,
}

/// Entry point used by the binary: returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version on stdout with code 0; usage errors
            // land on stderr with code 2
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = resolve_threads(cli.threads);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot build worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> usize {
    if let Ok(v) = std::env::var("POLYLAB_THREADS") {
        if let Ok(t) = v.parse::<usize>() {
            if t >= 1 {
                return t;
            }
        }
    }
    flag.unwrap_or(0).max(0)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let file_cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| config_err(format!("malformed config json: {e}")))?
        }
        None => serde_json::Value::Null,
    };
    let ctx = Ctx { out_root: cli.out.clone(), file: file_cfg };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Scan(a) => cmd_scan(&ctx, a),
        Command::Alpha(a) => cmd_alpha(&ctx, a),
        Command::Atoms(a) => cmd_atoms(&ctx, a),
        Command::VerifyLemma(a) => cmd_verify_lemma(&ctx, a),
        Command::Martingale(a) => cmd_martingale(&ctx, a),
        Command::OracleCheck(a) => cmd_oracle_check(&ctx, a),
        Command::Conditions(a) => cmd_conditions(&ctx, a),
        Command::VerifySuite(a) => cmd_verify_suite(&ctx, a),
    }
}

struct Ctx {
    out_root: PathBuf,
    file: serde_json::Value,
}

impl Ctx {
    fn get<T: serde::de::DeserializeOwned>(&self, key: &str) -> Option<T> {
        self.file.get(key).and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    fn want<T: serde::de::DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<T, CliError> {
        flag.or_else(|| self.get(key))
            .ok_or_else(|| config_err(format!("missing required parameter --{key} (or '{key}' in --config)")))
    }

    fn opt<T: serde::de::DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Option<T> {
        flag.or_else(|| self.get(key))
    }
}

// ---------------------------------------------------------------------------
// Shared parsing helpers
// ---------------------------------------------------------------------------

fn parse_spec(text: &str) -> Result<EnvSpec, CliError> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        return EnvSpec::from_json(trimmed).map_err(config_err);
    }
    match trimmed {
        "gauss" | "gaussian" => return Ok(EnvSpec::gaussian(0.0, 1.0)),
        "exp1" => return Ok(EnvSpec::exponential(1.0, 0.0)),
        "exp1c" => return Ok(EnvSpec::exponential_centered(1.0)),
        "pareto4" => return Ok(EnvSpec::pareto(4.0, 1.0, 0.0)),
        "uniform01" => return Ok(EnvSpec::uniform(0.0, 1.0)),
        _ => {}
    }
    if let Some(p) = trimmed.strip_prefix("bern-") {
        let p: f64 = p.parse().map_err(|_| config_err(format!("bad bernoulli preset '{trimmed}'")))?;
        return EnvSpec::bernoulli(p, 1.0, 0.0).validate().map(|_| EnvSpec::bernoulli(p, 1.0, 0.0)).map_err(config_err);
    }
    let path = Path::new(trimmed);
    if path.exists() {
        let body = std::fs::read_to_string(path)?;
        return EnvSpec::from_json(&body).map_err(config_err);
    }
    Err(config_err(format!(
        "spec '{trimmed}' is neither inline json, a preset (gauss, exp1, exp1c, pareto4, uniform01, bern-<p>), nor a file"
    )))
}

/// Parse and validate the spec against the standing assumptions; rejection
/// names the failed condition (exit code 2 via CliError::Config).
fn accept_spec(text: &str, d: usize) -> Result<EnvSpec, CliError> {
    let spec = parse_spec(text)?;
    spec.accept(d).map_err(config_err)?;
    Ok(spec)
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| config_err(format!("bad {what} entry '{t}'"))))
        .collect()
}

fn parse_u32_list(text: &str, what: &str) -> Result<Vec<u32>, CliError> {
    text.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|_| config_err(format!("bad {what} entry '{t}'"))))
        .collect()
}

fn evolve_options(prune_rel: Option<f64>, max_slice_bytes: Option<usize>) -> EvolveOptions {
    let mut opts = EvolveOptions::default();
    if let Some(p) = prune_rel {
        opts.prune_rel = p;
    }
    if let Some(b) = max_slice_bytes {
        opts.max_slice_bytes = b;
    }
    opts
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serialization cannot fail");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

struct RunWriter {
    dir: PathBuf,
    hash: String,
    data: Vec<String>,
    summary: Vec<String>,
    started: std::time::Instant,
}

impl RunWriter {
    fn new(ctx: &Ctx, command: &str, hash: String) -> Self {
        let dir = ctx.out_root.join(format!("{command}-{}", &hash[..8]));
        RunWriter {
            dir,
            hash,
            data: Vec::new(),
            summary: Vec::new(),
            started: std::time::Instant::now(),
        }
    }

    fn hash8(&self) -> &str {
        &self.hash[..8]
    }

    fn push_row<T: Serialize>(&mut self, row: &T) {
        self.data.push(serde_json::to_string(row).expect("row serialization cannot fail"));
    }

    fn push_summary_line(&mut self, line: String) {
        self.summary.push(line);
    }

    /// Write data.jsonl, summary.csv and manifest.json; returns the manifest.
    fn finish(self) -> Result<RunManifest, CliError> {
        std::fs::create_dir_all(&self.dir)?;
        let data_path = self.dir.join("data.jsonl");
        let summary_path = self.dir.join("summary.csv");
        let mut files = Vec::new();
        for (path, lines) in [(&data_path, &self.data), (&summary_path, &self.summary)] {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            for line in lines {
                f.write_all(line.as_bytes())?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
            drop(f);
            let bytes = std::fs::read(path)?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            let mut hex = String::new();
            for b in hasher.finalize() {
                let _ = write!(hex, "{b:02x}");
            }
            files.push(FileChecksum {
                name: path.file_name().unwrap().to_string_lossy().into_owned(),
                sha256: hex,
                lines: lines.len(),
            });
        }
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.hash.clone(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            files,
        };
        let mpath = self.dir.join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest).unwrap())?;
        println!("wrote {}", self.dir.display());
        Ok(manifest)
    }
}

/// Per-run metadata: config hash, tool version, wall time, data checksums.
/// Reruns with the same config hash produce identical data checksums; wall
/// time lives only here.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub files: Vec<FileChecksum>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileChecksum {
    pub name: String,
    pub sha256: String,
    pub lines: usize,
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateConfig {
    schema: &'static str,
    spec: String,
    beta: f64,
    n: u32,
    d: usize,
    replicas: u32,
    seed: u64,
    trunc: Option<f64>,
    prune_rel: f64,
    pathwise: bool,
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<(), CliError> {
    let spec_text: String = ctx.want(a.spec.clone(), "spec")?;
    let d: usize = ctx.want(a.d, "d")?;
    let spec = accept_spec(&spec_text, d)?;
    let beta: f64 = ctx.want(a.beta, "beta")?;
    let n: u32 = ctx.want(a.n, "n")?;
    let replicas: u32 = ctx.want(a.replicas, "replicas")?;
    let seed: u64 = ctx.want(a.seed, "seed")?;
    let opts = EstimatorOptions {
        evolve: evolve_options(ctx.opt(a.prune_rel, "prune_rel"), ctx.opt(a.max_slice_bytes, "max_slice_bytes")),
        check_pathwise: a.pathwise || ctx.get::<bool>("pathwise").unwrap_or(false),
    };
    let cfg = SimulateConfig {
        schema: "polylab.simulate.v1",
        spec: spec.to_json(),
        beta,
        n,
        d,
        replicas,
        seed,
        trunc: ctx.opt(a.trunc, "trunc"),
        prune_rel: opts.evolve.prune_rel,
        pathwise: opts.check_pathwise,
    };
    let hash = config_hash(&cfg);
    let mut w = RunWriter::new(ctx, "simulate", hash);
    // truncation is routed through the estimator by clamping inside a
    // dedicated spec wrapper is not possible; run estimate on the truncated
    // recursion when asked
    let est = if let Some(l) = cfg.trunc {
        if l <= 0.0 {
            return Err(config_err("trunc must be positive"));
        }
        estimate_p_truncated(spec, beta, n, d, replicas, seed, l, &opts).map_err(config_err)?
    } else {
        estimate_p(spec, beta, n, d, replicas, seed, &opts).map_err(config_err)?
    };
    #[derive(Serialize)]
    struct Row<'a> {
        schema: &'static str,
        config: &'a str,
        replica: u64,
        seed: u64,
        beta: f64,
        n: u32,
        d: usize,
        log_z: f64,
        p_hat: f64,
        pruned_bound: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        max_energy: Option<f64>,
    }
    let hash8 = w.hash8().to_string();
    for r in &est.per_replica {
        w.push_row(&Row {
            schema: "polylab.simulate.v1",
            config: &hash8,
            replica: r.replica,
            seed,
            beta,
            n,
            d,
            log_z: r.log_z,
            p_hat: r.log_z / n as f64,
            pruned_bound: r.pruned_mass_bound,
            max_energy: if r.max_energy.is_nan() { None } else { Some(r.max_energy) },
        });
    }
    w.push_summary_line("beta,n,d,replicas,p_mean,p_stderr,lambda,pathwise_margin".into());
    w.push_summary_line(format!(
        "{},{},{},{},{},{},{},{}",
        beta,
        n,
        d,
        replicas,
        est.mean,
        est.stderr,
        spec.log_mgf(beta),
        est.pathwise_margin
    ));
    println!(
        "p_hat = {} +- {} (lambda = {}, {} replicas)",
        est.mean,
        est.stderr,
        spec.log_mgf(beta),
        replicas
    );
    w.finish()?;
    Ok(())
}

/// estimate_p over the truncated recursion (clamped Hamiltonian).
fn estimate_p_truncated(
    spec: EnvSpec,
    beta: f64,
    n: u32,
    d: usize,
    replicas: u32,
    seed: u64,
    trunc: f64,
    opts: &EstimatorOptions,
) -> Result<crate::fenergy::FreeEnergyEstimate, crate::fenergy::FenergyError> {
    use crate::env::EnvField;
    use crate::numeric::mean_stderr;
    use rayon::prelude::*;
    let runs: Result<Vec<crate::fenergy::ReplicaRun>, crate::dp::DpError> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let field = EnvField::new(spec, seed, r);
            let state = crate::dp::truncated_evolve(&field, beta, n, d, trunc, &opts.evolve, |_| {})?;
            Ok(crate::fenergy::ReplicaRun {
                replica: r,
                n,
                log_z: state.log_z,
                max_energy: f64::NAN,
                pruned_mass_bound: state.pruned_mass_bound,
            })
        })
        .collect();
    let per_replica = runs?;
    let values: Vec<f64> = per_replica.iter().map(|r| r.log_z / n as f64).collect();
    let (mean, stderr) = mean_stderr(&values);
    Ok(crate::fenergy::FreeEnergyEstimate {
        beta,
        n,
        d,
        replicas,
        mean,
        stderr,
        per_replica,
        pathwise_margin: f64::NAN,
    })
}

#[derive(Serialize)]
struct ScanConfig {
    schema: &'static str,
    spec: String,
    beta_grid: Vec<f64>,
    n: u32,
    d: usize,
    replicas: u32,
    seed: u64,
    prune_rel: f64,
}

fn cmd_scan(ctx: &Ctx, a: &ScanArgs) -> Result<(), CliError> {
    let d: usize = ctx.want(a.d, "d")?;
    let spec = accept_spec(&ctx.want(a.spec.clone(), "spec")?, d)?;
    let grid = parse_f64_list(&ctx.want(a.beta_grid.clone(), "beta_grid")?, "beta_grid")?;
    let n: u32 = ctx.want(a.n, "n")?;
    let replicas: u32 = ctx.want(a.replicas, "replicas")?;
    let seed: u64 = ctx.want(a.seed, "seed")?;
    let opts = EstimatorOptions {
        evolve: evolve_options(ctx.opt(a.prune_rel, "prune_rel"), None),
        check_pathwise: false,
    };
    let cfg = ScanConfig {
        schema: "polylab.scan.v1",
        spec: spec.to_json(),
        beta_grid: grid.clone(),
        n,
        d,
        replicas,
        seed,
        prune_rel: opts.evolve.prune_rel,
    };
    let hash = config_hash(&cfg);
    let mut w = RunWriter::new(ctx, "scan", hash);
    let scan = gap_scan(spec, &grid, n, d, replicas, seed, &opts).map_err(config_err)?;
    #[derive(Serialize)]
    struct Row<'a> {
        schema: &'static str,
        config: &'a str,
        seed: u64,
        beta: f64,
        p_hat: f64,
        stderr: f64,
        lambda: f64,
        gap: f64,
    }
    let hash8 = w.hash8().to_string();
    w.push_summary_line("beta,p_hat,stderr,lambda,gap".into());
    for row in &scan.rows {
        w.push_row(&Row {
            schema: "polylab.scan.v1",
            config: &hash8,
            seed,
            beta: row.beta,
            p_hat: row.p_hat,
            stderr: row.stderr,
            lambda: row.lambda,
            gap: row.gap,
        });
        w.push_summary_line(format!(
            "{},{},{},{},{}",
            row.beta, row.p_hat, row.stderr, row.lambda, row.gap
        ));
    }
    match scan.beta_c_bracket {
        Some((a, b)) => println!("beta_c bracket: ({a}, {b})"),
        None => println!("beta_c bracket: none (gap never separates from 0 on this grid)"),
    }
    w.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct AlphaConfig {
    schema: &'static str,
    spec: String,
    n_list: Vec<u32>,
    d: usize,
    replicas: u32,
    seed: u64,
}

fn cmd_alpha(ctx: &Ctx, a: &AlphaArgs) -> Result<(), CliError> {
    let d: usize = ctx.want(a.d, "d")?;
    let spec = accept_spec(&ctx.want(a.spec.clone(), "spec")?, d)?;
    let n_list = parse_u32_list(&ctx.want(a.n_list.clone(), "n_list")?, "n_list")?;
    let replicas: u32 = ctx.want(a.replicas, "replicas")?;
    let seed: u64 = ctx.want(a.seed, "seed")?;
    let cfg = AlphaConfig {
        schema: "polylab.alpha.v1",
        spec: spec.to_json(),
        n_list: n_list.clone(),
        d,
        replicas,
        seed,
    };
    let hash = config_hash(&cfg);
    let mut w = RunWriter::new(ctx, "alpha", hash);
    let est = estimate_alpha(spec, &n_list, d, replicas, seed, &EstimatorOptions::default())
        .map_err(config_err)?;
    #[derive(Serialize)]
    struct Row<'a> {
        schema: &'static str,
        config: &'a str,
        seed: u64,
        n: u32,
        mean: f64,
        stderr: f64,
        biased_low: bool,
    }
    let hash8 = w.hash8().to_string();
    w.push_summary_line("n,alpha_mean,alpha_stderr".into());
    for &(n, mean, se) in &est.per_n {
        w.push_row(&Row {
            schema: "polylab.alpha.v1",
            config: &hash8,
            seed,
            n,
            mean,
            stderr: se,
            biased_low: true,
        });
        w.push_summary_line(format!("{n},{mean},{se}"));
    }
    println!("alpha_hat = {} +- {} (lower-biased finite-n estimate)", est.mean, est.stderr);
    if a.dec_conditions {
        let rep = lemma_dec_conditions(spec, d, &est, crate::fenergy::default_pc(d));
        println!("{}", serde_json::to_string_pretty(&rep).unwrap());
    }
    w.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct AtomsConfig {
    schema: &'static str,
    spec: String,
    beta: f64,
    n: u32,
    d: usize,
    replicas: u32,
    seed: u64,
    eps_grid: Vec<f64>,
    delta: f64,
    schedule: Option<String>,
    prune_rel: f64,
}

fn cmd_atoms(ctx: &Ctx, a: &AtomsArgs) -> Result<(), CliError> {
    let d: usize = ctx.want(a.d, "d")?;
    let spec = accept_spec(&ctx.want(a.spec.clone(), "spec")?, d)?;
    let beta: f64 = ctx.want(a.beta, "beta")?;
    let n: u32 = ctx.want(a.n, "n")?;
    let replicas: u32 = ctx.want(a.replicas, "replicas")?;
    let seed: u64 = ctx.want(a.seed, "seed")?;
    let delta: f64 = ctx.want(a.delta, "delta")?;
    let eps_grid = match ctx.opt(a.eps_grid.clone(), "eps_grid") {
        Some(t) => parse_f64_list(&t, "eps_grid")?,
        None => vec![],
    };
    let schedule_text: Option<String> = ctx.opt(a.schedule.clone(), "schedule");
    let schedule = match &schedule_text {
        Some(t) => Some(parse_schedule(t)?),
        None => None,
    };
    if eps_grid.is_empty() && schedule.is_none() {
        return Err(config_err("need --eps-grid and/or --schedule"));
    }
    let opts = evolve_options(ctx.opt(a.prune_rel, "prune_rel"), None);
    let cfg = AtomsConfig {
        schema: "polylab.atoms.v1",
        spec: spec.to_json(),
        beta,
        n,
        d,
        replicas,
        seed,
        eps_grid: eps_grid.clone(),
        delta,
        schedule: schedule_text.clone(),
        prune_rel: opts.prune_rel,
    };
    let hash = config_hash(&cfg);
    let mut w = RunWriter::new(ctx, "atoms", hash);
    let hash8 = w.hash8().to_string();

    // one tracker per threshold mode
    let mut modes: Vec<(String, Schedule)> = eps_grid
        .iter()
        .map(|&e| (format!("{e}"), Schedule::Fixed { eps: e }))
        .collect();
    if let Some(s) = schedule {
        modes.push((schedule_text.clone().unwrap(), s));
    }

    #[derive(Serialize)]
    struct Row<'a> {
        schema: &'static str,
        config: &'a str,
        replica: u64,
        seed: u64,
        j: u32,
        eps: f64,
        atom_mass: f64,
        favorite: f64,
        #[serde(rename = "evA")]
        ev_a: bool,
        #[serde(rename = "evAd")]
        ev_ad: bool,
    }

    use rayon::prelude::*;
    let results: Result<Vec<(Vec<String>, Vec<(String, f64, f64, f64, f64)>)>, String> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let field = crate::env::EnvField::new(spec, seed, r);
            let mut rows: Vec<String> = Vec::new();
            let mut traces: Vec<CesaroTrace> = modes.iter().map(|_| CesaroTrace::new()).collect();
            let mut err: Option<String> = None;
            evolve(&field, beta, n, d, &opts, |s| {
                if err.is_some() {
                    return;
                }
                for ((label, sched), trace) in modes.iter().zip(traces.iter_mut()) {
                    let _ = label;
                    let eps = sched.eps_at(s.j);
                    match atom_report(s.nu, eps, delta) {
                        Ok(rep) => {
                            let row = Row {
                                schema: "polylab.atoms.v1",
                                config: &hash8,
                                replica: r,
                                seed,
                                j: s.j,
                                eps,
                                atom_mass: rep.atom_mass,
                                favorite: rep.favorite_mass,
                                ev_a: rep.event_has_atom,
                                ev_ad: rep.event_mass_ge_delta,
                            };
                            rows.push(serde_json::to_string(&row).unwrap());
                            if let Err(e) = trace.push(&rep) {
                                err = Some(e.to_string());
                            }
                        }
                        Err(e) => err = Some(e.to_string()),
                    }
                }
            })
            .map_err(|e| e.to_string())?;
            if let Some(e) = err {
                return Err(e);
            }
            let summaries = modes
                .iter()
                .zip(&traces)
                .map(|((label, _), t)| {
                    (
                        label.clone(),
                        t.mean_atom_mass(),
                        t.mean_favorite_mass(),
                        t.freq_has_atom(),
                        t.freq_mass_ge_delta(),
                    )
                })
                .collect();
            Ok((rows, summaries))
        })
        .collect();
    let results = results.map_err(config_err)?;
    w.push_summary_line("replica,eps_mode,cesaro_atom_mass,favorite_mean,freq_evA,freq_evAd".into());
    for (r, (rows, summaries)) in results.into_iter().enumerate() {
        for line in rows {
            w.data.push(line);
        }
        for (label, am, fav, fa, fad) in summaries {
            w.push_summary_line(format!("{r},{label},{am},{fav},{fa},{fad}"));
        }
    }
    w.finish()?;
    Ok(())
}

fn parse_schedule(text: &str) -> Result<Schedule, CliError> {
    if let Some(c) = text.strip_prefix("log:") {
        let c: f64 = c.parse().map_err(|_| config_err(format!("bad schedule '{text}'")))?;
        return Ok(Schedule::LogInverse { c });
    }
    if let Some(rest) = text.strip_prefix("pow:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() == 2 {
            let c: f64 = parts[0].parse().map_err(|_| config_err(format!("bad schedule '{text}'")))?;
            let g: f64 = parts[1].parse().map_err(|_| config_err(format!("bad schedule '{text}'")))?;
            return Ok(Schedule::PowerLaw { c, gamma: g });
        }
    }
    Err(config_err(format!("bad schedule '{text}': want log:<c> or pow:<c>,<gamma>")))
}

#[derive(Serialize)]
struct VerifyLemmaConfig {
    schema: &'static str,
    lemma: String,
    spec: String,
    eps: Option<f64>,
    delta: Option<f64>,
    cap_k: Option<u32>,
    n: Option<usize>,
    m: u32,
    seed: u64,
    restarts: u32,
    trials: u32,
    beta_range: Option<String>,
    n_list: Option<String>,
}

fn cmd_verify_lemma(ctx: &Ctx, a: &VerifyLemmaArgs) -> Result<(), CliError> {
    let lemma: String = ctx.want(a.lemma.clone(), "lemma")?;
    let spec = parse_spec(&ctx.want(a.spec.clone(), "spec")?)?;
    spec.validate().map_err(config_err)?;
    let m: u32 = ctx.opt(a.m, "m").unwrap_or(100_000);
    let seed: u64 = ctx.want(a.seed, "seed")?;
    let restarts: u32 = ctx.opt(a.restarts, "restarts").unwrap_or(8);
    let trials: u32 = ctx.opt(a.trials, "trials").unwrap_or(200);
    let cfg = VerifyLemmaConfig {
        schema: "polylab.verify-lemma.v1",
        lemma: lemma.clone(),
        spec: spec.to_json(),
        eps: ctx.opt(a.eps, "eps"),
        delta: ctx.opt(a.delta, "delta"),
        cap_k: ctx.opt(a.cap_k, "cap_k"),
        n: ctx.opt(a.n, "n"),
        m,
        seed,
        restarts,
        trials,
        beta_range: ctx.opt(a.beta_range.clone(), "beta_range"),
        n_list: ctx.opt(a.n_list.clone(), "n_list"),
    };
    let hash = config_hash(&cfg);
    let mut w = RunWriter::new(ctx, "verify-lemma", hash);
    match lemma.as_str() {
        "inf" | "cap" => {
            let cs = if lemma == "inf" {
                let eps = ctx.want(a.eps, "eps")?;
                let delta = ctx.want(a.delta, "delta")?;
                let k = ((1.0 - delta) / eps).round() as usize;
                let n = ctx.opt(a.n, "n").unwrap_or(2 * (k + 1));
                ConstraintSet::atom_mass(eps, delta, n).map_err(config_err)?
            } else {
                let k = ctx.want(a.cap_k, "cap_k")? as usize;
                let n = ctx.opt(a.n, "n").unwrap_or(2 * k);
                ConstraintSet::cap(1.0 / k as f64, n).map_err(config_err)?
            };
            let verdict = suites::check_lemma_minimizer(spec, &cs, m, trials, restarts, seed)
                .map_err(config_err)?;
            w.push_row(&verdict);
            w.push_summary_line("name,pass,detail".into());
            w.push_summary_line(format!("{},{},\"{}\"", verdict.name, verdict.pass, verdict.detail));
            println!("{}", verdict.line());
            w.finish()?;
            if !verdict.pass {
                return Err(CliError::SuiteFailure(verdict.detail));
            }
        }
        "utile" => {
            let range = ctx.want(a.beta_range.clone(), "beta_range")?;
            let parts = parse_f64_list(&range, "beta_range")?;
            if parts.len() != 2 {
                return Err(config_err("beta_range must be 'a,b'"));
            }
            let n_list = parse_u32_list(&ctx.want(a.n_list.clone(), "n_list")?, "n_list")?;
            let rows = lemma_utile_check(spec, parts[0], parts[1], &n_list, m, seed)
                .map_err(config_err)?;
            w.push_summary_line("n,beta_argmin,value,stderr,target".into());
            for row in &rows {
                w.push_row(row);
                w.push_summary_line(format!(
                    "{},{},{},{},{}",
                    row.n, row.beta_argmin, row.value, row.stderr, row.target
                ));
                println!(
                    "n={}: inf_beta estimate {} +- {} (target {})",
                    row.n, row.value, row.stderr, row.target
                );
            }
            w.finish()?;
        }
        other => return Err(config_err(format!("unknown lemma '{other}' (want inf, cap or utile)"))),
    }
    Ok(())
}

#[derive(Serialize)]
struct MartingaleConfig {
    schema: &'static str,
    spec: String,
    beta: f64,
    eps: f64,
    delta: f64,
    n: u32,
    d: usize,
    samples: u32,
    replicas: u32,
    seed: u64,
}

fn cmd_martingale(ctx: &Ctx, a: &MartingaleArgs) -> Result<(), CliError> {
    let d: usize = ctx.want(a.d, "d")?;
    let spec = accept_spec(&ctx.want(a.spec.clone(), "spec")?, d)?;
    let beta: f64 = ctx.want(a.beta, "beta")?;
    let eps: f64 = ctx.want(a.eps, "eps")?;
    let delta: f64 = ctx.want(a.delta, "delta")?;
    let n: u32 = ctx.want(a.n, "n")?;
    let samples: u32 = ctx.opt(a.samples, "samples").unwrap_or(200);
    let replicas: u32 = ctx.want(a.replicas, "replicas")?;
    let seed: u64 = ctx.want(a.seed, "seed")?;
    let cfg = MartingaleConfig {
        schema: "polylab.martingale.v1",
        spec: spec.to_json(),
        beta,
        eps,
        delta,
        n,
        d,
        samples,
        replicas,
        seed,
    };
    let hash = config_hash(&cfg);
    let mut w = RunWriter::new(ctx, "martingale", hash);
    let hash8 = w.hash8().to_string();
    let checkpoints: Vec<u32> = decade_checkpoints(n);
    use rayon::prelude::*;
    let traces: Result<Vec<_>, _> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            martingale_diagnostic(
                spec,
                beta,
                eps,
                delta,
                n,
                d,
                samples,
                seed,
                r,
                &checkpoints,
                &EvolveOptions::default(),
            )
        })
        .collect();
    let traces = traces.map_err(config_err)?;
    #[derive(Serialize)]
    struct Row<'a> {
        schema: &'static str,
        config: &'a str,
        replica: u64,
        seed: u64,
        n: u32,
        m_over_n: f64,
        n_over_n: f64,
        mc_err: f64,
    }
    w.push_summary_line("n,mean_abs_m_over_n,stderr".into());
    for (r, t) in traces.iter().enumerate() {
        for &(cn, m, nn, err) in &t.checkpoints {
            w.push_row(&Row {
                schema: "polylab.martingale.v1",
                config: &hash8,
                replica: r as u64,
                seed,
                n: cn,
                m_over_n: m,
                n_over_n: nn,
                mc_err: err,
            });
        }
    }
    for (k, &cn) in checkpoints.iter().enumerate() {
        let vals: Vec<f64> = traces.iter().map(|t| t.checkpoints[k].1.abs()).collect();
        let (mean, se) = crate::numeric::mean_stderr(&vals);
        w.push_summary_line(format!("{cn},{mean},{se}"));
        println!("n={cn}: mean |M_n/n| = {mean} +- {se}");
    }
    w.finish()?;
    Ok(())
}

fn decade_checkpoints(n: u32) -> Vec<u32> {
    let mut cps = Vec::new();
    let mut m = 10u32.min(n);
    while m < n {
        cps.push(m);
        m = m.saturating_mul(10).min(n);
        if *cps.last().unwrap() == m {
            break;
        }
    }
    if cps.last() != Some(&n) {
        cps.push(n);
    }
    cps
}

#[derive(Serialize)]
struct OracleCheckConfig {
    schema: &'static str,
    spec: String,
    beta: f64,
    n: u32,
    d: usize,
    seed: u64,
    trunc: Option<f64>,
}

fn cmd_oracle_check(ctx: &Ctx, a: &OracleCheckArgs) -> Result<(), CliError> {
    let d: usize = ctx.want(a.d, "d")?;
    let spec = accept_spec(&ctx.want(a.spec.clone(), "spec")?, d)?;
    let beta: f64 = ctx.want(a.beta, "beta")?;
    let n: u32 = ctx.want(a.n, "n")?;
    let seed: u64 = ctx.want(a.seed, "seed")?;
    let trunc: Option<f64> = ctx.opt(a.trunc, "trunc");
    let cfg = OracleCheckConfig {
        schema: "polylab.oracle-check.v1",
        spec: spec.to_json(),
        beta,
        n,
        d,
        seed,
        trunc,
    };
    let hash = config_hash(&cfg);
    let mut w = RunWriter::new(ctx, "oracle-check", hash);
    let verdict = suites::check_one_oracle_instance(spec, beta, n, d, seed, trunc).map_err(config_err)?;
    w.push_row(&verdict);
    w.push_summary_line("name,pass,detail".into());
    w.push_summary_line(format!("{},{},\"{}\"", verdict.name, verdict.pass, verdict.detail));
    println!("{}", verdict.line());
    w.finish()?;
    if !verdict.pass {
        return Err(CliError::SuiteFailure(verdict.detail));
    }
    Ok(())
}

fn cmd_conditions(ctx: &Ctx, a: &ConditionsArgs) -> Result<(), CliError> {
    let d: usize = ctx.want(a.d, "d")?;
    let spec_text: String = ctx.want(a.spec.clone(), "spec")?;
    let spec = parse_spec(&spec_text)?;
    spec.validate().map_err(config_err)?;
    let report = spec.check_conditions(d);
    #[derive(Serialize)]
    struct Out {
        spec: String,
        d: usize,
        hyp1: bool,
        hyp2: bool,
        hyp3: bool,
        explodes: bool,
        theta_moment: Option<f64>,
        /// "inf" when the radius is infinite (JSON numbers cannot carry it).
        mgf_radius: String,
        esssup: String,
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Out {
            spec: spec.to_json(),
            d,
            hyp1: report.hyp1,
            hyp2: report.hyp2,
            hyp3: report.hyp3,
            explodes: report.explodes,
            theta_moment: report.theta_moment,
            mgf_radius: format!("{}", report.r),
            esssup: format!("{}", report.esssup),
        })
        .unwrap()
    );
    // the refusal path names the failed condition and exits 2
    spec.accept(d).map_err(config_err)?;
    Ok(())
}

fn cmd_verify_suite(ctx: &Ctx, a: &VerifySuiteArgs) -> Result<(), CliError> {
    let seed = a.seed.unwrap_or(20260810);
    let profile = suites::Profile { quick: a.quick, seed };
    let verdicts = match a.suite.as_str() {
        "oracle" => suites::oracle_suite(&profile),
        "bounds" => suites::bounds_suite(&profile),
        "lemmas" => suites::lemmas_suite(&profile),
        "localization" => suites::localization_suite(&profile),
        "all" => {
            let mut v = suites::oracle_suite(&profile);
            v.extend(suites::bounds_suite(&profile));
            v.extend(suites::lemmas_suite(&profile));
            v.extend(suites::localization_suite(&profile));
            v
        }
        other => return Err(config_err(format!("unknown suite '{other}'"))),
    };
    #[derive(Serialize)]
    struct SuiteCfg<'a> {
        schema: &'static str,
        suite: &'a str,
        seed: u64,
        quick: bool,
    }
    let hash = config_hash(&SuiteCfg {
        schema: "polylab.verify-suite.v1",
        suite: &a.suite,
        seed,
        quick: a.quick,
    });
    let mut w = RunWriter::new(ctx, "verify-suite", hash);
    let mut failures = 0usize;
    w.push_summary_line("name,pass,detail".into());
    for v in &verdicts {
        println!("{}", v.line());
        w.push_row(v);
        w.push_summary_line(format!("{},{},\"{}\"", v.name, v.pass, v.detail.replace('"', "'")));
        if !v.pass {
            failures += 1;
        }
    }
    w.finish()?;
    if failures > 0 {
        return Err(CliError::SuiteFailure(format!("{failures} assertion(s) failed")));
    }
    println!("all {} assertions passed", verdicts.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_and_inline_specs_parse() {
        assert_eq!(parse_spec("exp1").unwrap(), EnvSpec::exponential(1.0, 0.0));
        assert_eq!(parse_spec("gauss").unwrap(), EnvSpec::gaussian(0.0, 1.0));
        assert_eq!(
            parse_spec(r#"{"family":"pareto","params":{"a":4.0},"offset":0}"#).unwrap(),
            EnvSpec::pareto(4.0, 1.0, 0.0)
        );
        assert!(parse_spec("no-such-preset").is_err());
        let b = parse_spec("bern-0.4").unwrap();
        assert_eq!(b, EnvSpec::bernoulli(0.4, 1.0, 0.0));
    }

    #[test]
    fn rejected_spec_names_condition() {
        let err = accept_spec(r#"{"family":"pareto","params":{"a":1.5},"offset":0}"#, 1).unwrap_err();
        assert!(err.to_string().contains("condition (1)"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn decade_checkpoints_cover_n() {
        assert_eq!(decade_checkpoints(1000), vec![10, 100, 1000]);
        assert_eq!(decade_checkpoints(50), vec![10, 50]);
        assert_eq!(decade_checkpoints(5), vec![5]);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        #[derive(Serialize)]
        struct C {
            a: u32,
            b: f64,
        }
        let h1 = config_hash(&C { a: 1, b: 2.0 });
        let h2 = config_hash(&C { a: 1, b: 2.0 });
        let h3 = config_hash(&C { a: 2, b: 2.0 });
        assert_eq!(h1, h2);
        assert_ne!(h1, h3);
        assert_eq!(h1.len(), 64);
    }
}
