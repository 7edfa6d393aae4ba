//! `wdro`: run the robust-operator experiments from a JSON config.
//!
//! Exit codes: 0 all checks passed, 1 a check failed, 2 bad config or
//! arguments, 3 internal error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use wdro_core::config::OutputFormat;
use wdro_core::operators::scaling_limit;
use wdro_core::pde::solve;
use wdro_core::validation::{self, acceptance, CheckReport};
use wdro_core::{Error, ExperimentConfig, PdeScheme};

#[derive(Parser, Debug)]
#[command(name = "wdro", version, about = "Wasserstein-robust operators on grids: scaling limits and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set ambiguity.m=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (overrides output.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed (overrides experiment.parameters.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Difference quotient of the one-step operator against m‖∇f‖.
    Sensitivity,
    /// Difference quotient of the scaling limit against the generator.
    Generator,
    /// S(s+t)f against S(t)S(s)f for the configured pairs.
    Semigroup,
    /// Dyadic scaling limit S(horizon)f with its level gaps.
    Limit,
    /// Explicit scheme for the limiting equation, with snapshots.
    Pde,
    /// Scaling limit against the PDE solution.
    Crosscheck,
    /// Cross-check re-run at doubled resolution.
    Certify,
    /// Operator property suite, Lipschitz propagation, refinement monotonicity.
    Properties,
    /// Dual solver against the enumeration oracle.
    Dual,
    /// Numbered acceptance criteria (all if none given).
    Acceptance { criteria: Vec<usize> },
    /// Every check above on the configured experiment.
    All,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sensitivity => "sensitivity",
            Command::Generator => "generator",
            Command::Semigroup => "semigroup",
            Command::Limit => "limit",
            Command::Pde => "pde",
            Command::Crosscheck => "crosscheck",
            Command::Certify => "certify",
            Command::Properties => "properties",
            Command::Dual => "dual",
            Command::Acceptance { .. } => "acceptance",
            Command::All => "all",
        }
    }
}

enum Failure {
    Usage(String),
    Internal(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::Input(_) | Error::Model(_) => Failure::Usage(e.to_string()),
            other => Failure::Internal(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Internal(e)
    }
}

/// Sets `key` (dotted path) in `root`, parsing `raw` as JSON and falling
/// back to a plain string.
fn apply_override(root: &mut Value, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::Usage(format!("--set: malformed key `{key}`")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Failure::Usage(format!("--set {key}: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| json!({}));
    }
    unreachable!("loop returns on the last part")
}

/// Recursively overlays `patch` onto `base`; non-object values replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the config file, then `--set` and `--seed`, so partial
/// sections (e.g. only `model.actions`) inherit the remaining keys.
fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let file = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => json!({}),
    };
    if !file.is_object() {
        return Err(Failure::Usage("config must be a JSON object".into()));
    }
    let mut patch = file;
    for s in &common.set {
        apply_override(&mut patch, s)?;
    }
    if let Some(seed) = common.seed {
        apply_override(&mut patch, &format!("experiment.parameters.seed={seed}"))?;
    }
    let mut root = serde_json::to_value(ExperimentConfig::default()).context("serializing defaults")?;
    merge(&mut root, patch);
    let mut config: ExperimentConfig = serde_path_to_error::deserialize(root).map_err(|e| {
        let path = e.path().to_string();
        Failure::Usage(if path == "." {
            format!("config: {}", e.inner())
        } else {
            format!("config at `{path}`: {}", e.inner())
        })
    })?;
    if let Some(out) = &common.out {
        config.output.directory = out.display().to_string();
    }
    config.validate()?;
    Ok(config)
}

fn limit_report(config: &ExperimentConfig) -> Result<CheckReport, Failure> {
    let op = config.operator_config()?;
    let s = config.limit_settings();
    let p = &config.experiment.parameters;
    let (mut rep, started) = CheckReport::start(
        "limit",
        json!({ "function": p.function, "horizon": p.horizon, "stop_tol": s.stop_tol, "max_level": s.max_level }),
    );
    let lim = scaling_limit(&op, p.horizon, &p.function.sample(&op.grid)?, s.max_level, s.stop_tol, &s.window)?;
    rep.measure("last_level_gap", lim.level_gaps.last().copied().unwrap_or(0.0), s.stop_tol);
    rep.note("level", lim.level() as f64);
    rep.note("converged", if lim.converged { 1.0 } else { 0.0 });
    rep.artifact("limit.csv", lim.field.to_csv());
    rep.artifact("limit_levels.csv", lim.gaps_csv());
    Ok(rep.finish(started))
}

fn pde_report(config: &ExperimentConfig) -> Result<CheckReport, Failure> {
    let op = config.operator_config()?;
    let s = config.limit_settings();
    let p = &config.experiment.parameters;
    let mut times = p.snapshot_times.clone();
    times.push(p.horizon);
    let (mut rep, started) = CheckReport::start(
        "pde",
        json!({ "function": p.function, "horizon": p.horizon, "snapshot_times": times, "cfl_safety": s.cfl_safety }),
    );
    let scheme = PdeScheme::from_cfl(&op, s.cfl_safety)?;
    let (field, summary) = solve(&op, &scheme, &p.function.sample(&op.grid)?, p.horizon, &times)?;
    rep.note("dt", summary.dt);
    rep.note("steps", summary.steps as f64);
    rep.note("cfl_margin", summary.cfl_margin);
    rep.artifact("pde.csv", field.to_csv());
    Ok(rep.finish(started))
}

fn run(command: &Command, config: &ExperimentConfig) -> Result<Vec<CheckReport>, Failure> {
    let op = || config.operator_config();
    let s = config.limit_settings();
    let p = &config.experiment.parameters;
    let th = &config.thresholds;
    let reports = match command {
        Command::Sensitivity => vec![validation::check_sensitivity(&op()?, p.function, &p.t_list, &s.window, th)?],
        Command::Generator => vec![validation::check_generator(&op()?, p.function, &p.t_list, &s, th)?],
        Command::Semigroup => vec![validation::check_semigroup(&op()?, p.function, &p.pairs, &s, th)?],
        Command::Limit => vec![limit_report(config)?],
        Command::Pde => vec![pde_report(config)?],
        Command::Crosscheck => vec![validation::cross_check_pde(
            "crosscheck",
            &op()?,
            p.function,
            p.horizon,
            &s,
            th.game,
            None,
            th,
        )?],
        Command::Certify => vec![validation::refinement_certificate(
            "certify", &op()?, p.function, p.horizon, &s, th.game, th,
        )?],
        Command::Properties => {
            let op = op()?;
            let times = [0.05, 0.1, 0.5];
            vec![
                validation::check_operator_properties(&op, p.trials, p.seed, &times, th)?,
                validation::check_lipschitz(&op, p.trials, p.seed, &times, th)?,
                validation::check_refinement_monotonicity(&op, p.function, p.horizon, s.max_level.min(6), &s.window, th)?,
            ]
        }
        Command::Dual => vec![validation::check_dual_oracle(p.oracle_trials, p.seed, config.numerics.dual_tol, th)?],
        Command::Acceptance { criteria } => {
            let list: Vec<usize> = if criteria.is_empty() { (1..=acceptance::COUNT).collect() } else { criteria.clone() };
            list.iter()
                .map(|&n| acceptance::criterion(n, config))
                .collect::<Result<_, _>>()?
        }
        Command::All => {
            let mut all = Vec::new();
            for c in [
                Command::Dual,
                Command::Properties,
                Command::Sensitivity,
                Command::Generator,
                Command::Semigroup,
                Command::Crosscheck,
                Command::Certify,
            ] {
                all.extend(run(&c, config)?);
            }
            all
        }
    };
    Ok(reports)
}

fn write_outputs(
    dir: &Path,
    command: &Command,
    config: &ExperimentConfig,
    threads: usize,
    reports: &[CheckReport],
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    let formats = &config.output.formats;
    if formats.contains(&OutputFormat::Csv) {
        for r in reports {
            for a in &r.artifacts {
                fs::write(dir.join(&a.file), &a.contents).with_context(|| format!("writing {}", a.file))?;
                files.push(a.file.clone());
            }
        }
    }
    if formats.contains(&OutputFormat::Json) {
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(reports)? + "\n")?;
        files.push("report.json".into());
    }
    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "threads": threads,
        "passed": reports.iter().all(|r| r.passed),
        "files": files,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.common.quiet;
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            if !quiet {
                eprintln!("internal error: {e:#}");
            }
            ExitCode::from(3)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let config = load_config(&cli.common)?;
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let threads = rayon::current_num_threads();
    let reports = run(&cli.command, &config)?;
    write_outputs(Path::new(&config.output.directory), &cli.command, &config, threads, &reports)?;
    let passed = reports.iter().all(|r| r.passed);
    if !cli.common.quiet || !passed {
        for r in &reports {
            let worst = r
                .worst()
                .map(|(l, v, t)| format!("  {l} = {v:.3e} (limit {t:.3e})"))
                .unwrap_or_default();
            println!("{:<32} {}{worst}", r.name, if r.passed { "PASS" } else { "FAIL" });
        }
    }
    Ok(passed)
}
