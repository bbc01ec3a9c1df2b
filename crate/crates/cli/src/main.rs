//! `dncit`: run one conditional independence test, a simulation campaign, or
//! a confounder audit.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use dncit::confounder::{confounder_audit, AuditReport, AuditRole, ConfounderSpec};
use dncit::data::{load_features_and_confounders, load_sample};
use dncit::method::{parse_pair, MethodConfig};
use dncit::Method;
use dncit_sim::{run_config, write_outputs, CampaignConfig};
use serde::Serialize;

const INPUT_ERROR: u8 = 2;
const METHOD_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "dncit", version, about = "Conditional independence tests for embedded features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one test on CSV inputs and print the outcome as JSON.
    Test(TestArgs),
    /// Run a simulation campaign described by a JSON config.
    Simulate(SimulateArgs),
    /// Check whether regressing out each confounder leaves residual association.
    Confcheck(ConfcheckArgs),
}

#[derive(Args)]
struct MethodArgs {
    /// Significance level before any adjustment.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Seed for every random component of the method.
    #[arg(long)]
    seed: Option<u64>,
    /// Method hyperparameter override, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Multiple-testing adjustment, e.g. `bonferroni:6` divides alpha by 6.
    #[arg(long, value_name = "bonferroni:K")]
    adjust: Option<String>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    z: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[command(flatten)]
    common: MethodArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "DNCIT_THREADS")]
    threads: Option<usize>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConfcheckArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    z: PathBuf,
    /// Confounder spec: {"base": [...], "expansions": {...}}.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_parser = parse_method, default_value = "rcot")]
    method: Method,
    /// Which variable takes the feature slot of the test.
    #[arg(long, value_parser = parse_role, default_value = "residual_as_features")]
    role: AuditRole,
    #[command(flatten)]
    common: MethodArgs,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|_| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_role(s: &str) -> Result<AuditRole, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| "expected residual_as_features or confounder_as_features".to_owned())
}

/// Error tagged with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: INPUT_ERROR,
        message: e.to_string(),
    }
}

fn method_failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: METHOD_ERROR,
        message: e.to_string(),
    }
}

fn adjusted_alpha(alpha: f64, adjust: Option<&str>) -> Result<f64, Failure> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(input(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let Some(spec) = adjust else {
        return Ok(alpha);
    };
    match spec.split_once(':') {
        Some(("bonferroni", k)) => match k.parse::<u64>() {
            Ok(k) if k >= 1 => Ok(alpha / k as f64),
            _ => Err(input(format!("--adjust bonferroni:K needs an integer K >= 1, got `{k}`"))),
        },
        _ => Err(input(format!("unsupported adjustment `{spec}`; expected bonferroni:K"))),
    }
}

fn method_config(method: Method, args: &MethodArgs) -> Result<MethodConfig, Failure> {
    let pairs = args
        .params
        .iter()
        .map(|p| parse_pair(p))
        .collect::<dncit::Result<Vec<_>>>()
        .map_err(input)?;
    let cfg = MethodConfig::from_pairs(method, &pairs).map_err(input)?;
    Ok(match args.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(method_failure)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| input(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| input(format!("stdout: {e}"))),
    }
}

fn cmd_test(a: &TestArgs) -> Result<(), Failure> {
    let alpha = adjusted_alpha(a.common.alpha, a.common.adjust.as_deref())?;
    let cfg = method_config(a.method, &a.common)?;
    let sample = load_sample(&a.x, &a.y, a.z.as_deref()).map_err(input)?;
    let outcome = cfg.run(&sample, alpha).map_err(method_failure)?;
    emit(&outcome, a.common.out.as_deref())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let mut config = CampaignConfig::load(&a.config).map_err(input)?;
    if let Some(s) = a.seed {
        config.master_seed = s;
    }
    let threads = match a.threads {
        Some(0) => return Err(input("--threads must be at least 1")),
        Some(t) => t,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(method_failure)?;
    let cells = pool.install(|| run_config(&config)).map_err(method_failure)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| input(format!("{}: {e}", a.out_dir.display())))?;
    let written = write_outputs(&a.out_dir, config.master_seed, &cells).map_err(input)?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ConfcheckOutput {
    p_values: std::collections::BTreeMap<String, f64>,
    seed: u64,
    #[serde(flatten)]
    report: AuditReport,
}

fn cmd_confcheck(a: &ConfcheckArgs) -> Result<(), Failure> {
    let alpha = adjusted_alpha(a.common.alpha, a.common.adjust.as_deref())?;
    let cfg = method_config(a.method, &a.common)?;
    let spec = ConfounderSpec::load(&a.spec).map_err(input)?;
    let (x, z, meta) = load_features_and_confounders(&a.x, &a.z).map_err(input)?;
    let report = confounder_audit(&x, &z, &meta, &spec, &cfg, a.role, alpha).map_err(input)?;
    let failed: Vec<String> = report
        .results
        .iter()
        .filter_map(|(k, e)| e.error.as_ref().map(|msg| format!("{k}: {msg}")))
        .collect();
    let out = ConfcheckOutput {
        p_values: report.p_values(),
        seed: cfg.seed(),
        report,
    };
    emit(&out, a.common.out.as_deref())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(method_failure(failed.join("; ")))
    }
}

/// Parses the command line; bad flags print the error followed by the usage
/// of the subcommand involved.
fn parse_args() -> Result<Cli, ExitCode> {
    Cli::try_parse().map_err(|e| {
        if !e.use_stderr() {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        let mut cmd = Cli::command();
        cmd.build();
        let usage = match std::env::args().nth(1).and_then(|s| cmd.find_subcommand_mut(&s).cloned()) {
            Some(mut sub) => sub.render_usage(),
            None => cmd.render_usage(),
        };
        eprint!("{}", e.render());
        eprintln!("\n{usage}");
        ExitCode::from(INPUT_ERROR)
    })
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(c) => c,
        Err(code) => return code,
    };
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Confcheck(a) => cmd_confcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
