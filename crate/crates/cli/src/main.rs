use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hjprop::clock::ClockSpec;
use hjprop::io::{read_wave_csv, write_json, write_wave_csv};
use hjprop::oracle::{
    evolve_regularized_dirac, madelung_decompose, phase_resolution_mask, residual_report_with, ResidualOptions,
};
use hjprop::runner::{self, CheckStatus, RunConfig, SweepParameter};
use hjprop::Error;

#[derive(Parser)]
#[command(name = "hjprop", version, about = "Propagators from classical action fields")]
#[command(args_conflicts_with_subcommands = true, allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the kernel of a scenario and audit it.
    Run(RunArgs),
    /// Repeat the kernel audit over values of one parameter.
    Sweep(SweepArgs),
    /// Crank-Nicolson evolution of a regularized Dirac only.
    Oracle(OracleArgs),
    /// Residuals of a wave read from CSV (t, x, re_psi, im_psi).
    Audit(AuditArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// free | linear | harmonic | quartic | two-source
    #[arg(long)]
    scenario: Option<String>,
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario override `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long = "grid.n", allow_hyphen_values = true)]
    grid_n: Option<String>,
    #[arg(long = "grid.min", allow_hyphen_values = true)]
    grid_min: Option<String>,
    #[arg(long = "grid.max", allow_hyphen_values = true)]
    grid_max: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<String>,
    #[arg(long = "t-max", allow_hyphen_values = true)]
    t_max: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<String>,
    #[arg(long = "fan.n", allow_hyphen_values = true)]
    fan_n: Option<String>,
    /// Clock speed: `constant:V` or `affine:A,B` for T(t') = A + B t'.
    #[arg(long)]
    clock: Option<String>,
    /// Tolerance override `check=value` (repeatable).
    #[arg(long = "tol", value_name = "CHECK=VALUE")]
    tol: Vec<String>,
    /// Output root; runs land in `<out>/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run directory name (defaults to a UTC timestamp).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    superpose: bool,
    #[arg(long)]
    rescale: bool,
    /// Comma-separated eps values for the regularization sweep.
    #[arg(long = "eps-sweep", value_delimiter = ',')]
    eps_sweep: Vec<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// h | dt | eps | fan_size
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    values: Vec<f64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    /// Evolution time.
    #[arg(long)]
    t: f64,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    /// Energy scale for normalized residuals (scenario default otherwise).
    #[arg(long)]
    energy_scale: Option<f64>,
}

fn parse_pair(raw: &str, what: &str) -> anyhow::Result<(String, String)> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::InvalidParameter {
            name: what.into(),
            reason: format!("`{raw}` is not KEY=VALUE"),
        }
        .into()),
    }
}

fn parse_clock(raw: &str) -> anyhow::Result<ClockSpec> {
    let bad = || Error::InvalidParameter {
        name: "clock".into(),
        reason: format!("`{raw}` is not constant:V or affine:A,B"),
    };
    let (kind, rest) = raw.split_once(':').ok_or_else(bad)?;
    let nums: Vec<f64> = rest
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    match (kind, nums.as_slice()) {
        ("constant", [v]) => Ok(ClockSpec::Constant { value: *v }),
        ("affine", [a, b]) => Ok(ClockSpec::Affine { a: *a, b: *b }),
        _ => Err(bad().into()),
    }
}

fn config_from(common: &Common) -> anyhow::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidParameter {
                name: "config".into(),
                reason: format!("{}: {e}", path.display()),
            })?;
            serde_json::from_str::<RunConfig>(&text).map_err(Error::from)?
        }
        None => RunConfig::new(""),
    };
    if let Some(s) = &common.scenario {
        config.scenario = s.clone();
    }
    if config.scenario.is_empty() {
        return Err(Error::InvalidParameter {
            name: "scenario".into(),
            reason: "give --scenario or a config with `scenario`".into(),
        }
        .into());
    }
    for raw in &common.set {
        let (k, v) = parse_pair(raw, "set")?;
        config.overrides.insert(k, v);
    }
    let flags = [
        ("grid.n", &common.grid_n),
        ("grid.min", &common.grid_min),
        ("grid.max", &common.grid_max),
        ("dt", &common.dt),
        ("t_max", &common.t_max),
        ("eps", &common.eps),
        ("fan.n", &common.fan_n),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.overrides.insert(key.into(), v.clone());
        }
    }
    if let Some(c) = &common.clock {
        config.clock = parse_clock(c)?;
    }
    for raw in &common.tol {
        let (k, v) = parse_pair(raw, "tol")?;
        let v: f64 = v.parse().map_err(|_| Error::InvalidParameter {
            name: format!("tol.{k}"),
            reason: format!("`{v}` is not a number"),
        })?;
        config.tolerances.insert(k, v);
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(name) = &common.name {
        config.run_name = Some(name.clone());
    }
    Ok(config)
}

fn print_checks(checks: &[runner::Check]) {
    for c in checks {
        let status = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
            CheckStatus::Measured => "MEAS",
        };
        match (c.measured, c.tolerance) {
            (Some(m), Some(t)) => println!("{status} {:<26} {m:.3e} (tol {t:.1e})  {}", c.name, c.detail),
            _ => println!("{status} {:<26} {}", c.name, c.detail),
        }
    }
}

fn run_cmd(args: RunArgs) -> anyhow::Result<i32> {
    let mut config = config_from(&args.common)?;
    config.oracle |= args.oracle;
    config.superpose |= args.superpose;
    config.rescale |= args.rescale;
    if !args.eps_sweep.is_empty() {
        config.eps_sweep = args.eps_sweep;
    }
    let outcome = runner::run(&config)?;
    print_checks(&outcome.checks);
    println!("artifacts: {}", outcome.dir.display());
    Ok(outcome.exit_code())
}

fn sweep_cmd(args: SweepArgs) -> anyhow::Result<i32> {
    let mut config = config_from(&args.common)?;
    if args.jobs.is_some() {
        config.jobs = args.jobs;
    }
    let param: SweepParameter = args.param.parse()?;
    let outcome = runner::sweep(&config, param, &args.values)?;
    println!("{:>12} {:>14} {:>14} {:>14}", param.as_str(), "schrodinger", "bohm_max", "l2_vs_oracle");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
    for r in &outcome.rows {
        println!(
            "{:>12} {:>14} {:>14} {:>14}",
            r.value,
            show(r.schrodinger_l2),
            show(r.bohm_max),
            show(r.l2_vs_oracle)
        );
    }
    let o = &outcome.orders;
    println!(
        "{:>12} {:>14} {:>14} {:>14}",
        "order",
        show(o.schrodinger_l2),
        show(o.bohm_max),
        show(o.l2_vs_oracle)
    );
    println!("artifacts: {}", outcome.csv.display());
    Ok(0)
}

fn oracle_cmd(args: OracleArgs) -> anyhow::Result<i32> {
    let config = config_from(&args.common)?;
    let s = config.validate()?;
    if !s.initial.is_position() || !s.sources.is_empty() {
        return Err(Error::Unsupported("oracle needs a single position start".into()).into());
    }
    if !(args.t > 0.0) {
        bail!(Error::InvalidParameter {
            name: "t".into(),
            reason: "must be positive".into()
        });
    }
    let (wave, report) = evolve_regularized_dirac(&s.setup, s.initial.value_1d(), s.initial.epsilon, *s.grid.axis(), args.t)?;
    let dir = runner::create_run_dir(&config.output_dir, config.run_name.as_deref(), &format!("{}-oracle", s.id))?;
    write_wave_csv(std::io::BufWriter::new(File::create(dir.join("oracle.csv"))?), &wave, 1)?;
    write_json(&dir.join("oracle.json"), &serde_json::json!({ "t": args.t, "cn": report }))?;
    println!(
        "steps {} dt {:.3e} norm drift/step {:.3e} boundary {:.3e}",
        report.steps, report.dt, report.max_norm_drift_per_step, report.boundary_max
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("artifacts: {}", dir.display());
    Ok(0)
}

fn audit_cmd(args: AuditArgs) -> anyhow::Result<i32> {
    let config = config_from(&args.common)?;
    let s = config.validate()?;
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let wave = read_wave_csv(BufReader::new(file))?;
    let e = args.energy_scale.unwrap_or(s.energy_scale);
    if !(e > 0.0) {
        bail!(Error::InvalidParameter {
            name: "energy_scale".into(),
            reason: "must be positive".into()
        });
    }
    let pair = madelung_decompose(&wave, s.setup.hbar)?;
    let resolution = phase_resolution_mask(&pair, &s.setup, runner::RESOLUTION_LIMIT)?;
    let opts = ResidualOptions {
        resolution_mask: Some(&resolution),
        ..ResidualOptions::new(e)
    };
    let report = residual_report_with(&wave, &pair, &s.setup, opts)?;
    let out = config.output_dir.join("residuals.json");
    std::fs::create_dir_all(&config.output_dir)?;
    write_json(&out, &report)?;
    println!(
        "schrodinger {:.3e} continuity {:.3e} hjq {:.3e} bohm_max {:.3e} masked {:.3}",
        report.schrodinger_l2, report.continuity_l2, report.hjq_l2, report.bohm_max, report.mask_fraction
    );
    println!("artifacts: {}", out.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::Audit(a) => audit_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            let config = err.downcast_ref::<Error>().is_some_and(Error::is_configuration);
            ExitCode::from(if config { 1 } else { 2 })
        }
    }
}
