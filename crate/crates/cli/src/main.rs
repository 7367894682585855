//! `contagion`: simulate interbank contagion scenarios, plan central-bank
//! interventions, calibrate model parameters and sweep the cost weight.
//!
//! ```text
//! contagion simulate  --config configs/portugal.cfg --out out/
//! contagion optimize  --config configs/portugal.cfg --out out/ --solver both
//! contagion calibrate --config configs/portugal.cfg --out out/
//! contagion sweep-b   --config configs/portugal.cfg --out out/
//! ```
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numerical failure
//! (non-convergence is only fatal with --strict), 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use contagion_cli::config::{
    load_config, OptimizeSettings, ScenarioConfig, SolverKind,
};
use contagion_cli::emit::{
    emit_plot_script, emit_trajectory, fmt_sig9, render_summary, PlotEntry, SolverSummary,
    SummaryRow,
};
use contagion_core::calibration::{calibrate, FitReport};
use contagion_core::integrator::{integrate, time_to_contagion_free, TimeGrid, Trajectory};
use contagion_core::model::{sir_rhs, Parameters};
use contagion_core::ocp::{
    evaluate_cost, solve_direct, solve_fbsm, sweep_weight_with, OcpSpec, SolveReport, SolverChoice,
};

const USAGE: &str = "\
usage: contagion <simulate|optimize|calibrate|sweep-b> --config PATH [options]

options:
  --config PATH     scenario config file (required)
  --out DIR         output directory (default: out)
  --solver KIND     fbsm | direct | both (optimize/sweep-b; overrides config)
  --steps N         integrator step count override
  --stride N        emit every N-th mesh row (default 1)
  --strict          treat non-convergence and failed fits as fatal (exit 2)
";

enum RunError {
    Usage(String),
    Config(String),
    Numeric(String),
    Io(String),
}

impl RunError {
    fn code(&self) -> u8 {
        match self {
            RunError::Usage(_) | RunError::Config(_) => 1,
            RunError::Numeric(_) => 2,
            RunError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            RunError::Usage(m)
            | RunError::Config(m)
            | RunError::Numeric(m)
            | RunError::Io(m) => m,
        }
    }
}

impl From<contagion_core::Error> for RunError {
    fn from(e: contagion_core::Error) -> Self {
        use contagion_core::Error::*;
        match e {
            NonFiniteState { .. } | NonFinite { .. } => RunError::Numeric(e.to_string()),
            _ => RunError::Config(e.to_string()),
        }
    }
}

impl From<contagion_cli::config::ConfigError> for RunError {
    fn from(e: contagion_cli::config::ConfigError) -> Self {
        RunError::Config(format!("config error: {e}"))
    }
}

fn io_err(context: &str, e: std::io::Error) -> RunError {
    RunError::Io(format!("{context}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    Simulate,
    Optimize,
    Calibrate,
    SweepB,
}

struct Cli {
    command: Command,
    config: PathBuf,
    out: PathBuf,
    solver: Option<SolverKind>,
    steps: Option<usize>,
    stride: usize,
    strict: bool,
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                RunError::Usage(_) => eprintln!("{}\n{USAGE}", e.message()),
                _ => eprintln!("error: {}", e.message()),
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(args: &[String]) -> Result<(), RunError> {
    let cli = parse_args(args)?;
    let cfg = load_config(&cli.config)?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| io_err(&format!("cannot create {}", cli.out.display()), e))?;

    match cli.command {
        Command::Simulate => cmd_simulate(&cli, &cfg),
        Command::Optimize => cmd_optimize(&cli, &cfg),
        Command::Calibrate => cmd_calibrate(&cli, &cfg),
        Command::SweepB => cmd_sweep(&cli, &cfg),
    }
}

fn parse_args(args: &[String]) -> Result<Cli, RunError> {
    let mut it = args.iter();
    let command = match it.next().map(String::as_str) {
        Some("simulate") => Command::Simulate,
        Some("optimize") => Command::Optimize,
        Some("calibrate") => Command::Calibrate,
        Some("sweep-b") => Command::SweepB,
        Some("-h") | Some("--help") => {
            return Err(RunError::Usage(String::new()));
        }
        Some(other) => return Err(RunError::Usage(format!("unknown subcommand '{other}'"))),
        None => return Err(RunError::Usage("missing subcommand".into())),
    };

    let mut config = None;
    let mut out = PathBuf::from("out");
    let mut solver = None;
    let mut steps = None;
    let mut stride = 1usize;
    let mut strict = false;

    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next().cloned().ok_or_else(|| RunError::Usage(format!("{name} needs a value")))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config")?)),
            "--out" => out = PathBuf::from(value("--out")?),
            "--solver" => {
                solver = Some(match value("--solver")?.as_str() {
                    "fbsm" => SolverKind::Fbsm,
                    "direct" => SolverKind::Direct,
                    "both" => SolverKind::Both,
                    other => {
                        return Err(RunError::Usage(format!(
                            "--solver expects fbsm|direct|both, got '{other}'"
                        )));
                    }
                });
            }
            "--steps" => {
                let raw = value("--steps")?;
                let n: usize = raw
                    .parse()
                    .map_err(|_| RunError::Usage(format!("--steps expects an integer, got '{raw}'")))?;
                if n == 0 {
                    return Err(RunError::Usage("--steps must be >= 1".into()));
                }
                steps = Some(n);
            }
            "--stride" => {
                let raw = value("--stride")?;
                stride = raw
                    .parse()
                    .map_err(|_| RunError::Usage(format!("--stride expects an integer, got '{raw}'")))?;
                if stride == 0 {
                    return Err(RunError::Usage("--stride must be >= 1".into()));
                }
            }
            "--strict" => strict = true,
            other => return Err(RunError::Usage(format!("unknown flag '{other}'"))),
        }
    }

    let config = config.ok_or_else(|| RunError::Usage("--config is required".into()))?;
    Ok(Cli { command, config, out, solver, steps, stride, strict })
}

/// Explicit parameters, or a calibration run when the config carries targets.
fn resolve_params(
    cli: &Cli,
    cfg: &ScenarioConfig,
) -> Result<(Parameters, Option<FitReport>), RunError> {
    if let Some(p) = cfg.explicit_params {
        return Ok((p, None));
    }
    let cal = cfg.calibrate.as_ref().expect("config validation guarantees one source");
    eprintln!("calibrating {} against {} target(s)...", cfg.name, cal.targets.targets.len());
    let fit = calibrate(&cal.targets, &cal.search)?;
    eprintln!(
        "calibrated {}: beta = {}, gamma = {} ({} evaluations, ok = {})",
        cfg.name,
        fmt_sig9(fit.params.beta),
        fmt_sig9(fit.params.gamma),
        fit.evaluations,
        fit.ok
    );
    if !fit.ok {
        let detail = fit.notes.join("; ");
        if cli.strict {
            return Err(RunError::Numeric(format!(
                "calibration missed its targets: {detail}"
            )));
        }
        eprintln!("warning: calibration missed its targets: {detail}");
    }
    Ok((fit.params, Some(fit)))
}

fn uncontrolled_trajectory(
    params: Parameters,
    cfg: &ScenarioConfig,
    steps_override: Option<usize>,
) -> Result<Trajectory<3>, RunError> {
    let horizon = cfg.simulate.horizon;
    let grid = match steps_override.or(cfg.simulate.steps) {
        Some(n) => TimeGrid::new(0.0, horizon, n)?,
        None => TimeGrid::with_default_step(horizon)?,
    };
    let p = params;
    Ok(integrate(
        move |_t, x: &[f64; 3], _u| sir_rhs(&p, x),
        [cfg.initial.s0, cfg.initial.i0, cfg.initial.r0],
        &grid,
        None,
    )?)
}

fn write_summary(out: &Path, rows: &[SummaryRow]) -> Result<(), RunError> {
    let (human, kv) = render_summary(rows);
    std::fs::write(out.join("summary.txt"), &human)
        .map_err(|e| io_err("cannot write summary.txt", e))?;
    std::fs::write(out.join("summary.kv"), &kv)
        .map_err(|e| io_err("cannot write summary.kv", e))?;
    print!("{human}");
    Ok(())
}

fn cmd_simulate(cli: &Cli, cfg: &ScenarioConfig) -> Result<(), RunError> {
    let (params, _) = resolve_params(cli, cfg)?;
    let traj = uncontrolled_trajectory(params, cfg, cli.steps)?;

    let csv = cli.out.join(format!("{}_uncontrolled.csv", cfg.name));
    emit_trajectory(&traj, &csv, cli.stride)
        .map_err(|e| io_err(&format!("cannot write {}", csv.display()), e))?;

    let terminal_infected = traj.last()[1].max(0.0);
    let row = SummaryRow {
        scenario: cfg.name.clone(),
        horizon: cfg.simulate.horizon,
        beta: params.beta,
        gamma: params.gamma,
        j_no_control: terminal_infected,
        terminal_infected_no_control: terminal_infected,
        contagion_free_day: time_to_contagion_free(&traj, cfg.simulate.threshold),
        solvers: vec![],
    };
    write_summary(&cli.out, &[row])?;

    let gp = cli.out.join(format!("plot_{}.gp", cfg.name));
    emit_plot_script(
        &[PlotEntry { csv, label: cfg.name.clone(), has_control: false }],
        &gp,
    )
    .map_err(|e| io_err("cannot write plot script", e))?;
    Ok(())
}

fn build_spec(
    params: Parameters,
    cfg: &ScenarioConfig,
    opt: &OptimizeSettings,
    steps_override: Option<usize>,
) -> Result<OcpSpec, RunError> {
    let mut spec = OcpSpec::new(params, cfg.initial, opt.horizon)?
        .with_control_cells(opt.control_cells)
        .with_weight(opt.weight);
    spec.fbsm = opt.fbsm;
    spec.direct = opt.direct;
    if let Some(n) = steps_override {
        let per_cell = (n as f64 / opt.control_cells as f64).round().max(1.0) as usize;
        spec.steps_per_cell = per_cell;
    }
    spec.validate()?;
    Ok(spec)
}

fn solver_choices(kind: SolverKind) -> Vec<(SolverChoice, &'static str)> {
    match kind {
        SolverKind::Fbsm => vec![(SolverChoice::Fbsm, "fbsm")],
        SolverKind::Direct => vec![(SolverChoice::Direct, "direct")],
        SolverKind::Both => {
            vec![(SolverChoice::Fbsm, "fbsm"), (SolverChoice::Direct, "direct")]
        }
    }
}

fn summarize(report: &SolveReport, name: &str) -> SolverSummary {
    SolverSummary {
        solver: name.to_string(),
        cost: report.cost,
        terminal_infected: report.terminal_infected,
        integral_cost: report.integral_cost,
        control_integral: report.control_integral(),
        iterations: report.iterations,
        converged: report.converged,
    }
}

fn cmd_optimize(cli: &Cli, cfg: &ScenarioConfig) -> Result<(), RunError> {
    let opt = cfg.optimize.as_ref().ok_or_else(|| {
        RunError::Config("optimize needs an enabled [optimize] section in the config".into())
    })?;
    let (params, _) = resolve_params(cli, cfg)?;
    let spec = build_spec(params, cfg, opt, cli.steps)?;

    // No-intervention baseline over the optimization horizon.
    let zero = spec.constant_control(0.0)?;
    let (j_zero, i_zero, _) = evaluate_cost(&spec, &zero)?;
    let p = params;
    let baseline = integrate(
        move |_t, x: &[f64; 3], _u| sir_rhs(&p, x),
        [cfg.initial.s0, cfg.initial.i0, cfg.initial.r0],
        &spec.time_grid(),
        None,
    )?;
    let base_csv = cli.out.join(format!("{}_uncontrolled.csv", cfg.name));
    emit_trajectory(&baseline, &base_csv, cli.stride)
        .map_err(|e| io_err(&format!("cannot write {}", base_csv.display()), e))?;

    let mut plot_entries =
        vec![PlotEntry { csv: base_csv, label: format!("{} (u=0)", cfg.name), has_control: false }];
    let mut solvers = Vec::new();
    let mut failed: Vec<String> = Vec::new();

    for (choice, name) in solver_choices(cli.solver.unwrap_or(opt.solver)) {
        let report = match choice {
            SolverChoice::Fbsm => solve_fbsm(&spec)?,
            SolverChoice::Direct => solve_direct(&spec)?,
        };
        if !report.converged {
            failed.push(name.to_string());
        }
        let csv = cli.out.join(format!("{}_{}.csv", cfg.name, name));
        emit_trajectory(&report.trajectory, &csv, cli.stride)
            .map_err(|e| io_err(&format!("cannot write {}", csv.display()), e))?;
        plot_entries.push(PlotEntry {
            csv,
            label: format!("{} ({})", cfg.name, name),
            has_control: true,
        });
        solvers.push(summarize(&report, name));
    }

    let row = SummaryRow {
        scenario: cfg.name.clone(),
        horizon: spec.horizon,
        beta: params.beta,
        gamma: params.gamma,
        j_no_control: j_zero,
        terminal_infected_no_control: i_zero,
        contagion_free_day: time_to_contagion_free(&baseline, cfg.simulate.threshold),
        solvers,
    };
    write_summary(&cli.out, &[row])?;

    let gp = cli.out.join(format!("plot_{}.gp", cfg.name));
    emit_plot_script(&plot_entries, &gp).map_err(|e| io_err("cannot write plot script", e))?;

    if !failed.is_empty() {
        let msg = format!("solver(s) did not converge: {}", failed.join(", "));
        if cli.strict {
            return Err(RunError::Numeric(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

fn cmd_calibrate(cli: &Cli, cfg: &ScenarioConfig) -> Result<(), RunError> {
    let cal = cfg.calibrate.as_ref().ok_or_else(|| {
        RunError::Config("calibrate needs a [calibrate] section in the config".into())
    })?;
    let fit = calibrate(&cal.targets, &cal.search)?;

    let mut human = String::new();
    let mut kv = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(human, "scenario: {}", cfg.name);
    let _ = writeln!(human, "beta  = {}", fmt_sig9(fit.params.beta));
    let _ = writeln!(human, "gamma = {}", fmt_sig9(fit.params.gamma));
    let _ = writeln!(human, "residual norm = {}", fmt_sig9(fit.residual_norm));
    let _ = writeln!(human, "objective = {:e}", fit.objective);
    let _ = writeln!(human, "evaluations = {}", fit.evaluations);
    let _ = writeln!(human, "fit ok = {}", fit.ok);
    for (i, r) in fit.residuals.iter().enumerate() {
        let _ = writeln!(human, "residual[{i}] = {}", fmt_sig9(*r));
    }
    for n in &fit.notes {
        let _ = writeln!(human, "note: {n}");
    }
    let key: String = cfg.name.to_ascii_lowercase();
    let _ = writeln!(kv, "{key}.fit.beta = {}", fmt_sig9(fit.params.beta));
    let _ = writeln!(kv, "{key}.fit.gamma = {}", fmt_sig9(fit.params.gamma));
    let _ = writeln!(kv, "{key}.fit.residual_norm = {}", fmt_sig9(fit.residual_norm));
    let _ = writeln!(kv, "{key}.fit.evaluations = {}", fit.evaluations);
    let _ = writeln!(kv, "{key}.fit.ok = {}", fit.ok);

    let txt = cli.out.join(format!("{}_fit.txt", cfg.name));
    std::fs::write(&txt, &human).map_err(|e| io_err(&format!("cannot write {}", txt.display()), e))?;
    let kvp = cli.out.join(format!("{}_fit.kv", cfg.name));
    std::fs::write(&kvp, &kv).map_err(|e| io_err(&format!("cannot write {}", kvp.display()), e))?;

    // The improvement trace makes the deterministic fit inspectable.
    let mut trace = String::from("beta,gamma,objective\n");
    for t in &fit.trace {
        let _ = writeln!(trace, "{},{},{:e}", fmt_sig9(t.beta), fmt_sig9(t.gamma), t.objective);
    }
    let tp = cli.out.join(format!("{}_fit_trace.csv", cfg.name));
    std::fs::write(&tp, &trace).map_err(|e| io_err(&format!("cannot write {}", tp.display()), e))?;

    print!("{human}");
    if !fit.ok && cli.strict {
        return Err(RunError::Numeric(format!(
            "calibration missed its targets: {}",
            fit.notes.join("; ")
        )));
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, cfg: &ScenarioConfig) -> Result<(), RunError> {
    let opt = cfg.optimize.as_ref().ok_or_else(|| {
        RunError::Config("sweep-b needs an enabled [optimize] section in the config".into())
    })?;
    let weights = cfg.sweep_weights.as_ref().ok_or_else(|| {
        RunError::Config("sweep-b needs a [sweep] section with weights".into())
    })?;
    let (params, _) = resolve_params(cli, cfg)?;
    let spec = build_spec(params, cfg, opt, cli.steps)?;

    // One curve per weight; "both" falls back to the direct transcription.
    let choice = match cli.solver.unwrap_or(opt.solver) {
        SolverKind::Fbsm => SolverChoice::Fbsm,
        _ => SolverChoice::Direct,
    };
    let entries = sweep_weight_with(&spec, weights, choice)?;

    let zero = spec.constant_control(0.0)?;
    let (j_zero, i_zero, _) = evaluate_cost(&spec, &zero)?;

    let mut plot_entries = Vec::new();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for entry in &entries {
        let tag = format!("b{}", entry.weight);
        let csv = cli.out.join(format!("{}_{}.csv", cfg.name, tag));
        emit_trajectory(&entry.report.trajectory, &csv, cli.stride)
            .map_err(|e| io_err(&format!("cannot write {}", csv.display()), e))?;
        plot_entries.push(PlotEntry {
            csv,
            label: format!("b = {}", entry.weight),
            has_control: true,
        });
        if !entry.report.converged {
            failed.push(tag.clone());
        }
        rows.push(SummaryRow {
            scenario: format!("{} b={}", cfg.name, entry.weight),
            horizon: spec.horizon,
            beta: params.beta,
            gamma: params.gamma,
            j_no_control: j_zero,
            terminal_infected_no_control: i_zero,
            contagion_free_day: None,
            solvers: vec![summarize(
                &entry.report,
                match choice {
                    SolverChoice::Fbsm => "fbsm",
                    SolverChoice::Direct => "direct",
                },
            )],
        });
    }
    write_summary(&cli.out, &rows)?;

    let gp = cli.out.join(format!("plot_{}_sweep.gp", cfg.name));
    emit_plot_script(&plot_entries, &gp).map_err(|e| io_err("cannot write plot script", e))?;

    if !failed.is_empty() {
        let msg = format!("sweep entries did not converge: {}", failed.join(", "));
        if cli.strict {
            return Err(RunError::Numeric(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}
