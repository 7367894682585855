//! Result emission: trajectory tables, run summaries and plot scripts.
//!
//! All output is deterministic byte for byte: fixed 9-significant-digit
//! number formatting, LF line endings, stable ordering.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use contagion_core::integrator::Trajectory;

/// Formats with 9 significant digits in plain decimal, falling back to
/// scientific notation outside [1e-4, 1e9).
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    let a = v.abs();
    if !(1e-4..1e9).contains(&a) {
        return format!("{v:.8e}");
    }
    let digits_before = a.log10().floor() as i32 + 1;
    let decimals = (9 - digits_before).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Renders the `t,S,I,R,u` table. Rows cover every `stride`-th mesh node plus
/// the final node; the control column is left empty when the trajectory was
/// uncontrolled. Compartments are clamped to zero at this reporting boundary
/// (integration overshoot never re-enters the solver).
pub fn render_trajectory(traj: &Trajectory<3>, stride: usize) -> String {
    let stride = stride.max(1);
    let mut out = String::from("t,S,I,R,u\n");
    let last = traj.states.len() - 1;
    let mut i = 0;
    loop {
        let t = traj.grid.time(i);
        let x = traj.states[i];
        let u = traj.controls.as_ref().map(|c| c[i]);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_sig9(t),
            fmt_sig9(x[0].max(0.0)),
            fmt_sig9(x[1].max(0.0)),
            fmt_sig9(x[2].max(0.0)),
            u.map(fmt_sig9).unwrap_or_default()
        );
        if i == last {
            break;
        }
        i = (i + stride).min(last);
    }
    out
}

/// Writes the trajectory table to `path`.
pub fn emit_trajectory(traj: &Trajectory<3>, path: &Path, stride: usize) -> io::Result<()> {
    std::fs::write(path, render_trajectory(traj, stride))
}

/// Outcome of one solver run, reduced to what the summary reports.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSummary {
    pub solver: String,
    pub cost: f64,
    pub terminal_infected: f64,
    pub integral_cost: f64,
    pub control_integral: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One scenario's before/after comparison: the no-intervention column next to
/// whichever solvers ran. `solvers` may be empty for simulation-only runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub horizon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub j_no_control: f64,
    pub terminal_infected_no_control: f64,
    pub contagion_free_day: Option<f64>,
    pub solvers: Vec<SolverSummary>,
}

/// Renders the human table and the machine key/value report for the same
/// rows. The two forms are emitted side by side by the CLI.
pub fn render_summary(rows: &[SummaryRow]) -> (String, String) {
    let mut human = String::new();
    let mut kv = String::new();

    let _ = writeln!(
        human,
        "{:<12} {:>8} {:>12} {:>12} {:>10}",
        "scenario", "horizon", "J(u=0)", "I(T)(u=0)", "cf day"
    );
    for row in rows {
        let cf = row
            .contagion_free_day
            .map(fmt_sig9)
            .unwrap_or_else(|| "not reached".to_string());
        let _ = writeln!(
            human,
            "{:<12} {:>8} {:>12} {:>12} {:>10}",
            row.scenario,
            fmt_sig9(row.horizon),
            fmt_sig9(row.j_no_control),
            fmt_sig9(row.terminal_infected_no_control),
            cf
        );
        for s in &row.solvers {
            let _ = writeln!(
                human,
                "  {:<10} J = {}  I(T) = {}  int b*u^2 = {}  int u = {}  iters = {}  converged = {}",
                s.solver,
                fmt_sig9(s.cost),
                fmt_sig9(s.terminal_infected),
                fmt_sig9(s.integral_cost),
                fmt_sig9(s.control_integral),
                s.iterations,
                s.converged
            );
        }

        let key = sanitize_key(&row.scenario);
        let _ = writeln!(kv, "{key}.model.beta = {}", fmt_sig9(row.beta));
        let _ = writeln!(kv, "{key}.model.gamma = {}", fmt_sig9(row.gamma));
        let _ = writeln!(kv, "{key}.horizon = {}", fmt_sig9(row.horizon));
        let _ = writeln!(kv, "{key}.no_control.j = {}", fmt_sig9(row.j_no_control));
        let _ = writeln!(
            kv,
            "{key}.no_control.terminal_infected = {}",
            fmt_sig9(row.terminal_infected_no_control)
        );
        let _ = writeln!(
            kv,
            "{key}.no_control.contagion_free_day = {}",
            row.contagion_free_day.map(fmt_sig9).unwrap_or_else(|| "not_reached".to_string())
        );
        for s in &row.solvers {
            let sk = sanitize_key(&s.solver);
            let _ = writeln!(kv, "{key}.{sk}.j = {}", fmt_sig9(s.cost));
            let _ = writeln!(kv, "{key}.{sk}.terminal_infected = {}", fmt_sig9(s.terminal_infected));
            let _ = writeln!(kv, "{key}.{sk}.integral_cost = {}", fmt_sig9(s.integral_cost));
            let _ = writeln!(kv, "{key}.{sk}.control_integral = {}", fmt_sig9(s.control_integral));
            let _ = writeln!(kv, "{key}.{sk}.iterations = {}", s.iterations);
            let _ = writeln!(kv, "{key}.{sk}.converged = {}", s.converged);
        }
    }
    (human, kv)
}

fn sanitize_key(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// One curve source for a plot script.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotEntry {
    pub csv: PathBuf,
    pub label: String,
    pub has_control: bool,
}

/// Emits a self-contained gnuplot script next to the data it references.
///
/// - one entry: S/I/R curves (plus the control on a secondary axis when
///   present);
/// - several entries, all with controls: one control-comparison plot;
/// - several mixed entries: sequential per-trajectory plots.
///
/// Every referenced CSV must already exist.
pub fn emit_plot_script(entries: &[PlotEntry], path: &Path) -> io::Result<()> {
    if entries.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "no trajectories to plot"));
    }
    for e in entries {
        if !e.csv.exists() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("missing input file {}", e.csv.display()),
            ));
        }
    }
    std::fs::write(path, render_plot_script(entries, path.parent()))
}

/// Data files sitting next to the script are referenced by bare name, so the
/// output directory can be moved around freely.
fn plot_path(entry: &PlotEntry, script_dir: Option<&Path>) -> String {
    match (entry.csv.parent(), entry.csv.file_name()) {
        (Some(parent), Some(name)) if Some(parent) == script_dir => {
            name.to_string_lossy().into_owned()
        }
        _ => entry.csv.display().to_string(),
    }
}

fn render_plot_script(entries: &[PlotEntry], script_dir: Option<&Path>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot script; run as: gnuplot <this file>");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set terminal pngcairo size 960,640");
    let _ = writeln!(s, "set xlabel 'time (days)'");
    let _ = writeln!(s, "set grid");

    let comparison = entries.len() > 1 && entries.iter().all(|e| e.has_control);
    if comparison {
        let _ = writeln!(s, "set output 'control_comparison.png'");
        let _ = writeln!(s, "set ylabel 'control u'");
        let _ = writeln!(s, "set yrange [0:1]");
        let mut first = true;
        for e in entries {
            let cont = if first { "plot" } else { "    " };
            let sep = if first { "" } else { ", \\" };
            if !first {
                let _ = writeln!(s, "{sep}");
            }
            let _ = write!(
                s,
                "{cont} '{}' using 1:5 with lines title '{}'",
                plot_path(e, script_dir),
                e.label
            );
            first = false;
        }
        let _ = writeln!(s);
        return s;
    }

    for e in entries {
        let stem = e
            .csv
            .file_stem()
            .map(|v| v.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trajectory".into());
        let _ = writeln!(s, "set output '{stem}.png'");
        let _ = writeln!(s, "set ylabel 'banks'");
        if e.has_control {
            let _ = writeln!(s, "set y2label 'control u'");
            let _ = writeln!(s, "set y2range [0:1]");
            let _ = writeln!(s, "set y2tics");
        }
        let file = plot_path(e, script_dir);
        let _ = write!(
            s,
            "plot '{file}' using 1:2 with lines title 'S', \\\n     '' using 1:3 with lines title 'I', \\\n     '' using 1:4 with lines title 'R'"
        );
        if e.has_control {
            let _ = write!(s, ", \\\n     '' using 1:5 axes x1y2 with lines title 'u'");
        }
        let _ = writeln!(s);
    }
    s
}
