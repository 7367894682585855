//! Fixed-step classic Runge-Kutta integration over a uniform mesh.
//!
//! All three model formulations (uncontrolled, controlled, Mayer) integrate
//! through the same kernel; the state dimension is a const generic so the
//! cost-augmented four-state system used by the solvers shares this path.
//! Runs are deterministic: identical inputs produce bit-identical output.

use crate::error::{Error, Result};
use crate::model::ControlGrid;

/// Uniform time mesh over [t_start, t_end] with `steps` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(Error::NonFinite { what: "time grid span" });
        }
        if t_end <= t_start {
            return Err(Error::InvalidGrid {
                reason: format!("time grid needs t_end > t_start, got [{t_start}, {t_end}]"),
            });
        }
        if steps == 0 {
            return Err(Error::InvalidGrid {
                reason: "time grid needs at least one step".to_string(),
            });
        }
        Ok(Self { t_start, t_end, steps })
    }

    /// Grid over [0, horizon] at the default step length of ~0.01 day.
    pub fn with_default_step(horizon: f64) -> Result<Self> {
        let steps = (horizon / DEFAULT_STEP).round().max(1.0) as usize;
        Self::new(0.0, horizon, steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps as f64
    }

    /// Mesh time of node `i`; node `steps` lands exactly on `t_end`.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.t_end
        } else {
            self.t_start + (self.t_end - self.t_start) * (i as f64 / self.steps as f64)
        }
    }

    /// Number of mesh nodes (`steps + 1`).
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }
}

/// Default integrator step length in days.
pub const DEFAULT_STEP: f64 = 0.01;

/// Dense solution on a [`TimeGrid`]: one state per mesh node, plus the
/// control sample at each node when the run was controlled.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const D: usize> {
    pub grid: TimeGrid,
    pub states: Vec<[f64; D]>,
    pub controls: Option<Vec<f64>>,
}

impl<const D: usize> Trajectory<D> {
    pub fn last(&self) -> &[f64; D] {
        self.states.last().expect("trajectory is never empty")
    }

    /// Iterator over (time, state) pairs.
    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64; D])> + '_ {
        self.states.iter().enumerate().map(|(i, x)| (self.grid.time(i), x))
    }
}

impl Trajectory<3> {
    /// Infected count at node `i` (component 1 of an SIR trajectory).
    pub fn infected(&self, i: usize) -> f64 {
        self.states[i][1]
    }
}

/// Classic fourth-order Runge-Kutta over the grid. The control, when given,
/// must span the grid and is held constant within each integrator step at the
/// value of the cell enclosing the step's start time (left-aligned sampling,
/// shared with the solvers' transcription).
pub fn integrate<const D: usize>(
    field: impl Fn(f64, &[f64; D], f64) -> [f64; D],
    x0: [f64; D],
    grid: &TimeGrid,
    control: Option<&ControlGrid>,
) -> Result<Trajectory<D>> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "initial state" });
    }
    if let Some(u) = control {
        if !u.spans(grid.t_start(), grid.t_end()) {
            return Err(Error::InvalidGrid {
                reason: format!(
                    "control grid [{}, {}] does not span the time grid [{}, {}]",
                    u.t_start(),
                    u.t_end(),
                    grid.t_start(),
                    grid.t_end()
                ),
            });
        }
    }

    let h = grid.h();
    let mut states = Vec::with_capacity(grid.nodes());
    states.push(x0);
    let mut x = x0;
    for n in 0..grid.steps() {
        let t = grid.time(n);
        let u = control.map_or(0.0, |c| c.value_at(t));
        x = rk4_step(&field, t, &x, h, u);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: n });
        }
        states.push(x);
    }

    let controls = control.map(|c| (0..grid.nodes()).map(|i| c.value_at(grid.time(i))).collect());
    Ok(Trajectory { grid: *grid, states, controls })
}

/// One RK4 step of length `h` from `(t, x)` with the control frozen at `u`.
pub fn rk4_step<const D: usize>(
    field: &impl Fn(f64, &[f64; D], f64) -> [f64; D],
    t: f64,
    x: &[f64; D],
    h: f64,
    u: f64,
) -> [f64; D] {
    let k1 = field(t, x, u);
    let k2 = field(t + 0.5 * h, &axpy(x, 0.5 * h, &k1), u);
    let k3 = field(t + 0.5 * h, &axpy(x, 0.5 * h, &k2), u);
    let k4 = field(t + h, &axpy(x, h, &k3), u);
    let mut out = *x;
    for i in 0..D {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn axpy<const D: usize>(x: &[f64; D], a: f64, y: &[f64; D]) -> [f64; D] {
    let mut out = *x;
    for i in 0..D {
        out[i] += a * y[i];
    }
    out
}

/// First mesh time at which the infected count drops below `threshold` and
/// stays non-increasing for the rest of the mesh; `None` when never reached.
/// The default threshold of one bank marks the contagion-free equilibrium.
pub fn time_to_contagion_free(traj: &Trajectory<3>, threshold: f64) -> Option<f64> {
    debug_assert!(threshold > 0.0, "threshold must be positive");
    let n = traj.states.len();
    // Start of the longest non-increasing suffix of I.
    let mut suffix_start = n - 1;
    while suffix_start > 0 && traj.infected(suffix_start - 1) >= traj.infected(suffix_start) {
        suffix_start -= 1;
    }
    (suffix_start..n)
        .find(|&i| traj.infected(i) < threshold)
        .map(|i| traj.grid.time(i))
}

/// Default contagion-free threshold: fewer than one infected bank.
pub const CONTAGION_FREE_THRESHOLD: f64 = 1.0;
