//! The central-bank intervention problem.
//!
//! Minimize J[u] = I(T) + integral of b * u(t)^2 over [0, T], subject to the
//! controlled contagion dynamics and 0 <= u(t) <= 1. Two independent solvers
//! attack the same problem:
//!
//! - [`solve_fbsm`], indirect: alternating forward state sweeps and backward
//!   costate sweeps with a relaxed update toward the pointwise Hamiltonian
//!   minimizer.
//! - [`solve_direct`], direct: the cost-as-state (Mayer) form is transcribed
//!   on the control mesh and the resulting box-constrained program is solved
//!   by projected gradient descent with adjoint gradients.
//!
//! Agreement between the two is part of the crate's test gate.

mod direct;
mod fbsm;

pub use direct::{objective_and_gradient, solve_direct};
pub use fbsm::solve_fbsm;

use crate::error::{Error, Result};
use crate::integrator::{integrate, TimeGrid, Trajectory, DEFAULT_STEP};
use crate::model::{controlled_rhs, ControlGrid, InitialConditions, Parameters};

/// Forward-backward sweep settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbsmOptions {
    /// Convex-relaxation factor for the control update.
    pub relaxation: f64,
    /// Stop when the relative L1 change of the control drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FbsmOptions {
    fn default() -> Self {
        Self { relaxation: 0.5, tol: 1e-6, max_iter: 500 }
    }
}

/// Projected-gradient settings for the direct solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectOptions {
    /// Stop when the infinity norm of the projected gradient drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 5000, armijo_c: 1e-4 }
    }
}

/// Full problem statement for one intervention solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcpSpec {
    pub params: Parameters,
    pub ic: InitialConditions,
    /// Horizon T in days.
    pub horizon: f64,
    /// Cost weight b on squared intervention effort.
    pub weight: f64,
    pub control_lo: f64,
    pub control_hi: f64,
    /// Number of piecewise-constant control cells over [0, T].
    pub control_cells: usize,
    /// Integrator substeps per control cell.
    pub steps_per_cell: usize,
    pub fbsm: FbsmOptions,
    pub direct: DirectOptions,
}

/// Default cost weight on squared intervention effort.
pub const DEFAULT_WEIGHT: f64 = 1.5;
/// Default number of control cells over the horizon.
pub const DEFAULT_CONTROL_CELLS: usize = 300;

impl OcpSpec {
    /// Spec with default weight (1.5), bounds [0, 1], 300 control cells and
    /// substeps sized so the integrator step is ~0.01 day.
    pub fn new(params: Parameters, ic: InitialConditions, horizon: f64) -> Result<Self> {
        let control_cells = DEFAULT_CONTROL_CELLS;
        let spec = Self {
            params,
            ic,
            horizon,
            weight: DEFAULT_WEIGHT,
            control_lo: 0.0,
            control_hi: 1.0,
            control_cells,
            steps_per_cell: default_steps_per_cell(horizon, control_cells),
            fbsm: FbsmOptions::default(),
            direct: DirectOptions::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same spec with a different number of control cells (substeps resized).
    pub fn with_control_cells(mut self, cells: usize) -> Self {
        self.control_cells = cells;
        self.steps_per_cell = default_steps_per_cell(self.horizon, cells.max(1));
        self
    }

    /// Same spec with a different cost weight.
    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.weight.is_finite()) {
            return Err(Error::NonFinite { what: "ocp spec" });
        }
        if self.horizon <= 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("horizon must be > 0, got {}", self.horizon),
            });
        }
        if self.weight <= 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("weight must be > 0, got {}", self.weight),
            });
        }
        if self.control_cells == 0 {
            return Err(Error::InvalidSpec {
                reason: "control grid needs at least one cell".to_string(),
            });
        }
        if self.steps_per_cell == 0 {
            return Err(Error::InvalidSpec {
                reason: "need at least one integrator substep per control cell".to_string(),
            });
        }
        if !(0.0 <= self.control_lo && self.control_lo < self.control_hi && self.control_hi <= 1.0)
        {
            return Err(Error::InvalidSpec {
                reason: format!(
                    "control bounds must satisfy 0 <= lo < hi <= 1, got [{}, {}]",
                    self.control_lo, self.control_hi
                ),
            });
        }
        self.ic.consistent_with(self.params.population)?;
        Ok(())
    }

    /// Integration mesh: control cells subdivided into equal substeps, so
    /// every control-cell edge is a mesh node.
    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(0.0, self.horizon, self.control_cells * self.steps_per_cell)
            .expect("validated spec produces a valid grid")
    }

    pub fn cell_width(&self) -> f64 {
        self.horizon / self.control_cells as f64
    }

    /// Control grid at a constant level over this spec's horizon.
    pub fn constant_control(&self, level: f64) -> Result<ControlGrid> {
        ControlGrid::constant(0.0, self.horizon, self.control_cells, level)
    }

    pub(crate) fn clamp_control(&self, u: f64) -> f64 {
        u.clamp(self.control_lo, self.control_hi)
    }
}

fn default_steps_per_cell(horizon: f64, cells: usize) -> usize {
    let cell_width = horizon / cells as f64;
    (cell_width / DEFAULT_STEP).round().max(1.0) as usize
}

/// Costate values of the indirect solver (multipliers on S, I, R).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointState {
    pub lambda_s: f64,
    pub lambda_i: f64,
    pub lambda_r: f64,
}

/// Everything a solve produces: the control, the state trajectory it induces,
/// cost decomposition and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub control: ControlGrid,
    /// Controlled SIR trajectory under the final control.
    pub trajectory: Trajectory<3>,
    /// Costate trajectory, one entry per mesh node (indirect solver only).
    pub adjoints: Option<Vec<AdjointState>>,
    /// Total cost J = I(T) + integral of b u^2.
    pub cost: f64,
    pub terminal_infected: f64,
    /// The integral term of the cost.
    pub integral_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration convergence measure (solver-specific).
    pub residual_history: Vec<f64>,
}

impl SolveReport {
    /// Integral of the control itself (intervention volume in bank-days).
    pub fn control_integral(&self) -> f64 {
        self.control.integral()
    }
}

/// Evaluates J[u] by forward integration of the controlled dynamics with the
/// running cost accumulated as a fourth state (never by post-hoc quadrature).
/// Returns (J, I(T), integral term).
pub fn evaluate_cost(spec: &OcpSpec, u: &ControlGrid) -> Result<(f64, f64, f64)> {
    let traj = forward_bolza(spec, u)?;
    let x = traj.last();
    Ok((x[1] + x[3], x[1], x[3]))
}

/// Forward integration of (S, I, R, Y) with dY/dt = b u^2.
pub(crate) fn forward_bolza(spec: &OcpSpec, u: &ControlGrid) -> Result<Trajectory<4>> {
    spec.validate()?;
    for &v in u.values() {
        if !(spec.control_lo..=spec.control_hi).contains(&v) {
            return Err(Error::ControlOutOfBounds {
                value: v,
                lo: spec.control_lo,
                hi: spec.control_hi,
            });
        }
    }
    let p = spec.params;
    let w = spec.weight;
    let field = move |_t: f64, x: &[f64; 4], uv: f64| {
        let d = controlled_rhs(&p, &[x[0], x[1], x[2]], uv);
        [d[0], d[1], d[2], w * uv * uv]
    };
    let x0 = [spec.ic.s0, spec.ic.i0, spec.ic.r0, 0.0];
    integrate(field, x0, &spec.time_grid(), Some(u))
}

/// Controlled SIR trajectory under `u`, for reporting.
pub(crate) fn forward_sir(spec: &OcpSpec, u: &ControlGrid) -> Result<Trajectory<3>> {
    let p = spec.params;
    let field = move |_t: f64, x: &[f64; 3], uv: f64| controlled_rhs(&p, x, uv);
    integrate(field, [spec.ic.s0, spec.ic.i0, spec.ic.r0], &spec.time_grid(), Some(u))
}

/// Pointwise minimizer of the control Hamiltonian
///
/// ```text
/// H = b u^2 + lambda_S (-beta S I) + lambda_I (beta S I - gamma I - u I)
///           + lambda_R (gamma I + u I)
/// ```
///
/// clamped to [0, 1]: stationarity in u gives u* = I (lambda_I - lambda_R) / (2 b).
pub fn pmp_control_candidate(infected: f64, lambda_i: f64, lambda_r: f64, weight: f64) -> f64 {
    debug_assert!(weight > 0.0);
    (infected * (lambda_i - lambda_r) / (2.0 * weight)).clamp(0.0, 1.0)
}

/// Which solver a sweep (or a caller with no preference) should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Fbsm,
    Direct,
}

/// One entry of a weight sweep.
#[derive(Debug, Clone)]
pub struct WeightEntry {
    pub weight: f64,
    /// Integral of the optimal control over the horizon.
    pub control_integral: f64,
    pub report: SolveReport,
}

/// Solves the problem once per weight with otherwise identical settings,
/// using the direct solver. Per-weight non-convergence is recorded in the
/// entry's report, not raised.
pub fn sweep_weight(spec: &OcpSpec, weights: &[f64]) -> Result<Vec<WeightEntry>> {
    sweep_weight_with(spec, weights, SolverChoice::Direct)
}

/// Weight sweep with an explicit solver choice.
pub fn sweep_weight_with(
    spec: &OcpSpec,
    weights: &[f64],
    solver: SolverChoice,
) -> Result<Vec<WeightEntry>> {
    if weights.is_empty() {
        return Err(Error::InvalidSpec { reason: "weight sweep needs at least one weight".into() });
    }
    for &w in weights {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::InvalidSpec { reason: format!("sweep weight must be > 0, got {w}") });
        }
    }
    weights
        .iter()
        .map(|&w| {
            let per_weight = spec.with_weight(w);
            let report = match solver {
                SolverChoice::Fbsm => solve_fbsm(&per_weight)?,
                SolverChoice::Direct => solve_direct(&per_weight)?,
            };
            Ok(WeightEntry { weight: w, control_integral: report.control_integral(), report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sir_rhs, InitialConditions, Parameters};

    pub(crate) fn test_spec() -> OcpSpec {
        let params = Parameters::new(0.004, 0.05, 169.0).unwrap();
        let ic = InitialConditions::new(168.0, 1.0, 0.0).unwrap();
        OcpSpec::new(params, ic, 30.0).unwrap()
    }

    #[test]
    fn spec_validation() {
        let spec = test_spec();
        assert!(spec.validate().is_ok());
        assert!(OcpSpec { horizon: -1.0, ..spec }.validate().is_err());
        assert!(OcpSpec { weight: 0.0, ..spec }.validate().is_err());
        assert!(OcpSpec { control_cells: 0, ..spec }.validate().is_err());
        assert!(OcpSpec { control_lo: 0.5, control_hi: 0.4, ..spec }.validate().is_err());
        // Initial conditions must account for the whole population.
        let bad_ic = InitialConditions::new(100.0, 1.0, 0.0).unwrap();
        assert!(OcpSpec { ic: bad_ic, ..spec }.validate().is_err());
    }

    #[test]
    fn grid_aligns_cells_with_substeps() {
        let spec = test_spec();
        assert_eq!(spec.control_cells, 300);
        assert_eq!(spec.steps_per_cell, 10);
        let grid = spec.time_grid();
        assert_eq!(grid.steps(), 3000);
        assert!((grid.h() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_control_cost_equals_uncontrolled_terminal_infected() {
        let spec = test_spec();
        let u = spec.constant_control(0.0).unwrap();
        let (j, terminal, integral) = evaluate_cost(&spec, &u).unwrap();
        assert_eq!(integral, 0.0);
        assert_eq!(j, terminal);

        // Against a plain uncontrolled integration of the same scenario.
        let p = spec.params;
        let traj = integrate(
            move |_t, x: &[f64; 3], _u| sir_rhs(&p, x),
            [168.0, 1.0, 0.0],
            &spec.time_grid(),
            None,
        )
        .unwrap();
        assert!((terminal - traj.last()[1]).abs() < 1e-12);
    }

    #[test]
    fn constant_control_integral_term_is_closed_form() {
        let spec = test_spec();
        let c = 0.37;
        let u = spec.constant_control(c).unwrap();
        let (_, _, integral) = evaluate_cost(&spec, &u).unwrap();
        let exact = spec.weight * c * c * spec.horizon;
        assert!(
            (integral - exact).abs() < 1e-9 * exact,
            "integral {integral} vs closed form {exact}"
        );
    }

    #[test]
    fn bolza_cost_matches_mayer_objective() {
        let spec = test_spec();
        // A control with some variation across the horizon.
        let values: Vec<f64> =
            (0..spec.control_cells).map(|k| 0.5 + 0.4 * ((k as f64) * 0.1).sin()).collect();
        let u = ControlGrid::new(0.0, spec.horizon, values).unwrap();
        let (j_bolza, _, _) = evaluate_cost(&spec, &u).unwrap();

        let p = spec.params;
        let w = spec.weight;
        let field =
            move |_t: f64, x: &[f64; 3], uv: f64| crate::model::mayer_rhs(&p, x, uv, w);
        let traj =
            integrate(field, [spec.ic.s0, spec.ic.r0, 0.0], &spec.time_grid(), Some(&u)).unwrap();
        let x = traj.last();
        let j_mayer = spec.params.population - x[0] - x[1] + x[2];
        assert!(
            (j_bolza - j_mayer).abs() < 1e-8,
            "Bolza {j_bolza} vs Mayer {j_mayer}"
        );
    }

    #[test]
    fn evaluate_cost_rejects_control_outside_spec_bounds() {
        let spec = OcpSpec { control_hi: 0.5, ..test_spec() };
        let u = spec.constant_control(0.9).unwrap();
        assert!(matches!(
            evaluate_cost(&spec, &u),
            Err(Error::ControlOutOfBounds { .. })
        ));
    }

    #[test]
    fn candidate_vanishes_without_infections() {
        assert_eq!(pmp_control_candidate(0.0, 0.7, -0.3, 1.5), 0.0);
    }

    #[test]
    fn candidate_vanishes_at_equal_costates() {
        assert_eq!(pmp_control_candidate(25.0, 0.4, 0.4, 1.5), 0.0);
    }

    #[test]
    fn candidate_clamps_to_full_support() {
        // Raw stationary point 10/3 saturates at 1.
        assert_eq!(pmp_control_candidate(10.0, 1.0, 0.0, 1.5), 1.0);
    }

    #[test]
    fn sweep_rejects_bad_weights() {
        let spec = test_spec();
        assert!(sweep_weight(&spec, &[]).is_err());
        assert!(sweep_weight(&spec, &[1.5, -0.5]).is_err());
    }

    #[test]
    fn single_weight_sweep_is_a_direct_solve() {
        // Smaller problem keeps this quick; the comparison must be exact.
        let spec = test_spec().with_control_cells(30);
        let entries = sweep_weight(&spec, &[1.5]).unwrap();
        let direct = solve_direct(&spec.with_weight(1.5)).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].report.cost.to_bits(), direct.cost.to_bits());
        assert_eq!(entries[0].report.control.values(), direct.control.values());
    }

    #[test]
    fn repeated_weights_give_identical_reports() {
        let spec = test_spec().with_control_cells(30);
        let entries = sweep_weight(&spec, &[1.5, 1.5]).unwrap();
        assert_eq!(entries[0].report.cost.to_bits(), entries[1].report.cost.to_bits());
        assert_eq!(
            entries[0].report.control.values(),
            entries[1].report.control.values()
        );
        assert_eq!(entries[0].control_integral, entries[1].control_integral);
    }
}
