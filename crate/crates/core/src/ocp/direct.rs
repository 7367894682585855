//! Direct solver: transcription of the cost-as-state (Mayer) form into a
//! box-constrained program over the control cell values, solved by projected
//! gradient descent with Armijo backtracking.
//!
//! The objective is Phi(u) = N - S(T) - R(T) + Y(T) from a forward
//! integration of (S, R, Y). Its gradient is computed by the adjoint method
//! as the exact reverse sweep of the RK4 scheme, so it matches finite
//! differences of Phi to roundoff.

use crate::error::{Error, Result};
use crate::integrator::{integrate, Trajectory};
use crate::model::{mayer_rhs, ControlGrid, Parameters};

use super::{evaluate_cost, forward_sir, OcpSpec, SolveReport};

pub fn solve_direct(spec: &OcpSpec) -> Result<SolveReport> {
    spec.validate()?;
    let cells = spec.control_cells;
    let opts = spec.direct;

    let mut u = vec![spec.control_lo; cells];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut step: f64 = 1.0;

    let mut traj = forward_mayer(spec, &u)?;
    let mut phi = mayer_objective(spec, &traj);

    while iterations < opts.max_iter {
        let grad = adjoint_gradient(spec, &traj, &u);
        let pg_norm = (0..cells)
            .map(|k| (u[k] - spec.clamp_control(u[k] - grad[k])).abs())
            .fold(0.0, f64::max);
        history.push(pg_norm);
        if pg_norm <= opts.tol {
            converged = true;
            break;
        }

        // Backtracking along the projected arc; the trial step warm-starts
        // from twice the last accepted one.
        step = (step * 2.0).min(1e6);
        let mut accepted = false;
        while step >= 1e-18 {
            let candidate: Vec<f64> =
                (0..cells).map(|k| spec.clamp_control(u[k] - step * grad[k])).collect();
            let cand_traj = forward_mayer(spec, &candidate)?;
            let cand_phi = mayer_objective(spec, &cand_traj);
            let decrease: f64 =
                (0..cells).map(|k| grad[k] * (u[k] - candidate[k])).sum();
            if cand_phi <= phi - opts.armijo_c * decrease {
                u = candidate;
                traj = cand_traj;
                phi = cand_phi;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // Line search stalled at roundoff level; stop honestly.
            break;
        }
    }

    let control = ControlGrid::new(0.0, spec.horizon, u)?;
    let trajectory = forward_sir(spec, &control)?;
    let (cost, terminal_infected, integral_cost) = evaluate_cost(spec, &control)?;

    Ok(SolveReport {
        control,
        trajectory,
        adjoints: None,
        cost,
        terminal_infected,
        integral_cost,
        iterations,
        converged,
        residual_history: history,
    })
}

/// Mayer objective Phi(u) = N - S(T) - R(T) + Y(T) and its adjoint gradient
/// with respect to the control cell values, as the direct solver sees them.
pub fn objective_and_gradient(spec: &OcpSpec, u: &[f64]) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    if u.len() != spec.control_cells {
        return Err(Error::InvalidSpec {
            reason: format!(
                "control vector has {} cells, spec declares {}",
                u.len(),
                spec.control_cells
            ),
        });
    }
    let traj = forward_mayer(spec, u)?;
    let phi = mayer_objective(spec, &traj);
    let grad = adjoint_gradient(spec, &traj, u);
    Ok((phi, grad))
}

/// Forward integration of the Mayer states (S, R, Y) under cell values `u`.
pub(crate) fn forward_mayer(spec: &OcpSpec, u: &[f64]) -> Result<Trajectory<3>> {
    for &v in u {
        if !(spec.control_lo..=spec.control_hi).contains(&v) {
            return Err(Error::ControlOutOfBounds {
                value: v,
                lo: spec.control_lo,
                hi: spec.control_hi,
            });
        }
    }
    let grid = ControlGrid::new(0.0, spec.horizon, u.to_vec())?;
    let p = spec.params;
    let w = spec.weight;
    let field = move |_t: f64, x: &[f64; 3], uv: f64| mayer_rhs(&p, x, uv, w);
    integrate(field, [spec.ic.s0, spec.ic.r0, 0.0], &spec.time_grid(), Some(&grid))
}

/// Phi(u) = N - S(T) - R(T) + Y(T).
pub(crate) fn mayer_objective(spec: &OcpSpec, traj: &Trajectory<3>) -> f64 {
    let x = traj.last();
    spec.params.population - x[0] - x[1] + x[2]
}

/// Exact gradient of the discretized objective: reverse-mode sweep through
/// every RK4 step, accumulating each step's control sensitivity into the
/// enclosing control cell.
pub(crate) fn adjoint_gradient(spec: &OcpSpec, traj: &Trajectory<3>, u: &[f64]) -> Vec<f64> {
    let grid = &traj.grid;
    let h = grid.h();
    let p = spec.params;
    let w = spec.weight;
    let control = ControlGrid::new(0.0, spec.horizon, u.to_vec())
        .expect("control validated before the forward pass");

    let mut grad = vec![0.0; u.len()];
    // Seed: d Phi / d (S, R, Y)(T) = (-1, -1, 1).
    let mut xbar = [-1.0, -1.0, 1.0];
    for n in (0..grid.steps()).rev() {
        let t = grid.time(n);
        let uv = control.value_at(t);
        let (next_xbar, ubar) = reverse_rk4_step(&p, w, &traj.states[n], h, uv, &xbar);
        xbar = next_xbar;
        grad[control.cell_index(t)] += ubar;
    }
    grad
}

/// Reverse-mode RK4 step for the Mayer field: recomputes the forward stages
/// from the stored step state, then backpropagates the node sensitivity
/// `xbar` and returns the step's control sensitivity.
fn reverse_rk4_step(
    p: &Parameters,
    weight: f64,
    x: &[f64; 3],
    h: f64,
    u: f64,
    xbar_next: &[f64; 3],
) -> ([f64; 3], f64) {
    // Forward stages (k4 itself is not needed, only its input state).
    let k1 = mayer_rhs(p, x, u, weight);
    let x2 = add_scaled(x, 0.5 * h, &k1);
    let k2 = mayer_rhs(p, &x2, u, weight);
    let x3 = add_scaled(x, 0.5 * h, &k2);
    let k3 = mayer_rhs(p, &x3, u, weight);
    let x4 = add_scaled(x, h, &k3);

    let mut kbar1 = scale(xbar_next, h / 6.0);
    let mut kbar2 = scale(xbar_next, h / 3.0);
    let mut kbar3 = scale(xbar_next, h / 3.0);
    let kbar4 = scale(xbar_next, h / 6.0);

    let mut xbar = *xbar_next;
    let mut ubar = 0.0;

    // Stage 4: k4 = f(x4), x4 = x + h k3.
    let xb = jac_t_vec(p, &x4, u, &kbar4);
    ubar += du_dot(p, weight, &x4, u, &kbar4);
    acc(&mut xbar, &xb);
    acc_scaled(&mut kbar3, h, &xb);

    // Stage 3: k3 = f(x3), x3 = x + h/2 k2.
    let xb = jac_t_vec(p, &x3, u, &kbar3);
    ubar += du_dot(p, weight, &x3, u, &kbar3);
    acc(&mut xbar, &xb);
    acc_scaled(&mut kbar2, 0.5 * h, &xb);

    // Stage 2: k2 = f(x2), x2 = x + h/2 k1.
    let xb = jac_t_vec(p, &x2, u, &kbar2);
    ubar += du_dot(p, weight, &x2, u, &kbar2);
    acc(&mut xbar, &xb);
    acc_scaled(&mut kbar1, 0.5 * h, &xb);

    // Stage 1: k1 = f(x).
    let xb = jac_t_vec(p, x, u, &kbar1);
    ubar += du_dot(p, weight, x, u, &kbar1);
    acc(&mut xbar, &xb);

    (xbar, ubar)
}

/// Transposed Jacobian-vector product of the Mayer field
/// f = (beta S (S + R - N), (gamma + u)(N - S - R), b u^2):
///
/// ```text
/// df1/dS = beta (2S + R - N)   df1/dR = beta S
/// df2/dS = -(gamma + u)        df2/dR = -(gamma + u)
/// ```
fn jac_t_vec(p: &Parameters, x: &[f64; 3], u: f64, v: &[f64; 3]) -> [f64; 3] {
    let gu = p.gamma + u;
    [
        p.beta * (2.0 * x[0] + x[1] - p.population) * v[0] - gu * v[1],
        p.beta * x[0] * v[0] - gu * v[1],
        0.0,
    ]
}

/// dot(df/du, v) with df/du = (0, N - S - R, 2 b u).
fn du_dot(p: &Parameters, weight: f64, x: &[f64; 3], u: f64, v: &[f64; 3]) -> f64 {
    (p.population - x[0] - x[1]) * v[1] + 2.0 * weight * u * v[2]
}

fn add_scaled(x: &[f64; 3], a: f64, y: &[f64; 3]) -> [f64; 3] {
    [x[0] + a * y[0], x[1] + a * y[1], x[2] + a * y[2]]
}

fn scale(x: &[f64; 3], a: f64) -> [f64; 3] {
    [a * x[0], a * x[1], a * x[2]]
}

fn acc(x: &mut [f64; 3], y: &[f64; 3]) {
    for i in 0..3 {
        x[i] += y[i];
    }
}

fn acc_scaled(x: &mut [f64; 3], a: f64, y: &[f64; 3]) {
    for i in 0..3 {
        x[i] += a * y[i];
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::test_spec;
    use super::*;
    use crate::ocp::{evaluate_cost, solve_fbsm};

    /// Central finite differences of the Mayer objective.
    fn fd_gradient(spec: &OcpSpec, u: &[f64], eps: f64) -> Vec<f64> {
        (0..u.len())
            .map(|k| {
                let mut up = u.to_vec();
                let mut dn = u.to_vec();
                up[k] += eps;
                dn[k] -= eps;
                let phi_up = mayer_objective(spec, &forward_mayer(spec, &up).unwrap());
                let phi_dn = mayer_objective(spec, &forward_mayer(spec, &dn).unwrap());
                (phi_up - phi_dn) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let spec = test_spec().with_control_cells(10);
        // Interior control values so the +/- eps probes stay inside bounds.
        let u: Vec<f64> = (0..10).map(|k| 0.2 + 0.06 * k as f64).collect();
        let traj = forward_mayer(&spec, &u).unwrap();
        let adj = adjoint_gradient(&spec, &traj, &u);
        let fd = fd_gradient(&spec, &u, 1e-5);
        for k in 0..10 {
            let rel = (adj[k] - fd[k]).abs() / fd[k].abs().max(1e-12);
            assert!(
                rel <= 1e-4,
                "cell {k}: adjoint {} vs fd {} (rel {rel})",
                adj[k],
                fd[k]
            );
        }
    }

    #[test]
    fn degenerate_horizon_cost_is_initial_infected() {
        // Over T = 0.01 day nothing can change at O(T); J ~ I0.
        let params = crate::model::Parameters::new(0.004, 0.05, 169.0).unwrap();
        let ic = crate::model::InitialConditions::new(168.0, 1.0, 0.0).unwrap();
        let spec = OcpSpec::new(params, ic, 0.01).unwrap().with_control_cells(1);
        let report = solve_direct(&spec).unwrap();
        assert!(
            (report.cost - 1.0).abs() < 0.05,
            "J = {} should be close to I0 = 1",
            report.cost
        );
    }

    #[test]
    fn solution_stays_feasible_and_beats_bounds_controls() {
        let spec = test_spec();
        let report = solve_direct(&spec).unwrap();
        assert!(report.converged, "direct solver did not converge");
        for &u in report.control.values() {
            assert!((0.0..=1.0).contains(&u));
        }
        let (j_zero, _, _) = evaluate_cost(&spec, &spec.constant_control(0.0).unwrap()).unwrap();
        let (j_one, _, _) = evaluate_cost(&spec, &spec.constant_control(1.0).unwrap()).unwrap();
        assert!(report.cost <= j_zero && report.cost <= j_one);
    }

    #[test]
    fn agrees_with_fbsm_on_shared_spec() {
        let spec = test_spec();
        let direct = solve_direct(&spec).unwrap();
        let fbsm = solve_fbsm(&spec).unwrap();
        assert!(direct.converged && fbsm.converged);
        let tol = (0.005 * direct.cost).max(1e-3);
        assert!(
            (direct.cost - fbsm.cost).abs() <= tol,
            "direct J {} vs fbsm J {} beyond {tol}",
            direct.cost,
            fbsm.cost
        );
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mut spec = test_spec();
        spec.direct.max_iter = 1;
        spec.direct.tol = 1e-15;
        let report = solve_direct(&spec).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 1);
    }
}
