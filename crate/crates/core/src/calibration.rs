//! Recovery of (beta, gamma) from scenario observables.
//!
//! The per-country contagion and recovery rates behind the reference
//! scenarios are not available directly, so they are recovered from
//! quantitative anchors instead: the uncontrolled infected count at a given
//! day, or the day the contagion dies out. Fitting minimizes the squared
//! normalized residuals with Nelder-Mead seeded from a coarse grid; the
//! contagion-free-time observable is mesh-quantized and non-smooth, which is
//! why a derivative-free search is used.

use crate::error::{Error, Result};
use crate::integrator::{TimeGrid, CONTAGION_FREE_THRESHOLD};
use crate::model::{sir_rhs, Parameters};

/// What a calibration target observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Infected,
    Susceptible,
    Recovered,
    /// First day the infected count stays below the contagion-free threshold.
    ContagionFreeTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Equals,
    AtMost,
}

/// One observable anchor: compartment (or contagion-free time), day, value
/// and how the simulated value must relate to it. `day` is ignored for
/// [`Observable::ContagionFreeTime`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub observable: Observable,
    pub day: f64,
    pub value: f64,
    pub comparator: Comparator,
}

impl Target {
    pub fn equals(observable: Observable, day: f64, value: f64) -> Self {
        Self { observable, day, value, comparator: Comparator::Equals }
    }

    pub fn at_most(observable: Observable, day: f64, value: f64) -> Self {
        Self { observable, day, value, comparator: Comparator::AtMost }
    }

    /// Contagion dead (infected below threshold) no later than `day`.
    pub fn contagion_free_by(day: f64) -> Self {
        Self {
            observable: Observable::ContagionFreeTime,
            day: 0.0,
            value: day,
            comparator: Comparator::AtMost,
        }
    }
}

/// A set of anchors plus the simulation window they are read from.
/// Simulations start from the canonical scenario: one infected bank,
/// no recovered banks, everyone else susceptible.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTargets {
    pub targets: Vec<Target>,
    /// Simulation horizon in days; must cover every target day.
    pub horizon: f64,
    /// Total bank count N; the initial state is (N - 1, 1, 0).
    pub population: f64,
    /// Contagion-free threshold for [`Observable::ContagionFreeTime`].
    pub threshold: f64,
}

impl CalibrationTargets {
    pub fn new(targets: Vec<Target>, horizon: f64, population: f64) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidTargets { reason: "need at least one target".into() });
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidTargets {
                reason: format!("horizon must be finite and > 0, got {horizon}"),
            });
        }
        if !(population.is_finite() && population > 1.0) {
            return Err(Error::InvalidTargets {
                reason: format!("population must exceed the single infected seed, got {population}"),
            });
        }
        for (i, t) in targets.iter().enumerate() {
            if !(t.day.is_finite() && t.value.is_finite()) {
                return Err(Error::InvalidTargets {
                    reason: format!("target {i} has a non-finite day or value"),
                });
            }
            let needs_day = t.observable != Observable::ContagionFreeTime;
            if needs_day && !(0.0..=horizon).contains(&t.day) {
                return Err(Error::InvalidTargets {
                    reason: format!(
                        "target {i} day {} outside the declared horizon [0, {horizon}]",
                        t.day
                    ),
                });
            }
            if t.observable == Observable::ContagionFreeTime && t.value > horizon {
                return Err(Error::InvalidTargets {
                    reason: format!(
                        "target {i} contagion-free day {} beyond the horizon {horizon}",
                        t.value
                    ),
                });
            }
        }
        Ok(Self { targets, horizon, population, threshold: CONTAGION_FREE_THRESHOLD })
    }

    /// Number of `Equals` anchors; two are needed to pin both rates.
    pub fn equals_count(&self) -> usize {
        self.targets.iter().filter(|t| t.comparator == Comparator::Equals).count()
    }
}

/// Per-target discrepancies for parameters `p`: for `Equals` targets the
/// signed gap (target minus simulated), for `AtMost` the hinge excess
/// (simulated minus cap, floored at zero). A contagion that never dies
/// within the window contributes `horizon + I(end)` as its observed time,
/// keeping the fit informed about how far from feasible it is.
pub fn residual(p: &Parameters, targets: &CalibrationTargets) -> Result<Vec<f64>> {
    if p.is_degenerate() {
        return Err(Error::InvalidParameters {
            reason: "beta = gamma = 0 has no dynamics to calibrate against".into(),
        });
    }
    let obs = observe(p, targets)?;
    Ok(targets
        .targets
        .iter()
        .zip(&obs)
        .map(|(t, observed)| match t.comparator {
            Comparator::Equals => t.value - observed,
            Comparator::AtMost => (observed - t.value).max(0.0),
        })
        .collect())
}

/// Streaming simulation of the canonical uncontrolled scenario, reading off
/// every target's observable in one pass. Semantically identical to a dense
/// [`integrate`] run followed by interpolation and the contagion-free scan
/// (a unit test pins that equivalence); the calibration loop calls this many
/// thousands of times, so the full trajectory is never materialized.
fn observe(p: &Parameters, targets: &CalibrationTargets) -> Result<Vec<f64>> {
    let grid = TimeGrid::with_default_step(targets.horizon)?;
    let h = grid.h();
    let steps = grid.steps();

    // Day targets indexed by the mesh interval that brackets them.
    struct Pending {
        target_index: usize,
        component: usize,
        node: usize,
        frac: f64,
    }
    let mut pending = Vec::new();
    let mut want_contagion_free = false;
    for (i, t) in targets.targets.iter().enumerate() {
        match t.observable {
            Observable::ContagionFreeTime => want_contagion_free = true,
            obs => {
                let component = match obs {
                    Observable::Susceptible => 0,
                    Observable::Infected => 1,
                    Observable::Recovered => 2,
                    Observable::ContagionFreeTime => unreachable!(),
                };
                let pos = t.day / h;
                let node = (pos.floor().max(0.0) as usize).min(steps);
                pending.push(Pending {
                    target_index: i,
                    component,
                    node,
                    frac: (pos - node as f64).clamp(0.0, 1.0),
                });
            }
        }
    }

    let mut out = vec![0.0; targets.targets.len()];
    let mut x = [p.population - 1.0, 1.0, 0.0];
    // First node below threshold with I non-increasing ever since.
    let mut free_node: Option<usize> = if x[1] < targets.threshold { Some(0) } else { None };

    let field = |state: &[f64; 3]| sir_rhs(p, state);
    for n in 0..steps {
        let next = rk4_autonomous(&field, &x, h);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: n });
        }
        for pend in &pending {
            if pend.node == n {
                out[pend.target_index] =
                    x[pend.component] * (1.0 - pend.frac) + next[pend.component] * pend.frac;
            }
        }
        if next[1] > x[1] {
            free_node = None;
        }
        if free_node.is_none() && next[1] < targets.threshold {
            free_node = Some(n + 1);
        }
        x = next;
    }
    for pend in &pending {
        if pend.node == steps {
            out[pend.target_index] = x[pend.component];
        }
    }
    if want_contagion_free {
        // A contagion still alive at the end of the window reports the
        // horizon plus the remaining infected mass, keeping the search
        // informed about how far from feasible the parameters are.
        let observed = free_node
            .map(|i| grid.time(i))
            .unwrap_or_else(|| targets.horizon + x[1]);
        for (i, t) in targets.targets.iter().enumerate() {
            if t.observable == Observable::ContagionFreeTime {
                out[i] = observed;
            }
        }
    }
    Ok(out)
}

fn rk4_autonomous(f: &impl Fn(&[f64; 3]) -> [f64; 3], x: &[f64; 3], h: f64) -> [f64; 3] {
    let add = |a: &[f64; 3], s: f64, b: &[f64; 3]| {
        [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
    };
    let k1 = f(x);
    let k2 = f(&add(x, 0.5 * h, &k1));
    let k3 = f(&add(x, 0.5 * h, &k2));
    let k4 = f(&add(x, h, &k3));
    let mut out = *x;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Rectangular (beta, gamma) search region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub beta: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for SearchBox {
    fn default() -> Self {
        Self { beta: (1e-5, 0.1), gamma: (1e-4, 1.0) }
    }
}

impl SearchBox {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
                return Err(Error::InvalidTargets {
                    reason: format!("search box for {name} must be finite, positive and ordered"),
                });
            }
        }
        Ok(())
    }
}

/// One step of the deterministic fit trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub beta: f64,
    pub gamma: f64,
    pub objective: f64,
}

/// Outcome of a calibration run. `ok` means every `Equals` target is met
/// within 2% and every `AtMost` cap holds; otherwise the best point found is
/// still reported, with per-target residuals for diagnosis.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: Parameters,
    pub residuals: Vec<f64>,
    pub residual_norm: f64,
    /// Sum of squared normalized residuals, the quantity minimized.
    pub objective: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub ok: bool,
    pub notes: Vec<String>,
    /// Best point after each accepted improvement, in evaluation order.
    pub trace: Vec<TracePoint>,
}

/// Relative slack on `Equals` targets for a fit to count as successful.
pub const FIT_EQUALS_TOLERANCE: f64 = 0.02;

/// Recovers (beta, gamma) by Nelder-Mead on the squared normalized residual
/// sum, searched in log-space and seeded from a 4x4 coarse grid over the box
/// (with a valley-profile fallback when the coarse pass misses). The whole
/// procedure is deterministic: identical targets yield identical fits, and
/// the report carries the improvement trace.
pub fn calibrate(targets: &CalibrationTargets, search: &SearchBox) -> Result<FitReport> {
    search.validate()?;

    let scales: Vec<f64> = targets.targets.iter().map(|t| t.value.abs().max(1.0)).collect();
    let population = targets.population;
    let mut evaluations = 0usize;
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut best_seen = f64::INFINITY;

    let log_box = [
        (search.beta.0.ln(), search.beta.1.ln()),
        (search.gamma.0.ln(), search.gamma.1.ln()),
    ];

    let mut objective = |x: &[f64]| -> f64 {
        evaluations += 1;
        // Clamp into the box; penalize the excursion so the search returns.
        let mut penalty = 0.0;
        let mut clamped = [0.0f64; 2];
        for d in 0..2 {
            let (lo, hi) = log_box[d];
            let c = x[d].clamp(lo, hi);
            penalty += (x[d] - c) * (x[d] - c);
            clamped[d] = c;
        }
        let p = match Parameters::new(clamped[0].exp(), clamped[1].exp(), population) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let value = match residual(&p, targets) {
            Ok(r) => r
                .iter()
                .zip(&scales)
                .map(|(ri, s)| (ri / s) * (ri / s))
                .sum::<f64>(),
            Err(_) => return f64::INFINITY,
        };
        let value = value + 100.0 * penalty;
        if value < best_seen {
            best_seen = value;
            trace.push(TracePoint { beta: p.beta, gamma: p.gamma, objective: value });
        }
        value
    };

    // The squared-residual landscape runs along curved valleys with shallow
    // local minima, so a coarse seeding alone is not reliable. Stage 1
    // starts Nelder-Mead from the best coarse cells; when no basin fits the
    // targets essentially exactly, stage 2 traces the valley profile and
    // descends from its best points. The whole cascade is deterministic.
    let box_lo = [log_box[0].0, log_box[1].0];
    let box_hi = [log_box[0].1, log_box[1].1];
    let mut iterations = 0;

    // Stage 1: 4x4 coarse seeding.
    let seeds = grid_seeds(&mut objective, 4, box_lo, box_hi);
    let mut best = multi_start(&mut objective, &seeds, 4, &mut iterations);

    // Stage 2: when the coarse pass missed the global basin, trace the
    // least-squares valley itself: minimize over gamma per beta column
    // (warm-started along the sweep), then descend from the best profile
    // points. Narrow curved valleys defeat plain grid seeding.
    if best.f > PERFECT_FIT {
        let profile = profile_sweep(&mut objective, box_lo, box_hi, 24, &mut iterations);
        let swept = multi_start(&mut objective, &profile, 4, &mut iterations);
        if swept.f < best.f {
            best = swept;
        }
    }

    let beta = best.x[0].clamp(log_box[0].0, log_box[0].1).exp();
    let gamma = best.x[1].clamp(log_box[1].0, log_box[1].1).exp();
    let params = Parameters::new(beta, gamma, population)?;
    let residuals = residual(&params, targets)?;
    let residual_norm = residuals.iter().map(|r| r * r).sum::<f64>().sqrt();

    let mut ok = true;
    let mut notes = Vec::new();
    if targets.equals_count() < 2 {
        notes.push(format!(
            "underdetermined: {} equality target(s) for two parameters; the fitted point is one of a family",
            targets.equals_count()
        ));
    }
    for (i, (t, r)) in targets.targets.iter().zip(&residuals).enumerate() {
        match t.comparator {
            Comparator::Equals => {
                let tol = FIT_EQUALS_TOLERANCE * t.value.abs().max(1.0);
                if r.abs() > tol {
                    ok = false;
                    notes.push(format!(
                        "target {i} missed: residual {r:.6} exceeds tolerance {tol:.6}"
                    ));
                }
            }
            Comparator::AtMost => {
                if *r > 1e-9 {
                    ok = false;
                    notes.push(format!("target {i} cap exceeded by {r:.6}"));
                }
            }
        }
    }

    Ok(FitReport {
        params,
        residuals,
        residual_norm,
        objective: best.f,
        evaluations,
        iterations,
        ok,
        notes,
        trace,
    })
}

/// Objective level at which a basin is considered an exact fit and the
/// multi-start cascade stops.
const PERFECT_FIT: f64 = 1e-14;

/// Log-spaced n-by-n seeding grid over the box, best first.
fn grid_seeds(
    objective: &mut impl FnMut(&[f64]) -> f64,
    n: usize,
    box_lo: [f64; 2],
    box_hi: [f64; 2],
) -> Vec<([f64; 2], f64)> {
    let mut seeds = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = [
                box_lo[0] + (box_hi[0] - box_lo[0]) * (i as f64 / (n - 1) as f64),
                box_lo[1] + (box_hi[1] - box_lo[1]) * (j as f64 / (n - 1) as f64),
            ];
            let f = objective(&x);
            seeds.push((x, f));
        }
    }
    seeds.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0[0].partial_cmp(&b.0[0]).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.0[1].partial_cmp(&b.0[1]).unwrap_or(std::cmp::Ordering::Equal))
    });
    seeds
}

/// Per-column valley profile: for each log-beta column, a warm-started 1-D
/// Nelder-Mead minimizes over log-gamma; the column minima (sorted best
/// first) seed the final 2-D descent.
fn profile_sweep(
    objective: &mut impl FnMut(&[f64]) -> f64,
    box_lo: [f64; 2],
    box_hi: [f64; 2],
    columns: usize,
    iterations: &mut usize,
) -> Vec<([f64; 2], f64)> {
    let mut out = Vec::with_capacity(columns);
    let mut warm = 0.5 * (box_lo[1] + box_hi[1]);
    for i in 0..columns {
        let beta = box_lo[0] + (box_hi[0] - box_lo[0]) * (i as f64 / (columns - 1) as f64);
        let mut column = |y: &[f64]| objective(&[beta, y[0]]);
        let o = nelder_mead(&mut column, &[warm], 0.4, 60);
        *iterations += o.iterations;
        warm = o.x[0];
        out.push(([beta, o.x[0]], o.f));
    }
    out.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0[0].partial_cmp(&b.0[0]).unwrap_or(std::cmp::Ordering::Equal))
    });
    out
}

/// Nelder-Mead (with polish restarts) from each of the best seeds in turn,
/// stopping early once some basin fits exactly.
fn multi_start(
    objective: &mut impl FnMut(&[f64]) -> f64,
    seeds: &[([f64; 2], f64)],
    starts: usize,
    iterations: &mut usize,
) -> NmOutcome {
    let mut best: Option<NmOutcome> = None;
    for (seed, _) in seeds.iter().take(starts) {
        let mut outcome = nelder_mead(objective, seed, 0.5, 300);
        *iterations += outcome.iterations;
        for _ in 0..2 {
            let restart = nelder_mead(objective, &outcome.x, 1e-3, 200);
            *iterations += restart.iterations;
            if restart.f < outcome.f {
                outcome = restart;
            } else {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| outcome.f < b.f) {
            best = Some(outcome);
        }
        if best.as_ref().is_some_and(|b| b.f <= PERFECT_FIT) {
            break;
        }
    }
    best.expect("at least one seed was tried")
}

struct NmOutcome {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5) with combined function-spread and simplex-size stopping.
fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    initial_step: f64,
    max_iter: usize,
) -> NmOutcome {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for d in 0..n {
        let mut x = x0.to_vec();
        x[d] += initial_step;
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let mut iterations = 0;
    while iterations < max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if spread <= 1e-14 * (1.0 + simplex[0].1.abs()) && size <= 1e-10 {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(x, _)| x[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> =
            (0..n).map(|d| centroid[d] + (centroid[d] - worst.0[d])).collect();
        let f_reflect = f(&reflect);

        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> =
                (0..n).map(|d| centroid[d] + 2.0 * (centroid[d] - worst.0[d])).collect();
            let f_expand = f(&expand);
            simplex[n] = if f_expand < f_reflect { (expand, f_expand) } else { (reflect, f_reflect) };
        } else if f_reflect < simplex[n - 1].1 {
            simplex[n] = (reflect, f_reflect);
        } else {
            let (toward, f_toward) = if f_reflect < worst.1 {
                (reflect.clone(), f_reflect)
            } else {
                (worst.0.clone(), worst.1)
            };
            let contract: Vec<f64> =
                (0..n).map(|d| centroid[d] + 0.5 * (toward[d] - centroid[d])).collect();
            let f_contract = f(&contract);
            if f_contract < f_toward {
                simplex[n] = (contract, f_contract);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = (0..n)
                        .map(|d| best[d] + 0.5 * (entry.0[d] - best[d]))
                        .collect();
                    let fx = f(&x);
                    *entry = (x, fx);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    NmOutcome { x: simplex[0].0.clone(), f: simplex[0].1, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, time_to_contagion_free, Trajectory};

    fn canonical(beta: f64, gamma: f64) -> Parameters {
        Parameters::new(beta, gamma, 169.0).unwrap()
    }

    fn simulate_uncontrolled(p: &Parameters, horizon: f64) -> Trajectory<3> {
        let grid = TimeGrid::with_default_step(horizon).unwrap();
        let params = *p;
        integrate(
            move |_t, x: &[f64; 3], _u| sir_rhs(&params, x),
            [p.population - 1.0, 1.0, 0.0],
            &grid,
            None,
        )
        .unwrap()
    }

    fn infected_at(p: &Parameters, day: f64, horizon: f64) -> f64 {
        let traj = simulate_uncontrolled(p, horizon);
        let pos = day / traj.grid.h();
        let i = (pos.floor().max(0.0) as usize).min(traj.grid.steps());
        let j = (i + 1).min(traj.grid.steps());
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        traj.states[i][1] * (1.0 - frac) + traj.states[j][1] * frac
    }

    /// The streaming observer must agree with the dense route: a full
    /// [`integrate`] run, interpolation at target days, and the
    /// contagion-free scan.
    #[test]
    fn streaming_observables_match_dense_trajectory_route() {
        for (beta, gamma, horizon) in
            [(0.004, 0.05, 200.0), (0.01, 0.0115, 500.0), (0.0005, 0.002, 300.0)]
        {
            let p = canonical(beta, gamma);
            let targets = CalibrationTargets::new(
                vec![
                    Target::equals(Observable::Infected, 30.0, 1.0),
                    Target::equals(Observable::Susceptible, 77.5, 1.0),
                    Target::equals(Observable::Recovered, horizon, 1.0),
                    Target::contagion_free_by(horizon),
                ],
                horizon,
                169.0,
            )
            .unwrap();
            let got = observe(&p, &targets).unwrap();

            let traj = simulate_uncontrolled(&p, horizon);
            let dense_sample = |day: f64, comp: usize| {
                let pos = day / traj.grid.h();
                let i = (pos.floor().max(0.0) as usize).min(traj.grid.steps());
                let j = (i + 1).min(traj.grid.steps());
                let frac = (pos - i as f64).clamp(0.0, 1.0);
                traj.states[i][comp] * (1.0 - frac) + traj.states[j][comp] * frac
            };
            assert_eq!(got[0].to_bits(), dense_sample(30.0, 1).to_bits());
            assert_eq!(got[1].to_bits(), dense_sample(77.5, 0).to_bits());
            assert_eq!(got[2].to_bits(), dense_sample(horizon, 2).to_bits());
            let dense_free = time_to_contagion_free(&traj, targets.threshold)
                .unwrap_or_else(|| horizon + traj.last()[1]);
            assert_eq!(got[3].to_bits(), dense_free.to_bits());
        }
    }

    #[test]
    fn residual_vanishes_at_generating_parameters() {
        let p = canonical(0.004, 0.05);
        let i30 = infected_at(&p, 30.0, 120.0);
        let i100 = infected_at(&p, 100.0, 120.0);
        let targets = CalibrationTargets::new(
            vec![
                Target::equals(Observable::Infected, 30.0, i30),
                Target::equals(Observable::Infected, 100.0, i100),
            ],
            120.0,
            169.0,
        )
        .unwrap();
        let r = residual(&p, &targets).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-9), "self-residual {r:?}");
    }

    #[test]
    fn zero_beta_leaves_large_positive_residual() {
        // Without contagion the infected count only decays, so any target
        // above the single seeded bank stays far out of reach.
        let p = canonical(0.0, 0.05);
        let targets = CalibrationTargets::new(
            vec![Target::equals(Observable::Infected, 30.0, 64.0)],
            60.0,
            169.0,
        )
        .unwrap();
        let r = residual(&p, &targets).unwrap();
        assert!(r[0] > 60.0, "expected a large positive gap, got {}", r[0]);
    }

    #[test]
    fn residual_is_continuous_on_a_grid_around_a_feasible_point() {
        let center = canonical(0.004, 0.05);
        let value = infected_at(&center, 30.0, 60.0);
        let targets = CalibrationTargets::new(
            vec![Target::equals(Observable::Infected, 30.0, value)],
            60.0,
            169.0,
        )
        .unwrap();

        let mut grid = [[0.0f64; 5]; 5];
        for (i, row) in grid.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let beta = 0.004 * (0.8 + 0.1 * i as f64);
                let gamma = 0.05 * (0.8 + 0.1 * j as f64);
                *cell = residual(&canonical(beta, gamma), &targets).unwrap()[0];
            }
        }

        let flat: Vec<f64> = grid.iter().flatten().cloned().collect();
        assert!(flat.iter().all(|v| v.is_finite()));
        let span = flat.iter().cloned().fold(f64::MIN, f64::max)
            - flat.iter().cloned().fold(f64::MAX, f64::min);

        let sign_changes = |vals: &[f64]| -> usize {
            vals.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
        };
        for i in 0..5 {
            let row: Vec<f64> = (0..5).map(|j| grid[i][j]).collect();
            let col: Vec<f64> = (0..5).map(|j| grid[j][i]).collect();
            assert!(sign_changes(&row) <= 1, "row {i} flips sign more than once: {row:?}");
            assert!(sign_changes(&col) <= 1, "column {i} flips sign more than once: {col:?}");
            for w in row.windows(2).chain(col.windows(2)) {
                assert!(
                    (w[1] - w[0]).abs() <= 0.5 * span,
                    "adjacent residual jump {} vs grid span {span}",
                    (w[1] - w[0]).abs()
                );
            }
        }
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        let targets = CalibrationTargets::new(
            vec![Target::equals(Observable::Infected, 30.0, 64.0)],
            60.0,
            169.0,
        )
        .unwrap();
        let p = Parameters::new(0.0, 0.0, 169.0).unwrap();
        assert!(residual(&p, &targets).is_err());
    }

    #[test]
    fn targets_validation() {
        assert!(CalibrationTargets::new(vec![], 60.0, 169.0).is_err());
        let t = Target::equals(Observable::Infected, 90.0, 64.0);
        assert!(CalibrationTargets::new(vec![t], 60.0, 169.0).is_err(), "day beyond horizon");
        let t = Target::contagion_free_by(800.0);
        assert!(CalibrationTargets::new(vec![t], 400.0, 169.0).is_err(), "cap beyond horizon");
        let t = Target::equals(Observable::Infected, 30.0, f64::NAN);
        assert!(CalibrationTargets::new(vec![t], 60.0, 169.0).is_err());
    }

    #[test]
    fn round_trip_recovers_generating_parameters() {
        let truth = canonical(0.004, 0.05);
        let targets = CalibrationTargets::new(
            vec![
                Target::equals(Observable::Infected, 30.0, infected_at(&truth, 30.0, 120.0)),
                Target::equals(Observable::Infected, 100.0, infected_at(&truth, 100.0, 120.0)),
            ],
            120.0,
            169.0,
        )
        .unwrap();
        let fit = calibrate(&targets, &SearchBox::default()).unwrap();
        assert!(fit.ok, "fit flagged failure: {:?}", fit.notes);
        assert!(
            (fit.params.beta - truth.beta).abs() / truth.beta <= 1e-4,
            "beta {} vs {}",
            fit.params.beta,
            truth.beta
        );
        assert!(
            (fit.params.gamma - truth.gamma).abs() / truth.gamma <= 1e-4,
            "gamma {} vs {}",
            fit.params.gamma,
            truth.gamma
        );
    }

    #[test]
    fn portugal_anchors_reproduce_their_targets() {
        let targets = CalibrationTargets::new(
            vec![
                Target::equals(Observable::Infected, 30.0, 64.0),
                Target::contagion_free_by(365.0),
            ],
            500.0,
            169.0,
        )
        .unwrap();
        let fit = calibrate(&targets, &SearchBox::default()).unwrap();
        assert!(fit.ok, "fit flagged failure: {:?}", fit.notes);

        // Re-simulate at the fitted point and check both anchors directly.
        let i30 = infected_at(&fit.params, 30.0, 500.0);
        assert!((i30 - 64.0).abs() <= 0.02 * 64.0, "I(30) = {i30}");
        let traj = simulate_uncontrolled(&fit.params, 500.0);
        let how_long = time_to_contagion_free(&traj, 1.0).expect("contagion must die out");
        assert!(how_long <= 365.0, "contagion-free at day {how_long}");
    }

    #[test]
    fn infeasible_target_is_flagged_not_silently_accepted() {
        // More infected banks than exist.
        let targets = CalibrationTargets::new(
            vec![Target::equals(Observable::Infected, 30.0, 200.0)],
            60.0,
            169.0,
        )
        .unwrap();
        let fit = calibrate(&targets, &SearchBox::default()).unwrap();
        assert!(!fit.ok);
        assert!(!fit.notes.is_empty());
    }

    #[test]
    fn identical_targets_give_identical_fits() {
        let targets = CalibrationTargets::new(
            vec![
                Target::equals(Observable::Infected, 30.0, 64.0),
                Target::equals(Observable::Infected, 100.0, 5.0),
            ],
            150.0,
            169.0,
        )
        .unwrap();
        let a = calibrate(&targets, &SearchBox::default()).unwrap();
        let b = calibrate(&targets, &SearchBox::default()).unwrap();
        assert_eq!(a.params.beta.to_bits(), b.params.beta.to_bits());
        assert_eq!(a.params.gamma.to_bits(), b.params.gamma.to_bits());
        assert_eq!(a.evaluations, b.evaluations);
    }
}
