//! Domain types and right-hand sides for the interbank contagion model.
//!
//! Banks move through three compartments: susceptible S, infected I and
//! recovered R, with S + I + R = N held constant. The uncontrolled dynamics
//! are the classic SIR system
//!
//! ```text
//! dS/dt = -beta * S * I
//! dI/dt =  beta * S * I - gamma * I
//! dR/dt =  gamma * I
//! ```
//!
//! Central-bank assistance enters as a control u in [0, 1] that moves
//! infected banks to recovered at an extra rate u * I. A third formulation
//! (the Mayer form) tracks (S, R, Y) where Y accumulates the running
//! intervention cost b * u^2; it is the shape the direct solver works on.

use crate::error::{Error, Result};

/// Model constants: contagion rate, recovery rate and bank count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameters {
    /// Contagion spreading rate per (bank * day).
    pub beta: f64,
    /// Recovery rate per day.
    pub gamma: f64,
    /// Total number of banks N.
    pub population: f64,
}

impl Parameters {
    pub fn new(beta: f64, gamma: f64, population: f64) -> Result<Self> {
        if !(beta.is_finite() && gamma.is_finite() && population.is_finite()) {
            return Err(Error::NonFinite { what: "parameters" });
        }
        if beta < 0.0 {
            return Err(Error::InvalidParameters {
                reason: format!("beta must be >= 0, got {beta}"),
            });
        }
        if gamma < 0.0 {
            return Err(Error::InvalidParameters {
                reason: format!("gamma must be >= 0, got {gamma}"),
            });
        }
        if population <= 0.0 {
            return Err(Error::InvalidParameters {
                reason: format!("population must be > 0, got {population}"),
            });
        }
        Ok(Self { beta, gamma, population })
    }

    /// True when both rates vanish; such a model has no dynamics at all and
    /// cannot be calibrated against observations.
    pub fn is_degenerate(&self) -> bool {
        self.beta == 0.0 && self.gamma == 0.0
    }
}

/// One point of the compartment trajectory, in (real-valued) bank counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirState {
    pub susceptible: f64,
    pub infected: f64,
    pub recovered: f64,
}

impl SirState {
    pub fn new(susceptible: f64, infected: f64, recovered: f64) -> Self {
        Self { susceptible, infected, recovered }
    }

    pub fn is_finite(&self) -> bool {
        self.susceptible.is_finite() && self.infected.is_finite() && self.recovered.is_finite()
    }

    pub fn total(&self) -> f64 {
        self.susceptible + self.infected + self.recovered
    }

    /// Reporting-time clamp: integration overshoot may leave tiny negative
    /// counts, which are never fed back into the integrator.
    pub fn clamped_nonnegative(&self) -> Self {
        Self {
            susceptible: self.susceptible.max(0.0),
            infected: self.infected.max(0.0),
            recovered: self.recovered.max(0.0),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.susceptible, self.infected, self.recovered]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Self { susceptible: x[0], infected: x[1], recovered: x[2] }
    }
}

/// Bank counts at t = 0. The contagion scenario starts with at least one
/// infected bank, no recovered banks, and a susceptible pool that dominates
/// the infected seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditions {
    pub s0: f64,
    pub i0: f64,
    pub r0: f64,
}

/// Minimum S(0)/I(0) ratio below which [`InitialConditions::dominance_warning`]
/// fires. The model assumes the susceptible pool dwarfs the infected seed.
pub const DOMINANCE_RATIO: f64 = 10.0;

impl InitialConditions {
    pub fn new(s0: f64, i0: f64, r0: f64) -> Result<Self> {
        if !(s0.is_finite() && i0.is_finite() && r0.is_finite()) {
            return Err(Error::NonFinite { what: "initial conditions" });
        }
        if i0 <= 0.0 {
            return Err(Error::InvalidInitialConditions {
                reason: format!("i0 must be > 0 (at least one bank initially infected), got {i0}"),
            });
        }
        if r0 != 0.0 {
            return Err(Error::InvalidInitialConditions {
                reason: format!("r0 must be 0 (no bank starts recovered), got {r0}"),
            });
        }
        if s0 < 0.0 {
            return Err(Error::InvalidInitialConditions {
                reason: format!("s0 must be >= 0, got {s0}"),
            });
        }
        Ok(Self { s0, i0, r0 })
    }

    pub fn total(&self) -> f64 {
        self.s0 + self.i0 + self.r0
    }

    /// Checks S(0) + I(0) + R(0) = N within floating-point slack.
    pub fn consistent_with(&self, population: f64) -> Result<()> {
        let total = self.total();
        if (total - population).abs() > 1e-9 * population.abs().max(1.0) {
            return Err(Error::InvalidInitialConditions {
                reason: format!(
                    "s0 + i0 + r0 = {total} does not match population N = {population}"
                ),
            });
        }
        Ok(())
    }

    /// Warns when the susceptible pool does not dominate the infected seed
    /// (S(0) < 10 * I(0)). Not an error: the model remains well-posed, but it
    /// is outside the regime the scenario analysis assumes.
    pub fn dominance_warning(&self) -> Option<String> {
        if self.s0 < DOMINANCE_RATIO * self.i0 {
            Some(format!(
                "s0 = {} is less than {} * i0 = {}; the susceptible pool should dominate the infected seed",
                self.s0,
                DOMINANCE_RATIO,
                DOMINANCE_RATIO * self.i0
            ))
        } else {
            None
        }
    }

    pub fn as_state(&self) -> SirState {
        SirState::new(self.s0, self.i0, self.r0)
    }
}

/// Piecewise-constant control u(t) on a uniform mesh over [t_start, t_end].
/// Cell k covers [t_start + k*h, t_start + (k+1)*h) with h the cell width.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    t_start: f64,
    t_end: f64,
    values: Vec<f64>,
}

impl ControlGrid {
    pub fn new(t_start: f64, t_end: f64, values: Vec<f64>) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(Error::NonFinite { what: "control grid span" });
        }
        if t_end <= t_start {
            return Err(Error::InvalidGrid {
                reason: format!("control grid needs t_end > t_start, got [{t_start}, {t_end}]"),
            });
        }
        if values.is_empty() {
            return Err(Error::InvalidGrid {
                reason: "control grid needs at least one cell".to_string(),
            });
        }
        for &u in &values {
            if !u.is_finite() {
                return Err(Error::NonFinite { what: "control values" });
            }
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::ControlOutOfBounds { value: u, lo: 0.0, hi: 1.0 });
            }
        }
        Ok(Self { t_start, t_end, values })
    }

    /// Constant control at `level` on `cells` uniform cells.
    pub fn constant(t_start: f64, t_end: f64, cells: usize, level: f64) -> Result<Self> {
        Self::new(t_start, t_end, vec![level; cells])
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn cell_width(&self) -> f64 {
        (self.t_end - self.t_start) / self.values.len() as f64
    }

    /// Index of the cell enclosing time `t`, clamped to the grid.
    pub fn cell_index(&self, t: f64) -> usize {
        let raw = ((t - self.t_start) / self.cell_width()).floor();
        (raw.max(0.0) as usize).min(self.values.len() - 1)
    }

    /// Control level at time `t` (value of the enclosing cell; `t_end` maps
    /// to the last cell).
    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.cell_index(t)]
    }

    /// Exact integral of the piecewise-constant control over its span.
    pub fn integral(&self) -> f64 {
        let h = self.cell_width();
        self.values.iter().map(|u| u * h).sum()
    }

    /// Spans `[t0, t1]` when the grid covers that whole window.
    pub fn spans(&self, t0: f64, t1: f64) -> bool {
        let slack = 1e-9 * (self.t_end - self.t_start).abs().max(1.0);
        self.t_start <= t0 + slack && self.t_end >= t1 - slack
    }
}

// Right-hand sides. The checked `*_field` functions are the public contract;
// the `*_rhs` kernels are the unchecked forms the integrator and solvers call
// in their inner loops.
//
// The compartment derivatives must sum to exactly zero in floating point, so
// the recovery component is derived as the negative of the other two instead
// of being computed independently (the three naive expressions can be off by
// one rounding unit).

/// Uncontrolled SIR derivatives (dS/dt, dI/dt, dR/dt).
pub fn sir_rhs(p: &Parameters, x: &[f64; 3]) -> [f64; 3] {
    controlled_rhs(p, x, 0.0)
}

/// Controlled derivatives: assistance at rate u moves infected banks to
/// recovered at an extra u * I per day. u = 0 reproduces `sir_rhs` bit for bit.
pub fn controlled_rhs(p: &Parameters, x: &[f64; 3], u: f64) -> [f64; 3] {
    let infection = p.beta * x[0] * x[1];
    let recovery = p.gamma * x[1];
    let assisted = u * x[1];
    let ds = -infection;
    let di = infection - recovery - assisted;
    let dr = -(ds + di);
    [ds, di, dr]
}

/// Mayer-form derivatives over (S, R, Y) with I = N - S - R eliminated and
/// Y accumulating the running cost b * u^2.
pub fn mayer_rhs(p: &Parameters, x: &[f64; 3], u: f64, weight: f64) -> [f64; 3] {
    let s = x[0];
    let r = x[1];
    let implied_infected = p.population - s - r;
    [
        p.beta * s * (s + r - p.population),
        (p.gamma + u) * implied_infected,
        weight * u * u,
    ]
}

/// Checked uncontrolled field: errors on non-finite input.
pub fn sir_field(p: &Parameters, x: &SirState) -> Result<[f64; 3]> {
    if !x.is_finite() {
        return Err(Error::NonFinite { what: "state" });
    }
    Ok(sir_rhs(p, &x.as_array()))
}

/// Checked controlled field: errors on non-finite input or u outside [0, 1].
pub fn controlled_field(p: &Parameters, x: &SirState, u: f64) -> Result<[f64; 3]> {
    if !x.is_finite() || !u.is_finite() {
        return Err(Error::NonFinite { what: "state or control" });
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::ControlOutOfBounds { value: u, lo: 0.0, hi: 1.0 });
    }
    Ok(controlled_rhs(p, &x.as_array(), u))
}

/// Checked Mayer field over (S, R, Y): errors on non-finite input, u outside
/// [0, 1], or a non-positive cost weight.
pub fn mayer_field(p: &Parameters, s: f64, r: f64, u: f64, weight: f64) -> Result<[f64; 3]> {
    if !(s.is_finite() && r.is_finite() && u.is_finite() && weight.is_finite()) {
        return Err(Error::NonFinite { what: "mayer state or control" });
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::ControlOutOfBounds { value: u, lo: 0.0, hi: 1.0 });
    }
    if weight <= 0.0 {
        return Err(Error::InvalidSpec {
            reason: format!("cost weight must be > 0, got {weight}"),
        });
    }
    Ok(mayer_rhs(p, &[s, r, 0.0], u, weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(beta: f64, gamma: f64, n: f64) -> Parameters {
        Parameters::new(beta, gamma, n).unwrap()
    }

    #[test]
    fn infected_zero_is_an_equilibrium() {
        let p = params(0.1, 0.2, 169.0);
        let d = sir_field(&p, &SirState::new(168.0, 0.0, 1.0)).unwrap();
        assert_eq!(d, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn pure_recovery_when_beta_is_zero() {
        let p = params(0.0, 1.0, 169.0);
        let d = sir_field(&p, &SirState::new(100.0, 10.0, 59.0)).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], -10.0);
        assert_eq!(d[2], 10.0);
    }

    #[test]
    fn sir_field_direct_substitution() {
        let p = params(0.01, 0.5, 169.0);
        let d = sir_field(&p, &SirState::new(168.0, 1.0, 0.0)).unwrap();
        assert!((d[0] - -1.68).abs() < 1e-15);
        assert!((d[1] - 1.18).abs() < 1e-15);
        assert!((d[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn controlled_reduces_to_sir_at_zero_control() {
        let p = params(0.037, 0.41, 169.0);
        let x = SirState::new(120.0, 30.0, 19.0);
        let a = sir_field(&p, &x).unwrap();
        let b = controlled_field(&p, &x, 0.0).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
        assert_eq!(a[2].to_bits(), b[2].to_bits());
    }

    #[test]
    fn control_acts_as_extra_recovery() {
        let p = params(0.0, 0.0, 169.0);
        let d = controlled_field(&p, &SirState::new(100.0, 10.0, 59.0), 1.0).unwrap();
        assert_eq!(d, [0.0, -10.0, 10.0]);
    }

    #[test]
    fn controlled_field_direct_substitution() {
        let p = params(0.01, 0.5, 169.0);
        let d = controlled_field(&p, &SirState::new(168.0, 1.0, 0.0), 0.5).unwrap();
        assert!((d[0] - -1.68).abs() < 1e-15);
        assert!((d[1] - 0.68).abs() < 1e-15);
        assert!((d[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mayer_matches_controlled_at_one_infected() {
        let p = params(0.01, 0.5, 169.0);
        let d = mayer_field(&p, 168.0, 0.0, 0.0, 1.5).unwrap();
        assert!((d[0] - -1.68).abs() < 1e-12);
        assert!((d[1] - 0.5).abs() < 1e-12);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn mayer_at_full_population_only_accumulates_cost() {
        // S + R = N means no infected banks in Mayer coordinates.
        let p = params(0.02, 0.3, 169.0);
        let d = mayer_field(&p, 100.0, 69.0, 0.7, 1.5).unwrap();
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 1.5 * 0.49).abs() < 1e-15);
    }

    #[test]
    fn field_rejects_non_finite_state() {
        let p = params(0.01, 0.5, 169.0);
        let bad = SirState::new(f64::NAN, 1.0, 0.0);
        assert!(matches!(sir_field(&p, &bad), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn controlled_field_rejects_out_of_bounds_control() {
        let p = params(0.01, 0.5, 169.0);
        let x = SirState::new(168.0, 1.0, 0.0);
        assert!(matches!(
            controlled_field(&p, &x, 1.5),
            Err(Error::ControlOutOfBounds { .. })
        ));
        assert!(matches!(
            controlled_field(&p, &x, -0.1),
            Err(Error::ControlOutOfBounds { .. })
        ));
    }

    #[test]
    fn parameters_validation() {
        assert!(Parameters::new(-0.1, 0.5, 169.0).is_err());
        assert!(Parameters::new(0.1, -0.5, 169.0).is_err());
        assert!(Parameters::new(0.1, 0.5, 0.0).is_err());
        assert!(Parameters::new(f64::INFINITY, 0.5, 169.0).is_err());
        assert!(params(0.0, 0.0, 10.0).is_degenerate());
        assert!(!params(0.1, 0.0, 10.0).is_degenerate());
    }

    #[test]
    fn initial_conditions_validation() {
        assert!(InitialConditions::new(168.0, 1.0, 0.0).is_ok());
        assert!(InitialConditions::new(168.0, 0.0, 0.0).is_err());
        assert!(InitialConditions::new(168.0, 1.0, 1.0).is_err());
        assert!(InitialConditions::new(-1.0, 1.0, 0.0).is_err());

        let ic = InitialConditions::new(168.0, 1.0, 0.0).unwrap();
        assert!(ic.consistent_with(169.0).is_ok());
        assert!(ic.consistent_with(170.0).is_err());
        assert!(ic.dominance_warning().is_none());

        let close = InitialConditions::new(5.0, 1.0, 0.0).unwrap();
        assert!(close.dominance_warning().is_some());
    }

    #[test]
    fn control_grid_validation_and_lookup() {
        assert!(ControlGrid::new(0.0, 30.0, vec![]).is_err());
        assert!(ControlGrid::new(0.0, 0.0, vec![0.5]).is_err());
        assert!(ControlGrid::new(0.0, 30.0, vec![1.1]).is_err());
        assert!(ControlGrid::new(0.0, 30.0, vec![-0.1]).is_err());

        let g = ControlGrid::new(0.0, 3.0, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(g.cell_width(), 1.0);
        assert_eq!(g.value_at(0.0), 0.1);
        assert_eq!(g.value_at(0.999), 0.1);
        assert_eq!(g.value_at(1.0), 0.2);
        assert_eq!(g.value_at(3.0), 0.3); // t_end maps to the last cell
        assert!((g.integral() - 0.6).abs() < 1e-15);
        assert!(g.spans(0.0, 3.0));
        assert!(!g.spans(0.0, 4.0));
    }

    proptest! {
        /// Compartment derivatives sum to exactly zero for every state and
        /// control, uncontrolled and controlled alike.
        #[test]
        fn conservation_is_exact(
            beta in 0.0..0.2f64,
            gamma in 0.0..1.0f64,
            s in 0.0..1e4f64,
            i in 0.0..1e4f64,
            r in 0.0..1e4f64,
            u in 0.0..=1.0f64,
        ) {
            let p = params(beta, gamma, 169.0);
            let x = SirState::new(s, i, r);
            let d = sir_field(&p, &x).unwrap();
            prop_assert_eq!(d[0] + d[1] + d[2], 0.0);
            let d = controlled_field(&p, &x, u).unwrap();
            prop_assert_eq!(d[0] + d[1] + d[2], 0.0);
        }

        /// u = 0 reproduces the uncontrolled field bit for bit.
        #[test]
        fn zero_control_reduction_is_bitwise(
            beta in 0.0..0.2f64,
            gamma in 0.0..1.0f64,
            s in 0.0..1e4f64,
            i in 0.0..1e4f64,
            r in 0.0..1e4f64,
        ) {
            let p = params(beta, gamma, 169.0);
            let x = SirState::new(s, i, r);
            let a = sir_field(&p, &x).unwrap();
            let b = controlled_field(&p, &x, 0.0).unwrap();
            for k in 0..3 {
                prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }

        /// The (S, R) components of the Mayer field agree with the controlled
        /// field evaluated at I = N - S - R.
        #[test]
        fn mayer_consistency(
            beta in 0.0..0.2f64,
            gamma in 0.0..1.0f64,
            s in 0.0..169.0f64,
            frac in 0.0..=1.0f64,
            u in 0.0..=1.0f64,
        ) {
            let n = 169.0;
            let r = frac * (n - s);
            let p = params(beta, gamma, n);
            let i = n - s - r;
            let ctrl = controlled_field(&p, &SirState::new(s, i, r), u).unwrap();
            let mayer = mayer_field(&p, s, r, u, 1.5).unwrap();
            let scale = (beta * n * n + gamma * n + n).max(1.0);
            prop_assert!((mayer[0] - ctrl[0]).abs() <= 1e-13 * scale);
            prop_assert!((mayer[1] - ctrl[2]).abs() <= 1e-13 * scale);
        }
    }
}
