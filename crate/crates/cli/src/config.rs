//! Scenario configuration files.
//!
//! Flat key/value sections, one level deep, human-diffable:
//!
//! ```text
//! name = portugal
//!
//! [model]
//! population = 169
//! # beta = 0.004          either explicit rates here...
//! # gamma = 0.05
//!
//! [initial]
//! s0 = 168
//! i0 = 1
//! r0 = 0
//!
//! [simulate]
//! horizon = 365
//!
//! [optimize]
//! horizon = 30
//! weight = 1.5
//!
//! [calibrate]              ...or calibration targets here (never both)
//! target = infected 30 equals 64
//! target = contagion_free at_most 365
//! horizon = 500
//!
//! [sweep]
//! weights = 0.5 1.5 5
//! ```
//!
//! Validation is total: every malformed input or invariant violation comes
//! back as a [`ConfigError`] naming the line and field, unknown keys and
//! sections included.

use std::fmt;
use std::path::Path;

use contagion_core::calibration::{CalibrationTargets, Observable, SearchBox, Target};
use contagion_core::integrator::CONTAGION_FREE_THRESHOLD;
use contagion_core::model::{InitialConditions, Parameters};
use contagion_core::ocp::{DirectOptions, FbsmOptions};

/// A structured configuration failure: where and what.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { line: Some(line), field: field.into(), message: message.into() }
    }

    fn global(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { line: None, field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}, {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Which solver(s) an optimize/sweep run should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Fbsm,
    Direct,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSettings {
    pub horizon: f64,
    /// Integrator steps; defaults to ~0.01-day steps when absent.
    pub steps: Option<usize>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSettings {
    pub horizon: f64,
    pub weight: f64,
    pub control_cells: usize,
    pub solver: SolverKind,
    pub fbsm: FbsmOptions,
    pub direct: DirectOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateSettings {
    pub targets: CalibrationTargets,
    pub search: SearchBox,
}

/// A fully validated scenario: explicit rates or calibration targets (exactly
/// one of the two), initial conditions consistent with the population, and
/// optional optimization and sweep blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub population: f64,
    pub explicit_params: Option<Parameters>,
    pub initial: InitialConditions,
    pub simulate: SimulateSettings,
    pub optimize: Option<OptimizeSettings>,
    pub calibrate: Option<CalibrateSettings>,
    pub sweep_weights: Option<Vec<f64>>,
    /// Non-fatal notices (e.g. a weak susceptible-dominance ratio).
    pub warnings: Vec<String>,
}

/// Reads and validates a scenario file. The scenario name defaults to the
/// file stem when the config does not set one.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::global("config", format!("cannot read {}: {e}", path.display()))
    })?;
    let default_name =
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into());
    parse_config(&text, &default_name)
}

const SECTIONS: [&str; 6] = ["model", "initial", "simulate", "optimize", "calibrate", "sweep"];

struct Entry {
    line: usize,
    key: String,
    value: String,
}

struct Section {
    entries: Vec<Entry>,
    taken: Vec<bool>,
    name: &'static str,
}

impl Section {
    fn new(name: &'static str) -> Self {
        Self { entries: Vec::new(), taken: Vec::new(), name }
    }

    fn push(&mut self, e: Entry) {
        self.entries.push(e);
        self.taken.push(false);
    }

    /// Single-valued key; duplicate occurrences are an error.
    fn take(&mut self, key: &str) -> Result<Option<(usize, String)>, ConfigError> {
        let hits: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.key == key)
            .map(|(i, _)| i)
            .collect();
        if hits.len() > 1 {
            let e = &self.entries[hits[1]];
            return Err(ConfigError::at(
                e.line,
                format!("[{}].{}", self.name, key),
                "duplicate key",
            ));
        }
        Ok(hits.first().map(|&i| {
            self.taken[i] = true;
            (self.entries[i].line, self.entries[i].value.clone())
        }))
    }

    /// Repeatable key, in file order.
    fn take_all(&mut self, key: &str) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for i in 0..self.entries.len() {
            if self.entries[i].key == key {
                self.taken[i] = true;
                out.push((self.entries[i].line, self.entries[i].value.clone()));
            }
        }
        out
    }

    /// Every key must have been consumed; the first leftover is an error.
    fn finish(&self) -> Result<(), ConfigError> {
        for (i, e) in self.entries.iter().enumerate() {
            if !self.taken[i] {
                return Err(ConfigError::at(
                    e.line,
                    format!("[{}].{}", self.name, e.key),
                    "unknown key",
                ));
            }
        }
        Ok(())
    }

    fn f64(&mut self, key: &str) -> Result<Option<(usize, f64)>, ConfigError> {
        match self.take(key)? {
            None => Ok(None),
            Some((line, raw)) => {
                let v = raw.parse::<f64>().map_err(|_| {
                    ConfigError::at(
                        line,
                        format!("[{}].{}", self.name, key),
                        format!("expected a number, got '{raw}'"),
                    )
                })?;
                if !v.is_finite() {
                    return Err(ConfigError::at(
                        line,
                        format!("[{}].{}", self.name, key),
                        "value must be finite",
                    ));
                }
                Ok(Some((line, v)))
            }
        }
    }

    fn f64_required(&mut self, key: &str) -> Result<(usize, f64), ConfigError> {
        self.f64(key)?.ok_or_else(|| {
            ConfigError::global(format!("[{}].{}", self.name, key), "required key missing")
        })
    }

    fn usize_key(&mut self, key: &str) -> Result<Option<(usize, usize)>, ConfigError> {
        match self.take(key)? {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse::<usize>()
                .map(|v| Some((line, v)))
                .map_err(|_| {
                    ConfigError::at(
                        line,
                        format!("[{}].{}", self.name, key),
                        format!("expected a non-negative integer, got '{raw}'"),
                    )
                }),
        }
    }
}

/// Parses and validates config text. Exposed separately from [`load_config`]
/// so tests can exercise the grammar without touching the filesystem.
pub fn parse_config(text: &str, default_name: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut sections: Vec<Section> = SECTIONS.iter().map(|n| Section::new(n)).collect();
    let mut top_name: Option<(usize, String)> = None;
    let mut current: Option<usize> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner.strip_suffix(']').ok_or_else(|| {
                ConfigError::at(lineno, "section", format!("malformed section header '{line}'"))
            })?;
            let pos = SECTIONS.iter().position(|s| *s == name).ok_or_else(|| {
                ConfigError::at(lineno, "section", format!("unknown section '[{name}]'"))
            })?;
            current = Some(pos);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::at(lineno, "syntax", format!("expected 'key = value', got '{line}'"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        match current {
            None => {
                if key == "name" {
                    if top_name.is_some() {
                        return Err(ConfigError::at(lineno, "name", "duplicate key"));
                    }
                    top_name = Some((lineno, value));
                } else {
                    return Err(ConfigError::at(
                        lineno,
                        key.clone(),
                        "unknown key outside any section (only 'name' may appear here)",
                    ));
                }
            }
            Some(pos) => sections[pos].push(Entry { line: lineno, key, value }),
        }
    }

    let [mut model, mut initial, mut simulate, mut optimize, mut calibrate, mut sweep]: [Section;
        6] = sections.try_into().ok().expect("six sections");

    let mut warnings = Vec::new();

    // [model]
    let (_, population) = model.f64_required("population")?;
    if population <= 0.0 {
        return Err(ConfigError::global("[model].population", "must be > 0"));
    }
    let beta = model.f64("beta")?;
    let gamma = model.f64("gamma")?;
    model.finish()?;
    let explicit_params = match (beta, gamma) {
        (Some((bl, b)), Some((_, g))) => Some(
            Parameters::new(b, g, population)
                .map_err(|e| ConfigError::at(bl, "[model].beta/gamma", e.to_string()))?,
        ),
        (None, None) => None,
        (Some((line, _)), None) => {
            return Err(ConfigError::at(line, "[model].gamma", "beta given without gamma"));
        }
        (None, Some((line, _))) => {
            return Err(ConfigError::at(line, "[model].beta", "gamma given without beta"));
        }
    };

    // [initial]
    let (_, s0) = initial.f64_required("s0")?;
    let (i0_line, i0) = initial.f64_required("i0")?;
    let (r0_line, r0) = initial.f64_required("r0")?;
    initial.finish()?;
    if i0 <= 0.0 {
        return Err(ConfigError::at(
            i0_line,
            "[initial].i0",
            "must be > 0 (at least one bank initially infected)",
        ));
    }
    if r0 != 0.0 {
        return Err(ConfigError::at(
            r0_line,
            "[initial].r0",
            "must be 0 (no bank starts recovered)",
        ));
    }
    let ic = InitialConditions::new(s0, i0, r0)
        .map_err(|e| ConfigError::global("[initial]", e.to_string()))?;
    ic.consistent_with(population)
        .map_err(|e| ConfigError::global("[initial]", e.to_string()))?;
    if let Some(w) = ic.dominance_warning() {
        warnings.push(format!("[initial]: {w}"));
    }

    // [simulate]
    let (_, sim_horizon) = simulate.f64_required("horizon")?;
    if sim_horizon <= 0.0 {
        return Err(ConfigError::global("[simulate].horizon", "must be > 0"));
    }
    let steps = simulate.usize_key("steps")?.map(|(_, v)| v);
    if steps == Some(0) {
        return Err(ConfigError::global("[simulate].steps", "must be >= 1"));
    }
    let threshold = match simulate.f64("threshold")? {
        Some((line, v)) if v <= 0.0 => {
            return Err(ConfigError::at(line, "[simulate].threshold", "must be > 0"));
        }
        Some((_, v)) => v,
        None => CONTAGION_FREE_THRESHOLD,
    };
    simulate.finish()?;
    let simulate = SimulateSettings { horizon: sim_horizon, steps, threshold };

    // [optimize]
    let optimize = parse_optimize(&mut optimize, sim_horizon)?;

    // [calibrate]
    let calibrate = parse_calibrate(&mut calibrate, population)?;

    match (&explicit_params, &calibrate) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::global(
                "[model]/[calibrate]",
                "give either explicit beta/gamma or calibration targets, not both",
            ));
        }
        (None, None) => {
            return Err(ConfigError::global(
                "[model]/[calibrate]",
                "one of explicit beta/gamma or a [calibrate] section is required",
            ));
        }
        _ => {}
    }

    // [sweep]
    let sweep_weights = match sweep.take("weights")? {
        None => None,
        Some((line, raw)) => {
            let mut ws = Vec::new();
            for tok in raw.split([' ', ',']).filter(|t| !t.is_empty()) {
                let w = tok.parse::<f64>().map_err(|_| {
                    ConfigError::at(
                        line,
                        "[sweep].weights",
                        format!("expected numbers, got '{tok}'"),
                    )
                })?;
                if !w.is_finite() || w <= 0.0 {
                    return Err(ConfigError::at(line, "[sweep].weights", "weights must be > 0"));
                }
                ws.push(w);
            }
            if ws.is_empty() {
                return Err(ConfigError::at(line, "[sweep].weights", "needs at least one weight"));
            }
            Some(ws)
        }
    };
    sweep.finish()?;

    let name = top_name.map(|(_, n)| n).unwrap_or_else(|| default_name.to_string());
    if name.is_empty() {
        return Err(ConfigError::global("name", "scenario name must not be empty"));
    }

    Ok(ScenarioConfig {
        name,
        population,
        explicit_params,
        initial: ic,
        simulate,
        optimize,
        calibrate,
        sweep_weights,
        warnings,
    })
}

fn parse_optimize(
    section: &mut Section,
    default_horizon: f64,
) -> Result<Option<OptimizeSettings>, ConfigError> {
    if section.entries.is_empty() {
        return Ok(None);
    }
    let enabled = match section.take("enabled")? {
        None => true,
        Some((line, raw)) => raw.parse::<bool>().map_err(|_| {
            ConfigError::at(line, "[optimize].enabled", format!("expected true/false, got '{raw}'"))
        })?,
    };
    let horizon = match section.f64("horizon")? {
        Some((line, v)) if v <= 0.0 => {
            return Err(ConfigError::at(line, "[optimize].horizon", "must be > 0"));
        }
        Some((_, v)) => v,
        None => default_horizon,
    };
    let weight = match section.f64("weight")? {
        Some((line, v)) if v <= 0.0 => {
            return Err(ConfigError::at(line, "[optimize].weight", "must be > 0"));
        }
        Some((_, v)) => v,
        None => contagion_core::ocp::DEFAULT_WEIGHT,
    };
    let control_cells = match section.usize_key("control_cells")? {
        Some((line, 0)) => {
            return Err(ConfigError::at(line, "[optimize].control_cells", "must be >= 1"));
        }
        Some((_, v)) => v,
        None => contagion_core::ocp::DEFAULT_CONTROL_CELLS,
    };
    let solver = match section.take("solver")? {
        None => SolverKind::Both,
        Some((line, raw)) => match raw.as_str() {
            "fbsm" => SolverKind::Fbsm,
            "direct" => SolverKind::Direct,
            "both" => SolverKind::Both,
            other => {
                return Err(ConfigError::at(
                    line,
                    "[optimize].solver",
                    format!("expected fbsm|direct|both, got '{other}'"),
                ));
            }
        },
    };

    let mut fbsm = FbsmOptions::default();
    if let Some((line, v)) = section.f64("fbsm_tol")? {
        if v <= 0.0 {
            return Err(ConfigError::at(line, "[optimize].fbsm_tol", "must be > 0"));
        }
        fbsm.tol = v;
    }
    if let Some((_, v)) = section.usize_key("fbsm_max_iter")? {
        fbsm.max_iter = v;
    }
    if let Some((line, v)) = section.f64("fbsm_relaxation")? {
        if !(0.0 < v && v <= 1.0) {
            return Err(ConfigError::at(line, "[optimize].fbsm_relaxation", "must be in (0, 1]"));
        }
        fbsm.relaxation = v;
    }
    let mut direct = DirectOptions::default();
    if let Some((line, v)) = section.f64("direct_tol")? {
        if v <= 0.0 {
            return Err(ConfigError::at(line, "[optimize].direct_tol", "must be > 0"));
        }
        direct.tol = v;
    }
    if let Some((_, v)) = section.usize_key("direct_max_iter")? {
        direct.max_iter = v;
    }
    section.finish()?;

    if !enabled {
        return Ok(None);
    }
    Ok(Some(OptimizeSettings { horizon, weight, control_cells, solver, fbsm, direct }))
}

fn parse_calibrate(
    section: &mut Section,
    population: f64,
) -> Result<Option<CalibrateSettings>, ConfigError> {
    if section.entries.is_empty() {
        return Ok(None);
    }
    let (_, horizon) = section.f64_required("horizon")?;
    let raw_targets = section.take_all("target");
    if raw_targets.is_empty() {
        return Err(ConfigError::global(
            "[calibrate].target",
            "at least one target line is required",
        ));
    }
    let mut targets = Vec::new();
    for (line, raw) in raw_targets {
        targets.push(parse_target(line, &raw)?);
    }

    let mut search = SearchBox::default();
    if let Some((_, v)) = section.f64("beta_min")? {
        search.beta.0 = v;
    }
    if let Some((_, v)) = section.f64("beta_max")? {
        search.beta.1 = v;
    }
    if let Some((_, v)) = section.f64("gamma_min")? {
        search.gamma.0 = v;
    }
    if let Some((_, v)) = section.f64("gamma_max")? {
        search.gamma.1 = v;
    }
    section.finish()?;

    let targets = CalibrationTargets::new(targets, horizon, population)
        .map_err(|e| ConfigError::global("[calibrate]", e.to_string()))?;
    Ok(Some(CalibrateSettings { targets, search }))
}

/// Grammar: `<observable> [day] <equals|at_most> <value>`, where
/// `contagion_free` takes no day.
fn parse_target(line: usize, raw: &str) -> Result<Target, ConfigError> {
    let field = "[calibrate].target";
    let toks: Vec<&str> = raw.split_whitespace().collect();
    let usage = "expected '<infected|susceptible|recovered> <day> <equals|at_most> <value>' or 'contagion_free <equals|at_most> <day>'";
    let comparator = |tok: &str| match tok {
        "equals" => Ok(contagion_core::calibration::Comparator::Equals),
        "at_most" => Ok(contagion_core::calibration::Comparator::AtMost),
        other => Err(ConfigError::at(
            line,
            field,
            format!("unknown comparator '{other}' (expected equals or at_most)"),
        )),
    };
    let number = |tok: &str| {
        tok.parse::<f64>().map_err(|_| {
            ConfigError::at(line, field, format!("expected a number, got '{tok}'"))
        })
    };
    match toks.as_slice() {
        ["contagion_free", cmp, value] => Ok(Target {
            observable: Observable::ContagionFreeTime,
            day: 0.0,
            value: number(value)?,
            comparator: comparator(cmp)?,
        }),
        [obs, day, cmp, value] => {
            let observable = match *obs {
                "infected" => Observable::Infected,
                "susceptible" => Observable::Susceptible,
                "recovered" => Observable::Recovered,
                other => {
                    return Err(ConfigError::at(
                        line,
                        field,
                        format!("unknown observable '{other}'"),
                    ));
                }
            };
            Ok(Target {
                observable,
                day: number(day)?,
                value: number(value)?,
                comparator: comparator(cmp)?,
            })
        }
        _ => Err(ConfigError::at(line, field, usage)),
    }
}
