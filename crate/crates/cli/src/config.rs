//! Run configuration: a TOML file with the sections `[system]`,
//! `[integrator]`, `[control]`, `[initial]`, `[experiment]` and `[output]`.
//! Every section and key is optional; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use phdae::pendulum::{lift_momentum, HANGING};
use phdae::system::residuals;
use phdae::{DampingGain, DoublePendulum, Matrix, NewtonConfig, PendulumParams, State, Vector};
use serde::Deserialize;
use toml::Spanned;

use crate::tables::read_commands;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error at line {line}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    OrderStudy,
    EnergyStudy,
    SymmetryCheck,
    DissipationCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::OrderStudy => "order_study",
            Experiment::EnergyStudy => "energy_study",
            Experiment::SymmetryCheck => "symmetry_check",
            Experiment::DissipationCheck => "dissipation_check",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Experiment::Simulate,
            Experiment::OrderStudy,
            Experiment::EnergyStudy,
            Experiment::SymmetryCheck,
            Experiment::DissipationCheck,
        ]
        .into_iter()
        .find(|e| e.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Zero,
    Damping(DampingGain),
    /// Commands read from a file, one row per sample.
    OpenLoop {
        path: PathBuf,
        rows: Vec<Vector>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    Rk4,
    /// The method itself at one eighth of the smallest step.
    SelfRefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: PendulumParams,
    pub h: f64,
    pub newton: NewtonConfig,
    pub control: Control,
    pub initial: State,
    /// Chart coordinates of the initial state when it was given that way.
    pub initial_explicit: Option<([f64; 2], [f64; 2])>,
    /// Mode named in the file, if any.
    pub mode: Option<Experiment>,
    pub steps: usize,
    pub horizon: Option<f64>,
    pub h_list: Option<Vec<f64>>,
    pub reference: Reference,
    pub reference_step: f64,
    pub output: PathBuf,
    pub log_every: usize,
    h_line: Option<usize>,
}

impl RunConfig {
    /// Checks that depend on the experiment chosen on the command line.
    pub fn check_mode(&self, mode: Experiment) -> Result<(), ConfigError> {
        if let Some(declared) = self.mode {
            if declared != mode {
                return Err(ConfigError::new(
                    None,
                    format!(
                        "file declares experiment '{}' but '{}' was requested",
                        declared.name(),
                        mode.name()
                    ),
                ));
            }
        }
        if mode != Experiment::SymmetryCheck && self.h <= 0.0 {
            return Err(ConfigError::new(
                self.h_line,
                format!("h must be positive for {}, got {}", mode.name(), self.h),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    system: RawSystem,
    #[serde(default)]
    integrator: RawIntegrator,
    #[serde(default)]
    control: RawControl,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    name: Option<Spanned<String>>,
    l_a: Option<f64>,
    l_b: Option<f64>,
    m_a: Option<f64>,
    m_b: Option<f64>,
    g_bar: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    h: Option<Spanned<f64>>,
    tol: Option<Spanned<f64>>,
    max_iter: Option<Spanned<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawGain {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    mode: Option<Spanned<String>>,
    gain: Option<Spanned<RawGain>>,
    input: Option<Spanned<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    q: Option<Spanned<[f64; 2]>>,
    p_hat: Option<Spanned<[f64; 2]>>,
    r: Option<Spanned<[f64; 4]>>,
    p: Option<Spanned<[f64; 4]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    mode: Option<Spanned<String>>,
    steps: Option<usize>,
    horizon: Option<Spanned<f64>>,
    h_list: Option<Spanned<Vec<f64>>>,
    reference: Option<Spanned<String>>,
    reference_step: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<String>,
    log_every: Option<Spanned<usize>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a configuration. Relative input paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        ConfigError::new(line, e.message().trim().to_string())
    })?;
    let at = |span: std::ops::Range<usize>| Some(line_of(text, span.start));

    if let Some(name) = &raw.system.name {
        if name.get_ref() != "double_pendulum" {
            return Err(ConfigError::new(
                at(name.span()),
                format!(
                    "unknown system '{}', expected 'double_pendulum'",
                    name.get_ref()
                ),
            ));
        }
    }
    let defaults = PendulumParams::default();
    let params = PendulumParams {
        l_a: raw.system.l_a.unwrap_or(defaults.l_a),
        l_b: raw.system.l_b.unwrap_or(defaults.l_b),
        m_a: raw.system.m_a.unwrap_or(defaults.m_a),
        m_b: raw.system.m_b.unwrap_or(defaults.m_b),
        g_bar: raw.system.g_bar.unwrap_or(defaults.g_bar),
    };
    params
        .validate()
        .map_err(|e| ConfigError::new(None, format!("[system]: {e}")))?;

    let (h, h_line) = match &raw.integrator.h {
        Some(h) => (*h.get_ref(), at(h.span())),
        None => (0.01, None),
    };
    if h == 0.0 || !h.is_finite() {
        return Err(ConfigError::new(
            h_line,
            format!("h must be finite and non-zero, got {h}"),
        ));
    }
    let mut newton = NewtonConfig::default();
    if let Some(tol) = &raw.integrator.tol {
        newton.tol = *tol.get_ref();
        if !(newton.tol > 0.0) {
            return Err(ConfigError::new(at(tol.span()), "tol must be positive"));
        }
    }
    if let Some(it) = &raw.integrator.max_iter {
        newton.max_iter = *it.get_ref();
        if newton.max_iter == 0 {
            return Err(ConfigError::new(
                at(it.span()),
                "max_iter must be at least 1",
            ));
        }
    }

    let control = parse_control(&raw.control, base, &at)?;
    let (initial, initial_explicit) = parse_initial(&raw.initial, &params, newton.tol, &at)?;

    let mode = match &raw.experiment.mode {
        Some(m) => Some(Experiment::parse(m.get_ref()).ok_or_else(|| {
            ConfigError::new(
                at(m.span()),
                format!("unknown experiment mode '{}'", m.get_ref()),
            )
        })?),
        None => None,
    };
    let horizon = match &raw.experiment.horizon {
        Some(t) if !(*t.get_ref() > 0.0) => {
            return Err(ConfigError::new(at(t.span()), "horizon must be positive"));
        }
        Some(t) => Some(*t.get_ref()),
        None => None,
    };
    let h_list = match &raw.experiment.h_list {
        Some(list) if list.get_ref().is_empty() || list.get_ref().iter().any(|&v| !(v > 0.0)) => {
            return Err(ConfigError::new(
                at(list.span()),
                "h_list must hold positive step sizes",
            ));
        }
        Some(list) => Some(list.get_ref().clone()),
        None => None,
    };
    let reference = match &raw.experiment.reference {
        None => Reference::Rk4,
        Some(r) => match r.get_ref().as_str() {
            "rk4" => Reference::Rk4,
            "self" => Reference::SelfRefined,
            other => {
                return Err(ConfigError::new(
                    at(r.span()),
                    format!("unknown reference '{other}', expected 'rk4' or 'self'"),
                ))
            }
        },
    };
    let reference_step = match &raw.experiment.reference_step {
        Some(s) if !(*s.get_ref() > 0.0) => {
            return Err(ConfigError::new(
                at(s.span()),
                "reference_step must be positive",
            ));
        }
        Some(s) => *s.get_ref(),
        None => 1e-5,
    };
    let log_every = match &raw.output.log_every {
        Some(l) if *l.get_ref() == 0 => {
            return Err(ConfigError::new(
                at(l.span()),
                "log_every must be at least 1",
            ));
        }
        Some(l) => *l.get_ref(),
        None => 1,
    };

    Ok(RunConfig {
        params,
        h,
        newton,
        control,
        initial,
        initial_explicit,
        mode,
        steps: raw.experiment.steps.unwrap_or(1000),
        horizon,
        h_list,
        reference,
        reference_step,
        output: PathBuf::from(raw.output.path.unwrap_or_else(|| "out".into())),
        log_every,
        h_line,
    })
}

fn parse_control(
    raw: &RawControl,
    base: &Path,
    at: &dyn Fn(std::ops::Range<usize>) -> Option<usize>,
) -> Result<Control, ConfigError> {
    let (mode, mode_line) = match &raw.mode {
        Some(m) => (m.get_ref().as_str(), at(m.span())),
        None if raw.gain.is_some() => ("damping", None),
        None if raw.input.is_some() => ("open_loop", None),
        None => ("zero", None),
    };
    let unused = |key: &str, span: std::ops::Range<usize>| {
        ConfigError::new(
            at(span),
            format!("'{key}' is not used by control mode '{mode}'"),
        )
    };
    match mode {
        "zero" => {
            if let Some(g) = &raw.gain {
                return Err(unused("gain", g.span()));
            }
            if let Some(i) = &raw.input {
                return Err(unused("input", i.span()));
            }
            Ok(Control::Zero)
        }
        "damping" => {
            if let Some(i) = &raw.input {
                return Err(unused("input", i.span()));
            }
            let Some(gain) = &raw.gain else {
                return Err(ConfigError::new(
                    mode_line,
                    "damping control needs a 'gain'",
                ));
            };
            let matrix = match gain.get_ref() {
                RawGain::Scalar(k) => Matrix::identity(2, 2) * *k,
                RawGain::Matrix(rows) => {
                    if rows.len() != 2 || rows.iter().any(|r| r.len() != 2) {
                        return Err(ConfigError::new(at(gain.span()), "gain matrix must be 2x2"));
                    }
                    Matrix::from_fn(2, 2, |i, j| rows[i][j])
                }
            };
            DampingGain::new(matrix)
                .map(Control::Damping)
                .map_err(|e| ConfigError::new(at(gain.span()), e.to_string()))
        }
        "open_loop" => {
            if let Some(g) = &raw.gain {
                return Err(unused("gain", g.span()));
            }
            let Some(input) = &raw.input else {
                return Err(ConfigError::new(
                    mode_line,
                    "open_loop control needs an 'input' file",
                ));
            };
            let path = base.join(input.get_ref());
            let rows = read_commands(&path, 2).map_err(|e| {
                ConfigError::new(at(input.span()), format!("{}: {e}", path.display()))
            })?;
            Ok(Control::OpenLoop { path, rows })
        }
        other => Err(ConfigError::new(
            mode_line,
            format!("unknown control mode '{other}', expected 'zero', 'damping' or 'open_loop'"),
        )),
    }
}

type InitialState = (State, Option<([f64; 2], [f64; 2])>);

fn parse_initial(
    raw: &RawInitial,
    params: &PendulumParams,
    tol: f64,
    at: &dyn Fn(std::ops::Range<usize>) -> Option<usize>,
) -> Result<InitialState, ConfigError> {
    let chart_key = raw
        .q
        .as_ref()
        .map(|v| v.span())
        .or(raw.p_hat.as_ref().map(|v| v.span()));
    let ambient_key = raw
        .r
        .as_ref()
        .map(|v| v.span())
        .or(raw.p.as_ref().map(|v| v.span()));
    if let (Some(_), Some(span)) = (&chart_key, &ambient_key) {
        return Err(ConfigError::new(
            at(span.clone()),
            "initial state given both as (q, p_hat) and as (r, p); use one",
        ));
    }
    if let Some(span) = ambient_key {
        let (Some(r), Some(p)) = (&raw.r, &raw.p) else {
            return Err(ConfigError::new(
                at(span),
                "ambient initial state needs both r and p",
            ));
        };
        let x = State::from_slices(r.get_ref(), p.get_ref());
        let sys =
            DoublePendulum::new(*params).map_err(|e| ConfigError::new(None, e.to_string()))?;
        let res = residuals(&sys, &x);
        if !res.within(tol, tol) {
            return Err(ConfigError::new(
                at(r.span()),
                format!(
                    "initial (r, p) is off the constraint manifold (|g| = {:.3e}, |f| = {:.3e})",
                    res.g, res.f
                ),
            ));
        }
        return Ok((x, None));
    }
    let q = raw.q.as_ref().map(|v| *v.get_ref()).unwrap_or(HANGING);
    let p_hat = raw
        .p_hat
        .as_ref()
        .map(|v| *v.get_ref())
        .unwrap_or([0.0, 0.0]);
    if q.iter().chain(&p_hat).any(|v| !v.is_finite()) {
        return Err(ConfigError::new(
            chart_key.and_then(at),
            "initial state must be finite",
        ));
    }
    let r = phdae::pendulum::embedding(params, q);
    let p = lift_momentum(params, q, p_hat)
        .map_err(|e| ConfigError::new(chart_key.and_then(at), e.to_string()))?;
    Ok((State::new(r, p), Some((q, p_hat))))
}
