//! Scenario configuration: a TOML file with the sections [system],
//! [susceptibility], [coupling], [drive], [integration] and [diagnostics].
//!
//! Every section except [susceptibility] may be omitted; missing keys take
//! the defaults below. Unknown keys are rejected.

use std::fmt;
use std::str::FromStr;

use serde::Deserialize;
use tdd_core::coupling::TAIL_TOL;
use tdd_core::drive::{Drive, GaussianPulse, ModulatedCarrier, ZeroDrive};
use tdd_core::extension::StepScheme;
use tdd_core::susceptibility::{SusceptibilityModel, PDC_TOL};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    PdcCheck,
    Coupling,
    Simulate,
    Compare,
    Brillouin,
    #[serde(rename = "maxwell1d")]
    Maxwell1d,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::PdcCheck,
        Command::Coupling,
        Command::Simulate,
        Command::Compare,
        Command::Brillouin,
        Command::Maxwell1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::PdcCheck => "pdc-check",
            Command::Coupling => "coupling",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Brillouin => "brillouin",
            Command::Maxwell1d => "maxwell1d",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::invalid("command", format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// overridden by `--command`
    pub command: Option<Command>,
    #[serde(default)]
    pub system: SystemConfig,
    pub susceptibility: Option<ModelConfig>,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    /// m q̈ = −kq + friction; the susceptibility acts on the p/√m stress
    Oscillator(OscillatorConfig),
    /// H = p²/2m + kq²/2 + c₄q⁴/4 with Markov friction
    QuarticOscillator(QuarticConfig),
    /// 1D Maxwell line with an optional dispersive slab
    #[serde(rename = "maxwell1d")]
    Maxwell1d(MaxwellConfig),
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig::Oscillator(OscillatorConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillatorConfig {
    pub mass: f64,
    pub stiffness: f64,
    pub q0: f64,
    pub v0: f64,
}

impl Default for OscillatorConfig {
    fn default() -> Self {
        OscillatorConfig { mass: 1.0, stiffness: 1.0, q0: 0.0, v0: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuarticConfig {
    pub mass: f64,
    pub stiffness: f64,
    pub quartic: f64,
    pub q0: f64,
    pub v0: f64,
}

impl Default for QuarticConfig {
    fn default() -> Self {
        QuarticConfig { mass: 1.0, stiffness: 0.0, quartic: 1.0, q0: 0.0, v0: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxwellConfig {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
    /// background permittivity and permeability
    pub eps: f64,
    pub mu: f64,
    /// position of the sheet current
    pub source_x: f64,
    /// slab extent; the susceptibility acts on nodes inside it
    pub slab_lo: Option<f64>,
    pub slab_hi: Option<f64>,
}

impl Default for MaxwellConfig {
    fn default() -> Self {
        MaxwellConfig {
            x0: -50.0,
            dx: 0.05,
            n: 2201,
            eps: 1.0,
            mu: 1.0,
            source_x: 0.0,
            slab_lo: None,
            slab_hi: None,
        }
    }
}

/// Scalar susceptibility models.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Zero,
    Markov { gamma: f64 },
    Debye { delta: f64, tau: f64 },
    Lorentz { strength: f64, omega0: f64, damping: f64 },
    PowerLaw { alpha: f64, scale: f64 },
}

impl ModelConfig {
    pub fn build(&self) -> Result<SusceptibilityModel, CliError> {
        let key = |k: &str| format!("susceptibility.{k}");
        let m = match *self {
            ModelConfig::Zero => SusceptibilityModel::zero(1),
            ModelConfig::Markov { gamma } => {
                finite(&key("gamma"), gamma)?;
                SusceptibilityModel::scalar_markov(gamma)
            }
            ModelConfig::Debye { delta, tau } => {
                finite(&key("delta"), delta)?;
                positive(&key("tau"), tau)?;
                SusceptibilityModel::scalar_debye(delta, tau)?
            }
            ModelConfig::Lorentz { strength, omega0, damping } => {
                finite(&key("strength"), strength)?;
                positive(&key("omega0"), omega0)?;
                nonnegative(&key("damping"), damping)?;
                SusceptibilityModel::scalar_lorentz(strength, omega0, damping)?
            }
            ModelConfig::PowerLaw { alpha, scale } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(CliError::invalid(key("alpha"), "must lie in (0, 1)"));
                }
                finite(&key("scale"), scale)?;
                SusceptibilityModel::scalar_power_law(alpha, scale)?
            }
        };
        Ok(m)
    }

    /// Markov rate, if this is a Markov (or zero) model.
    pub fn markov_gamma(&self) -> Option<f64> {
        match *self {
            ModelConfig::Zero => Some(0.0),
            ModelConfig::Markov { gamma } => Some(gamma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Spectral,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    pub dk: f64,
    pub kmax: f64,
    pub tail_tol: f64,
    pub representation: Representation,
    /// spatial string spacing
    pub ds: f64,
    /// spatial string half-length; defaults to t_end + 60
    pub extent: Option<f64>,
    pub lattice_matched: bool,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            dk: 0.05,
            kmax: 40.0,
            tail_tol: TAIL_TOL,
            representation: Representation::Spectral,
            ds: 0.05,
            extent: None,
            lattice_matched: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriveConfig {
    #[default]
    Zero,
    GaussianPulse { t0: f64, width: f64, amplitude: Vec<f64> },
    ModulatedCarrier { omega: f64, t0: f64, width: f64, amplitude: Vec<f64> },
}

/// A drive built from the config, dispatched statically.
#[derive(Debug, Clone, PartialEq)]
pub enum DriveSignal {
    Zero,
    Pulse(GaussianPulse),
    Carrier(ModulatedCarrier),
}

impl Drive for DriveSignal {
    fn force(&self, t: f64, out: &mut [f64]) {
        match self {
            DriveSignal::Zero => ZeroDrive.force(t, out),
            DriveSignal::Pulse(p) => p.force(t, out),
            DriveSignal::Carrier(c) => c.force(t, out),
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            DriveSignal::Zero => ZeroDrive.support(),
            DriveSignal::Pulse(p) => p.support(),
            DriveSignal::Carrier(c) => c.support(),
        }
    }
}

impl DriveSignal {
    /// Highest angular frequency carried with significant weight.
    pub fn omega_max(&self) -> f64 {
        match self {
            DriveSignal::Zero => 0.0,
            DriveSignal::Pulse(p) => p.omega_max(),
            DriveSignal::Carrier(c) => c.omega_max(),
        }
    }
}

impl DriveConfig {
    /// Build a drive whose amplitude has `dim` components.
    pub fn build(&self, dim: usize) -> Result<DriveSignal, CliError> {
        let check = |t0: f64, width: f64, amplitude: &[f64]| -> Result<(), CliError> {
            finite("drive.t0", t0)?;
            positive("drive.width", width)?;
            if amplitude.len() != dim {
                return Err(CliError::invalid(
                    "drive.amplitude",
                    format!("expected {dim} components, found {}", amplitude.len()),
                ));
            }
            if amplitude.iter().any(|a| !a.is_finite()) {
                return Err(CliError::invalid("drive.amplitude", "must be finite"));
            }
            Ok(())
        };
        let d = match self {
            DriveConfig::Zero => DriveSignal::Zero,
            DriveConfig::GaussianPulse { t0, width, amplitude } => {
                check(*t0, *width, amplitude)?;
                DriveSignal::Pulse(GaussianPulse { t0: *t0, width: *width, amplitude: amplitude.clone() })
            }
            DriveConfig::ModulatedCarrier { omega, t0, width, amplitude } => {
                check(*t0, *width, amplitude)?;
                positive("drive.omega", *omega)?;
                DriveSignal::Carrier(ModulatedCarrier {
                    omega: *omega,
                    t0: *t0,
                    width: *width,
                    amplitude: amplitude.clone(),
                })
            }
        };
        if d.support().0 < 0.0 {
            return Err(CliError::invalid("drive.t0", "drive must vanish for t < 0 (t0 >= 6 width)"));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Midpoint,
    ExponentialMidpoint,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_end: f64,
    /// record every n-th step
    pub sample_every: usize,
    pub scheme: Scheme,
    /// step of the reduced reference solver; must divide dt
    pub oracle_dt: Option<f64>,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig { dt: 0.01, t_end: 50.0, sample_every: 1, scheme: Scheme::Midpoint, oracle_dt: None }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        positive("integration.dt", self.dt)?;
        positive("integration.t_end", self.t_end)?;
        if self.sample_every == 0 {
            return Err(CliError::invalid("integration.sample_every", "must be at least 1"));
        }
        if let Some(o) = self.oracle_dt {
            positive("integration.oracle_dt", o)?;
            let r = self.dt / o;
            if r < 1.0 - 1e-9 || (r - r.round()).abs() > 1e-6 {
                return Err(CliError::invalid("integration.oracle_dt", "must divide integration.dt"));
            }
        }
        Ok(())
    }

    pub fn step_scheme(&self) -> StepScheme {
        match self.scheme {
            Scheme::Midpoint => StepScheme::ImplicitMidpoint,
            Scheme::ExponentialMidpoint => StepScheme::ExponentialMidpoint,
        }
    }

    /// Reference-solver refinement factor dt / oracle_dt.
    pub fn oracle_ratio(&self) -> usize {
        self.oracle_dt.map_or(1, |o| (self.dt / o).round() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// PDC scan over ω ∈ [−omega_max, omega_max]
    pub omega_max: f64,
    pub omega_points: usize,
    pub eta: Vec<f64>,
    pub pdc_tol: f64,
    /// times at which the hidden-string profile is checked; defaults to t_end
    pub profile_times: Option<Vec<f64>>,
    pub profile_ds: f64,
    /// interior window of the Brillouin comparison, as a fraction of the peak envelope
    pub envelope_floor: f64,
    /// averaging width; defaults to δ^{−1/4}/ω
    pub sigma: Option<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            omega_max: 10.0,
            omega_points: 401,
            eta: vec![0.0, 0.05, 0.2, 1.0, 3.0],
            pdc_tol: PDC_TOL,
            profile_times: None,
            profile_ds: 0.01,
            envelope_floor: 0.5,
            sigma: None,
        }
    }
}

impl DiagnosticsConfig {
    pub fn omega_grid(&self) -> Result<Vec<f64>, CliError> {
        positive("diagnostics.omega_max", self.omega_max)?;
        if self.omega_points < 2 {
            return Err(CliError::invalid("diagnostics.omega_points", "must be at least 2"));
        }
        let n = self.omega_points - 1;
        Ok((0..=n).map(|i| self.omega_max * (2.0 * i as f64 / n as f64 - 1.0)).collect())
    }

    pub fn eta_grid(&self) -> Result<Vec<f64>, CliError> {
        if self.eta.is_empty() || self.eta.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(CliError::invalid("diagnostics.eta", "must be a nonempty list of nonnegative values"));
        }
        Ok(self.eta.clone())
    }
}

impl Config {
    /// Parse a TOML document; errors name the offending key.
    pub fn parse(src: &str) -> Result<Config, CliError> {
        toml::from_str(src).map_err(|e| {
            let key = offending_key(src, e.message(), e.span());
            CliError::invalid(key, e.message().trim().to_string())
        })
    }

    pub fn susceptibility(&self) -> Result<&ModelConfig, CliError> {
        self.susceptibility
            .as_ref()
            .ok_or_else(|| CliError::invalid("susceptibility", "section is required by this command"))
    }
}

/// Dotted path of the key a deserialization error points at.
fn offending_key(src: &str, message: &str, span: Option<std::ops::Range<usize>>) -> String {
    let start = span.map_or(0, |s| s.start.min(src.len()));
    let before = &src[..start];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line_end = src[line_start..].find('\n').map_or(src.len(), |i| line_start + i);
    let line = src[line_start..line_end].trim();
    // nearest section header at or above the error
    let section = src[..line_end]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    let named = ["unknown field `", "missing field `"]
        .iter()
        .find_map(|p| message.find(p).map(|i| &message[i + p.len()..]))
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string);
    let field = named.or_else(|| {
        let k = line.split('=').next().unwrap_or("").trim();
        (!k.is_empty() && !line.starts_with('[')).then(|| k.to_string())
    });
    match (section, field) {
        (Some(s), Some(f)) => format!("{s}.{f}"),
        (Some(s), None) => s,
        (None, Some(f)) => f,
        (None, None) => "config".to_string(),
    }
}

pub(crate) fn finite(key: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CliError::invalid(key, "must be finite"))
    }
}

pub(crate) fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::invalid(key, "must be positive"))
    }
}

pub(crate) fn nonnegative(key: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::invalid(key, "must be nonnegative"))
    }
}
