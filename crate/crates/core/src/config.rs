//! Strict JSON experiment configuration in laboratory units (Hz, T/m, s),
//! converted to the angular units used by the simulation core.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ion_physics::{SystemParams, ATOMIC_MASS_UNIT};
use crate::noise::{VoltageNoiseParams, VoltageSpectrum};
use crate::propagate::{BellConfig, Method, ModelKind, NoiseSpec};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Params,
    Evolve,
    ErrorScan,
    NoiseCompare,
    HotGate,
    VoltageNoise,
    Fid,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Params => "params",
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::ErrorScan => "error-scan",
            ExperimentKind::NoiseCompare => "noise-compare",
            ExperimentKind::HotGate => "hot-gate",
            ExperimentKind::VoltageNoise => "voltage-noise",
            ExperimentKind::Fid => "fid",
        }
    }
}

/// Either one value for both ions or one per ion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerIon {
    Both(f64),
    Each([f64; 2]),
}

impl PerIon {
    fn pair(self) -> [f64; 2] {
        match self {
            PerIon::Both(v) => [v, v],
            PerIon::Each(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physical {
    /// T/m
    pub gradient: f64,
    pub nu1_hz: f64,
    pub drive_hz: PerIon,
    /// Static field in tesla.
    pub b0: f64,
    pub g_factor: f64,
    pub linewidth_hz: f64,
    pub mass_u: f64,
    pub phase_flip: bool,
}

impl Default for Physical {
    fn default() -> Self {
        Self {
            gradient: 20.0,
            nu1_hz: 140e3,
            drive_hz: PerIon::Both(20e3),
            b0: 7.5e-4,
            g_factor: 2.0,
            linewidth_hz: 19.6e6,
            mass_u: 171.0,
            phase_flip: false,
        }
    }
}

impl Physical {
    pub fn system_params(&self) -> Result<SystemParams> {
        let d = self.drive_hz.pair();
        let mut p = SystemParams::yb171(self.gradient, TWO_PI * self.nu1_hz, 0.0);
        p.drive_rabi = [TWO_PI * d[0], TWO_PI * d[1]];
        p.b0 = self.b0;
        p.g_factor = self.g_factor;
        p.linewidth = TWO_PI * self.linewidth_hz;
        p.ion_mass = self.mass_u * ATOMIC_MASS_UNIT;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Exact,
    Approx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numeric {
    pub model: ModelChoice,
    /// Highest Fock level kept per simulated mode.
    pub fock_cutoffs: Vec<usize>,
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub truncation_tol: Option<f64>,
    /// Overrides the gate time from the coupling closed forms.
    pub gate_time_s: Option<f64>,
    /// End of time series; defaults to 1.4 gate times.
    pub t_end_s: Option<f64>,
    pub n_times: usize,
}

impl Default for Numeric {
    fn default() -> Self {
        Self {
            model: ModelChoice::Exact,
            fock_cutoffs: vec![2, 2],
            method: Method::Auto,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            truncation_tol: Some(1e-6),
            gate_time_s: None,
            t_end_s: None,
            n_times: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub t2_s: Option<f64>,
    pub amplitude_rel: Option<f64>,
    pub amplitude_tau_c_s: f64,
    pub independent_ions: bool,
    pub pulse_rabi_hz: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { t2_s: None, amplitude_rel: None, amplitude_tau_c_s: 0.5e-3, independent_ions: false, pulse_rabi_hz: 50e3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    pub master_seed: u64,
    pub n_realizations: usize,
    pub n_traj: usize,
    pub n_samples: usize,
    pub n_bar: f64,
    pub bath_n_bar: Option<f64>,
    /// quanta per second
    pub heating_rate: f64,
    pub n_max: usize,
    pub stretch_cutoff: Option<usize>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            master_seed: 0,
            n_realizations: 20,
            n_traj: 5,
            n_samples: 8,
            n_bar: 5.0,
            bath_n_bar: None,
            heating_rate: 100.0,
            n_max: 40,
            stretch_cutoff: None,
        }
    }
}

/// A list of values or an evenly spaced (optionally logarithmic) range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range {
        start: f64,
        end: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            Grid::List(ref v) => Ok(v.clone()),
            Grid::Range { start, end, points, log } => {
                if points == 0 {
                    return Err(Error::InvalidParameter("grid needs at least one point".into()));
                }
                if log && !(start > 0.0 && end > 0.0) {
                    return Err(Error::InvalidParameter("logarithmic grid needs positive bounds".into()));
                }
                if points == 1 {
                    return Ok(vec![start]);
                }
                Ok((0..points)
                    .map(|k| {
                        let f = k as f64 / (points - 1) as f64;
                        if log {
                            (start.ln() + f * (end.ln() - start.ln())).exp()
                        } else {
                            start + f * (end - start)
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scan {
    pub drives_hz: Option<Grid>,
    pub nu1_hz: Option<Grid>,
    pub gradients: Option<Grid>,
    pub phase_flip: Vec<bool>,
    /// Which numerical models to run at every grid point besides the closed forms.
    pub models: Vec<ModelChoice>,
    /// Dense drive range used for the oscillation-envelope slope.
    pub envelope_drives_hz: Option<Grid>,
    pub t2_s: Vec<f64>,
    pub n_pulses: Vec<usize>,
    pub amplitude_noise: Vec<bool>,
}

impl Default for Scan {
    fn default() -> Self {
        Self {
            drives_hz: None,
            nu1_hz: None,
            gradients: None,
            phase_flip: vec![false],
            models: vec![ModelChoice::Exact, ModelChoice::Approx],
            envelope_drives_hz: None,
            t2_s: vec![1e-3, 8e-3, 40e-3],
            n_pulses: vec![4, 8, 16, 32, 60],
            amplitude_noise: vec![false, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Voltage {
    pub alpha_z: f64,
    pub distance_m: f64,
    pub spectrum: VoltageSpectrum,
    pub omega_hz: Grid,
    /// Secular frequencies tabulated besides the physical one.
    pub nu_z_hz: Vec<f64>,
}

impl Default for Voltage {
    fn default() -> Self {
        Self {
            alpha_z: 0.1,
            distance_m: 100e-6,
            spectrum: VoltageSpectrum::White { level: 1e-16 },
            omega_hz: Grid::Range { start: 10.0, end: 1e5, points: 41, log: true },
            nu_z_hz: Vec::new(),
        }
    }
}

impl Voltage {
    pub fn params(&self) -> VoltageNoiseParams {
        VoltageNoiseParams::new(self.alpha_z, self.distance_m, self.spectrum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fid {
    pub t2_s: f64,
    /// Dressing Rabi frequency of the driven run.
    pub dressing_hz: f64,
    pub t_end_s: f64,
    pub n_times: usize,
    /// Length of the dressed run in units of the bare one.
    pub dressed_span_factor: f64,
}

impl Default for Fid {
    fn default() -> Self {
        Self { t2_s: 0.5e-3, dressing_hz: 200e3, t_end_s: 1.5e-3, n_times: 16, dressed_span_factor: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub directory: Option<String>,
    pub formats: Vec<String>,
}

impl Default for Output {
    fn default() -> Self {
        Self { directory: None, formats: vec!["csv".into(), "json".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub physical: Physical,
    pub numeric: Numeric,
    pub noise: NoiseSection,
    pub sampling: Sampling,
    pub scan: Scan,
    pub voltage: Voltage,
    pub fid: Fid,
    pub output: Output,
}

/// Parsed configuration with the hash of its canonical form.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

/// Keys sorted, no insignificant whitespace.
pub fn canonical_json(v: &serde_json::Value) -> String {
    // serde_json's map is ordered by key unless `preserve_order` is enabled
    serde_json::to_string(v).expect("JSON values serialise")
}

pub fn config_hash(v: &serde_json::Value) -> String {
    let d = Sha256::digest(canonical_json(v).as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<LoadedConfig> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let config: ExperimentConfig = serde_json::from_value(value.clone())?;
        config.validate()?;
        Ok(LoadedConfig { config, hash: config_hash(&value) })
    }

    pub fn validate(&self) -> Result<()> {
        self.physical.system_params()?;
        if self.numeric.model == ModelChoice::Exact && (self.numeric.fock_cutoffs.is_empty() || self.numeric.fock_cutoffs.len() > 2) {
            return Err(Error::InvalidParameter("exact model needs one or two Fock cutoffs".into()));
        }
        if !(self.numeric.rel_tol > 0.0 && self.numeric.abs_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if let Some(t2) = self.noise.t2_s {
            if !(t2 > 0.0) {
                return Err(Error::InvalidParameter("noise.t2_s must be positive".into()));
            }
        }
        if self.scan.n_pulses.iter().any(|n| n % 4 != 0) {
            return Err(Error::InvalidParameter("scan.n_pulses entries must be multiples of 4".into()));
        }
        if self.numeric.n_times < 2 {
            return Err(Error::InvalidParameter("numeric.n_times must be at least 2".into()));
        }
        Ok(())
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.numeric.model {
            ModelChoice::Exact => ModelKind::Exact { fock_cutoffs: self.numeric.fock_cutoffs.clone() },
            ModelChoice::Approx => ModelKind::Approx,
        }
    }

    /// Gate-run configuration for the given physical parameters.
    pub fn bell_config(&self, params: SystemParams, model: ModelKind, hash: &str) -> BellConfig {
        let mut b = BellConfig::new(params, model);
        b.gate_time = self.numeric.gate_time_s;
        b.phase_flip = self.physical.phase_flip;
        b.noise = NoiseSpec {
            t2: self.noise.t2_s,
            amplitude_rel: self.noise.amplitude_rel,
            amplitude_tau_c: self.noise.amplitude_tau_c_s,
            independent_ions: self.noise.independent_ions,
        };
        b.seed = self.sampling.master_seed;
        b.method = self.numeric.method;
        b.rel_tol = self.numeric.rel_tol;
        b.abs_tol = self.numeric.abs_tol;
        b.truncation_tol = self.numeric.truncation_tol;
        b.config_hash = hash.to_string();
        b
    }
}
