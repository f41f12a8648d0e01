//! Scenario files: strict TOML with unit-suffixed quantities.

use std::f64::consts::TAU;

use rotmag_core::detection::{ProbeAxis, ProbeGeometry};
use rotmag_core::fourshot::{DetectionOptions, InitialEddy, SimOptions};
use rotmag_core::sensitivity::BoundInputs;
use rotmag_core::spin_sim::HeadingModel;
use rotmag_core::waveform::{BlockSchedule, EddyModel, SwitchScheme};
use rotmag_core::{CellParams, Constants, Experiment, FieldConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::units::{Angle, Field, Freq, Length, Power, Time};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Four-shot blocks with per-block decomposition.
    Panorama,
    /// b_y sweep and fitted-amplitude slope.
    Calibration,
    /// Heading shifts for RF starts along and across the pumped spin.
    DynamicHeading,
    /// Per-shot transient after a single reversal, with a decay fit.
    EddyDecay,
    /// Sine versus cosine switching with the eddy channel on.
    SwitchComparison,
    /// Spectral peak of the phase shift with both manifolds populated.
    HyperfineBeat,
    /// Fictitious field against probe tilt.
    ProbeHeading,
    /// Closed-form systematics budget.
    Budget,
    /// Sensitivity bounds.
    Sensitivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    /// Leading field; give this or `b_tot`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_z: Option<Field>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_tot: Option<Field>,
    pub b_m: Field,
    /// Cyclic rotation frequency.
    pub f_m: Freq,
    #[serde(default = "zero_field")]
    pub b_x_res: Field,
    #[serde(default = "zero_field")]
    pub b_y_res: Field,
}

fn zero_field() -> Field {
    Field(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellSection {
    pub t2: Time,
    pub polarization: f64,
    pub weight_f1: f64,
    pub pump_direction: [f64; 3],
    /// Angle between the pumped spin and the plane perpendicular to the
    /// total field; tilts the pump towards +z.
    pub static_heading_angle: Angle,
}

impl Default for CellSection {
    fn default() -> Self {
        CellSection { t2: Time(3e-3), polarization: 1.0, weight_f1: 0.0, pump_direction: [0.0, -1.0, 0.0], static_heading_angle: Angle(0.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub alpha: Angle,
    pub gain_k: f64,
    pub axis: ProbeAxis,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { alpha: Angle(0.0), gain_k: 1.0, axis: ProbeAxis::X }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadingSection {
    pub enabled: bool,
    /// Overrides the value implied by the polarization and total field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_hm: Option<Field>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EddySection {
    pub enabled: bool,
    pub tau: Time,
    pub coupling: f64,
    pub initial: InitialEddy,
}

impl Default for EddySection {
    fn default() -> Self {
        let m = EddyModel::default();
        EddySection { enabled: false, tau: Time(m.tau_e), coupling: m.coupling, initial: InitialEddy::Settled }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub shot_duration: Time,
    pub prepare_fraction: f64,
    pub switch: SwitchScheme,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = BlockSchedule::default();
        ScheduleSection { shot_duration: Time(s.shot_duration), prepare_fraction: s.prepare_fraction, switch: s.switch_scheme }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub threshold: f64,
    pub hysteresis: f64,
    /// Probe photons per second; absent for a noise-free run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_flux: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high_pass: Option<Freq>,
    pub reference_detuning: Field,
    pub steps_per_larmor: f64,
    /// Decay rate of the hyperfine basis in the fit, 1/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hp_damping: Option<f64>,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectionOptions::default();
        DetectionSection {
            threshold: d.threshold,
            hysteresis: d.hysteresis,
            photon_flux: None,
            high_pass: None,
            reference_detuning: Field(0.0),
            steps_per_larmor: SimOptions::default().steps_per_larmor,
            hp_damping: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub b_y: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSweepSection {
    pub alpha: Vec<Angle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Precession period.
    pub delta_t: Time,
    pub t2: Time,
    pub t_meas: Time,
    pub theta: Angle,
    pub f_m: Freq,
    /// Per-period phase noise; give this or the probe power and wavelength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_psi: Option<Angle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_power: Option<Power>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<Length>,
    #[serde(default = "one")]
    pub gain_k: f64,
    /// Monte-Carlo trials of the frequency estimator; 0 skips it.
    #[serde(default)]
    pub monte_carlo_trials: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted path of a scalar key, e.g. `field.b_m`.
    pub param: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsSection {
    /// Per-shot fit table.
    pub shots_csv: bool,
    /// Phase-shift series of every shot.
    pub series: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection { shots_csv: true, series: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_block")]
    pub blocks: usize,
    #[serde(default)]
    pub discard_shots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSection>,
    #[serde(default)]
    pub cell: CellSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub heading: HeadingSection,
    #[serde(default)]
    pub eddy: EddySection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_sweep: Option<ProbeSweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub outputs: OutputsSection,
}

fn one_block() -> usize {
    1
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn from_value(v: toml::Value) -> Result<Self, CliError> {
        let s = Scenario::deserialize(v).map_err(|e| CliError::Config(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn to_value(&self) -> toml::Value {
        toml::Value::try_from(self).expect("scenario serializes to TOML")
    }

    /// Checks that do not need a simulation: required sections per mode and
    /// the core validators.
    fn check(&self) -> Result<(), CliError> {
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(CliError::Config(format!("mode {:?} needs {what}", self.mode))) };
        match self.mode {
            Mode::Sensitivity => need(self.bounds.is_some(), "a [bounds] section")?,
            Mode::HyperfineBeat | Mode::Budget => need(self.field.is_some(), "a [field] section")?,
            _ => {
                need(self.field.is_some(), "a [field] section")?;
                need(self.blocks >= 1, "blocks >= 1")?;
            }
        }
        if self.mode == Mode::Calibration {
            need(self.calibration.as_ref().is_some_and(|c| c.b_y.len() >= 2), "[calibration] with at least two b_y values")?;
        }
        if self.mode == Mode::ProbeHeading {
            need(self.probe_sweep.as_ref().is_some_and(|c| !c.alpha.is_empty()), "[probe_sweep] with alpha values")?;
        }
        if let Some(b) = &self.bounds {
            b.inputs()?.validate().map_err(config)?;
        }
        if self.field.is_some() {
            let e = self.experiment()?;
            if matches!(self.mode, Mode::HyperfineBeat | Mode::Budget) && e.field.b_m == 0.0 {
                return Ok(());
            }
            e.validate().map_err(config)?;
        }
        Ok(())
    }

    pub fn field_config(&self) -> Result<FieldConfig, CliError> {
        let f = self.field.as_ref().ok_or_else(|| CliError::Config("missing [field] section".into()))?;
        let mut cfg = match (f.b_z, f.b_tot) {
            (Some(bz), None) => FieldConfig::canonical(bz.0, f.b_m.0, TAU * f.f_m.0),
            (None, Some(bt)) if bt.0 > f.b_m.0.abs() => FieldConfig::with_total(bt.0, f.b_m.0, TAU * f.f_m.0),
            (None, Some(_)) => return Err(CliError::Config("field.b_tot must exceed |field.b_m|".into())),
            _ => return Err(CliError::Config("give exactly one of field.b_z and field.b_tot".into())),
        };
        cfg.b_x_res = f.b_x_res.0;
        cfg.b_y_res = f.b_y_res.0;
        Ok(cfg)
    }

    /// Pump direction after the static-heading tilt towards +z.
    pub fn pump_direction(&self, cfg: &FieldConfig) -> Result<[f64; 3], CliError> {
        let [x, y, z] = self.cell.pump_direction;
        let beta = self.cell.static_heading_angle.0;
        if beta == 0.0 {
            return Ok([x, y, z]);
        }
        let sin_tilt = beta.sin() / cfg.theta().cos();
        let xy = x.hypot(y);
        if sin_tilt.abs() > 1.0 || xy == 0.0 || z != 0.0 {
            return Err(CliError::Config("static_heading_angle needs a transverse pump_direction and |sin β| <= cos θ".into()));
        }
        let c = (1.0 - sin_tilt * sin_tilt).sqrt();
        Ok([c * x / xy, c * y / xy, sin_tilt])
    }

    pub fn experiment(&self) -> Result<Experiment, CliError> {
        let field = self.field_config()?;
        let mut e = Experiment::ideal(field);
        e.consts = Constants::default();
        e.cell = CellParams {
            t2: self.cell.t2.0,
            polarization: self.cell.polarization,
            weight_f1: self.cell.weight_f1,
            pump_direction: self.pump_direction(&field)?,
        };
        e.probe = ProbeGeometry { alpha: self.probe.alpha.0, gain_k: self.probe.gain_k, axis: self.probe.axis };
        e.heading = if self.heading.enabled {
            match self.heading.b_hm {
                Some(b) => HeadingModel { b_hm: b.0, enabled: true },
                None => HeadingModel::from_cell(&e.cell, field.b_tot(), &e.consts),
            }
        } else {
            HeadingModel::off()
        };
        e.eddy = EddyModel { tau_e: self.eddy.tau.0, coupling: self.eddy.coupling, enabled: self.eddy.enabled };
        e.initial_eddy = self.eddy.initial;
        e.schedule = BlockSchedule {
            shot_duration: self.schedule.shot_duration.0,
            prepare_fraction: self.schedule.prepare_fraction,
            switch_scheme: self.schedule.switch,
            ..BlockSchedule::default()
        };
        let d = &self.detection;
        e.detection = DetectionOptions {
            threshold: d.threshold,
            hysteresis: d.hysteresis,
            photon_flux: d.photon_flux,
            high_pass_hz: d.high_pass.map(|f| f.0),
            reference_detuning_nt: d.reference_detuning.0,
        };
        e.sim = SimOptions { steps_per_larmor: d.steps_per_larmor, hp_damping: d.hp_damping, keep_series: self.outputs.series };
        Ok(e)
    }

    /// SHA-256 of the canonical form; name, description, seed and sweep
    /// settings are not part of the physics and are left out.
    pub fn config_hash(&self) -> String {
        let mut s = self.clone();
        s.name.clear();
        s.description.clear();
        s.seed = 0;
        s.sweep = None;
        let bytes = serde_json::to_vec(&s).expect("scenario serializes to JSON");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl BoundsSection {
    pub fn inputs(&self) -> Result<BoundInputs, CliError> {
        let m = (self.t_meas.0 / self.delta_t.0).round() as u64;
        match (self.sigma_psi, self.probe_power, self.wavelength) {
            (Some(s), None, None) => {
                let mut b = BoundInputs::from_phase_noise(s.0, self.delta_t.0, self.t2.0, self.t_meas.0, TAU * self.f_m.0, self.theta.0);
                b.gain_k = self.gain_k;
                b.rho_theta *= self.gain_k;
                Ok(b)
            }
            (None, Some(p), Some(l)) => {
                let phi = rotmag_core::sensitivity::photon_flux(p.0, l.0);
                Ok(BoundInputs {
                    rho_theta: (0.5 / phi).sqrt(),
                    gain_k: self.gain_k,
                    t2: self.t2.0,
                    delta_t: self.delta_t.0,
                    m_periods: m,
                    omega_m: TAU * self.f_m.0,
                    theta: self.theta.0,
                })
            }
            _ => Err(CliError::Config("bounds: give sigma_psi, or probe_power together with wavelength".into())),
        }
    }
}

fn config(e: rotmag_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Replace the scalar at a dotted path. The target must be absent or a
/// scalar; its parent must be a table.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), CliError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("invalid parameter path {path:?}")));
    }
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut node = root;
    for k in parents {
        node = node
            .get_mut(*k)
            .filter(|v| v.is_table())
            .ok_or_else(|| CliError::Config(format!("parameter path {path:?}: {k:?} is not a section")))?;
    }
    let table = node.as_table_mut().ok_or_else(|| CliError::Config(format!("parameter path {path:?} has no parent section")))?;
    if let Some(old) = table.get(*last) {
        if old.is_table() || old.is_array() {
            return Err(CliError::Config(format!("parameter path {path:?} is not a scalar")));
        }
    }
    table.insert((*last).to_string(), value);
    Ok(())
}

/// A command-line sweep value: integer, float, boolean, or string.
pub fn parse_cli_value(s: &str) -> toml::Value {
    let s = s.trim();
    if let Ok(i) = s.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = s.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = s.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(s.to_string())
    }
}
