//! Closed-form predictions for each systematic effect.
//!
//! All functions are pure and take the geometry from configuration, never
//! from a simulated state.

use serde::{Deserialize, Serialize};

use crate::model::{CellParams, Constants, FieldConfig, Rotation, ShotPhaseConfig};
use crate::spin_sim::{b_hm, RfStartRelation};
use crate::waveform::EddyModel;

/// Berry's-phase equivalent field ±(1−cos θ)ω_m/γ, nT. Positive for
/// counter-clockwise rotation.
pub fn berry_equivalent_field(cfg: &FieldConfig, consts: &Constants, direction: Rotation) -> f64 {
    let theta = cfg.b_m.atan2(cfg.b_z);
    direction.sign() * (1.0 - theta.cos()) * cfg.omega_m / consts.gamma_angular()
}

/// Small-angle form ±B_m²ω_m/(2B_z²γ), nT.
pub fn berry_small_angle(cfg: &FieldConfig, consts: &Constants, direction: Rotation) -> f64 {
    direction.sign() * cfg.b_m.powi(2) * cfg.omega_m / (2.0 * cfg.b_z.powi(2) * consts.gamma_angular())
}

/// Amplitude of the sin 2ω_m term of the phase shift, −B_m²/(4B_z²ω₀), s.
pub fn second_harmonic_amplitude(cfg: &FieldConfig, consts: &Constants) -> f64 {
    let w0 = cfg.nominal_larmor(consts);
    -cfg.b_m.powi(2) / (4.0 * cfg.b_z.powi(2) * w0)
}

/// B_HM sin β, nT.
pub fn static_heading(b_hm: f64, beta: f64) -> f64 {
    b_hm * beta.sin()
}

/// True when 1/T2 < ω_m ≪ ω₀ (taken as ω_m < ω₀/20).
pub fn is_adiabatic(cfg: &FieldConfig, consts: &Constants, t2: f64) -> bool {
    1.0 / t2 < cfg.omega_m && cfg.omega_m < cfg.nominal_larmor(consts) / 20.0
}

/// Shift of the total-field reading from heading when the spin follows the
/// rotating field, nT. Logs a warning outside the adiabatic regime.
pub fn dynamic_heading(b_hm: f64, theta: f64, rf_start: RfStartRelation, start_sign: f64) -> f64 {
    match rf_start {
        RfStartRelation::Parallel => start_sign.signum() * b_hm * theta.sin(),
        RfStartRelation::Perpendicular => 0.0,
    }
}

/// [`dynamic_heading`] with the adiabatic check against a configuration.
pub fn dynamic_heading_checked(cfg: &FieldConfig, consts: &Constants, t2: f64, b_hm: f64, rf_start: RfStartRelation, start_sign: f64) -> f64 {
    if !is_adiabatic(cfg, consts, t2) {
        log::warn!("dynamic heading oracle used outside 1/T2 < omega_m << omega_0 (omega_m = {:.3e} rad/s)", cfg.omega_m);
    }
    dynamic_heading(b_hm, cfg.theta(), rf_start, start_sign)
}

/// Fictitious field along the probe beam, ∓(ω_m/γ)tan α, nT: negative
/// for counter-clockwise rotation when α > 0.
pub fn probe_heading_field(omega_m: f64, consts: &Constants, alpha: f64, direction: Rotation) -> f64 {
    -direction.sign() * omega_m / consts.gamma_angular() * alpha.tan()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetInputs {
    pub b_z_nt: f64,
    pub b_m_nt: f64,
    pub omega_m: f64,
    pub theta_rad: f64,
    pub polarization: f64,
    pub t2_s: f64,
    pub pump_tilt_rad: f64,
    pub probe_alpha_rad: f64,
    pub eddy_tau_s: f64,
    pub b_hm_nt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotBudget {
    pub shot: u8,
    pub berry_nt: f64,
    pub tau_2nd_s: f64,
    pub static_heading_nt: f64,
    pub dynamic_heading_nt: f64,
    pub probe_heading_nt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystematicsBudget {
    pub inputs: BudgetInputs,
    /// Magnitudes of each effect (predicted column).
    pub berry_nt: f64,
    pub berry_small_angle_nt: f64,
    pub tau_2nd_s: f64,
    pub static_heading_nt: f64,
    pub dynamic_heading_nt: f64,
    pub probe_heading_nt: f64,
    pub eddy_cutoff_hz: f64,
    /// Signed per-shot entries; each four-shot mean is zero except static heading.
    pub shots: Vec<ShotBudget>,
    pub adiabatic: bool,
}

/// Budget for a configuration. `rf_start` applies to every shot; the sign
/// of each entry follows the queried shot's row of the sign table.
pub fn budget(
    cfg: &FieldConfig,
    consts: &Constants,
    cell: &CellParams,
    pump_tilt: f64,
    probe_alpha: f64,
    eddy: &EddyModel,
    rf_start: RfStartRelation,
    table: &[ShotPhaseConfig; 4],
) -> SystematicsBudget {
    let bhm = b_hm(cell.polarization, cfg.b_tot(), consts);
    let theta = cfg.theta();
    let ccw = Rotation::CounterClockwise;
    let shots = table
        .iter()
        .map(|s| ShotBudget {
            shot: s.shot_index,
            berry_nt: berry_equivalent_field(cfg, consts, s.rotation()),
            tau_2nd_s: second_harmonic_amplitude(cfg, consts),
            static_heading_nt: static_heading(bhm, pump_tilt),
            dynamic_heading_nt: dynamic_heading(bhm, theta, rf_start, s.start_sign()),
            probe_heading_nt: probe_heading_field(cfg.omega_m, consts, probe_alpha, s.rotation()),
        })
        .collect();
    SystematicsBudget {
        inputs: BudgetInputs {
            b_z_nt: cfg.b_z,
            b_m_nt: cfg.b_m,
            omega_m: cfg.omega_m,
            theta_rad: theta,
            polarization: cell.polarization,
            t2_s: cell.t2,
            pump_tilt_rad: pump_tilt,
            probe_alpha_rad: probe_alpha,
            eddy_tau_s: eddy.tau_e,
            b_hm_nt: bhm,
        },
        berry_nt: berry_equivalent_field(cfg, consts, ccw),
        berry_small_angle_nt: berry_small_angle(cfg, consts, ccw),
        tau_2nd_s: second_harmonic_amplitude(cfg, consts),
        static_heading_nt: static_heading(bhm, pump_tilt),
        dynamic_heading_nt: dynamic_heading(bhm, theta, RfStartRelation::Parallel, 1.0),
        probe_heading_nt: probe_heading_field(cfg.omega_m, consts, probe_alpha, ccw).abs(),
        eddy_cutoff_hz: eddy.cutoff_hz(),
        shots,
        adiabatic: is_adiabatic(cfg, consts, cell.t2),
    }
}
