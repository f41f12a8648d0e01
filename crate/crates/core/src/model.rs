//! Domain types, constants and field arithmetic shared by the other modules.
//!
//! Units throughout the crate: fields in nT, time in s, angles in rad.
//! Gyromagnetic ratios are stored in Hz/nT; multiply by 2π (see
//! [`Constants::gamma_angular`]) wherever an angular rate is needed.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Hz/nT.
    pub gamma_f2: f64,
    /// Hz/nT, negative: the F=1 manifold precesses the other way.
    pub gamma_f1: f64,
    /// Ground-state hyperfine constant as a frequency, Hz.
    pub a_hf_freq: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self::RB87
    }
}

impl Constants {
    pub const RB87: Constants = Constants { gamma_f2: 7.0056, gamma_f1: -6.9778, a_hf_freq: 3.417e9 };

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_f2 > 0.0) || !(self.gamma_f1 < 0.0) {
            return Err(Error::InvalidConfig("gamma_f2 must be > 0 and gamma_f1 < 0".into()));
        }
        if self.gamma_f2.abs() == self.gamma_f1.abs() {
            return Err(Error::InvalidConfig("|gamma_f2| must differ from |gamma_f1|".into()));
        }
        if !(self.a_hf_freq > 0.0) {
            return Err(Error::InvalidConfig("a_hf_freq must be positive".into()));
        }
        Ok(())
    }

    /// F=2 gyromagnetic ratio in rad/s/nT.
    pub fn gamma_angular(&self) -> f64 {
        TAU * self.gamma_f2
    }

    /// Angular beat between the two manifolds at field `b_tot`, rad/s.
    ///
    /// The manifolds precess in opposite senses, so the beat seen in the
    /// probe projection is set by the difference of the magnitudes.
    pub fn omega_hp(&self, b_tot: f64) -> f64 {
        TAU * (self.gamma_f2.abs() - self.gamma_f1.abs()).abs() * b_tot
    }
}

/// Sense of the rotating field seen from +z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    CounterClockwise,
    Clockwise,
}

impl Rotation {
    /// +1 for counter-clockwise, -1 for clockwise.
    pub fn sign(self) -> f64 {
        match self {
            Rotation::CounterClockwise => 1.0,
            Rotation::Clockwise => -1.0,
        }
    }

    /// Classify a pair of start phases. Returns `None` for linear (non-rotating) modulation.
    pub fn from_phases(phi_x: f64, phi_y: f64) -> Option<Rotation> {
        let d = wrap_pi(phi_x - phi_y);
        if (d - FRAC_PI_2).abs() < 1e-9 {
            Some(Rotation::CounterClockwise)
        } else if (d + FRAC_PI_2).abs() < 1e-9 {
            Some(Rotation::Clockwise)
        } else {
            None
        }
    }
}

/// Wrap an angle into (-π, π].
pub fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Leading field along z, nT.
    pub b_z: f64,
    /// Rotating-field amplitude, nT.
    pub b_m: f64,
    /// Rotation rate, rad/s.
    pub omega_m: f64,
    pub phi_x: f64,
    pub phi_y: f64,
    /// Residual transverse fields, nT.
    pub b_x_res: f64,
    pub b_y_res: f64,
}

impl FieldConfig {
    /// Canonical shot-1 configuration (φ_x = 90°, φ_y = 0°) with no residuals.
    pub fn canonical(b_z: f64, b_m: f64, omega_m: f64) -> Self {
        FieldConfig { b_z, b_m, omega_m, phi_x: FRAC_PI_2, phi_y: 0.0, b_x_res: 0.0, b_y_res: 0.0 }
    }

    /// Configuration with `b_m` chosen so that √(B_m² + B_z²) = `b_tot`.
    pub fn with_total(b_tot: f64, b_m: f64, omega_m: f64) -> Self {
        Self::canonical((b_tot * b_tot - b_m * b_m).sqrt(), b_m, omega_m)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.b_z, self.b_m, self.omega_m, self.phi_x, self.phi_y, self.b_x_res, self.b_y_res];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("field configuration contains non-finite values".into()));
        }
        if self.b_m < 0.0 {
            return Err(Error::InvalidConfig("b_m must be non-negative".into()));
        }
        if !(self.omega_m > 0.0) {
            return Err(Error::InvalidConfig("omega_m must be positive".into()));
        }
        if self.rotation().is_none() {
            return Err(Error::InvalidConfig("phi_x - phi_y must be ±90° (rotating modulation)".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Option<Rotation> {
        Rotation::from_phases(self.phi_x, self.phi_y)
    }

    /// Static total field magnitude √(B_m² + B_z²), nT.
    pub fn b_tot(&self) -> f64 {
        self.b_m.hypot(self.b_z)
    }

    /// Cone angle θ = atan(B_m / B_z).
    pub fn theta(&self) -> f64 {
        self.b_m.atan2(self.b_z)
    }

    /// Lab-frame Larmor rate γ√(B_m² + B_z²), rad/s.
    pub fn nominal_larmor(&self, consts: &Constants) -> f64 {
        consts.gamma_angular() * self.b_tot()
    }

    pub fn with_phases(mut self, phi_x: f64, phi_y: f64) -> Self {
        self.phi_x = phi_x;
        self.phi_y = phi_y;
        self
    }
}

pub fn total_field(cfg: &FieldConfig, t: f64) -> Vector3<f64> {
    let ph = cfg.omega_m * t;
    Vector3::new(
        cfg.b_x_res + cfg.b_m * (ph + cfg.phi_x).sin(),
        cfg.b_y_res + cfg.b_m * (ph + cfg.phi_y).sin(),
        cfg.b_z,
    )
}

/// Precession rate in the frame co-rotating with the field:
/// γ√(B_m² + (B_z ± ω_m/γ)²), `+` for counter-clockwise rotation.
pub fn reference_frequency(cfg: &FieldConfig, consts: &Constants, direction: Rotation) -> f64 {
    let g = consts.gamma_angular();
    let bz = cfg.b_z + direction.sign() * cfg.omega_m / g;
    g * cfg.b_m.hypot(bz)
}

/// Phase-shift amplitude per unit transverse field, s/nT:
/// B_m / {ω_m [B_m² + (B_z ± ω_m/γ)²]}.
///
/// `+` when the field turns with the spin precession (clockwise about +z for
/// positive γ), which gives the smaller value.
pub fn scale_factor(cfg: &FieldConfig, consts: &Constants, direction: Rotation) -> Result<f64> {
    if !(cfg.b_m > 0.0) {
        return Err(Error::NoVectorSensitivity);
    }
    let bz = cfg.b_z - direction.sign() * cfg.omega_m / consts.gamma_angular();
    Ok(cfg.b_m / (cfg.omega_m * (cfg.b_m * cfg.b_m + bz * bz)))
}

/// Sign entries of one row of the shot sign table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSigns {
    pub b_x: i8,
    pub b_y: i8,
    pub tau_berry: i8,
    pub tau_2nd: i8,
    pub tau_pump: i8,
    pub tau_prob: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotPhaseConfig {
    /// 1 to 4.
    pub shot_index: u8,
    pub phi_x: f64,
    pub phi_y: f64,
    pub signs: ShotSigns,
}

impl ShotPhaseConfig {
    pub fn rotation(&self) -> Rotation {
        Rotation::from_phases(self.phi_x, self.phi_y).expect("shot table phases are rotating")
    }

    /// Sign of B_x at the start of the measurement window: +1 for shots 1, 2.
    pub fn start_sign(&self) -> f64 {
        self.phi_x.sin().signum()
    }
}

const fn signs(b_x: i8, b_y: i8, tau_berry: i8, tau_2nd: i8, tau_pump: i8, tau_prob: i8) -> ShotSigns {
    ShotSigns { b_x, b_y, tau_berry, tau_2nd, tau_pump, tau_prob }
}

/// The four canonical shots in block order.
pub fn shot_table() -> [ShotPhaseConfig; 4] {
    let d = PI / 180.0;
    [
        ShotPhaseConfig { shot_index: 1, phi_x: 90.0 * d, phi_y: 0.0, signs: signs(-1, 1, 1, -1, -1, -1) },
        ShotPhaseConfig { shot_index: 2, phi_x: 90.0 * d, phi_y: 180.0 * d, signs: signs(-1, -1, -1, 1, -1, 1) },
        ShotPhaseConfig { shot_index: 3, phi_x: 270.0 * d, phi_y: 180.0 * d, signs: signs(1, -1, 1, -1, 1, -1) },
        ShotPhaseConfig { shot_index: 4, phi_x: 270.0 * d, phi_y: 360.0 * d, signs: signs(1, 1, -1, 1, 1, 1) },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Transverse relaxation time, s. `f64::INFINITY` disables relaxation.
    pub t2: f64,
    pub polarization: f64,
    /// Fraction of the signal carried by the F=1 manifold.
    pub weight_f1: f64,
    /// Unit pump direction s_p.
    pub pump_direction: [f64; 3],
}

impl Default for CellParams {
    fn default() -> Self {
        CellParams { t2: 3e-3, polarization: 1.0, weight_f1: 0.2, pump_direction: [0.0, -1.0, 0.0] }
    }
}

impl CellParams {
    pub fn weight_f2(&self) -> f64 {
        1.0 - self.weight_f1
    }

    pub fn pump(&self) -> Vector3<f64> {
        Vector3::from(self.pump_direction)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2 > 0.0) {
            return Err(Error::InvalidConfig("t2 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.polarization) {
            return Err(Error::InvalidConfig("polarization must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.weight_f1) {
            return Err(Error::InvalidConfig("weight_f1 must lie in [0, 1)".into()));
        }
        if (self.pump().norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("pump_direction must be a unit vector".into()));
        }
        Ok(())
    }
}
