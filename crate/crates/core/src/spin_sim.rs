//! Classical spin dynamics: fixed-step RK4 Bloch integration, the closed-form
//! rotating-field solution, and the heading-error field term.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::{self, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{reference_frequency, total_field, wrap_pi, CellParams, Constants, FieldConfig, Rotation, ShotPhaseConfig};
use crate::waveform::VectorSeries;

pub trait FieldSource {
    fn field_at(&self, t: f64) -> Vector3<f64>;
}

impl FieldSource for VectorSeries {
    fn field_at(&self, t: f64) -> Vector3<f64> {
        self.at(t)
    }
}

impl FieldSource for FieldConfig {
    fn field_at(&self, t: f64) -> Vector3<f64> {
        total_field(self, t)
    }
}

/// Adapter for closures.
pub struct FnField<F>(pub F);

impl<F: Fn(f64) -> Vector3<f64>> FieldSource for FnField<F> {
    fn field_at(&self, t: f64) -> Vector3<f64> {
        (self.0)(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingModel {
    /// Maximum heading shift B_HM, nT.
    pub b_hm: f64,
    pub enabled: bool,
}

impl HeadingModel {
    pub fn off() -> Self {
        HeadingModel { b_hm: 0.0, enabled: false }
    }

    pub fn from_cell(cell: &CellParams, b_tot: f64, consts: &Constants) -> Self {
        HeadingModel { b_hm: b_hm(cell.polarization, b_tot, consts), enabled: true }
    }
}

/// Whether the rotating field starts along the pumped spin or across it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RfStartRelation {
    Parallel,
    Perpendicular,
}

/// Classify the start of `shot` against the pump direction.
pub fn rf_start_relation(shot: &ShotPhaseConfig, pump: &Vector3<f64>) -> RfStartRelation {
    let start = Vector3::new(shot.phi_x.sin(), shot.phi_y.sin(), 0.0);
    if start.dot(pump).abs() > 0.5 * pump.norm() {
        RfStartRelation::Parallel
    } else {
        RfStartRelation::Perpendicular
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState {
    pub s_f2: Vector3<f64>,
    pub s_f1: Vector3<f64>,
    pub relation: RfStartRelation,
}

/// Maximum static heading shift, nT:
/// P(7+P²)/(5+3P²) · 3γB_tot²/(4π A_hf) with γ in rad/s/nT and A_hf in Hz,
/// which is 3γ_Hz B_tot²/(2 A_hf) in the stored units.
pub fn b_hm(p: f64, b_tot: f64, consts: &Constants) -> f64 {
    p * (7.0 + p * p) / (5.0 + 3.0 * p * p) * 3.0 * consts.gamma_f2 * b_tot * b_tot / (2.0 * consts.a_hf_freq)
}

/// Instantaneous optical pumping: both manifolds along s_p, norms split by weight.
pub fn pump_reset(cell: &CellParams, relation: RfStartRelation) -> SpinState {
    let s = cell.pump() * cell.polarization;
    SpinState { s_f2: s * cell.weight_f2(), s_f1: s * cell.weight_f1, relation }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub s_f2: Vec<Vector3<f64>>,
    /// Absent when the F=1 manifold carries no weight.
    pub s_f1: Option<Vec<Vector3<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.s_f2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_f2.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Summed spin vector (weights are carried by the manifold norms).
    pub fn total(&self, k: usize) -> Vector3<f64> {
        match &self.s_f1 {
            Some(f1) => self.s_f2[k] + f1[k],
            None => self.s_f2[k],
        }
    }

    /// CSV with columns `t_s,sx_f2,sy_f2,sz_f2,sx_f1,sy_f1,sz_f1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,sx_f2,sy_f2,sz_f2,sx_f1,sy_f1,sz_f1")?;
        for k in 0..self.len() {
            let a = self.s_f2[k];
            let b = self.s_f1.as_ref().map_or(Vector3::zeros(), |v| v[k]);
            writeln!(w, "{:.12e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}", self.time(k), a.x, a.y, a.z, b.x, b.y, b.z)?;
        }
        Ok(())
    }
}

/// dS/dt for one manifold with signed angular gyromagnetic ratio `g`.
///
/// Precession is written as g·(S × B_eff) so that positive `g` turns the spin
/// clockwise about B (Larmor sense). The heading term reduces the effective
/// field along B̂ in proportion to the spin's projection on it.
#[inline]
fn rhs(s: &Vector3<f64>, b: &Vector3<f64>, g: f64, relax: f64, heading: &HeadingModel) -> Vector3<f64> {
    let mut beff = *b;
    if heading.enabled && heading.b_hm != 0.0 {
        let sn = s.norm();
        let bn = b.norm();
        if sn > 0.0 && bn > 0.0 {
            let bh = b / bn;
            beff -= bh * (heading.b_hm * s.dot(&bh) / sn);
        }
    }
    s.cross(&beff) * g - s * relax
}

/// Integrate both manifolds from `t0` for `duration` with fixed RK4 step `dt`.
///
/// Returns `round(duration/dt) + 1` samples, the first being `state`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_bloch(
    state: &SpinState,
    field: &impl FieldSource,
    cell: &CellParams,
    heading: &HeadingModel,
    consts: &Constants,
    t0: f64,
    duration: f64,
    dt: f64,
) -> Result<Trajectory> {
    cell.validate()?;
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::InvalidConfig("dt must be positive and duration non-negative".into()));
    }
    let gmax = consts.gamma_f2.abs().max(consts.gamma_f1.abs());
    let bmax = [t0, t0 + 0.5 * duration, t0 + duration]
        .iter()
        .map(|&t| {
            let b = field.field_at(t);
            if b.iter().all(|v| v.is_finite()) {
                Ok(b.norm())
            } else {
                Err(Error::NonFiniteField { t })
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if bmax > 0.0 {
        let limit = 1.0 / (50.0 * gmax * bmax);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, limit });
        }
    }

    let n = (duration / dt).round() as usize;
    let g2 = TAU * consts.gamma_f2;
    let g1 = TAU * consts.gamma_f1;
    let relax = if cell.t2.is_finite() { 1.0 / cell.t2 } else { 0.0 };
    let with_f1 = cell.weight_f1 > 0.0;

    let mut a = state.s_f2;
    let mut b = state.s_f1;
    let mut out2 = Vec::with_capacity(n + 1);
    let mut out1 = if with_f1 { Some(Vec::with_capacity(n + 1)) } else { None };
    out2.push(a);
    if let Some(v) = out1.as_mut() {
        v.push(b);
    }

    let finite = |bf: Vector3<f64>, t: f64| {
        if bf.iter().all(|v| v.is_finite()) {
            Ok(bf)
        } else {
            Err(Error::NonFiniteField { t })
        }
    };
    let h = dt;
    let mut b0 = finite(field.field_at(t0), t0)?;
    for k in 0..n {
        let t = t0 + k as f64 * h;
        let bm = finite(field.field_at(t + 0.5 * h), t + 0.5 * h)?;
        let b1 = finite(field.field_at(t + h), t + h)?;

        let k1 = rhs(&a, &b0, g2, relax, heading);
        let k2 = rhs(&(a + k1 * (0.5 * h)), &bm, g2, relax, heading);
        let k3 = rhs(&(a + k2 * (0.5 * h)), &bm, g2, relax, heading);
        let k4 = rhs(&(a + k3 * h), &b1, g2, relax, heading);
        a += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        out2.push(a);

        if let Some(v) = out1.as_mut() {
            let k1 = rhs(&b, &b0, g1, relax, heading);
            let k2 = rhs(&(b + k1 * (0.5 * h)), &bm, g1, relax, heading);
            let k3 = rhs(&(b + k2 * (0.5 * h)), &bm, g1, relax, heading);
            let k4 = rhs(&(b + k3 * h), &b1, g1, relax, heading);
            b += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            v.push(b);
        }
        b0 = b1;
    }
    Ok(Trajectory { t0, dt, s_f2: out2, s_f1: out1 })
}

/// Closed-form spin projection for the canonical shot (φ_x = 90°, φ_y = 0°,
/// counter-clockwise), starting from (0, -1, 0) with no relaxation.
pub fn evolve_closed_form(cfg: &FieldConfig, consts: &Constants, t: f64) -> Result<Vector3<f64>> {
    if cfg.b_x_res != 0.0 || cfg.b_y_res != 0.0 {
        return Err(Error::ClosedForm("residual transverse fields must be zero".into()));
    }
    if wrap_pi(cfg.phi_x - FRAC_PI_2).abs() > 1e-12 || wrap_pi(cfg.phi_y).abs() > 1e-12 {
        return Err(Error::ClosedForm("start phases must be (90°, 0°)".into()));
    }
    if !(cfg.omega_m > 0.0) || cfg.b_m < 0.0 {
        return Err(Error::ClosedForm("need omega_m > 0 and b_m >= 0".into()));
    }
    let g = consts.gamma_angular();
    let w0 = reference_frequency(cfg, consts, Rotation::CounterClockwise);
    let a = g * cfg.b_m / w0;
    let c = (g * cfg.b_z + cfg.omega_m) / w0;
    let (s0, c0) = (w0 * t).sin_cos();
    let (sm, cm) = (cfg.omega_m * t).sin_cos();
    Ok(Vector3::new(c0 * sm - c * s0 * cm, -c0 * cm - c * s0 * sm, a * s0))
}
