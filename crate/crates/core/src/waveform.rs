//! Commanded rotating-field waveform over a four-shot block, and the eddy
//! channel that turns the commanded field into the field seen by the atoms.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{self, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{shot_table, wrap_pi, FieldConfig, ShotPhaseConfig};

/// Uniformly sampled 3-vector series.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSeries {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<Vector3<f64>>,
}

impl VectorSeries {
    pub fn sample(t0: f64, dt: f64, n: usize, mut f: impl FnMut(f64) -> Vector3<f64>) -> Self {
        let values = (0..n).map(|k| f(t0 + k as f64 * dt)).collect();
        VectorSeries { t0, dt, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.values.len().saturating_sub(1))
    }

    /// Linear interpolation, clamped at both ends.
    pub fn at(&self, t: f64) -> Vector3<f64> {
        let n = self.values.len();
        if n == 0 {
            return Vector3::repeat(f64::NAN);
        }
        let x = (t - self.t0) / self.dt;
        if x <= 0.0 {
            return self.values[0];
        }
        let k = x.floor() as usize;
        if k + 1 >= n {
            return self.values[n - 1];
        }
        let f = x - k as f64;
        self.values[k] * (1.0 - f) + self.values[k + 1] * f
    }

    /// CSV with columns `t_s,bx_nT,by_nT,bz_nT`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,bx_nT,by_nT,bz_nT")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.12e},{:.9e},{:.9e},{:.9e}", self.time(k), v.x, v.y, v.z)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchScheme {
    /// Reverse the rotation where the flipping component is at a peak (it jumps -max to +max).
    Cosine,
    /// Reverse the rotation where the flipping component crosses zero.
    Sine,
    /// One continuous rotating field using the first shot's phases.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    /// Prepare plus measure time of one shot, s.
    pub shot_duration: f64,
    /// Leading fraction of each shot used for pumping.
    pub prepare_fraction: f64,
    pub shots: [ShotPhaseConfig; 4],
    pub switch_scheme: SwitchScheme,
}

impl Default for BlockSchedule {
    fn default() -> Self {
        BlockSchedule {
            shot_duration: 1.0 / 120.0,
            prepare_fraction: 0.25,
            shots: shot_table(),
            switch_scheme: SwitchScheme::Cosine,
        }
    }
}

impl BlockSchedule {
    pub fn with_scheme(scheme: SwitchScheme) -> Self {
        BlockSchedule { switch_scheme: scheme, ..Default::default() }
    }

    pub fn validate(&self, cfg: &FieldConfig) -> Result<()> {
        if !(self.shot_duration > 0.0) {
            return Err(Error::InvalidConfig("shot_duration must be positive".into()));
        }
        if !(self.prepare_fraction > 0.0 && self.prepare_fraction < 1.0) {
            return Err(Error::InvalidConfig("prepare_fraction must lie in (0, 1)".into()));
        }
        for s in &self.shots {
            if s.rotation_checked().is_none() {
                return Err(Error::InvalidConfig(format!("shot {} phases are not rotating", s.shot_index)));
            }
        }
        if self.switch_scheme != SwitchScheme::None {
            // The switch point recurs every half modulation period.
            let half = PI / cfg.omega_m;
            if self.prepare_time() <= half {
                return Err(Error::InvalidConfig(format!(
                    "prepare window {:.3e} s is shorter than half a modulation period {:.3e} s",
                    self.prepare_time(),
                    half
                )));
            }
        }
        Ok(())
    }

    pub fn block_duration(&self) -> f64 {
        4.0 * self.shot_duration
    }

    pub fn prepare_time(&self) -> f64 {
        self.prepare_fraction * self.shot_duration
    }

    pub fn measure_duration(&self) -> f64 {
        self.shot_duration - self.prepare_time()
    }

    /// Start of the measurement window of shot `i` (0-based), block time.
    pub fn measure_start(&self, i: usize) -> f64 {
        i as f64 * self.shot_duration + self.prepare_time()
    }

    /// Phases that shot `i` actually drives.
    pub fn shot_phases(&self, i: usize) -> (f64, f64) {
        let s = match self.switch_scheme {
            SwitchScheme::None => &self.shots[0],
            _ => &self.shots[i % 4],
        };
        (s.phi_x, s.phi_y)
    }

    /// Waveform segment `i` (0-based; -1 means the previous block's last shot) at block time `t`.
    fn segment(&self, cfg: &FieldConfig, i: isize, t: f64) -> Vector3<f64> {
        let (t_ref, (px, py)) = match self.switch_scheme {
            // Continuous: everything referenced to shot 1's measurement start.
            SwitchScheme::None => (self.measure_start(0), self.shot_phases(0)),
            _ => {
                let j = i.rem_euclid(4) as usize;
                let offset = if i < 0 { -self.block_duration() } else { 0.0 };
                (self.measure_start(j) + offset, self.shot_phases(j))
            }
        };
        let ph = cfg.omega_m * (t - t_ref);
        Vector3::new(
            cfg.b_x_res + cfg.b_m * (ph + px).sin(),
            cfg.b_y_res + cfg.b_m * (ph + py).sin(),
            cfg.b_z,
        )
    }

    /// Block time at which shot `i`'s waveform takes over from the previous shot's.
    ///
    /// The switch is placed at the first qualifying point inside the prepare
    /// window: where the flipping component of the new waveform is at a peak
    /// (cosine) or crosses zero (sine). Without a flipping component the
    /// waveforms change at the shot boundary.
    pub fn switch_time(&self, cfg: &FieldConfig, i: usize) -> f64 {
        let start = i as f64 * self.shot_duration;
        if self.switch_scheme == SwitchScheme::None {
            return start;
        }
        let cur = &self.shots[i % 4];
        let prev = &self.shots[(i + 3) % 4];
        let flips = |a: f64, b: f64| (wrap_pi(a - b).abs() - PI).abs() < 1e-9;
        let phi_c = if flips(cur.phi_x, prev.phi_x) {
            cur.phi_x
        } else if flips(cur.phi_y, prev.phi_y) {
            cur.phi_y
        } else {
            return start;
        };
        let target = match self.switch_scheme {
            SwitchScheme::Cosine => FRAC_PI_2,
            _ => 0.0,
        };
        let u0 = cfg.omega_m * (start - self.measure_start(i)) + phi_c - target;
        let k = (u0 / PI - 1e-9).ceil();
        start + (k * PI - u0) / cfg.omega_m
    }

    /// Commanded field at block time `t` in [0, 4·shot_duration).
    pub fn commanded_field(&self, cfg: &FieldConfig, t: f64) -> Result<Vector3<f64>> {
        let end = self.block_duration();
        if !(t >= 0.0 && t < end) {
            return Err(Error::OutOfBlock { t, end });
        }
        Ok(self.commanded_in_block(cfg, t))
    }

    /// Commanded field at any time, repeating the block schedule.
    pub fn commanded_field_periodic(&self, cfg: &FieldConfig, t: f64) -> Vector3<f64> {
        if self.switch_scheme == SwitchScheme::None {
            return self.segment(cfg, 0, t);
        }
        self.commanded_in_block(cfg, t.rem_euclid(self.block_duration()))
    }

    fn commanded_in_block(&self, cfg: &FieldConfig, t: f64) -> Vector3<f64> {
        let i = ((t / self.shot_duration).floor() as usize).min(3);
        if t >= self.switch_time(cfg, i) {
            self.segment(cfg, i as isize, t)
        } else {
            self.segment(cfg, i as isize - 1, t)
        }
    }
}

impl ShotPhaseConfig {
    fn rotation_checked(&self) -> Option<crate::model::Rotation> {
        crate::model::Rotation::from_phases(self.phi_x, self.phi_y)
    }
}

/// First-order eddy channel.
///
/// The shield's eddy field opposes changes of the commanded field with a
/// single time constant, so the field at the cell is
/// `u - coupling·(u - LPF_τ(u))`. With `coupling = 1` the cell sees the pure
/// low-passed command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EddyModel {
    /// s.
    pub tau_e: f64,
    /// Fraction of the commanded change the eddy field cancels, in [0, 1].
    pub coupling: f64,
    pub enabled: bool,
}

impl Default for EddyModel {
    fn default() -> Self {
        EddyModel { tau_e: 10.4e-3, coupling: 0.05, enabled: false }
    }
}

impl EddyModel {
    pub fn cutoff_hz(&self) -> f64 {
        1.0 / (2.0 * PI * self.tau_e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_e > 0.0) {
            return Err(Error::InvalidConfig("tau_e must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::InvalidConfig("eddy coupling must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn active(&self) -> bool {
        self.enabled && self.coupling > 0.0
    }
}

/// Stateful eddy channel for a fixed sample spacing. Transverse components only.
#[derive(Debug, Clone)]
pub struct EddyFilter {
    model: EddyModel,
    dt: f64,
    alpha: f64,
    state: [f64; 2],
}

impl EddyFilter {
    pub fn new(model: EddyModel, dt: f64) -> Result<Self> {
        model.validate()?;
        if model.active() && dt >= model.tau_e / 10.0 {
            return Err(Error::UndersampledEddy { dt, limit: model.tau_e / 10.0 });
        }
        let alpha = -(-dt / model.tau_e).exp_m1();
        Ok(EddyFilter { model, dt, alpha, state: [0.0; 2] })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 2]) {
        self.state = state;
    }

    /// Put the low-pass state on the exact discrete steady state it would
    /// have at time `t` after driving `cfg` with phases (`phi_x`, `phi_y`)
    /// referenced to `t_ref` forever.
    pub fn settle(&mut self, cfg: &FieldConfig, phi_x: f64, phi_y: f64, t_ref: f64, t: f64) {
        // y[k+1] = (1-a) y[k] + a u[k]  =>  H(w) = a / (e^{i w dt} - (1 - a)).
        let wdt = cfg.omega_m * self.dt;
        let (re, im) = (wdt.cos() - (1.0 - self.alpha), wdt.sin());
        let den = re * re + im * im;
        let (hr, hi) = (self.alpha * re / den, -self.alpha * im / den);
        let gain = hr.hypot(hi);
        let lag = hi.atan2(hr);
        let ph = cfg.omega_m * (t - t_ref);
        self.state = [
            cfg.b_x_res + cfg.b_m * gain * (ph + phi_x + lag).sin(),
            cfg.b_y_res + cfg.b_m * gain * (ph + phi_y + lag).sin(),
        ];
    }

    /// Feed one commanded sample; returns the field at the cell for that sample.
    pub fn step(&mut self, u: Vector3<f64>) -> Vector3<f64> {
        if !self.model.active() {
            return u;
        }
        let k = self.model.coupling;
        let y = self.state;
        let out = Vector3::new(u.x - k * (u.x - y[0]), u.y - k * (u.y - y[1]), u.z);
        self.state[0] += self.alpha * (u.x - y[0]);
        self.state[1] += self.alpha * (u.y - y[1]);
        out
    }

    pub fn process(&mut self, commanded: &VectorSeries) -> Result<VectorSeries> {
        if (commanded.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::InvalidConfig("series spacing differs from the filter's dt".into()));
        }
        let values = commanded.values.iter().map(|&u| self.step(u)).collect();
        Ok(VectorSeries { t0: commanded.t0, dt: commanded.dt, values })
    }
}

/// Run `commanded` through the eddy channel starting from rest.
pub fn apply_eddy(model: &EddyModel, commanded: &VectorSeries) -> Result<VectorSeries> {
    EddyFilter::new(*model, commanded.dt)?.process(commanded)
}
