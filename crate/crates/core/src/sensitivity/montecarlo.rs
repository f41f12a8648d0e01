//! Monte-Carlo maximum-likelihood checks of the frequency and amplitude bounds.
//!
//! Time is normalised to the precession period (Δt = 1, carrier 2π rad per
//! unit time) and the optical gain to k = 1, so the per-period phase noise
//! σ₀ fully sets the noise level: per-sample σ = σ₀·√(N/2) for N samples
//! per period.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kappa1, kappa1_direct, kappa2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub m_periods: u64,
    /// T2 in units of the precession period.
    pub t2_periods: f64,
    pub samples_per_period: usize,
    /// Per-period phase noise at t = 0, rad.
    pub sigma_psi0: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub trials: usize,
    pub achieved_sigma: f64,
    pub bound_sigma: f64,
    pub mean_error: f64,
}

impl McSummary {
    pub fn ratio(&self) -> f64 {
        self.achieved_sigma / self.bound_sigma
    }
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.m_periods < 2 || self.samples_per_period < 4 || !(self.t2_periods > 0.0) || !(self.sigma_psi0 > 0.0) || self.trials < 2 {
            return Err(Error::InvalidConfig("Monte-Carlo configuration out of range".into()));
        }
        Ok(())
    }

    fn z(&self) -> f64 {
        (-1.0 / self.t2_periods).exp()
    }

    fn times(&self) -> Vec<f64> {
        let n = self.m_periods as usize * self.samples_per_period;
        (0..n).map(|i| i as f64 / self.samples_per_period as f64).collect()
    }

    fn envelope(&self, t: &[f64]) -> Vec<f64> {
        t.iter().map(|&x| (-x / self.t2_periods).exp()).collect()
    }

    fn sample_sigma(&self) -> f64 {
        self.sigma_psi0 * (self.samples_per_period as f64 / 2.0).sqrt()
    }
}

fn summarize(errors: &[f64], bound: f64) -> McSummary {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    McSummary { trials: errors.len(), achieved_sigma: var.sqrt(), bound_sigma: bound, mean_error: mean }
}

/// Energy captured by the best fit of env·(a cos ωt + b sin ωt); maximizing
/// it over ω is maximum likelihood for white Gaussian noise.
fn projected_energy(t: &[f64], env: &[f64], y: &[f64], w: f64) -> f64 {
    let (mut cc, mut ss, mut cs, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..t.len() {
        let (s, c) = (w * t[i]).sin_cos();
        let (c, s) = (env[i] * c, env[i] * s);
        cc += c * c;
        ss += s * s;
        cs += c * s;
        yc += y[i] * c;
        ys += y[i] * s;
    }
    let m = Matrix2::new(cc, cs, cs, ss);
    let v = Vector2::new(yc, ys);
    match m.try_inverse() {
        Some(inv) => v.dot(&(inv * v)),
        None => 0.0,
    }
}

/// ML frequency of a damped sinusoid with known damping: grid over a few
/// Fourier widths around `w_guess`, then golden-section refinement.
pub fn ml_frequency(t: &[f64], env: &[f64], y: &[f64], w_guess: f64) -> f64 {
    let span = t[t.len() - 1] - t[0];
    let width = TAU / span;
    let steps = 48;
    let step = 4.0 * width / steps as f64;
    let mut best = (w_guess, f64::MIN);
    for i in 0..=steps {
        let w = w_guess - 2.0 * width + i as f64 * step;
        let e = projected_energy(t, env, y, w);
        if e > best.1 {
            best = (w, e);
        }
    }
    let (mut a, mut b) = (best.0 - step, best.0 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c1 = b - g * (b - a);
    let mut c2 = a + g * (b - a);
    let mut f1 = projected_energy(t, env, y, c1);
    let mut f2 = projected_energy(t, env, y, c2);
    for _ in 0..60 {
        if f1 > f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - g * (b - a);
            f1 = projected_energy(t, env, y, c1);
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + g * (b - a);
            f2 = projected_energy(t, env, y, c2);
        }
    }
    0.5 * (a + b)
}

/// Standard deviation of ML frequency estimates against σ₀√κ₁ (rad per period).
pub fn frequency_mc(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let t = cfg.times();
    let env = cfg.envelope(&t);
    let noise = Normal::new(0.0, cfg.sample_sigma()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let errors: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let psi: f64 = rng.random_range(0.0..TAU);
            let w = TAU * (1.0 + 1e-3 * rng.random_range(-1.0..1.0));
            let y: Vec<f64> = t.iter().zip(&env).map(|(&x, &e)| e * (w * x + psi).cos() + noise.sample(&mut rng)).collect();
            ml_frequency(&t, &env, &y, TAU) - w
        })
        .collect();
    let k1 = kappa1(cfg.m_periods, cfg.z()).unwrap_or_else(|_| kappa1_direct(cfg.m_periods, cfg.z()));
    Ok(summarize(&errors, cfg.sigma_psi0 * k1.sqrt()))
}

/// Gauss–Newton ML of (a, ψ, A, B) for env·a·cos(2πt + ψ + A sin ω_m t + B cos ω_m t).
pub fn ml_phase_modulation(t: &[f64], env: &[f64], y: &[f64], wm: f64) -> Vector4<f64> {
    // Start from the unmodulated quadrature estimate.
    let (mut yc, mut ys, mut ee) = (0.0, 0.0, 0.0);
    for i in 0..t.len() {
        let (s, c) = (TAU * t[i]).sin_cos();
        yc += y[i] * env[i] * c;
        ys += y[i] * env[i] * s;
        ee += env[i] * env[i];
    }
    let mut p = Vector4::new(2.0 * yc.hypot(ys) / ee, (-ys).atan2(yc), 0.0, 0.0);
    for _ in 0..20 {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for i in 0..t.len() {
            let (sm, cm) = (wm * t[i]).sin_cos();
            let ph = TAU * t[i] + p[1] + p[2] * sm + p[3] * cm;
            let (s, c) = ph.sin_cos();
            let r = y[i] - env[i] * p[0] * c;
            let d = -env[i] * p[0] * s;
            let j = Vector4::new(env[i] * c, d, d * sm, d * cm);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let Some(step) = jtj.cholesky().map(|ch| ch.solve(&jtr)) else { break };
        p += step;
        if step[2].abs() < 1e-14 && step[3].abs() < 1e-14 {
            break;
        }
    }
    p
}

/// Standard deviation of the ML sin-amplitude of a phase modulation against σ₀√κ₂.
///
/// `mod_cycles` modulation periods fit in the measurement window.
pub fn amplitude_mc(cfg: &McConfig, mod_cycles: f64, amplitude: f64) -> Result<McSummary> {
    cfg.validate()?;
    let t = cfg.times();
    let env = cfg.envelope(&t);
    let wm = TAU * mod_cycles / cfg.m_periods as f64;
    let noise = Normal::new(0.0, cfg.sample_sigma()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let errors: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let psi: f64 = rng.random_range(0.0..TAU);
            let y: Vec<f64> = t
                .iter()
                .zip(&env)
                .map(|(&x, &e)| e * (TAU * x + psi + amplitude * (wm * x).sin()).cos() + noise.sample(&mut rng))
                .collect();
            ml_phase_modulation(&t, &env, &y, wm)[2] - amplitude
        })
        .collect();
    let k2 = kappa2(cfg.m_periods, cfg.z())?;
    Ok(summarize(&errors, cfg.sigma_psi0 * k2.sqrt()))
}

/// Exact weighted-least-squares variances of (slope, sin, cos) when a phase
/// series with weights z^{2m} is fitted jointly on {1, m, sin ω_m m, cos ω_m m},
/// divided by the independent factors κ₁, κ₂, κ₂. `wm_per_period` is ω_m·Δt.
pub fn joint_fit_variance_ratios(m: u64, z: f64, wm_per_period: f64) -> Result<[f64; 3]> {
    let n = m as usize;
    let x = DMatrix::from_fn(n, 4, |i, j| {
        let mi = i as f64;
        match j {
            0 => 1.0,
            1 => mi,
            2 => (wm_per_period * mi).sin(),
            _ => (wm_per_period * mi).cos(),
        }
    });
    let w = DVector::from_fn(n, |i, _| z.powi(2 * i as i32));
    let mut xtwx = DMatrix::zeros(4, 4);
    for i in 0..n {
        let r = x.row(i);
        xtwx += r.transpose() * r * w[i];
    }
    let cov = xtwx.try_inverse().ok_or(Error::RankDeficient(0.0))?;
    let k1 = kappa1(m, z).unwrap_or_else(|_| kappa1_direct(m, z));
    let k2 = kappa2(m, z)?;
    Ok([cov[(1, 1)] / k1, cov[(2, 2)] / k2, cov[(3, 3)] / k2])
}

/// Monte-Carlo counterpart of [`joint_fit_variance_ratios`] on synthetic phase series.
pub fn joint_fit_mc(m: u64, z: f64, wm_per_period: f64, trials: usize, seed: u64) -> Result<[f64; 3]> {
    let n = m as usize;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let x = DMatrix::from_fn(n, 4, |i, j| {
        let mi = i as f64;
        match j {
            0 => 1.0,
            1 => mi,
            2 => (wm_per_period * mi).sin(),
            _ => (wm_per_period * mi).cos(),
        }
    });
    let sd: Vec<f64> = (0..n).map(|i| z.powi(-(i as i32))).collect();
    let xw = DMatrix::from_fn(n, 4, |i, j| x[(i, j)] / sd[i]);
    let svd = xw.svd(true, true);
    let est: Vec<Vector4<f64>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            // Whitened observations: noise of unit variance after dividing by σ_m.
            let yw = DVector::from_fn(n, |_, _| unit.sample(&mut rng));
            let b = svd.solve(&yw, 1e-14).expect("solve");
            Vector4::new(b[0], b[1], b[2], b[3])
        })
        .collect();
    let var = |j: usize| {
        let mean = est.iter().map(|v| v[j]).sum::<f64>() / trials as f64;
        est.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
    };
    let k1 = kappa1(m, z).unwrap_or_else(|_| kappa1_direct(m, z));
    let k2 = kappa2(m, z)?;
    Ok([var(1) / k1, var(2) / k2, var(3) / k2])
}
