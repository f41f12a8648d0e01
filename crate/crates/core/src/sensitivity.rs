//! Fundamental sensitivity limits: optical rotation gain, photon shot noise,
//! and the minimum-variance bounds for frequency and amplitude estimation
//! from a damped precession signal.
//!
//! Per-period phase noise is σ_m = σ₀·z^{-m}, σ₀ = ρ_Θ/(k√Δt), z = e^{-Δt/T2},
//! m = 0..M-1. A bound ρ (per √Hz) relates to the single-measurement standard
//! deviation over t = MΔt by σ = ρ/√(2t), matching the one-sided noise
//! convention of [`crate::detection`].

pub mod montecarlo;

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Constants;

/// Classical electron radius, m.
pub const R_E: f64 = 2.817_940_326_2e-15;
/// Speed of light, m/s.
pub const C: f64 = 299_792_458.0;
/// Planck constant, J s.
pub const H: f64 = 6.626_070_15e-34;

/// Optical rotation per unit spin polarization, k = ½ l r_e c f n D(ν).
///
/// `detuning` and `fwhm` in Hz, `l` in m, `n` in m⁻³.
pub fn optical_gain(l: f64, n: f64, detuning: f64, fwhm: f64, oscillator_strength: f64) -> Result<f64> {
    if !(fwhm > 0.0) {
        return Err(Error::InvalidConfig("fwhm must be positive".into()));
    }
    let d = detuning / (detuning * detuning + 0.25 * fwhm * fwhm);
    Ok(0.5 * l * R_E * C * oscillator_strength * n * d)
}

/// Photons per second in a beam of `power` W at `wavelength` m.
pub fn photon_flux(power: f64, wavelength: f64) -> f64 {
    power * wavelength / (H * C)
}

/// Rotation-angle shot-noise density √(1/(2Φ)), rad/√Hz.
pub fn shot_noise_psd(phi_pr: f64) -> f64 {
    (0.5 / phi_pr).sqrt()
}

/// Variance factor of the weighted frequency estimate,
/// (1−z²)³(1−z^{2M}) / [z² + z^{2+4M} − z^{2M}(2z² + M²(1−z²)²)].
pub fn kappa1(m: u64, z: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::OutsideValidity("kappa1 needs M >= 2".into()));
    }
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::OutsideValidity(format!("z = {z} outside (0, 1)")));
    }
    let mf = m as f64;
    let z2 = z * z;
    let z2m = z2.powf(mf);
    let den = z2 + z2 * z2m * z2m - z2m * (2.0 * z2 + mf * mf * (1.0 - z2).powi(2));
    if !(den > 0.0) {
        return Err(Error::OutsideValidity(format!("kappa1 denominator {den:e} is not positive")));
    }
    Ok((1.0 - z2).powi(3) * (1.0 - z2m) / den)
}

/// κ₁ as the inverse weighted second moment 1/Σ z^{2m}(m − m̄)², summed directly.
///
/// Stable for z → 1 where the closed form cancels catastrophically.
pub fn kappa1_direct(m: u64, z: f64) -> f64 {
    let z2 = z * z;
    let (mut w, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut wm = 1.0;
    for i in 0..m {
        let x = i as f64;
        w += wm;
        s1 += wm * x;
        s2 += wm * x * x;
        wm *= z2;
    }
    let mean = s1 / w;
    1.0 / (s2 - mean * s1)
}

/// Amplitude variance factor 2(1−z²)/(1−z^{2M}).
pub fn kappa2(m: u64, z: f64) -> Result<f64> {
    if m < 1 {
        return Err(Error::OutsideValidity("kappa2 needs M >= 1".into()));
    }
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::OutsideValidity(format!("z = {z} outside (0, 1)")));
    }
    let z2 = z * z;
    Ok(2.0 * (1.0 - z2) / (1.0 - z2.powf(m as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// rad/√Hz.
    pub rho_theta: f64,
    pub gain_k: f64,
    /// s.
    pub t2: f64,
    /// Precession period, s.
    pub delta_t: f64,
    pub m_periods: u64,
    /// rad/s.
    pub omega_m: f64,
    /// Cone angle, rad.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranRegime {
    Short,
    TwiceT2,
    General,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.rho_theta, self.gain_k, self.t2, self.delta_t, self.omega_m];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.m_periods == 0 || !self.theta.is_finite() {
            return Err(Error::InvalidConfig("bound inputs must be positive and finite".into()));
        }
        Ok(())
    }

    /// Photon flux implied by ρ_Θ.
    pub fn phi_pr(&self) -> f64 {
        0.5 / (self.rho_theta * self.rho_theta)
    }

    pub fn z(&self) -> f64 {
        (-self.delta_t / self.t2).exp()
    }

    pub fn measurement_time(&self) -> f64 {
        self.m_periods as f64 * self.delta_t
    }

    /// Per-period phase noise at the start of the decay, rad.
    pub fn sigma_psi0(&self) -> f64 {
        self.rho_theta / (self.gain_k * self.delta_t.sqrt())
    }

    /// Inputs for a measured per-period phase noise `sigma_psi` (with k = 1).
    pub fn from_phase_noise(sigma_psi: f64, delta_t: f64, t2: f64, t_meas: f64, omega_m: f64, theta: f64) -> Self {
        BoundInputs {
            rho_theta: sigma_psi * delta_t.sqrt(),
            gain_k: 1.0,
            t2,
            delta_t,
            m_periods: (t_meas / delta_t).round() as u64,
            omega_m,
            theta,
        }
    }
}

/// ρ(ω) = ρ_Θ/(kΔt)·√(2Mκ₁), rad/s/√Hz.
pub fn freq_psd_bound(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let k1 = kappa1(inp.m_periods, inp.z())?;
    Ok(inp.rho_theta / (inp.gain_k * inp.delta_t) * (2.0 * inp.m_periods as f64 * k1).sqrt())
}

/// ρ(A) = ρ_Θ/k·√(2Mκ₂), rad/√Hz.
pub fn amp_psd_bound(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let k2 = kappa2(inp.m_periods, inp.z())?;
    Ok(inp.rho_theta / inp.gain_k * (2.0 * inp.m_periods as f64 * k2).sqrt())
}

/// Optimum-time total-field sensitivity 4/(γkT2√Φ), nT/√Hz.
pub fn delta_b_tot(inp: &BoundInputs, consts: &Constants) -> Result<f64> {
    inp.validate()?;
    Ok(4.0 / (consts.gamma_angular() * inp.gain_k * inp.t2 * inp.phi_pr().sqrt()))
}

/// Total-field sensitivity ρ(ω)/γ at the configured M, nT/√Hz.
pub fn delta_b_tot_general(inp: &BoundInputs, consts: &Constants) -> Result<f64> {
    Ok(freq_psd_bound(inp)? / consts.gamma_angular())
}

/// Transverse-field sensitivity, nT/√Hz.
pub fn delta_b_tran(inp: &BoundInputs, consts: &Constants, regime: TranRegime) -> Result<f64> {
    inp.validate()?;
    let s = inp.theta.sin();
    if s.abs() < 1e-12 {
        return Err(Error::NoTransverseSensitivity);
    }
    let pre = inp.omega_m / (s * consts.gamma_angular() * inp.gain_k * inp.phi_pr().sqrt());
    match regime {
        TranRegime::General => Ok(pre * (inp.m_periods as f64 * kappa2(inp.m_periods, inp.z())?).sqrt()),
        TranRegime::Short => {
            if inp.measurement_time() > 0.1 * inp.t2 {
                return Err(Error::OutsideValidity("short-time form needs t <= T2/10".into()));
            }
            Ok(SQRT_2 * pre)
        }
        TranRegime::TwiceT2 => Ok(2.0 * SQRT_2 * pre),
    }
}

/// Sequential-modulation transverse sensitivity 4√2/(γkT2 sinθ √Φ), nT/√Hz.
pub fn delta_b_ts(inp: &BoundInputs, consts: &Constants) -> Result<f64> {
    inp.validate()?;
    let s = inp.theta.sin();
    if s.abs() < 1e-12 {
        return Err(Error::NoTransverseSensitivity);
    }
    Ok(4.0 * SQRT_2 / (consts.gamma_angular() * inp.gain_k * inp.t2 * s * inp.phi_pr().sqrt()))
}

/// M minimizing ρ(ω) at fixed Δt and T2, scanning 2..=m_max.
pub fn optimal_periods(inp: &BoundInputs, m_max: u64) -> Result<u64> {
    let mut best = (2, f64::INFINITY);
    for m in 2..=m_max {
        let z = inp.z();
        // Closed form loses precision near z^M → 1; fall back to the direct sum.
        let k1 = kappa1(m, z).unwrap_or_else(|_| kappa1_direct(m, z));
        let r = (m as f64 * k1).sqrt();
        if r < best.1 {
            best = (m, r);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub inputs: BoundInputs,
    pub phi_pr: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub rho_omega: f64,
    pub rho_a: f64,
    pub delta_b_tot_opt_nt: f64,
    pub delta_b_tot_nt: f64,
    pub delta_b_tran_nt: f64,
    pub delta_b_tran_2t2_nt: f64,
    pub delta_b_ts_nt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<montecarlo::McSummary>,
}

pub fn report(inp: &BoundInputs, consts: &Constants) -> Result<SensitivityReport> {
    Ok(SensitivityReport {
        inputs: *inp,
        phi_pr: inp.phi_pr(),
        kappa1: kappa1(inp.m_periods, inp.z())?,
        kappa2: kappa2(inp.m_periods, inp.z())?,
        rho_omega: freq_psd_bound(inp)?,
        rho_a: amp_psd_bound(inp)?,
        delta_b_tot_opt_nt: delta_b_tot(inp, consts)?,
        delta_b_tot_nt: delta_b_tot_general(inp, consts)?,
        delta_b_tran_nt: delta_b_tran(inp, consts, TranRegime::General)?,
        delta_b_tran_2t2_nt: delta_b_tran(inp, consts, TranRegime::TwiceT2)?,
        delta_b_ts_nt: delta_b_ts(inp, consts)?,
        monte_carlo: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{PI, TAU};

    #[test]
    fn gain_examples() {
        let (l, n, fwhm, f) = (0.005, 1e19, 2e9, 0.34);
        assert_eq!(optical_gain(l, n, 0.0, fwhm, f).unwrap(), 0.0);
        let kp = optical_gain(l, n, fwhm / 2.0, fwhm, f).unwrap();
        let km = optical_gain(l, n, -fwhm / 2.0, fwhm, f).unwrap();
        assert_relative_eq!(kp, -km);
        assert_relative_eq!(kp, 0.5 * l * R_E * C * f * n / fwhm, max_relative = 1e-12);
        for d in [0.1, 0.3, 0.7, 1.3, 3.0] {
            assert!(optical_gain(l, n, d * fwhm, fwhm, f).unwrap() <= kp * (1.0 + 1e-12));
        }
        assert_relative_eq!(optical_gain(10.0 * l, n, 1e9, fwhm, f).unwrap(), 10.0 * optical_gain(l, n, 1e9, fwhm, f).unwrap());
        assert!(optical_gain(l, n, 1.0, 0.0, f).is_err());
    }

    #[test]
    fn psd_examples() {
        assert_relative_eq!(shot_noise_psd(4e12), 0.5 * shot_noise_psd(1e12));
        let phi = photon_flux(2e-3, 795e-9);
        assert_relative_eq!(phi, 8.0e15, max_relative = 1e-3);
        assert_relative_eq!(shot_noise_psd(phi), 7.9e-9, max_relative = 1e-2);
        assert_eq!(shot_noise_psd(f64::INFINITY), 0.0);
    }

    /// Fisher information for a linear phase ramp sampled at m = 0..M-1 with
    /// equal unit variance: the slope variance is 12/(M³ − M).
    fn fisher_slope_variance(m: u64) -> f64 {
        let mf = m as f64;
        let mean = (mf - 1.0) / 2.0;
        1.0 / (0..m).map(|i| (i as f64 - mean).powi(2)).sum::<f64>()
    }

    #[test]
    fn kappa1_limits() {
        for m in [2u64, 5, 40, 300] {
            let mf = m as f64;
            assert_relative_eq!(fisher_slope_variance(m), 12.0 / (mf.powi(3) - mf), max_relative = 1e-12);
            let k = kappa1(m, 1.0 - 1e-3 / mf).unwrap();
            assert_relative_eq!(k, fisher_slope_variance(m), max_relative = 5e-3);
        }
        // Large M: direct series.
        for z in [0.9, 0.99] {
            assert_relative_eq!(kappa1(5000, z).unwrap(), kappa1_direct(5000, z), max_relative = 1e-9);
            let z2: f64 = z * z;
            assert_relative_eq!(kappa1(5000, z).unwrap(), (1.0 - z2).powi(3) / z2, max_relative = 1e-9);
        }
        assert!(kappa1(1, 0.5).is_err());
        assert!(kappa1(10, 1.0).is_err());
    }

    #[test]
    fn kappa2_examples() {
        assert_eq!(kappa2(1, 0.3).unwrap(), 2.0);
        let z: f64 = (-1e-6f64).exp();
        let m = 1000;
        assert_relative_eq!(kappa2(m, z).unwrap(), 2.0 / m as f64, max_relative = 1e-2);
        assert_relative_eq!(kappa2(100_000, 0.9).unwrap(), 2.0 * (1.0 - 0.81), max_relative = 1e-12);
    }

    fn nominal_inputs() -> BoundInputs {
        let dt = 1.0 / (7.0056 * 50_000.0);
        BoundInputs { rho_theta: 1e-8, gain_k: 0.1, t2: 3e-3, delta_t: dt, m_periods: 2000, omega_m: TAU * 480.0, theta: 21.1f64.to_radians() }
    }

    #[test]
    fn freq_bound_minimum_near_two_t2() {
        let inp = nominal_inputs();
        let m_opt = optimal_periods(&inp, 20_000).unwrap();
        let t_opt = m_opt as f64 * inp.delta_t;
        assert_relative_eq!(t_opt / inp.t2, 2.0, max_relative = 0.1);
    }

    #[test]
    fn amp_bound_monotone() {
        let mut inp = nominal_inputs();
        let mut prev = 0.0;
        for m in (1..8000).step_by(37) {
            inp.m_periods = m;
            let r = amp_psd_bound(&inp).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn transverse_forms_agree() {
        let k = Constants::default();
        let mut inp = nominal_inputs();
        inp.m_periods = (2.0 * inp.t2 / inp.delta_t).round() as u64;
        let g = delta_b_tran(&inp, &k, TranRegime::General).unwrap();
        let c = delta_b_tran(&inp, &k, TranRegime::TwiceT2).unwrap();
        assert_relative_eq!(g, c, max_relative = 0.05);

        inp.m_periods = 20;
        let g = delta_b_tran(&inp, &k, TranRegime::General).unwrap();
        let s = delta_b_tran(&inp, &k, TranRegime::Short).unwrap();
        assert_relative_eq!(g, s, max_relative = 0.01);
        inp.m_periods = 2000;
        assert!(delta_b_tran(&inp, &k, TranRegime::Short).is_err());

        let mut flat = inp;
        flat.theta = 0.0;
        assert_eq!(delta_b_tran(&flat, &k, TranRegime::General), Err(Error::NoTransverseSensitivity));
        assert_eq!(delta_b_ts(&flat, &k), Err(Error::NoTransverseSensitivity));
    }

    #[test]
    fn ts_comparison_at_pi_over_t2() {
        let k = Constants::default();
        let mut inp = nominal_inputs();
        inp.omega_m = PI / inp.t2;
        let r = delta_b_tran(&inp, &k, TranRegime::TwiceT2).unwrap() / delta_b_ts(&inp, &k).unwrap();
        assert_relative_eq!(r, PI / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn scaling_with_t2() {
        let k = Constants::default();
        let inp = nominal_inputs();
        let mut longer = inp;
        longer.t2 *= 2.0;
        assert_relative_eq!(delta_b_tot(&longer, &k).unwrap(), 0.5 * delta_b_tot(&inp, &k).unwrap());
        let mut short = inp;
        short.m_periods = 10;
        let mut short2 = short;
        short2.t2 *= 2.0;
        assert_relative_eq!(
            delta_b_tran(&short, &k, TranRegime::Short).unwrap(),
            delta_b_tran(&short2, &k, TranRegime::Short).unwrap()
        );
    }

    #[test]
    fn general_tot_near_optimum_constant() {
        // At the optimum, ρ(ω)/γ exceeds the 4/(γkT2√Φ) form by a fixed factor.
        let k = Constants::default();
        let mut inp = nominal_inputs();
        inp.m_periods = optimal_periods(&inp, 20_000).unwrap();
        let ratio = delta_b_tot_general(&inp, &k).unwrap() / delta_b_tot(&inp, &k).unwrap();
        assert_relative_eq!(ratio, 1.21, max_relative = 0.01);
    }
}
