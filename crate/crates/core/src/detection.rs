//! Probe signal, photon shot noise and zero-crossing phase extraction.
//!
//! Noise convention: the shot-noise PSD ρ_Θ is one-sided, and a white
//! sequence with per-sample standard deviation σ = ρ_Θ/√(2·dt) has that
//! one-sided density. The same convention is used by [`crate::sensitivity`].

use std::f64::consts::TAU;
use std::io::{self, Write};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensitivity::shot_noise_psd;
use crate::spin_sim::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeAxis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeGeometry {
    /// Tilt of the probe beam from its transverse axis towards +z, rad.
    pub alpha: f64,
    /// Optical rotation per unit spin projection, rad.
    pub gain_k: f64,
    pub axis: ProbeAxis,
}

impl Default for ProbeGeometry {
    fn default() -> Self {
        ProbeGeometry { alpha: 0.0, gain_k: 1.0, axis: ProbeAxis::X }
    }
}

impl ProbeGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidConfig("|alpha| must be below 90°".into()));
        }
        if !(self.gain_k > 0.0) {
            return Err(Error::InvalidConfig("gain_k must be positive".into()));
        }
        Ok(())
    }

    pub fn direction(&self) -> Vector3<f64> {
        let (s, c) = self.alpha.sin_cos();
        match self.axis {
            ProbeAxis::X => Vector3::new(c, 0.0, s),
            ProbeAxis::Y => Vector3::new(0.0, c, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSeries {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl ScalarSeries {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub t: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseShiftSeries {
    pub samples: Vec<PhaseSample>,
    pub reference_omega: f64,
}

impl PhaseShiftSeries {
    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// CSV with columns `t_s,tau_s`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,tau_s")?;
        for s in &self.samples {
            writeln!(w, "{:.12e},{:.9e}", s.t, s.tau)?;
        }
        Ok(())
    }
}

/// k·(S · probe direction), summed over both manifolds.
pub fn probe_signal(traj: &Trajectory, geom: &ProbeGeometry) -> ScalarSeries {
    let d = geom.direction() * geom.gain_k;
    let values = (0..traj.len()).map(|k| traj.total(k).dot(&d)).collect();
    ScalarSeries { t0: traj.t0, dt: traj.dt, values }
}

/// Add white Gaussian rotation noise for photon flux `phi_pr` (photons/s).
pub fn add_shot_noise(signal: &ScalarSeries, phi_pr: f64, seed: u64) -> Result<ScalarSeries> {
    if !(phi_pr > 0.0) {
        return Err(Error::InvalidConfig("photon flux must be positive".into()));
    }
    let sigma = shot_noise_psd(phi_pr) / (2.0 * signal.dt).sqrt();
    if sigma == 0.0 {
        return Ok(signal.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = signal.values.iter().map(|v| v + normal.sample(&mut rng)).collect();
    Ok(ScalarSeries { values, ..*signal })
}

/// First-order high-pass (RC) with corner `cutoff_hz`.
pub fn high_pass(signal: &ScalarSeries, cutoff_hz: f64) -> ScalarSeries {
    let rc = 1.0 / (TAU * cutoff_hz);
    let a = rc / (rc + signal.dt);
    let mut out = Vec::with_capacity(signal.len());
    let mut y = 0.0;
    let mut prev = signal.values.first().copied().unwrap_or(0.0);
    for &x in &signal.values {
        y = a * (y + x - prev);
        prev = x;
        out.push(y);
    }
    ScalarSeries { values: out, ..*signal }
}

/// Upward crossings of `threshold` with a Schmitt re-arm `hysteresis` below it.
pub fn upward_crossings(signal: &ScalarSeries, threshold: f64, hysteresis: f64) -> Vec<f64> {
    let v = &signal.values;
    let rearm = threshold - hysteresis.abs();
    let mut armed = v.first().is_some_and(|&x| x < threshold);
    let mut out = Vec::new();
    for k in 1..v.len() {
        if armed && v[k - 1] < threshold && v[k] >= threshold {
            let f = (threshold - v[k - 1]) / (v[k] - v[k - 1]);
            out.push(signal.time(k - 1) + f * signal.dt);
            armed = false;
        } else if !armed && v[k] < rearm {
            armed = true;
        }
    }
    out
}

/// Phase shift of the signal against a reference oscillator at `reference_omega`.
///
/// τ = t_signal − t_reference for each upward signal crossing, paired with
/// the nearest reference crossing and unwrapped. Positive τ growth means the
/// signal runs slower than the reference. The reference is phased so its
/// first crossing coincides with the first signal crossing; an absolute
/// phase is not observable and the fit absorbs it in the offset.
pub fn extract_phase(signal: &ScalarSeries, reference_omega: f64, threshold: f64, hysteresis: f64) -> Result<PhaseShiftSeries> {
    extract_phase_anchored(signal, reference_omega, threshold, hysteresis, None)
}

/// As [`extract_phase`] with the reference's crossing grid anchored at `origin` when given.
pub fn extract_phase_anchored(
    signal: &ScalarSeries,
    reference_omega: f64,
    threshold: f64,
    hysteresis: f64,
    origin: Option<f64>,
) -> Result<PhaseShiftSeries> {
    if !(reference_omega > 0.0) {
        return Err(Error::InvalidConfig("reference frequency must be positive".into()));
    }
    let period = TAU / reference_omega;
    let head = ((period / signal.dt).ceil() as usize + 1).min(signal.len());
    let amp0 = signal.values[..head].iter().fold(f64::MIN, |m, &v| m.max(v));
    if head == 0 || !(amp0 > threshold + hysteresis.abs()) {
        return Err(Error::SignalLost { t: signal.t0 });
    }
    let crossings = upward_crossings(signal, threshold, hysteresis);
    if crossings.len() < 2 {
        return Err(Error::NoCrossings);
    }
    let mean_interval = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    if (mean_interval / period - 1.0).abs() > 0.2 {
        return Err(Error::ReferenceMismatch { reference_hz: 1.0 / period, signal_hz: 1.0 / mean_interval });
    }
    for w in crossings.windows(2) {
        if w[1] - w[0] > 1.5 * period {
            return Err(Error::SignalLost { t: w[0] });
        }
    }
    let t_origin = origin.unwrap_or(crossings[0]);
    let mut samples = Vec::with_capacity(crossings.len());
    let mut prev: Option<f64> = None;
    for &t in &crossings {
        let rel = t - t_origin;
        let mut tau = rel - period * (rel / period).round();
        if let Some(p) = prev {
            tau += period * ((p - tau) / period).round();
        }
        prev = Some(tau);
        samples.push(PhaseSample { t, tau });
    }
    Ok(PhaseShiftSeries { samples, reference_omega })
}

/// Frequency (Hz) of the strongest spectral line of τ(t) in [`f_lo`, `f_hi`].
///
/// The series is detrended (offset and slope), and `remove` lists angular
/// frequencies whose sine/cosine components are projected out first.
/// The captured energy is scanned on a grid four times finer than the
/// Rayleigh resolution and the maximum refined by golden-section search.
pub fn spectral_peak(series: &PhaseShiftSeries, f_lo: f64, f_hi: f64, remove: &[f64]) -> Result<f64> {
    let n = series.samples.len();
    if n < 8 || !(f_hi > f_lo) || !(f_lo > 0.0) {
        return Err(Error::InsufficientData("spectral scan needs >= 8 samples and f_hi > f_lo > 0".into()));
    }
    let t: Vec<f64> = series.samples.iter().map(|s| s.t).collect();
    let t_mid = 0.5 * (t[0] + t[n - 1]);
    let y: Vec<f64> = series.samples.iter().map(|s| s.tau).collect();
    // Detrend by least squares on {1, t, sin/cos of the removed lines}.
    let p = 2 + 2 * remove.len();
    let x = nalgebra::DMatrix::from_fn(n, p, |i, j| {
        let tt = t[i] - t_mid;
        match j {
            0 => 1.0,
            1 => tt,
            _ => {
                let w = remove[(j - 2) / 2];
                if j % 2 == 0 {
                    (w * t[i]).sin()
                } else {
                    (w * t[i]).cos()
                }
            }
        }
    });
    let yv = nalgebra::DVector::from_vec(y);
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(&yv, 1e-12).map_err(|e| Error::InsufficientData(e.to_string()))?;
    let r = &yv - &x * beta;
    let u = svd.u.as_ref().expect("requested U");
    // Energy captured by a sinusoid at f, after projecting its sine and
    // cosine columns off the detrend basis: the least-squares tone estimator.
    let power = |f: f64| {
        let w = TAU * f;
        let mut sv = nalgebra::DVector::zeros(n);
        let mut cv = nalgebra::DVector::zeros(n);
        for i in 0..n {
            let (si, ci) = (w * t[i]).sin_cos();
            sv[i] = si;
            cv[i] = ci;
        }
        let sv = &sv - u * (u.transpose() * &sv);
        let cv = &cv - u * (u.transpose() * &cv);
        let (rs, rc) = (r.dot(&sv), r.dot(&cv));
        let (ss, sc, cc) = (sv.dot(&sv), sv.dot(&cv), cv.dot(&cv));
        let det = ss * cc - sc * sc;
        if det <= 0.0 {
            return 0.0;
        }
        (rs * rs * cc - 2.0 * rs * rc * sc + rc * rc * ss) / det
    };
    let span = t[n - 1] - t[0];
    let step = 0.25 / span;
    let m = ((f_hi - f_lo) / step).ceil() as usize + 1;
    let (mut best_f, mut best_p) = (f_lo, f64::MIN);
    for i in 0..m {
        let f = (f_lo + i as f64 * step).min(f_hi);
        let pw = power(f);
        if pw > best_p {
            best_p = pw;
            best_f = f;
        }
    }
    let (mut a, mut b) = ((best_f - step).max(f_lo), (best_f + step).min(f_hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c1 = b - g * (b - a);
        let c2 = a + g * (b - a);
        if power(c1) > power(c2) {
            b = c2;
        } else {
            a = c1;
        }
    }
    Ok(0.5 * (a + b))
}
