//! Linear regression of τ(t) on {1, t, harmonics of ω_m, ω_hp line} and the
//! conversion of coefficients to fields.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::detection::PhaseShiftSeries;
use crate::error::{Error, Result};
use crate::model::{Constants, ShotPhaseConfig};

pub const N_PARAMS: usize = 8;
const RANK_TOL: f64 = 1e-10;

/// Coefficient order in [`FitResult::covariance`].
pub const PARAM_NAMES: [&str; N_PARAMS] = ["offset", "slope", "a1", "b1", "a2", "b2", "ah", "bh"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub omega_m: f64,
    pub omega_hp: f64,
    /// Exponential decay rate (1/s) applied to the ω_hp basis; `None` for plain sinusoids.
    pub hp_damping: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// s.
    pub offset: f64,
    /// s/s.
    pub slope: f64,
    /// sin/cos ω_m t amplitudes, s.
    pub a1: f64,
    pub b1: f64,
    /// sin/cos 2ω_m t amplitudes, s.
    pub a2: f64,
    pub b2: f64,
    /// sin/cos ω_hp t amplitudes, s.
    pub ah: f64,
    pub bh: f64,
    pub residual_rms: f64,
    pub n_points: usize,
    pub covariance: [[f64; N_PARAMS]; N_PARAMS],
    pub options: FitOptions,
}

impl FitResult {
    pub fn coefficients(&self) -> [f64; N_PARAMS] {
        [self.offset, self.slope, self.a1, self.b1, self.a2, self.b2, self.ah, self.bh]
    }

    pub fn std_err(&self, i: usize) -> f64 {
        self.covariance[i][i].max(0.0).sqrt()
    }

    /// Model value at time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let b = basis_row(&self.options, t, 0.0, 1.0);
        b.iter().zip(self.coefficients()).map(|(x, c)| x * c).sum()
    }
}

/// Basis row with the linear term centred at `tc` and scaled by `ts`.
/// The optional ω_hp damping is referenced to t = 0, the start of the window.
fn basis_row(o: &FitOptions, t: f64, tc: f64, ts: f64) -> [f64; N_PARAMS] {
    let (s1, c1) = (o.omega_m * t).sin_cos();
    let (s2, c2) = (2.0 * o.omega_m * t).sin_cos();
    let (sh, ch) = (o.omega_hp * t).sin_cos();
    let env = o.hp_damping.map_or(1.0, |g| (-g * t).exp());
    [1.0, (t - tc) / ts, s1, c1, s2, c2, env * sh, env * ch]
}

pub fn fit_phase_model(series: &PhaseShiftSeries, omega_m: f64, omega_hp: f64) -> Result<FitResult> {
    fit_phase_model_with(series, &FitOptions { omega_m, omega_hp, hp_damping: None })
}

pub fn fit_phase_model_with(series: &PhaseShiftSeries, opts: &FitOptions) -> Result<FitResult> {
    let n = series.samples.len();
    if n < N_PARAMS {
        return Err(Error::InsufficientData(format!("{n} points for {N_PARAMS} parameters")));
    }
    let duration = series.duration();
    if !(opts.omega_m * duration >= std::f64::consts::TAU) {
        return Err(Error::InsufficientData("series spans less than one modulation period".into()));
    }
    let t: Vec<f64> = series.samples.iter().map(|s| s.t).collect();
    let tc = t.iter().sum::<f64>() / n as f64;
    let ts = 0.5 * duration;

    let mut x = DMatrix::from_fn(n, N_PARAMS, |_, _| 0.0);
    for (i, &ti) in t.iter().enumerate() {
        let row = basis_row(opts, ti, tc, ts);
        for j in 0..N_PARAMS {
            x[(i, j)] = row[j];
        }
    }
    let y = DVector::from_iterator(n, series.samples.iter().map(|s| s.tau));

    // Equilibrate columns before the rank test.
    let norms: Vec<f64> = (0..N_PARAMS).map(|j| x.column(j).norm()).collect();
    if norms.iter().any(|&v| v == 0.0) {
        return Err(Error::RankDeficient(0.0));
    }
    let mut xn = x.clone();
    for j in 0..N_PARAMS {
        xn.column_mut(j).unscale_mut(norms[j]);
    }
    let svd = xn.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin / smax < RANK_TOL {
        return Err(Error::RankDeficient(smin / smax));
    }
    let beta_n = svd.solve(&y, 0.0).map_err(|e| Error::InsufficientData(e.to_string()))?;
    let resid = &y - &xn * &beta_n;
    let rss = resid.norm_squared();
    let dof = (n - N_PARAMS).max(1) as f64;
    let sigma2 = rss / dof;

    // (XnᵀXn)⁻¹ = V Σ⁻² Vᵀ.
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut inv = DMatrix::zeros(N_PARAMS, N_PARAMS);
    for k in 0..N_PARAMS {
        let w = 1.0 / (sv[k] * sv[k]);
        let vk = v_t.row(k);
        for i in 0..N_PARAMS {
            for j in 0..N_PARAMS {
                inv[(i, j)] += w * vk[i] * vk[j];
            }
        }
    }
    // Undo equilibration and the centring/scaling of t:
    // offset = c0 − c1·tc/ts, slope = c1/ts.
    let mut jac = DMatrix::<f64>::zeros(N_PARAMS, N_PARAMS);
    for j in 0..N_PARAMS {
        jac[(j, j)] = 1.0 / norms[j];
    }
    jac[(1, 1)] = 1.0 / (norms[1] * ts);
    jac[(0, 1)] = -tc / (norms[1] * ts);
    let beta = &jac * &beta_n;
    let cov = (&jac * inv * jac.transpose()) * sigma2;

    let mut covariance = [[0.0; N_PARAMS]; N_PARAMS];
    for i in 0..N_PARAMS {
        for j in 0..N_PARAMS {
            covariance[i][j] = 0.5 * (cov[(i, j)] + cov[(j, i)]);
        }
    }
    Ok(FitResult {
        offset: beta[0],
        slope: beta[1],
        a1: beta[2],
        b1: beta[3],
        a2: beta[4],
        b2: beta[5],
        ah: beta[6],
        bh: beta[7],
        residual_rms: (rss / n as f64).sqrt(),
        n_points: n,
        covariance,
        options: *opts,
    })
}

/// Transverse residual fields (nT) from the first-harmonic amplitudes of one shot.
///
/// For shot 1 τ ∝ −b_x sin ω_m t + b_y cos ω_m t; the other shots follow the
/// b_x/b_y columns of the sign table.
pub fn transverse_fields(fit: &FitResult, sf: f64, shot: &ShotPhaseConfig) -> (f64, f64) {
    (shot.signs.b_x as f64 * fit.a1 / sf, shot.signs.b_y as f64 * fit.b1 / sf)
}

/// Field equivalent (nT) of a fractional slope against a reference at `omega0`.
pub fn slope_to_field(slope: f64, omega0: f64, consts: &Constants) -> f64 {
    slope * omega0 / consts.gamma_angular()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::PhaseSample;
    use crate::model::shot_table;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::TAU;

    const WM: f64 = TAU * 480.0;
    const WHP: f64 = TAU * 1390.0;

    fn series(mut f: impl FnMut(f64) -> f64) -> PhaseShiftSeries {
        let dt = 1.0 / 350e3;
        let samples = (0..2187).map(|i| {
            let t = 1e-6 + i as f64 * dt;
            PhaseSample { t, tau: f(t) }
        });
        PhaseShiftSeries { samples: samples.collect(), reference_omega: TAU * 350e3 }
    }

    #[test]
    fn pure_ramp() {
        let c = 3.7e-7;
        let r = fit_phase_model(&series(|t| c * t), WM, WHP).unwrap();
        assert_relative_eq!(r.slope, c, max_relative = 1e-12);
        for v in [r.offset, r.a1, r.b1, r.a2, r.b2, r.ah, r.bh] {
            assert!(v.abs() < 1e-12 * c, "{v}");
        }
    }

    #[test]
    fn first_harmonic_amplitude() {
        let a = 2.53e-9 * 87.0;
        let r = fit_phase_model(&series(|t| a * (WM * t).sin()), WM, WHP).unwrap();
        assert_relative_eq!(r.a1, a, epsilon = 1e-6 * 1e-9);
        assert!(r.residual_rms < 1e-20);
    }

    #[test]
    fn recovers_all_coefficients() {
        let truth = [1e-7, -2e-6, 3e-8, -4e-8, 5e-9, 6e-9, -7e-10, 8e-10];
        let opts = FitOptions { omega_m: WM, omega_hp: WHP, hp_damping: None };
        let proto = FitResult {
            offset: truth[0],
            slope: truth[1],
            a1: truth[2],
            b1: truth[3],
            a2: truth[4],
            b2: truth[5],
            ah: truth[6],
            bh: truth[7],
            residual_rms: 0.0,
            n_points: 0,
            covariance: [[0.0; N_PARAMS]; N_PARAMS],
            options: opts,
        };
        let r = fit_phase_model(&series(|t| proto.eval(t)), WM, WHP).unwrap();
        for (got, want) in r.coefficients().iter().zip(truth) {
            assert_relative_eq!(*got, want, max_relative = 1e-9);
        }
    }

    #[test]
    fn damped_hp_basis() {
        let g = 300.0;
        let opts = FitOptions { omega_m: WM, omega_hp: WHP, hp_damping: Some(g) };
        let r = fit_phase_model_with(&series(|t| 2e-9 * (-g * t).exp() * (WHP * t).cos()), &opts).unwrap();
        assert_relative_eq!(r.bh, 2e-9, max_relative = 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_phase_model(&series(|t| t), WM, WM), Err(Error::RankDeficient(_))));
        let short = PhaseShiftSeries { samples: series(|t| t).samples[..7].to_vec(), reference_omega: 1.0 };
        assert!(matches!(fit_phase_model(&short, WM, WHP), Err(Error::InsufficientData(_))));
        let brief = PhaseShiftSeries { samples: series(|t| t).samples[..500].to_vec(), reference_omega: 1.0 };
        assert!(matches!(fit_phase_model(&brief, WM, WHP), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn noise_only_is_consistent_with_covariance() {
        let normal = Normal::new(0.0, 1e-9).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ser = series(|_| normal.sample(&mut rng));
            let r = fit_phase_model(&ser, WM, WHP).unwrap();
            for (i, c) in r.coefficients().iter().enumerate() {
                worst = worst.max(c.abs() / r.std_err(i));
            }
        }
        // 800 draws of a unit normal: the maximum stays well inside 4.5.
        assert!(worst < 4.5, "{worst}");
    }

    #[test]
    fn covariance_matches_scatter() {
        let normal = Normal::new(0.0, 1e-9).unwrap();
        let trials = 300;
        let mut draws = vec![Vec::new(); N_PARAMS];
        let mut pred = [0.0; N_PARAMS];
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let ser = series(|t| 1e-8 * (WM * t).cos() + normal.sample(&mut rng));
            let r = fit_phase_model(&ser, WM, WHP).unwrap();
            for i in 0..N_PARAMS {
                draws[i].push(r.coefficients()[i]);
                pred[i] += r.covariance[i][i] / trials as f64;
            }
        }
        for i in 0..N_PARAMS {
            let m = draws[i].iter().sum::<f64>() / trials as f64;
            let v = draws[i].iter().map(|x| (x - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
            assert_relative_eq!(v, pred[i], max_relative = 0.25);
            // Unbiased: mean error within 3 standard errors.
            let truth = if i == 3 { 1e-8 } else { 0.0 };
            assert!((m - truth).abs() < 3.0 * (pred[i] / trials as f64).sqrt(), "param {i}");
        }
    }

    #[test]
    fn transverse_sign_examples() {
        let sh = shot_table();
        let mut r = fit_phase_model(&series(|t| t * 1e-9), WM, WHP).unwrap();
        r.a1 = 220e-9;
        r.b1 = 0.0;
        let (bx, by) = transverse_fields(&r, 2.53e-9, &sh[0]);
        assert_relative_eq!(bx, -86.96, max_relative = 1e-3);
        assert_eq!(by, 0.0);
        r.a1 = 0.0;
        r.b1 = -220e-9;
        let (bx, by) = transverse_fields(&r, 2.53e-9, &sh[0]);
        assert_eq!(bx, 0.0);
        assert_relative_eq!(by, -86.96, max_relative = 1e-3);
        r.b1 = 0.0;
        assert_eq!(transverse_fields(&r, 2.53e-9, &sh[2]), (0.0, 0.0));
    }

    #[test]
    fn slope_field_examples() {
        let k = Constants::default();
        let w0 = TAU * 350e3;
        assert_eq!(slope_to_field(0.0, w0, &k), 0.0);
        let eps = 3e-6;
        assert_relative_eq!(slope_to_field(eps, w0, &k), eps * 350e3 / 7.0056, max_relative = 1e-12);
        let (bm, bz) = (18_000.0f64, 46_648.0f64);
        let th = bm.atan2(bz);
        let w0 = k.gamma_angular() * bm.hypot(bz);
        let slope = (1.0 - th.cos()) * WM / w0;
        assert_relative_eq!(slope_to_field(slope, w0, &k), 4.59, max_relative = 5e-3);
    }
}
