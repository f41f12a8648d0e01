//! End-to-end shots, four-shot blocks and panoramas, with the sign-table
//! decomposition of the fitted slopes and first harmonics.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{add_shot_noise, extract_phase, high_pass, probe_signal, PhaseShiftSeries, ProbeAxis, ProbeGeometry};
use crate::error::{Error, Result};
use crate::harmonic_fit::{fit_phase_model_with, slope_to_field, transverse_fields, FitOptions, FitResult};
use crate::model::{scale_factor, CellParams, Constants, FieldConfig, Rotation, ShotPhaseConfig};
use crate::spin_sim::{evolve_bloch, pump_reset, rf_start_relation, FnField, HeadingModel, RfStartRelation};
use crate::waveform::{BlockSchedule, EddyFilter, EddyModel, SwitchScheme, VectorSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOptions {
    /// Comparator threshold, signal units.
    pub threshold: f64,
    pub hysteresis: f64,
    /// Probe photon flux, photons/s; `None` disables shot noise.
    pub photon_flux: Option<f64>,
    /// Corner of the optional first-order high-pass before the comparator, Hz.
    pub high_pass_hz: Option<f64>,
    /// Offset of the reference oscillator from the nominal total field, nT.
    pub reference_detuning_nt: f64,
}

impl Default for DetectionOptions {
    fn default() -> Self {
        DetectionOptions { threshold: 0.0, hysteresis: 0.02, photon_flux: None, high_pass_hz: None, reference_detuning_nt: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// RK4 steps per Larmor period.
    pub steps_per_larmor: f64,
    /// Decay rate (1/s) for a damped ω_hp basis in the fit.
    pub hp_damping: Option<f64>,
    /// Keep each shot's phase series in the output.
    pub keep_series: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { steps_per_larmor: 100.0, hp_damping: None, keep_series: false }
    }
}

/// Eddy-filter state at the start of a panorama.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialEddy {
    /// Filter at zero.
    Rest,
    /// Steady state of the waveform that precedes the first shot.
    Settled,
    /// Steady state of the reversed rotation: the panorama begins with a direction flip.
    SettledReversed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub consts: Constants,
    /// Field amplitudes and residuals; the schedule supplies the start phases.
    pub field: FieldConfig,
    pub cell: CellParams,
    pub schedule: BlockSchedule,
    pub probe: ProbeGeometry,
    pub heading: HeadingModel,
    pub eddy: EddyModel,
    pub initial_eddy: InitialEddy,
    pub detection: DetectionOptions,
    pub sim: SimOptions,
}

impl Experiment {
    /// Noise-free, eddy-free, heading-free pipeline with a single manifold.
    pub fn ideal(field: FieldConfig) -> Self {
        Experiment {
            consts: Constants::default(),
            field,
            cell: CellParams { t2: 3e-3, polarization: 1.0, weight_f1: 0.0, pump_direction: [0.0, -1.0, 0.0] },
            schedule: BlockSchedule::default(),
            probe: ProbeGeometry::default(),
            heading: HeadingModel::off(),
            eddy: EddyModel::default(),
            initial_eddy: InitialEddy::Settled,
            detection: DetectionOptions::default(),
            sim: SimOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.consts.validate()?;
        self.field.validate()?;
        self.cell.validate()?;
        self.schedule.validate(&self.field)?;
        self.probe.validate()?;
        if self.eddy.enabled {
            self.eddy.validate()?;
        }
        if !(self.sim.steps_per_larmor >= 50.0) {
            return Err(Error::InvalidConfig("steps_per_larmor must be at least 50".into()));
        }
        if self.heading.b_hm < 0.0 {
            return Err(Error::InvalidConfig("b_hm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn b_tot(&self) -> f64 {
        self.field.b_tot()
    }

    /// Reference oscillator rate: the lab Larmor rate of the nominal total field plus detuning.
    pub fn reference_omega(&self) -> f64 {
        self.consts.gamma_angular() * (self.b_tot() + self.detection.reference_detuning_nt)
    }

    /// F=2/F=1 beat rate in a static field of the nominal magnitude.
    pub fn omega_hp(&self) -> f64 {
        self.consts.omega_hp(self.b_tot())
    }

    /// Beat rate under the rotating field. The two manifolds precess in
    /// opposite senses, so their geometric shifts add: ω_hp ∓ 2ω_m(1−cos θ),
    /// minus for counter-clockwise rotation.
    pub fn omega_hp_rotating(&self, direction: Rotation) -> f64 {
        self.omega_hp() - direction.sign() * 2.0 * self.field.omega_m * (1.0 - self.field.theta().cos())
    }

    /// Sample spacing and samples per shot; the count is a multiple of 4 so
    /// the default prepare window ends on a sample.
    fn sampling(&self) -> (f64, usize) {
        let t_l = std::f64::consts::TAU / self.field.nominal_larmor(&self.consts);
        let nominal = t_l / self.sim.steps_per_larmor;
        let n = ((self.schedule.shot_duration / nominal / 4.0).ceil() as usize) * 4;
        (self.schedule.shot_duration / n as f64, n)
    }

    fn shot_config(&self, i: usize) -> ShotPhaseConfig {
        match self.schedule.switch_scheme {
            SwitchScheme::None => self.schedule.shots[0],
            _ => self.schedule.shots[i % 4],
        }
    }

    fn field_with_phases(&self, shot: &ShotPhaseConfig) -> FieldConfig {
        self.field.with_phases(shot.phi_x, shot.phi_y)
    }

    fn new_filter(&self, dt: f64) -> Result<Option<EddyFilter>> {
        if !self.eddy.enabled {
            return Ok(None);
        }
        let mut f = EddyFilter::new(self.eddy, dt)?;
        let s = &self.schedule;
        let (phi_x, phi_y, t_ref) = match s.switch_scheme {
            SwitchScheme::None => (s.shots[0].phi_x, s.shots[0].phi_y, s.measure_start(0)),
            _ => (s.shots[3].phi_x, s.shots[3].phi_y, s.measure_start(3) - s.block_duration()),
        };
        match self.initial_eddy {
            InitialEddy::Rest => {}
            InitialEddy::Settled => f.settle(&self.field, phi_x, phi_y, t_ref, 0.0),
            InitialEddy::SettledReversed => f.settle(&self.field, phi_x, phi_y + PI, t_ref, 0.0),
        }
        Ok(Some(f))
    }

    /// Run one shot at global shot number `g` (block g/4, position g%4).
    fn run_shot_inner(&self, g: usize, filter: Option<&mut EddyFilter>, seed: u64) -> Result<ShotRecord> {
        let (dt, n_shot) = self.sampling();
        let i = g % 4;
        let k0 = (self.schedule.prepare_fraction * n_shot as f64).round() as usize;
        let n_meas = n_shot - k0;
        let shot_start = g as f64 * self.schedule.shot_duration;
        let block_start = (g / 4) as f64 * self.schedule.block_duration();
        // Block-relative time of the measurement start.
        let t_ms_block = shot_start - block_start + k0 as f64 * dt;
        let cfg = self.field;
        let sched = &self.schedule;

        let phase = self.shot_config(i);
        let relation = rf_start_relation(&phase, &self.cell.pump());
        let state = pump_reset(&self.cell, relation);
        let duration = (n_meas - 1) as f64 * dt;

        let traj = match filter {
            Some(f) => {
                let cmd = VectorSeries::sample(shot_start - block_start, dt, n_shot, |t| sched.commanded_field_periodic(&cfg, t));
                let at_cell = f.process(&cmd)?;
                let meas = VectorSeries { t0: 0.0, dt, values: at_cell.values[k0..].to_vec() };
                evolve_bloch(&state, &meas, &self.cell, &self.heading, &self.consts, 0.0, duration, dt)?
            }
            None => {
                let src = FnField(|t: f64| -> Vector3<f64> { sched.commanded_field_periodic(&cfg, t_ms_block + t) });
                evolve_bloch(&state, &src, &self.cell, &self.heading, &self.consts, 0.0, duration, dt)?
            }
        };

        let mut signal = probe_signal(&traj, &self.probe);
        if let Some(phi) = self.detection.photon_flux {
            let s = seed ^ (g as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            signal = add_shot_noise(&signal, phi, s)?;
        }
        if let Some(fc) = self.detection.high_pass_hz {
            signal = high_pass(&signal, fc);
        }
        let w_ref = self.reference_omega();
        let series = extract_phase(&signal, w_ref, self.detection.threshold, self.detection.hysteresis)?;
        let rotation = phase.rotation();
        let opts = FitOptions { omega_m: cfg.omega_m, omega_hp: self.omega_hp_rotating(rotation), hp_damping: self.sim.hp_damping };
        let fit = fit_phase_model_with(&series, &opts)?;
        let sf = scale_factor(&self.field_with_phases(&phase), &self.consts, rotation)?;
        let (b_x, b_y) = transverse_fields(&fit, sf, &phase);
        let slope_field = slope_to_field(fit.slope, w_ref, &self.consts);
        Ok(ShotRecord {
            global_index: g,
            block: g / 4,
            shot_index: phase.shot_index,
            time: shot_start + k0 as f64 * dt,
            phase,
            rotation,
            relation,
            scale_factor: sf,
            reference_omega: w_ref,
            b_x,
            b_y,
            slope_field,
            fit,
            series: if self.sim.keep_series { Some(series) } else { None },
        })
    }

    /// Run all shots of `n_blocks` blocks, keeping eddy state across shots.
    pub fn run_shots(&self, n_blocks: usize, seed: u64) -> Result<Vec<ShotRecord>> {
        self.validate()?;
        let n = 4 * n_blocks;
        let (dt, _) = self.sampling();
        match self.new_filter(dt)? {
            Some(mut f) => (0..n).map(|g| self.run_shot_inner(g, Some(&mut f), seed).map_err(|e| e.in_shot(g % 4 + 1))).collect(),
            None => (0..n)
                .into_par_iter()
                .map(|g| self.run_shot_inner(g, None, seed).map_err(|e| e.in_shot(g % 4 + 1)))
                .collect(),
        }
    }

    pub fn run_block(&self, seed: u64) -> Result<BlockSummary> {
        let shots = self.run_shots(1, seed)?;
        Ok(summarize_block(&shots, &self.field, &self.consts, self.probe.axis))
    }

    pub fn run_panorama(&self, n_blocks: usize, discard_shots: usize, seed: u64) -> Result<Panorama> {
        if n_blocks == 0 {
            return Err(Error::InvalidConfig("n_blocks must be at least 1".into()));
        }
        let shots = self.run_shots(n_blocks, seed)?;
        let blocks: Vec<BlockSummary> = shots.chunks(4).map(|c| summarize_block(c, &self.field, &self.consts, self.probe.axis)).collect();
        // Whole blocks are dropped when any of their shots falls in the discard range.
        let first = discard_shots.div_ceil(4);
        let aggregate = Aggregate::from_blocks(&blocks[first.min(blocks.len())..]);
        Ok(Panorama { blocks, shots, aggregate, discarded_blocks: first.min(n_blocks) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub global_index: usize,
    pub block: usize,
    /// 1 to 4.
    pub shot_index: u8,
    /// Start of the measurement window, s from the panorama start.
    pub time: f64,
    pub phase: ShotPhaseConfig,
    pub rotation: Rotation,
    pub relation: RfStartRelation,
    /// s/nT.
    pub scale_factor: f64,
    pub reference_omega: f64,
    /// Sign-corrected transverse fields, nT.
    pub b_x: f64,
    pub b_y: f64,
    /// Field equivalent of the fitted slope, nT. Positive when the
    /// precession is slower than the reference.
    pub slope_field: f64,
    pub fit: FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<PhaseShiftSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block: usize,
    pub b_x: f64,
    pub b_y: f64,
    pub dbz_plus_bsh: f64,
    pub b_berry: f64,
    pub b_dh: f64,
    /// (+,−,−,+)/4 combination; completes the slope basis and is zero in the ideal model.
    pub b_cross: f64,
    pub alpha_est: f64,
    pub fits: Vec<FitResult>,
}

impl BlockSummary {
    /// Per-shot slopes rebuilt from the decomposition.
    pub fn recompose(&self) -> [f64; 4] {
        let (m, b, d, c) = (self.dbz_plus_bsh, self.b_berry, self.b_dh, self.b_cross);
        [m + b + d + c, m - b + d - c, m + b - d - c, m - b - d + c]
    }
}

/// Sign-table decomposition of four consecutive shots.
pub fn summarize_block(shots: &[ShotRecord], cfg: &FieldConfig, consts: &Constants, axis: ProbeAxis) -> BlockSummary {
    let s: Vec<f64> = shots.iter().map(|r| r.slope_field).collect();
    let bx = shots.iter().map(|r| r.b_x).sum::<f64>() / 4.0;
    let by = shots.iter().map(|r| r.b_y).sum::<f64>() / 4.0;
    let probe_axis: Vec<f64> = shots
        .iter()
        .map(|r| match axis {
            ProbeAxis::X => r.b_x,
            ProbeAxis::Y => r.b_y,
        })
        .collect();
    BlockSummary {
        block: shots[0].block,
        b_x: bx,
        b_y: by,
        dbz_plus_bsh: (s[0] + s[1] + s[2] + s[3]) / 4.0,
        b_berry: (s[0] - s[1] + s[2] - s[3]) / 4.0,
        b_dh: (s[0] + s[1] - s[2] - s[3]) / 4.0,
        b_cross: (s[0] - s[1] - s[2] + s[3]) / 4.0,
        alpha_est: estimate_alpha(&probe_axis, cfg, consts),
        fits: shots.iter().map(|r| r.fit.clone()).collect(),
    }
}

/// Probe tilt from the clockwise-minus-counter-clockwise difference of the
/// transverse field along the probe axis (shots in table order).
///
/// The fictitious field is −(ω_m/γ)tan α for counter-clockwise shots and
/// +(ω_m/γ)tan α for clockwise shots.
pub fn estimate_alpha(probe_axis_fields: &[f64], cfg: &FieldConfig, consts: &Constants) -> f64 {
    let b = probe_axis_fields;
    let fict = ((b[1] + b[3]) - (b[0] + b[2])) / 4.0;
    (fict * consts.gamma_angular() / cfg.omega_m).atan()
}

/// δb_z and static heading from runs with the pump direction reversed.
pub fn split_static_heading(normal: &BlockSummary, reversed: &BlockSummary) -> (f64, f64) {
    let dbz = 0.5 * (normal.dbz_plus_bsh + reversed.dbz_plus_bsh);
    let bsh = 0.5 * (normal.dbz_plus_bsh - reversed.dbz_plus_bsh);
    (dbz, bsh)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub b_x: f64,
    pub b_y: f64,
    pub dbz_plus_bsh: f64,
    pub b_berry: f64,
    pub b_dh: f64,
    pub alpha_est: f64,
}

impl SummaryStats {
    fn of(b: &BlockSummary) -> [f64; 6] {
        [b.b_x, b.b_y, b.dbz_plus_bsh, b.b_berry, b.b_dh, b.alpha_est]
    }

    fn from_array(a: [f64; 6]) -> Self {
        SummaryStats { b_x: a[0], b_y: a[1], dbz_plus_bsh: a[2], b_berry: a[3], b_dh: a[4], alpha_est: a[5] }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_blocks: usize,
    pub mean: SummaryStats,
    /// Sample standard deviation across blocks (zero for a single block).
    pub std: SummaryStats,
}

impl Aggregate {
    pub fn from_blocks(blocks: &[BlockSummary]) -> Self {
        let n = blocks.len();
        if n == 0 {
            return Aggregate::default();
        }
        let mut mean = [0.0; 6];
        for b in blocks {
            for (m, v) in mean.iter_mut().zip(SummaryStats::of(b)) {
                *m += v / n as f64;
            }
        }
        let mut var = [0.0; 6];
        if n > 1 {
            for b in blocks {
                for ((s, v), m) in var.iter_mut().zip(SummaryStats::of(b)).zip(mean) {
                    *s += (v - m).powi(2) / (n - 1) as f64;
                }
            }
        }
        Aggregate { n_blocks: n, mean: SummaryStats::from_array(mean), std: SummaryStats::from_array(var.map(f64::sqrt)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panorama {
    pub blocks: Vec<BlockSummary>,
    pub shots: Vec<ShotRecord>,
    pub aggregate: Aggregate,
    pub discarded_blocks: usize,
}

impl Panorama {
    /// CSV of per-shot slopes and harmonic amplitudes.
    pub fn write_shots_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "shot,block,index,time_s,b_x_nT,b_y_nT,slope_field_nT,offset_s,slope,a1_s,b1_s,a2_s,b2_s,ah_s,bh_s,residual_rms_s")?;
        for r in &self.shots {
            let f = &r.fit;
            writeln!(
                w,
                "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                r.global_index, r.block, r.shot_index, r.time, r.b_x, r.b_y, r.slope_field, f.offset, f.slope, f.a1, f.b1, f.a2, f.b2, f.ah, f.bh, f.residual_rms
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub tau: f64,
    pub amplitude: f64,
    pub offset: f64,
}

/// Least-squares fit of y = A·e^{−(t−t₀)/τ} + C, with t₀ the first time.
///
/// A and C are solved linearly for each τ; τ is found on a logarithmic grid
/// spanning the sample spacing to ten times the record and refined by
/// golden-section search.
pub fn fit_decay(t: &[f64], y: &[f64]) -> Result<DecayFit> {
    let n = t.len().min(y.len());
    if n < 4 {
        return Err(Error::InsufficientData("decay fit needs at least 4 points".into()));
    }
    let t0 = t[0];
    let span = t[n - 1] - t0;
    if !(span > 0.0) {
        return Err(Error::InsufficientData("decay fit needs increasing times".into()));
    }
    let solve = |tau: f64| -> (f64, f64, f64) {
        let (mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let e = (-(t[i] - t0) / tau).exp();
            se += e;
            see += e * e;
            sy += y[i];
            sey += e * y[i];
        }
        let nf = n as f64;
        let det = nf * see - se * se;
        if det.abs() < 1e-300 {
            return (0.0, sy / nf, f64::INFINITY);
        }
        let a = (nf * sey - se * sy) / det;
        let c = (see * sy - se * sey) / det;
        let rss = (0..n).map(|i| (y[i] - a * (-(t[i] - t0) / tau).exp() - c).powi(2)).sum();
        (a, c, rss)
    };
    let (lo, hi) = ((span / (n as f64 * 10.0)).ln(), (10.0 * span).ln());
    let steps = 400;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=steps {
        let lt = lo + (hi - lo) * i as f64 / steps as f64;
        let r = solve(lt.exp()).2;
        if r < best.1 {
            best = (lt, r);
        }
    }
    let h = (hi - lo) / steps as f64;
    let (mut a, mut b) = (best.0 - h, best.0 + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c1 = b - g * (b - a);
        let c2 = a + g * (b - a);
        if solve(c1.exp()).2 < solve(c2.exp()).2 {
            b = c2;
        } else {
            a = c1;
        }
    }
    let tau = (0.5 * (a + b)).exp();
    if (tau.ln() - hi).abs() < 2.0 * h {
        return Err(Error::OutsideValidity("sequence does not decay within the record".into()));
    }
    let (amplitude, offset, _) = solve(tau);
    Ok(DecayFit { tau, amplitude, offset })
}
