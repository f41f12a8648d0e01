//! One analysis per scenario mode. Each returns the summary document, flat
//! metrics for sweeps, and any plot-ready data files.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rayon::prelude::*;
use rotmag_core::detection::{add_shot_noise, extract_phase, probe_signal, spectral_peak};
use rotmag_core::fourshot::{fit_decay, summarize_block, Experiment, ShotRecord};
use rotmag_core::sensitivity::montecarlo::{frequency_mc, McConfig};
use rotmag_core::sensitivity::report;
use rotmag_core::spin_sim::{evolve_bloch, pump_reset, rf_start_relation, HeadingModel, RfStartRelation};
use rotmag_core::systematics::{budget as oracle_budget, dynamic_heading, probe_heading_field};
use rotmag_core::waveform::{BlockSchedule, SwitchScheme};
use rotmag_core::Rotation;
use serde::Serialize;
use serde_json::{json, Value};

use crate::scenario::{Mode, Scenario};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub stddev: f64,
}

fn metric(name: impl Into<String>, value: f64) -> Metric {
    Metric { name: name.into(), value, stddev: 0.0 }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub summary: Value,
    pub metrics: Vec<Metric>,
    pub files: Vec<(String, Vec<u8>)>,
}

fn num(e: rotmag_core::Error) -> CliError {
    CliError::Numeric(e)
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

pub fn run(s: &Scenario) -> Result<Outcome, CliError> {
    match s.mode {
        Mode::Panorama => panorama(s),
        Mode::Calibration => calibration(s),
        Mode::DynamicHeading => dynamic_heading_table(s),
        Mode::EddyDecay => eddy_decay(s),
        Mode::SwitchComparison => switch_comparison(s),
        Mode::HyperfineBeat => hyperfine_beat(s),
        Mode::ProbeHeading => probe_heading(s),
        Mode::Budget => budget(s),
        Mode::Sensitivity => sensitivity(s),
    }
}

fn panorama(s: &Scenario) -> Result<Outcome, CliError> {
    let e = s.experiment()?;
    let p = e.run_panorama(s.blocks, s.discard_shots, s.seed).map_err(num)?;
    let a = &p.aggregate;
    let metrics = [
        ("b_x_nt", a.mean.b_x, a.std.b_x),
        ("b_y_nt", a.mean.b_y, a.std.b_y),
        ("dbz_plus_bsh_nt", a.mean.dbz_plus_bsh, a.std.dbz_plus_bsh),
        ("b_berry_nt", a.mean.b_berry, a.std.b_berry),
        ("b_dh_nt", a.mean.b_dh, a.std.b_dh),
        ("alpha_est_rad", a.mean.alpha_est, a.std.alpha_est),
    ]
    .into_iter()
    .map(|(n, v, sd)| Metric { name: n.into(), value: v, stddev: sd })
    .collect();
    let blocks: Vec<Value> = p
        .blocks
        .iter()
        .map(|b| {
            let mut v = to_json(b);
            v.as_object_mut().expect("object").remove("fits");
            v
        })
        .collect();
    let mut files = Vec::new();
    if s.outputs.shots_csv {
        let mut buf = Vec::new();
        p.write_shots_csv(&mut buf).expect("write to memory");
        files.push(("shots.csv".into(), buf));
    }
    for r in &p.shots {
        if let Some(series) = &r.series {
            let mut buf = Vec::new();
            series.write_csv(&mut buf).expect("write to memory");
            files.push((format!("series/shot_{:05}.csv", r.global_index), buf));
        }
    }
    Ok(Outcome {
        summary: json!({ "aggregate": a, "discarded_blocks": p.discarded_blocks, "blocks": blocks }),
        metrics,
        files,
    })
}

/// Run points in parallel when no state carries between runs.
fn map_points<T: Send, R: Send>(parallel: bool, items: Vec<T>, f: impl Fn(T) -> Result<R, CliError> + Sync + Send) -> Result<Vec<R>, CliError> {
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn calibration(s: &Scenario) -> Result<Outcome, CliError> {
    let base = s.experiment()?;
    let values: Vec<f64> = s.calibration.as_ref().expect("checked").b_y.iter().map(|f| f.0).collect();
    let rows = map_points(!base.eddy.enabled, values.clone(), |b_y| {
        let mut e = base.clone();
        e.field.b_y_res = b_y;
        let shots = e.run_shots(1, s.seed).map_err(num)?;
        let amp = shots.iter().map(|r| r.b_y * r.scale_factor).sum::<f64>() / 4.0;
        let sf = shots.iter().map(|r| r.scale_factor).sum::<f64>() / 4.0;
        let block = summarize_block(&shots, &e.field, &e.consts, e.probe.axis);
        Ok((amp, sf, block.b_y))
    })?;
    let amps: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (slope, intercept) = line_fit(&values, &amps);
    let resid = values.iter().zip(&amps).map(|(x, y)| (y - slope * x - intercept).abs()).fold(0.0, f64::max);
    let mut csv = String::from("b_y_nT,amplitude_s,recovered_b_y_nT\n");
    for (b, r) in values.iter().zip(&rows) {
        writeln!(csv, "{b:.9e},{:.9e},{:.9e}", r.0, r.2).unwrap();
    }
    let oracle = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let metrics = vec![
        metric("slope_ns_per_nt", slope * 1e9),
        metric("intercept_ns", intercept * 1e9),
        metric("oracle_ns_per_nt", oracle * 1e9),
        metric("max_residual_ns", resid * 1e9),
    ];
    Ok(Outcome {
        summary: json!({ "slope_ns_per_nt": slope * 1e9, "intercept_ns": intercept * 1e9, "oracle_ns_per_nt": oracle * 1e9, "max_residual_ns": resid * 1e9, "points": values.len() }),
        metrics,
        files: vec![("calibration.csv".into(), csv.into_bytes())],
    })
}

/// Heading on minus heading off, per shot, for one pump direction.
fn heading_shifts(base: &Experiment, pump: [f64; 3], seed: u64) -> Result<(Vec<ShotRecord>, Vec<ShotRecord>), CliError> {
    let mut e = base.clone();
    e.cell.pump_direction = pump;
    e.heading = HeadingModel::off();
    let off = e.run_shots(1, seed).map_err(num)?;
    e.heading = if base.heading.enabled { base.heading } else { HeadingModel::from_cell(&e.cell, e.b_tot(), &e.consts) };
    let on = e.run_shots(1, seed).map_err(num)?;
    Ok((on, off))
}

fn dynamic_heading_table(s: &Scenario) -> Result<Outcome, CliError> {
    let base = s.experiment()?;
    // Shot 1 starts with the rotating field along +x: a +x pump starts the
    // spin along it, a -y pump across it.
    let (par_on, par_off) = heading_shifts(&base, [1.0, 0.0, 0.0], s.seed)?;
    let (per_on, per_off) = heading_shifts(&base, [0.0, -1.0, 0.0], s.seed)?;
    let bhm = if base.heading.enabled { base.heading.b_hm } else { HeadingModel::from_cell(&base.cell, base.b_tot(), &base.consts).b_hm };
    let theta = base.field.theta();
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let (mut mean_par, mut mean_per, mut leak) = (0.0, 0.0, 0.0f64);
    for i in 0..4 {
        let par = par_on[i].slope_field - par_off[i].slope_field;
        let per = per_on[i].slope_field - per_off[i].slope_field;
        for (on, off) in [(&par_on[i], &par_off[i]), (&per_on[i], &per_off[i])] {
            leak = leak.max((on.b_x - off.b_x).abs()).max((on.b_y - off.b_y).abs());
        }
        let shot = &base.schedule.shots[i];
        let oracle = dynamic_heading(bhm, theta, RfStartRelation::Parallel, shot.start_sign());
        mean_par += par / 4.0;
        mean_per += per / 4.0;
        rows.push(json!({
            "shot": shot.shot_index,
            "rotation": par_on[i].rotation,
            "start_sign": shot.start_sign(),
            "parallel": { "relation": par_on[i].relation, "b_dh_nt": par, "oracle_nt": oracle, "d_b_x_nt": par_on[i].b_x - par_off[i].b_x, "d_b_y_nt": par_on[i].b_y - par_off[i].b_y },
            "perpendicular": { "relation": per_on[i].relation, "b_dh_nt": per, "oracle_nt": 0.0, "d_b_x_nt": per_on[i].b_x - per_off[i].b_x, "d_b_y_nt": per_on[i].b_y - per_off[i].b_y },
        }));
        metrics.push(metric(format!("parallel_shot{}_nt", i + 1), par));
        metrics.push(metric(format!("perpendicular_shot{}_nt", i + 1), per));
    }
    metrics.push(metric("parallel_mean_nt", mean_par));
    metrics.push(metric("perpendicular_mean_nt", mean_per));
    metrics.push(metric("max_transverse_leakage_nt", leak));
    Ok(Outcome {
        summary: json!({
            "b_hm_nt": bhm,
            "theta_deg": theta.to_degrees(),
            "shots": rows,
            "four_shot_mean": { "parallel_nt": mean_par, "perpendicular_nt": mean_per },
            "max_transverse_leakage_nt": leak,
        }),
        metrics,
        files: Vec::new(),
    })
}

fn eddy_decay(s: &Scenario) -> Result<Outcome, CliError> {
    let e = s.experiment()?;
    if !e.eddy.enabled || e.schedule.switch_scheme != SwitchScheme::None {
        return Err(CliError::Config("eddy-decay needs eddy.enabled = true and schedule.switch = \"none\"".into()));
    }
    let p = e.run_panorama(s.blocks, s.discard_shots, s.seed).map_err(num)?;
    let t: Vec<f64> = p.shots.iter().map(|r| r.time).collect();
    let y: Vec<f64> = p.shots.iter().map(|r| r.b_y).collect();
    let fit = fit_decay(&t, &y).map_err(num)?;
    let mut csv = String::from("time_s,b_x_nT,b_y_nT\n");
    for r in &p.shots {
        writeln!(csv, "{:.9e},{:.9e},{:.9e}", r.time, r.b_x, r.b_y).unwrap();
    }
    Ok(Outcome {
        summary: json!({ "tau_ms": fit.tau * 1e3, "amplitude_nt": fit.amplitude, "offset_nt": fit.offset, "shots": p.shots.len() }),
        metrics: vec![metric("tau_ms", fit.tau * 1e3), metric("amplitude_nt", fit.amplitude), metric("offset_nt", fit.offset)],
        files: vec![("decay.csv".into(), csv.into_bytes())],
    })
}

fn switch_comparison(s: &Scenario) -> Result<Outcome, CliError> {
    let base = s.experiment()?;
    if !base.eddy.enabled {
        return Err(CliError::Config("switch-comparison needs eddy.enabled = true".into()));
    }
    let offsets = |scheme: SwitchScheme| -> Result<Vec<(f64, f64)>, CliError> {
        let mut e = base.clone();
        e.schedule = BlockSchedule { switch_scheme: scheme, ..base.schedule.clone() };
        e.eddy.enabled = false;
        let clean = e.run_shots(1, s.seed).map_err(num)?;
        e.eddy.enabled = true;
        let p = e.run_panorama(s.blocks, s.discard_shots, s.seed).map_err(num)?;
        let last = &p.shots[p.shots.len() - 4..];
        Ok(last.iter().zip(&clean).map(|(a, b)| (a.b_x - b.b_x, a.b_y - b.b_y)).collect())
    };
    let sine = offsets(SwitchScheme::Sine)?;
    let cosine = offsets(SwitchScheme::Cosine)?;
    let peak = |d: &[(f64, f64)]| d.iter().map(|v| v.0.hypot(v.1)).fold(0.0, f64::max);
    let mean = |d: &[(f64, f64)]| {
        let (x, y) = d.iter().fold((0.0, 0.0), |a, v| (a.0 + v.0 / 4.0, a.1 + v.1 / 4.0));
        x.hypot(y)
    };
    let mut csv = String::from("scheme,shot,d_b_x_nT,d_b_y_nT\n");
    for (name, d) in [("sine", &sine), ("cosine", &cosine)] {
        for (i, v) in d.iter().enumerate() {
            writeln!(csv, "{name},{},{:.9e},{:.9e}", i + 1, v.0, v.1).unwrap();
        }
    }
    let ratio = peak(&sine) / peak(&cosine);
    let suppression = peak(&cosine) / mean(&cosine);
    Ok(Outcome {
        summary: json!({
            "sine_peak_nt": peak(&sine),
            "cosine_peak_nt": peak(&cosine),
            "sine_over_cosine": ratio,
            "cosine_four_shot_mean_nt": mean(&cosine),
            "sine_b_y_nt": sine.iter().map(|v| v.1).collect::<Vec<_>>(),
        }),
        metrics: vec![
            metric("sine_peak_nt", peak(&sine)),
            metric("cosine_peak_nt", peak(&cosine)),
            metric("sine_over_cosine", ratio),
            metric("cosine_four_shot_suppression", suppression),
        ],
        files: vec![("switch.csv".into(), csv.into_bytes())],
    })
}

fn hyperfine_beat(s: &Scenario) -> Result<Outcome, CliError> {
    let e = s.experiment()?;
    let f_hp = e.omega_hp() / TAU;
    let (lo, hi) = (0.4 * f_hp, 2.0 * f_hp);
    if e.field.b_m == 0.0 {
        // Static field: one free decay over the measurement window.
        let w0 = e.field.nominal_larmor(&e.consts);
        let dt = TAU / w0 / e.sim.steps_per_larmor;
        let s0 = pump_reset(&e.cell, RfStartRelation::Perpendicular);
        let tr = evolve_bloch(&s0, &e.field, &e.cell, &e.heading, &e.consts, 0.0, e.schedule.measure_duration(), dt).map_err(num)?;
        let mut sig = probe_signal(&tr, &e.probe);
        if let Some(phi) = e.detection.photon_flux {
            sig = add_shot_noise(&sig, phi, s.seed).map_err(num)?;
        }
        let series = extract_phase(&sig, w0, e.detection.threshold, e.detection.hysteresis).map_err(num)?;
        let peak = spectral_peak(&series, lo, hi, &[]).map_err(num)?;
        let mut buf = Vec::new();
        series.write_csv(&mut buf).expect("write to memory");
        return Ok(Outcome {
            summary: json!({ "peak_hz": peak, "static_beat_hz": f_hp }),
            metrics: vec![metric("peak_hz", peak), metric("static_beat_hz", f_hp)],
            files: vec![("phase_series.csv".into(), buf)],
        });
    }
    let mut e = e;
    e.sim.keep_series = true;
    let shots = e.run_shots(1, s.seed).map_err(num)?;
    let wm = e.field.omega_m;
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let mut files = Vec::new();
    for r in &shots {
        let series = r.series.as_ref().expect("kept");
        let peak = spectral_peak(series, lo, hi, &[wm, 2.0 * wm]).map_err(num)?;
        let expected = e.omega_hp_rotating(r.rotation) / TAU;
        rows.push(json!({ "shot": r.shot_index, "rotation": r.rotation, "peak_hz": peak, "expected_hz": expected }));
        metrics.push(metric(format!("peak_shot{}_hz", r.shot_index), peak));
        let mut buf = Vec::new();
        series.write_csv(&mut buf).expect("write to memory");
        files.push((format!("phase_series_shot{}.csv", r.shot_index), buf));
    }
    Ok(Outcome { summary: json!({ "static_beat_hz": f_hp, "shots": rows }), metrics, files })
}

fn probe_heading(s: &Scenario) -> Result<Outcome, CliError> {
    let base = s.experiment()?;
    let mut flat = base.clone();
    flat.probe.alpha = 0.0;
    let reference = flat.run_shots(1, s.seed).map_err(num)?;
    let alphas: Vec<f64> = s.probe_sweep.as_ref().expect("checked").alpha.iter().map(|a| a.0).collect();
    let runs = map_points(!base.eddy.enabled, alphas.clone(), |alpha| {
        let mut e = base.clone();
        e.probe.alpha = alpha;
        e.run_shots(1, s.seed).map_err(num)
    })?;
    let mut csv = String::from("alpha_deg,shot,rotation,fictitious_nT,oracle_nT\n");
    let mut worst = 0.0f64;
    let mut signs = true;
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    for (alpha, shots) in alphas.iter().zip(&runs) {
        let (mut ccw, mut cw) = (0.0, 0.0);
        for (r, b) in shots.iter().zip(&reference) {
            let fict = r.b_x - b.b_x;
            let oracle = probe_heading_field(base.field.omega_m, &base.consts, *alpha, r.rotation);
            if oracle != 0.0 {
                worst = worst.max((fict / oracle - 1.0).abs());
                signs &= fict.signum() == oracle.signum();
            }
            match r.rotation {
                Rotation::CounterClockwise => ccw += fict / 2.0,
                Rotation::Clockwise => cw += fict / 2.0,
            }
            let rot = if r.rotation == Rotation::CounterClockwise { "ccw" } else { "cw" };
            writeln!(csv, "{:.6},{},{rot},{fict:.9e},{oracle:.9e}", alpha.to_degrees(), r.shot_index).unwrap();
        }
        let deg = alpha.to_degrees();
        metrics.push(metric(format!("ccw_nt@{deg}deg"), ccw));
        metrics.push(metric(format!("cw_nt@{deg}deg"), cw));
        rows.push(json!({ "alpha_deg": deg, "ccw_nt": ccw, "cw_nt": cw,
            "ccw_oracle_nt": probe_heading_field(base.field.omega_m, &base.consts, *alpha, Rotation::CounterClockwise),
            "cw_oracle_nt": probe_heading_field(base.field.omega_m, &base.consts, *alpha, Rotation::Clockwise) }));
    }
    metrics.push(metric("max_rel_deviation", worst));
    metrics.push(metric("signs_agree", if signs { 1.0 } else { 0.0 }));
    Ok(Outcome {
        summary: json!({ "points": rows, "max_rel_deviation": worst, "signs_agree": signs }),
        metrics,
        files: vec![("probe_heading.csv".into(), csv.into_bytes())],
    })
}

pub fn budget(s: &Scenario) -> Result<Outcome, CliError> {
    let e = s.experiment()?;
    let rf = rf_start_relation(&e.schedule.shots[0], &e.cell.pump());
    let b = oracle_budget(&e.field, &e.consts, &e.cell, s.cell.static_heading_angle.0, e.probe.alpha, &e.eddy, rf, &e.schedule.shots);
    let mut csv = String::from("shot,berry_nT,tau_2nd_s,static_heading_nT,dynamic_heading_nT,probe_heading_nT\n");
    for r in &b.shots {
        writeln!(csv, "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}", r.shot, r.berry_nt, r.tau_2nd_s, r.static_heading_nt, r.dynamic_heading_nt, r.probe_heading_nt).unwrap();
    }
    let metrics = vec![
        metric("berry_nt", b.berry_nt),
        metric("berry_small_angle_nt", b.berry_small_angle_nt),
        metric("tau_2nd_ns", b.tau_2nd_s * 1e9),
        metric("static_heading_nt", b.static_heading_nt),
        metric("dynamic_heading_nt", b.dynamic_heading_nt),
        metric("probe_heading_nt", b.probe_heading_nt),
        metric("eddy_cutoff_hz", b.eddy_cutoff_hz),
    ];
    Ok(Outcome { summary: to_json(&b), metrics, files: vec![("budget_shots.csv".into(), csv.into_bytes())] })
}

pub fn sensitivity(s: &Scenario) -> Result<Outcome, CliError> {
    let bs = s.bounds.as_ref().ok_or_else(|| CliError::Config("scenario has no [bounds] section".into()))?;
    let inp = bs.inputs()?;
    let consts = rotmag_core::Constants::default();
    let mut r = report(&inp, &consts).map_err(num)?;
    if bs.monte_carlo_trials > 0 {
        let cfg = McConfig {
            m_periods: inp.m_periods,
            t2_periods: inp.t2 / inp.delta_t,
            samples_per_period: 8,
            sigma_psi0: inp.sigma_psi0(),
            trials: bs.monte_carlo_trials,
            seed: s.seed,
        };
        r.monte_carlo = Some(frequency_mc(&cfg).map_err(num)?);
    }
    let mut bounds = to_json(&r);
    let obj = bounds.as_object_mut().expect("object");
    obj.remove("inputs");
    let mc = obj.remove("monte_carlo").unwrap_or(Value::Null);
    let mut metrics = vec![
        metric("phi_pr_per_s", r.phi_pr),
        metric("kappa1", r.kappa1),
        metric("kappa2", r.kappa2),
        metric("delta_b_tot_opt_nt", r.delta_b_tot_opt_nt),
        metric("delta_b_tot_nt", r.delta_b_tot_nt),
        metric("delta_b_tran_nt", r.delta_b_tran_nt),
        metric("delta_b_tran_2t2_nt", r.delta_b_tran_2t2_nt),
        metric("delta_b_ts_nt", r.delta_b_ts_nt),
    ];
    if let Some(m) = &r.monte_carlo {
        metrics.push(metric("mc_achieved_over_bound", m.ratio()));
    }
    Ok(Outcome { summary: json!({ "inputs": r.inputs, "bounds": bounds, "monte_carlo": mc }), metrics, files: Vec::new() })
}
