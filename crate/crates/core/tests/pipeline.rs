use std::f64::consts::TAU;

use rotmag_core::fourshot::{summarize_block, Experiment};
use rotmag_core::model::{FieldConfig, Rotation, ShotPhaseConfig};
use rotmag_core::spin_sim::HeadingModel;
use rotmag_core::Error;

fn nominal() -> FieldConfig {
    FieldConfig::with_total(50_000.0, 18_000.0, TAU * 480.0)
}

#[test]
fn null_experiment() {
    let b = Experiment::ideal(nominal()).run_block(0).unwrap();
    for (name, v) in [("b_x", b.b_x), ("b_y", b.b_y), ("dbz", b.dbz_plus_bsh), ("dh", b.b_dh), ("cross", b.b_cross), ("alpha", b.alpha_est)] {
        assert!(v.abs() < 0.05, "{name} = {v}");
    }
}

#[test]
fn blocks_are_deterministic_without_noise() {
    let p = Experiment::ideal(nominal()).run_panorama(20, 0, 3).unwrap();
    let first = &p.blocks[0];
    for b in &p.blocks[1..] {
        assert!((b.b_berry - first.b_berry).abs() < 1e-9 && (b.b_x - first.b_x).abs() < 1e-9);
    }
    assert_eq!(p.aggregate.n_blocks, 20);
    assert!(p.aggregate.std.b_berry < 1e-9);
}

#[test]
fn discard_drops_whole_blocks() {
    let p = Experiment::ideal(nominal()).run_panorama(3, 5, 0).unwrap();
    assert_eq!(p.discarded_blocks, 2);
    assert_eq!(p.aggregate.n_blocks, 1);
}

#[test]
fn noisy_runs_are_reproducible_per_seed() {
    let mut e = Experiment::ideal(nominal());
    e.detection.photon_flux = Some(1e12);
    let a = e.run_block(42).unwrap();
    let b = e.run_block(42).unwrap();
    let c = e.run_block(43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.b_x, c.b_x);
}

#[test]
fn lost_signal_reports_the_shot() {
    let mut e = Experiment::ideal(nominal());
    e.detection.threshold = 5.0;
    match e.run_block(0) {
        Err(Error::Shot { shot, source }) => {
            assert!((1..=4).contains(&shot));
            assert!(matches!(*source, Error::SignalLost { .. }));
        }
        other => panic!("expected a shot error, got {other:?}"),
    }
}

#[test]
fn invalid_schedule_is_rejected() {
    let mut e = Experiment::ideal(nominal());
    e.schedule.prepare_fraction = 0.05;
    assert!(matches!(e.run_block(0), Err(Error::InvalidConfig(_))));
}

/// Swap the rows so every shot runs with the opposite rotation.
fn reversed_table(e: &Experiment) -> [ShotPhaseConfig; 4] {
    let s = e.schedule.shots;
    let mut out = [s[1], s[0], s[3], s[2]];
    for (i, row) in out.iter_mut().enumerate() {
        row.shot_index = i as u8 + 1;
    }
    out
}

#[test]
fn rotation_direction_sets_berry_sign() {
    let e = Experiment::ideal(nominal());
    let shots = e.run_shots(1, 0).unwrap();
    for r in &shots {
        let expect = if r.rotation == Rotation::CounterClockwise { 1.0 } else { -1.0 };
        assert_eq!(r.slope_field.signum(), expect);
        assert_eq!(r.phase.signs.tau_berry as f64, expect);
    }
    let mut flipped = e.clone();
    flipped.schedule.shots = reversed_table(&e);
    let b = flipped.run_block(0).unwrap();
    let a = e.run_block(0).unwrap();
    assert!((a.b_berry + b.b_berry).abs() < 0.05, "{} vs {}", a.b_berry, b.b_berry);
}

#[test]
fn start_sign_sets_dynamic_heading_sign() {
    let mut e = Experiment::ideal(nominal());
    e.cell.pump_direction = [1.0, 0.0, 0.0];
    e.heading = HeadingModel::from_cell(&e.cell, e.b_tot(), &e.consts);
    let a = e.run_block(0).unwrap();
    // Shots 3 and 4 first: the start sign pattern becomes (−,−,+,+).
    let mut swapped = e.clone();
    let s = e.schedule.shots;
    swapped.schedule.shots = [s[2], s[3], s[0], s[1]];
    let b = swapped.run_block(0).unwrap();
    assert!(a.b_dh > 2.0);
    assert!((a.b_dh + b.b_dh).abs() < 0.05, "{} vs {}", a.b_dh, b.b_dh);
}

#[test]
fn single_shots_recover_the_block_transverse_field() {
    let mut f = nominal();
    f.b_x_res = 35.0;
    f.b_y_res = -60.0;
    let e = Experiment::ideal(f);
    let shots = e.run_shots(1, 0).unwrap();
    let block = summarize_block(&shots, &f, &e.consts, e.probe.axis);
    for r in &shots {
        assert!((r.b_x - block.b_x).abs() < 0.2, "{} vs {}", r.b_x, block.b_x);
        assert!((r.b_y - block.b_y).abs() < 0.2, "{} vs {}", r.b_y, block.b_y);
    }
    assert!((block.b_x - 35.0).abs() < 0.1 && (block.b_y + 60.0).abs() < 0.1);
}

#[test]
fn noise_scatter_tracks_fit_errors() {
    let mut e = Experiment::ideal(nominal());
    e.detection.photon_flux = Some(2e11);
    let shots = e.run_shots(10, 9).unwrap();
    let vals: Vec<f64> = shots.iter().filter(|r| r.shot_index == 1).map(|r| r.fit.a1).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
    let predicted = shots[0].fit.std_err(2);
    assert!(sd > 0.3 * predicted && sd < 3.0 * predicted, "scatter {sd:.3e} vs fit error {predicted:.3e}");
}
