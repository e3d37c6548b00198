mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use illusionflow::meflow::{
    build_bank, decode_flow, estimate_flow, motion_energy, probe_response, rank_rotation_units,
    spatial_response, Activation, BankParams, EnergyMaps, EstimatorParams, GaborBank, Grid, Plane,
};
use illusionflow::stimgen::RasterImage;
use illusionflow::FlowField;
use num_complex::Complex64;

fn unscaled() -> EstimatorParams {
    EstimatorParams {
        scale: 1.0,
        ..Default::default()
    }
}

fn strongest_unit(maps: &EnergyMaps) -> usize {
    (0..maps.n_units())
        .max_by(|&a, &b| maps.mean_activation(a).total_cmp(&maps.mean_activation(b)))
        .unwrap()
}

/// Mean flow over the central half of the frame.
fn central_mean(f: &FlowField) -> (f64, f64) {
    let (x0, x1) = (f.width / 4, 3 * f.width / 4);
    let (y0, y1) = (f.height / 4, 3 * f.height / 4);
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            if let Some((u, v)) = f.get(x, y) {
                su += u;
                sv += v;
                n += 1.0;
            }
        }
    }
    (su / n, sv / n)
}

fn angle_between(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = (a.1.atan2(a.0) - b.1.atan2(b.0)).to_degrees();
    (d + 180.0).rem_euclid(360.0) - 180.0
}

#[test]
fn a_drifting_grating_drives_the_matched_direction() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    let (sf, tf) = (p.bank.spatial_freqs[2], p.bank.temporal_freqs[4]);
    for dir in [0usize, 2, 5, 7, 10] {
        let deg = 30.0 * dir as f64;
        let frames = common::drifting_grating(64, 64, 15, sf, deg, tf, 0.8, 0.0);
        let maps = motion_energy(&frames, &bank, &p).unwrap();
        let best = maps.units[strongest_unit(&maps)];
        assert_eq!(best.direction_index, dir, "{deg}");
        assert!(best.sf_index.abs_diff(2) <= 1 && best.tf_index.abs_diff(4) <= 1, "{best:?}");
        // decoded motion is normal to the stripes
        let m = central_mean(&decode_flow(&maps, &p).unwrap());
        let want = (deg.to_radians().cos(), -deg.to_radians().sin());
        assert!(angle_between(m, want).abs() <= 15.0, "{deg}: {m:?}");
    }
}

#[test]
fn still_input_has_no_energy_and_no_flow() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    let gray = Arc::new(RasterImage::from_pixel(48, 48, image::Rgb([128, 128, 128])));
    let tex = common::translating_noise(48, 48, 1, 0, 0, 4).pop().unwrap();
    for frame in [gray, tex] {
        let frames = vec![frame; 15];
        let maps = motion_energy(&frames, &bank, &p).unwrap();
        assert!(maps.data.iter().all(|&e| e.abs() < 1e-12));
        let f = decode_flow(&maps, &p).unwrap();
        assert_eq!(f.n_valid(), 0);
    }
}

#[test]
fn reversing_motion_flips_opponent_signs() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    let fwd = motion_energy(&common::translating_noise(64, 64, 15, 2, 0, 9), &bank, &p).unwrap();
    let rev = motion_energy(&common::translating_noise(64, 64, 15, -2, 0, 9), &bank, &p).unwrap();
    let rightward = bank.unit_id(0, 2, 4);
    let a: f64 = fwd.opponent(rightward).iter().sum();
    let b: f64 = rev.opponent(rightward).iter().sum();
    assert!(a > 0.0 && b < 0.0, "{a} {b}");
}

#[test]
fn energy_is_phase_invariant() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    let (sf, tf) = (p.bank.spatial_freqs[1], p.bank.temporal_freqs[3]);
    let unit = bank.unit_id(1, 1, 3);
    let energies: Vec<f64> = [0.0, PI / 3.0, PI / 2.0, PI]
        .iter()
        .map(|&phase| {
            let frames = common::drifting_grating(72, 72, 15, sf, 30.0, tf, 0.8, phase);
            motion_energy(&frames, &bank, &p).unwrap().mean_activation(unit)
        })
        .collect();
    for e in &energies {
        assert!((e / energies[0] - 1.0).abs() < 0.05, "{energies:?}");
    }
}

#[test]
fn energy_grows_with_contrast() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    let (sf, tf) = (p.bank.spatial_freqs[2], p.bank.temporal_freqs[2]);
    let unit = bank.unit_id(3, 2, 2);
    let e: Vec<f64> = [0.1, 0.25, 0.5, 1.0]
        .iter()
        .map(|&c| {
            let frames = common::drifting_grating(64, 64, 15, sf, 90.0, tf, c, 0.0);
            motion_energy(&frames, &bank, &p).unwrap().mean_activation(unit)
        })
        .collect();
    assert!(e.windows(2).all(|w| w[1] > w[0]), "{e:?}");
    // quadratic in contrast up to quantization
    assert!((e[3] / e[2] - 4.0).abs() < 0.2, "{e:?}");
}

#[test]
fn translation_is_recovered_in_every_direction() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    for (vx, vy) in [(2, 0), (0, 2), (-2, 0), (0, -2), (2, 2), (-2, 2)] {
        let f = estimate_flow(&common::translating_noise(96, 96, 15, vx, vy, 21), &bank, &p).unwrap();
        let m = central_mean(&f);
        let truth = (vx as f64, vy as f64);
        let speed = truth.0.hypot(truth.1);
        assert!(angle_between(m, truth).abs() <= 15.0, "{truth:?} -> {m:?}");
        assert!((m.0.hypot(m.1) / speed - 1.0).abs() <= 0.3, "{truth:?} -> {m:?}");
    }
}

#[test]
fn mirrored_input_gives_mirrored_flow() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    // odd sizes keep the sampling grid symmetric
    let frames = common::translating_noise(81, 65, 15, 2, 1, 33);
    let a = estimate_flow(&frames, &bank, &p).unwrap();
    let b = estimate_flow(&common::flip_horizontal(&frames), &bank, &p).unwrap();
    let scale = a.max_magnitude();
    for y in 0..a.height {
        for x in 0..a.width {
            let (Some((u, v)), Some((mu, mv))) = (a.get(x, y), b.get(a.width - 1 - x, y)) else {
                panic!("validity differs at ({x}, {y})");
            };
            assert!((u + mu).abs() <= 1e-6 * scale && (v - mv).abs() <= 1e-6 * scale);
        }
    }
}

/// Linear response computed by filtering rendered probe planes directly.
fn filtered_probe(bank: &GaborBank, unit: usize, k: (f64, f64), w: f64, env: f64, n: usize) -> Vec<Complex64> {
    let u = &bank.units[unit];
    let (f, conj) = bank.spatial_for(u);
    let side = 2 * f.half + 1;
    let c = f.half as f64;
    let grid = Grid::new(side, side, side);
    assert_eq!((grid.len(), grid.x(0), grid.y(0)), (1, f.half, f.half));
    let a: Vec<Complex64> = (0..n)
        .map(|t| {
            let data = (0..side * side)
                .map(|i| {
                    let (dx, dy) = ((i % side) as f64 - c, (i / side) as f64 - c);
                    let g = (-(dx * dx + dy * dy) / (2.0 * env * env)).exp();
                    g * (k.0 * dx + k.1 * dy - w * t as f64).cos()
                })
                .collect();
            let r = spatial_response(&Plane { width: side, height: side, data }, f, &grid)[0];
            if conj {
                r.conj()
            } else {
                r
            }
        })
        .collect();
    let h = &bank.temporal[u.tf_index].h;
    (h.len() - 1..n)
        .map(|t| h.iter().enumerate().map(|(dt, &k)| k * a[t - dt]).sum())
        .collect()
}

#[test]
fn analytic_probe_response_matches_direct_filtering() {
    let bank = build_bank(&BankParams::default()).unwrap();
    let support = bank.params.temporal_support;
    for unit in [0, 37, 200, 455, 700] {
        let u = bank.units[unit];
        for (dir_deg, sf, tf) in [(u.direction_deg, u.sf, u.tf), (75.0, 0.1, 0.2)] {
            let th = f64::to_radians(dir_deg);
            let k = (2.0 * PI * sf * th.cos(), -2.0 * PI * sf * th.sin());
            let (w, env, n) = (2.0 * PI * tf, 2.0 / sf, support + 6);
            let direct = filtered_probe(&bank, unit, k, w, env, n);
            let analytic = probe_response(&bank, &u, k, w, env, n);
            for (d, a) in direct.iter().zip(&analytic[support - 1..]) {
                assert!((d - a).norm() < 1e-9, "unit {unit}: {d} vs {a}");
            }
        }
    }
}

#[test]
fn ranking_prefers_units_driven_by_motion() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    let moving = common::translating_noise(64, 64, 15, 2, 0, 5);
    let still = vec![moving[0].clone(); 15];
    let e_mov = motion_energy(&moving, &bank, &p).unwrap();
    let e_still = motion_energy(&still, &bank, &p).unwrap();
    let ranked = rank_rotation_units(&e_mov, &e_still, Activation::Mean).unwrap();
    assert!(!ranked.is_empty() && ranked.len() <= bank.n_units().div_ceil(4));
    assert!(ranked.windows(2).all(|w| w[0].difference().abs() >= w[1].difference().abs()));
    assert!(ranked.iter().all(|r| r.rotation > r.baseline));
    // rightward units dominate leftward ones
    let rightward = ranked
        .iter()
        .filter(|r| bank.units[r.unit].direction_vector().0 > 0.1)
        .count();
    assert!(rightward * 2 > ranked.len(), "{rightward} of {}", ranked.len());
    // swapping the roles leaves nothing more active
    let none = rank_rotation_units(&e_still, &e_mov, Activation::Peak).unwrap();
    assert!(none.is_empty());

    let other = EstimatorParams {
        stride: 8,
        ..unscaled()
    };
    let e_other = motion_energy(&still, &bank, &other).unwrap();
    assert!(rank_rotation_units(&e_mov, &e_other, Activation::Mean).is_err());
}

#[test]
fn a_single_sustained_shift_is_direction_neutral() {
    // one step change is separable in space and time, so opponent
    // energies cancel
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    let moved = common::translating_noise(64, 64, 2, 3, 3, 12);
    let frames: Vec<Arc<RasterImage>> = (0..15)
        .map(|t| moved[usize::from(t >= 7)].clone())
        .collect();
    let maps = motion_energy(&frames, &bank, &p).unwrap();
    let total: f64 = maps.data.iter().map(|&e| e as f64).sum();
    assert!(total > 0.0);
    for u in 0..maps.n_units() / 2 {
        let d: f64 = maps.opponent(u).iter().map(|x| x.abs()).sum();
        assert!(d <= 1e-4 * total, "unit {u}: {d}");
    }
}

#[test]
fn mismatched_parameters_are_rejected() {
    let p = unscaled();
    let bank = build_bank(&p.bank).unwrap();
    let frames = common::translating_noise(32, 32, 15, 1, 0, 1);
    assert!(motion_energy(&frames[..10], &bank, &p).is_err());
    let other = EstimatorParams {
        bank: BankParams {
            n_directions: 8,
            ..Default::default()
        },
        ..unscaled()
    };
    assert!(motion_energy(&frames, &bank, &other).is_err());
    let maps = motion_energy(&frames, &bank, &p).unwrap();
    assert!(decode_flow(&maps, &other).is_err());
}
