use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::bank::{default_spatial_freqs, default_temporal_freqs, GaborBank, Unit};
use super::energy::EnergyMaps;
use crate::error::{ensure, Result};
use crate::par;

/// Drifting Gabor probes: every combination of direction, spatial and
/// temporal frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeGrid {
    pub n_directions: usize,
    pub spatial_freqs: Vec<f64>,
    pub temporal_freqs: Vec<f64>,
    /// Probe envelope sigma in cycles of the probe's spatial frequency.
    pub envelope_cycles: f64,
    /// Frames over which the response standard deviation is taken.
    pub n_frames: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            n_directions: 12,
            spatial_freqs: default_spatial_freqs(8),
            temporal_freqs: default_temporal_freqs(8),
            envelope_cycles: 2.0,
            n_frames: 256,
        }
    }
}

impl ProbeGrid {
    pub fn direction_deg(&self, i: usize) -> f64 {
        360.0 * i as f64 / self.n_directions as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTuning {
    pub unit: usize,
    pub direction_deg: f64,
    pub sf: f64,
    pub tf: f64,
    pub direction_index: usize,
    pub sf_index: usize,
    pub tf_index: usize,
    /// Standard deviation over time of the linear (even) response at the
    /// preferred probe.
    pub response_std: f64,
}

/// Spatial overlap `sum K(d) env(d) exp(i s k.d)` for `s = +1` and `-1`,
/// evaluated separably.
fn spatial_overlaps(
    bank: &GaborBank,
    unit: &Unit,
    k: (f64, f64),
    env_sigma: f64,
) -> (Complex64, Complex64) {
    let (f, conj) = bank.spatial_for(unit);
    let h = f.half as i64;
    let axis = |coef: &[Complex64], kk: f64, sign: f64| -> Complex64 {
        (-h..=h)
            .zip(coef)
            .map(|(d, &c)| {
                let c = if conj { c.conj() } else { c };
                let env = (-(d * d) as f64 / (2.0 * env_sigma * env_sigma)).exp();
                c * env * Complex64::cis(sign * kk * d as f64)
            })
            .sum()
    };
    let plus = axis(&f.fx, k.0, 1.0) * axis(&f.fy, k.1, 1.0);
    let minus = axis(&f.fx, k.0, -1.0) * axis(&f.fy, k.1, -1.0);
    (plus, minus)
}

/// Temporal gains for `exp(-i w t)` and `exp(+i w t)` inputs.
fn temporal_gains(bank: &GaborBank, unit: &Unit, w: f64) -> (Complex64, Complex64) {
    let t = &bank.temporal[unit.tf_index];
    (t.response(w), t.response(-w))
}

/// Linear response of `unit`, centered on a probe
/// `env(d) cos(k.d - w t)`, over `n_frames` frames. Opposite-direction units
/// filter the conjugate spatial response.
pub fn probe_response(
    bank: &GaborBank,
    unit: &Unit,
    k: (f64, f64),
    w: f64,
    env_sigma: f64,
    n_frames: usize,
) -> Vec<Complex64> {
    let overlaps = spatial_overlaps(bank, unit, k, env_sigma);
    response_series(bank, unit, overlaps, w, n_frames)
}

fn response_series(
    bank: &GaborBank,
    unit: &Unit,
    (ap, am): (Complex64, Complex64),
    w: f64,
    n_frames: usize,
) -> Vec<Complex64> {
    let (gp, gm) = temporal_gains(bank, unit, w);
    // A(t) = (ap e^{-iwt} + am e^{iwt}) / 2 before temporal filtering
    (0..n_frames)
        .map(|t| {
            let e = Complex64::cis(-w * t as f64);
            0.5 * (ap * gp * e + am * gm * e.conj())
        })
        .collect()
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

/// Drive every unit with every probe; keep the probe with the largest
/// standard deviation of the even response.
pub fn probe_unit_tuning(bank: &GaborBank, grid: &ProbeGrid) -> Result<Vec<UnitTuning>> {
    ensure!(grid.n_directions >= 1, Parameter, "probe grid needs directions");
    ensure!(
        !grid.spatial_freqs.is_empty() && !grid.temporal_freqs.is_empty(),
        Parameter,
        "probe grid needs frequencies"
    );
    ensure!(grid.n_frames >= 2, Parameter, "probe needs at least 2 frames");
    ensure!(grid.envelope_cycles > 0.0, Parameter, "envelope must be positive");
    Ok(par::map_slice(&bank.units, |unit| {
        let mut best = (f64::MIN, 0, 0, 0);
        for d in 0..grid.n_directions {
            let theta = grid.direction_deg(d).to_radians();
            for (s, &sf) in grid.spatial_freqs.iter().enumerate() {
                let k = (2.0 * PI * sf * theta.cos(), -2.0 * PI * sf * theta.sin());
                let overlaps = spatial_overlaps(bank, unit, k, grid.envelope_cycles / sf);
                for (t, &tf) in grid.temporal_freqs.iter().enumerate() {
                    let z = response_series(bank, unit, overlaps, 2.0 * PI * tf, grid.n_frames);
                    let even: Vec<f64> = z.iter().map(|c| c.re).collect();
                    let sd = std_dev(&even);
                    if sd > best.0 {
                        best = (sd, d, s, t);
                    }
                }
            }
        }
        let (sd, d, s, t) = best;
        UnitTuning {
            unit: unit.id,
            direction_deg: grid.direction_deg(d),
            sf: grid.spatial_freqs[s],
            tf: grid.temporal_freqs[t],
            direction_index: d,
            sf_index: s,
            tf_index: t,
            response_std: sd,
        }
    }))
}

/// Which spatial statistic of each unit's map the ranking compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Mean,
    Peak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedUnit {
    pub unit: usize,
    pub rotation: f64,
    pub baseline: f64,
}

impl RankedUnit {
    pub fn difference(&self) -> f64 {
        self.rotation - self.baseline
    }
}

/// Units most changed by rotation: the top quarter by absolute activation
/// difference, of which only those more active under rotation are kept.
pub fn rank_rotation_units(
    e_rot: &EnergyMaps,
    e_static: &EnergyMaps,
    activation: Activation,
) -> Result<Vec<RankedUnit>> {
    ensure!(
        e_rot.same_bank(e_static) && e_rot.n_units() == e_static.n_units(),
        Data,
        "energy maps come from different banks or grids"
    );
    let stat = |m: &EnergyMaps, u: usize| match activation {
        Activation::Mean => m.mean_activation(u),
        Activation::Peak => m.peak_activation(u).1,
    };
    let mut all: Vec<RankedUnit> = (0..e_rot.n_units())
        .map(|u| RankedUnit {
            unit: u,
            rotation: stat(e_rot, u),
            baseline: stat(e_static, u),
        })
        .collect();
    all.sort_by(|a, b| {
        b.difference()
            .abs()
            .total_cmp(&a.difference().abs())
            .then(a.unit.cmp(&b.unit))
    });
    let keep = e_rot.n_units().div_ceil(4);
    Ok(all
        .into_iter()
        .take(keep)
        .filter(|r| r.rotation > r.baseline)
        .collect())
}
