use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankParams {
    /// Uniformly spaced preferred directions; must be even so every
    /// direction has its opposite in the bank.
    pub n_directions: usize,
    /// Cycles per working-resolution pixel.
    pub spatial_freqs: Vec<f64>,
    /// Cycles per frame.
    pub temporal_freqs: Vec<f64>,
    /// Frames spanned by each temporal filter.
    pub temporal_support: usize,
    /// Spatial envelope sigma in cycles of the preferred frequency.
    pub sigma_cycles: f64,
    /// Kernel half-width in envelope sigmas.
    pub extent_sigmas: f64,
}

/// `n` values from `hi` down by a factor of `2^(-1/2)` per step.
pub fn default_spatial_freqs(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.2 * 2f64.powf(-(k as f64) / 2.0)).collect()
}

/// `n` log-spaced values from 0.1 to 0.35 cycles/frame.
pub fn default_temporal_freqs(n: usize) -> Vec<f64> {
    log_space(0.1, 0.35, n)
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|k| lo * r.powi(k as i32)).collect()
}

impl Default for BankParams {
    fn default() -> Self {
        Self {
            n_directions: 12,
            spatial_freqs: default_spatial_freqs(8),
            temporal_freqs: default_temporal_freqs(8),
            temporal_support: 15,
            sigma_cycles: 0.5,
            extent_sigmas: 3.0,
        }
    }
}

impl BankParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_directions >= 2 && self.n_directions.is_multiple_of(2),
            Parameter,
            "need an even number (>= 2) of directions, got {}",
            self.n_directions
        );
        ensure!(
            !self.spatial_freqs.is_empty() && !self.temporal_freqs.is_empty(),
            Parameter,
            "frequency lists must be nonempty"
        );
        ensure!(
            self.spatial_freqs.iter().all(|&f| f > 0.0 && f <= 0.5),
            Parameter,
            "spatial frequencies must lie in (0, 0.5] cycles/px"
        );
        ensure!(
            self.temporal_freqs.iter().all(|&f| f > 0.0 && f < 0.5),
            Parameter,
            "temporal frequencies must lie in (0, 0.5) cycles/frame"
        );
        ensure!(
            self.temporal_support >= 3,
            Parameter,
            "temporal support must be at least 3 frames"
        );
        ensure!(
            self.sigma_cycles > 0.0 && self.extent_sigmas > 0.0,
            Parameter,
            "envelope parameters must be positive"
        );
        for &sf in &self.spatial_freqs {
            let support = 2 * half_width(self.sigma_cycles / sf, self.extent_sigmas) + 1;
            ensure!(
                support >= 3,
                Parameter,
                "spatial support {support} px < 3 at {sf} cycles/px"
            );
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.n_directions * self.spatial_freqs.len() * self.temporal_freqs.len()
    }
}

fn half_width(sigma: f64, extent: f64) -> usize {
    (extent * sigma).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: usize,
    pub direction_index: usize,
    pub sf_index: usize,
    pub tf_index: usize,
    /// Degrees counterclockwise on screen from +x.
    pub direction_deg: f64,
    pub sf: f64,
    pub tf: f64,
}

impl Unit {
    pub fn speed(&self) -> f64 {
        self.tf / self.sf
    }

    /// Unit vector in image coordinates (y down).
    pub fn direction_vector(&self) -> (f64, f64) {
        let t = self.direction_deg.to_radians();
        (t.cos(), -t.sin())
    }
}

/// Complex separable spatial kernel `fx(dx) * fy(dy)` over offsets
/// `-half..=half`, shared by a direction and its opposite (conjugate).
#[derive(Debug, Clone)]
pub struct SpatialFilter {
    pub orientation: usize,
    pub sf_index: usize,
    pub half: usize,
    pub fx: Vec<Complex64>,
    pub fy: Vec<Complex64>,
}

impl SpatialFilter {
    /// Frequency response at wavevector `(kx, ky)` in radians/px, for the
    /// correlation `sum I(x + d) K(d)` applied to `exp(i k.x)`.
    pub fn response(&self, kx: f64, ky: f64) -> Complex64 {
        let h = self.half as i64;
        let ax: Complex64 = (-h..=h)
            .map(|d| self.fx[(d + h) as usize] * Complex64::cis(kx * d as f64))
            .sum();
        let ay: Complex64 = (-h..=h)
            .map(|d| self.fy[(d + h) as usize] * Complex64::cis(ky * d as f64))
            .sum();
        ax * ay
    }
}

/// Complex temporal kernel `h(dt)`, `dt = 0..support`, applied as
/// `Z(t) = sum h(dt) A(t - dt)`.
#[derive(Debug, Clone)]
pub struct TemporalFilter {
    pub tf_index: usize,
    /// Carrier in radians/frame after peak calibration.
    pub carrier: f64,
    pub h: Vec<Complex64>,
}

impl TemporalFilter {
    /// Gain for input `exp(-i w t)`.
    pub fn response(&self, w: f64) -> Complex64 {
        self.h
            .iter()
            .enumerate()
            .map(|(dt, &c)| c * Complex64::cis(w * dt as f64))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct GaborBank {
    pub params: BankParams,
    pub units: Vec<Unit>,
    /// Indexed by `orientation * n_sf + sf_index`, orientations covering
    /// the first half of the directions.
    pub spatial: Vec<SpatialFilter>,
    pub temporal: Vec<TemporalFilter>,
    /// Energy of the best-matched unit to a unit-amplitude drifting grating.
    pub max_response: f64,
}

fn gaussian(half: usize, sigma: f64) -> Vec<f64> {
    let h = half as i64;
    let g: Vec<f64> = (-h..=h)
        .map(|d| (-(d as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|x| x / s).collect()
}

/// Gaussian-windowed carrier with its DC removed and unit gain at `k`.
fn carrier_factor(g: &[f64], k: f64, remove_dc: bool) -> Vec<Complex64> {
    let h = (g.len() / 2) as i64;
    let mut f: Vec<Complex64> = g
        .iter()
        .enumerate()
        .map(|(i, &w)| w * Complex64::cis(-k * (i as i64 - h) as f64))
        .collect();
    if remove_dc {
        let mu: Complex64 = f.iter().sum::<Complex64>() / g.iter().sum::<f64>();
        for (c, &w) in f.iter_mut().zip(g) {
            *c -= mu * w;
        }
    }
    let gain: Complex64 = f
        .iter()
        .enumerate()
        .map(|(i, &c)| c * Complex64::cis(k * (i as i64 - h) as f64))
        .sum();
    let n = gain.norm();
    f.into_iter().map(|c| c / n).collect()
}

fn spatial_filter(orientation: usize, sf_index: usize, p: &BankParams) -> SpatialFilter {
    let sf = p.spatial_freqs[sf_index];
    let sigma = p.sigma_cycles / sf;
    let half = half_width(sigma, p.extent_sigmas);
    let g = gaussian(half, sigma);
    let theta = 2.0 * PI * orientation as f64 / p.n_directions as f64;
    let kx = 2.0 * PI * sf * theta.cos();
    let ky = -2.0 * PI * sf * theta.sin();
    // the DC is removed from the factor carrying most of the carrier
    let x_dominant = kx.abs() >= ky.abs();
    SpatialFilter {
        orientation,
        sf_index,
        half,
        fx: carrier_factor(&g, kx, x_dominant),
        fy: carrier_factor(&g, ky, !x_dominant),
    }
}

fn temporal_kernel(support: usize, carrier: f64) -> Vec<Complex64> {
    let sigma = support as f64 / 6.0;
    let mid = (support - 1) as f64 / 2.0;
    let g: Vec<f64> = (0..support)
        .map(|t| (-(t as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.into_iter().map(|x| x / s).collect();
    let mut h: Vec<Complex64> = g
        .iter()
        .enumerate()
        .map(|(t, &w)| w * Complex64::cis(-carrier * t as f64))
        .collect();
    let mu: Complex64 = h.iter().sum();
    for (c, &w) in h.iter_mut().zip(&g) {
        *c -= mu * w;
    }
    h
}

fn gain(h: &[Complex64], w: f64) -> f64 {
    h.iter()
        .enumerate()
        .map(|(dt, &c)| c * Complex64::cis(w * dt as f64))
        .sum::<Complex64>()
        .norm()
}

/// Frequency in (0, pi) where `|H|` peaks.
fn peak_frequency(h: &[Complex64]) -> f64 {
    const N: usize = 2048;
    let mut best = (0.0, 1);
    for i in 1..N {
        let w = PI * i as f64 / N as f64;
        let g = gain(h, w);
        if g > best.0 {
            best = (g, i);
        }
    }
    let (mut a, mut b) = (
        PI * (best.1 - 1) as f64 / N as f64,
        PI * (best.1 + 1) as f64 / N as f64,
    );
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if gain(h, c) > gain(h, d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}

/// Pick the carrier so `|H|` peaks at the nominal temporal frequency, then
/// scale to unit peak gain.
fn temporal_filter(tf_index: usize, p: &BankParams) -> TemporalFilter {
    let target = 2.0 * PI * p.temporal_freqs[tf_index];
    let support = p.temporal_support;
    let (mut lo, mut hi) = (1e-3, PI - 1e-3);
    let mut carrier = target;
    for _ in 0..60 {
        carrier = (lo + hi) / 2.0;
        if peak_frequency(&temporal_kernel(support, carrier)) < target {
            lo = carrier;
        } else {
            hi = carrier;
        }
    }
    let h = temporal_kernel(support, carrier);
    let n = gain(&h, target);
    TemporalFilter {
        tf_index,
        carrier,
        h: h.into_iter().map(|c| c / n).collect(),
    }
}

/// Build the filter bank. Unit ids run direction-major, then spatial
/// frequency, then temporal frequency.
pub fn build_bank(params: &BankParams) -> Result<GaborBank> {
    params.validate()?;
    let (nd, ns, nt) = (
        params.n_directions,
        params.spatial_freqs.len(),
        params.temporal_freqs.len(),
    );
    let mut units = Vec::with_capacity(params.n_units());
    for d in 0..nd {
        for s in 0..ns {
            for t in 0..nt {
                units.push(Unit {
                    id: units.len(),
                    direction_index: d,
                    sf_index: s,
                    tf_index: t,
                    direction_deg: 360.0 * d as f64 / nd as f64,
                    sf: params.spatial_freqs[s],
                    tf: params.temporal_freqs[t],
                });
            }
        }
    }
    let spatial = crate::par::map_range(nd / 2 * ns, |i| spatial_filter(i / ns, i % ns, params));
    let temporal = crate::par::map_range(nt, |t| temporal_filter(t, params));
    let mut bank = GaborBank {
        params: params.clone(),
        units,
        spatial,
        temporal,
        max_response: 0.0,
    };
    bank.max_response = bank
        .units
        .iter()
        .map(|u| bank.matched_energy(u))
        .fold(0.0, f64::max);
    Ok(bank)
}

impl GaborBank {
    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_orientations(&self) -> usize {
        self.params.n_directions / 2
    }

    pub fn unit_id(&self, direction: usize, sf: usize, tf: usize) -> usize {
        let (ns, nt) = (
            self.params.spatial_freqs.len(),
            self.params.temporal_freqs.len(),
        );
        (direction * ns + sf) * nt + tf
    }

    /// Spatial filter for `unit` and whether it is used conjugated.
    pub fn spatial_for(&self, unit: &Unit) -> (&SpatialFilter, bool) {
        let no = self.n_orientations();
        let ns = self.params.spatial_freqs.len();
        let o = unit.direction_index % no;
        (&self.spatial[o * ns + unit.sf_index], unit.direction_index >= no)
    }

    /// Even (real) and odd (imaginary) 2D kernels of `unit`, row-major over
    /// offsets `-half..=half`.
    pub fn kernel_2d(&self, unit: &Unit) -> (Vec<f64>, Vec<f64>) {
        let (f, conj) = self.spatial_for(unit);
        let n = f.fx.len();
        let mut even = Vec::with_capacity(n * n);
        let mut odd = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let mut c = f.fx[x] * f.fy[y];
                if conj {
                    c = c.conj();
                }
                even.push(c.re);
                odd.push(c.im);
            }
        }
        (even, odd)
    }

    /// Preferred wavevector of `unit` in radians/px (image coordinates).
    pub fn wavevector(&self, unit: &Unit) -> (f64, f64) {
        let (dx, dy) = unit.direction_vector();
        let k = 2.0 * PI * unit.sf;
        (k * dx, k * dy)
    }

    /// Mean energy of `unit` for a unit-amplitude grating at its own
    /// preferred direction, spatial and temporal frequency.
    pub fn matched_energy(&self, unit: &Unit) -> f64 {
        let (f, conj) = self.spatial_for(unit);
        let (kx, ky) = self.wavevector(unit);
        let k = if conj {
            f.response(-kx, -ky)
        } else {
            f.response(kx, ky)
        };
        let t = self.temporal[unit.tf_index].response(2.0 * PI * unit.tf);
        (0.5 * k.norm() * t.norm()).powi(2)
    }
}
