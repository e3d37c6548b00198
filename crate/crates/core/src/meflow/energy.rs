use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::bank::{BankParams, GaborBank, SpatialFilter, Unit};
use super::preprocess::{prepare_frames, Plane, WorkingFrames};
use crate::error::{ensure, Error, Result};
use crate::par;
use crate::stimgen::RasterImage;

/// Working disk diameter the default scale is chosen for.
pub const WORKING_DISK_PX: f64 = 376.0;
/// Default stimulus disk diameter in frame pixels.
pub const FRAME_DISK_PX: f64 = 1266.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorParams {
    pub bank: BankParams,
    /// Working resolution relative to frame resolution.
    pub scale: f64,
    /// Grid spacing of the energy maps, working pixels.
    pub stride: usize,
    /// Saturation constant of divisive normalization, as a fraction of the
    /// bank's maximal response.
    pub sigma_frac: f64,
    /// Cells whose mean energy is at most this fraction of sigma are invalid.
    pub invalid_frac: f64,
    /// Exponent applied to normalized energies before decoding.
    pub decode_power: f64,
    /// Gaussian pooling radius in grid cells; 0 disables pooling.
    pub pool_sigma: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            bank: BankParams::default(),
            scale: WORKING_DISK_PX / FRAME_DISK_PX,
            stride: 4,
            sigma_frac: 0.01,
            invalid_frac: 1e-6,
            decode_power: 1.0,
            pool_sigma: 1.0,
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<()> {
        self.bank.validate()?;
        ensure!(
            self.scale > 0.0 && self.scale.is_finite(),
            Parameter,
            "scale must be positive"
        );
        ensure!(self.stride >= 1, Parameter, "stride must be at least 1");
        ensure!(self.sigma_frac > 0.0, Parameter, "sigma_frac must be positive");
        ensure!(self.invalid_frac >= 0.0, Parameter, "invalid_frac must be >= 0");
        ensure!(self.decode_power > 0.0, Parameter, "decode_power must be positive");
        ensure!(self.pool_sigma >= 0.0, Parameter, "pool_sigma must be >= 0");
        Ok(())
    }
}

/// Sampling grid: cell `(i, j)` sits at working pixel
/// `(x0 + i * stride, y0 + j * stride)`, centered so that leftover pixels
/// are split evenly on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub x0: usize,
    pub y0: usize,
}

impl Grid {
    pub fn new(w: usize, h: usize, stride: usize) -> Self {
        let nx = (w - 1) / stride + 1;
        let ny = (h - 1) / stride + 1;
        Self {
            width: nx,
            height: ny,
            stride,
            x0: ((w - 1) - (nx - 1) * stride) / 2,
            y0: ((h - 1) - (ny - 1) * stride) / 2,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> usize {
        self.x0 + i * self.stride
    }

    pub fn y(&self, j: usize) -> usize {
        self.y0 + j * self.stride
    }
}

/// Per-unit energy maps, unit-major, each `grid.len()` cells row-major.
#[derive(Debug, Clone)]
pub struct EnergyMaps {
    pub bank: BankParams,
    pub units: Vec<Unit>,
    pub grid: Grid,
    pub working_size: (usize, usize),
    pub frame_size: (usize, usize),
    /// Normalization saturation constant.
    pub sigma: f64,
    pub data: Vec<f32>,
}

impl EnergyMaps {
    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn unit_map(&self, unit: usize) -> &[f32] {
        let n = self.grid.len();
        &self.data[unit * n..(unit + 1) * n]
    }

    pub fn at(&self, unit: usize, cell: usize) -> f64 {
        self.data[unit * self.grid.len() + cell] as f64
    }

    /// Spatial mean activation of `unit`.
    pub fn mean_activation(&self, unit: usize) -> f64 {
        let m = self.unit_map(unit);
        m.iter().map(|&x| x as f64).sum::<f64>() / m.len() as f64
    }

    pub fn peak_activation(&self, unit: usize) -> (usize, f64) {
        self.unit_map(unit)
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &x)| {
                if (x as f64) > best.1 {
                    (i, x as f64)
                } else {
                    best
                }
            })
    }

    /// Unit of the same frequencies with the opposite direction.
    pub fn opposite(&self, unit: usize) -> usize {
        let n = self.units.len();
        let half = n / 2;
        (unit + half) % n
    }

    /// `E(theta) - E(theta + 180)` for `unit`.
    pub fn opponent(&self, unit: usize) -> Vec<f64> {
        let a = self.unit_map(unit);
        let b = self.unit_map(self.opposite(unit));
        a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64).collect()
    }

    pub fn same_bank(&self, other: &EnergyMaps) -> bool {
        self.bank == other.bank && self.grid == other.grid
    }
}

/// Complex response of `f` at every grid cell of `plane`, with edge pixels
/// replicated outside the image.
pub fn spatial_response(plane: &Plane, f: &SpatialFilter, grid: &Grid) -> Vec<Complex64> {
    let (w, h) = (plane.width, plane.height);
    let half = f.half as i64;
    // horizontal pass at grid columns, every row
    let rows: Vec<Vec<Complex64>> = (0..h)
        .map(|y| {
            let row = &plane.data[y * w..(y + 1) * w];
            (0..grid.width)
                .map(|i| {
                    let xc = grid.x(i) as i64;
                    let mut acc = Complex64::new(0.0, 0.0);
                    if xc - half >= 0 && xc + half < w as i64 {
                        let s = &row[(xc - half) as usize..=(xc + half) as usize];
                        for (a, k) in s.iter().zip(&f.fx) {
                            acc += k * a;
                        }
                    } else {
                        for (d, k) in (-half..=half).zip(&f.fx) {
                            let x = (xc + d).clamp(0, w as i64 - 1) as usize;
                            acc += k * row[x];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.height {
        let yc = grid.y(j) as i64;
        out.extend((0..grid.width).map(|i| {
            (-half..=half)
                .zip(&f.fy)
                .map(|(d, k)| k * rows[(yc + d).clamp(0, h as i64 - 1) as usize][i])
                .sum::<Complex64>()
        }));
    }
    out
}

/// Motion energy of a frame sequence at the configured working scale.
pub fn motion_energy(
    frames: &[Arc<RasterImage>],
    bank: &GaborBank,
    params: &EstimatorParams,
) -> Result<EnergyMaps> {
    params.validate()?;
    ensure!(
        params.bank == bank.params,
        Parameter,
        "estimator parameters name a different bank"
    );
    let t = bank.params.temporal_support;
    ensure!(
        frames.len() >= t,
        Parameter,
        "sequence of {} frames is shorter than the temporal support {t}",
        frames.len()
    );
    let wf = prepare_frames(frames, params.scale)?;
    let (fw, fh) = frames[0].dimensions();
    let mut maps = energy_from_planes(&wf, bank, params)?;
    maps.frame_size = (fw as usize, fh as usize);
    Ok(maps)
}

/// Motion energy of already prepared working-resolution planes.
pub fn energy_from_planes(
    wf: &WorkingFrames,
    bank: &GaborBank,
    params: &EstimatorParams,
) -> Result<EnergyMaps> {
    let support = bank.params.temporal_support;
    let n_frames = wf.index.len();
    ensure!(
        n_frames >= support,
        Parameter,
        "sequence of {n_frames} frames is shorter than the temporal support {support}"
    );
    let (w, h) = (wf.planes[0].width, wf.planes[0].height);
    ensure!(w >= 1 && h >= 1, Data, "empty working frame");
    let grid = Grid::new(w, h, params.stride);
    let n_cells = grid.len();
    let ns = bank.params.spatial_freqs.len();
    let nt = bank.params.temporal_freqs.len();
    let no = bank.n_orientations();
    let out_times: Vec<usize> = (support - 1..n_frames).collect();

    // per spatial filter: energies for (sign, tf) pairs
    let per_filter: Vec<Vec<Vec<f32>>> = par::map_range(bank.spatial.len(), |fi| {
        let f = &bank.spatial[fi];
        let a: Vec<Vec<Complex64>> = wf
            .planes
            .iter()
            .map(|p| spatial_response(p, f, &grid))
            .collect();
        let mut out = Vec::with_capacity(2 * nt);
        for conj in [false, true] {
            for tfilt in &bank.temporal {
                let mut e = vec![0f64; n_cells];
                for &t in &out_times {
                    for (c, ec) in e.iter_mut().enumerate() {
                        let mut z = Complex64::new(0.0, 0.0);
                        for (dt, k) in tfilt.h.iter().enumerate() {
                            let v = a[wf.index[t - dt]][c];
                            z += k * if conj { v.conj() } else { v };
                        }
                        *ec += z.norm_sqr();
                    }
                }
                let n = out_times.len() as f64;
                out.push(e.into_iter().map(|x| (x / n) as f32).collect());
            }
        }
        out
    });

    let mut data = vec![0f32; bank.n_units() * n_cells];
    for (fi, maps) in per_filter.into_iter().enumerate() {
        let (o, s) = (fi / ns, fi % ns);
        for (k, m) in maps.into_iter().enumerate() {
            let (conj, tf) = (k / nt, k % nt);
            let d = o + if conj == 1 { no } else { 0 };
            let u = bank.unit_id(d, s, tf);
            data[u * n_cells..(u + 1) * n_cells].copy_from_slice(&m);
        }
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite motion energy".into()));
    }
    Ok(EnergyMaps {
        bank: bank.params.clone(),
        units: bank.units.clone(),
        grid,
        working_size: (w, h),
        frame_size: (w, h),
        sigma: params.sigma_frac * bank.max_response,
        data,
    })
}
