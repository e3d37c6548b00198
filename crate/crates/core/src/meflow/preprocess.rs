use std::sync::Arc;

use crate::error::{ensure, Result};
use crate::par;
use crate::stimgen::RasterImage;

/// Row-major grayscale plane in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// ITU-R BT.601 luma.
pub fn luma(img: &RasterImage) -> Plane {
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0.map(f64::from);
            (0.299 * r + 0.587 * g + 0.114 * b) / 255.0
        })
        .collect();
    Plane {
        width: w as usize,
        height: h as usize,
        data,
    }
}

/// Taps for one output sample: first source index and weights.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

/// Triangle-filter resampling weights from `n_in` to `n_out` samples, with
/// output center `i` mapped to source coordinate `(i + 0.5) * n_in / n_out - 0.5`.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<Taps> {
    let ratio = n_in as f64 / n_out as f64;
    let support = ratio.max(1.0);
    (0..n_out)
        .map(|i| {
            let c = (i as f64 + 0.5) * ratio - 0.5;
            let lo = (c - support).floor() as i64 + 1;
            let hi = (c + support).ceil() as i64 - 1;
            let mut w = vec![0.0; n_in];
            let mut first = usize::MAX;
            let mut last = 0;
            for j in lo..=hi {
                let t = 1.0 - ((j as f64 - c) / support).abs();
                if t <= 0.0 {
                    continue;
                }
                let k = j.clamp(0, n_in as i64 - 1) as usize;
                w[k] += t;
                first = first.min(k);
                last = last.max(k);
            }
            let s: f64 = w[first..=last].iter().sum();
            Taps {
                start: first,
                weights: w[first..=last].iter().map(|x| x / s).collect(),
            }
        })
        .collect()
}

/// Separable triangle resampling to `w` by `h`.
pub fn resample(p: &Plane, w: usize, h: usize) -> Plane {
    if (w, h) == (p.width, p.height) {
        return p.clone();
    }
    let tx = axis_taps(p.width, w);
    let ty = axis_taps(p.height, h);
    let rows = par::map_range(p.height, |y| {
        let src = &p.data[y * p.width..(y + 1) * p.width];
        tx.iter()
            .map(|t| {
                t.weights
                    .iter()
                    .zip(&src[t.start..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let out = par::map_range(h, |y| {
        let t = &ty[y];
        (0..w)
            .map(|x| {
                t.weights
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * rows[t.start + k][x])
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    Plane {
        width: w,
        height: h,
        data: out.into_iter().flatten().collect(),
    }
}

/// Working-resolution size for a frame scaled by `scale`.
pub fn working_size(width: usize, height: usize, scale: f64) -> (usize, usize) {
    let w = ((width as f64 * scale).round() as usize).max(1);
    let h = ((height as f64 * scale).round() as usize).max(1);
    (w, h)
}

/// Grayscale working-resolution frames. Frames that share an allocation in
/// the input share one plane.
pub struct WorkingFrames {
    pub planes: Vec<Arc<Plane>>,
    /// Index into `planes` per frame.
    pub index: Vec<usize>,
}

pub fn prepare_frames(frames: &[Arc<RasterImage>], scale: f64) -> Result<WorkingFrames> {
    ensure!(!frames.is_empty(), Parameter, "empty frame sequence");
    ensure!(scale > 0.0 && scale.is_finite(), Parameter, "scale must be positive");
    let dims = frames[0].dimensions();
    ensure!(
        frames.iter().all(|f| f.dimensions() == dims),
        Data,
        "frames differ in size"
    );
    let mut unique: Vec<&Arc<RasterImage>> = Vec::new();
    let mut index = Vec::with_capacity(frames.len());
    for f in frames {
        match unique
            .iter()
            .position(|u| Arc::ptr_eq(u, f) || u.as_raw() == f.as_raw())
        {
            Some(i) => index.push(i),
            None => {
                index.push(unique.len());
                unique.push(f);
            }
        }
    }
    let (w, h) = working_size(dims.0 as usize, dims.1 as usize, scale);
    let planes = unique
        .iter()
        .map(|f| Arc::new(resample(&luma(f), w, h)))
        .collect();
    Ok(WorkingFrames { planes, index })
}
