#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use illusionflow::metrics::Alternative;
use illusionflow::stimgen::RasterImage;
use illusionflow::FlowField;
use image::Rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random field with roughly `invalid_frac` of pixels marked invalid.
pub fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize, invalid_frac: f64) -> FlowField {
    let mut f = FlowField::zeros(w, h);
    for i in 0..w * h {
        if rng.random::<f64>() < invalid_frac {
            f.valid[i] = false;
        } else {
            f.u[i] = rng.random_range(-5.0..5.0);
            f.v[i] = rng.random_range(-5.0..5.0);
        }
    }
    f
}

/// Smooth luminance noise in [0, 1] with periodic wrap, `blur` in pixels.
pub fn noise_texture(w: usize, h: usize, seed: u64, blur: f64) -> Vec<f64> {
    let mut r = rng(seed);
    let raw: Vec<f64> = (0..w * h).map(|_| r.random::<f64>()).collect();
    let rad = (3.0 * blur).ceil() as i64;
    let k: Vec<f64> = (-rad..=rad)
        .map(|d| (-(d * d) as f64 / (2.0 * blur * blur)).exp())
        .collect();
    let ks: f64 = k.iter().sum();
    let blur_axis = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut a = 0.0;
                for d in -rad..=rad {
                    let j = if horizontal {
                        y * w + (x as i64 + d).rem_euclid(w as i64) as usize
                    } else {
                        (y as i64 + d).rem_euclid(h as i64) as usize * w + x
                    };
                    a += k[(d + rad) as usize] * src[j];
                }
                out[y * w + x] = a / ks;
            }
        }
        out
    };
    let b = blur_axis(&blur_axis(&raw, true), false);
    let n = b.len() as f64;
    let m = b.iter().sum::<f64>() / n;
    let sd = (b.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    b.iter().map(|v| (0.5 + 0.2 * (v - m) / sd).clamp(0.0, 1.0)).collect()
}

fn gray(v: f64) -> Rgb<u8> {
    let g = (v * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([g, g, g])
}

/// `n` frames of a `w x h` window over noise translating by `(vx, vy)`
/// integer pixels per frame.
pub fn translating_noise(w: u32, h: u32, n: usize, vx: i64, vy: i64, seed: u64) -> Vec<Arc<RasterImage>> {
    let big = 512usize;
    let tex = noise_texture(big, big, seed, 1.0);
    (0..n as i64)
        .map(|t| {
            Arc::new(RasterImage::from_fn(w, h, |x, y| {
                let sx = (x as i64 - vx * t + 100).rem_euclid(big as i64) as usize;
                let sy = (y as i64 - vy * t + 100).rem_euclid(big as i64) as usize;
                gray(tex[sy * big + sx])
            }))
        })
        .collect()
}

/// Drifting sinusoid `0.5 + c/2 cos(k.x - w t + phase)` with wavevector of
/// frequency `sf` cycles/px along `dir_deg` (counterclockwise, y up) and `tf`
/// cycles/frame.
#[allow(clippy::too_many_arguments)]
pub fn drifting_grating(
    w: u32,
    h: u32,
    n: usize,
    sf: f64,
    dir_deg: f64,
    tf: f64,
    contrast: f64,
    phase: f64,
) -> Vec<Arc<RasterImage>> {
    let th = dir_deg.to_radians();
    let (kx, ky) = (2.0 * PI * sf * th.cos(), -2.0 * PI * sf * th.sin());
    (0..n)
        .map(|t| {
            Arc::new(RasterImage::from_fn(w, h, |x, y| {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let arg = kx * px + ky * py - 2.0 * PI * tf * t as f64 + phase;
                gray(0.5 + 0.5 * contrast * arg.cos())
            }))
        })
        .collect()
}

pub fn flip_horizontal(frames: &[Arc<RasterImage>]) -> Vec<Arc<RasterImage>> {
    frames
        .iter()
        .map(|f| Arc::new(image::imageops::flip_horizontal(f.as_ref())))
        .collect()
}

pub fn naive_corr(p: &FlowField, r: &FlowField) -> f64 {
    let (mut dot, mut pp, mut rr) = (0.0, 0.0, 0.0);
    for y in 0..p.height {
        for x in 0..p.width {
            let i = y * p.width + x;
            if p.valid[i] && r.valid[i] {
                dot += p.u[i] * r.u[i] + p.v[i] * r.v[i];
                pp += p.u[i] * p.u[i] + p.v[i] * p.v[i];
                rr += r.u[i] * r.u[i] + r.v[i] * r.v[i];
            }
        }
    }
    dot / (pp.sqrt() * rr.sqrt())
}

pub fn naive_epe(p: &FlowField, r: &FlowField) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for i in 0..p.len() {
        if p.valid[i] && r.valid[i] {
            s += ((p.u[i] - r.u[i]).powi(2) + (p.v[i] - r.v[i]).powi(2)).sqrt();
            n += 1;
        }
    }
    s / n as f64
}

pub fn naive_ae(p: &FlowField, r: &FlowField) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for i in 0..p.len() {
        if p.valid[i] && r.valid[i] {
            let a = [1.0, p.u[i], p.v[i]];
            let b = [1.0, r.u[i], r.v[i]];
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            s += (dot / (na * nb)).clamp(-1.0, 1.0).acos();
            n += 1;
        }
    }
    s / n as f64
}

/// Brute force over all 2^n sign assignments of the ranks.
pub fn enumerated_p(samples: &[f64], alt: Alternative) -> f64 {
    let x: Vec<f64> = samples.iter().copied().filter(|&v| v != 0.0).collect();
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()));
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]].abs() == x[order[i]].abs() {
            j += 1;
        }
        for &k in &order[i..=j] {
            rank[k] = (i + j + 2) as f64 / 2.0;
        }
        i = j + 1;
    }
    let observed: f64 = (0..n).filter(|&k| x[k] > 0.0).map(|k| rank[k]).sum();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| rank[k]).sum();
        let hit = match alt {
            Alternative::Greater => w >= observed,
            Alternative::Less => w <= observed,
        };
        hits += hit as u64;
    }
    hits as f64 / (1u64 << n) as f64
}
