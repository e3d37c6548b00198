//! Binary flow interchange files and color-wheel visualization.
//!
//! File layout (all little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 0..4  | ASCII `PIEH`                              |
//! | 4..8  | width, `i32`                              |
//! | 8..12 | height, `i32`                             |
//! | 12..  | `width * height` pairs of `f32` (u, v), row-major |
//!
//! Pixels without a valid vector are written as `(1e10, 1e10)`; on read any
//! component with magnitude above `1e9` marks the pixel invalid.

use std::f64::consts::TAU;
use std::path::Path;

use image::RgbImage;

use crate::error::{ensure, Error, Result};
use crate::field::FlowField;
use crate::stimgen::RasterImage;

pub const MAGIC: &[u8; 4] = b"PIEH";
pub const INVALID_THRESHOLD: f64 = 1e9;
pub const INVALID_SENTINEL: f32 = 1e10;

pub fn encode_flow(f: &FlowField) -> Result<Vec<u8>> {
    f.check_consistent()?;
    let w = i32::try_from(f.width).map_err(|_| Error::Format("width exceeds i32".into()))?;
    let h = i32::try_from(f.height).map_err(|_| Error::Format("height exceeds i32".into()))?;
    let mut out = Vec::with_capacity(12 + f.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for i in 0..f.len() {
        let (u, v) = if f.valid[i] {
            let (u, v) = (f.u[i], f.v[i]);
            ensure!(
                u.is_finite() && v.is_finite(),
                Format,
                "non-finite flow at pixel {i}"
            );
            ensure!(
                u.abs() <= INVALID_THRESHOLD && v.abs() <= INVALID_THRESHOLD,
                Format,
                "flow at pixel {i} collides with the invalid sentinel"
            );
            (u as f32, v as f32)
        } else {
            (INVALID_SENTINEL, INVALID_SENTINEL)
        };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    ensure!(bytes.len() >= 12, Format, "file shorter than the 12-byte header");
    ensure!(&bytes[0..4] == MAGIC, Format, "bad magic {:?}", &bytes[0..4]);
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    ensure!(w >= 0 && h >= 0, Format, "negative dimensions {w}x{h}");
    let (w, h) = (w as usize, h as usize);
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let body = &bytes[12..];
    ensure!(
        body.len() == n * 8,
        Format,
        "body has {} bytes, expected {} for {w}x{h}",
        body.len(),
        n * 8
    );
    let mut f = FlowField::zeros(w, h);
    for (i, pair) in body.chunks_exact(8).enumerate() {
        let u = f32::from_le_bytes(pair[0..4].try_into().unwrap()) as f64;
        let v = f32::from_le_bytes(pair[4..8].try_into().unwrap()) as f64;
        ensure!(
            u.is_finite() && v.is_finite(),
            Format,
            "non-finite value at pixel {i}"
        );
        if u.abs() > INVALID_THRESHOLD || v.abs() > INVALID_THRESHOLD {
            f.valid[i] = false;
        } else {
            f.u[i] = u;
            f.v[i] = v;
        }
    }
    Ok(f)
}

/// `f` exactly as it would read back from a flow file.
pub fn wire_precision(f: &FlowField) -> FlowField {
    let mut out = FlowField::zeros(f.width, f.height);
    for i in 0..f.len() {
        if f.valid[i] {
            out.u[i] = f.u[i] as f32 as f64;
            out.v[i] = f.v[i] as f32 as f64;
        } else {
            out.valid[i] = false;
        }
    }
    out
}

pub fn write_flow(f: &FlowField, path: &Path) -> Result<()> {
    let bytes = encode_flow(f)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes)
}

/// Segment lengths of the standard flow color wheel:
/// red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [(usize, [f64; 3], [f64; 3]); 6] = [
    (15, [255.0, 0.0, 0.0], [255.0, 255.0, 0.0]),
    (6, [255.0, 255.0, 0.0], [0.0, 255.0, 0.0]),
    (4, [0.0, 255.0, 0.0], [0.0, 255.0, 255.0]),
    (11, [0.0, 255.0, 255.0], [0.0, 0.0, 255.0]),
    (13, [0.0, 0.0, 255.0], [255.0, 0.0, 255.0]),
    (6, [255.0, 0.0, 255.0], [255.0, 0.0, 0.0]),
];

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(55);
    for (n, a, b) in SEGMENTS {
        for i in 0..n {
            let t = i as f64 / n as f64;
            wheel.push([0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t));
        }
    }
    wheel
}

/// Wheel color for a direction given as displayed-counterclockwise angle in
/// radians: 0 is red (rightward), increasing through yellow, green, cyan,
/// blue and magenta.
pub fn wheel_color(angle: f64) -> [f64; 3] {
    let wheel = color_wheel();
    let n = wheel.len();
    let pos = angle.rem_euclid(TAU) / TAU * n as f64;
    let k0 = (pos.floor() as usize) % n;
    let k1 = (k0 + 1) % n;
    let t = pos - pos.floor();
    [0, 1, 2].map(|c| wheel[k0][c] * (1.0 - t) + wheel[k1][c] * t)
}

/// Hue encodes `atan2(-v, u)`, brightness encodes magnitude divided by the
/// field maximum (`normalize`) or by `scale`. Invalid pixels are black.
pub fn flow_to_png(f: &FlowField, normalize: bool, scale: f64) -> Result<RasterImage> {
    f.check_consistent()?;
    ensure!(
        f.valid.iter().any(|&b| b),
        Data,
        "cannot visualize an all-invalid field"
    );
    let denom = if normalize { f.max_magnitude() } else { scale };
    ensure!(
        normalize || scale > 0.0,
        Parameter,
        "visualization scale must be positive"
    );
    let wheel = color_wheel();
    let n = wheel.len();
    let mut img = RgbImage::new(f.width as u32, f.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let i = f.index(x as usize, y as usize);
        if !f.valid[i] {
            continue;
        }
        let (u, v) = (f.u[i], f.v[i]);
        let mag = u.hypot(v);
        if mag == 0.0 || denom == 0.0 {
            continue;
        }
        let rad = (mag / denom).min(1.0);
        let pos = (-v).atan2(u).rem_euclid(TAU) / TAU * n as f64;
        let k0 = (pos.floor() as usize) % n;
        let k1 = (k0 + 1) % n;
        let t = pos - pos.floor();
        for ((out, a), b) in px.0.iter_mut().zip(wheel[k0]).zip(wheel[k1]) {
            *out = ((a * (1.0 - t) + b * t) * rad).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(img)
}

/// Circular legend: the pixel at offset (dx, dy) from the center shows the
/// color of flow (dx, dy) / radius. Outside the circle is white.
pub fn wheel_legend(size: u32) -> RasterImage {
    let r = size as f64 / 2.0;
    let mut field = FlowField::zeros(size as usize, size as usize);
    for y in 0..size as usize {
        for x in 0..size as usize {
            let dx = x as f64 + 0.5 - r;
            let dy = y as f64 + 0.5 - r;
            let i = field.index(x, y);
            if dx.hypot(dy) <= r {
                field.u[i] = dx / r;
                field.v[i] = dy / r;
            } else {
                field.valid[i] = false;
            }
        }
    }
    let mut img = flow_to_png(&field, false, 1.0).expect("legend has valid pixels");
    for y in 0..size as usize {
        for x in 0..size as usize {
            if !field.valid[field.index(x, y)] {
                img.put_pixel(x as u32, y as u32, image::Rgb([255, 255, 255]));
            }
        }
    }
    img
}
