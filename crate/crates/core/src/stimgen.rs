//! Parametric rendering of anomalous-motion stimuli.
//!
//! Coordinates: pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`, y grows
//! downward, and angles are measured counterclockwise *as displayed*, i.e.
//! `theta = atan2(-(y - cy), x - cx)`. The same convention is used by the
//! viewing simulator, the percept targets and the flow decoder.
//!
//! Rotational polarity lives in one place: [`micropattern`]. For a
//! counterclockwise percept the repeating unit is (black, g1, white, g2)
//! proceeding counterclockwise; the clockwise unit is that list reversed.

use std::f64::consts::TAU;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::par;

pub type RasterImage = RgbImage;

pub const MARGIN_WHITE: [u8; 3] = [255, 255, 255];
pub const CENTER_GRAY: [u8; 3] = [128, 128, 128];

/// Base chromatic coordinates at the default intermediate luminances.
const BLUE: [u8; 3] = [0, 0, 255];
const YELLOW: [u8; 3] = [255, 255, 0];
const RED: [u8; 3] = [255, 0, 0];
const GREEN: [u8; 3] = [0, 128, 0];
const DEFAULT_G1: f64 = 0.25;
const DEFAULT_G2: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RotatingSnakes,
    PeripheralDrift,
    CentralDrift,
    Ouchi,
}

impl Family {
    pub fn short(self) -> &'static str {
        match self {
            Family::RotatingSnakes => "snakes",
            Family::PeripheralDrift => "pdi",
            Family::CentralDrift => "cdi",
            Family::Ouchi => "ouchi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorScheme {
    Grayscale,
    BlueYellow,
    RedGreen,
}

impl ColorScheme {
    /// Column label used in heatmaps (G, B-Y, R-G).
    pub fn label(self) -> &'static str {
        match self {
            ColorScheme::Grayscale => "G",
            ColorScheme::BlueYellow => "B-Y",
            ColorScheme::RedGreen => "R-G",
        }
    }

    fn short(self) -> &'static str {
        match self {
            ColorScheme::Grayscale => "g",
            ColorScheme::BlueYellow => "by",
            ColorScheme::RedGreen => "rg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Ccw,
    Cw,
}

impl Sense {
    /// +1 for counterclockwise, -1 for clockwise.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Ccw => 1.0,
            Sense::Cw => -1.0,
        }
    }

    pub fn reversed(self) -> Sense {
        match self {
            Sense::Ccw => Sense::Cw,
            Sense::Cw => Sense::Ccw,
        }
    }

    fn short(self) -> &'static str {
        match self {
            Sense::Ccw => "ccw",
            Sense::Cw => "cw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimulusSpec {
    pub family: Family,
    pub color_scheme: ColorScheme,
    pub rings: usize,
    pub elements_per_ring: usize,
    pub g1: f64,
    pub g2: f64,
    pub sense: Sense,
    pub canvas_px: u32,
    pub margin_px: u32,
    pub control_permutation: Option<[usize; 4]>,
    /// Recorded with the stimulus; rendering itself draws no random numbers.
    pub seed: u64,
    /// Inner radius of the first ring as a fraction of the disk radius.
    pub inner_radius_frac: f64,
    /// 4x4 supersampling instead of hard element boundaries.
    pub antialias: bool,
    /// Offset odd rings by half an element.
    pub stagger_rings: bool,
    /// Number of unequal luminance steps per peripheral-drift element.
    pub pdi_steps: usize,
    /// Number of radial sectors of the central-drift pattern.
    pub cdi_sectors: usize,
    /// Long and short side of an Ouchi check, in pixels.
    pub ouchi_check_px: [u32; 2],
    /// Side of the Ouchi center patch as a fraction of the pattern side.
    pub ouchi_patch_frac: f64,
}

impl Default for StimulusSpec {
    fn default() -> Self {
        Self {
            family: Family::RotatingSnakes,
            color_scheme: ColorScheme::Grayscale,
            rings: 6,
            elements_per_ring: 24,
            g1: DEFAULT_G1,
            g2: DEFAULT_G2,
            sense: Sense::Ccw,
            canvas_px: 1506,
            margin_px: 120,
            control_permutation: None,
            seed: 0,
            inner_radius_frac: 0.08,
            antialias: false,
            stagger_rings: true,
            pdi_steps: 8,
            cdi_sectors: 16,
            ouchi_check_px: [32, 8],
            ouchi_patch_frac: 0.4,
        }
    }
}

pub const DEFAULT_CONTROL_PERMUTATION: [usize; 4] = [0, 2, 1, 3];

/// Center and radius of the stimulus disk in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl StimulusSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.g1 > 0.0 && self.g1 < self.g2 && self.g2 < 1.0,
            Parameter,
            "need 0 < g1 < g2 < 1, got g1={} g2={}",
            self.g1,
            self.g2
        );
        ensure!(self.rings >= 1, Parameter, "rings must be >= 1");
        ensure!(
            self.elements_per_ring >= 4 && self.elements_per_ring.is_multiple_of(4),
            Parameter,
            "elements_per_ring must be >= 4 and divisible by 4, got {}",
            self.elements_per_ring
        );
        ensure!(
            (0.0..1.0).contains(&self.inner_radius_frac),
            Parameter,
            "inner_radius_frac must be in [0, 1)"
        );
        ensure!(
            self.canvas_px > 2 * self.margin_px,
            Geometry,
            "canvas {} leaves no room for a disk with margin {}",
            self.canvas_px,
            self.margin_px
        );
        if let Some(p) = self.control_permutation {
            check_permutation(p)?;
        }
        Ok(())
    }

    pub fn disk(&self) -> Disk {
        let c = self.canvas_px as f64 / 2.0;
        Disk {
            cx: c,
            cy: c,
            radius: (self.canvas_px - 2 * self.margin_px) as f64 / 2.0,
        }
    }

    /// Stable identifier used in file layouts, e.g. `snakes_g_ccw_g025-075`.
    pub fn id(&self) -> String {
        format!(
            "{}_{}_{}_g{:03}-{:03}",
            self.family.short(),
            self.color_scheme.short(),
            self.sense.short(),
            (self.g1 * 100.0).round() as i64,
            (self.g2 * 100.0).round() as i64
        )
    }

    fn ring_geometry(&self) -> (f64, f64) {
        let disk = self.disk();
        let inner = self.inner_radius_frac * disk.radius;
        (inner, (disk.radius - inner) / self.rings as f64)
    }
}

fn check_permutation(p: [usize; 4]) -> Result<()> {
    let mut seen = [false; 4];
    for &i in &p {
        ensure!(i < 4 && !seen[i], Parameter, "{p:?} is not a permutation of 0..4");
        seen[i] = true;
    }
    Ok(())
}

/// The repeating four-color unit in counterclockwise angular order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Micropattern {
    pub colors: [[u8; 3]; 4],
    /// Nominal luminance level of each slot (0 = black, 1 = white).
    pub levels: [f64; 4],
}

fn gray(l: f64) -> [u8; 3] {
    let v = (l * 255.0).round().clamp(0.0, 255.0) as u8;
    [v, v, v]
}

fn scaled(base: [u8; 3], factor: f64) -> [u8; 3] {
    base.map(|c| (c as f64 * factor).round().clamp(0.0, 255.0) as u8)
}

fn intermediates(scheme: ColorScheme, g1: f64, g2: f64) -> ([u8; 3], [u8; 3]) {
    match scheme {
        ColorScheme::Grayscale => (gray(g1), gray(g2)),
        ColorScheme::BlueYellow => (
            scaled(BLUE, g1 / DEFAULT_G1),
            scaled(YELLOW, g2 / DEFAULT_G2),
        ),
        ColorScheme::RedGreen => (scaled(RED, g1 / DEFAULT_G1), scaled(GREEN, g2 / DEFAULT_G2)),
    }
}

pub fn micropattern(spec: &StimulusSpec) -> Result<Micropattern> {
    ensure!(
        spec.g1 > 0.0 && spec.g1 < spec.g2 && spec.g2 < 1.0,
        Parameter,
        "need 0 < g1 < g2 < 1, got g1={} g2={}",
        spec.g1,
        spec.g2
    );
    let (dark, light) = intermediates(spec.color_scheme, spec.g1, spec.g2);
    let mut colors = [gray(0.0), dark, gray(1.0), light];
    let mut levels = [0.0, spec.g1, 1.0, spec.g2];
    if spec.sense == Sense::Cw {
        colors.reverse();
        levels.reverse();
    }
    Ok(Micropattern { colors, levels })
}

/// Position of a pixel inside the ring layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutCell {
    Margin,
    Center,
    Unit { ring: usize, element: usize, slot: usize },
}

/// Polar coordinates of a sample point relative to the disk center, with the
/// displayed-counterclockwise angle normalized to `[0, 2pi)`.
fn polar(disk: &Disk, px: f64, py: f64) -> (f64, f64) {
    let dx = px - disk.cx;
    let dy = py - disk.cy;
    let r = dx.hypot(dy);
    let mut theta = (-dy).atan2(dx);
    if theta < 0.0 {
        theta += TAU;
    }
    (r, theta)
}

/// Ring, element and position inside the element (`[0, 1)`) of a
/// continuous sample point.
#[derive(Debug, Clone, Copy)]
enum UnitPosition {
    Margin,
    Center,
    Unit { ring: usize, element: usize, frac: f64 },
}

fn unit_position(spec: &StimulusSpec, disk: &Disk, px: f64, py: f64) -> UnitPosition {
    let (r, theta) = polar(disk, px, py);
    if r > disk.radius {
        return UnitPosition::Margin;
    }
    let (inner, thickness) = spec.ring_geometry();
    if r < inner {
        return UnitPosition::Center;
    }
    let ring = (((r - inner) / thickness) as usize).min(spec.rings - 1);
    let e = spec.elements_per_ring;
    let period = TAU / e as f64;
    let phase = if spec.stagger_rings && ring % 2 == 1 {
        period / 2.0
    } else {
        0.0
    };
    let u = (theta - phase).rem_euclid(TAU) / period;
    let element = (u.floor() as usize).min(e - 1);
    UnitPosition::Unit {
        ring,
        element,
        frac: u - u.floor(),
    }
}

/// Slot by equal angle; used for supersampled rendering.
fn ring_cell(spec: &StimulusSpec, disk: &Disk, px: f64, py: f64) -> LayoutCell {
    match unit_position(spec, disk, px, py) {
        UnitPosition::Margin => LayoutCell::Margin,
        UnitPosition::Center => LayoutCell::Center,
        UnitPosition::Unit { ring, element, frac } => LayoutCell::Unit {
            ring,
            element,
            slot: ((frac * 4.0) as usize).min(3),
        },
    }
}

/// Pixel layout, row-major, sampled at pixel centers. Shared by illusion and
/// control renders, so the layout mask of both is identical by construction.
///
/// Inside each unit, pixels are ordered by angle and split by count rather
/// than by angle: slots 1 and 2 hold exactly `n / 4` pixels each and the
/// remainder goes to slots 0 and 3. Any permutation that only exchanges
/// slots 1 and 2 therefore keeps every unit's pixel histogram.
pub fn layout(spec: &StimulusSpec) -> Vec<LayoutCell> {
    let disk = spec.disk();
    let w = spec.canvas_px as usize;
    let pos = par::map_range(w * w, |i| {
        unit_position(spec, &disk, (i % w) as f64 + 0.5, (i / w) as f64 + 0.5)
    });
    let e = spec.elements_per_ring;
    let mut members: Vec<Vec<(f64, usize)>> = vec![Vec::new(); spec.rings * e];
    let mut out: Vec<LayoutCell> = pos
        .iter()
        .enumerate()
        .map(|(i, p)| match *p {
            UnitPosition::Margin => LayoutCell::Margin,
            UnitPosition::Center => LayoutCell::Center,
            UnitPosition::Unit { ring, element, frac } => {
                members[ring * e + element].push((frac, i));
                LayoutCell::Margin
            }
        })
        .collect();
    for (k, mut m) in members.into_iter().enumerate() {
        m.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (q, r) = (m.len() / 4, m.len() % 4);
        let counts = [q + r.div_ceil(2), q, q, q + r / 2];
        let mut slot = 0;
        let mut left = counts[0];
        for (_, i) in m {
            while left == 0 {
                slot += 1;
                left = counts[slot];
            }
            left -= 1;
            out[i] = LayoutCell::Unit {
                ring: k / e,
                element: k % e,
                slot,
            };
        }
    }
    out
}

fn render_with<F>(spec: &StimulusSpec, sample: F) -> RasterImage
where
    F: Fn(f64, f64) -> [f64; 3] + Sync + Send,
{
    let w = spec.canvas_px;
    let row = w as usize * 3;
    let mut data = vec![0u8; row * w as usize];
    let aa = spec.antialias;
    par::for_each_chunk_mut(&mut data, row, |start, chunk| {
        let y = (start / row) as f64;
        for x in 0..w as usize {
            let c = if aa {
                let mut acc = [0.0; 3];
                for sy in 0..4 {
                    for sx in 0..4 {
                        let s = sample(
                            x as f64 + (sx as f64 + 0.5) / 4.0,
                            y + (sy as f64 + 0.5) / 4.0,
                        );
                        for k in 0..3 {
                            acc[k] += s[k];
                        }
                    }
                }
                acc.map(|v| v / 16.0)
            } else {
                sample(x as f64 + 0.5, y + 0.5)
            };
            for k in 0..3 {
                chunk[x * 3 + k] = c[k].round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    RgbImage::from_raw(w, w, data).expect("buffer sized from canvas")
}

fn to_f(c: [u8; 3]) -> [f64; 3] {
    c.map(|v| v as f64)
}

fn render_units(spec: &StimulusSpec, perm: [usize; 4]) -> Result<RasterImage> {
    spec.validate()?;
    let (_, thickness) = spec.ring_geometry();
    ensure!(
        thickness >= 2.0,
        Geometry,
        "ring thickness {thickness:.2} px is too small for {} rings",
        spec.rings
    );
    let pattern = micropattern(spec)?;
    let colors = perm.map(|i| to_f(pattern.colors[i]));
    let color = |c: LayoutCell| match c {
        LayoutCell::Margin => to_f(MARGIN_WHITE),
        LayoutCell::Center => to_f(CENTER_GRAY),
        LayoutCell::Unit { slot, .. } => colors[slot],
    };
    if spec.antialias {
        let disk = spec.disk();
        return Ok(render_with(spec, |px, py| color(ring_cell(spec, &disk, px, py))));
    }
    let cells = layout(spec);
    let data = cells
        .into_iter()
        .flat_map(|c| color(c).map(|v| v as u8))
        .collect();
    let w = spec.canvas_px;
    Ok(RgbImage::from_raw(w, w, data).expect("buffer sized from canvas"))
}

pub fn render_snakes(spec: &StimulusSpec) -> Result<RasterImage> {
    ensure!(
        spec.family == Family::RotatingSnakes,
        Parameter,
        "render_snakes needs the rotating_snakes family, got {:?}",
        spec.family
    );
    render_units(spec, [0, 1, 2, 3])
}

/// Same layout as [`render_snakes`] with each unit's slot colors permuted.
pub fn render_control(spec: &StimulusSpec) -> Result<RasterImage> {
    ensure!(
        spec.family == Family::RotatingSnakes,
        Parameter,
        "controls are defined for rotating_snakes only, got {:?}",
        spec.family
    );
    let perm = spec
        .control_permutation
        .unwrap_or(DEFAULT_CONTROL_PERMUTATION);
    check_permutation(perm)?;
    render_units(spec, perm)
}

/// Peripheral drift, central drift and Ouchi patterns.
pub fn render_related(spec: &StimulusSpec) -> Result<RasterImage> {
    spec.validate()?;
    match (spec.family, spec.color_scheme) {
        (Family::PeripheralDrift, ColorScheme::Grayscale | ColorScheme::BlueYellow) => {
            Ok(render_pdi(spec))
        }
        (Family::CentralDrift, ColorScheme::Grayscale) => Ok(render_cdi(spec)),
        (Family::Ouchi, ColorScheme::Grayscale) => Ok(render_ouchi(spec)),
        (Family::RotatingSnakes, _) => Err(Error::Parameter(
            "use render_snakes for rotating_snakes".into(),
        )),
        (f, s) => Err(Error::Parameter(format!(
            "family {f:?} is not available in color scheme {s:?}"
        ))),
    }
}

/// Render whatever the spec describes (illusion image, never the control).
pub fn render(spec: &StimulusSpec) -> Result<RasterImage> {
    match spec.family {
        Family::RotatingSnakes => render_snakes(spec),
        _ => render_related(spec),
    }
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] as f64 + (b[k] as f64 - a[k] as f64) * t)
}

/// Fraction `[0, 1)` of the way through the current element along the
/// percept direction.
fn directed_fraction(u: f64, sense: Sense) -> f64 {
    let f = u - u.floor();
    match sense {
        Sense::Ccw => f,
        Sense::Cw => 1.0 - f,
    }
}

fn render_pdi(spec: &StimulusSpec) -> RasterImage {
    let disk = spec.disk();
    let (inner, thickness) = spec.ring_geometry();
    let (dark, light) = match spec.color_scheme {
        ColorScheme::BlueYellow => (BLUE, YELLOW),
        _ => ([0, 0, 0], [255, 255, 255]),
    };
    let steps = spec.pdi_steps.max(2);
    let period = TAU / spec.elements_per_ring as f64;
    render_with(spec, |px, py| {
        let (r, theta) = polar(&disk, px, py);
        if r > disk.radius {
            return to_f(MARGIN_WHITE);
        }
        if r < inner {
            return to_f(CENTER_GRAY);
        }
        let ring = (((r - inner) / thickness) as usize).min(spec.rings - 1);
        let phase = if spec.stagger_rings && ring % 2 == 1 {
            period / 2.0
        } else {
            0.0
        };
        let f = directed_fraction((theta - phase).rem_euclid(TAU) / period, spec.sense);
        let step = ((f * steps as f64) as usize).min(steps - 1);
        // unequal steps: quadratic luminance staircase
        let t = (step as f64 / (steps - 1) as f64).powi(2);
        lerp(dark, light, t)
    })
}

fn render_cdi(spec: &StimulusSpec) -> RasterImage {
    let disk = spec.disk();
    let inner = spec.inner_radius_frac * disk.radius;
    let period = TAU / spec.cdi_sectors.max(2) as f64;
    render_with(spec, |px, py| {
        let (r, theta) = polar(&disk, px, py);
        if r > disk.radius {
            return to_f(MARGIN_WHITE);
        }
        if r < inner {
            return to_f(CENTER_GRAY);
        }
        let f = directed_fraction(theta / period, spec.sense);
        lerp([0, 0, 0], [255, 255, 255], f)
    })
}

fn render_ouchi(spec: &StimulusSpec) -> RasterImage {
    let lo = spec.margin_px as f64;
    let hi = (spec.canvas_px - spec.margin_px) as f64;
    let side = hi - lo;
    let c = spec.canvas_px as f64 / 2.0;
    let half_patch = spec.ouchi_patch_frac * side / 2.0;
    let long = spec.ouchi_check_px[0].max(1) as f64;
    let short = spec.ouchi_check_px[1].max(1) as f64;
    render_with(spec, |px, py| {
        if px < lo || px >= hi || py < lo || py >= hi {
            return to_f(MARGIN_WHITE);
        }
        let in_patch = (px - c).abs() < half_patch && (py - c).abs() < half_patch;
        // surround checks are wide, patch checks are tall
        let (cw, ch) = if in_patch { (short, long) } else { (long, short) };
        let i = ((px - lo) / cw).floor() as i64;
        let j = ((py - lo) / ch).floor() as i64;
        if (i + j).rem_euclid(2) == 0 {
            [0.0; 3]
        } else {
            [255.0; 3]
        }
    })
}

/// Key-value provenance text for a rendered stimulus.
pub fn manifest(spec: &StimulusSpec) -> String {
    toml::to_string(spec).expect("stimulus spec serializes")
}

pub fn write_png(img: &RasterImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Write `<path>` as PNG and `<path>.toml` with the full spec.
pub fn write_stimulus(spec: &StimulusSpec, img: &RasterImage, path: &Path) -> Result<()> {
    write_png(img, path)?;
    let side = path.with_extension("toml");
    std::fs::write(&side, manifest(spec)).map_err(|e| Error::io(side, e))
}
