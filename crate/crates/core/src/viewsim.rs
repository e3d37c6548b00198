//! Frame sequences that simulate how a static image is viewed: steady
//! fixation, stimulus onset, fixational and saccadic shifts, peripheral
//! placement, and physical rotation.
//!
//! Shift directions use image coordinates: 0° points right and angles grow
//! clockwise on screen (y down), so 225° moves content toward the top-left.
//! Rotation angles are counterclockwise on screen.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use image::imageops::{self, FilterType};
use image::Rgb;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::par;
use crate::stimgen::{RasterImage, MARGIN_WHITE};

pub const DELTA_SET: [u32; 5] = [15, 30, 60, 90, 120];
pub const DIRECTION_SET: [u32; 8] = [0, 45, 90, 135, 180, 225, 270, 315];
pub const MAX_SHIFTS: usize = 3;
pub const DEFAULT_ONSET_FRAME: usize = 3;
pub const DEFAULT_DIRECTION: u32 = 225;
pub const DEFAULT_PX_PER_DEGREE: f64 = 50.0;
pub const EXPORT_FRAME_RATE_HZ: f64 = 5.0;

pub const PERIPHERAL_FIELD_PX: u32 = 2772;
pub const PERIPHERAL_STIMULUS_PX: u32 = 1386;
pub const PERIPHERAL_ORIGIN: [i64; 2] = [346, 346];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Static,
    Onset,
    Shift,
    RandomSlip,
    PeripheralShift,
    VeridicalRotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewingCondition {
    pub kind: ConditionKind,
    pub n_frames: usize,
    pub delta_px: u32,
    pub direction_deg: u32,
    pub shift_frames: Vec<usize>,
    pub onset_frame: usize,
    /// Degrees per frame, counterclockwise on screen when positive.
    pub omega: f64,
    pub seed: u64,
    /// Accept displacements outside [`DELTA_SET`].
    pub allow_any_delta: bool,
    /// Top-left corner of the resized stimulus in the peripheral field.
    pub peripheral_origin: [i64; 2],
}

impl Default for ViewingCondition {
    fn default() -> Self {
        Self {
            kind: ConditionKind::Static,
            n_frames: 15,
            delta_px: 30,
            direction_deg: DEFAULT_DIRECTION,
            shift_frames: Vec::new(),
            onset_frame: DEFAULT_ONSET_FRAME,
            omega: 2.0,
            seed: 0,
            allow_any_delta: false,
            peripheral_origin: PERIPHERAL_ORIGIN,
        }
    }
}

/// Evenly spaced shift onsets: `round(j * n / (k + 1))` for `j = 1..=k`.
pub fn default_shift_frames(n_frames: usize, k: usize) -> Vec<usize> {
    (1..=k)
        .map(|j| ((j * n_frames) as f64 / (k + 1) as f64).round() as usize)
        .collect()
}

impl ViewingCondition {
    pub fn static_view(n_frames: usize) -> Self {
        Self {
            n_frames,
            ..Self::default()
        }
    }

    pub fn onset(n_frames: usize, onset_frame: usize) -> Self {
        Self {
            kind: ConditionKind::Onset,
            n_frames,
            onset_frame,
            ..Self::default()
        }
    }

    /// `k` evenly spaced shifts of `delta_px` along `direction_deg`.
    pub fn shift(n_frames: usize, delta_px: u32, direction_deg: u32, k: usize) -> Self {
        Self {
            kind: ConditionKind::Shift,
            n_frames,
            delta_px,
            direction_deg,
            shift_frames: default_shift_frames(n_frames, k),
            ..Self::default()
        }
    }

    pub fn peripheral(n_frames: usize, delta_px: u32, direction_deg: u32, k: usize) -> Self {
        Self {
            kind: ConditionKind::PeripheralShift,
            ..Self::shift(n_frames, delta_px, direction_deg, k)
        }
    }

    pub fn random_slip(n_frames: usize, seed: u64) -> Self {
        Self {
            kind: ConditionKind::RandomSlip,
            n_frames,
            seed,
            ..Self::default()
        }
    }

    pub fn rotation(n_frames: usize, omega: f64) -> Self {
        Self {
            kind: ConditionKind::VeridicalRotation,
            n_frames,
            omega,
            ..Self::default()
        }
    }

    /// Short identifier used in output paths.
    pub fn id(&self) -> String {
        match self.kind {
            ConditionKind::Static => "static".into(),
            ConditionKind::Onset => format!("onset_f{}", self.onset_frame),
            ConditionKind::Shift => format!(
                "shift_d{}_a{}_k{}",
                self.delta_px,
                self.direction_deg,
                self.shift_frames.len()
            ),
            ConditionKind::PeripheralShift => format!(
                "peripheral_d{}_a{}_k{}",
                self.delta_px,
                self.direction_deg,
                self.shift_frames.len()
            ),
            ConditionKind::RandomSlip => format!("slip_s{}", self.seed),
            ConditionKind::VeridicalRotation => format!("rotation_w{:.4}", self.omega),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_frames >= 2,
            Parameter,
            "need at least 2 frames, got {}",
            self.n_frames
        );
        match self.kind {
            ConditionKind::Static | ConditionKind::RandomSlip => {}
            ConditionKind::Onset => ensure!(
                self.onset_frame >= 1 && self.onset_frame < self.n_frames,
                Parameter,
                "onset frame {} outside [1, {}]",
                self.onset_frame,
                self.n_frames - 1
            ),
            ConditionKind::Shift | ConditionKind::PeripheralShift => {
                ensure!(
                    self.allow_any_delta
                        || self.delta_px == 0
                        || DELTA_SET.contains(&self.delta_px),
                    Parameter,
                    "displacement {} px not in {:?}",
                    self.delta_px,
                    DELTA_SET
                );
                ensure!(
                    DIRECTION_SET.contains(&self.direction_deg),
                    Parameter,
                    "direction {} not a multiple of 45 in [0, 315]",
                    self.direction_deg
                );
                check_shift_frames(&self.shift_frames, self.n_frames)?;
            }
            ConditionKind::VeridicalRotation => {
                ensure!(
                    self.omega.is_finite() && self.omega != 0.0,
                    Parameter,
                    "rotation speed must be nonzero"
                );
                ensure!(
                    self.omega.abs() < 180.0,
                    Parameter,
                    "|omega| = {} is ambiguous (>= 180 deg/frame)",
                    self.omega.abs()
                );
            }
        }
        Ok(())
    }
}

fn check_shift_frames(frames: &[usize], n_frames: usize) -> Result<()> {
    ensure!(
        frames.len() <= MAX_SHIFTS,
        Parameter,
        "at most {MAX_SHIFTS} shifts, got {}",
        frames.len()
    );
    ensure!(
        frames.windows(2).all(|w| w[0] < w[1]),
        Parameter,
        "shift frames must be strictly increasing: {frames:?}"
    );
    ensure!(
        frames.iter().all(|&f| f >= 1 && f < n_frames),
        Parameter,
        "shift frames {frames:?} outside [1, {}]",
        n_frames - 1
    );
    Ok(())
}

/// A displacement applied from `frame` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub frame: usize,
    pub dx: i64,
    pub dy: i64,
}

/// Where the source image sits in frame 0: source pixel `p` lands at
/// `origin + scale * p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub origin: [f64; 2],
    pub scale: f64,
}

impl Placement {
    pub const IDENTITY: Placement = Placement {
        origin: [0.0, 0.0],
        scale: 1.0,
    };

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.origin[0] + self.scale * x,
            self.origin[1] + self.scale * y,
        )
    }
}

#[derive(Debug, Clone)]
pub struct FrameSequence {
    /// Consecutive identical frames share one allocation.
    pub frames: Vec<Arc<RasterImage>>,
    pub events: Vec<Event>,
    pub condition: ViewingCondition,
    pub px_per_degree: f64,
    pub placement: Placement,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    /// Sum of logged displacements.
    pub fn total_offset(&self) -> (i64, i64) {
        self.events
            .iter()
            .fold((0, 0), |(x, y), e| (x + e.dx, y + e.dy))
    }

    /// Position of source point `(x, y)` in the last frame.
    pub fn final_position(&self, x: f64, y: f64) -> (f64, f64) {
        let (px, py) = self.placement.map(x, y);
        let (ox, oy) = self.total_offset();
        (px + ox as f64, py + oy as f64)
    }
}

/// Integer displacement for a step of `delta` along `direction_deg`.
/// Diagonals move `delta` along each axis.
pub fn step_vector(delta: u32, direction_deg: u32) -> (i64, i64) {
    let t = (direction_deg as f64).to_radians();
    let (c, s) = (t.cos(), t.sin());
    let m = c.abs().max(s.abs());
    let d = delta as f64;
    ((d * c / m).round() as i64, (d * s / m).round() as i64)
}

fn white(w: u32, h: u32) -> RasterImage {
    RasterImage::from_pixel(w, h, Rgb(MARGIN_WHITE))
}

/// Bounding box of non-white pixels as `(x0, y0, x1, y1)`, exclusive; the full
/// image when everything is white.
pub fn content_bbox(img: &RasterImage) -> (i64, i64, i64, i64) {
    let (w, h) = img.dimensions();
    let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for (x, y, p) in img.enumerate_pixels() {
        if p.0 != MARGIN_WHITE {
            x0 = x0.min(x as i64);
            y0 = y0.min(y as i64);
            x1 = x1.max(x as i64 + 1);
            y1 = y1.max(y as i64 + 1);
        }
    }
    if x0 == i64::MAX {
        (0, 0, w as i64, h as i64)
    } else {
        (x0, y0, x1, y1)
    }
}

/// Translate by an integer offset, filling exposed canvas with white.
pub fn translate(img: &RasterImage, dx: i64, dy: i64) -> RasterImage {
    let (w, h) = img.dimensions();
    let mut out = white(w, h);
    let row = 3 * w as usize;
    let src = img.as_raw();
    par::for_each_chunk_mut(&mut out, row, |start, dst| {
        let y = (start / row) as i64;
        let sy = y - dy;
        if sy < 0 || sy >= h as i64 {
            return;
        }
        let x_lo = dx.max(0);
        let x_hi = (w as i64 + dx).min(w as i64);
        if x_lo >= x_hi {
            return;
        }
        let s0 = sy as usize * row + 3 * (x_lo - dx) as usize;
        let n = 3 * (x_hi - x_lo) as usize;
        dst[3 * x_lo as usize..3 * x_lo as usize + n].copy_from_slice(&src[s0..s0 + n]);
    });
    out
}

pub fn make_static(image: &RasterImage, n_frames: usize) -> Result<FrameSequence> {
    let cond = ViewingCondition::static_view(n_frames);
    cond.validate()?;
    let f = Arc::new(image.clone());
    Ok(FrameSequence {
        frames: vec![f; n_frames],
        events: Vec::new(),
        condition: cond,
        px_per_degree: DEFAULT_PX_PER_DEGREE,
        placement: Placement::IDENTITY,
    })
}

pub fn make_onset(image: &RasterImage, n_frames: usize, onset_frame: usize) -> Result<FrameSequence> {
    let cond = ViewingCondition::onset(n_frames, onset_frame);
    cond.validate()?;
    let (w, h) = image.dimensions();
    let blank = Arc::new(white(w, h));
    let stim = Arc::new(image.clone());
    let frames = (0..n_frames)
        .map(|i| {
            if i < onset_frame {
                blank.clone()
            } else {
                stim.clone()
            }
        })
        .collect();
    Ok(FrameSequence {
        frames,
        events: vec![Event {
            frame: onset_frame,
            dx: 0,
            dy: 0,
        }],
        condition: cond,
        px_per_degree: DEFAULT_PX_PER_DEGREE,
        placement: Placement::IDENTITY,
    })
}

/// Render frames from an event list; each frame is translated from the
/// original so nothing is lost at the canvas edge.
fn apply_events(
    image: &RasterImage,
    events: &[Event],
    cond: ViewingCondition,
    placement: Placement,
) -> Result<FrameSequence> {
    let (w, h) = image.dimensions();
    let (bx0, by0, bx1, by1) = content_bbox(image);
    let mut offsets = Vec::with_capacity(events.len());
    let (mut ox, mut oy) = (0i64, 0i64);
    for e in events {
        ox += e.dx;
        oy += e.dy;
        let off = bx1 + ox <= 0 || bx0 + ox >= w as i64 || by1 + oy <= 0 || by0 + oy >= h as i64;
        if off {
            return Err(Error::Geometry(format!(
                "cumulative shift ({ox}, {oy}) at frame {} moves the stimulus off canvas",
                e.frame
            )));
        }
        offsets.push((ox, oy));
    }
    let mut frames = Vec::with_capacity(cond.n_frames);
    let mut current = Arc::new(image.clone());
    let mut next_event = 0;
    for i in 0..cond.n_frames {
        while next_event < events.len() && events[next_event].frame == i {
            let (ox, oy) = offsets[next_event];
            current = Arc::new(translate(image, ox, oy));
            next_event += 1;
        }
        frames.push(current.clone());
    }
    Ok(FrameSequence {
        frames,
        events: events.to_vec(),
        condition: cond,
        px_per_degree: DEFAULT_PX_PER_DEGREE,
        placement,
    })
}

fn shift_events(cond: &ViewingCondition) -> Vec<Event> {
    let (dx, dy) = step_vector(cond.delta_px, cond.direction_deg);
    if dx == 0 && dy == 0 {
        return Vec::new();
    }
    cond.shift_frames
        .iter()
        .map(|&frame| Event { frame, dx, dy })
        .collect()
}

pub fn make_shift(image: &RasterImage, cond: &ViewingCondition) -> Result<FrameSequence> {
    ensure!(
        cond.kind == ConditionKind::Shift,
        Parameter,
        "expected a shift condition, got {:?}",
        cond.kind
    );
    cond.validate()?;
    apply_events(image, &shift_events(cond), cond.clone(), Placement::IDENTITY)
}

/// Draw 1 to 3 shifts at distinct frames, each with its own direction and
/// magnitude.
pub fn random_slip_events(n_frames: usize, seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=MAX_SHIFTS).min(n_frames - 1);
    let mut frames: Vec<usize> = rand::seq::index::sample(&mut rng, n_frames - 1, k)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    frames.sort_unstable();
    frames
        .into_iter()
        .map(|frame| {
            let dir = *DIRECTION_SET.choose(&mut rng).expect("nonempty");
            let delta = *DELTA_SET.choose(&mut rng).expect("nonempty");
            let (dx, dy) = step_vector(delta, dir);
            Event { frame, dx, dy }
        })
        .collect()
}

pub fn make_random_slip(image: &RasterImage, n_frames: usize, seed: u64) -> Result<FrameSequence> {
    let cond = ViewingCondition::random_slip(n_frames, seed);
    cond.validate()?;
    let events = random_slip_events(n_frames, seed);
    apply_events(image, &events, cond, Placement::IDENTITY)
}

/// Resize to the peripheral stimulus size and embed in the white field.
pub fn peripheral_embedding(image: &RasterImage, origin: [i64; 2]) -> (RasterImage, Placement) {
    let resized = if image.dimensions() == (PERIPHERAL_STIMULUS_PX, PERIPHERAL_STIMULUS_PX) {
        image.clone()
    } else {
        imageops::resize(
            image,
            PERIPHERAL_STIMULUS_PX,
            PERIPHERAL_STIMULUS_PX,
            FilterType::Triangle,
        )
    };
    let mut field = white(PERIPHERAL_FIELD_PX, PERIPHERAL_FIELD_PX);
    imageops::replace(&mut field, &resized, origin[0], origin[1]);
    let (w, h) = image.dimensions();
    let placement = Placement {
        origin: [origin[0] as f64, origin[1] as f64],
        scale: PERIPHERAL_STIMULUS_PX as f64 / w.max(h) as f64,
    };
    (field, placement)
}

pub fn make_peripheral(image: &RasterImage, cond: &ViewingCondition) -> Result<FrameSequence> {
    ensure!(
        cond.kind == ConditionKind::PeripheralShift,
        Parameter,
        "expected a peripheral condition, got {:?}",
        cond.kind
    );
    ensure!(
        image.width() == image.height(),
        Geometry,
        "peripheral embedding needs a square stimulus, got {}x{}",
        image.width(),
        image.height()
    );
    cond.validate()?;
    let (field, placement) = peripheral_embedding(image, cond.peripheral_origin);
    apply_events(&field, &shift_events(cond), cond.clone(), placement)
}

/// Rotate about `(cx, cy)` by `deg` (counterclockwise on screen) with
/// bilinear resampling; samples outside the image read as white.
pub fn rotate_bilinear(img: &RasterImage, deg: f64, cx: f64, cy: f64) -> RasterImage {
    let (w, h) = img.dimensions();
    let (s, c) = deg.to_radians().sin_cos();
    let mut out = white(w, h);
    let row = 3 * w as usize;
    let fetch = |x: i64, y: i64| -> [f64; 3] {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            MARGIN_WHITE.map(f64::from)
        } else {
            img.get_pixel(x as u32, y as u32).0.map(f64::from)
        }
    };
    par::for_each_chunk_mut(&mut out, row, |start, dst| {
        let y = start / row;
        let dy = y as f64 + 0.5 - cy;
        for x in 0..w as usize {
            let dx = x as f64 + 0.5 - cx;
            let sx = cx + dx * c - dy * s - 0.5;
            let sy = cy + dx * s + dy * c - 0.5;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let (fx, fy) = (sx - x0, sy - y0);
            let (xi, yi) = (x0 as i64, y0 as i64);
            let p00 = fetch(xi, yi);
            let p10 = fetch(xi + 1, yi);
            let p01 = fetch(xi, yi + 1);
            let p11 = fetch(xi + 1, yi + 1);
            for ch in 0..3 {
                let top = p00[ch] + fx * (p10[ch] - p00[ch]);
                let bot = p01[ch] + fx * (p11[ch] - p01[ch]);
                let v = top + fy * (bot - top);
                dst[3 * x + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    out
}

/// Frame `k` is the input rotated by `k * omega` about the image center.
pub fn make_veridical_rotation(
    image: &RasterImage,
    omega: f64,
    n_frames: usize,
) -> Result<FrameSequence> {
    let cond = ViewingCondition::rotation(n_frames, omega);
    cond.validate()?;
    let (w, h) = image.dimensions();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut frames = vec![Arc::new(image.clone())];
    for k in 1..n_frames {
        frames.push(Arc::new(rotate_bilinear(image, k as f64 * omega, cx, cy)));
    }
    Ok(FrameSequence {
        frames,
        events: Vec::new(),
        condition: cond,
        px_per_degree: DEFAULT_PX_PER_DEGREE,
        placement: Placement::IDENTITY,
    })
}

/// Frame size, placement and displacement log that [`generate`] produces for
/// a `width` by `height` input, without rendering any frame.
pub fn plan(width: u32, height: u32, cond: &ViewingCondition) -> Result<(u32, u32, Placement, Vec<Event>)> {
    cond.validate()?;
    Ok(match cond.kind {
        ConditionKind::Static | ConditionKind::VeridicalRotation => {
            (width, height, Placement::IDENTITY, Vec::new())
        }
        ConditionKind::Onset => (
            width,
            height,
            Placement::IDENTITY,
            vec![Event {
                frame: cond.onset_frame,
                dx: 0,
                dy: 0,
            }],
        ),
        ConditionKind::Shift => (width, height, Placement::IDENTITY, shift_events(cond)),
        ConditionKind::RandomSlip => (
            width,
            height,
            Placement::IDENTITY,
            random_slip_events(cond.n_frames, cond.seed),
        ),
        ConditionKind::PeripheralShift => {
            let o = cond.peripheral_origin;
            let placement = Placement {
                origin: [o[0] as f64, o[1] as f64],
                scale: PERIPHERAL_STIMULUS_PX as f64 / width.max(height) as f64,
            };
            (
                PERIPHERAL_FIELD_PX,
                PERIPHERAL_FIELD_PX,
                placement,
                shift_events(cond),
            )
        }
    })
}

/// Dispatch on the condition kind.
pub fn generate(image: &RasterImage, cond: &ViewingCondition) -> Result<FrameSequence> {
    cond.validate()?;
    let mut seq = match cond.kind {
        ConditionKind::Static => make_static(image, cond.n_frames)?,
        ConditionKind::Onset => make_onset(image, cond.n_frames, cond.onset_frame)?,
        ConditionKind::Shift => make_shift(image, cond)?,
        ConditionKind::RandomSlip => make_random_slip(image, cond.n_frames, cond.seed)?,
        ConditionKind::PeripheralShift => make_peripheral(image, cond)?,
        ConditionKind::VeridicalRotation => {
            make_veridical_rotation(image, cond.omega, cond.n_frames)?
        }
    };
    seq.condition = cond.clone();
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExportOptions {
    /// Black fixation cross in the bottom-right corner.
    pub fixation_cross: bool,
    /// Also write `sequence.gif` at the nominal frame rate.
    pub gif: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub condition: ViewingCondition,
    pub events: Vec<Event>,
    pub px_per_degree: f64,
    pub frame_rate_hz: f64,
    pub placement: Placement,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<String>,
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

pub fn draw_fixation_cross(img: &mut RasterImage) {
    let (w, h) = img.dimensions();
    let arm = (w.min(h) / 40).max(3) as i64;
    let half_t = (arm / 6).max(1);
    let cx = w as i64 - 2 * arm;
    let cy = h as i64 - 2 * arm;
    for d in -arm..=arm {
        for t in -half_t..=half_t {
            for (x, y) in [(cx + d, cy + t), (cx + t, cy + d)] {
                if x >= 0 && y >= 0 && x < w as i64 && y < h as i64 {
                    img.put_pixel(x as u32, y as u32, Rgb([0, 0, 0]));
                }
            }
        }
    }
}

pub fn write_sequence(seq: &FrameSequence, dir: &Path, opts: ExportOptions) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = seq.dimensions();
    let mut names = Vec::with_capacity(seq.len());
    let mut rendered = Vec::new();
    for (i, frame) in seq.frames.iter().enumerate() {
        let name = frame_file_name(i);
        let path = dir.join(&name);
        if opts.fixation_cross {
            let mut f = (**frame).clone();
            draw_fixation_cross(&mut f);
            f.save(&path)?;
            if opts.gif {
                rendered.push(f);
            }
        } else {
            frame.save(&path)?;
            if opts.gif {
                rendered.push((**frame).clone());
            }
        }
        names.push(name);
    }
    let manifest = SequenceManifest {
        condition: seq.condition.clone(),
        events: seq.events.clone(),
        px_per_degree: seq.px_per_degree,
        frame_rate_hz: EXPORT_FRAME_RATE_HZ,
        placement: seq.placement,
        width: w,
        height: h,
        frames: names,
    };
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    if opts.gif {
        write_gif(&rendered, &dir.join("sequence.gif"))?;
    }
    Ok(())
}

fn write_gif(frames: &[RasterImage], path: &Path) -> Result<()> {
    use image::codecs::gif::{GifEncoder, Repeat};
    use image::{Delay, DynamicImage, Frame};
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = GifEncoder::new_with_speed(std::io::BufWriter::new(file), 10);
    enc.set_repeat(Repeat::Infinite)?;
    let delay = Delay::from_numer_denom_ms((1000.0 / EXPORT_FRAME_RATE_HZ) as u32, 1);
    for f in frames {
        let rgba = DynamicImage::ImageRgb8(f.clone()).into_rgba8();
        enc.encode_frame(Frame::from_parts(rgba, 0, 0, delay))?;
    }
    Ok(())
}

/// Load a sequence written by [`write_sequence`] (without fixation cross).
pub fn read_sequence(dir: &Path) -> Result<FrameSequence> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: SequenceManifest = serde_json::from_str(&text)?;
    let mut frames: Vec<Arc<RasterImage>> = Vec::with_capacity(m.frames.len());
    for name in &m.frames {
        let img = image::open(dir.join(name))?.into_rgb8();
        ensure!(
            img.dimensions() == (m.width, m.height),
            Data,
            "{name} is {:?}, manifest says {}x{}",
            img.dimensions(),
            m.width,
            m.height
        );
        match frames.last() {
            Some(prev) if **prev == img => frames.push(prev.clone()),
            _ => frames.push(Arc::new(img)),
        }
    }
    Ok(FrameSequence {
        frames,
        events: m.events,
        condition: m.condition,
        px_per_degree: m.px_per_degree,
        placement: m.placement,
    })
}
