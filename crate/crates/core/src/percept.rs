//! Expected-percept flow targets: rigid-looking rotation whose speed grows
//! as `(r / R)^gamma * M` from the disk center to its boundary.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::field::FlowField;
use crate::par;
use crate::stimgen::{Disk, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptTarget {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Flow magnitude at the disk boundary, px/frame.
    pub magnitude: f64,
    pub gamma: f64,
    pub sense: Sense,
    pub width: usize,
    pub height: usize,
}

impl PerceptTarget {
    /// Unit boundary speed and linear decay, centered on `disk`.
    pub fn for_disk(disk: Disk, width: usize, height: usize, sense: Sense) -> Self {
        Self {
            cx: disk.cx,
            cy: disk.cy,
            radius: disk.radius,
            magnitude: 1.0,
            gamma: 1.0,
            sense,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.radius > 0.0, Parameter, "radius must be positive");
        ensure!(self.magnitude > 0.0, Parameter, "magnitude must be positive");
        ensure!(self.gamma > 0.0, Parameter, "gamma must be positive");
        ensure!(
            2.0 * self.radius <= self.width as f64 && 2.0 * self.radius <= self.height as f64,
            Geometry,
            "disk of radius {} does not fit a {}x{} canvas",
            self.radius,
            self.width,
            self.height
        );
        Ok(())
    }

    /// Target vector at a continuous position, `None` outside the disk.
    pub fn vector_at(&self, px: f64, py: f64) -> Option<(f64, f64)> {
        let dx = px - self.cx;
        let dy = py - self.cy;
        let r = dx.hypot(dy);
        if r > self.radius {
            return None;
        }
        if r == 0.0 {
            return Some((0.0, 0.0));
        }
        let k = if self.gamma == 1.0 {
            self.magnitude / self.radius
        } else {
            self.magnitude * (r / self.radius).powf(self.gamma) / r
        };
        let s = self.sense.sign();
        // displayed-ccw rotation with y down: (dy, -dx)
        Some((s * k * dy, -s * k * dx))
    }
}

pub fn target_flow(t: &PerceptTarget) -> Result<FlowField> {
    t.validate()?;
    let (w, h) = (t.width, t.height);
    let rows = par::map_range(h, |y| {
        (0..w)
            .map(|x| t.vector_at(x as f64 + 0.5, y as f64 + 0.5))
            .collect::<Vec<_>>()
    });
    let mut f = FlowField::zeros(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, vec) in row.into_iter().enumerate() {
            let i = y * w + x;
            match vec {
                Some((u, v)) => {
                    f.u[i] = u;
                    f.v[i] = v;
                }
                None => f.valid[i] = false,
            }
        }
    }
    Ok(f)
}

/// Diagnostic variant: the rotational target plus a uniform translation.
pub fn target_flow_with_translation(t: &PerceptTarget, tx: f64, ty: f64) -> Result<FlowField> {
    let mut f = target_flow(t)?;
    for i in 0..f.len() {
        if f.valid[i] {
            f.u[i] += tx;
            f.v[i] += ty;
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionReport {
    Cw,
    Unclear,
    Ccw,
}

impl DirectionReport {
    pub fn label(self) -> &'static str {
        match self {
            DirectionReport::Cw => "cw",
            DirectionReport::Unclear => "unclear",
            DirectionReport::Ccw => "ccw",
        }
    }
}

/// Target implied by a behavioral direction report; `Unclear` is the
/// all-valid zero field.
pub fn behavioral_target(report: DirectionReport, t: &PerceptTarget) -> Result<FlowField> {
    t.validate()?;
    match report {
        DirectionReport::Unclear => Ok(FlowField::zeros(t.width, t.height)),
        DirectionReport::Ccw => target_flow(&PerceptTarget {
            sense: Sense::Ccw,
            ..*t
        }),
        DirectionReport::Cw => target_flow(&PerceptTarget {
            sense: Sense::Cw,
            ..*t
        }),
    }
}
