use crate::error::{ensure, Result};

/// Dense per-pixel motion in pixels/frame, image coordinates (y down).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowField {
    /// All-valid zero field.
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let i = self.index(x, y);
        self.valid[i].then(|| (self.u[i], self.v[i]))
    }

    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        let i = self.index(x, y);
        self.u[i] = u;
        self.v[i] = v;
        self.valid[i] = true;
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    pub fn check_consistent(&self) -> Result<()> {
        let n = self.len();
        ensure!(
            self.u.len() == n && self.v.len() == n && self.valid.len() == n,
            Data,
            "flow buffers do not match {}x{}",
            self.width,
            self.height
        );
        Ok(())
    }

    /// Multiply every vector by `a`; masks are kept.
    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.u.iter_mut().for_each(|x| *x *= a);
        out.v.iter_mut().for_each(|x| *x *= a);
        out
    }

    /// Maximum vector magnitude over valid pixels (0 when none).
    pub fn max_magnitude(&self) -> f64 {
        (0..self.len())
            .filter(|&i| self.valid[i])
            .map(|i| self.u[i].hypot(self.v[i]))
            .fold(0.0, f64::max)
    }

    /// Frobenius norm over valid pixels.
    pub fn norm(&self) -> f64 {
        (0..self.len())
            .filter(|&i| self.valid[i])
            .map(|i| self.u[i] * self.u[i] + self.v[i] * self.v[i])
            .fold(0.0, |a, b| a + b)
            .sqrt()
    }

    /// Mean (u, v) over valid pixels.
    pub fn mean_vector(&self) -> Option<(f64, f64)> {
        let n = self.n_valid();
        if n == 0 {
            return None;
        }
        let (mut su, mut sv) = (0.0, 0.0);
        for i in 0..self.len() {
            if self.valid[i] {
                su += self.u[i];
                sv += self.v[i];
            }
        }
        Some((su / n as f64, sv / n as f64))
    }
}
