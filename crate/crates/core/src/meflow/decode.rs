use super::energy::{EnergyMaps, EstimatorParams};
use crate::error::{ensure, Result};
use crate::field::FlowField;
use crate::par;

/// Decoded velocities on the energy grid, working pixels per frame.
#[derive(Debug, Clone)]
pub struct GridFlow {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub confidence: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Per-cell velocity from opponent energies.
///
/// Each orientation pair yields a signed speed along its axis: the
/// opponent difference of normalized energies weighted by each unit's
/// preferred speed, over their sum. Axis speeds are then combined as a
/// vector sum weighted by each axis's share of the energy, scaled so that
/// equal shares reduce to `2 / n_orientations`.
pub fn decode_cells(maps: &EnergyMaps, params: &EstimatorParams) -> GridFlow {
    let n_cells = maps.grid.len();
    let n_units = maps.n_units();
    let half = n_units / 2;
    let no = maps.bank.n_directions / 2;
    let q = params.decode_power;
    let threshold = params.invalid_frac * maps.sigma;
    let axes: Vec<(f64, f64)> = (0..no)
        .map(|o| {
            let t = (360.0 * o as f64 / maps.bank.n_directions as f64).to_radians();
            (t.cos(), -t.sin())
        })
        .collect();
    let per_orientation = half / no;
    let cells = par::map_range(n_cells, |c| {
        let mean = (0..n_units).map(|u| maps.at(u, c)).sum::<f64>() / n_units as f64;
        if mean <= threshold {
            return (0.0, 0.0, 0.0, false);
        }
        let norm = maps.sigma + mean;
        let (mut vx, mut vy, mut total) = (0.0, 0.0, 0.0);
        for (o, &(dx, dy)) in axes.iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..per_orientation {
                let u = o * per_orientation + k;
                let unit = &maps.units[u];
                let ep = (maps.at(u, c) / norm).powf(q);
                let em = (maps.at(u + half, c) / norm).powf(q);
                num += (ep - em) * unit.speed();
                den += ep + em;
            }
            vx += num * dx;
            vy += num * dy;
            total += den;
        }
        if total <= 0.0 {
            return (0.0, 0.0, mean / norm, true);
        }
        (2.0 * vx / total, 2.0 * vy / total, mean / norm, true)
    });
    let mut out = GridFlow {
        u: Vec::with_capacity(n_cells),
        v: Vec::with_capacity(n_cells),
        confidence: Vec::with_capacity(n_cells),
        valid: Vec::with_capacity(n_cells),
    };
    for (u, v, c, ok) in cells {
        out.u.push(u);
        out.v.push(v);
        out.confidence.push(c);
        out.valid.push(ok);
    }
    out
}

/// Confidence-weighted Gaussian pooling over valid cells.
pub fn pool(flow: &GridFlow, gw: usize, gh: usize, sigma: f64) -> GridFlow {
    if sigma <= 0.0 {
        return flow.clone();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let cells = par::map_range(gw * gh, |c| {
        if !flow.valid[c] {
            return (0.0, 0.0);
        }
        let (x, y) = ((c % gw) as i64, (c / gw) as i64);
        let (mut su, mut sv, mut sw) = (0.0, 0.0, 0.0);
        for dy in -r..=r {
            let yy = y + dy;
            if yy < 0 || yy >= gh as i64 {
                continue;
            }
            for dx in -r..=r {
                let xx = x + dx;
                if xx < 0 || xx >= gw as i64 {
                    continue;
                }
                let j = yy as usize * gw + xx as usize;
                if !flow.valid[j] {
                    continue;
                }
                let w = k[(dx + r) as usize] * k[(dy + r) as usize] * flow.confidence[j];
                su += w * flow.u[j];
                sv += w * flow.v[j];
                sw += w;
            }
        }
        if sw > 0.0 {
            (su / sw, sv / sw)
        } else {
            (flow.u[c], flow.v[c])
        }
    });
    let mut out = flow.clone();
    for (c, (u, v)) in cells.into_iter().enumerate() {
        out.u[c] = u;
        out.v[c] = v;
    }
    out
}

/// Dense flow at frame resolution in frame pixels per frame.
pub fn decode_flow(maps: &EnergyMaps, params: &EstimatorParams) -> Result<FlowField> {
    ensure!(
        maps.bank == params.bank,
        Data,
        "energy maps come from a different bank"
    );
    let g = maps.grid;
    let cells = pool(&decode_cells(maps, params), g.width, g.height, params.pool_sigma);
    let (ww, wh) = maps.working_size;
    let (fw, fh) = maps.frame_size;
    let sx = ww as f64 / fw as f64;
    let sy = wh as f64 / fh as f64;
    let rows = par::map_range(fh, |y| {
        let wy = (y as f64 + 0.5) * sy - 0.5;
        let gy = ((wy - g.y0 as f64) / g.stride as f64).clamp(0.0, (g.height - 1) as f64);
        let j0 = (gy.floor() as usize).min(g.height.saturating_sub(2));
        let ty = gy - j0 as f64;
        (0..fw)
            .map(|x| {
                let wx = (x as f64 + 0.5) * sx - 0.5;
                let gx = ((wx - g.x0 as f64) / g.stride as f64).clamp(0.0, (g.width - 1) as f64);
                let i0 = (gx.floor() as usize).min(g.width.saturating_sub(2));
                let tx = gx - i0 as f64;
                let (mut su, mut sv, mut sw) = (0.0, 0.0, 0.0);
                for (dj, wyy) in [(0, 1.0 - ty), (1, ty)] {
                    for (di, wxx) in [(0, 1.0 - tx), (1, tx)] {
                        let (i, j) = (i0 + di, j0 + dj);
                        if i >= g.width || j >= g.height {
                            continue;
                        }
                        let c = j * g.width + i;
                        let w = wxx * wyy;
                        if w > 0.0 && cells.valid[c] {
                            su += w * cells.u[c];
                            sv += w * cells.v[c];
                            sw += w;
                        }
                    }
                }
                (sw > 0.0).then(|| (su / sw / sx, sv / sw / sy))
            })
            .collect::<Vec<_>>()
    });
    let mut f = FlowField::zeros(fw, fh);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, val) in row.into_iter().enumerate() {
            let i = y * fw + x;
            match val {
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
