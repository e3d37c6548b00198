//! First-order motion-energy flow estimator.
//!
//! Frames are converted to luma and resampled to a working resolution, then
//! filtered by a bank of spatiotemporally separable complex Gabor units.
//! Each unit's energy is the squared magnitude of its quadrature response.
//! Opponent energies are decoded into a velocity per grid cell, pooled, and
//! upsampled back to frame resolution.

mod bank;
mod decode;
mod energy;
mod preprocess;
mod probe;

use std::sync::Arc;

pub use bank::{
    build_bank, default_spatial_freqs, default_temporal_freqs, log_space, BankParams, GaborBank,
    SpatialFilter, TemporalFilter, Unit,
};
pub use decode::{decode_cells, decode_flow, pool, GridFlow};
pub use energy::{
    energy_from_planes, motion_energy, spatial_response, EnergyMaps, EstimatorParams, Grid,
    FRAME_DISK_PX, WORKING_DISK_PX,
};
pub use preprocess::{luma, prepare_frames, resample, working_size, Plane, WorkingFrames};
pub use probe::{
    probe_response, probe_unit_tuning, rank_rotation_units, Activation, ProbeGrid, RankedUnit,
    UnitTuning,
};

use crate::error::Result;
use crate::field::FlowField;
use crate::stimgen::RasterImage;

/// Energy and decoded flow in one call.
pub fn estimate_flow(
    frames: &[Arc<RasterImage>],
    bank: &GaborBank,
    params: &EstimatorParams,
) -> Result<FlowField> {
    let maps = motion_energy(frames, bank, params)?;
    decode_flow(&maps, params)
}

/// Write unit tunings as CSV.
pub fn write_tunings_csv(tunings: &[UnitTuning], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in tunings {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| crate::Error::io(path, e))?;
    Ok(())
}

/// Write ranked units as CSV with their nominal preferences.
pub fn write_ranking_csv(
    ranked: &[RankedUnit],
    bank: &GaborBank,
    path: &std::path::Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "unit", "direction_deg", "sf", "tf", "rotation", "static", "difference"])?;
    for (i, r) in ranked.iter().enumerate() {
        let u = &bank.units[r.unit];
        w.write_record([
            i.to_string(),
            r.unit.to_string(),
            u.direction_deg.to_string(),
            u.sf.to_string(),
            u.tf.to_string(),
            r.rotation.to_string(),
            r.baseline.to_string(),
            r.difference().to_string(),
        ])?;
    }
    w.flush().map_err(|e| crate::Error::io(path, e))?;
    Ok(())
}
