//! Export, reparse and interpret a model, then compare against the native
//! forward pass on the same dense grid.

use serde::{Deserialize, Serialize};

use crate::dataset::{Excitation, NormStats, Waveform};
use crate::error::{Error, Result};
use crate::models::{model_forward, ModelConfig};
use crate::params::ParamStore;
use crate::train::nrmse;

use super::ast::print_module;
use super::export::export_module;
use super::interp::simulate_subset;
use super::parse::parse_subset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub max_abs_error: f64,
    /// RMS error over the native output range.
    pub nrmse: f64,
    pub timestep: f64,
    pub steps: usize,
}

/// One period of `excitation` sampled every `timestep` (rounded so the period
/// is a whole number of steps), starting at `t = 0`.
pub fn dense_excitation(excitation: &Excitation, timestep: f64) -> Result<Waveform> {
    if !(excitation.frequency > 0.0 && excitation.frequency.is_finite()) {
        return Err(Error::InvalidInput("excitation frequency must be positive".into()));
    }
    if !(timestep > 0.0 && timestep.is_finite()) {
        return Err(Error::InvalidInput(format!("timestep must be positive, got {timestep}")));
    }
    let period = 1.0 / excitation.frequency;
    let steps = (period / timestep).round().max(1.0) as usize;
    let dt = period / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let u: Vec<f64> = times.iter().map(|&t| excitation.at(t)).collect();
    let y = vec![0.0; times.len()];
    Waveform::new("excitation", times, u, y, excitation.amplitude, excitation.frequency)
}

/// Native outputs at samples `1..` of `drive`, in physical units.
pub fn native_dense_output(
    config: &ModelConfig,
    params: &ParamStore,
    norm: &NormStats,
    drive: &Waveform,
) -> Result<Vec<f64>> {
    let normalized = norm.normalize(drive);
    let out = model_forward(config, params, &normalized)?;
    Ok(out.outputs.iter().map(|o| norm.denorm_y(o[0])).collect())
}

pub fn roundtrip_verify(
    config: &ModelConfig,
    params: &ParamStore,
    norm: &NormStats,
    excitation: &Excitation,
    timestep: f64,
) -> Result<RoundTripReport> {
    let module = export_module(config, params, norm)?;
    let reparsed = parse_subset(&print_module(&module))?;
    let drive = dense_excitation(excitation, timestep)?;
    let dt = drive.times[1] - drive.times[0];
    let sim = simulate_subset(&reparsed, &drive, dt)?;
    let native = native_dense_output(config, params, norm, &drive)?;
    let interpreted = &sim.y[1..];
    if interpreted.len() != native.len() {
        return Err(Error::dim("round-trip samples", native.len(), interpreted.len()));
    }
    let max_abs_error = interpreted
        .iter()
        .zip(&native)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let nrmse = if max_abs_error == 0.0 { 0.0 } else { nrmse(interpreted, &native)? };
    Ok(RoundTripReport {
        max_abs_error,
        nrmse,
        timestep: dt,
        steps: native.len(),
    })
}
