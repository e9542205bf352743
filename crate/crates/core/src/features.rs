//! Convergence-trajectory features.
//!
//! Entry `(l, e)` of an architecture's `L x eta` matrix is the cosine
//! similarity between layer `l`'s epoch-1 vector and its epoch-`e` vector.
//! The vectors are either probe-set layer outputs (the default) or the
//! layer parameters themselves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::ArchId;
use crate::trainer::{EpochRecord, TrajectoryLog};

/// Norm below which a vector is treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Value emitted for layers without parameters in the parameter-based
/// variant.
pub const PARAM_FREE_SENTINEL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    #[default]
    #[serde(alias = "output")]
    OutputBased,
    #[serde(alias = "param")]
    ParamBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFeature {
    pub arch_id: ArchId,
    /// `matrix[l][e]`, `L` rows of `eta` entries.
    pub matrix: Vec<Vec<f64>>,
    pub source: FeatureSource,
}

impl TrajectoryFeature {
    pub fn layers(&self) -> usize {
        self.matrix.len()
    }

    pub fn eta(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    /// Layer-major flattening to a vector of length `L * eta`.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrix.iter().flatten().copied().collect()
    }
}

/// `<a, b> / (|a| |b|)`, or 0 when either norm is below [`ZERO_NORM`].
pub fn cosine_drift(first: &[f32], current: &[f32]) -> Result<f64> {
    if first.len() != current.len() {
        return Err(Error::argument(format!(
            "cosine of vectors with lengths {} and {}",
            first.len(),
            current.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in first.iter().zip(current) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn check_complete(
    log: &TrajectoryLog,
    rows: impl Fn(&EpochRecord) -> Option<&Vec<Vec<f32>>>,
) -> Result<usize> {
    let missing = |layer: usize, epoch: usize| Error::MissingEpoch {
        arch_id: log.arch_id as usize,
        layer,
        epoch,
    };
    let first = log.epochs.first().ok_or_else(|| missing(0, 1))?;
    let layers = rows(first).ok_or_else(|| missing(0, 1))?.len();
    for (e, record) in log.epochs.iter().enumerate() {
        let r = rows(record).ok_or_else(|| missing(0, e + 1))?;
        if r.len() != layers {
            return Err(missing(r.len().min(layers), e + 1));
        }
    }
    Ok(layers)
}

/// Output-based features from the recorded probe vectors.
pub fn features_from_outputs(log: &TrajectoryLog) -> Result<TrajectoryFeature> {
    let layers = check_complete(log, |r| Some(&r.probe_outputs))?;
    let mut matrix = vec![Vec::with_capacity(log.epochs.len()); layers];
    for (l, row) in matrix.iter_mut().enumerate() {
        let first = &log.epochs[0].probe_outputs[l];
        for epoch in &log.epochs {
            row.push(cosine_drift(first, &epoch.probe_outputs[l])?);
        }
    }
    Ok(TrajectoryFeature {
        arch_id: log.arch_id,
        matrix,
        source: FeatureSource::OutputBased,
    })
}

/// Parameter-based features from the recorded snapshots. Layers without
/// parameters cannot be described this way; their rows hold
/// [`PARAM_FREE_SENTINEL`] and a warning is logged.
pub fn features_from_params(log: &TrajectoryLog) -> Result<TrajectoryFeature> {
    let layers = check_complete(log, |r| r.param_snapshots.as_ref())?;
    let mut matrix = vec![Vec::with_capacity(log.epochs.len()); layers];
    for (l, row) in matrix.iter_mut().enumerate() {
        let first = &log.epochs[0].param_snapshots.as_ref().expect("checked")[l];
        if first.is_empty() {
            log::warn!(
                "architecture {}: layer {l} has no parameters, emitting sentinel {PARAM_FREE_SENTINEL}",
                log.arch
            );
            row.resize(log.epochs.len(), PARAM_FREE_SENTINEL);
            continue;
        }
        for epoch in &log.epochs {
            let current = &epoch.param_snapshots.as_ref().expect("checked")[l];
            row.push(cosine_drift(first, current)?);
        }
    }
    Ok(TrajectoryFeature {
        arch_id: log.arch_id,
        matrix,
        source: FeatureSource::ParamBased,
    })
}

pub fn features(log: &TrajectoryLog, source: FeatureSource) -> Result<TrajectoryFeature> {
    match source {
        FeatureSource::OutputBased => features_from_outputs(log),
        FeatureSource::ParamBased => features_from_params(log),
    }
}
