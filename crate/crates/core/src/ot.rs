// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear maps between source and target activation distributions.
//!
//! The transport map between two Gaussians `N(μs, Σs)` and `N(μt, Σt)` is
//! `h ↦ A h + b` with
//!
//! ```text
//! A = Σs^{-1/2} (Σs^{1/2} Σt Σs^{1/2})^{1/2} Σs^{-1/2}
//! b = μt − A μs
//! ```
//!
//! which pushes the source moments exactly onto the target moments. The
//! uniform shift keeps `A = I` and only moves the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SakeError};
use crate::linalg::{psd_inv_sqrt, psd_sqrt, ActivationVector, GaussianSummary, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapKind {
    #[serde(rename = "ot")]
    OptimalTransport,
    #[serde(rename = "uniform")]
    UniformShift,
    #[serde(rename = "identity")]
    Identity,
}

impl std::str::FromStr for MapKind {
    type Err = SakeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot" => Ok(Self::OptimalTransport),
            "uniform" => Ok(Self::UniformShift),
            "identity" => Ok(Self::Identity),
            other => Err(SakeError::InvalidArgument(format!("unknown map kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for MapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OptimalTransport => "ot",
            Self::UniformShift => "uniform",
            Self::Identity => "identity",
        })
    }
}

/// Affine map `h ↦ A h + b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearMap {
    kind: MapKind,
    #[serde(rename = "A")]
    a: SymMatrix,
    b: ActivationVector,
}

#[derive(Deserialize)]
struct RawLinearMap {
    kind: MapKind,
    #[serde(rename = "A")]
    a: SymMatrix,
    b: ActivationVector,
}

impl<'de> Deserialize<'de> for LinearMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawLinearMap::deserialize(d)?;
        LinearMap::from_parts(raw.kind, raw.a, raw.b).map_err(serde::de::Error::custom)
    }
}

impl LinearMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            kind: MapKind::Identity,
            a: SymMatrix::identity(dim),
            b: ActivationVector::zeros(dim),
        }
    }

    /// Rebuilds a map from stored parts, enforcing the per-kind invariants.
    pub fn from_parts(kind: MapKind, a: SymMatrix, b: ActivationVector) -> Result<Self> {
        b.ensure_dim(a.dim())?;
        let is_identity = *a.as_matrix() == *SymMatrix::identity(a.dim()).as_matrix();
        match kind {
            MapKind::UniformShift if !is_identity => {
                return Err(SakeError::InvalidArgument("uniform-shift map must have A = I".into()))
            }
            MapKind::Identity if !is_identity || b.as_slice().iter().any(|&x| x != 0.0) => {
                return Err(SakeError::InvalidArgument(
                    "identity map must have A = I and b = 0".into(),
                ))
            }
            _ => {}
        }
        Ok(Self { kind, a, b })
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.a
    }

    pub fn offset(&self) -> &ActivationVector {
        &self.b
    }

    pub fn apply(&self, h: &ActivationVector) -> Result<ActivationVector> {
        h.ensure_dim(self.dim())?;
        if self.kind == MapKind::Identity {
            return Ok(h.clone());
        }
        let ah = match self.kind {
            MapKind::UniformShift => h.clone(),
            _ => self.a.mul_vec(h)?,
        };
        ActivationVector::new(
            ah.as_slice()
                .iter()
                .zip(self.b.as_slice())
                .map(|(x, y)| x + y)
                .collect(),
        )
    }
}

fn check_dims(source: &GaussianSummary, target: &GaussianSummary) -> Result<()> {
    target.mean.ensure_dim(source.dim())?;
    if source.cov.dim() != source.dim() {
        return Err(SakeError::DimensionMismatch {
            expected: source.dim(),
            got: source.cov.dim(),
        });
    }
    if target.cov.dim() != source.dim() {
        return Err(SakeError::DimensionMismatch {
            expected: source.dim(),
            got: target.cov.dim(),
        });
    }
    Ok(())
}

fn mean_offset(target: &ActivationVector, mapped_source: &ActivationVector) -> Result<ActivationVector> {
    ActivationVector::new(
        target
            .as_slice()
            .iter()
            .zip(mapped_source.as_slice())
            .map(|(t, s)| t - s)
            .collect(),
    )
}

/// Closed-form Gaussian transport map from `source` to `target`.
pub fn fit_ot_map(source: &GaussianSummary, target: &GaussianSummary) -> Result<LinearMap> {
    check_dims(source, target)?;
    let root = psd_sqrt(&source.cov)?;
    let inv_root = psd_inv_sqrt(&source.cov)?;
    let middle = psd_sqrt(&root.sandwich(&target.cov))?;
    let a = inv_root.sandwich(&middle);
    let b = mean_offset(&target.mean, &a.mul_vec(&source.mean)?)?;
    Ok(LinearMap {
        kind: MapKind::OptimalTransport,
        a,
        b,
    })
}

/// Mean-shift baseline: `h ↦ h + (μt − μs)`.
pub fn fit_uniform_shift(source: &GaussianSummary, target: &GaussianSummary) -> Result<LinearMap> {
    target.mean.ensure_dim(source.dim())?;
    Ok(LinearMap {
        kind: MapKind::UniformShift,
        a: SymMatrix::identity(source.dim()),
        b: mean_offset(&target.mean, &source.mean)?,
    })
}

/// Fits a map of the requested kind.
pub fn fit_map(kind: MapKind, source: &GaussianSummary, target: &GaussianSummary) -> Result<LinearMap> {
    match kind {
        MapKind::OptimalTransport => fit_ot_map(source, target),
        MapKind::UniformShift => fit_uniform_shift(source, target),
        MapKind::Identity => {
            check_dims(source, target)?;
            Ok(LinearMap::identity(source.dim()))
        }
    }
}

pub fn apply_map(map: &LinearMap, h: &ActivationVector) -> Result<ActivationVector> {
    map.apply(h)
}
