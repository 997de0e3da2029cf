// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense vector and symmetric-matrix primitives behind the transport closed form.
//!
//! Everything here is a pure function of its inputs. Square roots go through a
//! full symmetric eigendecomposition; eigenvalues that are negative by less
//! than `1e-8 * trace / d` are treated as rounding noise and clamped to zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SakeError};

/// Shrinkage added to covariance diagonals unless configured otherwise.
pub const DEFAULT_REGULARIZATION: f64 = 0.01;

/// A finite, nonempty activation (or scope-embedding) vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ActivationVector(Vec<f64>);

impl ActivationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SakeError::InvalidArgument(
                "activation vector must have dimension > 0".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SakeError::NonFinite("activation vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub(crate) fn from_dvector(v: &DVector<f64>) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(SakeError::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }

    pub fn euclidean_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `1 - cos(self, other)`; zero vectors are at distance 1 from everything.
    pub fn cosine_distance(&self, other: &Self) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let na = self.0.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = other.0.iter().map(|b| b * b).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 1.0;
        }
        1.0 - dot / (na * nb)
    }
}

impl<'de> Deserialize<'de> for ActivationVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Self::new(values).map_err(serde::de::Error::custom)
    }
}

impl std::ops::Index<usize> for ActivationVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A square real matrix that is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    /// Builds from row-major rows. Inputs asymmetric beyond `1e-9` relative are
    /// rejected; smaller discrepancies are averaged away.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(SakeError::InvalidArgument("empty matrix".into()));
        }
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SakeError::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SakeError::NonFinite("matrix"));
                }
                m[(i, j)] = v;
            }
        }
        Self::from_matrix(m)
    }

    pub(crate) fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SakeError::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-9 * scale {
            return Err(SakeError::InvalidArgument(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// `(m + mᵀ) / 2`, skipping the symmetry check.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Adds `lambda` to every diagonal entry.
    pub fn add_diagonal(&self, lambda: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += lambda;
        }
        Self(m)
    }

    /// `self * other * self`, which is symmetric whenever both factors are.
    pub fn sandwich(&self, other: &SymMatrix) -> SymMatrix {
        Self::symmetrized(&self.0 * &other.0 * &self.0)
    }

    pub fn mul_vec(&self, v: &ActivationVector) -> Result<ActivationVector> {
        v.ensure_dim(self.dim())?;
        ActivationVector::from_dvector(&(&self.0 * v.to_dvector()))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Clamp threshold below which negative eigenvalues count as rounding noise.
    pub fn eigen_tolerance(&self) -> f64 {
        let d = self.dim() as f64;
        let relative = 1e-8 * (self.trace() / d).max(0.0);
        relative.max(64.0 * f64::EPSILON * self.0.amax())
    }

    /// Applies `f` to each eigenvalue after checking and clamping.
    fn spectral_map(&self, f: impl Fn(f64) -> f64, require_definite: bool) -> Result<SymMatrix> {
        let tol = self.eigen_tolerance();
        let eig = SymmetricEigen::new(self.0.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(SakeError::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        if require_definite && min <= tol {
            return Err(SakeError::SingularMatrix { min_eigenvalue: min });
        }
        let mapped = eig.eigenvalues.map(|l| f(l.max(0.0)));
        let v = &eig.eigenvectors;
        let m = v * DMatrix::from_diagonal(&mapped) * v.transpose();
        Ok(Self::symmetrized(m))
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Self::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Empirical moments of one activation set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: ActivationVector,
    pub cov: SymMatrix,
    pub count: usize,
    pub reg: f64,
}

impl GaussianSummary {
    /// Summarizes raw samples: mean plus unbiased covariance with `reg` on the diagonal.
    pub fn from_samples(samples: &[ActivationVector], reg: f64) -> Result<Self> {
        Ok(Self {
            mean: empirical_mean(samples)?,
            cov: empirical_covariance(samples, reg)?,
            count: samples.len(),
            reg,
        })
    }

    /// Analytic summary, e.g. for test fixtures or parameter exploration.
    pub fn from_moments(mean: ActivationVector, cov: SymMatrix) -> Result<Self> {
        mean.ensure_dim(cov.dim())?;
        Ok(Self {
            mean,
            cov,
            count: 0,
            reg: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }
}

fn check_uniform(samples: &[ActivationVector]) -> Result<usize> {
    let first = samples.first().ok_or(SakeError::EmptySampleSet)?;
    let d = first.dim();
    for s in samples {
        s.ensure_dim(d)?;
    }
    Ok(d)
}

pub fn empirical_mean(samples: &[ActivationVector]) -> Result<ActivationVector> {
    let d = check_uniform(samples)?;
    let mut acc = vec![0.0; d];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(s.as_slice()) {
            *a += v;
        }
    }
    let n = samples.len() as f64;
    ActivationVector::new(acc.into_iter().map(|a| a / n).collect())
}

/// Unbiased (divisor `n - 1`) covariance with `reg` added to the diagonal.
pub fn empirical_covariance(samples: &[ActivationVector], reg: f64) -> Result<SymMatrix> {
    if samples.len() < 2 {
        return Err(SakeError::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(SakeError::InvalidArgument(format!(
            "regularization must be finite and >= 0, got {reg}"
        )));
    }
    let d = check_uniform(samples)?;
    let mean = empirical_mean(samples)?.to_dvector();
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        let c = s.to_dvector() - &mean;
        scatter.ger(1.0, &c, &c, 1.0);
    }
    scatter /= (samples.len() - 1) as f64;
    Ok(SymMatrix::symmetrized(scatter).add_diagonal(reg))
}

pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    m.spectral_map(f64::sqrt, false)
}

pub fn psd_inv_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    m.spectral_map(|l| 1.0 / l.sqrt(), true)
}
