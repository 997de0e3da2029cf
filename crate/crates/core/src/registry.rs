// SPDX-License-Identifier: MIT OR Apache-2.0

//! Edit storage and scope detection.
//!
//! Each edit carries its own map and its own detector, so edits can be added
//! and removed without touching one another. At inference time the detector
//! of every entry is consulted; the nearest centroid whose threshold is met
//! wins, ties going to the lexicographically lowest id.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SakeError};
use crate::linalg::ActivationVector;
use crate::ot::LinearMap;

pub const REGISTRY_FORMAT: &str = "sake-registry";
pub const REGISTRY_VERSION: u32 = 1;

/// Scope threshold used when none is configured (Euclidean, prompt-embedding channel).
pub const DEFAULT_EPSILON: f64 = 6.75;

/// One fact replacement `(s, r, o) → (s, r, o*)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSpec {
    pub subject: String,
    pub relation: String,
    pub old_object: String,
    pub new_object: String,
}

impl EditSpec {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        old_object: impl Into<String>,
        new_object: impl Into<String>,
    ) -> Result<Self> {
        let spec = Self {
            subject: subject.into(),
            relation: relation.into(),
            old_object: old_object.into(),
            new_object: new_object.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("subject", &self.subject),
            ("relation", &self.relation),
            ("old_object", &self.old_object),
            ("new_object", &self.new_object),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| v.is_empty()) {
            return Err(SakeError::InvalidArgument(format!("edit field `{name}` is empty")));
        }
        if self.old_object == self.new_object {
            return Err(SakeError::InvalidArgument("old and new object must differ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    Cosine,
}

impl Distance {
    pub fn between(self, a: &ActivationVector, b: &ActivationVector) -> f64 {
        match self {
            Self::Euclidean => a.euclidean_distance(b),
            Self::Cosine => a.cosine_distance(b),
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = SakeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(SakeError::InvalidArgument(format!("unknown distance `{other}`"))),
        }
    }
}

/// Which vector the detector compares against its centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Representation {
    #[serde(rename = "model")]
    ModelActivation,
    #[default]
    #[serde(rename = "external")]
    ExternalEmbedding,
}

impl std::str::FromStr for Representation {
    type Err = SakeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Self::ModelActivation),
            "external" => Ok(Self::ExternalEmbedding),
            other => Err(SakeError::InvalidArgument(format!("unknown representation `{other}`"))),
        }
    }
}

/// Centroid-threshold membership test: `x` is in scope iff `dist(x, centroid) < epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeDetector {
    pub centroid: ActivationVector,
    pub epsilon: f64,
    pub distance: Distance,
    pub representation: Representation,
}

impl ScopeDetector {
    pub fn new(
        centroid: ActivationVector,
        epsilon: f64,
        distance: Distance,
        representation: Representation,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(SakeError::InvalidArgument(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Self {
            centroid,
            epsilon,
            distance,
            representation,
        })
    }

    pub fn distance_to(&self, scope_vec: &ActivationVector) -> f64 {
        self.distance.between(&self.centroid, scope_vec)
    }

    pub fn contains(&self, scope_vec: &ActivationVector) -> bool {
        self.distance_to(scope_vec) < self.epsilon
    }

    /// Same detector with a different threshold.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.centroid.clone(), epsilon, self.distance, self.representation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEntry {
    pub id: String,
    pub spec: EditSpec,
    pub detector: ScopeDetector,
    pub map: LinearMap,
    pub created_at: DateTime<Utc>,
}

impl EditEntry {
    pub fn new(
        id: impl Into<String>,
        spec: EditSpec,
        detector: ScopeDetector,
        map: LinearMap,
        created_at: DateTime<Utc>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(SakeError::InvalidArgument("edit id is empty".into()));
        }
        spec.validate()?;
        Ok(Self {
            id,
            spec,
            detector,
            map,
            created_at,
        })
    }
}

pub const EDIT_FORMAT: &str = "sake-edit";

#[derive(Serialize, Deserialize)]
struct EditDocument {
    format: String,
    version: u32,
    #[serde(flatten)]
    entry: EditEntry,
}

impl EditEntry {
    /// Standalone single-edit document, as written by `fit`.
    pub fn to_json(&self) -> String {
        let doc = EditDocument {
            format: EDIT_FORMAT.into(),
            version: REGISTRY_VERSION,
            entry: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("edit serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SakeError::schema(Some(e.line()), e.to_string()))?;
        check_header(&value, EDIT_FORMAT, REGISTRY_VERSION)?;
        let doc: EditDocument = serde_json::from_value(value).map_err(|e| SakeError::schema(None, e.to_string()))?;
        let e = doc.entry;
        Self::new(e.id, e.spec, e.detector, e.map, e.created_at)
    }
}

/// Fixed timestamp used when callers do not supply one, keeping outputs reproducible.
pub fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

/// Ordered set of independent edits sharing activation and scope dimensions.
///
/// Entries are reference counted and never mutated, so cloning a registry
/// yields a cheap snapshot that later `add_edit`/`remove_edit` calls on the
/// original do not affect.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    activation_dim: usize,
    scope_dim: usize,
    entries: Vec<Arc<EditEntry>>,
}

impl Registry {
    pub fn new(activation_dim: usize, scope_dim: usize) -> Result<Self> {
        if activation_dim == 0 || scope_dim == 0 {
            return Err(SakeError::InvalidArgument(
                "registry dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            activation_dim,
            scope_dim,
            entries: Vec::new(),
        })
    }

    pub fn activation_dim(&self) -> usize {
        self.activation_dim
    }

    pub fn scope_dim(&self) -> usize {
        self.scope_dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &EditEntry> {
        self.entries.iter().map(Arc::as_ref)
    }

    pub fn get(&self, id: &str) -> Option<&EditEntry> {
        self.entries().find(|e| e.id == id)
    }

    fn check_entry(&self, entry: &EditEntry) -> Result<()> {
        if entry.map.dim() != self.activation_dim {
            return Err(SakeError::DimensionMismatch {
                expected: self.activation_dim,
                got: entry.map.dim(),
            });
        }
        entry.detector.centroid.ensure_dim(self.scope_dim)?;
        if entry.detector.representation == Representation::ModelActivation && self.scope_dim != self.activation_dim {
            return Err(SakeError::DimensionMismatch {
                expected: self.activation_dim,
                got: self.scope_dim,
            });
        }
        Ok(())
    }

    pub fn add_edit(&mut self, entry: EditEntry) -> Result<()> {
        self.check_entry(&entry)?;
        if self.get(&entry.id).is_some() {
            return Err(SakeError::DuplicateEditId(entry.id));
        }
        self.entries.push(Arc::new(entry));
        Ok(())
    }

    /// Removes and returns the entry with `id`; the remaining order is preserved.
    pub fn remove_edit(&mut self, id: &str) -> Result<EditEntry> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| SakeError::UnknownEditId(id.to_string()))?;
        let removed = self.entries.remove(pos);
        Ok(Arc::unwrap_or_clone(removed))
    }

    /// Nearest in-scope edit for `scope_vec`, if any detector fires.
    pub fn match_scope(&self, scope_vec: &ActivationVector) -> Result<Option<&EditEntry>> {
        scope_vec.ensure_dim(self.scope_dim)?;
        let mut best: Option<(f64, &EditEntry)> = None;
        for entry in self.entries() {
            let d = entry.detector.distance_to(scope_vec);
            if d.partial_cmp(&entry.detector.epsilon) != Some(std::cmp::Ordering::Less) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bd, be)) => d < bd || (d == bd && entry.id < be.id),
            };
            if better {
                best = Some((d, entry));
            }
        }
        Ok(best.map(|(_, e)| e))
    }

    /// Copy of this registry with every detector's threshold replaced.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let entries = self
            .entries()
            .map(|e| {
                Ok(Arc::new(EditEntry {
                    detector: e.detector.with_epsilon(epsilon)?,
                    ..e.clone()
                }))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            entries,
            ..self.clone()
        })
    }

    pub fn to_document(&self) -> RegistryDocument {
        RegistryDocument {
            format: REGISTRY_FORMAT.to_string(),
            version: REGISTRY_VERSION,
            activation_dim: self.activation_dim,
            scope_dim: self.scope_dim,
            entries: self.entries().cloned().collect(),
        }
    }

    pub fn from_document(doc: RegistryDocument) -> Result<Self> {
        let mut reg = Registry::new(doc.activation_dim, doc.scope_dim)?;
        for entry in doc.entries {
            reg.add_edit(entry)?;
        }
        Ok(reg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document()).expect("registry serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SakeError::schema(Some(e.line()), e.to_string()))?;
        check_header(&value, REGISTRY_FORMAT, REGISTRY_VERSION)?;
        let doc: RegistryDocument =
            serde_json::from_value(value).map_err(|e| SakeError::schema(None, e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk shape of a registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryDocument {
    pub format: String,
    pub version: u32,
    pub activation_dim: usize,
    pub scope_dim: usize,
    pub entries: Vec<EditEntry>,
}

/// Validates the `format`/`version` pair every document carries.
pub(crate) fn check_header(value: &serde_json::Value, format: &str, version: u32) -> Result<()> {
    let found_format = value.get("format").and_then(|f| f.as_str());
    if found_format != Some(format) {
        return Err(SakeError::schema(
            None,
            format!("expected format `{format}`, found {:?}", found_format),
        ));
    }
    let found_version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| SakeError::schema(None, "missing integer `version`"))?;
    if found_version != u64::from(version) {
        return Err(SakeError::VersionMismatch {
            expected: version,
            found: found_version,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use crate::ot::MapKind;

    fn v(x: &[f64]) -> ActivationVector {
        ActivationVector::new(x.to_vec()).unwrap()
    }

    fn entry(id: &str, centroid: &[f64], eps: f64) -> EditEntry {
        EditEntry::new(
            id,
            EditSpec::new("s", "r", "o", "o*").unwrap(),
            ScopeDetector::new(v(centroid), eps, Distance::Euclidean, Representation::ExternalEmbedding).unwrap(),
            LinearMap::from_parts(
                MapKind::OptimalTransport,
                SymMatrix::diagonal(&[3., 0.5]),
                v(&[1., -1.]),
            )
            .unwrap(),
            epoch(),
        )
        .unwrap()
    }

    #[test]
    fn edit_document_round_trip() {
        let e = entry("e1", &[0., 0.], 1.);
        let text = e.to_json();
        assert!(text.contains("\"format\": \"sake-edit\""));
        assert_eq!(EditEntry::from_json(&text).unwrap(), e);
        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(e).unwrap();
        assert!(EditEntry::from_json(&r.to_json()).is_err());
    }

    #[test]
    fn add_remove_round_trip() {
        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(entry("e1", &[0., 0.], 1.)).unwrap();
        let before = r.clone();
        r.add_edit(entry("e2", &[10., 0.], 1.)).unwrap();
        r.remove_edit("e2").unwrap();
        assert_eq!(r, before);
        assert_eq!(r.to_json(), before.to_json());
    }

    #[test]
    fn duplicate_and_unknown_ids() {
        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(entry("e1", &[0., 0.], 1.)).unwrap();
        assert!(matches!(
            r.add_edit(entry("e1", &[5., 0.], 1.)),
            Err(SakeError::DuplicateEditId(_))
        ));
        assert!(matches!(r.remove_edit("nope"), Err(SakeError::UnknownEditId(_))));
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let mut r = Registry::new(2, 3).unwrap();
        assert!(matches!(
            r.add_edit(entry("e1", &[0., 0.], 1.)),
            Err(SakeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn match_scope_examples() {
        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(entry("a", &[0., 0.], 1.)).unwrap();
        assert_eq!(r.match_scope(&v(&[0., 0.])).unwrap().unwrap().id, "a");
        assert!(r.match_scope(&v(&[3., 4.])).unwrap().is_none());

        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(entry("first", &[0., 0.], 2.)).unwrap();
        r.add_edit(entry("second", &[10., 0.], 2.)).unwrap();
        assert_eq!(r.match_scope(&v(&[1., 0.])).unwrap().unwrap().id, "first");
        assert!(r.match_scope(&v(&[1.])).is_err());
    }

    #[test]
    fn ties_break_by_lowest_id() {
        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(entry("zeta", &[1., 0.], 5.)).unwrap();
        r.add_edit(entry("alpha", &[-1., 0.], 5.)).unwrap();
        assert_eq!(r.match_scope(&v(&[0., 0.])).unwrap().unwrap().id, "alpha");
    }

    #[test]
    fn boundary_is_exclusive() {
        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(entry("a", &[0., 0.], 5.)).unwrap();
        assert!(r.match_scope(&v(&[3., 4.])).unwrap().is_none());
    }

    #[test]
    fn json_round_trip_and_forward_compat() {
        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(entry("e1", &[0.1, 1.0 / 3.0], 1.)).unwrap();
        r.add_edit(entry("e2", &[7., 8.], 0.5)).unwrap();
        r.add_edit(entry("e3", &[-7., 1e-300], 2.5)).unwrap();
        let text = r.to_json();
        let back = Registry::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), text);

        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["shiny_new_field"] = serde_json::json!({"x": 1});
        value["entries"][0]["note"] = serde_json::json!("hi");
        assert_eq!(Registry::from_json(&value.to_string()).unwrap(), r);
    }

    #[test]
    fn load_errors() {
        let r = Registry::new(2, 2).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        value["version"] = serde_json::json!(2);
        assert!(matches!(
            Registry::from_json(&value.to_string()),
            Err(SakeError::VersionMismatch { found: 2, .. })
        ));
        value["version"] = serde_json::json!(1);
        value["format"] = serde_json::json!("other");
        assert!(matches!(
            Registry::from_json(&value.to_string()),
            Err(SakeError::SchemaViolation { .. })
        ));

        let mut r = Registry::new(2, 2).unwrap();
        r.add_edit(entry("e1", &[0., 0.], 1.)).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        value["activation_dim"] = serde_json::json!(3);
        assert!(matches!(
            Registry::from_json(&value.to_string()),
            Err(SakeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn edit_spec_validation() {
        assert!(EditSpec::new("s", "r", "o", "o").is_err());
        assert!(EditSpec::new("", "r", "o", "p").is_err());
        assert!(ScopeDetector::new(v(&[0.]), 0.0, Distance::Euclidean, Representation::ModelActivation).is_err());
    }
}
