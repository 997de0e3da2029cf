// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats: line-delimited activation sets and benchmark manifests.
//!
//! An activation set is a header line
//! `{"format":"sake-activations","version":1,"dim":D,"scope_dim":S}` followed
//! by one JSON record per line. Unknown fields, in the header or in records,
//! are carried through a read/write cycle unchanged.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Result, SakeError};
use crate::linalg::{ActivationVector, SymMatrix};
use crate::records::{Category, PromptRecord, Role};
use crate::registry::{check_header, EditSpec};

pub const ACTIVATIONS_FORMAT: &str = "sake-activations";
pub const ACTIVATIONS_VERSION: u32 = 1;
pub const BENCHMARK_FORMAT: &str = "sake-benchmark";
pub const BENCHMARK_VERSION: u32 = 1;

/// One line of an activation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub id: String,
    pub role: Role,
    pub category: Category,
    pub vector: ActivationVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope_vector: Option<ActivationVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_pre_edit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_post_edit: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ActivationRecord {
    /// Scope vector, defaulting to the activation itself when omitted.
    pub fn scope(&self) -> &ActivationVector {
        self.scope_vector.as_ref().unwrap_or(&self.vector)
    }

    pub fn to_prompt(&self) -> Result<PromptRecord> {
        let missing = |what: &str| SakeError::schema(None, format!("record `{}` has no `{what}`", self.id));
        Ok(PromptRecord {
            prompt_id: self.id.clone(),
            category: self.category,
            activation: self.vector.clone(),
            scope_vec: self.scope().clone(),
            expected_pre_edit: self
                .expected_pre_edit
                .clone()
                .ok_or_else(|| missing("expected_pre_edit"))?,
            expected_post_edit: self
                .expected_post_edit
                .clone()
                .ok_or_else(|| missing("expected_post_edit"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActivationHeader {
    format: String,
    version: u32,
    dim: usize,
    scope_dim: usize,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub dim: usize,
    pub scope_dim: usize,
    /// Extra header fields (e.g. extraction provenance), preserved verbatim.
    pub header_extra: Map<String, Value>,
    pub records: Vec<ActivationRecord>,
}

impl ActivationSet {
    pub fn new(dim: usize, scope_dim: usize) -> Self {
        Self {
            dim,
            scope_dim,
            header_extra: Map::new(),
            records: Vec::new(),
        }
    }

    fn validate_record(&self, rec: &ActivationRecord, line: Option<usize>) -> Result<()> {
        if rec.vector.dim() != self.dim {
            return Err(SakeError::schema(
                line,
                format!("vector has length {}, header dim is {}", rec.vector.dim(), self.dim),
            ));
        }
        match &rec.scope_vector {
            Some(s) if s.dim() != self.scope_dim => Err(SakeError::schema(
                line,
                format!(
                    "scope_vector has length {}, header scope_dim is {}",
                    s.dim(),
                    self.scope_dim
                ),
            )),
            None if self.scope_dim != self.dim => Err(SakeError::schema(
                line,
                "scope_vector omitted but scope_dim differs from dim",
            )),
            _ => Ok(()),
        }
    }

    pub fn push(&mut self, rec: ActivationRecord) -> Result<()> {
        self.validate_record(&rec, None)?;
        self.records.push(rec);
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let header = ActivationHeader {
            format: ACTIVATIONS_FORMAT.into(),
            version: ACTIVATIONS_VERSION,
            dim: self.dim,
            scope_dim: self.scope_dim,
            extra: self.header_extra.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| SakeError::schema(Some(1), "missing header line"))?;
        let value: Value = serde_json::from_str(first).map_err(|e| SakeError::schema(Some(1), e.to_string()))?;
        check_header(&value, ACTIVATIONS_FORMAT, ACTIVATIONS_VERSION).map_err(|e| match e {
            SakeError::SchemaViolation { message, .. } => SakeError::schema(Some(1), message),
            other => other,
        })?;
        let header: ActivationHeader =
            serde_json::from_value(value).map_err(|e| SakeError::schema(Some(1), e.to_string()))?;
        let mut set = ActivationSet {
            dim: header.dim,
            scope_dim: header.scope_dim,
            header_extra: header.extra,
            records: Vec::new(),
        };
        for (idx, line) in lines {
            let n = idx + 1;
            let rec: ActivationRecord =
                serde_json::from_str(line).map_err(|e| SakeError::schema(Some(n), e.to_string()))?;
            set.validate_record(&rec, Some(n))?;
            set.records.push(rec);
        }
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn vectors(&self) -> Vec<ActivationVector> {
        self.records.iter().map(|r| r.vector.clone()).collect()
    }

    pub fn scope_vectors(&self) -> Vec<ActivationVector> {
        self.records.iter().map(|r| r.scope().clone()).collect()
    }
}

/// Affine drift `h ↦ M h + c` that generated a toy edit's targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "M")]
    pub m: SymMatrix,
    pub c: ActivationVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Toy { seed: u64, dim: usize, vocab: Vec<String> },
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEdit {
    pub id: String,
    pub spec: EditSpec,
    pub train_source_file: String,
    pub train_target_file: String,
    pub eval_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub format: String,
    pub version: u32,
    pub activation_dim: usize,
    pub scope_dim: usize,
    pub edits: Vec<ManifestEdit>,
    pub backend: BackendSpec,
}

impl BenchmarkManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| SakeError::schema(Some(e.line()), e.to_string()))?;
        check_header(&value, BENCHMARK_FORMAT, BENCHMARK_VERSION)?;
        let manifest: Self = serde_json::from_value(value).map_err(|e| SakeError::schema(None, e.to_string()))?;
        for edit in &manifest.edits {
            edit.spec.validate()?;
            if let Some(gt) = &edit.ground_truth {
                if !matches!(manifest.backend, BackendSpec::Toy { .. }) {
                    return Err(SakeError::schema(
                        None,
                        "ground_truth is only allowed for toy benchmarks",
                    ));
                }
                if gt.m.dim() != manifest.activation_dim {
                    return Err(SakeError::DimensionMismatch {
                        expected: manifest.activation_dim,
                        got: gt.m.dim(),
                    });
                }
                gt.c.ensure_dim(manifest.activation_dim)?;
            }
        }
        Ok(manifest)
    }
}

/// One edit's data, loaded into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkEdit {
    pub id: String,
    pub spec: EditSpec,
    pub train_source: ActivationSet,
    pub train_target: ActivationSet,
    pub eval: ActivationSet,
    pub ground_truth: Option<GroundTruth>,
}

/// A benchmark with every referenced activation file loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub activation_dim: usize,
    pub scope_dim: usize,
    pub backend: BackendSpec,
    pub edits: Vec<BenchmarkEdit>,
}

impl Benchmark {
    pub fn seed(&self) -> Option<u64> {
        match self.backend {
            BackendSpec::Toy { seed, .. } => Some(seed),
            BackendSpec::External => None,
        }
    }

    /// All evaluation prompts across edits, in manifest order.
    pub fn eval_prompts(&self) -> Result<Vec<PromptRecord>> {
        self.edits
            .iter()
            .flat_map(|e| e.eval.records.iter())
            .map(ActivationRecord::to_prompt)
            .collect()
    }

    fn check_set(&self, set: &ActivationSet, file: &str) -> Result<()> {
        if set.dim != self.activation_dim || set.scope_dim != self.scope_dim {
            return Err(SakeError::schema(
                None,
                format!(
                    "{file}: header dims ({}, {}) differ from manifest ({}, {})",
                    set.dim, set.scope_dim, self.activation_dim, self.scope_dim
                ),
            ));
        }
        Ok(())
    }

    pub fn manifest(&self) -> BenchmarkManifest {
        BenchmarkManifest {
            format: BENCHMARK_FORMAT.into(),
            version: BENCHMARK_VERSION,
            activation_dim: self.activation_dim,
            scope_dim: self.scope_dim,
            edits: self
                .edits
                .iter()
                .map(|e| {
                    let (s, t, v) = file_names(&e.id);
                    ManifestEdit {
                        id: e.id.clone(),
                        spec: e.spec.clone(),
                        train_source_file: s,
                        train_target_file: t,
                        eval_file: v,
                        ground_truth: e.ground_truth.clone(),
                    }
                })
                .collect(),
            backend: self.backend.clone(),
        }
    }

    /// Writes `manifest.json` plus three activation files per edit into `dir`.
    /// Returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        for (edit, entry) in self.edits.iter().zip(&manifest.edits) {
            edit.train_source.write(dir.join(&entry.train_source_file))?;
            edit.train_target.write(dir.join(&entry.train_target_file))?;
            edit.eval.write(dir.join(&entry.eval_file))?;
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, manifest.to_json())?;
        Ok(path)
    }

    /// Loads a manifest and the activation files it references (paths relative to the manifest).
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = BenchmarkManifest::from_json(&std::fs::read_to_string(manifest_path)?)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut bench = Benchmark {
            activation_dim: manifest.activation_dim,
            scope_dim: manifest.scope_dim,
            backend: manifest.backend,
            edits: Vec::with_capacity(manifest.edits.len()),
        };
        for e in manifest.edits {
            let read = |f: &str| -> Result<ActivationSet> {
                let set = ActivationSet::read(base.join(f)).map_err(|err| match err {
                    SakeError::SchemaViolation { line, message } => SakeError::schema(line, format!("{f}: {message}")),
                    other => other,
                })?;
                bench.check_set(&set, f)?;
                Ok(set)
            };
            let edit = BenchmarkEdit {
                train_source: read(&e.train_source_file)?,
                train_target: read(&e.train_target_file)?,
                eval: read(&e.eval_file)?,
                id: e.id,
                spec: e.spec,
                ground_truth: e.ground_truth,
            };
            bench.edits.push(edit);
        }
        Ok(bench)
    }
}

fn file_names(id: &str) -> (String, String, String) {
    (
        format!("{id}.source.jsonl"),
        format!("{id}.target.jsonl"),
        format!("{id}.eval.jsonl"),
    )
}
