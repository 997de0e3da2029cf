// SPDX-License-Identifier: MIT OR Apache-2.0

//! Metrics, sweeps, and the map-kind ablation.
//!
//! Every score is `100 × passed / evaluated` over one category of prompts,
//! judged by greedy top-1 label. In-scope categories pass when the edited model
//! emits the record's post-edit label; relation-specificity and unrelated
//! prompts pass only when they were left unsteered and kept their pre-edit label.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SakeError};
use crate::io::Benchmark;
use crate::linalg::{empirical_mean, ActivationVector, GaussianSummary, DEFAULT_REGULARIZATION};
use crate::ot::{fit_map, LinearMap, MapKind};
use crate::records::{Category, PromptRecord};
use crate::registry::{
    check_header, epoch, Distance, EditEntry, Registry, Representation, ScopeDetector, DEFAULT_EPSILON,
};
use crate::steering::{edited_forward, LmBackend};

pub const REPORT_FORMAT: &str = "sake-report";
pub const REPORT_VERSION: u32 = 1;

/// How maps and detectors are fitted from a benchmark's training sets.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub reg: f64,
    pub epsilon: f64,
    pub kind: MapKind,
    /// Use only the first `n` training records per role; `None` uses all.
    pub n_train: Option<usize>,
    pub distance: Distance,
    pub representation: Representation,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            reg: DEFAULT_REGULARIZATION,
            epsilon: DEFAULT_EPSILON,
            kind: MapKind::OptimalTransport,
            n_train: None,
            distance: Distance::Euclidean,
            representation: Representation::ExternalEmbedding,
        }
    }
}

/// Fits one edit entry from paired source/target activations.
///
/// The detector centroid is the mean of the source scope vectors.
#[allow(clippy::too_many_arguments)]
pub fn fit_edit(
    id: &str,
    spec: crate::registry::EditSpec,
    source: &[ActivationVector],
    target: &[ActivationVector],
    source_scope: &[ActivationVector],
    cfg: &FitConfig,
) -> Result<EditEntry> {
    let src = GaussianSummary::from_samples(source, cfg.reg)?;
    let tgt = GaussianSummary::from_samples(target, cfg.reg)?;
    let map: LinearMap = fit_map(cfg.kind, &src, &tgt)?;
    let centroid = empirical_mean(source_scope)?;
    let detector = ScopeDetector::new(centroid, cfg.epsilon, cfg.distance, cfg.representation)?;
    EditEntry::new(id, spec, detector, map, epoch())
}

/// Fits every edit of `bench` into a fresh registry.
pub fn build_registry(bench: &Benchmark, cfg: &FitConfig) -> Result<Registry> {
    let scope_dim = match cfg.representation {
        Representation::ModelActivation => bench.activation_dim,
        Representation::ExternalEmbedding => bench.scope_dim,
    };
    let mut registry = Registry::new(bench.activation_dim, scope_dim)?;
    for edit in &bench.edits {
        let take = |n: usize| cfg.n_train.map_or(n, |k| k.min(n));
        let ns = take(edit.train_source.records.len());
        let nt = take(edit.train_target.records.len());
        if let Some(n) = cfg.n_train {
            if n < 2 {
                return Err(SakeError::InsufficientSamples { needed: 2, got: n });
            }
        }
        let src = &edit.train_source.records[..ns];
        let tgt = &edit.train_target.records[..nt];
        let scope: Vec<ActivationVector> = src
            .iter()
            .map(|r| match cfg.representation {
                Representation::ModelActivation => r.vector.clone(),
                Representation::ExternalEmbedding => r.scope().clone(),
            })
            .collect();
        let entry = fit_edit(
            &edit.id,
            edit.spec.clone(),
            &src.iter().map(|r| r.vector.clone()).collect::<Vec<_>>(),
            &tgt.iter().map(|r| r.vector.clone()).collect::<Vec<_>>(),
            &scope,
            cfg,
        )?;
        registry.add_edit(entry)?;
    }
    Ok(registry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCount {
    pub evaluated: usize,
    pub passed: usize,
    /// Records whose scope vector matched some edit.
    pub steered: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub generality: Option<f64>,
    pub specificity: Option<f64>,
    pub ci: Option<f64>,
    pub cii: Option<f64>,
    pub sa: Option<f64>,
    pub rs: Option<f64>,
}

impl Metrics {
    pub fn get(&self, cat: Category) -> Option<f64> {
        match cat {
            Category::EditPrompt => self.accuracy,
            Category::Paraphrase => self.generality,
            Category::Unrelated => self.specificity,
            Category::Ci => self.ci,
            Category::Cii => self.cii,
            Category::Sa => self.sa,
            Category::Rs => self.rs,
        }
    }

    fn slot(&mut self, cat: Category) -> &mut Option<f64> {
        match cat {
            Category::EditPrompt => &mut self.accuracy,
            Category::Paraphrase => &mut self.generality,
            Category::Unrelated => &mut self.specificity,
            Category::Ci => &mut self.ci,
            Category::Cii => &mut self.cii,
            Category::Sa => &mut self.sa,
            Category::Rs => &mut self.rs,
        }
    }

    /// Values in CSV column order.
    pub fn columns(&self) -> [Option<f64>; 7] {
        [
            self.accuracy,
            self.generality,
            self.specificity,
            self.ci,
            self.cii,
            self.sa,
            self.rs,
        ]
    }
}

/// Configuration echo stored with each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
/// Fields are `None` when unknown, e.g. when evaluating a registry fitted elsewhere.
pub struct ReportConfig {
    pub epsilon: Option<f64>,
    pub reg: Option<f64>,
    pub n_train: Option<usize>,
    pub map_kind: Option<MapKind>,
    pub seed: Option<u64>,
}

impl ReportConfig {
    pub fn from_fit(cfg: &FitConfig, seed: Option<u64>) -> Self {
        Self {
            epsilon: Some(cfg.epsilon),
            reg: Some(cfg.reg),
            n_train: cfg.n_train,
            map_kind: Some(cfg.kind),
            seed,
        }
    }

    /// Echo for a pre-built registry: threshold and map kind when shared by every edit.
    pub fn from_registry(registry: &Registry, seed: Option<u64>) -> Self {
        fn common<T: PartialEq>(mut it: impl Iterator<Item = T>) -> Option<T> {
            let first = it.next()?;
            it.all(|x| x == first).then_some(first)
        }
        Self {
            epsilon: common(registry.entries().map(|e| e.detector.epsilon)),
            reg: None,
            n_train: None,
            map_kind: common(registry.entries().map(|e| e.map.kind())),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format: String,
    pub version: u32,
    pub config: ReportConfig,
    pub metrics: Metrics,
    pub counts: BTreeMap<Category, CategoryCount>,
}

impl MetricReport {
    /// Number of evaluated records that matched any edit's scope.
    pub fn scope_matched(&self) -> usize {
        self.counts.values().map(|c| c.steered).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SakeError::schema(Some(e.line()), e.to_string()))?;
        check_header(&value, REPORT_FORMAT, REPORT_VERSION)?;
        serde_json::from_value(value).map_err(|e| SakeError::schema(None, e.to_string()))
    }
}

/// Scores `records` with the edited model.
pub fn evaluate<B: LmBackend + ?Sized>(
    backend: &B,
    registry: &Registry,
    records: &[PromptRecord],
    config: ReportConfig,
) -> Result<MetricReport> {
    let mut counts: BTreeMap<Category, CategoryCount> = BTreeMap::new();
    for rec in records {
        let out = edited_forward(backend, registry, rec)?;
        let label = out.output_label.as_deref().unwrap_or_default();
        let pass = if rec.category.is_in_scope() {
            label == rec.expected_post_edit
        } else {
            !out.steered && label == rec.expected_pre_edit
        };
        let c = counts.entry(rec.category).or_default();
        c.evaluated += 1;
        c.passed += usize::from(pass);
        c.steered += usize::from(out.steered);
    }
    let mut metrics = Metrics::default();
    for (cat, c) in &counts {
        if c.evaluated > 0 {
            *metrics.slot(*cat) = Some(100.0 * c.passed as f64 / c.evaluated as f64);
        }
    }
    Ok(MetricReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        config,
        metrics,
        counts,
    })
}

/// Fits `bench` under `cfg` and evaluates on its held-out records.
pub fn evaluate_benchmark<B: LmBackend + ?Sized>(
    backend: &B,
    bench: &Benchmark,
    cfg: &FitConfig,
) -> Result<MetricReport> {
    let registry = build_registry(bench, cfg)?;
    evaluate(
        backend,
        &registry,
        &bench.eval_prompts()?,
        ReportConfig::from_fit(cfg, bench.seed()),
    )
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub report: MetricReport,
}

/// Re-evaluates the same fitted maps under each threshold in `grid`.
pub fn sweep_epsilon<B: LmBackend + ?Sized>(
    backend: &B,
    bench: &Benchmark,
    cfg: &FitConfig,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(SakeError::InvalidArgument("epsilon grid is empty".into()));
    }
    if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SakeError::InvalidArgument(
            "epsilon grid must be positive and strictly increasing".into(),
        ));
    }
    let base = build_registry(bench, cfg)?;
    let prompts = bench.eval_prompts()?;
    grid.iter()
        .map(|&eps| {
            let reg = base.with_epsilon(eps)?;
            let report = evaluate(
                backend,
                &reg,
                &prompts,
                ReportConfig::from_fit(
                    &FitConfig {
                        epsilon: eps,
                        ..cfg.clone()
                    },
                    bench.seed(),
                ),
            )?;
            Ok(SweepPoint { value: eps, report })
        })
        .collect()
}

/// Refits maps and centroids from the first `n` training records for each `n` in `sizes`.
pub fn sweep_num_prompts<B: LmBackend + ?Sized>(
    backend: &B,
    bench: &Benchmark,
    cfg: &FitConfig,
    sizes: &[usize],
) -> Result<Vec<SweepPoint>> {
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(SakeError::InsufficientSamples { needed: 2, got: n });
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SakeError::InvalidArgument("sizes must be strictly increasing".into()));
    }
    let available = bench
        .edits
        .iter()
        .map(|e| e.train_source.records.len().min(e.train_target.records.len()))
        .min()
        .unwrap_or(0);
    if let Some(&n) = sizes.iter().find(|&&n| n > available) {
        return Err(SakeError::InsufficientSamples {
            needed: n,
            got: available,
        });
    }
    sizes
        .iter()
        .map(|&n| {
            let c = FitConfig {
                n_train: Some(n),
                ..cfg.clone()
            };
            Ok(SweepPoint {
                value: n as f64,
                report: evaluate_benchmark(backend, bench, &c)?,
            })
        })
        .collect()
}

/// Transport map versus uniform shift, identical detectors.
pub fn compare_map_kinds<B: LmBackend + ?Sized>(
    backend: &B,
    bench: &Benchmark,
    cfg: &FitConfig,
) -> Result<(MetricReport, MetricReport)> {
    let ot = evaluate_benchmark(
        backend,
        bench,
        &FitConfig {
            kind: MapKind::OptimalTransport,
            ..cfg.clone()
        },
    )?;
    let uniform = evaluate_benchmark(
        backend,
        bench,
        &FitConfig {
            kind: MapKind::UniformShift,
            ..cfg.clone()
        },
    )?;
    Ok((ot, uniform))
}

pub const PLOT_HEADER: &str = "sweep_var,accuracy,generality,specificity,ci,cii,sa,rs";

/// CSV text for a sweep: header plus one row per point; absent metrics are empty fields.
pub fn plot_data(table: &[SweepPoint]) -> Result<String> {
    if table.is_empty() {
        return Err(SakeError::InvalidArgument("sweep table is empty".into()));
    }
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for p in table {
        write!(out, "{}", p.value).expect("string write");
        for v in p.report.metrics.columns() {
            out.push(',');
            if let Some(v) = v {
                write!(out, "{v}").expect("string write");
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_plot_data(table: &[SweepPoint], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, plot_data(table)?)?;
    Ok(())
}

/// Parses `a:b:n` into `n` evenly spaced values from `a` to `b` inclusive.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || SakeError::InvalidArgument(format!("grid `{spec}` is not of the form a:b:n"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(bad());
    };
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() || (n > 1 && a >= b) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    let step = (b - a) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(values: [Option<f64>; 7]) -> MetricReport {
        let mut m = Metrics::default();
        let order = [
            Category::EditPrompt,
            Category::Paraphrase,
            Category::Unrelated,
            Category::Ci,
            Category::Cii,
            Category::Sa,
            Category::Rs,
        ];
        for (cat, v) in order.iter().zip(values) {
            *m.slot(*cat) = v;
        }
        MetricReport {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            config: ReportConfig::from_fit(&FitConfig::default(), Some(1)),
            metrics: m,
            counts: BTreeMap::new(),
        }
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.5:8:16").unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[15], 8.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(parse_grid("1:2:2").unwrap(), vec![1.0, 2.0]);
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("2:1:3").is_err());
        assert!(parse_grid("1:2:0").is_err());
    }

    #[test]
    fn csv_layout_and_absent_fields() {
        let table: Vec<SweepPoint> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| SweepPoint {
                value: v,
                report: report([Some(100.0), Some(50.0), None, None, None, None, Some(97.5)]),
            })
            .collect();
        let csv = plot_data(&table).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,100,50,,,,,97.5");
        assert_eq!(plot_data(&table).unwrap(), csv);
        assert!(plot_data(&[]).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let r = report([Some(1.0), None, Some(100.0), None, Some(2.5), None, None]);
        let text = r.to_json();
        assert!(text.contains("\"generality\": null"));
        let back = MetricReport::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), text);
    }
}
