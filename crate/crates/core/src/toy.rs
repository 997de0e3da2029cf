// SPDX-License-Identifier: MIT OR Apache-2.0

//! A deterministic synthetic language model with linearly decodable facts.
//!
//! The model is an orthonormal unembedding `W` (`|V| × d`); decoding is a
//! greedy argmax over `W h`. The orthogonal complement of the row space carries
//! the "prompt embedding" (subject and relation) and is exposed as the
//! external scope channel, so scope detection never sees the answer.
//!
//! A benchmark edit is a family of fact clusters (edit prompt, paraphrases,
//! implications, relation-specificity and unrelated prompts) plus a ground
//! truth drift `h ↦ M h + c` with `M = I + δ P`, `P` symmetric PSD. Target
//! activations are the drift image of the very source activation they pair
//! with, mirroring how target prompts wrap their source prompt in a context.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SakeError};
use crate::io::{ActivationRecord, ActivationSet, BackendSpec, Benchmark, BenchmarkEdit, GroundTruth};
use crate::linalg::{psd_sqrt, ActivationVector, SymMatrix};
use crate::records::{Category, PromptRecord, Role};
use crate::registry::{EditSpec, DEFAULT_EPSILON};
use crate::steering::{Encoded, LmBackend};

/// Projection of a cluster mean onto its label row.
pub const LABEL_STRENGTH: f64 = 0.8;
/// Per-coordinate noise inside the unembedding row space.
pub const ROW_NOISE: f64 = 0.1;
/// Per-coordinate noise of the prompt embedding.
pub const SCOPE_NOISE: f64 = 0.6;
/// Edit-prompt clusters are this much tighter in the prompt embedding.
pub const EDIT_PROMPT_TIGHTNESS: f64 = 0.3;
/// Distance of subject locations from the origin of the prompt embedding.
pub const SUBJECT_RADIUS: f64 = 30.0;
/// Offset of implication prompts (CI, CII, SA) from the paraphrase location.
pub const IMPLICATION_OFFSET: f64 = 4.0;
pub const IMPLICATION_JITTER: f64 = 1.0;
/// Angle mixing the implication direction with the old→new decision direction in `P`.
pub const COUPLING_ANGLE: f64 = 0.6;
/// Weight and rank of the unstructured part of `P`.
pub const BACKGROUND_DRIFT_WEIGHT: f64 = 0.3;
pub const BACKGROUND_DRIFT_RANK: usize = 4;
pub const DEFAULT_CLUSTER_SPREAD: f64 = 0.1;
const DECODABILITY_DRAWS: usize = 10_000;
const MAX_ATTEMPTS: usize = 200;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn unit(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let g = gaussian(rng, n);
        let norm = g.norm();
        if norm > 1e-8 {
            return g / norm;
        }
    }
}

/// `count` orthonormal vectors in `R^dim` by twice-repeated Gram–Schmidt on Gaussian draws.
fn orthonormal_basis(rng: &mut impl Rng, dim: usize, count: usize) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let p = b.dot(&v);
                v -= b * p;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    basis
}

pub fn default_vocab(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("obj_{i:02}")).collect()
}

/// Fixed linear unembedding over a small vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    dim: usize,
    vocab: Vec<String>,
    seed: u64,
    /// `|V| × d`, orthonormal rows.
    unembedding: DMatrix<f64>,
    /// `d × (d − |V|)`, orthonormal columns spanning the complement of the rows.
    complement: DMatrix<f64>,
}

pub fn build_toy_model(seed: u64, dim: usize, vocab: Vec<String>) -> Result<ToyModel> {
    if vocab.len() > dim {
        return Err(SakeError::VocabTooLarge {
            vocab: vocab.len(),
            dim,
        });
    }
    if vocab.len() < 2 {
        return Err(SakeError::InvalidArgument("vocabulary needs at least 2 labels".into()));
    }
    let mut sorted = vocab.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != vocab.len() || vocab.iter().any(String::is_empty) {
        return Err(SakeError::InvalidArgument(
            "vocabulary labels must be unique and nonempty".into(),
        ));
    }
    let mut rng = rng_for(seed, 0);
    let basis = orthonormal_basis(&mut rng, dim, dim);
    let v = vocab.len();
    let unembedding = DMatrix::from_fn(v, dim, |i, j| basis[i][j]);
    let complement = DMatrix::from_fn(dim, dim - v, |i, j| basis[v + j][i]);
    Ok(ToyModel {
        dim,
        vocab,
        seed,
        unembedding,
        complement,
    })
}

impl ToyModel {
    pub fn from_spec(spec: &BackendSpec) -> Result<Self> {
        match spec {
            BackendSpec::Toy { seed, dim, vocab } => build_toy_model(*seed, *dim, vocab.clone()),
            BackendSpec::External => Err(SakeError::Backend(
                "external benchmarks have no built-in backend".into(),
            )),
        }
    }

    pub fn spec(&self) -> BackendSpec {
        BackendSpec::Toy {
            seed: self.seed,
            dim: self.dim,
            vocab: self.vocab.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Dimension of the prompt-embedding (scope) channel.
    pub fn embedding_dim(&self) -> usize {
        self.dim - self.vocab.len()
    }

    pub fn unembedding(&self) -> &DMatrix<f64> {
        &self.unembedding
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.vocab
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| SakeError::UnknownObject(label.to_string()))
    }

    /// Unembedding row of `label`.
    pub fn row(&self, label: &str) -> Result<ActivationVector> {
        let i = self.label_index(label)?;
        ActivationVector::new(self.unembedding.row(i).iter().copied().collect())
    }

    fn row_vec(&self, idx: usize) -> DVector<f64> {
        self.unembedding.row(idx).transpose()
    }

    fn decode_index(&self, h: &DVector<f64>) -> usize {
        let scores = &self.unembedding * h;
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        best
    }

    /// Labels ranked by score, ties broken by vocabulary order.
    pub fn decode_ranked(&self, h: &ActivationVector) -> Result<Vec<String>> {
        h.ensure_dim(self.dim)?;
        let scores = &self.unembedding * h.to_dvector();
        let mut order: Vec<usize> = (0..self.vocab.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(order.into_iter().map(|i| self.vocab[i].clone()).collect())
    }

    pub fn decode_label(&self, h: &ActivationVector) -> Result<String> {
        h.ensure_dim(self.dim)?;
        Ok(self.vocab[self.decode_index(&h.to_dvector())].clone())
    }

    /// Prompt-embedding coordinates of an activation (its complement part).
    pub fn embed(&self, h: &ActivationVector) -> Result<ActivationVector> {
        h.ensure_dim(self.dim)?;
        ActivationVector::from_dvector(&(self.complement.transpose() * h.to_dvector()))
    }
}

impl LmBackend for ToyModel {
    fn activation_dim(&self) -> usize {
        self.dim
    }

    fn scope_dim(&self) -> usize {
        self.embedding_dim()
    }

    fn encode(&self, prompt: &PromptRecord) -> Result<Encoded> {
        prompt.activation.ensure_dim(self.dim)?;
        prompt.scope_vec.ensure_dim(self.embedding_dim())?;
        Ok(Encoded {
            activation: prompt.activation.clone(),
            scope_vec: prompt.scope_vec.clone(),
        })
    }

    fn decode(&self, activation: &ActivationVector) -> Result<Vec<String>> {
        self.decode_ranked(activation)
    }
}

/// Gaussian cloud of activations sharing one answer.
#[derive(Debug, Clone, PartialEq)]
pub struct FactCluster {
    pub object_label: String,
    pub category: Category,
    pub mean: ActivationVector,
    pub cov: SymMatrix,
    /// Any `L` with `L Lᵀ = cov`, used for sampling.
    factor: DMatrix<f64>,
}

impl FactCluster {
    pub fn sample(&self, rng: &mut impl Rng) -> ActivationVector {
        let xi = gaussian(rng, self.mean.dim());
        let h = self.mean.to_dvector() + &self.factor * xi;
        ActivationVector::from_dvector(&h).expect("finite sample")
    }

    /// Image under `h ↦ M h + c`: mean `M μ + c`, covariance `M Σ M`.
    pub fn pushforward(&self, drift: &GroundTruth, object_label: String) -> Result<FactCluster> {
        let m = drift.m.as_matrix();
        let mean = m * self.mean.to_dvector() + drift.c.to_dvector();
        Ok(FactCluster {
            object_label,
            category: self.category,
            mean: ActivationVector::from_dvector(&mean)?,
            cov: drift.m.sandwich(&self.cov),
            factor: m * &self.factor,
        })
    }

    /// Fraction of `draws` seeded samples decoding to the cluster's label.
    pub fn decodable_fraction(&self, model: &ToyModel, draws: usize, seed: u64) -> f64 {
        let mut rng = rng_for(seed, 7);
        let target = model.label_index(&self.object_label).ok();
        let hits = (0..draws)
            .filter(|_| Some(model.decode_index(&self.sample(&mut rng).to_dvector())) == target)
            .count();
        hits as f64 / draws as f64
    }
}

/// Random cluster decoding to `object_label` with eigenvalue ratio at most `anisotropy`.
pub fn make_fact_cluster(
    model: &ToyModel,
    object_label: &str,
    spread: f64,
    anisotropy: f64,
    seed: u64,
) -> Result<FactCluster> {
    let idx = model.label_index(object_label)?;
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(SakeError::InvalidArgument(format!(
            "spread must be positive, got {spread}"
        )));
    }
    if !(anisotropy >= 1.0 && anisotropy.is_finite()) {
        return Err(SakeError::InvalidArgument(format!(
            "anisotropy must be >= 1, got {anisotropy}"
        )));
    }
    let d = model.dim;
    let mut rng = rng_for(seed, 3);
    let mut mean = model.row_vec(idx) * LABEL_STRENGTH;
    if model.embedding_dim() > 0 {
        let off = &model.complement * unit(&mut rng, model.embedding_dim());
        mean += off * (0.5 * LABEL_STRENGTH);
    }
    let var = spread * spread;
    let cov = if anisotropy == 1.0 {
        SymMatrix::diagonal(&vec![var; d])
    } else {
        let q = orthonormal_basis(&mut rng, d, d);
        let eig: Vec<f64> = (0..d)
            .map(|i| {
                let u = if d == 1 { 0.0 } else { i as f64 / (d - 1) as f64 };
                var * anisotropy.powf(-u)
            })
            .collect();
        let q = DMatrix::from_fn(d, d, |i, j| q[j][i]);
        SymMatrix::symmetrized(&q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose())
    };
    let factor = psd_sqrt(&cov)?.as_matrix().clone();
    let cluster = FactCluster {
        object_label: object_label.to_string(),
        category: Category::Paraphrase,
        mean: ActivationVector::from_dvector(&mean)?,
        cov,
        factor,
    };
    if model.decode_label(&cluster.mean)? != object_label {
        return Err(SakeError::DecodabilityFailure(format!(
            "cluster mean does not decode to `{object_label}`"
        )));
    }
    let frac = cluster.decodable_fraction(model, DECODABILITY_DRAWS, seed);
    if frac < 0.99 {
        return Err(SakeError::DecodabilityFailure(format!(
            "only {:.2}% of samples decode to `{object_label}` at spread {spread}",
            100.0 * frac
        )));
    }
    Ok(cluster)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub n_edits: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub n_train_per_role: usize,
    pub drift_strength: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_edits: 20,
            dim: 64,
            vocab_size: 32,
            n_train_per_role: 100,
            drift_strength: 0.5,
            seed: 0,
        }
    }
}

impl ToyConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SakeError::InvalidArgument(m.to_string()));
        if self.n_edits == 0 {
            return bad("n_edits must be positive");
        }
        if self.vocab_size < 5 {
            return bad(
                "vocab_size must be at least 5 (old, new, two implication answers, relation-specificity answer)",
            );
        }
        if self.vocab_size >= self.dim {
            return bad("vocab_size must be smaller than dim to leave room for the prompt embedding");
        }
        if self.n_train_per_role < 2 {
            return bad("n_train_per_role must be at least 2");
        }
        if !(self.drift_strength >= 0.0 && self.drift_strength.is_finite()) {
            return bad("drift_strength must be finite and >= 0");
        }
        Ok(())
    }

    fn train_per_category(&self) -> usize {
        self.n_train_per_role.div_ceil(Category::IN_SCOPE.len())
    }

    /// Held-out records per category, an 80/20 split of the per-category training count.
    pub fn eval_per_category(&self) -> usize {
        (self.n_train_per_role as f64 / (4.0 * Category::IN_SCOPE.len() as f64))
            .round()
            .max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEdit {
    pub id: String,
    pub spec: EditSpec,
    /// One cluster per category, in [`Category::ALL`] order.
    pub source_clusters: Vec<FactCluster>,
    /// Drift images of the in-scope source clusters, in [`Category::IN_SCOPE`] order.
    pub target_clusters: Vec<FactCluster>,
    pub drift: GroundTruth,
    pub train_source: Vec<ActivationRecord>,
    pub train_target: Vec<ActivationRecord>,
    pub eval: Vec<ActivationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBenchmark {
    pub model: ToyModel,
    pub config: ToyConfig,
    pub edits: Vec<ToyEdit>,
}

impl ToyBenchmark {
    /// File-format view of the benchmark.
    pub fn to_benchmark(&self) -> Benchmark {
        let d = self.model.dim;
        let k = self.model.embedding_dim();
        let set = |records: &[ActivationRecord]| ActivationSet {
            dim: d,
            scope_dim: k,
            header_extra: Default::default(),
            records: records.to_vec(),
        };
        Benchmark {
            activation_dim: d,
            scope_dim: k,
            backend: self.model.spec(),
            edits: self
                .edits
                .iter()
                .map(|e| BenchmarkEdit {
                    id: e.id.clone(),
                    spec: e.spec.clone(),
                    train_source: set(&e.train_source),
                    train_target: set(&e.train_target),
                    eval: set(&e.eval),
                    ground_truth: Some(e.drift.clone()),
                })
                .collect(),
        }
    }
}

/// Geometry of one edit in the prompt embedding.
struct Layout {
    centroid: DVector<f64>,
    centers: Vec<DVector<f64>>,
}

fn layout(rng: &mut impl Rng, k: usize, eps: f64) -> Layout {
    let subject = unit(rng, k) * SUBJECT_RADIUS;
    let neighbor = unit(rng, k) * SUBJECT_RADIUS;
    let implication_dir = unit(rng, k);
    let rs_offset = unit(rng, k) * (2.0 * eps);
    let jitter = IMPLICATION_JITTER / (k as f64).sqrt();
    let centers: Vec<DVector<f64>> = Category::ALL
        .iter()
        .map(|cat| match cat {
            Category::EditPrompt | Category::Paraphrase => subject.clone(),
            Category::Ci | Category::Cii | Category::Sa => {
                &subject + &implication_dir * IMPLICATION_OFFSET + gaussian(rng, k) * jitter
            }
            Category::Rs => &subject + &rs_offset,
            Category::Unrelated => neighbor.clone(),
        })
        .collect();
    let centroid = Category::IN_SCOPE
        .iter()
        .map(|c| &centers[*c as usize])
        .fold(DVector::zeros(k), |a, b| a + b)
        / Category::IN_SCOPE.len() as f64;
    Layout { centroid, centers }
}

struct EditLabels {
    old: usize,
    new: usize,
    ci: usize,
    cii: usize,
    rs: usize,
}

impl EditLabels {
    fn source(&self, cat: Category) -> usize {
        match cat {
            Category::EditPrompt | Category::Paraphrase | Category::Sa | Category::Unrelated => self.old,
            Category::Ci => self.ci,
            Category::Cii => self.cii,
            Category::Rs => self.rs,
        }
    }
}

/// Builds the in-memory toy benchmark for `config`.
pub fn generate_benchmark(config: &ToyConfig) -> Result<ToyBenchmark> {
    config.validate()?;
    let model = build_toy_model(config.seed, config.dim, default_vocab(config.vocab_size))?;
    let d = model.dim;
    let k = model.embedding_dim();
    let eps = DEFAULT_EPSILON;
    let mut rng = rng_for(config.seed, 1);

    let w_rows = model.unembedding.transpose() * &model.unembedding;
    let u_proj = &model.complement * model.complement.transpose();

    let mut centroids: Vec<DVector<f64>> = Vec::new();
    let mut outside: Vec<DVector<f64>> = Vec::new();
    let mut edits = Vec::with_capacity(config.n_edits);

    for e in 0..config.n_edits {
        let mut attempt = 0;
        let edit = loop {
            attempt += 1;
            if attempt > MAX_ATTEMPTS {
                return Err(SakeError::GenerationRetryExhausted {
                    attempts: MAX_ATTEMPTS,
                    reason: format!("could not place edit {e} with separated, decodable clusters"),
                });
            }
            let picks = sample_indices(&mut rng, config.vocab_size, 5).into_vec();
            let labels = EditLabels {
                old: picks[0],
                new: picks[1],
                ci: picks[2],
                cii: picks[3],
                rs: picks[4],
            };
            let lay = layout(&mut rng, k, eps);
            let implication_dir = {
                let v = &lay.centers[Category::Ci as usize] - &lay.centers[Category::Paraphrase as usize];
                v.normalize()
            };

            // Separation: centroids 4ε apart, out-of-scope centers ≥ 1.8ε from every centroid.
            let out_here = [
                lay.centers[Category::Rs as usize].clone(),
                lay.centers[Category::Unrelated as usize].clone(),
            ];
            let far = |a: &DVector<f64>, b: &DVector<f64>, min: f64| (a - b).norm() >= min;
            let separated = centroids.iter().all(|c| far(c, &lay.centroid, 4.0 * eps))
                && outside
                    .iter()
                    .chain(&out_here)
                    .all(|o| far(o, &lay.centroid, 1.8 * eps))
                && out_here.iter().all(|o| centroids.iter().all(|c| far(o, c, 1.8 * eps)));
            if !separated {
                continue;
            }

            let source_means: Vec<DVector<f64>> = Category::ALL
                .iter()
                .map(|&cat| {
                    model.row_vec(labels.source(cat)) * LABEL_STRENGTH + &model.complement * &lay.centers[cat as usize]
                })
                .collect();
            let clusters: Vec<FactCluster> = Category::ALL
                .iter()
                .map(|&cat| {
                    let scope_sd = if cat == Category::EditPrompt {
                        SCOPE_NOISE * EDIT_PROMPT_TIGHTNESS
                    } else {
                        SCOPE_NOISE
                    };
                    let cov = &w_rows * (ROW_NOISE * ROW_NOISE) + &u_proj * (scope_sd * scope_sd);
                    let factor = &w_rows * ROW_NOISE + &u_proj * scope_sd;
                    Ok(FactCluster {
                        object_label: model.vocab[labels.source(cat)].clone(),
                        category: cat,
                        mean: ActivationVector::from_dvector(&source_means[cat as usize])?,
                        cov: SymMatrix::symmetrized(cov),
                        factor,
                    })
                })
                .collect::<Result<_>>()?;

            // Drift: rank-one coupling between the implication direction and the
            // old→new decision direction, plus a random low-rank background.
            let decision = (model.row_vec(labels.old) - model.row_vec(labels.new)) / 2f64.sqrt();
            let g = &model.complement * &implication_dir * COUPLING_ANGLE.cos() + decision * COUPLING_ANGLE.sin();
            let background = DMatrix::from_fn(d, BACKGROUND_DRIFT_RANK, |_, _| rng.sample::<f64, _>(StandardNormal));
            let bg = &background * background.transpose();
            let bg = &bg
                / SymMatrix::symmetrized(bg.clone())
                    .eigenvalues()
                    .last()
                    .copied()
                    .unwrap_or(1.0);
            let p = &g * g.transpose() + bg * BACKGROUND_DRIFT_WEIGHT;
            let p = SymMatrix::symmetrized(p);
            let p_max = *p.eigenvalues().last().expect("nonempty");
            let m = SymMatrix::symmetrized(DMatrix::identity(d, d) + p.as_matrix() * (config.drift_strength / p_max));
            let m_par = &source_means[Category::Paraphrase as usize];
            let swapped = m_par + (model.row_vec(labels.new) - model.row_vec(labels.old)) * LABEL_STRENGTH;
            let c = swapped - m.as_matrix() * m_par;
            let drift = GroundTruth {
                m,
                c: ActivationVector::from_dvector(&c)?,
            };

            let decodes = |h: &DVector<f64>, label: usize| model.decode_index(h) == label;
            if !Category::ALL
                .iter()
                .all(|&cat| decodes(&source_means[cat as usize], labels.source(cat)))
            {
                continue;
            }
            let target_clusters: Vec<FactCluster> = Category::IN_SCOPE
                .iter()
                .map(|&cat| {
                    let src = &clusters[cat as usize];
                    let img = drift.m.as_matrix() * src.mean.to_dvector() + drift.c.to_dvector();
                    let label = model.vocab[model.decode_index(&img)].clone();
                    src.pushforward(&drift, label)
                })
                .collect::<Result<_>>()?;
            let new_label = &model.vocab[labels.new];
            if target_clusters[..2].iter().any(|t| &t.object_label != new_label) {
                continue;
            }

            let id = format!("edit_{e:03}");
            let spec = EditSpec::new(
                format!("subject_{e:03}"),
                format!("relation_{e:03}"),
                model.vocab[labels.old].clone(),
                new_label.clone(),
            )?;
            break build_edit_records(
                &model,
                config,
                id,
                spec,
                clusters,
                target_clusters,
                drift,
                lay,
                &mut rng,
            )?;
        };
        centroids.push(edit.1);
        outside.extend(edit.2);
        edits.push(edit.0);
    }

    Ok(ToyBenchmark {
        model,
        config: config.clone(),
        edits,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_edit_records(
    model: &ToyModel,
    config: &ToyConfig,
    id: String,
    spec: EditSpec,
    clusters: Vec<FactCluster>,
    target_clusters: Vec<FactCluster>,
    drift: GroundTruth,
    lay: Layout,
    rng: &mut ChaCha8Rng,
) -> Result<(ToyEdit, DVector<f64>, Vec<DVector<f64>>)> {
    let apply = |h: &ActivationVector| -> Result<ActivationVector> {
        ActivationVector::from_dvector(&(drift.m.as_matrix() * h.to_dvector() + drift.c.to_dvector()))
    };
    let record = |rid: String, role: Role, cat: Category, h: ActivationVector| -> Result<ActivationRecord> {
        Ok(ActivationRecord {
            id: rid,
            role,
            category: cat,
            scope_vector: Some(model.embed(&h)?),
            vector: h,
            expected_pre_edit: None,
            expected_post_edit: None,
            extra: Default::default(),
        })
    };

    // Round-robin over in-scope categories so any prefix of the training set is balanced.
    let per_cat = config.train_per_category();
    let mut train_source = Vec::with_capacity(config.n_train_per_role);
    let mut train_target = Vec::with_capacity(config.n_train_per_role);
    'outer: for _ in 0..per_cat {
        for &cat in &Category::IN_SCOPE {
            if train_source.len() == config.n_train_per_role {
                break 'outer;
            }
            let n = train_source.len();
            let h = clusters[cat as usize].sample(rng);
            let t = apply(&h)?;
            let (pre, post) = (model.decode_label(&h)?, model.decode_label(&t)?);
            let mut src = record(format!("{id}/train/{n:04}"), Role::Source, cat, h)?;
            // the target prompt wraps the same source prompt, so it shares its embedding
            let mut tgt = record(format!("{id}/train/{n:04}"), Role::Target, cat, t)?;
            tgt.scope_vector = src.scope_vector.clone();
            for r in [&mut src, &mut tgt] {
                r.expected_pre_edit = Some(pre.clone());
                r.expected_post_edit = Some(post.clone());
            }
            train_source.push(src);
            train_target.push(tgt);
        }
    }

    let mut eval = Vec::new();
    for &cat in &Category::ALL {
        for j in 0..config.eval_per_category() {
            let h = clusters[cat as usize].sample(rng);
            let pre = model.decode_label(&h)?;
            let post = if cat.is_in_scope() {
                model.decode_label(&apply(&h)?)?
            } else {
                pre.clone()
            };
            let mut rec = record(format!("{id}/eval/{cat}/{j:03}"), Role::Eval, cat, h)?;
            rec.expected_pre_edit = Some(pre);
            rec.expected_post_edit = Some(post);
            eval.push(rec);
        }
    }

    let out_of_scope = vec![
        lay.centers[Category::Rs as usize].clone(),
        lay.centers[Category::Unrelated as usize].clone(),
    ];
    Ok((
        ToyEdit {
            id,
            spec,
            source_clusters: clusters,
            target_clusters,
            drift,
            train_source,
            train_target,
            eval,
        },
        lay.centroid,
        out_of_scope,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_decode_to_their_label() {
        let model = build_toy_model(7, 12, default_vocab(8)).unwrap();
        for label in model.vocab() {
            assert_eq!(&model.decode_label(&model.row(label).unwrap()).unwrap(), label);
        }
        let w = model.unembedding();
        let gram = w * w.transpose();
        assert!((gram - DMatrix::<f64>::identity(8, 8)).amax() < 1e-12);
        assert!((w * &model.complement).amax() < 1e-12);
    }

    #[test]
    fn same_seed_same_model() {
        let a = build_toy_model(3, 10, default_vocab(4)).unwrap();
        let b = build_toy_model(3, 10, default_vocab(4)).unwrap();
        assert_eq!(a, b);
        let c = build_toy_model(4, 10, default_vocab(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn negated_row_decodes_elsewhere() {
        let model = build_toy_model(11, 6, default_vocab(4)).unwrap();
        for (i, label) in model.vocab().iter().enumerate() {
            let neg = ActivationVector::new(model.row(label).unwrap().as_slice().iter().map(|x| -x).collect()).unwrap();
            // brute-force argmax over the vocabulary scores
            let scores: Vec<f64> = (0..4)
                .map(|j| {
                    model
                        .unembedding()
                        .row(j)
                        .iter()
                        .zip(neg.as_slice())
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            let best = (0..4).fold(0, |b, j| if scores[j] > scores[b] { j } else { b });
            assert_ne!(best, i);
            assert_eq!(model.decode_label(&neg).unwrap(), model.vocab()[best]);
        }
    }

    #[test]
    fn vocab_too_large() {
        assert!(matches!(
            build_toy_model(0, 3, default_vocab(4)),
            Err(SakeError::VocabTooLarge { vocab: 4, dim: 3 })
        ));
    }

    #[test]
    fn fact_cluster_examples() {
        let model = build_toy_model(1, 16, default_vocab(8)).unwrap();
        let tight = make_fact_cluster(&model, "obj_03", 1e-6, 1.0, 5).unwrap();
        assert_eq!(tight.decodable_fraction(&model, 500, 1), 1.0);

        let c = make_fact_cluster(&model, "obj_03", DEFAULT_CLUSTER_SPREAD, 4.0, 5).unwrap();
        assert!(c.decodable_fraction(&model, DECODABILITY_DRAWS, 9) >= 0.99);
        let ev = c.cov.eigenvalues();
        assert!(ev.last().unwrap() / ev[0] <= 4.0 + 1e-9);

        let iso = make_fact_cluster(&model, "obj_03", 0.05, 1.0, 5).unwrap();
        assert_eq!(iso.cov, SymMatrix::diagonal(&[0.05 * 0.05; 16]));

        assert!(matches!(
            make_fact_cluster(&model, "nope", 0.1, 1.0, 0),
            Err(SakeError::UnknownObject(_))
        ));
        assert!(matches!(
            make_fact_cluster(&model, "obj_03", 5.0, 1.0, 0),
            Err(SakeError::DecodabilityFailure(_))
        ));
    }

    fn small() -> ToyConfig {
        ToyConfig {
            n_edits: 4,
            dim: 24,
            vocab_size: 8,
            n_train_per_role: 40,
            drift_strength: 0.5,
            seed: 42,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_benchmark(&small()).unwrap();
        let b = generate_benchmark(&small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn targets_are_exact_drift_images() {
        let bench = generate_benchmark(&small()).unwrap();
        for e in &bench.edits {
            assert_eq!(e.train_source.len(), 40);
            for (s, t) in e.train_source.iter().zip(&e.train_target) {
                let img = e.drift.m.as_matrix() * s.vector.to_dvector() + e.drift.c.to_dvector();
                assert!((img - t.vector.to_dvector()).amax() < 1e-12);
            }
            for (src, tgt) in e.source_clusters.iter().zip(&e.target_clusters) {
                let img = e.drift.m.as_matrix() * src.mean.to_dvector() + e.drift.c.to_dvector();
                assert!((img - tgt.mean.to_dvector()).amax() < 1e-12);
            }
            assert_eq!(
                e.target_clusters[Category::Paraphrase as usize].object_label,
                e.spec.new_object
            );
            let ev = e.drift.m.eigenvalues();
            assert!(ev[0] >= 1.0 - 1e-12 && *ev.last().unwrap() <= 1.5 + 1e-9);
        }
    }

    #[test]
    fn zero_drift_is_pure_translation() {
        let bench = generate_benchmark(&ToyConfig {
            drift_strength: 0.0,
            ..small()
        })
        .unwrap();
        for e in &bench.edits {
            assert_eq!(e.drift.m, SymMatrix::identity(24));
        }
    }

    #[test]
    fn training_prefix_is_balanced() {
        let bench = generate_benchmark(&small()).unwrap();
        let cats: Vec<Category> = bench.edits[0].train_source[..5].iter().map(|r| r.category).collect();
        assert_eq!(cats, Category::IN_SCOPE);
    }

    #[test]
    fn config_validation() {
        assert!(generate_benchmark(&ToyConfig {
            vocab_size: 24,
            ..small()
        })
        .is_err());
        assert!(generate_benchmark(&ToyConfig {
            vocab_size: 4,
            ..small()
        })
        .is_err());
        assert!(generate_benchmark(&ToyConfig {
            n_train_per_role: 1,
            ..small()
        })
        .is_err());
    }
}
