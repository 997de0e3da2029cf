// SPDX-License-Identifier: MIT OR Apache-2.0

//! `sake`: fit, manage, apply and evaluate activation-space edits.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 numerical failure.
//! Errors are written to stderr as one line of JSON: `{"code": ..., "message": ...}`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use sake_core::eval::{
    emit_plot_data, evaluate, parse_grid, sweep_epsilon, sweep_num_prompts, FitConfig, MetricReport, ReportConfig,
};
use sake_core::io::{ActivationSet, BackendSpec, Benchmark};
use sake_core::registry::DEFAULT_EPSILON;
use sake_core::toy::{generate_benchmark, ToyConfig, ToyModel};
use sake_core::{
    eval::fit_edit, linalg::DEFAULT_REGULARIZATION, steer_activation, Distance, EditEntry, EditSpec, MapKind, Registry,
    Representation, SakeError, SteeringPolicy,
};

#[derive(Parser)]
#[command(
    name = "sake",
    version,
    about = "Activation-space knowledge editing with linear transport maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one edit from paired source/target activation files and write it as an edit document.
    Fit(FitArgs),
    /// Add, remove or list edits in a registry file.
    Registry {
        #[command(subcommand)]
        action: RegistryAction,
    },
    /// Apply a registry to every record of an activation set.
    Steer(SteerArgs),
    /// Evaluate a registry on a benchmark's held-out records.
    Eval(EvalArgs),
    /// Refit a benchmark once and evaluate it over a grid of scope thresholds.
    SweepEpsilon(SweepEpsilonArgs),
    /// Refit a benchmark from the first n training records for each size and evaluate.
    SweepPrompts(SweepPromptsArgs),
    /// Generate a synthetic benchmark with a known ground-truth drift per edit.
    ToyGen(ToyGenArgs),
}

#[derive(clap::Args)]
struct FitArgs {
    /// Source activation set (prompts eliciting the old object).
    #[arg(long)]
    source: PathBuf,
    /// Target activation set (prompts eliciting the new object).
    #[arg(long)]
    target: PathBuf,
    /// Ridge added to both covariance diagonals.
    #[arg(long, default_value_t = DEFAULT_REGULARIZATION)]
    reg: f64,
    /// Map family: `ot` (transport map) or `uniform` (mean shift).
    #[arg(long, default_value = "ot")]
    kind: MapKind,
    /// Scope threshold on the distance to the source centroid.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Scope distance: `euclidean` or `cosine`.
    #[arg(long, default_value = "euclidean")]
    distance: Distance,
    /// Scope channel: `external` (record scope vectors) or `model` (activations).
    #[arg(long, default_value = "external")]
    representation: Representation,
    /// Output edit document.
    #[arg(long)]
    out: PathBuf,
    /// Edit id (default: the source file stem).
    #[arg(long)]
    id: Option<String>,
    /// Edited subject (default: the edit id).
    #[arg(long)]
    subject: Option<String>,
    /// Edited relation (default: the edit id).
    #[arg(long)]
    relation: Option<String>,
    /// Old object (default: the first source record's expected pre-edit label).
    #[arg(long)]
    old_object: Option<String>,
    /// New object (default: the first target record's expected post-edit label).
    #[arg(long)]
    new_object: Option<String>,
    /// Creation timestamp, RFC 3339 (default: 1970-01-01T00:00:00Z, for reproducible output).
    #[arg(long)]
    created_at: Option<String>,
}

#[derive(Subcommand)]
enum RegistryAction {
    /// Add an edit document to a registry, creating the registry if the file does not exist.
    Add {
        /// Registry file.
        #[arg(long)]
        registry: PathBuf,
        /// Edit document written by `fit`.
        #[arg(long)]
        edit: PathBuf,
        /// Write the result here instead of back to --registry.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove an edit by id.
    Remove {
        /// Registry file.
        #[arg(long)]
        registry: PathBuf,
        /// Id of the edit to remove.
        #[arg(long)]
        id: String,
        /// Write the result here instead of back to --registry.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one line per edit.
    List {
        /// Registry file.
        #[arg(long)]
        registry: PathBuf,
    },
}

#[derive(clap::Args)]
struct SteerArgs {
    /// Registry file.
    #[arg(long)]
    registry: PathBuf,
    /// Input activation set.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output activation set with steered vectors and provenance fields.
    #[arg(long)]
    out: PathBuf,
    /// Steering policy for multi-step decoding: `first` or `every`.
    #[arg(long, default_value = "first")]
    policy: SteeringPolicy,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Registry file.
    #[arg(long)]
    registry: PathBuf,
    /// Benchmark manifest.
    #[arg(long)]
    benchmark: PathBuf,
    /// Output report.
    #[arg(long)]
    report: PathBuf,
}

#[derive(clap::Args)]
struct FitFlags {
    /// Ridge added to both covariance diagonals.
    #[arg(long, default_value_t = DEFAULT_REGULARIZATION)]
    reg: f64,
    /// Map family: `ot` or `uniform`.
    #[arg(long, default_value = "ot")]
    kind: MapKind,
}

#[derive(clap::Args)]
struct SweepEpsilonArgs {
    /// Benchmark manifest.
    #[arg(long)]
    benchmark: PathBuf,
    /// Threshold grid `a:b:n`: n evenly spaced values from a to b inclusive.
    #[arg(long)]
    grid: String,
    /// Output CSV.
    #[arg(long)]
    plot: PathBuf,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(clap::Args)]
struct SweepPromptsArgs {
    /// Benchmark manifest.
    #[arg(long)]
    benchmark: PathBuf,
    /// Comma-separated, strictly increasing training sizes, e.g. `10,25,50,100`.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Output CSV.
    #[arg(long)]
    plot: PathBuf,
    /// Scope threshold.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(clap::Args)]
struct ToyGenArgs {
    /// Random seed (required; every generated value derives from it).
    #[arg(long)]
    seed: u64,
    /// Activation dimension.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Vocabulary size.
    #[arg(long, default_value_t = 32)]
    vocab: usize,
    /// Number of edits.
    #[arg(long, default_value_t = 20)]
    edits: usize,
    /// Drift strength (0 gives a pure translation).
    #[arg(long, default_value_t = 0.5)]
    drift: f64,
    /// Training records per role and edit.
    #[arg(long, default_value_t = 100)]
    n_train: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Core(SakeError),
}

impl From<SakeError> for CliError {
    fn from(e: SakeError) -> Self {
        Self::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Core(SakeError::InvalidArgument(_)) => 1,
            Self::Core(e) if e.is_numerical() => 3,
            Self::Core(_) => 2,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Self::Usage(m) => json!({"code": "Usage", "message": m}),
            Self::Core(e) => json!({"code": e.code(), "message": e.to_string()}),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn file_stem(p: &Path) -> String {
    let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("edit");
    name.split('.').next().unwrap_or(name).to_string()
}

fn fit(a: FitArgs) -> CliResult {
    let source = ActivationSet::read(&a.source)?;
    let target = ActivationSet::read(&a.target)?;
    if source.dim != target.dim {
        return Err(SakeError::DimensionMismatch {
            expected: source.dim,
            got: target.dim,
        }
        .into());
    }
    let id = a.id.unwrap_or_else(|| file_stem(&a.source));
    let old = a
        .old_object
        .or_else(|| source.records.first().and_then(|r| r.expected_pre_edit.clone()))
        .ok_or_else(|| CliError::Usage("--old-object is required when source records carry no labels".into()))?;
    let new = a
        .new_object
        .or_else(|| target.records.first().and_then(|r| r.expected_post_edit.clone()))
        .ok_or_else(|| CliError::Usage("--new-object is required when target records carry no labels".into()))?;
    let spec = EditSpec::new(
        a.subject.unwrap_or_else(|| id.clone()),
        a.relation.unwrap_or_else(|| id.clone()),
        old,
        new,
    )?;
    let scope = match a.representation {
        Representation::ExternalEmbedding => source.scope_vectors(),
        Representation::ModelActivation => source.vectors(),
    };
    let cfg = FitConfig {
        reg: a.reg,
        epsilon: a.epsilon,
        kind: a.kind,
        n_train: None,
        distance: a.distance,
        representation: a.representation,
    };
    let mut entry = fit_edit(&id, spec, &source.vectors(), &target.vectors(), &scope, &cfg)?;
    if let Some(ts) = a.created_at {
        entry.created_at = DateTime::parse_from_rfc3339(&ts)
            .map_err(|e| CliError::Usage(format!("--created-at: {e}")))?
            .with_timezone(&Utc);
    }
    std::fs::write(&a.out, entry.to_json()).map_err(SakeError::from)?;
    Ok(())
}

fn read_edit(path: &Path) -> CliResult<EditEntry> {
    let text = std::fs::read_to_string(path).map_err(SakeError::from)?;
    Ok(EditEntry::from_json(&text)?)
}

fn registry(action: RegistryAction) -> CliResult {
    match action {
        RegistryAction::Add { registry, edit, out } => {
            let entry = read_edit(&edit)?;
            let mut reg = if registry.exists() {
                Registry::load(&registry)?
            } else {
                let scope_dim = entry.detector.centroid.dim();
                Registry::new(entry.map.dim(), scope_dim)?
            };
            reg.add_edit(entry)?;
            reg.save(out.as_ref().unwrap_or(&registry))?;
        }
        RegistryAction::Remove { registry, id, out } => {
            let mut reg = Registry::load(&registry)?;
            reg.remove_edit(&id)?;
            reg.save(out.as_ref().unwrap_or(&registry))?;
        }
        RegistryAction::List { registry } => {
            let reg = Registry::load(&registry)?;
            for e in reg.entries() {
                println!(
                    "{}\t{}\t{}\t{} -> {}\t{}\tepsilon={}",
                    e.id,
                    e.spec.subject,
                    e.spec.relation,
                    e.spec.old_object,
                    e.spec.new_object,
                    e.map.kind(),
                    e.detector.epsilon
                );
            }
        }
    }
    Ok(())
}

/// Single-position activation files: the policy only matters for multi-step
/// decoding, so both policies steer each record once. It is recorded per record.
fn steer(a: SteerArgs) -> CliResult {
    let reg = Registry::load(&a.registry)?;
    let input = ActivationSet::read(&a.input)?;
    let mut out = ActivationSet {
        records: Vec::with_capacity(input.records.len()),
        ..input.clone()
    };
    for rec in &input.records {
        let outcome = steer_activation(&reg, &rec.vector, rec.scope())?;
        let mut steered = rec.clone();
        steered.vector = outcome.post_map_activation;
        if steered.scope_vector.is_none() && input.scope_dim == input.dim {
            steered.scope_vector = Some(rec.vector.clone());
        }
        steered.extra.insert("steered".into(), json!(outcome.steered));
        steered
            .extra
            .insert("matched_edit_id".into(), json!(outcome.matched_edit_id));
        steered.extra.insert("pre_map_vector".into(), json!(rec.vector));
        steered.extra.insert("steering_policy".into(), json!(a.policy));
        out.push(steered)?;
    }
    out.write(&a.out)?;
    Ok(())
}

fn toy_backend(bench: &Benchmark) -> CliResult<ToyModel> {
    match bench.backend {
        BackendSpec::Toy { .. } => Ok(ToyModel::from_spec(&bench.backend)?),
        BackendSpec::External => Err(SakeError::Backend(
            "benchmark declares an external backend; only toy benchmarks can be decoded here".into(),
        )
        .into()),
    }
}

fn eval_cmd(a: EvalArgs) -> CliResult {
    let reg = Registry::load(&a.registry)?;
    let bench = Benchmark::load(&a.benchmark)?;
    let model = toy_backend(&bench)?;
    let report = evaluate(
        &model,
        &reg,
        &bench.eval_prompts()?,
        ReportConfig::from_registry(&reg, bench.seed()),
    )?;
    write_report(&report, &a.report)
}

fn write_report(report: &MetricReport, path: &Path) -> CliResult {
    std::fs::write(path, report.to_json()).map_err(SakeError::from)?;
    Ok(())
}

fn sweep_eps(a: SweepEpsilonArgs) -> CliResult {
    let grid = parse_grid(&a.grid)?;
    let bench = Benchmark::load(&a.benchmark)?;
    let model = toy_backend(&bench)?;
    let cfg = FitConfig {
        reg: a.fit.reg,
        kind: a.fit.kind,
        ..FitConfig::default()
    };
    let table = sweep_epsilon(&model, &bench, &cfg, &grid)?;
    emit_plot_data(&table, &a.plot)?;
    Ok(())
}

fn sweep_prompts(a: SweepPromptsArgs) -> CliResult {
    let bench = Benchmark::load(&a.benchmark)?;
    let model = toy_backend(&bench)?;
    let cfg = FitConfig {
        reg: a.fit.reg,
        kind: a.fit.kind,
        epsilon: a.epsilon,
        ..FitConfig::default()
    };
    let table = sweep_num_prompts(&model, &bench, &cfg, &a.sizes)?;
    emit_plot_data(&table, &a.plot)?;
    Ok(())
}

fn toy_gen(a: ToyGenArgs) -> CliResult {
    let toy = generate_benchmark(&ToyConfig {
        n_edits: a.edits,
        dim: a.dim,
        vocab_size: a.vocab,
        n_train_per_role: a.n_train,
        drift_strength: a.drift,
        seed: a.seed,
    })?;
    std::fs::create_dir_all(&a.out).map_err(SakeError::from)?;
    let manifest = toy.to_benchmark().write(&a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Registry { action } => registry(action),
        Command::Steer(a) => steer(a),
        Command::Eval(a) => eval_cmd(a),
        Command::SweepEpsilon(a) => sweep_eps(a),
        Command::SweepPrompts(a) => sweep_prompts(a),
        Command::ToyGen(a) => toy_gen(a),
    }
}

fn fail(err: CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let flat: Vec<&str> = message
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("For more information"))
                .collect();
            return fail(CliError::Usage(
                flat.join(" ").trim_start_matches("error: ").to_string(),
            ));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
