// SPDX-License-Identifier: MIT OR Apache-2.0

//! Browser bindings. Every export takes and returns JSON strings; the
//! `*_json` functions are the plain-Rust versions used by the exports and tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use sake_core::eval::{sweep_epsilon, sweep_num_prompts, FitConfig, Metrics, SweepPoint};
use sake_core::toy::{generate_benchmark, ToyConfig};
use sake_core::{
    apply_map, fit_ot_map, fit_uniform_shift, psd_sqrt, ActivationVector, GaussianSummary, MapKind, SymMatrix,
};

type Res<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Deserialize)]
struct Gaussian2 {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

#[derive(Deserialize)]
struct MapRequest {
    source: Gaussian2,
    target: Gaussian2,
    #[serde(default = "default_points")]
    points: usize,
    #[serde(default)]
    seed: u64,
}

fn default_points() -> usize {
    300
}

#[derive(Serialize)]
struct MapView {
    a: [[f64; 2]; 2],
    b: [f64; 2],
}

#[derive(Serialize)]
struct MapResponse {
    ot: MapView,
    uniform: MapView,
    source: Vec<[f64; 2]>,
    target: Vec<[f64; 2]>,
    ot_mapped: Vec<[f64; 2]>,
    uniform_mapped: Vec<[f64; 2]>,
}

fn summary(g: &Gaussian2) -> Res<GaussianSummary> {
    let cov = SymMatrix::from_rows(&[g.cov[0].to_vec(), g.cov[1].to_vec()]).map_err(err)?;
    let mean = ActivationVector::new(g.mean.to_vec()).map_err(err)?;
    GaussianSummary::from_moments(mean, cov).map_err(err)
}

fn draw(g: &GaussianSummary, n: usize, rng: &mut ChaCha8Rng) -> Res<Vec<ActivationVector>> {
    let root = psd_sqrt(&g.cov).map_err(err)?;
    (0..n)
        .map(|_| {
            let z = ActivationVector::new(vec![StandardNormal.sample(rng), StandardNormal.sample(rng)]).map_err(err)?;
            let x = root.mul_vec(&z).map_err(err)?;
            ActivationVector::new(vec![x[0] + g.mean[0], x[1] + g.mean[1]]).map_err(err)
        })
        .collect()
}

fn xy(v: &ActivationVector) -> [f64; 2] {
    [v[0], v[1]]
}

fn view(map: &sake_core::LinearMap) -> MapView {
    let a = map.matrix();
    MapView {
        a: [[a.get(0, 0), a.get(0, 1)], [a.get(1, 0), a.get(1, 1)]],
        b: xy(map.offset()),
    }
}

/// Fits both map kinds between two 2-D Gaussians and pushes a sample cloud through each.
pub fn fit_map_json(request: &str) -> Res<String> {
    let req: MapRequest = serde_json::from_str(request).map_err(err)?;
    if req.points > 5000 {
        return Err("at most 5000 points".into());
    }
    let (s, t) = (summary(&req.source)?, summary(&req.target)?);
    let ot = fit_ot_map(&s, &t).map_err(err)?;
    let uniform = fit_uniform_shift(&s, &t).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let src = draw(&s, req.points, &mut rng)?;
    let tgt = draw(&t, req.points, &mut rng)?;
    let push = |m: &sake_core::LinearMap| -> Res<Vec<[f64; 2]>> {
        src.iter()
            .map(|h| apply_map(m, h).map(|v| xy(&v)).map_err(err))
            .collect()
    };
    let resp = MapResponse {
        ot: view(&ot),
        uniform: view(&uniform),
        ot_mapped: push(&ot)?,
        uniform_mapped: push(&uniform)?,
        source: src.iter().map(xy).collect(),
        target: tgt.iter().map(xy).collect(),
    };
    serde_json::to_string(&resp).map_err(err)
}

#[derive(Deserialize)]
struct SweepRequest {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_edits")]
    edits: usize,
    #[serde(default = "default_drift")]
    drift: f64,
    #[serde(default)]
    kind: Option<MapKind>,
    #[serde(default)]
    grid: Vec<f64>,
    #[serde(default)]
    sizes: Vec<usize>,
}

fn default_edits() -> usize {
    5
}

fn default_drift() -> f64 {
    0.5
}

#[derive(Serialize)]
struct SweepRow {
    x: f64,
    metrics: Metrics,
    scope_matched: usize,
}

#[derive(Serialize)]
struct SweepResponse {
    ot: Vec<SweepRow>,
    uniform: Vec<SweepRow>,
}

fn rows(table: Vec<SweepPoint>) -> Vec<SweepRow> {
    table
        .into_iter()
        .map(|p| SweepRow {
            x: p.value,
            scope_matched: p.report.scope_matched(),
            metrics: p.report.metrics,
        })
        .collect()
}

fn run_sweep(request: &str, by_epsilon: bool) -> Res<String> {
    let req: SweepRequest = serde_json::from_str(request).map_err(err)?;
    if req.edits == 0 || req.edits > 20 {
        return Err("edits must be between 1 and 20".into());
    }
    let toy = generate_benchmark(&ToyConfig {
        n_edits: req.edits,
        drift_strength: req.drift,
        seed: req.seed,
        ..ToyConfig::default()
    })
    .map_err(err)?;
    let bench = toy.to_benchmark();
    let kinds = match req.kind {
        Some(k) => vec![k],
        None => vec![MapKind::OptimalTransport, MapKind::UniformShift],
    };
    let mut resp = SweepResponse {
        ot: Vec::new(),
        uniform: Vec::new(),
    };
    for kind in kinds {
        let cfg = FitConfig {
            kind,
            ..FitConfig::default()
        };
        let table = if by_epsilon {
            sweep_epsilon(&toy.model, &bench, &cfg, &req.grid)
        } else {
            sweep_num_prompts(&toy.model, &bench, &cfg, &req.sizes)
        }
        .map_err(err)?;
        match kind {
            MapKind::UniformShift => resp.uniform = rows(table),
            _ => resp.ot = rows(table),
        }
    }
    serde_json::to_string(&resp).map_err(err)
}

/// Scores a small toy benchmark across scope thresholds, for both map kinds unless `kind` is set.
pub fn epsilon_sweep_json(request: &str) -> Res<String> {
    run_sweep(request, true)
}

/// Scores a small toy benchmark across training-set sizes.
pub fn prompt_sweep_json(request: &str) -> Res<String> {
    run_sweep(request, false)
}

#[wasm_bindgen(js_name = fitMap)]
pub fn fit_map(request: &str) -> Result<String, JsError> {
    fit_map_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = epsilonSweep)]
pub fn epsilon_sweep(request: &str) -> Result<String, JsError> {
    epsilon_sweep_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = promptSweep)]
pub fn prompt_sweep(request: &str) -> Result<String, JsError> {
    prompt_sweep_json(request).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn map_fit_matches_commuting_case() {
        let out = fit_map_json(
            r#"{"source":{"mean":[0,0],"cov":[[1,0],[0,4]]},
                "target":{"mean":[1,-1],"cov":[[9,0],[0,1]]},"points":50,"seed":1}"#,
        )
        .unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["ot"]["a"][0][0], 3.0);
        assert_eq!(v["ot"]["a"][1][1], 0.5);
        assert_eq!(v["uniform"]["a"][0][0], 1.0);
        assert_eq!(v["uniform"]["b"], serde_json::json!([1.0, -1.0]));
        assert_eq!(v["ot_mapped"].as_array().unwrap().len(), 50);
    }

    #[test]
    fn bad_requests_are_errors() {
        assert!(fit_map_json("{}").is_err());
        let singular = r#"{"source":{"mean":[0,0],"cov":[[0,0],[0,0]]},"target":{"mean":[0,0],"cov":[[1,0],[0,1]]}}"#;
        assert!(fit_map_json(singular).is_err());
        assert!(epsilon_sweep_json(r#"{"edits":0,"grid":[1]}"#).is_err());
        assert!(prompt_sweep_json(r#"{"edits":2,"sizes":[1]}"#).is_err());
    }

    #[test]
    fn sweeps_return_both_kinds() {
        let out = epsilon_sweep_json(r#"{"edits":2,"grid":[0.5,5,50]}"#).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["ot"].as_array().unwrap().len(), 3);
        assert_eq!(v["uniform"].as_array().unwrap().len(), 3);
        assert_eq!(v["ot"][0]["scope_matched"], 0);

        let out = prompt_sweep_json(r#"{"edits":2,"sizes":[10,100],"kind":"ot"}"#).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["ot"].as_array().unwrap().len(), 2);
        assert!(v["uniform"].as_array().unwrap().is_empty());
    }
}
