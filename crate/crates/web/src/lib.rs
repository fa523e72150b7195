//! Browser bindings. Every export returns a JSON string; the page in `www/`
//! draws it on a canvas.

use fedloc_core::analysis::{self, BoundParams};
use fedloc_core::federation::{self, AggregationStrategy, Architecture, FederationConfig};
use fedloc_core::neural::TrainConfig;
use fedloc_core::scenario::{self, Scenario, ScenarioConfig, ScenarioKind};
use fedloc_core::Point2;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Test points used by the in-browser comparison; smaller than the full
/// protocol so a run takes a few seconds.
pub const DEMO_TEST_POINTS: usize = 300;
pub const MAX_DEMO_ROUNDS: usize = 200;

#[derive(Debug, Serialize)]
pub struct ClientView {
    pub id: usize,
    pub positions: Vec<Point2>,
    pub hull: Vec<Point2>,
    pub hull_area: f64,
    pub uniform_weight: f64,
    pub hull_weight: f64,
}

#[derive(Debug, Serialize)]
pub struct ScenarioView {
    pub kind: &'static str,
    pub width: f64,
    pub height: f64,
    pub aps: Vec<Point2>,
    pub clients: Vec<ClientView>,
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub strategy: &'static str,
    pub rounds: Vec<usize>,
    pub test_mae: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct BoundRow {
    pub rounds: u64,
    pub bound: f64,
}

fn parse_kind(kind: &str) -> Result<ScenarioKind, String> {
    match kind {
        "homogeneous" => Ok(ScenarioKind::Homogeneous),
        "heterogeneous" => Ok(ScenarioKind::Heterogeneous),
        other => Err(format!("unknown scenario kind {other:?}")),
    }
}

fn demo_scenario(kind: &str, seed: u64) -> Result<(Scenario, Vec<Point2>), String> {
    let cfg = ScenarioConfig { n_test: DEMO_TEST_POINTS, ..ScenarioConfig::default() };
    let channel = cfg.channel(seed).map_err(|e| e.to_string())?;
    let sc = scenario::make_scenario(parse_kind(kind)?, &cfg, &channel, seed).map_err(|e| e.to_string())?;
    Ok((sc, channel.ap_positions))
}

pub fn scenario_view(kind: &str, seed: u64) -> Result<ScenarioView, String> {
    let (sc, aps) = demo_scenario(kind, seed)?;
    let weights = |s| federation::compute_weights(&sc.databases, s).map(|w| w.values).map_err(|e| e.to_string());
    let (uniform, hull) = (weights(AggregationStrategy::Uniform)?, weights(AggregationStrategy::ConvexHullArea)?);
    let cfg = ScenarioConfig::default();
    let clients = sc
        .databases
        .iter()
        .enumerate()
        .map(|(i, db)| ClientView {
            id: i,
            positions: db.positions(),
            hull: db.hull().vertices().to_vec(),
            hull_area: db.hull_area(),
            uniform_weight: uniform[i],
            hull_weight: hull[i],
        })
        .collect();
    Ok(ScenarioView { kind: sc.kind.name(), width: cfg.aoi.width, height: cfg.aoi.height, aps, clients })
}

/// Uniform and hull-area federated runs on the same scenario.
pub fn compare(kind: &str, seed: u64, rounds: usize, learning_rate: f64) -> Result<Vec<Curve>, String> {
    if rounds == 0 || rounds > MAX_DEMO_ROUNDS {
        return Err(format!("rounds must be in 1..={MAX_DEMO_ROUNDS}"));
    }
    let (sc, _) = demo_scenario(kind, seed)?;
    [AggregationStrategy::Uniform, AggregationStrategy::ConvexHullArea]
        .into_iter()
        .map(|strategy| {
            let cfg = FederationConfig {
                rounds,
                train: TrainConfig { learning_rate, local_steps: 40, batch_size: 32 },
                strategy,
                seed,
                architecture: Architecture::regression(&[64]),
                eval_every: 1,
            };
            let r = federation::run_federated(&sc.databases, &sc.test_set, &cfg).map_err(|e| e.to_string())?;
            Ok(Curve {
                strategy: strategy.name(),
                rounds: r.metrics.iter().map(|m| m.round).collect(),
                test_mae: r.metrics.iter().map(|m| m.test_mae.unwrap_or(f64::NAN)).collect(),
            })
        })
        .collect()
}

pub fn bound_table(rho: f64, beta: f64, eta: f64, delta: f64, omega: f64, local_steps: u64) -> Result<Vec<BoundRow>, String> {
    let p = BoundParams { rho, beta, eta, delta, omega, rounds: 1, local_steps };
    let grid = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000];
    let sweep = analysis::bound_sweep(&p, &grid).map_err(|e| e.to_string())?;
    Ok(sweep.into_iter().map(|(rounds, bound)| BoundRow { rounds, bound }).collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = scenarioView)]
pub fn scenario_view_js(kind: &str, seed: u32) -> Result<String, JsValue> {
    to_js(scenario_view(kind, seed as u64))
}

#[wasm_bindgen(js_name = compareStrategies)]
pub fn compare_js(kind: &str, seed: u32, rounds: u32, learning_rate: f64) -> Result<String, JsValue> {
    to_js(compare(kind, seed as u64, rounds as usize, learning_rate))
}

#[wasm_bindgen(js_name = boundTable)]
pub fn bound_table_js(rho: f64, beta: f64, eta: f64, delta: f64, omega: f64, local_steps: u32) -> Result<String, JsValue> {
    to_js(bound_table(rho, beta, eta, delta, omega, local_steps as u64))
}
