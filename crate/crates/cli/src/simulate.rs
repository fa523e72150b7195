use anyhow::Context;
use fedloc_core::federation::{self, AggregationStrategy, FederationConfig, FederationResult, RoundMetrics};
use fedloc_core::scenario::{self, Scenario, ScenarioKind};
use serde::Serialize;

use crate::output::OutputDir;
use crate::{resolve_config, CommonArgs, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Centralized,
    Federated(AggregationStrategy),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Centralized => "centralized",
            Method::Federated(s) => s.name(),
        }
    }
}

/// Loss growth past this factor over the first reported round counts as
/// divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

pub fn diverged(metrics: &[RoundMetrics], result: &FederationResult) -> bool {
    let losses: Vec<f64> = metrics.iter().map(|m| m.weighted_train_loss).collect();
    !result.model.is_finite()
        || losses.iter().any(|l| !l.is_finite())
        || metrics.iter().any(|m| m.test_mae.is_some_and(|v| !v.is_finite()))
        || matches!((losses.first(), losses.last()), (Some(a), Some(b)) if *b > DIVERGENCE_FACTOR * a.max(f64::MIN_POSITIVE))
}

pub fn make_scenario(cfg: &ExperimentConfig, kind: ScenarioKind) -> anyhow::Result<Scenario> {
    let channel = cfg.channel(cfg.seed)?;
    Ok(scenario::make_scenario(kind, &cfg.scenario_config(), &channel, cfg.seed)?)
}

pub fn run_method(cfg: &ExperimentConfig, sc: &Scenario, method: Method) -> anyhow::Result<FederationResult> {
    let t = &cfg.training;
    let result = match method {
        Method::Centralized => federation::run_centralized(
            &sc.databases,
            &sc.test_set,
            t.rounds * t.local_steps,
            &cfg.train_config(),
            &cfg.architecture(),
            cfg.seed,
            t.eval_every,
        )?,
        Method::Federated(strategy) => federation::run_federated(
            &sc.databases,
            &sc.test_set,
            &FederationConfig {
                rounds: t.rounds,
                train: cfg.train_config(),
                strategy,
                seed: cfg.seed,
                architecture: cfg.architecture(),
                eval_every: t.eval_every,
            },
        )?,
    };
    Ok(result)
}

pub fn methods(cfg: &ExperimentConfig) -> Vec<Method> {
    std::iter::once(Method::Centralized).chain(cfg.strategies().into_iter().map(Method::Federated)).collect()
}

/// Final-round test MAE of every method on `kind`, in [`methods`] order.
pub fn final_maes(cfg: &ExperimentConfig, kind: ScenarioKind) -> anyhow::Result<Vec<(Method, f64)>> {
    let sc = make_scenario(cfg, kind)?;
    methods(cfg)
        .into_iter()
        .map(|m| {
            let r = run_method(cfg, &sc, m)?;
            let mae = r.metrics.last().and_then(|x| x.test_mae).context("no test metrics recorded")?;
            Ok((m, mae))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct CellSummary {
    scenario: &'static str,
    method: &'static str,
    final_test_mae: Option<f64>,
    diverged: bool,
    weights: Vec<f64>,
    weight_fallback: Option<String>,
}

#[derive(Debug, Serialize)]
struct Summary {
    client_sizes: Vec<Vec<usize>>,
    hull_areas: Vec<Vec<f64>>,
    cells: Vec<CellSummary>,
}

pub fn run(common: &CommonArgs) -> anyhow::Result<()> {
    let (cfg, out_dir) = resolve_config(common)?;
    let mut out = OutputDir::create(&out_dir)?;
    out.write_manifest("simulate", &cfg)?;
    let mut summary = Summary { client_sizes: Vec::new(), hull_areas: Vec::new(), cells: Vec::new() };
    for kind in cfg.kinds() {
        let sc = make_scenario(&cfg, kind)?;
        out.write(&format!("databases/{}.csv", kind.name()), |w| Ok(scenario::write_databases_csv(&sc.databases, w)?))?;
        summary.client_sizes.push(sc.databases.iter().map(|d| d.len()).collect());
        summary.hull_areas.push(sc.databases.iter().map(|d| d.hull_area()).collect());
        for method in methods(&cfg) {
            log::info!("{} / {}: {} rounds", kind.name(), method.name(), cfg.training.rounds);
            let result = run_method(&cfg, &sc, method)?;
            let stem = format!("{}_{}", kind.name(), method.name());
            out.write(&format!("{stem}.csv"), |w| Ok(federation::write_metrics_csv(&result.metrics, method.name(), w)?))?;
            out.write(&format!("checkpoints/{stem}.flmc"), |w| Ok(result.model.write_checkpoint(w)?))?;
            let bad = diverged(&result.metrics, &result);
            if bad {
                log::warn!("{stem}: training diverged (non-finite or growing loss)");
            }
            summary.cells.push(CellSummary {
                scenario: kind.name(),
                method: method.name(),
                final_test_mae: result.metrics.last().and_then(|m| m.test_mae),
                diverged: bad,
                weights: result.weights.values.clone(),
                weight_fallback: result.weights.fallback.clone(),
            });
        }
    }
    out.write_summary("simulate", cfg.seed, &summary)?;
    println!("wrote {} files to {}", out.files().len() + 1, out_dir.display());
    Ok(())
}
