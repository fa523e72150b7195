use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fedloc_core::federation::{self, AggregationStrategy, Architecture, FederationResult, RoundMetrics};
use fedloc_core::multifloor::{self, MultiFloorTraining, ReportRow, UjiOptions};
use fedloc_core::neural::InputScaling;
use fedloc_core::scenario::{FingerprintDatabase, FingerprintRecord};
use serde::Serialize;

use crate::config::parse_kind;
use crate::output::OutputDir;
use crate::{resolve_config, CommonArgs, ExperimentConfig};

pub const TRAINING_FILE: &str = "trainingData.csv";
pub const VALIDATION_FILE: &str = "validationData.csv";

/// Dataset files are missing. Maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error(
    "UJIIndoorLoc files not found in {dir}: expected {TRAINING_FILE} and {VALIDATION_FILE}.\n\
     Download the dataset from the UCI Machine Learning Repository \
     (https://archive.ics.uci.edu/dataset/310/ujiindoorloc), unzip it, and set \
     uji.data_dir in the config to the folder holding both files."
)]
pub struct MissingDataset {
    pub dir: PathBuf,
}

pub fn dataset_present(dir: &Path) -> bool {
    dir.join(TRAINING_FILE).is_file() && dir.join(VALIDATION_FILE).is_file()
}

pub struct UjiData {
    pub train: Vec<FingerprintRecord>,
    pub test: Vec<FingerprintRecord>,
    pub origin: (f64, f64),
}

/// Training and validation records of the configured building, sharing the
/// training set's coordinate origin.
pub fn load(cfg: &ExperimentConfig) -> anyhow::Result<UjiData> {
    let dir = &cfg.uji.data_dir;
    if !dataset_present(dir) {
        return Err(MissingDataset { dir: dir.clone() }.into());
    }
    let opts = cfg.uji_options();
    let train = multifloor::load_ujiindoorloc(dir.join(TRAINING_FILE), &opts)?;
    let test = multifloor::load_ujiindoorloc(dir.join(VALIDATION_FILE), &UjiOptions { origin: Some(train.origin), ..opts })?;
    anyhow::ensure!(!train.records.is_empty(), "no training records for building {}", cfg.uji.building);
    Ok(UjiData { train: train.fingerprints(), test: test.fingerprints(), origin: train.origin })
}

pub fn partition(cfg: &ExperimentConfig, train: &[FingerprintRecord]) -> anyhow::Result<Vec<FingerprintDatabase>> {
    let kind = parse_kind("uji.partition", &cfg.uji.partition)?;
    Ok(multifloor::partition_clients(train, cfg.uji.n_clients, kind, cfg.uji.disc_fraction, cfg.seed)?)
}

/// Classifier trained on the union of client data for as many SGD steps as
/// the federated classifier takes per client.
pub fn centralized_classifier(
    cfg: &ExperimentConfig,
    dbs: &[FingerprintDatabase],
    test: &[FingerprintRecord],
) -> anyhow::Result<FederationResult> {
    let m = cfg.multifloor_config();
    let floors = multifloor::floor_labels(dbs)?;
    let arch = Architecture::classifier(&m.classifier_hidden, floors.len()).with_scaling(m.scaling);
    Ok(federation::run_centralized(
        dbs,
        test,
        m.classifier_rounds * m.classifier_train.local_steps,
        &m.classifier_train,
        &arch,
        cfg.seed,
        m.eval_every,
    )?)
}

/// Per-round regressor metrics on `floor` for `strategy`.
pub fn floor_run(
    cfg: &ExperimentConfig,
    dbs: &[FingerprintDatabase],
    test: &[FingerprintRecord],
    floor: i64,
    strategy: AggregationStrategy,
) -> anyhow::Result<FederationResult> {
    let floor_dbs = multifloor::floor_databases(dbs, floor)?;
    anyhow::ensure!(!floor_dbs.is_empty(), "no training data on floor {floor}");
    let floor_test: Vec<_> = test.iter().filter(|r| r.floor == Some(floor)).cloned().collect();
    Ok(federation::run_federated(&floor_dbs, &floor_test, &cfg.multifloor_config().regressor_federation(strategy))?)
}

fn end_to_end_rows(training: &MultiFloorTraining, test: &[FingerprintRecord]) -> anyhow::Result<Vec<ReportRow>> {
    if test.is_empty() {
        return Ok(Vec::new());
    }
    let (mut hits, mut total, mut hit_total) = (0usize, 0.0, 0.0);
    for r in test {
        let (floor, p) = multifloor::predict(&training.model, r.rss.values())?;
        let err = p.distance(&r.position);
        total += err;
        if Some(floor) == r.floor {
            hits += 1;
            hit_total += err;
        }
    }
    let n = test.len() as f64;
    let mut rows = vec![
        ReportRow::new("pipeline", None, "floor_accuracy", hits as f64 / n),
        ReportRow::new("pipeline", None, "mae", total / n),
        ReportRow::new("pipeline", None, "oracle_floor_mae", multifloor::oracle_floor_mae(&training.model, test)?),
    ];
    if hits > 0 {
        rows.push(ReportRow::new("pipeline", None, "mae_correct_floor", hit_total / hits as f64));
    }
    Ok(rows)
}

fn last_metric(metrics: &[RoundMetrics], pick: fn(&RoundMetrics) -> Option<f64>) -> Option<f64> {
    metrics.last().and_then(pick)
}

#[derive(Debug, Serialize)]
struct Summary {
    origin: (f64, f64),
    n_train: usize,
    n_test: usize,
    client_sizes: Vec<usize>,
    input_scaling: InputScaling,
    classifier_accuracy_federated: Option<f64>,
    classifier_accuracy_centralized: Option<f64>,
    floor_final_mae: BTreeMap<String, Option<f64>>,
}

pub fn run(common: &CommonArgs) -> anyhow::Result<()> {
    let (cfg, out_dir) = resolve_config(common)?;
    let data = load(&cfg)?;
    let mut out = OutputDir::create(&out_dir)?;
    out.write_manifest("uji", &cfg)?;
    let dbs = partition(&cfg, &data.train)?;
    let m = cfg.multifloor_config();

    log::info!("training floor classifier and per-floor regressors on {} clients", dbs.len());
    let training = multifloor::train_multifloor(&dbs, &data.test, &m)?;
    let central = centralized_classifier(&cfg, &dbs, &data.test)?;
    out.write("classifier_federated.csv", |w| Ok(federation::write_metrics_csv(&training.classifier_metrics, "uniform", w)?))?;
    out.write("classifier_centralized.csv", |w| Ok(federation::write_metrics_csv(&central.metrics, "centralized", w)?))?;

    let mut rows = vec![
        ReportRow::new("classifier_federated", None, "accuracy", last_metric(&training.classifier_metrics, |x| x.test_accuracy).unwrap_or(f64::NAN)),
        ReportRow::new("classifier_centralized", None, "accuracy", last_metric(&central.metrics, |x| x.test_accuracy).unwrap_or(f64::NAN)),
    ];
    let mut floor_final_mae = BTreeMap::new();
    for (floor, metrics) in &training.regressor_metrics {
        let mae = last_metric(metrics, |x| x.test_mae);
        if let Some(v) = mae {
            rows.push(ReportRow::new(&format!("regressor_{}", m.strategy.name()), Some(*floor), "mae", v));
        }
        floor_final_mae.insert(format!("{floor}_{}", m.strategy.name()), mae);
    }
    for &floor in &cfg.uji.compare_floors {
        for strategy in cfg.strategies() {
            let metrics = match training.regressor_metrics.get(&floor) {
                Some(existing) if strategy == m.strategy => existing.clone(),
                _ => floor_run(&cfg, &dbs, &data.test, floor, strategy).with_context(|| format!("floor {floor}"))?.metrics,
            };
            out.write(&format!("floor{floor}_{}.csv", strategy.name()), |w| Ok(federation::write_metrics_csv(&metrics, strategy.name(), w)?))?;
            let mae = last_metric(&metrics, |x| x.test_mae);
            if strategy != m.strategy {
                if let Some(v) = mae {
                    rows.push(ReportRow::new(&format!("regressor_{}", strategy.name()), Some(floor), "mae", v));
                }
            }
            floor_final_mae.insert(format!("{floor}_{}", strategy.name()), mae);
        }
    }
    rows.extend(end_to_end_rows(&training, &data.test)?);
    out.write("uji_report.csv", |w| Ok(multifloor::write_report_csv(&rows, w)?))?;

    let summary = Summary {
        origin: data.origin,
        n_train: data.train.len(),
        n_test: data.test.len(),
        client_sizes: dbs.iter().map(|d| d.len()).collect(),
        input_scaling: m.scaling,
        classifier_accuracy_federated: last_metric(&training.classifier_metrics, |x| x.test_accuracy),
        classifier_accuracy_centralized: last_metric(&central.metrics, |x| x.test_accuracy),
        floor_final_mae,
    };
    out.write_summary("uji", cfg.seed, &summary)?;
    for r in &rows {
        println!("{},{},{},{}", r.stage, r.floor.map_or(String::new(), |f| f.to_string()), r.metric, r.value);
    }
    Ok(())
}

/// Final test MAE on `floor` for each strategy, used by the acceptance
/// comparison.
pub fn floor_comparison(
    cfg: &ExperimentConfig,
    data: &UjiData,
    floor: i64,
    strategies: &[AggregationStrategy],
) -> anyhow::Result<Vec<f64>> {
    let dbs = partition(cfg, &data.train)?;
    strategies
        .iter()
        .map(|&s| {
            let r = floor_run(cfg, &dbs, &data.test, floor, s)?;
            r.metrics.last().and_then(|x| x.test_mae).context("no test records on floor")
        })
        .collect()
}

pub fn classifier_accuracies(cfg: &ExperimentConfig, data: &UjiData) -> anyhow::Result<(f64, f64)> {
    let dbs = partition(cfg, &data.train)?;
    let m = cfg.multifloor_config();
    let floors = multifloor::floor_labels(&dbs)?;
    let fed = federation::run_federated(&dbs, &data.test, &m.classifier_federation(floors.len()))?;
    let central = centralized_classifier(cfg, &dbs, &data.test)?;
    let acc = |r: &FederationResult| r.metrics.last().and_then(|x| x.test_accuracy).context("no classifier metrics");
    Ok((acc(&fed)?, acc(&central)?))
}
