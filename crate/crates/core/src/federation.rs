//! Federated training rounds and aggregation rules.
//!
//! Each round broadcasts the global model, lets every client run
//! `local_steps` SGD steps on its own database, and replaces the global model
//! with the weighted sum of the returned models. Weights are fixed before the
//! first round.

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::neural::{self, Head, InputScaling, MlpModel, TrainConfig};
use crate::rng::{self, Domain, Rng};
use crate::scenario::{FingerprintDatabase, FingerprintRecord};
use crate::{parallel, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregationStrategy {
    /// Every client weighs `1 / N`.
    Uniform,
    /// Weight proportional to the number of records.
    DataSize,
    /// Weight proportional to the convex-hull area of the sampling positions.
    ConvexHullArea,
}

impl AggregationStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationStrategy::Uniform => "uniform",
            AggregationStrategy::DataSize => "datasize",
            AggregationStrategy::ConvexHullArea => "hullarea",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "fedavg" | "fedloc" => Some(AggregationStrategy::Uniform),
            "datasize" | "data_size" => Some(AggregationStrategy::DataSize),
            "hullarea" | "convexhullarea" | "convex_hull_area" | "fedloc-ac" => Some(AggregationStrategy::ConvexHullArea),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub values: Vec<f64>,
    /// Set when hull-area weighting found no client with positive area and
    /// data-size weights were used instead.
    pub fallback: Option<String>,
}

fn normalized(raw: impl Iterator<Item = f64>) -> Vec<f64> {
    let raw: Vec<f64> = raw.collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

pub fn compute_weights(databases: &[FingerprintDatabase], strategy: AggregationStrategy) -> Result<AggregationWeights> {
    if databases.is_empty() {
        return Err(Error::param("databases", "at least one client required"));
    }
    let by_size = || normalized(databases.iter().map(|d| d.len() as f64));
    let (values, fallback) = match strategy {
        AggregationStrategy::Uniform => (vec![1.0 / databases.len() as f64; databases.len()], None),
        AggregationStrategy::DataSize => (by_size(), None),
        AggregationStrategy::ConvexHullArea => {
            if databases.iter().map(|d| d.hull_area()).sum::<f64>() > 0.0 {
                (normalized(databases.iter().map(|d| d.hull_area())), None)
            } else {
                let msg = "all convex hull areas are zero; using data-size weights".to_string();
                log::warn!("{msg}");
                (by_size(), Some(msg))
            }
        }
    };
    Ok(AggregationWeights { values, fallback })
}

pub fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::param("weights", "must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::param("weights", format!("must sum to 1, sum is {sum}")));
    }
    Ok(())
}

/// Parameter-wise weighted sum of structurally identical models.
///
/// Computed as `w_a + sum_i p_i (w_i - w_a)` around the heaviest model `a`,
/// which equals `sum_i p_i w_i` for normalized weights and returns `w_a`
/// bit-for-bit when all other models coincide with it or carry zero weight.
pub fn aggregate(models: &[MlpModel], weights: &[f64]) -> Result<MlpModel> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::param("models", "need one weight per model"));
    }
    check_weights(weights)?;
    if models.iter().any(|m| !m.same_shape(&models[0])) {
        return Err(Error::ShapeMismatch);
    }
    let anchor = (0..weights.len()).fold(0, |best, i| if weights[i] > weights[best] { i } else { best });
    let mut out = models[anchor].clone();
    let mut delta = vec![0.0; out.params().len()];
    for (i, (m, &p)) in models.iter().zip(weights).enumerate() {
        if i == anchor || p == 0.0 {
            continue;
        }
        delta
            .iter_mut()
            .zip(m.params().iter().zip(models[anchor].params()))
            .for_each(|(d, (wi, wa))| *d += p * (wi - wa));
    }
    out.params_mut().iter_mut().zip(delta).for_each(|(w, d)| {
        if d != 0.0 {
            *w += d;
        }
    });
    Ok(out)
}

/// Layer layout of the trained network, excluding the input width, which is
/// taken from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub head: Head,
    pub outputs: usize,
    #[serde(default)]
    pub scaling: InputScaling,
}

impl Architecture {
    pub fn regression(hidden: &[usize]) -> Self {
        Architecture { hidden: hidden.to_vec(), head: Head::Regression, outputs: 2, scaling: InputScaling::IDENTITY }
    }

    pub fn classifier(hidden: &[usize], classes: usize) -> Self {
        Architecture { hidden: hidden.to_vec(), head: Head::Classification, outputs: classes, scaling: InputScaling::IDENTITY }
    }

    pub fn with_scaling(mut self, scaling: InputScaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn sizes(&self, inputs: usize) -> Vec<usize> {
        std::iter::once(inputs).chain(self.hidden.iter().copied()).chain([self.outputs]).collect()
    }

    /// The seeded starting model shared by every run with the same seed.
    pub fn initial_model(&self, inputs: usize, seed: u64) -> Result<MlpModel> {
        let mut rng = rng::stream(seed, Domain::ModelInit, 0);
        Ok(MlpModel::init(&self.sizes(inputs), self.head, &mut rng)?.with_scaling(self.scaling))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub train: TrainConfig,
    pub strategy: AggregationStrategy,
    pub seed: u64,
    pub architecture: Architecture,
    /// Test metrics are computed every `eval_every` rounds and after the
    /// last one.
    pub eval_every: usize,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::param("rounds", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every", "must be at least 1"));
        }
        self.train.validate()
    }

    fn evaluates(&self, round: usize) -> bool {
        round.is_multiple_of(self.eval_every) || round == self.rounds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    /// Mean Euclidean test error, regression models only.
    pub test_mae: Option<f64>,
    /// Fraction of correctly classified test records, classifiers only.
    pub test_accuracy: Option<f64>,
    /// `sum_i p_i L_i(w)` at the aggregated model.
    pub weighted_train_loss: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationResult {
    pub model: MlpModel,
    pub metrics: Vec<RoundMetrics>,
    pub weights: AggregationWeights,
}

/// Stream used by `client` during `round` (both 0-based).
pub fn client_stream(seed: u64, round: usize, client: usize) -> Rng {
    rng::stream(seed, Domain::LocalTraining, rng::round_client_index(round, client))
}

fn test_scores(model: &MlpModel, test_set: &[FingerprintRecord]) -> Result<(Option<f64>, Option<f64>)> {
    if test_set.is_empty() {
        return Ok((None, None));
    }
    Ok(match model.head() {
        Head::Regression => (Some(analysis::evaluate_mae(model, test_set)?), None),
        Head::Classification => (None, Some(analysis::evaluate_accuracy(model, test_set)?)),
    })
}

fn weighted_loss(model: &MlpModel, databases: &[FingerprintDatabase], weights: &[f64]) -> Result<f64> {
    let losses = parallel::map(databases, |_, db| neural::loss(model, db.records()));
    losses.into_iter().zip(weights).try_fold(0.0, |acc, (l, p)| Ok(acc + p * l?))
}

fn check_inputs(databases: &[FingerprintDatabase]) -> Result<usize> {
    let first = databases.first().ok_or_else(|| Error::param("databases", "at least one client required"))?;
    let n_aps = first.n_aps();
    for db in databases {
        if let Some(r) = db.records().iter().find(|r| r.rss.len() != n_aps) {
            return Err(Error::DimensionMismatch { expected: n_aps, actual: r.rss.len() });
        }
    }
    Ok(n_aps)
}

/// The round loop. Hull areas and weights are computed once up front, then
/// every round trains all clients from the same snapshot (concurrently when
/// the `parallel` feature is on) and aggregates after all have finished.
pub fn run_federated(
    databases: &[FingerprintDatabase],
    test_set: &[FingerprintRecord],
    cfg: &FederationConfig,
) -> Result<FederationResult> {
    cfg.validate()?;
    let n_aps = check_inputs(databases)?;
    let weights = compute_weights(databases, cfg.strategy)?;
    let mut global = cfg.architecture.initial_model(n_aps, cfg.seed)?;
    let mut metrics = Vec::new();
    for round in 0..cfg.rounds {
        let snapshot = &global;
        let locals = parallel::map(databases, |client, db| {
            neural::train_local(snapshot, db, &cfg.train, &mut client_stream(cfg.seed, round, client))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        global = aggregate(&locals, &weights.values)?;

        let done = round + 1;
        if cfg.evaluates(done) {
            let (test_mae, test_accuracy) = test_scores(&global, test_set)?;
            metrics.push(RoundMetrics {
                round: done,
                test_mae,
                test_accuracy,
                weighted_train_loss: weighted_loss(&global, databases, &weights.values)?,
                weights: weights.values.clone(),
            });
        }
    }
    Ok(FederationResult { model: global, metrics, weights })
}

/// Trains one model on the union of all client records for `total_steps`
/// SGD steps. Steps are taken in chunks of `train.local_steps`, one chunk per
/// reported round, so curves line up with [`run_federated`].
pub fn run_centralized(
    databases: &[FingerprintDatabase],
    test_set: &[FingerprintRecord],
    total_steps: usize,
    train: &TrainConfig,
    architecture: &Architecture,
    seed: u64,
    eval_every: usize,
) -> Result<FederationResult> {
    train.validate()?;
    if total_steps == 0 || eval_every == 0 {
        return Err(Error::param("total_steps", "total_steps and eval_every must be positive"));
    }
    let n_aps = check_inputs(databases)?;
    let union = FingerprintDatabase::new(0, databases.iter().flat_map(|d| d.records().iter().cloned()).collect())?;
    let mut model = architecture.initial_model(n_aps, seed)?;
    let chunks = total_steps.div_ceil(train.local_steps);
    let mut metrics = Vec::new();
    for chunk in 0..chunks {
        let steps = train.local_steps.min(total_steps - chunk * train.local_steps);
        let cfg = TrainConfig { local_steps: steps, ..*train };
        model = neural::train_local(&model, &union, &cfg, &mut client_stream(seed, chunk, 0))?;
        let done = chunk + 1;
        if done % eval_every == 0 || done == chunks {
            let (test_mae, test_accuracy) = test_scores(&model, test_set)?;
            metrics.push(RoundMetrics {
                round: done,
                test_mae,
                test_accuracy,
                weighted_train_loss: neural::loss(&model, union.records())?,
                weights: vec![1.0],
            });
        }
    }
    Ok(FederationResult { model, metrics, weights: AggregationWeights { values: vec![1.0], fallback: None } })
}

/// Writes round metrics as CSV: `round,strategy,test_mae,weighted_train_loss,p_0..p_{N-1}`.
/// Classifier runs use a `test_accuracy` column in place of `test_mae`.
pub fn write_metrics_csv<W: std::io::Write>(metrics: &[RoundMetrics], strategy: &str, out: W) -> Result<()> {
    let n = metrics.first().map_or(0, |m| m.weights.len());
    let accuracy = metrics.first().is_some_and(|m| m.test_accuracy.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "round".to_string(),
        "strategy".into(),
        if accuracy { "test_accuracy" } else { "test_mae" }.into(),
        "weighted_train_loss".into(),
    ];
    header.extend((0..n).map(|i| format!("p_{i}")));
    w.write_record(&header)?;
    for m in metrics {
        let score = if accuracy { m.test_accuracy } else { m.test_mae };
        let mut row = vec![
            m.round.to_string(),
            strategy.to_string(),
            score.map_or(String::new(), |v| v.to_string()),
            m.weighted_train_loss.to_string(),
        ];
        row.extend(m.weights.iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RssVector;
    use crate::geometry::{self, Point2};
    use crate::scenario::{make_scenario, ScenarioConfig, ScenarioKind};

    fn db_with_positions(id: usize, pts: &[(f64, f64)]) -> FingerprintDatabase {
        let recs = pts
            .iter()
            .map(|&(x, y)| FingerprintRecord::new(RssVector(vec![-40.0 - x, -40.0 - y]), Point2::new(x, y)))
            .collect();
        FingerprintDatabase::new(id, recs).unwrap()
    }

    fn square(id: usize, side: f64) -> FingerprintDatabase {
        db_with_positions(id, &[(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)])
    }

    #[test]
    fn hull_weights_ratio() {
        let dbs = [square(0, 10.0), square(1, 300f64.sqrt())];
        let w = compute_weights(&dbs, AggregationStrategy::ConvexHullArea).unwrap();
        assert!((w.values[0] - 0.25).abs() < 1e-12 && (w.values[1] - 0.75).abs() < 1e-12);
        assert!(w.fallback.is_none());
    }

    #[test]
    fn equal_areas_give_uniform() {
        let dbs = [square(0, 4.0), square(1, 4.0), square(2, 4.0)];
        let w = compute_weights(&dbs, AggregationStrategy::ConvexHullArea).unwrap();
        let u = compute_weights(&dbs, AggregationStrategy::Uniform).unwrap();
        assert_eq!(w.values, vec![1.0 / 3.0; 3]);
        assert_eq!(w.values, u.values);
    }

    #[test]
    fn zero_areas_fall_back_to_data_size() {
        let dbs = [db_with_positions(0, &[(1.0, 1.0)]), db_with_positions(1, &[(0.0, 0.0), (2.0, 2.0), (3.0, 3.0)])];
        let w = compute_weights(&dbs, AggregationStrategy::ConvexHullArea).unwrap();
        assert_eq!(w.values, vec![0.25, 0.75]);
        assert!(w.fallback.is_some());
        let d = compute_weights(&dbs, AggregationStrategy::DataSize).unwrap();
        assert_eq!(d.values, w.values);
        assert!(compute_weights(&[], AggregationStrategy::Uniform).is_err());
    }

    #[test]
    fn straggler_weights_below_uniform() {
        let cfg = ScenarioConfig::default();
        let params = cfg.channel(7).unwrap();
        let s = make_scenario(ScenarioKind::Heterogeneous, &cfg, &params, 7).unwrap();
        let w = compute_weights(&s.databases, AggregationStrategy::ConvexHullArea).unwrap();
        let areas: Vec<f64> = s.databases.iter().map(|d| geometry::convex_hull(&d.positions()).unwrap().area()).collect();
        let total: f64 = areas.iter().sum();
        for (w, a) in w.values.iter().zip(&areas) {
            assert!((w - a / total).abs() < 1e-12);
        }
        for i in 4..8 {
            assert!(w.values[i] < 1.0 / 8.0, "straggler {i} weight {}", w.values[i]);
        }
        assert!((w.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_follow_permutation_and_scale() {
        let dbs = vec![square(0, 3.0), db_with_positions(1, &[(0.0, 0.0), (5.0, 0.0), (0.0, 2.0)]), square(2, 1.0)];
        let w = compute_weights(&dbs, AggregationStrategy::ConvexHullArea).unwrap().values;
        let rev: Vec<_> = dbs.iter().rev().cloned().collect();
        let wr = compute_weights(&rev, AggregationStrategy::ConvexHullArea).unwrap().values;
        for i in 0..3 {
            assert!((w[i] - wr[2 - i]).abs() < 1e-15);
        }
        let scaled: Vec<_> = dbs
            .iter()
            .map(|d| {
                let pts: Vec<_> = d.positions().iter().map(|p| (p.x * 7.5, p.y * 7.5)).collect();
                db_with_positions(d.client_id(), &pts)
            })
            .collect();
        let ws = compute_weights(&scaled, AggregationStrategy::ConvexHullArea).unwrap().values;
        for i in 0..3 {
            assert!((w[i] - ws[i]).abs() < 1e-12);
        }
    }

    fn models(n: usize) -> Vec<MlpModel> {
        (0..n)
            .map(|i| Architecture::regression(&[5]).initial_model(3, i as u64).unwrap())
            .collect()
    }

    #[test]
    fn identical_models_aggregate_exactly() {
        let m = models(1).remove(0);
        let out = aggregate(&[m.clone(), m.clone(), m.clone()], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn basis_weights_select_model() {
        let ms = models(3);
        for i in 0..3 {
            let mut e = vec![0.0; 3];
            e[i] = 1.0;
            assert_eq!(aggregate(&ms, &e).unwrap(), ms[i]);
        }
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let ms = models(3);
        let p = [0.2, 0.3, 0.5];
        let out = aggregate(&ms, &p).unwrap();
        for k in 0..out.params().len() {
            let mut expect = 0.0;
            for i in 0..3 {
                expect += p[i] * ms[i].params()[k];
            }
            assert!((out.params()[k] - expect).abs() <= 1e-15 * (1.0 + expect.abs()) * 4.0);
        }
        let mean = aggregate(&ms[..2], &[0.5, 0.5]).unwrap();
        for k in 0..mean.params().len() {
            let expect = (ms[0].params()[k] + ms[1].params()[k]) / 2.0;
            assert!((mean.params()[k] - expect).abs() <= 1e-15 * (1.0 + expect.abs()) * 4.0);
        }
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        let ms = models(2);
        let other = Architecture::regression(&[4]).initial_model(3, 0).unwrap();
        assert!(matches!(aggregate(&[ms[0].clone(), other], &[0.5, 0.5]), Err(Error::ShapeMismatch)));
        assert!(aggregate(&ms, &[0.7, 0.7]).is_err());
        assert!(aggregate(&ms, &[1.0]).is_err());
    }

    fn small_cfg(strategy: AggregationStrategy, rounds: usize) -> FederationConfig {
        FederationConfig {
            rounds,
            train: TrainConfig { learning_rate: 1e-5, local_steps: 5, batch_size: 16 },
            strategy,
            seed: 11,
            architecture: Architecture::regression(&[16]),
            eval_every: 1,
        }
    }

    fn small_scenario() -> crate::scenario::Scenario {
        let cfg = ScenarioConfig { n_clients: 4, n_samples: 40, n_test: 50, ..ScenarioConfig::default() };
        let params = cfg.channel(2).unwrap();
        make_scenario(ScenarioKind::Heterogeneous, &cfg, &params, 2).unwrap()
    }

    #[test]
    fn single_client_single_round_is_local_training() {
        let s = small_scenario();
        let db = &s.databases[..1];
        for strategy in [AggregationStrategy::Uniform, AggregationStrategy::ConvexHullArea, AggregationStrategy::DataSize] {
            let cfg = small_cfg(strategy, 1);
            let fed = run_federated(db, &s.test_set, &cfg).unwrap();
            let init = cfg.architecture.initial_model(4, cfg.seed).unwrap();
            let local = neural::train_local(&init, &db[0], &cfg.train, &mut client_stream(cfg.seed, 0, 0)).unwrap();
            assert_eq!(fed.model, local);
            let central = run_centralized(db, &s.test_set, cfg.train.local_steps, &cfg.train, &cfg.architecture, cfg.seed, 1).unwrap();
            assert_eq!(central.model, local);
        }
    }

    #[test]
    fn identical_clients_strategy_symmetry() {
        let s = small_scenario();
        let twins = vec![s.databases[0].clone(), FingerprintDatabase::new(1, s.databases[0].records().to_vec()).unwrap()];
        let a = run_federated(&twins, &s.test_set, &small_cfg(AggregationStrategy::Uniform, 4)).unwrap();
        let b = run_federated(&twins, &s.test_set, &small_cfg(AggregationStrategy::ConvexHullArea, 4)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn uniform_round_loop_is_fedavg() {
        let s = small_scenario();
        let cfg = small_cfg(AggregationStrategy::Uniform, 3);
        let fed = run_federated(&s.databases, &s.test_set, &cfg).unwrap();

        let n = s.databases.len();
        let mut w = cfg.architecture.initial_model(4, cfg.seed).unwrap();
        for round in 0..cfg.rounds {
            let locals: Vec<_> = (0..n)
                .map(|c| neural::train_local(&w, &s.databases[c], &cfg.train, &mut client_stream(cfg.seed, round, c)).unwrap())
                .collect();
            w = aggregate(&locals, &vec![1.0 / n as f64; n]).unwrap();
        }
        assert_eq!(fed.model, w);
        assert_eq!(fed.metrics.len(), 3);
        for m in &fed.metrics {
            assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(m.test_mae.unwrap() > 0.0);
        }
    }

    #[test]
    fn centralized_merges_all_records() {
        let cfg = ScenarioConfig::default();
        let params = cfg.channel(1).unwrap();
        let s = make_scenario(ScenarioKind::Homogeneous, &cfg, &params, 1).unwrap();
        let total: usize = s.databases.iter().map(|d| d.len()).sum();
        assert_eq!(total, 1600);
        let train = TrainConfig { learning_rate: 1e-5, local_steps: 10, batch_size: 32 };
        let arch = Architecture::regression(&[8]);
        let a = run_centralized(&s.databases, &s.test_set[..100], 25, &train, &arch, 3, 1).unwrap();
        let b = run_centralized(&s.databases, &s.test_set[..100], 25, &train, &arch, 3, 1).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics.len(), 3);
    }

    #[test]
    fn eval_stride() {
        let s = small_scenario();
        let cfg = FederationConfig { eval_every: 2, ..small_cfg(AggregationStrategy::Uniform, 5) };
        let r = run_federated(&s.databases, &s.test_set, &cfg).unwrap();
        assert_eq!(r.metrics.iter().map(|m| m.round).collect::<Vec<_>>(), vec![2, 4, 5]);
    }

    #[test]
    fn metrics_csv_schema() {
        let s = small_scenario();
        let r = run_federated(&s.databases, &s.test_set, &small_cfg(AggregationStrategy::ConvexHullArea, 2)).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&r.metrics, "hullarea", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "round,strategy,test_mae,weighted_train_loss,p_0,p_1,p_2,p_3");
        assert!(lines.next().unwrap().starts_with("1,hullarea,"));
    }
}
