//! Evaluation metrics, coverage experiments and the federated convergence
//! bound.

use serde::{Deserialize, Serialize};

use crate::channel::{self, AoiSpec, ChannelParams};
use crate::federation::Architecture;
use crate::geometry::{self, Point2};
use crate::neural::{self, Head, MlpModel, TrainConfig};
use crate::rng::{self, Domain, Rng};
use crate::scenario::{self, FingerprintDatabase, FingerprintRecord, ScenarioConfig};
use crate::{parallel, Error, Result};

/// Mean Euclidean position error over `test_set`.
pub fn evaluate_mae(model: &MlpModel, test_set: &[FingerprintRecord]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total = test_set.iter().try_fold(0.0, |acc, r| {
        let p = neural::predict_position(model, r.rss.values())?;
        Ok::<_, Error>(acc + p.distance(&r.position))
    })?;
    Ok(total / test_set.len() as f64)
}

/// Argmax class, ties broken toward the lower index.
pub fn argmax(scores: &[f64]) -> usize {
    (0..scores.len()).fold(0, |best, i| if scores[i] > scores[best] { i } else { best })
}

/// Fraction of records whose floor label equals the classifier's argmax.
pub fn evaluate_accuracy(model: &MlpModel, test_set: &[FingerprintRecord]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if model.head() != Head::Classification {
        return Err(Error::param("model", "accuracy needs a classifier"));
    }
    let mut hits = 0usize;
    for (i, r) in test_set.iter().enumerate() {
        let floor = r.floor.ok_or(Error::MissingFloorLabel { index: i })?;
        if argmax(&neural::forward(model, r.rss.values())?) as i64 == floor {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo mean, over uniform points of the AoI, of the distance to the
/// nearest sampling position.
pub fn coverage_gap_estimate(positions: &[Point2], aoi: &AoiSpec, n_mc: usize, rng: &mut Rng) -> Result<Estimate> {
    if n_mc == 0 {
        return Err(Error::param("n_mc", "must be at least 1"));
    }
    if positions.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_mc {
        let d = geometry::min_distance(aoi.sample_uniform(rng), positions)?;
        sum += d;
        sum_sq += d * d;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = if n_mc > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(Estimate { mean, std_error: (var / n).sqrt() })
}

pub fn coverage_gap(db: &FingerprintDatabase, aoi: &AoiSpec, n_mc: usize, rng: &mut Rng) -> Result<f64> {
    Ok(coverage_gap_estimate(&db.positions(), aoi, n_mc, rng)?.mean)
}

/// Correlations weaker than this in magnitude are reported as no relation.
pub const VERDICT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Positive,
    Negative,
    NoRelation,
    InsufficientBins,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Positive => "positive",
            Verdict::Negative => "negative",
            Verdict::NoRelation => "no relation",
            Verdict::InsufficientBins => "insufficient bins",
        }
    }
}

/// Binned summary of `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n_points: usize,
    /// `n_bins + 1` equal-width edges spanning the observed x range.
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<usize>,
    /// Mean y per bin, `None` for empty bins.
    pub bin_means: Vec<Option<f64>>,
    /// Pearson correlation between bin centers and bin means over the
    /// non-empty bins.
    pub correlation: Option<f64>,
    /// Pearson correlation of the raw pairs.
    pub raw_correlation: Option<f64>,
    pub verdict: Verdict,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn correlation_report(pairs: &[(f64, f64)], n_bins: usize) -> CorrelationReport {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let raw_correlation = pearson(&xs, &ys);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_bins = n_bins.max(1);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let bin_edges: Vec<f64> = if pairs.is_empty() {
        Vec::new()
    } else {
        (0..=n_bins).map(|i| if i == n_bins { hi.max(lo + width) } else { lo + i as f64 * width }).collect()
    };
    let mut sums = vec![0.0; n_bins];
    let mut bin_counts = vec![0usize; n_bins];
    for &(x, y) in pairs {
        let b = (((x - lo) / width) as usize).min(n_bins - 1);
        sums[b] += y;
        bin_counts[b] += 1;
    }
    let bin_means: Vec<Option<f64>> =
        sums.iter().zip(&bin_counts).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
    let (centers, means): (Vec<f64>, Vec<f64>) = bin_means
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|m| (lo + (i as f64 + 0.5) * width, m)))
        .unzip();
    let correlation = pearson(&centers, &means);
    let verdict = if centers.len() < 2 {
        Verdict::InsufficientBins
    } else {
        match correlation {
            Some(r) if r >= VERDICT_THRESHOLD => Verdict::Positive,
            Some(r) if r <= -VERDICT_THRESHOLD => Verdict::Negative,
            _ => Verdict::NoRelation,
        }
    };
    CorrelationReport { n_points: pairs.len(), bin_edges, bin_counts, bin_means, correlation, raw_correlation, verdict }
}

/// Writes `bin,lo,hi,count,mean` rows followed by summary rows.
pub fn write_report_csv<W: std::io::Write>(report: &CorrelationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin", "lo", "hi", "count", "mean"])?;
    for (i, (count, mean)) in report.bin_counts.iter().zip(&report.bin_means).enumerate() {
        w.write_record([
            i.to_string(),
            report.bin_edges[i].to_string(),
            report.bin_edges[i + 1].to_string(),
            count.to_string(),
            mean.map_or(String::new(), |m| m.to_string()),
        ])?;
    }
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    w.write_record(["n_points", "", "", &report.n_points.to_string(), ""])?;
    w.write_record(["correlation", "", "", "", &opt(report.correlation)])?;
    w.write_record(["raw_correlation", "", "", "", &opt(report.raw_correlation)])?;
    w.write_record(["verdict", "", "", "", report.verdict.name()])?;
    w.flush()?;
    Ok(())
}

/// Prediction error against distance to the nearest training position for
/// `n_users` uniformly placed users.
pub fn min_distance_pairs(
    model: &MlpModel,
    training_positions: &[Point2],
    channel: &ChannelParams,
    aoi: &AoiSpec,
    n_users: usize,
    n_avg: usize,
    rng: &mut Rng,
) -> Result<Vec<(f64, f64)>> {
    (0..n_users)
        .map(|_| {
            let user = aoi.sample_uniform(rng);
            let rss = channel::measure(user, channel, n_avg, rng)?;
            let err = neural::predict_position(model, rss.values())?.distance(&user);
            Ok((geometry::min_distance(user, training_positions)?, err))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn verify_min_distance_relation(
    model: &MlpModel,
    training_positions: &[Point2],
    channel: &ChannelParams,
    aoi: &AoiSpec,
    n_users: usize,
    n_avg: usize,
    n_bins: usize,
    rng: &mut Rng,
) -> Result<CorrelationReport> {
    let pairs = min_distance_pairs(model, training_positions, channel, aoi, n_users, n_avg, rng)?;
    Ok(correlation_report(&pairs, n_bins))
}

/// Settings for the hull-area experiment: random databases are drawn with
/// velocities in `velocity_range`, each trains a fresh model with
/// `short_train`, and its test MAE is paired with its hull area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullAreaExperiment {
    pub n_dbs: usize,
    pub velocity_range: (f64, f64),
    pub short_train: TrainConfig,
    pub architecture: Architecture,
    pub n_bins: usize,
}

/// `(hull area, test MAE)` for each random database, in database order.
pub fn hull_area_pairs(
    exp: &HullAreaExperiment,
    scenario: &ScenarioConfig,
    channel: &ChannelParams,
    test_set: &[FingerprintRecord],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if exp.n_dbs < 2 {
        return Err(Error::param("n_dbs", "need at least two databases"));
    }
    let ids: Vec<usize> = (0..exp.n_dbs).collect();
    parallel::map(&ids, |_, &i| {
        let mut rng = rng::stream(seed, Domain::RandomDatabase, i as u64);
        let db = scenario::random_database(i, scenario, exp.velocity_range, channel, &mut rng)?;
        let init = exp.architecture.initial_model(db.n_aps(), seed)?;
        let model = neural::train_local(&init, &db, &exp.short_train, &mut rng)?;
        Ok((db.hull_area(), evaluate_mae(&model, test_set)?))
    })
    .into_iter()
    .collect()
}

pub fn verify_hull_area_relation(
    exp: &HullAreaExperiment,
    scenario: &ScenarioConfig,
    channel: &ChannelParams,
    test_set: &[FingerprintRecord],
    seed: u64,
) -> Result<CorrelationReport> {
    if exp.n_dbs < 10 {
        return Err(Error::param("n_dbs", "need at least 10 databases"));
    }
    let pairs = hull_area_pairs(exp, scenario, channel, test_set, seed)?;
    Ok(correlation_report(&pairs, exp.n_bins))
}

/// `(delta / beta) ((eta beta + 1)^x - 1) - eta delta x`.
///
/// Evaluated through the binomial expansion
/// `(delta / beta) * sum_{k >= 2} C(x, k) (eta beta)^k`, which is exactly zero
/// for `x <= 1` and free of cancellation for small `eta beta`.
pub fn h_function(x: u64, eta: f64, beta: f64, delta: f64) -> f64 {
    if x < 2 || delta == 0.0 {
        return 0.0;
    }
    let a = eta * beta;
    let xf = x as f64;
    let mut term = xf * a;
    let mut sum = 0.0;
    for k in 2..=x {
        let ratio = a * (xf - (k - 1) as f64) / k as f64;
        term *= ratio;
        sum += term;
        if ratio < 1.0 && term <= sum * 1e-18 {
            break;
        }
    }
    delta / beta * sum
}

/// Parameters of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Lipschitz constant of the local losses.
    pub rho: f64,
    /// Smoothness constant of the local losses.
    pub beta: f64,
    pub eta: f64,
    /// Hull-weighted gradient divergence.
    pub delta: f64,
    /// `min_t 1 / |w_(t-1) - w*|`.
    pub omega: f64,
    pub rounds: u64,
    pub local_steps: u64,
}

impl BoundParams {
    pub fn phi(&self) -> f64 {
        self.omega * (1.0 - self.beta * self.eta / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("rho", self.rho), ("beta", self.beta), ("eta", self.eta), ("omega", self.omega)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::BoundInapplicable(format!("{name} must be positive and finite, got {v}")));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::BoundInapplicable(format!("delta must be non-negative, got {}", self.delta)));
        }
        if self.rounds == 0 || self.local_steps == 0 {
            return Err(Error::BoundInapplicable("rounds and local_steps must be at least 1".into()));
        }
        if !(self.eta * self.beta < 1.0) {
            return Err(Error::BoundInapplicable(format!(
                "requires eta < 1/beta, got eta = {} and 1/beta = {}",
                self.eta,
                1.0 / self.beta
            )));
        }
        if !(self.phi() > 0.0) {
            return Err(Error::BoundInapplicable("phi must be positive".into()));
        }
        Ok(())
    }
}

/// Upper bound on `L(w_T) - L(w*)`:
/// `1/(2 eta phi T) + sqrt(1/(4 eta^2 phi^2 T^2) + rho h(E)/(eta phi E)) + rho h(E)`.
pub fn convergence_bound(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let (eta, phi) = (p.eta, p.phi());
    let t = p.rounds as f64;
    let e = p.local_steps as f64;
    let h = h_function(p.local_steps, eta, p.beta, p.delta);
    let first = 1.0 / (2.0 * eta * phi * t);
    Ok(first + (first * first + p.rho * h / (eta * phi * e)).sqrt() + p.rho * h)
}

/// Bound values for each round count in `rounds`.
pub fn bound_sweep(p: &BoundParams, rounds: &[u64]) -> Result<Vec<(u64, f64)>> {
    rounds
        .iter()
        .map(|&t| Ok((t, convergence_bound(&BoundParams { rounds: t, ..*p })?)))
        .collect()
}

/// `sum_i p_i |g_i - sum_j p_j g_j|` for per-client gradients `g_i`.
pub fn gradient_divergence(local_gradients: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    if local_gradients.is_empty() || local_gradients.len() != weights.len() {
        return Err(Error::param("weights", "need one weight per gradient"));
    }
    let dim = local_gradients[0].len();
    if local_gradients.iter().any(|g| g.len() != dim) {
        return Err(Error::ShapeMismatch);
    }
    let mut global = vec![0.0; dim];
    for (g, p) in local_gradients.iter().zip(weights) {
        global.iter_mut().zip(g).for_each(|(a, gi)| *a += p * gi);
    }
    Ok(local_gradients
        .iter()
        .zip(weights)
        .map(|(g, p)| p * g.iter().zip(&global).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .sum())
}

/// Empirical divergence at `model`: full-batch gradients of every client,
/// combined with [`gradient_divergence`]. This evaluates the bound's
/// `delta_i` at a single point, so it is a lower proxy for the uniform bound.
pub fn delta_from_gradients(databases: &[FingerprintDatabase], model: &MlpModel, weights: &[f64]) -> Result<f64> {
    let grads = parallel::map(databases, |_, db| neural::gradient(model, db.records()).map(|g| g.0))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    gradient_divergence(&grads, weights)
}

/// Federated gradient descent on `L_i(w) = |w - c_i|^2 / 2`, where every bound
/// constant is known exactly: `beta = 1`, `w* = sum_i p_i c_i`, and
/// `|grad L_i - grad L| = |c_i - w*|` for all `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFixture {
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub start: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticRun {
    pub params: BoundParams,
    /// `L(w_T) - L(w*)`.
    pub gap: f64,
    pub final_model: Vec<f64>,
}

impl QuadraticFixture {
    pub fn optimum(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.start.len()];
        for (c, p) in self.centers.iter().zip(&self.weights) {
            w.iter_mut().zip(c).for_each(|(a, ci)| *a += p * ci);
        }
        w
    }

    pub fn global_loss(&self, w: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, p)| p * 0.5 * w.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum()
    }

    pub fn run(&self, eta: f64, local_steps: u64, rounds: u64) -> Result<QuadraticRun> {
        check_weight_vector(&self.weights)?;
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let star = self.optimum();
        let delta: f64 = self.centers.iter().zip(&self.weights).map(|(c, p)| p * dist(c, &star)).sum();
        let mut w = self.start.clone();
        let mut omega = f64::INFINITY;
        let mut rho: f64 = 0.0;
        for _ in 0..rounds {
            let gap = dist(&w, &star);
            if gap > 0.0 {
                omega = omega.min(1.0 / gap);
            }
            let locals: Vec<Vec<f64>> = self
                .centers
                .iter()
                .map(|c| {
                    let mut v = w.clone();
                    for _ in 0..local_steps {
                        rho = rho.max(dist(&v, c));
                        v.iter_mut().zip(c).for_each(|(vi, ci)| *vi -= eta * (*vi - ci));
                    }
                    rho = rho.max(dist(&v, c));
                    v
                })
                .collect();
            w = vec![0.0; w.len()];
            for (v, p) in locals.iter().zip(&self.weights) {
                w.iter_mut().zip(v).for_each(|(a, b)| *a += p * b);
            }
        }
        let params = BoundParams { rho, beta: 1.0, eta, delta, omega, rounds, local_steps };
        Ok(QuadraticRun { params, gap: self.global_loss(&w) - self.global_loss(&star), final_model: w })
    }
}

fn check_weight_vector(weights: &[f64]) -> Result<()> {
    crate::federation::check_weights(weights)
}
