use fedloc_core::analysis::{self, CorrelationReport, HullAreaExperiment};
use fedloc_core::neural;
use fedloc_core::rng::{self, Domain};
use fedloc_core::scenario::{self, ClientMotionConfig, FingerprintDatabase};
use serde::Serialize;

use crate::output::OutputDir;
use crate::{resolve_config, CommonArgs, ExperimentConfig};

/// Stream index of the probe survey, above any random-database index.
const PROBE_INDEX: u64 = 1 << 40;

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub min_distance_pairs: Vec<(f64, f64)>,
    pub min_distance: CorrelationReport,
    pub hull_area_pairs: Vec<(f64, f64)>,
    pub hull_area: CorrelationReport,
    pub probe_database: FingerprintDatabase,
}

/// Single survey walked from the AoI center at `verify.probe_velocity`.
pub fn probe_database(cfg: &ExperimentConfig, channel: &fedloc_core::channel::ChannelParams) -> anyhow::Result<FingerprintDatabase> {
    let sc = cfg.scenario_config();
    let motion = ClientMotionConfig {
        start: sc.aoi.center(),
        velocity: cfg.verify.probe_velocity,
        sample_interval: sc.sample_interval,
        n_samples: sc.n_samples,
        n_avg: sc.n_avg,
    };
    let mut r = rng::stream(cfg.seed, Domain::RandomDatabase, PROBE_INDEX);
    Ok(scenario::build_database(0, &motion, channel, &sc.aoi, &mut r)?)
}

/// Both experiments at the configured scale.
///
/// Distance experiment: a model trained on the probe survey for
/// `verify.short_steps` steps, queried from `verify.n_users` uniform users.
/// Hull experiment: `verify.n_dbs` random surveys, each training a fresh
/// model for the same number of steps, scored on the scenario test set.
pub fn run_experiments(cfg: &ExperimentConfig) -> anyhow::Result<VerifyOutcome> {
    let sc = cfg.scenario_config();
    let channel = cfg.channel(cfg.seed)?;
    let v = &cfg.verify;

    let probe = probe_database(cfg, &channel)?;
    let init = cfg.architecture().initial_model(channel.n_aps(), cfg.seed)?;
    let model = neural::train_local(&init, &probe, &cfg.short_train(), &mut rng::stream(cfg.seed, Domain::LocalTraining, PROBE_INDEX))?;
    let min_distance_pairs = analysis::min_distance_pairs(
        &model,
        &probe.positions(),
        &channel,
        &sc.aoi,
        v.n_users,
        sc.n_avg,
        &mut rng::stream(cfg.seed, Domain::Evaluation, 0),
    )?;
    let min_distance = analysis::correlation_report(&min_distance_pairs, v.n_bins);

    let test_set = scenario::make_test_set(&sc, &channel, cfg.seed)?;
    let exp = HullAreaExperiment {
        n_dbs: v.n_dbs,
        velocity_range: (v.velocity_min, v.velocity_max),
        short_train: cfg.short_train(),
        architecture: cfg.architecture(),
        n_bins: v.n_bins,
    };
    let hull_area_pairs = analysis::hull_area_pairs(&exp, &sc, &channel, &test_set, cfg.seed)?;
    let hull_area = analysis::correlation_report(&hull_area_pairs, v.n_bins);
    Ok(VerifyOutcome { min_distance_pairs, min_distance, hull_area_pairs, hull_area, probe_database: probe })
}

fn write_pairs<W: std::io::Write>(pairs: &[(f64, f64)], x: &str, y: &str, out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([x, y])?;
    for (a, b) in pairs {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    n_points: usize,
    correlation: Option<f64>,
    raw_correlation: Option<f64>,
    verdict: &'static str,
}

impl From<&CorrelationReport> for ReportSummary {
    fn from(r: &CorrelationReport) -> Self {
        ReportSummary { n_points: r.n_points, correlation: r.correlation, raw_correlation: r.raw_correlation, verdict: r.verdict.name() }
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    probe_hull_area: f64,
    min_distance: ReportSummary,
    hull_area: ReportSummary,
}

pub fn run(common: &CommonArgs) -> anyhow::Result<()> {
    let (cfg, out_dir) = resolve_config(common)?;
    let mut out = OutputDir::create(&out_dir)?;
    out.write_manifest("verify", &cfg)?;
    let o = run_experiments(&cfg)?;
    out.write("min_distance_pairs.csv", |w| write_pairs(&o.min_distance_pairs, "min_distance", "error", w))?;
    out.write("min_distance_report.csv", |w| Ok(analysis::write_report_csv(&o.min_distance, w)?))?;
    out.write("hull_area_pairs.csv", |w| write_pairs(&o.hull_area_pairs, "hull_area", "test_mae", w))?;
    out.write("hull_area_report.csv", |w| Ok(analysis::write_report_csv(&o.hull_area, w)?))?;
    let summary = Summary {
        probe_hull_area: o.probe_database.hull_area(),
        min_distance: (&o.min_distance).into(),
        hull_area: (&o.hull_area).into(),
    };
    for (name, r) in [("min distance", &o.min_distance), ("hull area", &o.hull_area)] {
        println!("{name}: correlation {} ({})", r.correlation.map_or("undefined".into(), |c| format!("{c:.4}")), r.verdict.name());
    }
    out.write_summary("verify", cfg.seed, &summary)?;
    Ok(())
}
