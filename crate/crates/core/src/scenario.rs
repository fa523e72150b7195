//! Site-survey simulation: client walks, fingerprint databases, test sets.

use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::channel::{self, AoiSpec, ChannelParams, RssVector};
use crate::geometry::{self, ConvexHull, Point2};
use crate::rng::{self, Domain, Rng};
use crate::{parallel, Error, Result};

/// One fingerprint: an averaged RSS vector and where it was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    pub rss: RssVector,
    pub position: Point2,
    /// Floor label, only set for multi-floor data.
    pub floor: Option<i64>,
}

impl FingerprintRecord {
    pub fn new(rss: RssVector, position: Point2) -> Self {
        FingerprintRecord { rss, position, floor: None }
    }
}

/// A client's local fingerprint database with its cached convex hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintDatabase {
    client_id: usize,
    records: Vec<FingerprintRecord>,
    hull: ConvexHull,
}

impl FingerprintDatabase {
    pub fn new(client_id: usize, records: Vec<FingerprintRecord>) -> Result<Self> {
        let positions: Vec<Point2> = records.iter().map(|r| r.position).collect();
        let hull = geometry::convex_hull(&positions)?;
        Ok(FingerprintDatabase { client_id, records, hull })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn records(&self) -> &[FingerprintRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn hull(&self) -> &ConvexHull {
        &self.hull
    }

    pub fn hull_area(&self) -> f64 {
        self.hull.area()
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.records.iter().map(|r| r.position).collect()
    }

    pub fn n_aps(&self) -> usize {
        self.records[0].rss.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientMotionConfig {
    pub start: Point2,
    /// Meters per second.
    pub velocity: f64,
    /// Seconds between samples.
    pub sample_interval: f64,
    pub n_samples: usize,
    /// Readings averaged per sample.
    pub n_avg: usize,
}

impl ClientMotionConfig {
    pub fn validate(&self, aoi: &AoiSpec) -> Result<()> {
        if !(self.velocity >= 0.0) || !self.velocity.is_finite() {
            return Err(Error::param("velocity", "must be finite and non-negative"));
        }
        if !(self.sample_interval > 0.0) {
            return Err(Error::param("sample_interval", "must be positive"));
        }
        if self.n_samples == 0 {
            return Err(Error::param("n_samples", "must be at least 1"));
        }
        if self.n_avg == 0 {
            return Err(Error::param("n_avg", "must be at least 1"));
        }
        if !aoi.contains(self.start) {
            return Err(Error::param("start", format!("({}, {}) outside the AoI", self.start.x, self.start.y)));
        }
        Ok(())
    }

    pub fn step_length(&self) -> f64 {
        self.velocity * self.sample_interval
    }
}

fn reflect(v: f64, hi: f64) -> f64 {
    let period = 2.0 * hi;
    let m = v.rem_euclid(period);
    if m > hi {
        period - m
    } else {
        m
    }
}

/// Random-waypoint walk sampled every `velocity * sample_interval` meters of
/// path. The first sample is the start position. Waypoints are drawn
/// uniformly in the AoI; a sample whose step crosses a waypoint turns there.
pub fn generate_trajectory(config: &ClientMotionConfig, aoi: &AoiSpec, rng: &mut Rng) -> Result<Vec<Point2>> {
    config.validate(aoi)?;
    let step = config.step_length();
    let mut positions = Vec::with_capacity(config.n_samples);
    let mut here = config.start;
    positions.push(here);
    if config.n_samples == 1 {
        return Ok(positions);
    }
    let mut target = aoi.sample_uniform(rng);
    for _ in 1..config.n_samples {
        let mut remaining = step;
        while remaining > 0.0 {
            let to_target = here.distance(&target);
            if to_target <= remaining {
                here = target;
                remaining -= to_target;
                target = aoi.sample_uniform(rng);
            } else {
                let f = remaining / to_target;
                here = Point2::new(here.x + (target.x - here.x) * f, here.y + (target.y - here.y) * f);
                remaining = 0.0;
            }
        }
        here = Point2::new(reflect(here.x, aoi.width), reflect(here.y, aoi.height));
        positions.push(here);
    }
    Ok(positions)
}

/// Walks the trajectory and records one averaged RSS vector per position.
pub fn build_database(
    client_id: usize,
    motion: &ClientMotionConfig,
    params: &ChannelParams,
    aoi: &AoiSpec,
    rng: &mut Rng,
) -> Result<FingerprintDatabase> {
    let trajectory = generate_trajectory(motion, aoi, rng)?;
    let records = trajectory
        .into_iter()
        .map(|p| Ok(FingerprintRecord::new(channel::measure(p, params, motion.n_avg, rng)?, p)))
        .collect::<Result<Vec<_>>>()?;
    FingerprintDatabase::new(client_id, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Homogeneous,
    Heterogeneous,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Homogeneous => "homogeneous",
            ScenarioKind::Heterogeneous => "heterogeneous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub aoi: AoiSpec,
    pub n_clients: usize,
    pub normal_velocity: f64,
    pub straggler_velocity: f64,
    pub sample_interval: f64,
    pub n_samples: usize,
    pub n_avg: usize,
    pub n_test: usize,
    /// Cell size of the random channel fields.
    pub grid_resolution: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            aoi: AoiSpec { width: 50.0, height: 50.0 },
            n_clients: 8,
            normal_velocity: 0.5,
            straggler_velocity: 0.05,
            sample_interval: 3.0,
            n_samples: 200,
            n_avg: 10,
            n_test: 1200,
            grid_resolution: 5.0,
        }
    }
}

impl ScenarioConfig {
    /// Motion of client `index`: starts cycle through the AoI corners, and in
    /// the heterogeneous scenario the second half of the clients straggle.
    pub fn motion(&self, kind: ScenarioKind, index: usize) -> ClientMotionConfig {
        let straggler = kind == ScenarioKind::Heterogeneous && index >= self.n_clients / 2;
        ClientMotionConfig {
            start: self.aoi.corners()[index % 4],
            velocity: if straggler { self.straggler_velocity } else { self.normal_velocity },
            sample_interval: self.sample_interval,
            n_samples: self.n_samples,
            n_avg: self.n_avg,
        }
    }

    pub fn validate(&self, kind: ScenarioKind) -> Result<()> {
        AoiSpec::new(self.aoi.width, self.aoi.height)?;
        if self.n_clients < 1 {
            return Err(Error::param("n_clients", "at least one client required"));
        }
        if kind == ScenarioKind::Heterogeneous && (self.n_clients < 2 || !self.n_clients.is_multiple_of(2)) {
            return Err(Error::param(
                "n_clients",
                format!("heterogeneous split needs an even client count >= 2, got {}", self.n_clients),
            ));
        }
        if self.n_test == 0 {
            return Err(Error::param("n_test", "must be at least 1"));
        }
        (0..self.n_clients.min(4)).try_for_each(|i| self.motion(kind, i).validate(&self.aoi))
    }

    /// Channel with four corner APs and random fields drawn from `seed`.
    pub fn channel(&self, seed: u64) -> Result<ChannelParams> {
        let (pathloss, noise) = channel::make_fields(&self.aoi, self.grid_resolution, seed)?;
        Ok(ChannelParams::corner_aps(&self.aoi, pathloss, noise))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub databases: Vec<FingerprintDatabase>,
    pub test_set: Vec<FingerprintRecord>,
}

/// Builds every client database and the uniform test set.
pub fn make_scenario(kind: ScenarioKind, cfg: &ScenarioConfig, params: &ChannelParams, seed: u64) -> Result<Scenario> {
    cfg.validate(kind)?;
    params.validate()?;
    let clients: Vec<usize> = (0..cfg.n_clients).collect();
    let databases = parallel::map(&clients, |_, &i| {
        let mut rng = rng::stream(seed, Domain::Trajectory, i as u64);
        build_database(i, &cfg.motion(kind, i), params, &cfg.aoi, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let test_set = make_test_set(cfg, params, seed)?;
    Ok(Scenario { kind, databases, test_set })
}

pub fn make_test_set(cfg: &ScenarioConfig, params: &ChannelParams, seed: u64) -> Result<Vec<FingerprintRecord>> {
    let mut rng = rng::stream(seed, Domain::TestSet, 0);
    (0..cfg.n_test)
        .map(|_| {
            let p = cfg.aoi.sample_uniform(&mut rng);
            Ok(FingerprintRecord::new(channel::measure(p, params, cfg.n_avg, &mut rng)?, p))
        })
        .collect()
}

/// Random walk with a uniformly drawn start and velocity, used to sample a
/// wide spread of hull areas.
pub fn random_database(
    client_id: usize,
    cfg: &ScenarioConfig,
    velocity_range: (f64, f64),
    params: &ChannelParams,
    rng: &mut Rng,
) -> Result<FingerprintDatabase> {
    let motion = ClientMotionConfig {
        start: cfg.aoi.sample_uniform(rng),
        velocity: rng.random_range(velocity_range.0..=velocity_range.1),
        sample_interval: cfg.sample_interval,
        n_samples: cfg.n_samples,
        n_avg: cfg.n_avg,
    };
    build_database(client_id, &motion, params, &cfg.aoi, rng)
}

/// Writes databases as CSV with header `client_id,x,y,rss_0..rss_{L-1}`.
/// When any record carries a floor label a `floor` column follows `y`.
pub fn write_databases_csv<W: Write>(databases: &[FingerprintDatabase], out: W) -> Result<()> {
    let n_aps = databases.first().map_or(0, |d| d.n_aps());
    let with_floor = databases.iter().flat_map(|d| d.records()).any(|r| r.floor.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["client_id".to_string(), "x".into(), "y".into()];
    if with_floor {
        header.push("floor".into());
    }
    header.extend((0..n_aps).map(|i| format!("rss_{i}")));
    w.write_record(&header)?;
    for db in databases {
        for r in db.records() {
            let mut row = vec![db.client_id().to_string(), r.position.x.to_string(), r.position.y.to_string()];
            if with_floor {
                row.push(r.floor.map_or(String::new(), |f| f.to_string()));
            }
            row.extend(r.rss.values().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_databases_csv`]. Databases are returned in order of
/// first appearance of their client id.
pub fn read_databases_csv<R: Read>(input: R) -> Result<Vec<FingerprintDatabase>> {
    let bad = |message: String| Error::Dataset { path: "<databases csv>".into(), message };
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("client_id") || header.get(1) != Some("x") || header.get(2) != Some("y") {
        return Err(bad("header must start with client_id,x,y".into()));
    }
    let with_floor = header.get(3) == Some("floor");
    let rss_start = if with_floor { 4 } else { 3 };
    let mut groups: Vec<(usize, Vec<FingerprintRecord>)> = Vec::new();
    for (row, result) in r.records().enumerate() {
        let rec = result?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {row}: column {i} is not numeric")))
        };
        let client = rec
            .get(0)
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| bad(format!("row {row}: bad client_id")))?;
        let floor = if with_floor {
            match rec.get(3) {
                Some("") | None => None,
                Some(s) => Some(s.parse::<i64>().map_err(|_| bad(format!("row {row}: bad floor")))?),
            }
        } else {
            None
        };
        let rss = (rss_start..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
        let record = FingerprintRecord { rss: RssVector(rss), position: Point2::new(num(1)?, num(2)?), floor };
        match groups.iter_mut().find(|(c, _)| *c == client) {
            Some((_, v)) => v.push(record),
            None => groups.push((client, vec![record])),
        }
    }
    groups.into_iter().map(|(c, v)| FingerprintDatabase::new(c, v)).collect()
}
