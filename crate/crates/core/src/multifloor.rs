//! Two-stage multi-floor localization: a federated floor classifier followed
//! by one federated position regressor per floor, plus UJIIndoorLoc
//! ingestion and client partitioning.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::analysis::argmax;
use crate::channel::RssVector;
use crate::federation::{self, AggregationStrategy, Architecture, FederationConfig, RoundMetrics};
use crate::geometry::Point2;
use crate::neural::{self, InputScaling, MlpModel, TrainConfig};
use crate::rng::{self, Domain};
use crate::scenario::{FingerprintDatabase, FingerprintRecord, ScenarioKind};
use crate::{parallel, Error, Result};

/// Raw value the dataset uses for an access point that was not detected.
pub const UJI_NOT_DETECTED: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UjiRecord {
    /// One reading per WAP column in dBm, with the not-detected value
    /// already replaced.
    pub rss: Vec<f64>,
    /// Meters east of the local origin.
    pub longitude: f64,
    /// Meters north of the local origin.
    pub latitude: f64,
    pub floor: i64,
    pub building: i64,
}

impl UjiRecord {
    pub fn to_fingerprint(&self) -> FingerprintRecord {
        FingerprintRecord {
            rss: RssVector(self.rss.clone()),
            position: Point2::new(self.longitude, self.latitude),
            floor: Some(self.floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UjiOptions {
    /// Keep only this building, or all buildings when `None`.
    pub building: Option<i64>,
    /// Replacement for not-detected readings.
    pub sentinel_dbm: f64,
    /// Subtracted from the raw coordinates. `None` uses the minimum
    /// longitude and latitude of the kept records.
    pub origin: Option<(f64, f64)>,
}

impl Default for UjiOptions {
    fn default() -> Self {
        UjiOptions { building: Some(0), sentinel_dbm: -105.0, origin: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UjiDataset {
    pub records: Vec<UjiRecord>,
    /// Raw coordinates of the local origin.
    pub origin: (f64, f64),
}

impl UjiDataset {
    pub fn fingerprints(&self) -> Vec<FingerprintRecord> {
        self.records.iter().map(UjiRecord::to_fingerprint).collect()
    }

    pub fn n_waps(&self) -> usize {
        self.records.first().map_or(0, |r| r.rss.len())
    }
}

struct Columns {
    waps: Vec<usize>,
    longitude: usize,
    latitude: usize,
    floor: usize,
    building: usize,
}

fn columns(header: &csv::StringRecord) -> std::result::Result<Columns, String> {
    let find = |name: &str| {
        header.iter().position(|h| h.trim() == name).ok_or_else(|| format!("header is missing column {name}"))
    };
    let mut waps = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(num) = h.trim().strip_prefix("WAP") {
            let n: usize = num.parse().map_err(|_| format!("malformed WAP column name {h:?}"))?;
            if n != waps.len() + 1 {
                return Err(format!("WAP columns out of order at {h:?}"));
            }
            waps.push(i);
        }
    }
    if waps.is_empty() {
        return Err("header has no WAP columns".into());
    }
    Ok(Columns {
        waps,
        longitude: find("LONGITUDE")?,
        latitude: find("LATITUDE")?,
        floor: find("FLOOR")?,
        building: find("BUILDINGID")?,
    })
}

/// Parses a UJIIndoorLoc CSV (trainingData.csv / validationData.csv layout).
/// `source` names the input in error messages.
pub fn read_ujiindoorloc<R: Read>(input: R, source: &str, opts: &UjiOptions) -> Result<UjiDataset> {
    let fail = |message: String| Error::Dataset { path: source.to_string(), message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| fail(format!("unreadable header: {e}")))?.clone();
    let cols = columns(&header).map_err(fail)?;
    let mut records = Vec::new();
    let mut raw_coords = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| fail(format!("row {row}: {e}")))?;
        let cell = |c: usize| -> Result<f64> {
            let s = rec.get(c).ok_or_else(|| fail(format!("row {row}: missing column {}", &header[c])))?;
            s.trim().parse::<f64>().map_err(|_| fail(format!("row {row}, column {}: non-numeric value {s:?}", &header[c])))
        };
        let label = |c: usize| -> Result<i64> {
            let v = cell(c)?;
            if v.fract() != 0.0 {
                return Err(fail(format!("row {row}, column {}: expected an integer, got {v}", &header[c])));
            }
            Ok(v as i64)
        };
        let building = label(cols.building)?;
        if opts.building.is_some_and(|b| b != building) {
            continue;
        }
        let rss = cols
            .waps
            .iter()
            .map(|&c| cell(c).map(|v| if v == UJI_NOT_DETECTED { opts.sentinel_dbm } else { v }))
            .collect::<Result<Vec<_>>>()?;
        raw_coords.push((cell(cols.longitude)?, cell(cols.latitude)?));
        records.push(UjiRecord { rss, longitude: 0.0, latitude: 0.0, floor: label(cols.floor)?, building });
    }
    let origin = opts.origin.unwrap_or_else(|| {
        raw_coords.iter().fold((f64::INFINITY, f64::INFINITY), |(a, b), &(x, y)| (a.min(x), b.min(y)))
    });
    let origin = if raw_coords.is_empty() { opts.origin.unwrap_or((0.0, 0.0)) } else { origin };
    for (r, (x, y)) in records.iter_mut().zip(raw_coords) {
        r.longitude = x - origin.0;
        r.latitude = y - origin.1;
    }
    Ok(UjiDataset { records, origin })
}

pub fn load_ujiindoorloc(path: impl AsRef<Path>, opts: &UjiOptions) -> Result<UjiDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Dataset { path: path.display().to_string(), message: e.to_string() })?;
    read_ujiindoorloc(std::io::BufReader::new(file), &path.display().to_string(), opts)
}

/// Writes records back in the dataset layout (WAP columns, LONGITUDE,
/// LATITUDE, FLOOR, BUILDINGID). Readings equal to `sentinel_dbm` are written
/// as not detected and coordinates are shifted back by the dataset origin.
pub fn write_ujiindoorloc<W: Write>(dataset: &UjiDataset, sentinel_dbm: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = dataset.n_waps();
    let mut header: Vec<String> = (1..=n).map(|i| format!("WAP{i:03}")).collect();
    header.extend(["LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID"].map(String::from));
    w.write_record(&header)?;
    for r in &dataset.records {
        if r.rss.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: r.rss.len() });
        }
        let mut row: Vec<String> =
            r.rss.iter().map(|&v| if v == sentinel_dbm { UJI_NOT_DETECTED } else { v }.to_string()).collect();
        row.push((r.longitude + dataset.origin.0).to_string());
        row.push((r.latitude + dataset.origin.1).to_string());
        row.push(r.floor.to_string());
        row.push(r.building.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Radius of the restricted clients' discs as a fraction of the bounding-box
/// diagonal of all positions.
pub const DEFAULT_DISC_FRACTION: f64 = 0.15;

/// Splits `records` into `n_clients` disjoint databases covering every
/// record.
///
/// Homogeneous: a shuffled round-robin deal. Heterogeneous: the second half
/// of the clients each take up to `records.len() / n_clients` records nearest
/// to a random record inside a disc of radius `disc_fraction` times the
/// bounding-box diagonal; the remaining records are dealt to the first half.
pub fn partition_clients(
    records: &[FingerprintRecord],
    n_clients: usize,
    kind: ScenarioKind,
    disc_fraction: f64,
    seed: u64,
) -> Result<Vec<FingerprintDatabase>> {
    if n_clients < 2 {
        return Err(Error::param("n_clients", "must be at least 2"));
    }
    if records.len() < n_clients {
        return Err(Error::param("n_clients", format!("{} records cannot fill {n_clients} clients", records.len())));
    }
    if !(disc_fraction > 0.0) {
        return Err(Error::param("disc_fraction", "must be positive"));
    }
    let mut rng = rng::stream(seed, Domain::Partition, 0);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    let mut free: Vec<usize> = (0..records.len()).collect();
    let n_open = match kind {
        ScenarioKind::Homogeneous => n_clients,
        ScenarioKind::Heterogeneous => n_clients - n_clients / 2,
    };
    if kind == ScenarioKind::Heterogeneous {
        let pos: Vec<Point2> = records.iter().map(|r| r.position).collect();
        let (lo, hi) = pos.iter().fold(
            (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
        );
        let radius = disc_fraction * lo.distance(&hi);
        let quota = records.len() / n_clients;
        for part in parts.iter_mut().skip(n_open) {
            let center = pos[*free.choose(&mut rng).expect("free records remain")];
            let mut inside: Vec<(f64, usize)> = free
                .iter()
                .map(|&i| (pos[i].distance(&center), i))
                .filter(|(d, _)| *d <= radius)
                .collect();
            inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            inside.truncate(quota);
            part.extend(inside.iter().map(|&(_, i)| i));
            part.sort_unstable();
            free.retain(|i| part.binary_search(i).is_err());
        }
    }
    free.shuffle(&mut rng);
    for (k, i) in free.into_iter().enumerate() {
        parts[k % n_open].push(i);
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(id, idx)| FingerprintDatabase::new(id, idx.into_iter().map(|i| records[i].clone()).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFloorModel {
    pub floor_classifier: MlpModel,
    pub per_floor_regressors: BTreeMap<i64, MlpModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFloorConfig {
    pub classifier_hidden: Vec<usize>,
    pub classifier_train: TrainConfig,
    pub classifier_rounds: usize,
    pub regressor_hidden: Vec<usize>,
    pub regressor_train: TrainConfig,
    pub regressor_rounds: usize,
    pub strategy: AggregationStrategy,
    pub scaling: InputScaling,
    pub seed: u64,
    pub eval_every: usize,
}

/// Maps dataset readings in `[-105, 0]` dBm onto `[0, 1]`.
pub const UJI_SCALING: InputScaling = InputScaling { shift: -105.0, scale: 1.0 / 105.0 };

impl Default for MultiFloorConfig {
    fn default() -> Self {
        MultiFloorConfig {
            classifier_hidden: vec![1024],
            classifier_train: TrainConfig { learning_rate: 1e-6, local_steps: 20, batch_size: 32 },
            classifier_rounds: 100,
            regressor_hidden: vec![128, 128],
            regressor_train: TrainConfig { learning_rate: 1e-5, local_steps: 40, batch_size: 32 },
            regressor_rounds: 100,
            strategy: AggregationStrategy::ConvexHullArea,
            scaling: UJI_SCALING,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl MultiFloorConfig {
    pub fn classifier_federation(&self, n_floors: usize) -> FederationConfig {
        FederationConfig {
            rounds: self.classifier_rounds,
            train: self.classifier_train,
            strategy: AggregationStrategy::Uniform,
            seed: self.seed,
            architecture: Architecture::classifier(&self.classifier_hidden, n_floors).with_scaling(self.scaling),
            eval_every: self.eval_every,
        }
    }

    pub fn regressor_federation(&self, strategy: AggregationStrategy) -> FederationConfig {
        FederationConfig {
            rounds: self.regressor_rounds,
            train: self.regressor_train,
            strategy,
            seed: self.seed,
            architecture: Architecture::regression(&self.regressor_hidden).with_scaling(self.scaling),
            eval_every: self.eval_every,
        }
    }
}

/// Floor labels present in the client data, checked to be `0..n` with no
/// gaps.
pub fn floor_labels(databases: &[FingerprintDatabase]) -> Result<Vec<i64>> {
    let mut present = std::collections::BTreeSet::new();
    for db in databases {
        for (i, r) in db.records().iter().enumerate() {
            let f = r.floor.ok_or(Error::MissingFloorLabel { index: i })?;
            if f < 0 {
                return Err(Error::param("floor", format!("negative floor label {f}")));
            }
            present.insert(f);
        }
    }
    let top = present.iter().next_back().copied().ok_or_else(|| Error::param("databases", "no records"))?;
    let missing: Vec<i64> = (0..=top).filter(|f| !present.contains(f)).collect();
    if !missing.is_empty() {
        return Err(Error::EmptyFloor { floors: missing });
    }
    Ok((0..=top).collect())
}

/// Each client's records on `floor`, dropping clients that have none there.
pub fn floor_databases(databases: &[FingerprintDatabase], floor: i64) -> Result<Vec<FingerprintDatabase>> {
    databases
        .iter()
        .filter_map(|db| {
            let recs: Vec<_> = db.records().iter().filter(|r| r.floor == Some(floor)).cloned().collect();
            (!recs.is_empty()).then(|| FingerprintDatabase::new(db.client_id(), recs))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFloorTraining {
    pub model: MultiFloorModel,
    pub classifier_metrics: Vec<RoundMetrics>,
    pub regressor_metrics: BTreeMap<i64, Vec<RoundMetrics>>,
}

/// Trains the classifier with uniform aggregation and one regressor per floor
/// with `cfg.strategy`. Test metrics use `test_set`, split by floor label for
/// the regressors.
pub fn train_multifloor(
    databases: &[FingerprintDatabase],
    test_set: &[FingerprintRecord],
    cfg: &MultiFloorConfig,
) -> Result<MultiFloorTraining> {
    let floors = floor_labels(databases)?;
    let classifier = federation::run_federated(databases, test_set, &cfg.classifier_federation(floors.len()))?;
    let reg_cfg = cfg.regressor_federation(cfg.strategy);
    let trained = parallel::map(&floors, |_, &floor| {
        let dbs = floor_databases(databases, floor)?;
        let test: Vec<_> = test_set.iter().filter(|r| r.floor == Some(floor)).cloned().collect();
        federation::run_federated(&dbs, &test, &reg_cfg)
    });
    let mut per_floor_regressors = BTreeMap::new();
    let mut regressor_metrics = BTreeMap::new();
    for (floor, run) in floors.iter().zip(trained) {
        let run = run?;
        per_floor_regressors.insert(*floor, run.model);
        regressor_metrics.insert(*floor, run.metrics);
    }
    Ok(MultiFloorTraining {
        model: MultiFloorModel { floor_classifier: classifier.model, per_floor_regressors },
        classifier_metrics: classifier.metrics,
        regressor_metrics,
    })
}

/// Floor from the classifier's argmax (lower floor on ties), then the
/// position from that floor's regressor.
pub fn predict(model: &MultiFloorModel, rss: &[f64]) -> Result<(i64, Point2)> {
    let floor = argmax(&neural::forward(&model.floor_classifier, rss)?) as i64;
    let regressor = model.per_floor_regressors.get(&floor).ok_or(Error::NoRegressor(floor))?;
    Ok((floor, neural::predict_position(regressor, rss)?))
}

/// Mean position error when every record is routed by its true floor label.
pub fn oracle_floor_mae(model: &MultiFloorModel, test_set: &[FingerprintRecord]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, r) in test_set.iter().enumerate() {
        let floor = r.floor.ok_or(Error::MissingFloorLabel { index: i })?;
        let regressor = model.per_floor_regressors.get(&floor).ok_or(Error::NoRegressor(floor))?;
        total += neural::predict_position(regressor, r.rss.values())?.distance(&r.position);
    }
    Ok(total / test_set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub stage: String,
    pub floor: Option<i64>,
    pub metric: String,
    pub value: f64,
}

impl ReportRow {
    pub fn new(stage: &str, floor: Option<i64>, metric: &str, value: f64) -> Self {
        ReportRow { stage: stage.into(), floor, metric: metric.into(), value }
    }
}

/// Writes `stage,floor,metric,value` rows; building-wide rows leave `floor`
/// empty.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "floor", "metric", "value"])?;
    for r in rows {
        w.write_record([r.stage.clone(), r.floor.map_or(String::new(), |f| f.to_string()), r.metric.clone(), r.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Synthetic building in the dataset layout, used by tests and demos: `n_waps`
/// transmitters spread over a `width` by `height` footprint, readings that
/// fall off with distance and shift by 15 dB per floor gap, and readings
/// below -95 dBm reported as not detected.
pub fn synthetic_uji(
    n_records: usize,
    n_floors: i64,
    n_waps: usize,
    width: f64,
    height: f64,
    seed: u64,
) -> (Vec<UjiRecord>, (f64, f64)) {
    use rand::Rng as _;
    let mut rng = rng::stream(seed, Domain::Measurement, 0);
    let aps: Vec<(Point2, i64)> = (0..n_waps)
        .map(|i| (Point2::new(rng.random_range(0.0..width), rng.random_range(0.0..height)), i as i64 % n_floors))
        .collect();
    let origin = (-7400.0, 4_864_800.0);
    let records = (0..n_records)
        .map(|k| {
            let floor = k as i64 % n_floors;
            let p = Point2::new(rng.random_range(0.0..width), rng.random_range(0.0..height));
            let rss = aps
                .iter()
                .map(|(ap, ap_floor)| {
                    let d = p.distance(ap).max(1.0);
                    let v = -30.0 - 25.0 * d.log10() - 15.0 * (floor - ap_floor).abs() as f64 + rng.random_range(-2.0..2.0);
                    if v < -95.0 { UJI_NOT_DETECTED } else { v.round() }
                })
                .collect();
            UjiRecord { rss, longitude: p.x + origin.0, latitude: p.y + origin.1, floor, building: 0 }
        })
        .collect();
    (records, origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Head;

    fn raw_csv(records: &[UjiRecord]) -> String {
        let ds = UjiDataset { records: records.to_vec(), origin: (0.0, 0.0) };
        let mut buf = Vec::new();
        write_ujiindoorloc(&ds, f64::NAN, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn all_sentinel_row() {
        let rec = UjiRecord { rss: vec![100.0; 520], longitude: -7600.0, latitude: 4_864_900.0, floor: 2, building: 0 };
        let ds = read_ujiindoorloc(raw_csv(&[rec]).as_bytes(), "mem", &UjiOptions::default()).unwrap();
        assert_eq!(ds.records[0].rss, vec![-105.0; 520]);
        assert_eq!((ds.records[0].longitude, ds.records[0].latitude), (0.0, 0.0));
    }

    #[test]
    fn building_filter() {
        let mut rows = Vec::new();
        for b in 0..3 {
            for f in 0..5 {
                if b == 0 && f == 4 {
                    continue;
                }
                rows.push(UjiRecord { rss: vec![-60.0, 100.0], longitude: 1.0, latitude: 2.0, floor: f, building: b });
            }
        }
        let ds = read_ujiindoorloc(raw_csv(&rows).as_bytes(), "mem", &UjiOptions::default()).unwrap();
        assert_eq!(ds.records.len(), 4);
        assert!(ds.records.iter().all(|r| r.building == 0 && (0..4).contains(&r.floor)));
        let all = read_ujiindoorloc(raw_csv(&rows).as_bytes(), "mem", &UjiOptions { building: None, ..Default::default() }).unwrap();
        assert_eq!(all.records.len(), rows.len());
    }

    #[test]
    fn round_trip() {
        let (raw, _) = synthetic_uji(40, 4, 520, 60.0, 40.0, 3);
        let opts = UjiOptions::default();
        let first = read_ujiindoorloc(raw_csv(&raw).as_bytes(), "mem", &opts).unwrap();
        let mut buf = Vec::new();
        write_ujiindoorloc(&first, opts.sentinel_dbm, &mut buf).unwrap();
        let second = read_ujiindoorloc(buf.as_slice(), "mem", &opts).unwrap();
        assert_eq!(first, second);
        assert!(first.records.iter().all(|r| r.rss.iter().all(|&v| v != UJI_NOT_DETECTED)));
    }

    #[test]
    fn extra_columns_are_ignored() {
        let text = "WAP001,WAP002,LONGITUDE,LATITUDE,FLOOR,BUILDINGID,SPACEID\n-50,100,10.5,20.5,1,0,106\n";
        let ds = read_ujiindoorloc(text.as_bytes(), "mem", &UjiOptions { origin: Some((0.0, 0.0)), ..Default::default() }).unwrap();
        assert_eq!(ds.records[0], UjiRecord { rss: vec![-50.0, -105.0], longitude: 10.5, latitude: 20.5, floor: 1, building: 0 });
    }

    #[test]
    fn malformed_inputs() {
        let bad_header = "WAP001,LONGITUDE,LATITUDE,FLOOR\n-50,1,2,0\n";
        let err = read_ujiindoorloc(bad_header.as_bytes(), "mem", &UjiOptions::default()).unwrap_err();
        assert!(err.to_string().contains("BUILDINGID"), "{err}");
        let bad_cell = "WAP001,LONGITUDE,LATITUDE,FLOOR,BUILDINGID\n-50,1,2,0,0\nabc,1,2,0,0\n";
        let err = read_ujiindoorloc(bad_cell.as_bytes(), "mem", &UjiOptions::default()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let err = load_ujiindoorloc("/nonexistent/trainingData.csv", &UjiOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Dataset { .. }));
    }

    fn grid_records(n: usize, floors: i64) -> Vec<FingerprintRecord> {
        (0..n)
            .map(|i| {
                let x = (i % 50) as f64;
                let y = (i / 50) as f64;
                FingerprintRecord { rss: RssVector(vec![-x, -y]), position: Point2::new(x, y), floor: Some(i as i64 % floors) }
            })
            .collect()
    }

    fn assert_complete(parts: &[FingerprintDatabase], records: &[FingerprintRecord]) {
        let mut seen: Vec<(i64, i64)> =
            parts.iter().flat_map(|d| d.records().iter().map(|r| (r.position.x as i64, r.position.y as i64))).collect();
        seen.sort_unstable();
        let mut all: Vec<(i64, i64)> = records.iter().map(|r| (r.position.x as i64, r.position.y as i64)).collect();
        all.sort_unstable();
        assert_eq!(seen, all);
    }

    #[test]
    fn homogeneous_partition_sizes() {
        let recs = grid_records(2000, 1);
        let parts = partition_clients(&recs, 20, ScenarioKind::Homogeneous, DEFAULT_DISC_FRACTION, 1).unwrap();
        assert_eq!(parts.len(), 20);
        assert!(parts.iter().all(|p| p.len().abs_diff(100) <= 1));
        assert_complete(&parts, &recs);
        let odd = partition_clients(&grid_records(2003, 1), 20, ScenarioKind::Homogeneous, DEFAULT_DISC_FRACTION, 1).unwrap();
        assert!(odd.iter().all(|p| p.len().abs_diff(100) <= 1));
    }

    #[test]
    fn heterogeneous_partition_restricts_half() {
        let recs = grid_records(2500, 1);
        let parts = partition_clients(&recs, 20, ScenarioKind::Heterogeneous, DEFAULT_DISC_FRACTION, 5).unwrap();
        assert_complete(&parts, &recs);
        let mean = |ps: &[FingerprintDatabase]| ps.iter().map(|p| p.hull_area()).sum::<f64>() / ps.len() as f64;
        assert!(mean(&parts[10..]) < mean(&parts[..10]));
        let again = partition_clients(&recs, 20, ScenarioKind::Heterogeneous, DEFAULT_DISC_FRACTION, 5).unwrap();
        assert_eq!(parts, again);
    }

    #[test]
    fn partition_errors() {
        let recs = grid_records(10, 1);
        assert!(partition_clients(&recs, 11, ScenarioKind::Homogeneous, 0.15, 0).is_err());
        assert!(partition_clients(&recs, 1, ScenarioKind::Homogeneous, 0.15, 0).is_err());
        let parts = partition_clients(&recs, 10, ScenarioKind::Heterogeneous, 0.15, 0).unwrap();
        assert!(parts.iter().all(|p| !p.is_empty()));
    }

    fn small_config() -> MultiFloorConfig {
        MultiFloorConfig {
            classifier_hidden: vec![8],
            classifier_train: TrainConfig { learning_rate: 0.5, local_steps: 5, batch_size: 16 },
            classifier_rounds: 3,
            regressor_hidden: vec![8],
            regressor_train: TrainConfig { learning_rate: 0.01, local_steps: 5, batch_size: 16 },
            regressor_rounds: 3,
            strategy: AggregationStrategy::ConvexHullArea,
            scaling: InputScaling::IDENTITY,
            seed: 2,
            eval_every: 1,
        }
    }

    #[test]
    fn four_floors_give_one_classifier_and_four_regressors() {
        let recs = grid_records(400, 4);
        let dbs = partition_clients(&recs, 20, ScenarioKind::Homogeneous, 0.15, 0).unwrap();
        let run = train_multifloor(&dbs, &recs[..40], &small_config()).unwrap();
        assert_eq!(run.model.floor_classifier.n_outputs(), 4);
        assert_eq!(run.model.per_floor_regressors.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(run.classifier_metrics.len(), 3);
    }

    #[test]
    fn empty_floor_is_reported() {
        let recs: Vec<_> = grid_records(90, 3).into_iter().filter(|r| r.floor != Some(1)).collect();
        let dbs = partition_clients(&recs, 3, ScenarioKind::Homogeneous, 0.15, 0).unwrap();
        match train_multifloor(&dbs, &[], &small_config()) {
            Err(Error::EmptyFloor { floors }) => assert_eq!(floors, vec![1]),
            other => panic!("expected EmptyFloor, got {other:?}"),
        }
    }

    #[test]
    fn single_floor_equals_plain_federation() {
        let recs = grid_records(200, 1);
        let dbs = partition_clients(&recs, 4, ScenarioKind::Heterogeneous, 0.15, 0).unwrap();
        let cfg = small_config();
        let run = train_multifloor(&dbs, &recs[..20], &cfg).unwrap();
        let plain = federation::run_federated(&dbs, &recs[..20], &cfg.regressor_federation(cfg.strategy)).unwrap();
        assert_eq!(run.model.per_floor_regressors[&0], plain.model);
        for r in &recs[..20] {
            let (floor, p) = predict(&run.model, r.rss.values()).unwrap();
            assert_eq!(floor, 0);
            assert_eq!(p, neural::predict_position(&plain.model, r.rss.values()).unwrap());
        }
    }

    fn dispatch_model(bias: [f64; 3]) -> MultiFloorModel {
        let mut clf = MlpModel::zeros(&[2, 3], Head::Classification).unwrap();
        clf.layer_mut(0).1.copy_from_slice(&bias);
        let per_floor_regressors = (0..3)
            .map(|f| {
                let mut m = MlpModel::zeros(&[2, 2], Head::Regression).unwrap();
                m.layer_mut(0).1.copy_from_slice(&[f as f64, 10.0 * f as f64]);
                (f, m)
            })
            .collect();
        MultiFloorModel { floor_classifier: clf, per_floor_regressors }
    }

    #[test]
    fn dispatch_and_tie_break() {
        let m = dispatch_model([0.0, 0.0, 50.0]);
        assert_eq!(predict(&m, &[-50.0, -60.0]).unwrap(), (2, Point2::new(2.0, 20.0)));
        let tie = dispatch_model([3.0, 3.0, -1.0]);
        assert_eq!(predict(&tie, &[-50.0, -60.0]).unwrap().0, 0);
        let mut missing = dispatch_model([0.0, 0.0, 50.0]);
        missing.per_floor_regressors.remove(&2);
        assert!(matches!(predict(&missing, &[-50.0, -60.0]), Err(Error::NoRegressor(2))));
    }

    #[test]
    fn separable_floors_are_learned() {
        // floor encoded in the sign of the first reading
        let recs: Vec<_> = (0..64)
            .map(|i| {
                let floor = (i % 2) as i64;
                let a = if floor == 0 { -1.0 } else { 1.0 } * (1.0 + (i % 7) as f64 / 7.0);
                FingerprintRecord { rss: RssVector(vec![a, (i % 5) as f64 / 5.0]), position: Point2::new(i as f64, 0.0), floor: Some(floor) }
            })
            .collect();
        let dbs = partition_clients(&recs, 4, ScenarioKind::Homogeneous, 0.15, 1).unwrap();
        let mut cfg = small_config();
        cfg.classifier_rounds = 60;
        let run = train_multifloor(&dbs, &recs, &cfg).unwrap();
        assert_eq!(run.classifier_metrics.last().unwrap().test_accuracy, Some(1.0));
    }

    #[test]
    fn pipeline_decomposes_with_true_floors() {
        let (raw, origin) = synthetic_uji(240, 3, 12, 40.0, 30.0, 9);
        let ds = read_ujiindoorloc(raw_csv(&raw).as_bytes(), "mem", &UjiOptions { origin: Some(origin), ..Default::default() }).unwrap();
        let recs = ds.fingerprints();
        let dbs = partition_clients(&recs[..200], 6, ScenarioKind::Homogeneous, 0.15, 0).unwrap();
        let mut cfg = small_config();
        cfg.scaling = UJI_SCALING;
        let run = train_multifloor(&dbs, &recs[200..], &cfg).unwrap();
        let test = &recs[200..];
        let per_floor: f64 = run
            .regressor_metrics
            .iter()
            .map(|(f, m)| m.last().unwrap().test_mae.unwrap() * test.iter().filter(|r| r.floor == Some(*f)).count() as f64)
            .sum::<f64>()
            / test.len() as f64;
        assert!((oracle_floor_mae(&run.model, test).unwrap() - per_floor).abs() < 1e-9);
        for r in test {
            let (floor, p) = predict(&run.model, r.rss.values()).unwrap();
            if Some(floor) == r.floor {
                let direct = neural::predict_position(&run.model.per_floor_regressors[&floor], r.rss.values()).unwrap();
                assert_eq!(p, direct);
            }
        }
    }

    #[test]
    fn report_schema() {
        let mut buf = Vec::new();
        write_report_csv(&[ReportRow::new("classifier", None, "accuracy", 0.9), ReportRow::new("regressor", Some(1), "mae", 4.5)], &mut buf)
            .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "stage,floor,metric,value\nclassifier,,accuracy,0.9\nregressor,1,mae,4.5\n");
    }
}
