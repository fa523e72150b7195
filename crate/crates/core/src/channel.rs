//! RSS synthesis with a log-distance path-loss model.
//!
//! The received power from an AP at distance `d` is
//! `P_ref - 10 n log10(max(d, d0) / d0) + noise`, where the exponent `n` and
//! the shadowing variance both vary over the area of interest.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::rng::{self, Domain, Rng};
use crate::{Error, Result};

pub const PATHLOSS_RANGE: (f64, f64) = (3.0, 8.0);
pub const NOISE_VAR_RANGE: (f64, f64) = (2.0, 8.0);

/// Rectangular area of interest `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoiSpec {
    pub width: f64,
    pub height: f64,
}

impl AoiSpec {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::param("aoi", format!("width and height must be positive, got {width}x{height}")));
        }
        Ok(AoiSpec { width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn contains(&self, p: Point2) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    /// Corners in counter-clockwise order from the origin.
    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(0.0, 0.0),
            Point2::new(self.width, 0.0),
            Point2::new(self.width, self.height),
            Point2::new(0.0, self.height),
        ]
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Point2 {
        Point2::new(rng.random::<f64>() * self.width, rng.random::<f64>() * self.height)
    }
}

/// Scalar field over the area of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarField {
    Constant(f64),
    /// Piecewise constant on square cells of side `cell`, row-major with
    /// `nx` cells along x. Positions outside the grid use the nearest cell.
    Grid { cell: f64, nx: usize, ny: usize, values: Vec<f64> },
}

impl ScalarField {
    pub fn at(&self, p: Point2) -> f64 {
        match self {
            ScalarField::Constant(v) => *v,
            ScalarField::Grid { cell, nx, ny, values } => {
                let ix = ((p.x / cell).floor().max(0.0) as usize).min(nx - 1);
                let iy = ((p.y / cell).floor().max(0.0) as usize).min(ny - 1);
                values[iy * nx + ix]
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            ScalarField::Constant(v) => std::slice::from_ref(v),
            ScalarField::Grid { values, .. } => values,
        }
    }

    fn random_grid(aoi: &AoiSpec, cell: f64, (lo, hi): (f64, f64), rng: &mut Rng) -> Self {
        let nx = ((aoi.width / cell).ceil() as usize).max(1);
        let ny = ((aoi.height / cell).ceil() as usize).max(1);
        let values = (0..nx * ny).map(|_| rng.random_range(lo..=hi)).collect();
        ScalarField::Grid { cell, nx, ny, values }
    }

    fn check_range(&self, name: &'static str, (lo, hi): (f64, f64)) -> Result<()> {
        match self.values().iter().find(|v| !(lo..=hi).contains(*v)) {
            Some(v) => Err(Error::param(name, format!("value {v} outside [{lo}, {hi}]"))),
            None => Ok(()),
        }
    }
}

/// Random path-loss exponent and shadowing-variance grids, deterministic in
/// `seed`.
pub fn make_fields(aoi: &AoiSpec, grid_resolution: f64, seed: u64) -> Result<(ScalarField, ScalarField)> {
    if !(grid_resolution > 0.0) {
        return Err(Error::param("grid_resolution", "must be positive"));
    }
    let mut rng = rng::stream(seed, Domain::ChannelField, 0);
    let pathloss = ScalarField::random_grid(aoi, grid_resolution, PATHLOSS_RANGE, &mut rng);
    let noise = ScalarField::random_grid(aoi, grid_resolution, NOISE_VAR_RANGE, &mut rng);
    Ok((pathloss, noise))
}

/// Domain in which repeated readings are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Db,
    /// Mean of linear power, converted back to dBm.
    Milliwatt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub ap_positions: Vec<Point2>,
    /// Nominal AP transmit power. Informational; received power is anchored
    /// at `ref_rx_power_dbm`.
    pub tx_power_dbm: f64,
    pub ref_rx_power_dbm: f64,
    pub ref_distance: f64,
    pub pathloss: ScalarField,
    pub noise_var: ScalarField,
    /// When false, measurements are the noiseless mean received power.
    pub noise_enabled: bool,
    #[serde(default)]
    pub averaging: Averaging,
}

impl ChannelParams {
    /// Four APs at the corners, 10 dBm transmit power, -30 dBm at 1 m.
    pub fn corner_aps(aoi: &AoiSpec, pathloss: ScalarField, noise_var: ScalarField) -> Self {
        ChannelParams {
            ap_positions: aoi.corners().to_vec(),
            tx_power_dbm: 10.0,
            ref_rx_power_dbm: -30.0,
            ref_distance: 1.0,
            pathloss,
            noise_var,
            noise_enabled: true,
            averaging: Averaging::Db,
        }
    }

    pub fn n_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ap_positions.is_empty() {
            return Err(Error::param("ap_positions", "at least one AP required"));
        }
        if !(self.ref_distance > 0.0) {
            return Err(Error::param("ref_distance", "must be positive"));
        }
        self.pathloss.check_range("pathloss", PATHLOSS_RANGE)?;
        self.noise_var.check_range("noise_var", NOISE_VAR_RANGE)
    }

    /// Noise-free received power from `ap_index` at `position`.
    pub fn mean_rss(&self, position: Point2, ap_index: usize) -> f64 {
        let d = position.distance(&self.ap_positions[ap_index]);
        let n = self.pathloss.at(position);
        self.ref_rx_power_dbm - 10.0 * n * (d.max(self.ref_distance) / self.ref_distance).log10()
    }
}

/// RSS readings in dBm, one per AP in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssVector(pub Vec<f64>);

impl RssVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One noisy reading from `ap_index`.
pub fn rss_at(position: Point2, ap_index: usize, params: &ChannelParams, rng: &mut Rng) -> f64 {
    let mean = params.mean_rss(position, ap_index);
    if !params.noise_enabled {
        return mean;
    }
    let z: f64 = rng.sample(StandardNormal);
    mean + z * params.noise_var.at(position).sqrt()
}

/// Average of `n_avg` readings per AP.
pub fn measure(position: Point2, params: &ChannelParams, n_avg: usize, rng: &mut Rng) -> Result<RssVector> {
    if n_avg == 0 {
        return Err(Error::param("n_avg", "must be at least 1"));
    }
    let n = n_avg as f64;
    let values = (0..params.n_aps())
        .map(|ap| {
            let readings = (0..n_avg).map(|_| rss_at(position, ap, params, rng));
            match params.averaging {
                Averaging::Db => readings.sum::<f64>() / n,
                Averaging::Milliwatt => 10.0 * (readings.map(|r| 10f64.powf(r / 10.0)).sum::<f64>() / n).log10(),
            }
        })
        .collect();
    Ok(RssVector(values))
}
