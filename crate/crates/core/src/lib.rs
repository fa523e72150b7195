//! Federated fingerprint localization.
//!
//! The crate simulates a WiFi site survey performed by a set of mobile
//! clients, trains a multilayer perceptron localizer across those clients
//! with federated averaging, and compares aggregation rules. The headline
//! rule weights every client by the area of the convex hull of its sampling
//! positions, so clients whose fingerprints cover more of the floor plan
//! contribute more to the global model.
//!
//! Module map:
//!
//! * [`geometry`]: convex hulls, hull areas, nearest-position distances.
//! * [`channel`]: log-distance path-loss RSS synthesis.
//! * [`scenario`]: client trajectories, fingerprint databases, test sets.
//! * [`neural`]: dense networks, backpropagation, local SGD.
//! * [`federation`]: aggregation weights, the round loop, the centralized baseline.
//! * [`multifloor`]: UJIIndoorLoc ingestion and the floor-then-position pipeline.
//! * [`analysis`]: evaluation metrics, characteristic checks, the convergence bound.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
mod error;
pub mod federation;
pub mod geometry;
pub mod multifloor;
pub mod neural;
mod parallel;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use geometry::{ConvexHull, Point2};
