//! Toolkit for UAV strip-transect wildlife censuses.
//!
//! The modules follow the workflow: [`planner`] lays out and selects
//! transects, [`geometry`] turns poses into ground footprints, [`datastore`]
//! validates the record streams, [`eval`] scores detector output,
//! [`review`] runs the dual-observer verification log, and [`census`] turns
//! verified sightings into a density estimate. [`synth`] produces seeded
//! corpora for all of the above.

pub mod census;
pub mod datastore;
pub mod eval;
pub mod geometry;
pub mod planner;
pub mod report;
pub mod review;
pub mod synth;

pub use datastore::{BBox, Class};
pub use geometry::{CameraIntrinsics, Enu, FlightPose, Geodetic};
