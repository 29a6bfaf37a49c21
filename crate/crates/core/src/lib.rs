//! Electric-vehicle energy-rate calibration and eco-routing.
//!
//! The pipeline runs from raw vehicle telemetry to routes:
//!
//! - [`telemetry`] fuses a 20 Hz OBD stream (relative clock) with a GPS
//!   stream (UTC clock) into a 1 Hz trace, aligning the clocks by speed
//!   cross-correlation.
//! - [`mapmatch`] assigns each sample to the nearest road link and cuts the
//!   trace into per-link snippets with average speed and Wh/mi.
//! - [`eops`] bins snippets by road class, grade and 5 mph speed bin and fits
//!   a quartic of median energy rate against speed per (class, grade bin).
//! - [`netgraph`] turns the model and a traffic snapshot into per-link
//!   distance, time and energy costs.
//! - [`router`] finds shortest-distance, least-duration and least-energy
//!   routes with Dijkstra.
//! - [`harness`] replays a week of departures and reports how much each
//!   route gives up on the other two criteria.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eops;
pub mod error;
pub mod geo;
pub mod harness;
pub mod mapmatch;
pub mod netgraph;
pub mod router;
pub mod synth;
pub mod telemetry;

pub use error::{Error, Result};
