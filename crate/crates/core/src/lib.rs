//! Discrete-event simulation of a cognitive-radio ad hoc network (CRAHN)
//! deployed for disaster response.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernel`]: event queue, clock and named random streams.
//! - [`geo`]: placement, random-waypoint motion, free-space propagation and
//!   beacon-range connectivity.
//! - [`mlp`]: the multilayer perceptron shared by the detector and the
//!   spectrum scorer.
//! - [`detection`]: sensor clusters, sink aggregation and the polling detector.
//! - [`spectrum`]: primary-user activity, spectrum holes and learned hole
//!   selection.
//! - [`routing`]: AODV-style on-demand routing.
//! - [`discovery`]: service advertisements, caches and flood-on-miss lookup.
//! - [`situation`]: the XML situation message codec and situation database.
//! - [`harness`]: scenario files, experiment orchestration, CSV and SVG output.
//! - [`plot`]: the small SVG line-chart writer used by the harness.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod detection;
pub mod discovery;
pub mod geo;
pub mod harness;
pub mod kernel;
pub mod mlp;
pub mod plot;
pub mod routing;
pub mod situation;
pub mod spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}
