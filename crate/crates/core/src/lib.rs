//! Adversarial cost shaping for sampling-based motion planning.
//!
//! An RRT* planner in joint space is paired with a small convolutional
//! discriminator. The discriminator learns to separate a set of target
//! motions from planner output; the planner then uses the discriminator's
//! score of every partial motion as a node cost, so that it drifts towards
//! motions that look like the targets while still honouring hard constraints
//! such as goals and obstacles.
//!
//! Module map:
//!
//! * [`kinematics`]: serial chains, forward/inverse kinematics, goal sampling.
//! * [`collision`]: capsule-vs-sphere checks for arm segments.
//! * [`motion`]: the fixed-size motion representation and data preprocessing.
//! * [`nn`]: the discriminator network, training and checkpoints.
//! * [`planner`]: RRT* with pluggable objectives.
//! * [`adversarial`]: the alternating generate/train loop and its metrics.
//! * [`experiment`]: built-in experiments, file formats and the CLI commands.

pub mod adversarial;
pub mod collision;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kinematics;
pub mod motion;
pub mod nn;
pub mod planner;
pub mod plot;

pub use error::{Error, Result};

pub use nalgebra::Vector3;
