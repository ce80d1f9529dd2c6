//! Stochastic multimodal trajectory optimization for planar kinematic chains.
//!
//! The planner alternates two steps. Sampled trajectories are weighted by
//! an exponential transform of their cost and clustered with an
//! importance-weighted variational Gaussian mixture on a spectral embedding;
//! each cluster's weighted mean is one candidate mode. Every mode is then
//! refined by covariant gradient descent, projected back onto the goal
//! constraint and clamped to the joint limits.

pub mod cost;
pub mod density;
pub mod kinematics;
pub mod optimizer;
pub mod problem;
mod par;
pub mod rng;
pub mod sampling;
pub mod scene;
pub mod svg;
pub mod trajectory;
