//! Weighted per-cluster mean trajectories.

use nalgebra::DMatrix;

use super::{DensityError, ImportanceWeights};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub trajectory: Trajectory,
    /// Cluster label the mode was built from.
    pub cluster: usize,
    pub member_indices: Vec<usize>,
    pub total_weight: f64,
    /// Weight-averaged cost of the members.
    pub mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// One mode per cluster with positive weight: the weighted mean of its
/// members, waypoint by waypoint. Entries on which all members agree are
/// copied exactly, so shared endpoints stay bitwise intact. Modes are
/// sorted by ascending mean cost; equal costs keep cluster order.
pub fn mode_trajectories(
    trajectories: &[Trajectory],
    costs: &[f64],
    weights: &ImportanceWeights,
    assignments: &[usize],
) -> Result<ModeSet, DensityError> {
    let n = trajectories.len();
    if n == 0 {
        return Err(DensityError::Empty);
    }
    if costs.len() != n || weights.len() != n || assignments.len() != n {
        return Err(DensityError::Shape("trajectories, costs, weights and assignments differ in length".into()));
    }
    let shape = trajectories[0].matrix().shape();
    if trajectories.iter().any(|t| t.matrix().shape() != shape) {
        return Err(DensityError::Shape("trajectories differ in shape".into()));
    }
    let clusters = assignments.iter().copied().max().unwrap_or(0) + 1;
    let w = weights.as_slice();
    let mut modes = Vec::new();
    for l in 0..clusters {
        let members: Vec<usize> = (0..n).filter(|i| assignments[*i] == l).collect();
        let total: f64 = members.iter().map(|i| w[*i]).sum();
        if members.is_empty() || !(total > 0.0) {
            continue;
        }
        let mean = if members.len() == 1 {
            trajectories[members[0]].matrix().clone()
        } else {
            let mut acc = DMatrix::zeros(shape.0, shape.1);
            for &i in &members {
                acc += trajectories[i].matrix() * (w[i] / total);
            }
            let first = trajectories[members[0]].matrix();
            for (idx, v) in acc.iter_mut().enumerate() {
                if members.iter().all(|i| trajectories[*i].matrix()[idx] == first[idx]) {
                    *v = first[idx];
                }
            }
            acc
        };
        let mean_cost = members.iter().map(|i| w[*i] * costs[*i]).sum::<f64>() / total;
        let trajectory = Trajectory::from_matrix(mean, trajectories[members[0]].dt())
            .map_err(|e| DensityError::Shape(e.to_string()))?;
        modes.push(Mode {
            trajectory,
            cluster: l,
            member_indices: members,
            total_weight: total,
            mean_cost,
        });
    }
    if modes.is_empty() {
        return Err(DensityError::NoClusters);
    }
    modes.sort_by(|a, b| a.mean_cost.total_cmp(&b.mean_cost));
    Ok(ModeSet { modes })
}
