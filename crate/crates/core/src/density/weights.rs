//! Self-normalized importance weights f(C) / beta.

use crate::cost::log_cost_weight;

use super::DensityError;

/// Normalized importance weights; non-negative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    weights: Vec<f64>,
}

impl ImportanceWeights {
    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0 / n as f64; n] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Kish effective sample size.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Weights from target values `f_values` (any positive scale) and proposal
/// log-densities. `f` is first divided by its maximum, so any power-of-two
/// rescaling of `f` leaves the result bitwise unchanged.
pub fn weights_from_target(f_values: &[f64], log_proposal: &[f64]) -> Result<ImportanceWeights, DensityError> {
    if f_values.len() != log_proposal.len() {
        return Err(DensityError::Shape(format!(
            "{} target values but {} proposal densities",
            f_values.len(),
            log_proposal.len()
        )));
    }
    if f_values.is_empty() {
        return Err(DensityError::Empty);
    }
    if f_values.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || log_proposal.iter().any(|b| !b.is_finite()) {
        return Err(DensityError::NonFinite);
    }
    let f_max = f_values.iter().copied().fold(0.0, f64::max);
    if f_max == 0.0 {
        return Err(DensityError::NonFinite);
    }
    let log_ratio: Vec<f64> = f_values
        .iter()
        .zip(log_proposal)
        .map(|(f, lb)| (f / f_max).ln() - lb)
        .collect();
    let top = log_ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_ratio.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(ImportanceWeights {
        weights: raw.into_iter().map(|w| w / total).collect(),
    })
}

/// Weights for a batch with costs `costs` and proposal log-densities,
/// using the exponential cost map with the batch's min and max cost.
pub fn importance_weights(costs: &[f64], log_proposal: &[f64], alpha: f64) -> Result<ImportanceWeights, DensityError> {
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(DensityError::NonFinite);
    }
    let c_min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let c_max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = costs
        .iter()
        .map(|c| log_cost_weight(*c, c_min, c_max, alpha).map(f64::exp))
        .collect::<Result<_, _>>()
        .map_err(|e| DensityError::Shape(e.to_string()))?;
    weights_from_target(&f, log_proposal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_batch_is_uniform() {
        let w = importance_weights(&[2.0; 7], &[-3.0; 7], 20.0).unwrap();
        assert!(w.as_slice().iter().all(|v| *v == 1.0 / 7.0));
    }

    #[test]
    fn single_sample_gets_all_mass() {
        let w = importance_weights(&[5.0], &[1.0], 20.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn hand_normalized_pair() {
        let w = weights_from_target(&[3.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((w.as_slice()[0] - 0.75).abs() < 1e-15);
        assert!((w.as_slice()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn proposal_density_divides() {
        // Equal targets, the second sample twice as likely under the proposal.
        let w = weights_from_target(&[1.0, 1.0], &[0.0, 2f64.ln()]).unwrap();
        assert!((w.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn large_alpha_does_not_overflow() {
        let costs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let w = importance_weights(&costs, &vec![-500.0; 100], 50.0).unwrap();
        assert!(w.as_slice().iter().all(|v| v.is_finite()));
        assert!(w.as_slice()[0] > w.as_slice()[99]);
    }

    #[test]
    fn bad_inputs() {
        assert_eq!(importance_weights(&[], &[], 1.0), Err(DensityError::Empty));
        assert_eq!(importance_weights(&[f64::NAN], &[0.0], 1.0), Err(DensityError::NonFinite));
        assert!(weights_from_target(&[1.0], &[0.0, 1.0]).is_err());
    }
}
