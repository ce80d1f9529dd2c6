//! Importance-weighted variational Bayes EM for a Gaussian mixture with a
//! Dirichlet prior on the mixing weights and a Gaussian-Wishart prior on
//! each component.
//!
//! Weights are rescaled internally to sum to the number of points, so a
//! uniformly weighted fit is exactly the unweighted fit. The data are
//! centered on their weighted mean, which puts the prior mean at zero.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use super::{DensityError, EmbeddedBatch, ImportanceWeights};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbemPriors {
    pub alpha0: f64,
    pub beta0: f64,
    /// Defaults to d + 2.
    pub nu0: Option<f64>,
    /// Prior component variance as a fraction of the mean data variance.
    pub spread: f64,
}

impl Default for VbemPriors {
    fn default() -> Self {
        Self {
            alpha0: 1e-3,
            beta0: 1.0,
            nu0: None,
            spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VbemInit {
    /// Weighted k-means++ seeding followed by hard assignment.
    KMeansPlusPlus { seed: u64 },
    /// Explicit N x m responsibilities.
    Responsibilities(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbemParams {
    pub max_components: usize,
    pub priors: VbemPriors,
    pub max_iters: usize,
    /// Relative change of the objective below which the fit stops.
    pub tol: f64,
    pub init: VbemInit,
}

impl Default for VbemParams {
    fn default() -> Self {
        Self {
            max_components: 10,
            priors: VbemPriors::default(),
            max_iters: 500,
            tol: 1e-9,
            init: VbemInit::KMeansPlusPlus { seed: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGmmPosterior {
    pub dirichlet_alpha: Vec<f64>,
    pub precision_scale: Vec<f64>,
    /// Component means in input coordinates.
    pub means: Vec<DVector<f64>>,
    pub wishart_dof: Vec<f64>,
    pub wishart_scale: Vec<DMatrix<f64>>,
    /// N x m; rows sum to one.
    pub responsibilities: DMatrix<f64>,
    /// Weighted mass per component; sums to N.
    pub effective_mass: Vec<f64>,
    pub surviving: Vec<bool>,
    pub alpha0: f64,
    pub beta0: f64,
    pub nu0: f64,
    pub k0: DMatrix<f64>,
    /// Weighted data mean; the prior mean in input coordinates.
    pub center: DVector<f64>,
    /// Objective after every M-step of the run that produced this posterior.
    pub elbo_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of scale updates that needed diagonal jitter.
    pub jitter_events: usize,
    /// Accepted component deletions.
    pub deletions: usize,
}

impl WeightedGmmPosterior {
    pub fn components(&self) -> usize {
        self.dirichlet_alpha.len()
    }

    pub fn surviving_count(&self) -> usize {
        self.surviving.iter().filter(|s| **s).count()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

struct Fit<'a> {
    x: &'a DMatrix<f64>,
    w: &'a [f64],
    alpha0: f64,
    beta0: f64,
    nu0: f64,
    k0: DMatrix<f64>,
    k0_inv: DMatrix<f64>,
}

struct Run {
    params: Params,
    responsibilities: DMatrix<f64>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

#[derive(Clone)]
struct Params {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    h: Vec<DVector<f64>>,
    nu: Vec<f64>,
    k: Vec<DMatrix<f64>>,
    ln_det_k: Vec<f64>,
    gamma: Vec<f64>,
}

fn invert_spd(m: &DMatrix<f64>, jitter_events: &mut usize) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let mut attempt = sym.clone();
    let mut added = 0.0;
    loop {
        if let Some(ch) = Cholesky::<f64, Dyn>::new(attempt.clone()) {
            let ln_det: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            return (ch.inverse(), -ln_det);
        }
        *jitter_events += 1;
        added = if added == 0.0 { JITTER } else { added * 10.0 };
        attempt = &sym + DMatrix::identity(m.nrows(), m.ncols()) * added;
    }
}

fn sum_digamma(nu: f64, d: usize) -> f64 {
    (1..=d).map(|j| digamma(0.5 * (nu + 1.0 - j as f64))).sum()
}

impl Fit<'_> {
    fn m_step(&self, r: &DMatrix<f64>, jitter_events: &mut usize) -> Params {
        let (n, d) = self.x.shape();
        let m = r.ncols();
        let mut p = Params {
            alpha: Vec::with_capacity(m),
            beta: Vec::with_capacity(m),
            h: Vec::with_capacity(m),
            nu: Vec::with_capacity(m),
            k: Vec::with_capacity(m),
            ln_det_k: Vec::with_capacity(m),
            gamma: Vec::with_capacity(m),
        };
        for l in 0..m {
            let gamma: f64 = (0..n).map(|i| self.w[i] * r[(i, l)]).sum();
            let mut c = DVector::zeros(d);
            if gamma > 0.0 {
                for i in 0..n {
                    c.axpy(self.w[i] * r[(i, l)], &self.x.row(i).transpose(), 1.0);
                }
                c /= gamma;
            }
            let mut k_inv = self.k0_inv.clone();
            for i in 0..n {
                let wr = self.w[i] * r[(i, l)];
                if wr == 0.0 {
                    continue;
                }
                let dx = self.x.row(i).transpose() - &c;
                k_inv.ger(wr, &dx, &dx, 1.0);
            }
            k_inv.ger(self.beta0 * gamma / (self.beta0 + gamma), &c, &c, 1.0);
            let (k, ln_det_k) = invert_spd(&k_inv, jitter_events);
            let beta = self.beta0 + gamma;
            p.alpha.push(self.alpha0 + gamma);
            p.beta.push(beta);
            p.h.push(c * (gamma / beta));
            p.nu.push(self.nu0 + gamma);
            p.k.push(k);
            p.ln_det_k.push(ln_det_k);
            p.gamma.push(gamma);
        }
        p
    }

    fn e_step(&self, p: &Params, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.e_step_masked(p, x, &vec![true; p.alpha.len()])
    }

    fn e_step_masked(&self, p: &Params, x: &DMatrix<f64>, active: &[bool]) -> DMatrix<f64> {
        let (n, d) = x.shape();
        let m = p.alpha.len();
        let psi_total = digamma(p.alpha.iter().sum());
        let base: Vec<f64> = (0..m)
            .map(|l| {
                digamma(p.alpha[l]) - psi_total + 0.5 * sum_digamma(p.nu[l], d) + 0.5 * p.ln_det_k[l]
                    - d as f64 / (2.0 * p.beta[l])
            })
            .collect();
        let mut r = DMatrix::zeros(n, m);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let mut row: Vec<f64> = (0..m)
                .map(|l| {
                    if !active[l] {
                        return f64::NEG_INFINITY;
                    }
                    let dx = &xi - &p.h[l];
                    base[l] - 0.5 * p.nu[l] * (&p.k[l] * &dx).dot(&dx)
                })
                .collect();
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in &mut row {
                *v = (*v - top).exp();
                total += *v;
            }
            for (l, v) in row.into_iter().enumerate() {
                r[(i, l)] = v / total;
            }
        }
        r
    }

    /// Coordinate ascent from initial responsibilities; ends with an E-step.
    fn run(&self, mut r: DMatrix<f64>, params: &VbemParams, jitter_events: &mut usize) -> Run {
        let mut p = self.m_step(&r, jitter_events);
        let mut history = vec![self.elbo(&p, &r)];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < params.max_iters {
            iterations += 1;
            r = self.e_step(&p, self.x);
            p = self.m_step(&r, jitter_events);
            let value = self.elbo(&p, &r);
            let previous = *history.last().unwrap();
            history.push(value);
            if (value - previous).abs() <= params.tol * value.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        Run {
            responsibilities: self.e_step(&p, self.x),
            params: p,
            history,
            iterations,
            converged,
        }
    }

    fn ln_wishart_norm(&self, ln_det_w: f64, nu: f64) -> f64 {
        let d = self.x.ncols() as f64;
        let gammas: f64 = (1..=self.x.ncols()).map(|j| ln_gamma(0.5 * (nu + 1.0 - j as f64))).sum();
        -0.5 * nu * ln_det_w - (0.5 * nu * d * std::f64::consts::LN_2 + 0.25 * d * (d - 1.0) * std::f64::consts::PI.ln() + gammas)
    }

    fn elbo(&self, p: &Params, r: &DMatrix<f64>) -> f64 {
        let (n, du) = self.x.shape();
        let d = du as f64;
        let m = p.alpha.len();
        let alpha_total: f64 = p.alpha.iter().sum();
        let psi_total = digamma(alpha_total);
        let ln_det_k0 = self.k0.determinant().ln();
        let ln_b0 = self.ln_wishart_norm(ln_det_k0, self.nu0);

        let mut total = ln_gamma(m as f64 * self.alpha0) - m as f64 * ln_gamma(self.alpha0);
        total -= ln_gamma(alpha_total) - p.alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>();
        for l in 0..m {
            let ln_pi = digamma(p.alpha[l]) - psi_total;
            let ln_lambda = sum_digamma(p.nu[l], du) + d * std::f64::consts::LN_2 + p.ln_det_k[l];
            let gamma: f64 = (0..n).map(|i| self.w[i] * r[(i, l)]).sum();
            let mut c = DVector::zeros(du);
            if gamma > 0.0 {
                for i in 0..n {
                    c.axpy(self.w[i] * r[(i, l)], &self.x.row(i).transpose(), 1.0);
                }
                c /= gamma;
            }

            let mut scatter_trace = 0.0;
            for i in 0..n {
                let wr = self.w[i] * r[(i, l)];
                if wr == 0.0 {
                    continue;
                }
                let dx = self.x.row(i).transpose() - &c;
                scatter_trace += wr * (&p.k[l] * &dx).dot(&dx);
            }
            let dc = &c - &p.h[l];
            total += 0.5
                * (gamma * (ln_lambda - d / p.beta[l] - d * LN_2PI)
                    - p.nu[l] * scatter_trace
                    - p.nu[l] * gamma * (&p.k[l] * &dc).dot(&dc));
            total += gamma * ln_pi;
            total += (self.alpha0 - 1.0) * ln_pi;
            total += 0.5
                * (d * (self.beta0.ln() - LN_2PI) + ln_lambda
                    - d * self.beta0 / p.beta[l]
                    - self.beta0 * p.nu[l] * (&p.k[l] * &p.h[l]).dot(&p.h[l]));
            total += ln_b0 + 0.5 * (self.nu0 - d - 1.0) * ln_lambda;
            total -= 0.5 * p.nu[l] * (&self.k0_inv * &p.k[l]).trace();
            total -= (p.alpha[l] - 1.0) * ln_pi;
            let entropy = -self.ln_wishart_norm(p.ln_det_k[l], p.nu[l]) - 0.5 * (p.nu[l] - d - 1.0) * ln_lambda
                + 0.5 * p.nu[l] * d;
            total -= 0.5 * ln_lambda + 0.5 * d * (p.beta[l].ln() - LN_2PI) - 0.5 * d - entropy;
            for i in 0..n {
                let rv = r[(i, l)];
                if rv > 0.0 {
                    total -= self.w[i] * rv * rv.ln();
                }
            }
        }
        total
    }
}

fn check_inputs(points: &EmbeddedBatch, weights: &ImportanceWeights) -> Result<Vec<f64>, DensityError> {
    let n = points.len();
    if n == 0 {
        return Err(DensityError::Empty);
    }
    if weights.len() != n {
        return Err(DensityError::Shape(format!("{} points but {} weights", n, weights.len())));
    }
    if points.points.iter().any(|v| !v.is_finite()) || weights.as_slice().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(DensityError::NonFinite);
    }
    let total: f64 = weights.as_slice().iter().sum();
    if !(total > 0.0) {
        return Err(DensityError::NonFinite);
    }
    Ok(weights.as_slice().iter().map(|w| w * n as f64 / total).collect())
}

fn weighted_center(x: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    let total: f64 = w.iter().sum();
    let mut c = DVector::zeros(x.ncols());
    for (i, wi) in w.iter().enumerate() {
        c.axpy(*wi / total, &x.row(i).transpose(), 1.0);
    }
    c
}

fn kmeans_pp(x: &DMatrix<f64>, w: &[f64], m: usize, seed: u64) -> DMatrix<f64> {
    let n = x.nrows();
    let mut rng = rng::stream(rng::derive(seed, 0x6b6d_6561_6e73), 0);
    let pick = |scores: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> usize {
        let total: f64 = scores.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, s) in scores.iter().enumerate() {
            if *s > 0.0 {
                if u < *s {
                    return i;
                }
                u -= s;
            }
        }
        scores.iter().rposition(|s| *s > 0.0).unwrap_or(0)
    };
    let dist2 = |i: usize, j: usize| (x.row(i) - x.row(j)).norm_squared();
    let mut centers = vec![pick(w, &mut rng)];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(i, centers[0])).collect();
    while centers.len() < m {
        let scores: Vec<f64> = (0..n).map(|i| w[i] * nearest[i]).collect();
        if !(scores.iter().sum::<f64>() > 0.0) {
            break;
        }
        let c = pick(&scores, &mut rng);
        centers.push(c);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist2(i, c));
        }
    }
    let mut r = DMatrix::zeros(n, m);
    for i in 0..n {
        let mut best = 0;
        for (l, &c) in centers.iter().enumerate() {
            if dist2(i, c) < dist2(i, centers[best]) {
                best = l;
            }
        }
        r[(i, best)] = 1.0;
    }
    r
}

/// Fits the weighted mixture. Components whose final weighted mass is below
/// `2 * alpha0` are marked as not surviving.
pub fn vbem_fit(
    points: &EmbeddedBatch,
    weights: &ImportanceWeights,
    params: &VbemParams,
) -> Result<WeightedGmmPosterior, DensityError> {
    let w = check_inputs(points, weights)?;
    let pr = params.priors;
    if params.max_components == 0 {
        return Err(DensityError::InvalidParams("max_components must be at least 1".into()));
    }
    if !(pr.alpha0 > 0.0 && pr.beta0 > 0.0 && pr.spread > 0.0) || !(params.tol >= 0.0) {
        return Err(DensityError::InvalidParams("priors must be positive".into()));
    }
    let (n, d) = points.points.shape();
    let nu0 = pr.nu0.unwrap_or(d as f64 + 2.0);
    if !(nu0 > d as f64 - 1.0) {
        return Err(DensityError::InvalidParams(format!("nu0 must exceed {}", d as f64 - 1.0)));
    }

    let center = weighted_center(&points.points, &w);
    let mut x = points.points.clone();
    for mut row in x.row_iter_mut() {
        row -= center.transpose();
    }
    let mean_var = (0..n).map(|i| w[i] * x.row(i).norm_squared()).sum::<f64>() / (n as f64 * d.max(1) as f64);
    let var = if mean_var > 0.0 { mean_var } else { 1.0 };
    let k0_inv = DMatrix::identity(d, d) * (nu0 * pr.spread * var);
    let k0 = DMatrix::identity(d, d) / (nu0 * pr.spread * var);

    let fit = Fit {
        x: &x,
        w: &w,
        alpha0: pr.alpha0,
        beta0: pr.beta0,
        nu0,
        k0: k0.clone(),
        k0_inv,
    };

    let r = match &params.init {
        VbemInit::KMeansPlusPlus { seed } => kmeans_pp(&x, &w, params.max_components.min(n), *seed),
        VbemInit::Responsibilities(r0) => {
            if r0.nrows() != n || r0.ncols() == 0 || r0.ncols() > params.max_components {
                return Err(DensityError::Shape("initial responsibilities".into()));
            }
            r0.clone()
        }
    };

    let mut jitter_events = 0;
    let mut best = fit.run(r, params, &mut jitter_events);
    let mut deletions = 0;
    // Deletion moves: drop one component, refit, keep the result if the
    // objective improves. Plain coordinate ascent can stall with a cluster
    // split across several components.
    'search: loop {
        let mut order: Vec<usize> = (0..best.params.gamma.len()).filter(|l| best.params.gamma[*l] >= 2.0 * pr.alpha0).collect();
        if order.len() < 2 {
            break;
        }
        order.sort_by(|a, b| best.params.gamma[*a].total_cmp(&best.params.gamma[*b]).then(a.cmp(b)));
        let current = *best.history.last().unwrap();
        for l in order {
            let mut active: Vec<bool> = best.params.gamma.iter().map(|g| *g >= 2.0 * pr.alpha0).collect();
            active[l] = false;
            let r0 = fit.e_step_masked(&best.params, &x, &active);
            let candidate = fit.run(r0, params, &mut jitter_events);
            if *candidate.history.last().unwrap() > current + params.tol * current.abs().max(1.0) {
                best = candidate;
                deletions += 1;
                continue 'search;
            }
        }
        break;
    }
    let Run {
        params: p,
        responsibilities: r,
        history,
        iterations,
        converged,
    } = best;

    let surviving: Vec<bool> = p.gamma.iter().map(|g| *g >= 2.0 * pr.alpha0).collect();
    Ok(WeightedGmmPosterior {
        dirichlet_alpha: p.alpha,
        precision_scale: p.beta,
        means: p.h.iter().map(|h| h + &center).collect(),
        wishart_dof: p.nu,
        wishart_scale: p.k,
        responsibilities: r,
        effective_mass: p.gamma,
        surviving,
        alpha0: pr.alpha0,
        beta0: pr.beta0,
        nu0,
        k0,
        center,
        elbo_history: history,
        iterations,
        converged,
        jitter_events,
        deletions,
    })
}

fn params_of(posterior: &WeightedGmmPosterior) -> Params {
    Params {
        alpha: posterior.dirichlet_alpha.clone(),
        beta: posterior.precision_scale.clone(),
        h: posterior.means.iter().map(|h| h - &posterior.center).collect(),
        nu: posterior.wishart_dof.clone(),
        k: posterior.wishart_scale.clone(),
        ln_det_k: posterior.wishart_scale.iter().map(|k| k.determinant().ln()).collect(),
        gamma: posterior.effective_mass.clone(),
    }
}

fn centered(points: &EmbeddedBatch, center: &DVector<f64>) -> Result<DMatrix<f64>, DensityError> {
    if points.dim() != center.len() {
        return Err(DensityError::Shape(format!(
            "points have dimension {} but the posterior {}",
            points.dim(),
            center.len()
        )));
    }
    let mut x = points.points.clone();
    for mut row in x.row_iter_mut() {
        row -= center.transpose();
    }
    Ok(x)
}

/// Variational lower bound with every data term weighted, evaluated at the
/// posterior and its stored responsibilities.
pub fn weighted_elbo(
    posterior: &WeightedGmmPosterior,
    points: &EmbeddedBatch,
    weights: &ImportanceWeights,
) -> Result<f64, DensityError> {
    let w = check_inputs(points, weights)?;
    let x = centered(points, &posterior.center)?;
    if posterior.responsibilities.shape() != (points.len(), posterior.components()) {
        return Err(DensityError::Shape("responsibilities do not match the points".into()));
    }
    let d = x.ncols();
    let fit = Fit {
        x: &x,
        w: &w,
        alpha0: posterior.alpha0,
        beta0: posterior.beta0,
        nu0: posterior.nu0,
        k0: posterior.k0.clone(),
        k0_inv: posterior.k0.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(d, d)),
    };
    Ok(fit.elbo(&params_of(posterior), &posterior.responsibilities))
}

/// Responsibilities of `points` under the posterior.
pub fn responsibilities(posterior: &WeightedGmmPosterior, points: &EmbeddedBatch) -> Result<DMatrix<f64>, DensityError> {
    let x = centered(points, &posterior.center)?;
    let w = vec![1.0; x.nrows()];
    let d = x.ncols();
    let fit = Fit {
        x: &x,
        w: &w,
        alpha0: posterior.alpha0,
        beta0: posterior.beta0,
        nu0: posterior.nu0,
        k0: posterior.k0.clone(),
        k0_inv: DMatrix::identity(d, d),
    };
    Ok(fit.e_step(&params_of(posterior), &x))
}

/// Argmax of each responsibility row over surviving components; ties go to
/// the lowest index.
pub fn assign_clusters(posterior: &WeightedGmmPosterior, points: &EmbeddedBatch) -> Result<Vec<usize>, DensityError> {
    let r = responsibilities(posterior, points)?;
    Ok(argmax_rows(&r, &posterior.surviving))
}

pub(crate) fn argmax_rows(r: &DMatrix<f64>, surviving: &[bool]) -> Vec<usize> {
    let any = surviving.iter().any(|s| *s);
    r.row_iter()
        .map(|row| {
            let mut best: Option<usize> = None;
            for l in 0..row.len() {
                if any && !surviving[l] {
                    continue;
                }
                if best.is_none_or(|b| row[l] > row[b]) {
                    best = Some(l);
                }
            }
            best.unwrap_or(0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn batch(rows: &[Vec<f64>]) -> EmbeddedBatch {
        let d = rows[0].len();
        EmbeddedBatch {
            points: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
            source_indices: (0..rows.len()).collect(),
        }
    }

    fn blob(seed: u64, center: &[f64], sd: f64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(seed, 0);
        (0..n)
            .map(|_| center.iter().map(|c| c + sd * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn single_blob_keeps_one_component() {
        let pts = blob(1, &[1.0, -2.0, 0.5], 0.1, 200);
        let b = batch(&pts);
        let post = vbem_fit(&b, &ImportanceWeights::uniform(200), &VbemParams::default()).unwrap();
        assert_eq!(post.surviving_count(), 1);
        let l = post.surviving.iter().position(|s| *s).unwrap();
        let mean = weighted_center(&b.points, &[1.0; 200]);
        assert!((&post.means[l] - mean).norm() < 0.1);
    }

    #[test]
    fn two_blobs_keep_two_components() {
        let mut pts = blob(2, &[0.0, 0.0], 1.0, 100);
        pts.extend(blob(3, &[10.0, 0.0], 1.0, 100));
        let b = batch(&pts);
        let post = vbem_fit(&b, &ImportanceWeights::uniform(200), &VbemParams::default()).unwrap();
        assert_eq!(post.surviving_count(), 2);
        let labels = assign_clusters(&post, &b).unwrap();
        assert!(labels[..100].iter().all(|l| *l == labels[0]));
        assert!(labels[100..].iter().all(|l| *l == labels[100]));
        assert_ne!(labels[0], labels[100]);
    }

    #[test]
    fn objective_is_monotone_and_reproducible() {
        let mut pts = blob(5, &[0.0, 0.0, 0.0], 1.0, 60);
        pts.extend(blob(6, &[4.0, 1.0, 0.0], 0.5, 40));
        let b = batch(&pts);
        let post = vbem_fit(&b, &ImportanceWeights::uniform(100), &VbemParams::default()).unwrap();
        for pair in post.elbo_history.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-8 * pair[0].abs().max(1.0), "{pair:?}");
        }
        let again = vbem_fit(&b, &ImportanceWeights::uniform(100), &VbemParams::default()).unwrap();
        assert_eq!(post, again);
        let value = weighted_elbo(&post, &b, &ImportanceWeights::uniform(100)).unwrap();
        assert!(value.is_finite());
        assert!(value >= *post.elbo_history.last().unwrap() - 1e-8 * value.abs());
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let r = DMatrix::from_row_slice(2, 3, &[0.5, 0.5, 0.0, 0.2, 0.4, 0.4]);
        assert_eq!(argmax_rows(&r, &[true, true, true]), vec![0, 1]);
        assert_eq!(argmax_rows(&r, &[false, true, true]), vec![1, 1]);
    }

    #[test]
    fn degenerate_dimension_fits() {
        let b = EmbeddedBatch {
            points: DMatrix::zeros(5, 0),
            source_indices: (0..5).collect(),
        };
        let post = vbem_fit(&b, &ImportanceWeights::uniform(5), &VbemParams::default()).unwrap();
        assert_eq!(post.surviving_count(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let b = batch(&blob(1, &[0.0], 1.0, 5));
        assert!(vbem_fit(&b, &ImportanceWeights::uniform(4), &VbemParams::default()).is_err());
        let params = VbemParams {
            max_components: 0,
            ..VbemParams::default()
        };
        assert!(vbem_fit(&b, &ImportanceWeights::uniform(5), &params).is_err());
    }
}
