//! Spike-and-slab logistic regression through Pólya-Gamma augmentation.
//!
//! Given `ω`, the likelihood contribution of observation `i` is
//! `½ exp(κ_i ψ_i − ω_i ψ_i² / 2)` with `κ_i = y_i − ½` and `ψ_i = x_{i,z}ᵀβ_z`,
//! so `β` is conditionally Gaussian and `z_j` has a closed-form log odds.
//! There is no noise scale in this model: `Prior::sigma` is not used.

use nalgebra::{Cholesky, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{bernoulli_logit, randn};
use crate::model::{coordinate_log_prior, Dataset, ModelIndicator, Prior};
use crate::polya_gamma::pg_sample;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticState {
    pub beta: DVector<f64>,
    pub z: ModelIndicator,
    pub omega: DVector<f64>,
}

impl LogisticState {
    /// `β = 0`, empty model, `ω` at the `PG(1, 0)` mean.
    pub fn initial(n: usize, p: usize) -> Self {
        Self {
            beta: DVector::zeros(p),
            z: ModelIndicator::empty(p),
            omega: DVector::from_element(n, 0.25),
        }
    }
}

/// Message for callers that hand a non-unit noise scale to the logistic model.
pub fn sigma_warning(prior: &Prior) -> Option<String> {
    (prior.sigma() != 1.0).then(|| {
        format!("logistic model has no noise scale; sigma = {} is ignored", prior.sigma())
    })
}

pub fn check_binary(data: &Dataset) -> Result<()> {
    if data.y().iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(Error::InvalidConfig("logistic response must be 0/1".into()))
    }
}

fn linear_predictor(beta: &DVector<f64>, z: &ModelIndicator, data: &Dataset) -> DVector<f64> {
    let mut psi = DVector::zeros(data.n());
    for j in z.active() {
        psi.axpy(beta[j], &data.x().column(j), 1.0);
    }
    psi
}

/// Augmented log density `log p(y, β, z | ω)` relative to the `PG(1, 0)`
/// base measure of `ω`.
pub fn logistic_log_joint(state: &LogisticState, data: &Dataset, prior: &Prior) -> f64 {
    let psi = linear_predictor(&state.beta, &state.z, data);
    let mut v = 0.0;
    for i in 0..data.n() {
        let kappa = data.y()[i] - 0.5;
        v += -std::f64::consts::LN_2 + kappa * psi[i] - 0.5 * state.omega[i] * psi[i] * psi[i];
    }
    for j in 0..data.p() {
        v += coordinate_log_prior(state.beta[j], state.z.get(j), prior);
    }
    v
}

/// Log odds of `z_j = 1` against `z_j = 0` given `β`, `ω` and `z_{−j}`.
pub fn logistic_site_logit(j: usize, state: &LogisticState, data: &Dataset, prior: &Prior) -> f64 {
    let mut psi = linear_predictor(&state.beta, &state.z, data);
    if state.z.get(j) {
        psi.axpy(-state.beta[j], &data.x().column(j), 1.0);
    }
    site_logit(j, state.beta[j], &psi, &state.omega, data, prior)
}

/// `psi_rest` is the linear predictor without coordinate `j`.
fn site_logit(
    j: usize,
    b: f64,
    psi_rest: &DVector<f64>,
    omega: &DVector<f64>,
    data: &Dataset,
    prior: &Prior,
) -> f64 {
    let col = data.x().column(j);
    let (mut lin, mut quad) = (0.0, 0.0);
    for i in 0..data.n() {
        let x = col[i];
        lin += x * (data.y()[i] - 0.5 - omega[i] * psi_rest[i]);
        quad += omega[i] * x * x;
    }
    let (t0, t1) = (prior.tau0(), prior.tau1());
    prior.log_prior_odds() + (t0 / t1).ln() - 0.5 * (1.0 / (t1 * t1) - 1.0 / (t0 * t0)) * b * b
        + b * lin
        - 0.5 * b * b * quad
}

/// One sweep: `β | z, ω`, then `ω | β, z`, then `z_j` for `j = 0..p`.
pub fn logistic_gibbs_sweep<R: Rng + ?Sized>(
    state: &mut LogisticState,
    data: &Dataset,
    prior: &Prior,
    rng: &mut R,
) -> Result<()> {
    let (n, p) = (data.n(), data.p());
    if state.omega.len() != n || state.beta.len() != p || state.z.len() != p {
        return Err(Error::Dimension("logistic state does not match the data".into()));
    }

    // β | z, ω: precision X̄ᵀΩX̄ + I/τ1², mean from X̄ᵀκ.
    let active = state.z.active();
    let xz = data.columns(&active);
    let mut weighted = xz.clone();
    for i in 0..n {
        weighted.row_mut(i).scale_mut(state.omega[i]);
    }
    let mut precision = xz.tr_mul(&weighted);
    for i in 0..active.len() {
        precision[(i, i)] += 1.0 / (prior.tau1() * prior.tau1());
    }
    let kappa = data.y().map(|v| v - 0.5);
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::Numerical("logistic precision is not positive definite".into()))?;
    let mean = chol.solve(&xz.tr_mul(&kappa));
    let xi = DVector::from_fn(active.len(), |_, _| randn(rng));
    let noise = chol.l().tr_solve_lower_triangular(&xi).expect("Cholesky factor is invertible");
    let draw = mean + noise;
    let mut next = draw.iter();
    for j in 0..p {
        state.beta[j] = if state.z.get(j) {
            *next.next().expect("draw covers the active set")
        } else {
            prior.tau0() * randn(rng)
        };
    }

    // ω | β, z
    let mut psi = linear_predictor(&state.beta, &state.z, data);
    for i in 0..n {
        state.omega[i] = pg_sample(psi[i], rng);
    }

    // z_j | β, ω, z_{−j}
    for j in 0..p {
        let b = state.beta[j];
        let col = data.x().column(j);
        if state.z.get(j) {
            psi.axpy(-b, &col, 1.0);
        }
        let on = bernoulli_logit(site_logit(j, b, &psi, &state.omega, data, prior), rng);
        if on {
            psi.axpy(b, &col, 1.0);
        }
        state.z.set(j, on);
    }
    Ok(())
}
