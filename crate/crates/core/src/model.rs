//! Core types and exact densities of the spike-and-slab posterior under the
//! sparsified likelihood, plus the brute-force enumeration over models.
//!
//! Conventions: [`log_joint_density`] is the fully normalized log joint of
//! `(y, β, z)`. [`model_marginal_log`] is `log π(z | y)` up to an additive
//! constant that does not depend on `z`; [`marginal_offset`] supplies that
//! constant when the full evidence `log p(y, z)` is needed.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::ShiftedGram;
use crate::math::{log_sum_exp, LN_2PI};

/// Hyperparameters of the spike-and-slab prior and the noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    q: f64,
    tau0: f64,
    tau1: f64,
    sigma: f64,
    delta: f64,
}

impl Prior {
    /// Validates `0 < q < 1`, `0 < tau0 ≤ tau1` and `sigma > 0`. The scaling
    /// exponent defaults to 1.
    pub fn new(q: f64, tau0: f64, tau1: f64, sigma: f64) -> Result<Self> {
        let finite = [q, tau0, tau1, sigma].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidPrior("non-finite hyperparameter".into()));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidPrior(format!("q = {q} outside (0, 1)")));
        }
        if !(tau0 > 0.0) {
            return Err(Error::InvalidPrior(format!("tau0 = {tau0} must be positive")));
        }
        if tau1 < tau0 {
            return Err(Error::InvalidPrior(format!("tau1 = {tau1} below tau0 = {tau0}")));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidPrior(format!("sigma = {sigma} must be positive")));
        }
        Ok(Self { q, tau0, tau1, sigma, delta: 1.0 })
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidPrior(format!("delta = {delta} must be non-negative")));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn with_sigma(self, sigma: f64) -> Result<Self> {
        Prior::new(self.q, self.tau0, self.tau1, sigma)?.with_delta(self.delta)
    }

    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn tau0(&self) -> f64 {
        self.tau0
    }
    pub fn tau1(&self) -> f64 {
        self.tau1
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `log(q / (1 − q))`.
    pub fn log_prior_odds(&self) -> f64 {
        self.q.ln() - (-self.q).ln_1p()
    }

    /// Slab-to-noise variance ratio `τ1² / σ²`.
    pub(crate) fn slab_ratio(&self) -> f64 {
        (self.tau1 / self.sigma).powi(2)
    }
}

/// Binary inclusion vector with a cached count of active coordinates.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ModelIndicator {
    bits: Vec<bool>,
    active_count: usize,
}

impl ModelIndicator {
    pub fn empty(p: usize) -> Self {
        Self { bits: vec![false; p], active_count: 0 }
    }

    pub fn full(p: usize) -> Self {
        Self { bits: vec![true; p], active_count: p }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let active_count = bits.iter().filter(|&&b| b).count();
        Self { bits, active_count }
    }

    pub fn from_active(p: usize, active: &[usize]) -> Result<Self> {
        let mut z = Self::empty(p);
        for &j in active {
            if j >= p {
                return Err(Error::Dimension(format!("index {j} out of range for p = {p}")));
            }
            z.set(j, true);
        }
        Ok(z)
    }

    /// Bit `j` of `mask` becomes coordinate `j`. Requires `p ≤ 64`.
    pub fn from_mask(p: usize, mask: u64) -> Self {
        debug_assert!(p <= 64);
        Self::from_bits((0..p).map(|j| mask >> j & 1 == 1).collect())
    }

    pub fn to_mask(&self) -> Option<u64> {
        if self.bits.len() > 64 {
            return None;
        }
        Some(self.bits.iter().enumerate().fold(0u64, |m, (j, &b)| m | (b as u64) << j))
    }

    /// Parses a string of `0`/`1` characters, coordinate 0 first.
    pub fn parse_bits(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("unexpected character {other:?} in model bits"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bits(bits))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn get(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn set(&mut self, j: usize, value: bool) {
        if self.bits[j] != value {
            self.bits[j] = value;
            if value {
                self.active_count += 1;
            } else {
                self.active_count -= 1;
            }
        }
    }

    pub fn flip(&mut self, j: usize) {
        let v = !self.bits[j];
        self.set(j, v);
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn active(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect()
    }

    pub fn inactive(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| !b).map(|(j, _)| j).collect()
    }

    pub fn is_subset_of(&self, other: &ModelIndicator) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Coordinates where the two indicators differ.
    pub fn differences(&self, other: &ModelIndicator) -> Vec<usize> {
        self.bits
            .iter()
            .zip(&other.bits)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn hamming(&self, other: &ModelIndicator) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

impl fmt::Debug for ModelIndicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z[{}]", self.to_bit_string())
    }
}

impl fmt::Display for ModelIndicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

/// Planted signal of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta_star: DVector<f64>,
    pub z_star: ModelIndicator,
}

impl Truth {
    /// Truth whose support is read off the nonzero entries of `beta_star`.
    pub fn from_beta(beta_star: DVector<f64>) -> Self {
        let z_star = ModelIndicator::from_bits(beta_star.iter().map(|&b| b != 0.0).collect());
        Self { beta_star, z_star }
    }
}

/// Fixed design, response and optional planted truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    truth: Option<Truth>,
    col_sq_norms: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "X has {} rows but y has length {}",
                x.nrows(),
                y.len()
            )));
        }
        let col_sq_norms = x.column_iter().map(|c| c.norm_squared()).collect();
        Ok(Self { x, y, truth: None, col_sq_norms })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        let p = self.p();
        if truth.beta_star.len() != p || truth.z_star.len() != p {
            return Err(Error::Dimension(format!("truth does not have length p = {p}")));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }
    /// `‖X_j‖²`, precomputed.
    pub fn col_sq_norm(&self, j: usize) -> f64 {
        self.col_sq_norms[j]
    }

    /// Copy of the columns listed in `cols`, in that order.
    pub fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        self.x.select_columns(cols.iter())
    }

    pub(crate) fn check_model(&self, z: &ModelIndicator) -> Result<()> {
        if z.len() != self.p() {
            return Err(Error::Dimension(format!(
                "model has length {} but p = {}",
                z.len(),
                self.p()
            )));
        }
        Ok(())
    }
}

/// Joint sampler state `(β, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub beta: DVector<f64>,
    pub z: ModelIndicator,
}

impl JointState {
    pub fn new(beta: DVector<f64>, z: ModelIndicator) -> Result<Self> {
        if beta.len() != z.len() {
            return Err(Error::Dimension("beta and z lengths differ".into()));
        }
        Ok(Self { beta, z })
    }

    pub fn zeros(p: usize) -> Self {
        Self { beta: DVector::zeros(p), z: ModelIndicator::empty(p) }
    }
}

/// Normalized posterior over models, enumerated over a set of free
/// coordinates; every coordinate outside `columns` is fixed inactive.
#[derive(Debug, Clone)]
pub struct PosteriorTable {
    p: usize,
    columns: Vec<usize>,
    log_probs: Vec<f64>,
    log_norm: f64,
}

impl PosteriorTable {
    pub fn p(&self) -> usize {
        self.p
    }

    /// Coordinates that were enumerated.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// Number of models in the table.
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Log of the normalizing constant of the unnormalized model marginals.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Model at local index `i`: bit `b` of `i` switches on `columns[b]`.
    pub fn model(&self, i: usize) -> ModelIndicator {
        let mut z = ModelIndicator::empty(self.p);
        for (b, &j) in self.columns.iter().enumerate() {
            if i >> b & 1 == 1 {
                z.set(j, true);
            }
        }
        z
    }

    pub fn prob_at(&self, i: usize) -> f64 {
        self.log_probs[i].exp()
    }

    pub fn log_prob_at(&self, i: usize) -> f64 {
        self.log_probs[i]
    }

    /// Local index of `z`, or `None` if `z` switches on a fixed coordinate.
    pub fn index_of(&self, z: &ModelIndicator) -> Option<usize> {
        if z.len() != self.p {
            return None;
        }
        let mut idx = 0usize;
        let mut seen = 0usize;
        for (b, &j) in self.columns.iter().enumerate() {
            if z.get(j) {
                idx |= 1 << b;
                seen += 1;
            }
        }
        (seen == z.active_count()).then_some(idx)
    }

    pub fn prob(&self, z: &ModelIndicator) -> f64 {
        self.index_of(z).map_or(0.0, |i| self.prob_at(i))
    }

    pub fn entries(&self) -> impl Iterator<Item = (ModelIndicator, f64)> + '_ {
        (0..self.len()).map(move |i| (self.model(i), self.prob_at(i)))
    }

    pub fn inclusion_probs(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.p);
        for i in 0..self.len() {
            let pr = self.prob_at(i);
            for (b, &j) in self.columns.iter().enumerate() {
                if i >> b & 1 == 1 {
                    out[j] += pr;
                }
            }
        }
        out
    }

    pub fn most_probable(&self) -> ModelIndicator {
        let best = self
            .log_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        self.model(best)
    }

    /// Builds a table from unnormalized log weights over the given columns.
    pub fn from_log_weights(p: usize, columns: Vec<usize>, mut log_w: Vec<f64>) -> Result<Self> {
        if log_w.len() != 1usize << columns.len() {
            return Err(Error::Dimension("weights do not cover all subsets of the columns".into()));
        }
        let log_norm = log_sum_exp(&log_w);
        if !log_norm.is_finite() {
            return Err(Error::Numerical("model weights are not normalizable".into()));
        }
        for w in log_w.iter_mut() {
            *w -= log_norm;
        }
        Ok(Self { p, columns, log_probs: log_w, log_norm })
    }
}

/// Fully normalized `log p(y, β, z)`.
pub fn log_joint_density(state: &JointState, data: &Dataset, prior: &Prior) -> Result<f64> {
    data.check_model(&state.z)?;
    if state.beta.len() != data.p() {
        return Err(Error::Dimension("beta length differs from p".into()));
    }
    let n = data.n() as f64;
    let sigma2 = prior.sigma * prior.sigma;
    let mut resid = data.y.clone();
    for j in state.z.active() {
        resid.axpy(-state.beta[j], &data.x.column(j), 1.0);
    }
    let mut value = -0.5 * n * (LN_2PI + sigma2.ln()) - resid.norm_squared() / (2.0 * sigma2);
    for (j, &zj) in state.z.bits().iter().enumerate() {
        value += coordinate_log_prior(state.beta[j], zj, prior);
    }
    Ok(value)
}

/// `log q N(β; 0, τ1²)` when active, `log (1 − q) N(β; 0, τ0²)` otherwise.
pub(crate) fn coordinate_log_prior(beta: f64, active: bool, prior: &Prior) -> f64 {
    let (w, tau) = if active { (prior.q, prior.tau1) } else { (1.0 - prior.q, prior.tau0) };
    w.ln() + crate::math::normal_log_pdf(beta, tau)
}

/// `log π(z | y)` up to a `z`-independent constant, via the `‖z‖₀ × ‖z‖₀`
/// inner matrix whenever `‖z‖₀ < n`.
pub fn model_marginal_log(z: &ModelIndicator, data: &Dataset, prior: &Prior) -> Result<f64> {
    data.check_model(z)?;
    let a = ShiftedGram::new(data.columns(&z.active()), prior.slab_ratio())?;
    Ok(marginal_from_factor(z.active_count(), &a, data.y(), prior))
}

/// Same value as [`model_marginal_log`] through the dense `n × n` path.
pub fn model_marginal_log_dense(z: &ModelIndicator, data: &Dataset, prior: &Prior) -> Result<f64> {
    data.check_model(z)?;
    let a = ShiftedGram::dense(data.columns(&z.active()), prior.slab_ratio())?;
    Ok(marginal_from_factor(z.active_count(), &a, data.y(), prior))
}

fn marginal_from_factor(k: usize, a: &ShiftedGram, y: &DVector<f64>, prior: &Prior) -> f64 {
    let sigma2 = prior.sigma * prior.sigma;
    k as f64 * prior.log_prior_odds() - a.quad_form(y) / (2.0 * sigma2) - 0.5 * a.log_det()
}

/// Constant that turns [`model_marginal_log`] into the full evidence
/// `log p(y, z)`.
pub fn marginal_offset(data: &Dataset, prior: &Prior) -> f64 {
    let n = data.n() as f64;
    data.p() as f64 * (-prior.q).ln_1p() - 0.5 * n * (LN_2PI + 2.0 * prior.sigma.ln())
}

/// `log π(z2 | y) − log π(z1 | y)` for nested `z1 ⊂ z2`, via a rank-`m`
/// update of the smaller model's factor.
pub fn model_ratio_log(
    z1: &ModelIndicator,
    z2: &ModelIndicator,
    data: &Dataset,
    prior: &Prior,
) -> Result<f64> {
    data.check_model(z1)?;
    data.check_model(z2)?;
    if !z1.is_subset_of(z2) {
        return Err(Error::NotNested);
    }
    let added = z1.differences(z2);
    if added.is_empty() {
        return Ok(0.0);
    }
    let c = prior.slab_ratio();
    let sigma2 = prior.sigma * prior.sigma;
    let a = ShiftedGram::new(data.columns(&z1.active()), c)?;
    let u = data.columns(&added);
    let a_inv_u = a.solve(&u);
    let w = a_inv_u.tr_mul(data.y());
    let mut inner = u.tr_mul(&a_inv_u);
    for i in 0..added.len() {
        inner[(i, i)] += 1.0 / c;
    }
    let chol = Cholesky::new(inner)
        .ok_or_else(|| Error::Numerical("rank update matrix is not positive definite".into()))?;
    let m = added.len() as f64;
    // det(I + c ΔᵀA⁻¹Δ) = cᵐ det(I/c + ΔᵀA⁻¹Δ)
    let log_det = m * c.ln() + chol.ln_determinant();
    let quad = w.dot(&chol.solve(&w));
    Ok(m * prior.log_prior_odds() - 0.5 * log_det + quad / (2.0 * sigma2))
}

/// Default cap on the number of enumerated coordinates.
pub const DEFAULT_P_MAX: usize = 16;

/// Exact posterior over all `2^p` models.
pub fn enumerate_posterior(data: &Dataset, prior: &Prior, p_max: usize) -> Result<PosteriorTable> {
    let cols: Vec<usize> = (0..data.p()).collect();
    enumerate_over(data, prior, &cols, p_max)
}

/// Exact posterior restricted to models supported on `columns`.
pub fn enumerate_over(
    data: &Dataset,
    prior: &Prior,
    columns: &[usize],
    p_max: usize,
) -> Result<PosteriorTable> {
    let m = columns.len();
    if m > p_max {
        return Err(Error::EnumerationGuard { p: m, p_max });
    }
    if let Some(&j) = columns.iter().find(|&&j| j >= data.p()) {
        return Err(Error::Dimension(format!("column {j} out of range")));
    }
    let gram = PoolGram::new(data, columns);
    let c = prior.slab_ratio();
    let sigma2 = prior.sigma * prior.sigma;
    let odds = prior.log_prior_odds();
    let mut log_w = Vec::with_capacity(1 << m);
    let mut local = Vec::with_capacity(m);
    let mut buf = Vec::with_capacity(m * m);
    let mut rhs = Vec::with_capacity(m);
    for mask in 0..(1usize << m) {
        local.clear();
        local.extend((0..m).filter(|b| mask >> b & 1 == 1));
        let k = local.len();
        buf.clear();
        rhs.clear();
        for &a in &local {
            for &b in &local {
                buf.push(gram.xtx[(a, b)] + if a == b { 1.0 / c } else { 0.0 });
            }
            rhs.push(gram.xty[a]);
        }
        let ld = crate::math::cholesky_in_place(&mut buf, k)
            .ok_or_else(|| Error::Numerical("inner model matrix is not positive definite".into()))?;
        let b_orig = rhs.clone();
        crate::math::cholesky_solve_in_place(&buf, k, &mut rhs);
        let fit: f64 = b_orig.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        let quad = gram.yty - fit;
        let log_det = k as f64 * c.ln() + ld;
        log_w.push(k as f64 * odds - quad / (2.0 * sigma2) - 0.5 * log_det);
    }
    PosteriorTable::from_log_weights(data.p(), columns.to_vec(), log_w)
}

/// Gram quantities of a column subset.
pub(crate) struct PoolGram {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
}

impl PoolGram {
    pub fn new(data: &Dataset, columns: &[usize]) -> Self {
        let xc = data.columns(columns);
        Self { xtx: xc.tr_mul(&xc), xty: xc.tr_mul(data.y()), yty: data.y().norm_squared() }
    }
}

/// Gaussian law of the active block of `β` given `z`:
/// `N(Σ⁻¹X̄ᵀy, σ²Σ⁻¹)` with `Σ = X̄ᵀX̄ + (σ²/τ1²)I`. Inactive coordinates are
/// independent `N(0, τ0²)` and are not represented here.
#[derive(Debug, Clone)]
pub struct BetaConditional {
    pub active: Vec<usize>,
    pub mean: DVector<f64>,
    /// Cholesky factor of `Σ`.
    pub precision_factor: Cholesky<f64, Dyn>,
    pub noise_var: f64,
}

impl BetaConditional {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision_factor.inverse() * self.noise_var
    }

    /// Mean of the full `β` vector (zero on inactive coordinates).
    pub fn full_mean(&self, p: usize) -> DVector<f64> {
        let mut out = DVector::zeros(p);
        for (i, &j) in self.active.iter().enumerate() {
            out[j] = self.mean[i];
        }
        out
    }
}

pub fn beta_conditional_params(
    z: &ModelIndicator,
    data: &Dataset,
    prior: &Prior,
) -> Result<BetaConditional> {
    data.check_model(z)?;
    let active = z.active();
    let xz = data.columns(&active);
    let mut sigma_mat = xz.tr_mul(&xz);
    let ridge = 1.0 / prior.slab_ratio();
    for i in 0..active.len() {
        sigma_mat[(i, i)] += ridge;
    }
    let chol = Cholesky::new(sigma_mat)
        .ok_or_else(|| Error::Numerical("conditional precision is not positive definite".into()))?;
    let mean = chol.solve(&xz.tr_mul(data.y()));
    Ok(BetaConditional { active, mean, precision_factor: chol, noise_var: prior.sigma * prior.sigma })
}
