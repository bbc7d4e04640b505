//! Lasso with the objective `‖y − Xβ‖² + λ‖β‖₁` (no ½, no 1/n), by cyclic
//! coordinate descent.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{beta_conditional_params, Dataset, JointState, ModelIndicator, Prior};
use crate::sloc::WarmStartSet;

/// Coefficients with magnitude above this count as selected.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    /// Duality gap target, relative to `max(1, ‖y‖²)`.
    pub gap_tol: f64,
    pub max_passes: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { gap_tol: 1e-8, max_passes: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub gap: f64,
    pub passes: usize,
}

impl LassoFit {
    pub fn support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.beta[j].abs() > SUPPORT_THRESHOLD).collect()
    }
}

/// Noise-level penalty `2σ√(2n log p)` for columns with `‖x_j‖² = n`.
pub fn default_lambda(n: usize, p: usize, sigma: f64) -> f64 {
    2.0 * sigma * (2.0 * n as f64 * (p.max(2) as f64).ln()).sqrt()
}

pub fn lasso_fit(data: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    Ok(lasso_fit_with(data, lambda, &LassoConfig::default())?.beta)
}

pub fn lasso_fit_with(data: &Dataset, lambda: f64, config: &LassoConfig) -> Result<LassoFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig("lambda must be finite and non-negative".into()));
    }
    let (x, y) = (data.x(), data.y());
    let p = data.p();
    let norms: Vec<f64> = (0..p).map(|j| data.col_sq_norm(j)).collect();
    let mut beta = DVector::zeros(p);
    let mut resid = y.clone();
    let scale = y.norm_squared().max(1.0);
    let half = lambda / 2.0;
    let mut gap = duality_gap(data, &beta, &resid, lambda);
    for pass in 1..=config.max_passes {
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let old = beta[j];
            let rho = col.dot(&resid) + norms[j] * old;
            let new = soft_threshold(rho, half) / norms[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                beta[j] = new;
            }
        }
        if pass % 50 == 0 {
            // Refresh the running residual against rounding drift.
            resid = y - x * &beta;
        }
        gap = duality_gap(data, &beta, &resid, lambda);
        if gap <= config.gap_tol * scale {
            return Ok(LassoFit { beta, gap, passes: pass });
        }
    }
    Err(Error::NoConvergence { iterations: config.max_passes, residual: gap })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Primal minus dual objective at the scaled-residual dual point.
fn duality_gap(data: &Dataset, beta: &DVector<f64>, resid: &DVector<f64>, lambda: f64) -> f64 {
    let primal = resid.norm_squared() + lambda * beta.lp_norm(1);
    let corr = data.x().tr_mul(resid).amax();
    let s = if corr > 0.0 { (lambda / (2.0 * corr)).min(1.0) } else { 1.0 };
    let nu = resid * s;
    let dual = 2.0 * nu.dot(data.y()) - nu.norm_squared();
    (primal - dual).max(0.0)
}

/// Largest violation of the optimality conditions `2x_jᵀr = λ sign(β_j)` on
/// the support and `|2x_jᵀr| ≤ λ` off it.
pub fn lasso_kkt_residual(data: &Dataset, beta: &DVector<f64>, lambda: f64) -> f64 {
    let resid = data.y() - data.x() * beta;
    let grad = data.x().tr_mul(&resid) * 2.0;
    (0..beta.len())
        .map(|j| {
            if beta[j].abs() > SUPPORT_THRESHOLD {
                (grad[j] - lambda * beta[j].signum()).abs()
            } else {
                (grad[j].abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Where the base model of a warm start comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SupportSource {
    Lasso { lambda: f64 },
    /// Use the planted support of the dataset.
    Truth,
    Given(ModelIndicator),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartConfig {
    pub source: SupportSource,
    pub max_extra: usize,
    /// Columns that may be added to the base; all columns when absent.
    pub pool: Option<Vec<usize>>,
}

/// Initial state `(β, z)` with `z` the selected support and `β` its
/// conditional mean, and the model set of supersets of `z`.
pub fn warm_start(
    data: &Dataset,
    prior: &Prior,
    config: &WarmStartConfig,
) -> Result<(JointState, WarmStartSet)> {
    let p = data.p();
    let z = match &config.source {
        SupportSource::Lasso { lambda } => {
            let fit = lasso_fit_with(data, *lambda, &LassoConfig::default())?;
            ModelIndicator::from_active(p, &fit.support())?
        }
        SupportSource::Truth => data.truth().ok_or(Error::MissingTruth)?.z_star.clone(),
        SupportSource::Given(z) => z.clone(),
    };
    let beta = beta_conditional_params(&z, data, prior)?.full_mean(p);
    let pool: Vec<usize> = config.pool.clone().unwrap_or_else(|| (0..p).collect());
    let set = WarmStartSet::supersets(&z, &pool, config.max_extra)?;
    Ok((JointState::new(beta, z)?, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statgen::synthetic::{gen_synthetic, Design, SyntheticSpec};

    #[test]
    fn full_shrinkage() {
        let d = gen_synthetic(&SyntheticSpec::new(40, 10, 2, 5.0, 1)).unwrap();
        let lam = 2.0 * d.x().tr_mul(d.y()).amax();
        assert!(lasso_fit(&d, lam).unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn orthogonal_soft_threshold() {
        let mut spec = SyntheticSpec::new(30, 6, 3, 5.0, 2);
        spec.design = Design::Orthogonal;
        let d = gen_synthetic(&spec).unwrap();
        let lam = 7.0;
        let beta = lasso_fit(&d, lam).unwrap();
        let n = 30.0;
        for j in 0..6 {
            let expect = soft_threshold(d.x().column(j).dot(d.y()) / n, lam / (2.0 * n));
            assert!((beta[j] - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn kkt_holds_at_solution() {
        let d = gen_synthetic(&SyntheticSpec::new(60, 30, 4, 4.0, 3)).unwrap();
        for lam in [1.0, 10.0, default_lambda(60, 30, 1.0)] {
            let beta = lasso_fit(&d, lam).unwrap();
            assert!(lasso_kkt_residual(&d, &beta, lam) <= 1e-6);
        }
    }

    #[test]
    fn warm_start_sources() {
        let d = gen_synthetic(&SyntheticSpec::new(40, 6, 2, 6.0, 4)).unwrap();
        let prior = crate::statgen::suggest_prior(40, 6, 1.0, 1.0).unwrap();
        let (state, set) = warm_start(
            &d,
            &prior,
            &WarmStartConfig { source: SupportSource::Lasso { lambda: 1e9 }, max_extra: 2, pool: None },
        )
        .unwrap();
        assert_eq!(state.z, ModelIndicator::empty(6));
        assert!(state.beta.iter().all(|&b| b == 0.0));
        assert_eq!(set.len(), 1 + 6 + 15);
        let (state, set) = warm_start(
            &d,
            &prior,
            &WarmStartConfig { source: SupportSource::Truth, max_extra: 1, pool: None },
        )
        .unwrap();
        assert_eq!(&state.z, &d.truth().unwrap().z_star);
        assert_eq!(set.base(), &state.z);
        assert_eq!(set.len(), 1 + 4);
    }

    #[test]
    fn default_lambda_keeps_false_positives_few() {
        for seed in 0..10 {
            let d = gen_synthetic(&SyntheticSpec::new(200, 50, 3, 6.0, 100 + seed)).unwrap();
            let truth = &d.truth().unwrap().z_star;
            let fit = lasso_fit(&d, default_lambda(200, 50, 1.0)).unwrap();
            let false_pos = (0..50).filter(|&j| fit[j] != 0.0 && !truth.get(j)).count();
            assert!(false_pos <= 3, "seed {seed}: {false_pos} false positives");
        }
    }
}
