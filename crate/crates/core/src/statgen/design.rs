//! Design well-posedness measures: coherence, restricted eigenvalue and the
//! β-min condition. Both matrix quantities are built from the whitened Gram
//! `K_z = Xᵀ(I + (τ1²/σ²) X_z X_zᵀ)⁻¹ X`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelIndicator, Prior};
use crate::statgen::lasso::lasso_fit_with;
use crate::statgen::lasso::LassoConfig;
use crate::statgen::synthetic::detection_threshold;

/// Largest `p` for which every support of size `≤ k` is enumerated.
pub const EXHAUSTIVE_P_MAX: usize = 12;
/// Largest `k` for exhaustive enumeration.
pub const EXHAUSTIVE_K_MAX: usize = 3;
/// Cap on the number of `v` supports scanned per model.
const SUBSET_GUARD: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum SupportSearch {
    /// All supports of size `≤ k`.
    Exhaustive,
    /// Only the listed supports (each of size `≤ k`).
    Pool(Vec<ModelIndicator>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMeasure {
    pub value: f64,
    /// Whether every support of size `≤ k` was examined.
    pub exhaustive: bool,
    /// Support attaining the value.
    pub argmax_model: ModelIndicator,
}

/// `K_z = G − c G_{:,z} (I + c G_zz)⁻¹ G_{z,:}` with `c = τ1²/σ²`.
pub fn whitened_gram(gram: &DMatrix<f64>, z: &ModelIndicator, slab_ratio: f64) -> Result<DMatrix<f64>> {
    let active = z.active();
    if active.is_empty() {
        return Ok(gram.clone());
    }
    let p = gram.nrows();
    let g_za = gram.select_columns(&active);
    let mut inner = g_za.select_rows(&active) * slab_ratio;
    for i in 0..active.len() {
        inner[(i, i)] += 1.0;
    }
    let chol = inner
        .cholesky()
        .ok_or_else(|| Error::Numerical("whitening block is not positive definite".into()))?;
    let solved = chol.solve(&g_za.transpose());
    let k = gram - (&g_za * solved) * slab_ratio;
    debug_assert_eq!(k.nrows(), p);
    Ok(k)
}

fn supports(p: usize, k: usize, search: &SupportSearch) -> Result<(Vec<ModelIndicator>, bool)> {
    match search {
        SupportSearch::Exhaustive => {
            if p > EXHAUSTIVE_P_MAX || k > EXHAUSTIVE_K_MAX {
                return Err(Error::EnumerationGuard { p, p_max: EXHAUSTIVE_P_MAX });
            }
            let mut out = Vec::new();
            for_each_subset(p, k, &mut |s| {
                out.push(ModelIndicator::from_active(p, s).expect("indices below p"));
            });
            Ok((out, true))
        }
        SupportSearch::Pool(pool) => {
            if pool.is_empty() {
                return Err(Error::EmptyModelSet);
            }
            for z in pool {
                if z.len() != p || z.active_count() > k {
                    return Err(Error::InvalidConfig(format!("pool support {z} is not a size ≤ {k} model")));
                }
            }
            Ok((pool.clone(), false))
        }
    }
}

/// Calls `f` on every subset of `0..m` of size `≤ k`, in lexicographic order.
fn for_each_subset<F: FnMut(&[usize])>(m: usize, k: usize, f: &mut F) {
    fn rec<F: FnMut(&[usize])>(m: usize, start: usize, left: usize, cur: &mut Vec<usize>, f: &mut F) {
        f(cur);
        if left == 0 {
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(m, i + 1, left - 1, cur, f);
            cur.pop();
        }
    }
    rec(m, 0, k, &mut Vec::new(), f);
}

fn binomial(m: usize, k: usize) -> u64 {
    let k = k.min(m.saturating_sub(k));
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((m - i) as u64) / (i as u64 + 1))
}

/// `C(k) = max_z max_{j ∉ z, i ≠ j} |x_jᵀ(I + (τ1²/σ²) X_z X_zᵀ)⁻¹ x_i|`.
pub fn coherence(data: &Dataset, prior: &Prior, k: usize, search: &SupportSearch) -> Result<DesignMeasure> {
    let p = data.p();
    let (models, exhaustive) = supports(p, k, search)?;
    let gram = data.x().tr_mul(data.x());
    let mut best = DesignMeasure { value: 0.0, exhaustive, argmax_model: models[0].clone() };
    for z in &models {
        let kz = whitened_gram(&gram, z, prior.slab_ratio())?;
        for j in z.inactive() {
            for i in (0..p).filter(|&i| i != j) {
                let v = kz[(j, i)].abs();
                if v > best.value {
                    best.value = v;
                    best.argmax_model = z.clone();
                }
            }
        }
    }
    Ok(best)
}

/// `ω(k) = min_z min { vᵀ K_z v : ‖v‖ = 1, supp(v) ⊆ 1 − z, |supp(v)| ≤ k }`.
/// Eigenvalues interlace, so only supports of the largest allowed size are
/// scanned.
pub fn restricted_eig(data: &Dataset, prior: &Prior, k: usize, search: &SupportSearch) -> Result<DesignMeasure> {
    let p = data.p();
    let (models, exhaustive) = supports(p, k, search)?;
    let gram = data.x().tr_mul(data.x());
    let mut best = DesignMeasure { value: f64::INFINITY, exhaustive, argmax_model: models[0].clone() };
    for z in &models {
        let free = z.inactive();
        let size = k.min(free.len());
        if size == 0 {
            continue;
        }
        if binomial(free.len(), size) > SUBSET_GUARD {
            return Err(Error::EnumerationGuard { p: free.len(), p_max: EXHAUSTIVE_P_MAX });
        }
        let kz = whitened_gram(&gram, z, prior.slab_ratio())?;
        for_each_subset(free.len(), size, &mut |s| {
            if s.len() != size {
                return;
            }
            let cols: Vec<usize> = s.iter().map(|&i| free[i]).collect();
            let block = kz.select_rows(&cols).select_columns(&cols);
            let min_eig = SymmetricEigen::new(block).eigenvalues.min();
            if min_eig < best.value {
                best.value = min_eig;
                best.argmax_model = z.clone();
            }
        });
    }
    Ok(best)
}

/// Supports of size `≤ k` met along a Lasso path on a geometric `λ` grid
/// from `‖2Xᵀy‖∞` down by `ratio` per step, plus the empty model.
pub fn lasso_path_pool(data: &Dataset, k: usize, steps: usize, ratio: f64) -> Result<Vec<ModelIndicator>> {
    let p = data.p();
    let mut lambda = 2.0 * data.x().tr_mul(data.y()).amax();
    let mut pool = vec![ModelIndicator::empty(p)];
    let config = LassoConfig::default();
    for _ in 0..steps {
        let fit = lasso_fit_with(data, lambda, &config)?;
        let support = fit.support();
        if support.len() <= k {
            let z = ModelIndicator::from_active(p, &support)?;
            if !pool.contains(&z) {
                pool.push(z);
            }
        }
        lambda *= ratio;
    }
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaMinReport {
    /// `c σ √(log p / n)`.
    pub threshold: f64,
    pub constant: f64,
    pub min_active: f64,
    /// `min_active / threshold`.
    pub margin: f64,
    /// `‖β*‖` on the inactive coordinates.
    pub inactive_norm: f64,
    pub pass: bool,
}

/// Default constant in the β-min threshold.
pub const BETA_MIN_CONSTANT: f64 = 2.0;

/// Checks `min_{j ∈ z*} |β*_j| ≥ c σ √(log p / n)` and `β*_{1−z*} = 0`.
pub fn beta_min_check(data: &Dataset, prior: &Prior, constant: f64) -> Result<BetaMinReport> {
    let truth = data.truth().ok_or(Error::MissingTruth)?;
    let threshold = constant * detection_threshold(data.n(), data.p(), prior.sigma());
    let active = truth.z_star.active();
    let min_active = active.iter().map(|&j| truth.beta_star[j].abs()).fold(f64::INFINITY, f64::min);
    let inactive_norm =
        truth.z_star.inactive().iter().map(|&j| truth.beta_star[j].powi(2)).sum::<f64>().sqrt();
    let margin = if active.is_empty() { f64::INFINITY } else { min_active / threshold };
    let pass = margin >= 1.0 - 1e-12 && inactive_norm == 0.0;
    Ok(BetaMinReport { threshold, constant, min_active, margin, inactive_norm, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statgen::synthetic::{gen_synthetic, Design, SyntheticSpec};
    use nalgebra::DVector;

    fn prior() -> Prior {
        Prior::new(0.1, 0.2, 1.5, 1.0).unwrap()
    }

    #[test]
    fn orthogonal_design_measures() {
        let mut spec = SyntheticSpec::new(20, 6, 2, 3.0, 1);
        spec.design = Design::Orthogonal;
        let d = gen_synthetic(&spec).unwrap();
        let c = coherence(&d, &prior(), 2, &SupportSearch::Exhaustive).unwrap();
        assert!(c.value < 1e-10 && c.exhaustive);
        let w = restricted_eig(&d, &prior(), 2, &SupportSearch::Exhaustive).unwrap();
        assert!((w.value - 20.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_column() {
        let spec = SyntheticSpec::new(15, 5, 1, 3.0, 2);
        let d0 = gen_synthetic(&spec).unwrap();
        let mut x = d0.x().clone();
        let c0 = x.column(0).clone_owned();
        x.set_column(3, &c0);
        let d = Dataset::new(x, DVector::zeros(15)).unwrap();
        let empty = SupportSearch::Pool(vec![ModelIndicator::empty(5)]);
        assert!(coherence(&d, &prior(), 0, &empty).unwrap().value >= d.col_sq_norm(3) - 1e-9);
        let w = restricted_eig(&d, &prior(), 2, &empty).unwrap();
        assert!(w.value.abs() <= 1e-6 * 15.0);
    }

    #[test]
    fn full_pool_matches_exhaustive() {
        let d = gen_synthetic(&SyntheticSpec::new(12, 6, 2, 3.0, 3)).unwrap();
        let mut pool = Vec::new();
        for_each_subset(6, 2, &mut |s| pool.push(ModelIndicator::from_active(6, s).unwrap()));
        let a = coherence(&d, &prior(), 2, &SupportSearch::Exhaustive).unwrap();
        let b = coherence(&d, &prior(), 2, &SupportSearch::Pool(pool)).unwrap();
        assert_eq!(a.value, b.value);
        assert!(!b.exhaustive);
    }

    #[test]
    fn guard_on_large_exhaustive() {
        let d = gen_synthetic(&SyntheticSpec::new(20, 13, 2, 3.0, 4)).unwrap();
        assert!(matches!(
            coherence(&d, &prior(), 2, &SupportSearch::Exhaustive),
            Err(Error::EnumerationGuard { .. })
        ));
    }

    #[test]
    fn beta_min_cases() {
        let pr = Prior::new(0.1, 0.2, 1.5, 1.0).unwrap();
        let d = gen_synthetic(&SyntheticSpec::new(50, 10, 2, 4.0, 5)).unwrap();
        let r = beta_min_check(&d, &pr, 1.0).unwrap();
        assert!(r.pass && (r.margin - 4.0).abs() < 1e-12);
        let d = gen_synthetic(&SyntheticSpec::new(50, 10, 2, 0.0, 5)).unwrap();
        assert!(!beta_min_check(&d, &pr, 1.0).unwrap().pass);
        let d = gen_synthetic(&SyntheticSpec::new(50, 10, 2, 2.0, 5)).unwrap();
        let r = beta_min_check(&d, &pr, 2.0).unwrap();
        assert!(r.pass && (r.margin - 1.0).abs() < 1e-12);
        let bare = Dataset::new(d.x().clone(), d.y().clone()).unwrap();
        assert!(matches!(beta_min_check(&bare, &pr, 2.0), Err(Error::MissingTruth)));
    }

    #[test]
    fn path_pool_contains_empty_and_small_models() {
        let d = gen_synthetic(&SyntheticSpec::new(40, 10, 2, 6.0, 6)).unwrap();
        let pool = lasso_path_pool(&d, 3, 20, 0.8).unwrap();
        assert_eq!(pool[0], ModelIndicator::empty(10));
        assert!(pool.len() > 1 && pool.iter().all(|z| z.active_count() <= 3));
    }
}
