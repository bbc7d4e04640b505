//! The conditional Gaussian sampler for the active block of `β`, the cached
//! inverse of `M = I_n + X̄ D⁻¹ X̄ᵀ` it relies on, and a preconditioned
//! conjugate-gradient solver.
//!
//! The sampler draws `r ∼ N(0, D⁻¹)` and `ζ ∼ N(0, I_n)`, forms
//! `v = X̄r + ζ`, solves `u = M⁻¹(y/σ − v)` and returns `σ(r + D⁻¹X̄ᵀu)`,
//! which is an exact draw from `N(Σ⁻¹X̄ᵀy, σ²Σ⁻¹)` with `Σ = X̄ᵀX̄ + D`.
//! All call sites use `D = (σ²/τ1²)I`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::randn;
use crate::model::{Dataset, ModelIndicator, Prior};

/// Factor of `A = I_n + c X_z X_zᵀ`. Uses the `k × k` inner matrix
/// `X_zᵀX_z + I/c` when `k < n` and a dense `n × n` Cholesky otherwise.
pub(crate) enum ShiftedGram {
    Inner { xz: DMatrix<f64>, chol: Cholesky<f64, nalgebra::Dyn>, c: f64 },
    Dense { chol: Cholesky<f64, nalgebra::Dyn> },
}

impl ShiftedGram {
    pub fn new(xz: DMatrix<f64>, c: f64) -> Result<Self> {
        if xz.ncols() < xz.nrows() {
            let mut inner = xz.tr_mul(&xz);
            for i in 0..xz.ncols() {
                inner[(i, i)] += 1.0 / c;
            }
            let chol = Cholesky::new(inner)
                .ok_or_else(|| Error::Numerical("inner matrix is not positive definite".into()))?;
            Ok(Self::Inner { xz, chol, c })
        } else {
            Self::dense(xz, c)
        }
    }

    pub fn dense(xz: DMatrix<f64>, c: f64) -> Result<Self> {
        let n = xz.nrows();
        let a = DMatrix::identity(n, n) + (&xz * xz.transpose()) * c;
        let chol = Cholesky::new(a)
            .ok_or_else(|| Error::Numerical("shifted Gram matrix is not positive definite".into()))?;
        Ok(Self::Dense { chol })
    }

    pub fn log_det(&self) -> f64 {
        match self {
            // det(I + cXXᵀ) = det(I + cXᵀX) = cᵏ det(XᵀX + I/c)
            Self::Inner { xz, chol, c } => xz.ncols() as f64 * c.ln() + chol.ln_determinant(),
            Self::Dense { chol } => chol.ln_determinant(),
        }
    }

    /// `A⁻¹ V`.
    pub fn solve(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Inner { xz, chol, .. } => v - xz * chol.solve(&xz.tr_mul(v)),
            Self::Dense { chol } => chol.solve(v),
        }
    }

    /// `yᵀ A⁻¹ y`.
    pub fn quad_form(&self, y: &DVector<f64>) -> f64 {
        match self {
            Self::Inner { xz, chol, .. } => {
                let b = xz.tr_mul(y);
                y.norm_squared() - b.dot(&chol.solve(&b))
            }
            Self::Dense { chol } => y.dot(&chol.solve(y)),
        }
    }
}

/// When to take the rank-one path and when to refactor from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheSettings {
    /// Largest number of flipped columns handled by rank-one updates.
    pub r_max: usize,
    /// Rank-one updates allowed before a forced rebuild.
    pub rebuild_every: usize,
}

impl Default for CacheSettings {
    fn default() -> Self {
        Self { r_max: 4, rebuild_every: 64 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub rebuilds: usize,
    pub rank_one_updates: usize,
    /// Returns to the last rebuilt model, served from the stored snapshot.
    pub restores: usize,
}

/// Explicit inverse of `M = I_n + X̄ D⁻¹ X̄ᵀ` for the model `z`, kept in step
/// with `z` by Sherman–Morrison updates.
///
/// The inverse computed at the last full rebuild is kept as a snapshot, and
/// moving back to that model restores it verbatim rather than undoing the
/// rank-one updates. Samples drawn after such a round trip are therefore
/// bit-identical to samples drawn from an untouched cache.
#[derive(Debug, Clone)]
pub struct LowRankCache {
    z: ModelIndicator,
    d: DVector<f64>,
    m_inv: DMatrix<f64>,
    generation: usize,
    base_z: ModelIndicator,
    base_inv: DMatrix<f64>,
    settings: CacheSettings,
    stats: CacheStats,
}

impl LowRankCache {
    /// Cache for `z` with `D = (σ²/τ1²)I`.
    pub fn new(z: &ModelIndicator, data: &Dataset, prior: &Prior) -> Result<Self> {
        let d = DVector::from_element(data.p(), 1.0 / prior.slab_ratio());
        Self::with_diagonal(z, data, d, CacheSettings::default())
    }

    /// Cache with an arbitrary positive diagonal `D` (one entry per column).
    pub fn with_diagonal(
        z: &ModelIndicator,
        data: &Dataset,
        d: DVector<f64>,
        settings: CacheSettings,
    ) -> Result<Self> {
        data.check_model(z)?;
        if d.len() != data.p() || d.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Dimension("D must hold one positive entry per column".into()));
        }
        let m_inv = build_inverse(z, data, &d)?;
        Ok(Self {
            z: z.clone(),
            d,
            base_z: z.clone(),
            base_inv: m_inv.clone(),
            m_inv,
            generation: 0,
            settings,
            stats: CacheStats { rebuilds: 1, ..Default::default() },
        })
    }

    pub fn with_settings(mut self, settings: CacheSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn z(&self) -> &ModelIndicator {
        &self.z
    }
    pub fn generation(&self) -> usize {
        self.generation
    }
    pub fn stats(&self) -> CacheStats {
        self.stats
    }
    pub fn settings(&self) -> CacheSettings {
        self.settings
    }
    pub fn diagonal(&self) -> &DVector<f64> {
        &self.d
    }
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.m_inv
    }

    /// Full refactorization for the current model.
    pub fn rebuild(&mut self, data: &Dataset) -> Result<()> {
        self.m_inv = build_inverse(&self.z, data, &self.d)?;
        self.base_z = self.z.clone();
        self.base_inv = self.m_inv.clone();
        self.generation = 0;
        self.stats.rebuilds += 1;
        Ok(())
    }

    /// Moves the cache to `z_new`.
    pub fn update(&mut self, z_new: &ModelIndicator, data: &Dataset) -> Result<()> {
        data.check_model(z_new)?;
        if *z_new == self.z {
            return Ok(());
        }
        if *z_new == self.base_z {
            self.z = z_new.clone();
            self.m_inv.copy_from(&self.base_inv);
            self.generation = 0;
            self.stats.restores += 1;
            return Ok(());
        }
        let flips = self.z.differences(z_new);
        self.z = z_new.clone();
        if flips.len() > self.settings.r_max
            || self.generation + flips.len() > self.settings.rebuild_every
        {
            return self.rebuild(data);
        }
        for &j in &flips {
            let x = data.x().column(j);
            let a = if z_new.get(j) { 1.0 / self.d[j] } else { -1.0 / self.d[j] };
            let w = &self.m_inv * x;
            let denom = 1.0 + a * x.dot(&w);
            self.m_inv.ger(-a / denom, &w, &w, 1.0);
        }
        self.generation += flips.len();
        self.stats.rank_one_updates += flips.len();
        if self.m_inv.iter().any(|v| !v.is_finite()) {
            self.rebuild(data)?;
            if self.m_inv.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("cached inverse is not finite after rebuild".into()));
            }
        }
        Ok(())
    }

    /// `M u` computed from the design, without the cache.
    pub fn apply_m(&self, data: &Dataset, u: &DVector<f64>) -> DVector<f64> {
        apply_m(&self.z, data, &self.d, u)
    }

    /// Largest entry of `M (M⁻¹ v) − v` over `trials` standard normal `v`.
    pub fn coherence_error<R: Rng + ?Sized>(&self, data: &Dataset, trials: usize, rng: &mut R) -> f64 {
        let n = data.n();
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let v = DVector::from_fn(n, |_, _| randn(rng));
            let back = self.apply_m(data, &(&self.m_inv * &v));
            worst = worst.max((back - v).amax());
        }
        worst
    }
}

fn apply_m(z: &ModelIndicator, data: &Dataset, d: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut out = u.clone();
    for j in z.active() {
        let x = data.x().column(j);
        out.axpy(x.dot(u) / d[j], &x, 1.0);
    }
    out
}

fn build_inverse(z: &ModelIndicator, data: &Dataset, d: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = data.n();
    let active = z.active();
    let xz = data.columns(&active);
    if active.len() < n {
        // M⁻¹ = I − X̄ (D + X̄ᵀX̄)⁻¹ X̄ᵀ
        let mut inner = xz.tr_mul(&xz);
        for (i, &j) in active.iter().enumerate() {
            inner[(i, i)] += d[j];
        }
        let chol = Cholesky::new(inner)
            .ok_or_else(|| Error::Numerical("inner matrix is not positive definite".into()))?;
        let t = chol.solve(&xz.transpose());
        Ok(DMatrix::identity(n, n) - xz * t)
    } else {
        let mut scaled = xz.clone();
        for (i, &j) in active.iter().enumerate() {
            scaled.column_mut(i).scale_mut(1.0 / d[j]);
        }
        let m = DMatrix::identity(n, n) + scaled * xz.transpose();
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::Numerical("M is not positive definite".into()))?;
        Ok(chol.inverse())
    }
}

/// Draws the active block of `β` given `z`; `cache` is moved to `z` first.
/// The output is ordered like `z.active()`.
pub fn sample_active_gaussian<R: Rng + ?Sized>(
    z: &ModelIndicator,
    data: &Dataset,
    prior: &Prior,
    cache: &mut LowRankCache,
    rng: &mut R,
) -> Result<DVector<f64>> {
    cache.update(z, data)?;
    let (r, rhs) = augmented_draw(z, data, prior, cache.diagonal(), rng);
    let mut u = cache.inverse() * &rhs;
    if u.iter().any(|v| !v.is_finite()) {
        cache.rebuild(data)?;
        u = cache.inverse() * &rhs;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Gaussian sampler produced a non-finite solve".into()));
        }
    }
    Ok(finish_draw(z, data, prior, cache.diagonal(), r, &u))
}

/// As [`sample_active_gaussian`], but solves with conjugate gradients on the
/// current `M`, preconditioned by whatever inverse `precond` currently holds
/// (typically the factor for the previous model). `precond` is not modified.
pub fn sample_active_gaussian_cg<R: Rng + ?Sized>(
    z: &ModelIndicator,
    data: &Dataset,
    prior: &Prior,
    precond: &LowRankCache,
    tol: f64,
    max_iter: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    data.check_model(z)?;
    let d = precond.diagonal();
    let (r, rhs) = augmented_draw(z, data, prior, d, rng);
    let sol = cg_solve(
        |v: &DVector<f64>| apply_m(z, data, d, v),
        &rhs,
        |v: &DVector<f64>| precond.inverse() * v,
        tol,
        max_iter,
    )?;
    Ok(finish_draw(z, data, prior, d, r, &sol.x))
}

/// Returns `r ∼ N(0, D⁻¹)` and `y/σ − (X̄r + ζ)`.
fn augmented_draw<R: Rng + ?Sized>(
    z: &ModelIndicator,
    data: &Dataset,
    prior: &Prior,
    d: &DVector<f64>,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    let active = z.active();
    let r = DVector::from_iterator(
        active.len(),
        active.iter().map(|&j| {
            randn(rng) / d[j].sqrt()
        }),
    );
    let mut rhs = DVector::from_fn(data.n(), |_, _| -randn(rng));
    rhs.axpy(1.0 / prior.sigma(), data.y(), 1.0);
    for (i, &j) in active.iter().enumerate() {
        rhs.axpy(-r[i], &data.x().column(j), 1.0);
    }
    (r, rhs)
}

fn finish_draw(
    z: &ModelIndicator,
    data: &Dataset,
    prior: &Prior,
    d: &DVector<f64>,
    mut r: DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    for (i, j) in z.active().into_iter().enumerate() {
        r[i] = prior.sigma() * (r[i] + data.x().column(j).dot(u) / d[j]);
    }
    r
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Relative residual `‖Mx − b‖ / ‖b‖` at return.
    pub residual: f64,
}

/// Preconditioned conjugate gradients for an SPD operator.
pub fn cg_solve<A, P>(
    apply_m: A,
    b: &DVector<f64>,
    precond: P,
    tol: f64,
    max_iter: usize,
) -> Result<CgSolution>
where
    A: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let b_norm = b.norm();
    let mut x = DVector::zeros(b.len());
    if b_norm == 0.0 {
        return Ok(CgSolution { x, iterations: 0, residual: 0.0 });
    }
    let mut r = b.clone();
    let mut s = precond(&r);
    let mut dir = s.clone();
    let mut rs = r.dot(&s);
    let mut residual = 1.0;
    for it in 1..=max_iter {
        let m_dir = apply_m(&dir);
        let curv = dir.dot(&m_dir);
        if !(curv > 0.0) {
            return Err(Error::Numerical("operator is not positive definite".into()));
        }
        let alpha = rs / curv;
        x.axpy(alpha, &dir, 1.0);
        r.axpy(-alpha, &m_dir, 1.0);
        residual = r.norm() / b_norm;
        if residual <= tol {
            return Ok(CgSolution { x, iterations: it, residual });
        }
        s = precond(&r);
        let rs_new = r.dot(&s);
        dir = &s + &dir * (rs_new / rs);
        rs = rs_new;
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| randn(&mut rng));
        let y = DVector::from_fn(n, |_, _| randn(&mut rng));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn cg_identity_and_zero() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let sol = cg_solve(|v| v.clone(), &b, |v| v.clone(), 1e-12, 10).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!((sol.x - &b).norm() < 1e-15);
        let zero = DVector::zeros(3);
        let sol = cg_solve(|v| v.clone(), &zero, |v| v.clone(), 1e-12, 10).unwrap();
        assert_eq!(sol.x, zero);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = DMatrix::from_fn(30, 30, |_, _| randn(&mut rng));
        let m = &g * g.transpose() + DMatrix::identity(30, 30) * 1e-3;
        let b = DVector::from_element(30, 1.0);
        let err = cg_solve(|v| &m * v, &b, |v| v.clone(), 1e-14, 2).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 2, residual } if residual > 1e-14));
    }

    #[test]
    fn unchanged_model_leaves_cache_alone() {
        let d = data(6, 5, 2);
        let prior = Prior::new(0.3, 0.1, 1.0, 1.0).unwrap();
        let z = ModelIndicator::from_active(5, &[0, 2]).unwrap();
        let mut cache = LowRankCache::new(&z, &d, &prior).unwrap();
        let before = cache.inverse().clone();
        cache.update(&z, &d).unwrap();
        assert_eq!(cache.inverse(), &before);
        assert_eq!(cache.generation(), 0);
    }

    #[test]
    fn wide_flip_forces_rebuild() {
        let d = data(8, 7, 3);
        let prior = Prior::new(0.3, 0.1, 1.0, 1.0).unwrap();
        let mut cache = LowRankCache::new(&ModelIndicator::empty(7), &d, &prior).unwrap();
        cache.update(&ModelIndicator::from_active(7, &[1]).unwrap(), &d).unwrap();
        assert_eq!(cache.generation(), 1);
        cache.update(&ModelIndicator::from_active(7, &[0, 2, 3, 4, 5, 1]).unwrap(), &d).unwrap();
        assert_eq!(cache.generation(), 0);
        assert_eq!(cache.stats().rebuilds, 2);
    }

    #[test]
    fn periodic_rebuild() {
        let d = data(8, 3, 4);
        let prior = Prior::new(0.3, 0.1, 1.0, 1.0).unwrap();
        let settings = CacheSettings { r_max: 4, rebuild_every: 3 };
        let mut cache = LowRankCache::new(&ModelIndicator::empty(3), &d, &prior)
            .unwrap()
            .with_settings(settings);
        for mask in [1u64, 3, 7, 6] {
            cache.update(&ModelIndicator::from_mask(3, mask), &d).unwrap();
        }
        assert_eq!(cache.stats().rebuilds, 2);
        assert_eq!(cache.generation(), 0);
    }

    #[test]
    fn sherman_morrison_tracks_rebuild() {
        let d = data(10, 6, 5);
        let prior = Prior::new(0.3, 0.1, 1.5, 0.8).unwrap();
        let mut cache = LowRankCache::new(&ModelIndicator::from_active(6, &[0]).unwrap(), &d, &prior)
            .unwrap();
        let target = ModelIndicator::from_active(6, &[2, 3, 5]).unwrap();
        cache.update(&target, &d).unwrap();
        assert!(cache.generation() > 0);
        let fresh = LowRankCache::new(&target, &d, &prior).unwrap();
        assert!((cache.inverse() - fresh.inverse()).amax() < 1e-10);
    }

    #[test]
    fn dense_and_inner_inverses_agree() {
        let d = data(4, 6, 6);
        let prior = Prior::new(0.3, 0.1, 1.5, 0.8).unwrap();
        let z = ModelIndicator::full(6);
        let cache = LowRankCache::new(&z, &d, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(cache.coherence_error(&d, 5, &mut rng) < 1e-10);
    }
}
