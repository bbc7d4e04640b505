use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{randn, sigmoid};
use crate::model::{Dataset, ModelIndicator, Prior, Truth};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    GaussianIid,
    /// `XᵀX = nI`; needs `n ≥ p`.
    Orthogonal,
    /// Gaussian columns, with the second column of each pair replaced by
    /// `ρ x_a + √(1 − ρ²) g`.
    Correlated { rho: f64, pairs: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Response {
    /// `y = Xβ + σε`.
    #[default]
    Gaussian,
    /// `y_i ∼ Bernoulli(sigmoid(x_iᵀβ))`, coded 0/1.
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Active magnitudes are `signal_scale · σ √(log p / n)`.
    pub signal_scale: f64,
    pub sigma: f64,
    pub design: Design,
    pub response: Response,
    /// Rescale every column to `‖x_j‖² = n`.
    pub normalize_columns: bool,
    /// Active coordinates; drawn uniformly when absent.
    pub support: Option<Vec<usize>>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, p: usize, k: usize, signal_scale: f64, seed: u64) -> Self {
        Self {
            n,
            p,
            k,
            signal_scale,
            sigma: 1.0,
            design: Design::GaussianIid,
            response: Response::Gaussian,
            normalize_columns: true,
            support: None,
            seed,
        }
    }

    /// `σ √(log p / n)`.
    pub fn detection_threshold(&self) -> f64 {
        detection_threshold(self.n, self.p, self.sigma)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("n and p must be positive".into()));
        }
        if self.k > self.p {
            return Err(Error::InvalidConfig(format!("k = {} exceeds p = {}", self.k, self.p)));
        }
        if !(self.signal_scale >= 0.0 && self.signal_scale.is_finite()) {
            return Err(Error::InvalidConfig("signal_scale must be finite and non-negative".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        if let Some(s) = &self.support {
            if s.len() != self.k || s.iter().any(|&j| j >= self.p) {
                return Err(Error::InvalidConfig("support must list k columns below p".into()));
            }
        }
        match &self.design {
            Design::Orthogonal if self.n < self.p => {
                Err(Error::InvalidConfig("orthogonal design needs n ≥ p".into()))
            }
            Design::Correlated { rho, pairs } => {
                if !(rho.abs() <= 1.0) {
                    return Err(Error::InvalidConfig("correlation must lie in [-1, 1]".into()));
                }
                if pairs.iter().any(|&(a, b)| a >= self.p || b >= self.p || a == b) {
                    return Err(Error::InvalidConfig("correlated pairs need distinct columns below p".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `σ √(log p / n)`.
pub fn detection_threshold(n: usize, p: usize, sigma: f64) -> f64 {
    sigma * ((p as f64).ln() / n as f64).sqrt()
}

/// Design, then support, then signs, then noise (or Bernoulli draws), all
/// from stream 0 of the seed.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = stream(spec.seed, 0);
    let mut x = DMatrix::from_fn(n, p, |_, _| randn(&mut rng));
    match &spec.design {
        Design::GaussianIid => {}
        Design::Orthogonal => {
            let q = x.qr().q();
            x = q * (n as f64).sqrt();
        }
        Design::Correlated { rho, pairs } => {
            let tail = (1.0 - rho * rho).max(0.0).sqrt();
            for &(a, b) in pairs {
                let col = x.column(a) * *rho + x.column(b) * tail;
                x.set_column(b, &col);
            }
        }
    }
    if spec.normalize_columns && spec.design != Design::Orthogonal {
        for j in 0..p {
            let norm = x.column(j).norm();
            if norm > 0.0 {
                let scale = (n as f64).sqrt() / norm;
                x.column_mut(j).scale_mut(scale);
            }
        }
    }
    let support = match &spec.support {
        Some(s) => s.clone(),
        None => {
            let mut s = sample(&mut rng, p, spec.k).into_vec();
            s.sort_unstable();
            s
        }
    };
    let magnitude = spec.signal_scale * spec.detection_threshold();
    let mut beta = DVector::zeros(p);
    for &j in &support {
        beta[j] = if rng.random::<bool>() { magnitude } else { -magnitude };
    }
    let mean = &x * &beta;
    let y = match spec.response {
        Response::Gaussian => mean + DVector::from_fn(n, |_, _| spec.sigma * randn(&mut rng)),
        Response::Logistic => mean.map(|eta| f64::from(u8::from(rng.random::<f64>() < sigmoid(eta)))),
    };
    let z_star = ModelIndicator::from_active(p, &support)?;
    Dataset::new(x, y)?.with_truth(Truth { beta_star: beta, z_star })
}

/// Prior with `q/(1 − q) = p^{-(δ+1)}`, `τ1 = σp/√n`, `τ0 = σ/√n`.
pub fn suggest_prior(n: usize, p: usize, sigma: f64, delta: f64) -> Result<Prior> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidPrior("n and p must be positive".into()));
    }
    let (nf, pf) = (n as f64, p as f64);
    let q = 1.0 / (1.0 + pf.powf(delta + 1.0));
    let root_n = nf.sqrt();
    Prior::new(q, sigma / root_n, sigma * pf / root_n, sigma)?.with_delta(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_signal_leaves_noise() {
        let mut spec = SyntheticSpec::new(10_000, 3, 0, 4.0, 1);
        spec.sigma = 1.5;
        let d = gen_synthetic(&spec).unwrap();
        let y = d.y();
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
        assert!((var / 2.25 - 1.0).abs() < 0.1);
        assert!(d.truth().unwrap().beta_star.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn normalized_columns() {
        let d = gen_synthetic(&SyntheticSpec::new(50, 20, 3, 2.0, 2)).unwrap();
        for j in 0..20 {
            assert!((d.col_sq_norm(j) - 50.0).abs() < 1e-10);
        }
        let t = d.truth().unwrap();
        assert_eq!(t.z_star.active_count(), 3);
        let m = 2.0 * (20f64.ln() / 50.0).sqrt();
        assert!(t.beta_star.iter().all(|&b| b == 0.0 || (b.abs() - m).abs() < 1e-15));
    }

    #[test]
    fn orthogonal_gram() {
        let mut spec = SyntheticSpec::new(30, 8, 2, 3.0, 3);
        spec.design = Design::Orthogonal;
        let d = gen_synthetic(&spec).unwrap();
        let g = d.x().tr_mul(d.x());
        assert!((g - DMatrix::identity(8, 8) * 30.0).amax() < 1e-10);
    }

    #[test]
    fn correlated_pair() {
        let mut spec = SyntheticSpec::new(500, 6, 2, 3.0, 4);
        spec.design = Design::Correlated { rho: 0.99, pairs: vec![(0, 1)] };
        let d = gen_synthetic(&spec).unwrap();
        let (a, b) = (d.x().column(0), d.x().column(1));
        let (ca, cb) = (a.add_scalar(-a.mean()), b.add_scalar(-b.mean()));
        let corr = ca.dot(&cb) / (ca.norm() * cb.norm());
        assert!((0.97..=1.0).contains(&corr), "{corr}");
    }

    #[test]
    fn explicit_support_and_validation() {
        let mut spec = SyntheticSpec::new(20, 5, 2, 1.0, 5);
        spec.support = Some(vec![3, 1]);
        let d = gen_synthetic(&spec).unwrap();
        assert_eq!(d.truth().unwrap().z_star.active(), vec![1, 3]);
        spec.support = Some(vec![7, 1]);
        assert!(gen_synthetic(&spec).is_err());
        assert!(gen_synthetic(&SyntheticSpec::new(20, 5, 6, 1.0, 5)).is_err());
    }

    #[test]
    fn logistic_response_is_binary() {
        let mut spec = SyntheticSpec::new(4000, 2, 1, 0.0, 6);
        spec.response = Response::Logistic;
        let d = gen_synthetic(&spec).unwrap();
        assert!(d.y().iter().all(|&v| v == 0.0 || v == 1.0));
        // Null signal: every label is a fair coin.
        assert!((d.y().mean() - 0.5).abs() < 0.03);
    }

    #[test]
    fn prior_instantiation() {
        let pr = suggest_prior(100, 100, 1.0, 1.0).unwrap();
        assert!((pr.q() - 1.0 / (1.0 + 1e4)).abs() < 1e-18);
        assert!((pr.tau1() - 10.0).abs() < 1e-12 && (pr.tau0() - 0.1).abs() < 1e-12);
        let pr0 = suggest_prior(100, 50, 1.0, 0.0).unwrap();
        assert!((pr0.q() / (1.0 - pr0.q()) - 1.0 / 50.0).abs() < 1e-15);
        assert!(suggest_prior(100, 60, 1.0, 1.0).unwrap().tau1() > pr0.tau1());
    }
}
