//! Spike-and-slab posterior with the design integrated out under i.i.d.
//! standard Gaussian entries, and its Gibbs sampler. The `β` step runs a
//! Föllmer-drift SDE from the origin to time one.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gibbs::{GibbsConfig, GibbsSample, RunMetadata};
use crate::math::{log_sum_exp, randn, sigmoid};
use crate::model::{JointState, ModelIndicator, Prior};
use crate::rng::stream;

/// Latest time at which the drift is evaluated.
pub const T_CLIP: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RdTarget {
    y: DVector<f64>,
    y_sq: f64,
    prior: Prior,
    gamma: f64,
}

impl RdTarget {
    /// Reference variance defaults to `4 τ0²`.
    pub fn new(y: DVector<f64>, prior: Prior) -> Result<Self> {
        let gamma = 4.0 * prior.tau0() * prior.tau0();
        Self::with_gamma(y, prior, gamma)
    }

    pub fn with_gamma(y: DVector<f64>, prior: Prior, gamma: f64) -> Result<Self> {
        if y.len() <= 2 {
            return Err(Error::InvalidConfig(format!("need n > 2 observations, got {}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("y must be finite".into()));
        }
        if !(gamma.is_finite() && gamma > prior.tau0() * prior.tau0()) {
            return Err(Error::InvalidConfig(format!(
                "reference variance {gamma} must exceed tau0² = {}",
                prior.tau0() * prior.tau0()
            )));
        }
        Ok(Self { y_sq: y.norm_squared(), y, prior, gamma })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn prior(&self) -> &Prior {
        &self.prior
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `n log σ − (n/2) log(‖β‖² + σ²) + ‖y‖²‖β‖² / (2σ⁴ + 2σ²‖β‖²)`.
    pub fn integrated_log_likelihood(&self, beta_sq: f64) -> f64 {
        let s2 = self.prior.sigma() * self.prior.sigma();
        let n = self.n() as f64;
        0.5 * n * s2.ln() - 0.5 * n * (beta_sq + s2).ln()
            + self.y_sq * beta_sq / (2.0 * s2 * (s2 + beta_sq))
    }

    /// `log f(β)` for the conditional of `β` given `z`, relative to
    /// `N(0, γI)`.
    pub fn log_f(&self, beta: &DVector<f64>, z: &ModelIndicator) -> f64 {
        let beta_sq = beta.norm_squared();
        let mut quad = 0.0;
        for (j, &b) in beta.iter().enumerate() {
            quad += b * b * self.precision(z.get(j));
        }
        self.integrated_log_likelihood(beta_sq) - 0.5 * quad + beta_sq / (2.0 * self.gamma)
    }

    fn precision(&self, active: bool) -> f64 {
        let tau = if active { self.prior.tau1() } else { self.prior.tau0() };
        1.0 / (tau * tau)
    }
}

/// Unnormalized `log π(β, z | y)`.
pub fn rd_log_density(beta: &DVector<f64>, z: &ModelIndicator, target: &RdTarget) -> Result<f64> {
    if beta.len() != z.len() {
        return Err(Error::Dimension("beta and z lengths differ".into()));
    }
    let prior = target.prior();
    let mut value = target.integrated_log_likelihood(beta.norm_squared());
    for (j, &b) in beta.iter().enumerate() {
        value += if z.get(j) {
            prior.q().ln() - prior.tau1().ln() - 0.5 * b * b / (prior.tau1() * prior.tau1())
        } else {
            (-prior.q()).ln_1p() - prior.tau0().ln() - 0.5 * b * b / (prior.tau0() * prior.tau0())
        };
    }
    Ok(value)
}

/// `P(z_j = 1 | β_j)`.
pub fn rd_inclusion_prob(beta_j: f64, prior: &Prior) -> f64 {
    let (t0, t1) = (prior.tau0(), prior.tau1());
    let logit = prior.log_prior_odds() + (t0 / t1).ln()
        - 0.5 * (1.0 / (t1 * t1) - 1.0 / (t0 * t0)) * beta_j * beta_j;
    sigmoid(logit)
}

/// Draws every `z_j` independently given `β`.
pub fn rd_z_update<R: Rng + ?Sized>(beta: &DVector<f64>, target: &RdTarget, rng: &mut R) -> ModelIndicator {
    ModelIndicator::from_bits(
        beta.iter()
            .map(|&b| rng.random::<f64>() < rd_inclusion_prob(b, target.prior()))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbConfig {
    /// Euler steps over `[0, 1]`.
    pub steps: usize,
    /// Reference draws per drift evaluation.
    pub mc_samples: usize,
    /// Use `±v` pairs for the reference draws.
    pub antithetic: bool,
    /// Drop the drift, leaving scaled Brownian motion.
    pub drift_off: bool,
}

impl Default for SbConfig {
    fn default() -> Self {
        Self { steps: 100, mc_samples: 256, antithetic: true, drift_off: false }
    }
}

impl SbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.mc_samples == 0 {
            return Err(Error::InvalidConfig("steps and mc_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Föllmer drift `E[Z f(x + √(1−t) Z)] / (√(1−t) E[f(x + √(1−t) Z)])` with
/// `Z ~ N(0, γI)`, estimated by self-normalized Monte Carlo on shared draws.
/// `log_f` returns `log f`.
pub fn sb_drift<F, R>(
    x: &DVector<f64>,
    t: f64,
    log_f: F,
    gamma: f64,
    mc_samples: usize,
    antithetic: bool,
    rng: &mut R,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidConfig(format!("drift time {t} outside [0, 1)")));
    }
    if mc_samples == 0 {
        return Err(Error::InvalidConfig("mc_samples must be positive".into()));
    }
    let p = x.len();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    let scale = (1.0 - t).sqrt();
    let sd = gamma.sqrt();
    let mut draws = vec![0.0; mc_samples * p];
    let mut i = 0;
    while i < mc_samples {
        for j in 0..p {
            draws[i * p + j] = sd * randn(rng);
        }
        if antithetic && i + 1 < mc_samples {
            for j in 0..p {
                draws[(i + 1) * p + j] = -draws[i * p + j];
            }
            i += 1;
        }
        i += 1;
    }
    let mut point = x.clone();
    let mut logs = Vec::with_capacity(mc_samples);
    for v in draws.chunks_exact(p).take(mc_samples) {
        for j in 0..p {
            point[j] = x[j] + scale * v[j];
        }
        logs.push(log_f(&point));
    }
    if logs.iter().any(|l| l.is_nan()) {
        return Err(Error::Numerical("log f returned NaN".into()));
    }
    let norm = log_sum_exp(&logs);
    if !norm.is_finite() {
        return Err(Error::Numerical(
            "all importance weights underflow; shift log f by a larger working constant".into(),
        ));
    }
    let mut num = DVector::zeros(p);
    for (v, l) in draws.chunks_exact(p).zip(&logs) {
        let w = (l - norm).exp();
        for j in 0..p {
            num[j] += w * v[j];
        }
    }
    Ok(num / scale)
}

/// Euler scheme for the bridge toward `f · N(0, γI)` from `X_0 = 0`; the
/// drift at step `k` is evaluated at `min(kh, 1 − 1e-9)`.
pub fn sb_em_path<F, R>(p: usize, log_f: F, gamma: f64, config: &SbConfig, rng: &mut R) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    config.validate()?;
    let h = 1.0 / config.steps as f64;
    let noise = (gamma * h).sqrt();
    let mut x = DVector::zeros(p);
    for k in 0..config.steps {
        if !config.drift_off {
            let t = (k as f64 * h).min(T_CLIP);
            let drift = sb_drift(&x, t, &log_f, gamma, config.mc_samples, config.antithetic, rng)?;
            x.axpy(h, &drift, 1.0);
        }
        for j in 0..p {
            x[j] += noise * randn(rng);
        }
    }
    Ok(x)
}

/// Approximate draw from `π(β | z, y)`.
pub fn sb_em_sample<R: Rng + ?Sized>(
    z: &ModelIndicator,
    target: &RdTarget,
    config: &SbConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    sb_em_path(z.len(), |b| target.log_f(b, z), target.gamma(), config, rng)
}

/// Gibbs sampler alternating `z | β` and `β | z`. Emission follows the same
/// burn-in and thinning rule as the fixed-design sampler; only `sweeps`,
/// `burn_in`, `thin` and `seed` of `config` apply.
pub fn rd_gibbs_run<F>(
    target: &RdTarget,
    config: &GibbsConfig,
    sb: &SbConfig,
    init: JointState,
    stream_id: u64,
    mut sink: F,
) -> Result<RunMetadata>
where
    F: FnMut(&GibbsSample) -> Result<()>,
{
    config.validate()?;
    sb.validate()?;
    if init.beta.len() != init.z.len() {
        return Err(Error::Dimension("initial beta and z lengths differ".into()));
    }
    let start = Instant::now();
    let mut rng = stream(config.seed, stream_id);
    let mut state = init;
    let mut meta = RunMetadata::default();
    for s in 1..=config.sweeps {
        state.z = rd_z_update(&state.beta, target, &mut rng);
        state.beta = sb_em_sample(&state.z, target, sb, &mut rng)?;
        if s > config.burn_in && (s - config.burn_in) % config.thin == 0 {
            let log_joint = rd_log_density(&state.beta, &state.z, target)?;
            sink(&GibbsSample { sweep: s, state: state.clone(), log_joint })?;
            meta.emitted += 1;
        }
    }
    meta.sweeps = config.sweeps;
    meta.wall_time = start.elapsed();
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn target(y: Vec<f64>) -> RdTarget {
        RdTarget::new(DVector::from_vec(y), Prior::new(0.3, 0.5, 2.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn invariants_are_enforced() {
        let prior = Prior::new(0.3, 0.5, 2.0, 1.0).unwrap();
        assert!(RdTarget::new(DVector::from_vec(vec![1.0, 2.0]), prior.clone()).is_err());
        assert!(RdTarget::with_gamma(DVector::from_vec(vec![1.0; 3]), prior.clone(), 0.25).is_err());
        assert_eq!(RdTarget::new(DVector::from_vec(vec![1.0; 3]), prior).unwrap().gamma(), 1.0);
    }

    #[test]
    fn density_at_origin_is_prior_only() {
        let tg = target(vec![1.0, -2.0, 0.5, 3.0]);
        let z = ModelIndicator::from_active(3, &[1]).unwrap();
        let v = rd_log_density(&DVector::zeros(3), &z, &tg).unwrap();
        let pr = tg.prior();
        let expect = pr.q().ln() - pr.tau1().ln() + 2.0 * ((1.0 - pr.q()).ln() - pr.tau0().ln());
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn inclusion_probability_cases() {
        let pr = Prior::new(0.3, 0.5, 2.0, 1.0).unwrap();
        let at_zero = 1.0 / (1.0 + (0.7 / 0.3) * (2.0 / 0.5));
        assert!((rd_inclusion_prob(0.0, &pr) - at_zero).abs() < 1e-14);
        assert!(rd_inclusion_prob(20.0, &pr) >= 0.99);
        let flat = Prior::new(0.3, 0.5, 0.5, 1.0).unwrap();
        for b in [0.0, 1.0, 7.0] {
            assert!((rd_inclusion_prob(b, &flat) - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_f_gives_zero_drift_with_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DVector::from_vec(vec![0.3, -1.0]);
        let d = sb_drift(&x, 0.4, |_| 2.0, 1.5, 64, true, &mut rng).unwrap();
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn exponential_tilt_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DVector::from_vec(vec![0.5, -0.2]);
        let gamma = 0.8;
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let d = sb_drift(&x, 0.3, |u| a.dot(u), gamma, 100_000, false, &mut rng).unwrap();
        // The self-normalized estimate of γa has sd ≈ sqrt(γ (e^{(1-t)γ‖a‖²} - 1)/(S(1-t))).
        let se = (gamma * (((0.7 * gamma * a.norm_squared()) as f64).exp_m1()) / (1e5 * 0.7)).sqrt()
            + (gamma / (1e5 * 0.7)).sqrt();
        assert!((d - a * gamma).amax() < 4.0 * se);
    }

    #[test]
    fn underflow_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DVector::zeros(1);
        let err = sb_drift(&x, 0.0, |_| f64::NEG_INFINITY, 1.0, 8, true, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn time_outside_unit_interval_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(sb_drift(&DVector::zeros(1), 1.0, |_| 0.0, 1.0, 8, true, &mut rng).is_err());
    }

    #[test]
    fn gibbs_is_deterministic_under_seed() {
        let tg = target(vec![0.5, 1.0, -0.3, 0.2, 2.0]);
        let cfg = GibbsConfig { sweeps: 20, burn_in: 5, thin: 3, seed: 11, ..GibbsConfig::default() };
        let sb = SbConfig { steps: 10, mc_samples: 16, ..SbConfig::default() };
        let collect = || {
            let mut out = Vec::new();
            rd_gibbs_run(&tg, &cfg, &sb, JointState::zeros(2), 0, |s| {
                out.push(s.clone());
                Ok(())
            })
            .unwrap();
            out
        };
        let a = collect();
        assert_eq!(a.len(), 5);
        assert_eq!(a, collect());
    }
}
