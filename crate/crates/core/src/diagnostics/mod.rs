//! Comparison of sampler output against oracles: total variation on model
//! laws, inclusion probabilities, effective sample size, Wasserstein
//! distances and posterior-contraction summaries.

mod contraction;
mod wasserstein;

use std::collections::HashMap;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::randn;
use crate::model::{beta_conditional_params, Dataset, ModelIndicator, PosteriorTable, Prior};
use crate::statgen::synthetic::detection_threshold;

pub use contraction::{ball_mass, ball_radii, contraction_report, Band, ContractionReport, Replication};
pub use wasserstein::{
    assignment_w2, gaussian_w2, sample_mean_cov, sliced_w2, w2_1d, w2_1d_to_normal, w2_auto, ASSIGNMENT_MAX,
};

/// Probability law over models.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelLaw {
    probs: HashMap<ModelIndicator, f64>,
}

impl ModelLaw {
    /// Empirical law of the samples.
    pub fn from_samples<'a, I>(samples: I) -> Self
    where
        I: IntoIterator<Item = &'a ModelIndicator>,
    {
        let mut counts: HashMap<ModelIndicator, f64> = HashMap::new();
        let mut total = 0.0;
        for z in samples {
            *counts.entry(z.clone()).or_default() += 1.0;
            total += 1.0;
        }
        for v in counts.values_mut() {
            *v /= total;
        }
        Self { probs: counts }
    }

    pub fn from_table(table: &PosteriorTable) -> Self {
        Self { probs: table.entries().filter(|(_, pr)| *pr > 0.0).collect() }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (ModelIndicator, f64)>) -> Self {
        let mut probs: HashMap<ModelIndicator, f64> = HashMap::new();
        for (z, pr) in pairs {
            *probs.entry(z).or_default() += pr;
        }
        Self { probs }
    }

    pub fn prob(&self, z: &ModelIndicator) -> f64 {
        self.probs.get(z).copied().unwrap_or(0.0)
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModelIndicator, &f64)> {
        self.probs.iter()
    }

    /// `½ Σ_z |p(z) − p'(z)|`.
    pub fn tv(&self, other: &ModelLaw) -> f64 {
        let mut sum = 0.0;
        for (z, &a) in &self.probs {
            sum += (a - other.prob(z)).abs();
        }
        for (z, &b) in &other.probs {
            if !self.probs.contains_key(z) {
                sum += b;
            }
        }
        (0.5 * sum).clamp(0.0, 1.0)
    }
}

/// Total variation between the empirical law of `samples` and the table.
pub fn z_tv(samples: &[ModelIndicator], table: &PosteriorTable) -> f64 {
    ModelLaw::from_samples(samples).tv(&ModelLaw::from_table(table))
}

pub fn inclusion_probs(samples: &[ModelIndicator]) -> Result<DVector<f64>> {
    let first = samples.first().ok_or_else(|| Error::InvalidConfig("no samples".into()))?;
    let p = first.len();
    let mut out = DVector::zeros(p);
    for z in samples {
        if z.len() != p {
            return Err(Error::Dimension("samples have different lengths".into()));
        }
        for j in z.active() {
            out[j] += 1.0;
        }
    }
    Ok(out / samples.len() as f64)
}

/// Effective sample size with autocorrelations truncated by Geyer's
/// initial monotone sequence rule.
pub fn ess(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    // τ = −1 + 2 Σ Γ_m, with Γ_0 containing ρ_0 = 1.
    let tau = (2.0 * sum_pairs - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Cut-off used to turn continuous draws into models.
#[derive(Debug, Clone, PartialEq)]
pub enum InclusionThreshold {
    /// Where the spike and slab prior densities cross:
    /// `β² = 2 log((1 − q)τ1 / (qτ0)) / (1/τ0² − 1/τ1²)`.
    PriorCrossing,
    /// A fraction of `c σ √(log p / n)`.
    BetaMinFraction { fraction: f64, constant: f64 },
    Fixed(f64),
}

impl InclusionThreshold {
    pub fn value(&self, n: usize, p: usize, prior: &Prior) -> Result<f64> {
        match self {
            Self::PriorCrossing => {
                let (t0, t1, q) = (prior.tau0(), prior.tau1(), prior.q());
                let gap = 1.0 / (t0 * t0) - 1.0 / (t1 * t1);
                let num = 2.0 * ((1.0 - q) * t1 / (q * t0)).ln();
                if gap <= 0.0 || num <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "prior densities do not cross; choose another threshold".into(),
                    ));
                }
                Ok((num / gap).sqrt())
            }
            Self::BetaMinFraction { fraction, constant } => {
                Ok(fraction * constant * detection_threshold(n, p, prior.sigma()))
            }
            Self::Fixed(v) => Ok(*v),
        }
    }
}

pub fn threshold_model(beta: &DVector<f64>, cut: f64) -> ModelIndicator {
    ModelIndicator::from_bits(beta.iter().map(|b| b.abs() > cut).collect())
}

pub fn threshold_models(draws: &[DVector<f64>], cut: f64) -> Vec<ModelIndicator> {
    draws.iter().map(|b| threshold_model(b, cut)).collect()
}

/// I.i.d. draws of `(z, β)` from the posterior, `z` from the table and `β`
/// from its conditional.
pub fn exact_posterior_draws<R: Rng + ?Sized>(
    table: &PosteriorTable,
    data: &Dataset,
    prior: &Prior,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(ModelIndicator, DVector<f64>)>> {
    let p = data.p();
    let probs: Vec<f64> = (0..table.len()).map(|i| table.prob_at(i)).collect();
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for pr in &probs {
        acc += pr;
        cdf.push(acc);
    }
    let mut cache: HashMap<usize, crate::model::BetaConditional> = HashMap::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.random::<f64>() * acc;
        let i = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
        let z = table.model(i);
        if !cache.contains_key(&i) {
            cache.insert(i, beta_conditional_params(&z, data, prior)?);
        }
        let cond = &cache[&i];
        let mut beta = DVector::from_fn(p, |_, _| prior.tau0() * randn(rng));
        let k = cond.active.len();
        if k > 0 {
            // Active block: mean + σ L⁻ᵀ ξ with Σ = L Lᵀ.
            let xi = DVector::from_fn(k, |_, _| randn(rng));
            let l = cond.precision_factor.l();
            let dev = l
                .transpose()
                .solve_upper_triangular(&xi)
                .ok_or_else(|| Error::Numerical("singular conditional factor".into()))?;
            for (a, &j) in cond.active.iter().enumerate() {
                beta[j] = cond.mean[a] + cond.noise_var.sqrt() * dev[a];
            }
        }
        out.push((z, beta));
    }
    Ok(out)
}
