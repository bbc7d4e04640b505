use nalgebra::DVector;

use crate::diagnostics::ModelLaw;
use crate::error::{Error, Result};
use crate::model::ModelIndicator;

/// One replicated experiment.
#[derive(Debug, Clone)]
pub struct Replication {
    pub z_star: ModelIndicator,
    pub law: ModelLaw,
    /// `true` when `law` comes from enumeration, `false` for sampler output.
    pub exact: bool,
    /// Posterior mass of the contraction ball, when measured.
    pub ball_mass: Option<f64>,
}

/// Mean with its Monte Carlo standard error across replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub mean: f64,
    pub std_err: f64,
}

impl Band {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std_err: (var / n).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub replications: usize,
    pub exact_replications: usize,
    /// `π(z* | y)` per replication.
    pub truth_probs: Vec<f64>,
    pub truth_prob: Band,
    /// Size above which a model counts as large: `k (1 + 1/δ)`.
    pub size_cutoff: f64,
    pub large_model_mass: Band,
    pub ball_mass: Option<Band>,
}

impl ContractionReport {
    /// Replications with `π(z* | y) ≥ level`.
    pub fn count_truth_at_least(&self, level: f64) -> usize {
        self.truth_probs.iter().filter(|&&v| v >= level).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "replications {} (exact {})\nmean pi(z*|y) {:.4} +/- {:.4}\nmass on |z| > {:.2}: {:.4} +/- {:.4}\n",
            self.replications,
            self.exact_replications,
            self.truth_prob.mean,
            self.truth_prob.std_err,
            self.size_cutoff,
            self.large_model_mass.mean,
            self.large_model_mass.std_err
        );
        if let Some(b) = self.ball_mass {
            s += &format!("ball mass {:.4} +/- {:.4}\n", b.mean, b.std_err);
        }
        s
    }
}

/// Summarizes replications at sparsity `k` and prior exponent `delta`.
pub fn contraction_report(reps: &[Replication], k: usize, delta: f64) -> Result<ContractionReport> {
    if reps.is_empty() {
        return Err(Error::InvalidConfig("no replications".into()));
    }
    let size_cutoff = if delta > 0.0 { k as f64 * (1.0 + 1.0 / delta) } else { f64::INFINITY };
    let truth_probs: Vec<f64> = reps.iter().map(|r| r.law.prob(&r.z_star)).collect();
    let large: Vec<f64> = reps
        .iter()
        .map(|r| {
            r.law
                .iter()
                .filter(|(z, _)| z.active_count() as f64 > size_cutoff)
                .map(|(_, p)| *p)
                .sum()
        })
        .collect();
    let balls: Vec<f64> = reps.iter().filter_map(|r| r.ball_mass).collect();
    Ok(ContractionReport {
        replications: reps.len(),
        exact_replications: reps.iter().filter(|r| r.exact).count(),
        truth_prob: Band::of(&truth_probs),
        truth_probs,
        size_cutoff,
        large_model_mass: Band::of(&large),
        ball_mass: (balls.len() == reps.len()).then(|| Band::of(&balls)),
    })
}

/// Radii of the contraction ball: `σ √(k log p) / (√n ω)` around `β*` on
/// the model coordinates, with `ω` the restricted eigenvalue per
/// observation, and `τ0 √p` for the remaining coordinates.
pub fn ball_radii(n: usize, p: usize, k: usize, sigma: f64, tau0: f64, omega_per_obs: f64) -> (f64, f64) {
    let signal = sigma * (k as f64 * (p as f64).ln()).sqrt() / ((n as f64).sqrt() * omega_per_obs);
    (signal, tau0 * (p as f64).sqrt())
}

/// Fraction of draws inside the ball. A draw is tested against its own
/// model, which must have at most `k` coordinates.
pub fn ball_mass(
    draws: &[(ModelIndicator, DVector<f64>)],
    beta_star: &DVector<f64>,
    k: usize,
    radii: (f64, f64),
) -> f64 {
    if draws.is_empty() {
        return 0.0;
    }
    let inside = draws
        .iter()
        .filter(|(z, beta)| {
            if z.active_count() > k {
                return false;
            }
            let mut on = 0.0;
            let mut off = 0.0;
            for j in 0..beta.len() {
                if z.get(j) {
                    on += (beta[j] - beta_star[j]).powi(2);
                } else {
                    on += beta_star[j].powi(2);
                    off += beta[j].powi(2);
                }
            }
            on.sqrt() <= radii.0 && off.sqrt() <= radii.1
        })
        .count();
    inside as f64 / draws.len() as f64
}
