#![allow(dead_code)]

pub mod checks;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikeslab::math::randn;
use spikeslab::Dataset;

/// Gauss–Hermite rule for `∫ f(x) e^{-x²} dx` by Golub–Welsch: nodes are the
/// eigenvalues of the Jacobi matrix, weights `√π v₀²`.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(m, m);
    for i in 1..m {
        let off = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = off;
        jacobi[(i - 1, i)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Expectation of `f(β)` under `N(0, s²)` from a Gauss–Hermite rule.
pub fn normal_expectation<F: Fn(f64) -> f64>(rule: &(Vec<f64>, Vec<f64>), s: f64, f: F) -> f64 {
    let scale = std::f64::consts::SQRT_2 * s;
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(scale * x))
        .sum::<f64>()
        / std::f64::consts::PI.sqrt()
}

/// Gaussian design and response with a fixed seed.
pub fn random_data(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| randn(&mut rng));
    let y = DVector::from_fn(n, |_, _| randn(&mut rng));
    Dataset::new(x, y).unwrap()
}

/// Distribution on a uniform grid from an unnormalized log density, used to
/// read off quantiles and moments.
pub struct GridLaw {
    pub x: Vec<f64>,
    pub cdf: Vec<f64>,
    pub mean: f64,
    pub var: f64,
}

impl GridLaw {
    /// Trapezoid rule on `points` nodes over `[lo, hi]`.
    pub fn new<F: Fn(f64) -> f64>(log_density: F, lo: f64, hi: f64, points: usize) -> Self {
        let h = (hi - lo) / (points - 1) as f64;
        let x: Vec<f64> = (0..points).map(|i| lo + i as f64 * h).collect();
        let logs: Vec<f64> = x.iter().map(|&v| log_density(v)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
        }
        let total = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        let w: Vec<f64> = dens.iter().map(|d| d * h / total).collect();
        let mean: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let var: f64 = x.iter().zip(&w).map(|(a, b)| (a - mean).powi(2) * b).sum();
        Self { x, cdf, mean, var }
    }

    /// Quantile by linear interpolation of the grid CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.x.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.x[i - 1] + frac * (self.x[i] - self.x[i - 1])
    }

    /// W2 between a sample and this law, coupling order statistic `i` with
    /// the quantile at `(i + ½)/n`.
    pub fn w2_from(&self, sample: &[f64]) -> f64 {
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let sum: f64 = s
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.quantile((i as f64 + 0.5) / n)).powi(2))
            .sum();
        (sum / n).sqrt()
    }
}

/// Mean of the tilted posterior `∝ exp(θᵀβ − t‖β‖²/2) π(β, z | y)` for
/// `p = 2`, by tensor Gauss–Hermite quadrature against each model's prior.
pub fn tilted_mean_quadrature(
    data: &Dataset,
    prior: &spikeslab::Prior,
    theta: &DVector<f64>,
    t: f64,
    rule: &(Vec<f64>, Vec<f64>),
) -> DVector<f64> {
    assert_eq!(data.p(), 2);
    let sigma2 = prior.sigma() * prior.sigma();
    let (nodes, weights) = rule;
    let mut logs = Vec::new();
    let mut points = Vec::new();
    for mask in 0..4u32 {
        let active = [mask & 1 == 1, mask & 2 == 2];
        let scale: Vec<f64> = active
            .iter()
            .map(|&a| std::f64::consts::SQRT_2 * if a { prior.tau1() } else { prior.tau0() })
            .collect();
        let log_model = active
            .iter()
            .map(|&a| if a { prior.q().ln() } else { (1.0 - prior.q()).ln() })
            .sum::<f64>();
        for (x0, w0) in nodes.iter().zip(weights) {
            for (x1, w1) in nodes.iter().zip(weights) {
                let b = [scale[0] * x0, scale[1] * x1];
                let mut resid = data.y().clone();
                for j in 0..2 {
                    if active[j] {
                        resid.axpy(-b[j], &data.x().column(j), 1.0);
                    }
                }
                let log_g = theta[0] * b[0] + theta[1] * b[1]
                    - 0.5 * t * (b[0] * b[0] + b[1] * b[1])
                    - resid.norm_squared() / (2.0 * sigma2);
                logs.push(log_model + (w0 * w1).ln() + log_g);
                points.push(b);
            }
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = DVector::zeros(2);
    let mut den = 0.0;
    for (l, b) in logs.iter().zip(&points) {
        let w = (l - top).exp();
        den += w;
        num[0] += w * b[0];
        num[1] += w * b[1];
    }
    num / den
}
