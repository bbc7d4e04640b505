//! Exact sampler for the Pólya-Gamma distribution `PG(1, c)`.
//!
//! Draws `J*(1, |c|/2)` by Devroye's alternating-series rejection method,
//! proposing from a mixture of a truncated inverse Gaussian on `(0, t]` and
//! an exponential tail on `(t, ∞)`, then returns `J*/4`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::math::{randn, std_normal_cdf};

/// Split point between the two proposal pieces.
const TRUNC: f64 = 0.64;

/// Draws from `PG(1, c)`.
pub fn pg_sample<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z = 0.5 * c.abs();
    let k = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = exponential_mass(z, k);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / k
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Mean of `PG(1, c)`: `tanh(c/2) / (2c)`, with the limit `1/4` at zero.
pub fn pg_mean(c: f64) -> f64 {
    if c.abs() < 1e-6 {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// n-th term of the alternating series for the `J*` density, using the
/// small-`x` expansion below the split point.
fn series_coef(n: u32, x: f64) -> f64 {
    let kn = PI * (n as f64 + 0.5);
    if x > TRUNC {
        kn * (-0.5 * kn * kn * x).exp()
    } else {
        let h = n as f64 + 0.5;
        (kn.ln() - 1.5 * ((0.5 * PI).ln() + x.ln()) - 2.0 * h * h / x).exp()
    }
}

/// Probability of proposing from the exponential tail.
fn exponential_mass(z: f64, k: f64) -> f64 {
    let t = TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = k.ln() + k * t;
    let xb = x0 - z + std_normal_cdf(b).ln();
    let xa = x0 + z + std_normal_cdf(a).ln();
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian with mean `1/z`, shape 1, truncated to `(0, t]`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if z < 1.0 / t {
        // Mean beyond the cut: propose from the z = 0 (Lévy) case and thin.
        loop {
            let x = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    let d = 1.0 + e1 * t;
                    break t / (d * d);
                }
            };
            if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    }
    let mu = 1.0 / z;
    loop {
        let g = randn(rng);
        let muy = mu * g * g;
        let mut x = mu + 0.5 * mu * muy - 0.5 * mu * (4.0 * muy + muy * muy).sqrt();
        if rng.random::<f64>() > mu / (mu + x) {
            x = mu * mu / x;
        }
        if x <= t {
            return x;
        }
    }
}
