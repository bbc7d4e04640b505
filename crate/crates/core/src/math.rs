//! Small numeric helpers shared across samplers.

use rand::Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log Σ exp(x_i)` with a pairwise tree reduction, so the result does not
/// depend on how the caller chunks the input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + pairwise_sum_shifted(xs, max).ln()
}

fn pairwise_sum_shifted(xs: &[f64], shift: f64) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => (xs[0] - shift).exp(),
        len => {
            let (a, b) = xs.split_at(len / 2);
            pairwise_sum_shifted(a, shift) + pairwise_sum_shifted(b, shift)
        }
    }
}

/// Turns log weights into probabilities in place; returns the log normalizer.
pub fn normalize_log_weights(ws: &mut [f64]) -> f64 {
    let norm = log_sum_exp(ws);
    for w in ws.iter_mut() {
        *w = (*w - norm).exp();
    }
    norm
}

/// Draws an index with probability proportional to `exp(log_w[i])`.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    let norm = log_sum_exp(log_w);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &lw) in log_w.iter().enumerate() {
        acc += (lw - norm).exp();
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver of mass at the top end.
    log_w
        .iter()
        .rposition(|w| w.is_finite())
        .unwrap_or(log_w.len() - 1)
}

/// One standard normal draw.
pub fn randn<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
}

/// Bernoulli draw with success log-odds `logit`; stable for large |logit|.
pub fn bernoulli_logit<R: Rng + ?Sized>(logit: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < sigmoid(logit)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn normal_log_pdf(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd) * (x / sd)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// In-place Cholesky of a row-major `m×m` SPD matrix (lower triangle used).
/// Returns the log determinant, or `None` if a pivot is not positive.
pub(crate) fn cholesky_in_place(a: &mut [f64], m: usize) -> Option<f64> {
    let mut log_det = 0.0;
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let l = d.sqrt();
        a[j * m + j] = l;
        log_det += 2.0 * l.ln();
        for i in (j + 1)..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / l;
        }
    }
    Some(log_det)
}

/// Solves `L Lᵀ x = b` in place given the factor from [`cholesky_in_place`].
pub(crate) fn cholesky_solve_in_place(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in (i + 1)..m {
            s -= l[k * m + i] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}
