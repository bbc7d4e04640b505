use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{randn, std_normal_quantile};

/// Largest sample size for exact assignment.
pub const ASSIGNMENT_MAX: usize = 512;

/// W2 between the empirical laws of two sorted samples, integrating the
/// squared gap of the quantile functions exactly; sizes may differ.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig("empty sample".into()));
    }
    if !is_sorted(a) || !is_sorted(b) {
        return Err(Error::InvalidConfig("samples must be sorted".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut sum = 0.0;
    while i < na && j < nb {
        // Next breakpoints, compared in exact integer arithmetic.
        let next_a = (i + 1) as u128 * nb as u128;
        let next_b = (j + 1) as u128 * na as u128;
        let next = next_a.min(next_b) as f64 / (na as f64 * nb as f64);
        sum += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if next_a <= next_b {
            i += 1;
        }
        if next_b <= next_a {
            j += 1;
        }
    }
    Ok(sum.max(0.0).sqrt())
}

fn is_sorted(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

/// W2 between a sorted sample and `N(mean, sd²)`, matching order statistic
/// `i` with the quantile at `(i + ½)/n`.
pub fn w2_1d_to_normal(sorted: &[f64], mean: f64, sd: f64) -> Result<f64> {
    if sorted.is_empty() || !is_sorted(sorted) {
        return Err(Error::InvalidConfig("need a non-empty sorted sample".into()));
    }
    let n = sorted.len() as f64;
    let sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (x - mean - sd * std_normal_quantile((i as f64 + 0.5) / n)).powi(2))
        .sum();
    Ok((sum / n).sqrt())
}

/// Exact W2 between two equally sized point clouds by optimal assignment.
pub fn assignment_w2(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    let n = a.len();
    if n == 0 || n != b.len() {
        return Err(Error::InvalidConfig("assignment needs equal, non-empty samples".into()));
    }
    if n > ASSIGNMENT_MAX {
        return Err(Error::InvalidConfig(format!("assignment is limited to {ASSIGNMENT_MAX} points")));
    }
    let cost = DMatrix::from_fn(n, n, |i, j| (&a[i] - &b[j]).norm_squared());
    let assign = hungarian(&cost);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((total / n as f64).sqrt())
}

/// Minimum-cost perfect matching; returns the column assigned to each row.
fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[row_of[j] - 1] = j - 1;
    }
    out
}

/// Root mean of squared 1-d W2 over random unit directions.
pub fn sliced_w2<R: Rng + ?Sized>(
    a: &[DVector<f64>],
    b: &[DVector<f64>],
    directions: usize,
    rng: &mut R,
) -> Result<f64> {
    let p = a.first().map(|v| v.len()).ok_or_else(|| Error::InvalidConfig("empty sample".into()))?;
    if b.is_empty() || directions == 0 {
        return Err(Error::InvalidConfig("need samples and at least one direction".into()));
    }
    let mut total = 0.0;
    for _ in 0..directions {
        let mut dir = DVector::from_fn(p, |_, _| randn(rng));
        dir /= dir.norm();
        let mut pa: Vec<f64> = a.iter().map(|v| v.dot(&dir)).collect();
        let mut pb: Vec<f64> = b.iter().map(|v| v.dot(&dir)).collect();
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        total += w2_1d(&pa, &pb)?.powi(2);
    }
    Ok((total / directions as f64).sqrt())
}

/// Assignment when both samples have the same size up to
/// [`ASSIGNMENT_MAX`], sliced with 200 directions otherwise.
pub fn w2_auto<R: Rng + ?Sized>(a: &[DVector<f64>], b: &[DVector<f64>], rng: &mut R) -> Result<f64> {
    if a.len() == b.len() && a.len() <= ASSIGNMENT_MAX {
        assignment_w2(a, b)
    } else {
        sliced_w2(a, b, 200, rng)
    }
}

/// W2 between `N(m1, c1)` and `N(m2, c2)`.
pub fn gaussian_w2(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let root2 = psd_sqrt(c2)?;
    let cross = psd_sqrt(&(&root2 * c1 * &root2))?;
    let bures = (c1.trace() + c2.trace() - 2.0 * cross.trace()).max(0.0);
    Ok(((m1 - m2).norm_squared() + bures).sqrt())
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension("matrix square root needs a square matrix".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Sample mean and unbiased covariance.
pub fn sample_mean_cov(draws: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = draws.len();
    if n < 2 {
        return Err(Error::InvalidConfig("need at least two draws".into()));
    }
    let p = draws[0].len();
    let mean = draws.iter().fold(DVector::zeros(p), |acc, d| acc + d) / n as f64;
    let mut cov = DMatrix::zeros(p, p);
    for d in draws {
        let c = d - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    Ok((mean, cov / (n - 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn shift_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = sorted((0..100).map(|_| randn(&mut rng)).collect());
        assert_eq!(w2_1d(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.7).collect();
        assert!((w2_1d(&a, &b).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn unequal_sizes_use_quantile_functions() {
        // {0, 1} against {0, 0.5, 1}: quantile gaps 0, 0.5, 0, 0 on thirds
        // and halves give ∫ = (1/6)·0.25 + (1/6)·0.25.
        let w = w2_1d(&[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert!((w * w - 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn assignment_matches_sorting_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..60).map(|_| randn(&mut rng)).collect();
        let b: Vec<f64> = (0..60).map(|_| 2.0 * randn(&mut rng) + 0.3).collect();
        let va: Vec<DVector<f64>> = a.iter().map(|&x| DVector::from_element(1, x)).collect();
        let vb: Vec<DVector<f64>> = b.iter().map(|&x| DVector::from_element(1, x)).collect();
        let exact = w2_1d(&sorted(a), &sorted(b)).unwrap();
        assert!((assignment_w2(&va, &vb).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn assignment_against_permutation_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_fn(2, |_, _| randn(&mut rng))).collect();
        let b: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_fn(2, |_, _| randn(&mut rng))).collect();
        let mut perm: Vec<usize> = (0..6).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| (&a[i] - &b[j]).norm_squared()).sum();
            best = best.min(c);
        });
        let w = assignment_w2(&a, &b).unwrap();
        assert!((w * w * 6.0 - best).abs() < 1e-10);
    }

    fn permute<F: FnMut(&[usize])>(v: &mut Vec<usize>, k: usize, f: &mut F) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn gaussian_w2_commuting_case() {
        let c1 = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let c2 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0]));
        let m1 = DVector::from_vec(vec![0.0, 1.0]);
        let m2 = DVector::from_vec(vec![0.0, 0.0]);
        let w = gaussian_w2(&m1, &c1, &m2, &c2).unwrap();
        assert!((w * w - (1.0 + 1.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn normal_quantile_coupling() {
        let n = 20_000;
        let exact: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * std_normal_quantile((i as f64 + 0.5) / n as f64)).collect();
        assert!(w2_1d_to_normal(&exact, 1.0, 2.0).unwrap() < 1e-12);
    }
}
