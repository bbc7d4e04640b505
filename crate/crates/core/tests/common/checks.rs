//! Invariant checks shared by the property tests and the acceptance run.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeslab::diagnostics::{w2_1d, ModelLaw};
use spikeslab::gibbs::z_site_logit;
use spikeslab::linalg::LowRankCache;
use spikeslab::math::{log_sum_exp, randn};
use spikeslab::model::{
    enumerate_posterior, log_joint_density, model_marginal_log, model_marginal_log_dense, model_ratio_log,
};
use spikeslab::random_design::rd_inclusion_prob;
use spikeslab::sloc::{tilted_component, DriftEngine, LocalizationState, WarmStartSet};
use spikeslab::statgen::{lasso::lasso_kkt_residual, lasso_fit};
use spikeslab::{Dataset, JointState, ModelIndicator, Prior};

use super::random_data;

pub type Check = fn(&Instance) -> Result<(), String>;

pub const ALL: [(&str, Check); 9] = [
    ("enumeration normalization", enumeration_is_normalized),
    ("marginal ratio identities", ratio_identities),
    ("site logit vs joint density", site_logit_is_a_joint_density_difference),
    ("cache coherence", cache_stays_coherent),
    ("drift convex combination", drift_is_a_convex_combination),
    ("lasso optimality", lasso_satisfies_kkt),
    ("inclusion probability shape", inclusion_probability_is_monotone),
    ("w2 symmetry and shift", w2_symmetry_and_shift),
    ("distance triangle inequalities", distances_are_metrics),
];

#[derive(Debug, Clone)]
pub struct Instance {
    pub data: Dataset,
    pub prior: Prior,
    pub seed: u64,
}

impl Instance {
    /// Small random regression problem with a random prior.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..12);
        let p = rng.random_range(1..7);
        let tau0 = rng.random_range(0.05..0.5);
        let prior = Prior::new(
            rng.random_range(0.05..0.6),
            tau0,
            tau0 * rng.random_range(1.5..10.0),
            rng.random_range(0.3..2.0),
        )
        .unwrap();
        Self { data: random_data(n, p, seed.wrapping_add(1)), prior, seed }
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ (salt << 32))
    }
}

fn random_model(p: usize, rng: &mut ChaCha8Rng) -> ModelIndicator {
    ModelIndicator::from_bits((0..p).map(|_| rng.random::<bool>()).collect())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn enumeration_is_normalized(inst: &Instance) -> Result<(), String> {
    let table = enumerate_posterior(&inst.data, &inst.prior, 16).map_err(|e| e.to_string())?;
    let total: f64 = table.entries().map(|(_, w)| w).sum();
    ensure((total - 1.0).abs() < 1e-12, || format!("mass {total}"))?;
    ensure(table.len() == 1 << inst.data.p(), || "missing models".into())?;
    let incl = table.inclusion_probs();
    ensure(incl.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)), || format!("inclusion {incl}"))?;
    let law = ModelLaw::from_table(&table);
    ensure(law.tv(&law) == 0.0, || "self distance".into())
}

pub fn ratio_identities(inst: &Instance) -> Result<(), String> {
    let mut rng = inst.rng(1);
    let (d, pr) = (&inst.data, &inst.prior);
    let big = random_model(d.p(), &mut rng);
    let small = ModelIndicator::from_bits(big.bits().iter().map(|&b| b && rng.random::<bool>()).collect());
    let direct = model_marginal_log(&big, d, pr).unwrap() - model_marginal_log(&small, d, pr).unwrap();
    let ratio = model_ratio_log(&small, &big, d, pr).map_err(|e| e.to_string())?;
    ensure(close(ratio, direct, 1e-9), || format!("ratio {ratio} vs {direct}"))?;
    let dense = model_marginal_log_dense(&big, d, pr).unwrap();
    let inner = model_marginal_log(&big, d, pr).unwrap();
    ensure(close(dense, inner, 1e-9), || format!("dense {dense} vs {inner}"))
}

pub fn site_logit_is_a_joint_density_difference(inst: &Instance) -> Result<(), String> {
    let mut rng = inst.rng(2);
    let p = inst.data.p();
    let beta = DVector::from_fn(p, |_, _| randn(&mut rng));
    let mut state = JointState::new(beta, random_model(p, &mut rng)).unwrap();
    for j in 0..p {
        let logit = z_site_logit(j, &state, &inst.data, &inst.prior);
        state.z.set(j, true);
        let on = log_joint_density(&state, &inst.data, &inst.prior).unwrap();
        state.z.set(j, false);
        let off = log_joint_density(&state, &inst.data, &inst.prior).unwrap();
        ensure(close(logit, on - off, 1e-9), || format!("coordinate {j}: {logit} vs {}", on - off))?;
    }
    Ok(())
}

pub fn cache_stays_coherent(inst: &Instance) -> Result<(), String> {
    let mut rng = inst.rng(3);
    let p = inst.data.p();
    let mut z = random_model(p, &mut rng);
    let mut cache = LowRankCache::new(&z, &inst.data, &inst.prior).map_err(|e| e.to_string())?;
    for step in 0..40 {
        for _ in 0..rng.random_range(1..=2) {
            z.flip(rng.random_range(0..p));
        }
        cache.update(&z, &inst.data).map_err(|e| e.to_string())?;
        let err = cache.coherence_error(&inst.data, 2, &mut rng);
        ensure(err < 1e-8, || format!("step {step}: residual {err:e}"))?;
    }
    let fresh = LowRankCache::new(&z, &inst.data, &inst.prior).unwrap();
    let gap = (cache.inverse() - fresh.inverse()).amax();
    ensure(gap < 1e-8, || format!("inverse drift {gap:e}"))
}

pub fn drift_is_a_convex_combination(inst: &Instance) -> Result<(), String> {
    let mut rng = inst.rng(4);
    let p = inst.data.p();
    let t = rng.random_range(0.0..20.0);
    let theta = DVector::from_fn(p, |_, _| 3.0 * randn(&mut rng));
    let set = WarmStartSet::all_models(p);
    let mut engine = DriftEngine::new(&inst.data, &inst.prior, &set).map_err(|e| e.to_string())?;
    let drift = engine.drift(&theta, t).map_err(|e| e.to_string())?;
    let weights = engine.weights().to_vec();
    ensure(weights.iter().all(|&w| w >= 0.0), || "negative weight".into())?;
    let total: f64 = weights.iter().sum();
    ensure((total - 1.0).abs() < 1e-12, || format!("weights sum to {total}"))?;

    let state = LocalizationState::new(theta, t).unwrap();
    let comps: Vec<_> = set
        .models()
        .iter()
        .map(|z| tilted_component(z, &state, &inst.data, &inst.prior).unwrap())
        .collect();
    let log_c: Vec<f64> = comps.iter().map(|c| c.log_c).collect();
    let norm = log_sum_exp(&log_c);
    let mut mixed = DVector::zeros(p);
    for (c, w) in comps.iter().zip(&weights) {
        let direct = (c.log_c - norm).exp();
        ensure((direct - w).abs() < 1e-9, || format!("weight {w} vs {direct}"))?;
        mixed.axpy(direct, &c.v, 1.0);
    }
    for j in 0..p {
        let lo = comps.iter().map(|c| c.v[j]).fold(f64::INFINITY, f64::min);
        let hi = comps.iter().map(|c| c.v[j]).fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        ensure(drift[j] >= lo - slack && drift[j] <= hi + slack, || {
            format!("coordinate {j}: {} outside [{lo}, {hi}]", drift[j])
        })?;
        ensure(close(drift[j], mixed[j], 1e-8), || format!("coordinate {j}: {} vs {}", drift[j], mixed[j]))?;
    }
    Ok(())
}

pub fn lasso_satisfies_kkt(inst: &Instance) -> Result<(), String> {
    let mut rng = inst.rng(5);
    let lambda = rng.random_range(0.05..2.0) * 2.0 * inst.data.x().tr_mul(inst.data.y()).amax();
    let beta = lasso_fit(&inst.data, lambda).map_err(|e| e.to_string())?;
    let kkt = lasso_kkt_residual(&inst.data, &beta, lambda);
    ensure(kkt <= 1e-3 * (1.0 + lambda), || format!("KKT residual {kkt:e} at lambda {lambda}"))
}

pub fn inclusion_probability_is_monotone(inst: &Instance) -> Result<(), String> {
    let mut rng = inst.rng(6);
    let (a, b) = (rng.random_range(0.0..5.0f64), rng.random_range(0.0..5.0f64));
    let (lo, hi) = (a.min(b), a.max(b));
    let (pl, ph) = (rd_inclusion_prob(lo, &inst.prior), rd_inclusion_prob(hi, &inst.prior));
    ensure((0.0..=1.0).contains(&pl) && (0.0..=1.0).contains(&ph), || "not a probability".into())?;
    ensure(rd_inclusion_prob(-lo, &inst.prior) == pl, || "not symmetric".into())?;
    ensure(pl <= ph, || format!("{pl} at {lo} exceeds {ph} at {hi}"))
}

pub fn w2_symmetry_and_shift(inst: &Instance) -> Result<(), String> {
    let mut rng = inst.rng(7);
    let mut a: Vec<f64> = (0..rng.random_range(1..40)).map(|_| randn(&mut rng)).collect();
    let mut b: Vec<f64> = (0..rng.random_range(1..40)).map(|_| 2.0 * randn(&mut rng)).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let ab = w2_1d(&a, &b).unwrap();
    let ba = w2_1d(&b, &a).unwrap();
    ensure((ab - ba).abs() < 1e-12, || format!("{ab} vs {ba}"))?;
    let shift = rng.random_range(-3.0..3.0f64);
    let moved: Vec<f64> = a.iter().map(|v| v + shift).collect();
    let w = w2_1d(&a, &moved).unwrap();
    ensure((w - shift.abs()).abs() < 1e-12, || format!("shift {shift} gives {w}"))
}

pub fn distances_are_metrics(inst: &Instance) -> Result<(), String> {
    let mut rng = inst.rng(8);
    let p = inst.data.p();
    let law = |rng: &mut ChaCha8Rng| {
        let draws: Vec<ModelIndicator> = (0..rng.random_range(1..30))
            .map(|_| ModelIndicator::from_mask(p, rng.random_range(0..1u64 << p)))
            .collect();
        ModelLaw::from_samples(draws.iter())
    };
    let (a, b, c) = (law(&mut rng), law(&mut rng), law(&mut rng));
    let (ab, ba, bc, ac) = (a.tv(&b), b.tv(&a), b.tv(&c), a.tv(&c));
    ensure((0.0..=1.0).contains(&ab) && a.tv(&a) == 0.0, || format!("tv out of range: {ab}"))?;
    ensure((ab - ba).abs() < 1e-12, || format!("tv asymmetric: {ab} vs {ba}"))?;
    ensure(ac <= ab + bc + 1e-12, || format!("tv triangle: {ac} > {ab} + {bc}"))?;

    let sample = |scale: f64, rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..rng.random_range(1..40)).map(|_| scale * randn(rng)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (x, y, z) = (sample(1.0, &mut rng), sample(2.0, &mut rng), sample(0.5, &mut rng));
    let (xy, yz, xz) = (w2_1d(&x, &y).unwrap(), w2_1d(&y, &z).unwrap(), w2_1d(&x, &z).unwrap());
    ensure(xz <= xy + yz + 1e-12, || format!("w2 triangle: {xz} > {xy} + {yz}"))
}
