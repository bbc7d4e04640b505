//! Stochastic localization sampler.
//!
//! The observation process `θ_t = tβ + W_t` is simulated with the drift
//! `â(θ, t)`, the mean of the tilted posterior
//! `p_{t,θ}(β) ∝ exp(θᵀβ − t‖β‖²/2) π(β | y)` restricted to a model set `S`.
//! For each model the tilted law of `β` is Gaussian, so `â` is a mixture of
//! closed-form component means `v(z)` with weights `c(z)`.

use nalgebra::{Cholesky, DVector};

use crate::error::{Error, Result};
use crate::math::{cholesky_in_place, cholesky_solve_in_place, log_sum_exp, randn, sigmoid};
use crate::model::{Dataset, ModelIndicator, Prior};
use crate::rng::stream;

/// `(θ_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationState {
    pub theta: DVector<f64>,
    pub t: f64,
}

impl LocalizationState {
    pub fn new(theta: DVector<f64>, t: f64) -> Result<Self> {
        if !(t >= 0.0) || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("localization state needs t ≥ 0 and finite θ".into()));
        }
        Ok(Self { theta, t })
    }

    pub fn origin(p: usize) -> Self {
        Self { theta: DVector::zeros(p), t: 0.0 }
    }
}

/// Models over which the drift is averaged. Every member contains `base`
/// and adds at most `max_extra` coordinates to it.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartSet {
    base: ModelIndicator,
    models: Vec<ModelIndicator>,
    max_extra: usize,
}

impl WarmStartSet {
    /// Every `base ∪ E` with `E ⊆ pool ∖ base` and `|E| ≤ max_extra`.
    pub fn supersets(base: &ModelIndicator, pool: &[usize], max_extra: usize) -> Result<Self> {
        let p = base.len();
        if pool.iter().any(|&j| j >= p) {
            return Err(Error::Dimension("pool column out of range".into()));
        }
        let mut cands: Vec<usize> = pool.iter().copied().filter(|&j| !base.get(j)).collect();
        cands.sort_unstable();
        cands.dedup();
        let mut models = Vec::new();
        let mut chosen = Vec::new();
        collect_subsets(&cands, 0, max_extra, &mut chosen, &mut |extra| {
            let mut z = base.clone();
            for &j in extra {
                z.set(j, true);
            }
            models.push(z);
        });
        Ok(Self { base: base.clone(), models, max_extra })
    }

    /// All `2^p` models.
    pub fn all_models(p: usize) -> Self {
        let pool: Vec<usize> = (0..p).collect();
        Self::supersets(&ModelIndicator::empty(p), &pool, p).expect("indices are in range")
    }

    pub fn single(z: ModelIndicator) -> Self {
        Self { base: z.clone(), models: vec![z], max_extra: 0 }
    }

    /// Explicit list; checks the containment, size and uniqueness rules.
    pub fn from_models(
        base: ModelIndicator,
        models: Vec<ModelIndicator>,
        max_extra: usize,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for z in &models {
            if !base.is_subset_of(z) {
                return Err(Error::InvalidConfig(format!("model {z} does not contain the base")));
            }
            if z.active_count() > base.active_count() + max_extra {
                return Err(Error::InvalidConfig(format!("model {z} has too many extras")));
            }
            if !seen.insert(z.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate model {z}")));
            }
        }
        Ok(Self { base, models, max_extra })
    }

    pub fn base(&self) -> &ModelIndicator {
        &self.base
    }
    pub fn models(&self) -> &[ModelIndicator] {
        &self.models
    }
    pub fn max_extra(&self) -> usize {
        self.max_extra
    }
    pub fn len(&self) -> usize {
        self.models.len()
    }
    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

fn collect_subsets<F: FnMut(&[usize])>(
    cands: &[usize],
    start: usize,
    budget: usize,
    chosen: &mut Vec<usize>,
    emit: &mut F,
) {
    emit(chosen);
    if budget == 0 {
        return;
    }
    for i in start..cands.len() {
        chosen.push(cands[i]);
        collect_subsets(cands, i + 1, budget - 1, chosen, emit);
        chosen.pop();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlocConfig {
    pub horizon: f64,
    pub step: f64,
    pub mc_paths: usize,
    pub seed: u64,
    /// Verify at every drift evaluation that `â` lies in the coordinatewise
    /// hull of the component means.
    pub check_hull: bool,
}

impl Default for SlocConfig {
    fn default() -> Self {
        Self { horizon: 64.0, step: 0.01, mc_paths: 1000, seed: 0, check_hull: false }
    }
}

impl SlocConfig {
    /// Number of Euler steps `K = T / h`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.horizon > 0.0 && self.step > 0.0 && self.step <= self.horizon) {
            return Err(Error::InvalidConfig("need 0 < step ≤ horizon".into()));
        }
        let k = self.horizon / self.step;
        let rounded = k.round();
        if (k - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} is not a whole number of steps of {}",
                self.horizon, self.step
            )));
        }
        Ok(rounded as usize)
    }
}

/// Mean of the tilted law of `β` within model `z`, and the log weight of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedComponent {
    pub v: DVector<f64>,
    pub log_c: f64,
}

/// Direct evaluation of one component with its own factorization.
pub fn tilted_component(
    z: &ModelIndicator,
    state: &LocalizationState,
    data: &Dataset,
    prior: &Prior,
) -> Result<TiltedComponent> {
    data.check_model(z)?;
    let p = data.p();
    if state.theta.len() != p {
        return Err(Error::Dimension("theta length differs from p".into()));
    }
    let sigma2 = prior.sigma() * prior.sigma();
    let t = state.t;
    let s1 = 1.0 / (prior.tau1() * prior.tau1()) + t;
    let s0 = 1.0 / (prior.tau0() * prior.tau0()) + t;
    let active = z.active();
    let xz = data.columns(&active);
    let mut prec = xz.tr_mul(&xz) / sigma2;
    for i in 0..active.len() {
        prec[(i, i)] += s1;
    }
    let mut rhs = xz.tr_mul(data.y()) / sigma2;
    for (i, &j) in active.iter().enumerate() {
        rhs[i] += state.theta[j];
    }
    let chol = Cholesky::new(prec)
        .ok_or_else(|| Error::Numerical("tilted precision is not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    let mut v = state.theta.map(|th| th / s0);
    let mut inactive_quad = 0.0;
    for j in z.inactive() {
        inactive_quad += state.theta[j] * state.theta[j] / s0;
    }
    for (i, &j) in active.iter().enumerate() {
        v[j] = sol[i];
    }
    let k = active.len() as f64;
    let log_c = 0.5 * rhs.dot(&sol) - 0.5 * chol.ln_determinant() + 0.5 * inactive_quad
        - 0.5 * (p as f64 - k) * s0.ln()
        + k * active_model_log_weight(prior);
    Ok(TiltedComponent { v, log_c })
}

/// `log(q τ0 / ((1 − q) τ1))`, the per-coordinate weight of switching on.
fn active_model_log_weight(prior: &Prior) -> f64 {
    prior.log_prior_odds() + (prior.tau0() / prior.tau1()).ln()
}

/// Drift evaluator specialized to one model set. Models share the
/// factorization of the base block; each model only factors the Schur
/// complement of its extra columns.
#[derive(Debug, Clone)]
pub struct DriftEngine {
    p: usize,
    /// Pool columns: base first, then extras.
    cols: Vec<usize>,
    k0: usize,
    n_extra: usize,
    /// `X_poolᵀX_pool / σ²`, row-major.
    gram: Vec<f64>,
    /// `X_poolᵀy / σ²`.
    xty: Vec<f64>,
    /// Extras of each model as indices into `0..n_extra`.
    model_extras: Vec<Vec<usize>>,
    inv_tau0_sq: f64,
    inv_tau1_sq: f64,
    switch_weight: f64,
    check_hull: bool,
    scratch: Scratch,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    rhs: Vec<f64>,
    base_l: Vec<f64>,
    x_base: Vec<f64>,
    w: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    schur: Vec<f64>,
    r: Vec<f64>,
    /// Per model, the component mean on the pool (base then extras order of
    /// that model).
    values: Vec<f64>,
    offsets: Vec<usize>,
    log_c: Vec<f64>,
    weights: Vec<f64>,
}

/// Where the weight of the last evaluation sat.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSummary {
    pub top_model: usize,
    pub top_weight: f64,
}

impl DriftEngine {
    pub fn new(data: &Dataset, prior: &Prior, set: &WarmStartSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyModelSet);
        }
        let p = data.p();
        for z in set.models() {
            data.check_model(z)?;
        }
        data.check_model(set.base())?;
        let base_cols = set.base().active();
        let mut in_pool = vec![false; p];
        for z in set.models() {
            for j in z.active() {
                in_pool[j] = true;
            }
        }
        let extra_cols: Vec<usize> =
            (0..p).filter(|&j| in_pool[j] && !set.base().get(j)).collect();
        let mut extra_index = vec![usize::MAX; p];
        for (e, &j) in extra_cols.iter().enumerate() {
            extra_index[j] = e;
        }
        let model_extras = set
            .models()
            .iter()
            .map(|z| z.active().into_iter().filter(|&j| !set.base().get(j)).map(|j| extra_index[j]).collect())
            .collect();
        let cols: Vec<usize> = base_cols.iter().chain(extra_cols.iter()).copied().collect();
        let sigma2 = prior.sigma() * prior.sigma();
        let xc = data.columns(&cols);
        let g = xc.tr_mul(&xc) / sigma2;
        let m = cols.len();
        let gram = (0..m * m).map(|i| g[(i / m, i % m)]).collect();
        let xty = (xc.tr_mul(data.y()) / sigma2).iter().copied().collect();
        Ok(Self {
            p,
            k0: base_cols.len(),
            n_extra: extra_cols.len(),
            cols,
            gram,
            xty,
            model_extras,
            inv_tau0_sq: 1.0 / (prior.tau0() * prior.tau0()),
            inv_tau1_sq: 1.0 / (prior.tau1() * prior.tau1()),
            switch_weight: active_model_log_weight(prior),
            check_hull: false,
            scratch: Scratch::default(),
        })
    }

    pub fn with_hull_check(mut self, on: bool) -> Self {
        self.check_hull = on;
        self
    }

    pub fn n_models(&self) -> usize {
        self.model_extras.len()
    }

    /// Normalized model weights from the last evaluation.
    pub fn weights(&self) -> &[f64] {
        &self.scratch.weights
    }

    pub fn summary(&self) -> DriftSummary {
        let (top_model, top_weight) = self
            .scratch
            .weights
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::NAN));
        DriftSummary { top_model, top_weight }
    }

    /// Writes `â(θ, t)` into `out`.
    pub fn drift_into(&mut self, theta: &DVector<f64>, t: f64, out: &mut DVector<f64>) -> Result<()> {
        let (p, k0, ne) = (self.p, self.k0, self.n_extra);
        let m = self.cols.len();
        if theta.len() != p || out.len() != p {
            return Err(Error::Dimension("drift vectors must have length p".into()));
        }
        let s1 = self.inv_tau1_sq + t;
        let s0 = self.inv_tau0_sq + t;
        let sc = &mut self.scratch;
        let gram = &self.gram;

        sc.rhs.clear();
        sc.rhs.extend((0..m).map(|l| self.xty[l] + theta[self.cols[l]]));

        // Base block.
        sc.base_l.clear();
        for a in 0..k0 {
            for b in 0..k0 {
                sc.base_l.push(gram[a * m + b] + if a == b { s1 } else { 0.0 });
            }
        }
        let log_det_base = cholesky_in_place(&mut sc.base_l, k0)
            .ok_or_else(|| Error::Numerical("base block is not positive definite".into()))?;
        sc.x_base.clear();
        sc.x_base.extend_from_slice(&sc.rhs[..k0]);
        cholesky_solve_in_place(&sc.base_l, k0, &mut sc.x_base);
        let quad_base: f64 = sc.rhs[..k0].iter().zip(&sc.x_base).map(|(a, b)| a * b).sum();

        // W = P_B⁻¹ G_{B,E}, g = G_{E,B} x_B, H = G_{E,B} W.
        sc.w.clear();
        sc.g.clear();
        for e in 0..ne {
            let row = (k0 + e) * m;
            let start = sc.w.len();
            sc.w.extend_from_slice(&gram[row..row + k0]);
            cholesky_solve_in_place(&sc.base_l, k0, &mut sc.w[start..start + k0]);
            sc.g.push((0..k0).map(|b| gram[row + b] * sc.x_base[b]).sum());
        }
        sc.h.clear();
        for e in 0..ne {
            let row = (k0 + e) * m;
            for f in 0..ne {
                let wf = &sc.w[f * k0..(f + 1) * k0];
                sc.h.push((0..k0).map(|b| gram[row + b] * wf[b]).sum());
            }
        }

        let theta_sq_total: f64 = theta.iter().map(|v| v * v).sum();
        let theta_sq_base: f64 = self.cols[..k0].iter().map(|&j| theta[j] * theta[j]).sum();

        sc.values.clear();
        sc.offsets.clear();
        sc.log_c.clear();
        for extras in &self.model_extras {
            let me = extras.len();
            sc.schur.clear();
            sc.r.clear();
            for (a, &e) in extras.iter().enumerate() {
                for (b, &f) in extras.iter().enumerate() {
                    let diag = if a == b { s1 } else { 0.0 };
                    sc.schur.push(gram[(k0 + e) * m + k0 + f] + diag - sc.h[e * ne + f]);
                }
                sc.r.push(sc.rhs[k0 + e] - sc.g[e]);
            }
            let log_det_schur = cholesky_in_place(&mut sc.schur, me)
                .ok_or_else(|| Error::Numerical("Schur complement is not positive definite".into()))?;
            let r_orig_quad_start = sc.r.clone();
            cholesky_solve_in_place(&sc.schur, me, &mut sc.r);
            let quad = quad_base
                + r_orig_quad_start.iter().zip(&sc.r).map(|(a, b)| a * b).sum::<f64>();

            sc.offsets.push(sc.values.len());
            for b in 0..k0 {
                let mut v = sc.x_base[b];
                for (a, &e) in extras.iter().enumerate() {
                    v -= sc.w[e * k0 + b] * sc.r[a];
                }
                sc.values.push(v);
            }
            sc.values.extend_from_slice(&sc.r);

            let k = (k0 + me) as f64;
            let theta_sq_active =
                theta_sq_base + extras.iter().map(|&e| theta[self.cols[k0 + e]].powi(2)).sum::<f64>();
            let log_c = 0.5 * quad - 0.5 * (log_det_base + log_det_schur)
                + 0.5 * (theta_sq_total - theta_sq_active) / s0
                - 0.5 * (p as f64 - k) * s0.ln()
                + k * self.switch_weight;
            sc.log_c.push(log_c);
        }

        let norm = log_sum_exp(&sc.log_c);
        if !norm.is_finite() {
            return Err(Error::Numerical("model weights are not normalizable".into()));
        }
        sc.weights.clear();
        sc.weights.extend(sc.log_c.iter().map(|l| (l - norm).exp()));

        for j in 0..p {
            out[j] = theta[j] / s0;
        }
        for (i, extras) in self.model_extras.iter().enumerate() {
            let w = sc.weights[i];
            let vals = &sc.values[sc.offsets[i]..];
            for b in 0..k0 {
                let j = self.cols[b];
                out[j] += w * (vals[b] - theta[j] / s0);
            }
            for (a, &e) in extras.iter().enumerate() {
                let j = self.cols[k0 + e];
                out[j] += w * (vals[k0 + a] - theta[j] / s0);
            }
        }

        if self.check_hull {
            self.verify_hull(theta, s0, out)?;
        }
        Ok(())
    }

    pub fn drift(&mut self, theta: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.p);
        self.drift_into(theta, t, &mut out)?;
        Ok(out)
    }

    fn verify_hull(&self, theta: &DVector<f64>, s0: f64, out: &DVector<f64>) -> Result<()> {
        let sc = &self.scratch;
        let mut lo = theta.map(|v| v / s0);
        let mut hi = lo.clone();
        let mut everywhere_active = vec![true; self.p];
        let mut touched = vec![false; self.p];
        for (i, extras) in self.model_extras.iter().enumerate() {
            let vals = &sc.values[sc.offsets[i]..];
            let mut active_here = vec![false; self.p];
            let mut visit = |j: usize, v: f64, lo: &mut DVector<f64>, hi: &mut DVector<f64>| {
                if !touched[j] {
                    lo[j] = v;
                    hi[j] = v;
                    touched[j] = true;
                } else {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            };
            for b in 0..self.k0 {
                visit(self.cols[b], vals[b], &mut lo, &mut hi);
                active_here[self.cols[b]] = true;
            }
            for (a, &e) in extras.iter().enumerate() {
                let j = self.cols[self.k0 + e];
                visit(j, vals[self.k0 + a], &mut lo, &mut hi);
                active_here[j] = true;
            }
            for j in 0..self.p {
                everywhere_active[j] &= active_here[j];
            }
        }
        for j in 0..self.p {
            if !everywhere_active[j] {
                let u = theta[j] / s0;
                lo[j] = lo[j].min(u);
                hi[j] = hi[j].max(u);
            }
            let slack = 1e-9 * (1.0 + lo[j].abs().max(hi[j].abs()));
            if out[j] < lo[j] - slack || out[j] > hi[j] + slack {
                return Err(Error::Numerical(format!(
                    "drift coordinate {j} = {} outside [{}, {}]",
                    out[j], lo[j], hi[j]
                )));
            }
        }
        Ok(())
    }
}

/// `â(θ, t)` over the model set.
pub fn sl_drift(
    state: &LocalizationState,
    set: &WarmStartSet,
    data: &Dataset,
    prior: &Prior,
) -> Result<DVector<f64>> {
    DriftEngine::new(data, prior, set)?.drift(&state.theta, state.t)
}

/// Per-step record of one path, for debugging dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub drift_norm: f64,
    pub top_model: usize,
    pub top_weight: f64,
}

/// Simulates one path on its own random stream and returns `â(θ_K, Kh)`.
/// `observe(k, θ_k, â(θ_k, kh))` is called for `k = 0..=K`.
pub fn sl_path<F>(
    engine: &mut DriftEngine,
    config: &SlocConfig,
    path: u64,
    mut observe: F,
) -> Result<DVector<f64>>
where
    F: FnMut(usize, &DVector<f64>, &DVector<f64>, &DriftEngine),
{
    let k_steps = config.steps()?;
    let h = config.step;
    let sqrt_h = h.sqrt();
    let p = engine.p;
    let mut rng = stream(config.seed, path);
    let mut theta = DVector::zeros(p);
    let mut drift = DVector::zeros(p);
    for k in 0..k_steps {
        engine.drift_into(&theta, k as f64 * h, &mut drift)?;
        observe(k, &theta, &drift, engine);
        for j in 0..p {
            theta[j] += h * drift[j] + sqrt_h * randn(&mut rng);
        }
    }
    engine.drift_into(&theta, k_steps as f64 * h, &mut drift)?;
    observe(k_steps, &theta, &drift, engine);
    Ok(drift)
}

/// Runs `config.mc_paths` independent paths; path `i` uses stream `i` of
/// `config.seed`.
pub fn sl_run(
    data: &Dataset,
    prior: &Prior,
    set: &WarmStartSet,
    config: &SlocConfig,
) -> Result<Vec<DVector<f64>>> {
    sl_run_range(data, prior, set, config, 0..config.mc_paths as u64)
}

/// Paths with the given indices; splitting the range across workers gives
/// the same outputs as one call.
pub fn sl_run_range(
    data: &Dataset,
    prior: &Prior,
    set: &WarmStartSet,
    config: &SlocConfig,
    paths: std::ops::Range<u64>,
) -> Result<Vec<DVector<f64>>> {
    let mut engine = DriftEngine::new(data, prior, set)?.with_hull_check(config.check_hull);
    paths
        .map(|i| sl_path(&mut engine, config, i, |_, _, _, _| {}))
        .collect()
}

/// Drift trace of a single path.
pub fn sl_trace(
    data: &Dataset,
    prior: &Prior,
    set: &WarmStartSet,
    config: &SlocConfig,
    path: u64,
) -> Result<Vec<TracePoint>> {
    let mut engine = DriftEngine::new(data, prior, set)?.with_hull_check(config.check_hull);
    let mut trace = Vec::new();
    sl_path(&mut engine, config, path, |k, _, a, eng| {
        let s = eng.summary();
        trace.push(TracePoint {
            t: k as f64 * config.step,
            drift_norm: a.norm(),
            top_model: s.top_model,
            top_weight: s.top_weight,
        });
    })?;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleCheckpoint {
    pub t: f64,
    pub mean: DVector<f64>,
    pub std_err: DVector<f64>,
    /// `‖mean − â(0, 0)‖∞`.
    pub deviation: f64,
    /// Largest coordinatewise deviation in units of its standard error.
    pub max_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub initial: DVector<f64>,
    pub paths: usize,
    pub checkpoints: Vec<MartingaleCheckpoint>,
}

impl MartingaleReport {
    /// Whether every checkpoint is within `bands` standard errors.
    pub fn within(&self, bands: f64) -> bool {
        self.checkpoints.iter().all(|c| c.max_z <= bands)
    }
}

/// Path averages of `â(θ_t, t)` at `t ∈ {0, T/4, T/2, T}` against `â(0, 0)`.
pub fn martingale_check(
    data: &Dataset,
    prior: &Prior,
    set: &WarmStartSet,
    config: &SlocConfig,
) -> Result<MartingaleReport> {
    let k_steps = config.steps()?;
    let marks = [0, k_steps / 4, k_steps / 2, k_steps];
    let mut engine = DriftEngine::new(data, prior, set)?.with_hull_check(config.check_hull);
    let p = data.p();
    let initial = engine.drift(&DVector::zeros(p), 0.0)?;
    let mut sums = vec![DVector::<f64>::zeros(p); marks.len()];
    let mut sq = vec![DVector::<f64>::zeros(p); marks.len()];
    for path in 0..config.mc_paths as u64 {
        sl_path(&mut engine, config, path, |k, _, a, _| {
            for (m, &mark) in marks.iter().enumerate() {
                if k == mark {
                    sums[m] += a;
                    sq[m] += a.component_mul(a);
                }
            }
        })?;
    }
    let n = config.mc_paths as f64;
    let checkpoints = marks
        .iter()
        .enumerate()
        .map(|(m, &mark)| {
            let mean = &sums[m] / n;
            let var = (&sq[m] / n - mean.component_mul(&mean)).map(|v| v.max(0.0) * n / (n - 1.0).max(1.0));
            let std_err = var.map(|v| (v / n).sqrt());
            let diff = &mean - &initial;
            let max_z = diff
                .iter()
                .zip(std_err.iter())
                .map(|(d, s)| if d.abs() <= 1e-12 * (1.0 + initial.amax()) { 0.0 } else { d.abs() / s })
                .fold(0.0, f64::max);
            MartingaleCheckpoint {
                t: mark as f64 * config.step,
                deviation: diff.amax(),
                mean,
                std_err,
                max_z,
            }
        })
        .collect();
    Ok(MartingaleReport { initial, paths: config.mc_paths, checkpoints })
}

/// Drift of coordinate `j` under a point-mass spike for an orthogonal
/// design: `b / (P + ((1 − q)/q) P^{3/2} τ1 exp(−b²/(2P)))` with
/// `b = θ_j + x_jᵀy/σ²` and `P = t + ‖x_j‖²/σ² + 1/τ1²`.
pub fn ortho_drift_pointmass(j: usize, state: &LocalizationState, data: &Dataset, prior: &Prior) -> f64 {
    let (b, prec) = slab_terms(j, state, data, prior);
    // Slab weight (q/τ1) P^{-1/2} exp(b²/2P) against spike weight (1 − q).
    let log_slab = prior.q().ln() - prior.tau1().ln() - 0.5 * prec.ln() + b * b / (2.0 * prec);
    let log_spike = (-prior.q()).ln_1p();
    (b / prec) * sigmoid(log_slab - log_spike)
}

/// Drift of coordinate `j` under the Gaussian spike with the sparsified
/// likelihood for an orthogonal design: a two-component mixture of the slab
/// mean `b/P` and the spike mean `θ_j/(t + 1/τ0²)`.
pub fn ortho_drift_gaussian(j: usize, state: &LocalizationState, data: &Dataset, prior: &Prior) -> f64 {
    let (b, prec) = slab_terms(j, state, data, prior);
    let theta = state.theta[j];
    let prec0 = state.t + 1.0 / (prior.tau0() * prior.tau0());
    let log_slab = prior.q().ln() - prior.tau1().ln() - 0.5 * prec.ln() + b * b / (2.0 * prec);
    let log_spike =
        (-prior.q()).ln_1p() - prior.tau0().ln() - 0.5 * prec0.ln() + theta * theta / (2.0 * prec0);
    let w_slab = sigmoid(log_slab - log_spike);
    w_slab * (b / prec) + (1.0 - w_slab) * (theta / prec0)
}

fn slab_terms(j: usize, state: &LocalizationState, data: &Dataset, prior: &Prior) -> (f64, f64) {
    let sigma2 = prior.sigma() * prior.sigma();
    let b = state.theta[j] + data.x().column(j).dot(data.y()) / sigma2;
    let prec = state.t + data.col_sq_norm(j) / sigma2 + 1.0 / (prior.tau1() * prior.tau1());
    (b, prec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| randn(&mut rng));
        let y = DVector::from_fn(n, |_, _| randn(&mut rng));
        Dataset::new(x, y).unwrap()
    }

    fn brute_drift(state: &LocalizationState, set: &WarmStartSet, d: &Dataset, prior: &Prior) -> DVector<f64> {
        let comps: Vec<TiltedComponent> =
            set.models().iter().map(|z| tilted_component(z, state, d, prior).unwrap()).collect();
        let logs: Vec<f64> = comps.iter().map(|c| c.log_c).collect();
        let norm = log_sum_exp(&logs);
        comps.iter().fold(DVector::zeros(d.p()), |acc, c| acc + &c.v * (c.log_c - norm).exp())
    }

    #[test]
    fn set_sizes_follow_binomials() {
        let base = ModelIndicator::from_active(8, &[1, 4]).unwrap();
        let set = WarmStartSet::supersets(&base, &[0, 2, 3, 5, 6, 7, 1], 2).unwrap();
        assert_eq!(set.len(), 1 + 6 + 15);
        assert!(set.models().iter().all(|z| base.is_subset_of(z)));
        assert_eq!(WarmStartSet::all_models(3).len(), 8);
        let dup = vec![base.clone(), base.clone()];
        assert!(WarmStartSet::from_models(base, dup, 1).is_err());
    }

    #[test]
    fn shared_factorization_matches_direct_components() {
        let d = data(9, 6, 1);
        let prior = Prior::new(0.2, 0.15, 2.0, 0.9).unwrap();
        let base = ModelIndicator::from_active(6, &[0, 3]).unwrap();
        let set = WarmStartSet::supersets(&base, &[1, 2, 4, 5], 2).unwrap();
        let mut engine = DriftEngine::new(&d, &prior, &set).unwrap().with_hull_check(true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &t in &[0.0, 0.7, 12.0] {
            let theta = DVector::from_fn(6, |_, _| 2.0 * randn(&mut rng));
            let state = LocalizationState::new(theta.clone(), t).unwrap();
            let fast = engine.drift(&theta, t).unwrap();
            let slow = brute_drift(&state, &set, &d, &prior);
            assert!((fast - slow).amax() < 1e-10);
        }
    }

    #[test]
    fn empty_base_and_full_enumeration() {
        let d = data(5, 3, 3);
        let prior = Prior::new(0.4, 0.3, 1.5, 1.0).unwrap();
        let set = WarmStartSet::all_models(3);
        let state = LocalizationState::new(DVector::from_vec(vec![0.3, -1.0, 2.0]), 1.5).unwrap();
        let fast = sl_drift(&state, &set, &d, &prior).unwrap();
        assert!((fast - brute_drift(&state, &set, &d, &prior)).amax() < 1e-10);
    }

    #[test]
    fn single_model_drift_is_its_component() {
        let d = data(6, 3, 4);
        let prior = Prior::new(0.4, 0.3, 1.5, 1.0).unwrap();
        let z = ModelIndicator::from_active(3, &[1]).unwrap();
        let state = LocalizationState::new(DVector::from_vec(vec![0.5, 0.1, -0.4]), 2.0).unwrap();
        let a = sl_drift(&state, &WarmStartSet::single(z.clone()), &d, &prior).unwrap();
        let c = tilted_component(&z, &state, &d, &prior).unwrap();
        assert!((a - c.v).amax() < 1e-12);
    }

    #[test]
    fn origin_component_is_conditional_mean() {
        let d = data(7, 4, 5);
        let prior = Prior::new(0.4, 0.3, 1.5, 0.8).unwrap();
        let z = ModelIndicator::from_active(4, &[0, 2]).unwrap();
        let c = tilted_component(&z, &LocalizationState::origin(4), &d, &prior).unwrap();
        let bc = crate::model::beta_conditional_params(&z, &d, &prior).unwrap();
        assert!((c.v - bc.full_mean(4)).amax() < 1e-12);
    }

    #[test]
    fn large_time_component_approaches_theta_over_t() {
        let d = data(4, 3, 6);
        let prior = Prior::new(0.4, 0.3, 1.5, 1.0).unwrap();
        let t = 1e8;
        let theta = DVector::from_vec(vec![2e8, -5e7, 1e7]);
        let state = LocalizationState::new(theta.clone(), t).unwrap();
        for mask in 0..8 {
            let c = tilted_component(&ModelIndicator::from_mask(3, mask), &state, &d, &prior).unwrap();
            for j in 0..3 {
                let r = theta[j] / t;
                assert!(((c.v[j] - r) / r).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn empty_set_is_rejected() {
        let d = data(4, 2, 7);
        let prior = Prior::new(0.4, 0.3, 1.5, 1.0).unwrap();
        let set = WarmStartSet::from_models(ModelIndicator::empty(2), vec![], 0).unwrap();
        assert!(matches!(
            sl_drift(&LocalizationState::origin(2), &set, &d, &prior),
            Err(Error::EmptyModelSet)
        ));
    }

    #[test]
    fn orthogonal_forms_at_origin() {
        let x = DMatrix::identity(3, 3);
        let d = Dataset::new(x, DVector::zeros(3)).unwrap();
        let prior = Prior::new(0.2, 0.1, 2.0, 1.0).unwrap();
        let s = LocalizationState::origin(3);
        assert_eq!(ortho_drift_pointmass(0, &s, &d, &prior), 0.0);
        assert_eq!(ortho_drift_gaussian(0, &s, &d, &prior), 0.0);
    }

    #[test]
    fn gaussian_spike_form_tracks_slab_at_large_time() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let d = Dataset::new(x, DVector::from_element(1, 0.3)).unwrap();
        let prior = Prior::new(0.2, 0.1, 2.0, 1.0).unwrap();
        let (t, b) = (1e8, 1.7);
        let s = LocalizationState::new(DVector::from_element(1, t * b), t).unwrap();
        let a = ortho_drift_gaussian(0, &s, &d, &prior);
        assert!(((a - b) / b).abs() < 1e-4);
    }

    #[test]
    fn gaussian_spike_form_matches_general_drift() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let d = Dataset::new(x, DVector::from_element(1, 0.8)).unwrap();
        let prior = Prior::new(0.3, 0.2, 1.7, 0.6).unwrap();
        let set = WarmStartSet::all_models(1);
        for &(th, t) in &[(0.0, 0.0), (1.3, 0.5), (-4.0, 3.0), (20.0, 10.0)] {
            let s = LocalizationState::new(DVector::from_element(1, th), t).unwrap();
            let general = sl_drift(&s, &set, &d, &prior).unwrap()[0];
            assert!((general - ortho_drift_gaussian(0, &s, &d, &prior)).abs() < 1e-12);
        }
    }

    #[test]
    fn step_count_validation() {
        assert_eq!(SlocConfig { horizon: 64.0, step: 0.01, ..Default::default() }.steps().unwrap(), 6400);
        assert!(SlocConfig { horizon: 1.0, step: 0.3, ..Default::default() }.steps().is_err());
        assert!(SlocConfig { horizon: 1.0, step: 2.0, ..Default::default() }.steps().is_err());
    }

    #[test]
    fn paths_are_reproducible_and_splittable() {
        let d = data(6, 3, 8);
        let prior = Prior::new(0.4, 0.3, 1.5, 1.0).unwrap();
        let set = WarmStartSet::all_models(3);
        let config = SlocConfig { horizon: 1.0, step: 0.1, mc_paths: 6, seed: 9, check_hull: true };
        let all = sl_run(&d, &prior, &set, &config).unwrap();
        let mut split = sl_run_range(&d, &prior, &set, &config, 0..2).unwrap();
        split.extend(sl_run_range(&d, &prior, &set, &config, 2..6).unwrap());
        assert_eq!(all, split);
    }
}
