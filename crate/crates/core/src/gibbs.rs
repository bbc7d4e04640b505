//! Fixed-design Gibbs samplers: the systematic-scan sweep (a `β | z` draw
//! followed by single-site `z_j` updates) and the lazy blocked variant that
//! draws the whole `z` block exactly given `β`.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{sample_active_gaussian, CacheSettings, CacheStats, LowRankCache};
use crate::math::{bernoulli_logit, randn, sample_log_categorical};
use crate::model::{coordinate_log_prior, log_joint_density, Dataset, JointState, ModelIndicator, Prior};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Flip a fair coin before each step and stay put on heads.
    pub lazy: bool,
    /// Draw `z | β` as one block instead of scanning coordinates.
    pub blocked_z: bool,
    /// Largest `p` for which the block draw enumerates all `2^p` models.
    pub z_block_pmax: usize,
    /// Visit coordinates in a fresh random order each scan.
    pub random_scan: bool,
    pub seed: u64,
    pub cache: CacheSettings,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            sweeps: 10_000,
            burn_in: 1_000,
            thin: 1,
            lazy: false,
            blocked_z: false,
            z_block_pmax: 12,
            random_scan: false,
            seed: 0,
            cache: CacheSettings::default(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return Err(Error::InvalidConfig(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of states a full run emits.
    pub fn emitted(&self) -> usize {
        (self.sweeps - self.burn_in) / self.thin
    }
}

/// Log odds of `z_j = 1` against `z_j = 0` given `β` and the other indicators.
pub fn z_site_logit(j: usize, state: &JointState, data: &Dataset, prior: &Prior) -> f64 {
    let mut partial = data.y().clone();
    for i in state.z.active() {
        if i != j {
            partial.axpy(-state.beta[i], &data.x().column(i), 1.0);
        }
    }
    let xr = data.x().column(j).dot(&partial);
    site_logit(state.beta[j], xr, data.col_sq_norm(j), prior)
}

/// `xr` is `X_jᵀ(y − X_{z∖j} β_{z∖j})`.
fn site_logit(beta: f64, xr: f64, col_sq: f64, prior: &Prior) -> f64 {
    let sigma2 = prior.sigma() * prior.sigma();
    let (t0, t1) = (prior.tau0(), prior.tau1());
    prior.log_prior_odds() + (t0 / t1).ln() - 0.5 * (1.0 / (t1 * t1) - 1.0 / (t0 * t0)) * beta * beta
        + beta * xr / sigma2
        - beta * beta * col_sq / (2.0 * sigma2)
}

/// Draws `β | z, y`: the active block through the cached sampler, inactive
/// coordinates i.i.d. `N(0, τ0²)` in ascending order.
pub fn draw_beta<R: Rng + ?Sized>(
    state: &mut JointState,
    data: &Dataset,
    prior: &Prior,
    cache: &mut LowRankCache,
    rng: &mut R,
) -> Result<()> {
    let active_draw = sample_active_gaussian(&state.z, data, prior, cache, rng)?;
    let mut next = active_draw.iter();
    for j in 0..data.p() {
        state.beta[j] = if state.z.get(j) {
            *next.next().expect("active draw length matches z")
        } else {
            prior.tau0() * randn(rng)
        };
    }
    Ok(())
}

/// Single-site `z_j | β, z_{−j}` updates in the given order.
fn scan_z<R: Rng + ?Sized>(
    state: &mut JointState,
    data: &Dataset,
    prior: &Prior,
    order: &[usize],
    rng: &mut R,
) {
    let mut resid = data.y().clone();
    for j in state.z.active() {
        resid.axpy(-state.beta[j], &data.x().column(j), 1.0);
    }
    for &j in order {
        let col = data.x().column(j);
        let b = state.beta[j];
        let col_sq = data.col_sq_norm(j);
        let mut xr = col.dot(&resid);
        if state.z.get(j) {
            xr += b * col_sq;
        }
        let on = bernoulli_logit(site_logit(b, xr, col_sq, prior), rng);
        if on != state.z.get(j) {
            resid.axpy(if on { -b } else { b }, &col, 1.0);
            state.z.set(j, on);
        }
    }
}

fn scan_order<R: Rng + ?Sized>(p: usize, random: bool, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p).collect();
    if random {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    }
    order
}

/// One systematic sweep: `β | z` then `z_j | rest` for `j = 0..p` (or a
/// random order when `random_scan`). The cache ends on the new `z`.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut JointState,
    data: &Dataset,
    prior: &Prior,
    cache: &mut LowRankCache,
    random_scan: bool,
    rng: &mut R,
) -> Result<()> {
    draw_beta(state, data, prior, cache, rng)?;
    let order = scan_order(data.p(), random_scan, rng);
    scan_z(state, data, prior, &order, rng);
    cache.update(&state.z, data)
}

/// What a blocked step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockedOutcome {
    /// The lazy coin kept the state.
    Stayed,
    /// `z` was drawn exactly as a block.
    Block,
    /// `p` exceeded the block limit and a coordinate scan was used.
    Scan,
}

/// Log weights of every `z` given `β`, indexed by bit mask, computed along a
/// Gray-code walk so each model costs one column update.
pub fn z_block_log_weights(beta: &DVector<f64>, data: &Dataset, prior: &Prior) -> Vec<f64> {
    let p = data.p();
    let sigma2 = prior.sigma() * prior.sigma();
    let on: Vec<f64> = (0..p).map(|j| coordinate_log_prior(beta[j], true, prior)).collect();
    let off: Vec<f64> = (0..p).map(|j| coordinate_log_prior(beta[j], false, prior)).collect();
    let mut resid = data.y().clone();
    let mut prior_part: f64 = off.iter().sum();
    let mut out = vec![0.0; 1 << p];
    let mut mask = 0usize;
    out[0] = prior_part - resid.norm_squared() / (2.0 * sigma2);
    for i in 1..(1usize << p) {
        let j = i.trailing_zeros() as usize;
        mask ^= 1 << j;
        let turned_on = mask >> j & 1 == 1;
        let col = data.x().column(j);
        if turned_on {
            resid.axpy(-beta[j], &col, 1.0);
            prior_part += on[j] - off[j];
        } else {
            resid.axpy(beta[j], &col, 1.0);
            prior_part += off[j] - on[j];
        }
        out[mask] = prior_part - resid.norm_squared() / (2.0 * sigma2);
    }
    out
}

/// Lazy blocked step: with probability ½ (when `config.lazy`) keep the state;
/// otherwise draw `β | z` and then `z | β` as a block.
pub fn blocked_gibbs_step<R: Rng + ?Sized>(
    state: &mut JointState,
    data: &Dataset,
    prior: &Prior,
    cache: &mut LowRankCache,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<BlockedOutcome> {
    if config.lazy && rng.random::<bool>() {
        return Ok(BlockedOutcome::Stayed);
    }
    draw_beta(state, data, prior, cache, rng)?;
    let p = data.p();
    let outcome = if p <= config.z_block_pmax {
        let weights = z_block_log_weights(&state.beta, data, prior);
        let mask = sample_log_categorical(&weights, rng);
        state.z = ModelIndicator::from_mask(p, mask as u64);
        BlockedOutcome::Block
    } else {
        let order = scan_order(p, config.random_scan, rng);
        scan_z(state, data, prior, &order, rng);
        BlockedOutcome::Scan
    };
    cache.update(&state.z, data)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSample {
    /// 1-based index of the sweep that produced this state.
    pub sweep: usize,
    pub state: JointState,
    pub log_joint: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetadata {
    pub sweeps: usize,
    pub emitted: usize,
    /// Steps on which the lazy coin kept the state.
    pub lazy_stays: usize,
    /// Steps that fell back to a coordinate scan inside blocked mode.
    pub block_fallbacks: usize,
    pub cache: CacheStats,
    pub wall_time: Duration,
}

/// One chain: state, cache and random stream. Cloning a chain checkpoints
/// it; the clone continues exactly as the original would.
#[derive(Debug, Clone)]
pub struct GibbsChain {
    state: JointState,
    cache: LowRankCache,
    rng: StreamRng,
    config: GibbsConfig,
    sweep: usize,
    meta: RunMetadata,
}

impl GibbsChain {
    pub fn new(data: &Dataset, prior: &Prior, config: GibbsConfig, init: JointState) -> Result<Self> {
        Self::with_stream(data, prior, config, init, 0)
    }

    /// Chain drawing from stream `stream_id` of `config.seed`.
    pub fn with_stream(
        data: &Dataset,
        prior: &Prior,
        config: GibbsConfig,
        init: JointState,
        stream_id: u64,
    ) -> Result<Self> {
        config.validate()?;
        data.check_model(&init.z)?;
        if init.beta.len() != data.p() {
            return Err(Error::Dimension("initial beta length differs from p".into()));
        }
        let cache = LowRankCache::new(&init.z, data, prior)?.with_settings(config.cache);
        Ok(Self {
            state: init,
            cache,
            rng: stream(config.seed, stream_id),
            config,
            sweep: 0,
            meta: RunMetadata::default(),
        })
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }
    pub fn sweeps_done(&self) -> usize {
        self.sweep
    }
    pub fn cache(&self) -> &LowRankCache {
        &self.cache
    }

    /// Advances one sweep.
    pub fn step(&mut self, data: &Dataset, prior: &Prior) -> Result<()> {
        if self.config.blocked_z {
            match blocked_gibbs_step(
                &mut self.state,
                data,
                prior,
                &mut self.cache,
                &self.config,
                &mut self.rng,
            )? {
                BlockedOutcome::Stayed => self.meta.lazy_stays += 1,
                BlockedOutcome::Scan => self.meta.block_fallbacks += 1,
                BlockedOutcome::Block => {}
            }
        } else if self.config.lazy && self.rng.random::<bool>() {
            self.meta.lazy_stays += 1;
        } else {
            gibbs_sweep(
                &mut self.state,
                data,
                prior,
                &mut self.cache,
                self.config.random_scan,
                &mut self.rng,
            )?;
        }
        self.sweep += 1;
        Ok(())
    }

    /// Runs to `config.sweeps`, handing each post-burn-in, thinned state to
    /// `sink`.
    pub fn run<F>(&mut self, data: &Dataset, prior: &Prior, mut sink: F) -> Result<RunMetadata>
    where
        F: FnMut(&GibbsSample) -> Result<()>,
    {
        let start = Instant::now();
        while self.sweep < self.config.sweeps {
            self.step(data, prior)?;
            let s = self.sweep;
            if s > self.config.burn_in && (s - self.config.burn_in) % self.config.thin == 0 {
                let log_joint = log_joint_density(&self.state, data, prior)?;
                sink(&GibbsSample { sweep: s, state: self.state.clone(), log_joint })?;
                self.meta.emitted += 1;
            }
        }
        self.meta.sweeps = self.sweep;
        self.meta.cache = self.cache.stats();
        self.meta.wall_time += start.elapsed();
        Ok(self.meta.clone())
    }
}

/// Runs one chain from `init` and collects the emitted states.
pub fn gibbs_run(
    data: &Dataset,
    prior: &Prior,
    config: &GibbsConfig,
    init: JointState,
) -> Result<(Vec<GibbsSample>, RunMetadata)> {
    let mut chain = GibbsChain::new(data, prior, config.clone(), init)?;
    let mut out = Vec::with_capacity(config.emitted());
    let meta = chain.run(data, prior, |s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok((out, meta))
}

/// Runs independent chains, chain `c` on stream `c`, using up to `jobs`
/// threads. Results are returned in chain order regardless of `jobs`.
pub fn gibbs_run_chains(
    data: &Dataset,
    prior: &Prior,
    config: &GibbsConfig,
    inits: Vec<JointState>,
    jobs: usize,
) -> Result<Vec<(Vec<GibbsSample>, RunMetadata)>> {
    let jobs = jobs.max(1);
    let run_one = |c: usize, init: JointState| -> Result<(Vec<GibbsSample>, RunMetadata)> {
        let mut chain = GibbsChain::with_stream(data, prior, config.clone(), init, c as u64)?;
        let mut out = Vec::with_capacity(config.emitted());
        let meta = chain.run(data, prior, |s| {
            out.push(s.clone());
            Ok(())
        })?;
        Ok((out, meta))
    };
    let mut results: Vec<Option<Result<(Vec<GibbsSample>, RunMetadata)>>> =
        (0..inits.len()).map(|_| None).collect();
    let indexed: Vec<(usize, JointState)> = inits.into_iter().enumerate().collect();
    for batch in indexed.chunks(jobs) {
        let outputs: Vec<(usize, Result<_>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|(c, init)| {
                    let init = init.clone();
                    let c = *c;
                    scope.spawn(move || (c, run_one(c, init)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
        });
        for (c, r) in outputs {
            results[c] = Some(r);
        }
    }
    results.into_iter().map(|r| r.expect("every chain ran")).collect()
}
