use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;

use spikeslab::diagnostics::{ess, threshold_models, InclusionThreshold, ModelLaw};
use spikeslab::gibbs::{gibbs_run_chains, GibbsChain, GibbsConfig, GibbsSample};
use spikeslab::io::{self, SampleWriter};
use spikeslab::linalg::CacheSettings;
use spikeslab::logistic::{check_binary, logistic_gibbs_sweep, logistic_log_joint, sigma_warning, LogisticState};
use spikeslab::model::enumerate_posterior;
use spikeslab::random_design::{rd_gibbs_run, RdTarget, SbConfig};
use spikeslab::rng::stream;
use spikeslab::sloc::{sl_run_range, DriftEngine, SlocConfig, WarmStartSet};
use spikeslab::statgen::design::{lasso_path_pool, EXHAUSTIVE_K_MAX, EXHAUSTIVE_P_MAX};
use spikeslab::statgen::{
    beta_min_check, coherence, default_lambda, gen_synthetic, restricted_eig, suggest_prior, warm_start, Design,
    Response, SupportSearch, SupportSource, SyntheticSpec, WarmStartConfig,
};
use spikeslab::{Dataset, Error, JointState, ModelIndicator, Prior, Result};

use crate::config::{derive_seed, Config};

/// Everything a subcommand needs besides its own paths.
pub struct Context {
    pub config: Config,
    pub hash: String,
    pub command: &'static str,
    pub jobs: usize,
}

impl Context {
    /// Provenance lines written at the top of every output file.
    pub fn header(&self) -> String {
        format!(
            "spikeslab {} {}\nconfig-sha256 {}\nseed {}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.hash,
            self.config.seed
        )
    }

    fn seed(&self, tag: &str) -> u64 {
        derive_seed(self.config.seed, tag)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_data(path: &Path) -> Result<(Dataset, f64)> {
    io::load_dataset(path)
}

fn build_prior(ctx: &Context, data: &Dataset, data_sigma: f64) -> Result<Prior> {
    let s = &ctx.config.prior;
    let sigma = s.sigma.unwrap_or(data_sigma);
    let base = suggest_prior(data.n(), data.p(), sigma, s.delta)?;
    if s.q.is_none() && s.tau0.is_none() && s.tau1.is_none() {
        return Ok(base);
    }
    Prior::new(s.q.unwrap_or(base.q()), s.tau0.unwrap_or(base.tau0()), s.tau1.unwrap_or(base.tau1()), sigma)?
        .with_delta(s.delta)
}

pub fn generate(ctx: &Context, out: &Path) -> Result<()> {
    let g = &ctx.config.generate;
    let design = match g.design.as_str() {
        "gaussian" => Design::GaussianIid,
        "orthogonal" => Design::Orthogonal,
        "correlated" => Design::Correlated { rho: g.rho, pairs: g.pairs.clone() },
        other => return Err(Error::InvalidConfig(format!("unknown design {other:?}"))),
    };
    let response = match g.response.as_str() {
        "gaussian" => Response::Gaussian,
        "logistic" => Response::Logistic,
        other => return Err(Error::InvalidConfig(format!("unknown response {other:?}"))),
    };
    let spec = SyntheticSpec {
        n: g.n,
        p: g.p,
        k: g.k,
        signal_scale: g.signal_scale,
        sigma: g.sigma,
        design,
        response,
        normalize_columns: g.normalize_columns,
        support: g.support.clone(),
        seed: ctx.seed("generate"),
    };
    let data = gen_synthetic(&spec)?;
    io::save_dataset(out, &data, g.sigma, &ctx.header())?;
    eprintln!("wrote {} x {} dataset to {}", g.n, g.p, out.display());
    Ok(())
}

pub fn oracle(ctx: &Context, data_path: &Path, out: &Path) -> Result<()> {
    let (data, sigma) = load_data(data_path)?;
    let prior = build_prior(ctx, &data, sigma)?;
    let table = enumerate_posterior(&data, &prior, ctx.config.oracle.p_max)?;
    let mut w = create(out)?;
    io::write_table(&mut w, &ctx.header(), &table)?;
    w.flush()?;
    eprintln!("most probable model {} ({:.4})", table.most_probable(), table.prob(&table.most_probable()));
    Ok(())
}

fn initial_state(ctx: &Context, init: &str, data: &Dataset, prior: &Prior) -> Result<JointState> {
    let source = match init {
        "truth" => SupportSource::Truth,
        "lasso" => SupportSource::Lasso { lambda: default_lambda(data.n(), data.p(), prior.sigma()) },
        "empty" => return Ok(JointState::zeros(data.p())),
        other => return Err(Error::InvalidConfig(format!("unknown {} start {other:?}", ctx.command))),
    };
    let config = WarmStartConfig { source, max_extra: 0, pool: None };
    Ok(warm_start(data, prior, &config)?.0)
}

/// `stem.chainK.ext` for chain `K` when there is more than one chain.
fn chain_path(out: &Path, chain: usize, chains: usize) -> PathBuf {
    if chains == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.chain{chain}.{}", ext.to_string_lossy()),
        None => format!("{stem}.chain{chain}"),
    };
    out.with_file_name(name)
}

pub fn gibbs(ctx: &Context, data_path: &Path, out: &Path) -> Result<()> {
    let (data, sigma) = load_data(data_path)?;
    let prior = build_prior(ctx, &data, sigma)?;
    let g = &ctx.config.gibbs;
    if g.chains == 0 {
        return Err(Error::InvalidConfig("chains must be at least 1".into()));
    }
    let config = GibbsConfig {
        sweeps: g.sweeps,
        burn_in: g.burn_in,
        thin: g.thin,
        lazy: g.lazy,
        blocked_z: g.blocked_z,
        z_block_pmax: g.z_block_pmax,
        random_scan: g.random_scan,
        seed: ctx.seed("gibbs"),
        cache: CacheSettings { r_max: g.r_max, rebuild_every: g.rebuild_every },
    };
    let init = initial_state(ctx, &g.init, &data, &prior)?;
    let runs = gibbs_run_chains(&data, &prior, &config, vec![init; g.chains], ctx.jobs)?;
    for (c, (samples, meta)) in runs.iter().enumerate() {
        let path = chain_path(out, c, g.chains);
        let mut w = SampleWriter::new(create(&path)?, &format!("{}\nchain {c}", ctx.header()), data.p(), 0)?;
        for s in samples {
            w.write(s, None)?;
        }
        w.finish()?;
        eprintln!(
            "chain {c}: {} states to {}, {} rebuilds, {} rank-one updates, {:.2?}",
            meta.emitted,
            path.display(),
            meta.cache.rebuilds,
            meta.cache.rank_one_updates,
            meta.wall_time
        );
    }
    Ok(())
}

fn model_set(ctx: &Context, data: &Dataset, prior: &Prior) -> Result<WarmStartSet> {
    let s = &ctx.config.sloc;
    let source = match s.warm_start.as_str() {
        "all" => return Ok(WarmStartSet::all_models(data.p())),
        "empty" => SupportSource::Given(ModelIndicator::empty(data.p())),
        "truth" => SupportSource::Truth,
        "lasso" => SupportSource::Lasso { lambda: default_lambda(data.n(), data.p(), prior.sigma()) },
        other => return Err(Error::InvalidConfig(format!("unknown warm start {other:?}"))),
    };
    let config = WarmStartConfig { source, max_extra: s.max_extra, pool: None };
    Ok(warm_start(data, prior, &config)?.1)
}

/// Splits `0..total` into `jobs` contiguous ranges.
fn split_range(total: u64, jobs: usize) -> Vec<std::ops::Range<u64>> {
    let jobs = (jobs.max(1) as u64).min(total.max(1));
    let chunk = total.div_ceil(jobs);
    (0..jobs).map(|i| (i * chunk).min(total)..((i + 1) * chunk).min(total)).collect()
}

pub fn sloc(ctx: &Context, data_path: &Path, out: &Path) -> Result<()> {
    let (data, sigma) = load_data(data_path)?;
    let prior = build_prior(ctx, &data, sigma)?;
    let s = &ctx.config.sloc;
    let set = model_set(ctx, &data, &prior)?;
    let config = SlocConfig {
        horizon: s.horizon,
        step: s.step,
        mc_paths: s.paths,
        seed: ctx.seed("sloc"),
        check_hull: s.check_hull,
    };
    config.steps()?;
    let start = Instant::now();
    let ranges = split_range(s.paths as u64, ctx.jobs);
    let parts: Vec<Result<Vec<DVector<f64>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| {
                let (data, prior, set, config) = (&data, &prior, &set, &config);
                scope.spawn(move || sl_run_range(data, prior, set, config, r))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut draws = Vec::with_capacity(s.paths);
    for part in parts {
        draws.extend(part?);
    }
    let mut w = create(out)?;
    io::write_vectors(&mut w, &format!("{}\nmodels {}", ctx.header(), set.len()), &draws)?;
    w.flush()?;
    eprintln!("{} paths over {} models to {} in {:.2?}", draws.len(), set.len(), out.display(), start.elapsed());
    Ok(())
}

pub fn rd_gibbs(ctx: &Context, data_path: &Path, out: &Path) -> Result<()> {
    let (data, sigma) = load_data(data_path)?;
    let prior = build_prior(ctx, &data, sigma)?;
    let r = &ctx.config.rd_gibbs;
    let target = match r.gamma {
        Some(g) => RdTarget::with_gamma(data.y().clone(), prior, g)?,
        None => RdTarget::new(data.y().clone(), prior)?,
    };
    let config = GibbsConfig {
        sweeps: r.sweeps,
        burn_in: r.burn_in,
        thin: r.thin,
        seed: ctx.seed("rd-gibbs"),
        ..Default::default()
    };
    let sb = SbConfig { steps: r.steps, mc_samples: r.mc_samples, antithetic: r.antithetic, drift_off: false };
    let mut w = SampleWriter::new(create(out)?, &ctx.header(), data.p(), 0)?;
    let meta = rd_gibbs_run(&target, &config, &sb, JointState::zeros(data.p()), 0, |s| w.write(s, None))?;
    w.finish()?;
    eprintln!("{} states to {} in {:.2?}", meta.emitted, out.display(), meta.wall_time);
    Ok(())
}

pub fn logistic(ctx: &Context, data_path: &Path, out: &Path) -> Result<()> {
    let (data, sigma) = load_data(data_path)?;
    check_binary(&data)?;
    let prior = build_prior(ctx, &data, sigma)?.with_sigma(1.0)?;
    if let Some(msg) = sigma_warning(&build_prior(ctx, &data, sigma)?) {
        eprintln!("note: {msg}");
    }
    let l = &ctx.config.logistic;
    GibbsConfig { sweeps: l.sweeps, burn_in: l.burn_in, thin: l.thin, ..Default::default() }.validate()?;
    let mut rng = stream(ctx.seed("logistic"), 0);
    let mut state = LogisticState::initial(data.n(), data.p());
    let omega_len = if l.keep_omega { data.n() } else { 0 };
    let mut w = SampleWriter::new(create(out)?, &ctx.header(), data.p(), omega_len)?;
    let start = Instant::now();
    let mut emitted = 0;
    for s in 1..=l.sweeps {
        logistic_gibbs_sweep(&mut state, &data, &prior, &mut rng)?;
        if s > l.burn_in && (s - l.burn_in) % l.thin == 0 {
            let sample = GibbsSample {
                sweep: s,
                state: JointState::new(state.beta.clone(), state.z.clone())?,
                log_joint: logistic_log_joint(&state, &data, &prior),
            };
            w.write(&sample, l.keep_omega.then_some(&state.omega))?;
            emitted += 1;
        }
    }
    w.finish()?;
    eprintln!("{emitted} states to {} in {:.2?}", out.display(), start.elapsed());
    Ok(())
}

/// Sampler output to compare against an oracle table.
pub enum SamplerOutput<'a> {
    /// Joint states from a Gibbs-type sampler.
    States(&'a Path),
    /// Coefficient vectors, thresholded into models.
    Vectors(&'a Path),
}

pub fn diagnose(
    ctx: &Context,
    table_path: &Path,
    input: SamplerOutput<'_>,
    data_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let pairs = io::read_table(BufReader::new(File::open(table_path)?))?;
    let p = pairs.first().map(|(z, _)| z.len()).ok_or_else(|| Error::Parse("empty table".into()))?;
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    let models: Vec<ModelIndicator> = match input {
        SamplerOutput::States(path) => {
            let samples = io::read_samples(BufReader::new(File::open(path)?))?;
            let trace: Vec<f64> = samples.iter().map(|s| s.log_joint).collect();
            if trace.len() > 1 {
                rows.push(("ess_log_joint".into(), String::new(), ess(&trace)));
            }
            samples.into_iter().map(|s| s.state.z).collect()
        }
        SamplerOutput::Vectors(path) => {
            let draws = io::read_vectors(BufReader::new(File::open(path)?))?;
            let cut = match &ctx.config.diagnose.threshold {
                toml::Value::String(s) if s == "prior" => {
                    let data_path = data_path.ok_or_else(|| {
                        Error::InvalidConfig("the prior threshold needs --data to build the prior".into())
                    })?;
                    let (data, sigma) = load_data(data_path)?;
                    let prior = build_prior(ctx, &data, sigma)?;
                    InclusionThreshold::PriorCrossing.value(data.n(), data.p(), &prior)?
                }
                toml::Value::Float(v) => *v,
                toml::Value::Integer(v) => *v as f64,
                other => return Err(Error::InvalidConfig(format!("threshold {other} is not `prior` or a number"))),
            };
            rows.push(("threshold".into(), String::new(), cut));
            threshold_models(&draws, cut)
        }
    };
    if models.is_empty() {
        return Err(Error::InvalidConfig("no samples to diagnose".into()));
    }
    if models.iter().any(|z| z.len() != p) {
        return Err(Error::Dimension("samples and table have different p".into()));
    }
    let table = ModelLaw::from_pairs(pairs.iter().cloned());
    let empirical = ModelLaw::from_samples(models.iter());
    rows.push(("samples".into(), String::new(), models.len() as f64));
    rows.push(("tv".into(), String::new(), empirical.tv(&table)));
    let mut exact = vec![0.0; p];
    for (z, w) in &pairs {
        for j in z.active() {
            exact[j] += w;
        }
    }
    let mut counts = vec![0usize; p];
    for z in &models {
        for j in z.active() {
            counts[j] += 1;
        }
    }
    for j in 0..p {
        let est = counts[j] as f64 / models.len() as f64;
        rows.push(("inclusion_sampled".into(), j.to_string(), est));
        rows.push(("inclusion_exact".into(), j.to_string(), exact[j]));
    }
    let mut w = create(out)?;
    io::write_header(&mut w, &ctx.header())?;
    writeln!(w, "metric,index,value")?;
    for (m, i, v) in &rows {
        writeln!(w, "{m},{i},{}", io::fmt_f64(*v))?;
    }
    w.flush()?;
    for (m, i, v) in &rows {
        if m == "tv" || m == "ess_log_joint" || m == "samples" || m == "threshold" {
            println!("{m}{} {v:.6}", if i.is_empty() { String::new() } else { format!("[{i}]") });
        }
    }
    Ok(())
}

pub fn design_stats(ctx: &Context, data_path: &Path, out: &Path) -> Result<()> {
    let (data, sigma) = load_data(data_path)?;
    let prior = build_prior(ctx, &data, sigma)?;
    let d = &ctx.config.design;
    let search = if data.p() <= EXHAUSTIVE_P_MAX && d.k <= EXHAUSTIVE_K_MAX {
        SupportSearch::Exhaustive
    } else {
        SupportSearch::Pool(lasso_path_pool(&data, d.k, d.path_steps, d.path_ratio)?)
    };
    let coh = coherence(&data, &prior, d.k, &search)?;
    let re = restricted_eig(&data, &prior, d.k, &search)?;
    let mut rows = vec![
        ("coherence", coh.value, coh.exhaustive),
        ("restricted_eigenvalue", re.value, re.exhaustive),
        ("restricted_eigenvalue_per_obs", re.value / data.n() as f64, re.exhaustive),
    ];
    let beta_min = match beta_min_check(&data, &prior, d.beta_min_constant) {
        Ok(r) => Some(r),
        Err(Error::MissingTruth) => None,
        Err(e) => return Err(e),
    };
    if let Some(b) = &beta_min {
        rows.push(("beta_min_threshold", b.threshold, true));
        rows.push(("beta_min_smallest_active", b.min_active, true));
        rows.push(("beta_min_margin", b.margin, true));
        rows.push(("beta_min_pass", f64::from(u8::from(b.pass)), true));
    }
    let mut w = create(out)?;
    io::write_header(&mut w, &ctx.header())?;
    writeln!(w, "measure,value,exhaustive")?;
    for (name, v, ex) in &rows {
        writeln!(w, "{name},{},{}", io::fmt_f64(*v), u8::from(*ex))?;
        println!("{name} {v:.6}{}", if *ex { "" } else { " (candidate supports only)" });
    }
    w.flush()?;
    Ok(())
}

pub fn bench(ctx: &Context, out: &Path) -> Result<()> {
    let b = &ctx.config.bench;
    let mut w = create(out)?;
    io::write_header(&mut w, &ctx.header())?;
    writeln!(w, "n,p,k,gibbs_us_per_sweep,drift_models,drift_us_per_eval")?;
    for (i, &(n, p)) in b.sizes.iter().enumerate() {
        let spec = SyntheticSpec::new(n, p, b.k.min(p), 6.0, derive_seed(ctx.config.seed, &format!("bench{i}")));
        let data = gen_synthetic(&spec)?;
        let prior = suggest_prior(n, p, 1.0, 1.0)?;
        let truth = data.truth().ok_or(Error::MissingTruth)?.z_star.clone();

        let config = GibbsConfig { sweeps: b.sweeps + 1, burn_in: 0, seed: ctx.seed("bench"), ..Default::default() };
        let init = JointState::new(DVector::zeros(p), truth.clone())?;
        let mut chain = GibbsChain::new(&data, &prior, config, init)?;
        let start = Instant::now();
        for _ in 0..b.sweeps {
            chain.step(&data, &prior)?;
        }
        let gibbs_us = start.elapsed().as_secs_f64() * 1e6 / b.sweeps.max(1) as f64;

        let pool: Vec<usize> = (0..p).collect();
        let set = WarmStartSet::supersets(&truth, &pool, 1)?;
        let mut engine = DriftEngine::new(&data, &prior, &set)?;
        let mut rng = stream(ctx.seed("bench"), 1);
        let theta = DVector::from_fn(p, |_, _| spikeslab::math::randn(&mut rng));
        let mut drift = DVector::zeros(p);
        let start = Instant::now();
        for e in 0..b.drift_evals {
            engine.drift_into(&theta, e as f64 * 0.01, &mut drift)?;
        }
        let drift_us = start.elapsed().as_secs_f64() * 1e6 / b.drift_evals.max(1) as f64;
        writeln!(w, "{n},{p},{},{gibbs_us:.3},{},{drift_us:.3}", b.k.min(p), set.len())?;
        println!("n={n} p={p}: {gibbs_us:.1} us/sweep, {drift_us:.1} us/drift over {} models", set.len());
    }
    w.flush()?;
    Ok(())
}
