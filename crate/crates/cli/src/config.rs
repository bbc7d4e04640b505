//! Experiment configuration: one TOML file with a section per subcommand.
//! Every key has a default, so an empty file is a valid configuration.

use serde::Deserialize;
use sha2::{Digest, Sha256};

use spikeslab::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; each subcommand derives its own stream from it.
    pub seed: u64,
    pub generate: GenerateSection,
    pub prior: PriorSection,
    pub oracle: OracleSection,
    pub gibbs: GibbsSection,
    pub sloc: SlocSection,
    pub rd_gibbs: RdGibbsSection,
    pub logistic: LogisticSection,
    pub diagnose: DiagnoseSection,
    pub design: DesignSection,
    pub bench: BenchSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            generate: GenerateSection::default(),
            prior: PriorSection::default(),
            oracle: OracleSection::default(),
            gibbs: GibbsSection::default(),
            sloc: SlocSection::default(),
            rd_gibbs: RdGibbsSection::default(),
            logistic: LogisticSection::default(),
            diagnose: DiagnoseSection::default(),
            design: DesignSection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub signal_scale: f64,
    pub sigma: f64,
    /// `gaussian`, `orthogonal` or `correlated`.
    pub design: String,
    pub rho: f64,
    pub pairs: Vec<(usize, usize)>,
    pub normalize_columns: bool,
    pub support: Option<Vec<usize>>,
    /// `gaussian` or `logistic`.
    pub response: String,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            n: 100,
            p: 10,
            k: 2,
            signal_scale: 6.0,
            sigma: 1.0,
            design: "gaussian".into(),
            rho: 0.9,
            pairs: Vec::new(),
            normalize_columns: true,
            support: None,
            response: "gaussian".into(),
        }
    }
}

/// Starts from the scaling rule for the data's `n`, `p` and `σ`; any of
/// `q`, `tau0`, `tau1`, `sigma` given here replaces the suggested value.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub delta: f64,
    pub q: Option<f64>,
    pub tau0: Option<f64>,
    pub tau1: Option<f64>,
    pub sigma: Option<f64>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self { delta: 1.0, q: None, tau0: None, tau1: None, sigma: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub p_max: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { p_max: spikeslab::model::DEFAULT_P_MAX }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSection {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub lazy: bool,
    pub blocked_z: bool,
    pub z_block_pmax: usize,
    pub random_scan: bool,
    pub chains: usize,
    /// `truth`, `lasso` or `empty`.
    pub init: String,
    pub r_max: usize,
    pub rebuild_every: usize,
}

impl Default for GibbsSection {
    fn default() -> Self {
        let g = spikeslab::gibbs::GibbsConfig::default();
        Self {
            sweeps: g.sweeps,
            burn_in: g.burn_in,
            thin: g.thin,
            lazy: g.lazy,
            blocked_z: g.blocked_z,
            z_block_pmax: g.z_block_pmax,
            random_scan: g.random_scan,
            chains: 1,
            init: "lasso".into(),
            r_max: g.cache.r_max,
            rebuild_every: g.cache.rebuild_every,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlocSection {
    pub horizon: f64,
    pub step: f64,
    pub paths: usize,
    /// Base model: `lasso`, `truth`, `empty`, or `all` for every model.
    pub warm_start: String,
    pub max_extra: usize,
    pub check_hull: bool,
}

impl Default for SlocSection {
    fn default() -> Self {
        let s = spikeslab::sloc::SlocConfig::default();
        Self {
            horizon: s.horizon,
            step: s.step,
            paths: s.mc_paths,
            warm_start: "lasso".into(),
            max_extra: 2,
            check_hull: s.check_hull,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RdGibbsSection {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub steps: usize,
    pub mc_samples: usize,
    pub antithetic: bool,
    /// Reference variance; `4 τ0²` when absent.
    pub gamma: Option<f64>,
}

impl Default for RdGibbsSection {
    fn default() -> Self {
        let sb = spikeslab::random_design::SbConfig::default();
        Self {
            sweeps: 1000,
            burn_in: 100,
            thin: 1,
            steps: sb.steps,
            mc_samples: sb.mc_samples,
            antithetic: sb.antithetic,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticSection {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Also write the Pólya-Gamma variables of every emitted sweep.
    pub keep_omega: bool,
}

impl Default for LogisticSection {
    fn default() -> Self {
        Self { sweeps: 5000, burn_in: 500, thin: 1, keep_omega: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    /// `prior` for the crossing point of the two prior densities, or a number.
    pub threshold: toml::Value,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self { threshold: toml::Value::String("prior".into()) }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    /// Support size for coherence and the restricted eigenvalue.
    pub k: usize,
    /// Lasso path used for candidate supports when the exhaustive search is
    /// too large: `path_steps` values of `λ`, each `path_ratio` times the last.
    pub path_steps: usize,
    pub path_ratio: f64,
    pub beta_min_constant: f64,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            k: 2,
            path_steps: 50,
            path_ratio: 0.9,
            beta_min_constant: spikeslab::statgen::design::BETA_MIN_CONSTANT,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// `(n, p)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub k: usize,
    pub sweeps: usize,
    pub drift_evals: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { sizes: vec![(100, 50), (200, 200), (400, 1000)], k: 3, sweeps: 200, drift_evals: 200 }
    }
}

/// Parsed configuration with the hash of its source text.
pub struct Loaded {
    pub config: Config,
    pub hash: String,
}

pub fn load(text: &str) -> Result<Loaded> {
    let config: Config = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(Loaded { config, hash: hex(&Sha256::digest(text.as_bytes())) })
}

/// Seed for one use of the master seed, so that different subcommands do not
/// share random streams.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
