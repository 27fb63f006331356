//! Experiment configuration loaded from a single TOML file.

use crate::error::CliError;
use cantor_fourier::ifs::{BranchMap, CantorSystem, Interval};
use cantor_fourier::thermo::{PotentialSpec, ThermoOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds every sampling path.
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub system: SystemConfig,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub thermo: ThermoConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub gibbs: GibbsConfig,
    #[serde(default)]
    pub fourier: FourierConfig,
    #[serde(default)]
    pub deviations: DeviationConfig,
    #[serde(default)]
    pub oscillation: OscillationConfig,
    #[serde(default)]
    pub dolgopyat: DolgopyatConfig,
    #[serde(default)]
    pub audit: AuditConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_cache() -> PathBuf {
    PathBuf::from("cache")
}

fn default_jobs() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// `cantor3`, `bernoulli`, `gauss-digits`, `moebius` or `custom`.
    pub builtin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digits: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branch: Vec<BranchConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BranchConfig {
    Affine {
        r: f64,
        t: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interval: Option<[f64; 2]>,
    },
    Moebius {
        m: [f64; 4],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interval: Option<[f64; 2]>,
    },
}

impl SystemConfig {
    pub fn build(&self) -> Result<CantorSystem, CliError> {
        let sys = match self.builtin.as_str() {
            "cantor3" => CantorSystem::cantor3(),
            "bernoulli" => CantorSystem::bernoulli(self.ratios.as_deref().unwrap_or(&[0.25, 0.25]))?,
            "gauss-digits" => CantorSystem::gauss_digits(self.digits.as_deref().unwrap_or(&[1, 2]))?,
            "moebius" => match &self.matrices {
                Some(m) => CantorSystem::moebius(m)?,
                None => CantorSystem::moebius_default(),
            },
            "custom" => self.custom()?,
            other => return Err(CliError::Config(format!("unknown builtin system `{other}`"))),
        };
        Ok(sys)
    }

    fn custom(&self) -> Result<CantorSystem, CliError> {
        let [lo, hi] = self.domain.unwrap_or([0.0, 1.0]);
        let domain = Interval::new(lo, hi)?;
        let mut maps = Vec::with_capacity(self.branch.len());
        let mut intervals = Vec::with_capacity(self.branch.len());
        for b in &self.branch {
            let (map, iv) = match b {
                BranchConfig::Affine { r, t, interval } => (BranchMap::affine(*r, *t)?, *interval),
                BranchConfig::Moebius { m, interval } => (BranchMap::moebius(m[0], m[1], m[2], m[3])?, *interval),
            };
            maps.push(map);
            intervals.push(iv);
        }
        if intervals.iter().all(Option::is_none) {
            return Ok(CantorSystem::from_maps("custom", maps, domain)?);
        }
        let branches = maps
            .into_iter()
            .zip(intervals)
            .map(|(map, iv)| {
                let [a, b] = iv.ok_or_else(|| CliError::Config("either all branches give `interval` or none do".into()))?;
                Ok(cantor_fourier::ifs::Branch {
                    map,
                    interval: Interval::new(a, b)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(CantorSystem::with_intervals("custom", branches, domain)?)
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// `geometric` (default) or `weights`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Exponent of `φ = −sτ`; the Bowen root when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
}

impl PotentialConfig {
    /// The potential and, when solved for, the Bowen root.
    pub fn build(&self, sys: &CantorSystem, opts: &ThermoOptions) -> Result<(PotentialSpec, Option<f64>), CliError> {
        match self.kind.as_deref().unwrap_or("geometric") {
            "geometric" => match self.s {
                Some(s) => Ok((PotentialSpec::geometric(s), None)),
                None => {
                    let s0 = cantor_fourier::thermo::bowen_dimension(sys, opts)?;
                    Ok((PotentialSpec::geometric(s0), Some(s0)))
                }
            },
            "weights" => {
                let p = self.p.as_deref().ok_or_else(|| CliError::Config("potential `weights` needs `p`".into()))?;
                Ok((PotentialSpec::weights(p)?, None))
            }
            other => Err(CliError::Config(format!("unknown potential kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermoConfig {
    pub degree: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub quad_depth: usize,
    pub rule_degree: usize,
    pub gibbs_depth: usize,
}

impl Default for ThermoConfig {
    fn default() -> Self {
        let o = ThermoOptions::default();
        ThermoConfig {
            degree: o.degree,
            tol: o.tol,
            max_iters: o.max_iters,
            quad_depth: o.quad_depth,
            rule_degree: o.rule_degree,
            gibbs_depth: o.gibbs_depth,
        }
    }
}

impl ThermoConfig {
    pub fn options(&self) -> ThermoOptions {
        ThermoOptions {
            degree: self.degree,
            tol: self.tol,
            max_iters: self.max_iters,
            quad_depth: self.quad_depth,
            rule_degree: self.rule_degree,
            gibbs_depth: self.gibbs_depth,
            ..ThermoOptions::default()
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub n_check: usize,
    pub grid_size: usize,
    /// NLI probe runs for `n = 1..=nli_n`.
    pub nli_n: usize,
    pub nli_max_words: u64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            n_check: 8,
            grid_size: 33,
            nli_n: 6,
            nli_max_words: 256,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    /// Cylinders up to this length go to `cylinders.csv`.
    pub export_depth: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig { export_depth: 4 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierConfig {
    /// Frequencies for `fourier`.
    pub xi: Vec<f64>,
    pub xi_min: f64,
    pub xi_max: f64,
    /// Zero restricts the scan to `extra`.
    pub samples_per_decade: usize,
    /// Frequencies added to the scan grid.
    pub extra: Vec<f64>,
    /// Fit window; the scan range when absent.
    pub window: Option<[f64; 2]>,
    pub theta: f64,
    pub depth_cap: usize,
    pub extra_depth: usize,
}

impl Default for FourierConfig {
    fn default() -> Self {
        let o = cantor_fourier::fourier::FourierOptions::default();
        FourierConfig {
            xi: vec![1.0, 10.0, 100.0],
            xi_min: 1.0,
            xi_max: 1e4,
            samples_per_decade: 24,
            extra: Vec::new(),
            window: None,
            theta: o.theta,
            depth_cap: o.depth_cap,
            extra_depth: o.extra_depth,
        }
    }
}

impl FourierConfig {
    pub fn options(&self) -> cantor_fourier::fourier::FourierOptions {
        cantor_fourier::fourier::FourierOptions {
            theta: self.theta,
            depth_cap: self.depth_cap,
            extra_depth: self.extra_depth,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviationConfig {
    pub eps: f64,
    pub eps0: f64,
    /// Inclusive range of generations.
    pub n_range: [usize; 2],
    /// Large-deviation rate threshold.
    pub rate_eps: f64,
    /// Also write the regular words of the last generation.
    pub export_words: bool,
}

impl Default for DeviationConfig {
    fn default() -> Self {
        DeviationConfig {
            eps: 0.5,
            eps0: 0.25,
            n_range: [6, 10],
            rate_eps: 0.2,
            export_words: false,
        }
    }
}

impl DeviationConfig {
    pub fn params(&self, eps: f64) -> Result<cantor_fourier::deviations::DeviationParams, CliError> {
        Ok(cantor_fourier::deviations::DeviationParams::new(eps, self.eps0)?)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillationConfig {
    pub n: usize,
    pub k: usize,
    pub sigmas: Vec<f64>,
    pub eta_points: usize,
    pub max_outer: usize,
    pub mc_budget: f64,
    pub mc_draws: usize,
}

impl Default for OscillationConfig {
    fn default() -> Self {
        OscillationConfig {
            n: 8,
            k: 1,
            sigmas: vec![1e-4, 1e-3, 1e-2, 1e-1],
            eta_points: 32,
            max_outer: 4096,
            mc_budget: 1e7,
            mc_draws: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DolgopyatConfig {
    pub b_grid: Vec<f64>,
    pub m_max: usize,
    pub xi_exp: f64,
    pub degree: usize,
}

impl Default for DolgopyatConfig {
    fn default() -> Self {
        DolgopyatConfig {
            b_grid: vec![10.0, 20.0, 50.0, 100.0],
            m_max: 12,
            xi_exp: 0.5,
            degree: cantor_fourier::dolgopyat::DEFAULT_DEGREE,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub n: usize,
    pub k: usize,
    /// ε used for the audit's regular words.
    pub eps: f64,
    pub eta_points: usize,
    pub refine: usize,
    pub eps3: f64,
    pub eps4: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            n: 4,
            k: 1,
            eps: 0.65,
            eta_points: 64,
            refine: 16,
            eps3: 0.1,
            eps4: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        if self.thermo.degree < 4 || self.thermo.tol <= 0.0 {
            return bad("thermo.degree must be at least 4 and thermo.tol positive");
        }
        let d = &self.deviations;
        if !(d.eps > 0.0 && d.eps0 > 0.0 && d.rate_eps > 0.0) || d.n_range[0] == 0 || d.n_range[1] < d.n_range[0] {
            return bad("deviations needs positive eps, eps0, rate_eps and 1 <= n_range[0] <= n_range[1]");
        }
        if self.fourier.xi_min < 1.0 || self.fourier.xi_max < self.fourier.xi_min {
            return bad("fourier needs 1 <= xi_min <= xi_max");
        }
        if self.oscillation.sigmas.iter().any(|s| !(*s > 0.0)) {
            return bad("oscillation.sigmas must be positive");
        }
        if !(self.dolgopyat.xi_exp > 0.0 && self.dolgopyat.xi_exp < 1.0) {
            return bad("dolgopyat.xi_exp must lie in (0, 1)");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form without paths and parallelism.
    pub fn hash(&self) -> String {
        let mut physics = self.clone();
        physics.out_dir = PathBuf::new();
        physics.cache_dir = PathBuf::new();
        physics.jobs = 1;
        let value = serde_json::to_value(&physics).expect("config serializes");
        let canonical = serde_json::to_vec(&value).expect("config serializes");
        format!("{:x}", Sha256::digest(canonical))
    }
}
