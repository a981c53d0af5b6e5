//! Option resolution: command-line flag, then config file, then default.

use std::path::{Path, PathBuf};

use clap::Args;
use onebit_core::harness::{matrix_entry, ExperimentConfig, FixtureSpec};
use onebit_core::{AllocationProfile, Error, FamilyParams, Localizer, Result, SamplingMode};
use serde::Deserialize;

pub const DEFAULT_FIXTURE: &str = "gaussian:mean=0.7";

/// Keys accepted in a TOML config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<f64>,
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub fixture: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub profile: Option<String>,
    pub threads: Option<usize>,
    pub sampling: Option<String>,
    pub localizer: Option<String>,
    pub budget: Option<u64>,
    pub budgets: Option<Vec<u64>>,
    pub eps_list: Option<Vec<f64>>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub ratio: Option<f64>,
    pub lambda_over_sigma: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }
}

/// Flags shared by the experiment subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any of these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Moment order of the family.
    #[arg(long)]
    pub k: Option<f64>,
    /// Bound on |mean|.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Scale: the k-th absolute central moment is at most sigma^k.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Target accuracy.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Failure probability.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Fixture spec (`kind:key=value;...`) or a matrix fixture name.
    #[arg(long)]
    pub fixture: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allocation profile: `empirical` or `proof-safe`.
    #[arg(long)]
    pub profile: Option<String>,
    /// Worker threads for trial execution.
    #[arg(long)]
    pub threads: Option<usize>,
    /// `per-sample` or `aggregated` (Binomial batch counts).
    #[arg(long)]
    pub sampling: Option<String>,
    /// `median` or `gray`.
    #[arg(long)]
    pub localizer: Option<String>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub file: FileConfig,
    pub params: FamilyParams,
    pub eps: f64,
    pub delta: f64,
    pub fixture: FixtureSpec,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub profile: AllocationProfile,
    pub threads: Option<usize>,
    pub sampling: SamplingMode,
    pub localizer: Localizer,
}

fn parse_fixture(s: &str) -> Result<FixtureSpec> {
    match matrix_entry(s) {
        Ok(entry) => Ok(entry.fixture),
        Err(_) => s.parse(),
    }
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let k = args.k.or(file.k).unwrap_or(2.0);
        let lambda = args.lambda.or(file.lambda).unwrap_or(64.0);
        let sigma = args.sigma.or(file.sigma).unwrap_or(1.0);
        let fixture = args
            .fixture
            .clone()
            .or(file.fixture.clone())
            .unwrap_or(DEFAULT_FIXTURE.into());
        let profile = args.profile.clone().or(file.profile.clone());
        let sampling = args.sampling.clone().or(file.sampling.clone());
        let localizer = args.localizer.clone().or(file.localizer.clone());
        let settings = Settings {
            params: FamilyParams::new(k, lambda, sigma)
                .map_err(|e| Error::Config(e.to_string()))?,
            eps: args.eps.or(file.eps).unwrap_or(0.25 * sigma),
            delta: args.delta.or(file.delta).unwrap_or(0.1),
            fixture: parse_fixture(&fixture)?,
            trials: args.trials.or(file.trials).unwrap_or(100),
            seed: args.seed.or(file.seed).unwrap_or(0),
            out: args.out.clone().or(file.out.clone()),
            profile: profile
                .as_deref()
                .map(str::parse)
                .transpose()?
                .unwrap_or_default(),
            threads: args.threads.or(file.threads),
            sampling: sampling
                .as_deref()
                .map(str::parse)
                .transpose()?
                .unwrap_or_default(),
            localizer: localizer
                .as_deref()
                .map(str::parse)
                .transpose()?
                .unwrap_or_default(),
            file,
        };
        settings.experiment().validate()?;
        Ok(settings)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let mut cfg =
            ExperimentConfig::new(self.fixture.clone(), self.params, self.eps, self.delta);
        cfg.profile = self.profile;
        cfg.localizer = self.localizer;
        cfg.trials = self.trials;
        cfg.seed = self.seed;
        cfg.threads = self.threads;
        cfg.sampling = self.sampling;
        cfg
    }
}
