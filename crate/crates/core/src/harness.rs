//! Experiment orchestration: fixture specifications, reproducible seeding,
//! parallel trial runners, CSV output and the analytic verification suite.
//!
//! Every random stream is seeded by [`derive_seed`]: the base seed, a hash of the
//! experiment id, the trial index and a stream index are folded through the
//! splitmix64 finalizer. Results therefore do not depend on scheduling or thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{Agent, SamplingMode, Transcript};
use crate::distributions::{
    gaussian, gaussian_budget_tight, make_discrete, make_two_sided_pareto, point_mass,
    validate_family, Distribution, FamilyParams,
};
use crate::error::{Error, Result};
use crate::hardness::{
    make_k2_pair, make_pair_grid, nonadaptive_baseline, verify_k2_pair, verify_kl_bound,
    CheckOutcome, Sign,
};
use crate::localization::{gray_bit_value, gray_decode, localization_cost, localize, Localizer};
use crate::refine::{
    build_plan, region_moment, tail_moment, truncation_bias_bound, AllocationProfile, Estimator,
    TargetSpec,
};
use crate::variants::{anytime_estimate, unknown_scale_estimate, ScaleGrid};

/// Agent sampling stream.
pub const AGENT_STREAM: u64 = 0;
/// Learner randomness (uniform thresholds).
pub const LEARNER_STREAM: u64 = 1;
/// Per-trial fixture randomness (random pair instances).
pub const FIXTURE_STREAM: u64 = 2;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a hash of an experiment id.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01B3)
    })
}

/// `mix64(mix64(mix64(base ^ fnv(experiment)) ^ trial) ^ stream)`.
pub fn derive_seed(base: u64, experiment: &str, trial: u64, stream: u64) -> u64 {
    mix64(mix64(mix64(base ^ fnv1a(experiment)) ^ trial) ^ stream)
}

pub fn stream_rng(base: u64, experiment: &str, trial: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, experiment, trial, stream))
}

/// A distribution recipe. Parameters left unset are taken from the family parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FixtureSpec {
    Point {
        at: f64,
    },
    Discrete {
        points: Vec<f64>,
        probs: Vec<f64>,
    },
    Pareto {
        alpha: f64,
        mu: f64,
        k: Option<f64>,
        sigma_target: Option<f64>,
    },
    /// Budget-tight when `sd` is unset: `E|X - mu|^k = sigma_target^k`.
    Gaussian {
        mean: f64,
        sd: Option<f64>,
        sigma_target: Option<f64>,
    },
    Pair {
        j: usize,
        sign: Sign,
        eps: f64,
    },
    /// Pair index and sign drawn uniformly per trial.
    PairRandom {
        eps: f64,
    },
    K2Null {
        eps: f64,
    },
    K2Mix {
        eps: f64,
    },
}

impl FixtureSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            FixtureSpec::Point { .. } => "point",
            FixtureSpec::Discrete { .. } => "discrete",
            FixtureSpec::Pareto { .. } => "pareto",
            FixtureSpec::Gaussian { .. } => "gaussian",
            FixtureSpec::Pair { .. } => "pair",
            FixtureSpec::PairRandom { .. } => "pair-random",
            FixtureSpec::K2Null { .. } => "k2-null",
            FixtureSpec::K2Mix { .. } => "k2-mix",
        }
    }

    /// Whether [`FixtureSpec::instantiate`] depends on the trial stream.
    pub fn is_random(&self) -> bool {
        matches!(self, FixtureSpec::PairRandom { .. })
    }

    pub fn instantiate<R: Rng + ?Sized>(
        &self,
        params: &FamilyParams,
        rng: &mut R,
    ) -> Result<Distribution> {
        match self {
            FixtureSpec::Point { at } => point_mass(*at),
            FixtureSpec::Discrete { points, probs } => make_discrete(points, probs),
            FixtureSpec::Pareto {
                alpha,
                mu,
                k,
                sigma_target,
            } => make_two_sided_pareto(
                k.unwrap_or(params.k()),
                sigma_target.unwrap_or(params.sigma()),
                *mu,
                *alpha,
            ),
            FixtureSpec::Gaussian {
                mean,
                sd,
                sigma_target,
            } => match sd {
                Some(sd) => gaussian(*mean, *sd),
                None => gaussian_budget_tight(
                    params.operative_k(),
                    sigma_target.unwrap_or(params.sigma()),
                    *mean,
                ),
            },
            FixtureSpec::Pair { j, sign, eps } => {
                make_pair_grid(params.lambda(), params.sigma(), *eps)?.member(*j, *sign)
            }
            FixtureSpec::PairRandom { eps } => {
                let grid = make_pair_grid(params.lambda(), params.sigma(), *eps)?;
                let j = rng.random_range(1..=grid.pairs());
                let sign = if rng.random::<bool>() {
                    Sign::Plus
                } else {
                    Sign::Minus
                };
                grid.member(j, sign)
            }
            FixtureSpec::K2Null { eps } => {
                make_k2_pair(params.sigma(), *eps, params.lambda())?.null()
            }
            FixtureSpec::K2Mix { eps } => {
                make_k2_pair(params.sigma(), *eps, params.lambda())?.mixture()
            }
        }
    }
}

fn parse_num(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("fixture key `{key}`: `{v}` is not a number")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse_num(key, x)).collect()
}

/// Parses `kind` or `kind:key=value;key=value`, e.g. `discrete:points=-0.5,0.5;probs=0.4,0.6`.
impl FromStr for FixtureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(';').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("fixture option `{part}` is not key=value"))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |key: &str| -> Result<Option<f64>> {
            kv.get(key).map(|v| parse_num(key, v)).transpose()
        };
        let need = |key: &str| -> Result<f64> {
            num(key)?.ok_or_else(|| Error::Config(format!("fixture `{kind}` requires `{key}`")))
        };
        let spec = match kind.trim() {
            "point" => FixtureSpec::Point {
                at: num("at")?.unwrap_or(0.0),
            },
            "discrete" => {
                let points = kv
                    .get("points")
                    .ok_or_else(|| Error::Config("discrete requires `points`".into()))?;
                let probs = kv
                    .get("probs")
                    .ok_or_else(|| Error::Config("discrete requires `probs`".into()))?;
                FixtureSpec::Discrete {
                    points: parse_list("points", points)?,
                    probs: parse_list("probs", probs)?,
                }
            }
            "pareto" => FixtureSpec::Pareto {
                alpha: need("alpha")?,
                mu: num("mu")?.unwrap_or(0.0),
                k: num("k")?,
                sigma_target: num("sigma_target")?,
            },
            "gaussian" => FixtureSpec::Gaussian {
                mean: num("mean")?.or(num("mu")?).unwrap_or(0.0),
                sd: num("sd")?,
                sigma_target: num("sigma_target")?,
            },
            "pair" => {
                let sign = match kv.get("sign").map(String::as_str) {
                    Some("+") | Some("plus") | None => Sign::Plus,
                    Some("-") | Some("minus") => Sign::Minus,
                    Some(other) => {
                        return Err(Error::Config(format!("pair sign `{other}` is not + or -")))
                    }
                };
                let j = need("j")?;
                if j < 1.0 || j.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "pair index must be a positive integer, got {j}"
                    )));
                }
                FixtureSpec::Pair {
                    j: j as usize,
                    sign,
                    eps: need("eps")?,
                }
            }
            "pair-random" => FixtureSpec::PairRandom { eps: need("eps")? },
            "k2-null" => FixtureSpec::K2Null { eps: need("eps")? },
            "k2-mix" => FixtureSpec::K2Mix { eps: need("eps")? },
            other => {
                return Err(Error::Unknown {
                    what: "fixture",
                    name: other.to_string(),
                })
            }
        };
        Ok(spec)
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for FixtureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixtureSpec::Point { at } => write!(f, "point:at={at}"),
            FixtureSpec::Discrete { points, probs } => {
                write!(
                    f,
                    "discrete:points={};probs={}",
                    fmt_list(points),
                    fmt_list(probs)
                )
            }
            FixtureSpec::Pareto {
                alpha,
                mu,
                k,
                sigma_target,
            } => {
                write!(f, "pareto:alpha={alpha};mu={mu}")?;
                if let Some(k) = k {
                    write!(f, ";k={k}")?;
                }
                if let Some(s) = sigma_target {
                    write!(f, ";sigma_target={s}")?;
                }
                Ok(())
            }
            FixtureSpec::Gaussian {
                mean,
                sd,
                sigma_target,
            } => {
                write!(f, "gaussian:mean={mean}")?;
                if let Some(sd) = sd {
                    write!(f, ";sd={sd}")?;
                }
                if let Some(s) = sigma_target {
                    write!(f, ";sigma_target={s}")?;
                }
                Ok(())
            }
            FixtureSpec::Pair { j, sign, eps } => {
                write!(f, "pair:j={j};sign={};eps={eps}", sign.as_char())
            }
            FixtureSpec::PairRandom { eps } => write!(f, "pair-random:eps={eps}"),
            FixtureSpec::K2Null { eps } => write!(f, "k2-null:eps={eps}"),
            FixtureSpec::K2Mix { eps } => write!(f, "k2-mix:eps={eps}"),
        }
    }
}

/// A named fixture with the family parameters it is tested under.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEntry {
    pub name: &'static str,
    pub fixture: FixtureSpec,
    pub params: FamilyParams,
}

impl MatrixEntry {
    pub fn distribution(&self) -> Result<Distribution> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        self.fixture.instantiate(&self.params, &mut unused)
    }
}

/// The standard fixture matrix (`sigma = 1`, `lambda = 64`).
pub fn acceptance_matrix() -> Vec<MatrixEntry> {
    let p = |k: f64| FamilyParams::new(k, 64.0, 1.0).expect("valid matrix parameters");
    vec![
        MatrixEntry {
            name: "pair-21-plus",
            fixture: FixtureSpec::Pair {
                j: 21,
                sign: Sign::Plus,
                eps: 0.1,
            },
            params: p(2.0),
        },
        MatrixEntry {
            name: "pair-63-minus",
            fixture: FixtureSpec::Pair {
                j: 63,
                sign: Sign::Minus,
                eps: 0.1,
            },
            params: p(2.0),
        },
        MatrixEntry {
            name: "k2-null",
            fixture: FixtureSpec::K2Null { eps: 1.0 / 48.0 },
            params: p(2.0),
        },
        MatrixEntry {
            name: "k2-mix",
            fixture: FixtureSpec::K2Mix { eps: 1.0 / 48.0 },
            params: p(2.0),
        },
        MatrixEntry {
            name: "pareto-k1.5",
            fixture: FixtureSpec::Pareto {
                alpha: 1.9,
                mu: 3.7,
                k: None,
                sigma_target: None,
            },
            params: p(1.5),
        },
        MatrixEntry {
            name: "gaussian-tight-k3",
            fixture: FixtureSpec::Gaussian {
                mean: -10.3,
                sd: None,
                sigma_target: None,
            },
            params: p(3.0),
        },
        MatrixEntry {
            name: "point-1.7",
            fixture: FixtureSpec::Point { at: 1.7 },
            params: p(2.0),
        },
    ]
}

pub fn matrix_entry(name: &str) -> Result<MatrixEntry> {
    acceptance_matrix()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Unknown {
            what: "matrix fixture",
            name: name.to_string(),
        })
}

/// Shared settings of a trial-based experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub fixture: FixtureSpec,
    pub params: FamilyParams,
    pub eps: f64,
    pub delta: f64,
    pub profile: AllocationProfile,
    pub localizer: Localizer,
    pub trials: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub sampling: SamplingMode,
}

impl ExperimentConfig {
    pub fn new(fixture: FixtureSpec, params: FamilyParams, eps: f64, delta: f64) -> Self {
        Self {
            fixture,
            params,
            eps,
            delta,
            profile: AllocationProfile::Empirical,
            localizer: Localizer::Median,
            trials: 100,
            seed: 0,
            threads: None,
            sampling: SamplingMode::PerSample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        TargetSpec::new(self.eps, self.delta)?;
        Ok(())
    }

    fn target(&self) -> Result<TargetSpec> {
        TargetSpec::new(self.eps, self.delta)
    }

    fn trial_distribution(&self, experiment: &str, trial: u64) -> Result<Distribution> {
        let mut rng = stream_rng(self.seed, experiment, trial, FIXTURE_STREAM);
        self.fixture.instantiate(&self.params, &mut rng)
    }
}

/// Runs `f(trial)` for every trial on a pool of `threads` workers; results are in trial order.
pub fn run_trials<T, F>(trials: usize, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..trials as u64).into_par_iter().map(&f).collect())
}

/// Exact one-sided lower confidence bound (Clopper-Pearson) on a success probability.
pub fn binomial_lower_bound(successes: usize, trials: usize, confidence: f64) -> f64 {
    if successes == 0 || trials == 0 {
        return 0.0;
    }
    let alpha = 1.0 - confidence;
    let (mut lo, mut hi) = (0.0, successes as f64 / trials as f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if binomial_upper_tail(trials, successes, mid) > alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// `P(Bin(n, p) >= x)`.
pub fn binomial_upper_tail(n: usize, x: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return 1.0;
    }
    let ln_choose = |k: usize| {
        libm::lgamma(n as f64 + 1.0)
            - libm::lgamma(k as f64 + 1.0)
            - libm::lgamma((n - k) as f64 + 1.0)
    };
    (x..=n)
        .map(|k| (ln_choose(k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp())
        .sum::<f64>()
        .min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacRow {
    pub fixture: String,
    pub trial: u64,
    pub seed: u64,
    pub mu_true: f64,
    pub mu_hat: f64,
    pub abs_err: f64,
    pub eps: f64,
    pub success: bool,
    pub n_loc: u64,
    pub n_ref: u64,
    pub n_total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacSummary {
    pub rows: Vec<PacRow>,
    pub successes: usize,
    pub rate: f64,
    /// One-sided 95% lower bound on the success probability.
    pub lower_bound: f64,
}

impl PacSummary {
    fn from_rows(rows: Vec<PacRow>) -> Self {
        let successes = rows.iter().filter(|r| r.success).count();
        let n = rows.len();
        Self {
            successes,
            rate: successes as f64 / n.max(1) as f64,
            lower_bound: binomial_lower_bound(successes, n, 0.95),
            rows,
        }
    }
}

/// Repeated `(eps, delta)` estimation with per-trial success flags.
pub fn run_pac(config: &ExperimentConfig) -> Result<PacSummary> {
    config.validate()?;
    let exp = "pac";
    let estimator = Estimator::new(config.params, config.target()?)
        .with_profile(config.profile)
        .with_localizer(config.localizer);
    let label = config.fixture.to_string();
    let rows = run_trials(config.trials, config.threads, |trial| {
        let dist = config.trial_distribution(exp, trial)?;
        let seed = derive_seed(config.seed, exp, trial, AGENT_STREAM);
        let mut agent = Agent::from_seed(&dist, seed).with_mode(config.sampling);
        let mut learner = stream_rng(config.seed, exp, trial, LEARNER_STREAM);
        let mut tr = Transcript::counting();
        let rep = estimator.run(&mut agent, &mut learner, &mut tr)?;
        let mu = dist.mean();
        let err = (rep.mu_hat - mu).abs();
        Ok(PacRow {
            fixture: label.clone(),
            trial,
            seed,
            mu_true: mu,
            mu_hat: rep.mu_hat,
            abs_err: err,
            eps: config.eps,
            success: err <= config.eps,
            n_loc: rep.n_localization,
            n_ref: rep.n_refinement,
            n_total: rep.n_total,
        })
    })?;
    Ok(PacSummary::from_rows(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizeRow {
    pub trial: u64,
    pub low: f64,
    pub high: f64,
    pub center: f64,
    pub covered: bool,
    pub samples: u64,
}

pub fn run_localize(config: &ExperimentConfig) -> Result<Vec<LocalizeRow>> {
    config.validate()?;
    let exp = "localize";
    run_trials(config.trials, config.threads, |trial| {
        let dist = config.trial_distribution(exp, trial)?;
        let seed = derive_seed(config.seed, exp, trial, AGENT_STREAM);
        let mut agent = Agent::from_seed(&dist, seed).with_mode(config.sampling);
        let mut tr = Transcript::counting();
        let res = localize(
            config.localizer,
            &mut agent,
            &config.params,
            config.delta,
            &mut tr,
        )?;
        Ok(LocalizeRow {
            trial,
            low: res.low,
            high: res.high,
            center: res.center,
            covered: res.contains(dist.mean()),
            samples: res.samples_used,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub k: f64,
    pub sigma: f64,
    pub eps: f64,
    pub n_predicted: u64,
    /// `n(eps) / n(previous eps)`; empty on the first row.
    pub ratio: Option<f64>,
}

/// Predicted sample counts over a list of accuracies.
pub fn run_scaling(
    params: &FamilyParams,
    eps_list: &[f64],
    delta: f64,
    profile: AllocationProfile,
) -> Result<Vec<ScalingRow>> {
    if eps_list.len() < 2 {
        return Err(Error::Config(
            "scaling needs at least two eps values".into(),
        ));
    }
    let mut rows: Vec<ScalingRow> = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let n = Estimator::new(*params, TargetSpec::new(eps, delta)?)
            .with_profile(profile)
            .predict_cost()?
            .total;
        let ratio = rows.last().map(|r| n as f64 / r.n_predicted as f64);
        rows.push(ScalingRow {
            k: params.k(),
            sigma: params.sigma(),
            eps,
            n_predicted: n,
            ratio,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnytimeRow {
    pub trial: u64,
    pub seed: u64,
    pub mu_true: f64,
    pub mu_hat: f64,
    pub abs_err: f64,
    pub rounds: u32,
    pub eps_final: f64,
    pub cumulative_cost: u64,
    pub next_round_cost: u64,
    pub budget: u64,
}

pub fn run_anytime(config: &ExperimentConfig, budget: u64) -> Result<Vec<AnytimeRow>> {
    config.validate()?;
    let exp = "anytime";
    run_trials(config.trials, config.threads, |trial| {
        let dist = config.trial_distribution(exp, trial)?;
        let seed = derive_seed(config.seed, exp, trial, AGENT_STREAM);
        let mut agent = Agent::from_seed(&dist, seed).with_mode(config.sampling);
        let mut learner = stream_rng(config.seed, exp, trial, LEARNER_STREAM);
        let mut tr = Transcript::counting();
        let rep = anytime_estimate(
            &mut agent,
            &config.params,
            config.delta,
            budget,
            config.profile,
            &mut learner,
            &mut tr,
        )?;
        Ok(AnytimeRow {
            trial,
            seed,
            mu_true: dist.mean(),
            mu_hat: rep.mu_hat,
            abs_err: (rep.mu_hat - dist.mean()).abs(),
            rounds: rep.rounds,
            eps_final: rep.eps_final,
            cumulative_cost: rep.cumulative_cost,
            next_round_cost: rep.next_round_cost,
            budget,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub trial: u64,
    pub seed: u64,
    pub mu_true: f64,
    pub mu_hat: f64,
    pub abs_err: f64,
    pub i_star: u32,
    pub halted_at: Option<u32>,
    pub n_total: u64,
}

/// Unknown-scale estimation; `config.params` supplies `k` and `lambda`.
pub fn run_scale_adapt(config: &ExperimentConfig, grid: &ScaleGrid) -> Result<Vec<ScaleRow>> {
    if config.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let exp = "scale-adapt";
    run_trials(config.trials, config.threads, |trial| {
        let dist = config.trial_distribution(exp, trial)?;
        let seed = derive_seed(config.seed, exp, trial, AGENT_STREAM);
        let mut agent = Agent::from_seed(&dist, seed).with_mode(config.sampling);
        let mut learner = stream_rng(config.seed, exp, trial, LEARNER_STREAM);
        let mut tr = Transcript::counting();
        let rep = unknown_scale_estimate(
            &mut agent,
            config.params.k(),
            config.params.lambda(),
            grid,
            config.profile,
            &mut learner,
            &mut tr,
        )?;
        Ok(ScaleRow {
            trial,
            seed,
            mu_true: dist.mean(),
            mu_hat: rep.mu_hat,
            abs_err: (rep.mu_hat - dist.mean()).abs(),
            i_star: rep.i_star,
            halted_at: rep.halted_at,
            n_total: rep.n_total,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub estimator: String,
    pub budget: u64,
    pub success_rate: f64,
    pub trials: usize,
}

/// Adaptive estimator (at its own predicted cost) against the non-adaptive baseline
/// at each budget, on uniformly random pair instances.
pub fn run_gap(config: &ExperimentConfig, budgets: &[u64]) -> Result<Vec<GapRow>> {
    config.validate()?;
    let eps = config.eps;
    let fixture = FixtureSpec::PairRandom { eps };
    let estimator = Estimator::new(config.params, config.target()?).with_profile(config.profile);
    let adaptive_budget = estimator.predict_cost()?.total;
    let budgets: Vec<u64> = if budgets.is_empty() {
        vec![adaptive_budget]
    } else {
        budgets.to_vec()
    };
    let exp = "gap";
    let instance = |trial: u64| -> Result<Distribution> {
        let mut rng = stream_rng(config.seed, exp, trial, FIXTURE_STREAM);
        fixture.instantiate(&config.params, &mut rng)
    };

    let adaptive = run_trials(config.trials, config.threads, |trial| {
        let dist = instance(trial)?;
        let mut agent = Agent::from_seed(&dist, derive_seed(config.seed, exp, trial, AGENT_STREAM))
            .with_mode(config.sampling);
        let mut learner = stream_rng(config.seed, exp, trial, LEARNER_STREAM);
        let mut tr = Transcript::counting();
        let rep = estimator.run(&mut agent, &mut learner, &mut tr)?;
        Ok((rep.mu_hat - dist.mean()).abs() <= eps)
    })?;
    let mut rows = vec![GapRow {
        estimator: "adaptive".into(),
        budget: adaptive_budget,
        success_rate: rate(&adaptive),
        trials: config.trials,
    }];
    for &budget in &budgets {
        let wins = run_trials(config.trials, config.threads, |trial| {
            let dist = instance(trial)?;
            let seed = derive_seed(config.seed, exp, trial, AGENT_STREAM) ^ budget;
            let mut agent = Agent::from_seed(&dist, seed).with_mode(config.sampling);
            let mut learner = stream_rng(config.seed, exp, trial, LEARNER_STREAM);
            let mut tr = Transcript::counting();
            let res = nonadaptive_baseline(
                &mut agent,
                config.params.lambda(),
                config.params.sigma(),
                eps,
                budget,
                &mut learner,
                &mut tr,
            )?;
            Ok((res.mu_hat - dist.mean()).abs() <= eps)
        })?;
        rows.push(GapRow {
            estimator: "nonadaptive".into(),
            budget,
            success_rate: rate(&wins),
            trials: config.trials,
        });
    }
    Ok(rows)
}

fn rate(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&b| b).count() as f64 / flags.len().max(1) as f64
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Fault injection for the verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerifyOptions {
    /// Adds `(i, by)` to the null mass `q_i` of every `k = 2` pair that is checked.
    pub perturb_null_mass: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    /// 0 on full pass, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            2
        }
    }

    /// `check,observed,expected` for every failing check.
    pub fn write_manifest<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "observed", "expected"])?;
        for c in self.failures() {
            w.write_record([c.id.clone(), c.observed.to_string(), c.expected.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Analytic checks of the lower-bound constructions only.
pub fn hardness_checks(options: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let mut checks = Vec::new();
    let grid = make_pair_grid(64.0, 1.0, 0.1)?;
    let mut all_members = true;
    for k in [1.1, 1.5, 2.0, 3.0, 6.0] {
        let params = FamilyParams::new(k, 64.0, 1.0)?;
        all_members &= grid
            .members()
            .all(|(_, _, d)| validate_family(&d, &params).member);
    }
    checks.push(CheckOutcome {
        id: "pairs.family".into(),
        observed: f64::from(u8::from(all_members)),
        expected: 1.0,
        passed: all_members,
    });
    for eps in [1.0 / 12.0, 1.0 / 48.0, 1.0 / 192.0] {
        let mut pair = make_k2_pair(1.0, eps, 64.0)?;
        if let Some((i, by)) = options.perturb_null_mass {
            pair.perturb_null_mass(i, by);
        }
        let m = pair.grid_size();
        for mut c in verify_k2_pair(&pair)? {
            c.id = format!("M{m}.{}", c.id);
            checks.push(c);
        }
        let kl = verify_kl_bound(&pair)?;
        checks.push(CheckOutcome {
            id: format!("M{m}.kl_bound"),
            observed: kl.max_kl,
            expected: kl.bound,
            passed: kl.passed(),
        });
    }
    Ok(checks)
}

/// Every analytic invariant: family membership, decomposition identities,
/// truncation bias, Gray machinery, cost formulas and the hardness checks.
pub fn run_verify(options: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for entry in acceptance_matrix() {
        let d = entry.distribution()?;
        let v = validate_family(&d, &entry.params);
        checks.push(CheckOutcome {
            id: format!("family.{}", entry.name),
            observed: v.moment,
            expected: v.moment_bound,
            passed: v.member,
        });
        for div in [4.0, 8.0, 16.0] {
            let eps = entry.params.sigma() / div;
            let target = TargetSpec::new(eps, 0.1)?;
            let Some(plan) = build_plan(&entry.params, &target, AllocationProfile::Empirical)?
            else {
                continue;
            };
            let mu = d.mean();
            for offset in [-4.0, 0.0, 4.0] {
                let center = mu + offset * entry.params.sigma();
                let tail = tail_moment(&d, plan.t, center);
                if matches!(
                    d,
                    Distribution::Discrete(_) | Distribution::PointMass { .. }
                ) {
                    let sum: f64 = plan
                        .regions
                        .iter()
                        .map(|r| region_moment(&d, r, center).2)
                        .sum();
                    checks.push(CheckOutcome::close(
                        format!("decomposition.{}.eps{div}.c{offset}", entry.name),
                        sum + tail,
                        mu - center,
                        1e-12,
                    ));
                }
                checks.push(CheckOutcome::at_most(
                    format!("truncation.{}.eps{div}.c{offset}", entry.name),
                    tail.abs(),
                    0.5 * eps,
                ));
            }
            checks.push(CheckOutcome::at_most(
                format!("bias_bound.{}.eps{div}", entry.name),
                truncation_bias_bound(&entry.params, plan.t, 4.0 * entry.params.sigma()),
                0.5 * eps,
            ));
        }
    }

    let disjoint = gray_grids_disjoint(12);
    checks.push(CheckOutcome {
        id: "gray.grids_disjoint".into(),
        observed: f64::from(u8::from(disjoint)),
        expected: 1.0,
        passed: disjoint,
    });
    for m in 1..=10u32 {
        let misses = gray_roundtrip_misses(m);
        checks.push(CheckOutcome::close(
            format!("gray.roundtrip.M{m}"),
            misses as f64,
            0.0,
            0.0,
        ));
    }
    let p = FamilyParams::new(2.0, 64.0, 1.0)?;
    checks.push(CheckOutcome::close(
        "cost.median_localization",
        localization_cost(Localizer::Median, &p, 0.1)? as f64,
        49_224.0,
        0.0,
    ));
    checks.push(CheckOutcome::close(
        "cost.gray_localization",
        localization_cost(Localizer::Gray, &p, 0.1)? as f64,
        144.0,
        0.0,
    ));
    checks.extend(hardness_checks(options)?);
    Ok(VerifyReport { checks })
}

/// Change-point sets `G_l = {(2j - 1) 2^-l}` for `l = 1..=levels` are pairwise disjoint,
/// checked on exact integer numerators over `2^levels`.
pub fn gray_grids_disjoint(levels: u32) -> bool {
    let mut seen = std::collections::HashSet::new();
    for l in 1..=levels {
        for j in 1..=(1u64 << (l - 1)) {
            if !seen.insert((2 * j - 1) << (levels - l)) {
                return false;
            }
        }
    }
    true
}

/// Number of grid points `i / 2^{M+2}` whose decoded Gray cell misses the point.
pub fn gray_roundtrip_misses(m: u32) -> usize {
    let n = 1u64 << (m + 2);
    (0..=n)
        .filter(|&i| {
            let x = i as f64 / n as f64;
            let bits: Vec<bool> = (1..=m).map(|l| gray_bit_value(l, x)).collect();
            !gray_decode(&bits).map(|c| c.contains(x)).unwrap_or(false)
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = derive_seed(1, "pac", 0, AGENT_STREAM);
        assert_eq!(a, derive_seed(1, "pac", 0, AGENT_STREAM));
        assert_ne!(a, derive_seed(1, "pac", 0, LEARNER_STREAM));
        assert_ne!(a, derive_seed(1, "pac", 1, AGENT_STREAM));
        assert_ne!(a, derive_seed(1, "gap", 0, AGENT_STREAM));
        assert_ne!(a, derive_seed(2, "pac", 0, AGENT_STREAM));
    }

    #[test]
    fn fixture_parsing_roundtrip() {
        let cases = [
            "point:at=1.7",
            "discrete:points=-0.5,0.5;probs=0.4,0.6",
            "pareto:alpha=1.9;mu=3.7",
            "gaussian:mean=-10.3",
            "gaussian:mean=0;sd=0.5",
            "pair:j=21;sign=+;eps=0.1",
            "pair-random:eps=0.125",
            "k2-null:eps=0.02",
            "k2-mix:eps=0.02",
        ];
        for c in cases {
            let spec: FixtureSpec = c.parse().unwrap();
            assert_eq!(spec.to_string(), c);
        }
        assert!("weibull".parse::<FixtureSpec>().is_err());
        assert!("pareto:mu=1".parse::<FixtureSpec>().is_err());
        assert!("pair:j=x;eps=0.1".parse::<FixtureSpec>().is_err());
    }

    #[test]
    fn discrete_fixture_mean() {
        let spec: FixtureSpec = "discrete:points=-0.5,0.5;probs=0.4,0.6".parse().unwrap();
        let p = FamilyParams::new(2.0, 4.0, 1.0).unwrap();
        let d = spec
            .instantiate(&p, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!((d.mean() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn clopper_pearson_values() {
        assert_eq!(binomial_lower_bound(0, 10, 0.95), 0.0);
        let lb = binomial_lower_bound(10, 10, 0.95);
        assert!((lb - 0.05f64.powf(0.1)).abs() < 1e-9);
        let lb = binomial_lower_bound(240, 300, 0.95);
        assert!(lb > 0.75 && lb < 0.8, "{lb}");
    }

    #[test]
    fn pac_point_mass_and_determinism() {
        let p = FamilyParams::new(2.0, 16.0, 1.0).unwrap();
        let mut cfg = ExperimentConfig::new(FixtureSpec::Point { at: 1.7 }, p, 0.5, 0.2);
        cfg.trials = 8;
        cfg.seed = 42;
        let a = run_pac(&cfg).unwrap();
        assert_eq!(a.rate, 1.0);
        cfg.threads = Some(1);
        let b = run_pac(&cfg).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_csv(&mut x, &a.rows).unwrap();
        write_csv(&mut y, &b.rows).unwrap();
        assert_eq!(x, y);
        let header = String::from_utf8(x).unwrap();
        assert!(header.starts_with(
            "fixture,trial,seed,mu_true,mu_hat,abs_err,eps,success,n_loc,n_ref,n_total\n"
        ));
    }

    #[test]
    fn scaling_needs_two_values() {
        let p = FamilyParams::new(2.0, 64.0, 1.0).unwrap();
        assert!(run_scaling(&p, &[0.1], 0.1, AllocationProfile::Empirical).is_err());
        let rows = run_scaling(
            &p,
            &[1.0 / 64.0, 1.0 / 128.0],
            0.1,
            AllocationProfile::Empirical,
        )
        .unwrap();
        assert!(rows[0].ratio.is_none());
        assert!(rows[1].ratio.unwrap() > 4.0);
    }

    #[test]
    fn verify_passes_and_fault_is_reported() {
        let clean = run_verify(&VerifyOptions::default()).unwrap();
        let failing: Vec<_> = clean.failures().map(|c| c.id.clone()).collect();
        assert!(clean.passed(), "{failing:?}");
        assert_eq!(clean.exit_code(), 0);

        let broken = run_verify(&VerifyOptions {
            perturb_null_mass: Some((1, 1e-3)),
        })
        .unwrap();
        assert_eq!(broken.exit_code(), 2);
        assert!(broken.failures().any(|c| c.id.ends_with("k2.var_null")));
        let mut buf = Vec::new();
        broken.write_manifest(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check,observed,expected\n"));
        assert!(text.contains("k2.var_null"));
    }

    #[test]
    fn gray_grid_checks() {
        assert!(gray_grids_disjoint(12));
        assert_eq!(gray_roundtrip_misses(10), 0);
    }
}
