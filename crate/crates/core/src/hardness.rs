//! Lower-bound instances as fixtures, exact verifiers of their properties,
//! and a non-adaptive interval-query baseline.

use rand::RngCore;

use crate::channel::{Batch, Channel, Phase, Query, Transcript};
use crate::distributions::{
    grid_multiple, make_discrete, validate_family, Distribution, FamilyParams, MASS_TOLERANCE,
};
use crate::error::{Error, Result};

/// Largest `M` for which the KL verifier enumerates all `2^{2M}` subsets.
pub const MAX_ENUMERATION_BITS: usize = 8;
/// Absolute slack on the per-query KL comparison.
pub const KL_SLACK: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(&self) -> f64 {
        match self {
            Sign::Minus => -1.0,
            Sign::Plus => 1.0,
        }
    }

    pub fn as_char(&self) -> char {
        match self {
            Sign::Minus => '-',
            Sign::Plus => '+',
        }
    }
}

/// Pairs `D_{j,+-}` on `{c_j - sigma/2, c_j + sigma/2}` with `c_j = -lambda + 2 j sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGrid {
    lambda: f64,
    sigma: f64,
    eps: f64,
    pairs: usize,
}

pub fn make_pair_grid(lambda: f64, sigma: f64, eps: f64) -> Result<PairGrid> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param(
            "sigma",
            format!("must be positive, got {sigma}"),
        ));
    }
    if !(eps > 0.0 && eps < 0.5 * sigma) {
        return Err(Error::InvalidConstruction(format!(
            "pair grid needs 0 < eps < sigma/2, got eps = {eps}, sigma = {sigma}"
        )));
    }
    let ratio = grid_multiple(lambda / sigma);
    if ratio < 2.0 {
        return Err(Error::InvalidConstruction(format!(
            "pair grid needs lambda >= 2 sigma, got lambda = {lambda}"
        )));
    }
    Ok(PairGrid {
        lambda: ratio * sigma,
        sigma,
        eps,
        pairs: ratio as usize - 1,
    })
}

impl PairGrid {
    /// `N = lambda / sigma - 1`.
    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `c_j` for `j = 1..=N`.
    pub fn center(&self, j: usize) -> f64 {
        -self.lambda + 2.0 * j as f64 * self.sigma
    }

    pub fn member_mean(&self, j: usize, sign: Sign) -> f64 {
        self.center(j) + sign.value() * self.eps
    }

    pub fn member(&self, j: usize, sign: Sign) -> Result<Distribution> {
        if j == 0 || j > self.pairs {
            return Err(Error::param(
                "j",
                format!("pair index must lie in 1..={}, got {j}", self.pairs),
            ));
        }
        let c = self.center(j);
        let half = 0.5 * self.sigma;
        let upper = 0.5 + sign.value() * self.eps / self.sigma;
        make_discrete(&[c - half, c + half], &[1.0 - upper, upper])
    }

    pub fn members(&self) -> impl Iterator<Item = (usize, Sign, Distribution)> + '_ {
        (1..=self.pairs).flat_map(move |j| {
            [Sign::Minus, Sign::Plus]
                .into_iter()
                .map(move |s| (j, s, self.member(j, s).expect("index in range")))
        })
    }
}

/// Null `D0` and mixture alternative `D_bar` for the `k = 2` lower bound.
///
/// `D0` puts mass `q_i = 1 / (2M 4^i)` on each of `+-2^i sigma` and the rest at 0;
/// `D_j` moves `p_j = 3 eps / (2^{j+1} sigma)` from `-x_j` to `+x_j`, and `D_bar` is
/// the uniform mixture of the `D_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct K2HardPair {
    sigma: f64,
    eps: f64,
    lambda: f64,
    x: Vec<f64>,
    q: Vec<f64>,
    p: Vec<f64>,
}

/// `M = floor(log2(sigma / (3 eps)) / 2)`.
pub fn k2_grid_size(sigma: f64, eps: f64) -> i64 {
    let half_log = 0.5 * (sigma / (3.0 * eps)).log2();
    let nearest = half_log.round();
    if (half_log - nearest).abs() <= 1e-12 {
        nearest as i64
    } else {
        half_log.floor() as i64
    }
}

pub fn make_k2_pair(sigma: f64, eps: f64, lambda: f64) -> Result<K2HardPair> {
    if !(sigma.is_finite() && sigma > 0.0 && eps > 0.0) {
        return Err(Error::InvalidConstruction(format!(
            "need sigma > 0 and eps > 0, got sigma = {sigma}, eps = {eps}"
        )));
    }
    let m = k2_grid_size(sigma, eps);
    if m < 1 {
        return Err(Error::InvalidConstruction(format!(
            "eps = {eps} is too large for sigma = {sigma}: grid size M = {m} < 1"
        )));
    }
    let m = m as usize;
    let x: Vec<f64> = (1..=m).map(|i| 2f64.powi(i as i32) * sigma).collect();
    let q: Vec<f64> = (1..=m)
        .map(|i| 1.0 / (2.0 * m as f64 * 4f64.powi(i as i32)))
        .collect();
    let p: Vec<f64> = (1..=m)
        .map(|j| 3.0 * eps / (2f64.powi(j as i32 + 1) * sigma))
        .collect();
    if let Some(j) = (0..m).find(|&j| p[j] > q[j]) {
        return Err(Error::InvalidConstruction(format!(
            "shift mass p_{} = {} exceeds null mass q_{} = {}",
            j + 1,
            p[j],
            j + 1,
            q[j]
        )));
    }
    Ok(K2HardPair {
        sigma,
        eps,
        lambda,
        x,
        q,
        p,
    })
}

impl K2HardPair {
    pub fn grid_size(&self) -> usize {
        self.x.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> &[f64] {
        &self.x
    }

    pub fn null_masses(&self) -> &[f64] {
        &self.q
    }

    pub fn shift_masses(&self) -> &[f64] {
        &self.p
    }

    pub fn origin_mass(&self) -> f64 {
        1.0 - 2.0 * self.q.iter().sum::<f64>()
    }

    /// Adds `by` to `q_i` (1-based), keeping total mass 1 through the origin.
    /// Used to inject faults into the verifiers.
    pub fn perturb_null_mass(&mut self, i: usize, by: f64) {
        self.q[i - 1] += by;
    }

    /// Masses of the `2M` non-origin points for the mixture weights `shift` (per `j`).
    fn masses_with(&self, shift: impl Fn(usize) -> f64) -> (Vec<f64>, Vec<f64>) {
        let mut points = Vec::with_capacity(2 * self.x.len() + 1);
        let mut probs = Vec::with_capacity(2 * self.x.len() + 1);
        for j in 0..self.x.len() {
            points.push(-self.x[j]);
            probs.push(self.q[j] - shift(j));
            points.push(self.x[j]);
            probs.push(self.q[j] + shift(j));
        }
        points.push(0.0);
        probs.push(self.origin_mass());
        (points, probs)
    }

    pub fn null(&self) -> Result<Distribution> {
        let (points, probs) = self.masses_with(|_| 0.0);
        make_discrete(&points, &probs)
    }

    /// `D_j` for `j = 1..=M`.
    pub fn component(&self, j: usize) -> Result<Distribution> {
        if j == 0 || j > self.x.len() {
            return Err(Error::param(
                "j",
                format!("component index must lie in 1..={}", self.x.len()),
            ));
        }
        let (points, probs) = self.masses_with(|i| if i + 1 == j { self.p[i] } else { 0.0 });
        make_discrete(&points, &probs)
    }

    pub fn mixture(&self) -> Result<Distribution> {
        let m = self.x.len() as f64;
        let (points, probs) = self.masses_with(|j| self.p[j] / m);
        make_discrete(&points, &probs)
    }

    /// `36 eps^2 / (M sigma^2)`.
    pub fn kl_bound(&self) -> f64 {
        36.0 * self.eps * self.eps / (self.x.len() as f64 * self.sigma * self.sigma)
    }
}

/// Outcome of the exhaustive KL enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct KlReport {
    pub max_kl: f64,
    pub bound: f64,
    pub subsets: usize,
    /// Bitmask of the worst subset: bit `2j` is `-x_{j+1}`, bit `2j+1` is `+x_{j+1}`.
    pub worst_subset: u64,
    pub violations: usize,
}

impl KlReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// `KL(Bern(p0 + diff) || Bern(p0))`, evaluated with `ln_1p` so small shifts keep precision.
pub fn bernoulli_kl_shift(p0: f64, diff: f64) -> f64 {
    let p1 = p0 + diff;
    let mut kl = 0.0;
    if p1 > 0.0 {
        kl += p1 * (diff / p0).ln_1p();
    }
    if p1 < 1.0 {
        kl += (1.0 - p1) * (-diff / (1.0 - p0)).ln_1p();
    }
    kl
}

/// `(P0(S), P_bar(S) - P0(S))` for a subset of the non-origin grid.
pub fn subset_masses(pair: &K2HardPair, subset: u64, with_origin: bool) -> (f64, f64) {
    let m = pair.grid_size() as f64;
    let mut p0 = if with_origin { pair.origin_mass() } else { 0.0 };
    let mut diff = 0.0;
    for j in 0..pair.grid_size() {
        let shift = pair.p[j] / m;
        if subset & (1 << (2 * j)) != 0 {
            p0 += pair.q[j];
            diff -= shift;
        }
        if subset & (1 << (2 * j + 1)) != 0 {
            p0 += pair.q[j];
            diff += shift;
        }
    }
    (p0, diff)
}

/// Per-query KL of the response bit `1{X in S}` under `D_bar` versus `D0`.
pub fn subset_kl(pair: &K2HardPair, subset: u64, with_origin: bool) -> f64 {
    let (p0, diff) = subset_masses(pair, subset, with_origin);
    if diff == 0.0 {
        return 0.0;
    }
    bernoulli_kl_shift(p0, diff)
}

/// Enumerates every subset of `{+-x_1, ..., +-x_M}` and compares its KL with `36 eps^2 / (M sigma^2)`.
/// Subsets containing the origin are covered by complementation, which leaves the KL unchanged.
pub fn verify_kl_bound(pair: &K2HardPair) -> Result<KlReport> {
    let m = pair.grid_size();
    if m > MAX_ENUMERATION_BITS {
        return Err(Error::param(
            "M",
            format!("exhaustive enumeration supports M <= {MAX_ENUMERATION_BITS}, got {m}"),
        ));
    }
    let bound = pair.kl_bound();
    let subsets = 1usize << (2 * m);
    let mut report = KlReport {
        max_kl: 0.0,
        bound,
        subsets,
        worst_subset: 0,
        violations: 0,
    };
    for s in 0..subsets as u64 {
        let kl = subset_kl(pair, s, false);
        if kl > report.max_kl {
            report.max_kl = kl;
            report.worst_subset = s;
        }
        if kl > bound + KL_SLACK {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// One named analytic check with its observed and expected values.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: String,
    pub observed: f64,
    pub expected: f64,
    pub passed: bool,
}

impl CheckOutcome {
    pub fn close(id: impl Into<String>, observed: f64, expected: f64, tol: f64) -> Self {
        Self {
            id: id.into(),
            observed,
            expected,
            passed: (observed - expected).abs() <= tol,
        }
    }

    pub fn at_most(id: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            id: id.into(),
            observed,
            expected: bound,
            passed: observed <= bound,
        }
    }
}

/// Exact checks of the `k = 2` pair: variance, means, mass validity, family membership.
pub fn verify_k2_pair(pair: &K2HardPair) -> Result<Vec<CheckOutcome>> {
    let d0 = pair.null()?;
    let dbar = pair.mixture()?;
    let s2 = pair.sigma * pair.sigma;
    let mut out = vec![
        CheckOutcome::close(
            "k2.var_null",
            d0.abs_central_moment(2.0),
            s2,
            MASS_TOLERANCE * s2.max(1.0),
        ),
        CheckOutcome::close("k2.mean_null", d0.mean(), 0.0, MASS_TOLERANCE),
        CheckOutcome::close(
            "k2.mean_mixture",
            dbar.mean(),
            3.0 * pair.eps,
            MASS_TOLERANCE,
        ),
        CheckOutcome {
            id: "k2.origin_mass".into(),
            observed: pair.origin_mass(),
            expected: 0.5,
            passed: pair.origin_mass() > 0.5,
        },
    ];
    for j in 0..pair.grid_size() {
        out.push(CheckOutcome::at_most(
            format!("k2.p{}_le_q{}", j + 1, j + 1),
            pair.p[j],
            pair.q[j],
        ));
        let dj = pair.component(j + 1)?;
        out.push(CheckOutcome::close(
            format!("k2.mean_d{}", j + 1),
            dj.mean(),
            3.0 * pair.eps,
            MASS_TOLERANCE,
        ));
    }
    let params = FamilyParams::new(2.0, pair.lambda.max(pair.sigma), pair.sigma)?;
    for (name, d) in [("null", &d0), ("mixture", &dbar)] {
        let v = validate_family(d, &params);
        out.push(CheckOutcome {
            id: format!("k2.family_{name}"),
            observed: v.moment,
            expected: v.moment_bound,
            passed: v.member,
        });
    }
    Ok(out)
}

/// Fixed query plan of the non-adaptive baseline: per pair, `m` presence queries
/// on `[c_j - sigma, c_j + sigma]` and `m` sign queries on `[c_j, c_j + sigma]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePlan {
    pub grid: PairGrid,
    pub per_query: u64,
    /// `(j, presence, sign)` for `j = 1..=N`.
    pub groups: Vec<(usize, Query, Query)>,
}

impl BaselinePlan {
    pub fn new(lambda: f64, sigma: f64, eps: f64, budget: u64) -> Result<Self> {
        let grid = make_pair_grid(lambda, sigma, eps)?;
        let n = grid.pairs() as u64;
        if budget < 2 * n {
            return Err(Error::InfeasibleBudget {
                budget,
                required: 2 * n,
            });
        }
        let groups = (1..=grid.pairs())
            .map(|j| {
                let c = grid.center(j);
                (
                    j,
                    Query::Interval {
                        low: c - sigma,
                        high: c + sigma,
                    },
                    Query::Interval {
                        low: c,
                        high: c + sigma,
                    },
                )
            })
            .collect();
        Ok(Self {
            grid,
            per_query: budget / (2 * n),
            groups,
        })
    }

    pub fn samples(&self) -> u64 {
        2 * self.per_query * self.groups.len() as u64
    }

    /// Every query of the plan, in issue order.
    pub fn queries(&self) -> Vec<Query> {
        let m = self.per_query as usize;
        self.groups
            .iter()
            .flat_map(|&(_, presence, sign)| {
                std::iter::repeat_n(presence, m).chain(std::iter::repeat_n(sign, m))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineResult {
    pub mu_hat: f64,
    pub j_hat: usize,
    pub sign: Sign,
    pub samples: u64,
}

/// Non-adaptive baseline: issues the whole [`BaselinePlan`], then picks the pair with
/// the largest presence fraction (lowest index on ties) and the sign by majority.
pub fn nonadaptive_baseline<C: Channel + ?Sized, R: RngCore>(
    channel: &mut C,
    lambda: f64,
    sigma: f64,
    eps: f64,
    budget: u64,
    learner_rng: &mut R,
    transcript: &mut Transcript,
) -> Result<BaselineResult> {
    let plan = BaselinePlan::new(lambda, sigma, eps, budget)?;
    transcript.set_phase(Phase::Baseline);
    let m = plan.per_query;
    let mut counts = Vec::with_capacity(plan.groups.len());
    for &(j, presence, sign) in &plan.groups {
        let hits = channel.count_ones(&Batch::Repeat(presence), m, learner_rng, transcript)?;
        let ups = channel.count_ones(&Batch::Repeat(sign), m, learner_rng, transcript)?;
        counts.push((j, hits, ups));
    }
    let mut best = counts[0];
    for &c in &counts[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    let (j_hat, _, ups) = best;
    let sign = if 2 * ups >= m {
        Sign::Plus
    } else {
        Sign::Minus
    };
    Ok(BaselineResult {
        mu_hat: plan.grid.member_mean(j_hat, sign),
        j_hat,
        sign,
        samples: plan.samples(),
    })
}
