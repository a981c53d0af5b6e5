//! Refinement: truncate at a cutoff, split `[-t, t]` into dyadic regions,
//! estimate each region's contribution with randomized threshold queries,
//! and boost confidence with a median over independent batches.

use std::fmt;

use rand::RngCore;

use crate::channel::{Batch, Channel, Phase, Query, Transcript};
use crate::distributions::{grid_multiple, Distribution, FamilyParams};
use crate::error::{Error, Result};
use crate::localization::{
    check_delta, localization_cost, localize, radius_bound, LocalizationResult, Localizer,
};

/// Smallest region exponent: the cutoff is at least `16 sigma`.
pub const MIN_REGION_EXPONENT: u32 = 4;
/// Allocation constant of the empirical profile.
pub const EMPIRICAL_CONSTANT: f64 = 16.0;
const MAX_REGION_EXPONENT: u32 = 60;

/// Accuracy goal `|mu_hat - mu| <= eps` with probability at least `1 - delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    eps: f64,
    delta: f64,
}

impl TargetSpec {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::param("eps", format!("must be positive, got {eps}")));
        }
        check_delta(delta)?;
        Ok(Self { eps, delta })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Choice of the per-region allocation constant `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AllocationProfile {
    /// `C` large enough that the batch variance is provably at most `eps^2 / 16`.
    ProofSafe,
    /// `C = 16`.
    #[default]
    Empirical,
}

impl AllocationProfile {
    pub fn as_str(&self) -> &'static str {
        match self {
            AllocationProfile::ProofSafe => "proof-safe",
            AllocationProfile::Empirical => "empirical",
        }
    }

    /// Allocation constant for operative moment `k` and localization radius `h`.
    ///
    /// With `j0 = 2 + ceil(log2(h / sigma))`, the proof-safe constant is
    /// `256 ((j0 - 1) 2^{(j0 - 1) k} + 2^{2k})`; for `h = 4 sigma` this is
    /// `256 (3 * 2^{3k} + 2^{2k})`.
    pub fn constant(&self, k: f64, radius_over_sigma: f64) -> f64 {
        match self {
            AllocationProfile::Empirical => EMPIRICAL_CONSTANT,
            AllocationProfile::ProofSafe => {
                let j0 = 2.0 + grid_multiple(radius_over_sigma.max(1.0).log2());
                256.0 * ((j0 - 1.0) * 2f64.powf((j0 - 1.0) * k) + 2f64.powf(2.0 * k))
            }
        }
    }
}

impl std::str::FromStr for AllocationProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proof-safe" => Ok(AllocationProfile::ProofSafe),
            "empirical" => Ok(AllocationProfile::Empirical),
            other => Err(Error::Unknown {
                what: "allocation profile",
                name: other.to_string(),
            }),
        }
    }
}

/// Worst-case truncation bias `sigma^k / (t - h)^{k-1} + h sigma^k / (t - h)^k`
/// for a shifted mean of magnitude at most `h`.
pub fn truncation_bias_bound(params: &FamilyParams, t: f64, radius: f64) -> f64 {
    let k = params.operative_k();
    let m = params.moment_budget();
    let gap = t - radius;
    if gap <= 0.0 {
        return f64::INFINITY;
    }
    m / gap.powf(k - 1.0) + radius * m / gap.powf(k)
}

/// Exponent `j` of the cutoff `t = 2^j sigma` for localization radius `radius`.
pub fn cutoff_exponent(params: &FamilyParams, eps: f64, radius: f64) -> Result<u32> {
    let sigma = params.sigma();
    (MIN_REGION_EXPONENT..=MAX_REGION_EXPONENT)
        .find(|&j| {
            let t = 2f64.powi(j as i32) * sigma;
            t >= 2.0 * radius && truncation_bias_bound(params, t, radius) <= 0.5 * eps
        })
        .ok_or_else(|| {
            Error::param(
                "eps",
                format!("no cutoff up to 2^{MAX_REGION_EXPONENT} sigma reaches eps = {eps}"),
            )
        })
}

/// Smallest `t = 2^j sigma` (`j >= 4`) whose worst-case truncation bias is at most `eps / 2`,
/// assuming the median localizer's radius `4 sigma`.
pub fn cutoff_threshold(params: &FamilyParams, eps: f64) -> Result<f64> {
    let j = cutoff_exponent(params, eps, 4.0 * params.sigma())?;
    Ok(2f64.powi(j as i32) * params.sigma())
}

/// One region of the partition in shifted coordinates. Right regions (`index > 0`)
/// are `[a, b)`, left regions (`index < 0`) are `(-b, -a]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub index: i32,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementPlan {
    pub t: f64,
    pub i_max: u32,
    pub regions: Vec<Region>,
    /// `n_i` for `|i| = 1..=i_max`.
    pub allocations: Vec<u64>,
    pub batches: u64,
    pub profile: AllocationProfile,
    pub constant: f64,
    /// Bound on the shifted mean the plan was sized for.
    pub radius: f64,
}

impl RefinementPlan {
    pub fn allocation(&self, region: &Region) -> u64 {
        self.allocations[region.index.unsigned_abs() as usize - 1]
    }

    /// Queries consumed by one base estimate.
    pub fn batch_cost(&self) -> u64 {
        2 * 4 * self.allocations.iter().sum::<u64>()
    }

    pub fn total_cost(&self) -> u64 {
        self.batches * self.batch_cost()
    }
}

impl fmt::Display for RefinementPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n: Vec<String> = self.allocations.iter().map(u64::to_string).collect();
        write!(
            f,
            "t={} i_max={} n=[{}] K={} profile={}",
            self.t,
            self.i_max,
            n.join(","),
            self.batches,
            self.profile.as_str()
        )
    }
}

/// Batch count `ceil(8 ln(2 / delta))`.
pub fn batch_count(delta: f64) -> u64 {
    grid_multiple(8.0 * (2.0 / delta).ln()) as u64
}

/// Refinement plan for a localization radius; `None` when `eps >= radius`,
/// where the localization center already meets the target.
pub fn build_plan_with_radius(
    params: &FamilyParams,
    target: &TargetSpec,
    profile: AllocationProfile,
    radius: f64,
) -> Result<Option<RefinementPlan>> {
    if target.eps() >= radius {
        return Ok(None);
    }
    let sigma = params.sigma();
    let k = params.operative_k();
    let i_max = cutoff_exponent(params, target.eps(), radius)?;
    let t = 2f64.powi(i_max as i32) * sigma;
    let constant = profile.constant(k, radius / sigma);
    let base = constant * (sigma / target.eps()).powi(2);
    let allocations: Vec<u64> = (1..=i_max)
        .map(|i| grid_multiple(base * 2f64.powf(i as f64 * (2.0 - k))).max(1.0) as u64)
        .collect();
    let mut regions = Vec::with_capacity(2 * i_max as usize);
    for sign in [1, -1] {
        for i in 1..=i_max {
            let a = if i == 1 {
                0.0
            } else {
                2f64.powi(i as i32 - 1) * sigma
            };
            let b = 2f64.powi(i as i32) * sigma;
            regions.push(Region {
                index: sign * i as i32,
                a,
                b,
            });
        }
    }
    Ok(Some(RefinementPlan {
        t,
        i_max,
        regions,
        allocations,
        batches: batch_count(target.delta()),
        profile,
        constant,
        radius,
    }))
}

/// Refinement plan after median localization (radius `4 sigma`).
pub fn build_plan(
    params: &FamilyParams,
    target: &TargetSpec,
    profile: AllocationProfile,
) -> Result<Option<RefinementPlan>> {
    build_plan_with_radius(params, target, profile, 4.0 * params.sigma())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionEstimate {
    pub index: i32,
    pub p_a_hat: f64,
    pub p_b_hat: f64,
    pub mu_hat: f64,
    pub samples: u64,
}

/// Estimates `E[Y 1(Y in R)]` for `Y = X - center` with `4 n` threshold queries.
///
/// Right region `[a, b)`: `p_a = P(Y >= a) - P(Y >= T)`, `p_b = P(Y < b) - P(Y <= T)`,
/// `T ~ Uniform(a, b)`, and the contribution is `a p_a + b p_b`. Left regions use the
/// mirrored identity `-(a p'_a + b p'_b)` with `p'_a = P(Y <= -a) - P(Y <= -T)` and
/// `p'_b = P(Y > -b) - P(Y >= -T)`.
pub fn estimate_region<C: Channel + ?Sized, R: RngCore>(
    channel: &mut C,
    region: &Region,
    n: u64,
    center: f64,
    learner_rng: &mut R,
    transcript: &mut Transcript,
) -> Result<RegionEstimate> {
    if n == 0 {
        return Err(Error::param("n", "region allocation must be at least 1"));
    }
    if region.a >= region.b {
        return Err(Error::param("region", "requires a < b"));
    }
    let (a, b) = (region.a, region.b);
    let nf = n as f64;
    let mut count = |batch: Batch| channel.count_ones(&batch, n, learner_rng, transcript);

    let (p_a, p_b, mu) = if region.index > 0 {
        let (lo, hi) = (center + a, center + b);
        let at_a = count(Batch::Repeat(Query::ThresholdGe(lo)))?;
        let above_t = count(Batch::UniformGe { low: lo, high: hi })?;
        let at_b = count(Batch::Repeat(Query::ThresholdGe(hi)))?;
        let below_t = count(Batch::UniformLe { low: lo, high: hi })?;
        let p_a = (at_a as f64 - above_t as f64) / nf;
        let p_b = (nf - at_b as f64 - below_t as f64) / nf;
        (p_a, p_b, a * p_a + b * p_b)
    } else {
        let (lo, hi) = (center - b, center - a);
        let at_a = count(Batch::Repeat(Query::ThresholdLe(hi)))?;
        let below_t = count(Batch::UniformLe { low: lo, high: hi })?;
        let at_b = count(Batch::Repeat(Query::ThresholdLe(lo)))?;
        let above_t = count(Batch::UniformGe { low: lo, high: hi })?;
        let p_a = (at_a as f64 - below_t as f64) / nf;
        let p_b = (nf - at_b as f64 - above_t as f64) / nf;
        (p_a, p_b, -(a * p_a + b * p_b))
    };
    Ok(RegionEstimate {
        index: region.index,
        p_a_hat: p_a,
        p_b_hat: p_b,
        mu_hat: mu,
        samples: 4 * n,
    })
}

/// Exact `(p_a, p_b, contribution)` of a region for a known distribution.
pub fn region_moment(dist: &Distribution, region: &Region, center: f64) -> (f64, f64, f64) {
    let (a, b) = (region.a, region.b);
    if region.index > 0 {
        let (lo, hi) = (center + a, center + b);
        let p_a = dist.prob_ge(lo) - dist.uniform_threshold_ge(lo, hi);
        let p_b = 1.0 - dist.prob_ge(hi) - dist.uniform_threshold_le(lo, hi);
        (p_a, p_b, a * p_a + b * p_b)
    } else {
        let (lo, hi) = (center - b, center - a);
        let p_a = dist.prob_le(hi) - dist.uniform_threshold_le(lo, hi);
        let p_b = 1.0 - dist.prob_le(lo) - dist.uniform_threshold_ge(lo, hi);
        (p_a, p_b, -(a * p_a + b * p_b))
    }
}

/// `E[Y 1(|Y| >= t)]` for `Y = X - center`.
pub fn tail_moment(dist: &Distribution, t: f64, center: f64) -> f64 {
    let upper = dist.upper_partial_mean(center + t, true) - center * dist.prob_ge(center + t);
    let lower = dist.lower_partial_mean(center - t, true) - center * dist.prob_le(center - t);
    upper + lower
}

/// One base estimate `center + sum_i mu_hat_i` over all regions of `plan`.
pub fn base_estimate<C: Channel + ?Sized, R: RngCore>(
    channel: &mut C,
    plan: &RefinementPlan,
    center: f64,
    learner_rng: &mut R,
    transcript: &mut Transcript,
    batch: Option<usize>,
) -> Result<f64> {
    transcript.set_phase(Phase::Refinement);
    let mut total = center;
    for region in &plan.regions {
        transcript.set_scope(batch, Some(region.index));
        let est = estimate_region(
            channel,
            region,
            plan.allocation(region),
            center,
            learner_rng,
            transcript,
        )?;
        total += est.mu_hat;
    }
    transcript.set_scope(None, None);
    Ok(total)
}

/// Median, averaging the two middle values for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::param("values", "median of an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Per-phase sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostBreakdown {
    pub localization: u64,
    pub refinement: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub mu_hat: f64,
    pub localization: LocalizationResult,
    pub plan: Option<RefinementPlan>,
    pub batch_estimates: Vec<f64>,
    pub n_localization: u64,
    pub n_refinement: u64,
    pub n_total: u64,
    pub rounds_of_adaptivity: u32,
}

/// Full estimator configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    pub params: FamilyParams,
    pub target: TargetSpec,
    pub profile: AllocationProfile,
    pub localizer: Localizer,
}

impl Estimator {
    pub fn new(params: FamilyParams, target: TargetSpec) -> Self {
        Self {
            params,
            target,
            profile: AllocationProfile::default(),
            localizer: Localizer::default(),
        }
    }

    pub fn with_profile(mut self, profile: AllocationProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_localizer(mut self, localizer: Localizer) -> Self {
        self.localizer = localizer;
        self
    }

    pub fn radius(&self) -> Result<f64> {
        radius_bound(self.localizer, &self.params, self.target.delta())
    }

    pub fn plan(&self) -> Result<Option<RefinementPlan>> {
        build_plan_with_radius(&self.params, &self.target, self.profile, self.radius()?)
    }

    /// Exact sample counts of [`Estimator::run`]; no randomness involved.
    pub fn predict_cost(&self) -> Result<CostBreakdown> {
        let localization = localization_cost(self.localizer, &self.params, self.target.delta())?;
        let refinement = self.plan()?.map_or(0, |p| p.total_cost());
        Ok(CostBreakdown {
            localization,
            refinement,
            total: localization + refinement,
        })
    }

    pub fn run<C: Channel + ?Sized, R: RngCore>(
        &self,
        channel: &mut C,
        learner_rng: &mut R,
        transcript: &mut Transcript,
    ) -> Result<EstimateReport> {
        let loc_before = transcript.count(Phase::Localization);
        let ref_before = transcript.count(Phase::Refinement);
        let plan = self.plan()?;
        let loc = localize(
            self.localizer,
            channel,
            &self.params,
            self.target.delta(),
            transcript,
        )?;
        let (mu_hat, batch_estimates) = match &plan {
            None => (loc.center, Vec::new()),
            Some(plan) => {
                let estimates = run_batches(channel, plan, loc.center, learner_rng, transcript)?;
                (median(&estimates)?, estimates)
            }
        };
        let n_localization = transcript.count(Phase::Localization) - loc_before;
        let n_refinement = transcript.count(Phase::Refinement) - ref_before;
        Ok(EstimateReport {
            mu_hat,
            localization: loc,
            rounds_of_adaptivity: loc.rounds + u32::from(plan.is_some()),
            plan,
            batch_estimates,
            n_localization,
            n_refinement,
            n_total: n_localization + n_refinement,
        })
    }
}

/// The `K` independent base estimates of a plan around a fixed center.
pub fn run_batches<C: Channel + ?Sized, R: RngCore>(
    channel: &mut C,
    plan: &RefinementPlan,
    center: f64,
    learner_rng: &mut R,
    transcript: &mut Transcript,
) -> Result<Vec<f64>> {
    (0..plan.batches as usize)
        .map(|b| base_estimate(channel, plan, center, learner_rng, transcript, Some(b)))
        .collect()
}

/// Adaptive estimator with median localization.
pub fn estimate_mean<C: Channel + ?Sized, R: RngCore>(
    channel: &mut C,
    params: &FamilyParams,
    target: &TargetSpec,
    profile: AllocationProfile,
    learner_rng: &mut R,
    transcript: &mut Transcript,
) -> Result<EstimateReport> {
    Estimator::new(*params, *target)
        .with_profile(profile)
        .run(channel, learner_rng, transcript)
}

/// Exact sample counts of [`estimate_mean`].
pub fn predict_cost(
    params: &FamilyParams,
    target: &TargetSpec,
    profile: AllocationProfile,
) -> Result<CostBreakdown> {
    Estimator::new(*params, *target)
        .with_profile(profile)
        .predict_cost()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Agent, SamplingMode};
    use crate::distributions::{make_discrete, point_mass};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(k: f64) -> FamilyParams {
        FamilyParams::new(k, 64.0, 1.0).unwrap()
    }

    fn bias_oracle(k: f64, t: f64) -> f64 {
        1.0 / (t - 4.0f64).powf(k - 1.0) + 4.0 / (t - 4.0f64).powf(k)
    }

    #[test]
    fn cutoff_examples() {
        assert!(bias_oracle(2.0, 16.0) > 0.0625);
        assert!(bias_oracle(2.0, 32.0) <= 0.0625);
        assert_eq!(cutoff_threshold(&unit(2.0), 0.125).unwrap(), 32.0);
        assert!(bias_oracle(1.5, 64.0) > 0.125);
        assert!(bias_oracle(1.5, 128.0) <= 0.125);
        assert_eq!(cutoff_threshold(&unit(1.5), 0.25).unwrap(), 128.0);
        assert_eq!(cutoff_threshold(&unit(3.0), 0.05).unwrap(), 16.0);
        assert_eq!(cutoff_threshold(&unit(7.0), 0.05).unwrap(), 16.0);
    }

    #[test]
    fn plan_examples() {
        let t = TargetSpec::new(0.125, 0.05).unwrap();
        let plan = build_plan(&unit(2.0), &t, AllocationProfile::Empirical)
            .unwrap()
            .unwrap();
        assert_eq!(plan.t, 32.0);
        assert_eq!(plan.i_max, 5);
        assert_eq!(plan.allocations, vec![1024; 5]);
        assert_eq!(plan.batches, 30);
        assert_eq!(plan.total_cost(), 1_228_800);

        let plan3 = build_plan(&unit(3.0), &t, AllocationProfile::Empirical)
            .unwrap()
            .unwrap();
        assert_eq!(&plan3.allocations[..3], &[512, 256, 128]);
        assert!(plan3.total_cost() < plan.total_cost());
    }

    #[test]
    fn regions_tile_the_cutoff_interval() {
        let t = TargetSpec::new(0.125, 0.05).unwrap();
        let plan = build_plan(&unit(2.0), &t, AllocationProfile::Empirical)
            .unwrap()
            .unwrap();
        let mut right: Vec<_> = plan.regions.iter().filter(|r| r.index > 0).collect();
        right.sort_by_key(|r| r.index);
        assert_eq!(right[0].a, 0.0);
        for w in right.windows(2) {
            assert_eq!(w[0].b, w[1].a);
        }
        assert_eq!(right.last().unwrap().b, plan.t);
        assert_eq!(plan.regions.len(), 10);
    }

    #[test]
    fn proof_safe_constant() {
        let c = AllocationProfile::ProofSafe.constant(2.0, 4.0);
        assert_eq!(c, 256.0 * (3.0 * 64.0 + 16.0));
        assert_eq!(AllocationProfile::Empirical.constant(2.0, 4.0), 16.0);
        assert!(AllocationProfile::ProofSafe.constant(2.0, 6.0) > c);
        assert!("fast".parse::<AllocationProfile>().is_err());
    }

    #[test]
    fn bypass_when_eps_exceeds_radius() {
        let t = TargetSpec::new(4.0, 0.1).unwrap();
        assert!(build_plan(&unit(2.0), &t, AllocationProfile::Empirical)
            .unwrap()
            .is_none());
        let d = point_mass(1.7).unwrap();
        let mut agent = Agent::from_seed(&d, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tr = Transcript::counting();
        let rep = estimate_mean(
            &mut agent,
            &unit(2.0),
            &t,
            AllocationProfile::Empirical,
            &mut rng,
            &mut tr,
        )
        .unwrap();
        assert!((rep.mu_hat - 1.7).abs() <= 4.0);
        assert_eq!(rep.n_refinement, 0);
        assert!(rep.plan.is_none());
    }

    #[test]
    fn region_identity_on_interior_atom() {
        let d = make_discrete(&[1.0, -3.0], &[0.3, 0.7]).unwrap();
        let r = Region {
            index: 2,
            a: 0.0,
            b: 2.0,
        };
        let (p_a, p_b, mu) = region_moment(&d, &r, 0.0);
        assert!((p_a - 0.15).abs() < 1e-15);
        assert!((p_b - 0.15).abs() < 1e-15);
        assert!((mu - 0.3).abs() < 1e-15);
    }

    #[test]
    fn region_on_point_mass_outside() {
        let d = point_mass(-5.0).unwrap();
        let mut agent = Agent::from_seed(&d, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tr = Transcript::counting();
        let r = Region {
            index: 1,
            a: 0.0,
            b: 2.0,
        };
        let est = estimate_region(&mut agent, &r, 50, 0.0, &mut rng, &mut tr).unwrap();
        assert_eq!((est.p_a_hat, est.p_b_hat, est.mu_hat), (0.0, 0.0, 0.0));
        assert_eq!(tr.total(), 200);
    }

    #[test]
    fn boundary_atoms_are_counted_once() {
        let d = make_discrete(&[-2.0, 2.0, 4.0], &[0.5, 0.25, 0.25]).unwrap();
        let t = TargetSpec::new(0.125, 0.1).unwrap();
        let plan = build_plan(&unit(2.0), &t, AllocationProfile::Empirical)
            .unwrap()
            .unwrap();
        let sum: f64 = plan
            .regions
            .iter()
            .map(|r| region_moment(&d, r, 0.0).2)
            .sum();
        assert!((sum + tail_moment(&d, plan.t, 0.0) - d.mean()).abs() < 1e-12);
    }

    #[test]
    fn point_mass_at_center_is_exact() {
        let d = point_mass(2.5).unwrap();
        let t = TargetSpec::new(0.25, 0.1).unwrap();
        let plan = build_plan(&unit(2.0), &t, AllocationProfile::Empirical)
            .unwrap()
            .unwrap();
        let mut agent = Agent::from_seed(&d, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tr = Transcript::counting();
        let est = base_estimate(&mut agent, &plan, 2.5, &mut rng, &mut tr, None).unwrap();
        assert_eq!(est, 2.5);
        assert_eq!(tr.total(), plan.batch_cost());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn realized_cost_matches_prediction() {
        let d = make_discrete(&[-0.5, 0.5], &[0.4, 0.6]).unwrap();
        let p = FamilyParams::new(2.0, 16.0, 1.0).unwrap();
        let t = TargetSpec::new(0.5, 0.2).unwrap();
        for mode in [SamplingMode::PerSample, SamplingMode::Aggregated] {
            let mut agent = Agent::from_seed(&d, 5).with_mode(mode);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut tr = Transcript::counting();
            let rep = estimate_mean(
                &mut agent,
                &p,
                &t,
                AllocationProfile::Empirical,
                &mut rng,
                &mut tr,
            )
            .unwrap();
            let cost = predict_cost(&p, &t, AllocationProfile::Empirical).unwrap();
            assert_eq!(rep.n_total, cost.total);
            assert_eq!(tr.total(), cost.total);
            assert_eq!(rep.n_localization, cost.localization);
            assert_eq!(rep.rounds_of_adaptivity, 2 * 5 + 1);
            assert_eq!(tr.per_batch().len() as u64, rep.plan.unwrap().batches);
        }
    }
}
