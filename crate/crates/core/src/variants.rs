//! Extensions of the base estimator: anytime budget adaptation, unknown scale,
//! two-stage (Gray localization) composition and a coordinate-wise multivariate wrapper.

use std::f64::consts::PI;

use rand::RngCore;

use crate::channel::{Transcript, VectorAgent};
use crate::distributions::FamilyParams;
use crate::error::{Error, Result};
use crate::localization::{
    check_delta, localization_cost, localize, LocalizationResult, Localizer,
};
use crate::refine::{
    build_plan_with_radius, median, run_batches, AllocationProfile, EstimateReport, Estimator,
    RefinementPlan, TargetSpec,
};

/// `eps_tau = sigma / 2^tau`.
pub fn anytime_eps(sigma: f64, tau: u32) -> f64 {
    sigma * 2f64.powi(-(tau as i32))
}

/// `delta_tau = 6 delta / (pi^2 tau^2)`.
pub fn anytime_delta(delta: f64, tau: u32) -> f64 {
    6.0 * delta / (PI * PI * (tau as f64).powi(2))
}

/// Refinement plan of anytime round `tau` (localization radius `4 sigma`).
pub fn anytime_round_plan(
    params: &FamilyParams,
    delta: f64,
    tau: u32,
    profile: AllocationProfile,
) -> Result<RefinementPlan> {
    let target = TargetSpec::new(anytime_eps(params.sigma(), tau), anytime_delta(delta, tau))?;
    let radius = 4.0 * params.sigma();
    build_plan_with_radius(params, &target, profile, radius)?
        .ok_or_else(|| Error::param("tau", "anytime rounds always refine"))
}

/// Deterministic outcome of the anytime stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnytimeSchedule {
    /// Last round that fits in the budget.
    pub rounds: u32,
    pub localization_cost: u64,
    /// Localization plus all completed rounds.
    pub cumulative_cost: u64,
    /// Cost of the first round that did not fit.
    pub next_round_cost: u64,
}

pub fn anytime_schedule(
    params: &FamilyParams,
    delta: f64,
    budget: u64,
    profile: AllocationProfile,
) -> Result<AnytimeSchedule> {
    check_delta(delta)?;
    let localization_cost = localization_cost(Localizer::Median, params, delta)?;
    let first = anytime_round_plan(params, delta, 1, profile)?.total_cost();
    let required = localization_cost + first;
    if budget < required {
        return Err(Error::InfeasibleBudget { budget, required });
    }
    let mut spent = localization_cost;
    let mut tau = 0;
    loop {
        let next = anytime_round_plan(params, delta, tau + 1, profile)?.total_cost();
        if spent + next > budget {
            return Ok(AnytimeSchedule {
                rounds: tau,
                localization_cost,
                cumulative_cost: spent,
                next_round_cost: next,
            });
        }
        spent += next;
        tau += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnytimeReport {
    pub mu_hat: f64,
    /// `T`: the last completed round.
    pub rounds: u32,
    pub eps_final: f64,
    pub round_estimates: Vec<f64>,
    pub localization: LocalizationResult,
    pub cumulative_cost: u64,
    pub next_round_cost: u64,
}

/// Localizes once, then runs rounds `tau = 1, 2, ...` at `(eps_tau, delta_tau)` while
/// the next round still fits in the remaining budget.
#[allow(clippy::too_many_arguments)]
pub fn anytime_estimate<C: crate::channel::Channel + ?Sized, R: RngCore>(
    channel: &mut C,
    params: &FamilyParams,
    delta: f64,
    budget: u64,
    profile: AllocationProfile,
    learner_rng: &mut R,
    transcript: &mut Transcript,
) -> Result<AnytimeReport> {
    let schedule = anytime_schedule(params, delta, budget, profile)?;
    let before = transcript.total();
    let loc = localize(Localizer::Median, channel, params, delta, transcript)?;
    let mut round_estimates = Vec::with_capacity(schedule.rounds as usize);
    let mut tau = 1;
    loop {
        let plan = anytime_round_plan(params, delta, tau, profile)?;
        let spent = transcript.total() - before;
        if spent + plan.total_cost() > budget {
            break;
        }
        let estimates = run_batches(channel, &plan, loc.center, learner_rng, transcript)?;
        round_estimates.push(median(&estimates)?);
        tau += 1;
    }
    let rounds = tau - 1;
    Ok(AnytimeReport {
        mu_hat: *round_estimates.last().expect("first round is affordable"),
        rounds,
        eps_final: anytime_eps(params.sigma(), rounds),
        round_estimates,
        localization: loc,
        cumulative_cost: transcript.total() - before,
        next_round_cost: anytime_round_plan(params, delta, tau, profile)?.total_cost(),
    })
}

/// Geometric grid of scale guesses `sigma_i = sigma_max 2^-i`, `i = 0..=T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleGrid {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub ratio: f64,
    pub delta: f64,
    /// `T = ceil(log2(sigma_max / sigma_min))`.
    pub last: u32,
}

impl ScaleGrid {
    pub fn new(sigma_min: f64, sigma_max: f64, ratio: f64, delta: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min.is_finite() && sigma_max.is_finite()) {
            return Err(Error::param(
                "sigma_min",
                format!("must be positive, got {sigma_min}"),
            ));
        }
        if sigma_min > sigma_max {
            return Err(Error::param(
                "sigma_min",
                format!("must not exceed sigma_max ({sigma_min} > {sigma_max})"),
            ));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::param(
                "r",
                format!("must lie in (0, 1), got {ratio}"),
            ));
        }
        check_delta(delta)?;
        let last = crate::distributions::grid_multiple((sigma_max / sigma_min).log2()) as u32;
        Ok(Self {
            sigma_min,
            sigma_max,
            ratio,
            delta,
            last,
        })
    }

    pub fn sigma(&self, i: u32) -> f64 {
        self.sigma_max * 2f64.powi(-(i as i32))
    }

    /// `eps_i = r sigma_i / 6`.
    pub fn eps(&self, i: u32) -> f64 {
        self.ratio * self.sigma(i) / 6.0
    }

    /// `delta_i = delta / (T + 1)`.
    pub fn round_delta(&self) -> f64 {
        self.delta / (self.last as f64 + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRound {
    pub i: u32,
    pub sigma: f64,
    pub eps: f64,
    pub mu_hat: f64,
    pub samples: u64,
}

impl ScaleRound {
    fn disjoint(&self, other: &ScaleRound) -> bool {
        (self.mu_hat - other.mu_hat).abs() > self.eps + other.eps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleReport {
    pub mu_hat: f64,
    pub i_star: u32,
    /// Round whose interval first missed an earlier one, if any.
    pub halted_at: Option<u32>,
    pub rounds: Vec<ScaleRound>,
    pub n_total: u64,
}

/// Runs the base estimator at `sigma_0 > sigma_1 > ...` and stops at the first round
/// whose confidence interval is disjoint from an earlier one, returning the previous
/// round's estimate. Without a halt the last round `T` is returned.
#[allow(clippy::too_many_arguments)]
pub fn unknown_scale_estimate<C: crate::channel::Channel + ?Sized, R: RngCore>(
    channel: &mut C,
    k: f64,
    lambda: f64,
    grid: &ScaleGrid,
    profile: AllocationProfile,
    learner_rng: &mut R,
    transcript: &mut Transcript,
) -> Result<ScaleReport> {
    let before = transcript.total();
    let mut rounds: Vec<ScaleRound> = Vec::with_capacity(grid.last as usize + 1);
    let mut halted_at = None;
    for i in 0..=grid.last {
        let sigma = grid.sigma(i);
        let params = FamilyParams::new(k, lambda.max(sigma), sigma)?;
        let target = TargetSpec::new(grid.eps(i), grid.round_delta())?;
        let report = Estimator::new(params, target).with_profile(profile).run(
            channel,
            learner_rng,
            transcript,
        )?;
        let round = ScaleRound {
            i,
            sigma,
            eps: grid.eps(i),
            mu_hat: report.mu_hat,
            samples: report.n_total,
        };
        let clash = rounds.iter().any(|r| round.disjoint(r));
        rounds.push(round);
        if clash {
            halted_at = Some(i);
            break;
        }
    }
    let i_star = halted_at.map_or(grid.last, |i| i - 1);
    Ok(ScaleReport {
        mu_hat: rounds[i_star as usize].mu_hat,
        i_star,
        halted_at,
        rounds,
        n_total: transcript.total() - before,
    })
}

/// Base estimator with the non-adaptive Gray localizer: one localization batch and one
/// refinement batch.
pub fn two_stage_estimate<C: crate::channel::Channel + ?Sized, R: RngCore>(
    channel: &mut C,
    params: &FamilyParams,
    target: &TargetSpec,
    profile: AllocationProfile,
    learner_rng: &mut R,
    transcript: &mut Transcript,
) -> Result<EstimateReport> {
    Estimator::new(*params, *target)
        .with_profile(profile)
        .with_localizer(Localizer::Gray)
        .run(channel, learner_rng, transcript)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateReport {
    pub mu_hat: Vec<f64>,
    pub coordinates: Vec<EstimateReport>,
    /// Vector samples consumed under the agent's feedback mode.
    pub samples: u64,
}

/// Per-coordinate target `(eps / sqrt(d), delta / d)`.
pub fn coordinate_target(target: &TargetSpec, d: usize) -> Result<TargetSpec> {
    if d == 0 {
        return Err(Error::param("d", "dimension must be at least 1"));
    }
    TargetSpec::new(target.eps() / (d as f64).sqrt(), target.delta() / d as f64)
}

/// Coordinate-wise estimation with an `l2` accuracy target.
pub fn multivariate_estimate<R: RngCore>(
    agent: &mut VectorAgent<'_>,
    params: &FamilyParams,
    target: &TargetSpec,
    profile: AllocationProfile,
    learner_rng: &mut R,
    transcript: &mut Transcript,
) -> Result<MultivariateReport> {
    let d = agent.dim();
    let per = coordinate_target(target, d)?;
    let estimator = Estimator::new(*params, per).with_profile(profile);
    let mut coordinates = Vec::with_capacity(d);
    for j in 0..d {
        coordinates.push(estimator.run(&mut agent.coordinate(j), learner_rng, transcript)?);
    }
    Ok(MultivariateReport {
        mu_hat: coordinates.iter().map(|r| r.mu_hat).collect(),
        coordinates,
        samples: agent.samples_used(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Agent, FeedbackMode, SamplingMode, VectorDistribution};
    use crate::distributions::{gaussian, point_mass};
    use crate::refine::predict_cost;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> FamilyParams {
        FamilyParams::new(2.0, 64.0, 1.0).unwrap()
    }

    #[test]
    fn anytime_parameters() {
        assert!((anytime_delta(0.1, 1) - 0.6 / (PI * PI)).abs() < 1e-15);
        assert!((anytime_delta(0.1, 1) - 0.0608).abs() < 1e-4);
        assert!((anytime_delta(0.1, 2) - 0.0152).abs() < 1e-4);
        let total: f64 = (1..100_000).map(|t| anytime_delta(0.1, t)).sum();
        assert!(total <= 0.1);
        assert_eq!(anytime_eps(1.0, 3), 0.125);
    }

    #[test]
    fn anytime_exact_budget_gives_one_round() {
        let p = unit();
        let e = AllocationProfile::Empirical;
        let budget = localization_cost(Localizer::Median, &p, 0.1).unwrap()
            + anytime_round_plan(&p, 0.1, 1, e).unwrap().total_cost();
        let s = anytime_schedule(&p, 0.1, budget, e).unwrap();
        assert_eq!(s.rounds, 1);
        assert!(matches!(
            anytime_schedule(&p, 0.1, budget - 1, e),
            Err(Error::InfeasibleBudget { .. })
        ));

        let d = point_mass(0.3).unwrap();
        let mut agent = Agent::from_seed(&d, 1).with_mode(SamplingMode::Aggregated);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tr = Transcript::counting();
        let rep = anytime_estimate(&mut agent, &p, 0.1, budget, e, &mut rng, &mut tr).unwrap();
        assert_eq!(rep.rounds, 1);
        assert_eq!(rep.eps_final, 0.5);
        assert_eq!(rep.cumulative_cost, budget);
        assert_eq!(tr.total(), budget);
    }

    #[test]
    fn anytime_round_costs_grow_geometrically() {
        let e = AllocationProfile::Empirical;
        for k in [1.5, 2.0, 3.0] {
            let p = FamilyParams::new(k, 64.0, 1.0).unwrap();
            let factor = if k >= 2.0 {
                4.0
            } else {
                2f64.powf(k / (k - 1.0))
            };
            let costs: Vec<u64> = (1..=6)
                .map(|t| anytime_round_plan(&p, 0.1, t, e).unwrap().total_cost())
                .collect();
            for w in costs.windows(2) {
                assert!(w[1] as f64 >= factor * w[0] as f64, "k={k}: {costs:?}");
            }
        }
    }

    #[test]
    fn scale_grid_values() {
        let g = ScaleGrid::new(1.0, 16.0, 0.3, 0.2).unwrap();
        assert_eq!(g.last, 4);
        let sigmas: Vec<f64> = (0..=4).map(|i| g.sigma(i)).collect();
        assert_eq!(sigmas, vec![16.0, 8.0, 4.0, 2.0, 1.0]);
        assert!((g.eps(0) - 0.8).abs() < 1e-15);
        for i in 0..=4 {
            assert!((g.sigma(i) / g.eps(i) - 6.0 / 0.3).abs() < 1e-12);
        }
        assert!((g.round_delta() - 0.04).abs() < 1e-15);
        assert!(ScaleGrid::new(2.0, 1.0, 0.3, 0.2).is_err());
    }

    #[test]
    fn unknown_scale_on_point_mass_never_halts() {
        let d = point_mass(2.0).unwrap();
        let g = ScaleGrid::new(1.0, 4.0, 0.25, 0.2).unwrap();
        let mut agent = Agent::from_seed(&d, 3).with_mode(SamplingMode::Aggregated);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tr = Transcript::counting();
        let rep = unknown_scale_estimate(
            &mut agent,
            2.0,
            64.0,
            &g,
            AllocationProfile::Empirical,
            &mut rng,
            &mut tr,
        )
        .unwrap();
        assert_eq!(rep.halted_at, None);
        assert_eq!(rep.i_star, 2);
        assert!((rep.mu_hat - 2.0).abs() <= g.eps(rep.i_star));
        assert_eq!(rep.n_total, tr.total());
    }

    #[test]
    fn two_stage_rounds_and_point_mass() {
        let d = point_mass(-7.25).unwrap();
        let t = TargetSpec::new(0.25, 0.1).unwrap();
        let mut agent = Agent::from_seed(&d, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tr = Transcript::counting();
        let rep = two_stage_estimate(
            &mut agent,
            &unit(),
            &t,
            AllocationProfile::Empirical,
            &mut rng,
            &mut tr,
        )
        .unwrap();
        assert_eq!(rep.rounds_of_adaptivity, 2);
        assert!((rep.mu_hat + 7.25).abs() <= 0.25);
        let cost = Estimator::new(unit(), t)
            .with_localizer(Localizer::Gray)
            .predict_cost()
            .unwrap();
        assert_eq!(rep.n_total, cost.total);
    }

    #[test]
    fn multivariate_point_masses_and_accounting() {
        let coords = [1.0, -2.0, 3.5, 0.0];
        let vd = VectorDistribution::new(coords.iter().map(|&c| point_mass(c).unwrap()).collect())
            .unwrap();
        let t = TargetSpec::new(0.5, 0.2).unwrap();
        let p = FamilyParams::new(2.0, 16.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tr = Transcript::counting();
        let mut agent = VectorAgent::new(&vd, 7, FeedbackMode::OneBitPerSample)
            .with_mode(SamplingMode::Aggregated);
        let rep = multivariate_estimate(
            &mut agent,
            &p,
            &t,
            AllocationProfile::Empirical,
            &mut rng,
            &mut tr,
        )
        .unwrap();
        let l2: f64 = rep
            .mu_hat
            .iter()
            .zip(coords)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(l2 <= 0.5, "{:?}", rep.mu_hat);
        let per = predict_cost(
            &p,
            &coordinate_target(&t, 4).unwrap(),
            AllocationProfile::Empirical,
        )
        .unwrap();
        assert_eq!(rep.samples, 4 * per.total);

        let mut agent = VectorAgent::new(&vd, 7, FeedbackMode::OneBitPerCoordinate)
            .with_mode(SamplingMode::Aggregated);
        let rep = multivariate_estimate(
            &mut agent,
            &p,
            &t,
            AllocationProfile::Empirical,
            &mut rng,
            &mut tr,
        )
        .unwrap();
        assert_eq!(rep.samples, per.total);
    }

    #[test]
    fn multivariate_d1_matches_scalar_cost() {
        let vd = VectorDistribution::new(vec![gaussian(0.3, 0.5).unwrap()]).unwrap();
        let t = TargetSpec::new(0.5, 0.2).unwrap();
        let p = FamilyParams::new(2.0, 16.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tr = Transcript::counting();
        let mut agent = VectorAgent::new(&vd, 7, FeedbackMode::OneBitPerSample)
            .with_mode(SamplingMode::Aggregated);
        let rep = multivariate_estimate(
            &mut agent,
            &p,
            &t,
            AllocationProfile::Empirical,
            &mut rng,
            &mut tr,
        )
        .unwrap();
        assert_eq!(
            rep.samples,
            predict_cost(&p, &t, AllocationProfile::Empirical)
                .unwrap()
                .total
        );
    }
}
