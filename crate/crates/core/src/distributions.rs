//! Distribution fixtures with exact samplers and closed-form oracles.
//!
//! Every fixture exposes its CDF, mean, absolute central moments and the
//! partial first moments needed to evaluate region contributions exactly, so
//! claims about the estimators can be checked without Monte Carlo error.

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::error::{Error, Result};

/// Relative slack allowed when checking a moment against its budget.
pub const MOMENT_TOLERANCE: f64 = 1e-9;

/// Tolerance on the total mass of a discrete fixture.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Moment orders above this are reduced to it before entering any formula.
pub const MAX_OPERATIVE_K: f64 = 3.0;

/// Known parameters of the family: mean in `[-lambda, lambda]` and
/// `E|X - mu|^k <= sigma^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyParams {
    k: f64,
    lambda: f64,
    sigma: f64,
}

impl FamilyParams {
    pub fn new(k: f64, lambda: f64, sigma: f64) -> Result<Self> {
        if !(k.is_finite() && k > 1.0) {
            return Err(Error::param(
                "k",
                format!("must be finite and > 1, got {k}"),
            ));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param(
                "sigma",
                format!("must be positive, got {sigma}"),
            ));
        }
        if !(lambda.is_finite() && lambda >= sigma) {
            return Err(Error::param(
                "lambda",
                format!("must be finite and >= sigma ({sigma}), got {lambda}"),
            ));
        }
        Ok(Self { k, lambda, sigma })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `min(k, 3)`: a k-th moment bound with k > 3 implies the third-moment bound.
    pub fn operative_k(&self) -> f64 {
        self.k.min(MAX_OPERATIVE_K)
    }

    /// `sigma^{k'}` for the operative moment order.
    pub fn moment_budget(&self) -> f64 {
        self.sigma.powf(self.operative_k())
    }

    /// `lambda` rounded up to an integer multiple of `sigma`.
    pub fn lambda_grid(&self) -> f64 {
        grid_multiple(self.lambda / self.sigma) * self.sigma
    }

    /// Same family with a different scale; used by the scale grid search.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.k, self.lambda, sigma)
    }
}

/// Rounds a ratio up to an integer, ignoring floating error of a few ulps.
pub(crate) fn grid_multiple(ratio: f64) -> f64 {
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.abs().max(1.0) {
        nearest
    } else {
        ratio.ceil()
    }
}

/// Finite discrete distribution with sorted, distinct support points.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    points: Vec<f64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Discrete {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Iterator over `(point, mass)` pairs in increasing order of point.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.probs.iter().copied())
    }

    fn mass_where(&self, pred: impl Fn(f64) -> bool) -> f64 {
        self.atoms().filter(|(x, _)| pred(*x)).map(|(_, p)| p).sum()
    }

    fn first_moment_where(&self, pred: impl Fn(f64) -> bool) -> f64 {
        self.atoms()
            .filter(|(x, _)| pred(*x))
            .map(|(x, p)| x * p)
            .sum()
    }
}

/// Symmetric two-sided Pareto law around `mu`: density proportional to
/// `|x - mu|^{-(alpha + 1)}` for `|x - mu| >= scale`, zero inside the gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoSidedPareto {
    mu: f64,
    scale: f64,
    alpha: f64,
}

impl TwoSidedPareto {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Gap half-width `x_m`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `P(Y >= y)` for the centred variable `Y = X - mu`.
    fn centred_survival(&self, y: f64) -> f64 {
        if y >= self.scale {
            0.5 * (self.scale / y).powf(self.alpha)
        } else if y > -self.scale {
            0.5
        } else {
            1.0 - 0.5 * (self.scale / -y).powf(self.alpha)
        }
    }

    /// `E[Y 1(Y >= y)]`; by symmetry this only depends on `|y|`.
    fn centred_upper_moment(&self, y: f64) -> f64 {
        let z = y.abs().max(self.scale);
        0.5 * self.alpha * self.scale.powf(self.alpha) * z.powf(1.0 - self.alpha)
            / (self.alpha - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    PointMass { at: f64 },
    Discrete(Discrete),
    TwoSidedPareto(TwoSidedPareto),
    Gaussian { mean: f64, sd: f64 },
}

/// Builds a discrete fixture; atoms at equal points are merged.
pub fn make_discrete(points: &[f64], probs: &[f64]) -> Result<Distribution> {
    if points.len() != probs.len() {
        return Err(Error::LengthMismatch {
            points: points.len(),
            probs: probs.len(),
        });
    }
    if points.is_empty() {
        return Err(Error::param(
            "points",
            "at least one support point is required",
        ));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("points", "support points must be finite"));
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::NotNormalized { sum });
    }

    let mut atoms: Vec<(f64, f64)> = points.iter().copied().zip(probs.iter().copied()).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (x, p) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == x => last.1 += p,
            _ => merged.push((x, p)),
        }
    }

    let (points, probs): (Vec<f64>, Vec<f64>) = merged.into_iter().unzip();
    let cumulative = probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    Ok(Distribution::Discrete(Discrete {
        points,
        probs,
        cumulative,
    }))
}

pub fn point_mass(at: f64) -> Result<Distribution> {
    if !at.is_finite() {
        return Err(Error::param("at", "point mass location must be finite"));
    }
    Ok(Distribution::PointMass { at })
}

/// Two-sided Pareto with `x_m = sigma ((alpha - k) / alpha)^{1/k}`, which makes
/// `E|X - mu|^k = sigma^k` exactly.
pub fn make_two_sided_pareto(k: f64, sigma: f64, mu: f64, alpha: f64) -> Result<Distribution> {
    if !(k.is_finite() && k > 1.0) {
        return Err(Error::param("k", format!("must be > 1, got {k}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param(
            "sigma",
            format!("must be positive, got {sigma}"),
        ));
    }
    if !mu.is_finite() {
        return Err(Error::param("mu", "must be finite"));
    }
    if !(alpha.is_finite() && alpha > k) {
        return Err(Error::param(
            "alpha",
            format!("tail index must exceed k = {k}, got {alpha}"),
        ));
    }
    let scale = sigma * ((alpha - k) / alpha).powf(1.0 / k);
    Ok(Distribution::TwoSidedPareto(TwoSidedPareto {
        mu,
        scale,
        alpha,
    }))
}

pub fn gaussian(mean: f64, sd: f64) -> Result<Distribution> {
    if !mean.is_finite() {
        return Err(Error::param("mean", "must be finite"));
    }
    if !(sd.is_finite() && sd > 0.0) {
        return Err(Error::param("sd", format!("must be positive, got {sd}")));
    }
    Ok(Distribution::Gaussian { mean, sd })
}

/// `E|Z|^k` for a standard normal `Z`.
pub fn standard_normal_abs_moment(k: f64) -> f64 {
    2f64.powf(k / 2.0) * libm::tgamma((k + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
}

/// Gaussian whose k-th absolute central moment equals `sigma^k` exactly.
pub fn gaussian_budget_tight(k: f64, sigma: f64, mean: f64) -> Result<Distribution> {
    if !(k.is_finite() && k > 1.0) {
        return Err(Error::param("k", format!("must be > 1, got {k}")));
    }
    let sd = sigma / standard_normal_abs_moment(k).powf(1.0 / k);
    gaussian(mean, sd)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Distribution {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Distribution::PointMass { .. } => "point-mass",
            Distribution::Discrete(_) => "discrete-mixture",
            Distribution::TwoSidedPareto(_) => "two-sided-pareto",
            Distribution::Gaussian { .. } => "gaussian",
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::PointMass { at } => *at,
            Distribution::Discrete(d) => {
                let u: f64 = rng.random();
                let idx = d.cumulative.partition_point(|&c| c <= u);
                d.points[idx.min(d.points.len() - 1)]
            }
            Distribution::TwoSidedPareto(p) => {
                // 1 - U lies in (0, 1], so the magnitude is finite.
                let u: f64 = 1.0 - rng.random::<f64>();
                let magnitude = p.scale * u.powf(-1.0 / p.alpha);
                if rng.random::<bool>() {
                    p.mu + magnitude
                } else {
                    p.mu - magnitude
                }
            }
            Distribution::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }

    /// `F(x) = P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.prob_le(x)
    }

    pub fn prob_le(&self, x: f64) -> f64 {
        match self {
            Distribution::PointMass { at } => indicator(*at <= x),
            Distribution::Discrete(d) => d.mass_where(|p| p <= x).min(1.0),
            Distribution::TwoSidedPareto(p) => 1.0 - p.centred_survival(x - p.mu),
            Distribution::Gaussian { mean, sd } => std_normal_cdf((x - mean) / sd),
        }
    }

    pub fn prob_lt(&self, x: f64) -> f64 {
        match self {
            Distribution::PointMass { at } => indicator(*at < x),
            Distribution::Discrete(d) => d.mass_where(|p| p < x).min(1.0),
            _ => self.prob_le(x),
        }
    }

    pub fn prob_ge(&self, x: f64) -> f64 {
        match self {
            Distribution::PointMass { at } => indicator(*at >= x),
            Distribution::Discrete(d) => d.mass_where(|p| p >= x).min(1.0),
            Distribution::TwoSidedPareto(p) => p.centred_survival(x - p.mu),
            Distribution::Gaussian { mean, sd } => std_normal_cdf(-(x - mean) / sd),
        }
    }

    pub fn prob_gt(&self, x: f64) -> f64 {
        match self {
            Distribution::PointMass { at } => indicator(*at > x),
            Distribution::Discrete(d) => d.mass_where(|p| p > x).min(1.0),
            _ => self.prob_ge(x),
        }
    }

    /// `P(low <= X <= high)`.
    pub fn prob_closed_interval(&self, low: f64, high: f64) -> f64 {
        if low > high {
            return 0.0;
        }
        (self.prob_le(high) - self.prob_lt(low)).clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> f64 {
        match self {
            Distribution::PointMass { at } => *at,
            Distribution::Discrete(d) => d.atoms().map(|(x, p)| x * p).sum(),
            Distribution::TwoSidedPareto(p) => p.mu,
            Distribution::Gaussian { mean, .. } => *mean,
        }
    }

    /// `E|X - mu|^k` in closed form (infinite when the moment does not exist).
    pub fn abs_central_moment(&self, k: f64) -> f64 {
        match self {
            Distribution::PointMass { .. } => 0.0,
            Distribution::Discrete(d) => {
                let mu = self.mean();
                d.atoms().map(|(x, p)| p * (x - mu).abs().powf(k)).sum()
            }
            Distribution::TwoSidedPareto(p) => {
                if k < p.alpha {
                    p.alpha * p.scale.powf(k) / (p.alpha - k)
                } else {
                    f64::INFINITY
                }
            }
            Distribution::Gaussian { sd, .. } => sd.powf(k) * standard_normal_abs_moment(k),
        }
    }

    /// `E[X 1(X >= c)]`, or `E[X 1(X > c)]` when `inclusive` is false.
    pub fn upper_partial_mean(&self, c: f64, inclusive: bool) -> f64 {
        match self {
            Distribution::PointMass { at } => {
                if (inclusive && *at >= c) || (!inclusive && *at > c) {
                    *at
                } else {
                    0.0
                }
            }
            Distribution::Discrete(d) => {
                if inclusive {
                    d.first_moment_where(|x| x >= c)
                } else {
                    d.first_moment_where(|x| x > c)
                }
            }
            Distribution::TwoSidedPareto(p) => {
                p.mu * p.centred_survival(c - p.mu) + p.centred_upper_moment(c - p.mu)
            }
            Distribution::Gaussian { mean, sd } => {
                let z = (c - mean) / sd;
                mean * std_normal_cdf(-z) + sd * std_normal_pdf(z)
            }
        }
    }

    /// `E[X 1(X <= c)]`, or `E[X 1(X < c)]` when `inclusive` is false.
    pub fn lower_partial_mean(&self, c: f64, inclusive: bool) -> f64 {
        match self {
            Distribution::Discrete(d) => {
                if inclusive {
                    d.first_moment_where(|x| x <= c)
                } else {
                    d.first_moment_where(|x| x < c)
                }
            }
            _ => self.mean() - self.upper_partial_mean(c, !inclusive),
        }
    }

    /// `E[X 1(low < X < high)]`.
    pub fn open_partial_mean(&self, low: f64, high: f64) -> f64 {
        if low >= high {
            return 0.0;
        }
        match self {
            Distribution::Discrete(d) => d.first_moment_where(|x| x > low && x < high),
            Distribution::PointMass { at } => {
                if *at > low && *at < high {
                    *at
                } else {
                    0.0
                }
            }
            _ => self.upper_partial_mean(low, false) - self.upper_partial_mean(high, true),
        }
    }

    /// `E[clamp(X, low, high)]`.
    pub fn clamped_mean(&self, low: f64, high: f64) -> f64 {
        low * self.prob_le(low) + self.open_partial_mean(low, high) + high * self.prob_ge(high)
    }

    /// `E_T P(X >= T)` for a threshold `T ~ Uniform(low, high)` independent of `X`.
    pub fn uniform_threshold_ge(&self, low: f64, high: f64) -> f64 {
        ((self.clamped_mean(low, high) - low) / (high - low)).clamp(0.0, 1.0)
    }

    /// `E_T P(X <= T)` for a threshold `T ~ Uniform(low, high)` independent of `X`.
    pub fn uniform_threshold_le(&self, low: f64, high: f64) -> f64 {
        ((high - self.clamped_mean(low, high)) / (high - low)).clamp(0.0, 1.0)
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Outcome of a family-membership check, with both checked quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyVerdict {
    pub member: bool,
    pub mean: f64,
    pub mean_ok: bool,
    pub moment: f64,
    pub moment_bound: f64,
    pub moment_ok: bool,
}

/// Checks `|mean| <= lambda` and `E|X - mu|^{k'} <= sigma^{k'} (1 + 1e-9)`.
pub fn validate_family(dist: &Distribution, params: &FamilyParams) -> FamilyVerdict {
    let k = params.operative_k();
    let mean = dist.mean();
    let moment = dist.abs_central_moment(k);
    let moment_bound = params.moment_budget();
    let mean_ok = mean.abs() <= params.lambda();
    let moment_ok = moment <= moment_bound * (1.0 + MOMENT_TOLERANCE);
    FamilyVerdict {
        member: mean_ok && moment_ok,
        mean,
        mean_ok,
        moment,
        moment_bound,
        moment_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn family_params_reject_bad_inputs() {
        assert!(FamilyParams::new(1.0, 10.0, 1.0).is_err());
        assert!(FamilyParams::new(2.0, 10.0, 0.0).is_err());
        assert!(FamilyParams::new(2.0, 0.5, 1.0).is_err());
        let p = FamilyParams::new(5.0, 10.0, 1.0).unwrap();
        assert_eq!(p.operative_k(), 3.0);
    }

    #[test]
    fn lambda_grid_rounds_up() {
        let p = FamilyParams::new(2.0, 10.5, 1.0).unwrap();
        assert_eq!(p.lambda_grid(), 11.0);
        let p = FamilyParams::new(2.0, 6.4, 0.1).unwrap();
        assert!(close(p.lambda_grid(), 6.4, 1e-12));
    }

    #[test]
    fn discrete_mean_is_dot_product() {
        let d = make_discrete(&[-0.5, 0.5], &[0.4, 0.6]).unwrap();
        assert!(close(d.mean(), 0.1, 1e-15));
    }

    #[test]
    fn single_atom_has_zero_moments() {
        let d = make_discrete(&[0.0], &[1.0]).unwrap();
        assert_eq!(d.mean(), 0.0);
        assert_eq!(d.abs_central_moment(1.5), 0.0);
        assert_eq!(d.abs_central_moment(2.0), 0.0);
    }

    #[test]
    fn symmetric_three_point_second_moment() {
        let d = make_discrete(&[-2.0, 0.0, 2.0], &[0.25, 0.5, 0.25]).unwrap();
        assert!(close(d.abs_central_moment(2.0), 2.0, 1e-15));
    }

    #[test]
    fn discrete_rejects_bad_inputs() {
        assert!(matches!(
            make_discrete(&[0.0, 1.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            make_discrete(&[0.0, 1.0], &[1.2, -0.2]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(matches!(
            make_discrete(&[0.0, 1.0], &[0.5, 0.49]),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn discrete_merges_duplicate_points() {
        let d = make_discrete(&[1.0, 0.0, 1.0], &[0.25, 0.5, 0.25]).unwrap();
        match &d {
            Distribution::Discrete(inner) => {
                assert_eq!(inner.points(), &[0.0, 1.0]);
                assert_eq!(inner.probs(), &[0.5, 0.5]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn pareto_scale_and_moment() {
        let d = make_two_sided_pareto(1.5, 1.0, 0.0, 1.9).unwrap();
        let Distribution::TwoSidedPareto(p) = d else {
            unreachable!()
        };
        let expected_scale = (0.4f64 / 1.9).powf(2.0 / 3.0);
        assert!(close(p.scale(), expected_scale, 1e-15));
        assert!(close(p.scale(), 0.3537, 1e-3));
        let d = Distribution::TwoSidedPareto(p);
        assert!(close(d.abs_central_moment(1.5), 1.0, 1e-12));
    }

    #[test]
    fn pareto_shift_and_symmetry() {
        let d = make_two_sided_pareto(1.5, 1.0, 5.0, 1.9).unwrap();
        assert_eq!(d.mean(), 5.0);
        assert_eq!(d.cdf(5.0), 0.5);
        assert!(make_two_sided_pareto(1.5, 1.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn gaussian_budget_tight_binds() {
        for k in [1.2, 1.5, 2.0, 2.5, 3.0] {
            let d = gaussian_budget_tight(k, 2.0, 1.0).unwrap();
            assert!(close(
                d.abs_central_moment(k),
                2f64.powf(k),
                1e-12 * 2f64.powf(k)
            ));
        }
        // k = 2 reduces to sd = sigma.
        let d = gaussian_budget_tight(2.0, 3.0, 0.0).unwrap();
        assert!(matches!(d, Distribution::Gaussian { sd, .. } if close(sd, 3.0, 1e-12)));
    }

    #[test]
    fn membership_examples() {
        let params = FamilyParams::new(2.0, 10.0, 1.0).unwrap();
        assert!(validate_family(&point_mass(0.0).unwrap(), &params).member);

        let wide = make_discrete(&[-2.0, 2.0], &[0.5, 0.5]).unwrap();
        let verdict = validate_family(&wide, &params);
        assert!(!verdict.member);
        assert!(close(verdict.moment, 4.0, 1e-15));

        let far = point_mass(10.5).unwrap();
        assert!(!validate_family(&far, &params).mean_ok);
    }

    #[test]
    fn partial_means_partition_the_mean() {
        let fixtures = vec![
            make_discrete(&[-1.0, 0.0, 2.0], &[0.3, 0.3, 0.4]).unwrap(),
            make_two_sided_pareto(1.5, 1.0, 0.7, 2.5).unwrap(),
            gaussian(-0.3, 1.7).unwrap(),
            point_mass(0.4).unwrap(),
        ];
        for d in &fixtures {
            for c in [-3.0, -0.5, 0.0, 0.4, 2.0, 7.0] {
                let total = d.lower_partial_mean(c, false) + d.upper_partial_mean(c, true);
                assert!(close(total, d.mean(), 1e-12), "{} at {c}", d.kind_name());
            }
        }
    }

    #[test]
    fn uniform_threshold_probabilities_complement() {
        let d = make_two_sided_pareto(2.0, 1.0, 0.0, 3.0).unwrap();
        let ge = d.uniform_threshold_ge(0.5, 3.0);
        let le = d.uniform_threshold_le(0.5, 3.0);
        assert!(close(ge + le, 1.0, 1e-12));
        // Atom at 1 inside [0, 2): Pr(T <= 1) = 1/2.
        let d = make_discrete(&[1.0], &[1.0]).unwrap();
        assert!(close(d.uniform_threshold_ge(0.0, 2.0), 0.5, 1e-15));
    }
}
