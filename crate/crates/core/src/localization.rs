//! Coarse localization: an interval of length `O(sigma)` that contains the mean.
//!
//! Two localizers are provided. [`localize_median`] is an adaptive certified
//! interval-halving search for the median. [`localize_gray`] is non-adaptive:
//! it reads Gray-code bits of the rescaled mean with a fixed query plan.

use crate::channel::{repeated_fraction, Channel, Phase, Query, Transcript};
use crate::distributions::{grid_multiple, FamilyParams};
use crate::error::{Error, Result};

/// Hoeffding margin between the decision split and the certification levels.
pub const VOTE_MARGIN: f64 = 0.03;
/// Split for the lower search: certifies `F(lo) < 0.5` and `F(hi) > 0.44`.
pub const LOWER_SPLIT: f64 = 0.47;
/// Split for the upper search: certifies `F(lo) < 0.56` and `F(hi) > 0.5`.
pub const UPPER_SPLIT: f64 = 0.53;

/// Which coarse localizer an estimator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Localizer {
    #[default]
    Median,
    Gray,
}

impl Localizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Localizer::Median => "median",
            Localizer::Gray => "gray",
        }
    }
}

impl std::str::FromStr for Localizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Localizer::Median),
            "gray" => Ok(Localizer::Gray),
            other => Err(Error::Unknown {
                what: "localization method",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationResult {
    pub low: f64,
    pub high: f64,
    pub center: f64,
    pub samples_used: u64,
    /// Rounds of adaptivity spent (batches whose queries depend on earlier bits).
    pub rounds: u32,
}

impl LocalizationResult {
    pub fn length(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::param(
            "delta",
            format!("must lie in (0, 1), got {delta}"),
        ))
    }
}

/// Smallest `j` with `2^j >= n`.
fn ceil_log2(n: u64) -> u32 {
    n.next_power_of_two().trailing_zeros()
}

/// Bisection depth `ceil(log2(2 lambda / sigma))`, with lambda rounded up to a multiple of sigma.
pub fn median_levels(params: &FamilyParams) -> u32 {
    let cells = 2 * grid_multiple(params.lambda() / params.sigma()) as u64;
    ceil_log2(cells).max(1)
}

/// Votes per bisection step: `ceil(ln(8 levels / delta) / (2 * 0.03^2))`.
pub fn median_votes(levels: u32, delta: f64) -> u64 {
    let r = (8.0 * levels as f64 / delta).ln() / (2.0 * VOTE_MARGIN * VOTE_MARGIN);
    grid_multiple(r) as u64
}

/// Exact sample count of [`localize_median`]: two searches, `levels` steps each, `r` votes per step.
pub fn median_cost(params: &FamilyParams, delta: f64) -> u64 {
    let levels = median_levels(params);
    2 * levels as u64 * median_votes(levels, delta)
}

/// Adaptive localization by two certified bisections on the median.
///
/// The lower search returns `L` with `F(L) < 0.5` and `F(L + sigma) > 0.44`,
/// the upper search `U` with `F(U) > 0.5` and `F(U - sigma) < 0.56`. The result
/// is `[min(L, U) - sigma, max(L, U) + sigma]`.
pub fn localize_median<C: Channel + ?Sized>(
    channel: &mut C,
    params: &FamilyParams,
    delta: f64,
    transcript: &mut Transcript,
) -> Result<LocalizationResult> {
    check_delta(delta)?;
    transcript.set_phase(Phase::Localization);
    let sigma = params.sigma();
    let lambda = params.lambda_grid();
    let levels = median_levels(params);
    let votes = median_votes(levels, delta);
    let span = (1u64 << levels) as f64 * sigma;

    let lower = bisect(
        channel,
        -lambda,
        -lambda + span,
        levels,
        votes,
        LOWER_SPLIT,
        transcript,
    )?
    .0;
    let upper = bisect(
        channel,
        lambda - span,
        lambda,
        levels,
        votes,
        UPPER_SPLIT,
        transcript,
    )?
    .1;

    let low = lower.min(upper) - sigma;
    let high = lower.max(upper) + sigma;
    Ok(LocalizationResult {
        low,
        high,
        center: 0.5 * (low + high),
        samples_used: 2 * levels as u64 * votes,
        rounds: 2 * levels,
    })
}

fn bisect<C: Channel + ?Sized>(
    channel: &mut C,
    mut lo: f64,
    mut hi: f64,
    levels: u32,
    votes: u64,
    split: f64,
    transcript: &mut Transcript,
) -> Result<(f64, f64)> {
    for _ in 0..levels {
        let mid = 0.5 * (lo + hi);
        let frac = repeated_fraction(channel, &Query::ThresholdLe(mid), votes, transcript)?;
        if frac >= split {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

/// `g_level(x)`: 1 iff `floor(2^level * clamp(x, 0, 1)) mod 4` is 1 or 2.
pub fn gray_bit_value(level: u32, x: f64) -> bool {
    let scaled = (x.clamp(0.0, 1.0) * 2f64.powi(level as i32)).floor();
    matches!(scaled.rem_euclid(4.0) as u8, 1 | 2)
}

/// Distance from `x` to the nearest point where `g_level` changes value,
/// i.e. the nearest odd multiple of `2^-level` in `(0, 1)`.
pub fn gray_change_distance(level: u32, x: f64) -> f64 {
    let step = 2f64.powi(-(level as i32));
    let count = 1u64 << (level - 1);
    let j = ((x / step + 1.0) / 2.0).round().clamp(1.0, count as f64);
    let mut best = f64::INFINITY;
    for cand in [j - 1.0, j, j + 1.0] {
        if cand >= 1.0 && cand <= count as f64 {
            best = best.min((x - (2.0 * cand - 1.0) * step).abs());
        }
    }
    best
}

/// Closed dyadic interval `[low, low + 2^-bits]` inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyadicInterval {
    pub low: f64,
    pub high: f64,
}

impl DyadicInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

/// The dyadic cell of width `2^-M` whose points have Gray bits `bits[0..M]` at levels `1..=M`.
///
/// Every bit pattern has exactly one such cell, so only empty input is rejected.
pub fn gray_decode(bits: &[bool]) -> Result<DyadicInterval> {
    if bits.is_empty() {
        return Err(Error::param("bits", "at least one Gray bit is required"));
    }
    let mut low = 0.0;
    let mut width = 1.0;
    for (i, &bit) in bits.iter().enumerate() {
        width *= 0.5;
        let left_mid = low + 0.5 * width;
        if gray_bit_value(i as u32 + 1, left_mid) != bit {
            low += width;
        }
    }
    Ok(DyadicInterval {
        low,
        high: low + width,
    })
}

/// Non-adaptive query plan of the Gray localizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrayPlan {
    /// `M`: number of Gray bits.
    pub bits: u32,
    /// `J`: votes per bit.
    pub votes: u64,
    /// Affine map `x' = (x + shift) / scale` onto `[0, 1]`.
    pub shift: f64,
    pub scale: f64,
}

impl GrayPlan {
    /// `None` when `lambda / sigma < 2^{2 + 2/k'}`, where the localizer is bypassed.
    pub fn new(params: &FamilyParams, delta: f64) -> Result<Option<Self>> {
        check_delta(delta)?;
        let ratio = params.lambda() / params.sigma();
        let exponent = ratio.log2() - 1.0 - 2.0 / params.operative_k();
        let bits = (exponent + 1e-12).floor();
        if bits < 1.0 {
            return Ok(None);
        }
        let bits = bits as u32;
        let votes = grid_multiple(8.0 * (2.0 * bits as f64 / delta).ln()) as u64;
        Ok(Some(Self {
            bits,
            votes,
            shift: params.lambda(),
            scale: 2.0 * params.lambda(),
        }))
    }

    pub fn samples(&self) -> u64 {
        self.bits as u64 * self.votes
    }

    /// The full query list, fixed before any response is read.
    pub fn queries(&self) -> Vec<Query> {
        (1..=self.bits)
            .flat_map(|level| {
                std::iter::repeat_n(
                    Query::GrayBit {
                        level,
                        shift: self.shift,
                        scale: self.scale,
                    },
                    self.votes as usize,
                )
            })
            .collect()
    }

    /// Upper bound `3 lambda 2^-M` on the output length.
    pub fn length_bound(&self) -> f64 {
        1.5 * self.scale * 2f64.powi(-(self.bits as i32))
    }
}

/// Exact sample count of [`localize_gray`].
pub fn gray_cost(params: &FamilyParams, delta: f64) -> Result<u64> {
    Ok(GrayPlan::new(params, delta)?.map_or(0, |p| p.samples()))
}

/// Non-adaptive localization through majority-voted Gray bits of `(X + lambda) / (2 lambda)`.
pub fn localize_gray<C: Channel + ?Sized>(
    channel: &mut C,
    params: &FamilyParams,
    delta: f64,
    transcript: &mut Transcript,
) -> Result<LocalizationResult> {
    transcript.set_phase(Phase::Localization);
    let lambda = params.lambda();
    let Some(plan) = GrayPlan::new(params, delta)? else {
        return Ok(LocalizationResult {
            low: -lambda,
            high: lambda,
            center: 0.0,
            samples_used: 0,
            rounds: 0,
        });
    };

    let queries = plan.queries();
    let mut responses = Vec::with_capacity(queries.len());
    for q in &queries {
        responses.push(channel.respond(q, transcript)?);
    }

    let j = plan.votes as usize;
    let bits: Vec<bool> = responses
        .chunks(j)
        .map(|group| 2 * group.iter().filter(|&&b| b).count() >= j)
        .collect();
    let cell = gray_decode(&bits)?;
    let pad = 2f64.powi(-(plan.bits as i32 + 2));
    let lo = (cell.low - pad).max(0.0);
    let hi = (cell.high + pad).min(1.0);
    let low = plan.scale * lo - plan.shift;
    let high = plan.scale * hi - plan.shift;
    Ok(LocalizationResult {
        low,
        high,
        center: 0.5 * (low + high),
        samples_used: plan.samples(),
        rounds: 1,
    })
}

/// Deterministic bound on `|mu - center|` assumed by the refinement stage.
pub fn radius_bound(localizer: Localizer, params: &FamilyParams, delta: f64) -> Result<f64> {
    match localizer {
        Localizer::Median => Ok(4.0 * params.sigma()),
        Localizer::Gray => {
            Ok(GrayPlan::new(params, delta)?.map_or(params.lambda(), |p| 0.5 * p.length_bound()))
        }
    }
}

pub fn localization_cost(localizer: Localizer, params: &FamilyParams, delta: f64) -> Result<u64> {
    check_delta(delta)?;
    match localizer {
        Localizer::Median => Ok(median_cost(params, delta)),
        Localizer::Gray => gray_cost(params, delta),
    }
}

pub fn localize<C: Channel + ?Sized>(
    localizer: Localizer,
    channel: &mut C,
    params: &FamilyParams,
    delta: f64,
    transcript: &mut Transcript,
) -> Result<LocalizationResult> {
    match localizer {
        Localizer::Median => localize_median(channel, params, delta, transcript),
        Localizer::Gray => localize_gray(channel, params, delta, transcript),
    }
}
