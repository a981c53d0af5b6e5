//! The 1-bit learner/agent protocol.
//!
//! A learner talks to an agent only through [`Channel`]: it sends a [`Query`]
//! and receives one bit computed on a fresh sample. Samples never cross the
//! boundary and every bit is counted in a [`Transcript`].

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution as _};

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::localization::gray_bit_value;

/// A 1-bit quantization function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Query {
    /// `1{x >= gamma}`
    ThresholdGe(f64),
    /// `1{x <= gamma}`
    ThresholdLe(f64),
    /// `1{low <= x <= high}`; infinite endpoints are allowed.
    Interval { low: f64, high: f64 },
    /// `g_level((x + shift) / scale)`, one bit of the Gray code of the rescaled sample.
    GrayBit { level: u32, shift: f64, scale: f64 },
}

impl Query {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Query::ThresholdGe(g) | Query::ThresholdLe(g) => {
                if g.is_nan() {
                    return Err(Error::MalformedQuery("threshold is NaN".into()));
                }
            }
            Query::Interval { low, high } => {
                if low.is_nan() || high.is_nan() || low > high {
                    return Err(Error::MalformedQuery(format!(
                        "interval requires low <= high, got [{low}, {high}]"
                    )));
                }
            }
            Query::GrayBit {
                level,
                shift,
                scale,
            } => {
                if level == 0 {
                    return Err(Error::MalformedQuery("gray level must be >= 1".into()));
                }
                if !(scale.is_finite() && scale > 0.0) || !shift.is_finite() {
                    return Err(Error::MalformedQuery(format!(
                        "gray map needs finite shift and positive scale, got ({shift}, {scale})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies the quantizer to a sample. Runs on the agent side.
    pub fn evaluate(&self, x: f64) -> bool {
        match *self {
            Query::ThresholdGe(g) => x >= g,
            Query::ThresholdLe(g) => x <= g,
            Query::Interval { low, high } => low <= x && x <= high,
            Query::GrayBit {
                level,
                shift,
                scale,
            } => gray_bit_value(level, (x + shift) / scale),
        }
    }

    /// Exact probability that the bit is 1 under `dist`, when available in closed form.
    pub fn success_probability(&self, dist: &Distribution) -> Option<f64> {
        match *self {
            Query::ThresholdGe(g) => Some(dist.prob_ge(g)),
            Query::ThresholdLe(g) => Some(dist.prob_le(g)),
            Query::Interval { low, high } => Some(dist.prob_closed_interval(low, high)),
            Query::GrayBit { .. } => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Query::ThresholdGe(_) => "ge",
            Query::ThresholdLe(_) => "le",
            Query::Interval { .. } => "interval",
            Query::GrayBit { .. } => "gray",
        }
    }

    /// The two numeric parameters written to transcript dumps.
    pub fn params(&self) -> (f64, f64) {
        match *self {
            Query::ThresholdGe(g) | Query::ThresholdLe(g) => (g, f64::NAN),
            Query::Interval { low, high } => (low, high),
            Query::GrayBit { level, shift, .. } => (level as f64, shift),
        }
    }
}

/// A run of `m` i.i.d. queries issued together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Batch {
    /// The same query repeated.
    Repeat(Query),
    /// `1{x >= T}` with a fresh learner-drawn `T ~ Uniform(low, high)` per query.
    UniformGe { low: f64, high: f64 },
    /// `1{x <= T}` with a fresh learner-drawn `T ~ Uniform(low, high)` per query.
    UniformLe { low: f64, high: f64 },
}

impl Batch {
    fn draw<R: Rng + ?Sized>(&self, learner_rng: &mut R) -> Query {
        match *self {
            Batch::Repeat(q) => q,
            Batch::UniformGe { low, high } => Query::ThresholdGe(uniform(learner_rng, low, high)),
            Batch::UniformLe { low, high } => Query::ThresholdLe(uniform(learner_rng, low, high)),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Batch::Repeat(q) => q.validate(),
            Batch::UniformGe { low, high } | Batch::UniformLe { low, high } => {
                if low.is_finite() && high.is_finite() && low < high {
                    Ok(())
                } else {
                    Err(Error::MalformedQuery(format!(
                        "uniform threshold range must be finite with low < high, got [{low}, {high})"
                    )))
                }
            }
        }
    }

    /// Per-query probability of a 1 bit, integrated over the learner's threshold draw.
    fn success_probability(&self, dist: &Distribution) -> Option<f64> {
        match *self {
            Batch::Repeat(q) => q.success_probability(dist),
            Batch::UniformGe { low, high } => Some(dist.uniform_threshold_ge(low, high)),
            Batch::UniformLe { low, high } => Some(dist.uniform_threshold_le(low, high)),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, low: f64, high: f64) -> f64 {
    low + (high - low) * rng.random::<f64>()
}

/// Learner-side view of an agent.
pub trait Channel {
    /// Sends one query; the agent draws a fresh sample and returns the bit.
    fn respond(&mut self, query: &Query, transcript: &mut Transcript) -> Result<bool>;

    /// Issues `m` queries from `batch` and returns the number of 1 bits.
    fn count_ones(
        &mut self,
        batch: &Batch,
        m: u64,
        learner_rng: &mut dyn RngCore,
        transcript: &mut Transcript,
    ) -> Result<u64> {
        batch.validate()?;
        let mut ones = 0;
        for _ in 0..m {
            let q = batch.draw(learner_rng);
            ones += u64::from(self.respond(&q, transcript)?);
        }
        Ok(ones)
    }
}

/// Mean of `m` independent bits for the same query.
pub fn repeated_fraction<C: Channel + ?Sized>(
    channel: &mut C,
    query: &Query,
    m: u64,
    transcript: &mut Transcript,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::param("m", "at least one repetition is required"));
    }
    // Repeated fixed queries never consult the learner's randomness.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let ones = channel.count_ones(&Batch::Repeat(*query), m, &mut unused, transcript)?;
    Ok(ones as f64 / m as f64)
}

/// How an agent realises a batch of i.i.d. queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// One fresh sample per query.
    #[default]
    PerSample,
    /// The count of 1 bits in a batch is drawn from its exact Binomial law.
    /// Only used when the transcript is not recording individual entries.
    Aggregated,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::PerSample => "per-sample",
            SamplingMode::Aggregated => "aggregated",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-sample" => Ok(SamplingMode::PerSample),
            "aggregated" => Ok(SamplingMode::Aggregated),
            other => Err(Error::Unknown {
                what: "sampling mode",
                name: other.to_string(),
            }),
        }
    }
}

/// Sample-holding side of the protocol. Memoryless: each query consumes one
/// fresh draw and the draw is discarded after quantization.
#[derive(Debug, Clone)]
pub struct Agent<'a> {
    dist: &'a Distribution,
    rng: ChaCha8Rng,
    mode: SamplingMode,
}

impl<'a> Agent<'a> {
    pub fn new(dist: &'a Distribution, rng: ChaCha8Rng) -> Self {
        Self {
            dist,
            rng,
            mode: SamplingMode::PerSample,
        }
    }

    pub fn from_seed(dist: &'a Distribution, seed: u64) -> Self {
        Self::new(dist, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }
}

impl Channel for Agent<'_> {
    fn respond(&mut self, query: &Query, transcript: &mut Transcript) -> Result<bool> {
        query.validate()?;
        let x = self.dist.sample(&mut self.rng);
        let bit = query.evaluate(x);
        transcript.record(query, bit);
        Ok(bit)
    }

    fn count_ones(
        &mut self,
        batch: &Batch,
        m: u64,
        learner_rng: &mut dyn RngCore,
        transcript: &mut Transcript,
    ) -> Result<u64> {
        batch.validate()?;
        if self.mode == SamplingMode::Aggregated && !transcript.is_recording() && m > 0 {
            if let Some(p) = batch.success_probability(self.dist) {
                let law = Binomial::new(m, p.clamp(0.0, 1.0))
                    .map_err(|e| Error::MalformedQuery(format!("binomial law: {e}")))?;
                let ones = law.sample(&mut self.rng);
                transcript.add_count(m);
                return Ok(ones);
            }
        }
        let mut ones = 0;
        for _ in 0..m {
            let q = batch.draw(learner_rng);
            let x = self.dist.sample(&mut self.rng);
            let bit = q.evaluate(x);
            transcript.record(&q, bit);
            ones += u64::from(bit);
        }
        Ok(ones)
    }
}

/// Protocol phase a query is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Localization,
    Refinement,
    Baseline,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Localization => "localization",
            Phase::Refinement => "refinement",
            Phase::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub phase: Phase,
    pub query: Query,
    pub bit: bool,
}

/// Interaction history: exact per-phase counters and, optionally, every
/// `(query, bit)` pair. Raw samples are never stored.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    phase: Option<Phase>,
    batch: Option<usize>,
    region: Option<i32>,
    entries: Option<Vec<Entry>>,
    localization: u64,
    refinement: u64,
    baseline: u64,
    per_region: BTreeMap<i32, u64>,
    per_batch: Vec<u64>,
}

impl Transcript {
    /// Counts only.
    pub fn counting() -> Self {
        Self::default()
    }

    /// Counts and keeps every `(query, bit)` entry.
    pub fn recording() -> Self {
        Self {
            entries: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.entries.is_some()
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = Some(phase);
        self.batch = None;
        self.region = None;
    }

    pub fn phase(&self) -> Phase {
        self.phase.unwrap_or(Phase::Localization)
    }

    /// Attributes subsequent refinement queries to a batch and region.
    pub fn set_scope(&mut self, batch: Option<usize>, region: Option<i32>) {
        self.batch = batch;
        self.region = region;
    }

    fn record(&mut self, query: &Query, bit: bool) {
        let phase = self.phase();
        if let Some(entries) = self.entries.as_mut() {
            entries.push(Entry {
                phase,
                query: *query,
                bit,
            });
        }
        self.add_count(1);
    }

    fn add_count(&mut self, m: u64) {
        match self.phase() {
            Phase::Localization => self.localization += m,
            Phase::Refinement => self.refinement += m,
            Phase::Baseline => self.baseline += m,
        }
        if let Some(region) = self.region {
            *self.per_region.entry(region).or_default() += m;
        }
        if let Some(batch) = self.batch {
            if self.per_batch.len() <= batch {
                self.per_batch.resize(batch + 1, 0);
            }
            self.per_batch[batch] += m;
        }
    }

    pub fn total(&self) -> u64 {
        self.localization + self.refinement + self.baseline
    }

    pub fn count(&self, phase: Phase) -> u64 {
        match phase {
            Phase::Localization => self.localization,
            Phase::Refinement => self.refinement,
            Phase::Baseline => self.baseline,
        }
    }

    pub fn per_region(&self) -> &BTreeMap<i32, u64> {
        &self.per_region
    }

    pub fn per_batch(&self) -> &[u64] {
        &self.per_batch
    }

    pub fn entries(&self) -> Option<&[Entry]> {
        self.entries.as_deref()
    }

    /// Writes `phase,query_kind,param1,param2,bit`, one line per recorded query.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "query_kind", "param1", "param2", "bit"])?;
        for e in self.entries.as_deref().unwrap_or_default() {
            let (p1, p2) = e.query.params();
            w.write_record([
                e.phase.as_str().to_string(),
                e.query.kind().to_string(),
                fmt_param(p1),
                fmt_param(p2),
                u8::from(e.bit).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_param(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Product distribution over `R^d` with independent coordinates.
#[derive(Debug, Clone)]
pub struct VectorDistribution {
    coordinates: Vec<Distribution>,
}

impl VectorDistribution {
    pub fn new(coordinates: Vec<Distribution>) -> Result<Self> {
        if coordinates.is_empty() {
            return Err(Error::param("d", "dimension must be at least 1"));
        }
        Ok(Self { coordinates })
    }

    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }

    pub fn coordinate(&self, j: usize) -> &Distribution {
        &self.coordinates[j]
    }

    pub fn mean(&self) -> Vec<f64> {
        self.coordinates.iter().map(Distribution::mean).collect()
    }
}

/// How many bits an agent may send per vector sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeedbackMode {
    /// One bit per vector sample: every query consumes a whole vector.
    #[default]
    OneBitPerSample,
    /// One bit per coordinate per vector sample.
    OneBitPerCoordinate,
}

/// Agent holding a vector distribution. Queries threshold one selected coordinate.
///
/// Coordinates are independent, so the coordinates of a vector sample that a
/// query does not look at need not be materialised; each coordinate draws
/// from its own stream.
#[derive(Debug, Clone)]
pub struct VectorAgent<'a> {
    coords: Vec<Agent<'a>>,
    bits: Vec<u64>,
    feedback: FeedbackMode,
}

impl<'a> VectorAgent<'a> {
    pub fn new(dist: &'a VectorDistribution, seed: u64, feedback: FeedbackMode) -> Self {
        let coords = dist
            .coordinates
            .iter()
            .enumerate()
            .map(|(j, d)| {
                Agent::from_seed(
                    d,
                    crate::harness::derive_seed(seed, "coordinate", j as u64, 0),
                )
            })
            .collect();
        Self {
            coords,
            bits: vec![0; dist.dim()],
            feedback,
        }
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.coords = self.coords.into_iter().map(|a| a.with_mode(mode)).collect();
        self
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Vector samples consumed so far under the feedback mode.
    pub fn samples_used(&self) -> u64 {
        match self.feedback {
            FeedbackMode::OneBitPerSample => self.bits.iter().sum(),
            FeedbackMode::OneBitPerCoordinate => self.bits.iter().copied().max().unwrap_or(0),
        }
    }

    /// Channel that thresholds coordinate `j`.
    pub fn coordinate(&mut self, j: usize) -> CoordinateChannel<'_, 'a> {
        CoordinateChannel { agent: self, j }
    }
}

pub struct CoordinateChannel<'v, 'a> {
    agent: &'v mut VectorAgent<'a>,
    j: usize,
}

impl Channel for CoordinateChannel<'_, '_> {
    fn respond(&mut self, query: &Query, transcript: &mut Transcript) -> Result<bool> {
        let bit = self.agent.coords[self.j].respond(query, transcript)?;
        self.agent.bits[self.j] += 1;
        Ok(bit)
    }

    fn count_ones(
        &mut self,
        batch: &Batch,
        m: u64,
        learner_rng: &mut dyn RngCore,
        transcript: &mut Transcript,
    ) -> Result<u64> {
        let ones = self.agent.coords[self.j].count_ones(batch, m, learner_rng, transcript)?;
        self.agent.bits[self.j] += m;
        Ok(ones)
    }
}
