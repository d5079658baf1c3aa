//! Random streams, outburst radius laws and space-time Poisson event
//! generation by thinning.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};

use crate::geometry::{Ball, Point};
use crate::{Error, Result};

/// Default consecutive-rejection limit for thinning loops.
pub const MAX_CONSECUTIVE_REJECTIONS: u64 = 1_000_000_000;

/// Stream labels used when deriving substreams. Fixed values so that a given
/// (seed, replica, label) always maps to the same draws.
pub mod labels {
    pub const REPLICA: u64 = 0x5245_504c;
    pub const TYPE_1: u64 = 1;
    pub const TYPE_2: u64 = 2;
    pub const SINGLE: u64 = 3;
    pub const N1: u64 = 11;
    pub const N2: u64 = 12;
    pub const AUDIT: u64 = 20;
    pub const BRW: u64 = 30;
    pub const BRW_ANCESTOR: u64 = 31;
    pub const NORM_PROBES: u64 = 40;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id of the child labelled `label` under `parent`.
pub fn derive_stream_id(parent: u64, label: u64) -> u64 {
    splitmix64(parent.rotate_left(17) ^ splitmix64(label))
}

/// A seeded, splittable random stream.
///
/// Backed by ChaCha8 keyed by `seed` with `stream_id` as the stream nonce, so
/// identical `(seed, stream_id)` pairs replay identical sequences and distinct
/// ids give independent sequences. Substreams are derived deterministically
/// from labels.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Reopens a stream at a saved word position.
    pub fn at_position(seed: u64, stream_id: u64, position: u128) -> Self {
        let mut s = Self::new(seed, stream_id);
        s.rng.set_word_pos(position);
        s
    }

    /// Root stream of replica `index` under `seed`.
    pub fn replica(seed: u64, index: u64) -> Self {
        Self::new(seed, derive_stream_id(labels::REPLICA, index))
    }

    pub fn substream(&self, label: u64) -> Self {
        Self::new(self.seed, derive_stream_id(self.stream_id, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(self)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Parametric family of the outburst radius law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RadiusFamily {
    Deterministic { r: f64 },
    Uniform { a: f64, b: f64 },
    Exponential { rate: f64 },
    Pareto { scale: f64, shape: f64 },
}

/// Outburst radius law `F` with its mean (γ) and exponential-moment flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusDistribution {
    pub family: RadiusFamily,
    pub mean_gamma: f64,
    /// Whether `∫ e^{-φ r} dF(r) < ∞` for some `φ < 0`.
    pub mgf_exists: bool,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl RadiusDistribution {
    pub fn new(family: RadiusFamily) -> Result<Self> {
        let (mean_gamma, mgf_exists) = match family {
            RadiusFamily::Deterministic { r } => {
                positive("radius", r)?;
                (r, true)
            }
            RadiusFamily::Uniform { a, b } => {
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(Error::InvalidDistribution(format!(
                        "uniform lower bound must be nonnegative, got {a}"
                    )));
                }
                positive("uniform upper bound", b)?;
                if a >= b {
                    return Err(Error::InvalidDistribution(format!(
                        "uniform bounds must satisfy a < b, got a={a}, b={b}"
                    )));
                }
                ((a + b) / 2.0, true)
            }
            RadiusFamily::Exponential { rate } => {
                positive("rate", rate)?;
                (1.0 / rate, true)
            }
            RadiusFamily::Pareto { scale, shape } => {
                positive("scale", scale)?;
                positive("shape", shape)?;
                if shape <= 1.0 {
                    return Err(Error::InvalidDistribution(format!(
                        "pareto shape must exceed 1 for a finite mean, got {shape}"
                    )));
                }
                (shape * scale / (shape - 1.0), false)
            }
        };
        Ok(Self {
            family,
            mean_gamma,
            mgf_exists,
        })
    }

    pub fn deterministic(r: f64) -> Result<Self> {
        Self::new(RadiusFamily::Deterministic { r })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(RadiusFamily::Uniform { a, b })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(RadiusFamily::Exponential { rate })
    }

    pub fn pareto(scale: f64, shape: f64) -> Result<Self> {
        Self::new(RadiusFamily::Pareto { scale, shape })
    }

    /// γ, the mean outburst radius.
    pub fn gamma(&self) -> f64 {
        self.mean_gamma
    }

    /// Whether `E[R^p] < ∞`.
    pub fn has_finite_moment(&self, p: f64) -> bool {
        match self.family {
            RadiusFamily::Pareto { shape, .. } => p < shape,
            _ => true,
        }
    }

    /// Upper end of the support, if bounded.
    pub fn max_radius(&self) -> Option<f64> {
        match self.family {
            RadiusFamily::Deterministic { r } => Some(r),
            RadiusFamily::Uniform { b, .. } => Some(b),
            _ => None,
        }
    }

    /// One draw; always strictly positive.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let r = match self.family {
                RadiusFamily::Deterministic { r } => return r,
                RadiusFamily::Uniform { a, b } => a + (b - a) * rng.gen::<f64>(),
                RadiusFamily::Exponential { rate } => {
                    Exp::new(rate).expect("validated rate").sample(rng)
                }
                RadiusFamily::Pareto { scale, shape } => {
                    // inverse CDF on (0, 1]
                    let u = 1.0 - rng.gen::<f64>();
                    scale * u.powf(-1.0 / shape)
                }
            };
            if r > 0.0 && r.is_finite() {
                return r;
            }
        }
    }
}

pub fn sample_radius(f: &RadiusDistribution, rng: &mut RandomStream) -> f64 {
    f.sample(rng)
}

/// Analytic truth of the exponential-moment condition for the family.
pub fn mgf_admissible(f: &RadiusDistribution) -> bool {
    f.mgf_exists
}

/// A point of a marked space-time Poisson process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub location: Point,
    pub time: f64,
    pub radius: f64,
    pub uniform_mark: f64,
}

/// Proposal region for thinning: a finite measure on `R^d` (total mass
/// [`Proposal::weight`]) together with a trial that returns a point of the
/// proposal support such that accepted trials are uniform on the support.
///
/// A trial draws from the measure "sum of volumes with multiplicity" and
/// rejects so that each point of the union is kept with intensity one.
pub trait Proposal {
    fn weight(&self) -> f64;
    fn trial(&self, rng: &mut RandomStream) -> Option<Point>;
}

impl Proposal for [Ball] {
    fn weight(&self) -> f64 {
        self.iter().map(Ball::volume).sum()
    }

    fn trial(&self, rng: &mut RandomStream) -> Option<Point> {
        let total = self.weight();
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut j = self.len() - 1;
        for (i, b) in self.iter().enumerate() {
            acc += b.volume();
            if u < acc {
                j = i;
                break;
            }
        }
        let x = self[j].sample(rng);
        let k = self
            .iter()
            .filter(|b| b.contains_unchecked(x.coords()))
            .count()
            .max(1);
        (k == 1 || rng.gen::<f64>() * (k as f64) < 1.0).then_some(x)
    }
}

/// First point after `clock` of a rate-`rate` space-time Poisson process
/// restricted to `{x : region_test(x)}`, generated by thinning a proposal
/// process of intensity `rate` per unit of proposal weight.
///
/// `proposals` must cover the support of `region_test`.
pub fn next_thinned_event<P, T>(
    region_test: T,
    proposals: &P,
    rate: f64,
    clock: f64,
    f: &RadiusDistribution,
    rng: &mut RandomStream,
) -> Result<SpaceTimePoint>
where
    P: Proposal + ?Sized,
    T: FnMut(&Point) -> bool,
{
    next_thinned_event_before(
        region_test,
        proposals,
        rate,
        clock,
        f64::INFINITY,
        f,
        rng,
        MAX_CONSECUTIVE_REJECTIONS,
    )?
    .ok_or_else(|| Error::InvalidParameter("thinning with zero proposal intensity".into()))
}

/// Like [`next_thinned_event`] but gives up (returning `None`) once the
/// candidate clock passes `deadline`. By memorylessness, a caller may redraw
/// from `deadline` later without biasing the process.
#[allow(clippy::too_many_arguments)]
pub fn next_thinned_event_before<P, T>(
    mut region_test: T,
    proposals: &P,
    rate: f64,
    clock: f64,
    deadline: f64,
    f: &RadiusDistribution,
    rng: &mut RandomStream,
    max_rejections: u64,
) -> Result<Option<SpaceTimePoint>>
where
    P: Proposal + ?Sized,
    T: FnMut(&Point) -> bool,
{
    let intensity = rate * proposals.weight();
    if !(intensity > 0.0) || !intensity.is_finite() {
        return Ok(None);
    }
    let mut t = clock;
    let mut rejections = 0u64;
    loop {
        t += rng.exp1() / intensity;
        if t > deadline {
            return Ok(None);
        }
        match proposals.trial(rng) {
            Some(x) if region_test(&x) => {
                let radius = f.sample(rng);
                let uniform_mark = rng.gen::<f64>();
                return Ok(Some(SpaceTimePoint {
                    location: x,
                    time: t,
                    radius,
                    uniform_mark,
                }));
            }
            _ => {
                rejections += 1;
                if rejections >= max_rejections {
                    return Err(Error::RejectionGuard(rejections));
                }
            }
        }
    }
}
