//! Branching random walk growth process with cube-shaped outbursts.
//!
//! Every individual owns an independent unit-rate space-time Poisson process;
//! restricted to its cube `C(X, 2R)` this gives births at rate `(2R)^d`, each
//! child placed uniformly in the cube with an independent radius from `F`.
//! The population is simulated with a heap of per-individual next birth
//! times. Individual streams are stored as `(stream id, word position)` and
//! reopened on demand, so memory stays flat in the population size.
//!
//! The second half of the module evaluates the Laplace transform of the
//! projected reproduction measure and its root `α(φ)`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Cube, Point};
use crate::stats::EstimateResult;
use crate::stochastics::{
    derive_stream_id, labels, RadiusDistribution, RadiusFamily, RandomStream,
};
use crate::{Error, Result};

/// How the ancestor's half-side is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AncestorMode {
    /// Half-side `γ`, the cube `C(0, 2γ)`.
    Deterministic,
    /// Half-side drawn from `F`, like every other individual.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrwConfig {
    pub d: usize,
    pub radius: RadiusDistribution,
    pub ancestor: AncestorMode,
    pub population_cap: usize,
    /// Permutes the assignment of streams to individual indices.
    pub label_salt: u64,
}

impl BrwConfig {
    pub fn new(d: usize, radius: RadiusDistribution) -> Self {
        Self {
            d,
            radius,
            ancestor: AncestorMode::Deterministic,
            population_cap: 1_000_000,
            label_salt: 0,
        }
    }

    pub fn with_ancestor(mut self, mode: AncestorMode) -> Self {
        self.ancestor = mode;
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.population_cap = cap;
        self
    }

    pub fn with_salt(mut self, salt: u64) -> Self {
        self.label_salt = salt;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub birth_time: f64,
    pub center: Point,
    pub half_side: f64,
    pub parent: Option<usize>,
    /// Id of the individual's own stream (under the population seed).
    pub stream_id: u64,
}

impl Individual {
    pub fn cube(&self) -> Cube {
        Cube {
            center: self.center.clone(),
            half_side: self.half_side,
        }
    }

    /// Birth rate `(2R)^d`.
    pub fn rate(&self) -> f64 {
        (2.0 * self.half_side).powi(self.center.dim() as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct HeapKey(f64);

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// A BRW population evolving in time.
#[derive(Clone, Debug)]
pub struct BrwPopulation {
    cfg: BrwConfig,
    seed: u64,
    base_stream: u64,
    pub individuals: Vec<Individual>,
    /// Saved word positions of the individual streams.
    positions: Vec<u128>,
    heap: BinaryHeap<Reverse<(HeapKey, u32)>>,
    clock: f64,
    truncated: bool,
}

impl BrwPopulation {
    /// Population with a single ancestor at the origin; all randomness flows
    /// from `root`.
    pub fn new(cfg: BrwConfig, root: &RandomStream) -> Result<Self> {
        if cfg.d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if cfg.population_cap == 0 {
            return Err(Error::InvalidParameter("population cap must be positive".into()));
        }
        let half_side = match cfg.ancestor {
            AncestorMode::Deterministic => cfg.radius.gamma(),
            AncestorMode::Random => cfg.radius.sample(&mut root.substream(labels::BRW_ANCESTOR)),
        };
        let mut pop = Self {
            seed: root.seed(),
            base_stream: derive_stream_id(root.stream_id(), labels::BRW),
            cfg,
            individuals: Vec::new(),
            positions: Vec::new(),
            heap: BinaryHeap::new(),
            clock: 0.0,
            truncated: false,
        };
        pop.add(0.0, Point::origin(pop.cfg.d), half_side, None);
        Ok(pop)
    }

    /// Stream id of individual `index`.
    pub fn stream_id_of(&self, index: usize) -> u64 {
        derive_stream_id(self.base_stream, index as u64 ^ self.cfg.label_salt)
    }

    fn add(&mut self, time: f64, center: Point, half_side: f64, parent: Option<usize>) {
        let index = self.individuals.len();
        let stream_id = self.stream_id_of(index);
        let ind = Individual {
            birth_time: time,
            center,
            half_side,
            parent,
            stream_id,
        };
        let mut s = RandomStream::new(self.seed, stream_id);
        let next = time + s.exp1() / ind.rate();
        self.positions.push(s.position());
        self.heap.push(Reverse((HeapKey(next), index as u32)));
        self.individuals.push(ind);
    }

    pub fn config(&self) -> &BrwConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Whether growth stopped at the population cap.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Time of the next birth.
    pub fn next_time(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |Reverse((k, _))| k.0)
    }

    /// Performs the next birth if it happens no later than `deadline`.
    /// Returns `None` (and moves the clock to `deadline`) otherwise, or when
    /// the population cap has been reached.
    pub fn step_until(&mut self, deadline: f64) -> Option<&Individual> {
        if self.individuals.len() >= self.cfg.population_cap {
            self.truncated = true;
            return None;
        }
        let Reverse((HeapKey(t), idx)) = *self.heap.peek()?;
        if t > deadline {
            if deadline.is_finite() {
                self.clock = self.clock.max(deadline);
            }
            return None;
        }
        self.heap.pop();
        let parent = idx as usize;
        let mut s = RandomStream::at_position(
            self.seed,
            self.individuals[parent].stream_id,
            self.positions[parent],
        );
        let cube = self.individuals[parent].cube();
        let center = cube.sample(&mut s);
        let radius = self.cfg.radius.sample(&mut s);
        let next = t + s.exp1() / self.individuals[parent].rate();
        self.positions[parent] = s.position();
        self.heap.push(Reverse((HeapKey(next), idx)));
        self.clock = t;
        self.add(t, center, radius, Some(parent));
        self.individuals.last()
    }

    pub fn step(&mut self) -> Option<&Individual> {
        self.step_until(f64::INFINITY)
    }

    /// Runs until the next birth would fall after `horizon` or the cap is hit.
    pub fn run_until(&mut self, horizon: f64) {
        while self.step_until(horizon).is_some() {}
    }

    /// Number of individuals born by time `t`.
    pub fn born_by(&self, t: f64) -> usize {
        self.individuals.partition_point(|i| i.birth_time <= t)
    }

    /// `max (center[axis] + half_side)` over individuals born by `t`.
    pub fn rightmost(&self, t: f64, axis: usize) -> f64 {
        assert!(axis < self.cfg.d, "axis out of range");
        self.individuals[..self.born_by(t)]
            .iter()
            .map(|i| i.center.coords()[axis] + i.half_side)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `-min (center[axis] - half_side)`, the mirrored leftmost extent.
    pub fn leftmost(&self, t: f64, axis: usize) -> f64 {
        assert!(axis < self.cfg.d, "axis out of range");
        -self.individuals[..self.born_by(t)]
            .iter()
            .map(|i| i.center.coords()[axis] - i.half_side)
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether `x` lies in some cube born by `t`.
    pub fn covers(&self, x: &[f64], t: f64) -> bool {
        self.individuals[..self.born_by(t)]
            .iter()
            .any(|i| i.cube().contains_unchecked(x))
    }

    /// Individuals as JSON lines after a header line.
    pub fn write_jsonl<W: Write>(&self, mut w: W, header: &serde_json::Value) -> Result<()> {
        serde_json::to_writer(&mut w, &serde_json::json!({ "header": header }))?;
        w.write_all(b"\n")?;
        for (seq, ind) in self.individuals.iter().enumerate() {
            let line = serde_json::json!({
                "seq": seq,
                "time": ind.birth_time,
                "center": ind.center,
                "half_side": ind.half_side,
                "parent": ind.parent,
            });
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn brw_step(pop: &mut BrwPopulation) -> Option<&Individual> {
    pop.step()
}

pub fn rightmost(pop: &BrwPopulation, t: f64, axis: usize) -> f64 {
    pop.rightmost(t, axis)
}

/// `H_T / T` on axis 0 for one replica, with the half-horizon value and the
/// cap flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZetaSample {
    pub full: f64,
    pub half: f64,
    pub truncated: bool,
}

/// One BRW replica observed at `horizon` and `horizon / 2`. A capped run is
/// observed at the time it stopped.
pub fn zeta_sample(cfg: &BrwConfig, horizon: f64, root: &RandomStream) -> Result<ZetaSample> {
    let mut pop = BrwPopulation::new(cfg.clone(), root)?;
    pop.run_until(horizon);
    let reached = if pop.truncated() { pop.clock() } else { horizon };
    let half = 0.5 * reached;
    Ok(ZetaSample {
        full: pop.rightmost(reached, 0) / reached,
        half: pop.rightmost(half, 0) / half,
        truncated: pop.truncated(),
    })
}

/// Mean and CI of `H_T / T` over `replicas` independent populations (replica
/// `i` runs on `RandomStream::replica(seed, i)`). Diagnostics: the
/// half-horizon estimate and the fraction of capped replicas.
pub fn estimate_zeta(
    cfg: &BrwConfig,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<EstimateResult> {
    if !(horizon > 0.0 && horizon.is_finite()) || replicas == 0 {
        return Err(Error::InvalidParameter(
            "estimate_zeta needs a positive horizon and replicas".into(),
        ));
    }
    if !cfg.radius.mgf_exists {
        return Err(Error::InvalidDistribution(
            "BRW speed needs a radius law with an exponential moment".into(),
        ));
    }
    let samples: Vec<ZetaSample> = (0..replicas)
        .into_par_iter()
        .map(|i| zeta_sample(cfg, horizon, &RandomStream::replica(seed, i as u64)))
        .collect::<Result<_>>()?;
    let full: Vec<f64> = samples.iter().map(|s| s.full).collect();
    let half: Vec<f64> = samples.iter().map(|s| s.half).collect();
    let half_est = EstimateResult::from_samples(&half);
    let capped = samples.iter().filter(|s| s.truncated).count() as f64 / replicas as f64;
    Ok(EstimateResult::from_samples(&full)
        .with_diagnostic("half_horizon_point", half_est.point)
        .with_diagnostic("half_horizon_se", half_est.standard_error())
        .with_diagnostic("truncated_fraction", capped))
}

/// Value of the Laplace transform, or divergence of the radius integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Laplace {
    Finite(f64),
    Divergent,
}

impl Laplace {
    /// The value, `+∞` when divergent.
    pub fn value(self) -> f64 {
        match self {
            Laplace::Finite(v) => v,
            Laplace::Divergent => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Laplace::Finite(_))
    }
}

const QUAD_TOL: f64 = 1e-12;

/// `(2r)^{d-1} (1 - e^{-2φr})`, the `r`-integrand up to the `1/(φφ̂)` factor.
fn kernel(phi: f64, r: f64, d: usize) -> f64 {
    (2.0 * r).powi(d as i32 - 1) * -(-2.0 * phi * r).exp_m1()
}

/// Whether `∫ (2r)^{d-1} (1 - e^{-2φr}) dF(r)` diverges.
pub fn radius_integral_diverges(phi: f64, f: &RadiusDistribution, d: usize) -> bool {
    match f.family {
        RadiusFamily::Deterministic { .. } | RadiusFamily::Uniform { .. } => false,
        RadiusFamily::Exponential { rate } => 2.0 * phi + rate <= 0.0,
        RadiusFamily::Pareto { shape, .. } => phi < 0.0 || shape <= (d as f64 - 1.0),
    }
}

/// `∫_a^∞ g`, through the substitution `r = a + s / (1 - s)`.
fn integrate_tail(g: impl Fn(f64) -> f64, a: f64) -> f64 {
    quadrature::double_exponential::integrate(
        |s| {
            let w = 1.0 - s;
            g(a + s / w) / (w * w)
        },
        0.0,
        1.0,
        QUAD_TOL,
    )
    .integral
}

/// `∫ h(r) dF(r)` for the absolutely continuous families, by quadrature; the
/// point mass is evaluated directly.
fn expect_over_radius(f: &RadiusDistribution, h: impl Fn(f64) -> f64) -> f64 {
    match f.family {
        RadiusFamily::Deterministic { r } => h(r),
        RadiusFamily::Uniform { a, b } => {
            quadrature::double_exponential::integrate(&h, a, b, QUAD_TOL).integral / (b - a)
        }
        RadiusFamily::Exponential { rate } => {
            integrate_tail(|r| h(r) * rate * (-rate * r).exp(), 0.0)
        }
        RadiusFamily::Pareto { scale, shape } => integrate_tail(
            |r| h(r) * shape * scale.powf(shape) / r.powf(shape + 1.0),
            scale,
        ),
    }
}

/// `I(φ) = ∫ (2r)^{d-1} (1 - e^{-2φr}) dF(r)`.
fn radius_integral(phi: f64, f: &RadiusDistribution, d: usize) -> Laplace {
    if radius_integral_diverges(phi, f, d) {
        return Laplace::Divergent;
    }
    Laplace::Finite(expect_over_radius(f, |r| kernel(phi, r, d)))
}

fn check_phi(phi: f64) -> Result<()> {
    if phi == 0.0 || !phi.is_finite() {
        return Err(Error::InvalidParameter(format!("φ must be finite and nonzero, got {phi}")));
    }
    Ok(())
}

/// `m(φ, φ̂) = (φφ̂)^{-1} ∫ (2r)^{d-1} (1 - e^{-2φr}) dF(r)`; closed form for a
/// point mass and double-exponential quadrature otherwise.
pub fn laplace_m(phi: f64, phihat: f64, f: &RadiusDistribution, d: usize) -> Result<Laplace> {
    check_phi(phi)?;
    if !(phihat > 0.0 && phihat.is_finite()) {
        return Err(Error::InvalidParameter(format!("φ̂ must be positive, got {phihat}")));
    }
    Ok(match radius_integral(phi, f, d) {
        Laplace::Finite(i) => Laplace::Finite(i / (phi * phihat)),
        Laplace::Divergent => Laplace::Divergent,
    })
}

/// `m(φ, φ̂)` computed straight from the reproduction measure: the double
/// integral `∫_0^∞ ∫_0^{2r} (2r)^{d-1} e^{-φx - φ̂t} dx dt` by nested
/// quadrature, then averaged over `F`. Independent of the closed form and
/// used to cross-check it.
pub fn laplace_m_numeric(
    phi: f64,
    phihat: f64,
    f: &RadiusDistribution,
    d: usize,
) -> Result<Laplace> {
    check_phi(phi)?;
    if radius_integral_diverges(phi, f, d) {
        return Ok(Laplace::Divergent);
    }
    let time_part = integrate_tail(|t| (-phihat * t).exp(), 0.0);
    let m_r = |r: f64| {
        let space = quadrature::double_exponential::integrate(
            |x| (2.0 * r).powi(d as i32 - 1) * (-phi * x).exp(),
            0.0,
            2.0 * r,
            QUAD_TOL,
        )
        .integral;
        space * time_part
    };
    Ok(Laplace::Finite(expect_over_radius(f, m_r)))
}

/// The explicit root `α(φ) = φ^{-1} ∫ (2r)^{d-1} (1 - e^{-2φr}) dF(r)`,
/// `+∞` when the integral diverges.
pub fn alpha_explicit(phi: f64, f: &RadiusDistribution, d: usize) -> Result<f64> {
    check_phi(phi)?;
    Ok(match radius_integral(phi, f, d) {
        Laplace::Finite(i) => i / phi,
        Laplace::Divergent => f64::INFINITY,
    })
}

/// `α(φ) = inf{φ̂ : m(φ, φ̂) <= 1}`, found by bisection on `φ̂`.
pub fn alpha(phi: f64, f: &RadiusDistribution, d: usize) -> Result<f64> {
    check_phi(phi)?;
    let i = match radius_integral(phi, f, d) {
        Laplace::Finite(i) => i,
        Laplace::Divergent => return Ok(f64::INFINITY),
    };
    let m = |phihat: f64| i / (phi * phihat);
    let mut hi = 1.0;
    while m(hi) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = hi;
    while m(lo) <= 1.0 {
        lo *= 0.5;
    }
    for _ in 0..400 {
        if hi - lo <= 1e-13 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if m(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
