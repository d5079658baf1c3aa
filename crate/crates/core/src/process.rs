//! One-type and two-type continuum growth engines.
//!
//! The infected region is never represented by its boundary. An
//! [`InfectionHistory`] stores the initial balls and the chronological list of
//! outburst balls; a point's state at time `t` is the type of the first shape
//! (initial sets first, then outbursts in order) that contains it among the
//! shapes present at `t`. Later outbursts only infect previously uninfected
//! points, so this first-cover rule reproduces the set-difference updates of
//! the model exactly.
//!
//! Events are generated by thinning a proposal process over the balls of the
//! outbursting type. A trial proposes ball `j` with probability proportional
//! to its volume and a uniform point `x` inside it, and is kept iff `j` is the
//! first shape of the whole history containing `x`. Every point of the
//! type-`i` region is then kept from exactly one proposal ball, which gives
//! both the multiplicity correction and the region test in a single lookup.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{ball_volume, BallSet, Ball, Point, StripeConstraint};
use crate::stochastics::{
    labels, next_thinned_event_before, Proposal, RadiusDistribution, RandomStream,
    SpaceTimePoint, MAX_CONSECUTIVE_REJECTIONS,
};
use crate::{Error, Result};

/// Extra boundary probes per shape used by the per-type norm lower bound.
const NORM_PROBES_PER_SHAPE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InfectionType {
    #[serde(rename = "1")]
    Type1,
    #[serde(rename = "2")]
    Type2,
    #[serde(rename = "single")]
    Single,
}

impl InfectionType {
    fn slot(self) -> usize {
        match self {
            InfectionType::Type1 | InfectionType::Single => 0,
            InfectionType::Type2 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    OneType,
    TwoType,
}

/// One growth event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outburst {
    pub seq: usize,
    pub time: f64,
    pub center: Point,
    pub radius: f64,
    #[serde(rename = "type")]
    pub itype: InfectionType,
    /// Whether the ball reached outside the region infected just before it
    /// (ε-net test, see [`crate::geometry`]).
    pub effective: bool,
}

impl Outburst {
    pub fn ball(&self) -> Ball {
        Ball {
            center: self.center.clone(),
            radius: self.radius,
        }
    }
}

/// Which part of the infected set a norm refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormTarget {
    All,
    Type(InfectionType),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialSets {
    pub type_1: Vec<Ball>,
    pub type_2: Vec<Ball>,
}

impl InitialSets {
    /// `B(-2γ e_1, γ)` for type 1 and `B(0, γ)` for type 2.
    pub fn two_type_default(d: usize, gamma: f64) -> Self {
        Self {
            type_1: vec![Ball {
                center: Point::on_axis(d, 0, -2.0 * gamma),
                radius: gamma,
            }],
            type_2: vec![Ball {
                center: Point::origin(d),
                radius: gamma,
            }],
        }
    }

    /// `B(0, γ)`.
    pub fn one_type_default(d: usize, gamma: f64) -> Self {
        Self {
            type_1: vec![Ball {
                center: Point::origin(d),
                radius: gamma,
            }],
            type_2: Vec::new(),
        }
    }
}

/// Parameters of one growth run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    pub d: usize,
    pub model: Model,
    /// Type-1 intensity; the single intensity λ in one-type runs.
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub radius: RadiusDistribution,
    pub horizon_time: f64,
    pub max_events: usize,
    pub seed: u64,
    pub stripe: StripeConstraint,
    pub covering_resolution: f64,
    /// `None` selects the default initial balls for the model.
    pub initial: Option<InitialSets>,
    /// Permit radius laws without an exponential moment.
    pub allow_inadmissible: bool,
}

impl ProcessConfig {
    pub fn one_type(d: usize, lambda: f64, radius: RadiusDistribution) -> Self {
        Self {
            d,
            model: Model::OneType,
            lambda_1: lambda,
            lambda_2: 0.0,
            covering_resolution: radius.gamma() / 50.0,
            radius,
            horizon_time: 10.0,
            max_events: 1_000_000,
            seed: 0,
            stripe: StripeConstraint::inactive(),
            initial: None,
            allow_inadmissible: false,
        }
    }

    pub fn two_type(d: usize, lambda_1: f64, lambda_2: f64, radius: RadiusDistribution) -> Self {
        Self {
            model: Model::TwoType,
            lambda_2,
            ..Self::one_type(d, lambda_1, radius)
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon_time = horizon;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_events(mut self, n: usize) -> Self {
        self.max_events = n;
        self
    }

    pub fn with_stripe(mut self, stripe: StripeConstraint) -> Self {
        self.stripe = stripe;
        self
    }

    pub fn with_resolution(mut self, resolution: f64) -> Self {
        self.covering_resolution = resolution;
        self
    }

    pub fn with_initial(mut self, initial: InitialSets) -> Self {
        self.initial = Some(initial);
        self
    }

    pub fn gamma(&self) -> f64 {
        self.radius.gamma()
    }

    pub fn initial_sets(&self) -> InitialSets {
        self.initial.clone().unwrap_or_else(|| match self.model {
            Model::OneType => InitialSets::one_type_default(self.d, self.gamma()),
            Model::TwoType => InitialSets::two_type_default(self.d, self.gamma()),
        })
    }

    /// All violated constraints, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.d == 0 {
            out.push("dimension d must be at least 1".to_string());
        }
        let rate_ok = |v: f64| v >= 0.0 && v.is_finite();
        if !rate_ok(self.lambda_1) || !rate_ok(self.lambda_2) {
            out.push("intensities must be nonnegative and finite".to_string());
        }
        match self.model {
            Model::OneType if !(self.lambda_1 > 0.0) => {
                out.push("one-type intensity must be positive".to_string())
            }
            Model::TwoType if !(self.lambda_1 > 0.0 || self.lambda_2 > 0.0) => {
                out.push("both intensities are zero".to_string())
            }
            _ => {}
        }
        if !(self.horizon_time >= 0.0 && self.horizon_time.is_finite()) {
            out.push("horizon must be nonnegative and finite".to_string());
        }
        if self.max_events == 0 {
            out.push("max_events must be positive".to_string());
        }
        if !(self.covering_resolution > 0.0 && self.covering_resolution.is_finite()) {
            out.push("covering_resolution must be positive".to_string());
        }
        if !self.radius.mgf_exists && !self.allow_inadmissible {
            out.push(
                "radius law has no exponential moment (∫ e^{-φr} dF(r) = ∞ for all φ < 0); \
                 set allow_inadmissible = true to run it anyway"
                    .to_string(),
            );
        }
        let init = self.initial_sets();
        let all: Vec<&Ball> = init.type_1.iter().chain(&init.type_2).collect();
        if init.type_1.is_empty() {
            out.push("initial type-1 (or single-type) set is empty".to_string());
        }
        if self.model == Model::TwoType && init.type_2.is_empty() {
            out.push("initial type-2 set is empty".to_string());
        }
        if self.model == Model::OneType && !init.type_2.is_empty() {
            out.push("one-type runs take a single initial set".to_string());
        }
        if all.iter().any(|b| b.dim() != self.d) {
            out.push("initial ball dimension differs from d".to_string());
        }
        if all.iter().any(|b| !(b.radius > 0.0 && b.radius.is_finite())) {
            out.push("initial balls need positive finite radii".to_string());
        }
        for a in &init.type_1 {
            for b in &init.type_2 {
                if a.dim() == b.dim() {
                    let gap = a.center.dist(&b.center) - a.radius - b.radius;
                    if gap < -1e-12 * (a.radius + b.radius) {
                        out.push("initial type-1 and type-2 sets overlap".to_string());
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }
}

/// Per-type proposal list: global shape ids and prefix sums of volumes.
#[derive(Clone, Debug, Default)]
struct TypeList {
    ids: Vec<u32>,
    cum: Vec<f64>,
}

impl TypeList {
    fn push(&mut self, id: usize, volume: f64) {
        let prev = self.cum.last().copied().unwrap_or(0.0);
        self.ids.push(id as u32);
        self.cum.push(prev + volume);
    }

    fn total(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }
}

/// Chronological shape log with first-cover classification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfectionHistory {
    pub model: Model,
    pub d: usize,
    pub initial_1: Vec<Ball>,
    pub initial_2: Vec<Ball>,
    pub outbursts: Vec<Outburst>,
    pub stripe: StripeConstraint,
    #[serde(skip)]
    index: Option<ShapeIndex>,
}

#[derive(Clone, Debug)]
struct ShapeIndex {
    all: BallSet,
    types: Vec<InfectionType>,
    times: Vec<f64>,
    by_type: [TypeList; 2],
}

impl InfectionHistory {
    pub fn new(
        model: Model,
        d: usize,
        initial: &InitialSets,
        stripe: StripeConstraint,
        cell: f64,
    ) -> Self {
        let mut h = Self {
            model,
            d,
            initial_1: initial.type_1.clone(),
            initial_2: initial.type_2.clone(),
            outbursts: Vec::new(),
            stripe,
            index: None,
        };
        h.rebuild_index(cell);
        h
    }

    pub fn from_config(cfg: &ProcessConfig) -> Self {
        Self::new(
            cfg.model,
            cfg.d,
            &cfg.initial_sets(),
            cfg.stripe,
            cfg.gamma(),
        )
    }

    fn initial_type(&self, slot: usize) -> InfectionType {
        match (self.model, slot) {
            (Model::OneType, _) => InfectionType::Single,
            (Model::TwoType, 0) => InfectionType::Type1,
            _ => InfectionType::Type2,
        }
    }

    /// Recomputes the shape index (after deserialization, for instance).
    pub fn rebuild_index(&mut self, cell: f64) {
        let mut idx = ShapeIndex {
            all: BallSet::new(self.d, cell),
            types: Vec::new(),
            times: Vec::new(),
            by_type: Default::default(),
        };
        let init: Vec<(Ball, InfectionType)> = self
            .initial_1
            .iter()
            .map(|b| (b.clone(), self.initial_type(0)))
            .chain(self.initial_2.iter().map(|b| (b.clone(), self.initial_type(1))))
            .collect();
        for (b, t) in init {
            idx.push(b, t, 0.0);
        }
        for o in &self.outbursts {
            idx.push(o.ball(), o.itype, o.time);
        }
        self.index = Some(idx);
    }

    fn idx(&self) -> &ShapeIndex {
        self.index.as_ref().expect("shape index built")
    }

    /// Number of shapes (initial balls plus outbursts).
    pub fn shape_count(&self) -> usize {
        self.idx().types.len()
    }

    pub fn shape(&self, i: usize) -> (&Ball, InfectionType, f64) {
        let idx = self.idx();
        (idx.all.get(i), idx.types[i], idx.times[i])
    }

    pub fn shapes(&self) -> &BallSet {
        &self.idx().all
    }

    /// Number of shapes present at time `t`.
    pub fn shapes_at(&self, t: f64) -> usize {
        self.idx().times.partition_point(|&s| s <= t)
    }

    pub fn last_time(&self) -> f64 {
        self.outbursts.last().map_or(0.0, |o| o.time)
    }

    /// State of `x` at time `t`: the type of the first shape containing it,
    /// `None` if uninfected or outside an active stripe.
    pub fn classify(&self, x: &Point, t: f64) -> Option<InfectionType> {
        self.classify_coords(x.coords(), t)
    }

    pub(crate) fn classify_coords(&self, x: &[f64], t: f64) -> Option<InfectionType> {
        if !self.stripe.contains(x) {
            return None;
        }
        let idx = self.idx();
        let limit = self.shapes_at(t);
        idx.all.first_containing(x, limit).map(|i| idx.types[i])
    }

    /// Whether `x` is infected (any type) at the latest time.
    pub fn is_infected(&self, x: &[f64]) -> bool {
        self.stripe.contains(x) && self.idx().all.first_containing(x, usize::MAX).is_some()
    }

    /// Proposal over the shapes of `itype`, for thinning.
    pub fn proposal(&self, itype: InfectionType) -> TypeProposal<'_> {
        TypeProposal {
            history: self,
            slot: itype.slot(),
        }
    }

    /// Volume sum (with multiplicity) of the shapes of `itype`.
    pub fn proposal_weight(&self, itype: InfectionType) -> f64 {
        self.idx().by_type[itype.slot()].total()
    }

    /// Whether `ball` is ε-net covered by the current shapes (restricted to
    /// the stripe when active).
    pub fn covers(&self, ball: &Ball, resolution: f64) -> bool {
        self.covers_at(ball, f64::INFINITY, resolution)
    }

    pub fn covers_at(&self, ball: &Ball, t: f64, resolution: f64) -> bool {
        let limit = self.shapes_at(t);
        self.idx()
            .all
            .covers(ball, limit, resolution, Some(&self.stripe))
    }

    /// Appends an outburst, evaluating its effectiveness against the shapes
    /// present before it.
    pub fn push_outburst(
        &mut self,
        time: f64,
        center: Point,
        radius: f64,
        itype: InfectionType,
        resolution: f64,
    ) -> &Outburst {
        debug_assert!(time >= self.last_time());
        let ball = Ball { center, radius };
        let effective = !self.covers(&ball, resolution);
        let seq = self.outbursts.len() + 1;
        self.index
            .as_mut()
            .expect("shape index built")
            .push(ball.clone(), itype, time);
        self.outbursts.push(Outburst {
            seq,
            time,
            center: ball.center,
            radius,
            itype,
            effective,
        });
        self.outbursts.last().expect("just pushed")
    }

    /// `sup |x|` over the infected set at time `t`.
    ///
    /// For [`NormTarget::All`] this is exact: the maximum of `|center| +
    /// radius` over the shapes present. For a single type it is a lower bound:
    /// the largest norm among probe points (each shape's outward extreme point
    /// and a few boundary points) that classify as that type.
    pub fn norm_sup(&self, t: f64, target: NormTarget) -> f64 {
        let idx = self.idx();
        let limit = self.shapes_at(t);
        let reach = |i: usize| {
            let b = idx.all.get(i);
            b.center.norm() + b.radius
        };
        match target {
            NormTarget::All => (0..limit).map(reach).fold(0.0, f64::max),
            NormTarget::Type(itype) => {
                let mut order: Vec<usize> = (0..limit).filter(|&i| idx.types[i] == itype).collect();
                order.sort_by(|&a, &b| reach(b).total_cmp(&reach(a)));
                let mut best = 0.0f64;
                let probes = RandomStream::new(0, labels::NORM_PROBES);
                for i in order {
                    if reach(i) <= best {
                        break;
                    }
                    let b = idx.all.get(i);
                    let n = b.center.norm();
                    let outward = if n > 0.0 {
                        b.center.scaled((n + b.radius) / n)
                    } else {
                        b.center.offset(Point::on_axis(self.d, 0, b.radius).coords())
                    };
                    let mut rng = probes.substream(i as u64);
                    let candidates = std::iter::once(outward)
                        .chain((0..NORM_PROBES_PER_SHAPE).map(|_| b.sample_boundary(&mut rng)));
                    for p in candidates {
                        let pn = p.norm();
                        if pn > best && self.classify(&p, t) == Some(itype) {
                            best = pn;
                        }
                    }
                }
                best
            }
        }
    }

    /// `sup{s : B(0, s) ⊂ infected set}` at time `t`, by bisection on the
    /// ε-net coverage test; accurate to `resolution`.
    pub fn norm_star(&self, t: f64, resolution: f64) -> f64 {
        let covered = |s: f64| {
            let b = Ball {
                center: Point::origin(self.d),
                radius: s,
            };
            self.covers_at(&b, t, resolution)
        };
        if !covered(resolution) {
            return 0.0;
        }
        let mut lo = resolution;
        let mut hi = self.norm_sup(t, NormTarget::All).max(lo);
        if covered(hi) {
            return hi;
        }
        while hi - lo > resolution {
            let mid = 0.5 * (lo + hi);
            if covered(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// `sup{s >= 0 : s·u infected at t}` for a unit vector `u`, computed
    /// exactly from ray-ball intersections.
    pub fn ray_extent(&self, u: &[f64], t: f64) -> f64 {
        let idx = self.idx();
        let limit = self.shapes_at(t);
        let stripe_cap = if self.stripe.active {
            u.iter()
                .skip(1)
                .filter(|v| v.abs() > 0.0)
                .map(|v| self.stripe.b / v.abs())
                .fold(f64::INFINITY, f64::min)
        } else {
            f64::INFINITY
        };
        let mut best = 0.0f64;
        for b in &idx.all.balls()[..limit] {
            let c = b.center.coords();
            let uc: f64 = c.iter().zip(u).map(|(a, b)| a * b).sum();
            let c2: f64 = c.iter().map(|v| v * v).sum();
            let disc = uc * uc - c2 + b.radius * b.radius;
            if disc < 0.0 {
                continue;
            }
            let root = disc.sqrt();
            let (lo, hi) = (uc - root, uc + root);
            let lo = lo.max(0.0);
            let hi = hi.min(stripe_cap);
            if hi >= lo && hi > best {
                best = hi;
            }
        }
        best
    }

    /// Writes the outburst log as JSON lines after a header line.
    pub fn write_jsonl<W: Write>(&self, mut w: W, header: &serde_json::Value) -> Result<()> {
        serde_json::to_writer(&mut w, &serde_json::json!({ "header": header }))?;
        w.write_all(b"\n")?;
        for o in &self.outbursts {
            serde_json::to_writer(&mut w, o)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl ShapeIndex {
    fn push(&mut self, ball: Ball, itype: InfectionType, time: f64) {
        let vol = ball.volume();
        let id = self.all.push(ball);
        self.types.push(itype);
        self.times.push(time);
        self.by_type[itype.slot()].push(id, vol);
    }
}

/// Thinning proposal over the shapes of one type, with first-cover
/// acceptance (see the module docs).
pub struct TypeProposal<'a> {
    history: &'a InfectionHistory,
    slot: usize,
}

impl Proposal for TypeProposal<'_> {
    fn weight(&self) -> f64 {
        self.history.idx().by_type[self.slot].total()
    }

    fn trial(&self, rng: &mut RandomStream) -> Option<Point> {
        let idx = self.history.idx();
        let list = &idx.by_type[self.slot];
        let u = rng.gen::<f64>() * list.total();
        let k = list.cum.partition_point(|&c| c <= u).min(list.ids.len() - 1);
        let id = list.ids[k] as usize;
        let x = idx.all.get(id).sample(rng);
        (idx.all.first_containing(x.coords(), usize::MAX) == Some(id)).then_some(x)
    }
}

pub fn classify(h: &InfectionHistory, x: &Point, t: f64) -> Option<InfectionType> {
    h.classify(x, t)
}

pub fn norm_sup(h: &InfectionHistory, t: f64, target: NormTarget) -> f64 {
    h.norm_sup(t, target)
}

pub fn norm_star(h: &InfectionHistory, t: f64, resolution: f64) -> f64 {
    h.norm_star(t, resolution)
}

/// A running growth process: configuration, history and owned streams.
pub struct GrowthProcess {
    cfg: ProcessConfig,
    history: InfectionHistory,
    streams: [RandomStream; 2],
    clock: f64,
    max_rejections: u64,
}

impl GrowthProcess {
    /// Engine on the root stream of replica 0 of `cfg.seed`.
    pub fn new(cfg: ProcessConfig) -> Result<Self> {
        let root = RandomStream::replica(cfg.seed, 0);
        Self::with_stream(cfg, &root)
    }

    /// Engine whose type streams are derived from `root`.
    pub fn with_stream(cfg: ProcessConfig, root: &RandomStream) -> Result<Self> {
        cfg.validate()?;
        let history = InfectionHistory::from_config(&cfg);
        let first = match cfg.model {
            Model::OneType => labels::SINGLE,
            Model::TwoType => labels::TYPE_1,
        };
        Ok(Self {
            streams: [root.substream(first), root.substream(labels::TYPE_2)],
            cfg,
            history,
            clock: 0.0,
            max_rejections: MAX_CONSECUTIVE_REJECTIONS,
        })
    }

    pub fn config(&self) -> &ProcessConfig {
        &self.cfg
    }

    pub fn history(&self) -> &InfectionHistory {
        &self.history
    }

    pub fn into_history(self) -> InfectionHistory {
        self.history
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    fn candidate(
        &mut self,
        itype: InfectionType,
        rate: f64,
        deadline: f64,
    ) -> Result<Option<SpaceTimePoint>> {
        if rate <= 0.0 {
            return Ok(None);
        }
        let stripe = self.history.stripe;
        let proposal = self.history.proposal(itype);
        next_thinned_event_before(
            |x: &Point| stripe.contains(x.coords()),
            &proposal,
            rate,
            self.clock,
            deadline,
            &self.cfg.radius,
            &mut self.streams[itype.slot()],
            self.max_rejections,
        )
    }

    /// Advances to the next outburst if it happens no later than `deadline`;
    /// otherwise moves the clock to `deadline` and returns `None`.
    pub fn step_until(&mut self, deadline: f64) -> Result<Option<&Outburst>> {
        if self.history.outbursts.len() >= self.cfg.max_events {
            return Err(Error::Explosion {
                events: self.history.outbursts.len(),
                time: self.clock,
            });
        }
        let winner = match self.cfg.model {
            Model::OneType => self
                .candidate(InfectionType::Single, self.cfg.lambda_1, deadline)?
                .map(|p| (p, InfectionType::Single)),
            Model::TwoType => {
                let c1 = self.candidate(InfectionType::Type1, self.cfg.lambda_1, deadline)?;
                let cutoff = c1.as_ref().map_or(deadline, |p| p.time);
                let c2 = self.candidate(InfectionType::Type2, self.cfg.lambda_2, cutoff)?;
                match (c1, c2) {
                    (Some(a), Some(b)) if a.time == b.time => return Err(Error::CandidateTie(a.time)),
                    (_, Some(b)) => Some((b, InfectionType::Type2)),
                    (Some(a), None) => Some((a, InfectionType::Type1)),
                    (None, None) => None,
                }
            }
        };
        match winner {
            None => {
                if deadline.is_finite() {
                    self.clock = self.clock.max(deadline);
                }
                Ok(None)
            }
            Some((p, itype)) => {
                self.clock = p.time;
                let res = self.cfg.covering_resolution;
                Ok(Some(
                    self.history
                        .push_outburst(p.time, p.location, p.radius, itype, res),
                ))
            }
        }
    }

    pub fn step(&mut self) -> Result<&Outburst> {
        Ok(self
            .step_until(f64::INFINITY)?
            .expect("positive intensity always produces an event"))
    }

    /// Steps until the next event would fall after `horizon`.
    pub fn run_until(&mut self, horizon: f64) -> Result<()> {
        while self.step_until(horizon)?.is_some() {}
        Ok(())
    }
}

/// Runs `cfg` on replica 0 of its seed up to its horizon.
pub fn run_until(cfg: &ProcessConfig) -> Result<InfectionHistory> {
    let mut p = GrowthProcess::new(cfg.clone())?;
    p.run_until(cfg.horizon_time)?;
    Ok(p.into_history())
}

/// Expected initial event rate `λ_i |S_0^i|` when the initial balls of each
/// type are disjoint.
pub fn initial_rate(cfg: &ProcessConfig, itype: InfectionType) -> f64 {
    let init = cfg.initial_sets();
    let (balls, rate) = match itype {
        InfectionType::Type2 => (&init.type_2, cfg.lambda_2),
        _ => (&init.type_1, cfg.lambda_1),
    };
    rate * balls.iter().map(|b| ball_volume(b.dim(), b.radius)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[f64]) -> Point {
        Point::new(c.iter().copied()).unwrap()
    }

    fn det(r: f64) -> RadiusDistribution {
        RadiusDistribution::deterministic(r).unwrap()
    }

    #[test]
    fn default_initials_classify() {
        let cfg = ProcessConfig::two_type(2, 1.0, 1.0, det(1.0));
        let h = InfectionHistory::from_config(&cfg);
        assert_eq!(h.classify(&pt(&[0.0, 0.0]), 0.0), Some(InfectionType::Type2));
        assert_eq!(h.classify(&pt(&[-2.0, 0.0]), 0.0), Some(InfectionType::Type1));
        assert_eq!(h.classify(&pt(&[10.0, 10.0]), 5.0), None);
        assert!((h.norm_sup(0.0, NormTarget::All) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn first_cover_rule() {
        let cfg = ProcessConfig::two_type(2, 1.0, 1.0, det(1.0));
        let mut h = InfectionHistory::from_config(&cfg);
        let x = pt(&[0.0, 5.0]);
        h.push_outburst(1.0, pt(&[0.0, 4.5]), 1.0, InfectionType::Type1, 0.02);
        h.push_outburst(2.0, pt(&[0.0, 5.5]), 1.0, InfectionType::Type2, 0.02);
        assert_eq!(h.classify(&x, 0.5), None);
        assert_eq!(h.classify(&x, 1.5), Some(InfectionType::Type1));
        assert_eq!(h.classify(&x, 3.0), Some(InfectionType::Type1));
        assert_eq!(h.classify(&pt(&[0.0, 6.2]), 3.0), Some(InfectionType::Type2));
        assert_eq!(h.shapes_at(1.5), 3);
    }

    #[test]
    fn effectiveness_against_initial_ball() {
        let g = 1.0;
        let cfg = ProcessConfig::one_type(2, 1.0, det(g));
        let mut h = InfectionHistory::from_config(&cfg);
        let o = h.push_outburst(0.1, pt(&[0.0, 0.0]), g / 2.0, InfectionType::Single, g / 50.0);
        assert!(!o.effective);
        let o = h.push_outburst(0.2, pt(&[0.0, 0.0]), 2.0 * g, InfectionType::Single, g / 50.0);
        assert!(o.effective);
    }

    #[test]
    fn norms_of_simple_histories() {
        let g = 1.5;
        let cfg = ProcessConfig::one_type(2, 1.0, det(g));
        let mut h = InfectionHistory::from_config(&cfg);
        assert!((h.norm_sup(0.0, NormTarget::Type(InfectionType::Single)) - g).abs() < 1e-12);
        assert!((h.norm_sup(0.0, NormTarget::All) - g).abs() < 1e-12);
        let res = g / 50.0;
        let s = h.norm_star(0.0, res);
        assert!((s - g).abs() <= res, "{s}");
        h.push_outburst(1.0, pt(&[0.0, 0.0]), 3.0 * g, InfectionType::Single, res);
        let s = h.norm_star(1.0, res);
        assert!((s - 3.0 * g).abs() <= res, "{s}");
        assert!((h.norm_star(0.5, res) - g).abs() <= res);
        assert!((h.ray_extent(&[0.6, 0.8], 1.0) - 3.0 * g).abs() < 1e-12);
        assert!((h.ray_extent(&[1.0, 0.0], 0.0) - g).abs() < 1e-12);

        let cfg = ProcessConfig::two_type(2, 1.0, 1.0, det(g));
        let mut h = InfectionHistory::from_config(&cfg);
        h.push_outburst(0.5, pt(&[-3.0 * g, 0.0]), g, InfectionType::Type1, res);
        assert!((h.norm_sup(1.0, NormTarget::Type(InfectionType::Type2)) - g).abs() < 1e-12);
        assert!((h.norm_sup(1.0, NormTarget::Type(InfectionType::Type1)) - 4.0 * g).abs() < 1e-12);
    }

    #[test]
    fn stripe_makes_points_immune() {
        let stripe = StripeConstraint::new(1.0).unwrap();
        let cfg = ProcessConfig::one_type(2, 1.0, det(1.0)).with_stripe(stripe);
        let mut h = InfectionHistory::from_config(&cfg);
        h.push_outburst(1.0, pt(&[0.0, 0.5]), 3.0, InfectionType::Single, 0.02);
        assert_eq!(h.classify(&pt(&[0.0, 1.5]), 2.0), None);
        assert_eq!(h.classify(&pt(&[2.0, 0.9]), 2.0), Some(InfectionType::Single));
        assert!((h.ray_extent(&[0.0, 1.0], 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_keeps_initials() {
        let cfg = ProcessConfig::one_type(2, 1.0, det(1.0)).with_horizon(0.0);
        let h = run_until(&cfg).unwrap();
        assert!(h.outbursts.is_empty());
        assert_eq!(h.shape_count(), 1);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = ProcessConfig::two_type(2, 1.0, 0.7, det(1.0))
            .with_horizon(2.5)
            .with_seed(42);
        let a = run_until(&cfg).unwrap();
        let b = run_until(&cfg).unwrap();
        assert!(!a.outbursts.is_empty());
        assert_eq!(a.outbursts, b.outbursts);
        let c = run_until(&cfg.clone().with_seed(43)).unwrap();
        assert_ne!(a.outbursts, c.outbursts);
    }

    #[test]
    fn zero_rate_type_never_fires() {
        let cfg = ProcessConfig::two_type(2, 1.0, 0.0, det(1.0)).with_horizon(3.0);
        let h = run_until(&cfg).unwrap();
        assert!(!h.outbursts.is_empty());
        assert!(h.outbursts.iter().all(|o| o.itype == InfectionType::Type1));
    }

    #[test]
    fn outbursts_start_in_their_own_region() {
        let cfg = ProcessConfig::two_type(2, 1.0, 1.0, det(1.0))
            .with_horizon(3.0)
            .with_seed(5);
        let h = run_until(&cfg).unwrap();
        let mut prev = 0.0;
        for o in &h.outbursts {
            assert!(o.time > prev);
            prev = o.time;
            let before = o.time - 1e-12;
            assert_eq!(h.classify(&o.center, before), Some(o.itype));
        }
    }

    #[test]
    fn explosion_guard() {
        let cfg = ProcessConfig::one_type(2, 1.0, det(1.0))
            .with_horizon(100.0)
            .with_max_events(5);
        assert!(matches!(run_until(&cfg), Err(Error::Explosion { events: 5, .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProcessConfig::two_type(2, 0.0, 0.0, det(1.0));
        assert!(cfg.validate().is_err());
        cfg.lambda_1 = 1.0;
        assert!(cfg.validate().is_ok());
        let p = RadiusDistribution::pareto(1.0, 3.0).unwrap();
        let mut cfg = ProcessConfig::one_type(2, 1.0, p);
        assert!(cfg.validate().is_err());
        cfg.allow_inadmissible = true;
        assert!(cfg.validate().is_ok());
        let overlapping = InitialSets {
            type_1: vec![Ball::new(pt(&[0.5, 0.0]), 1.0).unwrap()],
            type_2: vec![Ball::new(pt(&[0.0, 0.0]), 1.0).unwrap()],
        };
        let cfg = ProcessConfig::two_type(2, 1.0, 1.0, det(1.0)).with_initial(overlapping);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn jsonl_export_is_stable() {
        let cfg = ProcessConfig::two_type(2, 1.0, 1.0, det(1.0))
            .with_horizon(1.5)
            .with_seed(3);
        let h = run_until(&cfg).unwrap();
        let header = serde_json::json!({"seed": 3});
        let mut a = Vec::new();
        h.write_jsonl(&mut a, &header).unwrap();
        let mut b = Vec::new();
        run_until(&cfg).unwrap().write_jsonl(&mut b, &header).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("{\"header\""));
        if let Some(line) = lines.next() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["seq", "time", "type", "center", "radius", "effective"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
        }
    }
}
