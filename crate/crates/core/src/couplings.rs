//! Coupled constructions with pathwise certificates.
//!
//! Each construction drives several processes from shared Poisson streams and
//! checks, at every event, the inclusion the coupling is supposed to
//! guarantee. Checks compare exact event points and audit points drawn
//! uniformly from the smaller region; point classification is exact, so a
//! failed check means a bug, never bad luck.
//!
//! * [`couple_two_type_vs_one_type`]: type-2 region inside a one-type process.
//! * [`couple_one_type_vs_two_type_union`]: one-type process inside the union
//!   of both types.
//! * [`couple_one_type_vs_brw`]: one-type process inside the BRW cubes.
//! * [`couple_lambda_family`]: two-type processes for several `λ` sharing
//!   streams, with mark thinning for type 2.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::geometry::{Ball, BallSet, Cube, Point, SpatialGrid, StripeConstraint};
use crate::process::{InfectionHistory, InfectionType, InitialSets, Model, NormTarget};
use crate::stochastics::{
    labels, next_thinned_event_before, Proposal, RadiusDistribution, RandomStream,
    SpaceTimePoint, MAX_CONSECUTIVE_REJECTIONS,
};
use crate::{Error, Result};

/// Parameters shared by all constructions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingConfig {
    pub d: usize,
    pub radius: RadiusDistribution,
    pub horizon: f64,
    /// Audit points drawn per event.
    pub audit_points: usize,
    pub covering_resolution: f64,
    pub max_events: usize,
    /// Population cap of the BRW member.
    pub brw_cap: usize,
}

impl CouplingConfig {
    pub fn new(d: usize, radius: RadiusDistribution, horizon: f64) -> Self {
        Self {
            d,
            covering_resolution: radius.gamma() / 50.0,
            radius,
            horizon,
            audit_points: 1000,
            max_events: 1_000_000,
            brw_cap: 200_000,
        }
    }

    pub fn with_audit_points(mut self, m: usize) -> Self {
        self.audit_points = m;
        self
    }

    pub fn with_brw_cap(mut self, cap: usize) -> Self {
        self.brw_cap = cap;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter("coupling horizon must be finite".into()));
        }
        if !(self.covering_resolution > 0.0) || self.max_events == 0 || self.brw_cap == 0 {
            return Err(Error::InvalidParameter(
                "resolution, max_events and brw_cap must be positive".into(),
            ));
        }
        Ok(())
    }

    fn history(&self, model: Model, initial: &InitialSets) -> InfectionHistory {
        InfectionHistory::new(
            model,
            self.d,
            initial,
            StripeConstraint::inactive(),
            self.radius.gamma(),
        )
    }

    fn origin_ball(&self) -> Ball {
        Ball {
            center: Point::origin(self.d),
            radius: self.radius.gamma(),
        }
    }
}

/// One pathwise check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateRecord {
    pub event_seq: usize,
    pub time: f64,
    pub check_name: String,
    pub pass: bool,
}

/// Which stream feeds which member.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamUse {
    pub stream: String,
    pub rate: f64,
    pub consumers: Vec<String>,
}

/// The BRW member of a coupling: cubes in birth order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BrwTrace {
    pub cubes: Vec<Cube>,
    pub birth_times: Vec<f64>,
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct CoupledTrace {
    pub construction: String,
    pub histories: BTreeMap<String, InfectionHistory>,
    pub brw: Option<BrwTrace>,
    pub shared_streams: Vec<StreamUse>,
    pub certificates: Vec<CertificateRecord>,
    /// Reported numbers (norms, audit counts, horizon reached).
    pub statistics: BTreeMap<String, f64>,
}

impl CoupledTrace {
    fn new(construction: &str) -> Self {
        Self {
            construction: construction.to_string(),
            histories: BTreeMap::new(),
            brw: None,
            shared_streams: Vec::new(),
            certificates: Vec::new(),
            statistics: BTreeMap::new(),
        }
    }

    fn check(&mut self, event_seq: usize, time: f64, name: &str, pass: bool) {
        self.certificates.push(CertificateRecord {
            event_seq,
            time,
            check_name: name.to_string(),
            pass,
        });
    }

    pub fn all_pass(&self) -> bool {
        self.certificates.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CertificateRecord> {
        self.certificates.iter().filter(|c| !c.pass)
    }

    /// `Err` with the first failed check, if any.
    pub fn verify(&self) -> Result<()> {
        match self.failures().next() {
            None => Ok(()),
            Some(c) => Err(Error::CertificateViolation {
                check: format!("{}: {}", self.construction, c.check_name),
                event_seq: c.event_seq,
                time: c.time,
            }),
        }
    }

    /// Certificate log as CSV `event_seq,time,check_name,pass`.
    pub fn write_certificates_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "event_seq,time,check_name,pass")?;
        }
        for c in &self.certificates {
            writeln!(w, "{},{},{},{}", c.event_seq, c.time, c.check_name, c.pass)?;
        }
        Ok(())
    }
}

/// Unit-intensity proposal over the union of an append-only ball collection,
/// kept from the lowest-index containing ball.
struct ShapeUnion {
    set: BallSet,
}

impl ShapeUnion {
    fn new(d: usize, cell: f64) -> Self {
        Self {
            set: BallSet::new(d, cell),
        }
    }

    fn push(&mut self, b: Ball) {
        self.set.push(b);
    }
}

impl Proposal for ShapeUnion {
    fn weight(&self) -> f64 {
        self.set.volume_sum(usize::MAX)
    }

    fn trial(&self, rng: &mut RandomStream) -> Option<Point> {
        let j = self.set.sample_index(rng, usize::MAX);
        let x = self.set.get(j).sample(rng);
        (self.set.first_containing(x.coords(), usize::MAX) == Some(j)).then_some(x)
    }
}

/// Cubes with a grid index, for first-container lookups.
struct CubeSet {
    cubes: Vec<Cube>,
    cum: Vec<f64>,
    grid: SpatialGrid,
}

impl CubeSet {
    fn new(d: usize, cell: f64) -> Self {
        Self {
            cubes: Vec::new(),
            cum: Vec::new(),
            grid: SpatialGrid::new(d, cell),
        }
    }

    fn push(&mut self, c: Cube) {
        let id = self.cubes.len() as u32;
        self.grid.insert(id, c.center.coords(), c.half_side);
        let prev = self.cum.last().copied().unwrap_or(0.0);
        self.cum.push(prev + c.volume());
        self.cubes.push(c);
    }

    fn total(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    fn sample_index(&self, rng: &mut RandomStream) -> usize {
        let u = rng.gen::<f64>() * self.total();
        self.cum.partition_point(|&c| c <= u).min(self.cubes.len() - 1)
    }

    fn first_containing(&self, x: &[f64]) -> Option<usize> {
        let (cell, big) = self.grid.point_candidates(x);
        let a = cell
            .iter()
            .map(|&i| i as usize)
            .find(|&i| self.cubes[i].contains_unchecked(x));
        let b = big
            .iter()
            .map(|&i| i as usize)
            .find(|&i| self.cubes[i].contains_unchecked(x));
        match (a, b) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// `m` points uniform on the `itype` region of `h` at its latest time.
fn audit_sample(
    h: &InfectionHistory,
    itype: InfectionType,
    m: usize,
    rng: &mut RandomStream,
) -> Result<Vec<Point>> {
    let proposal = h.proposal(itype);
    let mut out = Vec::with_capacity(m);
    let mut misses = 0u64;
    while out.len() < m {
        match proposal.trial(rng) {
            Some(x) => out.push(x),
            None => {
                misses += 1;
                if misses >= MAX_CONSECUTIVE_REJECTIONS {
                    return Err(Error::RejectionGuard(misses));
                }
            }
        }
    }
    Ok(out)
}

/// Draws from two competing thinned streams; the later candidate is
/// discarded. Returns the winner and its index.
#[allow(clippy::too_many_arguments)]
fn race<P1: Proposal + ?Sized, P2: Proposal + ?Sized>(
    a: (&P1, f64, &mut RandomStream),
    b: (&P2, f64, &mut RandomStream),
    clock: f64,
    deadline: f64,
    f: &RadiusDistribution,
) -> Result<Option<(SpaceTimePoint, usize)>> {
    let ca = if a.1 > 0.0 {
        next_thinned_event_before(|_| true, a.0, a.1, clock, deadline, f, a.2, MAX_CONSECUTIVE_REJECTIONS)?
    } else {
        None
    };
    let cut = ca.as_ref().map_or(deadline, |p| p.time);
    let cb = if b.1 > 0.0 {
        next_thinned_event_before(|_| true, b.0, b.1, clock, cut, f, b.2, MAX_CONSECUTIVE_REJECTIONS)?
    } else {
        None
    };
    match (ca, cb) {
        (Some(x), Some(y)) if x.time == y.time => Err(Error::CandidateTie(x.time)),
        (_, Some(y)) => Ok(Some((y, 1))),
        (Some(x), None) => Ok(Some((x, 0))),
        (None, None) => Ok(None),
    }
}

fn guard(events: usize, cc: &CouplingConfig, time: f64) -> Result<()> {
    if events >= cc.max_events {
        return Err(Error::Explosion { events, time });
    }
    Ok(())
}

/// Rate-`λ` one-type process from `B(0, γ)` and the two-type `(1, λ)`
/// process with default initial sets. One rate-`λ` stream `N2`, generated
/// over the one-type region, gives every one-type outburst and, for points
/// currently in the type-2 region, the type-2 outbursts with the same radii.
/// `N1` (rate 1) drives type 1.
pub fn couple_two_type_vs_one_type(
    cc: &CouplingConfig,
    lambda: f64,
    root: &RandomStream,
) -> Result<CoupledTrace> {
    cc.validate()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("λ must lie in [0, 1], got {lambda}")));
    }
    let g = cc.radius.gamma();
    let mut one = cc.history(Model::OneType, &InitialSets::one_type_default(cc.d, g));
    let mut two = cc.history(Model::TwoType, &InitialSets::two_type_default(cc.d, g));
    let mut n1 = root.substream(labels::N1);
    let mut n2 = root.substream(labels::N2);
    let mut audit = root.substream(labels::AUDIT);
    let mut trace = CoupledTrace::new("two-type-in-one-type");
    trace.shared_streams = vec![
        StreamUse {
            stream: "N1".into(),
            rate: 1.0,
            consumers: vec!["two-type/type-1".into()],
        },
        StreamUse {
            stream: "N2".into(),
            rate: lambda,
            consumers: vec!["one-type".into(), "two-type/type-2".into()],
        },
    ];
    let res = cc.covering_resolution;
    let mut clock = 0.0;
    let mut seq = 0usize;
    let mut audit_failures = 0usize;
    loop {
        guard(seq, cc, clock)?;
        let next = race(
            (&two.proposal(InfectionType::Type1), 1.0, &mut n1),
            (&one.proposal(InfectionType::Single), lambda, &mut n2),
            clock,
            cc.horizon,
            &cc.radius,
        )?;
        let Some((p, stream)) = next else { break };
        seq += 1;
        clock = p.time;
        if stream == 0 {
            two.push_outburst(p.time, p.location, p.radius, InfectionType::Type1, res);
        } else {
            let in_type2 = two.classify(&p.location, p.time) == Some(InfectionType::Type2);
            one.push_outburst(p.time, p.location.clone(), p.radius, InfectionType::Single, res);
            if in_type2 {
                two.push_outburst(p.time, p.location, p.radius, InfectionType::Type2, res);
            }
        }
        // every type-2 outburst is also a one-type outburst
        let pass = match two.outbursts.last() {
            Some(o) if o.itype == InfectionType::Type2 && o.time == p.time => one
                .outbursts
                .last()
                .is_some_and(|u| u.time == o.time && u.center == o.center && u.radius == o.radius),
            _ => true,
        };
        trace.check(seq, clock, "type2_events_in_one_type_events", pass);
        let pts = audit_sample(&two, InfectionType::Type2, cc.audit_points, &mut audit)?;
        let bad = pts.iter().filter(|x| !one.is_infected(x.coords())).count();
        audit_failures += bad;
        trace.check(seq, clock, "type2_audit_in_one_type", bad == 0);
    }
    trace.statistics.insert("events".into(), seq as f64);
    trace.statistics.insert("audit_failures".into(), audit_failures as f64);
    trace.histories.insert("one-type".into(), one);
    trace.histories.insert("two-type".into(), two);
    Ok(trace)
}

/// Rate-`λ` one-type process from `B(0, γ)` and the two-type `(1, λ)`
/// process. `N1` (rate `1 - λ`) and `N2` (rate `λ`) together drive type 1;
/// `N2` alone drives the one-type process and type 2. `N2` is generated over
/// the union of every shape of both processes.
pub fn couple_one_type_vs_two_type_union(
    cc: &CouplingConfig,
    lambda: f64,
    root: &RandomStream,
) -> Result<CoupledTrace> {
    cc.validate()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("λ must lie in [0, 1], got {lambda}")));
    }
    let g = cc.radius.gamma();
    let init2 = InitialSets::two_type_default(cc.d, g);
    let mut one = cc.history(Model::OneType, &InitialSets::one_type_default(cc.d, g));
    let mut two = cc.history(Model::TwoType, &init2);
    let mut union = ShapeUnion::new(cc.d, g);
    union.push(cc.origin_ball());
    for b in init2.type_1.iter().chain(&init2.type_2) {
        union.push(b.clone());
    }
    let mut n1 = root.substream(labels::N1);
    let mut n2 = root.substream(labels::N2);
    let mut audit = root.substream(labels::AUDIT);
    let mut trace = CoupledTrace::new("one-type-in-union");
    trace.shared_streams = vec![
        StreamUse {
            stream: "N1".into(),
            rate: 1.0 - lambda,
            consumers: vec!["two-type/type-1".into()],
        },
        StreamUse {
            stream: "N2".into(),
            rate: lambda,
            consumers: vec![
                "one-type".into(),
                "two-type/type-1".into(),
                "two-type/type-2".into(),
            ],
        },
    ];
    let res = cc.covering_resolution;
    let mut clock = 0.0;
    let mut seq = 0usize;
    let mut audit_failures = 0usize;
    loop {
        guard(seq, cc, clock)?;
        let next = race(
            (&two.proposal(InfectionType::Type1), 1.0 - lambda, &mut n1),
            (&union, lambda, &mut n2),
            clock,
            cc.horizon,
            &cc.radius,
        )?;
        let Some((p, stream)) = next else { break };
        seq += 1;
        clock = p.time;
        let ball = Ball {
            center: p.location.clone(),
            radius: p.radius,
        };
        let mut grew = false;
        if stream == 0 {
            two.push_outburst(p.time, p.location.clone(), p.radius, InfectionType::Type1, res);
            grew = true;
        } else {
            let in_one = one.is_infected(p.location.coords());
            let kind = two.classify(&p.location, p.time);
            // the coupling's mechanism: one-type event points are two-type event points
            trace.check(seq, clock, "one_type_event_in_two_type", !in_one || kind.is_some());
            if in_one {
                one.push_outburst(p.time, p.location.clone(), p.radius, InfectionType::Single, res);
                grew = true;
            }
            if let Some(t) = kind {
                two.push_outburst(p.time, p.location.clone(), p.radius, t, res);
                grew = true;
            }
        }
        if grew {
            union.push(ball);
        }
        let pts = audit_sample(&one, InfectionType::Single, cc.audit_points, &mut audit)?;
        let bad = pts.iter().filter(|x| !two.is_infected(x.coords())).count();
        audit_failures += bad;
        trace.check(seq, clock, "one_type_audit_in_two_type", bad == 0);
    }
    trace.statistics.insert("events".into(), seq as f64);
    trace.statistics.insert("audit_failures".into(), audit_failures as f64);
    trace.histories.insert("one-type".into(), one);
    trace.histories.insert("two-type".into(), two);
    Ok(trace)
}

/// Unit-rate one-type process from `B(0, γ)` and the BRW from `C(0, 2γ)`.
///
/// BRW births are proposed by choosing a cube with probability proportional
/// to its volume and a uniform point in it. A point of `x` proposed by cube
/// `j` belongs to layer `ℓ` = number of earlier cubes containing `x`; the
/// layer-0 points form the unit-rate stream `N0` on the BRW region, and those
/// landing in the one-type region are one-type outbursts with the same
/// radius. The run stops at the horizon or when the BRW reaches `brw_cap`
/// individuals.
pub fn couple_one_type_vs_brw(cc: &CouplingConfig, root: &RandomStream) -> Result<CoupledTrace> {
    cc.validate()?;
    let g = cc.radius.gamma();
    let mut one = cc.history(Model::OneType, &InitialSets::one_type_default(cc.d, g));
    let mut cubes = CubeSet::new(cc.d, g);
    cubes.push(Cube {
        center: Point::origin(cc.d),
        half_side: g,
    });
    let mut times = vec![0.0];
    let mut stream = root.substream(labels::BRW);
    let mut audit = root.substream(labels::AUDIT);
    let mut trace = CoupledTrace::new("one-type-in-brw");
    trace.shared_streams = vec![StreamUse {
        stream: "N0 (layer 0 of the BRW births)".into(),
        rate: 1.0,
        consumers: vec!["one-type".into(), "brw".into()],
    }];
    let res = cc.covering_resolution;
    // S_0 ⊂ S̄_0: the ball's bounding box is the cube
    let initial_ok = {
        let pts = audit_sample(&one, InfectionType::Single, cc.audit_points, &mut audit)?;
        pts.iter().all(|x| cubes.first_containing(x.coords()).is_some())
    };
    trace.check(0, 0.0, "initial_ball_in_cube", initial_ok);
    let mut clock = 0.0;
    let mut seq = 0usize;
    let mut truncated = false;
    let mut audit_failures = 0usize;
    loop {
        if cubes.cubes.len() >= cc.brw_cap {
            truncated = true;
            break;
        }
        guard(one.outbursts.len(), cc, clock)?;
        let t = clock + stream.exp1() / cubes.total();
        if t > cc.horizon {
            clock = cc.horizon;
            break;
        }
        clock = t;
        let j = cubes.sample_index(&mut stream);
        let x = cubes.cubes[j].sample(&mut stream);
        let r = cc.radius.sample(&mut stream);
        let layer0 = cubes.first_containing(x.coords()) == Some(j);
        let in_one = layer0 && one.is_infected(x.coords());
        cubes.push(Cube {
            center: x.clone(),
            half_side: r,
        });
        times.push(t);
        if in_one {
            seq += 1;
            let o = one.push_outburst(t, x, r, InfectionType::Single, res);
            let center_ok = cubes.first_containing(o.center.coords()).is_some();
            trace.check(seq, t, "one_type_center_in_brw", center_ok);
            let pts = audit_sample(&one, InfectionType::Single, cc.audit_points, &mut audit)?;
            let bad = pts
                .iter()
                .filter(|p| cubes.first_containing(p.coords()).is_none())
                .count();
            audit_failures += bad;
            trace.check(seq, t, "one_type_audit_in_brw", bad == 0);
            trace.check(
                seq,
                t,
                "brw_population_at_least_one_type_events",
                cubes.cubes.len() > one.outbursts.len(),
            );
        }
    }
    trace.statistics.insert("events".into(), seq as f64);
    trace.statistics.insert("brw_population".into(), cubes.cubes.len() as f64);
    trace.statistics.insert("horizon_reached".into(), clock);
    trace.statistics.insert("truncated".into(), f64::from(u8::from(truncated)));
    trace.statistics.insert("audit_failures".into(), audit_failures as f64);
    trace.histories.insert("one-type".into(), one);
    trace.brw = Some(BrwTrace {
        cubes: cubes.cubes,
        birth_times: times,
        truncated,
    });
    Ok(trace)
}

/// Member label used in traces and statistics.
pub fn member_label(lambda: f64) -> String {
    format!("lambda={lambda}")
}

/// Two-type `(1, λ)` processes for every `λ` in `lambdas`, sharing a unit-rate
/// `N1` (type 1) and a unit-rate marked `N2` (type 2 for the members with
/// `λ >= mark`). Both streams run over the union of the corresponding
/// shapes of all members; each member keeps the points in its own region.
/// Records `‖S_T^1(λ)‖` for each member.
pub fn couple_lambda_family(
    cc: &CouplingConfig,
    lambdas: &[f64],
    root: &RandomStream,
) -> Result<CoupledTrace> {
    cc.validate()?;
    if lambdas.is_empty() || lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::InvalidParameter("λ list must be nonempty and within [0, 1]".into()));
    }
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("λ list must be sorted".into()));
    }
    let g = cc.radius.gamma();
    let init = InitialSets::two_type_default(cc.d, g);
    let mut members: Vec<InfectionHistory> = lambdas
        .iter()
        .map(|_| cc.history(Model::TwoType, &init))
        .collect();
    let mut u1 = ShapeUnion::new(cc.d, g);
    let mut u2 = ShapeUnion::new(cc.d, g);
    init.type_1.iter().for_each(|b| u1.push(b.clone()));
    init.type_2.iter().for_each(|b| u2.push(b.clone()));
    let mut n1 = root.substream(labels::N1);
    let mut n2 = root.substream(labels::N2);
    let mut trace = CoupledTrace::new("lambda-family");
    let names: Vec<String> = lambdas.iter().map(|&l| member_label(l)).collect();
    trace.shared_streams = vec![
        StreamUse {
            stream: "N1".into(),
            rate: 1.0,
            consumers: names.iter().map(|n| format!("{n}/type-1")).collect(),
        },
        StreamUse {
            stream: "N2 (marked)".into(),
            rate: 1.0,
            consumers: names.iter().map(|n| format!("{n}/type-2")).collect(),
        },
    ];
    let res = cc.covering_resolution;
    let mut clock = 0.0;
    let mut seq = 0usize;
    loop {
        guard(seq, cc, clock)?;
        let next = race((&u1, 1.0, &mut n1), (&u2, 1.0, &mut n2), clock, cc.horizon, &cc.radius)?;
        let Some((p, stream)) = next else { break };
        seq += 1;
        clock = p.time;
        let itype = if stream == 0 {
            InfectionType::Type1
        } else {
            InfectionType::Type2
        };
        let mut thinned = Vec::with_capacity(lambdas.len());
        let mut any = false;
        for (h, &lam) in members.iter_mut().zip(lambdas) {
            let kept = stream == 0 || p.uniform_mark <= lam;
            thinned.push(kept);
            if kept && h.classify(&p.location, p.time) == Some(itype) {
                h.push_outburst(p.time, p.location.clone(), p.radius, itype, res);
                any = true;
            }
        }
        if stream == 1 {
            // λ N2 ⊂ λ' N2 for λ <= λ'
            let nested = thinned.windows(2).all(|w| !w[0] || w[1]);
            trace.check(seq, clock, "mark_thinning_nested", nested);
        }
        if any {
            let b = Ball {
                center: p.location,
                radius: p.radius,
            };
            if stream == 0 {
                u1.push(b);
            } else {
                u2.push(b);
            }
        }
    }
    let t = cc.horizon;
    let norms: Vec<f64> = members
        .iter()
        .map(|h| h.norm_sup(t, NormTarget::Type(InfectionType::Type1)))
        .collect();
    for (name, n) in names.iter().zip(&norms) {
        trace.statistics.insert(format!("norm_type1[{name}]"), *n);
    }
    let monotone = norms.windows(2).all(|w| w[0] >= w[1]);
    trace
        .statistics
        .insert("norm_type1_pathwise_monotone".into(), f64::from(u8::from(monotone)));
    trace.statistics.insert("events".into(), seq as f64);
    for (name, h) in names.into_iter().zip(members) {
        trace.histories.insert(name, h);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cc(horizon: f64) -> CouplingConfig {
        CouplingConfig::new(2, RadiusDistribution::deterministic(1.0).unwrap(), horizon)
            .with_audit_points(200)
    }

    #[test]
    fn two_type_in_one_type_certificates() {
        for i in 0..5 {
            let t = couple_two_type_vs_one_type(&cc(3.0), 0.6, &RandomStream::replica(1, i)).unwrap();
            t.verify().unwrap();
            assert!(t.statistics["events"] > 0.0);
            let two = &t.histories["two-type"];
            let one = &t.histories["one-type"];
            for o in two.outbursts.iter().filter(|o| o.itype == InfectionType::Type2) {
                assert!(one.outbursts.iter().any(|u| u.time == o.time && u.center == o.center));
            }
        }
    }

    #[test]
    fn two_type_in_one_type_zero_rate() {
        let t = couple_two_type_vs_one_type(&cc(3.0), 0.0, &RandomStream::replica(2, 0)).unwrap();
        t.verify().unwrap();
        assert!(t.histories["two-type"]
            .outbursts
            .iter()
            .all(|o| o.itype == InfectionType::Type1));
        assert!(t.histories["one-type"].outbursts.is_empty());
    }

    #[test]
    fn one_type_in_union_certificates() {
        for i in 0..5 {
            let t = couple_one_type_vs_two_type_union(&cc(3.0), 0.5, &RandomStream::replica(3, i)).unwrap();
            t.verify().unwrap();
        }
    }

    #[test]
    fn one_type_in_union_unit_rate_has_no_n1() {
        let t = couple_one_type_vs_two_type_union(&cc(2.5), 1.0, &RandomStream::replica(4, 0)).unwrap();
        t.verify().unwrap();
        // with λ = 1 every one-type outburst is also a two-type outburst
        let one = &t.histories["one-type"];
        let two = &t.histories["two-type"];
        assert!(one
            .outbursts
            .iter()
            .all(|o| two.outbursts.iter().any(|u| u.time == o.time && u.center == o.center)));
    }

    #[test]
    fn one_type_in_brw_certificates() {
        for i in 0..5 {
            let c = cc(5.0).with_brw_cap(20_000);
            let t = couple_one_type_vs_brw(&c, &RandomStream::replica(5, i)).unwrap();
            t.verify().unwrap();
            let brw = t.brw.as_ref().unwrap();
            assert!(brw.cubes.len() > t.histories["one-type"].outbursts.len());
            assert!(t.certificates.iter().any(|c| c.check_name == "initial_ball_in_cube"));
        }
    }

    #[test]
    fn lambda_family_endpoints() {
        let t = couple_lambda_family(&cc(3.0), &[0.0, 1.0], &RandomStream::replica(6, 0)).unwrap();
        t.verify().unwrap();
        let zero = &t.histories[&member_label(0.0)];
        assert!(zero.outbursts.iter().all(|o| o.itype == InfectionType::Type1));
        let one = &t.histories[&member_label(1.0)];
        assert!(one.outbursts.iter().any(|o| o.itype == InfectionType::Type2));
    }

    #[test]
    fn lambda_family_nesting() {
        let lams = [0.25, 0.5, 0.75, 1.0];
        let t = couple_lambda_family(&cc(3.0), &lams, &RandomStream::replica(7, 0)).unwrap();
        t.verify().unwrap();
        assert!(t.certificates.iter().any(|c| c.check_name == "mark_thinning_nested"));
        for l in lams {
            assert!(t.statistics[&format!("norm_type1[{}]", member_label(l))] > 0.0);
        }
    }

    #[test]
    fn certificates_csv() {
        let t = couple_two_type_vs_one_type(&cc(1.0), 0.5, &RandomStream::replica(8, 0)).unwrap();
        let mut buf = Vec::new();
        t.write_certificates_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("event_seq,time,check_name,pass\n"));
        assert_eq!(text.lines().count(), t.certificates.len() + 1);
    }

    #[test]
    fn invalid_lambda() {
        assert!(couple_two_type_vs_one_type(&cc(1.0), 1.5, &RandomStream::new(0, 0)).is_err());
        assert!(couple_lambda_family(&cc(1.0), &[0.5, 0.2], &RandomStream::new(0, 0)).is_err());
        assert!(couple_lambda_family(&cc(1.0), &[], &RandomStream::new(0, 0)).is_err());
    }
}
