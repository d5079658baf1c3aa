//! Points, balls and cubes in `R^d`, grid-indexed ball collections and the
//! ε-net coverage test used for effectiveness and strong-infection checks.
//!
//! Coverage of a ball by a union of balls is decided on a lattice net of the
//! target with spacing at most `resolution`, anchored at the target center so
//! that the center and the `2d` axis-extreme boundary points are always net
//! points. The error is one-sided: an uncovered sliver narrower than the net
//! spacing can be missed, but a fully covered target is never reported as
//! uncovered.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::stats::EstimateResult;
use crate::{Error, Result};

/// Relative slack applied to squared-distance comparisons in the coverage
/// test so that lattice points landing on a sphere up to rounding count as
/// inside it.
const COVER_TOL: f64 = 1e-9;

/// Balls whose bounding box spans more grid cells than this are kept in a
/// separate list that every query scans.
const MAX_CELLS_PER_ITEM: usize = 1024;

pub type Coords = SmallVec<[f64; 4]>;

/// A point of `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Coords);

impl Point {
    pub fn new(coords: impl IntoIterator<Item = f64>) -> Result<Self> {
        let coords: Coords = coords.into_iter().collect();
        if coords.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(coords))
    }

    pub fn origin(d: usize) -> Self {
        Self(smallvec::smallvec![0.0; d])
    }

    /// The point `value * e_axis`.
    pub fn on_axis(d: usize, axis: usize, value: f64) -> Self {
        let mut p = Self::origin(d);
        p.0[axis] = value;
        p
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        dist2(&self.0, &other.0)
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Point {
        Point(self.0.iter().map(|c| c * s).collect())
    }

    pub fn offset(&self, delta: &[f64]) -> Point {
        Point(self.0.iter().zip(delta).map(|(a, b)| a + b).collect())
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A closed Euclidean ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn contains(&self, x: &Point) -> Result<bool> {
        x.check_dim(self.dim())?;
        Ok(self.contains_unchecked(x.coords()))
    }

    #[inline]
    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        dist2(self.center.coords(), x) <= self.radius * self.radius
    }

    #[inline]
    fn contains_tol(&self, x: &[f64]) -> bool {
        dist2(self.center.coords(), x) <= self.radius * self.radius * (1.0 + COVER_TOL)
    }

    pub fn volume(&self) -> f64 {
        ball_volume(self.dim(), self.radius)
    }

    /// Whether `self` lies inside `other` (exact, closed sets).
    pub fn is_inside(&self, other: &Ball) -> bool {
        self.center.dist(&other.center) + self.radius <= other.radius
    }

    pub fn intersects(&self, other: &Ball) -> bool {
        let r = self.radius + other.radius;
        self.center.dist2(&other.center) <= r * r
    }

    /// Uniform draw from the ball.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u = sample_unit_ball(self.dim(), rng);
        Point(
            self.center
                .0
                .iter()
                .zip(u)
                .map(|(c, v)| c + self.radius * v)
                .collect(),
        )
    }

    /// Uniform draw from the sphere bounding the ball.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u = sample_unit_sphere(self.dim(), rng);
        Point(
            self.center
                .0
                .iter()
                .zip(u)
                .map(|(c, v)| c + self.radius * v)
                .collect(),
        )
    }
}

/// A closed axis-aligned cube `center + [-half_side, half_side]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Point,
    pub half_side: f64,
}

impl Cube {
    pub fn new(center: Point, half_side: f64) -> Result<Self> {
        if !(half_side > 0.0 && half_side.is_finite()) {
            return Err(Error::InvalidRadius(half_side));
        }
        Ok(Self { center, half_side })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn contains(&self, x: &Point) -> Result<bool> {
        x.check_dim(self.dim())?;
        Ok(self.contains_unchecked(x.coords()))
    }

    #[inline]
    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        self.center
            .coords()
            .iter()
            .zip(x)
            .all(|(c, v)| (v - c).abs() <= self.half_side)
    }

    pub fn volume(&self) -> f64 {
        (2.0 * self.half_side).powi(self.dim() as i32)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point(
            self.center
                .0
                .iter()
                .map(|c| c + self.half_side * rng.gen_range(-1.0..=1.0))
                .collect(),
        )
    }
}

/// The stripe `{x : |x_i| <= b for all i >= 2}`; the first coordinate is free.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripeConstraint {
    pub b: f64,
    pub active: bool,
}

impl StripeConstraint {
    pub fn inactive() -> Self {
        Self {
            b: f64::INFINITY,
            active: false,
        }
    }

    pub fn new(b: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "stripe half-width must be positive, got {b}"
            )));
        }
        Ok(Self { b, active: true })
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        !self.active || x.iter().skip(1).all(|v| v.abs() <= self.b)
    }
}

impl Default for StripeConstraint {
    fn default() -> Self {
        Self::inactive()
    }
}

pub fn in_stripe(x: &Point, c: &StripeConstraint) -> bool {
    c.contains(x.coords())
}

/// Lebesgue volume of a `d`-ball of radius `r`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    unit_ball_volume(d) * r.powi(d as i32)
}

fn unit_ball_volume(d: usize) -> f64 {
    // V_d = V_{d-2} * 2π / d
    let (mut v, start) = if d.is_multiple_of(2) { (1.0, 2) } else { (2.0, 3) };
    let mut k = start;
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

fn sample_unit_ball<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Coords {
    match d {
        1 => smallvec::smallvec![rng.gen_range(-1.0..=1.0)],
        2 | 3 => loop {
            let v: Coords = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                break v;
            }
        },
        _ => {
            let dir = sample_unit_sphere(d, rng);
            let s = rng.gen::<f64>().powf(1.0 / d as f64);
            dir.into_iter().map(|x| x * s).collect()
        }
    }
}

fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Coords {
    loop {
        let v: Coords = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            break v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn check_same_dim(balls: &[Ball]) -> Result<usize> {
    let d = balls.first().ok_or(Error::EmptyBallList)?.dim();
    for b in balls {
        b.center.check_dim(d)?;
    }
    Ok(d)
}

/// Monte Carlo estimate of the volume of a union of balls, sampling a
/// bounding box.
pub fn union_volume<R: Rng + ?Sized>(
    balls: &[Ball],
    sample_count: usize,
    rng: &mut R,
) -> Result<EstimateResult> {
    let d = check_same_dim(balls)?;
    if sample_count == 0 {
        return Err(Error::InvalidParameter("sample_count must be >= 1".into()));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for b in balls {
        for i in 0..d {
            lo[i] = lo[i].min(b.center.0[i] - b.radius);
            hi[i] = hi[i].max(b.center.0[i] + b.radius);
        }
    }
    let box_volume: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).product();
    let mut x = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..sample_count {
        for i in 0..d {
            x[i] = rng.gen_range(lo[i]..hi[i]);
        }
        if balls.iter().any(|b| b.contains_unchecked(&x)) {
            hits += 1;
        }
    }
    let n = sample_count as f64;
    let p = hits as f64 / n;
    let se = box_volume * (p * (1.0 - p) / n).sqrt();
    Ok(EstimateResult::from_mean_se(box_volume * p, se, sample_count))
}

/// Exact uniform draw from the union of `balls`: choose a ball with
/// probability proportional to its volume, draw uniformly inside it and accept
/// with probability `1 / k`, `k` being the number of listed balls containing
/// the draw.
pub fn sample_uniform_in_union<R: Rng + ?Sized>(balls: &[Ball], rng: &mut R) -> Result<Point> {
    check_same_dim(balls)?;
    let cum: Vec<f64> = balls
        .iter()
        .scan(0.0, |acc, b| {
            *acc += b.volume();
            Some(*acc)
        })
        .collect();
    let total = *cum.last().expect("non-empty");
    loop {
        let u = rng.gen::<f64>() * total;
        let j = cum.partition_point(|&c| c <= u).min(balls.len() - 1);
        let x = balls[j].sample(rng);
        let k = balls
            .iter()
            .filter(|b| b.contains_unchecked(x.coords()))
            .count()
            .max(1);
        if k == 1 || rng.gen::<f64>() * (k as f64) < 1.0 {
            return Ok(x);
        }
    }
}

/// ε-net coverage test of `target` by the union of `covers`.
pub fn is_ball_covered(target: &Ball, covers: &[Ball], resolution: f64) -> bool {
    let refs: Vec<&Ball> = covers.iter().collect();
    net_covered(target, resolution, &refs, None)
}

/// Coverage test with an optional stripe mask: net points outside an active
/// stripe are ignored.
pub(crate) fn net_covered(
    target: &Ball,
    resolution: f64,
    covers: &[&Ball],
    mask: Option<&StripeConstraint>,
) -> bool {
    assert!(resolution > 0.0, "covering resolution must be positive");
    let mask = mask.filter(|m| m.active);
    if mask.is_none() && covers.iter().any(|c| target.is_inside(c)) {
        return true;
    }
    let net = Net::new(target, resolution, mask);
    let k = net.k;
    let lo: Coords = smallvec::smallvec![-(k as f64); target.dim()];
    let hi: Coords = smallvec::smallvec![k as f64; target.dim()];
    net.covered(&lo, &hi, covers)
}

/// Whether `pred` holds at every point of the ε-net of `target` used by the
/// coverage test. Stops at the first failure.
pub fn net_all(target: &Ball, resolution: f64, mut pred: impl FnMut(&[f64]) -> bool) -> bool {
    assert!(resolution > 0.0, "covering resolution must be positive");
    let net = Net::new(target, resolution, None);
    let d = target.dim();
    let k = net.k;
    let c = target.center.coords();
    let mut z: SmallVec<[i64; 4]> = smallvec::smallvec![-k; d];
    let mut x: Coords = smallvec::smallvec![0.0; d];
    loop {
        let n2: i64 = z.iter().map(|v| v * v).sum();
        if (n2 as f64) * net.h * net.h <= net.r2 * (1.0 + COVER_TOL) {
            for i in 0..d {
                x[i] = c[i] + z[i] as f64 * net.h;
            }
            if !pred(&x) {
                return false;
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                return true;
            }
            if z[i] < k {
                z[i] += 1;
                break;
            }
            z[i] = -k;
            i += 1;
        }
    }
}

/// Lattice `center + h * Z^d` restricted to the target ball, with
/// `h = radius / k <= resolution`.
struct Net<'a> {
    target: &'a Ball,
    mask: Option<&'a StripeConstraint>,
    h: f64,
    k: i64,
    r2: f64,
}

impl<'a> Net<'a> {
    fn new(target: &'a Ball, resolution: f64, mask: Option<&'a StripeConstraint>) -> Self {
        let k = (target.radius / resolution).ceil().max(1.0) as i64;
        Self {
            target,
            mask,
            h: target.radius / k as f64,
            k,
            r2: target.radius * target.radius,
        }
    }

    fn geometric(&self, lo: &[f64], hi: &[f64]) -> (Coords, Coords) {
        let c = self.target.center.coords();
        (
            c.iter().zip(lo).map(|(c, l)| c + l * self.h).collect(),
            c.iter().zip(hi).map(|(c, u)| c + u * self.h).collect(),
        )
    }

    /// True when every net point in the index box `[lo, hi]` that lies in the
    /// target (and the mask) is covered by some ball of `cands`.
    fn covered(&self, lo: &[f64], hi: &[f64], cands: &[&Ball]) -> bool {
        let (glo, ghi) = self.geometric(lo, hi);
        let center = self.target.center.coords();
        if box_min_d2(&glo, &ghi, center) > self.r2 * (1.0 + COVER_TOL) {
            return true;
        }
        if let Some(m) = self.mask {
            let outside = (1..glo.len()).any(|i| axis_min_abs(glo[i], ghi[i]) > m.b);
            if outside {
                return true;
            }
        }
        let single = lo.iter().zip(hi).all(|(l, u)| l == u);
        if single {
            if let Some(m) = self.mask {
                if !m.contains(&glo) {
                    return true;
                }
            }
            return cands.iter().any(|b| b.contains_tol(&glo));
        }
        let mut local: SmallVec<[&Ball; 32]> = SmallVec::new();
        for &b in cands {
            let c = b.center.coords();
            let r2 = b.radius * b.radius * (1.0 + COVER_TOL);
            if box_min_d2(&glo, &ghi, c) <= r2 {
                if box_max_d2(&glo, &ghi, c) <= r2 {
                    return true;
                }
                local.push(b);
            }
        }
        if local.is_empty() {
            let inside_target = box_max_d2(&glo, &ghi, center) <= self.r2;
            let inside_mask = self
                .mask
                .is_none_or(|m| (1..glo.len()).all(|i| glo[i].abs().max(ghi[i].abs()) <= m.b));
            if inside_target && inside_mask {
                return false;
            }
        }
        // split the longest index axis
        let (axis, _) = lo
            .iter()
            .zip(hi)
            .map(|(l, u)| u - l)
            .enumerate()
            .fold((0, -1.0), |best, (i, w)| if w > best.1 { (i, w) } else { best });
        let mid = ((lo[axis] + hi[axis]) / 2.0).floor();
        let mut left_hi: Coords = hi.into();
        left_hi[axis] = mid;
        let mut right_lo: Coords = lo.into();
        right_lo[axis] = mid + 1.0;
        self.covered(lo, &left_hi, &local) && self.covered(&right_lo, hi, &local)
    }
}

#[inline]
fn axis_min_abs(lo: f64, hi: f64) -> f64 {
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else {
        lo.abs().min(hi.abs())
    }
}

#[inline]
fn box_min_d2(lo: &[f64], hi: &[f64], p: &[f64]) -> f64 {
    lo.iter()
        .zip(hi)
        .zip(p)
        .map(|((l, h), x)| {
            let d = if x < l {
                l - x
            } else if x > h {
                x - h
            } else {
                0.0
            };
            d * d
        })
        .sum()
}

#[inline]
fn box_max_d2(lo: &[f64], hi: &[f64], p: &[f64]) -> f64 {
    lo.iter()
        .zip(hi)
        .zip(p)
        .map(|((l, h), x)| {
            let d = (x - l).abs().max((h - x).abs());
            d * d
        })
        .sum()
}

/// Uniform grid over the first (up to three) coordinates. Items are
/// registered in every cell their bounding box overlaps; very large items go
/// to an overflow list scanned by every query. Purely an accelerator.
#[derive(Clone, Debug)]
pub(crate) struct SpatialGrid {
    cell: f64,
    dims: usize,
    cells: FxHashMap<[i32; 3], Vec<u32>>,
    oversized: Vec<u32>,
    /// Lowest cell of each item's bounding box (unused for oversized items).
    first_cell: Vec<[i32; 3]>,
    len: u32,
}

impl SpatialGrid {
    pub(crate) fn new(d: usize, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite());
        Self {
            cell,
            dims: d.min(3),
            cells: FxHashMap::default(),
            oversized: Vec::new(),
            first_cell: Vec::new(),
            len: 0,
        }
    }

    #[inline]
    fn coord(&self, v: f64) -> i32 {
        (v / self.cell).floor() as i32
    }

    #[inline]
    fn key(&self, x: &[f64]) -> [i32; 3] {
        let mut k = [0i32; 3];
        for i in 0..self.dims {
            k[i] = self.coord(x[i]);
        }
        k
    }

    fn cell_range(&self, lo: &[f64], hi: &[f64]) -> ([i32; 3], [i32; 3], usize) {
        let mut a = [0i32; 3];
        let mut b = [0i32; 3];
        let mut count = 1usize;
        for i in 0..self.dims {
            a[i] = self.coord(lo[i]);
            b[i] = self.coord(hi[i]);
            count = count.saturating_mul((b[i] as i64 - a[i] as i64 + 1) as usize);
        }
        (a, b, count)
    }

    /// Registers item `id` (ids must be pushed in increasing order so cell
    /// lists stay sorted).
    pub(crate) fn insert(&mut self, id: u32, center: &[f64], extent: f64) {
        debug_assert_eq!(id, self.len);
        self.len += 1;
        let lo: Coords = center.iter().map(|c| c - extent).collect();
        let hi: Coords = center.iter().map(|c| c + extent).collect();
        let (a, b, count) = self.cell_range(&lo, &hi);
        self.first_cell.push(a);
        if count > MAX_CELLS_PER_ITEM {
            self.oversized.push(id);
            return;
        }
        for_each_cell(a, b, |k| self.cells.entry(k).or_default().push(id));
    }

    /// Candidate ids whose bounding boxes may contain `x`: the (sorted) cell
    /// list and the (sorted) overflow list.
    #[inline]
    pub(crate) fn point_candidates(&self, x: &[f64]) -> (&[u32], &[u32]) {
        let cell = self.cells.get(&self.key(x)).map_or(&[][..], |v| v.as_slice());
        (cell, &self.oversized)
    }

    /// Deduplicated ids below `limit` whose bounding boxes may meet the box
    /// `[lo, hi]`, in no particular order.
    pub(crate) fn box_candidates(&self, lo: &[f64], hi: &[f64], limit: usize) -> Vec<u32> {
        let (a, b, count) = self.cell_range(lo, hi);
        if count > self.cells.len().max(1) * 4 {
            return (0..self.len.min(limit as u32)).collect();
        }
        let mut out = Vec::new();
        let dims = self.dims;
        for_each_cell(a, b, |k| {
            if let Some(v) = self.cells.get(&k) {
                let end = v.partition_point(|&i| (i as usize) < limit);
                // report an item only from the first query cell it occupies
                out.extend(v[..end].iter().copied().filter(|&i| {
                    let f = &self.first_cell[i as usize];
                    (0..dims).all(|ax| k[ax] == f[ax].max(a[ax]))
                }));
            }
        });
        out.extend(self.oversized.iter().copied().filter(|&i| (i as usize) < limit));
        out
    }
}

fn for_each_cell(a: [i32; 3], b: [i32; 3], mut f: impl FnMut([i32; 3])) {
    for x in a[0]..=b[0] {
        for y in a[1]..=b[1] {
            for z in a[2]..=b[2] {
                f([x, y, z]);
            }
        }
    }
}

/// Append-only, chronologically ordered collection of balls with a grid
/// index and prefix sums of volumes.
///
/// Queries accept a `limit`: only balls with index below it are considered,
/// which lets callers look at the collection as it was at an earlier time.
#[derive(Clone, Debug)]
pub struct BallSet {
    d: usize,
    balls: Vec<Ball>,
    cum_volume: Vec<f64>,
    grid: SpatialGrid,
}

impl BallSet {
    /// `cell` is the grid spacing; a value near the typical radius works well.
    pub fn new(d: usize, cell: f64) -> Self {
        Self {
            d,
            balls: Vec::new(),
            cum_volume: Vec::new(),
            grid: SpatialGrid::new(d, cell),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn push(&mut self, ball: Ball) -> usize {
        debug_assert_eq!(ball.dim(), self.d);
        let id = self.balls.len();
        self.grid
            .insert(id as u32, ball.center.coords(), ball.radius);
        let prev = self.cum_volume.last().copied().unwrap_or(0.0);
        self.cum_volume.push(prev + ball.volume());
        self.balls.push(ball);
        id
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn get(&self, i: usize) -> &Ball {
        &self.balls[i]
    }

    /// Sum of volumes (with multiplicity) of the first `limit` balls.
    pub fn volume_sum(&self, limit: usize) -> f64 {
        match limit.min(self.len()) {
            0 => 0.0,
            n => self.cum_volume[n - 1],
        }
    }

    /// Index of the first ball (below `limit`) containing `x`.
    pub fn first_containing(&self, x: &[f64], limit: usize) -> Option<usize> {
        let (cell, big) = self.grid.point_candidates(x);
        let mut best = None;
        for &i in cell {
            let i = i as usize;
            if i >= limit {
                break;
            }
            if self.balls[i].contains_unchecked(x) {
                best = Some(i);
                break;
            }
        }
        for &i in big {
            let i = i as usize;
            if i >= limit || best.is_some_and(|b| i >= b) {
                break;
            }
            if self.balls[i].contains_unchecked(x) {
                best = Some(i);
                break;
            }
        }
        best
    }

    pub fn count_containing(&self, x: &[f64], limit: usize) -> usize {
        let (cell, big) = self.grid.point_candidates(x);
        cell.iter()
            .chain(big)
            .map(|&i| i as usize)
            .filter(|&i| i < limit && self.balls[i].contains_unchecked(x))
            .count()
    }

    /// Index below `limit` drawn with probability proportional to volume.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R, limit: usize) -> usize {
        let n = limit.min(self.len());
        debug_assert!(n > 0);
        let u = rng.gen::<f64>() * self.cum_volume[n - 1];
        self.cum_volume[..n].partition_point(|&c| c <= u).min(n - 1)
    }

    /// Indices below `limit` of balls intersecting `target`.
    pub fn intersecting(&self, target: &Ball, limit: usize) -> Vec<usize> {
        let c = target.center.coords();
        let lo: Coords = c.iter().map(|v| v - target.radius).collect();
        let hi: Coords = c.iter().map(|v| v + target.radius).collect();
        let mut out = self
            .grid
            .box_candidates(&lo, &hi, limit)
            .into_iter()
            .map(|i| i as usize)
            .filter(|&i| self.balls[i].intersects(target))
            .collect::<Vec<_>>();
        out.sort_unstable();
        out
    }

    /// ε-net coverage of `target` by the first `limit` balls, ignoring net
    /// points outside `mask` when it is active.
    pub fn covers(
        &self,
        target: &Ball,
        limit: usize,
        resolution: f64,
        mask: Option<&StripeConstraint>,
    ) -> bool {
        let cands: Vec<&Ball> = self
            .intersecting(target, limit)
            .into_iter()
            .map(|i| &self.balls[i])
            .collect();
        net_covered(target, resolution, &cands, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(c: &[f64]) -> Point {
        Point::new(c.iter().copied()).unwrap()
    }

    fn ball(c: &[f64], r: f64) -> Ball {
        Ball::new(p(c), r).unwrap()
    }

    /// Area of the lens cut out by two unit disks at center distance 1.
    fn unit_lens_area() -> f64 {
        2.0 * PI / 3.0 - 3f64.sqrt() / 2.0
    }

    #[test]
    fn lens_oracle_matches_circle_intersection_formula() {
        // A = 2 r^2 acos(s / 2r) - (s / 2) sqrt(4 r^2 - s^2), r = s = 1
        let generic = 2.0 * (0.5f64).acos() - 0.5 * 3f64.sqrt();
        assert!((generic - unit_lens_area()).abs() < 1e-12);
    }

    #[test]
    fn containment_closed_sets() {
        let b = ball(&[0.0, 0.0], 1.0);
        assert!(b.contains(&p(&[0.0, 0.0])).unwrap());
        assert!(b.contains(&p(&[1.0, 0.0])).unwrap());
        assert!(b.contains(&p(&[0.6, 0.8])).unwrap());
        assert!(!b.contains(&p(&[1.0, 0.1])).unwrap());
        let c = Cube::new(p(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        assert!(c.contains(&p(&[1.0, 1.0, 1.0])).unwrap());
        assert!(!c.contains(&p(&[1.0, 1.0, 1.01])).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let b = ball(&[0.0, 0.0], 1.0);
        assert!(matches!(
            b.contains(&p(&[0.0])),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        let c = Cube::new(p(&[0.0]), 1.0).unwrap();
        assert!(c.contains(&p(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn invalid_construction() {
        assert!(Ball::new(p(&[0.0]), 0.0).is_err());
        assert!(Ball::new(p(&[0.0]), f64::INFINITY).is_err());
        assert!(Point::new([f64::NAN]).is_err());
        assert!(Point::new(Vec::<f64>::new()).is_err());
    }

    #[test]
    fn volumes() {
        assert!((ball_volume(1, 2.0) - 4.0).abs() < 1e-12);
        assert!((ball_volume(2, 1.0) - PI).abs() < 1e-12);
        assert!((ball_volume(3, 1.0) - 4.0 * PI / 3.0).abs() < 1e-12);
        assert!((ball_volume(4, 1.0) - PI * PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn stripe_membership() {
        let off = StripeConstraint::inactive();
        assert!(in_stripe(&p(&[0.0, 1e9]), &off));
        let s = StripeConstraint::new(1.0).unwrap();
        assert!(in_stripe(&p(&[100.0, 0.5]), &s));
        assert!(!in_stripe(&p(&[0.0, 1.5]), &s));
        assert!(in_stripe(&p(&[-7.0]), &s));
    }

    #[test]
    fn union_volume_known_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let two = [ball(&[0.0, 0.0], 1.0), ball(&[5.0, 0.0], 1.0)];
        let est = union_volume(&two, n, &mut rng).unwrap();
        assert!((est.point - 2.0 * PI).abs() <= 3.0 * est.standard_error());

        let r = 1.7;
        let one = [ball(&[0.3, -0.2], r)];
        let est = union_volume(&one, n, &mut rng).unwrap();
        assert!((est.point - PI * r * r).abs() <= 3.0 * est.standard_error());

        let lens = [ball(&[0.0, 0.0], 1.0), ball(&[1.0, 0.0], 1.0)];
        let est = union_volume(&lens, n, &mut rng).unwrap();
        let expected = 2.0 * PI - unit_lens_area();
        assert!((est.point - expected).abs() <= 3.0 * est.standard_error());

        assert!(matches!(union_volume(&[], 10, &mut rng), Err(Error::EmptyBallList)));
    }

    #[test]
    fn union_sampler_single_ball_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = [ball(&[1.0, -1.0], 2.0)];
        // 5 equal-area rings x 4 quadrants
        let mut counts = [0u32; 20];
        let n = 100_000;
        for _ in 0..n {
            let x = sample_uniform_in_union(&b, &mut rng).unwrap();
            let dx = x.coords()[0] - 1.0;
            let dy = x.coords()[1] + 1.0;
            let ring = (((dx * dx + dy * dy) / 4.0) * 5.0).floor().min(4.0) as usize;
            let quad = (dy.atan2(dx) + PI) / (PI / 2.0);
            counts[ring * 4 + (quad.floor() as usize).min(3)] += 1;
        }
        let e = n as f64 / 20.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let pval = 1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2);
        assert!(pval > 0.01, "chi2 {chi2} p {pval}");
    }

    #[test]
    fn union_sampler_duplicate_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dup = [ball(&[0.0, 0.0], 1.0), ball(&[0.0, 0.0], 1.0)];
        let n = 50_000;
        let inner = (0..n)
            .filter(|_| sample_uniform_in_union(&dup, &mut rng).unwrap().norm() < 0.5)
            .count();
        let phat = inner as f64 / n as f64;
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((phat - 0.25).abs() < 3.0 * se, "{phat}");
    }

    #[test]
    fn union_sampler_lens_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let balls = [ball(&[0.0, 0.0], 1.0), ball(&[1.0, 0.0], 1.0)];
        let expected = unit_lens_area() / (2.0 * PI - unit_lens_area());
        let n = 100_000;
        let mut in_lens = 0;
        for _ in 0..n {
            let x = sample_uniform_in_union(&balls, &mut rng).unwrap();
            assert!(balls.iter().any(|b| b.contains(&x).unwrap()));
            if balls.iter().all(|b| b.contains(&x).unwrap()) {
                in_lens += 1;
            }
        }
        let phat = in_lens as f64 / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((phat - expected).abs() < 3.0 * se, "{phat} vs {expected}");
    }

    #[test]
    fn coverage_examples() {
        let g = 1.3;
        let t = ball(&[0.0, 0.0], g);
        assert!(is_ball_covered(&t, &[ball(&[0.0, 0.0], 2.0 * g)], g / 50.0));
        assert!(!is_ball_covered(&t, &[], g / 50.0));

        // (0, 1) is at distance sqrt(1.36) > 1 from both centers.
        let unit = ball(&[0.0, 0.0], 1.0);
        let covers = [ball(&[0.6, 0.0], 1.0), ball(&[-0.6, 0.0], 1.0)];
        assert!((0.36f64 + 1.0).sqrt() > 1.0);
        assert!(!is_ball_covered(&unit, &covers, 0.05));
    }

    #[test]
    fn coverage_by_pieces() {
        // Four unit disks centered at (±0.5, ±0.5) cover B(0, 1): the farthest
        // point of B(0,1) from all four centers sits at distance < 1.
        let covers: Vec<Ball> = [(0.5, 0.5), (0.5, -0.5), (-0.5, 0.5), (-0.5, -0.5)]
            .iter()
            .map(|&(x, y)| ball(&[x, y], 1.0))
            .collect();
        assert!(is_ball_covered(&ball(&[0.0, 0.0], 1.0), &covers, 0.02));
        // Dropping one leaves the opposite corner region open.
        assert!(!is_ball_covered(&ball(&[0.0, 0.0], 1.0), &covers[..3], 0.02));
    }

    #[test]
    fn coverage_with_stripe_mask() {
        let target = ball(&[0.0, 0.0], 1.0);
        let band = [ball(&[-0.5, 0.0], 0.8), ball(&[0.5, 0.0], 0.8)];
        let stripe = StripeConstraint::new(0.3).unwrap();
        let refs: Vec<&Ball> = band.iter().collect();
        assert!(!net_covered(&target, 0.02, &refs, None));
        // Only the part with |y| <= 0.3 needs covering, and x is limited to
        // [-1, 1]; the two disks reach |x| = 1.3 at y = 0 and cover it.
        assert!(net_covered(&target, 0.02, &refs, Some(&stripe)));
    }

    #[test]
    fn ball_set_queries() {
        let mut set = BallSet::new(2, 1.0);
        set.push(ball(&[0.0, 0.0], 1.0));
        set.push(ball(&[0.5, 0.0], 1.0));
        set.push(ball(&[50.0, 0.0], 1.0));
        set.push(ball(&[0.0, 0.0], 200.0)); // oversized
        assert_eq!(set.first_containing(&[0.2, 0.0], 4), Some(0));
        assert_eq!(set.first_containing(&[1.4, 0.0], 4), Some(1));
        assert_eq!(set.first_containing(&[1.4, 0.0], 1), None);
        assert_eq!(set.first_containing(&[30.0, 0.0], 4), Some(3));
        assert_eq!(set.count_containing(&[0.2, 0.0], 4), 3);
        assert_eq!(set.count_containing(&[0.2, 0.0], 2), 2);
        let mut inter = set.intersecting(&ball(&[49.5, 0.0], 0.1), 4);
        inter.sort();
        assert_eq!(inter, vec![2, 3]);
        assert!((set.volume_sum(2) - 2.0 * PI).abs() < 1e-12);
        assert!(set.covers(&ball(&[0.0, 0.0], 100.0), 4, 1.0, None));
        assert!(!set.covers(&ball(&[0.0, 0.0], 1.2), 3, 0.02, None));
    }

    fn arb_ball(d: usize) -> impl Strategy<Value = Ball> {
        (prop::collection::vec(-3.0..3.0f64, d), 0.2..2.0f64)
            .prop_map(|(c, r)| Ball::new(Point::new(c).unwrap(), r).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn covered_by_itself(b in (1usize..=3).prop_flat_map(arb_ball)) {
            prop_assert!(is_ball_covered(&b, std::slice::from_ref(&b), b.radius / 20.0));
        }

        #[test]
        fn recursive_test_agrees_with_enumeration(
            (target, covers) in (1usize..=2).prop_flat_map(|d| (
                arb_ball(d),
                prop::collection::vec(arb_ball(d), 0..10),
            ))
        ) {
            let res = 0.1;
            let brute = net_all(&target, res, |x| covers.iter().any(|b| b.contains_tol(x)));
            prop_assert_eq!(is_ball_covered(&target, &covers, res), brute);
        }

        #[test]
        fn adding_covers_is_monotone(
            (target, covers, extra) in (1usize..=3).prop_flat_map(|d| (
                arb_ball(d),
                prop::collection::vec(arb_ball(d), 0..8),
                arb_ball(d),
            ))
        ) {
            let res = 0.05;
            if is_ball_covered(&target, &covers, res) {
                let mut more = covers.clone();
                more.push(extra);
                prop_assert!(is_ball_covered(&target, &more, res));
            }
        }

        #[test]
        fn shrinking_target_is_monotone(
            (target, covers, shrink) in (1usize..=3).prop_flat_map(|d| (
                arb_ball(d),
                prop::collection::vec(arb_ball(d), 1..12),
                0.1..1.0f64,
            ))
        ) {
            let res = 0.05;
            if is_ball_covered(&target, &covers, res) {
                let smaller = Ball::new(target.center.clone(), target.radius * shrink).unwrap();
                prop_assert!(is_ball_covered(&smaller, &covers, res));
            }
        }

        #[test]
        fn union_samples_lie_in_union(
            (balls, seed) in (1usize..=3).prop_flat_map(|d| (
                prop::collection::vec(arb_ball(d), 1..6),
                any::<u64>(),
            ))
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let x = sample_uniform_in_union(&balls, &mut rng).unwrap();
                prop_assert!(balls.iter().any(|b| b.contains(&x).unwrap()));
            }
        }

        #[test]
        fn disjoint_union_volume_is_additive(
            (d, radii, seed) in (1usize..=3).prop_flat_map(|d| (
                Just(d),
                prop::collection::vec(0.3..1.5f64, 1..4),
                any::<u64>(),
            ))
        ) {
            // Centers spaced 4 apart along the first axis keep balls disjoint.
            let balls: Vec<Ball> = radii
                .iter()
                .enumerate()
                .map(|(i, &r)| Ball::new(Point::on_axis(d, 0, 4.0 * i as f64), r).unwrap())
                .collect();
            let exact: f64 = balls.iter().map(Ball::volume).sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let est = union_volume(&balls, 20_000, &mut rng).unwrap();
            prop_assert!((est.point - exact).abs() <= 4.0 * est.standard_error().max(1e-12));
        }
    }
}
