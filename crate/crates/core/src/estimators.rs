//! Statistics over growth histories: hitting times and time constants,
//! shape deviation, strong infection, effective-outburst counts and
//! finite-horizon coexistence proxies.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{ball_volume, net_all, Ball, Point};
use crate::process::{GrowthProcess, InfectionHistory, InfectionType, Model, NormTarget, ProcessConfig};
use crate::stats::EstimateResult;
use crate::stochastics::RandomStream;
use crate::{Error, Result};

/// Shape deviation is refused below this time: `r(u)/t` is dominated by the
/// initial ball there.
pub const MIN_SHAPE_TIME: f64 = 1.0;

/// Censoring above this fraction marks a time-constant estimate invalid.
pub const MAX_CENSORED_FRACTION: f64 = 0.05;

/// `T̃(x)`, or the time the run was cut off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingTime {
    pub time: f64,
    pub censored: bool,
}

fn one_type_check(cfg: &ProcessConfig) -> Result<()> {
    if cfg.model != Model::OneType {
        return Err(Error::InvalidParameter("hitting times need a one-type configuration".into()));
    }
    Ok(())
}

/// Times at which the `γ`-balls around `targets` become fully infected
/// (ε-net test), all from one run of `cfg` on the streams of `root`.
///
/// The run is cut at `cfg.horizon_time` or `cfg.max_events`; targets not
/// covered by then are censored at the time reached.
pub fn hitting_times(
    cfg: &ProcessConfig,
    targets: &[Point],
    root: &RandomStream,
) -> Result<Vec<HittingTime>> {
    one_type_check(cfg)?;
    let gamma = cfg.gamma();
    let res = cfg.covering_resolution;
    let balls: Vec<Ball> = targets
        .iter()
        .map(|x| Ball {
            center: x.clone(),
            radius: gamma,
        })
        .collect();
    let mut proc = GrowthProcess::with_stream(cfg.clone(), root)?;
    let mut out: Vec<Option<f64>> = balls
        .iter()
        .map(|b| proc.history().covers(b, res).then_some(0.0))
        .collect();
    while out.iter().any(Option::is_none) {
        let o = match proc.step_until(cfg.horizon_time) {
            Ok(Some(o)) => o.clone(),
            Ok(None) | Err(Error::Explosion { .. }) => break,
            Err(e) => return Err(e),
        };
        let new = o.ball();
        for (slot, b) in out.iter_mut().zip(&balls) {
            if slot.is_none() && new.intersects(b) && proc.history().covers(b, res) {
                *slot = Some(o.time);
            }
        }
    }
    let reached = proc.clock();
    Ok(out
        .into_iter()
        .map(|t| match t {
            Some(time) => HittingTime {
                time,
                censored: false,
            },
            None => HittingTime {
                time: reached,
                censored: true,
            },
        })
        .collect())
}

/// `T̃(x)` for a single point.
#[allow(non_snake_case)]
pub fn hitting_time_T_tilde(
    cfg: &ProcessConfig,
    x: &Point,
    root: &RandomStream,
) -> Result<HittingTime> {
    Ok(hitting_times(cfg, std::slice::from_ref(x), root)?[0])
}

/// `n e_1`.
pub fn axis_target(d: usize, n: f64) -> Point {
    Point::on_axis(d, 0, n)
}

/// Per-replica `T̃(n e_1)` profiles, replica `i` on `RandomStream::replica(seed, i)`.
pub fn hitting_profiles(
    cfg: &ProcessConfig,
    n_list: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<HittingTime>>> {
    let targets: Vec<Point> = n_list.iter().map(|&n| axis_target(cfg.d, n)).collect();
    (0..replicas)
        .into_par_iter()
        .map(|i| hitting_times(cfg, &targets, &RandomStream::replica(seed, i as u64)))
        .collect()
}

/// Summary of `T̃(n)/n` profiles: the estimate at the largest `n`, with
/// diagnostics `profile[n=..]`, `profile_se[n=..]`, `censored_fraction` and
/// `valid` (0 when censoring exceeds [`MAX_CENSORED_FRACTION`]).
/// Censored replicas are excluded. `scale` multiplies every time (use `λ`
/// to express a rate-`λ` process in unit-rate time).
pub fn summarize_profiles(
    profiles: &[Vec<HittingTime>],
    n_list: &[f64],
    scale: f64,
) -> Result<EstimateResult> {
    let last = n_list.len() - 1;
    let mut result: Option<EstimateResult> = None;
    let mut diag = Vec::new();
    let mut censored_any = 0usize;
    for (k, &n) in n_list.iter().enumerate() {
        let vals: Vec<f64> = profiles
            .iter()
            .filter(|p| !p[k].censored)
            .map(|p| scale * p[k].time / n)
            .collect();
        censored_any = censored_any.max(profiles.len() - vals.len());
        if vals.is_empty() {
            return Err(Error::InvalidParameter(format!("every replica censored at n = {n}")));
        }
        let est = EstimateResult::from_samples(&vals);
        diag.push((format!("profile[n={n}]"), est.point));
        diag.push((format!("profile_se[n={n}]"), est.standard_error()));
        if k == last {
            result = Some(est);
        }
    }
    let censored = censored_any as f64 / profiles.len() as f64;
    let mut r = result.expect("nonempty n list");
    for (k, v) in diag {
        r = r.with_diagnostic(k, v);
    }
    Ok(r.with_diagnostic("censored_fraction", censored)
        .with_diagnostic("valid", f64::from(u8::from(censored <= MAX_CENSORED_FRACTION))))
}

/// Time constant estimate: mean of `T̃(n)/n` at the largest `n` of `n_list`
/// over `replicas` runs of the one-type configuration `cfg` (unit rate for
/// `μ`, an active stripe for `μ_b`). Times are in the process's own clock;
/// `cfg.horizon_time` is the censoring time.
pub fn estimate_mu(
    cfg: &ProcessConfig,
    n_list: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<EstimateResult> {
    one_type_check(cfg)?;
    if n_list.is_empty() || n_list.iter().any(|&n| !(n > 0.0 && n.is_finite())) || replicas == 0 {
        return Err(Error::InvalidParameter(
            "estimate_mu needs positive distances and replicas".into(),
        ));
    }
    let profiles = hitting_profiles(cfg, n_list, replicas, seed)?;
    summarize_profiles(&profiles, n_list, 1.0)
}

/// `k` unit vectors spread over the sphere: equally spaced angles in the
/// plane, a Fibonacci lattice in `d = 3`, and fixed pseudo-random directions
/// otherwise.
pub fn spread_directions(d: usize, k: usize) -> Vec<Vec<f64>> {
    match d {
        1 => (0..k).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }]).collect(),
        2 => (0..k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..k)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = RandomStream::new(0, d as u64);
            (0..k)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect()
        }
    }
}

/// `max_u |r(u)/t - λ/μ̂| / (λ/μ̂)` over `directions` spread unit vectors,
/// where `r(u)` is the farthest infected point along `u` at time `t`
/// (computed exactly from ray-ball intersections).
pub fn shape_deviation(
    h: &InfectionHistory,
    t: f64,
    lambda: f64,
    mu_hat: f64,
    directions: usize,
) -> Result<f64> {
    if !(t >= MIN_SHAPE_TIME) {
        return Err(Error::InvalidParameter(format!(
            "shape deviation needs t >= {MIN_SHAPE_TIME}, got {t}"
        )));
    }
    if !(mu_hat > 0.0) || !(lambda > 0.0) || directions == 0 {
        return Err(Error::InvalidParameter(
            "shape deviation needs positive μ̂, λ and directions".into(),
        ));
    }
    let speed = lambda / mu_hat;
    Ok(spread_directions(h.d, directions)
        .iter()
        .map(|u| ((h.ray_extent(u, t) / t - speed) / speed).abs())
        .fold(0.0, f64::max))
}

/// Whether every ε-net point of `B(x, γ)` is of type `itype` at time `t`.
pub fn strongly_infected(
    h: &InfectionHistory,
    x: &Point,
    gamma: f64,
    t: f64,
    itype: InfectionType,
    resolution: f64,
) -> bool {
    // lattice points on the boundary would otherwise be classified with
    // round-off against a tangent ball
    let target = Ball {
        center: x.clone(),
        radius: gamma * (1.0 - 1e-9),
    };
    net_all(&target, resolution, |p| h.classify_coords(p, t) == Some(itype))
}

/// Effective outbursts with time `<= t` centered in `region`.
pub fn count_effective_in_region(h: &InfectionHistory, region: &Ball, t: f64) -> usize {
    h.outbursts
        .iter()
        .take_while(|o| o.time <= t)
        .filter(|o| o.effective && o.center.dist2(&region.center) <= region.radius * region.radius)
        .count()
}

/// `(4|Λ| / (λ μ̂^{-1})) E[R]`, the bound on the mean number of effective
/// outbursts in `Λ` for a `(1, λ)` two-type process.
pub fn effective_outburst_bound(region: &Ball, lambda: f64, mu_hat: f64, mean_radius: f64) -> f64 {
    let vol = ball_volume(region.dim(), region.radius);
    4.0 * vol * mu_hat / lambda * mean_radius
}

/// Finite-horizon survival surrogate for both types.
///
/// Type `i` counts as alive when it made at least one effective outburst in
/// `(horizon - window, horizon]` and its norm at `horizon` exceeds twice its
/// norm at `horizon / 2`. This is a proxy, not the tail event itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoexistenceProxy {
    pub horizon: f64,
    pub window: f64,
    pub type1_alive: bool,
    pub type2_alive: bool,
}

impl CoexistenceProxy {
    pub const RULE: &'static str =
        "alive iff >=1 effective outburst in (horizon-window, horizon] and norm(horizon) > 2 norm(horizon/2)";

    pub fn both_alive(&self) -> bool {
        self.type1_alive && self.type2_alive
    }
}

pub fn coexistence_proxy(h: &InfectionHistory, horizon: f64, window: f64) -> Result<CoexistenceProxy> {
    if !(horizon > window && window > 0.0) {
        return Err(Error::InvalidParameter("coexistence proxy needs horizon > window > 0".into()));
    }
    if h.model != Model::TwoType {
        return Err(Error::InvalidParameter("coexistence proxy needs a two-type history".into()));
    }
    let alive = |itype: InfectionType| {
        let recent = h
            .outbursts
            .iter()
            .any(|o| o.itype == itype && o.effective && o.time > horizon - window && o.time <= horizon);
        let target = NormTarget::Type(itype);
        recent && h.norm_sup(horizon, target) > 2.0 * h.norm_sup(horizon / 2.0, target)
    };
    Ok(CoexistenceProxy {
        horizon,
        window,
        type1_alive: alive(InfectionType::Type1),
        type2_alive: alive(InfectionType::Type2),
    })
}

/// Results table with columns
/// `statistic,point,ci_low,ci_high,replicas,config_hash,seed`.
pub fn write_results_csv<W: Write>(
    mut w: W,
    rows: &[(String, EstimateResult)],
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    writeln!(w, "statistic,point,ci_low,ci_high,replicas,config_hash,seed")?;
    for (name, e) in rows {
        writeln!(
            w,
            "{name},{},{},{},{},{config_hash},{seed}",
            e.point, e.ci_low, e.ci_high, e.replicas
        )?;
    }
    Ok(())
}

/// Uniformly random unit vector (for tests and experiments needing random
/// rather than spread directions).
pub fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}
