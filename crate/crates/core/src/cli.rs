//! Flat `key = value` experiment configs and the experiment runner behind
//! the `crgrowth` binary.
//!
//! A config is one `key = value` per line; `#` starts a comment. Every
//! problem in a config is reported at once. [`ExperimentSpec::echo`] prints
//! the canonical form, which parses back to the same spec and is hashed
//! into the `config_hash` column of every output.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::brw::{estimate_zeta, AncestorMode, BrwConfig, BrwPopulation};
use crate::couplings::{
    couple_lambda_family, couple_one_type_vs_brw, couple_one_type_vs_two_type_union,
    couple_two_type_vs_one_type, member_label, CoupledTrace, CouplingConfig,
};
use crate::estimators::{
    coexistence_proxy, count_effective_in_region, effective_outburst_bound, estimate_mu,
    shape_deviation, write_results_csv,
};
use crate::geometry::{Ball, Point, StripeConstraint};
use crate::process::{
    GrowthProcess, InfectionHistory, InfectionType, InitialSets, Model, NormTarget, ProcessConfig,
};
use crate::stats::EstimateResult;
use crate::stochastics::{RadiusDistribution, RadiusFamily, RandomStream};
use crate::{Error, Result};

/// Experiment kinds, named as on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Simulate,
    EstimateMu,
    ShapeCheck,
    Coexist,
    CoupleCheck,
    BrwSpeed,
    EffectiveCount,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Simulate,
        Kind::EstimateMu,
        Kind::ShapeCheck,
        Kind::Coexist,
        Kind::CoupleCheck,
        Kind::BrwSpeed,
        Kind::EffectiveCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::EstimateMu => "estimate-mu",
            Kind::ShapeCheck => "shape-check",
            Kind::Coexist => "coexist",
            Kind::CoupleCheck => "couple-check",
            Kind::BrwSpeed => "brw-speed",
            Kind::EffectiveCount => "effective-count",
        }
    }

    fn default_model(self) -> Model {
        match self {
            Kind::Coexist | Kind::EffectiveCount => Model::TwoType,
            _ => Model::OneType,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

/// Every accepted key. Kept in echo order.
pub const KEYS: &[&str] = &[
    "kind",
    "seed",
    "replicas",
    "d",
    "model",
    "lambda",
    "lambda_1",
    "lambda_2",
    "radius.family",
    "radius.value",
    "radius.a",
    "radius.b",
    "radius.rate",
    "radius.scale",
    "radius.shape",
    "allow_inadmissible",
    "horizon",
    "max_events",
    "stripe.b",
    "covering_resolution",
    "initial_1",
    "initial_2",
    "mu.n_list",
    "mu.horizon",
    "mu.hat",
    "shape.time",
    "shape.directions",
    "shape.tolerance",
    "coexist.window",
    "coexist.alt_initial_1",
    "coexist.alt_initial_2",
    "couple.lambda",
    "couple.lambdas",
    "couple.audit_points",
    "couple.brw_cap",
    "brw.horizon",
    "brw.ancestor",
    "brw.population_cap",
    "region.center",
    "region.radius",
];

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kind: Kind,
    pub seed: u64,
    pub replicas: usize,
    /// Process parameters; `horizon_time` is the run length (the censoring
    /// time for hitting times is `mu_horizon`).
    pub process: ProcessConfig,
    pub mu_n_list: Vec<f64>,
    pub mu_horizon: f64,
    /// Fixed `μ̂` for shape-check and effective-count; estimated when absent.
    pub mu_hat: Option<f64>,
    pub shape_time: f64,
    pub shape_directions: usize,
    pub shape_tolerance: f64,
    pub coexist_window: f64,
    pub coexist_alt_initial: Option<InitialSets>,
    pub couple_lambda: f64,
    pub couple_lambdas: Vec<f64>,
    pub couple_audit_points: usize,
    pub couple_brw_cap: usize,
    pub brw_horizon: f64,
    pub brw_ancestor: AncestorMode,
    pub brw_population_cap: usize,
    pub region: Ball,
}

struct Entry<'a> {
    value: &'a str,
    line: usize,
}

struct Fields<'a> {
    map: BTreeMap<&'a str, Entry<'a>>,
    errors: Vec<String>,
}

impl<'a> Fields<'a> {
    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn parse_with<T>(
        &mut self,
        key: &str,
        what: &str,
        f: impl FnOnce(&str) -> std::result::Result<T, String>,
    ) -> Option<T> {
        let e = self.map.get(key)?;
        match f(e.value) {
            Ok(v) => Some(v),
            Err(msg) => {
                let line = e.line;
                let value = e.value;
                self.errors.push(if msg.is_empty() {
                    format!("line {line}: `{key}` expects {what}, got `{value}`")
                } else {
                    format!("line {line}: `{key}` expects {what}, got `{value}` ({msg})")
                });
                None
            }
        }
    }

    fn opt<T: FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        self.parse_with(key, what, |v| v.parse::<T>().map_err(|_| String::new()))
    }

    fn get<T: FromStr>(&mut self, key: &str, what: &str, default: T) -> T {
        self.opt(key, what).unwrap_or(default)
    }

    fn reject(&mut self, key: &str, why: &str) {
        if let Some(e) = self.map.get(key) {
            let line = e.line;
            self.errors.push(format!("line {line}: `{key}` {why}"));
        }
    }
}

fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| String::new()))
        .collect()
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    Point::new(parse_f64_list(s)?).map_err(|e| e.to_string())
}

/// `x1,...,xd:r` entries separated by `;`.
fn parse_balls(s: &str) -> std::result::Result<Vec<Ball>, String> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (c, r) = t.split_once(':').ok_or_else(String::new)?;
            let r: f64 = r.trim().parse().map_err(|_| String::new())?;
            Ball::new(parse_point(c)?, r).map_err(|e| e.to_string())
        })
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn fmt_balls(v: &[Ball]) -> String {
    v.iter()
        .map(|b| format!("{}:{}", fmt_list(b.center.coords()), b.radius))
        .collect::<Vec<_>>()
        .join("; ")
}

fn parse_model(s: &str) -> std::result::Result<Model, String> {
    match s {
        "one-type" => Ok(Model::OneType),
        "two-type" => Ok(Model::TwoType),
        _ => Err(String::new()),
    }
}

fn model_name(m: Model) -> &'static str {
    match m {
        Model::OneType => "one-type",
        Model::TwoType => "two-type",
    }
}

fn parse_ancestor(s: &str) -> std::result::Result<AncestorMode, String> {
    match s {
        "deterministic" => Ok(AncestorMode::Deterministic),
        "random" => Ok(AncestorMode::Random),
        _ => Err(String::new()),
    }
}

fn ancestor_name(a: AncestorMode) -> &'static str {
    match a {
        AncestorMode::Deterministic => "deterministic",
        AncestorMode::Random => "random",
    }
}

const RADIUS_KEYS: [&str; 6] = [
    "radius.value",
    "radius.a",
    "radius.b",
    "radius.rate",
    "radius.scale",
    "radius.shape",
];

fn parse_radius(f: &mut Fields) -> Option<RadiusDistribution> {
    let family = f
        .parse_with("radius.family", "one of deterministic, uniform, exponential, pareto", |v| {
            match v {
                "deterministic" | "uniform" | "exponential" | "pareto" => Ok(v.to_string()),
                _ => Err(String::new()),
            }
        })
        .or_else(|| (!f.has("radius.family")).then(|| "deterministic".to_string()))?;
    let used: &[&str] = match family.as_str() {
        "deterministic" => &["radius.value"],
        "uniform" => &["radius.a", "radius.b"],
        "exponential" => &["radius.rate"],
        _ => &["radius.scale", "radius.shape"],
    };
    for k in RADIUS_KEYS {
        if !used.contains(&k) {
            f.reject(k, &format!("does not apply to the {family} family"));
        }
    }
    let num = "a number";
    let fam = match family.as_str() {
        "deterministic" => RadiusFamily::Deterministic {
            r: f.get("radius.value", num, 1.0),
        },
        "uniform" => {
            let (a, b) = (f.opt("radius.a", num), f.opt("radius.b", num));
            if a.is_none() || b.is_none() {
                f.errors.push("uniform radius needs radius.a and radius.b".into());
            }
            RadiusFamily::Uniform { a: a?, b: b? }
        }
        "exponential" => RadiusFamily::Exponential {
            rate: f.get("radius.rate", num, 1.0),
        },
        _ => {
            let (scale, shape) = (f.opt("radius.scale", num), f.opt("radius.shape", num));
            if scale.is_none() || shape.is_none() {
                f.errors.push("pareto radius needs radius.scale and radius.shape".into());
            }
            RadiusFamily::Pareto {
                scale: scale?,
                shape: shape?,
            }
        }
    };
    match RadiusDistribution::new(fam) {
        Ok(r) => Some(r),
        Err(e) => {
            f.errors.push(e.to_string());
            None
        }
    }
}

fn parse_initial(f: &mut Fields, k1: &str, k2: &str, model: Model, d: usize, gamma: f64) -> Option<InitialSets> {
    let what = "balls `x1,...,xd:r; ...`";
    let b1 = f.parse_with(k1, what, parse_balls);
    let b2 = f.parse_with(k2, what, parse_balls);
    if model == Model::OneType {
        f.reject(k2, "applies to two-type models only");
    }
    if b1.is_none() && b2.is_none() {
        return None;
    }
    let default = match model {
        Model::OneType => InitialSets::one_type_default(d, gamma),
        Model::TwoType => InitialSets::two_type_default(d, gamma),
    };
    Some(InitialSets {
        type_1: b1.unwrap_or(default.type_1),
        type_2: match model {
            Model::OneType => Vec::new(),
            Model::TwoType => b2.unwrap_or(default.type_2),
        },
    })
}

/// [`parse_spec_as`] with the kind taken from the config (default
/// `simulate`).
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    parse_spec_as(text, None)
}

/// Parses and validates a config. A `kind` argument overrides a missing
/// `kind` key and must agree with a present one. Errors list every problem.
pub fn parse_spec_as(text: &str, kind: Option<Kind>) -> Result<ExperimentSpec> {
    let mut f = Fields {
        map: BTreeMap::new(),
        errors: Vec::new(),
    };
    let mut seen: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            f.errors.push(format!("line {line}: expected `key = value`, got `{content}`"));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            f.errors.push(format!("line {line}: unknown key `{k}`"));
            continue;
        }
        seen.entry(k).or_default().push(line);
        f.map.entry(k).or_insert(Entry { value: v, line });
    }
    for (k, lines) in &seen {
        if lines.len() > 1 {
            let l: Vec<String> = lines.iter().map(usize::to_string).collect();
            f.errors.push(format!("duplicate key `{k}` on lines {}", l.join(", ")));
        }
    }

    let file_kind: Option<Kind> = f.parse_with("kind", "an experiment kind", |v| v.parse());
    let kind = match (kind, file_kind) {
        (Some(a), Some(b)) if a != b => {
            f.errors.push(format!("config declares kind `{b}` but `{a}` was requested"));
            a
        }
        (Some(a), _) => a,
        (None, b) => b.unwrap_or(Kind::Simulate),
    };

    let int = "a nonnegative integer";
    let num = "a number";
    let seed: u64 = f.get("seed", int, 0);
    let replicas: usize = f.get("replicas", int, 200);
    let d: usize = f.get("d", int, 2);
    let model = f
        .parse_with("model", "one-type or two-type", parse_model)
        .unwrap_or(kind.default_model());
    let radius = parse_radius(&mut f);
    let allow_inadmissible: bool = f.get("allow_inadmissible", "true or false", false);

    let (lambda_1, lambda_2) = match model {
        Model::OneType => {
            f.reject("lambda_1", "applies to two-type models; use `lambda`");
            f.reject("lambda_2", "applies to two-type models; use `lambda`");
            (f.get("lambda", num, 1.0), 0.0)
        }
        Model::TwoType => {
            f.reject("lambda", "applies to one-type models; use `lambda_1` and `lambda_2`");
            (f.get("lambda_1", num, 1.0), f.get("lambda_2", num, 1.0))
        }
    };
    let horizon: f64 = f.get("horizon", num, 10.0);
    let max_events: usize = f.get("max_events", int, 1_000_000);
    let stripe_b: Option<f64> = f.opt("stripe.b", num);
    let resolution: Option<f64> = f.opt("covering_resolution", num);
    let gamma = radius.map_or(1.0, |r| r.gamma());
    let initial = parse_initial(&mut f, "initial_1", "initial_2", model, d, gamma);
    let alt = parse_initial(
        &mut f,
        "coexist.alt_initial_1",
        "coexist.alt_initial_2",
        Model::TwoType,
        d,
        gamma,
    );

    let list = "a comma-separated list of numbers";
    let mu_n_list = f
        .parse_with("mu.n_list", list, parse_f64_list)
        .unwrap_or_else(|| vec![10.0, 20.0, 30.0]);
    let mu_horizon: f64 = f.get("mu.horizon", num, 1000.0);
    let mu_hat: Option<f64> = f.opt("mu.hat", num);
    let shape_time: f64 = f.get("shape.time", num, 40.0);
    let shape_directions: usize = f.get("shape.directions", int, 32);
    let shape_tolerance: f64 = f.get("shape.tolerance", num, 0.15);
    let coexist_window: f64 = f.get("coexist.window", num, 2.0);
    let couple_lambda: f64 = f.get("couple.lambda", num, 0.5);
    let couple_lambdas = f
        .parse_with("couple.lambdas", list, parse_f64_list)
        .unwrap_or_else(|| vec![0.25, 0.5, 0.75, 1.0]);
    let couple_audit_points: usize = f.get("couple.audit_points", int, 1000);
    let couple_brw_cap: usize = f.get("couple.brw_cap", int, 200_000);
    let brw_horizon: f64 = f.get("brw.horizon", num, 3.0);
    let brw_ancestor = f
        .parse_with("brw.ancestor", "deterministic or random", parse_ancestor)
        .unwrap_or(AncestorMode::Deterministic);
    let brw_population_cap: usize = f.get("brw.population_cap", int, 1_000_000);
    let center = f
        .parse_with("region.center", "a comma-separated point", parse_point)
        .unwrap_or_else(|| Point::origin(d));
    let region_radius: f64 = f.get("region.radius", num, gamma);

    let Some(radius) = radius else {
        return Err(Error::Config(f.errors));
    };
    let mut process = match model {
        Model::OneType => ProcessConfig::one_type(d, lambda_1, radius),
        Model::TwoType => ProcessConfig::two_type(d, lambda_1, lambda_2, radius),
    }
    .with_horizon(horizon)
    .with_seed(seed)
    .with_max_events(max_events);
    if let Some(r) = resolution {
        process = process.with_resolution(r);
    }
    if let Some(b) = stripe_b {
        match StripeConstraint::new(b) {
            Ok(s) => process = process.with_stripe(s),
            Err(e) => f.errors.push(format!("stripe.b: {e}")),
        }
    }
    process.initial = initial;
    process.allow_inadmissible = allow_inadmissible;

    let region = match Ball::new(center, region_radius) {
        Ok(b) => b,
        Err(e) => {
            f.errors.push(format!("region: {e}"));
            Ball {
                center: Point::origin(d),
                radius: gamma,
            }
        }
    };
    let spec = ExperimentSpec {
        kind,
        seed,
        replicas,
        process,
        mu_n_list,
        mu_horizon,
        mu_hat,
        shape_time,
        shape_directions,
        shape_tolerance,
        coexist_window,
        coexist_alt_initial: alt,
        couple_lambda,
        couple_lambdas,
        couple_audit_points,
        couple_brw_cap,
        brw_horizon,
        brw_ancestor,
        brw_population_cap,
        region,
    };
    f.errors.extend(spec.problems());
    if f.errors.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Config(f.errors))
    }
}

impl ExperimentSpec {
    /// Constraint violations of the assembled spec.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.process.problems();
        let p = &self.process;
        if self.replicas == 0 {
            out.push("replicas must be at least 1".into());
        }
        if self.region.dim() != p.d {
            out.push(format!("region.center has dimension {}, expected {}", self.region.dim(), p.d));
        }
        if let Some(init) = &self.coexist_alt_initial {
            if init.type_1.iter().chain(&init.type_2).any(|b| b.dim() != p.d) {
                out.push(format!("coexist.alt_initial balls must have dimension {}", p.d));
            }
        }
        if self.mu_n_list.is_empty() || self.mu_n_list.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            out.push("mu.n_list must hold positive distances".into());
        }
        if !(self.mu_horizon > 0.0) {
            out.push("mu.horizon must be positive".into());
        }
        if self.mu_hat.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
            out.push("mu.hat must be positive".into());
        }
        let in_unit = |l: &f64| (0.0..=1.0).contains(l);
        if !in_unit(&self.couple_lambda) {
            out.push("couple.lambda must lie in [0, 1]".into());
        }
        if self.couple_lambdas.is_empty()
            || !self.couple_lambdas.iter().all(in_unit)
            || self.couple_lambdas.windows(2).any(|w| w[0] > w[1])
        {
            out.push("couple.lambdas must be a nonempty sorted list in [0, 1]".into());
        }
        let model_needed = match self.kind {
            Kind::EstimateMu | Kind::ShapeCheck => Some(Model::OneType),
            Kind::Coexist | Kind::EffectiveCount => Some(Model::TwoType),
            _ => None,
        };
        if let Some(m) = model_needed {
            if p.model != m {
                out.push(format!("kind `{}` needs model = {}", self.kind, model_name(m)));
            }
        }
        match self.kind {
            Kind::ShapeCheck => {
                if !(self.shape_time >= crate::estimators::MIN_SHAPE_TIME) {
                    out.push(format!(
                        "shape.time must be at least {}",
                        crate::estimators::MIN_SHAPE_TIME
                    ));
                }
                if self.shape_directions == 0 {
                    out.push("shape.directions must be positive".into());
                }
            }
            Kind::Coexist => {
                if !(p.horizon_time > self.coexist_window && self.coexist_window > 0.0) {
                    out.push("coexist needs horizon > coexist.window > 0".into());
                }
            }
            Kind::EffectiveCount => {
                if !(p.lambda_1 > 0.0 && p.lambda_2 > 0.0) {
                    out.push("effective-count needs both intensities positive".into());
                }
            }
            Kind::BrwSpeed => {
                if !(self.brw_horizon > 0.0 && self.brw_horizon.is_finite()) {
                    out.push("brw.horizon must be positive".into());
                }
                if !p.radius.mgf_exists {
                    out.push("brw-speed needs a radius law with an exponential moment".into());
                }
            }
            _ => {}
        }
        out
    }

    /// Canonical `key = value` form; parses back to an equal spec.
    pub fn echo(&self) -> String {
        let p = &self.process;
        let mut kv: Vec<(&str, String)> = vec![
            ("kind", self.kind.to_string()),
            ("seed", self.seed.to_string()),
            ("replicas", self.replicas.to_string()),
            ("d", p.d.to_string()),
            ("model", model_name(p.model).to_string()),
        ];
        match p.model {
            Model::OneType => kv.push(("lambda", p.lambda_1.to_string())),
            Model::TwoType => {
                kv.push(("lambda_1", p.lambda_1.to_string()));
                kv.push(("lambda_2", p.lambda_2.to_string()));
            }
        }
        match p.radius.family {
            RadiusFamily::Deterministic { r } => {
                kv.push(("radius.family", "deterministic".into()));
                kv.push(("radius.value", r.to_string()));
            }
            RadiusFamily::Uniform { a, b } => {
                kv.push(("radius.family", "uniform".into()));
                kv.push(("radius.a", a.to_string()));
                kv.push(("radius.b", b.to_string()));
            }
            RadiusFamily::Exponential { rate } => {
                kv.push(("radius.family", "exponential".into()));
                kv.push(("radius.rate", rate.to_string()));
            }
            RadiusFamily::Pareto { scale, shape } => {
                kv.push(("radius.family", "pareto".into()));
                kv.push(("radius.scale", scale.to_string()));
                kv.push(("radius.shape", shape.to_string()));
            }
        }
        kv.push(("allow_inadmissible", p.allow_inadmissible.to_string()));
        kv.push(("horizon", p.horizon_time.to_string()));
        kv.push(("max_events", p.max_events.to_string()));
        if p.stripe.active {
            kv.push(("stripe.b", p.stripe.b.to_string()));
        }
        kv.push(("covering_resolution", p.covering_resolution.to_string()));
        if let Some(init) = &p.initial {
            kv.push(("initial_1", fmt_balls(&init.type_1)));
            if p.model == Model::TwoType {
                kv.push(("initial_2", fmt_balls(&init.type_2)));
            }
        }
        kv.push(("mu.n_list", fmt_list(&self.mu_n_list)));
        kv.push(("mu.horizon", self.mu_horizon.to_string()));
        if let Some(m) = self.mu_hat {
            kv.push(("mu.hat", m.to_string()));
        }
        kv.push(("shape.time", self.shape_time.to_string()));
        kv.push(("shape.directions", self.shape_directions.to_string()));
        kv.push(("shape.tolerance", self.shape_tolerance.to_string()));
        kv.push(("coexist.window", self.coexist_window.to_string()));
        if let Some(init) = &self.coexist_alt_initial {
            kv.push(("coexist.alt_initial_1", fmt_balls(&init.type_1)));
            kv.push(("coexist.alt_initial_2", fmt_balls(&init.type_2)));
        }
        kv.push(("couple.lambda", self.couple_lambda.to_string()));
        kv.push(("couple.lambdas", fmt_list(&self.couple_lambdas)));
        kv.push(("couple.audit_points", self.couple_audit_points.to_string()));
        kv.push(("couple.brw_cap", self.couple_brw_cap.to_string()));
        kv.push(("brw.horizon", self.brw_horizon.to_string()));
        kv.push(("brw.ancestor", ancestor_name(self.brw_ancestor).into()));
        kv.push(("brw.population_cap", self.brw_population_cap.to_string()));
        kv.push(("region.center", fmt_list(self.region.center.coords())));
        kv.push(("region.radius", self.region.radius.to_string()));
        let mut s = String::new();
        for (k, v) in kv {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`Self::echo`].
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.echo().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn replica(&self, i: usize) -> RandomStream {
        RandomStream::replica(self.seed, i as u64)
    }

    fn coupling_config(&self) -> CouplingConfig {
        let p = &self.process;
        let mut cc = CouplingConfig::new(p.d, p.radius, p.horizon_time)
            .with_audit_points(self.couple_audit_points)
            .with_brw_cap(self.couple_brw_cap);
        cc.covering_resolution = p.covering_resolution;
        cc.max_events = p.max_events;
        cc
    }

    /// Unit-rate one-type version of the process for `μ̂`.
    fn mu_config(&self) -> ProcessConfig {
        let p = &self.process;
        let mut c = ProcessConfig::one_type(p.d, 1.0, p.radius)
            .with_horizon(self.mu_horizon)
            .with_max_events(p.max_events)
            .with_resolution(p.covering_resolution);
        c.allow_inadmissible = p.allow_inadmissible;
        c
    }

    fn mu_hat_or_estimate(&self) -> Result<EstimateResult> {
        match self.mu_hat {
            Some(m) => Ok(EstimateResult::from_mean_se(m, 0.0, 1)),
            None => estimate_mu(&self.mu_config(), &self.mu_n_list, self.replicas, self.seed),
        }
    }
}

/// Outcome of a run: the rows written to `results.csv` and the certificate
/// verdict (couple-check only).
#[derive(Clone, Debug)]
pub struct RunReport {
    pub results: Vec<(String, EstimateResult)>,
    pub certificates_pass: bool,
    pub config_hash: String,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.certificates_pass {
            0
        } else {
            2
        }
    }
}

/// Process exit code for an error: 1 config, 2 certificate, 3 guard, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::CertificateViolation { .. } => 2,
        Error::RejectionGuard(_) | Error::Explosion { .. } | Error::CandidateTie(_) => 3,
        Error::Io(_) | Error::Json(_) => 4,
        _ => 1,
    }
}

fn point_row(name: &str, v: f64, replicas: usize) -> (String, EstimateResult) {
    (name.to_string(), EstimateResult::from_mean_se(v, 0.0, replicas))
}

fn profile_rows(prefix: &str, est: &EstimateResult, n_list: &[f64]) -> Vec<(String, EstimateResult)> {
    n_list
        .iter()
        .filter_map(|n| {
            let p = *est.diagnostics.get(&format!("profile[n={n}]"))?;
            let se = *est.diagnostics.get(&format!("profile_se[n={n}]"))?;
            Some((format!("{prefix}[n={n}]"), EstimateResult::from_mean_se(p, se, est.replicas)))
        })
        .collect()
}

struct Artifacts {
    results: Vec<(String, EstimateResult)>,
    /// Pre-rendered JSONL.
    events: Vec<u8>,
    certificates: Option<(Vec<u8>, bool)>,
}

fn history_jsonl(out: &mut Vec<u8>, h: &InfectionHistory, header: serde_json::Value) -> Result<()> {
    h.write_jsonl(out, &header)
}

fn run_histories(spec: &ExperimentSpec, cfg: &ProcessConfig) -> Result<Vec<InfectionHistory>> {
    (0..spec.replicas)
        .into_par_iter()
        .map(|i| {
            let mut g = GrowthProcess::with_stream(cfg.clone(), &spec.replica(i))?;
            g.run_until(cfg.horizon_time)?;
            Ok(g.into_history())
        })
        .collect()
}

fn simulate(spec: &ExperimentSpec, hash: &str) -> Result<Artifacts> {
    let hs = run_histories(spec, &spec.process)?;
    let t = spec.process.horizon_time;
    let stat = |f: &dyn Fn(&InfectionHistory) -> f64| {
        EstimateResult::from_samples(&hs.iter().map(f).collect::<Vec<_>>())
    };
    let mut results = vec![
        ("events".to_string(), stat(&|h| h.outbursts.len() as f64)),
        (
            "effective_events".to_string(),
            stat(&|h| h.outbursts.iter().filter(|o| o.effective).count() as f64),
        ),
        ("norm_sup".to_string(), stat(&|h| h.norm_sup(t, NormTarget::All))),
    ];
    if spec.process.model == Model::TwoType {
        for (name, it) in [("norm_sup_type1", InfectionType::Type1), ("norm_sup_type2", InfectionType::Type2)] {
            results.push((name.to_string(), stat(&|h| h.norm_sup(t, NormTarget::Type(it)))));
        }
    }
    let mut events = Vec::new();
    for (i, h) in hs.iter().enumerate() {
        history_jsonl(&mut events, h, json!({"replica": i, "config_hash": hash, "seed": spec.seed}))?;
    }
    Ok(Artifacts {
        results,
        events,
        certificates: None,
    })
}

fn estimate_mu_kind(spec: &ExperimentSpec) -> Result<Artifacts> {
    let p = &spec.process;
    let cfg = p.clone().with_horizon(spec.mu_horizon);
    let est = estimate_mu(&cfg, &spec.mu_n_list, spec.replicas, spec.seed)?;
    let name = if p.stripe.active { "mu_b" } else { "mu" };
    let mut results = vec![(name.to_string(), est.clone())];
    results.extend(profile_rows(name, &est, &spec.mu_n_list));
    let l = p.lambda_1;
    results.push((
        format!("lambda_{name}"),
        EstimateResult::from_mean_se(l * est.point, l * est.standard_error(), est.replicas),
    ));
    results.push(point_row("censored_fraction", est.diagnostics["censored_fraction"], est.replicas));
    Ok(Artifacts {
        results,
        events: Vec::new(),
        certificates: None,
    })
}

fn shape_check(spec: &ExperimentSpec, hash: &str) -> Result<Artifacts> {
    let mu = spec.mu_hat_or_estimate()?;
    let t = spec.shape_time;
    let cfg = spec.process.clone().with_horizon(t);
    let hs = run_histories(spec, &cfg)?;
    let dev: Vec<f64> = hs
        .par_iter()
        .map(|h| shape_deviation(h, t, cfg.lambda_1, mu.point, spec.shape_directions))
        .collect::<Result<_>>()?;
    let pass: Vec<bool> = dev.iter().map(|&x| x <= spec.shape_tolerance).collect();
    let mut events = Vec::new();
    history_jsonl(&mut events, &hs[0], json!({"replica": 0, "config_hash": hash, "seed": spec.seed}))?;
    Ok(Artifacts {
        results: vec![
            ("mu_hat".to_string(), mu),
            ("shape_deviation".to_string(), EstimateResult::from_samples(&dev)),
            ("shape_pass_fraction".to_string(), EstimateResult::proportion(&pass)),
        ],
        events,
        certificates: None,
    })
}

fn proxy_rows(
    spec: &ExperimentSpec,
    cfg: &ProcessConfig,
    prefix: &str,
) -> Result<(Vec<(String, EstimateResult)>, InfectionHistory)> {
    let hs = run_histories(spec, cfg)?;
    let h = cfg.horizon_time;
    let proxies = hs
        .iter()
        .map(|x| coexistence_proxy(x, h, spec.coexist_window))
        .collect::<Result<Vec<_>>>()?;
    let flags = |f: &dyn Fn(&crate::estimators::CoexistenceProxy) -> bool| {
        EstimateResult::proportion(&proxies.iter().map(f).collect::<Vec<_>>())
    };
    let rows = vec![
        (format!("{prefix}type1_alive"), flags(&|p| p.type1_alive)),
        (format!("{prefix}type2_alive"), flags(&|p| p.type2_alive)),
        (format!("{prefix}both_alive"), flags(&|p| p.both_alive())),
    ];
    Ok((rows, hs.into_iter().next().expect("replicas >= 1")))
}

fn coexist(spec: &ExperimentSpec, hash: &str) -> Result<Artifacts> {
    let (mut results, h0) = proxy_rows(spec, &spec.process, "")?;
    if let Some(alt) = &spec.coexist_alt_initial {
        let cfg = spec.process.clone().with_initial(alt.clone());
        results.extend(proxy_rows(spec, &cfg, "alt_")?.0);
    }
    let mut events = Vec::new();
    history_jsonl(&mut events, &h0, json!({"replica": 0, "config_hash": hash, "seed": spec.seed}))?;
    Ok(Artifacts {
        results,
        events,
        certificates: None,
    })
}

fn couple_check(spec: &ExperimentSpec, hash: &str) -> Result<Artifacts> {
    let cc = spec.coupling_config();
    let traces: Vec<[CoupledTrace; 4]> = (0..spec.replicas)
        .into_par_iter()
        .map(|i| {
            let root = spec.replica(i);
            Ok([
                couple_two_type_vs_one_type(&cc, spec.couple_lambda, &root)?,
                couple_one_type_vs_two_type_union(&cc, spec.couple_lambda, &root)?,
                couple_one_type_vs_brw(&cc, &root)?,
                couple_lambda_family(&cc, &spec.couple_lambdas, &root)?,
            ])
        })
        .collect::<Result<_>>()?;
    let mut csv = Vec::new();
    writeln!(csv, "event_seq,time,check_name,pass")?;
    for (i, ts) in traces.iter().enumerate() {
        for t in ts {
            for c in &t.certificates {
                writeln!(
                    csv,
                    "{},{},replica={i}/{}/{},{}",
                    c.event_seq, c.time, t.construction, c.check_name, c.pass
                )?;
            }
        }
    }
    let all = traces.iter().flatten().all(CoupledTrace::all_pass);
    let mut results = Vec::new();
    for k in 0..4 {
        let name = &traces[0][k].construction;
        let pass: Vec<bool> = traces.iter().map(|ts| ts[k].all_pass()).collect();
        results.push((format!("pass[{name}]"), EstimateResult::proportion(&pass)));
    }
    let trunc: Vec<bool> = traces.iter().map(|ts| ts[2].statistics["truncated"] > 0.0).collect();
    results.push(("brw_truncated".to_string(), EstimateResult::proportion(&trunc)));
    for &l in &spec.couple_lambdas {
        let key = format!("norm_type1[{}]", member_label(l));
        let v: Vec<f64> = traces.iter().map(|ts| ts[3].statistics[&key]).collect();
        results.push((key, EstimateResult::from_samples(&v)));
    }
    let mut events = Vec::new();
    for t in &traces[0] {
        for (member, h) in &t.histories {
            let header = json!({"replica": 0, "construction": t.construction, "member": member,
                "config_hash": hash, "seed": spec.seed});
            history_jsonl(&mut events, h, header)?;
        }
    }
    Ok(Artifacts {
        results,
        events,
        certificates: Some((csv, all)),
    })
}

fn brw_speed(spec: &ExperimentSpec, hash: &str) -> Result<Artifacts> {
    let p = &spec.process;
    let cfg = BrwConfig::new(p.d, p.radius)
        .with_ancestor(spec.brw_ancestor)
        .with_cap(spec.brw_population_cap);
    let est = estimate_zeta(&cfg, spec.brw_horizon, spec.replicas, spec.seed)?;
    let half = EstimateResult::from_mean_se(
        est.diagnostics["half_horizon_point"],
        est.diagnostics["half_horizon_se"],
        est.replicas,
    );
    let trunc = est.diagnostics["truncated_fraction"];
    let mut pop = BrwPopulation::new(cfg, &spec.replica(0))?;
    pop.run_until(spec.brw_horizon);
    let mut events = Vec::new();
    pop.write_jsonl(&mut events, &json!({"replica": 0, "config_hash": hash, "seed": spec.seed}))?;
    Ok(Artifacts {
        results: vec![
            ("zeta".to_string(), est),
            ("zeta_half_horizon".to_string(), half),
            point_row("truncated_fraction", trunc, spec.replicas),
        ],
        events,
        certificates: None,
    })
}

fn effective_count(spec: &ExperimentSpec, hash: &str) -> Result<Artifacts> {
    let mu = spec.mu_hat_or_estimate()?;
    let p = &spec.process;
    let hs = run_histories(spec, p)?;
    let counts: Vec<f64> = hs
        .iter()
        .map(|h| count_effective_in_region(h, &spec.region, p.horizon_time) as f64)
        .collect();
    let lambda = p.lambda_2 / p.lambda_1;
    let bound = effective_outburst_bound(&spec.region, lambda, mu.point, p.gamma());
    let mut events = Vec::new();
    history_jsonl(&mut events, &hs[0], json!({"replica": 0, "config_hash": hash, "seed": spec.seed}))?;
    Ok(Artifacts {
        results: vec![
            ("mu_hat".to_string(), mu.clone()),
            ("effective_count".to_string(), EstimateResult::from_samples(&counts)),
            point_row("effective_bound", bound, mu.replicas),
        ],
        events,
        certificates: None,
    })
}

/// Runs `spec` on a pool of `parallelism` threads and writes
/// `events.jsonl`, `results.csv`, `certificates.csv` (couple-check) and
/// `manifest.txt` into `out_dir`. Statistics do not depend on `parallelism`.
pub fn run_experiment(spec: &ExperimentSpec, parallelism: usize, out_dir: &Path) -> Result<RunReport> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let start = Instant::now();
    let hash = spec.config_hash();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let art = pool.install(|| match spec.kind {
        Kind::Simulate => simulate(spec, &hash),
        Kind::EstimateMu => estimate_mu_kind(spec),
        Kind::ShapeCheck => shape_check(spec, &hash),
        Kind::Coexist => coexist(spec, &hash),
        Kind::CoupleCheck => couple_check(spec, &hash),
        Kind::BrwSpeed => brw_speed(spec, &hash),
        Kind::EffectiveCount => effective_count(spec, &hash),
    })?;

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("events.jsonl"), &art.events)?;
    let mut w = BufWriter::new(File::create(out_dir.join("results.csv"))?);
    write_results_csv(&mut w, &art.results, &hash, spec.seed)?;
    w.flush()?;
    let mut pass = true;
    if let Some((csv, all)) = &art.certificates {
        fs::write(out_dir.join("certificates.csv"), csv)?;
        pass = *all;
    }
    let manifest = format!(
        "{}# config_hash = {hash}\n# wall_time_s = {:.3}\n",
        spec.echo(),
        start.elapsed().as_secs_f64()
    );
    fs::write(out_dir.join("manifest.txt"), manifest)?;
    Ok(RunReport {
        results: art.results,
        certificates_pass: pass,
        config_hash: hash,
    })
}
