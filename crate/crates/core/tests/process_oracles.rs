//! Engine checks against independent constructions.

use crgrowth::geometry::{Ball, Point};
use crgrowth::process::{initial_rate, GrowthProcess, InfectionType, InitialSets, ProcessConfig};
use crgrowth::stats::EstimateResult;
use crgrowth::stochastics::{RadiusDistribution, RandomStream};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use statrs::distribution::{ContinuousCDF, Exp as ExpDist};

fn det(r: f64) -> RadiusDistribution {
    RadiusDistribution::deterministic(r).unwrap()
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail `P(sqrt(n) D > x)`.
fn ks_pvalue(d: f64, n: usize) -> f64 {
    let x = d * (n as f64).sqrt();
    let s: f64 = (1..200)
        .map(|k| {
            let k = k as f64;
            (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * x * x).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

#[test]
fn first_interarrival_in_one_dimension_is_exponential() {
    // |B(0,1)| = 2 in d = 1, so the first event is Exponential(2 λ)
    let lambda = 1.5;
    let cfg = ProcessConfig::one_type(1, lambda, det(1.0)).with_horizon(100.0);
    assert!((initial_rate(&cfg, InfectionType::Single) - 2.0 * lambda).abs() < 1e-12);
    let n = 3000;
    let times: Vec<f64> = (0..n)
        .map(|i| {
            let mut g = GrowthProcess::with_stream(cfg.clone(), &RandomStream::replica(31, i)).unwrap();
            g.step().unwrap().time
        })
        .collect();
    let law = ExpDist::new(2.0 * lambda).unwrap();
    let d = ks_statistic(times, |x| law.cdf(x));
    assert!(ks_pvalue(d, n as usize) > 0.01, "D = {d}");
}

#[test]
fn two_type_first_event_splits_by_rate() {
    // type 1 fires first with probability λ1|S1| / (λ1|S1| + λ2|S2|)
    let cfg = ProcessConfig::two_type(2, 1.0, 3.0, det(1.0)).with_horizon(100.0);
    let n = 4000;
    let first1: Vec<bool> = (0..n)
        .map(|i| {
            let mut g = GrowthProcess::with_stream(cfg.clone(), &RandomStream::replica(32, i)).unwrap();
            g.step().unwrap().itype == InfectionType::Type1
        })
        .collect();
    let est = EstimateResult::proportion(&first1);
    assert!(est.ci_low - 0.01 <= 0.25 && 0.25 <= est.ci_high + 0.01, "{est:?}");
}

/// Reference simulator: a rate-λ space-time Poisson process on a fixed box
/// `[-L, L]^d`, keeping the points that land in the current infected union.
fn naive_event_count(d: usize, lambda: f64, radius: f64, horizon: f64, half: f64, rng: &mut ChaCha8Rng) -> Option<usize> {
    let mut balls: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; d], radius)];
    let box_rate = lambda * (2.0 * half).powi(d as i32);
    let exp = Exp::new(box_rate).unwrap();
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > horizon {
            return Some(balls.len() - 1);
        }
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-half..half)).collect();
        let inside = balls.iter().any(|(c, r)| {
            c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r * r
        });
        if inside {
            if x.iter().any(|v| v.abs() + radius > half) {
                return None;
            }
            balls.push((x, radius));
        }
    }
}

#[test]
fn event_counts_match_box_thinning_reference() {
    let (d, lambda, horizon) = (2, 1.0, 1.5);
    let n = 1500;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let naive: Vec<f64> = (0..n)
        .map(|_| naive_event_count(d, lambda, 1.0, horizon, 8.0, &mut rng).expect("box large enough") as f64)
        .collect();
    let cfg = ProcessConfig::one_type(d, lambda, det(1.0)).with_horizon(horizon);
    let engine: Vec<f64> = (0..n)
        .map(|i| {
            let mut g = GrowthProcess::with_stream(cfg.clone(), &RandomStream::replica(78, i as u64)).unwrap();
            g.run_until(horizon).unwrap();
            g.history().outbursts.len() as f64
        })
        .collect();
    let a = EstimateResult::from_samples(&naive);
    let b = EstimateResult::from_samples(&engine);
    let z = (a.point - b.point) / (a.standard_error().powi(2) + b.standard_error().powi(2)).sqrt();
    assert!(z.abs() < 3.5, "naive {a:?} engine {b:?}");
    // second moments as well
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    let (va, vb) = (var(&naive, a.point), var(&engine, b.point));
    assert!((va / vb - 1.0).abs() < 0.25, "variances {va} {vb}");
}

#[test]
fn symmetric_two_type_union_grows_like_one_type() {
    // with λ1 = λ2 the union of both types evolves as a one-type process
    // started from the union of the initial balls
    let (d, horizon) = (2, 2.0);
    let two = ProcessConfig::two_type(d, 1.0, 1.0, det(1.0)).with_horizon(horizon);
    let init = two.initial_sets();
    let one = ProcessConfig::one_type(d, 1.0, det(1.0))
        .with_horizon(horizon)
        .with_initial(InitialSets {
            type_1: init.type_1.iter().chain(&init.type_2).cloned().collect(),
            type_2: vec![],
        });
    let n = 1200;
    let counts = |cfg: &ProcessConfig, seed: u64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut g = GrowthProcess::with_stream(cfg.clone(), &RandomStream::replica(seed, i)).unwrap();
                g.run_until(horizon).unwrap();
                g.history().outbursts.len() as f64
            })
            .collect()
    };
    let a = EstimateResult::from_samples(&counts(&two, 90));
    let b = EstimateResult::from_samples(&counts(&one, 91));
    let z = (a.point - b.point) / (a.standard_error().powi(2) + b.standard_error().powi(2)).sqrt();
    assert!(z.abs() < 3.5, "two-type {a:?} one-type {b:?}");
}

#[test]
fn every_outburst_center_was_infected() {
    let cfg = ProcessConfig::two_type(2, 1.0, 0.7, RadiusDistribution::exponential(1.0).unwrap()).with_horizon(4.0);
    for i in 0..5 {
        let mut g = GrowthProcess::with_stream(cfg.clone(), &RandomStream::replica(5, i)).unwrap();
        g.run_until(4.0).unwrap();
        let h = g.into_history();
        for (k, o) in h.outbursts.iter().enumerate() {
            let before = o.time - 1e-12;
            assert_eq!(h.classify(&o.center, before), Some(o.itype), "outburst {k}");
            let _ = Ball::new(o.center.clone(), o.radius).unwrap();
        }
        assert!(h.outbursts.windows(2).all(|w| w[0].time < w[1].time));
        let origin = Point::origin(2);
        assert_eq!(h.classify(&origin, 0.0), Some(InfectionType::Type2));
    }
}
