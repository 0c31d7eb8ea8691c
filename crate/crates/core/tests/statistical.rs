//! Seeded statistical checks. Thresholds are wide enough that a correct
//! implementation fails them with negligible probability.

mod common;

use common::*;
use lobsift_core::event_model::build_lifecycles;
use lobsift_core::filters::lifetime_filter;
use lobsift_core::hawkes::{fit, loglik, simulate_hawkes, KernelEstimate, DEFAULT_DECAYS};
use lobsift_core::pipeline::{run_pipeline, RunConfig};
use lobsift_core::scoring::{ar_residualize, lagged_pearson, pearson, regime_r2, RegimePairs};
use lobsift_core::synth::{generate_session, GeneratorConfig};
use lobsift_core::units::{millis, secs, Nanos};
use lobsift_core::{FilterSpec, SignalVariant};
use rand::seq::SliceRandom;
use rand::Rng;

fn keyed(v: &[f64]) -> Vec<(Nanos, f64)> {
    v.iter().enumerate().map(|(i, &x)| (secs(i as i64), x)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn white_noise_lags_stay_small() {
    let mut rng = rng(10);
    let n = 2000;
    let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let lags: Vec<Nanos> = (0..50).map(secs).collect();
    for (lag, r) in lagged_pearson(&keyed(&x), &keyed(&y), &lags) {
        assert!(r.unwrap().abs() < 4.0 / (n as f64).sqrt(), "lag {lag}");
    }
}

#[test]
fn correlation_peaks_at_planted_lag() {
    let mut rng = rng(11);
    let n = 3000;
    let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| if i >= 7 { x[i - 7] } else { 0.0 } + 0.5 * normal(&mut rng))
        .collect();
    let lags: Vec<Nanos> = (0..20).map(secs).collect();
    let scores = lagged_pearson(&keyed(&x), &keyed(&y), &lags);
    let best = scores
        .iter()
        .max_by(|a, b| a.1.unwrap().total_cmp(&b.1.unwrap()))
        .unwrap();
    assert_eq!(*best.0, secs(7));
}

#[test]
fn ar_removes_spurious_correlation_between_persistent_series() {
    let (mut raw, mut res) = (Vec::new(), Vec::new());
    for seed in 0..50 {
        let mut rng = rng(100 + seed);
        let x = ar1(&mut rng, 400, 0.97);
        let y = ar1(&mut rng, 400, 0.97);
        raw.push(pearson(&x, &y).unwrap().abs());
        let (fx, fy) = (ar_residualize(&x, 5).unwrap(), ar_residualize(&y, 5).unwrap());
        res.push(pearson(&fx.residuals, &fy.residuals).unwrap().abs());
    }
    let (m_raw, m_res) = (median(raw), median(res));
    assert!(m_res < 0.5 * m_raw, "raw {m_raw} residual {m_res}");
    assert!(m_res < 0.1);
}

#[test]
fn regime_r2_beats_shuffled_targets() {
    let mut rng = rng(12);
    let n = 1000;
    let mut q = Vec::new();
    let mut r = Vec::new();
    for _ in 0..n {
        let bin = rng.random_range(0..4);
        let mut qv: Vec<f64> = (0..9).map(|_| rng.random_range(0..3) as f64).collect();
        qv[bin * 2] += 4.0;
        let mut rv = vec![0.0; 4];
        rv[if rng.random_bool(0.7) { bin } else { rng.random_range(0..4) }] = 1.0;
        q.push(qv);
        r.push(rv);
    }
    let anchors: Vec<Nanos> = (0..n as i64).collect();
    let real = regime_r2(&RegimePairs { anchors: anchors.clone(), q: q.clone(), r: r.clone() }, 20)
        .unwrap()
        .score;
    let mut beaten = 0;
    for _ in 0..50 {
        let mut rs = r.clone();
        rs.shuffle(&mut rng);
        let shuffled = regime_r2(&RegimePairs { anchors: anchors.clone(), q: q.clone(), r: rs }, 20).unwrap().score;
        if shuffled >= real {
            beaten += 1;
        }
    }
    assert_eq!(beaten, 0);
}

#[test]
fn poisson_data_fits_near_zero_excitation() {
    for seed in 0..5 {
        let truth = KernelEstimate::poisson(vec![0.5, 0.8], DEFAULT_DECAYS.to_vec()).unwrap();
        let stream = simulate_hawkes(&truth, 5000.0, seed).unwrap();
        for (c, mu) in stream.counts().iter().zip(&truth.mu) {
            let expect = mu * 5000.0;
            assert!((*c as f64 - expect).abs() < 4.0 * expect.sqrt());
        }
        let truth = KernelEstimate::poisson(vec![1.0], DEFAULT_DECAYS.to_vec()).unwrap();
        let stream = simulate_hawkes(&truth, 20_000.0, seed).unwrap();
        let est = fit(&stream, &DEFAULT_DECAYS).unwrap();
        assert!(est.total_mass() < 0.05, "seed {seed}: {}", est.total_mass());
        assert!(est.spectral_radius < 1.0);
    }
}

#[test]
fn true_parameters_beat_perturbed_ones() {
    let mut rng = rng(13);
    let truth = KernelEstimate::univariate(0.5, 0.8, 2.0).unwrap();
    let mut wins = 0;
    for seed in 0..20 {
        let stream = simulate_hawkes(&truth, 2000.0, seed).unwrap();
        let base = loglik(&truth, &stream).unwrap();
        let f = rng.random_range(1.3..2.0);
        let f = if rng.random_bool(0.5) { f } else { 1.0 / f };
        let perturbed = KernelEstimate::univariate(0.5 * f, 0.8 / f, 2.0).unwrap();
        if base >= loglik(&perturbed, &stream).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn without_flicker_the_lifetime_filter_takes_only_a_tail() {
    let g = GeneratorConfig { flicker_fraction: 0.0, session_length_s: 900.0, seed: 3, ..GeneratorConfig::default() };
    let s = generate_session(&g).unwrap();
    let lc = build_lifecycles(&s.events, s.meta.session_end).unwrap();
    let share = lifetime_filter(&lc, millis(100)).len() as f64 / lc.len() as f64;
    assert!(share < 0.03, "{share}");

    let with = GeneratorConfig { flicker_fraction: 0.5, ..g };
    let s = generate_session(&with).unwrap();
    let lc = build_lifecycles(&s.events, s.meta.session_end).unwrap();
    let share = lifetime_filter(&lc, millis(100)).len() as f64 / lc.len() as f64;
    assert!(share > 0.45, "{share}");
}

#[test]
fn uncoupled_sessions_show_no_systematic_correlation() {
    let g = GeneratorConfig {
        kappa: 0.0,
        aggressor_coupling: 0.0,
        session_length_s: 1800.0,
        ..GeneratorConfig::default()
    };
    let cfg = RunConfig {
        synthetic: Some(g),
        seeds: (0..12).collect(),
        filters: vec![FilterSpec::Unfiltered],
        artifacts: false,
        ..RunConfig::default()
    };
    let out = run_pipeline(&cfg).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    // Trades print through the mid, so the trade imbalance and the return of
    // the same window share a bid-ask bounce; only longer lags are clean.
    let cases = [(SignalVariant::BookObi, 0), (SignalVariant::TradeObi, 30)];
    for (variant, min_lag) in cases {
        for lag in cfg.lags.iter().filter(|&&l| l >= secs(min_lag)) {
            let v: Vec<f64> = out
                .reports
                .iter()
                .filter(|r| r.variant == variant)
                .map(|r| r.pearson_raw.iter().find(|s| s.lag == *lag).unwrap().value.unwrap())
                .collect();
            assert_eq!(v.len(), 12);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(mean.abs() < 4.0 * sd / n.sqrt() + 0.02, "{variant:?} lag {lag}: mean {mean} sd {sd}");
        }
    }
}
