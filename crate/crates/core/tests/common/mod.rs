#![allow(dead_code)]

use std::collections::BTreeMap;

use lobsift_core::event_model::{Event, EventType, Lifecycles, OrderLifecycle, Side, Terminal};
use lobsift_core::units::{millis, Nanos, Oid, Price, Qty};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random valid event stream of exactly `n` events with timestamp ties,
/// modifications, partial and full fills.
pub fn random_stream(rng: &mut ChaCha8Rng, n: usize) -> Vec<Event> {
    let mut live: BTreeMap<Oid, (Side, Price, Qty)> = BTreeMap::new();
    let mut next_oid: Oid = 1;
    let mut t: Nanos = 0;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        t += rng.random_range(0..3) * millis(1);
        let roll = rng.random_range(0..10);
        if live.is_empty() || roll < 4 {
            let side = if rng.random_bool(0.5) { Side::Bid } else { Side::Ask };
            let price = match side {
                Side::Bid => rng.random_range(95..=100),
                Side::Ask => rng.random_range(101..=106),
            };
            let qty = rng.random_range(1..=9);
            live.insert(next_oid, (side, price, qty));
            out.push(Event::new(t, next_oid, EventType::New, side, price, qty));
            next_oid += 1;
            continue;
        }
        let k = rng.random_range(0..live.len());
        let (&oid, &(side, price, qty)) = live.iter().nth(k).unwrap();
        match roll {
            4..=5 => {
                let p = (price + rng.random_range(-2..=2)).max(1);
                let q = rng.random_range(1..=9);
                live.insert(oid, (side, p, q));
                out.push(Event::new(t, oid, EventType::Modify, side, p, q));
            }
            6..=7 => {
                live.remove(&oid);
                out.push(Event::new(t, oid, EventType::Cancel, side, price, qty));
            }
            _ => {
                let fill = rng.random_range(1..=qty);
                if fill == qty {
                    live.remove(&oid);
                } else {
                    live.insert(oid, (side, price, qty - fill));
                }
                out.push(Event::new(t, oid, EventType::Trade, side, price, fill));
            }
        }
    }
    out
}

/// Random lifecycle map with small integer-millisecond statistics so that
/// threshold boundaries are hit often.
pub fn random_lifecycles(rng: &mut ChaCha8Rng, n: usize) -> Lifecycles {
    (1..=n as Oid)
        .map(|oid| {
            let lifetime = millis(rng.random_range(0..1500));
            let mod_count = rng.random_range(0..8);
            let last_mod_gap = (mod_count >= 2).then(|| millis(rng.random_range(0..300)));
            (
                oid,
                OrderLifecycle {
                    oid,
                    entry: 0,
                    exit: lifetime,
                    lifetime,
                    mod_count,
                    last_mod_gap,
                    terminal: Terminal::Cancelled,
                },
            )
        })
        .collect()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let burn = 200;
    let mut v = 0.0;
    for i in 0..n + burn {
        v = phi * v + normal(rng);
        if i >= burn {
            x[i - burn] = v;
        }
    }
    x
}

/// Textbook two-pass Pearson.
pub fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Direct O(n²) multivariate exponential-Hawkes log-likelihood.
pub fn direct_loglik(
    mu: &[f64],
    amps: &[Vec<Vec<f64>>],
    decays: &[f64],
    events: &[(f64, usize)],
    horizon: f64,
) -> f64 {
    let mut ll = 0.0;
    for &(t, i) in events {
        let mut lam = mu[i];
        for &(s, j) in events {
            if s < t {
                for (k, b) in decays.iter().enumerate() {
                    lam += amps[i][j][k] * (-b * (t - s)).exp();
                }
            }
        }
        ll += lam.ln();
    }
    ll -= mu.iter().sum::<f64>() * horizon;
    for &(s, j) in events {
        for row in amps {
            for (k, b) in decays.iter().enumerate() {
                ll -= row[j][k] / b * (1.0 - (-b * (horizon - s)).exp());
            }
        }
    }
    ll
}

/// Top-five levels per side recomputed from scratch for the orders live
/// after the first `upto` events.
pub fn brute_force_levels(events: &[Event], upto: usize) -> (Vec<(Price, Qty)>, Vec<(Price, Qty)>) {
    let mut orders: BTreeMap<Oid, (Side, Price, Qty)> = BTreeMap::new();
    for ev in &events[..upto] {
        match ev.etype {
            EventType::New => {
                orders.insert(ev.oid, (ev.side, ev.price, ev.qty));
            }
            EventType::Modify => {
                if let Some(o) = orders.get_mut(&ev.oid) {
                    o.1 = ev.price;
                    o.2 = ev.qty;
                }
            }
            EventType::Cancel => {
                orders.remove(&ev.oid);
            }
            EventType::Trade => {
                if let Some(o) = orders.get_mut(&ev.oid) {
                    o.2 -= ev.qty.min(o.2);
                    if o.2 == 0 {
                        orders.remove(&ev.oid);
                    }
                }
            }
        }
    }
    let mut bids: BTreeMap<Price, Qty> = BTreeMap::new();
    let mut asks: BTreeMap<Price, Qty> = BTreeMap::new();
    for (side, p, q) in orders.values() {
        let book = if *side == Side::Bid { &mut bids } else { &mut asks };
        *book.entry(*p).or_default() += q;
    }
    (
        bids.into_iter().rev().take(5).collect(),
        asks.into_iter().take(5).collect(),
    )
}
