//! Synthetic tick sessions with planted noise populations.
//!
//! A latent signal `s(t) ∈ [−1, 1]`, piecewise constant over exponentially
//! distributed segments, tilts the side of persistent orders (`s > 0` means
//! more ask-side activity) and drives the latent mid with drift `κ·s` ticks
//! per second. An independent process `n(t)` of the same kind sets the side
//! of the two noise populations:
//!
//! * flicker orders live 1–99 ms and are never modified,
//! * spoof orders are modified 2–4 times, with every earlier gap at least
//!   300 ms and a final gap under 50 ms.
//!
//! Persistent orders rest 2–6 ticks from the mid with exponential lifetimes
//! and up to three modifications spaced at least 250 ms apart. Trades hit the
//! best-priced persistent order on the contra side, falling back to any live
//! order, and print one tick through the latent mid.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{Event, EventType, Side};
use crate::ingest::{SessionMeta, TickSize};
use crate::units::{millis, Nanos, Oid, Price, Qty, NANOS_PER_SEC};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub trading_date: NaiveDate,
    pub instrument: String,
    /// Seconds after midnight.
    pub session_start_s: f64,
    pub session_length_s: f64,
    /// Order arrivals per second on each side before tilting.
    pub bid_rate: f64,
    pub ask_rate: f64,
    /// Share of orders in the flicker population.
    pub flicker_fraction: f64,
    /// Share of orders in the spoof population.
    pub spoof_fraction: f64,
    /// Mid drift in ticks per second per unit of latent signal.
    pub kappa: f64,
    /// Random-walk volatility of the mid, ticks per √s.
    pub volatility: f64,
    pub trade_rate: f64,
    /// Tilt of the aggressor side: buyer-initiated with probability
    /// `(1 + c·s) / 2`.
    pub aggressor_coupling: f64,
    pub signal_segment_s: f64,
    pub noise_segment_s: f64,
    pub persistent_lifetime_s: f64,
    pub base_price: Price,
    pub tick_size: TickSize,
    pub max_qty: Qty,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            trading_date: NaiveDate::from_ymd_opt(2023, 1, 2).expect("valid date"),
            instrument: "SYNTH".into(),
            session_start_s: (9 * 3600 + 20 * 60) as f64,
            session_length_s: 3600.0,
            bid_rate: 10.0,
            ask_rate: 10.0,
            flicker_fraction: 0.5,
            spoof_fraction: 0.3,
            kappa: 0.5,
            volatility: 1.0,
            trade_rate: 2.0,
            aggressor_coupling: 0.5,
            signal_segment_s: 20.0,
            noise_segment_s: 20.0,
            persistent_lifetime_s: 10.0,
            base_price: 800_000,
            tick_size: TickSize::default(),
            max_qty: 10,
        }
    }
}

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be positive")))
            }
        };
        frac("flicker_fraction", self.flicker_fraction)?;
        frac("spoof_fraction", self.spoof_fraction)?;
        if self.flicker_fraction + self.spoof_fraction > 1.0 {
            return Err(Error::Config("flicker and spoof fractions sum above 1".into()));
        }
        frac("aggressor_coupling", self.aggressor_coupling.abs())?;
        positive("session_length_s", self.session_length_s)?;
        positive("bid_rate", self.bid_rate)?;
        positive("ask_rate", self.ask_rate)?;
        positive("trade_rate", self.trade_rate)?;
        positive("signal_segment_s", self.signal_segment_s)?;
        positive("noise_segment_s", self.noise_segment_s)?;
        positive("persistent_lifetime_s", self.persistent_lifetime_s)?;
        if !(self.volatility >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config("volatility must be nonnegative and kappa finite".into()));
        }
        if !(0.0..86_400.0).contains(&self.session_start_s) || self.session_start_s + self.session_length_s > 86_400.0 {
            return Err(Error::Config("session must fit inside one day".into()));
        }
        if self.base_price < 100 || self.max_qty < 1 {
            return Err(Error::Config("base price or quantity too small".into()));
        }
        Ok(())
    }

    pub fn session_meta(&self) -> Result<SessionMeta> {
        let start = secs_to_nanos(self.session_start_s);
        SessionMeta::new(self.trading_date, self.instrument.clone())
            .with_window(start, start + secs_to_nanos(self.session_length_s))
    }
}

fn secs_to_nanos(s: f64) -> Nanos {
    (s * NANOS_PER_SEC as f64).round() as Nanos
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Persistent,
    Flicker,
    Spoof,
}

/// What the generator intended for one order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedOrder {
    pub oid: Oid,
    pub population: Population,
    pub side: Side,
    pub entry: Nanos,
    /// Planned cancel time; may fall after the session close.
    pub planned_exit: Nanos,
    pub mod_times: Vec<Nanos>,
    /// Set when a trade touched the order, so its schedule may be cut short.
    pub traded: bool,
}

impl PlantedOrder {
    pub fn lifetime(&self) -> Nanos {
        self.planned_exit - self.entry
    }

    pub fn last_mod_gap(&self) -> Option<Nanos> {
        let n = self.mod_times.len();
        (n >= 2).then(|| self.mod_times[n - 1] - self.mod_times[n - 2])
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub meta: SessionMeta,
    pub events: Vec<Event>,
    pub planted: Vec<PlantedOrder>,
    /// Latent signal segments `(start, value)`.
    pub signal: Vec<(Nanos, f64)>,
}

/// Piecewise-constant process on `[start, end)`.
fn segments(rng: &mut ChaCha8Rng, start: Nanos, end: Nanos, mean_s: f64) -> Vec<(Nanos, f64)> {
    let exp = Exp::new(1.0 / mean_s).expect("positive mean");
    let mut out = Vec::new();
    let mut t = start;
    while t < end {
        out.push((t, rng.random_range(-1.0..=1.0)));
        t += secs_to_nanos(exp.sample(rng)).max(1);
    }
    out
}

fn value_at(seg: &[(Nanos, f64)], t: Nanos) -> f64 {
    let i = seg.partition_point(|&(s, _)| s <= t);
    if i == 0 {
        0.0
    } else {
        seg[i - 1].1
    }
}

fn side_from(rng: &mut ChaCha8Rng, ask_weight: f64, bid_weight: f64) -> Side {
    if rng.random::<f64>() * (ask_weight + bid_weight) < ask_weight {
        Side::Ask
    } else {
        Side::Bid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Trade,
    New(usize),
    Modify(usize),
    Cancel(usize),
}

struct Live {
    side: Side,
    price: Price,
    qty: Qty,
}

pub fn generate_session(cfg: &GeneratorConfig) -> Result<SyntheticSession> {
    cfg.validate()?;
    let meta = cfg.session_meta()?;
    let (start, end) = (meta.session_start, meta.session_end);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let signal = segments(&mut rng, start, end, cfg.signal_segment_s);
    let noise = segments(&mut rng, start, end, cfg.noise_segment_s);

    // latent mid on a 100 ms grid, in ticks
    let dt_ns = millis(100);
    let dt = 0.1;
    let steps = ((end - start) / dt_ns + 2) as usize;
    let mut mid = Vec::with_capacity(steps);
    let mut p = cfg.base_price as f64;
    for k in 0..steps {
        mid.push(p);
        let s = value_at(&signal, start + k as Nanos * dt_ns);
        let z: f64 = rng.sample(StandardNormal);
        p += cfg.kappa * s * dt + cfg.volatility * dt.sqrt() * z;
    }
    let mid_at = |t: Nanos| mid[(((t - start) / dt_ns) as usize).min(steps - 1)].round() as Price;

    // order plans
    let total_rate = cfg.bid_rate + cfg.ask_rate;
    let arrival = Exp::new(total_rate).expect("positive rate");
    let life = Exp::new(1.0 / cfg.persistent_lifetime_s).expect("positive lifetime");
    let mut planted: Vec<PlantedOrder> = Vec::new();
    let mut t = start;
    loop {
        t += secs_to_nanos(arrival.sample(&mut rng)).max(1);
        if t >= end {
            break;
        }
        let u: f64 = rng.random();
        let (population, side, planned_exit, mod_times) = if u < cfg.flicker_fraction {
            let side = side_from(&mut rng, 1.0 + value_at(&noise, t), 1.0 - value_at(&noise, t));
            let lifetime = rng.random_range(millis(1)..millis(100));
            (Population::Flicker, side, t + lifetime, Vec::new())
        } else if u < cfg.flicker_fraction + cfg.spoof_fraction {
            let side = side_from(&mut rng, 1.0 + value_at(&noise, t), 1.0 - value_at(&noise, t));
            let n_mods = rng.random_range(2..=4);
            let mut mods = Vec::with_capacity(n_mods);
            let mut m = t;
            for _ in 0..n_mods - 1 {
                m += millis(300) + rng.random_range(0..millis(700));
                mods.push(m);
            }
            m += rng.random_range(millis(1)..millis(50));
            mods.push(m);
            let exit = m + rng.random_range(millis(10)..millis(300));
            (Population::Spoof, side, exit, mods)
        } else {
            let s = value_at(&signal, t);
            let side = side_from(&mut rng, cfg.ask_rate * (1.0 + s), cfg.bid_rate * (1.0 - s));
            let lifetime = secs_to_nanos(life.sample(&mut rng)).max(1);
            let mut n_mods = rng.random_range(0..=3i64);
            while n_mods > 0 && lifetime / (n_mods + 1) < millis(250) {
                n_mods -= 1;
            }
            let gap = lifetime / (n_mods + 1);
            let mods = (1..=n_mods).map(|i| t + i * gap).collect();
            (Population::Persistent, side, t + lifetime, mods)
        };
        planted.push(PlantedOrder {
            oid: planted.len() as Oid + 1,
            population,
            side,
            entry: t,
            planned_exit,
            mod_times,
            traded: false,
        });
    }

    // chronological replay
    let mut queue: BinaryHeap<Reverse<(Nanos, u64, Action)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |q: &mut BinaryHeap<_>, t: Nanos, a: Action| {
        q.push(Reverse((t, seq, a)));
        seq += 1;
    };
    for (idx, o) in planted.iter().enumerate() {
        push(&mut queue, o.entry, Action::New(idx));
    }
    let trade_gap = Exp::new(cfg.trade_rate).expect("positive rate");
    let mut t = start;
    loop {
        t += secs_to_nanos(trade_gap.sample(&mut rng)).max(1);
        if t >= end {
            break;
        }
        push(&mut queue, t, Action::Trade);
    }

    let mut live: BTreeMap<usize, Live> = BTreeMap::new();
    let mut events = Vec::new();
    while let Some(Reverse((t, _, action))) = queue.pop() {
        if t >= end {
            continue;
        }
        let near = |rng: &mut ChaCha8Rng, side: Side, lo: Price, hi: Price| {
            let off = rng.random_range(lo..=hi);
            match side {
                Side::Bid => mid_at(t) - off,
                Side::Ask => mid_at(t) + off,
            }
        };
        match action {
            Action::New(idx) => {
                let o = &planted[idx];
                let price = match o.population {
                    Population::Persistent => near(&mut rng, o.side, 2, 6),
                    _ => near(&mut rng, o.side, 0, 1),
                };
                let qty = rng.random_range(1..=cfg.max_qty);
                events.push(Event::new(t, o.oid, EventType::New, o.side, price, qty));
                live.insert(idx, Live { side: o.side, price, qty });
                for &m in &o.mod_times {
                    push(&mut queue, m, Action::Modify(idx));
                }
                push(&mut queue, o.planned_exit, Action::Cancel(idx));
            }
            Action::Modify(idx) => {
                let Some(l) = live.get(&idx) else { continue };
                let (lo, hi) = match planted[idx].population {
                    Population::Persistent => (2, 6),
                    _ => (0, 1),
                };
                let mut price = near(&mut rng, l.side, lo, hi);
                if price == l.price {
                    price += match l.side {
                        Side::Bid => -1,
                        Side::Ask => 1,
                    };
                }
                let (side, qty) = (l.side, l.qty);
                live.get_mut(&idx).expect("live order").price = price;
                events.push(Event::new(t, planted[idx].oid, EventType::Modify, side, price, qty));
            }
            Action::Cancel(idx) => {
                if let Some(l) = live.remove(&idx) {
                    events.push(Event::new(t, planted[idx].oid, EventType::Cancel, l.side, l.price, l.qty));
                }
            }
            Action::Trade => {
                let s = value_at(&signal, t);
                let buy = rng.random::<f64>() < (1.0 + cfg.aggressor_coupling * s) / 2.0;
                let contra = if buy { Side::Ask } else { Side::Bid };
                let pick = |persistent_only: bool| {
                    live.iter()
                        .filter(|(idx, l)| {
                            l.side == contra && (!persistent_only || planted[**idx].population == Population::Persistent)
                        })
                        .min_by_key(|(idx, l)| {
                            let key = match contra {
                                Side::Ask => l.price,
                                Side::Bid => -l.price,
                            };
                            (key, **idx)
                        })
                        .map(|(idx, _)| *idx)
                };
                let Some(idx) = pick(true).or_else(|| pick(false)) else { continue };
                let l = live.get_mut(&idx).expect("live order");
                let fill = rng.random_range(1..=l.qty);
                let price = if buy { mid_at(t) + 1 } else { mid_at(t) - 1 };
                events.push(Event::new(t, planted[idx].oid, EventType::Trade, l.side, price, fill));
                planted[idx].traded = true;
                l.qty -= fill;
                if l.qty == 0 {
                    live.remove(&idx);
                }
            }
        }
    }
    Ok(SyntheticSession {
        meta,
        events,
        planted,
        signal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::build_lifecycles;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            session_length_s: 300.0,
            seed: 11,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = small();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(GeneratorConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = GeneratorConfig::from_toml_str("seed = 5\nkappa = 0.0\n").unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.kappa, 0.0);
        assert!(GeneratorConfig::from_toml_str("flicker_fraction = 1.5").is_err());
        assert!(GeneratorConfig::from_toml_str("no_such_key = 1").is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_session(&small()).unwrap();
        let b = generate_session(&small()).unwrap();
        assert_eq!(a.events, b.events);
        let c = generate_session(&GeneratorConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn stream_is_valid_and_plans_are_recoverable() {
        let s = generate_session(&small()).unwrap();
        assert!(s.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let lc = build_lifecycles(&s.events, s.meta.session_end).unwrap();
        let mut checked = 0;
        for o in s.planted.iter().filter(|o| !o.traded && o.planned_exit < s.meta.session_end) {
            let l = &lc[&o.oid];
            assert_eq!(l.lifetime, o.lifetime());
            assert_eq!(l.mod_count as usize, o.mod_times.len());
            assert_eq!(l.last_mod_gap, o.last_mod_gap());
            checked += 1;
        }
        assert!(checked > 1000);
    }

    #[test]
    fn populations_have_their_shapes() {
        let s = generate_session(&small()).unwrap();
        for o in &s.planted {
            match o.population {
                Population::Flicker => {
                    assert!(o.lifetime() < millis(100));
                    assert!(o.mod_times.is_empty());
                }
                Population::Spoof => {
                    assert!((2..=4).contains(&o.mod_times.len()));
                    assert!(o.last_mod_gap().unwrap() < millis(50));
                    let mut prev = o.entry;
                    for &m in &o.mod_times[..o.mod_times.len() - 1] {
                        assert!(m - prev >= millis(300));
                        prev = m;
                    }
                }
                Population::Persistent => {
                    assert!(o.mod_times.len() <= 3);
                    if let Some(g) = o.last_mod_gap() {
                        assert!(g >= millis(250));
                    }
                }
            }
        }
        let n = s.planted.len() as f64;
        let flicker = s.planted.iter().filter(|o| o.population == Population::Flicker).count() as f64;
        assert!((flicker / n - 0.5).abs() < 0.03);
    }
}
