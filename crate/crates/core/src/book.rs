//! Exclusion-aware stream filtering and top-of-book replay.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::error::Result;
use crate::event_model::{BookSnapshot, Event, EventType, Level, Side};
use crate::filters::{ExclusionSet, FilterSpec};
use crate::ingest::{push_levels, TickSize};
use crate::units::{Nanos, Oid, Price, Qty};

/// Event stream after an exclusion set has been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredStream {
    pub spec: FilterSpec,
    pub events: Vec<Event>,
    /// Trades of excluded orders that were kept on the tape.
    pub retained_trades_of_excluded: usize,
}

impl FilteredStream {
    pub fn unfiltered(events: Vec<Event>) -> Self {
        FilteredStream {
            spec: FilterSpec::Unfiltered,
            events,
            retained_trades_of_excluded: 0,
        }
    }
}

/// Drops every New/Modify/Cancel of an excluded order while keeping all trade
/// ticks, so the tape is identical across schemes. Order is preserved.
pub fn apply_exclusion(raw: &[Event], excl: &ExclusionSet) -> FilteredStream {
    let mut retained_trades_of_excluded = 0;
    let events = raw
        .iter()
        .filter(|ev| {
            if !excl.contains(ev.oid) {
                return true;
            }
            if ev.is_trade() {
                retained_trades_of_excluded += 1;
                return true;
            }
            false
        })
        .cloned()
        .collect();
    FilteredStream {
        spec: excl.spec,
        events,
        retained_trades_of_excluded,
    }
}

#[derive(Debug, Clone, Copy)]
struct Resting {
    side: Side,
    price: Price,
    qty: Qty,
}

/// Incremental book state keyed by order id.
///
/// A trade only reduces depth when its order is resting in this book; trades
/// of excluded orders touch the tape only. Inconsistencies (trade larger than
/// the resting quantity, modify or cancel of an order not in the book) clamp at
/// zero and bump [`BookReplay::clamped`].
#[derive(Debug, Default, Clone)]
pub struct BookReplay {
    orders: HashMap<Oid, Resting>,
    bids: BTreeMap<Price, Qty>,
    asks: BTreeMap<Price, Qty>,
    clamped: usize,
}

impl BookReplay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }

    fn levels(&mut self, side: Side) -> &mut BTreeMap<Price, Qty> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    fn add(&mut self, r: Resting) {
        if r.qty > 0 {
            *self.levels(r.side).entry(r.price).or_insert(0) += r.qty;
        }
    }

    fn remove(&mut self, r: Resting) {
        if r.qty == 0 {
            return;
        }
        let levels = self.levels(r.side);
        if let Some(q) = levels.get_mut(&r.price) {
            *q -= r.qty;
            if *q <= 0 {
                levels.remove(&r.price);
            }
        }
    }

    pub fn apply(&mut self, ev: &Event) {
        match ev.etype {
            EventType::New => {
                let r = Resting {
                    side: ev.side,
                    price: ev.price,
                    qty: ev.qty,
                };
                if let Some(old) = self.orders.insert(ev.oid, r) {
                    self.clamped += 1;
                    self.remove(old);
                }
                self.add(r);
            }
            EventType::Modify => match self.orders.get(&ev.oid).copied() {
                Some(old) => {
                    self.remove(old);
                    let r = Resting {
                        side: old.side,
                        price: ev.price,
                        qty: ev.qty,
                    };
                    self.orders.insert(ev.oid, r);
                    self.add(r);
                }
                None => self.clamped += 1,
            },
            EventType::Cancel => match self.orders.remove(&ev.oid) {
                Some(old) => self.remove(old),
                None => self.clamped += 1,
            },
            EventType::Trade => {
                if let Some(old) = self.orders.get(&ev.oid).copied() {
                    let filled = if ev.qty > old.qty {
                        self.clamped += 1;
                        old.qty
                    } else {
                        ev.qty
                    };
                    self.remove(Resting { qty: filled, ..old });
                    let left = old.qty - filled;
                    if left == 0 {
                        self.orders.remove(&ev.oid);
                    } else {
                        self.orders.insert(ev.oid, Resting { qty: left, ..old });
                    }
                }
            }
        }
    }

    pub fn snapshot(&self) -> BookSnapshot {
        let take = |it: &mut dyn Iterator<Item = (&Price, &Qty)>| {
            it.take(BookSnapshot::DEPTH)
                .map(|(&p, &q)| Level::new(p, q))
                .collect()
        };
        BookSnapshot {
            bids: take(&mut self.bids.iter().rev()),
            asks: take(&mut self.asks.iter()),
        }
    }

    pub fn best_bid(&self) -> Option<Price> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<Price> {
        self.asks.keys().next().copied()
    }

    pub fn mid(&self) -> Option<f64> {
        Some((self.best_bid()? + self.best_ask()?) as f64 / 2.0)
    }

    /// Total resting quantity at a price on one side.
    pub fn depth_at(&self, side: Side, price: Price) -> Qty {
        match side {
            Side::Bid => self.bids.get(&price).copied().unwrap_or(0),
            Side::Ask => self.asks.get(&price).copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    /// One snapshot per distinct event timestamp, taken after all events at
    /// that timestamp.
    pub snapshots: Vec<(Nanos, BookSnapshot)>,
    pub clamped: usize,
}

pub fn reconstruct_book(stream: &FilteredStream) -> ReplayOutput {
    let mut book = BookReplay::new();
    let mut snapshots: Vec<(Nanos, BookSnapshot)> = Vec::new();
    let events = &stream.events;
    for (i, ev) in events.iter().enumerate() {
        book.apply(ev);
        let last_at_timestamp = events
            .get(i + 1)
            .is_none_or(|next| next.timestamp != ev.timestamp);
        if last_at_timestamp {
            snapshots.push((ev.timestamp, book.snapshot()));
        }
    }
    ReplayOutput {
        snapshots,
        clamped: book.clamped(),
    }
}

/// CSV `timestamp_ns,bp1,bq1,...,ap5,aq5`.
pub fn write_snapshots<W: Write>(w: W, snapshots: &[(Nanos, BookSnapshot)], tick: TickSize) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["timestamp_ns".to_string()];
    header.extend(crate::ingest::snapshot_columns());
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for (t, snap) in snapshots {
        row.clear();
        row.push(t.to_string());
        push_levels(&mut row, &snap.bids, tick);
        push_levels(&mut row, &snap.asks, tick);
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
