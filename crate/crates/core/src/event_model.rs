//! Canonical tick record and per-order lifecycle statistics.
//!
//! Every order id starts with a `New` event and ends with exactly one exit:
//! a `Cancel`, the `Trade` that takes its remaining quantity to zero, or the
//! session close. Modifications are cancel-replace in place (same id, same
//! lifecycle).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{Nanos, Oid, Price, Qty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    New,
    Trade,
    Modify,
    Cancel,
}

impl EventType {
    pub const ALL: [EventType; 4] = [
        EventType::New,
        EventType::Trade,
        EventType::Modify,
        EventType::Cancel,
    ];

    pub fn token(self) -> &'static str {
        match self {
            EventType::New => "NEW",
            EventType::Trade => "TRADE",
            EventType::Modify => "MODIFY",
            EventType::Cancel => "CANCEL",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "NEW" => Some(EventType::New),
            "TRADE" => Some(EventType::Trade),
            "MODIFY" => Some(EventType::Modify),
            "CANCEL" => Some(EventType::Cancel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn token(self) -> &'static str {
        match self {
            Side::Bid => "BID",
            Side::Ask => "ASK",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "BID" => Some(Side::Bid),
            "ASK" => Some(Side::Ask),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

/// One price level of a book snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Level {
    pub price: Price,
    pub qty: Qty,
}

impl Level {
    pub fn new(price: Price, qty: Qty) -> Self {
        Level { price, qty }
    }
}

/// Top-of-book view, at most [`BookSnapshot::DEPTH`] levels per side, best first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BookSnapshot {
    pub bids: Vec<Level>,
    pub asks: Vec<Level>,
}

impl BookSnapshot {
    pub const DEPTH: usize = 5;

    pub fn best_bid(&self) -> Option<Level> {
        self.bids.first().copied()
    }

    pub fn best_ask(&self) -> Option<Level> {
        self.asks.first().copied()
    }

    /// Midpoint in ticks when both sides are populated.
    pub fn mid(&self) -> Option<f64> {
        match (self.best_bid(), self.best_ask()) {
            (Some(b), Some(a)) => Some((b.price + a.price) as f64 / 2.0),
            _ => None,
        }
    }

    /// Checks ordering (bids strictly decreasing, asks strictly increasing),
    /// non-negative quantities and an uncrossed touch.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.bids.len() > Self::DEPTH || self.asks.len() > Self::DEPTH {
            return Err("more than five levels on a side".into());
        }
        if self.bids.windows(2).any(|w| w[0].price <= w[1].price) {
            return Err("bid prices not strictly decreasing".into());
        }
        if self.asks.windows(2).any(|w| w[0].price >= w[1].price) {
            return Err("ask prices not strictly increasing".into());
        }
        if self
            .bids
            .iter()
            .chain(&self.asks)
            .any(|l| l.qty < 0 || l.price <= 0)
        {
            return Err("nonpositive price or negative quantity".into());
        }
        if let (Some(b), Some(a)) = (self.best_bid(), self.best_ask()) {
            if a.price <= b.price {
                return Err(format!("crossed book: bid {} >= ask {}", b.price, a.price));
            }
        }
        Ok(())
    }
}

/// A single tick.
///
/// For `Trade` rows `oid` is the resting order being executed, `side` is that
/// order's side and `qty` the executed quantity. For `Modify` rows price and
/// quantity are the order's new values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: Nanos,
    pub oid: Oid,
    pub etype: EventType,
    pub side: Side,
    pub price: Price,
    pub qty: Qty,
    pub snapshot: Option<BookSnapshot>,
}

impl Event {
    pub fn new(
        timestamp: Nanos,
        oid: Oid,
        etype: EventType,
        side: Side,
        price: Price,
        qty: Qty,
    ) -> Self {
        Event {
            timestamp,
            oid,
            etype,
            side,
            price,
            qty,
            snapshot: None,
        }
    }

    pub fn is_trade(&self) -> bool {
        self.etype == EventType::Trade
    }

    /// Field-level invariants that do not depend on other events.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp < 0 {
            return Err("negative timestamp".into());
        }
        if self.qty < 0 {
            return Err("negative quantity".into());
        }
        if self.etype != EventType::Cancel && self.price <= 0 {
            return Err(format!("{} with nonpositive price", self.etype.token()));
        }
        if let Some(snap) = &self.snapshot {
            snap.validate()?;
        }
        Ok(())
    }
}

/// How an order left the book.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terminal {
    Cancelled,
    FullyExecuted,
    /// Only produced by feeds that retire an id on replacement. The tick CSV
    /// carries modifications in place, so [`build_lifecycles`] never emits it.
    Replaced,
    /// Still resting when the session closed.
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderLifecycle {
    pub oid: Oid,
    pub entry: Nanos,
    pub exit: Nanos,
    pub lifetime: Nanos,
    pub mod_count: u32,
    /// Time between the final two modifications; only defined with two or more.
    pub last_mod_gap: Option<Nanos>,
    pub terminal: Terminal,
}

pub type Lifecycles = BTreeMap<Oid, OrderLifecycle>;

#[derive(Debug)]
struct OpenOrder {
    entry: Nanos,
    remaining: Qty,
    mod_count: u32,
    last_mod: Option<Nanos>,
    last_mod_gap: Option<Nanos>,
    exit: Option<(Nanos, Terminal)>,
}

/// Builds one lifecycle per order id in a timestamp-ordered stream.
///
/// Orders still alive at `session_close` exit there with
/// [`Terminal::SessionEnd`]. Partial executions keep the order alive.
pub fn build_lifecycles(events: &[Event], session_close: Nanos) -> Result<Lifecycles> {
    let mut open: BTreeMap<Oid, OpenOrder> = BTreeMap::new();
    let mut previous = Nanos::MIN;

    for (index, ev) in events.iter().enumerate() {
        if ev.timestamp < previous {
            return Err(Error::Ordering {
                index,
                previous,
                found: ev.timestamp,
            });
        }
        previous = ev.timestamp;
        ev.validate()
            .map_err(|reason| Error::structural(ev.oid, ev.timestamp, reason))?;
        if ev.timestamp > session_close {
            return Err(Error::Domain(format!(
                "event at t={}ns is after session close {}ns",
                ev.timestamp, session_close
            )));
        }

        if ev.etype == EventType::New {
            if open.contains_key(&ev.oid) {
                return Err(Error::structural(ev.oid, ev.timestamp, "duplicate NEW"));
            }
            open.insert(
                ev.oid,
                OpenOrder {
                    entry: ev.timestamp,
                    remaining: ev.qty,
                    mod_count: 0,
                    last_mod: None,
                    last_mod_gap: None,
                    exit: None,
                },
            );
            continue;
        }

        let order = open.get_mut(&ev.oid).ok_or_else(|| {
            Error::structural(
                ev.oid,
                ev.timestamp,
                format!("{} for unknown order", ev.etype.token()),
            )
        })?;
        if order.exit.is_some() {
            return Err(Error::structural(
                ev.oid,
                ev.timestamp,
                format!("{} after the order exited", ev.etype.token()),
            ));
        }
        match ev.etype {
            EventType::Modify => {
                order.mod_count += 1;
                if let Some(prev) = order.last_mod {
                    order.last_mod_gap = Some(ev.timestamp - prev);
                }
                order.last_mod = Some(ev.timestamp);
                order.remaining = ev.qty;
            }
            EventType::Cancel => order.exit = Some((ev.timestamp, Terminal::Cancelled)),
            EventType::Trade => {
                order.remaining = (order.remaining - ev.qty).max(0);
                if order.remaining == 0 {
                    order.exit = Some((ev.timestamp, Terminal::FullyExecuted));
                }
            }
            EventType::New => unreachable!(),
        }
    }

    Ok(open
        .into_iter()
        .map(|(oid, o)| {
            let (exit, terminal) = o.exit.unwrap_or((session_close, Terminal::SessionEnd));
            let lifecycle = OrderLifecycle {
                oid,
                entry: o.entry,
                exit,
                lifetime: exit - o.entry,
                mod_count: o.mod_count,
                last_mod_gap: o.last_mod_gap,
                terminal,
            };
            (oid, lifecycle)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{millis, secs};

    fn ev(t: Nanos, oid: Oid, etype: EventType) -> Event {
        Event::new(t, oid, etype, Side::Bid, 100, 10)
    }

    #[test]
    fn new_then_cancel() {
        let events = [ev(0, 1, EventType::New), ev(millis(200), 1, EventType::Cancel)];
        let lc = build_lifecycles(&events, secs(10)).unwrap();
        let l = &lc[&1];
        assert_eq!(l.lifetime, millis(200));
        assert_eq!(l.mod_count, 0);
        assert_eq!(l.last_mod_gap, None);
        assert_eq!(l.terminal, Terminal::Cancelled);
    }

    #[test]
    fn last_mod_gap_uses_final_two_modifications() {
        let events = [
            ev(0, 7, EventType::New),
            ev(millis(10), 7, EventType::Modify),
            ev(millis(25), 7, EventType::Modify),
            ev(millis(30), 7, EventType::Cancel),
        ];
        let l = &build_lifecycles(&events, secs(1)).unwrap()[&7];
        assert_eq!(l.mod_count, 2);
        assert_eq!(l.last_mod_gap, Some(millis(15)));
    }

    #[test]
    fn single_modification_has_no_gap() {
        let events = [ev(0, 7, EventType::New), ev(millis(10), 7, EventType::Modify)];
        let l = &build_lifecycles(&events, secs(1)).unwrap()[&7];
        assert_eq!(l.mod_count, 1);
        assert_eq!(l.last_mod_gap, None);
    }

    #[test]
    fn open_order_exits_at_session_close() {
        let close = secs(6 * 3600);
        let l = &build_lifecycles(&[ev(0, 3, EventType::New)], close).unwrap()[&3];
        assert_eq!(l.terminal, Terminal::SessionEnd);
        assert_eq!(l.lifetime, close);
    }

    #[test]
    fn partial_fill_keeps_order_alive() {
        let mut t1 = ev(millis(5), 1, EventType::Trade);
        t1.qty = 4;
        let mut t2 = ev(millis(9), 1, EventType::Trade);
        t2.qty = 6;
        let events = [ev(0, 1, EventType::New), t1.clone()];
        let l = &build_lifecycles(&events, secs(1)).unwrap()[&1];
        assert_eq!(l.terminal, Terminal::SessionEnd);

        let events = [ev(0, 1, EventType::New), t1, t2];
        let l = &build_lifecycles(&events, secs(1)).unwrap()[&1];
        assert_eq!(l.terminal, Terminal::FullyExecuted);
        assert_eq!(l.exit, millis(9));
    }

    #[test]
    fn unknown_oid_is_structural_error() {
        let err = build_lifecycles(&[ev(millis(3), 99, EventType::Cancel)], secs(1)).unwrap_err();
        match err {
            Error::Structural { oid, timestamp, .. } => {
                assert_eq!(oid, 99);
                assert_eq!(timestamp, millis(3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn events_after_exit_are_rejected() {
        let events = [
            ev(0, 1, EventType::New),
            ev(1, 1, EventType::Cancel),
            ev(2, 1, EventType::Modify),
        ];
        assert!(matches!(
            build_lifecycles(&events, secs(1)),
            Err(Error::Structural { .. })
        ));
    }

    #[test]
    fn out_of_order_is_ordering_error() {
        let events = [ev(10, 1, EventType::New), ev(5, 2, EventType::New)];
        assert!(matches!(
            build_lifecycles(&events, secs(1)),
            Err(Error::Ordering { index: 1, .. })
        ));
    }

    #[test]
    fn snapshot_validation() {
        let ok = BookSnapshot {
            bids: vec![Level::new(100, 1), Level::new(99, 2)],
            asks: vec![Level::new(101, 1)],
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.mid(), Some(100.5));
        let crossed = BookSnapshot {
            bids: vec![Level::new(101, 1)],
            asks: vec![Level::new(101, 1)],
        };
        assert!(crossed.validate().is_err());
        let unsorted = BookSnapshot {
            bids: vec![Level::new(99, 1), Level::new(100, 1)],
            asks: vec![],
        };
        assert!(unsorted.validate().is_err());
    }
}
