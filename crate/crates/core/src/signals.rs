//! Windowed directional statistics.
//!
//! All windows are left-open, right-closed: `(τ − h, τ]`. Bid-side events are
//! buy-side, ask-side events are sell-side.
//!
//! Sign conventions differ between the two imbalances and are kept as-is:
//! book imbalance is `(sell − buy) / (sell + buy)` while trade imbalance is
//! `(buyer-initiated − seller-initiated) / total`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::book::{BookReplay, FilteredStream};
use crate::error::{Error, Result};
use crate::event_model::{Event, EventType, Side};
use crate::units::{secs, Nanos, Price};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    /// Lookback length.
    pub h: Nanos,
    /// Anchor spacing.
    pub stride: Nanos,
    /// Forward window length for `fwd_ret`.
    pub xi: Nanos,
    /// Sub-grid step for intra-window imbalance samples.
    pub sub_step: Nanos,
    pub anchors: Vec<Nanos>,
}

impl WindowGrid {
    /// Anchors at `start + h`, `start + h + stride`, ... up to `end`.
    pub fn new(start: Nanos, end: Nanos, h: Nanos, stride: Nanos, xi: Nanos, sub_step: Nanos) -> Result<Self> {
        if h <= 0 || stride <= 0 || xi <= 0 || sub_step <= 0 {
            return Err(Error::Config("window lengths must be positive".into()));
        }
        if h % sub_step != 0 {
            return Err(Error::Config(format!(
                "sub-sample step {sub_step}ns must divide the lookback {h}ns"
            )));
        }
        let mut anchors = Vec::new();
        let mut tau = start + h;
        while tau <= end {
            anchors.push(tau);
            tau += stride;
        }
        Ok(WindowGrid {
            h,
            stride,
            xi,
            sub_step,
            anchors,
        })
    }

    /// h = 10 s, stride = 15 s, ξ = 1 s, 1 s sub-samples.
    pub fn reference(start: Nanos, end: Nanos) -> Result<Self> {
        WindowGrid::new(start, end, secs(10), secs(15), secs(1), secs(1))
    }

    pub fn sub_samples(&self) -> usize {
        (self.h / self.sub_step) as usize
    }
}

/// Trade classification used for the trade imbalance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeSigning {
    /// Uptick is buyer-initiated, downtick seller-initiated, zero tick repeats
    /// the previous sign; the first trade counts as buyer-initiated.
    #[default]
    TickRule,
    /// Trade price against the mid of the stream's own reconstructed book just
    /// before the trade; falls back to the tick rule at the mid or when one
    /// side of the book is empty.
    QuoteRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalVariant {
    /// Event-count book imbalance.
    BookObi,
    /// Signed-trade imbalance.
    TradeObi,
}

impl SignalVariant {
    pub fn tag(self) -> &'static str {
        match self {
            SignalVariant::BookObi => "book",
            SignalVariant::TradeObi => "trade",
        }
    }

    pub fn value(self, w: &WindowSignal) -> Option<f64> {
        match self {
            SignalVariant::BookObi => w.obi,
            SignalVariant::TradeObi => w.trade_obi,
        }
    }

    pub fn samples(self, w: &WindowSignal) -> &[(Nanos, f64)] {
        match self {
            SignalVariant::BookObi => &w.obi_samples,
            SignalVariant::TradeObi => &w.trade_obi_samples,
        }
    }
}

/// Which return feeds the scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnSource {
    /// Over the evaluation window `(τ − h, τ]`.
    #[default]
    Backward,
    /// Over the forecast window `(τ, τ + ξ]`.
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSignal {
    pub anchor: Nanos,
    pub n_buy: u64,
    pub n_sell: u64,
    pub obi: Option<f64>,
    pub trade_obi: Option<f64>,
    pub ret: Option<f64>,
    pub fwd_ret: Option<f64>,
    /// Book imbalance over each sub-step interval, stamped at its right edge;
    /// intervals without activity are skipped.
    pub obi_samples: Vec<(Nanos, f64)>,
    pub trade_obi_samples: Vec<(Nanos, f64)>,
}

impl WindowSignal {
    pub fn return_for(&self, source: ReturnSource) -> Option<f64> {
        match source {
            ReturnSource::Backward => self.ret,
            ReturnSource::Forward => self.fwd_ret,
        }
    }
}

/// Counts buy-side and sell-side events of every type with timestamps in
/// `(start, end]`. `events` must be sorted by timestamp.
pub fn directional_counts(events: &[Event], start: Nanos, end: Nanos) -> (u64, u64) {
    let lo = events.partition_point(|e| e.timestamp <= start);
    let hi = events.partition_point(|e| e.timestamp <= end);
    events[lo..hi.max(lo)]
        .iter()
        .fold((0, 0), |(b, s), e| match e.side {
            Side::Bid => (b + 1, s),
            Side::Ask => (b, s + 1),
        })
}

/// `(sell − buy) / (sell + buy)`, absent without activity.
pub fn obi(n_buy: u64, n_sell: u64) -> Option<f64> {
    let total = n_buy + n_sell;
    (total > 0).then(|| (n_sell as f64 - n_buy as f64) / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedTrade {
    pub timestamp: Nanos,
    pub price: Price,
    pub buyer_initiated: bool,
}

/// Trades of a stream, classified with `rule`.
pub fn sign_trades(events: &[Event], rule: TradeSigning) -> Vec<SignedTrade> {
    let mut out = Vec::new();
    let mut last_price: Option<Price> = None;
    let mut last_sign = true;
    let mut book = (rule == TradeSigning::QuoteRule).then(BookReplay::new);
    for ev in events {
        if ev.etype == EventType::Trade {
            let tick_sign = match last_price {
                None => true,
                Some(p) if ev.price > p => true,
                Some(p) if ev.price < p => false,
                Some(_) => last_sign,
            };
            last_price = Some(ev.price);
            last_sign = tick_sign;
            let sign = match book.as_ref().and_then(BookReplay::mid) {
                Some(mid) if (ev.price as f64) > mid => true,
                Some(mid) if (ev.price as f64) < mid => false,
                _ => tick_sign,
            };
            out.push(SignedTrade {
                timestamp: ev.timestamp,
                price: ev.price,
                buyer_initiated: sign,
            });
        }
        if let Some(b) = book.as_mut() {
            b.apply(ev);
        }
    }
    out
}

fn trade_slice(trades: &[SignedTrade], start: Nanos, end: Nanos) -> &[SignedTrade] {
    let lo = trades.partition_point(|t| t.timestamp <= start);
    let hi = trades.partition_point(|t| t.timestamp <= end);
    &trades[lo..hi.max(lo)]
}

/// `(buyer − seller) / total` over trades in `(start, end]`.
pub fn trade_obi(trades: &[SignedTrade], start: Nanos, end: Nanos) -> Option<f64> {
    let slice = trade_slice(trades, start, end);
    let buys = slice.iter().filter(|t| t.buyer_initiated).count() as f64;
    let total = slice.len() as f64;
    (total > 0.0).then(|| (2.0 * buys - total) / total)
}

/// Relative change from the first to the last traded price in `(start, end]`.
pub fn realized_return(trades: &[SignedTrade], start: Nanos, end: Nanos) -> Option<f64> {
    let slice = trade_slice(trades, start, end);
    let first = slice.first()?.price as f64;
    let last = slice.last()?.price as f64;
    Some((last - first) / first)
}

/// Prefix counts over a stream so that every window costs two binary searches.
#[derive(Debug, Clone)]
pub struct StreamIndex {
    times: Vec<Nanos>,
    buy_prefix: Vec<u64>,
    trades: Vec<SignedTrade>,
    trade_buy_prefix: Vec<u64>,
}

impl StreamIndex {
    pub fn new(stream: &FilteredStream, rule: TradeSigning) -> Self {
        let events = &stream.events;
        let mut buy_prefix = Vec::with_capacity(events.len() + 1);
        buy_prefix.push(0);
        let mut acc = 0;
        for e in events {
            acc += u64::from(e.side == Side::Bid);
            buy_prefix.push(acc);
        }
        let trades = sign_trades(events, rule);
        let mut trade_buy_prefix = Vec::with_capacity(trades.len() + 1);
        trade_buy_prefix.push(0);
        let mut acc = 0;
        for t in &trades {
            acc += u64::from(t.buyer_initiated);
            trade_buy_prefix.push(acc);
        }
        StreamIndex {
            times: events.iter().map(|e| e.timestamp).collect(),
            buy_prefix,
            trades,
            trade_buy_prefix,
        }
    }

    pub fn trades(&self) -> &[SignedTrade] {
        &self.trades
    }

    pub fn counts(&self, start: Nanos, end: Nanos) -> (u64, u64) {
        let lo = self.times.partition_point(|&t| t <= start);
        let hi = self.times.partition_point(|&t| t <= end).max(lo);
        let buys = self.buy_prefix[hi] - self.buy_prefix[lo];
        (buys, (hi - lo) as u64 - buys)
    }

    pub fn obi(&self, start: Nanos, end: Nanos) -> Option<f64> {
        let (b, s) = self.counts(start, end);
        obi(b, s)
    }

    pub fn trade_obi(&self, start: Nanos, end: Nanos) -> Option<f64> {
        let lo = self.trades.partition_point(|t| t.timestamp <= start);
        let hi = self.trades.partition_point(|t| t.timestamp <= end).max(lo);
        let total = (hi - lo) as f64;
        let buys = (self.trade_buy_prefix[hi] - self.trade_buy_prefix[lo]) as f64;
        (total > 0.0).then(|| (2.0 * buys - total) / total)
    }

    pub fn realized_return(&self, start: Nanos, end: Nanos) -> Option<f64> {
        realized_return(&self.trades, start, end)
    }

    pub fn window(&self, grid: &WindowGrid, anchor: Nanos) -> WindowSignal {
        let start = anchor - grid.h;
        let (n_buy, n_sell) = self.counts(start, anchor);
        let mut obi_samples = Vec::with_capacity(grid.sub_samples());
        let mut trade_obi_samples = Vec::with_capacity(grid.sub_samples());
        for k in 1..=grid.sub_samples() as i64 {
            let s = start + k * grid.sub_step;
            if let Some(v) = self.obi(s - grid.sub_step, s) {
                obi_samples.push((s, v));
            }
            if let Some(v) = self.trade_obi(s - grid.sub_step, s) {
                trade_obi_samples.push((s, v));
            }
        }
        WindowSignal {
            anchor,
            n_buy,
            n_sell,
            obi: obi(n_buy, n_sell),
            trade_obi: self.trade_obi(start, anchor),
            ret: self.realized_return(start, anchor),
            fwd_ret: self.realized_return(anchor, anchor + grid.xi),
            obi_samples,
            trade_obi_samples,
        }
    }
}

/// Signals for every anchor of `grid`.
pub fn compute_signals(stream: &FilteredStream, grid: &WindowGrid, rule: TradeSigning) -> Vec<WindowSignal> {
    let index = StreamIndex::new(stream, rule);
    grid.anchors.iter().map(|&a| index.window(grid, a)).collect()
}

/// CSV `anchor_ns,n_buy,n_sell,obi,trade_obi,ret,fwd_ret`; absent values are
/// empty fields.
pub fn write_signals<W: Write>(w: W, signals: &[WindowSignal]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["anchor_ns", "n_buy", "n_sell", "obi", "trade_obi", "ret", "fwd_ret"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in signals {
        wtr.write_record([
            s.anchor.to_string(),
            s.n_buy.to_string(),
            s.n_sell.to_string(),
            opt(s.obi),
            opt(s.trade_obi),
            opt(s.ret),
            opt(s.fwd_ret),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
