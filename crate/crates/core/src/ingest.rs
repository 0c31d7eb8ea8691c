//! Tick CSV reading and writing.
//!
//! Header (required):
//! `timestamp_ns,oid,etype,side,price,qty[,bp1,bq1,...,bp5,bq5,ap1,aq1,...,ap5,aq5]`
//!
//! Prices are decimals on the file and integer ticks in memory. Snapshot
//! levels that are not populated are written as empty fields.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{BookSnapshot, Event, EventType, Level, Side};
use crate::units::{secs, Nanos, Price};

pub const BASE_COLUMNS: [&str; 6] = ["timestamp_ns", "oid", "etype", "side", "price", "qty"];

/// Price increment. Defaults to 0.05, the index-futures convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickSize(Decimal);

impl TickSize {
    pub fn new(size: Decimal) -> Result<Self> {
        if size <= Decimal::ZERO {
            return Err(Error::Config(format!("tick size must be positive, got {size}")));
        }
        Ok(TickSize(size.normalize()))
    }

    pub fn value(self) -> Decimal {
        self.0
    }

    /// Converts a decimal price string to ticks; fails when off-grid.
    pub fn to_ticks(self, text: &str) -> std::result::Result<Price, String> {
        let price = Decimal::from_str(text.trim()).map_err(|e| format!("bad decimal: {e}"))?;
        let ticks = price / self.0;
        if !ticks.fract().is_zero() {
            return Err(format!("{price} is not a multiple of tick size {}", self.0));
        }
        i64::try_from(ticks).map_err(|_| format!("price {price} out of range"))
    }

    pub fn format(self, ticks: Price) -> String {
        let mut value = Decimal::from(ticks) * self.0;
        value.rescale(self.0.scale());
        value.to_string()
    }
}

impl Default for TickSize {
    fn default() -> Self {
        TickSize(Decimal::new(5, 2))
    }
}

impl FromStr for TickSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let d = Decimal::from_str(s.trim())
            .map_err(|e| Error::Config(format!("bad tick size `{s}`: {e}")))?;
        TickSize::new(d)
    }
}

impl fmt::Display for TickSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Session bounds. Timestamps are nanoseconds since midnight of `trading_date`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub trading_date: NaiveDate,
    pub session_start: Nanos,
    pub session_end: Nanos,
    pub instrument: String,
}

impl SessionMeta {
    /// Main trading hours, 09:20 to 15:25.
    pub const DEFAULT_START: Nanos = secs(9 * 3600 + 20 * 60);
    pub const DEFAULT_END: Nanos = secs(15 * 3600 + 25 * 60);

    pub fn new(trading_date: NaiveDate, instrument: impl Into<String>) -> Self {
        SessionMeta {
            trading_date,
            session_start: Self::DEFAULT_START,
            session_end: Self::DEFAULT_END,
            instrument: instrument.into(),
        }
    }

    pub fn with_window(mut self, start: Nanos, end: Nanos) -> Result<Self> {
        if end <= start {
            return Err(Error::Config(format!(
                "session end {end} must be after start {start}"
            )));
        }
        self.session_start = start;
        self.session_end = end;
        Ok(self)
    }

    pub fn length(&self) -> Nanos {
        self.session_end - self.session_start
    }

    /// `YYYYMMDD`, the row-label prefix used in report tables.
    pub fn date_tag(&self) -> String {
        self.trading_date.format("%Y%m%d").to_string()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub tick_size: TickSize,
    /// Skip and count malformed rows instead of failing.
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTicks {
    pub events: Vec<Event>,
    /// Rows outside the session window.
    pub dropped: usize,
    /// Malformed rows skipped in lenient mode.
    pub rejected: usize,
    pub rows: usize,
}

pub fn parse_tick_file(
    path: impl AsRef<Path>,
    meta: &SessionMeta,
    opts: &ParseOptions,
) -> Result<ParsedTicks> {
    let file = File::open(path.as_ref())?;
    parse_ticks(file, meta, opts)
}

pub fn parse_ticks<R: Read>(reader: R, meta: &SessionMeta, opts: &ParseOptions) -> Result<ParsedTicks> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let expected = header_row(header.len() > BASE_COLUMNS.len());
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            field: "header".into(),
            message: format!("expected `{}`", expected.join(",")),
        });
    }

    let mut out = ParsedTicks {
        events: Vec::new(),
        dropped: 0,
        rejected: 0,
        rows: 0,
    };
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line() + 1;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if opts.lenient => {
                log::debug!("line {line}: {e}");
                out.rows += 1;
                out.rejected += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        out.rows += 1;
        let line = record.position().map_or(line, |p| p.line());
        match parse_row(&record, expected.len(), opts.tick_size) {
            Ok(ev) => {
                if ev.timestamp < meta.session_start || ev.timestamp > meta.session_end {
                    out.dropped += 1;
                } else {
                    out.events.push(ev);
                }
            }
            Err((field, message)) if !opts.lenient => {
                return Err(Error::Parse {
                    line,
                    field,
                    message,
                })
            }
            Err((field, message)) => {
                log::debug!("line {line} field {field}: {message}");
                out.rejected += 1;
            }
        }
    }
    if out.dropped > 0 {
        log::info!("dropped {} rows outside the session window", out.dropped);
    }
    // stable: equal timestamps keep file order
    out.events.sort_by_key(|e| e.timestamp);
    Ok(out)
}

fn header_row(with_snapshot: bool) -> Vec<String> {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    if with_snapshot {
        cols.extend(snapshot_columns());
    }
    cols
}

pub fn snapshot_columns() -> Vec<String> {
    let mut cols = Vec::with_capacity(4 * BookSnapshot::DEPTH);
    for side in ["b", "a"] {
        for level in 1..=BookSnapshot::DEPTH {
            cols.push(format!("{side}p{level}"));
            cols.push(format!("{side}q{level}"));
        }
    }
    cols
}

type FieldError = (String, String);

fn parse_row(record: &csv::StringRecord, width: usize, tick: TickSize) -> std::result::Result<Event, FieldError> {
    if record.len() != width {
        return Err((
            "row".into(),
            format!("expected {width} fields, found {}", record.len()),
        ));
    }
    let field = |i: usize| record.get(i).unwrap_or("");
    let err = |name: &str, msg: String| (name.to_string(), msg);

    let timestamp: Nanos = field(0)
        .parse()
        .map_err(|e| err("timestamp_ns", format!("{e}")))?;
    let oid = field(1).parse().map_err(|e| err("oid", format!("{e}")))?;
    let etype = EventType::from_token(field(2))
        .ok_or_else(|| err("etype", format!("unknown event type `{}`", field(2))))?;
    let side = Side::from_token(field(3))
        .ok_or_else(|| err("side", format!("unknown side `{}`", field(3))))?;
    let price = tick.to_ticks(field(4)).map_err(|m| err("price", m))?;
    let qty = field(5).parse().map_err(|e| err("qty", format!("{e}")))?;

    let snapshot = if width > BASE_COLUMNS.len() {
        Some(parse_snapshot(record, tick)?)
    } else {
        None
    };
    let ev = Event {
        timestamp,
        oid,
        etype,
        side,
        price,
        qty,
        snapshot,
    };
    ev.validate().map_err(|m| err("row", m))?;
    Ok(ev)
}

fn parse_snapshot(record: &csv::StringRecord, tick: TickSize) -> std::result::Result<BookSnapshot, FieldError> {
    let names = snapshot_columns();
    let mut sides: [Vec<Level>; 2] = [Vec::new(), Vec::new()];
    for (s, levels) in sides.iter_mut().enumerate() {
        for l in 0..BookSnapshot::DEPTH {
            let col = BASE_COLUMNS.len() + s * 2 * BookSnapshot::DEPTH + 2 * l;
            let (p, q) = (record.get(col).unwrap_or(""), record.get(col + 1).unwrap_or(""));
            if p.is_empty() && q.is_empty() {
                continue;
            }
            let price = tick
                .to_ticks(p)
                .map_err(|m| (names[col - BASE_COLUMNS.len()].clone(), m))?;
            let qty = q
                .parse()
                .map_err(|e| (names[col + 1 - BASE_COLUMNS.len()].clone(), format!("{e}")))?;
            levels.push(Level::new(price, qty));
        }
    }
    let [bids, asks] = sides;
    Ok(BookSnapshot { bids, asks })
}

/// Writes events in the tick CSV format. Snapshot columns are emitted when any
/// event carries a snapshot.
pub fn write_ticks<W: Write>(writer: W, events: &[Event], tick: TickSize) -> Result<()> {
    let with_snapshot = events.iter().any(|e| e.snapshot.is_some());
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    wtr.write_record(header_row(with_snapshot))?;
    let mut row: Vec<String> = Vec::with_capacity(26);
    for ev in events {
        row.clear();
        row.push(ev.timestamp.to_string());
        row.push(ev.oid.to_string());
        row.push(ev.etype.token().to_string());
        row.push(ev.side.token().to_string());
        row.push(tick.format(ev.price));
        row.push(ev.qty.to_string());
        if with_snapshot {
            let empty = BookSnapshot::default();
            let snap = ev.snapshot.as_ref().unwrap_or(&empty);
            push_levels(&mut row, &snap.bids, tick);
            push_levels(&mut row, &snap.asks, tick);
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn push_levels(row: &mut Vec<String>, levels: &[Level], tick: TickSize) {
    for l in 0..BookSnapshot::DEPTH {
        match levels.get(l) {
            Some(level) => {
                row.push(tick.format(level.price));
                row.push(level.qty.to_string());
            }
            None => {
                row.push(String::new());
                row.push(String::new());
            }
        }
    }
}

pub fn write_tick_file(path: impl AsRef<Path>, events: &[Event], tick: TickSize) -> Result<()> {
    let file = std::io::BufWriter::new(File::create(path.as_ref())?);
    write_ticks(file, events, tick)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> SessionMeta {
        SessionMeta::new(NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(), "TEST")
            .with_window(0, secs(100))
            .unwrap()
    }

    fn opts(tick: &str) -> ParseOptions {
        ParseOptions {
            tick_size: tick.parse().unwrap(),
            lenient: false,
        }
    }

    #[test]
    fn maps_fields() {
        let csv = "timestamp_ns,oid,etype,side,price,qty\n1000000,42,NEW,BID,100.50,10\n";
        let parsed = parse_ticks(csv.as_bytes(), &meta(), &opts("0.01")).unwrap();
        assert_eq!(
            parsed.events,
            vec![Event::new(1_000_000, 42, EventType::New, Side::Bid, 10050, 10)]
        );
    }

    #[test]
    fn unknown_event_type_reports_line() {
        let csv = "timestamp_ns,oid,etype,side,price,qty\n1,1,NEW,BID,1.00,1\n2,1,XYZ,BID,1.00,1\n";
        match parse_ticks(csv.as_bytes(), &meta(), &opts("0.05")) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "etype");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sorts_by_timestamp() {
        let csv = "timestamp_ns,oid,etype,side,price,qty\n30,3,NEW,ASK,1.00,1\n10,1,NEW,BID,1.00,1\n20,2,NEW,BID,1.00,1\n";
        let parsed = parse_ticks(csv.as_bytes(), &meta(), &opts("0.05")).unwrap();
        let ts: Vec<_> = parsed.events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![10, 20, 30]);
    }

    #[test]
    fn off_grid_price_is_rejected() {
        let csv = "timestamp_ns,oid,etype,side,price,qty\n1,1,NEW,BID,100.52,1\n";
        assert!(matches!(
            parse_ticks(csv.as_bytes(), &meta(), &opts("0.05")),
            Err(Error::Parse { field, .. }) if field == "price"
        ));
    }

    #[test]
    fn lenient_counts_everything() {
        let csv = "timestamp_ns,oid,etype,side,price,qty\n1,1,NEW,BID,1.00,1\nbad,1,NEW,BID,1.00,1\n999999999999,2,NEW,BID,1.00,1\n2,1,CANCEL,BID,1.00,1\n";
        let mut o = opts("0.05");
        o.lenient = true;
        let p = parse_ticks(csv.as_bytes(), &meta(), &o).unwrap();
        assert_eq!((p.events.len(), p.dropped, p.rejected, p.rows), (2, 1, 1, 4));
    }

    #[test]
    fn snapshot_columns_round_trip() {
        let mut ev = Event::new(5, 1, EventType::New, Side::Bid, 2000, 3);
        ev.snapshot = Some(BookSnapshot {
            bids: vec![Level::new(2000, 3), Level::new(1999, 1)],
            asks: vec![Level::new(2001, 4)],
        });
        let mut buf = Vec::new();
        write_ticks(&mut buf, std::slice::from_ref(&ev), TickSize::default()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp_ns,oid,etype,side,price,qty,bp1,bq1"));
        assert!(text.contains("100.00,3,99.95,1,,,"));
        let back = parse_ticks(buf.as_slice(), &meta(), &ParseOptions::default()).unwrap();
        assert_eq!(back.events, vec![ev]);
    }

    #[test]
    fn crossed_snapshot_is_rejected() {
        let mut cols = snapshot_columns();
        cols.splice(0..0, BASE_COLUMNS.iter().map(|s| s.to_string()));
        let mut row = vec!["1", "1", "NEW", "BID", "1.00", "1", "1.05", "1"];
        row.extend(std::iter::repeat_n("", 8));
        row.extend(["1.00", "1"]);
        row.extend(std::iter::repeat_n("", 8));
        let csv = format!("{}\n{}\n", cols.join(","), row.join(","));
        assert!(parse_ticks(csv.as_bytes(), &meta(), &ParseOptions::default()).is_err());
    }

    #[test]
    fn tick_formatting() {
        let t = TickSize::default();
        assert_eq!(t.format(2010), "100.50");
        assert_eq!(t.to_ticks("100.5"), Ok(2010));
        let whole: TickSize = "1".parse().unwrap();
        assert_eq!(whole.format(7), "7");
        assert!("0".parse::<TickSize>().is_err());
    }
}
