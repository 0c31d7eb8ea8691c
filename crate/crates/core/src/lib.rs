//! Structural filtration of limit-order-book event streams.
//!
//! The crate is organised along the processing chain:
//!
//! * [`event_model`] and [`ingest`] turn tick files into ordered [`Event`] streams
//!   and per-order [`OrderLifecycle`] records.
//! * [`filters`] builds exclusion sets from lifecycle statistics (lifetime,
//!   modification count, last-modification gap).
//! * [`book`] drops excluded orders from the stream and replays the top five
//!   levels of the remaining book.
//! * [`signals`] computes windowed event-count imbalance, trade imbalance and
//!   realised returns; [`regimes`] discretises them.
//! * [`scoring`] and [`hawkes`] turn the signals into correlation, regime and
//!   excitation-norm scores.
//! * [`synth`] generates sessions with planted noise populations and
//!   [`pipeline`] wires everything into report tables.

pub mod book;
pub mod error;
pub mod event_model;
pub mod filters;
pub mod hawkes;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod regimes;
pub mod scoring;
pub mod signals;
pub mod synth;
pub mod units;

pub use book::{apply_exclusion, reconstruct_book, BookReplay, FilteredStream};
pub use error::{Error, Result};
pub use event_model::{
    build_lifecycles, BookSnapshot, Event, EventType, Level, Lifecycles, OrderLifecycle, Side,
    Terminal,
};
pub use filters::{ExclusionSet, FilterKind, FilterSpec};
pub use hawkes::{ExcitationMask, KernelEstimate, MarkedEventStream};
pub use ingest::{SessionMeta, TickSize};
pub use regimes::{RegimeScheme, RegimeVectors};
pub use scoring::{MaskLambda, Orientation, ScoreReport};
pub use signals::{SignalVariant, WindowGrid, WindowSignal};
pub use synth::GeneratorConfig;
pub use units::{Nanos, Oid, Price, Qty};
