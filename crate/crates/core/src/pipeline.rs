//! End-to-end runs: sessions × filters × signal variants → report tables.
//!
//! Every row of a table is computed over the same evaluation windows: a
//! window survives only if its signal and return exist under every filter in
//! the grid and for every configured variant.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::book::{apply_exclusion, reconstruct_book, FilteredStream};
use crate::error::{Error, Result};
use crate::event_model::{build_lifecycles, Event, Lifecycles};
use crate::filters::{reference_grid, FilterSpec};
use crate::hawkes::{build_marked_stream, excitation_score, fit_with, ExcitationMask, KernelEstimate, DEFAULT_DECAYS, TOLERANCE};
use crate::ingest::{parse_tick_file, ParseOptions, SessionMeta, TickSize};
use crate::regimes::{build_regime_vectors, write_regimes, RegimeScheme, RegimeVectors};
use crate::scoring::{
    ar_residualize_keyed, lagged_pearson, masked_regime_correlation, pearson_score, regime_r2, HawkesDiagnostics,
    Headline, LagScore, MaskLambda, Orientation, RegimePairs, RegimeScore, ScoreReport, DEFAULT_AR_ORDER,
    DEFAULT_BLOCKS,
};
use crate::signals::{write_signals, ReturnSource, SignalVariant, StreamIndex, TradeSigning, WindowGrid, WindowSignal};
use crate::synth::{generate_session, GeneratorConfig};
use crate::units::{format_duration, parse_duration, secs, Nanos};

mod duration {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Millis(i64),
    }

    fn from_raw<E: serde::de::Error>(raw: Raw) -> std::result::Result<Nanos, E> {
        match raw {
            Raw::Text(t) => parse_duration(&t).ok_or_else(|| E::custom(format!("bad duration `{t}`"))),
            Raw::Millis(ms) => Ok(crate::units::millis(ms)),
        }
    }

    pub fn serialize<S: Serializer>(v: &Nanos, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_duration(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Nanos, D::Error> {
        from_raw(Raw::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[Nanos], s: S) -> std::result::Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| format_duration(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Nanos>, D::Error> {
            Vec::<Raw>::deserialize(d)?.into_iter().map(from_raw).collect()
        }
    }
}

/// One tick file and the session it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub date: NaiveDate,
    #[serde(default)]
    pub instrument: String,
    #[serde(default)]
    pub tick_size: TickSize,
    #[serde(default)]
    pub lenient: bool,
    /// Session bounds as times of day; default 09:20 to 15:25.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_duration")]
    pub session_start: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_duration")]
    pub session_end: Option<Nanos>,
}

mod opt_duration {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Nanos>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_str(&format_duration(*x)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Nanos>, D::Error> {
        super::duration::deserialize(d).map(Some)
    }
}

/// Where imbalance events enter the point process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// One event per sub-sample, at the sub-sample time.
    #[default]
    SubSample,
    /// One event per window, at its anchor.
    Anchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Vec<InputSpec>,
    /// Synthetic sessions, one per entry of `seeds` (or the generator's own
    /// seed when `seeds` is empty).
    pub synthetic: Option<GeneratorConfig>,
    pub seeds: Vec<u64>,
    /// The unfiltered baseline is always added in front.
    pub filters: Vec<FilterSpec>,
    #[serde(with = "duration")]
    pub h: Nanos,
    #[serde(with = "duration")]
    pub stride: Nanos,
    #[serde(with = "duration")]
    pub xi: Nanos,
    #[serde(with = "duration")]
    pub sub_step: Nanos,
    #[serde(with = "duration::vec")]
    pub lags: Vec<Nanos>,
    #[serde(with = "duration::vec")]
    pub regime_lags: Vec<Nanos>,
    pub obi_bins: usize,
    pub ret_bins: usize,
    pub ret_quantile: f64,
    pub decays: Vec<f64>,
    pub hawkes_max_iter: usize,
    pub variants: Vec<SignalVariant>,
    pub ar_correction: bool,
    pub ar_order: usize,
    pub blocks: usize,
    pub return_source: ReturnSource,
    pub trade_signing: TradeSigning,
    pub book_orientation: Orientation,
    pub trade_orientation: Orientation,
    pub mask_sigma: f64,
    pub obi_placement: Placement,
    /// Write per-cell signal, regime and kernel files next to the tables.
    pub artifacts: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            synthetic: None,
            seeds: Vec::new(),
            filters: reference_grid(),
            h: secs(10),
            stride: secs(15),
            xi: secs(1),
            sub_step: secs(1),
            lags: [1, 10, 30, 50, 80, 100].map(secs).to_vec(),
            regime_lags: [1, 10, 20].map(secs).to_vec(),
            obi_bins: RegimeScheme::DEFAULT_OBI_BINS,
            ret_bins: RegimeScheme::DEFAULT_RET_BINS,
            ret_quantile: RegimeScheme::DEFAULT_RET_QUANTILE,
            decays: DEFAULT_DECAYS.to_vec(),
            hawkes_max_iter: crate::hawkes::MAX_ITERATIONS,
            variants: vec![SignalVariant::BookObi, SignalVariant::TradeObi],
            ar_correction: true,
            ar_order: DEFAULT_AR_ORDER,
            blocks: DEFAULT_BLOCKS,
            return_source: ReturnSource::Backward,
            trade_signing: TradeSigning::TickRule,
            book_orientation: Orientation::Inverse,
            trade_orientation: Orientation::Direct,
            mask_sigma: MaskLambda::DEFAULT_SIGMA,
            obi_placement: Placement::SubSample,
            artifacts: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative input paths are resolved against the config file
        if let Some(dir) = path.parent() {
            for input in &mut cfg.inputs {
                if input.path.is_relative() {
                    input.path = dir.join(&input.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() && self.synthetic.is_none() {
            return Err(Error::Config("no inputs and no synthetic generator configured".into()));
        }
        if let Some(g) = &self.synthetic {
            g.validate()?;
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one signal variant is required".into()));
        }
        if self.decays.is_empty() || self.decays.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("decays must be positive".into()));
        }
        if self.lags.iter().chain(&self.regime_lags).any(|&l| l < 0) {
            return Err(Error::Config("lags must be nonnegative".into()));
        }
        if self.ar_order == 0 || self.blocks < 2 {
            return Err(Error::Config("ar_order must be ≥ 1 and blocks ≥ 2".into()));
        }
        if self.mask_sigma <= 0.0 {
            return Err(Error::Config("mask_sigma must be positive".into()));
        }
        WindowGrid::new(0, 0, self.h, self.stride, self.xi, self.sub_step)?;
        RegimeScheme::calibrated(self.obi_bins, self.ret_bins, &[0.0], self.ret_quantile)?;
        Ok(())
    }

    /// Filter list with the unfiltered baseline first and duplicates removed.
    pub fn filter_grid(&self) -> Vec<FilterSpec> {
        let mut seen = BTreeSet::new();
        std::iter::once(FilterSpec::Unfiltered)
            .chain(self.filters.iter().copied())
            .filter(|f| seen.insert(*f))
            .collect()
    }

    fn orientation(&self, v: SignalVariant) -> Orientation {
        match v {
            SignalVariant::BookObi => self.book_orientation,
            SignalVariant::TradeObi => self.trade_orientation,
        }
    }
}

/// A loaded session.
#[derive(Debug, Clone)]
pub struct Session {
    pub meta: SessionMeta,
    pub events: Vec<Event>,
    pub lifecycles: Lifecycles,
}

impl Session {
    pub fn new(meta: SessionMeta, events: Vec<Event>) -> Result<Self> {
        let lifecycles = build_lifecycles(&events, meta.session_end)?;
        Ok(Session { meta, events, lifecycles })
    }

    pub fn from_input(input: &InputSpec) -> Result<Self> {
        let mut meta = SessionMeta::new(input.date, input.instrument.clone());
        if input.session_start.is_some() || input.session_end.is_some() {
            meta = meta.with_window(
                input.session_start.unwrap_or(SessionMeta::DEFAULT_START),
                input.session_end.unwrap_or(SessionMeta::DEFAULT_END),
            )?;
        }
        let opts = ParseOptions {
            tick_size: input.tick_size,
            lenient: input.lenient,
        };
        let parsed = parse_tick_file(&input.path, &meta, &opts)?;
        if parsed.dropped > 0 || parsed.rejected > 0 {
            log::warn!(
                "{}: dropped {} rows outside the session, rejected {}",
                input.path.display(),
                parsed.dropped,
                parsed.rejected
            );
        }
        Session::new(meta, parsed.events)
    }

    pub fn synthetic(cfg: &GeneratorConfig) -> Result<Self> {
        let s = generate_session(cfg)?;
        Session::new(s.meta, s.events)
    }
}

/// A failed (session, filter, variant) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub date: String,
    pub filter_label: String,
    pub variant: Option<SignalVariant>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellArtifacts {
    pub date: String,
    pub filter_label: String,
    pub signals_csv: String,
    pub regimes_csv: Vec<(SignalVariant, String)>,
    pub kernels: Vec<(SignalVariant, KernelEstimate)>,
    pub excluded_orders: usize,
    pub clamped: usize,
}

/// Everything a run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    #[serde(with = "duration::vec")]
    pub lags: Vec<Nanos>,
    #[serde(with = "duration::vec")]
    pub regime_lags: Vec<Nanos>,
    pub reports: Vec<ScoreReport>,
    pub failures: Vec<CellFailure>,
    #[serde(skip)]
    pub artifacts: Vec<CellArtifacts>,
}

impl RunOutput {
    pub fn report(&self, date: &str, spec: FilterSpec, variant: SignalVariant) -> Option<&ScoreReport> {
        let label = spec.label();
        self.reports
            .iter()
            .find(|r| r.date == date && r.filter_label == label && r.variant == variant)
    }
}

struct FilterCell {
    spec: FilterSpec,
    index: StreamIndex,
    signals: Vec<WindowSignal>,
    excluded: usize,
    clamped: usize,
}

fn prepare_filter(session: &Session, spec: FilterSpec, grid: &WindowGrid, rule: TradeSigning) -> FilterCell {
    let excl = spec.exclusions(&session.lifecycles);
    let stream: FilteredStream = apply_exclusion(&session.events, &excl);
    let clamped = reconstruct_book(&stream).clamped;
    let index = StreamIndex::new(&stream, rule);
    let signals = grid.anchors.iter().map(|&a| index.window(grid, a)).collect();
    FilterCell {
        spec,
        index,
        signals,
        excluded: excl.len(),
        clamped,
    }
}

fn return_at(index: &StreamIndex, grid: &WindowGrid, anchor: Nanos, source: ReturnSource) -> Option<f64> {
    match source {
        ReturnSource::Backward => index.realized_return(anchor - grid.h, anchor),
        ReturnSource::Forward => index.realized_return(anchor, anchor + grid.xi),
    }
}

/// Shared per-session context for the cells.
struct SessionPlan<'a> {
    cfg: &'a RunConfig,
    date: String,
    meta: &'a SessionMeta,
    /// Indices into the grid's anchors that every filter and variant supports.
    common: Vec<usize>,
    /// Returns at τ + lag for each τ in `common`, per lag (absent entries
    /// dropped).
    lagged_returns: BTreeMap<Nanos, Vec<(Nanos, f64)>>,
    scheme: RegimeScheme,
}

fn score_cell(plan: &SessionPlan<'_>, cell: &FilterCell, variant: SignalVariant) -> Result<(ScoreReport, String, KernelEstimate)> {
    let cfg = plan.cfg;
    let windows: Vec<&WindowSignal> = plan.common.iter().map(|&i| &cell.signals[i]).collect();
    let mut diagnostics = Vec::new();
    let x: Vec<(Nanos, f64)> = windows
        .iter()
        .map(|w| (w.anchor, variant.value(w).expect("common windows carry a value")))
        .collect();

    let lag_scores = |xs: &[(Nanos, f64)], ys: &BTreeMap<Nanos, Vec<(Nanos, f64)>>, lags: &[Nanos]| -> Vec<LagScore> {
        lags.iter()
            .map(|&lag| LagScore {
                lag,
                value: lagged_pearson(xs, &ys[&lag], &[lag])[&lag],
            })
            .collect()
    };
    let pearson_raw = lag_scores(&x, &plan.lagged_returns, &cfg.lags);

    // residualised copies of x and of every lagged return series
    let mut ar_y = BTreeMap::new();
    let x_ar = if cfg.ar_correction {
        match ar_residualize_keyed(&x, cfg.ar_order) {
            Ok(r) => {
                for (lag, ys) in &plan.lagged_returns {
                    match ar_residualize_keyed(ys, cfg.ar_order) {
                        Ok(res) => {
                            ar_y.insert(*lag, res);
                        }
                        Err(e) => {
                            diagnostics.push(format!("AR on returns at lag {}: {e}", format_duration(*lag)));
                            ar_y.insert(*lag, Vec::new());
                        }
                    }
                }
                Some(r)
            }
            Err(e) => {
                diagnostics.push(format!("AR on signal: {e}"));
                None
            }
        }
    } else {
        None
    };
    let pearson_ar = match &x_ar {
        Some(xa) => lag_scores(xa, &ar_y, &cfg.lags),
        None => Vec::new(),
    };

    // regimes
    let mask = MaskLambda::new(cfg.obi_bins, cfg.ret_bins, cfg.mask_sigma, cfg.orientation(variant))?;
    let owned: Vec<WindowSignal> = windows.iter().map(|w| (*w).clone()).collect();
    let built = build_regime_vectors(&owned, &plan.scheme, variant, cfg.return_source)?;
    let x_vecs = built.vectors;
    let y_vecs = |lag: Nanos| -> Result<Vec<RegimeVectors>> {
        plan.lagged_returns[&lag]
            .iter()
            .map(|&(t, r)| {
                Ok(RegimeVectors {
                    anchor: t,
                    q_vec: Vec::new(),
                    r_vec: plan.scheme.return_one_hot(r)?,
                })
            })
            .collect()
    };
    let regime_score = |pairs: &RegimePairs, lag: Nanos, diags: &mut Vec<String>| -> RegimeScore {
        let cc = masked_regime_correlation(pairs, &mask, cfg.blocks)
            .map_err(|e| diags.push(format!("regime correlation at {}: {e}", format_duration(lag))))
            .ok();
        let r2 = regime_r2(pairs, cfg.blocks)
            .map_err(|e| diags.push(format!("regime R² at {}: {e}", format_duration(lag))))
            .ok();
        if let Some(out) = &r2 {
            if out.ridged > 0 {
                diags.push(format!(
                    "regime R² at {}: ridge fallback in {} blocks",
                    format_duration(lag),
                    out.ridged
                ));
            }
        }
        RegimeScore {
            lag,
            cc,
            r2: r2.map(|o| o.score),
        }
    };
    let regime_lags: Vec<Nanos> = std::iter::once(0).chain(cfg.regime_lags.iter().copied()).collect();
    let mut regime_raw = Vec::new();
    for &lag in &regime_lags {
        let pairs = RegimePairs::lagged(&x_vecs, &y_vecs(lag)?, lag);
        regime_raw.push(regime_score(&pairs, lag, &mut diagnostics));
    }

    let mut regime_ar = Vec::new();
    if cfg.ar_correction {
        let q_series: Vec<(Nanos, Vec<f64>)> = x_vecs
            .iter()
            .map(|v| (v.anchor, v.q_vec.iter().map(|&c| c as f64).collect()))
            .collect();
        let q_res = residualize_components(&q_series, cfg.ar_order);
        for &lag in &regime_lags {
            let r_series: Vec<(Nanos, Vec<f64>)> = y_vecs(lag)?
                .into_iter()
                .map(|v| (v.anchor, v.r_vec.iter().map(|&c| c as f64).collect()))
                .collect();
            let score = match (&q_res, residualize_components(&r_series, cfg.ar_order)) {
                (Ok(q), Ok(r)) => regime_score(&RegimePairs::from_keyed(q, &r, lag), lag, &mut diagnostics),
                (Err(e), _) => {
                    diagnostics.push(format!("AR on regimes at {}: {e}", format_duration(lag)));
                    RegimeScore { lag, cc: None, r2: None }
                }
                (_, Err(e)) => {
                    diagnostics.push(format!("AR on regimes at {}: {e}", format_duration(lag)));
                    RegimeScore { lag, cc: None, r2: None }
                }
            };
            regime_ar.push(score);
        }
    }

    // excitation
    let obi_events: Vec<(Nanos, f64)> = match cfg.obi_placement {
        Placement::SubSample => windows.iter().flat_map(|w| variant.samples(w).iter().copied()).collect(),
        Placement::Anchor => x.clone(),
    };
    let ret_events = &plan.lagged_returns[&0];
    let stream = build_marked_stream(&obi_events, ret_events, &plan.scheme, plan.meta.session_start, plan.meta.session_end)?;
    let kernel = fit_with(&stream, &cfg.decays, cfg.hawkes_max_iter, TOLERANCE)?;
    let emask = ExcitationMask::new(cfg.obi_bins, cfg.ret_bins, cfg.mask_sigma, cfg.orientation(variant))?;
    let s_phi = excitation_score(&kernel, &emask)?;
    if !kernel.converged {
        diagnostics.push(format!("hawkes fit stopped after {} iterations", kernel.iterations));
    }
    if kernel.spectral_radius >= 1.0 {
        diagnostics.push(format!("hawkes spectral radius {:.4} ≥ 1", kernel.spectral_radius));
    }

    let at0 = |v: &[RegimeScore]| v.iter().find(|s| s.lag == 0).copied();
    let y0: Vec<f64> = ret_events.iter().map(|p| p.1).collect();
    let x0: Vec<f64> = x.iter().map(|p| p.1).collect();
    let s_rho_ar = x_ar.as_ref().and_then(|xa| lagged_pearson(xa, &ar_y[&0], &[0])[&0]);
    let headline = Headline {
        s_rho: pearson_score(&x0, &y0),
        s_rho_ar,
        s_rho_lambda: at0(&regime_raw).and_then(|s| s.cc),
        s_rho_lambda_ar: at0(&regime_ar).and_then(|s| s.cc),
        s_r2: at0(&regime_raw).and_then(|s| s.r2),
        s_r2_ar: at0(&regime_ar).and_then(|s| s.r2),
        s_phi: Some(s_phi),
    };
    // lag 0 only feeds the headline
    regime_raw.retain(|s| cfg.regime_lags.contains(&s.lag));
    regime_ar.retain(|s| cfg.regime_lags.contains(&s.lag));

    let mut regimes_csv = Vec::new();
    write_regimes(&mut regimes_csv, &x_vecs, &plan.scheme)?;
    let report = ScoreReport {
        date: plan.date.clone(),
        filter_label: cell.spec.label(),
        variant,
        n_windows: windows.len(),
        pearson_raw,
        pearson_ar,
        regime_raw,
        regime_ar,
        headline,
        hawkes: Some(HawkesDiagnostics {
            spectral_radius: kernel.spectral_radius,
            converged: kernel.converged,
            iterations: kernel.iterations,
            loglik: kernel.loglik,
            events: stream.len(),
        }),
        diagnostics,
    };
    Ok((report, String::from_utf8(regimes_csv).expect("ascii csv"), kernel))
}

/// Residualises each component of a keyed vector series independently.
fn residualize_components(series: &[(Nanos, Vec<f64>)], order: usize) -> Result<Vec<(Nanos, Vec<f64>)>> {
    let dims = series.first().map_or(0, |s| s.1.len());
    let mut out: Option<Vec<(Nanos, Vec<f64>)>> = None;
    for c in 0..dims {
        let comp: Vec<(Nanos, f64)> = series.iter().map(|(t, v)| (*t, v[c])).collect();
        let res = ar_residualize_keyed(&comp, order)?;
        let acc = out.get_or_insert_with(|| res.iter().map(|(t, _)| (*t, Vec::with_capacity(dims))).collect());
        for (slot, (_, r)) in acc.iter_mut().zip(res) {
            slot.1.push(r);
        }
    }
    out.ok_or_else(|| Error::InsufficientData("empty component series".into()))
}

fn run_session(session: &Session, cfg: &RunConfig) -> Result<(Vec<ScoreReport>, Vec<CellFailure>, Vec<CellArtifacts>)> {
    let meta = &session.meta;
    let date = meta.date_tag();
    let grid = WindowGrid::new(meta.session_start, meta.session_end, cfg.h, cfg.stride, cfg.xi, cfg.sub_step)?;
    let specs = cfg.filter_grid();

    let cells: Vec<FilterCell> = specs
        .par_iter()
        .map(|&spec| prepare_filter(session, spec, &grid, cfg.trade_signing))
        .collect();

    let common: Vec<usize> = (0..grid.anchors.len())
        .filter(|&i| {
            cells.iter().all(|c| {
                let w = &c.signals[i];
                w.return_for(cfg.return_source).is_some() && cfg.variants.iter().all(|v| v.value(w).is_some())
            })
        })
        .collect();
    log::info!(
        "{date}: {} of {} windows valid under all {} filters",
        common.len(),
        grid.anchors.len(),
        cells.len()
    );

    // returns only depend on the trade tape, which every filter keeps intact
    let base = &cells[0].index;
    let mut lagged_returns = BTreeMap::new();
    for lag in std::iter::once(0).chain(cfg.lags.iter().copied()).chain(cfg.regime_lags.iter().copied()) {
        lagged_returns.entry(lag).or_insert_with(|| {
            common
                .iter()
                .filter_map(|&i| {
                    let t = grid.anchors[i] + lag;
                    return_at(base, &grid, t, cfg.return_source).map(|r| (t, r))
                })
                .collect::<Vec<_>>()
        });
    }
    let calib: Vec<f64> = lagged_returns[&0].iter().map(|p| p.1).collect();
    let scheme = RegimeScheme::calibrated(cfg.obi_bins, cfg.ret_bins, &calib, cfg.ret_quantile)?;
    let plan = SessionPlan {
        cfg,
        date: date.clone(),
        meta,
        common,
        lagged_returns,
        scheme,
    };

    let jobs: Vec<(usize, SignalVariant)> = (0..cells.len())
        .flat_map(|c| cfg.variants.iter().map(move |&v| (c, v)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(c, v)| (c, v, score_cell(&plan, &cells[c], v)))
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut artifacts: Vec<CellArtifacts> = cells
        .iter()
        .map(|c| {
            let mut buf = Vec::new();
            write_signals(&mut buf, &c.signals).expect("in-memory write");
            CellArtifacts {
                date: date.clone(),
                filter_label: c.spec.label(),
                signals_csv: String::from_utf8(buf).expect("ascii csv"),
                regimes_csv: Vec::new(),
                kernels: Vec::new(),
                excluded_orders: c.excluded,
                clamped: c.clamped,
            }
        })
        .collect();
    for (c, v, res) in results {
        match res {
            Ok((report, regimes, kernel)) => {
                reports.push(report);
                artifacts[c].regimes_csv.push((v, regimes));
                artifacts[c].kernels.push((v, kernel));
            }
            Err(e) => {
                log::error!("{date}_{} [{}]: {e}", cells[c].spec.label(), v.tag());
                failures.push(CellFailure {
                    date: date.clone(),
                    filter_label: cells[c].spec.label(),
                    variant: Some(v),
                    message: e.to_string(),
                });
            }
        }
    }
    if !cfg.artifacts {
        artifacts.clear();
    }
    Ok((reports, failures, artifacts))
}

/// Sessions described by the config, in order: tick files, then synthetic
/// seeds.
pub fn load_sessions(cfg: &RunConfig) -> Result<Vec<Session>> {
    let mut sessions = Vec::new();
    for input in &cfg.inputs {
        sessions.push(Session::from_input(input)?);
    }
    if let Some(g) = &cfg.synthetic {
        let seeds = if cfg.seeds.is_empty() { vec![g.seed] } else { cfg.seeds.clone() };
        let generated: Vec<Result<Session>> = seeds
            .par_iter()
            .map(|&seed| Session::synthetic(&GeneratorConfig { seed, ..g.clone() }))
            .collect();
        for s in generated {
            sessions.push(s?);
        }
    }
    Ok(sessions)
}

/// Runs every configured cell on the current rayon pool.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let sessions = load_sessions(cfg)?;
    run_sessions(&sessions, cfg)
}

pub fn run_sessions(sessions: &[Session], cfg: &RunConfig) -> Result<RunOutput> {
    let mut out = RunOutput {
        lags: cfg.lags.clone(),
        regime_lags: cfg.regime_lags.clone(),
        reports: Vec::new(),
        failures: Vec::new(),
        artifacts: Vec::new(),
    };
    for session in sessions {
        match run_session(session, cfg) {
            Ok((r, f, a)) => {
                out.reports.extend(r);
                out.failures.extend(f);
                out.artifacts.extend(a);
            }
            Err(e) => {
                log::error!("{}: {e}", session.meta.date_tag());
                out.failures.push(CellFailure {
                    date: session.meta.date_tag(),
                    filter_label: "*".into(),
                    variant: None,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Runs on a dedicated pool of `jobs` threads.
pub fn run_pipeline_with_jobs(cfg: &RunConfig, jobs: usize) -> Result<RunOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| run_pipeline(cfg))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the report tables (and, when present, per-cell artifacts) under
/// `dir`. Returns the table paths.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut variants: Vec<SignalVariant> = Vec::new();
    for r in &out.reports {
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    for v in &variants {
        let rows: Vec<&ScoreReport> = out.reports.iter().filter(|r| r.variant == *v).collect();
        for (name, pick) in [("corr_raw", false), ("corr_ar", true)] {
            let mut header = vec!["date_filter".to_string()];
            header.extend(out.lags.iter().map(|&l| format_duration(l)));
            header.push("n_windows".into());
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let scores = if pick { &r.pearson_ar } else { &r.pearson_raw };
                    let mut row = vec![r.row_label()];
                    row.extend(out.lags.iter().map(|&l| cell(scores.iter().find(|s| s.lag == l).and_then(|s| s.value))));
                    row.push(r.n_windows.to_string());
                    row
                })
                .collect();
            let path = dir.join(format!("{name}_{}.csv", v.tag()));
            write_csv(&path, &header, &body)?;
            written.push(path);
        }
        for (name, pick) in [("regime_raw", false), ("regime_ar", true)] {
            let mut header = vec!["date_filter".to_string()];
            for &l in &out.regime_lags {
                header.push(format!("CC_{}", format_duration(l)));
                header.push(format!("R2_{}", format_duration(l)));
            }
            header.push("n_windows".into());
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let scores = if pick { &r.regime_ar } else { &r.regime_raw };
                    let mut row = vec![r.row_label()];
                    for &l in &out.regime_lags {
                        let s = scores.iter().find(|s| s.lag == l);
                        row.push(cell(s.and_then(|s| s.cc)));
                        row.push(cell(s.and_then(|s| s.r2)));
                    }
                    row.push(r.n_windows.to_string());
                    row
                })
                .collect();
            let path = dir.join(format!("{name}_{}.csv", v.tag()));
            write_csv(&path, &header, &body)?;
            written.push(path);
        }
        let header: Vec<String> = ["date_filter", "SumExp", "spectral_radius", "converged", "iterations", "n_windows"]
            .map(String::from)
            .to_vec();
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let h = r.hawkes.as_ref();
                vec![
                    r.row_label(),
                    cell(r.headline.s_phi),
                    cell(h.map(|h| h.spectral_radius)),
                    h.map(|h| h.converged.to_string()).unwrap_or_default(),
                    h.map(|h| h.iterations.to_string()).unwrap_or_default(),
                    r.n_windows.to_string(),
                ]
            })
            .collect();
        let path = dir.join(format!("hawkes_{}.csv", v.tag()));
        write_csv(&path, &header, &body)?;
        written.push(path);
    }
    let header: Vec<String> = [
        "date_filter",
        "variant",
        "S_rho",
        "S_rho_AR",
        "S_rho_Lambda",
        "S_rho_Lambda_AR",
        "S_R2",
        "S_R2_AR",
        "S_phi",
        "n_windows",
    ]
    .map(String::from)
    .to_vec();
    let body: Vec<Vec<String>> = out
        .reports
        .iter()
        .map(|r| {
            let h = &r.headline;
            vec![
                r.row_label(),
                r.variant.tag().to_string(),
                cell(h.s_rho),
                cell(h.s_rho_ar),
                cell(h.s_rho_lambda),
                cell(h.s_rho_lambda_ar),
                cell(h.s_r2),
                cell(h.s_r2_ar),
                cell(h.s_phi),
                r.n_windows.to_string(),
            ]
        })
        .collect();
    let path = dir.join("summary.csv");
    write_csv(&path, &header, &body)?;
    written.push(path);

    let path = dir.join("report.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, out)?;
    w.write_all(b"\n")?;
    w.flush()?;
    written.push(path);

    for a in &out.artifacts {
        let cell_dir = dir.join(&a.date).join(&a.filter_label);
        fs::create_dir_all(&cell_dir)?;
        fs::write(cell_dir.join("signals.csv"), &a.signals_csv)?;
        for (v, csv) in &a.regimes_csv {
            fs::write(cell_dir.join(format!("regimes_{}.csv", v.tag())), csv)?;
        }
        for (v, k) in &a.kernels {
            let mut w = BufWriter::new(File::create(cell_dir.join(format!("kernel_{}.json", v.tag())))?);
            k.write_json(&mut w)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(written)
}

/// Reads a `report.json` written by [`write_outputs`].
pub fn read_report(path: impl AsRef<Path>) -> Result<RunOutput> {
    let file = File::open(path.as_ref())?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
