//! Regime discretisation of imbalance and return series.
//!
//! Imbalance bins are uniform over `[-1, 1]`, left-closed except the last bin
//! which also contains `+1`. Return bins are split by symmetric cut points
//! calibrated from the session's own absolute returns; zero falls in the first
//! bin above zero.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{ReturnSource, SignalVariant, WindowSignal};
use crate::units::Nanos;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeScheme {
    /// Full edge list over `[-1, 1]`, `obi_bins + 1` entries.
    pub obi_edges: Vec<f64>,
    /// Interior cut points for returns, `ret_bins - 1` entries.
    pub ret_edges: Vec<f64>,
}

impl RegimeScheme {
    pub const DEFAULT_OBI_BINS: usize = 9;
    pub const DEFAULT_RET_BINS: usize = 4;
    /// |return| quantile for the innermost nonzero cut.
    pub const DEFAULT_RET_QUANTILE: f64 = 0.6;

    pub fn new(obi_edges: Vec<f64>, ret_edges: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite());
        if obi_edges.len() < 3 || !increasing(&obi_edges) {
            return Err(Error::Config("imbalance edges must be strictly increasing with at least two bins".into()));
        }
        if obi_edges[0] != -1.0 || obi_edges[obi_edges.len() - 1] != 1.0 {
            return Err(Error::Config("imbalance edges must span [-1, 1]".into()));
        }
        if ret_edges.is_empty() || !increasing(&ret_edges) {
            return Err(Error::Config("return cuts must be strictly increasing with at least two bins".into()));
        }
        Ok(RegimeScheme { obi_edges, ret_edges })
    }

    /// `n` equal-width bins over `[-1, 1]`. Edges are `(2k - n) / n`, exactly
    /// antisymmetric in floating point.
    pub fn uniform_obi_edges(n: usize) -> Vec<f64> {
        (0..=n).map(|k| (2 * k as i64 - n as i64) as f64 / n as f64).collect()
    }

    /// Symmetric return cuts from the quantiles of `|returns|`.
    ///
    /// With `m` positive cuts the k-th sits at quantile
    /// `q + (1 - q)(k - 1)/m`; an even bin count adds a cut at zero. For four
    /// bins this gives `{-θ, 0, θ}` with θ the `q`-quantile.
    pub fn return_cuts(returns: &[f64], bins: usize, q: f64) -> Result<Vec<f64>> {
        if bins < 2 {
            return Err(Error::Config("need at least two return bins".into()));
        }
        if !(0.0..1.0).contains(&q) {
            return Err(Error::Config(format!("return quantile {q} outside [0, 1)")));
        }
        let mut mags: Vec<f64> = returns.iter().filter(|r| r.is_finite()).map(|r| r.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let positive = if bins % 2 == 0 { bins / 2 - 1 } else { (bins - 1) / 2 };
        let mut thetas = Vec::with_capacity(positive);
        let mut floor = 0.0_f64;
        for k in 0..positive {
            let level = q + (1.0 - q) * k as f64 / positive as f64;
            let theta = quantile_sorted(&mags, level).unwrap_or(0.0).max(floor.next_up());
            thetas.push(theta);
            floor = theta;
        }
        let mut cuts: Vec<f64> = thetas.iter().rev().map(|t| -t).collect();
        if bins % 2 == 0 {
            cuts.push(0.0);
        }
        cuts.extend(&thetas);
        Ok(cuts)
    }

    pub fn calibrated(obi_bins: usize, ret_bins: usize, returns: &[f64], q: f64) -> Result<Self> {
        if obi_bins < 2 {
            return Err(Error::Config("need at least two imbalance bins".into()));
        }
        RegimeScheme::new(Self::uniform_obi_edges(obi_bins), Self::return_cuts(returns, ret_bins, q)?)
    }

    pub fn obi_bins(&self) -> usize {
        self.obi_edges.len() - 1
    }

    pub fn ret_bins(&self) -> usize {
        self.ret_edges.len() + 1
    }

    pub fn discretize_obi(&self, value: f64) -> Result<usize> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!("imbalance {value} outside [-1, 1]")));
        }
        let interior = &self.obi_edges[1..self.obi_edges.len() - 1];
        Ok(interior.partition_point(|&e| e <= value))
    }

    pub fn discretize_return(&self, value: f64) -> Result<usize> {
        if !value.is_finite() {
            return Err(Error::Domain(format!("non-finite return {value}")));
        }
        Ok(self.ret_edges.partition_point(|&e| e <= value))
    }

    pub fn return_one_hot(&self, value: f64) -> Result<Vec<u8>> {
        let mut v = vec![0; self.ret_bins()];
        v[self.discretize_return(value)?] = 1;
        Ok(v)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeVectors {
    pub anchor: Nanos,
    /// Occupancy counts of imbalance regimes over the window's sub-samples.
    pub q_vec: Vec<u32>,
    /// One-hot return regime.
    pub r_vec: Vec<u8>,
}

impl RegimeVectors {
    pub fn ret_bin(&self) -> usize {
        self.r_vec.iter().position(|&x| x == 1).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeBuild {
    pub vectors: Vec<RegimeVectors>,
    /// Windows skipped for a missing signal or return.
    pub excluded: usize,
}

/// One vector pair per window that has both a signal value and a return.
pub fn build_regime_vectors(
    signals: &[WindowSignal],
    scheme: &RegimeScheme,
    variant: SignalVariant,
    source: ReturnSource,
) -> Result<RegimeBuild> {
    let mut vectors = Vec::with_capacity(signals.len());
    let mut excluded = 0;
    for w in signals {
        let (Some(_), Some(ret)) = (variant.value(w), w.return_for(source)) else {
            excluded += 1;
            continue;
        };
        let mut q_vec = vec![0; scheme.obi_bins()];
        for &(_, v) in variant.samples(w) {
            q_vec[scheme.discretize_obi(v)?] += 1;
        }
        vectors.push(RegimeVectors {
            anchor: w.anchor,
            q_vec,
            r_vec: scheme.return_one_hot(ret)?,
        });
    }
    Ok(RegimeBuild { vectors, excluded })
}

/// CSV `anchor_ns,q0..q{n-1},r0..r{m-1}`.
pub fn write_regimes<W: Write>(w: W, vectors: &[RegimeVectors], scheme: &RegimeScheme) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["anchor_ns".to_string()];
    header.extend((0..scheme.obi_bins()).map(|i| format!("q{i}")));
    header.extend((0..scheme.ret_bins()).map(|j| format!("r{j}")));
    wtr.write_record(&header)?;
    for v in vectors {
        let mut row = vec![v.anchor.to_string()];
        row.extend(v.q_vec.iter().map(u32::to_string));
        row.extend(v.r_vec.iter().map(u8::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scheme() -> RegimeScheme {
        RegimeScheme::new(RegimeScheme::uniform_obi_edges(9), vec![-0.01, 0.0, 0.01]).unwrap()
    }

    #[test]
    fn obi_bins() {
        let s = scheme();
        assert_eq!(s.discretize_obi(0.0).unwrap(), 4);
        assert_eq!(s.discretize_obi(-1.0).unwrap(), 0);
        assert_eq!(s.discretize_obi(1.0).unwrap(), 8);
        assert_eq!(s.discretize_obi(0.12).unwrap(), 5);
        assert!(s.discretize_obi(1.0001).is_err());
        assert!(s.discretize_obi(f64::NAN).is_err());
    }

    #[test]
    fn return_bins() {
        let s = scheme();
        assert_eq!(s.discretize_return(0.0).unwrap(), 2);
        assert_eq!(s.discretize_return(-0.02).unwrap(), 0);
        assert_eq!(s.discretize_return(-0.005).unwrap(), 1);
        assert_eq!(s.discretize_return(0.01).unwrap(), 3);
    }

    #[test]
    fn calibrated_extremes_hold_about_forty_percent() {
        // symmetric grid of returns, |r| uniform on (0, 1]
        let returns: Vec<f64> = (1..=1000).flat_map(|i| [i as f64 / 1000.0, -(i as f64) / 1000.0]).collect();
        let s = RegimeScheme::calibrated(9, 4, &returns, 0.6).unwrap();
        let mut counts = [0usize; 4];
        for r in &returns {
            counts[s.discretize_return(*r).unwrap()] += 1;
        }
        let n = returns.len() as f64;
        assert!((counts[0] as f64 / n - 0.2).abs() < 0.01, "{counts:?}");
        assert!((counts[3] as f64 / n - 0.2).abs() < 0.01, "{counts:?}");
    }

    #[test]
    fn three_bin_scheme_is_supported() {
        let s = RegimeScheme::calibrated(5, 3, &[0.1, -0.2, 0.3, 0.0], 0.6).unwrap();
        assert_eq!(s.obi_bins(), 5);
        assert_eq!(s.ret_bins(), 3);
        assert_eq!(s.ret_edges.len(), 2);
        assert_eq!(s.ret_edges[0], -s.ret_edges[1]);
        assert_eq!(s.discretize_return(0.0).unwrap(), 1);
    }

    #[test]
    fn degenerate_returns_still_give_increasing_cuts() {
        let s = RegimeScheme::calibrated(9, 6, &[0.0; 10], 0.6).unwrap();
        assert!(s.ret_edges.windows(2).all(|w| w[0] < w[1]));
    }

    fn window(anchor: Nanos, samples: &[f64], ret: Option<f64>) -> WindowSignal {
        WindowSignal {
            anchor,
            n_buy: 1,
            n_sell: 1,
            obi: Some(0.0),
            trade_obi: None,
            ret,
            fwd_ret: None,
            obi_samples: samples.iter().enumerate().map(|(i, &v)| (i as Nanos, v)).collect(),
            trade_obi_samples: vec![],
        }
    }

    #[test]
    fn vectors_from_windows() {
        let s = scheme();
        let signals = vec![window(1, &[0.0, 0.05, -0.05], Some(0.02)), window(2, &[0.0], None)];
        let built = build_regime_vectors(&signals, &s, SignalVariant::BookObi, ReturnSource::Backward).unwrap();
        assert_eq!(built.excluded, 1);
        assert_eq!(built.vectors.len(), 1);
        assert_eq!(built.vectors[0].q_vec, vec![0, 0, 0, 0, 3, 0, 0, 0, 0]);
        assert_eq!(built.vectors[0].r_vec, vec![0, 0, 0, 1]);
        // trade variant has no value here: everything excluded
        let built = build_regime_vectors(&signals, &s, SignalVariant::TradeObi, ReturnSource::Backward).unwrap();
        assert_eq!(built.excluded, 2);
    }

    proptest! {
        #[test]
        fn monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let s = scheme();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.discretize_obi(lo).unwrap() <= s.discretize_obi(hi).unwrap());
        }

        #[test]
        fn symmetric_off_edges(v in -1.0f64..=1.0) {
            let s = scheme();
            prop_assume!(!s.obi_edges.contains(&v) && !s.obi_edges.contains(&-v));
            prop_assert_eq!(s.discretize_obi(-v).unwrap(), 8 - s.discretize_obi(v).unwrap());
        }

        #[test]
        fn matches_floor_formula(v in -1.0f64..1.0) {
            let s = scheme();
            let expected = (((v + 1.0) * 9.0 / 2.0).floor() as usize).min(8);
            // avoid values within rounding distance of an edge
            let frac = ((v + 1.0) * 4.5).fract();
            prop_assume!(frac > 1e-9 && frac < 1.0 - 1e-9);
            prop_assert_eq!(s.discretize_obi(v).unwrap(), expected);
        }
    }
}
