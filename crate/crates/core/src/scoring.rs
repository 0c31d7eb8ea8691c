//! Associative scores between imbalance and return series.
//!
//! * plain and lagged Pearson correlation,
//! * AR residualisation used for the autocorrelation-corrected variants,
//! * the masked regime correlation and the blockwise regime R².

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ols, ols_vec};
use crate::regimes::RegimeVectors;
use crate::signals::SignalVariant;
use crate::units::Nanos;

/// Number of contiguous blocks for regime scores.
pub const DEFAULT_BLOCKS: usize = 20;
/// Ridge penalty used when a block's regime design is rank deficient.
pub const RIDGE: f64 = 1e-8;
pub const DEFAULT_AR_ORDER: usize = 5;

/// Pearson correlation with a single-pass co-moment update.
///
/// `None` for fewer than two points, mismatched lengths or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson score over an aligned window ensemble; needs at least three
/// points. Degenerate input yields `None` with a logged diagnostic.
pub fn pearson_score(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 3 {
        log::debug!("pearson: only {} aligned windows", x.len());
        return None;
    }
    let r = pearson(x, y);
    if r.is_none() {
        log::debug!("pearson: zero variance over {} windows", x.len());
    }
    r
}

/// For each lag, Pearson of `x` at τ against `y` at τ + lag. Both series are
/// keyed by anchor; `y` may live on a different grid than `x`.
pub fn lagged_pearson(x: &[(Nanos, f64)], y: &[(Nanos, f64)], lags: &[Nanos]) -> BTreeMap<Nanos, Option<f64>> {
    let y_at: BTreeMap<Nanos, f64> = y.iter().copied().collect();
    lags.iter()
        .map(|&lag| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = x
                .iter()
                .filter_map(|&(t, xv)| y_at.get(&(t + lag)).map(|&yv| (xv, yv)))
                .unzip();
            (lag, pearson_score(&xs, &ys))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArFit {
    pub order: usize,
    pub coefficients: Vec<f64>,
    pub mean: f64,
    /// Residual for input index `offset + k` at position `k`.
    pub residuals: Vec<f64>,
    pub offset: usize,
    /// Set when the higher orders were singular and AR(1) (or, for a constant
    /// series, the demeaned input) was used.
    pub fallback: bool,
}

/// Residuals of the AIC-best AR(p), `1 <= p <= max_order`, fitted by least
/// squares on the demeaned series.
///
/// All orders are compared on the same effective sample, which starts at
/// index `max_order`; the residual series is aligned to that offset.
pub fn ar_residualize(series: &[f64], max_order: usize) -> Result<ArFit> {
    if max_order == 0 {
        return Err(Error::Config("autoregressive order must be at least 1".into()));
    }
    let n = series.len();
    if n <= 10 * max_order {
        return Err(Error::InsufficientData(format!(
            "{n} points for an order-{max_order} autoregression"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let n_eff = n - max_order;
    let target = DVector::from_iterator(n_eff, z[max_order..].iter().copied());

    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>)> = None;
    for p in 1..=max_order {
        let design = DMatrix::from_fn(n_eff, p, |r, c| z[max_order + r - 1 - c]);
        let Ok(fit) = ols_vec(&design, &target, 0.0) else {
            continue;
        };
        if fit.sse <= 0.0 && best.is_some() {
            continue;
        }
        let aic = n_eff as f64 * (fit.sse.max(f64::MIN_POSITIVE) / n_eff as f64).ln() + 2.0 * p as f64;
        if best.as_ref().is_none_or(|b| aic < b.0) {
            best = Some((
                aic,
                p,
                fit.beta.column(0).iter().copied().collect(),
                fit.residuals.column(0).iter().copied().collect(),
            ));
        }
    }
    Ok(match best {
        Some((_, order, coefficients, residuals)) => ArFit {
            order,
            coefficients,
            mean,
            residuals,
            offset: max_order,
            fallback: false,
        },
        None => {
            log::debug!("autoregression: singular design, using demeaned series");
            ArFit {
                order: 1,
                coefficients: vec![0.0],
                mean,
                residuals: z[max_order..].to_vec(),
                offset: max_order,
                fallback: true,
            }
        }
    })
}

/// Residualises a keyed series and keeps the anchor of each residual.
pub fn ar_residualize_keyed(series: &[(Nanos, f64)], max_order: usize) -> Result<Vec<(Nanos, f64)>> {
    let values: Vec<f64> = series.iter().map(|p| p.1).collect();
    let fit = ar_residualize(&values, max_order)?;
    Ok(series[fit.offset..]
        .iter()
        .zip(&fit.residuals)
        .map(|(&(t, _), &r)| (t, r))
        .collect())
}

/// Sign convention between imbalance and return directions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Positive imbalance aligns with negative return (sell-minus-buy book
    /// imbalance).
    #[default]
    Inverse,
    /// Positive imbalance aligns with positive return.
    Direct,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Inverse => -1.0,
            Orientation::Direct => 1.0,
        }
    }
}

/// Bin centres mapped onto `[-1, 1]`: `(i - c) / c` with `c = (n - 1) / 2`.
pub fn bin_directions(n: usize) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    (0..n).map(|i| if c == 0.0 { 0.0 } else { (i as f64 - c) / c }).collect()
}

/// Sign-weighted alignment mask over (imbalance bin, return bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskLambda {
    /// `values[i][j]` for imbalance bin `i`, return bin `j`.
    pub values: Vec<Vec<f64>>,
    pub sigma: f64,
    pub orientation: Orientation,
}

impl MaskLambda {
    pub const DEFAULT_SIGMA: f64 = 0.5;

    pub fn new(obi_bins: usize, ret_bins: usize, sigma: f64, orientation: Orientation) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::Config(format!("mask bandwidth {sigma} must be positive")));
        }
        let u = bin_directions(obi_bins);
        let v = bin_directions(ret_bins);
        let s = orientation.sign();
        let values = u
            .iter()
            .map(|&ui| {
                v.iter()
                    .map(|&vj| {
                        let sign = (ui * vj * s).signum();
                        if ui == 0.0 || vj == 0.0 {
                            0.0
                        } else {
                            sign * (-(ui.abs() - vj.abs()).powi(2) / (2.0 * sigma * sigma)).exp()
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(MaskLambda {
            values,
            sigma,
            orientation,
        })
    }

    /// 9 × 4 mask with σ = 0.5.
    pub fn reference(orientation: Orientation) -> Self {
        Self::new(9, 4, Self::DEFAULT_SIGMA, orientation).expect("valid reference mask")
    }

    pub fn zeros(obi_bins: usize, ret_bins: usize) -> Self {
        MaskLambda {
            values: vec![vec![0.0; ret_bins]; obi_bins],
            sigma: Self::DEFAULT_SIGMA,
            orientation: Orientation::default(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.len(), self.values.first().map_or(0, Vec::len))
    }
}

/// Regime vectors paired for scoring: `q[k]` observed at some anchor, `r[k]`
/// observed `lag` later.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegimePairs {
    pub anchors: Vec<Nanos>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

impl RegimePairs {
    pub fn contemporaneous(vectors: &[RegimeVectors]) -> Self {
        Self::lagged(vectors, vectors, 0)
    }

    /// Pairs `q` of `x` at τ with `r` of `y` at τ + lag.
    pub fn lagged(x: &[RegimeVectors], y: &[RegimeVectors], lag: Nanos) -> Self {
        let y_at: BTreeMap<Nanos, &RegimeVectors> = y.iter().map(|v| (v.anchor, v)).collect();
        let mut out = RegimePairs::default();
        for v in x {
            if let Some(w) = y_at.get(&(v.anchor + lag)) {
                out.anchors.push(v.anchor);
                out.q.push(v.q_vec.iter().map(|&c| c as f64).collect());
                out.r.push(w.r_vec.iter().map(|&c| c as f64).collect());
            }
        }
        out
    }

    /// Pairs arbitrary real-valued component series keyed by anchor.
    pub fn from_keyed(q: &[(Nanos, Vec<f64>)], r: &[(Nanos, Vec<f64>)], lag: Nanos) -> Self {
        let r_at: BTreeMap<Nanos, &Vec<f64>> = r.iter().map(|(t, v)| (*t, v)).collect();
        let mut out = RegimePairs::default();
        for (t, qv) in q {
            if let Some(rv) = r_at.get(&(t + lag)) {
                out.anchors.push(*t);
                out.q.push(qv.clone());
                out.r.push((*rv).clone());
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    fn dims(&self) -> (usize, usize) {
        (
            self.q.first().map_or(0, Vec::len),
            self.r.first().map_or(0, Vec::len),
        )
    }
}

/// Contiguous block boundaries `[b·n/B, (b+1)·n/B)`.
pub fn block_ranges(n: usize, blocks: usize) -> Vec<std::ops::Range<usize>> {
    (0..blocks).map(|b| b * n / blocks..(b + 1) * n / blocks).collect()
}

/// Block-averaged correlation matrix between q and r components; degenerate
/// entries count as zero.
pub fn block_correlation(pairs: &RegimePairs, blocks: usize) -> Result<Vec<Vec<f64>>> {
    if blocks < 2 {
        return Err(Error::Config("need at least two blocks".into()));
    }
    if pairs.len() < 2 * blocks {
        return Err(Error::InsufficientData(format!(
            "{} windows for {blocks} blocks",
            pairs.len()
        )));
    }
    let (nq, nr) = pairs.dims();
    let mut acc = vec![vec![0.0; nr]; nq];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for range in block_ranges(pairs.len(), blocks) {
        for (i, row) in acc.iter_mut().enumerate() {
            xs.clear();
            xs.extend(pairs.q[range.clone()].iter().map(|q| q[i]));
            for (j, cell) in row.iter_mut().enumerate() {
                ys.clear();
                ys.extend(pairs.r[range.clone()].iter().map(|r| r[j]));
                *cell += pearson(&xs, &ys).unwrap_or(0.0);
            }
        }
    }
    for row in &mut acc {
        for cell in row {
            *cell /= blocks as f64;
        }
    }
    Ok(acc)
}

/// Signed sum of mask-weighted block-averaged correlations.
pub fn masked_regime_correlation(pairs: &RegimePairs, mask: &MaskLambda, blocks: usize) -> Result<f64> {
    let rho = block_correlation(pairs, blocks)?;
    let (nq, nr) = pairs.dims();
    if mask.shape() != (nq, nr) {
        return Err(Error::Config(format!(
            "mask shape {:?} does not match regimes {nq}x{nr}",
            mask.shape()
        )));
    }
    Ok(rho
        .iter()
        .zip(&mask.values)
        .flat_map(|(r, m)| r.iter().zip(m).map(|(a, b)| a * b))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Outcome {
    pub score: f64,
    /// Blocks that entered the sum.
    pub blocks_used: usize,
    /// Blocks whose regression needed the ridge fallback.
    pub ridged: usize,
}

/// Sum over blocks of the pooled R² of the centred regression of `r` on `q`.
///
/// Blocks with no more windows than regressors, or with a constant target,
/// are skipped.
pub fn regime_r2(pairs: &RegimePairs, blocks: usize) -> Result<R2Outcome> {
    if blocks == 0 {
        return Err(Error::Config("need at least one block".into()));
    }
    let (nq, nr) = pairs.dims();
    let mut out = R2Outcome {
        score: 0.0,
        blocks_used: 0,
        ridged: 0,
    };
    for range in block_ranges(pairs.len(), blocks) {
        let n = range.len();
        // centring spends one degree of freedom on the intercept
        if n <= nq + 1 {
            continue;
        }
        let q = &pairs.q[range.clone()];
        let r = &pairs.r[range];
        let x = centred(q, nq);
        let y = centred(r, nr);
        let sst: f64 = y.iter().map(|v| v * v).sum();
        if sst <= 0.0 {
            continue;
        }
        let fit = ols(&x, &y, RIDGE)?;
        if fit.ridged {
            out.ridged += 1;
        }
        out.score += 1.0 - fit.sse / sst;
        out.blocks_used += 1;
    }
    if out.blocks_used == 0 {
        return Err(Error::InsufficientData("no block supports a regime regression".into()));
    }
    if out.ridged > 0 {
        log::debug!("regime R²: ridge fallback in {} of {} blocks", out.ridged, out.blocks_used);
    }
    Ok(out)
}

fn centred(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    let n = rows.len();
    let mut m = DMatrix::from_fn(n, cols, |i, j| rows[i][j]);
    for j in 0..cols {
        let mean = m.column(j).sum() / n as f64;
        m.column_mut(j).add_scalar_mut(-mean);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagScore {
    pub lag: Nanos,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeScore {
    pub lag: Nanos,
    pub cc: Option<f64>,
    pub r2: Option<f64>,
}

/// Lag-0 headline values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub s_rho: Option<f64>,
    pub s_rho_ar: Option<f64>,
    pub s_rho_lambda: Option<f64>,
    pub s_rho_lambda_ar: Option<f64>,
    pub s_r2: Option<f64>,
    pub s_r2_ar: Option<f64>,
    pub s_phi: Option<f64>,
}

/// Fit summary attached to a report row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesDiagnostics {
    pub spectral_radius: f64,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    pub events: usize,
}

/// All scores of one (session, filter, variant) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub date: String,
    pub filter_label: String,
    pub variant: SignalVariant,
    /// Windows in the evaluation set shared by all filters.
    pub n_windows: usize,
    pub pearson_raw: Vec<LagScore>,
    pub pearson_ar: Vec<LagScore>,
    pub regime_raw: Vec<RegimeScore>,
    pub regime_ar: Vec<RegimeScore>,
    pub headline: Headline,
    pub hawkes: Option<HawkesDiagnostics>,
    pub diagnostics: Vec<String>,
}

impl ScoreReport {
    /// Row label such as `20230102_MTF-50ms`.
    pub fn row_label(&self) -> String {
        format!("{}_{}", self.date, self.filter_label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn pearson_trivia() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_score(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_score(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson_score(&x, &[1.0; 4]), None);
        assert_eq!(pearson_score(&x[..2], &x[..2]), None);
    }

    #[test]
    fn lag_pairs_by_anchor() {
        let x: Vec<(Nanos, f64)> = (0..50).map(|i| (i * 10, (i as f64).sin())).collect();
        let y: Vec<(Nanos, f64)> = x.iter().map(|&(t, v)| (t + 30, v)).collect();
        let out = lagged_pearson(&x, &y, &[0, 30]);
        assert!((out[&30].unwrap() - 1.0).abs() < 1e-12);
        assert!(out[&0].unwrap() < 0.99);
        let out = lagged_pearson(&x, &x, &[0, 1_000]);
        assert!((out[&0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(out[&1_000], None);
    }

    #[test]
    fn ar_on_white_noise_keeps_input() {
        let x = noise(2000, 3);
        let fit = ar_residualize(&x, 3).unwrap();
        assert_eq!(fit.residuals.len(), 2000 - 3);
        assert!(fit.coefficients.iter().all(|c| c.abs() < 0.1));
        let r = pearson(&fit.residuals, &x[3..]).unwrap();
        assert!(r > 0.99);
    }

    #[test]
    fn ar_removes_persistence() {
        let e = noise(5000, 4);
        let mut x = vec![0.0; e.len()];
        for t in 1..x.len() {
            x[t] = 0.9 * x[t - 1] + e[t];
        }
        let fit = ar_residualize(&x, 5).unwrap();
        let res = &fit.residuals;
        let r1 = pearson(&res[1..], &res[..res.len() - 1]).unwrap();
        assert!(r1.abs() < 0.05, "{r1}");
        assert!((fit.coefficients[0] - 0.9).abs() < 0.05);
    }

    #[test]
    fn ar_constant_series_falls_back() {
        let fit = ar_residualize(&[2.5; 100], 2).unwrap();
        assert!(fit.fallback);
        assert!(fit.residuals.iter().all(|&r| r == 0.0));
        assert!(ar_residualize(&[1.0; 20], 2).is_err());
    }

    #[test]
    fn mask_reference_values() {
        let m = MaskLambda::reference(Orientation::Direct);
        assert_eq!(m.shape(), (9, 4));
        assert!(m.values[4].iter().all(|&v| v == 0.0));
        assert!((m.values[8][3] - 1.0).abs() < 1e-15);
        assert!((m.values[0][0] - 1.0).abs() < 1e-15);
        assert!((m.values[0][3] + 1.0).abs() < 1e-15);
        let inv = MaskLambda::reference(Orientation::Inverse);
        for i in 0..9 {
            for j in 0..4 {
                assert_eq!(inv.values[i][j], -m.values[i][j]);
                // both axes reflected: unchanged; one axis: negated
                assert_eq!(m.values[8 - i][3 - j], m.values[i][j]);
                assert_eq!(m.values[8 - i][j], -m.values[i][j]);
                assert!(m.values[i][j].abs() <= 1.0);
            }
        }
    }

    fn aligned_vectors(n: usize, seed: u64) -> Vec<RegimeVectors> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let j = rng.random_range(0..4);
                let i = [0, 2, 6, 8][j];
                let mut q = vec![0u32; 9];
                q[i] = rng.random_range(5..10);
                q[4] = rng.random_range(0..3);
                let mut r = vec![0u8; 4];
                r[j] = 1;
                RegimeVectors {
                    anchor: k as Nanos,
                    q_vec: q,
                    r_vec: r,
                }
            })
            .collect()
    }

    #[test]
    fn zero_mask_scores_zero() {
        let pairs = RegimePairs::contemporaneous(&aligned_vectors(200, 1));
        assert_eq!(masked_regime_correlation(&pairs, &MaskLambda::zeros(9, 4), 20).unwrap(), 0.0);
    }

    #[test]
    fn aligned_regimes_beat_permuted_masks() {
        let pairs = RegimePairs::contemporaneous(&aligned_vectors(400, 2));
        let base = MaskLambda::reference(Orientation::Direct);
        let score = masked_regime_correlation(&pairs, &base, 20).unwrap();
        assert!(score > 0.0);
        let perms = permutations(4);
        assert_eq!(perms.len(), 24);
        for p in perms {
            let mut m = base.clone();
            for row in &mut m.values {
                *row = p.iter().map(|&j| row[j]).collect::<Vec<_>>();
            }
            let s = masked_regime_correlation(&pairs, &m, 20).unwrap();
            assert!(s <= score + 1e-12);
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn exact_linear_target_gives_block_count() {
        // r is a one-hot that is a linear function of q
        let pairs = RegimePairs::contemporaneous(&aligned_vectors(400, 5));
        let mut exact = pairs.clone();
        for (q, r) in exact.q.iter_mut().zip(&pairs.r) {
            for (j, &rv) in r.iter().enumerate() {
                q[[0, 2, 6, 8][j]] = rv;
            }
        }
        let out = regime_r2(&exact, 20).unwrap();
        assert_eq!(out.blocks_used, 20);
        assert!((out.score - 20.0).abs() < 1e-6, "{}", out.score);
    }

    #[test]
    fn r2_needs_enough_windows() {
        let pairs = RegimePairs::contemporaneous(&aligned_vectors(40, 6));
        assert!(regime_r2(&pairs, 20).is_err());
        assert!(masked_regime_correlation(&pairs, &MaskLambda::reference(Orientation::Direct), 20).is_ok());
        let tiny = RegimePairs::contemporaneous(&aligned_vectors(30, 6));
        assert!(masked_regime_correlation(&tiny, &MaskLambda::reference(Orientation::Direct), 20).is_err());
    }
}
