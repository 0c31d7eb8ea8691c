//! Regime-labelled point process and a multivariate Hawkes model with a fixed
//! grid of exponential decays.
//!
//! Dimensions `0..n_obi` are imbalance regimes, the following `n_ret` are
//! return regimes. Times are seconds from the session start. The kernel from
//! source `j` to target `i` is `φ_ij(t) = Σ_k a_ijk · exp(−β_k t)`; its mass
//! `Σ_k a_ijk / β_k` is entry `(i, j)` of the norm matrix.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use crate::regimes::RegimeScheme;
use crate::scoring::{bin_directions, Orientation};
use crate::units::{to_secs_f64, Nanos};

pub const DEFAULT_DECAYS: [f64; 3] = [0.1, 1.0, 10.0];
pub const MAX_ITERATIONS: usize = 2000;
pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedEventStream {
    /// `(time in seconds, dimension)`, nondecreasing in time.
    pub events: Vec<(f64, usize)>,
    pub horizon: f64,
    pub dims: usize,
}

impl MarkedEventStream {
    pub fn new(mut events: Vec<(f64, usize)>, horizon: f64, dims: usize) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("bad horizon {horizon}")));
        }
        for &(t, d) in &events {
            if d >= dims {
                return Err(Error::Domain(format!("dimension {d} outside 0..{dims}")));
            }
            if !(0.0..=horizon).contains(&t) {
                return Err(Error::Domain(format!("event time {t} outside [0, {horizon}]")));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(MarkedEventStream { events, horizon, dims })
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.dims];
        for &(_, d) in &self.events {
            c[d] += 1;
        }
        c
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// One event per imbalance sample (dimension = its bin) and one per return
/// (dimension = imbalance bins + return bin). Times are measured from
/// `origin`; the horizon ends at `end`.
pub fn build_marked_stream(
    obi_samples: &[(Nanos, f64)],
    returns: &[(Nanos, f64)],
    scheme: &RegimeScheme,
    origin: Nanos,
    end: Nanos,
) -> Result<MarkedEventStream> {
    let n_obi = scheme.obi_bins();
    let mut events = Vec::with_capacity(obi_samples.len() + returns.len());
    for &(t, v) in obi_samples {
        events.push((to_secs_f64(t - origin), scheme.discretize_obi(v)?));
    }
    for &(t, r) in returns {
        events.push((to_secs_f64(t - origin), n_obi + scheme.discretize_return(r)?));
    }
    MarkedEventStream::new(events, to_secs_f64(end - origin).max(0.0), n_obi + scheme.ret_bins())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub mu: Vec<f64>,
    /// `amplitudes[i][j][k]`: target `i`, source `j`, decay `k`.
    pub amplitudes: Vec<Vec<Vec<f64>>>,
    pub decays: Vec<f64>,
    pub norm_matrix: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    pub spectral_radius: f64,
}

impl KernelEstimate {
    /// Builds an estimate from raw parameters and derives the norm matrix.
    pub fn from_parts(mu: Vec<f64>, amplitudes: Vec<Vec<Vec<f64>>>, decays: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        if decays.is_empty() || decays.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("decays must be positive".into()));
        }
        let shape_ok = amplitudes.len() == d
            && amplitudes
                .iter()
                .all(|row| row.len() == d && row.iter().all(|a| a.len() == decays.len()));
        if !shape_ok {
            return Err(Error::Config("amplitude tensor does not match dimensions".into()));
        }
        if mu.iter().chain(amplitudes.iter().flatten().flatten()).any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("parameters must be nonnegative".into()));
        }
        let mut est = KernelEstimate {
            mu,
            amplitudes,
            decays,
            norm_matrix: Vec::new(),
            converged: false,
            iterations: 0,
            loglik: f64::NAN,
            spectral_radius: 0.0,
        };
        est.refresh_norms();
        Ok(est)
    }

    /// Single-decay univariate model with intensity `μ + Σ α e^{−β(t − t_m)}`.
    pub fn univariate(mu: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::from_parts(vec![mu], vec![vec![vec![alpha]]], vec![beta])
    }

    /// Baseline-only model.
    pub fn poisson(mu: Vec<f64>, decays: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        let k = decays.len();
        Self::from_parts(mu, vec![vec![vec![0.0; k]; d]; d], decays)
    }

    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    fn refresh_norms(&mut self) {
        self.norm_matrix = self
            .amplitudes
            .iter()
            .map(|row| {
                row.iter()
                    .map(|a| a.iter().zip(&self.decays).map(|(a, b)| a / b).sum())
                    .collect()
            })
            .collect();
        let d = self.dims();
        let m = DMatrix::from_fn(d, d, |i, j| self.norm_matrix[i][j]);
        self.spectral_radius = spectral_radius(&m);
    }

    /// Sum of all kernel masses.
    pub fn total_mass(&self) -> f64 {
        self.norm_matrix.iter().flatten().sum()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Flat parameter layout: `a[(i * d + j) * k + m]`.
#[derive(Debug, Clone)]
struct Params {
    mu: Vec<f64>,
    a: Vec<f64>,
}

impl Params {
    fn from_estimate(est: &KernelEstimate) -> Self {
        Params {
            mu: est.mu.clone(),
            a: est.amplitudes.iter().flatten().flatten().copied().collect(),
        }
    }

    fn into_estimate(self, d: usize, decays: &[f64]) -> KernelEstimate {
        let k = decays.len();
        let amplitudes = (0..d)
            .map(|i| (0..d).map(|j| self.a[(i * d + j) * k..(i * d + j + 1) * k].to_vec()).collect())
            .collect();
        KernelEstimate::from_parts(self.mu, amplitudes, decays.to_vec()).expect("nonnegative parameters")
    }
}

struct PassOut {
    loglik: f64,
    /// Σ 1/λ over events of each dimension.
    inv: Vec<f64>,
    /// Σ R_jk(t)/λ_i(t) over events t of dimension i.
    grad: Vec<f64>,
}

/// Per-source compensator weights `Σ_m (1 − e^{−β_k (T − t_m)}) / β_k`.
fn compensator_weights(stream: &MarkedEventStream, decays: &[f64]) -> Vec<f64> {
    let k = decays.len();
    let mut c = vec![0.0; stream.dims * k];
    for &(t, j) in &stream.events {
        for (m, b) in decays.iter().enumerate() {
            c[j * k + m] += (1.0 - (-b * (stream.horizon - t)).exp()) / b;
        }
    }
    c
}

/// One recursive sweep. Events sharing a timestamp do not excite each other.
fn sweep(p: &Params, stream: &MarkedEventStream, decays: &[f64], comp: &[f64], want_grad: bool) -> Result<PassOut> {
    let d = stream.dims;
    let k = decays.len();
    let dk = d * k;
    let mut state = vec![0.0; dk];
    let mut factors = vec![0.0; k];
    let mut out = PassOut {
        loglik: 0.0,
        inv: if want_grad { vec![0.0; d] } else { Vec::new() },
        grad: if want_grad { vec![0.0; d * dk] } else { Vec::new() },
    };
    let ev = &stream.events;
    let mut t_last = 0.0;
    let mut idx = 0;
    while idx < ev.len() {
        let t = ev[idx].0;
        let dt = t - t_last;
        if dt > 0.0 {
            for (f, b) in factors.iter_mut().zip(decays) {
                *f = (-b * dt).exp();
            }
            for (s, f) in state.iter_mut().zip(factors.iter().cycle()) {
                *s *= f;
            }
            t_last = t;
        }
        let mut end = idx;
        while end < ev.len() && ev[end].0 == t {
            let i = ev[end].1;
            let row = &p.a[i * dk..(i + 1) * dk];
            let lambda = p.mu[i] + row.iter().zip(&state).map(|(a, s)| a * s).sum::<f64>();
            if !(lambda > 0.0) {
                return Err(Error::Numerical(format!(
                    "nonpositive intensity {lambda} in dimension {i} at t = {t}"
                )));
            }
            out.loglik += lambda.ln();
            if want_grad {
                out.inv[i] += 1.0 / lambda;
                for (g, s) in out.grad[i * dk..(i + 1) * dk].iter_mut().zip(&state) {
                    *g += s / lambda;
                }
            }
            end += 1;
        }
        for &(_, j) in &ev[idx..end] {
            for s in &mut state[j * k..(j + 1) * k] {
                *s += 1.0;
            }
        }
        idx = end;
    }
    let base: f64 = p.mu.iter().sum::<f64>() * stream.horizon;
    let excited: f64 = (0..d)
        .map(|i| p.a[i * dk..(i + 1) * dk].iter().zip(comp).map(|(a, c)| a * c).sum::<f64>())
        .sum();
    out.loglik -= base + excited;
    Ok(out)
}

fn check_shapes(est: &KernelEstimate, stream: &MarkedEventStream) -> Result<()> {
    if est.dims() != stream.dims {
        return Err(Error::Config(format!(
            "model has {} dimensions, stream has {}",
            est.dims(),
            stream.dims
        )));
    }
    Ok(())
}

/// Exact log-likelihood via the recursive intensity update.
pub fn loglik(est: &KernelEstimate, stream: &MarkedEventStream) -> Result<f64> {
    check_shapes(est, stream)?;
    let comp = compensator_weights(stream, &est.decays);
    Ok(sweep(&Params::from_estimate(est), stream, &est.decays, &comp, false)?.loglik)
}

/// Maximum-likelihood fit of baselines and amplitudes for fixed decays.
///
/// Projected gradient ascent, preconditioned by `θ / (∂ compensator / ∂θ)`.
/// At unit step this is the EM update; larger steps are tried adaptively and
/// kept only if they raise the likelihood. Stops when the relative change of
/// the log-likelihood drops below [`TOLERANCE`] or after [`MAX_ITERATIONS`].
/// Dimensions without events get zero baseline and zero kernels.
pub fn fit(stream: &MarkedEventStream, decays: &[f64]) -> Result<KernelEstimate> {
    fit_with(stream, decays, MAX_ITERATIONS, TOLERANCE)
}

pub fn fit_with(stream: &MarkedEventStream, decays: &[f64], max_iter: usize, tol: f64) -> Result<KernelEstimate> {
    if stream.is_empty() {
        return Err(Error::InsufficientData("cannot fit an empty stream".into()));
    }
    if !(stream.horizon > 0.0) {
        return Err(Error::InsufficientData("zero horizon".into()));
    }
    if decays.is_empty() || decays.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::Config("decays must be positive".into()));
    }
    let d = stream.dims;
    let k = decays.len();
    let dk = d * k;
    let counts = stream.counts();
    let comp = compensator_weights(stream, decays);

    // start from half the empirical rate and a weak uniform kernel
    let active = |i: usize| counts[i] > 0;
    let n_active = (0..d).filter(|&i| active(i)).count() as f64;
    let mut p = Params {
        mu: counts.iter().map(|&c| 0.5 * c as f64 / stream.horizon).collect(),
        a: vec![0.0; d * dk],
    };
    for i in (0..d).filter(|&i| active(i)) {
        for j in (0..d).filter(|&j| active(j)) {
            for (m, b) in decays.iter().enumerate() {
                p.a[i * dk + j * k + m] = 0.3 * b / (n_active * k as f64);
            }
        }
    }

    let mut current = sweep(&p, stream, decays, &comp, true)?;
    let mut omega = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        // EM target, i.e. θ + diag(θ / C) ∇L
        let em_mu: Vec<f64> = p.mu.iter().zip(&current.inv).map(|(m, s)| m * s / stream.horizon).collect();
        let em_a: Vec<f64> = (0..d * dk)
            .map(|idx| {
                let c = comp[idx % dk];
                if c > 0.0 {
                    p.a[idx] * current.grad[idx] / c
                } else {
                    0.0
                }
            })
            .collect();
        let step = |from: &[f64], to: &[f64], w: f64| -> Vec<f64> {
            from.iter()
                .zip(to)
                .map(|(&x, &y)| (x + w * (y - x)).max(0.1 * x.min(y)))
                .collect()
        };
        let mut next = None;
        if omega > 1.0 {
            let trial = Params {
                mu: step(&p.mu, &em_mu, omega),
                a: step(&p.a, &em_a, omega),
            };
            if let Ok(out) = sweep(&trial, stream, decays, &comp, true) {
                if out.loglik > current.loglik {
                    next = Some((trial, out));
                    omega = (omega * 2.0).min(64.0);
                }
            }
        }
        let (np, nout) = match next {
            Some(x) => x,
            None => {
                omega = (omega / 4.0).max(2.0);
                let em = Params { mu: em_mu, a: em_a };
                let out = sweep(&em, stream, decays, &comp, true)?;
                (em, out)
            }
        };
        let change = (nout.loglik - current.loglik).abs() / current.loglik.abs().max(f64::MIN_POSITIVE);
        p = np;
        current = nout;
        if change < tol {
            converged = true;
            break;
        }
    }
    let mut est = p.into_estimate(d, decays);
    est.converged = converged;
    est.iterations = iterations;
    est.loglik = current.loglik;
    if !converged {
        log::warn!("hawkes fit stopped after {iterations} iterations without converging");
    }
    if est.spectral_radius >= 1.0 {
        log::warn!("hawkes fit is not stationary: spectral radius {:.4}", est.spectral_radius);
    }
    Ok(est)
}

/// Ogata thinning. Rejects models whose norm matrix has spectral radius ≥ 1.
pub fn simulate_hawkes(est: &KernelEstimate, horizon: f64, seed: u64) -> Result<MarkedEventStream> {
    if est.spectral_radius >= 1.0 {
        return Err(Error::Domain(format!(
            "explosive model: spectral radius {:.4}",
            est.spectral_radius
        )));
    }
    let d = est.dims();
    let k = est.decays.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = vec![0.0; d * k];
    let mut t = 0.0;
    let mut events = Vec::new();
    let intensities = |state: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| {
                est.mu[i]
                    + (0..d)
                        .flat_map(|j| (0..k).map(move |m| (j, m)))
                        .map(|(j, m)| est.amplitudes[i][j][m] * state[j * k + m])
                        .sum::<f64>()
            })
            .collect()
    };
    let mut bound: f64 = intensities(&state).iter().sum();
    while horizon > 0.0 && bound > 0.0 {
        let wait = Exp::new(bound).map_err(|e| Error::Numerical(e.to_string()))?.sample(&mut rng);
        t += wait;
        if t > horizon {
            break;
        }
        for j in 0..d {
            for m in 0..k {
                state[j * k + m] *= (-est.decays[m] * wait).exp();
            }
        }
        let lam = intensities(&state);
        let total: f64 = lam.iter().sum();
        let u: f64 = rng.random::<f64>() * bound;
        if u <= total {
            let mut pick = u;
            let mut dim = d - 1;
            for (i, l) in lam.iter().enumerate() {
                if pick < *l {
                    dim = i;
                    break;
                }
                pick -= l;
            }
            events.push((t, dim));
            for s in &mut state[dim * k..(dim + 1) * k] {
                *s += 1.0;
            }
            bound = intensities(&state).iter().sum();
        } else {
            bound = total;
        }
    }
    MarkedEventStream::new(events, horizon.max(0.0), d)
}

/// Nonnegative alignment weights over (return regime, imbalance regime).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationMask {
    /// `values[r][o]`.
    pub values: Vec<Vec<f64>>,
    pub sigma: f64,
    pub orientation: Orientation,
}

impl ExcitationMask {
    pub fn new(obi_bins: usize, ret_bins: usize, sigma: f64, orientation: Orientation) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::Config(format!("mask bandwidth {sigma} must be positive")));
        }
        let u = bin_directions(obi_bins);
        let v = bin_directions(ret_bins);
        let s = orientation.sign();
        let values = v
            .iter()
            .map(|&vr| {
                u.iter()
                    .map(|&uo| {
                        if uo * vr * s > 0.0 {
                            (-(uo.abs() - vr.abs()).powi(2) / (2.0 * sigma * sigma)).exp()
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(ExcitationMask {
            values,
            sigma,
            orientation,
        })
    }

    pub fn reference(orientation: Orientation) -> Self {
        Self::new(9, 4, 0.5, orientation).expect("valid reference mask")
    }

    pub fn ones(obi_bins: usize, ret_bins: usize) -> Self {
        ExcitationMask {
            values: vec![vec![1.0; obi_bins]; ret_bins],
            sigma: 0.5,
            orientation: Orientation::default(),
        }
    }

    pub fn obi_bins(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn ret_bins(&self) -> usize {
        self.values.len()
    }
}

/// ℓ1 norm of the imbalance→return block of the norm matrix weighted by the
/// mask. Within-group excitation is not part of the score.
pub fn excitation_score(est: &KernelEstimate, mask: &ExcitationMask) -> Result<f64> {
    let n_obi = mask.obi_bins();
    let n_ret = mask.ret_bins();
    if est.dims() != n_obi + n_ret {
        return Err(Error::Config(format!(
            "mask covers {} dimensions, model has {}",
            n_obi + n_ret,
            est.dims()
        )));
    }
    Ok((0..n_ret)
        .flat_map(|r| (0..n_obi).map(move |o| (r, o)))
        .map(|(r, o)| (est.norm_matrix[n_obi + r][o] * mask.values[r][o]).abs())
        .sum())
}
