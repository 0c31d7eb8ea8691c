//! Fixtures shared by the benchmarks.

use lobsift_core::hawkes::{simulate_hawkes, KernelEstimate, MarkedEventStream};
use lobsift_core::pipeline::{RunConfig, Session};
use lobsift_core::GeneratorConfig;

/// Synthetic session of the given length with the default populations.
pub fn session(seconds: f64, seed: u64) -> Session {
    Session::synthetic(&GeneratorConfig {
        session_length_s: seconds,
        seed,
        ..GeneratorConfig::default()
    })
    .expect("valid generator config")
}

/// Full reference grid on one synthetic session.
pub fn grid_config(seconds: f64) -> RunConfig {
    RunConfig {
        synthetic: Some(GeneratorConfig {
            session_length_s: seconds,
            ..GeneratorConfig::default()
        }),
        artifacts: false,
        ..RunConfig::default()
    }
}

/// Univariate exponential Hawkes sample with branching ratio 0.4.
pub fn hawkes_stream(horizon: f64, seed: u64) -> MarkedEventStream {
    let truth = KernelEstimate::univariate(0.5, 0.8, 2.0).expect("valid kernel");
    simulate_hawkes(&truth, horizon, seed).expect("stable kernel")
}
