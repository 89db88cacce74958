//! Shared fixtures for the criterion benches: deterministic scenario pairs
//! at the sizes the benches sweep.

use usim_core::synthetic::{generate, ScenarioData, ScenarioKind, ScenarioSpec};

/// An affine-twin pair (labels included), the workhorse benchmark input:
/// realizable under the largest family, non-trivial under the smaller ones.
pub fn affine_pair(n: usize, d: usize, classes: usize, seed: u64) -> ScenarioData {
    generate(&ScenarioSpec::new(ScenarioKind::AffineTwin, n, d, classes, seed))
        .expect("valid benchmark scenario")
}

/// A nonlinear-warp pair: stresses the non-realizable alignment path.
pub fn warp_pair(n: usize, d: usize, classes: usize, seed: u64) -> ScenarioData {
    generate(&ScenarioSpec::new(
        ScenarioKind::NonlinearWarp { depth: 2 },
        n,
        d,
        classes,
        seed,
    ))
    .expect("valid benchmark scenario")
}
