use neon_core::benchmarks::brusselator::{brusselator_solve, weighted_variance, BrusselatorSpec, LOWER, UPPER};
use neon_core::seed::rng_for;
use rand::Rng;

// Every in-bounds parameter draw integrates to a finite field at default controls.
#[test]
fn random_parameter_draws_stay_finite() {
    let spec = BrusselatorSpec::default();
    let mut rng = rng_for(2024, &[0]);
    for draw in 0..50 {
        let p: Vec<f64> = LOWER.iter().zip(&UPPER).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect();
        let field = brusselator_solve(p[0], p[1], p[2], p[3], &spec)
            .unwrap_or_else(|e| panic!("draw {draw} at {p:?} failed: {e}"));
        assert!(field.values().iter().all(|v| v.is_finite()), "draw {draw} at {p:?}");
        assert!(weighted_variance(&field, 1.0, 1.0).unwrap().is_finite());
    }
}
