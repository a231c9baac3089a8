//! Dual-route checks of the optimizer recursion against the closed-form
//! weight-coefficient sums, and the asymptotic constants both routes
//! agree on.

use adamlab_core::optimizer::*;
use adamlab_core::rng::CounterRng;

fn params_for(variant: AdamVariant) -> AdamParams {
    AdamParams::new(
        0.9,
        0.95,
        1e-8,
        EtaSchedule::Constant(1e-3),
        EpsilonPolicy::Standard,
    )
    .unwrap()
    .with_variant(variant)
}

#[test]
fn recursion_matches_weight_reconstruction() {
    let rng = CounterRng::new(1);
    for variant in [AdamVariant::Classic, AdamVariant::Renormalized] {
        let params = params_for(variant);
        for trial in 0..100u64 {
            let steps = 50u64;
            let history: Vec<f64> = (0..steps).map(|t| rng.normal(&[trial, t])).collect();
            let mut state = AdamState::new(1);
            for &g in &history {
                state.step(&[g], &params).unwrap();
            }
            let w1 = weight_profile(variant, params.beta1, steps);
            let w2 = weight_profile(variant, params.beta2, steps);
            let m_closed: f64 = w1
                .iter()
                .zip(&history)
                .map(|(w, g)| w * g)
                .sum();
            let v_closed: f64 = w2
                .iter()
                .zip(&history)
                .map(|(w, g)| w * g * g)
                .sum();
            let rel_m = (state.m[0] - m_closed).abs() / m_closed.abs().max(1e-30);
            let rel_v = (state.v[0] - v_closed).abs() / v_closed.abs().max(1e-30);
            assert!(rel_m < 1e-12, "{variant:?} trial {trial}: m rel err {rel_m}");
            assert!(rel_v < 1e-12, "{variant:?} trial {trial}: v rel err {rel_v}");
        }
    }
}

#[test]
fn constant_gradient_asymptote_from_both_routes() {
    // recursion route
    for variant in [AdamVariant::Classic, AdamVariant::Renormalized] {
        let params = params_for(variant).zero_guard();
        let mut state = AdamState::new(1);
        let mut last = 0.0;
        for _ in 0..2000 {
            last = state.step(&[0.25], &params).unwrap().values[0];
        }
        // closed-form route: weight sums at t = 2000
        let s1: f64 = weight_profile(variant, 0.9, 2000).iter().sum();
        let s2: f64 = weight_profile(variant, 0.95, 2000).iter().sum();
        let closed = s1 / s2.sqrt();
        assert!(
            (last - closed).abs() < 1e-9,
            "{variant:?}: recursion {last} vs closed {closed}"
        );
        assert!((last - 1.0).abs() < 1e-9, "{variant:?}: asymptote {last}");
    }
}

#[test]
fn trajectories_are_bit_identical_across_runs() {
    let params = params_for(AdamVariant::Classic);
    let run = || {
        let rng = CounterRng::new(33);
        let mut state = AdamState::new(64);
        let mut out = Vec::new();
        for t in 1..=200u64 {
            let g: Vec<f64> = (0..64u64).map(|i| rng.normal(&[i, t])).collect();
            out.push(state.step(&g, &params).unwrap());
        }
        (state, out)
    };
    let (sa, ua) = run();
    let (sb, ub) = run();
    assert_eq!(sa, sb);
    for (a, b) in ua.iter().zip(ub.iter()) {
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn gamma_partial_tracks_monte_carlo_update_variance() {
    // the variance of u under fresh fair-sign gradients approaches the
    // squared-weight sum over the squared-weight normalizer
    let params = params_for(AdamVariant::Classic);
    let n = 200_000;
    let steps = 300u64;
    let rng = CounterRng::new(9);
    let mut state = AdamState::new(n);
    let mut last = Vec::new();
    for t in 1..=steps {
        let g: Vec<f64> = (0..n as u64).map(|i| rng.sign(&[i, t])).collect();
        last = state.step(&g, &params).unwrap().values;
    }
    let mean = last.iter().sum::<f64>() / n as f64;
    let var = last.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / n as f64;
    let gamma = gamma_partial(AdamVariant::Classic, 0.9, steps);
    // v is exactly the squared-weight sum of ones here, so Var u = Gamma
    let s2: f64 = weight_profile(AdamVariant::Classic, 0.95, steps).iter().sum();
    let predicted = gamma / s2;
    assert!(
        (var - predicted).abs() / predicted < 0.02,
        "measured {var} vs predicted {predicted}"
    );
}
