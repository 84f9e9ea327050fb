use proptest::prelude::*;

use mvf_core::introspect::{aggregate_traces, discriminability, EmbeddingSeries};
use mvf_core::model::forward_tokens;
use mvf_core::param::randomize;
use mvf_core::{fuse, interpolate, FeatureMap, FusorConfig, FusorMode, FusorState, GateVector, Matrix};

fn config(n: usize, l: usize, heads: usize, seed: u64) -> FusorConfig {
    FusorConfig {
        num_encoders: n,
        num_queries: 3,
        num_layers: l,
        channels: 4,
        height: 2,
        width: 2,
        text_dim: 5,
        heads,
        gate_hidden: 6,
        ffn_hidden: 8,
        out_dim: 3,
        encoder_channels: (0..n).map(|i| 2 + i % 3).collect(),
        mode: FusorMode::Full,
        seed,
    }
}

fn inputs(cfg: &FusorConfig, salt: f64) -> (Vec<Matrix>, Matrix) {
    let views = cfg
        .encoder_channels
        .iter()
        .enumerate()
        .map(|(i, &c)| Matrix::from_fn(cfg.tokens(), c, |r, k| ((r * 7 + k * 3 + i * 11) as f64 * 0.37 + salt).sin()))
        .collect();
    let text = Matrix::from_fn(1, cfg.text_dim, |_, k| ((k + 1) as f64 * salt).cos());
    (views, text)
}

fn maps(n: usize, values: &[f64]) -> Vec<FeatureMap> {
    (0..n)
        .map(|i| FeatureMap::from_fn(2, 2, 3, |c, y, x| values[(i * 12 + c * 6 + y * 3 + x) % values.len()]).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gates_are_distributions(n in 2usize..=6, l in 1usize..=4, seed in 0u64..1000, salt in -3.0f64..3.0) {
        let cfg = config(n, l, 2, seed);
        let mut state = FusorState::new(&cfg).unwrap();
        randomize(&mut state, seed, 1.0);
        let (views, text) = inputs(&cfg, salt);
        let out = forward_tokens(&views, &text, &state, FusorMode::Full).unwrap();
        prop_assert_eq!(out.gate_trace.len(), l);
        for g in &out.gate_trace {
            prop_assert!(g.weights.iter().all(|&w| w >= 0.0));
            prop_assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        prop_assert!((out.query_attention.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_hot_fusion_is_exact(n in 1usize..=5, k in 0usize..5, values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let k = k % n;
        let fs = maps(n, &values);
        prop_assert_eq!(&fuse(&GateVector::one_hot(n, k, 1), &fs).unwrap(), &fs[k]);
    }

    #[test]
    fn permuting_encoders_permutes_gates(seed in 0u64..500, rot in 1usize..4) {
        let n = 4;
        let cfg = config(n, 2, 1, seed);
        let mut state = FusorState::new(&cfg).unwrap();
        randomize(&mut state, seed + 1, 0.8);
        let (views, text) = inputs(&cfg, 0.3);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = state.permute_encoders(&perm).unwrap();
        let pviews: Vec<Matrix> = perm.iter().map(|&p| views[p].clone()).collect();
        let a = forward_tokens(&views, &text, &state, FusorMode::Full).unwrap();
        let b = forward_tokens(&pviews, &text, &permuted, FusorMode::Full).unwrap();
        for (x, y) in a.tokens.as_slice().iter().zip(b.tokens.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for (ga, gb) in a.gate_trace.iter().zip(&b.gate_trace) {
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((gb.weights[i] - ga.weights[p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000) {
        let cfg = config(3, 2, 2, seed);
        let (views, text) = inputs(&cfg, 1.1);
        let a = forward_tokens(&views, &text, &FusorState::new(&cfg).unwrap(), FusorMode::Full).unwrap();
        let b = forward_tokens(&views, &text, &FusorState::new(&cfg).unwrap(), FusorMode::Full).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn interpolation_preserves_constants(v in -10.0f64..10.0, h in 1usize..9, w in 1usize..9, th in 1usize..9, tw in 1usize..9) {
        let x = FeatureMap::constant(2, h, w, v).unwrap();
        let y = interpolate(&x, (2, th, tw)).unwrap();
        prop_assert!(y.values().iter().all(|&u| (u - v).abs() <= 1e-12 * v.abs().max(1.0)));
    }

    #[test]
    fn discriminability_ignores_rotation_and_rescaling(
        vs in prop::collection::vec(prop::collection::vec(0.1f64..5.0, 3), 2..6),
        angle in 0.0f64..6.3,
        scale in 0.01f64..100.0,
    ) {
        let series = EmbeddingSeries::new("x", vs.clone()).unwrap();
        let base = discriminability(&series).unwrap();
        let (s, c) = angle.sin_cos();
        let rotated: Vec<Vec<f64>> = vs.iter().map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]).collect();
        let r = discriminability(&EmbeddingSeries::new("x", rotated).unwrap()).unwrap();
        prop_assert!((r - base).abs() < 1e-12);
        let mut scaled = vs.clone();
        scaled[0].iter_mut().for_each(|x| *x *= scale);
        let sc = discriminability(&EmbeddingSeries::new("x", scaled).unwrap()).unwrap();
        prop_assert!((sc - base).abs() < 1e-12);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn aggregated_gates_permute_with_encoders(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..8)) {
        let traces: Vec<Vec<GateVector>> = raw.iter().map(|w| {
            let s: f64 = w.iter().sum();
            vec![GateVector { weights: w.iter().map(|x| x / s).collect(), layer_index: 1 }]
        }).collect();
        let perm = [2usize, 0, 1];
        let permuted: Vec<Vec<GateVector>> = traces.iter().map(|t| {
            vec![GateVector { weights: perm.iter().map(|&p| t[0].weights[p]).collect(), layer_index: 1 }]
        }).collect();
        let a = aggregate_traces(&traces, "a").unwrap();
        let b = aggregate_traces(&permuted, "b").unwrap();
        prop_assert!((a.layers[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((b.layers[0][i] - a.layers[0][p]).abs() < 1e-12);
        }
    }
}
