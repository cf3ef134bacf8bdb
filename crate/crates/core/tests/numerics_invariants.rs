use depa::numerics::{grad_check, Graph, ParamStore, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], vals: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(tensor(&[3, 4], &vals));
        let s = g.softmax(x, 1).unwrap();
        let out = g.value(s);
        for r in 0..3 {
            let row = out.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn layer_norm_ignores_row_shifts(vals in prop::collection::vec(-5.0f64..5.0, 10), shift in -50.0f64..50.0) {
        let run = |v: &[f64]| {
            let mut g: Graph<f64> = Graph::new();
            let x = g.constant(tensor(&[2, 5], v));
            let gamma = g.constant(Tensor::filled(&[5], 1.0));
            let beta = g.constant(Tensor::zeros(&[5]));
            let y = g.layer_norm(x, gamma, beta, 1).unwrap();
            g.value(y).clone()
        };
        let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
        prop_assert!(run(&vals).max_abs_diff(&run(&shifted)) < 1e-5);
    }

    #[test]
    fn linear_compositions_have_exact_gradients(
        w1 in prop::collection::vec(-1.0f64..1.0, 6),
        w2 in prop::collection::vec(-1.0f64..1.0, 6),
        x in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let mut ps = ParamStore::new();
        ps.insert("w1", tensor(&[2, 3], &w1));
        ps.insert("w2", tensor(&[3, 2], &w2));
        let report = grad_check(
            |p: &ParamStore<f64>, g| {
                let xn = g.constant(tensor(&[2, 2], &x));
                let a = g.param(p, "w1")?;
                let b = g.param(p, "w2")?;
                let h = g.matmul(xn, a)?;
                let h = g.scale(h, 0.5)?;
                let o = g.matmul(h, b)?;
                let o = g.add(o, xn)?;
                g.sum(o)
            },
            &ps,
            1e-4,
        )
        .unwrap();
        prop_assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn ops_are_bitwise_deterministic(seed in any::<u64>(), vals in prop::collection::vec(-2.0f32..2.0, 16)) {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::new(&[4, 4], vals.clone()).unwrap());
        let run = || {
            let mut g: Graph<f32> = Graph::training(seed, 3);
            let w = g.param(&ps, "w").unwrap();
            let h = g.matmul(w, w).unwrap();
            let h = g.gelu(h).unwrap();
            let h = g.dropout(h, 0.3).unwrap();
            let s = g.softmax(h, 1).unwrap();
            let l = g.cross_entropy(s, &[0, 1, 2, 3], usize::MAX).unwrap();
            let grads = g.backward(l).unwrap();
            (g.value(l).item().to_bits(), grads.get("w").unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}
