use proptest::prelude::*;

use fsg_lab::checkpoint::Checkpoint;
use fsg_lab::hgs::GradientHistoryBuffer;
use fsg_lab::hypernet::ssm::{ssm_conv, ssm_discretize, ssm_scan, SsmSchedule, StepParams};
use fsg_lab::hypernet::FastNet;
use fsg_lab::metrics::MetricsRecord;
use fsg_lab::optim::momentum_expand;
use fsg_lab::quantize::{preprocess, quantize};
use fsg_lab::{Rng, Tensor};

fn tensor(max_len: usize, range: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-range..range, 1..max_len).prop_map(Tensor::from_vec)
}

proptest! {
    #[test]
    fn binarized_weights_are_plus_minus_one(w in tensor(40, 50.0)) {
        let (w_hat, da) = preprocess(&w).unwrap();
        prop_assert!(w_hat.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(da.data().iter().all(|v| *v >= 0.0 && v.is_finite()));
        let q = quantize(&w_hat, 1).unwrap();
        prop_assert!(q.data().iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn k_bit_levels_are_on_the_grid(w in tensor(30, 3.0), bits in 1u32..6) {
        let (w_hat, _) = preprocess(&w).unwrap();
        let levels = ((1u32 << bits) - 1) as f64;
        for v in quantize(&w_hat, bits).unwrap().data() {
            let k = (v + 1.0) / 2.0 * levels;
            prop_assert!((k - k.round()).abs() < 1e-9 && (-1.0..=1.0).contains(v));
        }
    }

    #[test]
    fn sign_of_binarized_weight_follows_the_weight(w in tensor(30, 5.0)) {
        let (w_hat, _) = preprocess(&w).unwrap();
        let q = quantize(&w_hat, 1).unwrap();
        for (x, b) in w.data().iter().zip(q.data()) {
            if *x > 1e-9 { prop_assert_eq!(*b, 1.0); }
            if *x < -1e-9 { prop_assert_eq!(*b, -1.0); }
        }
    }

    #[test]
    fn history_keeps_the_newest(l in 1usize..8, pushes in 1usize..30, xi in 1usize..5) {
        let mut buf = GradientHistoryBuffer::new(0, l, xi).unwrap();
        for t in 0..pushes {
            buf.push(&Tensor::full(&[xi], t as f64)).unwrap();
        }
        prop_assert_eq!(buf.len(), pushes.min(l));
        let w = buf.window().unwrap();
        prop_assert_eq!(w.len(), xi * pushes.min(l));
        prop_assert!(w.data()[w.len() - xi..].iter().all(|&v| v == (pushes - 1) as f64));
        prop_assert_eq!(w.data()[0], (pushes - pushes.min(l)) as f64);
    }

    #[test]
    fn momentum_expand_is_linear(beta in 0.0f64..0.99, alpha in 0.0f64..1.0, seed in 0u64..1000, c in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let g: Vec<Tensor> = (0..6).map(|_| Tensor::randn(&[3], 1.0, &mut rng)).collect();
        let scaled: Vec<Tensor> = g.iter().map(|t| t.scale(c)).collect();
        let a = momentum_expand(beta, alpha, &g).unwrap().scale(c);
        let b = momentum_expand(beta, alpha, &scaled).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn scan_equals_convolution(
        a in prop::collection::vec(-3.0f64..-0.01, 1..5),
        delta in 0.001f64..2.0,
        x in prop::collection::vec(-2.0f64..2.0, 1..64),
    ) {
        let n = a.len();
        let b: Vec<f64> = (0..n).map(|i| 1.0 - 0.3 * i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| 0.5 + 0.2 * i as f64).collect();
        let sched = SsmSchedule::Invariant(StepParams::from_discretized(ssm_discretize(&a, &b, delta).unwrap(), c).unwrap());
        let s = ssm_scan(&sched, &x).unwrap();
        let v = ssm_conv(&sched, &x).unwrap();
        for (p, q) in s.iter().zip(&v) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn zoh_stays_stable(a in -50.0f64..-1e-6, delta in 1e-6f64..10.0) {
        let d = ssm_discretize(&[a], &[1.0], delta).unwrap();
        prop_assert!(d.a_bar[0] > 0.0 && d.a_bar[0] < 1.0);
        prop_assert!(d.b_bar[0] > 0.0 && d.b_bar[0] <= delta * (1.0 + 1e-12));
    }

    #[test]
    fn fast_net_is_affine_in_its_inputs(seed in 0u64..500, s in -2.0f64..2.0) {
        let mut rng = Rng::new(seed);
        let net = FastNet::init(6, &mut rng).unwrap();
        let (g1, g2) = (Tensor::randn(&[5], 1.0, &mut rng), Tensor::randn(&[5], 1.0, &mut rng));
        let w = Tensor::uniform(&[5], 0.0, 1.0, &mut rng);
        let zero = Tensor::zeros(&[5]);
        // Bias-free initial weights: f(g1 + s·g2, 0) = f(g1, 0) + s·f(g2, 0).
        let lhs = net.forward(&g1.add(&g2.scale(s)).unwrap(), &zero).unwrap();
        let rhs = net.forward(&g1, &zero).unwrap().add(&net.forward(&g2, &zero).unwrap().scale(s)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        prop_assert!(net.forward(&g1, &w).unwrap().is_finite());
    }

    #[test]
    fn checkpoint_bytes_round_trip(values in prop::collection::vec(any::<f64>(), 0..20), name in "[a-z.]{1,12}") {
        let mut ck = Checkpoint::new();
        ck.insert(name.clone(), &[values.len()], values.clone()).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let got = &back.require(&name).unwrap().data;
        prop_assert_eq!(got.len(), values.len());
        for (a, b) in got.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn metrics_rows_round_trip(epoch in 0usize..1000, iter in 0u64..100000, loss in 0.0f64..50.0, acc in 0.0f64..=1.0, lr in 1e-8f64..1.0, wall in 0u64..1_000_000) {
        let r = MetricsRecord { epoch, iter, split: "train".into(), loss, accuracy: acc, lr, wall_ms: wall };
        prop_assert_eq!(MetricsRecord::parse_csv_row(&r.to_csv_row(), 2).unwrap(), r);
    }
}
