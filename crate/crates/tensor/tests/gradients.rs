use mcta_tensor::gradcheck::{self, OP_TOLERANCE};
use mcta_tensor::{Mode, Tape, Tensor};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn every_op_passes_finite_differences() {
    for seed in [0, 1] {
        let reports = gradcheck::op_suite(seed, 24).unwrap();
        for r in &reports {
            assert!(r.points >= 20, "{} checked {} points", r.name, r.points);
            println!("{:<24} {:.3e}", r.name, r.max_rel_error);
            assert!(r.passes(OP_TOLERANCE), "{}: rel err {:.3e}", r.name, r.max_rel_error);
        }
    }
}

#[test]
fn softmax_gradient_is_probabilities_minus_onehot() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new([1, 3], vec![1.0, 2.0, 3.0]).unwrap(), true);
    let l = tape.softmax_cross_entropy(x, &[2]).unwrap();
    tape.backward(l).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let want = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z - 1.0];
    for (g, w) in tape.grad(x).unwrap().iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = StdRng::seed_from_u64(9);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::randn([2, 3, 8, 8], &mut rng));
        let w = tape.constant(Tensor::randn([4, 3, 3, 3], &mut rng));
        let b = tape.constant(Tensor::randn([4], &mut rng));
        let y = tape.conv2d(x, w, b, mcta_tensor::Conv2dSpec::new((1, 1), (1, 1))).unwrap();
        let y = tape.elu(y);
        let y = tape.dropout(y, 0.3, Mode::Train, &mut rng).unwrap();
        tape.value(y).data().to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn grad_of_sum_of_product_is_other_factor(
        a in prop::collection::vec(-10.0f64..10.0, 12),
        b in prop::collection::vec(-10.0f64..10.0, 12),
    ) {
        let mut tape = Tape::new();
        let av = tape.leaf(Tensor::new([3, 4], a).unwrap(), true);
        let bv = tape.constant(Tensor::new([3, 4], b.clone()).unwrap());
        let p = tape.hadamard(av, bv).unwrap();
        let s = tape.reduce_sum(p, 1, false).unwrap();
        let l = tape.sum_all(s);
        tape.backward(l).unwrap();
        prop_assert_eq!(tape.grad(av).unwrap(), b.as_slice());
    }

    #[test]
    fn normalize_sum_rows_sum_to_one(v in prop::collection::vec(1e-3f64..1.0, 20)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([4, 5], v).unwrap());
        let y = tape.normalize_sum(x, 1, 1e-8).unwrap();
        for row in tape.value(y).data().chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}
