use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn check(params: &[Tensor], f: impl FnMut(&[Tensor]) -> Result<Tensor>) -> f64 {
    grad_check(params, 1e-5, f).unwrap().max_rel_error
}

#[test]
fn construction_validates_length() {
    assert!(matches!(Tensor::new(&[2, 3], vec![0.0; 5]), Err(TensorError::Length { .. })));
    assert_eq!(Tensor::scalar(4.0).item(), 4.0);
}

#[test]
fn matmul_identity_and_dot() {
    let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let col = t(&[2, 1], &[3.0, 4.0]);
    assert_eq!(id.matmul(&col).unwrap().data(), &[3.0, 4.0]);
    let row = t(&[1, 2], &[1.0, 2.0]);
    assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = random(&[2, 3], 1).matmul(&random(&[2, 3], 2)).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a = random(&[4, 3], 3);
    let b = random(&[3, 2], 4);
    let err = check(&[a, b], |p| Ok(p[0].matmul(&p[1])?.square().sum()));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn batched_and_shared_matmul_gradients() {
    let a = random(&[2, 3, 4], 5);
    let shared = random(&[4, 2], 6);
    let batched = random(&[2, 4, 2], 7);
    let err = check(&[a.clone(), shared], |p| Ok(p[0].matmul(&p[1])?.square().sum()));
    assert!(err < 1e-6, "{err}");
    let err = check(&[a, batched], |p| Ok(p[0].matmul(&p[1])?.square().sum()));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn batched_matmul_matches_per_slice_products() {
    let a = random(&[3, 2, 4], 8);
    let b = random(&[3, 4, 5], 9);
    let c = a.matmul(&b).unwrap();
    for s in 0..3 {
        let lhs = a.narrow(0, s, 1).unwrap().reshape(&[2, 4]).unwrap();
        let rhs = b.narrow(0, s, 1).unwrap().reshape(&[4, 5]).unwrap();
        let want = lhs.matmul(&rhs).unwrap();
        assert_eq!(&c.data()[s * 10..(s + 1) * 10], want.data());
    }
}

#[test]
fn softmax_spot_values() {
    let s = t(&[2], &[0.0, 0.0]).softmax_lastdim();
    assert_eq!(s.data(), &[0.5, 0.5]);
    let s = t(&[3], &[1000.0, 1000.0, 1000.0]).softmax_lastdim();
    for v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = t(&[2], &[0.0, 3f64.ln()]).softmax_lastdim();
    assert!((s.data()[0] - 0.25).abs() < 1e-15);
    assert!((s.data()[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_gradient() {
    let w = random(&[3, 5], 11);
    let err = check(&[random(&[3, 5], 10)], |p| Ok(p[0].softmax_lastdim().mul(&w)?.sum()));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn activation_spot_values() {
    assert_eq!(Tensor::scalar(0.0).tanh().item(), 0.0);
    assert_eq!(Tensor::scalar(0.0).sigmoid().item(), 0.5);
    assert_eq!(Tensor::scalar(-1.0).relu().item(), 0.0);
    assert_eq!(Tensor::scalar(2.5).relu().item(), 2.5);
}

#[test]
fn sigmoid_stays_in_open_unit_interval() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
    let x = Tensor::new(&[1000], (0..1000).map(|_| rng.random_range(-30.0..30.0)).collect()).unwrap();
    for &v in x.sigmoid().data() {
        assert!(v > 0.0 && v < 1.0, "{v}");
    }
    // large magnitudes stay finite
    let y = t(&[2], &[-800.0, 800.0]).sigmoid();
    assert!(y.data().iter().all(|v| v.is_finite()));
}

#[test]
fn activation_gradients() {
    // keep relu inputs away from the kink
    let x = Tensor::new(&[6], vec![-0.9, -0.4, -0.1, 0.2, 0.5, 1.3]).unwrap();
    for (name, op) in [
        ("tanh", Tensor::tanh as fn(&Tensor) -> Tensor),
        ("sigmoid", Tensor::sigmoid),
        ("relu", Tensor::relu),
        ("exp", Tensor::exp),
    ] {
        let err = check(&[x.clone()], |p| Ok(op(&p[0]).square().sum()));
        assert!(err < 1e-6, "{name}: {err}");
    }
    let pos = Tensor::new(&[3], vec![0.3, 1.7, 2.0]).unwrap();
    let err = check(&[pos], |p| Ok(p[0].ln().square().sum()));
    assert!(err < 1e-6, "ln: {err}");
}

#[test]
fn backward_of_sum_of_squares() {
    let tape = Tape::new();
    let w = tape.leaf(&t(&[2], &[1.0, 2.0]));
    let v = tape.leaf(&t(&[2], &[5.0, 6.0]));
    let loss = w.mul(&w).unwrap().sum();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&w), vec![2.0, 4.0]);
    assert_eq!(grads.wrt(&v), vec![0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_losses() {
    let tape = Tape::new();
    let w = tape.leaf(&t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(&w.square()), Err(TensorError::NonScalarLoss { .. })));
    let other = Tape::new();
    assert!(matches!(other.backward(&w.sum()), Err(TensorError::NotOnTape)));
}

#[test]
fn detached_tensor_gets_no_gradient() {
    let tape = Tape::new();
    let w = tape.leaf(&t(&[2], &[1.0, 2.0]));
    let frozen = w.detach();
    let loss = frozen.mul(&w).unwrap().sum();
    let grads = tape.backward(&loss).unwrap();
    // only the tracked factor contributes: d(c*w)/dw = c
    assert_eq!(grads.wrt(&w), vec![1.0, 2.0]);
    assert!(!frozen.is_tracked());
}

#[test]
fn backward_replay_is_bit_identical() {
    let tape = Tape::new();
    let a = tape.leaf(&random(&[3, 4], 13));
    let b = tape.leaf(&random(&[4, 2], 14));
    let loss = a.matmul(&b).unwrap().tanh().softmax_lastdim().square().sum();
    let g1 = tape.backward(&loss).unwrap();
    let g2 = tape.backward(&loss).unwrap();
    for leaf in [&a, &b] {
        let (x, y) = (g1.wrt(leaf), g2.wrt(leaf));
        assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn grad_check_scalar_square() {
    let report = grad_check(&[Tensor::scalar(1.0)], 1e-5, |p| Ok(p[0].square())).unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");
}

#[test]
fn grad_check_reports_non_finite_loss() {
    let err = grad_check(&[Tensor::scalar(1e-6)], 1e-5, |p| Ok(p[0].ln())).unwrap_err();
    assert!(matches!(err, GradCheckError::NonFinite { .. }));
}

#[test]
fn structural_op_gradients() {
    let x = random(&[2, 3, 4], 15);
    let y = random(&[2, 2, 4], 16);
    let w = random(&[2, 5, 4], 17);
    let err = check(&[x.clone(), y], |p| Ok(Tensor::concat(&[&p[0], &p[1]], 1)?.mul(&w)?.sum()));
    assert!(err < 1e-6, "concat: {err}");
    let w2 = random(&[2, 2, 4], 18);
    let err = check(&[x.clone()], |p| Ok(p[0].narrow(1, 1, 2)?.mul(&w2)?.sum()));
    assert!(err < 1e-6, "narrow: {err}");
    let w3 = random(&[2, 4, 3], 19);
    let err = check(&[x.clone()], |p| Ok(p[0].transpose()?.mul(&w3)?.sum()));
    assert!(err < 1e-6, "transpose: {err}");
    let w4 = random(&[2, 4], 20);
    let err = check(&[x.clone()], |p| Ok(p[0].sum_axis(1)?.mul(&w4)?.sum()));
    assert!(err < 1e-6, "sum_axis: {err}");
    let w5 = random(&[4, 3, 4], 21);
    let err = check(&[x.clone()], |p| Ok(p[0].gather_rows(&[1, 0, 1, 1])?.mul(&w5)?.sum()));
    assert!(err < 1e-6, "gather: {err}");
    let b = random(&[4], 22);
    let err = check(&[x, b], |p| Ok(p[0].add_bias(&p[1])?.square().sum()));
    assert!(err < 1e-6, "bias: {err}");
}

#[test]
fn gather_rows_rejects_out_of_range() {
    assert!(random(&[2, 3], 1).gather_rows(&[2]).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-50.0f64..50.0, 12)) {
        let s = Tensor::new(&[3, 4], values).unwrap().softmax_lastdim();
        for row in s.data().chunks(4) {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn concat_then_narrow_is_identity(a in 1usize..4, b in 1usize..4, seed in 0u64..1000) {
        let x = random(&[2, a, 3], seed);
        let y = random(&[2, b, 3], seed + 1);
        let joined = Tensor::concat(&[&x, &y], 1).unwrap();
        prop_assert_eq!(joined.narrow(1, 0, a).unwrap().to_vec(), x.to_vec());
        prop_assert_eq!(joined.narrow(1, a, b).unwrap().to_vec(), y.to_vec());
    }
}
