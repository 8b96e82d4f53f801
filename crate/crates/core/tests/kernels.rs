use mvlstm::Tensor;
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, len)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn axis_n_oracle(w: &[f64], h: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for v in 0..n {
        for i in 0..d {
            for j in 0..d {
                out[v * d + i] += w[v * d * d + i * d + j] * h[v * d + j];
            }
        }
    }
    out
}

fn seq_oracle(a: &[f64], hs: &[f64], n: usize, t1: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for v in 0..n {
        for k in 0..d {
            for t in 0..t1 {
                out[v * d + k] += a[v * t1 + t] * hs[t * n * d + v * d + k];
            }
        }
    }
    out
}

fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize) -> Vec<f64> {
    (0..m).map(|i| (0..k).map(|j| a[i * k + j] * b[j]).sum()).collect()
}

fn axis_n_case() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1..=6usize, 1..=6usize).prop_flat_map(|(n, d)| (Just(n), Just(d), values(n * d * d), values(n * d)))
}

fn seq_case() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1..=6usize, 1..=6usize, 1..=6usize)
        .prop_flat_map(|(n, t1, d)| (Just(n), Just(t1), Just(d), values(n * t1), values(t1 * n * d)))
}

fn matrix_case(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1..=max, 1..=max).prop_flat_map(|(m, k)| (Just(m), Just(k), values(m * k), values(k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tensordot_axis_n_matches_loops((n, d, w, h) in axis_n_case()) {
        let out = tensor(&[n, d, d], w.clone()).tensordot_axis_n(&tensor(&[n, d], h.clone())).unwrap();
        prop_assert_eq!(out.shape(), &[n, d]);
        prop_assert!(close(out.data(), &axis_n_oracle(&w, &h, n, d), 1e-12));
    }

    #[test]
    fn tensordot_seq_matches_loops((n, t1, d, a, hs) in seq_case()) {
        let out = tensor(&[n, t1], a.clone()).tensordot_seq(&tensor(&[t1, n, d], hs.clone())).unwrap();
        prop_assert_eq!(out.shape(), &[n, d]);
        prop_assert!(close(out.data(), &seq_oracle(&a, &hs, n, t1, d), 1e-12));
    }

    #[test]
    fn var_product_matches_loops((n, d, wx, x) in (1..=6usize, 1..=6usize)
        .prop_flat_map(|(n, d)| (Just(n), Just(d), values(n * d), values(n))))
    {
        let out = tensor(&[n, d], wx.clone()).var_product(&Tensor::vector(x.clone())).unwrap();
        let oracle: Vec<f64> = (0..n * d).map(|i| wx[i] * x[i / d]).collect();
        prop_assert!(close(out.data(), &oracle, 1e-12));
    }

    #[test]
    fn matmul_matches_loops((m, k, a, b) in matrix_case(8)) {
        let out = tensor(&[m, k], a.clone()).matmul(&tensor(&[k], b.clone())).unwrap();
        prop_assert!(close(out.data(), &matmul_oracle(&a, &b, m, k), 1e-12));
    }

    #[test]
    fn softmax_rows_match_direct_formula((n, t1, e, shift) in (1..=6usize, 1..=6usize)
        .prop_flat_map(|(n, t)| (Just(n), Just(t), values(n * t), -50.0..50.0f64)))
    {
        let x = tensor(&[n, t1], e.clone());
        let out = x.softmax_rows().unwrap();
        let shifted = x.map(|v| v + shift).softmax_rows().unwrap();
        for r in 0..n {
            let row = &e[r * t1..(r + 1) * t1];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let direct: Vec<f64> = row.iter().map(|v| v.exp() / z).collect();
            let got = &out.data()[r * t1..(r + 1) * t1];
            prop_assert!(close(got, &direct, 1e-12));
            prop_assert!(got.iter().all(|&p| p >= 0.0));
            prop_assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(close(&shifted.data()[r * t1..(r + 1) * t1], got, 1e-12));
        }
    }

    #[test]
    fn vec_matricize_are_inverse((n, d, h) in (1..=6usize, 1..=6usize)
        .prop_flat_map(|(n, d)| (Just(n), Just(d), values(n * d))))
    {
        let m = tensor(&[n, d], h.clone());
        let flat = m.vec().unwrap();
        prop_assert_eq!(flat.data(), &h[..]);
        prop_assert_eq!(flat.matricize(n, d).unwrap(), m);
    }

    #[test]
    fn reshape_preserves_row_major_order((n, d, h) in (1..=6usize, 1..=6usize)
        .prop_flat_map(|(n, d)| (Just(n), Just(d), values(n * d))))
    {
        let m = tensor(&[n, d], h.clone());
        let r = m.reshape(&[d, n]).unwrap();
        prop_assert_eq!(r.data(), &h[..]);
        prop_assert_eq!(r.reshape(&[n, d]).unwrap(), m);
    }

    #[test]
    fn elementwise_ops_match_scalars((a, b) in (1..=20usize).prop_flat_map(|l| (values(l), values(l)))) {
        let (ta, tb) = (Tensor::vector(a.clone()), Tensor::vector(b.clone()));
        let add = ta.add(&tb).unwrap();
        let sub = ta.sub(&tb).unwrap();
        let mul = ta.mul(&tb).unwrap();
        for i in 0..a.len() {
            prop_assert_eq!(add.data()[i], a[i] + b[i]);
            prop_assert_eq!(sub.data()[i], a[i] - b[i]);
            prop_assert_eq!(mul.data()[i], a[i] * b[i]);
            prop_assert!((ta.tanh().data()[i] - a[i].tanh()).abs() <= 1e-15);
            prop_assert!((ta.sigmoid().data()[i] - 1.0 / (1.0 + (-a[i]).exp())).abs() <= 1e-15);
        }
    }
}

#[test]
fn matmul_random_five_by_seven() {
    let a: Vec<f64> = (0..35).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
    let b: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
    let out = tensor(&[5, 7], a.clone()).matmul(&tensor(&[7], b.clone())).unwrap();
    assert!(close(out.data(), &matmul_oracle(&a, &b, 5, 7), 1e-12));
}

#[test]
fn var_product_hand_expansion() {
    let out = tensor(&[2, 2], vec![1.0, 2.0, 3.0, 4.0])
        .var_product(&Tensor::vector(vec![10.0, 100.0]))
        .unwrap();
    assert_eq!(out.data(), &[10.0, 20.0, 300.0, 400.0]);
}

#[test]
fn softmax_of_one_two_three() {
    let out = tensor(&[1, 3], vec![1.0, 2.0, 3.0]).softmax_rows().unwrap();
    let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
    let want = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
    assert!(close(out.data(), &want, 1e-12));
}

#[test]
fn matricize_zero_and_bad_length() {
    let z = Tensor::zeros(&[4]).matricize(2, 2).unwrap();
    assert_eq!(z, Tensor::zeros(&[2, 2]));
    assert!(Tensor::zeros(&[5]).matricize(2, 2).is_err());
}

#[test]
fn mismatched_contractions_error() {
    let w = Tensor::zeros(&[2, 3, 3]);
    assert!(w.tensordot_axis_n(&Tensor::zeros(&[3, 3])).is_err());
    let a = Tensor::zeros(&[2, 4]);
    assert!(a.tensordot_seq(&Tensor::zeros(&[3, 2, 1])).is_err());
    assert!(Tensor::zeros(&[2, 3]).var_product(&Tensor::zeros(&[3])).is_err());
    assert!(Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[2])).is_err());
}
