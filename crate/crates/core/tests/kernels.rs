use proptest::prelude::*;
use pulse_core::selftest::{
    conv_oracle_error, dense_oracle_error, matmul_oracle_error, mhca_oracle_error, naive_conv1d, naive_matmul, to_rows,
    ORACLE_TOL,
};
use pulse_core::tensorcore::*;

#[test]
fn conv_matches_loop_oracle() {
    assert!(conv_oracle_error(150, 11).unwrap() <= ORACLE_TOL);
}

#[test]
fn matmul_matches_loop_oracle() {
    assert!(matmul_oracle_error(150, 12).unwrap() <= ORACLE_TOL);
}

#[test]
fn dense_matches_loop_oracle() {
    assert!(dense_oracle_error(150, 13).unwrap() <= ORACLE_TOL);
}

#[test]
fn mhca_matches_loop_oracle() {
    assert!(mhca_oracle_error(120, 14).unwrap() <= ORACLE_TOL);
}

// Worked by hand: y[t] = 0.25 + 0.5 x[t+2] - x[t] + 2 x[t-2] with zeros outside.
#[test]
fn frozen_dilated_conv_values() {
    let spec = ConvSpec::same(1, 1, 3, 2).unwrap();
    let x = Tensor::from_vec(&[1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let w = Tensor::from_vec(&[1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
    let b = Tensor::from_vec(&[1], vec![0.25]).unwrap();
    let y = conv1d_dilated(&x, &w, &b, &spec).unwrap();
    let oracle = naive_conv1d(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]], &[vec![vec![0.5, -1.0, 2.0]]], &[0.25], 2, 2);
    assert_eq!(oracle[0], vec![0.75, 0.25, 1.75, 0.25, 1.25]);
    for (a, e) in y.data().iter().zip(&oracle[0]) {
        assert!((*a as f64 - e).abs() < 1e-6);
    }
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f32..3.0, rows * cols).prop_map(move |v| Tensor::from_vec(&[rows, cols], v).unwrap())
}

proptest! {
    #[test]
    fn same_padding_keeps_length(
        c_in in 1usize..4, c_out in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]),
        d in 1usize..5, t in 1usize..40, seed in any::<u64>(),
    ) {
        let spec = ConvSpec::same(c_in, c_out, k, d).unwrap();
        let mut s = seed;
        let mut next = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 40) as f32 / (1u64 << 24) as f32) - 0.5 };
        let x = Tensor::from_fn(&[c_in, t], |_| next());
        let w = Tensor::from_fn(&[c_out, c_in, k], |_| next());
        let b = Tensor::from_fn(&[c_out], |_| next());
        let y = conv1d_dilated(&x, &w, &b, &spec).unwrap();
        prop_assert_eq!(y.shape(), &[c_out, t][..]);
    }

    #[test]
    fn matmul_agrees_with_oracle((a, b) in (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(n, k, m)| (matrix(n, k), matrix(k, m)))) {
        let got = matmul(&a, &b).unwrap();
        let want = naive_matmul(&to_rows(&a), &to_rows(&b));
        for (r, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                prop_assert!((got.get2(r, c) as f64 - v).abs() <= ORACLE_TOL);
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(x in (1usize..6, 1usize..12).prop_flat_map(|(r, c)| matrix(r, c)), shift in -500.0f32..500.0) {
        let shifted = x.map(|v| v * 40.0 + shift);
        let y = softmax_rows(&shifted);
        prop_assert!(y.all_finite());
        for r in 0..y.shape()[0] {
            let s: f64 = y.row(r).iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-5);
            prop_assert!(y.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(x in (1usize..5, 2usize..10).prop_flat_map(|(r, c)| matrix(r, c))) {
        let f = x.last_dim();
        let (y, _) = layer_norm(&x, &Tensor::filled(&[f], 1.0), &Tensor::zeros(&[f]), LAYER_NORM_EPS).unwrap();
        for r in 0..y.shape()[0] {
            let row = y.row(r);
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / f as f64;
            prop_assert!(mean.abs() < 1e-4);
        }
    }

    #[test]
    fn pooling_halves_and_averages(x in (1usize..4, 1usize..12).prop_flat_map(|(c, t)| matrix(c, 2 * t))) {
        let y = avg_pool(&x, 2).unwrap();
        prop_assert_eq!(y.shape()[1] * 2, x.shape()[1]);
        let total_x: f64 = x.data().iter().map(|&v| v as f64).sum();
        let total_y: f64 = y.data().iter().map(|&v| v as f64).sum();
        prop_assert!((2.0 * total_y - total_x).abs() < 1e-3);
    }
}
