use proptest::prelude::*;
use sapiens_tensor::Tensor;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, n)
}

proptest! {
    #[test]
    fn reshape_transpose_round_trip(v in values(24)) {
        let t = Tensor::<f32>::new(v.iter().map(|&x| x as f32).collect(), &[2, 3, 4]).unwrap();
        let back = t.reshape(&[6, 4]).unwrap().transpose(0, 1).unwrap()
            .transpose(0, 1).unwrap().reshape(&[2, 3, 4]).unwrap();
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn softmax_is_a_distribution(v in values(20)) {
        let t = Tensor::<f64>::new(v, &[4, 5]).unwrap().softmax().unwrap();
        for row in t.data().chunks(5) {
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes(v in values(32)) {
        // skip rows that are almost constant, where eps dominates the variance
        prop_assume!(v.chunks(8).all(|r| {
            let m = r.iter().sum::<f64>() / 8.0;
            r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0 > 1e-2
        }));
        let t = Tensor::<f64>::new(v, &[4, 8]).unwrap().layer_norm(None, None, 1e-9).unwrap();
        for row in t.data().chunks(8) {
            let mu = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mu.abs() < 1e-5);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn single_and_double_precision_agree(v in values(48), w in values(24)) {
        let a64 = Tensor::<f64>::new(v, &[2, 4, 6]).unwrap();
        let w64 = Tensor::<f64>::new(w, &[6, 4]).unwrap();
        let f = |a: &Tensor<f64>, w: &Tensor<f64>| a.matmul(w).unwrap().gelu().unwrap()
            .layer_norm(None, None, 1e-5).unwrap().softmax().unwrap();
        let f32_run = a64.cast::<f32>().matmul(&w64.cast::<f32>()).unwrap().gelu().unwrap()
            .layer_norm(None, None, 1e-5).unwrap().softmax().unwrap();
        let r64 = f(&a64, &w64);
        for (x, y) in r64.data().iter().zip(f32_run.data()) {
            let rel = (x - *y as f64).abs() / x.abs().max(1e-3);
            prop_assert!(rel < 1e-3, "{} vs {}", x, y);
        }
    }
}
