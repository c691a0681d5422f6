use dpkit::autograd::{PerSampleGrads, Tensor};
use dpkit::dp::{clip_per_sample, privatize};
use dpkit::mechanisms::{laplace_from_uniform, laplace_perturb, sample_laplace, LaplaceParams};
use dpkit::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn perturbation_noise_is_independent_across_elements() {
    // 500k samples of a 4-vector; off-diagonal covariance stays below 1% of 2b^2.
    let params = LaplaceParams::new(5.0, 1.0).unwrap();
    let b = params.scale();
    let n = 500_000;
    let x = Tensor::zeros(&[n, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noisy = laplace_perturb(&x, &params, &mut rng).unwrap();
    assert_eq!(noisy.shape(), &[n, 4]);
    let d = noisy.data();
    let var = 2.0 * b * b;
    for i in 0..4 {
        for j in 0..i {
            let cov = (0..n).map(|r| d[r * 4 + i] * d[r * 4 + j]).sum::<f64>() / n as f64;
            assert!(cov.abs() < 0.01 * var, "cov({i},{j}) = {cov}");
        }
    }
    let std = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
    assert!((std / (b * 2f64.sqrt()) - 1.0).abs() < 0.02, "{std}");
}

#[test]
fn inverse_cdf_formula() {
    assert_eq!(laplace_from_uniform(0.0, 3.0), 0.0);
    assert!((laplace_from_uniform(0.25, 1.0) - 2f64.ln()).abs() < 1e-12);
    assert!((laplace_from_uniform(-0.25, 1.0) + 2f64.ln()).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(sample_laplace(-1.0, &mut rng), Err(Error::InvalidScale(_))));
    assert_eq!(sample_laplace(0.0, &mut rng).unwrap(), 0.0);
    assert!(LaplaceParams::new(0.0, 1.0).is_err());
    assert!(LaplaceParams::new(1.0, -1.0).is_err());
}

#[test]
fn same_seed_same_noise() {
    let params = LaplaceParams::new(1.0, 1.0).unwrap();
    let x = Tensor::filled(&[10], 2.0);
    let a = laplace_perturb(&x, &params, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = laplace_perturb(&x, &params, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let c = laplace_perturb(&x, &params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn gaussian_aggregation_noise_scale() {
    // One zero-gradient row: output is pure noise of std sigma * C / expected_batch.
    let (sigma, c, batch) = (1.3, 2.0, 4.0);
    let grads = PerSampleGrads::new(200_000, vec![0.0; 200_000]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let out = privatize(&grads, c, sigma, batch, &mut rng).unwrap();
    let var = out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64;
    let want = (sigma * c / batch).powi(2);
    assert!((var / want - 1.0).abs() < 0.02, "{var} vs {want}");
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    assert!(mean.abs() < 5.0 * (want / out.len() as f64).sqrt());
}

#[test]
fn privatize_is_clipped_mean_without_noise() {
    let g = PerSampleGrads::from_rows(2, &[vec![30.0, 40.0], vec![0.06, 0.08], vec![-1.0, 0.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = privatize(&g, 0.5, 0.0, 3.0, &mut rng).unwrap();
    let clipped = clip_per_sample(&g, 0.5).unwrap();
    let want: Vec<f64> = clipped.sum_rows().iter().map(|v| v / 3.0).collect();
    assert_eq!(out, want);
    assert_eq!(clipped.row(0), &[0.3, 0.4]);
    assert_eq!(clipped.row(1), &[0.06, 0.08]);
    assert_eq!(clipped.row(2), &[-0.5, 0.0]);
}

proptest! {
    #[test]
    fn clipping_bounds_every_row(
        rows in 1usize..20,
        dim in 1usize..40,
        c in 1e-3f64..100.0,
        scale in 1e-3f64..1e3,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let g = PerSampleGrads::new(dim, data).unwrap();
        let clipped = clip_per_sample(&g, c).unwrap();
        for (before, after) in g.rows().zip(clipped.rows()) {
            let nb = before.iter().map(|v| v * v).sum::<f64>().sqrt();
            let na = after.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(na <= c + 1e-9);
            if nb <= c {
                prop_assert_eq!(before, after);
            }
        }
    }
}
