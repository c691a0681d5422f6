use dpkit::classical::*;
use dpkit::data::{Dataset, Normalization, Provenance, Split, SyntheticOptions};
use dpkit::mechanisms::{laplace_perturb, LaplaceParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, Normal};

/// Exhaustive sort by true distance, index as tiebreak, then smallest-label majority.
fn brute_force_knn(rows: &[Vec<f64>], labels: &[usize], query: &[f64], k: usize) -> usize {
    let mut order: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = [0usize; 10];
    for &(_, i) in &order[..k] {
        votes[labels[i]] += 1;
    }
    let best = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == best).unwrap()
}

#[test]
fn knn_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for instance in 0..100 {
        let n = rng.random_range(1..60);
        let dim = rng.random_range(1..8);
        let classes = rng.random_range(1..=10);
        // Every other instance sits on a small integer grid so distance ties occur.
        let grid = instance % 2 == 0;
        let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim)
                .map(|_| if grid { rng.random_range(0..3) as f64 } else { rng.random_range(-2.0..2.0) })
                .collect()
        };
        let rows: Vec<Vec<f64>> = (0..n).map(|_| point(&mut rng)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let train = LabeledVectors::from_rows(&rows, labels.clone()).unwrap();
        for _ in 0..20 {
            let k = rng.random_range(1..=n);
            let q = point(&mut rng);
            assert_eq!(
                knn_classify(&train, &q, k).unwrap(),
                brute_force_knn(&rows, &labels, &q, k),
                "instance {instance}, k {k}"
            );
        }
    }
}

#[test]
fn knn_errors() {
    let train = LabeledVectors::from_rows(&[vec![0.0]], vec![3]).unwrap();
    assert_eq!(knn_classify(&train, &[5.0], 1).unwrap(), 3);
    assert!(knn_classify(&train, &[5.0], 2).is_err());
    assert!(knn_classify(&train, &[5.0, 1.0], 1).is_err());
    assert!(Knn::fit(train, 0).is_err());
}

#[test]
fn naive_bayes_matches_direct_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let dim = rng.random_range(1..6);
        let classes = rng.random_range(2..5);
        let per = rng.random_range(2..10);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for _ in 0..per + c {
                rows.push((0..dim).map(|_| rng.random_range(-3.0..3.0) + c as f64).collect::<Vec<f64>>());
                labels.push(c);
            }
        }
        let train = LabeledVectors::from_rows(&rows, labels.clone()).unwrap();
        let nb = GaussianNb::fit(&train).unwrap();
        let query: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
        let joint = nb.log_joint(&query).unwrap();
        for c in 0..classes {
            let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            let n = members.len() as f64;
            let mut expected = (n / rows.len() as f64).ln();
            for j in 0..dim {
                let m = members.iter().map(|r| r[j]).sum::<f64>() / n;
                let v = (members.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);
                expected += Normal::new(m, v.sqrt()).unwrap().ln_pdf(query[j]);
            }
            assert!(
                (joint[c] - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                "{} vs {expected}",
                joint[c]
            );
        }
        let best = nb.predict(&query).unwrap();
        assert!(joint.iter().all(|&v| v <= joint[best]));
    }
}

#[test]
fn naive_bayes_two_feature_hand_example() {
    let rows = vec![vec![0.0, 0.0], vec![2.0, 2.0], vec![4.0, 0.0], vec![6.0, 4.0]];
    let train = LabeledVectors::from_rows(&rows, vec![0, 0, 1, 1]).unwrap();
    let nb = GaussianNb::fit(&train).unwrap();
    // class 0: mean (1, 1), var (1, 1); class 1: mean (5, 2), var (1, 4)
    let q = [3.0, 1.0];
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let c0 = 0.5f64.ln() - ln2pi - (4.0 + 0.0) / 2.0;
    let c1 = 0.5f64.ln() - ln2pi - 0.5 * 4.0f64.ln() - 4.0 / 2.0 - 1.0 / 8.0;
    let joint = nb.log_joint(&q).unwrap();
    assert!((joint[0] - c0).abs() < 1e-12);
    assert!((joint[1] - c1).abs() < 1e-12);
    assert_eq!(nb.predict(&q).unwrap(), 0);
}

#[test]
fn naive_bayes_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![rng.random_range(-1.0..1.0) + (i % 3) as f64, rng.random_range(-1.0..1.0)]).collect();
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 7.5).collect()).collect();
    let a = GaussianNb::fit(&LabeledVectors::from_rows(&rows, labels.clone()).unwrap()).unwrap();
    let b = GaussianNb::fit(&LabeledVectors::from_rows(&scaled, labels).unwrap()).unwrap();
    for _ in 0..200 {
        let q = [rng.random_range(-2.0..4.0), rng.random_range(-2.0..2.0)];
        let qs = [q[0] * 7.5, q[1] * 7.5];
        assert_eq!(a.predict(&q).unwrap(), b.predict(&qs).unwrap());
    }
}

#[test]
fn svm_xor_separates_only_with_rbf() {
    let xor = LabeledVectors::from_rows(
        &[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
        vec![0, 0, 1, 1],
    )
    .unwrap();
    let opts = SvmOptions::default();
    let rbf = Svm::fit(&xor, KernelSpec::rbf(1.0).unwrap(), &opts).unwrap();
    assert_eq!(evaluate(&rbf, &xor).unwrap().accuracy, 1.0);
    let lin = Svm::fit(&xor, KernelSpec::linear(), &opts).unwrap();
    assert!(evaluate(&lin, &xor).unwrap().accuracy <= 0.75);
}

#[test]
fn svm_multiclass_on_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let centres = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..15 {
            rows.push(vec![centre[0] + rng.random_range(-1.0..1.0), centre[1] + rng.random_range(-1.0..1.0)]);
            labels.push(c);
        }
    }
    let train = LabeledVectors::from_rows(&rows, labels).unwrap();
    for kind in KernelKind::ALL {
        if kind == KernelKind::Sigmoid {
            continue;
        }
        let kernel = KernelSpec::with_defaults(kind, 2).unwrap();
        let svm = Svm::fit(&train, kernel, &SvmOptions::default()).unwrap();
        assert!(svm.converged(), "{kind:?}");
        assert_eq!(evaluate(&svm, &train).unwrap().accuracy, 1.0, "{kind:?}");
    }
}

#[test]
fn evaluation_loss_is_one_minus_accuracy() {
    // 6 of 26 correct is the 23.08% / 0.7692 pair.
    let e = Evaluation::from_counts(6, 26).unwrap();
    assert!((e.accuracy - 0.2308).abs() < 5e-5);
    assert!((e.loss - 0.7692).abs() < 5e-5);
    for correct in 0..=26 {
        let e = Evaluation::from_counts(correct, 26).unwrap();
        assert_eq!(e.loss, 1.0 - e.accuracy);
        assert!((e.accuracy * 26.0 - correct as f64).abs() < 1e-12);
    }
    assert!(Evaluation::from_counts(0, 0).is_err());
}

fn noisy_blobs(epsilon: Option<f64>) -> (LabeledVectors, LabeledVectors) {
    let mut opts = SyntheticOptions::new(4, 25, 6.0, 3);
    opts.test_per_class = 10;
    opts.image_size = 8;
    opts.latent_dim = 4;
    let (train, test) = opts.generate().unwrap();
    let noise = |d: Dataset, seed: u64| -> Dataset {
        match epsilon {
            None => d,
            Some(eps) => {
                let params = LaplaceParams::new(eps, 1.0).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let images = laplace_perturb(d.images(), &params, &mut rng).unwrap();
                d.with_images(images, Provenance::Perturbed).unwrap()
            }
        }
    };
    (
        LabeledVectors::from_dataset(&noise(train, 1)),
        LabeledVectors::from_dataset(&noise(test, 2)),
    )
}

#[test]
fn classifiers_beat_chance_on_perturbed_blobs() {
    let (train, test) = noisy_blobs(Some(5.0));
    assert_eq!(train.split, Some(Split::Train));
    let knn = Knn::fit(train.clone(), DEFAULT_K).unwrap();
    let nb = GaussianNb::fit(&train).unwrap();
    let svm = Svm::fit(&train, KernelSpec::with_defaults(KernelKind::Rbf, train.dim()).unwrap(), &SvmOptions::default()).unwrap();
    let models: [(&str, &dyn Classifier); 3] = [("knn", &knn), ("nbc", &nb), ("svm", &svm)];
    for (name, model) in models {
        let e = evaluate(model, &test).unwrap();
        assert_eq!(e.loss, 1.0 - e.accuracy);
        assert!(e.accuracy > 0.5, "{name}: {}", e.accuracy);
    }
}

#[test]
fn from_dataset_flattens_images() {
    let images = dpkit::autograd::Tensor::from_vec(vec![2, 1, 2, 2], (0..8).map(f64::from).collect()).unwrap();
    let d = Dataset::new(images, vec![1, 0], Split::Test, Provenance::Synthetic, Normalization::identity(1)).unwrap();
    let v = LabeledVectors::from_dataset(&d);
    assert_eq!(v.dim(), 4);
    assert_eq!(v.row(1), &[4.0, 5.0, 6.0, 7.0]);
    assert_eq!(v.labels(), &[1, 0]);
    assert_eq!(v.split, Some(Split::Test));
}
