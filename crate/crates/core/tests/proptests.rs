//! Property tests for the invariants of each module.

mod common;

use common::*;
use invsen::cluster::{affinity_from_coefficients, kmeans, spectral_cluster, SpectralConfig};
use invsen::datagen::{load_dataset, save_dataset, Dataset};
use invsen::debias::{bias_posterior, cross_entropy_loss, entropy_confusion_loss, softmax_rows};
use invsen::evalmetrics::{accuracy, ari, discrete_mi, entropy, nmi};
use invsen::numkit::{Activation, Matrix, MlpParams, Mode, Rng};
use invsen::sennet::{coefficients_from_embeddings, soft_threshold, CoefficientMatrix};
use proptest::prelude::*;

fn labeling(max_n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, 2..=max_n)
}

fn label_pair(max_n: usize, k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2..=max_n).prop_flat_map(move |n| (prop::collection::vec(0..k, n), prop::collection::vec(0..k, n)))
}

fn permute<T: Copy>(v: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&p| v[p]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_ignore_sample_order_and_label_names(
        (pred, truth) in label_pair(30, 4),
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let perm = rng.permutation(pred.len());
        let relabel = rng.permutation(4);
        let p2: Vec<usize> = permute(&pred, &perm).iter().map(|&l| relabel[l]).collect();
        let t2 = permute(&truth, &perm);
        prop_assert_eq!(accuracy(&pred, &truth).unwrap(), accuracy(&p2, &t2).unwrap());
        prop_assert!((ari(&pred, &truth).unwrap() - ari(&p2, &t2).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&p2, &t2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn self_agreement_is_perfect(x in labeling(40, 5)) {
        let distinct = { let mut d = x.clone(); d.sort_unstable(); d.dedup(); d.len() };
        prop_assume!(distinct > 1);
        prop_assert_eq!(ari(&x, &x).unwrap(), 1.0);
        prop_assert!((nmi(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(accuracy(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_at_least_largest_contingency_cell((pred, truth) in label_pair(30, 4)) {
        let acc = accuracy(&pred, &truth).unwrap();
        let mut table = [[0usize; 4]; 4];
        pred.iter().zip(&truth).for_each(|(&p, &t)| table[p][t] += 1);
        let cell = table.iter().flatten().copied().max().unwrap();
        prop_assert!(acc * truth.len() as f64 >= cell as f64 - 1e-9);
        prop_assert!((0.0..=1.0).contains(&acc));
        let a = ari(&pred, &truth).unwrap();
        prop_assert!((-1.0..=1.0).contains(&a));
        let n = nmi(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
    }

    #[test]
    fn mutual_information_bounded_by_entropies((a, b) in label_pair(50, 4)) {
        let mi = discrete_mi(&a, &b).unwrap();
        prop_assert!(mi >= 0.0);
        prop_assert!(mi <= entropy(&a).min(entropy(&b)) + 1e-12);
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero(t in -5.0..5.0f64, beta in 0.0..3.0f64) {
        let y = soft_threshold(t, beta);
        prop_assert!(y.abs() <= t.abs());
        prop_assert!(y == 0.0 || y.signum() == t.signum());
        if t.abs() <= beta { prop_assert_eq!(y, 0.0); }
        else { prop_assert!((y.abs() - (t.abs() - beta)).abs() < 1e-12); }
    }

    #[test]
    fn sparsity_grows_with_threshold(seed in any::<u64>(), b1 in 0.0..1.0f64, db in 0.0..1.0f64) {
        let mut rng = Rng::new(seed);
        let u = random_matrix(6, 3, &mut rng);
        let v = random_matrix(6, 3, &mut rng);
        let zeros = |beta: f64| {
            coefficients_from_embeddings(&u, &v, 1.0, beta).unwrap().data().iter().filter(|&&c| c == 0.0).count()
        };
        prop_assert!(zeros(b1 + db) >= zeros(b1));
    }

    #[test]
    fn doubling_alpha_doubles_coefficients(seed in any::<u64>(), alpha in 0.1..3.0f64, beta in 0.0..0.5f64) {
        let mut rng = Rng::new(seed);
        let u = random_matrix(5, 3, &mut rng);
        let v = random_matrix(5, 3, &mut rng);
        let c1 = coefficients_from_embeddings(&u, &v, alpha, beta).unwrap();
        let c2 = coefficients_from_embeddings(&u, &v, 2.0 * alpha, beta).unwrap();
        for (a, b) in c1.data().iter().zip(c2.data()) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn self_coefficients_have_zero_diagonal(seed in 0u64..1000, n in 2usize..10) {
        let mut rng = Rng::new(seed);
        let model = small_model(seed, 4);
        let x = unit_rows(n, 4, &mut rng);
        let c = model.coefficients(&x, Mode::Eval).unwrap();
        for j in 0..n {
            prop_assert_eq!(c.matrix()[(j, j)], 0.0);
        }
        let a = affinity_from_coefficients(&c).unwrap();
        prop_assert_eq!(a.matrix().clone(), a.matrix().transpose());
    }

    #[test]
    fn affinity_is_symmetric_for_any_coefficients(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = Rng::new(seed);
        let c = CoefficientMatrix::new(random_matrix(n, n, &mut rng)).unwrap();
        let a = affinity_from_coefficients(&c).unwrap();
        let m = a.matrix();
        for i in 0..n {
            prop_assert_eq!(m[(i, i)], 0.0);
            for j in 0..n {
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
                prop_assert!(m[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn posteriors_are_distributions(seed in any::<u64>(), scale in 0.0..200.0f64) {
        let mut rng = Rng::new(seed);
        let logits = random_matrix(6, 3, &mut rng).scale(scale);
        let p = softmax_rows(&logits);
        for i in 0..6 {
            let row = p.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
        let conf = entropy_confusion_loss(&p);
        prop_assert!(conf.is_finite());
        prop_assert!(conf <= 0.0 && conf >= -(3f64.ln()) - 1e-12);
    }

    #[test]
    fn confusion_is_negative_entropy(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let p = softmax_rows(&random_matrix(5, 2, &mut rng).scale(3.0));
        let mean_entropy: f64 = (0..5)
            .map(|i| -p.row(i).iter().map(|&q| q * q.ln()).sum::<f64>())
            .sum::<f64>() / 5.0;
        prop_assert!((entropy_confusion_loss(&p) + mean_entropy).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_ignores_class_names(seed in any::<u64>(), labels in prop::collection::vec(0usize..3, 6)) {
        let mut rng = Rng::new(seed);
        let head = MlpParams::feedforward(4, &[5], 3, Activation::Relu, Activation::None, true, &mut rng).unwrap();
        let emb = random_matrix(6, 4, &mut rng);
        let (p, _) = bias_posterior(&head, &emb, Mode::Train).unwrap();
        let perm = rng.permutation(3);
        // Column perm[c] of the permuted head holds class c.
        let mut moved = head.clone();
        let last = moved.layers.last_mut().unwrap();
        let old = head.layers.last().unwrap();
        for (c, &to) in perm.iter().enumerate() {
            for r in 0..old.weights.rows() {
                last.weights[(r, to)] = old.weights[(r, c)];
            }
            last.bias[to] = old.bias[c];
        }
        let (p2, _) = bias_posterior(&moved, &emb, Mode::Train).unwrap();
        let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let a = cross_entropy_loss(&p, &labels).unwrap();
        let b = cross_entropy_loss(&p2, &relabeled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_eval_is_pure(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let net = MlpParams::feedforward(3, &[4], 2, Activation::Tanh, Activation::None, true, &mut rng).unwrap();
        let x = random_matrix(5, 3, &mut rng);
        let (a, _) = net.forward(&x, Mode::Eval).unwrap();
        let (b, _) = net.forward(&x, Mode::Eval).unwrap();
        prop_assert_eq!(a.clone(), b);
        // Eval rows do not depend on the rest of the batch.
        let (single, _) = net.forward(&x.select_rows(&[2]), Mode::Eval).unwrap();
        prop_assert_eq!(single.row(0), a.row(2));
    }

    #[test]
    fn kmeans_labels_are_valid(seed in any::<u64>(), n in 3usize..25, k in 1usize..4) {
        let mut rng = Rng::new(seed);
        let x = random_matrix(n, 2, &mut rng);
        let fit = kmeans(&x, k, 2, 50, seed).unwrap();
        prop_assert_eq!(fit.labels.len(), n);
        prop_assert!(fit.labels.iter().all(|&l| l < k));
        prop_assert!(fit.wcss >= 0.0);
        prop_assert_eq!(fit.labels[0], 0);
    }

    #[test]
    fn spectral_recovers_permuted_blocks(seed in any::<u64>(), k in 2usize..5) {
        let mut rng = Rng::new(seed);
        let sizes: Vec<usize> = (0..k).map(|_| 3 + rng.below(8)).collect();
        let (a, truth) = block_affinity(&sizes, &mut rng);
        let labels = spectral_cluster(&a, &SpectralConfig::new(k)).unwrap();
        prop_assert_eq!(accuracy(labels.labels(), &truth).unwrap(), 1.0);
    }

    #[test]
    fn dataset_files_round_trip_any_finite_floats(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 12),
        with_labels in any::<bool>(),
    ) {
        let x = Matrix::new(4, 3, values).unwrap();
        let (s, b) = if with_labels { (Some(vec![0, 1, 2, 1]), Some(vec![1, 0, 0, 1])) } else { (None, None) };
        let ds = Dataset::new(x, s, b, "p").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.x), bits(&ds.x));
        prop_assert_eq!(back.s, ds.s);
        prop_assert_eq!(back.b, ds.b);
    }
}
