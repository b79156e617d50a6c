use mdn_core::{ConditionedBatch, CovarianceMode, LossKind, Mdn, MdnConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

/// Largest violation of `err < 1e-7 || rel < 1e-4` over all coordinates, as a relative error.
fn worst_fd_error(mdn: &Mdn<f64>, batch: &ConditionedBatch<f64>, kind: LossKind) -> f64 {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let analytic = mdn.loss_and_gradient(batch, &idx, kind).unwrap().grads.flatten();
    let theta = mdn.params.flatten();
    let mut probe = mdn.clone();
    let mut worst = 0.0f64;
    for j in 0..theta.len() {
        let mut t = theta.clone();
        t[j] = theta[j] + H;
        probe.params.assign_flat(&t).unwrap();
        let fp = probe.batch_loss(batch, kind).unwrap().total;
        t[j] = theta[j] - H;
        probe.params.assign_flat(&t).unwrap();
        let fm = probe.batch_loss(batch, kind).unwrap().total;
        let fd = (fp - fm) / (2.0 * H);
        let err = (analytic[j] - fd).abs();
        if err >= 1e-7 {
            worst = worst.max(err / analytic[j].abs().max(fd.abs()));
        }
    }
    worst
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, m: usize, b: usize) -> ConditionedBatch<f64> {
    let x = (0..n * b).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..m * b).map(|_| rng.random_range(-1.0..1.0)).collect();
    ConditionedBatch::from_flat(n, m, x, y).unwrap()
}

fn perturb(mdn: &mut Mdn<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let t: Vec<f64> = mdn
        .params
        .flatten()
        .iter()
        .map(|v| v + rng.random_range(-scale..scale))
        .collect();
    mdn.params.assign_flat(&t).unwrap();
}

#[test]
fn full_mdn_k2_n2_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = MdnConfig::new(2, 2, 1, CovarianceMode::Full).with_hidden(vec![8]);
    let mut mdn = Mdn::<f64>::new(cfg, 4).unwrap();
    perturb(&mut mdn, &mut rng, 0.3);
    let batch = random_batch(&mut rng, 2, 1, 3);
    for kind in LossKind::ALL {
        let worst = worst_fd_error(&mdn, &batch, kind);
        assert!(worst < 1e-4, "{kind}: {worst}");
    }
}

#[test]
fn random_instances_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..20 {
        let k = rng.random_range(1..=3);
        let n = rng.random_range(1..=3);
        let mode = if case % 4 == 3 {
            CovarianceMode::Diagonal
        } else {
            CovarianceMode::Full
        };
        let cfg = MdnConfig::new(k, n, 1, mode).with_hidden(vec![8]);
        let mut mdn = Mdn::<f64>::new(cfg, case).unwrap();
        perturb(&mut mdn, &mut rng, 0.2);
        let batch = random_batch(&mut rng, n, 1, 2);
        for kind in LossKind::ALL {
            let worst = worst_fd_error(&mdn, &batch, kind);
            assert!(worst < 1e-4, "case {case} {kind} K={k} N={n}: {worst}");
        }
    }
}

#[test]
fn relu_network_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut cfg = MdnConfig::new(2, 2, 2, CovarianceMode::Full).with_hidden(vec![6, 5]);
    cfg.activation = mdn_core::Activation::Relu;
    let mut mdn = Mdn::<f64>::new(cfg, 8).unwrap();
    perturb(&mut mdn, &mut rng, 0.2);
    let batch = random_batch(&mut rng, 2, 2, 4);
    assert!(worst_fd_error(&mdn, &batch, LossKind::ExactNll) < 1e-4);
}

#[test]
fn gradient_is_mean_over_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let cfg = MdnConfig::new(2, 2, 1, CovarianceMode::Full).with_hidden(vec![4]);
    let mdn = Mdn::<f64>::new(cfg, 1).unwrap();
    let batch = random_batch(&mut rng, 2, 1, 3);
    let all = mdn.loss_and_gradient(&batch, &[0, 1, 2], LossKind::ExactNll).unwrap();
    let parts: Vec<Vec<f64>> = (0..3)
        .map(|i| mdn.loss_and_gradient(&batch, &[i], LossKind::ExactNll).unwrap().grads.flatten())
        .collect();
    for (j, g) in all.grads.flatten().iter().enumerate() {
        let mean = (parts[0][j] + parts[1][j] + parts[2][j]) / 3.0;
        assert!((g - mean).abs() < 1e-12);
    }
    assert_eq!(all.loss.per_sample.len(), 3);
}
