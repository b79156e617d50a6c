//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p mdn-cli --test acceptance` (add `--release` for speed).

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use mdn_core::gmm::{component_terms, density_grid, sample, GaussianMixture};
use mdn_core::linalg::{covariance_from_factor, exp_diag, log_det_half_precision, packed_len, DenseMatrix};
use mdn_core::loss::evaluate;
use mdn_core::{
    train, ConditionedBatch, CovarianceMode, DatasetSpec, DiagParams, Generator, LossKind, Mdn, MdnConfig,
    MixtureParams, TrainConfig, UpperTriangularRaw,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rv(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_raw(rng: &mut ChaCha8Rng, n: usize, diag: (f64, f64), off: f64) -> UpperTriangularRaw<f64> {
    let mut e = Vec::with_capacity(packed_len(n));
    for r in 0..n {
        for c in r..n {
            e.push(if r == c {
                rng.random_range(diag.0..diag.1)
            } else {
                rng.random_range(-off..off)
            });
        }
    }
    UpperTriangularRaw::new(n, e).unwrap()
}

fn random_mixture(rng: &mut ChaCha8Rng, k: usize, n: usize, diag: (f64, f64), off: f64, spread: f64) -> MixtureParams<f64> {
    let raw = rv(rng, k, 0.1, 1.0);
    let s: f64 = raw.iter().sum();
    MixtureParams::new(
        raw.iter().map(|w| w / s).collect(),
        (0..k).map(|_| rv(rng, n, -spread, spread)).collect(),
        (0..k).map(|_| random_raw(rng, n, diag, off)).collect(),
    )
    .unwrap()
}

/// Determinant by Gaussian elimination with partial pivoting.
fn dense_det(m: &DenseMatrix<f64>) -> f64 {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|r| m.row(r).to_vec()).collect();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        det *= a[k][k];
        for r in k + 1..n {
            let f = a[r][k] / a[k][k];
            for c in k..n {
                a[r][c] -= f * a[k][c];
            }
        }
    }
    det
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
fn dense_inverse(m: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut row = m.row(r).to_vec();
            row.extend((0..n).map(|c| if c == r { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(p, k);
        let d = a[k][k];
        a[k].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != k {
                let f = a[r][k];
                let pivot = a[k].clone();
                a[r].iter_mut().zip(&pivot).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    DenseMatrix::from_rows(&a.iter().map(|r| r[n..].to_vec()).collect::<Vec<_>>()).unwrap()
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let (mut worst_rel, mut worst_abs, mut violations, mut coords) = (0.0f64, 0.0f64, 0usize, 0usize);
    for case in 0..20u64 {
        let k = rng.random_range(1..=3);
        let n = rng.random_range(1..=3);
        let cfg = MdnConfig::new(k, n, 1, CovarianceMode::Full).with_hidden(vec![8]);
        let mut mdn = Mdn::<f64>::new(cfg, case).unwrap();
        let theta: Vec<f64> = mdn.params.flatten().iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
        mdn.params.assign_flat(&theta).unwrap();
        let batch = ConditionedBatch::from_flat(n, 1, rv(&mut rng, 2 * n, -2.0, 2.0), rv(&mut rng, 2, -1.0, 1.0)).unwrap();
        for kind in LossKind::ALL {
            let g = mdn.loss_and_gradient(&batch, &[0, 1], kind).unwrap().grads.flatten();
            let mut probe = mdn.clone();
            for j in 0..theta.len() {
                let mut t = theta.clone();
                t[j] += h;
                probe.params.assign_flat(&t).unwrap();
                let fp = probe.batch_loss(&batch, kind).unwrap().total;
                t[j] = theta[j] - h;
                probe.params.assign_flat(&t).unwrap();
                let fm = probe.batch_loss(&batch, kind).unwrap().total;
                let fd = (fp - fm) / (2.0 * h);
                let err = (g[j] - fd).abs();
                let scale = g[j].abs().max(fd.abs());
                coords += 1;
                worst_abs = worst_abs.max(err);
                if scale > 1e-7 {
                    worst_rel = worst_rel.max(err / scale);
                }
                if err >= 1e-7 && err / scale >= 1e-4 {
                    violations += 1;
                }
            }
        }
    }
    let msg = format!(
        "{coords} coordinates: max relative error {worst_rel:.2e}, max absolute error {worst_abs:.2e}, {violations} violations"
    );
    if violations == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn density_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let k = rng.random_range(1..=3);
        let p = random_mixture(&mut rng, k, 2, (-0.5, 0.8), 0.6, 2.0);
        let grid = density_grid(&p, -12.0, 12.0, 0.02).unwrap();
        worst = worst.max((grid.mass - 1.0).abs());
    }
    let msg = format!("max |mass - 1| = {worst:.2e}");
    if worst < 1e-3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn log_det_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = 1 + case % 6;
        let u = random_raw(&mut rng, n, (-2.0, 2.0), 1.5);
        let ub = exp_diag(&u).to_dense();
        let oracle = 0.5 * dense_det(&ub.transpose().matmul(&ub).unwrap()).ln();
        worst = worst.max((log_det_half_precision(&u) - oracle).abs());
    }
    let msg = format!("max deviation {worst:.2e} over 100 triangles, N=1..6");
    if worst < 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sampling_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let draws = 100_000;
    let mut worst = 0.0f64;
    for case in 0..10 {
        let n = 2 + case % 2;
        let p = random_mixture(&mut rng, 1, n, (-0.7, 0.7), 0.8, 1.0);
        let ub = p.factor(0).to_dense();
        // oracle: dense inverse of the precision matrix
        let sigma = dense_inverse(&ub.transpose().matmul(&ub).unwrap());
        let lib = covariance_from_factor(&p.factor(0)).unwrap();
        if sigma.max_abs_diff(&lib) > 1e-10 {
            return Err(format!("covariance_from_factor disagrees with dense inverse by {:.2e}", sigma.max_abs_diff(&lib)));
        }
        let mut sample_rng = ChaCha8Rng::seed_from_u64(1000 + case as u64);
        let xs: Vec<Vec<f64>> = (0..draws).map(|_| sample(&p, &mut sample_rng, None).unwrap().x).collect();
        let mean: Vec<f64> = (0..n).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / draws as f64).collect();
        let mut diff = 0.0;
        for a in 0..n {
            for b in 0..n {
                let c = xs.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / (draws - 1) as f64;
                diff += (c - sigma.get(a, b)).powi(2);
            }
        }
        worst = worst.max(diff.sqrt() / sigma.frobenius_norm());
    }
    let msg = format!("max relative Frobenius error {:.2}%", 100.0 * worst);
    if worst < 0.05 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn diagonal_full_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut dens, mut loss, mut samp) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..1000u64 {
        let k = rng.random_range(1..=3);
        let n = rng.random_range(1..=4);
        let raw = rv(&mut rng, k, 0.1, 1.0);
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let means: Vec<Vec<f64>> = (0..k).map(|_| rv(&mut rng, n, -2.0, 2.0)).collect();
        let sig: Vec<Vec<f64>> = (0..k).map(|_| rv(&mut rng, n, -1.0, 1.0)).collect();
        let diag = DiagParams::new(w.clone(), means.clone(), sig.clone()).unwrap();
        let full = MixtureParams::new(
            w,
            means,
            sig.iter().map(|d| UpperTriangularRaw::from_diag(d).unwrap()).collect(),
        )
        .unwrap();
        let x = rv(&mut rng, n, -3.0, 3.0);
        for i in 0..k {
            let a = diag.component_log_density(i, &x, true).unwrap();
            let b = full.component_log_density(i, &x, true).unwrap();
            dens = dens.max((a - b).abs());
        }
        for kind in LossKind::ALL {
            let a = evaluate(kind, &x, &diag, true).unwrap();
            let b = evaluate(kind, &x, &full, true).unwrap();
            loss = loss.max((a - b).abs());
        }
        let da = sample(&diag, &mut ChaCha8Rng::seed_from_u64(case), None).unwrap();
        let db = sample(&full, &mut ChaCha8Rng::seed_from_u64(case), None).unwrap();
        if da.component != db.component || da.eta != db.eta {
            return Err(format!("case {case}: shared-rng draws picked different component or latent"));
        }
        for (a, b) in da.x.iter().zip(&db.x) {
            samp = samp.max((a - b).abs());
        }
    }
    let msg = format!("max deviation density {dens:.1e}, loss {loss:.1e}, sample {samp:.1e}");
    if dens < 1e-12 && loss < 1e-12 && samp < 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bound_behavior() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut wj_slack, mut ps_slack, mut k1) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    let (mut filtered, mut paper_below) = (0, 0);
    for _ in 0..10_000 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(1..=3);
        // sharp components so that some per-component terms are positive
        let p = random_mixture(&mut rng, k, n, (-1.0, 2.5), 1.0, 1.0);
        let x = rv(&mut rng, n, -1.5, 1.5);
        let exact = evaluate(LossKind::ExactNll, &x, &p, true).unwrap();
        wj_slack = wj_slack.min(evaluate(LossKind::WeightedJensen, &x, &p, true).unwrap() - exact);
        let paper = evaluate(LossKind::PaperSurrogate, &x, &p, true).unwrap() - exact;
        if component_terms(&x, &p, true).unwrap().iter().all(|&c| c <= 0.0) {
            filtered += 1;
            ps_slack = ps_slack.min(paper);
        } else if paper < 0.0 {
            paper_below += 1;
        }
        let single = random_mixture(&mut rng, 1, n, (-1.0, 2.5), 1.0, 1.0);
        let e = evaluate(LossKind::ExactNll, &x, &single, true).unwrap();
        for kind in [LossKind::PaperSurrogate, LossKind::WeightedJensen] {
            k1 = k1.max((evaluate(kind, &x, &single, true).unwrap() - e).abs());
        }
    }
    let msg = format!(
        "min slack weighted {wj_slack:.2e}, paper {ps_slack:.2e} on {filtered} filtered draws \
         (paper below exact on {paper_below} unfiltered draws), K=1 spread {k1:.1e}"
    );
    if wj_slack >= -1e-12 && ps_slack >= -1e-12 && k1 < 1e-12 && filtered > 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// `−ln N(x | 0, R(y)·diag(1, a)·R(y)ᵀ)`, averaged over the batch.
fn rotating_gaussian_nll(batch: &ConditionedBatch<f64>, aspect: f64) -> f64 {
    let total: f64 = (0..batch.len())
        .map(|i| {
            let (s, c) = batch.y(i)[0].sin_cos();
            let x = batch.x(i);
            // coordinates in the rotated frame: Rᵀx
            let u1 = c * x[0] + s * x[1];
            let u2 = -s * x[0] + c * x[1];
            (2.0 * PI).ln() + 0.5 * aspect.ln() + 0.5 * (u1 * u1 + u2 * u2 / aspect)
        })
        .sum();
    total / batch.len() as f64
}

fn modeling_advantage() -> Outcome {
    let aspect = 0.01;
    let gen = Generator::RotatingGaussian { aspect };
    let tr: ConditionedBatch<f64> = DatasetSpec {
        generator: gen,
        samples: 20_000,
        seed: 2024,
    }
    .generate()
    .unwrap();
    let va: ConditionedBatch<f64> = DatasetSpec {
        generator: gen,
        samples: 5_000,
        seed: 2025,
    }
    .generate()
    .unwrap();
    let oracle = rotating_gaussian_nll(&va, aspect);
    let cfg = TrainConfig {
        epochs: 300,
        seed: 7,
        ..TrainConfig::default()
    };
    let hidden = vec![32, 32];
    let run = |mode| {
        let mdn_cfg = MdnConfig::new(1, 2, 1, mode).with_hidden(hidden.clone());
        train(&cfg, &mdn_cfg, &tr, &va).map(|r| r.final_val_nll().unwrap())
    };
    let full = run(CovarianceMode::Full).map_err(|e| e.to_string())?;
    let diag = run(CovarianceMode::Diagonal).map_err(|e| e.to_string())?;
    let msg = format!(
        "val NLL full {full:.4}, diagonal {diag:.4}, generating model {oracle:.4} (full gap {:.4}, diagonal margin {:.4})",
        full - oracle,
        diag - full
    );
    if (full - oracle).abs() <= 0.15 && diag - full >= 0.5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn invertible_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=3);
        let n = rng.random_range(1..=6);
        let p = random_mixture(&mut rng, k, n, (-1.0, 1.0), 1.0, 3.0);
        let x = rv(&mut rng, n, -5.0, 5.0);
        let i = rng.random_range(0..k);
        let back = p.latent_to_x(&p.x_to_latent(&x, i).unwrap(), i).unwrap();
        for (a, b) in back.iter().zip(&x) {
            worst = worst.max((a - b).abs());
        }
    }
    let msg = format!("max round-trip error {worst:.2e} over 10^4 triples");
    if worst < 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_mdn");
    let exec = |args: &[&str]| -> Result<Vec<u8>, String> {
        let o = Command::new(bin)
            .current_dir(dir.path())
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("`mdn {}` failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)));
        }
        Ok(o.stdout)
    };
    for gen in Generator::NAMES {
        let a = exec(&["generate", "--gen", gen, "--n", "2000", "--seed", "31"])?;
        let b = exec(&["generate", "--gen", gen, "--n", "2000", "--seed", "31"])?;
        if a != b {
            return Err(format!("{gen} output differs between identical runs"));
        }
    }
    exec(&["generate", "--gen", "rotating_gaussian", "--n", "1000", "--seed", "1", "--out", "d.csv"])?;
    exec(&["generate", "--gen", "rotating_gaussian", "--n", "300", "--seed", "2", "--out", "v.csv"])?;
    let train = |report: &str| {
        exec(&[
            "train", "--data", "d.csv", "--val", "v.csv", "--k", "2", "--hidden", "16,16", "--epochs", "5", "--seed", "9",
            "--report", report, "--checkpoint", "m.ckpt",
        ])
    };
    let out_a = train("a.json")?;
    let out_b = train("b.json")?;
    let ra = std::fs::read(dir.path().join("a.json")).map_err(|e| e.to_string())?;
    let rb = std::fs::read(dir.path().join("b.json")).map_err(|e| e.to_string())?;
    if ra != rb || out_a != out_b {
        return Err("report JSON differs between identical training runs".into());
    }
    Ok(format!(
        "3 generators and train report ({} bytes) byte-identical across reruns",
        ra.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("density normalization", density_normalization),
        ("log-det identity", log_det_identity),
        ("sampling law", sampling_law),
        ("diagonal/full consistency", diagonal_full_consistency),
        ("bound behavior", bound_behavior),
        ("end-to-end modeling advantage", modeling_advantage),
        ("invertible-block round trip", invertible_round_trip),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("[PASS] {}. {name}: {msg} ({secs:.2}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {}. {name}: {msg} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
