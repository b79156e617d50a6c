use std::fs::File;
use std::io::{self, BufWriter, Write};

use mdn_core::data::{load_dataset, save_dataset};
use mdn_core::gmm::{density_grid, sample as draw};
use mdn_core::rng::{stream_rng, SAMPLE_STREAM};
use mdn_core::train::train_observed;
use mdn_core::{
    ConditionedBatch, DatasetSpec, GaussianMixture, Generator, Mdn, MdnConfig, MdnError, Result, TrainConfig,
};

use crate::{DensityArgs, EvalArgs, GenerateArgs, SampleArgs, TrainArgs};

fn output(path: Option<&str>) -> Result<Box<dyn Write>> {
    Ok(match path {
        None | Some("-") => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
    })
}

fn usage(msg: impl Into<String>) -> MdnError {
    MdnError::InvalidInput(msg.into())
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let mut generator = Generator::by_name(&a.generator)?;
    let mut unused = Vec::new();
    match &mut generator {
        Generator::RotatingGaussian { aspect } => {
            if let Some(v) = a.aspect {
                *aspect = v;
            }
            unused.extend(a.modes.map(|_| "--modes"));
            unused.extend(a.radius.map(|_| "--radius"));
            unused.extend(a.noise.map(|_| "--noise"));
        }
        Generator::MixtureRing { modes, radius, noise } => {
            a.modes.inspect(|&v| *modes = v);
            a.radius.inspect(|&v| *radius = v);
            a.noise.inspect(|&v| *noise = v);
            unused.extend(a.aspect.map(|_| "--aspect"));
        }
        Generator::TwoMoonsConditional { noise } => {
            a.noise.inspect(|&v| *noise = v);
            unused.extend(a.aspect.map(|_| "--aspect"));
            unused.extend(a.modes.map(|_| "--modes"));
            unused.extend(a.radius.map(|_| "--radius"));
        }
    }
    if !unused.is_empty() {
        return Err(usage(format!("{} not applicable to {generator}", unused.join(", "))));
    }
    let spec = DatasetSpec {
        generator,
        samples: a.samples,
        seed: a.seed,
    };
    let batch: ConditionedBatch<f64> = spec.generate()?;
    save_dataset(&batch, a.out.as_deref().unwrap_or("-"))?;
    eprintln!("B={} N={} M={} seed={}", batch.len(), batch.x_dim(), batch.y_dim(), a.seed);
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let data: ConditionedBatch<f64> = load_dataset(&a.data)?;
    let val = match &a.val {
        Some(p) => load_dataset(p)?,
        None => ConditionedBatch::empty(data.x_dim(), data.y_dim())?,
    };
    let mdn_cfg = MdnConfig {
        k: a.k,
        n: data.x_dim(),
        m: data.y_dim(),
        hidden: a.hidden.clone(),
        activation: a.activation,
        covariance_mode: a.mode,
    };
    mdn_cfg.validate()?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        warmup_fraction: a.warmup_fraction,
        warmup_loss: a.warmup_loss,
        main_loss: a.main_loss,
        beta1: a.beta1,
        beta2: a.beta2,
        epsilon: a.eps,
        clip_norm: a.clip_norm,
        seed: a.seed,
    };
    let every = (a.epochs / 10).max(1);
    let report = train_observed(&cfg, &mdn_cfg, &data, &val, |s| {
        if (s.epoch + 1) % every == 0 || s.epoch == 0 {
            let val = s.val_nll.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            eprintln!(
                "epoch {:>4}/{} {} train={:.6} val_nll={} ({:.2}s)",
                s.epoch + 1,
                a.epochs,
                s.loss_kind,
                s.train_loss,
                val,
                s.seconds
            );
        }
    })?;
    report.model.save(&a.checkpoint)?;
    let mut out = File::create(&a.report)?;
    writeln!(out, "{}", report.to_json())?;
    println!("val_nll={}", report.final_val_nll().unwrap_or(f64::NAN));
    Ok(())
}

fn model_at(checkpoint: &str, y: &[f64]) -> Result<(Mdn<f64>, mdn_core::Mixture<f64>)> {
    let mdn = Mdn::<f64>::load(checkpoint)?;
    if y.len() != mdn.config.m {
        return Err(usage(format!(
            "--y has {} values, model expects M={}",
            y.len(),
            mdn.config.m
        )));
    }
    let mix = mdn.forward(y)?;
    Ok((mdn, mix))
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let (mdn, mix) = model_at(&a.checkpoint, &a.y)?;
    let (n, m) = (mdn.config.n, mdn.config.m);
    if let Some(i) = a.component {
        if i >= mdn.config.k {
            return Err(usage(format!("--component {i} out of range for K={}", mdn.config.k)));
        }
    }
    let mut out = output(a.out.as_deref())?;
    let mut header: Vec<String> = (1..=m).map(|j| format!("y{j}")).collect();
    header.extend((1..=n).map(|j| format!("x{j}")));
    header.push("component".into());
    header.extend((1..=n).map(|j| format!("eta{j}")));
    writeln!(out, "{}", header.join(","))?;
    let y: Vec<String> = a.y.iter().map(|&v| fmt(v)).collect();
    let mut rng = stream_rng(a.seed, SAMPLE_STREAM);
    for _ in 0..a.count {
        let d = draw(&mix, &mut rng, a.component)?;
        let mut row = y.clone();
        row.extend(d.x.iter().map(|&v| fmt(v)));
        row.push(d.component.to_string());
        row.extend(d.eta.as_slice().iter().map(|&v| fmt(v)));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn density(a: &DensityArgs) -> Result<()> {
    let (mdn, mix) = model_at(&a.checkpoint, &a.y)?;
    if mdn.config.n != 2 {
        return Err(usage(format!(
            "density export is only defined for N=2 (this model has N={})",
            mdn.config.n
        )));
    }
    let grid = density_grid(&mix, a.lo, a.hi, a.step)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "x1,x2,log_density")?;
    for (x1, x2, ld) in &grid.points {
        writeln!(out, "{},{},{}", fmt(*x1), fmt(*x2), fmt(*ld))?;
    }
    out.flush()?;
    eprintln!("mass={} components={}", grid.mass, mix.len());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mdn = Mdn::<f64>::load(&a.checkpoint)?;
    let data: ConditionedBatch<f64> = load_dataset(&a.data)?;
    let nll = mdn.mean_nll(&data)?;
    println!("nll={nll}");
    Ok(())
}
