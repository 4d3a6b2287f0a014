//! Training and evaluation loops.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hcmamba_core::loss::{argmax, composite_loss, LossWeights};
use hcmamba_core::metrics::{MetricAccumulator, MetricReport};
use hcmamba_core::model::HcMamba;
use hcmamba_core::optim::{AdamW, CosineSchedule};
use hcmamba_core::{Error as CoreError, Scalar, Tape, Tensor};

use crate::checkpoint::{self, Progress};
use crate::config::RunConfig;
use crate::data::{batch_plan, load_split, sample_tensor, Sample, Split};
use crate::error::{Error, Result};

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "epoch,train_loss,val_mIoU,val_DSC,val_HD95,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricReport,
    pub seconds: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.6},{:.6},{:.4},{:.2}",
            self.epoch, self.train_loss, self.val.miou, self.val.dsc, self.val.hd95, self.seconds
        )
    }
}

/// Loss components of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub miou: f64,
    pub dice: f64,
    pub boundary: f64,
}

/// Loss and parameter gradients of one `[1, H, W, 3]` sample.
pub fn sample_gradients<T: Scalar>(
    model: &HcMamba,
    params: &[Tensor<T>],
    image: Tensor<T>,
    mask: &[u8],
    weights: &LossWeights,
) -> Result<(LossValue, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, params)?;
    let x = tape.constant(image);
    let logits = model.forward(&mut tape, &vars, x)?;
    let parts = composite_loss(&mut tape, logits, mask, weights)?;
    let value = LossValue {
        total: tape.value(parts.total)[0].as_f64(),
        miou: parts.miou,
        dice: parts.dice,
        boundary: parts.boundary,
    };
    tape.backward(parts.total)?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, grads))
}

/// Mean loss and mean gradient over a batch. Samples are processed on up to
/// `threads` workers but always reduced in batch order, so the result does
/// not depend on the thread count.
pub fn batch_gradients<T: Scalar>(
    model: &HcMamba,
    params: &[Tensor<T>],
    samples: &[(Tensor<T>, Vec<u8>)],
    weights: &LossWeights,
    threads: usize,
) -> Result<(LossValue, Vec<Tensor<T>>)> {
    let run = |i: usize| {
        let (img, mask) = &samples[i];
        sample_gradients(model, params, img.clone(), mask, weights)
    };
    let threads = threads.clamp(1, samples.len().max(1));
    let mut results: Vec<Option<Result<(LossValue, Vec<Tensor<T>>)>>> = (0..samples.len()).map(|_| None).collect();
    if threads == 1 {
        for (i, r) in results.iter_mut().enumerate() {
            *r = Some(run(i));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let run = &run;
                    s.spawn(move || {
                        (t..samples.len())
                            .step_by(threads)
                            .map(|i| (i, run(i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("gradient worker panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }

    let inv = 1.0 / samples.len() as f64;
    let mut loss = LossValue::default();
    let mut acc: Option<Vec<Tensor<T>>> = None;
    for r in results {
        let (l, g) = r.expect("every sample processed")?;
        loss.total += l.total * inv;
        loss.miou += l.miou * inv;
        loss.dice += l.dice * inv;
        loss.boundary += l.boundary * inv;
        match &mut acc {
            None => acc = Some(g),
            Some(a) => {
                for (x, y) in a.iter_mut().zip(&g) {
                    for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                        *p += *q;
                    }
                }
            }
        }
    }
    let mut grads = acc.unwrap_or_default();
    let scale = T::of_f64(inv);
    for g in &mut grads {
        for v in g.data_mut() {
            *v *= scale;
        }
    }
    Ok((loss, grads))
}

/// Predicted class mask of one sample.
pub fn predict<T: Scalar>(model: &HcMamba, params: &[Tensor<T>], sample: &Sample) -> Result<Vec<u8>> {
    let mut tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let (img, _) = sample_tensor::<T>(sample, false);
    let x = tape.constant(img);
    let logits = model.forward(&mut tape, &vars, x)?;
    Ok(argmax(tape.value(logits)))
}

pub fn evaluate_samples<T: Scalar>(model: &HcMamba, params: &[Tensor<T>], samples: &[Sample]) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new(model.config().num_classes)?;
    for s in samples {
        let pred = predict(model, params, s)?;
        acc.add(&pred, &s.mask, s.height, s.width)?;
    }
    Ok(acc.report())
}

fn check_inputs(model: &HcMamba, samples: &[Sample], what: &str) -> Result<()> {
    let (h, w) = model.config().input_size;
    if let Some(s) = samples.iter().find(|s| (s.height, s.width) != (h, w)) {
        return Err(Error::Data(format!(
            "{what} image is {}x{}, model input_size is {h}x{w}",
            s.height, s.width
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_val_miou: f64,
    pub out_dir: PathBuf,
}

fn truncate_log(path: &Path, keep_epochs: usize) -> Result<String> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let mut out = format!("{LOG_HEADER}\n");
    for line in text.lines().skip(1) {
        let ep: usize = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(usize::MAX);
        if ep <= keep_epochs {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Full training run. Writes `train_log.csv`, `last/` and `best/` under
/// `cfg.out_dir`. With `resume`, continues from that checkpoint.
pub fn train<T: Scalar>(
    cfg: &RunConfig,
    threads: usize,
    resume: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = HcMamba::new(cfg.model.clone())?;
    let k = cfg.model.num_classes;
    let train_set = load_split(&cfg.data_dir, Split::Train, k)?;
    let val_set = load_split(&cfg.data_dir, Split::Val, k)?;
    check_inputs(&model, &train_set, "training")?;
    check_inputs(&model, &val_set, "validation")?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "{} needs non-empty train and val splits",
            cfg.data_dir.display()
        )));
    }

    let (mut params, mut opt, mut progress) = match resume {
        Some(dir) => {
            let ck = checkpoint::load::<T>(dir, model.layout())?;
            let mut opt = ck
                .optim
                .ok_or_else(|| Error::Checkpoint(format!("{} has no optimizer state", dir.display())))?;
            opt.config = cfg.optimizer();
            (ck.params, opt, ck.manifest.progress)
        }
        None => {
            let p = model.init_params::<T>(cfg.seed);
            let o = AdamW::new(cfg.optimizer(), &p);
            (p, o, Progress::default())
        }
    };

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join(LOG_FILE);
    let mut log_text = if resume.is_some() {
        truncate_log(&log_path, progress.epoch)?
    } else {
        format!("{LOG_HEADER}\n")
    };
    fs::write(&log_path, &log_text).map_err(|e| Error::io(&log_path, e))?;

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let schedule = CosineSchedule {
        lr_max: cfg.lr,
        lr_min: cfg.lr_min,
        total_steps: cfg.epochs * steps_per_epoch,
    };
    let last_epoch = cfg.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    let mut log = Vec::new();

    for epoch in progress.epoch..last_epoch {
        let start = Instant::now();
        let plan = batch_plan(train_set.len(), cfg.batch_size, cfg.seed, epoch, true, cfg.flip)?;
        let mut loss_sum = 0.0;
        for (step_in_epoch, items) in plan.iter().enumerate() {
            let batch: Vec<(Tensor<T>, Vec<u8>)> = items
                .iter()
                .map(|&(i, f)| sample_tensor::<T>(&train_set[i], f))
                .collect();
            let at = format!(
                "epoch {}, step {} (global step {})",
                epoch + 1,
                step_in_epoch + 1,
                progress.step + 1
            );
            let (loss, grads) = match batch_gradients(&model, &params, &batch, &cfg.loss, threads) {
                Err(Error::Core(CoreError::Domain(msg))) => {
                    return Err(Error::Numeric(format!("non-finite value at {at}: {msg}")))
                }
                r => r?,
            };
            if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at {at}: loss = {}",
                    loss.total
                )));
            }
            opt.update(&mut params, &grads, schedule.lr(progress.step))?;
            progress.step += 1;
            loss_sum += loss.total;
        }
        let val = evaluate_samples(&model, &params, &val_set)?;
        progress.epoch = epoch + 1;
        let entry = EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / plan.len() as f64,
            val,
            seconds: start.elapsed().as_secs_f64(),
        };
        writeln!(log_text, "{}", entry.csv_row()).unwrap();
        fs::write(&log_path, &log_text).map_err(|e| Error::io(&log_path, e))?;

        let improved = entry.val.miou > progress.best_val_miou || epoch == 0;
        if improved {
            progress.best_val_miou = entry.val.miou;
        }
        checkpoint::save(
            &cfg.out_dir.join("last"),
            model.layout(),
            &params,
            Some(&opt),
            cfg,
            progress,
        )?;
        if improved {
            checkpoint::save(
                &cfg.out_dir.join("best"),
                model.layout(),
                &params,
                Some(&opt),
                cfg,
                progress,
            )?;
        }
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        log,
        best_val_miou: progress.best_val_miou,
        out_dir: cfg.out_dir.clone(),
    })
}

/// Evaluate a checkpoint on one split of `cfg.data_dir`.
pub fn eval<T: Scalar>(cfg: &RunConfig, ckpt: &Path, split: Split) -> Result<MetricReport> {
    let model = HcMamba::new(cfg.model.clone())?;
    let ck = checkpoint::load::<T>(ckpt, model.layout())?;
    let samples = load_split(&cfg.data_dir, split, cfg.model.num_classes)?;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "split {split} of {} is empty",
            cfg.data_dir.display()
        )));
    }
    check_inputs(&model, &samples, "evaluation")?;
    evaluate_samples(&model, &ck.params, &samples)
}

pub const REPORT_HEADER: &str = "mIoU(%)  DSC(%)  Acc(%)  Spe(%)  Sen(%)  HD95(px)";

pub fn report_row(r: &MetricReport) -> String {
    format!(
        "{:7.2} {:7.2} {:7.2} {:7.2} {:7.2} {:9.3}",
        100.0 * r.miou,
        100.0 * r.dsc,
        100.0 * r.acc,
        100.0 * r.spe,
        100.0 * r.sen,
        r.hd95
    )
}

pub fn report_csv(split: Split, r: &MetricReport) -> String {
    let per: Vec<String> = r.per_class_dsc.iter().map(|v| format!("{v:.6}")).collect();
    format!(
        "split,mIoU,DSC,Acc,Spe,Sen,HD95,per_class_DSC\n{split},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{}\n",
        r.miou,
        r.dsc,
        r.acc,
        r.spe,
        r.sen,
        r.hd95,
        per.join(";")
    )
}
