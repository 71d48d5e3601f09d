use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::total_loss_grad;
use super::model::{ClifModel, TrainSample, BACKBONE_PREFIX};
use super::optim::AdamW;
use crate::config::TrainConfig;
use crate::eval::srocc;
use crate::nn::Parameters;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Batch means over the epoch.
    pub total: f64,
    pub mon: f64,
    pub lin: f64,
    /// SROCC of the model on the training set after the epoch; NaN when
    /// the predictions are constant.
    pub train_srocc: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,total,mon,lin,train_srocc\n");
    for e in log {
        out.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.total, e.mon, e.lin, e.train_srocc));
    }
    out
}

/// Shuffled batches of at most `batch`; a trailing single item joins the
/// previous batch so correlation is always defined when possible.
fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

pub fn predict_all<T: Scalar>(model: &ClifModel<T>, samples: &[TrainSample<T>]) -> Result<Vec<f64>> {
    samples.par_iter().map(|s| model.predict(s)).collect()
}

/// Train in place with AdamW: backbone parameters at `lr_backbone`,
/// everything else at `lr_other`. MOS is min-max normalized over `samples`
/// and the range is stored in the model. Deterministic given `seed`.
pub fn fit<T: Scalar>(
    model: &mut ClifModel<T>,
    samples: &[TrainSample<T>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    if samples.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let lo = samples.iter().map(|s| s.mos).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.mos).fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        log::warn!("all training MOS values equal {lo}; skipping range normalization");
    }
    model.mos_range = (lo, hi);
    model.calibration = (1.0, 0.0);
    let targets: Vec<T> = samples.iter().map(|s| T::of(model.normalize_mos(s.mos))).collect();

    let (alpha, beta) = (T::of(cfg.alpha), T::of(cfg.beta));
    let (lr_b, lr_o) = (cfg.lr_backbone, cfg.lr_other);
    let lr_for = move |name: &str| if name.starts_with(BACKBONE_PREFIX) { lr_b } else { lr_o };
    let mut opt = AdamW::new(model.num_params(), cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let (mut total, mut mon, mut lin) = (0.0, 0.0, 0.0);
        let plan = batches(samples.len(), cfg.batch, &mut rng);
        for (step, batch) in plan.iter().enumerate() {
            let traced = batch
                .par_iter()
                .map(|&i| model.forward_traced(&samples[i]))
                .collect::<Result<Vec<_>>>()?;
            let pred: Vec<T> = traced.iter().map(|(p, _)| *p).collect();
            let gt: Vec<T> = batch.iter().map(|&i| targets[i]).collect();
            let (parts, dpred) = total_loss_grad(&pred, &gt, alpha, beta)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                    detail: format!(
                        "mon={:?} lin={:?} batch={:?}",
                        parts.mon,
                        parts.lin,
                        batch.iter().map(|&i| samples[i].id.as_str()).collect::<Vec<_>>()
                    ),
                });
            }
            let per_sample = batch
                .par_iter()
                .zip(traced.par_iter())
                .zip(dpred.par_iter())
                .map(|((&i, (_, trace)), &g)| {
                    let mut grads = model.zero_grads();
                    model.backward(&samples[i], trace, g, &mut grads)?;
                    Ok(grads)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = model.zero_grads();
            for g in &per_sample {
                grads.accumulate(g);
            }
            opt.step(model, &grads.flatten(), &lr_for);
            total += parts.total.as_f64();
            mon += parts.mon.as_f64();
            lin += parts.lin.as_f64();
        }
        let nb = plan.len() as f64;
        let preds = predict_all(model, samples)?;
        let mos: Vec<f64> = samples.iter().map(|s| s.mos).collect();
        let train_srocc = srocc(&preds, &mos).unwrap_or(f64::NAN);
        let entry = EpochLog { epoch, total: total / nb, mon: mon / nb, lin: lin / nb, train_srocc };
        log::info!(
            "epoch {epoch}: loss {:.5} (mon {:.5}, lin {:.5}) train SROCC {:.4}",
            entry.total,
            entry.mon,
            entry.lin,
            entry.train_srocc
        );
        log.push(entry);
    }
    if cfg.epochs > 0 {
        let raw = samples.par_iter().map(|s| model.forward(s).map(|v| v.as_f64())).collect::<Result<Vec<_>>>()?;
        let target: Vec<f64> = targets.iter().map(|t| t.as_f64()).collect();
        match calibrate(&raw, &target) {
            Some(c) => model.calibration = c,
            None => log::warn!("score calibration skipped (constant or inversely related predictions)"),
        }
    }
    Ok(log)
}

/// Least-squares `target ≈ a·raw + b`; `None` unless `a > 0`, so the map
/// never changes prediction order.
pub fn calibrate(raw: &[f64], target: &[f64]) -> Option<(f64, f64)> {
    let n = raw.len() as f64;
    let mr = raw.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let sxx: f64 = raw.iter().map(|r| (r - mr) * (r - mr)).sum();
    let sxy: f64 = raw.iter().zip(target).map(|(r, t)| (r - mr) * (t - mt)).sum();
    let a = sxy / sxx;
    (sxx > 0.0 && a > 0.0 && a.is_finite()).then(|| (a, mt - a * mr))
}
