//! Mini-batch training with AdamW and validation early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controlpath::ControlPath;
use crate::data::{Cohort, Split};
use crate::error::{Error, Result};
use crate::metrics::{quantile, c_index_ipcw, QUARTILES};
use crate::model::{LossConfig, LossParts, PatientView, TrajSurv};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            patience: 5,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / b1c) / ((v[i] / b2c).sqrt() + self.eps);
                *w -= self.lr * (update + self.weight_decay * *w);
            }
        }
    }
}

/// Shuffled batches with events dealt round-robin first so every batch
/// holds an event whenever there are at least as many events as batches.
pub fn stratified_batches(events: &[usize], censored: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = events.len() + censored.len();
    if n == 0 {
        return Vec::new();
    }
    let n_batches = n.div_ceil(batch_size.max(1));
    let mut ev = events.to_vec();
    let mut ce = censored.to_vec();
    ev.shuffle(rng);
    ce.shuffle(rng);
    let mut batches = vec![Vec::new(); n_batches];
    for (k, &i) in ev.iter().chain(&ce).enumerate() {
        batches[k % n_batches].push(i);
    }
    batches.shuffle(rng);
    batches
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub partial_likelihood: f64,
    pub ranking: f64,
    pub tacl: f64,
    pub total: f64,
    pub val_c_index: Option<f64>,
    pub val_loss: f64,
}

pub struct TrainOutcome {
    pub model: TrajSurv,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub fn views<'a>(cohort: &'a Cohort, paths: &'a [ControlPath], idx: &[usize]) -> Vec<PatientView<'a>> {
    idx.iter()
        .map(|&i| PatientView {
            path: &paths[i],
            label: cohort.records[i].label,
            severity: &cohort.records[i].severity,
        })
        .collect()
}

fn mean_parts(parts: &[LossParts]) -> LossParts {
    let n = parts.len().max(1) as f64;
    let mut m = LossParts::default();
    for p in parts {
        m.partial_likelihood += p.partial_likelihood / n;
        m.ranking += p.ranking / n;
        m.tacl += p.tacl / n;
        m.total += p.total / n;
    }
    m
}

/// Mean batch loss over a fixed partition, without updating.
pub fn mean_loss(model: &TrajSurv, cohort: &Cohort, paths: &[ControlPath], batches: &[Vec<usize>], loss: &LossConfig) -> Result<LossParts> {
    let parts = batches
        .iter()
        .map(|b| model.loss_value(&views(cohort, paths, b), loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_parts(&parts))
}

/// Mean quartile C-index of `model` on `idx`, with censoring weights from
/// the training split. `None` when undefined at every quartile.
pub fn split_c_index(model: &TrajSurv, cohort: &Cohort, paths: &[ControlPath], idx: &[usize]) -> Result<Option<f64>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&ControlPath> = idx.iter().map(|&i| &paths[i]).collect();
    let risks = model.risks(&model.encode(&refs)?)?;
    let train = cohort.labels(&cohort.indices(Split::Train));
    let test = cohort.labels(idx);
    let follow: Vec<f64> = test.iter().map(|l| l.time).collect();
    let mut vals = Vec::new();
    for q in QUARTILES {
        match c_index_ipcw(&risks, &train, &test, quantile(&follow, q)) {
            Ok(c) => vals.push(c),
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    })
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            time: f64::NAN,
            detail: format!("epoch {epoch}, batch {batch}: non-finite value in {op}"),
        },
        Error::Divergence { time, detail } => Error::Divergence {
            time,
            detail: format!("epoch {epoch}, batch {batch}: {detail}"),
        },
        other => other,
    }
}

/// Trains on the cohort's training split, monitoring the validation
/// quartile C-index (validation loss when the C-index is undefined), and
/// returns the best-validation parameters.
pub fn train(
    mut model: TrajSurv,
    cohort: &Cohort,
    paths: &[ControlPath],
    loss: &LossConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let train_idx = cohort.indices(Split::Train);
    let val_idx = cohort.indices(Split::Val);
    if train_idx.is_empty() {
        return Err(Error::usage("training split is empty"));
    }
    let (events, censored): (Vec<usize>, Vec<usize>) = train_idx.iter().partition(|&&i| cohort.records[i].label.event);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut best: Option<(f64, TrajSurv, usize)> = None;
    let mut stale = 0;
    let mut log = Vec::new();
    let val_batches: Vec<Vec<usize>> = val_idx.chunks(cfg.batch_size.max(1)).map(<[usize]>::to_vec).collect();

    for epoch in 1..=cfg.epochs {
        let clock = Instant::now();
        let batches = stratified_batches(&events, &censored, cfg.batch_size, &mut rng);
        let mut parts = Vec::with_capacity(batches.len());
        for (b, idx) in batches.iter().enumerate() {
            let batch = views(cohort, paths, idx);
            let (p, grads) = model.loss_and_grad(&batch, loss).map_err(|e| with_context(e, epoch, b))?;
            if !p.total.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    time: f64::NAN,
                    detail: format!("epoch {epoch}, batch {b}: non-finite loss or gradient"),
                });
            }
            opt.step(model.params_mut(), &grads);
            parts.push(p);
        }
        let m = mean_parts(&parts);
        let val_c = split_c_index(&model, cohort, paths, &val_idx)?;
        let val_loss = if val_batches.is_empty() {
            m.total
        } else {
            mean_loss(&model, cohort, paths, &val_batches, loss)?.total
        };
        let entry = EpochLog {
            epoch,
            partial_likelihood: m.partial_likelihood,
            ranking: m.ranking,
            tacl: m.tacl,
            total: m.total,
            val_c_index: val_c,
            val_loss,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (pl {:.4} pr {:.4} tacl {:.4}) val C {:?} [{:.1}s]",
            m.total,
            m.partial_likelihood,
            m.ranking,
            m.tacl,
            val_c,
            clock.elapsed().as_secs_f64()
        );
        on_epoch(&entry);
        log.push(entry);

        let score = val_c.unwrap_or(-val_loss);
        match &best {
            Some((s, _, _)) if score <= *s => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, model.clone(), epoch));
                stale = 0;
            }
        }
    }
    let (_, model, best_epoch) = best.map_or((0.0, model, 0), |b| b);
    Ok(TrainOutcome { model, log, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, standardize, SyntheticConfig};
    use crate::model::ModelConfig;

    fn cohort(n: usize, seed: u64) -> Cohort {
        let c = generate_synthetic(&SyntheticConfig {
            n_patients: n,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        standardize(split(c, (0.7, 0.1, 0.2), seed).unwrap()).unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            latent_dim: 8,
            hidden: 16,
            head_hidden: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let g = Tensor::vector(vec![0.5, -3.0]).unwrap();
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(vec![&mut p], &[g]);
        // bias-corrected first step is lr * sign(g)
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 1.9).abs() < 1e-6);

        let mut q = Tensor::vector(vec![2.0]).unwrap();
        let mut wd = AdamW::new(0.1, 0.5);
        wd.step(vec![&mut q], &[Tensor::vector(vec![0.0]).unwrap()]);
        assert!((q.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn batches_partition_and_hold_events() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let events: Vec<usize> = (0..5).collect();
        let censored: Vec<usize> = (5..100).collect();
        let b = stratified_batches(&events, &censored, 20, &mut rng);
        assert_eq!(b.len(), 5);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for batch in &b {
            assert!(batch.iter().any(|i| *i < 5));
        }
    }

    #[test]
    fn one_epoch_lowers_training_loss() {
        let c = cohort(20, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = TrajSurv::init(c.n_features(), small(), &mut rng);
        let paths = model.paths(&c).unwrap();
        let train_idx = c.indices(Split::Train);
        let whole = vec![train_idx.clone()];
        let loss = LossConfig::default();
        let before = mean_loss(&model, &c, &paths, &whole, &loss).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            lr: 3e-3,
            ..TrainConfig::default()
        };
        let out = train(model, &c, &paths, &loss, &cfg, |_| {}).unwrap();
        let after = mean_loss(&out.model, &c, &paths, &whole, &loss).unwrap();
        assert!(after.total < before.total, "{} !< {}", after.total, before.total);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let c = cohort(30, 5);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let model = TrajSurv::init(c.n_features(), small(), &mut rng);
            let paths = model.paths(&c).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            };
            train(model, &c, &paths, &LossConfig::default(), &cfg, |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn disabled_tacl_logs_zero() {
        let c = cohort(20, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = TrajSurv::init(c.n_features(), small(), &mut rng);
        let paths = model.paths(&c).unwrap();
        let loss = LossConfig {
            use_tacl: false,
            ..LossConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let out = train(model, &c, &paths, &loss, &cfg, |_| {}).unwrap();
        assert!(out.log.iter().all(|e| e.tacl == 0.0));
    }
}
