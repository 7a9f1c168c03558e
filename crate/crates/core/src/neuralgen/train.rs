//! Adam training loop with per-epoch history and validation metrics.
//!
//! The optimizer step is single-threaded; per-batch forward/backward work
//! may fan out across samples, with gradients reduced in sample order so the
//! result is independent of thread count.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::network::{BatchSample, DropoutMasks, NetworkGrads, VaeNetwork};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geomodel::{from_soft, to_one_hot, FaciesGrid, OneHotImage};
use crate::rng::{derive_seed, rng_from_seed};

/// Hyperparameters of a training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// KL weight (lambda) in the total loss.
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            kl_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be >= 1".to_string()));
        }
        if self.kl_weight < 0.0 {
            return Err(Error::validation("KL weight must be >= 0".to_string()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::validation("learning rate must be positive".to_string()));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Bias-corrected Adam state over the flat parameter list.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    fn new(net: &VaeNetwork) -> Self {
        let sizes: Vec<usize> = net.param_tensors().iter().map(|(_, t)| t.len()).collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut VaeNetwork, grads: &NetworkGrads, cfg: &TrainConfig) {
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        let gts: Vec<&Tensor> = grads.grad_tensors();
        let mut params = net.param_tensors_mut();
        debug_assert_eq!(params.len(), gts.len());
        for (slot, ((_, param), g)) in params.iter_mut().zip(gts).enumerate() {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let p = param.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / b1t;
                let vhat = v[i] / b2t;
                p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Fraction of cells whose decoded argmax facies equals the input facies,
/// averaged over the dataset. The sampling path is bypassed (`z = mu`).
pub fn reconstruction_accuracy(net: &VaeNetwork, dataset: &[FaciesGrid]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::validation("accuracy needs a nonempty dataset".to_string()));
    }
    let k = net.input_shape()[2];
    let per_grid: Vec<f64> = dataset
        .par_iter()
        .map(|grid| -> Result<f64> {
            let x = to_one_hot(grid, k)?;
            let (mu, _) = net.encode(&x)?;
            let decoded = from_soft(&net.decode(mu.data())?)?;
            let hits = decoded
                .codes()
                .iter()
                .zip(grid.codes())
                .filter(|(a, b)| a == b)
                .count();
            Ok(hits as f64 / grid.codes().len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_grid.iter().sum::<f64>() / per_grid.len() as f64)
}

/// Eval-style validation loss: `z = mu`, dropout off.
fn validation_loss(net: &VaeNetwork, images: &[OneHotImage], lambda: f64) -> Result<f64> {
    let losses: Vec<f64> = images
        .par_iter()
        .map(|x| -> Result<f64> {
            let (mu, logvar) = net.encode(x)?;
            let xhat = net.decode(mu.data())?;
            super::network::total_loss(x, &xhat, mu.data(), logvar.data(), lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Train `net` in place with Adam, recording one history row per epoch.
///
/// Deterministic for a fixed config: sample shuffling, eps draws and dropout
/// masks all derive from `cfg.seed` and the epoch counter. Epoch numbering
/// continues from `net.epochs_trained()` so resumed runs append cleanly.
/// A non-finite batch loss aborts with the epoch index.
pub fn train(
    net: &mut VaeNetwork,
    train_set: &[FaciesGrid],
    val_set: &[FaciesGrid],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::validation("training and validation sets must be nonempty".to_string()));
    }
    let k = net.input_shape()[2];
    let train_images: Vec<OneHotImage> = train_set.iter().map(|g| to_one_hot(g, k)).collect::<Result<_>>()?;
    let val_images: Vec<OneHotImage> = val_set.iter().map(|g| to_one_hot(g, k)).collect::<Result<_>>()?;

    let mut adam = Adam::new(net);
    let mut history = Vec::with_capacity(cfg.epochs);
    let n_z = net.n_z();
    let start_epoch = net.epochs_trained();

    for e in 0..cfg.epochs {
        let epoch_no = start_epoch + e as u32 + 1;
        let mut order: Vec<usize> = (0..train_images.len()).collect();
        let mut epoch_rng = rng_from_seed(derive_seed(cfg.seed, epoch_no as u64));
        order.shuffle(&mut epoch_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // fixed per-sample randomness so the reduction order cannot
            // change the result
            let draws: Vec<(usize, Vec<f64>, DropoutMasks)> = chunk
                .iter()
                .map(|&idx| {
                    let eps: Vec<f64> = (0..n_z)
                        .map(|_| StandardNormal.sample(&mut epoch_rng))
                        .collect();
                    let masks = net.sample_masks(&mut epoch_rng);
                    (idx, eps, masks)
                })
                .collect();
            let samples: Vec<BatchSample<'_>> = draws
                .iter()
                .map(|(idx, eps, masks)| BatchSample {
                    image: &train_images[*idx],
                    eps,
                    masks,
                })
                .collect();
            let (loss, grads) = net.backward(&samples, cfg.kl_weight).map_err(|e| {
                Error::numeric(format!("epoch {epoch_no}: {e}"))
            })?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "training diverged at epoch {epoch_no} (non-finite loss)"
                )));
            }
            adam.step(net, &grads, cfg);
            loss_sum += loss;
            batches += 1;
        }

        let val_loss = validation_loss(net, &val_images, cfg.kl_weight)?;
        let val_accuracy = reconstruction_accuracy(net, val_set)?;
        net.epochs_trained = epoch_no;
        history.push(EpochStats {
            epoch: epoch_no,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_accuracy,
        });
    }
    Ok(history)
}

/// Render history rows as the CSV emitted next to checkpoints.
pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for row in history {
        s.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_loss, row.val_accuracy
        ));
    }
    s
}
