use std::fmt::Write as _;

use super::adam::Adam;
use super::config::{LossKind, TrainConfig};
use super::losses::{
    confusion_counts, descriptor_distance, distinctiveness_loss, hardest_negative_term, hinge_loss, infonce_loss,
};
use super::sampling::{sample_correspondences, CorrespondenceField, SampledCorrespondences};
use crate::diffcore::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::CoamNet;

/// One supervised example: two images and the dense ground truth from image
/// 1 into image 2.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub image1: Image,
    pub image2: Image,
    pub field: CorrespondenceField,
}

/// Batch-averaged loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub positive: f64,
    pub negative: f64,
    pub hardest: f64,
    pub distinctiveness: f64,
    pub nce: f64,
}

impl StepLosses {
    /// `step L_p L_n L_r seconds`. InfoNCE runs report `L_nce` in the `L_n`
    /// column. A missing clock prints `-` as the last column.
    pub fn log_line(&self, step: usize, kind: LossKind, seconds: Option<f64>) -> String {
        let mut s = String::new();
        let second = match kind {
            LossKind::Hinge => self.negative,
            LossKind::Infonce => self.nce,
        };
        write!(
            s,
            "{step} {:.6} {:.6} {:.6}",
            self.positive, second, self.distinctiveness
        )
        .unwrap();
        match seconds {
            Some(t) => write!(s, " {t:.3}").unwrap(),
            None => s.push_str(" -"),
        }
        s
    }
}

/// Mixes a run seed with a step and pair index into a sampling seed.
pub fn derive_seed(seed: u64, step: u64, pair: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ pair.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Network, parameters and optimizer state for a training run.
pub struct Trainer {
    pub net: CoamNet,
    pub store: ParamStore,
    pub config: TrainConfig,
    adam: Adam,
    seed: u64,
    step: u64,
}

impl Trainer {
    pub fn new(net: CoamNet, store: ParamStore, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(
            &store,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
        Ok(Self {
            net,
            store,
            config,
            adam,
            seed,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One optimizer update on `batch`. Fails without touching the
    /// parameters if any loss term is non-finite.
    pub fn step(&mut self, batch: &[TrainingPair]) -> Result<StepLosses> {
        let losses = train_step(
            &self.net,
            &mut self.store,
            &mut self.adam,
            batch,
            &self.config,
            derive_seed(self.seed, self.step, u64::MAX),
        )?;
        self.step += 1;
        Ok(losses)
    }
}

fn sample_for(pair: &TrainingPair, cfg: &TrainConfig, seed: u64) -> Result<SampledCorrespondences> {
    sample_correspondences(
        &pair.field,
        cfg.positives_per_pair,
        cfg.negatives_per_positive,
        cfg.exclusion_radius,
        seed,
    )
}

fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term })
    }
}

/// Accumulates gradients of the batch-mean loss into `store` and applies one
/// optimizer update. The distinctiveness regressor sees detached descriptors,
/// so its loss never reaches the encoder or decoder.
pub fn train_step(
    net: &CoamNet,
    store: &mut ParamStore,
    adam: &mut Adam,
    batch: &[TrainingPair],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    store.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut total = StepLosses::default();
    let mut pending = Vec::with_capacity(batch.len());
    for (k, pair) in batch.iter().enumerate() {
        let samples = sample_for(pair, cfg, derive_seed(seed, 0, k as u64))?;
        let mut g = Graph::new();
        let i1 = g.constant(pair.image1.to_tensor());
        let i2 = g.constant(pair.image2.to_tensor());
        let nodes = net.forward_pair(&mut g, store, i1, i2, true)?;
        let widths = (pair.image1.width(), pair.image2.width());
        let (d1, d2) = (nodes.first.descriptors, nodes.second.descriptors);

        let (descriptor_loss, neg_dist, losses) = match cfg.loss_kind {
            LossKind::Hinge => {
                let h = hinge_loss(&mut g, d1, d2, &samples, widths, cfg.margin)?;
                let hard = hardest_negative_term(&mut g, &h, cfg.hardest_count)?;
                let sum = g.add(h.positive, h.negative)?;
                let sum = g.add(sum, hard)?;
                let l = StepLosses {
                    positive: finite("L_p", g.value(h.positive).item())?,
                    negative: finite("L_n", g.value(h.negative).item())?,
                    hardest: finite("L_hard", g.value(hard).item())?,
                    ..StepLosses::default()
                };
                (sum, g.value(h.negative_distances).data().to_vec(), l)
            }
            LossKind::Infonce => {
                let nce = infonce_loss(&mut g, d1, d2, &samples, widths, cfg.nce_temperature)?;
                let (r1, r2) = (g.value(d1), g.value(d2));
                let (w1, w2) = widths;
                let row = |t: &Tensor, p: (usize, usize), w: usize| t.row(p.1 * w + p.0).to_vec();
                let n = samples.negatives_per_positive;
                let neg: Vec<f64> = samples
                    .negatives
                    .iter()
                    .enumerate()
                    .map(|(k, &yh)| descriptor_distance(&row(r1, samples.positives[k / n].0, w1), &row(r2, yh, w2)))
                    .collect();
                let pos: f64 = samples
                    .positives
                    .iter()
                    .map(|&(x, y)| descriptor_distance(&row(r1, x, w1), &row(r2, y, w2)))
                    .sum::<f64>()
                    / samples.positives.len() as f64;
                let l = StepLosses {
                    positive: finite("L_p", pos)?,
                    nce: finite("L_nce", g.value(nce).item())?,
                    ..StepLosses::default()
                };
                (nce, neg, l)
            }
        };

        let confusions = confusion_counts(&neg_dist, samples.negatives_per_positive, cfg.margin);
        let anchors: Vec<usize> = samples
            .positives
            .iter()
            .map(|&(x, _)| x.1 * pair.image1.width() + x.0)
            .collect();
        let r_at = g.gather_rows(nodes.first.distinctiveness, &anchors)?;
        let lr = distinctiveness_loss(&mut g, r_at, &confusions, cfg.distinctiveness_exponent)?;
        let lr_value = finite("L_r", g.value(lr).item())?;
        let objective = g.add(descriptor_loss, lr)?;

        total.positive += scale * losses.positive;
        total.negative += scale * losses.negative;
        total.hardest += scale * losses.hardest;
        total.nce += scale * losses.nce;
        total.distinctiveness += scale * lr_value;
        pending.push((g, objective));
    }
    for (g, objective) in pending {
        let grads = g.backward(objective, &Tensor::scalar(scale))?;
        grads.accumulate_into(store);
    }
    adam.update(store);
    Ok(total)
}

/// Dataset indices of the batch used at `step`: each epoch visits every
/// pair once in a seed-determined order.
pub fn batch_indices(dataset_len: usize, batch: usize, step: u64, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|k| {
            let pos = step * batch as u64 + k;
            let (epoch, i) = (pos / dataset_len as u64, (pos % dataset_len as u64) as usize);
            if cached.as_ref().is_none_or(|c| c.0 != epoch) {
                let mut order: Vec<usize> = (0..dataset_len).collect();
                order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, 2)));
                cached = Some((epoch, order));
            }
            cached.as_ref().unwrap().1[i]
        })
        .collect()
}
