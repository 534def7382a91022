//! Desk-scale contrastive training of the pair scorer.

pub mod gradcheck;
pub mod loss;
pub mod params;

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use crate::dataset::ContrastiveInstance;
use crate::error::{Error, Result};
use crate::seed;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{
    argmax, ccl_loss, cl_loss, cl_loss_grad, instance_loss, mcqa_loss, mlm_loss, ocl_loss, score_pair, total_loss,
    total_loss_grad, BatchItem, Encoded, LossParts, LossWeights, McqaExample,
};
pub use params::{tokenize, ScorerParams, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ocl_weight: f64,
    pub ccl_weight: f64,
    pub mlm_weight: f64,
    pub mask_rate: f64,
    /// Embedding width d.
    pub dim: usize,
    /// Hidden width h of the head.
    pub hidden: usize,
    /// Embeddings start uniform in `±init_scale`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 8,
            seed: 0,
            ocl_weight: 1.0,
            ccl_weight: 1.0,
            mlm_weight: 1.0,
            mask_rate: 0.15,
            dim: 32,
            hidden: 64,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.dim == 0 || self.hidden == 0 {
            return bad("dim and hidden must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return bad("mask_rate must lie in [0, 1]");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be finite and non-negative");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            ocl: self.ocl_weight,
            ccl: self.ccl_weight,
            mlm: self.mlm_weight,
            mask_rate: self.mask_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    /// Share of instances whose top-scoring candidate was the positive,
    /// measured during the epoch's forward passes.
    pub accuracy: f64,
}

/// Fresh parameters with a vocabulary built from the instance texts.
pub fn init_params(data: &[ContrastiveInstance], cfg: &TrainConfig) -> ScorerParams {
    let texts = data
        .iter()
        .flat_map(|i| std::iter::once(i.query.as_str()).chain(i.candidates.iter().map(String::as_str)));
    let vocab = Vocab::from_texts(texts);
    let mut rng = seed::rng_for(cfg.seed, &["init"]);
    ScorerParams::random(vocab, cfg.dim, cfg.hidden, cfg.init_scale, &mut rng)
}

pub fn train(data: &[ContrastiveInstance], cfg: &TrainConfig) -> Result<(ScorerParams, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    train_from(init_params(data, cfg), data, cfg)
}

fn sgd_epochs<F>(
    params: &mut ScorerParams,
    n: usize,
    cfg: &TrainConfig,
    tag: &str,
    mut step: F,
) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&ScorerParams, usize, &[usize], &mut [f64]) -> Result<(f64, usize)>,
{
    let mut grad = vec![0.0; params.layout.len];
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng_for(cfg.seed, &[tag, &epoch.to_string()]));
        let (mut loss, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let (l, c) = step(params, epoch, chunk, &mut grad)?;
            loss += l * chunk.len() as f64;
            correct += c;
            if cfg.learning_rate != 0.0 {
                for (t, g) in params.theta.iter_mut().zip(&grad) {
                    *t -= cfg.learning_rate * g;
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            loss: loss / n as f64,
            accuracy: correct as f64 / n as f64,
        });
    }
    Ok(metrics)
}

/// Plain mini-batch SGD on the combined objective, starting from `params`.
/// Batches are drawn from a per-epoch seeded shuffle; each item's mask draw
/// is keyed by (epoch, item index), so runs are reproducible.
pub fn train_from(
    mut params: ScorerParams,
    data: &[ContrastiveInstance],
    cfg: &TrainConfig,
) -> Result<(ScorerParams, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let encoded = data
        .iter()
        .map(|i| Encoded::new(&params, i))
        .collect::<Result<Vec<_>>>()?;
    let weights = cfg.weights();
    let metrics = sgd_epochs(&mut params, encoded.len(), cfg, "epoch", |p, epoch, chunk, grad| {
        let batch: Vec<BatchItem> = chunk
            .iter()
            .map(|&i| BatchItem::new(&encoded[i], cfg.seed, &format!("{epoch}/{i}")))
            .collect();
        let parts = total_loss_grad(p, &batch, &weights, Some(grad))?;
        Ok((parts.total, parts.correct))
    })?;
    Ok((params, metrics))
}

/// Index of the candidate the scorer ranks first.
pub fn predict(params: &ScorerParams, inst: &ContrastiveInstance) -> Result<usize> {
    let enc = Encoded::new(params, inst)?;
    let scores: Vec<f64> = enc
        .candidates
        .iter()
        .map(|c| loss::score_ids(params, &[&enc.query, c]))
        .collect();
    Ok(argmax(&scores))
}

/// Share of instances whose top-scoring candidate is the gold one (ties go
/// to the lowest index).
pub fn evaluate(params: &ScorerParams, instances: &[ContrastiveInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut correct = 0;
    for inst in instances {
        correct += usize::from(predict(params, inst)? == inst.gold);
    }
    Ok(correct as f64 / instances.len() as f64)
}

/// How the multiple-choice head starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    /// Keep the pre-trained head.
    Reuse,
    /// Re-initialize the head; embeddings are kept.
    Fresh,
}

/// Fine-tunes on multiple-choice examples with the `f(P [SEP] Q, O_i)`
/// contrastive loss. The vocabulary is frozen; unseen tokens map to `[UNK]`.
pub fn fine_tune_mcqa(
    mut params: ScorerParams,
    examples: &[McqaExample],
    cfg: &TrainConfig,
    head: HeadInit,
) -> Result<(ScorerParams, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyData);
    }
    if head == HeadInit::Fresh {
        params.reinit_head(&mut seed::rng_for(cfg.seed, &["fresh-head"]));
    }
    let metrics = sgd_epochs(&mut params, examples.len(), cfg, "mcqa-epoch", |p, _, chunk, grad| {
        let scale = 1.0 / chunk.len() as f64;
        let (mut loss, mut correct) = (0.0, 0);
        for &i in chunk {
            let (l, pred) = loss::mcqa_loss_grad(p, &examples[i], Some((&mut *grad, scale)))?;
            loss += l * scale;
            correct += usize::from(pred == examples[i].gold);
        }
        Ok((loss, correct))
    })?;
    Ok((params, metrics))
}

pub fn evaluate_mcqa(params: &ScorerParams, examples: &[McqaExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut correct = 0;
    for ex in examples {
        correct += usize::from(loss::mcqa_loss_grad(params, ex, None)?.1 == ex.gold);
    }
    Ok(correct as f64 / examples.len() as f64)
}
