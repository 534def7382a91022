//! The pair scorer and every loss, each with its analytic gradient.
//!
//! `f(a, b)` mean-pools the embeddings of `a [SEP] b` and feeds the result
//! through `w2 . tanh(W1 x + b1) + b2`.

use rand::seq::index;

use crate::dataset::ContrastiveInstance;
use crate::error::{Error, Result};
use crate::negatives::Orientation;
use crate::seed::{self, Rng};

use super::params::{ScorerParams, MASK, SEP};

/// A contrastive instance with every text tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub orientation: Orientation,
    pub query: Vec<u32>,
    pub candidates: Vec<Vec<u32>>,
    pub gold: usize,
}

impl Encoded {
    pub fn new(params: &ScorerParams, inst: &ContrastiveInstance) -> Result<Self> {
        inst.check()?;
        Ok(Self {
            orientation: inst.orientation,
            query: params.vocab.encode(&inst.query),
            candidates: inst.candidates.iter().map(|c| params.vocab.encode(c)).collect(),
            gold: inst.gold,
        })
    }
}

/// Multiple-choice example: passage, question, options and the gold index.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct McqaExample {
    pub passage: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold: usize,
}

/// Sum of embeddings over segments joined by `[SEP]`, and the token count.
fn pooled_sum(params: &ScorerParams, segments: &[&[u32]], out: &mut [f64]) -> usize {
    out.fill(0.0);
    let mut n = 0;
    for (k, seg) in segments.iter().enumerate() {
        if k > 0 {
            add(out, params.embedding(SEP));
            n += 1;
        }
        for &t in *seg {
            add(out, params.embedding(t));
        }
        n += seg.len();
    }
    n
}

fn add(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Forward state of one score evaluation.
struct Forward {
    x: Vec<f64>,
    u: Vec<f64>,
    n: usize,
    score: f64,
}

fn head(params: &ScorerParams, x: Vec<f64>, n: usize) -> Forward {
    let l = params.layout;
    let th = &params.theta;
    let mut u = th[l.b1..l.w2].to_vec();
    for (r, ur) in u.iter_mut().enumerate() {
        let w = &th[l.w1 + r * l.dim..l.w1 + (r + 1) * l.dim];
        *ur = (*ur + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()).tanh();
    }
    let score = th[l.b2] + th[l.w2..l.b2].iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    Forward { x, u, n, score }
}

fn forward(params: &ScorerParams, segments: &[&[u32]]) -> Forward {
    let mut x = vec![0.0; params.layout.dim];
    let n = pooled_sum(params, segments, &mut x);
    if n > 0 {
        let inv = 1.0 / n as f64;
        x.iter_mut().for_each(|v| *v *= inv);
    }
    head(params, x, n)
}

/// Accumulates `ds * d score / d theta` into `grad`.
fn backward(params: &ScorerParams, segments: &[&[u32]], fw: &Forward, ds: f64, grad: &mut [f64]) {
    let l = params.layout;
    let th = &params.theta;
    grad[l.b2] += ds;
    let mut dx = vec![0.0; l.dim];
    for r in 0..l.hidden {
        let u = fw.u[r];
        grad[l.w2 + r] += ds * u;
        let dz = ds * th[l.w2 + r] * (1.0 - u * u);
        if dz == 0.0 {
            continue;
        }
        grad[l.b1 + r] += dz;
        let w = l.w1 + r * l.dim;
        for c in 0..l.dim {
            grad[w + c] += dz * fw.x[c];
            dx[c] += dz * th[w + c];
        }
    }
    if fw.n == 0 {
        return;
    }
    let inv = 1.0 / fw.n as f64;
    dx.iter_mut().for_each(|v| *v *= inv);
    let mut push = |t: u32| {
        for (g, d) in grad[l.row(t)].iter_mut().zip(&dx) {
            *g += d;
        }
    };
    for (k, seg) in segments.iter().enumerate() {
        if k > 0 {
            push(SEP);
        }
        seg.iter().for_each(|&t| push(t));
    }
}

/// Score of already-tokenized segments joined by `[SEP]`.
pub fn score_ids(params: &ScorerParams, segments: &[&[u32]]) -> f64 {
    forward(params, segments).score
}

/// `f(a, b)`.
pub fn score_pair(params: &ScorerParams, a: &str, b: &str) -> f64 {
    let (a, b) = (params.vocab.encode(a), params.vocab.encode(b));
    score_ids(params, &[&a, &b])
}

/// Max-subtracted softmax. Returns `(m, ln z)` with `log-sum-exp = m + ln z`
/// (`ln z` computed as `ln_1p` of the non-maximal mass, exact for tiny
/// tails) and the probabilities.
fn log_softmax_parts(scores: &[f64]) -> ((f64, f64), Vec<f64>) {
    let top = argmax(scores);
    let m = scores[top];
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, e)| e).sum();
    let z = 1.0 + rest;
    let probs = exps.into_iter().map(|e| e / z).collect();
    ((m, rest.ln_1p()), probs)
}

/// `-log(exp(s_pos) / (exp(s_pos) + sum exp(s_neg)))`.
pub fn cl_loss(s_pos: f64, s_negs: &[f64]) -> Result<f64> {
    if s_negs.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut scores = Vec::with_capacity(s_negs.len() + 1);
    scores.push(s_pos);
    scores.extend_from_slice(s_negs);
    Ok(cl_loss_grad(&scores, 0).0)
}

/// Contrastive loss over `scores` with positive `gold`, and its gradient
/// with respect to the scores (`softmax - onehot`).
pub fn cl_loss_grad(scores: &[f64], gold: usize) -> (f64, Vec<f64>) {
    let ((m, ln_z), mut grad) = log_softmax_parts(scores);
    grad[gold] -= 1.0;
    (((m - scores[gold]) + ln_z).max(0.0), grad)
}

/// Index of the highest score, first on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Contrastive loss of one encoded instance; accumulates `scale * grad` when
/// `grad` is given. Returns the loss and the predicted candidate.
pub fn instance_loss(params: &ScorerParams, inst: &Encoded, grad: Option<(&mut [f64], f64)>) -> Result<(f64, usize)> {
    if inst.candidates.len() < 2 {
        return Err(Error::EmptyCandidates);
    }
    if inst.gold >= inst.candidates.len() {
        return Err(Error::GoldOutOfRange {
            gold: inst.gold,
            len: inst.candidates.len(),
        });
    }
    segment_loss(params, inst.candidates.iter().map(|c| vec![&inst.query[..], &c[..]]), inst.gold, grad)
}

fn segment_loss<'a>(
    params: &ScorerParams,
    inputs: impl Iterator<Item = Vec<&'a [u32]>>,
    gold: usize,
    grad: Option<(&mut [f64], f64)>,
) -> Result<(f64, usize)> {
    let inputs: Vec<Vec<&[u32]>> = inputs.collect();
    let fws: Vec<Forward> = inputs.iter().map(|segs| forward(params, segs)).collect();
    let scores: Vec<f64> = fws.iter().map(|f| f.score).collect();
    let (loss, ds) = cl_loss_grad(&scores, gold);
    if let Some((g, scale)) = grad {
        for ((segs, fw), d) in inputs.iter().zip(&fws).zip(ds) {
            backward(params, segs, fw, scale * d, g);
        }
    }
    Ok((loss, argmax(&scores)))
}

fn oriented(params: &ScorerParams, inst: &ContrastiveInstance, want: Orientation) -> Result<f64> {
    if inst.orientation != want {
        return Err(Error::WrongOrientation {
            expected: want.name(),
            found: inst.orientation.name(),
        });
    }
    let enc = Encoded::new(params, inst)?;
    Ok(instance_loss(params, &enc, None)?.0)
}

/// Option-oriented loss: query = context, candidates = answers.
pub fn ocl_loss(params: &ScorerParams, inst: &ContrastiveInstance) -> Result<f64> {
    oriented(params, inst, Orientation::Option)
}

/// Context-oriented loss: query = answer, candidates = contexts.
pub fn ccl_loss(params: &ScorerParams, inst: &ContrastiveInstance) -> Result<f64> {
    oriented(params, inst, Orientation::Context)
}

/// Masked-token loss on token ids. Masks `ceil(mask_rate * n)` positions,
/// mean-pools the masked sequence into `c` and predicts every masked token
/// with the tied softmax `softmax(E c)`; returns the mean cross-entropy.
pub fn mlm_ids(
    params: &ScorerParams,
    ids: &[u32],
    mask_rate: f64,
    rng: &mut Rng,
    grad: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptyText);
    }
    if !(0.0..=1.0).contains(&mask_rate) {
        return Err(Error::Config(format!("mask_rate {mask_rate} outside [0, 1]")));
    }
    let n = ids.len();
    let m = ((mask_rate * n as f64).ceil() as usize).min(n);
    if m == 0 {
        return Ok(0.0);
    }
    let positions = index::sample(rng, n, m).into_vec();
    let mut masked = ids.to_vec();
    let mut targets = Vec::with_capacity(m);
    for p in positions {
        targets.push(ids[p]);
        masked[p] = MASK;
    }

    let l = params.layout;
    let mut c = vec![0.0; l.dim];
    pooled_sum(params, &[&masked], &mut c);
    c.iter_mut().for_each(|v| *v /= n as f64);
    let logits: Vec<f64> = (0..l.vocab as u32)
        .map(|v| params.embedding(v).iter().zip(&c).map(|(a, b)| a * b).sum())
        .collect();
    let ((top, ln_z), probs) = log_softmax_parts(&logits);
    let inv_m = 1.0 / m as f64;
    let loss = top + ln_z - targets.iter().map(|&t| logits[t as usize]).sum::<f64>() * inv_m;

    if let Some((g, scale)) = grad {
        // d loss / d logit_v = p_v - (count of v among targets) / m
        let mut dlogit = probs;
        for &t in &targets {
            dlogit[t as usize] -= inv_m;
        }
        let mut dc = vec![0.0; l.dim];
        for (v, &dl) in dlogit.iter().enumerate() {
            let dl = dl * scale;
            let row = l.row(v as u32);
            for ((gr, e), (cc, dcc)) in g[row.clone()].iter_mut().zip(&params.theta[row]).zip(c.iter().zip(dc.iter_mut())) {
                *gr += dl * cc;
                *dcc += dl * e;
            }
        }
        let inv_n = 1.0 / n as f64;
        for &t in &masked {
            for (gr, d) in g[l.row(t)].iter_mut().zip(&dc) {
                *gr += d * inv_n;
            }
        }
    }
    Ok(loss.max(0.0))
}

pub fn mlm_loss(params: &ScorerParams, text: &str, mask_rate: f64, rng: &mut Rng) -> Result<f64> {
    mlm_ids(params, &params.vocab.encode(text), mask_rate, rng, None)
}

/// Relative weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub ocl: f64,
    pub ccl: f64,
    pub mlm: f64,
    pub mask_rate: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ocl: 1.0,
            ccl: 1.0,
            mlm: 1.0,
            mask_rate: 0.15,
        }
    }
}

/// One batch element: an encoded instance and the seed of its mask draw.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub inst: &'a Encoded,
    pub mlm_seed: u64,
}

impl<'a> BatchItem<'a> {
    pub fn new(inst: &'a Encoded, root_seed: u64, tag: &str) -> Self {
        Self {
            inst,
            mlm_seed: seed::derive_seed(root_seed, &["mlm", tag]),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossParts {
    pub ocl: f64,
    pub ccl: f64,
    pub mlm: f64,
    pub total: f64,
    /// Items whose highest-scoring candidate is the gold one.
    pub correct: usize,
}

/// `w_ocl * mean(ocl over option items) + w_ccl * mean(ccl over context
/// items) + w_mlm * mean(mlm over all items)`; a term whose items are absent
/// contributes nothing. The MLM text of an item is its query.
pub fn total_loss_grad(
    params: &ScorerParams,
    batch: &[BatchItem],
    weights: &LossWeights,
    mut grad: Option<&mut [f64]>,
) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    let n_opt = batch.iter().filter(|b| b.inst.orientation == Orientation::Option).count();
    let n_ctx = batch.len() - n_opt;
    let mut parts = LossParts::default();
    for item in batch {
        let (n, w) = match item.inst.orientation {
            Orientation::Option => (n_opt, weights.ocl),
            Orientation::Context => (n_ctx, weights.ccl),
        };
        let scale = w / n as f64;
        let (loss, pred) = instance_loss(params, item.inst, grad.as_deref_mut().map(|g| (g, scale)))?;
        match item.inst.orientation {
            Orientation::Option => parts.ocl += loss / n as f64,
            Orientation::Context => parts.ccl += loss / n as f64,
        }
        parts.correct += usize::from(pred == item.inst.gold);
    }
    if weights.mlm != 0.0 {
        let scale = weights.mlm / batch.len() as f64;
        for item in batch {
            let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(item.mlm_seed);
            let loss = mlm_ids(
                params,
                &item.inst.query,
                weights.mask_rate,
                &mut rng,
                grad.as_deref_mut().map(|g| (g, scale)),
            )?;
            parts.mlm += loss / batch.len() as f64;
        }
    }
    parts.total = weights.ocl * parts.ocl + weights.ccl * parts.ccl + weights.mlm * parts.mlm;
    Ok(parts)
}

pub fn total_loss(params: &ScorerParams, batch: &[BatchItem], weights: &LossWeights) -> Result<LossParts> {
    total_loss_grad(params, batch, weights, None)
}

fn mcqa_segments(params: &ScorerParams, ex: &McqaExample) -> Result<(Vec<u32>, Vec<u32>, Vec<Vec<u32>>)> {
    if ex.options.len() < 2 {
        return Err(Error::EmptyCandidates);
    }
    if ex.gold >= ex.options.len() {
        return Err(Error::GoldOutOfRange {
            gold: ex.gold,
            len: ex.options.len(),
        });
    }
    let v = &params.vocab;
    Ok((
        v.encode(&ex.passage),
        v.encode(&ex.question),
        ex.options.iter().map(|o| v.encode(o)).collect(),
    ))
}

/// Multiple-choice loss over `f(P [SEP] Q, O_i)`, with its gradient when
/// `grad` is given. Returns the loss and the predicted option.
pub fn mcqa_loss_grad(params: &ScorerParams, ex: &McqaExample, grad: Option<(&mut [f64], f64)>) -> Result<(f64, usize)> {
    let (p, q, opts) = mcqa_segments(params, ex)?;
    segment_loss(params, opts.iter().map(|o| vec![&p[..], &q[..], &o[..]]), ex.gold, grad)
}

pub fn mcqa_loss(params: &ScorerParams, ex: &McqaExample) -> Result<f64> {
    Ok(mcqa_loss_grad(params, ex, None)?.0)
}
