//! Finite-difference verification of the analytic gradients.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::negatives::Orientation;
use crate::seed::{self, Rng};

use super::loss::{total_loss, total_loss_grad, BatchItem, Encoded, LossWeights};
use super::params::{ScorerParams, Vocab, SEP};

/// Relative errors are taken against `max(|analytic|, |numeric|, REL_FLOOR)`
/// so coordinates with (near) zero gradient are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Flat index of the worst coordinate.
    pub worst: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[i]` with the central difference
/// `(loss(theta + h e_i) - loss(theta - h e_i)) / 2h` at every coordinate.
pub fn grad_check<F>(loss: F, params: &ScorerParams, analytic: &[f64], coords: &[usize], h: f64) -> GradCheckReport
where
    F: Fn(&ScorerParams) -> f64,
{
    let mut p = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: coords.len(),
        worst: coords.first().copied().unwrap_or(0),
    };
    for &i in coords {
        let orig = p.theta[i];
        p.theta[i] = orig + h;
        let up = loss(&p);
        p.theta[i] = orig - h;
        let down = loss(&p);
        p.theta[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = i;
        }
    }
    report
}

/// At least `n` distinct coordinates, spread over every parameter block:
/// rows of tokens present in the batch, other embedding rows, W1, b1, w2
/// and b2.
pub fn sample_coordinates(params: &ScorerParams, batch: &[BatchItem], n: usize, rng: &mut Rng) -> Vec<usize> {
    let l = params.layout;
    let mut active: BTreeSet<u32> = BTreeSet::from([SEP]);
    for b in batch {
        active.extend(&b.inst.query);
        b.inst.candidates.iter().for_each(|c| active.extend(c));
    }
    let active_coords: Vec<usize> = active.iter().flat_map(|&t| l.row(t)).collect();
    let blocks: [Vec<usize>; 5] = [
        active_coords,
        (0..l.w1).collect(),
        (l.w1..l.b1).collect(),
        (l.b1..l.w2).collect(),
        (l.w2..l.len).collect(),
    ];
    let share = n.div_ceil(blocks.len());
    let mut out = BTreeSet::new();
    for block in &blocks {
        for j in index::sample(rng, block.len(), share.min(block.len())) {
            out.insert(block[j]);
        }
    }
    while out.len() < n.min(l.len) {
        out.insert(rng.random_range(0..l.len));
    }
    out.into_iter().collect()
}

/// Checks the gradient of the combined loss on `batch`.
pub fn check_total_loss(
    params: &ScorerParams,
    batch: &[BatchItem],
    weights: &LossWeights,
    coords: usize,
    h: f64,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    let mut grad = vec![0.0; params.layout.len];
    total_loss_grad(params, batch, weights, Some(&mut grad))?;
    let coords = sample_coordinates(params, batch, coords, rng);
    // Every evaluation succeeded above with the same shapes.
    let f = |p: &ScorerParams| total_loss(p, batch, weights).map(|l| l.total).unwrap_or(f64::NAN);
    Ok(grad_check(f, params, &grad, &coords, h))
}

/// A random scorer and batch for gradient checking: 60 word vocabulary,
/// d = 8, h = 6, parameters of moderate scale, 6 instances of mixed
/// orientation with 2 to 5 candidates.
pub struct Problem {
    pub params: ScorerParams,
    pub items: Vec<Encoded>,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Problem {
    pub fn random(seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, &["grad-check-problem"]);
        let words: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::from_texts([words.join(" ").as_str()]);
        let params = ScorerParams::random(vocab, 8, 6, 0.8, &mut rng);
        let seq = |rng: &mut Rng| -> Vec<u32> {
            let n = rng.random_range(1..7);
            (0..n).map(|_| rng.random_range(0..params.vocab.len() as u32)).collect()
        };
        let items = (0..6)
            .map(|i| {
                let k = rng.random_range(2..6);
                Encoded {
                    orientation: if i % 2 == 0 { Orientation::Option } else { Orientation::Context },
                    query: seq(&mut rng),
                    candidates: (0..k).map(|_| seq(&mut rng)).collect(),
                    gold: rng.random_range(0..k),
                }
            })
            .collect();
        let weights = LossWeights {
            mask_rate: 0.3,
            mlm: rng.random_range(0.5..1.5),
            ..Default::default()
        };
        Self {
            params,
            items,
            weights,
            seed,
        }
    }

    pub fn batch(&self) -> Vec<BatchItem<'_>> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, e)| BatchItem::new(e, self.seed, &i.to_string()))
            .collect()
    }

    pub fn check(&self, coords: usize, h: f64) -> Result<GradCheckReport> {
        let mut rng = Rng::seed_from_u64(seed::derive_seed(self.seed, &["coords"]));
        check_total_loss(&self.params, &self.batch(), &self.weights, coords, h, &mut rng)
    }
}
