//! Counterfactual augmentation.
//!
//! Entities on the meta-path are consistently swapped for alien entities
//! taken from other documents, in every text of a sample. The relational
//! structure survives while world knowledge about the original entities no
//! longer identifies the positive.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Entity};
use crate::error::{Error, Result};
use crate::negatives::{relation_replace, Donor, DonorSource, Provenance};
use crate::sample::{Replacement, ReplacementMap, Sample};
use crate::seed::{self, Rng};
use crate::text::AnnotatedText;

/// Original-to-counterfactual mix, written `a:b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    pub original: u32,
    pub counterfactual: u32,
}

impl Ratio {
    pub const ORIGINAL_ONLY: Ratio = Ratio {
        original: 1,
        counterfactual: 0,
    };

    pub fn new(original: u32, counterfactual: u32) -> Result<Self> {
        if original == 0 && counterfactual == 0 {
            return Err(Error::Config("ratio 0:0 emits nothing".into()));
        }
        Ok(Self {
            original,
            counterfactual,
        })
    }

    pub fn enabled(self) -> bool {
        self.counterfactual > 0
    }

    /// Counterfactual copies to generate per original sample.
    pub fn copies_per_original(self) -> usize {
        match (self.original, self.counterfactual) {
            (_, 0) => 0,
            (0, _) => 1,
            (a, b) => b.div_ceil(a) as usize,
        }
    }
}

impl Default for Ratio {
    fn default() -> Self {
        Self {
            original: 1,
            counterfactual: 1,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.original, self.counterfactual)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    /// Accepts `a:b`, or a bare `n` meaning `1:n` (so `0` disables).
    fn from_str(s: &str) -> Result<Self> {
        let num = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("bad ratio `{s}`, expected a:b")))
        };
        match s.split_once(':') {
            Some((a, b)) => Ratio::new(num(a)?, num(b)?),
            None => Ratio::new(1, num(s)?),
        }
    }
}

impl TryFrom<String> for Ratio {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolStrategy {
    /// Aliens drawn from the whole corpus.
    #[default]
    Uniform,
    /// Aliens drawn from the documents of the same batch window.
    SameBatchDocuments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub cf_ratio: Ratio,
    /// Inclusion probability for path entities other than the endpoints.
    pub include_prob: f64,
    pub pool_strategy: PoolStrategy,
    /// Batch window (in documents) for `same-batch-documents`.
    pub batch_size: usize,
    /// Top up short option-negative sets of counterfactual copies with answer
    /// candidates of other documents rewritten onto the replaced pair.
    pub answer_bank_negatives: bool,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            cf_ratio: Ratio::default(),
            include_prob: 0.5,
            pool_strategy: PoolStrategy::Uniform,
            batch_size: 64,
            answer_bank_negatives: false,
        }
    }
}

impl CounterfactualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.include_prob) {
            return Err(Error::Config(format!("include_prob {} outside [0, 1]", self.include_prob)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlienEntity {
    pub id: String,
    pub name: String,
    pub doc: String,
}

/// Candidate replacement entities, one per distinct id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlienPool {
    pub entities: Vec<AlienEntity>,
}

impl AlienPool {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut seen = HashSet::new();
        let mut entities = Vec::new();
        for doc in docs {
            for e in &doc.entities {
                if seen.insert(e.id.clone()) {
                    entities.push(AlienEntity {
                        id: e.id.clone(),
                        name: e.surface.clone(),
                        doc: doc.id.clone(),
                    });
                }
            }
        }
        Self { entities }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Picks the entities to replace and their aliens.
///
/// The target endpoints are always keyed; other path entities join
/// independently with probability `include_prob`. Aliens are distinct (by id
/// and by name) and never an entity or surface already present in the host
/// document or in any text of the sample.
pub fn select_replacements(
    sample: &Sample,
    host: &Document,
    pool: &AlienPool,
    include_prob: f64,
    rng: &mut Rng,
) -> Result<ReplacementMap> {
    let mut keys = vec![sample.pair.0.clone(), sample.pair.1.clone()];
    let inner = sample.path.entities.len().saturating_sub(1);
    for id in sample.path.entities.iter().take(inner).skip(1) {
        if rng.random_bool(include_prob) && !keys.contains(id) {
            keys.push(id.clone());
        }
    }

    let mut banned_ids: HashSet<&str> = host.entities.iter().map(|e| e.id.as_str()).collect();
    let mut banned_names: HashSet<&str> = host.entities.iter().map(|e| e.surface.as_str()).collect();
    for t in sample.texts() {
        for m in &t.mentions {
            banned_ids.insert(&m.entity);
            banned_names.insert(t.surface(m));
        }
    }
    let eligible = |a: &AlienEntity| !banned_ids.contains(a.id.as_str()) && !banned_names.contains(a.name.as_str());

    let needed = keys.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(needed);
    let mut taken_names: HashSet<&str> = HashSet::new();
    let n = pool.len();
    // Rejection sampling first; the pool usually dwarfs the host document.
    let mut attempts = 32 * needed + 64;
    while chosen.len() < needed && attempts > 0 && n > 0 {
        attempts -= 1;
        let i = rng.random_range(0..n);
        let a = &pool.entities[i];
        if eligible(a) && !chosen.contains(&i) && !taken_names.contains(a.name.as_str()) {
            chosen.push(i);
            taken_names.insert(&a.name);
        }
    }
    if chosen.len() < needed {
        let mut rest = Vec::new();
        let mut names = taken_names.clone();
        for (i, a) in pool.entities.iter().enumerate() {
            if eligible(a) && !chosen.contains(&i) && names.insert(a.name.as_str()) {
                rest.push(i);
            }
        }
        let missing = needed - chosen.len();
        if rest.len() < missing {
            return Err(Error::PoolTooSmall {
                needed,
                available: chosen.len() + rest.len(),
            });
        }
        for j in index::sample(rng, rest.len(), missing) {
            chosen.push(rest[j]);
        }
    }

    let mut source = BTreeSet::new();
    let entries = keys
        .into_iter()
        .zip(&chosen)
        .map(|(k, &i)| {
            let a = &pool.entities[i];
            source.insert(a.doc.clone());
            (
                k,
                Replacement {
                    id: a.id.clone(),
                    surface: a.name.clone(),
                },
            )
        })
        .collect();
    Ok(ReplacementMap {
        entries,
        source: source.into_iter().collect(),
    })
}

fn rewrite(text: &AnnotatedText, map: &ReplacementMap) -> AnnotatedText {
    text.rewrite(|id| map.entries.get(id).map(|r| (r.id.as_str(), r.surface.as_str())))
}

/// Applies `map` to every text of the sample. An empty map returns the
/// sample unchanged and unflagged.
pub fn apply_counterfactual(sample: &Sample, map: &ReplacementMap) -> Sample {
    let mut out = sample.clone();
    if map.is_empty() {
        out.counterfactual = false;
        out.replacements = ReplacementMap::default();
        return out;
    }
    for t in &mut out.context {
        *t = rewrite(t, map);
    }
    out.answer = rewrite(&out.answer, map);
    for n in &mut out.options.items {
        n.text = rewrite(&n.text, map);
    }
    for v in &mut out.contexts.items {
        v.sentence.text = rewrite(&v.sentence.text, map);
    }
    out.counterfactual = true;
    out.replacements = map.clone();
    out
}

/// Answer candidates of original samples, usable as relation providers for
/// other documents.
#[derive(Debug, Clone, Default)]
pub struct AnswerBank {
    entries: Vec<(Provenance, (String, String), AnnotatedText)>,
}

impl AnswerBank {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for s in samples {
            if s.counterfactual || !seen.insert((s.doc.clone(), s.answer_sentence)) {
                continue;
            }
            let prov = Provenance {
                doc: s.doc.clone(),
                sentence: s.answer_sentence,
            };
            entries.push((prov, s.pair.clone(), s.answer.clone()));
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Fills a counterfactual sample's option-negative shortfall from the bank:
/// another document's answer, with its own target pair rewritten onto this
/// sample's replaced pair.
pub fn top_up_from_bank(sample: &mut Sample, bank: &AnswerBank, rng: &mut Rng) -> Result<usize> {
    let missing = sample.options.requested.saturating_sub(sample.options.items.len());
    if missing == 0 || !sample.counterfactual || bank.is_empty() {
        return Ok(0);
    }
    let target = |id: &str| -> Result<Entity> {
        let r = sample
            .replacements
            .entries
            .get(id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))?;
        Ok(Entity {
            id: r.id.clone(),
            surface: r.surface.clone(),
            mentions: Vec::new(),
        })
    };
    let (ti, tj) = (target(&sample.pair.0)?, target(&sample.pair.1)?);
    let mut texts: HashSet<String> = sample.options.items.iter().map(|n| n.text.text.clone()).collect();
    texts.insert(sample.answer.text.clone());

    let draws = bank.len().min(64);
    let mut added = 0;
    for j in index::sample(rng, bank.len(), draws) {
        if added == missing {
            break;
        }
        let (prov, pair, text) = &bank.entries[j];
        if prov.doc == sample.doc {
            continue;
        }
        let donor = Donor {
            provenance: prov.clone(),
            text: text.clone(),
            pair: pair.clone(),
            swapped: false,
            source: DonorSource::AnswerBank,
        };
        let Ok(synth) = relation_replace(&donor, (&ti, &tj)) else {
            continue;
        };
        if texts.insert(synth.text.text.clone()) {
            sample.options.items.push(synth);
            added += 1;
        }
    }
    Ok(added)
}

/// Produces the counterfactual copies of an original sample
/// (`cfg.cf_ratio.copies_per_original()` of them), each with its own
/// replacement draw.
pub fn counterfactual_copies(
    sample: &Sample,
    host: &Document,
    pool: &AlienPool,
    cfg: &CounterfactualConfig,
    root_seed: u64,
) -> Result<Vec<Sample>> {
    let key = sample.key();
    (1..=cfg.cf_ratio.copies_per_original())
        .map(|copy| {
            let mut rng = seed::rng_for(root_seed, &["counterfactual", &key, &copy.to_string()]);
            let map = select_replacements(sample, host, pool, cfg.include_prob, &mut rng)?;
            let mut out = apply_counterfactual(sample, &map);
            out.copy = copy;
            Ok(out)
        })
        .collect()
}
