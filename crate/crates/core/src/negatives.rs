//! Negative generation by relation replacement.
//!
//! A donor sentence `z` mentioning some entity pair `(e_a, e_b)` provides a
//! relation. Rewriting `e_a` to the target `e_i` and `e_b` to `e_j` transplants
//! that relation onto the target pair: the entities stay, the relation
//! changes. Option negatives replace the answer this way; context negatives
//! replace one context sentence, using the meta-path hop it supports as the
//! target pair.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Entity};
use crate::error::{Error, Result};
use crate::metapath::PositiveInstance;
use crate::seed::{self, Rng};
use crate::text::AnnotatedText;

/// Upper bound on cross-document donors tried per target once the host
/// document is exhausted.
const POOL_DRAWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativeConfig {
    /// Negatives per orientation (K).
    pub num_negatives: usize,
    /// Size of the cross-document donor pool.
    pub pool_size: usize,
    pub allow_cross_document: bool,
    /// Allow the mention swap when a donor only offers the target pair itself.
    pub swap_fallback: bool,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            num_negatives: 3,
            pool_size: 10_000,
            allow_cross_document: true,
            swap_fallback: true,
        }
    }
}

/// Where a relation provider came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DonorSource {
    InDocument,
    CrossDocument,
    /// An answer candidate of another instance.
    AnswerBank,
}

impl DonorSource {
    pub fn name(self) -> &'static str {
        match self {
            DonorSource::InDocument => "in-document",
            DonorSource::CrossDocument => "cross-document",
            DonorSource::AnswerBank => "answer-bank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub doc: String,
    pub sentence: usize,
}

/// A sentence synthesized from a donor by entity replacement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSentence {
    pub text: AnnotatedText,
    pub provenance: Provenance,
    /// Donor entity id -> target entity id.
    pub replaced: BTreeMap<String, String>,
    pub swapped: bool,
    pub source: DonorSource,
}

/// A context with one sentence replaced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextVariant {
    /// Position within the instance's context list.
    pub position: usize,
    /// Document index of the replaced sentence.
    pub replaced: usize,
    pub sentence: SynthSentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Option,
    Context,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::Option => "option",
            Orientation::Context => "context",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSet<T> {
    pub items: Vec<T>,
    pub requested: usize,
}

pub type OptionNegatives = NegativeSet<SynthSentence>;
pub type ContextNegatives = NegativeSet<ContextVariant>;

impl<T> NegativeSet<T> {
    pub fn shortfall(&self) -> bool {
        self.items.len() < self.requested
    }
}

/// A candidate relation provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Donor {
    pub provenance: Provenance,
    pub text: AnnotatedText,
    /// Ordered pair `(e_a, e_b)`; `e_a` becomes the first target entity.
    pub pair: (String, String),
    pub swapped: bool,
    pub source: DonorSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoDonor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSentence {
    pub provenance: Provenance,
    pub text: AnnotatedText,
}

/// Cross-document donor sentences, reservoir-sampled from a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DonorPool {
    pub sentences: Vec<PoolSentence>,
}

fn distinct_entities(text: &AnnotatedText) -> usize {
    text.entity_ids().len()
}

impl DonorPool {
    /// Uniform sample (without replacement) of up to `size` sentences that
    /// mention at least two entities, scanning `docs` in order.
    pub fn build(docs: &[Document], size: usize, seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, &["donor-pool"]);
        let mut kept: Vec<(usize, usize)> = Vec::with_capacity(size.min(1 << 16));
        let mut seen = 0usize;
        for (di, doc) in docs.iter().enumerate() {
            for (k, ents) in doc.sentence_entity_table().iter().enumerate() {
                if ents.len() < 2 {
                    continue;
                }
                if kept.len() < size {
                    kept.push((di, k));
                } else if size > 0 {
                    let j = rng.random_range(0..=seen);
                    if j < size {
                        kept[j] = (di, k);
                    }
                }
                seen += 1;
            }
        }
        let sentences = kept
            .into_iter()
            .filter_map(|(di, k)| {
                let doc = &docs[di];
                Some(PoolSentence {
                    provenance: Provenance {
                        doc: doc.id.clone(),
                        sentence: k,
                    },
                    text: doc.annotated(k).ok()?,
                })
            })
            .collect();
        Self { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Picks the ordered donor pair inside `text` for the given target pair.
/// Pairs over a different entity set are preferred; a donor offering only
/// the target entities themselves yields the swap `(e_j, e_i)`. A pair is
/// only admissible if no mention left untouched by the rewrite names a
/// target entity or carries a target surface, so every negative mentions
/// the targets exactly as often as the positive does.
fn choose_pair(
    text: &AnnotatedText,
    target: (&str, &str),
    surfaces: [&str; 2],
    swap_fallback: bool,
    rng: &mut Rng,
) -> Option<((String, String), bool)> {
    let ids: Vec<&str> = text.entity_ids().into_iter().collect();
    if ids.len() < 2 {
        return None;
    }
    let target_set: BTreeSet<&str> = [target.0, target.1].into();
    let clean = |a: &str, b: &str| {
        text.mentions.iter().all(|m| {
            let e = m.entity.as_str();
            e == a || e == b || !(target_set.contains(e) || surfaces.contains(&text.surface(m)))
        })
    };
    let mut pairs = Vec::new();
    for &a in &ids {
        for &b in &ids {
            if a != b && BTreeSet::from([a, b]) != target_set && clean(a, b) {
                pairs.push((a, b));
            }
        }
    }
    if let Some(&(a, b)) = pairs.choose(rng) {
        return Some(((a.to_string(), b.to_string()), false));
    }
    let has_both = ids.contains(&target.0) && ids.contains(&target.1);
    (swap_fallback && has_both && clean(target.0, target.1))
        .then(|| ((target.1.to_string(), target.0.to_string()), true))
}

/// Lazily yields donors: shuffled eligible sentences of the host document
/// first, then (optionally) cross-document pool sentences.
struct DonorStream<'a> {
    doc: &'a Document,
    pool: &'a DonorPool,
    cfg: &'a NegativeConfig,
    target: (&'a str, &'a str),
    surfaces: [&'a str; 2],
    local: Vec<usize>,
    local_pos: usize,
    pool_order: Option<Vec<usize>>,
    pool_pos: usize,
}

impl<'a> DonorStream<'a> {
    fn new(
        doc: &'a Document,
        table: &[Vec<usize>],
        excluded: &dyn Fn(usize) -> bool,
        pool: &'a DonorPool,
        cfg: &'a NegativeConfig,
        target: (&'a str, &'a str),
        rng: &mut Rng,
    ) -> Self {
        let mut local: Vec<usize> = table
            .iter()
            .enumerate()
            .filter(|(k, ents)| ents.len() >= 2 && !excluded(*k))
            .map(|(k, _)| k)
            .collect();
        local.shuffle(rng);
        let surface = |id: &str| doc.entity(id).map_or("", |e| e.surface.as_str());
        Self {
            doc,
            pool,
            cfg,
            target,
            surfaces: [surface(target.0), surface(target.1)],
            local,
            local_pos: 0,
            pool_order: None,
            pool_pos: 0,
        }
    }

    fn next(&mut self, rng: &mut Rng) -> Option<Donor> {
        while self.local_pos < self.local.len() {
            let k = self.local[self.local_pos];
            self.local_pos += 1;
            let Ok(text) = self.doc.annotated(k) else {
                continue;
            };
            if let Some((pair, swapped)) = choose_pair(&text, self.target, self.surfaces, self.cfg.swap_fallback, rng) {
                return Some(Donor {
                    provenance: Provenance {
                        doc: self.doc.id.clone(),
                        sentence: k,
                    },
                    text,
                    pair,
                    swapped,
                    source: DonorSource::InDocument,
                });
            }
        }
        if !self.cfg.allow_cross_document || self.pool.is_empty() {
            return None;
        }
        let order = self.pool_order.get_or_insert_with(|| {
            let n = self.pool.len();
            index::sample(rng, n, n.min(POOL_DRAWS)).into_vec()
        });
        while self.pool_pos < order.len() {
            let cand = &self.pool.sentences[order[self.pool_pos]];
            self.pool_pos += 1;
            if cand.provenance.doc == self.doc.id || distinct_entities(&cand.text) < 2 {
                continue;
            }
            if let Some((pair, swapped)) = choose_pair(&cand.text, self.target, self.surfaces, self.cfg.swap_fallback, rng) {
                return Some(Donor {
                    provenance: cand.provenance.clone(),
                    text: cand.text.clone(),
                    pair,
                    swapped,
                    source: DonorSource::CrossDocument,
                });
            }
        }
        None
    }
}

/// Samples one relation provider for the instance's answer: uniformly among
/// eligible host-document sentences (never an answer candidate), falling back
/// to the cross-document pool.
pub fn sample_relation_provider(
    inst: &PositiveInstance,
    doc: &Document,
    pool: &DonorPool,
    cfg: &NegativeConfig,
    rng: &mut Rng,
) -> Result<Donor, SkipReason> {
    let table = doc.sentence_entity_table();
    let excluded = |k: usize| inst.answers.contains(&k);
    let target = (inst.pair.0.as_str(), inst.pair.1.as_str());
    DonorStream::new(doc, &table, &excluded, pool, cfg, target, rng)
        .next(rng)
        .ok_or(SkipReason::NoDonor)
}

/// Rewrites every mention of `e_a` to `target.0` and of `e_b` to `target.1`
/// (canonical surfaces); everything else in the donor is kept byte for byte.
pub fn relation_replace(donor: &Donor, target: (&Entity, &Entity)) -> Result<SynthSentence> {
    let checked = AnnotatedText::new(donor.text.text.clone(), donor.text.mentions.clone())?;
    let (a, b) = (&donor.pair.0, &donor.pair.1);
    for id in [a, b] {
        if !checked.mentions_entity(id) {
            return Err(Error::MissingMention(id.clone()));
        }
    }
    let (ti, tj) = target;
    let text = checked.rewrite(|id| {
        if id == a.as_str() {
            Some((ti.id.as_str(), ti.surface.as_str()))
        } else if id == b.as_str() {
            Some((tj.id.as_str(), tj.surface.as_str()))
        } else {
            None
        }
    });
    Ok(SynthSentence {
        text,
        provenance: donor.provenance.clone(),
        replaced: BTreeMap::from([(a.clone(), ti.id.clone()), (b.clone(), tj.id.clone())]),
        swapped: donor.swapped,
        source: donor.source,
    })
}

fn entity<'d>(doc: &'d Document, id: &str) -> Result<&'d Entity> {
    doc.entity(id).ok_or_else(|| Error::UnknownEntity(id.to_string()))
}

/// Up to K distinct negative answers, each mentioning the target pair and
/// none equal to an answer candidate.
pub fn make_negative_options(
    inst: &PositiveInstance,
    doc: &Document,
    pool: &DonorPool,
    cfg: &NegativeConfig,
    rng: &mut Rng,
) -> Result<OptionNegatives> {
    let k = cfg.num_negatives;
    let mut items = Vec::with_capacity(k);
    if k == 0 {
        return Ok(NegativeSet { items, requested: 0 });
    }
    let target = (entity(doc, &inst.pair.0)?, entity(doc, &inst.pair.1)?);
    let answers: HashSet<&str> = inst
        .answers
        .iter()
        .filter_map(|&a| doc.sentences.get(a).map(|s| s.text.as_str()))
        .collect();
    let table = doc.sentence_entity_table();
    let excluded = |s: usize| inst.answers.contains(&s);
    let pair = (inst.pair.0.as_str(), inst.pair.1.as_str());
    let mut stream = DonorStream::new(doc, &table, &excluded, pool, cfg, pair, rng);
    let mut seen: HashSet<String> = HashSet::new();
    while items.len() < k {
        let Some(donor) = stream.next(rng) else { break };
        let Ok(synth) = relation_replace(&donor, target) else {
            continue;
        };
        if answers.contains(synth.text.text.as_str()) || !seen.insert(synth.text.text.clone()) {
            continue;
        }
        items.push(synth);
    }
    Ok(NegativeSet { items, requested: k })
}

/// Up to K context variants. Each one swaps a single context sentence for a
/// donor relation moved onto the pair of the hop that sentence supports.
pub fn make_negative_contexts(
    inst: &PositiveInstance,
    doc: &Document,
    pool: &DonorPool,
    cfg: &NegativeConfig,
    rng: &mut Rng,
) -> Result<ContextNegatives> {
    let k = cfg.num_negatives;
    let mut items = Vec::with_capacity(k);
    if k == 0 || inst.context.is_empty() {
        return Ok(NegativeSet { items, requested: k });
    }
    let hops: BTreeMap<usize, (&str, &str)> = inst.path.sentence_hops().map(|(s, a, b)| (s, (a, b))).collect();
    let mut targets = Vec::with_capacity(inst.context.len());
    for &s in &inst.context {
        let &(a, b) = hops
            .get(&s)
            .ok_or_else(|| Error::Config(format!("context sentence {s} supports no hop")))?;
        targets.push((s, (a, b), (entity(doc, a)?, entity(doc, b)?)));
    }
    let table = doc.sentence_entity_table();
    let mut streams: Vec<Option<DonorStream>> = (0..targets.len()).map(|_| None).collect();
    let mut active: Vec<usize> = (0..targets.len()).collect();
    let mut seen: HashSet<(usize, String)> = HashSet::new();

    while items.len() < k && !active.is_empty() {
        let slot = rng.random_range(0..active.len());
        let position = active[slot];
        let (replaced, pair, ents) = targets[position];
        let stream = streams[position].get_or_insert_with(|| {
            let excluded = |x: usize| x == replaced || inst.answers.contains(&x);
            DonorStream::new(doc, &table, &excluded, pool, cfg, pair, rng)
        });
        let Some(donor) = stream.next(rng) else {
            active.remove(slot);
            continue;
        };
        let Ok(synth) = relation_replace(&donor, ents) else {
            continue;
        };
        if synth.text.text == doc.sentences[replaced].text || !seen.insert((position, synth.text.text.clone())) {
            continue;
        }
        items.push(ContextVariant {
            position,
            replaced,
            sentence: synth,
        });
    }
    Ok(NegativeSet { items, requested: k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{mirrormask, DocumentBuilder};
    use crate::graph::build_entity_graph;
    use crate::metapath::{extract_positive_instances, ExtractorConfig};
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn worked() -> (Document, PositiveInstance) {
        let d = mirrormask();
        let g = build_entity_graph(&d);
        let inst = extract_positive_instances(&d, &g, &ExtractorConfig::default()).remove(0);
        (d, inst)
    }

    fn donor(text: AnnotatedText, pair: (&str, &str), swapped: bool) -> Donor {
        Donor {
            provenance: Provenance {
                doc: "z".into(),
                sentence: 0,
            },
            text,
            pair: (pair.0.into(), pair.1.into()),
            swapped,
            source: DonorSource::InDocument,
        }
    }

    fn ent(id: &str, name: &str) -> Entity {
        Entity {
            id: id.into(),
            surface: name.into(),
            mentions: vec![],
        }
    }

    #[test]
    fn replace_transplants_relation() {
        let z = DocumentBuilder::new("z")
            .sentence("Carol founded Dune Corp.", &[("carol", "Carol"), ("dune", "Dune Corp")])
            .build();
        let d = donor(z.annotated(0).unwrap(), ("carol", "dune"), false);
        let out = relation_replace(&d, (&ent("mck", "McKean"), &ent("sl", "Stephanie Leonidas"))).unwrap();
        assert_eq!(out.text.text, "McKean founded Stephanie Leonidas.");
        assert_eq!(out.replaced.len(), 2);
        assert_eq!(out.text.outside_segments(), d.text.outside_segments());
    }

    #[test]
    fn swap_variant() {
        let z = DocumentBuilder::new("z")
            .sentence(
                "McKean cast Stephanie Leonidas",
                &[("mck", "McKean"), ("sl", "Stephanie Leonidas")],
            )
            .build();
        let d = donor(z.annotated(0).unwrap(), ("sl", "mck"), true);
        let out = relation_replace(&d, (&ent("mck", "McKean"), &ent("sl", "Stephanie Leonidas"))).unwrap();
        assert_eq!(out.text.text, "Stephanie Leonidas cast McKean");
        assert!(out.swapped);
    }

    #[test]
    fn repeated_donor_mentions_all_replaced() {
        let z = DocumentBuilder::new("z")
            .sentence("Carol met Dan, and Carol left.", &[("c", "Carol"), ("d", "Dan"), ("c", "Carol")])
            .build();
        let d = donor(z.annotated(0).unwrap(), ("c", "d"), false);
        let out = relation_replace(&d, (&ent("x", "Xi"), &ent("y", "Yo"))).unwrap();
        assert_eq!(out.text.text, "Xi met Yo, and Xi left.");
    }

    #[test]
    fn overlapping_donor_rejected() {
        let mut text = AnnotatedText::plain("Carol Dan");
        text.mentions = vec![
            crate::text::Span {
                entity: "c".into(),
                start: 0,
                end: 7,
            },
            crate::text::Span {
                entity: "d".into(),
                start: 6,
                end: 9,
            },
        ];
        let d = donor(text, ("c", "d"), false);
        assert!(matches!(
            relation_replace(&d, (&ent("x", "X"), &ent("y", "Y"))),
            Err(Error::OverlappingMentions(6))
        ));
    }

    #[test]
    fn negatives_never_repeat_a_target() {
        let doc = DocumentBuilder::new("h")
            .sentence("Ann and Bob argue.", &[("a", "Ann"), ("b", "Bob")])
            .sentence("Ann met Cy.", &[("a", "Ann"), ("c", "Cy")])
            .sentence("Cy met Bob.", &[("c", "Cy"), ("b", "Bob")])
            .sentence("Dee hired Eve with Ann.", &[("d", "Dee"), ("e", "Eve"), ("a", "Ann")])
            .build();
        let other = DocumentBuilder::new("o")
            .sentence("Fay paid Gus and Bob.", &[("f", "Fay"), ("g", "Gus"), ("x", "Bob")])
            .build();
        let g = build_entity_graph(&doc);
        let inst = extract_positive_instances(&doc, &g, &ExtractorConfig::default()).remove(0);
        assert_eq!(inst.pair, ("a".into(), "b".into()));
        let pool = DonorPool::build(&[doc.clone(), other], 10, 0);
        for seed in 0..30 {
            let negs = make_negative_options(&inst, &doc, &pool, &NegativeConfig::default(), &mut rng(seed)).unwrap();
            for n in &negs.items {
                for surface in ["Ann", "Bob"] {
                    assert_eq!(n.text.text.matches(surface).count(), 1, "{:?}", n.text.text);
                }
            }
        }
    }

    #[test]
    fn in_document_donor_preferred() {
        let doc = DocumentBuilder::new("h")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .sentence("C hired D.", &[("c", "C"), ("d", "D")])
            .build();
        let inst = PositiveInstance {
            doc: "h".into(),
            pair: ("a".into(), "b".into()),
            path: crate::metapath::MetaPath {
                entities: vec!["a".into(), "b".into()],
                hops: vec![],
            },
            context: vec![],
            answer: 0,
            answers: BTreeSet::from([0]),
        };
        let other = DocumentBuilder::new("o")
            .sentence("E fought F.", &[("e", "E"), ("f", "F")])
            .build();
        let pool = DonorPool::build(&[other], 10, 1);
        for s in 0..20 {
            let d = sample_relation_provider(&inst, &doc, &pool, &NegativeConfig::default(), &mut rng(s)).unwrap();
            assert_eq!(d.provenance, Provenance { doc: "h".into(), sentence: 1 });
        }
    }

    #[test]
    fn swap_flag_when_only_target_pair_available() {
        let doc = DocumentBuilder::new("h")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .build();
        let inst = PositiveInstance {
            doc: "h".into(),
            pair: ("a".into(), "b".into()),
            path: crate::metapath::MetaPath {
                entities: vec!["a".into(), "b".into()],
                hops: vec![],
            },
            context: vec![],
            answer: 0,
            answers: BTreeSet::from([0]),
        };
        let other = DocumentBuilder::new("o")
            .sentence("A sued B.", &[("a", "A"), ("b", "B")])
            .build();
        let pool = DonorPool::build(&[other], 10, 1);
        let d = sample_relation_provider(&inst, &doc, &pool, &NegativeConfig::default(), &mut rng(3)).unwrap();
        assert!(d.swapped);
        assert_eq!(d.pair, ("b".to_string(), "a".to_string()));
        let out = relation_replace(&d, (doc.entity("a").unwrap(), doc.entity("b").unwrap())).unwrap();
        assert_eq!(out.text.text, "B sued A.");

        let no_swap = NegativeConfig {
            swap_fallback: false,
            ..Default::default()
        };
        assert_eq!(
            sample_relation_provider(&inst, &doc, &pool, &no_swap, &mut rng(3)),
            Err(SkipReason::NoDonor)
        );
    }

    #[test]
    fn no_donor_anywhere() {
        let doc = DocumentBuilder::new("h")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .sentence("Only C here.", &[("c", "C")])
            .build();
        let (_, mut inst) = worked();
        inst.doc = "h".into();
        inst.pair = ("a".into(), "b".into());
        inst.answers = BTreeSet::from([0]);
        let r = sample_relation_provider(&inst, &doc, &DonorPool::default(), &NegativeConfig::default(), &mut rng(0));
        assert_eq!(r, Err(SkipReason::NoDonor));
    }

    #[test]
    fn worked_example_options() {
        let (d, inst) = worked();
        let negs = make_negative_options(&inst, &d, &DonorPool::default(), &NegativeConfig::default(), &mut rng(5)).unwrap();
        assert_eq!(negs.items.len(), 3);
        assert!(!negs.shortfall());
        let answer = &d.sentences[3].text;
        for n in &negs.items {
            assert!(n.text.text.contains("Dave McKean"), "{}", n.text.text);
            assert!(n.text.text.contains("Stephanie Leonidas"), "{}", n.text.text);
            assert_ne!(&n.text.text, answer);
            assert!(n.text.mentions_entity("e1") && n.text.mentions_entity("e5"));
            assert_ne!(n.provenance.sentence, 3);
        }
        let zero = NegativeConfig {
            num_negatives: 0,
            ..Default::default()
        };
        assert!(make_negative_options(&inst, &d, &DonorPool::default(), &zero, &mut rng(5))
            .unwrap()
            .items
            .is_empty());
    }

    #[test]
    fn collision_with_answer_is_resampled() {
        // The in-document donor reproduces the answer under one of its two
        // pair orders; the pool supplies a replacement.
        let doc = DocumentBuilder::new("h")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .sentence("C met D.", &[("c", "C"), ("d", "D")])
            .build();
        let inst = PositiveInstance {
            doc: "h".into(),
            pair: ("a".into(), "b".into()),
            path: crate::metapath::MetaPath {
                entities: vec!["a".into(), "b".into()],
                hops: vec![],
            },
            context: vec![],
            answer: 0,
            answers: BTreeSet::from([0]),
        };
        let other = DocumentBuilder::new("o")
            .sentence("E fought F.", &[("e", "E"), ("f", "F")])
            .build();
        let pool = DonorPool::build(&[other], 10, 1);
        let cfg = NegativeConfig {
            num_negatives: 1,
            ..Default::default()
        };
        for s in 0..10 {
            let negs = make_negative_options(&inst, &doc, &pool, &cfg, &mut rng(s)).unwrap();
            assert_eq!(negs.items.len(), 1);
            assert_ne!(negs.items[0].text.text, "A met B.");
        }
    }

    #[test]
    fn worked_example_contexts() {
        let (d, inst) = worked();
        let negs = make_negative_contexts(&inst, &d, &DonorPool::default(), &NegativeConfig::default(), &mut rng(9)).unwrap();
        assert_eq!(negs.items.len(), 3);
        for v in &negs.items {
            assert_eq!(inst.context[v.position], v.replaced);
            let path: BTreeSet<&str> = inst.path.entities.iter().map(String::as_str).collect();
            let targets: BTreeSet<&str> = v.sentence.replaced.values().map(String::as_str).collect();
            assert!(targets.is_subset(&path));
            assert_ne!(v.sentence.provenance.sentence, v.replaced);
            assert_ne!(v.sentence.provenance.sentence, 3);
        }
        // Replacing s5 must target the (MirrorMask, Stephanie Leonidas) hop.
        for v in negs.items.iter().filter(|v| v.replaced == 5) {
            let t: BTreeSet<&str> = v.sentence.replaced.values().map(String::as_str).collect();
            assert_eq!(t, BTreeSet::from(["e5", "e7"]));
        }
    }

    #[test]
    fn single_context_sentence_uses_distinct_donors() {
        let doc = DocumentBuilder::new("h")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .sentence("A knows B through C.", &[("a", "A"), ("c", "C")])
            .sentence("C sued D.", &[("c", "C"), ("d", "D")])
            .sentence("E hired F.", &[("e", "E"), ("f", "F")])
            .sentence("G paid H.", &[("g", "G"), ("h", "H")])
            .sentence("C praised B.", &[("c", "C"), ("b", "B")])
            .build();
        let g = build_entity_graph(&doc);
        let inst = extract_positive_instances(&doc, &g, &ExtractorConfig::default()).remove(0);
        assert_eq!(inst.pair, ("a".to_string(), "b".to_string()));
        assert_eq!(inst.context, [1, 5]);
        let mut one = inst.clone();
        one.context = vec![1];
        one.path.entities = vec!["a".into(), "c".into()];
        one.path.hops = vec![crate::metapath::Hop::Sentence(1)];
        let negs = make_negative_contexts(&one, &doc, &DonorPool::default(), &NegativeConfig::default(), &mut rng(1)).unwrap();
        assert_eq!(negs.items.len(), 3);
        let donors: BTreeSet<usize> = negs.items.iter().map(|v| v.sentence.provenance.sentence).collect();
        assert_eq!(donors.len(), 3);
        assert!(negs.items.iter().all(|v| v.replaced == 1));
    }

    #[test]
    fn exhausted_donors_flag_shortfall() {
        let doc = DocumentBuilder::new("h")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .sentence("A knows C.", &[("a", "A"), ("c", "C")])
            .sentence("C admires B.", &[("c", "C"), ("b", "B")])
            .sentence("E hired F.", &[("e", "E"), ("f", "F")])
            .build();
        let g = build_entity_graph(&doc);
        let inst = extract_positive_instances(&doc, &g, &ExtractorConfig::default()).remove(0);
        assert_eq!(inst.context, [1, 2]);
        let negs = make_negative_contexts(&inst, &doc, &DonorPool::default(), &NegativeConfig::default(), &mut rng(2)).unwrap();
        assert_eq!(negs.items.len(), 3);

        // Only s2 and s3 can stand in for s1.
        let mut one = inst.clone();
        one.context = vec![1];
        one.path.hops = vec![crate::metapath::Hop::Sentence(1), crate::metapath::Hop::Kg("x".into())];
        let negs = make_negative_contexts(&one, &doc, &DonorPool::default(), &NegativeConfig::default(), &mut rng(2)).unwrap();
        assert_eq!(negs.items.len(), 2);
        assert!(negs.shortfall());
    }

    #[test]
    fn seeded_reproducibility() {
        let (d, inst) = worked();
        let cfg = NegativeConfig::default();
        let a = make_negative_options(&inst, &d, &DonorPool::default(), &cfg, &mut rng(11)).unwrap();
        let b = make_negative_options(&inst, &d, &DonorPool::default(), &cfg, &mut rng(11)).unwrap();
        assert_eq!(a, b);
    }
}
