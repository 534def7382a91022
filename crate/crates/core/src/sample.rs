//! A positive instance with its texts and negatives materialized.
//!
//! This is the unit that counterfactual augmentation rewrites and the
//! emitter turns into contrastive instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::metapath::{MetaPath, PositiveInstance};
use crate::negatives::{
    make_negative_contexts, make_negative_options, ContextNegatives, DonorPool, NegativeConfig, OptionNegatives,
};
use crate::seed;
use crate::text::AnnotatedText;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub id: String,
    pub surface: String,
}

/// Original entity id -> alien replacement.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementMap {
    pub entries: BTreeMap<String, Replacement>,
    /// Documents the replacement entities were taken from.
    pub source: Vec<String>,
}

impl ReplacementMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Original id -> replacement id.
    pub fn ids(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.id.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub doc: String,
    pub pair: (String, String),
    pub path: MetaPath,
    /// Document indices of the context sentences, ascending.
    pub context_sentences: Vec<usize>,
    pub context: Vec<AnnotatedText>,
    pub answer_sentence: usize,
    pub answer: AnnotatedText,
    pub options: OptionNegatives,
    pub contexts: ContextNegatives,
    pub counterfactual: bool,
    pub replacements: ReplacementMap,
    /// 0 for the original, `n` for the n-th counterfactual copy.
    pub copy: usize,
}

impl Sample {
    pub fn key(&self) -> String {
        format!(
            "{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}",
            self.doc, self.pair.0, self.pair.1, self.answer_sentence, self.copy
        )
    }

    /// Every text of the sample: context, answer, option negatives and
    /// context-variant sentences.
    pub fn texts(&self) -> impl Iterator<Item = &AnnotatedText> {
        self.context
            .iter()
            .chain(std::iter::once(&self.answer))
            .chain(self.options.items.iter().map(|n| &n.text))
            .chain(self.contexts.items.iter().map(|v| &v.sentence.text))
    }
}

/// Materializes `inst` against its document and draws both negative sets.
/// Each orientation gets its own random stream keyed by the instance, so
/// results do not depend on processing order.
pub fn build_sample(
    inst: &PositiveInstance,
    doc: &Document,
    pool: &DonorPool,
    cfg: &NegativeConfig,
    root_seed: u64,
) -> Result<Sample> {
    if inst.doc != doc.id {
        return Err(Error::Config(format!(
            "instance for `{}` paired with document `{}`",
            inst.doc, doc.id
        )));
    }
    let key = inst.key();
    let options = make_negative_options(inst, doc, pool, cfg, &mut seed::rng_for(root_seed, &["options", &key]))?;
    let contexts = make_negative_contexts(inst, doc, pool, cfg, &mut seed::rng_for(root_seed, &["contexts", &key]))?;
    let context = inst
        .context
        .iter()
        .map(|&k| doc.annotated(k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        doc: inst.doc.clone(),
        pair: inst.pair.clone(),
        path: inst.path.clone(),
        context_sentences: inst.context.clone(),
        context,
        answer_sentence: inst.answer,
        answer: doc.annotated(inst.answer)?,
        options,
        contexts,
        counterfactual: false,
        replacements: ReplacementMap::default(),
        copy: 0,
    })
}
