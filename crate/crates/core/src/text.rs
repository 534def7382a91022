//! Entity-annotated text and span-preserving entity rewriting.
//!
//! All offsets are character offsets (Unicode scalar values), half-open.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entity mention inside an [`AnnotatedText`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub entity: String,
    pub start: usize,
    pub end: usize,
}

/// A sentence together with the entity mentions it carries.
///
/// Mentions are kept sorted by start offset and never overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedText {
    pub text: String,
    pub mentions: Vec<Span>,
}

/// Byte offset of every char boundary, including the end of the string.
pub(crate) fn char_boundaries(text: &str) -> Vec<usize> {
    let mut out: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    out.push(text.len());
    out
}

impl AnnotatedText {
    /// Builds an annotated text, sorting mentions and rejecting overlaps or
    /// out-of-range spans.
    pub fn new(text: impl Into<String>, mut mentions: Vec<Span>) -> Result<Self> {
        let text = text.into();
        let len = text.chars().count();
        mentions.sort_by(|a, b| (a.start, a.end).cmp(&(b.start, b.end)));
        let mut prev_end = 0;
        for (i, m) in mentions.iter().enumerate() {
            if m.start >= m.end || m.end > len {
                return Err(Error::Config(format!(
                    "mention of `{}` has invalid span [{}, {}) for text of {} chars",
                    m.entity, m.start, m.end, len
                )));
            }
            if i > 0 && m.start < prev_end {
                return Err(Error::OverlappingMentions(m.start));
            }
            prev_end = m.end;
        }
        Ok(Self { text, mentions })
    }

    pub fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            mentions: Vec::new(),
        }
    }

    /// The text covered by a mention.
    pub fn surface(&self, span: &Span) -> &str {
        let b = char_boundaries(&self.text);
        &self.text[b[span.start]..b[span.end]]
    }

    pub fn mentions_entity(&self, id: &str) -> bool {
        self.mentions.iter().any(|m| m.entity == id)
    }

    pub fn entity_ids(&self) -> BTreeSet<&str> {
        self.mentions.iter().map(|m| m.entity.as_str()).collect()
    }

    /// The pieces of text outside every mention, in order. Two texts whose
    /// outside segments agree differ only inside mention spans.
    pub fn outside_segments(&self) -> Vec<&str> {
        let b = char_boundaries(&self.text);
        let mut out = Vec::with_capacity(self.mentions.len() + 1);
        let mut cursor = 0;
        for m in &self.mentions {
            out.push(&self.text[b[cursor]..b[m.start]]);
            cursor = m.end;
        }
        out.push(&self.text[b[cursor]..]);
        out
    }

    /// Rewrites every mention for which `map` yields `(new_id, new_surface)`.
    ///
    /// Replacement is simultaneous, so chains and swaps (`a -> b`, `b -> a`)
    /// behave as expected. Text outside mentions is copied unchanged and spans
    /// are recomputed.
    pub fn rewrite<'m, F>(&self, map: F) -> AnnotatedText
    where
        F: Fn(&str) -> Option<(&'m str, &'m str)>,
    {
        let b = char_boundaries(&self.text);
        let mut text = String::with_capacity(self.text.len() + 16);
        let mut mentions = Vec::with_capacity(self.mentions.len());
        let mut cursor = 0;
        let mut out_chars = 0;
        for m in &self.mentions {
            let between = &self.text[b[cursor]..b[m.start]];
            text.push_str(between);
            out_chars += m.start - cursor;
            let (entity, surface) = match map(&m.entity) {
                Some((id, surface)) => (id.to_string(), surface),
                None => (m.entity.clone(), &self.text[b[m.start]..b[m.end]]),
            };
            let n = surface.chars().count();
            text.push_str(surface);
            mentions.push(Span {
                entity,
                start: out_chars,
                end: out_chars + n,
            });
            out_chars += n;
            cursor = m.end;
        }
        text.push_str(&self.text[b[cursor]..]);
        AnnotatedText { text, mentions }
    }
}
