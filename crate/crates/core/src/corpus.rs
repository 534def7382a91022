//! Corpus data model and the line-delimited JSON corpus reader.
//!
//! One document per line:
//!
//! ```text
//! {"id": str, "sentences": [{"text": str}],
//!  "entities": [{"id": str, "name": str, "mentions": [{"sent": int, "start": int, "end": int}]}],
//!  "relations": [{"head": str, "tail": str, "type": str}]}
//! ```
//!
//! Mention spans are half-open character ranges into the sentence text.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::text::{AnnotatedText, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mention {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    /// Canonical display string (the record's `name`).
    pub surface: String,
    pub mentions: Vec<Mention>,
}

/// A distantly supervised relation triple. The label is opaque metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTriple {
    pub head: String,
    pub tail: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
    pub entities: Vec<Entity>,
    pub relations: Vec<RelationTriple>,
}

/// One broken invariant, located by a field path such as
/// `entities[2].mentions[0]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// A per-line corpus error. Reading continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {path}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub path: String,
    pub message: String,
}

impl Document {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.id == id)
    }

    /// Ids of the entities mentioned at least once in sentence `k`.
    pub fn sentence_entities(&self, k: usize) -> Result<BTreeSet<&str>> {
        if k >= self.sentences.len() {
            return Err(Error::SentenceOutOfBounds {
                index: k,
                len: self.sentences.len(),
            });
        }
        Ok(self
            .entities
            .iter()
            .filter(|e| e.mentions.iter().any(|m| m.sentence == k))
            .map(|e| e.id.as_str())
            .collect())
    }

    /// Per sentence, the indices (into `entities`) of the entities it
    /// mentions, ascending and deduplicated.
    pub fn sentence_entity_table(&self) -> Vec<Vec<usize>> {
        let mut table = vec![Vec::new(); self.sentences.len()];
        for (ei, e) in self.entities.iter().enumerate() {
            for m in &e.mentions {
                if let Some(row) = table.get_mut(m.sentence) {
                    if row.last() != Some(&ei) {
                        row.push(ei);
                    }
                }
            }
        }
        table
    }

    /// Sentence `k` with every entity mention attached.
    pub fn annotated(&self, k: usize) -> Result<AnnotatedText> {
        let sentence = self.sentences.get(k).ok_or(Error::SentenceOutOfBounds {
            index: k,
            len: self.sentences.len(),
        })?;
        let spans = self
            .entities
            .iter()
            .flat_map(|e| {
                e.mentions
                    .iter()
                    .filter(move |m| m.sentence == k)
                    .map(move |m| Span {
                        entity: e.id.clone(),
                        start: m.start,
                        end: m.end,
                    })
            })
            .collect();
        AnnotatedText::new(sentence.text.clone(), spans)
    }

    pub fn from_record(record: DocumentRecord) -> Self {
        Self {
            id: record.id,
            sentences: record
                .sentences
                .into_iter()
                .enumerate()
                .map(|(index, s)| Sentence { index, text: s.text })
                .collect(),
            entities: record
                .entities
                .into_iter()
                .map(|e| Entity {
                    id: e.id,
                    surface: e.name,
                    mentions: e
                        .mentions
                        .into_iter()
                        .map(|m| Mention {
                            sentence: m.sent,
                            start: m.start,
                            end: m.end,
                        })
                        .collect(),
                })
                .collect(),
            relations: record
                .relations
                .into_iter()
                .map(|r| RelationTriple {
                    head: r.head,
                    tail: r.tail,
                    relation: r.kind,
                })
                .collect(),
        }
    }

    pub fn to_record(&self) -> DocumentRecord {
        DocumentRecord {
            id: self.id.clone(),
            sentences: self
                .sentences
                .iter()
                .map(|s| SentenceRecord {
                    text: s.text.clone(),
                })
                .collect(),
            entities: self
                .entities
                .iter()
                .map(|e| EntityRecord {
                    id: e.id.clone(),
                    name: e.surface.clone(),
                    mentions: e
                        .mentions
                        .iter()
                        .map(|m| MentionRecord {
                            sent: m.sentence,
                            start: m.start,
                            end: m.end,
                        })
                        .collect(),
                })
                .collect(),
            relations: self
                .relations
                .iter()
                .map(|r| RelationRecord {
                    head: r.head.clone(),
                    tail: r.tail.clone(),
                    kind: r.relation.clone(),
                })
                .collect(),
        }
    }
}

/// Checks every document invariant. An empty list means the document is
/// well formed.
pub fn validate_document(doc: &Document) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, message: String| out.push(Violation { path, message });

    let lengths: Vec<usize> = doc.sentences.iter().map(|s| s.text.chars().count()).collect();
    for (pos, s) in doc.sentences.iter().enumerate() {
        if s.index != pos {
            push(
                format!("sentences[{pos}]"),
                format!("index {} does not match position {pos}", s.index),
            );
        }
    }

    let mut seen = HashSet::new();
    // (sentence, start, end, entity position, mention position)
    let mut spans: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
    for (ei, e) in doc.entities.iter().enumerate() {
        if !seen.insert(e.id.as_str()) {
            push(format!("entities[{ei}].id"), format!("duplicate entity id `{}`", e.id));
        }
        if e.surface.is_empty() {
            push(format!("entities[{ei}].name"), format!("entity `{}` has an empty name", e.id));
        }
        if e.mentions.is_empty() {
            push(format!("entities[{ei}].mentions"), format!("entity `{}` has no mentions", e.id));
        }
        for (mi, m) in e.mentions.iter().enumerate() {
            let path = format!("entities[{ei}].mentions[{mi}]");
            let Some(&len) = lengths.get(m.sentence) else {
                push(
                    path,
                    format!(
                        "mention of `{}` refers to sentence {} but the document has {}",
                        e.id,
                        m.sentence,
                        lengths.len()
                    ),
                );
                continue;
            };
            if m.start >= m.end || m.end > len {
                push(
                    path,
                    format!(
                        "mention of `{}` has span [{}, {}) outside sentence {} of {} chars",
                        e.id, m.start, m.end, m.sentence, len
                    ),
                );
                continue;
            }
            spans.push((m.sentence, m.start, m.end, ei, mi));
        }
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.0 == b.0 && b.1 < a.2 {
            push(
                format!("entities[{}].mentions[{}]", b.3, b.4),
                format!(
                    "mention of `{}` overlaps mention of `{}` in sentence {}",
                    doc.entities[b.3].id, doc.entities[a.3].id, b.0
                ),
            );
        }
    }

    for (ri, r) in doc.relations.iter().enumerate() {
        if !seen.contains(r.head.as_str()) {
            push(format!("relations[{ri}].head"), format!("unknown entity `{}`", r.head));
        }
        if !seen.contains(r.tail.as_str()) {
            push(format!("relations[{ri}].tail"), format!("unknown entity `{}`", r.tail));
        }
        if r.head == r.tail {
            push(format!("relations[{ri}]"), format!("self relation on `{}`", r.head));
        }
    }
    out
}

/// Wire form of a corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub sentences: Vec<SentenceRecord>,
    pub entities: Vec<EntityRecord>,
    pub relations: Vec<RelationRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub name: String,
    pub mentions: Vec<MentionRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub sent: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub head: String,
    pub tail: String,
    #[serde(rename = "type")]
    pub kind: String,
}

/// Parses a single corpus line (1-based `line` is used for error reporting).
pub fn parse_line(line: usize, raw: &str) -> Result<Document, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    let record: DocumentRecord = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ParseError {
            line,
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    let doc = Document::from_record(record);
    if let Some(v) = validate_document(&doc).into_iter().next() {
        return Err(ParseError {
            line,
            path: v.path,
            message: v.message,
        });
    }
    Ok(doc)
}

/// Lazily parses a line-delimited corpus. Blank lines are skipped; malformed
/// lines yield an `Err` and reading continues with the next line.
pub fn parse_corpus<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Document, ParseError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(parse_line(i + 1, &l)),
            Err(e) => Some(Err(ParseError {
                line: i + 1,
                path: String::new(),
                message: e.to_string(),
            })),
        })
}

/// Writes one document as a corpus line.
pub fn write_document<W: Write>(mut w: W, doc: &Document) -> io::Result<()> {
    serde_json::to_writer(&mut w, &doc.to_record())?;
    w.write_all(b"\n")
}
