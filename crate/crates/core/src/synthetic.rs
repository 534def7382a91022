//! Seeded synthetic corpora: relation-triangle documents with a known
//! consistency rule, random micro-documents, and bulk documents for load
//! testing.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::corpus::{Document, Entity, Mention, RelationTriple, Sentence};
use crate::seed::{self, Rng};

/// Relation words of the triangle corpus.
pub const RELATIONS: [&str; 9] = [
    "advised", "befriended", "challenged", "defended", "employed", "funded", "greeted", "hosted", "interviewed",
];

const FIRST: [&str; 24] = [
    "Ada", "Bruno", "Celia", "Dmitri", "Elif", "Farah", "Goran", "Hana", "Ivo", "Jana", "Kemal", "Lena", "Milo",
    "Nadia", "Oskar", "Petra", "Quinn", "Rosa", "Samir", "Tilda", "Umar", "Vera", "Wim", "Yara",
];

const LAST: [&str; 20] = [
    "Abbott", "Berg", "Castro", "Dahl", "Eriksen", "Fontaine", "Garcia", "Holm", "Ibsen", "Jaeger", "Kovac", "Lind",
    "Moreau", "Novak", "Olsen", "Petrov", "Quist", "Rossi", "Sato", "Varga",
];

/// The twelve lines of the affine plane of order 3 over `RELATIONS`
/// (point `i` is `(i / 3, i % 3)`): every pair of relations lies on exactly
/// one line, so two relations of a triangle determine the third.
pub fn consistent_triples() -> Vec<[usize; 3]> {
    let pt = |x: usize, y: usize| (x % 3) * 3 + y % 3;
    let mut lines = BTreeSet::new();
    for p in 0..9 {
        let (x, y) = (p / 3, p % 3);
        for (dx, dy) in [(1, 0), (0, 1), (1, 1), (1, 2)] {
            let mut l = [p, pt(x + dx, y + dy), pt(x + 2 * dx, y + 2 * dy)];
            l.sort_unstable();
            lines.insert(l);
        }
    }
    lines.into_iter().collect()
}

/// The relation completing `a` and `b` to a consistent triangle.
pub fn third_relation(a: usize, b: usize) -> Option<usize> {
    consistent_triples()
        .into_iter()
        .find(|t| a != b && t.contains(&a) && t.contains(&b))
        .and_then(|t| t.into_iter().find(|&r| r != a && r != b))
}

/// Assembles sentences of the form `A verb B.` from entity indices.
struct Writer {
    doc: Document,
}

impl Writer {
    fn new(id: String, names: Vec<String>) -> Self {
        let entities = names
            .into_iter()
            .enumerate()
            .map(|(i, surface)| Entity {
                id: format!("{id}:e{i}"),
                surface,
                mentions: Vec::new(),
            })
            .collect();
        Self {
            doc: Document {
                id,
                sentences: Vec::new(),
                entities,
                relations: Vec::new(),
            },
        }
    }

    /// Pieces alternate between literal text and entity indices.
    fn sentence(&mut self, pieces: &[Piece]) {
        let index = self.doc.sentences.len();
        let mut text = String::new();
        let mut chars = 0;
        for p in pieces {
            match p {
                Piece::Text(t) => {
                    text.push_str(t);
                    chars += t.chars().count();
                }
                Piece::Entity(e) => {
                    let ent = &mut self.doc.entities[*e];
                    let n = ent.surface.chars().count();
                    ent.mentions.push(Mention {
                        sentence: index,
                        start: chars,
                        end: chars + n,
                    });
                    text.push_str(&ent.surface);
                    chars += n;
                }
            }
        }
        self.doc.sentences.push(Sentence { index, text });
    }

    fn finish(mut self) -> Document {
        self.doc.entities.retain(|e| !e.mentions.is_empty());
        self.doc
    }
}

enum Piece<'a> {
    Text(&'a str),
    Entity(usize),
}

fn full_names(rng: &mut Rng, n: usize) -> Vec<String> {
    let mut out = BTreeSet::new();
    let mut names = Vec::with_capacity(n);
    while names.len() < n {
        let name = format!("{} {}", FIRST.choose(rng).unwrap(), LAST.choose(rng).unwrap());
        if out.insert(name.clone()) {
            names.push(name);
        }
    }
    names
}

fn triangle_sentence(w: &mut Writer, a: usize, rel: &str, b: usize) {
    let verb = format!(" {rel} ");
    w.sentence(&[Piece::Entity(a), Piece::Text(&verb), Piece::Entity(b), Piece::Text(".")]);
}

/// One triangle document: `X r1 Y.`, `Y r2 Z.`, `X r3 Z.` with
/// `{r1, r2, r3}` a consistent triple, shuffled among `distractors`
/// sentences over fresh entity pairs whose relations differ from each other
/// and from all three triangle relations.
pub fn triangle_document(id: &str, distractors: usize, rng: &mut Rng) -> Document {
    let triples = consistent_triples();
    let mut t = *triples.choose(rng).unwrap();
    t.shuffle(rng);
    let mut others: Vec<usize> = (0..RELATIONS.len()).filter(|r| !t.contains(r)).collect();
    others.shuffle(rng);
    let distractors = distractors.min(others.len());

    let names: Vec<String> = rand::seq::index::sample(rng, FIRST.len(), 3 + 2 * distractors)
        .into_iter()
        .map(|i| FIRST[i].to_string())
        .collect();
    let mut w = Writer::new(id.to_string(), names);
    let mut plan: Vec<(usize, usize, usize)> = vec![(0, t[0], 1), (1, t[1], 2), (0, t[2], 2)];
    for (k, &r) in others.iter().take(distractors).enumerate() {
        plan.push((3 + 2 * k, r, 4 + 2 * k));
    }
    plan.shuffle(rng);
    for (a, r, b) in plan {
        triangle_sentence(&mut w, a, RELATIONS[r], b);
    }
    w.finish()
}

/// `n` triangle documents with ids `{prefix}{i}`.
pub fn triangle_corpus(prefix: &str, n: usize, distractors: usize, seed: u64) -> Vec<Document> {
    (0..n)
        .map(|i| {
            let id = format!("{prefix}{i}");
            triangle_document(&id, distractors, &mut seed::rng_for(seed, &["triangle", &id]))
        })
        .collect()
}

/// Bounds for random micro-documents.
#[derive(Debug, Clone, Copy)]
pub struct MicroBounds {
    pub max_entities: usize,
    pub max_sentences: usize,
    pub max_edges: usize,
}

impl Default for MicroBounds {
    fn default() -> Self {
        Self {
            max_entities: 8,
            max_sentences: 10,
            max_edges: 12,
        }
    }
}

/// A small random document: each sentence mentions zero to three distinct
/// entities; a few knowledge-graph triples are added. Redrawn until the
/// entity graph has at most `max_edges` edges.
pub fn micro_document(id: &str, bounds: MicroBounds, rng: &mut Rng) -> Document {
    loop {
        let n_ent = rng.random_range(2..=bounds.max_entities);
        let n_sent = rng.random_range(1..=bounds.max_sentences);
        let names: Vec<String> = (0..n_ent).map(|i| format!("E{i}")).collect();
        let mut w = Writer::new(id.to_string(), names);
        for _ in 0..n_sent {
            let k = rng.random_range(0..=3.min(n_ent));
            let picked: Vec<usize> = rand::seq::index::sample(rng, n_ent, k).into_vec();
            let mut pieces = vec![Piece::Text("S:")];
            for &e in &picked {
                pieces.push(Piece::Text(" "));
                pieces.push(Piece::Entity(e));
            }
            pieces.push(Piece::Text("."));
            w.sentence(&pieces);
        }
        let mut doc = w.finish();
        let ids: Vec<String> = doc.entities.iter().map(|e| e.id.clone()).collect();
        if ids.len() >= 2 {
            for _ in 0..rng.random_range(0..=3) {
                let h = ids.choose(rng).unwrap().clone();
                let t = ids.choose(rng).unwrap().clone();
                if h != t {
                    doc.relations.push(RelationTriple {
                        head: h,
                        tail: t,
                        relation: ["spouse", "member of", "located in"].choose(rng).unwrap().to_string(),
                    });
                }
            }
        }
        if crate::graph::build_entity_graph(&doc).edge_count() <= bounds.max_edges {
            return doc;
        }
    }
}

const VERBS: [&str; 12] = [
    "met", "praised", "visited", "hired", "sued", "thanked", "followed", "called", "joined", "replaced", "trained",
    "paid",
];

/// Bulk documents: `sentences` sentences over `entities` entities, two or
/// three mentions per sentence, and three knowledge-graph triples.
pub fn bulk_document(id: &str, sentences: usize, entities: usize, rng: &mut Rng) -> Document {
    let names = full_names(rng, entities);
    let mut w = Writer::new(id.to_string(), names);
    for _ in 0..sentences {
        let k = rng.random_range(2..=3).min(entities);
        let picked = rand::seq::index::sample(rng, entities, k).into_vec();
        let verb = format!(" {} ", VERBS.choose(rng).unwrap());
        let mut pieces = vec![Piece::Entity(picked[0]), Piece::Text(&verb), Piece::Entity(picked[1])];
        if k == 3 {
            pieces.push(Piece::Text(" with "));
            pieces.push(Piece::Entity(picked[2]));
        }
        pieces.push(Piece::Text("."));
        w.sentence(&pieces);
    }
    let mut doc = w.finish();
    let ids: Vec<String> = doc.entities.iter().map(|e| e.id.clone()).collect();
    for _ in 0..3 {
        if ids.len() < 2 {
            break;
        }
        let pair = rand::seq::index::sample(rng, ids.len(), 2).into_vec();
        doc.relations.push(RelationTriple {
            head: ids[pair[0]].clone(),
            tail: ids[pair[1]].clone(),
            relation: "associate".into(),
        });
    }
    doc
}

pub fn bulk_corpus(n: usize, sentences: usize, entities: usize, seed: u64) -> Vec<Document> {
    (0..n)
        .map(|i| {
            let id = format!("bulk{i}");
            bulk_document(&id, sentences, entities, &mut seed::rng_for(seed, &["bulk", &id]))
        })
        .collect()
}
