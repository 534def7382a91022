//! Meta-path guided positive instance extraction.
//!
//! For an ordered entity pair `(e_i, e_j)` the answer candidates are the
//! sentences mentioning both. A depth-first search then looks for a simple
//! path `e_i -> ... -> e_j` over the entity graph using only the remaining
//! sentences, where every intra-sentence hop consumes the sentence that
//! supports it. The consumed sentences form the context.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Violation};
use crate::graph::EntityGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExtractMode {
    /// Stop at the first pair that yields a path (one instance group per
    /// document).
    #[default]
    First,
    /// Try every pair.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Maximum number of entities on a path, endpoints included.
    pub max_hops: usize,
    pub mode: ExtractMode,
    /// Full backtracking search. When false, the search commits to the first
    /// admissible neighbor at every step and never revisits the choice.
    pub backtracking: bool,
    /// Reject paths that consume no sentence.
    pub require_context: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            max_hops: 4,
            mode: ExtractMode::First,
            backtracking: true,
            require_context: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hop {
    /// Intra-sentence hop supported by this sentence.
    Sentence(usize),
    /// Knowledge-graph hop with this relation label.
    Kg(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPath {
    pub entities: Vec<String>,
    /// `hops[k]` connects `entities[k]` and `entities[k + 1]`.
    pub hops: Vec<Hop>,
}

impl MetaPath {
    pub fn sentence_hops(&self) -> impl Iterator<Item = (usize, &str, &str)> + '_ {
        self.hops.iter().enumerate().filter_map(|(k, h)| match h {
            Hop::Sentence(s) => Some((*s, self.entities[k].as_str(), self.entities[k + 1].as_str())),
            Hop::Kg(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveInstance {
    pub doc: String,
    pub pair: (String, String),
    pub path: MetaPath,
    /// Context sentence indices, ascending.
    pub context: Vec<usize>,
    /// The answer sentence of this instance.
    pub answer: usize,
    /// Every answer candidate for the pair (contains `answer`).
    pub answers: BTreeSet<usize>,
}

impl PositiveInstance {
    /// Stable key used to derive per-instance random streams.
    pub fn key(&self) -> String {
        format!("{}\u{1f}{}\u{1f}{}\u{1f}{}", self.doc, self.pair.0, self.pair.1, self.answer)
    }
}

/// Sentences mentioning both entities of the pair.
pub fn collect_answer_candidates(
    doc: &Document,
    pair: (&str, &str),
) -> crate::Result<BTreeSet<usize>> {
    let a = doc
        .entity(pair.0)
        .ok_or_else(|| crate::Error::UnknownEntity(pair.0.into()))?;
    let b = doc
        .entity(pair.1)
        .ok_or_else(|| crate::Error::UnknownEntity(pair.1.into()))?;
    let sa: BTreeSet<usize> = a.mentions.iter().map(|m| m.sentence).collect();
    Ok(b.mentions
        .iter()
        .map(|m| m.sentence)
        .filter(|s| sa.contains(s))
        .collect())
}

struct Search<'a> {
    graph: &'a EntityGraph,
    available: &'a [bool],
    cfg: &'a ExtractorConfig,
    goal: usize,
    used: Vec<bool>,
    visited: Vec<bool>,
    path: Vec<usize>,
    hops: Vec<Hop>,
    consumed: usize,
}

impl<'a> Search<'a> {
    fn new(graph: &'a EntityGraph, available: &'a [bool], cfg: &'a ExtractorConfig, goal: usize) -> Self {
        Self {
            graph,
            available,
            cfg,
            goal,
            used: vec![false; available.len()],
            visited: vec![false; graph.nodes().len()],
            path: Vec::with_capacity(cfg.max_hops),
            hops: Vec::with_capacity(cfg.max_hops),
            consumed: 0,
        }
    }

    fn run(&mut self, start: usize) -> bool {
        if start == self.goal || self.cfg.max_hops < 2 {
            return false;
        }
        self.visited[start] = true;
        self.path.push(start);
        self.step(start)
    }

    fn step(&mut self, node: usize) -> bool {
        if node == self.goal {
            return !self.cfg.require_context || self.consumed > 0;
        }
        if self.path.len() >= self.cfg.max_hops {
            return false;
        }
        let graph = self.graph;
        for &next in graph.adjacent(node) {
            if self.visited[next] {
                continue;
            }
            let Some(edges) = graph.pair(node, next) else {
                continue;
            };
            // Lowest supporting sentence first, then the KG edge.
            for &s in &edges.sentences {
                if !self.available[s] || self.used[s] {
                    continue;
                }
                self.used[s] = true;
                self.consumed += 1;
                if self.descend(next, Hop::Sentence(s)) {
                    return true;
                }
                self.used[s] = false;
                self.consumed -= 1;
                if !self.cfg.backtracking {
                    return false;
                }
            }
            if let Some(label) = edges.relations.iter().next() {
                if self.descend(next, Hop::Kg(label.clone())) {
                    return true;
                }
                if !self.cfg.backtracking {
                    return false;
                }
            }
        }
        false
    }

    fn descend(&mut self, next: usize, hop: Hop) -> bool {
        self.visited[next] = true;
        self.path.push(next);
        self.hops.push(hop);
        if self.step(next) {
            return true;
        }
        self.visited[next] = false;
        self.path.pop();
        self.hops.pop();
        false
    }

    fn into_result(self) -> (MetaPath, BTreeSet<usize>) {
        let entities = self.path.iter().map(|&i| self.graph.nodes()[i].clone()).collect();
        let context = self
            .hops
            .iter()
            .filter_map(|h| match h {
                Hop::Sentence(s) => Some(*s),
                Hop::Kg(_) => None,
            })
            .collect();
        (
            MetaPath {
                entities,
                hops: self.hops,
            },
            context,
        )
    }
}

fn search(
    graph: &EntityGraph,
    available: &[bool],
    start: usize,
    goal: usize,
    cfg: &ExtractorConfig,
) -> Option<(MetaPath, BTreeSet<usize>)> {
    let mut s = Search::new(graph, available, cfg, goal);
    if s.run(start) {
        Some(s.into_result())
    } else {
        None
    }
}

/// Searches for a meta-path from `start` to `goal` whose intra-sentence hops
/// consume distinct sentences from `available`. Returns the path and the set
/// of consumed sentences.
pub fn dfs_metapath(
    graph: &EntityGraph,
    doc: &Document,
    available: &BTreeSet<usize>,
    start: &str,
    goal: &str,
    cfg: &ExtractorConfig,
) -> Option<(MetaPath, BTreeSet<usize>)> {
    let (s, g) = (graph.node_index(start)?, graph.node_index(goal)?);
    let mut mask = vec![false; doc.sentences.len()];
    for &k in available {
        if let Some(m) = mask.get_mut(k) {
            *m = true;
        }
    }
    search(graph, &mask, s, g, cfg)
}

/// Runs the extraction over every ordered entity pair (lexicographic by id)
/// and emits one instance per answer candidate of each successful pair.
pub fn extract_positive_instances(
    doc: &Document,
    graph: &EntityGraph,
    cfg: &ExtractorConfig,
) -> Vec<PositiveInstance> {
    let n = doc.entities.len();
    let sentence_sets: Vec<Vec<bool>> = doc
        .entities
        .iter()
        .map(|e| {
            let mut v = vec![false; doc.sentences.len()];
            for m in &e.mentions {
                v[m.sentence] = true;
            }
            v
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| doc.entities[a].id.cmp(&doc.entities[b].id));

    let mut out = Vec::new();
    let mut available = vec![false; doc.sentences.len()];
    for &a in &order {
        for &b in &order {
            if a == b {
                continue;
            }
            let mut answers = BTreeSet::new();
            for (k, slot) in available.iter_mut().enumerate() {
                let both = sentence_sets[a][k] && sentence_sets[b][k];
                if both {
                    answers.insert(k);
                }
                *slot = !both;
            }
            if answers.is_empty() {
                continue;
            }
            let Some((path, context)) = search(graph, &available, a, b, cfg) else {
                continue;
            };
            let context: Vec<usize> = context.into_iter().collect();
            let pair = (doc.entities[a].id.clone(), doc.entities[b].id.clone());
            for &answer in &answers {
                out.push(PositiveInstance {
                    doc: doc.id.clone(),
                    pair: pair.clone(),
                    path: path.clone(),
                    context: context.clone(),
                    answer,
                    answers: answers.clone(),
                });
            }
            if cfg.mode == ExtractMode::First {
                return out;
            }
        }
    }
    out
}

/// Checks an instance against its document and graph. Empty means valid.
pub fn validate_instance(inst: &PositiveInstance, doc: &Document, graph: &EntityGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: &str, message: String| {
        out.push(Violation {
            path: path.to_string(),
            message,
        })
    };

    if inst.doc != doc.id {
        push("doc", format!("instance is for `{}`, document is `{}`", inst.doc, doc.id));
    }
    let ents = &inst.path.entities;
    if ents.len() < 2 {
        push("path.entities", "path has fewer than two entities".into());
    }
    let distinct: BTreeSet<&String> = ents.iter().collect();
    if distinct.len() != ents.len() {
        push("path.entities", "entity repeats on path".into());
    }
    if ents.first() != Some(&inst.pair.0) || ents.last() != Some(&inst.pair.1) {
        push("path.entities", "path endpoints differ from target pair".into());
    }
    if inst.path.hops.len() + 1 != ents.len() {
        push(
            "path.hops",
            format!("{} hops for {} entities", inst.path.hops.len(), ents.len()),
        );
    }

    let mut hop_sentences = Vec::new();
    for (k, hop) in inst.path.hops.iter().enumerate() {
        let (Some(a), Some(b)) = (ents.get(k), ents.get(k + 1)) else {
            break;
        };
        let at = format!("path.hops[{k}]");
        let edge = match (graph.node_index(a), graph.node_index(b)) {
            (Some(x), Some(y)) => graph.pair(x, y),
            _ => None,
        };
        let Some(edge) = edge else {
            push(&at, format!("missing edge between `{a}` and `{b}`"));
            continue;
        };
        match hop {
            Hop::Sentence(s) => {
                if !edge.sentences.contains(s) {
                    push(&at, format!("missing edge: sentence {s} does not mention both `{a}` and `{b}`"));
                }
                hop_sentences.push(*s);
            }
            Hop::Kg(label) => {
                if !edge.relations.contains(label) {
                    push(&at, format!("missing edge: no `{label}` relation between `{a}` and `{b}`"));
                }
            }
        }
    }
    let hop_set: BTreeSet<usize> = hop_sentences.iter().copied().collect();
    if hop_set.len() != hop_sentences.len() {
        push("path.hops", "a sentence supports more than one hop".into());
    }

    if inst.answers.is_empty() {
        push("answers", "no answer candidates".into());
    }
    if !inst.answers.contains(&inst.answer) {
        push("answer", format!("answer {} not among candidates", inst.answer));
    }
    for &a in &inst.answers {
        match doc.sentence_entities(a) {
            Ok(set) if set.contains(inst.pair.0.as_str()) && set.contains(inst.pair.1.as_str()) => {}
            Ok(_) => push("answers", format!("sentence {a} does not mention both target entities")),
            Err(e) => push("answers", e.to_string()),
        }
    }

    let context: BTreeSet<usize> = inst.context.iter().copied().collect();
    if context.len() != inst.context.len() || !inst.context.windows(2).all(|w| w[0] < w[1]) {
        push("context", "context is not an ascending set".into());
    }
    if context.iter().any(|s| inst.answers.contains(s)) {
        push("context", "answers overlap context".into());
    }
    if context != hop_set {
        push("context", "context differs from the sentences consumed by the path".into());
    }
    if context.is_empty() {
        push("context", "empty context".into());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{mirrormask, DocumentBuilder};
    use crate::graph::build_entity_graph;

    fn all() -> ExtractorConfig {
        ExtractorConfig {
            mode: ExtractMode::All,
            ..Default::default()
        }
    }

    #[test]
    fn answer_candidates() {
        let d = mirrormask();
        assert_eq!(collect_answer_candidates(&d, ("e1", "e5")).unwrap(), BTreeSet::from([3]));
        assert!(collect_answer_candidates(&d, ("e3", "e4")).unwrap().is_empty());
        assert!(collect_answer_candidates(&d, ("e1", "nope")).is_err());
        let d = DocumentBuilder::new("d")
            .sentence("A and B.", &[("a", "A"), ("b", "B")])
            .sentence("B, then A.", &[("b", "B"), ("a", "A")])
            .build();
        assert_eq!(collect_answer_candidates(&d, ("a", "b")).unwrap(), BTreeSet::from([0, 1]));
    }

    #[test]
    fn worked_example_dfs() {
        let d = mirrormask();
        let g = build_entity_graph(&d);
        let available: BTreeSet<usize> = (0..6).filter(|&k| k != 3).collect();
        let (path, ctx) = dfs_metapath(&g, &d, &available, "e1", "e5", &ExtractorConfig::default()).unwrap();
        assert_eq!(path.entities, ["e1", "e7", "e5"]);
        assert_eq!(path.hops, [Hop::Sentence(1), Hop::Sentence(5)]);
        assert_eq!(ctx, BTreeSet::from([1, 5]));
    }

    #[test]
    fn excluded_sentence_blocks_direct_hop() {
        let d = DocumentBuilder::new("d")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .build();
        let g = build_entity_graph(&d);
        let r = dfs_metapath(&g, &d, &BTreeSet::new(), "a", "b", &ExtractorConfig::default());
        assert!(r.is_none());
    }

    #[test]
    fn worked_example_extract() {
        let d = mirrormask();
        let g = build_entity_graph(&d);
        let out = extract_positive_instances(&d, &g, &ExtractorConfig::default());
        assert_eq!(out.len(), 1);
        let inst = &out[0];
        assert_eq!(inst.pair, ("e1".to_string(), "e5".to_string()));
        assert_eq!(inst.context, [1, 5]);
        assert_eq!(inst.answer, 3);
        assert_eq!(inst.path.entities.len(), 3);
        assert!(validate_instance(inst, &d, &g).is_empty());

        let everything = extract_positive_instances(&d, &g, &all());
        assert_eq!(everything.len(), 6);
        for i in &everything {
            assert!(validate_instance(i, &d, &g).is_empty(), "{i:?}");
        }
    }

    #[test]
    fn greedy_walk_misses_what_backtracking_finds() {
        // From e7 the lexicographically first neighbor is the dead end e2.
        let d = mirrormask();
        let g = build_entity_graph(&d);
        let greedy = ExtractorConfig {
            backtracking: false,
            ..Default::default()
        };
        let available: BTreeSet<usize> = (0..6).filter(|&k| k != 3).collect();
        assert!(dfs_metapath(&g, &d, &available, "e1", "e5", &greedy).is_none());
        assert!(dfs_metapath(&g, &d, &available, "e1", "e5", &ExtractorConfig::default()).is_some());
    }

    #[test]
    fn backtracks_over_sentence_choice() {
        // Hop a-b is supported by s0 and s1, hop b-c only by s0: the lowest
        // index choice for the first hop must be undone.
        let d = DocumentBuilder::new("d")
            .sentence("A, B and C.", &[("a", "A"), ("b", "B"), ("c", "C")])
            .sentence("A with B.", &[("a", "A"), ("b", "B")])
            .sentence("A near C.", &[("a", "A"), ("c", "C")])
            .build();
        let g = build_entity_graph(&d);
        let available = BTreeSet::from([0, 1]);
        let (path, ctx) = dfs_metapath(&g, &d, &available, "a", "c", &ExtractorConfig::default()).unwrap();
        assert_eq!(path.hops, [Hop::Sentence(1), Hop::Sentence(0)]);
        assert_eq!(ctx, BTreeSet::from([0, 1]));
    }

    #[test]
    fn no_external_path() {
        let d = DocumentBuilder::new("d")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .sentence("C met D.", &[("c", "C"), ("d", "D")])
            .build();
        let g = build_entity_graph(&d);
        assert!(extract_positive_instances(&d, &g, &all()).is_empty());
    }

    #[test]
    fn two_answers_two_instances() {
        let d = DocumentBuilder::new("d")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .sentence("B saw A.", &[("b", "B"), ("a", "A")])
            .sentence("A knows C.", &[("a", "A"), ("c", "C")])
            .sentence("C knows B.", &[("c", "C"), ("b", "B")])
            .build();
        let g = build_entity_graph(&d);
        let out = extract_positive_instances(&d, &g, &ExtractorConfig::default());
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].answer, out[1].answer), (0, 1));
        assert_eq!(out[0].path, out[1].path);
        assert_eq!(out[0].context, out[1].context);
        assert_eq!(out[0].context, [2, 3]);
    }

    #[test]
    fn kg_only_path_rejected_but_allowed_mid_path() {
        let d = DocumentBuilder::new("d")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .sentence("C praised B.", &[("c", "C"), ("b", "B")])
            .entity("a", "A")
            .relation("a", "sibling", "c")
            .build();
        let g = build_entity_graph(&d);
        let available = BTreeSet::from([1]);
        let (path, ctx) = dfs_metapath(&g, &d, &available, "a", "b", &ExtractorConfig::default()).unwrap();
        assert_eq!(path.hops, [Hop::Kg("sibling".into()), Hop::Sentence(1)]);
        assert_eq!(ctx, BTreeSet::from([1]));

        let kg_only = DocumentBuilder::new("k")
            .sentence("A met B.", &[("a", "A"), ("b", "B")])
            .relation("a", "sibling", "b")
            .build();
        let g = build_entity_graph(&kg_only);
        assert!(extract_positive_instances(&kg_only, &g, &all()).is_empty());
        let lax = ExtractorConfig {
            require_context: false,
            ..all()
        };
        let out = extract_positive_instances(&kg_only, &g, &lax);
        assert_eq!(out.len(), 2);
        assert!(out[0].context.is_empty());
    }

    #[test]
    fn max_hops_bounds_path_length() {
        let d = mirrormask();
        let g = build_entity_graph(&d);
        let short = ExtractorConfig {
            max_hops: 2,
            ..all()
        };
        assert!(extract_positive_instances(&d, &g, &short).is_empty());
    }

    #[test]
    fn validate_catches_overlap_and_missing_edge() {
        let d = mirrormask();
        let g = build_entity_graph(&d);
        let good = extract_positive_instances(&d, &g, &ExtractorConfig::default()).remove(0);

        let mut bad = good.clone();
        bad.context = vec![1, 3, 5];
        let v = validate_instance(&bad, &d, &g);
        assert!(v.iter().any(|v| v.message == "answers overlap context"), "{v:?}");

        let mut bad = good.clone();
        bad.path.entities = vec!["e1".into(), "e4".into(), "e5".into()];
        let v = validate_instance(&bad, &d, &g);
        assert!(v.iter().any(|v| v.message.starts_with("missing edge")), "{v:?}");
    }
}
