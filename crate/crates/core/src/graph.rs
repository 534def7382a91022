//! Per-document entity graph: knowledge-graph relations plus intra-sentence
//! co-occurrence edges, stored on unordered entity pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    KgRelation(String),
    /// Co-mention in the listed sentences (never empty).
    IntraSentence(BTreeSet<usize>),
}

/// Everything known about one unordered entity pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairEdges {
    pub relations: BTreeSet<String>,
    pub sentences: BTreeSet<usize>,
}

impl PairEdges {
    pub fn kinds(&self) -> Vec<EdgeKind> {
        let mut out: Vec<EdgeKind> = self
            .relations
            .iter()
            .map(|r| EdgeKind::KgRelation(r.clone()))
            .collect();
        if !self.sentences.is_empty() {
            out.push(EdgeKind::IntraSentence(self.sentences.clone()));
        }
        out
    }

    pub fn has_kg(&self) -> bool {
        !self.relations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    edges: BTreeMap<(usize, usize), PairEdges>,
    adjacency: Vec<Vec<usize>>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Builds the entity graph of a validated document.
///
/// Node `i` is `doc.entities[i]`. Two entities get an intra-sentence edge for
/// every sentence mentioning both; each relation triple adds its label to the
/// pair's KG set.
pub fn build_entity_graph(doc: &Document) -> EntityGraph {
    let nodes: Vec<String> = doc.entities.iter().map(|e| e.id.clone()).collect();
    let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    let mut edges: BTreeMap<(usize, usize), PairEdges> = BTreeMap::new();

    for (k, ents) in doc.sentence_entity_table().iter().enumerate() {
        for (x, &a) in ents.iter().enumerate() {
            for &b in &ents[x + 1..] {
                edges.entry(key(a, b)).or_default().sentences.insert(k);
            }
        }
    }
    for r in &doc.relations {
        if let (Some(&h), Some(&t)) = (index.get(&r.head), index.get(&r.tail)) {
            if h != t {
                edges.entry(key(h, t)).or_default().relations.insert(r.relation.clone());
            }
        }
    }

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for &(a, b) in edges.keys() {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for list in &mut adjacency {
        list.sort_by(|&x, &y| nodes[x].cmp(&nodes[y]));
    }

    EntityGraph {
        nodes,
        index,
        edges,
        adjacency,
    }
}

impl EntityGraph {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges between two nodes (by index), in either order.
    pub fn pair(&self, a: usize, b: usize) -> Option<&PairEdges> {
        self.edges.get(&key(a, b))
    }

    pub fn edge_kinds(&self, a: &str, b: &str) -> Vec<EdgeKind> {
        match (self.node_index(a), self.node_index(b)) {
            (Some(a), Some(b)) => self.pair(a, b).map(PairEdges::kinds).unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    /// Neighbor indices of node `i`, sorted by entity id.
    pub fn adjacent(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Every neighbor of `id` with the edge kinds connecting them, sorted by
    /// neighbor id.
    pub fn neighbors(&self, id: &str) -> Result<Vec<(&str, Vec<EdgeKind>)>> {
        let i = self
            .node_index(id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))?;
        Ok(self.adjacency[i]
            .iter()
            .map(|&j| (self.nodes[j].as_str(), self.edges[&key(i, j)].kinds()))
            .collect())
    }

    pub fn iter_pairs(&self) -> impl Iterator<Item = (&str, &str, &PairEdges)> {
        self.edges
            .iter()
            .map(|(&(a, b), e)| (self.nodes[a].as_str(), self.nodes[b].as_str(), e))
    }

    /// Debug export: one `pairId<TAB>kind<TAB>detail` line per edge kind,
    /// where `pairId` is the two ids in lexicographic order joined by `|`,
    /// `kind` is `kg` or `intra`, and `detail` is the relation label or the
    /// comma-separated sentence indices. Lines are sorted.
    pub fn edge_list(&self) -> String {
        let mut lines = Vec::new();
        for (a, b, e) in self.iter_pairs() {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for r in &e.relations {
                lines.push(format!("{lo}|{hi}\tkg\t{r}"));
            }
            if !e.sentences.is_empty() {
                let detail: Vec<String> = e.sentences.iter().map(usize::to_string).collect();
                lines.push(format!("{lo}|{hi}\tintra\t{}", detail.join(",")));
            }
        }
        lines.sort();
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, Mention, RelationTriple, Sentence};
    use crate::fixtures::mirrormask;

    fn ent(id: &str, mentions: &[(usize, usize, usize)]) -> Entity {
        Entity {
            id: id.into(),
            surface: id.into(),
            mentions: mentions
                .iter()
                .map(|&(sentence, start, end)| Mention { sentence, start, end })
                .collect(),
        }
    }

    fn doc(sentences: &[&str], entities: Vec<Entity>, relations: &[(&str, &str, &str)]) -> Document {
        Document {
            id: "t".into(),
            sentences: sentences
                .iter()
                .enumerate()
                .map(|(index, t)| Sentence {
                    index,
                    text: t.to_string(),
                })
                .collect(),
            entities,
            relations: relations
                .iter()
                .map(|&(h, t, r)| RelationTriple {
                    head: h.into(),
                    tail: t.into(),
                    relation: r.into(),
                })
                .collect(),
        }
    }

    #[test]
    fn single_sentence_pair() {
        let d = doc(&["A met B."], vec![ent("A", &[(0, 0, 1)]), ent("B", &[(0, 6, 7)])], &[]);
        let g = build_entity_graph(&d);
        assert_eq!(g.nodes(), ["A", "B"]);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edge_kinds("A", "B"), vec![EdgeKind::IntraSentence(BTreeSet::from([0]))]);
        assert_eq!(g.edge_list(), "A|B\tintra\t0\n");
    }

    #[test]
    fn worked_example_triangle() {
        let d = mirrormask();
        let g = build_entity_graph(&d);
        let intra = |a: &str, b: &str| {
            g.edge_kinds(a, b)
                .into_iter()
                .find_map(|k| match k {
                    EdgeKind::IntraSentence(s) => Some(s),
                    _ => None,
                })
                .unwrap_or_default()
        };
        assert_eq!(intra("e1", "e7"), BTreeSet::from([1]));
        assert_eq!(intra("e7", "e5"), BTreeSet::from([5]));
        assert_eq!(intra("e1", "e5"), BTreeSet::from([3]));

        let n: Vec<&str> = g.neighbors("e7").unwrap().into_iter().map(|(id, _)| id).collect();
        // MirrorMask also co-occurs with the screenwriter in the lead sentence.
        assert_eq!(n, ["e1", "e2", "e5"]);
        let n: Vec<&str> = g.neighbors("e1").unwrap().into_iter().map(|(id, _)| id).collect();
        assert_eq!(n, ["e5", "e7"]);
    }

    #[test]
    fn no_cooccurrence_no_edges() {
        let d = doc(&["A.", "B."], vec![ent("A", &[(0, 0, 1)]), ent("B", &[(1, 0, 1)])], &[]);
        let g = build_entity_graph(&d);
        assert_eq!(g.nodes().len(), 2);
        assert_eq!(g.edge_count(), 0);
        assert!(g.neighbors("A").unwrap().is_empty());
    }

    #[test]
    fn kg_only_neighbor() {
        let d = doc(
            &["A.", "B."],
            vec![ent("A", &[(0, 0, 1)]), ent("B", &[(1, 0, 1)])],
            &[("A", "B", "spouse"), ("B", "A", "spouse"), ("A", "B", "colleague")],
        );
        let g = build_entity_graph(&d);
        let n = g.neighbors("B").unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(
            n[0].1,
            vec![
                EdgeKind::KgRelation("colleague".into()),
                EdgeKind::KgRelation("spouse".into())
            ]
        );
        assert!(matches!(g.neighbors("Z"), Err(Error::UnknownEntity(_))));
        assert_eq!(g.edge_list(), "A|B\tkg\tcolleague\nA|B\tkg\tspouse\n");
    }
}
