//! Hand-built documents for examples and tests.

use crate::corpus::{Document, Entity, Mention, RelationTriple, Sentence};

/// Builds a [`Document`] from sentences and the surfaces they mention.
///
/// Mention spans are located by searching the sentence for each surface
/// (first occurrence at or after the previous mention of the same sentence).
#[derive(Debug, Clone)]
pub struct DocumentBuilder {
    doc: Document,
}

impl DocumentBuilder {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            doc: Document {
                id: id.into(),
                sentences: Vec::new(),
                entities: Vec::new(),
                relations: Vec::new(),
            },
        }
    }

    /// Declares an entity. Entities are also declared implicitly on first
    /// mention, using the mention text as the name.
    pub fn entity(mut self, id: &str, name: &str) -> Self {
        self.ensure(id, name);
        self
    }

    fn ensure(&mut self, id: &str, name: &str) -> usize {
        match self.doc.entity_index(id) {
            Some(i) => i,
            None => {
                self.doc.entities.push(Entity {
                    id: id.to_string(),
                    surface: name.to_string(),
                    mentions: Vec::new(),
                });
                self.doc.entities.len() - 1
            }
        }
    }

    /// Adds a sentence. `mentions` lists `(entity id, surface as written)` in
    /// reading order.
    ///
    /// # Panics
    /// If a surface does not occur in the text.
    pub fn sentence(mut self, text: &str, mentions: &[(&str, &str)]) -> Self {
        let index = self.doc.sentences.len();
        let mut from_byte = 0;
        for &(id, surface) in mentions {
            let rel = text[from_byte..]
                .find(surface)
                .unwrap_or_else(|| panic!("`{surface}` not found in `{text}`"));
            let byte = from_byte + rel;
            let start = text[..byte].chars().count();
            let end = start + surface.chars().count();
            from_byte = byte + surface.len();
            let ei = self.ensure(id, surface);
            self.doc.entities[ei].mentions.push(Mention {
                sentence: index,
                start,
                end,
            });
        }
        self.doc.sentences.push(Sentence {
            index,
            text: text.to_string(),
        });
        self
    }

    pub fn relation(mut self, head: &str, relation: &str, tail: &str) -> Self {
        self.doc.relations.push(RelationTriple {
            head: head.into(),
            tail: tail.into(),
            relation: relation.into(),
        });
        self
    }

    pub fn build(self) -> Document {
        self.doc
    }
}

/// The running film example: a six-sentence document where the director and
/// the lead actress are co-mentioned in sentence 3, and are also linked
/// through the film by sentences 1 and 5.
///
/// | id | entity |
/// |----|--------|
/// | e1 | Dave McKean |
/// | e2 | Neil Gaiman |
/// | e3 | The Jim Henson Company |
/// | e4 | Sundance Film Festival |
/// | e5 | Stephanie Leonidas |
/// | e7 | MirrorMask |
pub fn mirrormask() -> Document {
    DocumentBuilder::new("mirrormask")
        .entity("e1", "Dave McKean")
        .entity("e2", "Neil Gaiman")
        .entity("e3", "The Jim Henson Company")
        .entity("e4", "Sundance Film Festival")
        .entity("e5", "Stephanie Leonidas")
        .entity("e7", "MirrorMask")
        .sentence(
            "MirrorMask is a 2005 British fantasy film written by Neil Gaiman.",
            &[("e7", "MirrorMask"), ("e2", "Neil Gaiman")],
        )
        .sentence(
            "MirrorMask was directed by Dave McKean.",
            &[("e7", "MirrorMask"), ("e1", "Dave McKean")],
        )
        .sentence(
            "The film was produced by The Jim Henson Company.",
            &[("e3", "The Jim Henson Company")],
        )
        .sentence(
            "Dave McKean cast Stephanie Leonidas in the lead role.",
            &[("e1", "Dave McKean"), ("e5", "Stephanie Leonidas")],
        )
        .sentence(
            "The film premiered at the Sundance Film Festival.",
            &[("e4", "Sundance Film Festival")],
        )
        .sentence(
            "Stephanie Leonidas starred as Helena in MirrorMask.",
            &[("e5", "Stephanie Leonidas"), ("e7", "MirrorMask")],
        )
        .relation("e7", "director", "e1")
        .relation("e7", "screenwriter", "e2")
        .relation("e7", "cast member", "e5")
        .build()
}
