//! Self-supervised contrastive data construction for multi-hop reasoning
//! over entity-annotated documents.

pub mod corpus;
pub mod counterfactual;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod metapath;
pub mod negatives;
pub mod pipeline;
pub mod sample;
pub mod seed;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/documents.md")]
    mod documents {}
    #[doc = include_str!("../../../book/src/metapaths.md")]
    mod metapaths {}
    #[doc = include_str!("../../../book/src/negatives.md")]
    mod negatives {}
    #[doc = include_str!("../../../book/src/counterfactual.md")]
    mod counterfactual {}
    #[doc = include_str!("../../../book/src/emitting.md")]
    mod emitting {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
