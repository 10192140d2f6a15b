//! Emotion-lexicon construction from crowd annotations of social-media terms.
//!
//! The pipeline: [`corpus`] turns posts into stemmed term groups,
//! [`tasker`] hands groups to workers, [`quality`] drops spammers,
//! [`lexicon`] aggregates the survivors' labels, [`reliability`] measures
//! agreement and [`evalkit`] scores the result against expert and crowd
//! judgments.

pub mod corpus;
pub mod evalkit;
pub mod lexicon;
pub mod model;
pub mod ontology;
pub mod quality;
pub mod reliability;
pub mod tasker;

pub use ontology::{MainClass, Subclass, SubclassCounts};
