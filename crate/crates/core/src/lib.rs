//! Algorithmic toolkit for complex math expression recognition: a LaTeX
//! math parser with canonical rendering, a structure-preserving token
//! serialization of syntax trees, a BPE tokenizer that keeps LaTeX commands
//! atomic, patch-budget resolution planning, recognition metrics and a
//! corpus curation pipeline.

pub mod cli;
pub mod cmerfit;
pub mod curation;
pub mod grammar;
pub mod latex;
pub mod metrics;
pub mod sml;
pub mod tokenizer;
