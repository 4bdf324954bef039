//! Data structures and corpus tooling for cross-lingual semantic dependency
//! parsing.
//!
//! * [`graph`] holds tokens, semantic graphs (with the dummy root at index 0),
//!   partially decided projected graphs and syntactic trees.
//! * [`formats`] reads and writes SDP, CoNLL-U, Pharaoh alignments and
//!   context-vector files.
//! * [`projection`] intersects alignments, projects graphs across them and
//!   samples/splits projected corpora. [`projection::synth`] generates
//!   synthetic parallel corpora.
//! * [`evaluation`] scores predicted graphs and runs the error analyses.

pub mod evaluation;
pub mod formats;
pub mod graph;
pub mod projection;

pub use graph::{
    dependency_length, is_acyclic, validate_graph, DependencyLength, GraphError, LengthBucket,
    PartialGraph, SemanticGraph, SyntacticTree, Token, Violation, TOP_LABEL,
};
