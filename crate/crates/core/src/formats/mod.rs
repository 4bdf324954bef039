//! Readers and writers for the on-disk corpus formats.
//!
//! All readers are byte-oriented and locale independent; writers are
//! deterministic so that `write(read(x))` reproduces `x` for anything the
//! writers themselves produced.

mod align;
mod conllu;
mod sdp;
mod vectors;

use std::io;

use thiserror::Error;

use crate::graph::GraphError;

pub use align::{read_alignments, write_alignments, AlignmentFile};
pub use conllu::{read_conllu, write_conllu};
pub use sdp::{read_sdp, write_sdp, SdpDocument, SdpEntry, SdpSentence};
pub use vectors::{
    read_context_vectors, write_context_vectors, write_context_vectors_binary, ContextVectors,
};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Graph {
        line: usize,
        #[source]
        source: GraphError,
    },
    #[error("cannot write {what}: {message}")]
    Write { what: String, message: String },
    #[error("vector dimension {found} does not match expected {expected} (line {line})")]
    Dimension {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("sentence {sentence} has {found} context vectors but {expected} tokens")]
    TokenCount {
        sentence: usize,
        found: usize,
        expected: usize,
    },
    #[error("found context vectors for {found} sentences, expected {expected}")]
    SentenceCount { found: usize, expected: usize },
}

pub(crate) fn parse_error(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

/// Rejects values that would break a tab-separated line.
pub(crate) fn check_field(what: &str, value: &str) -> Result<(), FormatError> {
    if value.contains(['\t', '\n', '\r']) {
        return Err(FormatError::Write {
            what: what.to_string(),
            message: format!("{value:?} contains a tab or line break"),
        });
    }
    Ok(())
}

/// Reads all lines; `\r\n` endings are accepted.
pub(crate) fn read_lines(mut reader: impl io::BufRead) -> Result<Vec<String>, FormatError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    Ok(text.lines().map(str::to_string).collect())
}
