//! Biaffine semantic dependency parser.
//!
//! Tokens are embedded as summed word, pretrained and character vectors
//! next to a POS embedding, encoded by a deep BiLSTM and scored by bilinear
//! forms over four feed-forward projections. Edges are decoded by sign and
//! labels by argmax. A syntactic dependency task can be trained alongside,
//! sharing the encoder and optionally the projections.

pub mod check;
pub mod config;
pub mod decode;
pub mod loss;
mod model;
pub mod network;
pub mod train;
pub mod vocab;

pub use config::{NetworkConfig, SharingTopology, TrainConfig, UpdateMode};
pub use model::{Model, ModelHeader, Task};
pub use network::{InputDrops, Mode, TaskScores};
pub use train::{train, task_weights, weighted_loss, EpochRecord, HeldoutExample, SemanticExample, SyntacticExample, TrainReport};
pub use vocab::{EncodedSentence, LabelSet, Vocab, Vocabularies};

use xsdp_autodiff::{Tape, Tensor};
use xsdp_core::{SemanticGraph, SyntacticTree, Token};

#[derive(Debug, thiserror::Error)]
pub enum ParserError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] xsdp_autodiff::AutodiffError),
    #[error(transparent)]
    Graph(#[from] xsdp_core::GraphError),
    #[error(transparent)]
    Eval(#[from] xsdp_core::evaluation::EvalError),
    #[error("{task} label {label:?} is not in the model's label set")]
    UnknownLabel { task: &'static str, label: String },
    #[error("context vectors: expected shape {expected:?}, found {found:?}")]
    Context {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("pretrained vectors: {0}")]
    Pretrained(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    EmptyCorpus(String),
    #[error("training diverged: {task} loss is {loss} at epoch {epoch}, batch {batch}")]
    Divergence {
        task: &'static str,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parser input: tokens with optional per-token context vectors
/// (`n x context_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub context: Option<Tensor>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Sentence {
        Sentence { tokens, context: None }
    }

    pub fn with_context(mut self, context: Tensor) -> Sentence {
        self.context = Some(context);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Model {
    pub fn encode_sentence(&self, sentence: &Sentence) -> EncodedSentence {
        EncodedSentence::new(sentence, self.vocab())
    }

    /// Predicted semantic graph of one sentence.
    pub fn parse_semantic(&self, sentence: &Sentence) -> Result<SemanticGraph, ParserError> {
        let enc = self.encode_sentence(sentence);
        self.parse_semantic_encoded(&sentence.tokens, &enc)
    }

    pub(crate) fn parse_semantic_encoded(&self, tokens: &[Token], enc: &EncodedSentence) -> Result<SemanticGraph, ParserError> {
        if enc.is_empty() {
            return Ok(SemanticGraph::new(Vec::new())?);
        }
        let mut tape = Tape::new(self.store());
        let scores = self.forward(&mut tape, enc, Task::Semantic, Mode::Eval)?;
        let cells = decode::positive_cells(tape.value(scores.edge));
        let labelled: Vec<(usize, usize)> = cells.iter().copied().filter(|c| c.0 != 0).collect();
        let label_values = if labelled.is_empty() {
            Tensor::zeros(0, self.labels(Task::Semantic).len())
        } else {
            let s = network::label_scores(&mut tape, &scores, &labelled)?;
            tape.value(s).clone()
        };
        // label rows follow the non-top cells; tops take a placeholder row
        let mut rows = Tensor::zeros(cells.len(), label_values.cols());
        let mut next = 0;
        for (m, c) in cells.iter().enumerate() {
            if c.0 != 0 {
                rows.row_slice_mut(m).copy_from_slice(label_values.row_slice(next));
                next += 1;
            }
        }
        decode::label_cells(tokens.to_vec(), &cells, &rows, self.labels(Task::Semantic))
    }

    /// Greedy syntactic analysis of one sentence.
    pub fn parse_syntactic(&self, sentence: &Sentence) -> Result<SyntacticTree, ParserError> {
        let enc = self.encode_sentence(sentence);
        if enc.is_empty() {
            return Ok(SyntacticTree::new(Vec::new(), Vec::new(), Vec::new())?);
        }
        let mut tape = Tape::new(self.store());
        let scores = self.forward(&mut tape, &enc, Task::Syntactic, Mode::Eval)?;
        let heads = decode::best_heads(tape.value(scores.edge));
        let cells: Vec<(usize, usize)> = heads.iter().enumerate().map(|(k, &h)| (h, k + 1)).collect();
        let s = network::label_scores(&mut tape, &scores, &cells)?;
        let labels = self.labels(Task::Syntactic);
        let deprels = (0..cells.len())
            .map(|m| labels.name(decode::argmax(tape.value(s).row_slice(m))).to_string())
            .collect();
        decode::finish_tree(sentence.tokens.clone(), heads, deprels)
    }
}
