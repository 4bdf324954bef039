#![allow(dead_code)]

use xsdp_core::projection::synth::{synth_corpus, SynthConfig, SynthCorpus};
use xsdp_core::{PartialGraph, SemanticGraph, SyntacticTree, Token};
use xsdp_parser::{
    HeldoutExample, Model, NetworkConfig, SemanticExample, Sentence, SharingTopology, SyntacticExample, Task,
    Vocabularies,
};

pub fn corpus(sentences: usize, seed: u64) -> SynthCorpus {
    synth_corpus(&SynthConfig {
        sentence_count: sentences,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        d_w: 6,
        d_t: 4,
        d_char: 4,
        d_h: 8,
        rnn_layers: 2,
        d_fnn: 6,
        ..NetworkConfig::default()
    }
}

pub fn vocab(graphs: &[SemanticGraph], trees: &[SyntacticTree]) -> Vocabularies {
    let sentences: Vec<&[Token]> = graphs
        .iter()
        .map(|g| g.tokens())
        .chain(trees.iter().map(|t| t.tokens()))
        .collect();
    Vocabularies::build(
        &sentences,
        &graphs.iter().collect::<Vec<_>>(),
        &trees.iter().collect::<Vec<_>>(),
    )
}

pub fn model(
    network: NetworkConfig,
    topology: SharingTopology,
    tasks: Vec<Task>,
    graphs: &[SemanticGraph],
    trees: &[SyntacticTree],
    seed: u64,
) -> Model {
    Model::new(network, topology, tasks, vocab(graphs, trees), None, seed).unwrap()
}

pub fn semantic_examples(model: &Model, graphs: &[PartialGraph]) -> Vec<SemanticExample> {
    graphs
        .iter()
        .map(|g| SemanticExample::new(model, Sentence::new(g.graph().tokens().to_vec()), g).unwrap())
        .collect()
}

pub fn syntactic_examples(model: &Model, trees: &[SyntacticTree]) -> Vec<SyntacticExample> {
    trees
        .iter()
        .map(|t| SyntacticExample::new(model, Sentence::new(t.tokens().to_vec()), t).unwrap())
        .collect()
}

pub fn heldout(model: &Model, graphs: &[PartialGraph]) -> Vec<HeldoutExample> {
    graphs
        .iter()
        .map(|g| HeldoutExample::new(model, Sentence::new(g.graph().tokens().to_vec()), g.clone()))
        .collect()
}
