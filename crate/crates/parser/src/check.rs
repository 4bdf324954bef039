//! End-to-end gradient check of the parser loss.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xsdp_autodiff::{gradient_check, GradCheckReport, Tape, Var};
use xsdp_core::projection::synth::{synth_corpus, SynthConfig};
use xsdp_core::Token;

use crate::loss::{semantic_loss, semantic_norm, syntactic_loss, syntactic_norm, SemanticTarget, SyntacticTarget};
use crate::{EncodedSentence, Mode, Model, NetworkConfig, ParserError, Sentence, SharingTopology, Task, TrainConfig, Vocabularies};

/// Network with every dimension equal to `dim` (which must be even), two
/// recurrent layers and the bilinear bias switched on.
pub fn uniform_network(dim: usize) -> NetworkConfig {
    NetworkConfig {
        d_w: dim,
        d_t: dim,
        d_char: dim,
        d_h: dim,
        rnn_layers: 2,
        d_fnn: dim,
        bilinear_bias: true,
        ..NetworkConfig::default()
    }
}

/// Compares analytic and central-difference gradients of the weighted
/// semantic plus syntactic loss of one synthetic sentence of `tokens`
/// tokens, through every trainable parameter. Dropout masks are drawn from
/// a fixed seed so the loss is a smooth function of the parameters.
pub fn end_to_end_gradient_check(
    network: NetworkConfig,
    topology: SharingTopology,
    tokens: usize,
    seed: u64,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport, ParserError> {
    let corpus = synth_corpus(&SynthConfig {
        sentence_count: 1,
        min_len: tokens,
        max_len: tokens,
        seed,
        ..SynthConfig::default()
    })
    .map_err(|e| ParserError::Config(e.to_string()))?;
    let projected = corpus.project().map_err(|e| ParserError::Config(e.to_string()))?;
    let (gold, tree) = (&projected[0], &corpus.syntax[0]);
    let words: Vec<&[Token]> = vec![gold.graph().tokens(), tree.tokens()];
    let vocab = Vocabularies::build(&words, &[gold.graph()], &[tree]);
    let mut model = Model::new(network, topology, vec![Task::Semantic, Task::Syntactic], vocab, None, seed)?;
    let sem = SemanticTarget::from_partial(gold, model.labels(Task::Semantic))?;
    let syn = SyntacticTarget::from_tree(tree, model.labels(Task::Syntactic))?;
    let sem_enc = model.encode_sentence(&Sentence::new(gold.graph().tokens().to_vec()));
    let syn_enc = model.encode_sentence(&Sentence::new(tree.tokens().to_vec()));
    let weights = TrainConfig::default();
    let shape = model.clone();
    let params: Vec<_> = model.store().iter().filter(|(_, p)| p.is_trainable()).map(|(id, _)| id).collect();
    let loss = |tape: &mut Tape<'_>| -> Result<Var, ParserError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = task_loss(&shape, tape, &sem_enc, Task::Semantic, &mut rng, |tape, s| {
            semantic_loss(tape, s, &sem, weights.lambda_label, semantic_norm(&sem))
        })?;
        let b = task_loss(&shape, tape, &syn_enc, Task::Syntactic, &mut rng, |tape, s| {
            syntactic_loss(tape, s, &syn, weights.lambda_label, syntactic_norm(&syn))
        })?;
        let a = tape.scale(a, weights.omega_sem)?;
        let b = tape.scale(b, weights.omega_syn)?;
        Ok(tape.add(a, b)?)
    };
    gradient_check(model.store_mut(), &params, loss, eps, tolerance)
}

fn task_loss(
    model: &Model,
    tape: &mut Tape<'_>,
    enc: &EncodedSentence,
    task: Task,
    rng: &mut ChaCha8Rng,
    loss: impl FnOnce(&mut Tape<'_>, &crate::TaskScores) -> Result<Var, ParserError>,
) -> Result<Var, ParserError> {
    let scores = model.forward(tape, enc, task, Mode::Train(rng))?;
    loss(tape, &scores)
}
