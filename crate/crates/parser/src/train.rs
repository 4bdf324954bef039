use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use xsdp_autodiff::{Adam, Gradients, Tape};
use xsdp_core::evaluation::score_graphs;
use xsdp_core::{PartialGraph, SemanticGraph, SyntacticTree};

use crate::config::{TrainConfig, UpdateMode};
use crate::loss::{
    semantic_loss, syntactic_loss, LossNorm, SemanticTarget, SyntacticTarget,
};
use crate::model::{Model, Task};
use crate::network::Mode;
use crate::vocab::EncodedSentence;
use crate::{ParserError, Sentence};

/// A training sentence of the semantic task.
#[derive(Clone, Debug)]
pub struct SemanticExample {
    pub sentence: Sentence,
    pub encoded: EncodedSentence,
    pub target: SemanticTarget,
}

impl SemanticExample {
    pub fn new(model: &Model, sentence: Sentence, gold: &PartialGraph) -> Result<Self, ParserError> {
        let target = SemanticTarget::from_partial(gold, model.labels(Task::Semantic))?;
        Ok(Self::from_target(model, sentence, target))
    }

    /// An example with a hand-made target, e.g. one whose masked cells hold
    /// arbitrary content.
    pub fn from_target(model: &Model, sentence: Sentence, target: SemanticTarget) -> Self {
        SemanticExample {
            encoded: model.encode_sentence(&sentence),
            sentence,
            target,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntacticExample {
    pub sentence: Sentence,
    pub encoded: EncodedSentence,
    pub target: SyntacticTarget,
}

impl SyntacticExample {
    pub fn new(model: &Model, sentence: Sentence, gold: &SyntacticTree) -> Result<Self, ParserError> {
        let target = SyntacticTarget::from_tree(gold, model.labels(Task::Syntactic))?;
        Ok(SyntacticExample {
            encoded: model.encode_sentence(&sentence),
            sentence,
            target,
        })
    }
}

/// Held-out sentence with its projected graph. Only decided cells count.
#[derive(Clone, Debug)]
pub struct HeldoutExample {
    pub sentence: Sentence,
    pub encoded: EncodedSentence,
    pub gold: PartialGraph,
}

impl HeldoutExample {
    pub fn new(model: &Model, sentence: Sentence, gold: PartialGraph) -> Self {
        HeldoutExample {
            encoded: model.encode_sentence(&sentence),
            sentence,
            gold,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss_sem: Option<f64>,
    pub loss_syn: Option<f64>,
    pub heldout_lf: f64,
    pub heldout_uf: f64,
}

impl EpochRecord {
    /// One `key=value` line.
    pub fn to_key_value(&self) -> String {
        let loss = |l: Option<f64>| l.map_or_else(|| "none".to_string(), |v| format!("{v:.6}"));
        format!(
            "epoch={} steps={} loss_sem={} loss_syn={} heldout_lf={:.6} heldout_uf={:.6}",
            self.epoch,
            self.steps,
            loss(self.loss_sem),
            loss(self.loss_syn),
            self.heldout_lf,
            self.heldout_uf
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
    pub best_lf: f64,
}

impl TrainReport {
    pub fn metrics_log(&self) -> String {
        self.epochs.iter().map(|e| e.to_key_value() + "\n").collect()
    }
}

// splitmix64 finaliser
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0, |acc, &p| mix(acc ^ mix(p)))
}

fn task_code(task: Task) -> u64 {
    match task {
        Task::Semantic => 1,
        Task::Syntactic => 2,
    }
}

/// Dropout generator of one sentence in one step.
pub fn dropout_rng(seed: u64, task: Task, epoch: usize, batch: usize, sentence: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[seed, task_code(task), epoch as u64, batch as u64, sentence as u64]))
}

/// Identifies the dropout masks of a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepKey {
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
}

/// Loss and gradients of one semantic minibatch, normalised over its
/// decided cells and gold labels.
pub fn semantic_gradients(
    model: &Model,
    batch: &[&SemanticExample],
    lambda: f64,
    key: StepKey,
) -> Result<(f64, Gradients), ParserError> {
    let norm = LossNorm {
        edges: batch.iter().map(|e| e.target.decided_cells()).sum::<usize>() as f64,
        labels: batch.iter().map(|e| e.target.label_cells()).sum::<usize>() as f64,
    };
    reduce(batch.len(), |k| {
        let ex = batch[k];
        let mut rng = dropout_rng(key.seed, Task::Semantic, key.epoch, key.batch, k);
        let mut tape = Tape::new(model.store());
        let scores = model.forward(&mut tape, &ex.encoded, Task::Semantic, Mode::Train(&mut rng))?;
        let loss = semantic_loss(&mut tape, &scores, &ex.target, lambda, norm)?;
        Ok((tape.value(loss).item(), tape.backward(loss)?))
    })
}

/// Loss and gradients of one syntactic minibatch, normalised over tokens.
pub fn syntactic_gradients(
    model: &Model,
    batch: &[&SyntacticExample],
    lambda: f64,
    key: StepKey,
) -> Result<(f64, Gradients), ParserError> {
    let tokens = batch.iter().map(|e| e.target.len()).sum::<usize>() as f64;
    let norm = LossNorm {
        edges: tokens,
        labels: tokens,
    };
    reduce(batch.len(), |k| {
        let ex = batch[k];
        let mut rng = dropout_rng(key.seed, Task::Syntactic, key.epoch, key.batch, k);
        let mut tape = Tape::new(model.store());
        let scores = model.forward(&mut tape, &ex.encoded, Task::Syntactic, Mode::Train(&mut rng))?;
        let loss = syntactic_loss(&mut tape, &scores, &ex.target, lambda, norm)?;
        Ok((tape.value(loss).item(), tape.backward(loss)?))
    })
}

// Sums in sentence order whatever the thread count. Sentences run in
// parallel chunks so that only a few dense gradients are alive at once.
fn reduce(
    count: usize,
    sentence: impl Fn(usize) -> Result<(f64, Gradients), ParserError> + Sync,
) -> Result<(f64, Gradients), ParserError> {
    let chunk = rayon::current_num_threads().max(1);
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for start in (0..count).step_by(chunk) {
        let end = (start + chunk).min(count);
        let parts: Vec<_> = (start..end).into_par_iter().map(&sentence).collect::<Result<_, _>>()?;
        for (loss, g) in parts {
            total += loss;
            grads.merge(&g);
        }
    }
    Ok((total, grads))
}

/// Consecutive groups of `order` holding about `budget` tokens each. A
/// sentence longer than the budget gets a batch of its own.
pub fn make_batches(order: &[usize], lengths: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for &i in order {
        let len = lengths[i];
        if !current.is_empty() && tokens + len > budget {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        current.push(i);
        tokens += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Interleaves `a` semantic and `b` syntactic batches so both are spread
/// evenly over the epoch; semantic first on ties.
pub fn alternate(a: usize, b: usize) -> Vec<Task> {
    let mut out = Vec::with_capacity(a + b);
    let (mut i, mut j) = (0, 0);
    while i < a || j < b {
        // compare (i + 0.5) / a with (j + 0.5) / b without division
        let sem_next = j >= b || (i < a && (2 * i + 1) * b <= (2 * j + 1) * a);
        if sem_next {
            out.push(Task::Semantic);
            i += 1;
        } else {
            out.push(Task::Syntactic);
            j += 1;
        }
    }
    out
}

/// Labeled and unlabeled F1 over decided cells of the held-out graphs.
pub fn heldout_scores(model: &Model, heldout: &[HeldoutExample]) -> Result<(f64, f64), ParserError> {
    let predicted: Vec<SemanticGraph> = heldout
        .par_iter()
        .map(|ex| {
            let g = model.parse_semantic_encoded(&ex.sentence.tokens, &ex.encoded)?;
            let kept: Vec<(usize, usize, String)> = g
                .edges()
                .filter(|&(h, d, _)| ex.gold.is_decided(h, d))
                .map(|(h, d, l)| (h, d, l.to_string()))
                .collect();
            Ok(SemanticGraph::from_edges(g.tokens().to_vec(), kept)?)
        })
        .collect::<Result<_, ParserError>>()?;
    let gold: Vec<SemanticGraph> = heldout.iter().map(|ex| ex.gold.graph().clone()).collect();
    let report = score_graphs(&predicted, &gold)?;
    Ok((report.lf(), report.uf()))
}

/// Weights `(semantic, syntactic)` applied to each task's loss and
/// gradients. A task trained on its own has weight 1.
pub fn task_weights(cfg: &TrainConfig, semantic: bool, syntactic: bool) -> (f64, f64) {
    if semantic && syntactic {
        (cfg.omega_sem, cfg.omega_syn)
    } else {
        (1.0, 1.0)
    }
}

/// The multitask objective `w_sem * loss_sem + w_syn * loss_syn`; a missing
/// task contributes nothing.
pub fn weighted_loss(weights: (f64, f64), semantic: Option<f64>, syntactic: Option<f64>) -> f64 {
    weights.0 * semantic.unwrap_or(0.0) + weights.1 * syntactic.unwrap_or(0.0)
}

fn check_loss(loss: f64, task: Task, epoch: usize, batch: usize) -> Result<(), ParserError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ParserError::Divergence {
            task: task.short(),
            epoch,
            batch,
            loss,
        })
    }
}

/// Trains `model` on whichever task corpora are non-empty and keeps the
/// parameters of the epoch with the best held-out LF.
///
/// Each task scales its gradients by its weight; with a single task the
/// weight is 1. A task of weight 0 is skipped without any computation.
pub fn train(
    model: &mut Model,
    semantic: &[SemanticExample],
    syntactic: &[SyntacticExample],
    heldout: &[HeldoutExample],
    cfg: &TrainConfig,
) -> Result<TrainReport, ParserError> {
    cfg.validate()?;
    if semantic.is_empty() && syntactic.is_empty() {
        return Err(ParserError::EmptyCorpus("no training sentences".into()));
    }
    if heldout.is_empty() {
        return Err(ParserError::EmptyCorpus("no held-out sentences".into()));
    }
    for (task, present) in [(Task::Semantic, !semantic.is_empty()), (Task::Syntactic, !syntactic.is_empty())] {
        if present && !model.has_task(task) {
            return Err(ParserError::Config(format!("model has no {} task", task.short())));
        }
    }
    if !model.has_task(Task::Semantic) {
        return Err(ParserError::Config("held-out scoring needs the semantic task".into()));
    }
    let (w_sem, w_syn) = task_weights(cfg, !semantic.is_empty(), !syntactic.is_empty());
    let adam = Adam {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    };
    let mut shuffle_sem = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, task_code(Task::Semantic), 0xba7c]));
    let mut shuffle_syn = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, task_code(Task::Syntactic), 0xba7c]));
    let sem_lengths: Vec<usize> = semantic.iter().map(|e| e.encoded.len()).collect();
    let syn_lengths: Vec<usize> = syntactic.iter().map(|e| e.encoded.len()).collect();
    let mut sem_order: Vec<usize> = (0..semantic.len()).collect();
    let mut syn_order: Vec<usize> = (0..syntactic.len()).collect();

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_lf: f64::NEG_INFINITY,
    };
    let mut best = model.store().snapshot();
    let mut waited = 0;
    for epoch in 1..=cfg.max_epochs {
        sem_order.shuffle(&mut shuffle_sem);
        syn_order.shuffle(&mut shuffle_syn);
        let sem_batches = make_batches(&sem_order, &sem_lengths, cfg.token_budget);
        let syn_batches = make_batches(&syn_order, &syn_lengths, cfg.token_budget);
        let mut totals = [(0.0, 0usize); 2];
        let mut steps = 0;
        let key = |batch| StepKey {
            seed: cfg.seed,
            epoch,
            batch,
        };
        let mut run = |model: &Model, task: Task, batch: usize| -> Result<Option<Gradients>, ParserError> {
            let (weight, slot) = match task {
                Task::Semantic => (w_sem, 0),
                Task::Syntactic => (w_syn, 1),
            };
            if weight == 0.0 {
                return Ok(None);
            }
            let (loss, grads) = match task {
                Task::Semantic => {
                    let b: Vec<&SemanticExample> = sem_batches[batch].iter().map(|&i| &semantic[i]).collect();
                    semantic_gradients(model, &b, cfg.lambda_label, key(batch))?
                }
                Task::Syntactic => {
                    let b: Vec<&SyntacticExample> = syn_batches[batch].iter().map(|&i| &syntactic[i]).collect();
                    syntactic_gradients(model, &b, cfg.lambda_label, key(batch))?
                }
            };
            check_loss(loss, task, epoch, batch)?;
            totals[slot].0 += loss;
            totals[slot].1 += 1;
            Ok(Some(grads))
        };
        match cfg.mode {
            UpdateMode::Alternating => {
                let (mut i, mut j) = (0, 0);
                for task in alternate(sem_batches.len(), syn_batches.len()) {
                    let (batch, weight) = match task {
                        Task::Semantic => (post_inc(&mut i), w_sem),
                        Task::Syntactic => (post_inc(&mut j), w_syn),
                    };
                    if let Some(g) = run(model, task, batch)? {
                        model.store_mut().accumulate(&g, weight);
                        adam.step(model.store_mut());
                        steps += 1;
                    }
                }
            }
            UpdateMode::Combined => {
                for k in 0..sem_batches.len().max(syn_batches.len()) {
                    let mut any = false;
                    for (task, count, weight) in [
                        (Task::Semantic, sem_batches.len(), w_sem),
                        (Task::Syntactic, syn_batches.len(), w_syn),
                    ] {
                        if k < count {
                            if let Some(g) = run(model, task, k)? {
                                model.store_mut().accumulate(&g, weight);
                                any = true;
                            }
                        }
                    }
                    if any {
                        adam.step(model.store_mut());
                        steps += 1;
                    }
                }
            }
        }
        let mean = |(sum, count): (f64, usize)| (count > 0).then(|| sum / count as f64);
        let (lf, uf) = heldout_scores(model, heldout)?;
        let record = EpochRecord {
            epoch,
            steps,
            loss_sem: mean(totals[0]),
            loss_syn: mean(totals[1]),
            heldout_lf: lf,
            heldout_uf: uf,
        };
        log::info!("{}", record.to_key_value());
        report.epochs.push(record);
        if lf > report.best_lf {
            report.best_lf = lf;
            report.best_epoch = epoch;
            best = model.store().snapshot();
            waited = 0;
        } else {
            waited += 1;
        }
        if lf >= 1.0 || waited >= cfg.patience {
            break;
        }
    }
    model.store_mut().restore(&best);
    Ok(report)
}

fn post_inc(k: &mut usize) -> usize {
    *k += 1;
    *k - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_respect_the_budget() {
        let lengths = [3, 4, 10, 2, 2];
        let b = make_batches(&[0, 1, 2, 3, 4], &lengths, 8);
        assert_eq!(b, vec![vec![0, 1], vec![2], vec![3, 4]]);
        // over-long sentence alone
        let b = make_batches(&[2, 0], &lengths, 5);
        assert_eq!(b, vec![vec![2], vec![0]]);
    }

    #[test]
    fn alternation_is_proportional() {
        let s = alternate(4, 2);
        assert_eq!(s.len(), 6);
        assert_eq!(s.iter().filter(|&&t| t == Task::Syntactic).count(), 2);
        assert_eq!(s, vec![Task::Semantic, Task::Syntactic, Task::Semantic, Task::Semantic, Task::Syntactic, Task::Semantic]);
        assert_eq!(alternate(2, 0), vec![Task::Semantic; 2]);
        assert_eq!(alternate(0, 1), vec![Task::Syntactic]);
    }

    #[test]
    fn seeds_differ_per_component() {
        use rand::Rng;
        let a = dropout_rng(1, Task::Semantic, 1, 0, 0).gen::<u64>();
        let b = dropout_rng(1, Task::Syntactic, 1, 0, 0).gen::<u64>();
        let c = dropout_rng(1, Task::Semantic, 1, 0, 1).gen::<u64>();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, dropout_rng(1, Task::Semantic, 1, 0, 0).gen::<u64>());
    }
}
