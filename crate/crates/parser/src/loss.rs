use xsdp_autodiff::{Tape, Tensor, Var};
use xsdp_core::{PartialGraph, SyntacticTree};

use crate::model::Task;
use crate::network::{label_scores, TaskScores};
use crate::vocab::LabelSet;
use crate::ParserError;

/// One labelled cell of the training target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelTarget {
    pub head: usize,
    pub dep: usize,
    pub label: usize,
    /// 0 for cells whose status is unknown.
    pub weight: f64,
}

/// Semantic training target of one sentence in matrix form.
///
/// `edge_weight` is 1 on decided off-diagonal cells and 0 elsewhere; the
/// content of `edge_target` and of zero-weight label entries at masked
/// positions never reaches the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticTarget {
    /// `(n + 1) x n`, 1 where the gold graph has an edge.
    pub edge_target: Tensor,
    pub edge_weight: Tensor,
    pub labels: Vec<LabelTarget>,
}

impl SemanticTarget {
    pub fn from_partial(graph: &PartialGraph, labels: &LabelSet) -> Result<SemanticTarget, ParserError> {
        let n = graph.graph().len();
        let mut edge_target = Tensor::zeros(n + 1, n);
        let mut edge_weight = Tensor::zeros(n + 1, n);
        for i in 0..=n {
            for j in 1..=n {
                if i != j && graph.is_decided(i, j) {
                    edge_weight.set(i, j - 1, 1.0);
                }
            }
        }
        let mut entries = Vec::new();
        for (h, d, label) in graph.graph().edges() {
            edge_target.set(h, d - 1, 1.0);
            if h == 0 {
                continue;
            }
            let index = labels.get(label).ok_or_else(|| ParserError::UnknownLabel {
                task: Task::Semantic.short(),
                label: label.to_string(),
            })?;
            entries.push(LabelTarget {
                head: h,
                dep: d,
                label: index,
                weight: 1.0,
            });
        }
        Ok(SemanticTarget {
            edge_target,
            edge_weight,
            labels: entries,
        })
    }

    pub fn len(&self) -> usize {
        self.edge_target.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of cells the edge loss is taken over.
    pub fn decided_cells(&self) -> usize {
        self.edge_weight.data().iter().filter(|&&w| w != 0.0).count()
    }

    pub fn label_cells(&self) -> usize {
        self.labels.iter().filter(|l| l.weight != 0.0).count()
    }
}

/// Syntactic training target: gold head and label index per token.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntacticTarget {
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
}

impl SyntacticTarget {
    pub fn from_tree(tree: &SyntacticTree, labels: &LabelSet) -> Result<SyntacticTarget, ParserError> {
        let labels = tree
            .deprels()
            .iter()
            .map(|l| {
                labels.get(l).ok_or_else(|| ParserError::UnknownLabel {
                    task: Task::Syntactic.short(),
                    label: l.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(SyntacticTarget {
            heads: tree.heads().to_vec(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Denominators of the edge and label terms, usually totals over a
/// minibatch so that every cell weighs the same.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossNorm {
    pub edges: f64,
    pub labels: f64,
}

/// `lambda * label_sum / norm.labels + (1 - lambda) * edge_sum / norm.edges`.
fn interpolate(
    tape: &mut Tape<'_>,
    edge: Var,
    label: Option<Var>,
    lambda: f64,
    norm: LossNorm,
) -> Result<Var, ParserError> {
    let mut total = tape.scale(edge, (1.0 - lambda) / norm.edges.max(1.0))?;
    if let Some(label) = label {
        let l = tape.scale(label, lambda / norm.labels.max(1.0))?;
        total = tape.add(total, l)?;
    }
    Ok(total)
}

/// Masked sigmoid cross-entropy over the edge matrix plus softmax
/// cross-entropy over the labels of gold edges.
pub fn semantic_loss(
    tape: &mut Tape<'_>,
    scores: &TaskScores,
    target: &SemanticTarget,
    lambda: f64,
    norm: LossNorm,
) -> Result<Var, ParserError> {
    let edge = tape.sigmoid_xent(scores.edge, &target.edge_target, &target.edge_weight)?;
    let live: Vec<&LabelTarget> = target.labels.iter().filter(|l| l.weight != 0.0).collect();
    let label = if live.is_empty() {
        None
    } else {
        let cells: Vec<(usize, usize)> = live.iter().map(|l| (l.head, l.dep)).collect();
        let s = label_scores(tape, scores, &cells)?;
        let gold: Vec<usize> = live.iter().map(|l| l.label).collect();
        let weights: Vec<f64> = live.iter().map(|l| l.weight).collect();
        Some(tape.softmax_xent(s, &gold, &weights, None)?)
    };
    interpolate(tape, edge, label, lambda, norm)
}

/// Normalisation of a single sentence on its own.
pub fn semantic_norm(target: &SemanticTarget) -> LossNorm {
    LossNorm {
        edges: target.decided_cells() as f64,
        labels: target.label_cells() as f64,
    }
}

/// Softmax over candidate heads for every token, plus softmax over labels
/// at the gold head.
pub fn syntactic_loss(
    tape: &mut Tape<'_>,
    scores: &TaskScores,
    target: &SyntacticTarget,
    lambda: f64,
    norm: LossNorm,
) -> Result<Var, ParserError> {
    let n = target.len();
    let by_dep = tape.transpose(scores.edge)?;
    let mut allowed = Tensor::filled(n, n + 1, 1.0);
    for j in 1..=n {
        allowed.set(j - 1, j, 0.0);
    }
    let ones = vec![1.0; n];
    let head = tape.softmax_xent(by_dep, &target.heads, &ones, Some(&allowed))?;
    let cells: Vec<(usize, usize)> = target.heads.iter().enumerate().map(|(k, &h)| (h, k + 1)).collect();
    let s = label_scores(tape, scores, &cells)?;
    let label = tape.softmax_xent(s, &target.labels, &ones, None)?;
    interpolate(tape, head, Some(label), lambda, norm)
}

pub fn syntactic_norm(target: &SyntacticTarget) -> LossNorm {
    LossNorm {
        edges: target.len() as f64,
        labels: target.len() as f64,
    }
}
