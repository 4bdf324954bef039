use xsdp_autodiff::Tensor;
use xsdp_core::{SemanticGraph, SyntacticTree, Token, TOP_LABEL};

use crate::vocab::LabelSet;
use crate::ParserError;

/// Index of the largest value; ties go to the lowest index and NaN never
/// wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || values[best].is_nan() {
            best = k;
        }
    }
    best
}

/// Cells `(head, dependent)` whose edge score is non-negative, skipping the
/// diagonal. `edge` is `(n + 1) x n`.
pub fn positive_cells(edge: &Tensor) -> Vec<(usize, usize)> {
    let (rows, n) = edge.shape();
    let mut cells = Vec::new();
    for i in 0..rows {
        for j in 1..=n {
            if i != j && edge.get(i, j - 1) >= 0.0 {
                cells.push((i, j));
            }
        }
    }
    cells
}

/// Builds the graph from selected cells and their `M x L` label scores.
/// Cells in row 0 are tops and ignore their label scores.
pub fn label_cells(
    tokens: Vec<Token>,
    cells: &[(usize, usize)],
    scores: &Tensor,
    labels: &LabelSet,
) -> Result<SemanticGraph, ParserError> {
    let edges = cells.iter().enumerate().map(|(m, &(h, d))| {
        let label = if h == 0 {
            TOP_LABEL.to_string()
        } else {
            labels.name(argmax(scores.row_slice(m))).to_string()
        };
        (h, d, label)
    });
    Ok(SemanticGraph::from_edges(tokens, edges)?)
}

/// Sign decoding: an edge wherever the score is at least 0, labelled by the
/// best label slice. `label_scores` holds one `(n + 1) x n` matrix per label.
pub fn decode_semantic(
    tokens: Vec<Token>,
    edge: &Tensor,
    label_scores: &[Tensor],
    labels: &LabelSet,
) -> Result<SemanticGraph, ParserError> {
    check_shapes(&tokens, edge, label_scores, labels)?;
    let cells = positive_cells(edge);
    let mut scores = Tensor::zeros(cells.len(), labels.len());
    for (m, &(h, d)) in cells.iter().enumerate() {
        for (l, s) in label_scores.iter().enumerate() {
            scores.set(m, l, s.get(h, d - 1));
        }
    }
    label_cells(tokens, &cells, &scores, labels)
}

/// Best head of every dependent (column of `edge`), self excluded.
pub fn best_heads(edge: &Tensor) -> Vec<usize> {
    let (rows, n) = edge.shape();
    (1..=n)
        .map(|j| {
            let column: Vec<f64> = (0..rows)
                .map(|i| if i == j { f64::NEG_INFINITY } else { edge.get(i, j - 1) })
                .collect();
            argmax(&column)
        })
        .collect()
}

/// Greedy head selection per token with no tree repair. A result that is
/// not a tree carries the comment ` non-tree`.
pub fn decode_syntactic(
    tokens: Vec<Token>,
    edge: &Tensor,
    label_scores: &[Tensor],
    labels: &LabelSet,
) -> Result<SyntacticTree, ParserError> {
    check_shapes(&tokens, edge, label_scores, labels)?;
    let heads = best_heads(edge);
    let deprels = heads
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let at: Vec<f64> = label_scores.iter().map(|s| s.get(h, k)).collect();
            labels.name(argmax(&at)).to_string()
        })
        .collect();
    finish_tree(tokens, heads, deprels)
}

pub(crate) fn finish_tree(tokens: Vec<Token>, heads: Vec<usize>, deprels: Vec<String>) -> Result<SyntacticTree, ParserError> {
    let tree = SyntacticTree::new(tokens, heads, deprels)?;
    Ok(if tree.is_well_formed() {
        tree
    } else {
        tree.with_comments(vec![NON_TREE.to_string()])
    })
}

pub const NON_TREE: &str = " non-tree";

fn check_shapes(tokens: &[Token], edge: &Tensor, label_scores: &[Tensor], labels: &LabelSet) -> Result<(), ParserError> {
    let n = tokens.len();
    let expected = (n + 1, n);
    if edge.shape() != expected
        || label_scores.len() != labels.len()
        || label_scores.iter().any(|s| s.shape() != expected)
    {
        return Err(ParserError::Config(format!(
            "score shapes do not fit a {n}-token sentence with {} labels",
            labels.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(n: usize) -> Vec<Token> {
        (1..=n).map(|k| Token::new(k, format!("w{k}"), format!("w{k}"), "X")).collect()
    }

    fn labels() -> LabelSet {
        LabelSet::build(["ACT-arg", "PAT-arg"])
    }

    #[test]
    fn negative_scores_give_an_empty_graph() {
        let edge = Tensor::filled(4, 3, -1.0);
        let slices = vec![Tensor::zeros(4, 3); 2];
        let g = decode_semantic(tokens(3), &edge, &slices, &labels()).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.tops().count(), 0);
    }

    #[test]
    fn zero_score_is_an_edge() {
        let mut edge = Tensor::filled(4, 3, -1.0);
        edge.set(2, 2, 0.0);
        let slices = vec![Tensor::zeros(4, 3); 2];
        let g = decode_semantic(tokens(3), &edge, &slices, &labels()).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(2, 3, "ACT-arg")]);
    }

    #[test]
    fn label_ties_take_the_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NAN, 0.0]), 1);
        let mut edge = Tensor::filled(3, 2, -1.0);
        edge.set(1, 1, 2.0);
        edge.set(0, 0, 0.5);
        let mut slices = vec![Tensor::zeros(3, 2); 2];
        slices[0].set(1, 1, 0.7);
        slices[1].set(1, 1, 0.7);
        let g = decode_semantic(tokens(2), &edge, &slices, &labels()).unwrap();
        assert_eq!(g.label(1, 2), Some("ACT-arg"));
        assert_eq!(g.label(0, 1), Some(TOP_LABEL));
    }

    #[test]
    fn label_choice_ignores_a_shared_offset() {
        let mut edge = Tensor::filled(3, 2, -1.0);
        edge.set(2, 0, 1.0);
        let mut slices = vec![Tensor::zeros(3, 2); 2];
        slices[1].set(2, 0, 0.1);
        let shifted: Vec<Tensor> = slices.iter().map(|s| s.map(|v| v + 100.0)).collect();
        let a = decode_semantic(tokens(2), &edge, &slices, &labels()).unwrap();
        let b = decode_semantic(tokens(2), &edge, &shifted, &labels()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label(2, 1), Some("PAT-arg"));
    }

    #[test]
    fn syntactic_heads_prefer_root_and_lower_ties() {
        let mut edge = Tensor::zeros(3, 2);
        edge.set(0, 0, 5.0);
        // token 2: heads 0 and 1 tie
        edge.set(0, 1, 1.0);
        edge.set(1, 1, 1.0);
        let slices = vec![Tensor::zeros(3, 2); 2];
        let t = decode_syntactic(tokens(2), &edge, &slices, &labels()).unwrap();
        assert_eq!(t.heads(), &[0, 0]);
        // two root attachments
        assert_eq!(t.comments, vec![NON_TREE.to_string()]);
    }

    #[test]
    fn non_trees_are_flagged() {
        let mut edge = Tensor::filled(3, 2, -5.0);
        edge.set(2, 0, 1.0);
        edge.set(1, 1, 1.0);
        let slices = vec![Tensor::zeros(3, 2); 2];
        let t = decode_syntactic(tokens(2), &edge, &slices, &labels()).unwrap();
        assert_eq!(t.heads(), &[2, 1]);
        assert_eq!(t.comments, vec![NON_TREE.to_string()]);
    }
}
