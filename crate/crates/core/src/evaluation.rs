//! Labeled/unlabeled F1 over semantic edge sets and the error analyses:
//! precision by dependency length, syntactic head agreement of improved
//! tokens, and attribution of improvements to syntactic relations.
//!
//! Top nodes are scored as ordinary edges `(0, t, TOP)`. Scores are
//! micro-averaged over the corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::graph::{dependency_length, LengthBucket, SemanticGraph, SyntacticTree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("{what}: {found} sentences where {expected} were expected")]
    SentenceCount {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("sentence {sentence}: {what} has {found} tokens but gold has {expected}")]
    SentenceLength {
        sentence: usize,
        what: &'static str,
        found: usize,
        expected: usize,
    },
}

fn check_aligned(
    what: &'static str,
    gold: &[SemanticGraph],
    lengths: impl ExactSizeIterator<Item = usize>,
) -> Result<(), EvalError> {
    if lengths.len() != gold.len() {
        return Err(EvalError::SentenceCount {
            what,
            found: lengths.len(),
            expected: gold.len(),
        });
    }
    for (k, (len, g)) in lengths.zip(gold).enumerate() {
        if len != g.len() {
            return Err(EvalError::SentenceLength {
                sentence: k + 1,
                what,
                found: len,
                expected: g.len(),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScoreReport {
    pub labeled: Counts,
    pub unlabeled: Counts,
}

impl ScoreReport {
    pub fn lp(&self) -> f64 {
        self.labeled.precision()
    }
    pub fn lr(&self) -> f64 {
        self.labeled.recall()
    }
    pub fn lf(&self) -> f64 {
        self.labeled.f1()
    }
    pub fn up(&self) -> f64 {
        self.unlabeled.precision()
    }
    pub fn ur(&self) -> f64 {
        self.unlabeled.recall()
    }
    pub fn uf(&self) -> f64 {
        self.unlabeled.f1()
    }

    /// One `key=value` pair per line.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (key, value) in [
            ("LP", self.lp()),
            ("LR", self.lr()),
            ("LF", self.lf()),
            ("UP", self.up()),
            ("UR", self.ur()),
            ("UF", self.uf()),
        ] {
            writeln!(out, "{key}={value:.6}").unwrap();
        }
        for (prefix, c) in [("labeled", self.labeled), ("unlabeled", self.unlabeled)] {
            writeln!(out, "{prefix}_gold={}", c.gold).unwrap();
            writeln!(out, "{prefix}_predicted={}", c.predicted).unwrap();
            writeln!(out, "{prefix}_correct={}", c.correct).unwrap();
        }
        out
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>9} {:>9} {:>9} {:>8} {:>10} {:>8}",
            "", "precision", "recall", "F1", "gold", "predicted", "correct"
        )?;
        for (name, c) in [("labeled", self.labeled), ("unlabeled", self.unlabeled)] {
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>10} {:>8}",
                name,
                c.precision(),
                c.recall(),
                c.f1(),
                c.gold,
                c.predicted,
                c.correct
            )?;
        }
        Ok(())
    }
}

/// Micro-averaged labeled and unlabeled scores over a corpus.
pub fn score_graphs(
    predicted: &[SemanticGraph],
    gold: &[SemanticGraph],
) -> Result<ScoreReport, EvalError> {
    check_aligned("prediction", gold, predicted.iter().map(SemanticGraph::len))?;
    let mut report = ScoreReport::default();
    for (p, g) in predicted.iter().zip(gold) {
        report.labeled.gold += g.edge_count();
        report.unlabeled.gold += g.edge_count();
        report.labeled.predicted += p.edge_count();
        report.unlabeled.predicted += p.edge_count();
        for (h, d, label) in p.edges() {
            if let Some(gold_label) = g.label(h, d) {
                report.unlabeled.correct += 1;
                if gold_label == label {
                    report.labeled.correct += 1;
                }
            }
        }
    }
    Ok(report)
}

/// Labeled precision of predicted non-top edges grouped by length bucket.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BucketReport {
    /// `(correct, predicted)` per occupied bucket.
    pub buckets: BTreeMap<LengthBucket, (usize, usize)>,
    /// Correct predicted top edges, which belong to no bucket.
    pub top_correct: usize,
    pub top_predicted: usize,
}

impl BucketReport {
    /// `None` for unoccupied buckets.
    pub fn precision(&self, bucket: LengthBucket) -> Option<f64> {
        self.buckets
            .get(&bucket)
            .map(|&(correct, predicted)| ratio(correct, predicted))
    }

    /// Tab-separated `bucket precision correct predicted` rows.
    pub fn to_series(&self) -> String {
        let mut out = String::from("bucket\tprecision\tcorrect\tpredicted\n");
        for (bucket, &(correct, predicted)) in &self.buckets {
            writeln!(
                out,
                "{bucket}\t{:.6}\t{correct}\t{predicted}",
                ratio(correct, predicted)
            )
            .unwrap();
        }
        out
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for bucket in LengthBucket::ALL {
            match self.buckets.get(&bucket) {
                Some(&(c, p)) => writeln!(
                    out,
                    "bucket[{bucket}]={:.6} correct={c} predicted={p}",
                    ratio(c, p)
                )
                .unwrap(),
                None => writeln!(out, "bucket[{bucket}]=absent").unwrap(),
            }
        }
        out
    }
}

pub fn length_buckets(
    predicted: &[SemanticGraph],
    gold: &[SemanticGraph],
) -> Result<BucketReport, EvalError> {
    check_aligned("prediction", gold, predicted.iter().map(SemanticGraph::len))?;
    let mut report = BucketReport::default();
    for (p, g) in predicted.iter().zip(gold) {
        for (h, d, label) in p.edges() {
            let correct = g.label(h, d) == Some(label);
            if h == 0 {
                report.top_predicted += 1;
                report.top_correct += usize::from(correct);
                continue;
            }
            let bucket = dependency_length(h, d).expect("graphs have no self-loops").bucket();
            let entry = report.buckets.entry(bucket).or_default();
            entry.0 += usize::from(correct);
            entry.1 += 1;
        }
    }
    Ok(report)
}

/// Head agreement statistics for one improvement set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tokens: usize,
    pub matches: usize,
    pub mismatches: usize,
}

impl MatchCounts {
    /// `None` when the set is empty.
    pub fn match_rate(&self) -> Option<f64> {
        (self.tokens > 0).then(|| ratio(self.matches, self.tokens))
    }

    pub fn mismatch_rate(&self) -> Option<f64> {
        (self.tokens > 0).then(|| ratio(self.mismatches, self.tokens))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HeadMatchTable {
    pub labeled_a: MatchCounts,
    pub labeled_b: MatchCounts,
    pub unlabeled_a: MatchCounts,
    pub unlabeled_b: MatchCounts,
}

impl HeadMatchTable {
    fn rows(&self) -> [(&'static str, MatchCounts); 4] {
        [
            ("labeled_a", self.labeled_a),
            ("labeled_b", self.labeled_b),
            ("unlabeled_a", self.unlabeled_a),
            ("unlabeled_b", self.unlabeled_b),
        ]
    }

    pub fn to_key_value(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("absent".to_string(), |v| format!("{:.4}", 100.0 * v));
        let mut out = String::new();
        for (name, c) in self.rows() {
            writeln!(
                out,
                "{name}_tokens={} {name}_match_pct={} {name}_mismatch_pct={}",
                c.tokens,
                pct(c.match_rate()),
                pct(c.mismatch_rate())
            )
            .unwrap();
        }
        out
    }
}

impl fmt::Display for HeadMatchTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}%", 100.0 * v));
        writeln!(f, "{:<12} {:>7} {:>8} {:>9}", "improved", "tokens", "match", "mismatch")?;
        for (name, c) in self.rows() {
            writeln!(
                f,
                "{:<12} {:>7} {:>8} {:>9}",
                name,
                c.tokens,
                pct(c.match_rate()),
                pct(c.mismatch_rate())
            )?;
        }
        Ok(())
    }
}

fn incoming_labeled(g: &SemanticGraph, j: usize) -> BTreeSet<(usize, &str)> {
    g.incoming(j).collect()
}

fn incoming_heads(g: &SemanticGraph, j: usize) -> BTreeSet<usize> {
    g.incoming(j).map(|(h, _)| h).collect()
}

/// Partitions tokens into those whose incoming semantic edges are right under
/// `a` but not `b` and vice versa, then counts how often the token's gold
/// semantic head equals its syntactic head (match) and how often a gold
/// semantic edge into the token runs against a syntactic edge (mismatch).
pub fn head_match_stats(
    gold: &[SemanticGraph],
    trees: &[SyntacticTree],
    a: &[SemanticGraph],
    b: &[SemanticGraph],
) -> Result<HeadMatchTable, EvalError> {
    check_aligned("syntactic tree", gold, trees.iter().map(SyntacticTree::len))?;
    check_aligned("predictions A", gold, a.iter().map(SemanticGraph::len))?;
    check_aligned("predictions B", gold, b.iter().map(SemanticGraph::len))?;
    let mut table = HeadMatchTable::default();
    for k in 0..gold.len() {
        let (g, tree) = (&gold[k], &trees[k]);
        for j in 1..=g.len() {
            let gold_heads = incoming_heads(g, j);
            let is_match = gold_heads.contains(&tree.head(j));
            let is_mismatch = gold_heads.iter().any(|&h| h != 0 && tree.head(h) == j);
            let gold_labeled = incoming_labeled(g, j);
            let labeled = (
                incoming_labeled(&a[k], j) == gold_labeled,
                incoming_labeled(&b[k], j) == gold_labeled,
            );
            let unlabeled = (
                incoming_heads(&a[k], j) == gold_heads,
                incoming_heads(&b[k], j) == gold_heads,
            );
            for ((a_ok, b_ok), (set_a, set_b)) in [
                (labeled, (&mut table.labeled_a, &mut table.labeled_b)),
                (unlabeled, (&mut table.unlabeled_a, &mut table.unlabeled_b)),
            ] {
                let target = match (a_ok, b_ok) {
                    (true, false) => set_a,
                    (false, true) => set_b,
                    _ => continue,
                };
                target.tokens += 1;
                target.matches += usize::from(is_match);
                target.mismatches += usize::from(is_mismatch);
            }
        }
    }
    Ok(table)
}

/// Gold edges recovered by the multitask model but missed by the single-task
/// model, attributed to the syntactic relation of the edge's dependent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelContribution {
    pub counts: BTreeMap<String, usize>,
}

impl LabelContribution {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Percentages summing to 100; empty when nothing improved.
    pub fn percentages(&self) -> BTreeMap<String, f64> {
        let total = self.total();
        self.counts
            .iter()
            .map(|(rel, &c)| (rel.clone(), 100.0 * c as f64 / total as f64))
            .collect()
    }

    pub fn to_series(&self) -> String {
        let mut out = String::from("deprel\tpercent\tcount\n");
        for (rel, pct) in self.percentages() {
            writeln!(out, "{rel}\t{pct:.6}\t{}", self.counts[&rel]).unwrap();
        }
        out
    }

    pub fn to_key_value(&self) -> String {
        let mut out = format!("improved_edges={}\n", self.total());
        for (rel, pct) in self.percentages() {
            writeln!(out, "contribution[{rel}]={pct:.6}").unwrap();
        }
        out
    }
}

pub fn label_contribution(
    multitask: &[SemanticGraph],
    single: &[SemanticGraph],
    gold: &[SemanticGraph],
    trees: &[SyntacticTree],
) -> Result<LabelContribution, EvalError> {
    check_aligned("multitask predictions", gold, multitask.iter().map(SemanticGraph::len))?;
    check_aligned("single-task predictions", gold, single.iter().map(SemanticGraph::len))?;
    check_aligned("syntactic tree", gold, trees.iter().map(SyntacticTree::len))?;
    let mut contribution = LabelContribution::default();
    for k in 0..gold.len() {
        for (h, d, label) in gold[k].edges() {
            let multi_ok = multitask[k].label(h, d) == Some(label);
            let single_ok = single[k].label(h, d) == Some(label);
            if multi_ok && !single_ok {
                *contribution
                    .counts
                    .entry(trees[k].deprel(d).to_string())
                    .or_default() += 1;
            }
        }
    }
    Ok(contribution)
}
