//! Annotation projection through intersected word alignments, plus the
//! corpus-level sampling and splitting used to build training sets.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{GraphError, PartialGraph, SemanticGraph, Token};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("alignment covers {found} source tokens but the source sentence has {expected}")]
    SourceLength { found: usize, expected: usize },
    #[error("source token {source_index} is aligned to target {target}, beyond the target length {len}")]
    TargetOutOfRange {
        source_index: usize,
        target: usize,
        len: usize,
    },
    #[error("conflicting projected labels {first:?} and {second:?} on target cell ({head}, {dependent})")]
    ConflictingProjection {
        head: usize,
        dependent: usize,
        first: String,
        second: String,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("alignment density is undefined for an empty sentence")]
    EmptySentence,
    #[error("sample size {0} must be even and positive")]
    OddSample(usize),
    #[error("need {needed} sentences with density {side} {threshold}, found {found}")]
    InsufficientSentences {
        needed: usize,
        found: usize,
        side: &'static str,
        threshold: f64,
    },
    #[error("held-out fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
}

/// One-to-one source-to-target map for a sentence pair.
///
/// `target(0) == Some(0)`: the dummy roots are always aligned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntersectedAlignment {
    map: Vec<Option<usize>>,
}

impl IntersectedAlignment {
    /// Builds from 1-based `(source, target)` links, which must already be
    /// one-to-one.
    pub fn from_links(
        source_len: usize,
        links: impl IntoIterator<Item = (usize, usize)>,
    ) -> IntersectedAlignment {
        let mut map = vec![None; source_len + 1];
        map[0] = Some(0);
        for (s, t) in links {
            map[s] = Some(t);
        }
        IntersectedAlignment { map }
    }

    pub fn source_len(&self) -> usize {
        self.map.len() - 1
    }

    pub fn target(&self, source: usize) -> Option<usize> {
        self.map.get(source).copied().flatten()
    }

    /// Links between real tokens, 1-based.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.map
            .iter()
            .enumerate()
            .skip(1)
            .filter_map(|(s, t)| t.map(|t| (s, t)))
    }

    /// Aligned target positions, excluding the root.
    pub fn aligned_targets(&self) -> BTreeSet<usize> {
        self.links().map(|(_, t)| t).collect()
    }
}

/// Intersects the two alignment directions and then drops every link whose
/// source or target takes part in more than one surviving link.
///
/// Both sets are `(source, target)` pairs; links with a source beyond
/// `source_len` are ignored.
pub fn intersect_alignments(
    forward: &BTreeSet<(usize, usize)>,
    backward: &BTreeSet<(usize, usize)>,
    source_len: usize,
) -> IntersectedAlignment {
    let both: Vec<(usize, usize)> = forward
        .intersection(backward)
        .copied()
        .filter(|&(s, t)| s >= 1 && t >= 1 && s <= source_len)
        .collect();
    let mut source_degree: BTreeMap<usize, usize> = BTreeMap::new();
    let mut target_degree: BTreeMap<usize, usize> = BTreeMap::new();
    for &(s, t) in &both {
        *source_degree.entry(s).or_default() += 1;
        *target_degree.entry(t).or_default() += 1;
    }
    IntersectedAlignment::from_links(
        source_len,
        both.into_iter()
            .filter(|(s, t)| source_degree[s] == 1 && target_degree[t] == 1),
    )
}

/// Transfers every source edge whose endpoints are both aligned.
///
/// The result's aligned set is the root plus every aligned target token;
/// cells touching an unaligned token stay undecided.
pub fn project_graph(
    source: &SemanticGraph,
    alignment: &IntersectedAlignment,
    target_sentence: &[Token],
) -> Result<PartialGraph, ProjectionError> {
    if alignment.source_len() != source.len() {
        return Err(ProjectionError::SourceLength {
            found: alignment.source_len(),
            expected: source.len(),
        });
    }
    let len = target_sentence.len();
    for (s, t) in alignment.links() {
        if t > len {
            return Err(ProjectionError::TargetOutOfRange {
                source_index: s,
                target: t,
                len,
            });
        }
    }
    let mut projected: BTreeMap<(usize, usize), &str> = BTreeMap::new();
    for (head, dependent, label) in source.edges() {
        let (Some(h), Some(d)) = (alignment.target(head), alignment.target(dependent)) else {
            continue;
        };
        if let Some(&first) = projected.get(&(h, d)) {
            if first != label {
                return Err(ProjectionError::ConflictingProjection {
                    head: h,
                    dependent: d,
                    first: first.to_string(),
                    second: label.to_string(),
                });
            }
        }
        projected.insert((h, d), label);
    }
    let graph = SemanticGraph::from_edges(
        target_sentence.to_vec(),
        projected.into_iter().map(|((h, d), l)| (h, d, l)),
    )?;
    Ok(PartialGraph::new(graph, alignment.aligned_targets())?)
}

/// Aligned target tokens divided by the target length.
pub fn alignment_density(
    alignment: &IntersectedAlignment,
    target_len: usize,
) -> Result<f64, ProjectionError> {
    if target_len == 0 {
        return Err(ProjectionError::EmptySentence);
    }
    let aligned = alignment
        .aligned_targets()
        .into_iter()
        .filter(|&t| t <= target_len)
        .count();
    Ok(aligned as f64 / target_len as f64)
}

/// Draws `size / 2` sentences with density below `threshold` and `size / 2`
/// at or above it. The result keeps corpus order.
pub fn density_sample(
    corpus: &[PartialGraph],
    size: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<PartialGraph>, ProjectionError> {
    let chosen = density_sample_indices(corpus, size, threshold, seed)?;
    Ok(chosen.into_iter().map(|i| corpus[i].clone()).collect())
}

/// Corpus positions of the sentences [`density_sample`] draws, ascending.
pub fn density_sample_indices(
    corpus: &[PartialGraph],
    size: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<usize>, ProjectionError> {
    if size == 0 || !size.is_multiple_of(2) {
        return Err(ProjectionError::OddSample(size));
    }
    let half = size / 2;
    let (mut below, mut above): (Vec<usize>, Vec<usize>) =
        (0..corpus.len()).partition(|&i| corpus[i].density() < threshold);
    for (side, indices) in [("<", &below), (">=", &above)] {
        if indices.len() < half {
            return Err(ProjectionError::InsufficientSentences {
                needed: half,
                found: indices.len(),
                side,
                threshold,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    below.shuffle(&mut rng);
    above.shuffle(&mut rng);
    let mut chosen: Vec<usize> = below[..half].iter().chain(&above[..half]).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Splits off `round(fraction * len)` held-out items; both parts keep corpus
/// order.
pub fn heldout_split<T: Clone>(
    corpus: &[T],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), ProjectionError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ProjectionError::Fraction(fraction));
    }
    if corpus.is_empty() {
        return Err(ProjectionError::EmptyCorpus);
    }
    let held = (fraction * corpus.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_heldout = vec![false; corpus.len()];
    for &i in &order[..held] {
        is_heldout[i] = true;
    }
    let mut train = Vec::with_capacity(corpus.len() - held);
    let mut heldout = Vec::with_capacity(held);
    for (item, held) in corpus.iter().zip(is_heldout) {
        if held {
            heldout.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, heldout))
}
