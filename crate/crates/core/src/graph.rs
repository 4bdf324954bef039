//! Sentences, semantic graphs, projected partial graphs and syntactic trees.
//!
//! Token positions are 1-based. Position 0 is the dummy root: top nodes are
//! stored as ordinary edges `(0, t)` carrying the reserved label [`TOP_LABEL`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Reserved label of edges leaving the dummy root.
pub const TOP_LABEL: &str = "TOP";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("token at position {position} has index {index}, expected {expected}")]
    TokenIndex {
        position: usize,
        index: usize,
        expected: usize,
    },
    #[error("edge ({head}, {dependent}) is out of range for a sentence of {len} tokens")]
    EdgeOutOfRange {
        head: usize,
        dependent: usize,
        len: usize,
    },
    #[error("self-loop on token {0}")]
    SelfLoop(usize),
    #[error("conflicting labels {first:?} and {second:?} on edge ({head}, {dependent})")]
    ConflictingLabel {
        head: usize,
        dependent: usize,
        first: String,
        second: String,
    },
    #[error("edge ({head}, {dependent}) has label {label:?}; root edges must be labeled {TOP_LABEL:?} and only root edges may be")]
    TopLabel {
        head: usize,
        dependent: usize,
        label: String,
    },
    #[error("aligned index {index} is out of range for a sentence of {len} tokens")]
    AlignedOutOfRange { index: usize, len: usize },
    #[error("edge ({head}, {dependent}) touches an unaligned token")]
    UndecidedEdge { head: usize, dependent: usize },
    #[error("tree has {heads} heads and {deprels} labels for {tokens} tokens")]
    TreeLength {
        tokens: usize,
        heads: usize,
        deprels: usize,
    },
    #[error("head {head} of token {dependent} is out of range for a sentence of {len} tokens")]
    HeadOutOfRange {
        dependent: usize,
        head: usize,
        len: usize,
    },
    #[error("dependency length is undefined for head {head} and dependent {dependent}")]
    InvalidLength { head: usize, dependent: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub pos: String,
    /// Frame/sense column, carried opaquely. Empty when absent.
    pub frame: String,
}

impl Token {
    pub fn new(
        index: usize,
        form: impl Into<String>,
        lemma: impl Into<String>,
        pos: impl Into<String>,
    ) -> Self {
        Token {
            index,
            form: form.into(),
            lemma: lemma.into(),
            pos: pos.into(),
            frame: String::new(),
        }
    }
}

fn check_tokens(tokens: &[Token]) -> Result<(), GraphError> {
    for (position, token) in tokens.iter().enumerate() {
        if token.index != position + 1 {
            return Err(GraphError::TokenIndex {
                position,
                index: token.index,
                expected: position + 1,
            });
        }
    }
    Ok(())
}

/// A labeled directed graph over the tokens of one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticGraph {
    tokens: Vec<Token>,
    edges: BTreeMap<(usize, usize), String>,
}

impl SemanticGraph {
    /// A graph without edges.
    pub fn new(tokens: Vec<Token>) -> Result<Self, GraphError> {
        Self::from_edges(tokens, std::iter::empty::<(usize, usize, String)>())
    }

    /// Builds a graph, rejecting out-of-range endpoints, self-loops,
    /// misplaced top labels and contradicting duplicate edges. Identical
    /// duplicates collapse.
    pub fn from_edges<I, S>(tokens: Vec<Token>, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize, S)>,
        S: Into<String>,
    {
        check_tokens(&tokens)?;
        let len = tokens.len();
        let mut map: BTreeMap<(usize, usize), String> = BTreeMap::new();
        for (head, dependent, label) in edges {
            let label = label.into();
            if head > len || dependent == 0 || dependent > len {
                return Err(GraphError::EdgeOutOfRange {
                    head,
                    dependent,
                    len,
                });
            }
            if head == dependent {
                return Err(GraphError::SelfLoop(head));
            }
            if (head == 0) != (label == TOP_LABEL) {
                return Err(GraphError::TopLabel {
                    head,
                    dependent,
                    label,
                });
            }
            match map.get(&(head, dependent)) {
                Some(existing) if *existing != label => {
                    return Err(GraphError::ConflictingLabel {
                        head,
                        dependent,
                        first: existing.clone(),
                        second: label,
                    })
                }
                Some(_) => {}
                None => {
                    map.insert((head, dependent), label);
                }
            }
        }
        Ok(SemanticGraph { tokens, edges: map })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Number of tokens, not counting the dummy root.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Edges ordered by (head, dependent), top edges included.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &str)> + '_ {
        self.edges.iter().map(|(&(h, d), l)| (h, d, l.as_str()))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn label(&self, head: usize, dependent: usize) -> Option<&str> {
        self.edges.get(&(head, dependent)).map(String::as_str)
    }

    pub fn tops(&self) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .range((0, 0)..(1, 0))
            .map(|(&(_, dependent), _)| dependent)
    }

    /// Heads of `dependent` (including 0 for a top) with their labels.
    pub fn incoming(&self, dependent: usize) -> impl Iterator<Item = (usize, &str)> + '_ {
        self.edges
            .iter()
            .filter(move |(&(_, d), _)| d == dependent)
            .map(|(&(h, _), l)| (h, l.as_str()))
    }

    /// The same sentence without any edges.
    pub fn strip_edges(&self) -> SemanticGraph {
        SemanticGraph {
            tokens: self.tokens.clone(),
            edges: BTreeMap::new(),
        }
    }
}

/// A structural problem reported by [`validate_graph`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Tokens lying on, or only reachable through, a directed cycle.
    Cycle { tokens: Vec<usize> },
    MissingTop,
    MultipleTops { tops: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { tokens } => write!(f, "cycle through tokens {tokens:?}"),
            Violation::MissingTop => f.write_str("graph has no top node"),
            Violation::MultipleTops { tops } => write!(f, "graph has several top nodes {tops:?}"),
        }
    }
}

/// Checks acyclicity and, in strict mode (gold graphs), the unique top.
pub fn validate_graph(graph: &SemanticGraph, strict: bool) -> Vec<Violation> {
    let mut violations = Vec::new();
    let cyclic = cyclic_tokens(graph);
    if !cyclic.is_empty() {
        violations.push(Violation::Cycle { tokens: cyclic });
    }
    if strict {
        let tops: Vec<usize> = graph.tops().collect();
        match tops.len() {
            0 => violations.push(Violation::MissingTop),
            1 => {}
            _ => violations.push(Violation::MultipleTops { tops }),
        }
    }
    violations
}

/// True iff the edges between real tokens contain no directed cycle.
pub fn is_acyclic(graph: &SemanticGraph) -> bool {
    cyclic_tokens(graph).is_empty()
}

/// Kahn's algorithm; returns the tokens that could not be ordered.
fn cyclic_tokens(graph: &SemanticGraph) -> Vec<usize> {
    let n = graph.len();
    let mut indegree = vec![0usize; n + 1];
    let mut children = vec![Vec::new(); n + 1];
    for (head, dependent, _) in graph.edges() {
        if head != 0 {
            indegree[dependent] += 1;
            children[head].push(dependent);
        }
    }
    let mut queue: Vec<usize> = (1..=n).filter(|&t| indegree[t] == 0).collect();
    let mut seen = 0;
    while let Some(node) = queue.pop() {
        seen += 1;
        for &child in &children[node] {
            indegree[child] -= 1;
            if indegree[child] == 0 {
                queue.push(child);
            }
        }
    }
    if seen == n {
        return Vec::new();
    }
    (1..=n).filter(|&t| indegree[t] > 0).collect()
}

/// Distance between a head and its dependent, adjacent tokens having length 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DependencyLength(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LengthBucket {
    One,
    Two,
    Three,
    Four,
    FiveToNine,
    TenOrMore,
}

impl LengthBucket {
    pub const ALL: [LengthBucket; 6] = [
        LengthBucket::One,
        LengthBucket::Two,
        LengthBucket::Three,
        LengthBucket::Four,
        LengthBucket::FiveToNine,
        LengthBucket::TenOrMore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LengthBucket::One => "1",
            LengthBucket::Two => "2",
            LengthBucket::Three => "3",
            LengthBucket::Four => "4",
            LengthBucket::FiveToNine => "5-9",
            LengthBucket::TenOrMore => ">=10",
        }
    }
}

impl fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl DependencyLength {
    pub fn bucket(self) -> LengthBucket {
        match self.0 {
            0 | 1 => LengthBucket::One,
            2 => LengthBucket::Two,
            3 => LengthBucket::Three,
            4 => LengthBucket::Four,
            5..=9 => LengthBucket::FiveToNine,
            _ => LengthBucket::TenOrMore,
        }
    }
}

/// `|head - dependent|`. Root edges and self-loops have no length.
pub fn dependency_length(head: usize, dependent: usize) -> Result<DependencyLength, GraphError> {
    if head == 0 || head == dependent {
        return Err(GraphError::InvalidLength { head, dependent });
    }
    Ok(DependencyLength(head.abs_diff(dependent)))
}

/// A projected graph together with the set of aligned target positions.
///
/// A cell `(i, j)` is decided iff both `i` and `j` are aligned; the root (0)
/// is always aligned. Edges only ever live in decided cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialGraph {
    graph: SemanticGraph,
    aligned: BTreeSet<usize>,
}

impl PartialGraph {
    pub fn new(
        graph: SemanticGraph,
        aligned: impl IntoIterator<Item = usize>,
    ) -> Result<Self, GraphError> {
        let len = graph.len();
        let mut set: BTreeSet<usize> = aligned.into_iter().collect();
        set.insert(0);
        if let Some(&index) = set.iter().next_back() {
            if index > len {
                return Err(GraphError::AlignedOutOfRange { index, len });
            }
        }
        for (head, dependent, _) in graph.edges() {
            if !set.contains(&head) || !set.contains(&dependent) {
                return Err(GraphError::UndecidedEdge { head, dependent });
            }
        }
        Ok(PartialGraph {
            graph,
            aligned: set,
        })
    }

    /// Every cell decided.
    pub fn full(graph: SemanticGraph) -> Self {
        let aligned = (0..=graph.len()).collect();
        PartialGraph { graph, aligned }
    }

    pub fn graph(&self) -> &SemanticGraph {
        &self.graph
    }

    pub fn into_graph(self) -> SemanticGraph {
        self.graph
    }

    /// Aligned positions, always containing 0.
    pub fn aligned(&self) -> &BTreeSet<usize> {
        &self.aligned
    }

    pub fn is_aligned(&self, index: usize) -> bool {
        self.aligned.contains(&index)
    }

    pub fn is_decided(&self, head: usize, dependent: usize) -> bool {
        self.is_aligned(head) && self.is_aligned(dependent)
    }

    pub fn is_fully_decided(&self) -> bool {
        self.aligned.len() == self.graph.len() + 1
    }

    /// Number of aligned real tokens.
    pub fn aligned_tokens(&self) -> usize {
        self.aligned.len() - 1
    }

    /// Fraction of real tokens that are aligned. Zero for an empty sentence.
    pub fn density(&self) -> f64 {
        if self.graph.is_empty() {
            0.0
        } else {
            self.aligned_tokens() as f64 / self.graph.len() as f64
        }
    }
}

/// Single-head labeled dependency tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntacticTree {
    tokens: Vec<Token>,
    heads: Vec<usize>,
    deprels: Vec<String>,
    /// Comment lines (without the leading `#`) carried along with the tree.
    pub comments: Vec<String>,
}

impl SyntacticTree {
    /// `heads[k]` and `deprels[k]` describe token `k + 1`.
    pub fn new(
        tokens: Vec<Token>,
        heads: Vec<usize>,
        deprels: Vec<String>,
    ) -> Result<Self, GraphError> {
        check_tokens(&tokens)?;
        let len = tokens.len();
        if heads.len() != len || deprels.len() != len {
            return Err(GraphError::TreeLength {
                tokens: len,
                heads: heads.len(),
                deprels: deprels.len(),
            });
        }
        for (k, &head) in heads.iter().enumerate() {
            if head > len {
                return Err(GraphError::HeadOutOfRange {
                    dependent: k + 1,
                    head,
                    len,
                });
            }
            if head == k + 1 {
                return Err(GraphError::SelfLoop(head));
            }
        }
        Ok(SyntacticTree {
            tokens,
            heads,
            deprels,
            comments: Vec::new(),
        })
    }

    pub fn with_comments(mut self, comments: Vec<String>) -> Self {
        self.comments = comments;
        self
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Heads of tokens `1..=n`, in order.
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn deprels(&self) -> &[String] {
        &self.deprels
    }

    /// Head of the 1-based token `dependent`.
    pub fn head(&self, dependent: usize) -> usize {
        self.heads[dependent - 1]
    }

    pub fn deprel(&self, dependent: usize) -> &str {
        &self.deprels[dependent - 1]
    }

    /// Exactly one root attachment and every token reaches the root.
    pub fn is_well_formed(&self) -> bool {
        if self.heads.iter().filter(|&&h| h == 0).count() != 1 {
            return false;
        }
        let n = self.len();
        // 0 = unvisited, 1 = on current path, 2 = reaches root
        let mut state = vec![0u8; n + 1];
        state[0] = 2;
        for start in 1..=n {
            let mut path = Vec::new();
            let mut node = start;
            while state[node] == 0 {
                state[node] = 1;
                path.push(node);
                node = self.heads[node - 1];
            }
            if state[node] == 1 {
                return false;
            }
            for p in path {
                state[p] = 2;
            }
        }
        true
    }
}
