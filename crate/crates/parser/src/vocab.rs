use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use xsdp_autodiff::Tensor;
use xsdp_core::{SemanticGraph, SyntacticTree, Token, TOP_LABEL};

use crate::{ParserError, Sentence};

pub const UNKNOWN: &str = "<unk>";

/// String-to-index map whose index 0 is the unknown entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
        Vocab { items, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.items
    }
}

impl Vocab {
    /// Sorted, de-duplicated entries after the unknown entry.
    pub fn build<I, S>(entries: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = entries.into_iter().map(Into::into).filter(|s| s != UNKNOWN).collect();
        let mut items = vec![UNKNOWN.to_string()];
        items.extend(set);
        Vocab::from(items)
    }

    /// Index of `item`, 0 when unknown.
    pub fn get(&self, item: &str) -> usize {
        self.index.get(item).copied().unwrap_or(0)
    }

    pub fn contains(&self, item: &str) -> bool {
        self.index.contains_key(item)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Ordered label inventory of one task. The order is lexicographic and
/// decides argmax ties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for LabelSet {
    fn from(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
        LabelSet { labels, index }
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(l: LabelSet) -> Self {
        l.labels
    }
}

impl LabelSet {
    pub fn build<I, S>(labels: I) -> LabelSet
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        LabelSet::from(set.into_iter().collect::<Vec<_>>())
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// All vocabularies a model needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: Vocab,
    pub chars: Vocab,
    pub pos: Vocab,
    /// Rows of the pretrained table; row 0 is the all-zero unknown vector.
    pub pretrained: Vocab,
    /// Semantic edge labels, excluding the top label.
    pub semantic_labels: LabelSet,
    pub syntactic_labels: LabelSet,
}

impl Vocabularies {
    /// Collects words, characters and POS tags from all training sentences
    /// and labels from the gold structures.
    pub fn build(
        sentences: &[&[Token]],
        graphs: &[&SemanticGraph],
        trees: &[&SyntacticTree],
    ) -> Vocabularies {
        let tokens = || sentences.iter().flat_map(|s| s.iter());
        Vocabularies {
            words: Vocab::build(tokens().map(|t| t.form.clone())),
            chars: Vocab::build(tokens().flat_map(|t| t.form.chars().map(String::from))),
            pos: Vocab::build(tokens().map(|t| t.pos.clone())),
            pretrained: Vocab::build(std::iter::empty::<String>()),
            semantic_labels: LabelSet::build(
                graphs
                    .iter()
                    .flat_map(|g| g.edges().map(|(_, _, l)| l.to_string()))
                    .filter(|l| l != TOP_LABEL),
            ),
            syntactic_labels: LabelSet::build(trees.iter().flat_map(|t| t.deprels().iter().cloned())),
        }
    }
}

/// Token indices of one sentence, computed once per sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub pretrained: Vec<usize>,
    pub pos: Vec<usize>,
    /// Character ids of each distinct form in the sentence.
    pub char_words: Vec<Vec<usize>>,
    /// Position of each token's form in `char_words`.
    pub char_slot: Vec<usize>,
    pub context: Option<Tensor>,
}

impl EncodedSentence {
    pub fn new(sentence: &Sentence, vocab: &Vocabularies) -> EncodedSentence {
        let tokens = &sentence.tokens;
        let mut distinct: HashMap<&str, usize> = HashMap::new();
        let mut char_words = Vec::new();
        let char_slot = tokens
            .iter()
            .map(|t| {
                *distinct.entry(t.form.as_str()).or_insert_with(|| {
                    char_words.push(t.form.chars().map(|c| vocab.chars.get(c.encode_utf8(&mut [0; 4]))).collect());
                    char_words.len() - 1
                })
            })
            .collect();
        EncodedSentence {
            words: tokens.iter().map(|t| vocab.words.get(&t.form)).collect(),
            pretrained: tokens.iter().map(|t| vocab.pretrained.get(&t.form)).collect(),
            pos: tokens.iter().map(|t| vocab.pos.get(&t.pos)).collect(),
            char_words,
            char_slot,
            context: sentence.context.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Reads word vectors in the common text layout: one `word v1 .. vd` line
/// per word, with an optional leading `count dim` header line.
///
/// Returns a vocabulary and a matching table whose row 0 is zero.
pub fn read_pretrained(reader: impl BufRead, dim: usize) -> Result<(Vocab, Tensor), ParserError> {
    let mut words = vec![UNKNOWN.to_string()];
    let mut data = vec![0.0; dim];
    let mut seen = std::collections::HashSet::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if k == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(ParserError::Pretrained(format!(
                "line {}: expected a word and {dim} values, found {} fields",
                k + 1,
                fields.len()
            )));
        }
        if !seen.insert(fields[0].to_string()) {
            continue;
        }
        for f in &fields[1..] {
            data.push(f.parse().map_err(|_| {
                ParserError::Pretrained(format!("line {}: {f:?} is not a number", k + 1))
            })?);
        }
        words.push(fields[0].to_string());
    }
    let rows = words.len();
    Ok((Vocab::from(words), Tensor::new(rows, dim, data)?))
}
