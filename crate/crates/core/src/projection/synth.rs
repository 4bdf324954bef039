//! Synthetic parallel corpora with known gold structure.
//!
//! Target sentences come from a small clause grammar over a random lexicon
//! (subject, verb, optional object, prepositional phrases). Each sentence has
//! a gold syntactic tree and a gold semantic graph that follows the tree
//! except for dependents whose word is marked as *reversing*: their semantic
//! edge points from the dependent to its syntactic head. Since reversing
//! edges of a rooted tree never closes a cycle, the gold graphs are acyclic.
//!
//! The source side is a noisy translation: counterparts of the target
//! tokens, locally reordered, with inserted function words, some missing
//! counterparts and per-edge annotation noise. Forward and backward
//! alignments are built so that their intersection aligns each target token
//! with probability `alignment_density`; unaligned tokens fail in one of
//! three ways (no counterpart, a one-directional link, or a competing link
//! removed by the one-to-one filter).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{intersect_alignments, project_graph, ProjectionError};
use crate::formats::AlignmentFile;
use crate::graph::{is_acyclic, PartialGraph, SemanticGraph, SyntacticTree, Token, TOP_LABEL};

const MAX_SENTENCE_LEN: usize = 40;
const SWAP_RATE: f64 = 0.2;
const INSERTION_RATE: f64 = 0.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("{name} = {value} must lie in [0, 1]")]
    Rate { name: &'static str, value: f64 },
    #[error("sentence length range {min}..={max} is not feasible (lengths must lie in 2..={MAX_SENTENCE_LEN})")]
    Lengths { min: usize, max: usize },
    #[error("the label alphabet is empty")]
    NoLabels,
    #[error("label {0:?} is reserved or not a single token")]
    BadLabel(String),
    #[error("could not generate a sentence within {min}..={max} tokens")]
    Exhausted { min: usize, max: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sentence_count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Semantic labels, assigned to the grammar relations in order
    /// (cycling when there are fewer labels than relations).
    pub labels: Vec<String>,
    pub alignment_density: f64,
    pub syntactic_agreement: f64,
    pub edge_noise: f64,
    pub seed: u64,
    /// Seeds the lexicon, so corpora drawn with different `seed`s share a
    /// language.
    pub lexicon_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentence_count: 100,
            min_len: 4,
            max_len: 15,
            labels: default_labels(),
            alignment_density: 0.8,
            syntactic_agreement: 0.8,
            edge_noise: 0.05,
            seed: 7,
            lexicon_seed: 0,
        }
    }
}

pub fn default_labels() -> Vec<String> {
    [
        "ACT-arg", "PAT-arg", "RSTR", "DET-arg", "QUANT", "CASE", "LOC", "APP", "PUNCT",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, value) in [
            ("alignment_density", self.alignment_density),
            ("syntactic_agreement", self.syntactic_agreement),
            ("edge_noise", self.edge_noise),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::Rate { name, value });
            }
        }
        if self.min_len < 2 || self.min_len > self.max_len || self.max_len > MAX_SENTENCE_LEN {
            return Err(SynthError::Lengths {
                min: self.min_len,
                max: self.max_len,
            });
        }
        if self.labels.is_empty() {
            return Err(SynthError::NoLabels);
        }
        for label in &self.labels {
            if label.is_empty()
                || label == "_"
                || label == TOP_LABEL
                || label.contains(char::is_whitespace)
            {
                return Err(SynthError::BadLabel(label.clone()));
            }
        }
        Ok(())
    }
}

/// Everything [`synth_corpus`] produces, index-aligned per sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub source: Vec<SemanticGraph>,
    pub target_sentences: Vec<Vec<Token>>,
    pub gold: Vec<SemanticGraph>,
    /// `(source, target)` links of the source-to-target run.
    pub forward: AlignmentFile,
    /// `(source, target)` links of the target-to-source run.
    pub backward: AlignmentFile,
    pub syntax: Vec<SyntacticTree>,
}

impl SynthCorpus {
    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    /// Intersects the alignments and projects every source graph.
    pub fn project(&self) -> Result<Vec<PartialGraph>, ProjectionError> {
        (0..self.len())
            .map(|k| {
                let a = intersect_alignments(
                    &self.forward.sentences[k],
                    &self.backward.sentences[k],
                    self.source[k].len(),
                );
                project_graph(&self.source[k], &a, &self.target_sentences[k])
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Noun,
    Verb,
    Adj,
    Det,
    Adp,
    Num,
    Punct,
}

impl Class {
    fn tag(self) -> &'static str {
        match self {
            Class::Noun => "NOUN",
            Class::Verb => "VERB",
            Class::Adj => "ADJ",
            Class::Det => "DET",
            Class::Adp => "ADP",
            Class::Num => "NUM",
            Class::Punct => "PUNCT",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Relation {
    Nsubj,
    Obj,
    Amod,
    Det,
    Nummod,
    Case,
    Obl,
    Nmod,
    Punct,
}

impl Relation {
    fn deprel(self) -> &'static str {
        match self {
            Relation::Nsubj => "nsubj",
            Relation::Obj => "obj",
            Relation::Amod => "amod",
            Relation::Det => "det",
            Relation::Nummod => "nummod",
            Relation::Case => "case",
            Relation::Obl => "obl",
            Relation::Nmod => "nmod",
            Relation::Punct => "punct",
        }
    }

    fn ordinal(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug)]
struct Word {
    form: String,
    class: Class,
    /// Uniform draw; the word reverses its semantic edge iff this is below
    /// `1 - syntactic_agreement`.
    reversal: f64,
    /// Prepositions only: whether the phrase attaches to the verb.
    verbal: bool,
}

struct Lexicon {
    words: Vec<Word>,
}

impl Lexicon {
    fn generate(seed: u64) -> Lexicon {
        const ONSETS: [&str; 12] = ["k", "t", "m", "p", "r", "s", "v", "z", "č", "ř", "n", "l"];
        const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "y"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e71_c0de_u64);
        let mut seen = BTreeSet::new();
        let mut words = Vec::new();
        let classes = [
            (Class::Noun, 30),
            (Class::Verb, 12),
            (Class::Adj, 10),
            (Class::Det, 3),
            (Class::Adp, 6),
            (Class::Num, 5),
        ];
        for (class, count) in classes {
            let mut made = 0;
            while made < count {
                let syllables = rng.gen_range(1..=3);
                let mut form = String::new();
                for _ in 0..syllables {
                    form.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
                    form.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
                }
                if class == Class::Verb {
                    form.push('t');
                }
                if !seen.insert(form.clone()) {
                    continue;
                }
                words.push(Word {
                    form,
                    class,
                    reversal: rng.gen(),
                    verbal: rng.gen_bool(0.5),
                });
                made += 1;
            }
        }
        for form in [".", ","] {
            words.push(Word {
                form: form.to_string(),
                class: Class::Punct,
                reversal: rng.gen(),
                verbal: false,
            });
        }
        Lexicon { words }
    }

    fn pick(&self, class: Class, rng: &mut impl Rng) -> usize {
        let candidates: Vec<usize> = (0..self.words.len())
            .filter(|&i| self.words[i].class == class)
            .collect();
        candidates[rng.gen_range(0..candidates.len())]
    }
}

/// A sentence under construction: word ids, heads (0 = root) and relations.
#[derive(Default)]
struct Draft {
    words: Vec<usize>,
    heads: Vec<usize>,
    relations: Vec<Option<Relation>>,
}

impl Draft {
    fn push(&mut self, word: usize) -> usize {
        self.words.push(word);
        self.heads.push(0);
        self.relations.push(None);
        self.words.len()
    }

    fn attach(&mut self, dependent: usize, head: usize, relation: Relation) {
        self.heads[dependent - 1] = head;
        self.relations[dependent - 1] = Some(relation);
    }

    /// Pushes `[DET] [NUM] ADJ* NOUN` and returns the noun's position.
    fn noun_phrase(&mut self, lexicon: &Lexicon, rng: &mut impl Rng) -> usize {
        let mut modifiers = Vec::new();
        if rng.gen_bool(0.4) {
            modifiers.push((self.push(lexicon.pick(Class::Det, rng)), Relation::Det));
        }
        if rng.gen_bool(0.15) {
            modifiers.push((self.push(lexicon.pick(Class::Num, rng)), Relation::Nummod));
        }
        let adjectives = [0, 0, 0, 1, 1, 2][rng.gen_range(0..6)];
        for _ in 0..adjectives {
            modifiers.push((self.push(lexicon.pick(Class::Adj, rng)), Relation::Amod));
        }
        let noun = self.push(lexicon.pick(Class::Noun, rng));
        for (m, relation) in modifiers {
            self.attach(m, noun, relation);
        }
        noun
    }
}

fn generate_sentence(lexicon: &Lexicon, rng: &mut impl Rng) -> Draft {
    let mut d = Draft::default();
    let subject = d.noun_phrase(lexicon, rng);
    let verb = d.push(lexicon.pick(Class::Verb, rng));
    d.attach(subject, verb, Relation::Nsubj);
    let mut last_noun = subject;
    if rng.gen_bool(0.7) {
        let object = d.noun_phrase(lexicon, rng);
        d.attach(object, verb, Relation::Obj);
        last_noun = object;
    }
    let phrases = [0, 0, 1, 1, 2, 3][rng.gen_range(0..6)];
    for _ in 0..phrases {
        let adp_word = lexicon.pick(Class::Adp, rng);
        let adp = d.push(adp_word);
        let noun = d.noun_phrase(lexicon, rng);
        d.attach(adp, noun, Relation::Case);
        if lexicon.words[adp_word].verbal {
            d.attach(noun, verb, Relation::Obl);
        } else {
            d.attach(noun, last_noun, Relation::Nmod);
        }
        last_noun = noun;
    }
    if rng.gen_bool(0.8) {
        let punct = d.push(lexicon.pick(Class::Punct, rng));
        d.attach(punct, verb, Relation::Punct);
    }
    d
}

struct Generated {
    source: SemanticGraph,
    target: Vec<Token>,
    gold: SemanticGraph,
    forward: BTreeSet<(usize, usize)>,
    backward: BTreeSet<(usize, usize)>,
    syntax: SyntacticTree,
}

/// Generates a reproducible synthetic parallel corpus.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let lexicon = Lexicon::generate(cfg.lexicon_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut corpus = SynthCorpus {
        source: Vec::with_capacity(cfg.sentence_count),
        target_sentences: Vec::with_capacity(cfg.sentence_count),
        gold: Vec::with_capacity(cfg.sentence_count),
        forward: AlignmentFile::default(),
        backward: AlignmentFile::default(),
        syntax: Vec::with_capacity(cfg.sentence_count),
    };
    for _ in 0..cfg.sentence_count {
        let g = generate_pair(cfg, &lexicon, &mut rng)?;
        corpus.source.push(g.source);
        corpus.target_sentences.push(g.target);
        corpus.gold.push(g.gold);
        corpus.forward.sentences.push(g.forward);
        corpus.backward.sentences.push(g.backward);
        corpus.syntax.push(g.syntax);
    }
    Ok(corpus)
}

fn generate_pair(
    cfg: &SynthConfig,
    lexicon: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> Result<Generated, SynthError> {
    let draft = (0..10_000)
        .map(|_| generate_sentence(lexicon, rng))
        .find(|d| (cfg.min_len..=cfg.max_len).contains(&d.words.len()))
        .ok_or(SynthError::Exhausted {
            min: cfg.min_len,
            max: cfg.max_len,
        })?;
    let n = draft.words.len();
    let target: Vec<Token> = draft
        .words
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let word = &lexicon.words[w];
            Token::new(k + 1, word.form.clone(), word.form.clone(), word.class.tag())
        })
        .collect();

    let label_of = |r: Relation| cfg.labels[r.ordinal() % cfg.labels.len()].clone();
    let mut gold_edges = Vec::with_capacity(n);
    let mut deprels = Vec::with_capacity(n);
    for j in 1..=n {
        let head = draft.heads[j - 1];
        match draft.relations[j - 1] {
            None => {
                gold_edges.push((0, j, TOP_LABEL.to_string()));
                deprels.push("root".to_string());
            }
            Some(relation) => {
                let reverses =
                    lexicon.words[draft.words[j - 1]].reversal < 1.0 - cfg.syntactic_agreement;
                if reverses {
                    gold_edges.push((j, head, label_of(relation)));
                } else {
                    gold_edges.push((head, j, label_of(relation)));
                }
                deprels.push(relation.deprel().to_string());
            }
        }
    }
    let gold = SemanticGraph::from_edges(target.clone(), gold_edges).expect("grammar output");
    let syntax =
        SyntacticTree::new(target.clone(), draft.heads.clone(), deprels).expect("grammar output");

    // How each target token fares on the source side.
    #[derive(Clone, Copy, PartialEq)]
    enum Fate {
        Aligned,
        Missing,
        OneWay,
        Contested,
    }
    let fates: Vec<Fate> = (1..=n)
        .map(|j| {
            if rng.gen_bool(cfg.alignment_density) {
                return Fate::Aligned;
            }
            let is_root = draft.relations[j - 1].is_none();
            match rng.gen_range(0..3) {
                0 if !is_root => Fate::Missing,
                0 | 1 => Fate::OneWay,
                _ => Fate::Contested,
            }
        })
        .collect();

    // Source slots: Some(target index) for counterparts, None for insertions.
    let mut slots: Vec<Option<usize>> = Vec::new();
    for j in 1..=n {
        if fates[j - 1] != Fate::Missing {
            slots.push(Some(j));
        }
        if rng.gen_bool(INSERTION_RATE) {
            slots.push(None);
        }
    }
    for k in 1..slots.len() {
        if rng.gen_bool(SWAP_RATE) {
            slots.swap(k - 1, k);
        }
    }
    let mut position_of = vec![None; n + 1];
    position_of[0] = Some(0);
    for (k, slot) in slots.iter().enumerate() {
        if let Some(j) = slot {
            position_of[*j] = Some(k + 1);
        }
    }

    let mut forward = BTreeSet::new();
    let mut backward = BTreeSet::new();
    let mut spurious = Vec::new();
    for j in 1..=n {
        let Some(s) = position_of[j] else { continue };
        match fates[j - 1] {
            Fate::Aligned => {
                forward.insert((s, j));
                backward.insert((s, j));
            }
            Fate::OneWay => {
                if rng.gen_bool(0.5) {
                    forward.insert((s, j));
                } else {
                    backward.insert((s, j));
                }
            }
            Fate::Contested => {
                forward.insert((s, j));
                backward.insert((s, j));
                spurious.push(j);
            }
            Fate::Missing => {}
        }
    }
    // Competing source tokens for contested targets are extra insertions.
    for j in spurious {
        slots.push(None);
        let s = slots.len();
        forward.insert((s, j));
        backward.insert((s, j));
    }

    let source_tokens: Vec<Token> = slots
        .iter()
        .enumerate()
        .map(|(k, slot)| match slot {
            Some(j) => {
                let t = &target[j - 1];
                let form = t.form.to_uppercase();
                Token::new(k + 1, form.clone(), form, t.pos.clone())
            }
            None => Token::new(k + 1, "FX", "FX", "PART"),
        })
        .collect();
    let m = source_tokens.len();
    let mut source_edges: Vec<(usize, usize, String)> = gold
        .edges()
        .filter_map(|(h, d, l)| Some((position_of[h]?, position_of[d]?, l.to_string())))
        .collect();
    add_edge_noise(&mut source_edges, m, &cfg.labels, cfg.edge_noise, rng);
    let source = SemanticGraph::from_edges(source_tokens, source_edges).expect("noise keeps graph valid");

    Ok(Generated {
        source,
        target,
        gold,
        forward,
        backward,
        syntax,
    })
}

/// Relabels or reattaches each non-top edge with probability `rate`, keeping
/// the graph acyclic and free of duplicate cells.
fn add_edge_noise(
    edges: &mut [(usize, usize, String)],
    len: usize,
    labels: &[String],
    rate: f64,
    rng: &mut ChaCha8Rng,
) {
    let tokens: Vec<Token> = (1..=len).map(|i| Token::new(i, "", "", "")).collect();
    for k in 0..edges.len() {
        if edges[k].0 == 0 || !rng.gen_bool(rate) {
            continue;
        }
        if rng.gen_bool(0.5) || len < 3 {
            if let Some(label) = labels.choose(rng) {
                edges[k].2 = label.clone();
            }
            continue;
        }
        let dependent = edges[k].1;
        let head = rng.gen_range(1..=len);
        if head == dependent || edges.iter().any(|e| e.0 == head && e.1 == dependent) {
            continue;
        }
        let old = edges[k].0;
        edges[k].0 = head;
        let candidate = SemanticGraph::from_edges(tokens.clone(), edges.iter().cloned());
        if !candidate.as_ref().is_ok_and(is_acyclic) {
            edges[k].0 = old;
        }
    }
}
