//! SemEval 2015 SDP files.
//!
//! ```text
//! #20001001
//! #aligned: 1 2 4
//! 1   Pierre  Pierre  NNP  -  -  _  _  _
//! 2   Vinken  _generic_proper_ne_  NNP  +  +  _  _  ARG1
//! ...
//! ```
//!
//! Columns are `ID FORM LEMMA POS TOP PRED FRAME ARG1..ARGk`, tab separated.
//! Argument column `k` belongs to the `k`-th token whose PRED is `+`. The
//! optional `#aligned:` comment lists the aligned tokens of a projected graph.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};

use super::{check_field, parse_error, read_lines, FormatError};
use crate::graph::{PartialGraph, SemanticGraph, Token, TOP_LABEL};

const ALIGNED_PREFIX: &str = "#aligned:";
const FILE_HEADER: &str = "#SDP 2015";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SdpEntry {
    Full(SemanticGraph),
    Partial(PartialGraph),
}

impl SdpEntry {
    pub fn graph(&self) -> &SemanticGraph {
        match self {
            SdpEntry::Full(g) => g,
            SdpEntry::Partial(p) => p.graph(),
        }
    }

    /// Full graphs become fully decided partial graphs.
    pub fn to_partial(&self) -> PartialGraph {
        match self {
            SdpEntry::Full(g) => PartialGraph::full(g.clone()),
            SdpEntry::Partial(p) => p.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SdpSentence {
    pub id: String,
    pub entry: SdpEntry,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SdpDocument {
    pub sentences: Vec<SdpSentence>,
}

impl SdpDocument {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn graphs(&self) -> impl Iterator<Item = &SemanticGraph> {
        self.sentences.iter().map(|s| s.entry.graph())
    }
}

pub fn read_sdp(reader: impl BufRead) -> Result<SdpDocument, FormatError> {
    let lines = read_lines(reader)?;
    let mut sentences = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let start = usize::from(lines.first().map(String::as_str) == Some(FILE_HEADER));
    for (i, line) in lines.iter().enumerate().skip(start) {
        if line.is_empty() {
            if !block.is_empty() {
                sentences.push(parse_block(&block, &mut seen_ids)?);
                block.clear();
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        sentences.push(parse_block(&block, &mut seen_ids)?);
    }
    Ok(SdpDocument { sentences })
}

fn parse_block(
    block: &[(usize, &str)],
    seen_ids: &mut HashSet<String>,
) -> Result<SdpSentence, FormatError> {
    let first_line = block[0].0;
    let mut id = None;
    let mut aligned: Option<BTreeSet<usize>> = None;
    let mut rows = Vec::new();
    for &(lineno, line) in block {
        if let Some(rest) = line.strip_prefix(ALIGNED_PREFIX) {
            let mut set = BTreeSet::new();
            for field in rest.split_whitespace() {
                let index = field.parse::<usize>().map_err(|_| {
                    parse_error(lineno, format!("invalid aligned index {field:?}"))
                })?;
                set.insert(index);
            }
            aligned = Some(set);
        } else if let Some(rest) = line.strip_prefix('#') {
            if id.is_none() {
                id = Some(rest.to_string());
            }
        } else {
            rows.push((lineno, line.split('\t').collect::<Vec<_>>()));
        }
    }
    let id = id.ok_or_else(|| parse_error(first_line, "sentence without '#<id>' header"))?;
    if !seen_ids.insert(id.clone()) {
        return Err(parse_error(first_line, format!("duplicate sentence id {id:?}")));
    }

    let mut tokens = Vec::with_capacity(rows.len());
    let mut predicates = Vec::new();
    let mut tops = Vec::new();
    let mut width = None;
    for (position, (lineno, cols)) in rows.iter().enumerate() {
        let lineno = *lineno;
        if cols.len() < 7 {
            return Err(parse_error(
                lineno,
                format!("expected at least 7 columns, found {}", cols.len()),
            ));
        }
        match width {
            None => width = Some(cols.len()),
            Some(w) if w != cols.len() => {
                return Err(parse_error(
                    lineno,
                    format!("expected {w} columns like the preceding lines, found {}", cols.len()),
                ))
            }
            Some(_) => {}
        }
        let index = cols[0]
            .parse::<usize>()
            .map_err(|_| parse_error(lineno, format!("invalid token id {:?}", cols[0])))?;
        if index != position + 1 {
            return Err(parse_error(
                lineno,
                format!("token id {index} is not contiguous, expected {}", position + 1),
            ));
        }
        if flag(cols[4], lineno, "TOP")? {
            tops.push(index);
        }
        if flag(cols[5], lineno, "PRED")? {
            predicates.push(index);
        }
        let mut token = Token::new(index, cols[1], cols[2], cols[3]);
        if cols[6] != "_" {
            token.frame = cols[6].to_string();
        }
        tokens.push(token);
    }

    let arg_columns = width.map_or(0, |w| w - 7);
    if arg_columns != predicates.len() {
        return Err(parse_error(
            rows.first().map_or(first_line, |r| r.0),
            format!(
                "{arg_columns} argument columns but {} predicates",
                predicates.len()
            ),
        ));
    }

    let mut edges: Vec<(usize, usize, String)> = tops
        .into_iter()
        .map(|t| (0, t, TOP_LABEL.to_string()))
        .collect();
    for (position, (_, cols)) in rows.iter().enumerate() {
        for (k, &label) in cols[7..].iter().enumerate() {
            if label != "_" {
                edges.push((predicates[k], position + 1, label.to_string()));
            }
        }
    }
    let graph = SemanticGraph::from_edges(tokens, edges).map_err(|source| FormatError::Graph {
        line: first_line,
        source,
    })?;
    let entry = match aligned {
        None => SdpEntry::Full(graph),
        Some(set) => SdpEntry::Partial(PartialGraph::new(graph, set).map_err(|source| {
            FormatError::Graph {
                line: first_line,
                source,
            }
        })?),
    };
    Ok(SdpSentence { id, entry })
}

fn flag(value: &str, line: usize, column: &str) -> Result<bool, FormatError> {
    match value {
        "+" => Ok(true),
        "-" | "_" => Ok(false),
        other => Err(parse_error(
            line,
            format!("{column} column must be '+' or '-', found {other:?}"),
        )),
    }
}

pub fn write_sdp(doc: &SdpDocument, mut writer: impl Write) -> Result<(), FormatError> {
    for sentence in &doc.sentences {
        write_sentence(sentence, &mut writer)?;
    }
    Ok(())
}

fn write_sentence(sentence: &SdpSentence, out: &mut impl Write) -> Result<(), FormatError> {
    if sentence.id.contains(['\n', '\r']) || sentence.id.starts_with(&ALIGNED_PREFIX[1..]) {
        return Err(FormatError::Write {
            what: "sentence id".into(),
            message: format!("{:?} cannot be written as a header line", sentence.id),
        });
    }
    let graph = sentence.entry.graph();
    let n = graph.len();
    let mut predicates = BTreeSet::new();
    let mut is_top = vec![false; n + 1];
    // args[dependent][predicate position] = label
    let mut args: Vec<Vec<(usize, &str)>> = vec![Vec::new(); n + 1];
    for (head, dependent, label) in graph.edges() {
        if head == 0 {
            is_top[dependent] = true;
            continue;
        }
        if label.is_empty() || label == "_" {
            return Err(FormatError::Write {
                what: format!("label of edge ({head}, {dependent})"),
                message: format!("{label:?} is reserved"),
            });
        }
        check_field("label", label)?;
        predicates.insert(head);
        args[dependent].push((head, label));
    }
    let predicate_column: Vec<usize> = predicates.iter().copied().collect();

    let mut text = String::new();
    text.push('#');
    text.push_str(&sentence.id);
    text.push('\n');
    if let SdpEntry::Partial(p) = &sentence.entry {
        text.push_str(ALIGNED_PREFIX);
        for index in p.aligned().iter().filter(|&&i| i != 0) {
            text.push(' ');
            text.push_str(&index.to_string());
        }
        text.push('\n');
    }
    for token in graph.tokens() {
        check_field("form", &token.form)?;
        check_field("lemma", &token.lemma)?;
        check_field("pos", &token.pos)?;
        check_field("frame", &token.frame)?;
        if token.frame == "_" {
            return Err(FormatError::Write {
                what: "frame".into(),
                message: "'_' is reserved for an empty frame".into(),
            });
        }
        let index = token.index;
        let mut cols = vec![
            index.to_string(),
            token.form.clone(),
            token.lemma.clone(),
            token.pos.clone(),
            sign(is_top[index]).to_string(),
            sign(predicates.contains(&index)).to_string(),
            if token.frame.is_empty() {
                "_".to_string()
            } else {
                token.frame.clone()
            },
        ];
        let mut arg_cells = vec!["_"; predicate_column.len()];
        for &(head, label) in &args[index] {
            let k = predicate_column.binary_search(&head).expect("head is a predicate");
            arg_cells[k] = label;
        }
        cols.extend(arg_cells.into_iter().map(str::to_string));
        text.push_str(&cols.join("\t"));
        text.push('\n');
    }
    text.push('\n');
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn sign(value: bool) -> &'static str {
    if value {
        "+"
    } else {
        "-"
    }
}
