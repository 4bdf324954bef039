//! CoNLL-U syntactic trees.
//!
//! Only the basic tree is read: FORM, LEMMA, UPOS, HEAD and DEPREL. Multiword
//! token ranges (`3-4`) and empty nodes (`5.1`) are skipped. Comment lines are
//! kept on the tree and written back verbatim.

use std::io::{BufRead, Write};

use super::{check_field, parse_error, read_lines, FormatError};
use crate::graph::{SyntacticTree, Token};

pub fn read_conllu(reader: impl BufRead) -> Result<Vec<SyntacticTree>, FormatError> {
    let lines = read_lines(reader)?;
    let mut trees = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                trees.push(parse_block(&block)?);
                block.clear();
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        trees.push(parse_block(&block)?);
    }
    Ok(trees)
}

fn parse_block(block: &[(usize, &str)]) -> Result<SyntacticTree, FormatError> {
    let mut comments = Vec::new();
    let mut tokens = Vec::new();
    let mut heads = Vec::new();
    let mut deprels = Vec::new();
    let mut head_lines = Vec::new();
    for &(lineno, line) in block {
        if let Some(comment) = line.strip_prefix('#') {
            comments.push(comment.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_error(
                lineno,
                format!("expected 10 columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains(['-', '.']) {
            continue;
        }
        let index = cols[0]
            .parse::<usize>()
            .map_err(|_| parse_error(lineno, format!("invalid token id {:?}", cols[0])))?;
        if index != tokens.len() + 1 {
            return Err(parse_error(
                lineno,
                format!("token id {index} is not contiguous, expected {}", tokens.len() + 1),
            ));
        }
        let head = cols[6]
            .parse::<usize>()
            .map_err(|_| parse_error(lineno, format!("invalid head {:?}", cols[6])))?;
        tokens.push(Token::new(index, cols[1], cols[2], cols[3]));
        heads.push(head);
        deprels.push(cols[7].to_string());
        head_lines.push(lineno);
    }
    let n = tokens.len();
    for (k, &head) in heads.iter().enumerate() {
        if head > n {
            return Err(parse_error(
                head_lines[k],
                format!("head {head} is out of range for a sentence of {n} tokens"),
            ));
        }
    }
    let first_line = block[0].0;
    SyntacticTree::new(tokens, heads, deprels)
        .map(|t| t.with_comments(comments))
        .map_err(|source| FormatError::Graph {
            line: first_line,
            source,
        })
}

pub fn write_conllu(trees: &[SyntacticTree], mut writer: impl Write) -> Result<(), FormatError> {
    for tree in trees {
        let mut text = String::new();
        for comment in &tree.comments {
            if comment.contains(['\n', '\r']) {
                return Err(FormatError::Write {
                    what: "comment".into(),
                    message: format!("{comment:?} contains a line break"),
                });
            }
            text.push('#');
            text.push_str(comment);
            text.push('\n');
        }
        for (k, token) in tree.tokens().iter().enumerate() {
            check_field("form", &token.form)?;
            check_field("lemma", &token.lemma)?;
            check_field("pos", &token.pos)?;
            check_field("deprel", &tree.deprels()[k])?;
            let cols = [
                token.index.to_string(),
                token.form.clone(),
                token.lemma.clone(),
                token.pos.clone(),
                "_".into(),
                "_".into(),
                tree.heads()[k].to_string(),
                tree.deprels()[k].clone(),
                "_".into(),
                "_".into(),
            ];
            text.push_str(&cols.join("\t"));
            text.push('\n');
        }
        text.push('\n');
        writer.write_all(text.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_root_token() {
        let trees = read_conllu("1\tAhoj\tahoj\tINTJ\t_\t_\t0\troot\t_\t_\n".as_bytes()).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].heads(), &[0]);
        assert_eq!(trees[0].deprel(1), "root");
    }

    #[test]
    fn czech_example_round_trips() {
        // Rok končící 31 . prosince 1988 :
        let rows = [
            ("Rok", "rok", "NOUN", 0, "root"),
            ("končící", "končící", "ADJ", 1, "amod"),
            ("31", "31", "NUM", 5, "nummod"),
            (".", ".", "PUNCT", 3, "punct"),
            ("prosince", "prosinec", "NOUN", 2, "obl"),
            ("1988", "1988", "NUM", 5, "nummod"),
            (":", ":", "PUNCT", 1, "punct"),
        ];
        let mut text = String::from("# text = Rok končící 31. prosince 1988:\n");
        for (k, (form, lemma, pos, head, rel)) in rows.iter().enumerate() {
            text.push_str(&format!(
                "{}\t{form}\t{lemma}\t{pos}\t_\t_\t{head}\t{rel}\t_\t_\n",
                k + 1
            ));
        }
        text.push('\n');
        let trees = read_conllu(text.as_bytes()).unwrap();
        assert_eq!(trees[0].heads(), &[0, 1, 5, 3, 2, 5, 1]);
        assert_eq!(trees[0].comments, vec![" text = Rok končící 31. prosince 1988:"]);
        assert!(trees[0].is_well_formed());
        let mut out = Vec::new();
        write_conllu(&trees, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn head_out_of_range_is_an_error() {
        let mut text = String::new();
        for k in 1..=5 {
            let head = if k == 3 { 99 } else { 0 };
            text.push_str(&format!("{k}\tw\tw\tX\t_\t_\t{head}\tdep\t_\t_\n"));
        }
        let err = read_conllu(text.as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn skips_multiword_and_empty_nodes() {
        let text = "1-2\tdont\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tdo\tdo\tAUX\t_\t_\t2\taux\t_\t_\n\
                    2\tnot\tnot\tPART\t_\t_\t0\troot\t_\t_\n\
                    2.1\tx\tx\tX\t_\t_\t_\t_\t_\t_\n";
        let trees = read_conllu(text.as_bytes()).unwrap();
        assert_eq!(trees[0].len(), 2);
        assert_eq!(trees[0].heads(), &[2, 0]);
    }

    #[test]
    fn non_numeric_head_is_an_error() {
        assert!(read_conllu("1\ta\ta\tX\t_\t_\t_\troot\t_\t_\n".as_bytes()).is_err());
    }
}
