//! Pharaoh word alignments: one sentence pair per line, `i-j` pairs with
//! 0-based indices on disk. In memory the pairs are 1-based.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use super::{parse_error, read_lines, FormatError};

/// `(source, target)` links per sentence pair, 1-based.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AlignmentFile {
    pub sentences: Vec<BTreeSet<(usize, usize)>>,
}

impl AlignmentFile {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Swaps source and target of every link.
    pub fn transposed(&self) -> AlignmentFile {
        AlignmentFile {
            sentences: self
                .sentences
                .iter()
                .map(|links| links.iter().map(|&(s, t)| (t, s)).collect())
                .collect(),
        }
    }

    /// Checks every link against the sentence lengths of both sides.
    pub fn check_lengths(
        &self,
        source_lengths: &[usize],
        target_lengths: &[usize],
    ) -> Result<(), String> {
        if self.len() != source_lengths.len() || self.len() != target_lengths.len() {
            return Err(format!(
                "{} alignment lines for {} source and {} target sentences",
                self.len(),
                source_lengths.len(),
                target_lengths.len()
            ));
        }
        for (k, links) in self.sentences.iter().enumerate() {
            for &(s, t) in links {
                if s == 0 || t == 0 || s > source_lengths[k] || t > target_lengths[k] {
                    return Err(format!(
                        "sentence pair {}: link {}-{} outside lengths {}x{}",
                        k + 1,
                        s,
                        t,
                        source_lengths[k],
                        target_lengths[k]
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn read_alignments(reader: impl BufRead) -> Result<AlignmentFile, FormatError> {
    let lines = read_lines(reader)?;
    let mut sentences = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let mut links = BTreeSet::new();
        for field in line.split_whitespace() {
            let parsed = field.split_once('-').and_then(|(s, t)| {
                Some((s.parse::<usize>().ok()?, t.parse::<usize>().ok()?))
            });
            let (s, t) =
                parsed.ok_or_else(|| parse_error(i + 1, format!("invalid link {field:?}")))?;
            links.insert((s + 1, t + 1));
        }
        sentences.push(links);
    }
    Ok(AlignmentFile { sentences })
}

pub fn write_alignments(file: &AlignmentFile, mut writer: impl Write) -> Result<(), FormatError> {
    for links in &file.sentences {
        let mut fields = Vec::with_capacity(links.len());
        for &(s, t) in links {
            if s == 0 || t == 0 {
                return Err(FormatError::Write {
                    what: "alignment".into(),
                    message: format!("link ({s}, {t}) is not 1-based"),
                });
            }
            fields.push(format!("{}-{}", s - 1, t - 1));
        }
        writer.write_all(fields.join(" ").as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(pairs: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn converts_to_one_based() {
        let file = read_alignments("0-2 3-3\n".as_bytes()).unwrap();
        assert_eq!(file.sentences, vec![set(&[(1, 3), (4, 4)])]);
    }

    #[test]
    fn empty_line_is_an_empty_pair() {
        let file = read_alignments("0-0\n\n1-1\n".as_bytes()).unwrap();
        assert_eq!(file.len(), 3);
        assert!(file.sentences[1].is_empty());
    }

    #[test]
    fn duplicates_collapse() {
        let file = read_alignments("1-1 1-1".as_bytes()).unwrap();
        assert_eq!(file.sentences, vec![set(&[(2, 2)])]);
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["a-1", "1-", "1", "1-2-3", "-1-2"] {
            assert!(read_alignments(bad.as_bytes()).is_err(), "{bad}");
        }
    }

    #[test]
    fn length_check() {
        let file = read_alignments("0-2\n".as_bytes()).unwrap();
        assert!(file.check_lengths(&[1], &[3]).is_ok());
        assert!(file.check_lengths(&[1], &[2]).is_err());
        assert!(file.check_lengths(&[1, 1], &[3, 3]).is_err());
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            sentences in proptest::collection::vec(
                proptest::collection::btree_set((1usize..40, 1usize..40), 0..12), 0..8)
        ) {
            let file = AlignmentFile { sentences };
            let mut buf = Vec::new();
            write_alignments(&file, &mut buf).unwrap();
            prop_assert_eq!(read_alignments(buf.as_slice()).unwrap(), file);
        }
    }
}
