//! Per-token context vectors.
//!
//! Text form: one token per line as whitespace-separated floats, a blank line
//! between sentences. Binary form: the magic `XSDPCVEC`, then little-endian
//! `u32` version (1), `u32` dimension, `u64` sentence count and, per sentence,
//! a `u64` token count followed by `tokens * dim` `f64` values.

use std::io::{BufRead, Read, Write};

use super::{parse_error, FormatError};

const MAGIC: &[u8; 8] = b"XSDPCVEC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ContextVectors {
    pub dim: usize,
    /// `sentences[s][t]` is the vector of token `t + 1` in sentence `s`.
    pub sentences: Vec<Vec<Vec<f64>>>,
}

impl ContextVectors {
    /// Checks that sentence and token counts match the accompanying corpus.
    pub fn check_token_counts(&self, token_counts: &[usize]) -> Result<(), FormatError> {
        if self.sentences.len() != token_counts.len() {
            return Err(FormatError::SentenceCount {
                found: self.sentences.len(),
                expected: token_counts.len(),
            });
        }
        for (k, (vectors, &expected)) in self.sentences.iter().zip(token_counts).enumerate() {
            if vectors.len() != expected {
                return Err(FormatError::TokenCount {
                    sentence: k + 1,
                    found: vectors.len(),
                    expected,
                });
            }
        }
        Ok(())
    }
}

/// Reads either form, telling them apart by the binary magic.
pub fn read_context_vectors(
    mut reader: impl BufRead,
    expected_dim: usize,
) -> Result<ContextVectors, FormatError> {
    let is_binary = reader.fill_buf()?.starts_with(MAGIC);
    if is_binary {
        read_binary(reader, expected_dim)
    } else {
        read_text(reader, expected_dim)
    }
}

fn read_text(reader: impl BufRead, expected_dim: usize) -> Result<ContextVectors, FormatError> {
    let lines = super::read_lines(reader)?;
    let mut sentences = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_error(i + 1, format!("invalid number {f:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != expected_dim {
            return Err(FormatError::Dimension {
                line: i + 1,
                found: values.len(),
                expected: expected_dim,
            });
        }
        current.push(values);
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(ContextVectors {
        dim: expected_dim,
        sentences,
    })
}

fn read_u32(reader: &mut impl Read) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(reader: &mut impl Read) -> Result<u64, FormatError> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_binary(mut reader: impl Read, expected_dim: usize) -> Result<ContextVectors, FormatError> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    let version = read_u32(&mut reader)?;
    if version != VERSION {
        return Err(parse_error(0, format!("unsupported vector file version {version}")));
    }
    let dim = read_u32(&mut reader)? as usize;
    if dim != expected_dim {
        return Err(FormatError::Dimension {
            line: 0,
            found: dim,
            expected: expected_dim,
        });
    }
    let count = read_u64(&mut reader)?;
    let mut sentences = Vec::new();
    for _ in 0..count {
        let tokens = read_u64(&mut reader)?;
        let mut sentence = Vec::new();
        for _ in 0..tokens {
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut buf = [0u8; 8];
                reader.read_exact(&mut buf)?;
                vector.push(f64::from_le_bytes(buf));
            }
            sentence.push(vector);
        }
        sentences.push(sentence);
    }
    Ok(ContextVectors { dim, sentences })
}

pub fn write_context_vectors(
    vectors: &ContextVectors,
    mut writer: impl Write,
) -> Result<(), FormatError> {
    for (k, sentence) in vectors.sentences.iter().enumerate() {
        if k > 0 {
            writer.write_all(b"\n")?;
        }
        for vector in sentence {
            let line: Vec<String> = vector.iter().map(|v| v.to_string()).collect();
            writer.write_all(line.join(" ").as_bytes())?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_context_vectors_binary(
    vectors: &ContextVectors,
    mut writer: impl Write,
) -> Result<(), FormatError> {
    writer.write_all(MAGIC)?;
    writer.write_all(&VERSION.to_le_bytes())?;
    writer.write_all(&(vectors.dim as u32).to_le_bytes())?;
    writer.write_all(&(vectors.sentences.len() as u64).to_le_bytes())?;
    for sentence in &vectors.sentences {
        writer.write_all(&(sentence.len() as u64).to_le_bytes())?;
        for vector in sentence {
            for v in vector {
                writer.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_tokens_of_dim_four() {
        let text = "1 2 3 4\n5 6 7 8\n";
        let v = read_context_vectors(text.as_bytes(), 4).unwrap();
        assert_eq!(
            v.sentences,
            vec![vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]]
        );
        v.check_token_counts(&[2]).unwrap();
        assert!(matches!(
            v.check_token_counts(&[3]),
            Err(FormatError::TokenCount { .. })
        ));
        assert!(matches!(
            v.check_token_counts(&[2, 1]),
            Err(FormatError::SentenceCount { .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let err = read_context_vectors("1 2 3 4 5\n".as_bytes(), 4).unwrap_err();
        assert!(matches!(
            err,
            FormatError::Dimension {
                found: 5,
                expected: 4,
                ..
            }
        ));
    }

    #[test]
    fn zero_vectors_are_valid() {
        let v = read_context_vectors("0 0\n0 0\n\n0 0\n".as_bytes(), 2).unwrap();
        assert_eq!(v.sentences.len(), 2);
        assert!(v.sentences.iter().flatten().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn text_and_binary_round_trip() {
        let v = ContextVectors {
            dim: 3,
            sentences: vec![
                vec![vec![0.1, -2.5, 1e-300], vec![3.0, 0.0, -0.0]],
                vec![vec![f64::MAX, 1.0 / 3.0, 7.0]],
            ],
        };
        let mut text = Vec::new();
        write_context_vectors(&v, &mut text).unwrap();
        assert_eq!(read_context_vectors(text.as_slice(), 3).unwrap(), v);
        let mut bin = Vec::new();
        write_context_vectors_binary(&v, &mut bin).unwrap();
        assert_eq!(read_context_vectors(bin.as_slice(), 3).unwrap(), v);
        assert!(read_context_vectors(bin.as_slice(), 4).is_err());
    }
}
