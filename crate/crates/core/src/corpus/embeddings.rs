use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::vocab::{Vocab, PAD_ID};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Half-width of the uniform range used for tokens without a pretrained
/// vector.
pub const OOV_BOUND: f64 = 0.25;

/// `|V| × d_w` word vectors indexed by vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Matrix,
    /// Rows copied from a pretrained file.
    pub pretrained_rows: usize,
}

impl EmbeddingTable {
    /// Every row uniform in `[-0.25, 0.25]` except the all-zero padding row.
    pub fn random<R: Rng + ?Sized>(vocab: &Vocab, d_w: usize, rng: &mut R) -> Self {
        let mut matrix = Matrix::uniform(vocab.len(), d_w, OOV_BOUND, rng);
        matrix.row_mut(PAD_ID).fill(0.0);
        EmbeddingTable {
            matrix,
            pretrained_rows: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Reads GloVe-style text (`token v1 … v_dw` per line). Vocabulary rows
    /// found in the file are copied verbatim; the rest keep their random
    /// initialisation, which is drawn in id order before the file is read.
    pub fn load_pretrained<R: Rng + ?Sized>(
        path: &Path,
        vocab: &Vocab,
        d_w: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_pretrained(BufReader::new(file), vocab, d_w, rng)
    }

    pub fn read_pretrained<B: BufRead, R: Rng + ?Sized>(
        reader: B,
        vocab: &Vocab,
        d_w: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut table = EmbeddingTable::random(vocab, d_w, rng);
        let mut seen = vec![false; vocab.len()];
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Line {
                line: line_no,
                message: e.to_string(),
            })?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let token = fields.next().unwrap_or_default();
            let values: Vec<&str> = fields.collect();
            if values.len() != d_w {
                return Err(Error::Line {
                    line: line_no,
                    message: format!("expected {d_w} values for `{token}`, found {}", values.len()),
                });
            }
            if !vocab.contains(token) {
                continue;
            }
            let id = vocab.id(token);
            if id == PAD_ID || seen[id] {
                continue;
            }
            let row = table.matrix.row_mut(id);
            for (dst, v) in row.iter_mut().zip(&values) {
                *dst = v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    Error::Line {
                        line: line_no,
                        message: format!("`{v}` is not a finite number"),
                    }
                })?;
            }
            seen[id] = true;
            table.pretrained_rows += 1;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::UNK_ID;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        Vocab::from_tokens(["hello".to_owned(), "world".to_owned()])
    }

    #[test]
    fn copies_file_rows_and_zeroes_padding() {
        let text = "hello 0.1 -0.2 0.3\nunrelated 1 2 3\n";
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::read_pretrained(text.as_bytes(), &vocab(), 3, &mut rng).unwrap();
        assert_eq!(t.matrix.row(2), &[0.1, -0.2, 0.3]);
        assert_eq!(t.matrix.row(PAD_ID), &[0.0, 0.0, 0.0]);
        assert_eq!(t.pretrained_rows, 1);
        assert!(t.matrix.row(3).iter().all(|v| v.abs() <= OOV_BOUND));
        assert!(t.matrix.row(UNK_ID).iter().all(|v| v.abs() <= OOV_BOUND));
    }

    #[test]
    fn oov_rows_reproducible_bitwise() {
        let text = "hello 0.1 -0.2 0.3\n";
        let a = EmbeddingTable::read_pretrained(
            text.as_bytes(),
            &vocab(),
            3,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = EmbeddingTable::read_pretrained(
            text.as_bytes(),
            &vocab(),
            3,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let bits = |t: &EmbeddingTable| -> Vec<u64> {
            t.matrix.as_slice().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let text = "hello 0.1 0.2 0.3\nworld 0.1 0.2\n";
        let err = EmbeddingTable::read_pretrained(
            text.as_bytes(),
            &vocab(),
            3,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, .. }), "{err}");
    }
}
