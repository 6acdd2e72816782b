//! Aspect-annotated sentences with dependency parses.
//!
//! Datasets are JSON lines, one aspect per line:
//!
//! ```text
//! {"tokens":["The","food","was","great"],"aspect_start":1,"aspect_len":1,
//!  "label":"positive","deps":[[1,0,"det"],[3,1,"nsubj"],[3,2,"cop"],[-1,3,"root"]]}
//! ```
//!
//! `deps` entries are `[head, dependent, relation]` with 0-based indices
//! and `head = -1` for the root.

pub mod conllu;
mod embeddings;
mod sample;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

pub use embeddings::{EmbeddingTable, OOV_BOUND};
pub use sample::{AspectSample, Dependency, LabelSet, Polarity};
pub use vocab::{Vocab, PAD, PAD_ID, UNK, UNK_ID};

use crate::error::{Error, Result};

/// Reads and validates a JSON-lines dataset, preserving file order.
pub fn load_dataset(path: &Path, expected: &LabelSet) -> Result<Vec<AspectSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), expected)
}

pub fn read_dataset<R: BufRead>(reader: R, expected: &LabelSet) -> Result<Vec<AspectSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(sample::parse_record(line_no, &line, expected)?);
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(mut w: W, samples: &[AspectSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, &sample::SampleRecord::from(s))?;
        w.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))?;
    }
    Ok(())
}

pub fn save_dataset(path: &Path, samples: &[AspectSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(&mut w, samples)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-class sample counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
}

impl ClassCounts {
    pub fn of(samples: &[AspectSample]) -> Self {
        let mut c = ClassCounts::default();
        for s in samples {
            match s.label {
                Polarity::Positive => c.positive += 1,
                Polarity::Neutral => c.neutral += 1,
                Polarity::Negative => c.negative += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.positive + self.neutral + self.negative
    }
}

/// Published class counts of the standard benchmark splits.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkSplit {
    pub dataset: &'static str,
    pub split: &'static str,
    pub counts: ClassCounts,
}

const fn split(dataset: &'static str, split: &'static str, p: usize, u: usize, n: usize) -> BenchmarkSplit {
    BenchmarkSplit {
        dataset,
        split,
        counts: ClassCounts {
            positive: p,
            neutral: u,
            negative: n,
        },
    }
}

pub const BENCHMARK_SPLITS: [BenchmarkSplit; 8] = [
    split("twitter", "train", 1561, 3127, 1560),
    split("twitter", "test", 173, 346, 173),
    split("rest14", "train", 2164, 637, 807),
    split("rest14", "test", 728, 196, 196),
    split("rest15", "train", 912, 36, 256),
    split("rest15", "test", 326, 34, 182),
    split("rest16", "train", 1240, 69, 439),
    split("rest16", "test", 469, 30, 117),
];

pub fn benchmark_split(dataset: &str, split: &str) -> Option<&'static BenchmarkSplit> {
    BENCHMARK_SPLITS
        .iter()
        .find(|b| b.dataset.eq_ignore_ascii_case(dataset) && b.split.eq_ignore_ascii_case(split))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"tokens":["The","food","was","great"],"aspect_start":1,"aspect_len":1,"label":"positive","deps":[[1,0,"det"],[3,1,"nsubj"],[3,2,"cop"],[-1,3,"root"]]}"#;

    #[test]
    fn empty_file_is_empty_list() {
        assert!(read_dataset("".as_bytes(), &LabelSet::all()).unwrap().is_empty());
    }

    #[test]
    fn parses_record() {
        let s = read_dataset(GOOD.as_bytes(), &LabelSet::all()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].aspect_tokens(), ["food"]);
        assert_eq!(s[0].deps[3], Dependency::new(None, 3, "root"));
    }

    #[test]
    fn span_violation_names_line_and_field() {
        let bad = r#"{"tokens":["a","b","c","d","e","f"],"aspect_start":5,"aspect_len":2,"label":"neutral","deps":[[-1,0,"root"],[0,1,"x"],[0,2,"x"],[0,3,"x"],[0,4,"x"],[0,5,"x"]]}"#;
        let text = format!("{GOOD}\n{bad}\n");
        let err = read_dataset(text.as_bytes(), &LabelSet::all()).unwrap_err();
        assert!(
            matches!(err, Error::Record { line: 2, field: "aspect_start", .. }),
            "{err}"
        );
    }

    #[test]
    fn missing_field_is_named() {
        let bad = r#"{"tokens":["a"],"aspect_start":0,"aspect_len":1,"deps":[[-1,0,"root"]]}"#;
        let err = read_dataset(bad.as_bytes(), &LabelSet::all()).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, field: "label", .. }), "{err}");
    }

    #[test]
    fn unexpected_label_is_rejected() {
        let only_pos_neg = LabelSet::of(&[Polarity::Positive, Polarity::Negative]);
        let neutral = GOOD.replace("positive", "neutral");
        let err = read_dataset(neutral.as_bytes(), &only_pos_neg).unwrap_err();
        assert!(matches!(err, Error::Record { field: "label", .. }), "{err}");
        let conflict = GOOD.replace("positive", "conflict");
        assert!(read_dataset(conflict.as_bytes(), &LabelSet::all()).is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let s = read_dataset(GOOD.as_bytes(), &LabelSet::all()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &s).unwrap();
        assert_eq!(read_dataset(buf.as_slice(), &LabelSet::all()).unwrap(), s);
    }

    #[test]
    fn rest14_published_counts() {
        let b = benchmark_split("Rest14", "train").unwrap();
        assert_eq!(b.counts.total(), 3608);
        assert_eq!(
            (b.counts.positive, b.counts.neutral, b.counts.negative),
            (2164, 637, 807)
        );
    }
}
