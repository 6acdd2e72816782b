//! Conversion from CoNLL-U-style parses plus an aspect label file.
//!
//! Only the ID, FORM, HEAD and DEPREL columns are read. Comment lines,
//! multiword-token ranges (`3-4`) and empty nodes (`5.1`) are skipped.
//!
//! The label file holds one aspect per line, tab separated:
//!
//! ```text
//! # sentence  aspect_start  aspect_len  label
//! 0           1             1           positive
//! ```
//!
//! `sentence` is the 0-based sentence number in the parse file and
//! `aspect_start` is a 0-based token index.

use std::io::BufRead;

use super::sample::{AspectSample, Dependency, LabelSet, Polarity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSentence {
    pub tokens: Vec<String>,
    pub deps: Vec<Dependency>,
}

fn line_err(line: usize, message: impl Into<String>) -> Error {
    Error::Line {
        line,
        message: message.into(),
    }
}

pub fn read_conllu<R: BufRead>(reader: R) -> Result<Vec<ParsedSentence>> {
    let mut out = Vec::new();
    let mut cur = ParsedSentence {
        tokens: Vec::new(),
        deps: Vec::new(),
    };
    let flush = |cur: &mut ParsedSentence, out: &mut Vec<ParsedSentence>| {
        if !cur.tokens.is_empty() {
            out.push(std::mem::replace(
                cur,
                ParsedSentence {
                    tokens: Vec::new(),
                    deps: Vec::new(),
                },
            ));
        }
    };
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| line_err(line_no, e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            flush(&mut cur, &mut out);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(line_err(
                line_no,
                format!("expected at least 8 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| line_err(line_no, format!("bad token id `{}`", cols[0])))?;
        if id != cur.tokens.len() + 1 {
            return Err(line_err(
                line_no,
                format!("token id {id} out of sequence (expected {})", cur.tokens.len() + 1),
            ));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| line_err(line_no, format!("bad head `{}`", cols[6])))?;
        cur.tokens.push(cols[1].to_owned());
        cur.deps.push(Dependency::new(
            head.checked_sub(1),
            id - 1,
            cols[7].to_owned(),
        ));
    }
    flush(&mut cur, &mut out);
    Ok(out)
}

/// Joins parses with aspect annotations into validated samples, one per
/// label line, in label-file order.
pub fn convert<R: BufRead>(
    sentences: &[ParsedSentence],
    labels: R,
    expected: &LabelSet,
) -> Result<Vec<AspectSample>> {
    let mut out = Vec::new();
    for (i, line) in labels.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| line_err(line_no, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(line_err(
                line_no,
                "expected `sentence aspect_start aspect_len label`",
            ));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| line_err(line_no, format!("bad {what} `{s}`")))
        };
        let sent = num(cols[0], "sentence index")?;
        let parsed = sentences.get(sent).ok_or_else(|| {
            line_err(
                line_no,
                format!("sentence {sent} not in parse file ({} sentences)", sentences.len()),
            )
        })?;
        let label: Polarity = cols[3].parse().map_err(|e: String| line_err(line_no, e))?;
        if !expected.contains(label) {
            return Err(line_err(line_no, format!("label `{label}` not expected")));
        }
        let sample = AspectSample {
            tokens: parsed.tokens.clone(),
            aspect_start: num(cols[1], "aspect_start")?,
            aspect_len: num(cols[2], "aspect_len")?,
            label,
            deps: parsed.deps.clone(),
        };
        sample
            .validate()
            .map_err(|(field, msg)| line_err(line_no, format!("{field}: {msg}")))?;
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PARSE: &str = "\
# text = The food was great
1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_
2\tfood\tfood\tNOUN\tNN\t_\t4\tnsubj\t_\t_
3\twas\tbe\tAUX\tVBD\t_\t4\tcop\t_\t_
4\tgreat\tgreat\tADJ\tJJ\t_\t0\troot\t_\t_

1\tBad\tbad\tADJ\tJJ\t_\t2\tamod\t_\t_
2-3\tservice.\t_\t_\t_\t_\t_\t_\t_\t_
2\tservice\tservice\tNOUN\tNN\t_\t0\troot\t_\t_
3\t.\t.\tPUNCT\t.\t_\t2\tpunct\t_\t_
";

    #[test]
    fn reads_sentences() {
        let s = read_conllu(PARSE.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens, ["The", "food", "was", "great"]);
        assert_eq!(s[0].deps[1], Dependency::new(Some(3), 1, "nsubj"));
        assert_eq!(s[0].deps[3], Dependency::new(None, 3, "root"));
        assert_eq!(s[1].tokens, ["Bad", "service", "."]);
    }

    #[test]
    fn converts_with_labels() {
        let s = read_conllu(PARSE.as_bytes()).unwrap();
        let labels = "# header\n0\t1\t1\tpositive\n1 1 1 negative\n";
        let samples = convert(&s, labels.as_bytes(), &LabelSet::all()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].aspect_tokens(), ["food"]);
        assert_eq!(samples[1].label, Polarity::Negative);
    }

    #[test]
    fn out_of_range_sentence_names_line() {
        let s = read_conllu(PARSE.as_bytes()).unwrap();
        let err = convert(&s, "0 1 1 positive\n7 0 1 neutral\n".as_bytes(), &LabelSet::all())
            .unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, .. }), "{err}");
    }
}
