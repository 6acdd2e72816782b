use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-way aspect polarity. The discriminant is the class index used by
/// the classifier and the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive = 0,
    Neutral = 1,
    Negative = 2,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Polarity> {
        Polarity::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

/// Labels a dataset is allowed to contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSet([bool; 3]);

impl LabelSet {
    pub fn all() -> Self {
        LabelSet([true; 3])
    }

    pub fn of(labels: &[Polarity]) -> Self {
        let mut set = [false; 3];
        for l in labels {
            set[l.index()] = true;
        }
        LabelSet(set)
    }

    pub fn contains(&self, p: Polarity) -> bool {
        self.0[p.index()]
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet::all()
    }
}

/// One dependency arc. `head == None` marks the root attachment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dependency {
    pub head: Option<usize>,
    pub dependent: usize,
    pub relation: String,
}

impl Dependency {
    pub fn new(head: Option<usize>, dependent: usize, relation: impl Into<String>) -> Self {
        Dependency {
            head,
            dependent,
            relation: relation.into(),
        }
    }
}

/// One (sentence, aspect) classification unit. A sentence with several
/// aspects yields several samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectSample {
    pub tokens: Vec<String>,
    pub aspect_start: usize,
    pub aspect_len: usize,
    pub label: Polarity,
    pub deps: Vec<Dependency>,
}

impl AspectSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn aspect_range(&self) -> std::ops::Range<usize> {
        self.aspect_start..self.aspect_start + self.aspect_len
    }

    pub fn aspect_tokens(&self) -> &[String] {
        &self.tokens[self.aspect_range()]
    }

    /// Non-root arcs as `(head, dependent, relation)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &str)> {
        self.deps
            .iter()
            .filter_map(|d| d.head.map(|h| (h, d.dependent, d.relation.as_str())))
    }

    /// Checks span bounds and that `deps` form a single-rooted tree.
    /// Errors carry the offending field; the line is filled in by callers.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(("tokens", "sentence has no tokens".into()));
        }
        if self.aspect_len == 0 {
            return Err(("aspect_len", "aspect must span at least one token".into()));
        }
        if self.aspect_start + self.aspect_len > n {
            return Err((
                "aspect_start",
                format!(
                    "aspect span [{}, {}) exceeds sentence length {n}",
                    self.aspect_start,
                    self.aspect_start + self.aspect_len
                ),
            ));
        }
        let mut head_of: Vec<Option<Option<usize>>> = vec![None; n];
        let mut roots = 0;
        for d in &self.deps {
            if d.dependent >= n {
                return Err((
                    "deps",
                    format!("dependent index {} out of range for {n} tokens", d.dependent),
                ));
            }
            if let Some(h) = d.head {
                if h >= n {
                    return Err(("deps", format!("head index {h} out of range for {n} tokens")));
                }
                if h == d.dependent {
                    return Err(("deps", format!("token {h} is its own head")));
                }
            } else {
                roots += 1;
            }
            if head_of[d.dependent].is_some() {
                return Err(("deps", format!("token {} has more than one head", d.dependent)));
            }
            head_of[d.dependent] = Some(d.head);
        }
        if let Some(t) = head_of.iter().position(Option::is_none) {
            return Err(("deps", format!("token {t} has no head")));
        }
        if roots != 1 {
            return Err(("deps", format!("expected exactly one root, found {roots}")));
        }
        // Every token must reach the root within n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(Some(h)) = head_of[cur] {
                cur = h;
                steps += 1;
                if steps > n {
                    return Err(("deps", format!("cycle through token {start}")));
                }
            }
        }
        Ok(())
    }
}

/// Wire form of one dataset line.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SampleRecord {
    pub tokens: Vec<String>,
    pub aspect_start: usize,
    pub aspect_len: usize,
    pub label: Polarity,
    pub deps: Vec<(i64, usize, String)>,
}

impl From<&AspectSample> for SampleRecord {
    fn from(s: &AspectSample) -> Self {
        SampleRecord {
            tokens: s.tokens.clone(),
            aspect_start: s.aspect_start,
            aspect_len: s.aspect_len,
            label: s.label,
            deps: s
                .deps
                .iter()
                .map(|d| (d.head.map_or(-1, |h| h as i64), d.dependent, d.relation.clone()))
                .collect(),
        }
    }
}

pub(crate) fn record_error(line: usize, field: &'static str, message: impl Into<String>) -> Error {
    Error::Record {
        line,
        field,
        message: message.into(),
    }
}

pub(crate) fn parse_record(line_no: usize, line: &str, labels: &LabelSet) -> Result<AspectSample> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| record_error(line_no, "record", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| record_error(line_no, "record", "expected a JSON object"))?;
    let field = |name: &'static str| {
        obj.get(name)
            .ok_or_else(|| record_error(line_no, name, "missing"))
    };

    let tokens = field("tokens")?
        .as_array()
        .ok_or_else(|| record_error(line_no, "tokens", "expected an array of strings"))?
        .iter()
        .map(|t| t.as_str().map(str::to_owned))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| record_error(line_no, "tokens", "expected an array of strings"))?;
    let index = |name: &'static str| -> Result<usize> {
        field(name)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| record_error(line_no, name, "expected a non-negative integer"))
    };
    let aspect_start = index("aspect_start")?;
    let aspect_len = index("aspect_len")?;
    let label_str = field("label")?
        .as_str()
        .ok_or_else(|| record_error(line_no, "label", "expected a string"))?;
    let label: Polarity = label_str
        .parse()
        .map_err(|e: String| record_error(line_no, "label", e))?;
    if !labels.contains(label) {
        return Err(record_error(
            line_no,
            "label",
            format!("label `{label}` is not in the expected label set"),
        ));
    }

    let mut deps = Vec::new();
    let bad_dep = || record_error(line_no, "deps", "expected [head, dependent, relation] triples");
    for d in field("deps")?.as_array().ok_or_else(bad_dep)? {
        let triple = d.as_array().filter(|a| a.len() == 3).ok_or_else(bad_dep)?;
        let head = triple[0].as_i64().ok_or_else(bad_dep)?;
        let dependent = triple[1].as_i64().ok_or_else(bad_dep)?;
        let relation = triple[2].as_str().ok_or_else(bad_dep)?;
        if head < -1 || dependent < 0 {
            return Err(record_error(
                line_no,
                "deps",
                format!("index out of range in [{head}, {dependent}, {relation}]"),
            ));
        }
        let head = if head == -1 { None } else { Some(head as usize) };
        deps.push(Dependency::new(head, dependent as usize, relation));
    }

    let sample = AspectSample {
        tokens,
        aspect_start,
        aspect_len,
        label,
        deps,
    };
    sample
        .validate()
        .map_err(|(field, msg)| record_error(line_no, field, msg))?;
    Ok(sample)
}
