//! Dependency-relation statistics and per-sentence adjacency matrices.
//!
//! The weight of an arc is the training-corpus frequency ratio of its
//! relation label: `count(label) / count(all counted arcs)`. Matrices are
//! directed head → dependent with ones on the diagonal.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::AspectSample;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Which arcs contribute to the relation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SdiOptions {
    pub count_root: bool,
    pub count_punct: bool,
}

impl Default for SdiOptions {
    fn default() -> Self {
        SdiOptions {
            count_root: false,
            count_punct: true,
        }
    }
}

const PUNCT: &str = "punct";
const ROOT: &str = "root";

#[derive(Debug, Clone, PartialEq)]
pub struct SdiTable {
    ratios: BTreeMap<String, f64>,
    total_edges: usize,
}

impl SdiTable {
    /// Counts relation labels over `training` only.
    pub fn collect(training: &[AspectSample], opts: SdiOptions) -> Result<SdiTable> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in training {
            for d in &s.deps {
                let counted = match d.head {
                    None => opts.count_root,
                    Some(_) => opts.count_punct || d.relation != PUNCT,
                };
                if counted {
                    let label = if d.head.is_none() { ROOT } else { d.relation.as_str() };
                    *counts.entry(label).or_default() += 1;
                }
            }
        }
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(Error::Empty(
                "no dependency arcs to count; the relation ratio is undefined",
            ));
        }
        let ratios = counts
            .into_iter()
            .map(|(label, c)| (label.to_owned(), c as f64 / total as f64))
            .collect();
        Ok(SdiTable {
            ratios,
            total_edges: total,
        })
    }

    pub fn total_edges(&self) -> usize {
        self.total_edges
    }

    pub fn ratio(&self, label: &str) -> Option<f64> {
        self.ratios.get(label).copied()
    }

    pub fn ratios(&self) -> &BTreeMap<String, f64> {
        &self.ratios
    }

    pub fn min_ratio(&self) -> f64 {
        self.ratios.values().copied().fold(f64::INFINITY, f64::min)
    }

    /// Weight for `label`, falling back to the smallest observed ratio
    /// for labels never seen in training.
    pub fn weight(&self, label: &str) -> (f64, bool) {
        match self.ratio(label) {
            Some(r) => (r, true),
            None => (self.min_ratio(), false),
        }
    }

    /// ```text
    /// total_edges<TAB>N
    /// <label><TAB><ratio>
    /// ```
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "total_edges\t{}", self.total_edges)?;
        for (label, ratio) in &self.ratios {
            writeln!(w, "{label}\t{ratio:e}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<SdiTable> {
        let mut lines = r.lines().enumerate();
        let err = |line: usize, message: String| Error::Line { line, message };
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty relation table".into()))?;
        let header = header.map_err(|e| err(1, e.to_string()))?;
        let total_edges = header
            .strip_prefix("total_edges\t")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| err(1, format!("expected `total_edges<TAB>N`, got `{header}`")))?;
        let mut ratios = BTreeMap::new();
        for (i, line) in lines {
            let line = line.map_err(|e| err(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (label, ratio) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "expected `label<TAB>ratio`".into()))?;
            let ratio: f64 = ratio
                .trim()
                .parse()
                .ok()
                .filter(|r: &f64| *r > 0.0 && *r <= 1.0)
                .ok_or_else(|| err(i + 1, format!("bad ratio `{ratio}`")))?;
            ratios.insert(label.to_owned(), ratio);
        }
        if ratios.is_empty() {
            return Err(err(2, "relation table has no entries".into()));
        }
        Ok(SdiTable {
            ratios,
            total_edges,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SdiTable> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        SdiTable::read(BufReader::new(file))
    }
}

/// `A[i][i] = 1`, `A[head][dep] = 1` for every arc, 0 elsewhere.
pub fn binary_adjacency(sample: &AspectSample) -> Matrix {
    let mut a = Matrix::identity(sample.len());
    for (h, d, _) in sample.edges() {
        a[(h, d)] = 1.0;
    }
    a
}

/// As [`binary_adjacency`] but arcs carry their relation ratio.
pub fn sdi_adjacency(sample: &AspectSample, sdi: &SdiTable) -> Matrix {
    let mut a = Matrix::identity(sample.len());
    for (h, d, rel) in sample.edges() {
        let (w, seen) = sdi.weight(rel);
        if !seen {
            log::warn!("relation `{rel}` unseen in training; using minimum ratio {w}");
        }
        a[(h, d)] = w;
    }
    a
}

/// Off-diagonal nonzero count of each row (arcs leaving token `i`).
pub fn out_degrees(adjacency: &Matrix) -> Vec<f64> {
    (0..adjacency.rows())
        .map(|i| {
            adjacency
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j != i && v != 0.0)
                .count() as f64
        })
        .collect()
}
