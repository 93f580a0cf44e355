use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Label of test samples from no known class.
pub const UNKNOWN_LABEL: i64 = -1;

const WHAT: &str = "embedding file";

/// `n × d` representation vectors with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    matrix: Array2<f64>,
    labels: Vec<i64>,
    provenance: String,
}

impl EmbeddingBatch {
    pub fn new(matrix: Array2<f64>, labels: Vec<i64>, provenance: impl Into<String>) -> Result<Self> {
        let provenance = provenance.into();
        if labels.len() != matrix.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                matrix.nrows()
            )));
        }
        if matrix.ncols() == 0 {
            return Err(Error::Shape("embeddings must have at least one dimension".into()));
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value in row {}",
                pos / matrix.ncols()
            )));
        }
        if labels.iter().any(|&l| l < UNKNOWN_LABEL) {
            return Err(Error::InvalidArgument("labels must be >= -1".into()));
        }
        if provenance.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument("provenance must be a single line".into()));
        }
        Ok(EmbeddingBatch {
            matrix,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(i)
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn is_outlier(&self, i: usize) -> bool {
        self.labels[i] == UNKNOWN_LABEL
    }

    /// Rows whose index satisfies `keep`.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> EmbeddingBatch {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        EmbeddingBatch {
            matrix: self.matrix.select(Axis(0), &idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Checks that batches describe the same samples in the same order.
    pub fn check_aligned(batches: &[EmbeddingBatch]) -> Result<()> {
        let first = batches
            .first()
            .ok_or_else(|| Error::InvalidArgument("no embedding batches".into()))?;
        for b in &batches[1..] {
            if b.labels != first.labels {
                return Err(Error::Shape(format!(
                    "batches `{}` and `{}` are not aligned by sample",
                    first.provenance, b.provenance
                )));
            }
        }
        Ok(())
    }

    /// Row-wise concatenation of aligned batches.
    pub fn concat(batches: &[EmbeddingBatch]) -> Result<EmbeddingBatch> {
        Self::check_aligned(batches)?;
        let views: Vec<_> = batches.iter().map(|b| b.matrix.view()).collect();
        Ok(EmbeddingBatch {
            matrix: concatenate(Axis(1), &views).expect("aligned rows"),
            labels: batches[0].labels.clone(),
            provenance: join_provenance("concat", batches),
        })
    }

    /// Element-wise mean of aligned batches of equal width.
    pub fn mean(batches: &[EmbeddingBatch]) -> Result<EmbeddingBatch> {
        Self::check_aligned(batches)?;
        let d = batches[0].dim();
        if let Some(b) = batches.iter().find(|b| b.dim() != d) {
            return Err(Error::Shape(format!(
                "cannot average width {} with width {d} (`{}`)",
                b.dim(),
                b.provenance
            )));
        }
        let mut sum = batches[0].matrix.clone();
        for b in &batches[1..] {
            sum += &b.matrix;
        }
        Ok(EmbeddingBatch {
            matrix: sum / batches.len() as f64,
            labels: batches[0].labels.clone(),
            provenance: join_provenance("mean", batches),
        })
    }
}

fn join_provenance(op: &str, batches: &[EmbeddingBatch]) -> String {
    let parts: Vec<&str> = batches.iter().map(|b| b.provenance.as_str()).collect();
    format!("{op}({})", parts.join(" | "))
}

/// Header `dim=<d> n=<n> provenance=<text>`, then `label v1 … vd` per row.
/// Values are printed with 17 significant digits, which round-trips `f64`.
pub fn format_embeddings(batch: &EmbeddingBatch) -> String {
    let mut out = String::new();
    writeln!(out, "dim={} n={} provenance={}", batch.dim(), batch.len(), batch.provenance).unwrap();
    for (label, row) in batch.labels.iter().zip(batch.matrix.outer_iter()) {
        write!(out, "{label}").unwrap();
        for v in row {
            write!(out, " {v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingBatch> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(WHAT, 1, "empty file"))?;
    let field = |rest: &str, key: &str| -> Result<(usize, String)> {
        let rest = rest
            .strip_prefix(key)
            .ok_or_else(|| Error::parse(WHAT, 1, format!("expected `{key}`")))?;
        let (value, tail) = rest.split_once(' ').unwrap_or((rest, ""));
        let value = value
            .parse()
            .map_err(|_| Error::parse(WHAT, 1, format!("bad value for `{key}`")))?;
        Ok((value, tail.to_string()))
    };
    let (dim, rest) = field(header, "dim=")?;
    let (n, rest) = field(&rest, "n=")?;
    let provenance = rest
        .strip_prefix("provenance=")
        .ok_or_else(|| Error::parse(WHAT, 1, "expected `provenance=`"))?
        .to_string();
    if dim == 0 {
        return Err(Error::parse(WHAT, 1, "dim must be positive"));
    }

    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if labels.len() == n {
            return Err(Error::parse(WHAT, line_no, format!("more than {n} rows")));
        }
        let mut fields = line.split_ascii_whitespace();
        let label: i64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .filter(|&l| l >= UNKNOWN_LABEL)
            .ok_or_else(|| Error::parse(WHAT, line_no, "bad label"))?;
        let before = values.len();
        for f in fields {
            let v: f64 = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(WHAT, line_no, format!("bad value `{f}`")))?;
            values.push(v);
            if values.len() - before > dim {
                break;
            }
        }
        if values.len() - before != dim {
            return Err(Error::parse(
                WHAT,
                line_no,
                format!("expected {dim} values after the label"),
            ));
        }
        labels.push(label);
    }
    if labels.len() != n {
        return Err(Error::parse(WHAT, 1, format!("header says {n} rows, found {}", labels.len())));
    }
    let matrix = Array2::from_shape_vec((n, dim), values).expect("row lengths checked");
    EmbeddingBatch::new(matrix, labels, provenance)
}

pub fn write_embeddings(batch: &EmbeddingBatch, path: &Path) -> Result<()> {
    fs::write(path, format_embeddings(batch)).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingBatch> {
    parse_embeddings(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
