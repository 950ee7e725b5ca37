use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::io::{content_lines, parse_node_id, read_to_string, write_string};
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// One `dim`-length row of input features per node, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(FeatureMatrix { dim, data })
    }

    pub fn zeros(num_nodes: usize, dim: usize) -> Self {
        FeatureMatrix { dim, data: vec![0.0; num_nodes * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, v: usize) -> &[f32] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }

    pub fn try_row(&self, v: usize) -> Result<&[f32]> {
        if v < self.num_rows() {
            Ok(self.row(v))
        } else {
            Err(Error::MissingRow { what: "feature row", id: v })
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Reads `node_id<TAB>f_1<TAB>...<TAB>f_d` lines; every node in `0..num_nodes` needs a row.
pub fn load_features(path: impl AsRef<Path>, expected_dim: usize, num_nodes: usize) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut data = vec![0.0f32; num_nodes * expected_dim];
    let mut seen = vec![false; num_nodes];
    for (line_no, line) in content_lines(&text) {
        let mut toks = line.split_whitespace();
        let id = parse_node_id(toks.next().unwrap_or_default(), path, line_no)?;
        if id >= num_nodes {
            return Err(Error::NodeOutOfRange { id, num_nodes });
        }
        let values: Vec<f32> = toks
            .map(|t| t.parse::<f32>().map_err(|_| Error::parse(path, line_no, format!("invalid number {t:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != expected_dim {
            return Err(Error::DimensionMismatch { expected: expected_dim, got: values.len() });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{}:{line_no}", path.display())));
        }
        data[id * expected_dim..(id + 1) * expected_dim].copy_from_slice(&values);
        seen[id] = true;
    }
    if let Some(id) = seen.iter().position(|s| !s) {
        return Err(Error::MissingRow { what: "feature row", id });
    }
    FeatureMatrix::new(expected_dim, data)
}

pub fn save_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for v in 0..features.num_rows() {
        let _ = write!(out, "{v}");
        for x in features.row(v) {
            let _ = write!(out, "\t{x}");
        }
        out.push('\n');
    }
    write_string(path.as_ref(), &out)
}

/// Sparse bag-of-words counts: per node, `(word index, count)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfWords {
    pub vocab_size: usize,
    pub rows: Vec<Vec<(usize, f32)>>,
}

impl BagOfWords {
    /// Reads a `vocab=<n>` header followed by `node_id<TAB>word:count word:count ...` lines.
    pub fn load(path: impl AsRef<Path>, num_nodes: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        let mut lines = content_lines(&text);
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing vocab= header"))?;
        let vocab_size = header
            .strip_prefix("vocab=")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::parse(path, hl, "expected vocab=<count>"))?;
        let mut rows = vec![Vec::new(); num_nodes];
        for (line_no, line) in lines {
            let mut toks = line.split_whitespace();
            let id = parse_node_id(toks.next().unwrap_or_default(), path, line_no)?;
            if id >= num_nodes {
                return Err(Error::NodeOutOfRange { id, num_nodes });
            }
            for t in toks {
                let (w, c) = t
                    .split_once(':')
                    .ok_or_else(|| Error::parse(path, line_no, format!("expected word:count, got {t:?}")))?;
                let w: usize =
                    w.parse().map_err(|_| Error::parse(path, line_no, format!("invalid word index {w:?}")))?;
                let c: f32 = c.parse().map_err(|_| Error::parse(path, line_no, format!("invalid count {c:?}")))?;
                if w >= vocab_size {
                    return Err(Error::parse(path, line_no, format!("word index {w} >= vocab {vocab_size}")));
                }
                rows[id].push((w, c));
            }
        }
        Ok(BagOfWords { vocab_size, rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = format!("vocab={}\n", self.vocab_size);
        for (v, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{v}\t");
            let toks: Vec<String> = row.iter().map(|(w, c)| format!("{w}:{c}")).collect();
            out.push_str(&toks.join(" "));
            out.push('\n');
        }
        write_string(path.as_ref(), &out)
    }
}

/// Projects bag-of-words rows through a seeded `vocab × d` standard-normal matrix and
/// L2-normalises each non-zero result.
pub fn project_features(bow: &BagOfWords, d: usize, seed: u64) -> Result<FeatureMatrix> {
    if d == 0 {
        return Err(Error::Config("projection dimension must be positive".into()));
    }
    if bow.vocab_size == 0 {
        return Err(Error::Config("empty vocabulary".into()));
    }
    // Row w of the projection comes from its own stream, so the matrix does not depend on
    // which words happen to occur.
    let mut projection = vec![0.0f64; bow.vocab_size * d];
    for (w, row) in projection.chunks_exact_mut(d).enumerate() {
        let mut r = rng::stream(seed, Stream::Projection, &[w as u64]);
        for x in row {
            *x = r.sample(StandardNormal);
        }
    }
    let mut data = vec![0.0f32; bow.rows.len() * d];
    let mut acc = vec![0.0f64; d];
    for (v, row) in bow.rows.iter().enumerate() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &(w, c) in row {
            let g = &projection[w * d..(w + 1) * d];
            for (a, &gi) in acc.iter_mut().zip(g) {
                *a += c as f64 * gi;
            }
        }
        let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (o, a) in data[v * d..(v + 1) * d].iter_mut().zip(&acc) {
                *o = (a / norm) as f32;
            }
        }
    }
    FeatureMatrix::new(d, data)
}
