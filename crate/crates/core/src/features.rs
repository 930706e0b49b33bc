//! Per-user feature views, dense or CSR, and their binary container.
//!
//! Container layout: the 8-byte magic `GLFEAT01`, a little-endian `u64`
//! header length, a JSON header, then each view's payload in header order.
//! Dense payloads are `rows * cols` little-endian `f64`; sparse payloads are
//! `rows + 1` `u64` row pointers, `nnz` `u32` column indices and `nnz` `f64`
//! values.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::SparseVector;
pub use crate::util::Provenance;

const MAGIC: &[u8; 8] = b"GLFEAT01";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad feature file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("view `{0}` not present")]
    MissingView(String),
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(cols: usize, rows: &[SparseVector]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let (mut indices, mut values) = (Vec::new(), Vec::new());
        for r in rows {
            assert_eq!(r.dim, cols, "sparse row dimension");
            indices.extend(r.indices.iter().map(|&i| i as u32));
            values.extend_from_slice(&r.values);
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// (column, value) pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let (mut indices, mut values) = (Vec::new(), Vec::new());
        for &r in rows {
            let span = self.indptr[r]..self.indptr[r + 1];
            indices.extend_from_slice(&self.indices[span.clone()]);
            values.extend_from_slice(&self.values[span]);
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewMatrix {
    Dense(Array2<f64>),
    Sparse(CsrMatrix),
}

impl ViewMatrix {
    pub fn rows(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows(),
            Self::Sparse(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Self::Dense(m) => m.ncols(),
            Self::Sparse(m) => m.cols(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Self::Sparse(_))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        match self {
            Self::Dense(m) => Self::Dense(m.select(ndarray::Axis(0), rows)),
            Self::Sparse(m) => Self::Sparse(m.select_rows(rows)),
        }
    }

    /// Row `r` as a dense vector.
    pub fn dense_row(&self, r: usize) -> Vec<f64> {
        match self {
            Self::Dense(m) => m.row(r).to_vec(),
            Self::Sparse(m) => {
                let mut v = vec![0.0; m.cols()];
                for (c, x) in m.row(r) {
                    v[c] = x;
                }
                v
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Sparse(m) => m.to_dense(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    pub matrix: ViewMatrix,
    /// Rows carrying the zero fallback (isolated node, empty document, no
    /// timestamps).
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub user_ids: Vec<String>,
    pub views: Vec<View>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ViewHeader {
    name: String,
    kind: String,
    rows: usize,
    cols: usize,
    nnz: usize,
    flagged: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    user_ids: Vec<String>,
    views: Vec<ViewHeader>,
    provenance: Provenance,
}

impl FeatureSet {
    pub fn view(&self, name: &str) -> Result<&View, FeatureError> {
        self.views
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| FeatureError::MissingView(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            user_ids: rows.iter().map(|&r| self.user_ids[r].clone()).collect(),
            views: self
                .views
                .iter()
                .map(|v| View {
                    name: v.name.clone(),
                    matrix: v.matrix.select_rows(rows),
                    flagged: rows
                        .iter()
                        .enumerate()
                        .filter(|(_, r)| v.flagged.contains(r))
                        .map(|(i, _)| i)
                        .collect(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            user_ids: self.user_ids.clone(),
            views: self
                .views
                .iter()
                .map(|v| ViewHeader {
                    name: v.name.clone(),
                    kind: if v.matrix.is_sparse() { "sparse" } else { "dense" }.into(),
                    rows: v.matrix.rows(),
                    cols: v.matrix.cols(),
                    nnz: match &v.matrix {
                        ViewMatrix::Sparse(m) => m.nnz(),
                        ViewMatrix::Dense(_) => 0,
                    },
                    flagged: v.flagged.clone(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.views {
            match &v.matrix {
                ViewMatrix::Dense(m) => {
                    for x in m.iter() {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                ViewMatrix::Sparse(m) => {
                    for p in &m.indptr {
                        out.extend_from_slice(&(*p as u64).to_le_bytes());
                    }
                    for i in &m.indices {
                        out.extend_from_slice(&i.to_le_bytes());
                    }
                    for x in &m.values {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, FeatureError> {
        let bad = |reason: &str| FeatureError::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated"))? != MAGIC {
            return Err(bad("not a feature file"));
        }
        let len = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let header: Header = serde_json::from_slice(r.take(len).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| bad(&format!("header: {e}")))?;
        let mut views = Vec::new();
        for h in header.views {
            if h.rows != header.user_ids.len() {
                return Err(bad(&format!("view {} has {} rows for {} users", h.name, h.rows, header.user_ids.len())));
            }
            let matrix = match h.kind.as_str() {
                "dense" => {
                    let data = (0..h.rows * h.cols)
                        .map(|_| r.f64())
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| bad("truncated dense view"))?;
                    ViewMatrix::Dense(Array2::from_shape_vec((h.rows, h.cols), data).expect("shape matches length"))
                }
                "sparse" => {
                    let indptr = (0..=h.rows)
                        .map(|_| r.u64().map(|x| x as usize))
                        .collect::<Option<Vec<usize>>>()
                        .ok_or_else(|| bad("truncated sparse view"))?;
                    let indices = (0..h.nnz)
                        .map(|_| r.u32())
                        .collect::<Option<Vec<u32>>>()
                        .ok_or_else(|| bad("truncated sparse view"))?;
                    let values = (0..h.nnz)
                        .map(|_| r.f64())
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| bad("truncated sparse view"))?;
                    let ok = indptr.first() == Some(&0)
                        && indptr.last() == Some(&h.nnz)
                        && indptr.windows(2).all(|w| w[0] <= w[1])
                        && indices.iter().all(|&i| (i as usize) < h.cols);
                    if !ok {
                        return Err(bad(&format!("inconsistent sparse view {}", h.name)));
                    }
                    ViewMatrix::Sparse(CsrMatrix {
                        rows: h.rows,
                        cols: h.cols,
                        indptr,
                        indices,
                        values,
                    })
                }
                other => return Err(bad(&format!("unknown view kind `{other}`"))),
            };
            views.push(View {
                name: h.name,
                matrix,
                flagged: h.flagged,
            });
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            user_ids: header.user_ids,
            views,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let bytes = std::fs::read(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Dense rows from per-user slices.
pub fn dense_from_rows<'a>(cols: usize, rows: impl IntoIterator<Item = ArrayView1<'a, f64>>) -> Array2<f64> {
    let rows: Vec<ArrayView1<f64>> = rows.into_iter().collect();
    let mut out = Array2::zeros((rows.len(), cols));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&src);
    }
    out
}
