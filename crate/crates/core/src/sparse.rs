//! Compressed sparse row/column containers and the libsvm text format.
//!
//! [`SparseRowMatrix`] is the only feature container the solvers accept. Each
//! row is one sample; within a row, column indices are strictly increasing.
//! The coordinate-wise solvers sweep parameters feature by feature, so they
//! work on the column-major mirror produced by
//! [`SparseRowMatrix::to_column_major`].
//!
//! ```text
//! # target idx:val idx:val ...
//! 1 0:0.5 3:2.0
//! -1 2:1
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{FmError, Result};

/// CSR matrix. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

/// CSC matrix, the transposed-role mirror of [`SparseRowMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColMatrix {
    n_rows: usize,
    n_cols: usize,
    col_offsets: Vec<usize>,
    row_indices: Vec<usize>,
    values: Vec<f64>,
}

fn check_compressed(
    n_outer: usize,
    n_inner: usize,
    offsets: &[usize],
    indices: &[usize],
    values: &[f64],
) -> Result<()> {
    if offsets.len() != n_outer + 1 {
        return Err(FmError::Dimension(format!(
            "expected {} offsets, got {}",
            n_outer + 1,
            offsets.len()
        )));
    }
    if indices.len() != values.len() {
        return Err(FmError::Dimension(format!(
            "{} indices but {} values",
            indices.len(),
            values.len()
        )));
    }
    if offsets[0] != 0 || offsets[n_outer] != indices.len() {
        return Err(FmError::Contract(
            "offsets must start at 0 and end at nnz".into(),
        ));
    }
    for (o, win) in offsets.windows(2).enumerate() {
        if win[1] < win[0] {
            return Err(FmError::Contract(format!("offsets decrease at {o}")));
        }
        let idx = &indices[win[0]..win[1]];
        if idx.windows(2).any(|p| p[1] <= p[0]) {
            return Err(FmError::Contract(format!(
                "indices of slice {o} are not strictly increasing"
            )));
        }
        if let Some(&last) = idx.last() {
            if last >= n_inner {
                return Err(FmError::Contract(format!(
                    "index {last} out of range {n_inner} in slice {o}"
                )));
            }
        }
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(FmError::Contract(format!("non-finite value {v}")));
    }
    Ok(())
}

impl SparseRowMatrix {
    /// Builds a matrix from raw CSR arrays, validating every invariant.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_compressed(n_rows, n_cols, &row_offsets, &col_indices, &values)?;
        Ok(SparseRowMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a matrix from per-row `(column, value)` lists. Columns within a
    /// row must already be strictly increasing.
    pub fn from_rows<R>(n_cols: usize, rows: R) -> Result<Self>
    where
        R: IntoIterator,
        R::Item: AsRef<[(usize, f64)]>,
    {
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for &(c, v) in row.as_ref() {
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Self::from_parts(
            row_offsets.len() - 1,
            n_cols,
            row_offsets,
            col_indices,
            values,
        )
    }

    /// Matrix with `n_rows` empty rows.
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        SparseRowMatrix {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    /// Sum of `value * dense[col]` over the nonzeros of row `r`.
    ///
    /// Panics if `r` is out of range or `dense` is shorter than `n_cols`.
    #[inline]
    pub fn row_dot(&self, r: usize, dense: &[f64]) -> f64 {
        assert!(r < self.n_rows, "row {r} out of range {}", self.n_rows);
        assert_eq!(dense.len(), self.n_cols, "dense vector length mismatch");
        let (idx, val) = self.row(r);
        idx.iter().zip(val).map(|(&c, &v)| v * dense[c]).sum()
    }

    pub fn to_column_major(&self) -> SparseColMatrix {
        let (offsets, inner, values) = transpose_compressed(
            self.n_rows,
            self.n_cols,
            &self.row_offsets,
            &self.col_indices,
            &self.values,
        );
        SparseColMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            col_offsets: offsets,
            row_indices: inner,
            values,
        }
    }

    /// Row-major dense copy, for tests and tiny inputs.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, dense_row) in out.iter_mut().enumerate() {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                dense_row[c] = v;
            }
        }
        out
    }

    /// Same rows with the column count raised to `n_cols`.
    pub fn with_n_cols(mut self, n_cols: usize) -> Result<Self> {
        if n_cols < self.n_cols {
            return Err(FmError::Dimension(format!(
                "cannot shrink {} columns to {n_cols}",
                self.n_cols
            )));
        }
        self.n_cols = n_cols;
        Ok(self)
    }

    /// Drops every entry whose column is `>= n_cols`.
    pub fn clip_columns(&self, n_cols: usize) -> Self {
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                if c < n_cols {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseRowMatrix {
            n_rows: self.n_rows,
            n_cols: n_cols.min(self.n_cols),
            row_offsets,
            col_indices,
            values,
        }
    }

    /// New matrix made of the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for &r in rows {
            let (idx, val) = self.row(r);
            col_indices.extend_from_slice(idx);
            values.extend_from_slice(val);
            row_offsets.push(col_indices.len());
        }
        SparseRowMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// FNV-1a digest of shape and contents, used to detect a caller swapping
    /// matrices between warm-started calls.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        mix(self.n_rows as u64);
        mix(self.n_cols as u64);
        self.row_offsets.iter().for_each(|&o| mix(o as u64));
        self.col_indices.iter().for_each(|&c| mix(c as u64));
        self.values.iter().for_each(|v| mix(v.to_bits()));
        h
    }
}

impl SparseColMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values of column `c`.
    #[inline]
    pub fn col(&self, c: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.col_offsets[c], self.col_offsets[c + 1]);
        (&self.row_indices[s..e], &self.values[s..e])
    }

    pub fn to_row_major(&self) -> SparseRowMatrix {
        let (offsets, inner, values) = transpose_compressed(
            self.n_cols,
            self.n_rows,
            &self.col_offsets,
            &self.row_indices,
            &self.values,
        );
        SparseRowMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets: offsets,
            col_indices: inner,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_cols]; self.n_rows];
        for c in 0..self.n_cols {
            let (idx, val) = self.col(c);
            for (&r, &v) in idx.iter().zip(val) {
                out[r][c] = v;
            }
        }
        out
    }
}

// Counting-sort transpose; inner indices of the output come out sorted
// because outer slices are visited in order.
fn transpose_compressed(
    n_outer: usize,
    n_inner: usize,
    offsets: &[usize],
    indices: &[usize],
    values: &[f64],
) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let nnz = values.len();
    let mut out_offsets = vec![0usize; n_inner + 1];
    for &i in indices {
        out_offsets[i + 1] += 1;
    }
    for i in 0..n_inner {
        out_offsets[i + 1] += out_offsets[i];
    }
    let mut cursor = out_offsets[..n_inner].to_vec();
    let mut out_indices = vec![0usize; nnz];
    let mut out_values = vec![0.0; nnz];
    for o in 0..n_outer {
        for k in offsets[o]..offsets[o + 1] {
            let i = indices[k];
            let dst = cursor[i];
            out_indices[dst] = o;
            out_values[dst] = values[k];
            cursor[i] += 1;
        }
    }
    (out_offsets, out_indices, out_values)
}

/// Design matrix with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub x: SparseRowMatrix,
    pub y: Vec<f64>,
}

impl LabeledData {
    pub fn new(x: SparseRowMatrix, y: Vec<f64>) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(FmError::Dimension(format!(
                "{} rows but {} targets",
                x.n_rows(),
                y.len()
            )));
        }
        if let Some(t) = y.iter().find(|t| !t.is_finite()) {
            return Err(FmError::Contract(format!("non-finite target {t}")));
        }
        Ok(LabeledData { x, y })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Errors unless every target is exactly -1 or +1.
    pub fn check_binary_labels(&self) -> Result<()> {
        match self.y.iter().position(|&t| t != 1.0 && t != -1.0) {
            Some(n) => Err(FmError::Contract(format!(
                "classification labels must be -1 or +1, row {n} has {}",
                self.y[n]
            ))),
            None => Ok(()),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        LabeledData {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
        }
    }
}

/// Knobs for [`parse_libsvm`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LibsvmOptions {
    /// Indices in the file start at 1; subtract one on read.
    pub one_based: bool,
    /// Force the column count. Must be at least `1 + max index`.
    pub n_cols: Option<usize>,
}

/// Reads `<target> <idx>:<val> ...` lines. Blank lines and lines starting
/// with `#` are skipped; text after an inline `#` is ignored. Zero-valued
/// entries are dropped.
pub fn parse_libsvm<R: BufRead>(reader: R, opts: &LibsvmOptions) -> Result<LabeledData> {
    let mut y = Vec::new();
    let mut row_offsets = vec![0usize];
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    let mut max_col: Option<usize> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line?;
        let data = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = data.split_whitespace();
        let Some(target_tok) = tokens.next() else {
            continue;
        };
        let target: f64 = target_tok.parse().map_err(|_| FmError::Parse {
            line: line_no,
            msg: format!("bad target {target_tok:?}"),
        })?;
        if !target.is_finite() {
            return Err(FmError::Range {
                line: line_no,
                msg: format!("non-finite target {target_tok}"),
            });
        }
        let mut prev: Option<usize> = None;
        for tok in tokens {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| FmError::Parse {
                line: line_no,
                msg: format!("expected idx:val, got {tok:?}"),
            })?;
            let raw: usize = idx_str.parse().map_err(|_| FmError::Parse {
                line: line_no,
                msg: format!("bad feature index {idx_str:?}"),
            })?;
            let val: f64 = val_str.parse().map_err(|_| FmError::Parse {
                line: line_no,
                msg: format!("bad feature value {val_str:?}"),
            })?;
            if !val.is_finite() {
                return Err(FmError::Range {
                    line: line_no,
                    msg: format!("non-finite value at feature {idx_str}"),
                });
            }
            let idx = if opts.one_based {
                raw.checked_sub(1).ok_or(FmError::Structure {
                    line: line_no,
                    msg: "index 0 in one-based input".into(),
                })?
            } else {
                raw
            };
            if let Some(p) = prev {
                if idx == p {
                    return Err(FmError::Structure {
                        line: line_no,
                        msg: format!("duplicate feature index {raw}"),
                    });
                }
                if idx < p {
                    return Err(FmError::Structure {
                        line: line_no,
                        msg: format!("feature index {raw} not ascending"),
                    });
                }
            }
            prev = Some(idx);
            if val != 0.0 {
                col_indices.push(idx);
                values.push(val);
                max_col = Some(max_col.map_or(idx, |m| m.max(idx)));
            }
        }
        y.push(target);
        row_offsets.push(col_indices.len());
    }

    let needed = max_col.map_or(0, |m| m + 1);
    let n_cols = match opts.n_cols {
        Some(n) if n < needed => {
            return Err(FmError::Dimension(format!(
                "data needs {needed} columns but {n} were requested"
            )))
        }
        Some(n) => n,
        None => needed,
    };
    let x = SparseRowMatrix {
        n_rows: y.len(),
        n_cols,
        row_offsets,
        col_indices,
        values,
    };
    Ok(LabeledData { x, y })
}

/// Writes `data` in the 0-based libsvm format read by [`parse_libsvm`].
/// Values use the shortest representation that parses back to the same bits.
pub fn write_libsvm<W: Write>(data: &LabeledData, mut out: W) -> Result<()> {
    let mut line = String::new();
    for r in 0..data.n_rows() {
        line.clear();
        write!(line, "{:?}", data.y[r]).unwrap();
        let (idx, val) = data.x.row(r);
        for (&c, &v) in idx.iter().zip(val) {
            write!(line, " {c}:{v:?}").unwrap();
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}
