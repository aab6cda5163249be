use super::{Tensor, TensorError};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub shape: [usize; 2],
    /// `shape[0] + 1` monotone offsets into `cols`/`vals`.
    pub offsets: Vec<usize>,
    /// Strictly increasing within each row.
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> SparseMatrix {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut offsets = vec![0usize; rows + 1];
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            out_cols.push(c);
            vals.push(v);
            offsets[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        SparseMatrix {
            shape: [rows, cols],
            offsets,
            cols: out_cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> SparseMatrix {
        SparseMatrix {
            shape: [n, n],
            offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> SparseMatrix {
        SparseMatrix {
            shape: [rows, cols],
            offsets: vec![0; rows + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.shape[0], self.shape[1]);
        for i in 0..self.shape[0] {
            for (j, v) in self.row(i) {
                t.data[i * self.shape[1] + j] = v;
            }
        }
        t
    }

    /// Stacks matrices along the diagonal.
    pub fn block_diagonal(blocks: &[&SparseMatrix]) -> SparseMatrix {
        let rows: usize = blocks.iter().map(|b| b.shape[0]).sum();
        let cols: usize = blocks.iter().map(|b| b.shape[1]).sum();
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        let nnz = blocks.iter().map(|b| b.nnz()).sum();
        let mut out_cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        let mut col_base = 0;
        for b in blocks {
            for i in 0..b.shape[0] {
                for (j, v) in b.row(i) {
                    out_cols.push(col_base + j);
                    vals.push(v);
                }
                offsets.push(out_cols.len());
            }
            col_base += b.shape[1];
        }
        SparseMatrix {
            shape: [rows, cols],
            offsets,
            cols: out_cols,
            vals,
        }
    }

    /// `self · h`.
    pub fn spmm(&self, h: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape[1] != h.rows() {
            return Err(TensorError::Shape {
                op: "spmm",
                left: self.shape,
                right: h.shape,
            });
        }
        let c = h.cols();
        let mut out = Tensor::zeros(self.shape[0], c);
        for i in 0..self.shape[0] {
            let orow = &mut out.data[i * c..(i + 1) * c];
            for (j, v) in self.row(i) {
                for (o, &x) in orow.iter_mut().zip(&h.data[j * c..(j + 1) * c]) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`, used for the backward pass.
    pub fn spmm_transposed(&self, g: &Tensor) -> Tensor {
        let c = g.cols();
        let mut out = Tensor::zeros(self.shape[1], c);
        for i in 0..self.shape[0] {
            let grow = &g.data[i * c..(i + 1) * c];
            for (j, v) in self.row(i) {
                for (o, &x) in out.data[j * c..(j + 1) * c].iter_mut().zip(grow) {
                    *o += v * x;
                }
            }
        }
        out
    }
}
