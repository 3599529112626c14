use super::{DenseArray, NdError};

/// Compressed sparse row matrix. Column indices within a row keep the order
/// they were given in; reductions over a row follow that order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, NdError> {
        if offsets.len() != rows + 1
            || offsets[0] != 0
            || *offsets.last().unwrap() != indices.len()
            || indices.len() != values.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
            || indices.iter().any(|&c| c >= cols)
        {
            return Err(NdError::InvalidArgument(
                "inconsistent CSR offsets/indices/values".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    /// Same sparsity pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, NdError> {
        if values.len() != self.nnz() {
            return Err(NdError::InvalidArgument(format!(
                "expected {} values, got {}",
                self.nnz(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    /// `self · x` for `x` of shape `[cols, m]`.
    pub fn matmul_dense(&self, x: &DenseArray) -> Result<DenseArray, NdError> {
        let (xr, m) = x.dims2()?;
        if xr != self.cols {
            return Err(NdError::shape(
                "csr_matmul",
                &[self.rows, self.cols],
                x.shape(),
            ));
        }
        let mut out = vec![0.0; self.rows * m];
        spmm_weights(self, &self.values, x.data(), &mut out, m);
        DenseArray::new(vec![self.rows, m], out)
    }

    pub fn to_dense(&self) -> DenseArray {
        let mut out = DenseArray::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for e in self.row_range(r) {
                let c = self.indices[e];
                let v = out.at2(r, c) + self.values[e];
                out.set2(r, c, v);
            }
        }
        out
    }
}

/// `out[r, :] += Σ_e w[e] · x[col(e), :]` over rows of the pattern.
pub(crate) fn spmm_weights(pattern: &CsrMatrix, w: &[f64], x: &[f64], out: &mut [f64], m: usize) {
    for r in 0..pattern.rows {
        let orow = &mut out[r * m..(r + 1) * m];
        for e in pattern.row_range(r) {
            let c = pattern.indices[e];
            let we = w[e];
            let xrow = &x[c * m..(c + 1) * m];
            for (o, &xv) in orow.iter_mut().zip(xrow) {
                *o += we * xv;
            }
        }
    }
}

/// Transposed product: `out[col(e), :] += w[e] · g[r, :]`.
pub(crate) fn spmm_weights_t(pattern: &CsrMatrix, w: &[f64], g: &[f64], out: &mut [f64], m: usize) {
    for r in 0..pattern.rows {
        let grow = &g[r * m..(r + 1) * m];
        for e in pattern.row_range(r) {
            let c = pattern.indices[e];
            let we = w[e];
            let orow = &mut out[c * m..(c + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += we * gv;
            }
        }
    }
}
