use std::fmt;

use super::NdError;

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for DenseArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseArray{:?}{:?}", self.shape, self.data)
    }
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NdError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NdError::InvalidArgument(format!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NdError> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(m * n);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n {
                return Err(NdError::InvalidArgument(format!(
                    "row {i} has length {} but row 0 has length {n}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![m, n],
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 array.
    pub fn dims2(&self) -> Result<(usize, usize), NdError> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(NdError::Rank {
                op: "dims2",
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize), NdError> {
        match self.shape.as_slice() {
            [a, b, c] => Ok((*a, *b, *c)),
            _ => Err(NdError::Rank {
                op: "dims3",
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let n = self.shape[1];
        self.data[i * n + j] = v;
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, NdError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self, NdError> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self, NdError> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NdError> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn zip(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, NdError> {
        if self.shape != other.shape {
            return Err(NdError::shape(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, NdError> {
        if self.shape != other.shape {
            return Err(NdError::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Result<Self, NdError> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NdError> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(NdError::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Selects rows of a matrix in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, NdError> {
        let (m, n) = self.dims2()?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(NdError::InvalidArgument(format!(
                    "row index {r} out of range for {m} rows"
                )));
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            shape: vec![rows.len(), n],
            data,
        })
    }

    /// Appends a column of ones to a matrix.
    pub fn with_ones_column(&self) -> Result<Self, NdError> {
        let (m, n) = self.dims2()?;
        let mut data = Vec::with_capacity(m * (n + 1));
        for i in 0..m {
            data.extend_from_slice(self.row(i));
            data.push(1.0);
        }
        Ok(Self {
            shape: vec![m, n + 1],
            data,
        })
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>, NdError> {
        let (m, n) = self.dims2()?;
        if n == 0 {
            return Err(NdError::InvalidArgument("argmax over zero columns".into()));
        }
        Ok((0..m)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for j in 1..n {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Rounds every entry to single precision and back.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.data {
            *x = *x as f32 as f64;
        }
    }
}

/// `out += a (m×k) · b (k×n)`, all row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(DenseArray::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(DenseArray::new(vec![], vec![1.0]).is_ok());
        assert!(DenseArray::new(vec![0, 3], vec![]).is_ok());
    }

    #[test]
    fn transpose_and_matmul() {
        let a = DenseArray::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let at = a.transpose().unwrap();
        assert_eq!(at.shape(), &[3, 2]);
        let g = a.matmul(&at).unwrap();
        assert_eq!(g.data(), &[14.0, 32.0, 32.0, 77.0]);
        assert!(matches!(a.matmul(&a), Err(NdError::ShapeMismatch { .. })));
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let a = DenseArray::from_rows(&[[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]]).unwrap();
        assert_eq!(a.argmax_rows().unwrap(), vec![0, 1]);
    }
}
