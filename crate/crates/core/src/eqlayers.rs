//! Closed-form permutation-equivariant linear layers and the TSNet stack.
//!
//! Tensors are row-major `[N, W, K]`: node, column (feature or class) and
//! channel. Every all-ones product is computed as a reduction followed by a
//! broadcast.

use crate::ndarr::{DenseArray, NdError};

/// Elementwise activation applied between layers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Relu,
    /// Slope 0.2 on the negative side.
    LeakyRelu,
    Identity,
}

impl Nonlinearity {
    pub const LEAKY_SLOPE: f64 = 0.2;

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Self::Relu => v.max(0.0),
            Self::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    Self::LEAKY_SLOPE * v
                }
            }
            Self::Identity => v,
        }
    }
}

/// `Σ_k1 x[.., k1] Λ[k1, k2]` over the trailing channel axis.
fn mix_channels(x: &DenseArray, lambda: &DenseArray) -> Result<DenseArray, NdError> {
    let k1 = *x.shape().last().unwrap_or(&0);
    let (l1, k2) = lambda.dims2()?;
    if l1 != k1 {
        return Err(NdError::shape("mix_channels", x.shape(), lambda.shape()));
    }
    let rows = x.len() / k1.max(1);
    let out = x.reshape(&[rows, k1])?.matmul(lambda)?;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = k2;
    out.into_reshape(&shape)
}

/// Sums of an `[N, W, K]` tensor: total `[K]`, per row `[N, K]` and per
/// column `[W, K]`.
struct Sums {
    total: Vec<f64>,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

fn sums(x: &DenseArray) -> Result<Sums, NdError> {
    let (n, w, k) = x.dims3()?;
    let mut s = Sums {
        total: vec![0.0; k],
        rows: vec![0.0; n * k],
        cols: vec![0.0; w * k],
    };
    for i in 0..n {
        for j in 0..w {
            for c in 0..k {
                let v = x.at3(i, j, c);
                s.rows[i * k + c] += v;
                s.cols[j * k + c] += v;
            }
        }
    }
    for i in 0..n {
        for c in 0..k {
            s.total[c] += s.rows[i * k + c];
        }
    }
    Ok(s)
}

fn vec_times(v: &[f64], lambda: &DenseArray) -> Vec<f64> {
    let (k1, k2) = (lambda.shape()[0], lambda.shape()[1]);
    let mut out = vec![0.0; k2];
    for a in 0..k1 {
        for (b, o) in out.iter_mut().enumerate() {
            *o += v[a] * lambda.at2(a, b);
        }
    }
    out
}

fn rows_times(m: &[f64], rows: usize, lambda: &DenseArray) -> Vec<Vec<f64>> {
    let k1 = lambda.shape()[0];
    (0..rows).map(|i| vec_times(&m[i * k1..(i + 1) * k1], lambda)).collect()
}

/// DeepSets layer `1_{N,N}·X·Λ₁ + X·Λ₂` on `X: N×F₁`.
pub fn deepsets_linear(
    x: &DenseArray,
    lambda1: &DenseArray,
    lambda2: &DenseArray,
) -> Result<DenseArray, NdError> {
    let (n, f1) = x.dims2()?;
    if lambda1.shape() != lambda2.shape() || lambda1.dims2()?.0 != f1 {
        return Err(NdError::shape("deepsets_linear", lambda1.shape(), lambda2.shape()));
    }
    let f2 = lambda1.shape()[1];
    let mut colsum = vec![0.0; f1];
    for i in 0..n {
        for (c, v) in colsum.iter_mut().zip(x.row(i)) {
            *c += v;
        }
    }
    let pooled = vec_times(&colsum, lambda1);
    let mut out = x.matmul(lambda2)?;
    for i in 0..n {
        for j in 0..f2 {
            let v = out.at2(i, j) + pooled[j];
            out.set2(i, j, v);
        }
    }
    Ok(out)
}

/// The four-term `S_N × S_F` layer on `X: [N, F, K₁]`:
/// `1_{N,N}X⁽¹⁾1_{F,F} + X⁽²⁾1_{F,F} + 1_{N,N}X⁽³⁾ + X⁽⁴⁾`
/// with `X⁽ⁱ⁾ = X·Λ⁽ⁱ⁾` over channels.
pub fn dss_linear(x: &DenseArray, lambdas: &[DenseArray; 4]) -> Result<DenseArray, NdError> {
    let (n, f, k1) = x.dims3()?;
    for l in lambdas {
        if l.dims2()?.0 != k1 || l.shape() != lambdas[0].shape() {
            return Err(NdError::shape("dss_linear", x.shape(), l.shape()));
        }
    }
    let s = sums(x)?;
    let total = vec_times(&s.total, &lambdas[0]);
    let rows = rows_times(&s.rows, n, &lambdas[1]);
    let cols = rows_times(&s.cols, f, &lambdas[2]);
    let mut out = mix_channels(x, &lambdas[3])?;
    let k2 = lambdas[0].shape()[1];
    let data = out.data_mut();
    for i in 0..n {
        for j in 0..f {
            for c in 0..k2 {
                data[(i * f + j) * k2 + c] += total[c] + rows[i][c] + cols[j][c];
            }
        }
    }
    Ok(out)
}

/// The twelve coefficient matrices of the general triple-symmetric linear
/// layer, stored 1-based as `lambda(1) ..= lambda(12)`.
///
/// The feature output uses 1–4 (feature to feature) and 11–12 (label to
/// feature); the label output uses 7–10 (label to label) and 5–6 (feature
/// to label).
#[derive(Debug, Clone, PartialEq)]
pub struct TsLinearParams {
    lambdas: Vec<DenseArray>,
}

impl TsLinearParams {
    pub fn new(lambdas: Vec<DenseArray>) -> Result<Self, NdError> {
        if lambdas.len() != 12 {
            return Err(NdError::InvalidArgument(format!(
                "expected 12 coefficient matrices, got {}",
                lambdas.len()
            )));
        }
        lambdas[0].dims2()?;
        for l in &lambdas {
            if l.shape() != lambdas[0].shape() {
                return Err(NdError::shape("TsLinearParams", lambdas[0].shape(), l.shape()));
            }
            if !l.is_finite() {
                return Err(NdError::InvalidArgument("non-finite coefficient".into()));
            }
        }
        Ok(Self { lambdas })
    }

    pub fn zeros(k1: usize, k2: usize) -> Self {
        Self {
            lambdas: vec![DenseArray::zeros(&[k1, k2]); 12],
        }
    }

    /// Only `Λ⁽ⁱ⁾[a, b] = 1`, everything else zero.
    pub fn unit(i: usize, k1: usize, k2: usize, a: usize, b: usize) -> Self {
        let mut p = Self::zeros(k1, k2);
        p.lambdas[i - 1].set2(a, b, 1.0);
        p
    }

    /// `(K₁, K₂)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.lambdas[0].shape()[0], self.lambdas[0].shape()[1])
    }

    /// 1-based.
    pub fn lambda(&self, i: usize) -> &DenseArray {
        &self.lambdas[i - 1]
    }

    pub fn lambda_mut(&mut self, i: usize) -> &mut DenseArray {
        &mut self.lambdas[i - 1]
    }
}

/// General `S_N × S_F × S_C`-equivariant linear map on `(X: [N,F,K₁],
/// Y: [N,C,K₁])`:
///
/// ```text
/// T₁ = (1X⁽¹⁾ + X⁽²⁾)1_{F,F} + 1X⁽³⁾ + X⁽⁴⁾ + (1Y⁽⁵⁾ + Y⁽⁶⁾)1_{C,F}
/// T₂ = (1Y⁽¹⁾ + Y⁽²⁾)1_{C,C} + 1Y⁽³⁾ + Y⁽⁴⁾ + (1X⁽⁵⁾ + X⁽⁶⁾)1_{F,C}
/// ```
///
/// with `1 = 1_{N,N}`, `X⁽ⁱ⁾ = X·Λ⁽ⁱ⁾` and `Y⁽ⁱ⁾ = Y·Λ⁽ⁱ⁺⁶⁾`.
pub fn ts_linear(
    x: &DenseArray,
    y: &DenseArray,
    p: &TsLinearParams,
) -> Result<(DenseArray, DenseArray), NdError> {
    let (n, f, k1) = x.dims3()?;
    let (ny, c, ky) = y.dims3()?;
    let (pk1, k2) = p.dims();
    if ny != n || ky != k1 || pk1 != k1 {
        return Err(NdError::shape("ts_linear", x.shape(), y.shape()));
    }
    if f == 0 || c == 0 {
        return Err(NdError::InvalidArgument("ts_linear needs F, C >= 1".into()));
    }
    let sx = sums(x)?;
    let sy = sums(y)?;

    // T₁
    let total_f: Vec<f64> = vec_times(&sx.total, p.lambda(1))
        .iter()
        .zip(vec_times(&sy.total, p.lambda(11)))
        .map(|(a, b)| a + b)
        .collect();
    let rows_x2 = rows_times(&sx.rows, n, p.lambda(2));
    let rows_y12 = rows_times(&sy.rows, n, p.lambda(12));
    let cols_x3 = rows_times(&sx.cols, f, p.lambda(3));
    let mut t1 = mix_channels(x, p.lambda(4))?;
    {
        let d = t1.data_mut();
        for i in 0..n {
            for j in 0..f {
                for k in 0..k2 {
                    d[(i * f + j) * k2 + k] +=
                        total_f[k] + rows_x2[i][k] + rows_y12[i][k] + cols_x3[j][k];
                }
            }
        }
    }

    // T₂
    let total_c: Vec<f64> = vec_times(&sy.total, p.lambda(7))
        .iter()
        .zip(vec_times(&sx.total, p.lambda(5)))
        .map(|(a, b)| a + b)
        .collect();
    let rows_y8 = rows_times(&sy.rows, n, p.lambda(8));
    let rows_x6 = rows_times(&sx.rows, n, p.lambda(6));
    let cols_y9 = rows_times(&sy.cols, c, p.lambda(9));
    let mut t2 = mix_channels(y, p.lambda(10))?;
    {
        let d = t2.data_mut();
        for i in 0..n {
            for j in 0..c {
                for k in 0..k2 {
                    d[(i * c + j) * k2 + k] +=
                        total_c[k] + rows_y8[i][k] + rows_x6[i][k] + cols_y9[j][k];
                }
            }
        }
    }
    Ok((t1, t2))
}

/// `Π_C(X, Y) = Y`.
pub fn label_projection(_x: &DenseArray, y: &DenseArray) -> DenseArray {
    y.clone()
}

/// Stack of triple-symmetric linear layers with one input and one output
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TsNetModel {
    pub layers: Vec<TsLinearParams>,
    pub nonlinearity: Nonlinearity,
}

impl TsNetModel {
    pub fn new(layers: Vec<TsLinearParams>, nonlinearity: Nonlinearity) -> Result<Self, NdError> {
        let widths_ok = !layers.is_empty()
            && layers[0].dims().0 == 1
            && layers.last().is_some_and(|l| l.dims().1 == 1)
            && layers.windows(2).all(|w| w[0].dims().1 == w[1].dims().0);
        if !widths_ok {
            return Err(NdError::InvalidArgument(
                "layer widths must chain from 1 channel back to 1 channel".into(),
            ));
        }
        Ok(Self {
            layers,
            nonlinearity,
        })
    }
}

/// `Π_C ∘ T⁽ᴸ⁾ ∘ σ ∘ … ∘ σ ∘ T⁽¹⁾` on `X: N×F`, `Y: N×C`, returning `N×C`.
pub fn tsnet_forward(
    model: &TsNetModel,
    x: &DenseArray,
    y: &DenseArray,
) -> Result<DenseArray, NdError> {
    let (n, f) = x.dims2()?;
    let (ny, c) = y.dims2()?;
    if ny != n {
        return Err(NdError::shape("tsnet_forward", x.shape(), y.shape()));
    }
    let mut xs = x.reshape(&[n, f, 1])?;
    let mut ys = y.reshape(&[n, c, 1])?;
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let (a, b) = ts_linear(&xs, &ys, layer)?;
        if l < last {
            xs = a.map(|v| model.nonlinearity.apply(v));
            ys = b.map(|v| model.nonlinearity.apply(v));
        } else {
            xs = a;
            ys = b;
        }
    }
    label_projection(&xs, &ys).into_reshape(&[n, c])
}
