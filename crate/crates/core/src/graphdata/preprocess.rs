use crate::ndarr::{CsrMatrix, DenseArray};

use super::{Graph, GraphError};

const PCA_TOL: f64 = 1e-9;

/// Feature preprocessing applied to every graph before it reaches a model:
/// optional PCA (only when the graph has more features than `pca_dim`), then
/// optional row L2 normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "default_true")]
    pub l2_normalize: bool,
    #[serde(default)]
    pub pca_dim: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            l2_normalize: true,
            pca_dim: None,
        }
    }
}

impl PreprocessConfig {
    pub fn apply(&self, graph: &Graph) -> Result<Graph, GraphError> {
        let mut x = graph.features().clone();
        if let Some(d) = self.pca_dim {
            if x.shape()[1] > d {
                x = pca_reduce(&x, d.min(x.shape()[0]))?;
            }
        }
        if self.l2_normalize {
            x = l2_normalize_rows(&x);
        }
        graph.with_features(x)
    }
}
const PCA_MAX_ITERS: usize = 5000;

/// Scales each nonzero row to unit Euclidean norm. Zero rows stay zero.
pub fn l2_normalize_rows(x: &DenseArray) -> DenseArray {
    let mut out = x.clone();
    let Ok((n, f)) = x.dims2() else {
        return out;
    };
    let data = out.data_mut();
    for i in 0..n {
        let row = &mut data[i * f..(i + 1) * f];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Random-walk normalized adjacency `D⁻¹A`. Rows of isolated nodes are empty.
pub fn rw_normalize(graph: &Graph) -> CsrMatrix {
    let adj = graph.adjacency();
    let mut values = Vec::with_capacity(adj.nnz());
    for v in 0..adj.rows() {
        let deg = adj.row_range(v).len();
        values.extend(std::iter::repeat_n(1.0 / deg as f64, deg));
    }
    adj.with_values(values)
        .expect("same sparsity pattern as the adjacency")
}

/// Fitted principal components of a centered data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Column means, length F.
    pub mean: Vec<f64>,
    /// Unit principal directions as rows, d×F.
    pub components: DenseArray,
    /// Eigenvalues of the scatter matrix `XcᵀXc`, nonincreasing.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Fits the top `d` directions of mean-centered `x`.
    ///
    /// Works on whichever Gram matrix is smaller (`XcXcᵀ` when N < F, else
    /// `XcᵀXc`) with power iteration and deflation, one component at a time.
    pub fn fit(x: &DenseArray, d: usize) -> Result<Self, GraphError> {
        let (n, f) = x.dims2()?;
        if d == 0 || d > n.min(f) {
            return Err(GraphError::Invalid(format!(
                "pca dimension {d} must lie in [1, {}]",
                n.min(f)
            )));
        }
        let mut mean = vec![0.0; f];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let xc = DenseArray::from_fn(&[n, f], |idx| x.data()[idx] - mean[idx % f]);

        let row_space = n < f;
        let gram = if row_space {
            xc.matmul(&xc.transpose()?)?
        } else {
            xc.transpose()?.matmul(&xc)?
        };
        let (vecs, eigenvalues) = top_eigenpairs(&gram, d)?;

        let mut components = DenseArray::zeros(&[d, f]);
        for (c, (u, &lam)) in vecs.iter().zip(&eigenvalues).enumerate() {
            let mut dir = if row_space {
                // v = Xcᵀu, re-orthogonalized since u is only accurate to the
                // convergence tolerance
                let mut v = vec![0.0; f];
                for i in 0..n {
                    for (vj, xj) in v.iter_mut().zip(xc.row(i)) {
                        *vj += u[i] * xj;
                    }
                }
                let prev: Vec<Vec<f64>> = (0..c).map(|i| components.row(i).to_vec()).collect();
                orthogonalize(&mut v, &prev);
                if normalize(&mut v) > PCA_TOL * lam.abs().sqrt().max(1.0) {
                    v
                } else {
                    complete_basis(&components, c, f)
                }
            } else {
                u.clone()
            };
            fix_sign(&mut dir);
            components.data_mut()[c * f..(c + 1) * f].copy_from_slice(&dir);
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    /// Projects rows of `x` (N×F) onto the fitted components, giving N×d.
    pub fn transform(&self, x: &DenseArray) -> Result<DenseArray, GraphError> {
        let (n, f) = x.dims2()?;
        if f != self.mean.len() {
            return Err(GraphError::Invalid(format!(
                "pca was fitted on {} features, got {f}",
                self.mean.len()
            )));
        }
        let xc = DenseArray::from_fn(&[n, f], |idx| x.data()[idx] - self.mean[idx % f]);
        Ok(xc.matmul(&self.components.transpose()?)?)
    }
}

/// Top-`d` principal projection of mean-centered `x`.
pub fn pca_reduce(x: &DenseArray, d: usize) -> Result<DenseArray, GraphError> {
    Pca::fit(x, d)?.transform(x)
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, a) in v.iter().enumerate() {
        if a.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&a| a < 0.0) {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    norm
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // two passes of Gram-Schmidt keep orthogonality at machine precision
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            v.iter_mut().zip(b).for_each(|(a, bb)| *a -= p * bb);
        }
    }
}

/// First standard basis vector not in the span of the first `c` rows of
/// `components`, orthonormalized against them.
fn complete_basis(components: &DenseArray, c: usize, f: usize) -> Vec<f64> {
    let prev: Vec<Vec<f64>> = (0..c).map(|i| components.row(i).to_vec()).collect();
    for j in 0..f {
        let mut v = vec![0.0; f];
        v[j] = 1.0;
        orthogonalize(&mut v, &prev);
        if normalize(&mut v) > 1e-6 {
            return v;
        }
    }
    unreachable!("c < f leaves a free direction")
}

fn sym_apply(g: &DenseArray, v: &[f64]) -> Vec<f64> {
    (0..v.len()).map(|i| dot(g.row(i), v)).collect()
}

/// Leading eigenpairs of a symmetric PSD matrix by power iteration, each run
/// inside the orthogonal complement of the previously found vectors.
///
/// A component converges when `‖Gv − (vᵀGv)v‖ ≤ tol·λ₁`; the residual form
/// accepts any vector of a repeated eigenvalue.
fn top_eigenpairs(g: &DenseArray, d: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>), GraphError> {
    let m = g.shape()[0];
    let scale = (0..m).map(|i| g.at2(i, i)).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut vals = Vec::with_capacity(d);
    for comp in 0..d {
        let mut v = start_vector(g, &vecs);
        let mut lam = 0.0;
        let mut converged = false;
        for _ in 0..PCA_MAX_ITERS {
            let mut w = sym_apply(g, &v);
            orthogonalize(&mut w, &vecs);
            lam = dot(&v, &w);
            let resid = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - lam * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if resid <= PCA_TOL * scale {
                converged = true;
                break;
            }
            if normalize(&mut w) <= PCA_TOL * scale {
                // remaining spectrum is numerically zero
                converged = true;
                lam = 0.0;
                break;
            }
            v = w;
        }
        if !converged {
            return Err(GraphError::NonConvergence { component: comp });
        }
        vecs.push(v);
        vals.push(lam.max(0.0));
    }
    Ok((vecs, vals))
}

/// Deterministic start: the column of `G` with the largest norm after
/// removing the found directions, falling back to a standard basis vector.
fn start_vector(g: &DenseArray, found: &[Vec<f64>]) -> Vec<f64> {
    let m = g.shape()[0];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for j in 0..m {
        let mut v = g.row(j).to_vec();
        orthogonalize(&mut v, found);
        let norm = dot(&v, &v);
        if best.as_ref().is_none_or(|(b, _)| norm > *b) {
            best = Some((norm, v));
        }
    }
    let (norm, mut v) = best.unwrap_or((0.0, vec![0.0; m]));
    if norm > 0.0 {
        // a small tilt off the column keeps the start from being orthogonal
        // to the leading eigenvector in symmetric configurations
        for (i, a) in v.iter_mut().enumerate() {
            *a += 1e-3 * norm.sqrt() * (1.0 + i as f64).recip();
        }
        orthogonalize(&mut v, found);
        if normalize(&mut v) > 0.0 {
            return v;
        }
    }
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        orthogonalize(&mut e, found);
        if normalize(&mut e) > 1e-6 {
            return e;
        }
    }
    vec![0.0; m]
}
