use super::{DenseArray, NdError};

/// Relative pivot floor below which a Cholesky factorization is rejected.
const PIVOT_FLOOR: f64 = 1e-13;

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` when a
/// pivot is not safely positive.
fn cholesky(a: &DenseArray) -> Option<Vec<f64>> {
    let n = a.shape()[0];
    let max_diag = (0..n).map(|i| a.at2(i, i).abs()).fold(0.0, f64::max);
    let floor = PIVOT_FLOOR * max_diag.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.at2(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a.at2(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

fn cholesky_apply(l: &[f64], n: usize, b: &DenseArray) -> DenseArray {
    let q = b.shape()[1];
    let mut x = b.clone();
    for c in 0..q {
        // forward: L y = b
        for i in 0..n {
            let mut s = x.at2(i, c);
            for k in 0..i {
                s -= l[i * n + k] * x.at2(k, c);
            }
            x.set2(i, c, s / l[i * n + i]);
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x.at2(i, c);
            for k in i + 1..n {
                s -= l[k * n + i] * x.at2(k, c);
            }
            x.set2(i, c, s / l[i * n + i]);
        }
    }
    x
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &DenseArray, b: &DenseArray) -> Result<DenseArray, NdError> {
    let (n, n2) = a.dims2()?;
    let (bn, _) = b.dims2()?;
    if n != n2 || bn != n {
        return Err(NdError::shape("cholesky_solve", a.shape(), b.shape()));
    }
    let l = cholesky(a).ok_or(NdError::Singular { lambda: 0.0 })?;
    Ok(cholesky_apply(&l, n, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub weights: DenseArray,
    /// Regularization actually used after any escalation.
    pub lambda: f64,
}

/// `argmin_W ‖T − R·W‖² + λ‖W‖²` through the normal equations.
///
/// If the factorization fails, λ is multiplied by 10 until it reaches 10⁶
/// times its starting value. A zero λ starts escalation from a jitter of
/// 1e-12 times the largest diagonal entry of `RᵀR`.
pub fn ridge_solve(r: &DenseArray, t: &DenseArray, lambda: f64) -> Result<RidgeSolution, NdError> {
    let (m, p) = r.dims2()?;
    let (mt, _) = t.dims2()?;
    if mt != m {
        return Err(NdError::shape("ridge_solve", r.shape(), t.shape()));
    }
    if m == 0 {
        return Err(NdError::InvalidArgument("ridge_solve needs at least one row".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(NdError::InvalidArgument(format!(
            "ridge lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let rt = r.transpose()?;
    let gram = rt.matmul(r)?;
    let rhs = rt.matmul(t)?;

    let regularized = |lam: f64| {
        let mut a = gram.clone();
        for i in 0..p {
            let v = a.at2(i, i) + lam;
            a.set2(i, i, v);
        }
        a
    };

    let mut lam = lambda;
    if let Some(l) = cholesky(&regularized(lam)) {
        return Ok(RidgeSolution {
            weights: cholesky_apply(&l, p, &rhs),
            lambda: lam,
        });
    }
    let start = if lambda > 0.0 {
        lambda
    } else {
        let max_diag = (0..p).map(|i| gram.at2(i, i)).fold(0.0, f64::max);
        1e-12 * max_diag.max(1.0)
    };
    lam = start;
    let ceiling = start * 1e6;
    loop {
        if lam != lambda {
            if let Some(l) = cholesky(&regularized(lam)) {
                log::warn!("ridge_solve: escalated lambda from {lambda:e} to {lam:e}");
                return Ok(RidgeSolution {
                    weights: cholesky_apply(&l, p, &rhs),
                    lambda: lam,
                });
            }
        }
        if lam >= ceiling {
            return Err(NdError::Singular { lambda: lam });
        }
        lam = (lam * 10.0).min(ceiling);
    }
}
