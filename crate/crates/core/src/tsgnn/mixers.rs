use std::sync::Arc;

use crate::graphdata::{rw_normalize, Graph};
use crate::ndarr::{ridge_solve, DenseArray, NdError};

/// Least-squares translations between the feature and label spaces.
///
/// `t_f` is `(F+1)×C` and maps `[ÂX | 1]` to labels; `t_c` is `(C+1)×F`
/// and maps `[ÂY | 1]` to features. The last row of each is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixers {
    pub t_f: Arc<DenseArray>,
    pub t_c: Arc<DenseArray>,
    /// Effective ridge strength of each fit after scaling and escalation.
    pub lambda_f: f64,
    pub lambda_c: f64,
    pub visible: usize,
    pub warning: Option<String>,
}

impl Mixers {
    pub fn zeros(f: usize, c: usize) -> Self {
        Self {
            t_f: Arc::new(DenseArray::zeros(&[f + 1, c])),
            t_c: Arc::new(DenseArray::zeros(&[c + 1, f])),
            lambda_f: 0.0,
            lambda_c: 0.0,
            visible: 0,
            warning: None,
        }
    }
}

/// Ridge fit with `λ` scaled by `trace(RᵀR)/p`, so the caller's `λ` is
/// dimensionless.
fn scaled_ridge(r: &DenseArray, t: &DenseArray, lambda: f64) -> Result<(DenseArray, f64), NdError> {
    let p = r.shape()[1];
    let trace: f64 = r.data().iter().map(|v| v * v).sum();
    let scale = (trace / p as f64).max(f64::MIN_POSITIVE);
    let sol = ridge_solve(r, t, lambda * scale)?;
    Ok((sol.weights, sol.lambda))
}

/// Fits both mixers on the rows in `visible`.
///
/// `y_visible` is the one-hot label matrix with every non-visible row zero.
/// The regressors use the random-walk normalized adjacency `Â = D⁻¹A`, and
/// only visible rows enter the fit.
pub fn solve_mixers(
    graph: &Graph,
    x: &DenseArray,
    y_visible: &DenseArray,
    visible: &[usize],
    lambda: f64,
) -> Result<Mixers, NdError> {
    let (n, f) = x.dims2()?;
    let (ny, c) = y_visible.dims2()?;
    if ny != n || n != graph.num_nodes() {
        return Err(NdError::shape("solve_mixers", x.shape(), y_visible.shape()));
    }
    if !(lambda > 0.0) {
        return Err(NdError::InvalidArgument(format!(
            "mixer ridge lambda must be positive, got {lambda}"
        )));
    }
    if visible.is_empty() {
        let msg = "no visible labels; feature/label mixers set to zero".to_string();
        log::warn!("{msg}");
        return Ok(Mixers {
            warning: Some(msg),
            ..Mixers::zeros(f, c)
        });
    }
    let a_hat = rw_normalize(graph);
    let ax = a_hat.matmul_dense(x)?;
    let ay = a_hat.matmul_dense(y_visible)?;

    let r_f = ax.select_rows(visible)?.with_ones_column()?;
    let (t_f, lambda_f) = scaled_ridge(&r_f, &y_visible.select_rows(visible)?, lambda)?;
    let r_c = ay.select_rows(visible)?.with_ones_column()?;
    let (t_c, lambda_c) = scaled_ridge(&r_c, &x.select_rows(visible)?, lambda)?;
    Ok(Mixers {
        t_f: Arc::new(t_f),
        t_c: Arc::new(t_c),
        lambda_f,
        lambda_c,
        visible: visible.len(),
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{gen_sbm, SbmParams};

    fn sbm() -> Graph {
        gen_sbm(&SbmParams {
            classes: 3,
            nodes_per_class: 15,
            p_in: 0.4,
            p_out: 0.02,
            feature_dim: 5,
            noise: 0.0,
            seed: 8,
        })
        .unwrap()
    }

    #[test]
    fn empty_visible_set_gives_zero_mixers() {
        let g = sbm();
        let y = DenseArray::zeros(&[45, 3]);
        let m = solve_mixers(&g, g.features(), &y, &[], 1e-4).unwrap();
        assert_eq!(m.t_f.max_abs() + m.t_c.max_abs(), 0.0);
        assert!(m.warning.is_some());
        assert_eq!(m.t_f.shape(), &[6, 3]);
        assert_eq!(m.t_c.shape(), &[4, 5]);
    }

    #[test]
    fn smaller_lambda_fits_better() {
        let g = sbm();
        let vis = g.splits().train.clone();
        let y = g.one_hot_visible(&vis);
        let resid = |lam: f64| {
            let m = solve_mixers(&g, g.features(), &y, &vis, lam).unwrap();
            let ax = rw_normalize(&g).matmul_dense(g.features()).unwrap();
            let r = ax.select_rows(&vis).unwrap().with_ones_column().unwrap();
            r.matmul(&m.t_f)
                .unwrap()
                .sub(&y.select_rows(&vis).unwrap())
                .unwrap()
                .frobenius()
        };
        assert!(resid(1e-9) <= resid(1e-3));
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let g = sbm();
        let y = DenseArray::zeros(&[45, 3]);
        assert!(solve_mixers(&g, g.features(), &y, &[0], 0.0).is_err());
    }
}
