#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use tsgnn_core::eqlayers::{ts_linear, TsLinearParams};
use tsgnn_core::ndarr::DenseArray;

pub fn gaussian(rng: &mut impl Rng, shape: &[usize]) -> DenseArray {
    DenseArray::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Dense matrix of `ts_linear` on the space `[N, F+C, k]`, built column by
/// column from unit inputs. Entry `a·in_dim + b` holds `L[a, b]`.
pub fn ts_linear_matrix(p: &TsLinearParams, n: usize, f: usize, c: usize) -> Vec<f64> {
    let (k1, k2) = p.dims();
    let w = f + c;
    let in_dim = n * w * k1;
    let out_dim = n * w * k2;
    let mut l = vec![0.0; out_dim * in_dim];
    for b in 0..in_dim {
        let (node, col, ch) = (b / (w * k1), (b / k1) % w, b % k1);
        let mut x = DenseArray::zeros(&[n, f, k1]);
        let mut y = DenseArray::zeros(&[n, c, k1]);
        if col < f {
            x.data_mut()[(node * f + col) * k1 + ch] = 1.0;
        } else {
            y.data_mut()[(node * c + col - f) * k1 + ch] = 1.0;
        }
        let (t1, t2) = ts_linear(&x, &y, p).unwrap();
        for i in 0..n {
            for j in 0..w {
                for k in 0..k2 {
                    let v = if j < f { t1.at3(i, j, k) } else { t2.at3(i, j - f, k) };
                    let a = (i * w + j) * k2 + k;
                    l[a * in_dim + b] = v;
                }
            }
        }
    }
    l
}

/// Permutes rows then columns of a 2-D array.
pub fn permute_rows_cols(
    a: &DenseArray,
    rows: &tsgnn_core::symmetry::Perm,
    cols: &tsgnn_core::symmetry::Perm,
) -> DenseArray {
    let r = tsgnn_core::symmetry::permute_axis(a, 0, rows).unwrap();
    tsgnn_core::symmetry::permute_axis(&r, 1, cols).unwrap()
}
