use crate::ndarr::DenseArray;

use super::SymmetryError;

fn has_close_pair(mut sums: Vec<f64>, tol: f64) -> bool {
    sums.sort_by(f64::total_cmp);
    sums.windows(2).any(|w| (w[1] - w[0]).abs() <= tol)
}

/// Whether `[X | Y]` (N×(F+C)) lies in the exclusion set: two feature
/// column sums agree within `tol`, or two label column sums do, or two full
/// row sums do.
pub fn in_exclusion_set(xy: &DenseArray, f: usize, tol: f64) -> Result<bool, SymmetryError> {
    let (n, w) = xy.dims2().map_err(|e| SymmetryError::Shape(e.to_string()))?;
    if f > w {
        return Err(SymmetryError::Shape(format!(
            "feature width {f} exceeds {w} columns"
        )));
    }
    let mut col = vec![0.0; w];
    let mut row = vec![0.0; n];
    for i in 0..n {
        for (j, &v) in xy.row(i).iter().enumerate() {
            col[j] += v;
            row[i] += v;
        }
    }
    let label_cols = col.split_off(f);
    Ok(has_close_pair(col, tol) || has_close_pair(label_cols, tol) || has_close_pair(row, tol))
}

/// All multi-indices `α ∈ ℕ^d` with `|α| ≤ max_degree`, in graded
/// lexicographic order: by total degree, then lexicographically descending
/// within a degree, so `(k, 0, …, 0)` leads degree `k`.
pub fn multi_indices(d: usize, max_degree: usize) -> Vec<Vec<usize>> {
    fn fill(rest: usize, slot: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slot + 1 == cur.len() {
            cur[slot] = rest;
            out.push(cur.clone());
            return;
        }
        for a in (0..=rest).rev() {
            cur[slot] = a;
            fill(rest - a, slot + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    if d == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut cur = vec![0; d];
    for deg in 0..=max_degree {
        fill(deg, 0, &mut cur, &mut out);
    }
    out
}

/// Power-sum multi-symmetric polynomials of the rows of `x` (N×D):
/// `s_α = Σ_n Π_d x[n, d]^α_d` for every `α` of [`multi_indices`]`(D, M)`.
pub fn pmp(x: &DenseArray, max_degree: usize) -> Result<Vec<f64>, SymmetryError> {
    let (n, d) = x.dims2().map_err(|e| SymmetryError::Shape(e.to_string()))?;
    let alphas = multi_indices(d, max_degree);
    Ok(alphas
        .iter()
        .map(|alpha| {
            (0..n)
                .map(|i| {
                    x.row(i)
                        .iter()
                        .zip(alpha)
                        .map(|(&v, &a)| v.powi(a as i32))
                        .product::<f64>()
                })
                .sum()
        })
        .collect())
}

/// Doubly power-sum polynomials of `[X | Y]`: the N rows are the variables
/// and the sums run over feature columns for the first half and over label
/// columns for the second. Equivalent to `pmp(Xᵀ) ‖ pmp(Yᵀ)`.
pub fn dmp(xy: &DenseArray, f: usize, c: usize, max_degree: usize) -> Result<Vec<f64>, SymmetryError> {
    let (n, w) = xy.dims2().map_err(|e| SymmetryError::Shape(e.to_string()))?;
    if w != f + c {
        return Err(SymmetryError::Shape(format!(
            "expected {} columns, got {w}",
            f + c
        )));
    }
    let block_t = |lo: usize, hi: usize| {
        DenseArray::from_fn(&[hi - lo, n], |idx| xy.at2(idx % n, lo + idx / n))
    };
    let mut out = pmp(&block_t(0, f), max_degree)?;
    out.extend(pmp(&block_t(f, f + c), max_degree)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn graded_lex_order_and_count() {
        assert_eq!(
            multi_indices(2, 2),
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        for d in 1..5 {
            for m in 0..5 {
                assert_eq!(multi_indices(d, m).len(), binom(m + d, d));
            }
        }
    }

    #[test]
    fn pmp_hand_values() {
        let x = DenseArray::from_rows(&[[1.0], [2.0]]).unwrap();
        assert_eq!(pmp(&x, 2).unwrap(), vec![2.0, 3.0, 5.0]);
        assert_eq!(pmp(&x, 0).unwrap(), vec![2.0]);
    }

    #[test]
    fn exclusion_examples() {
        let ones = DenseArray::filled(&[3, 4], 1.0);
        assert!(in_exclusion_set(&ones, 2, 0.0).unwrap());
        // feature col sums {1, 2}, label col sums {3, 4}, row sums {1, 2, 7}
        let x = DenseArray::from_rows(&[
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 0.0],
            [0.0, 2.0, 1.0, 4.0],
        ])
        .unwrap();
        assert!(!in_exclusion_set(&x, 2, 1e-12).unwrap());
    }

    #[test]
    fn dmp_single_columns_reduce_to_pmp() {
        let xy = DenseArray::from_rows(&[[1.0, 4.0], [2.0, -1.0], [0.5, 3.0]]).unwrap();
        let d = dmp(&xy, 1, 1, 2).unwrap();
        assert_eq!(d.len(), 2 * binom(2 + 3, 3));
        let alphas = multi_indices(3, 2);
        for (t, a) in alphas.iter().enumerate() {
            let expect_f: f64 = (0..3).map(|n| xy.at2(n, 0).powi(a[n] as i32)).product();
            let expect_c: f64 = (0..3).map(|n| xy.at2(n, 1).powi(a[n] as i32)).product();
            assert_eq!(d[t], expect_f);
            assert_eq!(d[alphas.len() + t], expect_c);
        }
    }
}
