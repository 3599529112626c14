use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use super::{Perm, SymmetryError};

/// Largest number of unknowns (entries of the linear map) the oracle accepts.
pub const MAX_UNKNOWNS: usize = 4000;

const RANK_TOL: f64 = 1e-9;

/// Symmetry group whose equivariant linear maps are enumerated.
///
/// The acted-on spaces, flattened row-major with channels innermost:
/// `DeepSets`: `[N, k]`; `Dss`: `[N, F, k]`; `Triple`: `[N, F+C, k]` with
/// `σ_F` acting on the first F columns and `σ_C` on the last C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SymmetryGroup {
    DeepSets { n: usize },
    Dss { n: usize, f: usize },
    Triple { n: usize, f: usize, c: usize },
}

impl fmt::Display for SymmetryGroup {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DeepSets { n } => write!(fm, "deepsets:{n}"),
            Self::Dss { n, f } => write!(fm, "dss:{n},{f}"),
            Self::Triple { n, f, c } => write!(fm, "triple:{n},{f},{c}"),
        }
    }
}

impl FromStr for SymmetryGroup {
    type Err = SymmetryError;

    /// Parses `deepsets:N`, `dss:N,F` or `triple:N,F,C`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || {
            SymmetryError::InvalidGroup(format!(
                "{s:?}: expected deepsets:N, dss:N,F or triple:N,F,C"
            ))
        };
        let (kind, sizes) = s.split_once(':').ok_or_else(bad)?;
        let sizes: Vec<usize> = sizes
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        if sizes.contains(&0) {
            return Err(bad());
        }
        match (kind.trim(), sizes.as_slice()) {
            ("deepsets", &[n]) => Ok(Self::DeepSets { n }),
            ("dss", &[n, f]) => Ok(Self::Dss { n, f }),
            ("triple", &[n, f, c]) => Ok(Self::Triple { n, f, c }),
            _ => Err(bad()),
        }
    }
}

impl SymmetryGroup {
    /// Size of one channel of the acted-on space.
    pub fn space_len(&self) -> usize {
        match *self {
            Self::DeepSets { n } => n,
            Self::Dss { n, f } => n * f,
            Self::Triple { n, f, c } => n * (f + c),
        }
    }

    /// Adjacent-transposition generators of each factor, as permutations of
    /// the flattened single-channel space.
    fn generators(&self) -> Vec<Perm> {
        let (n, width, blocks): (usize, usize, Vec<(usize, usize)>) = match *self {
            Self::DeepSets { n } => (n, 1, vec![]),
            Self::Dss { n, f } => (n, f, vec![(0, f)]),
            Self::Triple { n, f, c } => (n, f + c, vec![(0, f), (f, c)]),
        };
        let mut gens = Vec::new();
        for t in 0..n.saturating_sub(1) {
            let rows = Perm::adjacent_transposition(n, t);
            gens.push(Perm::new(
                (0..n * width)
                    .map(|s| rows.image(s / width) * width + s % width)
                    .collect(),
            )
            .expect("product of bijections"));
        }
        for (start, len) in blocks {
            for t in 0..len.saturating_sub(1) {
                let cols = Perm::adjacent_transposition(width, start + t);
                gens.push(
                    Perm::new(
                        (0..n * width)
                            .map(|s| (s / width) * width + cols.image(s % width))
                            .collect(),
                    )
                    .expect("product of bijections"),
                );
            }
        }
        gens
    }
}

/// Orthonormal basis of the equivariant maps `L: R^{space·k1} → R^{space·k2}`.
///
/// Each basis vector is `L` flattened row-major: entry `a · in_dim + b`
/// holds `L[a, b]`, where `a` indexes the output space and `b` the input.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivariantBasis {
    pub group: SymmetryGroup,
    pub k1: usize,
    pub k2: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub basis: Vec<Vec<f64>>,
}

impl EquivariantBasis {
    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    /// Euclidean distance from `map` (flattened as above) to the span.
    pub fn residual(&self, map: &[f64]) -> f64 {
        let mut r = map.to_vec();
        for b in &self.basis {
            let p = dot(&r, b);
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        dot(&r, &r).sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Incrementally maintained reduced row echelon form over sparse rows.
#[derive(Default)]
struct Echelon {
    rows: Vec<BTreeMap<usize, f64>>,
    pivot_row: HashMap<usize, usize>,
    pivot_col: Vec<usize>,
}

impl Echelon {
    /// Adds a row; returns whether it increased the rank.
    fn push(&mut self, mut r: BTreeMap<usize, f64>) -> bool {
        let hits: Vec<(usize, f64)> = r
            .iter()
            .filter(|(c, _)| self.pivot_row.contains_key(c))
            .map(|(&c, &v)| (c, v))
            .collect();
        // fully reduced rows have no entries in other pivot columns, so one
        // pass over the pivots present in `r` suffices
        for (c, v) in hits {
            for (&cc, &pv) in &self.rows[self.pivot_row[&c]] {
                *r.entry(cc).or_insert(0.0) -= v * pv;
            }
        }
        let scale = r.values().fold(0.0f64, |m, v| m.max(v.abs()));
        r.retain(|_, v| v.abs() > RANK_TOL * scale.max(1.0));
        let Some((&pc, &pv)) = r
            .iter()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(a.0)))
        else {
            return false;
        };
        r.values_mut().for_each(|v| *v /= pv);
        r.insert(pc, 1.0);
        for row in &mut self.rows {
            if let Some(f) = row.remove(&pc) {
                for (&cc, &v) in &r {
                    if cc != pc {
                        let e = row.entry(cc).or_insert(0.0);
                        *e -= f * v;
                        if e.abs() <= RANK_TOL {
                            row.remove(&cc);
                        }
                    }
                }
            }
        }
        self.pivot_row.insert(pc, self.rows.len());
        self.pivot_col.push(pc);
        self.rows.push(r);
        true
    }

    fn rank(&self) -> usize {
        self.rows.len()
    }

    fn null_space(&self, unknowns: usize) -> Vec<Vec<f64>> {
        let free: Vec<usize> = (0..unknowns)
            .filter(|c| !self.pivot_row.contains_key(c))
            .collect();
        let slot: HashMap<usize, usize> = free.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut basis: Vec<Vec<f64>> = free
            .iter()
            .map(|&c| {
                let mut v = vec![0.0; unknowns];
                v[c] = 1.0;
                v
            })
            .collect();
        for (row, &pc) in self.rows.iter().zip(&self.pivot_col) {
            for (&c, &v) in row {
                if let Some(&s) = slot.get(&c) {
                    basis[s][pc] = -v;
                }
            }
        }
        basis
    }
}

/// Numerical rank of a set of vectors with relative tolerance 1e-9.
pub fn numeric_rank(vectors: &[Vec<f64>]) -> usize {
    let mut e = Echelon::default();
    for v in vectors {
        e.push(
            v.iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, &x)| (i, x))
                .collect(),
        );
    }
    e.rank()
}

/// Solves `L·P(g) = P(g)·L` for every generator `g` of `group` and returns an
/// orthonormal basis of the solutions.
pub fn equivariant_basis(
    group: SymmetryGroup,
    k1: usize,
    k2: usize,
) -> Result<EquivariantBasis, SymmetryError> {
    let space = group.space_len();
    let (in_dim, out_dim) = (space * k1, space * k2);
    let unknowns = in_dim * out_dim;
    if unknowns > MAX_UNKNOWNS || k1 == 0 || k2 == 0 {
        return Err(SymmetryError::GuardExceeded {
            unknowns,
            limit: MAX_UNKNOWNS,
        });
    }
    if let SymmetryGroup::Triple { f, c, .. } = group {
        if f == c {
            log::info!("F = C: the triple-symmetry characterization assumes F != C; dimension is informational");
        }
    }
    let mut ech = Echelon::default();
    for g in group.generators() {
        let ginv = g.inverse();
        // L[a, π(b)] − L[π⁻¹(a), b] = 0 with channels untouched
        for a in 0..out_dim {
            let (sa, ka) = (a / k2, a % k2);
            let a_pre = ginv.image(sa) * k2 + ka;
            for b in 0..in_dim {
                let (sb, kb) = (b / k1, b % k1);
                let b_img = g.image(sb) * k1 + kb;
                let u = a * in_dim + b_img;
                let w = a_pre * in_dim + b;
                if u != w {
                    ech.push(BTreeMap::from([(u, 1.0), (w, -1.0)]));
                }
            }
        }
    }
    let mut basis = ech.null_space(unknowns);
    // modified Gram-Schmidt
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for v in basis.iter_mut() {
        for q in &ortho {
            let p = dot(v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(v, v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        ortho.push(std::mem::take(v));
    }
    Ok(EquivariantBasis {
        group,
        k1,
        k2,
        in_dim,
        out_dim,
        basis: ortho,
    })
}
