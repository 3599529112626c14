use rand::seq::SliceRandom;

use crate::graphdata::{Graph, Splits};
use crate::ndarr::DenseArray;
use crate::rng::SeedStream;

use super::SymmetryError;

/// A permutation of `0..n` acting by `result[σ(i)] = x[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Perm(Vec<usize>);

impl TryFrom<Vec<usize>> for Perm {
    type Error = SymmetryError;

    fn try_from(map: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(map)
    }
}

impl From<Perm> for Vec<usize> {
    fn from(p: Perm) -> Self {
        p.0
    }
}

impl Perm {
    /// `map[i]` is the image of `i`.
    pub fn new(map: Vec<usize>) -> Result<Self, SymmetryError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &j in &map {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(SymmetryError::InvalidPerm(format!("{map:?} is not a bijection")));
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Swaps `i` and `i + 1`.
    pub fn adjacent_transposition(n: usize, i: usize) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.swap(i, i + 1);
        Self(map)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.0
    }

    pub fn image(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Self(inv)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Perm) -> Self {
        assert_eq!(self.len(), first.len(), "composing permutations of different sizes");
        Self(first.0.iter().map(|&j| self.0[j]).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// Uniform Fisher–Yates sample.
    pub fn random(n: usize, rng: &mut impl rand::Rng) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self(map)
    }
}

/// Moves index `i` of `axis` to `σ(i)`, for an array of any rank.
pub fn permute_axis(x: &DenseArray, axis: usize, p: &Perm) -> Result<DenseArray, SymmetryError> {
    let shape = x.shape();
    if axis >= shape.len() || shape[axis] != p.len() {
        return Err(SymmetryError::Shape(format!(
            "cannot permute axis {axis} of shape {shape:?} with a permutation of {}",
            p.len()
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let len = shape[axis];
    let mut out = vec![0.0; x.len()];
    let src = x.data();
    for o in 0..outer {
        for i in 0..len {
            let from = (o * len + i) * inner;
            let to = (o * len + p.image(i)) * inner;
            out[to..to + inner].copy_from_slice(&src[from..from + inner]);
        }
    }
    Ok(DenseArray::new(shape.to_vec(), out).expect("shape unchanged"))
}

/// An element `(σ_N, σ_F, σ_C)` of `S_N × S_F × S_C`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PermTriple {
    pub sigma_n: Perm,
    pub sigma_f: Perm,
    pub sigma_c: Perm,
}

impl PermTriple {
    pub fn identity(n: usize, f: usize, c: usize) -> Self {
        Self {
            sigma_n: Perm::identity(n),
            sigma_f: Perm::identity(f),
            sigma_c: Perm::identity(c),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            sigma_n: self.sigma_n.inverse(),
            sigma_f: self.sigma_f.inverse(),
            sigma_c: self.sigma_c.inverse(),
        }
    }

    /// `self ∘ first`.
    pub fn compose(&self, first: &PermTriple) -> Self {
        Self {
            sigma_n: self.sigma_n.compose(&first.sigma_n),
            sigma_f: self.sigma_f.compose(&first.sigma_f),
            sigma_c: self.sigma_c.compose(&first.sigma_c),
        }
    }

    /// `(N, F, C)`.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.sigma_n.len(), self.sigma_f.len(), self.sigma_c.len())
    }

    /// The column permutation of `[X | Y]`: `σ_F` on the first F columns and
    /// `σ_C` shifted by F on the rest.
    pub fn column_perm(&self) -> Perm {
        let f = self.sigma_f.len();
        let map = self
            .sigma_f
            .map()
            .iter()
            .copied()
            .chain(self.sigma_c.map().iter().map(|&j| f + j))
            .collect();
        Perm(map)
    }
}

/// Uniform sample from `S_N × S_F × S_C`, deterministic in `seed`.
pub fn sample_perm_triple(n: usize, f: usize, c: usize, seed: u64) -> PermTriple {
    let mut rng = SeedStream::new(seed).rng("perm");
    PermTriple {
        sigma_n: Perm::random(n, &mut rng),
        sigma_f: Perm::random(f, &mut rng),
        sigma_c: Perm::random(c, &mut rng),
    }
}

/// Acts on `[X | Y]` (N×(F+C)):
/// `out[σ_N(i), σ_F(j)] = X[i, j]` and `out[σ_N(i), F + σ_C(j)] = Y[i, j]`.
pub fn apply_triple(p: &PermTriple, xy: &DenseArray) -> Result<DenseArray, SymmetryError> {
    let (n, f, c) = p.sizes();
    if xy.shape() != [n, f + c] {
        return Err(SymmetryError::Shape(format!(
            "triple of sizes ({n}, {f}, {c}) cannot act on shape {:?}",
            xy.shape()
        )));
    }
    let rows = permute_axis(xy, 0, &p.sigma_n)?;
    permute_axis(&rows, 1, &p.column_perm())
}

/// Relabels nodes by `σ_N` (adjacency conjugated, features and splits
/// moved), permutes feature columns by `σ_F` and maps class ids through `σ_C`.
pub fn apply_to_graph(p: &PermTriple, g: &Graph) -> Result<Graph, SymmetryError> {
    let (n, f, c) = p.sizes();
    if (n, f, c) != (g.num_nodes(), g.feature_dim(), g.num_classes()) {
        return Err(SymmetryError::Shape(format!(
            "triple of sizes ({n}, {f}, {c}) cannot act on a graph with \
             N={}, F={}, C={}",
            g.num_nodes(),
            g.feature_dim(),
            g.num_classes()
        )));
    }
    let sn = &p.sigma_n;
    let edges: Vec<(usize, usize)> = g
        .edge_list()
        .into_iter()
        .map(|(u, v)| (sn.image(u), sn.image(v)))
        .collect();
    let features = permute_axis(&permute_axis(g.features(), 0, sn)?, 1, &p.sigma_f)?;
    let mut labels = vec![0; n];
    for (v, &l) in g.labels().iter().enumerate() {
        labels[sn.image(v)] = p.sigma_c.image(l);
    }
    let remap = |list: &[usize]| list.iter().map(|&v| sn.image(v)).collect();
    let s = g.splits();
    let splits = Splits {
        train: remap(&s.train),
        val: remap(&s.val),
        test: remap(&s.test),
    };
    let (out, _) = Graph::from_edges(n, &edges, features, labels, c, splits)
        .map_err(|e| SymmetryError::Shape(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{gen_sbm, SbmParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_evaluated_row_swap() {
        let x = DenseArray::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let p = PermTriple {
            sigma_n: Perm::new(vec![1, 0]).unwrap(),
            ..PermTriple::identity(2, 1, 1)
        };
        let y = apply_triple(&p, &x).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn identity_inverse_and_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DenseArray::from_fn(&[5, 7], |i| i as f64);
        let id = PermTriple::identity(5, 4, 3);
        assert_eq!(apply_triple(&id, &x).unwrap(), x);
        for _ in 0..20 {
            let p1 = PermTriple {
                sigma_n: Perm::random(5, &mut rng),
                sigma_f: Perm::random(4, &mut rng),
                sigma_c: Perm::random(3, &mut rng),
            };
            let p2 = PermTriple {
                sigma_n: Perm::random(5, &mut rng),
                sigma_f: Perm::random(4, &mut rng),
                sigma_c: Perm::random(3, &mut rng),
            };
            let back = apply_triple(&p1.inverse(), &apply_triple(&p1, &x).unwrap()).unwrap();
            assert_eq!(back, x);
            let two_step = apply_triple(&p2, &apply_triple(&p1, &x).unwrap()).unwrap();
            assert_eq!(two_step, apply_triple(&p2.compose(&p1), &x).unwrap());
        }
    }

    #[test]
    fn rejects_non_bijections_and_bad_shapes() {
        assert!(Perm::new(vec![0, 0]).is_err());
        assert!(Perm::new(vec![0, 2]).is_err());
        let p = PermTriple::identity(2, 1, 1);
        assert!(apply_triple(&p, &DenseArray::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_trivial_at_size_one() {
        assert_eq!(sample_perm_triple(1, 1, 1, 9), PermTriple::identity(1, 1, 1));
        assert_eq!(sample_perm_triple(6, 5, 4, 9), sample_perm_triple(6, 5, 4, 9));
        assert_ne!(sample_perm_triple(6, 5, 4, 9), sample_perm_triple(6, 5, 4, 10));
    }

    #[test]
    fn graph_action_relabels_consistently() {
        let g = gen_sbm(&SbmParams {
            classes: 3,
            nodes_per_class: 6,
            p_in: 0.5,
            p_out: 0.1,
            feature_dim: 4,
            noise: 0.2,
            seed: 2,
        })
        .unwrap();
        let id = PermTriple::identity(18, 4, 3);
        assert_eq!(apply_to_graph(&id, &g).unwrap(), g);

        let p = sample_perm_triple(18, 4, 3, 5);
        let h = apply_to_graph(&p, &g).unwrap();
        let sn = &p.sigma_n;
        let mut deg_g: Vec<usize> = (0..18).map(|v| g.degree(v)).collect();
        let mut deg_h: Vec<usize> = (0..18).map(|v| h.degree(v)).collect();
        deg_g.sort_unstable();
        deg_h.sort_unstable();
        assert_eq!(deg_g, deg_h);
        for u in 0..18 {
            for v in 0..18 {
                assert_eq!(
                    g.neighbors(u).contains(&v),
                    h.neighbors(sn.image(u)).contains(&sn.image(v))
                );
            }
            assert_eq!(h.labels()[sn.image(u)], p.sigma_c.image(g.labels()[u]));
            for j in 0..4 {
                assert_eq!(
                    h.features().at2(sn.image(u), p.sigma_f.image(j)),
                    g.features().at2(u, j)
                );
            }
        }
        let back = apply_to_graph(&p.inverse(), &h).unwrap();
        assert_eq!(back, g);
    }
}
