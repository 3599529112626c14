use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ndarr::DenseArray;
use crate::rng::SeedStream;

use super::{Graph, GraphError, Splits};

/// Stochastic block model with class-mean features.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmParams {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    pub seed: u64,
}

/// Samples a graph whose node ids are grouped by class: class `c` owns
/// `[c·n, (c+1)·n)`. Node features are `e_c + noise`, where `e_c` is the
/// c-th standard basis vector of `R^F`.
///
/// Splits are drawn per class: the first half of a shuffled class goes to
/// train, the next quarter to val and the rest to test.
pub fn gen_sbm(p: &SbmParams) -> Result<Graph, GraphError> {
    if p.feature_dim < p.classes {
        return Err(GraphError::Invalid(format!(
            "feature_dim {} must be at least the class count {}",
            p.feature_dim, p.classes
        )));
    }
    if !(0.0 <= p.p_out && p.p_out <= p.p_in && p.p_in <= 1.0) {
        return Err(GraphError::Invalid(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
            p.p_in, p.p_out
        )));
    }
    if !(p.noise >= 0.0) || !p.noise.is_finite() {
        return Err(GraphError::Invalid(format!("noise must be >= 0, got {}", p.noise)));
    }
    let stream = SeedStream::new(p.seed);
    let n = p.classes * p.nodes_per_class;
    let labels: Vec<usize> = (0..n).map(|v| v / p.nodes_per_class.max(1)).collect();

    let mut rng = stream.rng("sbm.edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if labels[u] == labels[v] { p.p_in } else { p.p_out };
            if rng.random_bool(prob) {
                edges.push((u, v));
            }
        }
    }

    let mut rng = stream.rng("sbm.features");
    let normal = Normal::new(0.0, p.noise).expect("noise validated above");
    let f = p.feature_dim;
    let mut feats = vec![0.0; n * f];
    for v in 0..n {
        for j in 0..f {
            let mean = if j == labels[v] { 1.0 } else { 0.0 };
            feats[v * f + j] = mean + normal.sample(&mut rng);
        }
    }
    let features = DenseArray::new(vec![n, f], feats)?;

    let mut rng = stream.rng("sbm.splits");
    let mut splits = Splits::default();
    for c in 0..p.classes {
        let mut ids: Vec<usize> = (c * p.nodes_per_class..(c + 1) * p.nodes_per_class).collect();
        ids.shuffle(&mut rng);
        let n_train = p.nodes_per_class / 2;
        let n_val = p.nodes_per_class / 4;
        splits.train.extend_from_slice(&ids[..n_train]);
        splits.val.extend_from_slice(&ids[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&ids[n_train + n_val..]);
    }
    for list in [&mut splits.train, &mut splits.val, &mut splits.test] {
        list.sort_unstable();
    }

    let (g, _) = Graph::from_edges(n, &edges, features, labels, p.classes, splits)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SbmParams {
        SbmParams {
            classes: 3,
            nodes_per_class: 20,
            p_in: 0.3,
            p_out: 0.05,
            feature_dim: 5,
            noise: 0.2,
            seed: 1,
        }
    }

    #[test]
    fn perfect_communities_have_no_cross_edges() {
        let g = gen_sbm(&SbmParams {
            p_in: 1.0,
            p_out: 0.0,
            ..params()
        })
        .unwrap();
        for (u, v) in g.edge_list() {
            assert_eq!(g.labels()[u], g.labels()[v]);
        }
        assert_eq!(g.num_edges(), 3 * 20 * 19 / 2);
    }

    #[test]
    fn zero_noise_gives_identical_class_rows() {
        let g = gen_sbm(&SbmParams {
            noise: 0.0,
            ..params()
        })
        .unwrap();
        for v in 0..g.num_nodes() {
            let c = g.labels()[v];
            for (j, &x) in g.features().row(v).iter().enumerate() {
                assert_eq!(x, if j == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn cross_density_concentrates() {
        let p = SbmParams {
            classes: 2,
            nodes_per_class: 200,
            p_in: 0.1,
            p_out: 0.02,
            feature_dim: 2,
            noise: 0.1,
            seed: 4,
        };
        let g = gen_sbm(&p).unwrap();
        let cross = g
            .edge_list()
            .iter()
            .filter(|(u, v)| g.labels()[*u] != g.labels()[*v])
            .count() as f64;
        let pairs = 200.0 * 200.0;
        let sd = (pairs * p.p_out * (1.0 - p.p_out)).sqrt();
        assert!((cross - pairs * p.p_out).abs() <= 3.0 * sd, "{cross}");
    }

    #[test]
    fn deterministic_and_split_shape() {
        let a = gen_sbm(&params()).unwrap();
        let b = gen_sbm(&params()).unwrap();
        assert_eq!(a, b);
        let c = gen_sbm(&SbmParams { seed: 2, ..params() }).unwrap();
        assert_ne!(a, c);
        let s = a.splits();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (30, 15, 15));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(gen_sbm(&SbmParams { feature_dim: 2, ..params() }).is_err());
        assert!(gen_sbm(&SbmParams { p_out: 0.5, ..params() }).is_err());
        assert!(gen_sbm(&SbmParams { noise: -1.0, ..params() }).is_err());
    }
}
