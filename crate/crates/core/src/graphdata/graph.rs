use std::sync::Arc;

use crate::ndarr::{CsrMatrix, DenseArray};

use super::GraphError;

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// One dataset instance: undirected simple graph, node features, class
/// labels and train/val/test node splits.
///
/// The adjacency is stored as a CSR matrix of ones whose rows are sorted,
/// deduplicated neighbor lists. Self loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adj: Arc<CsrMatrix>,
    features: DenseArray,
    labels: Vec<usize>,
    num_classes: usize,
    splits: Splits,
}

impl Graph {
    /// Builds a graph from an edge list in any orientation. Duplicate edges
    /// collapse and self loops are dropped; the number dropped is returned.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: DenseArray,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<(Self, usize), GraphError> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        let mut self_loops = 0;
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::Invalid(format!(
                    "edge ({u}, {v}) references a node outside [0, {num_nodes})"
                )));
            }
            if u == v {
                self_loops += 1;
                continue;
            }
            lists[u].push(v);
            lists[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        let values = vec![1.0; indices.len()];
        let adj = CsrMatrix::new(num_nodes, num_nodes, offsets, indices, values)?;
        let g = Self {
            adj: Arc::new(adj),
            features,
            labels,
            num_classes,
            splits,
        };
        g.validate()?;
        Ok((g, self_loops))
    }

    fn validate(&self) -> Result<(), GraphError> {
        let n = self.num_nodes();
        let (fr, _) = self.features.dims2()?;
        if fr != n {
            return Err(GraphError::RowCount {
                file: "features".into(),
                expected: n,
                found: fr,
            });
        }
        if !self.features.is_finite() {
            return Err(GraphError::Invalid("features contain non-finite values".into()));
        }
        if self.labels.len() != n {
            return Err(GraphError::RowCount {
                file: "labels".into(),
                expected: n,
                found: self.labels.len(),
            });
        }
        for (node, &l) in self.labels.iter().enumerate() {
            if l >= self.num_classes {
                return Err(GraphError::LabelOutOfRange {
                    node,
                    label: l,
                    num_classes: self.num_classes,
                });
            }
        }
        let mut seen = vec![false; n];
        for (name, list) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for &i in list {
                if i >= n {
                    return Err(GraphError::Invalid(format!(
                        "{name} split index {i} out of range for {n} nodes"
                    )));
                }
                if seen[i] {
                    return Err(GraphError::Invalid(format!(
                        "node {i} appears twice across splits ({name})"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.rows()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adj.nnz() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj.indices()[self.adj.row_range(v)]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj.row_range(v).len()
    }

    /// Adjacency as a CSR matrix of ones.
    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adj
    }

    pub fn features(&self) -> &DenseArray {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    /// Undirected edges as `(u, v)` with `u < v`, in sorted order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Same topology, labels and splits with a new feature matrix.
    pub fn with_features(&self, features: DenseArray) -> Result<Self, GraphError> {
        let g = Self {
            features,
            ..self.clone()
        };
        g.validate()?;
        Ok(g)
    }

    /// One-hot label matrix with rows outside `visible` left at zero.
    pub fn one_hot_visible(&self, visible: &[usize]) -> DenseArray {
        let mut y = DenseArray::zeros(&[self.num_nodes(), self.num_classes]);
        for &v in visible {
            y.set2(v, self.labels[v], 1.0);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> DenseArray {
        DenseArray::zeros(&[n, 1])
    }

    #[test]
    fn triangle_has_degree_two() {
        let (g, _) = Graph::from_edges(
            3,
            &[(0, 1), (1, 2), (2, 0)],
            feats(3),
            vec![0, 0, 0],
            1,
            Splits::default(),
        )
        .unwrap();
        assert!((0..3).all(|v| g.degree(v) == 2));
        assert_eq!(g.num_edges(), 3);
    }

    #[test]
    fn duplicates_and_self_loops_collapse() {
        let (g, loops) = Graph::from_edges(
            3,
            &[(0, 1), (1, 0), (0, 1), (2, 2)],
            feats(3),
            vec![0; 3],
            1,
            Splits::default(),
        )
        .unwrap();
        assert_eq!(loops, 1);
        assert_eq!(g.edge_list(), vec![(0, 1)]);
        assert_eq!(g.neighbors(2), &[] as &[usize]);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let e = Graph::from_edges(2, &[], feats(2), vec![0, 2], 2, Splits::default());
        assert!(matches!(e, Err(GraphError::LabelOutOfRange { .. })));
        let s = Splits {
            train: vec![0],
            val: vec![0],
            test: vec![],
        };
        assert!(Graph::from_edges(2, &[], feats(2), vec![0, 1], 2, s).is_err());
        assert!(Graph::from_edges(2, &[(0, 5)], feats(2), vec![0, 1], 2, Splits::default()).is_err());
        assert!(matches!(
            Graph::from_edges(3, &[], feats(2), vec![0, 1, 0], 2, Splits::default()),
            Err(GraphError::RowCount { .. })
        ));
    }
}
