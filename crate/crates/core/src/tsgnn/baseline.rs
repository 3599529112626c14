use std::sync::Arc;

use rand::Rng;

use crate::graphdata::{rw_normalize, Graph};
use crate::ndarr::{DenseArray, Tape, Var};

use super::{ModelError, NodeModel};

/// Plain mean-aggregation GNN over `[X | Y_visible]` with a fixed column
/// order. Its weights are tied to one `(F, C)`, so it has no feature or
/// label symmetry; it serves as the reference point for symmetry ablations.
///
/// Layer: `h' = h·W_self + (Âh)·W_nbr + b`, ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanGnn {
    pub widths: Vec<usize>,
    /// Per layer: `W_self`, `W_nbr` (`in × out`) and `b` (`out`).
    pub params: Vec<[DenseArray; 3]>,
}

impl MeanGnn {
    /// `layers` layers from `F + C` inputs through `hidden` channels to `C`
    /// outputs, uniform init in `[−1/sqrt(in), 1/sqrt(in)]`.
    pub fn init(
        f: usize,
        c: usize,
        layers: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if layers == 0 || c == 0 {
            return Err(ModelError::Arch("baseline needs a layer and a class".into()));
        }
        let mut widths = vec![f + c];
        widths.extend(std::iter::repeat_n(hidden, layers - 1));
        widths.push(c);
        let params = widths
            .windows(2)
            .map(|w| {
                let s = 1.0 / (w[0] as f64).sqrt();
                let mut draw = |shape: &[usize]| {
                    DenseArray::from_fn(shape, |_| rng.random_range(-s..=s))
                };
                [draw(&[w[0], w[1]]), draw(&[w[0], w[1]]), DenseArray::zeros(&[w[1]])]
            })
            .collect();
        Ok(Self { widths, params })
    }
}

impl NodeModel for MeanGnn {
    fn parameters(&self) -> Vec<&DenseArray> {
        self.params.iter().flat_map(|p| p.iter()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut DenseArray> {
        self.params.iter_mut().flat_map(|p| p.iter_mut()).collect()
    }

    fn logits_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        graph: &Graph,
        y_visible: &DenseArray,
        _visible: &[usize],
    ) -> Result<Var, ModelError> {
        let x = graph.features();
        let (n, f) = x.dims2()?;
        let c = y_visible.shape()[1];
        if f + c != self.widths[0] || params.len() != 3 * self.params.len() {
            return Err(ModelError::Shape(format!(
                "baseline built for {} input columns, got F + C = {}",
                self.widths[0],
                f + c
            )));
        }
        let input = DenseArray::from_fn(&[n, f + c], |idx| {
            let (i, j) = (idx / (f + c), idx % (f + c));
            if j < f {
                x.at2(i, j)
            } else {
                y_visible.at2(i, j - f)
            }
        });
        let rw = Arc::new(rw_normalize(graph));
        let mut h = tape.constant(input)?;
        let last = self.params.len() - 1;
        for (l, p) in params.chunks(3).enumerate() {
            let hs = tape.matmul(h, p[0])?;
            let nb = tape.spmm(&rw, h)?;
            let hn = tape.matmul(nb, p[1])?;
            let b = tape.broadcast_axis(p[2], 0, n)?;
            let sum = tape.add(hs, hn)?;
            h = tape.add(sum, b)?;
            if l < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
