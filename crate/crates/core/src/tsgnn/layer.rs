use std::sync::Arc;

use crate::eqlayers::Nonlinearity;
use crate::graphdata::{rw_normalize, Graph};
use crate::ndarr::{CsrMatrix, DenseArray, ReduceKind, Tape, Var};

use super::{
    solve_mixers, Aggregator, LayerParams, Mixers, ModelError, NodeModel, Pooling, TsGnnModel,
    WEIGHTS_PER_LAYER,
};

/// Slope of the leaky ReLU applied to attention scores.
const ATTENTION_SLOPE: f64 = 0.2;

/// Per-node feature and label representations, `[N, F, K]` and `[N, C, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub feat: DenseArray,
    pub lab: DenseArray,
}

impl NodeState {
    /// Initial state from `X: N×F` and `Y: N×C` with one channel.
    pub fn from_inputs(x: &DenseArray, y: &DenseArray) -> Result<Self, ModelError> {
        let (n, f) = x.dims2()?;
        let (ny, c) = y.dims2()?;
        if n != ny {
            return Err(ModelError::Shape(format!(
                "features have {n} rows, labels {ny}"
            )));
        }
        Ok(Self {
            feat: x.reshape(&[n, f, 1])?,
            lab: y.reshape(&[n, c, 1])?,
        })
    }

    /// `X_v` as a `K×F` block.
    pub fn feat_block(&self, v: usize) -> DenseArray {
        node_block(&self.feat, v)
    }

    /// `Y_v` as a `K×C` block.
    pub fn lab_block(&self, v: usize) -> DenseArray {
        node_block(&self.lab, v)
    }
}

fn node_block(t: &DenseArray, v: usize) -> DenseArray {
    let (_, w, k) = t.dims3().expect("node state is rank 3");
    DenseArray::from_fn(&[k, w], |idx| t.at3(v, idx % w, idx / w))
}

/// ν on a `K×W` block: per-channel sum or mean over the `W` columns, as a
/// `K×1` column. An empty block pools to zeros.
pub fn pool_channels(block: &DenseArray, kind: Pooling) -> DenseArray {
    let (k, w) = block.dims2().expect("pool_channels takes a K×W block");
    let scale = match kind {
        Pooling::Sum => 1.0,
        Pooling::Mean if w == 0 => 0.0,
        Pooling::Mean => 1.0 / w as f64,
    };
    DenseArray::from_fn(&[k, 1], |r| block.row(r).iter().sum::<f64>() * scale)
}

/// ψ for one node: the transformed self term plus the sum, mean or
/// attention-weighted sum of the neighbor terms. `alpha` is required for
/// attention and has one weight per neighbor.
pub fn aggregate(
    kind: Aggregator,
    self_term: &DenseArray,
    neighbors: &[DenseArray],
    alpha: Option<&[f64]>,
) -> Result<DenseArray, ModelError> {
    let mut out = self_term.clone();
    if neighbors.is_empty() {
        return Ok(out);
    }
    let weights: Vec<f64> = match kind {
        Aggregator::Sum => vec![1.0; neighbors.len()],
        Aggregator::Mean => vec![1.0 / neighbors.len() as f64; neighbors.len()],
        Aggregator::Attention => {
            let a = alpha.ok_or_else(|| {
                ModelError::Shape("attention aggregation needs weights".into())
            })?;
            if a.len() != neighbors.len() {
                return Err(ModelError::Shape(format!(
                    "{} attention weights for {} neighbors",
                    a.len(),
                    neighbors.len()
                )));
            }
            a.to_vec()
        }
    };
    for (nb, w) in neighbors.iter().zip(weights) {
        if nb.shape() != self_term.shape() {
            return Err(ModelError::Shape(format!(
                "neighbor term {:?} vs self term {:?}",
                nb.shape(),
                self_term.shape()
            )));
        }
        out.add_assign(&nb.scale(w));
    }
    Ok(out)
}

/// Attention weights of `v` over `neighbors` for one layer.
///
/// Each node gets a descriptor `d_u = ν([W₁X_u | W₇Y_u])` of length
/// `K_out`; the score is `leaky_relu(a_self·d_v + a_nbr·d_u)` and the
/// weights are its softmax over the neighbors. Pooling removes column
/// order, so the weights do not depend on feature or label order.
pub fn attention_scores(
    layer: &LayerParams,
    pooling: Pooling,
    state: &NodeState,
    v: usize,
    neighbors: &[usize],
) -> Result<Vec<f64>, ModelError> {
    let (Some(a_self), Some(a_nbr)) = (&layer.a_self, &layer.a_nbr) else {
        return Err(ModelError::Arch("layer has no attention vectors".into()));
    };
    if neighbors.is_empty() {
        return Ok(Vec::new());
    }
    let descriptor = |u: usize| -> Result<Vec<f64>, ModelError> {
        let fx = layer.weight(1).matmul(&state.feat_block(u))?;
        let fy = layer.weight(7).matmul(&state.lab_block(u))?;
        let w = fx.shape()[1] + fy.shape()[1];
        let mut joined = DenseArray::zeros(&[fx.shape()[0], w]);
        for r in 0..fx.shape()[0] {
            let row: Vec<f64> = fx.row(r).iter().chain(fy.row(r)).copied().collect();
            joined.data_mut()[r * w..(r + 1) * w].copy_from_slice(&row);
        }
        Ok(pool_channels(&joined, pooling).into_data())
    };
    let dot = |a: &DenseArray, b: &[f64]| a.data().iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let dv = descriptor(v)?;
    let base = dot(a_self, &dv);
    let mut scores = Vec::with_capacity(neighbors.len());
    for &u in neighbors {
        let e = base + dot(a_nbr, &descriptor(u)?);
        scores.push(if e > 0.0 { e } else { ATTENTION_SLOPE * e });
    }
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
    Ok(scores.iter().map(|s| (s - mx).exp() / z).collect())
}

/// Graph operators shared by every layer of one forward pass.
struct Context {
    adj: Arc<CsrMatrix>,
    rw: Option<Arc<CsrMatrix>>,
    mixers: Option<Mixers>,
}

impl Context {
    fn new(graph: &Graph, aggregator: Aggregator, mixers: Option<Mixers>) -> Self {
        Self {
            adj: Arc::clone(graph.adjacency()),
            rw: (aggregator == Aggregator::Mean).then(|| Arc::new(rw_normalize(graph))),
            mixers,
        }
    }
}

/// Bound tape variables of one layer.
struct LayerVars<'a> {
    w: &'a [Var],
    a_self: Option<Var>,
    a_nbr: Option<Var>,
}

/// `t: [N, W, K_in]` times `Wᵀ` over the channel axis.
fn channels(tape: &mut Tape, t: Var, wt: Var) -> Result<Var, ModelError> {
    let shape = tape.shape(t).to_vec();
    let (n, w, k) = (shape[0], shape[1], shape[2]);
    let k_out = tape.shape(wt)[1];
    let flat = tape.reshape(t, &[n * w, k])?;
    let prod = tape.matmul(flat, wt)?;
    Ok(tape.reshape(prod, &[n, w, k_out])?)
}

fn add_all(tape: &mut Tape, terms: &[Var]) -> Result<Var, ModelError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

#[allow(clippy::too_many_arguments)]
fn layer_on_tape(
    tape: &mut Tape,
    vars: &LayerVars<'_>,
    aggregator: Aggregator,
    pooling: Pooling,
    ctx: &Context,
    feat: Var,
    lab: Var,
) -> Result<(Var, Var), ModelError> {
    let (f, c) = (tape.shape(feat)[1], tape.shape(lab)[1]);
    let n = tape.shape(feat)[0];
    if tape.shape(lab)[0] != n || tape.shape(lab)[2] != tape.shape(feat)[2] {
        return Err(ModelError::Shape(format!(
            "feature state {:?} and label state {:?} disagree",
            tape.shape(feat),
            tape.shape(lab)
        )));
    }
    let mut wt = Vec::with_capacity(WEIGHTS_PER_LAYER);
    for &w in vars.w {
        wt.push(tape.transpose(w)?);
    }
    let wt = |j: usize| wt[j - 1];
    let red = pooling.reduce_kind();

    let xw1 = channels(tape, feat, wt(1))?;
    let yw7 = channels(tape, lab, wt(7))?;

    let alpha = if aggregator == Aggregator::Attention {
        let (Some(a_self), Some(a_nbr)) = (vars.a_self, vars.a_nbr) else {
            return Err(ModelError::Arch("attention vectors missing".into()));
        };
        let sf = tape.reduce_axis(xw1, 1, ReduceKind::Sum)?;
        let sc = tape.reduce_axis(yw7, 1, ReduceKind::Sum)?;
        let mut d = tape.add(sf, sc)?;
        if pooling == Pooling::Mean {
            d = tape.scale(d, 1.0 / (f + c) as f64)?;
        }
        let k_out = tape.shape(a_self)[0];
        let a_s = tape.reshape(a_self, &[k_out, 1])?;
        let a_n = tape.reshape(a_nbr, &[k_out, 1])?;
        let src = tape.matmul(d, a_s)?;
        let dst = tape.matmul(d, a_n)?;
        let src = tape.reshape(src, &[n])?;
        let dst = tape.reshape(dst, &[n])?;
        let e = tape.edge_scores(&ctx.adj, src, dst)?;
        let e = tape.leaky_relu(e, ATTENTION_SLOPE)?;
        Some(tape.edge_softmax(&ctx.adj, e)?)
    } else {
        None
    };
    let agg = |tape: &mut Tape, t: Var| -> Result<Var, ModelError> {
        Ok(match aggregator {
            Aggregator::Sum => tape.spmm(&ctx.adj, t)?,
            Aggregator::Mean => tape.spmm(ctx.rw.as_ref().expect("mean context"), t)?,
            Aggregator::Attention => tape.edge_spmm(&ctx.adj, alpha.expect("attention"), t)?,
        })
    };

    let agg_x = agg(tape, feat)?;
    let agg_y = agg(tape, lab)?;
    let nu_x = tape.reduce_axis(feat, 1, red)?;
    let nu_ax = tape.reduce_axis(agg_x, 1, red)?;
    let nu_y = tape.reduce_axis(lab, 1, red)?;
    let nu_ay = tape.reduce_axis(agg_y, 1, red)?;
    let lin = |tape: &mut Tape, v: Var, j: usize| tape.matmul(v, wt(j));

    // feature block
    let p3 = lin(tape, nu_x, 3)?;
    let p4 = lin(tape, nu_ax, 4)?;
    let p5 = lin(tape, nu_y, 5)?;
    let p6 = lin(tape, nu_ay, 6)?;
    let pooled_f = add_all(tape, &[p3, p4, p5, p6])?;
    let pooled_f = tape.broadcast_axis(pooled_f, 1, f)?;
    let x2 = channels(tape, agg_x, wt(2))?;
    let mut feat_terms = vec![xw1, x2, pooled_f];

    // label block
    let p9 = lin(tape, nu_y, 9)?;
    let p10 = lin(tape, nu_ay, 10)?;
    let p11 = lin(tape, nu_x, 11)?;
    let p12 = lin(tape, nu_ax, 12)?;
    let pooled_c = add_all(tape, &[p9, p10, p11, p12])?;
    let pooled_c = tape.broadcast_axis(pooled_c, 1, c)?;
    let y8 = channels(tape, agg_y, wt(8))?;
    let mut lab_terms = vec![yw7, y8, pooled_c];

    if let Some(m) = &ctx.mixers {
        if m.t_c.shape() != [c + 1, f] || m.t_f.shape() != [f + 1, c] {
            return Err(ModelError::Shape(format!(
                "mixers {:?}/{:?} do not fit F={f}, C={c}",
                m.t_f.shape(),
                m.t_c.shape()
            )));
        }
        // Θ_F from [Y | 1]·T_C, Θ_C from [X | 1]·T_F
        let my = tape.axis_mix(lab, &m.t_c, true)?;
        let agg_my = agg(tape, my)?;
        feat_terms.push(channels(tape, my, wt(13))?);
        feat_terms.push(channels(tape, agg_my, wt(14))?);
        let mx = tape.axis_mix(feat, &m.t_f, true)?;
        let agg_mx = agg(tape, mx)?;
        lab_terms.push(channels(tape, mx, wt(15))?);
        lab_terms.push(channels(tape, agg_mx, wt(16))?);
    }
    Ok((add_all(tape, &feat_terms)?, add_all(tape, &lab_terms)?))
}

fn activate(tape: &mut Tape, v: Var, kind: Nonlinearity) -> Result<Var, ModelError> {
    Ok(match kind {
        Nonlinearity::Relu => tape.relu(v)?,
        Nonlinearity::LeakyRelu => tape.leaky_relu(v, Nonlinearity::LEAKY_SLOPE)?,
        Nonlinearity::Identity => v,
    })
}

/// Splits the flat parameter list into per-layer bindings.
fn bind_layers<'a>(model: &TsGnnModel, params: &'a [Var]) -> Result<Vec<LayerVars<'a>>, ModelError> {
    let mut out = Vec::with_capacity(model.layers.len());
    let mut at = 0;
    for lp in &model.layers {
        let take = WEIGHTS_PER_LAYER + if lp.a_self.is_some() { 2 } else { 0 };
        if at + take > params.len() {
            return Err(ModelError::Shape(format!(
                "{} parameter variables bound, model needs more",
                params.len()
            )));
        }
        let w = &params[at..at + WEIGHTS_PER_LAYER];
        let (a_self, a_nbr) = if lp.a_self.is_some() {
            (Some(params[at + 16]), Some(params[at + 17]))
        } else {
            (None, None)
        };
        out.push(LayerVars { w, a_self, a_nbr });
        at += take;
    }
    if at != params.len() {
        return Err(ModelError::Shape(format!(
            "{} parameter variables bound, model has {at}",
            params.len()
        )));
    }
    Ok(out)
}

pub(super) fn forward_on_tape(
    tape: &mut Tape,
    model: &TsGnnModel,
    params: &[Var],
    graph: &Graph,
    y_visible: &DenseArray,
    visible: &[usize],
) -> Result<Var, ModelError> {
    let arch = &model.arch;
    let x = graph.features();
    let (n, f) = x.dims2()?;
    let (ny, c) = y_visible.dims2()?;
    if ny != n || c != graph.num_classes() {
        return Err(ModelError::Shape(format!(
            "visible labels {:?} do not match a graph with {n} nodes and {} classes",
            y_visible.shape(),
            graph.num_classes()
        )));
    }
    let mixers = if arch.mixers {
        Some(solve_mixers(graph, x, y_visible, visible, arch.ridge)?)
    } else {
        None
    };
    let ctx = Context::new(graph, arch.aggregator, mixers);
    let layers = bind_layers(model, params)?;

    let mut feat = tape.constant(x.reshape(&[n, f, 1])?)?;
    let mut lab = tape.constant(y_visible.reshape(&[n, c, 1])?)?;
    let last = layers.len() - 1;
    for (l, vars) in layers.iter().enumerate() {
        let (a, b) = layer_on_tape(tape, vars, arch.aggregator, arch.pooling, &ctx, feat, lab)?;
        if l < last {
            feat = activate(tape, a, arch.nonlinearity)?;
            lab = activate(tape, b, arch.nonlinearity)?;
        } else {
            feat = a;
            lab = b;
        }
    }
    // label projection: the final label block is the logits
    Ok(tape.reshape(lab, &[n, c])?)
}

/// Logits `N×C` for `graph` with the labels of `visible` shown to the model.
/// `y_visible` is one-hot on visible rows and zero elsewhere.
pub fn tsgnn_forward(
    model: &TsGnnModel,
    graph: &Graph,
    y_visible: &DenseArray,
    visible: &[usize],
) -> Result<DenseArray, ModelError> {
    let mut tape = Tape::new();
    let params = model
        .parameters()
        .into_iter()
        .map(|p| tape.constant(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let logits = forward_on_tape(&mut tape, model, &params, graph, y_visible, visible)?;
    Ok(tape.value(logits).clone())
}

/// One layer applied to an explicit state, without nonlinearity.
pub fn tsgnn_layer_forward(
    graph: &Graph,
    state: &NodeState,
    params: &LayerParams,
    mixers: Option<&Mixers>,
    aggregator: Aggregator,
    pooling: Pooling,
) -> Result<NodeState, ModelError> {
    let mut tape = Tape::new();
    let w = params
        .w
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let a_self = params.a_self.clone().map(|a| tape.constant(a)).transpose()?;
    let a_nbr = params.a_nbr.clone().map(|a| tape.constant(a)).transpose()?;
    let vars = LayerVars {
        w: &w,
        a_self,
        a_nbr,
    };
    let ctx = Context::new(graph, aggregator, mixers.cloned());
    let feat = tape.constant(state.feat.clone())?;
    let lab = tape.constant(state.lab.clone())?;
    let (a, b) = layer_on_tape(&mut tape, &vars, aggregator, pooling, &ctx, feat, lab)?;
    Ok(NodeState {
        feat: tape.value(a).clone(),
        lab: tape.value(b).clone(),
    })
}
