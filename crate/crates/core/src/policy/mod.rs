//! Walker policy: entity/relation embeddings, a stacked LSTM over the walk
//! history and a two-layer scorer producing one logit per candidate action.
//!
//! Forward pass for one decision:
//!
//! ```text
//! s      = [h_top ; rel(query) ; ent(current)]
//! u      = tanh(W1 s + b1)
//! o      = W2 u + b2                       (length 2d)
//! logit  = o · [rel(action) ; ent(target)]
//! π      = softmax over unmasked candidates
//! ```
//!
//! After an action is taken the LSTM consumes `[rel(action) ; ent(target)]`.
//! Gradients are written out by hand in [`grad`]; the network is generic over
//! the float type so the finite-difference check can run in `f64` while
//! training runs in `f32`.

mod adam;
mod checkpoint;
pub mod grad;

use std::fmt::{Debug, Display};

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{NodeId, RelationId};

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{Checkpoint, TensorRecord};
pub use grad::{
    episode_loss, finite_diff_check, finite_diff_pairs, policy_gradients, policy_gradients_stepwise, Decision, Episode, GradientBatch,
};

/// Float types the policy can run in.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    fn push_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    const WIDTH: usize;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const WIDTH: usize = 4;
    fn push_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const WIDTH: usize = 8;
    fn push_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable literal")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub lstm_layers: usize,
    /// Maximum number of out-edges offered to the agent at one node.
    pub max_branching: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embedding_size: 256,
            hidden_size: 256,
            lstm_layers: 2,
            max_branching: 150,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("lstm_layers", self.lstm_layers),
            ("max_branching", self.max_branching),
        ] {
            if v == 0 {
                return Err(Error::config(format!("policy.{key}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<T> {
    /// Rows are the input, forget, cell and output gates (hidden_size each);
    /// columns are `[input ; previous hidden]`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    pub config: PolicyConfig,
    pub entity: Array2<T>,
    /// One row per relation plus a final NO_OP row.
    pub relation: Array2<T>,
    pub lstm: Vec<LstmLayer<T>>,
    pub hidden_w: Array2<T>,
    pub hidden_b: Array1<T>,
    pub out_w: Array2<T>,
    pub out_b: Array1<T>,
}

impl<T: Real> PolicyParams<T> {
    /// Uniform initialisation in ±1/√fan_in, drawn tensor by tensor from `seed`.
    pub fn init(config: PolicyConfig, num_entities: usize, num_relations: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embedding_size;
        let h = config.hidden_size;
        let mut uniform2 = |rows: usize, cols: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| lit::<T>(rng.gen_range(-a..a)))
        };
        let entity = uniform2(num_entities, d, d);
        let relation = uniform2(num_relations + 1, d, d);
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let input = if l == 0 { 2 * d } else { h };
            let w = uniform2(4 * h, input + h, input + h);
            let b = uniform2(1, 4 * h, input + h).index_axis_move(Axis(0), 0);
            lstm.push(LstmLayer { weight: w, bias: b });
        }
        let hidden_w = uniform2(h, h + 2 * d, h + 2 * d);
        let hidden_b = uniform2(1, h, h + 2 * d).index_axis_move(Axis(0), 0);
        let out_w = uniform2(2 * d, h, h);
        let out_b = uniform2(1, 2 * d, h).index_axis_move(Axis(0), 0);
        PolicyParams {
            config,
            entity,
            relation,
            lstm,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<T>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<T>| Array1::zeros(a.raw_dim());
        PolicyParams {
            config: self.config,
            entity: z2(&self.entity),
            relation: z2(&self.relation),
            lstm: self
                .lstm
                .iter()
                .map(|l| LstmLayer {
                    weight: z2(&l.weight),
                    bias: z1(&l.bias),
                })
                .collect(),
            hidden_w: z2(&self.hidden_w),
            hidden_b: z1(&self.hidden_b),
            out_w: z2(&self.out_w),
            out_b: z1(&self.out_b),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity.nrows()
    }

    /// Number of real relations (the NO_OP row excluded).
    pub fn num_relations(&self) -> usize {
        self.relation.nrows() - 1
    }

    pub fn no_op_row(&self) -> usize {
        self.relation.nrows() - 1
    }

    pub(crate) fn relation_row(&self, rel: Option<RelationId>) -> usize {
        rel.map_or(self.no_op_row(), |r| r.index())
    }

    /// Tensor names and shapes in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            ("entity".to_string(), self.entity.shape().to_vec()),
            ("relation".to_string(), self.relation.shape().to_vec()),
        ];
        for (i, l) in self.lstm.iter().enumerate() {
            out.push((format!("lstm.{i}.weight"), l.weight.shape().to_vec()));
            out.push((format!("lstm.{i}.bias"), l.bias.shape().to_vec()));
        }
        out.push(("hidden.weight".into(), self.hidden_w.shape().to_vec()));
        out.push(("hidden.bias".into(), self.hidden_b.shape().to_vec()));
        out.push(("out.weight".into(), self.out_w.shape().to_vec()));
        out.push(("out.bias".into(), self.out_b.shape().to_vec()));
        out
    }

    /// Flat views of every tensor in [`layout`](Self::layout) order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![
            self.entity.as_slice().expect("standard layout"),
            self.relation.as_slice().expect("standard layout"),
        ];
        for l in &self.lstm {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.hidden_w.as_slice().expect("standard layout"));
        out.push(self.hidden_b.as_slice().expect("standard layout"));
        out.push(self.out_w.as_slice().expect("standard layout"));
        out.push(self.out_b.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![
            self.entity.as_slice_mut().expect("standard layout"),
            self.relation.as_slice_mut().expect("standard layout"),
        ];
        for l in &mut self.lstm {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.hidden_w.as_slice_mut().expect("standard layout"));
        out.push(self.hidden_b.as_slice_mut().expect("standard layout"));
        out.push(self.out_w.as_slice_mut().expect("standard layout"));
        out.push(self.out_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in self.slices_mut() {
            for x in a.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Euclidean norm over all tensors, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| {
                let v = x.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<U: Real>(&self) -> PolicyParams<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::from_f64(x.to_f64().unwrap()).unwrap());
        let c1 = |a: &Array1<T>| a.mapv(|x| U::from_f64(x.to_f64().unwrap()).unwrap());
        PolicyParams {
            config: self.config,
            entity: c2(&self.entity),
            relation: c2(&self.relation),
            lstm: self
                .lstm
                .iter()
                .map(|l| LstmLayer {
                    weight: c2(&l.weight),
                    bias: c1(&l.bias),
                })
                .collect(),
            hidden_w: c2(&self.hidden_w),
            hidden_b: c1(&self.hidden_b),
            out_w: c2(&self.out_w),
            out_b: c1(&self.out_b),
        }
    }
}

/// A candidate move: follow `relation` to `target`, or stay put (`relation == None`).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub relation: Option<RelationId>,
    pub target: NodeId,
}

impl Action {
    pub fn edge(relation: RelationId, target: NodeId) -> Self {
        Action {
            relation: Some(relation),
            target,
        }
    }

    pub fn no_op(at: NodeId) -> Self {
        Action { relation: None, target: at }
    }

    pub fn is_no_op(&self) -> bool {
        self.relation.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState<T> {
    pub source: NodeId,
    pub query_relation: RelationId,
    pub current: NodeId,
    pub hidden: Vec<Array1<T>>,
    pub cell: Vec<Array1<T>>,
    pub step: usize,
    pub max_steps: usize,
}

impl<T: Real> AgentState<T> {
    pub fn initial(params: &PolicyParams<T>, source: NodeId, query_relation: RelationId, max_steps: usize) -> Self {
        let h = params.config.hidden_size;
        let layers = params.lstm.len();
        AgentState {
            source,
            query_relation,
            current: source,
            hidden: vec![Array1::zeros(h); layers],
            cell: vec![Array1::zeros(h); layers],
            step: 0,
            max_steps,
        }
    }

    pub fn top_hidden(&self) -> &Array1<T> {
        self.hidden.last().expect("at least one LSTM layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution<T> {
    pub actions: Vec<Action>,
    pub probs: Vec<T>,
    /// `-inf` for masked actions.
    pub log_probs: Vec<T>,
}

impl<T: Real> ActionDistribution<T> {
    /// Entropy over the unmasked actions.
    pub fn entropy(&self) -> T {
        let mut h = T::zero();
        for (p, lp) in self.probs.iter().zip(&self.log_probs) {
            if *p > T::zero() {
                h -= *p * *lp;
            }
        }
        h
    }
}

pub(crate) struct CellCache<T> {
    pub z: Array1<T>,
    pub c_prev: Array1<T>,
    pub i: Array1<T>,
    pub f: Array1<T>,
    pub g: Array1<T>,
    pub o: Array1<T>,
    pub tc: Array1<T>,
    pub h: Array1<T>,
    pub c: Array1<T>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) fn lstm_cell<T: Real>(
    layer: &LstmLayer<T>,
    x: ArrayView1<T>,
    h_prev: &Array1<T>,
    c_prev: &Array1<T>,
) -> CellCache<T> {
    let hs = h_prev.len();
    let mut z = Array1::zeros(x.len() + hs);
    z.slice_mut(s![..x.len()]).assign(&x);
    z.slice_mut(s![x.len()..]).assign(h_prev);
    let a = layer.weight.dot(&z) + &layer.bias;
    let i = a.slice(s![..hs]).mapv(sigmoid);
    let f = a.slice(s![hs..2 * hs]).mapv(sigmoid);
    let g = a.slice(s![2 * hs..3 * hs]).mapv(|v| v.tanh());
    let o = a.slice(s![3 * hs..]).mapv(sigmoid);
    let c = &f * c_prev + &i * &g;
    let tc = c.mapv(|v| v.tanh());
    let h = &o * &tc;
    CellCache {
        z,
        c_prev: c_prev.clone(),
        i,
        f,
        g,
        o,
        tc,
        h,
        c,
    }
}

/// Embedding `[rel(action) ; ent(target)]` fed to the first LSTM layer.
pub(crate) fn action_input<T: Real>(params: &PolicyParams<T>, action: &Action) -> Array1<T> {
    let d = params.config.embedding_size;
    let mut x = Array1::zeros(2 * d);
    x.slice_mut(s![..d])
        .assign(&params.relation.row(params.relation_row(action.relation)));
    x.slice_mut(s![d..]).assign(&params.entity.row(action.target.index()));
    x
}

pub(crate) struct ScorerCache<T> {
    pub s: Array1<T>,
    pub u: Array1<T>,
    pub o: Array1<T>,
}

pub(crate) fn scorer_forward<T: Real>(
    params: &PolicyParams<T>,
    h_top: &Array1<T>,
    query_relation: RelationId,
    current: NodeId,
) -> ScorerCache<T> {
    let d = params.config.embedding_size;
    let hs = h_top.len();
    let mut s = Array1::zeros(hs + 2 * d);
    s.slice_mut(s![..hs]).assign(h_top);
    s.slice_mut(s![hs..hs + d])
        .assign(&params.relation.row(query_relation.index()));
    s.slice_mut(s![hs + d..]).assign(&params.entity.row(current.index()));
    let u = (params.hidden_w.dot(&s) + &params.hidden_b).mapv(|v| v.tanh());
    let o = params.out_w.dot(&u) + &params.out_b;
    ScorerCache { s, u, o }
}

pub(crate) fn action_logits<T: Real>(params: &PolicyParams<T>, o: &Array1<T>, actions: &[Action]) -> Vec<T> {
    let d = params.config.embedding_size;
    let o_rel = o.slice(s![..d]);
    let o_ent = o.slice(s![d..]);
    actions
        .iter()
        .map(|a| {
            o_rel.dot(&params.relation.row(params.relation_row(a.relation)))
                + o_ent.dot(&params.entity.row(a.target.index()))
        })
        .collect()
}

/// Softmax restricted to unmasked entries; masked entries get probability
/// exactly zero and log-probability `-inf`.
pub(crate) fn masked_softmax<T: Real>(logits: &[T], mask: &[bool]) -> (Vec<T>, Vec<T>) {
    assert_eq!(logits.len(), mask.len());
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| !**m)
        .map(|(l, _)| *l)
        .fold(T::neg_infinity(), T::max);
    assert!(max > T::neg_infinity(), "at least one action must be unmasked");
    let sum: T = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| !**m)
        .map(|(l, _)| (*l - max).exp())
        .sum();
    let lse = max + sum.ln();
    let mut probs = Vec::with_capacity(logits.len());
    let mut log_probs = Vec::with_capacity(logits.len());
    for (l, m) in logits.iter().zip(mask) {
        if *m {
            probs.push(T::zero());
            log_probs.push(T::neg_infinity());
        } else {
            let lp = *l - lse;
            probs.push(lp.exp());
            log_probs.push(lp);
        }
    }
    (probs, log_probs)
}

/// Distribution over `actions` in the given state. `mask[i] == true` hides action `i`.
pub fn score_actions<T: Real>(
    params: &PolicyParams<T>,
    state: &AgentState<T>,
    actions: &[Action],
    mask: &[bool],
) -> ActionDistribution<T> {
    let cache = scorer_forward(params, state.top_hidden(), state.query_relation, state.current);
    let logits = action_logits(params, &cache.o, actions);
    let (probs, log_probs) = masked_softmax(&logits, mask);
    ActionDistribution {
        actions: actions.to_vec(),
        probs,
        log_probs,
    }
}

/// Advance the history encoder by one taken action.
pub fn step_history<T: Real>(params: &PolicyParams<T>, state: &AgentState<T>, taken: &Action) -> Result<AgentState<T>> {
    if state.step >= state.max_steps {
        return Err(Error::StepOverflow(state.max_steps));
    }
    let mut x = action_input(params, taken);
    let mut hidden = Vec::with_capacity(state.hidden.len());
    let mut cell = Vec::with_capacity(state.cell.len());
    for (l, layer) in params.lstm.iter().enumerate() {
        let cache = lstm_cell(layer, x.view(), &state.hidden[l], &state.cell[l]);
        x = cache.h.clone();
        hidden.push(cache.h);
        cell.push(cache.c);
    }
    Ok(AgentState {
        source: state.source,
        query_relation: state.query_relation,
        current: taken.target,
        hidden,
        cell,
        step: state.step + 1,
        max_steps: state.max_steps,
    })
}
