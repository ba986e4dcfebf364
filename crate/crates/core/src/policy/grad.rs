//! Reverse-mode gradients of the REINFORCE surrogate loss
//!
//! ```text
//! loss = Σ_episodes [ -A · Σ_t log π(a_t) - β · Σ_t H(π_t) ]
//! ```
//!
//! and a central finite-difference check for them.

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{
    action_input, action_logits, lstm_cell, masked_softmax, scorer_forward, Action, CellCache, LstmLayer,
    PolicyParams, Real, ScorerCache,
};
use crate::error::{Error, Result};
use crate::kg::{NodeId, RelationId};
use crate::par::Execution;

/// One decision of an episode: the offered actions, which were masked, and the pick.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub actions: Vec<Action>,
    pub mask: Vec<bool>,
    pub chosen: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub source: NodeId,
    pub query_relation: RelationId,
    pub decisions: Vec<Decision>,
}

struct DecisionTape<T> {
    current: NodeId,
    scorer: ScorerCache<T>,
    probs: Vec<T>,
    log_probs: Vec<T>,
}

struct Tape<T> {
    decisions: Vec<DecisionTape<T>>,
    /// `cells[k][l]`: layer `l` consuming the action chosen at decision `k`.
    cells: Vec<Vec<CellCache<T>>>,
}

fn forward<T: Real>(params: &PolicyParams<T>, ep: &Episode) -> Tape<T> {
    let hs = params.config.hidden_size;
    let layers = params.lstm.len();
    let mut h: Vec<Array1<T>> = vec![Array1::zeros(hs); layers];
    let mut c: Vec<Array1<T>> = vec![Array1::zeros(hs); layers];
    let mut current = ep.source;
    let mut decisions = Vec::with_capacity(ep.decisions.len());
    let mut cells = Vec::with_capacity(ep.decisions.len().saturating_sub(1));
    for (t, dec) in ep.decisions.iter().enumerate() {
        let h_top = h[layers - 1].clone();
        let scorer = scorer_forward(params, &h_top, ep.query_relation, current);
        let logits = action_logits(params, &scorer.o, &dec.actions);
        let (probs, log_probs) = masked_softmax(&logits, &dec.mask);
        decisions.push(DecisionTape {
            current,
            scorer,
            probs,
            log_probs,
        });
        let taken = dec.actions[dec.chosen];
        // The state after the last action never feeds a decision.
        if t + 1 < ep.decisions.len() {
            let mut x = action_input(params, &taken);
            let mut step = Vec::with_capacity(layers);
            for (l, layer) in params.lstm.iter().enumerate() {
                let cache = lstm_cell(layer, x.view(), &h[l], &c[l]);
                x = cache.h.clone();
                h[l] = cache.h.clone();
                c[l] = cache.c.clone();
                step.push(cache);
            }
            cells.push(step);
        }
        current = taken.target;
    }
    Tape { decisions, cells }
}

fn entropy<T: Real>(probs: &[T], log_probs: &[T]) -> T {
    let mut h = T::zero();
    for (p, lp) in probs.iter().zip(log_probs) {
        if *p > T::zero() {
            h -= *p * *lp;
        }
    }
    h
}

fn tape_loss<T: Real>(ep: &Episode, tape: &Tape<T>, advantages: &[T], beta: T) -> T {
    let mut loss = T::zero();
    for ((dec, t), &advantage) in ep.decisions.iter().zip(&tape.decisions).zip(advantages) {
        loss -= advantage * t.log_probs[dec.chosen];
        loss -= beta * entropy(&t.probs, &t.log_probs);
    }
    loss
}

/// Surrogate loss of one episode.
pub fn episode_loss<T: Real>(params: &PolicyParams<T>, ep: &Episode, advantage: T, beta: T) -> T {
    let adv = vec![advantage; ep.decisions.len()];
    tape_loss(ep, &forward(params, ep), &adv, beta)
}

fn add_outer<T: Real>(w: &mut Array2<T>, a: &Array1<T>, b: ArrayView1<T>) {
    for (i, mut row) in w.rows_mut().into_iter().enumerate() {
        if a[i] != T::zero() {
            row.scaled_add(a[i], &b);
        }
    }
}

fn add_row<T: Real>(m: &mut Array2<T>, row: usize, v: ArrayView1<T>) {
    m.row_mut(row).zip_mut_with(&v, |x, y| *x += *y);
}

fn add_row_scaled<T: Real>(m: &mut Array2<T>, row: usize, k: T, v: ArrayView1<T>) {
    m.row_mut(row).scaled_add(k, &v);
}

/// Backward through one LSTM cell. Returns `(d input, d h_prev, d c_prev)`.
fn cell_backward<T: Real>(
    layer: &LstmLayer<T>,
    cache: &CellCache<T>,
    dh: &Array1<T>,
    dc_next: &Array1<T>,
    grad: &mut LstmLayer<T>,
) -> (Array1<T>, Array1<T>, Array1<T>) {
    let hs = dh.len();
    let one = T::one();
    let dc = dc_next + &(dh * &cache.o * &cache.tc.mapv(|v| one - v * v));
    let d_o = dh * &cache.tc;
    let di = &dc * &cache.g;
    let dg = &dc * &cache.i;
    let df = &dc * &cache.c_prev;
    let dc_prev = &dc * &cache.f;
    let mut da = Array1::zeros(4 * hs);
    da.slice_mut(s![..hs])
        .assign(&(&di * &cache.i.mapv(|v| v * (one - v))));
    da.slice_mut(s![hs..2 * hs])
        .assign(&(&df * &cache.f.mapv(|v| v * (one - v))));
    da.slice_mut(s![2 * hs..3 * hs])
        .assign(&(&dg * &cache.g.mapv(|v| one - v * v)));
    da.slice_mut(s![3 * hs..])
        .assign(&(&d_o * &cache.o.mapv(|v| v * (one - v))));
    add_outer(&mut grad.weight, &da, cache.z.view());
    grad.bias += &da;
    let dz = layer.weight.t().dot(&da);
    let n_in = cache.z.len() - hs;
    let dx = dz.slice(s![..n_in]).to_owned();
    let dh_prev = dz.slice(s![n_in..]).to_owned();
    (dx, dh_prev, dc_prev)
}

/// Accumulate the gradient of one episode's loss into `grads`; returns the loss.
fn backward<T: Real>(
    params: &PolicyParams<T>,
    ep: &Episode,
    advantages: &[T],
    beta: T,
    grads: &mut PolicyParams<T>,
) -> T {
    assert_eq!(advantages.len(), ep.decisions.len(), "one advantage per decision");
    let tape = forward(params, ep);
    let d = params.config.embedding_size;
    let hs = params.config.hidden_size;
    let layers = params.lstm.len();
    let mut dh_top: Vec<Array1<T>> = Vec::with_capacity(tape.decisions.len());

    for ((dec, t), &advantage) in ep.decisions.iter().zip(&tape.decisions).zip(advantages) {
        let h = entropy(&t.probs, &t.log_probs);
        let o = &t.scorer.o;
        let mut d_o: Array1<T> = Array1::zeros(2 * d);
        for (j, a) in dec.actions.iter().enumerate() {
            if dec.mask[j] {
                continue;
            }
            let p = t.probs[j];
            let indicator = if j == dec.chosen { T::one() } else { T::zero() };
            // d(-A log π_a)/dz_j = -A (1[j=a] - p_j); d(-β H)/dz_j = β p_j (log p_j + H)
            let mut g = -advantage * (indicator - p);
            if p > T::zero() {
                g += beta * p * (t.log_probs[j] + h);
            }
            if g == T::zero() {
                continue;
            }
            let rrow = params.relation_row(a.relation);
            let erow = a.target.index();
            d_o.slice_mut(s![..d]).scaled_add(g, &params.relation.row(rrow));
            d_o.slice_mut(s![d..]).scaled_add(g, &params.entity.row(erow));
            add_row_scaled(&mut grads.relation, rrow, g, o.slice(s![..d]));
            add_row_scaled(&mut grads.entity, erow, g, o.slice(s![d..]));
        }
        let u = &t.scorer.u;
        add_outer(&mut grads.out_w, &d_o, u.view());
        grads.out_b += &d_o;
        let du = params.out_w.t().dot(&d_o);
        let dpre = &du * &u.mapv(|v| T::one() - v * v);
        add_outer(&mut grads.hidden_w, &dpre, t.scorer.s.view());
        grads.hidden_b += &dpre;
        let ds = params.hidden_w.t().dot(&dpre);
        dh_top.push(ds.slice(s![..hs]).to_owned());
        add_row(&mut grads.relation, ep.query_relation.index(), ds.slice(s![hs..hs + d]));
        add_row(&mut grads.entity, t.current.index(), ds.slice(s![hs + d..]));
    }

    let mut dh_rec: Vec<Array1<T>> = vec![Array1::zeros(hs); layers];
    let mut dc_rec: Vec<Array1<T>> = vec![Array1::zeros(hs); layers];
    for k in (0..tape.cells.len()).rev() {
        let mut dh_in = dh_rec.clone();
        dh_in[layers - 1] += &dh_top[k + 1];
        let taken = ep.decisions[k].actions[ep.decisions[k].chosen];
        for l in (0..layers).rev() {
            let (dx, dh_prev, dc_prev) =
                cell_backward(&params.lstm[l], &tape.cells[k][l], &dh_in[l], &dc_rec[l], &mut grads.lstm[l]);
            dh_rec[l] = dh_prev;
            dc_rec[l] = dc_prev;
            if l > 0 {
                dh_in[l - 1] += &dx;
            } else {
                add_row(&mut grads.relation, params.relation_row(taken.relation), dx.slice(s![..d]));
                add_row(&mut grads.entity, taken.target.index(), dx.slice(s![d..]));
            }
        }
    }
    tape_loss(ep, &tape, advantages, beta)
}

#[derive(Clone, Debug)]
pub struct GradientBatch<T> {
    pub grads: PolicyParams<T>,
    /// Summed surrogate loss.
    pub loss: T,
}

const GRADIENT_CHUNK: usize = 8;

/// Gradient of the summed surrogate loss over `(episode, advantage)` pairs.
pub fn policy_gradients<T: Real>(
    params: &PolicyParams<T>,
    episodes: &[(&Episode, T)],
    beta: T,
    exec: Execution,
) -> Result<GradientBatch<T>> {
    let expanded: Vec<(&Episode, Vec<T>)> = episodes
        .iter()
        .map(|(ep, a)| (*ep, vec![*a; ep.decisions.len()]))
        .collect();
    policy_gradients_stepwise(params, &expanded, beta, exec)
}

/// As [`policy_gradients`], with a separate advantage for every decision of an episode.
pub fn policy_gradients_stepwise<T: Real>(
    params: &PolicyParams<T>,
    episodes: &[(&Episode, Vec<T>)],
    beta: T,
    exec: Execution,
) -> Result<GradientBatch<T>> {
    if episodes.iter().any(|(_, a)| a.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("advantages".into()));
    }
    // Fixed chunks reduced in order keep the float summation independent of thread count.
    let chunks: Vec<&[(&Episode, Vec<T>)]> = episodes.chunks(GRADIENT_CHUNK).collect();
    let partial = exec.map(&chunks, |chunk| {
        let mut g = params.zeros_like();
        let mut l = T::zero();
        for (ep, adv) in chunk.iter() {
            l += backward(params, ep, adv, beta, &mut g);
        }
        (g, l)
    });
    let mut grads = params.zeros_like();
    let mut loss = T::zero();
    for (g, l) in &partial {
        grads.add_assign(g);
        loss += *l;
    }
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    Ok(GradientBatch { grads, loss })
}

/// Largest `|analytic - numeric| / (|numeric| + 1e-8)` over all parameters,
/// with central differences of step `eps`.
pub fn finite_diff_check(params: &PolicyParams<f64>, ep: &Episode, advantage: f64, beta: f64, eps: f64) -> f64 {
    finite_diff_pairs(params, ep, advantage, beta, eps)
        .into_iter()
        .map(|(a, n)| (a - n).abs() / (n.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// `(analytic, numeric)` gradient for every parameter, in [`PolicyParams::slices`] order.
pub fn finite_diff_pairs(params: &PolicyParams<f64>, ep: &Episode, advantage: f64, beta: f64, eps: f64) -> Vec<(f64, f64)> {
    let analytic = policy_gradients(params, &[(ep, advantage)], beta, Execution::Sequential)
        .expect("finite gradients")
        .grads;
    let analytic: Vec<f64> = analytic.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let mut probe = params.clone();
    let mut pairs = Vec::with_capacity(analytic.len());
    let n_tensors = probe.slices().len();
    for ti in 0..n_tensors {
        let len = probe.slices()[ti].len();
        for i in 0..len {
            let orig = probe.slices()[ti][i];
            probe.slices_mut()[ti][i] = orig + eps;
            let up = episode_loss(&probe, ep, advantage, beta);
            probe.slices_mut()[ti][i] = orig - eps;
            let down = episode_loss(&probe, ep, advantage, beta);
            probe.slices_mut()[ti][i] = orig;
            pairs.push((analytic[pairs.len()], (up - down) / (2.0 * eps)));
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{score_actions, step_history, AgentState, PolicyConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> PolicyConfig {
        PolicyConfig {
            embedding_size: 3,
            hidden_size: 3,
            lstm_layers: 2,
            max_branching: 8,
        }
    }

    /// Random episode over a fully synthetic action space (no graph needed).
    pub(crate) fn random_episode(rng: &mut ChaCha8Rng, n_ent: usize, n_rel: usize, len: usize) -> Episode {
        let source = NodeId::from_index(rng.gen_range(0..n_ent));
        let mut current = source;
        let mut decisions = Vec::new();
        for _ in 0..len {
            let k = rng.gen_range(1..5);
            let mut actions = vec![Action::no_op(current)];
            for _ in 0..k {
                actions.push(Action::edge(
                    RelationId::from_index(rng.gen_range(0..n_rel)),
                    NodeId::from_index(rng.gen_range(0..n_ent)),
                ));
            }
            let mut mask: Vec<bool> = (0..actions.len()).map(|i| i > 0 && rng.gen_bool(0.2)).collect();
            mask[0] = false;
            let open: Vec<usize> = (0..actions.len()).filter(|&i| !mask[i]).collect();
            let chosen = open[rng.gen_range(0..open.len())];
            current = actions[chosen].target;
            decisions.push(Decision { actions, mask, chosen });
        }
        Episode {
            source,
            query_relation: RelationId::from_index(rng.gen_range(0..n_rel)),
            decisions,
        }
    }

    #[test]
    fn zero_advantage_zero_beta_gives_zero_gradients() {
        let p: PolicyParams<f64> = PolicyParams::init(tiny_config(), 5, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps: Vec<Episode> = (0..4).map(|_| random_episode(&mut rng, 5, 3, 4)).collect();
        let batch: Vec<(&Episode, f64)> = eps.iter().map(|e| (e, 0.0)).collect();
        let g = policy_gradients(&p, &batch, 0.0, Execution::Parallel).unwrap();
        assert!(g.grads.slices().iter().all(|s| s.iter().all(|x| *x == 0.0)));
        assert_eq!(g.loss, 0.0);
        assert_eq!(finite_diff_check(&p, &eps[0], 0.0, 0.0, 1e-4), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let p: PolicyParams<f64> = PolicyParams::init(tiny_config(), 5, 3, seed);
            assert!(p.num_params() <= 1000);
            let ep = random_episode(&mut rng, 5, 3, 4);
            let adv = rng.gen_range(-2.0..2.0);
            let err = finite_diff_check(&p, &ep, adv, 0.05, 1e-4);
            assert!(err < 1e-4, "seed {seed}: {err}");
            assert_eq!(err, finite_diff_check(&p, &ep, adv, 0.05, 1e-4));
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let p: PolicyParams<f64> = PolicyParams::init(tiny_config(), 5, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps: Vec<Episode> = (0..32).map(|_| random_episode(&mut rng, 5, 3, 4)).collect();
        let batch: Vec<(&Episode, f64)> = eps.iter().enumerate().map(|(i, e)| (e, i as f64 * 0.1 - 1.0)).collect();
        let a = policy_gradients(&p, &batch, 0.02, Execution::Sequential).unwrap();
        let b = policy_gradients(&p, &batch, 0.02, Execution::Parallel).unwrap();
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn entropy_step_moves_toward_uniform() {
        let p: PolicyParams<f64> = PolicyParams::init(tiny_config(), 5, 3, 4);
        let actions = vec![
            Action::no_op(NodeId(0)),
            Action::edge(RelationId(0), NodeId(1)),
            Action::edge(RelationId(1), NodeId(2)),
            Action::edge(RelationId(2), NodeId(3)),
        ];
        let ep = Episode {
            source: NodeId(0),
            query_relation: RelationId(1),
            decisions: vec![Decision {
                actions: actions.clone(),
                mask: vec![false; 4],
                chosen: 1,
            }],
        };
        let kl = |p: &PolicyParams<f64>| {
            let s = AgentState::initial(p, NodeId(0), RelationId(1), 4);
            let d = score_actions(p, &s, &actions, &[false; 4]);
            (actions.len() as f64).ln() - d.entropy()
        };
        let before = kl(&p);
        let g = policy_gradients(&p, &[(&ep, 0.0)], 0.5, Execution::Sequential).unwrap().grads;
        let mut q = p.clone();
        let mut step = g.clone();
        step.scale(-0.1);
        q.add_assign(&step);
        assert!(kl(&q) < before, "{} !< {before}", kl(&q));
    }

    #[test]
    fn loss_matches_incremental_api() {
        let p: PolicyParams<f64> = PolicyParams::init(tiny_config(), 5, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ep = random_episode(&mut rng, 5, 3, 4);
        let mut s = AgentState::initial(&p, ep.source, ep.query_relation, 4);
        let mut total = 0.0;
        for dec in &ep.decisions {
            let d = score_actions(&p, &s, &dec.actions, &dec.mask);
            total -= 0.7 * d.log_probs[dec.chosen] + 0.1 * d.entropy();
            s = step_history(&p, &s, &dec.actions[dec.chosen]).unwrap();
        }
        assert!((episode_loss(&p, &ep, 0.7, 0.1) - total).abs() < 1e-12);
    }
}
