//! Episodic walk environment and the REINFORCE trainer.
//!
//! A query `(source, relation, ?)` is answered by sampling fixed-length walks
//! from the source. Each step offers NO_OP plus the (possibly subsampled)
//! out-edges of the current node; edges that would reveal the query triple
//! directly are masked at every step. A walk ending at a true answer earns the
//! positive reward plus `λ · w(rule)` when its NO_OP-stripped metapath equals a
//! rule body for the query relation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{self, MetricsReport};
use crate::kg::{KnowledgeGraph, NodeId, RelationId, SplitSet, Triple};
use crate::par::Execution;
use crate::policy::{
    clip_global_norm, policy_gradients_stepwise, score_actions, step_history, Action, Adam, AgentState, Decision,
    Episode, PolicyConfig, PolicyParams,
};
use crate::rules::{signature, MetaStep, RuleId, RuleSet};
use crate::ruleweights::{naive_batch_update, p2h_batch_update, FragmentScale, UpdateMode, WeightTable};

/// Parameters live in `f32` during training and evaluation.
pub type Params = PolicyParams<f32>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of transitions per walk, NO_OPs included.
    pub path_length: usize,
    /// Scale of the rule term in the reward.
    pub rule_reward_ratio: f64,
    /// Rule-weight update rate.
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rollouts: usize,
    pub test_rollouts: usize,
    /// Discount applied to the terminal reward per step before the end.
    pub gamma: f64,
    /// Decay of the moving-average reward baseline.
    pub baseline_decay: f64,
    /// Entropy bonus weight.
    pub beta: f64,
    pub positive_reward: f64,
    pub negative_reward: f64,
    pub update_mode: UpdateMode,
    pub fragment_scale: FragmentScale,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub filtered: bool,
    pub seed: u64,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            path_length: 4,
            rule_reward_ratio: 10.0,
            alpha: 0.001,
            learning_rate: 1e-4,
            batch_size: 128,
            rollouts: 100,
            test_rollouts: 50,
            gamma: 1.0,
            baseline_decay: 0.05,
            beta: 0.025,
            positive_reward: 1.0,
            negative_reward: 0.0,
            update_mode: UpdateMode::P2h,
            fragment_scale: FragmentScale::Count,
            max_epochs: 100,
            patience: 5,
            grad_clip: 5.0,
            filtered: true,
            seed: 1,
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("path_length", self.path_length),
            ("batch_size", self.batch_size),
            ("rollouts", self.rollouts),
            ("test_rollouts", self.test_rollouts),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("train.{key}"), "must be positive"));
            }
        }
        if !(self.rule_reward_ratio >= 0.0 && self.rule_reward_ratio.is_finite()) {
            return Err(Error::config("train.rule_reward_ratio", "must be a finite value >= 0"));
        }
        for (key, v) in [
            ("alpha", self.alpha),
            ("baseline_decay", self.baseline_decay),
            ("gamma", self.gamma),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("train.{key}"), format!("{v} is outside [0, 1]")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be a finite value >= 0"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("train.beta", "must be a finite value >= 0"));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::config("train.grad_clip", "must be positive"));
        }
        self.policy.validate()
    }
}

/// Mix integers into one RNG seed (splitmix64 finalizer per part).
pub fn stream_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

pub(crate) const EVAL_STREAM: u64 = 0xE7A1;
const TRAIN_STREAM: u64 = 0x7A11;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub source: NodeId,
    pub relation: RelationId,
    /// Terminals that earn the positive reward.
    pub answers: BTreeSet<NodeId>,
    /// Every known target of `(source, relation)`; direct edges to these are masked.
    pub known: BTreeSet<NodeId>,
    /// The answer being ranked, for evaluation queries.
    pub target: Option<NodeId>,
}

fn known_targets(splits: &SplitSet) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut out: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for t in splits.all() {
        out.entry(t.head).or_default().insert(t.tail);
    }
    out
}

/// One query per training triple; answers are all training targets of the source.
pub fn training_queries(splits: &SplitSet) -> Vec<Query> {
    let known = known_targets(splits);
    let mut train: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for t in &splits.train {
        train.entry(t.head).or_default().insert(t.tail);
    }
    splits
        .train
        .iter()
        .map(|t| Query {
            source: t.head,
            relation: t.relation,
            answers: train[&t.head].clone(),
            known: known[&t.head].clone(),
            target: None,
        })
        .collect()
}

/// One query per held-out triple; the triple's tail is the only answer.
pub fn evaluation_queries(splits: &SplitSet, triples: &[Triple]) -> Vec<Query> {
    let known = known_targets(splits);
    triples
        .iter()
        .map(|t| {
            let mut k = known.get(&t.head).cloned().unwrap_or_default();
            k.insert(t.tail);
            Query {
                source: t.head,
                relation: t.relation,
                answers: [t.tail].into(),
                known: k,
                target: Some(t.tail),
            }
        })
        .collect()
}

/// The graph a walker moves on: everything except the held-out triples.
pub fn walk_graph(kg: &KnowledgeGraph, splits: &SplitSet) -> KnowledgeGraph {
    kg.without_triples(&splits.held_out())
}

/// Available moves at `node` for `query`: NO_OP first, then unmasked out-edges,
/// subsampled uniformly to `max_branching` when there are more.
pub fn candidate_actions(
    kg: &KnowledgeGraph,
    query: &Query,
    node: NodeId,
    max_branching: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Action> {
    let inverse_query = kg.schema().inverse_of(query.relation);
    let mut edges: Vec<Action> = kg
        .neighbors(node)
        .iter()
        .filter(|(rel, to)| !is_masked(query, inverse_query, node, *rel, *to))
        .map(|(rel, to)| Action::edge(*rel, *to))
        .collect();
    if edges.len() > max_branching {
        let mut keep = rand::seq::index::sample(rng, edges.len(), max_branching).into_vec();
        keep.sort_unstable();
        edges = keep.into_iter().map(|i| edges[i]).collect();
    }
    let mut out = Vec::with_capacity(edges.len() + 1);
    out.push(Action::no_op(node));
    out.extend(edges);
    out
}

fn is_masked(query: &Query, inverse_query: Option<RelationId>, from: NodeId, rel: RelationId, to: NodeId) -> bool {
    (from == query.source && rel == query.relation && query.known.contains(&to))
        || (Some(rel) == inverse_query && to == query.source && query.known.contains(&from))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: usize,
    pub source: NodeId,
    pub relation: RelationId,
    pub transitions: Vec<Action>,
    pub terminal: NodeId,
    /// NO_OP-stripped metapath.
    pub metapath: Vec<MetaStep>,
    pub rule: Option<RuleId>,
    pub success: bool,
    pub reward: f64,
    /// Sum of the log-probabilities of the taken actions.
    pub log_prob: f64,
    /// Decision record for the gradient; only kept during training.
    pub episode: Option<Episode>,
}

impl Trajectory {
    pub fn probability(&self) -> f64 {
        self.log_prob.exp()
    }
}

/// The rule for `relation` whose body equals `metapath`, if any.
pub fn match_rule(rules: &RuleSet, relation: RelationId, metapath: &[MetaStep]) -> Option<RuleId> {
    rules
        .match_steps(metapath)
        .filter(|id| rules.get(*id).is_some_and(|r| r.head.relation == relation))
}

/// Positive reward plus `λ · w(rule)` at a true answer, negative reward otherwise.
pub fn compute_reward(traj: &Trajectory, weights: &WeightTable, config: &TrainConfig) -> f64 {
    if !traj.success {
        return config.negative_reward;
    }
    let rule_term = traj
        .rule
        .and_then(|id| weights.get(id))
        .map_or(0.0, |w| config.rule_reward_ratio * w);
    config.positive_reward + rule_term
}

fn sample_index(probs: &[f32], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += *p as f64;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Sample one walk of exactly `path_length` transitions.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    params: &Params,
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    query_index: usize,
    query: &Query,
    path_length: usize,
    rng: &mut ChaCha8Rng,
    record: bool,
) -> Trajectory {
    let max_branching = params.config.max_branching;
    let mut state = AgentState::initial(params, query.source, query.relation, path_length);
    let mut transitions = Vec::with_capacity(path_length);
    let mut decisions = Vec::with_capacity(if record { path_length } else { 0 });
    let mut log_prob = 0.0f64;
    for step in 0..path_length {
        let actions = candidate_actions(kg, query, state.current, max_branching, rng);
        let mask = vec![false; actions.len()];
        let dist = score_actions(params, &state, &actions, &mask);
        let chosen = sample_index(&dist.probs, rng);
        let taken = actions[chosen];
        log_prob += dist.log_probs[chosen] as f64;
        transitions.push(taken);
        if step + 1 < path_length {
            state = step_history(params, &state, &taken).expect("step within path length");
        }
        state.current = taken.target;
        if record {
            decisions.push(Decision { actions, mask, chosen });
        }
    }
    let terminal = transitions.last().map_or(query.source, |a| a.target);
    let metapath: Vec<MetaStep> = transitions
        .iter()
        .filter_map(|a| a.relation)
        .map(|r| MetaStep::of(kg.schema(), r))
        .collect();
    let rule = match_rule(rules, query.relation, &metapath);
    Trajectory {
        query: query_index,
        source: query.source,
        relation: query.relation,
        transitions,
        terminal,
        metapath,
        rule,
        success: query.answers.contains(&terminal),
        reward: 0.0,
        log_prob,
        episode: record.then_some(Episode {
            source: query.source,
            query_relation: query.relation,
            decisions,
        }),
    }
}

/// `rollouts` walks per query, each on its own RNG stream derived from
/// `(seed, stream, query index, rollout index)`. Output is query-major.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch(
    params: &Params,
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    queries: &[(usize, &Query)],
    rollouts: usize,
    path_length: usize,
    stream: &[u64],
    record: bool,
    exec: Execution,
) -> Vec<Trajectory> {
    exec.map_range(queries.len() * rollouts, |i| {
        let (qi, q) = queries[i / rollouts];
        let mut parts = stream.to_vec();
        parts.push(qi as u64);
        parts.push((i % rollouts) as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&parts));
        rollout(params, kg, rules, qi, q, path_length, &mut rng, record)
    })
}

/// Exponential moving average of batch-mean rewards, starting at 0.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Baseline { value: 0.0, decay }
    }

    pub fn update(&mut self, batch_mean: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * batch_mean;
    }
}

/// Stops after `patience` consecutive evaluations without strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_index: usize,
    stale: usize,
    seen: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_index: 0,
            stale: 0,
            seen: 0,
        }
    }

    pub fn observe(&mut self, value: f64) -> StopDecision {
        self.seen += 1;
        let improved = self.best.is_none_or(|b| value > b);
        if improved {
            self.best = Some(value);
            self.best_index = self.seen;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based index of the best evaluation.
    pub fn best_index(&self) -> usize {
        self.best_index
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub rule_match_rate: f64,
    pub baseline: f64,
    pub valid: MetricsReport,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation MRR.
    pub params: Params,
    pub best_epoch: usize,
    /// Rule weights at the best validation MRR.
    pub best_weights: WeightTable,
    /// Rule weights after the last epoch.
    pub weights: WeightTable,
    pub history: Vec<EpochLog>,
    /// `(epoch, weights)` snapshots; epoch 0 is the initial table.
    pub weight_history: Vec<(usize, WeightTable)>,
    /// Successful trajectories of the last epoch.
    pub successes: Vec<Trajectory>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// `epoch,rule_id,weight` with a header row.
    pub fn write_weight_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,rule_id,weight")?;
        for (epoch, table) in &self.weight_history {
            table.write_csv_rows(*epoch, &mut out)?;
        }
        Ok(())
    }

    pub fn write_trajectories<W: Write>(&self, kg: &KnowledgeGraph, out: W) -> std::io::Result<()> {
        write_trajectory_log(kg, &self.successes, out)
    }
}

/// One line per trajectory: source, query relation, transitions, signature, rule, reward.
pub fn write_trajectory_log<W: Write>(kg: &KnowledgeGraph, trajs: &[Trajectory], mut out: W) -> std::io::Result<()> {
    for t in trajs {
        let steps: Vec<String> = t
            .transitions
            .iter()
            .map(|a| match a.relation {
                Some(r) => format!("{}:{}", kg.relation_label(r), kg.node_label(a.target)),
                None => format!("NO_OP:{}", kg.node_label(a.target)),
            })
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            kg.node_label(t.source),
            kg.relation_label(t.relation),
            steps.join(" "),
            signature(kg.schema(), &t.metapath),
            t.rule.map_or("-".to_string(), |r| r.to_string()),
            t.reward
        )?;
    }
    Ok(())
}

/// Train a policy and rule weights; validation is run once per epoch.
pub fn train(
    kg: &KnowledgeGraph,
    splits: &SplitSet,
    rules: &RuleSet,
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    train_with(kg, splits, rules, config, exec, |_| {})
}

/// [`train`] with a callback after every epoch, for progress reporting.
pub fn train_with(
    kg: &KnowledgeGraph,
    splits: &SplitSet,
    rules: &RuleSet,
    config: &TrainConfig,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let graph = walk_graph(kg, splits);
    let queries = training_queries(splits);
    if queries.is_empty() {
        return Err(Error::Graph("no training triples for the query relation".into()));
    }
    let valid_queries = evaluation_queries(splits, &splits.valid);
    let mut params: Params = PolicyParams::init(
        config.policy,
        graph.num_nodes(),
        graph.schema().num_relations(),
        stream_seed(&[config.seed, 0x1417]),
    );
    let mut opt = Adam::new(&params, config.learning_rate);
    let mut weights = WeightTable::new(rules, config.alpha)?;
    let mut weight_history = vec![(0, weights.clone())];
    let mut baseline = Baseline::new(config.baseline_decay);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = (params.clone(), weights.clone(), 0usize);
    let mut history = Vec::new();
    let mut successes = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(&[config.seed, TRAIN_STREAM, epoch as u64])));
        let (mut loss_sum, mut reward_sum, mut n_traj, mut n_success, mut n_rule) = (0.0, 0.0, 0usize, 0usize, 0usize);
        let mut grad_norm = 0.0;
        successes.clear();
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_queries: Vec<(usize, &Query)> = batch.iter().map(|&i| (i, &queries[i])).collect();
            let mut trajs = rollout_batch(
                &params,
                &graph,
                rules,
                &batch_queries,
                config.rollouts,
                config.path_length,
                &[config.seed, TRAIN_STREAM, epoch as u64, bi as u64],
                true,
                exec,
            );
            for t in &mut trajs {
                t.reward = compute_reward(t, &weights, config);
            }
            let mean_reward = trajs.iter().map(|t| t.reward).sum::<f64>() / trajs.len() as f64;
            let b = baseline.value;
            let advantages: Vec<(&Episode, Vec<f32>)> = trajs
                .iter()
                .map(|t| {
                    let l = config.path_length;
                    let adv = (0..l)
                        .map(|k| (config.gamma.powi((l - 1 - k) as i32) * t.reward - b) as f32)
                        .collect();
                    (t.episode.as_ref().expect("recorded"), adv)
                })
                .collect();
            let batch_grad = policy_gradients_stepwise(&params, &advantages, config.beta as f32, exec).map_err(|e| {
                Error::NonFinite(format!(
                    "{e} at epoch {epoch}, batch {bi} (mean reward {mean_reward}, baseline {b})"
                ))
            })?;
            let mut grads = batch_grad.grads;
            grads.scale(1.0 / trajs.len() as f32);
            grad_norm = clip_global_norm(&mut grads, config.grad_clip);
            opt.update(&mut params, &grads);
            if !params.is_finite() {
                return Err(Error::NonFinite(format!("parameters after epoch {epoch}, batch {bi}")));
            }
            baseline.update(mean_reward);

            let ok: Vec<&Trajectory> = trajs.iter().filter(|t| t.success).collect();
            match config.update_mode {
                UpdateMode::None => {}
                UpdateMode::Naive => {
                    let matched: Vec<Option<RuleId>> = ok.iter().map(|t| t.rule).collect();
                    naive_batch_update(&mut weights, rules, &matched, config.batch_size, config.rollouts);
                }
                UpdateMode::P2h => {
                    let paths: Vec<&[MetaStep]> = ok.iter().map(|t| t.metapath.as_slice()).collect();
                    p2h_batch_update(
                        &mut weights,
                        rules,
                        &paths,
                        config.batch_size,
                        config.rollouts,
                        config.fragment_scale,
                    );
                }
            }
            loss_sum += batch_grad.loss as f64;
            reward_sum += trajs.iter().map(|t| t.reward).sum::<f64>();
            n_traj += trajs.len();
            n_success += ok.len();
            n_rule += ok.iter().filter(|t| t.rule.is_some()).count();
            for mut t in trajs.into_iter().filter(|t| t.success) {
                t.episode = None;
                successes.push(t);
            }
        }
        weight_history.push((epoch, weights.clone()));

        let preds = evalkit::rank_queries(
            &params,
            &graph,
            rules,
            &valid_queries,
            config.test_rollouts,
            config.path_length,
            config.filtered,
            config.seed,
            exec,
        );
        let valid = evalkit::compute_metrics(&preds);
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / n_traj as f64,
            mean_reward: reward_sum / n_traj as f64,
            success_rate: n_success as f64 / n_traj as f64,
            rule_match_rate: if n_success == 0 { 0.0 } else { n_rule as f64 / n_success as f64 },
            baseline: baseline.value,
            valid,
            grad_norm,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} reward {:.3} success {:.3} valid MRR {:.4}",
            log.mean_loss,
            log.mean_reward,
            log.success_rate,
            log.valid.mrr
        );
        on_epoch(&log);
        let decision = stopper.observe(log.valid.mrr);
        history.push(log);
        if decision.improved {
            best = (params.clone(), weights.clone(), epoch);
        }
        if decision.stop {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    let (best_params, best_weights, best_epoch) = best;
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        best_weights,
        weights,
        history,
        weight_history,
        successes,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::moa_schema;
    use crate::kg::{split_triples, GraphBuilder, SplitRatios};
    use crate::rules::{Metapath, MetapathRule, RuleHead};

    fn tiny_policy() -> PolicyConfig {
        PolicyConfig {
            embedding_size: 4,
            hidden_size: 4,
            lstm_layers: 1,
            max_branching: 3,
        }
    }

    fn query(source: NodeId, rel: RelationId, answers: &[NodeId]) -> Query {
        Query {
            source,
            relation: rel,
            answers: answers.iter().copied().collect(),
            known: answers.iter().copied().collect(),
            target: None,
        }
    }

    fn small_graph() -> KnowledgeGraph {
        let mut b = GraphBuilder::new(moa_schema());
        b.add("d1", "upregulates", "p1").unwrap();
        b.add("p1", "interacts", "p2").unwrap();
        b.add("p2", "participates", "b1").unwrap();
        b.add("d1", "induces", "b1").unwrap();
        b.add("d2", "induces", "b1").unwrap();
        b.build().unwrap()
    }

    #[test]
    fn walks_have_exact_length_and_respect_mask() {
        let kg = small_graph().add_inverse_edges().unwrap();
        let induces = kg.schema().relation_id("induces").unwrap();
        let inv = kg.schema().inverse_of(induces).unwrap();
        let d1 = kg.node_id("d1").unwrap();
        let b1 = kg.node_id("b1").unwrap();
        let q = query(d1, induces, &[b1]);
        let p: Params = PolicyParams::init(tiny_policy(), kg.num_nodes(), kg.schema().num_relations(), 3);
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rollout(&p, &kg, &RuleSet::empty(), 0, &q, 4, &mut rng, true);
            assert_eq!(t.transitions.len(), 4);
            assert_eq!(t.terminal, t.transitions[3].target);
            let mut at = d1;
            for a in &t.transitions {
                if let Some(r) = a.relation {
                    assert!(!(at == d1 && r == induces && a.target == b1));
                    assert!(!(at == b1 && r == inv && a.target == d1));
                    assert!(kg.contains(&Triple::new(at, r, a.target)));
                }
                at = a.target;
            }
        }
    }

    #[test]
    fn dead_end_takes_no_op_and_query_edge_unreachable() {
        let mut b = GraphBuilder::new(moa_schema());
        b.add("d1", "induces", "b1").unwrap();
        let kg = b.build().unwrap();
        let d1 = kg.node_id("d1").unwrap();
        let b1 = kg.node_id("b1").unwrap();
        let q = query(d1, RelationId(4), &[b1]);
        let p: Params = PolicyParams::init(tiny_policy(), kg.num_nodes(), kg.schema().num_relations(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rollout(&p, &kg, &RuleSet::empty(), 0, &q, 4, &mut rng, false);
        assert!(t.transitions.iter().all(|a| a.is_no_op()));
        assert_ne!(t.terminal, b1);
        assert!(!t.success);
    }

    #[test]
    fn branching_cap_subsamples() {
        let mut b = GraphBuilder::new(moa_schema());
        for i in 0..10 {
            b.add("d1", "upregulates", &format!("p{i}")).unwrap();
        }
        let kg = b.build().unwrap();
        let d1 = kg.node_id("d1").unwrap();
        let q = query(d1, RelationId(4), &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = candidate_actions(&kg, &q, d1, 3, &mut rng);
        assert_eq!(c.len(), 4);
        assert!(c[0].is_no_op());
        let c2 = candidate_actions(&kg, &q, d1, 30, &mut rng);
        assert_eq!(c2.len(), 11);
    }

    fn traj(success: bool, rule: Option<RuleId>) -> Trajectory {
        Trajectory {
            query: 0,
            source: NodeId(0),
            relation: RelationId(4),
            transitions: vec![],
            terminal: NodeId(0),
            metapath: vec![],
            rule,
            success,
            reward: 0.0,
            log_prob: 0.0,
            episode: None,
        }
    }

    #[test]
    fn reward_examples() {
        let s = moa_schema();
        let body = Metapath::from_relations(&s, &[RelationId(3), RelationId(0), RelationId(1)]).unwrap();
        let rules = RuleSet::new(vec![MetapathRule {
            id: RuleId(0),
            head: RuleHead {
                relation: RelationId(4),
                src_type: body.src_type(),
                dst_type: body.dst_type(),
            },
            body,
            weight: 0.5,
        }])
        .unwrap();
        let w = WeightTable::new(&rules, 0.0).unwrap();
        let cfg = TrainConfig {
            rule_reward_ratio: 10.0,
            ..TrainConfig::default()
        };
        assert_eq!(compute_reward(&traj(false, Some(RuleId(0))), &w, &cfg), 0.0);
        assert_eq!(compute_reward(&traj(true, None), &w, &cfg), 1.0);
        assert_eq!(compute_reward(&traj(true, Some(RuleId(0))), &w, &cfg), 6.0);
    }

    #[test]
    fn early_stopping_contract() {
        let mut s = EarlyStopping::new(3);
        let d: Vec<StopDecision> = [0.2, 0.2, 0.2, 0.2].iter().map(|v| s.observe(*v)).collect();
        assert!(d[0].improved && !d[0].stop);
        assert!(!d[1].stop && !d[2].stop);
        assert!(d[3].stop);
        assert_eq!(s.best_index(), 1);
    }

    #[test]
    fn baseline_tracks_within_range() {
        let mut b = Baseline::new(0.3);
        for m in [1.0, 3.0, 2.0, 2.5] {
            b.update(m);
        }
        assert!(b.value > 0.0 && b.value <= 3.0);
    }

    #[test]
    fn training_is_deterministic_and_alpha_zero_keeps_weights() {
        let mut b = GraphBuilder::new(moa_schema());
        for i in 0..8 {
            b.add(&format!("d{i}"), "upregulates", &format!("p{i}")).unwrap();
            b.add(&format!("p{i}"), "participates", &format!("b{}", i % 3)).unwrap();
            b.add(&format!("d{i}"), "induces", &format!("b{}", i % 3)).unwrap();
        }
        let kg = b.build().unwrap();
        let rel = kg.schema().relation_id("induces").unwrap();
        let splits = split_triples(&kg, rel, SplitRatios::default(), 1).unwrap();
        let s = kg.schema();
        let body = Metapath::from_relations(s, &[RelationId(3), RelationId(1)]).unwrap();
        let rules = RuleSet::new(vec![MetapathRule {
            id: RuleId(0),
            head: RuleHead {
                relation: rel,
                src_type: body.src_type(),
                dst_type: body.dst_type(),
            },
            body,
            weight: 0.5,
        }])
        .unwrap();
        let cfg = TrainConfig {
            alpha: 0.0,
            batch_size: 2,
            rollouts: 3,
            test_rollouts: 4,
            max_epochs: 3,
            learning_rate: 1e-2,
            policy: tiny_policy(),
            ..TrainConfig::default()
        };
        let a = train(&kg, &splits, &rules, &cfg, Execution::Parallel).unwrap();
        let b = train(&kg, &splits, &rules, &cfg, Execution::Sequential).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert!(a.weights.iter().all(|(_, w)| w == 0.5));
        assert_eq!(a.weight_history.len(), 4);
    }
}
