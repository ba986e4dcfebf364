//! Test-time ranking, Hits@k / MRR (standard and rule-pruned), trajectory
//! histograms and the degree-weighted path count baseline.

mod dwpc;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{KnowledgeGraph, NodeId, RelationId, Schema};
use crate::par::Execution;
use crate::rules::{signature, RuleId, RuleSet};
use crate::walker::{rollout, stream_seed, Params, Query, Trajectory, EVAL_STREAM};

pub use dwpc::{dwpc, dwpc_from, dwpc_predictions, dwpc_rank, path_weight, PairScore};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity: NodeId,
    /// Sum of the probabilities of the walks ending here.
    pub score: f64,
    /// Number of walks ending here.
    pub count: usize,
    /// Smallest id of a rule matched by some walk ending here.
    pub rule: Option<RuleId>,
}

impl Candidate {
    pub fn rule_satisfied(&self) -> bool {
        self.rule.is_some()
    }
}

/// Score descending, then walk count descending, then entity id ascending.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.count.cmp(&a.count))
        .then(a.entity.cmp(&b.entity))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub source: NodeId,
    pub relation: RelationId,
    pub target: NodeId,
    /// Ranked candidates after filtering, best first.
    pub candidates: Vec<Candidate>,
    /// 1-based rank of `target`; `None` when it was never reached.
    pub rank: Option<usize>,
}

impl RankedPrediction {
    /// Rank candidates and locate the target. `exclude` removes other known answers.
    pub fn new(
        source: NodeId,
        relation: RelationId,
        target: NodeId,
        mut candidates: Vec<Candidate>,
        exclude: impl Fn(NodeId) -> bool,
    ) -> Self {
        candidates.retain(|c| c.entity == target || !exclude(c.entity));
        candidates.sort_by(candidate_order);
        let rank = candidates.iter().position(|c| c.entity == target).map(|i| i + 1);
        RankedPrediction {
            source,
            relation,
            target,
            candidates,
            rank,
        }
    }

    pub fn target_candidate(&self) -> Option<&Candidate> {
        self.rank.map(|r| &self.candidates[r - 1])
    }

    /// The same prediction restricted to rule-satisfying candidates and re-ranked.
    pub fn pruned(&self) -> RankedPrediction {
        let kept: Vec<Candidate> = self.candidates.iter().filter(|c| c.rule_satisfied()).copied().collect();
        let rank = kept.iter().position(|c| c.entity == self.target).map(|i| i + 1);
        RankedPrediction {
            source: self.source,
            relation: self.relation,
            target: self.target,
            candidates: kept,
            rank,
        }
    }
}

/// Rank every evaluation query from `test_rollouts` sampled walks.
///
/// Walks use the same masking as training. Every terminal entity is a
/// candidate; in filtered mode other known answers are removed before ranking.
#[allow(clippy::too_many_arguments)]
pub fn rank_queries(
    params: &Params,
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    queries: &[Query],
    test_rollouts: usize,
    path_length: usize,
    filtered: bool,
    seed: u64,
    exec: Execution,
) -> Vec<RankedPrediction> {
    let indexed: Vec<(usize, &Query)> = queries.iter().enumerate().collect();
    exec.map(&indexed, |&(qi, q)| {
        let trajs: Vec<Trajectory> = (0..test_rollouts)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, EVAL_STREAM, qi as u64, r as u64]));
                rollout(params, kg, rules, qi, q, path_length, &mut rng, false)
            })
            .collect();
        rank_from_trajectories(q, &trajs, filtered)
    })
}

/// Aggregate walks of one query into a ranked prediction.
pub fn rank_from_trajectories(
    query: &Query,
    trajs: &[Trajectory],
    filtered: bool,
) -> RankedPrediction {
    let target = query.target.expect("evaluation query has a target");
    let mut agg: BTreeMap<NodeId, Candidate> = BTreeMap::new();
    for t in trajs {
        let c = agg.entry(t.terminal).or_insert(Candidate {
            entity: t.terminal,
            score: 0.0,
            count: 0,
            rule: None,
        });
        c.score += t.probability();
        c.count += 1;
        c.rule = match (c.rule, t.rule) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
    RankedPrediction::new(
        query.source,
        query.relation,
        target,
        agg.into_values().collect(),
        |e| filtered && query.known.contains(&e),
    )
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Standard,
    Pruned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: MetricKind,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    pub mrr: f64,
    /// Queries in the denominator.
    pub queries: usize,
    /// Queries whose evaluated answer was ranked at all.
    pub ranked: usize,
    /// Queries whose evaluated answer was reached by a rule-matching walk.
    pub rule_supported: usize,
}

/// Hits@k and MRR from 1-based ranks; `None` counts as a miss with reciprocal rank 0.
pub fn metrics_from_ranks(kind: MetricKind, ranks: &[Option<usize>]) -> MetricsReport {
    let n = ranks.len();
    let hits = |k: usize| {
        if n == 0 {
            0.0
        } else {
            ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / n as f64
        }
    };
    let mrr = if n == 0 {
        0.0
    } else {
        ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / n as f64
    };
    MetricsReport {
        kind,
        hits_at_1: hits(1),
        hits_at_3: hits(3),
        hits_at_10: hits(10),
        mrr,
        queries: n,
        ranked: ranks.iter().filter(|r| r.is_some()).count(),
        rule_supported: 0,
    }
}

fn supported(preds: &[RankedPrediction]) -> usize {
    preds
        .iter()
        .filter(|p| p.target_candidate().is_some_and(|c| c.rule_satisfied()))
        .count()
}

pub fn compute_metrics(preds: &[RankedPrediction]) -> MetricsReport {
    let ranks: Vec<Option<usize>> = preds.iter().map(|p| p.rank).collect();
    MetricsReport {
        rule_supported: supported(preds),
        ..metrics_from_ranks(MetricKind::Standard, &ranks)
    }
}

/// Metrics over rule-satisfying candidates only, re-ranked within that subset.
/// Queries whose answer is not rule-satisfying stay in the denominator.
pub fn pruned_metrics(preds: &[RankedPrediction]) -> MetricsReport {
    let ranks: Vec<Option<usize>> = preds.iter().map(|p| p.pruned().rank).collect();
    MetricsReport {
        rule_supported: supported(preds),
        ..metrics_from_ranks(MetricKind::Pruned, &ranks)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureCount {
    pub signature: String,
    pub count: usize,
    /// Uses at least one inverse relation.
    pub associative: bool,
    pub rule: Option<RuleId>,
}

/// Histogram of NO_OP-stripped metapath signatures, most frequent first.
pub fn classify_trajectories(schema: &Schema, trajs: &[Trajectory]) -> Vec<SignatureCount> {
    let mut by_sig: BTreeMap<String, SignatureCount> = BTreeMap::new();
    for t in trajs {
        let sig = signature(schema, &t.metapath);
        let e = by_sig.entry(sig.clone()).or_insert_with(|| SignatureCount {
            signature: sig,
            count: 0,
            associative: t.metapath.iter().any(|s| schema.relation(s.relation).is_inverse),
            rule: t.rule,
        });
        e.count += 1;
    }
    let mut out: Vec<SignatureCount> = by_sig.into_values().collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.signature.cmp(&b.signature)));
    out
}

/// `source relation target candidate score rank rule_satisfied rule_id`, one row per candidate.
pub fn write_predictions<W: Write>(kg: &KnowledgeGraph, preds: &[RankedPrediction], mut out: W) -> std::io::Result<()> {
    writeln!(out, "source\trelation\ttarget\tcandidate\tscore\trank\trule_satisfied\trule_id")?;
    for p in preds {
        for (i, c) in p.candidates.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                kg.node_label(p.source),
                kg.relation_label(p.relation),
                kg.node_label(p.target),
                kg.node_label(c.entity),
                c.score,
                i + 1,
                c.rule_satisfied(),
                c.rule.map_or("-".to_string(), |r| r.to_string())
            )?;
        }
        if p.rank.is_none() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t0\t-\tfalse\t-",
                kg.node_label(p.source),
                kg.relation_label(p.relation),
                kg.node_label(p.target),
                kg.node_label(p.target)
            )?;
        }
    }
    Ok(())
}
