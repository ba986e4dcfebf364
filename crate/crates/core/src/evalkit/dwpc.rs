//! Degree-weighted path count.
//!
//! For a metapath, every simple path (no repeated node) conforming to it gets
//! weight `Π_steps (out_deg(u, r) · in_deg(v, r))^(−damping)`; the DWPC of a
//! pair is the sum over paths, and a pair's score sums over metapaths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Candidate, RankedPrediction};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NodeId};
use crate::par::Execution;
use crate::rules::Metapath;
use crate::walker::Query;

/// Weight of one path from its per-step `(out degree, in degree)` pairs.
pub fn path_weight(degrees: &[(u32, u32)], damping: f64) -> f64 {
    degrees
        .iter()
        .map(|&(o, i)| ((o as f64) * (i as f64)).powf(-damping))
        .product()
}

/// DWPC from `source` to every node reachable along `metapath`.
pub fn dwpc_from(kg: &KnowledgeGraph, source: NodeId, metapath: &Metapath, damping: f64) -> BTreeMap<NodeId, f64> {
    let mut out = BTreeMap::new();
    if kg.node(source).node_type != metapath.src_type() {
        return out;
    }
    let mut visited = vec![source];
    let mut degrees = Vec::with_capacity(metapath.len());
    walk(kg, metapath, damping, source, &mut visited, &mut degrees, &mut out);
    out
}

fn walk(
    kg: &KnowledgeGraph,
    metapath: &Metapath,
    damping: f64,
    at: NodeId,
    visited: &mut Vec<NodeId>,
    degrees: &mut Vec<(u32, u32)>,
    out: &mut BTreeMap<NodeId, f64>,
) {
    let depth = degrees.len();
    if depth == metapath.len() {
        *out.entry(at).or_insert(0.0) += path_weight(degrees, damping);
        return;
    }
    let rel = metapath.steps()[depth].relation;
    for &(r, next) in kg.neighbors(at) {
        if r != rel || visited.contains(&next) {
            continue;
        }
        degrees.push((kg.out_degree(at, rel), kg.in_degree(next, rel)));
        visited.push(next);
        walk(kg, metapath, damping, next, visited, degrees, out);
        visited.pop();
        degrees.pop();
    }
}

fn check_types(kg: &KnowledgeGraph, source: NodeId, target: NodeId, metapath: &Metapath) -> Result<()> {
    let s = kg.node(source).node_type;
    let t = kg.node(target).node_type;
    if s != metapath.src_type() || t != metapath.dst_type() {
        return Err(Error::IncompatibleMetapath {
            metapath: metapath.display(kg.schema()).to_string(),
            source_type: kg.schema().node_type_name(s).to_string(),
            target_type: kg.schema().node_type_name(t).to_string(),
        });
    }
    Ok(())
}

/// DWPC of one pair under one metapath.
pub fn dwpc(kg: &KnowledgeGraph, source: NodeId, target: NodeId, metapath: &Metapath, damping: f64) -> Result<f64> {
    check_types(kg, source, target, metapath)?;
    Ok(dwpc_from(kg, source, metapath, damping)
        .get(&target)
        .copied()
        .unwrap_or(0.0))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub source: NodeId,
    pub target: NodeId,
    pub score: f64,
}

fn check_damping(damping: f64) -> Result<()> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::config("dwpc.damping", "must be a finite value >= 0"));
    }
    Ok(())
}

/// Score pairs by summed DWPC over metapaths; highest first, ties by `(source, target)`.
pub fn dwpc_rank(
    kg: &KnowledgeGraph,
    pairs: &[(NodeId, NodeId)],
    metapaths: &[Metapath],
    damping: f64,
    exec: Execution,
) -> Result<Vec<PairScore>> {
    check_damping(damping)?;
    for &(s, t) in pairs {
        for m in metapaths {
            check_types(kg, s, t, m)?;
        }
    }
    let mut scores = exec.map(pairs, |&(s, t)| PairScore {
        source: s,
        target: t,
        score: metapaths
            .iter()
            .map(|m| dwpc_from(kg, s, m, damping).get(&t).copied().unwrap_or(0.0))
            .sum(),
    });
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.source.cmp(&b.source))
            .then(a.target.cmp(&b.target))
    });
    Ok(scores)
}

/// Rank evaluation queries by DWPC; targets with zero score count as unreached.
pub fn dwpc_predictions(
    kg: &KnowledgeGraph,
    queries: &[Query],
    metapaths: &[Metapath],
    damping: f64,
    filtered: bool,
    exec: Execution,
) -> Result<Vec<RankedPrediction>> {
    check_damping(damping)?;
    for q in queries {
        let target = q.target.ok_or_else(|| Error::Graph("evaluation query without a target".into()))?;
        for m in metapaths {
            check_types(kg, q.source, target, m)?;
        }
    }
    Ok(exec.map(queries, |q| {
        let mut total: BTreeMap<NodeId, f64> = BTreeMap::new();
        for m in metapaths {
            for (n, v) in dwpc_from(kg, q.source, m, damping) {
                *total.entry(n).or_insert(0.0) += v;
            }
        }
        let cands = total
            .into_iter()
            .filter(|(_, v)| *v > 0.0)
            .map(|(entity, score)| Candidate {
                entity,
                score,
                count: 1,
                rule: None,
            })
            .collect();
        RankedPrediction::new(q.source, q.relation, q.target.expect("checked"), cands, |e| {
            filtered && q.known.contains(&e)
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::moa_schema;
    use crate::kg::GraphBuilder;

    fn toy() -> KnowledgeGraph {
        // d1 -up-> p1, d1 -up-> p2, p1 -part-> b1, p2 -part-> b1, p2 -part-> b2, d2 -up-> p2
        let mut b = GraphBuilder::new(moa_schema());
        for (h, r, t) in [
            ("d1", "upregulates", "p1"),
            ("d1", "upregulates", "p2"),
            ("p1", "participates", "b1"),
            ("p2", "participates", "b1"),
            ("p2", "participates", "b2"),
            ("d2", "upregulates", "p2"),
        ] {
            b.add(h, r, t).unwrap();
        }
        b.build().unwrap()
    }

    fn mp(kg: &KnowledgeGraph, rels: &[&str]) -> Metapath {
        let ids: Vec<_> = rels.iter().map(|r| kg.schema().relation_id(r).unwrap()).collect();
        Metapath::from_relations(kg.schema(), &ids).unwrap()
    }

    #[test]
    fn hand_enumerated_oracle() {
        let kg = toy();
        let m = mp(&kg, &["upregulates", "participates"]);
        let n = |l: &str| kg.node_id(l).unwrap();
        let w = 0.4;
        // d1->p1->b1: up out(d1)=2, in(p1)=1; part out(p1)=1, in(b1)=2 => (2*1)^-w (1*2)^-w
        // d1->p2->b1: up out(d1)=2, in(p2)=2; part out(p2)=2, in(b1)=2 => (2*2)^-w (2*2)^-w
        let want = 2f64.powf(-w) * 2f64.powf(-w) + 4f64.powf(-w) * 4f64.powf(-w);
        let got = dwpc(&kg, n("d1"), n("b1"), &m, w).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // d1->p2->b2: (2*2)^-w (2*1)^-w
        let want_b2 = 4f64.powf(-w) * 2f64.powf(-w);
        assert!((dwpc(&kg, n("d1"), n("b2"), &m, w).unwrap() - want_b2).abs() < 1e-12);
        // damping 0 counts paths.
        assert_eq!(dwpc(&kg, n("d1"), n("b1"), &m, 0.0).unwrap(), 2.0);
        // No conforming path.
        let m3 = mp(&kg, &["upregulates", "interacts", "participates"]);
        assert_eq!(dwpc(&kg, n("d1"), n("b1"), &m3, w).unwrap(), 0.0);
        let ranked = dwpc_rank(&kg, &[(n("d2"), n("b2")), (n("d1"), n("b1"))], &[m], w, Execution::Parallel).unwrap();
        assert_eq!(ranked[0].source, n("d1"));
    }

    #[test]
    fn unit_degrees_give_one() {
        let mut b = GraphBuilder::new(moa_schema());
        b.add("d", "upregulates", "p").unwrap();
        b.add("p", "participates", "b").unwrap();
        let kg = b.build().unwrap();
        let m = mp(&kg, &["upregulates", "participates"]);
        for w in [0.0, 0.4, 3.0] {
            assert_eq!(
                dwpc(&kg, kg.node_id("d").unwrap(), kg.node_id("b").unwrap(), &m, w).unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn type_mismatch_is_an_error() {
        let kg = toy();
        let m = mp(&kg, &["upregulates", "participates"]);
        let p1 = kg.node_id("p1").unwrap();
        let b1 = kg.node_id("b1").unwrap();
        assert!(matches!(
            dwpc(&kg, p1, b1, &m, 0.4),
            Err(Error::IncompatibleMetapath { .. })
        ));
    }

    #[test]
    fn simple_paths_only() {
        let mut b = GraphBuilder::new(moa_schema());
        b.add("d", "upregulates", "p1").unwrap();
        b.add("p1", "interacts", "p2").unwrap();
        b.add("p2", "interacts", "p1").unwrap();
        b.add("p1", "participates", "b").unwrap();
        let kg = b.build().unwrap();
        // up>int>int>part would need d,p1,p2,p1,b which repeats p1.
        let m = mp(&kg, &["upregulates", "interacts", "interacts", "participates"]);
        assert_eq!(
            dwpc(&kg, kg.node_id("d").unwrap(), kg.node_id("b").unwrap(), &m, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn monotone_in_degree() {
        let w = 0.4;
        let base = path_weight(&[(2, 1), (1, 2)], w);
        assert!(path_weight(&[(3, 1), (1, 2)], w) <= base);
        assert!(path_weight(&[(2, 1), (1, 5)], w) <= base);
    }
}
