//! Graph surgery: degree-preserving edge swaps, degree-targeted trimming and
//! relation stripping.
//!
//! Graphs carrying inverse edges are handled by stripping the inverses,
//! operating on forward edges and adding the inverses back, so a forward edge
//! and its inverse always move or disappear together.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NodeId, RelationId, RelationRef, Triple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub relations: Vec<String>,
    pub attempts_factor: f64,
    pub seed: u64,
    pub attempts: u64,
    pub accepted: u64,
    /// SHA-256 over every node's per-relation (out, in) degrees.
    pub degree_checksum_before: String,
    pub degree_checksum_after: String,
    /// |E ∩ E'| / |E ∪ E'| over the permuted relations' edges.
    pub jaccard: f64,
}

impl PermutationReport {
    pub fn degrees_preserved(&self) -> bool {
        self.degree_checksum_before == self.degree_checksum_after
    }
}

/// Hex SHA-256 of all per-node per-relation out/in degrees.
pub fn degree_checksum(kg: &KnowledgeGraph) -> String {
    let mut h = Sha256::new();
    for n in 0..kg.num_nodes() {
        for r in 0..kg.schema().num_relations() {
            let (n, r) = (NodeId::from_index(n), RelationId::from_index(r));
            h.update(kg.out_degree(n, r).to_le_bytes());
            h.update(kg.in_degree(n, r).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn forward_only(kg: &KnowledgeGraph) -> (KnowledgeGraph, bool) {
    if kg.has_inverse_edges() {
        (strip_relations(kg, |r| r.is_inverse), true)
    } else {
        (kg.clone(), false)
    }
}

fn restore(kg: KnowledgeGraph, had_inverses: bool) -> Result<KnowledgeGraph> {
    if had_inverses {
        kg.add_inverse_edges()
    } else {
        Ok(kg)
    }
}

/// Forward relation for a possibly-inverse relation id.
fn forward_relation(kg: &KnowledgeGraph, rel: RelationId) -> RelationId {
    let r = kg.schema().relation(rel);
    if r.is_inverse {
        r.inverse_of.expect("inverse relation has a forward partner")
    } else {
        rel
    }
}

/// Randomise the edges of `relations` by repeated swaps `(a,b),(c,d) → (a,d),(c,b)`.
/// Swaps that would create a self-loop or a duplicate edge are rejected.
pub fn xswap_permute(
    kg: &KnowledgeGraph,
    relations: &[RelationId],
    attempts_factor: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, PermutationReport)> {
    if !(attempts_factor > 0.0 && attempts_factor.is_finite()) {
        return Err(Error::config("permute.attempts_factor", "must be positive"));
    }
    let (fwd, had_inverses) = forward_only(kg);
    let mut classes: Vec<RelationId> = relations.iter().map(|&r| forward_relation(kg, r)).collect();
    classes.sort_unstable();
    classes.dedup();
    for &r in &classes {
        if fwd.relation_count(r) == 0 {
            return Err(Error::RelationAbsent(kg.relation_label(r).to_string()));
        }
    }
    let before = degree_checksum(kg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: Vec<Triple> = fwd
        .triples()
        .iter()
        .filter(|t| !classes.contains(&t.relation))
        .copied()
        .collect();
    let (mut attempts, mut accepted) = (0u64, 0u64);
    let mut original: HashSet<Triple> = HashSet::new();
    let mut permuted: HashSet<Triple> = HashSet::new();
    for &r in &classes {
        let mut edges: Vec<(NodeId, NodeId)> = fwd.triples_of(r).map(|t| (t.head, t.tail)).collect();
        original.extend(edges.iter().map(|&(h, t)| Triple::new(h, r, t)));
        let mut present: HashSet<(NodeId, NodeId)> = edges.iter().copied().collect();
        let n_attempts = (attempts_factor * edges.len() as f64).round() as u64;
        attempts += n_attempts;
        if edges.len() >= 2 {
            for _ in 0..n_attempts {
                let i = rng.gen_range(0..edges.len());
                let j = rng.gen_range(0..edges.len());
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if i == j || a == c || b == d || a == d || c == b {
                    continue;
                }
                if present.contains(&(a, d)) || present.contains(&(c, b)) {
                    continue;
                }
                present.remove(&(a, b));
                present.remove(&(c, d));
                present.insert((a, d));
                present.insert((c, b));
                edges[i] = (a, d);
                edges[j] = (c, b);
                accepted += 1;
            }
        }
        permuted.extend(edges.iter().map(|&(h, t)| Triple::new(h, r, t)));
        kept.extend(edges.into_iter().map(|(h, t)| Triple::new(h, r, t)));
    }
    let out = restore(fwd.derive(kept)?, had_inverses)?;
    let inter = original.intersection(&permuted).count();
    let union = original.len() + permuted.len() - inter;
    let report = PermutationReport {
        relations: classes.iter().map(|&r| kg.relation_label(r).to_string()).collect(),
        attempts_factor,
        seed,
        attempts,
        accepted,
        degree_checksum_before: before,
        degree_checksum_after: degree_checksum(&out),
        jaccard: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
    };
    Ok((out, report))
}

/// Remove edges of `relation` one at a time, always the one whose endpoints
/// have the largest total degree (recomputed after each removal, ties to the
/// smallest `(head, tail)`), until at most `threshold` remain.
pub fn trim_by_degree(kg: &KnowledgeGraph, relation: RelationId, threshold: usize) -> Result<KnowledgeGraph> {
    let relation = forward_relation(kg, relation);
    let (fwd, had_inverses) = forward_only(kg);
    let count = fwd.relation_count(relation);
    if count <= threshold {
        return Ok(kg.clone());
    }
    let mut degree: Vec<usize> = (0..fwd.num_nodes()).map(|n| fwd.degree(NodeId::from_index(n))).collect();
    let edges: Vec<(NodeId, NodeId)> = fwd.triples_of(relation).map(|t| (t.head, t.tail)).collect();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); fwd.num_nodes()];
    for (i, &(h, t)) in edges.iter().enumerate() {
        incident[h.index()].push(i);
        if t != h {
            incident[t.index()].push(i);
        }
    }
    let key = |deg: &[usize], (h, t): (NodeId, NodeId)| (Reverse(deg[h.index()] + deg[t.index()]), h, t);
    let mut queue: BTreeSet<(Reverse<usize>, NodeId, NodeId)> = edges.iter().map(|&e| key(&degree, e)).collect();
    let mut alive = vec![true; edges.len()];
    let index_of: std::collections::HashMap<(NodeId, NodeId), usize> =
        edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut removed: HashSet<Triple> = HashSet::new();
    for _ in 0..count - threshold {
        let top = *queue.iter().next().expect("edges remain");
        queue.remove(&top);
        let (h, t) = (top.1, top.2);
        let i = index_of[&(h, t)];
        alive[i] = false;
        removed.insert(Triple::new(h, relation, t));
        let touched: BTreeSet<usize> = incident[h.index()]
            .iter()
            .chain(&incident[t.index()])
            .copied()
            .filter(|&j| alive[j])
            .collect();
        for &j in &touched {
            queue.remove(&key(&degree, edges[j]));
        }
        degree[h.index()] -= 1;
        degree[t.index()] -= 1;
        for &j in &touched {
            queue.insert(key(&degree, edges[j]));
        }
    }
    let triples = fwd.triples().iter().filter(|t| !removed.contains(t)).copied().collect();
    restore(fwd.derive(triples)?, had_inverses)
}

/// Drop every triple whose relation satisfies `filter`; the schema is kept.
pub fn strip_relations(kg: &KnowledgeGraph, filter: impl Fn(&RelationRef) -> bool) -> KnowledgeGraph {
    let triples = kg
        .triples()
        .iter()
        .filter(|t| !filter(kg.schema().relation(t.relation)))
        .copied()
        .collect();
    kg.derive(triples).expect("subset of a valid graph is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::moa_schema;
    use crate::kg::GraphBuilder;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_graph(seed: u64, n_edges: usize) -> KnowledgeGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = GraphBuilder::new(moa_schema());
        let rels = ["interacts", "participates", "upregulates", "downregulates"];
        let mut added = 0;
        while added < n_edges {
            let r = rels[rng.gen_range(0..rels.len())];
            let (h, t) = match r {
                "interacts" => (format!("p{}", rng.gen_range(0..60)), format!("p{}", rng.gen_range(0..60))),
                "participates" => (format!("p{}", rng.gen_range(0..60)), format!("b{}", rng.gen_range(0..15))),
                _ => (format!("d{}", rng.gen_range(0..30)), format!("p{}", rng.gen_range(0..60))),
            };
            if h == t || b.contains(&h, r, &t) {
                continue;
            }
            b.add(&h, r, &t).unwrap();
            added += 1;
        }
        b.build().unwrap()
    }

    fn degree_vectors(kg: &KnowledgeGraph) -> Vec<(u32, u32)> {
        let mut v = Vec::new();
        for n in 0..kg.num_nodes() {
            for r in 0..kg.schema().num_relations() {
                let (n, r) = (NodeId::from_index(n), RelationId::from_index(r));
                v.push((kg.out_degree(n, r), kg.in_degree(n, r)));
            }
        }
        v
    }

    #[test]
    fn swap_with_only_duplicate_outcomes_is_identity() {
        // (p1,p2),(p2,p1) can only swap into the self-loops (p1,p1),(p2,p2).
        let mut b = GraphBuilder::new(moa_schema());
        b.add("p1", "interacts", "p2").unwrap();
        b.add("p2", "interacts", "p1").unwrap();
        let kg = b.build().unwrap();
        let (out, rep) = xswap_permute(&kg, &[RelationId(0)], 10.0, 3).unwrap();
        assert_eq!(out.labeled_triples(), kg.labeled_triples());
        assert_eq!(rep.accepted, 0);
        assert_eq!(rep.attempts, 20);
        assert_eq!(rep.jaccard, 1.0);
    }

    #[test]
    fn thousand_edges_mix_well() {
        let mut b = GraphBuilder::new(moa_schema());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut n = 0;
        while n < 1000 {
            let h = format!("p{}", rng.gen_range(0..200));
            let t = format!("p{}", rng.gen_range(0..200));
            if h != t && !b.contains(&h, "interacts", &t) {
                b.add(&h, "interacts", &t).unwrap();
                n += 1;
            }
        }
        let kg = b.build().unwrap();
        let (out, rep) = xswap_permute(&kg, &[RelationId(0)], 10.0, 7).unwrap();
        assert!(rep.jaccard < 0.5, "{}", rep.jaccard);
        assert!(rep.degrees_preserved());
        assert_eq!(degree_vectors(&kg), degree_vectors(&out));
    }

    #[test]
    fn inverses_move_in_lockstep() {
        let kg = random_graph(4, 300).add_inverse_edges().unwrap();
        let (out, rep) = xswap_permute(&kg, &[RelationId(0), RelationId(1)], 5.0, 1).unwrap();
        assert!(rep.degrees_preserved());
        assert_eq!(out.num_triples(), kg.num_triples());
        for t in out.triples() {
            assert!(out.contains(&out.inverse_triple(t).unwrap()));
        }
        assert!(xswap_permute(&kg, &[RelationId(4)], 5.0, 1).is_err());
    }

    #[test]
    fn trim_star_graph() {
        let mut b = GraphBuilder::new(moa_schema());
        for i in 0..5 {
            b.add("hub", "interacts", &format!("s{i}")).unwrap();
        }
        b.add("x", "interacts", "y").unwrap();
        let kg = b.build().unwrap();
        let out = trim_by_degree(&kg, RelationId(0), 1).unwrap();
        assert_eq!(out.num_triples(), 1);
        assert!(out.contains(&Triple::new(
            kg.node_id("x").unwrap(),
            RelationId(0),
            kg.node_id("y").unwrap()
        )));
        assert_eq!(trim_by_degree(&kg, RelationId(0), 6).unwrap().labeled_triples(), kg.labeled_triples());
    }

    #[test]
    fn trim_tie_break_prefers_smallest_ids() {
        let mut b = GraphBuilder::new(moa_schema());
        b.add("a", "interacts", "b").unwrap();
        b.add("c", "interacts", "d").unwrap();
        let kg = b.build().unwrap();
        let out = trim_by_degree(&kg, RelationId(0), 1).unwrap();
        assert!(out.contains(&Triple::new(kg.node_id("c").unwrap(), RelationId(0), kg.node_id("d").unwrap())));
    }

    #[test]
    fn strip_examples() {
        let kg = random_graph(2, 100);
        let with_inv = kg.add_inverse_edges().unwrap();
        assert_eq!(strip_relations(&with_inv, |r| r.is_inverse).labeled_triples(), kg.labeled_triples());
        assert_eq!(strip_relations(&kg, |_| false).labeled_triples(), kg.labeled_triples());
        let empty = strip_relations(&kg, |_| true);
        assert_eq!(empty.num_triples(), 0);
        assert_eq!(empty.schema().num_relations(), kg.schema().num_relations());
    }

    /// Oracle for trimming: recompute every degree from scratch at each step.
    fn trim_oracle(kg: &KnowledgeGraph, rel: RelationId, threshold: usize) -> BTreeSet<Triple> {
        let mut triples: Vec<Triple> = kg.triples().to_vec();
        loop {
            let count = triples.iter().filter(|t| t.relation == rel).count();
            if count <= threshold {
                break;
            }
            let deg = |n: NodeId| triples.iter().filter(|t| t.head == n || t.tail == n).count();
            let victim = *triples
                .iter()
                .filter(|t| t.relation == rel)
                .min_by_key(|t| (Reverse(deg(t.head) + deg(t.tail)), t.head, t.tail))
                .unwrap();
            triples.retain(|t| *t != victim);
        }
        triples.into_iter().collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn xswap_preserves_degrees(seed in 0u64..1000, factor in 1.0f64..8.0) {
            let kg = random_graph(seed, 120);
            let (out, rep) = xswap_permute(&kg, &[RelationId(0), RelationId(1), RelationId(2)], factor, seed).unwrap();
            prop_assert_eq!(degree_vectors(&kg), degree_vectors(&out));
            prop_assert!(rep.degrees_preserved());
            prop_assert_eq!(out.num_triples(), kg.num_triples());
            prop_assert!(out.triples().iter().all(|t| t.head != t.tail));
        }

        #[test]
        fn trim_matches_oracle(seed in 0u64..1000, threshold in 0usize..40) {
            let kg = random_graph(seed, 80);
            let out = trim_by_degree(&kg, RelationId(0), threshold).unwrap();
            let got: BTreeSet<Triple> = out.triples().iter().copied().collect();
            prop_assert_eq!(&got, &trim_oracle(&kg, RelationId(0), threshold));
            let before = kg.relation_count(RelationId(0));
            prop_assert_eq!(out.relation_count(RelationId(0)), before.min(threshold));
            for r in 1..5 {
                prop_assert_eq!(out.relation_count(RelationId(r)), kg.relation_count(RelationId(r)));
            }
        }
    }
}
