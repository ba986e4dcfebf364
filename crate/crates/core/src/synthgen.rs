//! Synthetic drug / protein / process graphs with planted mechanisms.
//!
//! Background edges are added per relation with preferential attachment,
//! `P(node) ∝ (degree in that relation + 1)^skew`, until each relation has its
//! configured count less the planted edges. Each planted `(drug, process)` pair
//! then gets an `induces` edge and a witness path following the planted rule
//! body (by default `upregulates > interacts > participates`). Witness
//! intermediates are nodes with no other edge of the next rule relation, so the
//! rule body leads to the answer while the nodes stay busy with other relations.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{
    split_triples, GraphBuilder, KnowledgeGraph, LabeledTriple, NodeTypeId, RelationDecl, RelationId, Schema,
    SplitRatios, SplitSet,
};
use crate::rules::{RuleSpec, RulesFile, DEFAULT_RULE_WEIGHT};

pub const DRUG: &str = "Drug";
pub const PROTEIN: &str = "Protein";
pub const PROCESS: &str = "BiologicalProcess";
pub const INTERACTS: &str = "interacts";
pub const PARTICIPATES: &str = "participates";
pub const DOWNREGULATES: &str = "downregulates";
pub const UPREGULATES: &str = "upregulates";
pub const INDUCES: &str = "induces";

/// Drug, protein and biological-process schema used by the generator.
pub fn mechanism_schema() -> Schema {
    let decl = |label: &str, src: &str, dst: &str| RelationDecl {
        label: label.into(),
        src: src.into(),
        dst: dst.into(),
    };
    Schema::new(
        vec![DRUG.into(), PROTEIN.into(), PROCESS.into()],
        &[
            decl(INTERACTS, PROTEIN, PROTEIN),
            decl(PARTICIPATES, PROTEIN, PROCESS),
            decl(DOWNREGULATES, DRUG, PROTEIN),
            decl(UPREGULATES, DRUG, PROTEIN),
            decl(INDUCES, DRUG, PROCESS),
        ],
        false,
    )
    .expect("static schema is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub drugs: usize,
    pub proteins: usize,
    pub processes: usize,
    pub planted_pairs: usize,
    /// Total edges per relation, planted edges included.
    pub participates: usize,
    pub upregulates: usize,
    pub downregulates: usize,
    /// Fraction of all edges that are `interacts`; sets the interacts count.
    pub ppi_fraction: f64,
    /// Preferential-attachment exponent for background edge endpoints.
    pub skew: f64,
    /// Exponent for the drug end of background edges; 0 spreads them evenly over drugs.
    pub drug_skew: f64,
    /// Zipf exponent for how often each process is a planted answer.
    pub answer_skew: f64,
    /// Route witness paths through high-degree nodes instead of rule-specific ones.
    pub hub_witnesses: bool,
    pub planted_rule: Vec<String>,
    pub decoy_rules: Vec<Vec<String>>,
    pub split: SplitRatios,
    pub seed: u64,
}

fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            drugs: 50,
            proteins: 300,
            processes: 20,
            planted_pairs: 60,
            participates: 300,
            upregulates: 110,
            downregulates: 300,
            ppi_fraction: 0.5,
            skew: 1.5,
            drug_skew: 0.0,
            answer_skew: 0.0,
            hub_witnesses: false,
            planted_rule: labels(&[UPREGULATES, INTERACTS, PARTICIPATES]),
            decoy_rules: vec![
                labels(&[DOWNREGULATES, PARTICIPATES]),
                labels(&[DOWNREGULATES, INTERACTS, PARTICIPATES]),
                labels(&[DOWNREGULATES, INTERACTS, INTERACTS, PARTICIPATES]),
            ],
            split: SplitRatios::default(),
            seed: 1,
        }
    }
}

impl SynthConfig {
    /// Strong hubs and a few very popular processes, with a four-step
    /// mechanism (`upregulates > interacts > interacts > participates`).
    ///
    /// Popular answers make degree shortcuts pay off, while the longer
    /// mechanism is rarely found by undirected exploration.
    pub fn high_skew() -> Self {
        SynthConfig {
            ppi_fraction: 0.3,
            skew: 2.0,
            answer_skew: 1.5,
            planted_rule: labels(&[UPREGULATES, INTERACTS, INTERACTS, PARTICIPATES]),
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("drugs", self.drugs),
            ("proteins", self.proteins),
            ("processes", self.processes),
            ("planted_pairs", self.planted_pairs),
        ] {
            if v == 0 {
                return Err(Error::config(format!("synth.{key}"), "must be positive"));
            }
        }
        if !(self.ppi_fraction > 0.0 && self.ppi_fraction < 1.0) {
            return Err(Error::config("synth.ppi_fraction", "must be in (0, 1)"));
        }
        if !(self.skew >= 0.0 && self.drug_skew >= 0.0 && self.answer_skew >= 0.0) {
            return Err(Error::config("synth.skew", "skew exponents must be >= 0"));
        }
        if self.planted_pairs > self.drugs * self.processes {
            return Err(Error::Infeasible(format!(
                "{} planted pairs exceed the {} possible drug/process pairs",
                self.planted_pairs,
                self.drugs * self.processes
            )));
        }
        Ok(())
    }

    /// `interacts` count implied by the PPI fraction and the other relations.
    pub fn interacts(&self) -> usize {
        let others = (self.participates + self.upregulates + self.downregulates + self.planted_pairs) as f64;
        (self.ppi_fraction * others / (1.0 - self.ppi_fraction)).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub drug: String,
    pub process: String,
    pub witness: Vec<LabeledTriple>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub planted_rule: Vec<String>,
    pub decoy_rules: Vec<Vec<String>>,
    pub pairs: Vec<PlantedPair>,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub config: SynthConfig,
    pub graph: KnowledgeGraph,
    pub truth: PlantedTruth,
    pub splits: SplitSet,
}

impl SynthOutput {
    /// Rules file with the planted rule first (id 0) and the decoys after it.
    pub fn rules_file(&self) -> RulesFile {
        let schema = self.graph.schema();
        let spec = |body: &[String]| RuleSpec {
            head: INDUCES.into(),
            body: body
                .iter()
                .map(|r| {
                    let rel = schema.relation(schema.relation_id(r).expect("validated relation"));
                    [
                        r.clone(),
                        schema.node_type_name(rel.src_type).to_string(),
                        schema.node_type_name(rel.dst_type).to_string(),
                    ]
                })
                .collect(),
            weight: DEFAULT_RULE_WEIGHT,
        };
        let mut rules = vec![spec(&self.truth.planted_rule)];
        rules.extend(self.truth.decoy_rules.iter().map(|d| spec(d)));
        RulesFile {
            blocklist: vec![INDUCES.into()],
            forward_only: true,
            rules,
        }
    }

    /// Writes `triples.tsv`, `schema.toml`, `rules.toml`, `truth.json` and `splits.json`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.graph.save_triples(dir.join("triples.tsv"))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("schema.toml", self.graph.schema().to_toml_string()?)?;
        write("rules.toml", self.rules_file().to_toml_string()?)?;
        write("truth.json", serde_json::to_string_pretty(&self.truth)?)?;
        write(
            "splits.json",
            serde_json::to_string_pretty(&self.splits.to_file(&self.graph))?,
        )?;
        Ok(())
    }
}

struct Pools {
    drugs: Vec<String>,
    proteins: Vec<String>,
    processes: Vec<String>,
}

impl Pools {
    fn of(&self, schema: &Schema, ty: NodeTypeId) -> &[String] {
        match schema.node_type_name(ty) {
            DRUG => &self.drugs,
            PROTEIN => &self.proteins,
            _ => &self.processes,
        }
    }
}

const WITNESS_CHOICES: usize = 8;

/// Preferential-attachment sampler over one node pool.
fn pick(rng: &mut ChaCha8Rng, pool: &[String], degree: &HashMap<&str, usize>, skew: f64) -> usize {
    let weights: Vec<f64> = pool
        .iter()
        .map(|n| ((degree.get(n.as_str()).copied().unwrap_or(0) + 1) as f64).powf(skew))
        .collect();
    WeightedIndex::new(&weights).expect("positive weights").sample(rng)
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let schema = mechanism_schema();
    let rel_ids = |labels: &[String]| -> Result<Vec<RelationId>> {
        labels
            .iter()
            .map(|l| schema.relation_id(l).ok_or_else(|| Error::UnknownRelation(l.clone())))
            .collect()
    };
    let planted = rel_ids(&config.planted_rule)?;
    if planted.is_empty() {
        return Err(Error::config("synth.planted_rule", "must have at least one step"));
    }
    crate::rules::Metapath::from_relations(&schema, &planted)?;
    let induces = schema.relation_id(INDUCES).expect("schema relation");
    let head = schema.relation(induces);
    let first = schema.relation(planted[0]);
    let last = schema.relation(planted[planted.len() - 1]);
    if first.src_type != head.src_type || last.dst_type != head.dst_type {
        return Err(Error::config("synth.planted_rule", "must lead from Drug to BiologicalProcess"));
    }
    for d in &config.decoy_rules {
        let ids = rel_ids(d)?;
        let mp = crate::rules::Metapath::from_relations(&schema, &ids)?;
        if ids == planted {
            return Err(Error::config("synth.decoy_rules", "a decoy equals the planted rule"));
        }
        if mp.src_type() != head.src_type || mp.dst_type() != head.dst_type {
            return Err(Error::config("synth.decoy_rules", "decoys must lead from Drug to BiologicalProcess"));
        }
    }

    let pools = Pools {
        drugs: (0..config.drugs).map(|i| format!("D{i}")).collect(),
        proteins: (0..config.proteins).map(|i| format!("P{i}")).collect(),
        processes: (0..config.processes).map(|i| format!("BP{i}")).collect(),
    };
    // Fresh intermediate nodes per witness path, by type.
    if !config.hub_witnesses {
        for ty in 0..schema.node_types().len() {
            let ty = NodeTypeId::from_index(ty);
            let per_path = planted[..planted.len() - 1]
                .iter()
                .filter(|&&r| schema.relation(r).dst_type == ty)
                .count();
            let need = per_path * config.planted_pairs;
            let have = pools.of(&schema, ty).len();
            if need > have {
                return Err(Error::Infeasible(format!(
                    "witness paths need {need} distinct {} nodes but only {have} exist",
                    schema.node_type_name(ty)
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut b = GraphBuilder::new(schema.clone());
    for (ty, pool) in [(DRUG, &pools.drugs), (PROTEIN, &pools.proteins), (PROCESS, &pools.processes)] {
        let t = schema.node_type_id(ty).expect("schema type");
        for n in pool {
            b.add_node(n, t)?;
        }
    }

    // Planted pairs: every drug once (while pairs last), then uniform drugs;
    // processes by Zipf rank over a shuffled order.
    let mut process_order: Vec<usize> = (0..config.processes).collect();
    process_order.shuffle(&mut rng);
    let zipf: Vec<f64> = (0..config.processes)
        .map(|r| ((r + 1) as f64).powf(-config.answer_skew))
        .collect();
    let zipf = WeightedIndex::new(&zipf).expect("positive weights");
    let mut drug_order: Vec<usize> = (0..config.drugs).collect();
    drug_order.shuffle(&mut rng);
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut pair_list = Vec::with_capacity(config.planted_pairs);
    let mut guard = 0usize;
    while pair_list.len() < config.planted_pairs {
        guard += 1;
        if guard > 1000 * config.planted_pairs.max(1) {
            return Err(Error::Infeasible("could not draw distinct planted pairs".into()));
        }
        let d = if pair_list.len() < config.drugs {
            drug_order[pair_list.len()]
        } else {
            rng.gen_range(0..config.drugs)
        };
        let p = process_order[zipf.sample(&mut rng)];
        if pairs.insert((d, p)) {
            pair_list.push((d, p));
        }
    }

    // Background edges first, in a fixed relation order, leaving room for the
    // planted edges of each relation.
    let targets = [
        (UPREGULATES, config.upregulates),
        (DOWNREGULATES, config.downregulates),
        (PARTICIPATES, config.participates),
        (INTERACTS, config.interacts()),
    ];
    let mut degree: HashMap<&str, usize> = HashMap::new();
    for (label, target) in targets {
        let r = schema.relation_id(label).expect("schema relation");
        let rel = schema.relation(r);
        let planted_here = pair_list.len() * planted.iter().filter(|&&p| p == r).count();
        let mut need = target.saturating_sub(planted_here);
        let src = pools.of(&schema, rel.src_type);
        let dst = pools.of(&schema, rel.dst_type);
        let capacity = src.len() * dst.len() - if rel.src_type == rel.dst_type { src.len() } else { 0 };
        if target > capacity {
            return Err(Error::Infeasible(format!(
                "{target} `{label}` edges exceed the {capacity} possible"
            )));
        }
        let head_skew = if schema.node_type_name(rel.src_type) == DRUG {
            config.drug_skew
        } else {
            config.skew
        };
        // Attachment follows the degree within this relation, so hubs of
        // different relations are drawn independently.
        let mut rel_degree: HashMap<&str, usize> = HashMap::new();
        let mut tries = 0usize;
        while need > 0 {
            tries += 1;
            if tries > 200 * target.max(1) + 10_000 {
                return Err(Error::Infeasible(format!("could not place {target} `{label}` edges")));
            }
            let h = &src[pick(&mut rng, src, &rel_degree, head_skew)];
            let t = &dst[pick(&mut rng, dst, &rel_degree, config.skew)];
            if h == t || b.contains(h, label, t) {
                continue;
            }
            b.add(h, label, t)?;
            *degree.entry(h.as_str()).or_insert(0) += 1;
            *degree.entry(t.as_str()).or_insert(0) += 1;
            *rel_degree.entry(h.as_str()).or_insert(0) += 1;
            *rel_degree.entry(t.as_str()).or_insert(0) += 1;
            need -= 1;
        }
    }

    // Witness intermediates: per position, unused nodes ordered by fewest
    // out-edges of the next rule relation, then most out-edges of any other
    // relation. Hub routing instead picks degree-preferentially.
    let graph_so_far = b.clone().build()?;
    let mut taken: HashSet<String> = HashSet::new();
    let mut position_pool: Vec<Vec<String>> = Vec::with_capacity(planted.len() - 1);
    for i in 0..planted.len() - 1 {
        let ty = schema.relation(planted[i]).dst_type;
        let next = planted[i + 1];
        let mut pool: Vec<(usize, usize, String)> = pools
            .of(&schema, ty)
            .iter()
            .map(|n| {
                let id = graph_so_far.node_id(n).expect("node added");
                let same = graph_so_far.out_degree(id, next) as usize;
                (same, graph_so_far.out_degree_total(id) - same, n.clone())
            })
            .collect();
        pool.shuffle(&mut rng);
        pool.sort_by_key(|(same, other, _)| (std::cmp::Reverse(*same), *other));
        position_pool.push(pool.into_iter().map(|(_, _, n)| n).collect());
    }
    let mut truth_pairs = Vec::with_capacity(pair_list.len());
    for &(d, p) in &pair_list {
        let drug = pools.drugs[d].clone();
        let process = pools.processes[p].clone();
        b.add(&drug, INDUCES, &process)?;
        let mut nodes: Vec<String> = Vec::new();
        for attempt in 0..=1000 {
            if attempt == 1000 {
                return Err(Error::Infeasible("could not route a simple witness path".into()));
            }
            nodes.clear();
            nodes.push(drug.clone());
            for &r in &planted[..planted.len() - 1] {
                let ty = schema.relation(r).dst_type;
                let pool = pools.of(&schema, ty);
                let n = if config.hub_witnesses {
                    pool[pick(&mut rng, pool, &degree, config.skew)].clone()
                } else {
                    // Best few untaken candidates for this position.
                    let i = nodes.len() - 1;
                    let prev = &nodes[i];
                    let into = &schema.relation(planted[i]).label;
                    let last = (i + 2 == planted.len()).then(|| &schema.relation(planted[i + 1]).label);
                    let best: Vec<&String> = position_pool[i]
                        .iter()
                        .rev()
                        .filter(|n| {
                            !taken.contains(*n)
                                && *n != prev
                                && !b.contains(prev, into, n)
                                && last.is_none_or(|l| !b.contains(n, l, &process))
                        })
                        .take(WITNESS_CHOICES)
                        .collect();
                    if best.is_empty() {
                        return Err(Error::Infeasible("ran out of distinct witness nodes".into()));
                    }
                    best[if attempt == 0 { 0 } else { rng.gen_range(0..best.len()) }].clone()
                };
                nodes.push(n);
            }
            nodes.push(process.clone());
            let distinct: HashSet<&String> = nodes.iter().collect();
            let clash = planted
                .iter()
                .enumerate()
                .any(|(i, &r)| b.contains(&nodes[i], &schema.relation(r).label, &nodes[i + 1]));
            if distinct.len() == nodes.len() && !clash {
                break;
            }
        }
        taken.extend(nodes[1..nodes.len() - 1].iter().cloned());
        let mut witness = Vec::with_capacity(planted.len());
        for (i, &r) in planted.iter().enumerate() {
            let label = schema.relation(r).label.clone();
            b.add(&nodes[i], &label, &nodes[i + 1])?;
            witness.push(LabeledTriple(nodes[i].clone(), label, nodes[i + 1].clone()));
        }
        truth_pairs.push(PlantedPair { drug, process, witness });
    }

    let graph = b.build()?;
    let splits = split_triples(&graph, induces, config.split, config.seed)?;
    Ok(SynthOutput {
        config: config.clone(),
        graph,
        truth: PlantedTruth {
            planted_rule: config.planted_rule.clone(),
            decoy_rules: config.decoy_rules.clone(),
            pairs: truth_pairs,
        },
        splits,
    })
}
