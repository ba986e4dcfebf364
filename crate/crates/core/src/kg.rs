//! Typed knowledge-graph store.
//!
//! A [`KnowledgeGraph`] is an immutable multigraph of typed triples with an
//! out-adjacency list and per-(node, relation) degree counts. Every operation
//! that changes the edge set returns a new graph; node and schema tables are
//! shared between derived graphs.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;

/// Label prefix that marks an inverse relation (`induces` -> `_induces`).
pub const INVERSE_PREFIX: &str = "_";

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub fn from_index(i: usize) -> Self {
                Self(i as u32)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Dense node identifier, assigned in order of first appearance.
    NodeId
);
id_type!(
    /// Relation identifier; forward relations follow schema declaration order,
    /// inverse relations are appended after them.
    RelationId
);
id_type!(NodeTypeId);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRef {
    pub id: NodeId,
    pub label: String,
    pub node_type: NodeTypeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRef {
    pub id: RelationId,
    pub label: String,
    pub is_inverse: bool,
    pub inverse_of: Option<RelationId>,
    pub src_type: NodeTypeId,
    pub dst_type: NodeTypeId,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: NodeId,
    pub relation: RelationId,
    pub tail: NodeId,
}

impl Triple {
    pub fn new(head: NodeId, relation: RelationId, tail: NodeId) -> Self {
        Triple { head, relation, tail }
    }
}

/// A triple spelled out with labels, as stored in files.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledTriple(pub String, pub String, pub String);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationDecl {
    pub label: String,
    pub src: String,
    pub dst: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub node_types: Vec<String>,
    #[serde(default)]
    pub allow_self_loops: bool,
    pub relations: Vec<RelationDecl>,
}

/// Node types and relation signatures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    node_types: Vec<String>,
    relations: Vec<RelationRef>,
    allow_self_loops: bool,
}

impl Schema {
    pub fn new(node_types: Vec<String>, relations: &[RelationDecl], allow_self_loops: bool) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &node_types {
            if t.is_empty() || !seen.insert(t.as_str()) {
                return Err(Error::Schema(format!("empty or duplicate node type `{t}`")));
            }
        }
        let type_id = |name: &str| -> Result<NodeTypeId> {
            node_types
                .iter()
                .position(|t| t == name)
                .map(NodeTypeId::from_index)
                .ok_or_else(|| Error::UnknownNodeType(name.to_string()))
        };
        let mut labels = HashSet::new();
        let mut rels = Vec::with_capacity(relations.len());
        for (i, decl) in relations.iter().enumerate() {
            if decl.label.is_empty() || decl.label.starts_with(INVERSE_PREFIX) || decl.label.contains(['\t', '\n']) {
                return Err(Error::Schema(format!("invalid relation label `{}`", decl.label)));
            }
            if !labels.insert(decl.label.clone()) {
                return Err(Error::Schema(format!("duplicate relation `{}`", decl.label)));
            }
            rels.push(RelationRef {
                id: RelationId::from_index(i),
                label: decl.label.clone(),
                is_inverse: false,
                inverse_of: None,
                src_type: type_id(&decl.src)?,
                dst_type: type_id(&decl.dst)?,
            });
        }
        Ok(Schema {
            node_types,
            relations: rels,
            allow_self_loops,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text)?;
        Schema::new(file.node_types, &file.relations, file.allow_self_loops)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Schema::from_toml_str(&text)
    }

    /// Forward relation declarations only; inverses are always derived.
    pub fn to_file(&self) -> SchemaFile {
        SchemaFile {
            node_types: self.node_types.clone(),
            allow_self_loops: self.allow_self_loops,
            relations: self
                .relations
                .iter()
                .filter(|r| !r.is_inverse)
                .map(|r| RelationDecl {
                    label: r.label.clone(),
                    src: self.node_type_name(r.src_type).to_string(),
                    dst: self.node_type_name(r.dst_type).to_string(),
                })
                .collect(),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(&self.to_file())?)
    }

    pub fn node_types(&self) -> &[String] {
        &self.node_types
    }

    pub fn node_type_name(&self, id: NodeTypeId) -> &str {
        &self.node_types[id.index()]
    }

    pub fn node_type_id(&self, name: &str) -> Option<NodeTypeId> {
        self.node_types.iter().position(|t| t == name).map(NodeTypeId::from_index)
    }

    pub fn relations(&self) -> &[RelationRef] {
        &self.relations
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relation(&self, id: RelationId) -> &RelationRef {
        &self.relations[id.index()]
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.iter().find(|r| r.label == label).map(|r| r.id)
    }

    pub fn allow_self_loops(&self) -> bool {
        self.allow_self_loops
    }

    pub fn has_inverses(&self) -> bool {
        self.relations.iter().any(|r| r.is_inverse)
    }

    pub fn inverse_of(&self, id: RelationId) -> Option<RelationId> {
        self.relations[id.index()].inverse_of
    }

    /// The schema extended with one inverse relation per forward relation.
    /// Idempotent: a schema that already declares inverses is returned as is.
    pub fn with_inverses(&self) -> Schema {
        if self.has_inverses() {
            return self.clone();
        }
        let n = self.relations.len();
        let mut relations = self.relations.clone();
        for r in &mut relations {
            r.inverse_of = Some(RelationId::from_index(n + r.id.index()));
        }
        for r in &self.relations {
            relations.push(RelationRef {
                id: RelationId::from_index(n + r.id.index()),
                label: format!("{INVERSE_PREFIX}{}", r.label),
                is_inverse: true,
                inverse_of: Some(r.id),
                src_type: r.dst_type,
                dst_type: r.src_type,
            });
        }
        Schema {
            node_types: self.node_types.clone(),
            relations,
            allow_self_loops: self.allow_self_loops,
        }
    }
}

/// Incremental construction of a graph from labeled triples.
///
/// Node ids are assigned by first appearance; a node's type is fixed by the
/// first relation it appears in.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    schema: Schema,
    nodes: Vec<NodeRef>,
    index: HashMap<String, NodeId>,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
}

impl GraphBuilder {
    pub fn new(schema: Schema) -> Self {
        GraphBuilder {
            schema,
            nodes: Vec::new(),
            index: HashMap::new(),
            triples: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Register a node without an edge. Errors if the label exists with another type.
    pub fn add_node(&mut self, label: &str, node_type: NodeTypeId) -> Result<NodeId> {
        if let Some(&id) = self.index.get(label) {
            let existing = self.nodes[id.index()].node_type;
            if existing != node_type {
                return Err(Error::Graph(format!(
                    "node `{label}` has type {} but {} is required",
                    self.schema.node_type_name(existing),
                    self.schema.node_type_name(node_type)
                )));
            }
            return Ok(id);
        }
        if label.is_empty() || label.contains(['\t', '\n']) {
            return Err(Error::Graph(format!("invalid node label {label:?}")));
        }
        let id = NodeId::from_index(self.nodes.len());
        self.nodes.push(NodeRef {
            id,
            label: label.to_string(),
            node_type,
        });
        self.index.insert(label.to_string(), id);
        Ok(id)
    }

    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> Result<Triple> {
        let rel = self
            .schema
            .relation_id(relation)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))?;
        let (src, dst) = {
            let r = self.schema.relation(rel);
            (r.src_type, r.dst_type)
        };
        if head == tail && !self.schema.allow_self_loops() {
            return Err(Error::Graph(format!("self-loop ({head}, {relation}, {tail}) not permitted by schema")));
        }
        let h = self.add_node(head, src)?;
        let t = self.add_node(tail, dst)?;
        let triple = Triple::new(h, rel, t);
        if !self.seen.insert(triple) {
            return Err(Error::Graph(format!("duplicate triple ({head}, {relation}, {tail})")));
        }
        self.triples.push(triple);
        Ok(triple)
    }

    pub fn contains(&self, head: &str, relation: &str, tail: &str) -> bool {
        match (self.index.get(head), self.schema.relation_id(relation), self.index.get(tail)) {
            (Some(&h), Some(r), Some(&t)) => self.seen.contains(&Triple::new(h, r, t)),
            _ => false,
        }
    }

    pub fn build(self) -> Result<KnowledgeGraph> {
        KnowledgeGraph::from_parts(Arc::new(self.schema), Arc::new(self.nodes), Arc::new(self.index), self.triples)
    }
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    schema: Arc<Schema>,
    nodes: Arc<Vec<NodeRef>>,
    node_index: Arc<HashMap<String, NodeId>>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    /// Out-edges per node, sorted by (relation, tail).
    adjacency: Vec<Vec<(RelationId, NodeId)>>,
    /// Flattened `node * num_relations + relation`.
    out_degree: Vec<u32>,
    in_degree: Vec<u32>,
}

impl KnowledgeGraph {
    fn from_parts(
        schema: Arc<Schema>,
        nodes: Arc<Vec<NodeRef>>,
        node_index: Arc<HashMap<String, NodeId>>,
        triples: Vec<Triple>,
    ) -> Result<Self> {
        let n = nodes.len();
        let nr = schema.num_relations();
        let mut triple_set = HashSet::with_capacity(triples.len());
        let mut adjacency = vec![Vec::new(); n];
        let mut out_degree = vec![0u32; n * nr];
        let mut in_degree = vec![0u32; n * nr];
        for t in &triples {
            if t.head.index() >= n || t.tail.index() >= n || t.relation.index() >= nr {
                return Err(Error::Graph(format!("triple {t:?} references unknown ids")));
            }
            let rel = schema.relation(t.relation);
            if nodes[t.head.index()].node_type != rel.src_type || nodes[t.tail.index()].node_type != rel.dst_type {
                return Err(Error::Graph(format!(
                    "triple ({}, {}, {}) violates relation signature",
                    nodes[t.head.index()].label,
                    rel.label,
                    nodes[t.tail.index()].label
                )));
            }
            if t.head == t.tail && !schema.allow_self_loops() {
                return Err(Error::Graph(format!("self-loop on `{}`", nodes[t.head.index()].label)));
            }
            if !triple_set.insert(*t) {
                return Err(Error::Graph(format!(
                    "duplicate triple ({}, {}, {})",
                    nodes[t.head.index()].label,
                    rel.label,
                    nodes[t.tail.index()].label
                )));
            }
            adjacency[t.head.index()].push((t.relation, t.tail));
            out_degree[t.head.index() * nr + t.relation.index()] += 1;
            in_degree[t.tail.index() * nr + t.relation.index()] += 1;
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(KnowledgeGraph {
            schema,
            nodes,
            node_index,
            triples,
            triple_set,
            adjacency,
            out_degree,
            in_degree,
        })
    }

    /// A graph over the same nodes and schema with a different edge set.
    pub fn derive(&self, triples: Vec<Triple>) -> Result<Self> {
        Self::from_parts(self.schema.clone(), self.nodes.clone(), self.node_index.clone(), triples)
    }

    fn derive_with_schema(&self, schema: Schema, triples: Vec<Triple>) -> Result<Self> {
        Self::from_parts(Arc::new(schema), self.nodes.clone(), self.node_index.clone(), triples)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeRef {
        &self.nodes[id.index()]
    }

    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        self.node_index.get(label).copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn neighbors(&self, node: NodeId) -> &[(RelationId, NodeId)] {
        &self.adjacency[node.index()]
    }

    pub fn out_degree(&self, node: NodeId, rel: RelationId) -> u32 {
        self.out_degree[node.index() * self.schema.num_relations() + rel.index()]
    }

    pub fn in_degree(&self, node: NodeId, rel: RelationId) -> u32 {
        self.in_degree[node.index() * self.schema.num_relations() + rel.index()]
    }

    pub fn out_degree_total(&self, node: NodeId) -> usize {
        self.adjacency[node.index()].len()
    }

    /// Number of edges touching `node` in either direction.
    pub fn degree(&self, node: NodeId) -> usize {
        let nr = self.schema.num_relations();
        let base = node.index() * nr;
        (0..nr)
            .map(|r| (self.out_degree[base + r] + self.in_degree[base + r]) as usize)
            .sum()
    }

    pub fn relation_count(&self, rel: RelationId) -> usize {
        self.triples.iter().filter(|t| t.relation == rel).count()
    }

    pub fn triples_of(&self, rel: RelationId) -> impl Iterator<Item = &Triple> + '_ {
        self.triples.iter().filter(move |t| t.relation == rel)
    }

    pub fn nodes_of_type(&self, ty: NodeTypeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(move |n| n.node_type == ty).map(|n| n.id)
    }

    pub fn relation_label(&self, rel: RelationId) -> &str {
        &self.schema.relation(rel).label
    }

    pub fn node_label(&self, node: NodeId) -> &str {
        &self.nodes[node.index()].label
    }

    /// True when at least one triple uses an inverse relation.
    pub fn has_inverse_edges(&self) -> bool {
        self.triples.iter().any(|t| self.schema.relation(t.relation).is_inverse)
    }

    pub fn inverse_triple(&self, t: &Triple) -> Option<Triple> {
        self.schema
            .inverse_of(t.relation)
            .map(|inv| Triple::new(t.tail, inv, t.head))
    }

    pub fn labeled(&self, t: &Triple) -> LabeledTriple {
        LabeledTriple(
            self.node_label(t.head).to_string(),
            self.relation_label(t.relation).to_string(),
            self.node_label(t.tail).to_string(),
        )
    }

    /// Resolve a labeled triple against this graph's node and relation tables.
    /// The triple itself need not be an edge of the graph.
    pub fn resolve(&self, t: &LabeledTriple) -> Result<Triple> {
        let h = self.node_id(&t.0).ok_or_else(|| Error::UnknownNode(t.0.clone()))?;
        let r = self
            .schema
            .relation_id(&t.1)
            .ok_or_else(|| Error::UnknownRelation(t.1.clone()))?;
        let tl = self.node_id(&t.2).ok_or_else(|| Error::UnknownNode(t.2.clone()))?;
        Ok(Triple::new(h, r, tl))
    }

    /// The edge set as labels; equal for graphs that differ only in id assignment.
    pub fn labeled_triples(&self) -> BTreeSet<LabeledTriple> {
        self.triples.iter().map(|t| self.labeled(t)).collect()
    }

    /// Returns a copy with `(t, r⁻¹, h)` for every `(h, r, t)`.
    pub fn add_inverse_edges(&self) -> Result<Self> {
        if self.has_inverse_edges() {
            return Err(Error::InversesPresent);
        }
        let schema = self.schema.with_inverses();
        let mut triples = self.triples.clone();
        triples.extend(self.triples.iter().map(|t| {
            let inv = schema.inverse_of(t.relation).expect("forward relation has an inverse");
            Triple::new(t.tail, inv, t.head)
        }));
        self.derive_with_schema(schema, triples)
    }

    /// Drop the given triples together with their inverses (when present).
    pub fn without_triples(&self, remove: &[Triple]) -> Self {
        let mut drop: HashSet<Triple> = remove.iter().copied().collect();
        for t in remove {
            if let Some(inv) = self.inverse_triple(t) {
                drop.insert(inv);
            }
        }
        let triples = self.triples.iter().filter(|t| !drop.contains(t)).copied().collect();
        self.derive(triples).expect("subset of a valid graph is valid")
    }

    /// Forward (non-inverse) triples as tab-separated lines in stored order.
    pub fn write_triples<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.triples {
            if self.schema.relation(t.relation).is_inverse {
                continue;
            }
            writeln!(
                out,
                "{}\t{}\t{}",
                self.node_label(t.head),
                self.relation_label(t.relation),
                self.node_label(t.tail)
            )?;
        }
        Ok(())
    }

    pub fn save_triples(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_triples(&mut w).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Depth-limited search for a directed path `from -> to` of at most
    /// `max_len` edges that does not use any edge in `excluded`.
    pub fn has_path_within(&self, from: NodeId, to: NodeId, max_len: usize, excluded: &[Triple]) -> bool {
        if from == to {
            return true;
        }
        let mut depth = vec![usize::MAX; self.num_nodes()];
        let mut queue = VecDeque::new();
        depth[from.index()] = 0;
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            let d = depth[u.index()];
            if d == max_len {
                continue;
            }
            for &(r, v) in self.neighbors(u) {
                if depth[v.index()] != usize::MAX {
                    continue;
                }
                if excluded.iter().any(|t| t.head == u && t.relation == r && t.tail == v) {
                    continue;
                }
                if v == to {
                    return true;
                }
                depth[v.index()] = d + 1;
                queue.push_back(v);
            }
        }
        false
    }
}

/// Parse a tab-separated triple file.
pub fn parse_triples<R: BufRead>(reader: R, schema: Schema, source_name: &str) -> Result<KnowledgeGraph> {
    let mut builder = GraphBuilder::new(schema);
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(format!(
                "expected 3 non-empty tab-separated fields, found {}",
                fields.len()
            )));
        }
        builder
            .add(fields[0], fields[1], fields[2])
            .map_err(|e| parse_err(e.to_string()))?;
    }
    builder.build()
}

pub fn load_triples(path: impl AsRef<Path>, schema: Schema) -> Result<KnowledgeGraph> {
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    parse_triples(BufReader::new(file), schema, &path.as_ref().display().to_string())
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    /// Non-negative fractions summing to 1.
    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.valid + self.test;
        if (sum - 1.0).abs() > 1e-9 || [self.train, self.valid, self.test].iter().any(|r| *r < 0.0) {
            return Err(Error::InvalidRatios(sum));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSet {
    pub relation: RelationId,
    pub seed: u64,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// File form of a [`SplitSet`], keyed by labels so it survives id reassignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub relation: String,
    pub train: Vec<LabeledTriple>,
    pub valid: Vec<LabeledTriple>,
    pub test: Vec<LabeledTriple>,
}

impl SplitSet {
    pub fn all(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Valid and test triples: the edges hidden from the walker.
    pub fn held_out(&self) -> Vec<Triple> {
        self.valid.iter().chain(&self.test).copied().collect()
    }

    pub fn to_file(&self, kg: &KnowledgeGraph) -> SplitFile {
        let lab = |v: &[Triple]| v.iter().map(|t| kg.labeled(t)).collect();
        SplitFile {
            seed: self.seed,
            relation: kg.relation_label(self.relation).to_string(),
            train: lab(&self.train),
            valid: lab(&self.valid),
            test: lab(&self.test),
        }
    }

    pub fn from_file(kg: &KnowledgeGraph, file: &SplitFile) -> Result<Self> {
        let relation = kg
            .schema()
            .relation_id(&file.relation)
            .ok_or_else(|| Error::UnknownRelation(file.relation.clone()))?;
        let resolve = |v: &[LabeledTriple]| -> Result<Vec<Triple>> {
            v.iter()
                .map(|t| {
                    let r = kg.resolve(t)?;
                    if r.relation != relation {
                        return Err(Error::Graph(format!(
                            "split triple ({}, {}, {}) is not of relation `{}`",
                            t.0, t.1, t.2, file.relation
                        )));
                    }
                    Ok(r)
                })
                .collect()
        };
        Ok(SplitSet {
            relation,
            seed: file.seed,
            train: resolve(&file.train)?,
            valid: resolve(&file.valid)?,
            test: resolve(&file.test)?,
        })
    }
}

/// Shuffle the triples of `relation` with `seed` and cut them into
/// train/valid/test. Valid and test sizes are floored; train takes the rest.
pub fn split_triples(kg: &KnowledgeGraph, relation: RelationId, ratios: SplitRatios, seed: u64) -> Result<SplitSet> {
    ratios.validate()?;
    let mut triples: Vec<Triple> = kg.triples_of(relation).copied().collect();
    if triples.is_empty() {
        return Err(Error::RelationAbsent(kg.relation_label(relation).to_string()));
    }
    let n = triples.len();
    // Guard against 0.2 * 10 landing just below an integer.
    let n_valid = ((n as f64) * ratios.valid + 1e-9).floor() as usize;
    let n_test = ((n as f64) * ratios.test + 1e-9).floor() as usize;
    let n_train = n - n_valid - n_test;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    triples.shuffle(&mut rng);
    let test = triples.split_off(n_train + n_valid);
    let valid = triples.split_off(n_train);
    Ok(SplitSet {
        relation,
        seed,
        train: triples,
        valid,
        test,
    })
}

/// Keep the triples `(h, r, t)` for which `kg` has a directed path `h -> t`
/// of at most `max_len` edges that avoids the triple itself (and its inverse).
pub fn filter_reachable(kg: &KnowledgeGraph, triples: &[Triple], max_len: usize, exec: Execution) -> Vec<Triple> {
    let keep = exec.map(triples, |t| {
        let mut excluded = vec![*t];
        if let Some(inv) = kg.inverse_triple(t) {
            excluded.push(inv);
        }
        kg.has_path_within(t.head, t.tail, max_len, &excluded)
    });
    triples
        .iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then_some(*t))
        .collect()
}
