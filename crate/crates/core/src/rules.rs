//! Metapaths, metapath-based rules and two-hop fragments.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{NodeTypeId, RelationId, Schema};

/// Weight every rule starts from unless the rules file says otherwise.
pub const DEFAULT_RULE_WEIGHT: f64 = 0.5;

/// One typed hop of a metapath.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetaStep {
    pub relation: RelationId,
    pub src_type: NodeTypeId,
    pub dst_type: NodeTypeId,
}

impl MetaStep {
    pub fn of(schema: &Schema, relation: RelationId) -> Self {
        let r = schema.relation(relation);
        MetaStep {
            relation,
            src_type: r.src_type,
            dst_type: r.dst_type,
        }
    }
}

/// A non-empty chain of steps where each step starts at the type the previous one ended at.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Metapath(Vec<MetaStep>);

impl Metapath {
    pub fn new(steps: Vec<MetaStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidRule("metapath must have at least one step".into()));
        }
        if steps.windows(2).any(|w| w[0].dst_type != w[1].src_type) {
            return Err(Error::InvalidRule("metapath steps do not chain".into()));
        }
        Ok(Metapath(steps))
    }

    pub fn from_relations(schema: &Schema, relations: &[RelationId]) -> Result<Self> {
        Metapath::new(relations.iter().map(|&r| MetaStep::of(schema, r)).collect())
    }

    pub fn steps(&self) -> &[MetaStep] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn src_type(&self) -> NodeTypeId {
        self.0[0].src_type
    }

    pub fn dst_type(&self) -> NodeTypeId {
        self.0[self.0.len() - 1].dst_type
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.0.iter().map(|s| s.relation)
    }

    pub fn display<'a>(&'a self, schema: &'a Schema) -> SignatureDisplay<'a> {
        SignatureDisplay { steps: &self.0, schema }
    }
}

/// `rel1>rel2>rel3`, the compact form used in logs and histograms.
pub struct SignatureDisplay<'a> {
    steps: &'a [MetaStep],
    schema: &'a Schema,
}

impl fmt::Display for SignatureDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("NO_OP");
        }
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(">")?;
            }
            f.write_str(&self.schema.relation(s.relation).label)?;
        }
        Ok(())
    }
}

pub fn signature(schema: &Schema, steps: &[MetaStep]) -> String {
    SignatureDisplay { steps, schema }.to_string()
}

/// Two consecutive metapath steps sharing a node type.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fragment(pub MetaStep, pub MetaStep);

/// Consecutive step pairs, in order and with multiplicity.
pub fn extract_fragments(steps: &[MetaStep]) -> Vec<Fragment> {
    steps.windows(2).map(|w| Fragment(w[0], w[1])).collect()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u32);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleHead {
    pub relation: RelationId,
    pub src_type: NodeTypeId,
    pub dst_type: NodeTypeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetapathRule {
    pub id: RuleId,
    pub head: RuleHead,
    pub body: Metapath,
    /// Initial weight; the learned value lives in a `WeightTable`.
    pub weight: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RuleSet {
    rules: Vec<MetapathRule>,
    by_body: HashMap<Vec<MetaStep>, usize>,
    fragment_universe: BTreeSet<Fragment>,
}

impl RuleSet {
    pub fn new(rules: Vec<MetapathRule>) -> Result<Self> {
        let mut by_body = HashMap::with_capacity(rules.len());
        let mut ids = HashSet::new();
        let mut fragment_universe = BTreeSet::new();
        for (i, rule) in rules.iter().enumerate() {
            if !ids.insert(rule.id) {
                return Err(Error::InvalidRule(format!("duplicate rule id {}", rule.id)));
            }
            if !(0.0..=1.0).contains(&rule.weight) {
                return Err(Error::InvalidRule(format!("rule {} weight {} outside [0, 1]", rule.id, rule.weight)));
            }
            if rule.body.src_type() != rule.head.src_type || rule.body.dst_type() != rule.head.dst_type {
                return Err(Error::InvalidRule(format!(
                    "rule {} body endpoints do not match its head",
                    rule.id
                )));
            }
            if by_body.insert(rule.body.steps().to_vec(), i).is_some() {
                return Err(Error::InvalidRule(format!("rule {} repeats an earlier body", rule.id)));
            }
            fragment_universe.extend(extract_fragments(rule.body.steps()));
        }
        Ok(RuleSet {
            rules,
            by_body,
            fragment_universe,
        })
    }

    pub fn empty() -> Self {
        RuleSet::default()
    }

    pub fn rules(&self) -> &[MetapathRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: RuleId) -> Option<&MetapathRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn fragment_universe(&self) -> &BTreeSet<Fragment> {
        &self.fragment_universe
    }

    /// The rule whose body equals `steps` exactly. NO_OPs must already be stripped.
    pub fn match_steps(&self, steps: &[MetaStep]) -> Option<RuleId> {
        self.by_body.get(steps).map(|&i| self.rules[i].id)
    }

    pub fn match_path(&self, path: &Metapath) -> Option<RuleId> {
        self.match_steps(path.steps())
    }

    pub fn from_file(schema: &Schema, file: &RulesFile) -> Result<Self> {
        let rules = file
            .rules
            .iter()
            .enumerate()
            .map(|(i, spec)| spec.resolve(schema, RuleId(i as u32)))
            .collect::<Result<Vec<_>>>()?;
        RuleSet::new(rules)
    }

    pub fn load(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        RuleSet::from_file(schema, &RulesFile::load(path)?)
    }

    pub fn to_file(&self, schema: &Schema) -> RulesFile {
        RulesFile {
            blocklist: Vec::new(),
            forward_only: false,
            rules: self.rules.iter().map(|r| RuleSpec::from_rule(schema, r)).collect(),
        }
    }
}

/// Per-rule entry of a rules file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub head: String,
    /// `[relation, src_type, dst_type]` per step.
    pub body: Vec<[String; 3]>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    DEFAULT_RULE_WEIGHT
}

impl RuleSpec {
    fn resolve(&self, schema: &Schema, id: RuleId) -> Result<MetapathRule> {
        let head_rel = schema
            .relation_id(&self.head)
            .ok_or_else(|| Error::UnknownRelation(self.head.clone()))?;
        let h = schema.relation(head_rel);
        let head = RuleHead {
            relation: head_rel,
            src_type: h.src_type,
            dst_type: h.dst_type,
        };
        let mut steps = Vec::with_capacity(self.body.len());
        for [rel, src, dst] in &self.body {
            let r = schema.relation_id(rel).ok_or_else(|| Error::UnknownRelation(rel.clone()))?;
            let src = schema.node_type_id(src).ok_or_else(|| Error::UnknownNodeType(src.clone()))?;
            let dst = schema.node_type_id(dst).ok_or_else(|| Error::UnknownNodeType(dst.clone()))?;
            let decl = schema.relation(r);
            if decl.src_type != src || decl.dst_type != dst {
                return Err(Error::InvalidRule(format!(
                    "rule {id}: step `{rel}` does not match the relation's declared types"
                )));
            }
            steps.push(MetaStep {
                relation: r,
                src_type: src,
                dst_type: dst,
            });
        }
        Ok(MetapathRule {
            id,
            head,
            body: Metapath::new(steps).map_err(|e| Error::InvalidRule(format!("rule {id}: {e}")))?,
            weight: self.weight,
        })
    }

    fn from_rule(schema: &Schema, rule: &MetapathRule) -> Self {
        RuleSpec {
            head: schema.relation(rule.head.relation).label.clone(),
            body: rule
                .body
                .steps()
                .iter()
                .map(|s| {
                    [
                        schema.relation(s.relation).label.clone(),
                        schema.node_type_name(s.src_type).to_string(),
                        schema.node_type_name(s.dst_type).to_string(),
                    ]
                })
                .collect(),
            weight: rule.weight,
        }
    }
}

/// Rules file: the rule list plus the enumeration constraints that produced it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesFile {
    /// Relations excluded from metapath enumeration.
    #[serde(default)]
    pub blocklist: Vec<String>,
    /// Exclude inverse relations from enumeration.
    #[serde(default)]
    pub forward_only: bool,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
}

impl RulesFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn constraints(&self, schema: &Schema) -> Result<MetapathConstraints> {
        let blocklist = self
            .blocklist
            .iter()
            .map(|l| schema.relation_id(l).ok_or_else(|| Error::UnknownRelation(l.clone())))
            .collect::<Result<_>>()?;
        Ok(MetapathConstraints {
            blocklist,
            forward_only: self.forward_only,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetapathConstraints {
    pub blocklist: BTreeSet<RelationId>,
    pub forward_only: bool,
}

impl MetapathConstraints {
    /// Forward edges only, excluding the query relation.
    pub fn mechanistic(query: RelationId) -> Self {
        MetapathConstraints {
            blocklist: [query].into_iter().collect(),
            forward_only: true,
        }
    }

    fn allows(&self, schema: &Schema, r: RelationId) -> bool {
        !self.blocklist.contains(&r) && !(self.forward_only && schema.relation(r).is_inverse)
    }
}

/// All chained step sequences from `src` to `dst` with `1..=max_len` steps,
/// ordered by length and then lexicographically by relation id.
pub fn enumerate_metapaths(
    schema: &Schema,
    src: NodeTypeId,
    dst: NodeTypeId,
    max_len: usize,
    constraints: &MetapathConstraints,
) -> Vec<Metapath> {
    let allowed: Vec<RelationId> = schema
        .relations()
        .iter()
        .map(|r| r.id)
        .filter(|&r| constraints.allows(schema, r))
        .collect();
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for len in 1..=max_len {
        extend(schema, &allowed, src, dst, len, &mut stack, &mut out);
    }
    out
}

fn extend(
    schema: &Schema,
    allowed: &[RelationId],
    at: NodeTypeId,
    dst: NodeTypeId,
    remaining: usize,
    stack: &mut Vec<MetaStep>,
    out: &mut Vec<Metapath>,
) {
    if remaining == 0 {
        if at == dst {
            out.push(Metapath(stack.clone()));
        }
        return;
    }
    for &r in allowed {
        let step = MetaStep::of(schema, r);
        if step.src_type != at {
            continue;
        }
        stack.push(step);
        extend(schema, allowed, step.dst_type, dst, remaining - 1, stack, out);
        stack.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::moa_schema;
    use crate::kg::RelationDecl;
    use proptest::prelude::*;

    fn rel(schema: &Schema, l: &str) -> RelationId {
        schema.relation_id(l).unwrap()
    }

    fn names(schema: &Schema, paths: &[Metapath]) -> Vec<String> {
        paths.iter().map(|p| p.display(schema).to_string()).collect()
    }

    #[test]
    fn mechanistic_metapaths() {
        let schema = moa_schema().with_inverses();
        let drug = schema.node_type_id("Drug").unwrap();
        let bp = schema.node_type_id("BP").unwrap();
        let c = MetapathConstraints::mechanistic(rel(&schema, "induces"));
        let four = enumerate_metapaths(&schema, drug, bp, 4, &c);
        assert_eq!(
            names(&schema, &four),
            vec![
                "downregulates>participates",
                "upregulates>participates",
                "downregulates>interacts>participates",
                "upregulates>interacts>participates",
                "downregulates>interacts>interacts>participates",
                "upregulates>interacts>interacts>participates",
            ]
        );
        let two = enumerate_metapaths(&schema, drug, bp, 2, &c);
        assert_eq!(names(&schema, &two), names(&schema, &four[..2]));
    }

    #[test]
    fn no_relation_leaving_source() {
        let schema = moa_schema();
        let bp = schema.node_type_id("BP").unwrap();
        let drug = schema.node_type_id("Drug").unwrap();
        assert!(enumerate_metapaths(&schema, bp, drug, 4, &MetapathConstraints::default()).is_empty());
    }

    #[test]
    fn fragments() {
        let s = moa_schema();
        let body = Metapath::from_relations(
            &s,
            &[rel(&s, "upregulates"), rel(&s, "interacts"), rel(&s, "interacts"), rel(&s, "participates")],
        )
        .unwrap();
        let f = extract_fragments(body.steps());
        assert_eq!(f.len(), 3);
        assert_eq!(f[0].0.relation, rel(&s, "upregulates"));
        assert_eq!(f[0].1.relation, rel(&s, "interacts"));
        assert_eq!((f[1].0.relation, f[1].1.relation), (rel(&s, "interacts"), rel(&s, "interacts")));
        assert_eq!((f[2].0.relation, f[2].1.relation), (rel(&s, "interacts"), rel(&s, "participates")));

        let two = Metapath::from_relations(&s, &[rel(&s, "upregulates"), rel(&s, "participates")]).unwrap();
        assert_eq!(extract_fragments(two.steps()).len(), 1);

        let i = rel(&s, "interacts");
        let triple = Metapath::from_relations(&s, &[i, i, i]).unwrap();
        let f = extract_fragments(triple.steps());
        assert_eq!(f.len(), 2);
        assert_eq!(f[0], f[1]);
    }

    fn rules_file() -> RulesFile {
        toml::from_str(
            r#"
blocklist = ["induces"]
forward_only = true
[[rules]]
head = "induces"
body = [["upregulates", "Drug", "Protein"], ["interacts", "Protein", "Protein"], ["participates", "Protein", "BP"]]
[[rules]]
head = "induces"
body = [["downregulates", "Drug", "Protein"], ["participates", "Protein", "BP"]]
weight = 0.25
"#,
        )
        .unwrap()
    }

    #[test]
    fn matching() {
        let s = moa_schema().with_inverses();
        let rules = RuleSet::from_file(&s, &rules_file()).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules.rules()[0].weight, DEFAULT_RULE_WEIGHT);
        assert_eq!(rules.rules()[1].weight, 0.25);
        // Cortisone acetate -upregulates-> GC receptor -interacts-> COX -participates-> inflammation.
        let cortisone = Metapath::from_relations(
            &s,
            &[rel(&s, "upregulates"), rel(&s, "interacts"), rel(&s, "participates")],
        )
        .unwrap();
        assert_eq!(rules.match_path(&cortisone), Some(RuleId(0)));
        // Drug1 -induces-> BP1 <-induces- Drug2 -induces-> BP2.
        let associative =
            Metapath::from_relations(&s, &[rel(&s, "induces"), rel(&s, "_induces"), rel(&s, "induces")]).unwrap();
        assert_eq!(rules.match_path(&associative), None);
        assert_eq!(RuleSet::empty().match_path(&cortisone), None);
        assert_eq!(rules.fragment_universe().len(), 3);
    }

    #[test]
    fn rejects_bad_rules() {
        let s = moa_schema();
        let mut f = rules_file();
        f.rules.push(f.rules[0].clone());
        assert!(RuleSet::from_file(&s, &f).unwrap_err().to_string().contains("repeats"));

        let mut f = rules_file();
        f.rules[0].body[0][2] = "BP".into();
        assert!(RuleSet::from_file(&s, &f).is_err());

        let mut f = rules_file();
        f.rules[0].body.pop();
        assert!(RuleSet::from_file(&s, &f).is_err());

        let mut f = rules_file();
        f.rules[1].weight = 1.5;
        assert!(RuleSet::from_file(&s, &f).is_err());
    }

    #[test]
    fn rules_file_roundtrip() {
        let s = moa_schema();
        let rules = RuleSet::from_file(&s, &rules_file()).unwrap();
        let text = rules.to_file(&s).to_toml_string().unwrap();
        let back = RuleSet::from_file(&s, &toml::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.rules(), rules.rules());
    }

    /// Independent enumeration: all relation sequences of each length by
    /// counting in base |relations|, keeping the chained, allowed ones.
    fn brute_force_count(schema: &Schema, src: NodeTypeId, dst: NodeTypeId, max_len: usize, c: &MetapathConstraints) -> usize {
        let nr = schema.num_relations();
        let mut count = 0;
        for len in 1..=max_len {
            for code in 0..nr.pow(len as u32) {
                let mut x = code;
                let mut seq = Vec::new();
                for _ in 0..len {
                    seq.push(RelationId::from_index(x % nr));
                    x /= nr;
                }
                if seq.iter().any(|r| c.blocklist.contains(r) || (c.forward_only && schema.relation(*r).is_inverse)) {
                    continue;
                }
                let steps: Vec<_> = seq.iter().map(|&r| MetaStep::of(schema, r)).collect();
                if steps[0].src_type == src
                    && steps[len - 1].dst_type == dst
                    && steps.windows(2).all(|w| w[0].dst_type == w[1].src_type)
                {
                    count += 1;
                }
            }
        }
        count
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn enumeration_matches_brute_force(
            n_types in 1usize..=6,
            sigs in proptest::collection::vec((0usize..6, 0usize..6), 1..6),
            max_len in 1usize..=4,
            with_inverses in any::<bool>(),
            block_first in any::<bool>(),
            forward_only in any::<bool>(),
        ) {
            let types: Vec<String> = (0..n_types).map(|i| format!("T{i}")).collect();
            let decls: Vec<RelationDecl> = sigs.iter().enumerate().map(|(i, (a, b))| RelationDecl {
                label: format!("r{i}"),
                src: types[a % n_types].clone(),
                dst: types[b % n_types].clone(),
            }).collect();
            let mut schema = Schema::new(types, &decls, false).unwrap();
            if with_inverses {
                schema = schema.with_inverses();
            }
            let mut c = MetapathConstraints { forward_only, ..Default::default() };
            if block_first {
                c.blocklist.insert(RelationId(0));
            }
            for s in 0..n_types {
                for d in 0..n_types {
                    let (s, d) = (NodeTypeId::from_index(s), NodeTypeId::from_index(d));
                    let got = enumerate_metapaths(&schema, s, d, max_len, &c);
                    prop_assert_eq!(got.len(), brute_force_count(&schema, s, d, max_len, &c));
                    let set: HashSet<_> = got.iter().collect();
                    prop_assert_eq!(set.len(), got.len());
                    for w in got.windows(2) {
                        let a: Vec<_> = w[0].relations().collect();
                        let b: Vec<_> = w[1].relations().collect();
                        prop_assert!((a.len(), a.clone()) < (b.len(), b.clone()));
                    }
                }
            }
        }

        #[test]
        fn fragment_count(len in 1usize..8) {
            let s = moa_schema();
            let i = s.relation_id("interacts").unwrap();
            let p = Metapath::from_relations(&s, &vec![i; len]).unwrap();
            prop_assert_eq!(extract_fragments(p.steps()).len(), len - 1);
        }
    }
}
