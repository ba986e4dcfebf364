use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{PolicyConfig, PolicyParams, Real};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

/// One tensor as little-endian bytes, base64-encoded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub data: String,
}

/// Serialized policy. Embedding rows are tied to entity and relation labels so
/// the policy can be loaded against a graph whose ids were assigned differently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: PolicyConfig,
    pub entity_labels: Vec<String>,
    pub relation_labels: Vec<String>,
    pub tensors: Vec<TensorRecord>,
    /// `(rule id, weight)` pairs, if the run learned rule weights.
    #[serde(default)]
    pub rule_weights: Vec<(u32, f64)>,
    #[serde(default)]
    pub epoch: usize,
}

impl Checkpoint {
    pub fn from_params<T: Real>(params: &PolicyParams<T>, kg: &KnowledgeGraph) -> Result<Self> {
        if params.num_entities() != kg.num_nodes() || params.num_relations() != kg.schema().num_relations() {
            return Err(Error::Checkpoint(format!(
                "policy has {} entities and {} relations, graph has {} and {}",
                params.num_entities(),
                params.num_relations(),
                kg.num_nodes(),
                kg.schema().num_relations()
            )));
        }
        let tensors = params
            .layout()
            .into_iter()
            .zip(params.slices())
            .map(|((name, shape), data)| {
                let mut bytes = Vec::with_capacity(data.len() * T::WIDTH);
                for x in data {
                    x.push_le(&mut bytes);
                }
                TensorRecord {
                    name,
                    dtype: T::DTYPE.to_string(),
                    shape,
                    data: STANDARD.encode(bytes),
                }
            })
            .collect();
        Ok(Checkpoint {
            config: params.config,
            entity_labels: kg.nodes().iter().map(|n| n.label.clone()).collect(),
            relation_labels: kg.schema().relations().iter().map(|r| r.label.clone()).collect(),
            tensors,
            rule_weights: Vec::new(),
            epoch: 0,
        })
    }

    /// Parameters in the checkpoint's own id order.
    pub fn params<T: Real>(&self) -> Result<PolicyParams<T>> {
        let mut params: PolicyParams<T> = PolicyParams::init(
            self.config,
            self.entity_labels.len(),
            self.relation_labels.len(),
            0,
        );
        let layout = params.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((slot, (name, shape)), rec) in params.slices_mut().into_iter().zip(layout).zip(&self.tensors) {
            if rec.name != name || rec.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                    rec.name, rec.shape
                )));
            }
            if rec.dtype != T::DTYPE {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has dtype {}, expected {}",
                    rec.dtype,
                    T::DTYPE
                )));
            }
            let bytes = STANDARD
                .decode(&rec.data)
                .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
            if bytes.len() != slot.len() * T::WIDTH {
                return Err(Error::Checkpoint(format!("tensor `{name}` has {} bytes", bytes.len())));
            }
            for (x, chunk) in slot.iter_mut().zip(bytes.chunks_exact(T::WIDTH)) {
                *x = T::read_le(chunk);
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint tensors".into()));
        }
        Ok(params)
    }

    /// Parameters with embedding rows reordered to match `kg`'s ids.
    pub fn params_for<T: Real>(&self, kg: &KnowledgeGraph) -> Result<PolicyParams<T>> {
        let mut params = self.params::<T>()?;
        let ent_index: HashMap<&str, usize> = self
            .entity_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let rel_index: HashMap<&str, usize> = self
            .relation_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        if kg.num_nodes() != self.entity_labels.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} entities, graph has {}",
                self.entity_labels.len(),
                kg.num_nodes()
            )));
        }
        if kg.schema().num_relations() != self.relation_labels.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} relations, graph has {}",
                self.relation_labels.len(),
                kg.schema().num_relations()
            )));
        }
        let old_entity = params.entity.clone();
        for (new, node) in kg.nodes().iter().enumerate() {
            let old = *ent_index
                .get(node.label.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("entity `{}` not in checkpoint", node.label)))?;
            params.entity.row_mut(new).assign(&old_entity.row(old));
        }
        let old_relation = params.relation.clone();
        for (new, rel) in kg.schema().relations().iter().enumerate() {
            let old = *rel_index
                .get(rel.label.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("relation `{}` not in checkpoint", rel.label)))?;
            params.relation.row_mut(new).assign(&old_relation.row(old));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::moa_schema;
    use crate::kg::GraphBuilder;

    fn graph(order: &[(&str, &str, &str)]) -> KnowledgeGraph {
        let mut b = GraphBuilder::new(moa_schema());
        for (h, r, t) in order {
            b.add(h, r, t).unwrap();
        }
        b.build().unwrap()
    }

    fn cfg() -> PolicyConfig {
        PolicyConfig {
            embedding_size: 3,
            hidden_size: 4,
            lstm_layers: 2,
            max_branching: 10,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let kg = graph(&[("d1", "downregulates", "p1"), ("p1", "participates", "b1")]);
        let p: PolicyParams<f32> = PolicyParams::init(cfg(), kg.num_nodes(), kg.schema().num_relations(), 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::from_params(&p, &kg).unwrap().save(&path).unwrap();
        let back: PolicyParams<f32> = Checkpoint::load(&path).unwrap().params_for(&kg).unwrap();
        for (a, b) in p.slices().iter().zip(back.slices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(Checkpoint::load(&path).unwrap().params::<f64>().is_err());
    }

    #[test]
    fn rows_follow_labels_across_id_orders() {
        let a = graph(&[("d1", "downregulates", "p1"), ("p1", "participates", "b1")]);
        let b = graph(&[("p1", "participates", "b1"), ("d1", "downregulates", "p1")]);
        assert_ne!(a.node_id("d1"), b.node_id("d1"));
        let p: PolicyParams<f64> = PolicyParams::init(cfg(), 3, a.schema().num_relations(), 2);
        let ck = Checkpoint::from_params(&p, &a).unwrap();
        let q: PolicyParams<f64> = ck.params_for(&b).unwrap();
        for label in ["d1", "p1", "b1"] {
            let ia = a.node_id(label).unwrap().index();
            let ib = b.node_id(label).unwrap().index();
            assert_eq!(p.entity.row(ia), q.entity.row(ib));
        }
        assert_eq!(p.lstm, q.lstm);
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let kg = graph(&[("d1", "downregulates", "p1")]);
        let p: PolicyParams<f32> = PolicyParams::init(cfg(), kg.num_nodes(), kg.schema().num_relations(), 1);
        let mut ck = Checkpoint::from_params(&p, &kg).unwrap();
        ck.tensors[2].data = "AAAA".into();
        assert!(matches!(ck.params::<f32>(), Err(Error::Checkpoint(_))));
    }
}
