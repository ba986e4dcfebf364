//! Online rule-weight learning.
//!
//! After every training batch the successful walks are compared against the
//! rule set. A ratio `μ` of observed to expected frequency is computed per
//! rule, clamped into `[ρ/(B·K), ρ·B·K]` and turned into a bounded additive
//! change of the rule's weight:
//!
//! ```text
//! w ← clamp(w + w · 2α · (μ − 1)/(μ + 1), 0, 1)
//! ```
//!
//! Two ways of computing `μ` are provided: the naive per-rule match count and
//! the two-hop product, which gives partial credit to rules whose consecutive
//! step pairs (fragments) show up in successful walks.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{extract_fragments, Fragment, MetaStep, RuleId, RuleSet};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Weights never change.
    None,
    /// Per-rule exact-match frequency.
    Naive,
    /// Product over two-hop fragments.
    #[default]
    P2h,
}

/// How observed fragment counts enter the two-hop product.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FragmentScale {
    /// Raw counts; the ratio grows with the number of successes in the batch.
    #[default]
    Count,
    /// Counts divided by the total number of observed fragments.
    Frequency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    weights: BTreeMap<RuleId, f64>,
    alpha: f64,
}

impl WeightTable {
    /// Every rule starts at its declared initial weight.
    pub fn new(rules: &RuleSet, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config("train.alpha", format!("{alpha} is outside [0, 1]")));
        }
        Ok(WeightTable {
            weights: rules.rules().iter().map(|r| (r.id, r.weight)).collect(),
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn get(&self, rule: RuleId) -> Option<f64> {
        self.weights.get(&rule).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RuleId, f64)> + '_ {
        self.weights.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn set(&mut self, rule: RuleId, weight: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidRule(format!("weight {weight} outside [0, 1]")));
        }
        match self.weights.get_mut(&rule) {
            Some(w) => {
                *w = weight;
                Ok(())
            }
            None => Err(Error::InvalidRule(format!("unknown rule id {rule}"))),
        }
    }

    /// Apply a signal's clamped ratios.
    pub fn apply(&mut self, signal: &UpdateSignal) {
        for e in &signal.entries {
            if let Some(w) = self.weights.get_mut(&e.rule) {
                *w = phi_update(*w, e.clamped, self.alpha);
            }
        }
    }

    /// `epoch,rule_id,weight` rows; weights use the shortest round-tripping decimal.
    pub fn write_csv_rows<W: Write>(&self, epoch: usize, out: &mut W) -> std::io::Result<()> {
        for (id, w) in &self.weights {
            writeln!(out, "{epoch},{id},{w}")?;
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalEntry {
    pub rule: RuleId,
    pub raw: f64,
    pub clamped: f64,
}

/// Per-rule ratios of one batch, before and after clamping.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateSignal {
    pub entries: Vec<SignalEntry>,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl UpdateSignal {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, rule: RuleId) -> Option<&SignalEntry> {
        self.entries.iter().find(|e| e.rule == rule)
    }

    fn from_raw(raw: Vec<(RuleId, f64)>, rho: usize, batch_size: usize, rollouts: usize) -> Self {
        let (mu_min, mu_max) = mu_bounds(rho, batch_size, rollouts);
        UpdateSignal {
            entries: raw
                .into_iter()
                .map(|(rule, raw)| SignalEntry {
                    rule,
                    raw,
                    clamped: clamp_mu(raw, rho, batch_size, rollouts),
                })
                .collect(),
            mu_min,
            mu_max,
        }
    }
}

/// Naive ratio per rule: count over the uniform expectation `total / ρ`.
/// Empty when nothing matched.
pub fn naive_mu(counts: &BTreeMap<RuleId, u64>, rho: usize) -> Vec<(RuleId, f64)> {
    let total: u64 = counts.values().sum();
    if total == 0 || rho == 0 {
        return Vec::new();
    }
    let expected = total as f64 / rho as f64;
    counts.iter().map(|(id, &c)| (*id, c as f64 / expected)).collect()
}

pub fn mu_bounds(rho: usize, batch_size: usize, rollouts: usize) -> (f64, f64) {
    let bk = (batch_size * rollouts) as f64;
    (rho as f64 / bk, rho as f64 * bk)
}

pub fn clamp_mu(mu: f64, rho: usize, batch_size: usize, rollouts: usize) -> f64 {
    let (lo, hi) = mu_bounds(rho, batch_size, rollouts);
    mu.clamp(lo, hi)
}

pub fn phi_update(w: f64, mu: f64, alpha: f64) -> f64 {
    let phi = w * 2.0 * alpha * (mu - 1.0) / (mu + 1.0);
    (w + phi).clamp(0.0, 1.0)
}

/// Fragments observed in a batch of walks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FragmentCounts {
    pub counts: BTreeMap<Fragment, u64>,
    pub total: u64,
}

impl FragmentCounts {
    pub fn observe<'a>(paths: impl IntoIterator<Item = &'a [MetaStep]>) -> Self {
        let mut out = FragmentCounts::default();
        for p in paths {
            for f in extract_fragments(p) {
                *out.counts.entry(f).or_insert(0) += 1;
                out.total += 1;
            }
        }
        out
    }

    pub fn unique(&self) -> usize {
        self.counts.len()
    }

    /// Uniform expectation over the distinct fragments seen.
    pub fn expected(&self) -> f64 {
        1.0 / self.unique() as f64
    }

    pub fn observed(&self, f: &Fragment, scale: FragmentScale) -> f64 {
        let c = self.counts.get(f).copied().unwrap_or(0) as f64;
        match scale {
            FragmentScale::Count => c,
            FragmentScale::Frequency => c / self.total as f64,
        }
    }
}

/// Two-hop product per rule. A rule with a single step has no fragments and gets 1.
pub fn p2h_values(rules: &RuleSet, counts: &FragmentCounts, scale: FragmentScale) -> Vec<(RuleId, f64)> {
    if counts.unique() == 0 {
        return Vec::new();
    }
    let e = counts.expected();
    rules
        .rules()
        .iter()
        .map(|r| {
            let v = extract_fragments(r.body.steps())
                .iter()
                .fold(1.0, |acc, f| acc * (counts.observed(f, scale) / e));
            (r.id, v)
        })
        .collect()
}

/// Naive update from the matched rule of every successful walk (`None` when no rule matched).
pub fn naive_batch_update(
    table: &mut WeightTable,
    rules: &RuleSet,
    matched: &[Option<RuleId>],
    batch_size: usize,
    rollouts: usize,
) -> UpdateSignal {
    let mut counts: BTreeMap<RuleId, u64> = rules.rules().iter().map(|r| (r.id, 0)).collect();
    for id in matched.iter().flatten() {
        if let Some(c) = counts.get_mut(id) {
            *c += 1;
        }
    }
    let signal = UpdateSignal::from_raw(naive_mu(&counts, rules.len()), rules.len(), batch_size, rollouts);
    table.apply(&signal);
    signal
}

/// Two-hop update from the NO_OP-stripped metapaths of every successful walk.
pub fn p2h_batch_update(
    table: &mut WeightTable,
    rules: &RuleSet,
    success_paths: &[&[MetaStep]],
    batch_size: usize,
    rollouts: usize,
    scale: FragmentScale,
) -> UpdateSignal {
    if success_paths.is_empty() || rules.is_empty() {
        return UpdateSignal::default();
    }
    let counts = FragmentCounts::observe(success_paths.iter().copied());
    // A rule set made only of single steps has no fragments; one keeps the bounds defined.
    let rho = rules.fragment_universe().len().max(1);
    let signal = UpdateSignal::from_raw(p2h_values(rules, &counts, scale), rho, batch_size, rollouts);
    table.apply(&signal);
    signal
}
