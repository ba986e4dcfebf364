//! Rule-guided reinforcement-learning walker over typed knowledge graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`kg`] – immutable typed triple store, inverse edges, splits, reachability.
//! * [`rules`] – metapaths, metapath-based rules, two-hop fragments.
//! * [`policy`] – LSTM walker policy with hand-written reverse-mode gradients.
//! * [`ruleweights`] – online rule-weight learning (naive and two-hop joint probability).
//! * [`walker`] – episodic environment, rewards and the REINFORCE trainer.
//! * [`evalkit`] – ranking, standard/pruned metrics, trajectory analysis, DWPC.
//! * [`graphops`] – degree-preserving permutation, degree trimming, relation stripping.
//! * [`synthgen`] – synthetic graphs with planted rule-conforming mechanisms.
//! * [`config`] – run configuration and presets.
//!
//! Data-parallel loops (rollouts, ranking, DWPC, reachability) run on rayon when
//! the `parallel` feature is enabled and fall back to plain iterators otherwise.
//! See [`par::Execution`].

pub mod config;
pub mod error;
pub mod evalkit;
pub mod graphops;
pub mod kg;
pub mod par;
pub mod policy;
pub mod rules;
pub mod ruleweights;
pub mod synthgen;
pub mod walker;

pub use error::{Error, Result};
