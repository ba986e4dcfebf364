//! Sequential vs parallel execution of the data-parallel loops.
//!
//! Build without the `parallel` feature and both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use metawalk_core::evalkit::{dwpc_predictions, rank_queries};
use metawalk_core::kg::filter_reachable;
use metawalk_core::par::Execution;
use metawalk_core::policy::{PolicyConfig, PolicyParams};
use metawalk_core::rules::{Metapath, RuleSet};
use metawalk_core::synthgen::{generate_synthetic, SynthConfig};
use metawalk_core::walker::{evaluation_queries, rollout_batch, training_queries, walk_graph, Params, Query};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

struct Fixture {
    graph: metawalk_core::kg::KnowledgeGraph,
    rules: RuleSet,
    params: Params,
    train: Vec<Query>,
    test: Vec<Query>,
    held_out: Vec<metawalk_core::kg::Triple>,
}

fn fixture() -> Fixture {
    let out = generate_synthetic(&SynthConfig::default()).unwrap();
    let kg = out.graph.add_inverse_edges().unwrap();
    let rules = RuleSet::from_file(kg.schema(), &out.rules_file()).unwrap();
    let graph = walk_graph(&kg, &out.splits);
    let policy = PolicyConfig {
        embedding_size: 32,
        hidden_size: 32,
        lstm_layers: 1,
        max_branching: 150,
    };
    let params: Params = PolicyParams::init(policy, graph.num_nodes(), graph.schema().num_relations(), 1);
    Fixture {
        train: training_queries(&out.splits),
        test: evaluation_queries(&out.splits, &out.splits.test),
        held_out: out.splits.held_out(),
        graph,
        rules,
        params,
    }
}

fn benches(c: &mut Criterion) {
    let f = fixture();
    let indexed: Vec<(usize, &Query)> = f.train.iter().take(16).enumerate().collect();
    let metapaths: Vec<Metapath> = f.rules.rules().iter().map(|r| r.body.clone()).collect();

    let mut g = c.benchmark_group("rollouts");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rollout_batch(&f.params, &f.graph, &f.rules, &indexed, 20, 3, &[1], true, exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("ranking");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rank_queries(&f.params, &f.graph, &f.rules, &f.test, 50, 3, true, 1, exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("dwpc");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| dwpc_predictions(&f.graph, &f.test, &metapaths, 0.4, true, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("reachability");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| filter_reachable(&f.graph, &f.held_out, 3, exec))
        });
    }
    g.finish();
}

criterion_group! {
    name = parallel;
    config = Criterion::default().sample_size(10);
    targets = benches
}
criterion_main!(parallel);
