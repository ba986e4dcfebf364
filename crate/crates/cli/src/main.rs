//! `metawalk`: train, evaluate and probe rule-guided graph walkers.
//!
//! Every subcommand reads one TOML run config, writes its artifacts into the
//! config's `output` directory and echoes the resolved config there as
//! `config.toml`. Exit status is 0 on success, 1 for configuration errors and
//! 2 for failures while running.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use metawalk_core::config::{Preset, RunConfig};
use metawalk_core::evalkit::{
    classify_trajectories, compute_metrics, dwpc_predictions, pruned_metrics, rank_queries, write_predictions,
    MetricsReport, RankedPrediction,
};
use metawalk_core::graphops::{strip_relations, trim_by_degree, xswap_permute};
use metawalk_core::kg::{filter_reachable, load_triples, split_triples, KnowledgeGraph, Schema, SplitFile, SplitSet};
use metawalk_core::policy::Checkpoint;
use metawalk_core::rules::{enumerate_metapaths, Metapath, MetapathConstraints, RuleSet, RulesFile};
use metawalk_core::synthgen::generate_synthetic;
use metawalk_core::walker::{
    evaluation_queries, rollout_batch, train_with, walk_graph, write_trajectory_log, Params, Query, Trajectory,
};

#[derive(Parser, Debug)]
#[command(name = "metawalk", version, about = "Rule-guided reinforcement-learning walks over typed knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Preset layered under the config's [train] table.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides `output`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Directory holding triples.tsv, schema.toml, rules.toml and splits.json;
    /// overrides the `[data]` paths that exist in it.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy and rule weights, then evaluate on the configured split.
    Train(Common),
    /// Rank held-out triples with a saved checkpoint.
    Evaluate(Common),
    /// Degree-preserving edge swaps; writes a permuted dataset.
    Permute(Common),
    /// Remove edges of one relation between the highest-degree nodes; writes a trimmed dataset.
    Trim(Common),
    /// List metapaths between the query relation's endpoint types and write them as rules.
    EnumerateMetapaths(Common),
    /// Rank held-out triples by degree-weighted path counts over the rule bodies.
    Dwpc(Common),
    /// Write a synthetic dataset with planted rule-conforming paths.
    GenerateSynthetic(Common),
    /// Histogram of the metapaths behind successful test walks.
    AnalyzeTrajectories(Common),
}

/// Error tagged with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: e.into(),
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 2, error: e.into() }
    }
}

type Run<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Run {
    let (common, f): (&Common, fn(&RunConfig) -> Run) = match &command {
        Command::Train(c) => (c, cmd_train),
        Command::Evaluate(c) => (c, cmd_evaluate),
        Command::Permute(c) => (c, cmd_permute),
        Command::Trim(c) => (c, cmd_trim),
        Command::EnumerateMetapaths(c) => (c, cmd_enumerate),
        Command::Dwpc(c) => (c, cmd_dwpc),
        Command::GenerateSynthetic(c) => (c, cmd_generate),
        Command::AnalyzeTrajectories(c) => (c, cmd_analyze),
    };
    let config = resolve_config(common).map_err(config_error)?;
    fs::create_dir_all(&config.output)
        .with_context(|| format!("creating output directory {}", config.output.display()))
        .map_err(config_error)?;
    write_text(&config.output.join("config.toml"), &config.to_toml_string()?)?;
    f(&config)
}

fn resolve_config(c: &Common) -> anyhow::Result<RunConfig> {
    let preset = c.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    let mut config = match &c.config {
        Some(path) => RunConfig::load(path, preset).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::from_toml_str("", preset)?,
    };
    if let Some(out) = &c.output {
        config.output = out.clone();
    }
    if let Some(seed) = c.seed {
        config.train.seed = seed;
    }
    if let Some(dir) = &c.data {
        let pick = |name: &str, slot: &mut Option<PathBuf>| {
            let p = dir.join(name);
            if p.exists() {
                *slot = Some(p);
            }
        };
        pick("triples.tsv", &mut config.data.triples);
        pick("schema.toml", &mut config.data.schema);
        pick("rules.toml", &mut config.data.rules);
        pick("splits.json", &mut config.data.splits);
    }
    config.validate()?;
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// A loaded dataset; `splits` is `None` only for commands that do not need one.
struct Dataset {
    schema: Schema,
    kg: KnowledgeGraph,
    rules_file: Option<RulesFile>,
    rules: RuleSet,
    splits: Option<SplitSet>,
}

fn load_dataset(config: &RunConfig, need_rules: bool, need_splits: bool) -> Run<Dataset> {
    let schema_path = config.require("schema").map_err(config_error)?;
    let triples_path = config.require("triples").map_err(config_error)?;
    let rules_path = if need_rules {
        Some(config.require("rules").map_err(config_error)?)
    } else {
        config.data.rules.as_deref().filter(|p| p.exists())
    };
    let schema = Schema::load(schema_path).context("loading schema")?;
    let mut kg = load_triples(triples_path, schema.clone()).context("loading triples")?;
    if config.data.add_inverses {
        kg = kg.add_inverse_edges()?;
    }
    let rules_file = rules_path
        .map(|p| RulesFile::load(p).with_context(|| format!("loading rules {}", p.display())))
        .transpose()?;
    let rules = match &rules_file {
        Some(f) => RuleSet::from_file(kg.schema(), f).context("resolving rules")?,
        None => RuleSet::empty(),
    };
    let splits = if let Some(path) = config.data.splits.as_deref() {
        let path = config.require("splits").map_err(config_error).map(|_| path)?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: SplitFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Some(SplitSet::from_file(&kg, &file).context("resolving splits")?)
    } else if let Some(label) = &config.data.query_relation {
        let rel = kg
            .schema()
            .relation_id(label)
            .ok_or_else(|| config_error(anyhow!("data.query_relation: unknown relation `{label}`")))?;
        Some(split_triples(&kg, rel, config.data.split, config.train.seed)?)
    } else if need_splits {
        return Err(config_error(anyhow!("data.splits: missing (or set data.query_relation)")));
    } else {
        None
    };
    Ok(Dataset {
        schema,
        kg,
        rules_file,
        rules,
        splits,
    })
}

fn eval_queries(config: &RunConfig, kg: &KnowledgeGraph, splits: &SplitSet) -> Vec<Query> {
    let held = if config.eval.split == "valid" { &splits.valid } else { &splits.test };
    let held = match config.eval.reachable_within {
        Some(max_len) => {
            let kept = filter_reachable(&walk_graph(kg, splits), held, max_len, config.execution);
            log::info!("{} of {} held-out triples reachable within {max_len}", kept.len(), held.len());
            kept
        }
        None => held.clone(),
    };
    evaluation_queries(splits, &held)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    split: &'a str,
    seed: u64,
    standard: MetricsReport,
    pruned: MetricsReport,
    config: &'a RunConfig,
}

fn write_metrics(config: &RunConfig, graph: &KnowledgeGraph, preds: &[RankedPrediction]) -> Run {
    let report = MetricsFile {
        split: &config.eval.split,
        seed: config.train.seed,
        standard: compute_metrics(preds),
        pruned: pruned_metrics(preds),
        config,
    };
    log::info!(
        "{} MRR {:.4} Hits@1/3/10 {:.3}/{:.3}/{:.3}; pruned MRR {:.4}",
        config.eval.split,
        report.standard.mrr,
        report.standard.hits_at_1,
        report.standard.hits_at_3,
        report.standard.hits_at_10,
        report.pruned.mrr
    );
    write_json(&config.output.join("metrics.json"), &report)?;
    let mut out = create(&config.output.join("predictions.tsv"))?;
    write_predictions(graph, preds, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_train(config: &RunConfig) -> Run {
    let data = load_dataset(config, true, true)?;
    let splits = data.splits.as_ref().expect("required");
    let mut progress = create(&config.output.join("training.jsonl"))?;
    let outcome = train_with(&data.kg, splits, &data.rules, &config.train, config.execution, |log| {
        if let Err(e) = serde_json::to_writer(&mut progress, log).map(|_| progress.write_all(b"\n")) {
            log::warn!("could not write progress: {e}");
        }
    })?;
    progress.flush()?;

    let graph = walk_graph(&data.kg, splits);
    let mut checkpoint = Checkpoint::from_params(&outcome.params, &graph)?;
    checkpoint.rule_weights = outcome.best_weights.iter().map(|(id, w)| (id.0, w)).collect();
    checkpoint.epoch = outcome.best_epoch;
    checkpoint.save(config.output.join("checkpoint.json"))?;

    let mut csv = create(&config.output.join("rule_weights.csv"))?;
    outcome.write_weight_csv(&mut csv)?;
    csv.flush()?;
    let mut log = create(&config.output.join("trajectories.log"))?;
    outcome.write_trajectories(&graph, &mut log)?;
    log.flush()?;
    write_json(
        &config.output.join("training.json"),
        &serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "stopped_early": outcome.stopped_early,
            "history": outcome.history,
        }),
    )?;

    let queries = eval_queries(config, &data.kg, splits);
    let preds = rank(config, &outcome.params, &graph, &data.rules, &queries);
    write_metrics(config, &graph, &preds)
}

fn rank(config: &RunConfig, params: &Params, graph: &KnowledgeGraph, rules: &RuleSet, queries: &[Query]) -> Vec<RankedPrediction> {
    rank_queries(
        params,
        graph,
        rules,
        queries,
        config.train.test_rollouts,
        config.train.path_length,
        config.train.filtered,
        config.train.seed,
        config.execution,
    )
}

fn load_policy(config: &RunConfig, graph: &KnowledgeGraph) -> Run<Params> {
    let path = config
        .eval
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.output.join("checkpoint.json"));
    if !path.exists() {
        return Err(config_error(anyhow!("eval.checkpoint: {} does not exist", path.display())));
    }
    let checkpoint = Checkpoint::load(&path)?;
    Ok(checkpoint
        .params_for(graph)
        .with_context(|| format!("loading {}", path.display()))?)
}

fn cmd_evaluate(config: &RunConfig) -> Run {
    let data = load_dataset(config, true, true)?;
    let splits = data.splits.as_ref().expect("required");
    let graph = walk_graph(&data.kg, splits);
    let params = load_policy(config, &graph)?;
    let queries = eval_queries(config, &data.kg, splits);
    let preds = rank(config, &params, &graph, &data.rules, &queries);
    write_metrics(config, &graph, &preds)
}

fn cmd_analyze(config: &RunConfig) -> Run {
    let data = load_dataset(config, false, true)?;
    let splits = data.splits.as_ref().expect("required");
    let graph = walk_graph(&data.kg, splits);
    let params = load_policy(config, &graph)?;
    let queries = eval_queries(config, &data.kg, splits);
    let indexed: Vec<(usize, &Query)> = queries.iter().enumerate().collect();
    let successes: Vec<Trajectory> = rollout_batch(
        &params,
        &graph,
        &data.rules,
        &indexed,
        config.train.test_rollouts,
        config.train.path_length,
        &[config.train.seed, 0xA7A1],
        false,
        config.execution,
    )
    .into_iter()
    .filter(|t| t.success)
    .collect();
    let histogram = classify_trajectories(graph.schema(), &successes);
    let associative: usize = histogram.iter().filter(|s| s.associative).map(|s| s.count).sum();
    let rule_matched: usize = histogram.iter().filter(|s| s.rule.is_some()).map(|s| s.count).sum();
    log::info!(
        "{} successful walks: {associative} use inverse edges, {rule_matched} match a rule",
        successes.len()
    );
    write_json(
        &config.output.join("trajectory_analysis.json"),
        &serde_json::json!({
            "successful": successes.len(),
            "associative": associative,
            "rule_matched": rule_matched,
            "signatures": histogram,
        }),
    )?;
    let mut log = create(&config.output.join("trajectories.log"))?;
    write_trajectory_log(&graph, &successes, &mut log)?;
    log.flush()?;
    Ok(())
}

fn cmd_dwpc(config: &RunConfig) -> Run {
    let data = load_dataset(config, true, true)?;
    let splits = data.splits.as_ref().expect("required");
    let graph = walk_graph(&data.kg, splits);
    let metapaths: Vec<Metapath> = data
        .rules
        .rules()
        .iter()
        .filter(|r| r.head.relation == splits.relation)
        .map(|r| r.body.clone())
        .collect();
    if metapaths.is_empty() {
        return Err(config_error(anyhow!("data.rules: no rule has the query relation as its head")));
    }
    let queries = eval_queries(config, &data.kg, splits);
    let preds = dwpc_predictions(
        &graph,
        &queries,
        &metapaths,
        config.dwpc.damping,
        config.train.filtered,
        config.execution,
    )?;
    write_metrics(config, &graph, &preds)
}

/// Write a derived dataset: triples, the schema, the rules (if any) and a fresh split.
fn write_dataset(config: &RunConfig, data: &Dataset, kg: &KnowledgeGraph, relation: Option<&str>) -> Run {
    let forward = if kg.has_inverse_edges() {
        strip_relations(kg, |r| r.is_inverse)
    } else {
        kg.clone()
    };
    forward.save_triples(config.output.join("triples.tsv"))?;
    write_text(&config.output.join("schema.toml"), &data.schema.to_toml_string()?)?;
    if let Some(rules) = &data.rules_file {
        write_text(&config.output.join("rules.toml"), &rules.to_toml_string()?)?;
    }
    if let Some(label) = relation {
        let rel = forward.schema().relation_id(label).expect("relation of the source graph");
        let seed = data.splits.as_ref().map_or(config.train.seed, |s| s.seed);
        match split_triples(&forward, rel, config.data.split, seed) {
            Ok(s) => write_json(&config.output.join("splits.json"), &s.to_file(&forward))?,
            Err(e) => log::warn!("no split written: {e}"),
        }
    }
    Ok(())
}

fn query_label(data: &Dataset, config: &RunConfig) -> Option<String> {
    data.splits
        .as_ref()
        .map(|s| data.kg.relation_label(s.relation).to_string())
        .or_else(|| config.data.query_relation.clone())
}

fn cmd_permute(config: &RunConfig) -> Run {
    let data = load_dataset(config, false, false)?;
    let relations = if config.permute.relations.is_empty() {
        data.kg
            .schema()
            .relations()
            .iter()
            .filter(|r| !r.is_inverse)
            .map(|r| r.id)
            .collect()
    } else {
        config
            .permute
            .relations
            .iter()
            .map(|l| {
                data.kg
                    .schema()
                    .relation_id(l)
                    .ok_or_else(|| config_error(anyhow!("permute.relations: unknown relation `{l}`")))
            })
            .collect::<Run<Vec<_>>>()?
    };
    let (permuted, report) = xswap_permute(
        &data.kg,
        &relations,
        config.permute.attempts_factor,
        config.permute.seed,
    )?;
    if !report.degrees_preserved() {
        return Err(anyhow!("degree checksum changed during permutation").into());
    }
    log::info!(
        "{} of {} swaps accepted, edge Jaccard {:.3}",
        report.accepted,
        report.attempts,
        report.jaccard
    );
    write_json(&config.output.join("permutation.json"), &report)?;
    write_dataset(config, &data, &permuted, query_label(&data, config).as_deref())
}

fn cmd_trim(config: &RunConfig) -> Run {
    let data = load_dataset(config, false, false)?;
    let label = config
        .trim
        .relation
        .as_deref()
        .ok_or_else(|| config_error(anyhow!("trim.relation: missing")))?;
    let threshold = config
        .trim
        .threshold
        .ok_or_else(|| config_error(anyhow!("trim.threshold: missing")))?;
    let rel = data
        .kg
        .schema()
        .relation_id(label)
        .ok_or_else(|| config_error(anyhow!("trim.relation: unknown relation `{label}`")))?;
    let before = data.kg.relation_count(rel);
    let trimmed = trim_by_degree(&data.kg, rel, threshold)?;
    log::info!("{label}: {before} -> {} edges", trimmed.relation_count(rel));
    write_json(
        &config.output.join("trim.json"),
        &serde_json::json!({ "relation": label, "threshold": threshold, "before": before, "after": trimmed.relation_count(rel) }),
    )?;
    write_dataset(config, &data, &trimmed, query_label(&data, config).as_deref())
}

fn cmd_enumerate(config: &RunConfig) -> Run {
    let schema_path = config.require("schema").map_err(config_error)?;
    let schema = Schema::load(schema_path).context("loading schema")?;
    let schema = if config.data.add_inverses { schema.with_inverses() } else { schema };
    let label = config
        .data
        .query_relation
        .as_deref()
        .ok_or_else(|| config_error(anyhow!("data.query_relation: missing")))?;
    let query = schema
        .relation_id(label)
        .ok_or_else(|| config_error(anyhow!("data.query_relation: unknown relation `{label}`")))?;
    // Constraints come from an existing rules file when given, otherwise the
    // mechanistic default (forward edges, no query relation).
    let (constraints, blocklist, forward_only) = match config.data.rules.as_deref().filter(|p| p.exists()) {
        Some(p) => {
            let f = RulesFile::load(p).with_context(|| format!("loading rules {}", p.display()))?;
            (f.constraints(&schema)?, f.blocklist, f.forward_only)
        }
        None => (MetapathConstraints::mechanistic(query), vec![label.to_string()], true),
    };
    let head = schema.relation(query);
    let paths = enumerate_metapaths(&schema, head.src_type, head.dst_type, config.enumerate.max_len, &constraints);
    let rules = RuleSet::new(
        paths
            .into_iter()
            .enumerate()
            .map(|(i, body)| metawalk_core::rules::MetapathRule {
                id: metawalk_core::rules::RuleId(i as u32),
                head: metawalk_core::rules::RuleHead {
                    relation: query,
                    src_type: head.src_type,
                    dst_type: head.dst_type,
                },
                body,
                weight: metawalk_core::rules::DEFAULT_RULE_WEIGHT,
            })
            .collect(),
    )?;
    let mut file = rules.to_file(&schema);
    file.blocklist = blocklist;
    file.forward_only = forward_only;
    for r in rules.rules() {
        println!("{}\t{}", r.id, r.body.display(&schema));
    }
    log::info!("{} metapaths up to length {}", rules.len(), config.enumerate.max_len);
    write_text(&config.output.join("rules.toml"), &file.to_toml_string()?)?;
    Ok(())
}

fn cmd_generate(config: &RunConfig) -> Run {
    let out = generate_synthetic(&config.synth).map_err(|e| match e {
        metawalk_core::Error::Config { .. } => config_error(e),
        e => e.into(),
    })?;
    out.write_to(&config.output)?;
    log::info!(
        "{} nodes, {} triples, {} planted pairs written to {}",
        out.graph.num_nodes(),
        out.graph.num_triples(),
        out.truth.pairs.len(),
        config.output.display()
    );
    Ok(())
}
