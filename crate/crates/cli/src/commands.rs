use std::fs;
use std::path::{Path, PathBuf};

use eden::config::RunConfig;
use eden::entropy::{one_dim_entropy, tree_entropy, two_dim_entropy, Partition};
use eden::graph::{load_digraph, walk_interruption, CycleMode, LoadedGraph};
use eden::nn::ParamStore;
use eden::pipeline::{build_stage, ensure_features, refine_stage, restore_session, run_pipeline, session_seed, TaskData};
use eden::predict::{evaluate, Examples, Session, Task};
use eden::rng::derive_seed;
use eden::tree::{MergeStrategy, PartitionTree};
use eden::{EdenError, Result};
use serde_json::{json, Value};

use crate::artifacts::OutputDir;
use crate::{BuildArgs, Command, Common, EntropyArgs, PredictArgs, RefineArgs, RefineOpts, TrainArgs, TreeOpts, WalkArgs};

const SPLIT_SALT: u64 = 0x73706c6974;

pub fn run(command: Command) -> Result<Value> {
    match command {
        Command::Entropy(a) => entropy(a),
        Command::BuildHkt(a) => build(a),
        Command::RefineHkt(a) => refine(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::WalkAnalysis(a) => walk_analysis(a),
    }
}

fn base_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| EdenError::file(path, e))?;
            let mut cfg = RunConfig::from_toml(&text)?;
            let file = std::path::absolute(path).map_err(|e| EdenError::file(path, e))?;
            if let Some(dir) = file.parent() {
                cfg.resolve_paths(dir);
            }
            cfg
        }
        None => RunConfig::with_seed(
            c.seed
                .ok_or_else(|| EdenError::Config("a seed is required: pass --seed or a config file".into()))?,
        ),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let absolute = |p: &PathBuf| std::path::absolute(p).map_err(|e| EdenError::file(p, e));
    if let Some(p) = &c.edges {
        cfg.data.edges = Some(absolute(p)?);
    }
    if let Some(p) = &c.features {
        cfg.data.features = Some(absolute(p)?);
    }
    if let Some(p) = &c.labels {
        cfg.data.labels = Some(absolute(p)?);
    }
    if let Some(s) = &c.split {
        cfg.data.split = Some(if s.starts_with("frac:") {
            s.clone()
        } else {
            absolute(&PathBuf::from(s))?.to_string_lossy().into_owned()
        });
    }
    if let Some(k) = c.num_classes {
        cfg.data.num_classes = Some(k);
    }
    Ok(cfg)
}

fn apply_tree(cfg: &mut RunConfig, t: &TreeOpts) -> Result<()> {
    if let Some(h) = t.height {
        cfg.tree.height = h;
    }
    match t.strategy.as_deref() {
        None => {}
        Some("exhaustive") => cfg.tree.strategy = MergeStrategy::Exhaustive,
        Some("monte-carlo") => {
            cfg.tree.strategy = MergeStrategy::MonteCarlo {
                samples: None,
                seed: derive_seed(cfg.seed, &[0x6d63]),
            }
        }
        Some(other) => return Err(EdenError::Config(format!("unknown merge strategy {other}"))),
    }
    if let Some(s) = t.mc_samples {
        match &mut cfg.tree.strategy {
            MergeStrategy::MonteCarlo { samples, .. } => *samples = Some(s),
            MergeStrategy::Exhaustive => {
                return Err(EdenError::Config("--mc-samples needs the monte-carlo strategy".into()));
            }
        }
    }
    Ok(())
}

fn apply_refine(cfg: &mut RunConfig, r: &RefineOpts) {
    if let Some(k) = r.kappa {
        cfg.refine.kappa = k;
    }
    if let Some(e) = r.epochs {
        cfg.refine.critic_epochs = e;
    }
    if let Some(d) = r.delta {
        cfg.refine.delta = d;
    }
    if let Some(a) = r.alternations {
        cfg.refine.alternations = a;
    }
}

fn load(cfg: &RunConfig) -> Result<LoadedGraph> {
    load_digraph(&cfg.sources()?)
}

fn read_tree(path: &Path, g: &eden::graph::DiGraph) -> Result<PartitionTree> {
    let text = fs::read_to_string(path).map_err(|e| EdenError::file(path, e))?;
    PartitionTree::from_json(&text, &g.add_sink_loops())
}

fn write_tree(out: &mut OutputDir, tree: &PartitionTree, loaded: &LoadedGraph) -> Result<()> {
    let mut dump = serde_json::to_value(tree.dump())?;
    dump["node_ids"] = json!(loaded.id_map);
    out.json("tree.json", dump)?;
    out.dot("tree.dot", &tree.to_dot())
}

fn entropy(a: EntropyArgs) -> Result<Value> {
    let cfg = base_config(&a.common)?;
    cfg.validate()?;
    let mut out = OutputDir::open(&a.common.out, "entropy", &["entropy.json"], &cfg, a.common.force)?;
    let loaded = load(&cfg)?;
    let g = loaded.graph.add_sink_loops();
    let mut report = json!({
        "n": g.n(),
        "m": loaded.graph.m(),
        "sink_loops": g.m() - loaded.graph.m(),
        "one_dim": one_dim_entropy(&g)?,
    });
    if let Some(path) = &a.partition {
        let text = fs::read_to_string(path).map_err(|e| EdenError::file(path, e))?;
        let index: std::collections::HashMap<u64, usize> = loaded.id_map.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut assignment = vec![usize::MAX; g.n()];
        for (line, content) in text.lines().enumerate() {
            let content = content.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let parts: Vec<&str> = content.split([',', ' ', '\t']).filter(|s| !s.is_empty()).collect();
            let bad = || EdenError::Parse {
                path: path.clone(),
                line: line + 1,
                msg: format!("expected `node,block`, found {content:?}"),
            };
            let [node, block] = parts[..] else { return Err(bad()) };
            let (Ok(node), Ok(block)) = (node.parse::<u64>(), block.parse::<usize>()) else {
                if line == 0 {
                    continue;
                }
                return Err(bad());
            };
            let v = *index.get(&node).ok_or_else(bad)?;
            assignment[v] = block;
        }
        if let Some(v) = assignment.iter().position(|&b| b == usize::MAX) {
            return Err(EdenError::Partition(format!("node {} has no block", loaded.id_map[v])));
        }
        let p = Partition::new(assignment, g.n())?;
        report["partition"] = json!({ "blocks": p.blocks(), "two_dim": two_dim_entropy(&g, &p)? });
    }
    if let Some(path) = &a.tree {
        let tree = read_tree(path, &loaded.graph)?;
        report["tree"] = json!({ "height": tree.height(), "entropy": tree_entropy(&g, &tree)? });
    }
    out.json("entropy.json", report)?;
    out.finish()
}

fn build(a: BuildArgs) -> Result<Value> {
    let mut cfg = base_config(&a.common)?;
    apply_tree(&mut cfg, &a.tree)?;
    cfg.validate()?;
    let mut out = OutputDir::open(
        &a.common.out,
        "build-hkt",
        &["tree.json", "tree.dot", "build.json"],
        &cfg,
        a.common.force,
    )?;
    let loaded = load(&cfg)?;
    let built = build_stage(&loaded.graph, &cfg.tree)?;
    write_tree(&mut out, &built.tree, &loaded)?;
    out.json(
        "build.json",
        json!({
            "entropy": built.entropy,
            "one_dim_entropy": one_dim_entropy(&loaded.graph.add_sink_loops())?.value,
            "height": built.tree.height(),
            "phase_one_height": built.phase_one_height,
            "merges": built.merges.len(),
            "detached": built.detached,
            "fillers": built.fillers,
        }),
    )?;
    out.finish()
}

fn refine(a: RefineArgs) -> Result<Value> {
    let mut cfg = base_config(&a.common)?;
    apply_tree(&mut cfg, &a.tree_opts)?;
    apply_refine(&mut cfg, &a.refine);
    cfg.validate()?;
    let names = ["tree.json", "tree.dot", "moves.jsonl", "refine.json"];
    let mut out = OutputDir::open(&a.common.out, "refine-hkt", &names, &cfg, a.common.force)?;
    let loaded = load(&cfg)?;
    let g = ensure_features(&loaded.graph)?;
    let tree = match &a.tree {
        Some(path) => read_tree(path, &g)?,
        None => build_stage(&g, &cfg.tree)?.tree,
    };
    let looped = g.add_sink_loops();
    let before = tree_entropy(&looped, &tree)?.value;
    let refined = refine_stage(&g, tree, &cfg.pipeline())?;
    write_tree(&mut out, &refined.tree, &loaded)?;
    let moves: Vec<Value> = refined
        .moves
        .iter()
        .map(|m| {
            let mut v = serde_json::to_value(m).expect("move serializes");
            v["node_id"] = json!(loaded.id_map[m.graph_node]);
            v
        })
        .collect();
    out.json_lines("moves.jsonl", &moves)?;
    out.json(
        "refine.json",
        json!({
            "entropy_before": before,
            "entropy_after": tree_entropy(&looped, &refined.tree)?.value,
            "applied": refined.moves.iter().filter(|m| m.applied).count(),
            "skipped": refined.moves.iter().filter(|m| m.skipped.is_some()).count(),
            "critic_trace": refined.critic_trace,
        }),
    )?;
    out.finish()
}

fn parse_task(cfg: &mut RunConfig, task: &Option<String>) -> Result<()> {
    if let Some(t) = task {
        cfg.data.task = Task::parse(t)?;
    }
    Ok(())
}

fn prepare(cfg: &RunConfig, loaded: &LoadedGraph) -> Result<TaskData> {
    TaskData::prepare(
        &loaded.graph,
        cfg.data.task,
        cfg.data.link_split,
        derive_seed(cfg.seed, &[SPLIT_SALT]),
    )
}

fn train(a: TrainArgs) -> Result<Value> {
    let mut cfg = base_config(&a.common)?;
    apply_tree(&mut cfg, &a.tree_opts)?;
    apply_refine(&mut cfg, &a.refine);
    parse_task(&mut cfg, &a.task)?;
    if let Some(x) = a.alpha {
        cfg.distill.alpha = x;
    }
    if let Some(x) = a.p_rw {
        cfg.walk.p_rw = x;
    }
    if let Some(x) = a.s_rw {
        cfg.walk.s_rw = x;
    }
    if let Some(x) = a.c_rw {
        cfg.walk.c_rw = x;
    }
    if let Some(x) = a.k {
        cfg.walk.k = x;
    }
    if let Some(x) = a.train_epochs {
        cfg.train.epochs = x;
    }
    if let Some(x) = a.lr {
        cfg.train.lr = x;
    }
    for flag in &a.without {
        match flag.as_str() {
            "diverse-knowledge" => cfg.ablation.diverse_knowledge = false,
            "personalized-transfer" => cfg.ablation.personalized_transfer = false,
            "tree-walk" => cfg.ablation.tree_walk = false,
            "kd-loss" => cfg.ablation.kd_loss = false,
            other => return Err(EdenError::Config(format!("unknown ablation {other}"))),
        }
    }
    cfg.validate()?;
    let names = [
        "config.toml",
        "tree.json",
        "tree.dot",
        "moves.jsonl",
        "history.jsonl",
        "metrics.json",
        "checkpoint.ednw",
    ];
    let mut out = OutputDir::open(&a.common.out, "train", &names, &cfg, a.common.force)?;
    let loaded = load(&cfg)?;
    let data = prepare(&cfg, &loaded)?;
    let targets = data.targets();
    let pcfg = cfg.pipeline();
    let (tree, model, history, summary) = match &a.tree {
        Some(path) => {
            let tree = read_tree(path, data.graph())?;
            let mut session = Session::new(data.graph(), &tree, &targets, &pcfg.train, session_seed(cfg.seed), None)?;
            let outcome = session.fit(&targets)?;
            let summary = json!({
                "task": cfg.data.task,
                "metrics": outcome.metrics,
                "best_epoch": outcome.best_epoch,
                "epochs_run": outcome.history.len(),
            });
            let model = session.model.clone();
            (tree, model, outcome.history, summary)
        }
        None => {
            let run = run_pipeline(data.graph(), &targets, &pcfg)?;
            let r = run.report;
            let moves: Vec<Value> = r
                .moves
                .iter()
                .map(|m| {
                    let mut v = serde_json::to_value(m).expect("move serializes");
                    v["node_id"] = json!(loaded.id_map[m.graph_node]);
                    v
                })
                .collect();
            out.json_lines("moves.jsonl", &moves)?;
            let summary = json!({
                "task": cfg.data.task,
                "metrics": r.metrics,
                "best_epoch": r.best_epoch,
                "epochs_run": r.history.len(),
                "build_entropy": r.build_entropy,
                "refined_entropy": r.refined_entropy,
                "moves_applied": r.moves.iter().filter(|m| m.applied).count(),
            });
            (run.tree, run.model, r.history, summary)
        }
    };
    write_tree(&mut out, &tree, &loaded)?;
    out.json_lines("history.jsonl", &history)?;
    out.json("metrics.json", summary)?;
    out.bytes("checkpoint.ednw", &model.checkpoint().to_bytes())?;
    out.toml("config.toml", &cfg)?;
    out.finish()
}

fn predict(a: PredictArgs) -> Result<Value> {
    let mut cfg = base_config(&a.common)?;
    parse_task(&mut cfg, &a.task)?;
    cfg.validate()?;
    let mut out = OutputDir::open(&a.common.out, "predict", &["predictions.json"], &cfg, a.common.force)?;
    let loaded = load(&cfg)?;
    let data = prepare(&cfg, &loaded)?;
    let targets = data.targets();
    let tree = read_tree(&a.tree, data.graph())?;
    let checkpoint = ParamStore::load(&a.checkpoint)?;
    let mut session = restore_session(data.graph(), &tree, &targets, &cfg.pipeline(), &checkpoint)?;
    let argmax = |row: ndarray::ArrayView1<f64>| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
            .0
    };
    let (rows, metrics) = match &data {
        TaskData::Nodes { labels, .. } => {
            let nodes: Vec<usize> = (0..data.graph().n()).collect();
            let p = session.predict(&Examples::Nodes(nodes, Vec::new()))?;
            let rows: Vec<Value> = p
                .probabilities
                .rows()
                .into_iter()
                .enumerate()
                .map(|(v, row)| {
                    json!({
                        "node": loaded.id_map[v],
                        "predicted": argmax(row),
                        "label": labels[v],
                        "probabilities": row.to_vec(),
                    })
                })
                .collect();
            let (_, _, test) = Examples::from_targets(&targets)?;
            (rows, session.evaluate(&test)?)
        }
        TaskData::Links(split) => {
            let test = Examples::Links(split.test.clone());
            let p = session.predict(&test)?;
            let rows = split
                .test
                .iter()
                .zip(p.probabilities.rows())
                .map(|(e, row)| {
                    json!({
                        "u": loaded.id_map[e.u],
                        "v": loaded.id_map[e.v],
                        "label": e.label,
                        "predicted": argmax(row),
                        "probabilities": row.to_vec(),
                    })
                })
                .collect();
            let metrics = if split.test.is_empty() {
                Default::default()
            } else {
                evaluate(&p, split.task)?
            };
            (rows, metrics)
        }
    };
    out.json(
        "predictions.json",
        json!({ "task": cfg.data.task, "test_metrics": metrics, "predictions": rows }),
    )?;
    out.finish()
}

fn walk_analysis(a: WalkArgs) -> Result<Value> {
    let cfg = base_config(&a.common)?;
    cfg.validate()?;
    let mut out = OutputDir::open(&a.common.out, "walk-analysis", &["walk.json"], &cfg, a.common.force)?;
    let loaded = load(&cfg)?;
    let seed = derive_seed(cfg.seed, &[0x77616c6b]);
    let with_cycles = walk_interruption(&loaded.graph, a.max_len, a.trials, CycleMode::WithCycles, seed)?;
    let cycle_free = walk_interruption(&loaded.graph, a.max_len, a.trials, CycleMode::CycleFree, seed)?;
    out.json(
        "walk.json",
        json!({
            "max_len": a.max_len,
            "trials_per_node": a.trials,
            "with_cycles": with_cycles.completion,
            "cycle_free": cycle_free.completion,
        }),
    )?;
    out.finish()
}
