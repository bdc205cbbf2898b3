use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cafata_core::analysis::{cluster_report, export_importance, inertia_sweep, kmeans};
use cafata_core::argumentation::{
    build_taf, check_feedback_monotonicity, check_weak_balance, check_weak_monotonicity, InstanceSource,
};
use cafata_core::checkpoint::{Checkpoint, PreparedData, Weights};
use cafata_core::data::{index_interactions, k_core_filter, load_interactions, log_transform_counts, split_dataset};
use cafata_core::explain::{classify_scenario, contrastive_explanation, template_explanation_ranked};
use cafata_core::feedback::FeedbackStore;
use cafata_core::synth::{World, WorldLimits};
use cafata_core::train::{evaluate, train, train_mf, TrainConfig, TrainingLog};
use cafata_core::{Catalog, FeatureOverrides, ModelConfig, RatingScale};
use serde::Serialize;
use serde_json::json;

use crate::{
    CheckArgs, ClusterArgs, Command, EvalArgs, ExplainArgs, ExplainMode, Format, ModelKind, PrepareArgs, ServeArgs,
    SplitName, TrainArgs,
};

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain(a),
        Command::CheckAxioms(a) => check_axioms(a),
        Command::Cluster(a) => cluster(a),
        Command::Serve(a) => serve(a),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare(a: PrepareArgs) -> Result<ExitCode> {
    let scale = a
        .scale
        .as_deref()
        .map(|s| RatingScale::new(s[0], s[1]))
        .transpose()?;
    let mut catalog = Catalog::load(&a.features, &a.schema)?;
    let mut raw = load_interactions(&a.interactions, &catalog.schema)?;
    let loaded = raw.len();
    if a.log_transform {
        raw = log_transform_counts(raw)?;
    }
    if let Some(k) = a.k_core {
        raw = k_core_filter(raw, k);
    }
    if raw.is_empty() {
        bail!("no interactions left after preprocessing");
    }
    let scale = match scale {
        Some(s) => s,
        None => RatingScale::from_values(raw.iter().map(|r| r.value))?,
    };
    let (interactions, dropped) = index_interactions(&raw, &mut catalog, &scale)?;
    let dataset = split_dataset(interactions, a.split, a.seed)?;
    let summary = json!({
        "out": a.out,
        "loaded": loaded,
        "kept": raw.len(),
        "dropped_unknown_items": dropped,
        "users": catalog.users.len(),
        "items": catalog.num_items(),
        "features": catalog.features.len(),
        "factors": catalog.schema.num_factors(),
        "scale": scale,
        "train": dataset.split.train.len(),
        "valid": dataset.split.valid.len(),
        "test": dataset.split.test.len(),
    });
    PreparedData::new(catalog, scale, dataset).save(&a.out)?;
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let data = PreparedData::load(&a.data)?;
    let config = TrainConfig {
        epochs: a.epochs as usize,
        batch_size: a.batch_size as usize,
        learning_rate: a.lr,
        l2_reg: a.l2,
        seed: a.seed,
        early_stop_patience: a.patience,
    };
    let (weights, log): (Weights, TrainingLog) = match a.variant {
        ModelKind::Attribution(variant) => {
            let mc = ModelConfig {
                dim: a.dim as usize,
                variant,
                leaky_relu_slope: a.slope,
                seed: a.seed,
            };
            let (m, log) = train(&data.dataset, &data.catalog, mc, &config, &data.scale)?;
            (Weights::Attribution(m), log)
        }
        ModelKind::Mf => {
            let (m, log) = train_mf(&data.dataset, &data.catalog, a.dim as usize, a.seed, &config, &data.scale)?;
            (Weights::Mf(m), log)
        }
    };
    let history = data.dataset.train_history(data.catalog.users.len());
    let valid = if data.dataset.split.valid.is_empty() {
        None
    } else {
        Some(evaluate(weights.scorer(), &data.catalog, data.dataset.valid(), &data.scale)?)
    };
    let ckpt = Checkpoint::new(weights, data.catalog, data.scale, history, Some(config));
    ckpt.save(&a.out)?;
    if let Some(path) = &a.log {
        write_file(path, &log.to_json_lines())?;
    }
    print_json(&json!({
        "variant": ckpt.weights.label(),
        "out": a.out,
        "epochs_run": log.epochs.len(),
        "best_epoch": log.best_epoch,
        "stopped_early": log.stopped_early,
        "valid": valid,
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = PreparedData::load(&a.data)?;
    if data.catalog.users.names() != ckpt.catalog.users.names() || data.catalog.num_items() != ckpt.catalog.num_items() {
        bail!("{} was not prepared for this checkpoint", a.data.display());
    }
    let rows: Vec<_> = match a.split {
        SplitName::Train => data.dataset.train().collect(),
        SplitName::Valid => data.dataset.valid().collect(),
        SplitName::Test => data.dataset.test().collect(),
    };
    let report = evaluate(ckpt.weights.scorer(), &ckpt.catalog, rows, &ckpt.scale)?;
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

fn lookup(table: &cafata_core::ids::IdTable, kind: &str, name: &str) -> Result<usize> {
    table.get(name).with_context(|| format!("unknown {kind} `{name}`"))
}

fn explain(a: ExplainArgs) -> Result<ExitCode> {
    if !(a.theta_lo < a.theta_hi) {
        bail!("--theta-lo must be below --theta-hi");
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.weights.attribution()?;
    let catalog = &ckpt.catalog;
    let schema = &catalog.schema;
    let user = lookup(&catalog.users, "user", &a.user)?;
    let assignments: BTreeMap<String, String> = a.context.iter().cloned().collect();
    let cs = schema.situation(&assignments)?;
    if model.config.variant.uses_context() && !cs.is_complete(schema) {
        let names: Vec<&str> = schema.factors().names().iter().map(String::as_str).collect();
        bail!(
            "a {} checkpoint needs a full contextual situation: pass --context FACTOR=CONDITION for each of {}",
            model.config.variant,
            names.join(", ")
        );
    }
    let overrides = match &a.journal {
        Some(path) => FeedbackStore::load_journal(path)?.overrides_for(user),
        None => FeatureOverrides::new(),
    };

    let export = if a.contrastive {
        let candidates = if a.candidates.is_empty() {
            ckpt.unseen_items(user)
        } else {
            a.candidates
                .iter()
                .map(|c| lookup(&catalog.items, "item", c))
                .collect::<Result<_>>()?
        };
        let e = contrastive_explanation(model, catalog, user, &cs, &candidates, &overrides, a.theta_lo, a.theta_hi)?;
        eprintln!("{}", e.text);
        serde_json::to_value(e.export(catalog))?
    } else {
        let item = lookup(&catalog.items, "item", a.item.as_deref().unwrap_or_default())?;
        let b = model.predict(catalog, user, item, &cs, &overrides)?;
        let taf = build_taf(&b, a.neutral_eps);
        match a.mode {
            ExplainMode::Taf => serde_json::to_value(taf.export(catalog))?,
            ExplainMode::Template => {
                let scenario = classify_scenario(b.rating, a.theta_lo, a.theta_hi);
                let e = template_explanation_ranked(catalog, &b, &taf, scenario, a.ranking.into())?;
                eprintln!("{}", e.text);
                serde_json::to_value(e.export(catalog))?
            }
        }
    };
    print_json(&export)?;
    Ok(ExitCode::SUCCESS)
}

fn check_axioms(a: CheckArgs) -> Result<ExitCode> {
    let source = match &a.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let model = ckpt.weights.attribution()?.clone();
            InstanceSource::Fixed(World {
                catalog: ckpt.catalog,
                model,
            })
        }
        None => InstanceSource::Random(WorldLimits::default()),
    };
    let trials = a.trials as usize;
    let reports = vec![
        check_weak_balance(&source, trials, a.seed)?,
        check_weak_monotonicity(&source, trials, a.seed)?,
        check_feedback_monotonicity(&source, trials, a.seed)?,
    ];
    let passed = reports.iter().all(|r| r.passed());
    for r in &reports {
        eprintln!(
            "{} {}: {} trials, {} checks, {} counterexamples",
            if r.passed() { "PASS" } else { "FAIL" },
            r.property,
            r.trials,
            r.checks,
            r.counterexamples.len()
        );
    }
    print_json(&json!({ "passed": passed, "properties": reports }))?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cluster(a: ClusterArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.weights.attribution()?;
    let matrix = export_importance(model, &ckpt.catalog.users, &ckpt.catalog.schema)?;
    let km = kmeans(&matrix.rows, a.k as usize, a.seed, a.max_iter as usize)?;
    let report = cluster_report(&km.assignments, &matrix)?;
    if let Some(path) = &a.out_csv {
        write_file(path, &matrix.to_csv(&km.assignments)?)?;
    }
    if let Some(path) = &a.report_csv {
        write_file(path, &report.to_csv()?)?;
    }
    let sweep = if a.sweep {
        Some(inertia_sweep(&matrix.rows, 1..=10, a.seed, a.max_iter as usize)?)
    } else {
        None
    };
    match a.format {
        Format::Json => print_json(&json!({
            "k": a.k,
            "inertia": km.inertia,
            "iterations": km.iterations,
            "history": km.history,
            "clusters": report,
            "sweep": sweep,
        }))?,
        Format::Table => {
            print!("{}", report.to_table());
            if let Some(points) = sweep {
                println!("k\tinertia");
                for p in points {
                    println!("{}\t{:.6}", p.k, p.inertia);
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let config = cafata_service::ServiceConfig {
        addr: a.addr,
        journal: a.journal,
        step: a.step,
        cors_origin: a.cors_origin,
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(cafata_service::serve(ckpt, config))?;
    Ok(ExitCode::SUCCESS)
}
