#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cafata_core::context::UNKNOWN_CONDITION;
use cafata_core::synth::{planted, PlantedInstance, PlantedSpec};

pub struct Files {
    pub interactions: PathBuf,
    pub features: PathBuf,
    pub schema: PathBuf,
}

/// Writes a planted instance in the on-disk input formats.
pub fn write_inputs(dir: &Path, inst: &PlantedInstance) -> Files {
    let catalog = &inst.catalog;
    let schema = &catalog.schema;

    let mut features = String::new();
    for item in 0..catalog.num_items() {
        for (t, f) in catalog.item(item).unwrap().iter() {
            writeln!(
                features,
                "{}\t{}\t{}",
                catalog.item_label(item),
                catalog.type_label(t),
                catalog.feature_label(f)
            )
            .unwrap();
        }
    }

    let mut factors = serde_json::Map::new();
    for f in 0..schema.num_factors() {
        let conds: Vec<String> = schema
            .conditions_of(f)
            .iter()
            .map(|&c| schema.condition_name(c).unwrap().to_owned())
            .filter(|c| c != UNKNOWN_CONDITION)
            .collect();
        factors.insert(schema.factor_name(f).unwrap().to_owned(), conds.into());
    }

    let names: Vec<&str> = schema.factors().names().iter().map(String::as_str).collect();
    let mut csv = format!("user,item,value{}\n", names.iter().map(|n| format!(",{n}")).collect::<String>());
    for r in &inst.raw {
        write!(csv, "{},{},{}", r.user, r.item, r.value).unwrap();
        for n in &names {
            write!(csv, ",{}", r.context.get(*n).map(String::as_str).unwrap_or("")).unwrap();
        }
        csv.push('\n');
    }

    let files = Files {
        interactions: dir.join("interactions.csv"),
        features: dir.join("features.tsv"),
        schema: dir.join("schema.json"),
    };
    std::fs::write(&files.interactions, csv).unwrap();
    std::fs::write(&files.features, features).unwrap();
    std::fs::write(&files.schema, serde_json::to_string_pretty(&factors).unwrap()).unwrap();
    files
}

pub fn small_inputs(dir: &Path, seed: u64) -> (PlantedInstance, Files) {
    let inst = planted(&PlantedSpec::small(), seed).unwrap();
    let files = write_inputs(dir, &inst);
    (inst, files)
}

pub fn cafata<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_cafata"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

pub fn ok(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Prepares the small planted inputs into `dir/prepared.json`.
pub fn prepare(dir: &Path, files: &Files, seed: u64) -> PathBuf {
    let out = dir.join("prepared.json");
    ok(&cafata([
        "prepare",
        "--interactions",
        s(&files.interactions),
        "--features",
        s(&files.features),
        "--schema",
        s(&files.schema),
        "--scale",
        "1",
        "5",
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]));
    out
}

/// Trains a small model into `dir/<name>`.
pub fn train(dir: &Path, data: &Path, variant: &str, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--variant",
        variant,
        "--dim",
        "4",
        "--epochs",
        "20",
        "--batch-size",
        "32",
        "--lr",
        "0.3",
        "--seed",
        "1",
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    ok(&cafata(args));
    out
}
