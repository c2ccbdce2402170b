use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::{json, Value};

use resmix::data::{
    export_png, generate_mnist_parity, generate_pentomino, load_mnist_dir, sidecar_path, DatasetFile, DatasetKind,
    DatasetMeta, GenConfig, MnistParityConfig, MnistPools, PentominoConfig, Split,
};
use resmix::nn::{count_params, ResNetCfg};
use resmix::train::{
    curves_csv, evaluate, load_checkpoint, load_train_data, parse_metrics_csv, preset, presets, run_in_dir, sweep,
    TrainConfig, Trainer, LR_GRID, SEED_GRID,
};
use resmix::verify::{
    audit_dataset_with, check_full_model, check_ops, conv_differential, AuditReport, OP_STEP, OP_THRESHOLD,
};
use resmix::ModelConfig;

use crate::fail::Fail;
use crate::fetch::{fetch_one, FetchEntry, Outcome};
use crate::overrides::{apply_set, merge};
use crate::rundir::{self, DatasetRef};
use crate::{Cli, Command, ConfigArgs};

pub fn run(cli: Cli) -> Result<(), Fail> {
    let root = cli.out_root.clone();
    let threads = cli.threads;
    match cli.command {
        Command::Fetch { urls, hashes, manifest, dest } => cmd_fetch(urls, hashes, manifest, &dest),
        Command::Gen { dataset, config, sets, seed, count, splits, mnist_dir, out } => {
            cmd_gen(&root, GenArgs { dataset, config, sets, seed, count, splits, mnist_dir, out })
        }
        Command::Train { cfg, resume } => cmd_train(&root, &cfg, resume),
        Command::Eval { checkpoint, data, last, batch_size, allow_unaudited, mnist_dir, out } => {
            cmd_eval(&root, &checkpoint, &data, last, batch_size, allow_unaudited, &mnist_dir, out)
        }
        Command::Sweep { cfg, lrs, seeds } => cmd_sweep(&root, &cfg, lrs, seeds, threads),
        Command::Params { model, experts, depth, preset, json } => cmd_params(model, experts, depth, preset, json),
        Command::Gradcheck { full, seed, out } => cmd_gradcheck(&root, full, seed, out),
        Command::ExportPng { data, count, indices, out } => cmd_export_png(&data, count, indices, &out),
        Command::ExportCurves { metrics, out } => cmd_export_curves(&metrics, out),
    }
}

fn read_json(path: &Path) -> Result<Value, Fail> {
    let text = std::fs::read_to_string(path).map_err(Fail::io(path))?;
    serde_json::from_str(&text).map_err(|e| Fail::invalid(format!("{}: {e}", path.display())))
}

fn layer(base: &mut Value, file: Option<&Path>, sets: &[String]) -> Result<(), Fail> {
    if let Some(f) = file {
        let patch = read_json(f)?;
        merge(base, patch, "").map_err(|e| Fail::invalid(format!("{}: {e}", f.display())))?;
    }
    for s in sets {
        apply_set(base, s).map_err(Fail::invalid)?;
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configuration types serialize")
}

fn from_json<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, Fail> {
    serde_json::from_value(v).map_err(|e| Fail::invalid(format!("configuration: {e}")))
}

/// Reads only the sidecar of a dataset file.
fn peek_meta(path: &Path) -> Result<DatasetMeta, Fail> {
    let side = sidecar_path(path);
    let meta: DatasetMeta = from_json(read_json(&side)?)?;
    Ok(meta)
}

/// MNIST pools for provenance audits of MNIST Parity files. Missing IDX
/// files are an error unless auditing is waived.
fn audit_pools(kind: DatasetKind, mnist_dir: &Path, allow_unaudited: bool) -> Result<Option<MnistPools>, Fail> {
    if kind != DatasetKind::MnistParity {
        return Ok(None);
    }
    match load_mnist_dir(mnist_dir) {
        Ok(p) => Ok(Some(p)),
        Err(e) if allow_unaudited => {
            warn!("provenance audit skipped: {e}");
            Ok(None)
        }
        Err(e) => Err(Fail::invalid(format!(
            "MNIST IDX files are needed to audit MNIST Parity provenance ({e}); pass --mnist-dir"
        ))),
    }
}

fn dataset_refs(audits: &[AuditReport]) -> Vec<DatasetRef> {
    audits
        .iter()
        .map(|a| DatasetRef {
            path: a.path.clone().unwrap_or_default(),
            split: a.split.name().to_string(),
            sha256: a.hash.clone(),
        })
        .collect()
}

fn cmd_fetch(urls: Vec<String>, hashes: Vec<String>, manifest: Option<PathBuf>, dest: &Path) -> Result<(), Fail> {
    if urls.len() != hashes.len() {
        return Err(Fail::usage("each --url needs exactly one --sha256"));
    }
    let mut entries: Vec<FetchEntry> =
        urls.into_iter().zip(hashes).map(|(url, sha256)| FetchEntry { url, sha256, name: None }).collect();
    if let Some(m) = manifest {
        let list: Vec<FetchEntry> = from_json(read_json(&m)?)?;
        entries.extend(list);
    }
    if entries.is_empty() {
        return Err(Fail::usage("nothing to fetch: give --url/--sha256 pairs or --manifest"));
    }
    for e in &entries {
        match fetch_one(e, dest)? {
            Outcome::AlreadyVerified(p) => println!("already verified {}", p.display()),
            Outcome::Downloaded(p) => println!("downloaded and verified {}", p.display()),
        }
    }
    Ok(())
}

struct GenArgs {
    dataset: String,
    config: Option<PathBuf>,
    sets: Vec<String>,
    seed: Option<u64>,
    count: Option<usize>,
    splits: Vec<String>,
    mnist_dir: PathBuf,
    out: Option<PathBuf>,
}

fn cmd_gen(root: &Path, a: GenArgs) -> Result<(), Fail> {
    let kind: DatasetKind = a.dataset.parse().map_err(|e: resmix::Error| Fail::usage(e))?;
    let default = match kind {
        DatasetKind::MnistParity => GenConfig::MnistParity(MnistParityConfig::default()),
        DatasetKind::Pentomino => GenConfig::Pentomino(PentominoConfig::default()),
    };
    let mut v = to_json(&default);
    layer(&mut v, a.config.as_deref(), &a.sets)?;
    let mut cfg: GenConfig = from_json(v)?;
    if cfg.kind() != kind {
        return Err(Fail::invalid(format!("config describes {} but --dataset is {}", cfg.kind().name(), kind.name())));
    }
    if let Some(s) = a.seed {
        match &mut cfg {
            GenConfig::MnistParity(c) => c.master_seed = s,
            GenConfig::Pentomino(c) => c.master_seed = s,
        }
    }
    if let Some(n) = a.count {
        for s in Split::ALL {
            cfg.counts_mut().set(s, n);
        }
    }
    cfg.validate()?;
    let splits: Vec<Split> =
        a.splits.iter().map(|s| s.parse::<Split>().map_err(Fail::usage)).collect::<Result<_, _>>()?;
    let pools = match kind {
        DatasetKind::MnistParity => Some(load_mnist_dir(&a.mnist_dir)?),
        DatasetKind::Pentomino => None,
    };
    let dir = rundir::create(root, "gen", a.out.as_deref())?;
    let mut reports = Vec::new();
    for split in splits {
        let ds = match &cfg {
            GenConfig::MnistParity(c) => generate_mnist_parity(c, pools.as_ref().expect("loaded above"), split)?,
            GenConfig::Pentomino(c) => generate_pentomino(c, split)?,
        };
        let path = dir.join(format!("{}.rmxd", split.name()));
        ds.write(&path)?;
        let report = audit_dataset_with(&path, pools.as_ref())?;
        println!(
            "{} {}: {} samples, audit {} ({})",
            kind.name(),
            split,
            ds.len(),
            if report.passed { "passed" } else { "FAILED" },
            report.hash
        );
        reports.push(report);
    }
    rundir::write_resolved(&dir, "gen", &to_json(&cfg), &dataset_refs(&reports))?;
    rundir::write_json(&dir.join("audit.json"), &reports)?;
    println!("{}", dir.display());
    if let Some(bad) = reports.iter().find(|r| !r.passed) {
        return Err(Fail::invalid(format!("audit failed: {}", bad.summary())));
    }
    Ok(())
}

fn resolve_train(args: &ConfigArgs) -> Result<TrainConfig, Fail> {
    let base = match &args.preset {
        Some(name) => {
            let p = preset(name).ok_or_else(|| {
                let names: Vec<&str> = presets().iter().map(|p| p.name).collect();
                Fail::usage(format!("unknown preset {name:?}; known: {}", names.join(", ")))
            })?;
            info!("preset {name}: {} at lr {}", p.model.label(), p.learning_rate);
            p.config()
        }
        None => TrainConfig::default(),
    };
    let mut v = to_json(&base);
    if let Some(d) = &args.data_dir {
        for s in Split::ALL {
            let p = d.join(format!("{}.rmxd", s.name()));
            if p.exists() {
                v["data"][s.name()] = json!(p);
            }
        }
    }
    layer(&mut v, args.config.as_deref(), &args.sets)?;
    let cfg: TrainConfig = from_json(v)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_pools(cfg: &TrainConfig, mnist_dir: &Path) -> Result<Option<MnistPools>, Fail> {
    let train = cfg.data.train.as_ref().ok_or_else(|| Fail::invalid("data.train is required"))?;
    let kind = peek_meta(train)?.config.kind();
    audit_pools(kind, mnist_dir, cfg.allow_unaudited)
}

fn log_epoch(t: &Trainer) {
    let rows: Vec<String> = t
        .history
        .iter()
        .filter(|r| r.epoch + 1 == t.next_epoch)
        .map(|r| format!("{} loss {:.4} err {:.4}", r.split, r.loss, r.error))
        .collect();
    info!("epoch {}: {}", t.next_epoch - 1, rows.join(", "));
}

fn cmd_train(root: &Path, args: &ConfigArgs, resume: Option<PathBuf>) -> Result<(), Fail> {
    let mut trainer = match &resume {
        Some(p) => load_checkpoint(p)?,
        None => Trainer::new(resolve_train(args)?)?,
    };
    let cfg = trainer.cfg.clone();
    let pools = train_pools(&cfg, &args.mnist_dir)?;
    let (data, audits) = load_train_data(&cfg, pools.as_ref())?;
    for a in audits.iter().filter(|a| !a.passed) {
        warn!("training on unaudited data: {}", a.summary());
    }
    let dir = rundir::create(root, "train", args.out.as_deref())?;
    let mut resolved = to_json(&cfg);
    if let Some(p) = &resume {
        resolved["resumed_from"] = json!(p);
        resolved["resumed_at_epoch"] = json!(trainer.next_epoch);
    }
    rundir::write_resolved(&dir, "train", &resolved, &dataset_refs(&audits))?;
    rundir::write_json(&dir.join("audit.json"), &audits)?;
    info!("{} with {} parameters; run directory {}", cfg.model.label(), trainer.model.num_params(), dir.display());
    let summary = run_in_dir(&mut trainer, &data, &dir, log_epoch)?;
    if let (Some(e), Some(err)) = (summary.best_epoch, summary.best_val_error) {
        println!("best epoch {e}: val error {:.4}", err);
    }
    if let Some(t) = &summary.test {
        println!("test error: best checkpoint {:.4}, final {:.4}", t.best_error, t.final_error);
    }
    println!("{}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    root: &Path,
    checkpoint: &Path,
    data: &Path,
    last: bool,
    batch_size: usize,
    allow_unaudited: bool,
    mnist_dir: &Path,
    out: Option<PathBuf>,
) -> Result<(), Fail> {
    if batch_size == 0 {
        return Err(Fail::usage("--batch-size must be positive"));
    }
    let trainer = load_checkpoint(checkpoint)?;
    let mut model = if last { trainer.model.clone() } else { trainer.best_model() };
    let kind = peek_meta(data)?.config.kind();
    let pools = audit_pools(kind, mnist_dir, allow_unaudited)?;
    let report = audit_dataset_with(data, pools.as_ref())?;
    if !report.passed {
        if !allow_unaudited {
            return Err(Fail::invalid(format!("audit failed: {}", report.summary())));
        }
        warn!("evaluating unaudited data: {}", report.summary());
    }
    let ds = DatasetFile::read(data)?;
    let ev = evaluate(&mut model, &ds, batch_size)?;
    let dir = rundir::create(root, "eval", out.as_deref())?;
    let resolved = json!({
        "checkpoint": checkpoint,
        "weights": if last { "last" } else { "best" },
        "batch_size": batch_size,
        "model": trainer.cfg.model,
    });
    rundir::write_resolved(&dir, "eval", &resolved, &dataset_refs(std::slice::from_ref(&report)))?;
    let weights_epoch = if last { trainer.next_epoch.checked_sub(1) } else { trainer.best.as_ref().map(|b| b.epoch) };
    rundir::write_json(
        &dir.join("summary.json"),
        &json!({
            "model": trainer.cfg.model.label(),
            "weights_epoch": weights_epoch,
            "samples": ev.samples,
            "loss": ev.loss,
            "error": ev.error,
        }),
    )?;
    let mut preds = String::from("index,label,prediction\n");
    for (i, p) in ev.predictions.iter().enumerate() {
        let _ = writeln!(preds, "{i},{},{p}", ds.labels[i]);
    }
    let pred_path = dir.join("predictions.csv");
    std::fs::write(&pred_path, preds).map_err(Fail::io(&pred_path))?;
    if !ev.gates.is_empty() {
        let e = ev.gates.iter().map(|g| g.experts).max().unwrap_or(0);
        let cols: Vec<String> = (0..e).map(|k| format!("g{k}")).collect();
        let mut text = format!("index,module,{}\n", cols.join(","));
        for g in &ev.gates {
            for (i, row) in g.values.chunks(g.experts).enumerate() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(text, "{i},{},{}", g.module, vals.join(","));
            }
        }
        let gate_path = dir.join("gates.csv");
        std::fs::write(&gate_path, text).map_err(Fail::io(&gate_path))?;
    }
    println!("{}: {} samples, loss {:.4}, error {:.4}", trainer.cfg.model.label(), ev.samples, ev.loss, ev.error);
    println!("{}", dir.display());
    Ok(())
}

fn cmd_sweep(
    root: &Path,
    args: &ConfigArgs,
    lrs: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    threads: Option<usize>,
) -> Result<(), Fail> {
    let cfg = resolve_train(args)?;
    let lrs = lrs.unwrap_or_else(|| LR_GRID.to_vec());
    let seeds = seeds.unwrap_or_else(|| SEED_GRID.to_vec());
    if lrs.is_empty() || seeds.is_empty() {
        return Err(Fail::usage("sweep grid is empty"));
    }
    let pools = train_pools(&cfg, &args.mnist_dir)?;
    let (data, audits) = load_train_data(&cfg, pools.as_ref())?;
    let dir = rundir::create(root, "sweep", args.out.as_deref())?;
    let mut resolved = to_json(&cfg);
    resolved["sweep"] = json!({ "learning_rates": lrs, "seeds": seeds });
    rundir::write_resolved(&dir, "sweep", &resolved, &dataset_refs(&audits))?;
    let workers = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let summary = sweep(&cfg, &lrs, &seeds, &data, workers, Some(&dir))?;
    rundir::write_json(&dir.join("sweep.json"), &summary)?;
    let table = format!("| Model | Parameter Count | Test Error |\n|---|---|---|\n| {} |\n", summary.table_row());
    let table_path = dir.join("table.md");
    std::fs::write(&table_path, &table).map_err(Fail::io(&table_path))?;
    for s in &summary.per_lr {
        println!(
            "lr {}: best-checkpoint test error {:.2}% ± {:.2}% over {} seeds{}",
            s.learning_rate,
            100.0 * s.best_mean,
            100.0 * s.best_std,
            s.best_test_errors.len(),
            if s.failed_seeds.is_empty() { String::new() } else { format!(" (failed seeds {:?})", s.failed_seeds) }
        );
    }
    println!("{}", summary.table_row());
    println!("{}", dir.display());
    match summary.chosen_lr {
        Some(_) => Ok(()),
        None => Err(Fail::Runtime(anyhow::anyhow!("every sweep cell failed; see sweep.json"))),
    }
}

fn cmd_params(
    model: Option<String>,
    experts: Option<usize>,
    depth: Option<usize>,
    preset_name: Option<String>,
    as_json: bool,
) -> Result<(), Fail> {
    let config = match (preset_name, model.as_deref()) {
        (Some(name), _) => preset(&name).ok_or_else(|| Fail::usage(format!("unknown preset {name:?}")))?.model,
        (None, Some("resnet")) => {
            if experts.is_some() {
                return Err(Fail::usage("--experts applies to resmixnet only"));
            }
            ModelConfig::ResNet(ResNetCfg::with_depth(depth.unwrap_or(26))?)
        }
        (None, Some("resmixnet")) => ModelConfig::resmixnet(experts.unwrap_or(2), depth.unwrap_or(2)),
        _ => return Err(Fail::usage("give --model resmixnet|resnet or --preset")),
    };
    let summary = count_params(&config)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| Fail::Runtime(e.into()))?);
    } else {
        println!("{}: {} parameters", summary.model, resmix::train::group_thousands(summary.total));
        for (name, n) in summary.breakdown() {
            println!("  {name:<10} {:>12}", resmix::train::group_thousands(n));
        }
        if let Some(b) = &summary.budget {
            println!(
                "budget: {} vs {} {}: {}",
                resmix::train::group_thousands(b.params),
                b.baseline,
                resmix::train::group_thousands(b.baseline_params),
                if b.within_budget { "within" } else { "EXCEEDED" }
            );
        }
    }
    match summary.budget {
        Some(b) if !b.within_budget => {
            Err(Fail::invalid(format!("{} exceeds the {} parameter budget", b.model, b.baseline)))
        }
        _ => Ok(()),
    }
}

fn cmd_gradcheck(root: &Path, full: bool, seed: u64, out: Option<PathBuf>) -> Result<(), Fail> {
    let ops = check_ops(seed, OP_STEP, OP_THRESHOLD)?;
    for r in &ops {
        println!("{:<28} max rel err {:.3e} ({} checked) {}", r.subject, r.max_rel_err, r.checked, verdict(r.passed));
    }
    let conv = conv_differential(50, seed)?;
    println!("conv2d vs naive reference: {} trials {}", conv.trials.len(), verdict(conv.passed));
    let model = if full {
        let r = check_full_model(&ModelConfig::resmixnet(2, 1))?;
        println!(
            "{:<28} max rel err {:.3e} ({} checked, {} skipped) {}",
            r.subject,
            r.max_rel_err,
            r.checked,
            r.skipped,
            verdict(r.passed)
        );
        Some(r)
    } else {
        None
    };
    let dir = rundir::create(root, "gradcheck", out.as_deref())?;
    rundir::write_resolved(&dir, "gradcheck", &json!({ "seed": seed, "full": full }), &[])?;
    rundir::write_json(&dir.join("report.json"), &json!({ "ops": ops, "conv": conv, "model": model }))?;
    println!("{}", dir.display());
    let ok = ops.iter().all(|r| r.passed) && conv.passed && model.as_ref().is_none_or(|r| r.passed);
    if ok {
        Ok(())
    } else {
        Err(Fail::invalid("gradient check failed"))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn cmd_export_png(data: &Path, count: Option<usize>, indices: Option<Vec<usize>>, out: &Path) -> Result<(), Fail> {
    let ds = DatasetFile::read(data)?;
    let idx = match (count, indices) {
        (_, Some(list)) => list,
        (Some(n), None) => (0..n.min(ds.len())).collect(),
        (None, None) => (0..ds.len().min(16)).collect(),
    };
    let written = export_png(&ds, &idx, out)?;
    println!("wrote {} images to {}", written.len(), out.display());
    Ok(())
}

fn cmd_export_curves(metrics: &Path, out: Option<PathBuf>) -> Result<(), Fail> {
    let text = std::fs::read_to_string(metrics).map_err(Fail::io(metrics))?;
    let rows = parse_metrics_csv(&text)?;
    let curves = curves_csv(&rows);
    match out {
        Some(p) => std::fs::write(&p, curves).map_err(Fail::io(&p))?,
        None => print!("{curves}"),
    }
    Ok(())
}
