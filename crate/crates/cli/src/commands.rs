// SPDX-License-Identifier: Apache-2.0

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use serde_json::json;

use headcount_core::analysis::{analyze_records, analyze_table, AnalysisReport, ErrTable, TransitionConfig};
use headcount_core::constructions::{
    build_memorization_model, build_relu_max, build_relu_min, build_softmin_model, build_softmin_model_with_beta,
    exact_component_nets, find_attention_collision, verify_softmin_bound, verify_softmin_model, CollisionConfig,
    CollisionReport, SoftminHeadModel, VerificationReport,
};
use headcount_core::harness::{aggregate, read_results, run_grid, write_summary_csv, CellKey, GridSpec};
use headcount_core::model::{checkpoint, train};
use headcount_core::numerics::rng;
use headcount_core::tasks::{
    make_synthetic_task, sample_dataset, sample_sequence, toy_max_plus_min, OuterFn, RetrievalTask, Sequence,
    TokenDistribution,
};

use crate::manifest::{sha256_hex, Manifest};
use crate::{BuildArgs, Cli, Cmd, ConfigArgs, Construction, UsageError, Violation};

/// β of the one-head model used by `collide --toy`.
const TOY_COLLIDE_BETA: f64 = 50.0;

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Cmd::GenData(cfg) => gen_data(cli, cfg),
        Cmd::Train {
            cfg,
            h,
            length,
            hidden,
            seed,
        } => train_one(cli, cfg, *h, *length, *hidden, *seed),
        Cmd::Grid(cfg) => grid(cli, cfg),
        Cmd::Construct { construction, params } => construct(cli, *construction, params),
        Cmd::Verify {
            construction,
            params,
            samples,
            seed,
        } => verify(cli, *construction, params, *samples, *seed),
        Cmd::Analyze {
            results,
            table,
            hidden,
            drop,
            drop_factor,
            growth_ratio,
            reversal_threshold,
        } => {
            let config = TransitionConfig {
                drop_factor: *drop_factor,
                growth_ratio: *growth_ratio,
            };
            analyze(
                cli,
                results.as_deref(),
                table.as_deref(),
                *hidden,
                drop,
                config,
                *reversal_threshold,
            )
        }
        Cmd::Collide {
            checkpoint,
            toy,
            length,
            data_seed,
            budget,
            seed,
        } => collide(cli, checkpoint.as_deref(), *toy, *length, *data_seed, *budget, *seed),
    }
}

struct LoadedSpec {
    spec: GridSpec,
    path: PathBuf,
    /// Effective config with `threads` zeroed, the text that gets hashed.
    hashed: String,
}

fn load_spec(cli: &Cli, cfg: &ConfigArgs) -> Result<LoadedSpec> {
    let path = cfg
        .config
        .clone()
        .ok_or_else(|| UsageError("--config is required".into()))?;
    if !path.is_file() {
        return Err(UsageError(format!("config file {} does not exist", path.display())).into());
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut spec = GridSpec::with_overrides(&text, &cfg.set)?;
    let mut canonical = spec.clone();
    canonical.threads = 0;
    let hashed = canonical.to_toml_string()?;
    if let Some(n) = cli.threads {
        spec.threads = n;
    }
    Ok(LoadedSpec { spec, path, hashed })
}

impl LoadedSpec {
    fn manifest(&self, command: &str, cfg: &ConfigArgs) -> Result<Manifest> {
        let mut effective = serde_json::to_value(&self.spec)?;
        effective["threads"] = json!(0);
        Ok(Manifest::new(
            command,
            Some(&self.path),
            &self.hashed,
            &cfg.set,
            self.spec.seeds.clone(),
            effective,
        ))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn args_manifest(command: &str, args: serde_json::Value, seeds: Vec<u64>) -> Manifest {
    let text = args.to_string();
    Manifest::new(command, None, &text, &[], seeds, args)
}

fn gen_data(cli: &Cli, cfg: &ConfigArgs) -> Result<()> {
    let loaded = load_spec(cli, cfg)?;
    let spec = &loaded.spec;
    let dir = cli.out.join(&spec.experiment_id).join("data");
    let task = make_synthetic_task(spec.data_seed);
    let mut files = Vec::new();
    for &t in &spec.lengths {
        let data = sample_dataset(&task, t, spec.n_train, spec.n_val, spec.data_seed)?;
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("T{t}.jsonl"));
        let mut w = std::io::BufWriter::new(File::create(&path)?);
        data.write_jsonl(&mut w)?;
        std::io::Write::flush(&mut w)?;
        files.push(path.display().to_string());
    }
    loaded.manifest("gen-data", cfg)?.write(&dir)?;
    println!("{}", json!({ "command": "gen-data", "files": files }));
    Ok(())
}

fn train_one(
    cli: &Cli,
    cfg: &ConfigArgs,
    h: Option<usize>,
    length: Option<usize>,
    hidden: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let loaded = load_spec(cli, cfg)?;
    let spec = &loaded.spec;
    let cell = CellKey {
        h: h.unwrap_or(spec.heads[0]),
        seq_len: length.unwrap_or(spec.lengths[0]),
        hidden: hidden.unwrap_or(spec.hidden[0]),
        seed: seed.unwrap_or(spec.seeds[0]),
    };
    let task = make_synthetic_task(spec.data_seed);
    let data = sample_dataset(&task, cell.seq_len, spec.n_train, spec.n_val, spec.data_seed)?;
    let model = spec.model_config(&cell, data.meta.input_dim);
    let out = train(model, &spec.train_config(&cell), &data)?;

    let dir = cli
        .out
        .join(&spec.experiment_id)
        .join("runs")
        .join(format!("h{}_T{}_N{}_s{}", cell.h, cell.seq_len, cell.hidden, cell.seed));
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("record.json"), &out.record)?;
    if let Some(params) = &out.params {
        let mut w = std::io::BufWriter::new(File::create(dir.join("checkpoint.json"))?);
        checkpoint::save(params, &mut w)?;
    }
    let mut manifest = loaded.manifest("train", cfg)?;
    manifest.seeds = vec![cell.seed];
    manifest.effective["cell"] = json!({ "h": cell.h, "T": cell.seq_len, "N": cell.hidden, "seed": cell.seed });
    manifest.write(&dir)?;
    println!(
        "{}",
        json!({ "command": "train", "dir": dir.display().to_string(), "record": out.record })
    );
    Ok(())
}

fn grid(cli: &Cli, cfg: &ConfigArgs) -> Result<()> {
    let loaded = load_spec(cli, cfg)?;
    let spec = &loaded.spec;
    let dir = cli.out.join(&spec.experiment_id);
    let manifest = loaded.manifest("grid", cfg)?;
    manifest.check_compatible(&dir)?;
    manifest.write(&dir)?;

    let results = dir.join("results.jsonl");
    let progress = run_grid(spec, &results, |_| {})?;
    let records = read_results(&results)?;
    let summary = aggregate(&records)?;
    let mut buf = Vec::new();
    write_summary_csv(&summary, &mut buf)?;
    let summary_path = dir.join("summary.csv");
    if fs::read(&summary_path).ok().as_deref() != Some(&buf[..]) {
        fs::write(&summary_path, &buf)?;
    }
    log::info!(
        "grid {}: {} cells, {} skipped, {} ran",
        spec.experiment_id,
        progress.total,
        progress.skipped,
        progress.ran
    );
    println!(
        "{}",
        json!({
            "command": "grid",
            "dir": dir.display().to_string(),
            "total": progress.total,
            "skipped": progress.skipped,
            "ran": progress.ran,
        })
    );
    Ok(())
}

fn softmin_model(args: &BuildArgs) -> Result<SoftminHeadModel> {
    let task = toy_max_plus_min(args.seq_len);
    let comps = exact_component_nets(&task)?;
    Ok(match args.beta {
        Some(b) => build_softmin_model_with_beta(&task, args.seq_len, b, comps)?,
        None => build_softmin_model(&task, args.seq_len, args.eps, comps)?,
    })
}

fn build_args_json(name: &str, args: &BuildArgs) -> serde_json::Value {
    json!({ "construction": name, "T": args.seq_len, "eps": args.eps, "beta": args.beta })
}

fn construction_name(c: Construction) -> &'static str {
    match c {
        Construction::Softmin => "softmin",
        Construction::SoftminModel => "softmin-model",
        Construction::ReluMax => "relu-max",
        Construction::ReluMin => "relu-min",
        Construction::Memorization => "memorization",
    }
}

fn construct(cli: &Cli, c: Construction, args: &BuildArgs) -> Result<()> {
    let name = construction_name(c);
    let model = match c {
        Construction::Softmin | Construction::SoftminModel => serde_json::to_value(softmin_model(args)?)?,
        Construction::ReluMax => serde_json::to_value(build_relu_max(args.seq_len, args.eps)?)?,
        Construction::ReluMin => serde_json::to_value(build_relu_min(args.seq_len, args.eps)?)?,
        Construction::Memorization => serde_json::to_value(build_memorization_model(
            &toy_max_plus_min(args.seq_len),
            args.seq_len,
            args.eps,
            args.seq_len,
        )?)?,
    };
    let dir = cli.out.join("construct").join(format!("{name}-T{}", args.seq_len));
    write_json(&dir.join("model.json"), &model)?;
    args_manifest("construct", build_args_json(name, args), vec![]).write(&dir)?;
    println!(
        "{}",
        json!({ "command": "construct", "dir": dir.display().to_string() })
    );
    Ok(())
}

fn unit_cube_sequences(seq_len: usize, samples: usize, seed: u64) -> Vec<Sequence> {
    let mut r = rng::stream(seed, &[seq_len as u64]);
    (0..samples)
        .map(|_| sample_sequence(&mut r, seq_len, 1, TokenDistribution::UnitCube))
        .collect()
}

fn verify(cli: &Cli, c: Construction, args: &BuildArgs, samples: usize, seed: u64) -> Result<()> {
    if samples == 0 {
        return Err(UsageError("--samples must be positive".into()).into());
    }
    let name = construction_name(c);
    let t = args.seq_len;
    let report: VerificationReport = match c {
        Construction::ReluMax => build_relu_max(t, args.eps)?.verify(samples, seed),
        Construction::ReluMin => build_relu_min(t, args.eps)?.verify(samples, seed),
        Construction::Softmin => verify_softmin_bound(&softmin_model(args)?, &unit_cube_sequences(t, samples, seed))?,
        Construction::SoftminModel => {
            verify_softmin_model(&softmin_model(args)?, &unit_cube_sequences(t, samples, seed))?
        }
        Construction::Memorization => build_memorization_model(&toy_max_plus_min(t), t, args.eps, t)?
            .verify(&unit_cube_sequences(t, samples, seed))?,
    };
    let dir = cli.out.join("verify").join(format!("{name}-T{t}"));
    write_json(&dir.join("report.json"), &report)?;
    let mut margs = build_args_json(name, args);
    margs["samples"] = json!(samples);
    margs["seed"] = json!(seed);
    args_manifest("verify", margs, vec![seed]).write(&dir)?;
    println!(
        "{}",
        json!({
            "command": "verify",
            "construction": name,
            "passed": report.passed(),
            "samples": report.samples,
            "violations": report.violations,
            "bound": report.bound,
            "max_observed": report.max_observed,
            "report": dir.join("report.json").display().to_string(),
        })
    );
    if !report.passed() {
        return Err(Violation(format!(
            "{name}: {} of {} samples exceed the bound {:e} (worst {:e})",
            report.violations, report.samples, report.bound, report.max_observed
        ))
        .into());
    }
    Ok(())
}

fn analyze(
    cli: &Cli,
    results: Option<&Path>,
    table: Option<&Path>,
    hidden: Option<usize>,
    drop: &[usize],
    config: TransitionConfig,
    threshold: f64,
) -> Result<()> {
    let (input, report): (&Path, AnalysisReport) = match (results, table) {
        (Some(p), None) => {
            if !p.is_file() {
                return Err(UsageError(format!("results file {} does not exist", p.display())).into());
            }
            let records = read_results(p)?;
            (p, analyze_records(&records, hidden, drop, config, threshold)?)
        }
        (None, Some(p)) => {
            let f = File::open(p).map_err(|e| UsageError(format!("table {}: {e}", p.display())))?;
            let table = ErrTable::read_csv(BufReader::new(f))?;
            (p, analyze_table(&table, hidden.unwrap_or(0), drop, config, threshold)?)
        }
        _ => return Err(UsageError("exactly one of --results and --table is required".into()).into()),
    };
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    let parent = input
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .unwrap_or("");
    let label = if parent.is_empty() {
        stem.to_string()
    } else {
        format!("{parent}-{stem}")
    };
    let dir = cli.out.join("analysis").join(label);
    report.write_to_dir(&dir)?;
    let args = json!({
        "input": input.display().to_string(),
        "input_sha256": sha256_hex(&fs::read(input)?),
        "hidden": hidden,
        "drop": drop,
        "transition": config,
        "reversal_threshold": threshold,
    });
    args_manifest("analyze", args, vec![]).write(&dir)?;
    println!(
        "{}",
        json!({
            "command": "analyze",
            "dir": dir.display().to_string(),
            "transition": report.transition,
            "reversal_onset": report.reversal_onset,
        })
    );
    Ok(())
}

fn collide(
    cli: &Cli,
    checkpoint_path: Option<&Path>,
    toy: bool,
    length: Option<usize>,
    data_seed: u64,
    budget: usize,
    seed: u64,
) -> Result<()> {
    let (label, report, args): (String, Option<CollisionReport>, serde_json::Value) = match (checkpoint_path, toy) {
        (Some(path), false) => {
            let f = File::open(path).map_err(|e| UsageError(format!("checkpoint {}: {e}", path.display())))?;
            let params = checkpoint::load(BufReader::new(f))?;
            let t = params.config.seq_len;
            if let Some(l) = length.filter(|&l| l != t) {
                return Err(anyhow!("checkpoint was trained at T = {t}, --length asks for {l}"));
            }
            let task = make_synthetic_task(data_seed);
            let report = find_attention_collision(&params, &task, &CollisionConfig::new(t, budget, seed))?;
            let stem = path
                .parent()
                .and_then(|p| p.file_name())
                .and_then(|s| s.to_str())
                .unwrap_or("checkpoint");
            let args = json!({
                "checkpoint": path.display().to_string(),
                "checkpoint_sha256": sha256_hex(&fs::read(path)?),
                "data_seed": data_seed,
                "budget": budget,
                "seed": seed,
            });
            (format!("{stem}-s{seed}"), report, args)
        }
        (None, true) => {
            let t = length.unwrap_or(16);
            let task = toy_max_plus_min(t);
            let min_only = RetrievalTask::new(
                "toy-min",
                Some(t),
                1,
                vec![task.components[1].clone()],
                OuterFn::Sum,
                TokenDistribution::UnitCube,
            )?;
            let model =
                build_softmin_model_with_beta(&min_only, t, TOY_COLLIDE_BETA, exact_component_nets(&min_only)?)?;
            let report = find_attention_collision(&model, &task, &CollisionConfig::new(t, budget, seed))?;
            let args = json!({ "toy": true, "T": t, "beta": TOY_COLLIDE_BETA, "budget": budget, "seed": seed });
            (format!("toy-T{t}-s{seed}"), report, args)
        }
        _ => return Err(UsageError("exactly one of --checkpoint and --toy is required".into()).into()),
    };
    let dir = cli.out.join("collide").join(label);
    write_json(
        &dir.join("report.json"),
        &json!({ "found": report.is_some(), "pair": report }),
    )?;
    args_manifest("collide", args, vec![seed]).write(&dir)?;
    println!(
        "{}",
        json!({
            "command": "collide",
            "dir": dir.display().to_string(),
            "found": report.is_some(),
            "distance": report.as_ref().map(|r| r.distance),
            "gap": report.as_ref().map(|r| r.gap),
            "width_bound": report.as_ref().and_then(|r| r.width_bound),
        })
    );
    Ok(())
}
