//! The six subcommands: ingest, synth, transform-spread, train, eval, probe.
//!
//! Every command is a pure function of (arguments, input files, seed):
//! outputs are written atomically, and each output directory gets a
//! manifest recording the resolved configuration, its hash, and a digest
//! of every file produced, so re-runs are byte-checkable.

use std::fs;
use std::path::Path;

use serde_json::json;

use ktrace_core::baselines::{bkt_fit, pfa_fit};
use ktrace_core::dataset::{
    self, generate_synthetic, Interaction, InteractionSequence, SkillOrdering, SyntheticSpec,
};
use ktrace_core::diagnostics::{
    first_step_activations, memory_change_map, oracle_simulation, post_streak_predictions,
    prediction_deltas, Embedding2D, OracleDirection, TsneConfig,
};
use ktrace_core::dkt::DktModel;
use ktrace_core::dkvmn::DkvmnModel;
use ktrace_core::metrics::{evaluate, table_csv, Ordering};
use ktrace_core::numerics::{finite_diff_check, GradCheckConfig, Matrix, Rng};

use crate::config::{
    self, hex_hash, load_dataset, probe_threads, resolve_config, write_atomic, CliError,
    DataFormat, ModelName, Overrides,
};

// ── ingest ─────────────────────────────────────────────────────────────

pub fn cmd_ingest(input: &Path, format: &str, out: &Path) -> Result<(), CliError> {
    let format = DataFormat::parse(format)?;
    if format == DataFormat::Canonical {
        return Err(CliError::Usage(
            "ingest expects a CSV format (assistments or ednet_kt1)".into(),
        ));
    }
    let ds = load_dataset(&config::DatasetRef {
        path: input.to_path_buf(),
        format,
    })?;
    dataset::write_canonical(&ds, out)?;
    let args = json!({
        "input": input,
        "format": format,
        "out": out,
    });
    config::write_run_manifest(
        out,
        "ingest",
        args,
        &["sequences.jsonl", "vocab.json"],
        json!({}),
    )?;
    println!(
        "ingested {} students, {} skills, {} interactions -> {}",
        ds.n_students(),
        ds.n_skills(),
        ds.total_interactions(),
        out.display()
    );
    Ok(())
}

// ── synth ──────────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    students: usize,
    skills: usize,
    min_len: usize,
    max_len: usize,
    skill_order: &str,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let ordering = match skill_order {
        "blocked" => SkillOrdering::Blocked,
        "random" => SkillOrdering::Random,
        other => {
            return Err(CliError::Usage(format!(
                "unknown skill order {other:?} (expected blocked or random)"
            )))
        }
    };
    let spec =
        SyntheticSpec::with_varied_skills(students, skills, (min_len, max_len), ordering, seed);
    let ds = generate_synthetic(&spec)?;
    dataset::write_canonical(&ds, out)?;
    config::write_run_manifest(
        out,
        "synth",
        serde_json::to_value(&spec).expect("spec serializes"),
        &["sequences.jsonl", "vocab.json"],
        json!({}),
    )?;
    println!(
        "generated {} students over {} skills ({} interactions) -> {}",
        ds.n_students(),
        ds.n_skills(),
        ds.total_interactions(),
        out.display()
    );
    Ok(())
}

// ── transform-spread ───────────────────────────────────────────────────

pub fn cmd_transform_spread(data: &Path, out: &Path) -> Result<(), CliError> {
    let ds = dataset::read_canonical(data)?;
    let spread = ds.spread();
    dataset::write_canonical(&spread, out)?;
    config::write_run_manifest(
        out,
        "transform-spread",
        json!({ "data": data, "out": out }),
        &["sequences.jsonl", "vocab.json"],
        json!({}),
    )?;
    println!(
        "spread {} sequences -> {}",
        spread.n_students(),
        out.display()
    );
    Ok(())
}

// ── train ──────────────────────────────────────────────────────────────

pub fn cmd_train(config_path: Option<&Path>, ov: &Overrides) -> Result<(), CliError> {
    let cfg = resolve_config(config_path, ov)?;
    let ds = load_dataset(&cfg.dataset)?;
    let ds = match cfg.ordering {
        Ordering::Original => ds,
        Ordering::Spread => ds.spread(),
    };
    fs::create_dir_all(&cfg.output)?;
    let ckpt_dir = cfg.output.join("checkpoint");
    let train = cfg.hyperparameters.train_config(cfg.seed);

    let mut loss_csv = String::from("epoch,mean_loss\n");
    let notes;
    match cfg.model {
        ModelName::Dkt | ModelName::DktFrozen => {
            let mut model = DktModel::new(
                ds.n_skills(),
                cfg.hyperparameters.hidden,
                cfg.seed,
                config::dkt_mode(cfg.model),
            );
            let recurrent_pre = model.recurrent_hash();
            let log = model.train(&ds, &train)?;
            let recurrent_post = model.recurrent_hash();
            let content_hash = model.save(&ckpt_dir)?;
            for (epoch, loss) in log.epoch_losses.iter().enumerate() {
                loss_csv.push_str(&format!("{epoch},{loss}\n"));
            }
            notes = json!({
                "model_hash": hex_hash(content_hash),
                "recurrent_hash_pre": hex_hash(recurrent_pre),
                "recurrent_hash_post": hex_hash(recurrent_post),
                "warnings": log.warnings,
            });
            for w in &log.warnings {
                eprintln!("warning: {w}");
            }
        }
        ModelName::Dkvmn => {
            let h = &cfg.hyperparameters;
            let mut model = DkvmnModel::new(ds.n_skills(), h.slots, h.d_k, h.d_v, h.d_f, cfg.seed);
            let log = model.train(&ds, &train)?;
            let content_hash = model.save(&ckpt_dir)?;
            for (epoch, loss) in log.epoch_losses.iter().enumerate() {
                loss_csv.push_str(&format!("{epoch},{loss}\n"));
            }
            notes = json!({
                "model_hash": hex_hash(content_hash),
                "warnings": log.warnings,
            });
            for w in &log.warnings {
                eprintln!("warning: {w}");
            }
        }
        ModelName::Bkt => {
            let params = bkt_fit(&ds);
            let hash = config::save_baseline_json(&ckpt_dir, &params)?;
            notes = json!({
                "model_hash": hex_hash(hash),
                "fit": "per-skill EM with restarts; no epoch log",
            });
        }
        ModelName::Pfa => {
            let params = pfa_fit(&ds);
            let hash = config::save_baseline_json(&ckpt_dir, &params)?;
            notes = json!({
                "model_hash": hex_hash(hash),
                "fit": "per-skill logistic regression; no epoch log",
            });
        }
    }

    write_atomic(&cfg.output.join("loss.csv"), loss_csv.as_bytes())?;
    config::write_run_manifest(
        &cfg.output,
        "train",
        serde_json::to_value(&cfg).expect("config serializes"),
        &["loss.csv"],
        notes,
    )?;
    println!(
        "trained {} on {} ({} ordering) -> {}",
        cfg.model.name(),
        cfg.dataset_tag(),
        cfg.ordering,
        cfg.output.display()
    );
    Ok(())
}

// ── eval ───────────────────────────────────────────────────────────────

pub fn cmd_eval(config_path: Option<&Path>, ov: &Overrides) -> Result<(), CliError> {
    let cfg = resolve_config(config_path, ov)?;
    let ds = load_dataset(&cfg.dataset)?;
    let report = evaluate(
        &cfg.model_kind(),
        &ds,
        &cfg.dataset_tag(),
        cfg.ordering,
        cfg.folds,
        cfg.seed,
    )?;

    fs::create_dir_all(&cfg.output)?;
    let mut report_bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    report_bytes.push(b'\n');
    write_atomic(&cfg.output.join("report.json"), &report_bytes)?;
    write_atomic(
        &cfg.output.join("table.csv"),
        table_csv(std::slice::from_ref(&report)).as_bytes(),
    )?;
    config::write_run_manifest(
        &cfg.output,
        "eval",
        serde_json::to_value(&cfg).expect("config serializes"),
        &["report.json", "table.csv"],
        json!({}),
    )?;
    println!(
        "{} on {} ({}): mean AUC {:.4} (±{:.4}), mean r² {:.4} over {} folds",
        report.model,
        report.dataset_tag,
        report.ordering,
        report.mean_auc,
        report.std_auc,
        report.mean_r_squared,
        cfg.folds
    );
    Ok(())
}

// ── probe ──────────────────────────────────────────────────────────────

fn probe_manifest(
    out: &Path,
    kind: &str,
    args: serde_json::Value,
    files: &[&str],
) -> Result<(), CliError> {
    let threads = probe_threads()?;
    config::write_run_manifest(
        out,
        "probe",
        json!({ "kind": kind, "args": args, "threads": threads }),
        files,
        json!({}),
    )
}

pub fn cmd_probe_tsne(
    checkpoint: &Path,
    out: &Path,
    perplexity: f64,
    iters: usize,
    seed: u64,
) -> Result<(), CliError> {
    probe_threads()?;
    let model = config::load_dkt(checkpoint)?;
    let points = first_step_activations(&model)?;
    let mut tsne = TsneConfig::new(seed);
    tsne.perplexity = perplexity;
    tsne.iters = iters;
    let embedding = Embedding2D::from_activations(&points, &tsne);
    for w in &embedding.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(out)?;
    write_atomic(&out.join("tsne.csv"), embedding.csv().as_bytes())?;
    write_atomic(&out.join("tsne.svg"), embedding.svg().as_bytes())?;
    probe_manifest(
        out,
        "tsne",
        json!({
            "checkpoint": checkpoint,
            "perplexity": perplexity,
            "iters": iters,
            "seed": seed,
        }),
        &["tsne.csv", "tsne.svg"],
    )?;
    println!(
        "embedded {} first-step activations (effective perplexity {}) -> {}",
        points.len(),
        embedding.effective_perplexity,
        out.display()
    );
    Ok(())
}

pub fn cmd_probe_deltas(
    checkpoint: &Path,
    data: &Path,
    student: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    probe_threads()?;
    let model = config::load_dkt(checkpoint)?;
    let ds = dataset::read_canonical(data)?;
    let seq = match student {
        Some(id) => ds
            .sequences
            .iter()
            .find(|s| s.student_id == id)
            .ok_or_else(|| CliError::Data(format!("no student {id:?} in {}", data.display())))?,
        None => ds
            .sequences
            .first()
            .ok_or_else(|| CliError::Data(format!("no sequences in {}", data.display())))?,
    };
    let deltas = prediction_deltas(&model, seq)?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("deltas.csv"), deltas.csv().as_bytes())?;
    write_atomic(&out.join("deltas.svg"), deltas.svg().as_bytes())?;
    probe_manifest(
        out,
        "deltas",
        json!({
            "checkpoint": checkpoint,
            "data": data,
            "student": seq.student_id,
        }),
        &["deltas.csv", "deltas.svg"],
    )?;
    println!(
        "prediction deltas for student {} ({} steps, {} sign anomalies) -> {}",
        seq.student_id,
        deltas.rows.len(),
        deltas.anomalies,
        out.display()
    );
    Ok(())
}

pub fn parse_skills(raw: &str) -> Result<Vec<usize>, CliError> {
    let skills: Result<Vec<usize>, _> = raw.split(',').map(|s| s.trim().parse()).collect();
    let skills =
        skills.map_err(|_| CliError::Usage(format!("bad skill list {raw:?} (want e.g. 7,8,24)")))?;
    if skills.is_empty() {
        return Err(CliError::Usage("empty skill list".into()));
    }
    Ok(skills)
}

pub fn cmd_probe_oracle(
    checkpoint: &Path,
    skills: &str,
    steps: usize,
    direction: &str,
    out: &Path,
) -> Result<(), CliError> {
    probe_threads()?;
    let skills = parse_skills(skills)?;
    let direction = match direction {
        "correct" => OracleDirection::Correct,
        "incorrect" => OracleDirection::Incorrect,
        other => {
            return Err(CliError::Usage(format!(
                "unknown direction {other:?} (expected correct or incorrect)"
            )))
        }
    };
    if steps < 2 {
        return Err(CliError::Usage("oracle needs --steps >= 2".into()));
    }
    let model = config::load_dkt(checkpoint)?;
    let curve = oracle_simulation(&model, &skills, steps, direction)?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("oracle.csv"), curve.csv().as_bytes())?;
    write_atomic(&out.join("oracle.svg"), curve.svg().as_bytes())?;
    probe_manifest(
        out,
        "oracle",
        json!({
            "checkpoint": checkpoint,
            "skills": skills,
            "steps": steps,
            "direction": direction,
        }),
        &["oracle.csv", "oracle.svg"],
    )?;
    for (skill, dists) in skills.iter().zip(&curve.step_distances) {
        let first = dists.first().copied().unwrap_or(0.0);
        let last = dists.last().copied().unwrap_or(0.0);
        println!(
            "skill {skill}: step distance {first:.6} -> {last:.6} over {steps} steps"
        );
    }
    println!("oracle curves -> {}", out.display());
    Ok(())
}

pub fn cmd_probe_streak(
    checkpoint: &Path,
    skills: &str,
    streak: usize,
    out: &Path,
) -> Result<(), CliError> {
    probe_threads()?;
    let skills = parse_skills(skills)?;
    if streak == 0 {
        return Err(CliError::Usage("streak must be at least 1".into()));
    }
    let model = config::load_dkt(checkpoint)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut probes = Vec::new();
    for &skill in &skills {
        let probe = post_streak_predictions(&model, skill, streak)?;
        let csv_name = format!("streak_s{skill}.csv");
        let svg_name = format!("streak_s{skill}.svg");
        write_atomic(&out.join(&csv_name), probe.csv().as_bytes())?;
        write_atomic(&out.join(&svg_name), probe.svg().as_bytes())?;
        files.push(csv_name);
        files.push(svg_name);
        probes.push(probe);
    }
    let file_refs: Vec<&str> = files.iter().map(String::as_str).collect();
    probe_manifest(
        out,
        "streak",
        json!({
            "checkpoint": checkpoint,
            "skills": skills,
            "streak": streak,
        }),
        &file_refs,
    )?;
    for probe in &probes {
        println!(
            "skill {}: {:.3} of skills predicted above 0.5 after {} correct (baseline {:.3})",
            probe.skill, probe.fraction_above_half, streak, probe.baseline_fraction_above_half
        );
    }
    println!("streak dumps -> {}", out.display());
    Ok(())
}

pub fn cmd_probe_memory(checkpoint: &Path, skills: &str, out: &Path) -> Result<(), CliError> {
    probe_threads()?;
    let skills = parse_skills(skills)?;
    let model = config::load_dkvmn(checkpoint)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for &skill in &skills {
        let map = memory_change_map(&model, skill)?;
        let csv_name = format!("memory_s{skill}.csv");
        let svg_name = format!("memory_s{skill}.svg");
        write_atomic(&out.join(&csv_name), map.csv().as_bytes())?;
        write_atomic(&out.join(&svg_name), map.svg().as_bytes())?;
        files.push(csv_name);
        files.push(svg_name);
    }
    let file_refs: Vec<&str> = files.iter().map(String::as_str).collect();
    probe_manifest(
        out,
        "memory",
        json!({
            "checkpoint": checkpoint,
            "skills": skills,
        }),
        &file_refs,
    )?;
    println!(
        "memory write maps for {} skill(s) -> {}",
        skills.len(),
        out.display()
    );
    Ok(())
}

/// Gradient checks at the fixed desk-scale shapes; exits 0 iff every max
/// relative error is below 1e-4.
pub fn cmd_probe_gradcheck(model: Option<&str>) -> Result<(), CliError> {
    probe_threads()?;
    let which = match model {
        None => vec!["dkt", "dkvmn"],
        Some("dkt") => vec!["dkt"],
        Some("dkvmn") => vec!["dkvmn"],
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown gradcheck model {other:?} (expected dkt or dkvmn)"
            )))
        }
    };
    let mut worst: f64 = 0.0;
    for name in which {
        let err = match name {
            "dkt" => gradcheck_dkt(),
            _ => gradcheck_dkvmn(),
        }?;
        println!("{name}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    if worst < 1e-4 {
        Ok(())
    } else {
        Err(CliError::Numerics(format!(
            "gradient check failed: max relative error {worst:.3e} >= 1e-4"
        )))
    }
}

fn gradcheck_sequence(n_skills: usize, len: usize, seed: u64) -> InteractionSequence {
    let mut rng = Rng::derive(seed, "gradcheck-seq");
    InteractionSequence {
        student_id: "gradcheck".to_string(),
        interactions: (0..len)
            .map(|_| Interaction::new(rng.below(n_skills), u8::from(rng.chance(0.5))))
            .collect(),
    }
}

fn gradcheck_dkt() -> Result<f64, CliError> {
    // H=8, N=5, seven steps.
    let model = DktModel::new(5, 8, 0, ktrace_core::dkt::DktMode::Full);
    let seq = gradcheck_sequence(5, 7, 0);
    let (_, grads) = model.loss_and_gradients(&seq)?;
    let params: Vec<Matrix> = model.params().iter().map(|&p| p.clone()).collect();
    Ok(finite_diff_check(
        |ps| model.with_params(ps).loss(&seq).expect("loss is finite"),
        &params,
        &grads,
        &GradCheckConfig::default(),
    ))
}

fn gradcheck_dkvmn() -> Result<f64, CliError> {
    // M=4, d_k=d_v=6, N=5, six steps.
    let model = DkvmnModel::new(5, 4, 6, 6, 6, 0);
    let seq = gradcheck_sequence(5, 6, 1);
    let (_, grads) = model.loss_and_gradients(&seq)?;
    let params: Vec<Matrix> = model.params().iter().map(|&p| p.clone()).collect();
    Ok(finite_diff_check(
        |ps| model.with_params(ps).loss(&seq).expect("loss is finite"),
        &params,
        &grads,
        &GradCheckConfig::default(),
    ))
}
