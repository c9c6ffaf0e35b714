//! Command-line front end: training, prediction, evaluation, active
//! learning, embedding, the bias probe and the two numerical self-checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use molbayes::activeharness::{bias_probe, compare_strategies, LearningCurve, NetworkFactory};
use molbayes::bayes::gaussian_oracle;
use molbayes::dataset::{load_corpus, load_csv, split, Dataset, Split};
use molbayes::evalmetrics::{confidence_error_curve, rmse, summarize, PredictionRecord, Ranking, DEFAULT_PERCENTILES};
use molbayes::gradcheck::{check_models, check_primitives, DEFAULT_STEP, DEFAULT_TOLERANCE};
use molbayes::pipeline::{InferenceKind, ModelKind, RunConfig, TrainedModel};
use molbayes::semisup::train_embeddings;
use molbayes::smiles::MolGraph;
use molbayes::synth::{self, Family};

/// Exit status when a self-check ran to completion but did not pass.
const CHECK_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "molbayes", version, about = "Bayesian graph-convolutional regression for molecules")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; created if missing.
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    /// CSV path, or `synthetic:solubility[:N]`, `synthetic:clusters[:N]`.
    #[arg(long, global = true)]
    dataset: Option<String>,
    #[arg(long, global = true)]
    model: Option<ModelArg>,
    #[arg(long, global = true)]
    inference: Option<InferenceArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModelArg {
    Graphconv,
    Semisup,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum InferenceArg {
    Map,
    Dropout,
    Svgd,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit on the training split and score the test split.
    Train,
    /// Score molecules with a saved checkpoint.
    Predict {
        /// Checkpoint directory; defaults to `<out-dir>/checkpoints`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score every row instead of the test split.
        #[arg(long)]
        all: bool,
    },
    /// Metrics and confidence curves from a predictions file.
    Evaluate {
        /// Defaults to `<out-dir>/predictions.csv`.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Active versus random acquisition learning curves.
    ActiveLearn {
        /// Start from scaffold-biased initial pools.
        #[arg(long)]
        biased: bool,
    },
    /// Pre-train the semi-supervised embedding only.
    Embed {
        /// Extra unlabeled structures, one SMILES per line.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Uncertainty on an unseen scaffold family versus in-domain molecules.
    BiasProbe {
        #[arg(long, default_value = "steroid")]
        probe: String,
        #[arg(long, default_value_t = 60)]
        per_family: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Finite-difference check of every gradient.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// SVGD on a standard normal target against its closed-form moments.
    SvgdOracle {
        #[arg(long, default_value_t = 50)]
        particles: usize,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        step_size: f64,
    },
    /// Write a synthetic dataset as CSV.
    SynthData {
        #[arg(long, value_enum, default_value = "solubility")]
        kind: SynthKind,
        #[arg(long, default_value_t = 1128)]
        count: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SynthKind {
    Solubility,
    Clusters,
    Families,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            let kind = err
                .chain()
                .find_map(|e| e.downcast_ref::<molbayes::Error>())
                .map_or("Error", molbayes::Error::kind);
            let record = json!({
                "status": "error",
                "command": name,
                "kind": kind,
                "message": format!("{err:#}"),
            });
            eprintln!("{record}");
            if cli.common.out_dir.is_dir() {
                let _ = fs::write(cli.common.out_dir.join("error.json"), record.to_string());
            }
            ExitCode::FAILURE
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train => "train",
        Command::Predict { .. } => "predict",
        Command::Evaluate { .. } => "evaluate",
        Command::ActiveLearn { .. } => "active-learn",
        Command::Embed { .. } => "embed",
        Command::BiasProbe { .. } => "bias-probe",
        Command::Gradcheck { .. } => "gradcheck",
        Command::SvgdOracle { .. } => "svgd-oracle",
        Command::SynthData { .. } => "synth-data",
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let c = &cli.common;
    match &cli.command {
        Command::Train => train(c),
        Command::Predict { checkpoint, all } => predict(c, checkpoint.as_deref(), *all),
        Command::Evaluate { predictions } => evaluate(c, predictions.as_deref()),
        Command::ActiveLearn { biased } => active_learn(c, *biased),
        Command::Embed { corpus } => embed(c, corpus.as_deref()),
        Command::BiasProbe {
            probe,
            per_family,
            repeats,
        } => probe_families(c, probe, *per_family, *repeats),
        Command::Gradcheck { tolerance } => gradcheck(c, *tolerance),
        Command::SvgdOracle {
            particles,
            steps,
            step_size,
        } => svgd_oracle(c, *particles, *steps, *step_size),
        Command::SynthData { kind, count, output } => synth_data(c, *kind, *count, output),
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(m) = c.model {
        cfg.model = match m {
            ModelArg::Graphconv => ModelKind::Graphconv,
            ModelArg::Semisup => ModelKind::Semisup,
        };
    }
    if let Some(i) = c.inference {
        cfg.inference = match i {
            InferenceArg::Map => InferenceKind::Map,
            InferenceArg::Dropout => InferenceKind::Dropout,
            InferenceArg::Svgd => InferenceKind::Svgd,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Dataset plus the number of rejected rows.
fn load_dataset(spec: Option<&str>, cfg: &RunConfig, default: &str) -> Result<(Dataset, usize)> {
    let spec = spec.unwrap_or(default);
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let mut parts = rest.splitn(2, ':');
        let kind = parts.next().unwrap_or("");
        let size = parts.next().map(str::parse::<usize>).transpose().context("synthetic dataset size")?;
        let ds = match kind {
            "solubility" => synth::solubility_dataset(size.unwrap_or(1128), cfg.seed)?,
            "clusters" => synth::clustered_dataset(size.unwrap_or(70), cfg.seed)?.0,
            other => bail!("unknown synthetic dataset `{other}`"),
        };
        return Ok((ds, 0));
    }
    let path = Path::new(spec);
    let report = load_csv(path, &cfg.smiles_column, &cfg.target_column)
        .with_context(|| format!("loading dataset {}", path.display()))?;
    Ok((report.dataset, report.rejected.len()))
}

fn prepare_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
    Ok(&c.out_dir)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    if !path.exists() {
        return Err(molbayes::Error::FileNotFound(path.to_path_buf()).into());
    }
    let mut r = csv::Reader::from_path(path)?;
    let records = r.deserialize().collect::<Result<Vec<PredictionRecord>, _>>()?;
    Ok(records)
}

/// Writes the three confidence curves and returns metrics as JSON.
fn evaluation(dir: &Path, records: &[PredictionRecord]) -> Result<Value> {
    let summary = summarize(records)?;
    let mut curves = serde_json::Map::new();
    for ranking in Ranking::ALL {
        let curve = confidence_error_curve(records, &DEFAULT_PERCENTILES, ranking)?;
        fs::write(dir.join(format!("curve_{}.csv", ranking.name())), curve.to_csv())?;
        curves.insert(ranking.name().into(), json!(curve.rmse_at));
    }
    Ok(json!({
        "n": summary.n,
        "rmse": summary.rmse,
        "r2": summary.r2,
        "spearman": summary.spearman_total,
        "spearman_epistemic": summary.spearman_epistemic,
        "spearman_aleatoric": summary.spearman_aleatoric,
        "mean_total_var": summary.mean_total_var,
        "percentiles": DEFAULT_PERCENTILES,
        "curves": curves,
    }))
}

fn train(c: &Common) -> Result<u8> {
    let cfg = load_config(c)?;
    let dir = prepare_dir(c)?;
    let (ds, rejected) = load_dataset(c.dataset.as_deref(), &cfg, "synthetic:solubility")?;
    let parts = split(&ds.graphs(), &cfg.split, cfg.seed)?;
    fs::write(dir.join("config.snapshot"), cfg.to_toml()?)?;
    write_json(&dir.join("split.json"), &serde_json::to_value(&parts)?)?;
    let trained = TrainedModel::fit(&cfg, &ds, &parts, &[])?;
    trained.save(&dir.join("checkpoints"))?;
    let records = trained.predict_records(&ds, &parts.test)?;
    write_predictions(&dir.join("predictions.csv"), &records)?;
    let mut metrics = evaluation(dir, &records)?;
    let train_mean = ds.targets_of(&parts.train).iter().sum::<f64>() / parts.train.len() as f64;
    let baseline: Vec<PredictionRecord> = records
        .iter()
        .map(|r| PredictionRecord {
            mean: train_mean,
            ..r.clone()
        })
        .collect();
    metrics["command"] = json!("train");
    metrics["dataset"] = json!(ds.name);
    metrics["rows"] = json!(ds.len());
    metrics["rejected_rows"] = json!(rejected);
    metrics["split_sizes"] = json!([parts.train.len(), parts.validation.len(), parts.test.len()]);
    metrics["mean_baseline_rmse"] = json!(rmse(&baseline)?);
    metrics["training_history"] = json!(trained.history);
    metrics["embedding_history"] = json!(trained.embedding_history);
    write_json(&dir.join("metrics.json"), &metrics)?;
    println!("{}", json!({"status": "ok", "rmse": metrics["rmse"], "spearman": metrics["spearman"]}));
    Ok(0)
}

fn predict(c: &Common, checkpoint: Option<&Path>, all: bool) -> Result<u8> {
    let dir = prepare_dir(c)?;
    let ckpt = checkpoint.map_or_else(|| dir.join("checkpoints"), Path::to_path_buf);
    let trained = TrainedModel::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let cfg = &trained.config;
    let (ds, _) = load_dataset(c.dataset.as_deref(), cfg, "synthetic:solubility")?;
    let indices: Vec<usize> = if all {
        (0..ds.len()).collect()
    } else {
        let parts: Split = split(&ds.graphs(), &cfg.split, cfg.seed)?;
        parts.test
    };
    let records = trained.predict_records(&ds, &indices)?;
    write_predictions(&dir.join("predictions.csv"), &records)?;
    println!("{}", json!({"status": "ok", "predictions": records.len()}));
    Ok(0)
}

fn evaluate(c: &Common, predictions: Option<&Path>) -> Result<u8> {
    let dir = prepare_dir(c)?;
    let path = predictions.map_or_else(|| dir.join("predictions.csv"), Path::to_path_buf);
    let records = read_predictions(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut metrics = evaluation(dir, &records)?;
    metrics["command"] = json!("evaluate");
    write_json(&dir.join("metrics.json"), &metrics)?;
    println!("{}", json!({"status": "ok", "rmse": metrics["rmse"], "spearman": metrics["spearman"]}));
    Ok(0)
}

fn active_learn(c: &Common, biased: bool) -> Result<u8> {
    let cfg = load_config(c)?;
    let dir = prepare_dir(c)?;
    let (ds, _) = load_dataset(c.dataset.as_deref(), &cfg, "synthetic:clusters")?;
    fs::write(dir.join("config.snapshot"), cfg.to_toml()?)?;
    let seeds: Vec<u64> = (0..cfg.active.repetitions as u64).map(|k| cfg.seed + k).collect();
    let runs = compare_strategies(&cfg, &ds.graphs(), &ds.targets(), &seeds, biased)?;
    let curves: Vec<LearningCurve> = runs.iter().flat_map(|(a, r)| [a.clone(), r.clone()]).collect();
    fs::write(dir.join("learning_curve.csv"), LearningCurve::to_csv(&curves))?;
    let mean_at = |pick: fn(&(LearningCurve, LearningCurve)) -> &LearningCurve| -> Vec<f64> {
        let len = runs.iter().map(|r| pick(r).points.len()).min().unwrap_or(0);
        (0..len)
            .map(|i| runs.iter().map(|r| pick(r).points[i].rmse).sum::<f64>() / runs.len() as f64)
            .collect()
    };
    let active = mean_at(|r| &r.0);
    let random = mean_at(|r| &r.1);
    let acquisitions: Vec<Value> = runs
        .iter()
        .map(|(a, _)| json!({"seed": a.seed, "acquisitions": a.acquisitions}))
        .collect();
    write_json(&dir.join("acquisitions.json"), &json!(acquisitions))?;
    write_json(
        &dir.join("metrics.json"),
        &json!({
            "command": "active-learn",
            "biased_initial_pool": biased,
            "seeds": seeds,
            "mean_rmse_active": active,
            "mean_rmse_random": random,
        }),
    )?;
    println!("{}", json!({"status": "ok", "runs": runs.len()}));
    Ok(0)
}

fn embed(c: &Common, corpus: Option<&Path>) -> Result<u8> {
    let cfg = load_config(c)?;
    let dir = prepare_dir(c)?;
    let mut graphs: Vec<MolGraph> = match (&c.dataset, corpus) {
        (None, Some(_)) => Vec::new(),
        _ => load_dataset(c.dataset.as_deref(), &cfg, "synthetic:solubility")?.0.graphs(),
    };
    if let Some(path) = corpus {
        graphs.extend(load_corpus(path)?);
    }
    let emb = train_embeddings(&graphs, &cfg.network, &cfg.embedding_config(cfg.seed))?;
    fs::write(dir.join("config.snapshot"), cfg.to_toml()?)?;
    let ckpt = dir.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    fs::write(ckpt.join("embedding.txt"), emb.params.to_text())?;
    let u = emb.molecule_vectors()?;
    let mut w = csv::Writer::from_path(dir.join("molecule_vectors.csv"))?;
    for (g, r) in graphs.iter().zip(0..u.rows()) {
        let mut row = vec![g.source_smiles.clone()];
        row.extend(u.row(r).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    write_json(
        &dir.join("metrics.json"),
        &json!({
            "command": "embed",
            "corpus_size": graphs.len(),
            "log_likelihood": emb.objective,
            "history": emb.history,
        }),
    )?;
    println!("{}", json!({"status": "ok", "log_likelihood": emb.objective}));
    Ok(0)
}

fn probe_families(c: &Common, probe: &str, per_family: usize, repeats: usize) -> Result<u8> {
    let cfg = load_config(c)?;
    let dir = prepare_dir(c)?;
    fs::write(dir.join("config.snapshot"), cfg.to_toml()?)?;
    let probe_family = Family::from_name(probe).ok_or_else(|| molbayes::Error::EmptyFamily(probe.to_string()))?;
    let train_families: Vec<&str> = Family::ALL
        .iter()
        .filter(|&&f| f != probe_family)
        .map(|f| f.name())
        .collect();
    let mut reports = Vec::new();
    for k in 0..repeats as u64 {
        let seed = cfg.seed + k;
        let (ds, tags) = synth::family_dataset(&Family::ALL, per_family, seed)?;
        let graphs = ds.graphs();
        let names: Vec<String> = tags.iter().map(|f| f.name().to_string()).collect();
        let corpus: Vec<usize> = (0..graphs.len()).filter(|&i| tags[i] != probe_family).collect();
        let factory = NetworkFactory::prepare(&cfg, &graphs, &corpus, seed)?;
        reports.push(bias_probe(&graphs, &names, &train_families, probe, &synth::logp_surrogate, &factory, seed)?);
    }
    write_json(&dir.join("bias_probe.json"), &serde_json::to_value(&reports)?)?;
    let wins = reports.iter().filter(|r| r.probe_more_uncertain()).count();
    write_json(
        &dir.join("metrics.json"),
        &json!({
            "command": "bias-probe",
            "train_families": train_families,
            "probe_family": probe,
            "repeats": repeats,
            "probe_more_uncertain": wins,
            "median_total_var_in_domain": reports.iter().map(|r| r.in_domain.median_total_var).collect::<Vec<_>>(),
            "median_total_var_probe": reports.iter().map(|r| r.probe.median_total_var).collect::<Vec<_>>(),
        }),
    )?;
    println!("{}", json!({"status": "ok", "probe_more_uncertain": wins, "repeats": repeats}));
    Ok(0)
}

fn gradcheck(c: &Common, tolerance: f64) -> Result<u8> {
    let cfg = load_config(c)?;
    let dir = prepare_dir(c)?;
    let mut results = check_primitives(cfg.seed, DEFAULT_STEP, tolerance)?;
    results.extend(check_models(cfg.seed, DEFAULT_STEP, tolerance)?);
    let passed = results.iter().all(|r| r.passed);
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    write_json(
        &dir.join("metrics.json"),
        &json!({
            "command": "gradcheck",
            "tolerance": tolerance,
            "passed": passed,
            "max_rel_err": worst,
            "checks": results,
        }),
    )?;
    println!("{}", json!({"status": if passed { "pass" } else { "fail" }, "max_rel_err": worst}));
    Ok(if passed { 0 } else { CHECK_FAILED })
}

fn svgd_oracle(c: &Common, particles: usize, steps: usize, step_size: f64) -> Result<u8> {
    let cfg = load_config(c)?;
    let dir = prepare_dir(c)?;
    let report = gaussian_oracle(particles, 2, steps, step_size, cfg.seed)?;
    let mut value = serde_json::to_value(&report)?;
    value["command"] = json!("svgd-oracle");
    value["passed"] = json!(report.passed());
    write_json(&dir.join("metrics.json"), &value)?;
    println!(
        "{}",
        json!({
            "status": if report.passed() { "pass" } else { "fail" },
            "mean": report.mean,
            "variance": report.variance,
        })
    );
    Ok(if report.passed() { 0 } else { CHECK_FAILED })
}

fn synth_data(c: &Common, kind: SynthKind, count: usize, output: &Path) -> Result<u8> {
    let seed = c.seed.unwrap_or(0);
    let mut w = csv::Writer::from_path(output).with_context(|| format!("writing {}", output.display()))?;
    w.write_record(["smiles", "target", "group"])?;
    let rows: Vec<(String, f64, String)> = match kind {
        SynthKind::Solubility => synth::solubility_dataset(count, seed)?
            .records
            .into_iter()
            .map(|r| (r.smiles, r.target, String::new()))
            .collect(),
        SynthKind::Clusters => {
            let per = count.div_ceil(synth::CLUSTER_COUNT);
            let (ds, tags) = synth::clustered_dataset(per, seed)?;
            ds.records
                .into_iter()
                .zip(tags)
                .map(|(r, t)| (r.smiles, r.target, format!("cluster-{t}")))
                .collect()
        }
        SynthKind::Families => {
            let per = count.div_ceil(Family::ALL.len());
            let (ds, tags) = synth::family_dataset(&Family::ALL, per, seed)?;
            ds.records
                .into_iter()
                .zip(tags)
                .map(|(r, f)| (r.smiles, r.target, f.name().to_string()))
                .collect()
        }
    };
    for (s, t, g) in &rows {
        w.write_record([s.as_str(), &format!("{t:?}"), g.as_str()])?;
    }
    w.flush()?;
    println!("{}", json!({"status": "ok", "rows": rows.len(), "output": output}));
    Ok(0)
}
