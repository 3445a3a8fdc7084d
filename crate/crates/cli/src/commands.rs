use std::path::{Path, PathBuf};
use std::time::Instant;

use dusego::diagnostics::{
    check_equivariance, energy_profile, gradient_probe, log_slope, random_graph, EnergyProfile, EquivarianceReport,
    GradientProbe,
};
use dusego::dynamics::{generate_split, NBodyConfig};
use dusego::graph::GraphInstance;
use dusego::model::{DataShape, Model, ModelConfig, ModelKind};
use dusego::persist::{atomic_write, load_checkpoint, read_dataset, write_checkpoint, write_dataset};
use dusego::rng::derive_seed;
use dusego::tasks::{generate_graphs, AutoencoderConfig};
use dusego::train::{
    evaluate, linear_extrapolation_mse, mean_std, train, zero_motion_mse, Metrics, RunRecord, TrainConfig,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hash_of, resolve, ExperimentConfig, Task};
use crate::error::{CliError, Result};

pub const GENERATOR_VERSION: u32 = 1;
const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub file: String,
    pub count: usize,
    pub first_seed: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Generator {
    Nbody { simulation: NBodyConfig },
    Graphs { graphs: AutoencoderConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub generator_version: u32,
    pub generator: Generator,
    pub master_seed: u64,
    /// Hash of the generator constants and split sizes; `train` refuses data whose hash differs.
    pub data_hash: String,
    pub splits: Vec<SplitInfo>,
    pub resampled: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes()).map_err(|e| write_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes()).map_err(|e| write_err(path, e))
}

fn write_err(path: &Path, e: dusego::Error) -> CliError {
    match e {
        dusego::Error::Io(source) => CliError::Io {
            context: format!("writing {}", path.display()),
            source,
        },
        other => CliError::Core(other),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn nbody_data_hash(cfg: &ExperimentConfig) -> String {
    let s = &cfg.nbody;
    hash_of(&("nbody", GENERATOR_VERSION, &s.simulation, s.train, s.val, s.test))
}

fn graphs_data_hash(cfg: &ExperimentConfig) -> String {
    let s = &cfg.autoencoder;
    hash_of(&("graphs", GENERATOR_VERSION, &s.graphs, s.train, s.val, s.test))
}

fn write_splits(
    dir: &Path,
    master_seed: u64,
    mut make: impl FnMut(u64, usize) -> Result<(Vec<GraphInstance>, usize)>,
    sizes: [usize; 3],
) -> Result<(Vec<SplitInfo>, usize)> {
    let mut first = master_seed;
    let mut infos = Vec::new();
    let mut resampled = 0;
    for (name, count) in SPLITS.iter().zip(sizes) {
        let (graphs, redraws) = make(first, count)?;
        resampled += redraws;
        let file = format!("{name}.bin");
        let path = dir.join(&file);
        write_dataset(&path, &graphs).map_err(|e| write_err(&path, e))?;
        infos.push(SplitInfo {
            name: name.to_string(),
            file,
            count,
            first_seed: first,
            sha256: sha256_file(&path)?,
        });
        first = first.wrapping_add(count as u64);
    }
    Ok((infos, resampled))
}

/// Writes `train.bin`, `val.bin`, `test.bin` and `manifest.json`.
pub fn gen_nbody(cfg: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.map(resolve).unwrap_or_else(|| cfg.data_path());
    let master_seed = seed.unwrap_or(cfg.nbody.seed);
    let sim = cfg.nbody.simulation.clone();
    let (splits, resampled) = write_splits(
        &dir,
        master_seed,
        |first, n| {
            let s = generate_split(&sim, first, n)?;
            Ok((s.graphs, s.resampled))
        },
        [cfg.nbody.train, cfg.nbody.val, cfg.nbody.test],
    )?;
    let manifest = Manifest {
        format_version: dusego::persist::FORMAT_VERSION,
        generator_version: GENERATOR_VERSION,
        generator: Generator::Nbody { simulation: sim },
        master_seed,
        data_hash: nbody_data_hash(cfg),
        splits,
        resampled,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(dir)
}

pub fn gen_graphs(cfg: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.map(resolve).unwrap_or_else(|| cfg.data_path());
    let master_seed = seed.unwrap_or(cfg.autoencoder.seed);
    let gcfg = cfg.autoencoder.graphs.clone();
    let (splits, resampled) = write_splits(
        &dir,
        master_seed,
        |first, n| Ok((generate_graphs(&gcfg, n, first)?, 0)),
        [cfg.autoencoder.train, cfg.autoencoder.val, cfg.autoencoder.test],
    )?;
    let manifest = Manifest {
        format_version: dusego::persist::FORMAT_VERSION,
        generator_version: GENERATOR_VERSION,
        generator: Generator::Graphs { graphs: gcfg },
        master_seed,
        data_hash: graphs_data_hash(cfg),
        splits,
        resampled,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(dir)
}

pub struct Splits {
    pub manifest: Manifest,
    pub train: Vec<GraphInstance>,
    pub val: Vec<GraphInstance>,
    pub test: Vec<GraphInstance>,
}

/// Reads the dataset for a training task, checking it was generated from
/// the same constants the config names.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let dir = cfg.data_path();
    let expected = match cfg.task {
        Task::Nbody => nbody_data_hash(cfg),
        Task::Autoencoder => graphs_data_hash(cfg),
        other => return Err(CliError::Usage(format!("task {other:?} has no dataset"))),
    };
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", mpath.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", mpath.display())))?;
    if manifest.data_hash != expected {
        return Err(CliError::Data(format!(
            "{} was generated with different constants (hash {}, config expects {expected})",
            dir.display(),
            manifest.data_hash
        )));
    }
    let mut parts = Vec::new();
    for name in SPLITS {
        let info = manifest
            .splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CliError::Data(format!("manifest lists no {name} split")))?;
        let path = dir.join(&info.file);
        let graphs = read_dataset(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if graphs.len() != info.count {
            return Err(CliError::Data(format!(
                "{} holds {} graphs, manifest says {}",
                path.display(),
                graphs.len(),
                info.count
            )));
        }
        parts.push(graphs);
    }
    let test = parts.pop().expect("three splits");
    let val = parts.pop().expect("three splits");
    let train = parts.pop().expect("three splits");
    Ok(Splits {
        manifest,
        train,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub role: String,
    pub model: ModelKind,
    pub config_hash: String,
    pub data_hash: String,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub role: String,
    pub model: ModelKind,
    pub seeds: Vec<u64>,
    pub verdicts: Vec<dusego::train::Verdict>,
    /// Per-seed test loss, `None` for runs that never produced a checkpoint.
    pub test_loss: Vec<Option<f64>>,
    pub test_loss_mean: Option<f64>,
    pub test_loss_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent_error_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent_error_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub task: Task,
    pub data_hash: String,
    pub models: Vec<Aggregate>,
    /// Zero-motion and linear-extrapolation test MSE (N-body only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_motion_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_extrapolation_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    role: String,
    seed: u64,
    seconds: f64,
}

fn roles(cfg: &ExperimentConfig) -> Vec<(&'static str, ModelConfig)> {
    let mut r = vec![("model", cfg.model.clone())];
    if let Some(b) = &cfg.baseline {
        r.push(("baseline", b.clone()));
    }
    r
}

fn checkpoint_hash(mc: &ModelConfig, shape: &DataShape, tc: &TrainConfig, data_hash: &str) -> String {
    hash_of(&(mc, shape, tc, data_hash))
}

fn seed_dir(out: &Path, role: &str, seed: u64) -> PathBuf {
    out.join(role).join(format!("seed-{seed}"))
}

fn stats(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.len() != values.len() || present.is_empty() {
        return (None, None);
    }
    let (m, s) = mean_std(&present);
    (Some(m), Some(s))
}

pub fn aggregate(role: &str, model: ModelKind, records: &[RunRecord]) -> Aggregate {
    let test: Vec<Option<Metrics>> = records.iter().map(|r| r.test).collect();
    let loss: Vec<Option<f64>> = test.iter().map(|t| t.map(|m| m.loss)).collect();
    let f1: Vec<Option<f64>> = test.iter().map(|t| t.and_then(|m| m.f1)).collect();
    let pe: Vec<Option<f64>> = test.iter().map(|t| t.and_then(|m| m.percent_error)).collect();
    let (lm, ls) = stats(&loss);
    let (fm, fs) = stats(&f1);
    let (pm, ps) = stats(&pe);
    Aggregate {
        role: role.to_string(),
        model,
        seeds: records.iter().map(|r| r.seed).collect(),
        verdicts: records.iter().map(|r| r.verdict).collect(),
        test_loss: loss,
        test_loss_mean: lm,
        test_loss_std: ls,
        f1_mean: fm,
        f1_std: fs,
        percent_error_mean: pm,
        percent_error_std: ps,
    }
}

fn fmt_cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.6} ± {s:.6}"),
        _ => "n/a".into(),
    }
}

fn table(summary: &TrainSummary) -> String {
    let mut s = String::new();
    match summary.task {
        Task::Autoencoder => {
            s.push_str("| model | BCE | F1 | % Error |\n|---|---|---|---|\n");
            for a in &summary.models {
                s.push_str(&format!(
                    "| {} | {} | {} | {} |\n",
                    a.model,
                    fmt_cell(a.test_loss_mean, a.test_loss_std),
                    fmt_cell(a.f1_mean, a.f1_std),
                    fmt_cell(a.percent_error_mean, a.percent_error_std)
                ));
            }
        }
        _ => {
            s.push_str("| model | test MSE |\n|---|---|\n");
            for a in &summary.models {
                s.push_str(&format!("| {} | {} |\n", a.model, fmt_cell(a.test_loss_mean, a.test_loss_std)));
            }
            if let (Some(z), Some(l)) = (summary.zero_motion_mse, summary.linear_extrapolation_mse) {
                s.push_str(&format!("| zero-motion | {z:.6} |\n| linear-extrapolation | {l:.6} |\n"));
            }
        }
    }
    s
}

fn nbody_horizon(manifest: &Manifest) -> Option<f64> {
    match &manifest.generator {
        Generator::Nbody { simulation } => Some(simulation.horizon()),
        Generator::Graphs { .. } => None,
    }
}

/// Trains every configured model for every seed. Writes per-seed
/// `record.json` and `model.ckpt`, then `summary.json` and `table.md`.
/// Wall-clock timings go to `timings.json` only when requested, so the
/// default artifacts are reproducible byte for byte.
pub fn train_cmd(
    cfg: &ExperimentConfig,
    seeds: Option<&[u64]>,
    out: Option<&Path>,
    timings: bool,
) -> Result<TrainSummary> {
    let data = load_splits(cfg)?;
    let out = out.map(resolve).unwrap_or_else(|| cfg.out_path());
    let seeds = seeds.unwrap_or(&cfg.seeds);
    let shape = DataShape::of(
        data.train
            .first()
            .ok_or_else(|| CliError::Data("training split is empty".into()))?,
    );
    let test = (!data.test.is_empty()).then_some(data.test.as_slice());
    let mut models = Vec::new();
    let mut times = Vec::new();
    for (role, mc) in roles(cfg) {
        let hash = checkpoint_hash(&mc, &shape, &cfg.train, &data.manifest.data_hash);
        let mut records = Vec::new();
        for &seed in seeds {
            let start = Instant::now();
            let mut model = Model::new(mc.clone(), shape, seed)?;
            let record = train(&mut model, &data.train, &data.val, test, &cfg.train, seed)?;
            times.push(Timing {
                role: role.into(),
                seed,
                seconds: start.elapsed().as_secs_f64(),
            });
            let dir = seed_dir(&out, role, seed);
            let ckpt = dir.join("model.ckpt");
            write_checkpoint(&ckpt, &model.store, &hash).map_err(|e| write_err(&ckpt, e))?;
            write_json(
                &dir.join("record.json"),
                &SeedRecord {
                    role: role.into(),
                    model: mc.kind,
                    config_hash: hash.clone(),
                    data_hash: data.manifest.data_hash.clone(),
                    record: record.clone(),
                },
            )?;
            records.push(record);
        }
        models.push(aggregate(role, mc.kind, &records));
    }
    let horizon = nbody_horizon(&data.manifest);
    let summary = TrainSummary {
        task: cfg.task,
        data_hash: data.manifest.data_hash.clone(),
        models,
        zero_motion_mse: match (horizon, test) {
            (Some(_), Some(t)) => Some(zero_motion_mse(t)?),
            _ => None,
        },
        linear_extrapolation_mse: match (horizon, test) {
            (Some(h), Some(t)) => Some(linear_extrapolation_mse(t, h)?),
            _ => None,
        },
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_text(&out.join("table.md"), &table(&summary))?;
    if timings {
        write_json(&out.join("timings.json"), &times)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub role: String,
    pub model: ModelKind,
    pub seed: u64,
    pub test: Metrics,
    /// Whether the metrics equal the ones stored at training time, bit for bit.
    pub matches_record: bool,
}

/// Re-evaluates saved checkpoints on the test split and writes `eval.json`.
pub fn eval_cmd(cfg: &ExperimentConfig, seeds: Option<&[u64]>, out: Option<&Path>) -> Result<Vec<EvalRecord>> {
    let data = load_splits(cfg)?;
    let out = out.map(resolve).unwrap_or_else(|| cfg.out_path());
    let seeds = seeds.unwrap_or(&cfg.seeds);
    let shape = DataShape::of(&data.train[0]);
    let mut evals = Vec::new();
    for (role, mc) in roles(cfg) {
        let hash = checkpoint_hash(&mc, &shape, &cfg.train, &data.manifest.data_hash);
        for &seed in seeds {
            let dir = seed_dir(&out, role, seed);
            let mut model = Model::new(mc.clone(), shape, seed)?;
            let ckpt = dir.join("model.ckpt");
            load_checkpoint(&ckpt, &mut model.store, &hash)
                .map_err(|e| CliError::Data(format!("{}: {e}", ckpt.display())))?;
            let test = evaluate(&model, &data.test, cfg.train.batch_size, cfg.train.threshold)?;
            let stored: Option<SeedRecord> = std::fs::read_to_string(dir.join("record.json"))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            let matches_record = stored.and_then(|s| s.record.test).is_some_and(|m| m == test);
            evals.push(EvalRecord {
                role: role.into(),
                model: mc.kind,
                seed,
                test,
                matches_record,
            });
        }
    }
    write_json(&out.join("eval.json"), &evals)?;
    Ok(evals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub model: ModelKind,
    pub alpha: f64,
    pub depth: usize,
    pub graph: usize,
    pub seed: u64,
    pub csv: String,
    pub slope_h: f64,
    pub slope_x: f64,
    /// `log10(E⁰ / E^N)`.
    pub orders_dropped_h: f64,
    pub orders_dropped_x: f64,
    /// Largest `|log10(Eⁿ / E⁰)|` over the profile.
    pub max_orders_from_start_h: f64,
    pub max_orders_from_start_x: f64,
    pub truncated_at: Option<usize>,
}

fn orders(e0: f64, e: f64) -> f64 {
    (e0.max(f64::MIN_POSITIVE) / e.max(f64::MIN_POSITIVE)).log10()
}

pub fn summarize_profile(p: &EnergyProfile, graph: usize, csv: String) -> EnergySummary {
    let span = |es: &[f64]| es.iter().map(|&e| orders(es[0], e).abs()).fold(0.0, f64::max);
    EnergySummary {
        model: p.model,
        alpha: p.alpha,
        depth: p.depth,
        graph,
        seed: p.seed,
        csv,
        slope_h: log_slope(&p.energy_h),
        slope_x: log_slope(&p.energy_x),
        orders_dropped_h: orders(p.energy_h[0], *p.energy_h.last().expect("step 0 present")),
        orders_dropped_x: orders(p.energy_x[0], *p.energy_x.last().expect("step 0 present")),
        max_orders_from_start_h: span(&p.energy_h),
        max_orders_from_start_x: span(&p.energy_x),
        truncated_at: p.truncated_at,
    }
}

/// Model configurations profiled by the energy diagnostic: the stacked
/// network once and the ODE model for each damping value, both with
/// unit restoring coefficients.
pub fn energy_models(cfg: &ExperimentConfig, depth: usize) -> Vec<ModelConfig> {
    let base = ModelConfig {
        depth,
        dt: None,
        gamma_x: 1.0,
        gamma_h: 1.0,
        ..cfg.model.clone()
    };
    let mut out = vec![ModelConfig {
        kind: ModelKind::StackedEgnn,
        ..base.clone()
    }];
    out.extend(cfg.diagnose.alphas.iter().map(|&alpha| ModelConfig {
        kind: ModelKind::Dusego,
        alpha,
        share_weights: true,
        ..base.clone()
    }));
    out
}

const ENERGY_RAW_FEATURES: usize = 2;

fn diagnose_energy(cfg: &ExperimentConfig, depths: &[usize], seeds: &[u64], out: &Path) -> Result<()> {
    let dir = out.join("energy");
    let mut profiles = Vec::new();
    let mut summaries = Vec::new();
    for &seed in seeds {
        for g in 0..cfg.diagnose.graphs {
            let graph_seed = derive_seed(seed, "energy-graph", g as u64);
            let graph = random_graph(graph_seed, cfg.diagnose.nodes, ENERGY_RAW_FEATURES)?;
            for &depth in depths {
                for mc in energy_models(cfg, depth) {
                    let p = energy_profile(&mc, &graph, graph_seed)?;
                    let csv = format!("{}-alpha{}-depth{depth}-graph{g}-seed{seed}.csv", mc.kind, mc.alpha);
                    write_text(&dir.join(&csv), &p.to_csv())?;
                    summaries.push(summarize_profile(&p, g, csv));
                    profiles.push(p);
                }
            }
        }
    }
    write_json(&dir.join("profiles.json"), &profiles)?;
    write_json(&dir.join("summary.json"), &summaries)
}

fn equivariance_graph(cfg: &ExperimentConfig, seed: u64) -> Result<GraphInstance> {
    let sim = NBodyConfig {
        particles: cfg.diagnose.nodes,
        ..cfg.nbody.simulation.clone()
    };
    Ok(generate_split(&sim, seed, 1)?.graphs.remove(0))
}

fn diagnose_equivariance(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<Vec<EquivarianceReport>> {
    let dir = out.join("equivariance");
    let mut reports = Vec::new();
    for &seed in seeds {
        let graph = equivariance_graph(cfg, seed)?;
        let model = Model::new(cfg.model.clone(), DataShape::of(&graph), seed)?;
        let d = &cfg.diagnose;
        let r = check_equivariance(&model, &graph, d.trials, d.coord_tolerance, d.feature_tolerance, seed)?;
        let mut csv = String::from("trial,det,coord_error,feature_error\n");
        for (k, t) in r.trials.iter().enumerate() {
            csv.push_str(&format!("{k},{:.0},{:e},{:e}\n", t.det, t.coord_error, t.feature_error));
        }
        write_text(&dir.join(format!("seed{seed}.csv")), &csv)?;
        reports.push(r);
    }
    write_json(&dir.join("report.json"), &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub model: ModelKind,
    pub seed: u64,
    pub probes: Vec<GradientProbe>,
}

fn diagnose_gradient(cfg: &ExperimentConfig, depths: &[usize], seeds: &[u64], out: &Path) -> Result<()> {
    let dir = out.join("gradient");
    let mut sorted = depths.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut reports = Vec::new();
    let mut csv = String::from("model,seed,depth,loss,max_abs_grad,verdict\n");
    for &seed in seeds {
        let graphs = generate_split(&cfg.nbody.simulation, seed, cfg.diagnose.graphs)?.graphs;
        for kind in [ModelKind::Dusego, ModelKind::StackedEgnn] {
            let base = ModelConfig {
                kind,
                ..cfg.model.clone()
            };
            let probes = gradient_probe(&base, &sorted, &graphs, seed)?;
            for p in &probes {
                let cell = |v: Option<f64>| v.map_or_else(|| "".to_string(), |x| format!("{x:e}"));
                csv.push_str(&format!(
                    "{kind},{seed},{},{},{},{}\n",
                    p.depth,
                    cell(p.loss),
                    cell(p.max_abs_grad),
                    serde_json::to_value(p.verdict)?.as_str().unwrap_or_default()
                ));
            }
            reports.push(GradientReport { model: kind, seed, probes });
        }
    }
    write_text(&dir.join("probes.csv"), &csv)?;
    write_json(&dir.join("report.json"), &reports)
}

/// Runs the diagnostic named by the config's task.
pub fn diagnose_cmd(
    cfg: &ExperimentConfig,
    depths: Option<&[usize]>,
    seeds: Option<&[u64]>,
    out: Option<&Path>,
) -> Result<PathBuf> {
    let out = out.map(resolve).unwrap_or_else(|| cfg.out_path());
    let depths = depths.unwrap_or(&cfg.diagnose.depth_list);
    if depths.is_empty() || depths.contains(&0) {
        return Err(CliError::Usage("--depth-list needs positive depths".into()));
    }
    let seeds = seeds.unwrap_or(&cfg.seeds);
    match cfg.task {
        Task::DiagnoseEnergy => diagnose_energy(cfg, depths, seeds, &out)?,
        Task::DiagnoseEquivariance => {
            diagnose_equivariance(cfg, seeds, &out)?;
        }
        Task::DiagnoseGradient => diagnose_gradient(cfg, depths, seeds, &out)?,
        other => return Err(CliError::Usage(format!("task {other:?} is not a diagnostic"))),
    }
    Ok(out)
}
