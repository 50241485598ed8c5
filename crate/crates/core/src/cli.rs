//! Command-line front end: `simulate`, `train`, `eval`, `similarity` and
//! `report`.
//!
//! Every command accepts `--config FILE` (JSON, unknown keys rejected);
//! flags given on the command line override file values, and the merged
//! configuration is written next to the outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cascade::ModelConfig;
use crate::coil_sim::{build_dataset, DatasetManifest, MaskKind, PhantomKind, SimConfig};
use crate::denoiser::DwpMode;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, similarity_by_count, MetricsTable, TaskSpec};
use crate::trainer::{train, Checkpoint, Protocol, TrainConfig, TrainOutput};

pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "hypercoil", version, about = "Coil-configuration adaptive parallel MRI reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-coil dataset.
    Simulate(SimulateArgs),
    /// Train a reconstruction model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on coil counts or explicit configurations.
    Eval(EvalArgs),
    /// Task similarity matrix from hypernetwork embeddings.
    Similarity(SimilarityArgs),
    /// Summarise several trained and evaluated runs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub coils: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub mask: Option<MaskKind>,
    #[arg(long)]
    pub accel: Option<f64>,
    #[arg(long)]
    pub acs: Option<usize>,
    #[arg(long)]
    pub phantom: Option<PhantomKind>,
    /// Skip pixelwise sensitivity normalization.
    #[arg(long)]
    pub raw_sens: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(long, value_delimiter = ',')]
    pub task_pool: Option<Vec<usize>>,
    #[arg(long)]
    pub cascades: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub dwp: Option<DwpMode>,
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Keep the cascade penalties at their initial values.
    #[arg(long)]
    pub fixed_penalties: bool,
    /// Give every cascade its own denoiser.
    #[arg(long)]
    pub untie_denoisers: bool,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Coil counts and/or configuration bitstrings, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_samples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Coil counts as `a..b` (inclusive) or a comma-separated list.
    #[arg(long)]
    pub coils: Option<String>,
    /// Total coils of the acquisition; defaults to the largest count.
    #[arg(long)]
    pub n_coils: Option<usize>,
    #[arg(long)]
    pub per_count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional PGM heatmap.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories, each holding `checkpoint.json` and `metrics.csv`.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateRun {
    pub out: Option<PathBuf>,
    pub sim: SimConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRun {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalRun {
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub tasks: Vec<String>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub max_samples: Option<usize>,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self {
            ckpt: None,
            data: None,
            tasks: ["5", "7", "9", "11", "12"].iter().map(|s| s.to_string()).collect(),
            seed: 0,
            out: None,
            max_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilarityRun {
    pub ckpt: Option<PathBuf>,
    pub coils: String,
    pub n_coils: Option<usize>,
    pub per_count: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub heatmap: Option<PathBuf>,
}

impl Default for SimilarityRun {
    fn default() -> Self {
        Self {
            ckpt: None,
            coils: "5..12".into(),
            n_coils: None,
            per_count: 16,
            seed: 0,
            out: None,
            heatmap: None,
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_SCHEMA,
        Error::Io { .. } | Error::Format { .. } => EXIT_MISSING_INPUT,
        Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("config serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::invalid(format!("missing --{flag}")))
}

fn existing(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "input not found")))
    }
}

/// `a..b` (inclusive) or `a,b,c`.
pub fn parse_counts(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::invalid(format!("bad coil list '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a == 0 || b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

pub fn run_simulate(args: SimulateArgs) -> Result<String> {
    let mut run: SimulateRun = load_config(args.config.as_deref())?;
    let sim = &mut run.sim;
    macro_rules! set {
        ($($f:ident => $t:expr),*) => { $(if let Some(v) = args.$f { $t = v; })* };
    }
    set!(size => sim.size, coils => sim.coils, samples => sim.samples, mask => sim.mask,
         accel => sim.accel, acs => sim.acs, phantom => sim.phantom, seed => sim.seed);
    if args.raw_sens {
        sim.normalize_sens = false;
    }
    if args.out.is_some() {
        run.out = args.out;
    }
    run.sim.validate()?;
    let out = required(run.out.clone(), "out")?;
    let manifest = build_dataset(&run.sim, &out)?;
    write_json(&out.join("sim_config.json"), &run)?;
    Ok(format!("wrote {} samples to {}\n", manifest.len(), out.display()))
}

pub fn run_train(args: TrainArgs) -> Result<String> {
    let mut run: TrainRun = load_config(args.config.as_deref())?;
    let (m, t) = (&mut run.model, &mut run.train);
    macro_rules! set {
        ($($f:ident => $t:expr),*) => { $(if let Some(v) = args.$f { $t = v; })* };
    }
    set!(protocol => t.protocol, task_pool => t.task_pool, epochs => t.epochs,
         batch_size => t.batch_size, lr => t.lr, seed => t.seed,
         cascades => m.cascades, levels => m.denoiser.levels, base_channels => m.denoiser.base_channels,
         embed_dim => m.denoiser.embed_dim, dwp => m.denoiser.dwp_mode);
    if args.max_samples.is_some() {
        t.max_samples = args.max_samples;
    }
    if args.fixed_penalties {
        m.learn_penalties = false;
    }
    if args.untie_denoisers {
        m.share_denoiser = false;
    }
    if args.data.is_some() {
        run.data = args.data;
    }
    if args.out.is_some() {
        run.out = args.out;
    }
    run.model.validate()?;
    let data_dir = required(run.data.clone(), "data")?;
    let out = required(run.out.clone(), "out")?;
    existing(&data_dir)?;
    let data = DatasetManifest::load(&data_dir)?;
    run.train.validate(data.n_coils)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(&out.join("run_config.json"), &run)?;
    let outcome = train(
        &data,
        &run.model,
        &run.train,
        &TrainOutput {
            dir: Some(out.clone()),
            verbose: !args.quiet,
        },
    )?;
    let last = outcome.log.last().map_or(f64::NAN, |r| r.loss);
    Ok(format!(
        "trained {} steps, final loss {last:.5}, checkpoint in {}\n",
        outcome.log.len(),
        out.display()
    ))
}

pub fn run_eval(args: EvalArgs) -> Result<String> {
    let mut run: EvalRun = load_config(args.config.as_deref())?;
    if let Some(t) = args.tasks {
        run.tasks = t;
    }
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if args.max_samples.is_some() {
        run.max_samples = args.max_samples;
    }
    for (src, dst) in [(args.ckpt, &mut run.ckpt), (args.data, &mut run.data), (args.out, &mut run.out)] {
        if src.is_some() {
            *dst = src;
        }
    }
    let tasks = run.tasks.iter().map(|t| t.parse()).collect::<Result<Vec<TaskSpec>>>()?;
    let ckpt_dir = required(run.ckpt.clone(), "ckpt")?;
    let data_dir = required(run.data.clone(), "data")?;
    let out = required(run.out.clone(), "out")?;
    existing(&ckpt_dir)?;
    existing(&data_dir)?;
    let ckpt = Checkpoint::load(&ckpt_dir)?;
    let data = DatasetManifest::load(&data_dir)?;
    let table = evaluate(&ckpt, &data, &tasks, run.seed, run.max_samples)?;
    table.write_csv(&out)?;
    write_json(&sidecar(&out, "config.json"), &run)?;
    Ok(table.to_csv())
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or("out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn run_similarity(args: SimilarityArgs) -> Result<String> {
    let mut run: SimilarityRun = load_config(args.config.as_deref())?;
    if let Some(c) = args.coils {
        run.coils = c;
    }
    if let Some(p) = args.per_count {
        run.per_count = p;
    }
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if args.n_coils.is_some() {
        run.n_coils = args.n_coils;
    }
    for (src, dst) in [(args.ckpt, &mut run.ckpt), (args.out, &mut run.out), (args.heatmap, &mut run.heatmap)] {
        if src.is_some() {
            *dst = src;
        }
    }
    let counts = parse_counts(&run.coils)?;
    let n_c = run.n_coils.unwrap_or_else(|| counts.iter().copied().max().unwrap_or(1));
    let ckpt_dir = required(run.ckpt.clone(), "ckpt")?;
    let out = required(run.out.clone(), "out")?;
    existing(&ckpt_dir)?;
    let ckpt = Checkpoint::load(&ckpt_dir)?;
    let sim = similarity_by_count(&ckpt, n_c, &counts, run.per_count, run.seed)?;
    sim.write_csv(&out)?;
    if let Some(h) = &run.heatmap {
        sim.write_pgm(h, 16)?;
    }
    write_json(&sidecar(&out, "config.json"), &run)?;
    let mut msg = sim.to_csv();
    if let (Some(d1), Some(d5)) = (sim.mean_offset(1), sim.mean_offset(5)) {
        let _ = writeln!(msg, "mean SIM at count distance 1: {d1:.6}, distance 5: {d5:.6}");
    }
    Ok(msg)
}

/// One evaluated run as seen by `report`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub protocol: Protocol,
    pub dwp: DwpMode,
    pub seed: u64,
    pub seen_psnr: Option<f64>,
    pub unseen_psnr: Option<f64>,
    pub unseen_zf_psnr: Option<f64>,
    pub unseen_ssim: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize_run(dir: &Path) -> Result<RunSummary> {
    existing(dir)?;
    let ckpt = Checkpoint::load(dir)?;
    let table = MetricsTable::read_csv(&dir.join("metrics.csv"))?;
    let pool = ckpt.train.effective_pool();
    let (seen, unseen): (Vec<_>, Vec<_>) = table.rows.iter().partition(|r| pool.contains(&r.coils));
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        protocol: ckpt.train.protocol,
        dwp: ckpt.model.config().denoiser.dwp_mode,
        seed: ckpt.train.seed,
        seen_psnr: mean(&seen.iter().map(|r| r.psnr_db).collect::<Vec<_>>()),
        unseen_psnr: mean(&unseen.iter().map(|r| r.psnr_db).collect::<Vec<_>>()),
        unseen_zf_psnr: mean(&unseen.iter().map(|r| r.zf_psnr_db).collect::<Vec<_>>()),
        unseen_ssim: mean(&unseen.iter().map(|r| r.ssim).collect::<Vec<_>>()),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}

/// Per-run rows followed by per-(protocol, dwp) means.
pub fn report_table(runs: &[RunSummary]) -> String {
    let mut out = String::from("run,protocol,dwp,seed,seen_psnr_db,unseen_psnr_db,unseen_ssim,unseen_zf_psnr_db\n");
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{:?},{},{},{},{},{}",
            r.dir.display(),
            r.protocol,
            r.dwp,
            r.seed,
            fmt_opt(r.seen_psnr),
            fmt_opt(r.unseen_psnr),
            fmt_opt(r.unseen_ssim),
            fmt_opt(r.unseen_zf_psnr)
        );
    }
    let mut keys: Vec<(String, DwpMode)> = Vec::new();
    for r in runs {
        let k = (r.protocol.to_string(), r.dwp);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (p, d) in keys {
        let group: Vec<&RunSummary> = runs.iter().filter(|r| r.protocol.to_string() == p && r.dwp == d).collect();
        let pick = |f: fn(&RunSummary) -> Option<f64>| mean(&group.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
        let _ = writeln!(
            out,
            "mean({}),{p},{d:?},-,{},{},{},{}",
            group.len(),
            fmt_opt(pick(|r| r.seen_psnr)),
            fmt_opt(pick(|r| r.unseen_psnr)),
            fmt_opt(pick(|r| r.unseen_ssim)),
            fmt_opt(pick(|r| r.unseen_zf_psnr))
        );
    }
    out
}

pub fn run_report(args: ReportArgs) -> Result<String> {
    let runs = args.runs.iter().map(|d| summarize_run(d)).collect::<Result<Vec<_>>>()?;
    let table = report_table(&runs);
    if let Some(out) = &args.out {
        fs::write(out, &table).map_err(|e| Error::io(out, e))?;
    }
    Ok(table)
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Similarity(a) => run_similarity(a),
        Command::Report(a) => run_report(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_lists() {
        assert_eq!(parse_counts("5..8").unwrap(), vec![5, 6, 7, 8]);
        assert_eq!(parse_counts("5,7, 9").unwrap(), vec![5, 7, 9]);
        assert!(parse_counts("8..5").is_err());
        assert!(parse_counts("a").is_err());
    }

    #[test]
    fn unknown_config_key_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"sim": {"size": 32, "colis": 4}}"#).unwrap();
        let err = load_config::<SimulateRun>(Some(&p)).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_SCHEMA);
        assert!(err.to_string().contains("colis"));
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("/a/metrics.csv"), "config.json"), PathBuf::from("/a/metrics.config.json"));
    }
}
