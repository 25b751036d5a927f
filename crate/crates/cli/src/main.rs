use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use gaitkit::evaluation::{ablation_run, evaluate, Variant};
use gaitkit::gaitdata::{generate_synthetic, Condition, Dataset, DatasetIndex, SplitName, SynthConfig};
use gaitkit::simo::{build_motion_sequence, Aggregation, SimoConfig};
use gaitkit::training::{train, ExperimentConfig, TrainState};

mod pgm;

#[derive(Parser)]
#[command(name = "gaitkit", version, about = "Synthetic gait data, training and rank-1 evaluation")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, env = "GAITKIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic silhouette dataset.
    Gen(GenArgs),
    /// Train a model and write checkpoints plus a metric log.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print the rank-1 table.
    Eval(EvalArgs),
    /// Train and evaluate the plain/SiMo/FeMo/full variants over several seeds.
    Ablate(AblateArgs),
    /// Write the motion masks of one sequence as 8-bit PGM images.
    ExportMasks(ExportArgs),
    /// Summarise a checkpoint, dataset or configuration file.
    Info(InfoArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Synthetic dataset configuration (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: `default` or `motion-dominant`.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment configuration (TOML); the toy configuration if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root; falls back to `data_root` in the configuration.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `total_iters`.
    #[arg(long)]
    iters: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Writes the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Replaces the evaluation section stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Per-run checkpoints and the report go here.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Subset of plain, simo, femo, full.
    #[arg(long, value_delimiter = ',', default_value = "plain,simo,femo,full")]
    variants: Vec<String>,
    #[arg(long)]
    iters: Option<u64>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    subject: String,
    /// Sequence number within the condition.
    #[arg(long)]
    seq: u32,
    #[arg(long, default_value = "NM")]
    condition: String,
    /// Required when the sequence exists at several views.
    #[arg(long)]
    view: Option<u16>,
    #[arg(long, default_value_t = 4)]
    clip_len: usize,
    /// `mean` or `max`.
    #[arg(long, default_value = "mean")]
    aggregation: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InfoArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Failures caused by the caller's input (exit 2) as opposed to runtime
/// failures (exit 1).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<gaitkit::Error>() {
        Some(gaitkit::Error::NonFiniteLoss { .. } | gaitkit::Error::Tensor(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::ExportMasks(a) => export_masks(a),
        Command::Info(a) => info(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn gen(a: GenArgs) -> anyhow::Result<()> {
    let mut cfg = match (&a.config, a.preset.as_deref()) {
        (Some(p), _) => SynthConfig::load(p)?,
        (None, None | Some("default")) => SynthConfig::default(),
        (None, Some("motion-dominant")) => SynthConfig::motion_dominant(0),
        (None, Some(other)) => return Err(usage(format!("unknown preset {other:?}"))),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let index = generate_synthetic(&cfg, &a.out)?;
    println!(
        "{} subjects ({} train, {} test), {} sequences in {}",
        index.split.train.len() + index.split.test.len(),
        index.split.train.len(),
        index.split.test.len(),
        index.entries.len(),
        a.out.display()
    );
    Ok(())
}

fn load_experiment(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::toy(0),
    })
}

fn open_data(cli: Option<&Path>, cfg: &ExperimentConfig) -> anyhow::Result<(PathBuf, Dataset)> {
    let root = cli
        .map(Path::to_path_buf)
        .or_else(|| cfg.data_root.clone())
        .ok_or_else(|| usage("no dataset: pass --data or set data_root in the configuration"))?;
    let data = Dataset::open(&root)?;
    Ok((root, data))
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_experiment(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iters {
        cfg.total_iters = n;
    }
    let (root, data) = open_data(a.data.as_deref(), &cfg)?;
    cfg.data_root = Some(root);
    cfg.validate()?;
    let state = train(&cfg, &data, Some(&a.out), a.resume.as_deref())?;
    let last = state.history.last().map_or(f64::NAN, |r| r.total);
    println!(
        "trained {} iterations, final loss {last:.6}, checkpoint {}",
        state.iteration,
        a.out.join(gaitkit::training::FINAL_CHECKPOINT).display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (manifest, state) = TrainState::load(&a.ckpt)?;
    let data = Dataset::open(&a.data)?;
    let train_subjects = data.index.subjects(SplitName::Train);
    if train_subjects != manifest.classes.as_slice() {
        return Err(usage(format!(
            "checkpoint {} was trained on subjects {:?}, but {} lists {:?} for training",
            a.ckpt.display(),
            manifest.classes,
            a.data.display(),
            train_subjects
        )));
    }
    let eval_cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.eval,
        None => manifest.config.eval.clone(),
    };
    let report = evaluate(&state.model, &data, &eval_cfg)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.report {
        write_text(p, &report.to_json())?;
    }
    Ok(())
}

fn parse_variant(s: &str) -> anyhow::Result<Variant> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| usage(format!("unknown variant {s:?}; expected plain, simo, femo or full")))
}

fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let mut cfg = load_experiment(a.config.as_deref())?;
    if let Some(n) = a.iters {
        cfg.total_iters = n;
    }
    let variants = a.variants.iter().map(|s| parse_variant(s)).collect::<anyhow::Result<Vec<_>>>()?;
    let (root, data) = open_data(Some(&a.data), &cfg)?;
    cfg.data_root = Some(root);
    cfg.validate()?;
    let report = ablation_run(&cfg, &data, &variants, &a.seeds, Some(&a.out))?;
    print!("{}", report.to_table());
    write_text(&a.out.join("ablation.json"), &report.to_json())?;
    Ok(())
}

fn export_masks(a: ExportArgs) -> anyhow::Result<()> {
    let condition: Condition = a.condition.parse().map_err(|e: gaitkit::Error| usage(e.to_string()))?;
    let aggregation = match a.aggregation.as_str() {
        "mean" => Aggregation::Mean,
        "max" => Aggregation::Max,
        other => return Err(usage(format!("unknown aggregation {other:?}"))),
    };
    let simo = SimoConfig {
        clip_len: a.clip_len,
        aggregation,
        ..SimoConfig::default()
    };
    simo.validate()?;
    let data = Dataset::open(&a.data)?;
    let matches: Vec<usize> = (0..data.index.entries.len())
        .filter(|&i| {
            let m = &data.index.entries[i].meta;
            m.subject_id == a.subject
                && m.condition == condition
                && m.seq_no == a.seq
                && a.view.is_none_or(|v| m.view_deg == v)
        })
        .collect();
    let entry = match matches.as_slice() {
        [] => return Err(usage(format!("no sequence {}/{condition}-{:02} in the dataset", a.subject, a.seq))),
        [e] => *e,
        many => {
            let views: Vec<u16> = many.iter().map(|&i| data.index.entries[i].meta.view_deg).collect();
            return Err(usage(format!("sequence exists at views {views:?}; pass --view")));
        }
    };
    let seq = data.load(entry)?;
    let motion = build_motion_sequence(&seq.to_tensor(), &simo)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (h, w) = (seq.height(), seq.width());
    let clips = motion.masks.shape()[0];
    for i in 0..clips {
        for (kind, t) in [("mask", &motion.masks), ("motion", &motion.aggregated)] {
            let plane = &t.data()[i * h * w..(i + 1) * h * w];
            let path = a.out.join(format!("{kind}-{i:03}.pgm"));
            fs::write(&path, pgm::encode(plane, h, w)).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!("{} clips, {} images in {}", clips, 2 * clips, a.out.display());
    Ok(())
}

fn info(a: InfoArgs) -> anyhow::Result<()> {
    if let Some(p) = &a.ckpt {
        let (manifest, state) = TrainState::load(p)?;
        println!("format {}", manifest.format);
        println!("config digest {}", manifest.config_digest);
        println!("iteration {}", manifest.iteration);
        println!("classes {}", manifest.num_classes);
        println!("parameters {}", state.model.param_count());
        for t in &state.model.params {
            println!("  {} {:?}", t.name, t.value.shape());
        }
    } else if let Some(p) = &a.data {
        let index = if p.is_dir() {
            Dataset::open(p)?.index
        } else {
            DatasetIndex::load(p)?
        };
        println!("subjects {} train, {} test", index.split.train.len(), index.split.test.len());
        println!("sequences {}", index.entries.len());
        for c in Condition::ALL {
            let n = index.entries.iter().filter(|e| e.meta.condition == c).count();
            println!("  {c} {n}");
        }
        let mut views: Vec<u16> = index.entries.iter().map(|e| e.meta.view_deg).collect();
        views.sort_unstable();
        views.dedup();
        println!("views {views:?}");
        let frames: usize = index.entries.iter().map(|e| e.frames).sum();
        println!("frames {frames}");
    } else if let Some(p) = &a.config {
        let cfg = ExperimentConfig::load(p)?;
        println!("config digest {}", cfg.digest());
    } else {
        bail!(anyhow!("nothing to inspect"));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
