use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hiersplat::eval::{self, LevelConfusion, TrajectoryPair};
use hiersplat::io::{
    export, generate_synthetic, load_sequence, load_trajectory, save_trajectory, DatasetKind, DatasetMeta,
    IoError, RoomSpec, RunConfig, Sequence, Stamped, SynthConfig, TaxonomySection,
};
use hiersplat::renderer::{render, render_semantic_labels, RenderOptions, VOID_LABEL};
use hiersplat::scene::GaussianMap;
use hiersplat::slam::{self, RunOptions, SlamFrame};
use hiersplat::taxonomy::{
    build_tree, presets, Clusterer, DeterministicMock, RemoteChat, RemoteChatConfig, SemanticTree,
    TreeBuildOptions, DEFAULT_MAX_ROUNDS, DEFAULT_THETA,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "hiersplat", version, about = "Hierarchical semantic Gaussian-splatting SLAM")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run tracking and mapping over a dataset.
    Run(RunArgs),
    /// Score saved artifacts against a dataset.
    Eval(EvalArgs),
    /// Render views and per-level label images from a saved map.
    Render(RenderArgs),
    /// Build a taxonomy tree from a flat label list.
    BuildTaxonomy(TaxonomyArgs),
    /// Generate a labeled synthetic RGB-D sequence.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Single-threaded, bit-reproducible rendering.
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_semantics: bool,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Skip the per-frame PNG renders.
    #[arg(long)]
    no_renders: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory (TUM format).
    #[arg(long)]
    trajectory: PathBuf,
    /// Dataset supplying ground-truth poses, depth and labels.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "replica-style")]
    kind: DatasetKind,
    /// Saved map; enables depth, color and semantic metrics.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Report ATE without rigid alignment.
    #[arg(long)]
    no_align: bool,
    /// Restrict mIoU to these leaf classes.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    min_silhouette: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    /// Camera poses to render (TUM format).
    #[arg(long)]
    poses: PathBuf,
    /// `meta.json` with intrinsics.
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Tree levels to decode; repeatable.
    #[arg(long)]
    level: Vec<usize>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    min_silhouette: f64,
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct TaxonomyArgs {
    /// One leaf label per line.
    #[arg(long, required_unless_present = "preset")]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: usize,
    /// Offline deterministic clusterer (default).
    #[arg(long, conflicts_with = "remote")]
    mock: bool,
    /// Chat-completion endpoint from HIERSPLAT_LLM_URL / HIERSPLAT_LLM_KEY.
    #[arg(long)]
    remote: bool,
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    /// Group size used by the offline clusterer.
    #[arg(long, default_value_t = 4)]
    branching: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
    max_rounds: usize,
    #[arg(long)]
    max_levels: Option<usize>,
    /// Write a bundled tree instead of clustering (`replica`).
    #[arg(long, conflicts_with = "labels")]
    preset: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    /// JSON scene description; defaults to the built-in study room.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace the room with an `n`-label gallery.
    #[arg(long, conflicts_with = "spec")]
    gallery: Option<usize>,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitClass<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn runtime_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitClass<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_CONFIG,
            error: e.into(),
        })
    }

    fn runtime_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
        Command::BuildTaxonomy(a) => cmd_taxonomy(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_tree(path: &Path) -> anyhow::Result<SemanticTree> {
    SemanticTree::load(path).with_context(|| format!("taxonomy {}", path.display()))
}

/// Maps dataset label indices onto leaf positions of `tree` by name.
fn label_remap(seq: &Sequence, tree: &SemanticTree) -> Vec<u32> {
    seq.labels
        .iter()
        .map(|name| match tree.leaf_position(name) {
            Some(p) => p as u32,
            None => {
                log::warn!("dataset label `{name}` is not a leaf of the taxonomy; treated as void");
                VOID_LABEL
            }
        })
        .collect()
}

fn apply_remap(labels: &mut [u32], remap: Option<&[u32]>) {
    for l in labels.iter_mut() {
        if *l == VOID_LABEL {
            continue;
        }
        *l = match remap {
            Some(r) => r.get(*l as usize).copied().unwrap_or(VOID_LABEL),
            None => VOID_LABEL,
        };
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config).config_err()?;
    if args.serial {
        cfg.serial = true;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_semantics {
        cfg.no_semantics = true;
    }
    if let Some(n) = args.max_frames {
        if n == 0 {
            return Err(anyhow!("--max-frames must be ≥ 1")).config_err();
        }
        cfg.dataset.max_frames = Some(n);
    }
    if let Some(out) = args.output {
        cfg.output = out;
    }

    let tree = if cfg.no_semantics {
        None
    } else {
        let section = cfg.taxonomy.as_ref().expect("validated");
        Some(Arc::new(load_tree(&section.path).config_err()?))
    };

    let mut seq = load_sequence(&cfg.dataset.path, cfg.dataset.kind).runtime_err()?;
    if let Some(n) = cfg.dataset.max_frames {
        seq.truncate(n);
    }
    let k = seq.intrinsics();
    let depth_scale = seq.meta.depth_scale;
    let remap = tree.as_ref().map(|t| label_remap(&seq, t));
    log::info!("{} frames from {}", seq.len(), seq.root.display());

    let options = RunOptions {
        parallel: !cfg.serial,
        semantics: tree.is_some(),
        seed: cfg.seed,
        evaluate: true,
    };
    let frames = seq.prefetch(hiersplat::io::PREFETCH_DEPTH).map(|f| {
        f.map(|f| {
            let mut frame = SlamFrame::from(f);
            apply_remap(&mut frame.labels, remap.as_deref());
            frame
        })
    });
    let out = slam::run(frames, k, tree.clone(), cfg.slam.clone(), options).runtime_err()?;

    fs::create_dir_all(&cfg.output)
        .map_err(|e| IoError::file(&cfg.output, e))
        .runtime_err()?;
    let traj: Vec<Stamped> = out
        .state
        .trajectory
        .iter()
        .map(|e| Stamped {
            timestamp: e.timestamp,
            pose: e.pose,
        })
        .collect();
    save_trajectory(&traj, cfg.output.join("trajectory.txt")).runtime_err()?;
    out.state.map.save(cfg.output.join("map.hspl")).runtime_err()?;
    fs::write(cfg.output.join("config.toml"), cfg.to_toml())
        .map_err(|e| IoError::file(&cfg.output, e))
        .runtime_err()?;
    let metrics = serde_json::json!({ "report": out.report, "frames": out.logs });
    fs::write(
        cfg.output.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )
    .map_err(|e| IoError::file(&cfg.output, e))
    .runtime_err()?;

    if !args.no_renders {
        write_renders(&out.state, tree.as_deref(), depth_scale, &cfg.output.join("renders")).runtime_err()?;
    }
    if let Some(r) = &out.report {
        println!(
            "frames {} lost {} gaussians {} ATE {} cm depth L1 {} cm PSNR {} dB mIoU {:?}",
            r.frames,
            r.lost_frames.len(),
            r.gaussians,
            fmt_opt(r.ate_rmse_cm),
            fmt_opt(r.depth_l1_cm),
            fmt_opt(r.psnr_db),
            r.miou_per_level.iter().map(|m| fmt_opt(*m)).collect::<Vec<_>>()
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

fn write_renders(
    state: &slam::SlamState,
    tree: Option<&SemanticTree>,
    depth_scale: f64,
    dir: &Path,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    let opts = RenderOptions {
        parallel: state.options.parallel,
        semantics: tree.is_some(),
    };
    if let Some(t) = tree {
        for l in 0..t.num_levels() {
            export::save_palette(t, l, &dir.join(format!("palette_l{l}.json")))?;
        }
    }
    for (frame, entry) in state.stored_frames() {
        let f = render(&state.map, &entry.pose, &state.k, opts);
        let stem = format!("{:06}", frame.index);
        export::save_color(&f, &dir.join(format!("{stem}_color.png")))?;
        export::save_depth(&f, depth_scale, &dir.join(format!("{stem}_depth.png")))?;
        export::save_silhouette(&f, &dir.join(format!("{stem}_silhouette.png")))?;
        if let Some(t) = tree {
            for l in 0..t.num_levels() {
                let img = render_semantic_labels(&f, t, l, state.config.eval_min_silhouette)?;
                export::save_labels(
                    &img,
                    &dir.join(format!("{stem}_l{l}_labels.png")),
                    &dir.join(format!("{stem}_l{l}_preview.png")),
                )?;
            }
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let est = load_trajectory(&args.trajectory).config_err()?;
    let seq = load_sequence(&args.dataset, args.kind).config_err()?;
    let tree = match &args.taxonomy {
        Some(p) => Some(load_tree(p).config_err()?),
        None => None,
    };
    if est.len() > seq.len() {
        return Err(anyhow!(
            "trajectory has {} poses but the dataset only {} frames",
            est.len(),
            seq.len()
        ))
        .config_err();
    }
    let mut report = serde_json::Map::new();
    let gt: Option<Vec<_>> = seq.ground_truth().into_iter().take(est.len()).collect();
    if let Some(gt) = gt {
        let pair = TrajectoryPair::new(est.iter().map(|s| s.pose).collect(), gt).runtime_err()?;
        let ate = eval::ate_rmse(&pair, !args.no_align).runtime_err()?;
        report.insert("ate_rmse_cm".into(), ate.into());
        report.insert("aligned".into(), (!args.no_align).into());
    }

    if let Some(map_path) = &args.map {
        let mut map = GaussianMap::load(map_path).config_err()?;
        if let Some(t) = &tree {
            map.bind_tree(Arc::new(t.clone())).config_err()?;
        }
        let remap = tree.as_ref().map(|t| label_remap(&seq, t));
        let k = seq.intrinsics();
        let opts = RenderOptions {
            parallel: true,
            semantics: tree.is_some(),
        };
        let mut levels = tree.as_ref().map(LevelConfusion::new);
        let (mut depth, mut psnr, mut ssim) = (Vec::new(), Vec::new(), Vec::new());
        for (i, stamped) in est.iter().enumerate() {
            let frame = seq.load_frame(i).runtime_err()?;
            let mut sf = SlamFrame::from(frame);
            apply_remap(&mut sf.labels, remap.as_deref());
            let rendered = render(&map, &stamped.pose, &k, opts);
            let valid: Vec<bool> = (0..sf.obs.pixels()).map(|p| sf.obs.depth_valid(p)).collect();
            if let Ok(d) = eval::depth_l1(&rendered.depth, &sf.obs.depth, &valid) {
                depth.push(d);
            }
            psnr.push(eval::psnr(&rendered.color, &sf.obs.color, 1.0).runtime_err()?);
            if let Ok(s) = eval::ssim(&rendered.color, &sf.obs.color, k.width, k.height) {
                ssim.push(s);
            }
            if let (Some(acc), Some(t)) = (levels.as_mut(), &tree) {
                acc.add_frame(t, &rendered, &sf.labels, args.min_silhouette).runtime_err()?;
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        report.insert("depth_l1_cm".into(), serde_json::json!(mean(&depth)));
        report.insert("psnr_db".into(), serde_json::json!(mean(&psnr)));
        report.insert("ssim".into(), serde_json::json!(mean(&ssim)));
        if let (Some(acc), Some(t)) = (levels, &tree) {
            report.insert("miou_per_level".into(), serde_json::json!(acc.means()));
            if !args.classes.is_empty() {
                let subset = class_subset(t, &args.classes).config_err()?;
                let cm = &acc.levels[t.leaf_level()];
                let r = eval::miou_from_confusion(cm, Some(&subset));
                report.insert("miou_subset".into(), serde_json::json!(r.mean));
            }
        }
    }

    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(p) => fs::write(p, text).map_err(|e| IoError::file(p, e)).runtime_err()?,
        None => println!("{text}"),
    }
    Ok(())
}

fn class_subset(tree: &SemanticTree, names: &[String]) -> anyhow::Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            tree.leaf_position(n)
                .ok_or_else(|| anyhow!("class `{n}` is not a leaf of the taxonomy"))
        })
        .collect()
}

fn cmd_render(args: RenderArgs) -> Result<(), Failure> {
    let mut map = GaussianMap::load(&args.map).config_err()?;
    let poses = load_trajectory(&args.poses).config_err()?;
    let meta = read_meta(&args.meta).config_err()?;
    let tree = match &args.taxonomy {
        Some(p) => {
            let t = Arc::new(load_tree(p).config_err()?);
            map.bind_tree(t.clone()).config_err()?;
            Some(t)
        }
        None => None,
    };
    if !args.level.is_empty() && tree.is_none() {
        return Err(anyhow!("--level needs --taxonomy")).config_err();
    }
    if let Some(t) = &tree {
        if let Some(&l) = args.level.iter().find(|&&l| l >= t.num_levels()) {
            return Err(anyhow!("level {l} out of range; the tree has {} levels", t.num_levels())).config_err();
        }
    }
    let k = meta.intrinsics();
    fs::create_dir_all(&args.output)
        .map_err(|e| IoError::file(&args.output, e))
        .runtime_err()?;
    let opts = RenderOptions {
        parallel: !args.serial,
        semantics: tree.is_some() && !args.level.is_empty(),
    };
    for (i, s) in poses.iter().enumerate() {
        let f = render(&map, &s.pose, &k, opts);
        let stem = format!("{i:06}");
        export::save_color(&f, &args.output.join(format!("{stem}_color.png"))).runtime_err()?;
        export::save_depth(&f, meta.depth_scale, &args.output.join(format!("{stem}_depth.png"))).runtime_err()?;
        export::save_silhouette(&f, &args.output.join(format!("{stem}_silhouette.png"))).runtime_err()?;
        if let Some(t) = &tree {
            for &l in &args.level {
                let img = render_semantic_labels(&f, t, l, args.min_silhouette).runtime_err()?;
                export::save_labels(
                    &img,
                    &args.output.join(format!("{stem}_l{l}_labels.png")),
                    &args.output.join(format!("{stem}_l{l}_preview.png")),
                )
                .runtime_err()?;
            }
        }
    }
    if let Some(t) = &tree {
        for &l in &args.level {
            export::save_palette(t, l, &args.output.join(format!("palette_l{l}.json"))).runtime_err()?;
        }
    }
    println!("rendered {} views into {}", poses.len(), args.output.display());
    Ok(())
}

fn read_meta(path: &Path) -> anyhow::Result<DatasetMeta> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_str(&text).with_context(|| format!("meta {}", path.display()))
}

fn cmd_taxonomy(args: TaxonomyArgs) -> Result<(), Failure> {
    let tree = if let Some(preset) = &args.preset {
        match preset.as_str() {
            "replica" => SemanticTree::from_paths(&presets::replica_style_paths()).runtime_err()?,
            other => return Err(anyhow!("unknown preset `{other}` (expected `replica`)")).config_err(),
        }
    } else {
        let path = args.labels.as_ref().expect("clap requires labels");
        let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e)).config_err()?;
        let labels: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let mut clusterer: Box<dyn Clusterer> = if args.remote {
            let mut config = RemoteChatConfig::from_env().config_err()?;
            config.model = args.model.clone();
            Box::new(RemoteChat::new(config).config_err()?)
        } else {
            Box::new(DeterministicMock::new(args.branching, args.seed))
        };
        let options = TreeBuildOptions {
            theta: args.theta,
            max_rounds: args.max_rounds,
            max_levels: args.max_levels,
        };
        build_tree(&labels, clusterer.as_mut(), options).runtime_err()?
    };
    tree.save(&args.out).runtime_err()?;
    let dims = tree.code_dims();
    println!(
        "{} leaves, {} levels, code width {} per level, {} dimensions total",
        tree.num_leaves(),
        tree.num_levels(),
        dims.width,
        dims.total
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let mut cfg = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| IoError::file(p, e)).config_err()?;
            serde_json::from_str::<SynthConfig>(&text)
                .with_context(|| format!("scene spec {}", p.display()))
                .config_err()?
        }
        None => SynthConfig::study(args.seed),
    };
    if args.spec.is_some() {
        cfg.seed = args.seed;
    }
    if let Some(n) = args.gallery {
        if n == 0 {
            return Err(anyhow!("--gallery needs at least one label")).config_err();
        }
        cfg.room = RoomSpec::gallery(n);
    }
    if let Some(n) = args.frames {
        cfg.frames = n;
    }
    cfg.validate().config_err()?;
    let summary = generate_synthetic(&cfg, &args.output).runtime_err()?;

    let mut run = RunConfig::new(".", DatasetKind::Synthetic, "run");
    run.seed = args.seed;
    if summary.wrote_taxonomy {
        run.taxonomy = Some(TaxonomySection {
            path: "taxonomy.json".into(),
        });
    } else {
        run.no_semantics = true;
    }
    let run_path = args.output.join("run.toml");
    fs::write(&run_path, run.to_toml()).map_err(|e| IoError::file(&run_path, e)).runtime_err()?;
    fs::write(
        args.output.join("scene.json"),
        serde_json::to_string_pretty(&cfg).expect("scene serializes"),
    )
    .map_err(|e| IoError::file(&args.output, e))
    .runtime_err()?;
    println!(
        "wrote {} frames with {} labels to {}{}",
        summary.frames,
        summary.labels.len(),
        args.output.display(),
        if summary.wrote_taxonomy { "" } else { " (no taxonomy)" }
    );
    Ok(())
}
