//! `stlplan` command-line tool.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use stlplan::checkpoint::Checkpoint;
use stlplan::dynamics::{DynamicsConfig, DynamicsKind, DynamicsModel};
use stlplan::generator::{self, GenTrainConfig, Generator};
use stlplan::maze::generate_maze;
use stlplan::pipeline::{
    self, build_suite, env_label, generator_examples, load_dataset, load_record, make_instance, plot, run_benchmark,
    save_dataset, save_run, synthesize_offline_dataset, verify_record, BenchConfig, DatasetConfig, Models,
    PlannerConfig, Selector, SuiteSpec, TaskTemplate,
};
use stlplan::time_predictor::{self, pairwise_accuracy, TimePredictor, TimeTrainConfig};

#[derive(Parser)]
#[command(name = "stlplan", version, about = "Zero-shot STL planning on maze maps")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Base seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML or JSON file with `planner`, `dataset`, `suite`, `time_train` and `gen_train` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `runs/<timestamp>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Random maze with labelled regions, as JSON, SVG and ASCII.
    GenMaze {
        #[arg(long, default_value_t = 7)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        regions: usize,
    },
    /// Offline mazes, reference trajectories and step-count labels.
    GenDataset {
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 32)]
        mazes: usize,
        /// Reference trajectories per maze.
        #[arg(long, default_value_t = 4)]
        traj: usize,
    },
    /// Train the step-count predictor on a dataset directory.
    TrainTime {
        #[arg(long)]
        data: PathBuf,
        /// Weight of the ranking term; overrides the config.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Mazes held out for evaluation.
        #[arg(long, default_value_t = 4)]
        holdout: usize,
    },
    /// Train the trajectory generator on reach tasks over a dataset's mazes.
    TrainGen {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 300)]
        examples: usize,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Plan one generated instance.
    Plan {
        #[arg(long, default_value_t = 7)]
        size: usize,
        #[arg(long, default_value = "disjunctive")]
        template: TaskTemplate,
        #[arg(long = "dyn", default_value = "di")]
        dynamics: DynamicsKind,
        #[arg(long, default_value = "heuristic")]
        selector: Selector,
        /// Model checkpoints (time predictor and/or generator).
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Run a task suite and write metrics, per-instance records and plots.
    Bench {
        /// Restrict to one maze size.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long = "dyn")]
        dynamics: Option<DynamicsKind>,
        #[arg(long)]
        selector: Option<Selector>,
        #[arg(long)]
        template: Vec<TaskTemplate>,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        max_plots: Option<usize>,
        /// Seeds per (size, template); overrides the config.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        per_seed: Option<usize>,
    },
    /// Render a per-instance record as SVG and re-verify it.
    Plot {
        record: PathBuf,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    planner: PlannerConfig,
    dataset: DatasetConfig,
    suite: SuiteSpec,
    time_train: TimeTrainConfig,
    gen_train: GenTrainConfig,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        _ => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    };
    Ok(cfg)
}

fn out_dir(global: &Global) -> Result<PathBuf> {
    let dir = match &global.out {
        Some(d) => d.clone(),
        None => PathBuf::from("runs").join(chrono::Local::now().format("%Y%m%d-%H%M%S").to_string()),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

struct Loaded {
    time: Option<TimePredictor>,
    generator: Option<Generator>,
}

impl Loaded {
    fn models(&self) -> Models<'_> {
        Models { time: self.time.as_ref(), generator: self.generator.as_ref() }
    }
}

fn load_checkpoints(paths: &[PathBuf]) -> Result<Loaded> {
    let mut out = Loaded { time: None, generator: None };
    for p in paths {
        let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
        match ck.kind.as_str() {
            time_predictor::KIND => out.time = Some(TimePredictor::from_checkpoint(&ck)?),
            generator::KIND => out.generator = Some(Generator::from_checkpoint(&ck)?),
            other => bail!("{}: unknown model kind `{other}`", p.display()),
        }
    }
    Ok(out)
}

fn with_dynamics(cfg: &PlannerConfig, kind: DynamicsKind) -> PlannerConfig {
    PlannerConfig {
        dynamics: DynamicsConfig { model: DynamicsModel { kind, ..cfg.dynamics.model }, ..cfg.dynamics },
        ..cfg.clone()
    }
}

fn gen_maze(g: &Global, size: usize, regions: usize) -> Result<()> {
    let cfg = load_config(g.config.as_deref())?;
    let map = generate_maze(size, g.seed, cfg.dataset.density, regions)?;
    let dir = out_dir(g)?;
    std::fs::write(dir.join("map.json"), map.to_json())?;
    std::fs::write(dir.join("map.svg"), plot::render_svg(&map, None, &[], &format!("{size}x{size} seed {}", g.seed)))?;
    print!("{}", map.render_ascii());
    println!("wrote {}", dir.display());
    Ok(())
}

fn gen_dataset(g: &Global, size: Option<usize>, mazes: usize, traj: usize) -> Result<()> {
    let mut cfg = load_config(g.config.as_deref())?.dataset;
    if let Some(s) = size {
        cfg.size = s;
    }
    let ds = synthesize_offline_dataset(mazes, traj, g.seed, &cfg)?;
    pipeline::audit_dataset(&ds).map_err(anyhow::Error::msg)?;
    let dir = out_dir(g)?;
    save_dataset(&ds, &dir)?;
    println!("{} mazes, {} step labels, {} trajectories -> {}", ds.mazes.len(), ds.time.len(), ds.trajectories.len(), dir.display());
    Ok(())
}

fn train_time(g: &Global, data: &Path, lambda: Option<f64>, epochs: Option<usize>, holdout: usize) -> Result<()> {
    let mut cfg = load_config(g.config.as_deref())?.time_train;
    cfg.seed = g.seed;
    if let Some(l) = lambda {
        cfg.trl.lambda = l;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let ds = load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?.time_dataset();
    let (train, test) = ds.split_by_maze(holdout);
    let t0 = Instant::now();
    let (model, report) = time_predictor::train(&ds, &train, &cfg, |e, l| {
        if e % 20 == 0 || e + 1 == cfg.epochs {
            eprintln!("epoch {e:4}  loss {l:.5}");
        }
    })?;
    let secs = t0.elapsed().as_secs_f64();
    let accuracy = |samples: &[_]| {
        let qs: Vec<_> = samples.iter().map(|s| ds.query(s)).collect();
        let labels: Vec<f64> = samples.iter().map(|s: &time_predictor::TimeSample| s.dt).collect();
        pairwise_accuracy(&model.predict_batch(&qs), &labels)
    };
    let (train_acc, test_acc) = (accuracy(&train), if test.is_empty() { f64::NAN } else { accuracy(&test) });
    let dir = out_dir(g)?;
    model.to_checkpoint().save(&dir.join("time_predictor.json"))?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({
            "initial_loss": report.initial_loss,
            "epoch_losses": report.epoch_losses,
            "train_pairwise_accuracy": train_acc,
            "test_pairwise_accuracy": if test_acc.is_nan() { None } else { Some(test_acc) },
            "train_s": secs,
        }),
    )?;
    println!("pairwise accuracy train {:.2}% held-out {:.2}% ({secs:.1} s) -> {}", 100.0 * train_acc, 100.0 * test_acc, dir.display());
    Ok(())
}

fn train_gen(g: &Global, data: &Path, n: usize, epochs: Option<usize>) -> Result<()> {
    let file = load_config(g.config.as_deref())?;
    let mut cfg = file.gen_train;
    cfg.seed = g.seed;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let ds = load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let examples = generator_examples(&ds.mazes, n, g.seed, &file.planner);
    if examples.is_empty() {
        bail!("no reach examples could be built from {}", data.display());
    }
    let t0 = Instant::now();
    let (model, report) = generator::train(&examples, &cfg, |e, l| {
        if e % 5 == 0 || e + 1 == cfg.epochs {
            eprintln!("epoch {e:4}  loss {l:.6}");
        }
    })?;
    let secs = t0.elapsed().as_secs_f64();
    let err = model.teacher_forced_error(&examples);
    let dir = out_dir(g)?;
    model.to_checkpoint().save(&dir.join("generator.json"))?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({
            "examples": examples.len(),
            "initial_loss": report.initial_loss,
            "epoch_losses": report.epoch_losses,
            "teacher_forced_error_m": err,
            "train_s": secs,
        }),
    )?;
    println!("{} examples, teacher-forced error {err:.3} m ({secs:.1} s) -> {}", examples.len(), dir.display());
    Ok(())
}

fn plan(g: &Global, size: usize, template: TaskTemplate, kind: DynamicsKind, selector: Selector, ck: &[PathBuf]) -> Result<()> {
    let file = load_config(g.config.as_deref())?;
    let models = load_checkpoints(ck)?;
    let spec = SuiteSpec { horizon: file.planner.horizon, ..file.suite };
    let inst = make_instance(&spec, size, template, g.seed, 0)?;
    let cfg = PlannerConfig { selector, ..with_dynamics(&file.planner, kind) };
    let r = pipeline::plan(&inst, models.models(), &cfg)?;
    let dir = out_dir(g)?;
    write_json(&dir.join("instance.json"), &inst)?;
    write_json(&dir.join("result.json"), &r)?;
    std::fs::write(dir.join("plot.svg"), plot::render_run(&inst, &r))?;
    println!("{}", inst.formula);
    println!("branch {}/{}: {}", r.selected + 1, r.n_branches, r.branch);
    for (k, s) in r.scores.iter().enumerate() {
        println!("  S[{k}] = {:.3}  (C_op {:.0}, C_map {}, C_slack {:.3})", s.total, s.c_op, s.c_map, s.c_slack);
    }
    match &r.failure {
        None => println!(
            "{} rho={:.3} planning {:.2} ms, nominal from {:?}",
            if r.success { "success" } else { "fail" },
            r.rho,
            1e3 * r.timing.total_planning_s,
            r.nominal_source
        ),
        Some(f) => println!("fail: {f}"),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    g: &Global,
    size: Option<usize>,
    kind: Option<DynamicsKind>,
    selector: Option<Selector>,
    templates: Vec<TaskTemplate>,
    ck: &[PathBuf],
    max_plots: Option<usize>,
    counts: (Option<usize>, Option<usize>),
) -> Result<()> {
    let file = load_config(g.config.as_deref())?;
    let models = load_checkpoints(ck)?;
    let mut spec = SuiteSpec { base_seed: g.seed, horizon: file.planner.horizon, ..file.suite.clone() };
    if let Some(s) = size {
        spec.sizes = vec![s];
    }
    spec.seeds = counts.0.unwrap_or(spec.seeds);
    spec.instances_per_seed = counts.1.unwrap_or(spec.instances_per_seed);
    if !templates.is_empty() {
        spec.templates = templates;
    }
    let suite = build_suite(&spec)?;
    let mut cfg = BenchConfig { planner: file.planner.clone(), max_plots, ..BenchConfig::default() };
    if let Some(k) = kind {
        cfg.dynamics = vec![k];
    }
    if let Some(s) = selector {
        cfg.selectors = vec![s];
    }
    eprintln!("{} instances x {} dynamics x {} selectors", suite.instances.len(), cfg.dynamics.len(), cfg.selectors.len());
    let (runs, rows) = run_benchmark(&suite, models.models(), &cfg);
    let dir = out_dir(g)?;
    let saved = serde_json::json!({ "suite": spec, "bench": cfg, "checkpoints": ck });
    save_run(&dir, &saved, &runs, &rows, max_plots)?;
    println!("{:<4} {:<4} {:<10} {:>8} {:>9} {:>12} {:>12} {:>5}", "env", "dyn", "selector", "success", "rho", "total_ms", "select_ms", "n");
    for r in &rows {
        println!(
            "{:<4} {:<4} {:<10} {:>7.1}% {:>9.3} {:>12.3} {:>12.4} {:>5}",
            r.env,
            r.dyn_,
            serde_json::to_value(r.selector)?.as_str().unwrap_or(""),
            r.success_rate,
            r.mean_rho,
            1e3 * r.mean_total_s,
            1e3 * r.mean_select_s,
            r.n
        );
    }
    let aborted = runs.iter().filter(|(_, _, r)| r.error.is_some()).count();
    if aborted > 0 {
        eprintln!("{aborted} runs aborted before planning; see per_instance/*.json");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn plot_record(g: &Global, record: &Path) -> Result<()> {
    let rec = load_record(record).with_context(|| format!("loading {}", record.display()))?;
    let Some(r) = &rec.result else { bail!("{}: run aborted ({})", record.display(), rec.error.as_deref().unwrap_or("")) };
    let svg = plot::render_run(&rec.instance, r);
    let path = match &g.out {
        Some(p) if p.extension().is_some_and(|e| e == "svg") => p.clone(),
        _ => out_dir(g)?.join(format!("{}.svg", rec.file_stem(r.dynamics, r.selector))),
    };
    std::fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
    if let Some(v) = verify_record(&rec) {
        println!(
            "{} [{}] rho={:.3} collision={} {}",
            rec.instance.name,
            env_label(rec.size),
            v.rho,
            v.collision,
            if v.consistent { "consistent" } else { "INCONSISTENT with stored outcome" }
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let g = &cli.global;
    match cli.cmd {
        Cmd::GenMaze { size, regions } => gen_maze(g, size, regions),
        Cmd::GenDataset { size, mazes, traj } => gen_dataset(g, size, mazes, traj),
        Cmd::TrainTime { data, lambda, epochs, holdout } => train_time(g, &data, lambda, epochs, holdout),
        Cmd::TrainGen { data, examples, epochs } => train_gen(g, &data, examples, epochs),
        Cmd::Plan { size, template, dynamics, selector, checkpoint } => plan(g, size, template, dynamics, selector, &checkpoint),
        Cmd::Bench { size, dynamics, selector, template, checkpoint, max_plots, seeds, per_seed } => {
            bench(g, size, dynamics, selector, template, &checkpoint, max_plots, (seeds, per_seed))
        }
        Cmd::Plot { record } => plot_record(g, &record),
    }
}
