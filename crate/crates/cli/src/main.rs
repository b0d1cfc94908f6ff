use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pointgroup_core::eval::EvalResult;
use pointgroup_core::scoring::{
    gradient_check_suite, harvest, train_on_set, CorpusItem, SoftLabelThresholds, GRAD_TOLERANCE,
};
use pointgroup_core::synth::{generate, generate_corpus, GenConfig, NoiseConfig, Sampling};
use pointgroup_core::{
    evaluate, export_ply, load_offsets, load_predictions, load_scene, run_pipeline,
    run_pipeline_timed, save_offsets, save_predictions, save_scene, ClusterParams, CoordinateSets,
    EvalConfig, OffsetField, PipelineConfig, Scene, ScorerKind, ScorerModel, ScoringInputs,
    StageTimes, TrainParams,
};

#[derive(Parser)]
#[command(
    name = "pointgroup",
    version,
    about = "Dual-set point clustering, scoring, NMS and evaluation"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene (.sc1), its offsets (.off1) and, with label noise, its ground truth (.gt.sc1).
    Generate(GenerateArgs),
    /// Cluster, score and suppress; writes predictions.
    Cluster(ClusterArgs),
    /// Score predictions against a ground-truth scene.
    Evaluate(EvaluateArgs),
    /// Time the six pipeline stages.
    Bench(BenchArgs),
    /// Compare analytic and numeric loss gradients.
    Gradcheck(GradcheckArgs),
    /// Train the cluster scorer on a synthetic corpus.
    TrainScorer(TrainArgs),
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Room size x,y,z in meters.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [5.0, 5.0, 2.5])]
    room: Vec<f32>,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    objects: usize,
    #[arg(long, default_value_t = 2)]
    per_row: usize,
    #[arg(long, default_value_t = 0.05)]
    gap_min: f32,
    #[arg(long, default_value_t = 0.15)]
    gap_max: f32,
    #[arg(long, default_value_t = 0.5)]
    same_class_prob: f64,
    #[arg(long, default_value_t = 0.3)]
    size_min: f32,
    #[arg(long, default_value_t = 0.8)]
    size_max: f32,
    /// Object surface samples per square meter.
    #[arg(long, default_value_t = 1.0 / (0.015 * 0.015))]
    density: f32,
    #[arg(long, default_value_t = 400.0)]
    stuff_density: f32,
    #[arg(long, value_enum, default_value_t = SamplingArg::Stratified)]
    sampling: SamplingArg,
    #[arg(long, default_value_t = 0.0)]
    p_sem: f64,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma0: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Stratified,
    Uniform,
}

impl GenArgs {
    fn config(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            room: [self.room[0], self.room[1], self.room[2]],
            n_classes: self.classes,
            n_objects: self.objects,
            objects_per_row: self.per_row,
            gap_range: (self.gap_min, self.gap_max),
            row_separation: 0.3,
            same_class_prob: self.same_class_prob,
            object_size: (self.size_min, self.size_max),
            object_density: self.density,
            sampling: match self.sampling {
                SamplingArg::Stratified => Sampling::Stratified,
                SamplingArg::Uniform => Sampling::Uniform,
            },
            stuff_density: self.stuff_density,
            noise: NoiseConfig {
                p_sem: self.p_sem,
                temperature: self.temperature,
                sigma0: self.sigma0,
                beta: self.beta,
            },
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    gen: GenArgs,
    /// Scene path; companions are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Oracle,
    Semprob,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    P,
    Q,
    Both,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, value_enum, default_value_t = ScorerArg::Model)]
    scorer: ScorerArg,
    /// Scorer weights, required by `--scorer model`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Ground-truth scene, required by `--scorer oracle`.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long = "set", value_enum, default_value_t = SetArg::Both)]
    set: SetArg,
    #[arg(long, default_value_t = 0.03)]
    radius: f32,
    #[arg(long, default_value_t = 50)]
    min_points: usize,
    #[arg(long, default_value_t = 0.3)]
    nms_iou: f64,
    #[arg(long)]
    min_score: Option<f64>,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        match self.scorer {
            ScorerArg::Oracle if self.gt.is_none() => bail!("--scorer oracle requires --gt"),
            ScorerArg::Model if self.model.is_none() => bail!("--scorer model requires --model"),
            _ => {}
        }
        let config = PipelineConfig {
            cluster: ClusterParams {
                radius: self.radius,
                min_points: self.min_points,
            },
            sets: match self.set {
                SetArg::P => CoordinateSets::Original,
                SetArg::Q => CoordinateSets::Shifted,
                SetArg::Both => CoordinateSets::Both,
            },
            scorer: match self.scorer {
                ScorerArg::Oracle => ScorerKind::Oracle,
                ScorerArg::Semprob => ScorerKind::SemProb,
                ScorerArg::Model => ScorerKind::Model,
            },
            nms_iou: self.nms_iou,
            min_score: self.min_score,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    offsets: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Predictions path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export the scene colored by instance.
    #[arg(long)]
    ply: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    score_filter: f64,
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Scene to time; a generated benchmark room when omitted.
    #[arg(long, requires = "offsets")]
    scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    offsets: Option<PathBuf>,
    /// Seed of the generated benchmark room.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    repeats: u32,
    #[command(flatten)]
    pipeline: BenchPipelineArgs,
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct BenchPipelineArgs {
    /// Scorer weights; an untrained network of the same shape when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.03)]
    radius: f32,
    #[arg(long, default_value_t = 50)]
    min_points: usize,
    #[arg(long, default_value_t = 0.3)]
    nms_iou: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random evaluation points per loss.
    #[arg(long, default_value_t = 20)]
    points: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    gen: GenArgs,
    /// Scenes in the training corpus, seeded `seed, seed + 1, …`.
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 0.03)]
    radius: f32,
    #[arg(long, default_value_t = 50)]
    min_points: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
}

/// `a.sc1` → `a.<ext>`.
fn companion(path: &Path, ext: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{ext}"))
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let g = generate(&a.gen.config())?;
    save_scene(&g.scene, &a.out)?;
    let off = companion(&a.out, "off1");
    save_offsets(&g.offsets, &off)?;
    eprintln!(
        "{} points, {} instances -> {}, {}",
        g.scene.n_points(),
        g.gt.n_instances(),
        a.out.display(),
        off.display()
    );
    if g.scene != g.gt {
        let gt = companion(&a.out, "gt.sc1");
        save_scene(&g.gt, &gt)?;
        eprintln!("ground truth -> {}", gt.display());
    }
    Ok(())
}

fn cmd_cluster(a: &ClusterArgs) -> Result<()> {
    let config = a.pipeline.config()?;
    let scene = load_scene(&a.scene)?;
    let offsets = load_offsets(&a.offsets)?;
    let gt = match &a.pipeline.gt {
        Some(p) => Some(load_scene(p)?.gt_instances()),
        None => None,
    };
    let model = match &a.pipeline.model {
        Some(p) => Some(ScorerModel::load(p)?),
        None => None,
    };
    let inputs = ScoringInputs {
        model: model.as_ref(),
        gt: gt.as_deref(),
    };
    let preds = run_pipeline(&scene, &offsets, &config, inputs)?;
    match &a.out {
        Some(p) => save_predictions(&preds, p)?,
        None => pointgroup_core::io::write_predictions(&preds, std::io::stdout().lock())?,
    }
    if let Some(p) = &a.ply {
        export_ply(&scene, &preds, p)?;
    }
    eprintln!("{} predictions", preds.len());
    Ok(())
}

fn eval_table(r: &EvalResult, tsv: bool) -> String {
    let mut s = String::new();
    let row = |s: &mut String, cells: &[String]| {
        if tsv {
            writeln!(s, "{}", cells.join("\t")).unwrap();
        } else {
            let padded: Vec<String> = cells.iter().map(|c| format!("{c:>9}")).collect();
            writeln!(s, "{}", padded.join(" ")).unwrap();
        }
    };
    let num = |v: f64| {
        if tsv {
            format!("{v}")
        } else {
            format!("{v:.4}")
        }
    };
    row(
        &mut s,
        &["class", "n_gt", "AP", "AP50", "AP25", "Prec50", "Rec50"].map(String::from),
    );
    for c in &r.classes {
        row(
            &mut s,
            &[
                c.class_id.to_string(),
                c.n_gt.to_string(),
                num(c.ap),
                num(c.ap50),
                num(c.ap25),
                num(c.precision50),
                num(c.recall50),
            ],
        );
    }
    row(
        &mut s,
        &["mAP", "AP50", "AP25", "mPrec50", "mRec50"].map(String::from),
    );
    row(
        &mut s,
        &[r.map, r.ap50, r.ap25, r.mprec50, r.mrec50].map(num),
    );
    s
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let preds = load_predictions(&a.pred)?;
    let gt = load_scene(&a.gt)?;
    let config = EvalConfig {
        score_filter: a.score_filter,
        ..Default::default()
    };
    let r = evaluate(&preds, &gt, &config)?;
    print!("{}", eval_table(&r, a.tsv));
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    if a.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let p = &a.pipeline;
    let config = PipelineConfig {
        cluster: ClusterParams {
            radius: p.radius,
            min_points: p.min_points,
        },
        nms_iou: p.nms_iou,
        ..Default::default()
    };
    config.validate()?;
    let model = match &p.model {
        Some(path) => ScorerModel::load(path)?,
        None => ScorerModel::random(16, a.seed),
    };
    let (scene, offsets): (Scene, OffsetField) = match (&a.scene, &a.offsets) {
        (Some(s), Some(o)) => (load_scene(s)?, load_offsets(o)?),
        _ => {
            let g = generate(&GenConfig::benchmark(a.seed))?;
            (g.scene, g.offsets)
        }
    };
    let inputs = ScoringInputs {
        model: Some(&model),
        gt: None,
    };
    // warm-up, excluded from the means
    let (preds, _) = run_pipeline_timed(&scene, &offsets, &config, inputs)?;
    let mut sum = StageTimes::default();
    for _ in 0..a.repeats {
        let (_, t) = run_pipeline_timed(&scene, &offsets, &config, inputs)?;
        sum.accumulate(&t);
    }
    let mean = sum.div(a.repeats);
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let mut out = String::new();
    if a.tsv {
        writeln!(out, "stage\tmean_ms")?;
    } else {
        writeln!(
            out,
            "{} points, {} predictions, {} repeats",
            scene.n_points(),
            preds.len(),
            a.repeats
        )?;
    }
    let names = StageTimes::NAMES.iter().chain(std::iter::once(&"total"));
    let times = mean.stages().into_iter().chain(std::iter::once(mean.total));
    for (name, t) in names.zip(times) {
        if a.tsv {
            writeln!(out, "{name}\t{}", ms(t))?;
        } else {
            writeln!(out, "{name:<14}{:>10.3} ms", ms(t))?;
        }
    }
    print!("{out}");
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let mut ok = true;
    for (name, e) in gradient_check_suite(a.seed, a.points)? {
        let pass = e <= GRAD_TOLERANCE;
        ok &= pass;
        println!("{name:<14}{e:>12.3e}  {}", if pass { "ok" } else { "FAIL" });
    }
    Ok(ok)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.scenes == 0 {
        bail!("--scenes must be at least 1");
    }
    let params = ClusterParams {
        radius: a.radius,
        min_points: a.min_points,
    };
    params.validate()?;
    let corpus: Vec<CorpusItem> = generate_corpus(&a.gen.config(), a.scenes)?
        .into_iter()
        .map(|g| CorpusItem {
            gt: g.gt.gt_instances(),
            scene: g.scene,
            offsets: g.offsets,
        })
        .collect();
    let start = Instant::now();
    let set = harvest(&corpus, &params, SoftLabelThresholds::default())?;
    let (model, report) = train_on_set(
        &set,
        &TrainParams {
            hidden: a.hidden,
            lr: a.lr,
            epochs: a.epochs,
            seed: a.gen.seed,
        },
    )?;
    model.save(&a.out)?;
    println!("clusters      {}", report.n_samples);
    println!("initial_loss  {}", report.initial_loss);
    println!("final_loss    {}", report.final_loss);
    println!("grad_check    {:e}", report.grad_check_error);
    eprintln!("trained in {:.2?} -> {}", start.elapsed(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Cluster(a) => cmd_cluster(a).map(|_| true),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| true),
        Command::Bench(a) => cmd_bench(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::TrainScorer(a) => cmd_train(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .context("building thread pool");
    let result = pool.and_then(|pool| pool.install(|| run(&cli)));
    let _ = std::io::stdout().flush();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check above tolerance {GRAD_TOLERANCE:e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
