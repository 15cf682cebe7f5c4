use std::fs;
use std::path::{Path, PathBuf};

use gotjepa::checkpoint::{load_for_profile, save_checkpoint, CheckpointMeta};
use gotjepa::metrics::{eval_sequence, MetricReport};
use gotjepa::occusolver::ADAPTERS;
use gotjepa::runtime::{TrackResult, Tracker};
use gotjepa::synthdata::{load_sequence, random_config, save_sequence, Scenario, SequenceGenerator};
use gotjepa::trackhead::{HeadSpec, PROJNET};
use gotjepa::train::{
    ablation_table, benchmark_configs, evaluate_tracker, run_head_training, run_pretrain, run_seed,
    run_stage0, run_stage2, summarize, AblationRow, TrackerKind,
};
use gotjepa::{Error, Result};
use gotjepa_autodiff::ParamStore;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Variant {
    /// Predictor trained from the teacher weights.
    Baseline,
    /// Student predictor from `pretrain-jepa`.
    Jepa,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Jepa => "jepa",
        }
    }
}

pub struct Ctx {
    pub cfg: RunConfig,
}

impl Ctx {
    fn ckpt(&self, name: &str) -> PathBuf {
        self.cfg.checkpoint_dir.join(format!("{name}.safetensors"))
    }

    fn meta(&self, stage: &str) -> Result<CheckpointMeta> {
        Ok(CheckpointMeta {
            profile: self.cfg.profile()?,
            config_hash: self.cfg.hash(),
            stage: stage.to_string(),
        })
    }

    /// Loads a checkpoint written by `producer`, or names that command when it is missing.
    fn require(&self, name: &str, producer: &str, manifest: &mut Manifest) -> Result<ParamStore> {
        let path = self.ckpt(name);
        if !path.exists() {
            return Err(Error::Prerequisite(format!(
                "{} not found; run `gotjepa {producer}` first",
                path.display()
            )));
        }
        manifest.input(&path)?;
        Ok(load_for_profile(&path, &self.cfg.profile()?)?.0)
    }

    fn save(&self, name: &str, stage: &str, store: &ParamStore, manifest: &mut Manifest) -> Result<PathBuf> {
        let path = self.ckpt(name);
        save_checkpoint(&path, store, &self.meta(stage)?)?;
        manifest.output(&path)?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn report(&self, file: &str, text: &str, manifest: &mut Manifest) -> Result<PathBuf> {
        let dir = &self.cfg.report_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(file);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        manifest.output(&path)?;
        Ok(path)
    }

    fn finish(&self, manifest: Manifest, dir: &Path) -> Result<()> {
        let p = manifest.write(dir)?;
        info!("manifest {}", p.display());
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

pub fn synth(ctx: &Ctx, scenario: Scenario, count: usize) -> Result<()> {
    let mut m = Manifest::new("synth", &ctx.cfg);
    let profile = ctx.cfg.profile()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let name = serde_json::to_value(scenario).expect("scenario serializes");
    let dir = ctx.cfg.data_dir.join(name.as_str().unwrap_or("sequences"));
    for i in 0..count {
        let cfg = random_config(&profile, scenario, &mut rng);
        let seq = SequenceGenerator::new(&cfg)?.full_sequence();
        let out = dir.join(format!("seq_{i:04}"));
        save_sequence(&seq, &out)?;
        m.output(&out)?;
    }
    info!("wrote {count} sequences to {}", dir.display());
    ctx.finish(m, &dir)
}

pub fn train_stage0(ctx: &Ctx) -> Result<()> {
    let mut m = Manifest::new("train-stage0", &ctx.cfg);
    let exp = ctx.cfg.experiment()?;
    let s0 = run_stage0(&exp, ctx.cfg.seed)?;
    info!("stage 0 finished in {:.1}s", s0.seconds);
    ctx.save("stage0", "train-stage0", &s0.store, &mut m)?;
    let mut log = String::from("step,cls,reg,total\n");
    for s in &s0.teacher_log {
        log.push_str(&format!("{},{},{},{}\n", s.step, s.cls, s.reg, s.total));
    }
    ctx.report("stage0_teacher.csv", &log, &mut m)?;
    let mut log = String::from("step,epe,vis_bce\n");
    for s in &s0.point_log {
        log.push_str(&format!("{},{},{}\n", s.step, s.epe, s.vis_bce));
    }
    ctx.report("stage0_point_tracker.csv", &log, &mut m)?;
    ctx.finish(m, &ctx.cfg.checkpoint_dir)
}

pub fn pretrain_jepa(ctx: &Ctx) -> Result<()> {
    let mut m = Manifest::new("pretrain-jepa", &ctx.cfg);
    let stage0 = ctx.require("stage0", "train-stage0", &mut m)?;
    let exp = ctx.cfg.experiment()?;
    let (store, run) = run_pretrain(&stage0, &exp.profile, &exp.jepa, ctx.cfg.seed)?;
    info!(
        "held-out l_inv {:.5} -> {:.5}, min expanded std {:.5}",
        run.held_out_inv_start, run.held_out_inv_end, run.held_out_exp_std_min_end
    );
    ctx.save("jepa", "pretrain-jepa", &store, &mut m)?;
    let mut log = String::from("step,l_inv,l_cov,l_mp,omega_std_min,omega_exp_std_min\n");
    for s in &run.log {
        log.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.step, s.l_inv, s.l_cov, s.l_mp, s.omega_std_min, s.omega_exp_std_min
        ));
    }
    ctx.report("jepa_log.csv", &log, &mut m)?;
    let summary = serde_json::json!({
        "held_out_inv_start": run.held_out_inv_start,
        "held_out_inv_end": run.held_out_inv_end,
        "held_out_exp_std_min_start": run.held_out_exp_std_min_start,
        "held_out_exp_std_min_end": run.held_out_exp_std_min_end,
        "teacher_hash": run.teacher_hash,
        "windows_seen": run.windows_seen,
    });
    ctx.report("jepa_summary.json", &json(&summary), &mut m)?;
    ctx.finish(m, &ctx.cfg.checkpoint_dir)
}

fn head_spec(store: &ParamStore, profile: gotjepa::Profile) -> HeadSpec {
    if store.contains(&format!("{PROJNET}/w")) {
        HeadSpec::student(profile)
    } else {
        HeadSpec::teacher(profile)
    }
}

pub fn train_head(ctx: &Ctx, variant: Variant) -> Result<()> {
    let mut m = Manifest::new(&format!("train-head-{}", variant.name()), &ctx.cfg);
    let mut store = match variant {
        Variant::Baseline => ctx.require("stage0", "train-stage0", &mut m)?,
        Variant::Jepa => ctx.require("jepa", "pretrain-jepa", &mut m)?,
    };
    let exp = ctx.cfg.experiment()?;
    let spec = head_spec(&store, exp.profile);
    let log = run_head_training(&mut store, &exp.profile, &spec, &exp.head, ctx.cfg.seed)?;
    ctx.save(&format!("head_{}", variant.name()), "train-head", &store, &mut m)?;
    let mut text = String::from("step,cls,reg,total\n");
    for s in &log {
        text.push_str(&format!("{},{},{},{}\n", s.step, s.cls, s.reg, s.total));
    }
    ctx.report(&format!("head_{}.csv", variant.name()), &text, &mut m)?;
    ctx.finish(m, &ctx.cfg.checkpoint_dir)
}

pub fn train_occusolver(ctx: &Ctx, variant: Variant) -> Result<()> {
    let mut m = Manifest::new(&format!("train-occusolver-{}", variant.name()), &ctx.cfg);
    let head = format!("head_{}", variant.name());
    let producer = format!("train-head --variant {}", variant.name());
    let mut store = ctx.require(&head, &producer, &mut m)?;
    let exp = ctx.cfg.experiment()?;
    let spec = head_spec(&store, exp.profile);
    let log = run_stage2(&mut store, &exp.profile, &spec, &exp.stage2, ctx.cfg.seed)?;
    ctx.save(&format!("full_{}", variant.name()), "train-occusolver", &store, &mut m)?;
    let mut text = String::from("step,cls_pt,reg_pt,cls_got,reg_got,total,vis_bce\n");
    for s in &log {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.step, s.parts.cls_pt, s.parts.reg_pt, s.parts.cls_got, s.parts.reg_got, s.total, s.vis_bce
        ));
    }
    ctx.report(&format!("occusolver_{}.csv", variant.name()), &text, &mut m)?;
    ctx.finish(m, &ctx.cfg.checkpoint_dir)
}

fn load_model(ctx: &Ctx, path: &Path, m: &mut Manifest) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::Prerequisite(format!(
            "{} not found; run `gotjepa train-head` or `gotjepa train-occusolver` first",
            path.display()
        )));
    }
    m.input(path)?;
    Ok(load_for_profile(path, &ctx.cfg.profile()?)?.0)
}

fn tracker_kind(store: &ParamStore, profile: gotjepa::Profile, plain: bool) -> TrackerKind {
    let spec = head_spec(store, profile);
    if !plain && store.with_prefix(ADAPTERS).next().is_some() {
        TrackerKind::WithOccuSolver(spec)
    } else {
        TrackerKind::Plain(spec)
    }
}

pub fn track(ctx: &Ctx, checkpoint: &Path, sequence: &Path, out: &Path, plain: bool) -> Result<()> {
    let mut m = Manifest::new("track", &ctx.cfg);
    let store = load_model(ctx, checkpoint, &mut m)?;
    let profile = ctx.cfg.profile()?;
    let seq = load_sequence(sequence)?;
    m.input(sequence)?;
    if seq.config.image_size != profile.image_size {
        return Err(Error::Init(format!(
            "sequence {} has {} px frames, profile expects {}",
            sequence.display(),
            seq.config.image_size,
            profile.image_size
        )));
    }
    let runtime = ctx.cfg.runtime();
    let mut tracker = match tracker_kind(&store, profile, plain) {
        TrackerKind::Plain(h) => Tracker::plain(&store, profile, h, runtime)?,
        TrackerKind::WithOccuSolver(h) => Tracker::full(&store, profile, h, runtime)?,
    };
    let result = tracker.run(&seq.frames, &seq.gt_boxes[0])?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(out, result.to_text()).map_err(|e| Error::io(out, e))?;
    m.output(out)?;
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ctx.finish(m, dir)
}

#[derive(Serialize)]
struct MetricSummary {
    suc: f64,
    pr: f64,
    npr: f64,
    ao: f64,
    op50: f64,
    frames: usize,
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        Self {
            suc: r.suc,
            pr: r.pr,
            npr: r.npr,
            ao: r.ao,
            op50: r.op50,
            frames: r.frames,
        }
    }
}

/// Scores one prediction file against a stored sequence.
pub fn eval_predictions(ctx: &Ctx, predictions: &Path, sequence: &Path) -> Result<()> {
    let mut m = Manifest::new("eval", &ctx.cfg);
    let text = fs::read_to_string(predictions).map_err(|e| Error::io(predictions, e))?;
    m.input(predictions)?;
    let result = TrackResult::from_text(&text, predictions)?;
    let seq = load_sequence(sequence)?;
    m.input(sequence)?;
    let report = eval_sequence(&result.boxes(), &seq.gt_boxes, ctx.cfg.precision_px)?;
    ctx.report("eval.json", &json(&MetricSummary::from(&report)), &mut m)?;
    ctx.report("eval_curves.csv", &report.curves_csv(), &mut m)?;
    println!("{}", json(&MetricSummary::from(&report)));
    ctx.finish(m, &ctx.cfg.report_dir)
}

/// Runs a checkpoint over the seeded benchmark.
pub fn eval_benchmark(ctx: &Ctx, checkpoint: &Path, plain: bool) -> Result<()> {
    let mut m = Manifest::new("eval", &ctx.cfg);
    let store = load_model(ctx, checkpoint, &mut m)?;
    let exp = ctx.cfg.experiment()?;
    let kind = tracker_kind(&store, exp.profile, plain);
    let bench = benchmark_configs(&exp.profile, &exp.benchmark);
    let outcomes = evaluate_tracker(&store, &exp.profile, &kind, &exp.runtime, &bench)?;
    let s = summarize(&outcomes)?;
    let report = serde_json::json!({
        "all": MetricSummary::from(&s.all),
        "occlusion_heavy": MetricSummary::from(&s.occlusion_heavy),
        "recovered": s.recovered.0,
        "recovery_eligible": s.recovered.1,
    });
    ctx.report("eval.json", &json(&report), &mut m)?;
    ctx.report("eval_curves.csv", &s.all.curves_csv(), &mut m)?;
    println!("{}", json(&report));
    ctx.finish(m, &ctx.cfg.report_dir)
}

pub fn ablate(ctx: &Ctx, seeds: usize) -> Result<()> {
    if seeds == 0 {
        return Err(Error::config("seeds", "must be positive"));
    }
    let mut m = Manifest::new("ablate", &ctx.cfg);
    let exp = ctx.cfg.experiment()?;
    let s0 = run_stage0(&exp, ctx.cfg.seed)?;
    info!("stage 0 finished in {:.1}s", s0.seconds);
    let mut outcomes = Vec::with_capacity(seeds);
    for k in 0..seeds as u64 {
        let seed = ctx.cfg.seed.wrapping_add(k + 1);
        let o = run_seed(&s0.store, &exp, seed, &AblationRow::ALL)?;
        info!("seed {seed} finished in {:.1}s", o.seconds);
        outcomes.push(o);
    }
    let table = ablation_table(&outcomes);
    ctx.report("ablation.csv", &table, &mut m)?;
    let jepa: Vec<_> = outcomes
        .iter()
        .map(|o| {
            serde_json::json!({
                "seed": o.seed,
                "inv_cov_held_out_inv": [o.jepa_inv_cov.held_out_inv_start, o.jepa_inv_cov.held_out_inv_end],
                "inv_only_held_out_inv": [o.jepa_inv_only.held_out_inv_start, o.jepa_inv_only.held_out_inv_end],
                "inv_cov_exp_std_min": o.jepa_inv_cov.held_out_exp_std_min_end,
                "visibility": o.visibility,
            })
        })
        .collect();
    ctx.report("ablation_runs.json", &json(&jepa), &mut m)?;
    print!("{table}");
    ctx.finish(m, &ctx.cfg.report_dir)
}
