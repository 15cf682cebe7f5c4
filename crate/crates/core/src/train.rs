//! Training stages, the seeded synthetic benchmark and the ablation matrix.

use std::time::Instant;

use gotjepa_autodiff::{clip_grad_norm, cosine_scale, AdamW, Graph, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{WindowSampler, CUR_POSITION, HEAD_POSITIONS, REF_POSITIONS};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::jepa::{self, HeldOut, JepaConfig, JepaRun};
use crate::metrics::{
    aggregate, eval_sequence, hinge_cls_loss_g, iou, reg_loss_g, MetricReport, TrackLossWeights,
    HINGE_THRESHOLD, PRECISION_PX,
};
use crate::occusolver::{
    self, init_adapters, init_point_tracker, train_point_tracker, train_stage2, visibility_accuracy,
    PointTrackerTraining, Stage2Config, VisibilityAccuracy,
};
use crate::profile::Profile;
use crate::runtime::{RuntimeConfig, TrackResult, Tracker};
use crate::synthdata::{random_config, Scenario, SceneGeometry, SequenceGenerator, SynthConfig};
use crate::trackhead::{
    classify_g, encode_frame, encode_frame_g, init_tracker, labels_for_box, regress_g, HeadSpec,
    REGDEC, TEACHER_ROOT,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weights: TrackLossWeights,
    /// Minimum target visibility at the reference and current positions.
    pub min_visibility: f64,
    pub seed: u64,
}

impl Default for TrackTrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch: 4,
            lr: 5e-4,
            weights: TrackLossWeights::default(),
            min_visibility: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackStep {
    pub step: usize,
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
}

/// Weighted hinge score loss plus GIoU box loss for one prediction.
pub fn track_loss_g(
    g: &mut Graph,
    store: &ParamStore,
    profile: &Profile,
    omega: Var,
    z: Var,
    gt: &BBox,
    weights: &TrackLossWeights,
) -> Result<(Var, f64, f64)> {
    let (cls_label, reg_label) = labels_for_box(gt, profile)?;
    let p = classify_g(g, omega, z);
    let lc = hinge_cls_loss_g(g, p, &cls_label.to_tensor(), HINGE_THRESHOLD);
    let d = regress_g(g, store, profile, omega, z);
    let lr = reg_loss_g(g, d, &reg_label, gt, profile.stride());
    let (cv, rv) = (g.scalar(lc), lr.map_or(0.0, |v| g.scalar(v)));
    let mut total = g.scale(lc, weights.cls);
    if let Some(lr) = lr {
        let r = g.scale(lr, weights.reg);
        total = g.add(total, r);
    }
    Ok((total, cv, rv))
}

/// Which parameters a tracking-loss run updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackTraining {
    /// Encoder, label encoder, predictor and box decoder (teacher pretraining).
    Full,
    /// Label encoder, predictor, projection and box decoder; encoder fixed.
    Head,
}

fn trainable_prefixes(spec: &HeadSpec, mode: TrackTraining) -> Vec<String> {
    let mut p = vec![
        format!("{}/label_encoder/", spec.root),
        format!("{}/predictor/", spec.root),
        format!("{REGDEC}/"),
    ];
    if let Some(proj) = &spec.projnet {
        p.push(format!("{proj}/"));
    }
    if mode == TrackTraining::Full {
        p.push(format!("{TEACHER_ROOT}/encoder/"));
    }
    p
}

/// Trains on windows with references at positions 0 and 4 and the current frame at 7.
pub fn train_tracking(
    store: &mut ParamStore,
    profile: &Profile,
    spec: &HeadSpec,
    mode: TrackTraining,
    cfg: &TrackTrainConfig,
    sampler: &mut WindowSampler,
) -> Result<Vec<TrackStep>> {
    let prefixes = trainable_prefixes(spec, mode);
    let size = profile.image_size as f64;
    let mut opt = AdamW::with_constant_lr(cfg.lr);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        opt.lr_scale = cosine_scale(step, cfg.steps);
        let pf = prefixes.clone();
        let mut g = Graph::with_trainable(move |n| pf.iter().any(|p| n.starts_with(p.as_str())));
        let mut losses = Vec::with_capacity(cfg.batch);
        let (mut cls, mut reg) = (0.0, 0.0);
        for _ in 0..cfg.batch {
            let w = sampler.next(&HEAD_POSITIONS);
            let feat = |g: &mut Graph, pos: usize| -> Result<Var> {
                Ok(match mode {
                    TrackTraining::Full => {
                        let x = g.constant(w.frame(pos).to_tensor());
                        encode_frame_g(g, store, profile, x)
                    }
                    TrackTraining::Head => g.constant(encode_frame(store, profile, w.frame(pos))?),
                })
            };
            let f0 = feat(&mut g, REF_POSITIONS[0])?;
            let f1 = feat(&mut g, REF_POSITIONS[1])?;
            let cur = feat(&mut g, CUR_POSITION)?;
            let mut refs = Vec::with_capacity(2);
            for (k, f) in [f0, f1].into_iter().enumerate() {
                let b = w.boxes[REF_POSITIONS[k]].clamp_to_image(size);
                let (c, r) = labels_for_box(&b, profile)?;
                let l = g.constant(crate::trackhead::label_tensor(&c, &r)?);
                refs.push((f, spec.encode_labels_g(&mut g, store, l)));
            }
            let (omega, z) = spec.predict_g(&mut g, store, [refs[0], refs[1]], cur);
            let gt = w.boxes[CUR_POSITION].clamp_to_image(size);
            let (l, c, r) = track_loss_g(&mut g, store, profile, omega, z, &gt, &cfg.weights)?;
            cls += c / cfg.batch as f64;
            reg += r / cfg.batch as f64;
            losses.push(l);
        }
        let total = g.concat_rows(&losses);
        let total = g.mean(total);
        let tv = g.scalar(total);
        if !tv.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("tracking loss {tv}"),
            });
        }
        let mut grads = g.backward(total).params();
        clip_grad_norm(&mut grads, 1.0);
        opt.step(store, &grads);
        log.push(TrackStep {
            step,
            cls,
            reg,
            total: tv,
        });
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Benchmark

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub standard: usize,
    pub occlusion_heavy: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            standard: 30,
            occlusion_heavy: 20,
            seed: 0,
        }
    }
}

pub fn benchmark_configs(profile: &Profile, spec: &BenchmarkSpec) -> Vec<(Scenario, SynthConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xbe9c_4a11);
    let mut out = Vec::with_capacity(spec.standard + spec.occlusion_heavy);
    for _ in 0..spec.standard {
        out.push((Scenario::Standard, random_config(profile, Scenario::Standard, &mut rng)));
    }
    for _ in 0..spec.occlusion_heavy {
        out.push((
            Scenario::OcclusionHeavy,
            random_config(profile, Scenario::OcclusionHeavy, &mut rng),
        ));
    }
    out
}

/// First frame after a run of at least `min_len` fully hidden frames.
pub fn reappearance_frame(scene: &SceneGeometry, min_len: usize) -> Option<usize> {
    let mut run = 0;
    for t in 0..scene.num_frames() {
        if scene.target_visibility(t) == 0.0 {
            run += 1;
        } else {
            if run >= min_len {
                return Some(t);
            }
            run = 0;
        }
    }
    None
}

/// Whether IoU exceeds 0.5 at some frame in `[r, r + within]`.
pub fn recovers(preds: &[BBox], gts: &[BBox], r: usize, within: usize) -> bool {
    (r..=(r + within).min(preds.len() - 1)).any(|t| iou(&preds[t], &gts[t]) > 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceOutcome {
    pub scenario: Scenario,
    pub report: MetricReport,
    /// For sequences with a long full occlusion: recovery within five frames of reappearance.
    pub recovered: Option<bool>,
}

/// Tracker variants compared by the ablation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrackerKind {
    Plain(HeadSpec),
    WithOccuSolver(HeadSpec),
}

pub const RECOVERY_WINDOW: usize = 5;
pub const LONG_OCCLUSION: usize = 20;

pub fn track_sequence(
    store: &ParamStore,
    profile: &Profile,
    kind: &TrackerKind,
    runtime: &RuntimeConfig,
    gen: &SequenceGenerator,
) -> Result<TrackResult> {
    let seq = gen.full_sequence();
    let mut tracker = match kind {
        TrackerKind::Plain(h) => Tracker::plain(store, *profile, h.clone(), runtime.clone())?,
        TrackerKind::WithOccuSolver(h) => Tracker::full(store, *profile, h.clone(), runtime.clone())?,
    };
    tracker.run(&seq.frames, &seq.gt_boxes[0])
}

pub fn evaluate_tracker(
    store: &ParamStore,
    profile: &Profile,
    kind: &TrackerKind,
    runtime: &RuntimeConfig,
    configs: &[(Scenario, SynthConfig)],
) -> Result<Vec<SequenceOutcome>> {
    configs
        .iter()
        .map(|(scenario, cfg)| {
            let gen = SequenceGenerator::new(cfg)?;
            let result = track_sequence(store, profile, kind, runtime, &gen)?;
            let scene = gen.geometry();
            let gts: Vec<BBox> = (0..scene.num_frames()).map(|t| scene.target_box(t)).collect();
            let preds = result.boxes();
            let report = eval_sequence(&preds, &gts, PRECISION_PX)?;
            let recovered = reappearance_frame(scene, LONG_OCCLUSION).map(|r| recovers(&preds, &gts, r, RECOVERY_WINDOW));
            Ok(SequenceOutcome {
                scenario: *scenario,
                report,
                recovered,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub all: MetricReport,
    pub occlusion_heavy: MetricReport,
    /// Recovered / eligible sequences.
    pub recovered: (usize, usize),
}

pub fn summarize(outcomes: &[SequenceOutcome]) -> Result<BenchmarkSummary> {
    let all: Vec<MetricReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let heavy: Vec<MetricReport> = outcomes
        .iter()
        .filter(|o| o.scenario == Scenario::OcclusionHeavy)
        .map(|o| o.report.clone())
        .collect();
    let flags: Vec<bool> = outcomes.iter().filter_map(|o| o.recovered).collect();
    Ok(BenchmarkSummary {
        all: aggregate(&all)?,
        occlusion_heavy: if heavy.is_empty() { aggregate(&all)? } else { aggregate(&heavy)? },
        recovered: (flags.iter().filter(|&&b| b).count(), flags.len()),
    })
}

// ---------------------------------------------------------------------------
// Experiment orchestration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub teacher: TrackTrainConfig,
    pub point_tracker: PointTrackerTraining,
    pub jepa: JepaConfig,
    pub head: TrackTrainConfig,
    pub stage2: Stage2Config,
    pub runtime: RuntimeConfig,
    pub benchmark: BenchmarkSpec,
    pub vis_eval_windows: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            profile: Profile::small(),
            teacher: TrackTrainConfig {
                steps: 1500,
                ..TrackTrainConfig::default()
            },
            point_tracker: PointTrackerTraining::default(),
            jepa: JepaConfig::default(),
            head: TrackTrainConfig {
                steps: 100,
                lr: 2e-4,
                ..TrackTrainConfig::default()
            },
            stage2: Stage2Config::default(),
            runtime: RuntimeConfig::default(),
            benchmark: BenchmarkSpec::default(),
            vis_eval_windows: 24,
        }
    }
}

/// Teacher tracker and point tracker, shared by every seed.
pub struct Stage0 {
    pub store: ParamStore,
    pub teacher_log: Vec<TrackStep>,
    pub point_log: Vec<occusolver::PointTrackerStep>,
    pub seconds: f64,
}

pub fn run_stage0(cfg: &ExperimentConfig, seed: u64) -> Result<Stage0> {
    let start = Instant::now();
    let profile = cfg.profile;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    init_tracker(&mut store, &profile, &mut rng);
    init_point_tracker(&mut store, &mut rng);
    let mut sampler =
        WindowSampler::new(profile, Scenario::Train, rng.gen()).with_min_visibility(cfg.teacher.min_visibility);
    let teacher_cfg = TrackTrainConfig {
        seed: rng.gen(),
        ..cfg.teacher.clone()
    };
    let teacher_log = train_tracking(
        &mut store,
        &profile,
        &HeadSpec::teacher(profile),
        TrackTraining::Full,
        &teacher_cfg,
        &mut sampler,
    )?;
    let mut psampler = WindowSampler::new(profile, Scenario::Train, rng.gen());
    let pcfg = PointTrackerTraining {
        seed: rng.gen(),
        ..cfg.point_tracker.clone()
    };
    let point_log = train_point_tracker(&mut store, &profile, &pcfg, &mut psampler)?;
    Ok(Stage0 {
        store,
        teacher_log,
        point_log,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Student pretraining on top of a teacher checkpoint.
pub fn run_pretrain(
    teacher: &ParamStore,
    profile: &Profile,
    jcfg: &JepaConfig,
    seed: u64,
) -> Result<(ParamStore, JepaRun)> {
    let mut store = teacher.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jepa::init_student(&mut store, profile, &mut rng)?;
    let mut held_sampler = WindowSampler::new(*profile, Scenario::Train, seed ^ 0x4e1d).with_min_visibility(0.5);
    let held = HeldOut::build(
        &store,
        profile,
        &mut held_sampler,
        jcfg.held_out,
        jcfg.rho_max,
        jcfg.corruption,
        seed ^ 0x77,
    )?;
    let mut sampler = WindowSampler::new(*profile, Scenario::Train, rng.gen()).with_min_visibility(0.5);
    let cfg = JepaConfig {
        seed: rng.gen(),
        ..jcfg.clone()
    };
    let run = jepa::pretrain(&mut store, profile, &cfg, &mut sampler, &held)?;
    Ok((store, run))
}

/// Fine-tunes a predictor with the tracking head.
pub fn run_head_training(
    store: &mut ParamStore,
    profile: &Profile,
    spec: &HeadSpec,
    hcfg: &TrackTrainConfig,
    seed: u64,
) -> Result<Vec<TrackStep>> {
    let mut sampler =
        WindowSampler::new(*profile, Scenario::Train, seed ^ 0x3ead).with_min_visibility(hcfg.min_visibility);
    let cfg = TrackTrainConfig {
        seed,
        ..hcfg.clone()
    };
    train_tracking(store, profile, spec, TrackTraining::Head, &cfg, &mut sampler)
}

pub fn run_stage2(
    store: &mut ParamStore,
    profile: &Profile,
    spec: &HeadSpec,
    scfg: &Stage2Config,
    seed: u64,
) -> Result<Vec<occusolver::Stage2Step>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_adapters(store, profile, scfg.points, &mut rng)?;
    let mut sampler = WindowSampler::new(*profile, Scenario::Train, rng.gen()).with_min_visibility(scfg.min_visibility);
    let cfg = Stage2Config {
        seed: rng.gen(),
        ..scfg.clone()
    };
    train_stage2(store, profile, spec, &cfg, &mut sampler)
}

pub fn held_out_visibility(store: &ParamStore, profile: &Profile, cfg: &ExperimentConfig, seed: u64) -> Result<VisibilityAccuracy> {
    let mut sampler = WindowSampler::new(*profile, Scenario::Train, seed ^ 0x0b5e);
    visibility_accuracy(store, profile, &mut sampler, cfg.vis_eval_windows, cfg.stage2.points, seed ^ 0x51)
}

/// One row of the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum AblationRow {
    Baseline,
    BaselineOccuSolver,
    InvOnly,
    InvCov,
    InvCovOccuSolver,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::Baseline,
        AblationRow::BaselineOccuSolver,
        AblationRow::InvOnly,
        AblationRow::InvCov,
        AblationRow::InvCovOccuSolver,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AblationRow::Baseline => "baseline",
            AblationRow::BaselineOccuSolver => "baseline+occusolver",
            AblationRow::InvOnly => "jepa-inv",
            AblationRow::InvCov => "jepa-inv+cov",
            AblationRow::InvCovOccuSolver => "jepa-inv+cov+occusolver",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub jepa_inv_cov: JepaRun,
    pub jepa_inv_only: JepaRun,
    pub rows: Vec<(AblationRow, BenchmarkSummary)>,
    pub visibility: Option<VisibilityAccuracy>,
    pub seconds: f64,
}

impl SeedOutcome {
    pub fn row(&self, r: AblationRow) -> Option<&BenchmarkSummary> {
        self.rows.iter().find(|(k, _)| *k == r).map(|(_, s)| s)
    }
}

/// Runs pretraining, head training, stage 2 and the benchmark for the
/// requested rows with one seed. The inv-only pretraining always runs (its
/// held-out loss is reported); its tracker is evaluated only when requested.
pub fn run_seed(stage0: &ParamStore, cfg: &ExperimentConfig, seed: u64, rows: &[AblationRow]) -> Result<SeedOutcome> {
    let start = Instant::now();
    let profile = cfg.profile;
    let bench = benchmark_configs(
        &profile,
        &BenchmarkSpec {
            seed,
            ..cfg.benchmark.clone()
        },
    );
    let runtime = RuntimeConfig {
        seed,
        ..cfg.runtime.clone()
    };
    let teacher = HeadSpec::teacher(profile);
    let student = HeadSpec::student(profile);
    let mut out_rows = Vec::new();
    let mut visibility = None;

    if rows.iter().any(|r| matches!(r, AblationRow::Baseline | AblationRow::BaselineOccuSolver)) {
        let mut base = stage0.clone();
        run_head_training(&mut base, &profile, &teacher, &cfg.head, seed ^ 0x1)?;
        if rows.contains(&AblationRow::Baseline) {
            let o = evaluate_tracker(&base, &profile, &TrackerKind::Plain(teacher.clone()), &runtime, &bench)?;
            out_rows.push((AblationRow::Baseline, summarize(&o)?));
        }
        if rows.contains(&AblationRow::BaselineOccuSolver) {
            run_stage2(&mut base, &profile, &teacher, &cfg.stage2, seed ^ 0x2)?;
            let o = evaluate_tracker(&base, &profile, &TrackerKind::WithOccuSolver(teacher.clone()), &runtime, &bench)?;
            out_rows.push((AblationRow::BaselineOccuSolver, summarize(&o)?));
        }
    }

    let inv_only_cfg = JepaConfig {
        beta: 0.0,
        ..cfg.jepa.clone()
    };
    let (mut inv_store, jepa_inv_only) = run_pretrain(stage0, &profile, &inv_only_cfg, seed ^ 0x3)?;
    if rows.contains(&AblationRow::InvOnly) {
        run_head_training(&mut inv_store, &profile, &student, &cfg.head, seed ^ 0x4)?;
        let o = evaluate_tracker(&inv_store, &profile, &TrackerKind::Plain(student.clone()), &runtime, &bench)?;
        out_rows.push((AblationRow::InvOnly, summarize(&o)?));
    }
    drop(inv_store);

    let (mut jstore, jepa_inv_cov) = run_pretrain(stage0, &profile, &cfg.jepa, seed ^ 0x3)?;
    if rows.iter().any(|r| matches!(r, AblationRow::InvCov | AblationRow::InvCovOccuSolver)) {
        run_head_training(&mut jstore, &profile, &student, &cfg.head, seed ^ 0x4)?;
        if rows.contains(&AblationRow::InvCov) {
            let o = evaluate_tracker(&jstore, &profile, &TrackerKind::Plain(student.clone()), &runtime, &bench)?;
            out_rows.push((AblationRow::InvCov, summarize(&o)?));
        }
        if rows.contains(&AblationRow::InvCovOccuSolver) {
            run_stage2(&mut jstore, &profile, &student, &cfg.stage2, seed ^ 0x5)?;
            visibility = Some(held_out_visibility(&jstore, &profile, cfg, seed)?);
            let o = evaluate_tracker(&jstore, &profile, &TrackerKind::WithOccuSolver(student.clone()), &runtime, &bench)?;
            out_rows.push((AblationRow::InvCovOccuSolver, summarize(&o)?));
        }
    }
    out_rows.sort_by_key(|(r, _)| *r);
    Ok(SeedOutcome {
        seed,
        jepa_inv_cov,
        jepa_inv_only,
        rows: out_rows,
        visibility,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `mean ± std` (sample std) of one metric over seeds.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Comparison table: one line per row with `mean±std` of each metric over seeds.
pub fn ablation_table(outcomes: &[SeedOutcome]) -> String {
    let mut s = String::from("row,suc,pr,npr,ao,op50,occlusion_suc,recovered\n");
    for row in AblationRow::ALL {
        let sums: Vec<&BenchmarkSummary> = outcomes.iter().filter_map(|o| o.row(row)).collect();
        if sums.is_empty() {
            continue;
        }
        let col = |f: &dyn Fn(&BenchmarkSummary) -> f64| {
            let (m, sd) = mean_std(&sums.iter().map(|b| f(b)).collect::<Vec<_>>());
            format!("{m:.4}±{sd:.4}")
        };
        let rec: (usize, usize) = sums
            .iter()
            .fold((0, 0), |a, b| (a.0 + b.recovered.0, a.1 + b.recovered.1));
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}/{}\n",
            row.label(),
            col(&|b| b.all.suc),
            col(&|b| b.all.pr),
            col(&|b| b.all.npr),
            col(&|b| b.all.ao),
            col(&|b| b.all.op50),
            col(&|b| b.occlusion_heavy.suc),
            rec.0,
            rec.1
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_of_known_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn benchmark_is_seeded_and_has_the_occlusion_subset() {
        let p = Profile::small();
        let a = benchmark_configs(&p, &BenchmarkSpec::default());
        let b = benchmark_configs(&p, &BenchmarkSpec::default());
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        let heavy: Vec<_> = a.iter().filter(|(s, _)| *s == Scenario::OcclusionHeavy).collect();
        assert_eq!(heavy.len(), 20);
        for (_, cfg) in heavy {
            let gen = SequenceGenerator::new(cfg).unwrap();
            let r = reappearance_frame(gen.geometry(), LONG_OCCLUSION).expect("long occlusion");
            assert!(gen.geometry().target_visibility(r) > 0.0);
        }
    }

    #[test]
    fn recovery_window_is_inclusive() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let off = b.translate(50.0, 0.0);
        let mut preds = vec![off; 12];
        let gts = vec![b; 12];
        assert!(!recovers(&preds, &gts, 3, 5));
        preds[8] = b;
        assert!(recovers(&preds, &gts, 3, 5));
        preds[8] = off;
        preds[9] = b;
        assert!(!recovers(&preds, &gts, 3, 5));
    }

    #[test]
    fn short_tracking_runs_are_reproducible() {
        let p = Profile::small();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut store = ParamStore::new();
            init_tracker(&mut store, &p, &mut rng);
            let mut sampler = WindowSampler::new(p, Scenario::Train, 2).with_min_visibility(0.5);
            let cfg = TrackTrainConfig {
                steps: 2,
                batch: 1,
                ..TrackTrainConfig::default()
            };
            let log = train_tracking(&mut store, &p, &HeadSpec::teacher(p), TrackTraining::Full, &cfg, &mut sampler).unwrap();
            (log, crate::checkpoint::param_hash(&store, ""))
        };
        assert_eq!(run(), run());
    }
}
