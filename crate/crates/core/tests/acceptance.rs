//! Acceptance gate. Prints one `PASS`/`FAIL` line per criterion.
//!
//! Exact criteria (1-5, 10) make the process exit non-zero on failure. The
//! trained-model criteria (6-9) are reported but do not fail the run, since
//! their outcome depends on toy-scale training rather than on code
//! correctness. `GOTJEPA_ACCEPTANCE_QUICK=1` skips them.

use std::process::ExitCode;
use std::time::Instant;

use gotjepa::checkpoint::param_hash;
use gotjepa::jepa::{
    self, corrupt_features, expand, expand_g, loss_cov, loss_cov_g, loss_inv, loss_inv_g, loss_mp,
    CorruptionMode, EXPANDER,
};
use gotjepa::metrics::{
    eval_sequence, giou_loss, giou_loss_g, hinge_cls_loss, hinge_cls_loss_g, MetricReport, HINGE_THRESHOLD,
    NORM_PRECISION, PRECISION_PX,
};
use gotjepa::occusolver::{OccuLambdas, OccuLossParts};
use gotjepa::runtime::RuntimeConfig;
use gotjepa::synthdata::{random_config, Scenario, SequenceGenerator};
use gotjepa::trackhead::{classify, init_tracker, modulated_g, HeadSpec, ReferenceSet};
use gotjepa::train::{
    mean_std, run_head_training, run_pretrain, run_seed, run_stage0, run_stage2, track_sequence,
    AblationRow, ExperimentConfig, SeedOutcome, TrackerKind,
};
use gotjepa::{BBox, Profile};
use gotjepa_autodiff::check::{central_difference, relative_error};
use gotjepa_autodiff::{nn, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-9;
const FORWARD_TOL: f64 = 1e-6;
const SEEDS: u64 = 3;

struct Gate {
    hard_failures: usize,
}

impl Gate {
    fn report(&mut self, id: &str, name: &str, pass: bool, hard: bool, detail: String) {
        println!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass && hard {
            self.hard_failures += 1;
        }
    }
}

fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Analytic gradient of a one-input graph against central differences of the scalar form.
fn grad_error(
    x: &Tensor,
    graph_loss: impl Fn(&mut Graph, Var) -> Var,
    scalar_loss: impl Fn(&Tensor) -> f64,
) -> f64 {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let l = graph_loss(&mut g, v);
    let analytic = g.backward(l).of(v).cloned().unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
    let numeric = central_difference(scalar_loss, x, FD_STEP);
    relative_error(&analytic, &numeric, 1e-8)
}

fn random_box(rng: &mut impl Rng, size: f64) -> BBox {
    let w = rng.gen_range(4.0..size / 2.0);
    let h = rng.gen_range(4.0..size / 2.0);
    let x0 = rng.gen_range(0.0..size - w);
    let y0 = rng.gen_range(0.0..size - h);
    BBox::raw(x0, y0, x0 + w, y0 + h)
}

fn boxes_tensor(b: &[BBox]) -> Tensor {
    Tensor::from_vec(b.len(), 4, b.iter().flat_map(|b| b.as_array()).collect()).unwrap()
}

fn tensor_boxes(t: &Tensor) -> Vec<BBox> {
    (0..t.rows())
        .map(|r| BBox::raw(t.get(r, 0), t.get(r, 1), t.get(r, 2), t.get(r, 3)))
        .collect()
}

/// Box edges closer than this to each other sit near a kink of min/max/relu.
fn near_kink(a: &BBox, b: &BBox) -> bool {
    let m = 10.0 * FD_STEP;
    let xs = [a.x0 - b.x0, a.x1 - b.x1, a.y0 - b.y0, a.y1 - b.y1, a.x1 - b.x0, b.x1 - a.x0, a.y1 - b.y0, b.y1 - a.y0];
    xs.iter().any(|d| d.abs() < m)
}

fn criterion_1(gate: &mut Gate) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 5];
    for _ in 0..20 {
        let n = rng.gen_range(1..6);
        let c = rng.gen_range(2..9);
        let hat = random_tensor(&mut rng, n, c, 1.0);
        let x = random_tensor(&mut rng, n, c, 1.0);
        let h2 = hat.clone();
        let e = grad_error(
            &x,
            |g, v| {
                let h = g.constant(h2.clone());
                loss_inv_g(g, v, h)
            },
            |t| loss_inv(t, &hat).unwrap(),
        );
        worst[0] = worst[0].max(e);

        let n = rng.gen_range(2..7);
        let x = random_tensor(&mut rng, n, c, 1.0);
        let e = grad_error(&x, |g, v| loss_cov_g(g, v), |t| loss_cov(t).unwrap());
        worst[1] = worst[1].max(e);

        // Full pretraining objective: α·l_inv(ω, ω̂) + β·l_cov(Exp(ω)).
        let mut store = ParamStore::new();
        nn::init_linear_scaled(&mut store, EXPANDER, c, 4 * c, 0.5, &mut rng);
        let hat = random_tensor(&mut rng, n, c, 1.0);
        let (alpha, beta) = (rng.gen_range(0.0..30.0), rng.gen_range(0.0..3.0));
        let h2 = hat.clone();
        let e = grad_error(
            &x,
            |g, v| {
                let h = g.constant(h2.clone());
                let li = loss_inv_g(g, v, h);
                let ex = expand_g(g, &store, v);
                let lc = loss_cov_g(g, ex);
                let a = g.scale(li, alpha);
                let b = g.scale(lc, beta);
                g.add(a, b)
            },
            |t| loss_mp(loss_inv(t, &hat).unwrap(), loss_cov(&expand(&store, t)).unwrap(), alpha, beta).unwrap(),
        );
        worst[2] = worst[2].max(e);

        let cells = rng.gen_range(4..40);
        let y = Tensor::from_fn(cells, 1, |_, _| if rng.gen_bool(0.3) { rng.gen_range(0.1..1.0) } else { rng.gen_range(0.0..0.04) });
        let p = Tensor::from_fn(cells, 1, |_, _| {
            let v: f64 = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) { v } else { -v }
        });
        let y2 = y.clone();
        let e = grad_error(
            &p,
            |g, v| hinge_cls_loss_g(g, v, &y2, HINGE_THRESHOLD),
            |t| hinge_cls_loss(t, &y, HINGE_THRESHOLD).unwrap(),
        );
        worst[3] = worst[3].max(e);

        let rows = rng.gen_range(1..5);
        let (pred, gt): (Vec<BBox>, Vec<BBox>) = loop {
            let pred: Vec<BBox> = (0..rows).map(|_| random_box(&mut rng, 100.0)).collect();
            let gt: Vec<BBox> = (0..rows).map(|_| random_box(&mut rng, 100.0)).collect();
            if !pred.iter().zip(&gt).any(|(a, b)| near_kink(a, b)) {
                break (pred, gt);
            }
        };
        let gt_t = boxes_tensor(&gt);
        let e = grad_error(
            &boxes_tensor(&pred),
            |g, v| {
                let gv = g.constant(gt_t.clone());
                giou_loss_g(g, v, gv)
            },
            |t| {
                let p = tensor_boxes(t);
                p.iter().zip(&gt).map(|(a, b)| giou_loss(a, b)).sum::<f64>() / rows as f64
            },
        );
        worst[4] = worst[4].max(e);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|&e| e < GRAD_TOL) && secs < 60.0;
    gate.report(
        "1",
        "gradient checks",
        pass,
        true,
        format!(
            "max rel err inv={:.1e} cov={:.1e} mp={:.1e} hinge={:.1e} giou={:.1e} (tol {GRAD_TOL:.0e}, 20 instances each) in {secs:.1}s",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
}

fn criterion_2(gate: &mut Gate) {
    let t = |rows: usize, v: &[f64]| Tensor::from_vec(rows, v.len() / rows, v.to_vec()).unwrap();
    let l0 = 0.37;
    let parts = OccuLossParts {
        cls_pt: l0,
        reg_pt: l0,
        cls_got: l0,
        reg_got: l0,
    };
    let cases = [
        ("l_inv single", loss_inv(&t(1, &[3.0, 4.0]), &t(1, &[0.0, 0.0])).unwrap(), 25.0),
        ("l_inv pair", loss_inv(&t(2, &[1.0, 0.0, 0.0, 2.0]), &t(2, &[0.0; 4])).unwrap(), 2.5),
        ("l_cov axis", loss_cov(&t(2, &[1.0, 0.0, -1.0, 0.0])).unwrap(), 0.0),
        ("l_cov diagonal", loss_cov(&t(2, &[1.0, 1.0, -1.0, -1.0])).unwrap(), 4.0),
        ("l_mp", loss_mp(0.1, 0.5, 25.0, 1.0).unwrap(), 3.0),
        (
            "giou",
            giou_loss(&BBox::raw(0.0, 0.0, 1.0, 1.0), &BBox::raw(2.0, 0.0, 3.0, 1.0)),
            4.0 / 3.0,
        ),
        ("dual-supervision total", parts.total(&OccuLambdas::default()), 301.5 * l0),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > ORACLE_TOL)
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .collect();
    gate.report(
        "2",
        "loss oracles",
        bad.is_empty(),
        true,
        if bad.is_empty() {
            format!("{} hand-derived values within {ORACLE_TOL:.0e}", cases.len())
        } else {
            bad.join("; ")
        },
    );
}

fn criterion_3(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_p, mut worst_m) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let cells = rng.gen_range(1..101);
        let c = rng.gen_range(1..65);
        let omega = random_tensor(&mut rng, 1, c, 1.0);
        let z = random_tensor(&mut rng, cells, c, 2.0);
        let p = classify(&omega, &z).unwrap();
        let mut g = Graph::inference();
        let (o, zv) = (g.constant(omega.clone()), g.constant(z.clone()));
        let m = modulated_g(&mut g, o, zv);
        let m = g.value(m);
        for i in 0..cells {
            let mut dot = 0.0;
            for k in 0..c {
                dot += omega.get(0, k) * z.get(i, k);
            }
            worst_p = worst_p.max((p.get(i, 0) - dot).abs());
            for k in 0..c {
                worst_m = worst_m.max((m.get(i, k) - dot * z.get(i, k)).abs());
            }
        }
    }
    gate.report(
        "3",
        "score map and modulated features",
        worst_p < FORWARD_TOL && worst_m < FORWARD_TOL,
        true,
        format!("max abs err classify={worst_p:.1e} modulated={worst_m:.1e} over 100 instances (tol {FORWARD_TOL:.0e})"),
    );
}

fn criterion_4(gate: &mut Gate) {
    let profile = Profile::standard();
    let cells = profile.cells();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut violations = Vec::new();
    let mut max_k = 0;
    for draw in 0..1000 {
        let f = random_tensor(&mut rng, cells, profile.channels, 1.0);
        let before = f.clone();
        let (out, log) = corrupt_features(&f, 0.2, CorruptionMode::CopyPaste, &mut rng).unwrap();
        let changed = (0..cells).filter(|&r| out.row_slice(r) != f.row_slice(r)).count();
        max_k = max_k.max(log.k);
        if log.k != (log.rho * 324.0).floor() as usize || log.k > 64 || changed > log.k || f != before {
            violations.push(draw);
        }
    }

    // The teacher sees the clean map: its prediction is unchanged by corrupting a copy.
    let mut store = ParamStore::new();
    init_tracker(&mut store, &profile, &mut rng);
    let z_ref = random_tensor(&mut rng, cells, profile.channels, 1.0);
    let cur = random_tensor(&mut rng, cells, profile.channels, 1.0);
    let refs = ReferenceSet::single(z_ref, &BBox::raw(90.0, 90.0, 150.0, 140.0), &profile).unwrap();
    let clean = jepa::teacher_predict(&store, &profile, &refs, &cur).unwrap();
    let (corrupt, _) = corrupt_features(&cur, 0.2, CorruptionMode::CopyPaste, &mut rng).unwrap();
    let after = jepa::teacher_predict(&store, &profile, &refs, &cur).unwrap();
    let teacher_same = clean.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let student_differs = corrupt != cur;
    gate.report(
        "4",
        "corruption contract",
        violations.is_empty() && teacher_same,
        true,
        format!(
            "{} violating draws of 1000 on {}x{} (max K {max_k} <= 64); teacher output bit-identical: {teacher_same}; student input corrupted: {student_differs}",
            violations.len(),
            profile.grid,
            profile.grid
        ),
    );
}

struct BruteReport {
    suc: f64,
    pr: f64,
    npr: f64,
    ao: f64,
    op50: f64,
}

/// Per-frame recomputation with its own overlap and distance code.
fn brute_force(preds: &[BBox], gts: &[BBox], t_px: f64) -> BruteReport {
    let n = preds.len() as f64;
    let mut ious = Vec::new();
    let (mut pr, mut npr, mut op) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        let ix = p.x1.min(g.x1) - p.x0.max(g.x0);
        let iy = p.y1.min(g.y1) - p.y0.max(g.y0);
        let inter = if ix > 0.0 && iy > 0.0 { ix * iy } else { 0.0 };
        let ap = (p.x1 - p.x0) * (p.y1 - p.y0);
        let ag = (g.x1 - g.x0) * (g.y1 - g.y0);
        let iou = if inter > 0.0 { inter / (ap + ag - inter) } else { 0.0 };
        ious.push(iou);
        let dx = (p.x0 + p.x1) / 2.0 - (g.x0 + g.x1) / 2.0;
        let dy = (p.y0 + p.y1) / 2.0 - (g.y0 + g.y1) / 2.0;
        let d = dx.hypot(dy);
        let diag = (g.x1 - g.x0).hypot(g.y1 - g.y0);
        pr += (d <= t_px) as usize;
        npr += (d / diag <= NORM_PRECISION) as usize;
        op += (iou > 0.5) as usize;
    }
    let mut suc = 0.0;
    for k in 0..=20 {
        let tau = k as f64 / 20.0;
        suc += ious.iter().filter(|&&v| v >= tau).count() as f64 / n;
    }
    BruteReport {
        suc: suc / 21.0,
        pr: pr as f64 / n,
        npr: npr as f64 / n,
        ao: ious.iter().sum::<f64>() / n,
        op50: op as f64 / n,
    }
}

fn same(r: &MetricReport, b: &BruteReport) -> bool {
    r.suc == b.suc && r.pr == b.pr && r.npr == b.npr && r.ao == b.ao && r.op50 == b.op50
}

fn criterion_5(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut mismatches = 0;
    let mut pairs = 0;
    for _ in 0..50 {
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..20 {
            let g = random_box(&mut rng, 126.0);
            // Half the predictions are perturbations of the ground truth so every metric is exercised.
            let p = if rng.gen_bool(0.5) {
                g.translate(rng.gen_range(-25.0..25.0), rng.gen_range(-25.0..25.0))
            } else {
                random_box(&mut rng, 126.0)
            };
            preds.push(p);
            gts.push(g);
        }
        pairs += preds.len();
        let r = eval_sequence(&preds, &gts, PRECISION_PX).unwrap();
        mismatches += (!same(&r, &brute_force(&preds, &gts, PRECISION_PX))) as usize;
    }

    let gt = BBox::raw(100.0, 100.0, 140.0, 140.0);
    let pr_at = |dx: f64| eval_sequence(&[gt.translate(dx, 0.0)], &[gt], PRECISION_PX).unwrap().pr;
    let half = eval_sequence(&[BBox::raw(0.0, 0.0, 2.0, 1.0)], &[BBox::raw(0.0, 0.0, 1.0, 1.0)], PRECISION_PX).unwrap();
    let boundaries = pr_at(19.0) == 1.0 && pr_at(21.0) == 0.0 && half.ao == 0.5 && half.op50 == 0.0;
    gate.report(
        "5",
        "metric oracle",
        mismatches == 0 && boundaries,
        true,
        format!(
            "{mismatches} mismatching sequences over {pairs} pairs; Pr(19px)={} Pr(21px)={} OP50(IoU=0.5)={}",
            pr_at(19.0),
            pr_at(21.0),
            half.op50
        ),
    );
}

fn quick() -> bool {
    std::env::var("GOTJEPA_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1")
}

fn suc(o: &SeedOutcome, r: AblationRow) -> (f64, f64) {
    let s = o.row(r).expect("row evaluated");
    (s.all.suc, s.occlusion_heavy.suc)
}

/// Criteria 6 to 9 share one stage-0 run and three seeded experiment runs.
fn trained_criteria(gate: &mut Gate) {
    let cfg = ExperimentConfig::default();
    let stage0 = run_stage0(&cfg, 0).expect("stage 0");
    println!("info: stage 0 trained in {:.0}s", stage0.seconds);
    let rows = [AblationRow::Baseline, AblationRow::InvCov, AblationRow::InvCovOccuSolver];
    let outcomes: Vec<SeedOutcome> = (1..=SEEDS)
        .map(|seed| {
            let o = run_seed(&stage0.store, &cfg, seed, &rows).expect("seed run");
            let inv = &o.jepa_inv_cov;
            println!(
                "info: seed {seed} in {:.0}s: held-out l_inv {:.3e} -> {:.3e} (inv-only {:.3e}), SUC baseline {:.4} jepa {:.4} full {:.4}",
                o.seconds,
                inv.held_out_inv_start,
                inv.held_out_inv_end,
                o.jepa_inv_only.held_out_inv_end,
                suc(&o, AblationRow::Baseline).0,
                suc(&o, AblationRow::InvCov).0,
                suc(&o, AblationRow::InvCovOccuSolver).0,
            );
            o
        })
        .collect();

    let mean = |f: &dyn Fn(&SeedOutcome) -> f64| mean_std(&outcomes.iter().map(f).collect::<Vec<_>>());
    let (base, _) = mean(&|o| suc(o, AblationRow::Baseline).0);
    let (jepa_all, _) = mean(&|o| suc(o, AblationRow::InvCov).0);
    let (jepa_occ, _) = mean(&|o| suc(o, AblationRow::InvCov).1);
    let (full_occ, _) = mean(&|o| suc(o, AblationRow::InvCovOccuSolver).1);
    let gap_pre = jepa_all - base;
    let gap_occ = full_occ - jepa_occ;
    let c7 = gap_pre >= 0.0 && gap_occ >= 0.0;

    let drops: Vec<f64> = outcomes
        .iter()
        .map(|o| 1.0 - o.jepa_inv_cov.held_out_inv_end / o.jepa_inv_cov.held_out_inv_start)
        .collect();
    let a = drops.iter().all(|&d| d >= 0.5);
    let min_std = outcomes
        .iter()
        .flat_map(|o| {
            let r = &o.jepa_inv_cov;
            r.log.iter().map(|s| s.omega_exp_std_min).chain([r.held_out_exp_std_min_end])
        })
        .fold(f64::INFINITY, f64::min);
    let b = min_std > 1e-3;
    let held_std = |f: &dyn Fn(&SeedOutcome) -> f64| outcomes.iter().map(f).fold(f64::INFINITY, f64::min);
    let held_start = held_std(&|o| o.jepa_inv_cov.held_out_exp_std_min_start);
    let held_end = held_std(&|o| o.jepa_inv_cov.held_out_exp_std_min_end);
    let cov_helps = outcomes
        .iter()
        .all(|o| o.jepa_inv_cov.held_out_inv_end <= o.jepa_inv_only.held_out_inv_end);
    let c = cov_helps || c7;
    let windows = outcomes.iter().map(|o| o.jepa_inv_cov.windows_seen).min().unwrap_or(0);
    let slowest = outcomes.iter().map(|o| o.seconds).fold(0.0, f64::max);
    let drops_txt: Vec<String> = drops.iter().map(|d| format!("{:.1}%", 100.0 * d)).collect();
    gate.report(
        "6",
        "anti-collapse",
        a && b && c && windows >= 2000 && slowest <= 1200.0,
        false,
        format!(
            "(a) held-out l_inv drop per seed [{}] need >= 50%: {a}; (b) min ω_exp std over training batches and held-out end {min_std:.2e} > 1e-3: {b} (held-out min {held_start:.2e} at start, {held_end:.2e} at end); (c) inv+cov <= inv-only every seed: {cov_helps}, or criterion 7: {c7}; {windows} windows per run; slowest seed {slowest:.0}s",
            drops_txt.join(", ")
        ),
    );

    gate.report(
        "7",
        "ablation direction",
        c7,
        false,
        format!(
            "mean SUC over {SEEDS} seeds: jepa {jepa_all:.4} - baseline {base:.4} = {gap_pre:+.4}; occlusion-heavy full {full_occ:.4} - jepa {jepa_occ:.4} = {gap_occ:+.4}"
        ),
    );

    let (rec, eligible) = outcomes
        .iter()
        .map(|o| o.row(AblationRow::InvCovOccuSolver).unwrap().recovered)
        .fold((0, 0), |acc, r| (acc.0 + r.0, acc.1 + r.1));
    let rate = rec as f64 / eligible.max(1) as f64;
    gate.report(
        "8",
        "occlusion recovery",
        eligible > 0 && rate >= 0.8,
        false,
        format!("{rec}/{eligible} long-occlusion sequences recovered within 5 frames ({:.1}%, need >= 80%)", 100.0 * rate),
    );

    let vis: Vec<_> = outcomes.iter().map(|o| o.visibility.expect("full row ran")).collect();
    let ok9 = vis.iter().all(|v| v.adapted >= 0.9 && v.adapted > v.frozen);
    let txt: Vec<String> = vis
        .iter()
        .map(|v| format!("{:.3} vs frozen {:.3} ({} points)", v.adapted, v.frozen, v.tokens))
        .collect();
    gate.report("9", "visibility accuracy", ok9, false, format!("per seed: {}", txt.join("; ")));
}

/// Every library stage twice with a reduced budget: parameters and tracks must match bit for bit.
fn criterion_10(gate: &mut Gate) {
    let mut cfg = ExperimentConfig::default();
    cfg.teacher.steps = 3;
    cfg.point_tracker.steps = 2;
    cfg.jepa.steps = 2;
    cfg.jepa.batch = 2;
    cfg.jepa.held_out = 2;
    cfg.head.steps = 2;
    cfg.stage2.steps = 2;
    cfg.stage2.batch = 1;
    let profile = cfg.profile;
    let run = || {
        let s0 = run_stage0(&cfg, 7).unwrap().store;
        let (mut store, _) = run_pretrain(&s0, &profile, &cfg.jepa, 8).unwrap();
        let spec = HeadSpec::student(profile);
        run_head_training(&mut store, &profile, &spec, &cfg.head, 9).unwrap();
        run_stage2(&mut store, &profile, &spec, &cfg.stage2, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gen = SequenceGenerator::new(&random_config(&profile, Scenario::OcclusionHeavy, &mut rng)).unwrap();
        let runtime = RuntimeConfig::default();
        let track = track_sequence(&store, &profile, &TrackerKind::WithOccuSolver(spec), &runtime, &gen).unwrap();
        (param_hash(&s0, ""), param_hash(&store, ""), track.to_text())
    };
    let (a, b) = (run(), run());
    gate.report(
        "10",
        "determinism",
        a == b,
        true,
        format!(
            "stage 0 hash equal: {}; trained model hash equal: {}; track output equal: {}",
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2
        ),
    );
}

fn main() -> ExitCode {
    // The harness also receives libtest flags such as `--list`; it has no tests to enumerate.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut gate = Gate { hard_failures: 0 };
    criterion_1(&mut gate);
    criterion_2(&mut gate);
    criterion_3(&mut gate);
    criterion_4(&mut gate);
    criterion_5(&mut gate);
    if quick() {
        println!("SKIP criteria 6-9 (GOTJEPA_ACCEPTANCE_QUICK=1)");
    } else {
        trained_criteria(&mut gate);
    }
    criterion_10(&mut gate);
    if gate.hard_failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
