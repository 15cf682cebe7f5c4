//! Predictor pretraining against a frozen teacher: feature-grid corruption on
//! the student branch, invariance between student and teacher tracking
//! models, and a covariance penalty on an expanded copy of the student model.

use gotjepa_autodiff::{cosine_scale, nn, AdamW, Graph, ParamStore, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::param_hash;
use crate::data::{track_sample, TrackSample, WindowSampler, HEAD_POSITIONS};
use crate::error::{Error, Result};
use crate::profile::Profile;
use crate::trackhead::{HeadSpec, ReferenceSet, PROJNET, STUDENT_ROOT, TEACHER_ROOT};

pub const EXPANDER: &str = "jepa/expander";
pub const DEFAULT_ALPHA: f64 = 25.0;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_RHO_MAX: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Target cells receive copies of source-cell features.
    CopyPaste,
    /// Target cells are zeroed.
    Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionLog {
    pub rho: f64,
    pub k: usize,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}

/// `⌊ρ · cells⌋`.
pub fn corruption_count(rho: f64, cells: usize) -> usize {
    (rho * cells as f64).floor() as usize
}

/// Draws `ρ ~ U[0, rho_max)`, then `K = ⌊ρ·H·W⌋` distinct source and distinct
/// target cells; target rows are overwritten from the uncorrupted map.
pub fn corrupt_features(
    f: &Tensor,
    rho_max: f64,
    mode: CorruptionMode,
    rng: &mut impl Rng,
) -> Result<(Tensor, CorruptionLog)> {
    if !(0.0..=1.0).contains(&rho_max) {
        return Err(Error::config("rho_max", format!("{rho_max} is outside [0, 1]")));
    }
    let cells = f.rows();
    let rho = if rho_max > 0.0 {
        rng.gen_range(0.0..rho_max)
    } else {
        0.0
    };
    let k = corruption_count(rho, cells);
    let sources = sample(rng, cells, k).into_vec();
    let targets = sample(rng, cells, k).into_vec();
    let mut out = f.clone();
    for (&s, &t) in sources.iter().zip(&targets) {
        match mode {
            CorruptionMode::CopyPaste => out.row_slice_mut(t).copy_from_slice(f.row_slice(s)),
            CorruptionMode::Mask => out.row_slice_mut(t).fill(0.0),
        }
    }
    Ok((
        out,
        CorruptionLog {
            rho,
            k,
            sources,
            targets,
        },
    ))
}

/// Student predictor copied from the teacher, identity projection, and a
/// small random expander to `4·C` channels.
pub fn init_student(store: &mut ParamStore, profile: &Profile, rng: &mut impl Rng) -> Result<()> {
    let probe = format!("{TEACHER_ROOT}/predictor/query");
    if !store.contains(&probe) {
        return Err(Error::Init("teacher predictor parameters are missing".into()));
    }
    for part in ["label_encoder/", "predictor/"] {
        store.copy_prefix(
            &format!("{TEACHER_ROOT}/{part}"),
            &format!("{STUDENT_ROOT}/{part}"),
        );
    }
    let c = profile.channels;
    store.insert(format!("{PROJNET}/w"), Tensor::eye(c));
    store.insert(format!("{PROJNET}/b"), Tensor::zeros(1, c));
    nn::init_linear_scaled(store, EXPANDER, c, profile.expanded_channels(), 0.5, rng);
    Ok(())
}

/// Teacher model `ω̂` on clean features; inference only.
pub fn teacher_predict(
    store: &ParamStore,
    profile: &Profile,
    refs: &ReferenceSet,
    cur_clean: &Tensor,
) -> Result<Tensor> {
    if !store.contains(&format!("{TEACHER_ROOT}/predictor/query")) {
        return Err(Error::Init("teacher checkpoint is not loaded".into()));
    }
    Ok(HeadSpec::teacher(*profile)
        .predict_model(store, refs, cur_clean)?
        .0)
}

/// Student model `ω = ProjNet(predictor(refs, cur))`.
pub fn student_predict(
    store: &ParamStore,
    profile: &Profile,
    refs: &ReferenceSet,
    cur_corrupt: &Tensor,
) -> Result<Tensor> {
    Ok(HeadSpec::student(*profile)
        .predict_model(store, refs, cur_corrupt)?
        .0)
}

pub fn expand_g(g: &mut Graph, store: &ParamStore, omega: Var) -> Var {
    nn::linear(g, store, EXPANDER, omega)
}

pub fn expand(store: &ParamStore, omega: &Tensor) -> Tensor {
    let mut g = Graph::inference();
    let o = g.constant(omega.clone());
    let e = expand_g(&mut g, store, o);
    g.value(e).clone()
}

/// `(1/n) Σᵢ ‖ωᵢ − ω̂ᵢ‖²`.
pub fn loss_inv(omega: &Tensor, omega_hat: &Tensor) -> Result<f64> {
    if omega.shape() != omega_hat.shape() || omega.rows() == 0 {
        return Err(Error::Shape(format!(
            "student {:?} vs teacher {:?}",
            omega.shape(),
            omega_hat.shape()
        )));
    }
    let s: f64 = omega
        .data()
        .iter()
        .zip(omega_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / omega.rows() as f64)
}

pub fn loss_inv_g(g: &mut Graph, omega: Var, omega_hat: Var) -> Var {
    let n = g.shape(omega).0;
    let d = g.sub(omega, omega_hat);
    let d = g.square(d);
    let s = g.sum(d);
    g.scale(s, 1.0 / n as f64)
}

/// Sum of squared off-diagonal entries of the unbiased batch covariance, over `c`.
pub fn loss_cov(e: &Tensor) -> Result<f64> {
    let (n, c) = e.shape();
    if n < 2 {
        return Err(Error::Domain(format!(
            "covariance needs at least two rows, got {n}"
        )));
    }
    let mean: Vec<f64> = (0..c)
        .map(|j| (0..n).map(|i| e.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let mut total = 0.0;
    for a in 0..c {
        for b in 0..c {
            if a == b {
                continue;
            }
            let cov: f64 = (0..n)
                .map(|i| (e.get(i, a) - mean[a]) * (e.get(i, b) - mean[b]))
                .sum::<f64>()
                / (n - 1) as f64;
            total += cov * cov;
        }
    }
    Ok(total / c as f64)
}

pub fn loss_cov_g(g: &mut Graph, e: Var) -> Var {
    let (n, c) = g.shape(e);
    let mean = g.sum_rows(e);
    let neg_mean = g.scale(mean, -1.0 / n as f64);
    let d = g.add_row(e, neg_mean);
    let cov = g.t_matmul(d, d);
    let cov = g.scale(cov, 1.0 / (n - 1) as f64);
    let off = g.constant(Tensor::from_fn(c, c, |i, j| if i == j { 0.0 } else { 1.0 }));
    let cov = g.mul(cov, off);
    let sq = g.square(cov);
    let s = g.sum(sq);
    g.scale(s, 1.0 / c as f64)
}

pub fn loss_mp(l_inv: f64, l_cov: f64, alpha: f64, beta: f64) -> Result<f64> {
    if alpha < 0.0 {
        return Err(Error::config("alpha", "must be non-negative"));
    }
    if beta < 0.0 {
        return Err(Error::config("beta", "must be non-negative"));
    }
    Ok(alpha * l_inv + beta * l_cov)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JepaLossReport {
    pub l_inv: f64,
    pub l_cov: f64,
    pub l_mp: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Smallest per-column standard deviation over the batch rows.
pub fn min_column_std(x: &Tensor) -> f64 {
    let (n, c) = x.shape();
    (0..c)
        .map(|j| {
            let m = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let v = (0..n).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / (n - 1).max(1) as f64;
            v.sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JepaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub rho_max: f64,
    pub corruption: CorruptionMode,
    pub steps: usize,
    pub batch: usize,
    /// Learning rate of the student predictor and label encoder.
    pub lr_student: f64,
    /// Learning rate of the projection and expander.
    pub lr_proj: f64,
    pub held_out: usize,
    pub seed: u64,
}

impl Default for JepaConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            rho_max: DEFAULT_RHO_MAX,
            corruption: CorruptionMode::CopyPaste,
            steps: 250,
            batch: 8,
            lr_student: 1e-4,
            lr_proj: 1e-3,
            held_out: 32,
            seed: 0,
        }
    }
}

impl JepaConfig {
    pub fn validate(&self) -> Result<()> {
        loss_mp(0.0, 0.0, self.alpha, self.beta)?;
        if !(0.0..=1.0).contains(&self.rho_max) {
            return Err(Error::config("rho_max", "must lie in [0, 1]"));
        }
        if self.batch < 2 {
            return Err(Error::config("batch", "must be at least 2 for the covariance term"));
        }
        if self.held_out < 2 {
            return Err(Error::config("held_out", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JepaStepLog {
    pub step: usize,
    pub l_inv: f64,
    pub l_cov: f64,
    pub l_mp: f64,
    /// Collapse diagnostic: smallest per-dimension batch std of `ω`.
    pub omega_std_min: f64,
    pub omega_exp_std_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JepaRun {
    pub log: Vec<JepaStepLog>,
    pub held_out_inv_start: f64,
    pub held_out_inv_end: f64,
    pub held_out_exp_std_min_start: f64,
    pub held_out_exp_std_min_end: f64,
    pub teacher_hash: String,
    pub windows_seen: usize,
}

/// Held-out student inputs: samples with a fixed corrupted current frame.
pub struct HeldOut {
    pub samples: Vec<TrackSample>,
    pub corrupted: Vec<Tensor>,
}

impl HeldOut {
    pub fn build(
        store: &ParamStore,
        profile: &Profile,
        sampler: &mut WindowSampler,
        n: usize,
        rho_max: f64,
        mode: CorruptionMode,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(n);
        let mut corrupted = Vec::with_capacity(n);
        for _ in 0..n {
            let w = sampler.next(&HEAD_POSITIONS);
            let s = track_sample(store, profile, &w)?;
            corrupted.push(corrupt_features(&s.cur, rho_max, mode, &mut rng)?.0);
            samples.push(s);
        }
        Ok(Self { samples, corrupted })
    }

    /// Held-out `l_inv` and the smallest per-dimension std of `ω_exp`.
    pub fn evaluate(&self, store: &ParamStore, profile: &Profile) -> Result<(f64, f64)> {
        let c = profile.channels;
        let mut omega = Tensor::zeros(self.samples.len(), c);
        let mut hat = Tensor::zeros(self.samples.len(), c);
        for (i, (s, cur)) in self.samples.iter().zip(&self.corrupted).enumerate() {
            let o = student_predict(store, profile, &s.refs, cur)?;
            let h = teacher_predict(store, profile, &s.refs, &s.cur)?;
            omega.row_slice_mut(i).copy_from_slice(o.data());
            hat.row_slice_mut(i).copy_from_slice(h.data());
        }
        let exp = expand(store, &omega);
        Ok((loss_inv(&omega, &hat)?, min_column_std(&exp)))
    }
}

pub fn is_projection_param(name: &str) -> bool {
    name.starts_with(PROJNET) || name.starts_with(EXPANDER)
}

/// Runs the pretraining loop, updating `jepa/*` parameters in `store`.
/// The teacher (`trackhead/*`) is read only.
pub fn pretrain(
    store: &mut ParamStore,
    profile: &Profile,
    cfg: &JepaConfig,
    sampler: &mut WindowSampler,
    held_out: &HeldOut,
) -> Result<JepaRun> {
    cfg.validate()?;
    let teacher_hash = param_hash(store, &format!("{TEACHER_ROOT}/"));
    let (inv0, std0) = held_out.evaluate(store, profile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lr_s, lr_p) = (cfg.lr_student, cfg.lr_proj);
    let mut opt = AdamW::new(move |n| if is_projection_param(n) { lr_p } else { lr_s });
    let spec = HeadSpec::student(*profile);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        opt.lr_scale = cosine_scale(step, cfg.steps);
        let mut samples = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let w = sampler.next(&HEAD_POSITIONS);
            samples.push(track_sample(store, profile, &w)?);
        }
        let mut hat = Tensor::zeros(cfg.batch, profile.channels);
        for (i, s) in samples.iter().enumerate() {
            let h = teacher_predict(store, profile, &s.refs, &s.cur)?;
            hat.row_slice_mut(i).copy_from_slice(h.data());
        }
        let mut g = Graph::with_trainable(|n| n.starts_with("jepa/"));
        let mut omegas = Vec::with_capacity(cfg.batch);
        for s in &samples {
            let (corrupt, _) = corrupt_features(&s.cur, cfg.rho_max, cfg.corruption, &mut rng)?;
            let refs = spec.bind_refs(&mut g, store, &s.refs);
            let cur = g.constant(corrupt);
            omegas.push(spec.predict_g(&mut g, store, refs, cur).0);
        }
        let omega = g.concat_rows(&omegas);
        let hat_v = g.constant(hat);
        let l_inv = loss_inv_g(&mut g, omega, hat_v);
        let exp = expand_g(&mut g, store, omega);
        let l_cov = loss_cov_g(&mut g, exp);
        let a = g.scale(l_inv, cfg.alpha);
        let b = g.scale(l_cov, cfg.beta);
        let total = g.add(a, b);
        let (li, lc) = (g.scalar(l_inv), g.scalar(l_cov));
        let lm = loss_mp(li, lc, cfg.alpha, cfg.beta)?;
        if !lm.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("l_inv={li}, l_cov={lc}"),
            });
        }
        log.push(JepaStepLog {
            step,
            l_inv: li,
            l_cov: lc,
            l_mp: lm,
            omega_std_min: min_column_std(g.value(omega)),
            omega_exp_std_min: min_column_std(g.value(exp)),
        });
        let grads = g.backward(total).params();
        opt.step(store, &grads);
    }
    let (inv1, std1) = held_out.evaluate(store, profile)?;
    debug_assert_eq!(teacher_hash, param_hash(store, &format!("{TEACHER_ROOT}/")));
    Ok(JepaRun {
        log,
        held_out_inv_start: inv0,
        held_out_inv_end: inv1,
        held_out_exp_std_min_start: std0,
        held_out_exp_std_min_end: std1,
        teacher_hash,
        windows_seen: cfg.steps * cfg.batch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::Scenario;
    use crate::trackhead::init_tracker;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(loss_inv(&t(1, 2, &[3.0, 4.0]), &t(1, 2, &[0.0, 0.0])).unwrap(), 25.0);
        let d = t(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(loss_inv(&d, &Tensor::zeros(2, 2)).unwrap(), 2.5);
        assert_eq!(loss_cov(&t(2, 2, &[1.0, 0.0, -1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(loss_cov(&t(2, 2, &[1.0, 1.0, -1.0, -1.0])).unwrap(), 4.0);
        assert_eq!(loss_cov(&t(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0])).unwrap(), 0.0);
        assert!(matches!(loss_cov(&t(1, 2, &[1.0, 2.0])), Err(Error::Domain(_))));
        assert_eq!(loss_mp(0.1, 0.5, 25.0, 1.0).unwrap(), 3.0);
        assert_eq!(loss_mp(0.1, 0.5, 25.0, 0.0).unwrap(), 2.5);
        assert!(loss_mp(0.1, 0.5, -1.0, 0.0).is_err());
    }

    #[test]
    fn graph_losses_match_scalar_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::from_fn(5, 6, |_, _| rng.gen_range(-1.0..1.0));
        let b = Tensor::from_fn(5, 6, |_, _| rng.gen_range(-1.0..1.0));
        let mut g = Graph::inference();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let li = loss_inv_g(&mut g, av, bv);
        let lc = loss_cov_g(&mut g, av);
        assert!((g.scalar(li) - loss_inv(&a, &b).unwrap()).abs() < 1e-12);
        assert!((g.scalar(lc) - loss_cov(&a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn corruption_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Tensor::from_fn(324, 4, |r, c| (r * 4 + c) as f64);
        let (same, log) = corrupt_features(&f, 0.0, CorruptionMode::CopyPaste, &mut rng).unwrap();
        assert_eq!((same, log.k), (f.clone(), 0));
        assert_eq!(corruption_count(0.2, 324), 64);
        for _ in 0..50 {
            let (out, log) = corrupt_features(&f, 0.2, CorruptionMode::CopyPaste, &mut rng).unwrap();
            assert_eq!(log.k, corruption_count(log.rho, 324));
            assert!(log.k <= 64);
            let changed = (0..324).filter(|&r| out.row_slice(r) != f.row_slice(r)).count();
            assert!(changed <= log.k);
        }
        assert!(corrupt_features(&f, 1.5, CorruptionMode::Mask, &mut rng).is_err());
    }

    #[test]
    fn expander_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let profile = Profile::small();
        let mut store = ParamStore::new();
        init_tracker(&mut store, &profile, &mut rng);
        init_student(&mut store, &profile, &mut rng).unwrap();
        assert!(expand(&store, &Tensor::zeros(1, 32)).data().iter().all(|&v| v == 0.0));
        let w = Tensor::from_fn(1, 32, |_, _| rng.gen_range(-1.0..1.0));
        let e1 = expand(&store, &w);
        let e3 = expand(&store, &w.map(|v| 3.0 * v));
        assert_eq!(e1.shape(), (1, 128));
        assert!(e1.map(|v| 3.0 * v).max_abs_diff(&e3) < 1e-12);
    }

    #[test]
    fn student_starts_as_teacher_and_zero_steps_change_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let profile = Profile::small();
        let mut store = ParamStore::new();
        assert!(matches!(
            init_student(&mut store, &profile, &mut rng),
            Err(Error::Init(_))
        ));
        init_tracker(&mut store, &profile, &mut rng);
        init_student(&mut store, &profile, &mut rng).unwrap();
        let mut sampler = WindowSampler::new(profile, Scenario::Train, 5);
        let held = HeldOut::build(&store, &profile, &mut sampler, 3, 0.2, CorruptionMode::CopyPaste, 6).unwrap();
        let s = &held.samples[0];
        let te = teacher_predict(&store, &profile, &s.refs, &s.cur).unwrap();
        let st = student_predict(&store, &profile, &s.refs, &s.cur).unwrap();
        assert!(te.max_abs_diff(&st) < 1e-12);

        let before = param_hash(&store, "");
        let cfg = JepaConfig {
            steps: 0,
            held_out: 3,
            ..JepaConfig::default()
        };
        let run = pretrain(&mut store, &profile, &cfg, &mut sampler, &held).unwrap();
        assert_eq!(param_hash(&store, ""), before);
        assert_eq!(run.held_out_inv_start, run.held_out_inv_end);
    }

    #[test]
    fn short_runs_are_reproducible_and_leave_the_teacher_alone() {
        let profile = Profile::small();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut store = ParamStore::new();
            init_tracker(&mut store, &profile, &mut rng);
            init_student(&mut store, &profile, &mut rng).unwrap();
            let teacher = param_hash(&store, "trackhead/");
            let mut sampler = WindowSampler::new(profile, Scenario::Train, 8);
            let held =
                HeldOut::build(&store, &profile, &mut sampler, 2, 0.2, CorruptionMode::CopyPaste, 9).unwrap();
            let cfg = JepaConfig {
                steps: 2,
                batch: 2,
                held_out: 2,
                ..JepaConfig::default()
            };
            let r = pretrain(&mut store, &profile, &cfg, &mut sampler, &held).unwrap();
            assert_eq!(param_hash(&store, "trackhead/"), teacher);
            for l in &r.log {
                assert_eq!(l.l_mp, cfg.alpha * l.l_inv + cfg.beta * l.l_cov);
            }
            (r.log, param_hash(&store, "jepa/"))
        };
        assert_eq!(run(), run());
    }
}
