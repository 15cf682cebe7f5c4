//! Object-aware point visibility for the tracking head.
//!
//! A small iterative point tracker (trained once, then frozen) follows query
//! points through an eight-frame window. Ladder-side adapters condition it on
//! object priors and re-estimate per-point visibility; the visible/invisible
//! points become Gaussian energy maps on the tracking grid, which are fused
//! with the current-frame features before the score and box decoders.
//!
//! Point tokens are ordered time-major: row `t·P + p` is point `p` in window
//! frame `t`.

use std::rc::Rc;

use gotjepa_autodiff::nn::{self, TransformerCfg};
use gotjepa_autodiff::{clip_grad_norm, cosine_scale, AdamW, ConvGeom, Graph, ParamStore, SparseRows, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Window, WindowSampler, CUR_POSITION, REF_POSITIONS, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::{hinge_cls_loss_g, reg_loss_g, HINGE_THRESHOLD};
use crate::profile::Profile;
use crate::synthdata::{Frame, RegMapLabel, SceneGeometry, ScoreMapLabel};
use crate::trackhead::{
    classify_g, encode_frame, head_output, label_tensor, labels_for_box, regress_g, HeadSpec,
    ReferenceSet, LABEL_CHANNELS,
};

pub const FROZEN: &str = "occusolver/frozen";
pub const ADAPTERS: &str = "occusolver/adapters";
/// Window positions that receive the two object priors.
pub const PRIOR_POSITIONS: [usize; 2] = [0, WINDOW_LEN / 2];
/// Appearance-token width `F`.
pub const POINT_DIM: usize = 32;
pub const DEFAULT_POINTS: usize = 16;
pub const DEFAULT_ITERATIONS: usize = 4;
/// Pixel stride of the point tracker's feature map.
pub const FEATURE_STRIDE: usize = 2;
pub const VIS_THRESHOLD: f64 = 0.5;
/// Energy-map kernel width in tracking-grid cells.
pub const ENERGY_SIGMA: f64 = 1.0;

const HEADS: usize = 4;
const LAYERS: usize = 2;
const FNET_STEM: usize = 16;
const PRIOR_HIDDEN: usize = 16;
const CORR_RADIUS: i64 = 3;
const CORR_TAPS: usize = 49;
/// Pixels per unit of point-head output.
const STEP_SCALE: f64 = 4.0;
/// Pixels per unit of the displacement input to the iterative transformer.
const DISP_SCALE: f64 = 8.0;
/// Loss discount for earlier refinement iterations.
const ITER_DISCOUNT: f64 = 0.8;

fn frozen(s: &str) -> String {
    format!("{FROZEN}/{s}")
}

fn adapter(s: &str) -> String {
    format!("{ADAPTERS}/{s}")
}

fn tr_cfg() -> TransformerCfg {
    TransformerCfg::new(POINT_DIM, HEADS, LAYERS)
}

/// Side of the point tracker's square feature map for `image_size`.
pub fn point_grid(image_size: usize) -> usize {
    image_size / FEATURE_STRIDE
}

/// Query points drawn uniformly inside `b`.
pub fn sample_query_points(b: &BBox, n: usize, rng: &mut impl Rng) -> Result<Vec<(f64, f64)>> {
    b.validate()?;
    if n == 0 {
        return Err(Error::Domain("at least one query point is required".into()));
    }
    if b.width() <= 0.0 || b.height() <= 0.0 {
        return Err(Error::Domain(format!("degenerate query box {b:?}")));
    }
    Ok((0..n)
        .map(|_| {
            (
                b.x0 + rng.gen::<f64>() * b.width(),
                b.y0 + rng.gen::<f64>() * b.height(),
            )
        })
        .collect())
}

/// Unit-square positions of query points, reused across windows.
pub fn sample_relative_points(n: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.gen(), rng.gen())).collect()
}

pub fn place_points(rel: &[(f64, f64)], b: &BBox) -> Vec<(f64, f64)> {
    rel.iter()
        .map(|&(u, v)| (b.x0 + u * b.width(), b.y0 + v * b.height()))
        .collect()
}

/// Per-frame starting coordinates: queries shifted by each box's centre
/// displacement from `boxes[0]`.
pub fn init_from_boxes(queries: &[(f64, f64)], boxes: &[BBox]) -> Tensor {
    let p = queries.len();
    let (cx0, cy0) = boxes[0].center();
    Tensor::from_fn(boxes.len() * p, 2, |r, c| {
        let (cx, cy) = boxes[r / p].center();
        let q = queries[r % p];
        if c == 0 {
            q.0 + cx - cx0
        } else {
            q.1 + cy - cy0
        }
    })
}

// ---------------------------------------------------------------------------
// Frozen point tracker

/// Feature net, iterative transformer, point head and its visibility head.
pub fn init_point_tracker(store: &mut ParamStore, rng: &mut impl Rng) {
    nn::init_conv(store, &frozen("fnet/stem"), 2, 1, FNET_STEM, rng);
    nn::init_conv(store, &frozen("fnet/mix"), 3, FNET_STEM, POINT_DIM, rng);
    nn::init_conv(store, &frozen("fnet/out"), 1, POINT_DIM, POINT_DIM, rng);
    let din = 2 * CORR_TAPS + POINT_DIM + 2;
    nn::init_linear(store, &frozen("iter/in"), din, POINT_DIM, rng);
    nn::init_embedding(store, &frozen("iter/time"), WINDOW_LEN, POINT_DIM, rng);
    nn::init_transformer(store, &frozen("iter/tr"), tr_cfg(), rng);
    nn::init_linear_scaled(store, &frozen("iter/q_update"), POINT_DIM, POINT_DIM, 0.1, rng);
    nn::init_linear_scaled(store, &frozen("point_head"), POINT_DIM, 2, 0.1, rng);
    nn::init_mlp(store, &frozen("vis_head"), POINT_DIM, POINT_DIM, 1, rng);
}

/// `[size², 1]` image to a `[G², F]` map at stride [`FEATURE_STRIDE`].
pub fn point_features_g(g: &mut Graph, store: &ParamStore, image_size: usize, image: Var) -> Var {
    let x = g.add_scalar(image, -0.5);
    let geom = ConvGeom {
        h: image_size,
        w: image_size,
        cin: 1,
        k: 2,
        stride: 2,
        pad: 0,
    };
    let (x, (h, w)) = nn::conv2d(g, store, &frozen("fnet/stem"), x, geom);
    let x = g.relu(x);
    let geom = ConvGeom {
        h,
        w,
        cin: FNET_STEM,
        k: 3,
        stride: 1,
        pad: 1,
    };
    let (x, _) = nn::conv2d(g, store, &frozen("fnet/mix"), x, geom);
    let x = g.relu(x);
    let geom = ConvGeom {
        h,
        w,
        cin: POINT_DIM,
        k: 1,
        stride: 1,
        pad: 0,
    };
    nn::conv2d(g, store, &frozen("fnet/out"), x, geom).0
}

pub fn point_features(store: &ParamStore, frame: &Frame) -> Tensor {
    let mut g = Graph::inference();
    let x = g.constant(frame.to_tensor());
    let f = point_features_g(&mut g, store, frame.size(), x);
    g.value(f).clone()
}

fn bilinear(u: f64, v: f64, n: usize, base: usize, out: &mut Vec<(usize, f64)>) {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let (xx, yy) = (x0 as i64 + dx, y0 as i64 + dy);
            let w = wx * wy;
            if w != 0.0 && xx >= 0 && yy >= 0 && (xx as usize) < n && (yy as usize) < n {
                out.push((base + yy as usize * n + xx as usize, w));
            }
        }
    }
}

/// Bilinear samples of a stack of `frames` square maps of side `n` at
/// `stride`: for token `i` in frame `frame_of(i)`, the `(2r+1)²` taps around
/// its pixel position.
fn window_sampler(
    coords: &Tensor,
    frame_of: impl Fn(usize) -> usize,
    frames: usize,
    n: usize,
    stride: f64,
    radius: i64,
) -> SparseRows {
    let mut map = SparseRows::new(frames * n * n);
    let mut entries = Vec::with_capacity(4);
    for i in 0..coords.rows() {
        let u = coords.get(i, 0) / stride - 0.5;
        let v = coords.get(i, 1) / stride - 0.5;
        let base = frame_of(i) * n * n;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                entries.clear();
                bilinear(u + dx as f64, v + dy as f64, n, base, &mut entries);
                map.push_row(&entries);
            }
        }
    }
    map
}

/// 2×2 average pooling of each of `frames` stacked `n×n` maps.
fn pool_map(frames: usize, n: usize) -> SparseRows {
    let m = n / 2;
    let mut map = SparseRows::new(frames * n * n);
    for f in 0..frames {
        for i in 0..m {
            for j in 0..m {
                let base = f * n * n;
                let e: Vec<(usize, f64)> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(a, b)| (base + (2 * i + a) * n + 2 * j + b, 0.25))
                    .collect();
                map.push_row(&e);
            }
        }
    }
    map
}

/// Output row `i·k + j` copies input row `i`.
fn repeat_rows(rows: usize, k: usize) -> SparseRows {
    let mut map = SparseRows::new(rows);
    for i in 0..rows {
        for _ in 0..k {
            map.push_row(&[(i, 1.0)]);
        }
    }
    map
}

/// Output row `t·p + j` copies input row `t`.
fn tile_frames(frames: usize, p: usize) -> SparseRows {
    let mut map = SparseRows::new(frames);
    for t in 0..frames {
        for _ in 0..p {
            map.push_row(&[(t, 1.0)]);
        }
    }
    map
}

/// Output row `t·p + j` copies input row `j`.
fn tile_points(frames: usize, p: usize) -> SparseRows {
    let mut map = SparseRows::new(p);
    for _ in 0..frames {
        for j in 0..p {
            map.push_row(&[(j, 1.0)]);
        }
    }
    map
}

/// Outputs of [`point_track_iterate_g`].
pub struct IterOutput {
    /// Predicted coordinates `[T·P, 2]` after each iteration, differentiable in the last update.
    pub coords: Vec<Var>,
    /// Appearance tokens `Q^(m)` after each iteration, `[T·P, F]`.
    pub q_list: Vec<Var>,
    /// Total coordinate refinement relative to the starting coordinates.
    pub delta_pt: Tensor,
    /// Final appearance tokens (`Q⁰` when no iteration ran).
    pub delta_q: Var,
    pub final_coords: Tensor,
}

/// Runs `m` passes of the iterative transformer over one window.
///
/// `feats` are the `T` per-frame `[G², F]` maps, `queries` the query
/// coordinates in window frame 0, `init` the `[T·P, 2]` starting coordinates.
pub fn point_track_iterate_g(
    g: &mut Graph,
    store: &ParamStore,
    feats: &[Var],
    queries: &[(f64, f64)],
    init: &Tensor,
    m: usize,
) -> Result<IterOutput> {
    if feats.len() != WINDOW_LEN {
        return Err(Error::Shape(format!(
            "point tracker window has {} frames, expected {WINDOW_LEN}",
            feats.len()
        )));
    }
    let t_len = feats.len();
    let p = queries.len();
    if init.shape() != (t_len * p, 2) {
        return Err(Error::Shape(format!(
            "starting coordinates {:?}, expected {:?}",
            init.shape(),
            (t_len * p, 2)
        )));
    }
    let n = (g.shape(feats[0]).0 as f64).sqrt().round() as usize;
    let l0 = g.concat_rows(feats);
    let l1 = g.gather(l0, Rc::new(pool_map(t_len, n)));
    let qcoords = Tensor::from_fn(p, 2, |r, c| if c == 0 { queries[r].0 } else { queries[r].1 });
    let qmap = window_sampler(&qcoords, |_| 0, t_len, n, FEATURE_STRIDE as f64, 0);
    let q0 = g.gather(l0, Rc::new(qmap));
    let mut q = g.gather(q0, Rc::new(tile_points(t_len, p)));
    let time = g.param(store, &frozen("iter/time"));
    let time = g.gather(time, Rc::new(tile_frames(t_len, p)));
    let repeat = Rc::new(repeat_rows(t_len * p, CORR_TAPS));
    let corr_scale = 1.0 / (POINT_DIM as f64).sqrt();

    let mut coords = init.clone();
    let mut out_coords = Vec::with_capacity(m);
    let mut q_list = Vec::with_capacity(m);
    for _ in 0..m {
        let qrep = g.gather(q, repeat.clone());
        let mut corr = Vec::with_capacity(2);
        for (level, stride, side) in [(l0, FEATURE_STRIDE, n), (l1, 2 * FEATURE_STRIDE, n / 2)] {
            let map = window_sampler(&coords, |i| i / p, t_len, side, stride as f64, CORR_RADIUS);
            let s = g.gather(level, Rc::new(map));
            let prod = g.mul(s, qrep);
            let c = g.sum_cols(prod);
            let c = g.reshape(c, t_len * p, CORR_TAPS);
            corr.push(g.scale(c, corr_scale));
        }
        let disp = Tensor::from_fn(t_len * p, 2, |r, c| (coords.get(r, c) - init.get(r, c)) / DISP_SCALE);
        let disp = g.constant(disp);
        let x = g.concat_cols(&[corr[0], corr[1], q, disp]);
        let x = nn::linear(g, store, &frozen("iter/in"), x);
        let x = g.add(x, time);
        let y = nn::transformer(g, store, &frozen("iter/tr"), tr_cfg(), x);
        let step = nn::linear(g, store, &frozen("point_head"), y);
        let step = g.scale(step, STEP_SCALE);
        let base = g.constant(coords.clone());
        let next = g.add(base, step);
        let dq = nn::linear(g, store, &frozen("iter/q_update"), y);
        q = g.add(q, dq);
        coords = g.value(next).clone();
        out_coords.push(next);
        q_list.push(q);
    }
    let delta_pt = Tensor::from_fn(t_len * p, 2, |r, c| coords.get(r, c) - init.get(r, c));
    Ok(IterOutput {
        coords: out_coords,
        q_list,
        delta_pt,
        delta_q: q,
        final_coords: coords,
    })
}

/// Visibility logits `[T·P, 1]` of the head at `prefix` (frozen or adapter).
pub fn vis_logits_g(g: &mut Graph, store: &ParamStore, prefix: &str, q: Var) -> Var {
    nn::mlp(g, store, &format!("{prefix}/vis_head"), q)
}

/// Per-token visibility probabilities of the head at `prefix`.
pub fn vis_head_g(g: &mut Graph, store: &ParamStore, prefix: &str, q: Var) -> Var {
    let l = vis_logits_g(g, store, prefix, q);
    g.sigmoid(l)
}

/// Mean binary cross-entropy of `logits` against 0/1 `targets`.
pub fn bce_with_logits_g(g: &mut Graph, logits: Var, targets: &Tensor) -> Var {
    let y = g.constant(targets.clone());
    let sp = g.softplus(logits);
    let yl = g.mul(y, logits);
    let l = g.sub(sp, yl);
    g.mean(l)
}

// ---------------------------------------------------------------------------
// Prior conditioning and ladder-side adapters

/// Prior encoder, light transformer, reduction, ScaleNet, VisHead (copied
/// from the frozen visibility head), energy projection, fusion transformer
/// and ensemble network.
pub fn init_adapters(store: &mut ParamStore, profile: &Profile, points: usize, rng: &mut impl Rng) -> Result<()> {
    if !store.contains(&frozen("vis_head/fc1/w")) {
        return Err(Error::Init("frozen point tracker parameters are missing".into()));
    }
    let c = profile.channels;
    let half = POINT_DIM / 2;
    nn::init_conv(store, &adapter("prior/conv1"), 3, LABEL_CHANNELS, PRIOR_HIDDEN, rng);
    nn::init_conv(store, &adapter("prior/conv2"), 1, PRIOR_HIDDEN, POINT_DIM, rng);
    if let Some(w) = store.get_mut(&adapter("prior/conv2/w")) {
        w.scale_in_place(0.1);
    }
    nn::init_transformer(store, &adapter("light_trans"), tr_cfg(), rng);
    nn::init_linear(store, &adapter("reduce"), POINT_DIM, half, rng);
    nn::init_layer_norm(store, &adapter("scalenet/ln1"), half);
    store.insert(adapter("scalenet/time_mix"), Tensor::eye(WINDOW_LEN).map(|v| 0.5 * v));
    nn::init_layer_norm(store, &adapter("scalenet/ln2"), half);
    nn::init_mlp(store, &adapter("scalenet/channel"), half, POINT_DIM, half, rng);
    nn::init_linear_scaled(store, &adapter("scalenet/out"), half, POINT_DIM, 0.0, rng);
    store.copy_prefix(&frozen("vis_head/"), &adapter("vis_head/"));
    nn::init_linear(store, &adapter("energy_proj"), points, c, rng);
    nn::init_embedding(store, &adapter("fuse/pos"), profile.cells(), c, rng);
    nn::init_embedding(store, &adapter("fuse/energy_embed"), 1, c, rng);
    nn::init_embedding(store, &adapter("fuse/feature_embed"), 1, c, rng);
    nn::init_transformer(store, &adapter("fuse/tr"), TransformerCfg::new(c, HEADS, LAYERS), rng);
    nn::init_mlp(store, &adapter("ensemble"), 2 * c, c, c, rng);
    if let Some(w) = store.get_mut(&adapter("ensemble/fc2/w")) {
        w.scale_in_place(0.0);
    }
    Ok(())
}

/// Bilinear upsampling from the tracking grid to the point-feature grid.
fn prior_upsample(profile: &Profile) -> SparseRows {
    let n = point_grid(profile.image_size);
    let grid = profile.grid;
    let s = profile.stride() as f64;
    let mut map = SparseRows::new(grid * grid);
    let mut e = Vec::with_capacity(4);
    let clamp = |u: f64| u.clamp(0.0, (grid - 1) as f64);
    for i in 0..n {
        for j in 0..n {
            let x = (j * FEATURE_STRIDE) as f64 + FEATURE_STRIDE as f64 / 2.0;
            let y = (i * FEATURE_STRIDE) as f64 + FEATURE_STRIDE as f64 / 2.0;
            e.clear();
            bilinear(clamp(x / s - 0.5), clamp(y / s - 0.5), grid, 0, &mut e);
            map.push_row(&e);
        }
    }
    map
}

/// Prior-encoder embedding of a `[H·W, 5]` label map on the point-feature grid.
pub fn prior_embedding_g(g: &mut Graph, store: &ParamStore, profile: &Profile, labels: Var) -> Var {
    let grid = profile.grid;
    let geom = ConvGeom {
        h: grid,
        w: grid,
        cin: LABEL_CHANNELS,
        k: 3,
        stride: 1,
        pad: 1,
    };
    let (x, _) = nn::conv2d(g, store, &adapter("prior/conv1"), labels, geom);
    let x = g.relu(x);
    let geom = ConvGeom {
        h: grid,
        w: grid,
        cin: PRIOR_HIDDEN,
        k: 1,
        stride: 1,
        pad: 0,
    };
    let (x, _) = nn::conv2d(g, store, &adapter("prior/conv2"), x, geom);
    g.gather(x, Rc::new(prior_upsample(profile)))
}

pub fn inject_prior_g(g: &mut Graph, store: &ParamStore, profile: &Profile, features: Var, labels: Var) -> Var {
    let e = prior_embedding_g(g, store, profile, labels);
    g.add(features, e)
}

fn check_prior(profile: &Profile, features: &Tensor, cls: &ScoreMapLabel) -> Result<()> {
    let n = point_grid(profile.image_size);
    if features.shape() != (n * n, POINT_DIM) {
        return Err(Error::Shape(format!(
            "point features {:?}, expected {:?}",
            features.shape(),
            (n * n, POINT_DIM)
        )));
    }
    if cls.grid != (profile.grid, profile.grid) {
        return Err(Error::Shape(format!(
            "prior grid {:?}, expected {:?}",
            cls.grid,
            (profile.grid, profile.grid)
        )));
    }
    Ok(())
}

/// Adds the encoded object prior to one point-feature map.
pub fn inject_prior(
    store: &ParamStore,
    profile: &Profile,
    features: &Tensor,
    cls: &ScoreMapLabel,
    reg: &RegMapLabel,
) -> Result<Tensor> {
    check_prior(profile, features, cls)?;
    let mut g = Graph::inference();
    let f = g.constant(features.clone());
    let l = g.constant(label_tensor(cls, reg)?);
    let out = inject_prior_g(&mut g, store, profile, f, l);
    Ok(g.value(out).clone())
}

/// Adds the two priors to the maps at [`PRIOR_POSITIONS`]; other maps are untouched.
pub fn inject_window_priors_g(
    g: &mut Graph,
    store: &ParamStore,
    profile: &Profile,
    feats: &mut [Var],
    priors: &[Tensor; 2],
) -> Result<()> {
    if feats.len() != WINDOW_LEN {
        return Err(Error::Shape(format!(
            "point tracker window has {} frames, expected {WINDOW_LEN}",
            feats.len()
        )));
    }
    for (k, &pos) in PRIOR_POSITIONS.iter().enumerate() {
        let l = g.constant(priors[k].clone());
        feats[pos] = inject_prior_g(g, store, profile, feats[pos], l);
    }
    Ok(())
}

/// `[T·P, d]` time-major tokens mixed along time by a `[T, T]` matrix.
fn time_mix_g(g: &mut Graph, w: Var, x: Var, t_len: usize) -> Var {
    let (rows, d) = g.shape(x);
    let per = rows / t_len * d;
    let r = g.reshape(x, t_len, per);
    let m = g.matmul(w, r);
    g.reshape(m, rows, d)
}

/// `Q_cond = ScaleNet(Σ_m reduce(light-Trans(Q^(m)))) + ΔQ`.
pub fn ladder_refine_g(g: &mut Graph, store: &ParamStore, q_list: &[Var], delta_q: Var) -> Result<Var> {
    if q_list.is_empty() {
        return Err(Error::Domain("ladder needs at least one refinement iteration".into()));
    }
    let mut sum: Option<Var> = None;
    for &q in q_list {
        let h = nn::transformer(g, store, &adapter("light_trans"), tr_cfg(), q);
        let h = nn::linear(g, store, &adapter("reduce"), h);
        sum = Some(match sum {
            Some(s) => g.add(s, h),
            None => h,
        });
    }
    let x = sum.expect("nonempty list");
    let h = nn::layer_norm(g, store, &adapter("scalenet/ln1"), x);
    let w = g.param(store, &adapter("scalenet/time_mix"));
    let h = time_mix_g(g, w, h, WINDOW_LEN);
    let h = g.gelu(h);
    let x = g.add(x, h);
    let h = nn::layer_norm(g, store, &adapter("scalenet/ln2"), x);
    let h = nn::mlp(g, store, &adapter("scalenet/channel"), h);
    let x = g.add(x, h);
    let q_hat = nn::linear(g, store, &adapter("scalenet/out"), x);
    Ok(g.add(q_hat, delta_q))
}

// ---------------------------------------------------------------------------
// Energy maps, fusion and ensemble

/// One channel per point on the tracking grid: a unit-peak Gaussian at the
/// point's cell position for visible points, `1 − e` for invisible ones.
/// Coordinates outside the image are clamped to its border.
pub fn map_points_to_energy(
    coords: &[(f64, f64)],
    visible: &[bool],
    grid: usize,
    stride: usize,
    sigma: f64,
) -> Result<Tensor> {
    if coords.len() != visible.len() {
        return Err(Error::Shape(format!(
            "{} coordinates but {} visibility flags",
            coords.len(),
            visible.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("energy kernel width {sigma} must be positive")));
    }
    let size = (grid * stride) as f64;
    let s = stride as f64;
    let centres: Vec<(f64, f64)> = coords
        .iter()
        .map(|&(x, y)| {
            let (cx, cy) = (x.clamp(0.0, size), y.clamp(0.0, size));
            if (cx, cy) != (x, y) {
                log::debug!("point ({x:.1}, {y:.1}) clamped to the image border");
            }
            (cx / s - 0.5, cy / s - 0.5)
        })
        .collect();
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Tensor::from_fn(grid * grid, coords.len(), |cell, k| {
        let (i, j) = ((cell / grid) as f64, (cell % grid) as f64);
        let (u, v) = centres[k];
        let e = (-((j - u).powi(2) + (i - v).powi(2)) * inv).exp();
        if visible[k] {
            e
        } else {
            1.0 - e
        }
    }))
}

/// Projects the `[H·W, P]` energy stack to `C` channels, runs it jointly with
/// `z_cur` through the fusion transformer and returns `Ẽ` on the grid.
pub fn fuse_visibility_g(g: &mut Graph, store: &ParamStore, energy: Var, z: Var) -> Var {
    let cells = g.shape(z).0;
    let c = g.shape(z).1;
    let pos = g.param(store, &adapter("fuse/pos"));
    let ee = g.param(store, &adapter("fuse/energy_embed"));
    let fe = g.param(store, &adapter("fuse/feature_embed"));
    let e = nn::linear(g, store, &adapter("energy_proj"), energy);
    let e = g.add(e, pos);
    let e = g.add_row(e, ee);
    let f = g.add(z, pos);
    let f = g.add_row(f, fe);
    let x = g.concat_rows(&[e, f]);
    let y = nn::transformer(g, store, &adapter("fuse/tr"), TransformerCfg::new(c, HEADS, LAYERS), x);
    g.rows(y, 0, cells)
}

/// `z̃_cur = z_cur + MLP([Ẽ, z_cur])`; the MLP output layer starts at zero.
pub fn ensemble_g(g: &mut Graph, store: &ParamStore, e_tilde: Var, z: Var) -> Var {
    let x = g.concat_cols(&[e_tilde, z]);
    let d = nn::mlp(g, store, &adapter("ensemble"), x);
    g.add(z, d)
}

fn check_grid(profile: &Profile, what: &str, t: &Tensor, cols: usize) -> Result<()> {
    let want = (profile.cells(), cols);
    if t.shape() != want {
        return Err(Error::Shape(format!("{what}: expected {want:?}, got {:?}", t.shape())));
    }
    Ok(())
}

pub fn fuse_visibility(store: &ParamStore, profile: &Profile, energy: &Tensor, z: &Tensor) -> Result<Tensor> {
    check_grid(profile, "z_cur", z, profile.channels)?;
    if energy.rows() != profile.cells() {
        return Err(Error::Shape(format!(
            "energy stack has {} cells, expected {}",
            energy.rows(),
            profile.cells()
        )));
    }
    let mut g = Graph::inference();
    let e = g.constant(energy.clone());
    let zv = g.constant(z.clone());
    let out = fuse_visibility_g(&mut g, store, e, zv);
    Ok(g.value(out).clone())
}

pub fn ensemble(store: &ParamStore, profile: &Profile, e_tilde: &Tensor, z: &Tensor) -> Result<Tensor> {
    check_grid(profile, "z_cur", z, profile.channels)?;
    check_grid(profile, "visibility-aware features", e_tilde, profile.channels)?;
    let mut g = Graph::inference();
    let e = g.constant(e_tilde.clone());
    let zv = g.constant(z.clone());
    let out = ensemble_g(&mut g, store, e, zv);
    Ok(g.value(out).clone())
}

// ---------------------------------------------------------------------------
// Dual-supervision objective

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccuLambdas {
    pub cgot: f64,
    pub cpt: f64,
    pub rgot: f64,
    pub rpt: f64,
}

impl Default for OccuLambdas {
    fn default() -> Self {
        Self {
            cgot: 200.0,
            cpt: 100.0,
            rgot: 1.0,
            rpt: 0.5,
        }
    }
}

/// Unweighted components of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OccuLossParts {
    pub cls_pt: f64,
    pub reg_pt: f64,
    pub cls_got: f64,
    pub reg_got: f64,
}

impl OccuLossParts {
    pub fn weighted(&self, l: &OccuLambdas) -> [f64; 4] {
        [
            l.cpt * self.cls_pt,
            l.rpt * self.reg_pt,
            l.cgot * self.cls_got,
            l.rgot * self.reg_got,
        ]
    }

    pub fn total(&self, l: &OccuLambdas) -> f64 {
        self.weighted(l).iter().sum()
    }
}

/// Score and box losses of the decoders run on `Ẽ` and on `z̃_cur`.
pub struct OccuLossVars {
    pub total: Var,
    /// `[cls_pt, reg_pt, cls_got, reg_got]`, unweighted.
    pub parts: [Var; 4],
}

impl OccuLossVars {
    pub fn values(&self, g: &Graph) -> OccuLossParts {
        OccuLossParts {
            cls_pt: g.scalar(self.parts[0]),
            reg_pt: g.scalar(self.parts[1]),
            cls_got: g.scalar(self.parts[2]),
            reg_got: g.scalar(self.parts[3]),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn occusolver_loss_g(
    g: &mut Graph,
    store: &ParamStore,
    profile: &Profile,
    omega: Var,
    e_tilde: Var,
    z_tilde: Var,
    cls_target: &ScoreMapLabel,
    reg_target: &RegMapLabel,
    gt: &BBox,
    lambdas: &OccuLambdas,
) -> OccuLossVars {
    let y = cls_target.to_tensor();
    let mut parts = Vec::with_capacity(4);
    for z in [e_tilde, z_tilde] {
        let p = classify_g(g, omega, z);
        parts.push(hinge_cls_loss_g(g, p, &y, HINGE_THRESHOLD));
        let d = regress_g(g, store, profile, omega, z);
        let r = match reg_loss_g(g, d, reg_target, gt, profile.stride()) {
            Some(r) => r,
            None => g.constant(Tensor::scalar(0.0)),
        };
        parts.push(r);
    }
    let parts = [parts[0], parts[1], parts[2], parts[3]];
    let w = [lambdas.cpt, lambdas.rpt, lambdas.cgot, lambdas.rgot];
    let mut total = g.scale(parts[0], w[0]);
    for k in 1..4 {
        let t = g.scale(parts[k], w[k]);
        total = g.add(total, t);
    }
    OccuLossVars { total, parts }
}

// ---------------------------------------------------------------------------
// Whole-window estimation

/// Query points tracked through one window, with per-frame visibility.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTrackSet {
    pub num_points: usize,
    /// `[T·P, 2]` pixel coordinates, time-major.
    pub coords: Tensor,
    /// `[T·P, 1]` visibility probabilities.
    pub visibility: Tensor,
}

impl PointTrackSet {
    pub fn frames(&self) -> usize {
        self.coords.rows() / self.num_points
    }

    pub fn coord(&self, p: usize, t: usize) -> (f64, f64) {
        let r = t * self.num_points + p;
        (self.coords.get(r, 0), self.coords.get(r, 1))
    }

    pub fn prob(&self, p: usize, t: usize) -> f64 {
        self.visibility.get(t * self.num_points + p, 0)
    }

    pub fn frame_coords(&self, t: usize) -> Vec<(f64, f64)> {
        (0..self.num_points).map(|p| self.coord(p, t)).collect()
    }

    pub fn frame_visible(&self, t: usize) -> Vec<bool> {
        (0..self.num_points).map(|p| self.prob(p, t) > VIS_THRESHOLD).collect()
    }

    pub fn visible_fraction(&self, t: usize) -> f64 {
        let v = self.frame_visible(t);
        v.iter().filter(|&&b| b).count() as f64 / v.len() as f64
    }

    /// Structured-text dump: one line per point and frame.
    pub fn to_text(&self) -> String {
        let mut s = String::from("frame point x y visibility\n");
        for t in 0..self.frames() {
            for p in 0..self.num_points {
                let (x, y) = self.coord(p, t);
                s.push_str(&format!("{t} {p} {x:.3} {y:.3} {:.4}\n", self.prob(p, t)));
            }
        }
        s
    }
}

/// Inputs of one point-tracker window.
pub struct PointWindowInput<'a> {
    /// Point-feature maps of the eight window frames.
    pub features: &'a [Tensor],
    pub queries: &'a [(f64, f64)],
    /// `[T·P, 2]` starting coordinates.
    pub init: &'a Tensor,
    /// Label maps (`[H·W, 5]`) of the two object priors.
    pub priors: Option<&'a [Tensor; 2]>,
}

/// Which visibility path to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisibilityPath {
    /// The frozen tracker alone, with its own visibility head.
    Frozen,
    /// Prior-conditioned tracker with the ladder adapters and VisHead.
    Adapted,
}

pub fn estimate_points(
    store: &ParamStore,
    profile: &Profile,
    input: &PointWindowInput<'_>,
    path: VisibilityPath,
    iterations: usize,
) -> Result<PointTrackSet> {
    let mut g = Graph::inference();
    let mut feats: Vec<Var> = input.features.iter().map(|f| g.constant(f.clone())).collect();
    if path == VisibilityPath::Adapted {
        if let Some(priors) = input.priors {
            inject_window_priors_g(&mut g, store, profile, &mut feats, priors)?;
        }
    }
    let out = point_track_iterate_g(&mut g, store, &feats, input.queries, input.init, iterations)?;
    let vis = match path {
        VisibilityPath::Frozen => vis_head_g(&mut g, store, FROZEN, out.delta_q),
        VisibilityPath::Adapted => {
            let qc = ladder_refine_g(&mut g, store, &out.q_list, out.delta_q)?;
            vis_head_g(&mut g, store, ADAPTERS, qc)
        }
    };
    Ok(PointTrackSet {
        num_points: input.queries.len(),
        coords: out.final_coords,
        visibility: g.value(vis).clone(),
    })
}

/// `z̃_cur` for the current frame given its point coordinates and binary visibility.
pub fn refine_features(
    store: &ParamStore,
    profile: &Profile,
    coords: &[(f64, f64)],
    visible: &[bool],
    z: &Tensor,
) -> Result<Tensor> {
    let e = map_points_to_energy(coords, visible, profile.grid, profile.stride(), ENERGY_SIGMA)?;
    let e_tilde = fuse_visibility(store, profile, &e, z)?;
    ensemble(store, profile, &e_tilde, z)
}

// ---------------------------------------------------------------------------
// Training

/// Ground-truth positions and visibility of query points through a window.
pub struct PointTruth {
    pub coords: Tensor,
    pub visible: Vec<bool>,
}

pub fn ground_truth_tracks(scene: &SceneGeometry, frame_ids: &[usize], queries: &[(f64, f64)]) -> PointTruth {
    let p = queries.len();
    let t0 = frame_ids[0];
    let layers: Vec<_> = queries.iter().map(|&(x, y)| scene.layer_at(t0, x, y)).collect();
    let mut coords = Tensor::zeros(frame_ids.len() * p, 2);
    let mut visible = Vec::with_capacity(frame_ids.len() * p);
    for (t, &f) in frame_ids.iter().enumerate() {
        for (k, &q) in queries.iter().enumerate() {
            let ((x, y), v) = scene.track_point(layers[k], t0, q, f);
            coords.set(t * p + k, 0, x);
            coords.set(t * p + k, 1, y);
            visible.push(v);
        }
    }
    PointTruth { coords, visible }
}

fn jittered_boxes(boxes: &[BBox], sigma: f64, rng: &mut impl Rng) -> Vec<BBox> {
    let n = Normal::new(0.0, sigma.max(1e-12)).expect("valid std");
    boxes
        .iter()
        .enumerate()
        .map(|(t, b)| {
            if t == 0 || sigma == 0.0 {
                *b
            } else {
                b.translate(n.sample(rng), n.sample(rng))
            }
        })
        .collect()
}

/// Query points, truth and starting coordinates for a training window.
pub struct PointSample {
    pub queries: Vec<(f64, f64)>,
    pub truth: PointTruth,
    pub init: Tensor,
}

pub fn point_sample(w: &Window, profile: &Profile, points: usize, jitter: f64, rng: &mut impl Rng) -> Result<PointSample> {
    let boxes = jittered_boxes(&w.boxes, jitter, rng);
    point_sample_from_boxes(w, profile, points, &boxes, rng)
}

/// As [`point_sample`], with starting coordinates taken from `boxes` (one per window frame).
pub fn point_sample_from_boxes(
    w: &Window,
    profile: &Profile,
    points: usize,
    boxes: &[BBox],
    rng: &mut impl Rng,
) -> Result<PointSample> {
    let size = profile.image_size as f64;
    let b0 = w.boxes[0].clamp_to_image(size);
    let queries = sample_query_points(&b0, points, rng)?;
    let truth = ground_truth_tracks(&w.scene, &w.frame_ids, &queries);
    let init = init_from_boxes(&queries, boxes);
    Ok(PointSample { queries, truth, init })
}

fn visibility_targets(v: &[bool]) -> Tensor {
    Tensor::from_fn(v.len(), 1, |r, _| if v[r] { 1.0 } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointTrackerTraining {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub points: usize,
    pub iterations: usize,
    /// Std of the per-frame box-centre noise used for starting coordinates, in pixels.
    pub box_jitter: f64,
    /// Coordinate-loss weight of invisible points.
    pub invisible_weight: f64,
    pub seed: u64,
}

impl Default for PointTrackerTraining {
    fn default() -> Self {
        Self {
            steps: 300,
            batch: 2,
            lr: 1e-3,
            points: DEFAULT_POINTS,
            iterations: DEFAULT_ITERATIONS,
            box_jitter: 2.0,
            invisible_weight: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointTrackerStep {
    pub step: usize,
    /// Mean end-point error of the last iteration, in pixels.
    pub epe: f64,
    pub vis_bce: f64,
}

/// Trains the point tracker (`occusolver/frozen/*`) on synthetic tracks.
pub fn train_point_tracker(
    store: &mut ParamStore,
    profile: &Profile,
    cfg: &PointTrackerTraining,
    sampler: &mut WindowSampler,
) -> Result<Vec<PointTrackerStep>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::with_constant_lr(cfg.lr);
    let all: Vec<usize> = (0..WINDOW_LEN).collect();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut g = Graph::with_trainable(|n| n.starts_with(FROZEN));
        let mut losses = Vec::with_capacity(cfg.batch);
        let (mut epe, mut bce) = (0.0, 0.0);
        for _ in 0..cfg.batch {
            let w = sampler.next(&all);
            let s = point_sample(&w, profile, cfg.points, cfg.box_jitter, &mut rng)?;
            let feats: Vec<Var> = (0..WINDOW_LEN)
                .map(|t| {
                    let x = g.constant(w.frame(t).to_tensor());
                    point_features_g(&mut g, store, profile.image_size, x)
                })
                .collect();
            let out = point_track_iterate_g(&mut g, store, &feats, &s.queries, &s.init, cfg.iterations)?;
            let weights = Tensor::from_fn(s.truth.visible.len(), 2, |r, _| {
                if s.truth.visible[r] {
                    1.0
                } else {
                    cfg.invisible_weight
                }
            });
            let wv = g.constant(weights);
            let gt = g.constant(s.truth.coords.clone());
            let mut loss: Option<Var> = None;
            for (m, &c) in out.coords.iter().enumerate() {
                let d = g.sub(c, gt);
                let d = g.abs(d);
                let d = g.mul(d, wv);
                let l = g.mean(d);
                let l = g.scale(l, ITER_DISCOUNT.powi((cfg.iterations - 1 - m) as i32) / STEP_SCALE);
                loss = Some(match loss {
                    Some(a) => g.add(a, l),
                    None => l,
                });
            }
            let logits = vis_logits_g(&mut g, store, FROZEN, out.delta_q);
            let b = bce_with_logits_g(&mut g, logits, &visibility_targets(&s.truth.visible));
            bce += g.scalar(b);
            epe += (0..s.truth.visible.len())
                .map(|r| {
                    let dx = out.final_coords.get(r, 0) - s.truth.coords.get(r, 0);
                    let dy = out.final_coords.get(r, 1) - s.truth.coords.get(r, 1);
                    (dx * dx + dy * dy).sqrt()
                })
                .sum::<f64>()
                / s.truth.visible.len() as f64;
            losses.push(match loss {
                Some(l) => g.add(l, b),
                None => b,
            });
        }
        let total = g.concat_rows(&losses);
        let total = g.mean(total);
        let loss = g.scalar(total);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("point tracker loss {loss}"),
            });
        }
        let mut grads = g.backward(total).params();
        clip_grad_norm(&mut grads, 1.0);
        opt.step(store, &grads);
        log.push(PointTrackerStep {
            step,
            epe: epe / cfg.batch as f64,
            vis_bce: bce / cfg.batch as f64,
        });
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambdas: OccuLambdas,
    /// Weight of the VisHead cross-entropy against synthetic visibility.
    pub vis_weight: f64,
    pub points: usize,
    pub iterations: usize,
    /// Minimum target visibility at the head positions of sampled windows.
    pub min_visibility: f64,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            steps: 150,
            batch: 2,
            lr: 5e-4,
            lambdas: OccuLambdas::default(),
            vis_weight: 1.0,
            points: DEFAULT_POINTS,
            iterations: DEFAULT_ITERATIONS,
            min_visibility: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Step {
    pub step: usize,
    pub parts: OccuLossParts,
    pub total: f64,
    pub vis_bce: f64,
}

/// Tracking-head inputs of a window: `ω`, `z_cur` and current-frame labels.
struct HeadTargets {
    omega: Tensor,
    z: Tensor,
    cls: ScoreMapLabel,
    reg: RegMapLabel,
    gt: BBox,
    /// Head boxes for every window frame (the first is the given box), as the
    /// online tracker would place them.
    boxes: Vec<BBox>,
}

fn head_targets(store: &ParamStore, profile: &Profile, head: &HeadSpec, w: &Window) -> Result<HeadTargets> {
    let size = profile.image_size as f64;
    let r0 = encode_frame(store, profile, w.frame(REF_POSITIONS[0]))?;
    let r1 = encode_frame(store, profile, w.frame(REF_POSITIONS[1]))?;
    let mut refs = ReferenceSet::single(r0, &w.boxes[REF_POSITIONS[0]].clamp_to_image(size), profile)?;
    refs.set_second(r1, &w.boxes[REF_POSITIONS[1]].clamp_to_image(size), profile)?;
    let mut boxes = vec![w.boxes[0].clamp_to_image(size)];
    let mut last = None;
    for t in 1..WINDOW_LEN {
        let cur = encode_frame(store, profile, w.frame(t))?;
        let (omega, z) = head.predict_model(store, &refs, &cur)?;
        boxes.push(head_output(store, profile, &omega, &z)?.bbox.clamp_to_image(size));
        last = Some((omega, z));
    }
    let (omega, z) = last.expect("window has more than one frame");
    let gt = w.boxes[CUR_POSITION].clamp_to_image(size);
    let (cls, reg) = labels_for_box(&gt, profile)?;
    Ok(HeadTargets {
        omega,
        z,
        cls,
        reg,
        gt,
        boxes,
    })
}

fn window_priors(boxes: &[BBox], profile: &Profile) -> Result<[Tensor; 2]> {
    let size = profile.image_size as f64;
    let mk = |pos: usize| -> Result<Tensor> {
        let (c, r) = labels_for_box(&boxes[pos].clamp_to_image(size), profile)?;
        label_tensor(&c, &r)
    };
    Ok([mk(PRIOR_POSITIONS[0])?, mk(PRIOR_POSITIONS[1])?])
}

/// Trains the adapters (`occusolver/adapters/*`) with the tracking head and
/// point tracker frozen.
pub fn train_stage2(
    store: &mut ParamStore,
    profile: &Profile,
    head: &HeadSpec,
    cfg: &Stage2Config,
    sampler: &mut WindowSampler,
) -> Result<Vec<Stage2Step>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::with_constant_lr(cfg.lr);
    let all: Vec<usize> = (0..WINDOW_LEN).collect();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        opt.lr_scale = cosine_scale(step, cfg.steps);
        let mut g = Graph::with_trainable(|n| n.starts_with(ADAPTERS));
        let mut losses = Vec::with_capacity(cfg.batch);
        let mut parts = OccuLossParts::default();
        let mut bce = 0.0;
        for _ in 0..cfg.batch {
            let w = sampler.next(&all);
            let ht = head_targets(store, profile, head, &w)?;
            let s = point_sample_from_boxes(&w, profile, cfg.points, &ht.boxes, &mut rng)?;
            let priors = window_priors(&ht.boxes, profile)?;
            let mut feats: Vec<Var> = (0..WINDOW_LEN)
                .map(|t| g.constant(point_features(store, w.frame(t))))
                .collect();
            inject_window_priors_g(&mut g, store, profile, &mut feats, &priors)?;
            let out = point_track_iterate_g(&mut g, store, &feats, &s.queries, &s.init, cfg.iterations)?;
            let qc = ladder_refine_g(&mut g, store, &out.q_list, out.delta_q)?;
            let logits = vis_logits_g(&mut g, store, ADAPTERS, qc);
            let b = bce_with_logits_g(&mut g, logits, &visibility_targets(&s.truth.visible));
            bce += g.scalar(b);

            let p = s.queries.len();
            let last = CUR_POSITION * p;
            let coords: Vec<(f64, f64)> = (0..p)
                .map(|k| (out.final_coords.get(last + k, 0), out.final_coords.get(last + k, 1)))
                .collect();
            let probs = g.value(logits).clone();
            let visible: Vec<bool> = (0..p).map(|k| probs.get(last + k, 0) > 0.0).collect();
            let energy = map_points_to_energy(&coords, &visible, profile.grid, profile.stride(), ENERGY_SIGMA)?;
            let e = g.constant(energy);
            let z = g.constant(ht.z);
            let omega = g.constant(ht.omega);
            let e_tilde = fuse_visibility_g(&mut g, store, e, z);
            let z_tilde = ensemble_g(&mut g, store, e_tilde, z);
            let l = occusolver_loss_g(
                &mut g, store, profile, omega, e_tilde, z_tilde, &ht.cls, &ht.reg, &ht.gt, &cfg.lambdas,
            );
            let v = l.values(&g);
            parts.cls_pt += v.cls_pt / cfg.batch as f64;
            parts.reg_pt += v.reg_pt / cfg.batch as f64;
            parts.cls_got += v.cls_got / cfg.batch as f64;
            parts.reg_got += v.reg_got / cfg.batch as f64;
            let bw = g.scale(b, cfg.vis_weight);
            losses.push(g.add(l.total, bw));
        }
        let total = g.concat_rows(&losses);
        let total = g.mean(total);
        let tv = g.scalar(total);
        if !tv.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("stage-2 loss {tv}"),
            });
        }
        let mut grads = g.backward(total).params();
        clip_grad_norm(&mut grads, 1.0);
        opt.step(store, &grads);
        log.push(Stage2Step {
            step,
            total: parts.total(&cfg.lambdas),
            parts,
            vis_bce: bce / cfg.batch as f64,
        });
    }
    Ok(log)
}

/// Per-point visibility accuracy of both paths on `windows` held-out windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityAccuracy {
    pub adapted: f64,
    pub frozen: f64,
    pub tokens: usize,
    pub invisible_fraction: f64,
}

pub fn visibility_accuracy(
    store: &ParamStore,
    profile: &Profile,
    sampler: &mut WindowSampler,
    windows: usize,
    points: usize,
    seed: u64,
) -> Result<VisibilityAccuracy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..WINDOW_LEN).collect();
    let (mut ok_a, mut ok_f, mut n, mut inv) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..windows {
        let w = sampler.next(&all);
        let s = point_sample(&w, profile, points, 2.0, &mut rng)?;
        let feats: Vec<Tensor> = (0..WINDOW_LEN).map(|t| point_features(store, w.frame(t))).collect();
        let priors = window_priors(&w.boxes, profile)?;
        let input = PointWindowInput {
            features: &feats,
            queries: &s.queries,
            init: &s.init,
            priors: Some(&priors),
        };
        let a = estimate_points(store, profile, &input, VisibilityPath::Adapted, DEFAULT_ITERATIONS)?;
        let f = estimate_points(store, profile, &input, VisibilityPath::Frozen, DEFAULT_ITERATIONS)?;
        for (r, &truth) in s.truth.visible.iter().enumerate() {
            ok_a += ((a.visibility.get(r, 0) > VIS_THRESHOLD) == truth) as usize;
            ok_f += ((f.visibility.get(r, 0) > VIS_THRESHOLD) == truth) as usize;
            inv += (!truth) as usize;
            n += 1;
        }
    }
    Ok(VisibilityAccuracy {
        adapted: ok_a as f64 / n as f64,
        frozen: ok_f as f64 / n as f64,
        tokens: n,
        invisible_fraction: inv as f64 / n as f64,
    })
}
