use gotjepa_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FrameAttributes, ObjectSpec, ShapeKind, SynthConfig, SyntheticSequence};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Vertical overhang of an occluder beyond the target box, in pixels.
const OCCLUDER_MARGIN: f64 = 4.0;
const CHECKER_CELL: usize = 3;

/// Grayscale 8-bit frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    size: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(size: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape(format!(
                "frame of side {size} needs {} pixels, got {}",
                size * size,
                pixels.len()
            )));
        }
        Ok(Self { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Intensity in `[0, 1]`.
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.size + x] as f64 / 255.0
    }

    /// `[size², 1]` tensor of intensities in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(self.pixels.len(), 1, |i, _| self.pixels[i] as f64 / 255.0)
    }
}

#[derive(Clone, Debug)]
struct Texture {
    base: f64,
    amp: f64,
    freq: f64,
    dir: (f64, f64),
    phase: f64,
    amp2: f64,
    freq2: f64,
}

impl Texture {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        Self {
            base: rng.gen_range(0.2..0.8),
            amp: rng.gen_range(0.12..0.25),
            freq: rng.gen_range(0.15..0.6),
            dir: (theta.cos(), theta.sin()),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            amp2: rng.gen_range(0.0..0.1),
            freq2: rng.gen_range(0.2..0.8),
        }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let a = self.freq * (u * self.dir.0 + v * self.dir.1) + self.phase;
        let b = self.freq2 * (u * self.dir.1 - v * self.dir.0);
        (self.base + self.amp * a.sin() + self.amp2 * b.cos()).clamp(0.0, 1.0)
    }
}

struct Background {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Background {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
        let waves = (0..3)
            .map(|_| {
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let f = rng.gen_range(0.02..0.08);
                (
                    f * theta.cos(),
                    f * theta.sin(),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.03..0.08),
                )
            })
            .collect();
        Self { waves }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin())
            .sum();
        0.5 + s
    }
}

/// Layer a tracked point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointLayer {
    Target,
    Distractor(usize),
    Background,
}

#[derive(Clone, Debug)]
struct Placed {
    shape: ShapeKind,
    w: usize,
    h: usize,
    /// Integer top-left corner per frame.
    origin: Vec<(usize, usize)>,
}

impl Placed {
    fn bbox(&self, t: usize) -> BBox {
        let (x, y) = self.origin[t];
        BBox::raw(x as f64, y as f64, (x + self.w) as f64, (y + self.h) as f64)
    }

    /// Whether pixel `(x, y)` is covered at frame `t`.
    fn covers(&self, t: usize, x: usize, y: usize) -> bool {
        let (ox, oy) = self.origin[t];
        if x < ox || y < oy || x >= ox + self.w || y >= oy + self.h {
            return false;
        }
        match self.shape {
            ShapeKind::Rect => true,
            ShapeKind::Ellipse => {
                let u = (x - ox) as f64 + 0.5 - self.w as f64 / 2.0;
                let v = (y - oy) as f64 + 0.5 - self.h as f64 / 2.0;
                let a = self.w as f64 / 2.0;
                let b = self.h as f64 / 2.0;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
        }
    }

    fn covers_point(&self, t: usize, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && self.covers(t, x as usize, y as usize)
    }
}

fn trajectory(obj: &ObjectSpec, start: (f64, f64), frames: usize, size: usize) -> Placed {
    let w = obj.size.0.round() as usize;
    let h = obj.size.1.round() as usize;
    let max = ((size - w) as f64, (size - h) as f64);
    let (mut px, mut py) = start;
    let (mut vx, mut vy) = obj.velocity;
    let mut origin = Vec::with_capacity(frames);
    for _ in 0..frames {
        origin.push((px.round() as usize, py.round() as usize));
        px += vx;
        py += vy;
        if px < 0.0 {
            px = -px;
            vx = -vx;
        }
        if px > max.0 {
            px = 2.0 * max.0 - px;
            vx = -vx;
        }
        if py < 0.0 {
            py = -py;
            vy = -vy;
        }
        if py > max.1 {
            py = 2.0 * max.1 - py;
            vy = -vy;
        }
        px = px.clamp(0.0, max.0);
        py = py.clamp(0.0, max.1);
    }
    Placed {
        shape: obj.shape,
        w,
        h,
        origin,
    }
}

/// Frame-by-frame layout of every object, independent of pixel rendering.
#[derive(Clone, Debug)]
pub struct SceneGeometry {
    size: usize,
    grid: usize,
    target: Placed,
    distractors: Vec<Placed>,
    /// Per frame, the active occluder boxes in config order.
    occluders: Vec<Vec<BBox>>,
    /// Config index of each entry in `occluders`.
    occluder_ids: Vec<Vec<usize>>,
}

impl SceneGeometry {
    fn build(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbb67_ae85_84ca_a73b);
        let size = cfg.image_size;
        let mut place = |obj: &ObjectSpec| {
            let start = obj.start.unwrap_or_else(|| {
                let w = obj.size.0.round();
                let h = obj.size.1.round();
                (
                    rng.gen_range(0.0..=size as f64 - w).floor(),
                    rng.gen_range(0.0..=size as f64 - h).floor(),
                )
            });
            trajectory(obj, start, cfg.num_frames, size)
        };
        let target = place(&cfg.target);
        let distractors: Vec<Placed> = cfg.distractors.iter().map(&mut place).collect();
        let placed: Vec<Vec<(usize, BBox)>> = (0..cfg.num_frames)
            .map(|t| {
                let tb = target.bbox(t);
                cfg.occluders
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.enter_frame <= t && t < o.exit_frame)
                    .filter_map(|(k, o)| {
                        let cols = (o.coverage * target.w as f64).round();
                        if cols <= 0.0 {
                            return None;
                        }
                        let from_left = (cfg.seed.wrapping_add(k as u64)) % 2 == 0;
                        let (x0, x1) = if from_left {
                            (tb.x0, tb.x0 + cols)
                        } else {
                            (tb.x1 - cols, tb.x1)
                        };
                        let y0 = (tb.y0 - OCCLUDER_MARGIN).max(0.0);
                        let y1 = (tb.y1 + OCCLUDER_MARGIN).min(size as f64);
                        Some((k, BBox::raw(x0, y0, x1, y1)))
                    })
                    .collect()
            })
            .collect();
        Self {
            size,
            grid: cfg.grid_size,
            target,
            distractors,
            occluders: placed
                .iter()
                .map(|f| f.iter().map(|&(_, b)| b).collect())
                .collect(),
            occluder_ids: placed
                .iter()
                .map(|f| f.iter().map(|&(k, _)| k).collect())
                .collect(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.occluders.len()
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    pub fn target_box(&self, t: usize) -> BBox {
        self.target.bbox(t)
    }

    pub fn distractor_boxes(&self, t: usize) -> Vec<BBox> {
        self.distractors.iter().map(|d| d.bbox(t)).collect()
    }

    pub fn occluder_boxes(&self, t: usize) -> &[BBox] {
        &self.occluders[t]
    }

    fn occluded_at(&self, t: usize, x: f64, y: f64) -> bool {
        self.occluders[t].iter().any(|b| b.contains_point(x, y))
    }

    pub fn on_target(&self, t: usize, x: usize, y: usize) -> bool {
        self.target.covers(t, x, y)
    }

    /// Visible fraction of the target's pixels at frame `t`.
    pub fn target_visibility(&self, t: usize) -> f64 {
        let b = self.target.bbox(t);
        let (mut total, mut covered) = (0usize, 0usize);
        for y in b.y0 as usize..b.y1 as usize {
            for x in b.x0 as usize..b.x1 as usize {
                if self.target.covers(t, x, y) {
                    total += 1;
                    if self.occluded_at(t, x as f64 + 0.5, y as f64 + 0.5) {
                        covered += 1;
                    }
                }
            }
        }
        1.0 - covered as f64 / total as f64
    }

    /// Row-major flags for grid cells whose centre pixel lies on the target.
    pub fn target_cells(&self, t: usize) -> Vec<bool> {
        let s = self.size / self.grid;
        (0..self.grid * self.grid)
            .map(|c| {
                let (i, j) = (c / self.grid, c % self.grid);
                self.target.covers(t, j * s + s / 2, i * s + s / 2)
            })
            .collect()
    }

    fn attributes(&self, t: usize) -> FrameAttributes {
        let tb = self.target.bbox(t);
        let (cx, cy) = tb.center();
        let near = self.distractors.iter().any(|d| {
            let (dx, dy) = d.bbox(t).center();
            (dx - cx).hypot(dy - cy) < tb.diagonal()
        });
        FrameAttributes {
            occluded: self.target_visibility(t) < 1.0,
            distractor_near: near,
        }
    }

    /// Top-most layer under pixel position `(x, y)` at frame `t`, ignoring occluders.
    pub fn layer_at(&self, t: usize, x: f64, y: f64) -> PointLayer {
        if self.target.covers_point(t, x, y) {
            return PointLayer::Target;
        }
        for (i, d) in self.distractors.iter().enumerate().rev() {
            if d.covers_point(t, x, y) {
                return PointLayer::Distractor(i);
            }
        }
        PointLayer::Background
    }

    /// Position at frame `t` of a point that sat at `p` on `layer` at frame `t0`,
    /// and whether it is visible there.
    pub fn track_point(
        &self,
        layer: PointLayer,
        t0: usize,
        p: (f64, f64),
        t: usize,
    ) -> ((f64, f64), bool) {
        let shift = |placed: &Placed| {
            let (a, b) = (placed.origin[t0], placed.origin[t]);
            (
                p.0 + b.0 as f64 - a.0 as f64,
                p.1 + b.1 as f64 - a.1 as f64,
            )
        };
        let pos = match layer {
            PointLayer::Target => shift(&self.target),
            PointLayer::Distractor(i) => shift(&self.distractors[i]),
            PointLayer::Background => p,
        };
        let (x, y) = pos;
        let size = self.size as f64;
        let inside = x >= 0.0 && y >= 0.0 && x < size && y < size;
        let visible = inside
            && !self.occluded_at(t, x, y)
            && match layer {
                PointLayer::Target => true,
                PointLayer::Distractor(i) => {
                    !self.target.covers_point(t, x, y)
                        && !self.distractors[i + 1..]
                            .iter()
                            .any(|d| d.covers_point(t, x, y))
                }
                PointLayer::Background => self.layer_at(t, x, y) == PointLayer::Background,
            };
        (pos, visible)
    }
}

/// Renders frames of one configuration on demand.
pub struct SequenceGenerator {
    cfg: SynthConfig,
    geometry: SceneGeometry,
    background: Background,
    target_tex: Texture,
    distractor_tex: Vec<Texture>,
    occluder_levels: Vec<(f64, f64)>,
}

impl SequenceGenerator {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3c6e_f372_fe94_f82b);
        let occluder_levels = cfg
            .occluders
            .iter()
            .map(|_| {
                let a = rng.gen_range(0.05..0.35);
                (a, a + rng.gen_range(0.4..0.6))
            })
            .collect();
        Ok(Self {
            geometry: SceneGeometry::build(cfg),
            background: Background::from_seed(cfg.seed),
            target_tex: Texture::from_seed(cfg.target.texture_seed),
            distractor_tex: cfg
                .distractors
                .iter()
                .map(|d| Texture::from_seed(d.texture_seed))
                .collect(),
            occluder_levels,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &SceneGeometry {
        &self.geometry
    }

    pub fn num_frames(&self) -> usize {
        self.cfg.num_frames
    }

    pub fn render(&self, t: usize) -> Frame {
        let size = self.cfg.image_size;
        let g = &self.geometry;
        let noise_seed = self.cfg.seed ^ (t as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = Normal::new(0.0, self.cfg.noise_std.max(1e-12)).expect("validated std");
        let active: Vec<(usize, BBox)> = g.occluder_ids[t]
            .iter()
            .copied()
            .zip(g.occluders[t].iter().copied())
            .collect();
        let mut pixels = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut v = None;
                for &(k, b) in active.iter().rev() {
                    if b.contains_point(fx, fy) {
                        let cx = (fx - b.x0) as usize / CHECKER_CELL;
                        let cy = (fy - b.y0) as usize / CHECKER_CELL;
                        let (lo, hi) = self.occluder_levels[k];
                        v = Some(if (cx + cy) % 2 == 0 { lo } else { hi });
                        break;
                    }
                }
                if v.is_none() && g.target.covers(t, x, y) {
                    let (ox, oy) = g.target.origin[t];
                    v = Some(self.target_tex.sample(fx - ox as f64, fy - oy as f64));
                }
                if v.is_none() {
                    for (d, tex) in g.distractors.iter().zip(&self.distractor_tex).rev() {
                        if d.covers(t, x, y) {
                            let (ox, oy) = d.origin[t];
                            v = Some(tex.sample(fx - ox as f64, fy - oy as f64));
                            break;
                        }
                    }
                }
                let base = v.unwrap_or_else(|| self.background.sample(fx, fy));
                let n = if self.cfg.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                pixels.push(((base + n).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        Frame { size, pixels }
    }

    pub fn full_sequence(&self) -> SyntheticSequence {
        let n = self.cfg.num_frames;
        let g = &self.geometry;
        SyntheticSequence {
            config: self.cfg.clone(),
            frames: (0..n).map(|t| self.render(t)).collect(),
            gt_boxes: (0..n).map(|t| g.target_box(t)).collect(),
            gt_target_mask: (0..n).map(|t| g.target_cells(t)).collect(),
            gt_point_visibility: (0..n).map(|t| g.target_visibility(t)).collect(),
            attributes: (0..n).map(|t| g.attributes(t)).collect(),
            occluder_boxes: (0..n).map(|t| g.occluder_boxes(t).to_vec()).collect(),
            distractor_boxes: (0..n).map(|t| g.distractor_boxes(t)).collect(),
        }
    }
}

impl SyntheticSequence {
    pub fn scene(&self) -> SceneGeometry {
        SceneGeometry::build(&self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{generate_sequence, random_config, OccluderSpec, Scenario};
    use super::*;
    use crate::profile::Profile;
    use proptest::prelude::*;

    fn rect_cfg(coverage: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            image_size: 126,
            grid_size: 9,
            num_frames: 8,
            target: ObjectSpec {
                shape: ShapeKind::Rect,
                texture_seed: 1,
                size: (31.0, 27.0),
                velocity: (0.7, -0.4),
                start: Some((40.0, 50.0)),
            },
            distractors: vec![],
            occluders: vec![OccluderSpec {
                enter_frame: 2,
                exit_frame: 5,
                coverage,
            }],
            noise_std: 0.0,
            seed,
        }
    }

    proptest! {
        #[test]
        fn visibility_matches_area_formula(coverage in 0.0f64..=1.0, seed in 0u64..1000) {
            let cfg = rect_cfg(coverage, seed);
            let g = SceneGeometry::build(&cfg);
            for t in 0..cfg.num_frames {
                let tb = g.target_box(t);
                let covered: f64 = g.occluder_boxes(t).iter().map(|o| o.intersection_area(&tb)).sum();
                let expected = 1.0 - covered / tb.area();
                prop_assert!((g.target_visibility(t) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn visibility_counts_pixels_of_rendered_layers() {
        let mut cfg = rect_cfg(0.4, 5);
        cfg.noise_std = 0.0;
        let gen = SequenceGenerator::new(&cfg).unwrap();
        let g = gen.geometry();
        for t in 0..cfg.num_frames {
            let tb = g.target_box(t);
            let mut total = 0;
            let mut hidden = 0;
            for y in tb.y0 as usize..tb.y1 as usize {
                for x in tb.x0 as usize..tb.x1 as usize {
                    total += 1;
                    if g.occluder_boxes(t)
                        .iter()
                        .any(|o| o.contains_point(x as f64 + 0.5, y as f64 + 0.5))
                    {
                        hidden += 1;
                    }
                }
            }
            let brute = 1.0 - hidden as f64 / total as f64;
            assert_eq!(brute, g.target_visibility(t));
        }
    }

    #[test]
    fn target_points_follow_the_box() {
        let cfg = rect_cfg(0.0, 1);
        let g = SceneGeometry::build(&cfg);
        let b0 = g.target_box(0);
        let p = (b0.x0 + 3.0, b0.y0 + 4.0);
        for t in 0..cfg.num_frames {
            let ((x, y), vis) = g.track_point(PointLayer::Target, 0, p, t);
            let bt = g.target_box(t);
            assert_eq!((x - bt.x0, y - bt.y0), (3.0, 4.0));
            assert!(vis);
        }
    }

    #[test]
    fn background_points_hide_behind_the_target() {
        let cfg = rect_cfg(0.0, 1);
        let g = SceneGeometry::build(&cfg);
        let b = g.target_box(3);
        let (_, vis) = g.track_point(PointLayer::Background, 0, (b.x0 + 1.0, b.y0 + 1.0), 3);
        assert!(!vis);
        let (_, vis) = g.track_point(PointLayer::Background, 0, (1.0, 1.0), 3);
        assert!(vis);
    }

    #[test]
    fn rendered_frames_match_lazy_rendering() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = random_config(&Profile::small(), Scenario::Train, &mut rng);
        let seq = generate_sequence(&cfg).unwrap();
        let gen = SequenceGenerator::new(&cfg).unwrap();
        assert_eq!(gen.render(17), seq.frames[17]);
    }

    #[test]
    fn target_cells_lie_inside_the_box() {
        let cfg = rect_cfg(0.0, 1);
        let g = SceneGeometry::build(&cfg);
        let cells = g.target_cells(0);
        assert!(cells.iter().any(|&c| c));
        let b = g.target_box(0);
        for (c, &on) in cells.iter().enumerate() {
            let (i, j) = (c / 9, c % 9);
            let (cx, cy) = (j as f64 * 14.0 + 7.0, i as f64 * 14.0 + 7.0);
            assert_eq!(on, b.contains_point(cx, cy));
        }
    }
}
