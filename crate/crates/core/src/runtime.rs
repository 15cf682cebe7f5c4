//! Online tracking: reference management, the point-tracker FIFO window with
//! its occlusion rules, and per-frame box prediction.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::rc::Rc;

use gotjepa_autodiff::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WINDOW_LEN;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::occusolver::{
    estimate_points, init_from_boxes, place_points, point_features, refine_features,
    sample_relative_points, PointTrackSet, PointWindowInput, VisibilityPath, DEFAULT_ITERATIONS,
    DEFAULT_POINTS,
};
use crate::profile::Profile;
use crate::synthdata::Frame;
use crate::trackhead::{
    encode_frame, head_output, label_tensor, labels_for_box, HeadSpec, ReferenceSet, REGDEC,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeConfig {
    /// Every `frame_step`-th frame enters the point-tracker window.
    pub frame_step: usize,
    /// Visible-point fraction required before visibility fusion is enabled.
    pub visibility_init: f64,
    /// Peak score required to accept a prediction as the rolling reference.
    pub confidence: f64,
    /// Visible fractions below this mark a frame as occluded.
    pub occluded_below: f64,
    pub points: usize,
    pub iterations: usize,
    /// Consecutive low-visibility windows before the query points are redrawn.
    pub resample_after: usize,
    /// Also withhold reference updates on frames predicted occluded.
    pub gate_references_on_visibility: bool,
    pub seed: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            frame_step: 8,
            visibility_init: 0.85,
            confidence: 0.5,
            occluded_below: 0.5,
            points: DEFAULT_POINTS,
            iterations: DEFAULT_ITERATIONS,
            resample_after: 3,
            gate_references_on_visibility: true,
            seed: 0,
        }
    }
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_step == 0 {
            return Err(Error::config("frame_step", "must be at least 1"));
        }
        for (name, v) in [
            ("visibility_init", self.visibility_init),
            ("occluded_below", self.occluded_below),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("{v} is outside [0, 1]")));
            }
        }
        if self.points == 0 {
            return Err(Error::config("points", "must be at least 1"));
        }
        Ok(())
    }
}

/// One frame held in the point-tracker window.
#[derive(Clone, Debug)]
pub struct FifoEntry {
    pub frame_id: usize,
    pub frame: Rc<Frame>,
    /// Box predicted for this frame.
    pub bbox: BBox,
}

/// Source of per-point visibility for a window.
pub trait PointVisibility {
    /// Tracks `queries` (placed in the first window frame) through `window`.
    /// `prior_boxes` are the object priors for the first and middle frames.
    fn estimate(
        &mut self,
        window: &[FifoEntry],
        queries: &[(f64, f64)],
        prior_boxes: [BBox; 2],
    ) -> Result<PointTrackSet>;
}

/// The prior-conditioned point tracker with its adapters.
pub struct OccuSolverVisibility<'a> {
    store: &'a ParamStore,
    profile: Profile,
    iterations: usize,
    cache: HashMap<usize, Rc<Tensor>>,
}

impl<'a> OccuSolverVisibility<'a> {
    pub fn new(store: &'a ParamStore, profile: Profile, iterations: usize) -> Self {
        Self {
            store,
            profile,
            iterations,
            cache: HashMap::new(),
        }
    }

    fn features(&mut self, e: &FifoEntry) -> Rc<Tensor> {
        let store = self.store;
        self.cache
            .entry(e.frame_id)
            .or_insert_with(|| Rc::new(point_features(store, &e.frame)))
            .clone()
    }
}

impl PointVisibility for OccuSolverVisibility<'_> {
    fn estimate(
        &mut self,
        window: &[FifoEntry],
        queries: &[(f64, f64)],
        prior_boxes: [BBox; 2],
    ) -> Result<PointTrackSet> {
        let ids: Vec<usize> = window.iter().map(|e| e.frame_id).collect();
        self.cache.retain(|k, _| ids.contains(k));
        let feats: Vec<Tensor> = window.iter().map(|e| (*self.features(e)).clone()).collect();
        let boxes: Vec<BBox> = window.iter().map(|e| e.bbox).collect();
        let init = init_from_boxes(queries, &boxes);
        let size = self.profile.image_size as f64;
        let prior = |b: &BBox| -> Result<Tensor> {
            let (c, r) = labels_for_box(&b.clamp_to_image(size), &self.profile)?;
            label_tensor(&c, &r)
        };
        let priors = [prior(&prior_boxes[0])?, prior(&prior_boxes[1])?];
        let input = PointWindowInput {
            features: &feats,
            queries,
            init: &init,
            priors: Some(&priors),
        };
        estimate_points(self.store, &self.profile, &input, VisibilityPath::Adapted, self.iterations)
    }
}

/// Visibility estimate carried between window updates.
#[derive(Clone, Debug)]
struct Estimate {
    coords: Vec<(f64, f64)>,
    visible: Vec<bool>,
    fraction: f64,
    /// Box the coordinates were measured against.
    anchor: BBox,
}

pub struct TrackerState {
    pub reference_set: ReferenceSet,
    /// Frame ids held by the two reference slots.
    pub reference_ids: [usize; 2],
    fifo: VecDeque<FifoEntry>,
    last_unoccluded: FifoEntry,
    /// Query points as positions in the unit square of the window's first box.
    relative_points: Vec<(f64, f64)>,
    last_confident_box: BBox,
    pub occusolver_active: bool,
    estimate: Option<Estimate>,
    low_visibility_windows: usize,
    frame_index: usize,
    prev_box: BBox,
    rng: ChaCha8Rng,
    pub resamples: usize,
}

impl TrackerState {
    pub fn fifo_frame_ids(&self) -> Vec<usize> {
        self.fifo.iter().map(|e| e.frame_id).collect()
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }
}

/// Per-frame tracker output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub bbox: BBox,
    pub peak_score: f64,
    pub visible_fraction: f64,
    pub occusolver_active: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub records: Vec<FrameRecord>,
}

const RESULT_HEADER: &str = "frame x0 y0 x1 y1 peak_score visible_fraction occusolver_active";

impl TrackResult {
    pub fn boxes(&self) -> Vec<BBox> {
        self.records.iter().map(|r| r.bbox).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{RESULT_HEADER}\n");
        for r in &self.records {
            let [x0, y0, x1, y1] = r.bbox.as_array();
            writeln!(
                s,
                "{} {x0:?} {y0:?} {x1:?} {y1:?} {:?} {:?} {}",
                r.frame, r.peak_score, r.visible_fraction, r.occusolver_active as u8
            )
            .expect("write to string");
        }
        s
    }

    pub fn from_text(text: &str, file: &std::path::Path) -> Result<Self> {
        let parse = |line: usize, detail: String| Error::Parse {
            file: file.to_path_buf(),
            detail: format!("line {line}: {detail}"),
        };
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("frame") {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 {
                return Err(parse(i + 1, format!("expected 8 fields, found {}", f.len())));
            }
            let num = |k: usize, name: &str| -> Result<f64> {
                f[k].parse()
                    .map_err(|_| parse(i + 1, format!("field `{name}` is not a number: {}", f[k])))
            };
            let frame = f[0]
                .parse()
                .map_err(|_| parse(i + 1, format!("field `frame` is not an index: {}", f[0])))?;
            records.push(FrameRecord {
                frame,
                bbox: BBox::raw(num(1, "x0")?, num(2, "y0")?, num(3, "x1")?, num(4, "y1")?),
                peak_score: num(5, "peak_score")?,
                visible_fraction: num(6, "visible_fraction")?,
                occusolver_active: num(7, "occusolver_active")? != 0.0,
            });
        }
        Ok(Self { records })
    }
}

/// Online tracker over one sequence at a time.
pub struct Tracker<'a> {
    store: &'a ParamStore,
    profile: Profile,
    head: HeadSpec,
    cfg: RuntimeConfig,
    visibility: Option<Box<dyn PointVisibility + 'a>>,
    state: Option<TrackerState>,
}

impl<'a> Tracker<'a> {
    /// Tracker without visibility fusion.
    pub fn plain(store: &'a ParamStore, profile: Profile, head: HeadSpec, cfg: RuntimeConfig) -> Result<Self> {
        cfg.validate()?;
        check_head_params(store, &head)?;
        Ok(Self {
            store,
            profile,
            head,
            cfg,
            visibility: None,
            state: None,
        })
    }

    /// Tracker with point visibility from `visibility`.
    pub fn with_visibility(
        store: &'a ParamStore,
        profile: Profile,
        head: HeadSpec,
        cfg: RuntimeConfig,
        visibility: Box<dyn PointVisibility + 'a>,
    ) -> Result<Self> {
        let mut t = Self::plain(store, profile, head, cfg)?;
        t.visibility = Some(visibility);
        Ok(t)
    }

    /// Tracker with the trained OccuSolver from `store`.
    pub fn full(store: &'a ParamStore, profile: Profile, head: HeadSpec, cfg: RuntimeConfig) -> Result<Self> {
        if !store.contains("occusolver/adapters/vis_head/fc1/w") {
            return Err(Error::Init("OccuSolver adapter parameters are missing".into()));
        }
        let vis = OccuSolverVisibility::new(store, profile, cfg.iterations);
        Self::with_visibility(store, profile, head, cfg, Box::new(vis))
    }

    pub fn state(&self) -> Option<&TrackerState> {
        self.state.as_ref()
    }

    fn estimate(&mut self, window: &[FifoEntry], rel: &[(f64, f64)], middle_prior: BBox) -> Result<Option<Estimate>> {
        let Some(vis) = self.visibility.as_mut() else {
            return Ok(None);
        };
        let first = window[0].bbox;
        let queries = place_points(rel, &first);
        let set = vis.estimate(window, &queries, [first, middle_prior])?;
        let t = set.frames() - 1;
        Ok(Some(Estimate {
            coords: set.frame_coords(t),
            visible: set.frame_visible(t),
            fraction: set.visible_fraction(t),
            anchor: window[window.len() - 1].bbox,
        }))
    }

    /// Starts tracking `init_box` in `frame`; returns the record for frame 0.
    pub fn init(&mut self, frame: &Frame, init_box: &BBox) -> Result<FrameRecord> {
        init_box.validate()?;
        let size = self.profile.image_size as f64;
        if !init_box.inside_image(size) || init_box.width() <= 0.0 || init_box.height() <= 0.0 {
            return Err(Error::Domain(format!(
                "initial box {init_box:?} is empty or leaves the {size}-pixel image"
            )));
        }
        let features = encode_frame(self.store, &self.profile, frame)?;
        let reference_set = ReferenceSet::single(features, init_box, &self.profile)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let relative_points = sample_relative_points(self.cfg.points, &mut rng);
        let entry = FifoEntry {
            frame_id: 0,
            frame: Rc::new(frame.clone()),
            bbox: *init_box,
        };
        let fifo: VecDeque<FifoEntry> = std::iter::repeat(entry.clone()).take(WINDOW_LEN).collect();
        let window: Vec<FifoEntry> = fifo.iter().cloned().collect();
        let estimate = self.estimate(&window, &relative_points, *init_box)?;
        let active = estimate
            .as_ref()
            .is_some_and(|e| e.fraction >= self.cfg.visibility_init);
        let fraction = estimate.as_ref().map_or(1.0, |e| e.fraction);
        self.state = Some(TrackerState {
            reference_set,
            reference_ids: [0, 0],
            fifo,
            last_unoccluded: entry,
            relative_points,
            last_confident_box: *init_box,
            occusolver_active: active,
            estimate,
            low_visibility_windows: 0,
            frame_index: 0,
            prev_box: *init_box,
            rng,
            resamples: 0,
        });
        Ok(FrameRecord {
            frame: 0,
            bbox: *init_box,
            peak_score: 1.0,
            visible_fraction: fraction,
            occusolver_active: active,
        })
    }

    /// Tracks the next frame.
    pub fn step(&mut self, frame: &Frame) -> Result<FrameRecord> {
        let mut st = self
            .state
            .take()
            .ok_or_else(|| Error::State("tracker stepped before init".into()))?;
        let out = self.step_inner(&mut st, frame);
        self.state = Some(st);
        out
    }

    fn step_inner(&mut self, st: &mut TrackerState, frame: &Frame) -> Result<FrameRecord> {
        let t = st.frame_index + 1;
        let size = self.profile.image_size as f64;
        let cur = encode_frame(self.store, &self.profile, frame)?;
        let (omega, z) = self.head.predict_model(self.store, &st.reference_set, &cur)?;
        let plain = head_output(self.store, &self.profile, &omega, &z)?;
        let plain_box = plain.bbox.clamp_to_image(size);

        if self.visibility.is_some() && t % self.cfg.frame_step == 0 {
            let entry = FifoEntry {
                frame_id: t,
                frame: Rc::new(frame.clone()),
                bbox: plain_box,
            };
            let mut window: Vec<FifoEntry> = st.fifo.iter().skip(1).cloned().collect();
            window.push(entry.clone());
            let est = self
                .estimate(&window, &st.relative_points, st.last_confident_box)?
                .expect("visibility source present");
            if !st.occusolver_active && est.fraction >= self.cfg.visibility_init {
                st.occusolver_active = true;
            }
            st.fifo.pop_front();
            if est.fraction < self.cfg.occluded_below {
                st.fifo.push_back(st.last_unoccluded.clone());
                st.low_visibility_windows += 1;
            } else {
                st.fifo.push_back(entry.clone());
                st.last_unoccluded = entry;
                st.low_visibility_windows = 0;
            }
            if st.low_visibility_windows >= self.cfg.resample_after {
                st.relative_points = sample_relative_points(self.cfg.points, &mut st.rng);
                st.low_visibility_windows = 0;
                st.resamples += 1;
            }
            st.estimate = Some(est);
        }

        let mut fraction = st.estimate.as_ref().map_or(1.0, |e| e.fraction);
        let out = match (&st.estimate, st.occusolver_active) {
            (Some(est), true) => {
                let (ax, ay) = est.anchor.center();
                let (bx, by) = plain_box.center();
                let coords: Vec<(f64, f64)> =
                    est.coords.iter().map(|&(x, y)| (x + bx - ax, y + by - ay)).collect();
                let zt = refine_features(self.store, &self.profile, &coords, &est.visible, &z)?;
                head_output(self.store, &self.profile, &omega, &zt)?
            }
            _ => plain,
        };
        if self.visibility.is_none() {
            fraction = 1.0;
        }
        let bbox = out.bbox.clamp_to_image(size);
        let occluded = st.occusolver_active && fraction < self.cfg.occluded_below;
        if out.peak_score >= self.cfg.confidence && !(self.cfg.gate_references_on_visibility && occluded) {
            st.reference_set.set_second(cur, &bbox, &self.profile)?;
            st.reference_ids[1] = t;
            st.last_confident_box = bbox;
        }
        st.prev_box = bbox;
        st.frame_index = t;
        Ok(FrameRecord {
            frame: t,
            bbox,
            peak_score: out.peak_score,
            visible_fraction: fraction,
            occusolver_active: st.occusolver_active,
        })
    }

    /// Tracks a whole sequence from its first-frame box.
    pub fn run(&mut self, frames: &[Frame], init_box: &BBox) -> Result<TrackResult> {
        let Some(first) = frames.first() else {
            return Err(Error::Domain("cannot track an empty sequence".into()));
        };
        let mut records = Vec::with_capacity(frames.len());
        records.push(self.init(first, init_box)?);
        for f in &frames[1..] {
            records.push(self.step(f)?);
        }
        Ok(TrackResult { records })
    }
}

fn check_head_params(store: &ParamStore, head: &HeadSpec) -> Result<()> {
    let probe = format!("{}/predictor/query", head.root);
    if !store.contains(&probe) || store.with_prefix(REGDEC).next().is_none() {
        return Err(Error::Init(format!(
            "tracking-head parameters under `{}` are missing",
            head.root
        )));
    }
    if let Some(p) = &head.projnet {
        if !store.contains(&format!("{p}/w")) {
            return Err(Error::Init(format!("projection `{p}` is missing")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_sequence, random_config, Scenario};
    use crate::occusolver::{init_adapters, init_point_tracker};
    use crate::trackhead::init_tracker;
    use std::cell::RefCell;

    /// Reports a scripted visible fraction for the newest window frame and
    /// records each window it is shown.
    struct Scripted {
        fraction: Box<dyn Fn(usize) -> f64>,
        seen: Rc<RefCell<Vec<Vec<usize>>>>,
    }

    impl PointVisibility for Scripted {
        fn estimate(&mut self, window: &[FifoEntry], queries: &[(f64, f64)], _: [BBox; 2]) -> Result<PointTrackSet> {
            let ids: Vec<usize> = window.iter().map(|e| e.frame_id).collect();
            let newest = *ids.last().unwrap();
            self.seen.borrow_mut().push(ids);
            let p = queries.len();
            let visible = ((self.fraction)(newest) * p as f64).round() as usize;
            let t_len = window.len();
            Ok(PointTrackSet {
                num_points: p,
                coords: Tensor::from_fn(t_len * p, 2, |r, c| if c == 0 { queries[r % p].0 } else { queries[r % p].1 }),
                visibility: Tensor::from_fn(t_len * p, 1, |r, _| if r % p < visible { 0.9 } else { 0.1 }),
            })
        }
    }

    fn setup() -> (ParamStore, Profile, Vec<Frame>, BBox) {
        let profile = Profile::small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        init_tracker(&mut store, &profile, &mut rng);
        init_point_tracker(&mut store, &mut rng);
        init_adapters(&mut store, &profile, DEFAULT_POINTS, &mut rng).unwrap();
        let cfg = random_config(&profile, Scenario::Standard, &mut rng);
        let seq = generate_sequence(&cfg).unwrap();
        (store, profile, seq.frames, seq.gt_boxes[0])
    }

    fn scripted(f: impl Fn(usize) -> f64 + 'static) -> (Box<Scripted>, Rc<RefCell<Vec<Vec<usize>>>>) {
        let seen = Rc::new(RefCell::new(Vec::new()));
        (
            Box::new(Scripted {
                fraction: Box::new(f),
                seen: seen.clone(),
            }),
            seen,
        )
    }

    #[test]
    fn fifo_holds_every_nth_frame_when_visible() {
        let (store, profile, frames, b) = setup();
        let (vis, _) = scripted(|_| 1.0);
        let cfg = RuntimeConfig {
            frame_step: 2,
            ..RuntimeConfig::default()
        };
        let mut tr = Tracker::with_visibility(&store, profile, HeadSpec::teacher(profile), cfg, vis).unwrap();
        tr.init(&frames[0], &b).unwrap();
        assert!(tr.state().unwrap().occusolver_active);
        for f in &frames[1..=20] {
            tr.step(f).unwrap();
        }
        let ids = tr.state().unwrap().fifo_frame_ids();
        assert_eq!(ids, (0..8).map(|k| 20 - 14 + 2 * k).collect::<Vec<_>>());
    }

    #[test]
    fn occluded_frame_is_replaced_by_last_unoccluded_frame() {
        let (store, profile, frames, b) = setup();
        let (vis, seen) = scripted(|t| if t == 6 || t == 8 { 0.0 } else { 1.0 });
        let cfg = RuntimeConfig {
            frame_step: 2,
            ..RuntimeConfig::default()
        };
        let mut tr = Tracker::with_visibility(&store, profile, HeadSpec::teacher(profile), cfg, vis).unwrap();
        tr.init(&frames[0], &b).unwrap();
        for f in &frames[1..=8] {
            tr.step(f).unwrap();
        }
        let ids = tr.state().unwrap().fifo_frame_ids();
        assert_eq!(&ids[4..], &[2, 4, 4, 4]);
        // The candidate window still showed the new frame to the estimator.
        assert_eq!(*seen.borrow().last().unwrap().last().unwrap(), 8);
        let r = tr.step(&frames[9]).unwrap();
        assert_eq!(r.visible_fraction, 0.0);
    }

    #[test]
    fn heavily_occluded_first_frame_skips_fusion_until_visibility_recovers() {
        let (store, profile, frames, b) = setup();
        let (vis, _) = scripted(|t| if t < 4 { 0.2 } else { 0.9 });
        let cfg = RuntimeConfig {
            frame_step: 2,
            ..RuntimeConfig::default()
        };
        let mut tr = Tracker::with_visibility(&store, profile, HeadSpec::teacher(profile), cfg, vis).unwrap();
        let r0 = tr.init(&frames[0], &b).unwrap();
        assert!(!r0.occusolver_active);
        assert!(!tr.step(&frames[1]).unwrap().occusolver_active);
        assert!(!tr.step(&frames[2]).unwrap().occusolver_active);
        tr.step(&frames[3]).unwrap();
        assert!(tr.step(&frames[4]).unwrap().occusolver_active);
    }

    #[test]
    fn reference_gating_and_initial_slot() {
        let (store, profile, frames, b) = setup();
        let never = RuntimeConfig {
            confidence: f64::INFINITY,
            ..RuntimeConfig::default()
        };
        let mut tr = Tracker::plain(&store, profile, HeadSpec::teacher(profile), never).unwrap();
        tr.init(&frames[0], &b).unwrap();
        let before = tr.state().unwrap().reference_set.clone();
        for f in &frames[1..6] {
            tr.step(f).unwrap();
        }
        assert_eq!(tr.state().unwrap().reference_set, before);

        let always = RuntimeConfig {
            confidence: f64::NEG_INFINITY,
            ..RuntimeConfig::default()
        };
        let mut tr = Tracker::plain(&store, profile, HeadSpec::teacher(profile), always).unwrap();
        tr.init(&frames[0], &b).unwrap();
        let first = tr.state().unwrap().reference_set.features[0].clone();
        for f in &frames[1..6] {
            tr.step(f).unwrap();
        }
        let st = tr.state().unwrap();
        assert_eq!(st.reference_ids, [0, 5]);
        assert_eq!(st.reference_set.features[0], first);
    }

    #[test]
    fn repeated_low_visibility_redraws_points() {
        let (store, profile, frames, b) = setup();
        let (vis, _) = scripted(|t| if t == 0 { 1.0 } else { 0.1 });
        let cfg = RuntimeConfig {
            frame_step: 1,
            ..RuntimeConfig::default()
        };
        let mut tr = Tracker::with_visibility(&store, profile, HeadSpec::teacher(profile), cfg, vis).unwrap();
        tr.init(&frames[0], &b).unwrap();
        for f in &frames[1..=6] {
            tr.step(f).unwrap();
        }
        assert_eq!(tr.state().unwrap().resamples, 2);
    }

    #[test]
    fn run_is_deterministic_and_complete() {
        let (store, profile, frames, b) = setup();
        let run = || {
            let mut tr = Tracker::plain(&store, profile, HeadSpec::teacher(profile), RuntimeConfig::default()).unwrap();
            tr.run(&frames, &b).unwrap()
        };
        let a = run();
        assert_eq!(a.records.len(), frames.len());
        assert_eq!(a, run());
        let text = a.to_text();
        let back = TrackResult::from_text(&text, std::path::Path::new("r.txt")).unwrap();
        assert_eq!(back, a);
        let mut tr = Tracker::plain(&store, profile, HeadSpec::teacher(profile), RuntimeConfig::default()).unwrap();
        assert!(matches!(tr.step(&frames[0]), Err(Error::State(_))));
        assert!(matches!(
            tr.init(&frames[0], &BBox::raw(100.0, 100.0, 140.0, 120.0)),
            Err(Error::Domain(_))
        ));
    }
}
