//! Training windows drawn from freshly generated synthetic sequences.

use std::rc::Rc;

use gotjepa_autodiff::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::BBox;
use crate::profile::Profile;
use crate::synthdata::{random_config, Frame, Scenario, SceneGeometry, SequenceGenerator};
use crate::trackhead::{encode_frame, ReferenceSet};

pub const WINDOW_LEN: usize = 8;
/// Window positions used as the two references and the current frame.
pub const REF_POSITIONS: [usize; 2] = [0, 4];
pub const CUR_POSITION: usize = 7;
pub const HEAD_POSITIONS: [usize; 3] = [0, 4, 7];
const MAX_FRAME_STEP: usize = 8;

/// Eight frames of one sequence at a fixed frame step.
pub struct Window {
    pub frame_ids: [usize; WINDOW_LEN],
    pub boxes: Vec<BBox>,
    pub visibility: Vec<f64>,
    frames: Vec<Option<Frame>>,
    pub scene: Rc<SceneGeometry>,
}

impl Window {
    /// Frame at window position `pos`; only positions requested from the sampler are rendered.
    pub fn frame(&self, pos: usize) -> &Frame {
        self.frames[pos]
            .as_ref()
            .unwrap_or_else(|| panic!("window position {pos} was not rendered"))
    }
}

pub struct WindowSampler {
    profile: Profile,
    scenario: Scenario,
    rng: ChaCha8Rng,
    windows_per_sequence: usize,
    min_visibility: f64,
    current: Option<(Rc<SequenceGenerator>, Rc<SceneGeometry>)>,
    remaining: usize,
}

impl WindowSampler {
    pub fn new(profile: Profile, scenario: Scenario, seed: u64) -> Self {
        Self {
            profile,
            scenario,
            rng: ChaCha8Rng::seed_from_u64(seed),
            windows_per_sequence: 4,
            min_visibility: 0.0,
            current: None,
            remaining: 0,
        }
    }

    /// Only windows whose reference and current frames show at least this
    /// fraction of the target are returned.
    pub fn with_min_visibility(mut self, v: f64) -> Self {
        self.min_visibility = v;
        self
    }

    fn fresh_sequence(&mut self) -> (Rc<SequenceGenerator>, Rc<SceneGeometry>) {
        let cfg = random_config(&self.profile, self.scenario, &mut self.rng);
        let gen = SequenceGenerator::new(&cfg).expect("random configs are valid");
        let scene = Rc::new(gen.geometry().clone());
        (Rc::new(gen), scene)
    }

    /// Draws the next window, rendering the frames at positions `render`.
    pub fn next(&mut self, render: &[usize]) -> Window {
        loop {
            if self.remaining == 0 || self.current.is_none() {
                self.current = Some(self.fresh_sequence());
                self.remaining = self.windows_per_sequence;
            }
            self.remaining -= 1;
            let (gen, scene) = self.current.clone().expect("sequence present");
            let n = gen.num_frames();
            let max_step = MAX_FRAME_STEP.min((n - 1) / (WINDOW_LEN - 1));
            let step = self.rng.gen_range(1..=max_step);
            let start = self.rng.gen_range(0..n - (WINDOW_LEN - 1) * step);
            let frame_ids: [usize; WINDOW_LEN] = std::array::from_fn(|k| start + k * step);
            let visibility: Vec<f64> = frame_ids
                .iter()
                .map(|&t| scene.target_visibility(t))
                .collect();
            if HEAD_POSITIONS
                .iter()
                .any(|&p| visibility[p] < self.min_visibility)
            {
                continue;
            }
            let mut frames = vec![None; WINDOW_LEN];
            for &p in render {
                frames[p] = Some(gen.render(frame_ids[p]));
            }
            return Window {
                boxes: frame_ids.iter().map(|&t| scene.target_box(t)).collect(),
                frame_ids,
                visibility,
                frames,
                scene,
            };
        }
    }
}

/// Encoded references and current frame of a window, with the current target box.
#[derive(Clone, Debug)]
pub struct TrackSample {
    pub refs: ReferenceSet,
    pub cur: Tensor,
    pub cur_box: BBox,
    pub cur_visibility: f64,
}

/// Encodes the head positions of `w` with the stored encoder.
pub fn track_sample(store: &ParamStore, profile: &Profile, w: &Window) -> Result<TrackSample> {
    let f0 = encode_frame(store, profile, w.frame(REF_POSITIONS[0]))?;
    let f1 = encode_frame(store, profile, w.frame(REF_POSITIONS[1]))?;
    let mut refs = ReferenceSet::single(f0, &w.boxes[REF_POSITIONS[0]], profile)?;
    refs.set_second(f1, &w.boxes[REF_POSITIONS[1]], profile)?;
    Ok(TrackSample {
        refs,
        cur: encode_frame(store, profile, w.frame(CUR_POSITION))?,
        cur_box: w.boxes[CUR_POSITION],
        cur_visibility: w.visibility[CUR_POSITION],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_are_evenly_spaced_and_deterministic() {
        let mk = || WindowSampler::new(Profile::small(), Scenario::Train, 3).with_min_visibility(0.5);
        let (mut a, mut b) = (mk(), mk());
        for _ in 0..10 {
            let wa = a.next(&HEAD_POSITIONS);
            let wb = b.next(&HEAD_POSITIONS);
            assert_eq!(wa.frame_ids, wb.frame_ids);
            assert_eq!(wa.frame(7), wb.frame(7));
            let step = wa.frame_ids[1] - wa.frame_ids[0];
            assert!((1..=8).contains(&step));
            assert!(wa.frame_ids.windows(2).all(|p| p[1] - p[0] == step));
            assert!(HEAD_POSITIONS.iter().all(|&p| wa.visibility[p] >= 0.5));
        }
    }
}
