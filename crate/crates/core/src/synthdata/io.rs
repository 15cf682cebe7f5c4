use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame, FrameAttributes, SynthConfig, SyntheticSequence};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const ANNOTATION_VERSION: u32 = 1;
const ANNOTATION_FILE: &str = "annotations.json";
const FRAME_DIR: &str = "frames";

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    index: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    visibility: f64,
    occluded: bool,
    distractor_near: bool,
    /// One `0`/`1` character per grid cell, row-major.
    target_cells: String,
    occluder_boxes: Vec<[f64; 4]>,
    distractor_boxes: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct Annotations {
    version: u32,
    config: SynthConfig,
    frames: Vec<FrameRecord>,
}

fn frame_path(dir: &Path, t: usize) -> std::path::PathBuf {
    dir.join(FRAME_DIR).join(format!("{t:06}.png"))
}

fn to_box(a: [f64; 4]) -> BBox {
    BBox::raw(a[0], a[1], a[2], a[3])
}

/// Writes `frames/NNNNNN.png` and `annotations.json` under `dir`.
pub fn save_sequence(seq: &SyntheticSequence, dir: &Path) -> Result<()> {
    let frames_dir = dir.join(FRAME_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for (t, f) in seq.frames.iter().enumerate() {
        let path = frame_path(dir, t);
        let size = f.size() as u32;
        image::save_buffer(&path, f.pixels(), size, size, image::ColorType::L8).map_err(|e| {
            Error::io(&path, std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
    }
    let frames = (0..seq.len())
        .map(|t| FrameRecord {
            index: t,
            bbox: seq.gt_boxes[t].as_array(),
            visibility: seq.gt_point_visibility[t],
            occluded: seq.attributes[t].occluded,
            distractor_near: seq.attributes[t].distractor_near,
            target_cells: seq.gt_target_mask[t]
                .iter()
                .map(|&b| if b { '1' } else { '0' })
                .collect(),
            occluder_boxes: seq.occluder_boxes[t].iter().map(BBox::as_array).collect(),
            distractor_boxes: seq.distractor_boxes[t].iter().map(BBox::as_array).collect(),
        })
        .collect();
    let ann = Annotations {
        version: ANNOTATION_VERSION,
        config: seq.config.clone(),
        frames,
    };
    let path = dir.join(ANNOTATION_FILE);
    let text = serde_json::to_string_pretty(&ann).expect("annotations serialize");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_sequence(dir: &Path) -> Result<SyntheticSequence> {
    let path = dir.join(ANNOTATION_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let parse_err = |detail: String| Error::Parse {
        file: path.clone(),
        detail,
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_err("missing or non-integer field `version`".into()))?;
    if version != ANNOTATION_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            what: "annotation",
            found: version.min(u32::MAX as u64) as u32,
            expected: ANNOTATION_VERSION,
        });
    }
    let ann: Annotations = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
    ann.config.validate()?;
    if ann.frames.len() != ann.config.num_frames {
        return Err(parse_err(format!(
            "field `frames` has {} records, config expects {}",
            ann.frames.len(),
            ann.config.num_frames
        )));
    }
    let cells = ann.config.grid_size * ann.config.grid_size;
    let mut seq = SyntheticSequence {
        config: ann.config.clone(),
        frames: Vec::with_capacity(ann.frames.len()),
        gt_boxes: Vec::new(),
        gt_target_mask: Vec::new(),
        gt_point_visibility: Vec::new(),
        attributes: Vec::new(),
        occluder_boxes: Vec::new(),
        distractor_boxes: Vec::new(),
    };
    for (t, rec) in ann.frames.into_iter().enumerate() {
        if rec.index != t {
            return Err(parse_err(format!(
                "field `frames[{t}].index` is {}",
                rec.index
            )));
        }
        if rec.target_cells.len() != cells || rec.target_cells.chars().any(|c| c != '0' && c != '1')
        {
            return Err(parse_err(format!(
                "field `frames[{t}].target_cells` must be {cells} characters of 0/1"
            )));
        }
        let fpath = frame_path(dir, t);
        let img = image::open(&fpath)
            .map_err(|e| Error::Parse {
                file: fpath.clone(),
                detail: e.to_string(),
            })?
            .into_luma8();
        let size = ann.config.image_size;
        if img.width() as usize != size || img.height() as usize != size {
            return Err(Error::Parse {
                file: fpath,
                detail: format!("image is {}×{}, expected {size}²", img.width(), img.height()),
            });
        }
        seq.frames.push(Frame::new(size, img.into_raw())?);
        seq.gt_boxes.push(to_box(rec.bbox));
        seq.gt_target_mask
            .push(rec.target_cells.chars().map(|c| c == '1').collect());
        seq.gt_point_visibility.push(rec.visibility);
        seq.attributes.push(FrameAttributes {
            occluded: rec.occluded,
            distractor_near: rec.distractor_near,
        });
        seq.occluder_boxes
            .push(rec.occluder_boxes.into_iter().map(to_box).collect());
        seq.distractor_boxes
            .push(rec.distractor_boxes.into_iter().map(to_box).collect());
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::super::{generate_sequence, random_config, Scenario};
    use super::*;
    use crate::profile::Profile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> SyntheticSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cfg = random_config(&Profile::small(), Scenario::OcclusionHeavy, &mut rng);
        cfg.num_frames = 12;
        cfg.occluders[0].enter_frame = 2;
        generate_sequence(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        assert!(dir.path().join("frames/000000.png").exists());
        let back = load_sequence(dir.path()).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn truncated_annotations_fail_to_parse() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let path = dir.path().join(ANNOTATION_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        match load_sequence(dir.path()) {
            Err(Error::Parse { file, .. }) => assert_eq!(file, path),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let path = dir.path().join(ANNOTATION_FILE);
        let text = fs::read_to_string(&path).unwrap().replacen("\"visibility\"", "\"vis\"", 1);
        fs::write(&path, text).unwrap();
        let err = load_sequence(dir.path()).unwrap_err().to_string();
        assert!(err.contains("visibility"), "{err}");
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let path = dir.path().join(ANNOTATION_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replacen("\"version\": 1", "\"version\": 7", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_sequence(dir.path()),
            Err(Error::UnsupportedVersion { found: 7, .. })
        ));
    }
}
