//! Frame encoder, label encoder, transformer model predictor, the score and
//! box-regression decoders, and box decoding at the score peak.
//!
//! Feature maps are `[H·W, C]` tensors, row-major over the grid, so a map is
//! directly a token sequence for the predictor.

use gotjepa_autodiff::nn::{self, TransformerCfg};
use gotjepa_autodiff::{ConvGeom, Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::profile::Profile;
use crate::synthdata::{
    encode_cls_label, encode_reg_label, Frame, RegMapLabel, ScoreMapLabel, LABEL_SIGMA,
};

pub const ENCODER: &str = "trackhead/encoder";
pub const REGDEC: &str = "trackhead/regdec";
pub const TEACHER_ROOT: &str = "trackhead";
pub const STUDENT_ROOT: &str = "jepa/student";
pub const PROJNET: &str = "jepa/projnet";

const ENC_STEM: usize = 8;
/// Channels of the label-map input: score, four masked ltrb distances.
pub const LABEL_CHANNELS: usize = 5;
pub const PREDICTOR_HEADS: usize = 4;
pub const PREDICTOR_LAYERS: usize = 2;

fn shape_err(what: &str, expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: expected {expected:?}, got {got:?}"))
}

pub fn init_encoder(store: &mut ParamStore, profile: &Profile, rng: &mut impl Rng) {
    let c = profile.channels;
    let patch = profile.stride() / 2;
    nn::init_conv(store, &format!("{ENCODER}/stem"), 2, 1, ENC_STEM, rng);
    nn::init_conv(store, &format!("{ENCODER}/patch"), patch, ENC_STEM, c, rng);
    nn::init_conv(store, &format!("{ENCODER}/mix1"), 3, c, c, rng);
    nn::init_conv(store, &format!("{ENCODER}/mix2"), 3, c, c, rng);
}

/// `[size², 1]` intensities in `[0, 1]` to a `[H·W, C]` feature map.
pub fn encode_frame_g(g: &mut Graph, store: &ParamStore, profile: &Profile, image: Var) -> Var {
    let size = profile.image_size;
    let x = g.add_scalar(image, -0.5);
    let geom = ConvGeom {
        h: size,
        w: size,
        cin: 1,
        k: 2,
        stride: 2,
        pad: 0,
    };
    let (x, (h, w)) = nn::conv2d(g, store, &format!("{ENCODER}/stem"), x, geom);
    let x = g.relu(x);
    let patch = profile.stride() / 2;
    let geom = ConvGeom {
        h,
        w,
        cin: ENC_STEM,
        k: patch,
        stride: patch,
        pad: 0,
    };
    let (x, (h, w)) = nn::conv2d(g, store, &format!("{ENCODER}/patch"), x, geom);
    let x = g.relu(x);
    let c = profile.channels;
    let geom = ConvGeom {
        h,
        w,
        cin: c,
        k: 3,
        stride: 1,
        pad: 1,
    };
    let (x, _) = nn::conv2d(g, store, &format!("{ENCODER}/mix1"), x, geom);
    let x = g.relu(x);
    let (x, _) = nn::conv2d(g, store, &format!("{ENCODER}/mix2"), x, geom);
    x
}

pub fn encode_frame(store: &ParamStore, profile: &Profile, frame: &Frame) -> Result<Tensor> {
    if frame.size() != profile.image_size {
        return Err(Error::Shape(format!(
            "frame side {} does not match profile image size {}",
            frame.size(),
            profile.image_size
        )));
    }
    let mut g = Graph::inference();
    let x = g.constant(frame.to_tensor());
    let f = encode_frame_g(&mut g, store, profile, x);
    Ok(g.value(f).clone())
}

/// Label maps as graph inputs: `[H·W, 5]` (score, masked ltrb).
pub fn label_tensor(cls: &ScoreMapLabel, reg: &RegMapLabel) -> Result<Tensor> {
    if cls.grid != reg.grid {
        return Err(Error::Shape(format!(
            "score label grid {:?} differs from regression label grid {:?}",
            cls.grid, reg.grid
        )));
    }
    let n = cls.values.len();
    Ok(Tensor::from_fn(n, LABEL_CHANNELS, |i, c| {
        if c == 0 {
            cls.values[i]
        } else if reg.valid_mask[i] {
            reg.values[i][c - 1]
        } else {
            0.0
        }
    }))
}

/// Score and regression labels for `b` on `profile`'s grid.
pub fn labels_for_box(
    b: &BBox,
    profile: &Profile,
) -> Result<(ScoreMapLabel, RegMapLabel)> {
    let grid = (profile.grid, profile.grid);
    let s = profile.stride();
    Ok((
        encode_cls_label(b, grid, s, LABEL_SIGMA)?,
        encode_reg_label(b, grid, s)?,
    ))
}

/// Which predictor a head uses: parameters under `root`, and an optional
/// linear map applied to the predicted model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadSpec {
    pub profile: Profile,
    pub root: String,
    pub projnet: Option<String>,
}

impl HeadSpec {
    pub fn teacher(profile: Profile) -> Self {
        Self {
            profile,
            root: TEACHER_ROOT.into(),
            projnet: None,
        }
    }

    pub fn student(profile: Profile) -> Self {
        Self {
            profile,
            root: STUDENT_ROOT.into(),
            projnet: Some(PROJNET.into()),
        }
    }

    fn tr_cfg(&self) -> TransformerCfg {
        TransformerCfg::new(self.profile.channels, PREDICTOR_HEADS, PREDICTOR_LAYERS)
    }

    fn p(&self, suffix: &str) -> String {
        format!("{}/{suffix}", self.root)
    }

    /// Label encoder and model predictor under `root`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let c = self.profile.channels;
        nn::init_conv(store, &self.p("label_encoder/conv1"), 3, LABEL_CHANNELS, c / 2, rng);
        nn::init_conv(store, &self.p("label_encoder/conv2"), 1, c / 2, c, rng);
        let cells = self.profile.cells();
        nn::init_embedding(store, &self.p("predictor/pos"), cells, c, rng);
        nn::init_embedding(store, &self.p("predictor/ref_embed"), 1, c, rng);
        nn::init_embedding(store, &self.p("predictor/cur_embed"), 1, c, rng);
        nn::init_embedding(store, &self.p("predictor/query"), 1, c, rng);
        nn::init_transformer(store, &self.p("predictor/tr"), self.tr_cfg(), rng);
    }

    /// `[H·W, 5]` label input to a `[H·W, C]` embedding.
    pub fn encode_labels_g(&self, g: &mut Graph, store: &ParamStore, labels: Var) -> Var {
        let n = self.profile.grid;
        let geom = ConvGeom {
            h: n,
            w: n,
            cin: LABEL_CHANNELS,
            k: 3,
            stride: 1,
            pad: 1,
        };
        let (x, _) = nn::conv2d(g, store, &self.p("label_encoder/conv1"), labels, geom);
        let x = g.relu(x);
        let geom = ConvGeom {
            h: n,
            w: n,
            cin: self.profile.channels / 2,
            k: 1,
            stride: 1,
            pad: 0,
        };
        nn::conv2d(g, store, &self.p("label_encoder/conv2"), x, geom).0
    }

    pub fn encode_labels(
        &self,
        store: &ParamStore,
        cls: &ScoreMapLabel,
        reg: &RegMapLabel,
    ) -> Result<Tensor> {
        let grid = (self.profile.grid, self.profile.grid);
        if cls.grid != grid {
            return Err(shape_err("label grid", grid, cls.grid));
        }
        let t = label_tensor(cls, reg)?;
        let mut g = Graph::inference();
        let l = g.constant(t);
        let e = self.encode_labels_g(&mut g, store, l);
        Ok(g.value(e).clone())
    }

    /// Predicts the raw model and the refined current features from two
    /// `(features, label embedding)` references. Returns `(ω [1, C], z_cur [H·W, C])`.
    pub fn predict_raw_g(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        refs: [(Var, Var); 2],
        cur: Var,
    ) -> (Var, Var) {
        let cells = self.profile.cells();
        let pos = g.param(store, &self.p("predictor/pos"));
        let ref_e = g.param(store, &self.p("predictor/ref_embed"));
        let cur_e = g.param(store, &self.p("predictor/cur_embed"));
        let query = g.param(store, &self.p("predictor/query"));
        let mut tokens = Vec::with_capacity(4);
        for (feat, lab) in refs {
            let t = g.add(feat, lab);
            let t = g.add(t, pos);
            tokens.push(g.add_row(t, ref_e));
        }
        let t = g.add(cur, pos);
        tokens.push(g.add_row(t, cur_e));
        tokens.push(query);
        let x = g.concat_rows(&tokens);
        let y = nn::transformer(g, store, &self.p("predictor/tr"), self.tr_cfg(), x);
        let omega = g.rows(y, 3 * cells, 1);
        let z = g.rows(y, 2 * cells, cells);
        (omega, z)
    }

    /// As [`HeadSpec::predict_raw_g`], with the projection applied to ω when configured.
    pub fn predict_g(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        refs: [(Var, Var); 2],
        cur: Var,
    ) -> (Var, Var) {
        let (omega, z) = self.predict_raw_g(g, store, refs, cur);
        let omega = match &self.projnet {
            Some(name) => nn::linear(g, store, name, omega),
            None => omega,
        };
        (omega, z)
    }

    /// Binds a [`ReferenceSet`] into `g`, returning `(features, label embedding)` pairs.
    pub fn bind_refs(&self, g: &mut Graph, store: &ParamStore, refs: &ReferenceSet) -> [(Var, Var); 2] {
        let mut bind = |k: usize| {
            let f = g.constant(refs.features[k].clone());
            let l = g.constant(
                label_tensor(&refs.cls_labels[k], &refs.reg_labels[k]).expect("validated refs"),
            );
            (f, self.encode_labels_g(g, store, l))
        };
        [bind(0), bind(1)]
    }

    fn check_inputs(&self, refs: &ReferenceSet, cur: &Tensor) -> Result<()> {
        let want = (self.profile.cells(), self.profile.channels);
        for f in refs.features.iter().chain(std::iter::once(cur)) {
            if f.shape() != want {
                return Err(shape_err("feature map", want, f.shape()));
            }
        }
        let grid = (self.profile.grid, self.profile.grid);
        for k in 0..2 {
            if refs.cls_labels[k].grid != grid || refs.reg_labels[k].grid != grid {
                return Err(shape_err("reference label grid", grid, refs.cls_labels[k].grid));
            }
        }
        Ok(())
    }

    /// `(ω, z_cur)` for one reference set and current feature map.
    pub fn predict_model(
        &self,
        store: &ParamStore,
        refs: &ReferenceSet,
        cur: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        self.check_inputs(refs, cur)?;
        let mut g = Graph::inference();
        let r = self.bind_refs(&mut g, store, refs);
        let c = g.constant(cur.clone());
        let (o, z) = self.predict_g(&mut g, store, r, c);
        Ok((g.value(o).clone(), g.value(z).clone()))
    }

    /// Full head pass: model prediction, both decoders and box decoding.
    pub fn forward(&self, store: &ParamStore, refs: &ReferenceSet, cur: &Tensor) -> Result<HeadOutput> {
        let (omega, z) = self.predict_model(store, refs, cur)?;
        head_output(store, &self.profile, &omega, &z)
    }
}

/// Two reference feature maps with their label maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    pub features: [Tensor; 2],
    pub cls_labels: [ScoreMapLabel; 2],
    pub reg_labels: [RegMapLabel; 2],
}

impl ReferenceSet {
    /// A reference set with the same frame and box in both slots.
    pub fn single(features: Tensor, b: &BBox, profile: &Profile) -> Result<Self> {
        let (c, r) = labels_for_box(b, profile)?;
        Ok(Self {
            features: [features.clone(), features],
            cls_labels: [c.clone(), c],
            reg_labels: [r.clone(), r],
        })
    }

    /// Replaces slot 2 (the rolling slot).
    pub fn set_second(&mut self, features: Tensor, b: &BBox, profile: &Profile) -> Result<()> {
        let (c, r) = labels_for_box(b, profile)?;
        self.features[1] = features;
        self.cls_labels[1] = c;
        self.reg_labels[1] = r;
        Ok(())
    }
}

/// `p = z·ω`, one score per cell: `[H·W, 1]`.
pub fn classify_g(g: &mut Graph, omega: Var, z: Var) -> Var {
    g.matmul_t(z, omega)
}

pub fn init_regdec(store: &mut ParamStore, profile: &Profile, rng: &mut impl Rng) {
    let c = profile.channels;
    for k in 0..4 {
        nn::init_conv(store, &format!("{REGDEC}/branch{k}/conv1"), 3, c, c / 2, rng);
        nn::init_conv(store, &format!("{REGDEC}/branch{k}/conv2"), 3, c / 2, 1, rng);
    }
}

/// The decoder input `(z·ω) ⊙ z`: each cell's features scaled by its score.
pub fn modulated_g(g: &mut Graph, omega: Var, z: Var) -> Var {
    let s = classify_g(g, omega, z);
    g.mul_col(z, s)
}

/// Four independent convolution branches over `(z·ω) ⊙ z`, softplus output: `[H·W, 4]`.
pub fn regress_g(g: &mut Graph, store: &ParamStore, profile: &Profile, omega: Var, z: Var) -> Var {
    let x = modulated_g(g, omega, z);
    let n = profile.grid;
    let c = profile.channels;
    let g1 = ConvGeom {
        h: n,
        w: n,
        cin: c,
        k: 3,
        stride: 1,
        pad: 1,
    };
    let g2 = ConvGeom { cin: c / 2, ..g1 };
    let cols = g.im2col(x, g1);
    let branches: Vec<Var> = (0..4)
        .map(|k| {
            let h = nn::linear(g, store, &format!("{REGDEC}/branch{k}/conv1"), cols);
            let h = g.relu(h);
            nn::conv2d(g, store, &format!("{REGDEC}/branch{k}/conv2"), h, g2).0
        })
        .collect();
    let d = g.concat_cols(&branches);
    g.softplus(d)
}

fn check_channels(omega: &Tensor, z: &Tensor) -> Result<()> {
    if omega.rows() != 1 || omega.cols() != z.cols() {
        return Err(Error::Shape(format!(
            "tracking model {:?} does not match feature channels {}",
            omega.shape(),
            z.cols()
        )));
    }
    Ok(())
}

pub fn classify(omega: &Tensor, z: &Tensor) -> Result<Tensor> {
    check_channels(omega, z)?;
    Ok(z.matmul(&omega.transpose()))
}

pub fn regress(store: &ParamStore, profile: &Profile, omega: &Tensor, z: &Tensor) -> Result<Tensor> {
    check_channels(omega, z)?;
    if z.shape() != (profile.cells(), profile.channels) {
        return Err(shape_err("feature map", (profile.cells(), profile.channels), z.shape()));
    }
    let mut g = Graph::inference();
    let o = g.constant(omega.clone());
    let zv = g.constant(z.clone());
    let d = regress_g(&mut g, store, profile, o, zv);
    Ok(g.value(d).clone())
}

/// Box at the score peak: `(box, peak)`. Ties go to the smallest row-major index.
pub fn decode_box(p: &Tensor, d: &Tensor, grid: usize, stride: usize) -> (BBox, f64) {
    let mut best = 0;
    for (i, &v) in p.data().iter().enumerate() {
        if v > p.data()[best] {
            best = i;
        }
    }
    let s = stride as f64;
    let cx = ((best % grid) as f64 + 0.5) * s;
    let cy = ((best / grid) as f64 + 0.5) * s;
    let r = d.row_slice(best);
    (
        BBox::raw(cx - r[0] * s, cy - r[1] * s, cx + r[2] * s, cy + r[3] * s),
        p.data()[best],
    )
}

/// Decoder outputs and the decoded box.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub cls: Tensor,
    pub reg: Tensor,
    pub bbox: BBox,
    pub peak_score: f64,
}

pub fn head_output(store: &ParamStore, profile: &Profile, omega: &Tensor, z: &Tensor) -> Result<HeadOutput> {
    let cls = classify(omega, z)?;
    let reg = regress(store, profile, omega, z)?;
    let (bbox, peak_score) = decode_box(&cls, &reg, profile.grid, profile.stride());
    Ok(HeadOutput {
        cls,
        reg,
        bbox,
        peak_score,
    })
}

/// Initialises encoder, teacher predictor and regression decoder.
pub fn init_tracker(store: &mut ParamStore, profile: &Profile, rng: &mut impl Rng) {
    init_encoder(store, profile, rng);
    HeadSpec::teacher(*profile).init(store, rng);
    init_regdec(store, profile, rng);
}
