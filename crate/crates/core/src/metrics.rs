//! Localization losses (hinge score loss, GIoU box loss) in scalar and graph
//! form, and the per-sequence evaluation suite.

use std::fmt::Write as _;
use std::rc::Rc;

use gotjepa_autodiff::{Graph, SparseRows, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::synthdata::RegMapLabel;

/// Label value above which a cell counts as target in the hinge loss.
pub const HINGE_THRESHOLD: f64 = 0.05;
/// Default centre-distance threshold for precision, in pixels.
pub const PRECISION_PX: f64 = 20.0;
/// Default normalized-precision threshold.
pub const NORM_PRECISION: f64 = 0.2;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

fn enclosing_area(a: &BBox, b: &BBox) -> f64 {
    (a.x1.max(b.x1) - a.x0.min(b.x0)) * (a.y1.max(b.y1) - a.y0.min(b.y0))
}

/// `1 − GIoU`, in `[0, 2)`.
pub fn giou_loss(pred: &BBox, gt: &BBox) -> f64 {
    let inter = pred.intersection_area(gt);
    let union = pred.area() + gt.area() - inter;
    let enc = enclosing_area(pred, gt);
    1.0 - (inter / union - (enc - union) / enc)
}

fn check_len(p: &Tensor, y: &Tensor) -> Result<()> {
    if p.shape() != y.shape() || p.cols() != 1 {
        return Err(Error::Shape(format!(
            "score map {:?} vs label {:?}",
            p.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// Mean squared hinge residual: `p − y` on target cells (`y > threshold`),
/// `max(0, p)` elsewhere.
pub fn hinge_cls_loss(p: &Tensor, y: &Tensor, threshold: f64) -> Result<f64> {
    check_len(p, y)?;
    let s: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| {
            let r = if y > threshold { p - y } else { p.max(0.0) };
            r * r
        })
        .sum();
    Ok(s / p.len() as f64)
}

/// Graph form of [`hinge_cls_loss`]; `y` is constant.
pub fn hinge_cls_loss_g(g: &mut Graph, p: Var, y: &Tensor, threshold: f64) -> Var {
    let mask = y.map(|v| if v > threshold { 1.0 } else { 0.0 });
    let yv = g.constant(y.clone());
    let m = g.constant(mask.clone());
    let inv = g.constant(mask.map(|v| 1.0 - v));
    let fg = g.sub(p, yv);
    let fg = g.mul(fg, m);
    let bg = g.relu(p);
    let bg = g.mul(bg, inv);
    let r = g.add(fg, bg);
    let r2 = g.square(r);
    g.mean(r2)
}

/// Per-row `1 − GIoU` between corner boxes `pred` and `gt` (both `[n, 4]`), mean over rows.
pub fn giou_loss_g(g: &mut Graph, pred: Var, gt: Var) -> Var {
    let col = |g: &mut Graph, v: Var, k: usize| g.cols(v, k, 1);
    let (px0, py0, px1, py1) = (col(g, pred, 0), col(g, pred, 1), col(g, pred, 2), col(g, pred, 3));
    let (gx0, gy0, gx1, gy1) = (col(g, gt, 0), col(g, gt, 1), col(g, gt, 2), col(g, gt, 3));
    let extent = |g: &mut Graph, lo_a, lo_b, hi_a, hi_b| {
        let hi = g.min(hi_a, hi_b);
        let lo = g.max(lo_a, lo_b);
        let d = g.sub(hi, lo);
        g.relu(d)
    };
    let iw = extent(g, px0, gx0, px1, gx1);
    let ih = extent(g, py0, gy0, py1, gy1);
    let inter = g.mul(iw, ih);
    let area = |g: &mut Graph, x0, y0, x1, y1| {
        let w = g.sub(x1, x0);
        let h = g.sub(y1, y0);
        g.mul(w, h)
    };
    let ap = area(g, px0, py0, px1, py1);
    let ag = area(g, gx0, gy0, gx1, gy1);
    let union = g.add(ap, ag);
    let union = g.sub(union, inter);
    let ex0 = g.min(px0, gx0);
    let ey0 = g.min(py0, gy0);
    let ex1 = g.max(px1, gx1);
    let ey1 = g.max(py1, gy1);
    let enc = area(g, ex0, ey0, ex1, ey1);
    let iou = g.div(inter, union);
    let gap = g.sub(enc, union);
    let pen = g.div(gap, enc);
    let giou = g.sub(iou, pen);
    let loss = g.one_minus(giou);
    g.mean(loss)
}

/// Cell centres `(cx, cy, cx, cy)` in pixels, `[H·W, 4]`.
pub fn cell_centres(grid: usize, stride: usize) -> Tensor {
    let s = stride as f64;
    Tensor::from_fn(grid * grid, 4, |r, c| {
        if c % 2 == 0 {
            ((r % grid) as f64 + 0.5) * s
        } else {
            ((r / grid) as f64 + 0.5) * s
        }
    })
}

/// Corner boxes decoded at every cell from an ltrb map `d` (`[H·W, 4]`).
pub fn ltrb_to_corners_g(g: &mut Graph, d: Var, grid: usize, stride: usize) -> Var {
    let s = stride as f64;
    let sign = g.constant(Tensor::row(vec![-s, -s, s, s]));
    let off = g.mul_row(d, sign);
    let c = g.constant(cell_centres(grid, stride));
    g.add(off, c)
}

/// Mean GIoU loss of the boxes decoded on the label's valid cells against `gt`.
/// Returns `None` when no cell is valid.
pub fn reg_loss_g(
    g: &mut Graph,
    d: Var,
    label: &RegMapLabel,
    gt: &BBox,
    stride: usize,
) -> Option<Var> {
    let rows: Vec<usize> = (0..label.valid_mask.len())
        .filter(|&i| label.valid_mask[i])
        .collect();
    if rows.is_empty() {
        return None;
    }
    let corners = ltrb_to_corners_g(g, d, label.grid.1, stride);
    let sel = Rc::new(SparseRows::select(label.valid_mask.len(), &rows));
    let picked = g.gather(corners, sel);
    let gt_t = Tensor::from_fn(rows.len(), 4, |_, c| gt.as_array()[c]);
    let gv = g.constant(gt_t);
    Some(giou_loss_g(g, picked, gv))
}

/// Weights of the score and box terms in the tracking loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackLossWeights {
    pub cls: f64,
    pub reg: f64,
}

impl Default for TrackLossWeights {
    fn default() -> Self {
        Self {
            cls: 100.0,
            reg: 1.0,
        }
    }
}

/// Per-sequence evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub suc: f64,
    pub pr: f64,
    pub npr: f64,
    pub ao: f64,
    pub op50: f64,
    pub frames: usize,
    pub curves: Curves,
}

/// `(threshold, rate)` tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub success: Vec<(f64, f64)>,
    pub precision: Vec<(f64, f64)>,
    pub norm_precision: Vec<(f64, f64)>,
}

pub fn success_thresholds() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

pub fn precision_thresholds() -> Vec<f64> {
    (0..=50).map(|k| k as f64).collect()
}

pub fn norm_precision_thresholds() -> Vec<f64> {
    (0..=50).map(|k| k as f64 / 100.0).collect()
}

fn centre_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Success, precision at `t_px`, normalized precision at [`NORM_PRECISION`],
/// average overlap and OP50 for one sequence.
pub fn eval_sequence(preds: &[BBox], gts: &[BBox], t_px: f64) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(Error::Domain(format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Domain("empty sequence".into()));
    }
    let n = preds.len() as f64;
    let ious: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| iou(p, g)).collect();
    let dists: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| centre_distance(p, g))
        .collect();
    let ndists: Vec<f64> = dists
        .iter()
        .zip(gts)
        .map(|(d, g)| d / g.diagonal())
        .collect();
    let rate = |vals: &[f64], keep: &dyn Fn(f64) -> bool| {
        vals.iter().filter(|&&v| keep(v)).count() as f64 / n
    };
    let success: Vec<(f64, f64)> = success_thresholds()
        .into_iter()
        .map(|t| (t, rate(&ious, &|v| v >= t)))
        .collect();
    let precision = precision_thresholds()
        .into_iter()
        .map(|t| (t, rate(&dists, &|v| v <= t)))
        .collect();
    let norm_precision = norm_precision_thresholds()
        .into_iter()
        .map(|t| (t, rate(&ndists, &|v| v <= t)))
        .collect();
    Ok(MetricReport {
        suc: success.iter().map(|s| s.1).sum::<f64>() / success.len() as f64,
        pr: rate(&dists, &|v| v <= t_px),
        npr: rate(&ndists, &|v| v <= NORM_PRECISION),
        ao: ious.iter().sum::<f64>() / n,
        op50: rate(&ious, &|v| v > 0.5),
        frames: preds.len(),
        curves: Curves {
            success,
            precision,
            norm_precision,
        },
    })
}

impl MetricReport {
    /// The three curve tables as CSV: `curve,threshold,rate`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("curve,threshold,rate\n");
        for (name, c) in [
            ("success", &self.curves.success),
            ("precision", &self.curves.precision),
            ("norm_precision", &self.curves.norm_precision),
        ] {
            for (t, r) in c {
                writeln!(out, "{name},{t},{r}").expect("write to string");
            }
        }
        out
    }
}

/// Frame-weighted mean of reports over several sequences.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    let total: usize = reports.iter().map(|r| r.frames).sum();
    if total == 0 {
        return Err(Error::Domain("no frames to aggregate".into()));
    }
    let w = |f: &dyn Fn(&MetricReport) -> f64| {
        reports.iter().map(|r| f(r) * r.frames as f64).sum::<f64>() / total as f64
    };
    let curve = |pick: &dyn Fn(&MetricReport) -> &Vec<(f64, f64)>| {
        let first = pick(&reports[0]);
        (0..first.len())
            .map(|k| (first[k].0, w(&|r| pick(r)[k].1)))
            .collect()
    };
    Ok(MetricReport {
        suc: w(&|r| r.suc),
        pr: w(&|r| r.pr),
        npr: w(&|r| r.npr),
        ao: w(&|r| r.ao),
        op50: w(&|r| r.op50),
        frames: total,
        curves: Curves {
            success: curve(&|r| &r.curves.success),
            precision: curve(&|r| &r.curves.precision),
            norm_precision: curve(&|r| &r.curves.norm_precision),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0f64..50.0, -50.0f64..50.0, 0.5f64..40.0, 0.5f64..40.0)
            .prop_map(|(x, y, w, h)| BBox::raw(x, y, x + w, y + h))
    }

    #[test]
    fn iou_hand_cases() {
        let a = BBox::raw(0.0, 0.0, 2.0, 2.0);
        let b = BBox::raw(1.0, 0.0, 3.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &BBox::raw(5.0, 5.0, 6.0, 6.0)), 0.0);
    }

    #[test]
    fn giou_hand_cases() {
        let a = BBox::raw(0.0, 0.0, 1.0, 1.0);
        let b = BBox::raw(2.0, 0.0, 3.0, 1.0);
        assert!((giou_loss(&a, &b) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(giou_loss(&a, &a), 0.0);
        let far = BBox::raw(1e5, 1e5, 1e5 + 1.0, 1e5 + 1.0);
        let l = giou_loss(&a, &far);
        assert!(l < 2.0 && l > 2.0 - 1e-6);
    }

    #[test]
    fn hinge_hand_cases() {
        let y = Tensor::from_vec(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = Tensor::from_vec(4, 1, vec![1.0, -0.5, 0.0, -1.0]).unwrap();
        assert_eq!(hinge_cls_loss(&p, &y, HINGE_THRESHOLD).unwrap(), 0.0);
        let y = Tensor::zeros(4, 1);
        let p = Tensor::from_vec(4, 1, vec![0.5, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(hinge_cls_loss(&p, &y, HINGE_THRESHOLD).unwrap(), 0.0625);
        assert!(hinge_cls_loss(&p, &Tensor::zeros(3, 1), 0.05).is_err());
    }

    #[test]
    fn graph_losses_match_scalar_forms() {
        let y = Tensor::from_vec(4, 1, vec![1.0, 0.6, 0.0, 0.01]).unwrap();
        let p = Tensor::from_vec(4, 1, vec![0.2, 0.9, -0.3, 0.4]).unwrap();
        let mut g = Graph::new();
        let pv = g.input(p.clone());
        let l = hinge_cls_loss_g(&mut g, pv, &y, HINGE_THRESHOLD);
        assert!((g.scalar(l) - hinge_cls_loss(&p, &y, HINGE_THRESHOLD).unwrap()).abs() < 1e-15);

        let a = BBox::raw(0.0, 0.0, 3.0, 2.0);
        let b = BBox::raw(1.0, 0.5, 5.0, 4.0);
        let pv = g.input(Tensor::row(a.as_array().to_vec()));
        let gv = g.constant(Tensor::row(b.as_array().to_vec()));
        let l = giou_loss_g(&mut g, pv, gv);
        assert!((g.scalar(l) - giou_loss(&a, &b)).abs() < 1e-15);
    }

    #[test]
    fn perfect_tracker_scores_one() {
        let gts: Vec<BBox> = (0..10).map(|k| BBox::raw(k as f64, 0.0, k as f64 + 20.0, 30.0)).collect();
        let r = eval_sequence(&gts, &gts, PRECISION_PX).unwrap();
        assert_eq!((r.suc, r.pr, r.npr, r.ao, r.op50), (1.0, 1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn averaging_and_boundaries() {
        let g = BBox::raw(0.0, 0.0, 10.0, 10.0);
        let r = eval_sequence(&[g, BBox::raw(50.0, 50.0, 60.0, 60.0)], &[g, g], PRECISION_PX).unwrap();
        assert_eq!((r.ao, r.op50), (0.5, 0.5));

        let gt = BBox::raw(0.0, 0.0, 100.0, 100.0);
        let near = gt.translate(19.0, 0.0);
        let far = gt.translate(21.0, 0.0);
        assert_eq!(eval_sequence(&[near], &[gt], 20.0).unwrap().pr, 1.0);
        assert_eq!(eval_sequence(&[far], &[gt], 20.0).unwrap().pr, 0.0);
        assert_eq!(eval_sequence(&[gt.translate(20.0, 0.0)], &[gt], 20.0).unwrap().pr, 1.0);

        // IoU exactly one half is excluded from OP50.
        let half = BBox::raw(0.0, 0.0, 10.0, 5.0);
        assert_eq!(iou(&half, &g), 0.5);
        assert_eq!(eval_sequence(&[half], &[g], 20.0).unwrap().op50, 0.0);

        assert!(matches!(eval_sequence(&[g], &[g, g], 20.0), Err(Error::Domain(_))));
    }

    #[test]
    fn curves_are_non_increasing_and_csv_has_all_rows() {
        let gts: Vec<BBox> = (0..20).map(|k| BBox::raw(0.0, 0.0, 20.0 + k as f64, 20.0)).collect();
        let preds: Vec<BBox> = gts.iter().enumerate().map(|(k, b)| b.translate(k as f64, 0.5 * k as f64)).collect();
        let r = eval_sequence(&preds, &gts, 20.0).unwrap();
        for c in [&r.curves.success] {
            assert!(c.windows(2).all(|w| w[1].1 <= w[0].1));
        }
        for c in [&r.curves.precision, &r.curves.norm_precision] {
            assert!(c.windows(2).all(|w| w[1].1 >= w[0].1));
        }
        assert_eq!(r.curves_csv().lines().count(), 1 + 21 + 51 + 51);
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let x = iou(&a, &b);
            prop_assert_eq!(x, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn giou_loss_in_range(a in arb_box(), b in arb_box()) {
            let l = giou_loss(&a, &b);
            prop_assert!((0.0..2.0).contains(&l));
            prop_assert!(giou_loss(&a, &a).abs() < 1e-12);
        }

        #[test]
        fn hinge_is_nonnegative(p in prop::collection::vec(-2.0f64..2.0, 9), y in prop::collection::vec(0.0f64..1.0, 9)) {
            let pt = Tensor::from_vec(9, 1, p).unwrap();
            let yt = Tensor::from_vec(9, 1, y).unwrap();
            prop_assert!(hinge_cls_loss(&pt, &yt, HINGE_THRESHOLD).unwrap() >= 0.0);
        }
    }
}
