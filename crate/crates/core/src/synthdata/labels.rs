use gotjepa_autodiff::Tensor;

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Width of the classification label kernel, in cells.
pub const LABEL_SIGMA: f64 = 1.0;

/// Gaussian target map over the feature grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMapLabel {
    pub grid: (usize, usize),
    pub values: Vec<f64>,
}

impl ScoreMapLabel {
    pub fn zeros(grid: (usize, usize)) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.0 * grid.1],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.1 + j]
    }

    /// `[H·W, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.values.len(), 1, self.values.clone()).expect("label length")
    }
}

/// Per-cell `(l, t, r, b)` distances in stride units, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RegMapLabel {
    pub grid: (usize, usize),
    pub values: Vec<[f64; 4]>,
    pub valid_mask: Vec<bool>,
}

impl RegMapLabel {
    pub fn zeros(grid: (usize, usize)) -> Self {
        Self {
            grid,
            values: vec![[0.0; 4]; grid.0 * grid.1],
            valid_mask: vec![false; grid.0 * grid.1],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 4] {
        self.values[i * self.grid.1 + j]
    }

    /// `[H·W, 4]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.values.iter().flat_map(|v| v.iter().copied()).collect();
        Tensor::from_vec(self.values.len(), 4, data).expect("label length")
    }

    /// `[H·W, 1]` with ones on valid cells.
    pub fn mask_tensor(&self) -> Tensor {
        Tensor::from_fn(self.valid_mask.len(), 1, |i, _| {
            if self.valid_mask[i] {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn num_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }
}

fn check_box(b: &BBox, grid: (usize, usize), stride: usize) -> Result<()> {
    b.validate()?;
    let (h, w) = ((grid.0 * stride) as f64, (grid.1 * stride) as f64);
    if b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > w || b.y1 > h {
        return Err(Error::Domain(format!(
            "box {b:?} lies outside the {w}×{h} image"
        )));
    }
    Ok(())
}

/// Cell `(i, j)` containing `(x, y)`, clamped to the grid.
pub(crate) fn cell_of(x: f64, y: f64, grid: (usize, usize), stride: usize) -> (usize, usize) {
    let s = stride as f64;
    let i = ((y / s).floor().max(0.0) as usize).min(grid.0 - 1);
    let j = ((x / s).floor().max(0.0) as usize).min(grid.1 - 1);
    (i, j)
}

/// Isotropic Gaussian of width `sigma` cells centred on the cell holding the box centre.
pub fn encode_cls_label(
    b: &BBox,
    grid: (usize, usize),
    stride: usize,
    sigma: f64,
) -> Result<ScoreMapLabel> {
    check_box(b, grid, stride)?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let (cx, cy) = b.center();
    let (ci, cj) = cell_of(cx, cy, grid, stride);
    let values = (0..grid.0 * grid.1)
        .map(|c| {
            let di = (c / grid.1) as f64 - ci as f64;
            let dj = (c % grid.1) as f64 - cj as f64;
            (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    Ok(ScoreMapLabel { grid, values })
}

/// Signed distances from each cell centre to the box edges, in stride units.
pub fn encode_reg_label(b: &BBox, grid: (usize, usize), stride: usize) -> Result<RegMapLabel> {
    check_box(b, grid, stride)?;
    let s = stride as f64;
    let mut out = RegMapLabel::zeros(grid);
    for c in 0..grid.0 * grid.1 {
        let cx = ((c % grid.1) as f64 + 0.5) * s;
        let cy = ((c / grid.1) as f64 + 0.5) * s;
        out.values[c] = [
            (cx - b.x0) / s,
            (cy - b.y0) / s,
            (b.x1 - cx) / s,
            (b.y1 - cy) / s,
        ];
        out.valid_mask[c] = cx >= b.x0 && cx <= b.x1 && cy >= b.y0 && cy <= b.y1;
    }
    Ok(out)
}
