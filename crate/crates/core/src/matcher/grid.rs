use crate::error::{Error, Result};
use crate::net::{DescriptorMap, DistinctivenessMap};

/// Pixel coordinate of grid index `g` along an axis of `size` pixels:
/// `(g + 0.5)·size/G − 0.5`.
pub fn grid_anchor(g: usize, size: usize, grid: usize) -> f64 {
    (g as f64 + 0.5) * size as f64 / grid as f64 - 0.5
}

/// Corners and weights of a bilinear lookup at `(x, y)`, clamped to the
/// `[0, w−1] × [0, h−1]` rectangle.
pub(crate) fn bilinear_taps(x: f64, y: f64, w: usize, h: usize) -> [(usize, f64); 4] {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
}

/// Bilinear descriptor lookup, renormalized to unit length.
pub fn sample_descriptor(d: &DescriptorMap, x: f64, y: f64, out: &mut [f64]) {
    out.fill(0.0);
    for (i, w) in bilinear_taps(x, y, d.width(), d.height()) {
        if w != 0.0 {
            for (o, v) in out.iter_mut().zip(d.at_index(i)) {
                *o += w * v;
            }
        }
    }
    let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v /= n);
    }
}

pub fn sample_score(r: &DistinctivenessMap, x: f64, y: f64) -> f64 {
    bilinear_taps(x, y, r.width(), r.height())
        .iter()
        .map(|&(i, w)| if w != 0.0 { w * r.data()[i] } else { 0.0 })
        .sum()
}

/// Descriptors and scores interpolated on a `G × G` grid over an image.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDescriptors {
    grid: usize,
    dim: usize,
    image_width: usize,
    image_height: usize,
    descriptors: Vec<f64>,
    scores: Vec<f64>,
}

impl GridDescriptors {
    /// Wraps precomputed cell data laid out row-major `[G, G, D]` and `[G, G]`.
    pub fn new(
        grid: usize,
        dim: usize,
        image_width: usize,
        image_height: usize,
        descriptors: Vec<f64>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if grid < 1 || dim == 0 || descriptors.len() != grid * grid * dim || scores.len() != grid * grid {
            return Err(Error::shape(
                "grid_descriptors",
                format!("{grid}x{grid}x{dim} descriptors and {grid}x{grid} scores"),
                format!("{} and {}", descriptors.len(), scores.len()),
            ));
        }
        Ok(Self {
            grid,
            dim,
            image_width,
            image_height,
            descriptors,
            scores,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.image_width, self.image_height)
    }

    pub fn descriptor(&self, cell: usize) -> &[f64] {
        &self.descriptors[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn score(&self, cell: usize) -> f64 {
        self.scores[cell]
    }

    /// Pixel coordinates `(x, y)` of a cell's anchor.
    pub fn pixel(&self, cell: usize) -> [f64; 2] {
        let (gx, gy) = (cell % self.grid, cell / self.grid);
        [
            grid_anchor(gx, self.image_width, self.grid),
            grid_anchor(gy, self.image_height, self.grid),
        ]
    }

    /// Horizontal and vertical anchor spacing in pixels.
    pub fn spacing(&self) -> [f64; 2] {
        [
            self.image_width as f64 / self.grid as f64,
            self.image_height as f64 / self.grid as f64,
        ]
    }
}

/// Interpolates `d` (renormalized) and `r` (not renormalized) at every grid
/// anchor.
pub fn grid_sample(d: &DescriptorMap, r: &DistinctivenessMap, grid: usize) -> Result<GridDescriptors> {
    if grid < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be >= 2, got {grid}")));
    }
    if (d.width(), d.height()) != (r.width(), r.height()) {
        return Err(Error::shape(
            "grid_sample",
            format!("{}x{} scores", d.width(), d.height()),
            format!("{}x{}", r.width(), r.height()),
        ));
    }
    let dim = d.dim();
    let mut descriptors = vec![0.0; grid * grid * dim];
    let mut scores = vec![0.0; grid * grid];
    for gy in 0..grid {
        let y = grid_anchor(gy, d.height(), grid);
        for gx in 0..grid {
            let x = grid_anchor(gx, d.width(), grid);
            let cell = gy * grid + gx;
            sample_descriptor(d, x, y, &mut descriptors[cell * dim..(cell + 1) * dim]);
            scores[cell] = sample_score(r, x, y);
        }
    }
    GridDescriptors::new(grid, dim, d.width(), d.height(), descriptors, scores)
}
