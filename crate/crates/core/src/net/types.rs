use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Encoder outputs at the two deepest scales plus the shallower skip maps
/// the decoder consumes. All tensors are channel-first `[C, h, w]`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    /// Larger-resolution map (output of the third encoder block).
    pub f_l: Tensor,
    /// Smaller-resolution map (output of the fourth block), half the size of `f_l`.
    pub f_s: Tensor,
    /// Outputs of the first two blocks, shallow to deep.
    pub skips: Vec<Tensor>,
}

/// Row-stochastic attention weights, rows indexed by locations of the
/// attending map and columns by locations of the attended one.
#[derive(Clone, Debug)]
pub struct AttentionMatrix {
    a: Tensor,
}

impl AttentionMatrix {
    pub const ROW_SUM_TOL: f64 = 1e-6;

    pub fn new(a: Tensor) -> Result<Self> {
        if a.rank() != 2 {
            return Err(Error::shape("attention", "rank 2", format!("{:?}", a.shape())));
        }
        let cols = a.shape()[1];
        for (i, row) in a.data().chunks(cols).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOL || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "attention row {i} is not a distribution (sum {s})"
                )));
            }
        }
        Ok(Self { a })
    }

    pub fn rows(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.a.row(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.a
    }
}

/// Unit-norm descriptors laid out `[H, W, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DescriptorMap {
    pub const UNIT_TOL: f64 = 1e-5;

    /// Wraps `[H, W, D]` data, checking every vector has unit norm.
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::new_unchecked(height, width, dim, data)?;
        for i in 0..height * width {
            let n = m.at_index(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > Self::UNIT_TOL {
                return Err(Error::InvalidArgument(format!("descriptor {i} has norm {n}")));
            }
        }
        Ok(m)
    }

    pub(crate) fn new_unchecked(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * dim || dim == 0 {
            return Err(Error::shape(
                "descriptor_map",
                format!("{height}x{width}x{dim}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    /// Builds a map by normalizing arbitrary per-pixel vectors.
    pub fn from_raw(height: usize, width: usize, dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * dim || dim == 0 {
            return Err(Error::shape(
                "descriptor_map",
                format!("{height}x{width}x{dim}"),
                format!("{} values", data.len()),
            ));
        }
        for v in data.chunks_mut(dim) {
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|a| *a /= n);
            }
        }
        Self::new(height, width, dim, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.at_index(y * self.width + x)
    }

    pub fn at_index(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width, self.dim], self.data.clone()).expect("descriptor shape")
    }
}

/// Per-pixel matchability in `[0, 1]`, laid out `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistinctivenessMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DistinctivenessMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "distinctiveness_map",
                format!("{height}x{width}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("distinctiveness {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width], self.data.clone()).expect("score shape")
    }
}
