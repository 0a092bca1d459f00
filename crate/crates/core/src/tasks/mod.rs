//! Procedural datasets and target handling.

mod blobs;
mod encoding;
mod export;
mod mixup;
mod shapes;

pub use blobs::{gen_blobs, nearest_center, BlobConfig, BlobTask};
pub use encoding::{decode_targets, encode_targets};
pub use export::{export_shapes, write_pgm};
pub use mixup::{mix, mixup, sample_lambda};
pub use shapes::{
    gen_shape, gen_shapes, label_vertices, render_vertices, ShapeImage, ShapeKind, ShapeLabels, EQUAL_SIDE_TOLERANCE,
    IMAGE_SIZE, MARGIN, MIN_RECTANGLE_ASPECT, MIN_TRIANGLE_SIDE_RATIO, POINTS_PER_VERTEX,
};

use crate::error::{Error, Result};

/// Examples with flattened inputs and concatenated one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Per-example input extents.
    pub input_shape: Vec<usize>,
    /// Class count of each target block.
    pub heads: Vec<usize>,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    /// Class index per example, per head.
    pub labels: Vec<Vec<usize>>,
}

/// A contiguous copy of some examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn input_len(&self) -> usize {
        self.inputs.len() / self.len.max(1)
    }

    pub fn target_width(&self) -> usize {
        self.targets.len() / self.len.max(1)
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let k = self.input_len();
        &self.inputs[i * k..(i + 1) * k]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let k = self.target_width();
        &self.targets[i * k..(i + 1) * k]
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn target_width(&self) -> usize {
        self.heads.iter().sum()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let k = self.input_len();
        &self.inputs[i * k..(i + 1) * k]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let k = self.target_width();
        &self.targets[i * k..(i + 1) * k]
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_len());
        let mut targets = Vec::with_capacity(indices.len() * self.target_width());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        Batch {
            len: indices.len(),
            inputs,
            targets,
        }
    }

    fn from_examples(input_shape: Vec<usize>, heads: Vec<usize>, examples: Vec<(Vec<f64>, Vec<usize>)>) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut labels = Vec::new();
        for (x, y) in examples {
            inputs.extend(x);
            targets.extend(encode_targets(&y, &heads)?);
            labels.push(y);
        }
        let k: usize = input_shape.iter().product();
        if inputs.len() != k * labels.len() {
            return Err(Error::Validation("example inputs do not match the input shape".into()));
        }
        Ok(Self {
            input_shape,
            heads,
            inputs,
            targets,
            labels,
        })
    }
}
