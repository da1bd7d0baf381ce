use half::f16;

use crate::error::{EccoError, Result};

/// Elements per group for the 4x codec.
pub const GROUP_SIZE_4X: usize = 128;
/// Elements per group for the 2x codec.
pub const GROUP_SIZE_2X: usize = 64;

/// Row-major 2-D tensor of fp16 values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF16 {
    rows: usize,
    cols: usize,
    values: Vec<f16>,
}

impl TensorF16 {
    pub fn new(rows: usize, cols: usize, values: Vec<f16>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(EccoError::ShapeMismatch {
                rows,
                cols,
                len: values.len(),
            });
        }
        if values.is_empty() {
            return Err(EccoError::EmptyTensor);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EccoError::NonFinite);
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_f32(rows: usize, cols: usize, values: &[f32]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| f16::from_f32(v)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f16] {
        &self.values
    }

    pub fn global_absmax(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.to_f64().abs())
            .fold(0.0, f64::max)
    }

    pub fn group_count(&self, group_size: usize) -> usize {
        self.values.len().div_ceil(group_size)
    }

    /// Zero elements appended to fill the final group.
    pub fn pad_count(&self, group_size: usize) -> usize {
        self.group_count(group_size) * group_size - self.values.len()
    }
}

/// One fixed-size run of consecutive elements. Trailing `pad` entries are
/// zero padding past the end of the tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub values: Vec<f16>,
    pub index: usize,
    pub pad: usize,
}

impl Group {
    pub fn new(values: Vec<f16>, index: usize) -> Self {
        Self {
            values,
            index,
            pad: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of real (non-pad) elements.
    pub fn valid(&self) -> usize {
        self.values.len() - self.pad
    }

    /// Column of element `i` within a tensor of `cols` columns.
    pub fn column(&self, i: usize, cols: usize) -> usize {
        (self.index * self.values.len() + i) % cols
    }
}

/// Splits `t` into row-major groups of `group_size`, zero-padding the last one.
pub fn partition_groups_with(t: &TensorF16, group_size: usize) -> Result<Vec<Group>> {
    if t.is_empty() {
        return Err(EccoError::EmptyTensor);
    }
    Ok(t.values
        .chunks(group_size)
        .enumerate()
        .map(|(index, chunk)| {
            let mut values = chunk.to_vec();
            let pad = group_size - chunk.len();
            values.resize(group_size, f16::ZERO);
            Group { values, index, pad }
        })
        .collect())
}

/// 128-element groups for the 4x codec.
pub fn partition_groups(t: &TensorF16) -> Result<Vec<Group>> {
    partition_groups_with(t, GROUP_SIZE_4X)
}

/// Reassembles groups into a `rows x cols` tensor, dropping padding.
pub fn assemble_groups(rows: usize, cols: usize, groups: &[Vec<f16>]) -> Result<TensorF16> {
    let mut values: Vec<f16> = groups.iter().flatten().copied().collect();
    values.truncate(rows * cols);
    TensorF16::new(rows, cols, values)
}
