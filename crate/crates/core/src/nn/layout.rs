use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};

/// Architecture of a ReLU multilayer perceptron.
///
/// Layers are numbered from 0 (the first hidden layer) to `hidden_dims.len()`
/// (the classifier). `block_boundaries` lists the layer indices at which a new
/// block starts, so `[2]` on a three-layer net yields blocks `{0, 1} | {2}`.
/// An empty list puts the whole network in a single block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub block_boundaries: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            num_classes,
            block_boundaries: Vec::new(),
        }
    }

    pub fn with_blocks(mut self, block_boundaries: Vec<usize>) -> Self {
        self.block_boundaries = block_boundaries;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn num_blocks(&self) -> usize {
        self.block_boundaries.len() + 1
    }

    /// Width of every activation, input first and logits last.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!(
                "network dims must be >= 1 (input_dim={}, num_classes={})",
                self.input_dim, self.num_classes
            )));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::Config(format!("hidden layer {i} has width 0")));
        }
        let layers = self.num_layers();
        let mut prev = 0;
        for &b in &self.block_boundaries {
            if b <= prev || b >= layers {
                return Err(Error::Config(format!(
                    "block boundaries {:?} must be strictly increasing within 1..{layers}",
                    self.block_boundaries
                )));
            }
            prev = b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    Bias,
}

/// One contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: usize,
    pub role: Role,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Maps the flat parameter vector onto layers and blocks.
///
/// Each layer owns a weight segment (`fan_out x fan_in`, row-major) followed by
/// its bias segment. Blocks are numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    segments: Vec<Segment>,
    block_of_layer: Vec<usize>,
    total_len: usize,
}

impl LayerLayout {
    pub fn from_spec(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut segments = Vec::with_capacity(2 * spec.num_layers());
        let mut offset = 0;
        for layer in 0..spec.num_layers() {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            segments.push(Segment {
                layer,
                role: Role::Weight,
                offset,
                len: fan_in * fan_out,
                fan_in,
                fan_out,
            });
            offset += fan_in * fan_out;
            segments.push(Segment {
                layer,
                role: Role::Bias,
                offset,
                len: fan_out,
                fan_in,
                fan_out,
            });
            offset += fan_out;
        }
        let block_of_layer = (0..spec.num_layers())
            .map(|l| 1 + spec.block_boundaries.iter().filter(|&&b| b <= l).count())
            .collect();
        let layout = Self {
            segments,
            block_of_layer,
            total_len: offset,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0;
        for s in &self.segments {
            if s.offset != cursor {
                return Err(Error::Shape(format!(
                    "segment for layer {} starts at {} but previous ended at {cursor}",
                    s.layer, s.offset
                )));
            }
            if s.layer >= self.block_of_layer.len() {
                return Err(Error::Shape(format!("layer {} has no block", s.layer)));
            }
            cursor += s.len;
        }
        if cursor != self.total_len {
            return Err(Error::Shape(format!(
                "segments cover {cursor} entries, expected {}",
                self.total_len
            )));
        }
        let mut expected = 1;
        for &b in &self.block_of_layer {
            if b == expected + 1 {
                expected = b;
            } else if b != expected {
                return Err(Error::Shape(format!(
                    "block assignment {:?} is not contiguous from 1",
                    self.block_of_layer
                )));
            }
        }
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn num_layers(&self) -> usize {
        self.block_of_layer.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_of_layer.last().copied().unwrap_or(0)
    }

    /// 1-based block index of `layer`.
    pub fn block_of(&self, layer: usize) -> usize {
        self.block_of_layer[layer]
    }

    pub fn weight(&self, layer: usize) -> &Segment {
        &self.segments[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Segment {
        &self.segments[2 * layer + 1]
    }

    /// Index of the deepest layer that belongs to `block`.
    pub fn last_layer_of_block(&self, block: usize) -> Option<usize> {
        self.block_of_layer.iter().rposition(|&b| b == block)
    }

    /// Parameter index range covered by `block` (1-based).
    pub fn block_range(&self, block: usize) -> Range<usize> {
        let mut start = None;
        let mut end = 0;
        for s in &self.segments {
            if self.block_of_layer[s.layer] == block {
                start.get_or_insert(s.offset);
                end = s.offset + s.len;
            }
        }
        match start {
            Some(s) => s..end,
            None => 0..0,
        }
    }

    /// Parameter index range of the first `blocks` blocks.
    pub fn prefix_range(&self, blocks: usize) -> Range<usize> {
        if blocks == 0 {
            return 0..0;
        }
        0..self.block_range(blocks.min(self.num_blocks())).end
    }
}
