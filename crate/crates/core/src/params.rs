//! Flat parameter vectors with a named block layout.
//!
//! All learnable state lives in a [`ParamVector`]: one `Vec<f64>` plus a
//! [`Layout`] mapping named blocks (weight matrices, bias vectors) onto
//! slices of it. Optimizer state, gradients, and serialization all reuse the
//! same layout, so block order is fixed once at construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One named block: a weight matrix (`shape.len() == 2`, row-major
/// `[out, in]`) or a bias vector (`shape.len() == 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_weight(&self) -> bool {
        self.shape.len() == 2
    }
}

/// Ordered list of blocks; immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("layout has no blocks".into()));
        }
        for b in &blocks {
            if b.is_empty() || b.shape.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "block '{}' has zero size",
                    b.name
                )));
            }
            if b.shape.len() > 2 {
                return Err(Error::InvalidArgument(format!(
                    "block '{}' has rank {} (only vectors and matrices are supported)",
                    b.name,
                    b.shape.len()
                )));
            }
        }
        Ok(Layout { blocks })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    /// Offset of the named block in the flat vector.
    pub fn offset_of(&self, name: &str) -> Option<usize> {
        let mut off = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(off);
            }
            off += b.len();
        }
        None
    }

    /// Iterate `(block, offset)` pairs in layout order.
    pub fn iter_offsets(&self) -> impl Iterator<Item = (&Block, usize)> {
        let mut off = 0;
        self.blocks.iter().map(move |b| {
            let cur = off;
            off += b.len();
            (b, cur)
        })
    }
}

/// Flat `f64` parameter vector with named block layout. Serializes as an
/// ordered list of `{name, shape, values}` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BlockData>", into = "Vec<BlockData>")]
pub struct ParamVector {
    layout: Layout,
    values: Vec<f64>,
}

/// Serialization form of one block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockData {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<ParamVector> for Vec<BlockData> {
    fn from(p: ParamVector) -> Self {
        p.layout
            .iter_offsets()
            .map(|(b, off)| BlockData {
                name: b.name.clone(),
                shape: b.shape.clone(),
                values: p.values[off..off + b.len()].to_vec(),
            })
            .collect()
    }
}

impl TryFrom<Vec<BlockData>> for ParamVector {
    type Error = Error;

    fn try_from(blocks: Vec<BlockData>) -> Result<Self> {
        let layout = Layout::new(
            blocks
                .iter()
                .map(|b| Block {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                })
                .collect(),
        )?;
        let mut values = Vec::with_capacity(layout.total_len());
        for b in &blocks {
            let want: usize = b.shape.iter().product();
            if b.values.len() != want {
                return Err(Error::DimMismatch {
                    expected: want,
                    got: b.values.len(),
                    context: format!("serialized block '{}'", b.name),
                });
            }
            values.extend_from_slice(&b.values);
        }
        ParamVector::from_values(layout, values)
    }
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.total_len();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimMismatch {
                expected: layout.total_len(),
                got: values.len(),
                context: "parameter vector length".into(),
            });
        }
        Ok(ParamVector { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let off = self.layout.offset_of(name)?;
        let len = self
            .layout
            .blocks()
            .iter()
            .find(|b| b.name == name)
            .map(Block::len)?;
        Some(&self.values[off..off + len])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let off = self.layout.offset_of(name)?;
        let len = self
            .layout
            .blocks()
            .iter()
            .find(|b| b.name == name)
            .map(Block::len)?;
        Some(&mut self.values[off..off + len])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// First block containing a non-finite entry, if any.
    pub fn first_non_finite_block(&self) -> Option<&str> {
        for (b, off) in self.layout.iter_offsets() {
            if self.values[off..off + b.len()]
                .iter()
                .any(|v| !v.is_finite())
            {
                return Some(&b.name);
            }
        }
        None
    }
}

/// Glorot-uniform weights, zero biases. Weight blocks `[out, in]` are drawn
/// uniformly from `(-a, a)` with `a = sqrt(6 / (in + out))`; vector blocks
/// are zeroed.
pub fn init_params(stream: &mut RngStream, layout: Layout) -> Result<ParamVector> {
    let mut p = ParamVector::zeros(layout);
    let blocks: Vec<(String, Vec<usize>, usize)> = p
        .layout
        .iter_offsets()
        .map(|(b, off)| (b.name.clone(), b.shape.clone(), off))
        .collect();
    for (_, shape, off) in &blocks {
        if shape.len() == 2 {
            let (fan_out, fan_in) = (shape[0], shape[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p.values[*off..*off + fan_out * fan_in] {
                *v = stream.uniform(-a, a);
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout_2x2() -> Layout {
        Layout::new(vec![Block {
            name: "w".into(),
            shape: vec![2, 2],
        }])
        .unwrap()
    }

    #[test]
    fn glorot_bound_on_2x2_block() {
        let mut s = RngStream::new(1, 0);
        let p = init_params(&mut s, layout_2x2()).unwrap();
        let bound = (6.0f64 / 4.0).sqrt();
        assert_eq!(p.len(), 4);
        for &v in p.values() {
            assert!(v.is_finite());
            assert!(v.abs() < bound, "{v} outside ({}, {})", -bound, bound);
        }
    }

    #[test]
    fn biases_are_zero() {
        let layout = Layout::new(vec![
            Block {
                name: "w".into(),
                shape: vec![2, 3],
            },
            Block {
                name: "b".into(),
                shape: vec![3],
            },
        ])
        .unwrap();
        let mut s = RngStream::new(9, 0);
        let p = init_params(&mut s, layout).unwrap();
        assert_eq!(p.block("b").unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn same_seed_same_params() {
        let mut a = RngStream::new(5, 1);
        let mut b = RngStream::new(5, 1);
        let pa = init_params(&mut a, layout_2x2()).unwrap();
        let pb = init_params(&mut b, layout_2x2()).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn zero_size_block_rejected() {
        let r = Layout::new(vec![Block {
            name: "w".into(),
            shape: vec![0, 2],
        }]);
        assert!(r.is_err());
    }

    #[test]
    fn empty_layout_rejected() {
        assert!(Layout::new(vec![]).is_err());
    }

    #[test]
    fn block_lookup_respects_order() {
        let layout = Layout::new(vec![
            Block {
                name: "first".into(),
                shape: vec![2],
            },
            Block {
                name: "second".into(),
                shape: vec![3],
            },
        ])
        .unwrap();
        assert_eq!(layout.offset_of("first"), Some(0));
        assert_eq!(layout.offset_of("second"), Some(2));
        assert_eq!(layout.offset_of("third"), None);
        assert_eq!(layout.total_len(), 5);
    }
}
