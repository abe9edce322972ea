use super::BoxXYWH;
use crate::error::{Error, Result};

/// Anchor size is this multiple of the level stride.
pub const SIZE_PER_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorLevel {
    pub stride: usize,
    pub anchor_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Global index of this level's first anchor.
    pub offset: usize,
}

impl AnchorLevel {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One square anchor per location per level, finest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub levels: Vec<AnchorLevel>,
    pub anchors: Vec<BoxXYWH>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn index(&self, level: usize, row: usize, col: usize) -> usize {
        let l = &self.levels[level];
        l.offset + row * l.cols + col
    }

    /// Inverse of [`AnchorGrid::index`].
    pub fn locate(&self, index: usize) -> Option<(usize, usize, usize)> {
        let level = self.levels.iter().rposition(|l| l.offset <= index)?;
        let l = &self.levels[level];
        let local = index - l.offset;
        (local < l.len()).then(|| (level, local / l.cols, local % l.cols))
    }
}

pub fn generate_anchors(h: usize, w: usize, levels: usize) -> Result<AnchorGrid> {
    if levels == 0 || levels > 24 {
        return Err(Error::Invalid(format!("unsupported level count {levels}")));
    }
    let multiple = 1 << (levels + 1);
    if h == 0 || w == 0 || h % multiple != 0 || w % multiple != 0 {
        return Err(Error::Indivisible { h, w, multiple });
    }
    let mut out = Vec::with_capacity(levels);
    let mut anchors = Vec::new();
    for i in 1..=levels {
        let stride = 1usize << (i + 1);
        let size = SIZE_PER_STRIDE * stride;
        let (rows, cols) = (h / stride, w / stride);
        out.push(AnchorLevel { stride, anchor_size: size, rows, cols, offset: anchors.len() });
        let s = stride as f64;
        for r in 0..rows {
            for c in 0..cols {
                let cx = s * (c as f64 + 0.5);
                let cy = s * (r as f64 + 0.5);
                anchors.push(BoxXYWH::centered(cx, cy, size as f64, size as f64)?);
            }
        }
    }
    Ok(AnchorGrid { levels: out, anchors })
}
