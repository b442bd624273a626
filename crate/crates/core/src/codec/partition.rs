use std::fmt::Write as _;

use super::{CodecError, Frame};

/// One square transform block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Block {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

/// Quadtree tiling of a `width x height` area, blocks in coding order
/// (CTUs in raster order, z-order inside each CTU).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub width: usize,
    pub height: usize,
    pub blocks: Vec<Block>,
}

/// Splitting rule for [`partition_quadtree`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadtreeParams {
    pub max_size: usize,
    pub min_size: usize,
    pub var_threshold: f64,
}

impl Default for QuadtreeParams {
    fn default() -> Self {
        QuadtreeParams {
            max_size: 32,
            min_size: 4,
            var_threshold: 100.0,
        }
    }
}

impl QuadtreeParams {
    pub fn validate(&self) -> Result<(), CodecError> {
        let ok = |s: usize| matches!(s, 4 | 8 | 16 | 32);
        if !ok(self.max_size) || !ok(self.min_size) || self.min_size > self.max_size {
            return Err(CodecError::Config(format!(
                "block sizes must be in {{4,8,16,32}} with min <= max (got min {}, max {})",
                self.min_size, self.max_size
            )));
        }
        if self.var_threshold.is_nan() || self.var_threshold < 0.0 {
            return Err(CodecError::Config(format!(
                "variance threshold must be >= 0 (got {})",
                self.var_threshold
            )));
        }
        Ok(())
    }
}

/// Population variance of the `size x size` block at `(x, y)`.
pub fn block_variance(frame: &Frame, x: usize, y: usize, size: usize) -> f64 {
    let n = (size * size) as f64;
    let (mut s, mut s2) = (0.0f64, 0.0f64);
    for yy in y..y + size {
        for xx in x..x + size {
            let v = frame.get(xx, yy) as f64;
            s += v;
            s2 += v * v;
        }
    }
    let mean = s / n;
    (s2 / n - mean * mean).max(0.0)
}

fn split(frame: &Frame, x: usize, y: usize, size: usize, p: &QuadtreeParams, out: &mut Vec<Block>) {
    if size > p.min_size && block_variance(frame, x, y, size) >= p.var_threshold {
        let h = size / 2;
        for (dx, dy) in [(0, 0), (h, 0), (0, h), (h, h)] {
            split(frame, x + dx, y + dy, h, p, out);
        }
    } else {
        out.push(Block { x, y, size });
    }
}

/// Variance-driven quadtree. A block splits into four while its variance is
/// at least `var_threshold` and it is larger than `min_size`, so a zero
/// threshold always yields the finest tiling. Frames whose sides are not a
/// multiple of `max_size` are edge-replicated first; the partition then
/// covers the padded area.
pub fn partition_quadtree(frame: &Frame, params: &QuadtreeParams) -> Result<Partition, CodecError> {
    params.validate()?;
    let m = params.max_size;
    let (pw, ph) = (frame.width().div_ceil(m) * m, frame.height().div_ceil(m) * m);
    let padded;
    let src = if (pw, ph) == (frame.width(), frame.height()) {
        frame
    } else {
        padded = frame.pad_replicate(pw, ph);
        &padded
    };
    let mut blocks = Vec::new();
    for cy in (0..ph).step_by(m) {
        for cx in (0..pw).step_by(m) {
            split(src, cx, cy, m, params, &mut blocks);
        }
    }
    Ok(Partition {
        width: pw,
        height: ph,
        blocks,
    })
}

impl Partition {
    /// Number of times each pixel is covered; a valid tiling covers every
    /// pixel exactly once.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.width * self.height];
        for b in &self.blocks {
            for y in b.y..(b.y + b.size).min(self.height) {
                for x in b.x..(b.x + b.size).min(self.width) {
                    cov[y * self.width + x] += 1;
                }
            }
        }
        cov
    }

    pub fn is_tiling(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.x % b.size == 0 && b.y % b.size == 0 && b.x + b.size <= self.width && b.y + b.size <= self.height)
            && self.coverage().iter().all(|&c| c == 1)
    }

    /// Histogram of block sizes `[4, 8, 16, 32]`.
    pub fn size_histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for b in &self.blocks {
            h[b.size.trailing_zeros() as usize - 2] += 1;
        }
        h
    }

    /// One `x y size` line per block after a `width height` header.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.width, self.height);
        for b in &self.blocks {
            let _ = writeln!(s, "{} {} {}", b.x, b.y, b.size);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CodecError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse = |n: usize, l: &str, want: usize| -> Result<Vec<usize>, CodecError> {
            let v: Result<Vec<usize>, _> = l.split_whitespace().map(str::parse).collect();
            match v {
                Ok(v) if v.len() == want => Ok(v),
                _ => Err(CodecError::Format(format!("partition line {}: {l:?}", n + 1))),
            }
        };
        let (n, head) = lines.next().ok_or_else(|| CodecError::Format("empty partition file".into()))?;
        let wh = parse(n, head, 2)?;
        let mut blocks = Vec::new();
        for (n, l) in lines {
            let v = parse(n, l, 3)?;
            blocks.push(Block {
                x: v[0],
                y: v[1],
                size: v[2],
            });
        }
        Ok(Partition {
            width: wh[0],
            height: wh[1],
            blocks,
        })
    }
}

/// Replaces every pixel by the rounded mean of its partition block.
pub fn partition_mean_mask(recon: &Frame, partition: &Partition) -> Result<Frame, CodecError> {
    if partition.width < recon.width() || partition.height < recon.height() {
        return Err(CodecError::Dimensions(format!(
            "partition {}x{} does not cover frame {}x{}",
            partition.width,
            partition.height,
            recon.width(),
            recon.height()
        )));
    }
    let padded = recon.pad_replicate(partition.width, partition.height);
    let mut mask = padded.clone();
    for b in &partition.blocks {
        let mut sum = 0u64;
        for y in b.y..b.y + b.size {
            for x in b.x..b.x + b.size {
                sum += padded.get(x, y) as u64;
            }
        }
        let n = (b.size * b.size) as u64;
        let mean = ((2 * sum + n) / (2 * n)) as u8;
        for y in b.y..b.y + b.size {
            for x in b.x..b.x + b.size {
                mask.set(x, y, mean);
            }
        }
    }
    Ok(mask.crop(0, 0, recon.width(), recon.height()))
}
