use super::EvalError;
use crate::codec::{partition_mean_mask, CodedTriple, Frame, Partition, ResidualPlane};
use crate::model::{predict, ModelWeights, Variant};
use crate::tensor::Tensor;

/// Square tiles of `size` pixels whose neighbours share `overlap` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileParams {
    pub size: usize,
    pub overlap: usize,
}

impl Default for TileParams {
    fn default() -> Self {
        TileParams { size: 64, overlap: 8 }
    }
}

impl TileParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.size == 0 || self.size % 4 != 0 || 2 * self.overlap >= self.size {
            return Err(EvalError::Config(format!(
                "tile size {} must be a positive multiple of 4 larger than twice the overlap {}",
                self.size, self.overlap
            )));
        }
        Ok(())
    }
}

/// Tile start offsets along one axis of length `len >= size`: a regular
/// grid with stride `size - overlap`, the last tile flush with the end.
pub fn tile_starts(len: usize, size: usize, overlap: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let step = size - overlap;
    let mut v: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + size < len).collect();
    v.push(len - size);
    v
}

/// Decoder-side planes a filter may read. Only the reconstruction is
/// always required; the residual and partition are needed by the variants
/// that use them.
#[derive(Debug, Clone, Copy)]
pub struct FilterInput<'a> {
    pub reconstruction: &'a Frame,
    pub residual: Option<&'a ResidualPlane>,
    pub partition: Option<&'a Partition>,
}

impl<'a> From<&'a CodedTriple> for FilterInput<'a> {
    fn from(t: &'a CodedTriple) -> Self {
        FilterInput {
            reconstruction: &t.reconstruction,
            residual: Some(&t.residual),
            partition: Some(&t.partition),
        }
    }
}

/// Normalized planes the network reads: the reconstruction and the
/// variant's side plane.
pub fn filter_inputs<'a>(variant: Variant, input: impl Into<FilterInput<'a>>) -> Result<(Vec<f32>, Option<Vec<f32>>), EvalError> {
    let input = input.into();
    let recon = input.reconstruction;
    let normalize = |d: &mut dyn Iterator<Item = f32>| d.map(|v| v / 255.0).collect::<Vec<f32>>();
    let aux = match variant {
        Variant::ReconOnlyEdsr => None,
        Variant::Rrnet | Variant::DualEdsr => {
            let r = input.residual.ok_or_else(|| EvalError::Config(format!("{variant} needs the residual plane")))?;
            if (r.width(), r.height()) != (recon.width(), recon.height()) {
                return Err(EvalError::Dimensions(format!(
                    "residual {}x{} vs reconstruction {}x{}",
                    r.width(),
                    r.height(),
                    recon.width(),
                    recon.height()
                )));
            }
            Some(normalize(&mut r.data().iter().map(|&v| v as f32)))
        }
        Variant::PartitionRecon => {
            let p = input.partition.ok_or_else(|| EvalError::Config(format!("{variant} needs the block partition")))?;
            let mask = partition_mean_mask(recon, p)?;
            Some(normalize(&mut mask.data().iter().map(|&v| v as f32)))
        }
    };
    Ok((normalize(&mut recon.data().iter().map(|&v| v as f32)), aux))
}

/// Edge-replicating pad of a `w x h` plane to `pw x ph`.
pub(crate) fn pad_plane(src: &[f32], w: usize, h: usize, pw: usize, ph: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let row = &src[y.min(h - 1) * w..][..w];
        out.extend((0..pw).map(|x| row[x.min(w - 1)]));
    }
    out
}

fn window(src: &[f32], stride: usize, x: usize, y: usize, size: usize) -> Tensor<f32> {
    let mut out = Vec::with_capacity(size * size);
    for row in y..y + size {
        out.extend_from_slice(&src[row * stride + x..][..size]);
    }
    Tensor::from_vec([1, 1, size, size], out).expect("tile shape")
}

/// Runs the in-loop filter over a coded frame in overlapping tiles,
/// averages overlaps, and returns the clipped, rounded 8-bit result.
pub fn apply_filter<'a>(model: &ModelWeights, input: impl Into<FilterInput<'a>>, tiles: &TileParams) -> Result<Frame, EvalError> {
    tiles.validate()?;
    let input = input.into();
    let (w, h) = (input.reconstruction.width(), input.reconstruction.height());
    let (pw, ph) = (w.max(tiles.size), h.max(tiles.size));
    let (recon, aux) = filter_inputs(model.config().variant, input)?;
    let recon = pad_plane(&recon, w, h, pw, ph);
    let aux = aux.map(|a| pad_plane(&a, w, h, pw, ph));
    let mut sum = vec![0.0f64; pw * ph];
    let mut count = vec![0u32; pw * ph];
    let n = tiles.size;
    for &ty in &tile_starts(ph, n, tiles.overlap) {
        for &tx in &tile_starts(pw, n, tiles.overlap) {
            let out = predict(
                model,
                window(&recon, pw, tx, ty, n),
                aux.as_ref().map(|a| window(a, pw, tx, ty, n)),
            )?;
            for (i, &v) in out.data().iter().enumerate() {
                let idx = (ty + i / n) * pw + tx + i % n;
                sum[idx] += v as f64;
                count[idx] += 1;
            }
        }
    }
    Ok(Frame::from_fn(w, h, |x, y| {
        let i = y * pw + x;
        (sum[i] / count[i] as f64 * 255.0).round().clamp(0.0, 255.0) as u8
    }))
}
