use super::partition::{partition_quadtree, Partition, QuadtreeParams};
use super::quant::{dequantize, quant_step, quantize, round_half_away};
use super::transform::{dct2d, idct2d};
use super::{CodecError, Frame, ResidualPlane};

/// Output of one intra encode: everything the filter and its training need.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedTriple {
    pub original: Frame,
    pub prediction: Frame,
    pub reconstruction: Frame,
    /// Dequantized, inverse-transformed residual that was added to the
    /// prediction (before clipping).
    pub residual: ResidualPlane,
    /// Transform partition of the (edge-padded) coded area.
    pub partition: Partition,
    pub qp: u8,
    pub rate_proxy: f64,
    pub lossless: bool,
}

/// DC prediction of an `size x size` block from already reconstructed
/// neighbours: the row above and the column to the left, where they exist.
/// Falls back to mid-gray 128 at the top-left corner.
pub fn dc_predict(recon: &Frame, x: usize, y: usize, size: usize) -> u8 {
    let mut sum = 0u32;
    let mut count = 0u32;
    if y > 0 {
        for xx in x..x + size {
            sum += recon.get(xx, y - 1) as u32;
        }
        count += size as u32;
    }
    if x > 0 {
        for yy in y..y + size {
            sum += recon.get(x - 1, yy) as u32;
        }
        count += size as u32;
    }
    if count == 0 {
        return 128;
    }
    // Non-negative mean, so half-away-from-zero is half-up.
    ((2 * sum + count) / (2 * count)) as u8
}

/// Encodes `frame` block by block in coding order: DC prediction from the
/// reconstruction so far, DCT of the prediction error, uniform quantization
/// (skipped when `lossless`), and reconstruction from the dequantized
/// residual. Frames are edge-padded to a multiple of the largest block and
/// cropped back afterwards.
pub fn encode_frame(frame: &Frame, qp: u8, lossless: bool, params: &QuadtreeParams) -> Result<CodedTriple, CodecError> {
    quant_step(qp)?;
    let partition = partition_quadtree(frame, params)?;
    let (pw, ph) = (partition.width, partition.height);
    let src = frame.pad_replicate(pw, ph);
    let mut recon = Frame::filled(pw, ph, 0);
    let mut pred_plane = Frame::filled(pw, ph, 0);
    let mut resid = ResidualPlane::zeros(pw, ph);
    let mut rate = 0.0f64;

    for b in &partition.blocks {
        let n = b.size;
        let pred = dc_predict(&recon, b.x, b.y, n);
        let mut err = Vec::with_capacity(n * n);
        for y in b.y..b.y + n {
            for x in b.x..b.x + n {
                err.push(src.get(x, y) as f64 - pred as f64);
            }
        }
        let coefs = dct2d(&err, n)?;
        let rebuilt = if lossless {
            rate += coefs.iter().map(|c| (1.0 + round_half_away(c.abs())).log2()).sum::<f64>();
            coefs
        } else {
            let levels = quantize(&coefs, qp)?;
            rate += levels.iter().map(|&q| (1.0 + q.unsigned_abs() as f64).log2()).sum::<f64>();
            dequantize(&levels, qp)?
        };
        let spatial = idct2d(&rebuilt, n)?;
        for (i, v) in spatial.iter().enumerate() {
            let (x, y) = (b.x + i % n, b.y + i / n);
            let r = round_half_away(*v).clamp(-255.0, 255.0) as i16;
            resid.set(x, y, r);
            pred_plane.set(x, y, pred);
            recon.set(x, y, (pred as i16 + r).clamp(0, 255) as u8);
        }
    }

    let (w, h) = (frame.width(), frame.height());
    Ok(CodedTriple {
        original: frame.clone(),
        prediction: pred_plane.crop(0, 0, w, h),
        reconstruction: recon.crop(0, 0, w, h),
        residual: resid.crop(0, 0, w, h),
        partition,
        qp,
        rate_proxy: rate,
        lossless,
    })
}

impl CodedTriple {
    /// Checks `reconstruction == clip(prediction + residual)` on every pixel.
    pub fn satisfies_pixel_identity(&self) -> bool {
        self.reconstruction
            .data()
            .iter()
            .zip(self.prediction.data())
            .zip(self.residual.data())
            .all(|((&r, &p), &d)| r as i16 == (p as i16 + d).clamp(0, 255))
    }
}
