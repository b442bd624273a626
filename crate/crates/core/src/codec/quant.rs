use super::CodecError;

pub const QP_MAX: u8 = 51;

/// Rounds to nearest, ties away from zero.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    // f64::round already breaks ties away from zero.
    v.round()
}

/// Quantizer step `2^((qp - 4) / 6)`: doubles every 6 QP, 1.0 at QP 4.
pub fn quant_step(qp: u8) -> Result<f64, CodecError> {
    if qp > QP_MAX {
        return Err(CodecError::Qp(qp as i64));
    }
    Ok(2f64.powf((qp as f64 - 4.0) / 6.0))
}

pub fn quantize(coefs: &[f64], qp: u8) -> Result<Vec<i32>, CodecError> {
    let step = quant_step(qp)?;
    Ok(coefs.iter().map(|c| round_half_away(c / step) as i32).collect())
}

pub fn dequantize(levels: &[i32], qp: u8) -> Result<Vec<f64>, CodecError> {
    let step = quant_step(qp)?;
    Ok(levels.iter().map(|&q| q as f64 * step).collect())
}
