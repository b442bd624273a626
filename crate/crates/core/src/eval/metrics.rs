use super::EvalError;
use crate::codec::Frame;

/// Mean squared error between two equally sized frames.
pub fn frame_mse(a: &Frame, b: &Frame) -> Result<f64, EvalError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(EvalError::Dimensions(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let sum: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.data().len().max(1) as f64)
}

/// `10 log10(255^2 / MSE)`; identical frames give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64, EvalError> {
    Ok(psnr_from_mse(frame_mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// Renders a PSNR with four decimals, or `inf`.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}
