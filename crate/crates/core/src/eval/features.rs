use std::fs;
use std::path::{Path, PathBuf};

use super::filter::{filter_inputs, pad_plane, FilterInput};
use super::EvalError;
use crate::codec::Frame;
use crate::model::{variant_forward, ModelError, ModelWeights};
use crate::tensor::{Tape, Tensor};

/// Names accepted by [`export_feature_maps`] for this model.
pub fn feature_layer_names(model: &ModelWeights) -> Result<Vec<String>, EvalError> {
    let mut tape = Tape::new();
    let z = tape.input(Tensor::zeros([1, 1, 4, 4]));
    let a = (model.config().variant.arity() == 2).then(|| tape.input(Tensor::zeros([1, 1, 4, 4])));
    Ok(variant_forward(&mut tape, model, z, a)?.tap_names())
}

/// Min-max maps one channel to 8 bits; a constant channel becomes mid-gray.
pub fn normalize_channel(values: &[f32], width: usize, height: usize) -> Frame {
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    Frame::from_fn(width, height, |x, y| {
        if hi <= lo {
            128
        } else {
            let v = values[y * width + x];
            ((v - lo) as f64 / (hi - lo) as f64 * 255.0).round().clamp(0.0, 255.0) as u8
        }
    })
}

/// Runs the whole frame (edge-padded to a multiple of 4) through the
/// network and writes every channel of `layer` as `{layer}_c{NNN}.pgm`,
/// cropped to the frame size when the layer runs at full resolution.
pub fn export_feature_maps<'a>(
    model: &ModelWeights,
    input: impl Into<FilterInput<'a>>,
    layer: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    let input = input.into();
    let valid = feature_layer_names(model)?;
    if !valid.iter().any(|n| n == layer) {
        return Err(ModelError::UnknownLayer {
            name: layer.to_string(),
            valid,
        }
        .into());
    }
    let (w, h) = (input.reconstruction.width(), input.reconstruction.height());
    let (pw, ph) = (w.div_ceil(4) * 4, h.div_ceil(4) * 4);
    let (recon, aux) = filter_inputs(model.config().variant, input)?;
    let mut tape = Tape::new();
    let z = tape.input(Tensor::from_vec([1, 1, ph, pw], pad_plane(&recon, w, h, pw, ph))?);
    let a = match aux {
        Some(a) => Some(tape.input(Tensor::from_vec([1, 1, ph, pw], pad_plane(&a, w, h, pw, ph))?)),
        None => None,
    };
    let f = variant_forward(&mut tape, model, z, a)?;
    let act = tape.value(f.tap(layer).expect("validated above"));
    let s = act.shape();
    // Downsampled layers are cropped proportionally.
    let (cw, ch) = ((w * s.w).div_ceil(pw), (h * s.h).div_ceil(ph));
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let plane = &act.data()[c * s.plane()..(c + 1) * s.plane()];
        let cropped: Vec<f32> = (0..ch).flat_map(|y| plane[y * s.w..y * s.w + cw].iter().copied()).collect();
        let path = out_dir.join(format!("{layer}_c{c:03}.pgm"));
        normalize_channel(&cropped, cw, ch).write_pgm(&path)?;
        written.push(path);
    }
    Ok(written)
}
