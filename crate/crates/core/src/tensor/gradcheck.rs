//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamTensor, Shape, Tape, Tensor, TensorError, Var};

/// Finite-difference step used by every check.
pub const FD_STEP: f64 = 1e-6;

/// Relative error of one gradient tensor (or one directional derivative).
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub label: String,
    pub checked: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn extend(&mut self, other: GradCheckReport) {
        self.entries.extend(other.entries);
    }
}

/// Which coordinates of each tensor to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// At most this many distinct coordinates per tensor, drawn uniformly.
    Sample(usize),
}

fn norm_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-300 {
        diff
    } else {
        diff / denom
    }
}

fn loss_value<F>(params: &[ParamTensor<f64>], forward: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, &[ParamTensor<f64>]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    Ok(tape.value(loss).data()[0])
}

/// Compares the taped gradient of `forward`'s scalar output with central
/// differences, per tensor (norm-wise relative error over the perturbed
/// coordinates) and along one random direction through all tensors.
///
/// Every tensor the check should cover must be passed in `params` and
/// bound by `forward` through [`Tape::param`] with its index as slot.
pub fn finite_difference<F>(
    params: &mut [ParamTensor<f64>],
    coords: Coords,
    seed: u64,
    forward: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[ParamTensor<f64>]) -> Result<Var, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.iter_mut() {
        p.tensor.clear_grad();
    }
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    tape.backward(loss, params)?;
    drop(tape);

    let h = FD_STEP;
    let mut report = GradCheckReport::default();
    for i in 0..params.len() {
        let len = params[i].tensor.len();
        let grad: Vec<f64> = params[i]
            .tensor
            .grad()
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; len]);
        let picks: Vec<usize> = match coords {
            Coords::All => (0..len).collect(),
            Coords::Sample(m) if m >= len => (0..len).collect(),
            Coords::Sample(m) => rand::seq::index::sample(&mut rng, len, m).into_vec(),
        };
        let mut analytic = Vec::with_capacity(picks.len());
        let mut numeric = Vec::with_capacity(picks.len());
        for &j in &picks {
            let v = params[i].tensor.data()[j];
            params[i].tensor.data_mut()[j] = v + h;
            let lp = loss_value(params, &forward)?;
            params[i].tensor.data_mut()[j] = v - h;
            let lm = loss_value(params, &forward)?;
            params[i].tensor.data_mut()[j] = v;
            analytic.push(grad[j]);
            numeric.push((lp - lm) / (2.0 * h));
        }
        report.entries.push(GradCheckEntry {
            label: params[i].name.clone(),
            checked: picks.len(),
            rel_error: norm_rel(&analytic, &numeric),
        });
    }

    // Directional derivative along a random unit vector of signs covering
    // everything. Unit length keeps each coordinate's step far below `h`, so
    // the probe does not straddle PReLU or max-pool kinks in large networks.
    let total: usize = params.iter().map(|p| p.tensor.len()).sum();
    let unit = 1.0 / (total.max(1) as f64).sqrt();
    let dirs: Vec<Vec<f64>> = params
        .iter()
        .map(|p| (0..p.tensor.len()).map(|_| if rng.random::<bool>() { unit } else { -unit }).collect())
        .collect();
    let analytic: f64 = params
        .iter()
        .zip(&dirs)
        .map(|(p, d)| p.tensor.grad().map_or(0.0, |g| g.iter().zip(d).map(|(a, b)| a * b).sum()))
        .sum();
    let shift = |params: &mut [ParamTensor<f64>], s: f64| {
        for (p, d) in params.iter_mut().zip(&dirs) {
            for (v, dv) in p.tensor.data_mut().iter_mut().zip(d) {
                *v += s * dv;
            }
        }
    };
    let originals: Vec<Vec<f64>> = params.iter().map(|p| p.tensor.data().to_vec()).collect();
    shift(params, h);
    let lp = loss_value(params, &forward)?;
    for (p, o) in params.iter_mut().zip(&originals) {
        p.tensor.data_mut().copy_from_slice(o);
    }
    shift(params, -h);
    let lm = loss_value(params, &forward)?;
    for (p, o) in params.iter_mut().zip(&originals) {
        p.tensor.data_mut().copy_from_slice(o);
    }
    report.entries.push(GradCheckEntry {
        label: "directional".into(),
        checked: params.iter().map(|p| p.tensor.len()).sum(),
        rel_error: norm_rel(&[analytic], &[(lp - lm) / (2.0 * h)]),
    });
    Ok(report)
}

/// Tensor of the given shape with entries uniform in `[lo, hi)`.
pub fn uniform(rng: &mut impl Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<f64> {
    let shape = shape.into();
    let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn prefix(report: GradCheckReport, op: &str) -> GradCheckReport {
    GradCheckReport {
        entries: report
            .entries
            .into_iter()
            .map(|mut e| {
                e.label = format!("{op}/{}", e.label);
                e
            })
            .collect(),
    }
}

/// Runs the finite-difference check over every tape operation on small
/// random inputs (entries in `[-1, 1]`, shapes no larger than `(2,4,8,8)`).
pub fn check_all_ops(seed: u64) -> Result<GradCheckReport, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut run = |name: &str,
                   inputs: Vec<(&str, Tensor<f64>)>,
                   target: Tensor<f64>,
                   rng: &mut ChaCha8Rng,
                   f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>|
     -> Result<(), TensorError> {
        let mut params: Vec<ParamTensor<f64>> = inputs.into_iter().map(|(n, t)| ParamTensor::new(n, t)).collect();
        let r = finite_difference(&mut params, Coords::All, rng.random(), |tape, ps| {
            let vars: Vec<Var> = ps.iter().enumerate().map(|(i, p)| tape.param(p, i)).collect();
            let out = f(tape, &vars)?;
            let tv = tape.input(target.clone());
            tape.mse_loss(out, tv)
        })?;
        report.extend(prefix(r, name));
        Ok(())
    };

    for &(stride, pad) in &[(1usize, 1usize), (2, 1), (1, 0)] {
        let x = uniform(&mut rng, [2, 3, 7, 6], -1.0, 1.0);
        let w = uniform(&mut rng, [4, 3, 3, 3], -1.0, 1.0);
        let b = uniform(&mut rng, [1, 4, 1, 1], -1.0, 1.0);
        let oh = (7 + 2 * pad - 3) / stride + 1;
        let ow = (6 + 2 * pad - 3) / stride + 1;
        let target = uniform(&mut rng, [2, 4, oh, ow], -1.0, 1.0);
        run(
            &format!("conv2d_s{stride}_p{pad}"),
            vec![("input", x), ("weight", w), ("bias", b)],
            target,
            &mut rng,
            &move |t, v| t.conv2d(v[0], v[1], v[2], stride, pad),
        )?;
    }
    for &(k, stride, pad) in &[(2usize, 2usize, 0usize), (3, 2, 1), (3, 1, 1)] {
        let x = uniform(&mut rng, [2, 4, 4, 4], -1.0, 1.0);
        let w = uniform(&mut rng, [4, 3, k, k], -1.0, 1.0);
        let b = uniform(&mut rng, [1, 3, 1, 1], -1.0, 1.0);
        let o = 3 * stride + k - 2 * pad;
        let target = uniform(&mut rng, [2, 3, o, o], -1.0, 1.0);
        run(
            &format!("transposed_conv2d_k{k}_s{stride}_p{pad}"),
            vec![("input", x), ("weight", w), ("bias", b)],
            target,
            &mut rng,
            &move |t, v| t.transposed_conv2d(v[0], v[1], v[2], stride, pad),
        )?;
    }
    let x = uniform(&mut rng, [2, 4, 8, 8], -1.0, 1.0);
    let target = uniform(&mut rng, [2, 4, 4, 4], -1.0, 1.0);
    run("maxpool2x2", vec![("input", x)], target, &mut rng, &|t, v| t.maxpool2x2(v[0]))?;

    let x = uniform(&mut rng, [2, 4, 8, 8], -1.0, 1.0);
    let a = uniform(&mut rng, [1, 4, 1, 1], 0.0, 0.5);
    let target = uniform(&mut rng, [2, 4, 8, 8], -1.0, 1.0);
    run("prelu", vec![("input", x), ("slope", a)], target, &mut rng, &|t, v| t.prelu(v[0], v[1]))?;

    let a = uniform(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    let b = uniform(&mut rng, [2, 1, 4, 4], -1.0, 1.0);
    let target = uniform(&mut rng, [2, 4, 4, 4], -1.0, 1.0);
    run("concat_channels", vec![("a", a), ("b", b)], target, &mut rng, &|t, v| {
        t.concat_channels(v[0], v[1])
    })?;

    let a = uniform(&mut rng, [2, 4, 8, 8], -1.0, 1.0);
    let b = uniform(&mut rng, [2, 4, 8, 8], -1.0, 1.0);
    let target = uniform(&mut rng, [2, 4, 8, 8], -1.0, 1.0);
    run("add", vec![("a", a), ("b", b)], target, &mut rng, &|t, v| t.add(v[0], v[1]))?;

    // mse_loss is exercised as the outer loss everywhere; check it on its own
    // with both arguments differentiable.
    let p = uniform(&mut rng, [2, 4, 8, 8], -1.0, 1.0);
    let l = uniform(&mut rng, [2, 4, 8, 8], -1.0, 1.0);
    let mut params = vec![ParamTensor::new("pred", p), ParamTensor::new("label", l)];
    let r = finite_difference(&mut params, Coords::All, rng.random(), |tape, ps| {
        let p = tape.param(&ps[0], 0);
        let l = tape.param(&ps[1], 1);
        tape.mse_loss(p, l)
    })?;
    report.extend(prefix(r, "mse_loss"));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_gradient_check() {
        let report = check_all_ops(7).unwrap();
        for e in &report.entries {
            assert!(e.rel_error <= 1e-5, "{}: {}", e.label, e.rel_error);
        }
        assert!(report.entries.len() > 20);
    }

    #[test]
    fn prelu_slope_gradient_equals_negative_input() {
        // Target fixed so that dL/dout == 1 at slope 0.25; then dL/da == x.
        let x = -0.75;
        let target = 0.25 * x - 0.5;
        let mut params = vec![ParamTensor::new("slope", Tensor::from_vec([1, 1, 1, 1], vec![0.25]).unwrap())];
        let r = finite_difference(&mut params, Coords::All, 1, |tape, ps| {
            let xv = tape.input(Tensor::scalar(x));
            let a = tape.param(&ps[0], 0);
            let y = tape.prelu(xv, a)?;
            let t = tape.input(Tensor::scalar(target));
            tape.mse_loss(y, t)
        })
        .unwrap();
        assert!(r.max_rel_error() < 1e-6);
        assert!((params[0].tensor.grad().unwrap()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // A forward that detaches part of its dependence: the tape sees
        // loss = mse(p, t(p)) with t recomputed from p's value as a
        // constant, so the analytic gradient misses the target's slope.
        let mut params = vec![ParamTensor::new("p", Tensor::from_vec([1, 1, 1, 1], vec![0.3]).unwrap())];
        let r = finite_difference(&mut params, Coords::All, 2, |tape, ps| {
            let p = tape.param(&ps[0], 0);
            let v = ps[0].tensor.data()[0];
            let t = tape.input(Tensor::scalar(3.0 * v));
            tape.mse_loss(p, t)
        })
        .unwrap();
        assert!(r.max_rel_error() > 0.1);
    }
}
