use super::*;
use crate::tensor::ParamTensor;

const RRNET_PARAMS: usize = 448_737;

fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Tensor<f32> {
    let data = (0..h * w).map(|i| f(i % w, i / w)).collect();
    Tensor::from_vec([1, 1, h, w], data).unwrap()
}

fn run(weights: &ModelWeights, h: usize, w: usize) -> (Tape<f32>, Forward) {
    let mut tape = Tape::new();
    let z = tape.input(plane(h, w, |x, y| ((x * 7 + y * 3) % 255) as f32 / 255.0));
    let a = (weights.config().variant.arity() == 2).then(|| tape.input(plane(h, w, |x, y| ((x + y) % 9) as f32 / 255.0 - 0.015)));
    let f = variant_forward(&mut tape, weights, z, a).unwrap();
    (tape, f)
}

fn randomize(weights: &mut ModelWeights, name: &str, scale: f32) {
    let p = weights.param_mut(name).unwrap();
    for (i, v) in p.tensor.data_mut().iter_mut().enumerate() {
        *v = scale * (((i * 2654435761) % 1000) as f32 / 500.0 - 1.0);
    }
}

/// Walks channel counts through the architecture description and sums
/// `C_in C_out k^2 + C_out (+ C_out for PReLU)` per layer.
fn shape_walking_count() -> usize {
    let layer = |cin: usize, cout: usize, k: usize, prelu: bool| cin * cout * k * k + cout + if prelu { cout } else { 0 };
    let mut total = 0;
    // residual branch
    let mut c = 1;
    for (cout, _) in [(64, 0), (64, 1), (64, 1), (64, 2), (64, 2), (64, 3), (64, 3), (32, 4)] {
        total += layer(c, cout, 3, true);
        c = cout;
    }
    let res_out = c;
    // reconstruction branch
    total += layer(1, 32, 3, true);
    let s1 = 32;
    total += layer(32, 64, 3, true);
    let s2 = 64;
    total += layer(64, 128, 3, true);
    total += layer(128, 64, 2, true);
    total += layer(64, 64, 3, true);
    let c = 64 + s2;
    total += layer(c, 32, 2, true);
    total += layer(32, 32, 3, true);
    let c = 32 + s1;
    total += layer(c, 32, 3, true);
    total + layer(res_out + 32, 1, 3, false)
}

#[test]
fn rrnet_parameter_count_matches_oracle() {
    let w = ModelWeights::<f32>::init(ModelConfig::new(Variant::Rrnet, 37), 0).unwrap();
    assert_eq!(shape_walking_count(), RRNET_PARAMS);
    assert_eq!(w.param_count(), RRNET_PARAMS);
    assert_eq!(w.layers().iter().map(|l| l.param_count()).sum::<usize>(), RRNET_PARAMS);
}

#[test]
fn rrnet_inventory() {
    let w = ModelWeights::<f32>::init(ModelConfig::new(Variant::Rrnet, 37), 0).unwrap();
    let res: Vec<_> = w.layers().iter().filter(|l| l.path.starts_with("res.")).collect();
    assert_eq!(res.len(), 8);
    assert!(res.iter().all(|l| l.kind == LayerKind::Conv && l.kernel == 3 && l.stride == 1 && l.pad == 1));
    let rec: Vec<usize> = w.layers().iter().filter(|l| l.path.starts_with("rec.")).map(|l| l.out_channels).collect();
    assert_eq!(rec, [32, 64, 128, 64, 64, 32, 32, 32]);
    for l in w.layers().iter().filter(|l| l.kind == LayerKind::TransposedConv) {
        assert_eq!((l.kernel, l.stride, l.pad), (2, 2, 0));
    }
    let (tape, f) = run(&w, 64, 64);
    assert_eq!(f.skip_adds, 3);
    assert_eq!(tape.value(f.output).shape().dims(), [1, 1, 64, 64]);
    assert_eq!(tape.value(f.tap("res.conv8").unwrap()).shape().dims(), [1, 32, 64, 64]);
    assert_eq!(tape.value(f.tap("rec.conv6").unwrap()).shape().dims(), [1, 32, 64, 64]);
    assert_eq!(tape.value(f.tap("rec.pool2").unwrap()).shape().dims(), [1, 64, 16, 16]);
}

#[test]
fn edsr_variants() {
    for v in [Variant::ReconOnlyEdsr, Variant::DualEdsr, Variant::PartitionRecon] {
        let w = ModelWeights::<f32>::init(ModelConfig::new(v, 37), 1).unwrap();
        let convs = w.layers().iter().filter(|l| l.path != "fuse.conv");
        for l in convs.clone() {
            assert_eq!((l.kernel, l.stride, l.pad, l.out_channels), (3, 1, 1, EDSR_CHANNELS));
        }
        assert_eq!(convs.count(), 8 * v.arity());
        let (tape, f) = run(&w, 64, 64);
        assert_eq!(f.skip_adds, 3 * v.arity());
        assert_eq!(tape.value(f.output).shape().dims(), [1, 1, 64, 64]);
    }
}

#[test]
fn identity_at_zero_is_bit_exact() {
    for v in Variant::ALL {
        let w = ModelWeights::<f32>::init(ModelConfig::new(v, 22), 3).unwrap();
        let recon = plane(16, 24, |x, y| ((x * 31 + y * 17) % 256) as f32 / 255.0);
        let aux = (v.arity() == 2).then(|| plane(16, 24, |x, _| x as f32 / 300.0 - 0.04));
        let out = predict(&w, recon.clone(), aux).unwrap();
        assert_eq!(out.data(), recon.data(), "{v}");
    }
}

#[test]
fn zero_input_gives_zero_residual_features() {
    let w = ModelWeights::<f32>::init(ModelConfig::new(Variant::Rrnet, 37), 9).unwrap();
    let mut tape = Tape::new();
    let z = tape.input(Tensor::zeros([1, 1, 8, 8]));
    let x = tape.input(Tensor::zeros([1, 1, 8, 8]));
    let f = variant_forward(&mut tape, &w, z, Some(x)).unwrap();
    assert!(tape.value(f.tap("res.conv8").unwrap()).data().iter().all(|&v| v == 0.0));
}

#[test]
fn zeroed_block_is_identity() {
    let mut w = ModelWeights::<f32>::init(ModelConfig::new(Variant::Rrnet, 37), 4).unwrap();
    for conv in ["conv_a", "conv_b"] {
        for part in ["weight", "bias"] {
            let p = w.param_mut(&format!("res.block2.{conv}.{part}")).unwrap();
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (tape, f) = run(&w, 16, 16);
    assert_eq!(
        tape.value(f.tap("res.block2").unwrap()).data(),
        tape.value(f.tap("res.block1").unwrap()).data()
    );
}

#[test]
fn every_parameter_receives_gradient() {
    for v in Variant::ALL {
        let mut w = ModelWeights::<f32>::init(ModelConfig::new(v, 37), 5).unwrap();
        randomize(&mut w, "fuse.conv.weight", 0.05);
        let mut tape = Tape::new();
        let z = tape.input(plane(16, 16, |x, y| ((x * 13 + y * 29) % 256) as f32 / 255.0));
        let a = (v.arity() == 2).then(|| tape.input(plane(16, 16, |x, y| ((x * y) % 11) as f32 / 100.0 - 0.05)));
        let f = variant_forward(&mut tape, &w, z, a).unwrap();
        let label = tape.input(plane(16, 16, |x, _| x as f32 / 16.0));
        let loss = tape.mse_loss(f.output, label).unwrap();
        tape.backward(loss, w.params_mut()).unwrap();
        for p in w.params() {
            let g = p.tensor.grad().unwrap_or_else(|| panic!("{v}: {} has no gradient", p.name));
            assert!(g.iter().any(|&x| x != 0.0), "{v}: {} gradient is all zero", p.name);
        }
    }
}

#[test]
fn init_is_deterministic() {
    let c = ModelConfig::new(Variant::Rrnet, 37);
    let a = ModelWeights::<f32>::init(c, 11).unwrap();
    assert_eq!(a, ModelWeights::<f32>::init(c, 11).unwrap());
    assert_ne!(a, ModelWeights::<f32>::init(c, 12).unwrap());
    // He variance on a large layer
    let w = a.param("res.block1.conv_a.weight").unwrap().tensor.data();
    let var = w.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / w.len() as f64;
    assert!((var - 2.0 / 576.0).abs() < 0.1 * 2.0 / 576.0, "{var}");
}

#[test]
fn errors() {
    let w = ModelWeights::<f32>::init(ModelConfig::new(Variant::Rrnet, 37), 0).unwrap();
    let mut tape = Tape::new();
    let z = tape.input(Tensor::zeros([1, 1, 8, 8]));
    assert!(matches!(variant_forward(&mut tape, &w, z, None), Err(ModelError::Arity { expected: 2, got: 1, .. })));
    let z = tape.input(Tensor::zeros([1, 1, 10, 8]));
    let x = tape.input(Tensor::zeros([1, 1, 10, 8]));
    assert!(matches!(variant_forward(&mut tape, &w, z, Some(x)), Err(ModelError::Spatial { h: 10, w: 8 })));
    let err = w.layer("res.conv9").unwrap_err();
    assert!(err.to_string().contains("res.conv8"));
    let mut bad = ModelConfig::new(Variant::Rrnet, 37);
    bad.stem_channels = 32;
    assert!(matches!(ModelWeights::<f32>::init(bad, 0), Err(ModelError::Config(_))));
    let mut params = w.params().to_vec();
    params[0] = ParamTensor::new("res.conv1.weight", Tensor::zeros([1, 1, 3, 3]));
    assert!(matches!(ModelWeights::from_params(*w.config(), params), Err(ModelError::Params(_))));
    assert_eq!("recon_only_edsr".parse::<Variant>().unwrap(), Variant::ReconOnlyEdsr);
}

#[test]
fn network_gradcheck() {
    for v in [Variant::Rrnet, Variant::ReconOnlyEdsr] {
        let r = gradcheck_network(v, 3, 21).unwrap();
        assert!(r.max_rel_error() <= 1e-5, "{v}: {:?}", r.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)));
    }
}
