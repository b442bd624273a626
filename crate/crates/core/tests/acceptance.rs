//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `RRNET_ACCEPTANCE=1,7,9` runs a subset.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrnet_core::codec::{encode_frame, Frame, QuadtreeParams};
use rrnet_core::corpus::synth_image;
use rrnet_core::eval::{
    ablation_report, apply_filter, bd_rate, cross_qp_matrix, psnr, CrossQpMatrix, ModelBank, RdCurve, RdPoint, Sequence, TileParams,
};
use rrnet_core::model::{gradcheck_network, predict, variant_forward, LayerKind, ModelConfig, ModelWeights, Variant};
use rrnet_core::persist::{load_weights, save_weights, weights_from_bytes, weights_to_bytes, PersistError};
use rrnet_core::tensor::{check_all_ops, Tape, Tensor};
use rrnet_core::train::{
    build_dataset, evaluate_loss, fine_tune, load_samples, train, train_samples, DatasetManifest, LrSchedule, Sample, TrainOptions,
};

const CORPUS_SEED: u64 = 2024;
const IMAGE_SIZE: usize = 128;
const TRAIN_IMAGES: u64 = 16;
const HELD_OUT: std::ops::Range<u64> = 100..104;
/// Overlapping patches: 9 per image instead of 4 at the default stride.
const DESK_STRIDE: usize = 32;
const DESK_EPOCHS: usize = 60;
const FINETUNE_EPOCHS: usize = 20;
const TRAIN_SEED: u64 = 1;
const BASE_QP: u8 = 37;
const QPS: [u8; 4] = [22, 27, 32, 37];
const RRNET_PARAMS: usize = 448_737;
const OVERFIT_IMAGES: [usize; 3] = [0, 3, 8];
const OVERFIT_STEPS: usize = 500;
const OVERFIT_LR: f64 = 1e-3;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Desk-scale state shared by the training criteria.
struct Desk {
    dir: tempfile::TempDir,
    train_images: Vec<Frame>,
    held_out: Vec<Frame>,
    base: Option<ModelWeights>,
}

impl Desk {
    fn new() -> Self {
        Desk {
            dir: tempfile::tempdir().expect("temp dir"),
            train_images: (0..TRAIN_IMAGES).map(|i| synth_image(CORPUS_SEED, i, IMAGE_SIZE, IMAGE_SIZE)).collect(),
            held_out: HELD_OUT.map(|i| synth_image(CORPUS_SEED, i, IMAGE_SIZE, IMAGE_SIZE)).collect(),
            base: None,
        }
    }

    fn manifest(&self, qp: u8, stride: usize) -> Result<DatasetManifest, String> {
        let dir = self.dir.path().join(format!("qp{qp}_s{stride}"));
        let m = dir.join("manifest.tsv");
        if m.exists() {
            return DatasetManifest::read(&m).map_err(err);
        }
        Ok(build_dataset(&self.train_images, &[qp], stride, &dir, &QuadtreeParams::default()).map_err(err)?.manifest)
    }

    fn train(&self, variant: Variant) -> Result<ModelWeights, String> {
        let manifest = self.manifest(BASE_QP, DESK_STRIDE)?;
        let opts = TrainOptions::new(DESK_EPOCHS, TRAIN_SEED);
        Ok(train(ModelConfig::new(variant, BASE_QP), &manifest, &opts).map_err(err)?.weights)
    }

    fn base(&mut self) -> Result<ModelWeights, String> {
        if self.base.is_none() {
            self.base = Some(self.train(Variant::Rrnet)?);
        }
        Ok(self.base.clone().expect("trained above"))
    }
}

fn gradient_integrity(_: &mut Desk) -> Outcome {
    let t = Instant::now();
    let ops = check_all_ops(1).map_err(err)?;
    for op in ["conv2d", "transposed_conv2d", "maxpool2x2", "prelu", "concat_channels", "add", "mse_loss"] {
        ensure(ops.entries.iter().any(|e| e.label.starts_with(op)), || format!("op {op} not checked"))?;
    }
    let net = gradcheck_network(Variant::Rrnet, 3, 1).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = ops.entries.iter().chain(&net.entries).max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).expect("entries");
    let detail = format!(
        "max relative error {:.2e} ({}), {} op and {} network checks, {secs:.1} s",
        worst.rel_error,
        worst.label,
        ops.entries.len(),
        net.entries.len()
    );
    ensure(worst.rel_error <= 1e-5, || detail.clone())?;
    ensure(secs <= 120.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

/// Parameter count from channel widths alone: `Cin Cout k^2 + Cout`, plus
/// `Cout` PReLU slopes on every layer but the fusion conv.
fn shape_walking_count() -> usize {
    let layer = |cin: usize, cout: usize, k: usize| cin * cout * k * k + 2 * cout;
    let mut total = layer(1, 64, 3) + 6 * layer(64, 64, 3) + layer(64, 32, 3);
    let (s1, s2) = (32, 64);
    total += layer(1, s1, 3) + layer(s1, s2, 3) + layer(s2, 128, 3);
    total += layer(128, 64, 2) + layer(64, 64, 3);
    total += layer(64 + s2, 32, 2) + layer(32, 32, 3) + layer(32 + s1, 32, 3);
    total + (32 + 32) * 9 + 1
}

fn architecture(_: &mut Desk) -> Outcome {
    let w = ModelWeights::<f32>::init(ModelConfig::new(Variant::Rrnet, BASE_QP), 0).map_err(err)?;
    let res: Vec<_> = w.layers().iter().filter(|l| l.path.starts_with("res.")).collect();
    ensure(res.len() == 8, || format!("{} residual-branch convs", res.len()))?;
    ensure(res.iter().all(|l| l.kind == LayerKind::Conv), || "non-conv layer in the residual branch".into())?;
    let rec: Vec<usize> = w.layers().iter().filter(|l| l.path.starts_with("rec.")).map(|l| l.out_channels).collect();
    ensure(rec == [32, 64, 128, 64, 64, 32, 32, 32], || format!("reconstruction channels {rec:?}"))?;
    let tconvs: Vec<_> = w.layers().iter().filter(|l| l.kind == LayerKind::TransposedConv).collect();
    ensure(tconvs.len() == 2 && tconvs.iter().all(|l| (l.kernel, l.stride, l.pad) == (2, 2, 0)), || {
        format!("transposed convs {:?}", tconvs.iter().map(|l| (l.kernel, l.stride, l.pad)).collect::<Vec<_>>())
    })?;
    let mut tape = Tape::new();
    let z = tape.input(Tensor::zeros([1, 1, 64, 64]));
    let x = tape.input(Tensor::zeros([1, 1, 64, 64]));
    let f = variant_forward(&mut tape, &w, z, Some(x)).map_err(err)?;
    ensure(f.skip_adds == 3, || format!("{} skip-adds", f.skip_adds))?;
    let oracle = shape_walking_count();
    ensure(oracle == RRNET_PARAMS && w.param_count() == RRNET_PARAMS, || {
        format!("parameters: model {}, oracle {oracle}, frozen {RRNET_PARAMS}", w.param_count())
    })?;
    Ok(format!("8 residual convs, 3 skip-adds, channels {rec:?}, tconv k2/s2/p0, {RRNET_PARAMS} parameters"))
}

fn identity_at_zero(_: &mut Desk) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models: Vec<ModelWeights> = Variant::ALL
        .iter()
        .map(|&v| ModelWeights::init(ModelConfig::new(v, 32), 7))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    for m in &models {
        let fw = m.param("fuse.conv.weight").expect("fusion weight");
        ensure(fw.tensor.data().iter().all(|&v| v == 0.0), || "fusion conv not zero at init".into())?;
    }
    for i in 0..100 {
        let (w, h) = (rng.random_range(8..=100), rng.random_range(8..=100));
        let data: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let frame = Frame::new(w, h, data).map_err(err)?;
        let qp = rng.random_range(0..=51);
        let coded = encode_frame(&frame, qp, false, &QuadtreeParams::default()).map_err(err)?;
        let model = &models[i % models.len()];
        let out = apply_filter(model, &coded, &TileParams::default()).map_err(err)?;
        ensure(out == coded.reconstruction, || format!("frame {i} ({w}x{h}, qp {qp}, {})", model.config().variant))?;
        // Also at the tensor level, on arbitrary normalized values.
        let (tw, th) = (w / 4 * 4, h / 4 * 4);
        let z: Vec<f32> = (0..tw * th).map(|_| rng.random()).collect();
        let z = Tensor::from_vec([1, 1, th, tw], z).map_err(err)?;
        let aux = (model.config().variant.arity() == 2)
            .then(|| Tensor::from_vec([1, 1, th, tw], (0..tw * th).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .transpose()
            .map_err(err)?;
        let y = predict(model, z.clone(), aux).map_err(err)?;
        ensure(y.data() == z.data(), || format!("tensor {i} ({tw}x{th}) not reproduced"))?;
    }
    Ok("100 random frames reproduced bit-exactly (frame and tensor level, all variants)".into())
}

fn codec_invariants(desk: &mut Desk) -> Outcome {
    let t = Instant::now();
    let qt = QuadtreeParams::default();
    let images: Vec<&Frame> = desk.train_images.iter().chain(&desk.held_out).collect();
    for (i, img) in images.iter().enumerate() {
        let mut last: Option<(f64, f64)> = None;
        for qp in QPS {
            let c = encode_frame(img, qp, false, &qt).map_err(err)?;
            ensure(c.satisfies_pixel_identity(), || format!("image {i} qp {qp}: recon != clip(pred + resid)"))?;
            let p = psnr(img, &c.reconstruction).map_err(err)?;
            if let Some((lp, lr)) = last {
                ensure(p < lp && c.rate_proxy < lr, || {
                    format!("image {i} qp {qp}: psnr {p:.3} (prev {lp:.3}), rate {:.1} (prev {lr:.1})", c.rate_proxy)
                })?;
            }
            last = Some((p, c.rate_proxy));
            let l = encode_frame(img, qp, true, &qt).map_err(err)?;
            ensure(l.reconstruction == **img && l.satisfies_pixel_identity(), || format!("image {i} qp {qp}: lossless not exact"))?;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs <= 60.0, || format!("too slow: {secs:.1} s"))?;
    Ok(format!("{} images x {} qps, lossless exact, psnr and rate strictly decreasing, {secs:.1} s", images.len(), QPS.len()))
}

fn training_sanity(desk: &mut Desk) -> Outcome {
    // Single-patch overfit at Adam's customary 1e-3; the first patch of
    // three training images, each on its own.
    let qt = QuadtreeParams::default();
    let mut ratios = Vec::new();
    for &i in &OVERFIT_IMAGES {
        let dir = desk.dir.path().join(format!("overfit{i}"));
        let m = build_dataset(&desk.train_images[i..i + 1], &[BASE_QP], 64, &dir, &qt).map_err(err)?.manifest;
        let samples: Vec<Sample> = load_samples(&m, Variant::Rrnet, &qt).map_err(err)?.into_iter().take(1).collect();
        let mut w = ModelWeights::init(ModelConfig::new(Variant::Rrnet, BASE_QP), TRAIN_SEED).map_err(err)?;
        let initial = evaluate_loss(&w, &samples).map_err(err)?;
        let mut opts = TrainOptions::new(OVERFIT_STEPS, TRAIN_SEED);
        opts.batch = 1;
        train_samples(&mut w, &samples, OVERFIT_STEPS, &LrSchedule::constant(OVERFIT_LR, OVERFIT_STEPS), &opts).map_err(err)?;
        let last = evaluate_loss(&w, &samples).map_err(err)?;
        ensure(last < 0.2 * initial, || format!("overfit image {i}: final {last:.3e} vs initial {initial:.3e}"))?;
        ratios.push(last / initial);
    }

    // Five epochs on the default desk dataset, twice.
    let manifest = desk.manifest(BASE_QP, 64)?;
    let cfg = ModelConfig::new(Variant::Rrnet, BASE_QP);
    let opts = TrainOptions::new(5, TRAIN_SEED);
    let h1 = train(cfg, &manifest, &opts).map_err(err)?.history;
    ensure(h1.windows(2).all(|p| p[1] < p[0]), || format!("5-epoch losses not strictly decreasing: {h1:?}"))?;
    let h2 = train(cfg, &manifest, &opts).map_err(err)?.history;
    ensure(h1.iter().map(|v| v.to_bits()).eq(h2.iter().map(|v| v.to_bits())), || "loss history not reproducible".into())?;
    Ok(format!(
        "overfit final/initial {}, 5-epoch losses {}, reproducible",
        ratios.iter().map(|r| format!("{r:.3}x")).collect::<Vec<_>>().join(" "),
        h1.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" > ")
    ))
}

fn held_out_sequences(desk: &Desk) -> Vec<Sequence> {
    desk.held_out
        .iter()
        .zip(HELD_OUT)
        .map(|(f, i)| Sequence {
            name: format!("img{i:04}"),
            class: "desk".into(),
            frame: f.clone(),
        })
        .collect()
}

fn filtering_gain(desk: &mut Desk) -> Outcome {
    let t = Instant::now();
    let rrnet = desk.base()?;
    let edsr = desk.train(Variant::ReconOnlyEdsr)?;
    let bank = ModelBank::new(vec![rrnet, edsr]);
    let variants = [Variant::Rrnet, Variant::ReconOnlyEdsr];
    let report = ablation_report(
        &held_out_sequences(desk),
        &bank,
        &variants,
        &[BASE_QP],
        &TileParams::default(),
        &QuadtreeParams::default(),
    )
    .map_err(err)?;
    let g = report.mean_gain(Variant::Rrnet).ok_or("no RRNET gain")?;
    let e = report.mean_gain(Variant::ReconOnlyEdsr).ok_or("no RECON_ONLY_EDSR gain")?;
    let per: Vec<String> = report.rows.iter().map(|r| format!("{:+.3}/{:+.3}", r.delta_psnr[0].unwrap_or(f64::NAN), r.delta_psnr[1].unwrap_or(f64::NAN))).collect();
    let hours = t.elapsed().as_secs_f64() / 3600.0;
    let detail = format!(
        "mean gain RRNET {g:+.4} dB, RECON_ONLY_EDSR {e:+.4} dB (per image {}), {hours:.2} h",
        per.join(" ")
    );
    ensure(g > 0.0, || detail.clone())?;
    ensure(g >= e - 0.05, || detail.clone())?;
    ensure(hours <= 4.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

/// Dense trapezoidal integral of the fitted cubic.
fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    h * (0.5 * (f(lo) + f(hi)) + inner)
}

fn bd_rate_oracle(desk: &mut Desk) -> Outcome {
    let img = &desk.held_out[0];
    let points: Vec<RdPoint> = QPS
        .iter()
        .rev()
        .map(|&qp| {
            let c = encode_frame(img, qp, false, &QuadtreeParams::default()).expect("encode");
            RdPoint {
                rate: c.rate_proxy,
                psnr: psnr(img, &c.reconstruction).expect("psnr"),
            }
        })
        .collect();
    let anchor = RdCurve::new("anchor", points.clone());
    let same = bd_rate(&anchor, &anchor).map_err(err)?;
    ensure(same.abs() <= 1e-9, || format!("identical curves: {same:e}"))?;
    let cheaper = RdCurve::new("test", points.iter().map(|p| RdPoint { rate: 0.9 * p.rate, psnr: p.psnr }).collect());
    let ten = bd_rate(&anchor, &cheaper).map_err(err)?;
    ensure((ten + 10.0).abs() <= 0.05, || format!("10% reduction: {ten}"))?;
    let fit = anchor.fit().map_err(err)?;
    let (lo, hi) = (points[0].psnr, points[3].psnr);
    let exact = fit.integral(lo, hi);
    let dense = trapezoid(|p| fit.eval(p), lo, hi, 200_000);
    let rel = ((exact - dense) / dense).abs();
    ensure(rel <= 1e-6, || format!("integral {exact} vs trapezoid {dense} (rel {rel:e})"))?;
    Ok(format!("identical {same:.1e}%, uniform 10% cut {ten:.6}%, integral vs trapezoid rel {rel:.1e}"))
}

fn cross_qp(desk: &mut Desk) -> Outcome {
    let t = Instant::now();
    let base = desk.base()?;
    let mut bank = ModelBank::default();
    let mut soft = String::new();
    for qp in [22u8, 27, 32] {
        let manifest = desk.manifest(qp, DESK_STRIDE)?;
        let opts = TrainOptions::new(FINETUNE_EPOCHS, TRAIN_SEED);
        let tuned = fine_tune(&base, &manifest, &opts).map_err(err)?.weights;
        ensure(tuned.config().qp_tag == qp, || format!("fine-tuned model tagged {}", tuned.config().qp_tag))?;
        if qp == 22 {
            let samples = load_samples(&manifest, Variant::Rrnet, &QuadtreeParams::default()).map_err(err)?;
            let before = evaluate_loss(&base, &samples).map_err(err)?;
            let after = evaluate_loss(&tuned, &samples).map_err(err)?;
            ensure(after <= before, || format!("QP22 loss: fine-tuned {after:.4e} > base {before:.4e}"))?;
            soft = format!("QP22 loss {before:.3e} -> {after:.3e}");
        }
        bank.insert(tuned);
    }
    bank.insert(base);
    let m: CrossQpMatrix =
        cross_qp_matrix(&bank, Variant::Rrnet, &desk.held_out, &QPS, &TileParams::default(), &QuadtreeParams::default()).map_err(err)?;
    for i in 0..QPS.len() {
        ensure(m.delta(i, i) == 0.0, || format!("diagonal entry {i} is {}", m.delta(i, i)))?;
    }
    let far = m.mean_abs_at(15).ok_or("no pair at |dQP| = 15")?;
    let near = m.mean_abs_at(5).ok_or("no pair at |dQP| = 5")?;
    let detail = format!(
        "mean |dPSNR| at |dQP|=15: {far:.4} dB, at 5: {near:.4} dB; {soft}; {:.1} min",
        t.elapsed().as_secs_f64() / 60.0
    );
    ensure(far >= near, || detail.clone())?;
    Ok(detail)
}

fn persistence(desk: &mut Desk) -> Outcome {
    let dir = desk.dir.path().join("persist");
    std::fs::create_dir_all(&dir).map_err(err)?;
    for v in Variant::ALL {
        let mut w = ModelWeights::init(ModelConfig::new(v, 27), 11).map_err(err)?;
        for (i, x) in w.param_mut("fuse.conv.weight").expect("fusion").tensor.data_mut().iter_mut().enumerate() {
            *x = (i as f32 * 0.61).cos() * 1e-2;
        }
        let a = dir.join(format!("{v}.rrnw"));
        let b = dir.join(format!("{v}.again.rrnw"));
        save_weights(&w, &a).map_err(err)?;
        let back: ModelWeights = load_weights(&a).map_err(err)?;
        save_weights(&back, &b).map_err(err)?;
        ensure(std::fs::read(&a).map_err(err)? == std::fs::read(&b).map_err(err)?, || format!("{v}: save-load-save differs"))?;
        ensure(back.config() == w.config(), || format!("{v}: config changed"))?;
        for (p, q) in w.params().iter().zip(back.params()) {
            ensure(p.tensor.data().iter().map(|x| x.to_bits()).eq(q.tensor.data().iter().map(|x| x.to_bits())), || {
                format!("{v}: {} not bit-exact", p.name)
            })?;
        }
        let w64 = w.cast::<f64>();
        let bytes = weights_to_bytes(&w64);
        let back64: ModelWeights<f64> = weights_from_bytes(&bytes).map_err(err)?;
        ensure(weights_to_bytes(&back64) == bytes, || format!("{v}: f64 round trip differs"))?;
    }
    let good = weights_to_bytes(&ModelWeights::<f32>::init(ModelConfig::new(Variant::Rrnet, 37), 1).map_err(err)?);
    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    ensure(matches!(weights_from_bytes::<f32>(&bad), Err(PersistError::BadMagic)), || "bad magic accepted".into())?;
    for cut in [3, 10, good.len() / 2, good.len() - 1] {
        ensure(matches!(weights_from_bytes::<f32>(&good[..cut]), Err(PersistError::Truncated { .. })), || {
            format!("truncation at {cut} not reported as truncated")
        })?;
    }
    let mut v2 = good.clone();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    ensure(matches!(weights_from_bytes::<f32>(&v2), Err(PersistError::UnsupportedVersion(2))), || "version 2 accepted".into())?;

    let ds = dir.join("dataset");
    let built = build_dataset(&desk.train_images[..2], &[22, 37], 64, &ds, &QuadtreeParams::default()).map_err(err)?.manifest;
    let path = ds.join("manifest.tsv");
    let first = std::fs::read(&path).map_err(err)?;
    let reread = DatasetManifest::read(&path).map_err(err)?;
    ensure(reread == built, || "manifest changed on re-read".into())?;
    let copy = dir.join("copy.tsv");
    reread.write(Path::new(&copy)).map_err(err)?;
    ensure(std::fs::read(&copy).map_err(err)? == first, || "manifest rewrite differs".into())?;
    Ok(format!(
        "weights bit-exact for {} variants (f32 and f64), manifest of {} records byte-identical, bad magic/truncation/version rejected",
        Variant::ALL.len(),
        built.records.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn(&mut Desk) -> Outcome); 9] = [
        ("gradient integrity", gradient_integrity),
        ("architecture conformance", architecture),
        ("identity at zero", identity_at_zero),
        ("codec invariants", codec_invariants),
        ("training sanity", training_sanity),
        ("desk-scale filtering gain", filtering_gain),
        ("BD-rate oracle", bd_rate_oracle),
        ("cross-QP trend", cross_qp),
        ("persistence", persistence),
    ];
    let only: Option<Vec<usize>> = std::env::var("RRNET_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    panic::set_hook(Box::new(|_| {}));
    let mut desk = Desk::new();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            println!("SKIP {n} {name}");
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| run(&mut desk))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
