use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rrnet_core::codec::{encode_frame, Frame, Partition, ResidualPlane};
use rrnet_core::corpus::synth_image;
use rrnet_core::eval::{
    ablation_report, apply_filter, bd_rate, cross_qp_matrix, export_feature_maps, feature_layer_names, format_db, psnr, FilterInput,
    ModelBank, RdCurve, Sequence,
};
use rrnet_core::model::{gradcheck_network, ModelConfig, ModelWeights, Variant};
use rrnet_core::persist::{load_weights, save_weights, RunConfig};
use rrnet_core::tensor::check_all_ops;
use rrnet_core::train::{build_dataset, fine_tune, train, DatasetManifest};
use rrnet_core::write_atomic;

use crate::error::{at, CliError};
use crate::{
    ApplyArgs, BdrateArgs, Cli, Command, CorpusArgs, CrossqpArgs, DatasetArgs, DumpFeaturesArgs, EncodeArgs, EvalArgs, FinetuneArgs,
    GradcheckArgs, PlaneArgs, TrainArgs,
};

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-5;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(at(p))?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    match cli.command {
        Command::Encode(a) => encode(&cfg, a),
        Command::Dataset(a) => dataset(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Finetune(a) => finetune(&cfg, a),
        Command::Apply(a) => apply(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Bdrate(a) => bdrate(a),
        Command::Crossqp(a) => crossqp(&cfg, a),
        Command::DumpFeatures(a) => dump_features(a),
        Command::Gradcheck(a) => gradcheck(&cfg, a),
        Command::Corpus(a) => corpus(&cfg, a),
    }
}

fn read_frame(path: &Path) -> Result<Frame> {
    Frame::read_pgm(path).map_err(at(path))
}

fn read_model(path: &Path) -> Result<ModelWeights> {
    load_weights(path).map_err(at(path))
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::invalid(format!("{}: path has no file name", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(at(dir))?;
    }
    write_atomic(path, text.as_bytes()).map_err(at(path))
}

fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{},{l:.9e}", i + 1);
    }
    s
}

fn select_qp(manifest: DatasetManifest, qp: Option<u8>) -> Result<DatasetManifest> {
    let m = match qp {
        Some(q) => manifest.filter_qp(q),
        None => manifest,
    };
    if m.records.is_empty() {
        return Err(CliError::invalid(match qp {
            Some(q) => format!("manifest has no records at qp {q}"),
            None => "manifest has no records".into(),
        }));
    }
    Ok(m)
}

struct Planes {
    recon: Frame,
    residual: Option<ResidualPlane>,
    partition: Option<Partition>,
}

impl Planes {
    fn read(a: &PlaneArgs) -> Result<Self> {
        let residual = match &a.residual {
            Some(p) => Some(ResidualPlane::read_resi(p).map_err(at(p))?),
            None => None,
        };
        let partition = match &a.partition {
            Some(p) => Some(Partition::from_text(&fs::read_to_string(p).map_err(at(p))?).map_err(at(p))?),
            None => None,
        };
        Ok(Planes {
            recon: read_frame(&a.recon)?,
            residual,
            partition,
        })
    }

    fn input(&self) -> FilterInput<'_> {
        FilterInput {
            reconstruction: &self.recon,
            residual: self.residual.as_ref(),
            partition: self.partition.as_ref(),
        }
    }
}

fn encode(cfg: &RunConfig, a: EncodeArgs) -> Result<()> {
    let frame = read_frame(&a.input)?;
    let coded = encode_frame(&frame, a.qp, a.lossless, &cfg.quadtree())?;
    fs::create_dir_all(&a.out_dir).map_err(at(&a.out_dir))?;
    let base = a.out_dir.join(format!("{}_qp{}", stem(&a.input)?, a.qp));
    let with = |ext: &str| PathBuf::from(format!("{}.{ext}", base.display()));
    let recon = with("recon.pgm");
    coded.reconstruction.write_pgm(&recon).map_err(at(&recon))?;
    let resi = with("resi");
    coded.residual.write_resi(&resi).map_err(at(&resi))?;
    write_text(&with("part.txt"), &coded.partition.to_text())?;
    let rate_line = format!("rate_proxy {:.6}\n", coded.rate_proxy);
    write_text(&with("rate.txt"), &rate_line)?;
    print!("{rate_line}");
    println!("psnr {}", format_db(psnr(&frame, &coded.reconstruction)?));
    Ok(())
}

fn dataset(cfg: &RunConfig, a: DatasetArgs) -> Result<()> {
    let images = a.images.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
    let qps = if a.qps.is_empty() { cfg.qps.clone() } else { a.qps };
    let stride = a.stride.unwrap_or(cfg.patch_stride);
    let summary = build_dataset(&images, &qps, stride, &a.out_dir, &cfg.quadtree())?;
    println!(
        "{} patches from {} images at {} qps ({} images smaller than a patch skipped)",
        summary.manifest.records.len(),
        images.len(),
        qps.len(),
        summary.skipped
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, a: TrainArgs) -> Result<()> {
    let variant: Variant = a.variant.parse()?;
    let manifest = select_qp(DatasetManifest::read(&a.manifest).map_err(at(&a.manifest))?, a.qp)?;
    let config = ModelConfig {
        variant,
        stem_channels: cfg.stem_channels,
        block_channels: cfg.block_channels,
        qp_tag: manifest.uniform_qp()?,
    };
    let mut opts = cfg.train_options(a.epochs.unwrap_or(cfg.epochs));
    opts.verbose = a.verbose;
    let outcome = train(config, &manifest, &opts)?;
    save_weights(&outcome.weights, &a.out).map_err(at(&a.out))?;
    if let Some(h) = &a.history {
        write_text(h, &history_csv(&outcome.history))?;
    }
    if let Some(last) = outcome.history.last() {
        println!("final loss {last:.6e}");
    }
    Ok(())
}

fn finetune(cfg: &RunConfig, a: FinetuneArgs) -> Result<()> {
    let base = read_model(&a.base)?;
    let manifest = select_qp(DatasetManifest::read(&a.manifest).map_err(at(&a.manifest))?, a.qp)?;
    let mut opts = cfg.train_options(a.epochs.unwrap_or(cfg.finetune_epochs));
    opts.verbose = a.verbose;
    let outcome = fine_tune(&base, &manifest, &opts)?;
    save_weights(&outcome.weights, &a.out).map_err(at(&a.out))?;
    if let Some(h) = &a.history {
        write_text(h, &history_csv(&outcome.history))?;
    }
    if let Some(last) = outcome.history.last() {
        println!("final loss {last:.6e}");
    }
    Ok(())
}

fn apply(cfg: &RunConfig, a: ApplyArgs) -> Result<()> {
    let model = read_model(&a.weights)?;
    let planes = Planes::read(&a.planes)?;
    let out = apply_filter(&model, planes.input(), &cfg.tiles())?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(at(dir))?;
    }
    out.write_pgm(&a.out).map_err(at(&a.out))?;
    if let Some(p) = &a.original {
        let orig = read_frame(p)?;
        let before = psnr(&orig, &planes.recon)?;
        let after = psnr(&orig, &out)?;
        println!("psnr reconstruction {}", format_db(before));
        println!("psnr filtered {}", format_db(after));
    }
    Ok(())
}

fn load_bank(paths: &[PathBuf]) -> Result<ModelBank> {
    let mut bank = ModelBank::default();
    let mut seen = BTreeSet::new();
    for p in paths {
        let m = read_model(p)?;
        let key = (m.config().variant.id(), m.config().qp_tag);
        if !seen.insert(key) {
            return Err(CliError::invalid(format!(
                "{}: a second {} model for qp {}",
                p.display(),
                m.config().variant,
                m.config().qp_tag
            )));
        }
        bank.insert(m);
    }
    Ok(bank)
}

fn eval(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let mut corpus = Vec::with_capacity(a.images.len());
    let mut names = BTreeSet::new();
    for p in &a.images {
        let name = stem(p)?;
        if !names.insert(name.clone()) {
            return Err(CliError::invalid(format!("two test images are named {name:?}")));
        }
        let class = p
            .parent()
            .and_then(|d| d.file_name())
            .map(|d| d.to_string_lossy().into_owned())
            .unwrap_or_else(|| "default".into());
        corpus.push(Sequence {
            name,
            class,
            frame: read_frame(p)?,
        });
    }
    let mut present = BTreeSet::new();
    for p in &a.models {
        present.insert(read_model(p)?.config().variant.id());
    }
    let bank = load_bank(&a.models)?;
    let variants: Vec<Variant> = Variant::ALL.into_iter().filter(|v| present.contains(&v.id())).collect();
    let qps = if a.qps.is_empty() { cfg.qps.clone() } else { a.qps };
    let report = ablation_report(&corpus, &bank, &variants, &qps, &cfg.tiles(), &cfg.quadtree())?;
    fs::create_dir_all(&a.out_dir).map_err(at(&a.out_dir))?;
    write_text(&a.out_dir.join("report.csv"), &report.to_csv())?;
    write_text(&a.out_dir.join("raw.csv"), &report.raw_csv())?;
    write_text(&a.out_dir.join("pairwise.csv"), &report.pairwise_csv())?;
    let text = report.to_text();
    write_text(&a.out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn bdrate(a: BdrateArgs) -> Result<()> {
    let read = |p: &Path, label: &str| -> Result<RdCurve> {
        let text = fs::read_to_string(p).map_err(at(p))?;
        RdCurve::from_csv(label, &text).map_err(at(p))
    };
    let v = bd_rate(&read(&a.anchor, "anchor")?, &read(&a.test, "test")?)?;
    // Keep a negative zero from printing as "-0.00".
    let v = if v == 0.0 { 0.0 } else { v };
    println!("{v:.2}");
    Ok(())
}

fn crossqp(cfg: &RunConfig, a: CrossqpArgs) -> Result<()> {
    let models = a.models.iter().map(|p| read_model(p)).collect::<Result<Vec<_>>>()?;
    let variant = models[0].config().variant;
    if let Some(m) = models.iter().find(|m| m.config().variant != variant) {
        return Err(CliError::invalid(format!("models mix {variant} and {}", m.config().variant)));
    }
    let bank = load_bank(&a.models)?;
    let qps: Vec<u8> = models.iter().map(|m| m.config().qp_tag).collect::<BTreeSet<_>>().into_iter().collect();
    let frames = a.images.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
    let matrix = cross_qp_matrix(&bank, variant, &frames, &qps, &cfg.tiles(), &cfg.quadtree())?;
    let csv = matrix.to_csv();
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
    }
    print!("{csv}");
    let distances: BTreeSet<u8> = qps.iter().flat_map(|&m| qps.iter().map(move |&q| m.abs_diff(q))).filter(|&d| d > 0).collect();
    for d in distances {
        if let Some(v) = matrix.mean_abs_at(d) {
            println!("mean |dPSNR| at |dQP| = {d}: {v:.4}");
        }
    }
    Ok(())
}

fn dump_features(a: DumpFeaturesArgs) -> Result<()> {
    let model = read_model(&a.weights)?;
    let Some(layer) = &a.layer else {
        for name in feature_layer_names(&model)? {
            println!("{name}");
        }
        return Ok(());
    };
    let out_dir = a.out_dir.as_ref().ok_or_else(|| CliError::invalid("--out-dir is required with --layer"))?;
    let planes = Planes::read(&a.planes)?;
    let files = export_feature_maps(&model, planes.input(), layer, out_dir)?;
    println!("{} maps of {layer} written to {}", files.len(), out_dir.display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, a: GradcheckArgs) -> Result<()> {
    if a.coords == 0 {
        return Err(CliError::invalid("--coords must be positive"));
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    let ops = check_all_ops(seed)?;
    let net = gradcheck_network(Variant::Rrnet, a.coords, seed)?;
    let worst = ops.max_rel_error().max(net.max_rel_error());
    eprintln!("ops: {} checks, max relative error {:.3e}", ops.entries.len(), ops.max_rel_error());
    eprintln!("network: {} checks, max relative error {:.3e}", net.entries.len(), net.max_rel_error());
    println!("{worst:.3e}");
    if worst <= GRADCHECK_TOLERANCE && worst.is_finite() {
        return Ok(());
    }
    for e in ops.entries.iter().chain(&net.entries).filter(|e| !(e.rel_error <= GRADCHECK_TOLERANCE)) {
        eprintln!("  {}: {:.3e}", e.label, e.rel_error);
    }
    Err(CliError::invalid(format!("max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}")))
}

fn corpus(cfg: &RunConfig, a: CorpusArgs) -> Result<()> {
    if a.width < 8 || a.height < 8 || a.count == 0 {
        return Err(CliError::invalid("corpus needs at least one image of at least 8x8"));
    }
    fs::create_dir_all(&a.out_dir).map_err(at(&a.out_dir))?;
    let seed = a.seed.unwrap_or(cfg.seed);
    for i in 0..a.count as u64 {
        let path = a.out_dir.join(format!("img{:04}.pgm", a.first + i));
        synth_image(seed, a.first + i, a.width, a.height).write_pgm(&path).map_err(at(&path))?;
    }
    println!("{} images written to {}", a.count, a.out_dir.display());
    Ok(())
}
