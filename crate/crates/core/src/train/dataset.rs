use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::TrainError;
use crate::codec::{encode_frame, partition_mean_mask, partition_quadtree, Frame, QuadtreeParams, ResidualPlane};
use crate::io_util::write_atomic;
use crate::model::Variant;
use crate::tensor::Tensor;

/// Side length of the square training patches.
pub const PATCH_SIZE: usize = 64;

/// One patch: three co-located frame files plus the patch origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub original: PathBuf,
    pub reconstruction: PathBuf,
    pub residual: PathBuf,
    pub qp: u8,
    pub x: usize,
    pub y: usize,
}

/// Tab-separated patch list. Paths are stored relative to the manifest's
/// directory (`root`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub patch_size: usize,
    pub records: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSummary {
    pub manifest: DatasetManifest,
    /// Images smaller than one patch that were left out.
    pub skipped: usize,
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Encodes every image at every qp, writes original, reconstruction and
/// residual planes under `out_dir/frames`, tiles `PATCH_SIZE` patches with
/// the given stride and writes `out_dir/manifest.tsv`.
pub fn build_dataset(
    images: &[Frame],
    qps: &[u8],
    stride: usize,
    out_dir: &Path,
    quadtree: &QuadtreeParams,
) -> Result<BuildSummary, TrainError> {
    if images.is_empty() || qps.is_empty() {
        return Err(TrainError::Dataset("need at least one image and one qp".into()));
    }
    if stride == 0 {
        return Err(TrainError::Dataset("stride must be positive".into()));
    }
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for (i, img) in images.iter().enumerate() {
        if img.width() < PATCH_SIZE || img.height() < PATCH_SIZE {
            skipped += 1;
            continue;
        }
        let orig_rel = PathBuf::from(format!("frames/img{i:04}.orig.pgm"));
        img.write_pgm(&out_dir.join(&orig_rel))?;
        for &qp in qps {
            let coded = encode_frame(img, qp, false, quadtree)?;
            let recon_rel = PathBuf::from(format!("frames/img{i:04}_qp{qp}.recon.pgm"));
            let resi_rel = PathBuf::from(format!("frames/img{i:04}_qp{qp}.resi"));
            coded.reconstruction.write_pgm(&out_dir.join(&recon_rel))?;
            coded.residual.write_resi(&out_dir.join(&resi_rel))?;
            for (x, y) in patch_origins(img.width(), img.height(), stride) {
                records.push(SampleRecord {
                    original: orig_rel.clone(),
                    reconstruction: recon_rel.clone(),
                    residual: resi_rel.clone(),
                    qp,
                    x,
                    y,
                });
            }
        }
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        patch_size: PATCH_SIZE,
        records,
    };
    manifest.write(&out_dir.join(MANIFEST_NAME))?;
    Ok(BuildSummary { manifest, skipped })
}

/// Top-left corners of all patches that fit entirely inside the frame.
pub fn patch_origins(width: usize, height: usize, stride: usize) -> Vec<(usize, usize)> {
    if width < PATCH_SIZE || height < PATCH_SIZE {
        return Vec::new();
    }
    let mut v = Vec::new();
    for y in (0..=height - PATCH_SIZE).step_by(stride) {
        for x in (0..=width - PATCH_SIZE).step_by(stride) {
            v.push((x, y));
        }
    }
    v
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("# patch_size\t{}\n", self.patch_size);
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.original.display(),
                r.reconstruction.display(),
                r.residual.display(),
                r.qp,
                r.x,
                r.y
            );
        }
        s
    }

    pub fn from_text(root: &Path, text: &str) -> Result<Self, TrainError> {
        let mut patch_size = PATCH_SIZE;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |what: &str| TrainError::Dataset(format!("manifest line {}: {what}", i + 1));
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("patch_size") {
                    patch_size = v.trim().parse().map_err(|_| bad("invalid patch_size"))?;
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(&format!("expected 6 tab-separated fields, got {}", f.len())));
            }
            records.push(SampleRecord {
                original: PathBuf::from(f[0]),
                reconstruction: PathBuf::from(f[1]),
                residual: PathBuf::from(f[2]),
                qp: f[3].parse().map_err(|_| bad("invalid qp"))?,
                x: f[4].parse().map_err(|_| bad("invalid x"))?,
                y: f[5].parse().map_err(|_| bad("invalid y"))?,
            });
        }
        if patch_size != PATCH_SIZE {
            return Err(TrainError::Dataset(format!("unsupported patch size {patch_size}")));
        }
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            patch_size,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        write_atomic(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&root, &text)
    }

    /// Records coded at `qp` only.
    pub fn filter_qp(&self, qp: u8) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            patch_size: self.patch_size,
            records: self.records.iter().filter(|r| r.qp == qp).cloned().collect(),
        }
    }

    /// The single qp shared by all records.
    pub fn uniform_qp(&self) -> Result<u8, TrainError> {
        let first = self.records.first().ok_or(TrainError::EmptyDataset)?.qp;
        match self.records.iter().find(|r| r.qp != first) {
            Some(r) => Err(TrainError::QpMismatch {
                expected: first,
                found: r.qp,
            }),
            None => Ok(first),
        }
    }
}

/// A training patch in the normalized domain, each plane `(1,1,64,64)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub recon: Tensor<f32>,
    /// Residual (or partition mean mask) for two-input variants.
    pub aux: Option<Tensor<f32>>,
    pub label: Tensor<f32>,
}

pub fn frame_tensor(f: &Frame) -> Tensor<f32> {
    let data = f.data().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::from_vec([1, 1, f.height(), f.width()], data).expect("frame dims match")
}

pub fn residual_tensor(r: &ResidualPlane) -> Tensor<f32> {
    let data = r.data().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::from_vec([1, 1, r.height(), r.width()], data).expect("plane dims match")
}

/// The variant's side plane for a coded frame: the residual, or the
/// partition mean mask of the reconstruction.
pub fn aux_plane(
    variant: Variant,
    original: &Frame,
    recon: &Frame,
    residual: &ResidualPlane,
    quadtree: &QuadtreeParams,
) -> Result<Option<Tensor<f32>>, TrainError> {
    Ok(match variant {
        Variant::ReconOnlyEdsr => None,
        Variant::Rrnet | Variant::DualEdsr => Some(residual_tensor(residual)),
        Variant::PartitionRecon => {
            let part = partition_quadtree(original, quadtree)?;
            Some(frame_tensor(&partition_mean_mask(recon, &part)?))
        }
    })
}

fn crop(t: &Tensor<f32>, x: usize, y: usize, size: usize) -> Tensor<f32> {
    let w = t.shape().w;
    let mut out = Vec::with_capacity(size * size);
    for row in y..y + size {
        out.extend_from_slice(&t.data()[row * w + x..row * w + x + size]);
    }
    Tensor::from_vec([1, 1, size, size], out).expect("patch size")
}

/// Reads every record's planes and cuts the normalized patches for
/// `variant`. Frames shared between records are read once.
pub fn load_samples(manifest: &DatasetManifest, variant: Variant, quadtree: &QuadtreeParams) -> Result<Vec<Sample>, TrainError> {
    let mut cache: Option<((PathBuf, PathBuf), (Tensor<f32>, Option<Tensor<f32>>, Tensor<f32>))> = None;
    let mut out = Vec::with_capacity(manifest.records.len());
    let n = manifest.patch_size;
    for r in &manifest.records {
        let key = (r.original.clone(), r.reconstruction.clone());
        if cache.as_ref().is_none_or(|(k, _)| *k != key) {
            let orig = Frame::read_pgm(&manifest.root.join(&r.original))?;
            let recon = Frame::read_pgm(&manifest.root.join(&r.reconstruction))?;
            let resi = ResidualPlane::read_resi(&manifest.root.join(&r.residual))?;
            if orig.width() != recon.width() || orig.height() != recon.height() || resi.width() != orig.width() || resi.height() != orig.height() {
                return Err(TrainError::Dataset(format!("planes of {} differ in size", r.reconstruction.display())));
            }
            let aux = aux_plane(variant, &orig, &recon, &resi, quadtree)?;
            cache = Some((key, (frame_tensor(&recon), aux, frame_tensor(&orig))));
        }
        let (_, (recon, aux, label)) = cache.as_ref().expect("filled above");
        let s = recon.shape();
        if r.x + n > s.w || r.y + n > s.h {
            return Err(TrainError::Dataset(format!(
                "patch at ({}, {}) exceeds {}x{} frame {}",
                r.x,
                r.y,
                s.w,
                s.h,
                r.reconstruction.display()
            )));
        }
        out.push(Sample {
            recon: crop(recon, r.x, r.y, n),
            aux: aux.as_ref().map(|a| crop(a, r.x, r.y, n)),
            label: crop(label, r.x, r.y, n),
        });
    }
    Ok(out)
}
