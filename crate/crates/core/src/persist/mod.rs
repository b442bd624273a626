//! On-disk formats: RRNW weights and `key = value` run configs.

mod config;
mod weights;

pub use config::{RunConfig, CONFIG_KEYS};
pub use weights::{load_weights, save_weights, weights_from_bytes, weights_to_bytes, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("weights do not match their configuration: {0}")]
    Model(#[from] ModelError),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("config line {line}: unknown key {key:?} (did you mean {suggestion:?}?)")]
    UnknownKey { line: usize, key: String, suggestion: String },
    #[error("invalid config value for {key}: {message}")]
    Invalid { key: String, message: String },
}

impl From<TensorError> for PersistError {
    fn from(e: TensorError) -> Self {
        PersistError::Model(ModelError::Tensor(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelWeights, Variant};

    fn trained_looking(v: Variant, qp: u8) -> ModelWeights {
        let mut w = ModelWeights::init(ModelConfig::new(v, qp), 3).unwrap();
        for (i, x) in w.param_mut("fuse.conv.weight").unwrap().tensor.data_mut().iter_mut().enumerate() {
            *x = (i as f32 * 0.37).sin() * 1e-3;
        }
        w
    }

    #[test]
    fn weights_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for v in Variant::ALL {
            let w = trained_looking(v, 27);
            let p = dir.path().join("w.rrnw");
            save_weights(&w, &p).unwrap();
            let back: ModelWeights = load_weights(&p).unwrap();
            assert_eq!(back.config().qp_tag, 27);
            assert_eq!(back.config().variant, v);
            for (a, b) in w.params().iter().zip(back.params()) {
                assert_eq!(a.name, b.name);
                let bits = |t: &[f32]| t.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a.tensor.data()), bits(b.tensor.data()));
            }
            let first = std::fs::read(&p).unwrap();
            save_weights(&back, &p).unwrap();
            assert_eq!(std::fs::read(&p).unwrap(), first);
        }
    }

    #[test]
    fn f64_weights_keep_their_tag() {
        let w: ModelWeights<f64> = trained_looking(Variant::ReconOnlyEdsr, 22).cast();
        let bytes = weights_to_bytes(&w);
        let back: ModelWeights<f64> = weights_from_bytes(&bytes).unwrap();
        assert_eq!(weights_to_bytes(&back), bytes);
        // f32 view of an f64 file
        let narrow: ModelWeights<f32> = weights_from_bytes(&bytes).unwrap();
        assert_eq!(narrow.param_count(), w.param_count());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = weights_to_bytes(&trained_looking(Variant::ReconOnlyEdsr, 37));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(weights_from_bytes::<f32>(&bad), Err(PersistError::BadMagic)));
        assert!(matches!(weights_from_bytes::<f32>(&bytes[..2]), Err(PersistError::Truncated { .. })));
        assert!(matches!(weights_from_bytes::<f32>(b"RX"), Err(PersistError::BadMagic)));
        assert!(matches!(weights_from_bytes::<f32>(b""), Err(PersistError::Truncated { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(weights_from_bytes::<f32>(&v2), Err(PersistError::UnsupportedVersion(2))));
        for cut in [10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(weights_from_bytes::<f32>(&bytes[..cut]), Err(PersistError::Truncated { .. })),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(weights_from_bytes::<f32>(&extra), Err(PersistError::Format(_))));
        // variant id says RRNET, tensors are RECON_ONLY_EDSR
        let mut wrong = bytes.clone();
        wrong[8] = 0;
        assert!(matches!(weights_from_bytes::<f32>(&wrong), Err(PersistError::Model(_))));
    }

    #[test]
    fn config_defaults_and_parsing() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.base_lr, 1e-4);
        assert_eq!(c.total_epochs, 120);
        let c = RunConfig::parse("# comment\ntotal_epochs = 120\n  qps = 22, 37 # trailing\nbase_lr=2e-4\n").unwrap();
        assert_eq!(c.total_epochs, 120);
        assert_eq!(c.qps, vec![22, 37]);
        assert_eq!(c.base_lr, 2e-4);
    }

    #[test]
    fn config_errors() {
        let e = RunConfig::parse("seed = 3\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, PersistError::UnknownKey { line: 2, ref key, .. } if key == "bogus"));
        assert!(e.to_string().contains("bogus"));
        let e = RunConfig::parse("totl_epochs = 5").unwrap_err();
        assert!(matches!(e, PersistError::UnknownKey { ref suggestion, .. } if suggestion == "total_epochs"));
        let e = RunConfig::parse("\n\nepochs = many\n").unwrap_err();
        assert!(matches!(e, PersistError::Config { line: 3, .. }));
        assert!(matches!(RunConfig::parse("just words"), Err(PersistError::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("base_qp = 60"), Err(PersistError::Invalid { .. })));
        assert!(matches!(RunConfig::parse("tile_overlap = 40"), Err(PersistError::Invalid { .. })));
        assert!(matches!(RunConfig::parse("base_lr = 0"), Err(PersistError::Invalid { .. })));
    }
}
