use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// Feature maps of the EDSR baseline stacks.
pub const EDSR_CHANNELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Rrnet,
    ReconOnlyEdsr,
    DualEdsr,
    PartitionRecon,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Rrnet, Variant::ReconOnlyEdsr, Variant::DualEdsr, Variant::PartitionRecon];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rrnet => "RRNET",
            Variant::ReconOnlyEdsr => "RECON_ONLY_EDSR",
            Variant::DualEdsr => "DUAL_EDSR",
            Variant::PartitionRecon => "PARTITION_RECON",
        }
    }

    /// Stable id used by the weights file.
    pub fn id(self) -> u32 {
        match self {
            Variant::Rrnet => 0,
            Variant::ReconOnlyEdsr => 1,
            Variant::DualEdsr => 2,
            Variant::PartitionRecon => 3,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.id() == id)
    }

    /// Number of input planes (reconstruction plus optional side plane).
    pub fn arity(self) -> usize {
        match self {
            Variant::ReconOnlyEdsr => 1,
            _ => 2,
        }
    }

    pub(crate) fn aux_prefix(self) -> &'static str {
        match self {
            Variant::PartitionRecon => "mask_edsr",
            _ => "res_edsr",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == up)
            .ok_or_else(|| ModelError::Config(format!("unknown variant {s:?} (expected RRNET, RECON_ONLY_EDSR, DUAL_EDSR or PARTITION_RECON)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Output maps of the residual branch's first conv.
    pub stem_channels: usize,
    /// Maps inside the residual blocks.
    pub block_channels: usize,
    pub qp_tag: u8,
}

impl ModelConfig {
    pub fn new(variant: Variant, qp_tag: u8) -> Self {
        ModelConfig {
            variant,
            stem_channels: 64,
            block_channels: 64,
            qp_tag,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stem_channels == 0 || self.block_channels == 0 {
            return Err(ModelError::Config("channel counts must be positive".into()));
        }
        if self.stem_channels != self.block_channels {
            return Err(ModelError::Config(format!(
                "stem_channels ({}) must equal block_channels ({}) for the block skips to add",
                self.stem_channels, self.block_channels
            )));
        }
        if self.qp_tag > 51 {
            return Err(ModelError::Config(format!("qp_tag {} outside [0, 51]", self.qp_tag)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposedConv,
}

/// One convolution (optionally followed by PReLU). Parameters are
/// `{path}.weight`, `{path}.bias` and, with PReLU, `{path}.prelu`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub path: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub prelu: bool,
}

impl LayerSpec {
    fn conv(path: String, cin: usize, cout: usize, prelu: bool) -> Self {
        LayerSpec {
            path,
            kind: LayerKind::Conv,
            in_channels: cin,
            out_channels: cout,
            kernel: 3,
            stride: 1,
            pad: 1,
            prelu,
        }
    }

    fn upsample(path: String, cin: usize, cout: usize) -> Self {
        LayerSpec {
            path,
            kind: LayerKind::TransposedConv,
            in_channels: cin,
            out_channels: cout,
            kernel: 2,
            stride: 2,
            pad: 0,
            prelu: true,
        }
    }

    /// `(C_out, C_in, k, k)` for convs, `(C_in, C_out, k, k)` for transposed convs.
    pub fn weight_dims(&self) -> [usize; 4] {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, k, k],
            LayerKind::TransposedConv => [self.in_channels, self.out_channels, k, k],
        }
    }

    /// Inputs feeding one output sample: `C_in k^2` for a conv and
    /// `C_in (k/s)^2` for a transposed conv.
    pub fn fan_in(&self) -> usize {
        let taps = match self.kind {
            LayerKind::Conv => self.kernel * self.kernel,
            LayerKind::TransposedConv => (self.kernel * self.kernel / (self.stride * self.stride)).max(1),
        };
        self.in_channels * taps
    }

    pub fn param_count(&self) -> usize {
        let w: usize = self.weight_dims().iter().product();
        w + self.out_channels * (1 + self.prelu as usize)
    }
}

fn residual_stack(prefix: &str, cin: usize, stem: usize, width: usize, cout: usize) -> Vec<LayerSpec> {
    let mut v = vec![LayerSpec::conv(format!("{prefix}.conv1"), cin, stem, true)];
    for i in 1..=3 {
        v.push(LayerSpec::conv(format!("{prefix}.block{i}.conv_a"), width, width, true));
        v.push(LayerSpec::conv(format!("{prefix}.block{i}.conv_b"), width, width, true));
    }
    v.push(LayerSpec::conv(format!("{prefix}.conv8"), width, cout, true));
    v
}

fn reconstruction_branch() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("rec.conv1".into(), 1, 32, true),
        LayerSpec::conv("rec.conv2".into(), 32, 64, true),
        LayerSpec::conv("rec.conv3".into(), 64, 128, true),
        LayerSpec::upsample("rec.tconv1".into(), 128, 64),
        LayerSpec::conv("rec.conv4".into(), 64, 64, true),
        LayerSpec::upsample("rec.tconv2".into(), 128, 32),
        LayerSpec::conv("rec.conv5".into(), 32, 32, true),
        LayerSpec::conv("rec.conv6".into(), 64, 32, true),
    ]
}

/// Ordered layer inventory of a configuration.
pub fn layer_specs(config: &ModelConfig) -> Vec<LayerSpec> {
    let e = EDSR_CHANNELS;
    let (mut layers, fused) = match config.variant {
        Variant::Rrnet => {
            let mut l = residual_stack("res", 1, config.stem_channels, config.block_channels, 32);
            l.extend(reconstruction_branch());
            (l, 64)
        }
        Variant::ReconOnlyEdsr => (residual_stack("rec_edsr", 1, e, e, e), e),
        v @ (Variant::DualEdsr | Variant::PartitionRecon) => {
            let mut l = residual_stack(v.aux_prefix(), 1, e, e, e);
            l.extend(residual_stack("rec_edsr", 1, e, e, e));
            (l, 2 * e)
        }
    };
    layers.push(LayerSpec::conv("fuse.conv".into(), fused, 1, false));
    layers
}
