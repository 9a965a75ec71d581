use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationMode {
    /// One style vector per layer, shared by all output channels.
    Baseline,
    /// One style row per output channel, mapped from the rows of a latent matrix.
    Overparam,
}

impl std::fmt::Display for ModulationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Self::Baseline => "baseline",
            Self::Overparam => "overparam",
        })
    }
}

impl std::str::FromStr for ModulationMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "overparam" => Ok(Self::Overparam),
            other => Err(arg_err(format!("unknown modulation mode '{other}'"))),
        }
    }
}

/// One style-modulated convolution. The convolution runs at `resolution`;
/// when `upsample` is set the activated output is doubled afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub upsample: bool,
    pub resolution: usize,
}

impl LayerSpec {
    pub fn output_resolution(&self) -> usize {
        if self.upsample {
            2 * self.resolution
        } else {
            self.resolution
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Latent dimensionality `D`.
    pub latent_dim: usize,
    /// Rows `R` of a latent matrix.
    pub latent_rows: usize,
    pub const_channels: usize,
    pub const_resolution: usize,
    pub layers: Vec<LayerSpec>,
    pub mapping_layers: usize,
    pub image_channels: usize,
    pub modulation_mode: ModulationMode,
}

impl GeneratorConfig {
    /// A chain of 3×3 layers starting at 4×4: layer `l` maps `channels[l]` to
    /// `channels[l+1]`, and every layer but the last upsamples.
    pub fn pyramid(latent_dim: usize, latent_rows: usize, channels: &[usize], mode: ModulationMode) -> Self {
        assert!(channels.len() >= 2, "need at least one layer");
        let n = channels.len() - 1;
        let mut res = 4;
        let layers = (0..n)
            .map(|l| {
                let spec = LayerSpec {
                    in_channels: channels[l],
                    out_channels: channels[l + 1],
                    kernel: 3,
                    upsample: l + 1 < n,
                    resolution: res,
                };
                res = spec.output_resolution();
                spec
            })
            .collect();
        Self {
            latent_dim,
            latent_rows,
            const_channels: channels[0],
            const_resolution: 4,
            layers,
            mapping_layers: 2,
            image_channels: 3,
            modulation_mode: mode,
        }
    }

    /// `D = R = 64`, four layers at 4, 8, 16 and 32 pixels.
    pub fn desk(mode: ModulationMode) -> Self {
        Self::pyramid(64, 64, &[32, 32, 32, 16, 16], mode)
    }

    /// Latent geometry of the full-size 256×256 model (`D = R = 512`, 14
    /// style layers). Used for bookkeeping only.
    pub fn full_scale() -> Self {
        let mut res = 4;
        let layers = (0..14)
            .map(|l| {
                let spec = LayerSpec {
                    in_channels: 512,
                    out_channels: 512,
                    kernel: 3,
                    upsample: l % 2 == 1 && l < 13,
                    resolution: res,
                };
                res = spec.output_resolution();
                spec
            })
            .collect();
        Self {
            latent_dim: 512,
            latent_rows: 512,
            const_channels: 512,
            const_resolution: 4,
            layers,
            mapping_layers: 2,
            image_channels: 3,
            modulation_mode: ModulationMode::Overparam,
        }
    }

    pub fn with_mode(mut self, mode: ModulationMode) -> Self {
        self.modulation_mode = mode;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn output_resolution(&self) -> usize {
        self.layers.last().map_or(self.const_resolution, LayerSpec::output_resolution)
    }

    pub fn max_out_channels(&self) -> usize {
        self.layers.iter().map(|l| l.out_channels).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.latent_rows == 0 {
            return Err(arg_err("latent_dim and latent_rows must be positive"));
        }
        if self.mapping_layers == 0 {
            return Err(arg_err("mapping_layers must be at least 1"));
        }
        if self.layers.is_empty() {
            return Err(arg_err("generator needs at least one layer"));
        }
        if self.image_channels == 0 {
            return Err(arg_err("image_channels must be positive"));
        }
        let mut channels = self.const_channels;
        let mut res = self.const_resolution;
        for (l, spec) in self.layers.iter().enumerate() {
            if spec.in_channels != channels {
                return Err(arg_err(format!(
                    "layer {l}: in_channels {} != previous output {channels}",
                    spec.in_channels
                )));
            }
            if spec.resolution != res {
                return Err(arg_err(format!(
                    "layer {l}: resolution {} != incoming {res}",
                    spec.resolution
                )));
            }
            if spec.kernel % 2 == 0 {
                return Err(arg_err(format!("layer {l}: kernel {} must be odd", spec.kernel)));
            }
            if spec.out_channels == 0 {
                return Err(arg_err(format!("layer {l}: out_channels must be positive")));
            }
            channels = spec.out_channels;
            res = spec.output_resolution();
        }
        if self.modulation_mode == ModulationMode::Overparam && self.latent_rows < self.max_out_channels() {
            return Err(arg_err(format!(
                "latent_rows {} < widest layer {}; rows can only be dropped",
                self.latent_rows,
                self.max_out_channels()
            )));
        }
        Ok(())
    }
}
