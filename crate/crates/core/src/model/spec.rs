use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    /// 3x3 stride-2 max pool after the stem.
    pub pool: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
}

/// How resolution is halved between stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    /// 3x3 stride-2 max pool in front of every stage after the first.
    #[default]
    MaxPool,
    /// Stride-2 first convolution in every stage after the first.
    StridedConv,
}

/// Shortcut used where a block changes channel count or resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shortcut {
    /// Identity, subsampled if needed, with the extra channels zero-filled.
    #[default]
    ZeroPad,
    /// 1x1 convolution (plus batch norm when enabled).
    Projection,
}

/// Residual network layout: stem, stages of two-convolution basic blocks,
/// global average pooling and a fully connected head of `output_width`
/// units (no head when zero).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_size: usize,
    pub input_channels: usize,
    pub stem: Option<StemSpec>,
    pub stages: Vec<StageSpec>,
    pub downsample: Downsample,
    pub shortcut: Shortcut,
    pub batch_norm: bool,
    pub output_width: usize,
}

/// Stage layout of the 34-layer network.
pub const RESNET34_STAGES: [StageSpec; 4] = [
    StageSpec { blocks: 3, channels: 64 },
    StageSpec { blocks: 4, channels: 128 },
    StageSpec { blocks: 6, channels: 256 },
    StageSpec { blocks: 3, channels: 512 },
];

impl ArchitectureSpec {
    /// 224x224 input, 7x7/2 stem with 64 channels and a max pool, four
    /// stages separated by max pools: 112, 56, 28, 14, 7.
    pub fn paper(output_width: usize) -> Self {
        ArchitectureSpec {
            input_size: 224,
            input_channels: 3,
            stem: Some(StemSpec {
                kernel: 7,
                stride: 2,
                channels: 64,
                pool: true,
            }),
            stages: RESNET34_STAGES.to_vec(),
            downsample: Downsample::MaxPool,
            shortcut: Shortcut::ZeroPad,
            batch_norm: true,
            output_width,
        }
    }

    /// Same stages for 32x32 input: 3x3/1 stem, no stem pool, so the stages
    /// run at 32, 16, 8, 4.
    pub fn desk(output_width: usize) -> Self {
        ArchitectureSpec {
            input_size: 32,
            stem: Some(StemSpec {
                kernel: 3,
                stride: 1,
                channels: 64,
                pool: false,
            }),
            ..Self::paper(output_width)
        }
    }

    /// Narrow, shallow variant for CPU runs on 32x32 input: stem pool, then
    /// stages of one block at 16, 8, 4.
    pub fn toy(output_width: usize) -> Self {
        ArchitectureSpec {
            input_size: 32,
            input_channels: 3,
            stem: Some(StemSpec {
                kernel: 3,
                stride: 1,
                channels: 16,
                pool: true,
            }),
            stages: vec![
                StageSpec { blocks: 1, channels: 16 },
                StageSpec { blocks: 1, channels: 32 },
                StageSpec { blocks: 1, channels: 64 },
            ],
            downsample: Downsample::MaxPool,
            shortcut: Shortcut::ZeroPad,
            batch_norm: true,
            output_width,
        }
    }

    /// Smallest instance used for gradient verification: 16x16 input, stages
    /// `[(1, 4), (1, 8)]`.
    pub fn tiny(output_width: usize) -> Self {
        ArchitectureSpec {
            input_size: 16,
            input_channels: 3,
            stem: Some(StemSpec {
                kernel: 3,
                stride: 1,
                channels: 4,
                pool: false,
            }),
            stages: vec![
                StageSpec { blocks: 1, channels: 4 },
                StageSpec { blocks: 1, channels: 8 },
            ],
            downsample: Downsample::MaxPool,
            shortcut: Shortcut::ZeroPad,
            batch_norm: true,
            output_width,
        }
    }

    pub fn with_output_width(mut self, output_width: usize) -> Self {
        self.output_width = output_width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_channels == 0 {
            return Err(Error::Config("input size and channels must be positive".into()));
        }
        if let Some(stem) = &self.stem {
            if stem.kernel == 0 || stem.stride == 0 || stem.channels == 0 {
                return Err(Error::Config(format!("degenerate stem {stem:?}")));
            }
        }
        if self.stages.iter().any(|s| s.blocks == 0 || s.channels == 0) {
            return Err(Error::Config("every stage needs at least one block and channel".into()));
        }
        let sizes = self.spatial_sizes();
        if sizes.contains(&0) {
            return Err(Error::Config(format!(
                "input size {} collapses to zero: {sizes:?}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Channels entering the head.
    pub fn feature_width(&self) -> usize {
        self.stages
            .last()
            .map(|s| s.channels)
            .or(self.stem.as_ref().map(|s| s.channels))
            .unwrap_or(self.input_channels)
    }

    /// Spatial size after the stem convolution, after the stem pool (if
    /// any), and at the output of every stage.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut s = self.input_size;
        if let Some(stem) = &self.stem {
            s = conv_out(s, stem.kernel, stem.stride, stem.kernel / 2);
            sizes.push(s);
            if stem.pool {
                s = conv_out(s, 3, 2, 1);
                sizes.push(s);
            }
        }
        for (i, _) in self.stages.iter().enumerate() {
            if i > 0 {
                s = match self.downsample {
                    Downsample::MaxPool => conv_out(s, 3, 2, 1),
                    Downsample::StridedConv => conv_out(s, 3, 2, 1),
                };
            }
            sizes.push(s);
        }
        sizes
    }
}

pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    if size + 2 * pad < kernel {
        0
    } else {
        (size + 2 * pad - kernel) / stride + 1
    }
}
