use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Sizes and topology of the three-module network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub d_x: usize,
    pub d_y: usize,
    pub d_z: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub encoder_conv_block: Vec<usize>,
    /// Dilations of decoder conv layers B1, B2, ... in order.
    pub decoder_conv_blocks: Vec<usize>,
    /// Baseline mode: the linguistic encoder emits a point latent.
    pub deterministic_latent: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            d_x: 16,
            d_y: 12,
            d_z: 8,
            encoder_hidden: 128,
            decoder_hidden: 256,
            encoder_conv_block: vec![1, 3, 9, 27],
            decoder_conv_blocks: vec![1, 3, 9, 27, 1, 3, 9, 27],
            deterministic_latent: false,
        }
    }
}

impl NetworkConfig {
    /// Dimensions used by the original large-scale experiments.
    pub fn paper_scale() -> Self {
        NetworkConfig {
            d_x: 389,
            d_y: 80,
            d_z: 64,
            ..Self::default()
        }
    }

    /// CPU-friendly sizes used by the synthetic experiments.
    pub fn desk_scale() -> Self {
        NetworkConfig {
            encoder_hidden: 8,
            decoder_hidden: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_x", self.d_x),
            ("d_y", self.d_y),
            ("d_z", self.d_z),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.encoder_conv_block.is_empty() || self.decoder_conv_blocks.is_empty() {
            return Err(Error::Config("conv blocks must contain at least one layer".into()));
        }
        if self
            .encoder_conv_block
            .iter()
            .chain(&self.decoder_conv_blocks)
            .any(|&d| d == 0)
        {
            return Err(Error::Config("dilations must be positive".into()));
        }
        Ok(())
    }

    /// Frames on each side of a decoder output that can influence it.
    pub fn decoder_reach(&self) -> usize {
        self.decoder_conv_blocks.iter().sum()
    }

    pub fn encoder_reach(&self) -> usize {
        self.encoder_conv_block.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_dimensions() {
        let c = NetworkConfig::paper_scale();
        assert_eq!((c.d_x, c.d_y, c.d_z), (389, 80, 64));
        assert_eq!((c.encoder_hidden, c.decoder_hidden), (128, 256));
        assert_eq!(c.decoder_conv_blocks.len(), 8);
        assert_eq!(c.decoder_reach(), 80);
        assert_eq!(c.encoder_reach(), 40);
        c.validate().unwrap();
    }

    #[test]
    fn zero_dims_are_rejected() {
        let mut c = NetworkConfig::desk_scale();
        c.d_z = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = NetworkConfig::desk_scale();
        c.decoder_conv_blocks[2] = 0;
        assert!(c.validate().is_err());
    }
}
