//! Multi-stage generator and the per-stage discriminators.

mod discriminator;
mod generator;

pub use discriminator::{
    extract_quadrants, quadrants, reassemble_quadrants, trunk_channels, DiscKind, DiscOutputs,
    DiscriminatorVerdict, StageDiscriminator, StageDiscriminators,
};
pub use generator::{Conditioning, GenOutput, Generator, StageOutput};

use crate::attr_encoder::EMBED_DIM;
use crate::error::{Error, Result};

pub const STAGES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub image_size: usize,
    pub z_dim: usize,
    pub cond_dim: usize,
    pub embed_dim: usize,
    /// Hidden channels of the three generator stages.
    pub gen_channels: [usize; 3],
    /// Channels at the 4x4 end of each discriminator trunk.
    pub disc_width: usize,
    pub use_mask: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            image_size: 64,
            z_dim: 100,
            cond_dim: 16,
            embed_dim: EMBED_DIM,
            gen_channels: [32, 16, 8],
            disc_width: 32,
            use_mask: true,
        }
    }
}

impl GanConfig {
    /// Side lengths of the stage outputs.
    pub fn resolutions(&self) -> [usize; 3] {
        [self.image_size / 4, self.image_size / 2, self.image_size]
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "image_size must be a power of two >= 32, got {}",
                self.image_size
            )));
        }
        if self.z_dim == 0 || self.cond_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("z_dim, cond_dim and embed_dim must be positive".into()));
        }
        if self.gen_channels.contains(&0) || self.disc_width < 8 {
            return Err(Error::Config("channel widths too small".into()));
        }
        Ok(())
    }
}
