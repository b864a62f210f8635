use std::fmt;

use crate::error::{Error, Result};
use crate::targets::NUM_KEYS;

/// Video transformer geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Frames per clip.
    pub frames: usize,
    /// Square input side in pixels.
    pub resolution: usize,
    /// Frames per tubelet.
    pub tubelet: usize,
    /// Tubelet side in pixels.
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub channels: usize,
    /// MLP hidden width as a multiple of `dim`.
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    /// Base-size backbone at 224×224 over 16 frames.
    fn default() -> Self {
        ModelConfig {
            frames: 16,
            resolution: 224,
            tubelet: 2,
            patch: 16,
            dim: 768,
            layers: 12,
            heads: 12,
            channels: 3,
            mlp_ratio: 4,
        }
    }
}

impl ModelConfig {
    /// Small grayscale configuration that trains on a laptop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            frames: 16,
            resolution: 32,
            tubelet: 2,
            patch: 8,
            dim: 64,
            layers: 4,
            heads: 4,
            channels: 1,
            mlp_ratio: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("resolution", self.resolution),
            ("tubelet", self.tubelet),
            ("patch", self.patch),
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.frames.is_multiple_of(self.tubelet) {
            return Err(Error::Config(format!(
                "frames {} not divisible by tubelet depth {}",
                self.frames, self.tubelet
            )));
        }
        if !self.resolution.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "resolution {} not divisible by patch size {}",
                self.resolution, self.patch
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by head count {}",
                self.dim, self.heads
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.resolution / self.patch
    }

    /// `(frames/tubelet)·(resolution/patch)²`.
    pub fn tokens(&self) -> usize {
        (self.frames / self.tubelet) * self.patches_per_side() * self.patches_per_side()
    }

    /// Values in one flattened tubelet.
    pub fn tubelet_len(&self) -> usize {
        self.tubelet * self.patch * self.patch * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    /// Values in one input frame.
    pub fn frame_len(&self) -> usize {
        self.resolution * self.resolution * self.channels
    }

    /// Values in one input clip.
    pub fn clip_len(&self) -> usize {
        self.frames * self.resolution * self.resolution * self.channels
    }

    pub fn outputs(&self) -> usize {
        NUM_KEYS
    }

    pub(crate) fn to_kv(self) -> Vec<(&'static str, usize)> {
        vec![
            ("frames", self.frames),
            ("resolution", self.resolution),
            ("tubelet", self.tubelet),
            ("patch", self.patch),
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("channels", self.channels),
            ("mlp_ratio", self.mlp_ratio),
        ]
    }

    pub(crate) fn from_kv(kv: &[(String, usize)]) -> Result<Self> {
        let get = |k: &str| {
            kv.iter()
                .find(|(name, _)| name == k)
                .map(|&(_, v)| v)
                .ok_or_else(|| Error::Checkpoint(format!("missing config key {k}")))
        };
        let c = ModelConfig {
            frames: get("frames")?,
            resolution: get("resolution")?,
            tubelet: get("tubelet")?,
            patch: get("patch")?,
            dim: get("dim")?,
            layers: get("layers")?,
            heads: get("heads")?,
            channels: get("channels")?,
            mlp_ratio: get("mlp_ratio")?,
        };
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "T={} S={} t={} p={} d={} L={} h={} C={}",
            self.frames,
            self.resolution,
            self.tubelet,
            self.patch,
            self.dim,
            self.layers,
            self.heads,
            self.channels
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_token_count() {
        let c = ModelConfig {
            channels: 3,
            ..ModelConfig::desk()
        };
        c.validate().unwrap();
        assert_eq!(c.tokens(), 128);
        assert_eq!(ModelConfig::default().tokens(), 8 * 14 * 14);
    }

    #[test]
    fn divisibility_errors() {
        let bad = ModelConfig {
            dim: 65,
            heads: 8,
            ..ModelConfig::desk()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ModelConfig {
            frames: 15,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            resolution: 30,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
    }
}
