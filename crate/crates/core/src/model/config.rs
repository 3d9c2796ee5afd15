use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults describe the full-size model on
/// 176x176 faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of AUs.
    pub n: usize,
    /// Number of landmarks.
    pub m: usize,
    /// Reasoning layers `K`.
    pub k_layers: usize,
    /// Attention heads `L`.
    pub heads: usize,
    /// Attention projection width `D`.
    pub dim: usize,
    /// AU feature width `F`.
    pub feat: usize,
    /// Channels of the global map.
    pub channels: usize,
    /// Spatial extent of the (square) global map.
    pub map_size: usize,
    /// Half-extent of each AU window on the global map.
    pub patch_radius: usize,
    pub lambda_align: f64,
    pub image_size: usize,
    pub image_channels: usize,
    /// Hidden width of the alignment head.
    pub align_hidden: usize,
    /// Landmark indices anchoring each AU; empty means AU `i` uses landmark `i % m`.
    #[serde(default)]
    pub anchors: Vec<Vec<usize>>,
    pub enable_dg: bool,
    pub enable_og: bool,
    pub enable_cg: bool,
    pub enable_pg: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 12,
            m: 49,
            k_layers: 2,
            heads: 8,
            dim: 1024,
            feat: 64,
            channels: 64,
            map_size: 44,
            patch_radius: 2,
            lambda_align: 0.5,
            image_size: 176,
            image_channels: 1,
            align_hidden: 64,
            anchors: Vec::new(),
            enable_dg: true,
            enable_og: true,
            enable_cg: true,
            enable_pg: true,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration used for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            n: 3,
            m: 4,
            k_layers: 1,
            heads: 2,
            dim: 8,
            feat: 8,
            channels: 4,
            map_size: 8,
            patch_radius: 1,
            image_size: 16,
            align_hidden: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k_layers == 0 {
            return fail("k_layers must be at least 1".into());
        }
        if self.n < 2 {
            return fail(format!("n must be at least 2, got {}", self.n));
        }
        if self.m < 2 {
            return fail(format!("m must be at least 2 (two eye landmarks), got {}", self.m));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!("dim {} is not divisible by heads {}", self.dim, self.heads));
        }
        for (name, v) in [
            ("feat", self.feat),
            ("channels", self.channels),
            ("map_size", self.map_size),
            ("image_channels", self.image_channels),
            ("align_hidden", self.align_hidden),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        self.stem_strides()?;
        if !self.lambda_align.is_finite() || self.lambda_align < 0.0 {
            return fail(format!("lambda_align must be a non-negative number, got {}", self.lambda_align));
        }
        if !self.anchors.is_empty() {
            if self.anchors.len() != self.n {
                return fail(format!("{} anchor lists for {} AUs", self.anchors.len(), self.n));
            }
            for (i, a) in self.anchors.iter().enumerate() {
                if a.is_empty() || a.iter().any(|&l| l >= self.m) {
                    return fail(format!("anchors of AU {i} must name landmarks below {}", self.m));
                }
            }
        }
        Ok(())
    }

    /// Strides of the three stem blocks: as many stride-2 blocks as needed to
    /// go from `image_size` down to `map_size`, then stride 1.
    pub fn stem_strides(&self) -> Result<[usize; 3]> {
        let err = || {
            Error::Config(format!(
                "image_size {} must be map_size {} times 1, 2, 4 or 8",
                self.image_size, self.map_size
            ))
        };
        if self.map_size == 0 || !self.image_size.is_multiple_of(self.map_size) {
            return Err(err());
        }
        let ratio = self.image_size / self.map_size;
        let downs = match ratio {
            1 => 0,
            2 => 1,
            4 => 2,
            8 => 3,
            _ => return Err(err()),
        };
        let mut s = [1; 3];
        s.iter_mut().take(downs).for_each(|x| *x = 2);
        Ok(s)
    }

    /// Anchor landmarks of AU `i`.
    pub fn anchor(&self, i: usize) -> Vec<usize> {
        match self.anchors.get(i) {
            Some(a) => a.clone(),
            None => vec![i % self.m],
        }
    }

    pub fn ablation_tag(&self) -> String {
        let flag = |b: bool| if b { '1' } else { '0' };
        format!(
            "dg{}-og{}-cg{}-pg{}",
            flag(self.enable_dg),
            flag(self.enable_og),
            flag(self.enable_cg),
            flag(self.enable_pg)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::default().stem_strides().unwrap(), [2, 2, 1]);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ModelConfig { k_layers: 0, ..ModelConfig::tiny() },
            ModelConfig { n: 1, ..ModelConfig::tiny() },
            ModelConfig { dim: 7, ..ModelConfig::tiny() },
            ModelConfig { image_size: 24, ..ModelConfig::tiny() },
            ModelConfig { anchors: vec![vec![9]; 3], ..ModelConfig::tiny() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }
}
