use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Serialized as JSON with these field names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_steps: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub ddc_kernel: usize,
    pub involution_kernel: usize,
    pub groups: usize,
    pub reduction: usize,
    pub ffn_expansion: usize,
    pub use_ddc: bool,
    pub use_involution3d: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 2,
            input_steps: 4,
            height: 32,
            width: 32,
            patch_size: 2,
            embed_dim: 64,
            depth: 2,
            ddc_kernel: 3,
            involution_kernel: 3,
            groups: 1,
            reduction: 4,
            ffn_expansion: 2,
            use_ddc: true,
            use_involution3d: true,
        }
    }
}

/// The four points of the ablation lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WithoutDdc,
    WithoutInvolution,
    WithoutAll,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::WithoutDdc,
        Variant::WithoutInvolution,
        Variant::WithoutAll,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutDdc => "w/o DDC",
            Variant::WithoutInvolution => "w/o Involution3D",
            Variant::WithoutAll => "w/o all",
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and the gradient checker.
    pub fn tiny() -> Self {
        ModelConfig {
            in_channels: 2,
            input_steps: 2,
            height: 4,
            width: 4,
            patch_size: 1,
            embed_dim: 8,
            depth: 1,
            ..Default::default()
        }
    }

    pub fn with_grid(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.use_ddc = matches!(v, Variant::Full | Variant::WithoutInvolution);
        self.use_involution3d = matches!(v, Variant::Full | Variant::WithoutDdc);
        self
    }

    pub fn variant(&self) -> Variant {
        match (self.use_ddc, self.use_involution3d) {
            (true, true) => Variant::Full,
            (false, true) => Variant::WithoutDdc,
            (true, false) => Variant::WithoutInvolution,
            (false, false) => Variant::WithoutAll,
        }
    }

    /// Spatial size after patch embedding.
    pub fn latent_grid(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("input_steps", self.input_steps),
            ("height", self.height),
            ("width", self.width),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("groups", self.groups),
            ("reduction", self.reduction),
            ("ffn_expansion", self.ffn_expansion),
        ] {
            if v == 0 {
                return bad(format!("{name} must be ≥ 1"));
            }
        }
        if !(1..=8).contains(&self.depth) {
            return bad(format!("depth must be in 1..=8, got {}", self.depth));
        }
        for (name, k) in [("ddc_kernel", self.ddc_kernel), ("involution_kernel", self.involution_kernel)] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return bad(format!(
                "grid {}×{} is not divisible by patch size {}; height and width must be multiples of {}",
                self.height, self.width, self.patch_size, self.patch_size
            ));
        }
        if self.embed_dim % self.reduction != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by reduction {}",
                self.embed_dim, self.reduction
            ));
        }
        if self.embed_dim % self.groups != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by groups {}",
                self.embed_dim, self.groups
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_uses_field_names() {
        let cfg = ModelConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"embed_dim\":64"));
        assert!(text.contains("\"use_involution3d\":true"));
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ModelConfig = serde_json::from_str(r#"{"embed_dim": 16}"#).unwrap();
        assert_eq!(partial.depth, 2);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"embedding": 16}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::default().with_grid(10, 20).validate().is_ok());
        let bad = ModelConfig {
            patch_size: 3,
            ..Default::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("multiples of 3"), "{msg}");
        assert!(ModelConfig { embed_dim: 6, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { depth: 9, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { ddc_kernel: 4, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn variants_round_trip() {
        for v in Variant::ALL {
            assert_eq!(ModelConfig::default().with_variant(v).variant(), v);
        }
    }
}
