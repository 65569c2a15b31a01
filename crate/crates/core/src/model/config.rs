use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Context configuration of the grounding model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// One joint sequence with every object's views and the language.
    Magic,
    /// One encoder pass per object: `[its views, language]`.
    MagicNoObjCtx,
    /// Views max-pooled into one token per object before a joint encoder pass.
    MagicNoMvCtx,
    /// One pooled token per object, one encoder pass per object.
    MagicNoCtx,
    /// No transformer: pooled raw view and token features, concatenated, scored by an MLP.
    MatchBaseline,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Magic,
        VariantKind::MagicNoObjCtx,
        VariantKind::MagicNoMvCtx,
        VariantKind::MagicNoCtx,
        VariantKind::MatchBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Magic => "magic",
            VariantKind::MagicNoObjCtx => "magic_no_obj_ctx",
            VariantKind::MagicNoMvCtx => "magic_no_mv_ctx",
            VariantKind::MagicNoCtx => "magic_no_ctx",
            VariantKind::MatchBaseline => "match_baseline",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// How a variant turns candidates and language into encoder passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardStrategy {
    pub kind: VariantKind,
    /// Encoder runs once per object instead of once per instance.
    pub separate_objects: bool,
    /// Each object's projected views are max-pooled into one token before encoding.
    pub pool_views_first: bool,
    pub uses_transformer: bool,
}

impl ForwardStrategy {
    /// Encoder sequence length of every pass, given per-object view counts and `k` tokens.
    pub fn sequence_lengths(&self, views: &[usize], tokens: usize) -> Vec<usize> {
        if !self.uses_transformer {
            return Vec::new();
        }
        let unit = |n: usize| if self.pool_views_first { 1 } else { n };
        if self.separate_objects {
            views.iter().map(|&n| unit(n) + tokens).collect()
        } else {
            vec![views.iter().map(|&n| unit(n)).sum::<usize>() + tokens]
        }
    }
}

pub fn make_variant(kind: VariantKind) -> ForwardStrategy {
    let (separate_objects, pool_views_first, uses_transformer) = match kind {
        VariantKind::Magic => (false, false, true),
        VariantKind::MagicNoObjCtx => (true, false, true),
        VariantKind::MagicNoMvCtx => (false, true, true),
        VariantKind::MagicNoCtx => (true, true, true),
        VariantKind::MatchBaseline => (true, true, false),
    };
    ForwardStrategy { kind, separate_objects, pool_views_first, uses_transformer }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_tokens: usize,
    pub max_views: usize,
    pub variant: VariantKind,
    pub use_view_positions: bool,
    pub smoothing: f64,
    pub contrastive_weight: f64,
    pub contrastive_temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 512,
            hidden: 256,
            layers: 3,
            heads: 8,
            ffn_dim: 1024,
            max_tokens: 32,
            max_views: 8,
            variant: VariantKind::Magic,
            use_view_positions: false,
            smoothing: 0.1,
            contrastive_weight: 0.0,
            contrastive_temperature: 0.07,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("feature_dim and hidden must be positive".into()));
        }
        if self.variant != VariantKind::MatchBaseline {
            if self.heads == 0 || self.hidden % self.heads != 0 {
                return Err(Error::Config(format!("hidden {} is not divisible by {} heads", self.hidden, self.heads)));
            }
            if self.ffn_dim == 0 {
                return Err(Error::Config("ffn_dim must be positive".into()));
            }
        }
        if self.max_views == 0 || self.max_tokens == 0 {
            return Err(Error::Config("max_views and max_tokens must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} outside [0,1)", self.smoothing)));
        }
        if self.contrastive_weight < 0.0 {
            return Err(Error::Config("contrastive_weight must be non-negative".into()));
        }
        if self.contrastive_weight > 0.0 {
            if self.contrastive_temperature <= 0.0 {
                return Err(Error::Config("contrastive temperature must be positive".into()));
            }
            if self.variant == VariantKind::MatchBaseline {
                return Err(Error::Config("the contrastive term needs encoder outputs; match_baseline has none".into()));
            }
        }
        Ok(())
    }

    pub fn strategy(&self) -> ForwardStrategy {
        make_variant(self.variant)
    }

    /// Closed-form trainable parameter count of the layer inventory.
    pub fn parameter_count(&self) -> usize {
        let (d, h, f, n) = (self.feature_dim, self.hidden, self.ffn_dim, self.max_views);
        if self.variant == VariantKind::MatchBaseline {
            return 2 * d * h + h + h + 1;
        }
        let projections = 2 * (d * h + h);
        let token_type = 2 * h;
        let positions = if self.use_view_positions { n * h } else { 0 };
        let per_layer = 2 * h + 4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h);
        let final_norm = 2 * h;
        let scorer = (h * h + h) + (h + 1);
        projections + token_type + positions + self.layers * per_layer + final_norm + scorer
    }
}
