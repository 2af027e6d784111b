use serde::{Deserialize, Serialize};

use crate::numkit::{GruCellParams, Mat, ParamSet};
use crate::rngs;

/// Number of per-region geometric encoding entries ahead of the appearance
/// projection: `cx, cy, ln w, ln h, confidence, cx² + cy²`.
pub const GEOMETRY_FEATURES: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScemeConfig {
    pub feature_dim: usize,
    /// Classifier outputs: `C + 1` including background.
    pub num_labels: usize,
    pub attention_dim: usize,
    pub appearance_dim: usize,
    /// Divides attention logits on top of the `1/sqrt(attention_dim)` scale.
    pub attention_temperature: f64,
    /// Message-passing rounds; recorded gates come from the last round.
    pub rounds: usize,
    /// Node-feature dropout applied during training only.
    pub dropout: f64,
}

impl Default for ScemeConfig {
    fn default() -> Self {
        ScemeConfig {
            feature_dim: 32,
            num_labels: 7,
            attention_dim: 16,
            appearance_dim: 8,
            attention_temperature: 1.0,
            rounds: 1,
            dropout: 0.3,
        }
    }
}

impl ScemeConfig {
    pub fn encoding_dim(&self) -> usize {
        GEOMETRY_FEATURES + self.appearance_dim
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.feature_dim == 0 || self.attention_dim == 0 {
            return Err("feature_dim and attention_dim must be positive".into());
        }
        if self.num_labels < 2 {
            return Err("num_labels must be at least 2".into());
        }
        if self.rounds == 0 {
            return Err("rounds must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        if !(self.attention_temperature > 0.0) {
            return Err("attention_temperature must be positive".into());
        }
        Ok(())
    }
}

/// Weights of the context model: two GRUs (regions, scene), attention
/// projections over geometry/appearance encodings, and the detection heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ScemeModel {
    pub config: ScemeConfig,
    pub region_gru: GruCellParams,
    pub scene_gru: GruCellParams,
    /// `appearance_dim × D` linear appearance summary for the encoding.
    pub appearance: Mat,
    pub query: Mat,
    pub query_bias: Mat,
    pub key: Mat,
    pub key_bias: Mat,
    pub cls_weight: Mat,
    pub cls_bias: Mat,
    pub reg_weight: Mat,
    pub reg_bias: Mat,
}

impl ScemeModel {
    pub fn zeros(config: ScemeConfig) -> Self {
        let d = config.feature_dim;
        let g = config.encoding_dim();
        let a = config.attention_dim;
        ScemeModel {
            region_gru: GruCellParams::zeros(d),
            scene_gru: GruCellParams::zeros(d),
            appearance: Mat::zeros(config.appearance_dim, d),
            query: Mat::zeros(a, g),
            query_bias: Mat::zeros(a, 1),
            key: Mat::zeros(a, g),
            key_bias: Mat::zeros(a, 1),
            cls_weight: Mat::zeros(config.num_labels, d),
            cls_bias: Mat::zeros(config.num_labels, 1),
            reg_weight: Mat::zeros(4, d),
            reg_bias: Mat::zeros(4, 1),
            config,
        }
    }

    /// Seeded init, uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(config: ScemeConfig, seed: u64) -> Self {
        let mut rng = rngs::stream(seed, &[0x5ce3e]);
        let d = config.feature_dim;
        let g = config.encoding_dim();
        let a = config.attention_dim;
        let mut m = ScemeModel::zeros(config.clone());
        m.region_gru = GruCellParams::init(d, &mut rng);
        m.scene_gru = GruCellParams::init(d, &mut rng);
        m.appearance = Mat::uniform(config.appearance_dim, d, d, &mut rng);
        m.query = Mat::uniform(a, g, g, &mut rng);
        m.key = Mat::uniform(a, g, g, &mut rng);
        m.cls_weight = Mat::uniform(config.num_labels, d, d, &mut rng);
        m.reg_weight = Mat::uniform(4, d, d, &mut rng);
        // keep the box head near zero so early losses are dominated by
        // classification
        m.reg_weight.scale(0.1);
        m
    }

    pub fn zeros_like(&self) -> Self {
        ScemeModel::zeros(self.config.clone())
    }
}

impl ParamSet for ScemeModel {
    fn blocks(&self) -> Vec<(&'static str, &Mat)> {
        let names_r = [
            "region.w_reset",
            "region.b_reset",
            "region.w_update",
            "region.b_update",
            "region.w_input",
            "region.w_memory",
        ];
        let names_s = [
            "scene.w_reset",
            "scene.b_reset",
            "scene.w_update",
            "scene.b_update",
            "scene.w_input",
            "scene.w_memory",
        ];
        let mut out: Vec<(&'static str, &Mat)> = Vec::with_capacity(21);
        out.extend(names_r.into_iter().zip(self.region_gru.blocks()));
        out.extend(names_s.into_iter().zip(self.scene_gru.blocks()));
        out.extend([
            ("attn.appearance", &self.appearance),
            ("attn.query", &self.query),
            ("attn.query_bias", &self.query_bias),
            ("attn.key", &self.key),
            ("attn.key_bias", &self.key_bias),
            ("head.cls_weight", &self.cls_weight),
            ("head.cls_bias", &self.cls_bias),
            ("head.reg_weight", &self.reg_weight),
            ("head.reg_bias", &self.reg_bias),
        ]);
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = Vec::with_capacity(21);
        out.extend(self.region_gru.blocks_mut());
        out.extend(self.scene_gru.blocks_mut());
        out.extend([
            &mut self.appearance,
            &mut self.query,
            &mut self.query_bias,
            &mut self.key,
            &mut self.key_bias,
            &mut self.cls_weight,
            &mut self.cls_bias,
            &mut self.reg_weight,
            &mut self.reg_bias,
        ]);
        out
    }
}
