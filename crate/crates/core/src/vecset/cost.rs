//! Exact attention work and parameter counts of a model configuration.
//!
//! Pair counts are per head: one pair is one query-key score. Multiply by
//! the head count for the number of scalar attention scores.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigCost {
    /// Decoder self-attention pairs, `sum_i layers_i * M_i^2`.
    pub self_attn_pairs: u64,
    /// Encoder resampling pairs, `M_1 * N + sum_{i>1} M_i * M_{i-1}`.
    pub encoder_cross_pairs: u64,
    /// Decoder upsampling pairs, `sum_{i<L} M_i * M_{i+1}`.
    pub decoder_cross_pairs: u64,
    /// Query head pairs per query point, `sum_i M_i`.
    pub query_pairs_per_point: u64,
    pub parameters: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub a: ConfigCost,
    pub b: ConfigCost,
    /// `b / a` for self-attention pairs.
    pub self_attn_ratio: f64,
    pub parameter_ratio: f64,
}

/// Parameters of one attention block of width `c` with feed-forward ratio `r`.
pub fn block_parameters(c: u64, r: u64) -> u64 {
    4 * c * c + 3 * c + (c * r * c + r * c) + (r * c * c + c)
}

pub fn config_cost(config: &ModelConfig, input_points: u64) -> ConfigCost {
    let (c, r) = (config.width as u64, config.mlp_ratio as u64);
    let m: Vec<u64> = config.levels.iter().map(|l| l.latent_count as u64).collect();
    let n = m.len();
    let self_attn_pairs = config.levels.iter().map(|l| l.sa_layers as u64 * (l.latent_count as u64).pow(2)).sum();
    let encoder_cross_pairs = m[0] * input_points + m.windows(2).map(|w| w[0] * w[1]).sum::<u64>();
    let decoder_cross_pairs = m.windows(2).map(|w| w[0] * w[1]).sum();
    let query_pairs_per_point = m.iter().sum();

    let block = block_parameters(c, r);
    let mut parameters = config.pe_width as u64 * c + c + n as u64 * c + 1;
    for (i, l) in config.levels.iter().enumerate() {
        let d = l.latent_channels as u64;
        let bottleneck = (c * d + d) + 2 * d + (d * c + c);
        let upsample = u64::from(i + 1 < n);
        parameters += bottleneck + block * (2 + upsample + l.sa_layers as u64);
    }
    ConfigCost { self_attn_pairs, encoder_cross_pairs, decoder_cross_pairs, query_pairs_per_point, parameters }
}

/// Compares two configurations; ratios are `b / a`.
pub fn attention_cost_account(a: &ModelConfig, b: &ModelConfig, input_points: u64) -> CostReport {
    let (ca, cb) = (config_cost(a, input_points), config_cost(b, input_points));
    CostReport {
        self_attn_ratio: cb.self_attn_pairs as f64 / ca.self_attn_pairs as f64,
        parameter_ratio: cb.parameters as f64 / ca.parameters as f64,
        a: ca,
        b: cb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecset::model::HierarchicalModel;

    #[test]
    fn flat_versus_hierarchical_self_attention() {
        let flat = ModelConfig::flat_baseline(512);
        let hier = ModelConfig::objaverse_latents(512);
        let r = attention_cost_account(&flat, &hier, 8192);
        assert_eq!(r.a.self_attn_pairs, 24 * 2048 * 2048);
        assert_eq!(r.a.self_attn_pairs, 100_663_296);
        assert_eq!(r.b.self_attn_pairs, 8 * (128 * 128 + 512 * 512 + 2048 * 2048));
        assert_eq!(r.b.self_attn_pairs, 35_782_656);
        assert_eq!(r.self_attn_ratio, 35_782_656.0 / 100_663_296.0);
        assert_eq!(format!("{:.4}", r.self_attn_ratio), "0.3555");
    }

    #[test]
    fn identical_configs_have_unit_ratio() {
        let c = ModelConfig::objaverse_latents(256);
        let r = attention_cost_account(&c, &c, 4096);
        assert_eq!(r.self_attn_ratio, 1.0);
        assert_eq!(r.parameter_ratio, 1.0);
    }

    #[test]
    fn parameter_count_matches_initialized_store() {
        for config in [ModelConfig::tiny(), ModelConfig::shapenet_latents(48, 2), ModelConfig::new(24, vec![super::super::LevelConfig::new(8, 6, 3)])] {
            let (_, store) = HierarchicalModel::init(config.clone(), 0).unwrap();
            assert_eq!(config_cost(&config, 100).parameters, store.num_scalars() as u64);
        }
    }
}
