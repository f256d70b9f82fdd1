use serde::{Deserialize, Serialize};

use crate::error::{PulseError, Result};
use crate::tensorcore::ConvSpec;

/// Which embedding streams feed the attention queries and keys/values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttentionMode {
    /// PPG queries, accelerometer keys/values (cross-attention).
    MhcaPpgQ,
    /// Accelerometer queries, PPG keys/values.
    MhcaPpgKv,
    /// PPG self-attention; accelerometer input is ignored.
    MhsaPpgOnly,
    /// Self-attention over the PPG and accelerometer sequences concatenated.
    MhsaConcat,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 4] = [
        AttentionMode::MhcaPpgQ,
        AttentionMode::MhcaPpgKv,
        AttentionMode::MhsaPpgOnly,
        AttentionMode::MhsaConcat,
    ];

    pub fn uses_accelerometer(self) -> bool {
        self != AttentionMode::MhsaPpgOnly
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseConfig {
    pub block_channels: Vec<usize>,
    pub convs_per_block: usize,
    pub dilation: usize,
    pub kernel_size: usize,
    pub pool_factor: usize,
    pub heads: usize,
    pub d_model: usize,
    pub head_hidden: usize,
    pub attention_mode: AttentionMode,
    pub ppg_channels: usize,
    pub acc_channels: usize,
    pub window_len: usize,
    /// Output de-normalization: `hr = raw · target_std + target_mean`.
    pub target_mean: f32,
    pub target_std: f32,
}

impl Default for PulseConfig {
    fn default() -> Self {
        PulseConfig {
            block_channels: vec![32, 48, 64],
            convs_per_block: 3,
            dilation: 2,
            kernel_size: 3,
            pool_factor: 2,
            heads: 4,
            d_model: 64,
            head_hidden: 128,
            attention_mode: AttentionMode::MhcaPpgQ,
            ppg_channels: 1,
            acc_channels: 3,
            window_len: 256,
            target_mean: 0.0,
            target_std: 1.0,
        }
    }
}

impl PulseConfig {
    /// Small network used by gradient checks and smoke tests.
    pub fn tiny() -> Self {
        PulseConfig {
            block_channels: vec![4, 6, 8],
            d_model: 8,
            heads: 2,
            head_hidden: 16,
            ..Default::default()
        }
    }

    /// Reduced network for desk-scale end-to-end runs.
    pub fn reduced() -> Self {
        PulseConfig {
            block_channels: vec![8, 12, 16],
            d_model: 16,
            ..Default::default()
        }
    }

    pub fn with_mode(mut self, mode: AttentionMode) -> Self {
        self.attention_mode = mode;
        self
    }

    pub fn input_channels(&self) -> usize {
        self.ppg_channels + self.acc_channels
    }

    pub fn feature_dim(&self) -> usize {
        *self.block_channels.last().expect("validated nonempty")
    }

    /// Embedding sequence length per modality stream.
    pub fn seq_len(&self) -> usize {
        self.window_len / self.pool_factor.pow(self.block_channels.len() as u32)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Conv specs of one extractor with `in_channels` input channels, in
    /// execution order.
    pub fn conv_specs(&self, in_channels: usize) -> Result<Vec<ConvSpec>> {
        let mut specs = Vec::new();
        let mut c_in = in_channels;
        for &c_out in &self.block_channels {
            for _ in 0..self.convs_per_block {
                specs.push(ConvSpec::same(c_in, c_out, self.kernel_size, self.dilation)?);
                c_in = c_out;
            }
        }
        Ok(specs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PulseError::Config(m));
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return bad(format!("block_channels {:?} must be nonempty and positive", self.block_channels));
        }
        if self.convs_per_block == 0 || self.kernel_size == 0 || self.dilation == 0 || self.pool_factor == 0 {
            return bad("convs_per_block, kernel_size, dilation and pool_factor must be >= 1".into());
        }
        if !((self.kernel_size - 1) * self.dilation).is_multiple_of(2) {
            return bad(format!(
                "(kernel_size - 1) * dilation = {} must be even for length-preserving padding",
                (self.kernel_size - 1) * self.dilation
            ));
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.head_hidden == 0 {
            return bad("head_hidden must be >= 1".into());
        }
        if self.ppg_channels == 0 {
            return bad("ppg_channels must be >= 1".into());
        }
        if self.acc_channels != 3 {
            return bad(format!("acc_channels must be 3 (x, y, z), got {}", self.acc_channels));
        }
        let pool_total = self.pool_factor.pow(self.block_channels.len() as u32);
        if self.window_len == 0 || !self.window_len.is_multiple_of(pool_total) {
            return bad(format!(
                "window_len {} not divisible by total pooling {pool_total}",
                self.window_len
            ));
        }
        if !(self.target_std.is_finite() && self.target_std > 0.0) || !self.target_mean.is_finite() {
            return bad(format!("bad target stats mean={} std={}", self.target_mean, self.target_std));
        }
        Ok(())
    }
}

/// Weights plus biases of a `f_in -> f_out` dense layer.
pub fn dense_param_count(f_in: usize, f_out: usize) -> usize {
    f_in * f_out + f_out
}

/// Exact number of learnable scalars for `config`. The layout does not depend
/// on the attention mode: every mode owns both extractors and the same
/// projection shapes.
pub fn param_count(config: &PulseConfig) -> Result<usize> {
    config.validate()?;
    let extractor = |c_in: usize| -> usize {
        let mut n = 0;
        let mut prev = c_in;
        for &c in &config.block_channels {
            for _ in 0..config.convs_per_block {
                n += c * prev * config.kernel_size + c;
                prev = c;
            }
        }
        n
    };
    let dense = dense_param_count;
    let f = config.feature_dim();
    let dm = config.d_model;
    Ok(extractor(config.ppg_channels)
        + extractor(1)
        + 3 * f * dm
        + dense(dm, dm)
        + 2 * dm
        + dense(dm, config.head_hidden)
        + dense(config.head_hidden, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dense_layer_count() {
        assert_eq!(dense_param_count(2, 3), 9);
    }

    #[test]
    fn default_shapes() {
        let c = PulseConfig::default();
        c.validate().unwrap();
        assert_eq!(c.seq_len(), 32);
        assert_eq!(c.feature_dim(), 64);
        assert_eq!(c.head_dim(), 16);
        assert_eq!(c.conv_specs(1).unwrap().len(), 9);
    }

    #[test]
    fn invalid_configs() {
        let mut c = PulseConfig::default();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = PulseConfig::default();
        c.window_len = 250;
        assert!(c.validate().is_err());
        let mut c = PulseConfig::default();
        c.kernel_size = 2;
        c.dilation = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_serializes_upper_snake() {
        let s = serde_json::to_string(&AttentionMode::MhcaPpgQ).unwrap();
        assert_eq!(s, "\"MHCA_PPG_Q\"");
        let m: AttentionMode = serde_json::from_str("\"MHSA_PPG_ONLY\"").unwrap();
        assert_eq!(m, AttentionMode::MhsaPpgOnly);
    }

    #[test]
    fn count_independent_of_mode() {
        let counts: Vec<usize> = AttentionMode::ALL
            .iter()
            .map(|&m| param_count(&PulseConfig::default().with_mode(m)).unwrap())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
    }
}
