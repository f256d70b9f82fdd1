use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PulseConfig;
use crate::error::{PulseError, Result};
use crate::tensorcore::{ConvSpec, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `uniform(-a, a)` with `a = sqrt(6 / fan_in)`, for layers feeding a ReLU.
    He { fan_in: usize },
    /// `uniform(-a, a)` with `a = sqrt(3 / fan_in)`, unit-variance linear maps.
    Lecun { fan_in: usize },
    Zeros,
    Ones,
}

impl Init {
    pub fn bound(self) -> Option<f32> {
        match self {
            Init::He { fan_in } => Some((6.0 / fan_in as f64).sqrt() as f32),
            Init::Lecun { fan_in } => Some((3.0 / fan_in as f64).sqrt() as f32),
            Init::Zeros | Init::Ones => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvIndex {
    pub weight: usize,
    pub bias: usize,
    pub spec: ConvSpec,
    pub block: usize,
    /// Position within the block.
    pub layer: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorIndex {
    pub prefix: &'static str,
    pub convs: Vec<ConvIndex>,
}

/// Positions of every named tensor inside [`PulseParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamIndex {
    pub ppg: ExtractorIndex,
    pub acc: ExtractorIndex,
    pub query: usize,
    pub key: usize,
    pub value: usize,
    pub out_weight: usize,
    pub out_bias: usize,
    pub norm_gain: usize,
    pub norm_shift: usize,
    pub hidden_weight: usize,
    pub hidden_bias: usize,
    pub output_weight: usize,
    pub output_bias: usize,
}

/// Ordered tensor table derived from a [`PulseConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub config: PulseConfig,
    pub specs: Vec<ParamSpec>,
    pub index: ParamIndex,
}

impl ParamLayout {
    pub fn new(config: &PulseConfig) -> Result<Self> {
        config.validate()?;
        let mut specs = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| {
            specs.push(ParamSpec { name, shape, init });
            specs.len() - 1
        };

        let extractor = |prefix: &'static str, c_in: usize, add: &mut dyn FnMut(String, Vec<usize>, Init) -> usize| {
            let convs = config
                .conv_specs(c_in)?
                .into_iter()
                .enumerate()
                .map(|(k, spec)| {
                    let (block, layer) = (k / config.convs_per_block, k % config.convs_per_block);
                    let base = format!("{prefix}.block{block}.conv{layer}");
                    let weight = add(
                        format!("{base}.weight"),
                        vec![spec.out_channels, spec.in_channels, spec.kernel_size],
                        Init::He {
                            fan_in: spec.in_channels * spec.kernel_size,
                        },
                    );
                    let bias = add(format!("{base}.bias"), vec![spec.out_channels], Init::Zeros);
                    ConvIndex {
                        weight,
                        bias,
                        spec,
                        block,
                        layer,
                    }
                })
                .collect();
            Ok::<_, PulseError>(ExtractorIndex { prefix, convs })
        };
        let ppg = extractor("ppg", config.ppg_channels, &mut add)?;
        let acc = extractor("acc", 1, &mut add)?;

        let f = config.feature_dim();
        let dm = config.d_model;
        let hid = config.head_hidden;
        let proj = Init::Lecun { fan_in: f };
        let query = add("attn.query.weight".into(), vec![f, dm], proj);
        let key = add("attn.key.weight".into(), vec![f, dm], proj);
        let value = add("attn.value.weight".into(), vec![f, dm], proj);
        let out_weight = add("attn.out.weight".into(), vec![dm, dm], Init::Lecun { fan_in: dm });
        let out_bias = add("attn.out.bias".into(), vec![dm], Init::Zeros);
        let norm_gain = add("norm.gain".into(), vec![dm], Init::Ones);
        let norm_shift = add("norm.shift".into(), vec![dm], Init::Zeros);
        let hidden_weight = add("head.dense0.weight".into(), vec![dm, hid], Init::He { fan_in: dm });
        let hidden_bias = add("head.dense0.bias".into(), vec![hid], Init::Zeros);
        let output_weight = add("head.dense1.weight".into(), vec![hid, 1], Init::Lecun { fan_in: hid });
        let output_bias = add("head.dense1.bias".into(), vec![1], Init::Zeros);

        Ok(ParamLayout {
            config: config.clone(),
            specs,
            index: ParamIndex {
                ppg,
                acc,
                query,
                key,
                value,
                out_weight,
                out_bias,
                norm_gain,
                norm_shift,
                hidden_weight,
                hidden_bias,
                output_weight,
                output_bias,
            },
        })
    }

    pub fn total_len(&self) -> usize {
        self.specs.iter().map(ParamSpec::len).sum()
    }

    /// Name of the layer a parameter tensor belongs to (its name without the
    /// trailing `.weight` / `.bias` / `.gain` / `.shift`).
    pub fn layer_of(&self, param: usize) -> &str {
        let name = &self.specs[param].name;
        name.rsplit_once('.').map_or(name.as_str(), |(layer, _)| layer)
    }
}

/// All learnable tensors of the network together with the layout (and hence
/// configuration) they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseParams<T: Scalar = f32> {
    layout: Arc<ParamLayout>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> PulseParams<T> {
    pub fn from_tensors(layout: Arc<ParamLayout>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != layout.specs.len() {
            return Err(PulseError::dim("PulseParams", "tensor count", layout.specs.len(), tensors.len()));
        }
        for (t, s) in tensors.iter().zip(&layout.specs) {
            if t.shape() != s.shape.as_slice() {
                return Err(PulseError::Format(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(PulseParams { layout, tensors })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> Arc<ParamLayout> {
        self.layout.clone()
    }

    pub fn config(&self) -> &PulseConfig {
        &self.layout.config
    }

    pub fn index(&self) -> &ParamIndex {
        &self.layout.index
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.layout
            .specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| &self.tensors[i])
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn set_target_stats(&mut self, mean: f32, std: f32) -> Result<()> {
        let mut cfg = self.layout.config.clone();
        cfg.target_mean = mean;
        cfg.target_std = std;
        cfg.validate()?;
        Arc::make_mut(&mut self.layout).config = cfg;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> PulseParams<U> {
        PulseParams {
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Deterministic initialization: weights uniform within [`Init::bound`],
/// biases zero, layer-norm gain one. Tensors are drawn in layout order from a
/// ChaCha8 stream seeded with `seed`.
pub fn init_params(config: &PulseConfig, seed: u64) -> Result<PulseParams> {
    let layout = Arc::new(ParamLayout::new(config)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout
        .specs
        .iter()
        .map(|s| match (s.init, s.init.bound()) {
            (_, Some(a)) => Tensor::from_fn(&s.shape, |_| rng.random_range(-a..a)),
            (Init::Ones, _) => Tensor::filled(&s.shape, 1.0),
            _ => Tensor::zeros(&s.shape),
        })
        .collect();
    PulseParams::from_tensors(layout, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::param_count;

    #[test]
    fn layout_matches_analytic_count() {
        for cfg in [PulseConfig::default(), PulseConfig::tiny(), PulseConfig::reduced()] {
            let layout = ParamLayout::new(&cfg).unwrap();
            assert_eq!(layout.total_len(), param_count(&cfg).unwrap());
        }
        let mut ieee = PulseConfig::default();
        ieee.ppg_channels = 2;
        assert_eq!(ParamLayout::new(&ieee).unwrap().total_len(), param_count(&ieee).unwrap());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = init_params(&PulseConfig::tiny(), 7).unwrap();
        let b = init_params(&PulseConfig::tiny(), 7).unwrap();
        let c = init_params(&PulseConfig::tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tensors, c.tensors);
    }

    #[test]
    fn init_within_fan_in_bound() {
        let p = init_params(&PulseConfig::default(), 3).unwrap();
        for (t, s) in p.tensors.iter().zip(&p.layout().specs) {
            match (s.init, s.init.bound()) {
                (_, Some(a)) => {
                    assert!(t.data().iter().all(|v| v.abs() <= a), "{}", s.name);
                    assert!(t.data().iter().any(|&v| v != 0.0));
                }
                (Init::Ones, _) => assert!(t.data().iter().all(|&v| v == 1.0)),
                _ => assert!(t.data().iter().all(|&v| v == 0.0)),
            }
        }
    }

    #[test]
    fn layer_names() {
        let layout = ParamLayout::new(&PulseConfig::tiny()).unwrap();
        let w = layout.index.ppg.convs[4].weight;
        assert_eq!(layout.specs[w].name, "ppg.block1.conv1.weight");
        assert_eq!(layout.layer_of(w), "ppg.block1.conv1");
        assert_eq!(layout.layer_of(layout.index.norm_gain), "norm");
    }
}
