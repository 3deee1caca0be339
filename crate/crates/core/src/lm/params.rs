//! Flat parameter storage with GPT-2 tensor names.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::real::Real;

/// Name, shape and location of one tensor inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub ln1_w: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub ln2_w: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub fc_proj_w: Range<usize>,
    pub fc_proj_b: Range<usize>,
}

/// Offsets of every tensor for a given config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub(crate) wte: Range<usize>,
    pub(crate) wpe: Range<usize>,
    pub(crate) layers: Vec<LayerSlots>,
    pub(crate) lnf_w: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    specs: Vec<TensorSpec>,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let dm = config.d_mlp();
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            let range = offset..offset + len;
            offset += len;
            specs.push(TensorSpec { name, shape, range: range.clone() });
            range
        };
        let wte = add("wte".into(), vec![config.vocab_size, d]);
        let wpe = add("wpe".into(), vec![config.context_length, d]);
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = |s: &str| format!("h.{l}.{s}");
                LayerSlots {
                    ln1_w: add(p("ln_1.weight"), vec![d]),
                    ln1_b: add(p("ln_1.bias"), vec![d]),
                    qkv_w: add(p("attn.c_attn.weight"), vec![d, 3 * d]),
                    qkv_b: add(p("attn.c_attn.bias"), vec![3 * d]),
                    proj_w: add(p("attn.c_proj.weight"), vec![d, d]),
                    proj_b: add(p("attn.c_proj.bias"), vec![d]),
                    ln2_w: add(p("ln_2.weight"), vec![d]),
                    ln2_b: add(p("ln_2.bias"), vec![d]),
                    fc_w: add(p("mlp.c_fc.weight"), vec![d, dm]),
                    fc_b: add(p("mlp.c_fc.bias"), vec![dm]),
                    fc_proj_w: add(p("mlp.c_proj.weight"), vec![dm, d]),
                    fc_proj_b: add(p("mlp.c_proj.bias"), vec![d]),
                }
            })
            .collect();
        let lnf_w = add("ln_f.weight".into(), vec![d]);
        let lnf_b = add("ln_f.bias".into(), vec![d]);
        Layout { wte, wpe, layers, lnf_w, lnf_b, specs }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.specs.last().map(|s| s.range.end).unwrap_or(0)
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

/// Model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<F>,
}

impl<F: Real> Parameters<F> {
    pub fn zeros(config: ModelConfig) -> Self {
        let layout = Layout::new(&config);
        let data = vec![F::zero(); layout.total()];
        Parameters { config, layout, data }
    }

    /// GPT-2 style initialization: N(0, 0.02) weights, residual projections
    /// scaled by `1/sqrt(2 * n_layers)`, zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let resid = Normal::new(0.0, resid_std).unwrap();

        let layout = p.layout.clone();
        let mut fill = |range: &Range<usize>, dist: &Normal<f64>| {
            for x in &mut p.data[range.clone()] {
                *x = F::from_f64(dist.sample(&mut rng));
            }
        };
        fill(&layout.wte, &normal);
        fill(&layout.wpe, &normal);
        for l in &layout.layers {
            fill(&l.qkv_w, &normal);
            fill(&l.proj_w, &resid);
            fill(&l.fc_w, &normal);
            fill(&l.fc_proj_w, &resid);
        }
        for r in layout
            .layers
            .iter()
            .flat_map(|l| [l.ln1_w.clone(), l.ln2_w.clone()])
            .chain([layout.lnf_w.clone()])
        {
            p.data[r].fill(F::one());
        }
        p
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.layout.find(name).map(|s| &self.data[s.range.clone()])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Parameters<G> {
        Parameters {
            config: self.config,
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| G::from_f64(x.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_param_count() {
        for config in [ModelConfig::tiny(), ModelConfig::gpt2_124m()] {
            let layout = Layout::new(&config);
            assert_eq!(layout.total(), config.param_count());
        }
    }

    #[test]
    fn gpt2_names() {
        let layout = Layout::new(&ModelConfig::gpt2_124m());
        let spec = layout.find("h.11.attn.c_attn.weight").unwrap();
        assert_eq!(spec.shape, vec![768, 2304]);
        assert_eq!(layout.specs().len(), 2 + 12 * 12 + 2);
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let mut c = ModelConfig::tiny();
        c.vocab_size = 300;
        let a = Parameters::<f32>::init(c, 7);
        let b = Parameters::<f32>::init(c, 7);
        assert_eq!(a, b);
        assert!(a.all_finite());
        assert_eq!(a.tensor("ln_f.weight").unwrap()[0], 1.0);
        assert_eq!(a.tensor("h.0.attn.c_attn.bias").unwrap()[0], 0.0);
        let std = {
            let w = a.tensor("wte").unwrap();
            (w.iter().map(|x| (x * x) as f64).sum::<f64>() / w.len() as f64).sqrt()
        };
        assert!((std - 0.02).abs() < 0.001, "std {std}");
    }
}
