//! Named, shaped parameter bundles in a fixed canonical order.
//!
//! The canonical order is: embeddings, then per-layer blocks in index order
//! (attention projections, first layer norm, feed-forward, second layer
//! norm), then pooler, then classifier. Aggregation, checkpointing, and the
//! wire format all rely on two sets with equal configs having identical
//! name/shape sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderConfig, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let name = name.into();
        let expect: usize = shape.iter().product();
        assert_eq!(values.len(), expect, "tensor {name}: {} values for shape {shape:?}", values.len());
        Tensor { name, shape, values }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor::new(name, shape, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered list of uniquely named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    tensors: Vec<Tensor>,
}

/// Gradients share the parameter structure: same names, same shapes, same
/// order; values hold the loss derivative instead of the weight.
pub type GradientSet = ParameterSet;

impl ParameterSet {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        for (i, a) in tensors.iter().enumerate() {
            for b in &tensors[i + 1..] {
                assert_ne!(a.name, b.name, "duplicate tensor name {}", a.name);
            }
        }
        ParameterSet { tensors }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.tensors[index]
    }

    /// Mutable access to the tensor storage. Callers must not rename or
    /// reshape tensors; the canonical layout is load-bearing.
    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// A set with identical names and shapes, all values zero.
    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    /// Verifies `other` has the same name/shape sequence.
    pub fn check_layout(&self, other: &ParameterSet) -> Result<(), ModelError> {
        let describe = |t: Option<&Tensor>| match t {
            Some(t) => format!("{} {:?}", t.name, t.shape),
            None => "missing".to_string(),
        };
        let n = self.tensors.len().max(other.tensors.len());
        for i in 0..n {
            let a = self.tensors.get(i);
            let b = other.tensors.get(i);
            let matches = match (a, b) {
                (Some(a), Some(b)) => a.name == b.name && a.shape == b.shape,
                _ => false,
            };
            if !matches {
                return Err(ModelError::LayoutMismatch {
                    index: i,
                    expected: describe(a),
                    found: describe(b),
                });
            }
        }
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Canonical tensor indices for one encoder layer. The arithmetic mirrors the
/// construction order in [`init_params`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIdx {
    pub q_w: usize,
    pub q_b: usize,
    pub k_w: usize,
    pub k_b: usize,
    pub v_w: usize,
    pub v_b: usize,
    pub o_w: usize,
    pub o_b: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

pub(crate) const TENSORS_PER_LAYER: usize = 16;

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub token: usize,
    pub position: usize,
    pub layers: Vec<LayerIdx>,
    pub pooler_w: usize,
    pub pooler_b: usize,
    pub cls_w: usize,
    pub cls_b: usize,
}

impl Layout {
    pub fn new(n_layers: usize) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let base = 2 + l * TENSORS_PER_LAYER;
                LayerIdx {
                    q_w: base,
                    q_b: base + 1,
                    k_w: base + 2,
                    k_b: base + 3,
                    v_w: base + 4,
                    v_b: base + 5,
                    o_w: base + 6,
                    o_b: base + 7,
                    ln1_g: base + 8,
                    ln1_b: base + 9,
                    ff1_w: base + 10,
                    ff1_b: base + 11,
                    ff2_w: base + 12,
                    ff2_b: base + 13,
                    ln2_g: base + 14,
                    ln2_b: base + 15,
                }
            })
            .collect();
        let tail = 2 + n_layers * TENSORS_PER_LAYER;
        Layout {
            token: 0,
            position: 1,
            layers,
            pooler_w: tail,
            pooler_b: tail + 1,
            cls_w: tail + 2,
            cls_b: tail + 3,
        }
    }
}

fn layer_names(l: usize) -> [(String, &'static str); TENSORS_PER_LAYER] {
    let n = |suffix: &str| format!("layer{l}.{suffix}");
    [
        (n("attn.query.weight"), "w"),
        (n("attn.query.bias"), "b"),
        (n("attn.key.weight"), "w"),
        (n("attn.key.bias"), "b"),
        (n("attn.value.weight"), "w"),
        (n("attn.value.bias"), "b"),
        (n("attn.output.weight"), "w"),
        (n("attn.output.bias"), "b"),
        (n("ln1.gain"), "g"),
        (n("ln1.bias"), "b"),
        (n("ffn.in.weight"), "w"),
        (n("ffn.in.bias"), "b"),
        (n("ffn.out.weight"), "w"),
        (n("ffn.out.bias"), "b"),
        (n("ln2.gain"), "g"),
        (n("ln2.bias"), "b"),
    ]
}

/// Initializes parameters in canonical order: weight matrices and embeddings
/// are drawn from a seeded normal(0, 0.02), biases and layer-norm shifts are
/// zero, layer-norm gains are one. Values are drawn tensor by tensor in
/// canonical order, so identical (config, seed) pairs produce bitwise
/// identical sets.
pub fn init_params(config: &EncoderConfig, seed: u64) -> ParameterSet {
    config.validate().expect("invalid encoder config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid stddev");
    let mut draw = |shape: Vec<usize>, name: String| {
        let len = shape.iter().product();
        let values = (0..len).map(|_| normal.sample(&mut rng)).collect();
        Tensor::new(name, shape, values)
    };
    let (v, d, f, c) = (config.vocab_size, config.d_model, config.d_ff, config.n_classes);
    let mut tensors = Vec::with_capacity(2 + config.n_layers * TENSORS_PER_LAYER + 4);
    tensors.push(draw(vec![v, d], "embedding.token".into()));
    tensors.push(draw(vec![config.max_len, d], "embedding.position".into()));
    for l in 0..config.n_layers {
        for (name, kind) in layer_names(l) {
            let tensor = match (kind, name.as_str()) {
                ("w", _) if name.ends_with("ffn.in.weight") => draw(vec![d, f], name),
                ("w", _) if name.ends_with("ffn.out.weight") => draw(vec![f, d], name),
                ("w", _) => draw(vec![d, d], name),
                ("b", _) if name.ends_with("ffn.in.bias") => Tensor::zeros(name, vec![f]),
                ("b", _) => Tensor::zeros(name, vec![d]),
                ("g", _) => Tensor::new(name, vec![d], vec![1.0; d]),
                _ => unreachable!(),
            };
            tensors.push(tensor);
        }
    }
    tensors.push(draw(vec![d, d], "pooler.weight".into()));
    tensors.push(Tensor::zeros("pooler.bias", vec![d]));
    tensors.push(draw(vec![d, c], "classifier.weight".into()));
    tensors.push(Tensor::zeros("classifier.bias", vec![c]));
    ParameterSet::from_tensors(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 16,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_len: 10,
            n_classes: 6,
            layernorm_eps: 1e-5,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&tiny(), 42);
        let b = init_params(&tiny(), 42);
        assert_eq!(a, b);
        let c = init_params(&tiny(), 43);
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_fill_rules() {
        let p = init_params(&tiny(), 1);
        assert!(p.by_name("classifier.bias").unwrap().values.iter().all(|&v| v == 0.0));
        assert!(p.by_name("layer0.ln1.gain").unwrap().values.iter().all(|&v| v == 1.0));
        assert!(p.by_name("layer1.ln2.bias").unwrap().values.iter().all(|&v| v == 0.0));
        assert!(p.by_name("pooler.bias").unwrap().values.iter().all(|&v| v == 0.0));
        // Weights are random draws; all-zero would mean the rule misfired.
        assert!(p.by_name("embedding.token").unwrap().values.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn layout_indices_match_names() {
        let cfg = tiny();
        let p = init_params(&cfg, 3);
        let layout = Layout::new(cfg.n_layers);
        assert_eq!(p.tensor(layout.token).name, "embedding.token");
        assert_eq!(p.tensor(layout.position).name, "embedding.position");
        for (l, idx) in layout.layers.iter().enumerate() {
            assert_eq!(p.tensor(idx.q_w).name, format!("layer{l}.attn.query.weight"));
            assert_eq!(p.tensor(idx.o_b).name, format!("layer{l}.attn.output.bias"));
            assert_eq!(p.tensor(idx.ln1_g).name, format!("layer{l}.ln1.gain"));
            assert_eq!(p.tensor(idx.ff2_w).name, format!("layer{l}.ffn.out.weight"));
            assert_eq!(p.tensor(idx.ln2_b).name, format!("layer{l}.ln2.bias"));
        }
        assert_eq!(p.tensor(layout.pooler_w).name, "pooler.weight");
        assert_eq!(p.tensor(layout.cls_b).name, "classifier.bias");
        assert_eq!(p.len(), 2 + cfg.n_layers * TENSORS_PER_LAYER + 4);
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = tiny();
        let p = init_params(&cfg, 9);
        assert_eq!(p.by_name("embedding.token").unwrap().shape, vec![16, 8]);
        assert_eq!(p.by_name("embedding.position").unwrap().shape, vec![10, 8]);
        assert_eq!(p.by_name("layer0.ffn.in.weight").unwrap().shape, vec![8, 16]);
        assert_eq!(p.by_name("layer0.ffn.out.weight").unwrap().shape, vec![16, 8]);
        assert_eq!(p.by_name("layer0.ffn.in.bias").unwrap().shape, vec![16]);
        assert_eq!(p.by_name("classifier.weight").unwrap().shape, vec![8, 6]);
    }

    #[test]
    fn layout_check_detects_mismatch() {
        let a = init_params(&tiny(), 1);
        let mut cfg = tiny();
        cfg.d_ff = 8;
        let b = init_params(&cfg, 1);
        assert!(a.check_layout(&b).is_err());
        assert!(a.check_layout(&a.zeros_like()).is_ok());
    }
}
