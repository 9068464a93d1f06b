//! Parameters live in one flat vector; a layout maps named tensors onto it.

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Inner width of the feed-forward block.
    pub ffn: usize,
    /// Size of the position table.
    pub max_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig { layers: 2, hidden: 64, heads: 4, ffn: 256, max_len: 128, vocab_size }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!("hidden {} is not divisible into {} heads", self.hidden, self.heads)));
        }
        if self.ffn == 0 || self.max_len < 3 || self.vocab_size < 4 {
            return Err(ModelError::Config("ffn, max_len and vocab_size are too small".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Subject to weight decay.
    pub decay: bool,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<Tensor>,
    pub size: usize,
    pub tok: usize,
    pub seg: usize,
    pub pos: usize,
    pub emb_g: usize,
    pub emb_b: usize,
    pub layers: Vec<LayerIds>,
    /// Edit-operation head, hidden x 2.
    pub edit: usize,
    /// Token head, vocabulary x hidden.
    pub vocab: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Weight,
    Bias,
    Gain,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut tensors: Vec<Tensor> = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, kind: Kind, encoder: bool| {
            let offset = tensors.last().map_or(0, |t: &Tensor| t.offset + t.len());
            // Biases and layer-norm parameters are not decayed.
            tensors.push(Tensor { name, offset, rows, cols, decay: encoder && kind == Kind::Weight });
            tensors.len() - 1
        };
        let h = c.hidden;
        let tok = add("embed.token".into(), c.vocab_size, h, Kind::Weight, true);
        let seg = add("embed.segment".into(), 2, h, Kind::Weight, true);
        let pos = add("embed.position".into(), c.max_len, h, Kind::Weight, true);
        let emb_g = add("embed.norm.gain".into(), 1, h, Kind::Gain, true);
        let emb_b = add("embed.norm.bias".into(), 1, h, Kind::Bias, true);
        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let mut t = |suffix: &str, rows: usize, cols: usize, kind: Kind| add(format!("layer{l}.{suffix}"), rows, cols, kind, true);
            layers.push(LayerIds {
                wq: t("attn.query", h, h, Kind::Weight),
                bq: t("attn.query.bias", 1, h, Kind::Bias),
                wk: t("attn.key", h, h, Kind::Weight),
                bk: t("attn.key.bias", 1, h, Kind::Bias),
                wv: t("attn.value", h, h, Kind::Weight),
                bv: t("attn.value.bias", 1, h, Kind::Bias),
                wo: t("attn.out", h, h, Kind::Weight),
                bo: t("attn.out.bias", 1, h, Kind::Bias),
                ln1_g: t("attn.norm.gain", 1, h, Kind::Gain),
                ln1_b: t("attn.norm.bias", 1, h, Kind::Bias),
                w1: t("ffn.in", h, c.ffn, Kind::Weight),
                b1: t("ffn.in.bias", 1, c.ffn, Kind::Bias),
                w2: t("ffn.out", c.ffn, h, Kind::Weight),
                b2: t("ffn.out.bias", 1, h, Kind::Bias),
                ln2_g: t("ffn.norm.gain", 1, h, Kind::Gain),
                ln2_b: t("ffn.norm.bias", 1, h, Kind::Bias),
            });
        }
        let edit = add("head.edit".into(), h, 2, Kind::Weight, false);
        let vocab = add("head.token".into(), c.vocab_size, h, Kind::Weight, false);
        let size = tensors.last().map_or(0, |t| t.offset + t.len());
        Layout { tensors, size, tok, seg, pos, emb_g, emb_b, layers, edit, vocab }
    }

    pub fn view<'a>(&self, values: &'a [f64], t: usize) -> ArrayView2<'a, f64> {
        let t = &self.tensors[t];
        ArrayView2::from_shape((t.rows, t.cols), &values[t.range()]).expect("layout matches storage")
    }

    pub fn view_mut<'a>(&self, values: &'a mut [f64], t: usize) -> ArrayViewMut2<'a, f64> {
        let t = &self.tensors[t];
        ArrayViewMut2::from_shape((t.rows, t.cols), &mut values[t.range()]).expect("layout matches storage")
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    fn is_gain(&self, t: usize) -> bool {
        self.tensors[t].name.ends_with(".gain")
    }

    fn is_bias(&self, t: usize) -> bool {
        self.tensors[t].name.ends_with(".bias")
    }
}

/// Configuration, vocabulary and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StoredModel", into = "StoredModel")]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Vec<f64>,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    config: ModelConfig,
    vocab: Vocab,
    params: Vec<f64>,
}

impl TryFrom<StoredModel> for Model {
    type Error = ModelError;
    fn try_from(s: StoredModel) -> Result<Self, ModelError> {
        let mut m = Model::zeros(s.config, s.vocab)?;
        if s.params.len() != m.params.len() {
            return Err(ModelError::Config(format!("{} parameters stored, {} expected", s.params.len(), m.params.len())));
        }
        m.params = s.params;
        Ok(m)
    }
}

impl From<Model> for StoredModel {
    fn from(m: Model) -> Self {
        StoredModel { config: m.config, vocab: m.vocab, params: m.params }
    }
}

impl Model {
    /// All parameters zero, layer-norm gains one.
    pub fn zeros(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(ModelError::Config(format!(
                "vocab_size {} but vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.size];
        for t in 0..layout.tensors.len() {
            if layout.is_gain(t) {
                params[layout.tensors[t].range()].fill(1.0);
            }
        }
        Ok(Model { config, vocab, params, layout })
    }

    /// Weights drawn from N(0, std), biases zero, gains one.
    pub fn init(config: ModelConfig, vocab: Vocab, std: f64, seed: u64) -> Result<Self, ModelError> {
        let mut m = Model::zeros(config, vocab)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
        for t in 0..m.layout.tensors.len() {
            if m.layout.is_gain(t) || m.layout.is_bias(t) {
                continue;
            }
            for x in &mut m.params[m.layout.tensors[t].range()] {
                *x = normal.sample(&mut rng);
            }
        }
        Ok(m)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn view(&self, t: usize) -> ArrayView2<'_, f64> {
        self.layout.view(&self.params, t)
    }

    pub fn view_mut(&mut self, t: usize) -> ArrayViewMut2<'_, f64> {
        self.layout.view_mut(&mut self.params, t)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }
}
