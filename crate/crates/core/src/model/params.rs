use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub attn_ln_gamma: Array1<f64>,
    pub attn_ln_beta: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
    pub ff_ln_gamma: Array1<f64>,
    pub ff_ln_beta: Array1<f64>,
}

/// All trainable weights. Matrices multiply from the right: `x · W`.
/// The MLM output projection is `token_embeddingᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub emb_ln_gamma: Array1<f64>,
    pub emb_ln_beta: Array1<f64>,
    pub layers: Vec<EncoderLayer>,
    pub mlm_output_bias: Array1<f64>,
}

pub(crate) enum TensorRef<'a> {
    Matrix(&'a Array2<f64>),
    Vector(&'a Array1<f64>),
}

pub(crate) enum TensorMut<'a> {
    Matrix(&'a mut Array2<f64>),
    Vector(&'a mut Array1<f64>),
}

impl<'a> TensorRef<'a> {
    pub(crate) fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Matrix(m) => m.shape().to_vec(),
            TensorRef::Vector(v) => v.shape().to_vec(),
        }
    }

    pub(crate) fn data(&self) -> &'a [f64] {
        match self {
            TensorRef::Matrix(m) => m.as_slice().expect("standard layout"),
            TensorRef::Vector(v) => v.as_slice().expect("standard layout"),
        }
    }
}

impl TensorMut<'_> {
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        match self {
            TensorMut::Matrix(m) => m.as_slice_mut().expect("standard layout"),
            TensorMut::Vector(v) => v.as_slice_mut().expect("standard layout"),
        }
    }
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(
            w_q: Matrix, b_q: Vector, w_k: Matrix, b_k: Vector, w_v: Matrix, b_v: Vector,
            w_o: Matrix, b_o: Vector, attn_ln_gamma: Vector, attn_ln_beta: Vector,
            w_ff1: Matrix, b_ff1: Vector, w_ff2: Matrix, b_ff2: Vector,
            ff_ln_gamma: Vector, ff_ln_beta: Vector
        )
    };
}

impl EncoderLayer {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        Self {
            w_q: Array2::zeros((d, d)),
            b_q: Array1::zeros(d),
            w_k: Array2::zeros((d, d)),
            b_k: Array1::zeros(d),
            w_v: Array2::zeros((d, d)),
            b_v: Array1::zeros(d),
            w_o: Array2::zeros((d, d)),
            b_o: Array1::zeros(d),
            attn_ln_gamma: Array1::zeros(d),
            attn_ln_beta: Array1::zeros(d),
            w_ff1: Array2::zeros((d, f)),
            b_ff1: Array1::zeros(f),
            w_ff2: Array2::zeros((f, d)),
            b_ff2: Array1::zeros(d),
            ff_ln_gamma: Array1::zeros(d),
            ff_ln_beta: Array1::zeros(d),
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, TensorRef<'a>)>) {
        macro_rules! push {
            ($($name:ident: $kind:ident),*) => {
                $( out.push((format!("{prefix}.{}", stringify!($name)), TensorRef::$kind(&self.$name))); )*
            };
        }
        layer_fields!(push);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<TensorMut<'a>>) {
        macro_rules! push {
            ($($name:ident: $kind:ident),*) => {
                $( out.push(TensorMut::$kind(&mut self.$name)); )*
            };
        }
        layer_fields!(push);
    }
}

impl ModelParameters {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            token_embedding: Array2::zeros((cfg.vocab_size, d)),
            position_embedding: Array2::zeros((cfg.max_seq_len, d)),
            emb_ln_gamma: Array1::zeros(d),
            emb_ln_beta: Array1::zeros(d),
            layers: (0..cfg.n_layers).map(|_| EncoderLayer::zeros(cfg)).collect(),
            mlm_output_bias: Array1::zeros(cfg.vocab_size),
        }
    }

    /// BERT-style initialization: weights ~ N(0, 0.02²), biases 0, layer-norm
    /// scales 1.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        Self::init_with_std(cfg, seed, 0.02)
    }

    pub fn init_with_std(cfg: &ModelConfig, seed: u64, std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        let normal = Normal::new(0.0, std).expect("valid std");
        for (name, mut tensor) in p.named_tensors_mut() {
            let data = tensor.data_mut();
            if name.ends_with("gamma") {
                data.fill(1.0);
            } else if matches!(name.rsplit('.').next(), Some(n) if n.starts_with("w_"))
                || name.ends_with("embedding")
            {
                for x in data.iter_mut() {
                    *x = normal.sample(&mut rng);
                }
            }
        }
        p
    }

    /// Fills every entry (including biases and layer-norm parameters) with
    /// N(0, std²) noise; used by gradient checks.
    pub fn randomize_all<R: Rng>(&mut self, rng: &mut R, std: f64) {
        let normal = Normal::new(0.0, std).expect("valid std");
        for t in self.tensors_mut() {
            let mut t = t;
            for x in t.data_mut() {
                *x = normal.sample(rng);
            }
        }
    }

    pub(crate) fn named_tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = vec![
            ("token_embedding".to_string(), TensorRef::Matrix(&self.token_embedding)),
            ("position_embedding".to_string(), TensorRef::Matrix(&self.position_embedding)),
            ("emb_ln_gamma".to_string(), TensorRef::Vector(&self.emb_ln_gamma)),
            ("emb_ln_beta".to_string(), TensorRef::Vector(&self.emb_ln_beta)),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.tensors(&format!("layer{i}"), &mut out);
        }
        out.push(("mlm_output_bias".to_string(), TensorRef::Vector(&self.mlm_output_bias)));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = vec![
            TensorMut::Matrix(&mut self.token_embedding),
            TensorMut::Matrix(&mut self.position_embedding),
            TensorMut::Vector(&mut self.emb_ln_gamma),
            TensorMut::Vector(&mut self.emb_ln_beta),
        ];
        for layer in self.layers.iter_mut() {
            layer.tensors_mut(&mut out);
        }
        out.push(TensorMut::Vector(&mut self.mlm_output_bias));
        out
    }

    pub(crate) fn named_tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        names.into_iter().zip(self.tensors_mut()).collect()
    }

    /// Tensor names with their shapes, in serialization order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Flat copy of every parameter in serialization order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (_, t) in self.named_tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites every parameter from a flat slice in serialization order.
    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for mut t in self.tensors_mut() {
            let data = t.data_mut();
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// Rounds every parameter to the nearest `f32`, the precision checkpoints
    /// store.
    pub fn round_to_f32(&mut self) {
        for mut t in self.tensors_mut() {
            for x in t.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, element-wise.
    pub fn add_scaled(&mut self, other: &ModelParameters, scale: f64) {
        let src = other.named_tensors();
        for (mut dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, x) in dst.data_mut().iter_mut().zip(s.data()) {
                *d += scale * x;
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for mut t in self.tensors_mut() {
            for x in t.data_mut() {
                *x *= factor;
            }
        }
    }
}
