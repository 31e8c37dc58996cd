use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{softmax_into, Scalar};

pub const DEFAULT_TRUNK: [usize; 2] = [1024, 128];
pub const DEFAULT_DROPOUT: f64 = 0.10;
pub const IMAGE_INPUT_DIM: usize = 2048;
pub const TEXT_INPUT_DIM: usize = 768;
const INIT_STD: f64 = 0.02;

/// Shape of a multitask head: a ReLU trunk shared by all tasks, then per task an
/// optional tanh hidden layer and a softmax output layer. Dropout acts on the input
/// of every dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTopology {
    pub input_dim: usize,
    pub trunk: Vec<usize>,
    #[serde(default)]
    pub head_hidden: Option<usize>,
    pub dropout: f64,
    pub outputs: Vec<usize>,
}

impl HeadTopology {
    pub fn new(input_dim: usize, outputs: Vec<usize>) -> Self {
        Self { input_dim, trunk: DEFAULT_TRUNK.to_vec(), head_hidden: None, dropout: DEFAULT_DROPOUT, outputs }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.trunk.contains(&0) || self.head_hidden == Some(0) {
            return Err(Error::config("layer widths must be at least 1"));
        }
        if self.outputs.is_empty() || self.outputs.iter().any(|&k| k < 2) {
            return Err(Error::config("every head needs at least two classes"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn shared_width(&self) -> usize {
        self.trunk.last().copied().unwrap_or(self.input_dim)
    }
}

/// Location of one dense layer inside the flat parameter vector. Weights are
/// row-major `n_out x n_in`, followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    fn end(&self) -> usize {
        self.b + self.n_out
    }

    pub(crate) fn apply<T: Scalar>(&self, params: &[T], x: &[T], out: &mut Vec<T>) {
        out.clear();
        let w = &params[self.w..self.b];
        for o in 0..self.n_out {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = params[self.b + o];
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct HeadLayers {
    pub hidden: Option<Dense>,
    pub out: Dense,
}

/// Named slice of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTensor {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Trunk and per-task heads over a fixed input embedding. All parameters live in a
/// single vector in declaration order: trunk layers, then each head.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskHeadModel<T> {
    topology: HeadTopology,
    pub(crate) params: Vec<T>,
    pub(crate) trunk: Vec<Dense>,
    pub(crate) heads: Vec<HeadLayers>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    /// `acts[0]` is the input after dropout; `acts[l + 1]` the output of trunk layer `l`
    /// after ReLU and dropout.
    pub acts: Vec<Vec<T>>,
    pub input_mask: Option<Vec<T>>,
    /// Trunk pre-activations.
    pub pre: Vec<Vec<T>>,
    /// Dropout multipliers per trunk layer (`0` or `1/(1-p)`), absent at inference.
    pub masks: Vec<Option<Vec<T>>>,
    /// Per head: tanh output before dropout, its dropout multipliers, and the value fed forward.
    pub head_hidden: Vec<Option<HiddenCache<T>>>,
    pub probs: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenCache<T> {
    pub tanh: Vec<T>,
    pub mask: Option<Vec<T>>,
    pub out: Vec<T>,
}

fn layout(top: &HeadTopology) -> (Vec<Dense>, Vec<HeadLayers>, usize) {
    let mut offset = 0;
    let mut dense = |n_in: usize, n_out: usize| {
        let d = Dense { n_in, n_out, w: offset, b: offset + n_in * n_out };
        offset = d.end();
        d
    };
    let mut trunk = Vec::with_capacity(top.trunk.len());
    let mut width = top.input_dim;
    for &w in &top.trunk {
        trunk.push(dense(width, w));
        width = w;
    }
    let heads = top
        .outputs
        .iter()
        .map(|&k| match top.head_hidden {
            Some(h) => HeadLayers { hidden: Some(dense(width, h)), out: dense(h, k) },
            None => HeadLayers { hidden: None, out: dense(width, k) },
        })
        .collect();
    (trunk, heads, offset)
}

fn dropout_mask<T: Scalar, R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::one() / T::of(1.0 - p);
    (0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect()
}

impl<T: Scalar> MultitaskHeadModel<T> {
    /// All parameters zero.
    pub fn zeros(topology: HeadTopology) -> Result<Self> {
        topology.validate()?;
        let (trunk, heads, n) = layout(&topology);
        Ok(Self { topology, params: vec![T::zero(); n], trunk, heads })
    }

    /// Weights drawn from N(0, 0.02), biases zero.
    pub fn initialized(topology: HeadTopology, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let layers: Vec<Dense> = model.layers().collect();
        for d in layers {
            for w in &mut model.params[d.w..d.b] {
                *w = T::of(normal.sample(&mut rng));
            }
        }
        Ok(model)
    }

    /// Rebuilds a model from a flat parameter vector in declaration order.
    pub fn from_params(topology: HeadTopology, params: Vec<T>) -> Result<Self> {
        let mut model = Self::zeros(topology)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape { expected: model.params.len(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn topology(&self) -> &HeadTopology {
        &self.topology
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.heads.len()
    }

    fn layers(&self) -> impl Iterator<Item = Dense> + '_ {
        self.trunk.iter().copied().chain(self.heads.iter().flat_map(|h| h.hidden.into_iter().chain([h.out])))
    }

    /// Every weight matrix and bias vector, in declaration order.
    pub fn tensors(&self) -> Vec<ParamTensor> {
        let mut out = Vec::new();
        let mut push = |prefix: String, d: Dense| {
            out.push(ParamTensor { name: format!("{prefix}.weight"), offset: d.w, len: d.n_in * d.n_out });
            out.push(ParamTensor { name: format!("{prefix}.bias"), offset: d.b, len: d.n_out });
        };
        for (l, d) in self.trunk.iter().enumerate() {
            push(format!("trunk.{l}"), *d);
        }
        for (m, h) in self.heads.iter().enumerate() {
            if let Some(d) = h.hidden {
                push(format!("head.{m}.hidden"), d);
            }
            push(format!("head.{m}.out"), h.out);
        }
        out
    }

    /// Parameter range of head `task`, hidden layer included.
    pub fn head_range(&self, task: usize) -> std::ops::Range<usize> {
        let h = &self.heads[task];
        h.hidden.map_or(h.out.w, |d| d.w)..h.out.end()
    }

    /// Per-task class probabilities. Dropout is applied only when `rng` is given.
    pub fn forward_cached<R: Rng + ?Sized>(&self, x: &[T], rng: Option<&mut R>) -> Result<ForwardCache<T>> {
        if x.len() != self.topology.input_dim {
            return Err(Error::Shape { expected: self.topology.input_dim, got: x.len() });
        }
        let p = self.topology.dropout;
        let mut rng = rng.filter(|_| p > 0.0);
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut masks = Vec::with_capacity(self.trunk.len());
        let input_mask = rng.as_deref_mut().map(|r| dropout_mask::<T, R>(x.len(), p, r));
        match &input_mask {
            Some(m) => acts.push(x.iter().zip(m).map(|(a, b)| *a * *b).collect()),
            None => acts.push(x.to_vec()),
        }
        for d in &self.trunk {
            let mut z = Vec::new();
            d.apply(&self.params, acts.last().unwrap(), &mut z);
            let mut a: Vec<T> = z.iter().map(|&v| v.max(T::zero())).collect();
            let mask = rng.as_deref_mut().map(|r| dropout_mask::<T, R>(a.len(), p, r));
            if let Some(m) = &mask {
                a.iter_mut().zip(m).for_each(|(a, m)| *a *= *m);
            }
            pre.push(z);
            masks.push(mask);
            acts.push(a);
        }
        let shared = acts.last().unwrap();
        debug_assert_eq!(shared.len(), self.topology.shared_width());
        let mut head_hidden = Vec::with_capacity(self.heads.len());
        let mut probs = Vec::with_capacity(self.heads.len());
        let mut logits = Vec::new();
        for h in &self.heads {
            let hidden = h.hidden.map(|d| {
                let mut s = Vec::new();
                d.apply(&self.params, shared, &mut s);
                let tanh: Vec<T> = s.iter().map(|v| v.tanh()).collect();
                let mask = rng.as_deref_mut().map(|r| dropout_mask::<T, R>(tanh.len(), p, r));
                let out = match &mask {
                    Some(m) => tanh.iter().zip(m).map(|(a, b)| *a * *b).collect(),
                    None => tanh.clone(),
                };
                HiddenCache { tanh, mask, out }
            });
            let input = hidden.as_ref().map_or(shared.as_slice(), |c| c.out.as_slice());
            h.out.apply(&self.params, input, &mut logits);
            let mut y = vec![T::zero(); logits.len()];
            softmax_into(&logits, &mut y);
            probs.push(y);
            head_hidden.push(hidden);
        }
        Ok(ForwardCache { acts, input_mask, pre, masks, head_hidden, probs })
    }

    /// Per-task probability vectors; `train_mode` enables dropout driven by `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[T], train_mode: bool, rng: &mut R) -> Result<Vec<Vec<T>>> {
        let rng = if train_mode { Some(rng) } else { None };
        Ok(self.forward_cached(x, rng)?.probs)
    }

    /// Inference-mode forward pass.
    pub fn infer(&self, x: &[T]) -> Result<Vec<Vec<T>>> {
        Ok(self.forward_cached::<ChaCha8Rng>(x, None)?.probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HeadTopology {
        HeadTopology { input_dim: 4, trunk: vec![5, 3], head_hidden: None, dropout: 0.1, outputs: vec![3, 2] }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MultitaskHeadModel::<f64>::zeros(small()).unwrap();
        let y = m.infer(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert!(y[0].iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(y[1].iter().all(|&p| (p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn parameter_count_and_layout() {
        let mut top = small();
        let m = MultitaskHeadModel::<f64>::zeros(top.clone()).unwrap();
        assert_eq!(m.n_params(), 4 * 5 + 5 + 5 * 3 + 3 + 3 * 3 + 3 + 3 * 2 + 2);
        let t = m.tensors();
        assert_eq!(t.len(), 8);
        assert_eq!(t.iter().map(|t| t.len).sum::<usize>(), m.n_params());
        assert_eq!(m.head_range(1), m.n_params() - 8..m.n_params());
        top.head_hidden = Some(6);
        let m = MultitaskHeadModel::<f32>::zeros(top).unwrap();
        assert_eq!(m.tensors().len(), 12);
    }

    #[test]
    fn output_bias_logits_give_closed_form_softmax() {
        let mut top = small();
        top.trunk.clear();
        let mut m = MultitaskHeadModel::<f64>::zeros(top).unwrap();
        let b = m.heads[0].out.b;
        m.params[b] = 1.0;
        let y = m.infer(&[0.3, 0.1, 0.0, 2.0]).unwrap();
        assert!((y[0][0] - 0.576_117).abs() < 1e-6);
        assert!((y[0][1] - 0.211_942).abs() < 1e-6);
    }

    #[test]
    fn inference_is_repeatable_and_dropout_only_in_training() {
        let m = MultitaskHeadModel::<f64>::initialized(small(), 3).unwrap();
        let x = [0.2, 0.4, -1.0, 0.7];
        assert_eq!(m.infer(&x).unwrap(), m.infer(&x).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.forward(&x, false, &mut rng).unwrap(), m.infer(&x).unwrap());
        let c = m.forward_cached(&x, Some(&mut rng)).unwrap();
        assert!(c.masks.iter().all(Option::is_some));
    }

    #[test]
    fn rejects_wrong_dimension_and_bad_topology() {
        let m = MultitaskHeadModel::<f64>::zeros(small()).unwrap();
        assert!(matches!(m.infer(&[1.0]), Err(Error::Shape { expected: 4, got: 1 })));
        let mut top = small();
        top.dropout = 1.0;
        assert!(MultitaskHeadModel::<f64>::zeros(top).is_err());
        let mut top = small();
        top.trunk = vec![0];
        assert!(MultitaskHeadModel::<f64>::zeros(top).is_err());
    }

    #[test]
    fn same_seed_same_initialisation() {
        let a = MultitaskHeadModel::<f64>::initialized(small(), 9).unwrap();
        let b = MultitaskHeadModel::<f64>::initialized(small(), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.params[..a.trunk[0].b].iter().any(|&w| w != 0.0));
        assert!(a.params[a.trunk[0].b..a.trunk[0].b + 5].iter().all(|&w| w == 0.0));
    }
}
