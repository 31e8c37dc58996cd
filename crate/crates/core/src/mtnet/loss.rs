use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ForwardCache, MultitaskHeadModel};
use crate::error::{Error, Result};
use crate::imbalance::ClassWeights;
use crate::scalar::Scalar;

pub const DEFAULT_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCe,
    Focal { gamma: f64 },
}

impl LossKind {
    fn gamma(self) -> f64 {
        match self {
            LossKind::SoftmaxCe => 0.0,
            LossKind::Focal { gamma } => gamma,
        }
    }
}

/// One training example: an embedding and the labels that count towards the loss.
/// `None` entries are outside the sample's label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<'a, T> {
    pub x: &'a [T],
    pub labels: Vec<Option<usize>>,
}

impl<'a, T> Example<'a, T> {
    pub fn new(x: &'a [T], labels: Vec<Option<usize>>) -> Self {
        Self { x, labels }
    }

    /// Keeps only the label of `task`.
    pub fn restricted(x: &'a [T], labels: &[Option<usize>], task: usize) -> Self {
        let labels = labels.iter().enumerate().map(|(m, l)| if m == task { *l } else { None }).collect();
        Self { x, labels }
    }
}

/// Everything that defines the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective<'w, T> {
    pub kind: LossKind,
    /// Coefficient of `1/2 * sum(w^2)` over all parameters, biases included.
    pub omega_r: T,
    pub class_weights: Option<&'w ClassWeights<T>>,
}

impl<'w, T: Scalar> Objective<'w, T> {
    pub fn softmax_ce(omega_r: T) -> Self {
        Self { kind: LossKind::SoftmaxCe, omega_r, class_weights: None }
    }

    pub fn focal(gamma: f64, omega_r: T) -> Self {
        Self { kind: LossKind::Focal { gamma }, omega_r, class_weights: None }
    }

    fn validate(&self) -> Result<()> {
        let g = self.kind.gamma();
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::config(format!("focal gamma must be >= 0, got {g}")));
        }
        Ok(())
    }

    fn weight(&self, task: usize, class: usize) -> T {
        self.class_weights.map_or(T::one(), |w| w.weight(task, class))
    }

    /// Loss term of one (sample, task) pair with true-class probability `y`.
    fn term(&self, y: T, c: T) -> T {
        let ln = y.max(T::prob_floor()).ln();
        match self.kind {
            LossKind::Focal { gamma } if gamma != 0.0 => -(c * (T::one() - y).powf(T::of(gamma)) * ln),
            _ => -(c * ln),
        }
    }

    /// `y * dL/dy` for the same pair; the logit gradient is this times `(delta_tj - y_j)`.
    fn scaled_dy(&self, y: T, c: T) -> T {
        match self.kind {
            LossKind::Focal { gamma } if gamma != 0.0 => {
                let g = T::of(gamma);
                let one_minus = T::one() - y;
                let ln = y.max(T::prob_floor()).ln();
                let mut v = -one_minus.powf(g);
                if one_minus > T::zero() {
                    v += g * y * one_minus.powf(g - T::one()) * ln;
                }
                c * v
            }
            _ => -c,
        }
    }

    fn regularizer(&self, params: &[T]) -> T {
        if self.omega_r == T::zero() {
            return T::zero();
        }
        let half = T::of(0.5);
        self.omega_r * half * params.iter().map(|&w| w * w).sum::<T>()
    }
}

fn check_labels<T: Scalar>(model: &MultitaskHeadModel<T>, ex: &Example<'_, T>) -> Result<()> {
    if ex.labels.len() != model.n_tasks() {
        return Err(Error::Shape { expected: model.n_tasks(), got: ex.labels.len() });
    }
    for (m, l) in ex.labels.iter().enumerate() {
        if let Some(c) = l {
            if *c >= model.topology().outputs[m] {
                return Err(Error::Integrity(format!("label {c} out of range for head {m}")));
            }
        }
    }
    Ok(())
}

fn data_loss<T: Scalar>(obj: &Objective<'_, T>, probs: &[Vec<T>], labels: &[Option<usize>]) -> T {
    let mut total = T::zero();
    for (m, l) in labels.iter().enumerate() {
        if let Some(t) = *l {
            total += obj.term(probs[m][t], obj.weight(m, t));
        }
    }
    total
}

/// Inference-mode loss summed over the batch, regularizer included.
pub fn loss<T: Scalar>(model: &MultitaskHeadModel<T>, batch: &[Example<'_, T>], obj: &Objective<'_, T>) -> Result<T> {
    Ok(data_loss_sum(model, batch, obj)? + obj.regularizer(model.params()))
}

/// Inference-mode loss without the regularizer.
pub fn data_loss_sum<T: Scalar>(model: &MultitaskHeadModel<T>, batch: &[Example<'_, T>], obj: &Objective<'_, T>) -> Result<T> {
    obj.validate()?;
    let mut total = T::zero();
    for ex in batch {
        check_labels(model, ex)?;
        if ex.labels.iter().all(Option::is_none) {
            continue;
        }
        let probs = model.infer(ex.x)?;
        total += data_loss(obj, &probs, &ex.labels);
    }
    Ok(total)
}

/// Masked multitask softmax cross-entropy, optionally class weighted.
pub fn loss_sce<T: Scalar>(
    model: &MultitaskHeadModel<T>,
    batch: &[Example<'_, T>],
    omega_r: T,
    class_weights: Option<&ClassWeights<T>>,
) -> Result<T> {
    loss(model, batch, &Objective { kind: LossKind::SoftmaxCe, omega_r, class_weights })
}

/// Masked multitask focal loss.
pub fn loss_focal<T: Scalar>(model: &MultitaskHeadModel<T>, batch: &[Example<'_, T>], gamma: f64, omega_r: T) -> Result<T> {
    loss(model, batch, &Objective::focal(gamma, omega_r))
}

fn outer_acc<T: Scalar>(grad: &mut [T], dz: &[T], a: &[T]) {
    let n_in = a.len();
    for (o, &d) in dz.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        let row = &mut grad[o * n_in..(o + 1) * n_in];
        for (g, &x) in row.iter_mut().zip(a) {
            *g += d * x;
        }
    }
}

fn transpose_mul<T: Scalar>(w: &[T], dz: &[T], n_in: usize, out: &mut [T]) {
    for (o, &d) in dz.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        for (acc, &wv) in out.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
            *acc += wv * d;
        }
    }
}

fn backprop_sample<T: Scalar>(
    model: &MultitaskHeadModel<T>,
    obj: &Objective<'_, T>,
    cache: &ForwardCache<T>,
    labels: &[Option<usize>],
    grad: &mut [T],
) {
    let params = model.params();
    let shared = cache.acts.last().unwrap();
    let mut d_shared = vec![T::zero(); shared.len()];
    let mut touched = false;
    for (m, h) in model.heads.iter().enumerate() {
        let Some(t) = labels[m] else { continue };
        touched = true;
        let y = &cache.probs[m];
        let s = obj.scaled_dy(y[t], obj.weight(m, t));
        let dz: Vec<T> = y.iter().enumerate().map(|(j, &yj)| if j == t { s * (T::one() - yj) } else { -(s * yj) }).collect();
        let hidden = cache.head_hidden[m].as_ref();
        let input = hidden.map_or(shared.as_slice(), |c| c.out.as_slice());
        let out = h.out;
        outer_acc(&mut grad[out.w..out.b], &dz, input);
        for (g, d) in grad[out.b..out.b + out.n_out].iter_mut().zip(&dz) {
            *g += *d;
        }
        match (h.hidden, hidden) {
            (Some(hd), Some(c)) => {
                let mut du = vec![T::zero(); hd.n_out];
                transpose_mul(&params[out.w..out.b], &dz, out.n_in, &mut du);
                if let Some(mask) = &c.mask {
                    du.iter_mut().zip(mask).for_each(|(d, k)| *d *= *k);
                }
                let ds: Vec<T> = du.iter().zip(&c.tanh).map(|(&d, &t)| d * (T::one() - t * t)).collect();
                outer_acc(&mut grad[hd.w..hd.b], &ds, shared);
                for (g, d) in grad[hd.b..hd.b + hd.n_out].iter_mut().zip(&ds) {
                    *g += *d;
                }
                transpose_mul(&params[hd.w..hd.b], &ds, hd.n_in, &mut d_shared);
            }
            _ => transpose_mul(&params[out.w..out.b], &dz, out.n_in, &mut d_shared),
        }
    }
    if !touched {
        return;
    }
    let mut da = d_shared;
    for (l, d) in model.trunk.iter().enumerate().rev() {
        if let Some(mask) = &cache.masks[l] {
            da.iter_mut().zip(mask).for_each(|(a, k)| *a *= *k);
        }
        for (a, &z) in da.iter_mut().zip(&cache.pre[l]) {
            if z <= T::zero() {
                *a = T::zero();
            }
        }
        let a_prev = &cache.acts[l];
        outer_acc(&mut grad[d.w..d.b], &da, a_prev);
        for (g, v) in grad[d.b..d.b + d.n_out].iter_mut().zip(&da) {
            *g += *v;
        }
        if l > 0 {
            let mut prev = vec![T::zero(); d.n_in];
            transpose_mul(&params[d.w..d.b], &da, d.n_in, &mut prev);
            da = prev;
        }
    }
}

/// Loss and its gradient with respect to every parameter. Dropout is active only
/// when `rng` is supplied.
pub fn backward<T: Scalar, R: Rng + ?Sized>(
    model: &MultitaskHeadModel<T>,
    batch: &[Example<'_, T>],
    obj: &Objective<'_, T>,
    mut rng: Option<&mut R>,
) -> Result<(T, Vec<T>)> {
    obj.validate()?;
    let mut grad = vec![T::zero(); model.n_params()];
    let mut total = T::zero();
    for ex in batch {
        check_labels(model, ex)?;
        if ex.labels.iter().all(Option::is_none) {
            continue;
        }
        let cache = model.forward_cached(ex.x, rng.as_deref_mut())?;
        total += data_loss(obj, &cache.probs, &ex.labels);
        backprop_sample(model, obj, &cache, &ex.labels, &mut grad);
    }
    if obj.omega_r != T::zero() {
        for (g, &w) in grad.iter_mut().zip(model.params()) {
            *g += obj.omega_r * w;
        }
    }
    Ok((total + obj.regularizer(model.params()), grad))
}

/// Dropout-free gradient.
pub fn gradient<T: Scalar>(model: &MultitaskHeadModel<T>, batch: &[Example<'_, T>], obj: &Objective<'_, T>) -> Result<(T, Vec<T>)> {
    backward::<T, ChaCha8Rng>(model, batch, obj, None)
}
