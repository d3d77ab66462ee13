//! AdamW with linear warmup and gradient accumulation.

use crate::params::{Gradients, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64, weight_decay: f64, warmup_steps: usize) -> Self {
        Self {
            learning_rate,
            weight_decay,
            warmup_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Learning rate for the `step`-th update (0-based): linear ramp over
    /// `warmup_steps`, constant afterwards.
    pub fn rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

/// Decoupled-weight-decay Adam. Parameters that received no gradient in a
/// step are left untouched, moments included.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: usize,
    first: Vec<Option<Matrix<T>>>,
    second: Vec<Option<Matrix<T>>>,
    counts: Vec<u64>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        Self {
            config,
            step: 0,
            first: vec![None; store.len()],
            second: vec![None; store.len()],
            counts: vec![0; store.len()],
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        let lr = T::lit(self.config.rate_at(self.step));
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let eps = T::lit(self.config.eps);
        let decay = T::one() - lr * T::lit(self.config.weight_decay);
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
            self.counts.resize(store.len(), 0);
        }
        for (id, g) in grads.iter() {
            let i = id.index();
            let (rows, cols) = g.shape();
            let m = self.first[i].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.second[i].get_or_insert_with(|| Matrix::zeros(rows, cols));
            self.counts[i] += 1;
            let t = self.counts[i] as i32;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            let p = store.get_mut(id).as_mut_slice();
            for (((pv, &gv), mv), vv) in p
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.step += 1;
    }
}

/// Collects micro-batch gradients and releases their mean every `every` pushes.
#[derive(Debug, Clone)]
pub struct Accumulator<T> {
    every: usize,
    pending: usize,
    sum: Option<Gradients<T>>,
}

impl<T: Scalar> Accumulator<T> {
    pub fn new(every: usize) -> Self {
        Self {
            every: every.max(1),
            pending: 0,
            sum: None,
        }
    }

    /// Returns the averaged gradients once `every` micro-batches are in.
    pub fn push(&mut self, grads: Gradients<T>) -> Option<Gradients<T>> {
        match &mut self.sum {
            Some(s) => s.merge(&grads),
            None => self.sum = Some(grads),
        }
        self.pending += 1;
        if self.pending == self.every {
            self.flush()
        } else {
            None
        }
    }

    /// Releases whatever is pending, averaged over the pushes seen.
    pub fn flush(&mut self) -> Option<Gradients<T>> {
        let mut sum = self.sum.take()?;
        if self.pending > 1 {
            sum.scale(T::one() / T::of_usize(self.pending));
        }
        self.pending = 0;
        Some(sum)
    }
}
