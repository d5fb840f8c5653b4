//! First-order optimizers over a [`ParamStore`].

use super::params::{Gradients, ParamStore};
use super::NnError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shuffle stream for one training epoch. Mixing the epoch index into the
/// seed lets a resumed run reproduce the batch order of epoch k without
/// replaying epochs 0..k first.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Step-decay schedule: `lr0 * gamma^(epoch / step_epochs)` with integer
/// division, so the rate drops by `gamma` every `step_epochs` epochs.
pub fn step_decay_lr(lr0: f64, gamma: f64, step_epochs: usize, epoch: usize) -> f64 {
    assert!(step_epochs > 0);
    lr0 * gamma.powi((epoch / step_epochs) as i32)
}

/// Plain gradient descent.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd { lr }
    }

    pub fn step(&self, store: &mut ParamStore, grads: &Gradients) {
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id).to_vec();
            let t = store.tensor_mut(id);
            for (p, gv) in t.data_mut().iter_mut().zip(g) {
                *p -= self.lr * gv;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: store.ids().map(|id| vec![0.0; store.tensor(id).len()]).collect(),
            v: store.ids().map(|id| vec![0.0; store.tensor(id).len()]).collect(),
            t: 0,
        }
    }

    /// Moment estimates (in store insertion order) and the step count, for
    /// checkpointing.
    pub fn state(&self) -> (&[Vec<f64>], &[Vec<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    /// Restore state captured by [`Adam::state`]; shapes must match the
    /// store this optimizer was built for.
    pub fn restore_state(
        &mut self,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: u64,
    ) -> Result<(), NnError> {
        let same = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
        };
        if !same(&m, &self.m) || !same(&v, &self.v) {
            return Err(NnError::InvalidArgument(
                "optimizer state does not match the parameter store".into(),
            ));
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads.get(id).to_vec();
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let t = store.tensor_mut(id);
            for ((p, gv), (mv, vv)) in
                t.data_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
