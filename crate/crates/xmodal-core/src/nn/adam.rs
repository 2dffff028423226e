//! Adam optimizer with checkpoint-friendly state.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::params::ParamStore;

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// state survives serialization and model reconstruction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update with the given learning rate. `grads` maps parameter
    /// name to gradient; parameters without a gradient are left untouched.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, ArrayD<f64>>,
        lr: f64,
    ) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, g) in grads {
            let idx = store
                .idx(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            m.zip_mut_with(g, |mi, &gi| *mi = b1 * *mi + (1.0 - b1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = b2 * *vi + (1.0 - b2) * gi * gi);
            let p = store.value_mut_at(idx);
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|pi, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *pi -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }

    /// Moment buffers in name order, for checkpointing.
    pub fn state(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>, &ArrayD<f64>)> {
        self.m
            .iter()
            .map(|(k, m)| (k.as_str(), m, &self.v[k]))
    }

    pub fn restore(
        &mut self,
        t: u64,
        moments: impl IntoIterator<Item = (String, ArrayD<f64>, ArrayD<f64>)>,
    ) {
        self.t = t;
        self.m.clear();
        self.v.clear();
        for (name, m, v) in moments {
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
    }
}
