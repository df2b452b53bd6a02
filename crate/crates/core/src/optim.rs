//! Adam with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamTree};

const EPS: f64 = 1e-8;

/// Weight decay applies to leaves named `*.w` only; biases, norm gains and
/// fixed tables are never decayed.
pub fn decays(name: &str) -> bool {
    name.ends_with(".w")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn from_config(c: &ModelConfig) -> Self {
        Self::new(c.lr, c.betas, c.weight_decay)
    }

    /// Updates every trainable leaf that has a gradient.
    pub fn update(&mut self, tree: &mut ParamTree, grads: &ParamGrads) -> Result<()> {
        if let Some(name) = grads.first_non_finite(tree) {
            return Err(Error::NonFinite {
                component: format!("gradient of {name}"),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = tree.ids().collect();
        for id in ids {
            let leaf = tree.leaf(id);
            if !leaf.trainable {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let name = leaf.name.clone();
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let decay = if decays(&name) { 1.0 - self.lr * self.weight_decay } else { 1.0 };
            let p = tree.value_mut(id);
            for (k, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gv;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gv * gv;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *pv = *pv * decay - self.lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Mat;

    fn tree() -> ParamTree {
        let mut t = ParamTree::new();
        t.insert("a.w", Mat::from_elem((1, 2), 1.0), true).unwrap();
        t.insert("a.b", Mat::from_elem((1, 2), 1.0), true).unwrap();
        t.insert("pe", Mat::from_elem((1, 2), 1.0), false).unwrap();
        t
    }

    #[test]
    fn first_step_moves_by_lr_and_decays_weights_only() {
        let mut t = tree();
        let mut g = ParamGrads::new(&t);
        for id in t.ids().collect::<Vec<_>>() {
            g.add(id, &Mat::from_elem((1, 2), 0.3));
        }
        let mut opt = AdamW::new(0.1, (0.9, 0.999), 0.5);
        opt.update(&mut t, &g).unwrap();
        let w = t.value(t.id("a.w").unwrap())[[0, 0]];
        let b = t.value(t.id("a.b").unwrap())[[0, 0]];
        let pe = t.value(t.id("pe").unwrap())[[0, 0]];
        assert!((w - (1.0 * (1.0 - 0.05) - 0.1)).abs() < 1e-6);
        assert!((b - (1.0 - 0.1)).abs() < 1e-6);
        assert_eq!(pe, 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut t = ParamTree::new();
        let id = t.insert("x.b", Mat::from_elem((1, 1), 5.0), true).unwrap();
        let mut opt = AdamW::new(0.1, (0.9, 0.999), 0.0);
        for _ in 0..500 {
            let x = t.value(id)[[0, 0]];
            let mut g = ParamGrads::new(&t);
            g.add(id, &Mat::from_elem((1, 1), 2.0 * (x - 1.0)));
            opt.update(&mut t, &g).unwrap();
        }
        assert!((t.value(id)[[0, 0]] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_names_leaf() {
        let mut t = tree();
        let mut g = ParamGrads::new(&t);
        g.add(t.id("a.b").unwrap(), &Mat::from_elem((1, 2), f64::NAN));
        let err = AdamW::new(0.1, (0.9, 0.999), 0.0).update(&mut t, &g).unwrap_err();
        assert!(err.to_string().contains("a.b"), "{err}");
    }
}
