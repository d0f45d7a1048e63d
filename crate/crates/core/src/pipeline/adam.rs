use serde::{Deserialize, Serialize};

use super::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Moment buffers for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamGroup {
    pub name: String,
    pub lr_scale: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with per-group learning-rate scales and a shared step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub groups: Vec<AdamGroup>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            groups: Vec::new(),
        }
    }

    pub fn add_group(&mut self, name: &str, lr_scale: f64, len: usize) -> usize {
        self.groups.push(AdamGroup {
            name: name.to_string(),
            lr_scale,
            m: vec![0.0; len],
            v: vec![0.0; len],
        });
        self.groups.len() - 1
    }

    pub fn group(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    /// Advance the shared step counter; call once per optimizer step,
    /// before `update` on each group.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update<P: ParamSet>(&mut self, group: usize, params: &mut P, grads: &P) -> Result<()> {
        self.update_slices(group, params.param_slices_mut(), grads.param_slices())
    }

    /// Update a group stored as plain slices, in order.
    pub fn update_slices(&mut self, group: usize, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let g = &mut self.groups[group];
        let lr = self.learning_rate * g.lr_scale;
        let mismatch = || Error::config(format!("optimizer group `{}` does not match its parameters", g.name));
        let total: usize = params.iter().map(|p| p.len()).sum();
        if params.len() != grads.len() || total != g.m.len() || params.iter().zip(&grads).any(|(p, d)| p.len() != d.len()) {
            return Err(mismatch());
        }
        let mut offset = 0;
        for (p, d) in params.into_iter().zip(grads) {
            let m = &mut g.m[offset..offset + p.len()];
            let v = &mut g.v[offset..offset + p.len()];
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * d[k];
                v[k] = b2 * v[k] + (1.0 - b2) * d[k] * d[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
            offset += p.len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct P(Vec<f64>);

    impl ParamSet for P {
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
        fn zeros_like(&self) -> Self {
            P(vec![0.0; self.0.len()])
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut a = Adam::new(&OptimizerConfig::default());
        let g = a.add_group("x", 1.0, 2);
        let mut p = P(vec![1.0, -1.0]);
        a.begin_step();
        a.update(g, &mut p, &P(vec![3.0, -0.5])).unwrap();
        assert!((p.0[0] - 0.99).abs() < 1e-12);
        assert!((p.0[1] + 0.99).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut a = Adam::new(&OptimizerConfig {
            learning_rate: 0.05,
            ..Default::default()
        });
        let g = a.add_group("x", 1.0, 1);
        let mut p = P(vec![2.0]);
        for _ in 0..500 {
            let grad = P(vec![2.0 * (p.0[0] - 0.5)]);
            a.begin_step();
            a.update(g, &mut p, &grad).unwrap();
        }
        assert!((p.0[0] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let mut a = Adam::new(&OptimizerConfig::default());
        let g = a.add_group("x", 1.0, 3);
        a.begin_step();
        assert!(a.update(g, &mut P(vec![0.0; 2]), &P(vec![0.0; 2])).is_err());
    }
}
