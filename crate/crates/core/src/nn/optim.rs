use serde::{Deserialize, Serialize};

use super::model::Model;
use super::NnError;

/// Learning-rate group a parameter belongs to, from its name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Extractor,
    Autoencoder,
    Classifier,
}

impl ParamGroup {
    pub fn of(name: &str) -> Self {
        if name.starts_with("cae.") {
            ParamGroup::Autoencoder
        } else if name.starts_with("clf.") {
            ParamGroup::Classifier
        } else {
            ParamGroup::Extractor
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub cae_lr: f64,
    pub clf_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(cae_lr: f64, clf_lr: f64) -> Self {
        Self {
            cae_lr,
            clf_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Extractor => 0.0,
            ParamGroup::Autoencoder => self.cae_lr,
            ParamGroup::Classifier => self.clf_lr,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.cae_lr) && ok(self.clf_lr)) {
            return Err(NnError::InvalidSpec(format!(
                "learning rates must be finite and non-negative, got {} and {}",
                self.cae_lr, self.clf_lr
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(NnError::InvalidSpec("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction and one learning rate per parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(model: &Model, cfg: AdamConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let params = model.params();
        Ok(Self {
            cfg,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients currently stored on the model.
    /// Frozen parameters and groups with a zero learning rate are left
    /// bitwise unchanged.
    pub fn step(&mut self, model: &mut Model) -> Result<(), NnError> {
        let mut params = model.params_mut();
        if params.len() != self.m.len() {
            return Err(NnError::ShapeMismatch("optimizer built for a different model".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        for (i, p) in params.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            if p.grad.len() != p.value.len() {
                return Err(NnError::ShapeMismatch(format!("gradient of {} has wrong length", p.name)));
            }
            let lr = self.cfg.lr(ParamGroup::of(&p.name));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((mj, vj), &g) in m.iter_mut().zip(v.iter_mut()).zip(&p.grad) {
                *mj = b1 * *mj + (1.0 - b1) * g;
                *vj = b2 * *vj + (1.0 - b2) * g * g;
            }
            if lr == 0.0 {
                continue;
            }
            for ((x, &mj), &vj) in p.value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mj as f64 / c1;
                let vhat = vj as f64 / c2;
                *x -= (lr * mhat / (vhat.sqrt() + eps)) as f32;
            }
            if p.value.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NumericalDivergence(format!("{} became non-finite", p.name)));
            }
        }
        Ok(())
    }
}
