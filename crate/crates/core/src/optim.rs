//! Plain gradient descent, AdamW with decoupled weight decay, and milestone
//! learning-rate schedules.
//!
//! Optimisers work on lists of flat tensors, so any parameter layout can be
//! fed through them; state is elementwise and per tensor.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("tensor count mismatch: {params} parameter tensors, {grads} gradient tensors")]
    TensorCount { params: usize, grads: usize },
    #[error("tensor {index}: {params} parameters but {grads} gradient entries")]
    TensorShape { index: usize, params: usize, grads: usize },
    #[error("non-finite gradient in tensor {index}")]
    NonFiniteGradient { index: usize },
    #[error("invalid optimiser setting {name} = {value}")]
    Hyper { name: &'static str, value: f64 },
    #[error("schedule milestones must be strictly increasing with positive factors")]
    Schedule,
}

fn check_congruent(params: &[&mut [f64]], grads: &[&[f64]]) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::TensorCount { params: params.len(), grads: grads.len() });
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(OptimError::TensorShape { index, params: p.len(), grads: g.len() });
        }
    }
    Ok(())
}

fn check_finite(grads: &[&[f64]]) -> Result<(), OptimError> {
    match grads.iter().position(|g| !g.iter().all(|v| v.is_finite())) {
        Some(index) => Err(OptimError::NonFiniteGradient { index }),
        None => Ok(()),
    }
}

/// `p -= lr * g`.
pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<(), OptimError> {
    check_congruent(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (p, &g) in p.iter_mut().zip(g.iter()) {
            *p -= lr * g;
        }
    }
    Ok(())
}

/// Euclidean norm over every gradient entry.
pub fn global_norm(grads: &[&[f64]]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale gradients to this global norm when they exceed it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, clip_norm: None }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let checks = [
            ("lr", self.lr, self.lr >= 0.0),
            ("beta1", self.beta1, (0.0..1.0).contains(&self.beta1)),
            ("beta2", self.beta2, (0.0..1.0).contains(&self.beta2)),
            ("eps", self.eps, self.eps > 0.0),
            ("weight_decay", self.weight_decay, self.weight_decay >= 0.0),
            ("clip_norm", self.clip_norm.unwrap_or(1.0), self.clip_norm.is_none_or(|c| c > 0.0)),
        ];
        for (name, value, ok) in checks {
            if !(ok && value.is_finite()) {
                return Err(OptimError::Hyper { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self { config, m: Vec::new(), v: Vec::new(), step: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One AdamW update. Moment buffers are created on the first call and
    /// must stay congruent with `params` afterwards.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), OptimError> {
        check_congruent(params, grads)?;
        check_finite(grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(OptimError::TensorCount { params: params.len(), grads: self.m.len() });
        } else if let Some(index) = self.m.iter().zip(params.iter()).position(|(m, p)| m.len() != p.len()) {
            return Err(OptimError::TensorShape { index, params: params[index].len(), grads: self.m[index].len() });
        }
        let c = self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = global_norm(grads);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let g = g[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * p[i]);
            }
        }
        Ok(())
    }
}

/// `base_lr` times the product of every factor whose milestone has been reached.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub milestones: Vec<(u64, f64)>,
}

impl LrSchedule {
    pub fn new(base_lr: f64, milestones: Vec<(u64, f64)>) -> Result<Self, OptimError> {
        let increasing = milestones.windows(2).all(|w| w[0].0 < w[1].0);
        let positive = milestones.iter().all(|&(_, f)| f > 0.0 && f.is_finite());
        if !(increasing && positive) {
            return Err(OptimError::Schedule);
        }
        if !(base_lr.is_finite() && base_lr >= 0.0) {
            return Err(OptimError::Hyper { name: "base_lr", value: base_lr });
        }
        Ok(Self { base_lr, milestones })
    }

    pub fn constant(base_lr: f64) -> Self {
        Self { base_lr, milestones: Vec::new() }
    }

    /// A factor applied at every multiple of `every` up to `horizon`.
    pub fn periodic(base_lr: f64, every: u64, factor: f64, horizon: u64) -> Result<Self, OptimError> {
        if every == 0 {
            return Err(OptimError::Schedule);
        }
        let milestones = (1..).map(|i| i * every).take_while(|&e| e <= horizon).map(|e| (e, factor)).collect();
        Self::new(base_lr, milestones)
    }

    /// Meta-training default: decay by 0.8 every 5000 epochs.
    pub fn meta_train(base_lr: f64, horizon: u64) -> Self {
        Self::periodic(base_lr, 5000, 0.8, horizon).expect("valid constants")
    }

    /// Meta-testing default: halve at epochs 2000, 4000 and 8000.
    pub fn meta_test(base_lr: f64) -> Self {
        Self::new(base_lr, vec![(2000, 0.5), (4000, 0.5), (8000, 0.5)]).expect("valid constants")
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        self.milestones.iter().filter(|&&(e, _)| e <= epoch).fold(self.base_lr, |lr, &(_, f)| lr * f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step1(opt: &mut AdamW, p: &mut f64, g: f64) {
        let mut ps = [std::slice::from_mut(p)];
        opt.step(&mut ps, &[&[g]]).unwrap();
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0, 2.0];
        sgd_step(&mut [&mut p[..]], &[&[0.5, 0.0]], 0.1).unwrap();
        assert_eq!(p, vec![0.95, 2.0]);
        assert!(sgd_step(&mut [&mut p[..]], &[&[0.5]], 0.1).is_err());
    }

    #[test]
    fn zero_gradient_only_advances_counter() {
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.1)).unwrap();
        let mut p = 1.25;
        step1(&mut opt, &mut p, 0.0);
        assert_eq!(p, 1.25);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.1)).unwrap();
        let mut p = 0.0;
        step1(&mut opt, &mut p, 1.0);
        // m_hat = v_hat = 1 after bias correction.
        assert!((p + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
        assert!((p + 0.1).abs() < 1e-6);
    }

    #[test]
    fn pure_decoupled_decay() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.1, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg).unwrap();
        let mut p = 1.0;
        step1(&mut opt, &mut p, 0.0);
        assert!((p - 0.99).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.1)).unwrap();
        let mut p = 0.0;
        for _ in 0..500 {
            let g = 2.0 * (p - 3.0);
            step1(&mut opt, &mut p, g);
        }
        assert!((p - 3.0).abs() < 1e-3, "{p}");
    }

    #[test]
    fn rejects_non_finite_and_incongruent() {
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        let mut p = [0.0; 2];
        assert_eq!(
            opt.step(&mut [&mut p[..]], &[&[1.0, f64::NAN]]).unwrap_err(),
            OptimError::NonFiniteGradient { index: 0 }
        );
        opt.step(&mut [&mut p[..]], &[&[1.0, 1.0]]).unwrap();
        let mut q = [0.0; 3];
        assert!(opt.step(&mut [&mut q[..]], &[&[1.0, 1.0, 1.0]]).is_err());
        assert!(AdamW::new(AdamWConfig { beta1: 1.0, ..AdamWConfig::default() }).is_err());
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let cfg = AdamWConfig { lr: 0.1, clip_norm: Some(1.0), ..AdamWConfig::default() };
        let mut clipped = AdamW::new(cfg).unwrap();
        let mut plain = AdamW::new(AdamWConfig::with_lr(0.1)).unwrap();
        let mut a = [0.0, 0.0];
        let mut b = vec![0.0, 0.0];
        clipped.step(&mut [&mut a[..]], &[&[30.0, 40.0]]).unwrap();
        plain.step(&mut [&mut b[..]], &[&[0.6, 0.8]]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn schedules() {
        let train = LrSchedule::meta_train(1e-3, 50_000);
        assert!((train.lr_at(12_000) - 6.4e-4).abs() < 1e-15);
        assert_eq!(train.lr_at(0), 1e-3);
        let test = LrSchedule::meta_test(1e-3);
        assert!((test.lr_at(5000) - 2.5e-4).abs() < 1e-15);
        assert_eq!(test.lr_at(1999), 1e-3);
        assert!(LrSchedule::new(1.0, vec![(5, 0.5), (5, 0.5)]).is_err());
        assert!(LrSchedule::new(1.0, vec![(5, 0.0)]).is_err());
    }
}
