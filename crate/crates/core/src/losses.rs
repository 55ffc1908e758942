//! Physics residual, factor orthogonality, the regularisation hook and their
//! weighted combination.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::diffnet::{JetBatch, LrPinnParams, ParamTensors, Real, Stream};
use crate::gridmodel::CollocationBatch;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("jets cover {jets} points but the batch has {batch}")]
    Misaligned { jets: usize, batch: usize },
    #[error("loss weight {name} must be finite and non-negative, got {value}")]
    Weight { name: &'static str, value: f64 },
    #[error("unknown regulariser {0:?} (expected none or l2_params)")]
    UnknownRegularizer(String),
    #[error("non-finite loss component {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub scale: f64,
    pub physics: f64,
    pub reg: f64,
    pub ortho: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { scale: 0.1, physics: 1.0, reg: 1.0, ortho: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in [("scale", self.scale), ("physics", self.physics), ("reg", self.reg), ("ortho", self.ortho)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LossError::Weight { name, value });
            }
        }
        Ok(())
    }

    /// Effective multipliers `(physics, reg, ortho)` including the scale.
    pub fn effective(&self) -> (f64, f64, f64) {
        (self.scale * self.physics, self.scale * self.reg, self.scale * self.ortho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub physics: f64,
    pub ortho: f64,
    pub reg: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// `total = scale * (physics_w * physics + reg_w * reg + ortho_w * ortho)`.
pub fn total_loss(physics: f64, ortho: f64, reg: f64, weights: LossWeights) -> Result<LossBreakdown, LossError> {
    weights.validate()?;
    for (name, v) in [("physics", physics), ("ortho", ortho), ("reg", reg)] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    let total = weights.scale * (weights.physics * physics + weights.reg * reg + weights.ortho * ortho);
    Ok(LossBreakdown { physics, ortho, reg, total, weights })
}

/// Per-point coefficients of the scattered-field residual.
#[derive(Debug, Clone, Copy)]
pub struct ResidualTerms<'a> {
    pub m: &'a [f64],
    pub dm: &'a [f64],
    pub u0_re: &'a [f64],
    pub u0_im: &'a [f64],
}

impl<'a> ResidualTerms<'a> {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            m: &self.m[range.clone()],
            dm: &self.dm[range.clone()],
            u0_re: &self.u0_re[range.clone()],
            u0_im: &self.u0_im[range],
        }
    }
}

impl<'a> From<&'a CollocationBatch> for ResidualTerms<'a> {
    fn from(b: &'a CollocationBatch) -> Self {
        Self { m: &b.m, dm: &b.dm, u0_re: &b.u0_re, u0_im: &b.u0_im }
    }
}

/// `sum_j |w2 m du + lap du + w2 dm u0|^2 / denom` over both channels, with
/// the adjoint of every jet entry.
pub fn physics_loss_sum<T: Real>(
    jets: &JetBatch<T>,
    terms: ResidualTerms,
    omega: f64,
    denom: f64,
) -> Result<(T, JetBatch<T>), LossError> {
    let n = terms.len();
    if jets.n != n {
        return Err(LossError::Misaligned { jets: jets.n, batch: n });
    }
    let w2 = omega * omega;
    let inv = T::from_f64(1.0 / denom);
    let two_inv = T::from_f64(2.0 / denom);
    let mut adj = JetBatch::zeros(n);
    let mut value = T::zero();
    for j in 0..n {
        let k = T::from_f64(w2 * terms.m[j]);
        let src = [w2 * terms.dm[j] * terms.u0_re[j], w2 * terms.dm[j] * terms.u0_im[j]];
        for (c, &src) in src.iter().enumerate() {
            let r = k * jets.get(Stream::Value, j, c) + jets.laplacian(j, c) + T::from_f64(src);
            value += r * r * inv;
            let g = two_inv * r;
            adj.set(Stream::Value, j, c, g * k);
            adj.set(Stream::Dxx, j, c, g);
            adj.set(Stream::Dzz, j, c, g);
        }
    }
    Ok((value, adj))
}

/// Mean squared residual of the scattered Helmholtz equation.
pub fn physics_loss<T: Real>(
    jets: &JetBatch<T>,
    batch: &CollocationBatch,
    omega: f64,
) -> Result<(T, JetBatch<T>), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    physics_loss_sum(jets, batch.into(), omega, batch.len() as f64)
}

/// `sum_l |U^T U - I|_F^2 + |V^T V - I|_F^2` and its gradients `4 U (U^T U - I)`.
pub fn ortho_loss<T: Real>(params: &LrPinnParams<T>) -> (T, Vec<Array2<T>>, Vec<Array2<T>>) {
    let term = |q: &Array2<T>| {
        let mut g = q.t().dot(q);
        for d in g.diag_mut().iter_mut() {
            *d -= T::one();
        }
        let value = g.iter().fold(T::zero(), |acc, &x| acc + x * x);
        let grad = q.dot(&g).mapv(|x| x * T::from_f64(4.0));
        (value, grad)
    };
    let mut value = T::zero();
    let mut du = Vec::with_capacity(params.u.len());
    let mut dv = Vec::with_capacity(params.v.len());
    for (u, v) in params.u.iter().zip(&params.v) {
        let (a, ga) = term(u);
        let (b, gb) = term(v);
        value += a + b;
        du.push(ga);
        dv.push(gb);
    }
    (value, du, dv)
}

/// Regularisation hook. The reference regulariser is unknown, so
/// `L2Params` is a labelled surrogate and is off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegularizerId {
    #[default]
    None,
    L2Params,
}

impl FromStr for RegularizerId {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, LossError> {
        match s {
            "none" => Ok(Self::None),
            "l2_params" => Ok(Self::L2Params),
            other => Err(LossError::UnknownRegularizer(other.to_string())),
        }
    }
}

impl fmt::Display for RegularizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::L2Params => "l2_params",
        })
    }
}

/// Value of the hook and its gradient, shaped like `params`.
pub fn reg_loss<T: Real, P: ParamTensors<T> + Clone>(hook: RegularizerId, params: &P) -> (T, P) {
    let mut grad = params.clone();
    crate::diffnet::params::fill(&mut grad, T::zero());
    match hook {
        RegularizerId::None => (T::zero(), grad),
        RegularizerId::L2Params => {
            let count = crate::diffnet::params::num_params(params).max(1) as f64;
            let inv = T::from_f64(1.0 / count);
            let two_inv = T::from_f64(2.0 / count);
            let mut value = T::zero();
            let values: Vec<Vec<T>> = params.tensors().iter().map(|t| t.2.to_vec()).collect();
            for (dst, src) in grad.tensors_mut().into_iter().zip(&values) {
                for (d, &p) in dst.iter_mut().zip(src) {
                    value += p * p * inv;
                    *d = two_inv * p;
                }
            }
            (value, grad)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{init_params, NetConfig};
    use ndarray::{arr1, arr2};

    fn batch(n: usize) -> CollocationBatch {
        CollocationBatch {
            freq: 3.0,
            x: vec![0.1; n],
            z: vec![0.2; n],
            xs: vec![0.5; n],
            zs: vec![0.025; n],
            m: (0..n).map(|i| 0.2 + 0.01 * i as f64).collect(),
            dm: (0..n).map(|i| 0.03 - 0.01 * i as f64).collect(),
            u0_re: (0..n).map(|i| 0.1 * i as f64 - 0.3).collect(),
            u0_im: (0..n).map(|i| 0.2 - 0.05 * i as f64).collect(),
        }
    }

    #[test]
    fn zero_field_zero_contrast() {
        let mut b = batch(4);
        b.dm = vec![0.0; 4];
        let (v, adj) = physics_loss(&JetBatch::<f64>::zeros(4), &b, 10.0).unwrap();
        assert_eq!(v, 0.0);
        assert!(adj.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_point_hand_residual() {
        let b = batch(1);
        let mut j = JetBatch::zeros(1);
        let vals = [(Stream::Value, 0.5, -0.25), (Stream::Dxx, 1.5, 0.5), (Stream::Dzz, -2.0, 0.75)];
        for (s, re, im) in vals {
            j.set(s, 0, 0, re);
            j.set(s, 0, 1, im);
        }
        j.set(Stream::Dx, 0, 0, 9.0);
        let w = 4.0;
        let rr = w * w * 0.2 * 0.5 + 1.5 - 2.0 + w * w * 0.03 * -0.3;
        let ri = w * w * 0.2 * -0.25 + 0.5 + 0.75 + w * w * 0.03 * 0.2;
        let (v, _) = physics_loss(&j, &b, w).unwrap();
        assert!((v - (rr * rr + ri * ri)).abs() < 1e-12);
    }

    #[test]
    fn adjoints_match_perturbation() {
        let b = batch(3);
        let mut j = JetBatch::zeros(3);
        j.data = Array2::from_shape_fn((15, 2), |(r, c)| ((r * 2 + c) as f64 * 0.37).sin());
        let omega = 7.0;
        let (_, adj) = physics_loss(&j, &b, omega).unwrap();
        let h = 1e-6;
        for r in 0..15 {
            for c in 0..2 {
                let mut p = j.clone();
                p.data[[r, c]] += h;
                let lp = physics_loss(&p, &b, omega).unwrap().0;
                p.data[[r, c]] -= 2.0 * h;
                let lm = physics_loss(&p, &b, omega).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let a = adj.data[[r, c]];
                assert!((a - fd).abs() <= 1e-6 * fd.abs().max(1e-2), "{r},{c}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn physics_rejects_empty_and_misaligned() {
        let b = batch(0);
        assert_eq!(physics_loss(&JetBatch::<f64>::zeros(0), &b, 1.0).unwrap_err(), LossError::EmptyBatch);
        assert!(physics_loss(&JetBatch::<f64>::zeros(2), &batch(3), 1.0).is_err());
    }

    fn lr_with(u: Array2<f64>) -> LrPinnParams {
        let (mut lr, _) = init_params(0, &NetConfig::new(1, 3, 2)).unwrap();
        lr.v = vec![u.clone()];
        lr.u = vec![u];
        lr
    }

    #[test]
    fn ortho_orthonormal_is_zero() {
        let (lr, _) = init_params(4, &NetConfig::new(2, 6, 3)).unwrap();
        assert!(ortho_loss(&lr).0 < 1e-20);
    }

    #[test]
    fn ortho_duplicate_columns() {
        let s = 1.0 / 3f64.sqrt();
        let u = arr2(&[[s, s], [s, s], [s, s]]);
        let lr = lr_with(u);
        let (v, _, _) = ortho_loss(&lr);
        // U and V each contribute 2.
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ortho_gradient_matches_differences() {
        let u = arr2(&[[0.3, -0.2], [0.9, 0.4], [0.1, 0.7], [-0.5, 0.2]]);
        let f = |u: &Array2<f64>| {
            let mut g = u.t().dot(u);
            g -= &Array2::eye(2);
            g.iter().map(|x| x * x).sum::<f64>()
        };
        let (mut lr, _) = init_params(0, &NetConfig::new(1, 4, 2)).unwrap();
        lr.u = vec![u.clone()];
        let (_, du, _) = ortho_loss(&lr);
        let h = 1e-6;
        for i in 0..4 {
            for k in 0..2 {
                let mut p = u.clone();
                p[[i, k]] += h;
                let fp = f(&p);
                p[[i, k]] -= 2.0 * h;
                let fd = (fp - f(&p)) / (2.0 * h);
                assert!((du[0][[i, k]] - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn regularizer_hook() {
        let (lr, _) = init_params(1, &NetConfig::new(1, 4, 2)).unwrap();
        assert_eq!(reg_loss(RegularizerId::None, &lr).0, 0.0);
        let mut zero = lr.clone();
        crate::diffnet::params::fill(&mut zero, 0.0);
        assert_eq!(reg_loss(RegularizerId::L2Params, &zero).0, 0.0);
        let toy = crate::diffnet::SingularValues::learnable(vec![arr1(&[3.0, 4.0])]);
        let (v, g) = reg_loss(RegularizerId::L2Params, &toy);
        assert_eq!(v, 12.5);
        assert_eq!(g.sigma[0], arr1(&[3.0, 4.0]));
        assert_eq!("l2_params".parse::<RegularizerId>().unwrap(), RegularizerId::L2Params);
        assert!("l1".parse::<RegularizerId>().is_err());
    }

    #[test]
    fn total_loss_examples() {
        let d = LossWeights::default();
        assert!((total_loss(1.0, 0.0, 0.0, d).unwrap().total - 0.1).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 0.0, d).unwrap().total, 0.0);
        let unit = LossWeights { scale: 1.0, ..d };
        assert_eq!(total_loss(2.0, 5.0, 3.0, unit).unwrap().total, 10.0);
        let neg = LossWeights { ortho: -1.0, ..d };
        assert!(total_loss(1.0, 1.0, 1.0, neg).is_err());
    }
}
