//! The training objective for each trainable parameter set, with gradients and
//! Hessian-vector products.
//!
//! The physics term is evaluated in chunks of points, in parallel when a
//! thread pool allows it. Chunk results are collected in chunk order and summed
//! sequentially, so the result does not depend on the number of threads.

use std::ops::Range;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::MetaError;
use crate::diffnet::params::{axpy, fill};
use crate::diffnet::{
    feh_backward, feh_forward, feh_tape, lrpinn_backward, lrpinn_forward, lrpinn_tape, vanilla_backward,
    vanilla_forward, vanilla_tape, Dual, LrPinnParams, MetaParams, NetConfig, ParamTensors, Points, Real,
    TunedParams, VanillaParams,
};
use crate::gridmodel::CollocationBatch;
use crate::losses::{ortho_loss, physics_loss_sum, reg_loss, total_loss, LossBreakdown, LossWeights, RegularizerId, ResidualTerms};

pub const DEFAULT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub reg: RegularizerId,
    /// Points per physics chunk.
    pub chunk: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), reg: RegularizerId::None, chunk: DEFAULT_CHUNK }
    }
}

/// A parameter set that can be trained on collocation batches.
pub trait Trainable: ParamTensors<f64> + Clone + Send + Sync {
    /// Loss breakdown and gradient of the total loss.
    fn evaluate(&self, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig)
        -> Result<(LossBreakdown, Self), MetaError>;

    /// Hessian of the total loss applied to `tangent`.
    fn hvp(&self, tangent: &Self, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig)
        -> Result<Self, MetaError>;

    /// Network values (`n x 2`: real, imaginary) at `points` for frequency `freq`.
    fn predict(&self, points: &Points, net: &NetConfig, freq: f64) -> Result<Array2<f64>, MetaError>;
}

struct Parts<T> {
    physics: T,
    ortho: T,
    reg: T,
}

impl Parts<f64> {
    fn breakdown(&self, weights: LossWeights) -> Result<LossBreakdown, MetaError> {
        Ok(total_loss(self.physics, self.ortho, self.reg, weights)?)
    }
}

fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n).step_by(chunk).map(|s| s..(s + chunk).min(n)).collect()
}

/// Runs `f` on every chunk and returns the results in chunk order.
fn chunked<R: Send>(
    batch: &CollocationBatch,
    chunk: usize,
    f: impl Fn(Points, ResidualTerms) -> Result<R, MetaError> + Sync,
) -> Result<Vec<R>, MetaError> {
    if batch.is_empty() {
        return Err(crate::losses::LossError::EmptyBatch.into());
    }
    let terms = ResidualTerms::from(batch);
    chunk_ranges(batch.len(), chunk)
        .into_par_iter()
        .map(|r| {
            let pts = Points {
                x: &batch.x[r.clone()],
                z: &batch.z[r.clone()],
                xs: &batch.xs[r.clone()],
                zs: &batch.zs[r.clone()],
            };
            f(pts, terms.slice(r))
        })
        .collect()
}

fn scale<T: Real>(p: &mut impl ParamTensors<T>, c: T) {
    for s in p.tensors_mut() {
        for x in s {
            *x *= c;
        }
    }
}

fn check_physics<T: Real>(v: T) -> Result<T, MetaError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MetaError::NonFiniteLoss)
    }
}

fn lr_physics<T: Real>(
    lr: &LrPinnParams<T>,
    sigma: &[Array1<T>],
    batch: &CollocationBatch,
    net: &NetConfig,
    chunk: usize,
) -> Result<(T, LrPinnParams<T>, Vec<Array1<T>>), MetaError> {
    let denom = batch.len() as f64;
    let omega = batch.omega();
    let parts = chunked(batch, chunk, |pts, terms| {
        let tape = lrpinn_tape(lr, sigma, &pts, net)?;
        let (v, adj) = physics_loss_sum(tape.jets(), terms, omega, denom)?;
        let (g, gs) = lrpinn_backward(lr, sigma, net, &tape, &adj)?;
        Ok((v, g, gs))
    })?;
    let mut iter = parts.into_iter();
    let (mut value, mut grad, mut gsigma) = iter.next().expect("non-empty batch has a chunk");
    for (v, g, gs) in iter {
        value += v;
        axpy(&mut grad, T::one(), &g);
        for (a, b) in gsigma.iter_mut().zip(&gs) {
            *a += b;
        }
    }
    Ok((check_physics(value)?, grad, gsigma))
}

fn add_ortho<T: Real>(lr: &LrPinnParams<T>, grad: &mut LrPinnParams<T>, weight: T) -> T {
    let (value, du, dv) = ortho_loss(lr);
    for (g, d) in grad.u.iter_mut().zip(&du) {
        g.scaled_add(weight, d);
    }
    for (g, d) in grad.v.iter_mut().zip(&dv) {
        g.scaled_add(weight, d);
    }
    value
}

fn weights<T: Real>(w: LossWeights) -> (T, T, T) {
    let (p, r, o) = w.effective();
    (T::from_f64(p), T::from_f64(r), T::from_f64(o))
}

fn eval_tuned<T: Real>(
    p: &TunedParams<T>,
    batch: &CollocationBatch,
    net: &NetConfig,
    obj: &ObjectiveConfig,
) -> Result<(Parts<T>, TunedParams<T>), MetaError> {
    let (wp, wr, wo) = weights::<T>(obj.weights);
    let (physics, glr, gsigma) = lr_physics(&p.lr, &p.sigma.sigma, batch, net, obj.chunk)?;
    let mut grad = TunedParams { lr: glr, sigma: crate::diffnet::SingularValues { sigma: gsigma, source: p.sigma.source } };
    scale(&mut grad, wp);
    let ortho = add_ortho(&p.lr, &mut grad.lr, wo);
    let (reg, greg) = reg_loss(obj.reg, p);
    axpy(&mut grad, wr, &greg);
    Ok((Parts { physics, ortho, reg }, grad))
}

fn eval_meta<T: Real>(
    p: &MetaParams<T>,
    batch: &CollocationBatch,
    net: &NetConfig,
    obj: &ObjectiveConfig,
) -> Result<(Parts<T>, MetaParams<T>), MetaError> {
    let (wp, wr, wo) = weights::<T>(obj.weights);
    let (sigma, tape) = feh_tape(&p.feh, batch.freq)?;
    let (physics, glr, gsigma) = lr_physics(&p.lr, &sigma.sigma, batch, net, obj.chunk)?;
    let gfeh = feh_backward(&p.feh, &tape, &gsigma)?;
    let mut grad = MetaParams { lr: glr, feh: gfeh };
    scale(&mut grad, wp);
    let ortho = add_ortho(&p.lr, &mut grad.lr, wo);
    let (reg, greg) = reg_loss(obj.reg, p);
    axpy(&mut grad, wr, &greg);
    Ok((Parts { physics, ortho, reg }, grad))
}

fn eval_vanilla<T: Real>(
    p: &VanillaParams<T>,
    batch: &CollocationBatch,
    net: &NetConfig,
    obj: &ObjectiveConfig,
) -> Result<(Parts<T>, VanillaParams<T>), MetaError> {
    let (wp, wr, _) = weights::<T>(obj.weights);
    let denom = batch.len() as f64;
    let omega = batch.omega();
    let parts = chunked(batch, obj.chunk, |pts, terms| {
        let tape = vanilla_tape(p, &pts, net)?;
        let (v, adj) = physics_loss_sum(tape.jets(), terms, omega, denom)?;
        Ok((v, vanilla_backward(p, net, &tape, &adj)?))
    })?;
    let mut iter = parts.into_iter();
    let (mut physics, mut grad) = iter.next().expect("non-empty batch has a chunk");
    for (v, g) in iter {
        physics += v;
        axpy(&mut grad, T::one(), &g);
    }
    check_physics(physics)?;
    scale(&mut grad, wp);
    let (reg, greg) = reg_loss(obj.reg, p);
    axpy(&mut grad, wr, &greg);
    Ok((Parts { physics, ortho: T::zero(), reg }, grad))
}

fn tangent(d: Dual) -> f64 {
    d.eps
}

fn lift(a: f64, b: f64) -> Dual {
    Dual::new(a, b)
}

impl Trainable for TunedParams {
    fn evaluate(&self, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig) -> Result<(LossBreakdown, Self), MetaError> {
        let (parts, grad) = eval_tuned(self, batch, net, obj)?;
        Ok((parts.breakdown(obj.weights)?, grad))
    }

    fn hvp(&self, t: &Self, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig) -> Result<Self, MetaError> {
        Ok(eval_tuned(&self.zip_map(t, lift), batch, net, obj)?.1.map(tangent))
    }

    fn predict(&self, points: &Points, net: &NetConfig, _freq: f64) -> Result<Array2<f64>, MetaError> {
        Ok(lrpinn_forward(&self.lr, &self.sigma.sigma, points, net)?)
    }
}

impl Trainable for MetaParams {
    fn evaluate(&self, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig) -> Result<(LossBreakdown, Self), MetaError> {
        let (parts, grad) = eval_meta(self, batch, net, obj)?;
        Ok((parts.breakdown(obj.weights)?, grad))
    }

    fn hvp(&self, t: &Self, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig) -> Result<Self, MetaError> {
        Ok(eval_meta(&self.zip_map(t, lift), batch, net, obj)?.1.map(tangent))
    }

    fn predict(&self, points: &Points, net: &NetConfig, freq: f64) -> Result<Array2<f64>, MetaError> {
        let sigma = feh_forward(&self.feh, freq)?;
        Ok(lrpinn_forward(&self.lr, &sigma.sigma, points, net)?)
    }
}

impl Trainable for VanillaParams {
    fn evaluate(&self, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig) -> Result<(LossBreakdown, Self), MetaError> {
        let (parts, grad) = eval_vanilla(self, batch, net, obj)?;
        Ok((parts.breakdown(obj.weights)?, grad))
    }

    fn hvp(&self, t: &Self, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig) -> Result<Self, MetaError> {
        Ok(eval_vanilla(&self.zip_map(t, lift), batch, net, obj)?.1.map(tangent))
    }

    fn predict(&self, points: &Points, net: &NetConfig, _freq: f64) -> Result<Array2<f64>, MetaError> {
        Ok(vanilla_forward(self, points, net)?)
    }
}

/// A zero-filled copy of `p`.
pub fn zeros_like<P: ParamTensors<f64> + Clone>(p: &P) -> P {
    let mut z = p.clone();
    fill(&mut z, 0.0);
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::params::{assign_flat, flatten};
    use crate::diffnet::{init_params, init_vanilla, SingularValues};
    use crate::gridmodel::{generate_layered_model, sample_collocation, SourceSpec};

    fn setup() -> (CollocationBatch, NetConfig) {
        let model = generate_layered_model(3, (1.0, 1.0), 2).unwrap();
        let batch = sample_collocation(&model, SourceSpec::at_surface(0.5), 3.0, 40, 1, 0.02).unwrap();
        let net = NetConfig::new(2, 8, 3).with_domain(model.bounds());
        (batch, net)
    }

    fn fd_check<P: Trainable>(p: &P, batch: &CollocationBatch, net: &NetConfig, obj: &ObjectiveConfig) {
        let (_, g) = p.evaluate(batch, net, obj).unwrap();
        let g = flatten(&g);
        let base = flatten(p);
        let mut probe = p.clone();
        for idx in (0..base.len()).step_by(base.len() / 25 + 1) {
            let h = 1e-6;
            let mut x = base.clone();
            x[idx] += h;
            assign_flat(&mut probe, &x).unwrap();
            let lp = probe.evaluate(batch, net, obj).unwrap().0.total;
            x[idx] -= 2.0 * h;
            assign_flat(&mut probe, &x).unwrap();
            let lm = probe.evaluate(batch, net, obj).unwrap().0.total;
            let fd = (lp - lm) / (2.0 * h);
            assert!((g[idx] - fd).abs() <= 1e-4 * fd.abs().max(1e-4), "{idx}: {} vs {fd}", g[idx]);
        }
    }

    #[test]
    fn gradients_match_differences_for_every_variant() {
        let (batch, net) = setup();
        let obj = ObjectiveConfig { reg: RegularizerId::L2Params, chunk: 16, ..ObjectiveConfig::default() };
        let (lr, feh) = init_params(2, &net).unwrap();
        let sigma = feh_forward(&feh, batch.freq).unwrap();
        fd_check(&TunedParams { lr: lr.clone(), sigma: SingularValues::learnable(sigma.sigma) }, &batch, &net, &obj);
        fd_check(&MetaParams { lr, feh }, &batch, &net, &obj);
        fd_check(&init_vanilla(2, &net).unwrap(), &batch, &net, &obj);
    }

    #[test]
    fn chunking_does_not_change_results() {
        let (batch, net) = setup();
        let (lr, feh) = init_params(2, &net).unwrap();
        let p = MetaParams { lr, feh };
        let a = p.evaluate(&batch, &net, &ObjectiveConfig { chunk: 7, ..Default::default() }).unwrap();
        let b = p.evaluate(&batch, &net, &ObjectiveConfig { chunk: 1000, ..Default::default() }).unwrap();
        assert!((a.0.total - b.0.total).abs() < 1e-12 * b.0.total);
        let (ga, gb) = (flatten(&a.1), flatten(&b.1));
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn hvp_matches_gradient_differences() {
        let (batch, net) = setup();
        let obj = ObjectiveConfig::default();
        let (lr, feh) = init_params(4, &net).unwrap();
        let p = MetaParams { lr, feh };
        let mut t = p.clone();
        let dir: Vec<f64> = (0..flatten(&p).len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        assign_flat(&mut t, &dir).unwrap();
        let hv = flatten(&p.hvp(&t, &batch, &net, &obj).unwrap());
        let h = 1e-5;
        let shifted = |s: f64| {
            let mut q = p.clone();
            axpy(&mut q, s, &t);
            flatten(&q.evaluate(&batch, &net, &obj).unwrap().1)
        };
        let (gp, gm) = (shifted(h), shifted(-h));
        let scale = hv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..hv.len() {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!((hv[i] - fd).abs() < 1e-5 * scale, "{i}: {} vs {fd}", hv[i]);
        }
    }
}
