//! Jet-propagating forward pass and its hand-derived reverse pass.
//!
//! A jet carries five streams per point: value, `d/dx`, `d/dz`, `d2/dx2` and
//! `d2/dz2`. Streams are stacked along rows (`stream * n + point`), so every
//! linear layer is one matrix product over all streams. Biases enter the value
//! rows only. The plain forward pass is the same code with the value stream
//! alone.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{LrPinnParams, NetConfig, VanillaParams};
use super::scalar::Real;
use super::DiffnetError;
use crate::gridmodel::CollocationBatch;

pub const STREAMS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Value = 0,
    Dx = 1,
    Dz = 2,
    Dxx = 3,
    Dzz = 4,
}

/// Input coordinates of a batch, in km.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    pub x: &'a [f64],
    pub z: &'a [f64],
    pub xs: &'a [f64],
    pub zs: &'a [f64],
}

impl<'a> Points<'a> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

impl<'a> From<&'a CollocationBatch> for Points<'a> {
    fn from(b: &'a CollocationBatch) -> Self {
        Self { x: &b.x, z: &b.z, xs: &b.xs, zs: &b.zs }
    }
}

/// Per point and channel (column 0 = real, 1 = imaginary): the five streams,
/// stacked as `5n x 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetBatch<T = f64> {
    pub n: usize,
    pub data: Array2<T>,
}

impl<T: Real> JetBatch<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: Array2::zeros((STREAMS * n, 2)) }
    }

    pub fn stream(&self, s: Stream) -> ArrayView2<'_, T> {
        let r = s as usize * self.n;
        self.data.slice(s![r..r + self.n, ..])
    }

    pub fn stream_mut(&mut self, s: Stream) -> ndarray::ArrayViewMut2<'_, T> {
        let r = s as usize * self.n;
        self.data.slice_mut(s![r..r + self.n, ..])
    }

    pub fn get(&self, s: Stream, point: usize, channel: usize) -> T {
        self.data[[s as usize * self.n + point, channel]]
    }

    pub fn set(&mut self, s: Stream, point: usize, channel: usize, v: T) {
        self.data[[s as usize * self.n + point, channel]] = v;
    }

    pub fn laplacian(&self, point: usize, channel: usize) -> T {
        self.get(Stream::Dxx, point, channel) + self.get(Stream::Dzz, point, channel)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One hidden layer, borrowed from whichever parameter struct owns it.
#[derive(Debug, Clone, Copy)]
enum Hidden<'a, T> {
    Factored { u: &'a Array2<T>, v: &'a Array2<T>, sigma: &'a Array1<T> },
    Dense { w: &'a Array2<T>, b: &'a Array1<T> },
}

#[derive(Debug, Clone)]
enum HiddenGrad<T> {
    Factored { u: Array2<T>, v: Array2<T>, sigma: Array1<T> },
    Dense { w: Array2<T>, b: Array1<T> },
}

#[derive(Debug, Clone, Copy)]
struct NetView<'a, T> {
    w_in: &'a Array2<T>,
    b_in: &'a Array1<T>,
    w_out: &'a Array2<T>,
    b_out: &'a Array1<T>,
    act: T,
}

struct NetGrad<T> {
    w_in: Array2<T>,
    b_in: Array1<T>,
    hidden: Vec<HiddenGrad<T>>,
    w_out: Array2<T>,
    b_out: Array1<T>,
}

/// Everything the reverse pass needs from a jet forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    n: usize,
    /// Inputs to each linear map: `a[0]` is the input jet.
    a: Vec<Array2<T>>,
    /// Pre-activations of the input layer and each hidden layer.
    h: Vec<Array2<T>>,
    /// `a V` for factored layers.
    p: Vec<Option<Array2<T>>>,
    out: JetBatch<T>,
}

impl<T: Real> Tape<T> {
    pub fn jets(&self) -> &JetBatch<T> {
        &self.out
    }

    pub fn into_jets(self) -> JetBatch<T> {
        self.out
    }
}

fn check_points(points: &Points, cfg: &NetConfig, input_dim: usize) -> Result<(), DiffnetError> {
    let n = points.len();
    if points.z.len() != n || points.xs.len() != n || (input_dim == 4 && points.zs.len() != n) {
        return Err(DiffnetError::Shape { what: "batch columns".into(), expected: n, found: points.z.len() });
    }
    if cfg.normalization.len() != input_dim {
        return Err(DiffnetError::Shape {
            what: "normalisation pairs".into(),
            expected: input_dim,
            found: cfg.normalization.len(),
        });
    }
    Ok(())
}

/// Normalised input jet, `streams * n x input_dim`.
fn input_jet<T: Real>(points: &Points, cfg: &NetConfig, input_dim: usize, streams: usize) -> Array2<T> {
    let n = points.len();
    let mut a = Array2::zeros((streams * n, input_dim));
    let cols: [&[f64]; 4] = [points.x, points.z, points.xs, points.zs];
    for (d, &(scale, offset)) in cfg.normalization.iter().enumerate() {
        for i in 0..n {
            a[[i, d]] = T::from_f64((cols[d][i] - offset) * scale);
        }
    }
    if streams == STREAMS {
        let (sx, sz) = (cfg.normalization[0].0, cfg.normalization[1].0);
        for i in 0..n {
            a[[n + i, 0]] = T::from_f64(sx);
            a[[2 * n + i, 1]] = T::from_f64(sz);
        }
    }
    a
}

/// `a b`, with the value rows computed as their own product so the value
/// stream is bitwise identical to a value-only pass.
fn stacked_dot<T: Real>(a: &Array2<T>, b: ArrayView2<T>, n: usize) -> Array2<T> {
    let mut y = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(T::one(), &a.slice(s![..n, ..]), &b, T::zero(), &mut y.slice_mut(s![..n, ..]));
    if a.nrows() > n {
        general_mat_mul(T::one(), &a.slice(s![n.., ..]), &b, T::zero(), &mut y.slice_mut(s![n.., ..]));
    }
    y
}

fn dense_forward<T: Real>(a: &Array2<T>, w: &Array2<T>, b: &Array1<T>, n: usize) -> Array2<T> {
    let mut y = stacked_dot(a, w.t(), n);
    let mut value = y.slice_mut(s![..n, ..]);
    value += &b.view().insert_axis(Axis(0));
    y
}

/// Returns `(dW, db, da)` for `y = a W^T + b` (bias on value rows).
fn dense_backward<T: Real>(
    a: &Array2<T>,
    w: &Array2<T>,
    g: &Array2<T>,
    n: usize,
    need_input: bool,
) -> (Array2<T>, Array1<T>, Option<Array2<T>>) {
    let dw = standard(g.t().dot(a));
    let db = g.slice(s![..n, ..]).sum_axis(Axis(0));
    let da = need_input.then(|| g.dot(w));
    (dw, db, da)
}

/// Gradient tensors are exposed as flat slices, which needs row-major storage;
/// products with a transposed left operand may come back column-major.
fn standard<T: Real>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn scale_columns<T: Real>(p: &Array2<T>, sigma: &Array1<T>) -> Array2<T> {
    p * &sigma.view().insert_axis(Axis(0))
}

/// One out-of-line call for both paths: a lone `sin` and a fused `sin`/`cos`
/// pair may otherwise lower to libm routines that differ in the last ulp.
#[inline(never)]
fn sin_cos<T: Real>(x: T) -> (T, T) {
    x.sin_cos()
}

/// `y = sin(s h)` propagated through the jet.
fn sine_forward<T: Real>(h: &Array2<T>, n: usize, scale: T) -> Array2<T> {
    let hs = h.as_slice().expect("standard layout");
    let blk = n * h.ncols();
    let mut out = vec![T::zero(); hs.len()];
    if hs.len() == blk {
        for (o, &hv) in out.iter_mut().zip(hs) {
            *o = sin_cos(scale * hv).0;
        }
    } else {
        for e in 0..blk {
            let (hv, hx, hz, hxx, hzz) = (hs[e], hs[blk + e], hs[2 * blk + e], hs[3 * blk + e], hs[4 * blk + e]);
            let (sn, cs) = sin_cos(scale * hv);
            let sc = scale * cs;
            let s2s = scale * scale * sn;
            out[e] = sn;
            out[blk + e] = sc * hx;
            out[2 * blk + e] = sc * hz;
            out[3 * blk + e] = sc * hxx - s2s * hx * hx;
            out[4 * blk + e] = sc * hzz - s2s * hz * hz;
        }
    }
    Array2::from_shape_vec(h.raw_dim(), out).expect("shape preserved")
}

/// Pulls the stream adjoints `g` of `sin(s h)` back onto `h`.
fn sine_backward<T: Real>(h: &Array2<T>, g: &Array2<T>, n: usize, scale: T) -> Array2<T> {
    let hs = h.as_slice().expect("standard layout");
    let gs = g.as_slice().expect("standard layout");
    let blk = n * h.ncols();
    let mut out = vec![T::zero(); hs.len()];
    if hs.len() == blk {
        for e in 0..blk {
            out[e] = gs[e] * scale * (scale * hs[e]).cos();
        }
    } else {
        let two = T::from_f64(2.0);
        for e in 0..blk {
            let (hv, hx, hz, hxx, hzz) = (hs[e], hs[blk + e], hs[2 * blk + e], hs[3 * blk + e], hs[4 * blk + e]);
            let (gv, gx, gz, gxx, gzz) = (gs[e], gs[blk + e], gs[2 * blk + e], gs[3 * blk + e], gs[4 * blk + e]);
            let (sn, cs) = (scale * hv).sin_cos();
            let sc = scale * cs;
            let s2s = scale * scale * sn;
            let s3c = scale * scale * sc;
            out[e] = gv * sc - s2s * (gx * hx + gz * hz) - gxx * (s3c * hx * hx + s2s * hxx)
                - gzz * (s3c * hz * hz + s2s * hzz);
            out[blk + e] = gx * sc - two * s2s * gxx * hx;
            out[2 * blk + e] = gz * sc - two * s2s * gzz * hz;
            out[3 * blk + e] = gxx * sc;
            out[4 * blk + e] = gzz * sc;
        }
    }
    Array2::from_shape_vec(h.raw_dim(), out).expect("shape preserved")
}

fn check_finite<T: Real>(a: &Array2<T>, layer: &str) -> Result<(), DiffnetError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DiffnetError::NonFinite { layer: layer.to_string() })
    }
}

fn forward<T: Real>(
    net: NetView<T>,
    hidden: &[Hidden<T>],
    points: &Points,
    cfg: &NetConfig,
    streams: usize,
) -> Result<Tape<T>, DiffnetError> {
    let input_dim = net.w_in.ncols();
    check_points(points, cfg, input_dim)?;
    let n = points.len();
    let a0 = input_jet::<T>(points, cfg, input_dim, streams);
    let h0 = dense_forward(&a0, net.w_in, net.b_in, n);
    check_finite(&h0, "input")?;
    let mut a = vec![a0, sine_forward(&h0, n, net.act)];
    let mut h = vec![h0];
    let mut p = Vec::with_capacity(hidden.len());
    for (l, layer) in hidden.iter().enumerate() {
        let prev = a.last().expect("input layer present");
        let (hl, pl) = match *layer {
            Hidden::Factored { u, v, sigma } => {
                let pl = stacked_dot(prev, v.view(), n);
                let hl = stacked_dot(&scale_columns(&pl, sigma), u.t(), n);
                (hl, Some(pl))
            }
            Hidden::Dense { w, b } => (dense_forward(prev, w, b, n), None),
        };
        check_finite(&hl, &format!("hidden {l}"))?;
        a.push(sine_forward(&hl, n, net.act));
        h.push(hl);
        p.push(pl);
    }
    let y = dense_forward(a.last().expect("hidden output"), net.w_out, net.b_out, n);
    check_finite(&y, "output")?;
    Ok(Tape { n, a, h, p, out: JetBatch { n, data: y } })
}

fn backward<T: Real>(
    net: NetView<T>,
    hidden: &[Hidden<T>],
    tape: &Tape<T>,
    adjoint: &Array2<T>,
) -> Result<NetGrad<T>, DiffnetError> {
    if adjoint.dim() != tape.out.data.dim() {
        return Err(DiffnetError::Shape {
            what: "jet adjoints".into(),
            expected: tape.out.data.len(),
            found: adjoint.len(),
        });
    }
    let n = tape.n;
    let depth = hidden.len();
    let (w_out, b_out, ga) = dense_backward(&tape.a[depth + 1], net.w_out, adjoint, n, true);
    let mut ga = ga.expect("requested");
    let mut grads = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        let gh = sine_backward(&tape.h[l + 1], &ga, n, net.act);
        let a_in = &tape.a[l + 1];
        match hidden[l] {
            Hidden::Factored { u, v, sigma } => {
                let pl = tape.p[l].as_ref().expect("factored layer caches a V");
                let dq = gh.dot(u);
                let du = standard(gh.t().dot(&scale_columns(pl, sigma)));
                let dsigma = (&dq * pl).sum_axis(Axis(0));
                let dp = scale_columns(&dq, sigma);
                let dv = standard(a_in.t().dot(&dp));
                ga = dp.dot(&v.t());
                grads.push(HiddenGrad::Factored { u: du, v: dv, sigma: dsigma });
            }
            Hidden::Dense { w, .. } => {
                let (dw, db, da) = dense_backward(a_in, w, &gh, n, true);
                ga = da.expect("requested");
                grads.push(HiddenGrad::Dense { w: dw, b: db });
            }
        }
    }
    grads.reverse();
    let gh0 = sine_backward(&tape.h[0], &ga, n, net.act);
    let (w_in, b_in, _) = dense_backward(&tape.a[0], net.w_in, &gh0, n, false);
    Ok(NetGrad { w_in, b_in, hidden: grads, w_out, b_out })
}

fn lr_view<'a, T: Real>(
    params: &'a LrPinnParams<T>,
    sigma: &'a [Array1<T>],
    cfg: &NetConfig,
) -> Result<(NetView<'a, T>, Vec<Hidden<'a, T>>), DiffnetError> {
    params.check()?;
    params.check_sigma(sigma)?;
    let hidden = params
        .u
        .iter()
        .zip(&params.v)
        .zip(sigma)
        .map(|((u, v), sigma)| Hidden::Factored { u, v, sigma })
        .collect();
    let view = NetView {
        w_in: &params.w_in,
        b_in: &params.b_in,
        w_out: &params.w_out,
        b_out: &params.b_out,
        act: T::from_f64(cfg.act_scale),
    };
    Ok((view, hidden))
}

fn vanilla_view<'a, T: Real>(
    params: &'a VanillaParams<T>,
    cfg: &NetConfig,
) -> Result<(NetView<'a, T>, Vec<Hidden<'a, T>>), DiffnetError> {
    params.check()?;
    let hidden = params.w_h.iter().zip(&params.b_h).map(|(w, b)| Hidden::Dense { w, b }).collect();
    let view = NetView {
        w_in: &params.w_in,
        b_in: &params.b_in,
        w_out: &params.w_out,
        b_out: &params.b_out,
        act: T::from_f64(cfg.act_scale),
    };
    Ok((view, hidden))
}

/// Jet forward pass of the LRPINN, keeping what the reverse pass needs.
pub fn lrpinn_tape<T: Real>(
    params: &LrPinnParams<T>,
    sigma: &[Array1<T>],
    points: &Points,
    cfg: &NetConfig,
) -> Result<Tape<T>, DiffnetError> {
    let (view, hidden) = lr_view(params, sigma, cfg)?;
    forward(view, &hidden, points, cfg, STREAMS)
}

pub fn lrpinn_forward_jet<T: Real>(
    params: &LrPinnParams<T>,
    sigma: &[Array1<T>],
    points: &Points,
    cfg: &NetConfig,
) -> Result<JetBatch<T>, DiffnetError> {
    Ok(lrpinn_tape(params, sigma, points, cfg)?.into_jets())
}

/// Value-only forward pass, `n x 2`.
pub fn lrpinn_forward<T: Real>(
    params: &LrPinnParams<T>,
    sigma: &[Array1<T>],
    points: &Points,
    cfg: &NetConfig,
) -> Result<Array2<T>, DiffnetError> {
    let (view, hidden) = lr_view(params, sigma, cfg)?;
    Ok(forward(view, &hidden, points, cfg, 1)?.out.data)
}

/// Gradients with respect to the LRPINN tensors and the singular values.
pub fn lrpinn_backward<T: Real>(
    params: &LrPinnParams<T>,
    sigma: &[Array1<T>],
    cfg: &NetConfig,
    tape: &Tape<T>,
    adjoints: &JetBatch<T>,
) -> Result<(LrPinnParams<T>, Vec<Array1<T>>), DiffnetError> {
    let (view, hidden) = lr_view(params, sigma, cfg)?;
    let g = backward(view, &hidden, tape, &adjoints.data)?;
    let mut u = Vec::with_capacity(g.hidden.len());
    let mut v = Vec::with_capacity(g.hidden.len());
    let mut ds = Vec::with_capacity(g.hidden.len());
    for layer in g.hidden {
        if let HiddenGrad::Factored { u: du, v: dv, sigma } = layer {
            u.push(du);
            v.push(dv);
            ds.push(sigma);
        }
    }
    Ok((LrPinnParams { w_in: g.w_in, b_in: g.b_in, u, v, w_out: g.w_out, b_out: g.b_out }, ds))
}

pub fn vanilla_tape<T: Real>(
    params: &VanillaParams<T>,
    points: &Points,
    cfg: &NetConfig,
) -> Result<Tape<T>, DiffnetError> {
    let (view, hidden) = vanilla_view(params, cfg)?;
    forward(view, &hidden, points, cfg, STREAMS)
}

pub fn vanilla_forward_jet<T: Real>(
    params: &VanillaParams<T>,
    points: &Points,
    cfg: &NetConfig,
) -> Result<JetBatch<T>, DiffnetError> {
    Ok(vanilla_tape(params, points, cfg)?.into_jets())
}

pub fn vanilla_forward<T: Real>(
    params: &VanillaParams<T>,
    points: &Points,
    cfg: &NetConfig,
) -> Result<Array2<T>, DiffnetError> {
    let (view, hidden) = vanilla_view(params, cfg)?;
    Ok(forward(view, &hidden, points, cfg, 1)?.out.data)
}

pub fn vanilla_backward<T: Real>(
    params: &VanillaParams<T>,
    cfg: &NetConfig,
    tape: &Tape<T>,
    adjoints: &JetBatch<T>,
) -> Result<VanillaParams<T>, DiffnetError> {
    let (view, hidden) = vanilla_view(params, cfg)?;
    let g = backward(view, &hidden, tape, &adjoints.data)?;
    let mut w_h = Vec::with_capacity(g.hidden.len());
    let mut b_h = Vec::with_capacity(g.hidden.len());
    for layer in g.hidden {
        if let HiddenGrad::Dense { w, b } = layer {
            w_h.push(w);
            b_h.push(b);
        }
    }
    Ok(VanillaParams { w_in: g.w_in, b_in: g.b_in, w_h, b_h, w_out: g.w_out, b_out: g.b_out })
}
