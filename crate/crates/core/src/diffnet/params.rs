use ndarray::{Array1, Array2, Axis, Dimension, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scalar::Real;
use super::DiffnetError;

/// Architecture and input normalisation shared by every network variant.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Number of hidden layers `L`.
    pub layers: usize,
    pub width: usize,
    /// Rank `k` of every factored hidden layer.
    pub rank: usize,
    /// 3 for `(x, z, xs)`, 4 when `zs` is also an input.
    pub input_dim: usize,
    /// Activations are `sin(act_scale * h)`.
    pub act_scale: f64,
    /// Per input dimension `(scale, offset)`; the network sees `(c - offset) * scale`.
    pub normalization: Vec<(f64, f64)>,
    pub feh_width: usize,
    /// The hypernetwork input is `freq * freq_scale`.
    pub freq_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            width: 320,
            rank: 100,
            input_dim: 3,
            act_scale: 1.0,
            normalization: vec![(1.0, 0.0); 3],
            feh_width: 80,
            freq_scale: 0.1,
        }
    }
}

impl NetConfig {
    pub fn new(layers: usize, width: usize, rank: usize) -> Self {
        Self { layers, width, rank, ..Self::default() }
    }

    /// Maps the model rectangle onto `[-1, 1]` in every input dimension.
    /// Source coordinates share the range of the matching spatial axis.
    pub fn with_domain(mut self, bounds: ((f64, f64), (f64, f64))) -> Self {
        let ((x0, x1), (z0, z1)) = bounds;
        let ax = (2.0 / (x1 - x0), 0.5 * (x0 + x1));
        let az = (2.0 / (z1 - z0), 0.5 * (z0 + z1));
        self.normalization = [ax, az, ax, az][..self.input_dim].to_vec();
        self
    }

    pub fn with_input_dim(mut self, input_dim: usize) -> Self {
        self.input_dim = input_dim;
        self.normalization.resize(input_dim, (1.0, 0.0));
        self
    }

    pub fn validate(&self) -> Result<(), DiffnetError> {
        let bad = |what: &str| Err(DiffnetError::Config(what.to_string()));
        if self.layers == 0 || self.width == 0 || self.feh_width == 0 {
            return bad("layers, width and feh_width must be positive");
        }
        if self.rank == 0 || self.rank > self.width {
            return bad("rank must lie in 1..=width");
        }
        if !(self.input_dim == 3 || self.input_dim == 4) {
            return bad("input_dim must be 3 or 4");
        }
        if self.normalization.len() != self.input_dim {
            return bad("one normalisation pair per input dimension");
        }
        if self.normalization.iter().any(|&(s, o)| !(s.is_finite() && s > 0.0 && o.is_finite())) {
            return bad("normalisation scales must be positive and finite");
        }
        if !(self.act_scale.is_finite() && self.act_scale != 0.0) {
            return bad("act_scale must be finite and nonzero");
        }
        if !(self.freq_scale.is_finite() && self.freq_scale > 0.0) {
            return bad("freq_scale must be positive");
        }
        Ok(())
    }
}

/// Named, shaped, contiguous parameter tensors in a fixed visiting order.
pub trait ParamTensors<T> {
    fn tensors(&self) -> Vec<(String, &[usize], &[T])>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;
}

fn view<T, D: Dimension>(name: String, a: &ndarray::Array<T, D>) -> (String, &[usize], &[T]) {
    (name, a.shape(), a.as_slice().expect("parameters are kept in standard layout"))
}

fn view_mut<T, D: Dimension>(a: &mut ndarray::Array<T, D>) -> &mut [T] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}

pub fn num_params<T>(p: &impl ParamTensors<T>) -> usize {
    p.tensors().iter().map(|t| t.2.len()).sum()
}

pub fn flatten<T: Copy>(p: &impl ParamTensors<T>) -> Vec<T> {
    p.tensors().iter().flat_map(|t| t.2.iter().copied()).collect()
}

pub fn assign_flat<T: Copy>(p: &mut impl ParamTensors<T>, flat: &[T]) -> Result<(), DiffnetError> {
    let mut slices = p.tensors_mut();
    let total: usize = slices.iter().map(|s| s.len()).sum();
    if total != flat.len() {
        return Err(DiffnetError::Shape { what: "flat parameter vector".into(), expected: total, found: flat.len() });
    }
    let mut at = 0;
    for s in slices.iter_mut() {
        s.copy_from_slice(&flat[at..at + s.len()]);
        at += s.len();
    }
    Ok(())
}

pub fn fill<T: Copy>(p: &mut impl ParamTensors<T>, value: T) {
    for s in p.tensors_mut() {
        s.fill(value);
    }
}

/// `p += alpha * g`, tensor by tensor.
pub fn axpy<T: Real, P: ParamTensors<T>>(p: &mut P, alpha: T, g: &P) {
    let src: Vec<Vec<T>> = g.tensors().iter().map(|t| t.2.to_vec()).collect();
    for (dst, src) in p.tensors_mut().into_iter().zip(&src) {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += alpha * s;
        }
    }
}

pub fn all_finite<T: Real>(p: &impl ParamTensors<T>) -> bool {
    p.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
}

/// Checks that two parameter sets have identical tensor names and shapes.
pub fn check_congruent<T, U>(a: &impl ParamTensors<T>, b: &impl ParamTensors<U>) -> Result<(), DiffnetError> {
    let (ta, tb) = (a.tensors(), b.tensors());
    if ta.len() != tb.len() {
        return Err(DiffnetError::Shape { what: "tensor count".into(), expected: ta.len(), found: tb.len() });
    }
    for (x, y) in ta.iter().zip(&tb) {
        if x.0 != y.0 || x.1 != y.1 {
            return Err(DiffnetError::Shape { what: x.0.clone(), expected: x.2.len(), found: y.2.len() });
        }
    }
    Ok(())
}

fn map2<T: Copy, U>(a: &Array2<T>, f: impl Fn(T) -> U) -> Array2<U> {
    a.mapv(f)
}

fn zip2<T: Copy, U, D: Dimension>(
    a: &ndarray::Array<T, D>,
    b: &ndarray::Array<T, D>,
    f: impl Fn(T, T) -> U,
) -> ndarray::Array<U, D> {
    Zip::from(a).and(b).map_collect(|&x, &y| f(x, y))
}

/// LRPINN parameters. Hidden layers are bias-free with `W_l = U_l diag(sigma_l) V_l^T`;
/// the singular values live outside this struct.
#[derive(Debug, Clone, PartialEq)]
pub struct LrPinnParams<T = f64> {
    /// `width x input_dim`
    pub w_in: Array2<T>,
    pub b_in: Array1<T>,
    /// `width x k` per hidden layer
    pub u: Vec<Array2<T>>,
    /// `width x k` per hidden layer
    pub v: Vec<Array2<T>>,
    /// `2 x width`; rows are the real and imaginary channels.
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

impl<T: Real> LrPinnParams<T> {
    pub fn layers(&self) -> usize {
        self.u.len()
    }

    pub fn width(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.u.iter().map(|u| u.ncols()).collect()
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> LrPinnParams<U> {
        LrPinnParams {
            w_in: map2(&self.w_in, f),
            b_in: self.b_in.mapv(f),
            u: self.u.iter().map(|a| map2(a, f)).collect(),
            v: self.v.iter().map(|a| map2(a, f)).collect(),
            w_out: map2(&self.w_out, f),
            b_out: self.b_out.mapv(f),
        }
    }

    pub fn zip_map<U: Real>(&self, o: &Self, f: impl Fn(T, T) -> U + Copy) -> LrPinnParams<U> {
        LrPinnParams {
            w_in: zip2(&self.w_in, &o.w_in, f),
            b_in: zip2(&self.b_in, &o.b_in, f),
            u: self.u.iter().zip(&o.u).map(|(a, b)| zip2(a, b, f)).collect(),
            v: self.v.iter().zip(&o.v).map(|(a, b)| zip2(a, b, f)).collect(),
            w_out: zip2(&self.w_out, &o.w_out, f),
            b_out: zip2(&self.b_out, &o.b_out, f),
        }
    }

    /// Checks internal shape consistency against a singular-value set.
    pub fn check_sigma(&self, sigma: &[Array1<T>]) -> Result<(), DiffnetError> {
        if sigma.len() != self.layers() {
            return Err(DiffnetError::Shape { what: "sigma layers".into(), expected: self.layers(), found: sigma.len() });
        }
        for (l, s) in sigma.iter().enumerate() {
            let k = self.u[l].ncols();
            if s.len() != k || self.v[l].ncols() != k {
                return Err(DiffnetError::Shape { what: format!("sigma[{l}]"), expected: k, found: s.len() });
            }
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), DiffnetError> {
        let w = self.width();
        let shape = |what: String, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(DiffnetError::Shape { what, expected, found })
            }
        };
        shape("b_in".into(), w, self.b_in.len())?;
        shape("w_out rows".into(), 2, self.w_out.nrows())?;
        shape("w_out cols".into(), w, self.w_out.ncols())?;
        shape("b_out".into(), 2, self.b_out.len())?;
        shape("v layers".into(), self.u.len(), self.v.len())?;
        for l in 0..self.u.len() {
            shape(format!("u[{l}] rows"), w, self.u[l].nrows())?;
            shape(format!("v[{l}] rows"), w, self.v[l].nrows())?;
            shape(format!("v[{l}] cols"), self.u[l].ncols(), self.v[l].ncols())?;
        }
        Ok(())
    }
}

impl<T> ParamTensors<T> for LrPinnParams<T> {
    fn tensors(&self) -> Vec<(String, &[usize], &[T])> {
        let mut out = vec![view("lr.w_in".into(), &self.w_in), view("lr.b_in".into(), &self.b_in)];
        for (l, u) in self.u.iter().enumerate() {
            out.push(view(format!("lr.u.{l}"), u));
        }
        for (l, v) in self.v.iter().enumerate() {
            out.push(view(format!("lr.v.{l}"), v));
        }
        out.push(view("lr.w_out".into(), &self.w_out));
        out.push(view("lr.b_out".into(), &self.b_out));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![view_mut(&mut self.w_in), view_mut(&mut self.b_in)];
        out.extend(self.u.iter_mut().map(view_mut));
        out.extend(self.v.iter_mut().map(view_mut));
        out.push(view_mut(&mut self.w_out));
        out.push(view_mut(&mut self.b_out));
        out
    }
}

/// Where a set of singular values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaSource {
    FehPredicted,
    Learnable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularValues<T = f64> {
    pub sigma: Vec<Array1<T>>,
    pub source: SigmaSource,
}

impl<T: Real> SingularValues<T> {
    pub fn learnable(sigma: Vec<Array1<T>>) -> Self {
        Self { sigma, source: SigmaSource::Learnable }
    }
}

impl<T> ParamTensors<T> for SingularValues<T> {
    fn tensors(&self) -> Vec<(String, &[usize], &[T])> {
        self.sigma.iter().enumerate().map(|(l, s)| view(format!("lr.sigma.{l}"), s)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.sigma.iter_mut().map(view_mut).collect()
    }
}

/// Frequency embedding hypernetwork: a three-layer trunk (sine, sine, GELU)
/// shared by one linear head per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FehParams<T = f64> {
    /// Shapes `fw x 1`, `fw x fw`, `fw x fw`.
    pub trunk_w: Vec<Array2<T>>,
    pub trunk_b: Vec<Array1<T>>,
    /// `k x fw` per hidden layer
    pub head_w: Vec<Array2<T>>,
    pub head_b: Vec<Array1<T>>,
    /// Not trainable.
    pub freq_scale: f64,
}

impl<T: Real> FehParams<T> {
    pub fn layers(&self) -> usize {
        self.head_w.len()
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> FehParams<U> {
        FehParams {
            trunk_w: self.trunk_w.iter().map(|a| map2(a, f)).collect(),
            trunk_b: self.trunk_b.iter().map(|a| a.mapv(f)).collect(),
            head_w: self.head_w.iter().map(|a| map2(a, f)).collect(),
            head_b: self.head_b.iter().map(|a| a.mapv(f)).collect(),
            freq_scale: self.freq_scale,
        }
    }

    pub fn zip_map<U: Real>(&self, o: &Self, f: impl Fn(T, T) -> U + Copy) -> FehParams<U> {
        FehParams {
            trunk_w: self.trunk_w.iter().zip(&o.trunk_w).map(|(a, b)| zip2(a, b, f)).collect(),
            trunk_b: self.trunk_b.iter().zip(&o.trunk_b).map(|(a, b)| zip2(a, b, f)).collect(),
            head_w: self.head_w.iter().zip(&o.head_w).map(|(a, b)| zip2(a, b, f)).collect(),
            head_b: self.head_b.iter().zip(&o.head_b).map(|(a, b)| zip2(a, b, f)).collect(),
            freq_scale: self.freq_scale,
        }
    }

    pub fn check(&self) -> Result<(), DiffnetError> {
        let err = |what: &str, expected: usize, found: usize| {
            Err(DiffnetError::Shape { what: what.to_string(), expected, found })
        };
        if self.trunk_w.len() != 3 || self.trunk_b.len() != 3 {
            return err("feh trunk layers", 3, self.trunk_w.len());
        }
        let fw = self.trunk_w[0].nrows();
        if self.trunk_w[0].ncols() != 1 {
            return err("feh trunk_w.0 cols", 1, self.trunk_w[0].ncols());
        }
        for i in 0..3 {
            if self.trunk_w[i].nrows() != fw || self.trunk_b[i].len() != fw {
                return err("feh trunk width", fw, self.trunk_w[i].nrows());
            }
            if i > 0 && self.trunk_w[i].ncols() != fw {
                return err("feh trunk cols", fw, self.trunk_w[i].ncols());
            }
        }
        if self.head_b.len() != self.head_w.len() {
            return err("feh heads", self.head_w.len(), self.head_b.len());
        }
        for (w, b) in self.head_w.iter().zip(&self.head_b) {
            if w.ncols() != fw || w.nrows() != b.len() {
                return err("feh head shape", fw, w.ncols());
            }
        }
        Ok(())
    }
}

impl<T> ParamTensors<T> for FehParams<T> {
    fn tensors(&self) -> Vec<(String, &[usize], &[T])> {
        let mut out = Vec::new();
        for (i, w) in self.trunk_w.iter().enumerate() {
            out.push(view(format!("feh.trunk_w.{i}"), w));
        }
        for (i, b) in self.trunk_b.iter().enumerate() {
            out.push(view(format!("feh.trunk_b.{i}"), b));
        }
        for (l, w) in self.head_w.iter().enumerate() {
            out.push(view(format!("feh.head_w.{l}"), w));
        }
        for (l, b) in self.head_b.iter().enumerate() {
            out.push(view(format!("feh.head_b.{l}"), b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.trunk_w.iter_mut().map(view_mut).collect();
        out.extend(self.trunk_b.iter_mut().map(view_mut));
        out.extend(self.head_w.iter_mut().map(view_mut));
        out.extend(self.head_b.iter_mut().map(view_mut));
        out
    }
}

/// Fully connected baseline with dense hidden layers and hidden biases.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaParams<T = f64> {
    pub w_in: Array2<T>,
    pub b_in: Array1<T>,
    /// `width x width` per hidden layer
    pub w_h: Vec<Array2<T>>,
    pub b_h: Vec<Array1<T>>,
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

impl<T: Real> VanillaParams<T> {
    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> VanillaParams<U> {
        VanillaParams {
            w_in: map2(&self.w_in, f),
            b_in: self.b_in.mapv(f),
            w_h: self.w_h.iter().map(|a| map2(a, f)).collect(),
            b_h: self.b_h.iter().map(|a| a.mapv(f)).collect(),
            w_out: map2(&self.w_out, f),
            b_out: self.b_out.mapv(f),
        }
    }

    pub fn zip_map<U: Real>(&self, o: &Self, f: impl Fn(T, T) -> U + Copy) -> VanillaParams<U> {
        VanillaParams {
            w_in: zip2(&self.w_in, &o.w_in, f),
            b_in: zip2(&self.b_in, &o.b_in, f),
            w_h: self.w_h.iter().zip(&o.w_h).map(|(a, b)| zip2(a, b, f)).collect(),
            b_h: self.b_h.iter().zip(&o.b_h).map(|(a, b)| zip2(a, b, f)).collect(),
            w_out: zip2(&self.w_out, &o.w_out, f),
            b_out: zip2(&self.b_out, &o.b_out, f),
        }
    }

    pub fn check(&self) -> Result<(), DiffnetError> {
        let w = self.w_in.nrows();
        let ok = self.b_in.len() == w
            && self.w_h.len() == self.b_h.len()
            && self.w_h.iter().all(|m| m.dim() == (w, w))
            && self.b_h.iter().all(|b| b.len() == w)
            && self.w_out.dim() == (2, w)
            && self.b_out.len() == 2;
        if ok {
            Ok(())
        } else {
            Err(DiffnetError::Shape { what: "vanilla layer shapes".into(), expected: w, found: 0 })
        }
    }
}

impl<T> ParamTensors<T> for VanillaParams<T> {
    fn tensors(&self) -> Vec<(String, &[usize], &[T])> {
        let mut out = vec![view("vanilla.w_in".into(), &self.w_in), view("vanilla.b_in".into(), &self.b_in)];
        for (l, w) in self.w_h.iter().enumerate() {
            out.push(view(format!("vanilla.w_h.{l}"), w));
        }
        for (l, b) in self.b_h.iter().enumerate() {
            out.push(view(format!("vanilla.b_h.{l}"), b));
        }
        out.push(view("vanilla.w_out".into(), &self.w_out));
        out.push(view("vanilla.b_out".into(), &self.b_out));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![view_mut(&mut self.w_in), view_mut(&mut self.b_in)];
        out.extend(self.w_h.iter_mut().map(view_mut));
        out.extend(self.b_h.iter_mut().map(view_mut));
        out.push(view_mut(&mut self.w_out));
        out.push(view_mut(&mut self.b_out));
        out
    }
}

/// Meta-training parameter set: the LRPINN plus the hypernetwork that
/// supplies its singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams<T = f64> {
    pub lr: LrPinnParams<T>,
    pub feh: FehParams<T>,
}

impl<T: Real> MetaParams<T> {
    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> MetaParams<U> {
        MetaParams { lr: self.lr.map(f), feh: self.feh.map(f) }
    }

    pub fn zip_map<U: Real>(&self, o: &Self, f: impl Fn(T, T) -> U + Copy) -> MetaParams<U> {
        MetaParams { lr: self.lr.zip_map(&o.lr, f), feh: self.feh.zip_map(&o.feh, f) }
    }
}

impl<T> ParamTensors<T> for MetaParams<T> {
    fn tensors(&self) -> Vec<(String, &[usize], &[T])> {
        let mut out = self.lr.tensors();
        out.extend(self.feh.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.lr.tensors_mut();
        out.extend(self.feh.tensors_mut());
        out
    }
}

/// Fine-tuning parameter set after the hypernetwork has been pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct TunedParams<T = f64> {
    pub lr: LrPinnParams<T>,
    pub sigma: SingularValues<T>,
}

impl<T: Real> TunedParams<T> {
    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> TunedParams<U> {
        TunedParams {
            lr: self.lr.map(f),
            sigma: SingularValues { sigma: self.sigma.sigma.iter().map(|s| s.mapv(f)).collect(), source: self.sigma.source },
        }
    }

    pub fn zip_map<U: Real>(&self, o: &Self, f: impl Fn(T, T) -> U + Copy) -> TunedParams<U> {
        TunedParams {
            lr: self.lr.zip_map(&o.lr, f),
            sigma: SingularValues {
                sigma: self.sigma.sigma.iter().zip(&o.sigma.sigma).map(|(a, b)| zip2(a, b, f)).collect(),
                source: self.sigma.source,
            },
        }
    }
}

impl<T> ParamTensors<T> for TunedParams<T> {
    fn tensors(&self) -> Vec<(String, &[usize], &[T])> {
        let mut out = self.lr.tensors();
        out.extend(self.sigma.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.lr.tensors_mut();
        out.extend(self.sigma.tensors_mut());
        out
    }
}

/// `W = U diag(sigma) V^T` without forming the diagonal matrix.
pub fn compose_weight<T: Real>(u: &Array2<T>, sigma: &Array1<T>, v: &Array2<T>) -> Result<Array2<T>, DiffnetError> {
    if u.ncols() != sigma.len() || v.ncols() != sigma.len() {
        return Err(DiffnetError::Shape {
            what: "compose_weight rank".into(),
            expected: sigma.len(),
            found: if u.ncols() != sigma.len() { u.ncols() } else { v.ncols() },
        });
    }
    let us = u * &sigma.view().insert_axis(Axis(0));
    Ok(us.dot(&v.t()))
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..=bound))
}

/// Gaussian matrix with orthonormal columns (modified Gram-Schmidt, two passes).
pub fn orthonormal_gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    assert!(cols <= rows, "cannot fit {cols} orthonormal columns in dimension {rows}");
    let mut q = Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal));
    for j in 0..cols {
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).to_owned();
                q.column_mut(j).scaled_add(-proj, &qi);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|x| x / norm);
    }
    q
}

/// Initial hypernetwork head bias. With orthonormal factors a hidden layer
/// maps an activation vector of RMS `a` to pre-activations of RMS about
/// `a * sigma * sqrt(k / width)`, so this keeps hidden pre-activations O(1).
pub fn initial_sigma(width: usize, rank: usize) -> f64 {
    (2.0 * width as f64 / rank as f64).sqrt()
}

/// Deterministic initialisation of the LRPINN and its hypernetwork.
pub fn init_params(seed: u64, config: &NetConfig) -> Result<(LrPinnParams, FehParams), DiffnetError> {
    config.validate()?;
    let (w, k, d, fw) = (config.width, config.rank, config.input_dim, config.feh_width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bin = 1.0 / (d as f64).sqrt();
    let w_in = uniform(&mut rng, w, d, bin);
    let b_in = uniform_vec(&mut rng, w, bin);
    let mut u = Vec::with_capacity(config.layers);
    let mut v = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        u.push(orthonormal_gaussian(&mut rng, w, k));
        v.push(orthonormal_gaussian(&mut rng, w, k));
    }
    let bout = 1.0 / (w as f64).sqrt();
    let w_out = uniform(&mut rng, 2, w, bout);
    let b_out = uniform_vec(&mut rng, 2, bout);
    let lr = LrPinnParams { w_in, b_in, u, v, w_out, b_out };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let bf = 1.0 / (fw as f64).sqrt();
    let trunk_w = vec![uniform(&mut rng, fw, 1, 1.0), uniform(&mut rng, fw, fw, bf), uniform(&mut rng, fw, fw, bf)];
    let trunk_b = vec![uniform_vec(&mut rng, fw, 1.0), uniform_vec(&mut rng, fw, bf), uniform_vec(&mut rng, fw, bf)];
    let sigma0 = initial_sigma(w, k);
    let head_w = (0..config.layers).map(|_| uniform(&mut rng, k, fw, bf)).collect();
    let head_b = (0..config.layers).map(|_| uniform_vec(&mut rng, k, bf).mapv(|b| b + sigma0)).collect();
    let feh = FehParams { trunk_w, trunk_b, head_w, head_b, freq_scale: config.freq_scale };
    Ok((lr, feh))
}

/// Deterministic initialisation of the dense baseline.
pub fn init_vanilla(seed: u64, config: &NetConfig) -> Result<VanillaParams, DiffnetError> {
    config.validate()?;
    let (w, d) = (config.width, config.input_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let bin = 1.0 / (d as f64).sqrt();
    let w_in = uniform(&mut rng, w, d, bin);
    let b_in = uniform_vec(&mut rng, w, bin);
    let bh = (6.0 / w as f64).sqrt();
    let w_h = (0..config.layers).map(|_| uniform(&mut rng, w, w, bh)).collect();
    let b_h = (0..config.layers).map(|_| uniform_vec(&mut rng, w, 1.0 / (w as f64).sqrt())).collect();
    let bout = 1.0 / (w as f64).sqrt();
    let w_out = uniform(&mut rng, 2, w, bout);
    let b_out = uniform_vec(&mut rng, 2, bout);
    Ok(VanillaParams { w_in, b_in, w_h, b_h, w_out, b_out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn gram_defect(q: &Array2<f64>) -> f64 {
        let g = q.t().dot(q) - Array2::<f64>::eye(q.ncols());
        g.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn init_factors_are_orthonormal() {
        let cfg = NetConfig::new(3, 40, 12);
        let (lr, _) = init_params(7, &cfg).unwrap();
        for (u, v) in lr.u.iter().zip(&lr.v) {
            assert!(gram_defect(u) < 1e-10);
            assert!(gram_defect(v) < 1e-10);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = NetConfig::new(2, 16, 4);
        assert_eq!(init_params(3, &cfg).unwrap(), init_params(3, &cfg).unwrap());
        assert_ne!(init_params(3, &cfg).unwrap().0, init_params(4, &cfg).unwrap().0);
        assert_eq!(init_vanilla(3, &cfg).unwrap(), init_vanilla(3, &cfg).unwrap());
    }

    #[test]
    fn default_shapes() {
        let (lr, feh) = init_params(0, &NetConfig::default()).unwrap();
        assert_eq!(lr.layers(), 6);
        assert_eq!(lr.u[0].dim(), (320, 100));
        assert_eq!(feh.head_w.len() * feh.head_w[0].nrows(), 600);
        assert_eq!(feh.trunk_w[1].dim(), (80, 80));
        lr.check().unwrap();
        feh.check().unwrap();
    }

    #[test]
    fn compose_identity_block() {
        let u = Array2::<f64>::eye(4).slice(ndarray::s![.., ..2]).to_owned();
        let w = compose_weight(&u, &arr1(&[1.0, 1.0]), &u).unwrap();
        let mut expected = Array2::<f64>::zeros((4, 4));
        expected[[0, 0]] = 1.0;
        expected[[1, 1]] = 1.0;
        assert_eq!(w, expected);
    }

    #[test]
    fn compose_matches_naive_triple_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = uniform(&mut rng, 4, 2, 1.0);
        let v = uniform(&mut rng, 3, 2, 1.0);
        let s = uniform_vec(&mut rng, 2, 1.0);
        let w = compose_weight(&u, &s, &v).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        let d = if a == b { s[a] } else { 0.0 };
                        acc += u[[i, a]] * d * v[[j, b]];
                    }
                }
                assert!((w[[i, j]] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn compose_zero_sigma_drops_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = uniform(&mut rng, 5, 3, 1.0);
        let v = uniform(&mut rng, 4, 3, 1.0);
        let w = compose_weight(&u, &arr1(&[0.7, 0.0, -1.2]), &v).unwrap();
        let keep = [0, 2];
        let w2 = compose_weight(&u.select(Axis(1), &keep), &arr1(&[0.7, -1.2]), &v.select(Axis(1), &keep)).unwrap();
        assert_eq!(w, w2);
    }

    #[test]
    fn compose_rejects_mismatch() {
        let u = Array2::<f64>::zeros((3, 2));
        assert!(compose_weight(&u, &arr1(&[1.0]), &u).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let (lr, feh) = init_params(5, &NetConfig::new(2, 8, 3)).unwrap();
        let mut meta = MetaParams { lr, feh };
        let flat = flatten(&meta);
        assert_eq!(flat.len(), num_params(&meta));
        let doubled: Vec<f64> = flat.iter().map(|x| 2.0 * x).collect();
        assert_ne!(flatten(&meta), doubled);
        assign_flat(&mut meta, &doubled).unwrap();
        assert_eq!(flatten(&meta), doubled);
        assert!(assign_flat(&mut meta, &doubled[1..]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::new(2, 8, 9).validate().is_err());
        assert!(NetConfig::new(0, 8, 2).validate().is_err());
        assert!(NetConfig::new(2, 8, 2).with_input_dim(5).validate().is_err());
        let cfg = NetConfig::new(2, 8, 2).with_input_dim(4).with_domain(((0.0, 2.0), (0.0, 1.0)));
        cfg.validate().unwrap();
        assert_eq!(cfg.normalization[3], (2.0, 0.5));
    }
}
