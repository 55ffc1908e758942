use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{Array1, Array2};

use super::params::{FehParams, SigmaSource, SingularValues};
use super::scalar::Real;
use super::DiffnetError;

/// Exact GELU, `x Phi(x)`.
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub fn gelu_derivative<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = (-(half * x * x)).exp() * T::from_f64(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

/// Intermediate trunk values kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct FehTape<T> {
    input: T,
    pre: [Array1<T>; 3],
    post: [Array1<T>; 3],
}

fn outer<T: Real>(a: &Array1<T>, b: &Array1<T>) -> Array2<T> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Hypernetwork forward pass, returning the per-layer singular values.
pub fn feh_tape<T: Real>(feh: &FehParams<T>, freq: f64) -> Result<(SingularValues<T>, FehTape<T>), DiffnetError> {
    if !(freq.is_finite() && freq > 0.0) {
        return Err(DiffnetError::Frequency { freq });
    }
    feh.check()?;
    let input = T::from_f64(freq * feh.freq_scale);
    let h0 = feh.trunk_w[0].column(0).mapv(|w| w * input) + &feh.trunk_b[0];
    let t0 = h0.mapv(Real::sin);
    let h1 = feh.trunk_w[1].dot(&t0) + &feh.trunk_b[1];
    let t1 = h1.mapv(Real::sin);
    let h2 = feh.trunk_w[2].dot(&t1) + &feh.trunk_b[2];
    let t2 = h2.mapv(gelu);
    let sigma: Vec<Array1<T>> = feh.head_w.iter().zip(&feh.head_b).map(|(w, b)| w.dot(&t2) + b).collect();
    if !sigma.iter().all(|s| s.iter().all(|v| v.is_finite())) {
        return Err(DiffnetError::NonFinite { layer: "feh".into() });
    }
    let tape = FehTape { input, pre: [h0, h1, h2], post: [t0, t1, t2] };
    Ok((SingularValues { sigma, source: SigmaSource::FehPredicted }, tape))
}

pub fn feh_forward<T: Real>(feh: &FehParams<T>, freq: f64) -> Result<SingularValues<T>, DiffnetError> {
    Ok(feh_tape(feh, freq)?.0)
}

/// Pulls `dL/dsigma` back onto the hypernetwork parameters.
pub fn feh_backward<T: Real>(
    feh: &FehParams<T>,
    tape: &FehTape<T>,
    dsigma: &[Array1<T>],
) -> Result<FehParams<T>, DiffnetError> {
    if dsigma.len() != feh.head_w.len() {
        return Err(DiffnetError::Shape { what: "feh sigma adjoints".into(), expected: feh.head_w.len(), found: dsigma.len() });
    }
    let [h0, h1, h2] = &tape.pre;
    let [t0, t1, t2] = &tape.post;
    let mut dt2 = Array1::zeros(t2.len());
    let mut head_w = Vec::with_capacity(dsigma.len());
    for (w, ds) in feh.head_w.iter().zip(dsigma) {
        if ds.len() != w.nrows() {
            return Err(DiffnetError::Shape { what: "feh head adjoint".into(), expected: w.nrows(), found: ds.len() });
        }
        dt2 = dt2 + w.t().dot(ds);
        head_w.push(outer(ds, t2));
    }
    let dh2 = &dt2 * &h2.mapv(gelu_derivative);
    let dt1 = feh.trunk_w[2].t().dot(&dh2);
    let dh1 = &dt1 * &h1.mapv(Real::cos);
    let dt0 = feh.trunk_w[1].t().dot(&dh1);
    let dh0 = &dt0 * &h0.mapv(Real::cos);
    let input = tape.input;
    let w0 = Array2::from_shape_fn((dh0.len(), 1), |(i, _)| dh0[i] * input);
    Ok(FehParams {
        trunk_w: vec![w0, outer(&dh1, t0), outer(&dh2, t1)],
        trunk_b: vec![dh0, dh1, dh2],
        head_w,
        head_b: dsigma.to_vec(),
        freq_scale: feh.freq_scale,
    })
}
