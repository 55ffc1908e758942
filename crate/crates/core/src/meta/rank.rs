//! Rank reduction of the predicted singular values.

use ndarray::{Array1, Array2, Axis};

use super::MetaError;
use crate::diffnet::{FehParams, LrPinnParams};

/// Keeps the fraction `retention` of the singular values in each layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReductionSpec {
    retention: f64,
}

impl RankReductionSpec {
    pub fn new(retention: f64) -> Result<Self, MetaError> {
        if !(retention > 0.0 && retention <= 1.0) {
            return Err(MetaError::Config(format!("rank retention {retention} outside (0, 1]")));
        }
        Ok(Self { retention })
    }

    pub fn retention(&self) -> f64 {
        self.retention
    }

    /// `floor(retention * rank)`. The small slack absorbs products such as
    /// `0.29 * 100` that land just under an integer.
    pub fn kept(&self, rank: usize) -> Result<usize, MetaError> {
        let kept = (self.retention * rank as f64 + 1e-9).floor() as usize;
        if kept == 0 {
            return Err(MetaError::Config(format!(
                "retention {} keeps no singular values of rank {rank}",
                self.retention
            )));
        }
        Ok(kept.min(rank))
    }
}

/// Indices of the `keep` largest `|sigma|`, ties broken towards the lower index,
/// returned in increasing order.
pub fn retained_indices(sigma: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].abs().total_cmp(&sigma[a].abs()).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}

/// Magnitude threshold equivalent to `retained_indices`: the smallest kept `|sigma|`.
pub fn retained_threshold(sigma: &[f64], keep: usize) -> Option<f64> {
    retained_indices(sigma, keep).into_iter().map(|i| sigma[i].abs()).reduce(f64::min)
}

/// Per-layer retained indices for the given singular values.
pub fn layer_indices(sigma: &[Array1<f64>], spec: RankReductionSpec) -> Result<Vec<Vec<usize>>, MetaError> {
    sigma
        .iter()
        .map(|s| {
            let s = s.to_vec();
            Ok(retained_indices(&s, spec.kept(s.len())?))
        })
        .collect()
}

fn columns(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(1), idx).as_standard_layout().into_owned()
}

/// Drops the U/V columns and singular values outside each layer's retained set.
pub fn reduce_lr(lr: &LrPinnParams, indices: &[Vec<usize>]) -> Result<LrPinnParams, MetaError> {
    if indices.len() != lr.u.len() {
        return Err(MetaError::Config(format!("{} index sets for {} layers", indices.len(), lr.u.len())));
    }
    let mut out = lr.clone();
    for (l, idx) in indices.iter().enumerate() {
        out.u[l] = columns(&lr.u[l], idx);
        out.v[l] = columns(&lr.v[l], idx);
    }
    Ok(out)
}

/// Drops the hypernetwork head rows outside each layer's retained set.
pub fn reduce_feh(feh: &FehParams, indices: &[Vec<usize>]) -> Result<FehParams, MetaError> {
    if indices.len() != feh.head_w.len() {
        return Err(MetaError::Config(format!("{} index sets for {} heads", indices.len(), feh.head_w.len())));
    }
    let mut out = feh.clone();
    for (l, idx) in indices.iter().enumerate() {
        out.head_w[l] = feh.head_w[l].select(Axis(0), idx).as_standard_layout().into_owned();
        out.head_b[l] = feh.head_b[l].select(Axis(0), idx);
    }
    Ok(out)
}

/// Reduced network and singular values for `spec`.
pub fn reduce_rank(
    lr: &LrPinnParams,
    sigma: &[Array1<f64>],
    spec: RankReductionSpec,
) -> Result<(LrPinnParams, Vec<Array1<f64>>), MetaError> {
    lr.check_sigma(sigma)?;
    let indices = layer_indices(sigma, spec)?;
    let reduced = reduce_lr(lr, &indices)?;
    let s = sigma.iter().zip(&indices).map(|(s, idx)| s.select(Axis(0), idx)).collect();
    Ok((reduced, s))
}
