//! Accuracy of a predicted scattered wavefield against an FD reference.

use ndarray::Array2;

use super::HarnessError;
use crate::diffnet::Points;
use crate::fdsolver::WavefieldGrid;
use crate::gridmodel::{SourceSpec, VelocityModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReport {
    pub epoch: usize,
    /// Mean of the squared error over evaluation nodes and both channels.
    pub mse: f64,
    pub n_points: usize,
    pub freq: f64,
}

/// Reference nodes used for evaluation: every node of `reference` farther
/// than `source_cells` grid cells from the source. The reference covers the
/// physical domain only, so the PML never enters.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub freq: f64,
}

impl EvalGrid {
    pub fn new(
        model: &VelocityModel,
        source: SourceSpec,
        reference: &WavefieldGrid,
        source_cells: f64,
    ) -> Result<Self, HarnessError> {
        if !reference.matches(model) {
            return Err(HarnessError::Invariant("reference grid does not match the model geometry".into()));
        }
        let radius = source_cells * model.dx().max(model.dz());
        let mut g = EvalGrid { x: vec![], z: vec![], xs: vec![], zs: vec![], re: vec![], im: vec![], freq: reference.freq };
        for ix in 0..reference.nx {
            for iz in 0..reference.nz {
                let (x, z) = reference.position(ix, iz);
                if (x - source.xs).hypot(z - source.zs) <= radius {
                    continue;
                }
                let u = reference.at(ix, iz);
                g.x.push(x);
                g.z.push(z);
                g.xs.push(source.xs);
                g.zs.push(source.zs);
                g.re.push(u.re);
                g.im.push(u.im);
            }
        }
        if g.x.is_empty() {
            return Err(HarnessError::Invariant("no evaluation nodes outside the source disk".into()));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn points(&self) -> Points<'_> {
        Points { x: &self.x, z: &self.z, xs: &self.xs, zs: &self.zs }
    }

    /// MSE of `pred` (`n x 2`: real, imaginary) against the reference values.
    pub fn mse(&self, pred: &Array2<f64>) -> Result<f64, HarnessError> {
        if pred.dim() != (self.len(), 2) {
            return Err(HarnessError::Invariant(format!(
                "prediction shape {:?} for {} evaluation nodes",
                pred.dim(),
                self.len()
            )));
        }
        let sum: f64 = pred
            .outer_iter()
            .zip(self.re.iter().zip(&self.im))
            .map(|(p, (re, im))| (p[0] - re).powi(2) + (p[1] - im).powi(2))
            .sum();
        Ok(sum / (2 * self.len()) as f64)
    }

    pub fn report(&self, epoch: usize, pred: &Array2<f64>) -> Result<AccuracyReport, HarnessError> {
        Ok(AccuracyReport { epoch, mse: self.mse(pred)?, n_points: self.len(), freq: self.freq })
    }
}

/// Evaluates `predict` on every evaluation node of `reference`.
pub fn evaluate_accuracy(
    predict: impl Fn(&Points) -> Result<Array2<f64>, HarnessError>,
    model: &VelocityModel,
    source: SourceSpec,
    reference: &WavefieldGrid,
    source_cells: f64,
    epoch: usize,
) -> Result<AccuracyReport, HarnessError> {
    let grid = EvalGrid::new(model, source, reference, source_cells)?;
    let pred = predict(&grid.points())?;
    grid.report(epoch, &pred)
}
