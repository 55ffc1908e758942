//! Finite-difference frequency-domain reference solver for the scattered
//! Helmholtz equation
//!
//! ```text
//! (omega^2 m + laplacian) du = -omega^2 dm u0
//! ```
//!
//! on a 5-point stencil. The model grid is padded on every side by a PML of
//! `thickness` cells (velocities extended from the edge), realised by
//! complex coordinate stretching `s = 1 + sigma(d) / (alpha(d) + i omega)`
//! with quadratic `sigma` grading. The stretched operator is written in the
//! symmetric form `d/dx (s_z/s_x d/dx) + d/dz (s_x/s_z d/dz) + omega^2 m s_x s_z`,
//! so the assembled matrix is complex symmetric.

pub mod sparse;

use std::f64::consts::PI;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::gridmodel::{ByteReader, ModelError, SourceSpec, VelocityModel};
use crate::specfun::{self, SpecfunError};
use sparse::{BandLu, CsrMatrix, SolverError};

const WAVEFIELD_MAGIC: &[u8; 4] = b"WFC1";

/// Residual bound asserted after every solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Minimum grid points per shortest wavelength before a warning is recorded.
pub const MIN_POINTS_PER_WAVELENGTH: f64 = 8.0;

#[derive(Debug, thiserror::Error)]
pub enum FdError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("linear solve failed: {source}")]
    Solver {
        #[from]
        source: SolverError,
    },
    #[error("solve residual {residual:e} exceeds {RESIDUAL_TOLERANCE:e}")]
    Residual { residual: f64 },
    #[error("scatterer at the source node makes the right-hand side singular")]
    SourceSingularity,
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Absorbing-layer parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlSpec {
    /// Cells per side.
    pub thickness: usize,
    /// Target theoretical normal-incidence reflection coefficient.
    pub r_coeff: f64,
    /// Peak frequency shift at the inner PML edge, as a fraction of omega.
    /// Decays linearly to zero at the outer edge.
    pub alpha_ratio: f64,
}

impl Default for PmlSpec {
    fn default() -> Self {
        Self { thickness: 20, r_coeff: 1e-6, alpha_ratio: 0.0 }
    }
}

impl PmlSpec {
    pub fn with_thickness(thickness: usize) -> Self {
        Self { thickness, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FdError> {
        if self.thickness < 8 {
            return Err(FdError::Invalid(format!("PML thickness {} < 8 cells", self.thickness)));
        }
        if !(self.r_coeff > 0.0 && self.r_coeff < 1.0) {
            return Err(FdError::Invalid(format!("PML reflection {} outside (0, 1)", self.r_coeff)));
        }
        if !(self.alpha_ratio >= 0.0 && self.alpha_ratio.is_finite()) {
            return Err(FdError::Invalid(format!("bad PML alpha ratio {}", self.alpha_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SolverKind {
    /// Banded LU with partial pivoting; unknowns ordered along the shorter
    /// grid axis so the half-bandwidth is `min(nx, nz)` of the padded grid.
    #[default]
    Direct,
    /// Jacobi-preconditioned BiCGStab.
    BiCgStab { tol: f64, max_iter: usize },
}

/// Padded computational grid and its unknown ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGrid {
    pub nx: usize,
    pub nz: usize,
    pub pad: usize,
    pub dx: f64,
    pub dz: f64,
    /// Physical position of padded node (0, 0).
    pub origin: (f64, f64),
    z_fastest: bool,
}

impl PaddedGrid {
    fn new(model: &VelocityModel, pad: usize) -> Self {
        let nx = model.nx() + 2 * pad;
        let nz = model.nz() + 2 * pad;
        let (x0, z0) = model.origin();
        Self {
            nx,
            nz,
            pad,
            dx: model.dx(),
            dz: model.dz(),
            origin: (x0 - pad as f64 * model.dx(), z0 - pad as f64 * model.dz()),
            z_fastest: nz <= nx,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iz: usize) -> usize {
        if self.z_fastest {
            ix * self.nz + iz
        } else {
            iz * self.nx + ix
        }
    }

    pub fn half_bandwidth(&self) -> usize {
        if self.z_fastest {
            self.nz
        } else {
            self.nx
        }
    }

    pub fn position(&self, ix: usize, iz: usize) -> (f64, f64) {
        (self.origin.0 + ix as f64 * self.dx, self.origin.1 + iz as f64 * self.dz)
    }

    /// True for nodes inside the absorbing layer.
    pub fn in_pml(&self, ix: usize, iz: usize) -> bool {
        ix < self.pad || iz < self.pad || ix >= self.nx - self.pad || iz >= self.nz - self.pad
    }

    /// Normalised depth into the PML (0 inside the model, 1 at the outer
    /// edge) for a fractional node coordinate along an axis of `n` nodes.
    fn pml_depth(&self, i: f64, n: usize) -> f64 {
        let p = self.pad as f64;
        let hi = (n - 1) as f64 - p;
        if i < p {
            (p - i) / p
        } else if i > hi {
            (i - hi) / p
        } else {
            0.0
        }
    }
}

/// Assembled Helmholtz operator on the padded grid.
#[derive(Debug, Clone)]
pub struct HelmholtzOperator {
    pub matrix: CsrMatrix,
    pub grid: PaddedGrid,
    /// `s_x s_z` per unknown; multiplies every right-hand side.
    pub rhs_scale: Vec<Complex64>,
    /// Squared slowness per padded node, ordered like the unknowns.
    pub slowness_sq: Vec<f64>,
    pub omega: f64,
    pub warnings: Vec<String>,
}

impl HelmholtzOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

fn padded_velocity(model: &VelocityModel, grid: &PaddedGrid, ix: usize, iz: usize) -> f64 {
    let mx = ix.saturating_sub(grid.pad).min(model.nx() - 1);
    let mz = iz.saturating_sub(grid.pad).min(model.nz() - 1);
    model.at(mx, mz)
}

/// Assembles `omega^2 m + laplacian` with PML stretching.
pub fn assemble_helmholtz(
    model: &VelocityModel,
    omega: f64,
    pml: &PmlSpec,
) -> Result<HelmholtzOperator, FdError> {
    let vmax = model.velocities().iter().fold(0.0f64, |m, &v| m.max(f64::from(v)));
    assemble_with_profile(model, omega, pml, vmax)
}

/// As [`assemble_helmholtz`], with the PML damping profile scaled for
/// velocity `vmax` instead of the model maximum.
fn assemble_with_profile(
    model: &VelocityModel,
    omega: f64,
    pml: &PmlSpec,
    vmax: f64,
) -> Result<HelmholtzOperator, FdError> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(FdError::Invalid(format!("non-positive angular frequency {omega}")));
    }
    pml.validate()?;
    let grid = PaddedGrid::new(model, pml.thickness);
    let mut warnings = Vec::new();
    let freq = omega / (2.0 * PI);
    let ppw = model.min_velocity() / (freq * model.dx().max(model.dz()));
    if ppw < MIN_POINTS_PER_WAVELENGTH {
        warnings.push(format!(
            "only {ppw:.2} points per minimum wavelength (< {MIN_POINTS_PER_WAVELENGTH})"
        ));
    }
    let sigma_max = |h: f64| 3.0 * vmax * (1.0 / pml.r_coeff).ln() / (2.0 * pml.thickness as f64 * h);
    let (sx_max, sz_max) = (sigma_max(grid.dx), sigma_max(grid.dz));
    let alpha_max = pml.alpha_ratio * omega;
    let stretch = |d: f64, smax: f64| -> Complex64 {
        if d <= 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        let sigma = smax * d * d;
        let alpha = alpha_max * (1.0 - d);
        Complex64::new(1.0, 0.0) + sigma / Complex64::new(alpha, omega)
    };
    let sx = |i: f64| stretch(grid.pml_depth(i, grid.nx), sx_max);
    let sz = |i: f64| stretch(grid.pml_depth(i, grid.nz), sz_max);

    let n = grid.len();
    let mut rows = vec![Vec::new(); n];
    let mut rhs_scale = vec![Complex64::new(0.0, 0.0); n];
    let mut slowness_sq = vec![0.0; n];
    let (idx2, idz2) = (1.0 / (grid.dx * grid.dx), 1.0 / (grid.dz * grid.dz));
    for ix in 0..grid.nx {
        for iz in 0..grid.nz {
            let row = grid.index(ix, iz);
            let (fx, fz) = (ix as f64, iz as f64);
            let (sxc, szc) = (sx(fx), sz(fz));
            let v = padded_velocity(model, &grid, ix, iz);
            let m = 1.0 / (v * v);
            let cxp = szc / sx(fx + 0.5) * idx2;
            let cxm = szc / sx(fx - 0.5) * idx2;
            let czp = sxc / sz(fz + 0.5) * idz2;
            let czm = sxc / sz(fz - 0.5) * idz2;
            let mut entries = Vec::with_capacity(5);
            entries.push((row, omega * omega * m * sxc * szc - (cxp + cxm + czp + czm)));
            if ix > 0 {
                entries.push((grid.index(ix - 1, iz), cxm));
            }
            if ix + 1 < grid.nx {
                entries.push((grid.index(ix + 1, iz), cxp));
            }
            if iz > 0 {
                entries.push((grid.index(ix, iz - 1), czm));
            }
            if iz + 1 < grid.nz {
                entries.push((grid.index(ix, iz + 1), czp));
            }
            rows[row] = entries;
            rhs_scale[row] = sxc * szc;
            slowness_sq[row] = m;
        }
    }
    Ok(HelmholtzOperator {
        matrix: CsrMatrix::from_rows(n, rows),
        grid,
        rhs_scale,
        slowness_sq,
        omega,
        warnings,
    })
}

/// Complex field on a model-shaped grid, row-major with `z` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct WavefieldGrid {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub origin: (f64, f64),
    pub freq: f64,
    pub values: Vec<Complex64>,
}

impl WavefieldGrid {
    pub fn zeros_like(model: &VelocityModel, freq: f64) -> Self {
        Self {
            nx: model.nx(),
            nz: model.nz(),
            dx: model.dx(),
            dz: model.dz(),
            origin: model.origin(),
            freq,
            values: vec![Complex64::new(0.0, 0.0); model.nx() * model.nz()],
        }
    }

    pub fn at(&self, ix: usize, iz: usize) -> Complex64 {
        self.values[ix * self.nz + iz]
    }

    pub fn position(&self, ix: usize, iz: usize) -> (f64, f64) {
        (self.origin.0 + ix as f64 * self.dx, self.origin.1 + iz as f64 * self.dz)
    }

    pub fn matches(&self, model: &VelocityModel) -> bool {
        self.nx == model.nx()
            && self.nz == model.nz()
            && self.dx == model.dx()
            && self.dz == model.dz()
            && self.origin == model.origin()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(52 + 8 * self.values.len());
        out.extend_from_slice(WAVEFIELD_MAGIC);
        out.extend_from_slice(&(self.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.nz as u32).to_le_bytes());
        for v in [self.dx, self.dz, self.origin.0, self.origin.1, self.freq] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.values {
            out.extend_from_slice(&(c.re as f32).to_le_bytes());
            out.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != WAVEFIELD_MAGIC {
            return Err(ModelError::Parse { field: "magic", reason: "expected WFC1".into() });
        }
        let nx = r.u32("nx")? as usize;
        let nz = r.u32("nz")? as usize;
        let dx = r.f64("dx")?;
        let dz = r.f64("dz")?;
        let x0 = r.f64("x0")?;
        let z0 = r.f64("z0")?;
        let freq = r.f64("freq_hz")?;
        if !(dx > 0.0 && dz > 0.0) {
            return Err(ModelError::Parse { field: "dx/dz", reason: "non-positive spacing".into() });
        }
        let count = nx * nz;
        if r.remaining() != 8 * count {
            return Err(ModelError::Parse {
                field: "values",
                reason: format!("expected {} bytes, found {}", 8 * count, r.remaining()),
            });
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let re = r.f32("values")?;
            let im = r.f32("values")?;
            if !(re.is_finite() && im.is_finite()) {
                return Err(ModelError::Parse { field: "values", reason: "non-finite sample".into() });
            }
            values.push(Complex64::new(f64::from(re), f64::from(im)));
        }
        debug_assert!(r.is_empty());
        Ok(Self { nx, nz, dx, dz, origin: (x0, z0), freq, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FdError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FdError> {
        Ok(Self::decode(&fs::read(path)?)?)
    }

    /// CSV with header `x,z,re,im`.
    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "x,z,re,im")?;
        for ix in 0..self.nx {
            for iz in 0..self.nz {
                let (x, z) = self.position(ix, iz);
                let v = self.at(ix, iz);
                writeln!(out, "{x},{z},{},{}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Solution on the full padded grid, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct PaddedSolution {
    pub grid: PaddedGrid,
    pub values: Vec<Complex64>,
    pub residual: f64,
    pub warnings: Vec<String>,
}

impl PaddedSolution {
    pub fn at(&self, ix: usize, iz: usize) -> Complex64 {
        self.values[self.grid.index(ix, iz)]
    }

    /// Drops the PML pad.
    pub fn crop(&self, model: &VelocityModel, freq: f64) -> WavefieldGrid {
        let mut out = WavefieldGrid::zeros_like(model, freq);
        let p = self.grid.pad;
        for ix in 0..model.nx() {
            for iz in 0..model.nz() {
                out.values[ix * model.nz() + iz] = self.at(ix + p, iz + p);
            }
        }
        out
    }
}

/// Solver configuration shared by every solve entry point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    pub pml: PmlSpec,
    pub solver: SolverKind,
}

impl SolveOptions {
    pub fn new(pml: PmlSpec) -> Self {
        Self { pml, solver: SolverKind::Direct }
    }
}

/// Solves `A x = rhs_scale * b` and checks the residual.
pub fn solve_system(op: &HelmholtzOperator, b: &[Complex64], solver: SolverKind) -> Result<PaddedSolution, FdError> {
    let rhs: Vec<Complex64> = b.iter().zip(&op.rhs_scale).map(|(v, s)| v * s).collect();
    let x = if rhs.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        vec![Complex64::new(0.0, 0.0); rhs.len()]
    } else {
        match solver {
            SolverKind::Direct => {
                let lu = BandLu::factor(&op.matrix, op.grid.half_bandwidth())?;
                let mut x = rhs.clone();
                lu.solve_in_place(&mut x)?;
                x
            }
            SolverKind::BiCgStab { tol, max_iter } => sparse::bicgstab(&op.matrix, &rhs, tol, max_iter)?,
        }
    };
    let residual = sparse::relative_residual(&op.matrix, &x, &rhs);
    if !(residual < RESIDUAL_TOLERANCE) || x.iter().any(|v| !v.is_finite()) {
        return Err(FdError::Residual { residual });
    }
    Ok(PaddedSolution { grid: op.grid.clone(), values: x, residual, warnings: op.warnings.clone() })
}

/// Right-hand side `-omega^2 dm u0` on the padded grid, times `amplitude`.
///
/// Inside the model `u0` is the analytic background field. Inside the PML the
/// analytic field does not solve the stretched equation, so scatterers there
/// take `u0` from `pml_background`, the discrete homogeneous solve on the same
/// padded grid; it is required only when some PML node has `dm != 0`.
pub fn scattered_rhs(
    model: &VelocityModel,
    op: &HelmholtzOperator,
    source: SourceSpec,
    amplitude: f64,
    pml_background: Option<&PaddedSolution>,
) -> Result<Vec<Complex64>, FdError> {
    let grid = &op.grid;
    let m0 = model.background_slowness_sq();
    let omega = op.omega;
    let mut b = vec![Complex64::new(0.0, 0.0); grid.len()];
    for ix in 0..grid.nx {
        for iz in 0..grid.nz {
            let k = grid.index(ix, iz);
            let dm = op.slowness_sq[k] - m0;
            if dm == 0.0 {
                continue;
            }
            let u0 = if grid.in_pml(ix, iz) {
                match pml_background {
                    Some(bg) if bg.grid == *grid => bg.values[k],
                    Some(_) => return Err(FdError::Invalid("PML background grid does not match the operator".into())),
                    None => return Err(FdError::Invalid("scatterers inside the PML need a discrete background".into())),
                }
            } else {
                let p = grid.position(ix, iz);
                match specfun::background_wavefield(p, (source.xs, source.zs), omega, model.v0()) {
                    Ok(u) => u,
                    Err(SpecfunError::Singularity) => return Err(FdError::SourceSingularity),
                    Err(e) => return Err(e.into()),
                }
            };
            b[k] = -omega * omega * dm * u0 * amplitude;
        }
    }
    Ok(b)
}

/// True when the padded medium differs from the background somewhere in the PML.
fn pml_has_scatterers(model: &VelocityModel, op: &HelmholtzOperator) -> bool {
    let m0 = model.background_slowness_sq();
    let g = &op.grid;
    (0..g.nx).any(|ix| (0..g.nz).any(|iz| g.in_pml(ix, iz) && op.slowness_sq[g.index(ix, iz)] != m0))
}

/// Homogeneous `v0` medium with the geometry of `model`.
fn background_model(model: &VelocityModel) -> Result<VelocityModel, FdError> {
    let v0 = model.v0();
    let n = model.nx() * model.nz();
    Ok(VelocityModel::new(model.nx(), model.nz(), model.dx(), model.dz(), model.origin(), vec![v0 as f32; n], v0)?)
}

pub fn solve_scattered_padded(
    model: &VelocityModel,
    source: SourceSpec,
    omega: f64,
    opts: &SolveOptions,
    amplitude: f64,
) -> Result<PaddedSolution, FdError> {
    source.validate(model)?;
    let op = assemble_helmholtz(model, omega, &opts.pml)?;
    let background = if pml_has_scatterers(model, &op) {
        // Same stretching as `op`, so the background solves the stretched
        // equation that `op` discretises.
        let vmax = model.velocities().iter().fold(0.0f64, |m, &v| m.max(f64::from(v)));
        let bg_op = assemble_with_profile(&background_model(model)?, omega, &opts.pml, vmax)?;
        Some(point_source_solve(&bg_op, source, opts.solver)?)
    } else {
        None
    };
    let b = scattered_rhs(model, &op, source, amplitude, background.as_ref())?;
    solve_system(&op, &b, opts.solver)
}

/// Scattered field `du` on the model grid.
pub fn solve_scattered(
    model: &VelocityModel,
    source: SourceSpec,
    omega: f64,
    pml: &PmlSpec,
) -> Result<WavefieldGrid, FdError> {
    let sol = solve_scattered_padded(model, source, omega, &SolveOptions::new(*pml), 1.0)?;
    Ok(sol.crop(model, omega / (2.0 * PI)))
}

/// Analytic background field on the model grid. A node that coincides with
/// the source takes the mean of `u0` over its cell instead.
pub fn background_grid(model: &VelocityModel, source: SourceSpec, omega: f64) -> Result<WavefieldGrid, FdError> {
    let mut out = WavefieldGrid::zeros_like(model, omega / (2.0 * PI));
    for ix in 0..model.nx() {
        for iz in 0..model.nz() {
            let p = model.node_position(ix, iz);
            out.values[ix * model.nz() + iz] = match specfun::background_wavefield(p, (source.xs, source.zs), omega, model.v0()) {
                Ok(u) => u,
                Err(SpecfunError::Singularity) => cell_mean_background(p, model.dx(), model.dz(), omega, model.v0())?,
                Err(e) => return Err(e.into()),
            };
        }
    }
    Ok(out)
}

fn cell_mean_background(center: (f64, f64), dx: f64, dz: f64, omega: f64, v0: f64) -> Result<Complex64, FdError> {
    const SUB: usize = 64;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..SUB {
        for j in 0..SUB {
            let x = (i as f64 + 0.5) / SUB as f64 - 0.5;
            let z = (j as f64 + 0.5) / SUB as f64 - 0.5;
            acc += specfun::background_wavefield((center.0 + x * dx, center.1 + z * dz), center, omega, v0)?;
        }
    }
    Ok(acc / (SUB * SUB) as f64)
}

/// Total field `u = u0 + du` on the model grid.
pub fn full_field(
    model: &VelocityModel,
    source: SourceSpec,
    omega: f64,
    pml: &PmlSpec,
) -> Result<WavefieldGrid, FdError> {
    let mut du = solve_scattered(model, source, omega, pml)?;
    let u0 = background_grid(model, source, omega)?;
    for (d, b) in du.values.iter_mut().zip(&u0.values) {
        *d += b;
    }
    Ok(du)
}

/// Direct full-field solve of `(omega^2 m + laplacian) u = delta(x - xs)`,
/// with the delta spread bilinearly over the four surrounding nodes and
/// scaled by `1/(dx dz)`.
pub fn solve_point_source(
    model: &VelocityModel,
    source: SourceSpec,
    omega: f64,
    opts: &SolveOptions,
) -> Result<PaddedSolution, FdError> {
    source.validate(model)?;
    let op = assemble_helmholtz(model, omega, &opts.pml)?;
    point_source_solve(&op, source, opts.solver)
}

fn point_source_solve(op: &HelmholtzOperator, source: SourceSpec, solver: SolverKind) -> Result<PaddedSolution, FdError> {
    let grid = &op.grid;
    let fx = (source.xs - grid.origin.0) / grid.dx;
    let fz = (source.zs - grid.origin.1) / grid.dz;
    let (ix, iz) = (fx.floor() as usize, fz.floor() as usize);
    let (tx, tz) = (fx - ix as f64, fz - iz as f64);
    let scale = 1.0 / (grid.dx * grid.dz);
    let mut b = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (ddx, wx) in [(0, 1.0 - tx), (1, tx)] {
        for (ddz, wz) in [(0, 1.0 - tz), (1, tz)] {
            let w = wx * wz;
            if w > 0.0 {
                b[grid.index(ix + ddx, iz + ddz)] += Complex64::new(w * scale, 0.0);
            }
        }
    }
    solve_system(op, &b, solver)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn interior_stencil_coefficients() {
        let model = VelocityModel::constant((0.5, 0.4), 0.05, 2.0).unwrap();
        let omega = 2.0 * PI * 3.0;
        let op = assemble_helmholtz(&model, omega, &PmlSpec::with_thickness(8)).unwrap();
        let g = &op.grid;
        let (ix, iz) = (g.nx / 2, g.nz / 2);
        let row = g.index(ix, iz);
        let m = 0.25;
        let center = op.matrix.get(row, row);
        let expect = omega * omega * m - 2.0 / (0.05 * 0.05) - 2.0 / (0.05 * 0.05);
        assert!((center - c(expect)).norm() < 1e-9 * expect.abs());
        assert!((op.matrix.get(row, g.index(ix + 1, iz)) - c(400.0)).norm() < 1e-9);
        assert!((op.matrix.get(row, g.index(ix, iz - 1)) - c(400.0)).norm() < 1e-9);
    }

    #[test]
    fn interior_rows_annihilate_constants_up_to_mass_term() {
        let model = VelocityModel::from_fn((0.6, 0.6), 0.05, 2.0, |x, z| 2.0 + x - z).unwrap();
        let omega = 9.0;
        let op = assemble_helmholtz(&model, omega, &PmlSpec::with_thickness(8)).unwrap();
        let ones = vec![c(3.0); op.dim()];
        let y = op.matrix.mul_vec(&ones);
        let g = &op.grid;
        for ix in 1..g.nx - 1 {
            for iz in 1..g.nz - 1 {
                if g.in_pml(ix, iz) || g.in_pml(ix - 1, iz) || g.in_pml(ix + 1, iz) || g.in_pml(ix, iz - 1) || g.in_pml(ix, iz + 1) {
                    continue;
                }
                let k = g.index(ix, iz);
                let want = omega * omega * op.slowness_sq[k] * 3.0;
                assert!((y[k] - c(want)).norm() < 1e-9 * want);
            }
        }
    }

    #[test]
    fn operator_is_symmetric() {
        let model = VelocityModel::from_fn((0.5, 0.7), 0.05, 2.0, |x, _| 1.5 + x).unwrap();
        let op = assemble_helmholtz(&model, 12.0, &PmlSpec::with_thickness(8)).unwrap();
        let a = &op.matrix;
        assert!(a.is_pattern_symmetric());
        for r in 0..a.dim() {
            for (cc, v) in a.row(r) {
                assert!((a.get(cc, r) - v).norm() <= 1e-12 * v.norm());
            }
        }
        assert!(a.bandwidth() <= op.grid.half_bandwidth());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = VelocityModel::constant((0.5, 0.5), 0.05, 2.0).unwrap();
        assert!(assemble_helmholtz(&model, 0.0, &PmlSpec::default()).is_err());
        assert!(assemble_helmholtz(&model, 1.0, &PmlSpec::with_thickness(4)).is_err());
        let bad = PmlSpec { r_coeff: 1.5, ..PmlSpec::default() };
        assert!(assemble_helmholtz(&model, 1.0, &bad).is_err());
    }

    #[test]
    fn coarse_grid_records_warning() {
        let model = VelocityModel::constant((1.0, 1.0), 0.1, 1.5).unwrap();
        let op = assemble_helmholtz(&model, 2.0 * PI * 5.0, &PmlSpec::with_thickness(8)).unwrap();
        assert_eq!(op.warnings.len(), 1);
    }

    #[test]
    fn homogeneous_model_has_zero_scattered_field() {
        let model = VelocityModel::constant((0.5, 0.5), 0.025, 2.0).unwrap();
        let du = solve_scattered(&model, SourceSpec::at_surface(0.25), 2.0 * PI * 3.0, &PmlSpec::with_thickness(10)).unwrap();
        assert!(du.values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn wavefield_file_round_trip_and_errors() {
        let model = VelocityModel::constant((0.1, 0.1), 0.05, 2.0).unwrap();
        let mut w = WavefieldGrid::zeros_like(&model, 3.5);
        for (i, v) in w.values.iter_mut().enumerate() {
            *v = Complex64::new(i as f64 * 0.25, -(i as f64));
        }
        let bytes = w.encode();
        assert_eq!(WavefieldGrid::decode(&bytes).unwrap(), w);
        assert!(WavefieldGrid::decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(WavefieldGrid::decode(&bad).is_err());
        let mut csv = Vec::new();
        w.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x,z,re,im\n"));
        assert_eq!(text.lines().count(), 1 + 9);
    }
}
