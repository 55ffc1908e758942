//! Gridded 2-D velocity models, synthetic layered-model generation, collocation
//! sampling and the binary model / plain-text task-manifest formats.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::specfun::{self, SpecfunError};

/// Velocity range of generated training models, km/s.
pub const MIN_VELOCITY: f64 = 1.5;
pub const MAX_VELOCITY: f64 = 5.0;

/// Default source depth, km.
pub const DEFAULT_SOURCE_DEPTH: f64 = 0.025;

/// Default number of collocation points per batch.
pub const DEFAULT_POINTS: usize = 40_000;

/// Default grid spacing for generated models, km.
pub const DEFAULT_SPACING: f64 = 0.01;

const MODEL_MAGIC: &[u8; 4] = b"WVM1";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("parse error in field `{field}`: {reason}")]
    Parse { field: &'static str, reason: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("exclusion radius {radius} km covers the whole domain")]
    ExclusionCoversDomain { radius: f64 },
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ModelError + '_ {
    move |source| ModelError::Io { path: path.to_path_buf(), source }
}

/// Regular 2-D grid of velocities (km/s). Samples are stored row-major with
/// `z` fastest: `v[ix * nz + iz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    nx: usize,
    nz: usize,
    dx: f64,
    dz: f64,
    origin: (f64, f64),
    v: Vec<f32>,
    v0: f64,
}

impl VelocityModel {
    pub fn new(
        nx: usize,
        nz: usize,
        dx: f64,
        dz: f64,
        origin: (f64, f64),
        v: Vec<f32>,
        v0: f64,
    ) -> Result<Self, ModelError> {
        if nx < 3 || nz < 3 {
            return Err(ModelError::Invalid(format!("grid {nx}x{nz} smaller than 3x3")));
        }
        if !(dx > 0.0 && dz > 0.0 && dx.is_finite() && dz.is_finite()) {
            return Err(ModelError::Invalid(format!("non-positive spacing dx={dx} dz={dz}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(ModelError::Invalid("non-finite origin".into()));
        }
        if v.len() != nx * nz {
            return Err(ModelError::Invalid(format!(
                "velocity grid has {} samples, expected {}",
                v.len(),
                nx * nz
            )));
        }
        if let Some(bad) = v.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(ModelError::Invalid(format!("non-positive velocity {bad}")));
        }
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(ModelError::Invalid(format!("non-positive background velocity {v0}")));
        }
        Ok(Self { nx, nz, dx, dz, origin, v, v0 })
    }

    /// Constant-velocity model over `extent` (km) with the given spacing.
    pub fn constant(extent: (f64, f64), spacing: f64, velocity: f64) -> Result<Self, ModelError> {
        let (nx, nz) = grid_counts(extent, spacing)?;
        Self::new(nx, nz, spacing, spacing, (0.0, 0.0), vec![velocity as f32; nx * nz], velocity)
    }

    /// Builds a model by sampling `f(x, z)` at every node.
    pub fn from_fn(
        extent: (f64, f64),
        spacing: f64,
        v0: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, ModelError> {
        let (nx, nz) = grid_counts(extent, spacing)?;
        let mut v = Vec::with_capacity(nx * nz);
        for ix in 0..nx {
            for iz in 0..nz {
                v.push(f(ix as f64 * spacing, iz as f64 * spacing) as f32);
            }
        }
        Self::new(nx, nz, spacing, spacing, (0.0, 0.0), v, v0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dz(&self) -> f64 {
        self.dz
    }
    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }
    pub fn v0(&self) -> f64 {
        self.v0
    }
    pub fn velocities(&self) -> &[f32] {
        &self.v
    }

    pub fn with_v0(mut self, v0: f64) -> Result<Self, ModelError> {
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(ModelError::Invalid(format!("non-positive background velocity {v0}")));
        }
        self.v0 = v0;
        Ok(self)
    }

    /// Node velocity.
    pub fn at(&self, ix: usize, iz: usize) -> f64 {
        f64::from(self.v[ix * self.nz + iz])
    }

    pub fn node_position(&self, ix: usize, iz: usize) -> (f64, f64) {
        (self.origin.0 + ix as f64 * self.dx, self.origin.1 + iz as f64 * self.dz)
    }

    /// Physical extent `(Lx, Lz)` in km.
    pub fn extent(&self) -> (f64, f64) {
        ((self.nx - 1) as f64 * self.dx, (self.nz - 1) as f64 * self.dz)
    }

    /// Domain bounds `((xmin, xmax), (zmin, zmax))`.
    pub fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let (lx, lz) = self.extent();
        ((self.origin.0, self.origin.0 + lx), (self.origin.1, self.origin.1 + lz))
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        let ((x0, x1), (z0, z1)) = self.bounds();
        x >= x0 && x <= x1 && z >= z0 && z <= z1
    }

    pub fn min_velocity(&self) -> f64 {
        self.v.iter().fold(f64::INFINITY, |m, &s| m.min(f64::from(s)))
    }

    /// Bilinearly interpolated velocity; positions outside the grid clamp to
    /// the nearest edge.
    pub fn velocity_at(&self, x: f64, z: f64) -> f64 {
        let fx = ((x - self.origin.0) / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let fz = ((z - self.origin.1) / self.dz).clamp(0.0, (self.nz - 1) as f64);
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iz = (fz.floor() as usize).min(self.nz - 2);
        let tx = fx - ix as f64;
        let tz = fz - iz as f64;
        let v00 = self.at(ix, iz);
        let v10 = self.at(ix + 1, iz);
        let v01 = self.at(ix, iz + 1);
        let v11 = self.at(ix + 1, iz + 1);
        if v00 == v10 && v00 == v01 && v00 == v11 {
            return v00;
        }
        (1.0 - tx) * ((1.0 - tz) * v00 + tz * v01) + tx * ((1.0 - tz) * v10 + tz * v11)
    }

    /// Squared slowness `m = 1/v^2` at a position.
    pub fn slowness_sq_at(&self, x: f64, z: f64) -> f64 {
        let v = self.velocity_at(x, z);
        1.0 / (v * v)
    }

    pub fn background_slowness_sq(&self) -> f64 {
        1.0 / (self.v0 * self.v0)
    }

    /// `delta m = 1/v^2 - 1/v0^2` at a position.
    pub fn perturbation_at(&self, x: f64, z: f64) -> f64 {
        self.slowness_sq_at(x, z) - self.background_slowness_sq()
    }
}

fn grid_counts(extent: (f64, f64), spacing: f64) -> Result<(usize, usize), ModelError> {
    let (lx, lz) = extent;
    if !(lx > 0.0 && lz > 0.0 && spacing > 0.0 && lx.is_finite() && lz.is_finite()) {
        return Err(ModelError::Invalid(format!(
            "degenerate extent {lx}x{lz} km with spacing {spacing}"
        )));
    }
    let nx = (lx / spacing).round() as usize + 1;
    let nz = (lz / spacing).round() as usize + 1;
    if nx < 3 || nz < 3 {
        return Err(ModelError::Invalid(format!("extent {lx}x{lz} km too small for spacing {spacing}")));
    }
    Ok((nx, nz))
}

/// Source position in km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub xs: f64,
    pub zs: f64,
}

impl SourceSpec {
    pub fn new(xs: f64, zs: f64) -> Self {
        Self { xs, zs }
    }

    /// Source at depth [`DEFAULT_SOURCE_DEPTH`].
    pub fn at_surface(xs: f64) -> Self {
        Self { xs, zs: DEFAULT_SOURCE_DEPTH }
    }

    pub fn validate(&self, model: &VelocityModel) -> Result<(), ModelError> {
        if !model.contains(self.xs, self.zs) {
            return Err(ModelError::Invalid(format!(
                "source ({}, {}) outside the model domain",
                self.xs, self.zs
            )));
        }
        Ok(())
    }
}

/// Options for [`generate_layered_model_with`].
#[derive(Debug, Clone)]
pub struct LayeredModelSpec {
    pub extent: (f64, f64),
    pub n_layers: usize,
    pub spacing: f64,
    /// Fixed layer velocities (top to bottom) instead of random draws.
    pub velocities: Option<Vec<f64>>,
}

/// Horizontally layered model with `n_layers` (2..=8) layers whose velocities
/// are drawn uniformly from `[1.5, 5.0]` km/s and sorted to be non-decreasing
/// with depth. `v0` defaults to the top-layer velocity.
pub fn generate_layered_model(
    seed: u64,
    extent: (f64, f64),
    n_layers: usize,
) -> Result<VelocityModel, ModelError> {
    generate_layered_model_with(
        seed,
        &LayeredModelSpec { extent, n_layers, spacing: DEFAULT_SPACING, velocities: None },
    )
}

pub fn generate_layered_model_with(
    seed: u64,
    spec: &LayeredModelSpec,
) -> Result<VelocityModel, ModelError> {
    if !(2..=8).contains(&spec.n_layers) {
        return Err(ModelError::Invalid(format!("n_layers {} outside 2..=8", spec.n_layers)));
    }
    let (nx, nz) = grid_counts(spec.extent, spec.spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut speeds: Vec<f64> = match &spec.velocities {
        Some(v) if v.len() == spec.n_layers => v.clone(),
        Some(v) => {
            return Err(ModelError::Invalid(format!(
                "{} override velocities for {} layers",
                v.len(),
                spec.n_layers
            )))
        }
        None => (0..spec.n_layers)
            .map(|_| rng.random_range(MIN_VELOCITY..=MAX_VELOCITY))
            .collect(),
    };
    speeds.sort_by(f64::total_cmp);
    // Interfaces sit below the top tenth of the model so the source layer is
    // never thinner than that.
    let lz = spec.extent.1;
    let mut interfaces: Vec<f64> = (1..spec.n_layers)
        .map(|_| rng.random_range(0.1 * lz..0.95 * lz))
        .collect();
    interfaces.sort_by(f64::total_cmp);
    let mut v = Vec::with_capacity(nx * nz);
    for _ in 0..nx {
        for iz in 0..nz {
            let z = iz as f64 * spec.spacing;
            let layer = interfaces.iter().take_while(|&&d| z >= d).count();
            v.push(speeds[layer] as f32);
        }
    }
    let v0 = f64::from(speeds[0] as f32);
    VelocityModel::new(nx, nz, spec.spacing, spec.spacing, (0.0, 0.0), v, v0)
}

/// Collocation points for one task at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    pub freq: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
    /// Squared slowness, s^2/km^2.
    pub m: Vec<f64>,
    pub dm: Vec<f64>,
    pub u0_re: Vec<f64>,
    pub u0_im: Vec<f64>,
}

impl CollocationBatch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.freq
    }

    /// Builds a batch at explicit points, evaluating the model and the
    /// background field at each one.
    pub fn at_points(
        model: &VelocityModel,
        source: SourceSpec,
        freq: f64,
        points: &[(f64, f64)],
    ) -> Result<Self, ModelError> {
        if !(freq > 0.0 && freq.is_finite()) {
            return Err(ModelError::Invalid(format!("non-positive frequency {freq}")));
        }
        let omega = 2.0 * std::f64::consts::PI * freq;
        let n = points.len();
        let mut batch = Self {
            freq,
            x: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            xs: vec![source.xs; n],
            zs: vec![source.zs; n],
            m: Vec::with_capacity(n),
            dm: Vec::with_capacity(n),
            u0_re: Vec::with_capacity(n),
            u0_im: Vec::with_capacity(n),
        };
        let m0 = model.background_slowness_sq();
        for &(x, z) in points {
            let m = model.slowness_sq_at(x, z);
            let u0 = specfun::background_wavefield((x, z), (source.xs, source.zs), omega, model.v0())?;
            batch.x.push(x);
            batch.z.push(z);
            batch.m.push(m);
            batch.dm.push(m - m0);
            batch.u0_re.push(u0.re);
            batch.u0_im.push(u0.im);
        }
        Ok(batch)
    }

    /// Sub-batch with the given point indices.
    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect();
        Self {
            freq: self.freq,
            x: pick(&self.x),
            z: pick(&self.z),
            xs: pick(&self.xs),
            zs: pick(&self.zs),
            m: pick(&self.m),
            dm: pick(&self.dm),
            u0_re: pick(&self.u0_re),
            u0_im: pick(&self.u0_im),
        }
    }
}

/// Uniform collocation points over the model domain minus a disk of
/// `exclusion_radius` km around the source. Velocities are bilinearly
/// interpolated; the background field uses the model's `v0`.
pub fn sample_collocation(
    model: &VelocityModel,
    source: SourceSpec,
    freq: f64,
    n: usize,
    seed: u64,
    exclusion_radius: f64,
) -> Result<CollocationBatch, ModelError> {
    if n == 0 {
        return Err(ModelError::Invalid("collocation batch needs at least one point".into()));
    }
    if !(exclusion_radius >= 0.0 && exclusion_radius.is_finite()) {
        return Err(ModelError::Invalid(format!("bad exclusion radius {exclusion_radius}")));
    }
    source.validate(model)?;
    let ((x0, x1), (z0, z1)) = model.bounds();
    let covered = [(x0, z0), (x0, z1), (x1, z0), (x1, z1)]
        .iter()
        .all(|&(x, z)| (x - source.xs).hypot(z - source.zs) <= exclusion_radius);
    if covered {
        return Err(ModelError::ExclusionCoversDomain { radius: exclusion_radius });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let max_draws = 1000 * n.max(1000);
    let mut draws = 0usize;
    while points.len() < n {
        draws += 1;
        if draws > max_draws {
            return Err(ModelError::ExclusionCoversDomain { radius: exclusion_radius });
        }
        let x = rng.random_range(x0..=x1);
        let z = rng.random_range(z0..=z1);
        let r = (x - source.xs).hypot(z - source.zs);
        if r > 0.0 && r >= exclusion_radius {
            points.push((x, z));
        }
    }
    CollocationBatch::at_points(model, source, freq, &points)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Little-endian cursor over a byte buffer that names the field it fails on.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::Parse { field, reason: "truncated file".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, field: &'static str) -> Result<u8, ModelError> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u16(&mut self, field: &'static str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, field: &'static str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, field: &'static str) -> Result<f32, ModelError> {
        Ok(f32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, field: &'static str) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn encode_model(model: &VelocityModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + 4 * model.v.len());
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, model.nx as u32);
    put_u32(&mut out, model.nz as u32);
    put_f64(&mut out, model.dx);
    put_f64(&mut out, model.dz);
    put_f64(&mut out, model.origin.0);
    put_f64(&mut out, model.origin.1);
    put_f64(&mut out, model.v0);
    for &s in &model.v {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<VelocityModel, ModelError> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(ModelError::Parse { field: "magic", reason: "expected WVM1".into() });
    }
    let nx = r.u32("nx")? as usize;
    let nz = r.u32("nz")? as usize;
    if nx < 3 || nz < 3 {
        return Err(ModelError::Parse { field: "nx/nz", reason: format!("grid {nx}x{nz} below 3x3") });
    }
    let dx = r.f64("dx")?;
    let dz = r.f64("dz")?;
    if !(dx > 0.0 && dz > 0.0) {
        return Err(ModelError::Parse { field: "dx/dz", reason: "non-positive spacing".into() });
    }
    let x0 = r.f64("x0")?;
    let z0 = r.f64("z0")?;
    let v0 = r.f64("v0")?;
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(ModelError::Parse { field: "v0", reason: format!("non-positive value {v0}") });
    }
    let count = nx.checked_mul(nz).ok_or(ModelError::Parse {
        field: "nx/nz",
        reason: "grid size overflows".into(),
    })?;
    if r.remaining() != 4 * count {
        return Err(ModelError::Parse {
            field: "velocities",
            reason: format!("expected {} bytes, found {}", 4 * count, r.remaining()),
        });
    }
    let mut v = Vec::with_capacity(count);
    for _ in 0..count {
        let s = r.f32("velocities")?;
        if !(s > 0.0 && s.is_finite()) {
            return Err(ModelError::Parse {
                field: "velocities",
                reason: format!("non-positive velocity {s}"),
            });
        }
        v.push(s);
    }
    VelocityModel::new(nx, nz, dx, dz, (x0, z0), v, v0)
}

pub fn save_model(model: &VelocityModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(io_err(path))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VelocityModel, ModelError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode_model(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskRole {
    Support,
    Query,
}

/// One manifest line: a model file, a source and a frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub model: PathBuf,
    pub source: SourceSpec,
    pub freq: f64,
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "model={} xs={} zs={} freq={}",
            self.model.display(),
            self.source.xs,
            self.source.zs,
            self.freq
        )
    }
}

/// A loaded task: model plus source and frequency.
#[derive(Debug, Clone)]
pub struct Task {
    pub model: Arc<VelocityModel>,
    pub source: SourceSpec,
    pub freq: f64,
}

impl Task {
    pub fn new(model: Arc<VelocityModel>, source: SourceSpec, freq: f64) -> Result<Self, ModelError> {
        if !(freq > 0.0 && freq.is_finite()) {
            return Err(ModelError::Invalid(format!("non-positive frequency {freq}")));
        }
        source.validate(&model)?;
        Ok(Self { model, source, freq })
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<TaskSpec>, ModelError> {
    let mut tasks = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (mut model, mut xs, mut zs, mut freq) = (None, None, None, None);
        for tok in line.split_whitespace() {
            let (key, value) = tok.split_once('=').ok_or_else(|| ModelError::Parse {
                field: "manifest",
                reason: format!("token `{tok}` is not key=value"),
            })?;
            let num = |field: &'static str| {
                value.parse::<f64>().map_err(|e| ModelError::Parse { field, reason: e.to_string() })
            };
            match key {
                "model" => model = Some(PathBuf::from(value)),
                "xs" => xs = Some(num("xs")?),
                "zs" => zs = Some(num("zs")?),
                "freq" => freq = Some(num("freq")?),
                _ => {
                    return Err(ModelError::Parse {
                        field: "manifest",
                        reason: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        let missing = |field| ModelError::Parse { field, reason: "missing".into() };
        tasks.push(TaskSpec {
            model: model.ok_or_else(|| missing("model"))?,
            source: SourceSpec::new(xs.ok_or_else(|| missing("xs"))?, zs.ok_or_else(|| missing("zs"))?),
            freq: freq.ok_or_else(|| missing("freq"))?,
        });
    }
    Ok(tasks)
}

pub fn write_manifest(tasks: &[TaskSpec], mut out: impl Write) -> io::Result<()> {
    for t in tasks {
        writeln!(out, "{t}")?;
    }
    Ok(())
}

/// Loads every task in a manifest. Relative model paths resolve against
/// `base_dir`; each model file is read once.
pub fn load_tasks(manifest: &[TaskSpec], base_dir: &Path) -> Result<Vec<Task>, ModelError> {
    let mut cache: Vec<(PathBuf, Arc<VelocityModel>)> = Vec::new();
    let mut tasks = Vec::with_capacity(manifest.len());
    for spec in manifest {
        let path = if spec.model.is_absolute() { spec.model.clone() } else { base_dir.join(&spec.model) };
        let model = match cache.iter().find(|(p, _)| *p == path) {
            Some((_, m)) => Arc::clone(m),
            None => {
                let m = Arc::new(load_model(&path)?);
                cache.push((path, Arc::clone(&m)));
                m
            }
        };
        tasks.push(Task::new(model, spec.source, spec.freq)?);
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VelocityModel {
        VelocityModel::new(3, 3, 0.1, 0.2, (0.5, -0.1), vec![1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 1.75], 2.0)
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode_model(&small());
        for cut in [0, 3, 10, 47, bytes.len() - 1] {
            assert!(decode_model(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn zero_velocity_rejected() {
        let mut bytes = encode_model(&small());
        let at = 48 + 4 * 4;
        bytes[at..at + 4].copy_from_slice(&0f32.to_le_bytes());
        match decode_model(&bytes) {
            Err(ModelError::Parse { field, .. }) => assert_eq!(field, "velocities"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_shape_name_the_field() {
        let mut bytes = encode_model(&small());
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(ModelError::Parse { field: "magic", .. })));
        let mut bytes = encode_model(&small());
        bytes[4..8].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(decode_model(&bytes), Err(ModelError::Parse { field: "velocities", .. })));
    }

    #[test]
    fn layered_generation_is_deterministic() {
        let a = generate_layered_model(7, (1.0, 1.0), 4).unwrap();
        let b = generate_layered_model(7, (1.0, 1.0), 4).unwrap();
        assert_eq!(encode_model(&a), encode_model(&b));
        let c = generate_layered_model(8, (1.0, 1.0), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn layered_velocities_in_range_and_sorted() {
        for seed in 0..100 {
            let m = generate_layered_model(seed, (1.0, 0.5), 2 + (seed as usize % 7)).unwrap();
            for ix in 0..m.nx() {
                let mut prev = 0.0;
                for iz in 0..m.nz() {
                    let v = m.at(ix, iz);
                    assert!((MIN_VELOCITY as f32 as f64..=MAX_VELOCITY).contains(&v));
                    assert!(v >= prev);
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn layered_generation_rejects_bad_input() {
        assert!(generate_layered_model(0, (0.0, 1.0), 3).is_err());
        assert!(generate_layered_model(0, (1.0, -1.0), 3).is_err());
        assert!(generate_layered_model(0, (1.0, 1.0), 1).is_err());
        assert!(generate_layered_model(0, (1.0, 1.0), 9).is_err());
    }

    #[test]
    fn constant_override_gives_zero_perturbation() {
        let spec = LayeredModelSpec {
            extent: (1.0, 1.0),
            n_layers: 3,
            spacing: 0.05,
            velocities: Some(vec![2.5; 3]),
        };
        let m = generate_layered_model_with(3, &spec).unwrap();
        let batch = sample_collocation(&m, SourceSpec::at_surface(0.5), 3.0, 500, 1, 0.05).unwrap();
        assert!(batch.dm.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn constant_model_interpolates_exactly() {
        let m = VelocityModel::constant((1.0, 1.0), 0.1, 2.7).unwrap();
        let c = f64::from(2.7f32);
        for &(x, z) in &[(0.0, 0.0), (0.33, 0.71), (0.999, 0.5), (1.0, 1.0)] {
            assert_eq!(m.velocity_at(x, z), c);
        }
    }

    #[test]
    fn bilinear_interpolation_on_linear_field() {
        let m = VelocityModel::from_fn((1.0, 1.0), 0.1, 2.0, |x, z| 2.0 + x + 0.5 * z).unwrap();
        let v = m.velocity_at(0.37, 0.61);
        assert!((v - (2.0 + 0.37 + 0.305)).abs() < 1e-6);
    }

    #[test]
    fn exclusion_covering_domain_is_an_error() {
        let m = VelocityModel::constant((1.0, 1.0), 0.1, 2.0).unwrap();
        let err = sample_collocation(&m, SourceSpec::new(0.5, 0.5), 3.0, 10, 0, 0.8).unwrap_err();
        assert!(matches!(err, ModelError::ExclusionCoversDomain { .. }));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let text = "model=a.wvm xs=0.5 zs=0.025 freq=3\n# comment\n\nmodel=/abs/b.wvm xs=0.25 zs=0.025 freq=4.5\n";
        let tasks = parse_manifest(text).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[1].freq, 4.5);
        let mut out = Vec::new();
        write_manifest(&tasks, &mut out).unwrap();
        assert_eq!(parse_manifest(std::str::from_utf8(&out).unwrap()).unwrap(), tasks);
        assert!(parse_manifest("model=a xs=1 zs=0").is_err());
        assert!(parse_manifest("model=a xs=1 zs=0 freq=x").is_err());
        assert!(parse_manifest("model=a xs=1 zs=0 freq=2 extra=1").is_err());
    }
}
