//! Binary checkpoints, little-endian.
//!
//! Layout: `"MLRP"`, u16 version, u16 component, then the config block
//! (u32 layers, u32 width, u32 rank, u32 input_dim, f64 act_scale, and one
//! f64 `(scale, offset)` pair per input dimension), then named tensor records
//! (u8 name length, name, u32 rank, u32 dims, f64 data) in sorted name order
//! up to the end of the file.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::params::{FehParams, LrPinnParams, NetConfig, ParamTensors, SingularValues, VanillaParams};
use super::DiffnetError;
use crate::gridmodel::ByteReader;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MLRP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Component {
    /// LRPINN with learnable singular values.
    LrPinn = 1,
    Feh = 2,
    /// LRPINN together with the hypernetwork that feeds it.
    Both = 3,
    Vanilla = 4,
}

impl Component {
    fn from_u16(v: u16) -> Result<Self, DiffnetError> {
        Ok(match v {
            1 => Self::LrPinn,
            2 => Self::Feh,
            3 => Self::Both,
            4 => Self::Vanilla,
            _ => return Err(DiffnetError::Checkpoint(format!("unknown component {v}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub lr: Option<LrPinnParams>,
    pub sigma: Option<Vec<Array1<f64>>>,
    pub feh: Option<FehParams>,
    pub vanilla: Option<VanillaParams>,
}

type Record = (Vec<usize>, Vec<f64>);

impl Checkpoint {
    pub fn lrpinn(config: NetConfig, lr: LrPinnParams, sigma: Vec<Array1<f64>>) -> Self {
        Self { config, lr: Some(lr), sigma: Some(sigma), feh: None, vanilla: None }
    }

    pub fn meta(config: NetConfig, lr: LrPinnParams, feh: FehParams) -> Self {
        Self { config, lr: Some(lr), sigma: None, feh: Some(feh), vanilla: None }
    }

    pub fn vanilla(config: NetConfig, params: VanillaParams) -> Self {
        Self { config, lr: None, sigma: None, feh: None, vanilla: Some(params) }
    }

    pub fn component(&self) -> Result<Component, DiffnetError> {
        match (&self.lr, &self.sigma, &self.feh, &self.vanilla) {
            (Some(_), Some(_), None, None) => Ok(Component::LrPinn),
            (None, None, Some(_), None) => Ok(Component::Feh),
            (Some(_), None, Some(_), None) => Ok(Component::Both),
            (None, None, None, Some(_)) => Ok(Component::Vanilla),
            _ => Err(DiffnetError::Checkpoint("inconsistent set of components".into())),
        }
    }

    /// Rank recorded in the config block: the factor width of the network,
    /// or the head size of a stand-alone hypernetwork.
    fn stored_rank(&self) -> usize {
        if let Some(lr) = &self.lr {
            lr.u.first().map_or(0, |u| u.ncols())
        } else if let Some(feh) = &self.feh {
            feh.head_w.first().map_or(0, |w| w.nrows())
        } else {
            self.config.rank
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, DiffnetError> {
        let component = self.component()?;
        let cfg = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(component as u16).to_le_bytes());
        let header = [cfg.layers, cfg.width, self.stored_rank(), cfg.input_dim];
        for v in header {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&cfg.act_scale.to_le_bytes());
        if cfg.normalization.len() != cfg.input_dim {
            return Err(DiffnetError::Checkpoint("normalisation does not match input_dim".into()));
        }
        for &(scale, offset) in &cfg.normalization {
            out.extend_from_slice(&scale.to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
        }

        let sigma = self.sigma.clone().map(SingularValues::learnable);
        let freq_scale = self.feh.as_ref().map(|f| [f.freq_scale]);
        let mut records: BTreeMap<String, (Vec<usize>, &[f64])> = BTreeMap::new();
        let sets = [
            self.lr.as_ref().map(|p| p.tensors()),
            sigma.as_ref().map(|p| p.tensors()),
            self.feh.as_ref().map(|p| p.tensors()),
            self.vanilla.as_ref().map(|p| p.tensors()),
        ];
        for (name, shape, data) in sets.into_iter().flatten().flatten() {
            records.insert(name, (shape.to_vec(), data));
        }
        if let Some(fs) = &freq_scale {
            records.insert("feh.freq_scale".into(), (vec![1], fs));
        }
        for (name, (shape, data)) in &records {
            let len = u8::try_from(name.len())
                .map_err(|_| DiffnetError::Checkpoint(format!("tensor name too long: {name}")))?;
            out.push(len);
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in data.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DiffnetError> {
        let bad = |e: crate::gridmodel::ModelError| DiffnetError::Checkpoint(e.to_string());
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic").map_err(bad)? != CHECKPOINT_MAGIC {
            return Err(DiffnetError::Checkpoint("bad magic".into()));
        }
        let version = r.u16("version").map_err(bad)?;
        if version != CHECKPOINT_VERSION {
            return Err(DiffnetError::Checkpoint(format!("unsupported version {version}")));
        }
        let component = Component::from_u16(r.u16("component").map_err(bad)?)?;
        let layers = r.u32("layers").map_err(bad)? as usize;
        let width = r.u32("width").map_err(bad)? as usize;
        let rank = r.u32("rank").map_err(bad)? as usize;
        let input_dim = r.u32("input_dim").map_err(bad)? as usize;
        let act_scale = r.f64("act_scale").map_err(bad)?;
        if input_dim > 8 {
            return Err(DiffnetError::Checkpoint(format!("implausible input_dim {input_dim}")));
        }
        let mut normalization = Vec::with_capacity(input_dim);
        for _ in 0..input_dim {
            normalization.push((r.f64("norm scale").map_err(bad)?, r.f64("norm offset").map_err(bad)?));
        }
        let mut records: BTreeMap<String, Record> = BTreeMap::new();
        while !r.is_empty() {
            let len = r.u8("name length").map_err(bad)? as usize;
            let name = std::str::from_utf8(r.take(len, "name").map_err(bad)?)
                .map_err(|_| DiffnetError::Checkpoint("tensor name is not utf-8".into()))?
                .to_string();
            let ndim = r.u32("tensor rank").map_err(bad)? as usize;
            if ndim > 4 {
                return Err(DiffnetError::Checkpoint(format!("{name}: rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dim").map_err(bad)? as usize);
            }
            let count: usize = shape.iter().product();
            if count.saturating_mul(8) > r.remaining() {
                return Err(DiffnetError::Checkpoint(format!("{name}: truncated data")));
            }
            let data = (0..count).map(|_| r.f64("data")).collect::<Result<Vec<_>, _>>().map_err(bad)?;
            if records.insert(name.clone(), (shape, data)).is_some() {
                return Err(DiffnetError::Checkpoint(format!("duplicate tensor {name}")));
            }
        }

        let mut take = Records(records);
        let mut config = NetConfig { layers, width, rank, input_dim, act_scale, normalization, ..NetConfig::default() };
        let (mut lr, mut sigma, mut feh, mut vanilla) = (None, None, None, None);
        if matches!(component, Component::LrPinn | Component::Both) {
            lr = Some(LrPinnParams {
                w_in: take.mat("lr.w_in")?,
                b_in: take.vec("lr.b_in")?,
                u: (0..layers).map(|l| take.mat(&format!("lr.u.{l}"))).collect::<Result<_, _>>()?,
                v: (0..layers).map(|l| take.mat(&format!("lr.v.{l}"))).collect::<Result<_, _>>()?,
                w_out: take.mat("lr.w_out")?,
                b_out: take.vec("lr.b_out")?,
            });
        }
        if component == Component::LrPinn {
            sigma = Some((0..layers).map(|l| take.vec(&format!("lr.sigma.{l}"))).collect::<Result<_, _>>()?);
        }
        if matches!(component, Component::Feh | Component::Both) {
            let f = FehParams {
                trunk_w: (0..3).map(|i| take.mat(&format!("feh.trunk_w.{i}"))).collect::<Result<_, _>>()?,
                trunk_b: (0..3).map(|i| take.vec(&format!("feh.trunk_b.{i}"))).collect::<Result<_, _>>()?,
                head_w: (0..layers).map(|l| take.mat(&format!("feh.head_w.{l}"))).collect::<Result<_, _>>()?,
                head_b: (0..layers).map(|l| take.vec(&format!("feh.head_b.{l}"))).collect::<Result<_, _>>()?,
                freq_scale: take.vec("feh.freq_scale")?[0],
            };
            f.check()?;
            config.feh_width = f.trunk_w[0].nrows();
            config.freq_scale = f.freq_scale;
            feh = Some(f);
        }
        if component == Component::Vanilla {
            vanilla = Some(VanillaParams {
                w_in: take.mat("vanilla.w_in")?,
                b_in: take.vec("vanilla.b_in")?,
                w_h: (0..layers).map(|l| take.mat(&format!("vanilla.w_h.{l}"))).collect::<Result<_, _>>()?,
                b_h: (0..layers).map(|l| take.vec(&format!("vanilla.b_h.{l}"))).collect::<Result<_, _>>()?,
                w_out: take.mat("vanilla.w_out")?,
                b_out: take.vec("vanilla.b_out")?,
            });
        }
        if let Some(name) = take.0.keys().next() {
            return Err(DiffnetError::Checkpoint(format!("unexpected tensor {name}")));
        }
        let ck = Self { config, lr, sigma, feh, vanilla };
        ck.check_consistency()?;
        Ok(ck)
    }

    fn check_consistency(&self) -> Result<(), DiffnetError> {
        let cfg = &self.config;
        if let Some(lr) = &self.lr {
            lr.check()?;
            if lr.width() != cfg.width || lr.input_dim() != cfg.input_dim || lr.ranks().iter().any(|&k| k != cfg.rank) {
                return Err(DiffnetError::Checkpoint("LRPINN tensors disagree with the config block".into()));
            }
            if let Some(s) = &self.sigma {
                lr.check_sigma(s)?;
            }
        }
        if let Some(feh) = &self.feh {
            if feh.layers() != cfg.layers {
                return Err(DiffnetError::Checkpoint("hypernetwork head count disagrees with layers".into()));
            }
        }
        if let Some(v) = &self.vanilla {
            v.check()?;
            if v.w_in.dim() != (cfg.width, cfg.input_dim) {
                return Err(DiffnetError::Checkpoint("vanilla tensors disagree with the config block".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiffnetError> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|source| DiffnetError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiffnetError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| DiffnetError::Io { path: path.to_path_buf(), source })?;
        Self::decode(&bytes)
    }
}

struct Records(BTreeMap<String, Record>);

impl Records {
    fn get(&mut self, name: &str, ndim: usize) -> Result<Record, DiffnetError> {
        let (shape, data) =
            self.0.remove(name).ok_or_else(|| DiffnetError::Checkpoint(format!("missing tensor {name}")))?;
        if shape.len() != ndim {
            return Err(DiffnetError::Checkpoint(format!("{name}: expected rank {ndim}, found {}", shape.len())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DiffnetError::Checkpoint(format!("{name}: non-finite entries")));
        }
        Ok((shape, data))
    }

    fn mat(&mut self, name: &str) -> Result<Array2<f64>, DiffnetError> {
        let (shape, data) = self.get(name, 2)?;
        Ok(Array2::from_shape_vec((shape[0], shape[1]), data).expect("length checked on read"))
    }

    fn vec(&mut self, name: &str) -> Result<Array1<f64>, DiffnetError> {
        let (_, data) = self.get(name, 1)?;
        Ok(Array1::from_vec(data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::params::{init_params, init_vanilla};
    use ndarray::arr1;

    fn cfg() -> NetConfig {
        NetConfig::new(2, 6, 3).with_domain(((0.0, 1.0), (0.0, 2.0)))
    }

    #[test]
    fn round_trips_every_component() {
        let c = cfg();
        let (lr, feh) = init_params(1, &c).unwrap();
        let sigma = vec![arr1(&[1.0, -2.0, 3.0]), arr1(&[0.5, 0.25, 0.125])];
        let mut fehonly = Checkpoint::meta(c.clone(), lr.clone(), feh.clone());
        fehonly.lr = None;
        for ck in [
            Checkpoint::meta(c.clone(), lr.clone(), feh.clone()),
            Checkpoint::lrpinn(c.clone(), lr.clone(), sigma),
            Checkpoint::vanilla(c.clone(), init_vanilla(2, &c).unwrap()),
            fehonly,
        ] {
            let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn records_are_sorted() {
        let c = cfg();
        let (lr, feh) = init_params(1, &c).unwrap();
        let bytes = Checkpoint::meta(c, lr, feh).encode().unwrap();
        let header = 4 + 2 + 2 + 16 + 8 + 3 * 16;
        let mut r = ByteReader::new(&bytes[header..]);
        let mut names = Vec::new();
        while !r.is_empty() {
            let len = r.u8("len").unwrap() as usize;
            names.push(String::from_utf8(r.take(len, "name").unwrap().to_vec()).unwrap());
            let ndim = r.u32("rank").unwrap() as usize;
            let count: usize = (0..ndim).map(|_| r.u32("dim").unwrap() as usize).product();
            r.take(8 * count, "data").unwrap();
        }
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert!(names.contains(&"feh.freq_scale".to_string()));
    }

    #[test]
    fn rejects_corruption() {
        let c = cfg();
        let (lr, feh) = init_params(1, &c).unwrap();
        let bytes = Checkpoint::meta(c, lr, feh).encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(Checkpoint::decode(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 3;
        assert!(Checkpoint::decode(&bad).is_err());
    }
}
