//! Versioned, bit-exact persistence of model config, parameters,
//! normalization statistics, and optimizer state.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "DDXC" | u32 version=1 | u64 manifest_len | manifest JSON
//! | u32 tensor_count
//! per tensor, sorted by name:
//!   u32 name_len | UTF-8 name | u8 rank | rank x u32 dims
//!   | [u8 width, only for `optim.`-prefixed names]
//!   | data (float32, or float64 when width = 8)
//! ```
//!
//! The manifest holds the model config, a string meta map, and an optimizer
//! descriptor. Parameters and running statistics are always stored as
//! float32; optimizer moments carry a width flag and are stored at their
//! native width. Writes go to a temp file and are renamed into place.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{BnSite, DdxConfig, Model};
use crate::optim::{AdamState, SgdState};
use crate::param::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DDXC";
const VERSION: u32 = 1;
const OPTIM_PREFIX: &str = "optim.";

/// Optimizer state as persisted alongside a model.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Adam(AdamState<f32>),
    Sgd(SgdState<f32>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    model: DdxConfig,
    meta: BTreeMap<String, String>,
    optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    algorithm: String,
    step: u64,
}

/// Everything read back from a checkpoint.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<OptimizerState>,
    pub norm: Option<NormStats>,
    pub meta: BTreeMap<String, String>,
}

/// Serializes the model (plus optional optimizer state, normalization
/// statistics, and meta entries) to `path` atomically. Two saves of the same
/// state produce byte-identical files.
pub fn save_checkpoint(
    model: &Model<f32>,
    optimizer: Option<&OptimizerState>,
    norm: Option<&NormStats>,
    meta: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    let mut add = |name: String, shape: &[usize], data: &[f32]| -> Result<()> {
        if tensors.insert(name.clone(), (shape.to_vec(), data.to_vec())).is_some() {
            return Err(Error::Internal(format!("checkpoint tensor name collision: `{name}`")));
        }
        Ok(())
    };

    for p in model.params().iter() {
        add(p.name.clone(), p.value.shape(), p.value.data())?;
    }
    for site in model.running() {
        add(format!("{}.running_mean", site.name), &[site.mean.len()], &site.mean)?;
        add(format!("{}.running_var", site.name), &[site.var.len()], &site.var)?;
    }
    if let Some(stats) = norm {
        add("norm.mean".into(), &[stats.mean.len()], &stats.mean)?;
        add("norm.std".into(), &[stats.std.len()], &stats.std)?;
    }
    let optimizer_meta = match optimizer {
        None => None,
        Some(OptimizerState::Adam(state)) => {
            for (p, (m, v)) in model.params().iter().zip(state.m.iter().zip(&state.v)) {
                add(format!("optim.adam.m.{}", p.name), m.shape(), m.data())?;
                add(format!("optim.adam.v.{}", p.name), v.shape(), v.data())?;
            }
            Some(OptimizerMeta { algorithm: "adam".into(), step: state.step })
        }
        Some(OptimizerState::Sgd(state)) => {
            for (p, v) in model.params().iter().zip(&state.velocity) {
                add(format!("optim.sgd.v.{}", p.name), v.shape(), v.data())?;
            }
            Some(OptimizerMeta { algorithm: "sgd".into(), step: 0 })
        }
    };

    let manifest = Manifest {
        model: model.config().clone(),
        meta: meta.clone(),
        optimizer: optimizer_meta,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;

    let tmp = path.with_extension("ddxc.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(&tmp, e);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(manifest_bytes.len() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&manifest_bytes).map_err(io_err)?;
        w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
        for (name, (shape, data)) in &tensors {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(name_bytes).map_err(io_err)?;
            w.write_all(&[shape.len() as u8]).map_err(io_err)?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
            }
            if name.starts_with(OPTIM_PREFIX) {
                w.write_all(&[4u8]).map_err(io_err)?;
            }
            for &v in data {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads and validates a checkpoint: magic and version first, then the
/// manifest, then every tensor shape against the config-derived layout.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { inner: BufReader::new(file), path };

    let magic = r.bytes_array::<4>()?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:02x?}, expected \"DDXC\"",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let manifest_len = r.u64()? as usize;
    let manifest_bytes = r.bytes_vec(manifest_len)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Format(format!("{}: manifest: {e}", path.display())))?;
    manifest.model.validate()?;

    // Expected shapes derived from the config.
    let mut expected: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for spec in manifest.model.parameter_specs() {
        if let Some(ref om) = manifest.optimizer {
            match om.algorithm.as_str() {
                "adam" => {
                    expected.insert(format!("optim.adam.m.{}", spec.name), spec.shape.clone());
                    expected.insert(format!("optim.adam.v.{}", spec.name), spec.shape.clone());
                }
                "sgd" => {
                    expected.insert(format!("optim.sgd.v.{}", spec.name), spec.shape.clone());
                }
                other => {
                    return Err(Error::Format(format!(
                        "{}: unknown optimizer algorithm `{other}`",
                        path.display()
                    )))
                }
            }
        }
        expected.insert(spec.name.clone(), spec.shape);
    }
    for (site, c) in manifest.model.norm_sites() {
        expected.insert(format!("{site}.running_mean"), vec![c]);
        expected.insert(format!("{site}.running_var"), vec![c]);
    }
    expected.insert("norm.mean".into(), vec![manifest.model.in_channels]);
    expected.insert("norm.std".into(), vec![manifest.model.in_channels]);

    let tensor_count = r.u32()? as usize;
    let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    let mut prev_name: Option<String> = None;
    for _ in 0..tensor_count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes_vec(name_len)?)
            .map_err(|_| Error::Format(format!("{}: tensor name is not UTF-8", path.display())))?;
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(Error::Format(format!(
                    "{}: tensors are not sorted by name (`{prev}` then `{name}`)",
                    path.display()
                )));
            }
        }
        let rank = r.u8()? as usize;
        if rank == 0 || rank > 3 {
            return Err(Error::Corruption {
                tensor: name,
                message: format!("rank {rank} outside 1..=3"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        match expected.get(&name) {
            None => {
                return Err(Error::Corruption {
                    tensor: name,
                    message: "not part of the configured layout".into(),
                })
            }
            Some(want) if want != &shape => {
                return Err(Error::Corruption {
                    tensor: name,
                    message: format!(
                        "stored dims {shape:?} contradict config-derived dims {want:?}"
                    ),
                })
            }
            Some(_) => {}
        }
        let numel: usize = shape.iter().product();
        let data = if name.starts_with(OPTIM_PREFIX) {
            let width = r.u8()?;
            match width {
                4 => r.f32_vec(numel)?,
                8 => {
                    let mut out = Vec::with_capacity(numel);
                    for _ in 0..numel {
                        out.push(f64::from_le_bytes(r.bytes_array::<8>()?) as f32);
                    }
                    out
                }
                other => {
                    return Err(Error::Format(format!(
                        "{}: tensor `{name}` has width {other}, expected 4 or 8",
                        path.display()
                    )))
                }
            }
        } else {
            r.f32_vec(numel)?
        };
        prev_name = Some(name.clone());
        tensors.insert(name, Tensor::from_vec(&shape, data)?);
    }
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format(format!(
                "{}: trailing bytes after the last tensor",
                path.display()
            )))
        }
        Err(e) => return Err(Error::io(path, e)),
    }

    let mut take = |name: &str| -> Result<Tensor<f32>> {
        tensors.remove(name).ok_or_else(|| Error::Corruption {
            tensor: name.to_string(),
            message: "missing from checkpoint".into(),
        })
    };

    let mut params = ParamSet::new();
    for spec in manifest.model.parameter_specs() {
        params.insert(spec.name.clone(), take(&spec.name)?)?;
    }
    let mut running = Vec::new();
    for (site, _) in manifest.model.norm_sites() {
        running.push(BnSite {
            mean: take(&format!("{site}.running_mean"))?.into_data(),
            var: take(&format!("{site}.running_var"))?.into_data(),
            name: site,
        });
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(om) if om.algorithm == "adam" => {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for spec in manifest.model.parameter_specs() {
                m.push(take(&format!("optim.adam.m.{}", spec.name))?);
                v.push(take(&format!("optim.adam.v.{}", spec.name))?);
            }
            Some(OptimizerState::Adam(AdamState { m, v, step: om.step }))
        }
        Some(_) => {
            let mut velocity = Vec::new();
            for spec in manifest.model.parameter_specs() {
                velocity.push(take(&format!("optim.sgd.v.{}", spec.name))?);
            }
            Some(OptimizerState::Sgd(SgdState { velocity }))
        }
    };
    let norm = match (tensors.remove("norm.mean"), tensors.remove("norm.std")) {
        (Some(mean), Some(std)) => {
            Some(NormStats { mean: mean.into_data(), std: std.into_data() })
        }
        (None, None) => None,
        _ => {
            return Err(Error::Corruption {
                tensor: "norm.mean".into(),
                message: "normalization stats are half-present".into(),
            })
        }
    };

    let model = Model::from_parts(manifest.model, params, running)?;
    Ok(Checkpoint { model, optimizer, norm, meta: manifest.meta })
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bytes_array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn bytes_vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes_array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes_array::<4>()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes_array::<8>()?))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(f32::from_le_bytes(self.bytes_array::<4>()?));
        }
        Ok(out)
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Length(format!(
                    "{}: file ends before the declared payload",
                    self.path.display()
                ))
            } else {
                Error::io(self.path, e)
            }
        })
    }
}
