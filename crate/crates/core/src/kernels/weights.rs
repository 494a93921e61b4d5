//! Named f32 tensors and the `MTGW1` weight file.
//!
//! Layout: the 5-byte magic `MTGW1`, a u32 little-endian manifest length, a
//! JSON manifest listing `{name, dtype, shape}` per tensor, then every
//! tensor's values as little-endian f32 in manifest order.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

pub const WEIGHTS_MAGIC: &[u8; 5] = b"MTGW1";

/// Widths of the fine-grained point branch. The defaults are the reference
/// configuration: 32 channels, 32 hidden units, 20 residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub hidden: usize,
    pub depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            hidden: 32,
            depth: 20,
        }
    }
}

impl ModelConfig {
    /// Expected tensor names and shapes, in file order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let (d, h) = (self.channels, self.hidden);
        let mut out = vec![
            ("encoder.lift.weight".to_string(), vec![d, 3]),
            ("encoder.lift.bias".to_string(), vec![d]),
        ];
        for i in 0..self.depth {
            out.push((format!("encoder.block.{i}.weight"), vec![d, d]));
            out.push((format!("encoder.block.{i}.bias"), vec![d]));
        }
        out.extend([
            ("attention.weight".to_string(), vec![1, d]),
            ("attention.bias".to_string(), vec![1]),
            ("lstm.weight_ih".to_string(), vec![4 * h, d]),
            ("lstm.weight_hh".to_string(), vec![4 * h, h]),
            ("lstm.bias".to_string(), vec![4 * h]),
            ("range_mlp.weight".to_string(), vec![1, h]),
            ("range_mlp.bias".to_string(), vec![1]),
        ]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.data[i] as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
}

/// Validated set of branch weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    config: ModelConfig,
    order: Vec<String>,
    tensors: BTreeMap<String, Tensor>,
}

impl WeightBundle {
    /// Builds a bundle from named tensors; names and shapes must match `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = config.manifest();
        if tensors.len() != expected.len() {
            return Err(Error::Weights(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut map = BTreeMap::new();
        let mut order = Vec::with_capacity(tensors.len());
        for ((name, tensor), (want_name, want_shape)) in tensors.into_iter().zip(&expected) {
            if &name != want_name {
                return Err(Error::Weights(format!("expected tensor `{want_name}`, found `{name}`")));
            }
            if &tensor.shape != want_shape || tensor.data.len() != want_shape.iter().product::<usize>() {
                return Err(Error::Weights(format!(
                    "tensor `{name}` has shape {:?} ({} values), expected {:?}",
                    tensor.shape,
                    tensor.data.len(),
                    want_shape
                )));
            }
            if let Some(v) = tensor.data.iter().find(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("tensor `{name}` holds non-finite value {v}")));
            }
            order.push(name.clone());
            map.insert(name, tensor);
        }
        Ok(Self {
            config,
            order,
            tensors: map,
        })
    }

    pub fn zeros(config: ModelConfig) -> Self {
        let tensors = config
            .manifest()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Self::from_tensors(config, tensors).expect("zero bundle matches its own manifest")
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation, one RNG
    /// stream per tensor.
    pub fn random(config: ModelConfig, seed: u64) -> Self {
        let manifest = config.manifest();
        let tensors = manifest
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let fan_in = match shape.as_slice() {
                    [_, cols] => *cols,
                    [n] => *n,
                    _ => 1,
                };
                let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
                let mut rng = stream_rng(seed, streams::WEIGHTS + i as u64);
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                (name, Tensor { shape, data })
            })
            .collect();
        Self::from_tensors(config, tensors).expect("random bundle matches its own manifest")
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("validated bundle is missing `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            tensors: self
                .order
                .iter()
                .map(|name| ManifestEntry {
                    name: name.clone(),
                    dtype: "f32".into(),
                    shape: self.tensors[name].shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serialises");
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for name in &self.order {
            for v in &self.tensors[name].data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Reads an `MTGW1` buffer and infers the configuration from its shapes.
pub fn load_weights(source: &[u8]) -> Result<WeightBundle> {
    let head = WEIGHTS_MAGIC.len() + 4;
    if source.len() < head || &source[..WEIGHTS_MAGIC.len()] != WEIGHTS_MAGIC {
        return Err(Error::Weights("missing MTGW1 header".into()));
    }
    let len = u32::from_le_bytes(source[5..9].try_into().unwrap()) as usize;
    let manifest_bytes = source
        .get(head..head + len)
        .ok_or_else(|| Error::Weights("manifest runs past end of file".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(manifest_bytes).map_err(|e| Error::Weights(format!("bad manifest: {e}")))?;

    let mut payload = &source[head + len..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        if entry.dtype != "f32" {
            return Err(Error::Weights(format!(
                "tensor `{}` has unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        let n: usize = entry.shape.iter().product();
        if payload.len() < n * 4 {
            return Err(Error::Weights(format!(
                "payload too short for tensor `{}` ({} values)",
                entry.name, n
            )));
        }
        let (bytes, rest) = payload.split_at(n * 4);
        payload = rest;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name, Tensor { shape: entry.shape, data }));
    }
    if !payload.is_empty() {
        return Err(Error::Weights(format!("{} trailing payload bytes", payload.len())));
    }
    let config = infer_config(&tensors)?;
    WeightBundle::from_tensors(config, tensors)
}

fn infer_config(tensors: &[(String, Tensor)]) -> Result<ModelConfig> {
    let find = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Weights(format!("missing tensor `{name}`")))
    };
    let channels = *find("encoder.lift.weight")?
        .shape
        .first()
        .ok_or_else(|| Error::Weights("encoder.lift.weight has no shape".into()))?;
    let hidden = *find("lstm.weight_hh")?
        .shape
        .get(1)
        .ok_or_else(|| Error::Weights("lstm.weight_hh must be 2-D".into()))?;
    let depth = tensors
        .iter()
        .filter(|(n, _)| n.starts_with("encoder.block.") && n.ends_with(".weight"))
        .count();
    Ok(ModelConfig {
        channels,
        hidden,
        depth,
    })
}
