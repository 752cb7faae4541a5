//! Single-file checkpoints in the safetensors container.
//!
//! Tensors are stored under their canonical parameter names; optimizer
//! moments, when present, under `adam.m.<name>` and `adam.v.<name>`. The
//! header metadata carries the model configuration (JSON), the step counter
//! and any caller-supplied string entries.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::config::ModelConfig;
use super::net::Model;
use crate::error::{Error, Result};

const FORMAT: &str = "lsnet-checkpoint";
const FORMAT_VERSION: &str = "1";
const RESERVED: [&str; 4] = ["format", "format_version", "model_config", "step"];

/// First and second moment accumulators aligned with the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Moments {
    pub fn zeros_like(model: &Model) -> Self {
        let z: Vec<Vec<f32>> = model.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
        Self { m: z.clone(), v: z }
    }
}

/// Everything restored by [`load_checkpoint`].
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub moments: Option<Moments>,
    pub extra: BTreeMap<String, String>,
}

fn to_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn from_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Writes `model` (and optionally optimizer moments) to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    step: u64,
    moments: Option<&Moments>,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let params = model.parameters();
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = params
        .iter()
        .map(|p| (p.name.clone(), p.shape.clone(), to_bytes(&p.data)))
        .collect();
    if let Some(mo) = moments {
        if mo.m.len() != params.len() || mo.v.len() != params.len() {
            return Err(Error::Shape("optimizer moments do not match the model".into()));
        }
        for (i, p) in params.iter().enumerate() {
            if mo.m[i].len() != p.len() || mo.v[i].len() != p.len() {
                return Err(Error::Shape(format!("optimizer moments for {} have the wrong size", p.name)));
            }
            buffers.push((format!("adam.m.{}", p.name), p.shape.clone(), to_bytes(&mo.m[i])));
            buffers.push((format!("adam.v.{}", p.name), p.shape.clone(), to_bytes(&mo.v[i])));
        }
    }
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Format(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta: HashMap<String, String> = HashMap::new();
    for (k, v) in extra {
        if RESERVED.contains(&k.as_str()) {
            return Err(Error::Config(format!("metadata key {k:?} is reserved")));
        }
        meta.insert(k.clone(), v.clone());
    }
    meta.insert("format".into(), FORMAT.into());
    meta.insert("format_version".into(), FORMAT_VERSION.into());
    meta.insert(
        "model_config".into(),
        serde_json::to_string(model.config()).expect("config serializes"),
    );
    meta.insert("step".into(), step.to_string());
    let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| Error::Format(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    if meta.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(bad("not an lsnet checkpoint".into()));
    }
    if meta.get("format_version").map(String::as_str) != Some(FORMAT_VERSION) {
        return Err(bad(format!("unsupported format version {:?}", meta.get("format_version"))));
    }
    let config: ModelConfig = serde_json::from_str(
        meta.get("model_config")
            .ok_or_else(|| bad("missing model_config".into()))?,
    )
    .map_err(|e| bad(format!("model_config: {e}")))?;
    let step: u64 = meta
        .get("step")
        .ok_or_else(|| bad("missing step".into()))?
        .parse()
        .map_err(|e| bad(format!("step: {e}")))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let mut arrays = HashMap::new();
    let mut m = HashMap::new();
    let mut v = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(bad(format!("tensor {name} is {:?}, expected F32", view.dtype())));
        }
        let entry = (view.shape().to_vec(), from_bytes(view.data()));
        if let Some(rest) = name.strip_prefix("adam.m.") {
            m.insert(rest.to_string(), entry.1);
        } else if let Some(rest) = name.strip_prefix("adam.v.") {
            v.insert(rest.to_string(), entry.1);
        } else {
            arrays.insert(name, entry);
        }
    }
    let model = Model::from_named(config, arrays).map_err(|e| bad(e.to_string()))?;
    let moments = if m.is_empty() && v.is_empty() {
        None
    } else {
        let mut out = Moments { m: Vec::new(), v: Vec::new() };
        for p in model.parameters() {
            let (Some(a), Some(b)) = (m.remove(&p.name), v.remove(&p.name)) else {
                return Err(bad(format!("missing optimizer moments for {}", p.name)));
            };
            if a.len() != p.len() || b.len() != p.len() {
                return Err(bad(format!("optimizer moments for {} have the wrong size", p.name)));
            }
            out.m.push(a);
            out.v.push(b);
        }
        Some(out)
    };
    let extra = meta
        .into_iter()
        .filter(|(k, _)| !RESERVED.contains(&k.as_str()))
        .collect();
    Ok(Checkpoint {
        model,
        step,
        moments,
        extra,
    })
}
