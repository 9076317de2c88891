use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::Tensor;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::config::ModelConfig;
use crate::net::Detector;
use crate::ModelError;

/// Value of the `format` metadata key.
pub const CHECKPOINT_FORMAT: &str = "scd-detector-v1";

/// Writes parameters as little-endian `f32` safetensors with the model config and seed
/// in the header metadata.
pub fn save_checkpoint(model: &Detector, path: &Path) -> Result<(), ModelError> {
    let mut buffers = Vec::with_capacity(model.params().len());
    for (name, var) in model.params().iter() {
        let bytes: Vec<u8> = var.flatten_all()?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect();
        buffers.push((name.to_string(), var.dims().to_vec(), bytes));
    }
    let views: Vec<(String, TensorView)> = buffers
        .iter()
        .map(|(n, shape, bytes)| {
            let view = TensorView::new(Dtype::F32, shape.clone(), bytes).expect("shape matches buffer");
            (n.clone(), view)
        })
        .collect();
    let metadata = HashMap::from([
        ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
        ("config".to_string(), serde_json::to_string(model.config()).expect("config serializes")),
        ("seed".to_string(), model.seed().to_string()),
    ]);
    let data = safetensors::serialize(views, Some(metadata))
        .map_err(|e| ModelError::Checkpoint { path: path.to_path_buf(), message: e.to_string() })?;
    fs::write(path, data).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Detector, ModelError> {
    let fail = |message: String| ModelError::Checkpoint { path: path.to_path_buf(), message };
    let data = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    let (_, meta) = SafeTensors::read_metadata(&data).map_err(|e| fail(e.to_string()))?;
    let meta = meta.metadata().clone().ok_or_else(|| fail("missing metadata".into()))?;
    if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(fail(format!("not a {CHECKPOINT_FORMAT} checkpoint")));
    }
    let config: ModelConfig =
        serde_json::from_str(meta.get("config").ok_or_else(|| fail("missing config".into()))?).map_err(|e| fail(e.to_string()))?;
    let seed: u64 = meta.get("seed").and_then(|s| s.parse().ok()).ok_or_else(|| fail("missing seed".into()))?;
    let model = Detector::new(config, seed)?;
    let tensors = SafeTensors::deserialize(&data).map_err(|e| fail(e.to_string()))?;
    if tensors.len() != model.params().len() {
        return Err(fail(format!("expected {} tensors, found {}", model.params().len(), tensors.len())));
    }
    for (name, var) in model.params().iter() {
        let view = tensors.tensor(name).map_err(|_| fail(format!("missing tensor {name}")))?;
        if view.dtype() != Dtype::F32 || view.shape() != var.dims() {
            return Err(fail(format!("tensor {name} has shape {:?}, expected {:?}", view.shape(), var.dims())));
        }
        let values: Vec<f32> = view.data().chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        var.set(&Tensor::from_vec(values, var.dims(), model.device())?)?;
    }
    Ok(model)
}
