use std::path::Path;

use super::binary::{Decoder, Encoder};
use super::{write_atomic, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::estimator::{Backbone, EstimatorModel, InputKind, Mlp};

pub const MODEL_MAGIC: &[u8; 8] = b"QNODDIMD";

/// Serializes a model: layer widths, every layer's weights then every
/// layer's biases, then the training scheme, SH order, lambda and input kind.
pub fn encode_model(model: &EstimatorModel) -> Result<Vec<u8>> {
    let mlp = model.backbone();
    let mut e = Encoder::new(MODEL_MAGIC, FORMAT_VERSION);
    e.len_u32(mlp.num_layers())?;
    for &d in mlp.dims() {
        e.len_u32(d)?;
    }
    for k in 0..mlp.num_layers() {
        e.f64s(&mlp.params()[mlp.layer_ranges(k).0]);
    }
    for k in 0..mlp.num_layers() {
        e.f64s(mlp.bias(k));
    }
    e.scheme(model.training_scheme())?;
    e.len_u32(model.sh_order())?;
    e.f64(model.lambda());
    e.u32(model.input().code());
    Ok(e.finish())
}

pub fn decode_model(bytes: &[u8]) -> Result<EstimatorModel> {
    let mut d = Decoder::new(bytes, MODEL_MAGIC, FORMAT_VERSION, "model")?;
    let layers = d.usize()?;
    if layers == 0 || layers > 64 {
        return Err(Error::format(format!("invalid layer count {layers}")));
    }
    let dims = (0..=layers).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
    let mut skeleton = Mlp::zeros(&dims).map_err(|e| Error::format(e.to_string()))?;
    for k in 0..layers {
        let (w, _) = skeleton.layer_ranges(k);
        let vals = d.f64s(w.len())?;
        skeleton.params_mut()[w].copy_from_slice(&vals);
    }
    for k in 0..layers {
        let (_, b) = skeleton.layer_ranges(k);
        let vals = d.f64s(b.len())?;
        skeleton.params_mut()[b].copy_from_slice(&vals);
    }
    let mlp = Mlp::from_parts(dims, skeleton.params().to_vec()).map_err(|e| Error::format(e.to_string()))?;
    let scheme = d.scheme()?;
    let order = d.usize()?;
    let lambda = d.f64()?;
    let input = InputKind::from_code(d.u32()?)?;
    d.finish()?;
    EstimatorModel::new(mlp, scheme, order, lambda, input).map_err(|e| Error::format(e.to_string()))
}

pub fn write_model(path: impl AsRef<Path>, model: &EstimatorModel) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(model)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<EstimatorModel> {
    decode_model(&std::fs::read(path)?)
}
