//! Parameter blobs in safetensors format.

use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::autograd::{ParamStore, Tensor};
use crate::error::{Error, Result};

fn ckpt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn f16_to_f64(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = i32::from((bits >> 10) & 0x1f);
    let frac = f64::from(bits & 0x3ff);
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        31 if frac == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        e => sign * (1.0 + frac / 1024.0) * 2f64.powi(e - 15),
    }
}

/// Decode a stored tensor into a 2-D `f64` array. Vectors become `1×n`.
pub fn to_tensor(view: &TensorView<'_>) -> Result<Tensor> {
    let data = view.data();
    let values: Vec<f64> = match view.dtype() {
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
        Dtype::BF16 => data
            .chunks_exact(2)
            .map(|c| {
                let bits = u32::from(u16::from_le_bytes([c[0], c[1]])) << 16;
                f64::from(f32::from_bits(bits))
            })
            .collect(),
        Dtype::F16 => data
            .chunks_exact(2)
            .map(|c| f16_to_f64(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        other => return Err(ckpt(format!("unsupported dtype {other:?}"))),
    };
    let shape = match view.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        other => return Err(ckpt(format!("unsupported rank-{} tensor", other.len()))),
    };
    Tensor::from_shape_vec(shape, values).map_err(|e| ckpt(e.to_string()))
}

/// Write every parameter of `store` as little-endian f64.
pub fn save_params(path: &Path, store: &ParamStore) -> Result<()> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = store
        .iter()
        .map(|(_, p)| {
            let bytes = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
            (p.name.clone(), vec![p.value.nrows(), p.value.ncols()], bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| ckpt(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let blob = safetensors::serialize(views, &None).map_err(|e| ckpt(e.to_string()))?;
    std::fs::write(path, blob).map_err(|e| Error::io(path, e))
}

/// Overwrite every parameter of `store` with the same-named stored tensor.
pub fn load_params(path: &Path, store: &mut ParamStore) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ckpt(e.to_string()))?;
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let view = st
            .tensor(&name)
            .map_err(|_| ckpt(format!("parameter `{name}` missing from {}", path.display())))?;
        let t = to_tensor(&view)?;
        let expected = store.get(id).dim();
        if t.dim() != expected {
            return Err(ckpt(format!(
                "parameter `{name}` has shape {:?}, expected {expected:?}",
                t.dim()
            )));
        }
        *store.get_mut(id) = t;
    }
    Ok(())
}
