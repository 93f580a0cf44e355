//! Binary parameter files.
//!
//! ```text
//! "OSRPARAM" | version u32 | dtype u8 | num_classes u32 | layer count u32
//! per layer: name len u8 | name | frozen u8 | rows u32 | cols u32
//!            | rows·cols weights | cols biases
//! ```
//!
//! Integers and floats are little-endian; `dtype` is the element width in
//! bytes. Layers appear in network order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Layer, ModelParams, NetworkConfig, ParamPair, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OSRPARAM";
const VERSION: u32 = 1;
const MAX_CLASSES: usize = 1 << 16;
const WHAT: &str = "parameter file";

pub fn encode_params<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 4 * params.num_params() + 128);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE);
    out.extend_from_slice(&(params.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(Layer::PARAMETRIC.len() as u32).to_le_bytes());
    for (layer, pair) in params.layers() {
        out.push(layer.name().len() as u8);
        out.extend_from_slice(layer.name().as_bytes());
        out.push(params.is_frozen(layer) as u8);
        let (rows, cols) = pair.weight.dim();
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        pair.weight.iter().for_each(|&v| v.write_le(&mut out));
        pair.bias.iter().for_each(|&v| v.write_le(&mut out));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::parse(WHAT, 0, format!("byte {}: {}", self.pos, msg.into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.fail("unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let width = usize::from(T::DTYPE);
        let raw = self.take(n.checked_mul(width).ok_or_else(|| self.fail("size overflow"))?)?;
        let values: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.fail("non-finite parameter"));
        }
        Ok(values)
    }
}

pub fn decode_params<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::parse(WHAT, 0, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let dtype = r.u8()?;
    if dtype != T::DTYPE {
        return Err(r.fail(format!("element width {dtype}, expected {}", T::DTYPE)));
    }
    let num_classes = r.u32()?;
    if num_classes > MAX_CLASSES {
        return Err(r.fail(format!("{num_classes} classes")));
    }
    let config = NetworkConfig::new(num_classes).map_err(|e| r.fail(e.to_string()))?;
    let count = r.u32()?;
    if count != Layer::PARAMETRIC.len() {
        return Err(r.fail(format!("{count} layers, expected {}", Layer::PARAMETRIC.len())));
    }

    let mut layers = Vec::with_capacity(count);
    let mut frozen = [false; 4];
    for (k, (layer, (rows, cols))) in Layer::PARAMETRIC.iter().zip(config.param_shapes()).enumerate() {
        let len = usize::from(r.u8()?);
        let name = r.take(len)?;
        if name != layer.name().as_bytes() {
            return Err(r.fail(format!("expected layer {layer}")));
        }
        frozen[k] = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(r.fail(format!("frozen flag {b}"))),
        };
        let dims = (r.u32()?, r.u32()?);
        if dims != (rows, cols) {
            return Err(r.fail(format!("{layer}: shape {dims:?}, expected {:?}", (rows, cols))));
        }
        let weight = Array2::from_shape_vec((rows, cols), r.reals(rows * cols)?)
            .expect("length checked");
        let bias = Array1::from_vec(r.reals(cols)?);
        layers.push(ParamPair { weight, bias });
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes"));
    }
    let layers: [ParamPair<T>; 4] = layers.try_into().expect("four layers");
    ModelParams::from_layers(config, layers, frozen)
}

pub fn save_params<T: Real>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    decode_params(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads parameters and checks the output width.
pub fn load_params_expecting<T: Real>(path: &Path, num_classes: usize) -> Result<ModelParams<T>> {
    let params = load_params(path)?;
    if params.num_classes() != num_classes {
        return Err(Error::Shape(format!(
            "{}: model has {} classes, expected {num_classes}",
            path.display(),
            params.num_classes()
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParams<f32> {
        let mut p = ModelParams::init(NetworkConfig::new(3).unwrap(), 4);
        p.freeze_until(Layer::Linear1).unwrap();
        p
    }

    #[test]
    fn round_trip() {
        let p = sample();
        let bytes = encode_params(&p);
        assert_eq!(decode_params::<f32>(&bytes).unwrap(), p);
        let wide = p.cast::<f64>();
        assert_eq!(decode_params::<f64>(&encode_params(&wide)).unwrap(), wide);
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        assert!(decode_params::<f64>(&encode_params(&sample())).is_err());
    }

    #[test]
    fn truncation_and_corruption_are_errors() {
        let bytes = encode_params(&sample());
        for cut in [0, 7, 12, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_params::<f32>(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_params::<f32>(&extra).is_err());
        let mut nan = bytes.clone();
        let last = nan.len() - 4;
        nan[last..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_params::<f32>(&nan).is_err());
        let mut flag = bytes;
        flag[MAGIC.len() + 4 + 1 + 4 + 4 + 1 + 5] = 7;
        assert!(decode_params::<f32>(&flag).is_err());
    }

    #[test]
    fn class_count_check_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_params(&sample(), &path).unwrap();
        assert!(load_params_expecting::<f32>(&path, 3).is_ok());
        assert!(matches!(load_params_expecting::<f32>(&path, 2), Err(Error::Shape(_))));
    }
}
