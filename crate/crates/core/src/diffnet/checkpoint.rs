//! Flat little-endian parameter container.
//!
//! ```text
//! "MOCD" | version: u32
//! scalar count: u32 | { name_len: u16, name: utf8, value: f64 }*
//! array count:  u32 | { name_len: u16, name: utf8, ndim: u32, dims: u64*ndim, data: f64* }*
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Layer, Params};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MOCD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub scalars: Vec<(String, f64)>,
    pub arrays: Vec<NamedArray>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated container: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4, _>(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8, _>(r)?))
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let len = u16::from_le_bytes(read_exact::<2, _>(r)?) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated name: {e}")))?;
    String::from_utf8(buf).map_err(|_| bad("name is not UTF-8"))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.push((name.into(), value));
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| bad(format!("missing scalar `{name}`")))
    }

    pub fn put_array(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| bad(format!("missing array `{name}`")))
    }

    pub fn has_array(&self, name: &str) -> bool {
        self.arrays.iter().any(|a| a.name == name)
    }

    pub fn put_array1(&mut self, name: impl Into<String>, a: &Array1<f64>) {
        self.put_array(name, vec![a.len()], a.to_vec());
    }

    pub fn put_array2(&mut self, name: impl Into<String>, a: &Array2<f64>) {
        self.put_array(name, vec![a.nrows(), a.ncols()], a.iter().copied().collect());
    }

    pub fn array1(&self, name: &str) -> Result<Array1<f64>> {
        let a = self.array(name)?;
        match a.shape[..] {
            [_] => Ok(Array1::from(a.data.clone())),
            _ => Err(bad(format!("`{name}` has shape {:?}, expected 1-D", a.shape))),
        }
    }

    pub fn array2(&self, name: &str) -> Result<Array2<f64>> {
        let a = self.array(name)?;
        match a.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), a.data.clone()).map_err(|e| bad(e.to_string())),
            _ => Err(bad(format!("`{name}` has shape {:?}, expected 2-D", a.shape))),
        }
    }

    /// Stores a network under `prefix.layer<l>.{weight,bias}`.
    pub fn put_params(&mut self, prefix: &str, params: &Params) {
        self.put_scalar(format!("{prefix}.layers"), params.layers.len() as f64);
        self.put_scalar(format!("{prefix}.activation"), params.activation.code());
        for (l, layer) in params.layers.iter().enumerate() {
            self.put_array2(format!("{prefix}.layer{l}.weight"), &layer.weight);
            self.put_array1(format!("{prefix}.layer{l}.bias"), &layer.bias);
        }
    }

    pub fn params(&self, prefix: &str) -> Result<Params> {
        let count = self.scalar(&format!("{prefix}.layers"))? as usize;
        let activation = Activation::from_code(self.scalar(&format!("{prefix}.activation"))?)?;
        let layers = (0..count)
            .map(|l| {
                let weight = self.array2(&format!("{prefix}.layer{l}.weight"))?;
                let bias = self.array1(&format!("{prefix}.layer{l}.bias"))?;
                if weight.ncols() != bias.len() {
                    return Err(bad(format!("{prefix}.layer{l}: weight and bias disagree")));
                }
                Ok(Layer { weight, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.is_empty() || layers.windows(2).any(|w| w[0].bias.len() != w[1].weight.nrows()) {
            return Err(bad(format!("{prefix}: inconsistent layer shapes")));
        }
        Ok(Params { layers, activation })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.scalars.len() as u32).to_le_bytes())?;
        for (name, value) in &self.scalars {
            write_name(w, name)?;
            w.write_all(&value.to_le_bytes())?;
        }
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for a in &self.arrays {
            write_name(w, &a.name)?;
            w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
            for &d in &a.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &a.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        if &read_exact::<4, _>(r)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut ckpt = Checkpoint::new();
        for _ in 0..read_u32(r)? {
            let name = read_name(r)?;
            let value = read_f64(r)?;
            ckpt.scalars.push((name, value));
        }
        for _ in 0..read_u32(r)? {
            let name = read_name(r)?;
            let ndim = read_u32(r)? as usize;
            let shape = (0..ndim)
                .map(|_| Ok(u64::from_le_bytes(read_exact::<8, _>(r)?) as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad(format!("`{name}` shape overflows")))?;
            let mut bytes = Vec::new();
            r.by_ref().take(len as u64 * 8).read_to_end(&mut bytes)?;
            if bytes.len() != len * 8 {
                return Err(bad(format!("truncated data for `{name}`")));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ckpt.arrays.push(NamedArray { name, shape, data });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{init_params, NetSpec};
    use rand::SeedableRng;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::new();
        ck.put_scalar("gamma", 0.7);
        ck.put_array("w", vec![1, 2], vec![1.0, -2.0]);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"MOCD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 5);
        assert_eq!(&bytes[14..19], b"gamma");
        assert_eq!(f64::from_le_bytes(bytes[19..27].try_into().unwrap()), 0.7);
        // scalars, array count, name, ndim, dims, data
        assert_eq!(bytes.len(), 27 + 4 + 2 + 1 + 4 + 16 + 16);
        assert_eq!(Checkpoint::read_from(&mut bytes.as_slice()).unwrap(), ck);
    }

    #[test]
    fn params_round_trip() {
        let spec = NetSpec::new(vec![4, 3, 2], Activation::Tanh).unwrap();
        let p = init_params(&spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let mut ck = Checkpoint::new();
        ck.put_params("view0.theta", &p);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.params("view0.theta").unwrap(), p);
        assert!(back.params("view1.theta").is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::read_from(&mut &b"NOPE\x01\0\0\0"[..]).is_err());
        assert!(Checkpoint::read_from(&mut &b"MOCD\x02\0\0\0"[..]).is_err());
        let mut ck = Checkpoint::new();
        ck.put_array("w", vec![3], vec![1.0, 2.0, 3.0]);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
    }
}
