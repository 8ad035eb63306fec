use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::NnError;
use crate::util::{write_atomic, ByteReader};

/// Dense row-major FP32 array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} holds {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n], grad: None }
    }

    pub fn scalar(value: f32) -> Self {
        Self { shape: vec![], data: vec![value], grad: None }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f32 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self { shape: shape.to_vec(), data, grad: None }
    }

    /// Uniform entries in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { shape: shape.to_vec(), data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f32]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn set_grad(&mut self, g: Vec<f32>) {
        assert_eq!(g.len(), self.data.len());
        self.grad = Some(g);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Bitwise equality of shape and data (distinguishes -0.0 from 0.0 and NaN payloads).
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Named parameter tensors in model-definition order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

const PARAM_MAGIC: &[u8; 4] = b"TCLP";
const PARAM_VERSION: u16 = 1;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor; returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize, NnError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(NnError::DuplicateName(name));
        }
        self.entries.push((name, tensor));
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn clear_grads(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.clear_grad());
    }

    /// Copies values from `other` (same names and shapes) and drops gradients.
    pub fn assign_from(&mut self, other: &ParamSet) -> Result<(), NnError> {
        self.check_same_structure(other)?;
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            dst.data.copy_from_slice(&src.data);
            dst.grad = None;
        }
        Ok(())
    }

    pub fn check_same_structure(&self, other: &ParamSet) -> Result<(), NnError> {
        if self.len() != other.len() {
            return Err(NnError::Shape {
                op: "paramset",
                detail: format!("{} tensors vs {}", self.len(), other.len()),
            });
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || ta.shape != tb.shape {
                return Err(NnError::Shape {
                    op: "paramset",
                    detail: format!("{na:?}{:?} vs {nb:?}{:?}", ta.shape, tb.shape),
                });
            }
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.len() == other.len()
            && self.entries.iter().zip(&other.entries).all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.numel() * 4 + self.len() * 32);
        out.extend_from_slice(PARAM_MAGIC);
        out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let trunc = |at: usize| NnError::Format(format!("truncated at byte {at}"));
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(trunc)? != PARAM_MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = r.u16().map_err(trunc)?;
        if version != PARAM_VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let count = r.u32().map_err(trunc)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = r.u16().map_err(trunc)? as usize;
            let name = std::str::from_utf8(r.take(len).map_err(trunc)?)
                .map_err(|_| NnError::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u8().map_err(trunc)? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>().map_err(trunc)?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| trunc(r.position()))?).map_err(trunc)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            set.push(name, Tensor::new(shape, data)?)?;
        }
        if r.remaining() != 0 {
            return Err(NnError::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(p.push("w", Tensor::zeros(&[3])), Err(NnError::DuplicateName(_))));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::full(&[4, 2], 1.5)).unwrap();
        let bytes = p.to_bytes();
        for cut in 0..bytes.len() {
            assert!(ParamSet::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.push("a", Tensor::new(vec![3], vec![1.0, -0.0, f32::MIN_POSITIVE]).unwrap()).unwrap();
        p.save(&dir.path().join("p.bin")).unwrap();
        assert!(ParamSet::load(&dir.path().join("p.bin")).unwrap().bitwise_eq(&p));
    }

    proptest! {
        #[test]
        fn byte_round_trip_is_bitwise(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..5, 0..3), any::<u32>()), 0..6)
        ) {
            let mut p = ParamSet::new();
            for (i, (shape, seed)) in tensors.into_iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|j| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(j as u32) & 0x7f7f_ffff)).collect();
                p.push(format!("t{i}"), Tensor::new(shape, data).unwrap()).unwrap();
            }
            let back = ParamSet::from_bytes(&p.to_bytes()).unwrap();
            prop_assert!(back.bitwise_eq(&p));
        }
    }
}
