//! Per-tensor asymmetric INT8 quantization of exchanged parameters and the
//! `TCLQ` parameter message framing.
//!
//! `x ≈ s·(q − z)`. The quantized range always contains zero, so zero and
//! constant tensors are represented exactly up to rounding.

use crate::error::MessageError;
use crate::nn::{ParamSet, Tensor};
use crate::util::ByteReader;

const MESSAGE_MAGIC: &[u8; 4] = b"TCLQ";
const MESSAGE_VERSION: u16 = 1;
/// Scale used when the range is exactly `[0, 0]`.
pub const SCALE_FLOOR: f32 = 1e-8;
/// Nominal per-tensor overhead: scale, zero point, rank byte and name length.
pub const TENSOR_OVERHEAD_BYTES: usize = 4 + 2 + 1 + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    scale: f32,
    zero_point: i16,
    data: Vec<i8>,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, scale: f32, zero_point: i16, data: Vec<i8>) -> Result<Self, MessageError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(MessageError::Invalid(format!("scale {scale} must be finite and positive")));
        }
        if !(-128..=127).contains(&zero_point) {
            return Err(MessageError::Invalid(format!("zero point {zero_point} outside [-128, 127]")));
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if n != Some(data.len()) {
            return Err(MessageError::Invalid(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, scale, zero_point, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn zero_point(&self) -> i16 {
        self.zero_point
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// One byte per element plus [`TENSOR_OVERHEAD_BYTES`].
    pub fn payload_bytes(&self) -> usize {
        self.data.len() + TENSOR_OVERHEAD_BYTES
    }
}

/// Quantizes a finite tensor.
///
/// # Panics
/// If any element is NaN or infinite.
pub fn quantize(t: &Tensor) -> QuantTensor {
    let x = t.data();
    assert!(x.iter().all(|v| v.is_finite()), "quantize requires finite values");
    let (lo, hi) = x.iter().fold((0f32, 0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi as f64 - lo as f64;
    let scale = if range == 0.0 { SCALE_FLOOR } else { (range / 255.0) as f32 };
    let zero_point = (-128.0 - lo as f64 / scale as f64).round().clamp(-128.0, 127.0) as i16;
    let q = |scale: f32| QuantTensor {
        shape: t.shape().to_vec(),
        scale,
        zero_point,
        data: x.iter().map(|&v| ((v as f64 / scale as f64).round() + zero_point as f64).clamp(-128.0, 127.0) as i8).collect(),
    };
    // Input already on a grid a few ulps from `scale` keeps that grid exactly.
    let on_grid = |s: f32| {
        let deq = |c: f64| (s as f64 * (c - zero_point as f64)) as f32;
        deq((lo as f64 / s as f64).round() + zero_point as f64) == lo && deq((hi as f64 / s as f64).round() + zero_point as f64) == hi
    };
    if range > 0.0 {
        for k in [0i32, -1, 1, -2, 2, -3, 3, -4, 4] {
            let s = f32::from_bits(scale.to_bits().wrapping_add_signed(k));
            if on_grid(s) {
                let cand = q(s);
                if dequantize(&cand).data() == x {
                    return cand;
                }
            }
        }
    }
    q(scale)
}

pub fn dequantize(q: &QuantTensor) -> Tensor {
    let (s, z) = (q.scale as f64, q.zero_point as f64);
    let data = q.data.iter().map(|&v| (s * (v as f64 - z)) as f32).collect();
    Tensor::new(q.shape.clone(), data).expect("quantized shape matches its data")
}

/// Quantized tensors in the order of the source [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantizedParamSet {
    entries: Vec<(String, QuantTensor)>,
}

impl QuantizedParamSet {
    pub fn from_params(params: &ParamSet) -> Self {
        Self { entries: params.iter().map(|(n, t)| (n.to_owned(), quantize(t))).collect() }
    }

    pub fn dequantize(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (name, q) in &self.entries {
            p.push(name.clone(), dequantize(q)).expect("names were unique when encoded");
        }
        p
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &QuantTensor)> {
        self.entries.iter().map(|(n, q)| (n.as_str(), q))
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, q)| q.numel()).sum()
    }

    /// Sum of per-tensor payloads, excluding names and message header.
    pub fn payload_bytes(&self) -> usize {
        self.entries.iter().map(|(_, q)| q.payload_bytes()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Party {
    A,
    B,
}

impl Party {
    pub fn as_char(self) -> char {
        match self {
            Party::A => 'A',
            Party::B => 'B',
        }
    }
}

/// Header fields carried with every parameter message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageMeta {
    pub round: u32,
    pub party: Party,
    /// Sender's private data size, used for aggregation weights.
    pub data_size: u64,
}

/// Serializes a message. Layout (little-endian): magic `TCLQ`, version u16,
/// round u32, party u8, data_size u64, tensor count u32, then per tensor:
/// name length u16, name, rank u8, dims u32 each, scale f32, zero point i16,
/// INT8 payload.
pub fn encode_message(params: &QuantizedParamSet, meta: &MessageMeta) -> Vec<u8> {
    let mut out = Vec::with_capacity(23 + params.payload_bytes() + params.len() * 40);
    out.extend_from_slice(MESSAGE_MAGIC);
    out.extend_from_slice(&MESSAGE_VERSION.to_le_bytes());
    out.extend_from_slice(&meta.round.to_le_bytes());
    out.push(meta.party as u8);
    out.extend_from_slice(&meta.data_size.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, q) in &params.entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(q.shape.len() as u8);
        for &d in &q.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&q.scale.to_le_bytes());
        out.extend_from_slice(&q.zero_point.to_le_bytes());
        out.extend(q.data.iter().map(|&v| v as u8));
    }
    out
}

pub fn decode_message(bytes: &[u8]) -> Result<(MessageMeta, QuantizedParamSet), MessageError> {
    let mut r = ByteReader::new(bytes);
    if r.take(4).map_err(MessageError::Truncated)? != MESSAGE_MAGIC {
        return Err(MessageError::BadMagic);
    }
    let version = r.u16().map_err(MessageError::Truncated)?;
    if version != MESSAGE_VERSION {
        return Err(MessageError::UnsupportedVersion(version));
    }
    let round = r.u32().map_err(MessageError::Truncated)?;
    let party = match r.u8().map_err(MessageError::Truncated)? {
        0 => Party::A,
        1 => Party::B,
        p => return Err(MessageError::Invalid(format!("party byte {p}"))),
    };
    let data_size = r.u64().map_err(MessageError::Truncated)?;
    let count = r.u32().map_err(MessageError::Truncated)? as usize;
    let mut entries: Vec<(String, QuantTensor)> = Vec::new();
    for _ in 0..count {
        let len = r.u16().map_err(MessageError::Truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).map_err(MessageError::Truncated)?)
            .map_err(|_| MessageError::BadName)?
            .to_owned();
        if entries.iter().any(|(n, _)| *n == name) {
            return Err(MessageError::Invalid(format!("duplicate tensor name {name:?}")));
        }
        let rank = r.u8().map_err(MessageError::Truncated)? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()
            .map_err(MessageError::Truncated)?;
        let scale = r.f32().map_err(MessageError::Truncated)?;
        let zero_point = r.i16().map_err(MessageError::Truncated)?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| MessageError::Invalid(format!("shape {shape:?} overflows")))?;
        let data = r.take(n).map_err(MessageError::Truncated)?.iter().map(|&b| b as i8).collect();
        entries.push((name, QuantTensor::new(shape, scale, zero_point, data)?));
    }
    if r.remaining() != 0 {
        return Err(MessageError::Trailing(r.remaining()));
    }
    Ok((MessageMeta { round, party, data_size }, QuantizedParamSet { entries }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::params_from;
    use proptest::prelude::*;

    fn t(data: Vec<f32>) -> Tensor {
        Tensor::new(vec![data.len()], data).unwrap()
    }

    fn max_err(x: &Tensor) -> (f64, f64) {
        let q = quantize(x);
        let back = dequantize(&q);
        let err = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
        (err, q.scale() as f64)
    }

    #[test]
    fn zeros_are_exact() {
        let x = Tensor::zeros(&[3, 4]);
        let q = quantize(&x);
        assert_eq!(q.scale(), SCALE_FLOOR);
        assert_eq!(dequantize(&q).data(), x.data());
    }

    #[test]
    fn constant_tensors_round_trip() {
        for c in [1.0f32, -0.37, 42.0] {
            let (err, s) = max_err(&Tensor::full(&[50], c));
            assert!(err <= s / 2.0 + 1e-6, "{c}: {err}");
        }
    }

    #[test]
    fn uniform_unit_interval_bound() {
        let x = t((0..=200).map(|i| -1.0 + i as f32 / 100.0).collect());
        let (err, s) = max_err(&x);
        assert!((s - 2.0 / 255.0).abs() < 1e-7);
        assert!(err <= s / 2.0 + 1e-8);
    }

    #[test]
    fn dequantize_known_values() {
        let q = QuantTensor::new(vec![3], 1.0, 0, vec![-1, 0, 5]).unwrap();
        assert_eq!(dequantize(&q).data(), &[-1.0, 0.0, 5.0]);
    }

    #[test]
    fn invalid_quant_tensors_rejected() {
        assert!(QuantTensor::new(vec![2], 0.0, 0, vec![0, 0]).is_err());
        assert!(QuantTensor::new(vec![2], 1.0, 200, vec![0, 0]).is_err());
        assert!(QuantTensor::new(vec![3], 1.0, 0, vec![0, 0]).is_err());
    }

    #[test]
    fn compression_ratio_for_large_tensor() {
        let q = quantize(&Tensor::full(&[10_000], 0.5));
        assert_eq!(q.payload_bytes(), 10_009);
        let ratio = 40_000.0 / q.payload_bytes() as f64;
        assert!((ratio - 3.996).abs() < 1e-3);
    }

    fn sample_set() -> QuantizedParamSet {
        let p = params_from(vec![
            ("w", Tensor::new(vec![2, 3], vec![0.1, -0.5, 2.0, 0.0, 1.5, -3.0]).unwrap()),
            ("b", Tensor::full(&[4], 1.0)),
            ("s", Tensor::scalar(-2.5)),
        ]);
        QuantizedParamSet::from_params(&p)
    }

    #[test]
    fn message_round_trip() {
        let q = sample_set();
        let meta = MessageMeta { round: 7, party: Party::B, data_size: 1234 };
        let bytes = encode_message(&q, &meta);
        let (m, back) = decode_message(&bytes).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back, q);
        assert_eq!(encode_message(&back, &m), bytes);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = encode_message(&sample_set(), &MessageMeta { round: 1, party: Party::A, data_size: 9 });
        for cut in 0..bytes.len() {
            assert!(matches!(decode_message(&bytes[..cut]), Err(MessageError::Truncated(_))), "cut {cut}");
        }
    }

    #[test]
    fn header_errors_are_distinct() {
        let mut bytes = encode_message(&sample_set(), &MessageMeta { round: 1, party: Party::A, data_size: 9 });
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_message(&bad), Err(MessageError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(decode_message(&bad), Err(MessageError::UnsupportedVersion(9)));
        let mut bad = bytes.clone();
        bad[10] = 5;
        assert!(matches!(decode_message(&bad), Err(MessageError::Invalid(_))));
        bytes.push(0);
        assert_eq!(decode_message(&bytes), Err(MessageError::Trailing(1)));
    }

    #[test]
    fn micro_model_message_is_about_a_quarter_of_fp32() {
        let m = crate::model::SemanticModel::new(crate::model::ModelConfig::micro(200), 1).unwrap();
        let fp32 = m.params().to_bytes().len() as f64;
        let msg = encode_message(
            &QuantizedParamSet::from_params(m.params()),
            &MessageMeta { round: 0, party: Party::A, data_size: 0 },
        )
        .len() as f64;
        let ratio = msg / fp32;
        assert!((0.25..0.27).contains(&ratio), "ratio {ratio}");
    }

    fn arb_tensor() -> impl Strategy<Value = Vec<f32>> {
        prop_oneof![
            prop::collection::vec(-100.0f32..100.0, 1..300),
            prop::collection::vec(-1e-3f32..1e-3, 1..300),
            (-50.0f32..50.0, 1usize..300).prop_map(|(c, n)| vec![c; n]),
        ]
    }

    proptest! {
        #[test]
        fn reconstruction_bound(x in arb_tensor()) {
            let x = t(x);
            let q = quantize(&x);
            let back = dequantize(&q);
            let s = q.scale();
            for (a, b) in x.data().iter().zip(back.data()) {
                // Slack covers the final f32 rounding of large magnitudes.
                prop_assert!((a - b).abs() <= s / 2.0 + 1e-6 + a.abs() * 1e-7);
            }
        }

        #[test]
        fn monotone(x in arb_tensor()) {
            let q = quantize(&t(x.clone()));
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
            for w in idx.windows(2) {
                prop_assert!(q.data()[w[0]] <= q.data()[w[1]]);
            }
        }

        #[test]
        fn second_round_trip_is_fixed_point(x in arb_tensor()) {
            let once = dequantize(&quantize(&t(x)));
            let twice = dequantize(&quantize(&once));
            prop_assert!(once.bitwise_eq(&twice));
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_message(&bytes);
        }
    }
}
