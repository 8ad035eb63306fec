//! C ABI over the parameter exchange: build parameter sets, frame them as
//! INT8 exchange messages, decode, aggregate, and score with BLEU.
//!
//! Every fallible call returns a [`TclscStatus`]; on failure the message is
//! kept per thread and read back with [`tclsc_last_error`]. Handles are
//! opaque and freed with their matching `_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tclsc::coop::{aggregate, AggregationWeights};
use tclsc::nn::{ParamSet, Tensor};
use tclsc::quant::{self, MessageMeta, Party, QuantizedParamSet};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TclscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MalformedMessage = 3,
    StructureMismatch = 4,
    Panic = 5,
}

/// Named FP32 tensors in insertion order.
pub struct TclscParams(ParamSet);

/// An owned byte buffer returned by the library.
pub struct TclscBuffer(Vec<u8>);

/// Header fields of an exchange message.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TclscMessageMeta {
    pub round: u32,
    /// `'A'` or `'B'`.
    pub party: u8,
    pub data_size: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type FfiResult = Result<(), (TclscStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> TclscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TclscStatus::Ok
        }
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside tclsc");
            TclscStatus::Panic
        }
    }
}

fn null(what: &str) -> (TclscStatus, String) {
    (TclscStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl ToString) -> (TclscStatus, String) {
    (TclscStatus::InvalidArgument, msg.to_string())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (TclscStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn params_ref<'a>(p: *const TclscParams, what: &str) -> Result<&'a ParamSet, (TclscStatus, String)> {
    p.as_ref().map(|h| &h.0).ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn tclsc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tclsc_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn tclsc_params_new() -> *mut TclscParams {
    Box::into_raw(Box::new(TclscParams(ParamSet::new())))
}

/// # Safety
/// `params` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tclsc_params_free(params: *mut TclscParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Appends a tensor. `data` holds the product of `shape` values.
///
/// # Safety
/// Pointers must be valid for the given lengths; `name` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tclsc_params_push(
    params: *mut TclscParams,
    name: *const c_char,
    shape: *const usize,
    ndim: usize,
    data: *const f32,
    len: usize,
) -> TclscStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| null("params"))?;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| invalid("name is not UTF-8"))?;
        let shape = slice(shape, ndim, "shape")?.to_vec();
        let data = slice(data, len, "data")?.to_vec();
        let t = Tensor::new(shape, data).map_err(invalid)?;
        p.0.push(name, t).map_err(invalid)?;
        Ok(())
    })
}

/// Number of tensors, or 0 for a null handle.
///
/// # Safety
/// `params` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tclsc_params_len(params: *const TclscParams) -> usize {
    params.as_ref().map_or(0, |p| p.0.len())
}

/// Element count of tensor `index`, or 0 when out of range.
///
/// # Safety
/// `params` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tclsc_params_numel(params: *const TclscParams, index: usize) -> usize {
    params.as_ref().filter(|p| index < p.0.len()).map_or(0, |p| p.0.tensor(index).numel())
}

/// Copies tensor `index` into `out`, which holds `len` floats.
///
/// # Safety
/// `out` must be writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn tclsc_params_read(params: *const TclscParams, index: usize, out: *mut f32, len: usize) -> TclscStatus {
    guard(|| {
        let p = params_ref(params, "params")?;
        if index >= p.len() {
            return Err(invalid(format!("tensor index {index} out of range ({} tensors)", p.len())));
        }
        let t = p.tensor(index);
        if len != t.numel() {
            return Err(invalid(format!("buffer holds {len} floats, tensor has {}", t.numel())));
        }
        if out.is_null() && len > 0 {
            return Err(null("out"));
        }
        if len > 0 {
            ptr::copy_nonoverlapping(t.data().as_ptr(), out, len);
        }
        Ok(())
    })
}

/// Quantizes `params` to INT8 and frames it as an exchange message.
///
/// # Safety
/// `out` must be writable; the buffer is freed with [`tclsc_buffer_free`].
#[no_mangle]
pub unsafe extern "C" fn tclsc_message_encode(
    params: *const TclscParams,
    meta: TclscMessageMeta,
    out: *mut *mut TclscBuffer,
) -> TclscStatus {
    guard(|| {
        let p = params_ref(params, "params")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let party = match meta.party {
            b'A' => Party::A,
            b'B' => Party::B,
            other => return Err(invalid(format!("party byte {other} is not 'A' or 'B'"))),
        };
        let qp = QuantizedParamSet::from_params(p);
        let bytes = quant::encode_message(&qp, &MessageMeta { round: meta.round, party, data_size: meta.data_size });
        *out = Box::into_raw(Box::new(TclscBuffer(bytes)));
        Ok(())
    })
}

/// Parses a message and returns its dequantized parameters.
///
/// # Safety
/// `bytes` must be readable for `len` bytes; `out` writable; `meta` may be null.
#[no_mangle]
pub unsafe extern "C" fn tclsc_message_decode(
    bytes: *const u8,
    len: usize,
    meta: *mut TclscMessageMeta,
    out: *mut *mut TclscParams,
) -> TclscStatus {
    guard(|| {
        let b = slice(bytes, len, "bytes")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (m, qp) = quant::decode_message(b).map_err(|e| (TclscStatus::MalformedMessage, e.to_string()))?;
        if let Some(meta) = meta.as_mut() {
            *meta = TclscMessageMeta { round: m.round, party: m.party.as_char() as u8, data_size: m.data_size };
        }
        *out = Box::into_raw(Box::new(TclscParams(qp.dequantize())));
        Ok(())
    })
}

/// `m_a·a + (1 − m_a)·b`, tensor by tensor.
///
/// # Safety
/// `a` and `b` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn tclsc_aggregate(
    a: *const TclscParams,
    b: *const TclscParams,
    m_a: f64,
    out: *mut *mut TclscParams,
) -> TclscStatus {
    guard(|| {
        let (a, b) = (params_ref(a, "a")?, params_ref(b, "b")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let w = AggregationWeights::new(m_a).map_err(invalid)?;
        let merged = aggregate(a, b, w).map_err(|e| (TclscStatus::StructureMismatch, e.to_string()))?;
        *out = Box::into_raw(Box::new(TclscParams(merged)));
        Ok(())
    })
}

/// Quantizes `len` floats to INT8 with one scale and zero point.
///
/// # Safety
/// `data` readable and `q` writable for `len` elements; `scale`, `zero_point` writable.
#[no_mangle]
pub unsafe extern "C" fn tclsc_quantize(
    data: *const f32,
    len: usize,
    q: *mut i8,
    scale: *mut f32,
    zero_point: *mut i16,
) -> TclscStatus {
    guard(|| {
        let d = slice(data, len, "data")?;
        if (q.is_null() && len > 0) || scale.is_null() || zero_point.is_null() {
            return Err(null("output"));
        }
        let t = Tensor::new(vec![len], d.to_vec()).map_err(invalid)?;
        let qt = quant::quantize(&t);
        if len > 0 {
            ptr::copy_nonoverlapping(qt.data().as_ptr(), q, len);
        }
        *scale = qt.scale();
        *zero_point = qt.zero_point();
        Ok(())
    })
}

/// Inverse of [`tclsc_quantize`].
///
/// # Safety
/// `q` readable and `out` writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn tclsc_dequantize(q: *const i8, len: usize, scale: f32, zero_point: i16, out: *mut f32) -> TclscStatus {
    guard(|| {
        let qd = slice(q, len, "q")?;
        if out.is_null() && len > 0 {
            return Err(null("out"));
        }
        let qt = quant::QuantTensor::new(vec![len], scale, zero_point, qd.to_vec()).map_err(invalid)?;
        let t = quant::dequantize(&qt);
        if len > 0 {
            ptr::copy_nonoverlapping(t.data().as_ptr(), out, len);
        }
        Ok(())
    })
}

/// # Safety
/// `buf` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tclsc_buffer_data(buf: *const TclscBuffer) -> *const u8 {
    buf.as_ref().map_or(ptr::null(), |b| b.0.as_ptr())
}

/// # Safety
/// `buf` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tclsc_buffer_len(buf: *const TclscBuffer) -> usize {
    buf.as_ref().map_or(0, |b| b.0.len())
}

/// # Safety
/// `buf` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tclsc_buffer_free(buf: *mut TclscBuffer) {
    if !buf.is_null() {
        drop(Box::from_raw(buf));
    }
}

unsafe fn corpus(ids: *const u32, lens: *const usize, count: usize, what: &str) -> Result<Vec<Vec<u32>>, (TclscStatus, String)> {
    let lens = slice(lens, count, what)?;
    let total: usize = lens.iter().sum();
    let flat = slice(ids, total, what)?;
    let mut out = Vec::with_capacity(count);
    let mut at = 0;
    for &l in lens {
        out.push(flat[at..at + l].to_vec());
        at += l;
    }
    Ok(out)
}

/// Corpus BLEU over `count` sentence pairs. Token ids are concatenated in
/// `cand_ids` / `ref_ids` with per-sentence lengths in `cand_lens` / `ref_lens`.
///
/// # Safety
/// Arrays must be readable for the lengths they describe; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tclsc_bleu(
    cand_ids: *const u32,
    cand_lens: *const usize,
    ref_ids: *const u32,
    ref_lens: *const usize,
    count: usize,
    max_n: usize,
    out: *mut f64,
) -> TclscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = corpus(cand_ids, cand_lens, count, "candidates")?;
        let r = corpus(ref_ids, ref_lens, count, "references")?;
        *out = tclsc::metrics::bleu(&c, &r, max_n).map_err(invalid)?;
        Ok(())
    })
}
