use std::ffi::{CStr, CString};
use std::ptr;

use tclsc_ffi::*;

unsafe fn params(tensors: &[(&str, Vec<usize>, Vec<f32>)]) -> *mut TclscParams {
    let h = tclsc_params_new();
    for (name, shape, data) in tensors {
        let n = CString::new(*name).unwrap();
        let st = tclsc_params_push(h, n.as_ptr(), shape.as_ptr(), shape.len(), data.as_ptr(), data.len());
        assert_eq!(st, TclscStatus::Ok);
    }
    h
}

unsafe fn read(h: *const TclscParams, i: usize) -> Vec<f32> {
    let mut v = vec![0f32; tclsc_params_numel(h, i)];
    assert_eq!(tclsc_params_read(h, i, v.as_mut_ptr(), v.len()), TclscStatus::Ok);
    v
}

unsafe fn last_error() -> String {
    let p = tclsc_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

#[test]
fn message_round_trip_within_half_step() {
    unsafe {
        let w: Vec<f32> = (0..600).map(|i| ((i * 37 % 101) as f32 - 50.0) / 40.0).collect();
        let h = params(&[("w", vec![20, 30], w.clone()), ("b", vec![3], vec![0.0, 0.5, -0.25])]);
        let mut buf = ptr::null_mut();
        let meta = TclscMessageMeta { round: 3, party: b'A', data_size: 800 };
        assert_eq!(tclsc_message_encode(h, meta, &mut buf), TclscStatus::Ok);
        let (data, len) = (tclsc_buffer_data(buf), tclsc_buffer_len(buf));
        assert!(len > 600 && len < 700);

        let mut out = ptr::null_mut();
        let mut got = TclscMessageMeta::default();
        assert_eq!(tclsc_message_decode(data, len, &mut got, &mut out), TclscStatus::Ok);
        assert_eq!((got.round, got.party, got.data_size), (3, b'A', 800));
        assert_eq!(tclsc_params_len(out), 2);
        let back = read(out, 0);
        let step = (w.iter().cloned().fold(0f32, f32::max) - w.iter().cloned().fold(0f32, f32::min)) / 255.0;
        for (a, b) in w.iter().zip(&back) {
            assert!((a - b).abs() <= step / 2.0 + 1e-6);
        }
        tclsc_buffer_free(buf);
        tclsc_params_free(out);
        tclsc_params_free(h);
    }
}

#[test]
fn truncated_message_is_rejected() {
    unsafe {
        let h = params(&[("x", vec![4], vec![1.0, 2.0, 3.0, 4.0])]);
        let mut buf = ptr::null_mut();
        tclsc_message_encode(h, TclscMessageMeta { round: 1, party: b'B', data_size: 1 }, &mut buf);
        let mut out = ptr::null_mut();
        let st = tclsc_message_decode(tclsc_buffer_data(buf), tclsc_buffer_len(buf) - 1, ptr::null_mut(), &mut out);
        assert_eq!(st, TclscStatus::MalformedMessage);
        assert!(out.is_null());
        assert!(last_error().contains("truncated"));
        tclsc_buffer_free(buf);
        tclsc_params_free(h);
    }
}

#[test]
fn aggregate_weights_by_data_size() {
    unsafe {
        let a = params(&[("w", vec![2], vec![1.0, 0.0])]);
        let b = params(&[("w", vec![2], vec![0.0, 2.0])]);
        let mut out = ptr::null_mut();
        assert_eq!(tclsc_aggregate(a, b, 0.75, &mut out), TclscStatus::Ok);
        assert_eq!(read(out, 0), vec![0.75, 0.5]);
        tclsc_params_free(out);

        let c = params(&[("v", vec![2], vec![0.0, 0.0])]);
        let mut bad = ptr::null_mut();
        assert_eq!(tclsc_aggregate(a, c, 0.5, &mut bad), TclscStatus::StructureMismatch);
        assert_eq!(tclsc_aggregate(a, b, 1.5, &mut bad), TclscStatus::InvalidArgument);
        assert!(bad.is_null());
        for h in [a, b, c] {
            tclsc_params_free(h);
        }
    }
}

#[test]
fn quantize_dequantize_arrays() {
    unsafe {
        let x = [-1.0f32, -0.5, 0.0, 0.25, 1.0];
        let mut q = [0i8; 5];
        let (mut s, mut z) = (0f32, 0i16);
        assert_eq!(tclsc_quantize(x.as_ptr(), 5, q.as_mut_ptr(), &mut s, &mut z), TclscStatus::Ok);
        assert!((s - 2.0 / 255.0).abs() < 1e-7);
        let mut back = [0f32; 5];
        assert_eq!(tclsc_dequantize(q.as_ptr(), 5, s, z, back.as_mut_ptr()), TclscStatus::Ok);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= s / 2.0 + 1e-6);
        }
        assert_eq!(back[2], 0.0);
    }
}

#[test]
fn bleu_over_flat_arrays() {
    unsafe {
        // "the cat is on the sofa" against itself and a one-word substitution.
        let r = [1u32, 2, 3, 4, 1, 5];
        let c = [1u32, 2, 9, 4, 1, 5];
        let lens = [6usize];
        let mut v = 0.0;
        assert_eq!(tclsc_bleu(r.as_ptr(), lens.as_ptr(), r.as_ptr(), lens.as_ptr(), 1, 2, &mut v), TclscStatus::Ok);
        assert_eq!(v, 1.0);
        assert_eq!(tclsc_bleu(c.as_ptr(), lens.as_ptr(), r.as_ptr(), lens.as_ptr(), 1, 1, &mut v), TclscStatus::Ok);
        assert!((v - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(tclsc_bleu(c.as_ptr(), lens.as_ptr(), r.as_ptr(), lens.as_ptr(), 1, 3, &mut v), TclscStatus::InvalidArgument);
        assert_eq!(tclsc_bleu(c.as_ptr(), lens.as_ptr(), r.as_ptr(), lens.as_ptr(), 0, 1, &mut v), TclscStatus::InvalidArgument);
    }
}

#[test]
fn null_and_bad_arguments() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(tclsc_message_encode(ptr::null(), TclscMessageMeta::default(), &mut out), TclscStatus::NullPointer);
        assert!(last_error().contains("null"));
        let h = tclsc_params_new();
        assert_eq!(tclsc_message_encode(h, TclscMessageMeta { round: 0, party: b'C', data_size: 0 }, &mut out), TclscStatus::InvalidArgument);
        let name = CString::new("x").unwrap();
        let shape = [3usize];
        let data = [1f32, 2.0];
        assert_eq!(tclsc_params_push(h, name.as_ptr(), shape.as_ptr(), 1, data.as_ptr(), 2), TclscStatus::InvalidArgument);
        assert_eq!(tclsc_params_len(h), 0);
        assert_eq!(tclsc_params_len(ptr::null()), 0);
        tclsc_params_free(h);
        tclsc_params_free(ptr::null_mut());
        tclsc_buffer_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    unsafe {
        let mut v = 0.0;
        tclsc_bleu(ptr::null(), ptr::null(), ptr::null(), ptr::null(), 0, 1, ptr::null_mut());
        assert!(!tclsc_last_error().is_null());
        let ids = [1u32];
        let lens = [1usize];
        assert_eq!(tclsc_bleu(ids.as_ptr(), lens.as_ptr(), ids.as_ptr(), lens.as_ptr(), 1, 1, &mut v), TclscStatus::Ok);
        assert!(tclsc_last_error().is_null());
        assert!(CStr::from_ptr(tclsc_version()).to_str().unwrap().starts_with("0."));
    }
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tclsc.h")).unwrap();
    for sym in ["tclsc_message_encode", "tclsc_message_decode", "tclsc_aggregate", "tclsc_bleu", "TCLSC_STATUS_OK", "typedef struct TclscParams TclscParams"] {
        assert!(h.contains(sym), "{sym}");
    }
}
