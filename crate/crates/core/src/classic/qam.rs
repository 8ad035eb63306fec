//! Gray-labeled 16-QAM with unit average symbol energy and hard decisions.

/// Per-axis amplitude for a Gray bit pair: 00 → −3, 01 → −1, 11 → +1, 10 → +3.
fn level(b0: bool, b1: bool) -> f32 {
    match (b0, b1) {
        (false, false) => -3.0,
        (false, true) => -1.0,
        (true, true) => 1.0,
        (true, false) => 3.0,
    }
}

fn bits_of(v: f32) -> (bool, bool) {
    if v < -2.0 {
        (false, false)
    } else if v < 0.0 {
        (false, true)
    } else if v < 2.0 {
        (true, true)
    } else {
        (true, false)
    }
}

fn norm() -> f32 {
    1.0 / 10f32.sqrt()
}

/// The 16 points as `(re, im)` indexed by the 4-bit label `b0 b1 b2 b3`.
pub fn constellation() -> [(f32, f32); 16] {
    std::array::from_fn(|label| {
        let b = |i: usize| (label >> (3 - i)) & 1 == 1;
        (level(b(0), b(1)) * norm(), level(b(2), b(3)) * norm())
    })
}

/// Maps bits (zero-padded to a multiple of 4) to interleaved `(re, im)`.
pub fn modulate(bits: &[bool]) -> Vec<f32> {
    let mut out = Vec::with_capacity(bits.len().div_ceil(4) * 2);
    for chunk in bits.chunks(4) {
        let b = |i: usize| chunk.get(i).copied().unwrap_or(false);
        out.push(level(b(0), b(1)) * norm());
        out.push(level(b(2), b(3)) * norm());
    }
    out
}

/// Nearest-point decisions on interleaved `(re, im)`; 4 bits per symbol.
pub fn demodulate(symbols: &[f32]) -> Vec<bool> {
    let inv = 10f32.sqrt();
    let mut bits = Vec::with_capacity(symbols.len() * 2);
    for &v in symbols {
        let (a, b) = bits_of(v * inv);
        bits.push(a);
        bits.push(b);
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{awgn_transmit, ChannelConfig, ChannelFrame};
    use crate::util::rng_stream;
    use rand::Rng;

    #[test]
    fn unit_average_energy() {
        let e: f64 = constellation().iter().map(|&(a, b)| (a * a + b * b) as f64).sum::<f64>() / 16.0;
        assert!((e - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gray_neighbors_differ_in_one_bit() {
        let pts = constellation();
        let d = 2.0 * norm();
        for i in 0..16usize {
            for j in 0..16usize {
                let (dx, dy) = ((pts[i].0 - pts[j].0).abs(), (pts[i].1 - pts[j].1).abs());
                let adjacent = ((dx - d).abs() < 1e-6 && dy < 1e-6) || ((dy - d).abs() < 1e-6 && dx < 1e-6);
                if adjacent {
                    assert_eq!((i ^ j).count_ones(), 1, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn noiseless_round_trip() {
        let mut rng = rng_stream(41, 0);
        let bits: Vec<bool> = (0..4001).map(|_| rng.random()).collect();
        let back = demodulate(&modulate(&bits));
        assert_eq!(&back[..bits.len()], bits.as_slice());
        assert!(back[bits.len()..].iter().all(|&b| !b));
    }

    /// Upper tail of the standard normal by composite Simpson integration.
    fn q_function(x: f64) -> f64 {
        let (hi, steps) = (x + 12.0, 20_000);
        let h = (hi - x) / steps as f64;
        let f = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(x) + f(hi);
        for i in 1..steps {
            s += f(x + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn ber_at_10db_matches_nearest_neighbor_approximation() {
        // Gray 16-QAM: BER ≈ (3/4)·Q(sqrt(Es/(5·N0))).
        let es_n0 = 10f64.powf(1.0);
        let want = 0.75 * q_function((es_n0 / 5.0).sqrt());
        let mut rng = rng_stream(42, 0);
        let bits: Vec<bool> = (0..1_000_000).map(|_| rng.random()).collect();
        let sym = modulate(&bits);
        let n = sym.len() / 2;
        let cfg = ChannelConfig::new(10.0, 43);
        let rx = awgn_transmit(&ChannelFrame::new(1, n, sym), &cfg, &mut cfg.rng(0));
        let back = demodulate(rx.data());
        let errors = bits.iter().zip(&back).filter(|(a, b)| a != b).count();
        let ber = errors as f64 / bits.len() as f64;
        assert!((ber - want).abs() / want < 0.2, "ber {ber} vs {want}");
    }
}
