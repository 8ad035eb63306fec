//! Systematic Reed-Solomon codes over GF(2⁸), first consecutive root α⁰.
//! Decoding: syndromes, Berlekamp-Massey, Chien search, Forney.
//!
//! Short blocks are handled as shortened codes: the encoder treats missing
//! leading data symbols as zeros and never transmits them.

use super::gf256::{alpha_pow, div, mul, poly_eval_asc, poly_eval_desc};
use crate::error::ClassicError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsCode {
    n: usize,
    k: usize,
    /// Generator coefficients, descending degree, monic.
    generator: Vec<u8>,
}

/// Result of decoding one block. Failure is an ordinary outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RsOutcome {
    Decoded { data: Vec<u8>, corrected: usize },
    Failure,
}

impl RsCode {
    pub fn new(n: usize, k: usize) -> Result<Self, ClassicError> {
        if n > 255 || k == 0 || k >= n || !(n - k).is_multiple_of(2) {
            return Err(ClassicError::BadRsParams { n, k });
        }
        let mut g = vec![1u8];
        for i in 0..(n - k) as i64 {
            // g(x) *= (x - α^i)
            let root = alpha_pow(i);
            let mut next = vec![0u8; g.len() + 1];
            for (j, &c) in g.iter().enumerate() {
                next[j] ^= c;
                next[j + 1] ^= mul(c, root);
            }
            g = next;
        }
        Ok(Self { n, k, generator: g })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn parity(&self) -> usize {
        self.n - self.k
    }

    pub fn t(&self) -> usize {
        (self.n - self.k) / 2
    }

    /// Appends `n − k` parity bytes to `data` (`1..=k` bytes).
    pub fn encode(&self, data: &[u8]) -> Result<Vec<u8>, ClassicError> {
        if data.is_empty() || data.len() > self.k {
            return Err(ClassicError::BlockSize { got: data.len(), expected: self.k });
        }
        let p = self.parity();
        let mut rem = vec![0u8; p];
        for &d in data {
            let f = d ^ rem[0];
            rem.rotate_left(1);
            rem[p - 1] = 0;
            if f != 0 {
                for (r, &g) in rem.iter_mut().zip(&self.generator[1..]) {
                    *r ^= mul(f, g);
                }
            }
        }
        let mut out = data.to_vec();
        out.extend_from_slice(&rem);
        Ok(out)
    }

    /// Decodes a possibly shortened block of `parity() + 1 ..= n` bytes.
    pub fn decode(&self, block: &[u8]) -> Result<RsOutcome, ClassicError> {
        let p = self.parity();
        if block.len() <= p || block.len() > self.n {
            return Err(ClassicError::BlockSize { got: block.len(), expected: self.n });
        }
        let len = block.len();
        let data_len = len - p;
        let syn: Vec<u8> = (0..p as i64).map(|j| poly_eval_desc(block, alpha_pow(j))).collect();
        if syn.iter().all(|&s| s == 0) {
            return Ok(RsOutcome::Decoded { data: block[..data_len].to_vec(), corrected: 0 });
        }
        let lambda = berlekamp_massey(&syn);
        let errors = lambda.len() - 1;
        if errors > self.t() {
            return Ok(RsOutcome::Failure);
        }
        // Position i of the (shortened) block has locator α^(len-1-i).
        let positions: Vec<usize> =
            (0..len).filter(|&i| poly_eval_asc(&lambda, alpha_pow(-((len - 1 - i) as i64))) == 0).collect();
        if positions.len() != errors {
            // Roots in the virtual zero prefix or missing roots: uncorrectable.
            return Ok(RsOutcome::Failure);
        }
        let mut omega: Vec<u8> = vec![0; p];
        for (i, &s) in syn.iter().enumerate() {
            for (j, &l) in lambda.iter().enumerate() {
                if i + j < p {
                    omega[i + j] ^= mul(s, l);
                }
            }
        }
        let dlambda: Vec<u8> = lambda.iter().enumerate().skip(1).map(|(j, &c)| if j % 2 == 1 { c } else { 0 }).collect();
        let mut fixed = block.to_vec();
        for &i in &positions {
            let e = (len - 1 - i) as i64;
            let (x, xinv) = (alpha_pow(e), alpha_pow(-e));
            let den = poly_eval_asc(&dlambda, xinv);
            if den == 0 {
                return Ok(RsOutcome::Failure);
            }
            fixed[i] ^= mul(x, div(poly_eval_asc(&omega, xinv), den));
        }
        if (0..p as i64).any(|j| poly_eval_desc(&fixed, alpha_pow(j)) != 0) {
            return Ok(RsOutcome::Failure);
        }
        Ok(RsOutcome::Decoded { data: fixed[..data_len].to_vec(), corrected: errors })
    }
}

/// Error-locator polynomial, ascending degree, trimmed to its degree.
fn berlekamp_massey(syn: &[u8]) -> Vec<u8> {
    let mut c = vec![1u8];
    let mut b = vec![1u8];
    let (mut l, mut m, mut bd) = (0usize, 1usize, 1u8);
    for r in 0..syn.len() {
        let mut d = syn[r];
        for i in 1..=l.min(c.len() - 1) {
            d ^= mul(c[i], syn[r - i]);
        }
        if d == 0 {
            m += 1;
            continue;
        }
        let coef = div(d, bd);
        let mut next = c.clone();
        if next.len() < b.len() + m {
            next.resize(b.len() + m, 0);
        }
        for (i, &bi) in b.iter().enumerate() {
            next[i + m] ^= mul(coef, bi);
        }
        if 2 * l <= r {
            b = c;
            l = r + 1 - l;
            bd = d;
            m = 1;
        } else {
            m += 1;
        }
        c = next;
    }
    c.truncate(l + 1);
    c.resize(l + 1, 0);
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_stream;
    use rand::seq::index::sample;
    use rand::Rng;

    fn corrupt<R: Rng>(block: &mut [u8], count: usize, rng: &mut R) {
        for i in sample(rng, block.len(), count) {
            block[i] ^= rng.random_range(1..=255u8);
        }
    }

    #[test]
    fn parameters_validated() {
        assert!(RsCode::new(256, 200).is_err());
        assert!(RsCode::new(15, 10).is_err());
        assert!(RsCode::new(15, 15).is_err());
        let c = RsCode::new(255, 223).unwrap();
        assert_eq!((c.t(), c.parity()), (16, 32));
    }

    #[test]
    fn generator_roots() {
        let c = RsCode::new(15, 11).unwrap();
        for i in 0..4 {
            assert_eq!(poly_eval_desc(&c.generator, alpha_pow(i)), 0);
        }
    }

    #[test]
    fn clean_round_trip() {
        let c = RsCode::new(255, 223).unwrap();
        let data: Vec<u8> = (0..223).map(|i| (i * 37 % 256) as u8).collect();
        let cw = c.encode(&data).unwrap();
        assert_eq!(&cw[..223], data.as_slice());
        assert_eq!(c.decode(&cw).unwrap(), RsOutcome::Decoded { data, corrected: 0 });
    }

    #[test]
    fn rs15_11_corrects_up_to_two_errors() {
        let c = RsCode::new(15, 11).unwrap();
        let mut rng = rng_stream(21, 0);
        for trial in 0..10_000 {
            let data: Vec<u8> = (0..11).map(|_| rng.random()).collect();
            let mut cw = c.encode(&data).unwrap();
            let errs = trial % 3;
            corrupt(&mut cw, errs, &mut rng);
            assert_eq!(c.decode(&cw).unwrap(), RsOutcome::Decoded { data, corrected: errs }, "trial {trial}");
        }
    }

    #[test]
    fn n7_all_error_position_pairs() {
        let c = RsCode::new(7, 3).unwrap();
        let mut rng = rng_stream(22, 0);
        let data = vec![0x12, 0xAB, 0x7F];
        let cw = c.encode(&data).unwrap();
        for i in 0..7 {
            for j in i..7 {
                for _ in 0..20 {
                    let mut bad = cw.clone();
                    bad[i] ^= rng.random_range(1..=255u8);
                    if j != i {
                        bad[j] ^= rng.random_range(1..=255u8);
                    }
                    match c.decode(&bad).unwrap() {
                        RsOutcome::Decoded { data: d, .. } => assert_eq!(d, data),
                        RsOutcome::Failure => panic!("positions {i},{j}"),
                    }
                }
            }
        }
    }

    #[test]
    fn beyond_capacity_is_flagged_or_wrong() {
        let c = RsCode::new(255, 223).unwrap();
        let mut rng = rng_stream(23, 0);
        let mut failures = 0;
        for _ in 0..200 {
            let data: Vec<u8> = (0..223).map(|_| rng.random()).collect();
            let mut cw = c.encode(&data).unwrap();
            corrupt(&mut cw, 17, &mut rng);
            match c.decode(&cw).unwrap() {
                RsOutcome::Failure => failures += 1,
                RsOutcome::Decoded { data: d, .. } => assert_ne!(d, data),
            }
        }
        assert!(failures > 190, "{failures}");
    }

    #[test]
    fn shortened_blocks() {
        let c = RsCode::new(255, 223).unwrap();
        let mut rng = rng_stream(24, 0);
        for len in [1usize, 5, 40, 222] {
            let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let mut cw = c.encode(&data).unwrap();
            assert_eq!(cw.len(), len + 32);
            let count = 16.min(cw.len());
            corrupt(&mut cw, count, &mut rng);
            assert_eq!(c.decode(&cw).unwrap(), RsOutcome::Decoded { data, corrected: 16.min(len + 32) });
        }
        assert!(c.encode(&[]).is_err());
        assert!(c.decode(&[0; 32]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn corrects_random_patterns(seed in 0u64..10_000, errs in 0usize..=3) {
            let c = RsCode::new(31, 25).unwrap();
            let mut rng = rng_stream(seed, 1);
            let data: Vec<u8> = (0..25).map(|_| rng.random()).collect();
            let mut cw = c.encode(&data).unwrap();
            corrupt(&mut cw, errs, &mut rng);
            proptest::prop_assert_eq!(c.decode(&cw).unwrap(), RsOutcome::Decoded { data, corrected: errs });
        }
    }
}
