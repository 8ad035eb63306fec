//! Additive white Gaussian noise link shared by the learned and classic chains.
//!
//! SNR is signal power over total complex-symbol noise power: at `snr_db`
//! the noise power per complex symbol is `10^(-snr_db/10)`, split evenly
//! between the real and imaginary components.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::util::rng_stream;

/// Batch of complex symbols stored as interleaved `(re, im)` pairs,
/// logically shaped `[batch × symbols × 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    batch: usize,
    symbols: usize,
    data: Vec<f32>,
}

impl ChannelFrame {
    pub fn new(batch: usize, symbols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), batch * symbols * 2, "frame data must hold batch*symbols*2 reals");
        Self { batch, symbols, data }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Complex symbols per batch row (`N·L` for the learned chain).
    pub fn symbols_per_row(&self) -> usize {
        self.symbols
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.batch, self.symbols, 2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Mean of `re² + im²` over all symbols.
    pub fn average_power(&self) -> f64 {
        let n = self.data.len() / 2;
        if n == 0 {
            return 0.0;
        }
        self.data.iter().map(|&x| x as f64 * x as f64).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Snr {
    Db(f64),
    Noiseless,
}

impl Snr {
    /// Total noise power per complex symbol, `σ² = 10^(-snr/10)`.
    pub fn noise_power(self) -> f64 {
        match self {
            Snr::Db(db) => 10f64.powf(-db / 10.0),
            Snr::Noiseless => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub snr: Snr,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        assert!(snr_db.is_finite(), "snr must be finite; use ChannelConfig::noiseless");
        Self { snr: Snr::Db(snr_db), seed }
    }

    pub fn noiseless() -> Self {
        Self { snr: Snr::Noiseless, seed: 0 }
    }

    /// The noise stream for the `call`-th transmission under this config.
    pub fn rng(&self, call: u64) -> ChaCha8Rng {
        rng_stream(self.seed, call)
    }
}

/// Returns `len` i.i.d. real noise samples of variance `σ²/2`.
pub fn awgn_noise<R: Rng + ?Sized>(len: usize, snr: Snr, rng: &mut R) -> Vec<f32> {
    let std = (snr.noise_power() / 2.0).sqrt();
    if std == 0.0 {
        return vec![0.0; len];
    }
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std) as f32
        })
        .collect()
}

/// `Ẑ = Z + n`. A noiseless config returns `Z` unchanged and draws nothing.
pub fn awgn_transmit<R: Rng + ?Sized>(z: &ChannelFrame, cfg: &ChannelConfig, rng: &mut R) -> ChannelFrame {
    if cfg.snr == Snr::Noiseless {
        return z.clone();
    }
    let noise = awgn_noise(z.data.len(), cfg.snr, rng);
    let data = z.data.iter().zip(&noise).map(|(a, b)| a + b).collect();
    ChannelFrame { batch: z.batch, symbols: z.symbols, data }
}

/// `10·log10(P(Z) / P(Ẑ − Z))`; `+∞` when the frames are identical.
pub fn measure_empirical_snr(z: &ChannelFrame, zhat: &ChannelFrame) -> f64 {
    assert_eq!(z.shape(), zhat.shape(), "frames must have matching shapes");
    let signal: f64 = z.data.iter().map(|&x| x as f64 * x as f64).sum();
    let noise: f64 = z.data.iter().zip(&zhat.data).map(|(&a, &b)| (b as f64 - a as f64).powi(2)).sum();
    if noise == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (signal / noise).log10()
}
