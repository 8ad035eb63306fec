//! Separate source and channel coding chain: word-level Huffman, shortened
//! Reed-Solomon blocks, Gray 16-QAM over AWGN with hard decisions.
//!
//! Per sentence the RS payload is a 16-bit big-endian bit count followed by
//! the Huffman bits packed MSB first. The payload is cut into `k`-byte
//! blocks; the last block is shortened. The receiver knows the frame length
//! and therefore the block layout.

pub mod gf256;
pub mod huffman;
pub mod qam;
pub mod rs;

use rayon::prelude::*;

pub use huffman::{HuffmanCode, HuffmanDecoded};
pub use rs::{RsCode, RsOutcome};

use crate::channel::{awgn_transmit, ChannelConfig, ChannelFrame};
use crate::corpus::{SentenceIds, EOS, UNK};
use crate::error::ClassicError;

#[derive(Debug, Clone)]
pub struct ClassicCodec {
    huffman: HuffmanCode,
    rs: RsCode,
    mean_code_len: f64,
}

/// What happened to one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceOutcome {
    pub ids: Vec<usize>,
    pub channel_bits: usize,
    pub bit_errors: usize,
    pub symbols: usize,
    pub rs_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicReport {
    pub sentences: Vec<Vec<usize>>,
    pub channel_bits: usize,
    pub bit_errors: usize,
    pub symbols: usize,
    pub tokens: usize,
    pub rs_failures: usize,
    pub word_accuracy: f64,
}

impl ClassicReport {
    /// Raw channel bit error rate before RS decoding.
    pub fn ber(&self) -> f64 {
        if self.channel_bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.channel_bits as f64
        }
    }

    /// Complex channel symbols per reference token.
    pub fn symbols_per_token(&self) -> f64 {
        self.symbols as f64 / self.tokens.max(1) as f64
    }
}

fn pack(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |b, (i, &x)| b | ((x as u8) << (7 - i)))).collect()
}

fn unpack(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().flat_map(|&b| (0..8).map(move |i| (b >> (7 - i)) & 1 == 1)).collect()
}

impl ClassicCodec {
    /// `freqs[id]` are token counts; every id gets a codeword.
    pub fn new(freqs: &[u64], rs: RsCode) -> Result<Self, ClassicError> {
        let huffman = HuffmanCode::build(freqs)?;
        let mean_code_len = huffman.mean_length(freqs);
        Ok(Self { huffman, rs, mean_code_len })
    }

    /// Counts tokens and one EOS per sentence over `sentences`.
    pub fn from_sentences(sentences: &[SentenceIds], vocab_len: usize, rs: RsCode) -> Result<Self, ClassicError> {
        let mut freqs = vec![0u64; vocab_len];
        for s in sentences {
            for &id in &s.ids {
                freqs[id.min(vocab_len - 1)] += 1;
            }
            freqs[EOS] += 1;
        }
        Self::new(&freqs, rs)
    }

    pub fn huffman(&self) -> &HuffmanCode {
        &self.huffman
    }

    pub fn rs(&self) -> &RsCode {
        &self.rs
    }

    /// Header plus packed Huffman bits.
    pub fn payload(&self, ids: &[usize]) -> Result<Vec<u8>, ClassicError> {
        let bits = self.huffman.encode(ids);
        let count = u16::try_from(bits.len()).map_err(|_| ClassicError::BlockSize { got: bits.len(), expected: u16::MAX as usize })?;
        let mut out = count.to_be_bytes().to_vec();
        out.extend(pack(&bits));
        Ok(out)
    }

    fn block_lengths(&self, payload_len: usize) -> Vec<usize> {
        let k = self.rs.k();
        (0..payload_len.div_ceil(k)).map(|i| (payload_len - i * k).min(k)).collect()
    }

    /// Concatenated RS codewords of the sentence payload.
    pub fn encode_sentence(&self, ids: &[usize]) -> Result<Vec<u8>, ClassicError> {
        let payload = self.payload(ids)?;
        let mut out = Vec::new();
        for chunk in payload.chunks(self.rs.k()) {
            out.extend(self.rs.encode(chunk)?);
        }
        Ok(out)
    }

    /// Inverse of [`ClassicCodec::encode_sentence`] for a received byte frame.
    /// Returns the ids and whether any RS block failed.
    pub fn decode_sentence(&self, frame: &[u8]) -> Result<(Vec<usize>, bool), ClassicError> {
        let p = self.rs.parity();
        let blocks = frame.len().div_ceil(self.rs.n());
        let payload_len = frame.len() - blocks * p;
        let mut payload = Vec::with_capacity(payload_len);
        let mut offset = 0;
        for len in self.block_lengths(payload_len) {
            match self.rs.decode(&frame[offset..offset + len + p])? {
                RsOutcome::Decoded { data, .. } => payload.extend(data),
                RsOutcome::Failure => return Ok((self.unk_guess(payload_len), true)),
            }
            offset += len + p;
        }
        let declared = u16::from_be_bytes([payload[0], payload[1]]) as usize;
        let bits = unpack(&payload[2..]);
        let d = self.huffman.decode(&bits[..declared.min(bits.len())]);
        Ok((d.ids, false))
    }

    /// All-UNK stand-in sized from the payload length and mean code length.
    fn unk_guess(&self, payload_len: usize) -> Vec<usize> {
        let bits = payload_len.saturating_sub(2) * 8;
        let tokens = (bits as f64 / self.mean_code_len - 1.0).round().max(1.0) as usize;
        vec![UNK; tokens]
    }

    /// One sentence through modulation, the channel and back.
    pub fn transmit_sentence(&self, ids: &[usize], channel: &ChannelConfig, call: u64) -> Result<SentenceOutcome, ClassicError> {
        let coded = self.encode_sentence(ids)?;
        let tx_bits = unpack(&coded);
        let sym = qam::modulate(&tx_bits);
        let n = sym.len() / 2;
        let rx = awgn_transmit(&ChannelFrame::new(1, n, sym), channel, &mut channel.rng(call));
        let rx_bits = qam::demodulate(rx.data());
        let bit_errors = tx_bits.iter().zip(&rx_bits).filter(|(a, b)| a != b).count();
        let received = pack(&rx_bits[..tx_bits.len()]);
        let (ids, rs_failed) = self.decode_sentence(&received)?;
        Ok(SentenceOutcome { ids, channel_bits: tx_bits.len(), bit_errors, symbols: n, rs_failed })
    }
}

/// Runs every sentence through the chain; sentence `i` uses noise stream
/// `channel.rng(i)`, so results do not depend on thread count.
pub fn classic_pipeline(sentences: &[SentenceIds], codec: &ClassicCodec, channel: &ChannelConfig) -> Result<ClassicReport, ClassicError> {
    let outcomes: Vec<SentenceOutcome> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| codec.transmit_sentence(&s.ids, channel, i as u64))
        .collect::<Result<_, _>>()?;
    let refs: Vec<Vec<usize>> = sentences.iter().map(|s| s.ids.clone()).collect();
    let decoded: Vec<Vec<usize>> = outcomes.iter().map(|o| o.ids.clone()).collect();
    Ok(ClassicReport {
        word_accuracy: crate::metrics::word_accuracy(&decoded, &refs),
        channel_bits: outcomes.iter().map(|o| o.channel_bits).sum(),
        bit_errors: outcomes.iter().map(|o| o.bit_errors).sum(),
        symbols: outcomes.iter().map(|o| o.symbols).sum(),
        tokens: refs.iter().map(Vec::len).sum(),
        rs_failures: outcomes.iter().filter(|o| o.rs_failed).count(),
        sentences: decoded,
    })
}
