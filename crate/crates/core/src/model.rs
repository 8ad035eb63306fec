//! The transceiver model: Transformer semantic encoder, dense JSCC encoder
//! with batch power normalization, dense JSCC decoder and Transformer
//! semantic decoder, trained end to end through the AWGN channel.
//!
//! Shapes follow the transmission chain: ids `S: [B×L]` → features
//! `X: [B×L×D]` → symbols `Z: [B×NL×2]` → `Ẑ` → `X̂: [B×L×D]` → logits
//! `[B×L×V]` (teacher forcing) or decoded ids (greedy).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{awgn_noise, awgn_transmit, ChannelConfig, ChannelFrame, Snr};
use crate::corpus::{SentenceIds, EOS, PAD, SOS};
use crate::error::ModelError;
use crate::nn::{AttnGeom, Graph, OptimizerState, ParamSet, Tensor, Var};
use crate::util::{rng_stream, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Vocabulary size `V`, specials included.
    pub vocab: usize,
    /// Maximum sentence length `L` in tokens, EOS included.
    pub max_len: usize,
    /// Semantic feature width `D`.
    pub d_model: usize,
    /// Complex channel symbols per token `N`.
    pub symbols_per_token: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl ModelConfig {
    /// Two layers, four heads, `D = 32`, `d_ff = 64`, `N = 4`, `L = 13`.
    pub fn micro(vocab: usize) -> Self {
        Self { vocab, max_len: 13, d_model: 32, symbols_per_token: 4, layers: 2, heads: 4, d_ff: 64 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.vocab <= EOS {
            return bad(format!("vocabulary of {} cannot hold the special tokens", self.vocab));
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.symbols_per_token == 0 {
            return bad("symbols_per_token must be >= 1".into());
        }
        if self.max_len < 5 {
            return bad(format!("max_len {} < 5", self.max_len));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be >= 1".into());
        }
        Ok(())
    }

    /// `key=value` lines for the checkpoint sidecar.
    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    pub fn from_sidecar(text: &str) -> Result<Self, ModelError> {
        let mut c = Self { vocab: 0, max_len: 0, d_model: 0, symbols_per_token: 0, layers: 0, heads: 0, d_ff: 0 };
        let mut seen = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| ModelError::Config(format!("bad sidecar line {line:?}")))?;
            let v: usize = v.trim().parse().map_err(|_| ModelError::Config(format!("bad value in {line:?}")))?;
            let slot = match k.trim() {
                "vocab" => &mut c.vocab,
                "max_len" => &mut c.max_len,
                "d_model" => &mut c.d_model,
                "symbols_per_token" => &mut c.symbols_per_token,
                "layers" => &mut c.layers,
                "heads" => &mut c.heads,
                "d_ff" => &mut c.d_ff,
                other => return Err(ModelError::Config(format!("unknown sidecar key {other:?}"))),
            };
            *slot = v;
            seen += 1;
        }
        if seen != 7 {
            return Err(ModelError::Config(format!("sidecar lists {seen} of 7 fields")));
        }
        c.validate()?;
        Ok(c)
    }

    fn fields(&self) -> [(&'static str, usize); 7] {
        [
            ("vocab", self.vocab),
            ("max_len", self.max_len),
            ("d_model", self.d_model),
            ("symbols_per_token", self.symbols_per_token),
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
        ]
    }
}

/// A padded minibatch in the three layouts the model consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub len: usize,
    /// Sentence tokens then EOS, PAD after.
    pub src: Vec<usize>,
    pub src_mask: Vec<bool>,
    /// SOS then sentence tokens, PAD after.
    pub dec_in: Vec<usize>,
    /// Sentence tokens then EOS, PAD after.
    pub target: Vec<usize>,
    pub target_mask: Vec<bool>,
}

impl Batch {
    /// Pads to the longest sentence in the batch (plus EOS).
    pub fn new(sentences: &[&SentenceIds], config: &ModelConfig) -> Result<Self, ModelError> {
        let len = sentences.iter().map(|s| s.len() + 1).max().unwrap_or(1);
        Self::with_len(sentences, len, config)
    }

    pub fn with_len(sentences: &[&SentenceIds], len: usize, config: &ModelConfig) -> Result<Self, ModelError> {
        if sentences.is_empty() {
            return Err(ModelError::NoData);
        }
        if len > config.max_len {
            return Err(ModelError::TooLong { len: len - 1, max: config.max_len - 1 });
        }
        let n = sentences.len() * len;
        let mut b = Batch {
            size: sentences.len(),
            len,
            src: vec![PAD; n],
            src_mask: vec![false; n],
            dec_in: vec![PAD; n],
            target: vec![PAD; n],
            target_mask: vec![false; n],
        };
        for (r, s) in sentences.iter().enumerate() {
            if s.len() + 1 > len {
                return Err(ModelError::TooLong { len: s.len(), max: len - 1 });
            }
            if let Some(&bad) = s.ids.iter().find(|&&t| t >= config.vocab || t == PAD) {
                return Err(ModelError::BadToken(bad));
            }
            let o = r * len;
            b.src[o..o + s.len()].copy_from_slice(&s.ids);
            b.src[o + s.len()] = EOS;
            b.src_mask[o..=o + s.len()].fill(true);
            b.dec_in[o] = SOS;
            b.dec_in[o + 1..=o + s.len()].copy_from_slice(&s.ids);
            b.target.copy_from_slice(&b.src);
            b.target_mask.copy_from_slice(&b.src_mask);
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense2 {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ff: Dense2,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross_attn: Attn,
    ln3: Norm,
    ff: Dense2,
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    jscc_enc: Dense2,
    jscc_dec: Dense2,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    out_w: usize,
    out_b: usize,
}

struct Builder<'a, R: Rng> {
    params: ParamSet,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn add(&mut self, name: String, t: Tensor) -> usize {
        self.params.push(name, t).expect("model parameter names are unique")
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm { gain: self.add(format!("{prefix}.gain"), Tensor::full(&[d], 1.0)), bias: self.add(format!("{prefix}.bias"), Tensor::zeros(&[d])) }
    }

    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
        let t = Tensor::uniform(&[fan_in, fan_out], bound, self.rng);
        self.add(name, t)
    }

    fn dense2(&mut self, prefix: &str, d_in: usize, hidden: usize, d_out: usize) -> Dense2 {
        Dense2 {
            w1: self.weight(format!("{prefix}.w1"), d_in, hidden),
            b1: self.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: self.weight(format!("{prefix}.w2"), hidden, d_out),
            b2: self.add(format!("{prefix}.b2"), Tensor::zeros(&[d_out])),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Attn {
        let pair = |b: &mut Self, n: &str| {
            let w = b.weight(format!("{prefix}.w{n}"), d, d);
            let bias = b.add(format!("{prefix}.b{n}"), Tensor::zeros(&[d]));
            (w, bias)
        };
        let (wq, bq) = pair(self, "q");
        let (wk, bk) = pair(self, "k");
        let (wv, bv) = pair(self, "v");
        let (wo, bo) = pair(self, "o");
        Attn { wq, bq, wk, bk, wv, bv, wo, bo }
    }
}

fn sinusoidal_positions(len: usize, d: usize) -> Vec<f32> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * rate;
            pe[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() } as f32;
        }
    }
    pe
}

/// What [`SemanticModel::decode`] produces.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    /// Teacher-forced logits, `[B·len × V]`.
    Logits(Tensor),
    /// Greedy token ids per sentence, EOS excluded.
    Tokens(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    TeacherForced,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct SemanticModel {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
    positions: Vec<f32>,
}

impl SemanticModel {
    /// Seeded random initialization; equal seeds give bitwise-equal models.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_stream(seed, 0x1417);
        let (d, v, ff, n2) = (config.d_model, config.vocab, config.d_ff, 2 * config.symbols_per_token);
        let mut b = Builder { params: ParamSet::new(), rng: &mut rng };
        let embedding = {
            let t = Tensor::randn(&[v, d], 1.0, b.rng);
            b.add("embedding".into(), t)
        };
        let encoder = (0..config.layers)
            .map(|l| EncoderLayer {
                ln1: b.norm(&format!("enc.{l}.ln1"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d),
                ln2: b.norm(&format!("enc.{l}.ln2"), d),
                ff: b.dense2(&format!("enc.{l}.ff"), d, ff, d),
            })
            .collect();
        let enc_norm = b.norm("enc.ln", d);
        let jscc_enc = b.dense2("jscc_enc", d, ff, n2);
        let jscc_dec = b.dense2("jscc_dec", n2, ff, d);
        let decoder = (0..config.layers)
            .map(|l| DecoderLayer {
                ln1: b.norm(&format!("dec.{l}.ln1"), d),
                self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
                ln2: b.norm(&format!("dec.{l}.ln2"), d),
                cross_attn: b.attn(&format!("dec.{l}.cross_attn"), d),
                ln3: b.norm(&format!("dec.{l}.ln3"), d),
                ff: b.dense2(&format!("dec.{l}.ff"), d, ff, d),
            })
            .collect();
        let dec_norm = b.norm("dec.ln", d);
        let out_w = b.weight("out.w".into(), d, v);
        let out_b = b.add("out.b".into(), Tensor::zeros(&[v]));
        let layout = Layout { embedding, encoder, enc_norm, jscc_enc, jscc_dec, decoder, dec_norm, out_w, out_b };
        Ok(Self { config, params: b.params, layout, positions: sinusoidal_positions(config.max_len, d) })
    }

    /// Rebuilds a model around existing parameters, checking every name and shape.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self, ModelError> {
        let mut m = Self::new(config, 0)?;
        m.params.check_same_structure(&params)?;
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// The `[V×D]` token embedding table.
    pub fn embedding_table(&self) -> &Tensor {
        self.params.tensor(self.layout.embedding)
    }

    /// Writes the parameter file at `path` and the config sidecar at `path.cfg`.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.params.save(path)?;
        write_atomic(&sidecar_path(path), self.config.to_sidecar().as_bytes()).map_err(crate::NnError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(sidecar_path(path)).map_err(crate::NnError::from)?;
        let config = ModelConfig::from_sidecar(&text)?;
        Self::from_params(config, ParamSet::load(path)?)
    }

    fn embed(&self, g: &mut Graph, ids: &[usize], len: usize) -> Result<Var, ModelError> {
        let table = g.param(&self.params, self.layout.embedding);
        let x = g.embedding(table, ids)?;
        Ok(g.add_const(x, &self.positions[..len * self.config.d_model])?)
    }

    fn norm(&self, g: &mut Graph, x: Var, n: Norm) -> Result<Var, ModelError> {
        let (gain, bias) = (g.param(&self.params, n.gain), g.param(&self.params, n.bias));
        Ok(g.layer_norm(x, gain, bias)?)
    }

    fn dense2(&self, g: &mut Graph, x: Var, f: Dense2) -> Result<Var, ModelError> {
        let p = &self.params;
        let (w1, b1, w2, b2) = (g.param(p, f.w1), g.param(p, f.b1), g.param(p, f.w2), g.param(p, f.b2));
        let h = g.linear(x, w1, b1)?;
        let h = g.relu(h);
        Ok(g.linear(h, w2, b2)?)
    }

    fn attend(&self, g: &mut Graph, xq: Var, xkv: Var, a: Attn, geom: AttnGeom) -> Result<Var, ModelError> {
        let p = &self.params;
        let (wq, bq) = (g.param(p, a.wq), g.param(p, a.bq));
        let (wk, bk) = (g.param(p, a.wk), g.param(p, a.bk));
        let (wv, bv) = (g.param(p, a.wv), g.param(p, a.bv));
        let (wo, bo) = (g.param(p, a.wo), g.param(p, a.bo));
        let q = g.linear(xq, wq, bq)?;
        let k = g.linear(xkv, wk, bk)?;
        let v = g.linear(xkv, wv, bv)?;
        let o = g.attention(q, k, v, geom)?;
        Ok(g.linear(o, wo, bo)?)
    }

    /// `S → X`: contextual features per token position, `[B·len × D]`.
    pub fn semantic_encode(&self, g: &mut Graph, batch: &Batch) -> Result<Var, ModelError> {
        let mut x = self.embed(g, &batch.src, batch.len)?;
        for layer in &self.layout.encoder {
            let geom = AttnGeom {
                batch: batch.size,
                len_q: batch.len,
                len_k: batch.len,
                heads: self.config.heads,
                key_mask: batch.src_mask.clone(),
                causal: false,
            };
            let h = self.norm(g, x, layer.ln1)?;
            let h = self.attend(g, h, h, layer.attn, geom)?;
            x = g.add(x, h)?;
            let h = self.norm(g, x, layer.ln2)?;
            let h = self.dense2(g, h, layer.ff)?;
            x = g.add(x, h)?;
        }
        self.norm(g, x, self.layout.enc_norm)
    }

    /// `X → Z`: dense map to `2N` reals per token, then power normalization
    /// over the non-pad positions. The result is `[B·len × 2N]`, which is the
    /// `[B × N·len × 2]` frame in memory.
    pub fn jscc_encode(&self, g: &mut Graph, x: Var, batch: &Batch) -> Result<Var, ModelError> {
        let z = self.dense2(g, x, self.layout.jscc_enc)?;
        Ok(g.power_norm(z, &batch.src_mask)?)
    }

    /// Runs the transmitter and returns the normalized channel input.
    pub fn transmit_frame(&self, batch: &Batch) -> Result<ChannelFrame, ModelError> {
        let mut g = Graph::new();
        let x = self.semantic_encode(&mut g, batch)?;
        let z = self.jscc_encode(&mut g, x, batch)?;
        Ok(ChannelFrame::new(batch.size, batch.len * self.config.symbols_per_token, g.value(z).to_vec()))
    }

    /// `Ẑ → X̂`, `[B·len × D]`.
    fn jscc_decode(&self, g: &mut Graph, zhat: Var) -> Result<Var, ModelError> {
        self.dense2(g, zhat, self.layout.jscc_dec)
    }

    /// Decoder stack over `dec_in` (`[B × len_q]` ids) attending to `memory`.
    #[allow(clippy::too_many_arguments)]
    fn semantic_decode(
        &self,
        g: &mut Graph,
        memory: Var,
        memory_mask: &[bool],
        batch_size: usize,
        mem_len: usize,
        dec_in: &[usize],
        len_q: usize,
    ) -> Result<Var, ModelError> {
        let mut y = self.embed(g, dec_in, len_q)?;
        let self_mask: Vec<bool> = dec_in.iter().map(|&t| t != PAD).collect();
        for layer in &self.layout.decoder {
            let h = self.norm(g, y, layer.ln1)?;
            let geom = AttnGeom {
                batch: batch_size,
                len_q,
                len_k: len_q,
                heads: self.config.heads,
                key_mask: self_mask.clone(),
                causal: true,
            };
            let h = self.attend(g, h, h, layer.self_attn, geom)?;
            y = g.add(y, h)?;
            let h = self.norm(g, y, layer.ln2)?;
            let geom = AttnGeom {
                batch: batch_size,
                len_q,
                len_k: mem_len,
                heads: self.config.heads,
                key_mask: memory_mask.to_vec(),
                causal: false,
            };
            let h = self.attend(g, h, memory, layer.cross_attn, geom)?;
            y = g.add(y, h)?;
            let h = self.norm(g, y, layer.ln3)?;
            let h = self.dense2(g, h, layer.ff)?;
            y = g.add(y, h)?;
        }
        let y = self.norm(g, y, self.layout.dec_norm)?;
        let (w, b) = (g.param(&self.params, self.layout.out_w), g.param(&self.params, self.layout.out_b));
        Ok(g.linear(y, w, b)?)
    }

    /// Teacher-forced logits from a received frame var.
    pub fn decode_logits(&self, g: &mut Graph, zhat: Var, batch: &Batch) -> Result<Var, ModelError> {
        let xhat = self.jscc_decode(g, zhat)?;
        self.semantic_decode(g, xhat, &batch.src_mask, batch.size, batch.len, &batch.dec_in, batch.len)
    }

    /// Full chain with channel noise drawn from `rng` (a constant in backward);
    /// returns the masked cross-entropy.
    pub fn forward_loss<R: Rng + ?Sized>(&self, g: &mut Graph, batch: &Batch, snr: Snr, rng: &mut R) -> Result<Var, ModelError> {
        let x = self.semantic_encode(g, batch)?;
        let z = self.jscc_encode(g, x, batch)?;
        let zhat = match snr {
            Snr::Noiseless => z,
            snr => {
                let noise = awgn_noise(g.value(z).len(), snr, rng);
                g.add_const(z, &noise)?
            }
        };
        let logits = self.decode_logits(g, zhat, batch)?;
        Ok(g.cross_entropy(logits, &batch.target, &batch.target_mask)?)
    }

    /// Receiver side: `Ẑ → X̂ → Ŝ`.
    pub fn decode(&self, zhat: &ChannelFrame, batch: &Batch, mode: DecodeMode) -> Result<Decoded, ModelError> {
        let two_n = 2 * self.config.symbols_per_token;
        if zhat.batch() != batch.size || zhat.data().len() != batch.size * batch.len * two_n {
            return Err(ModelError::Config(format!(
                "frame {:?} does not match batch {}x{} with N={}",
                zhat.shape(),
                batch.size,
                batch.len,
                self.config.symbols_per_token
            )));
        }
        let mut g = Graph::new();
        let z = g.input(vec![batch.size * batch.len, two_n], zhat.data().to_vec())?;
        match mode {
            DecodeMode::TeacherForced => {
                let logits = self.decode_logits(&mut g, z, batch)?;
                let t = Tensor::new(vec![batch.size * batch.len, self.config.vocab], g.value(logits).to_vec())?;
                Ok(Decoded::Logits(t))
            }
            DecodeMode::Greedy => {
                let xhat = self.jscc_decode(&mut g, z)?;
                let memory = g.value(xhat).to_vec();
                let d = self.config.d_model;
                let tokens = greedy_loop(batch.size, self.config.max_len, self.config.vocab, |dec_in, len_q| {
                    let mut g = Graph::new();
                    let mem = g.input(vec![batch.size * batch.len, d], memory.clone())?;
                    let logits =
                        self.semantic_decode(&mut g, mem, &batch.src_mask, batch.size, batch.len, dec_in, len_q)?;
                    Ok(g.value(logits).to_vec())
                })?;
                Ok(Decoded::Tokens(tokens))
            }
        }
    }

    /// Sends `sentences` through the chain and greedily decodes them.
    /// Noise for the `i`-th batch comes from `channel.rng(call_base + i)`.
    pub fn transmit(
        &self,
        sentences: &[SentenceIds],
        channel: &ChannelConfig,
        batch_size: usize,
        call_base: u64,
    ) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut out = Vec::with_capacity(sentences.len());
        for (i, chunk) in sentences.chunks(batch_size.max(1)).enumerate() {
            let refs: Vec<&SentenceIds> = chunk.iter().collect();
            let batch = Batch::new(&refs, &self.config)?;
            let z = self.transmit_frame(&batch)?;
            let zhat = awgn_transmit(&z, channel, &mut channel.rng(call_base + i as u64));
            match self.decode(&zhat, &batch, DecodeMode::Greedy)? {
                Decoded::Tokens(t) => out.extend(t),
                Decoded::Logits(_) => unreachable!(),
            }
        }
        Ok(out)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Left-to-right argmax decoding from SOS. `step(dec_in, len_q)` returns
/// `[B·len_q × V]` logits for the current prefixes; ties go to the lowest
/// id; a row stops at EOS or after `max_len` tokens.
pub fn greedy_loop<F>(batch: usize, max_len: usize, vocab: usize, mut step: F) -> Result<Vec<Vec<usize>>, ModelError>
where
    F: FnMut(&[usize], usize) -> Result<Vec<f32>, ModelError>,
{
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); batch];
    let mut done = vec![false; batch];
    let mut prefixes: Vec<Vec<usize>> = vec![vec![SOS]; batch];
    for t in 0..max_len {
        let len_q = t + 1;
        let dec_in: Vec<usize> = prefixes.iter().flatten().copied().collect();
        let logits = step(&dec_in, len_q)?;
        for r in 0..batch {
            let row = &logits[(r * len_q + t) * vocab..][..vocab];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            if !done[r] {
                if best == EOS {
                    done[r] = true;
                } else {
                    out[r].push(best);
                }
            }
            prefixes[r].push(if done[r] { PAD } else { best });
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(out)
}

/// One shuffled pass in minibatches with an optimizer step per batch.
/// Returns the mean batch loss.
pub fn train_epoch<R: Rng>(
    model: &mut SemanticModel,
    sentences: &[SentenceIds],
    snr: Snr,
    batch_size: usize,
    opt: &mut OptimizerState,
    rng: &mut R,
) -> Result<f32, ModelError> {
    run_epoch(model, sentences, snr, batch_size, Some(opt), rng)
}

/// Same batching and noise draws as [`train_epoch`] without updating.
pub fn evaluate_loss<R: Rng>(
    model: &mut SemanticModel,
    sentences: &[SentenceIds],
    snr: Snr,
    batch_size: usize,
    rng: &mut R,
) -> Result<f32, ModelError> {
    run_epoch(model, sentences, snr, batch_size, None, rng)
}

fn run_epoch<R: Rng>(
    model: &mut SemanticModel,
    sentences: &[SentenceIds],
    snr: Snr,
    batch_size: usize,
    mut opt: Option<&mut OptimizerState>,
    rng: &mut R,
) -> Result<f32, ModelError> {
    if sentences.is_empty() {
        return Err(ModelError::NoData);
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(rng);
    let mut total = 0f64;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size.max(1)) {
        let refs: Vec<&SentenceIds> = chunk.iter().map(|&i| &sentences[i]).collect();
        let batch = Batch::new(&refs, &model.config)?;
        let mut g = Graph::new();
        let loss = match model.forward_loss(&mut g, &batch, snr, rng) {
            Err(ModelError::Nn(crate::NnError::NonFinite(_))) => return Err(ModelError::Diverged { step: batches }),
            r => r?,
        };
        let value = g.value(loss)[0];
        if !value.is_finite() {
            return Err(ModelError::Diverged { step: batches });
        }
        if let Some(opt) = opt.as_deref_mut() {
            g.backward(loss, &mut model.params)?;
            opt.step(&mut model.params)?;
        }
        total += value as f64;
        batches += 1;
    }
    Ok((total / batches as f64) as f32)
}
