//! Two-party cooperative training: local epochs on private data alternate
//! with quantized parameter exchanges aggregated on party B.
//!
//! Exchange protocol for round `k`:
//! 1. A quantizes its parameters and sends them to B.
//! 2. B dequantizes, aggregates `θ = m_A·θ_A + m_B·θ_B`, quantizes the
//!    aggregate and sends it back.
//! 3. Both parties adopt the dequantized aggregate and reset their optimizer
//!    moments, so their parameters are bitwise identical afterwards.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::mpsc::{self, Receiver, Sender};

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::channel::Snr;
use crate::corpus::SentenceIds;
use crate::error::{CoopError, ModelError};
use crate::model::{train_epoch, ModelConfig, SemanticModel};
use crate::nn::{OptimizerState, ParamSet, Tensor};
use crate::quant::{decode_message, encode_message, MessageMeta, Party, QuantizedParamSet};
use crate::util::rng_stream;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeSchedule {
    total_epochs: usize,
    exchange_epochs: Vec<usize>,
}

/// Exchanges after epochs `⌊kE/R⌋`, `k = 1..=R`; the last one is always `E`.
pub fn make_schedule(total_epochs: usize, rounds: usize) -> Result<ExchangeSchedule, CoopError> {
    if rounds == 0 || rounds > total_epochs {
        return Err(CoopError::Schedule(format!("need 1 <= R <= E, got R={rounds} E={total_epochs}")));
    }
    let exchange_epochs = (1..=rounds).map(|k| k * total_epochs / rounds).collect();
    Ok(ExchangeSchedule { total_epochs, exchange_epochs })
}

impl ExchangeSchedule {
    /// No exchanges at all: two independent trainings.
    pub fn independent(total_epochs: usize) -> Self {
        Self { total_epochs, exchange_epochs: Vec::new() }
    }

    /// `R = 0` means [`ExchangeSchedule::independent`].
    pub fn with_rounds(total_epochs: usize, rounds: usize) -> Result<Self, CoopError> {
        if rounds == 0 {
            return Ok(Self::independent(total_epochs));
        }
        make_schedule(total_epochs, rounds)
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn rounds(&self) -> usize {
        self.exchange_epochs.len()
    }

    pub fn exchange_epochs(&self) -> &[usize] {
        &self.exchange_epochs
    }

    /// One-based round index if an exchange follows `epoch`.
    pub fn round_after(&self, epoch: usize) -> Option<u32> {
        self.exchange_epochs.binary_search(&epoch).ok().map(|i| i as u32 + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationWeights {
    m_a: f64,
}

impl AggregationWeights {
    pub fn new(m_a: f64) -> Result<Self, CoopError> {
        if !(0.0..=1.0).contains(&m_a) {
            return Err(CoopError::BadWeight(m_a));
        }
        Ok(Self { m_a })
    }

    /// `m_A = |A| / (|A| + |B|)`.
    pub fn from_sizes(a: u64, b: u64) -> Result<Self, CoopError> {
        if a + b == 0 {
            return Err(CoopError::BadWeight(f64::NAN));
        }
        Self::new(a as f64 / (a + b) as f64)
    }

    pub fn m_a(&self) -> f64 {
        self.m_a
    }

    pub fn m_b(&self) -> f64 {
        1.0 - self.m_a
    }
}

/// `θ = m_A·θ_A + m_B·θ_B` for every tensor, accumulated in f64.
pub fn aggregate(a: &ParamSet, b: &ParamSet, w: AggregationWeights) -> Result<ParamSet, CoopError> {
    if a.len() != b.len() {
        let index = a.len().min(b.len());
        let name = if a.len() > b.len() { a.name(index) } else { b.name(index) }.to_owned();
        return Err(CoopError::Mismatch { index, name, detail: format!("tensor counts {} vs {}", a.len(), b.len()) });
    }
    let (ma, mb) = (w.m_a(), w.m_b());
    let mut out = ParamSet::new();
    for (index, ((na, ta), (nb, tb))) in a.iter().zip(b.iter()).enumerate() {
        if na != nb {
            return Err(CoopError::Mismatch { index, name: na.to_owned(), detail: format!("name {nb:?} on the other side") });
        }
        if ta.shape() != tb.shape() {
            return Err(CoopError::Mismatch {
                index,
                name: na.to_owned(),
                detail: format!("shape {:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (ma * x as f64 + mb * y as f64) as f32).collect();
        out.push(na, Tensor::new(ta.shape().to_vec(), data).map_err(ModelError::from)?).map_err(ModelError::from)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub snr: Snr,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 80, warmup_epochs: 10, batch_size: 32, lr: OptimizerState::DEFAULT_LR, snr: Snr::Db(15.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Both parties on the calling thread, A's epoch before B's.
    Sequential,
    /// One thread per party meeting at each exchange.
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoopConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Communication rounds; 0 disables exchange.
    pub rounds: usize,
    pub seed: u64,
    pub mode: ExecMode,
}

/// The three training partitions a run uses.
#[derive(Debug, Clone, Copy)]
pub struct CoopData<'a> {
    pub public: &'a [SentenceIds],
    pub private_a: &'a [SentenceIds],
    pub private_b: &'a [SentenceIds],
}

impl CoopData<'_> {
    fn private(&self, party: Party) -> &[SentenceIds] {
        match party {
            Party::A => self.private_a,
            Party::B => self.private_b,
        }
    }
}

/// Trains one shared starting model on the public split. With zero warmup
/// epochs (or no public data) this is the seeded random initialization.
pub fn pretrain_public(
    model: ModelConfig,
    train: &TrainConfig,
    public: &[SentenceIds],
    seed: u64,
) -> Result<SemanticModel, ModelError> {
    let mut m = SemanticModel::new(model, seed)?;
    if public.is_empty() {
        return Ok(m);
    }
    let mut opt = OptimizerState::new(train.lr);
    let mut rng = rng_stream(seed, 1);
    for _ in 0..train.warmup_epochs {
        train_epoch(&mut m, public, train.snr, train.batch_size, &mut opt, &mut rng)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub party: Party,
    pub loss: f32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeRecord {
    pub round: u32,
    pub epoch: usize,
    pub bytes_a_to_b: usize,
    pub bytes_b_to_a: usize,
    /// SHA-256 of each party's parameters right after adoption.
    pub digest_a: String,
    pub digest_b: String,
}

impl ExchangeRecord {
    pub fn total_bytes(&self) -> usize {
        self.bytes_a_to_b + self.bytes_b_to_a
    }
}

#[derive(Debug, Clone)]
pub struct CoopRunRecord {
    pub schedule: ExchangeSchedule,
    pub weights: AggregationWeights,
    pub losses: Vec<EpochLoss>,
    pub exchanges: Vec<ExchangeRecord>,
    pub initial: ParamSet,
    pub final_a: SemanticModel,
    pub final_b: SemanticModel,
    /// Set when a party hit a non-finite loss; the record is then partial.
    pub diverged: Option<(Party, usize)>,
}

impl CoopRunRecord {
    pub fn exchanged_bytes(&self) -> usize {
        self.exchanges.iter().map(ExchangeRecord::total_bytes).sum()
    }

    /// `epoch,party,loss` rows sorted by epoch then party.
    pub fn losses_csv(&self) -> String {
        let mut s = String::from("epoch,party,loss\n");
        for l in &self.losses {
            writeln!(s, "{},{},{}", l.epoch, l.party.as_char(), l.loss).unwrap();
        }
        s
    }

    pub fn exchanges_csv(&self) -> String {
        let mut s = String::from("round,epoch,bytes_a_to_b,bytes_b_to_a\n");
        for e in &self.exchanges {
            writeln!(s, "{},{},{},{}", e.round, e.epoch, e.bytes_a_to_b, e.bytes_b_to_a).unwrap();
        }
        s
    }
}

pub fn params_digest(p: &ParamSet) -> String {
    Sha256::digest(p.to_bytes()).iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// Byte pipe between the parties.
pub trait Transport {
    fn send(&mut self, bytes: Vec<u8>) -> Result<(), CoopError>;
    fn recv(&mut self) -> Result<Vec<u8>, CoopError>;
}

/// One end of an in-process queue pair.
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl ChannelTransport {
    pub fn pair() -> (Self, Self) {
        let (ta, rb) = mpsc::channel();
        let (tb, ra) = mpsc::channel();
        (Self { tx: ta, rx: ra }, Self { tx: tb, rx: rb })
    }
}

impl Transport for ChannelTransport {
    fn send(&mut self, bytes: Vec<u8>) -> Result<(), CoopError> {
        self.tx.send(bytes).map_err(|_| CoopError::PeerGone)
    }

    fn recv(&mut self) -> Result<Vec<u8>, CoopError> {
        self.rx.recv().map_err(|_| CoopError::PeerGone)
    }
}

/// Single-threaded mailbox; `recv` on an empty box means the peer never sent.
#[derive(Default)]
struct Mailbox(VecDeque<Vec<u8>>);

struct LoopbackEnd<'a> {
    outbox: &'a std::cell::RefCell<Mailbox>,
    inbox: &'a std::cell::RefCell<Mailbox>,
}

impl Transport for LoopbackEnd<'_> {
    fn send(&mut self, bytes: Vec<u8>) -> Result<(), CoopError> {
        self.outbox.borrow_mut().0.push_back(bytes);
        Ok(())
    }

    fn recv(&mut self) -> Result<Vec<u8>, CoopError> {
        self.inbox.borrow_mut().0.pop_front().ok_or(CoopError::PeerGone)
    }
}

struct PartyState<'a> {
    party: Party,
    model: SemanticModel,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    data: &'a [SentenceIds],
    losses: Vec<EpochLoss>,
    digests: Vec<String>,
}

impl<'a> PartyState<'a> {
    fn new(party: Party, start: &SemanticModel, cfg: &CoopConfig, data: &'a [SentenceIds]) -> Self {
        Self {
            party,
            model: start.clone(),
            opt: OptimizerState::new(cfg.train.lr),
            rng: rng_stream(cfg.seed, 10 + party as u64),
            data,
            losses: Vec::new(),
            digests: Vec::new(),
        }
    }

    /// `Ok(false)` when the loss went non-finite.
    fn train(&mut self, epoch: usize, train: &TrainConfig) -> Result<bool, CoopError> {
        match train_epoch(&mut self.model, self.data, train.snr, train.batch_size, &mut self.opt, &mut self.rng) {
            Ok(loss) => {
                self.losses.push(EpochLoss { epoch, party: self.party, loss });
                Ok(true)
            }
            Err(ModelError::Diverged { .. }) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn adopt(&mut self, q: &QuantizedParamSet) -> Result<(), CoopError> {
        let p = q.dequantize();
        self.model.params_mut().assign_from(&p).map_err(ModelError::from)?;
        self.opt.reset_moments();
        self.digests.push(params_digest(self.model.params()));
        Ok(())
    }

    fn meta(&self, round: u32) -> MessageMeta {
        MessageMeta { round, party: self.party, data_size: self.data.len() as u64 }
    }
}

fn a_send(a: &PartyState, round: u32, t: &mut dyn Transport) -> Result<usize, CoopError> {
    let bytes = encode_message(&QuantizedParamSet::from_params(a.model.params()), &a.meta(round));
    let n = bytes.len();
    t.send(bytes)?;
    Ok(n)
}

fn expect_round(meta: &MessageMeta, round: u32, from: Party) -> Result<(), CoopError> {
    if meta.round != round || meta.party != from {
        return Err(crate::MessageError::Invalid(format!(
            "expected round {round} from {}, got round {} from {}",
            from.as_char(),
            meta.round,
            meta.party.as_char()
        ))
        .into());
    }
    Ok(())
}

/// B's side of a round; returns `(bytes received, bytes sent)`.
fn b_respond(b: &mut PartyState, round: u32, t: &mut dyn Transport) -> Result<(usize, usize), CoopError> {
    let incoming = t.recv()?;
    let (meta, qa) = decode_message(&incoming)?;
    expect_round(&meta, round, Party::A)?;
    let w = AggregationWeights::from_sizes(meta.data_size, b.data.len() as u64)?;
    let merged = aggregate(&qa.dequantize(), b.model.params(), w)?;
    let q = QuantizedParamSet::from_params(&merged);
    let bytes = encode_message(&q, &b.meta(round));
    let sent = bytes.len();
    t.send(bytes)?;
    b.adopt(&q)?;
    Ok((incoming.len(), sent))
}

fn a_receive(a: &mut PartyState, round: u32, t: &mut dyn Transport) -> Result<(), CoopError> {
    let (meta, q) = decode_message(&t.recv()?)?;
    expect_round(&meta, round, Party::B)?;
    a.adopt(&q)
}

struct PartyOutcome<'a> {
    state: PartyState<'a>,
    diverged: Option<usize>,
    traffic: Vec<(usize, usize)>,
}

/// Warm start, then `E` epochs per party with exchanges per the schedule.
pub fn run_cooperative_training(cfg: &CoopConfig, data: CoopData<'_>) -> Result<CoopRunRecord, CoopError> {
    let schedule = ExchangeSchedule::with_rounds(cfg.train.epochs, cfg.rounds)?;
    let weights = AggregationWeights::from_sizes(data.private_a.len() as u64, data.private_b.len() as u64)?;
    let start = pretrain_public(cfg.model, &cfg.train, data.public, cfg.seed)?;
    let a = PartyState::new(Party::A, &start, cfg, data.private(Party::A));
    let b = PartyState::new(Party::B, &start, cfg, data.private(Party::B));
    let (oa, ob) = match cfg.mode {
        ExecMode::Sequential => run_sequential(a, b, &schedule, &cfg.train)?,
        ExecMode::Concurrent => run_concurrent(a, b, &schedule, &cfg.train)?,
    };
    let diverged = oa.diverged.map(|e| (Party::A, e)).or(ob.diverged.map(|e| (Party::B, e)));
    let exchanges = ob
        .traffic
        .iter()
        .zip(oa.state.digests.iter().zip(&ob.state.digests))
        .enumerate()
        .map(|(i, (&(ab, ba), (da, db)))| ExchangeRecord {
            round: i as u32 + 1,
            epoch: schedule.exchange_epochs()[i],
            bytes_a_to_b: ab,
            bytes_b_to_a: ba,
            digest_a: da.clone(),
            digest_b: db.clone(),
        })
        .collect();
    let mut losses: Vec<EpochLoss> = oa.state.losses.iter().chain(&ob.state.losses).copied().collect();
    losses.sort_by_key(|l| (l.epoch, l.party));
    Ok(CoopRunRecord {
        schedule,
        weights,
        losses,
        exchanges,
        initial: start.params().clone(),
        final_a: oa.state.model,
        final_b: ob.state.model,
        diverged,
    })
}

type Outcomes<'a> = (PartyOutcome<'a>, PartyOutcome<'a>);

fn run_sequential<'a>(
    a: PartyState<'a>,
    b: PartyState<'a>,
    schedule: &ExchangeSchedule,
    train: &TrainConfig,
) -> Result<Outcomes<'a>, CoopError> {
    let (ab, ba) = (std::cell::RefCell::new(Mailbox::default()), std::cell::RefCell::new(Mailbox::default()));
    let mut ta = LoopbackEnd { outbox: &ab, inbox: &ba };
    let mut tb = LoopbackEnd { outbox: &ba, inbox: &ab };
    let mut oa = PartyOutcome { state: a, diverged: None, traffic: Vec::new() };
    let mut ob = PartyOutcome { state: b, diverged: None, traffic: Vec::new() };
    for epoch in 1..=schedule.total_epochs() {
        if !oa.state.train(epoch, train)? {
            oa.diverged = Some(epoch);
        }
        if !ob.state.train(epoch, train)? {
            ob.diverged = Some(epoch);
        }
        if oa.diverged.is_some() || ob.diverged.is_some() {
            break;
        }
        if let Some(round) = schedule.round_after(epoch) {
            a_send(&oa.state, round, &mut ta)?;
            ob.traffic.push(b_respond(&mut ob.state, round, &mut tb)?);
            a_receive(&mut oa.state, round, &mut ta)?;
        }
    }
    Ok((oa, ob))
}

fn run_party<'a>(
    mut out: PartyOutcome<'a>,
    schedule: &ExchangeSchedule,
    train: &TrainConfig,
    mut t: ChannelTransport,
) -> Result<PartyOutcome<'a>, CoopError> {
    for epoch in 1..=schedule.total_epochs() {
        if !out.state.train(epoch, train)? {
            out.diverged = Some(epoch);
            // Dropping the transport releases the peer blocked on recv.
            return Ok(out);
        }
        if let Some(round) = schedule.round_after(epoch) {
            let step = match out.state.party {
                Party::A => a_send(&out.state, round, &mut t).and_then(|_| a_receive(&mut out.state, round, &mut t)),
                Party::B => b_respond(&mut out.state, round, &mut t).map(|traffic| out.traffic.push(traffic)),
            };
            match step {
                Ok(()) => {}
                // The peer stopped early; its own outcome carries the reason.
                Err(CoopError::PeerGone) => return Ok(out),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

fn run_concurrent<'a>(
    a: PartyState<'a>,
    b: PartyState<'a>,
    schedule: &ExchangeSchedule,
    train: &TrainConfig,
) -> Result<Outcomes<'a>, CoopError> {
    let (ta, tb) = ChannelTransport::pair();
    let oa = PartyOutcome { state: a, diverged: None, traffic: Vec::new() };
    let ob = PartyOutcome { state: b, diverged: None, traffic: Vec::new() };
    std::thread::scope(|s| {
        let ha = s.spawn(move || run_party(oa, schedule, train, ta));
        let hb = s.spawn(move || run_party(ob, schedule, train, tb));
        let ra = ha.join().expect("party A thread panicked");
        let rb = hb.join().expect("party B thread panicked");
        Ok((ra?, rb?))
    })
}

/// One party alone on its own data from the shared warm start: the
/// cooperative loop with exchange disabled.
pub fn self_train(cfg: &CoopConfig, data: CoopData<'_>, party: Party) -> Result<(SemanticModel, Vec<EpochLoss>), CoopError> {
    let start = pretrain_public(cfg.model, &cfg.train, data.public, cfg.seed)?;
    let mut st = PartyState::new(party, &start, cfg, data.private(party));
    for epoch in 1..=cfg.train.epochs {
        if !st.train(epoch, &cfg.train)? {
            return Err(CoopError::Diverged { party: party.as_char(), epoch });
        }
    }
    Ok((st.model, st.losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::params_from;

    #[test]
    fn schedules() {
        assert_eq!(make_schedule(80, 8).unwrap().exchange_epochs(), &[10, 20, 30, 40, 50, 60, 70, 80]);
        assert_eq!(make_schedule(80, 1).unwrap().exchange_epochs(), &[80]);
        let every2: Vec<usize> = (1..=40).map(|k| 2 * k).collect();
        assert_eq!(make_schedule(80, 40).unwrap().exchange_epochs(), every2.as_slice());
        assert_eq!(make_schedule(10, 3).unwrap().exchange_epochs(), &[3, 6, 10]);
        assert!(make_schedule(5, 6).is_err());
        assert!(make_schedule(5, 0).is_err());
        assert_eq!(ExchangeSchedule::with_rounds(5, 0).unwrap().rounds(), 0);
        let s = make_schedule(80, 8).unwrap();
        assert_eq!(s.round_after(30), Some(3));
        assert_eq!(s.round_after(31), None);
    }

    #[test]
    fn weights_from_sizes() {
        assert_eq!(AggregationWeights::from_sizes(60, 20).unwrap().m_a(), 0.75);
        assert_eq!(AggregationWeights::from_sizes(40, 40).unwrap().m_a(), 0.5);
        assert!(AggregationWeights::from_sizes(0, 0).is_err());
        assert!(AggregationWeights::new(1.5).is_err());
    }

    fn set(v: f32) -> ParamSet {
        params_from(vec![("w", Tensor::full(&[2, 3], v)), ("b", Tensor::full(&[3], -v))])
    }

    #[test]
    fn aggregate_examples() {
        let x = params_from(vec![("w", Tensor::new(vec![3], vec![0.1, -7.25, 3.3]).unwrap())]);
        let half = AggregationWeights::new(0.5).unwrap();
        assert!(aggregate(&x, &x, half).unwrap().bitwise_eq(&x));
        assert!(aggregate(&x, &x, AggregationWeights::new(0.3).unwrap()).unwrap().bitwise_eq(&x));
        assert!(aggregate(&set(0.4), &set(9.0), AggregationWeights::new(1.0).unwrap()).unwrap().bitwise_eq(&set(0.4)));
        assert!(aggregate(&set(0.0), &set(2.0), half).unwrap().bitwise_eq(&set(1.0)));
    }

    #[test]
    fn aggregate_mismatch_names_tensor() {
        let other = params_from(vec![("w", Tensor::full(&[2, 3], 0.0)), ("c", Tensor::full(&[3], 0.0))]);
        match aggregate(&set(1.0), &other, AggregationWeights::new(0.5).unwrap()) {
            Err(CoopError::Mismatch { index: 1, name, .. }) => assert_eq!(name, "b"),
            r => panic!("{r:?}"),
        }
        let other = params_from(vec![("w", Tensor::full(&[3, 2], 0.0)), ("b", Tensor::full(&[3], 0.0))]);
        assert!(matches!(aggregate(&set(1.0), &other, AggregationWeights::new(0.5).unwrap()), Err(CoopError::Mismatch { index: 0, .. })));
    }

    fn tiny_cfg(rounds: usize, mode: ExecMode) -> CoopConfig {
        CoopConfig {
            model: ModelConfig { vocab: 12, max_len: 6, d_model: 8, symbols_per_token: 2, layers: 1, heads: 2, d_ff: 12 },
            train: TrainConfig { epochs: 4, warmup_epochs: 1, batch_size: 4, lr: 1e-3, snr: Snr::Db(15.0) },
            rounds,
            seed: 3,
            mode,
        }
    }

    fn data(n: usize, offset: usize) -> Vec<SentenceIds> {
        (0..n).map(|i| SentenceIds::new(vec![4 + (i + offset) % 8, 5 + i % 3, 4 + (i * 7 + offset) % 8])).collect()
    }

    #[test]
    fn exchanges_equalize_parties_and_count_bytes() {
        let (public, a, b) = (data(6, 0), data(12, 1), data(4, 2));
        let d = CoopData { public: &public, private_a: &a, private_b: &b };
        let rec = run_cooperative_training(&tiny_cfg(2, ExecMode::Sequential), d).unwrap();
        assert_eq!(rec.weights.m_a(), 0.75);
        assert_eq!(rec.exchanges.len(), 2);
        for e in &rec.exchanges {
            assert_eq!(e.digest_a, e.digest_b);
            assert_eq!(e.bytes_a_to_b, e.bytes_b_to_a);
        }
        let msg = encode_message(
            &QuantizedParamSet::from_params(rec.final_a.params()),
            &MessageMeta { round: 0, party: Party::A, data_size: 0 },
        )
        .len();
        assert_eq!(rec.exchanged_bytes(), 2 * 2 * msg);
        assert!(rec.final_a.params().bitwise_eq(rec.final_b.params()));
        assert_eq!(rec.losses.len(), 8);
    }

    #[test]
    fn concurrent_matches_sequential() {
        let (public, a, b) = (data(6, 0), data(10, 1), data(7, 2));
        let d = CoopData { public: &public, private_a: &a, private_b: &b };
        let s = run_cooperative_training(&tiny_cfg(3, ExecMode::Sequential), d).unwrap();
        let c = run_cooperative_training(&tiny_cfg(3, ExecMode::Concurrent), d).unwrap();
        assert!(s.final_a.params().bitwise_eq(c.final_a.params()));
        assert!(s.final_b.params().bitwise_eq(c.final_b.params()));
        assert_eq!(s.exchanges, c.exchanges);
        assert_eq!(s.losses_csv(), c.losses_csv());
    }

    #[test]
    fn identical_parties_stay_in_lockstep() {
        let (public, a) = (data(6, 0), data(8, 1));
        let cfg = tiny_cfg(4, ExecMode::Sequential);
        let start = pretrain_public(cfg.model, &cfg.train, &public, cfg.seed).unwrap();
        let pa = PartyState::new(Party::A, &start, &cfg, &a);
        let mut pb = PartyState::new(Party::B, &start, &cfg, &a);
        pb.rng = pa.rng.clone();
        let schedule = make_schedule(cfg.train.epochs, cfg.rounds).unwrap();
        let (oa, ob) = run_sequential(pa, pb, &schedule, &cfg.train).unwrap();
        let loss = |o: &PartyOutcome| o.state.losses.iter().map(|l| l.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(loss(&oa), loss(&ob));
        assert_eq!(oa.state.digests, ob.state.digests);
        let p = oa.state.model.params();
        assert!(aggregate(p, p, AggregationWeights::new(0.5).unwrap()).unwrap().bitwise_eq(p));
    }

    #[test]
    fn zero_rounds_match_self_training() {
        let (public, a, b) = (data(6, 0), data(9, 1), data(5, 2));
        let d = CoopData { public: &public, private_a: &a, private_b: &b };
        let cfg = tiny_cfg(0, ExecMode::Concurrent);
        let rec = run_cooperative_training(&cfg, d).unwrap();
        assert!(rec.exchanges.is_empty());
        let (ma, la) = self_train(&cfg, d, Party::A).unwrap();
        let (mb, _) = self_train(&cfg, d, Party::B).unwrap();
        assert!(rec.final_a.params().bitwise_eq(ma.params()));
        assert!(rec.final_b.params().bitwise_eq(mb.params()));
        let rec_a: Vec<EpochLoss> = rec.losses.iter().filter(|l| l.party == Party::A).copied().collect();
        assert_eq!(rec_a, la);
    }

    #[test]
    fn warm_start_is_shared() {
        let public = data(6, 0);
        let cfg = tiny_cfg(1, ExecMode::Sequential);
        let x = pretrain_public(cfg.model, &cfg.train, &public, 9).unwrap();
        let y = pretrain_public(cfg.model, &cfg.train, &public, 9).unwrap();
        assert!(x.params().bitwise_eq(y.params()));
        let cold = TrainConfig { warmup_epochs: 0, ..cfg.train };
        let z = pretrain_public(cfg.model, &cold, &public, 9).unwrap();
        assert!(z.params().bitwise_eq(SemanticModel::new(cfg.model, 9).unwrap().params()));
    }

    #[test]
    fn divergence_yields_partial_record() {
        let (public, a, b) = (data(6, 0), data(8, 1), data(8, 2));
        let d = CoopData { public: &public, private_a: &a, private_b: &b };
        for mode in [ExecMode::Sequential, ExecMode::Concurrent] {
            let mut cfg = tiny_cfg(2, mode);
            cfg.train.lr = 1e30;
            cfg.train.warmup_epochs = 0;
            let rec = run_cooperative_training(&cfg, d).unwrap();
            assert!(rec.diverged.is_some(), "{mode:?}");
            assert!(rec.losses.len() < 8);
        }
    }

    #[test]
    fn transport_reports_hangup() {
        let (mut x, y) = ChannelTransport::pair();
        drop(y);
        assert!(matches!(x.recv(), Err(CoopError::PeerGone)));
    }
}
