//! Experiment runner: round sweep, SNR sweep, baselines and the
//! quantization bench. Every sweep is a list of jobs run on a worker pool
//! and reassembled in job order, so outputs do not depend on scheduling.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::ChannelConfig;
use crate::classic::rs::RsCode;
use crate::classic::{classic_pipeline, ClassicCodec};
use crate::coop::{run_cooperative_training, CoopConfig, CoopData, CoopRunRecord, ExecMode};
use crate::corpus::{
    build_vocab, partition, synthetic_mismatched_split, tokenize_and_filter, CorpusSplit, SentenceIds, Split, SplitSpec,
    TopicParams, Vocabulary, NUM_SPECIALS,
};
use crate::error::HarnessError;
use crate::metrics::MetricsReport;
use crate::model::SemanticModel;
use crate::nn::Tensor;
use crate::quant::{encode_message, quantize, dequantize, MessageMeta, Party, QuantizedParamSet};
use crate::util::{rng_stream, write_atomic};

pub use config::*;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "-", env!("TCLSC_GIT_DESCRIBE"));

pub const RESULTS_HEADER: &str = "scheme,case,snr_db,rounds,seed,bleu1,bleu2,sentence_similarity_proxy,word_accuracy,exchanged_bytes,symbols_per_token,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Diverged,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub case: String,
    pub snr_db: f64,
    pub rounds: usize,
    pub seed: u64,
    /// `None` when the run diverged.
    pub metrics: Option<MetricsReport>,
    pub exchanged_bytes: usize,
    pub symbols_per_token: f64,
    pub status: RunStatus,
    /// Training plus evaluation time; written to `timings.csv` only.
    pub wall_seconds: f64,
}

impl ResultRow {
    fn key(&self) -> (String, Scheme, usize, u64, u64) {
        (self.case.clone(), self.scheme, self.rounds, self.snr_db.to_bits() ^ (1 << 63), self.seed)
    }

    pub fn csv_line(&self) -> String {
        let m = |f: fn(&MetricsReport) -> f64| self.metrics.as_ref().map(|r| format!("{:.6}", f(r))).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.4},{}",
            self.scheme.name(),
            self.case,
            self.snr_db,
            self.rounds,
            self.seed,
            m(|r| r.bleu1),
            m(|r| r.bleu2),
            m(|r| r.sentence_similarity_proxy),
            m(|r| r.word_accuracy),
            self.exchanged_bytes,
            self.symbols_per_token,
            self.status.as_str(),
        )
    }

    pub fn bleu1(&self) -> Option<f64> {
        self.metrics.map(|m| m.bleu1)
    }
}

/// Rows in a stable order: case, scheme, rounds, SNR, seed.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by_key(|a| a.key());
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        s += &r.csv_line();
        s.push('\n');
    }
    s
}

pub fn timings_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from("scheme,case,snr_db,rounds,seed,wall_seconds\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{:.3}", r.scheme.name(), r.case, r.snr_db, r.rounds, r.seed, r.wall_seconds).unwrap();
    }
    s
}

/// One corpus partition with its vocabulary, encoded.
#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub name: String,
    pub spec: SplitSpec,
    pub vocab: Vocabulary,
    pub split: CorpusSplit,
}

impl PreparedCase {
    pub fn data(&self) -> CoopData<'_> {
        CoopData { public: &self.split.public, private_a: &self.split.private_a, private_b: &self.split.private_b }
    }

    pub fn references(&self) -> Vec<Vec<usize>> {
        self.split.test.iter().map(|s| s.ids.clone()).collect()
    }

    /// What party A, the sender, knows: the public and its private split.
    fn sender_sentences(&self) -> Vec<SentenceIds> {
        self.split.public.iter().chain(&self.split.private_a).cloned().collect()
    }
}

/// Builds the partition for `case`. Synthetic corpora give party A and B
/// disjoint topics; file corpora are split at random. The vocabulary comes
/// from the three training partitions.
pub fn prepare_case(cfg: &ExperimentConfig, case: &str) -> Result<PreparedCase, HarnessError> {
    let spec = cfg.split_spec(case)?;
    let c = &cfg.corpus;
    let text: Split<Vec<String>> = match c.source {
        CorpusSource::Synthetic => {
            let keep = |v: Vec<Vec<String>>| -> Vec<Vec<String>> {
                v.into_iter().filter(|s| (c.min_len..=c.max_len).contains(&s.len())).collect()
            };
            let s = synthetic_mismatched_split(&TopicParams::default(), c.sentences, &spec)?;
            Split { public: keep(s.public), private_a: keep(s.private_a), private_b: keep(s.private_b), test: keep(s.test) }
        }
        CorpusSource::File => {
            let path = c.path.as_ref().expect("validated");
            let raw = std::fs::read(path).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
            partition(&tokenize_and_filter(&raw, c.min_len, c.max_len).sentences, &spec)?
        }
    };
    for (name, part) in text.parts() {
        if part.is_empty() && name != "public" {
            return Err(HarnessError::Config(format!("case {case}: the {name} partition is empty")));
        }
    }
    let training: Vec<Vec<String>> = text.public.iter().chain(&text.private_a).chain(&text.private_b).cloned().collect();
    let vocab = build_vocab(&training, c.min_freq, c.vocab_max - NUM_SPECIALS);
    let split = text.map(|s| vocab.encode(&s));
    Ok(PreparedCase { name: case.to_owned(), spec, vocab, split })
}

/// Frozen `N(0,1)` table shared by every scheme for the similarity proxy.
pub fn reference_table(vocab: usize, dim: usize) -> Tensor {
    Tensor::randn(&[vocab, dim], 1.0, &mut rng_stream(0x5eed, 0x7ab1e))
}

fn eval_channel(cfg: &ExperimentConfig, snr_db: f64, seed: u64) -> ChannelConfig {
    ChannelConfig::new(snr_db, cfg.eval.noise_seed.wrapping_mul(1_000_003).wrapping_add(seed))
}

fn learned_symbols_per_token(model: &SemanticModel, test: &[SentenceIds]) -> f64 {
    // Every sentence is sent with its EOS position.
    let tokens: usize = test.iter().map(SentenceIds::len).sum();
    let sent: usize = test.iter().map(|s| s.len() + 1).sum();
    (sent * model.config().symbols_per_token) as f64 / tokens.max(1) as f64
}

/// Greedy test-split scores of `model` at `snr_db`.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    prepared: &PreparedCase,
    model: &SemanticModel,
    snr_db: f64,
    seed: u64,
) -> Result<MetricsReport, HarnessError> {
    let out = model.transmit(&prepared.split.test, &eval_channel(cfg, snr_db, seed), cfg.eval.batch_size, 0)?;
    let table = reference_table(prepared.vocab.len(), cfg.model.d_model);
    Ok(MetricsReport::compute(&out, &prepared.references(), &table)?)
}

/// A trained point: one cooperative run (or an independent one for the
/// self-training baselines).
struct Trained {
    case: usize,
    rounds: usize,
    seed: u64,
    record: CoopRunRecord,
    seconds: f64,
}

impl Trained {
    fn status(&self) -> RunStatus {
        if self.record.diverged.is_some() {
            RunStatus::Diverged
        } else {
            RunStatus::Ok
        }
    }
}

/// One cooperative run for `case` with `rounds` exchanges; `rounds = 0`
/// trains both parties independently.
pub fn train_point(cfg: &ExperimentConfig, prepared: &PreparedCase, rounds: usize, seed: u64) -> Result<CoopRunRecord, HarnessError> {
    let cc = CoopConfig {
        model: cfg.model_config(prepared.vocab.len()),
        train: cfg.train_config(),
        rounds,
        seed,
        mode: if cfg.run.concurrent { ExecMode::Concurrent } else { ExecMode::Sequential },
    };
    Ok(run_cooperative_training(&cc, prepared.data())?)
}

/// Everything a sweep produced.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub command: String,
    pub rows: Vec<ResultRow>,
    pub runs: Vec<RunSummary>,
    /// Per case, per R: seed-averaged BLEU-1 and the plateau point.
    pub plateau: Vec<Plateau>,
}

impl SweepOutput {
    pub fn any_diverged(&self) -> bool {
        self.rows.iter().any(|r| r.status == RunStatus::Diverged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub id: String,
    pub case: String,
    pub rounds: usize,
    pub seed: u64,
    pub exchange_epochs: Vec<usize>,
    pub exchanged_bytes: usize,
    pub final_digest: String,
    pub status: RunStatus,
    pub losses_csv: String,
    pub exchanges_csv: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub case: String,
    pub mean_bleu1: Vec<(usize, f64)>,
    /// Smallest R whose mean BLEU-1 is within `delta` of the best.
    pub plateau_rounds: Option<usize>,
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

fn prepare_all(cfg: &ExperimentConfig) -> Result<Vec<PreparedCase>, HarnessError> {
    cfg.split.cases.iter().map(|c| prepare_case(cfg, c)).collect()
}

fn train_all(
    cfg: &ExperimentConfig,
    cases: &[PreparedCase],
    jobs: Vec<(usize, usize, u64)>,
) -> Result<Vec<Trained>, HarnessError> {
    pool(cfg)?.install(|| {
        jobs.into_par_iter()
            .map(|(case, rounds, seed)| {
                let t = Instant::now();
                let record = train_point(cfg, &cases[case], rounds, seed)?;
                Ok(Trained { case, rounds, seed, record, seconds: t.elapsed().as_secs_f64() })
            })
            .collect()
    })
}

fn summarize(cases: &[PreparedCase], t: &Trained) -> RunSummary {
    RunSummary {
        id: format!("{}_r{}_s{}", cases[t.case].name, t.rounds, t.seed),
        case: cases[t.case].name.clone(),
        rounds: t.rounds,
        seed: t.seed,
        exchange_epochs: t.record.schedule.exchange_epochs().to_vec(),
        exchanged_bytes: t.record.exchanged_bytes(),
        final_digest: crate::coop::params_digest(t.record.final_a.params()),
        status: t.status(),
        losses_csv: t.record.losses_csv(),
        exchanges_csv: t.record.exchanges_csv(),
    }
}

fn learned_row(
    cfg: &ExperimentConfig,
    cases: &[PreparedCase],
    t: &Trained,
    scheme: Scheme,
    snr_db: f64,
) -> Result<ResultRow, HarnessError> {
    let prepared = &cases[t.case];
    let model = if scheme == Scheme::SelftrainB { &t.record.final_b } else { &t.record.final_a };
    let start = Instant::now();
    let metrics = match t.status() {
        RunStatus::Ok => Some(evaluate_model(cfg, prepared, model, snr_db, t.seed)?),
        RunStatus::Diverged => None,
    };
    Ok(ResultRow {
        scheme,
        case: prepared.name.clone(),
        snr_db,
        rounds: t.rounds,
        seed: t.seed,
        metrics,
        exchanged_bytes: t.record.exchanged_bytes(),
        symbols_per_token: learned_symbols_per_token(model, &prepared.split.test),
        status: t.status(),
        wall_seconds: t.seconds + start.elapsed().as_secs_f64(),
    })
}

fn classic_rows(cfg: &ExperimentConfig, cases: &[PreparedCase]) -> Result<Vec<ResultRow>, HarnessError> {
    let rs = RsCode::new(cfg.classic.rs_n, cfg.classic.rs_k)?;
    let mut rows = Vec::new();
    for prepared in cases {
        let codec = ClassicCodec::from_sentences(&prepared.sender_sentences(), prepared.vocab.len(), rs.clone())?;
        let table = reference_table(prepared.vocab.len(), cfg.model.d_model);
        for &seed in &cfg.run.seeds {
            for &snr in &cfg.eval.snr_db {
                let t = Instant::now();
                let rep = classic_pipeline(&prepared.split.test, &codec, &eval_channel(cfg, snr, seed))?;
                let metrics = MetricsReport::compute(&rep.sentences, &prepared.references(), &table)?;
                rows.push(ResultRow {
                    scheme: Scheme::Classic,
                    case: prepared.name.clone(),
                    snr_db: snr,
                    rounds: 0,
                    seed,
                    metrics: Some(metrics),
                    exchanged_bytes: 0,
                    symbols_per_token: rep.symbols_per_token(),
                    status: RunStatus::Ok,
                    wall_seconds: t.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}

fn plateau(cases: &[PreparedCase], rows: &[ResultRow], list: &[usize], delta: f64) -> Vec<Plateau> {
    cases
        .iter()
        .map(|c| {
            let mean_bleu1: Vec<(usize, f64)> = list
                .iter()
                .filter_map(|&r| {
                    let v: Vec<f64> = rows.iter().filter(|x| x.case == c.name && x.rounds == r).filter_map(ResultRow::bleu1).collect();
                    (!v.is_empty()).then(|| (r, v.iter().sum::<f64>() / v.len() as f64))
                })
                .collect();
            let best = mean_bleu1.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let plateau_rounds = mean_bleu1.iter().filter(|p| p.1 >= best - delta).map(|p| p.0).min();
            Plateau { case: c.name.clone(), mean_bleu1, plateau_rounds }
        })
        .collect()
}

/// TCL-SC for every case × R × seed, trained at the configured training
/// SNR and scored at `rounds.eval_snr_db`.
pub fn run_round_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, HarnessError> {
    let cases = prepare_all(cfg)?;
    let mut list = cfg.rounds.list.clone();
    list.sort_unstable();
    list.dedup();
    let jobs = (0..cases.len())
        .flat_map(|c| list.iter().flat_map(move |&r| cfg.run.seeds.iter().map(move |&s| (c, r, s))))
        .collect();
    let trained = train_all(cfg, &cases, jobs)?;
    let mut rows = pool(cfg)?.install(|| {
        trained
            .par_iter()
            .map(|t| learned_row(cfg, &cases, t, Scheme::Tclsc, cfg.rounds.eval_snr_db))
            .collect::<Result<Vec<_>, _>>()
    })?;
    sort_rows(&mut rows);
    let plateau = plateau(&cases, &rows, &list, cfg.rounds.plateau_delta);
    Ok(SweepOutput {
        command: "round-sweep".into(),
        runs: trained.iter().map(|t| summarize(&cases, t)).collect(),
        rows,
        plateau,
    })
}

fn run_scheme_grid(cfg: &ExperimentConfig, command: &str, schemes: &[Scheme]) -> Result<SweepOutput, HarnessError> {
    if schemes.is_empty() {
        return Err(HarnessError::Config(format!("{command}: no applicable scheme in run.schemes")));
    }
    let cases = prepare_all(cfg)?;
    let mut round_counts = Vec::new();
    if schemes.contains(&Scheme::Tclsc) {
        round_counts.push(cfg.rounds.rounds);
    }
    if schemes.iter().any(|s| matches!(s, Scheme::SelftrainA | Scheme::SelftrainB)) {
        round_counts.push(0);
    }
    round_counts.dedup();
    let jobs = (0..cases.len())
        .flat_map(|c| {
            let rc = round_counts.clone();
            rc.into_iter().flat_map(move |r| cfg.run.seeds.iter().map(move |&s| (c, r, s)))
        })
        .collect();
    let trained = train_all(cfg, &cases, jobs)?;
    let mut evals = Vec::new();
    for (i, t) in trained.iter().enumerate() {
        for &scheme in schemes.iter().filter(|s| s.is_learned()) {
            let wanted = if scheme == Scheme::Tclsc { cfg.rounds.rounds } else { 0 };
            if t.rounds == wanted {
                for &snr in &cfg.eval.snr_db {
                    evals.push((i, scheme, snr));
                }
            }
        }
    }
    let mut rows = pool(cfg)?.install(|| {
        evals
            .par_iter()
            .map(|&(i, scheme, snr)| learned_row(cfg, &cases, &trained[i], scheme, snr))
            .collect::<Result<Vec<_>, _>>()
    })?;
    if schemes.contains(&Scheme::Classic) {
        rows.extend(classic_rows(cfg, &cases)?);
    }
    sort_rows(&mut rows);
    Ok(SweepOutput {
        command: command.into(),
        runs: trained.iter().map(|t| summarize(&cases, t)).collect(),
        rows,
        plateau: Vec::new(),
    })
}

/// Every configured scheme trained at the training SNR and scored across
/// the `eval.snr_db` grid.
pub fn run_snr_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, HarnessError> {
    run_scheme_grid(cfg, "snr-sweep", &cfg.run.schemes)
}

/// The SNR grid for the self-training and classic baselines only.
pub fn run_baseline(cfg: &ExperimentConfig) -> Result<SweepOutput, HarnessError> {
    let schemes: Vec<Scheme> = cfg.run.schemes.iter().copied().filter(|&s| s != Scheme::Tclsc).collect();
    run_scheme_grid(cfg, "baseline", &schemes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantBenchRow {
    pub name: String,
    pub numel: usize,
    pub fp32_bytes: usize,
    pub int8_bytes: usize,
    pub scale: f32,
    pub zero_point: i16,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantBench {
    pub rows: Vec<QuantBenchRow>,
    pub message_bytes: usize,
    pub fp32_bytes: usize,
}

impl QuantBench {
    pub fn csv(&self) -> String {
        let mut s = String::from("tensor,numel,fp32_bytes,int8_bytes,ratio,scale,zero_point,max_abs_err\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{:.4},{:e},{},{:e}",
                r.name,
                r.numel,
                r.fp32_bytes,
                r.int8_bytes,
                r.fp32_bytes as f64 / r.int8_bytes as f64,
                r.scale,
                r.zero_point,
                r.max_abs_err
            )
            .unwrap();
        }
        writeln!(s, "message,,{},{},{:.4},,,", self.fp32_bytes, self.message_bytes, self.fp32_bytes as f64 / self.message_bytes as f64)
            .unwrap();
        s
    }
}

/// Quantizes a freshly initialized model of the configured shape, tensor by
/// tensor, and frames it as one exchange message.
pub fn run_quantize_bench(cfg: &ExperimentConfig) -> Result<QuantBench, HarnessError> {
    let case = prepare_case(cfg, &cfg.split.cases[0])?;
    let model = SemanticModel::new(cfg.model_config(case.vocab.len()), cfg.run.seeds[0])?;
    let params = model.params();
    let rows = params
        .iter()
        .map(|(name, t)| {
            let q = quantize(t);
            let back = dequantize(&q);
            let max_abs_err = t.data().iter().zip(back.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).fold(0.0, f64::max);
            QuantBenchRow {
                name: name.to_owned(),
                numel: t.numel(),
                fp32_bytes: 4 * t.numel(),
                int8_bytes: q.payload_bytes(),
                scale: q.scale(),
                zero_point: q.zero_point(),
                max_abs_err,
            }
        })
        .collect::<Vec<_>>();
    let qp = QuantizedParamSet::from_params(params);
    let msg = encode_message(&qp, &MessageMeta { round: 0, party: Party::A, data_size: case.split.private_a.len() as u64 });
    Ok(QuantBench { fp32_bytes: rows.iter().map(|r| r.fp32_bytes).sum(), rows, message_bytes: msg.len() })
}

/// Hash of every setting that can change results; the output directory and
/// thread count are left out.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.run.out = PathBuf::new();
    c.run.threads = 0;
    hex(&Sha256::digest(c.to_toml().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

pub fn manifest(cfg: &ExperimentConfig, out: &SweepOutput) -> String {
    let mut s = String::new();
    writeln!(s, "command = {}", out.command).unwrap();
    writeln!(s, "version = {VERSION}").unwrap();
    writeln!(s, "config_sha256 = {}", config_hash(cfg)).unwrap();
    writeln!(s, "seeds = {:?}", cfg.run.seeds).unwrap();
    writeln!(s, "cases = {:?}", cfg.split.cases).unwrap();
    writeln!(s, "rows = {}", out.rows.len()).unwrap();
    for r in &out.runs {
        writeln!(s, "\n[run.{}]", r.id).unwrap();
        writeln!(s, "case = {}\nrounds = {}\nseed = {}", r.case, r.rounds, r.seed).unwrap();
        writeln!(s, "exchange_epochs = {:?}", r.exchange_epochs).unwrap();
        writeln!(s, "exchanged_bytes = {}", r.exchanged_bytes).unwrap();
        writeln!(s, "final_params_sha256 = {}", r.final_digest).unwrap();
        writeln!(s, "status = {}", r.status.as_str()).unwrap();
    }
    s
}

/// gnuplot data: one block per (case, scheme) series, seed-averaged,
/// blocks separated by two blank lines.
pub fn plot_data(out: &SweepOutput) -> String {
    let by_rounds = out.command == "round-sweep";
    let mut series: Vec<(String, Scheme)> = out.rows.iter().map(|r| (r.case.clone(), r.scheme)).collect();
    series.dedup();
    let mut s = String::new();
    for (case, scheme) in series {
        writeln!(s, "# {case} {}", scheme.name()).unwrap();
        writeln!(s, "# {} mean_bleu1 mean_bleu2 mean_similarity mean_word_accuracy", if by_rounds { "rounds" } else { "snr_db" })
            .unwrap();
        let rows: Vec<&ResultRow> = out.rows.iter().filter(|r| r.case == case && r.scheme == scheme).collect();
        let mut xs: Vec<f64> = rows.iter().map(|r| if by_rounds { r.rounds as f64 } else { r.snr_db }).collect();
        xs.dedup();
        for x in xs {
            let pts: Vec<&MetricsReport> = rows
                .iter()
                .filter(|r| (if by_rounds { r.rounds as f64 } else { r.snr_db }) == x)
                .filter_map(|r| r.metrics.as_ref())
                .collect();
            if pts.is_empty() {
                continue;
            }
            let mean = |f: fn(&MetricsReport) -> f64| pts.iter().map(|m| f(m)).sum::<f64>() / pts.len() as f64;
            writeln!(
                s,
                "{x} {:.6} {:.6} {:.6} {:.6}",
                mean(|m| m.bleu1),
                mean(|m| m.bleu2),
                mean(|m| m.sentence_similarity_proxy),
                mean(|m| m.word_accuracy)
            )
            .unwrap();
        }
        s.push_str("\n\n");
    }
    s
}

pub fn plateau_summary(p: &[Plateau], delta: f64) -> String {
    let mut s = format!("# smallest R with mean BLEU-1 within {delta} of the best\n");
    for c in p {
        let curve: Vec<String> = c.mean_bleu1.iter().map(|(r, b)| format!("R={r}:{b:.4}")).collect();
        let at = c.plateau_rounds.map(|r| r.to_string()).unwrap_or_else(|| "none".into());
        writeln!(s, "{} plateau_rounds={at} {}", c.case, curve.join(" ")).unwrap();
    }
    s
}

/// Writes results, timings, manifest, plot data and per-run logs under `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &SweepOutput, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = vec![
        (dir.join("results.csv"), results_csv(&out.rows)),
        (dir.join("timings.csv"), timings_csv(&out.rows)),
        (dir.join("manifest.txt"), manifest(cfg, out)),
        (dir.join("config.toml"), cfg.to_toml()),
        (dir.join(format!("{}.dat", out.command.replace('-', "_"))), plot_data(out)),
    ];
    if !out.plateau.is_empty() {
        files.push((dir.join("plateau.txt"), plateau_summary(&out.plateau, cfg.rounds.plateau_delta)));
    }
    for r in &out.runs {
        files.push((dir.join("runs").join(&r.id).join("losses.csv"), r.losses_csv.clone()));
        files.push((dir.join("runs").join(&r.id).join("exchanges.csv"), r.exchanges_csv.clone()));
    }
    for (p, text) in &files {
        write_file(p, text)?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}

/// Result of one `selftest` check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Fast sanity checks of the channel, quantizer, codecs and metrics.
pub fn selftest() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name, passed, detail: String| checks.push(Check { name, passed, detail });

    let sigma2 = crate::channel::Snr::Db(15.0).noise_power();
    push("noise_power_15db", (sigma2 - 0.031623).abs() < 1e-6, format!("sigma2 = {sigma2:.7}"));

    let mut rng = rng_stream(1, 2);
    let frame = crate::channel::ChannelFrame::new(1, 50_000, Tensor::randn(&[100_000], std::f32::consts::FRAC_1_SQRT_2, &mut rng).into_data());
    let ch = ChannelConfig::new(10.0, 3);
    let rx = crate::channel::awgn_transmit(&frame, &ch, &mut ch.rng(0));
    let snr = crate::channel::measure_empirical_snr(&frame, &rx);
    push("awgn_10db", (snr - 10.0).abs() < 0.2, format!("empirical {snr:.3} dB"));

    let t = Tensor::randn(&[10_000], 1.0, &mut rng);
    let q = quantize(&t);
    let back = dequantize(&q);
    let worst = t.data().iter().zip(back.data()).map(|(&a, &b)| (a - b).abs()).fold(0f32, f32::max);
    let ratio = 4.0 * t.numel() as f64 / q.payload_bytes() as f64;
    push(
        "int8_bound",
        worst <= q.scale() / 2.0 + 1e-6 && (3.9..=4.0).contains(&ratio),
        format!("max err {worst:e}, ratio {ratio:.4}"),
    );

    let rs = RsCode::new(15, 11).expect("valid code");
    let data: Vec<u8> = (1..=11).collect();
    let mut cw = rs.encode(&data).expect("encodes");
    cw[2] ^= 0x55;
    cw[9] ^= 0x0f;
    let ok = matches!(rs.decode(&cw), Ok(crate::classic::rs::RsOutcome::Decoded { data: ref d, corrected: 2 }) if *d == data);
    push("rs_15_11_two_errors", ok, String::new());

    let words = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<String>>();
    let s = vec![words("the cat is on the sofa")];
    let b2 = crate::metrics::bleu(&s, &s, 2);
    push("bleu2_identical", b2 == Ok(1.0), format!("{b2:?}"));
    let b1 = crate::metrics::bleu(&[words("the cat sat on the sofa")], &s, 1);
    push("bleu1_one_substitution", matches!(b1, Ok(v) if (v - 5.0 / 6.0).abs() < 1e-12), format!("{b1:?}"));
    checks
}
