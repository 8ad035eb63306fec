use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tclsc::channel::{ChannelConfig, Snr};
use tclsc::corpus::{build_vocab, generate_synthetic, SentenceIds, TopicMixture, TopicParams};
use tclsc::model::{evaluate_loss, train_epoch, ModelConfig, SemanticModel};
use tclsc::nn::graph::power_normalize;
use tclsc::nn::OptimizerState;

fn corpus(n: usize, max_len: usize, seed: u64) -> (Vec<SentenceIds>, usize) {
    let raw: Vec<Vec<String>> = generate_synthetic(&TopicParams::default(), TopicMixture::even(), 4 * n, seed)
        .unwrap()
        .into_iter()
        .filter(|s| s.len() <= max_len)
        .take(n)
        .collect();
    assert_eq!(raw.len(), n);
    let vocab = build_vocab(&raw, 1, 512);
    (raw.iter().map(|s| vocab.encode(s)).collect(), vocab.len())
}

#[test]
fn normalizer_ignores_input_scale() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f32> = (0..96).map(|_| rand::Rng::random_range(&mut r, -3.0..3.0)).collect();
    let doubled: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
    let mask = [true, true, false, true, true, true];
    let (mut a, mut b) = (vec![0.0; 96], vec![0.0; 96]);
    power_normalize(&x, 16, &mask, &mut a);
    power_normalize(&doubled, 16, &mask, &mut b);
    assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-5));
    let power: f32 = a.iter().map(|v| v * v).sum::<f32>() / (5.0 * 8.0);
    assert!((power - 1.0).abs() < 1e-5);
}

#[test]
fn overfits_fifty_sentences_noiseless() {
    let (data, vocab) = corpus(50, 10, 21);
    let cfg = ModelConfig { max_len: 11, ..ModelConfig::micro(vocab) };
    let mut model = SemanticModel::new(cfg, 1).unwrap();
    let mut opt = OptimizerState::new(3e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    for _ in 0..30 {
        for _ in 0..10 {
            train_epoch(&mut model, &data, Snr::Noiseless, 10, &mut opt, &mut rng).unwrap();
        }
        let out = model.transmit(&data, &ChannelConfig::noiseless(), 50, 0).unwrap();
        exact = out.iter().zip(&data).filter(|(o, s)| o.as_slice() == s.ids.as_slice()).count();
        if exact * 100 >= 95 * data.len() {
            break;
        }
    }
    assert!(exact * 100 >= 95 * data.len(), "{exact}/50 exact");
}

#[test]
fn tiny_corpus_converges_at_15_db() {
    let (data, vocab) = corpus(40, 8, 5);
    let cfg = ModelConfig { max_len: 9, d_model: 16, d_ff: 32, heads: 2, layers: 1, ..ModelConfig::micro(vocab) };
    let mut model = SemanticModel::new(cfg, 3).unwrap();
    let mut opt = OptimizerState::new(3e-3);
    let snr = Snr::Db(15.0);
    let initial = evaluate_loss(&mut model, &data, snr, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        train_epoch(&mut model, &data, snr, 20, &mut opt, &mut rng).unwrap();
    }
    let last = evaluate_loss(&mut model, &data, snr, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!(last < 0.1 * initial, "{initial} -> {last}");
}
