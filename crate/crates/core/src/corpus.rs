//! Text ingestion, vocabularies, synthetic knowledge bases and the
//! public / party A / party B / test partition.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::CorpusError;
use crate::util::{rng_stream, write_atomic};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;
const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Output of [`tokenize_and_filter`] with the diagnostics tally.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tokenized {
    pub sentences: Vec<Vec<String>>,
    pub skipped_invalid_utf8: usize,
    pub filtered_by_length: usize,
}

/// Lowercases, strips punctuation and splits on whitespace, keeping lines
/// whose token count lies in `[min_len, max_len]`.
pub fn tokenize_and_filter(raw: &[u8], min_len: usize, max_len: usize) -> Tokenized {
    assert!(min_len >= 1 && max_len >= min_len, "need 1 <= min_len <= max_len");
    let mut out = Tokenized::default();
    for line in raw.split(|&b| b == b'\n') {
        let Ok(line) = std::str::from_utf8(line) else {
            out.skipped_invalid_utf8 += 1;
            continue;
        };
        let cleaned: String = line
            .chars()
            .filter(|c| c.is_alphanumeric() || c.is_whitespace())
            .flat_map(char::to_lowercase)
            .collect();
        let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_owned).collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < min_len || tokens.len() > max_len {
            out.filtered_by_length += 1;
            continue;
        }
        out.sentences.push(tokens);
    }
    out
}

/// Token id sequence of one sentence, without SOS/EOS/PAD.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentenceIds {
    pub ids: Vec<usize>,
}

impl SentenceIds {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// A vocabulary holding only PAD, SOS, EOS and UNK.
    pub fn specials_only() -> Self {
        let id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { token_to_id, id_to_token }
    }

    /// Builds from regular tokens in id order (ids start at 4).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::specials_only();
        for t in tokens {
            let t = t.into();
            if !v.token_to_id.contains_key(&t) {
                v.token_to_id.insert(t.clone(), v.id_to_token.len());
                v.id_to_token.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Out-of-vocabulary tokens become UNK, so lengths are preserved.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> SentenceIds {
        SentenceIds::new(tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)).collect())
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK]).to_owned())
            .collect()
    }

    /// Line-delimited `token<TAB>id`, written atomically.
    pub fn write_file(&self, path: &Path) -> Result<(), CorpusError> {
        let mut s = String::new();
        for (i, t) in self.id_to_token.iter().enumerate() {
            writeln!(s, "{t}\t{i}").unwrap();
        }
        write_atomic(path, s.as_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        let mut rows: Vec<(usize, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| CorpusError::BadGenerator(format!("vocab line {}: missing tab", lineno + 1)))?;
            let id = id
                .parse::<usize>()
                .map_err(|e| CorpusError::BadGenerator(format!("vocab line {}: {e}", lineno + 1)))?;
            rows.push((id, tok.to_owned()));
        }
        rows.sort();
        let ids_ok = rows.iter().enumerate().all(|(i, (id, _))| i == *id);
        let specials_ok = rows.len() >= NUM_SPECIALS
            && rows.iter().zip(SPECIAL_TOKENS).all(|((_, t), s)| t == s);
        if !ids_ok || !specials_ok {
            return Err(CorpusError::BadGenerator("vocab ids must be contiguous from 0 with specials first".into()));
        }
        Ok(Self::from_tokens(rows.into_iter().skip(NUM_SPECIALS).map(|(_, t)| t)))
    }
}

/// Keeps tokens with frequency `>= min_freq`, at most `max_size` of them
/// (not counting the four specials), by descending frequency then
/// lexicographic order.
pub fn build_vocab<S: AsRef<str>>(sentences: &[Vec<S>], min_freq: usize, max_size: usize) -> Vocabulary {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for t in s {
            *freq.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && !SPECIAL_TOKENS.contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(max_size);
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub frac_public: f64,
    pub frac_a: f64,
    pub frac_b: f64,
    pub frac_test: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// ‖A‖ ≈ ‖B‖: 10/40/40/10.
    pub fn case1(seed: u64) -> Self {
        Self { frac_public: 0.10, frac_a: 0.40, frac_b: 0.40, frac_test: 0.10, seed }
    }

    /// ‖A‖ ≫ ‖B‖: 10/60/20/10.
    pub fn case2(seed: u64) -> Self {
        Self { frac_public: 0.10, frac_a: 0.60, frac_b: 0.20, frac_test: 0.10, seed }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let f = [self.frac_public, self.frac_a, self.frac_b, self.frac_test];
        let sum: f64 = f.iter().sum();
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadFractions(sum));
        }
        Ok(())
    }

    /// Split sizes for `n` items: floor-rounded, remainder to test.
    pub fn sizes(&self, n: usize) -> [usize; 4] {
        // The epsilon absorbs representation error such as 0.1 * 100 = 10.000000000000002
        // or 0.6 * 100 = 59.99999999999999.
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let public = floor(self.frac_public);
        let a = floor(self.frac_a).min(n - public);
        let b = floor(self.frac_b).min(n - public - a);
        [public, a, b, n - public - a - b]
    }
}

/// The four disjoint knowledge partitions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split<T> {
    pub public: Vec<T>,
    pub private_a: Vec<T>,
    pub private_b: Vec<T>,
    pub test: Vec<T>,
}

pub type CorpusSplit = Split<SentenceIds>;

impl<T> Split<T> {
    pub fn total(&self) -> usize {
        self.public.len() + self.private_a.len() + self.private_b.len() + self.test.len()
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> Split<U> {
        Split {
            public: self.public.into_iter().map(&mut f).collect(),
            private_a: self.private_a.into_iter().map(&mut f).collect(),
            private_b: self.private_b.into_iter().map(&mut f).collect(),
            test: self.test.into_iter().map(&mut f).collect(),
        }
    }

    pub fn parts(&self) -> [(&'static str, &[T]); 4] {
        [
            ("public", &self.public),
            ("private_a", &self.private_a),
            ("private_b", &self.private_b),
            ("test", &self.test),
        ]
    }
}

/// Shuffles `0..n` with `spec.seed` and slices it into the four splits.
pub fn partition_indices(n: usize, spec: &SplitSpec) -> Result<Split<usize>, CorpusError> {
    spec.validate()?;
    if n < 4 {
        return Err(CorpusError::TooSmall(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_stream(spec.seed, 0x5b17));
    let [p, a, b, _] = spec.sizes(n);
    let mut rest = idx.into_iter();
    Ok(Split {
        public: rest.by_ref().take(p).collect(),
        private_a: rest.by_ref().take(a).collect(),
        private_b: rest.by_ref().take(b).collect(),
        test: rest.collect(),
    })
}

pub fn partition<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<Split<T>, CorpusError> {
    Ok(partition_indices(items.len(), spec)?.map(|i| items[i].clone()))
}

/// Writes one `<dir>/split_<name>.idx` file per partition, one index per line.
pub fn write_split_manifests(split: &Split<usize>, dir: &Path) -> Result<(), CorpusError> {
    for (name, idx) in split.parts() {
        let mut s = String::new();
        for i in idx {
            writeln!(s, "{i}").unwrap();
        }
        write_atomic(&dir.join(format!("split_{name}.idx")), s.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topic {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicLexicon {
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub adjectives: Vec<String>,
}

impl TopicLexicon {
    fn from_lists(nouns: &str, verbs: &str, adjectives: &str) -> Self {
        let words = |s: &str| s.split_whitespace().map(str::to_owned).collect();
        Self { nouns: words(nouns), verbs: words(verbs), adjectives: words(adjectives) }
    }

    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.nouns.iter().chain(&self.verbs).chain(&self.adjectives)
    }

    fn slot(&self, kind: char) -> &[String] {
        match kind {
            'n' => &self.nouns,
            'v' => &self.verbs,
            _ => &self.adjectives,
        }
    }
}

/// Generator config: shared function words, two topic lexicons and
/// templates whose slots are `{n}`, `{v}` and `{j}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicParams {
    pub shared: Vec<String>,
    pub topic_a: TopicLexicon,
    pub topic_b: TopicLexicon,
    pub templates: Vec<String>,
}

impl Default for TopicParams {
    fn default() -> Self {
        let shared = "the a of to in is on and with for this that it was are by at from has will \
                      very not we they our all more some each into near";
        let topic_a = TopicLexicon::from_lists(
            "car ship train truck engine wheel harbor road bridge tunnel airport runway pilot driver \
             cargo fuel station rail boat ferry bus garage highway motor tire captain crew deck anchor \
             port signal ticket passenger platform container crane dock lane vehicle trailer",
            "drives sails carries tows repairs loads parks steers ships fuels brakes delivers \
             transports docks launches hauls boards departs crosses inspects",
            "fast heavy diesel electric rusty loaded empty modern narrow busy slow metal large cheap \
             noisy safe broken new long main",
        );
        let topic_b = TopicLexicon::from_lists(
            "bird eagle forest river tree flower nest feather sparrow owl meadow leaf seed mountain \
             lake wolf fox deer insect bee honey branch root grass valley cloud rain stone moss fern \
             hawk swan pond butterfly shrub cave frog wing egg squirrel",
            "sings flies grows nests blooms hunts feeds migrates hides gathers swims climbs shelters \
             pollinates hatches roams builds rests watches dives",
            "green wild tiny colorful quiet ancient tall wet bright soft fresh hidden gentle rare \
             young dark lush calm sunny native",
        );
        let templates = [
            "the {n} {v} the {n}",
            "it {v} the {n}",
            "a {j} {n} {v} near the {n}",
            "the {j} {n} {v} a {j} {n}",
            "this {n} {v} each {j} {n} in our {n}",
            "the {n} of the {j} {n} {v} into the {n} with {n}",
            "all {j} {n} {v} from the {n}",
            "that {n} is very {j} and {v} at the {n}",
            "some {n} {v} on a {j} {n} for more {n}",
            "our {j} {n} has a {n} by the {n}",
        ];
        Self {
            shared: shared.split_whitespace().map(str::to_owned).collect(),
            topic_a,
            topic_b,
            templates: templates.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TopicParams {
    pub fn lexicon(&self, topic: Topic) -> &TopicLexicon {
        match topic {
            Topic::A => &self.topic_a,
            Topic::B => &self.topic_b,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let a: BTreeSet<&String> = self.topic_a.words().collect();
        let b: BTreeSet<&String> = self.topic_b.words().collect();
        if let Some(w) = a.intersection(&b).next() {
            return Err(CorpusError::TopicOverlap((*w).clone()));
        }
        let shared: BTreeSet<&String> = self.shared.iter().collect();
        if let Some(w) = shared.iter().find(|w| a.contains(*w) || b.contains(*w)) {
            return Err(CorpusError::TopicOverlap((*w).clone()));
        }
        for lex in [&self.topic_a, &self.topic_b] {
            if lex.nouns.is_empty() || lex.verbs.is_empty() || lex.adjectives.is_empty() {
                return Err(CorpusError::BadGenerator("every topic needs nouns, verbs and adjectives".into()));
            }
        }
        if self.templates.is_empty() {
            return Err(CorpusError::BadGenerator("no templates".into()));
        }
        for t in &self.templates {
            let words: Vec<&str> = t.split_whitespace().collect();
            if !(4..=12).contains(&words.len()) {
                return Err(CorpusError::BadGenerator(format!("template {t:?} is not 4-12 tokens")));
            }
            for w in words {
                if !matches!(w, "{n}" | "{v}" | "{j}") && !self.shared.iter().any(|s| s == w) {
                    return Err(CorpusError::BadGenerator(format!("template word {w:?} is not a shared word")));
                }
            }
        }
        Ok(())
    }

    /// Every word the generator can emit: shared words, then topic A, then topic B.
    pub fn all_words(&self) -> Vec<String> {
        self.shared.iter().chain(self.topic_a.words()).chain(self.topic_b.words()).cloned().collect()
    }

    /// The topic a word belongs to, or `None` for shared or unknown words.
    pub fn topic_of(&self, word: &str) -> Option<Topic> {
        if self.topic_a.words().any(|w| w == word) {
            Some(Topic::A)
        } else if self.topic_b.words().any(|w| w == word) {
            Some(Topic::B)
        } else {
            None
        }
    }

    /// Replaces the first topic word of `sentence` with another word that
    /// fills the same template slot in the same topic.
    pub fn swap_synonym<R: Rng + ?Sized>(&self, sentence: &[String], rng: &mut R) -> Option<Vec<String>> {
        for (i, w) in sentence.iter().enumerate() {
            let Some(topic) = self.topic_of(w) else { continue };
            let lex = self.lexicon(topic);
            let class = [&lex.nouns, &lex.verbs, &lex.adjectives].into_iter().find(|c| c.contains(w))?;
            if class.len() < 2 {
                return None;
            }
            let mut pick = w;
            while pick == w {
                pick = &class[rng.random_range(0..class.len())];
            }
            let mut out = sentence.to_vec();
            out[i] = pick.clone();
            return Some(out);
        }
        None
    }
}

/// Share of topic A in a generated corpus; topic B gets the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicMixture {
    pub weight_a: f64,
}

impl TopicMixture {
    pub fn only(topic: Topic) -> Self {
        Self { weight_a: if topic == Topic::A { 1.0 } else { 0.0 } }
    }

    pub fn even() -> Self {
        Self { weight_a: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSentence {
    pub topic: Topic,
    pub tokens: Vec<String>,
}

pub fn generate_synthetic_labeled(
    params: &TopicParams,
    mixture: TopicMixture,
    n: usize,
    seed: u64,
) -> Result<Vec<SyntheticSentence>, CorpusError> {
    params.validate()?;
    if !(0.0..=1.0).contains(&mixture.weight_a) {
        return Err(CorpusError::BadGenerator(format!("mixture weight {} outside [0,1]", mixture.weight_a)));
    }
    let mut rng = rng_stream(seed, 0x7e47);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let topic = if rng.random::<f64>() < mixture.weight_a { Topic::A } else { Topic::B };
        let lex = params.lexicon(topic);
        let template = &params.templates[rng.random_range(0..params.templates.len())];
        let tokens = template
            .split_whitespace()
            .map(|w| match w {
                "{n}" | "{v}" | "{j}" => {
                    let class = lex.slot(w.as_bytes()[1] as char);
                    class[rng.random_range(0..class.len())].clone()
                }
                _ => w.to_owned(),
            })
            .collect();
        out.push(SyntheticSentence { topic, tokens });
    }
    Ok(out)
}

pub fn generate_synthetic(
    params: &TopicParams,
    mixture: TopicMixture,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>, CorpusError> {
    Ok(generate_synthetic_labeled(params, mixture, n, seed)?.into_iter().map(|s| s.tokens).collect())
}

/// Synthetic mismatched knowledge bases: an evenly mixed public split,
/// party A drawn from topic A only, party B from topic B only and an evenly
/// mixed test split. Sizes follow [`SplitSpec::sizes`] of `n`.
pub fn synthetic_mismatched_split(
    params: &TopicParams,
    n: usize,
    spec: &SplitSpec,
) -> Result<Split<Vec<String>>, CorpusError> {
    spec.validate()?;
    if n < 4 {
        return Err(CorpusError::TooSmall(n));
    }
    let [p, a, b, t] = spec.sizes(n);
    let seed = spec.seed;
    Ok(Split {
        public: generate_synthetic(params, TopicMixture::even(), p, seed ^ 0x1111)?,
        private_a: generate_synthetic(params, TopicMixture::only(Topic::A), a, seed ^ 0x2222)?,
        private_b: generate_synthetic(params, TopicMixture::only(Topic::B), b, seed ^ 0x3333)?,
        test: generate_synthetic(params, TopicMixture::even(), t, seed ^ 0x4444)?,
    })
}
