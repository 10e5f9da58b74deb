//! Seeded generator of code-switched three-class sentiment text.
//!
//! Used for examples, tests and as a stand-in corpus when no real dataset is
//! on disk. Polar texts carry one or two cue words of their class, spelled
//! with the informal variation typical of romanized Urdu (doubled vowels,
//! inserted `h`). A share of texts carry misleading cues and neutral texts
//! sometimes carry a stray cue, so the task is learnable but not separable.

use super::{Example, Label, Language, NUM_CLASSES};
use crate::rng::{Rng, Stream};

const URDU_NEG: &[&str] = &["bura", "bakwas", "ganda", "ghussa", "nafrat", "afsos", "bekar", "zulm", "sharam", "dukh"];
const URDU_POS: &[&str] = &["acha", "zabardast", "behtareen", "khush", "pyara", "kamal", "shukriya", "mazay", "shandar", "wah"];
const ENG_NEG: &[&str] = &["bad", "worst", "hate", "sad", "angry", "terrible", "poor", "shame", "fail", "boring"];
const ENG_POS: &[&str] = &["good", "great", "love", "happy", "awesome", "nice", "best", "thanks", "win", "beautiful"];
const URDU_FILL: &[&str] = &[
    "hai", "ka", "ki", "ke", "main", "tum", "yar", "kya", "nahi", "bhi", "ye", "wo", "aur", "se", "ko", "par", "tha",
    "ho", "ab", "sab", "hum", "log", "din", "kaam", "baat", "waqt", "mulk", "hukumat", "khan", "sahab", "kal", "aaj",
];
const ENG_FILL: &[&str] = &[
    "the", "is", "a", "of", "to", "in", "this", "that", "it", "for", "on", "with", "people", "day", "time", "match",
    "government", "news", "today", "game", "team", "just", "so", "we", "you",
];
const SYLLABLES: &[&str] = &["ka", "ra", "ma", "ni", "to", "sa", "lu", "de", "bi", "ja", "wa", "pe", "zo", "ha", "qi"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub examples: usize,
    /// Target class shares in percent (negative, positive, neutral).
    pub class_percent: [f64; NUM_CLASSES],
    /// Target language shares in percent (roman-urdu, english, mixed).
    pub language_percent: [f64; 3],
    /// Probability that a polar text's cues come from the wrong class.
    pub cue_noise: f64,
    /// Probability that a neutral text carries a stray polar cue.
    pub neutral_cue_rate: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            examples: 2000,
            class_percent: [48.27, 35.10, 16.63],
            language_percent: [46.34, 2.52, 51.14],
            cue_noise: 0.2,
            neutral_cue_rate: 0.3,
            min_tokens: 4,
            max_tokens: 18,
        }
    }
}

/// Splits `total` into integer parts proportional to `weights` by largest
/// remainder, ties going to the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - parts[a] as f64, quotas[b] - parts[b] as f64);
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let missing = total - parts.iter().sum::<usize>();
    for &i in order.iter().cycle().take(missing) {
        parts[i] += 1;
    }
    parts
}

fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    words[rng.below(words.len())]
}

/// Informal respelling: doubled final vowel or an `h` after the first
/// consonant, each with probability 0.15.
fn respell(rng: &mut Rng, word: &str) -> String {
    let mut w = word.to_string();
    if rng.bernoulli(0.15) {
        if let Some(last) = w.chars().last().filter(|c| "aeiou".contains(*c)) {
            w.push(last);
        }
    }
    if rng.bernoulli(0.15) && w.len() > 2 && w.is_ascii() {
        w.insert(1, 'h');
    }
    w
}

/// Pronounceable pseudo-words standing in for names, places and hashtags.
fn open_class_word(rng: &mut Rng) -> String {
    // Squaring a uniform index skews the draw towards a Zipf-like head.
    let u = rng.unit();
    let id = (u * u * 400.0) as usize;
    let a = SYLLABLES[id % SYLLABLES.len()];
    let b = SYLLABLES[(id / SYLLABLES.len()) % SYLLABLES.len()];
    if id.is_multiple_of(7) {
        format!("#{a}{b}")
    } else {
        format!("{a}{b}")
    }
}

fn cue_words(label: Label, lang: Language, rng: &mut Rng) -> &'static [&'static str] {
    let urdu = match lang {
        Language::RomanUrdu => true,
        Language::English => false,
        Language::Mixed => rng.bernoulli(0.5),
    };
    match (label, urdu) {
        (Label::Negative, true) => URDU_NEG,
        (Label::Negative, false) => ENG_NEG,
        _ if urdu => URDU_POS,
        _ => ENG_POS,
    }
}

fn filler(lang: Language, rng: &mut Rng) -> String {
    if rng.bernoulli(0.15) {
        return open_class_word(rng);
    }
    let urdu = match lang {
        Language::RomanUrdu => true,
        Language::English => false,
        Language::Mixed => rng.bernoulli(0.55),
    };
    let w = pick(rng, if urdu { URDU_FILL } else { ENG_FILL });
    respell(rng, w)
}

fn text_for(label: Label, lang: Language, cfg: &SyntheticConfig, rng: &mut Rng) -> String {
    let n = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
    let mut words: Vec<String> = (0..n).map(|_| filler(lang, rng)).collect();
    let cue_label = match label {
        Label::Neutral if rng.bernoulli(cfg.neutral_cue_rate) => {
            Some(if rng.bernoulli(0.5) { Label::Negative } else { Label::Positive })
        }
        Label::Neutral => None,
        l if rng.bernoulli(cfg.cue_noise) => Some(if l == Label::Negative { Label::Positive } else { Label::Negative }),
        l => Some(l),
    };
    if let Some(cl) = cue_label {
        let cues = 1 + rng.below(2);
        for _ in 0..cues {
            let list = cue_words(cl, lang, rng);
            let w = pick(rng, list);
            let w = respell(rng, w);
            let at = rng.below(words.len() + 1);
            words.insert(at, w);
        }
    }
    if rng.bernoulli(0.2) {
        let first = &mut words[0];
        *first = first.to_uppercase();
    }
    words.join(" ")
}

/// Generates `cfg.examples` texts whose class and language counts are the
/// largest-remainder apportionment of the configured percentages.
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Vec<Example> {
    let mut rng = Rng::for_cell(seed, Stream::Split, 0xda7a);
    let class_counts = apportion(cfg.examples, &cfg.class_percent);
    let lang_counts = apportion(cfg.examples, &cfg.language_percent);
    let mut labels: Vec<Label> = class_counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(Label::ALL[c], n))
        .collect();
    let mut langs: Vec<Language> = lang_counts
        .iter()
        .enumerate()
        .flat_map(|(l, &n)| std::iter::repeat_n(Language::ALL[l], n))
        .collect();
    rng.shuffle(&mut labels);
    rng.shuffle(&mut langs);
    labels
        .into_iter()
        .zip(langs)
        .map(|(label, lang)| Example {
            text: text_for(label, lang, cfg, &mut rng),
            label,
            language: Some(lang),
        })
        .collect()
}
