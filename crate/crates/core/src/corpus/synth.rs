//! Seeded synthetic corpora shaped like plant equipment exports.
//!
//! Class frequencies: one head class takes `head_class_share` of the records,
//! the rest follow a Zipf law over the remaining classes ranked shallow-first.
//! Counts are allocated exactly (largest remainder) and then shuffled.
//!
//! Descriptions: a root class emits its own tokens. A deeper class emits its
//! own tokens with probability `specific_token_rate` and otherwise a token of
//! one of its ancestors, so siblings share vocabulary and only rare words tell
//! them apart.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Record};
use crate::hierarchy::{BreakdownLevel, ClassCode, Hierarchy};

/// A hierarchy given inline as codes, or as a path to a hierarchy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HierarchySpec {
    Codes(Vec<ClassCode>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub hierarchies: BTreeMap<BreakdownLevel, HierarchySpec>,
    pub n_records: usize,
    pub head_class_share: f64,
    pub zipf_exponent: f64,
    pub mean_words: f64,
    pub noise_rate: f64,
    pub enumeration_rate: f64,
    #[serde(default = "default_specific_rate")]
    pub specific_token_rate: f64,
    #[serde(default = "default_tokens_per_class")]
    pub tokens_per_class: usize,
    #[serde(default = "default_plants")]
    pub n_plants: usize,
    /// Directory that relative hierarchy paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_specific_rate() -> f64 {
    0.2
}

fn default_tokens_per_class() -> usize {
    6
}

fn default_plants() -> usize {
    25
}

impl SynthConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        let mut cfg: SynthConfig = serde_json::from_str(&text)
            .map_err(|e| CorpusError::ConfigInvalid(e.to_string()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::ConfigInvalid(msg));
        if !(0.0..1.0).contains(&self.head_class_share) {
            return bad(format!("head_class_share {} not in [0, 1)", self.head_class_share));
        }
        if !(self.mean_words > 0.0) || !self.mean_words.is_finite() {
            return bad(format!("mean_words {} must be positive", self.mean_words));
        }
        if !(self.zipf_exponent > 0.0) || !self.zipf_exponent.is_finite() {
            return bad(format!("zipf_exponent {} must be positive", self.zipf_exponent));
        }
        for (name, rate) in [
            ("noise_rate", self.noise_rate),
            ("enumeration_rate", self.enumeration_rate),
            ("specific_token_rate", self.specific_token_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("{name} {rate} not in [0, 1]"));
            }
        }
        if self.hierarchies.is_empty() {
            return bad("at least one hierarchy is required".into());
        }
        if self.tokens_per_class == 0 || self.n_plants == 0 {
            return bad("tokens_per_class and n_plants must be positive".into());
        }
        Ok(())
    }

    pub fn resolve_hierarchies(&self) -> Result<BTreeMap<BreakdownLevel, Hierarchy>, CorpusError> {
        let mut out = BTreeMap::new();
        for (level, spec) in &self.hierarchies {
            let h = match spec {
                HierarchySpec::Codes(codes) => Hierarchy::from_codes(*level, codes.iter().copied())?,
                HierarchySpec::File(path) => {
                    let full = match &self.base_dir {
                        Some(dir) if path.is_relative() => dir.join(path),
                        _ => path.clone(),
                    };
                    Hierarchy::load(full, *level)?
                }
            };
            if h.is_empty() {
                return Err(CorpusError::ConfigInvalid(format!("{level} hierarchy is empty")));
            }
            out.insert(*level, h);
        }
        Ok(out)
    }

    /// Expected share of records for every class of `h`, head first.
    pub fn class_shares(&self, h: &Hierarchy, rng_seed: u64) -> Vec<(ClassCode, f64)> {
        let ranked = rank_classes(h, &mut ChaCha8Rng::seed_from_u64(rng_seed));
        shares(&ranked, self.head_class_share, self.zipf_exponent)
    }
}

const NOISE_WORDS: [&str; 24] = [
    "unit", "main", "aux", "spare", "panel", "line", "set", "box", "no", "side", "left", "right",
    "upper", "lower", "new", "old", "ref", "sys", "grp", "module", "part", "misc", "general", "type",
];

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn level_seed(seed: u64, level: BreakdownLevel, stream: u64) -> u64 {
    // splitmix64 over (seed, level, stream)
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(1 + level.index() as u64 * 8 + stream));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shallow classes first, shuffled within a depth.
fn rank_classes(h: &Hierarchy, rng: &mut ChaCha8Rng) -> Vec<ClassCode> {
    let mut ranked = Vec::new();
    for depth in 1..=3 {
        let mut tier: Vec<ClassCode> = h.codes().filter(|c| c.len() == depth).copied().collect();
        tier.shuffle(rng);
        ranked.extend(tier);
    }
    ranked
}

fn shares(ranked: &[ClassCode], head_share: f64, exponent: f64) -> Vec<(ClassCode, f64)> {
    if ranked.len() == 1 {
        return vec![(ranked[0], 1.0)];
    }
    let norm: f64 = (1..ranked.len()).map(|i| (i as f64).powf(-exponent)).sum();
    ranked
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = if i == 0 {
                head_share
            } else {
                (1.0 - head_share) * (i as f64).powf(-exponent) / norm
            };
            (*c, p)
        })
        .collect()
}

/// Exact per-class counts summing to `n` (largest remainder, ties by rank).
fn allocate(shares: &[(ClassCode, f64)], n: usize) -> Vec<(ClassCode, usize)> {
    let exact: Vec<f64> = shares.iter().map(|(_, p)| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    shares.iter().map(|(c, _)| *c).zip(counts).collect()
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
        if rng.random_bool(0.3) {
            w.push(*CONSONANTS.choose(rng).unwrap() as char);
        }
    }
    w
}

struct LevelModel {
    level: BreakdownLevel,
    labels: Vec<ClassCode>,
    pools: BTreeMap<ClassCode, Vec<String>>,
}

impl LevelModel {
    fn word(&self, code: ClassCode, specific_rate: f64, rng: &mut ChaCha8Rng) -> &str {
        let ancestors = code.ancestors();
        let source = if ancestors.is_empty() || rng.random_bool(specific_rate) {
            code
        } else {
            *ancestors.choose(rng).unwrap()
        };
        self.pools[&source].choose(rng).unwrap()
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset, CorpusError> {
    cfg.validate()?;
    let hierarchies = cfg.resolve_hierarchies()?;

    let mut used: HashSet<String> = NOISE_WORDS.iter().map(|w| w.to_string()).collect();
    let mut levels = Vec::new();
    for (level, h) in &hierarchies {
        let mut rng = ChaCha8Rng::seed_from_u64(level_seed(cfg.seed, *level, 0));
        let ranked = rank_classes(h, &mut rng);
        let counts = allocate(&shares(&ranked, cfg.head_class_share, cfg.zipf_exponent), cfg.n_records);
        let mut labels: Vec<ClassCode> = counts
            .iter()
            .flat_map(|(c, k)| std::iter::repeat_n(*c, *k))
            .collect();
        labels.shuffle(&mut rng);

        let mut word_rng = ChaCha8Rng::seed_from_u64(level_seed(cfg.seed, *level, 1));
        let mut pools = BTreeMap::new();
        for code in h.codes() {
            let mut pool = Vec::with_capacity(cfg.tokens_per_class);
            while pool.len() < cfg.tokens_per_class {
                let w = pseudo_word(&mut word_rng);
                if used.insert(w.clone()) {
                    pool.push(w);
                }
            }
            pools.insert(*code, pool);
        }
        levels.push(LevelModel {
            level: *level,
            labels,
            pools,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(level_seed(cfg.seed, BreakdownLevel::Bl0, 2));
    let extra_words = Poisson::new((cfg.mean_words - 1.0).max(1e-9)).expect("positive rate");
    let mut records = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        let mut n_words = if cfg.mean_words <= 1.0 {
            1
        } else {
            1 + extra_words.sample(&mut rng) as usize
        };
        let enumerated = n_words >= 2 && rng.random_bool(cfg.enumeration_rate);
        if enumerated {
            n_words -= 1;
        }
        let offset = rng.random_range(0..levels.len());
        let mut words: Vec<String> = Vec::with_capacity(n_words + 1);
        for slot in 0..n_words {
            let lm = &levels[(offset + slot) % levels.len()];
            let word = if rng.random_bool(cfg.noise_rate) {
                NOISE_WORDS.choose(&mut rng).unwrap().to_string()
            } else {
                lm.word(lm.labels[i], cfg.specific_token_rate, &mut rng).to_string()
            };
            words.push(if rng.random_bool(0.5) { title_case(&word) } else { word });
        }
        if enumerated {
            words.push(rng.random_range(1..=20u32).to_string());
        }
        let plant = rng.random_range(1..=cfg.n_plants);
        let mut record = Record::new(
            format!("{:06}", i + 1),
            format!("plant-{plant:02}"),
            words.join(" "),
        );
        for lm in &levels {
            record.labels.set(lm.level, Some(lm.labels[i]));
        }
        records.push(record);
    }
    Dataset::new(records)
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
