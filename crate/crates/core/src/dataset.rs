//! JSON-lines image corpora, caption vocabulary and mini-batching.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::DetectedObject;
use crate::text::tokenize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    /// Precomputed image feature vector.
    pub feature: Vec<f64>,
    pub detections: Vec<DetectedObject>,
    pub references: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub records: Vec<ImageRecord>,
    /// Zero for an empty dataset.
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(split: Split, records: Vec<ImageRecord>) -> Result<Self> {
        let mut ds = Dataset {
            split,
            records: Vec::with_capacity(records.len()),
            feature_dim: 0,
        };
        let mut ids = HashSet::new();
        for (idx, r) in records.into_iter().enumerate() {
            ds.check(&r, idx + 1, &mut ids)?;
            ds.records.push(r);
        }
        Ok(ds)
    }

    /// Reads one JSON object per non-empty line.
    pub fn load<R: BufRead>(source: R, split: Split) -> Result<Self> {
        let mut ds = Dataset {
            split,
            records: Vec::new(),
            feature_dim: 0,
        };
        let mut ids = HashSet::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ImageRecord =
                serde_json::from_str(&line).map_err(|e| Error::invalid_at(line_no, e.to_string()))?;
            ds.check(&record, line_no, &mut ids)?;
            ds.records.push(record);
        }
        Ok(ds)
    }

    fn check(&mut self, r: &ImageRecord, line: usize, ids: &mut HashSet<String>) -> Result<()> {
        if r.feature.is_empty() {
            return Err(Error::invalid_at(line, "empty feature vector"));
        }
        if r.feature.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid_at(line, "non-finite feature component"));
        }
        if self.records.is_empty() {
            self.feature_dim = r.feature.len();
        } else if r.feature.len() != self.feature_dim {
            return Err(Error::invalid_at(
                line,
                format!("feature length {} differs from {}", r.feature.len(), self.feature_dim),
            ));
        }
        if let Some(d) = r.detections.iter().find(|d| !(0.0..=1.0).contains(&d.confidence)) {
            return Err(Error::invalid_at(
                line,
                format!("confidence {} of `{}` outside [0, 1]", d.confidence, d.label),
            ));
        }
        if self.split == Split::Train && r.references.is_empty() {
            return Err(Error::invalid_at(line, "training record without references"));
        }
        if !ids.insert(r.image_id.clone()) {
            return Err(Error::invalid_at(line, format!("duplicate image_id `{}`", r.image_id)));
        }
        Ok(())
    }

    pub fn export<W: Write>(&self, mut sink: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut sink, r)?;
            writeln!(sink)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One epoch of seeded, shuffled batches; the last batch may be short.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<&ImageRecord>>> {
        Ok(shuffled_batches(self.records.len(), batch_size, seed, epoch)?
            .into_iter()
            .map(|b| b.into_iter().map(|i| &self.records[i]).collect())
            .collect())
    }
}

/// Index batches over `0..n` for one epoch. Deterministic in `(seed, epoch)`.
pub fn shuffled_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub const START: &str = "<start>";
pub const END: &str = "<end>";
pub const UNK: &str = "<unk>";
pub const EMPTY: &str = "<empty>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub word: String,
    pub index: usize,
    pub count: u64,
}

/// Caption vocabulary. Indices 0..4 are START, END, UNK and EMPTY; words
/// follow by descending corpus count, then alphabetically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const START: usize = 0;
    pub const END: usize = 1;
    pub const UNK: usize = 2;
    pub const EMPTY: usize = 3;
    const RESERVED: [&'static str; 4] = [START, END, UNK, EMPTY];

    /// Builds from an explicit word list (reserved tokens are prepended).
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = words.into_iter().map(|w| (w.into(), 0u64)).collect::<Vec<_>>();
        Self::from_counted(entries)
    }

    fn from_counted(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut v = Vocabulary {
            words: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        for w in Self::RESERVED {
            v.push(w.to_string(), 0)?;
        }
        for (w, c) in entries {
            v.push(w, c)?;
        }
        Ok(v)
    }

    fn push(&mut self, word: String, count: u64) -> Result<()> {
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("bad vocabulary word {word:?}")));
        }
        if self.index.insert(word.clone(), self.words.len()).is_some() {
            return Err(Error::invalid(format!("duplicate vocabulary word `{word}`")));
        }
        self.words.push(word);
        self.counts.push(count);
        Ok(())
    }

    /// Words of all references with count >= `min_count`.
    pub fn build(ds: &Dataset, min_count: u64) -> Result<Self> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for r in &ds.records {
            for caption in &r.references {
                for tok in tokenize(caption) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !Self::RESERVED.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_counted(kept)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `[START, tokens..., END]` with out-of-vocabulary tokens mapped to UNK.
    pub fn encode_caption(&self, raw: &str) -> Vec<usize> {
        let mut out = vec![Self::START];
        out.extend(
            tokenize(raw)
                .iter()
                .map(|t| self.index_of(t).filter(|&i| i > Self::EMPTY).unwrap_or(Self::UNK)),
        );
        out.push(Self::END);
        out
    }

    /// Joins the words of `indices`, skipping START and END.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .filter(|&&i| i != Self::START && i != Self::END)
            .map(|&i| self.word(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Fraction of reference tokens that map to UNK.
    pub fn unk_rate(&self, ds: &Dataset) -> f64 {
        let (mut unk, mut total) = (0usize, 0usize);
        for r in &ds.records {
            for caption in &r.references {
                let enc = self.encode_caption(caption);
                total += enc.len() - 2;
                unk += enc.iter().filter(|&&i| i == Self::UNK).count();
            }
        }
        if total == 0 {
            0.0
        } else {
            unk as f64 / total as f64
        }
    }

    pub fn entries(&self) -> Vec<VocabEntry> {
        self.words
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(index, (word, &count))| VocabEntry {
                word: word.clone(),
                index,
                count,
            })
            .collect()
    }

    pub fn from_entries(entries: &[VocabEntry]) -> Result<Self> {
        let mut sorted = entries.to_vec();
        sorted.sort_by_key(|e| e.index);
        if sorted.iter().enumerate().any(|(i, e)| e.index != i) {
            return Err(Error::invalid("vocabulary indices are not contiguous"));
        }
        if sorted.len() < 4 || sorted.iter().zip(Self::RESERVED).any(|(e, r)| e.word != r) {
            return Err(Error::invalid("vocabulary is missing reserved tokens"));
        }
        Self::from_counted(sorted.into_iter().skip(4).map(|e| (e.word, e.count)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries())?)
    }
}
