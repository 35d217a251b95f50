//! BLEU@1..4, ROUGE-L and CIDEr-D caption scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;
pub const MAX_ORDER: usize = 4;

/// One scored image: a candidate and its reference captions, tokenized.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub image_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalItem {
    pub fn from_raw(image_id: impl Into<String>, candidate: &str, references: &[&str]) -> Result<Self> {
        let item = EvalItem {
            image_id: image_id.into(),
            candidate: tokenize(candidate),
            references: references.iter().map(|r| tokenize(r)).collect(),
        };
        item.validate()?;
        Ok(item)
    }

    fn validate(&self) -> Result<()> {
        if self.references.is_empty() || self.references.iter().any(|r| r.is_empty()) {
            return Err(Error::invalid(format!(
                "image `{}` needs at least one non-empty reference",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// A results line as written by `caption` + dataset join.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultLine {
    pub image_id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalCorpus {
    pub items: Vec<EvalItem>,
}

impl EvalCorpus {
    pub fn new(items: Vec<EvalItem>) -> Result<Self> {
        for it in &items {
            it.validate()?;
        }
        Ok(EvalCorpus { items })
    }

    /// Reads results JSON lines; blank lines are skipped.
    pub fn load_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut items = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ResultLine = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            let refs: Vec<&str> = r.references.iter().map(String::as_str).collect();
            let item = EvalItem::from_raw(r.image_id, &r.candidate, &refs)
                .map_err(|e| Error::invalid_at(i + 1, e.to_string()))?;
            items.push(item);
        }
        Ok(EvalCorpus { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with clipped precision, closest reference length (ties go
/// to the shorter one) and no smoothing.
pub fn bleu(corpus: &EvalCorpus, order: usize) -> Result<f64> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::Config(format!("BLEU order must be in 1..=4, got {order}")));
    }
    let mut matched = vec![0usize; order];
    let mut total = vec![0usize; order];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for item in &corpus.items {
        let c = item.candidate.len();
        cand_len += c;
        ref_len += item
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&r| (r.abs_diff(c), r))
            .unwrap_or(0);
        for n in 1..=order {
            let cand = ngram_counts(&item.candidate, n);
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in &item.references {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            total[n - 1] += c.saturating_sub(n - 1);
            matched[n - 1] += cand
                .iter()
                .map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if cand_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / order as f64;
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_item(item: &EvalItem) -> f64 {
    let b2 = ROUGE_BETA * ROUGE_BETA;
    item.references
        .iter()
        .map(|r| {
            let l = lcs(&item.candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let rec = l / r.len() as f64;
            let prec = l / item.candidate.len() as f64;
            (1.0 + b2) * rec * prec / (rec + b2 * prec)
        })
        .fold(0.0, f64::max)
}

/// Mean over images of the best LCS F-measure against any reference.
pub fn rouge_l(corpus: &EvalCorpus) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    corpus.items.iter().map(rouge_l_item).sum::<f64>() / corpus.len() as f64
}

type TfIdf<'a> = (BTreeMap<&'a [String], f64>, f64);

fn tf_idf<'a>(tokens: &'a [String], n: usize, df: &BTreeMap<Vec<String>, usize>, log_images: f64) -> TfIdf<'a> {
    let vec: BTreeMap<&[String], f64> = ngram_counts(tokens, n)
        .into_iter()
        .map(|(g, k)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, k as f64 * (log_images - d.ln()))
        })
        .collect();
    let norm = vec.values().map(|v| v * v).sum::<f64>().sqrt();
    (vec, norm)
}

/// CIDEr-D with document frequencies taken from the corpus references.
pub fn cider_d(corpus: &EvalCorpus) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let log_images = (corpus.len() as f64).ln();
    let mut total = 0.0;
    let dfs: Vec<BTreeMap<Vec<String>, usize>> = (1..=MAX_ORDER)
        .map(|n| {
            let mut df: BTreeMap<Vec<String>, usize> = BTreeMap::new();
            for item in &corpus.items {
                let seen: BTreeSet<&[String]> = item
                    .references
                    .iter()
                    .flat_map(|r| ngram_counts(r, n).into_keys())
                    .collect();
                for g in seen {
                    *df.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
            df
        })
        .collect();
    for item in &corpus.items {
        let lc = item.candidate.len() as f64;
        let mut per_image = 0.0;
        for (n, df) in (1..=MAX_ORDER).zip(&dfs) {
            let (gc, nc) = tf_idf(&item.candidate, n, df, log_images);
            let mut per_n = 0.0;
            for r in &item.references {
                let (gs, ns) = tf_idf(r, n, df, log_images);
                if nc == 0.0 || ns == 0.0 {
                    continue;
                }
                let dot: f64 = gc.iter().filter_map(|(g, c)| gs.get(g).map(|s| c.min(*s) * s)).sum();
                let delta = lc - r.len() as f64;
                per_n += (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp() * dot / (nc * ns);
            }
            per_image += per_n / item.references.len() as f64;
        }
        total += CIDER_SCALE * per_image / MAX_ORDER as f64;
    }
    total / corpus.len() as f64
}

/// Scores on their native scales: BLEU and ROUGE-L in [0,1], CIDEr-D in [0,10].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
}

/// The same scores as percentages; CIDEr-D is multiplied by 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d_x100: f64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    native: &'a MetricReport,
    percent: PercentReport,
    meteor: Option<f64>,
}

impl MetricReport {
    pub fn bleu(&self) -> [f64; 4] {
        [self.bleu1, self.bleu2, self.bleu3, self.bleu4]
    }

    pub fn percent(&self) -> PercentReport {
        PercentReport {
            bleu1: 100.0 * self.bleu1,
            bleu2: 100.0 * self.bleu2,
            bleu3: 100.0 * self.bleu3,
            bleu4: 100.0 * self.bleu4,
            rouge_l: 100.0 * self.rouge_l,
            cider_d_x100: 100.0 * self.cider_d,
        }
    }

    /// Pretty JSON holding native values, percentages and a null METEOR.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ReportJson {
            native: self,
            percent: self.percent(),
            meteor: None,
        })?)
    }
}

pub fn evaluate(corpus: &EvalCorpus) -> MetricReport {
    let b = |n| bleu(corpus, n).expect("order in range");
    MetricReport {
        images: corpus.len(),
        bleu1: b(1),
        bleu2: b(2),
        bleu3: b(3),
        bleu4: b(4),
        rouge_l: rouge_l(corpus),
        cider_d: cider_d(corpus),
    }
}

/// Aligned table with columns B@1..4, M, R (percent) and C (native and x100).
/// METEOR is not computed and shows as a dash.
pub fn format_table(rows: &[(String, MetricReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(4);
    let header = ["B@1", "B@2", "B@3", "B@4", "M", "R", "C", "C(x100)"];
    let mut out = format!("{:<label_w$}", "mode");
    for h in header {
        let _ = write!(out, " {h:>8}");
    }
    out.push('\n');
    for (label, r) in rows {
        let p = r.percent();
        let _ = write!(out, "{label:<label_w$}");
        for v in [p.bleu1, p.bleu2, p.bleu3, p.bleu4] {
            let _ = write!(out, " {v:>8.1}");
        }
        let _ = write!(out, " {:>8}", "-");
        let _ = write!(out, " {:>8.1}", p.rouge_l);
        let _ = write!(out, " {:>8.3}", r.cider_d);
        let _ = write!(out, " {:>8.1}", p.cider_d_x100);
        out.push('\n');
    }
    out
}
