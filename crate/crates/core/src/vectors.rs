//! Word-vector store and the distance measures used to rank related terms.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::kg::Term;

#[derive(Clone, Debug, PartialEq)]
pub struct VectorStore {
    dim: usize,
    vectors: BTreeMap<Term, Vec<f64>>,
}

impl VectorStore {
    /// Builds a store from in-memory vectors. All vectors must share one
    /// non-zero length and the vocabulary must be non-empty.
    pub fn from_map(vectors: BTreeMap<Term, Vec<f64>>) -> Result<Self> {
        let dim = match vectors.values().next() {
            Some(v) => v.len(),
            None => return Err(Error::invalid("empty vocabulary")),
        };
        if dim == 0 {
            return Err(Error::invalid("zero-dimensional vectors"));
        }
        if let Some((t, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::invalid(format!(
                "vector for `{t}` has length {}, expected {dim}",
                v.len()
            )));
        }
        Ok(VectorStore { dim, vectors })
    }

    /// Reads `word v1 v2 ... vd` lines. Later duplicates replace earlier ones.
    pub fn load<R: BufRead>(source: R) -> Result<Self> {
        let mut dim = None;
        let mut vectors = BTreeMap::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else {
                continue;
            };
            let term = Term::new(word).map_err(|e| Error::parse(line_no, e.to_string()))?;
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("non-numeric component `{f}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::parse(line_no, format!("non-finite component {bad}")));
            }
            match dim {
                None if values.is_empty() => return Err(Error::invalid_at(line_no, "vector has no components")),
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::invalid_at(
                        line_no,
                        format!("dimension {} differs from {d}", values.len()),
                    ))
                }
                Some(_) => {}
            }
            vectors.insert(term, values);
        }
        Self::from_map(vectors)
    }

    /// Writes vectors in the load format, sorted by term.
    pub fn export<W: Write>(&self, mut sink: W) -> Result<()> {
        for (term, v) in &self.vectors {
            write!(sink, "{term}")?;
            for x in v {
                write!(sink, " {x}")?;
            }
            writeln!(sink)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, t: &Term) -> Option<&[f64]> {
        self.vectors.get(t).map(Vec::as_slice)
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.vectors.contains_key(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Term, &[f64])> {
        self.vectors.iter().map(|(t, v)| (t, v.as_slice()))
    }

    pub(crate) fn get_mut(&mut self, t: &Term) -> Option<&mut Vec<f64>> {
        self.vectors.get_mut(t)
    }

    /// Same vocabulary and dimension.
    pub fn same_shape(&self, other: &VectorStore) -> bool {
        self.dim == other.dim
            && self.vectors.len() == other.vectors.len()
            && self.vectors.keys().zip(other.vectors.keys()).all(|(a, b)| a == b)
    }
}

/// `1 - cos(a, b)`, or `1` when either vector has zero norm.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(1.0);
    }
    let d = 1.0 - dot / (na * nb);
    Ok(d.clamp(0.0, 2.0))
}

/// A set of query words with positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTermQuery {
    words: Vec<Term>,
    weights: Vec<f64>,
}

impl WeightedTermQuery {
    pub fn new(words: Vec<Term>, weights: Vec<f64>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::invalid("empty query"));
        }
        if words.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} words but {} weights",
                words.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|u| !(u.is_finite() && *u > 0.0)) {
            return Err(Error::invalid("query weights must be positive"));
        }
        Ok(WeightedTermQuery { words, weights })
    }

    pub fn single(word: Term) -> Self {
        WeightedTermQuery {
            words: vec![word],
            weights: vec![1.0],
        }
    }

    pub fn words(&self) -> &[Term] {
        &self.words
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Weighted mean cosine distance between `w` and the query words. Lower
/// means more related.
pub fn relatedness_score(query: &WeightedTermQuery, w: &Term, store: &VectorStore) -> Result<f64> {
    let target = store.get(w).ok_or_else(|| Error::Lookup(w.to_string()))?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (word, u) in query.words.iter().zip(&query.weights) {
        let v = store.get(word).ok_or_else(|| Error::Lookup(word.to_string()))?;
        num += u * cosine_distance(target, v)?;
        den += u;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(s: &str) -> Term {
        Term::new(s).unwrap()
    }

    #[test]
    fn load_errors() {
        assert!(matches!(VectorStore::load("".as_bytes()), Err(Error::Validation(_))));
        let err = VectorStore::load("a 1 2\nb 1 2 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::ValidationAt { line: 2, .. }), "{err}");
        let err = VectorStore::load("a 1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn load_two_lines_and_duplicates() {
        let s = VectorStore::load("a 1 2 3\nb 4 5 6\na 7 8 9\n".as_bytes()).unwrap();
        assert_eq!(s.dim(), 3);
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(&t("a")).unwrap(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn export_is_byte_stable() {
        let text = "a 0.1 -2.5\nb 3 0.0001\n";
        let s = VectorStore::load(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        s.export(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn cosine_cases() {
        assert_abs_diff_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn relatedness_weighted_mean() {
        // distances to w: w1 -> 0.2, w2 -> 0.6 (built from angles)
        let cos = |d: f64| 1.0 - d;
        let a1 = cos(0.2).acos();
        let a2 = cos(0.6).acos();
        let mut m = BTreeMap::new();
        m.insert(t("w"), vec![1.0, 0.0]);
        m.insert(t("w1"), vec![a1.cos(), a1.sin()]);
        m.insert(t("w2"), vec![a2.cos(), a2.sin()]);
        let store = VectorStore::from_map(m).unwrap();
        let q = WeightedTermQuery::new(vec![t("w1"), t("w2")], vec![1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(relatedness_score(&q, &t("w"), &store).unwrap(), 0.5, epsilon = 1e-12);
        let uniform = WeightedTermQuery::new(vec![t("w1"), t("w2")], vec![2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(
            relatedness_score(&uniform, &t("w"), &store).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        let own = WeightedTermQuery::new(vec![t("w")], vec![7.0]).unwrap();
        assert_abs_diff_eq!(relatedness_score(&own, &t("w"), &store).unwrap(), 0.0, epsilon = 1e-15);
        let missing = WeightedTermQuery::single(t("zzz"));
        assert!(matches!(relatedness_score(&missing, &t("w"), &store), Err(Error::Lookup(w)) if w == "zzz"));
    }

    #[test]
    fn query_validation() {
        assert!(WeightedTermQuery::new(vec![], vec![]).is_err());
        assert!(WeightedTermQuery::new(vec![t("a")], vec![0.0]).is_err());
        assert!(WeightedTermQuery::new(vec![t("a")], vec![1.0, 2.0]).is_err());
    }
}
