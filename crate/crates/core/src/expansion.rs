//! Expansion of detected objects into related-term sets.
//!
//! * `objects`  - detections at or above the confidence threshold.
//! * `direct`   - every object followed by its own ranked related terms.
//! * `scene`    - terms related to the whole object set, ranked by the
//!   confidence-weighted relatedness score.
//! * `indirect` - scene terms not already in `direct`.
//!
//! All sets are kept as ordered, duplicate-free lists so downstream
//! encoders see a deterministic sequence.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Term};
use crate::vectors::{relatedness_score, VectorStore, WeightedTermQuery};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub label: Term,
    pub confidence: f64,
}

impl DetectedObject {
    pub fn new(label: &str, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(DetectedObject {
            label: Term::new(label)?,
            confidence,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    pub detection_threshold: f64,
    pub per_object_k: usize,
    pub scene_k: usize,
    pub hop_limit: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            detection_threshold: 0.30,
            per_object_k: 5,
            scene_k: 10,
            hop_limit: 2,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(Error::Config(format!(
                "detection_threshold {} outside [0, 1]",
                self.detection_threshold
            )));
        }
        if self.per_object_k == 0 || self.scene_k == 0 || self.hop_limit == 0 {
            return Err(Error::Config(
                "per_object_k, scene_k and hop_limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermSets {
    pub objects: Vec<Term>,
    pub direct: Vec<Term>,
    pub indirect: Vec<Term>,
    pub scene: Vec<Term>,
}

/// Labels with confidence at or above the threshold, sorted and deduplicated.
pub fn filter_detections(dets: &[DetectedObject], cfg: &ExpansionConfig) -> Vec<Term> {
    detection_weights(dets, cfg).into_keys().collect()
}

/// Kept labels with their max confidence.
fn detection_weights(dets: &[DetectedObject], cfg: &ExpansionConfig) -> BTreeMap<Term, f64> {
    let mut out: BTreeMap<Term, f64> = BTreeMap::new();
    for d in dets.iter().filter(|d| d.confidence >= cfg.detection_threshold) {
        let c = out.entry(d.label.clone()).or_insert(d.confidence);
        *c = c.max(d.confidence);
    }
    out
}

struct Candidate {
    term: Term,
    hops: usize,
    score: Option<f64>,
}

/// Scored candidates first by ascending score, then unscored ones; ties
/// fall back to hop distance and then the term itself.
fn rank(mut cands: Vec<Candidate>) -> Vec<Term> {
    cands.sort_by(|a, b| {
        let by_score = match (a.score, b.score) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        by_score.then(a.hops.cmp(&b.hops)).then_with(|| a.term.cmp(&b.term))
    });
    cands.into_iter().map(|c| c.term).collect()
}

/// Ranked related terms of a single object, truncated to `per_object_k`.
pub fn expand_object(g: &KnowledgeGraph, store: &VectorStore, o: &Term, cfg: &ExpansionConfig) -> Result<Vec<Term>> {
    cfg.validate()?;
    let query = store.contains(o).then(|| WeightedTermQuery::single(o.clone()));
    let cands = g
        .neighbors(o, cfg.hop_limit)?
        .into_iter()
        .map(|r| {
            let score = match &query {
                Some(q) if store.contains(&r.term) => Some(relatedness_score(q, &r.term, store)?),
                _ => None,
            };
            Ok(Candidate {
                term: r.term,
                hops: r.hops,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ranked = rank(cands);
    ranked.truncate(cfg.per_object_k);
    Ok(ranked)
}

/// Ranked terms related to the object set as a whole, truncated to `scene_k`.
///
/// Query weights are the objects' confidences; objects without a vector
/// or with zero confidence are left out of the query.
pub fn expand_scene(
    g: &KnowledgeGraph,
    store: &VectorStore,
    objects: &[Term],
    confidences: &BTreeMap<Term, f64>,
    cfg: &ExpansionConfig,
) -> Result<Vec<Term>> {
    cfg.validate()?;
    if objects.is_empty() {
        return Ok(Vec::new());
    }
    let object_set: HashSet<&Term> = objects.iter().collect();
    let mut pool: BTreeMap<Term, usize> = BTreeMap::new();
    for o in objects {
        for r in g.neighbors(o, cfg.hop_limit)? {
            if object_set.contains(&r.term) {
                continue;
            }
            let hops = pool.entry(r.term).or_insert(r.hops);
            *hops = (*hops).min(r.hops);
        }
    }

    let (words, weights): (Vec<Term>, Vec<f64>) = objects
        .iter()
        .filter(|o| store.contains(o))
        .map(|o| (o.clone(), confidences.get(o).copied().unwrap_or(1.0)))
        .filter(|(_, u)| *u > 0.0)
        .unzip();
    let query = if words.is_empty() {
        None
    } else {
        Some(WeightedTermQuery::new(words, weights)?)
    };

    let cands = pool
        .into_iter()
        .map(|(term, hops)| {
            let score = match &query {
                Some(q) if store.contains(&term) => Some(relatedness_score(q, &term, store)?),
                _ => None,
            };
            Ok(Candidate { term, hops, score })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ranked = rank(cands);
    ranked.truncate(cfg.scene_k);
    Ok(ranked)
}

pub fn build_term_sets(
    g: &KnowledgeGraph,
    store: &VectorStore,
    dets: &[DetectedObject],
    cfg: &ExpansionConfig,
) -> Result<TermSets> {
    cfg.validate()?;
    let confidences = detection_weights(dets, cfg);
    let objects: Vec<Term> = confidences.keys().cloned().collect();

    let mut direct = Vec::new();
    let mut seen = BTreeSet::new();
    for o in &objects {
        if seen.insert(o.clone()) {
            direct.push(o.clone());
        }
        for r in expand_object(g, store, o, cfg)? {
            if seen.insert(r.clone()) {
                direct.push(r);
            }
        }
    }

    let scene = expand_scene(g, store, &objects, &confidences, cfg)?;
    let indirect = scene.iter().filter(|t| !seen.contains(*t)).cloned().collect();
    Ok(TermSets {
        objects,
        direct,
        indirect,
        scene,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Term {
        Term::new(s).unwrap()
    }

    fn det(label: &str, c: f64) -> DetectedObject {
        DetectedObject::new(label, c).unwrap()
    }

    /// Unit vectors at angles chosen so that cos-distance to `(1, 0)` is `d`.
    fn at_distance(d: f64) -> Vec<f64> {
        let a = (1.0 - d).acos();
        vec![a.cos(), a.sin()]
    }

    #[test]
    fn threshold_filtering() {
        let cfg = ExpansionConfig::default();
        assert_eq!(
            filter_detections(&[det("chair", 0.9), det("pot", 0.2)], &cfg),
            vec![t("chair")]
        );
        assert!(filter_detections(&[det("chair", 0.1)], &cfg).is_empty());
        assert_eq!(filter_detections(&[det("chair", 0.30)], &cfg), vec![t("chair")]);
        assert_eq!(
            filter_detections(&[det("chair", 0.5), det("Chair", 0.7)], &cfg),
            vec![t("chair")]
        );
        assert!(DetectedObject::new("x", 1.5).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = ExpansionConfig {
            per_object_k: 0,
            ..ExpansionConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExpansionConfig {
            detection_threshold: 1.2,
            ..ExpansionConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn expand_object_ranks_by_score() {
        let g = KnowledgeGraph::ingest("R,o,x\nR,o,y\nR,o,z\n".as_bytes()).unwrap();
        let store = VectorStore::from_map(
            [
                (t("o"), vec![1.0, 0.0]),
                (t("x"), at_distance(0.1)),
                (t("y"), at_distance(0.5)),
                (t("z"), at_distance(0.3)),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap();
        let cfg = ExpansionConfig {
            per_object_k: 2,
            ..ExpansionConfig::default()
        };
        assert_eq!(expand_object(&g, &store, &t("o"), &cfg).unwrap(), vec![t("x"), t("z")]);
        let cfg = ExpansionConfig {
            per_object_k: 10,
            ..ExpansionConfig::default()
        };
        assert_eq!(expand_object(&g, &store, &t("o"), &cfg).unwrap().len(), 3);
        assert!(expand_object(&g, &store, &t("absent"), &cfg).unwrap().is_empty());
    }

    #[test]
    fn unscored_candidates_rank_last() {
        // b (hop 1) and c (hop 2) have no vectors; d has one.
        let g = KnowledgeGraph::ingest("R,o,b\nR,b,c\nR,o,d\n".as_bytes()).unwrap();
        let store = VectorStore::from_map(
            [(t("o"), vec![1.0, 0.0]), (t("d"), vec![0.0, 1.0])]
                .into_iter()
                .collect(),
        )
        .unwrap();
        let cfg = ExpansionConfig::default();
        assert_eq!(
            expand_object(&g, &store, &t("o"), &cfg).unwrap(),
            vec![t("d"), t("b"), t("c")]
        );
    }

    #[test]
    fn scene_uses_confidence_weights() {
        // candidate k: distance 0.2 to a, 0.6 to b -> 0.5 at u = (1, 3)
        // candidate m: distance 0.45 to both -> 0.45
        // with u = (1, 3), m ranks first; with u = (3, 1), k (0.3) ranks first.
        let g = KnowledgeGraph::ingest("R,a,k\nR,b,k\nR,a,m\n".as_bytes()).unwrap();
        let a = 0.0f64;
        let cos_k_a = (1.0f64 - 0.2).acos();
        let cos_k_b = (1.0f64 - 0.6).acos();
        // place a at angle 0, k at angle cos_k_a, b at angle cos_k_a + cos_k_b
        let b_angle = cos_k_a + cos_k_b;
        let m_angle = (1.0f64 - 0.45).acos();
        // m: distance to a is 0.45; distance to b is whatever, so use m only reached via a
        let store = VectorStore::from_map(
            [
                (t("a"), vec![a.cos(), a.sin()]),
                (t("b"), vec![b_angle.cos(), b_angle.sin()]),
                (t("k"), vec![cos_k_a.cos(), cos_k_a.sin()]),
                (t("m"), vec![m_angle.cos(), -m_angle.sin()]),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap();
        let objects = vec![t("a"), t("b")];
        let q = WeightedTermQuery::new(objects.clone(), vec![1.0, 3.0]).unwrap();
        let score_k = relatedness_score(&q, &t("k"), &store).unwrap();
        assert!((score_k - 0.5).abs() < 1e-12);

        let conf: BTreeMap<Term, f64> = [(t("a"), 1.0), (t("b"), 3.0)].into_iter().collect();
        let cfg = ExpansionConfig::default();
        let ranked = expand_scene(&g, &store, &objects, &conf, &cfg).unwrap();
        let score_m = relatedness_score(&q, &t("m"), &store).unwrap();
        let expected = if score_m < score_k {
            vec![t("m"), t("k")]
        } else {
            vec![t("k"), t("m")]
        };
        assert_eq!(ranked, expected);
        assert!(expand_scene(&g, &store, &[], &conf, &cfg).unwrap().is_empty());
    }

    #[test]
    fn single_object_scene_matches_object_ranking() {
        let g = KnowledgeGraph::ingest("R,o,x\nR,o,y\nR,y,z\n".as_bytes()).unwrap();
        let store = VectorStore::from_map(
            [
                (t("o"), vec![1.0, 0.0]),
                (t("x"), at_distance(0.4)),
                (t("y"), at_distance(0.2)),
                (t("z"), at_distance(0.3)),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap();
        let cfg = ExpansionConfig {
            per_object_k: 10,
            scene_k: 2,
            ..ExpansionConfig::default()
        };
        let conf: BTreeMap<Term, f64> = [(t("o"), 1.0)].into_iter().collect();
        let mut obj = expand_object(&g, &store, &t("o"), &cfg).unwrap();
        obj.truncate(2);
        assert_eq!(expand_scene(&g, &store, &[t("o")], &conf, &cfg).unwrap(), obj);
    }

    #[test]
    fn term_set_algebra_example() {
        // r_chair = {furniture}, r_pot = {plant}, scene = {furniture, kitchen}
        let g = KnowledgeGraph::ingest(
            "IsA,chair,furniture,1\nRelatedTo,pot,plant,1\nAtLocation,pot,kitchen,1\nAtLocation,chair,kitchen,1\n"
                .as_bytes(),
        )
        .unwrap();
        let store = VectorStore::from_map(
            [
                (t("chair"), vec![1.0, 0.0, 0.0]),
                (t("pot"), vec![0.0, 1.0, 0.0]),
                (t("furniture"), vec![1.0, 0.1, 0.0]),
                (t("plant"), vec![0.0, 1.0, 0.1]),
                (t("kitchen"), vec![0.5, 0.5, 1.0]),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap();
        let cfg = ExpansionConfig {
            per_object_k: 1,
            scene_k: 3,
            hop_limit: 1,
            ..ExpansionConfig::default()
        };
        let sets = build_term_sets(&g, &store, &[det("chair", 0.9), det("pot", 0.8)], &cfg).unwrap();
        assert_eq!(sets.objects, vec![t("chair"), t("pot")]);
        assert_eq!(sets.direct, vec![t("chair"), t("furniture"), t("pot"), t("plant")]);
        let scene: BTreeSet<_> = sets.scene.iter().cloned().collect();
        assert_eq!(scene, [t("furniture"), t("kitchen"), t("plant")].into_iter().collect());
        assert_eq!(sets.indirect, vec![t("kitchen")]);
    }

    #[test]
    fn empty_detections() {
        let g = KnowledgeGraph::ingest("R,a,b\n".as_bytes()).unwrap();
        let store = VectorStore::from_map([(t("a"), vec![1.0])].into_iter().collect()).unwrap();
        let sets = build_term_sets(&g, &store, &[], &ExpansionConfig::default()).unwrap();
        assert_eq!(sets, TermSets::default());
    }
}
