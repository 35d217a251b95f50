//! Retrofitting word vectors to a knowledge graph.
//!
//! Minimizes
//!
//! ```text
//! Psi(Q) = sum_i alpha_i |q_i - qhat_i|^2 + sum_{ {i,j} in E } beta_ij |q_i - q_j|^2
//! ```
//!
//! with every unordered edge counted once, by Gauss-Seidel sweeps of the
//! closed-form per-vertex minimizer
//!
//! ```text
//! q_i = (sum_j beta_ij q_j + alpha_i qhat_i) / (sum_j beta_ij + alpha_i)
//! ```
//!
//! Only graph terms that also have a base vector take part; an edge is used
//! when both endpoints are in the store. Vertices are visited in term order.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Term};
use crate::vectors::VectorStore;

#[derive(Clone, Debug, PartialEq)]
pub enum AlphaPolicy {
    Constant(f64),
    PerTerm { default: f64, weights: HashMap<Term, f64> },
}

impl AlphaPolicy {
    fn weight(&self, t: &Term) -> f64 {
        match self {
            AlphaPolicy::Constant(a) => *a,
            AlphaPolicy::PerTerm { default, weights } => *weights.get(t).unwrap_or(default),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |a: f64| a.is_finite() && a >= 0.0;
        let valid = match self {
            AlphaPolicy::Constant(a) => ok(*a),
            AlphaPolicy::PerTerm { default, weights } => ok(*default) && weights.values().all(|a| ok(*a)),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::Config("alpha weights must be finite and non-negative".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BetaPolicy {
    /// `1 / degree(i)` at the vertex being updated, counting in-store neighbors.
    InverseDegree,
    Constant(f64),
    /// The stored edge weight (max over relations).
    EdgeWeight,
    /// Symmetric per-edge weights keyed by `(min(i,j), max(i,j))`.
    PerEdge {
        default: f64,
        weights: HashMap<(Term, Term), f64>,
    },
}

impl BetaPolicy {
    fn weight(&self, i: &Term, j: &Term, degree_i: usize, edge_weight: f64) -> f64 {
        match self {
            BetaPolicy::InverseDegree => 1.0 / degree_i as f64,
            BetaPolicy::Constant(b) => *b,
            BetaPolicy::EdgeWeight => edge_weight,
            BetaPolicy::PerEdge { default, weights } => {
                let key = if i <= j {
                    (i.clone(), j.clone())
                } else {
                    (j.clone(), i.clone())
                };
                *weights.get(&key).unwrap_or(default)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |b: f64| b.is_finite() && b >= 0.0;
        let valid = match self {
            BetaPolicy::InverseDegree | BetaPolicy::EdgeWeight => true,
            BetaPolicy::Constant(b) => ok(*b),
            BetaPolicy::PerEdge { default, weights } => ok(*default) && weights.values().all(|b| ok(*b)),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::Config("beta weights must be finite and non-negative".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrofitConfig {
    pub alpha: AlphaPolicy,
    pub beta: BetaPolicy,
    pub max_iterations: usize,
    /// Sweeps stop once no coordinate moves by this much or more.
    pub tolerance: f64,
}

impl Default for RetrofitConfig {
    fn default() -> Self {
        RetrofitConfig {
            alpha: AlphaPolicy::Constant(1.0),
            beta: BetaPolicy::InverseDegree,
            max_iterations: 10,
            tolerance: 1e-8,
        }
    }
}

/// In-store adjacency: term -> [(neighbor, max edge weight)].
struct Lattice<'a> {
    adjacency: BTreeMap<&'a Term, Vec<(&'a Term, f64)>>,
}

impl<'a> Lattice<'a> {
    fn new(g: &'a KnowledgeGraph, store: &VectorStore) -> Self {
        let adjacency = g
            .terms()
            .filter(|t| store.contains(t))
            .map(|t| {
                let ns = g
                    .adjacent_terms(t)
                    .into_iter()
                    .filter(|(n, _)| store.contains(n))
                    .collect::<Vec<_>>();
                (t, ns)
            })
            .collect();
        Lattice { adjacency }
    }

    /// Directional weights `beta_ij` for each neighbor of `i`.
    fn betas(&self, cfg: &RetrofitConfig, i: &Term) -> Vec<(&'a Term, f64)> {
        let ns = &self.adjacency[i];
        ns.iter()
            .map(|(j, w)| (*j, cfg.beta.weight(i, j, ns.len(), *w)))
            .collect()
    }
}

/// Evaluates the retrofitting objective. Directional policies such as
/// [`BetaPolicy::InverseDegree`] are symmetrized as `(beta_ij + beta_ji) / 2`.
/// Sweeps are exact coordinate descent on this value only for symmetric
/// policies; with inverse degree they descend the objective whose data
/// term at vertex `i` is scaled by its degree.
pub fn objective(store_hat: &VectorStore, q: &VectorStore, g: &KnowledgeGraph, cfg: &RetrofitConfig) -> Result<f64> {
    if !store_hat.same_shape(q) {
        return Err(Error::invalid(
            "base and retrofitted stores differ in vocabulary or dimension",
        ));
    }
    cfg.alpha.validate()?;
    cfg.beta.validate()?;

    let mut total = 0.0;
    for ((t, qhat), (_, qi)) in store_hat.iter().zip(q.iter()) {
        total += cfg.alpha.weight(t) * sq_dist(qi, qhat);
    }

    let lattice = Lattice::new(g, store_hat);
    let mut directional: BTreeMap<(&Term, &Term), f64> = BTreeMap::new();
    for &i in lattice.adjacency.keys() {
        for (j, b) in lattice.betas(cfg, i) {
            directional.insert((i, j), b);
        }
    }
    for (&(i, j), b_ij) in &directional {
        if i < j {
            let b_ji = directional[&(j, i)];
            let beta = 0.5 * (b_ij + b_ji);
            total += beta * sq_dist(q.get(i).unwrap(), q.get(j).unwrap());
        }
    }
    Ok(total)
}

pub fn retrofit(store_hat: &VectorStore, g: &KnowledgeGraph, cfg: &RetrofitConfig) -> Result<VectorStore> {
    retrofit_observed(store_hat, g, cfg, |_, _| {})
}

/// Like [`retrofit`], calling `observer(sweep, &q)` after every full sweep.
pub fn retrofit_observed<F>(
    store_hat: &VectorStore,
    g: &KnowledgeGraph,
    cfg: &RetrofitConfig,
    mut observer: F,
) -> Result<VectorStore>
where
    F: FnMut(usize, &VectorStore),
{
    cfg.alpha.validate()?;
    cfg.beta.validate()?;
    if cfg.max_iterations == 0 {
        return Err(Error::Config("max_iterations must be positive".into()));
    }
    if cfg.tolerance.is_nan() || cfg.tolerance < 0.0 {
        return Err(Error::Config("tolerance must be non-negative".into()));
    }

    let lattice = Lattice::new(g, store_hat);
    // (vertex, alpha, [(neighbor, beta)])
    type Update<'a> = (&'a Term, f64, Vec<(&'a Term, f64)>);
    let mut plan: Vec<Update> = Vec::new();
    for (&i, ns) in &lattice.adjacency {
        if ns.is_empty() {
            continue;
        }
        let alpha = cfg.alpha.weight(i);
        let betas = lattice.betas(cfg, i);
        let denom = alpha + betas.iter().map(|(_, b)| b).sum::<f64>();
        if denom.is_nan() || denom <= 0.0 {
            return Err(Error::Config(format!(
                "alpha + sum(beta) is zero at `{i}`; the update is undefined"
            )));
        }
        plan.push((i, alpha, betas));
    }

    let dim = store_hat.dim();
    let mut q = store_hat.clone();
    let mut next = vec![0.0; dim];
    for sweep in 0..cfg.max_iterations {
        let mut max_change: f64 = 0.0;
        for (i, alpha, betas) in &plan {
            let qhat = store_hat.get(i).unwrap();
            let mut denom = *alpha;
            for (k, x) in next.iter_mut().enumerate() {
                *x = alpha * qhat[k];
            }
            for (j, b) in betas {
                let qj = q.get(j).unwrap();
                for (x, y) in next.iter_mut().zip(qj) {
                    *x += b * y;
                }
                denom += b;
            }
            let qi = q.get_mut(i).unwrap();
            for (cur, x) in qi.iter_mut().zip(&next) {
                let updated = x / denom;
                max_change = max_change.max((updated - *cur).abs());
                *cur = updated;
            }
        }
        observer(sweep + 1, &q);
        if max_change < cfg.tolerance {
            log::debug!("retrofit converged after {} sweeps", sweep + 1);
            break;
        }
    }
    Ok(q)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(s: &str) -> Term {
        Term::new(s).unwrap()
    }

    fn store(entries: &[(&str, &[f64])]) -> VectorStore {
        VectorStore::from_map(entries.iter().map(|(k, v)| (t(k), v.to_vec())).collect()).unwrap()
    }

    fn unit_cfg() -> RetrofitConfig {
        RetrofitConfig {
            alpha: AlphaPolicy::Constant(1.0),
            beta: BetaPolicy::Constant(1.0),
            max_iterations: 10_000,
            tolerance: 1e-14,
        }
    }

    #[test]
    fn objective_two_node_fixture() {
        let g = KnowledgeGraph::ingest("R,a,b\n".as_bytes()).unwrap();
        let hat = store(&[("a", &[0.0]), ("b", &[2.0])]);
        let q = store(&[("a", &[2.0 / 3.0]), ("b", &[4.0 / 3.0])]);
        assert_abs_diff_eq!(
            objective(&hat, &q, &g, &unit_cfg()).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-12
        );
        assert_eq!(
            objective(&hat, &hat, &KnowledgeGraph::default(), &unit_cfg()).unwrap(),
            0.0
        );
    }

    #[test]
    fn objective_linear_in_beta() {
        let g = KnowledgeGraph::ingest("R,a,b\nR,b,c\n".as_bytes()).unwrap();
        let hat = store(&[("a", &[0.0, 1.0]), ("b", &[2.0, -1.0]), ("c", &[1.0, 1.0])]);
        let mut cfg = unit_cfg();
        cfg.beta = BetaPolicy::Constant(0.7);
        let one = objective(&hat, &hat, &g, &cfg).unwrap();
        cfg.beta = BetaPolicy::Constant(1.4);
        let two = objective(&hat, &hat, &g, &cfg).unwrap();
        assert!(one > 0.0);
        assert_abs_diff_eq!(two, 2.0 * one, epsilon = 1e-12);
    }

    #[test]
    fn objective_vocabulary_mismatch() {
        let a = store(&[("a", &[0.0])]);
        let b = store(&[("b", &[0.0])]);
        assert!(matches!(
            objective(&a, &b, &KnowledgeGraph::default(), &unit_cfg()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn two_node_fixed_point() {
        let g = KnowledgeGraph::ingest("R,a,b\n".as_bytes()).unwrap();
        let hat = store(&[("a", &[0.0]), ("b", &[2.0])]);
        let q = retrofit(&hat, &g, &unit_cfg()).unwrap();
        assert_abs_diff_eq!(q.get(&t("a")).unwrap()[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.get(&t("b")).unwrap()[0], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_beta_is_identity() {
        let g = KnowledgeGraph::ingest("R,a,b\nR,b,c\n".as_bytes()).unwrap();
        let hat = store(&[("a", &[0.1, 0.3]), ("b", &[2.7, -1.1]), ("c", &[1e-3, 9.0])]);
        let cfg = RetrofitConfig {
            beta: BetaPolicy::Constant(0.0),
            ..RetrofitConfig::default()
        };
        let mut sweeps = 0;
        let q = retrofit_observed(&hat, &g, &cfg, |s, _| sweeps = s).unwrap();
        assert_eq!(q, hat);
        assert_eq!(sweeps, 1);
    }

    #[test]
    fn isolated_and_out_of_graph_terms_untouched() {
        let g = KnowledgeGraph::ingest("R,a,b\nR,c,ghost\n".as_bytes()).unwrap();
        let hat = store(&[("a", &[0.1]), ("b", &[0.7]), ("c", &[0.123456789]), ("d", &[5.5])]);
        let q = retrofit(&hat, &g, &RetrofitConfig::default()).unwrap();
        // `c` only neighbors a term without a vector
        assert_eq!(q.get(&t("c")).unwrap()[0].to_bits(), 0.123456789f64.to_bits());
        assert_eq!(q.get(&t("d")).unwrap(), &[5.5]);
        assert_ne!(q.get(&t("a")).unwrap(), &[0.1]);
    }

    #[test]
    fn zero_denominator_is_config_error() {
        let g = KnowledgeGraph::ingest("R,a,b\n".as_bytes()).unwrap();
        let hat = store(&[("a", &[0.0]), ("b", &[1.0])]);
        let cfg = RetrofitConfig {
            alpha: AlphaPolicy::Constant(0.0),
            beta: BetaPolicy::Constant(0.0),
            ..RetrofitConfig::default()
        };
        assert!(matches!(retrofit(&hat, &g, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn inverse_degree_default() {
        // star: center c with leaves x, y. beta_cx = 1/2 at c, beta_xc = 1 at x.
        let g = KnowledgeGraph::ingest("R,c,x\nR,c,y\n".as_bytes()).unwrap();
        let hat = store(&[("c", &[0.0]), ("x", &[1.0]), ("y", &[3.0])]);
        let cfg = RetrofitConfig {
            max_iterations: 1,
            ..RetrofitConfig::default()
        };
        let q = retrofit(&hat, &g, &cfg).unwrap();
        // c = (0.5*1 + 0.5*3 + 0) / 2 = 1; x = (1*1 + 1)/2 = 1; y = (1*1 + 3)/2 = 2
        assert_abs_diff_eq!(q.get(&t("c")).unwrap()[0], 1.0);
        assert_abs_diff_eq!(q.get(&t("x")).unwrap()[0], 1.0);
        assert_abs_diff_eq!(q.get(&t("y")).unwrap()[0], 2.0);
    }
}
