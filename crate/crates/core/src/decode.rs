//! Greedy and beam-search caption generation.
//!
//! Scores are raw sums of log-probabilities with no length normalization.
//! Ties are broken toward the lower token index, and for whole sequences
//! toward the lexicographically smaller token sequence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{CaptionModel, EmbeddingInputs, LstmState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_length: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 3,
            max_length: 20,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_length == 0 {
            return Err(Error::Config("beam_size and max_length must be positive".into()));
        }
        Ok(())
    }
}

/// A generated token sequence. Finished hypotheses end with END.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub logprob: f64,
}

impl Hypothesis {
    pub fn is_finished(&self) -> bool {
        self.tokens.last() == Some(&Vocabulary::END)
    }

    /// Tokens without the trailing END.
    pub fn surface(&self) -> &[usize] {
        if self.is_finished() {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Picks the most probable word at every step.
pub fn greedy_decode(m: &CaptionModel, init: &EmbeddingInputs, cfg: &DecodeConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut state = m.start(init)?;
    let mut token = Vocabulary::START;
    let mut out = Vec::new();
    for _ in 0..cfg.max_length {
        let (next, probs) = m.step(&state, token);
        token = argmax(&probs);
        if token == Vocabulary::END {
            break;
        }
        out.push(token);
        state = next;
    }
    Ok(out)
}

struct Live {
    hyp: Hypothesis,
    state: LstmState,
    probs: Vec<f64>,
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Keeps the `beam_size` best partial captions per step; finished ones
/// move to a completed pool. Returns up to `beam_size` hypotheses, best
/// first, topped up with unfinished ones if too few finished.
pub fn beam_search(m: &CaptionModel, init: &EmbeddingInputs, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let k = cfg.beam_size;
    let start = m.start(init)?;
    let (state, probs) = m.step(&start, Vocabulary::START);
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
        },
        state,
        probs,
    }];
    let mut completed: Vec<Hypothesis> = Vec::new();

    for _ in 0..cfg.max_length {
        let mut cands: Vec<(usize, Hypothesis)> = Vec::with_capacity(live.len() * m.dims.vocab);
        for (parent, l) in live.iter().enumerate() {
            for (tok, p) in l.probs.iter().enumerate() {
                let mut tokens = l.hyp.tokens.clone();
                tokens.push(tok);
                cands.push((
                    parent,
                    Hypothesis {
                        tokens,
                        logprob: l.hyp.logprob + p.ln(),
                    },
                ));
            }
        }
        cands.sort_by(|a, b| rank(&a.1, &b.1));
        cands.truncate(k);

        let mut next = Vec::with_capacity(k);
        for (parent, hyp) in cands {
            if hyp.is_finished() {
                completed.push(hyp);
            } else {
                let tok = *hyp.tokens.last().unwrap();
                let (state, probs) = m.step(&live[parent].state, tok);
                next.push(Live { hyp, state, probs });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        completed.sort_by(rank);
        if completed.len() >= k {
            // extensions can only lose probability
            let best_live = live.iter().map(|l| l.hyp.logprob).fold(f64::NEG_INFINITY, f64::max);
            if best_live < completed[k - 1].logprob {
                break;
            }
        }
    }

    completed.sort_by(rank);
    if completed.len() < k {
        let mut rest: Vec<Hypothesis> = live.into_iter().map(|l| l.hyp).collect();
        rest.sort_by(rank);
        completed.extend(rest);
        completed.sort_by(rank);
    }
    completed.truncate(k);
    Ok(completed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, ModelDims, ModelKind};

    fn peaked_model(first: usize) -> CaptionModel {
        let vocab = Vocabulary::from_words(["x", "y"]).unwrap();
        let dims = ModelDims {
            vocab: 6,
            embed: 1,
            hidden: 1,
            feature: 0,
            term_dim: 0,
            term_embed: 0,
            term_hidden: 0,
        };
        let mut m = CaptionModel::zeros(ModelKind::Caption(Mode::None), dims, vocab);
        m.params.b_out.data_mut()[first] = 5.0;
        m
    }

    fn no_inputs() -> EmbeddingInputs {
        EmbeddingInputs {
            a: vec![],
            terms: vec![],
        }
    }

    #[test]
    fn immediate_end_gives_empty_caption() {
        let m = peaked_model(Vocabulary::END);
        assert!(greedy_decode(&m, &no_inputs(), &DecodeConfig::default())
            .unwrap()
            .is_empty());
        let beams = beam_search(&m, &no_inputs(), &DecodeConfig::default()).unwrap();
        assert_eq!(beams[0].tokens, vec![Vocabulary::END]);
        assert!(beams.windows(2).all(|w| w[0].logprob >= w[1].logprob));
    }

    #[test]
    fn constant_model_runs_to_max_length() {
        let m = peaked_model(4);
        let cfg = DecodeConfig {
            beam_size: 2,
            max_length: 5,
        };
        assert_eq!(greedy_decode(&m, &no_inputs(), &cfg).unwrap(), vec![4; 5]);
        let beams = beam_search(&m, &no_inputs(), &cfg).unwrap();
        assert_eq!(beams.len(), 2);
        assert_eq!(beams[0].tokens, vec![4; 5]);
        for b in &beams {
            assert!(b.is_finished() || b.tokens.len() == cfg.max_length);
        }
    }

    #[test]
    fn config_validation() {
        let m = peaked_model(4);
        let cfg = DecodeConfig {
            beam_size: 0,
            max_length: 3,
        };
        assert!(beam_search(&m, &no_inputs(), &cfg).is_err());
    }
}
