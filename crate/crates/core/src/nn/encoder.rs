//! Recurrent encoder for ranked term lists.
//!
//! Each term vector `r` (taken from the retrofitted store) is projected by
//! `W_r` and fed to an LSTM; the final hidden state is the encoding. Empty
//! lists are encoded as the single EMPTY token and terms without a vector
//! as UNK. Both special tokens have learned input rows.

use rand::Rng;

use super::lstm::{LstmCache, LstmParams, LstmState};
use super::matrix::Matrix;
use crate::kg::Term;
use crate::vectors::VectorStore;

#[derive(Clone, Debug, PartialEq)]
pub enum TermToken {
    Vector(Vec<f64>),
    Empty,
    Unk,
}

impl TermToken {
    const EMPTY_ROW: usize = 0;
    const UNK_ROW: usize = 1;
}

/// Tokens for `terms` in their given order; `[Empty]` for an empty list.
pub fn term_tokens(terms: &[Term], store: Option<&VectorStore>) -> Vec<TermToken> {
    if terms.is_empty() {
        return vec![TermToken::Empty];
    }
    terms
        .iter()
        .map(|t| match store.and_then(|s| s.get(t)) {
            Some(v) => TermToken::Vector(v.to_vec()),
            None => TermToken::Unk,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermEncoderParams {
    /// `term_embed x term_dim`
    pub w_r: Matrix,
    /// Input rows for EMPTY and UNK, `2 x term_dim`.
    pub specials: Matrix,
    pub lstm: LstmParams,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    steps: Vec<LstmCache>,
    rows: Vec<Row>,
}

#[derive(Clone, Debug)]
enum Row {
    Vector(Vec<f64>),
    Special(usize),
}

impl TermEncoderParams {
    pub fn zeros(term_dim: usize, term_embed: usize, term_hidden: usize) -> Self {
        TermEncoderParams {
            w_r: Matrix::zeros(term_embed, term_dim),
            specials: Matrix::zeros(2, term_dim),
            lstm: LstmParams::zeros(term_embed, term_hidden),
        }
    }

    pub fn uniform<R: Rng>(term_dim: usize, term_embed: usize, term_hidden: usize, scale: f64, rng: &mut R) -> Self {
        TermEncoderParams {
            w_r: Matrix::uniform(term_embed, term_dim, scale, rng),
            specials: Matrix::uniform(2, term_dim, scale, rng),
            lstm: LstmParams::uniform(term_embed, term_hidden, scale, rng),
        }
    }

    pub fn term_dim(&self) -> usize {
        self.w_r.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.lstm.hidden_size()
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.w_r, &self.specials];
        v.extend(self.lstm.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.w_r, &mut self.specials];
        v.extend(self.lstm.tensors_mut());
        v
    }

    fn input_row<'a>(&'a self, tok: &'a TermToken) -> (&'a [f64], Row) {
        match tok {
            TermToken::Vector(v) => (v.as_slice(), Row::Vector(v.clone())),
            TermToken::Empty => (
                self.specials.row(TermToken::EMPTY_ROW),
                Row::Special(TermToken::EMPTY_ROW),
            ),
            TermToken::Unk => (self.specials.row(TermToken::UNK_ROW), Row::Special(TermToken::UNK_ROW)),
        }
    }

    /// Final hidden state after feeding `tokens` (EMPTY if none).
    pub fn encode(&self, tokens: &[TermToken]) -> (Vec<f64>, EncoderCache) {
        let empty = [TermToken::Empty];
        let tokens = if tokens.is_empty() { &empty[..] } else { tokens };
        let mut state = LstmState::zeros(self.hidden_size());
        let mut cache = EncoderCache {
            steps: Vec::with_capacity(tokens.len()),
            rows: Vec::with_capacity(tokens.len()),
        };
        for tok in tokens {
            let (r, row) = self.input_row(tok);
            let x = self.w_r.mul_vec(r);
            let (next, c) = self.lstm.forward(&x, &state);
            state = next;
            cache.steps.push(c);
            cache.rows.push(row);
        }
        (state.h, cache)
    }

    /// Encodes a ranked term list, looking vectors up in `store`.
    pub fn encode_terms(&self, terms: &[Term], store: &VectorStore) -> Vec<f64> {
        self.encode(&term_tokens(terms, Some(store))).0
    }

    /// Accumulates gradients given `dh` w.r.t. the final hidden state.
    pub fn backward(&self, cache: &EncoderCache, dh: &[f64], grad: &mut TermEncoderParams) {
        let hs = self.hidden_size();
        let mut dh = dh.to_vec();
        let mut dc = vec![0.0; hs];
        for (step, row) in cache.steps.iter().zip(&cache.rows).rev() {
            let (dx, dh_prev, dc_prev) = self.lstm.backward(step, &dh, &dc, &mut grad.lstm);
            match row {
                Row::Vector(r) => grad.w_r.add_outer(&dx, r),
                Row::Special(k) => {
                    grad.w_r.add_outer(&dx, self.specials.row(*k));
                    self.w_r.mul_t_vec_acc(&dx, grad.specials.row_mut(*k));
                }
            }
            dh = dh_prev;
            dc = dc_prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_is_empty_token() {
        let mut enc = TermEncoderParams::zeros(1, 1, 1);
        enc.specials.data_mut()[0] = 0.7;
        enc.w_r.data_mut()[0] = 1.0;
        enc.lstm.w_x.data_mut().fill(1.0);
        let (a, _) = enc.encode(&[]);
        let (b, _) = enc.encode(&[TermToken::Empty]);
        assert_eq!(a, b);
        assert_ne!(a, enc.encode(&[TermToken::Unk]).0);
    }

    #[test]
    fn single_term_hand_computed() {
        // 1-dim encoder, W_r = 2, all LSTM input weights 1, biases 0.
        // x = 2 * 0.5 = 1; i = f = o = sigmoid(1), g = tanh(1)
        // c = sigmoid(1) * tanh(1); h = sigmoid(1) * tanh(c)
        let mut enc = TermEncoderParams::zeros(1, 1, 1);
        enc.w_r.data_mut()[0] = 2.0;
        enc.lstm.w_x.data_mut().fill(1.0);
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let c = s * 1.0f64.tanh();
        let expected = s * c.tanh();
        let (h, _) = enc.encode(&[TermToken::Vector(vec![0.5])]);
        assert!((h[0] - expected).abs() < 1e-15, "{} vs {expected}", h[0]);
    }

    #[test]
    fn missing_terms_use_unk() {
        let store = VectorStore::from_map([(Term::new("a").unwrap(), vec![1.0])].into_iter().collect()).unwrap();
        let toks = term_tokens(&[Term::new("a").unwrap(), Term::new("b").unwrap()], Some(&store));
        assert_eq!(toks, vec![TermToken::Vector(vec![1.0]), TermToken::Unk]);
        assert_eq!(term_tokens(&[], Some(&store)), vec![TermToken::Empty]);
    }
}
