//! LSTM caption generator conditioned on image features and related-term
//! encodings.
//!
//! The conditioning vector `z = a || d || i` (whichever parts the mode uses)
//! is mapped to the decoder input width by a learned affine layer and fed
//! once, at step -1, into a zero-initialized LSTM. Caption tokens are then
//! fed as `W_e[S_t]` and each step emits `softmax(W_out h + b_out)` over the
//! vocabulary.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderCache, TermEncoderParams, TermToken};
use super::lstm::{LstmCache, LstmParams, LstmState};
use super::matrix::{softmax, Matrix};
use crate::dataset::Vocabulary;
use crate::error::{Error, Result};

/// Input combinations of the ablation study, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    /// Unconditioned language model.
    None,
    /// Image features only; the plain NIC baseline.
    Image,
    Direct,
    Indirect,
    DirectImage,
    IndirectImage,
    /// Image, direct and indirect terms.
    Full,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::None,
        Mode::Image,
        Mode::Direct,
        Mode::Indirect,
        Mode::DirectImage,
        Mode::IndirectImage,
        Mode::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Image => "image",
            Mode::Direct => "direct",
            Mode::Indirect => "indirect",
            Mode::DirectImage => "direct+image",
            Mode::IndirectImage => "indirect+image",
            Mode::Full => "direct+indirect+image",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::None => "none(only seqs input)",
            Mode::Image => "image embedding",
            Mode::Direct => "detected objects and directly related terms",
            Mode::Indirect => "indirectly related terms",
            Mode::DirectImage => "detected objects and directly related terms + image embedding",
            Mode::IndirectImage => "indirectly related terms + image embedding",
            Mode::Full => "detected objects and directly related terms + indirectly related terms + image embedding",
        }
    }

    pub fn uses_image(self) -> bool {
        matches!(self, Mode::Image | Mode::DirectImage | Mode::IndirectImage | Mode::Full)
    }

    pub fn slots(self) -> Vec<TermSlot> {
        match self {
            Mode::None | Mode::Image => vec![],
            Mode::Direct | Mode::DirectImage => vec![TermSlot::Direct],
            Mode::Indirect | Mode::IndirectImage => vec![TermSlot::Indirect],
            Mode::Full => vec![TermSlot::Direct, TermSlot::Indirect],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.name().to_string()
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "baseline" | "nic" | "baseline-nic" => Mode::Image,
            "cnet" | "cnet-nic" | "full" => Mode::Full,
            "none-only-seqs" | "none" => Mode::None,
            "image-embedding" => Mode::Image,
            "direct-terms" => Mode::Direct,
            "indirect-terms" => Mode::Indirect,
            other => Mode::ALL
                .into_iter()
                .find(|m| m.name() == other)
                .ok_or_else(|| Error::Config(format!("unknown mode `{other}`")))?,
        };
        Ok(m)
    }
}

/// Which related-term list an encoder reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermSlot {
    Direct,
    Indirect,
    /// Direct terms followed by indirect terms; used for encoder pretraining.
    Combined,
}

/// A captioning model of a given mode, or the encoder-pretraining network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Caption(Mode),
    Pretrain,
}

impl ModelKind {
    pub const PRETRAIN_TAG: &'static str = "pretrain-encoder";

    pub fn uses_image(self) -> bool {
        match self {
            ModelKind::Caption(m) => m.uses_image(),
            ModelKind::Pretrain => true,
        }
    }

    pub fn slots(self) -> Vec<TermSlot> {
        match self {
            ModelKind::Caption(m) => m.slots(),
            ModelKind::Pretrain => vec![TermSlot::Combined],
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Caption(m) => m.name(),
            ModelKind::Pretrain => Self::PRETRAIN_TAG,
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        if tag == Self::PRETRAIN_TAG {
            Ok(ModelKind::Pretrain)
        } else {
            Ok(ModelKind::Caption(tag.parse()?))
        }
    }
}

/// Layer widths chosen by the user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed: usize,
    pub hidden: usize,
    pub term_embed: usize,
    pub term_hidden: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed: 32,
            hidden: 32,
            term_embed: 16,
            term_hidden: 16,
            init_scale: 0.08,
        }
    }
}

/// Full set of model dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub feature: usize,
    pub term_dim: usize,
    pub term_embed: usize,
    pub term_hidden: usize,
}

impl ModelDims {
    pub fn new(cfg: &ModelConfig, vocab: usize, feature: usize, term_dim: usize) -> Self {
        ModelDims {
            vocab,
            embed: cfg.embed,
            hidden: cfg.hidden,
            feature,
            term_dim,
            term_embed: cfg.term_embed,
            term_hidden: cfg.term_hidden,
        }
    }
}

/// Trainable parameters. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionParams {
    /// `vocab x embed`
    pub w_e: Matrix,
    pub decoder: LstmParams,
    /// `vocab x hidden`
    pub w_out: Matrix,
    pub b_out: Matrix,
    /// `embed x width(z)`
    pub w_init: Matrix,
    pub b_init: Matrix,
    /// One per term slot of the model kind.
    pub encoders: Vec<TermEncoderParams>,
}

impl CaptionParams {
    fn zeros(dims: &ModelDims, conditioning_width: usize, slots: usize) -> Self {
        CaptionParams {
            w_e: Matrix::zeros(dims.vocab, dims.embed),
            decoder: LstmParams::zeros(dims.embed, dims.hidden),
            w_out: Matrix::zeros(dims.vocab, dims.hidden),
            b_out: Matrix::zeros(dims.vocab, 1),
            w_init: Matrix::zeros(dims.embed, conditioning_width),
            b_init: Matrix::zeros(dims.embed, 1),
            encoders: (0..slots)
                .map(|_| TermEncoderParams::zeros(dims.term_dim, dims.term_embed, dims.term_hidden))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
        z
    }

    /// Tensor names, in the same order as [`CaptionParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "w_e",
            "decoder.w_x",
            "decoder.w_h",
            "decoder.b",
            "w_out",
            "b_out",
            "w_init",
            "b_init",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for k in 0..self.encoders.len() {
            for part in ["w_r", "specials", "lstm.w_x", "lstm.w_h", "lstm.b"] {
                names.push(format!("encoder{k}.{part}"));
            }
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.w_e];
        v.extend(self.decoder.tensors());
        v.extend([&self.w_out, &self.b_out, &self.w_init, &self.b_init]);
        for e in &self.encoders {
            v.extend(e.tensors());
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.w_e];
        v.extend(self.decoder.tensors_mut());
        v.extend([&mut self.w_out, &mut self.b_out, &mut self.w_init, &mut self.b_init]);
        for e in &mut self.encoders {
            v.extend(e.tensors_mut());
        }
        v
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().map(|t| t.norm_sq()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &CaptionParams) {
        for (s, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            s.axpy(a, o);
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(a));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Raw per-image inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageInputs {
    pub feature: Vec<f64>,
    pub direct: Vec<TermToken>,
    pub indirect: Vec<TermToken>,
}

/// Encoded conditioning: the image feature `a` and one encoding per term slot.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingInputs {
    pub a: Vec<f64>,
    pub terms: Vec<Vec<f64>>,
}

/// One training pair: inputs plus an encoded caption `[START, ..., END]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub inputs: ImageInputs,
    pub caption: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub vocab: Vocabulary,
    pub params: CaptionParams,
}

struct StepCache {
    lstm: LstmCache,
    h: Vec<f64>,
    probs: Vec<f64>,
}

struct ForwardCache {
    encoders: Vec<EncoderCache>,
    z: Vec<f64>,
    init: LstmCache,
    steps: Vec<StepCache>,
}

impl CaptionModel {
    /// Fresh model with uniform random parameters. When `pretrained` is
    /// given, every term slot starts as a copy of it.
    pub fn new<R: Rng>(
        kind: ModelKind,
        dims: ModelDims,
        vocab: Vocabulary,
        init_scale: f64,
        rng: &mut R,
        pretrained: Option<&TermEncoderParams>,
    ) -> Result<Self> {
        if vocab.len() != dims.vocab {
            return Err(Error::invalid(format!(
                "vocabulary has {} entries, dims say {}",
                vocab.len(),
                dims.vocab
            )));
        }
        if dims.embed == 0 || dims.hidden == 0 {
            return Err(Error::Config("embed and hidden sizes must be positive".into()));
        }
        if kind.uses_image() && dims.feature == 0 {
            return Err(Error::Config("image-conditioned mode needs a non-empty feature".into()));
        }
        if let Some(p) = pretrained {
            if p.term_dim() != dims.term_dim || p.w_r.rows() != dims.term_embed || p.hidden_size() != dims.term_hidden {
                return Err(Error::Config(
                    "pretrained encoder does not match model dimensions".into(),
                ));
            }
        }
        let slots = kind.slots();
        let width = Self::conditioning_width(kind, &dims);
        let s = init_scale;
        let mut params = CaptionParams {
            w_e: Matrix::uniform(dims.vocab, dims.embed, s, rng),
            decoder: LstmParams::uniform(dims.embed, dims.hidden, s, rng),
            w_out: Matrix::uniform(dims.vocab, dims.hidden, s, rng),
            b_out: Matrix::uniform(dims.vocab, 1, s, rng),
            w_init: Matrix::uniform(dims.embed, width, s, rng),
            b_init: Matrix::uniform(dims.embed, 1, s, rng),
            encoders: Vec::with_capacity(slots.len()),
        };
        for _ in &slots {
            params.encoders.push(match pretrained {
                Some(p) => p.clone(),
                None => TermEncoderParams::uniform(dims.term_dim, dims.term_embed, dims.term_hidden, s, rng),
            });
        }
        Ok(CaptionModel {
            kind,
            dims,
            vocab,
            params,
        })
    }

    /// Model of the same kind and dims with all-zero parameters.
    pub fn zeros(kind: ModelKind, dims: ModelDims, vocab: Vocabulary) -> Self {
        let width = Self::conditioning_width(kind, &dims);
        let params = CaptionParams::zeros(&dims, width, kind.slots().len());
        CaptionModel {
            kind,
            dims,
            vocab,
            params,
        }
    }

    pub fn conditioning_width(kind: ModelKind, dims: &ModelDims) -> usize {
        let image = if kind.uses_image() { dims.feature } else { 0 };
        image + kind.slots().len() * dims.term_hidden
    }

    fn slot_tokens<'a>(&self, slot: TermSlot, inputs: &'a ImageInputs) -> std::borrow::Cow<'a, [TermToken]> {
        match slot {
            TermSlot::Direct => inputs.direct.as_slice().into(),
            TermSlot::Indirect => inputs.indirect.as_slice().into(),
            TermSlot::Combined => {
                let mut all = inputs.direct.clone();
                all.extend(inputs.indirect.iter().cloned());
                all.into()
            }
        }
    }

    fn check_inputs(&self, inputs: &ImageInputs) -> Result<()> {
        if self.kind.uses_image() {
            if inputs.feature.len() != self.dims.feature {
                return Err(Error::invalid(format!(
                    "feature has length {}, model expects {}",
                    inputs.feature.len(),
                    self.dims.feature
                )));
            }
            if inputs.feature.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("non-finite image feature".into()));
            }
        }
        if !self.kind.slots().is_empty() {
            for tok in inputs.direct.iter().chain(&inputs.indirect) {
                if let TermToken::Vector(v) = tok {
                    if v.len() != self.dims.term_dim {
                        return Err(Error::invalid(format!(
                            "term vector has length {}, model expects {}",
                            v.len(),
                            self.dims.term_dim
                        )));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Numeric("non-finite term vector".into()));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_caption(&self, caption: &[usize]) -> Result<()> {
        if caption.len() < 2 || caption[0] != Vocabulary::START || caption[caption.len() - 1] != Vocabulary::END {
            return Err(Error::invalid("caption must start with START and end with END"));
        }
        if let Some(bad) = caption.iter().find(|&&i| i >= self.dims.vocab) {
            return Err(Error::invalid(format!(
                "token index {bad} outside vocabulary of {}",
                self.dims.vocab
            )));
        }
        Ok(())
    }

    /// Runs the term encoders and collects the conditioning parts.
    pub fn embed(&self, inputs: &ImageInputs) -> Result<EmbeddingInputs> {
        self.check_inputs(inputs)?;
        Ok(self.embed_cached(inputs).0)
    }

    fn embed_cached(&self, inputs: &ImageInputs) -> (EmbeddingInputs, Vec<EncoderCache>) {
        let a = if self.kind.uses_image() {
            inputs.feature.clone()
        } else {
            Vec::new()
        };
        let mut terms = Vec::new();
        let mut caches = Vec::new();
        for (slot, enc) in self.kind.slots().into_iter().zip(&self.params.encoders) {
            let (h, cache) = enc.encode(&self.slot_tokens(slot, inputs));
            terms.push(h);
            caches.push(cache);
        }
        (EmbeddingInputs { a, terms }, caches)
    }

    fn concat(emb: &EmbeddingInputs) -> Vec<f64> {
        let mut z = emb.a.clone();
        for t in &emb.terms {
            z.extend_from_slice(t);
        }
        z
    }

    fn start_from(&self, z: &[f64]) -> Result<(LstmState, LstmCache)> {
        if z.len() != self.params.w_init.cols() {
            return Err(Error::invalid(format!(
                "conditioning vector has width {}, model expects {}",
                z.len(),
                self.params.w_init.cols()
            )));
        }
        let mut x = self.params.b_init.data().to_vec();
        self.params.w_init.mul_vec_acc(z, &mut x);
        Ok(self.params.decoder.forward(&x, &LstmState::zeros(self.dims.hidden)))
    }

    /// Decoder state after consuming the conditioning input at step -1.
    pub fn start(&self, emb: &EmbeddingInputs) -> Result<LstmState> {
        Ok(self.start_from(&Self::concat(emb))?.0)
    }

    /// Feeds `token` and returns the next state with the next-word distribution.
    pub fn step(&self, state: &LstmState, token: usize) -> (LstmState, Vec<f64>) {
        let (next, _) = self.params.decoder.forward(self.params.w_e.row(token), state);
        let probs = self.output(&next.h);
        (next, probs)
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        let mut logits = self.params.b_out.data().to_vec();
        self.params.w_out.mul_vec_acc(h, &mut logits);
        softmax(&logits)
    }

    /// Probability rows `p_1 .. p_N` for a caption `[START, w_1, ..., END]`.
    pub fn forward_caption(&self, inputs: &ImageInputs, caption: &[usize]) -> Result<Vec<Vec<f64>>> {
        let emb = self.embed(inputs)?;
        self.forward_embedded(&emb, caption)
    }

    pub fn forward_embedded(&self, emb: &EmbeddingInputs, caption: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_caption(caption)?;
        let mut state = self.start(emb)?;
        let mut rows = Vec::with_capacity(caption.len() - 1);
        for &tok in &caption[..caption.len() - 1] {
            let (next, probs) = self.step(&state, tok);
            state = next;
            rows.push(probs);
        }
        Ok(rows)
    }

    /// Image-only generator: `x_-1 = W_init a + b_init`, then the same
    /// decoder loop. Only defined for [`Mode::Image`].
    pub fn forward_baseline(&self, a: &[f64], caption: &[usize]) -> Result<Vec<Vec<f64>>> {
        if self.kind != ModelKind::Caption(Mode::Image) {
            return Err(Error::Config("baseline path requires the image mode".into()));
        }
        self.check_caption(caption)?;
        let mut x = self.params.b_init.data().to_vec();
        self.params.w_init.mul_vec_acc(a, &mut x);
        let (mut state, _) = self.params.decoder.forward(&x, &LstmState::zeros(self.dims.hidden));
        let mut rows = Vec::new();
        for &tok in &caption[..caption.len() - 1] {
            let (next, probs) = self.step(&state, tok);
            state = next;
            rows.push(probs);
        }
        Ok(rows)
    }

    fn forward_cached(&self, ex: &Example) -> Result<(f64, ForwardCache)> {
        self.check_inputs(&ex.inputs)?;
        self.check_caption(&ex.caption)?;
        let (emb, encoders) = self.embed_cached(&ex.inputs);
        let z = Self::concat(&emb);
        let (mut state, init) = self.start_from(&z)?;
        let mut nll = 0.0;
        let mut steps = Vec::with_capacity(ex.caption.len() - 1);
        for w in ex.caption.windows(2) {
            let (next, lstm) = self.params.decoder.forward(self.params.w_e.row(w[0]), &state);
            let probs = self.output(&next.h);
            nll -= probs[w[1]].ln();
            steps.push(StepCache {
                lstm,
                h: next.h.clone(),
                probs,
            });
            state = next;
        }
        Ok((
            nll,
            ForwardCache {
                encoders,
                z,
                init,
                steps,
            },
        ))
    }

    /// Negative log-likelihood of one caption.
    pub fn caption_nll(&self, ex: &Example) -> Result<f64> {
        Ok(self.forward_cached(ex)?.0)
    }

    /// Mean caption NLL over the batch, without regularization.
    pub fn data_loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            total += self.caption_nll(ex)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean caption NLL plus `lambda * |theta|^2`.
    pub fn loss(&self, batch: &[Example], lambda: f64) -> Result<f64> {
        Ok(self.data_loss(batch)? + lambda * self.params.norm_sq())
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn gradients(&self, batch: &[Example], lambda: f64) -> Result<(f64, CaptionParams)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = self.params.zeros_like();
        let mut total = 0.0;
        for ex in batch {
            let (nll, cache) = self.forward_cached(ex)?;
            total += nll;
            self.backward(ex, &cache, scale, &mut grad);
        }
        let reg = self.params.norm_sq();
        grad.axpy(2.0 * lambda, &self.params);
        Ok((total * scale + lambda * reg, grad))
    }

    fn backward(&self, ex: &Example, cache: &ForwardCache, scale: f64, grad: &mut CaptionParams) {
        let p = &self.params;
        let hs = self.dims.hidden;
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let target = ex.caption[t + 1];
            let mut dlogits: Vec<f64> = step.probs.iter().map(|q| q * scale).collect();
            dlogits[target] -= scale;
            grad.w_out.add_outer(&dlogits, &step.h);
            for (b, d) in grad.b_out.data_mut().iter_mut().zip(&dlogits) {
                *b += d;
            }
            let mut dh = dh_next;
            p.w_out.mul_t_vec_acc(&dlogits, &mut dh);
            let (dx, dh_prev, dc_prev) = p.decoder.backward(&step.lstm, &dh, &dc_next, &mut grad.decoder);
            for (g, d) in grad.w_e.row_mut(ex.caption[t]).iter_mut().zip(&dx) {
                *g += d;
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        let (dx, _, _) = p.decoder.backward(&cache.init, &dh_next, &dc_next, &mut grad.decoder);
        grad.w_init.add_outer(&dx, &cache.z);
        for (b, d) in grad.b_init.data_mut().iter_mut().zip(&dx) {
            *b += d;
        }
        if cache.encoders.is_empty() {
            return;
        }
        let mut dz = vec![0.0; cache.z.len()];
        p.w_init.mul_t_vec_acc(&dx, &mut dz);
        let mut offset = if self.kind.uses_image() { self.dims.feature } else { 0 };
        for ((enc, enc_cache), enc_grad) in p.encoders.iter().zip(&cache.encoders).zip(grad.encoders.iter_mut()) {
            let width = enc.hidden_size();
            enc.backward(enc_cache, &dz[offset..offset + width], enc_grad);
            offset += width;
        }
    }
}
