//! Desk-scale encoder-decoder captioner over synthetic (color, object)
//! scenes: pooled features → FR-linear encoder → single-head scaled
//! dot-product attention decoder → greedy caption, with every trainable
//! parameter stored as a [`FreqParam`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::freqparam::FreqParam;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const COLORS: [&str; 4] = ["red", "green", "blue", "yellow"];
pub const OBJECTS: [&str; 4] = ["ball", "box", "car", "cup"];

/// Feature length of synthetic scenes: one-hot color ++ one-hot object.
pub const SYNTH_FEAT_DIM: usize = COLORS.len() + OBJECTS.len();

/// Token table with fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub const SOS: usize = 0;
    pub const EOS: usize = 1;
    pub const PAD: usize = 2;
    pub const UNK: usize = 3;

    /// Builds a vocabulary from the reserved tokens plus `extra` (deduped,
    /// order preserved).
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(extra: I) -> Vocab {
        let mut tokens: Vec<String> = ["sos", "eos", "pad", "unk"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut index: BTreeMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for t in extra {
            let t = t.into();
            if !index.contains_key(&t) {
                index.insert(t.clone(), tokens.len());
                tokens.push(t);
            }
        }
        Vocab { tokens, index }
    }

    /// Vocabulary of the synthetic scene grammar.
    pub fn synth() -> Vocab {
        Vocab::new(
            std::iter::once("a")
                .chain(COLORS)
                .chain(OBJECTS)
                .map(str::to_string),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens always present
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Argument(format!("token id {id} out of range")))
    }

    /// Whitespace caption to ids; unknown words map to `UNK`.
    pub fn encode(&self, caption: &str) -> Vec<usize> {
        caption.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.tokens).expect("token list serializes");
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("vocab: {e}")))?;
        if tokens.len() < 4 || tokens[..4] != ["sos", "eos", "pad", "unk"] {
            return Err(Error::Format(
                "vocab must start with the reserved tokens sos, eos, pad, unk".into(),
            ));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab { tokens, index })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CaptionConfig {
    pub feat_dim: usize,
    pub embed_dim: usize,
    pub seq_length: usize,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        // toy-scale embedding; seq_length keeps the source pipeline's bound
        Self {
            feat_dim: SYNTH_FEAT_DIM,
            embed_dim: 32,
            seq_length: 25,
        }
    }
}

/// Named parameter slots of the caption model.
const PARAM_NAMES: [&str; 13] = [
    "encoder.weight",
    "encoder.bias",
    "embed.weight",
    "attn.query.weight",
    "attn.query.bias",
    "attn.key.weight",
    "attn.key.bias",
    "attn.value.weight",
    "attn.value.bias",
    "attn.out.weight",
    "attn.out.bias",
    "output.weight",
    "output.bias",
];

pub struct CaptionModel {
    pub config: CaptionConfig,
    pub vocab: Vocab,
    params: BTreeMap<String, FreqParam>,
}

/// Spatial weights reconstructed once per scene/decode.
struct Dense {
    enc_w: Tensor,
    enc_b: Tensor,
    embed: Tensor,
    qw: Tensor,
    qb: Tensor,
    kw: Tensor,
    kb: Tensor,
    vw: Tensor,
    vb: Tensor,
    ow: Tensor,
    ob: Tensor,
    out_w: Tensor,
    out_b: Tensor,
}

/// `w (m×n) · x (n)`.
fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(n, x.len());
    let mut y = vec![0.0; m];
    for i in 0..m {
        y[i] = w.data()[i * n..(i + 1) * n]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum();
    }
    y
}

/// `wᵀ (n×m) · y (m)` for `w (m×n)`.
fn matvec_t(w: &Tensor, y: &[f64]) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(m, y.len());
    let mut x = vec![0.0; n];
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        for (xj, &wij) in x.iter_mut().zip(&w.data()[i * n..(i + 1) * n]) {
            *xj += yi * wij;
        }
    }
    x
}

/// `dw += y ⊗ x`.
fn outer_acc(dw: &mut Tensor, y: &[f64], x: &[f64]) {
    let n = x.len();
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        for (d, &xj) in dw.data_mut()[i * n..(i + 1) * n].iter_mut().zip(x) {
            *d += yi * xj;
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = scores.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-step record kept for the backward pass.
struct StepRecord {
    prev_token: usize,
    n_slots: usize,
    q: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    out_vec: Vec<f64>,
    probs: Vec<f64>,
}

/// Whole-scene forward trace.
struct Trace {
    memory: Vec<f64>,
    slot_tokens: Vec<usize>, // consumed token ids, slot i+1 embeds slot_tokens[i]
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    steps: Vec<StepRecord>,
}

/// Accumulated spatial gradients, one entry per parameter slot.
struct SpatialGrads(BTreeMap<String, Tensor>);

/// Decoding state: encoder memory plus consumed-token attention slots.
pub struct DecodeState {
    memory: Vec<f64>,
    consumed: Vec<usize>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    last_attention: Vec<f64>,
}

impl DecodeState {
    pub fn consumed(&self) -> &[usize] {
        &self.consumed
    }

    /// Encoder output this state attends over.
    pub fn memory(&self) -> &[f64] {
        &self.memory
    }

    /// Attention weights of the most recent step (sums to 1).
    pub fn last_attention(&self) -> &[f64] {
        &self.last_attention
    }
}

impl CaptionModel {
    /// He-initializes a model over the given vocabulary.
    pub fn init(config: CaptionConfig, vocab: Vocab, rng: &mut Rng) -> Result<CaptionModel> {
        if config.feat_dim == 0 || config.embed_dim == 0 || config.seq_length < 2 {
            return Err(Error::Argument(
                "caption config needs positive dims and seq_length >= 2".into(),
            ));
        }
        let d = config.embed_dim;
        let v = vocab.len();
        let f = config.feat_dim;
        let mut params = BTreeMap::new();
        let mut add = |name: &str, shape: &[usize], fan_in: usize, rng: &mut Rng| -> Result<()> {
            let p = FreqParam::init(shape, (2.0 / fan_in as f64).sqrt(), rng)?;
            params.insert(name.to_string(), p);
            Ok(())
        };
        add("encoder.weight", &[d, f], f, rng)?;
        add("embed.weight", &[v, d], d, rng)?;
        add("attn.query.weight", &[d, d], d, rng)?;
        add("attn.key.weight", &[d, d], d, rng)?;
        add("attn.value.weight", &[d, d], d, rng)?;
        add("attn.out.weight", &[d, d], d, rng)?;
        add("output.weight", &[v, d], d, rng)?;
        for (name, len) in [
            ("encoder.bias", d),
            ("attn.query.bias", d),
            ("attn.key.bias", d),
            ("attn.value.bias", d),
            ("attn.out.bias", d),
            ("output.bias", v),
        ] {
            params.insert(
                name.to_string(),
                FreqParam::from_spatial(&Tensor::zeros(&[len])?)?,
            );
        }
        Ok(CaptionModel {
            config,
            vocab,
            params,
        })
    }

    fn dense(&self) -> Dense {
        let get = |name: &str| self.params[name].reconstruct();
        Dense {
            enc_w: get("encoder.weight"),
            enc_b: get("encoder.bias"),
            embed: get("embed.weight"),
            qw: get("attn.query.weight"),
            qb: get("attn.query.bias"),
            kw: get("attn.key.weight"),
            kb: get("attn.key.bias"),
            vw: get("attn.value.weight"),
            vb: get("attn.value.bias"),
            ow: get("attn.out.weight"),
            ob: get("attn.out.bias"),
            out_w: get("output.weight"),
            out_b: get("output.bias"),
        }
    }

    pub fn for_each_param(&self, f: &mut dyn FnMut(&str, &FreqParam)) {
        for name in PARAM_NAMES {
            f(name, &self.params[name]);
        }
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut FreqParam)) {
        for name in PARAM_NAMES {
            f(name, self.params.get_mut(name).unwrap());
        }
    }

    pub fn named_params(&self) -> Vec<(String, &FreqParam)> {
        PARAM_NAMES
            .iter()
            .map(|&n| (n.to_string(), &self.params[n]))
            .collect()
    }

    fn embed_row(dense: &Dense, token: usize) -> Vec<f64> {
        let d = dense.embed.shape()[1];
        dense.embed.data()[token * d..(token + 1) * d].to_vec()
    }

    /// Projects a feature vector into the decoder's memory representation.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        if features.shape() != [self.config.feat_dim] {
            return Err(Error::Shape(format!(
                "expected features of length {}, got {:?}",
                self.config.feat_dim,
                features.shape()
            )));
        }
        let dense = self.dense();
        let mut m = matvec(&dense.enc_w, features.data());
        axpy(&mut m, 1.0, dense.enc_b.data());
        Tensor::from_vec(&[self.config.embed_dim], m)
    }

    /// Starts decoding: encodes the features into the single memory slot.
    pub fn start(&self, features: &Tensor) -> Result<DecodeState> {
        let memory = self.encode(features)?.into_data();
        let dense = self.dense();
        let mut mk = matvec(&dense.kw, &memory);
        axpy(&mut mk, 1.0, dense.kb.data());
        let mut mv = matvec(&dense.vw, &memory);
        axpy(&mut mv, 1.0, dense.vb.data());
        Ok(DecodeState {
            memory,
            consumed: Vec::new(),
            keys: vec![mk],
            values: vec![mv],
            last_attention: Vec::new(),
        })
    }

    /// One causal step: consumes `prev_token`, attends over the memory slot
    /// plus all consumed tokens, returns unnormalized vocabulary scores.
    pub fn decode_step(&self, state: &mut DecodeState, prev_token: usize) -> Result<Vec<f64>> {
        if prev_token >= self.vocab.len() {
            return Err(Error::Argument(format!(
                "token id {prev_token} out of range for vocab of {}",
                self.vocab.len()
            )));
        }
        let dense = self.dense();
        state.consumed.push(prev_token);
        let x = Self::embed_row(&dense, prev_token);
        let mut k = matvec(&dense.kw, &x);
        axpy(&mut k, 1.0, dense.kb.data());
        let mut v = matvec(&dense.vw, &x);
        axpy(&mut v, 1.0, dense.vb.data());
        state.keys.push(k);
        state.values.push(v);

        let mut q = matvec(&dense.qw, &x);
        axpy(&mut q, 1.0, dense.qb.data());
        let scale = 1.0 / (self.config.embed_dim as f64).sqrt();
        let scores: Vec<f64> = state
            .keys
            .iter()
            .map(|k| scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let attn = softmax(&scores);
        let d = self.config.embed_dim;
        let mut ctx = vec![0.0; d];
        for (a, v) in attn.iter().zip(&state.values) {
            axpy(&mut ctx, *a, v);
        }
        let mut out = matvec(&dense.ow, &ctx);
        axpy(&mut out, 1.0, dense.ob.data());
        axpy(&mut out, 1.0, &x);
        let mut logits = matvec(&dense.out_w, &out);
        axpy(&mut logits, 1.0, dense.out_b.data());
        state.last_attention = attn;
        Ok(logits)
    }

    /// Greedy decoding from `sos`, halting at `eos` or the sequence bound.
    /// The returned caption excludes the markers.
    pub fn generate(&self, features: &Tensor) -> Result<String> {
        let mut state = self.start(features)?;
        let mut prev = Vocab::SOS;
        let mut words: Vec<&str> = Vec::new();
        for _ in 0..self.config.seq_length - 1 {
            let logits = self.decode_step(&mut state, prev)?;
            let next = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if next == Vocab::EOS {
                break;
            }
            words.push(self.vocab.token(next)?);
            prev = next;
        }
        Ok(words.join(" "))
    }

    /// Teacher-forced forward over one scene; records everything backward
    /// needs. `token_ids` must be the full `sos … eos` sequence.
    fn forward_scene(&self, dense: &Dense, features: &[f64], token_ids: &[usize]) -> Trace {
        let d = self.config.embed_dim;
        let mut memory = matvec(&dense.enc_w, features);
        axpy(&mut memory, 1.0, dense.enc_b.data());
        let mut mk = matvec(&dense.kw, &memory);
        axpy(&mut mk, 1.0, dense.kb.data());
        let mut mv = matvec(&dense.vw, &memory);
        axpy(&mut mv, 1.0, dense.vb.data());
        let mut trace = Trace {
            memory,
            slot_tokens: Vec::new(),
            keys: vec![mk],
            values: vec![mv],
            steps: Vec::new(),
        };
        let scale = 1.0 / (d as f64).sqrt();
        for s in 0..token_ids.len() - 1 {
            let prev = token_ids[s];
            let x = Self::embed_row(dense, prev);
            let mut k = matvec(&dense.kw, &x);
            axpy(&mut k, 1.0, dense.kb.data());
            let mut v = matvec(&dense.vw, &x);
            axpy(&mut v, 1.0, dense.vb.data());
            trace.slot_tokens.push(prev);
            trace.keys.push(k);
            trace.values.push(v);

            let mut q = matvec(&dense.qw, &x);
            axpy(&mut q, 1.0, dense.qb.data());
            let scores: Vec<f64> = trace
                .keys
                .iter()
                .map(|k| scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let attn = softmax(&scores);
            let mut ctx = vec![0.0; d];
            for (a, v) in attn.iter().zip(&trace.values) {
                axpy(&mut ctx, *a, v);
            }
            let mut out = matvec(&dense.ow, &ctx);
            axpy(&mut out, 1.0, dense.ob.data());
            axpy(&mut out, 1.0, &x);
            let mut logits = matvec(&dense.out_w, &out);
            axpy(&mut logits, 1.0, dense.out_b.data());
            let probs = softmax(&logits);
            trace.steps.push(StepRecord {
                prev_token: prev,
                n_slots: trace.keys.len(),
                q,
                attn,
                ctx,
                out_vec: out,
                probs,
            });
        }
        trace
    }

    /// Mean teacher-forced cross-entropy of one scene.
    pub fn scene_loss(&self, features: &Tensor, token_ids: &[usize]) -> Result<f64> {
        self.check_scene(features, token_ids)?;
        let dense = self.dense();
        let trace = self.forward_scene(&dense, features.data(), token_ids);
        let mut loss = 0.0;
        for (s, step) in trace.steps.iter().enumerate() {
            loss -= step.probs[token_ids[s + 1]].max(1e-300).ln();
        }
        Ok(loss / trace.steps.len() as f64)
    }

    fn check_scene(&self, features: &Tensor, token_ids: &[usize]) -> Result<()> {
        if features.shape() != [self.config.feat_dim] {
            return Err(Error::Shape(format!(
                "expected features of length {}, got {:?}",
                self.config.feat_dim,
                features.shape()
            )));
        }
        if token_ids.len() < 2 {
            return Err(Error::Argument(
                "a scene needs at least sos and eos tokens".into(),
            ));
        }
        if token_ids.len() > self.config.seq_length {
            return Err(Error::Argument(format!(
                "scene of {} tokens exceeds seq_length {}",
                token_ids.len(),
                self.config.seq_length
            )));
        }
        if let Some(&bad) = token_ids.iter().find(|&&t| t >= self.vocab.len()) {
            return Err(Error::Argument(format!("token id {bad} out of range")));
        }
        Ok(())
    }

    /// Backward through the whole scene; returns mean loss and accumulates
    /// spatial gradients.
    fn backward_scene(
        &self,
        dense: &Dense,
        features: &[f64],
        token_ids: &[usize],
        grads: &mut SpatialGrads,
    ) -> f64 {
        let d = self.config.embed_dim;
        let trace = self.forward_scene(dense, features, token_ids);
        let n_steps = trace.steps.len();
        let inv_steps = 1.0 / n_steps as f64;
        let scale = 1.0 / (d as f64).sqrt();

        let mut loss = 0.0;
        // per-slot accumulated key/value gradients
        let n_slots_total = trace.keys.len();
        let mut dk_slots = vec![vec![0.0; d]; n_slots_total];
        let mut dv_slots = vec![vec![0.0; d]; n_slots_total];
        // gradient flowing into each consumed token's embedding (x path)
        let mut dx_tokens = vec![vec![0.0; d]; n_steps];

        for (s, step) in trace.steps.iter().enumerate() {
            let target = token_ids[s + 1];
            loss -= step.probs[target].max(1e-300).ln();
            // dz = (softmax − onehot) · 1/steps
            let mut dz = step.probs.clone();
            dz[target] -= 1.0;
            for v in &mut dz {
                *v *= inv_steps;
            }
            outer_acc(grads.0.get_mut("output.weight").unwrap(), &dz, &step.out_vec);
            axpy(grads.0.get_mut("output.bias").unwrap().data_mut(), 1.0, &dz);
            let do_ = matvec_t(&dense.out_w, &dz);

            // out = x + ow·ctx + ob
            axpy(&mut dx_tokens[s], 1.0, &do_);
            outer_acc(grads.0.get_mut("attn.out.weight").unwrap(), &do_, &step.ctx);
            axpy(grads.0.get_mut("attn.out.bias").unwrap().data_mut(), 1.0, &do_);
            let dctx = matvec_t(&dense.ow, &do_);

            // ctx = Σ a_i v_i
            let n_slots = step.n_slots;
            let mut da = vec![0.0; n_slots];
            for i in 0..n_slots {
                axpy(&mut dv_slots[i], step.attn[i], &dctx);
                da[i] = dctx
                    .iter()
                    .zip(&trace.values[i])
                    .map(|(a, b)| a * b)
                    .sum();
            }
            // softmax backward
            let dot: f64 = step.attn.iter().zip(&da).map(|(a, b)| a * b).sum();
            let ds: Vec<f64> = step
                .attn
                .iter()
                .zip(&da)
                .map(|(a, g)| a * (g - dot))
                .collect();
            // scores_i = scale · q·k_i
            let mut dq = vec![0.0; d];
            for i in 0..n_slots {
                axpy(&mut dq, scale * ds[i], &trace.keys[i]);
                axpy(&mut dk_slots[i], scale * ds[i], &step.q);
            }
            // q = qw·x + qb
            let x = Self::embed_row(dense, step.prev_token);
            outer_acc(grads.0.get_mut("attn.query.weight").unwrap(), &dq, &x);
            axpy(grads.0.get_mut("attn.query.bias").unwrap().data_mut(), 1.0, &dq);
            let dx_q = matvec_t(&dense.qw, &dq);
            axpy(&mut dx_tokens[s], 1.0, &dx_q);
        }

        // slot gradients: k_i = kw·h_i + kb, v_i = vw·h_i + vb
        let mut dmemory = vec![0.0; d];
        for i in 0..n_slots_total {
            let h: Vec<f64> = if i == 0 {
                trace.memory.clone()
            } else {
                Self::embed_row(dense, trace.slot_tokens[i - 1])
            };
            outer_acc(grads.0.get_mut("attn.key.weight").unwrap(), &dk_slots[i], &h);
            axpy(
                grads.0.get_mut("attn.key.bias").unwrap().data_mut(),
                1.0,
                &dk_slots[i],
            );
            outer_acc(grads.0.get_mut("attn.value.weight").unwrap(), &dv_slots[i], &h);
            axpy(
                grads.0.get_mut("attn.value.bias").unwrap().data_mut(),
                1.0,
                &dv_slots[i],
            );
            let mut dh = matvec_t(&dense.kw, &dk_slots[i]);
            axpy(&mut dh, 1.0, &matvec_t(&dense.vw, &dv_slots[i]));
            if i == 0 {
                axpy(&mut dmemory, 1.0, &dh);
            } else {
                axpy(&mut dx_tokens[i - 1], 1.0, &dh);
            }
        }

        // embedding rows
        for (s, dx) in dx_tokens.iter().enumerate() {
            let token = trace.slot_tokens[s];
            let embed_grad = grads.0.get_mut("embed.weight").unwrap();
            axpy(
                &mut embed_grad.data_mut()[token * d..(token + 1) * d],
                1.0,
                dx,
            );
        }

        // memory = enc_w·f + enc_b
        outer_acc(grads.0.get_mut("encoder.weight").unwrap(), &dmemory, features);
        axpy(
            grads.0.get_mut("encoder.bias").unwrap().data_mut(),
            1.0,
            &dmemory,
        );

        loss * inv_steps
    }

    fn zero_spatial_grads(&self) -> SpatialGrads {
        SpatialGrads(
            self.named_params()
                .iter()
                .map(|(name, p)| {
                    (
                        name.clone(),
                        Tensor::zeros(p.spatial_shape()).expect("valid shape"),
                    )
                })
                .collect(),
        )
    }

    /// One SGD step on a single scene; returns its loss.
    pub fn train_scene(
        &mut self,
        features: &Tensor,
        token_ids: &[usize],
        lr: f64,
    ) -> Result<f64> {
        self.check_scene(features, token_ids)?;
        let dense = self.dense();
        let mut grads = self.zero_spatial_grads();
        let loss = self.backward_scene(&dense, features.data(), token_ids, &mut grads);
        for (name, spatial) in &grads.0 {
            let p = self.params.get_mut(name).unwrap();
            let freq = p.grad_to_freq(spatial)?;
            p.coeffs_mut().add_scaled(-lr, &freq);
        }
        Ok(loss)
    }

    /// Epoch loop over scenes with seeded shuffling; returns mean loss per
    /// epoch.
    pub fn train_scenes(
        &mut self,
        scenes: &[(Tensor, Vec<usize>)],
        epochs: usize,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        if scenes.is_empty() {
            return Err(Error::Argument("no scenes to train on".into()));
        }
        let mut losses = Vec::with_capacity(epochs);
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        for _ in 0..epochs {
            rng.shuffle(&mut order);
            let mut total = 0.0;
            for &i in &order {
                total += self.train_scene(&scenes[i].0, &scenes[i].1, lr)?;
            }
            losses.push(total / scenes.len() as f64);
        }
        Ok(losses)
    }

    /// Saves params, vocab, and config into a checkpoint directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let params = self.named_params();
        checkpoint::save_params(dir, &params)?;
        self.vocab.save(&dir.join("vocab.json"))?;
        let json =
            serde_json::to_string_pretty(&self.config).expect("caption config serializes");
        fs::write(dir.join("caption_config.json"), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<CaptionModel> {
        let text = fs::read_to_string(dir.join("caption_config.json"))?;
        let config: CaptionConfig =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("config: {e}")))?;
        let vocab = Vocab::load(&dir.join("vocab.json"))?;
        let loaded: BTreeMap<String, FreqParam> =
            checkpoint::load_params(dir)?.into_iter().collect();
        for name in PARAM_NAMES {
            if !loaded.contains_key(name) {
                return Err(Error::Integrity(format!("checkpoint lacks {name}")));
            }
        }
        Ok(CaptionModel {
            config,
            vocab,
            params: loaded,
        })
    }
}

/// Synthetic scene: features are noisy one-hot(color) ++ one-hot(object);
/// caption is `sos a <color> <object> eos`. Combinations cycle
/// deterministically; noise comes from the seeded rng.
pub fn synth_dataset(
    n_scenes: usize,
    noise: f64,
    rng: &mut Rng,
) -> Result<Vec<(Tensor, String)>> {
    if n_scenes == 0 {
        return Err(Error::Argument("need at least one scene".into()));
    }
    let mut out = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let color = i % COLORS.len();
        let object = (i / COLORS.len()) % OBJECTS.len();
        let mut features = vec![0.0; SYNTH_FEAT_DIM];
        features[color] = 1.0;
        features[COLORS.len() + object] = 1.0;
        for f in &mut features {
            *f += noise * rng.next_normal();
        }
        out.push((
            Tensor::from_vec(&[SYNTH_FEAT_DIM], features)?,
            format!("sos a {} {} eos", COLORS[color], OBJECTS[object]),
        ));
    }
    Ok(out)
}

/// Noiseless features for a (color, object) pair.
pub fn scene_features(color: &str, object: &str) -> Result<Tensor> {
    let ci = COLORS
        .iter()
        .position(|&c| c == color)
        .ok_or_else(|| Error::Argument(format!("unknown color {color:?}")))?;
    let oi = OBJECTS
        .iter()
        .position(|&o| o == object)
        .ok_or_else(|| Error::Argument(format!("unknown object {object:?}")))?;
    let mut features = vec![0.0; SYNTH_FEAT_DIM];
    features[ci] = 1.0;
    features[COLORS.len() + oi] = 1.0;
    Tensor::from_vec(&[SYNTH_FEAT_DIM], features)
}
