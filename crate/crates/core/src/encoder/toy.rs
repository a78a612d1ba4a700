//! A desk-scale trainable encoder.
//!
//! Hashed-word embeddings, one context-mixing layer, and two linear heads.
//! Forward and backward passes are written out by hand so gradients can be
//! checked against finite differences and training stays bit-reproducible
//! on one thread. It stands in for checkpoint backends wherever the suite
//! must run without downloads or accelerators.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    EncoderBackend, EncoderBackendSpec, EncoderError, EncoderOutput, HashTokenizer, TokenizedInput,
};

/// Trainable encoder over a hashed vocabulary.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    spec: EncoderBackendSpec,
    tokenizer: HashTokenizer,
    num_tags: usize,
    seed: u64,
    embed: Array2<f64>,
    mix_w: Array2<f64>,
    mix_u: Array2<f64>,
    mix_b: Array1<f64>,
    doc_w: Array2<f64>,
    doc_b: Array1<f64>,
    tok_w: Array2<f64>,
    tok_b: Array1<f64>,
}

/// Gradient buffers mirroring the parameter tensors.
#[derive(Debug, Clone)]
pub struct ToyGrads {
    pub embed: Array2<f64>,
    pub mix_w: Array2<f64>,
    pub mix_u: Array2<f64>,
    pub mix_b: Array1<f64>,
    pub doc_w: Array2<f64>,
    pub doc_b: Array1<f64>,
    pub tok_w: Array2<f64>,
    pub tok_b: Array1<f64>,
}

impl ToyGrads {
    fn zeros_like(b: &ToyBackend) -> Self {
        Self {
            embed: Array2::zeros(b.embed.dim()),
            mix_w: Array2::zeros(b.mix_w.dim()),
            mix_u: Array2::zeros(b.mix_u.dim()),
            mix_b: Array1::zeros(b.mix_b.dim()),
            doc_w: Array2::zeros(b.doc_w.dim()),
            doc_b: Array1::zeros(b.doc_b.dim()),
            tok_w: Array2::zeros(b.tok_w.dim()),
            tok_b: Array1::zeros(b.tok_b.dim()),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.embed.iter());
        out.extend(self.mix_w.iter());
        out.extend(self.mix_u.iter());
        out.extend(self.mix_b.iter());
        out.extend(self.doc_w.iter());
        out.extend(self.doc_b.iter());
        out.extend(self.tok_w.iter());
        out.extend(self.tok_b.iter());
        out
    }
}

struct ForwardCache {
    x: Array2<f64>,
    c: Array1<f64>,
    h: Array2<f64>,
    p: Array1<f64>,
    z: Array1<f64>,
    s: Array2<f64>,
    mask_count: f64,
}

fn stable_softmax(z: &Array1<f64>) -> Array1<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = z.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

impl ToyBackend {
    /// Seed-deterministic construction: the same `(spec, num_tags, seed)`
    /// always yields bitwise-identical parameters.
    pub fn new(
        spec: &EncoderBackendSpec,
        num_tags: usize,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        let d = spec.hidden_dim;
        if !(8..=128).contains(&d) {
            return Err(EncoderError::HiddenDimOutOfRange(d));
        }
        let vocab_size = spec.vocab_size()?;
        let num_tags = num_tags.max(1);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |rows: usize, cols: usize, bound: f64| -> Array2<f64> {
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
        };

        let embed = sample(vocab_size, d, 0.1);
        let mix_bound = (6.0 / (2.0 * d as f64)).sqrt();
        let mix_w = sample(d, d, mix_bound);
        let mix_u = sample(d, d, mix_bound);
        let doc_bound = (6.0 / (d as f64 + 2.0)).sqrt();
        let doc_w = sample(2, d, doc_bound);
        let tok_bound = (6.0 / (d as f64 + num_tags as f64)).sqrt();
        let tok_w = sample(num_tags, d, tok_bound);

        Ok(Self {
            spec: spec.clone(),
            tokenizer: HashTokenizer::new(vocab_size),
            num_tags,
            seed,
            embed,
            mix_w,
            mix_u,
            mix_b: Array1::zeros(d),
            doc_w,
            doc_b: Array1::zeros(2),
            tok_w,
            tok_b: Array1::zeros(num_tags),
        })
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tokenizer(&self) -> &HashTokenizer {
        &self.tokenizer
    }

    fn check_ids(&self, input: &TokenizedInput) -> Result<(), EncoderError> {
        let vocab_size = self.embed.nrows();
        for &id in &input.token_ids {
            if id as usize >= vocab_size {
                return Err(EncoderError::VocabOutOfRange { id, vocab_size });
            }
        }
        Ok(())
    }

    fn forward(&self, input: &TokenizedInput) -> Result<ForwardCache, EncoderError> {
        self.check_ids(input)?;
        let d = self.spec.hidden_dim;
        let len = input.token_ids.len();

        let mut x = Array2::<f64>::zeros((len, d));
        for (i, &id) in input.token_ids.iter().enumerate() {
            x.row_mut(i).assign(&self.embed.row(id as usize));
        }

        let mask_count = input.attention_mask.iter().filter(|&&m| m != 0).count() as f64;
        let mut c = Array1::<f64>::zeros(d);
        if mask_count > 0.0 {
            for (i, &m) in input.attention_mask.iter().enumerate() {
                if m != 0 {
                    c += &x.row(i);
                }
            }
            c /= mask_count;
        }

        let uc = self.mix_u.dot(&c);
        let mut h = Array2::<f64>::zeros((len, d));
        for i in 0..len {
            let pre = self.mix_w.dot(&x.row(i)) + &uc + &self.mix_b;
            h.row_mut(i).assign(&pre.mapv(f64::tanh));
        }

        let mut p = Array1::<f64>::zeros(d);
        if mask_count > 0.0 {
            for (i, &m) in input.attention_mask.iter().enumerate() {
                if m != 0 {
                    p += &h.row(i);
                }
            }
            p /= mask_count;
        }

        let z = self.doc_w.dot(&p) + &self.doc_b;
        let mut s = Array2::<f64>::zeros((len, self.num_tags));
        for i in 0..len {
            s.row_mut(i)
                .assign(&(self.tok_w.dot(&h.row(i)) + &self.tok_b));
        }

        Ok(ForwardCache {
            x,
            c,
            h,
            p,
            z,
            s,
            mask_count,
        })
    }

    /// Backward pass shared by both heads: `dh` holds the loss gradient on
    /// the hidden rows; embeddings and mixing parameters are accumulated
    /// into `grads`.
    fn backward_shared(
        &self,
        input: &TokenizedInput,
        fwd: &ForwardCache,
        dh: &Array2<f64>,
        grads: &mut ToyGrads,
    ) {
        let len = input.token_ids.len();
        let d = self.spec.hidden_dim;

        // through tanh
        let mut dpre = Array2::<f64>::zeros((len, d));
        for i in 0..len {
            let deriv = fwd.h.row(i).mapv(|v| 1.0 - v * v);
            let row = dh.row(i).to_owned() * deriv;
            dpre.row_mut(i).assign(&row);
        }

        let mut sum_dpre = Array1::<f64>::zeros(d);
        for i in 0..len {
            sum_dpre += &dpre.row(i);
        }

        for i in 0..len {
            let dp_i = dpre.row(i);
            let xi = fwd.x.row(i);
            for r in 0..d {
                let g = dp_i[r];
                if g != 0.0 {
                    for col in 0..d {
                        grads.mix_w[[r, col]] += g * xi[col];
                    }
                }
            }
        }
        for r in 0..d {
            let g = sum_dpre[r];
            for col in 0..d {
                grads.mix_u[[r, col]] += g * fwd.c[col];
            }
        }
        grads.mix_b += &sum_dpre;

        // into the embeddings: direct path and through the context mean
        let dc = self.mix_u.t().dot(&sum_dpre);
        for i in 0..len {
            let mut dx = self.mix_w.t().dot(&dpre.row(i));
            if input.attention_mask[i] != 0 && fwd.mask_count > 0.0 {
                dx += &(dc.to_owned() / fwd.mask_count);
            }
            let id = input.token_ids[i] as usize;
            let mut row = grads.embed.row_mut(id);
            row += &dx;
        }
    }

    /// Summed binary cross-entropy loss and gradients over a batch.
    /// Returns `(loss_sum, grads_of_the_sum, unit_count)` where a unit is
    /// one instance; divide by units for the mean-reduced batch loss.
    pub fn loss_grad_binary(
        &self,
        batch: &[(TokenizedInput, u8)],
    ) -> Result<(f64, ToyGrads, f64), EncoderError> {
        let mut grads = ToyGrads::zeros_like(self);
        let mut loss_sum = 0.0;
        for (input, label) in batch {
            let fwd = self.forward(input)?;
            let q = stable_softmax(&fwd.z);
            let y = *label as usize;
            loss_sum += -q[y].max(f64::MIN_POSITIVE).ln();

            let mut dz = q;
            dz[y] -= 1.0;
            for r in 0..2 {
                for col in 0..self.spec.hidden_dim {
                    grads.doc_w[[r, col]] += dz[r] * fwd.p[col];
                }
            }
            grads.doc_b += &dz;

            let dp = self.doc_w.t().dot(&dz);
            let len = input.token_ids.len();
            let mut dh = Array2::<f64>::zeros((len, self.spec.hidden_dim));
            if fwd.mask_count > 0.0 {
                for (i, &m) in input.attention_mask.iter().enumerate() {
                    if m != 0 {
                        dh.row_mut(i).assign(&(dp.to_owned() / fwd.mask_count));
                    }
                }
            }
            self.backward_shared(input, &fwd, &dh, &mut grads);
        }
        Ok((loss_sum, grads, batch.len() as f64))
    }

    /// Summed token-level cross-entropy and gradients. Targets use the tag
    /// index at supervised positions and a negative ignore marker elsewhere.
    /// A unit is one supervised subword position.
    pub fn loss_grad_token(
        &self,
        batch: &[(TokenizedInput, Vec<i64>)],
    ) -> Result<(f64, ToyGrads, f64), EncoderError> {
        let mut grads = ToyGrads::zeros_like(self);
        let mut loss_sum = 0.0;
        let mut units = 0.0;
        for (input, targets) in batch {
            let fwd = self.forward(input)?;
            let len = input.token_ids.len();
            let mut dh = Array2::<f64>::zeros((len, self.spec.hidden_dim));
            let mut touched = false;
            for (i, &target) in targets.iter().enumerate().take(len) {
                if target < 0 {
                    continue;
                }
                let t = target as usize;
                let si = fwd.s.row(i).to_owned();
                let q = stable_softmax(&si);
                loss_sum += -q[t].max(f64::MIN_POSITIVE).ln();
                units += 1.0;
                touched = true;

                let mut ds = q;
                ds[t] -= 1.0;
                for r in 0..self.num_tags {
                    for col in 0..self.spec.hidden_dim {
                        grads.tok_w[[r, col]] += ds[r] * fwd.h[[i, col]];
                    }
                }
                grads.tok_b += &ds;
                let dh_i = self.tok_w.t().dot(&ds);
                let mut row = dh.row_mut(i);
                row += &dh_i;
            }
            if touched {
                self.backward_shared(input, &fwd, &dh, &mut grads);
            }
        }
        Ok((loss_sum, grads, units))
    }

    /// Loss only, for finite-difference checks.
    pub fn loss_binary_sum(&self, batch: &[(TokenizedInput, u8)]) -> Result<f64, EncoderError> {
        let mut loss_sum = 0.0;
        for (input, label) in batch {
            let fwd = self.forward(input)?;
            let q = stable_softmax(&fwd.z);
            loss_sum += -q[*label as usize].max(f64::MIN_POSITIVE).ln();
        }
        Ok(loss_sum)
    }

    pub fn loss_token_sum(
        &self,
        batch: &[(TokenizedInput, Vec<i64>)],
    ) -> Result<f64, EncoderError> {
        let mut loss_sum = 0.0;
        for (input, targets) in batch {
            let fwd = self.forward(input)?;
            for (i, &target) in targets.iter().enumerate().take(input.token_ids.len()) {
                if target < 0 {
                    continue;
                }
                let q = stable_softmax(&fwd.s.row(i).to_owned());
                loss_sum += -q[target as usize].max(f64::MIN_POSITIVE).ln();
            }
        }
        Ok(loss_sum)
    }

    /// Named parameter segments in flat order.
    pub fn param_segments(&self) -> Vec<(String, usize)> {
        vec![
            ("embed".into(), self.embed.len()),
            ("mix_w".into(), self.mix_w.len()),
            ("mix_u".into(), self.mix_u.len()),
            ("mix_b".into(), self.mix_b.len()),
            ("doc_w".into(), self.doc_w.len()),
            ("doc_b".into(), self.doc_b.len()),
            ("tok_w".into(), self.tok_w.len()),
            ("tok_b".into(), self.tok_b.len()),
        ]
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.embed.iter());
        out.extend(self.mix_w.iter());
        out.extend(self.mix_u.iter());
        out.extend(self.mix_b.iter());
        out.extend(self.doc_w.iter());
        out.extend(self.doc_b.iter());
        out.extend(self.tok_w.iter());
        out.extend(self.tok_b.iter());
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        };
        take(self.embed.as_slice_mut().expect("contiguous"));
        take(self.mix_w.as_slice_mut().expect("contiguous"));
        take(self.mix_u.as_slice_mut().expect("contiguous"));
        take(self.mix_b.as_slice_mut().expect("contiguous"));
        take(self.doc_w.as_slice_mut().expect("contiguous"));
        take(self.doc_b.as_slice_mut().expect("contiguous"));
        take(self.tok_w.as_slice_mut().expect("contiguous"));
        take(self.tok_b.as_slice_mut().expect("contiguous"));
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    pub fn to_artifact(&self) -> ToyArtifact {
        ToyArtifact {
            format: "toy-backend-v1".into(),
            spec: self.spec.clone(),
            num_tags: self.num_tags,
            seed: self.seed,
            params: self.params_flat(),
        }
    }

    pub fn from_artifact(artifact: &ToyArtifact) -> Result<Self, EncoderError> {
        if artifact.format != "toy-backend-v1" {
            return Err(EncoderError::Artifact(format!(
                "unsupported format {:?}",
                artifact.format
            )));
        }
        let mut backend = Self::new(&artifact.spec, artifact.num_tags, artifact.seed)?;
        let expected: usize = backend.param_segments().iter().map(|(_, n)| n).sum();
        if artifact.params.len() != expected {
            return Err(EncoderError::Artifact(format!(
                "parameter count {} does not match spec ({expected})",
                artifact.params.len()
            )));
        }
        backend.set_params_flat(&artifact.params);
        Ok(backend)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), EncoderError> {
        let json = serde_json::to_string(&self.to_artifact())
            .map_err(|e| EncoderError::Artifact(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| EncoderError::Artifact(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, EncoderError> {
        let json =
            std::fs::read_to_string(path).map_err(|e| EncoderError::Artifact(e.to_string()))?;
        let artifact: ToyArtifact =
            serde_json::from_str(&json).map_err(|e| EncoderError::Artifact(e.to_string()))?;
        Self::from_artifact(&artifact)
    }
}

/// Serializable model snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyArtifact {
    pub format: String,
    pub spec: EncoderBackendSpec,
    pub num_tags: usize,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl EncoderBackend for ToyBackend {
    fn spec(&self) -> &EncoderBackendSpec {
        &self.spec
    }

    fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenizedInput, EncoderError> {
        self.tokenizer.tokenize(text, max_len)
    }

    fn tokenize_words(
        &self,
        words: &[String],
        max_len: usize,
    ) -> Result<TokenizedInput, EncoderError> {
        self.tokenizer.tokenize_words(words, max_len)
    }

    fn encode(&self, batch: &[TokenizedInput]) -> Result<Vec<EncoderOutput>, EncoderError> {
        if batch.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        batch
            .iter()
            .map(|input| {
                let fwd = self.forward(input)?;
                Ok(EncoderOutput {
                    last_hidden: fwd.h,
                    doc_logits: self.spec.doc_head.then(|| [fwd.z[0], fwd.z[1]]),
                    token_logits: self.spec.token_head.then_some(fwd.s),
                })
            })
            .collect()
    }
}
