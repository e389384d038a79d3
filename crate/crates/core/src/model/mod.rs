//! Transformer encoder with two decoders, a projection head and a teacher.
//!
//! Every forward function works on a batch of samples. Tokens of all samples
//! are stacked row-wise into one `[rows, dim]` matrix so that linear layers
//! run as a single matmul; attention is evaluated per sample (`Segment`).

pub mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{concat, Graph, Scalar, Tensor, Var};
pub use params::{Bound, ParamStore};

pub const MLP_RATIO: usize = 4;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub latent_dec_layers: usize,
    pub time_dec_layers: usize,
    pub patch_len: usize,
    /// Size of the lead embedding table.
    pub n_leads: usize,
    pub n_patches: usize,
    pub proj_hidden: usize,
    pub proj_out: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            heads: 4,
            enc_layers: 10,
            latent_dec_layers: 8,
            time_dec_layers: 10,
            patch_len: 75,
            n_leads: 12,
            n_patches: 30,
            proj_hidden: 256,
            proj_out: 128,
        }
    }
}

impl ModelConfig {
    /// Small configuration for single-core runs and tests.
    pub fn toy() -> Self {
        Self {
            dim: 32,
            heads: 2,
            enc_layers: 2,
            latent_dec_layers: 2,
            time_dec_layers: 2,
            proj_hidden: 32,
            proj_out: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("patch_len", self.patch_len),
            ("n_leads", self.n_leads),
            ("n_patches", self.n_patches),
            ("proj_hidden", self.proj_hidden),
            ("proj_out", self.proj_out),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("model.dim = {} not divisible by heads = {}", self.dim, self.heads)));
        }
        if self.dim % 2 != 0 {
            return Err(Error::Config(format!("model.dim = {} must be even", self.dim)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Rows `[start, start + len)` of a stacked token matrix belonging to one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    fn rows(self) -> Vec<usize> {
        (self.start..self.start + self.len).collect()
    }
}

fn segments(lens: impl IntoIterator<Item = usize>) -> Vec<Segment> {
    let mut start = 0;
    lens.into_iter()
        .map(|len| {
            let s = Segment { start, len };
            start += len;
            s
        })
        .collect()
}

/// One sample entering an encoder.
#[derive(Clone)]
pub struct TokenInput<'g, T> {
    /// `[C, N, P]` patches (may depend on trainable parameters).
    pub patches: Var<'g, T>,
    /// Row of the lead embedding table for each of the `C` leads.
    pub lead_ids: Vec<usize>,
    /// Flat `lead · N + patch` cells to embed, in the order they become rows.
    pub cells: Vec<usize>,
}

/// Encoder output: stacked token features and per-sample segments.
#[derive(Clone)]
pub struct Encoded<'g, T> {
    pub x: Var<'g, T>,
    pub segments: Vec<Segment>,
}

/// Fixed sinusoidal table `[n, dim]`.
pub fn sinusoid_table(n: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * dim];
    for pos in 0..n {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            out[pos * dim + 2 * i] = angle.sin();
            out[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    positions: Vec<f64>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let positions = sinusoid_table(cfg.n_patches, cfg.dim);
        Ok(Self { cfg, positions })
    }

    fn position_rows<'g, T: Scalar>(&self, g: &'g Graph<T>, patches: &[usize]) -> Result<Var<'g, T>> {
        let d = self.cfg.dim;
        let mut vals = Vec::with_capacity(patches.len() * d);
        for &p in patches {
            vals.extend_from_slice(&self.positions[p * d..(p + 1) * d]);
        }
        Ok(g.constant(Tensor::from_f64(&[patches.len(), d], &vals)?))
    }

    fn check_input<T: Scalar>(&self, s: &TokenInput<'_, T>) -> Result<(usize, usize)> {
        let shape = s.patches.shape();
        let ok = shape.len() == 3
            && shape[1] == self.cfg.n_patches
            && shape[2] == self.cfg.patch_len
            && s.lead_ids.len() == shape[0]
            && s.lead_ids.iter().all(|&l| l < self.cfg.n_leads);
        if !ok {
            return Err(Error::DimensionMismatch {
                context: "model input".into(),
                detail: format!(
                    "patches {shape:?} with lead ids {:?}, expected [C, {}, {}] and ids < {}",
                    s.lead_ids, self.cfg.n_patches, self.cfg.patch_len, self.cfg.n_leads
                ),
            });
        }
        if let Some(&bad) = s.cells.iter().find(|&&c| c >= shape[0] * shape[1]) {
            return Err(Error::PlanMismatch(format!("cell {bad} outside a {}x{} grid", shape[0], shape[1])));
        }
        Ok((shape[0], shape[1]))
    }

    /// Patch, lead and position embedding of the selected cells: `[L, dim]`.
    fn embed<'g, T: Scalar>(&self, p: &Bound<'g, T>, prefix: &str, s: &TokenInput<'g, T>) -> Result<Var<'g, T>> {
        let (c, n) = self.check_input(s)?;
        let g = s.patches.graph();
        let (pl, d, l) = (self.cfg.patch_len, self.cfg.dim, s.cells.len());
        if l == 0 {
            return Err(Error::EmptyVisibleSet);
        }
        let rows = s.patches.reshape(&[c * n, pl])?.index_select(0, s.cells.clone())?;
        let emb = rows
            .reshape(&[l, 1, pl])?
            .conv1d(p.get(&format!("{prefix}.patch_embed.weight"))?, pl)?
            .reshape(&[l, d])?
            .add(p.get(&format!("{prefix}.patch_embed.bias"))?)?;
        let leads: Vec<usize> = s.cells.iter().map(|&cell| s.lead_ids[cell / n]).collect();
        let patches: Vec<usize> = s.cells.iter().map(|&cell| cell % n).collect();
        emb.add(p.get(&format!("{prefix}.lead_embed"))?.index_select(0, leads)?)?.add(self.position_rows(g, &patches)?)
    }

    /// Embeds each sample's cells and runs the encoder stack under `prefix`
    /// (`encoder` or `teacher.encoder`).
    pub fn encode<'g, T: Scalar>(
        &self,
        p: &Bound<'g, T>,
        prefix: &str,
        batch: &[TokenInput<'g, T>],
    ) -> Result<Encoded<'g, T>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let embedded = batch.iter().map(|s| self.embed(p, prefix, s)).collect::<Result<Vec<_>>>()?;
        let segs = segments(batch.iter().map(|s| s.cells.len()));
        let x = if embedded.len() == 1 { embedded[0] } else { concat(&embedded, 0)? };
        let x = self.stack(p, prefix, x, &segs, self.layers(prefix))?;
        Ok(Encoded { x, segments: segs })
    }

    fn layers(&self, prefix: &str) -> usize {
        if prefix.ends_with("time_decoder") {
            self.cfg.time_dec_layers
        } else if prefix.ends_with("latent_decoder") {
            self.cfg.latent_dec_layers
        } else {
            self.cfg.enc_layers
        }
    }

    fn stack<'g, T: Scalar>(
        &self,
        p: &Bound<'g, T>,
        prefix: &str,
        mut x: Var<'g, T>,
        segs: &[Segment],
        layers: usize,
    ) -> Result<Var<'g, T>> {
        for i in 0..layers {
            x = self.block(p, &format!("{prefix}.blocks.{i}"), x, segs)?;
        }
        norm(p, &format!("{prefix}.norm"), x)
    }

    /// Pre-norm transformer block.
    fn block<'g, T: Scalar>(&self, p: &Bound<'g, T>, b: &str, x: Var<'g, T>, segs: &[Segment]) -> Result<Var<'g, T>> {
        let h = norm(p, &format!("{b}.norm1"), x)?;
        let qkv = linear(p, &format!("{b}.attn.qkv"), h)?;
        let att = self.attention(qkv, segs)?;
        let x = x.add(linear(p, &format!("{b}.attn.out"), att)?)?;
        let h = norm(p, &format!("{b}.norm2"), x)?;
        let h = linear(p, &format!("{b}.mlp.fc1"), h)?.gelu()?;
        x.add(linear(p, &format!("{b}.mlp.fc2"), h)?)
    }

    /// Multi-head self-attention within each segment of a `[rows, 3·dim]`
    /// packed query/key/value matrix.
    fn attention<'g, T: Scalar>(&self, qkv: Var<'g, T>, segs: &[Segment]) -> Result<Var<'g, T>> {
        let (d, dh) = (self.cfg.dim, self.cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let cols = |offset: usize, h: usize| (offset + h * dh..offset + (h + 1) * dh).collect::<Vec<_>>();
        let mut per_sample = Vec::with_capacity(segs.len());
        for &seg in segs {
            let rows = if segs.len() == 1 { qkv } else { qkv.index_select(0, seg.rows())? };
            let mut heads = Vec::with_capacity(self.cfg.heads);
            for h in 0..self.cfg.heads {
                let q = rows.index_select(1, cols(0, h))?;
                let k = rows.index_select(1, cols(d, h))?;
                let v = rows.index_select(1, cols(2 * d, h))?;
                heads.push(q.matmul_t(k)?.scale(scale)?.softmax()?.matmul(v)?);
            }
            per_sample.push(if heads.len() == 1 { heads[0] } else { concat(&heads, 1)? });
        }
        if per_sample.len() == 1 {
            Ok(per_sample[0])
        } else {
            concat(&per_sample, 0)
        }
    }

    /// Rebuilds each sample's full `C × N` token grid for a decoder: encoder
    /// outputs at their visible cells, the decoder's mask token elsewhere,
    /// plus the decoder's lead and position embeddings. Runs the decoder stack
    /// and returns `[B · C · N, dim]` with one segment per sample.
    pub fn decode<'g, T: Scalar>(
        &self,
        p: &Bound<'g, T>,
        prefix: &str,
        enc: &Encoded<'g, T>,
        batch: &[TokenInput<'g, T>],
    ) -> Result<Encoded<'g, T>> {
        if enc.segments.len() != batch.len() {
            return Err(Error::PlanMismatch(format!("{} encoded samples for {} inputs", enc.segments.len(), batch.len())));
        }
        let d = self.cfg.dim;
        let token = p.get(&format!("{prefix}.mask_token"))?.reshape(&[1, d])?;
        let lead_table = p.get(&format!("{prefix}.lead_embed"))?;
        let mut grids = Vec::with_capacity(batch.len());
        for (s, &seg) in batch.iter().zip(&enc.segments) {
            let (c, n) = self.check_input(s)?;
            let g = s.patches.graph();
            let base = g.constant(Tensor::ones(&[c * n, 1])).matmul(token)?;
            let visible = if enc.segments.len() == 1 { enc.x } else { enc.x.index_select(0, seg.rows())? };
            let grid = base.scatter(visible, s.cells.clone())?;
            let leads: Vec<usize> = (0..c * n).map(|cell| s.lead_ids[cell / n]).collect();
            let patches: Vec<usize> = (0..c * n).map(|cell| cell % n).collect();
            grids.push(grid.add(lead_table.index_select(0, leads)?)?.add(self.position_rows(g, &patches)?)?);
        }
        let segs = segments(batch.iter().map(|s| s.patches.shape()[0] * self.cfg.n_patches));
        let x = if grids.len() == 1 { grids[0] } else { concat(&grids, 0)? };
        let x = self.stack(p, prefix, x, &segs, self.layers(prefix))?;
        Ok(Encoded { x, segments: segs })
    }

    /// Time-domain decoder: predicted patches `[B · C · N, P]`.
    pub fn decode_time<'g, T: Scalar>(
        &self,
        p: &Bound<'g, T>,
        enc: &Encoded<'g, T>,
        batch: &[TokenInput<'g, T>],
    ) -> Result<Encoded<'g, T>> {
        let dec = self.decode(p, "time_decoder", enc, batch)?;
        Ok(Encoded { x: linear(p, "time_decoder.head", dec.x)?, segments: dec.segments })
    }

    /// Latent decoder followed by per-sample mean pooling: `[B, dim]`.
    pub fn decode_latent_global<'g, T: Scalar>(
        &self,
        p: &Bound<'g, T>,
        enc: &Encoded<'g, T>,
        batch: &[TokenInput<'g, T>],
    ) -> Result<Var<'g, T>> {
        let dec = self.decode(p, "latent_decoder", enc, batch)?;
        mean_pool(&dec)
    }

    /// Two-layer projection head under `prefix` (`projection` or `teacher.projection`).
    pub fn project<'g, T: Scalar>(&self, p: &Bound<'g, T>, prefix: &str, z: Var<'g, T>) -> Result<Var<'g, T>> {
        let h = linear(p, &format!("{prefix}.fc1"), z)?.gelu()?;
        linear(p, &format!("{prefix}.fc2"), h)
    }

    /// Teacher embedding of full (all-cell) inputs: `[B, proj_out]`.
    pub fn teacher_forward<'g, T: Scalar>(&self, p: &Bound<'g, T>, batch: &[TokenInput<'g, T>]) -> Result<Var<'g, T>> {
        let enc = self.encode(p, "teacher.encoder", batch)?;
        self.project(p, "teacher.projection", mean_pool(&enc)?)
    }

    /// Classifier logits `[B, n_classes]` from the mean-pooled encoder output
    /// over all cells.
    pub fn classify<'g, T: Scalar>(&self, p: &Bound<'g, T>, batch: &[TokenInput<'g, T>]) -> Result<Var<'g, T>> {
        let enc = self.encode(p, "encoder", batch)?;
        linear(p, "classifier", mean_pool(&enc)?)
    }
}

/// A sample with every cell selected.
pub fn full_input<'g, T: Scalar>(patches: Var<'g, T>, lead_ids: Vec<usize>) -> TokenInput<'g, T> {
    let shape = patches.shape();
    let cells = (0..shape.iter().take(2).product::<usize>()).collect();
    TokenInput { patches, lead_ids, cells }
}

fn linear<'g, T: Scalar>(p: &Bound<'g, T>, name: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    x.matmul(p.get(&format!("{name}.weight"))?)?.add(p.get(&format!("{name}.bias"))?)
}

fn norm<'g, T: Scalar>(p: &Bound<'g, T>, name: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    x.layer_norm(p.get(&format!("{name}.gamma"))?, p.get(&format!("{name}.beta"))?, LN_EPS)
}

/// Mean over each segment's rows: `[B, dim]`.
pub fn mean_pool<'g, T: Scalar>(enc: &Encoded<'g, T>) -> Result<Var<'g, T>> {
    let d = enc.x.shape()[1];
    let pooled = enc
        .segments
        .iter()
        .map(|&seg| {
            let rows = if enc.segments.len() == 1 { enc.x } else { enc.x.index_select(0, seg.rows())? };
            rows.mean_axis(0)?.reshape(&[1, d])
        })
        .collect::<Result<Vec<_>>>()?;
    if pooled.len() == 1 {
        Ok(pooled[0])
    } else {
        concat(&pooled, 0)
    }
}
