use serde::{Deserialize, Serialize};

use super::params::LayerParams;
use super::{ModelConfig, NormPlacement, Params, Positional, SequenceInput, Slot};
use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, AttentionStack, GradientStack, Matrix};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Fixed sinusoidal position table (`max_len × d`).
fn sinusoidal(max_len: usize, d: usize) -> Matrix {
    Matrix::from_fn(max_len, d, |pos, i| {
        let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Clone, Debug)]
struct NormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, NormCache) {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat.set(i, j, h);
            out.set(i, j, h * gain.get(0, j) + bias.get(0, j));
        }
    }
    (out, NormCache { xhat, inv_std })
}

fn layer_norm_back(
    dy: &Matrix,
    cache: &NormCache,
    gain: &Matrix,
    dgain: Option<&mut Matrix>,
    dbias: Option<&mut Matrix>,
) -> Matrix {
    let (n, d) = dy.shape();
    if let Some(g) = dgain {
        for i in 0..n {
            for j in 0..d {
                g.add_at(0, j, dy.get(i, j) * cache.xhat.get(i, j));
            }
        }
    }
    if let Some(b) = dbias {
        for (j, s) in dy.column_sums().into_iter().enumerate() {
            b.add_at(0, j, s);
        }
    }
    let mut dx = Matrix::zeros(n, d);
    for i in 0..n {
        let dxhat: Vec<f64> = (0..d).map(|j| dy.get(i, j) * gain.get(0, j)).collect();
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat =
            dxhat.iter().enumerate().map(|(j, v)| v * cache.xhat.get(i, j)).sum::<f64>() / d as f64;
        for j in 0..d {
            let v = cache.inv_std[i] * (dxhat[j] - mean_dxhat - cache.xhat.get(i, j) * mean_dxhat_xhat);
            dx.set(i, j, v);
        }
    }
    dx
}

fn accumulate_colsum(target: Option<&mut Matrix>, m: &Matrix) {
    if let Some(t) = target {
        for (j, s) in m.column_sums().into_iter().enumerate() {
            t.add_at(0, j, s);
        }
    }
}

fn accumulate(target: Option<&mut Matrix>, m: Matrix) {
    if let Some(t) = target {
        t.add_assign(&m);
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    attn_in: Matrix,
    norm_a: NormCache,
    q: Vec<Matrix>,
    k: Vec<Matrix>,
    v: Vec<Matrix>,
    attn: Vec<Matrix>,
    concat: Matrix,
    ffn_in: Matrix,
    norm_f: NormCache,
    h_pre: Matrix,
    h_act: Matrix,
}

/// Everything recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `Z^0 … Z^L`; `Z^0` is the embedded input, `Z^ℓ` the output of block `ℓ`.
    pub hidden: Vec<Matrix>,
    pub attention: AttentionStack,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    input: SequenceInput,
    caches: Vec<BlockCache>,
    pooled: Option<Vec<f64>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &SequenceInput {
        &self.input
    }

    pub fn seq_len(&self) -> usize {
        self.input.len()
    }

    /// CLS row of the last hidden state (the classification head input).
    pub fn cls_state(&self) -> &[f64] {
        self.hidden.last().expect("at least one hidden state").row(0)
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities and the arg-max label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

/// Reverse-mode results for one scalar objective `Σ_c dlogits[c] · logit_c`.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub attention: GradientStack,
    /// Gradient with respect to `Z^0 … Z^L`.
    pub hidden: Vec<Matrix>,
    pub params: Option<Params>,
}

/// Small encoder-only transformer with a CLS classification head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    config: ModelConfig,
    params: Params,
}

impl Transformer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config);
        Ok(Self { config, params })
    }

    /// Wraps existing parameters, checking that their shapes match `config`.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let reference = Params::init(&config);
        let want: Vec<_> = reference.tensors().iter().map(|m| m.shape()).collect();
        let got: Vec<_> = params.tensors().iter().map(|m| m.shape()).collect();
        if want != got {
            return Err(Error::Dimension("parameter shapes do not match the model config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn validate_input(&self, x: &SequenceInput) -> Result<()> {
        if x.is_empty() {
            return Err(Error::InvalidInput("empty input".into()));
        }
        if x.len() > self.config.max_len {
            return Err(Error::InvalidInput(format!(
                "input length {} exceeds max_len {}",
                x.len(),
                self.config.max_len
            )));
        }
        for (pos, slot) in x.slots().iter().enumerate() {
            match slot {
                Slot::Token(t) if *t >= self.config.vocab_size => {
                    return Err(Error::InvalidInput(format!(
                        "token id {} at position {} is outside the vocabulary of {}",
                        t, pos, self.config.vocab_size
                    )))
                }
                Slot::Patch(p) => match self.config.patch_dim {
                    Some(pd) if pd == p.len() => {}
                    Some(pd) => {
                        return Err(Error::Dimension(format!(
                            "patch at position {} has length {}, model expects {}",
                            pos,
                            p.len(),
                            pd
                        )))
                    }
                    None => {
                        return Err(Error::InvalidInput("model has no patch embedding".into()))
                    }
                },
                _ => {}
            }
        }
        Ok(())
    }

    fn embed(&self, x: &SequenceInput) -> Matrix {
        let d = self.config.d_model;
        let n = x.len();
        let mut z = Matrix::zeros(n, d);
        for (i, slot) in x.slots().iter().enumerate() {
            let row = z.row_mut(i);
            match slot {
                Slot::Token(t) => row.copy_from_slice(self.params.embed.row(*t)),
                Slot::Patch(p) => {
                    let w = self.params.patch_w.as_ref().expect("validated patch model");
                    let b = self.params.patch_b.as_ref().expect("validated patch model");
                    row.copy_from_slice(b.row(0));
                    for (k, &pv) in p.iter().enumerate() {
                        for (o, wv) in row.iter_mut().zip(w.row(k)) {
                            *o += pv * wv;
                        }
                    }
                }
            }
        }
        if self.config.positional == Positional::Sinusoidal {
            let pe = sinusoidal(n, d);
            z.add_assign(&pe);
        }
        z
    }

    fn attention_block(
        &self,
        lp: &LayerParams,
        attn_in: &Matrix,
        replace: Option<(usize, &Matrix)>,
    ) -> (Matrix, Vec<Matrix>, Vec<Matrix>, Vec<Matrix>, Vec<Matrix>, Matrix) {
        let cfg = &self.config;
        let n = attn_in.rows();
        let scale = 1.0 / (cfg.d_k as f64).sqrt();
        let mut concat = Matrix::zeros(n, cfg.n_heads * cfg.d_v);
        let (mut qs, mut ks, mut vs, mut attns) = (vec![], vec![], vec![], vec![]);
        for h in 0..cfg.n_heads {
            let q = attn_in.matmul(&lp.w_q[h]);
            let k = attn_in.matmul(&lp.w_k[h]);
            let v = attn_in.matmul(&lp.w_v[h]);
            let a = match replace {
                Some((rh, a)) if rh == h => a.clone(),
                _ => {
                    let mut s = q.matmul_t(&k);
                    s.scale(scale);
                    for i in 0..n {
                        softmax_in_place(s.row_mut(i));
                    }
                    s
                }
            };
            concat.set_column_block(h * cfg.d_v, &a.matmul(&v));
            qs.push(q);
            ks.push(k);
            vs.push(v);
            attns.push(a);
        }
        let mut out = concat.matmul(&lp.w_o);
        out.add_row_broadcast(lp.b_o.row(0));
        (out, qs, ks, vs, attns, concat)
    }

    fn ffn(lp: &LayerParams, x: &Matrix) -> (Matrix, Matrix, Matrix) {
        let mut h_pre = x.matmul(&lp.w_ff1);
        h_pre.add_row_broadcast(lp.b_ff1.row(0));
        let h_act = h_pre.map(gelu);
        let mut out = h_act.matmul(&lp.w_ff2);
        out.add_row_broadcast(lp.b_ff2.row(0));
        (out, h_pre, h_act)
    }

    fn block_forward(
        &self,
        layer: usize,
        x: &Matrix,
        replace: Option<(usize, &Matrix)>,
    ) -> (Matrix, BlockCache) {
        let lp = &self.params.layers[layer];
        match self.config.norm {
            NormPlacement::Post => {
                let attn_in = x.clone();
                let (attn_out, q, k, v, attn, concat) = self.attention_block(lp, &attn_in, replace);
                let mut r1 = x.clone();
                r1.add_assign(&attn_out);
                let (y, norm_a) = layer_norm(&r1, &lp.ln1_gain, &lp.ln1_bias);
                let (f, h_pre, h_act) = Self::ffn(lp, &y);
                let mut r2 = y.clone();
                r2.add_assign(&f);
                let (z, norm_f) = layer_norm(&r2, &lp.ln2_gain, &lp.ln2_bias);
                let cache =
                    BlockCache { attn_in, norm_a, q, k, v, attn, concat, ffn_in: y, norm_f, h_pre, h_act };
                (z, cache)
            }
            NormPlacement::Pre => {
                let (attn_in, norm_a) = layer_norm(x, &lp.ln1_gain, &lp.ln1_bias);
                let (attn_out, q, k, v, attn, concat) = self.attention_block(lp, &attn_in, replace);
                let mut y = x.clone();
                y.add_assign(&attn_out);
                let (ffn_in, norm_f) = layer_norm(&y, &lp.ln2_gain, &lp.ln2_bias);
                let (f, h_pre, h_act) = Self::ffn(lp, &ffn_in);
                let mut z = y;
                z.add_assign(&f);
                let cache = BlockCache { attn_in, norm_a, q, k, v, attn, concat, ffn_in, norm_f, h_pre, h_act };
                (z, cache)
            }
        }
    }

    fn head(&self, cls: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let p = &self.params;
        let pooled = match (&p.pool_w, &p.pool_b) {
            (Some(w), Some(b)) => Some(
                (0..w.cols())
                    .map(|j| (b.get(0, j) + cls.iter().enumerate().map(|(i, c)| c * w.get(i, j)).sum::<f64>()).tanh())
                    .collect::<Vec<_>>(),
            ),
            _ => None,
        };
        let feat = pooled.as_deref().unwrap_or(cls);
        let logits = (0..p.head_w.cols())
            .map(|c| p.head_b.get(0, c) + feat.iter().enumerate().map(|(i, f)| f * p.head_w.get(i, c)).sum::<f64>())
            .collect();
        (logits, pooled)
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x: &SequenceInput,
        replace: Option<(usize, usize, &Matrix)>,
    ) -> (Vec<Matrix>, Vec<BlockCache>, Vec<f64>, Option<Vec<f64>>) {
        let mut hidden = Vec::with_capacity(self.config.n_layers + 1);
        let mut caches = Vec::with_capacity(self.config.n_layers);
        hidden.push(self.embed(x));
        for l in 0..self.config.n_layers {
            let rep = replace.and_then(|(rl, rh, a)| (rl == l).then_some((rh, a)));
            let (z, cache) = self.block_forward(l, hidden.last().unwrap(), rep);
            hidden.push(z);
            caches.push(cache);
        }
        let (logits, pooled) = self.head(hidden.last().unwrap().row(0));
        (hidden, caches, logits, pooled)
    }

    /// Runs the encoder and records every hidden state and attention matrix.
    pub fn forward(&self, x: &SequenceInput) -> Result<ForwardTrace> {
        self.validate_input(x)?;
        let (hidden, caches, logits, pooled) = self.run(x, None);
        let cfg = &self.config;
        let mats = caches.iter().flat_map(|c| c.attn.iter().cloned()).collect();
        let attention = AttentionStack::new(cfg.n_layers, cfg.n_heads, x.len(), mats)?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        Ok(ForwardTrace { hidden, attention, logits, probs, input: x.clone(), caches, pooled })
    }

    pub fn predict(&self, x: &SequenceInput) -> Result<Prediction> {
        let t = self.forward(x)?;
        let label = t.predicted_class();
        Ok(Prediction { probs: t.probs, label })
    }

    /// Logits with `A^{layer,head}` replaced by `attention` and everything
    /// downstream recomputed. The replacement need not be row-stochastic.
    pub fn logits_with_attention(
        &self,
        x: &SequenceInput,
        layer: usize,
        head: usize,
        attention: &Matrix,
    ) -> Result<Vec<f64>> {
        self.validate_input(x)?;
        if layer >= self.config.n_layers || head >= self.config.n_heads {
            return Err(Error::IndexOutOfRange { index: layer.max(head), len: self.config.n_layers });
        }
        if attention.shape() != (x.len(), x.len()) {
            return Err(Error::Dimension("replacement attention must be N × N".into()));
        }
        Ok(self.run(x, Some((layer, head, attention))).2)
    }

    /// `g^ℓ`: logits computed from a given `Z^ℓ` by the remaining blocks and the head.
    pub fn logits_from_hidden(&self, layer: usize, z: &Matrix) -> Result<Vec<f64>> {
        if layer > self.config.n_layers {
            return Err(Error::IndexOutOfRange { index: layer, len: self.config.n_layers + 1 });
        }
        if z.cols() != self.config.d_model || z.rows() == 0 {
            return Err(Error::Dimension("hidden state must be N × d_model".into()));
        }
        let mut h = z.clone();
        for l in layer..self.config.n_layers {
            h = self.block_forward(l, &h, None).0;
        }
        Ok(self.head(h.row(0)).0)
    }

    /// Reverse pass for the objective `Σ_c dlogits[c] · logit_c`.
    ///
    /// Attention matrices are treated as cut points: their gradient is taken
    /// with the softmax inputs held fixed, and it flows through the `A·V`
    /// product and all later computation.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[f64], with_params: bool) -> Result<Gradients> {
        let cfg = &self.config;
        if dlogits.len() != cfg.n_classes {
            return Err(Error::Dimension(format!(
                "expected {} logit cotangents, got {}",
                cfg.n_classes,
                dlogits.len()
            )));
        }
        if trace.caches.len() != cfg.n_layers || trace.hidden[0].cols() != cfg.d_model {
            return Err(Error::Dimension("trace was not produced by this model".into()));
        }
        let n = trace.seq_len();
        let d = cfg.d_model;
        let mut grads = with_params.then(|| self.params.zeros_like());
        let p = &self.params;

        // Head.
        let cls = trace.cls_state();
        let feat: Vec<f64> = trace.pooled.clone().unwrap_or_else(|| cls.to_vec());
        let dfeat: Vec<f64> =
            (0..feat.len()).map(|i| (0..cfg.n_classes).map(|c| p.head_w.get(i, c) * dlogits[c]).sum()).collect();
        if let Some(g) = grads.as_mut() {
            for (i, f) in feat.iter().enumerate() {
                for (c, dl) in dlogits.iter().enumerate() {
                    g.head_w.add_at(i, c, f * dl);
                }
            }
            for (c, dl) in dlogits.iter().enumerate() {
                g.head_b.add_at(0, c, *dl);
            }
        }
        let dcls: Vec<f64> = match (&p.pool_w, &trace.pooled) {
            (Some(w), Some(pooled)) => {
                let dpre: Vec<f64> = pooled.iter().zip(&dfeat).map(|(t, g)| g * (1.0 - t * t)).collect();
                if let Some(g) = grads.as_mut() {
                    let gw = g.pool_w.as_mut().unwrap();
                    for (i, c) in cls.iter().enumerate() {
                        for (j, dp) in dpre.iter().enumerate() {
                            gw.add_at(i, j, c * dp);
                        }
                    }
                    let gb = g.pool_b.as_mut().unwrap();
                    for (j, dp) in dpre.iter().enumerate() {
                        gb.add_at(0, j, *dp);
                    }
                }
                (0..d).map(|i| (0..d).map(|j| w.get(i, j) * dpre[j]).sum()).collect()
            }
            _ => dfeat,
        };

        let mut dz = Matrix::zeros(n, d);
        dz.row_mut(0).copy_from_slice(&dcls);
        let mut hidden_grads = vec![Matrix::zeros(0, 0); cfg.n_layers + 1];
        let mut attn_grads = vec![Matrix::zeros(0, 0); cfg.n_layers * cfg.n_heads];
        for l in (0..cfg.n_layers).rev() {
            let lg = grads.as_mut().map(|g| &mut g.layers[l]);
            let dx = self.block_backward(l, &trace.caches[l], &dz, &mut attn_grads[l * cfg.n_heads..(l + 1) * cfg.n_heads], lg);
            hidden_grads[l + 1] = std::mem::replace(&mut dz, dx);
        }
        if let Some(g) = grads.as_mut() {
            for (i, slot) in trace.input.slots().iter().enumerate() {
                match slot {
                    Slot::Token(t) => {
                        for (e, v) in g.embed.row_mut(*t).iter_mut().zip(dz.row(i)) {
                            *e += v;
                        }
                    }
                    Slot::Patch(pv) => {
                        let gw = g.patch_w.as_mut().unwrap();
                        for (k, x) in pv.iter().enumerate() {
                            for (e, v) in gw.row_mut(k).iter_mut().zip(dz.row(i)) {
                                *e += x * v;
                            }
                        }
                        for (e, v) in g.patch_b.as_mut().unwrap().row_mut(0).iter_mut().zip(dz.row(i)) {
                            *e += v;
                        }
                    }
                }
            }
        }
        hidden_grads[0] = dz;
        let attention = GradientStack::new(cfg.n_layers, cfg.n_heads, n, attn_grads)?;
        Ok(Gradients { attention, hidden: hidden_grads, params: grads })
    }

    fn ffn_backward(lp: &LayerParams, c: &BlockCache, df: &Matrix, lg: &mut Option<&mut LayerParams>) -> Matrix {
        let dh_act = df.matmul_t(&lp.w_ff2);
        let mut dh_pre = dh_act;
        for (g, &x) in dh_pre.data_mut().iter_mut().zip(c.h_pre.data()) {
            *g *= gelu_grad(x);
        }
        if let Some(g) = lg.as_deref_mut() {
            accumulate(Some(&mut g.w_ff2), c.h_act.t_matmul(df));
            accumulate_colsum(Some(&mut g.b_ff2), df);
            accumulate(Some(&mut g.w_ff1), c.ffn_in.t_matmul(&dh_pre));
            accumulate_colsum(Some(&mut g.b_ff1), &dh_pre);
        }
        dh_pre.matmul_t(&lp.w_ff1)
    }

    fn attention_backward(
        &self,
        lp: &LayerParams,
        c: &BlockCache,
        dout: &Matrix,
        attn_grads: &mut [Matrix],
        lg: &mut Option<&mut LayerParams>,
    ) -> Matrix {
        let cfg = &self.config;
        let n = dout.rows();
        let scale = 1.0 / (cfg.d_k as f64).sqrt();
        if let Some(g) = lg.as_deref_mut() {
            accumulate(Some(&mut g.w_o), c.concat.t_matmul(dout));
            accumulate_colsum(Some(&mut g.b_o), dout);
        }
        let dconcat = dout.matmul_t(&lp.w_o);
        let mut din = Matrix::zeros(n, cfg.d_model);
        for h in 0..cfg.n_heads {
            let d_o = dconcat.column_block(h * cfg.d_v, cfg.d_v);
            let a = &c.attn[h];
            let da = d_o.matmul_t(&c.v[h]);
            let dv = a.t_matmul(&d_o);
            let mut ds = Matrix::zeros(n, n);
            for i in 0..n {
                let dot: f64 = a.row(i).iter().zip(da.row(i)).map(|(x, y)| x * y).sum();
                for j in 0..n {
                    ds.set(i, j, a.get(i, j) * (da.get(i, j) - dot) * scale);
                }
            }
            let dq = ds.matmul(&c.k[h]);
            let dk = ds.t_matmul(&c.q[h]);
            if let Some(g) = lg.as_deref_mut() {
                accumulate(Some(&mut g.w_q[h]), c.attn_in.t_matmul(&dq));
                accumulate(Some(&mut g.w_k[h]), c.attn_in.t_matmul(&dk));
                accumulate(Some(&mut g.w_v[h]), c.attn_in.t_matmul(&dv));
            }
            din.add_assign(&dq.matmul_t(&lp.w_q[h]));
            din.add_assign(&dk.matmul_t(&lp.w_k[h]));
            din.add_assign(&dv.matmul_t(&lp.w_v[h]));
            attn_grads[h] = da;
        }
        din
    }

    fn block_backward(
        &self,
        layer: usize,
        c: &BlockCache,
        dz: &Matrix,
        attn_grads: &mut [Matrix],
        mut lg: Option<&mut LayerParams>,
    ) -> Matrix {
        let lp = &self.params.layers[layer];
        match self.config.norm {
            NormPlacement::Post => {
                let dr2 = {
                    let (dg, db) = match lg.as_deref_mut() {
                        Some(g) => (Some(&mut g.ln2_gain), Some(&mut g.ln2_bias)),
                        None => (None, None),
                    };
                    layer_norm_back(dz, &c.norm_f, &lp.ln2_gain, dg, db)
                };
                let mut dy = dr2.clone();
                dy.add_assign(&Self::ffn_backward(lp, c, &dr2, &mut lg));
                let dr1 = {
                    let (dg, db) = match lg.as_deref_mut() {
                        Some(g) => (Some(&mut g.ln1_gain), Some(&mut g.ln1_bias)),
                        None => (None, None),
                    };
                    layer_norm_back(&dy, &c.norm_a, &lp.ln1_gain, dg, db)
                };
                let mut dx = dr1.clone();
                dx.add_assign(&self.attention_backward(lp, c, &dr1, attn_grads, &mut lg));
                dx
            }
            NormPlacement::Pre => {
                let mut dy = dz.clone();
                let dffn_in = Self::ffn_backward(lp, c, dz, &mut lg);
                {
                    let (dg, db) = match lg.as_deref_mut() {
                        Some(g) => (Some(&mut g.ln2_gain), Some(&mut g.ln2_bias)),
                        None => (None, None),
                    };
                    dy.add_assign(&layer_norm_back(&dffn_in, &c.norm_f, &lp.ln2_gain, dg, db));
                }
                let mut dx = dy.clone();
                let dattn_in = self.attention_backward(lp, c, &dy, attn_grads, &mut lg);
                let (dg, db) = match lg.as_deref_mut() {
                    Some(g) => (Some(&mut g.ln1_gain), Some(&mut g.ln1_bias)),
                    None => (None, None),
                };
                dx.add_assign(&layer_norm_back(&dattn_in, &c.norm_a, &lp.ln1_gain, dg, db));
                dx
            }
        }
    }

    fn class_cotangent(&self, class: usize) -> Result<Vec<f64>> {
        if class >= self.config.n_classes {
            return Err(Error::IndexOutOfRange { index: class, len: self.config.n_classes });
        }
        let mut d = vec![0.0; self.config.n_classes];
        d[class] = 1.0;
        Ok(d)
    }

    /// `∂ logit_k / ∂A^{ℓh}` for every layer and head.
    pub fn attention_gradients(&self, trace: &ForwardTrace, class: usize) -> Result<GradientStack> {
        let d = self.class_cotangent(class)?;
        Ok(self.backward(trace, &d, false)?.attention)
    }

    /// `∂ logit_k / ∂Z^ℓ` for `1 ≤ ℓ ≤ L`, one row per token.
    pub fn hidden_gradient(&self, trace: &ForwardTrace, layer: usize, class: usize) -> Result<Matrix> {
        if layer == 0 || layer > self.config.n_layers {
            return Err(Error::IndexOutOfRange { index: layer, len: self.config.n_layers + 1 });
        }
        let d = self.class_cotangent(class)?;
        Ok(self.backward(trace, &d, false)?.hidden.swap_remove(layer))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> Transformer {
        Transformer::new(ModelConfig { seed, vocab_size: 12, ..ModelConfig::default() }).unwrap()
    }

    #[test]
    fn cls_only_input_has_unit_attention() {
        let m = small(1);
        let t = m.forward(&SequenceInput::from_tokens(0, 1, &[])).unwrap();
        for a in t.attention.matrices() {
            assert_eq!(a.data(), &[1.0]);
        }
    }

    #[test]
    fn attention_rows_are_stochastic_and_probs_sum_to_one() {
        let m = small(2);
        let t = m.forward(&SequenceInput::from_tokens(0, 1, &[4, 5, 6, 7, 3])).unwrap();
        for a in t.attention.matrices() {
            for i in 0..a.rows() {
                assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(t.hidden.len(), 3);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let x = SequenceInput::from_tokens(0, 1, &[4, 9, 2]);
        let a = small(3).forward(&x).unwrap();
        let b = small(3).forward(&x).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.hidden, b.hidden);
    }

    #[test]
    fn rejects_out_of_vocab_token() {
        assert!(small(1).forward(&SequenceInput::from_tokens(0, 1, &[12])).is_err());
    }

    #[test]
    fn permuting_identical_tokens_without_positions() {
        let m = Transformer::new(ModelConfig { positional: Positional::None, vocab_size: 12, ..ModelConfig::default() })
            .unwrap();
        let a = m.forward(&SequenceInput::from_tokens(0, 1, &[5, 7, 5])).unwrap();
        let b = m.forward(&SequenceInput::from_tokens(0, 1, &[7, 5, 5])).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_head_gives_zero_gradients() {
        let mut m = small(4);
        m.params_mut().head_w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let t = m.forward(&SequenceInput::from_tokens(0, 1, &[4, 5])).unwrap();
        let g = m.attention_gradients(&t, 1).unwrap();
        assert!(g.matrices().iter().all(|a| a.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn class_index_checked() {
        let m = small(1);
        let t = m.forward(&SequenceInput::from_tokens(0, 1, &[4])).unwrap();
        assert!(m.attention_gradients(&t, 2).is_err());
        assert!(m.hidden_gradient(&t, 0, 0).is_err());
        assert!(m.hidden_gradient(&t, 3, 0).is_err());
    }

    #[test]
    fn last_layer_gradient_is_head_row_without_pooler() {
        let m = Transformer::new(ModelConfig { pooler: false, vocab_size: 12, ..ModelConfig::default() }).unwrap();
        let t = m.forward(&SequenceInput::from_tokens(0, 1, &[4, 5, 6])).unwrap();
        let g = m.hidden_gradient(&t, 2, 1).unwrap();
        assert_eq!(g.row(0), m.params().head_w.column(1).as_slice());
        assert!(g.row(1).iter().chain(g.row(2)).all(|&v| v == 0.0));
    }

    #[test]
    fn equal_head_rows_give_equal_gradients() {
        let mut m = small(5);
        let col0 = m.params().head_w.column(0);
        for (i, v) in col0.iter().enumerate() {
            m.params_mut().head_w.set(i, 1, *v);
        }
        let t = m.forward(&SequenceInput::from_tokens(0, 1, &[4, 5, 6])).unwrap();
        assert_eq!(m.hidden_gradient(&t, 1, 0).unwrap(), m.hidden_gradient(&t, 1, 1).unwrap());
        assert_eq!(m.attention_gradients(&t, 0).unwrap(), m.attention_gradients(&t, 1).unwrap());
        let m2 = small(6);
        let t2 = m2.forward(&SequenceInput::from_tokens(0, 1, &[4, 5, 6])).unwrap();
        assert_ne!(m2.attention_gradients(&t2, 0).unwrap(), m2.attention_gradients(&t2, 1).unwrap());
    }

    #[test]
    fn argmax_ignores_constant_shift() {
        let l = [0.3, -1.0, 2.5, 2.4];
        let shifted: Vec<f64> = l.iter().map(|v| v + 17.0).collect();
        assert_eq!(argmax(&l), argmax(&shifted));
    }
}
