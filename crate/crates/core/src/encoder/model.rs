//! Forward pass, loss and reverse-mode gradients for the encoder classifier.
//!
//! Each sequence is processed over its real (unpadded) prefix only. Padding
//! positions are masked out of every attention row and of pooling, so their
//! hidden states never reach the logits; skipping them is exact.

use rand::{Rng, RngCore};

use super::attention::{attend, attend_backward};
use super::tensor::{add_assign, linear, linear_backward, softmax_in_place, Scalar};
use super::{LayerParams, ModelConfig, ModelError, Params, Pooling, NUM_CLASSES};
use crate::corpus::Label;
use crate::tokenizer::TokenSequence;

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Dropout is active only in training mode, driven by the caller's RNG.
pub enum Mode<'a> {
    Inference,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    fn rng(&mut self) -> Option<&mut dyn RngCore> {
        match self {
            Mode::Inference => None,
            Mode::Train(rng) => Some(&mut **rng),
        }
    }
}

struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], rows: usize, gamma: &[T], beta: &[T]) -> (Vec<T>, NormCache<T>) {
    let h = gamma.len();
    let n = T::from_f64(h as f64);
    let eps = T::from_f64(LAYER_NORM_EPS);
    let mut y = vec![T::zero(); rows * h];
    let mut xhat = vec![T::zero(); rows * h];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * h..(r + 1) * h];
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for i in 0..h {
            let xh = (xr[i] - mean) * rs;
            xhat[r * h + i] = xh;
            y[r * h + i] = xh * gamma[i] + beta[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let h = gamma.len();
    let rows = cache.rstd.len();
    let n = T::from_f64(h as f64);
    let mut dx = vec![T::zero(); rows * h];
    let mut dxhat = vec![T::zero(); h];
    for r in 0..rows {
        let dyr = &dy[r * h..(r + 1) * h];
        let xh = &cache.xhat[r * h..(r + 1) * h];
        let mut sum = T::zero();
        let mut sum_x = T::zero();
        for i in 0..h {
            dgamma[i] = dgamma[i] + dyr[i] * xh[i];
            dbeta[i] = dbeta[i] + dyr[i];
            dxhat[i] = dyr[i] * gamma[i];
            sum = sum + dxhat[i];
            sum_x = sum_x + dxhat[i] * xh[i];
        }
        let rs = cache.rstd[r];
        for i in 0..h {
            dx[r * h + i] = rs * (dxhat[i] - sum / n - xh[i] * sum_x / n);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * a * x * x)
}

/// Inverted dropout. Returns the per-element scale (0 or 1/(1-p)) when active.
fn dropout<T: Scalar>(x: &mut [T], rate: f64, rng: Option<&mut dyn RngCore>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    for (v, &s) in x.iter_mut().zip(&scale) {
        *v = *v * s;
    }
    Some(scale)
}

fn dropout_backward<T: Scalar>(dy: &mut [T], scale: &Option<Vec<T>>) {
    if let Some(s) = scale {
        for (d, &k) in dy.iter_mut().zip(s) {
            *d = *d * k;
        }
    }
}

struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// per head, row-major [n × n]
    weights: Vec<Vec<T>>,
    context: Vec<T>,
    attn_drop: Option<Vec<T>>,
    ln1: NormCache<T>,
    x1: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
    ff_drop: Option<Vec<T>>,
    ln2: NormCache<T>,
}

struct SeqCache<T> {
    ids: Vec<usize>,
    emb_ln: NormCache<T>,
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    pooled: Vec<T>,
    pool_drop: Option<Vec<T>>,
    logits: [T; NUM_CLASSES],
}

fn head_slice<T: Scalar>(x: &[T], n: usize, h: usize, head: usize, dk: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * dk);
    for r in 0..n {
        out.extend_from_slice(&x[r * h + head * dk..r * h + (head + 1) * dk]);
    }
    out
}

fn scatter_head<T: Scalar>(dst: &mut [T], src: &[T], n: usize, h: usize, head: usize, dk: usize) {
    for r in 0..n {
        dst[r * h + head * dk..r * h + (head + 1) * dk].copy_from_slice(&src[r * dk..(r + 1) * dk]);
    }
}

fn layer_forward<T: Scalar>(
    p: &LayerParams<T>,
    cfg: &ModelConfig,
    x: Vec<T>,
    n: usize,
    mode: &mut Mode<'_>,
) -> (Vec<T>, LayerCache<T>) {
    let h = cfg.hidden_dim;
    let dk = cfg.head_dim();
    let q = linear(&x, n, &p.query_w, &p.query_b);
    let k = linear(&x, n, &p.key_w, &p.key_b);
    let v = linear(&x, n, &p.value_w, &p.value_b);
    let mut context = vec![T::zero(); n * h];
    let mut weights = Vec::with_capacity(cfg.num_heads);
    for head in 0..cfg.num_heads {
        let (qh, kh, vh) = (
            head_slice(&q, n, h, head, dk),
            head_slice(&k, n, h, head, dk),
            head_slice(&v, n, h, head, dk),
        );
        let (out, w) = attend(&qh, &kh, &vh, n, n, dk, dk, None);
        scatter_head(&mut context, &out, n, h, head, dk);
        weights.push(w);
    }
    let mut attn = linear(&context, n, &p.out_w, &p.out_b);
    let attn_drop = dropout(&mut attn, cfg.dropout_rate, mode.rng());
    add_assign(&mut attn, &x);
    let (x1, ln1) = layer_norm(&attn, n, p.attn_ln_g.data(), p.attn_ln_b.data());

    let pre_act = linear(&x1, n, &p.ff_in_w, &p.ff_in_b);
    let act: Vec<T> = pre_act.iter().map(|&v| gelu(v)).collect();
    let mut ff = linear(&act, n, &p.ff_out_w, &p.ff_out_b);
    let ff_drop = dropout(&mut ff, cfg.dropout_rate, mode.rng());
    add_assign(&mut ff, &x1);
    let (out, ln2) = layer_norm(&ff, n, p.ff_ln_g.data(), p.ff_ln_b.data());
    (
        out,
        LayerCache {
            input: x,
            q,
            k,
            v,
            weights,
            context,
            attn_drop,
            ln1,
            x1,
            pre_act,
            act,
            ff_drop,
            ln2,
        },
    )
}

fn layer_backward<T: Scalar>(
    p: &LayerParams<T>,
    g: &mut LayerParams<T>,
    cfg: &ModelConfig,
    c: &LayerCache<T>,
    dout: &[T],
    n: usize,
) -> Vec<T> {
    let h = cfg.hidden_dim;
    let dk = cfg.head_dim();
    let mut dff = layer_norm_backward(
        dout,
        &c.ln2,
        p.ff_ln_g.data(),
        g.ff_ln_g.data_mut(),
        g.ff_ln_b.data_mut(),
    );
    let mut dx1 = dff.clone();
    dropout_backward(&mut dff, &c.ff_drop);
    let dact = linear_backward(&c.act, &dff, n, &p.ff_out_w, &mut g.ff_out_w, &mut g.ff_out_b);
    let dpre: Vec<T> = dact.iter().zip(&c.pre_act).map(|(&d, &x)| d * gelu_grad(x)).collect();
    let d = linear_backward(&c.x1, &dpre, n, &p.ff_in_w, &mut g.ff_in_w, &mut g.ff_in_b);
    add_assign(&mut dx1, &d);

    let mut dattn = layer_norm_backward(
        &dx1,
        &c.ln1,
        p.attn_ln_g.data(),
        g.attn_ln_g.data_mut(),
        g.attn_ln_b.data_mut(),
    );
    let mut dx = dattn.clone();
    dropout_backward(&mut dattn, &c.attn_drop);
    let dcontext = linear_backward(&c.context, &dattn, n, &p.out_w, &mut g.out_w, &mut g.out_b);

    let mut dq = vec![T::zero(); n * h];
    let mut dk_all = vec![T::zero(); n * h];
    let mut dv = vec![T::zero(); n * h];
    for head in 0..cfg.num_heads {
        let (qh, kh, vh) = (
            head_slice(&c.q, n, h, head, dk),
            head_slice(&c.k, n, h, head, dk),
            head_slice(&c.v, n, h, head, dk),
        );
        let dout_h = head_slice(&dcontext, n, h, head, dk);
        let (gq, gk, gv) = attend_backward(&qh, &kh, &vh, &c.weights[head], &dout_h, n, dk);
        scatter_head(&mut dq, &gq, n, h, head, dk);
        scatter_head(&mut dk_all, &gk, n, h, head, dk);
        scatter_head(&mut dv, &gv, n, h, head, dk);
    }
    for (dy, w, dw, db) in [
        (&dq, &p.query_w, &mut g.query_w, &mut g.query_b),
        (&dk_all, &p.key_w, &mut g.key_w, &mut g.key_b),
        (&dv, &p.value_w, &mut g.value_w, &mut g.value_b),
    ] {
        let d = linear_backward(&c.input, dy, n, w, dw, db);
        add_assign(&mut dx, &d);
    }
    dx
}

fn validate_sequence(seq: &TokenSequence, cfg: &ModelConfig) -> Result<(), ModelError> {
    let len = seq.ids.len();
    if seq.mask.len() != len || seq.real_length == 0 || seq.real_length > len {
        return Err(ModelError::Shape(format!(
            "token sequence with {} ids, {} mask entries, real length {}",
            len,
            seq.mask.len(),
            seq.real_length
        )));
    }
    if seq.real_length > cfg.max_positions {
        return Err(ModelError::Shape(format!(
            "sequence of {} tokens exceeds max_positions {}",
            seq.real_length, cfg.max_positions
        )));
    }
    if let Some((position, &id)) = seq
        .ids
        .iter()
        .enumerate()
        .find(|(_, &id)| id as usize >= cfg.vocab_size)
    {
        return Err(ModelError::TokenOutOfRange {
            id,
            position,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

fn sequence_forward<T: Scalar>(
    params: &Params<T>,
    cfg: &ModelConfig,
    seq: &TokenSequence,
    mode: &mut Mode<'_>,
) -> SeqCache<T> {
    let h = cfg.hidden_dim;
    let n = seq.real_length;
    let ids: Vec<usize> = seq.real_ids().iter().map(|&i| i as usize).collect();
    let mut emb = Vec::with_capacity(n * h);
    for (pos, &id) in ids.iter().enumerate() {
        let t = params.token_emb.row(id);
        let p = params.position_emb.row(pos);
        emb.extend(t.iter().zip(p).map(|(&a, &b)| a + b));
    }
    let (mut x, emb_ln) = layer_norm(&emb, n, params.emb_ln_g.data(), params.emb_ln_b.data());
    let emb_drop = dropout(&mut x, cfg.dropout_rate, mode.rng());

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for lp in &params.layers {
        let (out, cache) = layer_forward(lp, cfg, x, n, mode);
        layers.push(cache);
        x = out;
    }

    let mut pooled = match cfg.pooling {
        Pooling::ClsToken => x[..h].to_vec(),
        Pooling::MeanOverMask => {
            let inv = T::one() / T::from_f64(n as f64);
            (0..h).map(|j| (0..n).map(|r| x[r * h + j]).sum::<T>() * inv).collect()
        }
    };
    let pool_drop = dropout(&mut pooled, cfg.dropout_rate, mode.rng());
    let z = linear(&pooled, 1, &params.classifier_w, &params.classifier_b);
    SeqCache {
        ids,
        emb_ln,
        emb_drop,
        layers,
        pooled,
        pool_drop,
        logits: [z[0], z[1]],
    }
}

fn sequence_backward<T: Scalar>(
    params: &Params<T>,
    grads: &mut Params<T>,
    cfg: &ModelConfig,
    cache: &SeqCache<T>,
    dlogits: [T; NUM_CLASSES],
) {
    let h = cfg.hidden_dim;
    let n = cache.ids.len();
    let mut dpooled = linear_backward(
        &cache.pooled,
        &dlogits,
        1,
        &params.classifier_w,
        &mut grads.classifier_w,
        &mut grads.classifier_b,
    );
    dropout_backward(&mut dpooled, &cache.pool_drop);
    let mut dx = vec![T::zero(); n * h];
    match cfg.pooling {
        Pooling::ClsToken => dx[..h].copy_from_slice(&dpooled),
        Pooling::MeanOverMask => {
            let inv = T::one() / T::from_f64(n as f64);
            for r in 0..n {
                for j in 0..h {
                    dx[r * h + j] = dpooled[j] * inv;
                }
            }
        }
    }
    for (i, lc) in cache.layers.iter().enumerate().rev() {
        dx = layer_backward(&params.layers[i], &mut grads.layers[i], cfg, lc, &dx, n);
    }
    dropout_backward(&mut dx, &cache.emb_drop);
    let demb = layer_norm_backward(
        &dx,
        &cache.emb_ln,
        params.emb_ln_g.data(),
        grads.emb_ln_g.data_mut(),
        grads.emb_ln_b.data_mut(),
    );
    for (pos, &id) in cache.ids.iter().enumerate() {
        let d = &demb[pos * h..(pos + 1) * h];
        add_assign(grads.token_emb.row_mut(id), d);
        add_assign(grads.position_emb.row_mut(pos), d);
    }
}

fn check_batch<T: Scalar>(params: &Params<T>, cfg: &ModelConfig, batch: &[TokenSequence]) -> Result<(), ModelError> {
    cfg.validate()?;
    params.check(cfg)?;
    batch.iter().try_for_each(|s| validate_sequence(s, cfg))
}

/// Raw two-class logits for each sequence.
pub fn forward_logits<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    batch: &[TokenSequence],
    mut mode: Mode<'_>,
) -> Result<Vec<[T; NUM_CLASSES]>, ModelError> {
    check_batch(params, config, batch)?;
    Ok(batch
        .iter()
        .map(|s| sequence_forward(params, config, s, &mut mode).logits)
        .collect())
}

fn softmax2<T: Scalar>(z: [T; NUM_CLASSES]) -> [T; NUM_CLASSES] {
    let mut p = z;
    softmax_in_place(&mut p);
    p
}

/// Class probabilities `[p(other), p(climate)]` for each sequence.
pub fn forward<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    batch: &[TokenSequence],
    mode: Mode<'_>,
) -> Result<Vec<[T; NUM_CLASSES]>, ModelError> {
    Ok(forward_logits(params, config, batch, mode)?
        .into_iter()
        .map(softmax2)
        .collect())
}

/// Inference-mode probabilities.
pub fn predict_proba<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    batch: &[TokenSequence],
) -> Result<Vec<[T; NUM_CLASSES]>, ModelError> {
    forward(params, config, batch, Mode::Inference)
}

pub struct BatchGradients<T> {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub probabilities: Vec<[T; NUM_CLASSES]>,
    pub grads: Params<T>,
}

/// Mean cross-entropy loss and its gradient with respect to every parameter.
///
/// The loss is computed from logits as `logsumexp(z) - z[y]`; the logit
/// gradient is `(softmax(z) - onehot(y)) / batch_size`.
pub fn loss_and_gradients<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    batch: &[TokenSequence],
    labels: &[Label],
    mut mode: Mode<'_>,
) -> Result<BatchGradients<T>, ModelError> {
    if batch.len() != labels.len() {
        return Err(ModelError::Shape(format!(
            "{} sequences but {} labels",
            batch.len(),
            labels.len()
        )));
    }
    check_batch(params, config, batch)?;
    let mut grads = Params::zeros(config);
    let inv_b = T::one() / T::from_f64(batch.len().max(1) as f64);
    let mut loss = 0.0f64;
    let mut probabilities = Vec::with_capacity(batch.len());
    for (seq, &label) in batch.iter().zip(labels) {
        let cache = sequence_forward(params, config, seq, &mut mode);
        let z = cache.logits;
        let max = z[0].max(z[1]);
        let lse = max + ((z[0] - max).exp() + (z[1] - max).exp()).ln();
        loss += (lse - z[label.index()]).as_f64();
        let p = softmax2(z);
        let mut dz = p;
        dz[label.index()] = dz[label.index()] - T::one();
        sequence_backward(params, &mut grads, config, &cache, [dz[0] * inv_b, dz[1] * inv_b]);
        probabilities.push(p);
    }
    if let Some((name, _)) = grads.named().into_iter().find(|(_, t)| !t.is_finite()) {
        return Err(ModelError::NonFinite(format!("gradient of {name}")));
    }
    Ok(BatchGradients {
        loss: loss / batch.len().max(1) as f64,
        probabilities,
        grads,
    })
}
