//! Encoder forward and backward passes, the two output heads and the loss.
//!
//! Row-vector convention throughout: a layer computes `x W + b` with `x` of
//! shape (N, in) and `W` of shape (in, out).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use apeorder_core::EditAction;

use crate::error::ModelError;
use crate::input::ModelInput;
use crate::params::{LayerIds, Layout, Model};
use crate::vocab::Vocab;

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Dropout applied during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Gold operation and, for insertions, the gold token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub op: usize,
    pub token: Option<usize>,
}

impl Target {
    pub fn from_action(vocab: &Vocab, input: &ModelInput, action: &EditAction) -> Result<Self, ModelError> {
        let op = input.op_index(action)?;
        let token = match action {
            EditAction::Insert { token, .. } => Some(vocab.id(token)),
            _ => None,
        };
        Ok(Target { op, token })
    }
}

struct Norm {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop_attn: Option<Array2<f64>>,
    n1: Norm,
    y: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    drop_ffn: Option<Array2<f64>>,
    n2: Norm,
}

struct Cache {
    n0: Norm,
    drop_emb: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView2<f64>, bias: ArrayView2<f64>) -> (Array2<f64>, Norm) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let y = &xhat * &gain + bias;
    (y, Norm { xhat, inv_std })
}

fn layer_norm_back(dy: &Array2<f64>, norm: &Norm, gain: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dgain = (dy * &norm.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &gain;
    let h = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let d = dxhat.row(i);
        let xh = norm.xhat.row(i);
        let m1 = d.sum() / h;
        let m2 = d.dot(&xh) / h;
        let inv = norm.inv_std[i];
        dx.row_mut(i).assign(&((&d - m1 - &xh * m2) * inv));
    }
    (dx, dgain, dbias)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn dropout_mask(shape: (usize, usize), dropout: &mut Option<Dropout<'_>>) -> Option<Array2<f64>> {
    let d = dropout.as_mut()?;
    if d.rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - d.rate);
    Some(Array2::from_shape_fn(shape, |_| if d.rng.random::<f64>() < d.rate { 0.0 } else { keep }))
}

fn affine(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    x.dot(&w) + b
}

fn forward(model: &Model, input: &ModelInput, mut dropout: Option<Dropout<'_>>) -> Result<(Array2<f64>, Cache), ModelError> {
    let c = &model.config;
    let n = input.len();
    if n > c.max_len {
        return Err(ModelError::Length { len: n, max: c.max_len });
    }
    let lay = model.layout();
    let tok = model.view(lay.tok);
    let seg = model.view(lay.seg);
    let pos = model.view(lay.pos);
    let mut x0 = Array2::zeros((n, c.hidden));
    for i in 0..n {
        let mut row = x0.row_mut(i);
        row += &tok.row(input.ids[i]);
        row += &seg.row(input.segments[i]);
        row += &pos.row(i);
    }
    let (mut x, n0) = layer_norm(&x0, model.view(lay.emb_g), model.view(lay.emb_b));
    let drop_emb = dropout_mask(x.dim(), &mut dropout);
    if let Some(m) = &drop_emb {
        x *= m;
    }
    let mut layers = Vec::with_capacity(c.layers);
    for ids in &lay.layers {
        let (out, cache) = layer_forward(model, ids, x, &mut dropout);
        layers.push(cache);
        x = out;
    }
    Ok((x, Cache { n0, drop_emb, layers }))
}

fn layer_forward(model: &Model, ids: &LayerIds, x: Array2<f64>, dropout: &mut Option<Dropout<'_>>) -> (Array2<f64>, LayerCache) {
    let c = &model.config;
    let n = x.nrows();
    let d = c.hidden / c.heads;
    let scale = 1.0 / (d as f64).sqrt();
    let q = affine(&x, model.view(ids.wq), model.view(ids.bq));
    let k = affine(&x, model.view(ids.wk), model.view(ids.bk));
    let v = affine(&x, model.view(ids.wv), model.view(ids.bv));
    let mut ctx = Array2::zeros((n, c.hidden));
    let mut probs = Vec::with_capacity(c.heads);
    for head in 0..c.heads {
        let cols = s![.., head * d..(head + 1) * d];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        ctx.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        probs.push(a);
    }
    let mut attn = affine(&ctx, model.view(ids.wo), model.view(ids.bo));
    let drop_attn = dropout_mask(attn.dim(), dropout);
    if let Some(m) = &drop_attn {
        attn *= m;
    }
    let (y, n1) = layer_norm(&(&x + &attn), model.view(ids.ln1_g), model.view(ids.ln1_b));
    let f1 = affine(&y, model.view(ids.w1), model.view(ids.b1));
    let g = f1.mapv(gelu);
    let mut f2 = affine(&g, model.view(ids.w2), model.view(ids.b2));
    let drop_ffn = dropout_mask(f2.dim(), dropout);
    if let Some(m) = &drop_ffn {
        f2 *= m;
    }
    let (out, n2) = layer_norm(&(&y + &f2), model.view(ids.ln2_g), model.view(ids.ln2_b));
    (out, LayerCache { x, q, k, v, probs, ctx, drop_attn, n1, y, f1, g, drop_ffn, n2 })
}

fn accumulate(grad: &mut [f64], layout: &Layout, t: usize, d: &Array2<f64>) {
    for (g, v) in grad[layout.tensors[t].range()].iter_mut().zip(d.iter()) {
        *g += v;
    }
}

fn accumulate_row(grad: &mut [f64], layout: &Layout, t: usize, row: usize, d: ArrayView1<f64>) {
    let t = &layout.tensors[t];
    let start = t.offset + row * t.cols;
    for (g, v) in grad[start..start + t.cols].iter_mut().zip(d.iter()) {
        *g += v;
    }
}

fn bias_grad(d: &Array2<f64>) -> Array2<f64> {
    d.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn layer_backward(model: &Model, ids: &LayerIds, lc: &LayerCache, dout: Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
    let c = &model.config;
    let lay = model.layout();
    let d = c.hidden / c.heads;
    let scale = 1.0 / (d as f64).sqrt();

    let (dr2, dg2, db2) = layer_norm_back(&dout, &lc.n2, model.view(ids.ln2_g));
    accumulate(grad, lay, ids.ln2_g, &dg2);
    accumulate(grad, lay, ids.ln2_b, &db2);
    let mut dy = dr2.clone();
    let mut df2 = dr2;
    if let Some(m) = &lc.drop_ffn {
        df2 *= m;
    }
    accumulate(grad, lay, ids.w2, &lc.g.t().dot(&df2));
    accumulate(grad, lay, ids.b2, &bias_grad(&df2));
    let dg = df2.dot(&model.view(ids.w2).t());
    let df1 = dg * &lc.f1.mapv(gelu_grad);
    accumulate(grad, lay, ids.w1, &lc.y.t().dot(&df1));
    accumulate(grad, lay, ids.b1, &bias_grad(&df1));
    dy += &df1.dot(&model.view(ids.w1).t());

    let (dr1, dg1, db1) = layer_norm_back(&dy, &lc.n1, model.view(ids.ln1_g));
    accumulate(grad, lay, ids.ln1_g, &dg1);
    accumulate(grad, lay, ids.ln1_b, &db1);
    let mut dx = dr1.clone();
    let mut dattn = dr1;
    if let Some(m) = &lc.drop_attn {
        dattn *= m;
    }
    accumulate(grad, lay, ids.wo, &lc.ctx.t().dot(&dattn));
    accumulate(grad, lay, ids.bo, &bias_grad(&dattn));
    let dctx = dattn.dot(&model.view(ids.wo).t());

    let mut dq = Array2::zeros(lc.q.raw_dim());
    let mut dk = Array2::zeros(lc.k.raw_dim());
    let mut dv = Array2::zeros(lc.v.raw_dim());
    for (head, a) in lc.probs.iter().enumerate() {
        let cols = s![.., head * d..(head + 1) * d];
        let dc = dctx.slice(cols);
        let da = dc.dot(&lc.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&dc));
        let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = (da - &row_dot) * a * scale;
        dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
    }
    for (dproj, w, b) in [(&dq, ids.wq, ids.bq), (&dk, ids.wk, ids.bk), (&dv, ids.wv, ids.bv)] {
        accumulate(grad, lay, w, &lc.x.t().dot(dproj));
        accumulate(grad, lay, b, &bias_grad(dproj));
        dx += &dproj.dot(&model.view(w).t());
    }
    dx
}

fn backward(model: &Model, input: &ModelInput, cache: &Cache, dh: Array2<f64>, grad: &mut [f64]) {
    let lay = model.layout();
    let mut dx = dh;
    for (ids, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        dx = layer_backward(model, ids, lc, dx, grad);
    }
    if let Some(m) = &cache.drop_emb {
        dx *= m;
    }
    let (dx0, dg, db) = layer_norm_back(&dx, &cache.n0, model.view(lay.emb_g));
    accumulate(grad, lay, lay.emb_g, &dg);
    accumulate(grad, lay, lay.emb_b, &db);
    for (i, row) in dx0.rows().into_iter().enumerate() {
        accumulate_row(grad, lay, lay.tok, input.ids[i], row);
        accumulate_row(grad, lay, lay.seg, input.segments[i], row);
        accumulate_row(grad, lay, lay.pos, i, row);
    }
}

/// Hidden states, one row per input position, with dropout disabled.
pub fn encode(model: &Model, input: &ModelInput) -> Result<Array2<f64>, ModelError> {
    forward(model, input, None).map(|(h, _)| h)
}

fn edit_logits(model: &Model, hidden: &Array2<f64>) -> Vec<f64> {
    let z = hidden.dot(&model.view(model.layout().edit));
    z.iter().copied().collect()
}

/// Log-normalizer over the available operations.
fn masked_lse(logits: &[f64], input: &ModelInput) -> Result<f64, ModelError> {
    let max = (0..logits.len())
        .filter(|&op| input.is_available(op))
        .map(|op| logits[op])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ModelError::AllMasked);
    }
    let sum: f64 = (0..logits.len()).filter(|&op| input.is_available(op)).map(|op| (logits[op] - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Distribution over the `2N` flattened operations; masked entries are exactly 0.
pub fn edit_op_probs(model: &Model, hidden: &Array2<f64>, input: &ModelInput) -> Result<Vec<f64>, ModelError> {
    let logits = edit_logits(model, hidden);
    let lse = masked_lse(&logits, input)?;
    Ok((0..logits.len())
        .map(|op| if input.is_available(op) { (logits[op] - lse).exp() } else { 0.0 })
        .collect())
}

fn log_softmax(z: &Array1<f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z - lse
}

/// Distribution over the vocabulary for a token inserted after `row`.
pub fn token_probs(model: &Model, hidden: &Array2<f64>, input: &ModelInput, row: usize) -> Result<Vec<f64>, ModelError> {
    if row >= input.len() || !input.is_available(2 * row + 1) {
        return Err(ModelError::MaskedPosition { row });
    }
    let u = model.view(model.layout().vocab).dot(&hidden.row(row));
    Ok(log_softmax(&u).mapv(f64::exp).to_vec())
}

/// Loss of one teacher-forced step, with dropout disabled.
pub fn loss(model: &Model, input: &ModelInput, target: Target, smoothing: f64) -> Result<f64, ModelError> {
    let mut scratch = vec![0.0; model.num_params()];
    loss_and_grad(model, input, target, smoothing, None, &mut scratch)
}

/// Loss of one teacher-forced step; its gradient is added to `grad`.
///
/// The operation term is the negative log-probability of the gold operation
/// among the available ones. Insertions add the token cross-entropy against
/// the gold token smoothed uniformly over the vocabulary by `smoothing`.
pub fn loss_and_grad(
    model: &Model,
    input: &ModelInput,
    target: Target,
    smoothing: f64,
    dropout: Option<Dropout<'_>>,
    grad: &mut [f64],
) -> Result<f64, ModelError> {
    if target.op >= input.num_ops() || !input.is_available(target.op) {
        return Err(ModelError::MaskedOp { op: target.op });
    }
    let is_insert = target.op % 2 == 1;
    if is_insert != target.token.is_some() {
        return Err(ModelError::Config("insertions, and only insertions, carry a gold token".into()));
    }
    let (hidden, cache) = forward(model, input, dropout)?;
    let lay = model.layout();
    let w_edit = model.view(lay.edit);
    let logits = edit_logits(model, &hidden);
    let lse = masked_lse(&logits, input)?;
    let mut total = lse - logits[target.op];

    let mut dz = Array2::zeros((input.len(), 2));
    for (op, dzv) in dz.iter_mut().enumerate() {
        if input.is_available(op) {
            *dzv = (logits[op] - lse).exp() - f64::from(u8::from(op == target.op));
        }
    }
    accumulate(grad, lay, lay.edit, &hidden.t().dot(&dz));
    let mut dh = dz.dot(&w_edit.t());

    if let Some(gold) = target.token {
        let row = target.op / 2;
        let v = model.view(lay.vocab);
        let hr = hidden.row(row);
        let logp = log_softmax(&v.dot(&hr));
        let size = logp.len() as f64;
        total += (1.0 - smoothing) * -logp[gold] + smoothing * -logp.sum() / size;
        let mut du = logp.mapv(f64::exp);
        du -= smoothing / size;
        du[gold] -= 1.0 - smoothing;
        let dv = du.view().insert_axis(Axis(1)).dot(&hr.insert_axis(Axis(0)));
        accumulate(grad, lay, lay.vocab, &dv);
        let mut dr = dh.row_mut(row);
        dr += &du.dot(&v);
    }
    if !total.is_finite() {
        return Ok(total);
    }
    backward(model, input, &cache, dh, grad);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelConfig;

    fn toy(vocab_words: &[&str], std: f64, seed: u64) -> Model {
        let vocab = Vocab::build(vocab_words.iter().copied());
        let c = ModelConfig { layers: 2, hidden: 8, heads: 2, ffn: 16, max_len: 12, vocab_size: vocab.len() };
        Model::init(c, vocab, std, seed).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut m = toy(&["a", "b"], 0.5, 1);
        m.params.fill(0.0);
        let x = ModelInput::new(&m.vocab, &["a"], &["a", "b"], 12).unwrap();
        let h = encode(&m, &x).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_logits_spread_over_available_ops() {
        let mut m = toy(&["a", "b"], 0.5, 1);
        let edit = m.layout().edit;
        m.view_mut(edit).fill(0.0);
        let x = ModelInput::new(&m.vocab, &["a", "b", "a"], &["a", "b"], 12).unwrap();
        let h = encode(&m, &x).unwrap();
        let p = edit_op_probs(&m, &h, &x).unwrap();
        for (op, &pr) in p.iter().enumerate() {
            if x.is_available(op) {
                assert!((pr - 1.0 / 6.0).abs() < 1e-15);
            } else {
                assert_eq!(pr, 0.0);
            }
        }
    }

    #[test]
    fn uniform_losses() {
        // Four-token vocabulary: only the specials.
        let mut m = toy(&[], 0.5, 3);
        assert_eq!(m.vocab.len(), 4);
        let (edit, vocab) = (m.layout().edit, m.layout().vocab);
        m.view_mut(edit).fill(0.0);
        m.view_mut(vocab).fill(0.0);
        let x = ModelInput::new(&m.vocab, &["x"], &["y", "z"], 12).unwrap();
        let del = Target::from_action(&m.vocab, &x, &"D:1:z".parse().unwrap()).unwrap();
        assert!((loss(&m, &x, del, 0.0).unwrap() - 6f64.ln()).abs() < 1e-12);
        let ins = Target::from_action(&m.vocab, &x, &"I:2:w".parse().unwrap()).unwrap();
        assert!((loss(&m, &x, ins, 0.0).unwrap() - (6f64.ln() + 4f64.ln())).abs() < 1e-12);
        // Smoothing cannot change a uniform token loss.
        assert!((loss(&m, &x, ins, 0.1).unwrap() - (6f64.ln() + 4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn token_probs_match_hand_softmax() {
        let mut m = toy(&["a", "b", "c"], 0.5, 4);
        let x = ModelInput::new(&m.vocab, &["a"], &["b"], 12).unwrap();
        let vocab = m.layout().vocab;
        m.view_mut(vocab).fill(0.0);
        let h = encode(&m, &x).unwrap();
        let p = token_probs(&m, &h, &x, x.start_row).unwrap();
        assert!(p.iter().all(|&q| (q - 1.0 / 7.0).abs() < 1e-15));
        // Favor "c" via a row aligned with the hidden state.
        let hr = h.row(x.start_row).to_owned();
        let c = m.vocab.id("c");
        m.view_mut(vocab).row_mut(c).assign(&hr);
        let p = token_probs(&m, &h, &x, x.start_row).unwrap();
        let s: f64 = hr.dot(&hr);
        let expected = s.exp() / (s.exp() + 6.0);
        assert!((p[c] - expected).abs() < 1e-12);
        assert!(token_probs(&m, &h, &x, 0).is_err());
        assert!(token_probs(&m, &h, &x, x.end_row()).is_err());
    }

    #[test]
    fn position_breaks_symmetry() {
        let m = toy(&["a", "b"], 0.5, 5);
        let x1 = ModelInput::new(&m.vocab, &["a", "b"], &["a"], 12).unwrap();
        let x2 = ModelInput::new(&m.vocab, &["b", "a"], &["a"], 12).unwrap();
        assert_ne!(encode(&m, &x1).unwrap(), encode(&m, &x2).unwrap());
        assert_eq!(encode(&m, &x1).unwrap(), encode(&m, &x1).unwrap());
    }

    #[test]
    fn masked_target_is_rejected() {
        let m = toy(&["a"], 0.5, 6);
        let x = ModelInput::new(&m.vocab, &["a"], &["a"], 12).unwrap();
        assert!(matches!(loss(&m, &x, Target { op: 0, token: None }, 0.0), Err(ModelError::MaskedOp { op: 0 })));
        let too_long = ModelInput::new(&m.vocab, &["a"; 8], &["a"; 2], 20).unwrap();
        assert!(matches!(encode(&m, &too_long), Err(ModelError::Length { .. })));
    }
}
