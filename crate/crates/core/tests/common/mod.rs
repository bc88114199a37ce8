//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the library's numerical code: the reference encoder
//! walks the full padded sequence with explicit key masks, the t tail is a
//! quadrature of the density, and metric counts are recomputed from scratch.
#![allow(dead_code)]

use std::collections::HashMap;

use climasent::corpus::Label;
use climasent::encoder::{ModelConfig, Params, Pooling};
use climasent::tokenizer::TokenSequence;

// ---------------------------------------------------------------------------
// reference encoder

pub struct RefModel {
    pub cfg: ModelConfig,
    pub w: HashMap<String, Vec<f64>>,
}

impl RefModel {
    pub fn new(p: &Params<f64>, cfg: &ModelConfig) -> Self {
        let w = p.named().into_iter().map(|(n, t)| (n, t.data().to_vec())).collect();
        Self { cfg: *cfg, w }
    }

    fn t(&self, name: &str) -> &[f64] {
        &self.w[name]
    }

    /// x[rows × k] · W[k × n] + b
    fn affine(&self, x: &[Vec<f64>], wname: &str, bname: &str) -> Vec<Vec<f64>> {
        let w = self.t(wname);
        let b = self.t(bname);
        let n = b.len();
        x.iter()
            .map(|row| {
                (0..n)
                    .map(|j| b[j] + row.iter().enumerate().map(|(i, xi)| xi * w[i * n + j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn norm(&self, x: &[Vec<f64>], g: &str, b: &str) -> Vec<Vec<f64>> {
        let (g, b) = (self.t(g), self.t(b));
        x.iter()
            .map(|row| {
                let h = row.len() as f64;
                let mean = row.iter().sum::<f64>() / h;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h;
                let sd = (var + 1e-12).sqrt();
                row.iter()
                    .enumerate()
                    .map(|(i, v)| (v - mean) / sd * g[i] + b[i])
                    .collect()
            })
            .collect()
    }

    pub fn logits(&self, seq: &TokenSequence) -> [f64; 2] {
        let cfg = &self.cfg;
        let h = cfg.hidden_dim;
        let len = seq.ids.len();
        let tok = self.t("embeddings.token");
        let pos = self.t("embeddings.position");
        let emb: Vec<Vec<f64>> = (0..len)
            .map(|p| {
                let id = seq.ids[p] as usize;
                (0..h).map(|j| tok[id * h + j] + pos[p * h + j]).collect()
            })
            .collect();
        let mut x = self.norm(&emb, "embeddings.ln.gamma", "embeddings.ln.beta");

        let heads = cfg.num_heads;
        let dk = h / heads;
        for l in 0..cfg.num_layers {
            let name = |s: &str| format!("layers.{l}.{s}");
            let q = self.affine(&x, &name("attention.query.weight"), &name("attention.query.bias"));
            let k = self.affine(&x, &name("attention.key.weight"), &name("attention.key.bias"));
            let v = self.affine(&x, &name("attention.value.weight"), &name("attention.value.bias"));
            let mut ctx = vec![vec![0.0; h]; len];
            for head in 0..heads {
                let cols = head * dk..(head + 1) * dk;
                for i in 0..len {
                    let scores: Vec<Option<f64>> = (0..len)
                        .map(|j| {
                            (seq.mask[j] == 1)
                                .then(|| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                        })
                        .collect();
                    let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = scores.iter().flatten().map(|s| (s - max).exp()).sum();
                    for (j, s) in scores.iter().enumerate() {
                        if let Some(s) = s {
                            let a = (s - max).exp() / z;
                            for c in cols.clone() {
                                ctx[i][c] += a * v[j][c];
                            }
                        }
                    }
                }
            }
            let o = self.affine(&ctx, &name("attention.output.weight"), &name("attention.output.bias"));
            let res: Vec<Vec<f64>> = x
                .iter()
                .zip(&o)
                .map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect())
                .collect();
            let x1 = self.norm(&res, &name("attention.ln.gamma"), &name("attention.ln.beta"));
            let inter = self.affine(&x1, &name("ffn.intermediate.weight"), &name("ffn.intermediate.bias"));
            let act: Vec<Vec<f64>> = inter
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|&u| {
                            0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh())
                        })
                        .collect()
                })
                .collect();
            let f = self.affine(&act, &name("ffn.output.weight"), &name("ffn.output.bias"));
            let res: Vec<Vec<f64>> = x1
                .iter()
                .zip(&f)
                .map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect())
                .collect();
            x = self.norm(&res, &name("ffn.ln.gamma"), &name("ffn.ln.beta"));
        }

        let pooled: Vec<f64> = match cfg.pooling {
            Pooling::ClsToken => x[0].clone(),
            Pooling::MeanOverMask => {
                let count = seq.mask.iter().filter(|&&m| m == 1).count() as f64;
                (0..h)
                    .map(|j| (0..len).filter(|&r| seq.mask[r] == 1).map(|r| x[r][j]).sum::<f64>() / count)
                    .collect()
            }
        };
        let z = self.affine(&[pooled], "classifier.weight", "classifier.bias");
        [z[0][0], z[0][1]]
    }

    /// Mean of `-ln softmax(z)[y]`.
    pub fn loss(&self, batch: &[TokenSequence], labels: &[Label]) -> f64 {
        let total: f64 = batch
            .iter()
            .zip(labels)
            .map(|(s, l)| {
                let z = self.logits(s);
                let y = l.as_u8() as usize;
                let p = z[y].exp() / (z[0].exp() + z[1].exp());
                -p.ln()
            })
            .sum();
        total / batch.len() as f64
    }
}

pub fn padded(ids: &[u32], max_len: usize) -> TokenSequence {
    let mut all = ids.to_vec();
    all.resize(max_len, 0);
    TokenSequence {
        ids: all,
        mask: (0..max_len).map(|i| u8::from(i < ids.len())).collect(),
        real_length: ids.len(),
    }
}

// ---------------------------------------------------------------------------
// Student t tail by quadrature

/// Γ(k/2) for a positive integer k, from Γ(1) = 1, Γ(1/2) = √π and
/// Γ(x + 1) = xΓ(x). Returned as a log to stay finite for large k.
fn ln_gamma_half_integer(k: u64) -> f64 {
    let (mut x, mut acc) = if k.is_multiple_of(2) {
        (1.0, 0.0)
    } else {
        (0.5, 0.5 * std::f64::consts::PI.ln())
    };
    let target = k as f64 / 2.0;
    while x < target {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

fn t_density(s: f64, df: u64) -> f64 {
    let nu = df as f64;
    let ln_c = ln_gamma_half_integer(df + 1) - ln_gamma_half_integer(df) - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_c - (nu + 1.0) / 2.0 * (1.0 + s * s / nu).ln()).exp()
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Gauss-Kronrod 7/15 on [a, b]: (integral, error estimate).
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * GK_WEIGHTS[7];
    let mut gauss = fc * G_WEIGHTS[3];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Bisects until the error estimate is below `tol`, which halves with each
/// split, or down to roundoff in the panel itself.
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (whole, err) = gk15(f, a, b);
    if depth == 0 || err <= tol || err <= 64.0 * f64::EPSILON * whole.abs() {
        return whole;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth - 1) + adaptive(f, m, b, 0.5 * tol, depth - 1)
}

/// Two-sided `P(|T| ≥ |t|)` by integrating the density over the upper tail
/// with s = |t| + w/(1 - w), w in [0, 1).
pub fn t_two_sided_quadrature(t: f64, df: u64) -> f64 {
    let t = t.abs();
    let g = move |w: f64| {
        if w >= 1.0 {
            return 0.0;
        }
        let s = t + w / (1.0 - w);
        t_density(s, df) / ((1.0 - w) * (1.0 - w))
    };
    // split the interval so the early peak is resolved
    let cuts = [0.0, 0.01, 0.05, 0.2, 0.5, 0.8, 0.95, 0.99, 1.0];
    let rough: f64 = cuts.windows(2).map(|ab| gk15(&g, ab[0], ab[1]).0).sum();
    let tol = 1e-14 * rough / (cuts.len() - 1) as f64;
    let tail: f64 = cuts.windows(2).map(|ab| adaptive(&g, ab[0], ab[1], tol, 30)).sum();
    2.0 * tail
}

// ---------------------------------------------------------------------------
// metric recount

/// Integer numerators and denominators of the five scores, counted by
/// filtering the pairs once per score.
pub struct Recount {
    pub total: u64,
    pub correct: u64,
    pub predicted_pos: u64,
    pub actual_pos: u64,
    pub actual_neg: u64,
    pub true_pos: u64,
    pub true_neg: u64,
}

pub fn recount(pred: &[u8], gold: &[u8]) -> Recount {
    let pairs: Vec<(u8, u8)> = pred.iter().copied().zip(gold.iter().copied()).collect();
    let count = |f: &dyn Fn(&(u8, u8)) -> bool| pairs.iter().filter(|p| f(p)).count() as u64;
    Recount {
        total: pairs.len() as u64,
        correct: count(&|(p, g)| p == g),
        predicted_pos: count(&|(p, _)| *p == 1),
        actual_pos: count(&|(_, g)| *g == 1),
        actual_neg: count(&|(_, g)| *g == 0),
        true_pos: count(&|(p, g)| *p == 1 && *g == 1),
        true_neg: count(&|(p, g)| *p == 0 && *g == 0),
    }
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl Recount {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }
    pub fn precision(&self) -> f64 {
        ratio(self.true_pos, self.predicted_pos)
    }
    pub fn recall(&self) -> f64 {
        ratio(self.true_pos, self.actual_pos)
    }
    pub fn specificity(&self) -> f64 {
        ratio(self.true_neg, self.actual_neg)
    }
    /// 2·tp / (predicted positives + actual positives), the F1 identity
    /// written over integers.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.true_pos, self.predicted_pos + self.actual_pos)
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient check

pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_f64: f64,
    pub max_rel_f32: f64,
}

/// Relative error with a floor on the denominator, so components whose true
/// value is numerically zero are judged on absolute error.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Difference {
    /// (L(θ+ε) - L(θ-ε)) / 2ε
    Central,
    /// Central differences at ε and ε/2 combined to cancel the ε² term.
    Richardson,
}

/// Compares the library's analytic gradients (64- and 32-bit) with finite
/// differences of the reference loss. Per tensor, the `top` largest
/// analytic components and `random` further indices are checked.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    params: &Params<f64>,
    cfg: &ModelConfig,
    batch: &[TokenSequence],
    labels: &[Label],
    eps: f64,
    difference: Difference,
    floor: f64,
    top: usize,
    random: usize,
    seed: u64,
) -> Vec<TensorCheck> {
    use climasent::encoder::{loss_and_gradients, Mode};
    use rand::{Rng, SeedableRng};

    let g64 = loss_and_gradients(params, cfg, batch, labels, Mode::Inference)
        .unwrap()
        .grads;
    let p32: Params<f32> = params.cast();
    let g32 = loss_and_gradients(&p32, cfg, batch, labels, Mode::Inference)
        .unwrap()
        .grads;
    let mut reference = RefModel::new(params, cfg);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let named64 = g64.named();
    let named32 = g32.named();
    let mut out = Vec::new();
    for ((name, t64), (_, t32)) in named64.iter().zip(&named32) {
        let a64 = t64.data();
        let a32 = t32.data();
        let mut order: Vec<usize> = (0..a64.len()).collect();
        order.sort_by(|&i, &j| a64[j].abs().total_cmp(&a64[i].abs()));
        let mut picks: Vec<usize> = order.iter().take(top).copied().collect();
        for _ in 0..random {
            picks.push(rng.gen_range(0..a64.len()));
        }
        picks.sort_unstable();
        picks.dedup();

        let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
        for &i in &picks {
            let orig = reference.w[name][i];
            let mut central = |e: f64| {
                reference.w.get_mut(name).unwrap()[i] = orig + e;
                let up = reference.loss(batch, labels);
                reference.w.get_mut(name).unwrap()[i] = orig - e;
                let down = reference.loss(batch, labels);
                reference.w.get_mut(name).unwrap()[i] = orig;
                (up - down) / (2.0 * e)
            };
            let numeric = match difference {
                Difference::Central => central(eps),
                Difference::Richardson => (4.0 * central(eps / 2.0) - central(eps)) / 3.0,
            };
            worst64 = worst64.max(rel_err(a64[i], numeric, floor));
            worst32 = worst32.max(rel_err(a32[i] as f64, numeric, floor));
        }
        out.push(TensorCheck {
            name: name.clone(),
            checked: picks.len(),
            max_rel_f64: worst64,
            max_rel_f32: worst32,
        });
    }
    out
}

/// Desk-sized model with every bias and gain moved off its initial value, so
/// no gradient path is trivially zero.
pub fn desk_check_setup(seed: u64) -> (Params<f64>, ModelConfig, Vec<TokenSequence>, Vec<Label>) {
    use rand::{Rng, SeedableRng};
    let mut cfg = ModelConfig::desk(40, 16);
    cfg.dropout_rate = 0.0;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p: Params<f64> = Params::init(&cfg, &mut rng);
    for t in p.tensors_mut() {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
    }
    let lens = [16usize, 9, 5, 12];
    let batch: Vec<TokenSequence> = lens
        .iter()
        .map(|&n| {
            let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(0..40)).collect();
            padded(&ids, 16)
        })
        .collect();
    let labels = vec![Label::Climate, Label::Other, Label::Other, Label::Climate];
    (p, cfg, batch, labels)
}
