//! Dense building blocks with explicit forward caches and backward passes.
//!
//! Everything works on row-major token matrices (`tokens x width`). Each
//! `backward` takes the cache produced by the matching forward call, the
//! upstream gradient, and a gradient accumulator of the same type as the
//! layer; it returns the gradient with respect to the layer input.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Visits every parameter array with a dotted name.
pub trait ParamSet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

/// Horizontal concatenation of equally tall blocks.
pub fn concat_features(blocks: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::arg("concatenated blocks must have the same number of rows"));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).map_err(|e| Error::arg(e.to_string()))
}

/// Splits a feature-concatenated gradient back into blocks of the given widths.
pub fn split_features(x: &Array2<f64>, widths: &[usize]) -> Vec<Array2<f64>> {
    let mut out = Vec::with_capacity(widths.len());
    let mut at = 0;
    for &w in widths {
        out.push(x.slice(s![.., at..at + w]).to_owned());
        at += w;
    }
    out
}

/// Affine map `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Gaussian weights with std `gain / sqrt(input)`, small Gaussian bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (input.max(1) as f64).sqrt();
        let w = Normal::new(0.0, std).expect("finite std");
        let b = Normal::new(0.0, 0.02).expect("finite std");
        Linear {
            weight: Array2::from_shape_simple_fn((input, output), || w.sample(rng)),
            bias: Array1::from_shape_simple_fn(output, || b.sample(rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.input_dim(), self.output_dim())
    }

    fn check_input(&self, x: &Array2<f64>, what: &str) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::arg(format!(
                "{what}: input width {} does not match layer width {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

impl ParamSet for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        f(join(prefix, "weight"), self.weight.view().into_dyn());
        f(join(prefix, "bias"), self.bias.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        f(join(prefix, "weight"), self.weight.view_mut().into_dyn());
        f(join(prefix, "bias"), self.bias.view_mut().into_dyn());
    }
}

/// Two-layer perceptron: `fc2(gelu(fc1(x)))`, hidden width twice the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Array2<f64>,
    pub hidden_pre: Array2<f64>,
    pub hidden: Array2<f64>,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let hidden = 2 * input;
        Mlp {
            fc1: Linear::init(input, hidden, 1.0, rng),
            fc2: Linear::init(hidden, output, gain, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Mlp {
            fc1: Linear::zeros(input, 2 * input),
            fc2: Linear::zeros(2 * input, output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.output_dim()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.fc1.check_input(x, "mlp")?;
        let hidden_pre = self.fc1.forward(x);
        let hidden = hidden_pre.mapv(gelu);
        let y = self.fc2.forward(&hidden);
        Ok((
            y,
            MlpCache {
                input: x.clone(),
                hidden_pre,
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let dh = self.fc2.backward(&cache.hidden, dy, &mut grad.fc2);
        let dpre = dh * &cache.hidden_pre.mapv(gelu_grad);
        self.fc1.backward(&cache.input, &dpre, &mut grad.fc1)
    }
}

impl ParamSet for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub q_in: Array2<f64>,
    pub kv_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Row-stochastic attention map of every head (`Nq x Nk`).
    pub probs: Vec<Array2<f64>>,
    pub context: Array2<f64>,
}

impl Attention {
    pub fn init<R: Rng + ?Sized>(width: usize, heads: usize, gain: f64, rng: &mut R) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::arg(format!(
                "width {width} must be a positive multiple of the head count {heads}"
            )));
        }
        Ok(Attention {
            query: Linear::init(width, width, 1.0, rng),
            key: Linear::init(width, width, 1.0, rng),
            value: Linear::init(width, width, 1.0, rng),
            output: Linear::init(width, width, gain, rng),
            heads,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Attention {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            output: self.output.zeros_like(),
            heads: self.heads,
        }
    }

    pub fn width(&self) -> usize {
        self.query.input_dim()
    }

    pub fn forward(&self, queries: &Array2<f64>, keys_values: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(queries, keys_values)?.0)
    }

    pub fn forward_cached(
        &self,
        queries: &Array2<f64>,
        keys_values: &Array2<f64>,
    ) -> Result<(Array2<f64>, AttentionCache)> {
        if keys_values.nrows() == 0 {
            return Err(Error::arg("attention needs at least one key"));
        }
        self.query.check_input(queries, "attention queries")?;
        self.key.check_input(keys_values, "attention keys")?;
        let q = self.query.forward(queries);
        let k = self.key.forward(keys_values);
        let v = self.value.forward(keys_values);
        let dh = self.width() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut context = Array2::zeros((queries.nrows(), self.width()));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in scores.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|x| (x - m).exp());
                let z = row.sum();
                row /= z;
            }
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.output.forward(&context);
        Ok((
            out,
            AttentionCache {
                q_in: queries.clone(),
                kv_in: keys_values.clone(),
                q,
                k,
                v,
                probs,
                context,
            },
        ))
    }

    /// Returns `(d_queries, d_keys_values)`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy: &Array2<f64>,
        grad: &mut Attention,
    ) -> (Array2<f64>, Array2<f64>) {
        let dctx = self.output.backward(&cache.context, dy, &mut grad.output);
        let dh = self.width() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let dscores = p * &(dp - &row_dot) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
        }
        let dq_in = self.query.backward(&cache.q_in, &dq, &mut grad.query);
        let dkv = self.key.backward(&cache.kv_in, &dk, &mut grad.key)
            + self.value.backward(&cache.kv_in, &dv, &mut grad.value);
        (dq_in, dkv)
    }
}

impl ParamSet for Attention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    /// Explicit-loop attention, one head at a time.
    fn naive_attention(att: &Attention, q_in: &Array2<f64>, kv: &Array2<f64>) -> Array2<f64> {
        let c = att.width();
        let lin = |l: &Linear, x: &Array2<f64>| {
            let mut y = Array2::zeros((x.nrows(), l.output_dim()));
            for r in 0..x.nrows() {
                for o in 0..l.output_dim() {
                    let mut acc = l.bias[o];
                    for i in 0..l.input_dim() {
                        acc += x[[r, i]] * l.weight[[i, o]];
                    }
                    y[[r, o]] = acc;
                }
            }
            y
        };
        let q = lin(&att.query, q_in);
        let k = lin(&att.key, kv);
        let v = lin(&att.value, kv);
        let dh = c / att.heads;
        let mut ctx = Array2::zeros((q_in.nrows(), c));
        for h in 0..att.heads {
            for i in 0..q_in.nrows() {
                let mut scores = vec![0.0; kv.nrows()];
                for (j, s) in scores.iter_mut().enumerate() {
                    for d in 0..dh {
                        *s += q[[i, h * dh + d]] * k[[j, h * dh + d]];
                    }
                    *s /= (dh as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for d in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..kv.nrows() {
                        acc += e[j] / z * v[[j, h * dh + d]];
                    }
                    ctx[[i, h * dh + d]] = acc;
                }
            }
        }
        lin(&att.output, &ctx)
    }

    #[test]
    fn attention_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let att = Attention::init(4, 1, 1.0, &mut rng).unwrap();
        let q = random(2, 4, &mut rng);
        let kv = random(3, 4, &mut rng);
        let fast = att.forward(&q, &kv).unwrap();
        let slow = naive_attention(&att, &q, &kv);
        assert!((&fast - &slow).iter().all(|d| d.abs() < 1e-12));

        let att = Attention::init(8, 4, 1.0, &mut rng).unwrap();
        let q = random(3, 8, &mut rng);
        let kv = random(5, 8, &mut rng);
        let fast = att.forward(&q, &kv).unwrap();
        let slow = naive_attention(&att, &q, &kv);
        assert!((&fast - &slow).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn single_key_returns_projected_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let att = Attention::init(8, 2, 1.0, &mut rng).unwrap();
        let kv = random(1, 8, &mut rng);
        let q = random(4, 8, &mut rng);
        let out = att.forward(&q, &kv).unwrap();
        let expected = att.output.forward(&att.value.forward(&kv));
        for row in out.rows() {
            for (a, b) in row.iter().zip(expected.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // identical keys behave like the single key
        let repeated = Array2::from_shape_fn((3, 8), |(_, c)| kv[[0, c]]);
        let out3 = att.forward(&q, &repeated).unwrap();
        assert!((&out3 - &out).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let att = Attention::init(8, 4, 1.0, &mut rng).unwrap();
        let q = random(5, 8, &mut rng) * 10.0;
        let kv = random(7, 8, &mut rng) * 10.0;
        let (_, cache) = att.forward_cached(&q, &kv).unwrap();
        for p in &cache.probs {
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_context_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let att = Attention::init(4, 2, 1.0, &mut rng).unwrap();
        assert!(att.forward(&random(2, 4, &mut rng), &Array2::zeros((0, 4))).is_err());
        assert!(Attention::init(6, 4, 1.0, &mut rng).is_err());
    }

    fn numeric_input_grad(f: &dyn Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let eps = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += eps;
            let mut xm = x.clone();
            xm[[r, c]] -= eps;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * eps);
        }
        g
    }

    #[test]
    fn attention_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let att = Attention::init(8, 2, 1.0, &mut rng).unwrap();
        let q = random(3, 8, &mut rng);
        let kv = random(4, 8, &mut rng);
        let r = random(3, 8, &mut rng);
        let (_, cache) = att.forward_cached(&q, &kv).unwrap();
        let mut grad = att.zeros_like();
        let (dq, dkv) = att.backward(&cache, &r, &mut grad);
        let fq = |x: &Array2<f64>| (att.forward(x, &kv).unwrap() * &r).sum();
        let fkv = |x: &Array2<f64>| (att.forward(&q, x).unwrap() * &r).sum();
        let nq = numeric_input_grad(&fq, &q);
        let nkv = numeric_input_grad(&fkv, &kv);
        assert!((&dq - &nq).iter().all(|d| d.abs() < 1e-7));
        assert!((&dkv - &nkv).iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::init(3, 5, 1.0, &mut rng);
        let x = random(4, 3, &mut rng);
        let r = random(4, 5, &mut rng);
        let (_, cache) = mlp.forward_cached(&x).unwrap();
        let mut grad = mlp.zeros_like();
        let dx = mlp.backward(&cache, &r, &mut grad);
        let f = |x: &Array2<f64>| (mlp.forward(x).unwrap() * &r).sum();
        let n = numeric_input_grad(&f, &x);
        assert!((&dx - &n).iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn gelu_derivative() {
        for i in -40..=40 {
            let x = i as f64 * 0.2;
            let n = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((gelu_grad(x) - n).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn param_visit_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::init(2, 3, 1.0, &mut rng);
        let mut names = Vec::new();
        mlp.visit("gate", &mut |n, _| names.push(n));
        assert_eq!(names, ["gate.fc1.weight", "gate.fc1.bias", "gate.fc2.weight", "gate.fc2.bias"]);
    }
}
