//! Trainable models: multiclass logistic regression and a one-hidden-layer MLP.
//!
//! Parameters live in one flat vector so they can be averaged, measured and
//! perturbed by the aggregation rules and attacks without knowing the layout.
//!
//! Layout, class-major:
//! - LR: `W[c][j]` (C x d), then `b[c]`.
//! - MLP: `W1[h][j]` (H x d), `b1[h]`, `W2[c][h]` (C x H), `b2[c]`.
//!
//! LR predicts with a softmax and trains on cross-entropy. The MLP uses a ReLU
//! hidden layer and independent per-class sigmoid outputs trained with
//! one-vs-all binary cross-entropy. All probabilities entering a logarithm are
//! clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::seed;
use crate::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_HIDDEN: usize = 150;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Ignored for [`ModelKind::Lr`].
    pub hidden_dim: usize,
    pub class_count: usize,
}

impl ModelArch {
    pub fn lr(input_dim: usize, class_count: usize) -> Self {
        Self { kind: ModelKind::Lr, input_dim, hidden_dim: 0, class_count }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, class_count: usize) -> Self {
        Self { kind: ModelKind::Mlp, input_dim, hidden_dim, class_count }
    }

    pub fn parameter_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.class_count);
        match self.kind {
            ModelKind::Lr => d * c + c,
            ModelKind::Mlp => d * h + h + h * c + c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be at least 1".into()));
        }
        if self.class_count < 2 {
            return Err(Error::InvalidArgument("class_count must be at least 2".into()));
        }
        if self.kind == ModelKind::Mlp && self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be at least 1 for an MLP".into()));
        }
        Ok(())
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.dim() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, found: ds.dim() });
        }
        if ds.class_count() != self.class_count {
            return Err(Error::DimensionMismatch { expected: self.class_count, found: ds.class_count() });
        }
        Ok(())
    }
}

/// Model parameters: a flat vector whose length matches its architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    arch: ModelArch,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(arch: ModelArch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.parameter_count() {
            return Err(Error::DimensionMismatch { expected: arch.parameter_count(), found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameter vector contains non-finite values".into()));
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: ModelArch) -> Self {
        Self { values: vec![0.0; arch.parameter_count()], arch }
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Copy with values replaced, same architecture.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.arch, values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && self.adam_epsilon > 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && self.adam_beta1 > 0.0
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_beta2 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }
}

/// Zero weights for LR; Glorot-uniform weights and zero biases for the MLP.
pub fn init_model(arch: ModelArch, seed: u64) -> Result<ParameterVector> {
    arch.validate()?;
    let mut w = ParameterVector::zeros(arch);
    if arch.kind == ModelKind::Mlp {
        let (d, h, c) = (arch.input_dim, arch.hidden_dim, arch.class_count);
        let mut rng = seed::rng_for(seed, &[seed::tag::INIT]);
        let l1 = (6.0 / (d + h) as f64).sqrt();
        let l2 = (6.0 / (h + c) as f64).sqrt();
        let (w1, rest) = w.values.split_at_mut(d * h);
        for v in w1 {
            *v = rng.random_range(-l1..=l1);
        }
        for v in &mut rest[h..h + h * c] {
            *v = rng.random_range(-l2..=l2);
        }
    }
    Ok(w)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Whether `p` lies strictly inside the clamp band, i.e. the loss still
/// depends on it.
fn unclamped(p: f64) -> bool {
    p > PROB_FLOOR && p < 1.0 - PROB_FLOOR
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
    d_out: Vec<f64>,
    d_hidden: Vec<f64>,
}

impl Workspace {
    fn new(arch: &ModelArch) -> Self {
        Self {
            hidden_pre: vec![0.0; arch.hidden_dim],
            hidden: vec![0.0; arch.hidden_dim],
            out: vec![0.0; arch.class_count],
            d_out: vec![0.0; arch.class_count],
            d_hidden: vec![0.0; arch.hidden_dim],
        }
    }
}

fn forward(w: &ParameterVector, x: &[f64], ws: &mut Workspace) {
    let a = &w.arch;
    let (d, h, c) = (a.input_dim, a.hidden_dim, a.class_count);
    let p = &w.values;
    match a.kind {
        ModelKind::Lr => {
            let (weights, bias) = p.split_at(d * c);
            for k in 0..c {
                let row = &weights[k * d..(k + 1) * d];
                ws.out[k] = bias[k] + row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>();
            }
            softmax_in_place(&mut ws.out);
        }
        ModelKind::Mlp => {
            let (w1, rest) = p.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h * c);
            for u in 0..h {
                let row = &w1[u * d..(u + 1) * d];
                let pre = b1[u] + row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>();
                ws.hidden_pre[u] = pre;
                ws.hidden[u] = pre.max(0.0);
            }
            for k in 0..c {
                let row = &w2[k * h..(k + 1) * h];
                let z = b2[k] + row.iter().zip(&ws.hidden).map(|(wv, hv)| wv * hv).sum::<f64>();
                ws.out[k] = sigmoid(z);
            }
        }
    }
}

/// Loss of one sample given the forward pass in `ws`; fills `ws.d_out` with
/// the derivative of that loss with respect to the output pre-activations.
fn sample_loss(arch: &ModelArch, y: usize, ws: &mut Workspace) -> f64 {
    match arch.kind {
        ModelKind::Lr => {
            let py = ws.out[y];
            let live = unclamped(py);
            for (k, g) in ws.d_out.iter_mut().enumerate() {
                *g = if live { ws.out[k] - f64::from(u8::from(k == y)) } else { 0.0 };
            }
            -clamp_prob(py).ln()
        }
        ModelKind::Mlp => {
            let mut loss = 0.0;
            for k in 0..arch.class_count {
                let q = ws.out[k];
                let target = f64::from(u8::from(k == y));
                let qc = clamp_prob(q);
                loss -= if k == y { qc.ln() } else { (1.0 - qc).ln() };
                ws.d_out[k] = if unclamped(q) { q - target } else { 0.0 };
            }
            loss
        }
    }
}

/// Add `scale * dL/dparams` for one sample into `grad` and, if requested,
/// write `dL/dx` into `input_grad`.
fn backward(w: &ParameterVector, x: &[f64], ws: &mut Workspace, scale: f64, grad: Option<&mut [f64]>, input_grad: Option<&mut [f64]>) {
    let a = &w.arch;
    let (d, h, c) = (a.input_dim, a.hidden_dim, a.class_count);
    let p = &w.values;
    match a.kind {
        ModelKind::Lr => {
            if let Some(grad) = grad {
                let (gw, gb) = grad.split_at_mut(d * c);
                for k in 0..c {
                    let dz = scale * ws.d_out[k];
                    if dz != 0.0 {
                        for (g, xv) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *g += dz * xv;
                        }
                        gb[k] += dz;
                    }
                }
            }
            if let Some(ig) = input_grad {
                ig.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let dz = ws.d_out[k];
                    for (g, wv) in ig.iter_mut().zip(&p[k * d..(k + 1) * d]) {
                        *g += dz * wv;
                    }
                }
            }
        }
        ModelKind::Mlp => {
            let w1 = &p[..d * h];
            let w2 = &p[d * h + h..d * h + h + h * c];
            for u in 0..h {
                let dr: f64 = (0..c).map(|k| ws.d_out[k] * w2[k * h + u]).sum();
                ws.d_hidden[u] = if ws.hidden_pre[u] > 0.0 { dr } else { 0.0 };
            }
            if let Some(grad) = grad {
                let (gw1, rest) = grad.split_at_mut(d * h);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(h * c);
                for k in 0..c {
                    let dz = scale * ws.d_out[k];
                    if dz != 0.0 {
                        for (g, hv) in gw2[k * h..(k + 1) * h].iter_mut().zip(&ws.hidden) {
                            *g += dz * hv;
                        }
                        gb2[k] += dz;
                    }
                }
                for u in 0..h {
                    let da = scale * ws.d_hidden[u];
                    if da != 0.0 {
                        for (g, xv) in gw1[u * d..(u + 1) * d].iter_mut().zip(x) {
                            *g += da * xv;
                        }
                        gb1[u] += da;
                    }
                }
            }
            if let Some(ig) = input_grad {
                ig.iter_mut().for_each(|v| *v = 0.0);
                for u in 0..h {
                    let da = ws.d_hidden[u];
                    if da != 0.0 {
                        for (g, wv) in ig.iter_mut().zip(&w1[u * d..(u + 1) * d]) {
                            *g += da * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Mean loss over `rows`, accumulating the mean gradient into `grad` when given.
fn mean_loss_and_grad(w: &ParameterVector, ds: &Dataset, rows: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
    let mut ws = Workspace::new(&w.arch);
    let scale = 1.0 / rows.len() as f64;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut total = 0.0;
    for &i in rows {
        let x = ds.row(i);
        forward(w, x, &mut ws);
        total += sample_loss(&w.arch, ds.label(i), &mut ws);
        if let Some(g) = grad.as_deref_mut() {
            backward(w, x, &mut ws, scale, Some(g), None);
        }
    }
    total * scale
}

/// Per-row class probabilities. Rows sum to 1 for LR but not for the MLP.
pub fn predict_proba(w: &ParameterVector, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    if ds.dim() != w.arch.input_dim {
        return Err(Error::DimensionMismatch { expected: w.arch.input_dim, found: ds.dim() });
    }
    let mut ws = Workspace::new(&w.arch);
    Ok((0..ds.rows())
        .map(|i| {
            forward(w, ds.row(i), &mut ws);
            ws.out.clone()
        })
        .collect())
}

pub fn loss(w: &ParameterVector, ds: &Dataset) -> Result<f64> {
    w.arch.check_dataset(ds)?;
    if ds.is_empty() {
        return Err(Error::Empty("loss of an empty dataset"));
    }
    let rows: Vec<usize> = (0..ds.rows()).collect();
    Ok(mean_loss_and_grad(w, ds, &rows, None))
}

/// Exact gradient of [`loss`] over the whole batch, in parameter layout.
pub fn gradient(w: &ParameterVector, batch: &Dataset) -> Result<Vec<f64>> {
    w.arch.check_dataset(batch)?;
    if batch.is_empty() {
        return Err(Error::Empty("gradient of an empty batch"));
    }
    let rows: Vec<usize> = (0..batch.rows()).collect();
    let mut g = vec![0.0; w.len()];
    mean_loss_and_grad(w, batch, &rows, Some(&mut g));
    Ok(g)
}

/// Gradient of a single sample's loss with respect to its features.
pub fn input_gradient(w: &ParameterVector, x: &[f64], y: usize) -> Result<Vec<f64>> {
    if x.len() != w.arch.input_dim {
        return Err(Error::DimensionMismatch { expected: w.arch.input_dim, found: x.len() });
    }
    if y >= w.arch.class_count {
        return Err(Error::InvalidArgument(format!("label {y} out of range")));
    }
    let mut ws = Workspace::new(&w.arch);
    forward(w, x, &mut ws);
    sample_loss(&w.arch, y, &mut ws);
    let mut ig = vec![0.0; x.len()];
    backward(w, x, &mut ws, 1.0, None, Some(&mut ig));
    Ok(ig)
}

/// Adam moment state for one parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Mini-batch Adam from `w0` with fresh moment state.
pub fn train_local(w0: &ParameterVector, ds: &Dataset, cfg: &TrainConfig) -> Result<ParameterVector> {
    cfg.validate()?;
    w0.arch.check_dataset(ds)?;
    if ds.is_empty() {
        return Err(Error::Empty("cannot train on an empty dataset"));
    }
    let mut w = w0.clone();
    if cfg.local_epochs == 0 {
        return Ok(w);
    }
    let mut adam = Adam::new(w.len(), cfg);
    let mut rng = seed::rng_for(cfg.seed, &[seed::tag::TRAIN]);
    let mut order: Vec<usize> = (0..ds.rows()).collect();
    let mut grad = vec![0.0; w.len()];
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            mean_loss_and_grad(&w, ds, batch, Some(&mut grad));
            adam.step(&mut w.values, &grad);
        }
    }
    Ok(w)
}

/// Index of the largest score, ties toward the smallest index.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

pub fn accuracy(w: &ParameterVector, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("accuracy of an empty dataset"));
    }
    let probs = predict_proba(w, ds)?;
    let hits = probs
        .iter()
        .zip(ds.labels())
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(hits as f64 / ds.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;

    fn toy(n: usize, d: usize, c: usize, seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let features = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|i| i % c).collect();
        Dataset::new(features, d, labels, c).unwrap()
    }

    fn random_params(arch: ModelArch, seed: u64) -> ParameterVector {
        let mut rng = seed::rng(seed);
        let values = (0..arch.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ParameterVector::new(arch, values).unwrap()
    }

    fn max_fd_error(w: &ParameterVector, ds: &Dataset) -> f64 {
        let g = gradient(w, ds).unwrap();
        let eps = 1e-5;
        (0..w.len())
            .map(|j| {
                let mut plus = w.values.clone();
                let mut minus = w.values.clone();
                plus[j] += eps;
                minus[j] -= eps;
                let lp = loss(&w.with_values(plus).unwrap(), ds).unwrap();
                let lm = loss(&w.with_values(minus).unwrap(), ds).unwrap();
                (g[j] - (lp - lm) / (2.0 * eps)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn parameter_counts() {
        let lr = init_model(ModelArch::lr(4, 3), 0).unwrap();
        assert_eq!(lr.len(), 15);
        assert!(lr.values().iter().all(|&v| v == 0.0));
        let mlp = init_model(ModelArch::mlp(4, 2, 3), 0).unwrap();
        assert_eq!(mlp.len(), 19);
        assert_eq!(mlp, init_model(ModelArch::mlp(4, 2, 3), 0).unwrap());
    }

    #[test]
    fn mlp_init_bounds() {
        let arch = ModelArch::mlp(10, 150, 3);
        let w = init_model(arch, 5).unwrap();
        let l1 = (6.0f64 / 160.0).sqrt();
        assert!(w.values()[..1500].iter().all(|v| v.abs() <= l1));
        assert!(w.values()[1500..1650].iter().all(|&v| v == 0.0));
        assert!(w.values()[w.len() - 3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_and_half_predictions() {
        let ds = toy(6, 4, 3, 1);
        let lr = ParameterVector::zeros(ModelArch::lr(4, 3));
        for row in predict_proba(&lr, &ds).unwrap() {
            for p in row {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let mut mlp = random_params(ModelArch::mlp(4, 5, 3), 2);
        let n = mlp.len();
        // Zero the output layer: W2 and b2.
        mlp.values[4 * 5 + 5..n].iter_mut().for_each(|v| *v = 0.0);
        for row in predict_proba(&mlp, &ds).unwrap() {
            assert!(row.iter().all(|&p| p == 0.5));
        }
    }

    #[test]
    fn probabilities_in_open_interval_and_lr_rows_sum_to_one() {
        let ds = toy(20, 3, 4, 3);
        for arch in [ModelArch::lr(3, 4), ModelArch::mlp(3, 6, 4)] {
            let w = random_params(arch, 9);
            for row in predict_proba(&w, &ds).unwrap() {
                assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
                if arch.kind == ModelKind::Lr {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_lr_loss_is_ln2() {
        let ds = toy(7, 2, 2, 4);
        let w = ParameterVector::zeros(ModelArch::lr(2, 2));
        assert!((loss(&w, &ds).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_errors() {
        let ds = Dataset::new(vec![], 2, vec![], 2).unwrap();
        let w = ParameterVector::zeros(ModelArch::lr(2, 2));
        assert!(loss(&w, &ds).is_err());
        assert!(gradient(&w, &ds).is_err());
        assert!(accuracy(&w, &ds).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let ds = toy(3, 2, 2, 0);
        let w = ParameterVector::zeros(ModelArch::lr(3, 2));
        assert!(matches!(loss(&w, &ds), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(predict_proba(&w, &ds), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn finite_difference_both_archs() {
        for (i, arch) in [ModelArch::lr(3, 3), ModelArch::mlp(3, 4, 3)].into_iter().enumerate() {
            for point in 0..3 {
                let ds = toy(5, 3, 3, 10 + point);
                let w = random_params(arch, 100 * i as u64 + point);
                let err = max_fd_error(&w, &ds);
                assert!(err <= 1e-4, "{arch:?} point {point}: {err}");
            }
        }
    }

    #[test]
    fn duplicate_batch_gradient_equals_single() {
        let one = toy(1, 3, 2, 5);
        let dup = one.subset(&[0, 0, 0, 0]);
        for arch in [ModelArch::lr(3, 2), ModelArch::mlp(3, 4, 2)] {
            let w = random_params(arch, 8);
            let a = gradient(&w, &one).unwrap();
            let b = gradient(&w, &dup).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        for arch in [ModelArch::lr(3, 3), ModelArch::mlp(3, 5, 3)] {
            let w = random_params(arch, 21);
            let x = [0.3, -0.7, 1.1];
            let g = input_gradient(&w, &x, 1).unwrap();
            for j in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += 1e-6;
                xm[j] -= 1e-6;
                let one = |v: [f64; 3]| {
                    let ds = Dataset::new(v.to_vec(), 3, vec![1], 3).unwrap();
                    loss(&w, &ds).unwrap()
                };
                let fd = (one(xp) - one(xm)) / 2e-6;
                assert!((g[j] - fd).abs() < 1e-6, "{arch:?} dim {j}");
            }
        }
    }

    #[test]
    fn optimum_of_two_point_toy_has_small_gradient() {
        // Same features, opposite labels: the optimum predicts 1/2 everywhere.
        let ds = Dataset::new(vec![1.0, 1.0], 1, vec![0, 1], 2).unwrap();
        let cfg = TrainConfig { local_epochs: 5000, batch_size: 2, learning_rate: 1e-2, ..Default::default() };
        let w0 = random_params(ModelArch::lr(1, 2), 6);
        assert!(gradient(&w0, &ds).unwrap().iter().any(|g| g.abs() > 1e-2));
        let w = train_local(&w0, &ds, &cfg).unwrap();
        let g = gradient(&w, &ds).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "{norm}");
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(3, &cfg);
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            adam.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn zero_epochs_returns_input() {
        let ds = toy(10, 2, 2, 0);
        let w0 = random_params(ModelArch::lr(2, 2), 1);
        let cfg = TrainConfig { local_epochs: 0, ..Default::default() };
        assert_eq!(train_local(&w0, &ds, &cfg).unwrap(), w0);
    }

    #[test]
    fn training_is_deterministic_and_learns_blobs() {
        let ds = generate_blobs(2, 500, 2, 6.0, 3).unwrap();
        let cfg = TrainConfig { local_epochs: 5, learning_rate: 1e-2, seed: 4, ..Default::default() };
        let w0 = init_model(ModelArch::lr(2, 2), 0).unwrap();
        let before = loss(&w0, &ds).unwrap();
        let one_epoch = train_local(&w0, &ds, &TrainConfig { local_epochs: 1, ..cfg.clone() }).unwrap();
        assert!(loss(&one_epoch, &ds).unwrap() < before);
        let a = train_local(&w0, &ds, &cfg).unwrap();
        let b = train_local(&w0, &ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(accuracy(&a, &ds).unwrap() >= 0.95);
    }

    #[test]
    fn mlp_learns_blobs() {
        let ds = generate_blobs(3, 100, 4, 6.0, 7).unwrap();
        let arch = ModelArch::mlp(4, 16, 3);
        let cfg = TrainConfig { local_epochs: 5, learning_rate: 1e-2, seed: 1, ..Default::default() };
        let w = train_local(&init_model(arch, 2).unwrap(), &ds, &cfg).unwrap();
        assert!(accuracy(&w, &ds).unwrap() >= 0.9);
        assert!(w.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn accuracy_tie_rule_and_memorization() {
        // Zero LR ties every class, so everything is predicted as class 0.
        let ds = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], 1, vec![0, 1, 0, 1], 2).unwrap();
        let w = ParameterVector::zeros(ModelArch::lr(1, 2));
        assert_eq!(accuracy(&w, &ds).unwrap(), 0.5);

        let one = Dataset::new(vec![1.0], 1, vec![1], 2).unwrap();
        let w = ParameterVector::new(ModelArch::lr(1, 2), vec![0.0, 5.0, 0.0, 0.0]).unwrap();
        assert_eq!(accuracy(&w, &one).unwrap(), 1.0);
    }

    #[test]
    fn extreme_inputs_keep_loss_finite() {
        let ds = Dataset::new(vec![1e6, -1e6], 2, vec![0], 2).unwrap();
        for arch in [ModelArch::lr(2, 2), ModelArch::mlp(2, 3, 2)] {
            let w = random_params(arch, 3);
            let l = loss(&w, &ds).unwrap();
            assert!(l.is_finite());
            let cfg = TrainConfig { local_epochs: 3, batch_size: 1, ..Default::default() };
            let t = train_local(&w, &ds, &cfg).unwrap();
            assert!(t.values().iter().all(|v| v.is_finite()));
        }
    }
}
