//! Small differentiable classifiers with flat parameter storage.
//!
//! Parameters live in one contiguous `Vec<f64>`. Weight matrices are stored
//! row-major with shape `fan_in x fan_out`, each followed by its bias vector:
//!
//! * logistic: `W (d x M) | b (M)`
//! * mlp:      `W1 (d x H) | b1 (H) | W2 (H x M) | b2 (M)`
//!
//! The final `fan_in x M` block is the classification head. Its column `j`
//! holds the weights feeding the logit of class `j`.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Multinomial logistic regression; the embedding is the raw input.
    Logistic,
    /// One ReLU hidden layer of width `hidden`, then a linear head.
    Mlp { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

/// Offsets of each block inside a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    /// `(weights, bias)` offsets of the hidden layer, when present.
    pub hidden: Option<(usize, usize)>,
    pub head_weights: usize,
    pub head_bias: usize,
    pub len: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Logistic, input_dim, num_classes)
    }

    pub fn mlp(input_dim: usize, hidden: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp { hidden }, input_dim, num_classes)
    }

    pub fn new(kind: ModelKind, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::input("input dimension must be at least 1"));
        }
        if num_classes < 2 {
            return Err(Error::input("a classifier needs at least 2 classes"));
        }
        if let ModelKind::Mlp { hidden: 0 } = kind {
            return Err(Error::input("hidden width must be at least 1"));
        }
        Ok(Self {
            kind,
            input_dim,
            num_classes,
        })
    }

    /// Width `P` of the embedding that feeds the classification head.
    pub fn feature_dim(&self) -> usize {
        match self.kind {
            ModelKind::Logistic => self.input_dim,
            ModelKind::Mlp { hidden } => hidden,
        }
    }

    pub fn layout(&self) -> Layout {
        let m = self.num_classes;
        match self.kind {
            ModelKind::Logistic => {
                let d = self.input_dim;
                Layout {
                    hidden: None,
                    head_weights: 0,
                    head_bias: d * m,
                    len: d * m + m,
                }
            }
            ModelKind::Mlp { hidden } => {
                let d = self.input_dim;
                let w1 = 0;
                let b1 = d * hidden;
                let w2 = b1 + hidden;
                let b2 = w2 + hidden * m;
                Layout {
                    hidden: Some((w1, b1)),
                    head_weights: w2,
                    head_bias: b2,
                    len: b2 + m,
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Flat model parameters tagged with the spec that gives them a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    spec: ModelSpec,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn from_values(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::shape(format!(
                "spec expects {} parameters, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("parameters must be finite"));
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
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

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::shape(format!(
                "parameter layouts differ: {:?} vs {:?}",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector {
            spec: self.spec,
            values,
        })
    }

    /// `self + other`, elementwise.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ParamVector {
            spec: self.spec,
            values,
        })
    }

    pub fn scaled(&self, c: f64) -> ParamVector {
        ParamVector {
            spec: self.spec,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

/// Weights of the classification head, bias excluded, as `M` columns of
/// length `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct LastLayerMatrix {
    feature_dim: usize,
    num_classes: usize,
    /// Column-major: column `j` occupies `[j*P, (j+1)*P)`.
    data: Vec<f64>,
}

impl LastLayerMatrix {
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let p = columns.first().map_or(0, Vec::len);
        if columns.is_empty() || p == 0 {
            return Err(Error::shape("last-layer matrix needs non-empty columns"));
        }
        let mut data = Vec::with_capacity(p * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != p {
                return Err(Error::shape(format!(
                    "column {j} has length {}, expected {p}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Self {
            feature_dim: p,
            num_classes: columns.len(),
            data,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.feature_dim..(j + 1) * self.feature_dim]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.feature_dim)
    }
}

/// A labelled mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::input("batch must contain at least one sample"));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights and zero biases.
pub fn init_params(spec: ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng::rng_from(seed);
    let layout = spec.layout();
    let mut params = ParamVector::zeros(spec);
    let mut fill = |values: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for v in values {
            *v = dist.sample(&mut rng);
        }
    };
    let values = params.values_mut();
    let m = spec.num_classes;
    if let (Some((w1, b1)), ModelKind::Mlp { .. }) = (layout.hidden, spec.kind) {
        fill(&mut values[w1..b1], spec.input_dim);
    }
    let p = spec.feature_dim();
    fill(&mut values[layout.head_weights..layout.head_weights + p * m], p);
    params
}

fn check_params(params: &ParamVector, spec: &ModelSpec) -> Result<()> {
    if params.spec() != spec {
        return Err(Error::shape(format!(
            "parameters built for {:?}, used with {:?}",
            params.spec(),
            spec
        )));
    }
    Ok(())
}

/// `out[b, j] = bias[j] + sum_k input[b, k] * weights[k, j]`
fn affine(input: &Matrix, weights: &[f64], bias: &[f64]) -> Matrix {
    let fan_in = input.cols();
    let fan_out = bias.len();
    let mut out = Matrix::zeros(input.rows(), fan_out);
    for b in 0..input.rows() {
        let x = input.row(b);
        let o = &mut out.data[b * fan_out..(b + 1) * fan_out];
        o.copy_from_slice(bias);
        for k in 0..fan_in {
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            let w = &weights[k * fan_out..(k + 1) * fan_out];
            for (oj, wj) in o.iter_mut().zip(w) {
                *oj += xk * wj;
            }
        }
    }
    out
}

struct Activations {
    /// Hidden pre-activations (mlp only).
    pre: Option<Matrix>,
    /// Input to the head.
    embedding: Matrix,
    logits: Matrix,
}

fn forward_full(params: &ParamVector, features: &Matrix) -> Activations {
    let spec = params.spec();
    let layout = spec.layout();
    let v = params.values();
    let m = spec.num_classes;
    let (pre, embedding) = match (spec.kind, layout.hidden) {
        (ModelKind::Mlp { hidden }, Some((w1, b1))) => {
            let pre = affine(features, &v[w1..b1], &v[b1..b1 + hidden]);
            let mut h = pre.clone();
            for x in &mut h.data {
                *x = x.max(0.0);
            }
            (Some(pre), h)
        }
        _ => (None, features.clone()),
    };
    let logits = affine(
        &embedding,
        &v[layout.head_weights..layout.head_bias],
        &v[layout.head_bias..layout.head_bias + m],
    );
    Activations {
        pre,
        embedding,
        logits,
    }
}

/// Logits for every row of `features`.
pub fn forward(params: &ParamVector, spec: &ModelSpec, features: &Matrix) -> Result<Matrix> {
    check_params(params, spec)?;
    if features.cols() != spec.input_dim {
        return Err(Error::shape(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            spec.input_dim
        )));
    }
    let logits = forward_full(params, features).logits;
    if logits.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("forward pass produced non-finite logits"));
    }
    Ok(logits)
}

/// Mean softmax cross-entropy over the batch and its gradient.
pub fn loss_and_grad(params: &ParamVector, spec: &ModelSpec, batch: &Batch) -> Result<(f64, ParamVector)> {
    check_params(params, spec)?;
    if batch.features.cols() != spec.input_dim {
        return Err(Error::shape(format!(
            "batch has {} feature columns, model expects {}",
            batch.features.cols(),
            spec.input_dim
        )));
    }
    let m = spec.num_classes;
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= m) {
        return Err(Error::input(format!("label {bad} out of range for {m} classes")));
    }

    let acts = forward_full(params, &batch.features);
    let n = batch.len();
    let inv_n = 1.0 / n as f64;

    // dz = (softmax(z) - onehot(y)) / B, stored in place of the logits.
    let mut dz = acts.logits;
    let mut loss = 0.0;
    for (b, &y) in batch.labels.iter().enumerate() {
        let z = &mut dz.data[b * m..(b + 1) * m];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted_target = z[y] - max;
        let mut sum = 0.0;
        for zj in z.iter_mut() {
            *zj = (*zj - max).exp();
            sum += *zj;
        }
        loss += sum.ln() - shifted_target;
        for zj in z.iter_mut() {
            *zj /= sum;
        }
        z[y] -= 1.0;
        for zj in z.iter_mut() {
            *zj *= inv_n;
        }
    }
    loss *= inv_n;

    let layout = spec.layout();
    let p = spec.feature_dim();
    let mut grad = ParamVector::zeros(*spec);
    let g = grad.values_mut();
    let w2 = params.values();

    // Head gradients.
    for b in 0..n {
        let h = acts.embedding.row(b);
        let d = dz.row(b);
        for k in 0..p {
            let hk = h[k];
            if hk == 0.0 {
                continue;
            }
            let row = &mut g[layout.head_weights + k * m..layout.head_weights + (k + 1) * m];
            for (gj, dj) in row.iter_mut().zip(d) {
                *gj += hk * dj;
            }
        }
        for (gj, dj) in g[layout.head_bias..layout.head_bias + m].iter_mut().zip(d) {
            *gj += dj;
        }
    }

    if let (Some(pre), Some((w1, b1))) = (&acts.pre, layout.hidden) {
        let d_in = spec.input_dim;
        let head = &w2[layout.head_weights..layout.head_bias];
        for b in 0..n {
            let d = dz.row(b);
            let a = pre.row(b);
            let x = batch.features.row(b);
            for k in 0..p {
                if a[k] <= 0.0 {
                    continue;
                }
                let w = &head[k * m..(k + 1) * m];
                let da: f64 = w.iter().zip(d).map(|(wj, dj)| wj * dj).sum();
                for (i, xi) in x.iter().enumerate().take(d_in) {
                    g[w1 + i * p + k] += xi * da;
                }
                g[b1 + k] += da;
            }
        }
    }

    if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("loss or gradient is non-finite"));
    }
    Ok((loss, grad))
}

/// `params - eta * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    params.check_same_layout(grad)?;
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::input(format!(
            "learning rate must be finite and non-negative, got {eta}"
        )));
    }
    let values: Vec<f64> = params
        .values()
        .iter()
        .zip(grad.values())
        .map(|(w, g)| w - eta * g)
        .collect();
    ParamVector::from_values(*params.spec(), values)
}

pub fn extract_last_layer(params: &ParamVector, spec: &ModelSpec) -> Result<LastLayerMatrix> {
    check_params(params, spec)?;
    let layout = spec.layout();
    let p = spec.feature_dim();
    let m = spec.num_classes;
    let head = &params.values()[layout.head_weights..layout.head_bias];
    let mut data = Vec::with_capacity(p * m);
    for j in 0..m {
        data.extend((0..p).map(|k| head[k * m + j]));
    }
    Ok(LastLayerMatrix {
        feature_dim: p,
        num_classes: m,
        data,
    })
}

/// Inverse of [`extract_last_layer`]: copies `head` into the head block.
pub fn write_last_layer(
    params: &ParamVector,
    spec: &ModelSpec,
    head: &LastLayerMatrix,
) -> Result<ParamVector> {
    check_params(params, spec)?;
    let p = spec.feature_dim();
    let m = spec.num_classes;
    if head.feature_dim != p || head.num_classes != m {
        return Err(Error::shape(format!(
            "head is {}x{}, model expects {p}x{m}",
            head.feature_dim, head.num_classes
        )));
    }
    let layout = spec.layout();
    let mut out = params.clone();
    let w = &mut out.values_mut()[layout.head_weights..layout.head_bias];
    for j in 0..m {
        for k in 0..p {
            w[k * m + j] = head.data[j * p + k];
        }
    }
    Ok(out)
}

/// `sum_i weights[i] * items[i]`, accumulated in index order starting from
/// zero. Every averaging path in the crate goes through here so that equal
/// weights give bitwise-equal results.
pub fn weighted_sum(items: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if items.len() != weights.len() {
        return Err(Error::shape(format!(
            "{} parameter vectors but {} weights",
            items.len(),
            weights.len()
        )));
    }
    let first = items
        .first()
        .ok_or_else(|| Error::input("cannot combine zero parameter vectors"))?;
    let mut out = ParamVector::zeros(*first.spec());
    for (item, &w) in items.iter().zip(weights) {
        out.check_same_layout(item)?;
        for (o, v) in out.values.iter_mut().zip(&item.values) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Draws `count` standard normal values; shared by tests and the noise
/// injector.
pub(crate) fn gaussian_values(rng: &mut rng::Rng, count: usize, std: f64) -> Vec<f64> {
    (0..count)
        .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::rng_from(seed);
        Matrix::new(rows, cols, gaussian_values(&mut r, rows * cols, 1.0)).unwrap()
    }

    fn random_params(spec: ModelSpec, seed: u64) -> ParamVector {
        let mut r = rng::rng_from(seed);
        ParamVector::from_values(spec, gaussian_values(&mut r, spec.param_count(), 0.5)).unwrap()
    }

    /// Triple-loop reference for the forward pass.
    fn naive_forward(params: &ParamVector, x: &Matrix) -> Vec<Vec<f64>> {
        let spec = params.spec();
        let v = params.values();
        let layout = spec.layout();
        let m = spec.num_classes;
        let mut out = Vec::new();
        for b in 0..x.rows() {
            let emb: Vec<f64> = match (spec.kind, layout.hidden) {
                (ModelKind::Mlp { hidden }, Some((w1, b1))) => (0..hidden)
                    .map(|k| {
                        let mut s = v[b1 + k];
                        for i in 0..spec.input_dim {
                            s += x.get(b, i) * v[w1 + i * hidden + k];
                        }
                        s.max(0.0)
                    })
                    .collect(),
                _ => x.row(b).to_vec(),
            };
            let row = (0..m)
                .map(|j| {
                    let mut s = v[layout.head_bias + j];
                    for (k, e) in emb.iter().enumerate() {
                        s += e * v[layout.head_weights + k * m + j];
                    }
                    s
                })
                .collect();
            out.push(row);
        }
        out
    }

    #[test]
    fn param_counts() {
        let l = ModelSpec::logistic(2, 2).unwrap();
        assert_eq!(init_params(l, 7).len(), 6);
        let m = ModelSpec::mlp(3, 4, 2).unwrap();
        assert_eq!(init_params(m, 0).len(), 26);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = ModelSpec::mlp(9, 4, 3).unwrap();
        let a = init_params(spec, 7);
        assert_eq!(a, init_params(spec, 7));
        assert_ne!(a, init_params(spec, 8));
        let layout = spec.layout();
        let (w1, b1) = layout.hidden.unwrap();
        assert!(a.values()[w1..b1].iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert!(a.values()[b1..b1 + 4].iter().all(|&v| v == 0.0));
        assert!(a.values()[layout.head_bias..].iter().all(|&v| v == 0.0));
        assert!(a.values()[layout.head_weights..layout.head_bias]
            .iter()
            .all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::logistic(0, 2).is_err());
        assert!(ModelSpec::logistic(2, 1).is_err());
        assert!(ModelSpec::mlp(2, 0, 2).is_err());
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = ModelSpec::mlp(3, 5, 4).unwrap();
        let x = random_matrix(6, 3, 1);
        let z = forward(&ParamVector::zeros(spec), &spec, &x).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let spec = ModelSpec::logistic(3, 3).unwrap();
        let mut v = vec![0.0; spec.param_count()];
        for i in 0..3 {
            v[i * 3 + i] = 1.0;
        }
        let params = ParamVector::from_values(spec, v).unwrap();
        let x = Matrix::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(forward(&params, &spec, &x).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_matches_naive_matmul() {
        for (i, spec) in [
            ModelSpec::logistic(4, 3).unwrap(),
            ModelSpec::mlp(5, 6, 3).unwrap(),
        ]
        .into_iter()
        .enumerate()
        {
            let params = random_params(spec, 10 + i as u64);
            let x = random_matrix(7, spec.input_dim, 20 + i as u64);
            let z = forward(&params, &spec, &x).unwrap();
            let expected = naive_forward(&params, &x);
            for b in 0..7 {
                for j in 0..3 {
                    assert!((z.get(b, j) - expected[b][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let spec = ModelSpec::logistic(4, 3).unwrap();
        let other = ModelSpec::logistic(3, 3).unwrap();
        let x = random_matrix(2, 3, 0);
        assert!(matches!(
            forward(&ParamVector::zeros(spec), &spec, &x),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward(&ParamVector::zeros(other), &spec, &random_matrix(2, 4, 0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn logistic_logits_scale_with_head() {
        let spec = ModelSpec::logistic(4, 3).unwrap();
        let mut params = random_params(spec, 3);
        let layout = spec.layout();
        for v in &mut params.values_mut()[layout.head_bias..] {
            *v = 0.0;
        }
        let x = random_matrix(5, 4, 4);
        let z = forward(&params, &spec, &x).unwrap();
        let z3 = forward(&params.scaled(3.0), &spec, &x).unwrap();
        for (a, b) in z.as_slice().iter().zip(z3.as_slice()) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_params_loss_is_log_m() {
        for m in 2..6 {
            let spec = ModelSpec::mlp(3, 4, m).unwrap();
            let x = random_matrix(2 * m, 3, m as u64);
            let labels = (0..2 * m).map(|i| i % m).collect();
            let batch = Batch::new(x, labels).unwrap();
            let (loss, _) = loss_and_grad(&ParamVector::zeros(spec), &spec, &batch).unwrap();
            assert!((loss - (m as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_gives_same_loss_and_grad() {
        let spec = ModelSpec::mlp(3, 4, 3).unwrap();
        let params = random_params(spec, 5);
        let x = random_matrix(4, 3, 6);
        let labels = vec![0, 1, 2, 1];
        let single = Batch::new(x.clone(), labels.clone()).unwrap();
        let doubled = Batch::new(
            x.select_rows(&[0, 1, 2, 3, 0, 1, 2, 3]),
            labels.iter().chain(&labels).copied().collect(),
        )
        .unwrap();
        let (l1, g1) = loss_and_grad(&params, &spec, &single).unwrap();
        let (l2, g2) = loss_and_grad(&params, &spec, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let spec = ModelSpec::logistic(2, 2).unwrap();
        let batch = Batch::new(random_matrix(1, 2, 0), vec![2]).unwrap();
        assert!(matches!(
            loss_and_grad(&ParamVector::zeros(spec), &spec, &batch),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn sgd_step_arithmetic() {
        let spec = ModelSpec::logistic(1, 2).unwrap();
        // 1x2 weights + 2 biases = 4 parameters.
        let w = ParamVector::from_values(spec, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = ParamVector::from_values(spec, vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(sgd_step(&w, &g, 0.5).unwrap().values(), &[0.5, 0.0, 0.0, 0.0]);
        assert_eq!(sgd_step(&w, &ParamVector::zeros(spec), 3.0).unwrap(), w);
        let other = ParamVector::zeros(ModelSpec::logistic(2, 2).unwrap());
        assert!(matches!(sgd_step(&w, &other, 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn sgd_on_quadratic_descends_monotonically() {
        // f(w) = a/2 (w - c)^2 has curvature a; any eta < 2/a decreases f.
        let (a, c) = (4.0, 3.0);
        let spec = ModelSpec::logistic(1, 2).unwrap();
        let f = |w: f64| 0.5 * a * (w - c) * (w - c);
        let mut w = ParamVector::zeros(spec);
        let mut prev = f(0.0);
        for _ in 0..50 {
            let x = w.values()[0];
            let mut g = vec![0.0; 4];
            g[0] = a * (x - c);
            let g = ParamVector::from_values(spec, g).unwrap();
            w = sgd_step(&w, &g, 0.4).unwrap();
            let cur = f(w.values()[0]);
            assert!(cur < prev || cur == 0.0);
            prev = cur;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn last_layer_layout() {
        let spec = ModelSpec::logistic(2, 3).unwrap();
        let params = ParamVector::from_values(spec, (0..9).map(f64::from).collect()).unwrap();
        let head = extract_last_layer(&params, &spec).unwrap();
        assert_eq!(head.num_classes(), 3);
        assert_eq!(head.column(0), &[0.0, 3.0]);
        assert_eq!(head.column(1), &[1.0, 4.0]);
        assert_eq!(head.column(2), &[2.0, 5.0]);

        let mlp = ModelSpec::mlp(5, 4, 2).unwrap();
        let head = extract_last_layer(&random_params(mlp, 1), &mlp).unwrap();
        assert_eq!(head.feature_dim(), 4);
        assert!(head.columns().all(|c| c.len() == 4));
    }

    #[test]
    fn last_layer_round_trip_is_exact() {
        let spec = ModelSpec::mlp(5, 4, 3).unwrap();
        let params = random_params(spec, 2);
        let head = extract_last_layer(&params, &spec).unwrap();
        assert_eq!(write_last_layer(&params, &spec, &head).unwrap(), params);

        let replaced = LastLayerMatrix::from_columns(&vec![vec![1.0; 4]; 3]).unwrap();
        let written = write_last_layer(&params, &spec, &replaced).unwrap();
        assert_eq!(extract_last_layer(&written, &spec).unwrap(), replaced);
    }
}
