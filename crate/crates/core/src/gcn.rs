//! Two-layer GCN: `H = Â σ(Â X W0) W1`, `P = softmax(H)`, trained full-batch
//! with hand-written backpropagation.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{FedglError, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    /// d × h
    pub w0: Array2<f64>,
    /// h × C
    pub w1: Array2<f64>,
}

impl ModelWeights {
    pub fn zeros(features: usize, hidden: usize, classes: usize) -> Self {
        ModelWeights {
            w0: Array2::zeros((features, hidden)),
            w1: Array2::zeros((hidden, classes)),
        }
    }

    /// Glorot-uniform initialisation, `U(-r, r)` with `r = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(features: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let r = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-r..r))
        };
        let w0 = draw(features, hidden);
        let w1 = draw(hidden, classes);
        ModelWeights { w0, w1 }
    }

    pub fn features(&self) -> usize {
        self.w0.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w0.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w1.ncols()
    }

    pub fn same_shape(&self, other: &ModelWeights) -> bool {
        self.w0.dim() == other.w0.dim() && self.w1.dim() == other.w1.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.w0.iter().chain(self.w1.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// N × h, post-activation first layer (before dropout).
    pub hidden: Array2<f64>,
    /// N × C, pre-softmax output.
    pub embeddings: Array2<f64>,
    /// N × C, row-wise softmax of `embeddings`.
    pub probabilities: Array2<f64>,
}

/// A forward pass together with the dropout masks and intermediates the
/// matching backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: ForwardOutput,
    dropped_features: Option<CsrMatrix>,
    pre_activation: Array2<f64>,
    hidden_scale: Option<Array2<f64>>,
    hidden_dropped: Option<Array2<f64>>,
}

impl ForwardPass {
    fn layer_input<'a>(&'a self, features: &'a CsrMatrix) -> &'a CsrMatrix {
        self.dropped_features.as_ref().unwrap_or(features)
    }

    fn hidden_input(&self) -> &Array2<f64> {
        self.hidden_dropped.as_ref().unwrap_or(&self.output.hidden)
    }
}

fn check_shapes(adj: &CsrMatrix, features: &CsrMatrix, weights: &ModelWeights) -> Result<()> {
    let n = adj.nrows();
    if adj.ncols() != n || features.nrows() != n {
        return Err(FedglError::validation(format!(
            "adjacency {:?} does not match features {:?}",
            adj.shape(),
            features.shape()
        )));
    }
    if features.ncols() != weights.features() || weights.w1.nrows() != weights.hidden() {
        return Err(FedglError::validation(format!(
            "features have {} columns, weights are {:?} / {:?}",
            features.ncols(),
            weights.w0.dim(),
            weights.w1.dim()
        )));
    }
    Ok(())
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

fn drop_features<R: Rng + ?Sized>(features: &CsrMatrix, rate: f64, rng: &mut R) -> CsrMatrix {
    let scale = 1.0 / (1.0 - rate);
    let rows = (0..features.nrows())
        .map(|r| {
            let (cols, vals) = features.row(r);
            cols.iter()
                .zip(vals)
                .filter_map(|(&c, &v)| (rng.random::<f64>() >= rate).then_some((c, v * scale)))
                .collect()
        })
        .collect();
    CsrMatrix::from_sorted_rows(features.ncols(), rows)
}

/// Forward pass. With `training` set, inverted dropout is applied to the
/// input features and to the hidden activations; otherwise `rng` is unused
/// and the result is a deterministic function of the inputs.
pub fn forward<R: Rng + ?Sized>(
    adj: &CsrMatrix,
    features: &CsrMatrix,
    weights: &ModelWeights,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<ForwardPass> {
    check_shapes(adj, features, weights)?;
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(FedglError::validation(format!(
            "dropout rate {dropout_rate} outside [0, 1)"
        )));
    }
    let dropping = training && dropout_rate > 0.0;

    let dropped_features = dropping.then(|| drop_features(features, dropout_rate, rng));
    let x = dropped_features.as_ref().unwrap_or(features);
    let xw = x.matmul(&weights.w0.view());
    let pre_activation = adj.matmul(&xw.view());
    let hidden = pre_activation.mapv(|v| v.max(0.0));

    let (hidden_scale, hidden_dropped) = if dropping {
        let scale = 1.0 / (1.0 - dropout_rate);
        let mask = Array2::from_shape_simple_fn(hidden.dim(), || {
            if rng.random::<f64>() >= dropout_rate {
                scale
            } else {
                0.0
            }
        });
        let dropped = &hidden * &mask;
        (Some(mask), Some(dropped))
    } else {
        (None, None)
    };

    let hw = hidden_dropped.as_ref().unwrap_or(&hidden).dot(&weights.w1);
    let embeddings = adj.matmul(&hw.view());
    let probabilities = softmax_rows(&embeddings.view());
    if !probabilities.iter().all(|v| v.is_finite()) {
        return Err(FedglError::Numeric("non-finite probabilities in forward pass".into()));
    }
    Ok(ForwardPass {
        output: ForwardOutput {
            hidden,
            embeddings,
            probabilities,
        },
        dropped_features,
        pre_activation,
        hidden_scale,
        hidden_dropped,
    })
}

/// Evaluation-mode forward pass.
pub fn predict(adj: &CsrMatrix, features: &CsrMatrix, weights: &ModelWeights) -> Result<ForwardOutput> {
    let mut unused = <crate::rng::SimRng as rand::SeedableRng>::seed_from_u64(0);
    forward(adj, features, weights, 0.0, false, &mut unused).map(|p| p.output)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Target {
    row: usize,
    class: usize,
    weight: f64,
}

/// Weighted cross-entropy targets: one entry per supervised row.
/// A row listed twice contributes twice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Targets {
    entries: Vec<Target>,
}

fn one_hot_class(row: ndarray::ArrayView1<f64>) -> Option<usize> {
    let mut class = None;
    for (j, &v) in row.iter().enumerate() {
        if v == 1.0 && class.is_none() {
            class = Some(j);
        } else if v != 0.0 {
            return None;
        }
    }
    class
}

impl Targets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: usize, class: usize, weight: f64) {
        self.entries.push(Target { row, class, weight });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Labels on `train_mask` with weight 1, pseudo labels on `ssl_mask`
    /// with weight `alpha`. The masks must not overlap.
    pub fn from_masks(
        labels: &ArrayView2<f64>,
        train_mask: &[bool],
        pseudo_labels: &ArrayView2<f64>,
        ssl_mask: &[bool],
        alpha: f64,
    ) -> Result<Self> {
        let n = labels.nrows();
        if train_mask.len() != n || ssl_mask.len() != n || pseudo_labels.dim() != labels.dim() {
            return Err(FedglError::validation("label/mask shapes disagree"));
        }
        let mut targets = Targets::new();
        for i in 0..n {
            match (train_mask[i], ssl_mask[i]) {
                (true, true) => {
                    return Err(FedglError::validation(format!(
                        "row {i} is in both the training and pseudo-label masks"
                    )))
                }
                (true, false) => {
                    let c = one_hot_class(labels.row(i)).ok_or_else(|| {
                        FedglError::validation(format!("training row {i} is not one-hot"))
                    })?;
                    targets.push(i, c, 1.0);
                }
                (false, true) => {
                    let c = one_hot_class(pseudo_labels.row(i)).ok_or_else(|| {
                        FedglError::validation(format!("pseudo-label row {i} is not one-hot"))
                    })?;
                    targets.push(i, c, alpha);
                }
                (false, false) => {}
            }
        }
        Ok(targets)
    }

    fn check_rows(&self, n: usize, classes: usize) -> Result<()> {
        match self.entries.iter().find(|t| t.row >= n || t.class >= classes) {
            Some(t) => Err(FedglError::validation(format!(
                "target ({}, {}) outside {n}x{classes} output",
                t.row, t.class
            ))),
            None => Ok(()),
        }
    }
}

/// Summed weighted cross-entropy `-Σ w · log P[row, class]`.
pub fn target_loss(output: &ForwardOutput, targets: &Targets) -> f64 {
    targets
        .entries
        .iter()
        .map(|t| -t.weight * output.probabilities[[t.row, t.class]].max(f64::MIN_POSITIVE).ln())
        .sum()
}

/// `L_GCN + α · L_SSL`, both terms summed over their masks.
pub fn loss(
    output: &ForwardOutput,
    labels: &ArrayView2<f64>,
    train_mask: &[bool],
    pseudo_labels: &ArrayView2<f64>,
    ssl_mask: &[bool],
    alpha: f64,
) -> Result<f64> {
    let targets = Targets::from_masks(labels, train_mask, pseudo_labels, ssl_mask, alpha)?;
    targets.check_rows(output.probabilities.nrows(), output.probabilities.ncols())?;
    Ok(target_loss(output, &targets))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
}

/// Exact gradients of [`target_loss`] for the forward pass `pass`
/// (same dropout masks). Weight decay is not included.
pub fn gradients(
    adj: &CsrMatrix,
    features: &CsrMatrix,
    weights: &ModelWeights,
    pass: &ForwardPass,
    targets: &Targets,
) -> Result<Gradients> {
    check_shapes(adj, features, weights)?;
    let probs = &pass.output.probabilities;
    if probs.nrows() != adj.nrows() || probs.ncols() != weights.classes() {
        return Err(FedglError::validation("forward pass does not match inputs"));
    }
    targets.check_rows(probs.nrows(), probs.ncols())?;

    // dL/dH: w · (P - onehot) on supervised rows
    let mut d_out = Array2::<f64>::zeros(probs.dim());
    for t in &targets.entries {
        if t.weight == 0.0 {
            continue;
        }
        let mut row = d_out.row_mut(t.row);
        row.scaled_add(t.weight, &probs.row(t.row));
        row[t.class] -= t.weight;
    }

    let d_hw = adj.transpose_matmul(&d_out.view());
    let w1_grad = pass.hidden_input().t().dot(&d_hw);
    let mut d_hidden = d_hw.dot(&weights.w1.t());
    if let Some(scale) = &pass.hidden_scale {
        d_hidden *= scale;
    }
    Zip::from(&mut d_hidden)
        .and(&pass.pre_activation)
        .for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
    let d_xw = adj.transpose_matmul(&d_hidden.view());
    let w0_grad = pass.layer_input(features).transpose_matmul(&d_xw.view());
    Ok(Gradients {
        w0: w0_grad,
        w1: w1_grad,
    })
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments plus the step size and the L2 coefficient applied to `w0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m0: Array2<f64>,
    v0: Array2<f64>,
    m1: Array2<f64>,
    v1: Array2<f64>,
    steps: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(weights: &ModelWeights, learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerState {
            m0: Array2::zeros(weights.w0.dim()),
            v0: Array2::zeros(weights.w0.dim()),
            m1: Array2::zeros(weights.w1.dim()),
            v1: Array2::zeros(weights.w1.dim()),
            steps: 0,
            learning_rate,
            weight_decay,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

fn adam_update(
    w: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    decay: f64,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
        let g = if decay != 0.0 { g + decay * *w } else { g };
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    });
}

/// One bias-corrected Adam step; weight decay is added to the `w0` gradient.
pub fn step(weights: &mut ModelWeights, state: &mut OptimizerState, grads: &Gradients) -> Result<()> {
    if grads.w0.dim() != weights.w0.dim()
        || grads.w1.dim() != weights.w1.dim()
        || state.m0.dim() != weights.w0.dim()
        || state.m1.dim() != weights.w1.dim()
    {
        return Err(FedglError::validation("optimizer/gradient shapes do not match weights"));
    }
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = state.learning_rate;
    adam_update(
        &mut weights.w0,
        &mut state.m0,
        &mut state.v0,
        &grads.w0,
        state.weight_decay,
        lr,
        c1,
        c2,
    );
    adam_update(&mut weights.w1, &mut state.m1, &mut state.v1, &grads.w1, 0.0, lr, c1, c2);
    Ok(())
}

/// Fraction of masked rows whose predicted class matches the label.
pub fn accuracy(probabilities: &ArrayView2<f64>, labels: &ArrayView2<f64>, mask: &[bool]) -> Result<f64> {
    if probabilities.dim() != labels.dim() || mask.len() != labels.nrows() {
        return Err(FedglError::validation("accuracy inputs disagree in shape"));
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        total += 1;
        let predicted = argmax(probabilities.row(i).iter().copied());
        let actual = argmax(labels.row(i).iter().copied());
        if predicted == actual {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(FedglError::validation("accuracy over an empty mask"));
    }
    Ok(correct as f64 / total as f64)
}

/// Accuracy against class-index labels (unlabeled rows must not be masked).
pub fn accuracy_by_index(probabilities: &ArrayView2<f64>, labels: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (i, row) in probabilities.axis_iter(Axis(0)).enumerate() {
        if !mask[i] {
            continue;
        }
        let label = labels[i]
            .ok_or_else(|| FedglError::validation(format!("masked row {i} has no label")))?;
        total += 1;
        if argmax(row.iter().copied()) == label {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(FedglError::validation("accuracy over an empty mask"));
    }
    Ok(correct as f64 / total as f64)
}

/// Forward, loss, backward and one optimizer step. Returns the loss of the
/// forward pass that produced the gradients.
pub fn train_epoch<R: Rng + ?Sized>(
    adj: &CsrMatrix,
    features: &CsrMatrix,
    weights: &mut ModelWeights,
    optimizer: &mut OptimizerState,
    targets: &Targets,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<f64> {
    let pass = forward(adj, features, weights, dropout_rate, true, rng)?;
    let loss = target_loss(&pass.output, targets);
    if !loss.is_finite() {
        return Err(FedglError::Numeric(format!("non-finite loss {loss}")));
    }
    let grads = gradients(adj, features, weights, &pass, targets)?;
    step(weights, optimizer, &grads)?;
    Ok(loss)
}
