//! Feed-forward sigmoid network used as a speaker classifier and as a feature
//! transformer.
//!
//! Every layer maps `a -> sigmoid(W [1; a])`; the first column of each weight
//! matrix is the bias. The output layer is trained as `K` independent binary
//! logistic problems, so outputs are per-speaker likelihoods in `(0, 1)` that do
//! not sum to one.

pub mod cg;
mod eval;
mod io;
mod train;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;

pub use eval::{evaluate, frames_to_duration, frames_to_duration_with, AccuracyReport, FileResult};
pub use io::MODEL_VERSION;
pub use train::{train, StageReport, TrainConfig, TrainReport};

/// Clamp applied to every logarithm argument.
pub const LOG_EPS: f64 = 1e-12;

/// Layer widths from input to output, e.g. `[390, 200, K]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkShape(pub Vec<usize>);

impl NetworkShape {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network needs at least two non-empty layers, got {layer_sizes:?}"
            )));
        }
        Ok(NetworkShape(layer_sizes))
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.0.last().unwrap()
    }

    /// Number of layers including input and output.
    pub fn layers(&self) -> usize {
        self.0.len()
    }

    /// Weight matrix shapes `(s_{l+1}, s_l + 1)`.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.0.windows(2).map(|w| (w[1], w[0] + 1)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// Trained (or freshly initialized) classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub shape: NetworkShape,
    pub weights: Vec<Array2<f64>>,
    pub speaker_labels: Vec<String>,
    pub feature_fingerprint: String,
}

impl Model {
    /// Model with all weights zero; every output is exactly 0.5.
    pub fn zeros(shape: NetworkShape) -> Model {
        let weights = shape.weight_shapes().into_iter().map(Array2::zeros).collect();
        let labels = default_labels(shape.output_dim());
        Model {
            shape,
            weights,
            speaker_labels: labels,
            feature_fingerprint: String::new(),
        }
    }

    pub fn from_weights(weights: Vec<Array2<f64>>) -> Result<Model> {
        let first = weights
            .first()
            .ok_or_else(|| Error::InvalidConfig("no layers".into()))?;
        let mut sizes = vec![first.ncols() - 1];
        for w in &weights {
            if w.ncols() != sizes.last().unwrap() + 1 {
                return Err(Error::DimensionMismatch {
                    expected: sizes.last().unwrap() + 1,
                    found: w.ncols(),
                });
            }
            sizes.push(w.nrows());
        }
        let shape = NetworkShape::new(sizes)?;
        let labels = default_labels(shape.output_dim());
        Ok(Model {
            shape,
            weights,
            speaker_labels: labels,
            feature_fingerprint: String::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.shape.output_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
    }

    /// Weights flattened layer by layer, row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.shape.parameter_count());
        let mut offset = 0;
        for w in &mut self.weights {
            let n = w.len();
            for (dst, src) in w.iter_mut().zip(&params[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
    }

    fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.shape.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input_dim(),
                found: dim,
            });
        }
        Ok(())
    }
}

fn default_labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("spk{i:03}")).collect()
}

/// Weights drawn i.i.d. from `U(-range, range)` with a seeded ChaCha stream.
pub fn init_weights_in(shape: &NetworkShape, seed: u64, range: f64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::zeros(shape.clone());
    for w in &mut model.weights {
        for v in w.iter_mut() {
            // open interval: resample the (measure-zero) lower endpoint
            let mut x = -range;
            while x == -range {
                x = rng.random_range(-range..range);
            }
            *v = x;
        }
    }
    model
}

/// Weights drawn i.i.d. from `U(-0.1, 0.1)`.
pub fn init_weights(shape: &NetworkShape, seed: u64) -> Model {
    init_weights_in(shape, seed, 0.1)
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-layer activations of a single input.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `a^(1) = x` through `a^(L) = h`.
    pub activations: Vec<Array1<f64>>,
}

impl Forward {
    pub fn output(&self) -> &Array1<f64> {
        self.activations.last().unwrap()
    }
}

fn affine(w: &Array2<f64>, a: ArrayView1<'_, f64>) -> Array1<f64> {
    w.slice(s![.., 1..]).dot(&a) + w.column(0)
}

/// Forward pass of one input vector.
pub fn forward(model: &Model, x: ArrayView1<'_, f64>) -> Result<Forward> {
    model.check_input(x.len())?;
    let mut activations = vec![x.to_owned()];
    for w in &model.weights {
        let z = affine(w, activations.last().unwrap().view());
        activations.push(z.mapv(sigmoid));
    }
    Ok(Forward { activations })
}

/// Forward pass of a batch (rows are samples); returns every layer's activations.
fn forward_batch(weights: &[Array2<f64>], x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(weights.len() + 1);
    acts.push(x.to_owned());
    for w in weights {
        let prev = acts.last().unwrap();
        let mut z = prev.dot(&w.slice(s![.., 1..]).t());
        z += &w.column(0);
        z.mapv_inplace(sigmoid);
        acts.push(z);
    }
    acts
}

/// Network outputs `h` for every row of `x`.
pub fn predict_batch(model: &Model, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.check_input(x.ncols())?;
    Ok(forward_batch(&model.weights, x).pop().unwrap())
}

fn check_batch(model: &Model, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
    model.check_input(x.ncols())?;
    if y.ncols() != model.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            found: y.ncols(),
        });
    }
    if y.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.nrows(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::TooFewFrames { len: 0, needed: 1 });
    }
    Ok(())
}

fn clamped_ln(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS).ln()
}

/// Sum of squared non-bias weights.
pub fn penalty(model: &Model) -> f64 {
    model
        .weights
        .iter()
        .map(|w| w.slice(s![.., 1..]).iter().map(|v| v * v).sum::<f64>())
        .sum()
}

fn data_term(h: &Array2<f64>, y: ArrayView2<'_, f64>) -> f64 {
    let mut total = 0.0;
    for (hr, yr) in h.outer_iter().zip(y.outer_iter()) {
        for (&hk, &yk) in hr.iter().zip(yr.iter()) {
            total += yk * clamped_ln(hk) + (1.0 - yk) * clamped_ln(1.0 - hk);
        }
    }
    total
}

/// Regularized binary cross-entropy summed over outputs and averaged over samples.
///
/// `x` is `M x s_1`, `y` is `M x K` one-hot. Bias columns are not penalized.
pub fn cost(model: &Model, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, lambda: f64) -> Result<f64> {
    check_batch(model, x, y)?;
    let m = x.nrows() as f64;
    let h = forward_batch(&model.weights, x).pop().unwrap();
    Ok(-data_term(&h, y) / m + lambda / (2.0 * m) * penalty(model))
}

/// Cost and its exact gradient with respect to every weight matrix.
pub fn cost_and_gradient(
    model: &Model,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    check_batch(model, x, y)?;
    let m = x.nrows() as f64;
    let acts = forward_batch(&model.weights, x);
    let h = acts.last().unwrap();
    let j = -data_term(h, y) / m + lambda / (2.0 * m) * penalty(model);

    // dJ/dz at the output; terms whose log argument is clamped contribute nothing
    let mut delta = Array2::zeros(h.raw_dim());
    ndarray::Zip::from(&mut delta).and(h).and(y).for_each(|d, &hk, &yk| {
        let live_pos = hk > LOG_EPS && hk < 1.0 - LOG_EPS;
        let live_neg = (1.0 - hk) > LOG_EPS && (1.0 - hk) < 1.0 - LOG_EPS;
        let mut g = 0.0;
        if live_pos {
            g -= yk * (1.0 - hk);
        }
        if live_neg {
            g += (1.0 - yk) * hk;
        }
        *d = g;
    });

    let mut grads: Vec<Array2<f64>> = Vec::with_capacity(model.weights.len());
    for l in (0..model.weights.len()).rev() {
        let w = &model.weights[l];
        let a = &acts[l];
        let mut g = Array2::zeros(w.raw_dim());
        g.column_mut(0).assign(&(delta.sum_axis(Axis(0)) / m));
        let mut body = g.slice_mut(s![.., 1..]);
        body.assign(&(delta.t().dot(a) / m));
        body.scaled_add(lambda / m, &w.slice(s![.., 1..]));
        if l > 0 {
            let mut back = delta.dot(&w.slice(s![.., 1..]));
            ndarray::Zip::from(&mut back)
                .and(a)
                .for_each(|b, &ai| *b *= ai * (1.0 - ai));
            delta = back;
        }
        grads.push(g);
    }
    grads.reverse();
    Ok((j, grads))
}

/// Gradient of [`cost`] with respect to every weight matrix.
pub fn gradient(
    model: &Model,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<Vec<Array2<f64>>> {
    cost_and_gradient(model, x, y, lambda).map(|(_, g)| g)
}

/// Per-frame log-likelihood vectors `log h(x)`, one row per input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSequence {
    pub rows: Array2<f64>,
    pub hop_s: f64,
    pub win_s: f64,
}

impl LikelihoodSequence {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Maps each frame to the clamped log of the network output.
pub fn transform(model: &Model, seq: &FeatureSequence) -> Result<LikelihoodSequence> {
    let h = predict_batch(model, seq.frames.view())?;
    Ok(LikelihoodSequence {
        rows: h.mapv(|p| p.clamp(LOG_EPS, 1.0 - LOG_EPS).ln()),
        hop_s: seq.hop_s,
        win_s: seq.win_s,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Speaker index maximizing the summed log-likelihood of the first `m` frames.
pub fn predict_from_loglik(loglik: &Array2<f64>, m: usize) -> Result<usize> {
    if m == 0 || loglik.nrows() < m {
        return Err(Error::TooFewFrames {
            len: loglik.nrows(),
            needed: m.max(1),
        });
    }
    let sums = loglik.slice(s![..m, ..]).sum_axis(Axis(0));
    Ok(argmax(sums.view()))
}

/// Speaker index predicted from the first `m` frames (0-based).
pub fn predict_speaker(model: &Model, frames: &FeatureSequence, m: usize) -> Result<usize> {
    if m == 0 || frames.len() < m {
        return Err(Error::TooFewFrames {
            len: frames.len(),
            needed: m.max(1),
        });
    }
    let head = FeatureSequence::new(frames.frames.slice(s![..m, ..]).to_owned(), frames.hop_s, frames.win_s);
    predict_from_loglik(&transform(model, &head)?.rows, m)
}

/// One-hot target matrix for class indices.
pub fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), k));
    for (r, &c) in labels.iter().enumerate() {
        y[[r, c]] = 1.0;
    }
    y
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn shape(v: &[usize]) -> NetworkShape {
        NetworkShape::new(v.to_vec()).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let s = shape(&[390, 200, 200]);
        assert_eq!(s.parameter_count(), 118_400);
        let a = init_weights(&s, 42);
        let b = init_weights(&s, 42);
        assert_eq!(a, b);
        assert!(a.weights.iter().flat_map(|w| w.iter()).all(|v| v.abs() < 0.1));
        assert_ne!(a, init_weights(&s, 43));
        assert_eq!(a.weights[0].dim(), (200, 391));
        assert_eq!(a.weights[1].dim(), (200, 201));
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = Model::zeros(shape(&[5, 4, 3]));
        let f = forward(&m, array![1.0, -2.0, 3.0, 0.5, 9.0].view()).unwrap();
        assert!(f.output().iter().all(|&h| h == 0.5));
        assert_eq!(f.activations.len(), 3);
        assert!(matches!(
            forward(&m, array![1.0].view()),
            Err(Error::DimensionMismatch { expected: 5, found: 1 })
        ));
    }

    #[test]
    fn bias_only_forward() {
        // 2-2-2 network with biases only
        let mut m = Model::zeros(shape(&[2, 2, 2]));
        m.weights[0].column_mut(0).assign(&array![0.3, -1.2]);
        m.weights[1] = array![[0.5, 2.0, -1.0], [-0.25, 0.0, 3.0]];
        let a2 = [sigmoid(0.3), sigmoid(-1.2)];
        let want = [sigmoid(0.5 + 2.0 * a2[0] - a2[1]), sigmoid(-0.25 + 3.0 * a2[1])];
        let f = forward(&m, array![7.0, -3.0].view()).unwrap();
        for k in 0..2 {
            assert!((f.output()[k] - want[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_saturates_cleanly() {
        assert!((sigmoid(50.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-50.0).abs() < 1e-12);
        assert!(sigmoid(-1000.0).is_finite() && sigmoid(1000.0).is_finite());
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn zero_model_cost_is_k_ln2() {
        let m = Model::zeros(shape(&[3, 4, 200]));
        let x = Array2::from_shape_fn((7, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let y = one_hot(&[0, 5, 10, 199, 3, 3, 100], 200);
        let j = cost(&m, x.view(), y.view(), 0.0).unwrap();
        assert!((j - 200.0 * 2f64.ln()).abs() < 1e-9);
        let jl = cost(&m, x.view(), y.view(), 5.0).unwrap();
        assert_eq!(j, jl);
    }

    #[test]
    fn lambda_shift_in_gradient_is_linear() {
        let m = init_weights(&shape(&[4, 3, 3]), 5);
        let x = Array2::from_shape_fn((6, 4), |(i, j)| ((i + 2 * j) as f64).sin());
        let y = one_hot(&[0, 1, 2, 0, 1, 2], 3);
        let g0 = gradient(&m, x.view(), y.view(), 0.5).unwrap();
        let g1 = gradient(&m, x.view(), y.view(), 2.0).unwrap();
        for (l, w) in m.weights.iter().enumerate() {
            for ((r, c), &theta) in w.indexed_iter() {
                let diff = g1[l][[r, c]] - g0[l][[r, c]];
                let want = if c == 0 { 0.0 } else { 1.5 * theta / 6.0 };
                assert!((diff - want).abs() < 1e-15, "layer {l} ({r},{c})");
            }
        }
    }

    #[test]
    fn transform_of_zero_model() {
        let m = Model::zeros(shape(&[3, 2, 4]));
        let seq = FeatureSequence::new(Array2::ones((5, 3)), 0.03, 0.1);
        let d = transform(&m, &seq).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.rows.iter().all(|&v| (v - 0.5f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn transform_never_hits_negative_infinity() {
        let mut m = Model::zeros(shape(&[1, 1, 2]));
        m.weights[1][[0, 0]] = -1e6;
        m.weights[1][[1, 0]] = 1e6;
        let seq = FeatureSequence::new(Array2::zeros((2, 1)), 0.03, 0.1);
        let d = transform(&m, &seq).unwrap();
        assert!(d.rows.iter().all(|v| v.is_finite() && *v <= 0.0));
        assert!((d.rows[[0, 0]] - LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn argmax_examples() {
        let mut row = Array1::from_elem(10, -3.0);
        row[7] = -0.1;
        assert_eq!(argmax(row.view()), 7);
        // frame 1 favors class 2, frame 2 favors class 5 more strongly
        let ll = array![
            [-3.0, -3.0, -0.5, -3.0, -3.0, -2.0],
            [-3.0, -3.0, -2.5, -3.0, -3.0, -0.2]
        ];
        assert_eq!(predict_from_loglik(&ll, 1).unwrap(), 2);
        assert_eq!(predict_from_loglik(&ll, 2).unwrap(), 5);
        assert_eq!(predict_from_loglik(&Array2::from_elem((3, 4), -0.7), 3).unwrap(), 0);
        assert!(matches!(
            predict_from_loglik(&ll, 3),
            Err(Error::TooFewFrames { len: 2, needed: 3 })
        ));
    }
}
