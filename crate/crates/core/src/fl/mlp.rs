//! Fully connected classifier over a flat parameter vector.
//!
//! One hidden layer with logistic-sigmoid activation and a softmax output
//! trained with cross-entropy; a zero hidden width degenerates to plain
//! softmax regression. Parameters live in a single flat vector laid out as
//! `[W1 (hidden x input, row major), b1, W2 (output x hidden), b2]` so the
//! whole model can be quantized and aggregated as one weight differential.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    /// Hidden width; 0 means a linear softmax model.
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl MlpShape {
    /// The reference architecture: 784-30-10.
    pub fn mnist() -> Self {
        Self {
            input_dim: 784,
            hidden_dim: 30,
            output_dim: 10,
        }
    }

    /// Flat parameter count: weights plus biases of both layers.
    pub fn param_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim * self.output_dim + self.output_dim
        } else {
            self.input_dim * self.hidden_dim
                + self.hidden_dim
                + self.hidden_dim * self.output_dim
                + self.output_dim
        }
    }
}

/// Splits the flat vector into the layer views. For the linear model the
/// first two segments are empty.
fn split(shape: &MlpShape, w: &[f64]) -> (usize, usize, usize) {
    debug_assert_eq!(w.len(), shape.param_count(), "parameter length mismatch");
    if shape.hidden_dim == 0 {
        (0, 0, 0)
    } else {
        let w1 = shape.input_dim * shape.hidden_dim;
        let b1 = w1 + shape.hidden_dim;
        let w2 = b1 + shape.hidden_dim * shape.output_dim;
        (w1, b1, w2)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable softmax in place; returns the log-sum-exp for the
/// cross-entropy.
fn softmax_inplace(logits: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
    max + sum.ln()
}

/// Class probabilities for one sample.
pub fn predict(shape: &MlpShape, w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut probs = vec![0.0; shape.output_dim];
    forward(shape, w, x, &mut probs, None);
    probs
}

/// Forward pass; when `hidden_out` is given, stores the hidden activations
/// for reuse by the backward pass. Returns the log-sum-exp shift of the
/// softmax.
fn forward(
    shape: &MlpShape,
    w: &[f64],
    x: &[f64],
    probs: &mut [f64],
    hidden_out: Option<&mut [f64]>,
) -> f64 {
    let (w1_end, b1_end, w2_end) = split(shape, w);
    if shape.hidden_dim == 0 {
        let weights = &w[..shape.input_dim * shape.output_dim];
        let bias = &w[shape.input_dim * shape.output_dim..];
        for o in 0..shape.output_dim {
            let row = &weights[o * shape.input_dim..(o + 1) * shape.input_dim];
            probs[o] = bias[o] + dot(row, x);
        }
    } else {
        let mut hidden = vec![0.0; shape.hidden_dim];
        for h in 0..shape.hidden_dim {
            let row = &w[h * shape.input_dim..(h + 1) * shape.input_dim];
            hidden[h] = sigmoid(w[w1_end + h] + dot(row, x));
        }
        let w2 = &w[b1_end..w2_end];
        let b2 = &w[w2_end..];
        for o in 0..shape.output_dim {
            let row = &w2[o * shape.hidden_dim..(o + 1) * shape.hidden_dim];
            probs[o] = b2[o] + dot(row, &hidden);
        }
        if let Some(out) = hidden_out {
            out.copy_from_slice(&hidden);
        }
    }
    softmax_inplace(probs)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean cross-entropy and its gradient over a batch, accumulated into a
/// flat gradient vector of the same layout as the parameters.
pub fn loss_and_gradient(
    shape: &MlpShape,
    w: &[f64],
    batch: &[(&[f64], u8)],
) -> (f64, Vec<f64>) {
    let (w1_end, b1_end, w2_end) = split(shape, w);
    let mut grad = vec![0.0; w.len()];
    let mut probs = vec![0.0; shape.output_dim];
    let mut hidden = vec![0.0; shape.hidden_dim.max(1)];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for &(x, y) in batch {
        let y = y as usize;
        if shape.hidden_dim == 0 {
            forward(shape, w, x, &mut probs, None);
            loss -= probs[y].max(1e-300).ln();
            let bias_off = shape.input_dim * shape.output_dim;
            for o in 0..shape.output_dim {
                let dz = (probs[o] - if o == y { 1.0 } else { 0.0 }) * scale;
                let row = &mut grad[o * shape.input_dim..(o + 1) * shape.input_dim];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += dz * xi;
                }
                grad[bias_off + o] += dz;
            }
        } else {
            forward(shape, w, x, &mut probs, Some(&mut hidden[..shape.hidden_dim]));
            loss -= probs[y].max(1e-300).ln();
            let w2 = &w[b1_end..w2_end];
            // output layer
            let mut d_hidden = vec![0.0; shape.hidden_dim];
            for o in 0..shape.output_dim {
                let dz = (probs[o] - if o == y { 1.0 } else { 0.0 }) * scale;
                let row = &w2[o * shape.hidden_dim..(o + 1) * shape.hidden_dim];
                let g_row = &mut grad[b1_end + o * shape.hidden_dim..b1_end + (o + 1) * shape.hidden_dim];
                for h in 0..shape.hidden_dim {
                    g_row[h] += dz * hidden[h];
                    d_hidden[h] += dz * row[h];
                }
                grad[w2_end + o] += dz;
            }
            // hidden layer through the sigmoid
            for h in 0..shape.hidden_dim {
                let a = hidden[h];
                let dz1 = d_hidden[h] * a * (1.0 - a);
                let g_row = &mut grad[h * shape.input_dim..(h + 1) * shape.input_dim];
                for (g, &xi) in g_row.iter_mut().zip(x) {
                    *g += dz1 * xi;
                }
                grad[w1_end + h] += dz1;
            }
        }
    }
    (loss * scale, grad)
}

/// Mean cross-entropy and top-1 accuracy over a labelled set.
pub fn evaluate_batch(shape: &MlpShape, w: &[f64], samples: &[(&[f64], u8)]) -> (f64, f64) {
    let mut probs = vec![0.0; shape.output_dim];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for &(x, y) in samples {
        forward(shape, w, x, &mut probs, None);
        loss -= probs[y as usize].max(1e-300).ln();
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if argmax == y as usize {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    (loss / n, correct as f64 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_counts() {
        assert_eq!(MlpShape::mnist().param_count(), 23_860);
        let lin = MlpShape {
            input_dim: 2,
            hidden_dim: 0,
            output_dim: 2,
        };
        assert_eq!(lin.param_count(), 6);
    }

    #[test]
    fn linear_softmax_gradient_matches_hand_computation() {
        // two classes, two features, one sample: the cross-entropy gradient
        // of softmax regression is (p - onehot(y)) (x, 1)
        let shape = MlpShape {
            input_dim: 2,
            hidden_dim: 0,
            output_dim: 2,
        };
        let w = vec![0.3, -0.2, 0.1, 0.4, 0.05, -0.05];
        let x = [1.5, -0.7];
        let y = 0u8;

        let z0: f64 = 0.3 * 1.5 + (-0.2) * (-0.7) + 0.05;
        let z1: f64 = 0.1 * 1.5 + 0.4 * (-0.7) + (-0.05);
        let e0 = z0.exp();
        let e1 = z1.exp();
        let p0 = e0 / (e0 + e1);
        let p1 = e1 / (e0 + e1);
        let expected = vec![
            (p0 - 1.0) * 1.5,
            (p0 - 1.0) * (-0.7),
            p1 * 1.5,
            p1 * (-0.7),
            p0 - 1.0,
            p1,
        ];
        let expected_loss = -p0.ln();

        let (loss, grad) = loss_and_gradient(&shape, &w, &[(&x, y)]);
        assert!((loss - expected_loss).abs() < 1e-12);
        for (g, e) in grad.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let shape = MlpShape {
            input_dim: 9,
            hidden_dim: 5,
            output_dim: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..shape.param_count())
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch: Vec<(&[f64], u8)> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x.as_slice(), (i % 4) as u8))
            .collect();

        let (_, grad) = loss_and_gradient(&shape, &w, &batch);
        let h = 1e-5;
        for _ in 0..20 {
            let i = rng.gen_range(0..w.len());
            let mut wp = w.clone();
            wp[i] += h;
            let (lp, _) = loss_and_gradient(&shape, &wp, &batch);
            wp[i] -= 2.0 * h;
            let (lm, _) = loss_and_gradient(&shape, &wp, &batch);
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (fd - grad[i]).abs() / denom <= 1e-4,
                "coordinate {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn perfect_model_reaches_full_accuracy() {
        // weights that push the true class logit far above the rest
        let shape = MlpShape {
            input_dim: 3,
            hidden_dim: 0,
            output_dim: 3,
        };
        let mut w = vec![0.0; shape.param_count()];
        for c in 0..3 {
            w[c * 3 + c] = 50.0;
        }
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|c| (0..3).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
            .collect();
        let samples: Vec<(&[f64], u8)> = xs.iter().enumerate().map(|(c, x)| (x.as_slice(), c as u8)).collect();
        let (_, acc) = evaluate_batch(&shape, &w, &samples);
        assert_eq!(acc, 1.0);
    }
}
