//! Exact t-SNE for desk-scale feature sets.
//!
//! The usual recipe: per-row precision found by binary search so every
//! conditional distribution hits the requested perplexity, symmetrized
//! affinities, early exaggeration, and momentum descent with per-coordinate
//! gain adaptation. Everything is seeded and single-threaded, so the same
//! input and seed give the same embedding.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EARLY_EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const INITIAL_MOMENTUM: f64 = 0.5;
const FINAL_MOMENTUM: f64 = 0.8;
const LEARNING_RATE: f64 = 200.0;
const MIN_PROB: f64 = 1e-12;

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d2 = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &x.row(i) - &x.row(j);
            let dist = diff.dot(&diff);
            d2[[i, j]] = dist;
            d2[[j, i]] = dist;
        }
    }
    d2
}

/// Conditional distribution for row `i` at precision `beta`, returning
/// (Shannon entropy in nats, probabilities).
fn row_probs(d2_row: &Array1<f64>, i: usize, beta: f64) -> (f64, Array1<f64>) {
    let mut p = d2_row.mapv(|d| (-d * beta).exp());
    p[i] = 0.0;
    let sum = p.sum().max(f64::MIN_POSITIVE);
    p /= sum;
    let entropy = -p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>();
    (entropy, p)
}

fn conditional_probabilities(d2: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d2.nrows();
    let target_entropy = perplexity.ln();
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let row = d2.row(i).to_owned();
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut probs = Array1::zeros(n);
        for _ in 0..50 {
            let (entropy, current) = row_probs(&row, i, beta);
            probs = current;
            let diff = entropy - target_entropy;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
        }
        p.row_mut(i).assign(&probs);
    }
    p
}

/// Embed rows of `x` into 2-D. Deterministic in `(x, perplexity, seed)`.
pub fn tsne(x: &Array2<f64>, perplexity: f64, seed: u64, n_iter: usize) -> Array2<f64> {
    let n = x.nrows();
    let d2 = squared_distances(x);
    let cond = conditional_probabilities(&d2, perplexity);

    // symmetrize
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            p[[i, j]] = ((cond[[i, j]] + cond[[j, i]]) / (2.0 * n as f64)).max(MIN_PROB);
        }
        p[[i, i]] = MIN_PROB;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Array2::<f64>::zeros((n, 2));
    for v in y.iter_mut() {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        *v = 1e-4 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }

    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::from_elem((n, 2), 1.0);

    for iter in 0..n_iter {
        let exaggeration = if iter < EXAGGERATION_ITERS {
            EARLY_EXAGGERATION
        } else {
            1.0
        };
        let momentum = if iter < EXAGGERATION_ITERS {
            INITIAL_MOMENTUM
        } else {
            FINAL_MOMENTUM
        };

        // student-t affinities in the embedding
        let mut w = Array2::<f64>::zeros((n, n));
        let mut w_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[[i, 0]] - y[[j, 0]];
                let dy = y[[i, 1]] - y[[j, 1]];
                let wij = 1.0 / (1.0 + dx * dx + dy * dy);
                w[[i, j]] = wij;
                w[[j, i]] = wij;
                w_sum += 2.0 * wij;
            }
        }
        let w_sum = w_sum.max(f64::MIN_POSITIVE);

        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (w[[i, j]] / w_sum).max(MIN_PROB);
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q) * w[[i, j]];
                grad[[i, 0]] += coeff * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
        }

        for i in 0..n {
            for k in 0..2 {
                let g = grad[[i, k]];
                let same_direction = g.signum() == velocity[[i, k]].signum();
                gains[[i, k]] = if same_direction {
                    (gains[[i, k]] * 0.8).max(0.01)
                } else {
                    gains[[i, k]] + 0.2
                };
                velocity[[i, k]] = momentum * velocity[[i, k]] - LEARNING_RATE * gains[[i, k]] * g;
                y[[i, k]] += velocity[[i, k]];
            }
        }

        // keep the embedding centered
        let mean0 = y.column(0).sum() / n as f64;
        let mean1 = y.column(1).sum() / n as f64;
        for i in 0..n {
            y[[i, 0]] -= mean0;
            y[[i, 1]] -= mean1;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perplexity_search_hits_target() {
        let x = Array2::from_shape_fn((30, 4), |(i, j)| ((i * 7 + j * 3) % 13) as f64 / 13.0);
        let d2 = squared_distances(&x);
        let p = conditional_probabilities(&d2, 5.0);
        for i in 0..30 {
            let entropy = -p
                .row(i)
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| v * v.ln())
                .sum::<f64>();
            assert!((entropy - 5.0f64.ln()).abs() < 1e-3, "row {i}: {entropy}");
        }
    }

    #[test]
    fn embedding_is_deterministic() {
        let x = Array2::from_shape_fn((40, 8), |(i, j)| ((i * 31 + j * 17) % 101) as f64 / 50.0);
        let a = tsne(&x, 10.0, 3, 300);
        let b = tsne(&x, 10.0, 3, 300);
        assert_eq!(a, b);
    }
}
