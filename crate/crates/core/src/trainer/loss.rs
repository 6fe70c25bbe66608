//! Contrastive losses with exact gradients.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::encoder::dot;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossDirection {
    /// Each query against all candidate documents.
    #[default]
    Q2d,
    /// Adds the document-to-query term over the square block and averages.
    Bidirectional,
}

/// Cross-entropy of one logit row against `target`; returns the loss and
/// writes `softmax − onehot` into `grad`.
fn row_xent(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l - max).exp();
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    grad[target] -= 1.0;
    sum.ln() - (logits[target] - max)
}

fn check_finite(xs: &[f64]) -> Result<(), TrainError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::NonFinite)
    }
}

/// In-batch contrastive loss over a row-major `rows × cols` score matrix with
/// positives on the diagonal (`cols ≥ rows`; extra columns are additional
/// negatives such as hard negatives).
///
/// `loss = (1/B) Σᵢ −log softmax(Sᵢ·/τ)ᵢ`, and `dS = (softmax − I)/(Bτ)`.
pub fn inbatch_loss(
    scores: &[f64],
    rows: usize,
    cols: usize,
    tau: f64,
    direction: LossDirection,
) -> Result<(f64, Vec<f64>), TrainError> {
    if rows == 0 || cols < rows || scores.len() != rows * cols {
        return Err(TrainError::Shape(format!("{} scores for a {rows}×{cols} matrix", scores.len())));
    }
    if !(tau > 0.0) {
        return Err(TrainError::BadConfig(format!("temperature {tau} must be positive")));
    }
    check_finite(scores)?;
    let b = rows as f64;
    let mut grad = vec![0.0; rows * cols];
    let mut loss = 0.0;
    let mut logits = vec![0.0; cols];
    for i in 0..rows {
        for (l, s) in logits.iter_mut().zip(&scores[i * cols..(i + 1) * cols]) {
            *l = s / tau;
        }
        loss += row_xent(&logits, i, &mut grad[i * cols..(i + 1) * cols]);
    }
    let mut scale = 1.0 / (b * tau);
    if direction == LossDirection::Bidirectional {
        let mut col = vec![0.0; rows];
        let mut g = vec![0.0; rows];
        let mut col_loss = 0.0;
        for j in 0..rows {
            for (i, c) in col.iter_mut().enumerate() {
                *c = scores[i * cols + j] / tau;
            }
            col_loss += row_xent(&col, j, &mut g);
            for (i, gi) in g.iter().enumerate() {
                grad[i * cols + j] += gi;
            }
        }
        loss = 0.5 * (loss + col_loss);
        scale *= 0.5;
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    let loss = loss / b;
    check_finite(&[loss])?;
    Ok((loss, grad))
}

/// Loss and query gradients of the momentum-contrast objective.
pub struct MocoLoss {
    pub loss: f64,
    pub d_q: Vec<Vec<f64>>,
    /// Always zero: keys come from the momentum encoder and are detached.
    pub d_kpos: Vec<Vec<f64>>,
}

/// Per query, logits `[q·k⁺, q·n₁, …, q·n_f]/τ` with cross-entropy against
/// index 0, averaged over the batch. `queue` holds `filled` keys row-major.
pub fn moco_loss(q: &[Vec<f64>], k_pos: &[Vec<f64>], queue: &[f64], tau: f64) -> Result<MocoLoss, TrainError> {
    if q.is_empty() || q.len() != k_pos.len() {
        return Err(TrainError::Shape(format!("{} queries vs {} keys", q.len(), k_pos.len())));
    }
    if !(tau > 0.0) {
        return Err(TrainError::BadConfig(format!("temperature {tau} must be positive")));
    }
    let h = q[0].len();
    if q.iter().chain(k_pos).any(|v| v.len() != h) || h == 0 || !queue.len().is_multiple_of(h) {
        return Err(TrainError::Shape("inconsistent vector dimensions".into()));
    }
    for v in q.iter().chain(k_pos) {
        check_finite(v)?;
    }
    check_finite(queue)?;
    let negs: Vec<&[f64]> = queue.chunks_exact(h).collect();
    let b = q.len() as f64;
    let mut loss = 0.0;
    let mut d_q = Vec::with_capacity(q.len());
    let mut logits = vec![0.0; negs.len() + 1];
    let mut p = vec![0.0; negs.len() + 1];
    for (qi, ki) in q.iter().zip(k_pos) {
        logits[0] = dot(qi, ki) / tau;
        for (l, n) in logits[1..].iter_mut().zip(&negs) {
            *l = dot(qi, n) / tau;
        }
        loss += row_xent(&logits, 0, &mut p);
        let scale = 1.0 / (b * tau);
        let mut g: Vec<f64> = ki.iter().map(|k| p[0] * k).collect();
        for (pj, n) in p[1..].iter().zip(&negs) {
            for (gx, nx) in g.iter_mut().zip(n.iter()) {
                *gx += pj * nx;
            }
        }
        g.iter_mut().for_each(|x| *x *= scale);
        d_q.push(g);
    }
    let loss = loss / b;
    check_finite(&[loss])?;
    Ok(MocoLoss {
        loss,
        d_q,
        d_kpos: vec![vec![0.0; h]; k_pos.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(b: usize) -> Vec<f64> {
        (0..b * b).map(|k| if k / b == k % b { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn closed_forms() {
        let (l, _) = inbatch_loss(&identity(2), 2, 2, 1.0, LossDirection::Q2d).unwrap();
        assert_relative_eq!(l, (1.0 + (-1.0f64).exp()).ln(), max_relative = 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);
        for b in [1, 3, 7] {
            let (l, _) = inbatch_loss(&vec![0.37; b * b], b, b, 0.1, LossDirection::Q2d).unwrap();
            assert_relative_eq!(l, (b as f64).ln(), epsilon = 1e-12);
        }
        let sharp: Vec<f64> = (0..4).map(|k| if k % 3 == 0 { 10.0 } else { -10.0 }).collect();
        let (l, _) = inbatch_loss(&sharp, 2, 2, 1.0, LossDirection::Q2d).unwrap();
        assert!(l < 1e-8);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            inbatch_loss(&[f64::NAN, 0.0, 0.0, 0.0], 2, 2, 1.0, LossDirection::Q2d),
            Err(TrainError::NonFinite)
        ));
        assert!(inbatch_loss(&[0.0; 3], 2, 2, 1.0, LossDirection::Q2d).is_err());
        assert!(inbatch_loss(&[0.0; 4], 2, 2, 0.0, LossDirection::Q2d).is_err());
    }

    #[test]
    fn moco_cases() {
        let q = vec![vec![1.0, 0.0]];
        let k = vec![vec![2.0, 0.0]];
        assert_eq!(moco_loss(&q, &k, &[], 1.0).unwrap().loss, 0.0);
        let one = moco_loss(&q, &k, &[2.0, 5.0], 1.0).unwrap();
        assert_relative_eq!(one.loss, 2f64.ln(), max_relative = 1e-12);
        // q·k⁺ = 2, queue dots {1, 0}
        let r = moco_loss(&q, &k, &[1.0, 3.0, 0.0, 1.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(r.loss, -(e * e / (e * e + e + 1.0)).ln(), max_relative = 1e-12);
        assert!((r.loss - 0.407606).abs() < 1e-6);
        assert!(r.d_kpos.iter().flatten().all(|&x| x == 0.0));
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn inbatch_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(b, c, dir) in &[
            (3, 3, LossDirection::Q2d),
            (4, 8, LossDirection::Q2d),
            (3, 3, LossDirection::Bidirectional),
            (2, 4, LossDirection::Bidirectional),
        ] {
            let s = random_matrix(&mut rng, b * c);
            let tau = 0.3;
            let (_, g) = inbatch_loss(&s, b, c, tau, dir).unwrap();
            let h = 1e-6;
            for k in 0..s.len() {
                let mut sp = s.clone();
                sp[k] += h;
                let mut sm = s.clone();
                sm[k] -= h;
                let fd = (inbatch_loss(&sp, b, c, tau, dir).unwrap().0 - inbatch_loss(&sm, b, c, tau, dir).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1e-3), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn moco_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hdim = 4;
        let q: Vec<Vec<f64>> = (0..3).map(|_| random_matrix(&mut rng, hdim)).collect();
        let k: Vec<Vec<f64>> = (0..3).map(|_| random_matrix(&mut rng, hdim)).collect();
        let queue = random_matrix(&mut rng, 5 * hdim);
        let tau = 0.5;
        let r = moco_loss(&q, &k, &queue, tau).unwrap();
        let h = 1e-6;
        for i in 0..q.len() {
            for d in 0..hdim {
                let mut qp = q.clone();
                qp[i][d] += h;
                let mut qm = q.clone();
                qm[i][d] -= h;
                let fd = (moco_loss(&qp, &k, &queue, tau).unwrap().loss - moco_loss(&qm, &k, &queue, tau).unwrap().loss)
                    / (2.0 * h);
                assert!((fd - r.d_q[i][d]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
        }
    }

    /// Widened matrix: each query sees its positive, the other positives and
    /// every hard negative.
    #[test]
    fn hard_negative_matrix_matches_softmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (sp, sn) = (1.3, 0.4);
        let (l, _) = inbatch_loss(&[sp, sn], 1, 2, 0.5, LossDirection::Q2d).unwrap();
        let want = -((sp / 0.5f64).exp() / ((sp / 0.5f64).exp() + (sn / 0.5f64).exp())).ln();
        assert_relative_eq!(l, want, max_relative = 1e-12);

        let b = 3;
        let s = random_matrix(&mut rng, b * 2 * b);
        let (l, _) = inbatch_loss(&s, b, 2 * b, 0.2, LossDirection::Q2d).unwrap();
        let mut oracle = 0.0;
        for i in 0..b {
            let row = &s[i * 2 * b..(i + 1) * 2 * b];
            let z: f64 = row.iter().map(|x| (x / 0.2).exp()).sum();
            oracle -= ((row[i] / 0.2).exp() / z).ln();
        }
        assert_relative_eq!(l, oracle / b as f64, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn gradient_rows_sum_to_zero(seed in any::<u64>(), b in 1usize..6, extra in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = b + extra;
            let s = random_matrix(&mut rng, b * c);
            let (_, g) = inbatch_loss(&s, b, c, 0.7, LossDirection::Q2d).unwrap();
            for row in g.chunks(c) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }

        #[test]
        fn row_shift_invariance(seed in any::<u64>(), b in 1usize..6, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_matrix(&mut rng, b * b);
            let shifted: Vec<f64> = s.iter().enumerate().map(|(k, x)| x + shift * (k / b) as f64).collect();
            let (a, _) = inbatch_loss(&s, b, b, 0.5, LossDirection::Q2d).unwrap();
            let (c, _) = inbatch_loss(&shifted, b, b, 0.5, LossDirection::Q2d).unwrap();
            prop_assert!((a - c).abs() < 1e-10);
        }

        #[test]
        fn temperature_rescaling_identity(seed in any::<u64>(), b in 1usize..6, alpha in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_matrix(&mut rng, b * b);
            let scaled: Vec<f64> = s.iter().map(|x| alpha * x).collect();
            let (a, _) = inbatch_loss(&s, b, b, 0.3, LossDirection::Bidirectional).unwrap();
            let (c, _) = inbatch_loss(&scaled, b, b, 0.3 * alpha, LossDirection::Bidirectional).unwrap();
            prop_assert!((a - c).abs() < 1e-10);
        }
    }
}
