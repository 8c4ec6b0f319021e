//! Stage-one loss components: InfoNCE, triplet margin, KL and token NLL.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cosine_similarity, EmbeddingVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub infonce_temperature: f64,
    pub triplet_margin: f64,
    /// Weights for `[sft, kl, infonce, triplet]`.
    pub weights: [f64; 4],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            infonce_temperature: 0.05,
            triplet_margin: 0.15,
            weights: [1.0; 4],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.infonce_temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        if !(self.triplet_margin >= 0.0) {
            return Err(Error::InvalidArgument("margin must be >= 0".into()));
        }
        check_weights(&self.weights)
    }
}

fn check_weights(w: &[f64; 4]) -> Result<()> {
    if w.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
    }
    Ok(())
}

fn cos<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<f64> {
    Ok(cosine_similarity(a, b)?.as_f64())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_infonce<T: Scalar>(docs: &[EmbeddingVector<T>], positive: usize, tau: f64) -> Result<()> {
    if docs.is_empty() {
        return Err(Error::InvalidArgument("docs must be non-empty".into()));
    }
    if positive >= docs.len() {
        return Err(Error::InvalidArgument(format!(
            "positive index {positive} out of range for {} docs",
            docs.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("temperature must be > 0".into()));
    }
    Ok(())
}

/// `-log softmax(cos(h_q, docs) / tau)[positive]`.
pub fn info_nce<T: Scalar>(
    h_q: &EmbeddingVector<T>,
    docs: &[EmbeddingVector<T>],
    positive: usize,
    tau: f64,
) -> Result<f64> {
    check_infonce(docs, positive, tau)?;
    let logits = docs
        .iter()
        .map(|d| Ok(cos(h_q, d)? / tau))
        .collect::<Result<Vec<f64>>>()?;
    // ln(1 + sum_{i != pos} e^{z_i}) with z_i = logit_i - logit_pos, so small
    // losses keep their relative precision.
    let z: Vec<f64> = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != positive)
        .map(|(_, l)| l - logits[positive])
        .collect();
    if z.is_empty() {
        return Ok(0.0);
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let loss = if m > 0.0 {
        m + ((-m).exp() + z.iter().map(|x| (x - m).exp()).sum::<f64>()).ln()
    } else {
        z.iter().map(|x| x.exp()).sum::<f64>().ln_1p()
    };
    Ok(loss.max(0.0))
}

/// Analytic gradient of [`info_nce`] with respect to `h_q`.
pub fn info_nce_grad<T: Scalar>(
    h_q: &EmbeddingVector<T>,
    docs: &[EmbeddingVector<T>],
    positive: usize,
    tau: f64,
) -> Result<Vec<f64>> {
    check_infonce(docs, positive, tau)?;
    let q: Vec<f64> = h_q.as_slice().iter().map(|x| x.as_f64()).collect();
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if qn == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let sims = docs
        .iter()
        .map(|d| cos(h_q, d))
        .collect::<Result<Vec<f64>>>()?;
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let lse = log_sum_exp(&logits);
    let mut grad = vec![0.0; q.len()];
    for (i, d) in docs.iter().enumerate() {
        let w = ((logits[i] - lse).exp() - if i == positive { 1.0 } else { 0.0 }) / tau;
        let dv: Vec<f64> = d.as_slice().iter().map(|x| x.as_f64()).collect();
        let dn = dv.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..q.len() {
            grad[j] += w * (dv[j] / (qn * dn) - sims[i] * q[j] / (qn * qn));
        }
    }
    Ok(grad)
}

/// `max(0, cos(q, n) - cos(q, p) + theta)`: zero once the positive is closer
/// than the negative by at least the margin.
pub fn triplet_margin<T: Scalar>(
    h_q: &EmbeddingVector<T>,
    h_p: &EmbeddingVector<T>,
    h_n: &EmbeddingVector<T>,
    theta: f64,
) -> Result<f64> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidArgument("margin must be >= 0".into()));
    }
    Ok((cos(h_q, h_n)? - cos(h_q, h_p)? + theta).max(0.0))
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// `sum p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "q[{i}] = 0 where p[{i}] > 0"
            )));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Mean negative log-likelihood of the target index in each row.
pub fn cross_entropy_nll(predicted: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if predicted.len() != targets.len() || predicted.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: predicted.len(),
            actual: targets.len(),
        });
    }
    let mut total = 0.0;
    for (row, (p, &t)) in predicted.iter().zip(targets).enumerate() {
        check_distribution(p, &format!("row {row}"))?;
        let pt = *p.get(t).ok_or_else(|| {
            Error::InvalidArgument(format!("target {t} out of range in row {row}"))
        })?;
        if pt == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "zero probability at target in row {row}"
            )));
        }
        total -= pt.ln();
    }
    Ok(total / predicted.len() as f64)
}

/// Weighted sum of `[sft, kl, infonce, triplet]`.
pub fn composite_loss(components: [f64; 4], weights: [f64; 4]) -> Result<f64> {
    check_weights(&weights)?;
    Ok(components.iter().zip(&weights).map(|(c, w)| c * w).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn info_nce_examples() {
        let q = v(&[1.0, 0.0]);
        assert_eq!(info_nce(&q, &[v(&[0.3, 0.2])], 0, 0.05).unwrap(), 0.0);
        let docs = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        assert_abs_diff_eq!(
            info_nce(&q, &docs, 0, 1.0).unwrap(),
            0.313_261_687_518_222_9,
            epsilon = 1e-12
        );
        let tiny = info_nce(&q, &docs, 0, 0.05).unwrap();
        assert_abs_diff_eq!(tiny, 2.061_153_620_314_381e-9, epsilon = 1e-15);
        assert!((tiny / (-20f64).exp().ln_1p() - 1.0).abs() < 1e-12);
        let big = info_nce(&q, &docs, 1, 0.001).unwrap();
        assert!(big.is_finite());
        assert_abs_diff_eq!(big, 1000.0, epsilon = 1e-9);
        assert!(info_nce(&q, &docs, 2, 1.0).is_err());
        assert!(info_nce(&q, &docs, 0, 0.0).is_err());
        assert!(info_nce::<f64>(&q, &[], 0, 1.0).is_err());
    }

    #[test]
    fn triplet_examples() {
        let q = v(&[1.0, 0.0]);
        assert_eq!(triplet_margin(&q, &q, &v(&[0.0, 1.0]), 0.15).unwrap(), 0.0);
        let x = v(&[0.3, 0.7]);
        assert_abs_diff_eq!(
            triplet_margin(&q, &x, &x, 0.15).unwrap(),
            0.15,
            epsilon = 1e-15
        );
        let p = v(&[0.6, 0.8]);
        let n = v(&[0.7, 0.51f64.sqrt()]);
        assert_abs_diff_eq!(
            triplet_margin(&q, &p, &n, 0.15).unwrap(),
            0.25,
            epsilon = 1e-12
        );
        assert!(triplet_margin(&q, &p, &v(&[1.0, 0.0, 0.0]), 0.15).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            0.693_147_180_559_945_3,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap(),
            0.510_825_623_765_990_7,
            epsilon = 1e-12
        );
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).is_err());
        assert!(kl_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(
            cross_entropy_nll(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[1, 0]).unwrap(),
            0.0
        );
        let u = vec![0.25; 4];
        assert_abs_diff_eq!(
            cross_entropy_nll(&[u.clone(), u], &[0, 3]).unwrap(),
            4f64.ln(),
            epsilon = 1e-12
        );
        let got = cross_entropy_nll(&[vec![0.7, 0.3], vec![0.2, 0.8]], &[0, 1]).unwrap();
        assert_abs_diff_eq!(got, 0.289_909_247_626_471_1, epsilon = 1e-12);
        assert!(cross_entropy_nll(&[vec![1.0, 0.0]], &[1]).is_err());
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_loss([0.0; 4], [1.0; 4]).unwrap(), 0.0);
        assert_eq!(
            composite_loss([1.0, 2.0, 3.0, 4.0], [1.0; 4]).unwrap(),
            10.0
        );
        assert_eq!(composite_loss([1.0; 4], [0.0, 0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert!(composite_loss([1.0; 4], [1.0, -1.0, 1.0, 1.0]).is_err());
        assert!(LossConfig::default().validate().is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let mut rv = || {
                v(&(0..8)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect::<Vec<_>>())
            };
            let q = rv();
            let docs: Vec<_> = (0..6).map(|_| rv()).collect();
            let tau = 0.5;
            let g = info_nce_grad(&q, &docs, 2, tau).unwrap();
            let h = 1e-6;
            for j in 0..8 {
                let mut plus = q.as_slice().to_vec();
                let mut minus = plus.clone();
                plus[j] += h;
                minus[j] -= h;
                let num = (info_nce(&v(&plus), &docs, 2, tau).unwrap()
                    - info_nce(&v(&minus), &docs, 2, tau).unwrap())
                    / (2.0 * h);
                let rel = (num - g[j]).abs() / num.abs().max(g[j].abs()).max(1e-8);
                assert!(rel < 1e-4, "component {j}: numeric {num} analytic {}", g[j]);
            }
        }
    }

    proptest! {
        #[test]
        fn info_nce_falls_as_positive_gets_closer(a in 0.0f64..1.5, b in 0.0f64..1.5, tau in 0.05f64..2.0) {
            prop_assume!((a - b).abs() > 1e-3);
            let q = v(&[1.0, 0.0]);
            let docs = |t: f64| vec![v(&[t.cos(), t.sin()]), v(&[0.2, 0.9]), v(&[-0.5, 0.1])];
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            let ln = info_nce(&q, &docs(near), 0, tau).unwrap();
            let lf = info_nce(&q, &docs(far), 0, tau).unwrap();
            prop_assert!(ln >= 0.0 && lf >= 0.0);
            prop_assert!(ln < lf || (ln == lf && ln < 1e-12));
        }

        #[test]
        fn triplet_zero_iff_separated(cp in -1.0f64..1.0, cn in -1.0f64..1.0, theta in 0.0f64..0.5) {
            let q = v(&[1.0, 0.0]);
            let p = v(&[cp, (1.0 - cp * cp).sqrt()]);
            let n = v(&[cn, (1.0 - cn * cn).sqrt()]);
            let l = triplet_margin(&q, &p, &n, theta).unwrap();
            let gap = cp - cn - theta;
            if gap > 1e-9 { prop_assert_eq!(l, 0.0); }
            if gap < -1e-9 { prop_assert!(l > 0.0); }
        }

        #[test]
        fn kl_nonnegative(raw in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..10)) {
            let sp: f64 = raw.iter().map(|x| x.0).sum();
            let sq: f64 = raw.iter().map(|x| x.1).sum();
            let p: Vec<f64> = raw.iter().map(|x| x.0 / sp).collect();
            let q: Vec<f64> = raw.iter().map(|x| x.1 / sq).collect();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-9);
        }
    }
}
