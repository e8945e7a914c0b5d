//! Exact and differentiable rank machinery.
//!
//! * [`hard_rank`] / [`spearman`]: the evaluation metric, ranks with
//!   average-rank ties and the Pearson correlation of the two rank vectors.
//! * [`soft_rank`]: ranks relaxed as the Euclidean projection of `x / ε`
//!   onto the permutahedron of `(1, ..., n)`. The projection reduces to a
//!   decreasing isotonic regression on the sorted input, solved by
//!   pool-adjacent-violators in `O(n log n)`. Its Jacobian is block
//!   averaging, so the backward pass is as cheap as the forward one.
//! * [`mse_spearman_loss`]: `α · MSE − β · SpCorr`, where the correlation
//!   term compares hard ranks of the true final scores with soft ranks of
//!   the predicted ones across the batch.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Added under the square root of the predicted-rank variance so that a
/// batch of identical predictions yields a zero correlation, not NaN.
const SOFT_VAR_EPS: f64 = 1e-12;

/// Rank values, one per input element.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub ranks: Vec<f64>,
}

impl RankVector {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.ranks.iter().sum::<f64>() / self.ranks.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the MSE term.
    pub alpha: f64,
    /// Weight of the Spearman term.
    pub beta: f64,
    /// Soft-rank regularization strength; smaller is closer to hard ranks.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            epsilon: 0.1,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        let cfg = Self { alpha, beta, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta > 0.0
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "loss needs alpha >= 0, beta >= 0, alpha + beta > 0, epsilon > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

fn check_finite(op: &'static str, x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::op(op, "empty input"));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::op(op, format!("non-finite value {} at index {i}", x[i])));
    }
    Ok(())
}

/// Ascending ranks starting at 1; tied values share their average rank.
pub fn hard_rank(x: &[f64]) -> Result<RankVector> {
    check_finite("hard_rank", x)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(RankVector { ranks })
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// Pearson correlation; errors when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(format!(
            "correlation needs two equal-length series of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ca, cb) = (centered(a), centered(b));
    let saa: f64 = ca.iter().map(|v| v * v).sum();
    let sbb: f64 = cb.iter().map(|v| v * v).sum();
    if saa == 0.0 || sbb == 0.0 {
        let side = if saa == 0.0 { "first" } else { "second" };
        return Err(Error::UndefinedCorrelation(format!("the {side} series is constant")));
    }
    let sab: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of the two hard-rank vectors.
pub fn spearman(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", y.len(), y_hat.len())));
    }
    let p = hard_rank(y)?;
    let q = hard_rank(y_hat)?;
    pearson(&p.ranks, &q.ranks)
}

/// Blocks of a decreasing isotonic fit, as `(start, len, mean)`.
///
/// Minimizes `Σ (v_i − t_i)²` subject to `v_1 ≥ v_2 ≥ ... ≥ v_n`; every
/// element of a block takes the block mean.
pub fn isotonic_decreasing(target: &[f64]) -> Vec<(usize, usize, f64)> {
    // (start, len, sum)
    let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(target.len());
    for (i, &t) in target.iter().enumerate() {
        blocks.push((i, 1, t));
        while blocks.len() >= 2 {
            let (_, ln, sn) = blocks[blocks.len() - 1];
            let (_, lp, sp) = blocks[blocks.len() - 2];
            // violation: previous mean below the next one
            if sp * ln as f64 >= sn * lp as f64 {
                break;
            }
            blocks.pop();
            let prev = blocks.last_mut().expect("len >= 2");
            prev.1 += ln;
            prev.2 += sn;
        }
    }
    blocks.into_iter().map(|(s, l, sum)| (s, l, sum / l as f64)).collect()
}

/// Sorted order, sorted values and isotonic blocks of one projection.
struct Projection {
    order: Vec<usize>,
    blocks: Vec<(usize, usize, f64)>,
    ranks: Vec<f64>,
}

fn project(x: &[f64], epsilon: f64) -> Result<Projection> {
    check_finite("soft_rank", x)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::op("soft_rank", format!("epsilon must be positive and finite, got {epsilon}")));
    }
    let n = x.len();
    let z: Vec<f64> = x.iter().map(|v| v / epsilon).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
    // sorted descending, minus the descending rank vector (n, ..., 1)
    let target: Vec<f64> = order.iter().enumerate().map(|(k, &i)| z[i] - (n - k) as f64).collect();
    let blocks = isotonic_decreasing(&target);
    let mut ranks = vec![0.0; n];
    for &(start, len, mean) in &blocks {
        for k in start..start + len {
            ranks[order[k]] = z[order[k]] - mean;
        }
    }
    Ok(Projection { order, blocks, ranks })
}

/// Soft ranks of `x` as plain values.
pub fn soft_rank_values(x: &[f64], epsilon: f64) -> Result<RankVector> {
    Ok(RankVector {
        ranks: project(x, epsilon)?.ranks,
    })
}

/// Differentiable soft ranks of a 1-D tensor.
///
/// The output always sums to `n(n+1)/2`, preserves the order of `x`, and
/// tends to [`hard_rank`] as `epsilon → 0` when `x` has no ties.
pub fn soft_rank(x: &Tensor, epsilon: f64) -> Result<Tensor> {
    if x.rank() != 1 {
        return Err(Error::op("soft_rank", format!("expects a 1-D tensor, got shape {:?}", x.shape())));
    }
    let Projection { order, blocks, ranks } = project(x.data(), epsilon)?;
    Ok(Tensor::from_op(
        "soft_rank",
        ranks,
        x.shape().to_vec(),
        vec![x.clone()],
        Box::new(move |ctx| {
            // d rank / d z = I − (block averaging in sorted order)
            let g = ctx.grad_out;
            let mut gx = vec![0.0; g.len()];
            for &(start, len, _) in &blocks {
                let idx = &order[start..start + len];
                let mean = idx.iter().map(|&i| g[i]).sum::<f64>() / len as f64;
                for &i in idx {
                    gx[i] = (g[i] - mean) / epsilon;
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Pearson correlation between the hard ranks of `y` (held constant) and
/// the soft ranks of `y_hat`. Gradient flows to `y_hat` only.
pub fn soft_spearman(y: &[f64], y_hat: &Tensor, epsilon: f64) -> Result<Tensor> {
    if y_hat.rank() != 1 || y_hat.numel() != y.len() {
        return Err(Error::Shape {
            op: "soft_spearman",
            lhs: vec![y.len()],
            rhs: y_hat.shape().to_vec(),
        });
    }
    if y.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 samples"));
    }
    let p = centered(&hard_rank(y)?.ranks);
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if p_norm == 0.0 {
        return Err(Error::UndefinedCorrelation("the target scores are constant".into()));
    }
    let p = Tensor::new(p, &[y.len()])?;
    let r = soft_rank(y_hat, epsilon)?;
    let rc = r.sub(&r.mean_all())?;
    let cov = rc.mul(&p)?.sum_all();
    let inv_r_norm = rc.mul(&rc)?.sum_all().add_scalar(SOFT_VAR_EPS).powf(-0.5);
    Ok(cov.mul(&inv_r_norm)?.scale(1.0 / p_norm))
}

/// `alpha · MSE(y, ŷ) − beta · SpCorr(y, ŷ)` over a batch of
/// `(normalized score, difficulty)` pairs.
///
/// The MSE averages over both components and the batch. The correlation is
/// taken between final scores, `normalized × difficulty`, across the batch.
/// A zero weight drops its term entirely.
pub fn mse_spearman_loss(y: &[[f64; 2]], y_hat: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    cfg.validate()?;
    let b = y.len();
    if y_hat.shape() != [b, 2] {
        return Err(Error::Shape {
            op: "mse_spearman_loss",
            lhs: vec![b, 2],
            rhs: y_hat.shape().to_vec(),
        });
    }
    if cfg.beta > 0.0 && b < 2 {
        return Err(Error::invalid(format!(
            "the Spearman term needs a batch of at least 2, got {b}"
        )));
    }
    let mut loss: Option<Tensor> = None;
    if cfg.alpha > 0.0 {
        let target = Tensor::new(y.iter().flatten().copied().collect(), &[b, 2])?;
        let mse = y_hat.sub(&target)?.powf(2.0).mean_all();
        loss = Some(if cfg.alpha == 1.0 { mse } else { mse.scale(cfg.alpha) });
    }
    if cfg.beta > 0.0 {
        let y_final: Vec<f64> = y.iter().map(|[s, d]| s * d).collect();
        let final_hat = y_hat
            .slice(1, 0, 1)?
            .mul(&y_hat.slice(1, 1, 2)?)?
            .reshape(&[b])?;
        let sp = soft_spearman(&y_final, &final_hat, cfg.epsilon)?.scale(-cfg.beta);
        loss = Some(match loss {
            Some(l) => l.add(&sp)?,
            None => sp,
        });
    }
    Ok(loss.expect("alpha + beta > 0"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_rank_examples() {
        assert_eq!(hard_rank(&[10.0, 30.0, 20.0]).unwrap().ranks, vec![1.0, 3.0, 2.0]);
        assert_eq!(hard_rank(&[5.0, 5.0, 5.0]).unwrap().ranks, vec![2.0, 2.0, 2.0]);
        assert_eq!(
            hard_rank(&[0.3, 0.1, 0.1, 0.9]).unwrap().ranks,
            vec![3.0, 1.5, 1.5, 4.0]
        );
        assert_eq!(hard_rank(&[7.0]).unwrap().ranks, vec![1.0]);
    }

    #[test]
    fn hard_rank_rejects_nan() {
        assert!(hard_rank(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(), -1.0);
    }

    #[test]
    fn spearman_constant_side_is_undefined() {
        let err = spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap_err();
        assert!(matches!(err, Error::UndefinedCorrelation(_)));
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn soft_rank_of_constant_is_mean_rank() {
        for c in [-3.0, 0.0, 12.5] {
            let r = soft_rank_values(&[c, c, c], 0.1).unwrap();
            assert_eq!(r.ranks, vec![2.0, 2.0, 2.0]);
        }
    }

    #[test]
    fn soft_rank_small_epsilon_recovers_order() {
        let r = soft_rank_values(&[3.0, 1.0, 2.0], 1e-6).unwrap();
        for (a, b) in r.ranks.iter().zip([3.0, 1.0, 2.0]) {
            assert!((a - b).abs() <= 1e-3, "{:?}", r.ranks);
        }
    }

    #[test]
    fn soft_rank_large_epsilon_pools_everything() {
        let r = soft_rank_values(&[0.3, -0.2, 0.1, 0.0], 100.0).unwrap();
        // single block: ranks are an affine image of x around the mean rank
        let mean = r.mean();
        assert!((mean - 2.5).abs() < 1e-12);
        assert!(r.ranks[0] > r.ranks[2] && r.ranks[2] > r.ranks[3] && r.ranks[3] > r.ranks[1]);
    }

    #[test]
    fn soft_rank_rejects_bad_epsilon() {
        assert!(soft_rank_values(&[1.0, 2.0], 0.0).is_err());
        assert!(soft_rank_values(&[1.0, 2.0], -1.0).is_err());
    }

    #[test]
    fn isotonic_pools_increasing_runs() {
        let blocks = isotonic_decreasing(&[5.0, 1.0, 2.0, 3.0, 0.0]);
        assert_eq!(blocks, vec![(0, 1, 5.0), (1, 3, 2.0), (4, 1, 0.0)]);
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::new(0.0, 0.0, 0.1).is_err());
        assert!(LossConfig::new(1.0, -1.0, 0.1).is_err());
        assert!(LossConfig::new(1.0, 1.0, 0.0).is_err());
        let d = LossConfig::default();
        assert_eq!((d.alpha, d.beta, d.epsilon), (1.0, 1.0, 0.1));
    }

    #[test]
    fn loss_needs_two_samples_for_spearman() {
        let y_hat = Tensor::param(vec![0.5, 3.0], &[1, 2]).unwrap();
        let cfg = LossConfig::default();
        assert!(mse_spearman_loss(&[[0.5, 3.0]], &y_hat, &cfg).is_err());
        let mse_only = LossConfig::new(1.0, 0.0, 0.1).unwrap();
        assert!(mse_spearman_loss(&[[0.5, 3.0]], &y_hat, &mse_only).is_ok());
        let mismatched = Tensor::param(vec![0.5, 3.0, 1.0, 1.0], &[2, 2]).unwrap();
        assert!(mse_spearman_loss(&[[0.5, 3.0]], &mismatched, &mse_only).is_err());
    }
}
