//! Finite-difference suites over the engine ops, the ranking losses and
//! the four model variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check, Conv3dSpec, GradCheckConfig, GradCheckReport, ParamStore};
use crate::error::{Error, Result};
use crate::model::{ForwardCtx, Model, ModelConfig, Variant};
use crate::ranking::{mse_spearman_loss, soft_rank, soft_spearman, LossConfig};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Diffcore,
    Ranking,
    Model,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Diffcore => "diffcore",
            Suite::Ranking => "ranking",
            Suite::Model => "model",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Suite::Diffcore, Suite::Ranking, Suite::Model, Suite::All]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite {s:?} (diffcore, ranking, model, all)")))
    }
}

#[derive(Debug, Clone)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

impl fmt::Display for NamedReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24} {}", self.name, self.report)
    }
}

/// Parameters `x0..` with values uniform in `±[0.1, 1)`, away from kinks at 0.
fn store(shapes: &[&[usize]], positive: bool, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, shape) in shapes.iter().enumerate() {
        let n = shape.iter().product();
        let values = (0..n)
            .map(|_| {
                let m = rng.gen_range(0.1..1.0);
                if positive || rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        s.add(format!("x{i}"), shape, values).expect("valid shape");
    }
    s
}

/// Checks `sum(f(x) ⊙ w)` for fixed random weights `w`.
fn op_check<F>(name: &str, shapes: &[&[usize]], positive: bool, f: F) -> Result<NamedReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let params = store(shapes, positive, &mut rng);
    let ids: Vec<_> = params.ids().collect();
    let cfg = GradCheckConfig::with_tol(1e-6);
    let report = grad_check(
        |b| {
            let xs: Vec<Tensor> = ids.iter().map(|&i| b[i].clone()).collect();
            let y = f(&xs)?;
            let mut wr = ChaCha8Rng::seed_from_u64(7);
            let w = Tensor::new((0..y.numel()).map(|_| wr.gen_range(-1.0..1.0)).collect(), y.shape())?;
            Ok(y.mul(&w)?.sum_all())
        },
        &params,
        &cfg,
    )?;
    Ok(NamedReport {
        name: name.to_string(),
        report,
    })
}

fn diffcore_suite() -> Result<Vec<NamedReport>> {
    let conv = Conv3dSpec {
        stride: [1, 2, 2],
        padding: [1, 1, 1],
    };
    Ok(vec![
        op_check("add (broadcast)", &[&[3, 4], &[4]], false, |x| x[0].add(&x[1]))?,
        op_check("sub (broadcast)", &[&[2, 3, 4], &[4]], false, |x| x[0].sub(&x[1]))?,
        op_check("mul (broadcast)", &[&[2, 3, 4], &[3, 4]], false, |x| x[0].mul(&x[1]))?,
        op_check("powf", &[&[5]], true, |x| Ok(x[0].powf(2.5)))?,
        op_check("exp", &[&[5]], false, |x| Ok(x[0].exp()))?,
        op_check("ln", &[&[5]], true, |x| Ok(x[0].ln()))?,
        op_check("sqrt", &[&[5]], true, |x| Ok(x[0].sqrt()))?,
        op_check("relu", &[&[8]], false, |x| Ok(x[0].relu()))?,
        op_check("gelu", &[&[8]], false, |x| Ok(x[0].gelu()))?,
        op_check("sum_axis", &[&[2, 3, 4]], false, |x| x[0].sum_axis(1))?,
        op_check("mean_axis", &[&[2, 3, 4]], false, |x| x[0].mean_axis(0))?,
        op_check("permute", &[&[2, 3, 4]], false, |x| x[0].permute(&[2, 0, 1]))?,
        op_check("reshape", &[&[2, 3, 4]], false, |x| x[0].reshape(&[6, 4]))?,
        op_check("concat", &[&[2, 3], &[2, 2]], false, |x| Tensor::concat(&[x[0].clone(), x[1].clone()], 1))?,
        op_check("slice", &[&[4, 3]], false, |x| x[0].slice(0, 1, 3))?,
        op_check("matmul", &[&[3, 4], &[4, 2]], false, |x| x[0].matmul(&x[1]))?,
        op_check("matmul_nt", &[&[3, 4], &[5, 4]], false, |x| x[0].matmul_nt(&x[1]))?,
        op_check("softmax", &[&[3, 5]], false, |x| x[0].softmax())?,
        op_check("layer_norm", &[&[3, 5]], false, |x| x[0].layer_norm(1e-5))?,
        op_check("embedding", &[&[5, 3]], false, |x| x[0].embedding(&[0, 2, 2, 4]))?,
        op_check("dropout_with_mask", &[&[6]], false, |x| {
            x[0].dropout_with_mask(&[2.0, 0.0, 2.0, 2.0, 0.0, 2.0])
        })?,
        op_check("conv3d", &[&[2, 3, 5, 5], &[3, 2, 3, 3, 3], &[3]], false, |x| {
            x[0].conv3d(&x[1], Some(&x[2]), conv)
        })?,
    ])
}

/// Batches of `(normalized score, difficulty)` targets and predictions.
fn random_batch(b: usize, rng: &mut ChaCha8Rng) -> (Vec<[f64; 2]>, Vec<f64>) {
    let y = (0..b).map(|_| [rng.gen_range(0.3..1.0), rng.gen_range(2.0..4.1)]).collect();
    let pred = (0..b)
        .flat_map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(1.5..4.5)])
        .collect();
    (y, pred)
}

/// The loss gradient over `batches` random batches of 8, merged into one report.
pub fn loss_gradient_check(batches: usize, cfg: &LossConfig, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut merged = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        per_param_errors: BTreeMap::new(),
        passed: true,
        tol,
        failure: None,
    };
    for k in 0..batches {
        let (y, pred) = random_batch(8, &mut rng);
        let mut params = ParamStore::new();
        let id = params.add("y_hat", &[8, 2], pred)?;
        let r = grad_check(
            |b| mse_spearman_loss(&y, &b[id], cfg),
            &params,
            &GradCheckConfig::with_tol(tol),
        )?;
        merged.max_abs_err = merged.max_abs_err.max(r.max_abs_err);
        merged.max_rel_err = merged.max_rel_err.max(r.max_rel_err);
        merged.passed &= r.passed;
        merged.failure = merged.failure.or(r.failure);
        for (path, cs) in r.per_param_errors {
            merged.per_param_errors.insert(format!("batch{k}/{path}"), cs);
        }
    }
    Ok(merged)
}

fn ranking_suite() -> Result<Vec<NamedReport>> {
    let vector = |n: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let id = p
            .add("x", &[n], (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .expect("valid shape");
        (p, id)
    };
    let mut out = Vec::new();
    for eps in [1.0, 0.1] {
        let (p, id) = vector(6, 2);
        let w = Tensor::new(vec![0.3, -1.2, 0.7, 2.0, -0.4, 1.1], &[6])?;
        out.push(NamedReport {
            name: format!("soft_rank (eps {eps})"),
            report: grad_check(
                |b| Ok(soft_rank(&b[id], eps)?.mul(&w)?.sum_all()),
                &p,
                &GradCheckConfig::with_tol(1e-4),
            )?,
        });
    }
    let (p, id) = vector(8, 3);
    let y = [0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4];
    out.push(NamedReport {
        name: "soft_spearman".into(),
        report: grad_check(|b| soft_spearman(&y, &b[id], 0.1), &p, &GradCheckConfig::with_tol(1e-4))?,
    });
    out.push(NamedReport {
        name: "mse_spearman_loss".into(),
        report: loss_gradient_check(50, &LossConfig::default(), 1e-4)?,
    });
    Ok(out)
}

/// Full-loss check of `variant` at minimal size on 64 sampled parameters,
/// with dropout masks frozen by a fixed seed.
pub fn model_check(variant: Variant) -> Result<GradCheckReport> {
    let cfg = ModelConfig::minimal(variant);
    let model = Model::new(cfg.clone(), 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = cfg.frames * 3 * cfg.image_size * cfg.image_size;
    let clips = (0..3)
        .map(|_| {
            Tensor::new(
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                &[cfg.frames, 3, cfg.image_size, cfg.image_size],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let targets = [[0.8, 3.1], [0.4, 2.2], [0.6, 3.9]];
    let loss = LossConfig::default();
    grad_check(
        |p| {
            let mut ctx = ForwardCtx::train(99);
            mse_spearman_loss(&targets, &model.forward_batch(p, &clips, &mut ctx)?, &loss)
        },
        model.params(),
        &GradCheckConfig {
            tol: 1e-3,
            seed: 3,
            ..GradCheckConfig::default()
        }
        .samples(64),
    )
}

fn model_suite() -> Result<Vec<NamedReport>> {
    Variant::ALL
        .into_iter()
        .map(|v| {
            Ok(NamedReport {
                name: v.name().to_string(),
                report: model_check(v)?,
            })
        })
        .collect()
}

pub fn run_grad_suite(suite: Suite) -> Result<Vec<NamedReport>> {
    match suite {
        Suite::Diffcore => diffcore_suite(),
        Suite::Ranking => ranking_suite(),
        Suite::Model => model_suite(),
        Suite::All => {
            let mut all = diffcore_suite()?;
            all.extend(ranking_suite()?);
            all.extend(model_suite()?);
            Ok(all)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_and_ranking_suites_pass() {
        for suite in [Suite::Diffcore, Suite::Ranking] {
            for r in run_grad_suite(suite).unwrap() {
                assert!(r.report.passed, "{r}");
            }
        }
    }
}
