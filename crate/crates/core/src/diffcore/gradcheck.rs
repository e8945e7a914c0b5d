//! Central finite-difference gradient verification.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Check only this many coordinates, drawn uniformly over all parameters.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so that gradients
    /// that are zero up to rounding compare by absolute error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-5,
            samples: None,
            seed: 0,
            floor: 1e-7,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.samples = Some(n);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub per_param_errors: BTreeMap<String, Vec<CoordCheck>>,
    pub passed: bool,
    pub tol: f64,
    /// Set when a loss or gradient was non-finite; names the offending path.
    pub failure: Option<String>,
}

impl GradCheckReport {
    fn failed(tol: f64, why: String) -> Self {
        Self {
            max_abs_err: f64::NAN,
            max_rel_err: f64::NAN,
            per_param_errors: BTreeMap::new(),
            passed: false,
            tol,
            failure: Some(why),
        }
    }

    pub fn checked_coords(&self) -> usize {
        self.per_param_errors.values().map(Vec::len).sum()
    }

    /// The coordinate with the largest relative error.
    pub fn worst(&self, floor: f64) -> Option<(&str, CoordCheck)> {
        self.per_param_errors
            .iter()
            .flat_map(|(p, cs)| cs.iter().map(move |c| (p.as_str(), *c)))
            .max_by(|a, b| rel_err(a.1.analytic, a.1.numeric, floor).total_cmp(&rel_err(b.1.analytic, b.1.numeric, floor)))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict}  coords={} max_abs_err={:.3e} max_rel_err={:.3e} tol={:.1e}",
            self.checked_coords(),
            self.max_abs_err,
            self.max_rel_err,
            self.tol
        )?;
        if let Some(why) = &self.failure {
            write!(f, "  ({why})")?;
        }
        Ok(())
    }
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the analytic gradient of the scalar `f` with central
/// differences `(f(p+h) - f(p-h)) / 2h`, one coordinate at a time.
///
/// `f` must be deterministic: any dropout masks or sampled noise have to
/// come from a fixed seed.
pub fn grad_check<F>(f: F, params: &ParamStore, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Bound) -> Result<Tensor>,
{
    let bound = params.bind();
    let loss = f(&bound)?;
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    if !loss.data()[0].is_finite() {
        return Ok(GradCheckReport::failed(cfg.tol, "loss".into()));
    }
    loss.backward()?;
    let grads = bound.grads();
    for ((_, e), g) in params.iter().zip(&grads) {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Ok(GradCheckReport::failed(cfg.tol, format!("{}[{i}] analytic gradient", e.path)));
        }
    }

    let total = params.num_values();
    let coords: Vec<usize> = match cfg.samples {
        Some(n) if n < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut picked = sample(&mut rng, total, n).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..total).collect(),
    };
    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, (_, e)| {
            let start = *acc;
            *acc += e.values.len();
            Some(start)
        })
        .collect();

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        per_param_errors: BTreeMap::new(),
        passed: true,
        tol: cfg.tol,
        failure: None,
    };
    let eval = |store: &ParamStore| -> Result<f64> { f(&store.bind_frozen())?.item() };
    for flat in coords {
        let p = offsets.partition_point(|&o| o <= flat) - 1;
        let idx = flat - offsets[p];
        let id = params.ids().nth(p).expect("offset table matches store");
        let path = &params.entry(id).path;
        let orig = params.entry(id).values[idx];

        work.values_mut(id)[idx] = orig + cfg.h;
        let up = eval(&work)?;
        work.values_mut(id)[idx] = orig - cfg.h;
        let down = eval(&work)?;
        work.values_mut(id)[idx] = orig;

        let numeric = (up - down) / (2.0 * cfg.h);
        if !numeric.is_finite() {
            return Ok(GradCheckReport::failed(cfg.tol, format!("{path}[{idx}] numeric gradient")));
        }
        let analytic = grads[p][idx];
        report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
        report.max_rel_err = report.max_rel_err.max(rel_err(analytic, numeric, cfg.floor));
        report.per_param_errors.entry(path.clone()).or_default().push(CoordCheck {
            index: idx,
            analytic,
            numeric,
        });
    }
    report.passed = report.max_rel_err <= cfg.tol;
    Ok(report)
}
