//! Central finite-difference gradient checking.
//!
//! The error for one coordinate is
//! `|analytic − (f(x+ε) − f(x−ε)) / 2ε| / max(1, |analytic|)`.
//! Coordinates whose ±ε probes land on different sides of a ReLU or
//! clamp kink (detected through [`Graph::kink_signature`]) are reported
//! in [`GradCheckReport::excluded`] instead of being scored.

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub tensor: String,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
    pub excluded: Vec<Coordinate>,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            excluded: Vec::new(),
        }
    }

    fn record(&mut self, coord: Coordinate, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some(coord);
        }
    }

    /// Merge another report, keeping the larger error.
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.excluded.extend(other.excluded);
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

struct Probe {
    loss: f64,
    kinks: Vec<bool>,
}

fn finish(g: &Graph, loss: Var) -> Result<Probe> {
    if g.shape(loss) != (1, 1) {
        return Err(Error::shape(
            "finite_diff_check",
            format!("function must return a scalar, got {:?}", g.shape(loss)),
        ));
    }
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "finite_diff_check: non-finite loss {value}"
        )));
    }
    Ok(Probe {
        loss: value,
        kinks: g.kink_signature().to_vec(),
    })
}

fn score(
    report: &mut GradCheckReport,
    coord: Coordinate,
    analytic: f64,
    plus: Probe,
    minus: Probe,
    eps: f64,
) {
    if plus.kinks != minus.kinks {
        report.excluded.push(coord);
        return;
    }
    let numeric = (plus.loss - minus.loss) / (2.0 * eps);
    report.record(coord, analytic, numeric);
}

/// Checks `f` with respect to free inputs.
pub fn finite_diff_check<F>(f: F, inputs: &[Matrix], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_inputs_in(None, f, inputs, eps)
}

/// As [`finite_diff_check`], with `store` bound so `f` may use parameters.
pub fn check_inputs<F>(
    store: &ParameterStore,
    f: F,
    inputs: &[Matrix],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_inputs_in(Some(store), f, inputs, eps)
}

fn check_inputs_in<F>(
    store: Option<&ParameterStore>,
    f: F,
    inputs: &[Matrix],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let graph = || match store {
        Some(s) => Graph::with_params(s),
        None => Graph::new(),
    };
    let eval = |values: &[Matrix]| -> Result<Probe> {
        let mut g = graph();
        let vars: Vec<Var> = values.iter().map(|m| g.input(m.clone())).collect();
        let loss = f(&mut g, &vars)?;
        finish(&g, loss)
    };

    let mut g = graph();
    let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
    let loss = f(&mut g, &vars)?;
    finish(&g, loss)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport::new();
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        let analytic = grads
            .input(k)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(inputs[k].rows(), inputs[k].cols()));
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].as_slice()[idx];
            probe[k].as_mut_slice()[idx] = orig + eps;
            let plus = eval(&probe)?;
            probe[k].as_mut_slice()[idx] = orig - eps;
            let minus = eval(&probe)?;
            probe[k].as_mut_slice()[idx] = orig;
            let coord = Coordinate {
                tensor: format!("input{k}"),
                index: idx,
            };
            score(&mut report, coord, analytic.as_slice()[idx], plus, minus, eps);
        }
    }
    Ok(report)
}

/// Checks `f` with respect to every coordinate of every parameter in
/// `store` whose name passes `select`.
pub fn check_parameters<F>(
    store: &ParameterStore,
    f: F,
    eps: f64,
    select: impl Fn(&str) -> bool,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::with_params(store);
        let loss = f(&mut g)?;
        finish(&g, loss)?;
        g.backward(loss)?
    };

    let mut probe = store.clone();
    let eval = |s: &ParameterStore| -> Result<Probe> {
        let mut g = Graph::with_params(s);
        let loss = f(&mut g)?;
        finish(&g, loss)
    };

    let mut report = GradCheckReport::new();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let param = store.get(id);
        if !select(&param.name) {
            continue;
        }
        let analytic = grads.param_dense(id, param.tensor.shape());
        for idx in 0..param.tensor.value.len() {
            let orig = param.tensor.value.as_slice()[idx];
            probe.value_mut(id).as_mut_slice()[idx] = orig + eps;
            let plus = eval(&probe)?;
            probe.value_mut(id).as_mut_slice()[idx] = orig - eps;
            let minus = eval(&probe)?;
            probe.value_mut(id).as_mut_slice()[idx] = orig;
            let coord = Coordinate {
                tensor: param.name.clone(),
                index: idx,
            };
            score(&mut report, coord, analytic.as_slice()[idx], plus, minus, eps);
        }
    }
    Ok(report)
}
