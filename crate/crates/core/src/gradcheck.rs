//! Central-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet};
use crate::tape::{Tape, Var};

/// Worst entry found for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.violations == 0)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.violations > 0)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Evaluates `f` on a fresh tape and returns the scalar value.
pub fn evaluate<F>(f: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.value(loss).to_scalar()
}

/// Analytic gradients of `f` at `params`.
pub fn analytic_gradients<F>(f: &F, params: &ParamSet) -> Result<Gradients>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.backward(loss, params)
}

/// Compares backward() against central differences for every entry of every
/// parameter. Entries whose relative error exceeds `tol` are counted as
/// violations.
pub fn finite_diff_check<F>(f: F, params: &ParamSet, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, params)?;
    compare_with_numeric(&f, params, &analytic, step, tol)
}

/// Same as [`finite_diff_check`] but against caller-supplied analytic
/// gradients, so a corrupted gradient can be verified to be caught.
pub fn compare_with_numeric<F>(
    f: &F,
    params: &ParamSet,
    analytic: &Gradients,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let first = evaluate(f, params)?;
    let second = evaluate(f, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        tol,
        params: Vec::with_capacity(params.len()),
    };
    for p in params.iter() {
        let grad = analytic
            .get(&p.name)
            .ok_or_else(|| Error::contract(format!("no analytic gradient for {}", p.name)))?;
        let mut check = ParamCheck {
            name: p.name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            violations: 0,
        };
        for i in 0..p.value.len() {
            let orig = p.value.data()[i];
            work.value_mut(&p.name)?.data_mut()[i] = orig + step;
            let plus = evaluate(f, &work)?;
            work.value_mut(&p.name)?.data_mut()[i] = orig - step;
            let minus = evaluate(f, &work)?;
            work.value_mut(&p.name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if err > tol {
                check.violations += 1;
            }
            if err > check.max_rel_error || i == 0 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
