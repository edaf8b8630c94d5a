//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! the backward rules it checks.

use super::ops::Ctx;
use super::optim::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Whether two derivative estimates agree at relative tolerance `REL_TOL`
/// with an absolute floor of `ABS_FLOOR`.
pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_FLOOR || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

fn eval(store: &ParamStore, forward: &impl Fn(&mut Ctx<'_>) -> Result<Var>) -> Result<f64> {
    let mut ctx = Ctx::new(Tape::new(), store, true);
    let root = forward(&mut ctx)?;
    Ok(ctx.tape.value(root).data()[0])
}

/// Compares tape gradients of the scalar produced by `forward` against
/// central differences for every entry of the listed parameters.
pub fn check(
    store: &ParamStore,
    params: &[ParamId],
    forward: impl Fn(&mut Ctx<'_>) -> Result<Var>,
) -> Result<GradCheckReport> {
    let grads = {
        let mut ctx = Ctx::new(Tape::new(), store, true);
        let root = forward(&mut ctx)?;
        ctx.tape.backward(root)?
    };
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for &id in params {
        let shape = store.tensor(id).shape();
        let analytic = grads.get_or_zero(id, shape);
        for i in 0..analytic.len() {
            let orig = store.tensor(id).data()[i];
            probe.get_mut(id).tensor.data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe, &forward)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe, &forward)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            report.checked += 1;
            let scale = a.abs().max(numeric.abs());
            if scale > ABS_FLOOR {
                report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / scale);
            }
            if !agrees(a, numeric) {
                report.mismatches.push(Mismatch {
                    param: store.get(id).name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
