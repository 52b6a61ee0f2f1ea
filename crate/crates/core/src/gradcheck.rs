//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward function on an
//! inference tape; it never looks at recorded backward rules.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst-case agreement between analytic and numerical gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries that are
/// zero up to rounding from dominating the ratio.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const REL_FLOOR: f64 = 1e-6;

/// Checks d(loss)/d(input) for each tensor in `inputs` and d(loss)/d(param)
/// for each id in `params`, where `f` maps the input leaves to a scalar loss.
pub fn check<F>(store: &mut ParamStore, params: &[ParamId], inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (input_grads, param_grads) = {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
            .collect();
        let loss = f(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        let ig: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| grads.wrt(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        let pg: Vec<Vec<f64>> = params
            .iter()
            .map(|&id| {
                grads
                    .param(id)
                    .map_or_else(|| vec![0.0; store.get(id).numel()], <[f64]>::to_vec)
            })
            .collect();
        (ig, pg)
    };

    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference(store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut record = |a: f64, n: f64| {
        report.max_rel_err = report.max_rel_err.max(relative_error(a, n, REL_FLOOR));
        report.max_abs_err = report.max_abs_err.max((a - n).abs());
        report.checked += 1;
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, analytic) in input_grads.iter().enumerate() {
        for i in 0..work[k].numel() {
            let orig = work[k].values()[i];
            work[k].values_mut()[i] = orig + h;
            let up = eval(store, &work)?;
            work[k].values_mut()[i] = orig - h;
            let down = eval(store, &work)?;
            work[k].values_mut()[i] = orig;
            record(analytic[i], (up - down) / (2.0 * h));
        }
    }
    for (k, &id) in params.iter().enumerate() {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = orig + h;
            let up = eval(store, &work)?;
            store.get_mut(id).values_mut()[i] = orig - h;
            let down = eval(store, &work)?;
            store.get_mut(id).values_mut()[i] = orig;
            record(param_grads[k][i], (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}
