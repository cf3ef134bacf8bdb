//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::ParamStore;

pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-8)`.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub analytic_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Anything that owns the parameters a grad check perturbs.
pub trait HasParams: Clone {
    fn params(&self) -> &ParamStore<f64>;
    fn params_mut(&mut self) -> &mut ParamStore<f64>;
}

impl HasParams for ParamStore<f64> {
    fn params(&self) -> &ParamStore<f64> {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        self
    }
}

/// Compares backward-pass gradients of `loss_fn` against central differences
/// with step [`FD_STEP`]. The closure must be deterministic: a graph that
/// applied dropout is rejected.
pub fn grad_check<S, F>(loss_fn: F, params: &S, tolerance: f64) -> Result<GradCheckReport>
where
    S: HasParams,
    F: for<'p> Fn(&'p S, &mut Graph<'p, f64>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new();
        let loss = loss_fn(params, &mut g)?;
        if g.is_stochastic() {
            return Err(Error::usage("grad_check needs a deterministic closure (dropout applied)"));
        }
        g.backward(loss)?
    };
    let eval = |p: &S| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(p, &mut g)?;
        Ok(g.value(loss).item())
    };

    let mut work = params.clone();
    let mut checks = Vec::new();
    for (name, grad) in analytic.iter() {
        let mut diff_sq = 0.0;
        let mut num_sq = 0.0;
        let mut max_abs = 0.0f64;
        for i in 0..grad.len() {
            let orig = work.params().get(name).expect("gradient names come from params").data()[i];
            work.params_mut().get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let plus = eval(&work)?;
            work.params_mut().get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let minus = eval(&work)?;
            work.params_mut().get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let d = grad.data()[i] - numeric;
            diff_sq += d * d;
            num_sq += numeric * numeric;
            max_abs = max_abs.max(d.abs());
        }
        let a_norm = grad.norm();
        let denom = a_norm.max(num_sq.sqrt()).max(1e-8);
        checks.push(ParamCheck {
            name: name.clone(),
            rel_error: diff_sq.sqrt() / denom,
            max_abs_error: max_abs,
            analytic_norm: a_norm,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < tolerance,
        params: checks,
        max_rel_error,
        tolerance,
    })
}
