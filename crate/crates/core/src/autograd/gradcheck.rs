//! Finite-difference verification of tape gradients.
//!
//! Primitives use the two-point central difference with [`FD_STEP`].
//! Composite networks use the four-point (fourth-order) central stencil,
//! whose roundoff floor stays well below the gradients of deep layers.
//! When a stencil crosses a non-smooth point (a ReLU sign flip, a changed
//! gather, a flipped label) the step is quartered until every probe shares
//! the base evaluation's [`Graph::signature`]. Coordinates that never settle
//! are counted as unresolved and still contribute their error.

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Initial step of the fourth-order stencil.
pub const FD_STEP_4: f64 = 1e-3;
/// Number of step reductions tried when a stencil crosses a kink.
const MAX_REDUCTIONS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stencil {
    /// `(f(h) - f(-h)) / 2h`.
    Central2 { h: f64 },
    /// `(8(f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h`.
    Central4 { h: f64 },
}

impl Stencil {
    pub const PRIMITIVE: Stencil = Stencil::Central2 { h: FD_STEP };
    pub const COMPOSITE: Stencil = Stencil::Central4 { h: FD_STEP_4 };
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinates that needed a smaller step to stay on one smooth piece.
    pub reduced: usize,
    /// Coordinates whose stencil crossed a kink at every step tried.
    pub unresolved: usize,
}

impl GradReport {
    fn record(&mut self, analytic: f64, probe: Probe) {
        self.coordinates += 1;
        self.max_rel_error = self
            .max_rel_error
            .max(rel_error(analytic, probe.derivative));
        match probe.reductions {
            0 => {}
            r if r > MAX_REDUCTIONS => self.unresolved += 1,
            _ => self.reduced += 1,
        }
    }

    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            coordinates: self.coordinates + other.coordinates,
            reduced: self.reduced + other.reduced,
            unresolved: self.unresolved + other.unresolved,
        }
    }
}

struct Probe {
    derivative: f64,
    reductions: u32,
}

fn scalar_of(g: &Graph<'_>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "gradcheck function must return a scalar, got {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

/// Central difference of `eval(offset)` at 0, shrinking the step on kinks.
fn probe<E>(stencil: Stencil, base_sig: u64, eval: E) -> Result<Probe>
where
    E: Fn(f64) -> Result<(f64, u64)>,
{
    let (mut h, four) = match stencil {
        Stencil::Central2 { h } => (h, false),
        Stencil::Central4 { h } => (h, true),
    };
    let mut last = 0.0;
    for reductions in 0..=MAX_REDUCTIONS {
        let (fp, sp) = eval(h)?;
        let (fm, sm) = eval(-h)?;
        let mut smooth = sp == base_sig && sm == base_sig;
        if four {
            let (fp2, sp2) = eval(2.0 * h)?;
            let (fm2, sm2) = eval(-2.0 * h)?;
            smooth &= sp2 == base_sig && sm2 == base_sig;
            last = (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * h);
        } else {
            last = (fp - fm) / (2.0 * h);
        }
        if smooth {
            return Ok(Probe {
                derivative: last,
                reductions,
            });
        }
        h /= 4.0;
    }
    Ok(Probe {
        derivative: last,
        reductions: MAX_REDUCTIONS + 1,
    })
}

/// Full report for the gradient of `f` with respect to its input `x`.
pub fn gradcheck_report<F>(store: &ParamStore, x: &Tensor, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
{
    gradcheck_report_with(Stencil::PRIMITIVE, store, x, f)
}

pub fn gradcheck_report_with<F>(
    stencil: Stencil,
    store: &ParamStore,
    x: &Tensor,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let xv = g.input(x.clone());
    let out = f(&mut g, xv)?;
    scalar_of(&g, out)?;
    let base_sig = g.signature();
    let analytic = g.backward(out)?.wrt(&g, xv);

    let eval = |t: Tensor| -> Result<(f64, u64)> {
        let mut g = Graph::new(store);
        let xv = g.input(t);
        let out = f(&mut g, xv)?;
        Ok((scalar_of(&g, out)?, g.signature()))
    };
    let mut report = GradReport::default();
    for i in 0..x.len() {
        let p = probe(stencil, base_sig, |h| {
            let mut t = x.clone();
            t.data_mut()[i] += h;
            eval(t)
        })?;
        report.record(analytic.data()[i], p);
    }
    Ok(report)
}

/// Max relative error between the tape gradient of `f` at `x` and central differences.
pub fn gradcheck<F>(store: &ParamStore, x: &Tensor, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
{
    Ok(gradcheck_report(store, x, f)?.max_rel_error)
}

/// Same check over every parameter scalar in the store.
pub fn gradcheck_params<F>(store: &ParamStore, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    Ok(gradcheck_params_report(store, usize::MAX, f)?.max_rel_error)
}

/// Parameter gradcheck visiting at most `per_param` evenly strided entries of each tensor.
pub fn gradcheck_params_sampled<F>(store: &ParamStore, per_param: usize, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    Ok(gradcheck_params_report(store, per_param, f)?.max_rel_error)
}

pub fn gradcheck_params_report<F>(store: &ParamStore, per_param: usize, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    gradcheck_params_report_with(Stencil::PRIMITIVE, store, per_param, f)
}

pub fn gradcheck_params_report_with<F>(
    stencil: Stencil,
    store: &ParamStore,
    per_param: usize,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    scalar_of(&g, out)?;
    let base_sig = g.signature();
    let mut analytic = store.clone();
    analytic.zero_grads();
    g.backward(out)?.accumulate_into(&mut analytic);

    let probe_store = std::cell::RefCell::new(store.clone());
    let mut report = GradReport::default();
    for pi in 0..store.len() {
        let id = ParamId::from_index(pi);
        let n = store.get(id).value.len();
        let stride = n.div_ceil(per_param.min(n).max(1));
        for i in (0..n).step_by(stride.max(1)) {
            let orig = store.get(id).value.data()[i];
            let p = probe(stencil, base_sig, |h| {
                probe_store.borrow_mut().value_mut(id).data_mut()[i] = orig + h;
                let st = probe_store.borrow();
                let mut g = Graph::new(&st);
                let o = f(&mut g)?;
                Ok((scalar_of(&g, o)?, g.signature()))
            });
            probe_store.borrow_mut().value_mut(id).data_mut()[i] = orig;
            report.record(analytic.get(id).grad.data()[i], p?);
        }
    }
    Ok(report)
}
