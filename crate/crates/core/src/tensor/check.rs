use qd::Quad;

use crate::error::{Error, Result};

use super::array::Tensor;
use super::graph::{Graph, NodeId};
use super::real::Real;

/// Worst disagreement found by a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// A scalar loss that can be built over any element type.
pub trait Objective {
    fn build<T: Real>(&self, g: &mut Graph<'_, T>, params: &[NodeId]) -> Result<NodeId>;
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    Ok(())
}

fn analytic_grads<F>(f: F, params: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let nodes: Vec<NodeId> = params.iter().map(|p| g.leaf(p)).collect();
    let loss = f(&mut g, &nodes)?;
    let grads = g.backward(loss)?;
    Ok(nodes.iter().map(|&n| grads.wrt(n)).collect())
}

fn eval<T: Real, F>(f: &F, ps: &[Tensor<T>]) -> Result<T>
where
    F: for<'g> Fn(&mut Graph<'g, T>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let nodes: Vec<NodeId> = ps.iter().map(|p| g.leaf(p)).collect();
    let loss = f(&mut g, &nodes)?;
    Ok(g.value(loss).item())
}

/// Central differences of `f` over every entry of `work`, compared with
/// `analytic`.
fn compare<T: Real, F>(f: F, mut work: Vec<Tensor<T>>, analytic: &[Tensor<f64>], step: f64) -> Result<FdReport>
where
    F: for<'g> Fn(&mut Graph<'g, T>, &[NodeId]) -> Result<NodeId>,
{
    let h = T::lit(step);
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for pi in 0..work.len() {
        for ei in 0..work[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let up = eval(&f, &work)?;
            work[pi].data_mut()[ei] = orig - h;
            let down = eval(&f, &work)?;
            work[pi].data_mut()[ei] = orig;

            let n = ((up - down) / (h + h)).as_f64();
            let a = analytic[pi].data()[ei];
            if !(n.is_finite() && a.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite gradient at parameter {pi} entry {ei}: analytic {a}, numeric {n}"
                )));
            }
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report = FdReport {
                    max_rel_error: rel,
                    worst: (pi, ei),
                    analytic: a,
                    numeric: n,
                };
            }
        }
    }
    Ok(report)
}

/// Compares reverse-mode gradients against central differences.
///
/// `f` receives a fresh graph plus one leaf per parameter and must return a
/// scalar loss node. For every parameter entry the numeric estimate is
/// `(f(p + h) - f(p - h)) / 2h`; the relative error is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor<f64>], step: f64) -> Result<FdReport>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[NodeId]) -> Result<NodeId>,
{
    check_step(step)?;
    let analytic = analytic_grads(&f, params)?;
    compare(f, params.to_vec(), &analytic, step)
}

/// [`finite_diff_check`] with the perturbed losses evaluated in
/// double-double arithmetic.
///
/// A whole-model loss of size `L` carries roughly `eps * L` of rounding, which
/// after dividing by `2h` swamps gradients near the `1e-8` floor. Evaluating
/// the reference side in about 106 bits removes that noise; the analytic
/// gradients under test are still plain `f64`.
pub fn finite_diff_check_extended<O: Objective>(objective: &O, params: &[Tensor<f64>], step: f64) -> Result<FdReport> {
    check_step(step)?;
    let analytic = analytic_grads(|g, p| objective.build(g, p), params)?;
    let work: Vec<Tensor<Quad>> = params.iter().map(Tensor::cast).collect();
    compare(|g: &mut Graph<'_, Quad>, p: &[NodeId]| objective.build(g, p), work, &analytic, step)
}
