use crate::error::Result;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison over every checked element.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_leaf: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn eval_loss<F>(leaves: &[Tensor<f64>], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.value(loss).item()
}

/// Compares tape gradients against central finite differences for every
/// element of every leaf. `build` must be a pure function of the leaf
/// values: it is re-run twice per element with one entry perturbed.
///
/// The step is `1e-5 * max(1, |x|)` per element; relative error uses
/// `max(|analytic|, |numeric|, 1e-6)` as the denominator.
pub fn check_gradients<F>(
    leaves: &[Tensor<f64>],
    tolerance: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_default())
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst_leaf: 0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        tolerance,
    };
    let mut perturbed: Vec<Tensor<f64>> = leaves.to_vec();
    for (leaf_idx, leaf) in leaves.iter().enumerate() {
        for elem_idx in 0..leaf.numel() {
            let x = leaf.data()[elem_idx];
            let h = 1e-5 * x.abs().max(1.0);
            perturbed[leaf_idx].data_mut()[elem_idx] = x + h;
            let f_plus = eval_loss(&perturbed, &build)?;
            perturbed[leaf_idx].data_mut()[elem_idx] = x - h;
            let f_minus = eval_loss(&perturbed, &build)?;
            perturbed[leaf_idx].data_mut()[elem_idx] = x;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[leaf_idx][elem_idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_leaf = leaf_idx;
                report.worst_index = elem_idx;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
