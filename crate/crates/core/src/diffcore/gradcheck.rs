use super::graph::{Graph, NodeId};
use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    /// Parameter name, or `input[i]` for graph inputs.
    pub name: String,
    /// `max |analytic − numeric| / max(1, |numeric|)` over all elements.
    pub max_rel_error: f64,
    pub exceeds_tolerance: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| !e.exceeds_tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.exceeds_tolerance)
    }
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor], params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, params, &ids)?;
    Ok(g.value(out).item())
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / n.abs().max(1.0)
}

/// Compares reverse-mode gradients of a scalar-valued graph against central
/// differences with the given `step`, for every trainable parameter and every
/// input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], params: &ParamStore, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, params, &ids)?;
    if g.value(out).len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad_check needs a scalar output, got shape {:?}",
            g.value(out).shape()
        )));
    }
    let grads = g.backward(out, &Tensor::scalar(1.0))?;

    let mut entries = Vec::new();
    for (pid, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        let analytic = grads
            .param(pid)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let mut perturbed = params.clone();
        let mut worst: f64 = 0.0;
        for k in 0..p.value.len() {
            let orig = p.value.data()[k];
            perturbed.get_mut(pid).value.data_mut()[k] = orig + step;
            let fp = eval_scalar(&f, inputs, &perturbed)?;
            perturbed.get_mut(pid).value.data_mut()[k] = orig - step;
            let fm = eval_scalar(&f, inputs, &perturbed)?;
            perturbed.get_mut(pid).value.data_mut()[k] = orig;
            worst = worst.max(rel_err(analytic.data()[k], (fp - fm) / (2.0 * step)));
        }
        entries.push(GradCheckEntry {
            name: p.name.clone(),
            max_rel_error: worst,
            exceeds_tolerance: !(worst < tolerance),
        });
    }

    for (idx, (t, &id)) in inputs.iter().zip(&ids).enumerate() {
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        let mut moved = inputs.to_vec();
        let mut worst: f64 = 0.0;
        for k in 0..t.len() {
            let orig = t.data()[k];
            moved[idx].data_mut()[k] = orig + step;
            let fp = eval_scalar(&f, &moved, params)?;
            moved[idx].data_mut()[k] = orig - step;
            let fm = eval_scalar(&f, &moved, params)?;
            moved[idx].data_mut()[k] = orig;
            worst = worst.max(rel_err(analytic.data()[k], (fp - fm) / (2.0 * step)));
        }
        entries.push(GradCheckEntry {
            name: format!("input[{idx}]"),
            max_rel_error: worst,
            exceeds_tolerance: !(worst < tolerance),
        });
    }

    Ok(GradCheckReport { tolerance, entries })
}
