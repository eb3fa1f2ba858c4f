use super::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - central| / max(1, |central|)`.
    pub max_rel_error: f64,
    /// Coordinates whose `±eps` perturbation flips a branch of a piecewise op
    /// (relu, smooth-L1); the central difference straddles a kink there.
    pub excluded: Vec<usize>,
    pub checked: usize,
}

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences with step `eps`.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut g = Graph::new(Mode::Train);
    g.trace_branches();
    let x = g.input(input.clone());
    let y = f(&mut g, x)?;
    if g.value(y).numel() != 1 {
        return Err(Error::NonScalar(g.shape(y).to_vec()));
    }
    let base_trace = g.take_branch_trace();
    g.backward(y, &Tensor::full(g.shape(y), 1.0))?;
    let analytic = g
        .grad(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));

    let eval = |t: Tensor| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new(Mode::Eval);
        g.trace_branches();
        let x = g.input(t);
        let y = f(&mut g, x)?;
        Ok((g.value(y).data()[0], g.take_branch_trace()))
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, excluded: Vec::new(), checked: 0 };
    for i in 0..input.numel() {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let (fp, tp) = eval(plus)?;
        let (fm, tm) = eval(minus)?;
        if tp != base_trace || tm != base_trace {
            report.excluded.push(i);
            continue;
        }
        let central = (fp - fm) / (2.0 * eps);
        let err = (analytic.data()[i] - central).abs() / central.abs().max(1.0);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
