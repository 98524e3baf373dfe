use super::tape::{ParamId, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so components whose true derivative is
/// zero are judged by absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub passed: bool,
    pub max_rel_error: f64,
    /// `(input index, component index)` of the worst component.
    pub worst: Option<(usize, usize)>,
    pub components: usize,
    /// Components whose `±h` evaluations took a different branch (ReLU side, max-row
    /// pick or gathered rows) than the base point; their central differences straddle
    /// a kink and are not meaningful.
    pub branch_changes: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval_scalar<F>(f: &F, point: &[Tensor]) -> Result<(Tape, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(ParamId(i), t))
        .collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::invalid("grad_check", "function must be scalar-valued"));
    }
    Ok((tape, out))
}

/// Compares `backward` gradients of `f` at `point` with central differences of step `h`.
/// Input `i` of `f` is recorded as `ParamId(i)`.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64, tol: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::invalid("grad_check", format!("step {h} outside (0, 1e-2]")));
    }
    let (tape, out) = eval_scalar(&f, point)?;
    let f0 = tape.value(out).data()[0];
    if !f0.is_finite() {
        return Err(Error::NonFinite("function value at the base point".into()));
    }
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        passed: true,
        max_rel_error: 0.0,
        worst: None,
        components: 0,
        branch_changes: 0,
    };
    let base_sig = tape.branch_signature();
    let mut work: Vec<Tensor> = point.to_vec();
    for (i, t) in point.iter().enumerate() {
        let analytic = grads.get(ParamId(i));
        for j in 0..t.len() {
            let a = analytic.map_or(0.0, |g| g.data()[j]);
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient of input {i}[{j}]")));
            }
            let base = t.data()[j];
            work[i].data_mut()[j] = base + h;
            let (plus, sig_plus) = eval_value(&f, &work)?;
            work[i].data_mut()[j] = base - h;
            let (minus, sig_minus) = eval_value(&f, &work)?;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.branch_changes += 1;
            }
            work[i].data_mut()[j] = base;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("perturbed value of input {i}[{j}]")));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.components += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some((i, j));
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

fn eval_value<F>(f: &F, point: &[Tensor]) -> Result<(f64, Vec<usize>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, out) = eval_scalar(f, point)?;
    Ok((tape.value(out).data()[0], tape.branch_signature()))
}
