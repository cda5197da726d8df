use super::{AutodiffError, Tape, Tensor, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over entries of `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    /// `(parameter, entry)` where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

fn eval_scalar<F, E>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var), E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(AutodiffError::Contract("grad_check needs a scalar-valued expression".into()).into());
    }
    Ok((tape, vars, out))
}

/// Checks the tape's gradients of the scalar `f(params)` against the
/// five-point central difference
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h` with `h = eps`.
pub fn grad_check<F, E>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    if !(eps > 0.0) {
        return Err(AutodiffError::Contract(format!("step must be positive, got {eps}")).into());
    }
    let (tape, vars, out) = eval_scalar(&f, params)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, entries: 0 };
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every parameter leaf has a gradient").clone();
        for ei in 0..params[pi].len() {
            let base = params[pi].data()[ei];
            let mut at = |offset: f64| -> Result<f64, E> {
                probe[pi].data_mut()[ei] = base + offset;
                let (t, _, o) = eval_scalar(&f, &probe)?;
                Ok(t.value(o).data()[0])
            };
            let near = at(eps)? - at(-eps)?;
            let far = at(2.0 * eps)? - at(-2.0 * eps)?;
            probe[pi].data_mut()[ei] = base;

            let numeric = (8.0 * near - far) / (12.0 * eps);
            let a = analytic.data()[ei];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(AutodiffError::NonFinite { param: pi, index: ei }.into());
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            report.entries += 1;
            if rel > report.max_rel_error || report.entries == 1 {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
