use super::{Tape, Tensor, Var};
use crate::Result;

/// Denominator floor for the relative error, so entries whose analytic and numeric gradients are
/// both near zero are judged by absolute error instead of amplified round-off.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index into the parameter list of the worst entry.
    pub param: usize,
    /// Flat element index within that parameter.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the tape gradient of `forward` with central differences `(f(θ+ε) − f(θ−ε)) / 2ε` for
/// every scalar entry of every parameter.
///
/// `forward` builds the scalar loss on a fresh tape from the parameter vars it is handed (in the
/// order of `params`) and must be deterministic.
pub fn grad_check<F>(params: &[Tensor<f64>], eps: f64, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = ps.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
        let loss = forward(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = eval(params)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().zip(params).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();
    drop(tape);

    let mut report =
        GradCheckReport { max_rel_error: 0.0, param: 0, index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut work = params.to_vec();
    for p in 0..params.len() {
        for i in 0..params[p].numel() {
            let orig = params[p].as_slice()[i];
            work[p].as_mut_slice()[i] = orig + eps;
            let (t, _, l) = eval(&work)?;
            let plus = t.value(l).item();
            work[p].as_mut_slice()[i] = orig - eps;
            let (t, _, l) = eval(&work)?;
            let minus = t.value(l).item();
            work[p].as_mut_slice()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].as_slice()[i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report = GradCheckReport { max_rel_error: err, param: p, index: i, analytic: a, numeric, ..report };
            }
        }
    }
    Ok(report)
}
