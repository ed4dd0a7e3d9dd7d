use super::graph::{Graph, Var};
use super::tensor::{Gradients, ParamStore};
use super::NnError;

/// Result of comparing backprop against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Denominator floor for the relative error so coordinates whose true
/// gradient is ~0 are judged on absolute error at this scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Checks every parameter coordinate, or at most `max_per_param` evenly
/// strided coordinates of each tensor when given.
pub fn grad_check<F>(
    params: &ParamStore,
    loss: F,
    h: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph) -> Result<Var, NnError>,
{
    let mut grads = Gradients::zeros_like(params);
    {
        let mut g = Graph::new(params);
        let root = loss(&mut g)?;
        g.backward(root, &mut grads)?;
    }
    let eval = |p: &ParamStore| -> Result<f64, NnError> {
        let mut g = Graph::new(p);
        let root = loss(&mut g)?;
        Ok(g.scalar(root))
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let stride = match max_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let orig = params.get(id).values()[k];
            work.get_mut(id).values_mut()[k] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).values_mut()[k] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id)[k];
            let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}
