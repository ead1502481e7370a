use super::ParamStore;
use crate::error::{Error, Result};

/// Worst coordinate found by [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares `analytic` gradients with central differences of `f` at `params`.
///
/// The error for a coordinate is `|analytic - numeric| / max(1, |numeric|)`;
/// the report carries the maximum over all coordinates.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &ParamStore,
    analytic: &ParamStore,
    eps: f64,
) -> Result<FdReport>
where
    F: FnMut(&ParamStore) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    params.ensure_same_layout(analytic)?;
    let mut probe = params.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let len = params.get(name).unwrap().len();
        let grad = analytic.get(name).unwrap();
        for i in 0..len {
            let x0 = params.get(name).unwrap().as_slice()[i];
            probe.get_mut(name).unwrap().as_mut_slice()[i] = x0 + eps;
            let up = f(&probe);
            probe.get_mut(name).unwrap().as_mut_slice()[i] = x0 - eps;
            let down = f(&probe);
            probe.get_mut(name).unwrap().as_mut_slice()[i] = x0;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at {name}[{i}] (f+ = {up}, f- = {down})"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.as_slice()[i];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report = FdReport {
                    max_rel_error: err.max(report.max_rel_error),
                    worst_param: name.clone(),
                    worst_index: i,
                    analytic: a,
                    numeric,
                    coordinates: report.coordinates,
                };
            }
        }
    }
    Ok(report)
}
