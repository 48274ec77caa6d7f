//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward function, so it is an
//! oracle independent of the reverse-mode implementation it verifies.

use super::params::{GradMap, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` w.r.t. every
/// scalar in `params` (or at most `max_per_param` evenly spaced entries of
/// each tensor).
pub fn check_params(
    params: &ParamStore,
    analytic: &GradMap,
    mut loss: impl FnMut(&ParamStore) -> f64,
    h: f64,
    max_per_param: usize,
) -> GradCheckReport {
    let floor = 1e-6;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).unwrap().len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = params.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(&name).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report
}
