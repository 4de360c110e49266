//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is an
//! independent oracle for [`Graph::backward`].

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::Module;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is (near) zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the autodiff gradient of `loss_fn` against central differences
/// with step `h` for every coordinate of every trainable parameter.
///
/// `max_coords_per_param` bounds the work for large tensors by checking an
/// evenly strided subset of coordinates.
pub fn check_module<M, F>(
    module: &mut M,
    loss_fn: F,
    h: f64,
    max_coords_per_param: usize,
) -> Result<GradCheckReport>
where
    M: Module,
    F: Fn(&M, &Graph) -> Result<Var>,
{
    let g = Graph::new();
    let loss = loss_fn(module, &g)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Option<Vec<f64>>> = module
        .named_params()
        .iter()
        .map(|(_, p)| {
            p.trainable.then(|| match grads.param(p.id()) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; p.value.numel()],
            })
        })
        .collect();

    let eval = |m: &M| -> Result<f64> {
        let g = Graph::new();
        let l = loss_fn(m, &g)?;
        let v = g.value(l).item()?;
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let n = grad.len();
        let stride = n.div_ceil(max_coords_per_param.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let orig = module.named_params()[pi].1.value.data()[j];
            set_coord(module, pi, j, orig + h);
            let plus = eval(module)?;
            set_coord(module, pi, j, orig - h);
            let minus = eval(module)?;
            set_coord(module, pi, j, orig);
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad[j], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = err;
                report.worst_param = module.named_params()[pi].0.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}

fn set_coord<M: Module>(module: &mut M, pi: usize, j: usize, v: f64) {
    let mut params = module.named_params_mut();
    params[pi].1.value.data_mut()[j] = v;
}
