//! Finite-difference gradient checking.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Max relative error between an analytic gradient and central differences.
///
/// `f` must be a deterministic scalar function of `x` (dropout disabled); two
/// evaluations at `x` are compared and a mismatch is a contract error.
/// `analytic` is the caller-computed gradient of `f` at `x`. The returned
/// value is `max_i |a_i - c_i| / (|a_i| + |c_i| + 1e-8)` where `c` is the
/// central difference with step `h`.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor, analytic: &[f32], h: f32) -> Result<f32>
where
    F: FnMut(&Tensor) -> Result<f32>,
{
    if !(1e-5..=1e-2).contains(&h) {
        return Err(Error::Contract(format!("step {h} outside [1e-5, 1e-2]")));
    }
    if analytic.len() != x.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{} gradient entries for {} coordinates", analytic.len(), x.len()),
        ));
    }
    let base0 = f(x)?;
    let base1 = f(x)?;
    if base0 != base1 {
        return Err(Error::Contract(format!(
            "function is not deterministic at x: {base0} vs {base1}"
        )));
    }
    let mut worst = 0.0f32;
    for i in 0..x.len() {
        let central = central_difference(&mut f, x, i, h)?;
        let a = analytic[i];
        let err = (a - central).abs() / (a.abs() + central.abs() + 1e-8);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

/// Same check restricted to a subset of coordinates; used on large models
/// where probing every coordinate is wasteful.
pub fn finite_diff_check_coords<F>(
    mut f: F,
    x: &Tensor,
    analytic: &[f32],
    coords: &[usize],
    h: f32,
) -> Result<f32>
where
    F: FnMut(&Tensor) -> Result<f32>,
{
    if analytic.len() != x.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{} gradient entries for {} coordinates", analytic.len(), x.len()),
        ));
    }
    let base0 = f(x)?;
    let base1 = f(x)?;
    if base0 != base1 {
        return Err(Error::Contract(format!(
            "function is not deterministic at x: {base0} vs {base1}"
        )));
    }
    let mut worst = 0.0f32;
    for &i in coords {
        if i >= x.len() {
            return Err(Error::Contract(format!("coordinate {i} out of range")));
        }
        let central = central_difference(&mut f, x, i, h)?;
        let a = analytic[i];
        let err = (a - central).abs() / (a.abs() + central.abs() + 1e-8);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

fn central_difference<F>(f: &mut F, x: &Tensor, i: usize, h: f32) -> Result<f32>
where
    F: FnMut(&Tensor) -> Result<f32>,
{
    let mut plus: Vec<f32> = x.data().to_vec();
    plus[i] += h;
    let mut minus: Vec<f32> = x.data().to_vec();
    minus[i] -= h;
    let xp = Tensor::build(x.shape(), plus, x.requires_grad())?;
    let xm = Tensor::build(x.shape(), minus, x.requires_grad())?;
    Ok((f(&xp)? - f(&xm)?) / (2.0 * h))
}
