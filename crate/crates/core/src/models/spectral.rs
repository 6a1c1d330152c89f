//! Power-iteration estimate of a weight matrix's largest singular value.

use coloc_autograd::{Float, Tensor, Var};

/// Result of [`spectral_normalize`].
#[derive(Clone, Debug)]
pub struct SpectralOutcome<T: Float> {
    pub normalized: Tensor<T>,
    /// Updated left singular vector estimate (length `out`).
    pub u: Tensor<T>,
    pub sigma: T,
    /// Set when the weight is (numerically) zero; the weight is returned as is.
    pub degenerate: bool,
}

/// Layout of the output dimension inside a 2-D weight view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum OutAxis {
    /// `[out, rest]`
    Rows,
    /// `[rest, out]`, the layout of conv and linear weights here.
    Cols,
}

fn unit<T: Float>(v: Tensor<T>) -> Option<Tensor<T>> {
    let norm = v.data().iter().map(|a| *a * *a).sum::<T>().sqrt();
    if !(norm > T::of(1e-30)) {
        return None;
    }
    Some(v.map(|a| a / norm))
}

/// Runs `iterations` power steps from `u`; returns `(u, v, sigma)` with
/// `sigma = uᵀ W v`. Zero iterations keeps `u` and only derives `v`.
pub(crate) fn power_iteration<T: Float>(
    m: &Tensor<T>,
    axis: OutAxis,
    u: &Tensor<T>,
    iterations: usize,
) -> Option<(Tensor<T>, Tensor<T>, T)> {
    let out = u.numel();
    let col = |t: &Tensor<T>| t.reshape(vec![t.numel(), 1]);
    // W^T u and W v for the two layouts.
    let wt_u = |u: &Tensor<T>| match axis {
        OutAxis::Rows => m.matmul(&col(u), true, false),
        OutAxis::Cols => m.matmul(&col(u), false, false),
    };
    let w_v = |v: &Tensor<T>| match axis {
        OutAxis::Rows => m.matmul(&col(v), false, false),
        OutAxis::Cols => m.matmul(&col(v), true, false),
    };
    let mut u = unit(u.reshape(vec![out]))?;
    let mut v = unit(wt_u(&u))?;
    for _ in 0..iterations {
        u = unit(w_v(&v))?.reshape(vec![out]);
        v = unit(wt_u(&u))?;
    }
    let wv = w_v(&v);
    let sigma: T = wv.data().iter().zip(u.data()).map(|(a, b)| *a * *b).sum();
    if !(sigma.abs() > T::of(1e-30)) {
        return None;
    }
    Some((u, v.reshape(vec![v.numel()]), sigma))
}

/// Divides `weight` (`[out, rest]`) by its power-iteration spectral norm.
pub fn spectral_normalize<T: Float>(
    weight: &Tensor<T>,
    u: &Tensor<T>,
    iterations: usize,
) -> SpectralOutcome<T> {
    assert_eq!(weight.rank(), 2, "spectral_normalize expects a 2-D weight");
    assert_eq!(
        u.numel(),
        weight.shape()[0],
        "state length must equal the output dimension"
    );
    match power_iteration(weight, OutAxis::Rows, u, iterations) {
        Some((u, _, sigma)) => SpectralOutcome {
            normalized: weight.map(|w| w / sigma),
            u,
            sigma,
            degenerate: false,
        },
        None => {
            log::warn!("spectral normalization of a zero weight matrix; left unnormalized");
            SpectralOutcome {
                normalized: weight.clone(),
                u: u.clone(),
                sigma: T::one(),
                degenerate: true,
            }
        }
    }
}

/// Differentiable `w / sigma(w)` for a `[.., out]` weight, with `u` and `v`
/// held constant. Returns the normalized weight and the new `u`, or `None`
/// for a zero weight.
pub(crate) fn normalize_var<T: Float>(
    w: &Var<T>,
    u: &Tensor<T>,
    iterations: usize,
) -> Option<(Var<T>, Tensor<T>)> {
    let out = *w.shape().last().expect("weight has rank >= 1");
    let rest = w.value().numel() / out;
    let m = w.value().reshape(vec![rest, out]);
    let (u, v, _) = power_iteration(&m, OutAxis::Cols, u, iterations)?;
    let uc = Var::constant(u.reshape(vec![out, 1]));
    let vc = Var::constant(v.reshape(vec![rest, 1]));
    let sigma = w.reshape(vec![rest, out]).matmul(&uc).mul(&vc).sum_all();
    let inv = sigma.powf(-T::one()).reshape(vec![1]);
    Some((w.mul(&inv), u))
}
