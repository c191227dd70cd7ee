//! Central finite-difference probes for checking analytic gradients.

use rand::Rng;

use super::Parameters;

pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error over `probes` random parameter coordinates.
pub fn probe_params<P, R>(params: &P, grad: &P, loss: impl Fn(&P) -> f64, probes: usize, rng: &mut R) -> f64
where
    P: Parameters + Clone,
    R: Rng + ?Sized,
{
    let sizes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let total: usize = sizes.iter().sum();
    let grads = grad.slices();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let mut flat = rng.gen_range(0..total);
        let mut slice = 0;
        while flat >= sizes[slice] {
            flat -= sizes[slice];
            slice += 1;
        }
        let at = |delta: f64| {
            let mut p = params.clone();
            p.slices_mut()[slice][flat] += delta;
            loss(&p)
        };
        let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grads[slice][flat], numeric));
    }
    worst
}

/// Same as [`probe_params`] for a plain input vector.
pub fn probe_input<R: Rng + ?Sized>(
    x: &[f64],
    grad: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    probes: usize,
    rng: &mut R,
) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.gen_range(0..x.len());
        let at = |delta: f64| {
            let mut v = x.to_vec();
            v[i] += delta;
            loss(&v)
        };
        let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn exact_gradient_of_a_quadratic() {
        let x = [1.0, -2.0, 0.5];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let err = probe_input(&x, &grad, |v| v.iter().map(|a| a * a).sum(), 20, &mut rng_for(0, &[]));
        assert!(err < 1e-8);
        let wrong: Vec<f64> = grad.iter().map(|g| g * 1.1).collect();
        assert!(probe_input(&x, &wrong, |v| v.iter().map(|a| a * a).sum(), 20, &mut rng_for(0, &[])) > 0.05);
    }
}
