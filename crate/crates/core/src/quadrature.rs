//! Adaptive Gauss-Kronrod quadrature. This is the independent numerical
//! route used to validate every closed-form expectation in the crate, so
//! it deliberately shares no code with the formulas it checks.

use crate::error::{Result, SolverError};
use crate::scalar::Scalar;

// 15-point Kronrod abscissae (positive half) and weights, with the
// embedded 7-point Gauss weights on the odd-indexed abscissae.
const XK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];
const WK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

struct Panel<S> {
    a: S,
    b: S,
    value: S,
    error: S,
}

fn kronrod_panel<S: Scalar, F: Fn(S) -> S>(f: &F, a: S, b: S) -> Panel<S> {
    let center = (a + b) * S::half();
    let half = (b - a) * S::half();
    let mut kronrod = S::zero();
    let mut gauss = S::zero();
    for (idx, (&x, &wk)) in XK.iter().zip(WK.iter()).enumerate() {
        let xs = S::lit(x);
        let wks = S::lit(wk);
        let contrib = if idx == 7 {
            f(center)
        } else {
            f(center - half * xs) + f(center + half * xs)
        };
        kronrod = kronrod + wks * contrib;
        // Gauss nodes are the odd-indexed abscissae plus the center (idx 7).
        if idx % 2 == 1 {
            gauss = gauss + S::lit(WG[idx / 2]) * contrib;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Panel {
        a,
        b,
        value,
        error,
    }
}

/// Integrates f over [a, b] to the requested absolute tolerance by
/// adaptive bisection of Gauss-Kronrod panels. Returns (value, error
/// estimate). Fails if the panel budget is exhausted before the estimate
/// drops below tolerance.
pub fn integrate<S: Scalar, F: Fn(S) -> S>(f: F, a: S, b: S, abs_tol: S) -> Result<(S, S)> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(SolverError::invalid_argument(
            "quadrature endpoints must be finite",
        ));
    }
    if abs_tol <= S::zero() {
        return Err(SolverError::invalid_argument(
            "quadrature tolerance must be positive",
        ));
    }
    if a == b {
        return Ok((S::zero(), S::zero()));
    }
    const MAX_PANELS: usize = 4096;
    let mut panels = vec![kronrod_panel(&f, a, b)];
    loop {
        let total_err: S = panels.iter().map(|p| p.error).sum();
        // the error estimate of an exactly-integrated panel is rounding
        // noise proportional to its magnitude; don't chase below that
        let total_abs: S = panels.iter().map(|p| p.value.abs()).sum();
        let noise_floor = S::epsilon() * S::lit(64.0) * total_abs;
        if total_err <= abs_tol.max(noise_floor) {
            let total: S = panels.iter().map(|p| p.value).sum();
            if !total.is_finite() {
                return Err(SolverError::NumericalBlowup(
                    "non-finite quadrature value".into(),
                ));
            }
            return Ok((total, total_err));
        }
        if panels.len() >= MAX_PANELS {
            return Err(SolverError::NumericalBlowup(format!(
                "quadrature did not reach tolerance: error {:e} after {} panels",
                total_err.as_f64(),
                panels.len()
            )));
        }
        // split the worst panel
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| {
                x.1.error
                    .partial_cmp(&y.1.error)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty panel list");
        let Panel { a, b, .. } = panels.swap_remove(worst);
        let mid = (a + b) * S::half();
        panels.push(kronrod_panel(&f, a, mid));
        panels.push(kronrod_panel(&f, mid, b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let (v, _) = integrate(|x: f64| x * x, 0.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-14);
        let (v, _) = integrate(|x: f64| x.powi(9) - 2.0 * x, -1.0, 3.0, 1e-12).unwrap();
        // antiderivative x^10/10 - x^2 evaluated on [-1, 3]
        let exact = (3.0f64.powi(10) / 10.0 - 9.0) - (0.1 - 1.0);
        assert_relative_eq!(v, exact, max_relative = 1e-13);
    }

    #[test]
    fn oscillatory_integrand_subdivides() {
        let (v, err) = integrate(|x: f64| (20.0 * x).sin(), 0.0, 1.0, 1e-12).unwrap();
        let exact = (1.0 - (20.0f64).cos()) / 20.0;
        assert_relative_eq!(v, exact, epsilon = 1e-12);
        assert!(err <= 1e-12);
    }

    #[test]
    fn gaussian_mass_is_one() {
        let inv_sqrt_2pi = 0.3989422804014327;
        let (v, _) = integrate(
            |x: f64| inv_sqrt_2pi * (-0.5 * x * x).exp(),
            -10.0,
            10.0,
            1e-13,
        )
        .unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(integrate(|x: f64| x, 0.0, f64::INFINITY, 1e-10).is_err());
        assert!(integrate(|x: f64| x, 0.0, 1.0, 0.0).is_err());
        let (v, e) = integrate(|x: f64| x, 2.0, 2.0, 1e-10).unwrap();
        assert_eq!((v, e), (0.0, 0.0));
    }

    #[test]
    fn single_precision_smoke() {
        let (v, _) = integrate(|x: f32| x * x, 0.0f32, 1.0, 1e-5).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }
}
