//! Cancellation-free scalar functions used by the closed-form solutions.

/// `sinh(y) - y`.
pub(crate) fn sinh_minus_id(y: f64) -> f64 {
    if y.abs() < 0.5 {
        // y^3/3! + y^5/5! + ...
        let y2 = y * y;
        let mut term = y * y2 / 6.0;
        let mut sum = 0.0f64;
        let mut n = 3.0;
        while term.abs() > 1e-18 * sum.abs().max(f64::MIN_POSITIVE) {
            sum += term;
            term *= y2 / ((n + 1.0) * (n + 2.0));
            n += 2.0;
        }
        sum
    } else {
        y.sinh() - y
    }
}

/// `cosh(y) - 1`.
pub(crate) fn cosh_minus_one(y: f64) -> f64 {
    let s = (0.5 * y).sinh();
    2.0 * s * s
}

/// `e^{-y} - 1 + y`.
pub(crate) fn exp_neg_ramp(y: f64) -> f64 {
    if y.abs() < 0.5 {
        let mut term = y * y / 2.0;
        let mut sum = 0.0f64;
        let mut n = 2.0;
        while term.abs() > 1e-18 * sum.abs().max(f64::MIN_POSITIVE) {
            sum += term;
            n += 1.0;
            term *= -y / n;
        }
        sum
    } else {
        (-y).exp_m1() + y
    }
}

/// `(sinh y - y) - (cosh y - 1)(e^y - 1)`, the diagonal factor of the
/// closed-form Riccati block `M_x`. Its derivative is `-(e^y - 1)^2`, so it
/// is `-(y^3/3 + y^4/4 + ...)` near zero and positive for `y < 0`.
pub(crate) fn hamiltonian_gram(y: f64) -> f64 {
    if y.abs() < 1.0 {
        // -sum_{n>=2} (2^n - 2) y^{n+1} / (n+1)!
        let mut sum = 0.0f64;
        let mut pow2 = 4.0;
        let mut ypow_fact = y * y * y / 6.0; // y^{n+1}/(n+1)! at n = 2
        let mut n = 2.0;
        loop {
            let term = (pow2 - 2.0) * ypow_fact;
            sum -= term;
            if term.abs() <= 1e-18 * sum.abs().max(f64::MIN_POSITIVE) || n > 60.0 {
                break;
            }
            n += 1.0;
            pow2 *= 2.0;
            ypow_fact *= y / (n + 1.0);
        }
        sum
    } else {
        let e = y.exp_m1();
        e - y - 0.5 * e * e
    }
}
