//! Fixed-step integration helpers shared by the solvers.

use std::ops::{Add, Mul};

/// Uniform grid `t0 = t_0 < ... < t_n = t1`. The last point is exactly `t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Self {
        assert!(steps >= 1, "a time grid needs at least one step");
        Self { start, end, steps }
    }

    pub fn step(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.end
        } else {
            self.start + (self.end - self.start) * (j as f64 / self.steps as f64)
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }

    /// Number of steps of size at most `step` covering `[0, horizon]`.
    pub fn steps_for(horizon: f64, step: f64) -> usize {
        let n = (horizon / step).round();
        if (n * step - horizon).abs() <= 1e-9 * horizon {
            n.max(1.0) as usize
        } else {
            (horizon / step).ceil().max(1.0) as usize
        }
    }
}

/// One classical fourth-order Runge-Kutta step of `dy/dt = f(t, y)`.
/// `h` may be negative for backward integration.
pub fn rk4_step<S, F>(t: f64, y: &S, h: f64, mut f: F) -> S
where
    S: Clone + Add<Output = S> + Mul<f64, Output = S>,
    F: FnMut(f64, &S) -> S,
{
    let half = 0.5 * h;
    let k1 = f(t, y);
    let k2 = f(t + half, &(y.clone() + k1.clone() * half));
    let k3 = f(t + half, &(y.clone() + k2.clone() * half));
    let k4 = f(t + h, &(y.clone() + k3.clone() * h));
    y.clone() + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Trapezoidal rule on a (possibly non-uniform) grid.
pub fn trapezoid(t: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(t.len(), values.len());
    t.windows(2)
        .zip(values.windows(2))
        .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (vw[0] + vw[1]))
        .sum()
}

/// Cubic Hermite value at the midpoint of `[t0, t0 + h]` given values and
/// derivatives at both ends.
pub fn hermite_midpoint<S>(y0: &S, dy0: &S, y1: &S, dy1: &S, h: f64) -> S
where
    S: Clone + Add<Output = S> + Mul<f64, Output = S>,
{
    (y0.clone() + y1.clone()) * 0.5 + (dy0.clone() + dy1.clone() * -1.0) * (h / 8.0)
}
