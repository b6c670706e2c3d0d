//! Explicit adaptive Runge–Kutta 5(4) of Dormand and Prince on complex state
//! vectors, with cubic Hermite dense output between accepted steps.

use crate::error::{Error, Result};
use crate::spinops::{C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { abs: 1e-9, rel: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub tol: Tolerances,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { tol: Tolerances::default(), max_step: f64::INFINITY, min_step: 1e-14, max_steps: 10_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

#[rustfmt::skip]
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

// fifth-order weights minus embedded fourth-order weights
#[rustfmt::skip]
const E: [f64; 7] = [
    71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0,
];

/// One accepted step, handed to observers.
pub struct AcceptedStep<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a [C64],
    pub y1: &'a [C64],
    pub f0: &'a [C64],
    pub f1: &'a [C64],
}

impl AcceptedStep<'_> {
    /// Cubic Hermite interpolant through both endpoints and their derivatives.
    pub fn interpolate(&self, t: f64, out: &mut [C64]) {
        let h = self.t1 - self.t0;
        let w = hermite_weights((t - self.t0) / h);
        for i in 0..out.len() {
            out[i] = self.y0[i] * w[0] + self.f0[i] * (w[1] * h) + self.y1[i] * w[2] + self.f1[i] * (w[3] * h);
        }
    }
}

/// Weights `(h00, h10, h01, h11)` of the cubic Hermite basis at `theta ∈ [0, 1]`;
/// the derivative weights still need multiplying by the interval length.
pub fn hermite_weights(theta: f64) -> [f64; 4] {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + theta, -2.0 * t3 + 3.0 * t2, t3 - t2]
}

/// Scalar cubic Hermite interpolation on `[t0, t1]`.
pub fn hermite(t0: f64, y0: f64, f0: f64, t1: f64, y1: f64, f1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let w = hermite_weights((t - t0) / h);
    w[0] * y0 + w[1] * h * f0 + w[2] * y1 + w[3] * h * f1
}

pub struct DormandPrince {
    opts: IntegratorOptions,
    k: [Vec<C64>; 7],
    stage: Vec<C64>,
    y_new: Vec<C64>,
    h_next: Option<f64>,
    stats: Stats,
}

impl DormandPrince {
    pub fn new(dim: usize, opts: IntegratorOptions) -> Self {
        Self {
            opts,
            k: std::array::from_fn(|_| vec![ZERO; dim]),
            stage: vec![ZERO; dim],
            y_new: vec![ZERO; dim],
            h_next: None,
            stats: Stats::default(),
        }
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn options(&self) -> &IntegratorOptions {
        &self.opts
    }

    /// Forget the step-size history, e.g. after the state was changed externally.
    pub fn reset(&mut self) {
        self.h_next = None;
    }

    /// Integrates `y` from `t0` to exactly `t1`.
    pub fn advance<F>(&mut self, rhs: &mut F, t0: f64, t1: f64, y: &mut [C64]) -> Result<()>
    where
        F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    {
        self.advance_observed(rhs, t0, t1, y, &mut |_: &AcceptedStep<'_>| {})
    }

    pub fn advance_observed<F, O>(
        &mut self,
        rhs: &mut F,
        t0: f64,
        t1: f64,
        y: &mut [C64],
        observer: &mut O,
    ) -> Result<()>
    where
        F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
        O: FnMut(&AcceptedStep<'_>),
    {
        let n = y.len();
        assert_eq!(n, self.stage.len(), "state length changed");
        if t1 <= t0 {
            return Ok(());
        }
        let fail = |reason: String| Error::Integrator { t0, t1, reason };
        rhs(t0, y, &mut self.k[0])?;
        self.stats.evaluations += 1;

        let span = t1 - t0;
        let mut h_prop = match self.h_next {
            Some(h) => h,
            None => self.initial_step(y, span),
        }
        .min(self.opts.max_step);
        let mut t = t0;
        let mut steps = 0usize;
        let tol = self.opts.tol;

        while t < t1 {
            steps += 1;
            if steps > self.opts.max_steps {
                return Err(fail(format!("exceeded {} steps", self.opts.max_steps)));
            }
            let remaining = t1 - t;
            let last = h_prop >= remaining || remaining - h_prop < 1e-12 * span;
            let h = if last { remaining } else { h_prop };

            for s in 1..7 {
                for i in 0..n {
                    let mut acc = ZERO;
                    for (j, a) in A[s][..s].iter().enumerate() {
                        if *a != 0.0 {
                            acc += self.k[j][i] * *a;
                        }
                    }
                    self.stage[i] = y[i] + acc * h;
                }
                let (_, rest) = self.k.split_at_mut(s);
                rhs(t + C[s] * h, &self.stage, &mut rest[0])?;
                self.stats.evaluations += 1;
            }
            // stage 7 is evaluated at the fifth-order solution itself
            self.y_new.copy_from_slice(&self.stage);

            // max norm: every component meets its own tolerance
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut e = ZERO;
                for (j, w) in E.iter().enumerate() {
                    if *w != 0.0 {
                        e += self.k[j][i] * *w;
                    }
                }
                let sc = tol.abs + tol.rel * y[i].norm().max(self.y_new[i].norm());
                let q = e.norm() * h / sc;
                err = if q.is_nan() || err.is_nan() { f64::NAN } else { err.max(q) };
            }

            if err.is_finite() && err <= 1.0 {
                let t_new = if last { t1 } else { t + h };
                observer(&AcceptedStep { t0: t, t1: t_new, y0: y, y1: &self.y_new, f0: &self.k[0], f1: &self.k[6] });
                y.copy_from_slice(&self.y_new);
                let (first, rest) = self.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                t = t_new;
                self.stats.accepted += 1;
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // a step shortened to hit t1 says little about the natural step size
                h_prop = if h < h_prop { h_prop.max(h * factor) } else { h * factor };
                h_prop = h_prop.min(self.opts.max_step);
            } else {
                self.stats.rejected += 1;
                let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
                h_prop = h * factor;
                if h_prop < self.opts.min_step {
                    self.h_next = None;
                    return Err(fail(format!("step size {h_prop:.3e} underflow at t = {t}")));
                }
            }
        }
        self.h_next = Some(h_prop);
        Ok(())
    }

    fn initial_step(&self, y: &[C64], span: f64) -> f64 {
        let tol = self.opts.tol;
        let (mut d0, mut d1) = (0.0, 0.0);
        for (yi, fi) in y.iter().zip(&self.k[0]) {
            let sc = tol.abs + tol.rel * yi.norm();
            d0 += (yi.norm() / sc).powi(2);
            d1 += (fi.norm() / sc).powi(2);
        }
        let n = y.len().max(1) as f64;
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(span).max(1e-10)
    }
}
