//! Dormand-Prince 5(4) integrator for complex state vectors.

use crate::error::{Error, Result};
use crate::C64;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// 5th minus 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    pub max_step: f64,
}

/// Decision returned by the per-step observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Accept,
    /// Accept the step and return to the caller.
    Stop,
    /// Discard the step and retry with half the step size.
    Reject,
}

#[derive(Debug, Clone)]
pub struct Dopri5 {
    tol: Tolerances,
    h: f64,
    k: [Vec<C64>; 7],
    y_new: Vec<C64>,
    y_tmp: Vec<C64>,
    fsal_valid: bool,
    pub accepted: usize,
    pub rejected: usize,
}

impl Dopri5 {
    pub fn new(dim: usize, tol: Tolerances) -> Self {
        let z = vec![C64::new(0.0, 0.0); dim];
        Self {
            tol,
            h: 0.0,
            k: std::array::from_fn(|_| z.clone()),
            y_new: z.clone(),
            y_tmp: z,
            fsal_valid: false,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Forget the cached derivative; needed whenever the right-hand side
    /// changes discontinuously or `y` is modified externally.
    pub fn reset(&mut self) {
        self.fsal_valid = false;
    }

    /// Advance `y` from `t0` towards `t1`. `f(t, y, dy)` writes the derivative.
    /// `observe(t, y_new, y_old)` runs after every successful step.
    /// Returns the time reached (< `t1` only on [`StepControl::Stop`]).
    pub fn integrate<F, O>(&mut self, f: &mut F, t0: f64, t1: f64, y: &mut [C64], observe: &mut O) -> Result<f64>
    where
        F: FnMut(f64, &[C64], &mut [C64]),
        O: FnMut(f64, &[C64], &[C64]) -> StepControl,
    {
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(t0);
        }
        let mut t = t0;
        if !self.fsal_valid {
            f(t, y, &mut self.k[0]);
            self.fsal_valid = true;
        }
        if self.h <= 0.0 {
            self.h = self.initial_step(y, span);
        }
        let min_step = 1e-14 * t1.abs().max(span);
        while t < t1 {
            let mut h = self.h.min(self.tol.max_step);
            let last = t + h >= t1 - 1e-12 * span;
            if last {
                h = t1 - t;
            }
            if h < min_step && !last {
                return Err(Error::StepUnderflow { t });
            }
            self.stages(f, t, h, y);
            let err = self.error_norm(y, h);
            if err <= 1.0 {
                let t_new = if last { t1 } else { t + h };
                match observe(t_new, &self.y_new, y) {
                    StepControl::Reject => {
                        self.rejected += 1;
                        self.h = 0.5 * h;
                        if self.h < min_step {
                            return Err(Error::StepUnderflow { t });
                        }
                        continue;
                    }
                    ctl => {
                        y.copy_from_slice(&self.y_new);
                        self.k.swap(0, 6);
                        t = t_new;
                        self.accepted += 1;
                        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                        // keep the natural step size when the segment end clipped it
                        if !last || h >= self.h {
                            self.h = h * fac;
                        }
                        if ctl == StepControl::Stop {
                            return Ok(t);
                        }
                    }
                }
            } else {
                self.rejected += 1;
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                if self.h < min_step {
                    return Err(Error::StepUnderflow { t });
                }
            }
        }
        Ok(t1)
    }

    fn initial_step(&self, y: &[C64], span: f64) -> f64 {
        let d0 = rms(y.iter().map(|v| v.norm() / (self.tol.abs + self.tol.rel * v.norm())));
        let d1 = rms(y.iter().zip(&self.k[0]).map(|(v, k)| k.norm() / (self.tol.abs + self.tol.rel * v.norm())));
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
        h.min(span).min(self.tol.max_step)
    }

    fn stages<F>(&mut self, f: &mut F, t: f64, h: f64, y: &[C64])
    where
        F: FnMut(f64, &[C64], &mut [C64]),
    {
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let yt = &mut self.y_tmp;
        combine(yt, y, h, &[(A21, k1)]);
        f(t + C2 * h, yt, k2);
        combine(yt, y, h, &[(A31, k1), (A32, k2)]);
        f(t + C3 * h, yt, k3);
        combine(yt, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
        f(t + C4 * h, yt, k4);
        combine(yt, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
        f(t + C5 * h, yt, k5);
        combine(yt, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
        f(t + h, yt, k6);
        combine(&mut self.y_new, y, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
        f(t + h, &self.y_new, k7);
    }

    fn error_norm(&self, y: &[C64], h: f64) -> f64 {
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let mut acc = 0.0;
        for i in 0..y.len() {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let sc = self.tol.abs + self.tol.rel * y[i].norm().max(self.y_new[i].norm());
            acc += (e.norm() / sc).powi(2);
        }
        (acc / y.len() as f64).sqrt()
    }
}

fn combine(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &Vec<C64>)]) {
    out.copy_from_slice(y);
    for (a, k) in terms {
        let s = a * h;
        for (o, kv) in out.iter_mut().zip(k.iter()) {
            *o += kv * s;
        }
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in it {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}
