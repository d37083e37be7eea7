//! Dormand–Prince 5(4) stepper with local error control, specialised to
//! two-dimensional first-order systems.

pub type State = [f64; 2];

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

// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            min_step: 1e-14,
            max_step: 0.05,
        }
    }
}

#[inline]
fn axpy(y: &State, h: f64, terms: &[(f64, &State)]) -> State {
    let mut out = *y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

pub struct Dopri5<F: Fn(f64, &State) -> State> {
    rhs: F,
    tol: Tolerances,
    pub t: f64,
    pub y: State,
    h: f64,
    k1: State,
}

impl<F: Fn(f64, &State) -> State> Dopri5<F> {
    pub fn new(rhs: F, t0: f64, y0: State, tol: Tolerances) -> Self {
        let k1 = rhs(t0, &y0);
        Self {
            rhs,
            tol,
            t: t0,
            y: y0,
            h: tol.max_step.min(1e-3),
            k1,
        }
    }

    /// Current derivative `f(t, y)` (valid after every accepted step).
    pub fn derivative(&self) -> State {
        self.k1
    }

    /// Takes one accepted step, never past `t_end`. Returns `Err` when the
    /// step size underflows `min_step`.
    pub fn step(&mut self, t_end: f64) -> Result<(), String> {
        let f = &self.rhs;
        loop {
            let mut h = self.h.min(self.tol.max_step);
            let mut last = false;
            if self.t + h >= t_end {
                h = t_end - self.t;
                last = true;
            }
            if h < self.tol.min_step && !last {
                return Err(format!("step size underflow at r = {}", self.t));
            }
            let (t, y, k1) = (self.t, self.y, self.k1);
            let k2 = f(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
            let k3 = f(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(t + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(
                t + C5 * h,
                &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                t + h,
                &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y_new = axpy(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = f(t + h, &y_new);
            let mut err = 0.0f64;
            for c in 0..2 {
                let e = h * (E1 * k1[c] + E3 * k3[c] + E4 * k4[c] + E5 * k5[c] + E6 * k6[c] + E7 * k7[c]);
                let sc = self.tol.atol + self.tol.rtol * y[c].abs().max(y_new[c].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                self.h = h * 0.1;
                if self.h < self.tol.min_step {
                    return Err(format!("non-finite state at r = {t}"));
                }
                continue;
            }
            if err <= 1.0 {
                self.t = if last { t_end } else { t + h };
                self.y = y_new;
                self.k1 = k7;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    self.h = h * fac;
                }
                return Ok(());
            }
            self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if self.h < self.tol.min_step {
                return Err(format!("step size underflow at r = {t}"));
            }
        }
    }
}

/// Cubic Hermite interpolation on `[t0, t1]` from values and derivatives.
pub fn hermite(t0: f64, y0: f64, d0: f64, t1: f64, y1: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    if h == 0.0 {
        return y0;
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}
