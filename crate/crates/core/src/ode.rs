//! Dormand–Prince 5(4) integration with dense output and root localization.

use nalgebra::DVector;

use crate::error::Result;
use crate::Scalar;

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Mixed error tolerances: component `i` is scaled by `atol + rtol·|y_i|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

/// Quartic continuous extension of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep<T: Scalar> {
    pub t0: T,
    pub h: T,
    r: [DVector<T>; 5],
}

impl<T: Scalar> DenseStep<T> {
    pub fn t1(&self) -> T {
        self.t0 + self.h
    }

    pub fn eval(&self, t: T) -> DVector<T> {
        let th = (t - self.t0) / self.h;
        let th1 = T::one() - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        r1 + (r2 + (r3 + (r4 + r5 * th1) * th) * th1) * th
    }
}

/// Result of one attempted step.
#[derive(Debug, Clone)]
pub struct StepOutcome<T: Scalar> {
    pub y: DVector<T>,
    /// Derivative at the new point, reused as the first stage of the next step.
    pub dy: DVector<T>,
    /// Scaled RMS error estimate; the step is acceptable when `err ≤ 1`.
    pub err: T,
    pub dense: DenseStep<T>,
}

fn scaled_rms<T: Scalar>(e: &DVector<T>, y0: &DVector<T>, y1: &DVector<T>, tol: &Tolerances) -> T {
    if e.is_empty() {
        return T::zero();
    }
    let (rtol, atol) = (T::lit(tol.rtol), T::lit(tol.atol));
    let mut acc = T::zero();
    for i in 0..e.len() {
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        acc += (e[i] / sc).powi(2);
    }
    (acc / T::from_usize_lossy(e.len())).sqrt()
}

fn combo<T: Scalar>(y: &DVector<T>, h: T, terms: &[(f64, &DVector<T>)]) -> DVector<T> {
    let mut out = y.clone();
    for (c, k) in terms {
        if *c != 0.0 {
            out.axpy(h * T::lit(*c), k, T::one());
        }
    }
    out
}

/// One Dormand–Prince step of size `h` (may be negative) from `(t, y)` with
/// known derivative `k1`. Evaluates the right-hand side six times.
pub fn dopri_step<T, F>(
    f: &mut F,
    t: T,
    y: &DVector<T>,
    k1: &DVector<T>,
    h: T,
    tol: &Tolerances,
) -> Result<StepOutcome<T>>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> Result<DVector<T>>,
{
    let c = |v: f64| t + h * T::lit(v);
    let k2 = f(c(C2), &combo(y, h, &[(A21, k1)]))?;
    let k3 = f(c(C3), &combo(y, h, &[(A31, k1), (A32, &k2)]))?;
    let k4 = f(c(C4), &combo(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?;
    let k5 = f(
        c(C5),
        &combo(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    )?;
    let k6 = f(
        t + h,
        &combo(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    )?;
    let y1 = combo(
        y,
        h,
        &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
    );
    let k7 = f(t + h, &y1)?;

    let zero = DVector::zeros(y.len());
    let e = combo(
        &zero,
        h,
        &[(E1, k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
    );
    let err = scaled_rms(&e, y, &y1, tol);

    let ydiff = &y1 - y;
    let bspl = k1 * h - &ydiff;
    let r4 = &ydiff - &k7 * h - &bspl;
    let r5 = combo(
        &zero,
        h,
        &[(D1, k1), (D3, &k3), (D4, &k4), (D5, &k5), (D6, &k6), (D7, &k7)],
    );
    Ok(StepOutcome {
        dense: DenseStep {
            t0: t,
            h,
            r: [y.clone(), ydiff, bspl, r4, r5],
        },
        y: y1,
        dy: k7,
        err,
    })
}

/// Starting step size heuristic of Hairer, Nørsett and Wanner (signed by `dir`).
pub fn initial_step<T, F>(
    f: &mut F,
    t: T,
    y: &DVector<T>,
    k1: &DVector<T>,
    dir: T,
    h_max: T,
    tol: &Tolerances,
) -> T
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> Result<DVector<T>>,
{
    let d0 = scaled_rms(y, y, y, tol);
    let d1 = scaled_rms(k1, y, y, tol);
    let tiny = T::lit(1e-5);
    let h0 = if d0 < tiny || d1 < tiny {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * d0 / d1
    }
    .min(h_max);
    let y1 = y + k1 * (h0 * dir);
    let d2 = match f(t + h0 * dir, &y1) {
        Ok(k2) => scaled_rms(&(k2 - k1), y, y, tol) / h0,
        Err(_) => return h0 * dir,
    };
    let m = d1.max(d2);
    let h1 = if m <= T::lit(1e-15) {
        (h0 * T::lit(1e-3)).max(T::lit(1e-6))
    } else {
        (T::lit(0.01) / m).powf(T::lit(0.2))
    };
    (h0 * T::lit(100.0)).min(h1).min(h_max) * dir
}

/// Step-size factor after a step with scaled error `err`.
pub fn step_factor<T: Scalar>(err: T, after_reject: bool) -> T {
    let fac_max = if after_reject { T::one() } else { T::lit(10.0) };
    if err <= T::zero() {
        return fac_max;
    }
    (T::lit(0.9) * err.powf(T::lit(-0.2))).clamp(T::lit(0.2), fac_max)
}

/// Root of `f` on `[a, b]` by regula falsi with the Illinois modification.
///
/// Requires `fa > 0 ≥ fb`. Returns a point `r` with `f(r) ≤ 0` (the right end
/// of the final bracket) once the bracket is narrower than `tol` or `f`
/// vanishes there.
pub fn illinois_root<T, F>(mut f: F, mut a: T, mut fa: T, mut b: T, mut fb: T, tol: T) -> T
where
    T: Scalar,
    F: FnMut(T) -> T,
{
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= tol || fb == T::zero() {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        let lo = a.min(b);
        let hi = a.max(b);
        if !(c > lo && c < hi) {
            c = (a + b) * T::lit(0.5);
        }
        let fc = f(c);
        if fc > T::zero() {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= T::lit(0.5);
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= T::lit(0.5);
            }
            side = -1;
        }
    }
    b
}
