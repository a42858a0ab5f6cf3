//! Adaptive explicit Runge–Kutta integration: Dormand–Prince 5(4) pair with
//! PI step-size control and 4th-order dense output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Zero picks an initial step automatically.
    pub initial_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-6, atol: 1e-6, initial_step: 0.0, max_step: f64::INFINITY, max_steps: 500_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

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

/// Integrates `y' = f(t, y)` from `outputs[0]` and returns the state at every
/// entry of `outputs` (non-decreasing). `f(t, y, dy)` writes the derivative.
pub fn integrate<F>(mut f: F, y0: &[f64], outputs: &[f64], opts: &OdeOptions) -> Result<(Vec<Vec<f64>>, OdeStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::invalid("tolerances must be positive"));
    }
    if outputs.is_empty() {
        return Ok((Vec::new(), OdeStats::default()));
    }
    if outputs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("output times must be non-decreasing"));
    }
    let n = y0.len();
    let t0 = outputs[0];
    let tf = *outputs.last().unwrap();
    let mut stats = OdeStats::default();
    let mut out = Vec::with_capacity(outputs.len());
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= t0 {
        out.push(y0.to_vec());
        next_out += 1;
    }
    if next_out == outputs.len() {
        return Ok((out, stats));
    }

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut r5 = vec![0.0; n];

    f(t0, &y, &mut k1);
    stats.evaluations += 1;

    let span = tf - t0;
    let mut h = if opts.initial_step > 0.0 {
        opts.initial_step
    } else {
        initial_step(&mut f, t0, &y, &k1, opts, &mut ys, &mut k2)
    };
    stats.evaluations += usize::from(opts.initial_step <= 0.0);
    h = h.min(opts.max_step).min(span);

    let mut t = t0;
    let mut fac_old: f64;
    let mut reject_last = false;
    const BETA: f64 = 0.04;
    const EXPO: f64 = 0.2 - BETA * 0.75;
    const SAFE: f64 = 0.9;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::StepUnderflow { tau: t, step: h });
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(span.abs()).max(1e-300);
        if h < h_min {
            return Err(Error::StepUnderflow { tau: t, step: h });
        }
        let last = t + 1.01 * h >= tf;
        if last {
            h = tf - t;
        }

        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &ys, &mut k2);
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &ys, &mut k3);
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &ys, &mut k4);
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &ys, &mut k5);
        for i in 0..n {
            ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { tf } else { t + h };
        f(t_new, &ys, &mut k6);
        for i in 0..n {
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t_new, &y_new, &mut k7);
        stats.evaluations += 6;

        let mut acc = 0.0;
        for i in 0..n {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            acc += (err[i] / sk).powi(2);
        }
        let e = if n == 0 { 0.0 } else { (acc / n as f64).sqrt() };
        if !e.is_finite() {
            stats.rejected += 1;
            h *= 0.1;
            reject_last = true;
            continue;
        }

        let fac11 = e.powf(EXPO);
        if e <= 1.0 {
            // Dense output coefficients on [t, t_new].
            if next_out < outputs.len() && outputs[next_out] <= t_new {
                for i in 0..n {
                    r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                while next_out < outputs.len() && outputs[next_out] <= t_new {
                    let theta = ((outputs[next_out] - t) / h).clamp(0.0, 1.0);
                    let theta1 = 1.0 - theta;
                    let v = (0..n)
                        .map(|i| {
                            let ydiff = y_new[i] - y[i];
                            let bspl = h * k1[i] - ydiff;
                            let r4 = ydiff - h * k7[i] - bspl;
                            y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5[i])))
                        })
                        .collect();
                    out.push(v);
                    next_out += 1;
                }
            }
            stats.accepted += 1;
            fac_old = e.max(1e-4);
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            if last || next_out == outputs.len() {
                break;
            }
            let mut fac = fac11 / fac_old.powf(BETA) / SAFE;
            fac = fac.clamp(0.1, 5.0);
            let mut h_new = (h / fac).min(opts.max_step);
            if reject_last {
                h_new = h_new.min(h);
            }
            reject_last = false;
            h = h_new;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFE).min(5.0);
            reject_last = true;
        }
    }
    Ok((out, stats))
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], opts: &OdeOptions, ys: &mut [f64], f1: &mut [f64]) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len().max(1) as f64;
    let sk = |i: usize| opts.atol + opts.rtol * y[i].abs();
    let d0 = (y.iter().enumerate().map(|(i, v)| (v / sk(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v / sk(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    for i in 0..y.len() {
        ys[i] = y[i] + h0 * f0[i];
    }
    f(t + h0, ys, f1);
    let d2 = (f1.iter().zip(f0).enumerate().map(|(i, (a, b))| ((a - b) / sk(i)).powi(2)).sum::<f64>() / n).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rhs_keeps_state() {
        let y0 = [1.0, -2.0, 3.5];
        let times: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let (out, _) = integrate(|_, _, dy| dy.fill(0.0), &y0, &times, &OdeOptions::default()).unwrap();
        assert_eq!(out.len(), 11);
        for y in out {
            assert_eq!(y, y0.to_vec());
        }
    }

    #[test]
    fn exponential_and_oscillator() {
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
        let opts = OdeOptions::with_tol(1e-10);
        let (out, stats) = integrate(|_, y, dy| dy[0] = -2.0 * y[0], &[1.0], &times, &opts).unwrap();
        for (t, y) in times.iter().zip(&out) {
            assert!((y[0] - (-2.0 * t).exp()).abs() < 1e-8);
        }
        assert!(stats.accepted > 0);

        let (out, _) = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &[0.0, 1.0],
            &times,
            &opts,
        )
        .unwrap();
        for (t, y) in times.iter().zip(&out) {
            assert!((y[0] - t.sin()).abs() < 1e-8 && (y[1] - t.cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_output_between_steps() {
        // Large tolerance forces long steps; outputs still accurate to the step order.
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let opts = OdeOptions::with_tol(1e-7);
        let (out, stats) = integrate(|t, _, dy| dy[0] = t.cos(), &[0.0], &times, &opts).unwrap();
        assert!(stats.accepted < 100);
        for (t, y) in times.iter().zip(&out) {
            assert!((y[0] - t.sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn blow_up_reports_underflow() {
        let r = integrate(|_, y, dy| dy[0] = y[0] * y[0], &[1.0], &[0.0, 2.0], &OdeOptions::default());
        assert!(matches!(r, Err(Error::StepUnderflow { .. })));
    }
}
