//! Adaptive Dormand–Prince 5(4) integrator.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-11, atol: 1e-13, max_steps: 5_000_000 }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` and returns the state at each of `t_out`
/// (non-decreasing, all `≥ t0`).
pub fn dopri5<F>(mut f: F, t0: f64, y0: &[f64], t_out: &[f64], opts: OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut out = Vec::with_capacity(t_out.len());
    let span = t_out.last().map(|e| e - t0).unwrap_or(0.0).abs().max(1e-300);
    let mut h = 1e-4 * span;
    let mut steps = 0usize;
    f(t, &y, &mut k[0])?;
    for &target in t_out {
        if target < t {
            return Err(Error::invalid("output times must be non-decreasing"));
        }
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::Singularity(format!("step budget exhausted at t={t}")));
            }
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (r, a) in A[s].iter().enumerate().take(s) {
                        acc += step * a * k[r][i];
                    }
                    tmp[i] = acc;
                }
                f(t + C[s] * step, &tmp, &mut k[s])?;
            }
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut hi = y[i];
                let mut lo = y[i];
                for s in 0..7 {
                    hi += step * B5[s] * k[s][i];
                    lo += step * B4[s] * k[s][i];
                }
                y5[i] = hi;
                let sc = opts.atol + opts.rtol * y[i].abs().max(hi.abs());
                err = err.max(((hi - lo) / sc).abs());
            }
            if !err.is_finite() {
                h = step * 0.2;
            } else if err <= 1.0 {
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut y5);
                // FSAL: stage 7 was evaluated at the accepted point
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    h = step * fac;
                }
            } else {
                h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
            if h < 1e-14 * span.max(t.abs()) {
                return Err(Error::Singularity(format!("step size underflow at t={t}")));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}
