//! Adaptive Dormand–Prince 5(4) integrator for smooth vector fields.
//!
//! Used as a high-accuracy reference flow (e.g. the time-one map of a
//! generating function); it is not symplectic.

/// Integrates `y' = field(y)` from `0` to `t_end`, returning `y(t_end)`.
pub fn integrate<F>(field: F, y0: &[f64], t_end: f64, rtol: f64, atol: f64) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
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
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut h = (t_end / 100.0).max(1e-6).min(t_end);
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    while t < t_end {
        h = h.min(t_end - t);
        field(&y, &mut k[0]);
        for s in 1..7 {
            for i in 0..n {
                tmp[i] = y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            field(&tmp, &mut k[s]);
        }
        let mut err = 0.0f64;
        for i in 0..n {
            y5[i] = y[i] + h * (0..7).map(|j| B5[j] * k[j][i]).sum::<f64>();
            let y4 = y[i] + h * (0..7).map(|j| B4[j] * k[j][i]).sum::<f64>();
            let scale = atol + rtol * y[i].abs().max(y5[i].abs());
            err = err.max(((y5[i] - y4) / scale).abs());
        }
        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&y5);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_quarter_period() {
        let y = integrate(
            |y, out| {
                out[0] = y[1];
                out[1] = -y[0];
            },
            &[1.0, 0.0],
            std::f64::consts::FRAC_PI_2,
            1e-12,
            1e-14,
        );
        assert!(y[0].abs() < 1e-10);
        assert!((y[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn exponential_growth() {
        let y = integrate(|y, out| out[0] = y[0], &[1.0], 1.0, 1e-12, 1e-14);
        assert!((y[0] - std::f64::consts::E).abs() < 1e-10);
    }
}
