use nalgebra::DMatrix;

use super::AnalysisError;

/// Savitzky-Golay smoothing. Interior points use the centred window; the
/// first and last `window / 2` points are evaluated on the polynomial fitted
/// to the first (last) full window.
pub fn savgol_smooth(series: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>, AnalysisError> {
    let bad = |reason: String| Err(AnalysisError::Config { field: "savgol".into(), reason });
    if window.is_multiple_of(2) {
        return bad(format!("window {window} must be odd"));
    }
    if polyorder >= window {
        return bad(format!("polyorder {polyorder} must be below window {window}"));
    }
    if window > series.len() {
        return bad(format!("window {window} exceeds series length {}", series.len()));
    }
    let half = window / 2;
    // Rows of pinv(V) map window samples to polynomial coefficients, with
    // V[i][j] = t_i^j and t centred on the window middle.
    let v = DMatrix::from_fn(window, polyorder + 1, |i, j| (i as f64 - half as f64).powi(j as i32));
    let pinv = v.clone().pseudo_inverse(1e-12).map_err(|e| AnalysisError::Config { field: "savgol".into(), reason: e.to_string() })?;
    let eval = |start: usize, t: f64| -> f64 {
        (0..=polyorder)
            .map(|j| {
                let coef: f64 = (0..window).map(|i| pinv[(j, i)] * series[start + i]).sum();
                coef * t.powi(j as i32)
            })
            .sum()
    };
    let n = series.len();
    Ok((0..n)
        .map(|k| {
            if k < half {
                eval(0, k as f64 - half as f64)
            } else if k + half >= n {
                eval(n - window, (k + window - n) as f64 - half as f64)
            } else {
                eval(k - half, 0.0)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Least-squares polynomial value at `at` via normal equations and
    /// Gaussian elimination.
    fn lsq_at(ts: &[f64], ys: &[f64], order: usize, at: f64) -> f64 {
        let m = order + 1;
        let mut a = vec![vec![0.0; m + 1]; m];
        for r in 0..m {
            for c in 0..m {
                a[r][c] = ts.iter().map(|t| t.powi((r + c) as i32)).sum();
            }
            a[r][m] = ts.iter().zip(ys).map(|(t, y)| t.powi(r as i32) * y).sum();
        }
        for col in 0..m {
            let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..m {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=m {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        (0..m).map(|j| a[j][m] / a[j][j] * at.powi(j as i32)).sum()
    }

    #[test]
    fn fixture_matches_per_window_least_squares() {
        let s = [1.0, 2.0, 1.0, 3.0, 1.0, 4.0, 1.0];
        let out = savgol_smooth(&s, 5, 2).unwrap();
        let ts: Vec<f64> = (0..7).map(|t| t as f64).collect();
        for k in 0usize..7 {
            let start = k.saturating_sub(2).min(2);
            let want = lsq_at(&ts[start..start + 5], &s[start..start + 5], 2, k as f64);
            assert!((out[k] - want).abs() < 1e-10, "{k}: {} vs {want}", out[k]);
        }
    }

    #[test]
    fn constant_unchanged() {
        let out = savgol_smooth(&[2.5; 9], 5, 2).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn preconditions() {
        assert!(savgol_smooth(&[1.0; 6], 4, 2).is_err());
        assert!(savgol_smooth(&[1.0; 6], 5, 5).is_err());
        assert!(savgol_smooth(&[1.0; 4], 5, 2).is_err());
    }

    proptest! {
        #[test]
        fn reproduces_quadratics(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, n in 5usize..30) {
            let s: Vec<f64> = (0..n).map(|t| a + b * t as f64 + c * (t * t) as f64).collect();
            let out = savgol_smooth(&s, 5, 2).unwrap();
            for (x, y) in out.iter().zip(&s) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
            }
        }
    }
}
