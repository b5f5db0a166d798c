//! Central-difference gradient verification used by tests and the
//! acceptance harness to validate reverse-mode gradients independently.

/// Result of comparing an analytic gradient against finite differences.
#[derive(Clone, Copy, Debug)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub fd: f64,
}

/// Central finite-difference gradient with per-coordinate step
/// h = 1e−6 · max(1, |p|).
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, at: &[f64]) -> Vec<f64> {
    let mut grad = Vec::with_capacity(at.len());
    let mut point = at.to_vec();
    for i in 0..at.len() {
        let h = 1e-6 * at[i].abs().max(1.0);
        point[i] = at[i] + h;
        let up = f(&point);
        point[i] = at[i] - h;
        let down = f(&point);
        point[i] = at[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Worst relative disagreement, with |a − fd| / max(1, |fd|) as the measure
/// so near-zero gradients compare absolutely.
pub fn compare(analytic: &[f64], fd: &[f64]) -> FdReport {
    assert_eq!(analytic.len(), fd.len());
    assert!(!analytic.is_empty());
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: analytic[0],
        fd: fd[0],
    };
    for (i, (&a, &d)) in analytic.iter().zip(fd).enumerate() {
        let rel = (a - d).abs() / d.abs().max(1.0);
        if rel > report.max_rel_err {
            report = FdReport {
                max_rel_err: rel,
                worst_index: i,
                analytic: a,
                fd: d,
            };
        }
    }
    report
}
