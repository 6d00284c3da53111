//! Symmetric tridiagonal eigenvalue solver: implicit-shift QL with optional
//! accumulation of eigenvectors, plus an independent Sturm-sequence
//! bisection for the smallest eigenvalue. The QL iteration handles the
//! split blocks produced by underflowed couplings (exact zeros on the
//! off-diagonal) without special casing.

use nalgebra::DMatrix;

/// Eigenvalues in ascending order. `off` couples `(k, k+1)` and must have
/// length `diag.len() - 1`.
pub fn eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let (vals, _) = ql_implicit(diag, off, false);
    vals
}

/// Eigenvalues (ascending) and orthonormal eigenvectors as matrix columns.
pub fn eigen_decomposition(diag: &[f64], off: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let (vals, z) = ql_implicit(diag, off, true);
    (vals, z.expect("vectors requested"))
}

fn ql_implicit(diag: &[f64], off: &[f64], want_vectors: bool) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let n = diag.len();
    assert_eq!(off.len(), n.saturating_sub(1), "off-diagonal length");
    let mut d = diag.to_vec();
    // e[i] couples i and i+1; e[n-1] is workspace.
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    let mut z = if want_vectors {
        Some(DMatrix::<f64>::identity(n, n))
    } else {
        None
    };

    for l in 0..n {
        let mut iter = 0;
        loop {
            // Look for a negligible off-diagonal element to split at.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 64, "QL iteration failed to converge");

            // Wilkinson shift.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Recover from underflow by deflating.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_mut() {
                    for k in 0..n {
                        f = z[(k, i + 1)];
                        z[(k, i + 1)] = s * z[(k, i)] + c * f;
                        z[(k, i)] = c * z[(k, i)] - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    // Sort ascending, permuting eigenvector columns alongside.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let z = z.map(|z| {
        let mut out = DMatrix::<f64>::zeros(n, n);
        for (new_col, &old_col) in order.iter().enumerate() {
            out.set_column(new_col, &z.column(old_col));
        }
        out
    });
    (sorted, z)
}

/// Number of eigenvalues strictly below `x`, by the Sturm sequence of
/// leading principal minors.
pub fn count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let n = diag.len();
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..n {
        let b2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = if q != 0.0 {
            diag[i] - x - b2 / q
        } else {
            diag[i] - x - b2 / f64::MIN_POSITIVE
        };
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest eigenvalue by Sturm bisection; independent of the QL route.
pub fn smallest_eigenvalue_bisect(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    // Gershgorin bounds.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let radius = if i > 0 { off[i - 1].abs() } else { 0.0 }
            + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - radius);
        hi = hi.max(diag[i] + radius);
    }
    let scale = lo.abs().max(hi.abs()).max(1e-300);
    let mut lo = lo - 1e-12 * scale;
    let mut hi = hi + 1e-12 * scale;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(diag, off, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * scale {
            break;
        }
    }
    0.5 * (lo + hi)
}
