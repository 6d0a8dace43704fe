//! Dense eigendecomposition of a real square matrix with eigenvectors.
//!
//! Householder reduction to Hessenberg form followed by the shifted
//! double-step QR iteration with eigenvector back-substitution, adapted from
//! the classic EISPACK `orthes`/`hqr2` routines (via the public-domain JAMA
//! translation). Complex conjugate eigenpairs come out adjacent, with the
//! positive-imaginary member first.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

const EPS: f64 = 2.220446049250313e-16;

/// All eigenvalues and right eigenvectors of a real `n×n` matrix.
///
/// Returns `(values, vectors)` where `vectors.column(i)` solves
/// `A v = values[i] v`. Vectors are not normalized here; callers scale and
/// phase-fix as needed.
pub(crate) fn eig_real(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eig_real requires a square matrix");
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition input contains non-finite entries".into()));
    }

    let mut h = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    orthes(&mut h, &mut v);
    let (d, e) = hqr2(&mut h, &mut v)?;

    // Assemble complex eigenpairs. For a conjugate pair stored at columns
    // (j, j+1) with e[j] > 0, hqr2 leaves the real part of the eigenvector in
    // column j and the imaginary part in column j+1.
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut j = 0;
    while j < n {
        if e[j] == 0.0 {
            values.push(Complex64::new(d[j], 0.0));
            for i in 0..n {
                vectors[(i, j)] = Complex64::new(v[(i, j)], 0.0);
            }
            j += 1;
        } else {
            values.push(Complex64::new(d[j], e[j]));
            values.push(Complex64::new(d[j + 1], e[j + 1]));
            for i in 0..n {
                let re = v[(i, j)];
                let im = v[(i, j + 1)];
                vectors[(i, j)] = Complex64::new(re, im);
                vectors[(i, j + 1)] = Complex64::new(re, -im);
            }
            j += 2;
        }
    }
    Ok((values, vectors))
}

/// Householder reduction of `h` to upper Hessenberg form, accumulating the
/// orthogonal similarity transformation into `v`.
fn orthes(h: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    let n = h.nrows();
    if n < 3 {
        return;
    }
    let low = 0;
    let high = n - 1;
    let mut ort = vec![0.0; n];

    for m in (low + 1)..high {
        let mut scale = 0.0;
        for i in m..=high {
            scale += h[(i, m - 1)].abs();
        }
        if scale != 0.0 {
            let mut hh = 0.0;
            for i in (m..=high).rev() {
                ort[i] = h[(i, m - 1)] / scale;
                hh += ort[i] * ort[i];
            }
            let mut g = hh.sqrt();
            if ort[m] > 0.0 {
                g = -g;
            }
            hh -= ort[m] * g;
            ort[m] -= g;

            // Apply the Householder similarity transformation
            // H = (I - u uᵀ/h) H (I - u uᵀ/h).
            for j in m..n {
                let mut f = 0.0;
                for i in (m..=high).rev() {
                    f += ort[i] * h[(i, j)];
                }
                f /= hh;
                for i in m..=high {
                    h[(i, j)] -= f * ort[i];
                }
            }
            for i in 0..=high {
                let mut f = 0.0;
                for j in (m..=high).rev() {
                    f += ort[j] * h[(i, j)];
                }
                f /= hh;
                for j in m..=high {
                    h[(i, j)] -= f * ort[j];
                }
            }
            ort[m] *= scale;
            h[(m, m - 1)] = scale * g;
        }
    }

    // Accumulate transformations.
    for m in ((low + 1)..high).rev() {
        if h[(m, m - 1)] != 0.0 {
            for i in (m + 1)..=high {
                ort[i] = h[(i, m - 1)];
            }
            for j in m..=high {
                let mut g = 0.0;
                for i in m..=high {
                    g += ort[i] * v[(i, j)];
                }
                // Double division avoids possible underflow.
                g = (g / ort[m]) / h[(m, m - 1)];
                for i in m..=high {
                    v[(i, j)] += g * ort[i];
                }
            }
        }
    }
}

/// Robust complex division `(xr + i·xi) / (yr + i·yi)`.
fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

/// QR iteration on a Hessenberg matrix `h`, accumulating into `v`.
///
/// Returns the eigenvalues as `(real, imag)` arrays; on exit the columns of
/// `v` hold eigenvector data as described in [`eig_real`].
#[allow(clippy::needless_range_loop, unused_assignments)]
fn hqr2(h: &mut DMatrix<f64>, v: &mut DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let nn = h.nrows();
    let mut d = vec![0.0; nn];
    let mut e = vec![0.0; nn];

    let low: usize = 0;
    let high: usize = nn - 1;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut w, mut x, mut y): (f64, f64, f64);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }

    // `n` walks down from nn-1 as eigenvalues deflate off the bottom.
    let mut n = nn as isize - 1;
    let mut iter = 0usize;
    let mut total_iter = 0usize;
    let max_total_iter = 60 * nn.max(8);

    while n >= low as isize {
        let nu = n as usize;

        // Look for a single small subdiagonal element.
        let mut l = nu;
        while l > low {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() <= EPS * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            // One root found.
            h[(nu, nu)] += exshift;
            d[nu] = h[(nu, nu)];
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l == nu - 1 {
            // Two roots found.
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            x = h[(nu, nu)];
            if q >= 0.0 {
                // Real pair.
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = d[nu - 1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
                x = h[(nu, nu - 1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in (nu - 1)..nn {
                    z = h[(nu - 1, j)];
                    h[(nu - 1, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, nu - 1)];
                    h[(i, nu - 1)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in low..=high {
                    z = v[(i, nu - 1)];
                    v[(i, nu - 1)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
            } else {
                // Complex pair.
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            // No convergence yet; form a shift.
            x = h[(nu, nu)];
            y = 0.0;
            w = 0.0;
            if l < nu {
                y = h[(nu - 1, nu - 1)];
                w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            }

            // Wilkinson's original ad hoc shift.
            if iter == 10 || iter == 20 {
                exshift += x;
                for i in low..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }

            // MATLAB's new ad hoc shift.
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            total_iter += 1;
            if total_iter > max_total_iter {
                return Err(Error::Numeric(format!(
                    "QR eigenvalue iteration failed to converge after {total_iter} sweeps \
                     on a {nn}x{nn} matrix"
                )));
            }

            // Look for two consecutive small sub-diagonal elements.
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < EPS
                        * (p.abs()
                            * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in (m + 2)..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // Double QR step involving rows l..=n and columns m..=n.
            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }

                    for i in 0..=nu.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }

                    for i in low..=high {
                        p = x * v[(i, k)] + y * v[(i, k + 1)];
                        if notlast {
                            p += z * v[(i, k + 2)];
                            v[(i, k + 2)] -= p * r;
                        }
                        v[(i, k)] -= p;
                        v[(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }

    // Backsubstitute to find vectors of upper triangular form.
    if norm == 0.0 {
        return Ok((d, e));
    }

    for nsub in (0..nn).rev() {
        p = d[nsub];
        q = e[nsub];

        if q == 0.0 {
            // Real vector.
            let mut l = nsub;
            h[(nsub, nsub)] = 1.0;
            for i in (0..nsub).rev() {
                w = h[(i, i)] - p;
                r = 0.0;
                for j in l..=nsub {
                    r += h[(i, j)] * h[(j, nsub)];
                }
                if e[i] < 0.0 {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        h[(i, nsub)] = if w != 0.0 { -r / w } else { -r / (EPS * norm) };
                    } else {
                        // Solve the 2x2 block coupled equations.
                        x = h[(i, i + 1)];
                        y = h[(i + 1, i)];
                        let qq = (d[i] - p) * (d[i] - p) + e[i] * e[i];
                        let t = (x * s - z * r) / qq;
                        h[(i, nsub)] = t;
                        h[(i + 1, nsub)] = if x.abs() > z.abs() {
                            (-r - w * t) / x
                        } else {
                            (-s - y * t) / z
                        };
                    }
                    // Overflow control.
                    let t = h[(i, nsub)].abs();
                    if (EPS * t) * t > 1.0 {
                        for j in i..=nsub {
                            h[(j, nsub)] /= t;
                        }
                    }
                }
            }
        } else if q < 0.0 {
            // Complex vector, stored as (real, imag) in columns nsub-1, nsub.
            let na = nsub - 1;
            let mut l = na;

            if h[(nsub, na)].abs() > h[(na, nsub)].abs() {
                h[(na, na)] = q / h[(nsub, na)];
                h[(na, nsub)] = -(h[(nsub, nsub)] - p) / h[(nsub, na)];
            } else {
                let (cr, ci) = cdiv(0.0, -h[(na, nsub)], h[(na, na)] - p, q);
                h[(na, na)] = cr;
                h[(na, nsub)] = ci;
            }
            h[(nsub, na)] = 0.0;
            h[(nsub, nsub)] = 1.0;
            for i in (0..na).rev() {
                let mut ra = 0.0;
                let mut sa = 0.0;
                for j in l..=nsub {
                    ra += h[(i, j)] * h[(j, na)];
                    sa += h[(i, j)] * h[(j, nsub)];
                }
                w = h[(i, i)] - p;

                if e[i] < 0.0 {
                    z = w;
                    r = ra;
                    s = sa;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        let (cr, ci) = cdiv(-ra, -sa, w, q);
                        h[(i, na)] = cr;
                        h[(i, nsub)] = ci;
                    } else {
                        // Solve complex 2x2 block coupled equations.
                        x = h[(i, i + 1)];
                        y = h[(i + 1, i)];
                        let mut vr = (d[i] - p) * (d[i] - p) + e[i] * e[i] - q * q;
                        let vi = (d[i] - p) * 2.0 * q;
                        if vr == 0.0 && vi == 0.0 {
                            vr = EPS
                                * norm
                                * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (cr, ci) =
                            cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                        h[(i, na)] = cr;
                        h[(i, nsub)] = ci;
                        if x.abs() > z.abs() + q.abs() {
                            h[(i + 1, na)] = (-ra - w * h[(i, na)] + q * h[(i, nsub)]) / x;
                            h[(i + 1, nsub)] = (-sa - w * h[(i, nsub)] - q * h[(i, na)]) / x;
                        } else {
                            let (cr, ci) =
                                cdiv(-r - y * h[(i, na)], -s - y * h[(i, nsub)], z, q);
                            h[(i + 1, na)] = cr;
                            h[(i + 1, nsub)] = ci;
                        }
                    }
                    // Overflow control.
                    let t = h[(i, na)].abs().max(h[(i, nsub)].abs());
                    if (EPS * t) * t > 1.0 {
                        for j in i..=nsub {
                            h[(j, na)] /= t;
                            h[(j, nsub)] /= t;
                        }
                    }
                }
            }
        }
    }

    // Back transformation to get eigenvectors of the original matrix.
    for j in (low..nn).rev() {
        for i in low..=high {
            z = 0.0;
            for k in low..=j.min(high) {
                z += v[(i, k)] * h[(k, j)];
            }
            v[(i, j)] = z;
        }
    }

    Ok((d, e))
}
