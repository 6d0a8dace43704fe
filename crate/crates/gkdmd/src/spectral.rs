//! Numerical linear algebra policies shared by training, prediction and the
//! oracle: symmetric eigendecomposition with PSD clamping, truncated
//! pseudo-inverse factors, dense nonsymmetric eigenproblems with complex
//! eigenvectors, and eigenvalue pairing between two matrices that share a
//! spectrum.
//!
//! Everything here is dense and deterministic: eigenvalue ordering, sign and
//! phase conventions are pinned so that fitted models serialize identically
//! across runs.

mod real_eig;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_TOL_REL: f64 = 1e-10;

/// Relative eigenvalue tolerance used to pair the two reduced-operator
/// matrices; larger discrepancies indicate a rank-truncation inconsistency
/// worth surfacing.
pub const DEFAULT_TOL_MATCH: f64 = 1e-6;

/// Eigendecomposition of a symmetric positive semidefinite matrix.
///
/// `vectors` has orthonormal columns, `values` is sorted descending with
/// small negative round-off clamped to zero, and `numerical_rank` counts the
/// values above `tol_rel * values[0]`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
    pub numerical_rank: usize,
}

/// Symmetric eigendecomposition with descending eigenvalues.
///
/// Negative eigenvalues within `tol_rel * values[0]` of zero are clamped to
/// zero (round-off on a Gram matrix); anything more negative is rejected as
/// a genuine positive-semidefiniteness violation.
pub fn sym_eig(s: &DMatrix<f64>, tol_rel: f64) -> Result<SymEig> {
    let m = s.nrows();
    if m == 0 || s.ncols() != m {
        return Err(Error::Input(format!(
            "sym_eig requires a nonempty square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if !(tol_rel > 0.0 && tol_rel < 1.0) {
        return Err(Error::Input(format!("tol_rel must lie in (0,1), got {tol_rel}")));
    }
    let norm = s.norm();
    let asym = (s - s.transpose()).norm();
    if asym > 1e-8 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Input(format!(
            "sym_eig input is not symmetric: ‖S - Sᵀ‖ = {asym:e} vs ‖S‖ = {norm:e}"
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sym_eig input contains non-finite entries".into()));
    }

    // Work on the exactly symmetric part so the decomposition ignores
    // sub-tolerance asymmetry in the input.
    let sym = (s + s.transpose()) * 0.5;
    let decomp = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| decomp.eigenvalues[b].total_cmp(&decomp.eigenvalues[a]));

    let mut values = DVector::zeros(m);
    let mut vectors = DMatrix::zeros(m, m);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = decomp.eigenvalues[src];
        vectors.set_column(dst, &decomp.eigenvectors.column(src));
    }

    // Deterministic sign convention: the largest-magnitude component of each
    // eigenvector is positive.
    for j in 0..m {
        let mut idx = 0;
        let mut best = 0.0f64;
        for i in 0..m {
            let mag = vectors[(i, j)].abs();
            if mag > best {
                best = mag;
                idx = i;
            }
        }
        if vectors[(idx, j)] < 0.0 {
            for i in 0..m {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }

    let top = values[0].max(0.0);
    let clamp = tol_rel * top;
    for i in 0..m {
        if values[i] < 0.0 {
            if values[i] >= -clamp {
                values[i] = 0.0;
            } else {
                return Err(Error::Numeric(format!(
                    "matrix is not positive semidefinite: eigenvalue {:e} below -{:e}",
                    values[i], clamp
                )));
            }
        }
    }
    let numerical_rank = (0..m).filter(|&i| values[i] > tol_rel * top).count();

    Ok(SymEig {
        vectors,
        values,
        numerical_rank,
    })
}

/// Truncated pseudo-inverse factor `diag(d) Vᵀ` with
/// `d_i = 1/sqrt(values[i])` for `i < min(k, numerical_rank)` and zero
/// otherwise.
///
/// The singular values of the underlying operator are the square roots of
/// the Gram eigenvalues, so with `k = m` this is the full factor `R`; with
/// `k < m` it is the rank-truncated `S_k`.
pub fn truncated_pinv_factor(eig: &SymEig, k: usize) -> DMatrix<f64> {
    let m = eig.values.len();
    assert!(k >= 1 && k <= m, "truncated_pinv_factor requires 1 <= k <= m");
    let keep = k.min(eig.numerical_rank);
    let mut out = eig.vectors.transpose();
    for i in 0..m {
        let scale = if i < keep { 1.0 / eig.values[i].sqrt() } else { 0.0 };
        for j in 0..m {
            out[(i, j)] *= scale;
        }
    }
    out
}

/// Matched complex eigen-triples of the two reduced-operator matrices.
///
/// `xi` holds the left factors and `zeta` the right factors, column `i`
/// belonging to `lambdas[i]`. Magnitudes are sorted descending and conjugate
/// pairs of a real input matrix sit adjacently. After the training rescale,
/// `ζ̃_i* E ξ̃_i = 1` for every retained triple.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub lambdas: Vec<Complex64>,
    pub xi: DMatrix<Complex64>,
    pub zeta: DMatrix<Complex64>,
}

impl EigenSystem {
    pub fn k(&self) -> usize {
        self.lambdas.len()
    }

    pub fn empty(m: usize) -> Self {
        EigenSystem {
            lambdas: Vec::new(),
            xi: DMatrix::zeros(m, 0),
            zeta: DMatrix::zeros(m, 0),
        }
    }
}

/// Ordering used for all eigenvalue lists: magnitude descending, ties broken
/// by descending real part, then descending imaginary part.
pub fn eig_order(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then_with(|| b.re.total_cmp(&a.re))
        .then_with(|| b.im.total_cmp(&a.im))
}

/// Top-`k` eigenpairs of a real square matrix by eigenvalue magnitude.
///
/// Eigenvectors are unit 2-norm with the phase fixed so that the
/// largest-magnitude component is real positive, making the output
/// reproducible across runs.
pub fn nonsym_eig(m: &DMatrix<f64>, k: usize) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::Input(format!(
            "nonsym_eig requires a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if k > n {
        return Err(Error::Input(format!("requested {k} eigenpairs from a {n}x{n} matrix")));
    }
    let (values, vectors) = real_eig::eig_real(m)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig_order(&values[a], &values[b]));

    let mut out_vals = Vec::with_capacity(k);
    let mut out_vecs = DMatrix::<Complex64>::zeros(n, k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        out_vals.push(values[src]);
        let col = vectors.column(src);
        let norm: f64 = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric(format!(
                "eigenvector {src} of a {n}x{n} matrix is numerically zero"
            )));
        }
        let mut idx = 0;
        let mut best = 0.0f64;
        for i in 0..n {
            let mag = col[i].norm();
            if mag > best {
                best = mag;
                idx = i;
            }
        }
        let pivot = col[idx];
        let phase = pivot.conj() / pivot.norm();
        for i in 0..n {
            out_vecs[(i, dst)] = col[i] * phase / norm;
        }
    }
    Ok((out_vals, out_vecs))
}

/// Greedy nearest-neighbor matching of two eigenpair lists in the complex
/// plane.
///
/// The output keeps the ordering of the `right` list; `left` vectors are
/// permuted onto their matched positions. A pair further apart than
/// `tol_match * max(1, |λ|)` means the two matrices do not share a spectrum
/// to working precision, which signals a rank or tolerance inconsistency
/// upstream.
pub fn pair_eigensystems(
    left: &(Vec<Complex64>, DMatrix<Complex64>),
    right: &(Vec<Complex64>, DMatrix<Complex64>),
    tol_match: f64,
) -> Result<EigenSystem> {
    let (left_vals, left_vecs) = left;
    let (right_vals, right_vecs) = right;
    let k = left_vals.len();
    if right_vals.len() != k {
        return Err(Error::Input(format!(
            "cannot pair eigen lists of lengths {} and {}",
            k,
            right_vals.len()
        )));
    }
    let m = left_vecs.nrows();
    if right_vecs.nrows() != m {
        return Err(Error::Input("eigenvector lengths differ between the two lists".into()));
    }
    if k == 0 {
        return Ok(EigenSystem::empty(m));
    }

    // Globally-closest-first greedy matching with deterministic tie-breaks.
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for (i, l) in left_vals.iter().enumerate() {
        for (j, r) in right_vals.iter().enumerate() {
            edges.push(((l - r).norm(), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut left_used = vec![false; k];
    let mut right_match = vec![usize::MAX; k];
    let mut matched = 0;
    for (_, i, j) in edges {
        if left_used[i] || right_match[j] != usize::MAX {
            continue;
        }
        left_used[i] = true;
        right_match[j] = i;
        matched += 1;
        if matched == k {
            break;
        }
    }

    for j in 0..k {
        let i = right_match[j];
        let dist = (left_vals[i] - right_vals[j]).norm();
        let allowed = tol_match * left_vals[i].norm().max(1.0);
        if dist > allowed {
            return Err(Error::Model(format!(
                "eigenvalue mismatch between the left and right reduced matrices: \
                 |{} - {}| = {dist:e} exceeds {allowed:e}",
                left_vals[i], right_vals[j]
            )));
        }
    }

    let mut xi = DMatrix::<Complex64>::zeros(m, k);
    let mut zeta = DMatrix::<Complex64>::zeros(m, k);
    let mut lambdas = Vec::with_capacity(k);
    for j in 0..k {
        let i = right_match[j];
        xi.set_column(j, &left_vecs.column(i));
        zeta.set_column(j, &right_vecs.column(j));
        lambdas.push(right_vals[j]);
    }
    Ok(EigenSystem { lambdas, xi, zeta })
}
