//! Ground-truth machinery: an explicit-feature-map EDMD that builds the
//! optimal rank-k operator directly in a finite-dimensional feature space,
//! and the K-DMD baseline.
//!
//! For polynomial and linear kernels the feature map is finite, so the
//! operator `A*_k = P_{Z^k} B A†` can be formed as a dense `D×D` matrix and
//! its eigenvalues and residuals computed outright. The kernelized training
//! path must reproduce those numbers exactly (up to round-off); that
//! equivalence check is this module's reason to exist. The Gaussian kernel
//! has no finite feature map and is excluded from the explicit route.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec};
use crate::spectral::{self, DEFAULT_TOL_REL};
use crate::train::SnapshotPairs;

/// Largest explicit feature dimension accepted for dense algebra.
const MAX_FEATURE_DIM: usize = 4096;

/// Explicit finite-dimensional feature map dual to a kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMapKind {
    /// Weighted monomials up to `degree` over `p` variables plus the offset
    /// slot, so that `⟨Φ(y), Φ(z)⟩ = (offset + yᵀz)^degree`.
    PolynomialExplicit { degree: u32, offset: f64, p: usize },
    /// Identity map, dual to the linear kernel.
    LinearExplicit { p: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub kind: FeatureMapKind,
    /// Feature dimension `D`.
    pub d: usize,
    /// Exponent layout for the polynomial map: one multi-index
    /// `(α₀, α₁, …, α_p)` per feature, `α₀` belonging to the offset slot.
    /// Ordered lexicographically descending: constant first, then degree-1
    /// monomials in index order, then higher degrees.
    exponents: Vec<Vec<u32>>,
}

impl FeatureMap {
    pub fn polynomial(degree: u32, offset: f64, p: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Input("polynomial feature map requires degree >= 1".into()));
        }
        if p == 0 {
            return Err(Error::Input("feature map requires state dimension >= 1".into()));
        }
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(Error::Input(format!("polynomial offset must be >= 0, got {offset}")));
        }
        let mut exponents = Vec::new();
        let mut current = vec![0u32; p + 1];
        enumerate_multi_indices(degree, 0, &mut current, &mut exponents);
        let d = exponents.len();
        if d > MAX_FEATURE_DIM {
            return Err(Error::Input(format!(
                "explicit feature dimension {d} (degree {degree}, p {p}) is infeasible \
                 for dense algebra (limit {MAX_FEATURE_DIM})"
            )));
        }
        Ok(FeatureMap {
            kind: FeatureMapKind::PolynomialExplicit { degree, offset, p },
            d,
            exponents,
        })
    }

    pub fn linear(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Input("feature map requires state dimension >= 1".into()));
        }
        Ok(FeatureMap {
            kind: FeatureMapKind::LinearExplicit { p },
            d: p,
            exponents: Vec::new(),
        })
    }

    /// The feature map dual to `kernel` on `p`-dimensional states, if one
    /// exists. The Gaussian kernel is infinite-dimensional.
    pub fn matching(kernel: &KernelSpec, p: usize) -> Result<Self> {
        match *kernel {
            KernelSpec::Polynomial { degree, offset } => Self::polynomial(degree, offset, p),
            KernelSpec::Linear => Self::linear(p),
            KernelSpec::Gaussian { .. } => Err(Error::Input(
                "the gaussian kernel has no finite explicit feature map".into(),
            )),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            FeatureMapKind::PolynomialExplicit { p, .. } => p,
            FeatureMapKind::LinearExplicit { p } => p,
        }
    }
}

/// Multi-indices over the slots of `current` summing exactly to `remaining`,
/// in lexicographically descending order.
fn enumerate_multi_indices(
    remaining: u32,
    slot: usize,
    current: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    let slots = current.len();
    if slot == slots - 1 {
        current[slot] = remaining;
        out.push(current.clone());
        current[slot] = 0;
        return;
    }
    for value in (0..=remaining).rev() {
        current[slot] = value;
        enumerate_multi_indices(remaining - value, slot + 1, current, out);
        current[slot] = 0;
    }
}

fn multinomial(n: u32, parts: &[u32]) -> f64 {
    let mut result = 1.0f64;
    let mut left = n;
    for &part in parts {
        for i in 1..=part {
            result *= left as f64 / i as f64;
            left -= 1;
        }
    }
    result
}

/// Canonical weighted monomial feature vector of `z`.
///
/// Weights are chosen so that `⟨Φ(y), Φ(z)⟩` reproduces the kernel exactly:
/// the feature for multi-index `α` is
/// `sqrt(multinomial(degree, α) · offset^α₀) · Π z_i^{α_i}`.
pub fn feature_map_apply(fm: &FeatureMap, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != fm.state_dim() {
        return Err(Error::Input(format!(
            "state has dimension {}, feature map expects {}",
            z.len(),
            fm.state_dim()
        )));
    }
    match fm.kind {
        FeatureMapKind::LinearExplicit { .. } => Ok(z.to_vec()),
        FeatureMapKind::PolynomialExplicit { degree, offset, .. } => {
            let mut out = Vec::with_capacity(fm.d);
            for alpha in &fm.exponents {
                let weight = (multinomial(degree, alpha) * offset.powi(alpha[0] as i32)).sqrt();
                let mut value = weight;
                for (i, &exp) in alpha.iter().enumerate().skip(1) {
                    value *= z[i - 1].powi(exp as i32);
                }
                out.push(value);
            }
            Ok(out)
        }
    }
}

/// Applies the feature map to every column of `m`, producing `D×ncols`.
pub fn feature_matrix(fm: &FeatureMap, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = m.ncols();
    let mut out = DMatrix::zeros(fm.d, cols);
    for j in 0..cols {
        let col: Vec<f64> = m.column(j).iter().cloned().collect();
        let phi = feature_map_apply(fm, &col)?;
        for i in 0..fm.d {
            out[(i, j)] = phi[i];
        }
    }
    Ok(out)
}

/// Output of the explicit feature-space reference decomposition.
#[derive(Debug, Clone)]
pub struct EdmdExact {
    /// Nonzero eigenvalues of the rank-`k` optimal operator, in magnitude
    /// order.
    pub eigvals: Vec<Complex64>,
    /// `‖B − A*_j A‖_F` in feature space for `j = 1..=k`.
    pub residuals: Vec<f64>,
}

/// Builds `A*_k = P_{Z^k} B A†` explicitly in feature space and returns its
/// nonzero eigenvalues together with the residual curve over ranks `1..=k`.
///
/// Singular values below `sqrt(tol) · σ_max` are treated as zero with
/// `tol = 1e-10`, matching the Gram-eigenvalue rank policy of the kernelized
/// path (Gram eigenvalues are squared singular values).
pub fn edmd_exact(data: &SnapshotPairs, fm: &FeatureMap, k: usize) -> Result<EdmdExact> {
    let m = data.m();
    if k < 1 || k > m {
        return Err(Error::Input(format!("k must lie in 1..={m}, got {k}")));
    }
    if fm.state_dim() != data.p() {
        return Err(Error::Input(format!(
            "feature map expects state dimension {}, data has {}",
            fm.state_dim(),
            data.p()
        )));
    }
    let sigma_tol = DEFAULT_TOL_REL.sqrt();

    let a = feature_matrix(fm, data.x())?;
    let b = feature_matrix(fm, data.y())?;

    // Projector onto range(A*) ⊂ R^m from the right singular vectors of A.
    let svd_a = a.clone().svd(true, true);
    let u_a = svd_a.u.as_ref().expect("svd requested u");
    let vt_a = svd_a.v_t.as_ref().expect("svd requested v_t");
    let smax_a = svd_a.singular_values.max();
    let rank_a = svd_a
        .singular_values
        .iter()
        .filter(|&&s| s > sigma_tol * smax_a)
        .count();

    // P = V_r V_rᵀ.
    let v_r = vt_a.rows(0, rank_a).transpose();
    let p_astar = &v_r * v_r.transpose();

    // A† = V_r Σ_r⁻¹ U_rᵀ.
    let mut a_pinv = DMatrix::zeros(m, a.nrows());
    for i in 0..rank_a {
        let scale = 1.0 / svd_a.singular_values[i];
        let ui = u_a.column(i);
        let vi = v_r.column(i);
        for row in 0..m {
            for col in 0..a.nrows() {
                a_pinv[(row, col)] += scale * vi[row] * ui[col];
            }
        }
    }

    let z = &b * &p_astar;
    let svd_z = z.clone().svd(true, false);
    let u_z = svd_z.u.as_ref().expect("svd requested u");
    let smax_z = svd_z.singular_values.max();
    let rank_z = svd_z
        .singular_values
        .iter()
        .filter(|&&s| s > sigma_tol * smax_z)
        .count();

    let least_squares = &b * &a_pinv; // B A†, D×D

    let mut residuals = Vec::with_capacity(k);
    let mut top_eigvals = Vec::new();
    for j in 1..=k {
        let keep = j.min(rank_z);
        let u_j = u_z.columns(0, keep);
        let projector = &u_j * u_j.transpose();
        let a_star_j = &projector * &least_squares;
        let residual = (&b - &a_star_j * &a).norm();
        residuals.push(residual);
        if j == k {
            let mut eigvals: Vec<Complex64> =
                a_star_j.complex_eigenvalues().iter().cloned().collect();
            let scale = eigvals.iter().map(|l| l.norm()).fold(1.0f64, f64::max);
            eigvals.retain(|l| l.norm() > 1e-12 * scale);
            eigvals.sort_by(spectral::eig_order);
            top_eigvals = eigvals;
        }
    }

    Ok(EdmdExact {
        eigvals: top_eigvals,
        residuals,
    })
}

/// K-DMD baseline model.
///
/// Carries the spectral data of the unconstrained least-squares operator
/// compressed through the kernel trick, plus modes solving the linear
/// inverse problem `min ‖Xᵀ − Φ_x Mᵀ‖_F`.
#[derive(Debug, Clone)]
pub struct KdmdModel {
    pub kernel: KernelSpec,
    /// Retained eigenpair count (the requested `k` truncated to the rank of
    /// the Gram matrix of X).
    pub k: usize,
    pub eigvals: Vec<Complex64>,
    /// `m×k` coefficients; the eigenfunction values at a state θ are
    /// `gram(κ, X, θ)ᵀ · eigfun_coeffs`.
    pub eigfun_coeffs: DMatrix<Complex64>,
    /// `p×k` modes.
    pub modes: DMatrix<Complex64>,
    pub x: DMatrix<f64>,
    /// Numerical rank of `gram(κ, X, X)`; below `m` the full-rank assumption
    /// of the method is violated and `k` was truncated to it.
    pub rank_a: usize,
}

/// Fits the K-DMD baseline.
///
/// Eigendecomposes `G_AA = Q Σ² Qᵀ`, forms `K̂ = Σ†Qᵀ G_BA Q Σ†`, takes its
/// top-`k` eigenpairs, and solves the least-squares mode problem under the
/// linear-inverse assumption. A rank-deficient `G_AA` truncates `k` to the
/// numerical rank.
pub fn kdmd_fit(data: &SnapshotPairs, kernel: &KernelSpec, k: usize) -> Result<KdmdModel> {
    kernel.validate()?;
    let m = data.m();
    if k < 1 || k > m {
        return Err(Error::Input(format!("k must lie in 1..={m}, got {k}")));
    }

    let g_aa = kernels::gram(kernel, data.x(), data.x())?;
    let g_ba = kernels::gram(kernel, data.y(), data.x())?;

    let eig = spectral::sym_eig(&g_aa, DEFAULT_TOL_REL)?;
    let rank_a = eig.numerical_rank;
    if rank_a == 0 {
        return Err(Error::Numeric("gram matrix of X is numerically zero".into()));
    }
    let k_eff = k.min(rank_a);

    let q = &eig.vectors;
    let sigma: DVector<f64> = eig.values.map(|v| v.sqrt());
    let sigma_dag: DVector<f64> =
        DVector::from_fn(m, |i, _| if i < rank_a { 1.0 / sigma[i] } else { 0.0 });

    // K̂ = Σ† Qᵀ G_BA Q Σ†.
    let core = q.transpose() * &g_ba * q;
    let k_hat = DMatrix::from_fn(m, m, |i, j| sigma_dag[i] * core[(i, j)] * sigma_dag[j]);

    let (eigvals, vhat) = spectral::nonsym_eig(&k_hat, k_eff)?;

    // Eigenfunction coefficients QΣ†V̂ and snapshot values Φ_x = QΣV̂.
    let q_c = q.map(|v| Complex64::new(v, 0.0));
    let scale_rows = |weights: &DVector<f64>, mat: &DMatrix<Complex64>| {
        DMatrix::from_fn(m, k_eff, |i, j| mat[(i, j)] * weights[i])
    };
    let eigfun_coeffs = &q_c * scale_rows(&sigma_dag, &vhat);
    let phi_x = &q_c * scale_rows(&sigma, &vhat);

    // Modes: Mᵀ = Φ_x† Xᵀ.
    let xt_c = data.x().transpose().map(|v| Complex64::new(v, 0.0));
    let modes_t = complex_pinv_apply(&phi_x, &xt_c)?;
    let modes = modes_t.transpose();

    Ok(KdmdModel {
        kernel: kernel.clone(),
        k: k_eff,
        eigvals,
        eigfun_coeffs,
        modes,
        x: data.x().clone(),
        rank_a,
    })
}

/// Solves `min ‖A W - B‖_F` for `W` through the SVD of `A`, zeroing singular
/// values below `sqrt(tol) · σ_max`.
fn complex_pinv_apply(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let smax = svd.singular_values.max();
    let tol = DEFAULT_TOL_REL.sqrt() * smax.max(f64::MIN_POSITIVE);
    let mut core = u.adjoint() * b;
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        let scale = if s > tol { 1.0 / s } else { 0.0 };
        for j in 0..core.ncols() {
            core[(i, j)] *= Complex64::new(scale, 0.0);
        }
    }
    Ok(vt.adjoint() * core)
}

/// One K-DMD prediction: `x̃_T = Re(Σ_j λ_j^{T-1} φ_j(θ) m_j)`.
pub fn kdmd_predict(model: &KdmdModel, theta: &[f64], t: u64) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::Input(format!("prediction horizon must be >= 2, got {t}")));
    }
    let kvec = kernels::gram_vec(&model.kernel, &model.x, theta)?;
    let p = model.x.nrows();
    let mut out = vec![Complex64::new(0.0, 0.0); p];
    for j in 0..model.k {
        let mut phi = Complex64::new(0.0, 0.0);
        for i in 0..kvec.len() {
            phi += Complex64::new(kvec[i], 0.0) * model.eigfun_coeffs[(i, j)];
        }
        let weight = crate::predict::complex_pow(model.eigvals[j], t - 1) * phi;
        for row in 0..p {
            out[row] += weight * model.modes[(row, j)];
        }
    }
    Ok(out.iter().map(|c| c.re).collect())
}
