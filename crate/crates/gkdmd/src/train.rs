//! Offline training: Gram assembly, truncated pseudo-inverse factors, the
//! two reduced-operator matrices, eigen-triple extraction and rescaling, and
//! reduced-model (de)serialization.
//!
//! The fitted operator is the rank-`k` minimizer of `‖B − A A‖` over
//! operators on the feature space, where `A` and `B` carry the lifted
//! predecessor and successor snapshots. Everything is computed at `m×m`
//! scale through kernel evaluations; no object of feature-space dimension is
//! ever formed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec};
use crate::spectral::{self, EigenSystem, SymEig};

/// Threshold under which a biorthogonal normalization scalar counts as zero,
/// relative to `‖E‖`.
const BIORTH_TOL: f64 = 1e-12;

/// Model file schema version.
const MODEL_VERSION: u32 = 1;

/// Paired snapshot matrices: column `j` of `Y` is the one-step successor of
/// column `j` of `X` within its source trajectory.
///
/// Columns are laid out trajectory-major: trajectory `i` (0-based)
/// contributes columns `i·(T'-1) .. (i+1)·(T'-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPairs {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    n_traj: usize,
    t_prime: usize,
}

impl SnapshotPairs {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, n_traj: usize, t_prime: usize) -> Result<Self> {
        if t_prime < 2 {
            return Err(Error::Input(format!(
                "trajectory length T' must be >= 2, got {t_prime}"
            )));
        }
        if n_traj == 0 {
            return Err(Error::Input("need at least one trajectory".into()));
        }
        if x.shape() != y.shape() {
            return Err(Error::Input(format!(
                "X and Y must have identical shapes, got {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Input("state dimension must be >= 1".into()));
        }
        let m = n_traj * (t_prime - 1);
        if x.ncols() != m {
            return Err(Error::Input(format!(
                "layout ({n_traj} trajectories, T' = {t_prime}) implies m = {m} snapshot \
                 pairs, matrices have {}",
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("snapshot matrices contain non-finite entries".into()));
        }
        Ok(SnapshotPairs {
            x,
            y,
            n_traj,
            t_prime,
        })
    }

    /// Wraps plain paired matrices as a single pseudo-trajectory.
    pub fn from_matrices(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let m = x.ncols();
        Self::new(x, y, 1, m + 1)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Number of snapshot pairs.
    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// State dimension.
    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn t_prime(&self) -> usize {
        self.t_prime
    }
}

/// The three `m×m` kernel products defining the training problem.
#[derive(Debug, Clone)]
pub struct GramSet {
    /// `A*A`: kernel products among predecessor snapshots.
    pub g_aa: DMatrix<f64>,
    /// `B*B`: kernel products among successor snapshots.
    pub g_bb: DMatrix<f64>,
    /// `B*A`: `g_ba[i][j] = h(y_i, x_j)`.
    pub g_ba: DMatrix<f64>,
}

/// Assembles the three Gram matrices. `A*B` is never computed separately: it
/// equals `G_BAᵀ` by kernel symmetry.
pub fn build_grams(data: &SnapshotPairs, kernel: &KernelSpec) -> Result<GramSet> {
    kernel.validate()?;
    Ok(GramSet {
        g_aa: kernels::gram(kernel, data.x(), data.x())?,
        g_bb: kernels::gram(kernel, data.y(), data.y())?,
        g_ba: kernels::gram(kernel, data.y(), data.x())?,
    })
}

/// Gram matrix `Z*Z` of the projected successor operator `Z = B P_{A*}`.
///
/// `range(A*) = range(A*A)`, so the orthogonal projector onto it is
/// `P = V_r V_rᵀ` with `V_r` the eigenvectors of `G_AA` above the rank
/// cutoff, and `Z*Z = P G_BB P`. This keeps the factorization of the
/// projected operator at `m×m` scale even though `Z` itself acts into the
/// feature space.
pub fn project_gram_z(grams: &GramSet, eig_a: &SymEig) -> DMatrix<f64> {
    let m = grams.g_bb.nrows();
    let r = eig_a.numerical_rank;
    if r == 0 {
        return DMatrix::zeros(m, m);
    }
    let v_r = eig_a.vectors.columns(0, r);
    let core = v_r.transpose() * &grams.g_bb * v_r;
    let zz = v_r * core * v_r.transpose();
    // The sandwich is symmetric up to round-off; make it exact.
    let mut out = zz.clone();
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = 0.5 * (zz[(i, j)] + zz[(j, i)]);
        }
    }
    out
}

/// The two `m×m` matrices whose top eigenpairs carry the left and right
/// eigenvector factors of the fitted low-rank operator:
/// `M_left = R G_BB S_kᵀ S_k G_BA Rᵀ` and
/// `M_right = S_k G_BB Rᵀ R G_BAᵀ S_kᵀ`.
pub fn prop33_matrices(
    grams: &GramSet,
    r: &DMatrix<f64>,
    s_k: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m_left = r * &grams.g_bb * s_k.transpose() * s_k * &grams.g_ba * r.transpose();
    let m_right = s_k * &grams.g_bb * r.transpose() * r * grams.g_ba.transpose() * s_k.transpose();
    (m_left, m_right)
}

/// A fitted reduced model: everything the online stage needs, all of it of
/// size `m` or `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub kernel: KernelSpec,
    /// Effective rank of the fitted operator: the requested rank truncated
    /// to `rank_z`.
    pub k: usize,
    pub tol_rel: f64,
    pub rank_a: usize,
    pub rank_z: usize,
    /// Predecessor snapshots, retained for online kernel products.
    pub x: DMatrix<f64>,
    /// Successor snapshots, retained for the preimage objective.
    pub y: DMatrix<f64>,
    /// Pseudo-inverse factor of the predecessor Gram (full rank retained).
    pub r: DMatrix<f64>,
    /// Rank-`k` pseudo-inverse factor of the projected successor Gram.
    pub s_k: DMatrix<f64>,
    /// Normalization matrix `S_k G_BA Rᵀ`; fitted triples satisfy
    /// `ζ̃_i* E ξ̃_i = 1`.
    pub e: DMatrix<f64>,
    pub eig: EigenSystem,
}

impl ReducedModel {
    /// Number of snapshot pairs.
    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// State dimension.
    pub fn p(&self) -> usize {
        self.x.nrows()
    }
}

/// Fits the reduced model of rank at most `k`.
///
/// Pipeline: Gram assembly, eigendecomposition of `G_AA` giving `R`,
/// projected Gram `Z*Z` giving `S_k`, the two reduced matrices, their top
/// eigenpairs, pairing, and the biorthogonal rescale of the right factors.
/// A requested `k` above `rank_z` is silently reduced: the optimizer has at
/// most `rank_z` nonzero singular directions, so larger requests change
/// nothing.
pub fn fit(
    data: &SnapshotPairs,
    kernel: &KernelSpec,
    k: usize,
    tol_rel: f64,
) -> Result<ReducedModel> {
    let m = data.m();
    if k < 1 || k > m {
        return Err(Error::Input(format!("k must lie in 1..={m}, got {k}")));
    }

    let grams = build_grams(data, kernel)?;
    let eig_a = spectral::sym_eig(&grams.g_aa, tol_rel)?;
    let rank_a = eig_a.numerical_rank;
    let r = spectral::truncated_pinv_factor(&eig_a, m);

    let zz = project_gram_z(&grams, &eig_a);
    let eig_z = spectral::sym_eig(&zz, tol_rel)?;
    let rank_z = eig_z.numerical_rank;

    let k_eff = k.min(rank_z);
    if k_eff == 0 {
        // Degenerate data (successors are zero in feature space): an empty
        // spectrum is still a valid model.
        let zeros = DMatrix::zeros(m, m);
        return Ok(ReducedModel {
            kernel: kernel.clone(),
            k: 0,
            tol_rel,
            rank_a,
            rank_z,
            x: data.x().clone(),
            y: data.y().clone(),
            r,
            s_k: zeros.clone(),
            e: zeros,
            eig: EigenSystem::empty(m),
        });
    }

    let s_k = spectral::truncated_pinv_factor(&eig_z, k_eff);
    let (m_left, m_right) = prop33_matrices(&grams, &r, &s_k);

    // The left matrix is the compression of the fitted operator's adjoint,
    // so its eigenpair (w, λ) supplies the left factor for the operator
    // eigenvalue conj(λ). Conjugating the labels (vectors untouched) lines
    // both lists up on the operator's own spectrum before pairing.
    let (left_vals, left_vecs) = spectral::nonsym_eig(&m_left, k_eff)?;
    let left = (
        left_vals.iter().map(|l| l.conj()).collect::<Vec<_>>(),
        left_vecs,
    );
    let right = spectral::nonsym_eig(&m_right, k_eff)?;

    let mut eig = spectral::pair_eigensystems(&left, &right, spectral::DEFAULT_TOL_MATCH)?;

    // Rescale right factors so that ζ̃_i* E ξ̃_i = 1 with E = S_k G_BA Rᵀ.
    let e = &s_k * &grams.g_ba * r.transpose();
    let e_norm = e.norm();
    for i in 0..k_eff {
        // d_i = ξ̃_i* Eᵀ ζ̃_i = conj(ζ̃_i* E ξ̃_i).
        let mut d = Complex64::new(0.0, 0.0);
        for row in 0..m {
            let mut et_zeta = Complex64::new(0.0, 0.0);
            for col in 0..m {
                et_zeta += Complex64::new(e[(col, row)], 0.0) * eig.zeta[(col, i)];
            }
            d += eig.xi[(row, i)].conj() * et_zeta;
        }
        if d.norm() < BIORTH_TOL * e_norm.max(f64::MIN_POSITIVE) {
            return Err(Error::Model(format!(
                "non-biorthogonal eigenpair at index {i} (|ζ̃*Eξ̃| = {:e}, ‖E‖ = {:e}): \
                 the fitted operator is too close to defective",
                d.norm(),
                e_norm
            )));
        }
        for row in 0..m {
            eig.zeta[(row, i)] /= d;
        }
    }

    Ok(ReducedModel {
        kernel: kernel.clone(),
        k: k_eff,
        tol_rel,
        rank_a,
        rank_z,
        x: data.x().clone(),
        y: data.y().clone(),
        r,
        s_k,
        e,
        eig,
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    kernel: KernelSpec,
    k: usize,
    tol_rel: f64,
    #[serde(rename = "rank_A")]
    rank_a: usize,
    #[serde(rename = "rank_Z")]
    rank_z: usize,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    y: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "S_k")]
    s_k: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    lambdas: Vec<[f64; 2]>,
    xi: Vec<Vec<[f64; 2]>>,
    zeta: Vec<Vec<[f64; 2]>>,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Format(format!("matrix {what} has no rows")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("matrix {what} has ragged rows")));
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "matrix {what} contains non-finite entries"
                )));
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn cmatrix_to_rows(m: &DMatrix<Complex64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| [m[(i, j)].re, m[(i, j)].im])
                .collect()
        })
        .collect()
}

fn rows_to_cmatrix(
    rows: &[Vec<[f64; 2]>],
    m: usize,
    k: usize,
    what: &str,
) -> Result<DMatrix<Complex64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != k) {
        return Err(Error::Format(format!("matrix {what} must be {m}x{k}")));
    }
    let mut out = DMatrix::zeros(m, k);
    for (i, row) in rows.iter().enumerate() {
        for (j, &[re, im]) in row.iter().enumerate() {
            if !(re.is_finite() && im.is_finite()) {
                return Err(Error::Format(format!(
                    "matrix {what} contains non-finite entries"
                )));
            }
            out[(i, j)] = Complex64::new(re, im);
        }
    }
    Ok(out)
}

impl ReducedModel {
    /// Serializes the model to its JSON representation.
    pub fn to_json_vec(&self) -> Result<Vec<u8>> {
        let file = ModelFile {
            version: MODEL_VERSION,
            kernel: self.kernel.clone(),
            k: self.k,
            tol_rel: self.tol_rel,
            rank_a: self.rank_a,
            rank_z: self.rank_z,
            x: matrix_to_rows(&self.x),
            y: matrix_to_rows(&self.y),
            r: matrix_to_rows(&self.r),
            s_k: matrix_to_rows(&self.s_k),
            e: matrix_to_rows(&self.e),
            lambdas: self.eig.lambdas.iter().map(|l| [l.re, l.im]).collect(),
            xi: cmatrix_to_rows(&self.eig.xi),
            zeta: cmatrix_to_rows(&self.eig.zeta),
        };
        serde_json::to_vec(&file)
            .map_err(|e| Error::Format(format!("model serialization failed: {e}")))
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::Format(format!("malformed model file: {e}")))?;
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {} (this build reads version {MODEL_VERSION})",
                file.version
            )));
        }
        file.kernel.validate()?;

        let x = rows_to_matrix(&file.x, "X")?;
        let y = rows_to_matrix(&file.y, "Y")?;
        if x.shape() != y.shape() {
            return Err(Error::Format("X and Y shapes differ".into()));
        }
        let m = x.ncols();
        let square = |rows: &[Vec<f64>], what: &str| -> Result<DMatrix<f64>> {
            let mat = rows_to_matrix(rows, what)?;
            if mat.shape() != (m, m) {
                return Err(Error::Format(format!("matrix {what} must be {m}x{m}")));
            }
            Ok(mat)
        };
        let r = square(&file.r, "R")?;
        let s_k = square(&file.s_k, "S_k")?;
        let e = square(&file.e, "E")?;

        if file.k > m {
            return Err(Error::Format(format!(
                "model invariant violated: k = {} exceeds m = {m}",
                file.k
            )));
        }
        if !(file.k <= file.rank_z && file.rank_z <= file.rank_a && file.rank_a <= m) {
            return Err(Error::Format(format!(
                "model invariant violated: expected k <= rank_Z <= rank_A <= m, got \
                 k = {}, rank_Z = {}, rank_A = {}, m = {m}",
                file.k, file.rank_z, file.rank_a
            )));
        }
        if file.lambdas.len() != file.k {
            return Err(Error::Format(format!(
                "model lists {} eigenvalues but k = {}",
                file.lambdas.len(),
                file.k
            )));
        }
        let lambdas: Vec<Complex64> = file
            .lambdas
            .iter()
            .map(|&[re, im]| Complex64::new(re, im))
            .collect();
        if lambdas.iter().any(|l| !(l.re.is_finite() && l.im.is_finite())) {
            return Err(Error::Format("eigenvalues contain non-finite entries".into()));
        }
        let xi = rows_to_cmatrix(&file.xi, m, file.k, "xi")?;
        let zeta = rows_to_cmatrix(&file.zeta, m, file.k, "zeta")?;

        Ok(ReducedModel {
            kernel: file.kernel,
            k: file.k,
            tol_rel: file.tol_rel,
            rank_a: file.rank_a,
            rank_z: file.rank_z,
            x,
            y,
            r,
            s_k,
            e,
            eig: EigenSystem { lambdas, xi, zeta },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_json_vec()?;
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating model file {}", path.display()), e))?;
        let mut writer = BufWriter::new(file);
        writer
            .write_all(&bytes)
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(format!("writing model file {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening model file {}", path.display()), e))?;
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut BufReader::new(file), &mut bytes)
            .map_err(|e| Error::io(format!("reading model file {}", path.display()), e))?;
        Self::from_json_slice(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(rng: &mut ChaCha8Rng, p: usize, m: usize) -> SnapshotPairs {
        let x = DMatrix::from_fn(p, m, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(p, m, |_, _| rng.random_range(-1.0..1.0));
        SnapshotPairs::from_matrices(x, y).unwrap()
    }

    #[test]
    fn snapshot_pairs_layout_validation() {
        let x = DMatrix::zeros(2, 6);
        let y = DMatrix::zeros(2, 6);
        assert!(SnapshotPairs::new(x.clone(), y.clone(), 2, 4).is_ok()); // 2*(4-1) = 6
        assert!(SnapshotPairs::new(x.clone(), y.clone(), 2, 3).is_err());
        assert!(SnapshotPairs::new(x.clone(), y.clone(), 2, 1).is_err());
        assert!(SnapshotPairs::new(x, DMatrix::zeros(3, 6), 2, 4).is_err());
    }

    #[test]
    fn grams_linear_kernel_are_matrix_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_data(&mut rng, 3, 5);
        let grams = build_grams(&data, &KernelSpec::linear()).unwrap();
        assert!((&grams.g_aa - data.x().transpose() * data.x()).norm() < 1e-13);
        assert!((&grams.g_bb - data.y().transpose() * data.y()).norm() < 1e-13);
        assert!((&grams.g_ba - data.y().transpose() * data.x()).norm() < 1e-13);
    }

    #[test]
    fn grams_single_pair_are_scalars() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let y = DMatrix::from_column_slice(2, 1, &[0.5, -1.0]);
        let data = SnapshotPairs::from_matrices(x, y).unwrap();
        let kernel = KernelSpec::gaussian(2.0);
        let grams = build_grams(&data, &kernel).unwrap();
        assert_eq!(grams.g_aa.shape(), (1, 1));
        let h = kernels::eval(&kernel, &[0.5, -1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(grams.g_ba[(0, 0)], h);
    }

    #[test]
    fn grams_match_explicit_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_data(&mut rng, 2, 4);
        let kernel = KernelSpec::polynomial(2, 1.0);
        let grams = build_grams(&data, &kernel).unwrap();
        let fm = oracle::FeatureMap::matching(&kernel, 2).unwrap();
        let fx = oracle::feature_matrix(&fm, data.x()).unwrap();
        let fy = oracle::feature_matrix(&fm, data.y()).unwrap();
        assert!((&grams.g_aa - fx.transpose() * &fx).norm() < 1e-12);
        assert!((&grams.g_ba - fy.transpose() * &fx).norm() < 1e-12);
    }

    #[test]
    fn project_gram_z_full_rank_is_gbb() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_data(&mut rng, 4, 4); // square X, generically full rank
        let grams = build_grams(&data, &KernelSpec::linear()).unwrap();
        let eig_a = spectral::sym_eig(&grams.g_aa, 1e-10).unwrap();
        assert_eq!(eig_a.numerical_rank, 4);
        let zz = project_gram_z(&grams, &eig_a);
        assert!((&zz - &grams.g_bb).norm() < 1e-10 * grams.g_bb.norm());
    }

    #[test]
    fn project_gram_z_rank_zero_gives_zero() {
        let x = DMatrix::zeros(2, 3);
        let y = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let data = SnapshotPairs::from_matrices(x, y).unwrap();
        let grams = build_grams(&data, &KernelSpec::linear()).unwrap();
        let eig_a = spectral::sym_eig(&grams.g_aa, 1e-10).unwrap();
        assert_eq!(eig_a.numerical_rank, 0);
        let zz = project_gram_z(&grams, &eig_a);
        assert_eq!(zz.iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn project_gram_z_rank_deficient_matches_features() {
        // Repeat a column to force a rank-deficient predecessor Gram.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut x = DMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
        let dup: Vec<f64> = x.column(0).iter().cloned().collect();
        x.set_column(4, &DVector::from_column_slice(&dup).column(0));
        let y = DMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
        let data = SnapshotPairs::from_matrices(x, y).unwrap();

        let kernel = KernelSpec::polynomial(2, 1.0);
        let grams = build_grams(&data, &kernel).unwrap();
        let eig_a = spectral::sym_eig(&grams.g_aa, 1e-10).unwrap();
        let zz = project_gram_z(&grams, &eig_a);

        // Explicit feature route: Z = Φ(Y) P with P from the SVD of Φ(X).
        let fm = oracle::FeatureMap::matching(&kernel, 2).unwrap();
        let fx = oracle::feature_matrix(&fm, data.x()).unwrap();
        let fy = oracle::feature_matrix(&fm, data.y()).unwrap();
        let svd = fx.clone().svd(false, true);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-5 * smax)
            .count();
        assert_eq!(rank, eig_a.numerical_rank);
        let v_r = svd.v_t.as_ref().unwrap().rows(0, rank).transpose();
        let proj = &v_r * v_r.transpose();
        let z = &fy * proj;
        let expect = z.transpose() * &z;
        assert!((&zz - &expect).norm() < 1e-10 * expect.norm().max(1.0));
    }

    #[test]
    fn prop33_zero_successors_give_zero_matrices() {
        let x = DMatrix::from_fn(2, 4, |i, j| ((i * 4 + j) as f64 * 0.3).sin());
        let y = DMatrix::zeros(2, 4);
        let data = SnapshotPairs::from_matrices(x, y).unwrap();
        let grams = build_grams(&data, &KernelSpec::linear()).unwrap();
        let eig_a = spectral::sym_eig(&grams.g_aa, 1e-10).unwrap();
        let r = spectral::truncated_pinv_factor(&eig_a, 4);
        let zz = project_gram_z(&grams, &eig_a);
        let eig_z = spectral::sym_eig(&zz, 1e-10).unwrap();
        assert_eq!(eig_z.numerical_rank, 0);
        let s_k = DMatrix::zeros(4, 4);
        let (ml, mr) = prop33_matrices(&grams, &r, &s_k);
        assert_eq!(ml.iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        assert_eq!(mr.iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        // ...and fit degrades gracefully to an empty spectrum.
        let model = fit(&data, &KernelSpec::linear(), 2, 1e-10).unwrap();
        assert_eq!(model.k, 0);
        assert_eq!(model.rank_z, 0);
    }

    #[test]
    fn fit_biorthogonality_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for &(p, m, k) in &[(2usize, 8usize, 3usize), (3, 10, 5), (1, 5, 2)] {
            let data = random_data(&mut rng, p, m);
            let model = fit(&data, &KernelSpec::polynomial(2, 1.0), k, 1e-10).unwrap();
            let e_c = model.e.map(|v| Complex64::new(v, 0.0));
            for i in 0..model.k {
                let zi = model.eig.zeta.column(i);
                let xi = model.eig.xi.column(i);
                let val = (zi.adjoint() * &e_c * xi)[(0, 0)];
                assert!(
                    (val - Complex64::new(1.0, 0.0)).norm() < 1e-10,
                    "ζ*Eξ = {val} at triple {i} (p={p}, m={m}, k={k})"
                );
            }
        }
    }

    #[test]
    fn fit_eigenvalues_match_explicit_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let kernel = KernelSpec::polynomial(2, 1.0);
        for &(p, m) in &[(1usize, 5usize), (2, 8), (3, 10)] {
            let data = random_data(&mut rng, p, m);
            let fm = oracle::FeatureMap::matching(&kernel, p).unwrap();
            for k in 1..=m {
                let model = fit(&data, &kernel, k, 1e-10).unwrap();
                let exact = oracle::edmd_exact(&data, &fm, k).unwrap();
                let mut ours: Vec<Complex64> = model
                    .eig
                    .lambdas
                    .iter()
                    .cloned()
                    .filter(|l| l.norm() > 1e-8)
                    .collect();
                let mut reference: Vec<Complex64> = exact
                    .eigvals
                    .iter()
                    .cloned()
                    .filter(|l| l.norm() > 1e-8)
                    .collect();
                ours.sort_by(spectral::eig_order);
                reference.sort_by(spectral::eig_order);
                assert_eq!(
                    ours.len(),
                    reference.len(),
                    "nonzero eigenvalue counts differ at p={p}, m={m}, k={k}: \
                     {ours:?} vs {reference:?}"
                );
                for (a, b) in ours.iter().zip(&reference) {
                    assert!(
                        (a - b).norm() < 1e-8 * b.norm().max(1.0),
                        "eigenvalue mismatch at p={p}, m={m}, k={k}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn fit_rank_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let data = random_data(&mut rng, 2, 7);
        let kernel = KernelSpec::polynomial(2, 1.0);
        let probe = fit(&data, &kernel, 7, 1e-10).unwrap();
        let rank_z = probe.rank_z;
        assert!(rank_z < 7, "need a rank-deficient case, got rank_z = {rank_z}");
        let at_rank = fit(&data, &kernel, rank_z, 1e-10).unwrap();
        let beyond = fit(&data, &kernel, 7, 1e-10).unwrap();
        assert_eq!(at_rank.to_json_vec().unwrap(), beyond.to_json_vec().unwrap());
    }

    #[test]
    fn fit_deterministic_serialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let data = random_data(&mut rng, 2, 9);
        let kernel = KernelSpec::gaussian(1.5);
        let a = fit(&data, &kernel, 4, 1e-10).unwrap().to_json_vec().unwrap();
        let b = fit(&data, &kernel, 4, 1e-10).unwrap().to_json_vec().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let data = random_data(&mut rng, 2, 6);
        let model = fit(&data, &KernelSpec::polynomial(2, 1.0), 3, 1e-10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("model_a.json");
        let path_b = dir.path().join("model_b.json");
        model.save(&path_a).unwrap();
        let loaded = ReducedModel::load(&path_a).unwrap();
        assert_eq!(loaded, model);
        loaded.save(&path_b).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap()
        );
    }

    #[test]
    fn load_rejects_truncated_and_inconsistent_files() {
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let data = random_data(&mut rng, 2, 5);
        let model = fit(&data, &KernelSpec::linear(), 2, 1e-10).unwrap();
        let bytes = model.to_json_vec().unwrap();

        // Truncated file.
        let err = ReducedModel::from_json_slice(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));

        // Wrong version.
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        value["version"] = serde_json::json!(99);
        let err =
            ReducedModel::from_json_slice(&serde_json::to_vec(&value).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));

        // k > m.
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        value["k"] = serde_json::json!(17);
        let err =
            ReducedModel::from_json_slice(&serde_json::to_vec(&value).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn fit_rejects_bad_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let data = random_data(&mut rng, 2, 4);
        assert!(fit(&data, &KernelSpec::linear(), 0, 1e-10).is_err());
        assert!(fit(&data, &KernelSpec::linear(), 5, 1e-10).is_err());
    }
}
