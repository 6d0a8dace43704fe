//! Kernel evaluation, kernel gradients, and Gram-matrix assembly.
//!
//! Every inner product in the feature space goes through this module: for a
//! symmetric positive definite kernel `h`, the feature map `Ψ` satisfies
//! `⟨Ψ(z), Ψ(y)⟩ = h(y, z)`, so Gram matrices over snapshot columns stand in
//! for operator products that would otherwise live in a space of dimension
//! `dim(H)` (possibly infinite). `Ψ` is never materialized here.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Kernel family and parameters; the sole bridge to the implicit feature map.
///
/// Serializes to JSON as `{"family":"gaussian","sigma":10.0}`,
/// `{"family":"polynomial","degree":2,"offset":1.0}` or `{"family":"linear"}`.
///
/// The Gaussian kernel uses the normalized form `exp(-‖y-z‖²/(2σ²))` (σ is a
/// standard deviation). The polynomial kernel is `(offset + yᵀz)^degree`; an
/// offset of 1 puts constant and linear monomials in the implicit feature
/// space, which degree-2 lifts of quadratic dynamics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    Polynomial { degree: u32, offset: f64 },
    Linear,
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian { sigma }
    }

    pub fn polynomial(degree: u32, offset: f64) -> Self {
        KernelSpec::Polynomial { degree, offset }
    }

    pub fn linear() -> Self {
        KernelSpec::Linear
    }

    /// Checks the parameter invariants: `sigma > 0`, `degree >= 1`,
    /// `offset >= 0`, all finite.
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::Input(format!(
                        "gaussian kernel requires sigma > 0, got {sigma}"
                    )));
                }
            }
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 {
                    return Err(Error::Input("polynomial kernel requires degree >= 1".into()));
                }
                if !(offset.is_finite() && offset >= 0.0) {
                    return Err(Error::Input(format!(
                        "polynomial kernel requires offset >= 0, got {offset}"
                    )));
                }
            }
            KernelSpec::Linear => {}
        }
        Ok(())
    }
}

/// Compact textual form used by the CLI and in benchmark reports:
/// `gaussian:sigma=10`, `polynomial:degree=2,offset=1`, `linear`.
impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { sigma } => write!(f, "gaussian:sigma={sigma}"),
            KernelSpec::Polynomial { degree, offset } => {
                write!(f, "polynomial:degree={degree},offset={offset}")
            }
            KernelSpec::Linear => write!(f, "linear"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, args) = match s.split_once(':') {
            Some((f, a)) => (f.trim(), a.trim()),
            None => (s.trim(), ""),
        };
        let mut params = std::collections::BTreeMap::new();
        if !args.is_empty() {
            for piece in args.split(',') {
                let (key, value) = piece.split_once('=').ok_or_else(|| {
                    Error::Input(format!("kernel parameter `{piece}` is not of the form key=value"))
                })?;
                let value: f64 = value.trim().parse().map_err(|_| {
                    Error::Input(format!("kernel parameter `{key}` has non-numeric value `{value}`"))
                })?;
                params.insert(key.trim().to_string(), value);
            }
        }
        let take = |params: &mut std::collections::BTreeMap<String, f64>, key: &str| {
            params.remove(key).ok_or_else(|| {
                Error::Input(format!("kernel `{family}` is missing parameter `{key}`"))
            })
        };
        let spec = match family {
            "gaussian" => KernelSpec::Gaussian {
                sigma: take(&mut params, "sigma")?,
            },
            "polynomial" => {
                let degree = take(&mut params, "degree")?;
                let offset = params.remove("offset").unwrap_or(1.0);
                if degree.fract() != 0.0 || degree < 1.0 {
                    return Err(Error::Input(format!(
                        "polynomial degree must be a positive integer, got {degree}"
                    )));
                }
                KernelSpec::Polynomial {
                    degree: degree as u32,
                    offset,
                }
            }
            "linear" => KernelSpec::Linear,
            other => {
                return Err(Error::Input(format!(
                    "unknown kernel family `{other}` (expected gaussian, polynomial or linear)"
                )))
            }
        };
        if let Some(key) = params.keys().next() {
            return Err(Error::Input(format!(
                "kernel `{family}` does not take parameter `{key}`"
            )));
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn check_dims(y: &[f64], z: &[f64]) -> Result<()> {
    if y.len() != z.len() {
        return Err(Error::Input(format!(
            "kernel arguments have mismatched dimensions {} and {}",
            y.len(),
            z.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Input("kernel arguments must have dimension >= 1".into()));
    }
    Ok(())
}

fn dot(y: &[f64], z: &[f64]) -> f64 {
    y.iter().zip(z).map(|(a, b)| a * b).sum()
}

fn sq_dist(y: &[f64], z: &[f64]) -> f64 {
    y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Evaluates `h(y, z)`.
///
/// Gaussian: `exp(-‖y-z‖²/(2σ²))`; polynomial: `(offset + yᵀz)^degree`;
/// linear: `yᵀz`.
pub fn eval(kernel: &KernelSpec, y: &[f64], z: &[f64]) -> Result<f64> {
    check_dims(y, z)?;
    Ok(eval_unchecked(kernel, y, z))
}

#[inline]
fn eval_unchecked(kernel: &KernelSpec, y: &[f64], z: &[f64]) -> f64 {
    match *kernel {
        KernelSpec::Gaussian { sigma } => (-sq_dist(y, z) / (2.0 * sigma * sigma)).exp(),
        KernelSpec::Polynomial { degree, offset } => (offset + dot(y, z)).powi(degree as i32),
        KernelSpec::Linear => dot(y, z),
    }
}

/// Gradient of `h(y, z)` with respect to the second argument `z`.
///
/// Gaussian: `h(y,z)·(y-z)/σ²`; polynomial:
/// `degree·(offset + yᵀz)^(degree-1)·y`; linear: `y`.
pub fn grad_z(kernel: &KernelSpec, y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    check_dims(y, z)?;
    let mut out = vec![0.0; z.len()];
    grad_z_into(kernel, y, z, &mut out);
    Ok(out)
}

/// In-place variant of [`grad_z`] used by the preimage inner loop;
/// accumulates `scale * ∂h(y,z)/∂z` into `acc`.
pub(crate) fn grad_z_axpy(kernel: &KernelSpec, y: &[f64], z: &[f64], scale: f64, acc: &mut [f64]) {
    match *kernel {
        KernelSpec::Gaussian { sigma } => {
            let h = (-sq_dist(y, z) / (2.0 * sigma * sigma)).exp();
            let c = scale * h / (sigma * sigma);
            for ((a, &yi), &zi) in acc.iter_mut().zip(y).zip(z) {
                *a += c * (yi - zi);
            }
        }
        KernelSpec::Polynomial { degree, offset } => {
            let c = scale * degree as f64 * (offset + dot(y, z)).powi(degree as i32 - 1);
            for (a, &yi) in acc.iter_mut().zip(y) {
                *a += c * yi;
            }
        }
        KernelSpec::Linear => {
            for (a, &yi) in acc.iter_mut().zip(y) {
                *a += scale * yi;
            }
        }
    }
}

fn grad_z_into(kernel: &KernelSpec, y: &[f64], z: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    grad_z_axpy(kernel, y, z, 1.0, out);
}

/// Gram matrix `G[i,j] = h(u_i, v_j)` over the columns of `U` and `V`.
///
/// This is how the operator products over snapshot matrices are obtained:
/// `A*A = gram(κ, X, X)`, `B*B = gram(κ, Y, Y)`, `B*A = gram(κ, Y, X)`, and
/// the online vector `A*Ψ(θ) = gram(κ, X, θ)`.
///
/// When `U` and `V` are the same matrix only the upper triangle is computed
/// and mirrored, which halves the work and makes the result bit-exactly
/// symmetric.
pub fn gram(kernel: &KernelSpec, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.nrows() != v.nrows() {
        return Err(Error::Input(format!(
            "gram operands have mismatched row dimensions {} and {}",
            u.nrows(),
            v.nrows()
        )));
    }
    if u.nrows() == 0 {
        return Err(Error::Input("gram operands must have row dimension >= 1".into()));
    }
    let p = u.nrows();
    let (a, b) = (u.ncols(), v.ncols());
    let ud = u.as_slice();
    let vd = v.as_slice();
    fn col(data: &[f64], p: usize, j: usize) -> &[f64] {
        &data[j * p..(j + 1) * p]
    }

    let mut g = DMatrix::zeros(a, b);
    if std::ptr::eq(u, v) || u == v {
        for i in 0..a {
            for j in i..b {
                let value = eval_unchecked(kernel, col(ud, p, i), col(ud, p, j));
                g[(i, j)] = value;
                g[(j, i)] = value;
            }
        }
    } else {
        for j in 0..b {
            let vj = col(vd, p, j);
            for i in 0..a {
                g[(i, j)] = eval_unchecked(kernel, col(ud, p, i), vj);
            }
        }
    }
    Ok(g)
}

/// Kernel products of one state against every column of `U`:
/// `out[i] = h(u_i, theta)`.
pub fn gram_vec(kernel: &KernelSpec, u: &DMatrix<f64>, theta: &[f64]) -> Result<Vec<f64>> {
    if u.nrows() != theta.len() {
        return Err(Error::Input(format!(
            "state has dimension {}, expected {}",
            theta.len(),
            u.nrows()
        )));
    }
    let p = u.nrows();
    let ud = u.as_slice();
    Ok((0..u.ncols())
        .map(|i| eval_unchecked(kernel, &ud[i * p..(i + 1) * p], theta))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_kernels() -> Vec<KernelSpec> {
        vec![
            KernelSpec::gaussian(10.0),
            KernelSpec::gaussian(0.7),
            KernelSpec::polynomial(2, 1.0),
            KernelSpec::polynomial(3, 0.5),
            KernelSpec::linear(),
        ]
    }

    #[test]
    fn eval_gaussian_coincident_points() {
        let y = [1.0, -2.0, 3.5];
        let k = eval(&KernelSpec::gaussian(10.0), &y, &y).unwrap();
        assert_eq!(k, 1.0);
    }

    #[test]
    fn eval_linear_orthogonal() {
        let k = eval(&KernelSpec::linear(), &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn eval_polynomial_example() {
        let k = eval(&KernelSpec::polynomial(2, 1.0), &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(k, 4.0);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let err = eval(&KernelSpec::linear(), &[1.0], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn symmetry_exact_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for kernel in all_kernels() {
            for _ in 0..200 {
                let p = rng.random_range(1..6);
                let y: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
                let z: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
                let a = eval(&kernel, &y, &z).unwrap();
                let b = eval(&kernel, &z, &y).unwrap();
                assert_eq!(a, b, "kernel {kernel} not symmetric at {y:?}, {z:?}");
            }
        }
    }

    #[test]
    fn grad_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kernels = all_kernels();
        for trial in 0..100 {
            let kernel = &kernels[trial % kernels.len()];
            let p = rng.random_range(1..5);
            let y: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let z: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = grad_z(kernel, &y, &z).unwrap();
            let mut fd = vec![0.0; p];
            let h = 1e-5;
            for i in 0..p {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                fd[i] = (eval(kernel, &y, &zp).unwrap() - eval(kernel, &y, &zm).unwrap())
                    / (2.0 * h);
            }
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
            assert!(
                diff / scale < 1e-5,
                "gradient mismatch for {kernel}: analytic {g:?}, fd {fd:?}"
            );
        }
    }

    #[test]
    fn grad_gaussian_stationary_at_coincidence() {
        let y = [0.3, -0.4];
        let g = grad_z(&KernelSpec::gaussian(2.0), &y, &y).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn grad_linear_is_first_argument() {
        let g = grad_z(&KernelSpec::linear(), &[3.0, -1.0], &[7.0, 9.0]).unwrap();
        assert_eq!(g, vec![3.0, -1.0]);
    }

    #[test]
    fn gram_self_is_bit_exact_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = DMatrix::from_fn(4, 9, |_, _| rng.random_range(-1.0..1.0));
        for kernel in all_kernels() {
            let g = gram(&kernel, &u, &u).unwrap();
            for i in 0..9 {
                for j in 0..9 {
                    assert_eq!(g[(i, j)], g[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn gram_linear_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let v = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let g = gram(&KernelSpec::linear(), &u, &v).unwrap();
        let exact = u.transpose() * &v;
        assert!((g - exact).norm() < 1e-14);
    }

    #[test]
    fn gram_psd_over_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for kernel in all_kernels() {
            let a = rng.random_range(2..50);
            let u = DMatrix::from_fn(3, a, |_, _| rng.random_range(-2.0..2.0));
            let g = gram(&kernel, &u, &u).unwrap();
            let eigs = g.symmetric_eigen().eigenvalues;
            let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
            let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
            assert!(
                min >= -1e-10 * max.max(1.0),
                "kernel {kernel} gram has eigenvalue {min} (max {max})"
            );
        }
    }

    #[test]
    fn gram_vec_matches_gram_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = DMatrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
        let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = DMatrix::from_column_slice(4, 1, &theta);
        for kernel in all_kernels() {
            let kv = gram_vec(&kernel, &u, &theta).unwrap();
            let gm = gram(&kernel, &u, &v).unwrap();
            for i in 0..6 {
                assert_eq!(kv[i], gm[(i, 0)]);
            }
        }
    }

    #[test]
    fn gram_row_dimension_mismatch() {
        let u = DMatrix::zeros(3, 2);
        let v = DMatrix::zeros(4, 2);
        assert!(matches!(
            gram(&KernelSpec::linear(), &u, &v),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn kernel_spec_json_round_trip() {
        let cases = vec![
            (KernelSpec::gaussian(10.0), r#"{"family":"gaussian","sigma":10.0}"#),
            (
                KernelSpec::polynomial(2, 1.0),
                r#"{"family":"polynomial","degree":2,"offset":1.0}"#,
            ),
            (KernelSpec::linear(), r#"{"family":"linear"}"#),
        ];
        for (spec, json) in cases {
            assert_eq!(serde_json::to_string(&spec).unwrap(), json);
            let back: KernelSpec = serde_json::from_str(json).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn kernel_spec_flag_round_trip() {
        for kernel in all_kernels() {
            let s = kernel.to_string();
            let back: KernelSpec = s.parse().unwrap();
            assert_eq!(back, kernel);
        }
        assert!("gaussian:sigma=0".parse::<KernelSpec>().is_err());
        assert!("polynomial:degree=0".parse::<KernelSpec>().is_err());
        assert!("cubic".parse::<KernelSpec>().is_err());
        assert!("gaussian:sigma=1,extra=2".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn validate_rejects_bad_parameters() {
        assert!(KernelSpec::gaussian(-1.0).validate().is_err());
        assert!(KernelSpec::gaussian(f64::NAN).validate().is_err());
        assert!(KernelSpec::polynomial(0, 1.0).validate().is_err());
        assert!(KernelSpec::polynomial(2, -0.5).validate().is_err());
        assert!(KernelSpec::linear().validate().is_ok());
    }
}
