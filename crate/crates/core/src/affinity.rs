//! Affinity constructions.
//!
//! * dense pairwise affinities `A_sim = X Xᵀ` and `A_lap = D⁻¹ X Xᵀ`,
//! * the visible-to-latent map `Ψ(X) = act(X Θ)`,
//! * the latent-to-latent matrix `F`,
//! * the low-rank expansion `Ψ F Ψᵀ`.
//!
//! No softmax appears anywhere: affinities are raw inner products with an
//! optional explicit row normalization.

use crate::error::{Error, Result};
use crate::scalar::{sum, Scalar};
use crate::tensor::{Activation, Matrix};

/// Degree floor for `A_lap`. A row whose degree is at or below this value is
/// divided by it instead, so a zero-degree row stays a zero row.
pub const DEGREE_EPS: f64 = 1e-12;

/// Parameters of the visible-to-latent affinity `ψ(x, θ_k) = act(θ_kᵀ x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiParams<T> {
    /// `c x d`; column `k` is `θ_k`.
    pub theta: Matrix<T>,
    pub activation: Activation,
}

impl<T: Scalar> PsiParams<T> {
    pub fn new(theta: Matrix<T>, activation: Activation) -> Self {
        PsiParams { theta, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.theta.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.theta.cols()
    }

    pub fn cast<U: Scalar>(&self) -> PsiParams<U> {
        PsiParams::new(self.theta.cast(), self.activation)
    }
}

/// Pre-activation `X Θ`.
pub fn psi_preactivation<T: Scalar>(x: &Matrix<T>, p: &PsiParams<T>) -> Result<Matrix<T>> {
    if x.cols() != p.theta.rows() {
        return Err(Error::Shape {
            op: "psi",
            lhs: x.shape(),
            rhs: p.theta.shape(),
        });
    }
    x.matmul(&p.theta)
}

/// `Ψ(X)`, an `N x d` matrix with `Ψ[i][k] = act(x_iᵀ θ_k)`.
pub fn psi<T: Scalar>(x: &Matrix<T>, p: &PsiParams<T>) -> Result<Matrix<T>> {
    Ok(psi_preactivation(x, p)?.activate(p.activation))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LatentKind {
    Identity,
    Free,
    SymmetricFactor,
}

impl LatentKind {
    pub fn name(self) -> &'static str {
        match self {
            LatentKind::Identity => "identity",
            LatentKind::Free => "free",
            LatentKind::SymmetricFactor => "symmetric-factor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(LatentKind::Identity),
            "free" => Some(LatentKind::Free),
            "symmetric-factor" | "symfac" => Some(LatentKind::SymmetricFactor),
            _ => None,
        }
    }

    pub const ALL: [LatentKind; 3] = [
        LatentKind::Identity,
        LatentKind::Free,
        LatentKind::SymmetricFactor,
    ];
}

/// Latent-to-latent affinity `F`, a `d x d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentAffinity<T> {
    /// `F = I_d`, no parameters.
    Identity { dim: usize },
    /// `F` stored directly.
    Free(Matrix<T>),
    /// `F = Φ Φᵀ` with `Φ` of shape `d x r`; positive semidefinite by construction.
    SymmetricFactor(Matrix<T>),
}

impl<T: Scalar> LatentAffinity<T> {
    pub fn cast<U: Scalar>(&self) -> LatentAffinity<U> {
        match self {
            LatentAffinity::Identity { dim } => LatentAffinity::Identity { dim: *dim },
            LatentAffinity::Free(f) => LatentAffinity::Free(f.cast()),
            LatentAffinity::SymmetricFactor(phi) => LatentAffinity::SymmetricFactor(phi.cast()),
        }
    }

    pub fn kind(&self) -> LatentKind {
        match self {
            LatentAffinity::Identity { .. } => LatentKind::Identity,
            LatentAffinity::Free(_) => LatentKind::Free,
            LatentAffinity::SymmetricFactor(_) => LatentKind::SymmetricFactor,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LatentAffinity::Identity { dim } => *dim,
            LatentAffinity::Free(f) => f.rows(),
            LatentAffinity::SymmetricFactor(phi) => phi.rows(),
        }
    }

    /// The learnable matrix behind this affinity, if any.
    pub fn parameter(&self) -> Option<&Matrix<T>> {
        match self {
            LatentAffinity::Identity { .. } => None,
            LatentAffinity::Free(m) | LatentAffinity::SymmetricFactor(m) => Some(m),
        }
    }

    pub fn parameter_mut(&mut self) -> Option<&mut Matrix<T>> {
        match self {
            LatentAffinity::Identity { .. } => None,
            LatentAffinity::Free(m) | LatentAffinity::SymmetricFactor(m) => Some(m),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter().map_or(0, Matrix::len)
    }
}

/// Materializes `F`.
pub fn latent_matrix<T: Scalar>(a: &LatentAffinity<T>) -> Result<Matrix<T>> {
    match a {
        LatentAffinity::Identity { dim } => Ok(Matrix::identity(*dim)),
        LatentAffinity::Free(f) => {
            if f.rows() != f.cols() {
                return Err(Error::Shape {
                    op: "latent_matrix",
                    lhs: f.shape(),
                    rhs: (f.rows(), f.rows()),
                });
            }
            Ok(f.clone())
        }
        LatentAffinity::SymmetricFactor(phi) => {
            let mut f = phi.matmul_nt(phi)?;
            // Mirror the upper triangle so F == Fᵀ holds bit-exactly.
            let d = f.rows();
            for i in 0..d {
                for j in (i + 1)..d {
                    f[(j, i)] = f[(i, j)];
                }
            }
            Ok(f)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DenseVariant {
    Sim,
    Lap,
}

impl DenseVariant {
    pub fn name(self) -> &'static str {
        match self {
            DenseVariant::Sim => "sim",
            DenseVariant::Lap => "lap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sim" => Some(DenseVariant::Sim),
            "lap" => Some(DenseVariant::Lap),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseAffinity<T> {
    pub variant: DenseVariant,
    pub matrix: Matrix<T>,
}

/// Guarded degree used for row normalization.
pub fn guarded_degree<T: Scalar>(row_sum: T) -> T {
    row_sum.max(T::lit(DEGREE_EPS))
}

/// Dense `N x N` affinity of the rows of `x`.
pub fn dense_affinity<T: Scalar>(x: &Matrix<T>, variant: DenseVariant) -> Result<DenseAffinity<T>> {
    let mut m = gram(x)?;
    if variant == DenseVariant::Lap {
        normalize_rows(&mut m);
    }
    Ok(DenseAffinity { variant, matrix: m })
}

/// `X Xᵀ`, symmetrized so that the result is exactly symmetric.
fn gram<T: Scalar>(x: &Matrix<T>) -> Result<Matrix<T>> {
    let mut m = x.matmul_nt(x)?;
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            m[(j, i)] = m[(i, j)];
        }
    }
    Ok(m)
}

/// Divides each row by its guarded degree in place.
pub fn normalize_rows<T: Scalar>(m: &mut Matrix<T>) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let deg = guarded_degree(sum(row.iter().copied()));
        for v in row.iter_mut() {
            *v /= deg;
        }
    }
}

/// `left · F · rightᵀ`, the dense expansion of a low-rank affinity.
pub fn expand_low_rank_pair<T: Scalar>(
    left: &Matrix<T>,
    f: &Matrix<T>,
    right: &Matrix<T>,
) -> Result<Matrix<T>> {
    left.matmul(f)?.matmul_nt(right)
}

/// `Ψ F Ψᵀ`, rank at most `d`.
pub fn expand_low_rank<T: Scalar>(psi: &Matrix<T>, f: &Matrix<T>) -> Result<Matrix<T>> {
    expand_low_rank_pair(psi, f, psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    /// Singular values by one-sided Jacobi rotations, descending.
    fn singular_values(a: &Matrix<f64>) -> Vec<f64> {
        let (m, n) = a.shape();
        let mut u = a.clone();
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                    for i in 0..m {
                        alpha += u[(i, p)] * u[(i, p)];
                        beta += u[(i, q)] * u[(i, q)];
                        gamma += u[(i, p)] * u[(i, q)];
                    }
                    if gamma == 0.0 {
                        continue;
                    }
                    off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let up = u[(i, p)];
                        let uq = u[(i, q)];
                        u[(i, p)] = c * up - s * uq;
                        u[(i, q)] = s * up + c * uq;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut sv: Vec<f64> = (0..n)
            .map(|j| (0..m).map(|i| u[(i, j)] * u[(i, j)]).sum::<f64>().sqrt())
            .collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv
    }

    /// Smallest eigenvalue of a symmetric matrix via shifted power iteration.
    fn min_eigenvalue(f: &Matrix<f64>) -> f64 {
        let n = f.rows();
        let dominant = |m: &Matrix<f64>| {
            let mut v = Matrix::from_fn(n, 1, |i, _| 1.0 + i as f64 * 0.37);
            let mut lambda = 0.0;
            for _ in 0..2000 {
                let w = m.matmul(&v).unwrap();
                let norm = w.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return 0.0;
                }
                lambda = v.dot(&w).unwrap() / v.dot(&v).unwrap();
                v = w.scale(1.0 / norm);
            }
            lambda
        };
        let shift = f.as_slice().iter().map(|x| x.abs()).sum::<f64>();
        let shifted = Matrix::identity(n).scale(shift).sub(f).unwrap();
        shift - dominant(&shifted)
    }

    #[test]
    fn sim_affinity_examples() {
        let a = dense_affinity(&Matrix::<f64>::identity(2), DenseVariant::Sim).unwrap();
        assert_eq!(a.matrix, Matrix::identity(2));

        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let a = dense_affinity(&x, DenseVariant::Sim).unwrap();
        assert_eq!(
            a.matrix,
            Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.0]])
        );
    }

    #[test]
    fn lap_rows_sum_to_one() {
        let mut rng = SeededRng::new(11);
        let x = rng.uniform_matrix::<f64>(20, 5, 0.1, 1.0);
        let a = dense_affinity(&x, DenseVariant::Lap).unwrap();
        for s in a.matrix.row_sums() {
            assert!((s - 1.0).abs() <= 1e-12, "{s}");
        }
    }

    #[test]
    fn lap_zero_degree_row_is_zero() {
        let x = Matrix::<f64>::from_rows(&[[0.0, 0.0], [1.0, 2.0]]);
        let a = dense_affinity(&x, DenseVariant::Lap).unwrap();
        assert_eq!(a.matrix.row(0), &[0.0, 0.0]);
        assert!((a.matrix.row_sums()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sim_is_exactly_symmetric() {
        let mut rng = SeededRng::new(12);
        let x = rng.normal_matrix::<f64>(37, 6, 1.0);
        let a = dense_affinity(&x, DenseVariant::Sim).unwrap().matrix;
        assert_eq!(a.max_abs_diff(&a.transpose()).unwrap(), 0.0);
    }

    #[test]
    fn psi_examples() {
        let mut rng = SeededRng::new(13);
        let x = rng.normal_matrix::<f64>(6, 4, 1.0);
        let id = PsiParams::new(Matrix::identity(4), Activation::Identity);
        assert_eq!(psi(&x, &id).unwrap(), x);

        let xn = x.map(f64::abs);
        let relu = PsiParams::new(Matrix::identity(4), Activation::Relu);
        assert_eq!(psi(&xn, &relu).unwrap(), xn);

        let theta = rng.normal_matrix::<f64>(4, 3, 1.0);
        let p = PsiParams::new(theta.clone(), Activation::Relu);
        let got = psi(&x, &p).unwrap();
        for i in 0..6 {
            for k in 0..3 {
                let dot: f64 = (0..4).map(|c| x[(i, c)] * theta[(c, k)]).sum();
                assert!((got[(i, k)] - dot.max(0.0)).abs() < 1e-14);
            }
        }
        assert!(psi(&x, &PsiParams::new(Matrix::identity(3), Activation::Relu)).is_err());
    }

    #[test]
    fn latent_matrix_kinds() {
        let id = LatentAffinity::<f64>::Identity { dim: 4 };
        assert_eq!(latent_matrix(&id).unwrap(), Matrix::identity(4));

        let mut rng = SeededRng::new(14);
        let phi = rng.normal_matrix::<f64>(5, 3, 1.0);
        let f = latent_matrix(&LatentAffinity::SymmetricFactor(phi)).unwrap();
        assert_eq!(f, f.transpose());
        // rank-deficient (r = 3 < d = 5), so two eigenvalues are ~0
        let scale = f.max_abs();
        assert!(min_eigenvalue(&f) >= -1e-12 * scale.max(1.0));

        assert!(latent_matrix(&LatentAffinity::Free(Matrix::<f64>::zeros(2, 3))).is_err());
    }

    #[test]
    fn low_rank_examples() {
        let ones = Matrix::<f64>::filled(5, 1, 1.0);
        let a = expand_low_rank(&ones, &Matrix::identity(1)).unwrap();
        assert_eq!(a, Matrix::filled(5, 5, 1.0));

        let mut rng = SeededRng::new(15);
        let f = rng.normal_matrix::<f64>(4, 4, 1.0);
        let a = expand_low_rank(&Matrix::identity(4), &f).unwrap();
        assert_eq!(a, f);
    }

    #[test]
    fn low_rank_expansion_has_rank_at_most_d() {
        let mut rng = SeededRng::new(16);
        for &(n, d) in &[(12usize, 3usize), (20, 5), (9, 1)] {
            let p = rng.normal_matrix::<f64>(n, d, 1.0);
            let f = rng.normal_matrix::<f64>(d, d, 1.0);
            let a = expand_low_rank(&p, &f).unwrap();
            let sv = singular_values(&a);
            assert!(sv[d - 1] > 1e-6 * sv[0]);
            for s in &sv[d..] {
                assert!(*s <= 1e-9 * sv[0], "n={n} d={d} tail={s} top={}", sv[0]);
            }
        }
    }

    #[test]
    fn jacobi_oracle_sanity() {
        let a = Matrix::from_rows(&[[3.0, 0.0], [0.0, -2.0], [0.0, 0.0]]);
        let sv = singular_values(&a);
        assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn psi_is_positively_homogeneous(seed in any::<u64>(), alpha in 0.01f64..100.0) {
            let mut rng = SeededRng::new(seed);
            let x = rng.normal_matrix::<f64>(8, 4, 1.0);
            let p = PsiParams::new(rng.normal_matrix::<f64>(4, 3, 1.0), Activation::Relu);
            let lhs = psi(&x.scale(alpha), &p).unwrap();
            let rhs = psi(&x, &p).unwrap().scale(alpha);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * alpha * rhs.max_abs().max(1.0));
        }

        #[test]
        fn lap_is_stochastic_on_positive_features(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = SeededRng::new(seed);
            let x = rng.uniform_matrix::<f64>(n, 3, 0.01, 2.0);
            let a = dense_affinity(&x, DenseVariant::Lap).unwrap();
            for s in a.matrix.row_sums() {
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }
}
