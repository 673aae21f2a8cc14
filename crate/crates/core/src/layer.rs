//! The LatentGNN layer.
//!
//! For reduced features `X_r = X W_in` and messages `M = X_r W`, each kernel
//! `m` runs the three-step schedule
//!
//! ```text
//! Z_m  = Ψ_mᵀ M          visible -> latent   (d_m x c_r)
//! Z̃_m  = F_m Z_m         latent  -> latent
//! S_m  = Ψ'_m Z̃_m        latent  -> visible  (N x c_r)
//! ```
//!
//! where `Ψ'_m = Ψ_m` unless the kernel carries untied scatter weights. The
//! kernels are mixed as `C = Σ w_m S_m`, then `X̃ = h(C) W_out` and
//! `X_aug = λ X̃ + X`.
//!
//! [`forward_stepwise`] never forms an `N x N` matrix. [`forward_matrix_form`]
//! builds `A = Σ w_m Ψ'_m F_m Ψ_mᵀ` explicitly and serves as its reference.

use crate::affinity::{
    expand_low_rank_pair, latent_matrix, psi_preactivation, LatentAffinity, LatentKind, PsiParams,
};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Matrix};

/// Largest `N` accepted by [`forward_matrix_form`].
pub const MATRIX_FORM_CAP: usize = 4096;

/// One low-rank term `w_m Ψ'_m F_m Ψ_mᵀ` of the mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams<T> {
    /// Visible-to-latent affinity, `c_r x d`.
    pub psi: PsiParams<T>,
    /// Separate latent-to-visible affinity. `None` shares `psi`.
    pub psi_back: Option<PsiParams<T>>,
    pub latent: LatentAffinity<T>,
}

impl<T: Scalar> KernelParams<T> {
    pub fn dim(&self) -> usize {
        self.psi.latent_dim()
    }

    pub fn scatter_psi(&self) -> &PsiParams<T> {
        self.psi_back.as_ref().unwrap_or(&self.psi)
    }

    pub fn is_untied(&self) -> bool {
        self.psi_back.is_some()
    }

    pub fn cast<U: Scalar>(&self) -> KernelParams<U> {
        KernelParams {
            psi: self.psi.cast(),
            psi_back: self.psi_back.as_ref().map(PsiParams::cast),
            latent: self.latent.cast(),
        }
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec {
            dim: self.dim(),
            latent: self.latent.kind(),
            rank: match &self.latent {
                LatentAffinity::SymmetricFactor(phi) => phi.cols(),
                _ => self.dim(),
            },
            psi_activation: self.psi.activation,
            untied: self.is_untied(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentGnnParams<T> {
    /// Bottleneck reduction, `c x c_r`.
    pub w_in: Matrix<T>,
    pub kernels: Vec<KernelParams<T>>,
    /// Shared message map `W`, `c_r x c_r`.
    pub w_msg: Matrix<T>,
    /// Mixture weights, one per kernel.
    pub mixture: Vec<T>,
    /// Bottleneck expansion, `c_r x c`.
    pub w_out: Matrix<T>,
    /// Residual scale.
    pub lambda: T,
    /// Activation applied to the mixed context before `w_out`.
    pub activation: Activation,
}

impl<T: Scalar> LatentGnnParams<T> {
    /// The same layer in another scalar type, converting through `f64`.
    pub fn cast<U: Scalar>(&self) -> LatentGnnParams<U> {
        LatentGnnParams {
            w_in: self.w_in.cast(),
            kernels: self.kernels.iter().map(KernelParams::cast).collect(),
            w_msg: self.w_msg.cast(),
            mixture: self.mixture.iter().map(|w| U::lit(w.to_f64().expect("finite scalar"))).collect(),
            w_out: self.w_out.cast(),
            lambda: U::lit(self.lambda.to_f64().expect("finite scalar")),
            activation: self.activation,
        }
    }

    pub fn channels(&self) -> usize {
        self.w_in.rows()
    }

    pub fn reduced_channels(&self) -> usize {
        self.w_in.cols()
    }

    pub fn dims(&self) -> LayerDims {
        LayerDims {
            channels: self.channels(),
            reduced: self.reduced_channels(),
            kernels: self.kernels.iter().map(KernelParams::spec).collect(),
            activation: self.activation,
        }
    }

    /// Checks every shape relation and that all entries are finite.
    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let cr = self.reduced_channels();
        let shape_err = |op, lhs, rhs| Err(Error::Shape { op, lhs, rhs });
        if cr == 0 || c == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.w_msg.shape() != (cr, cr) {
            return shape_err("w_msg", self.w_msg.shape(), (cr, cr));
        }
        if self.w_out.shape() != (cr, c) {
            return shape_err("w_out", self.w_out.shape(), (cr, c));
        }
        if self.mixture.len() != self.kernels.len() {
            return shape_err("mixture", (self.mixture.len(), 1), (self.kernels.len(), 1));
        }
        if self.kernels.is_empty() {
            return Err(Error::Config("at least one kernel is required".into()));
        }
        for (m, k) in self.kernels.iter().enumerate() {
            let d = k.dim();
            if d == 0 {
                return Err(Error::Config(format!("kernel {m} has zero latent nodes")));
            }
            if k.psi.theta.rows() != cr {
                return shape_err("kernel theta", k.psi.theta.shape(), (cr, d));
            }
            if let Some(back) = &k.psi_back {
                if back.theta.shape() != k.psi.theta.shape() {
                    return shape_err("kernel theta_back", back.theta.shape(), (cr, d));
                }
            }
            if k.latent.dim() != d {
                return shape_err("kernel latent", (k.latent.dim(), k.latent.dim()), (d, d));
            }
            if let LatentAffinity::Free(f) = &k.latent {
                if f.shape() != (d, d) {
                    return shape_err("kernel latent", f.shape(), (d, d));
                }
            }
        }
        let mut finite = self.w_in.is_finite()
            && self.w_msg.is_finite()
            && self.w_out.is_finite()
            && self.lambda.is_finite()
            && self.mixture.iter().all(|v| v.is_finite());
        for k in &self.kernels {
            finite &= k.psi.theta.is_finite();
            finite &= k.psi_back.as_ref().is_none_or(|b| b.theta.is_finite());
            finite &= k.latent.parameter().is_none_or(Matrix::is_finite);
        }
        if !finite {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<ForwardTrace<T>> {
        forward_stepwise(x, self)
    }

    pub fn parameter_count(&self) -> ParamCount {
        self.dims().parameter_count()
    }
}

/// Named parameter blocks in canonical order: `w_in`, then per kernel `theta`,
/// `theta_back` (untied only) and the latent factor (non-identity only), then
/// `w_msg`, `mixture`, `w_out`, `lambda`. Serialization and flat views share it.
impl<T: Scalar> LatentGnnParams<T> {
    pub fn segments(&self) -> Vec<(String, usize)> {
        let mut seg = vec![("w_in".to_string(), self.w_in.len())];
        for (m, k) in self.kernels.iter().enumerate() {
            seg.push((format!("kernel{m}.theta"), k.psi.theta.len()));
            if let Some(b) = &k.psi_back {
                seg.push((format!("kernel{m}.theta_back"), b.theta.len()));
            }
            if let Some(f) = k.latent.parameter() {
                seg.push((format!("kernel{m}.latent"), f.len()));
            }
        }
        seg.push(("w_msg".into(), self.w_msg.len()));
        seg.push(("mixture".into(), self.mixture.len()));
        seg.push(("w_out".into(), self.w_out.len()));
        seg.push(("lambda".into(), 1));
        seg
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit(|s| out.extend_from_slice(s));
        out
    }

    /// Overwrites every parameter from `flat`, which must follow [`Self::segments`].
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        let total: usize = self.segments().iter().map(|s| s.1).sum();
        if flat.len() != total {
            return Err(Error::BufferLength {
                rows: total,
                cols: 1,
                len: flat.len(),
            });
        }
        let mut offset = 0;
        self.visit_mut(|s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    fn visit(&self, mut f: impl FnMut(&[T])) {
        f(self.w_in.as_slice());
        for k in &self.kernels {
            f(k.psi.theta.as_slice());
            if let Some(b) = &k.psi_back {
                f(b.theta.as_slice());
            }
            if let Some(m) = k.latent.parameter() {
                f(m.as_slice());
            }
        }
        f(self.w_msg.as_slice());
        f(&self.mixture);
        f(self.w_out.as_slice());
        f(std::slice::from_ref(&self.lambda));
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut [T])) {
        f(self.w_in.as_mut_slice());
        for k in &mut self.kernels {
            f(k.psi.theta.as_mut_slice());
            if let Some(b) = &mut k.psi_back {
                f(b.theta.as_mut_slice());
            }
            if let Some(m) = k.latent.parameter_mut() {
                f(m.as_mut_slice());
            }
        }
        f(self.w_msg.as_mut_slice());
        f(&mut self.mixture);
        f(self.w_out.as_mut_slice());
        f(std::slice::from_mut(&mut self.lambda));
    }
}

/// Intermediates of one kernel, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct KernelTrace<T> {
    /// `X_r Θ`, `N x d`.
    pub pre: Matrix<T>,
    /// `Ψ`, `N x d`.
    pub psi: Matrix<T>,
    /// Untied scatter pre-activation and affinity, when present.
    pub back: Option<(Matrix<T>, Matrix<T>)>,
    /// Materialized `F`, `d x d`.
    pub f: Matrix<T>,
    /// `Z = Ψᵀ M`, `d x c_r`.
    pub z: Matrix<T>,
    /// `Z̃ = F Z`, `d x c_r`.
    pub z_tilde: Matrix<T>,
    /// `Ψ' Z̃`, `N x c_r`, before the mixture weight.
    pub scattered: Matrix<T>,
}

impl<T: Scalar> KernelTrace<T> {
    pub fn scatter_psi(&self) -> &Matrix<T> {
        self.back.as_ref().map_or(&self.psi, |(_, p)| p)
    }
}

/// Every intermediate of [`forward_stepwise`]. No field has two dimensions
/// equal to `N`.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `X_r = X W_in`.
    pub reduced: Matrix<T>,
    /// `M = X_r W`.
    pub messages: Matrix<T>,
    pub kernels: Vec<KernelTrace<T>>,
    /// `C = Σ w_m S_m`.
    pub context_pre: Matrix<T>,
    /// `h(C)`.
    pub context_act: Matrix<T>,
    /// `X̃ = h(C) W_out`.
    pub context: Matrix<T>,
    /// `X_aug = λ X̃ + X`.
    pub output: Matrix<T>,
}

fn check_input<T: Scalar>(x: &Matrix<T>, p: &LatentGnnParams<T>) -> Result<()> {
    p.validate()?;
    if x.cols() != p.channels() {
        return Err(Error::Shape {
            op: "layer input",
            lhs: x.shape(),
            rhs: p.w_in.shape(),
        });
    }
    Ok(())
}

/// Three-step latent message passing with peak extra memory `O(N (d + c_r))`.
pub fn forward_stepwise<T: Scalar>(x: &Matrix<T>, p: &LatentGnnParams<T>) -> Result<ForwardTrace<T>> {
    check_input(x, p)?;
    let reduced = x.matmul(&p.w_in)?;
    let messages = reduced.matmul(&p.w_msg)?;
    let mut context_pre = Matrix::zeros(x.rows(), p.reduced_channels());
    let mut kernels = Vec::with_capacity(p.kernels.len());
    for (k, &w) in p.kernels.iter().zip(&p.mixture) {
        let pre = psi_preactivation(&reduced, &k.psi)?;
        let psi = pre.activate(k.psi.activation);
        let back = match &k.psi_back {
            Some(bp) => {
                let pre_b = psi_preactivation(&reduced, bp)?;
                let psi_b = pre_b.activate(bp.activation);
                Some((pre_b, psi_b))
            }
            None => None,
        };
        let f = latent_matrix(&k.latent)?;
        let z = psi.matmul_tn(&messages)?;
        let z_tilde = f.matmul(&z)?;
        let scattered = back.as_ref().map_or(&psi, |(_, pb)| pb).matmul(&z_tilde)?;
        context_pre.add_scaled(&scattered, w)?;
        kernels.push(KernelTrace {
            pre,
            psi,
            back,
            f,
            z,
            z_tilde,
            scattered,
        });
    }
    let context_act = context_pre.activate(p.activation);
    let context = context_act.matmul(&p.w_out)?;
    let mut output = x.clone();
    output.add_scaled(&context, p.lambda)?;
    Ok(ForwardTrace {
        reduced,
        messages,
        kernels,
        context_pre,
        context_act,
        context,
        output,
    })
}

/// `A = Σ_m w_m Ψ'_m F_m Ψ_mᵀ` over already-reduced features. Materializes `N x N`.
pub fn mixture_affinity<T: Scalar>(reduced: &Matrix<T>, p: &LatentGnnParams<T>) -> Result<Matrix<T>> {
    let n = reduced.rows();
    let mut a = Matrix::zeros(n, n);
    for (k, &w) in p.kernels.iter().zip(&p.mixture) {
        let psi = psi_preactivation(reduced, &k.psi)?.activate(k.psi.activation);
        let back = match &k.psi_back {
            Some(bp) => psi_preactivation(reduced, bp)?.activate(bp.activation),
            None => psi.clone(),
        };
        let f = latent_matrix(&k.latent)?;
        a.add_scaled(&expand_low_rank_pair(&back, &f, &psi)?, w)?;
    }
    Ok(a)
}

/// `X_aug = λ h(A X_r W) W_out + X` with the affinity materialized, for `N` up to
/// [`MATRIX_FORM_CAP`].
pub fn forward_matrix_form<T: Scalar>(x: &Matrix<T>, p: &LatentGnnParams<T>) -> Result<Matrix<T>> {
    forward_matrix_form_capped(x, p, MATRIX_FORM_CAP)
}

pub fn forward_matrix_form_capped<T: Scalar>(
    x: &Matrix<T>,
    p: &LatentGnnParams<T>,
    cap: usize,
) -> Result<Matrix<T>> {
    check_input(x, p)?;
    if x.rows() > cap {
        return Err(Error::TooLarge {
            what: "matrix-form forward",
            n: x.rows(),
            cap,
        });
    }
    let reduced = x.matmul(&p.w_in)?;
    let a = mixture_affinity(&reduced, p)?;
    let context = a
        .matmul(&reduced.matmul(&p.w_msg)?)?
        .activate(p.activation)
        .matmul(&p.w_out)?;
    let mut out = x.clone();
    out.add_scaled(&context, p.lambda)?;
    Ok(out)
}

/// Shape of one kernel, independent of parameter values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelSpec {
    pub dim: usize,
    pub latent: LatentKind,
    /// Column count of `Φ` for the symmetric-factor kind; ignored otherwise.
    pub rank: usize,
    pub psi_activation: Activation,
    pub untied: bool,
}

impl KernelSpec {
    pub fn new(dim: usize, latent: LatentKind) -> Self {
        KernelSpec {
            dim,
            latent,
            rank: dim,
            psi_activation: Activation::Relu,
            untied: false,
        }
    }
}

/// Layer dimensions: input channels, bottleneck width and per-kernel shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerDims {
    pub channels: usize,
    pub reduced: usize,
    pub kernels: Vec<KernelSpec>,
    pub activation: Activation,
}

/// Default bottleneck width, `c / 4` rounded down and at least 1.
pub fn default_reduced_channels(c: usize) -> usize {
    (c / 4).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    /// Every trainable scalar of the layer.
    pub total: usize,
    /// Excludes the bottleneck projections `w_in` and `w_out`.
    pub message_passing: usize,
}

impl LayerDims {
    pub fn new(channels: usize, reduced: usize, kernels: Vec<KernelSpec>) -> Self {
        LayerDims {
            channels,
            reduced,
            kernels,
            activation: Activation::Relu,
        }
    }

    pub fn parameter_count(&self) -> ParamCount {
        let (c, cr) = (self.channels, self.reduced);
        let mut core = cr * cr + self.kernels.len() + 1;
        for k in &self.kernels {
            let psi = cr * k.dim * if k.untied { 2 } else { 1 };
            let latent = match k.latent {
                LatentKind::Identity => 0,
                LatentKind::Free => k.dim * k.dim,
                LatentKind::SymmetricFactor => k.dim * k.rank,
            };
            core += psi + latent;
        }
        ParamCount {
            total: core + 2 * c * cr,
            message_passing: core,
        }
    }

    pub fn shape(&self, n: usize) -> LayerShape {
        LayerShape {
            n,
            channels: self.channels,
            reduced: self.reduced,
            kernel_dims: self.kernels.iter().map(|k| k.dim).collect(),
            untied: self.kernels.iter().map(|k| k.untied).collect(),
        }
    }
}

/// Everything the operation count depends on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub n: usize,
    pub channels: usize,
    pub reduced: usize,
    pub kernel_dims: Vec<usize>,
    /// Per kernel; an untied kernel pays for a second `Ψ`.
    pub untied: Vec<bool>,
}

impl LayerShape {
    pub fn tied(n: usize, channels: usize, reduced: usize, kernel_dims: Vec<usize>) -> Self {
        let untied = vec![false; kernel_dims.len()];
        LayerShape {
            n,
            channels,
            reduced,
            kernel_dims,
            untied,
        }
    }
}

fn mul_all(terms: &[u64]) -> Result<u64> {
    terms
        .iter()
        .try_fold(1u64, |acc, &t| acc.checked_mul(t))
        .ok_or(Error::Overflow)
}

/// Floating-point operation count of [`forward_stepwise`], two per multiply-add:
///
/// ```text
/// 2 N c c_r (in) + 2 N c_r c (out) + 2 N c_r² (msg)
///   + Σ_m [ 2 N c_r d_m (Ψ) + 2 N d_m c_r (collect) + 2 d_m² c_r (latent) + 2 N d_m c_r (scatter) ]
/// ```
///
/// An untied kernel adds another `2 N c_r d_m`. Elementwise work (activations,
/// mixture weighting, the residual) is not counted.
pub fn flops(shape: &LayerShape) -> Result<u64> {
    let n = shape.n as u64;
    let c = shape.channels as u64;
    let cr = shape.reduced as u64;
    if n == 0 || c == 0 || cr == 0 || shape.kernel_dims.is_empty() {
        return Err(Error::Config("flops: all dimensions must be positive".into()));
    }
    let add = |a: u64, b: u64| a.checked_add(b).ok_or(Error::Overflow);
    let mut total = mul_all(&[2, n, c, cr])?;
    total = add(total, mul_all(&[2, n, cr, c])?)?;
    total = add(total, mul_all(&[2, n, cr, cr])?)?;
    for (m, &d) in shape.kernel_dims.iter().enumerate() {
        let d = d as u64;
        if d == 0 {
            return Err(Error::Config("flops: latent dims must be positive".into()));
        }
        let psi_count = if shape.untied.get(m).copied().unwrap_or(false) { 2 } else { 1 };
        total = add(total, mul_all(&[2 * psi_count, n, cr, d])?)?;
        total = add(total, mul_all(&[2, n, d, cr])?)?;
        total = add(total, mul_all(&[2, d, d, cr])?)?;
        total = add(total, mul_all(&[2, n, d, cr])?)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    KaimingUniform,
    /// `N(0, 0.01²)`.
    SmallNormal,
}

impl InitScheme {
    pub fn draw<T: Scalar>(self, rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix<T> {
        match self {
            InitScheme::KaimingUniform => {
                let bound = (6.0 / rows as f64).sqrt();
                rng.uniform_matrix(rows, cols, -bound, bound)
            }
            InitScheme::SmallNormal => rng.normal_matrix(rows, cols, 0.01),
        }
    }
}

/// Draws a parameter set. Mixture weights start at `1 / kernels` and `λ` at 0,
/// so the freshly initialized layer is the identity map.
pub fn init_params<T: Scalar>(
    rng: &mut SeededRng,
    dims: &LayerDims,
    scheme: InitScheme,
) -> Result<LatentGnnParams<T>> {
    let (c, cr) = (dims.channels, dims.reduced);
    if c == 0 || cr == 0 || dims.kernels.is_empty() {
        return Err(Error::Config("init: channels and kernel list must be non-empty".into()));
    }
    let w_in = scheme.draw(rng, c, cr);
    let mut kernels = Vec::with_capacity(dims.kernels.len());
    for spec in &dims.kernels {
        if spec.dim == 0 || (spec.latent == LatentKind::SymmetricFactor && spec.rank == 0) {
            return Err(Error::Config("init: latent dims must be positive".into()));
        }
        let psi = PsiParams::new(scheme.draw(rng, cr, spec.dim), spec.psi_activation);
        let psi_back = spec
            .untied
            .then(|| PsiParams::new(scheme.draw(rng, cr, spec.dim), spec.psi_activation));
        let latent = match spec.latent {
            LatentKind::Identity => LatentAffinity::Identity { dim: spec.dim },
            LatentKind::Free => LatentAffinity::Free(scheme.draw(rng, spec.dim, spec.dim)),
            LatentKind::SymmetricFactor => {
                LatentAffinity::SymmetricFactor(scheme.draw(rng, spec.dim, spec.rank))
            }
        };
        kernels.push(KernelParams {
            psi,
            psi_back,
            latent,
        });
    }
    let w_msg = scheme.draw(rng, cr, cr);
    let w_out = scheme.draw(rng, cr, c);
    let k = dims.kernels.len();
    Ok(LatentGnnParams {
        w_in,
        kernels,
        w_msg,
        mixture: vec![T::one() / T::lit(k as f64); k],
        w_out,
        lambda: T::zero(),
        activation: dims.activation,
    })
}
