//! Reverse-mode gradients for the latent layer and the dense block, and a
//! central finite-difference checker used as the independent referee.
//!
//! Gradients are stored in the same structs as the parameters they belong to,
//! so a gradient can be flattened, scaled and applied with the parameter
//! helpers. All backward functions compute the gradient of
//! `Σ upstream ⊙ X_aug`.

use crate::affinity::{guarded_degree, latent_matrix, psi_preactivation, DenseVariant, LatentAffinity, DEGREE_EPS};
use crate::dense::{DenseNonLocalParams, DenseTrace};
use crate::error::{Error, Result};
use crate::layer::{ForwardTrace, LatentGnnParams};
use crate::scalar::{sum, Scalar};
use crate::tensor::Matrix;

/// Gradients of a latent layer: one entry per parameter, plus the input.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStore<T> {
    pub params: LatentGnnParams<T>,
    pub input: Matrix<T>,
}

/// Gradients of a dense non-local block.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    pub w_msg: Matrix<T>,
    pub lambda: T,
    pub input: Matrix<T>,
}

fn zeros_like<T: Scalar>(p: &LatentGnnParams<T>) -> LatentGnnParams<T> {
    let mut g = p.clone();
    let n = g.to_flat().len();
    g.set_flat(&vec![T::zero(); n]).expect("same layout");
    g
}

/// Gradient of `F` with respect to its parameter.
fn latent_param_grad<T: Scalar>(latent: &LatentAffinity<T>, d_f: &Matrix<T>) -> Result<Option<Matrix<T>>> {
    Ok(match latent {
        LatentAffinity::Identity { .. } => None,
        LatentAffinity::Free(_) => Some(d_f.clone()),
        // F = Φ Φᵀ  =>  dΦ = (dF + dFᵀ) Φ
        LatentAffinity::SymmetricFactor(phi) => Some(d_f.add(&d_f.transpose())?.matmul(phi)?),
    })
}

fn check_trace<T: Scalar>(
    x: &Matrix<T>,
    p: &LatentGnnParams<T>,
    trace: &ForwardTrace<T>,
    upstream: &Matrix<T>,
) -> Result<()> {
    let mismatch = |lhs, rhs| {
        Err(Error::Shape {
            op: "backward",
            lhs,
            rhs,
        })
    };
    if upstream.shape() != x.shape() {
        return mismatch(upstream.shape(), x.shape());
    }
    if trace.output.shape() != x.shape() {
        return mismatch(trace.output.shape(), x.shape());
    }
    if trace.reduced.shape() != (x.rows(), p.reduced_channels()) {
        return mismatch(trace.reduced.shape(), (x.rows(), p.reduced_channels()));
    }
    if trace.kernels.len() != p.kernels.len() {
        return mismatch((trace.kernels.len(), 0), (p.kernels.len(), 0));
    }
    for (t, k) in trace.kernels.iter().zip(&p.kernels) {
        if t.psi.cols() != k.dim() || t.back.is_some() != k.is_untied() {
            return mismatch(t.psi.shape(), (x.rows(), k.dim()));
        }
    }
    Ok(())
}

/// Backward pass through [`forward_stepwise`](crate::layer::forward_stepwise).
/// Like the forward pass it never forms an `N x N` matrix.
pub fn backward<T: Scalar>(
    x: &Matrix<T>,
    p: &LatentGnnParams<T>,
    trace: &ForwardTrace<T>,
    upstream: &Matrix<T>,
) -> Result<GradStore<T>> {
    check_trace(x, p, trace, upstream)?;
    let mut g = zeros_like(p);

    g.lambda = upstream.dot(&trace.context)?;
    let d_context = upstream.scale(p.lambda);
    g.w_out = trace.context_act.matmul_tn(&d_context)?;
    let d_act = d_context.matmul_nt(&p.w_out)?;
    let d_pre = trace.context_pre.activation_backward(p.activation, &d_act)?;

    let mut d_messages = Matrix::zeros(trace.messages.rows(), trace.messages.cols());
    let mut d_reduced = Matrix::zeros(trace.reduced.rows(), trace.reduced.cols());
    for (m, (k, t)) in p.kernels.iter().zip(&trace.kernels).enumerate() {
        let w = p.mixture[m];
        g.mixture[m] = d_pre.dot(&t.scattered)?;
        let d_scattered = d_pre.scale(w);
        // S = Ψ' Z̃
        let d_scatter_psi = d_scattered.matmul_nt(&t.z_tilde)?;
        let d_z_tilde = t.scatter_psi().matmul_tn(&d_scattered)?;
        // Z̃ = F Z
        let d_f = d_z_tilde.matmul_nt(&t.z)?;
        let d_z = t.f.matmul_tn(&d_z_tilde)?;
        // Z = Ψᵀ M
        let mut d_psi = trace.messages.matmul_nt(&d_z)?;
        d_messages.add_scaled(&t.psi.matmul(&d_z)?, T::one())?;

        let gk = &mut g.kernels[m];
        if let Some(lat) = latent_param_grad(&k.latent, &d_f)? {
            *gk.latent.parameter_mut().expect("same layout") = lat;
        }
        match (&k.psi_back, &t.back) {
            (Some(bp), Some((pre_b, _))) => {
                let d_pre_b = pre_b.activation_backward(bp.activation, &d_scatter_psi)?;
                gk.psi_back.as_mut().expect("same layout").theta = trace.reduced.matmul_tn(&d_pre_b)?;
                d_reduced.add_scaled(&d_pre_b.matmul_nt(&bp.theta)?, T::one())?;
            }
            _ => d_psi.add_scaled(&d_scatter_psi, T::one())?,
        }
        let d_pre_k = t.pre.activation_backward(k.psi.activation, &d_psi)?;
        gk.psi.theta = trace.reduced.matmul_tn(&d_pre_k)?;
        d_reduced.add_scaled(&d_pre_k.matmul_nt(&k.psi.theta)?, T::one())?;
    }

    g.w_msg = trace.reduced.matmul_tn(&d_messages)?;
    d_reduced.add_scaled(&d_messages.matmul_nt(&p.w_msg)?, T::one())?;
    g.w_in = x.matmul_tn(&d_reduced)?;
    let mut input = upstream.clone();
    input.add_scaled(&d_reduced.matmul_nt(&p.w_in)?, T::one())?;
    Ok(GradStore { params: g, input })
}

/// Backward pass through the materialized affinity `A = Σ w_m Ψ'_m F_m Ψ_mᵀ`.
/// Independent of [`backward`]; used to cross-check it.
pub fn backward_matrix_form<T: Scalar>(
    x: &Matrix<T>,
    p: &LatentGnnParams<T>,
    upstream: &Matrix<T>,
) -> Result<GradStore<T>> {
    p.validate()?;
    if upstream.shape() != x.shape() || x.cols() != p.channels() {
        return Err(Error::Shape {
            op: "backward_matrix_form",
            lhs: upstream.shape(),
            rhs: x.shape(),
        });
    }
    let n = x.rows();
    let reduced = x.matmul(&p.w_in)?;
    let messages = reduced.matmul(&p.w_msg)?;
    struct Term<T> {
        pre: Matrix<T>,
        psi: Matrix<T>,
        back: Option<(Matrix<T>, Matrix<T>)>,
        f: Matrix<T>,
        expanded: Matrix<T>,
    }
    let mut terms = Vec::new();
    let mut a = Matrix::zeros(n, n);
    for (k, &w) in p.kernels.iter().zip(&p.mixture) {
        let pre = psi_preactivation(&reduced, &k.psi)?;
        let psi = pre.activate(k.psi.activation);
        let back = match &k.psi_back {
            Some(bp) => {
                let pb = psi_preactivation(&reduced, bp)?;
                let ab = pb.activate(bp.activation);
                Some((pb, ab))
            }
            None => None,
        };
        let f = latent_matrix(&k.latent)?;
        let left = back.as_ref().map_or(&psi, |(_, b)| b);
        let expanded = left.matmul(&f)?.matmul_nt(&psi)?;
        a.add_scaled(&expanded, w)?;
        terms.push(Term {
            pre,
            psi,
            back,
            f,
            expanded,
        });
    }
    let context_pre = a.matmul(&messages)?;
    let context_act = context_pre.activate(p.activation);
    let context = context_act.matmul(&p.w_out)?;

    let mut g = zeros_like(p);
    g.lambda = upstream.dot(&context)?;
    let d_context = upstream.scale(p.lambda);
    g.w_out = context_act.matmul_tn(&d_context)?;
    let d_pre = context_pre.activation_backward(p.activation, &d_context.matmul_nt(&p.w_out)?)?;
    let d_a = d_pre.matmul_nt(&messages)?;
    let d_messages = a.matmul_tn(&d_pre)?;

    let mut d_reduced = Matrix::zeros(n, p.reduced_channels());
    for (m, (k, t)) in p.kernels.iter().zip(&terms).enumerate() {
        g.mixture[m] = d_a.dot(&t.expanded)?;
        let d_k = d_a.scale(p.mixture[m]);
        let left = t.back.as_ref().map_or(&t.psi, |(_, b)| b);
        // K = L F Ψᵀ
        let d_left = d_k.matmul(&t.psi)?.matmul_nt(&t.f)?;
        let d_right = d_k.matmul_tn(left)?.matmul(&t.f)?;
        let d_f = left.matmul_tn(&d_k)?.matmul(&t.psi)?;
        let gk = &mut g.kernels[m];
        if let Some(lat) = latent_param_grad(&k.latent, &d_f)? {
            *gk.latent.parameter_mut().expect("same layout") = lat;
        }
        let mut d_psi = d_right;
        match (&k.psi_back, &t.back) {
            (Some(bp), Some((pb, _))) => {
                let d_pb = pb.activation_backward(bp.activation, &d_left)?;
                gk.psi_back.as_mut().expect("same layout").theta = reduced.matmul_tn(&d_pb)?;
                d_reduced.add_scaled(&d_pb.matmul_nt(&bp.theta)?, T::one())?;
            }
            _ => d_psi.add_scaled(&d_left, T::one())?,
        }
        let d_pk = t.pre.activation_backward(k.psi.activation, &d_psi)?;
        gk.psi.theta = reduced.matmul_tn(&d_pk)?;
        d_reduced.add_scaled(&d_pk.matmul_nt(&k.psi.theta)?, T::one())?;
    }
    g.w_msg = reduced.matmul_tn(&d_messages)?;
    d_reduced.add_scaled(&d_messages.matmul_nt(&p.w_msg)?, T::one())?;
    g.w_in = x.matmul_tn(&d_reduced)?;
    let mut input = upstream.clone();
    input.add_scaled(&d_reduced.matmul_nt(&p.w_in)?, T::one())?;
    Ok(GradStore { params: g, input })
}

/// Backward pass through [`dense_forward_trace`](crate::dense::dense_forward_trace).
pub fn dense_backward<T: Scalar>(
    x: &Matrix<T>,
    p: &DenseNonLocalParams<T>,
    trace: &DenseTrace<T>,
    upstream: &Matrix<T>,
) -> Result<DenseGrads<T>> {
    if upstream.shape() != x.shape() || trace.output.shape() != x.shape() {
        return Err(Error::Shape {
            op: "dense_backward",
            lhs: upstream.shape(),
            rhs: x.shape(),
        });
    }
    let lambda = upstream.dot(&trace.context)?;
    let d_pre = trace
        .pre
        .activation_backward(p.activation, &upstream.scale(p.lambda))?;
    let d_a = d_pre.matmul_nt(&trace.messages)?;
    let d_messages = trace.affinity.matmul_tn(&d_pre)?;
    let w_msg = x.matmul_tn(&d_messages)?;

    let d_gram = match p.variant {
        DenseVariant::Sim => d_a,
        DenseVariant::Lap => {
            // A_ij = S_ij / D_i with D_i = max(Σ_j S_ij, ε)
            let gram = x.matmul_nt(x)?;
            let mut d_s = d_a.clone();
            for i in 0..gram.rows() {
                let raw: T = sum(gram.row(i).iter().copied());
                let deg = guarded_degree(raw);
                let through_degree = if raw > T::lit(DEGREE_EPS) {
                    let s: T = sum(d_a.row(i).iter().zip(trace.affinity.row(i)).map(|(&g, &a)| g * a));
                    -s / deg
                } else {
                    T::zero()
                };
                for v in d_s.row_mut(i) {
                    *v = *v / deg + through_degree;
                }
            }
            d_s
        }
    };
    let mut input = upstream.clone();
    input.add_scaled(&d_messages.matmul_nt(&p.w_msg)?, T::one())?;
    input.add_scaled(&d_gram.add(&d_gram.transpose())?.matmul(x)?, T::one())?;
    Ok(DenseGrads {
        w_msg,
        lambda,
        input,
    })
}

/// Scalar losses over an output matrix.
#[derive(Clone, Copy, Debug)]
pub enum Loss<'a> {
    /// `Σ out`.
    Sum,
    /// `Σ out²`.
    SumOfSquares,
    /// Mean softmax cross-entropy of each row against `targets[row]`.
    CrossEntropy(&'a [usize]),
}

impl Loss<'_> {
    /// Loss value and its gradient with respect to `out`.
    pub fn evaluate<T: Scalar>(&self, out: &Matrix<T>) -> Result<(T, Matrix<T>)> {
        match self {
            Loss::Sum => Ok((out.sum(), Matrix::filled(out.rows(), out.cols(), T::one()))),
            Loss::SumOfSquares => Ok((out.dot(out)?, out.scale(T::lit(2.0)))),
            Loss::CrossEntropy(targets) => {
                let ce = softmax_cross_entropy(out, targets)?;
                Ok((ce.loss, ce.grad))
            }
        }
    }
}

pub struct CrossEntropy<T> {
    /// Mean over rows.
    pub loss: T,
    /// Gradient of the mean loss with respect to the logits.
    pub grad: Matrix<T>,
    /// Rows whose argmax equals the target.
    pub correct: usize,
}

/// Numerically stable mean softmax cross-entropy.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Matrix<T>, targets: &[usize]) -> Result<CrossEntropy<T>> {
    let (n, k) = logits.shape();
    if targets.len() != n || targets.iter().any(|&t| t >= k) {
        return Err(Error::Shape {
            op: "softmax_cross_entropy",
            lhs: logits.shape(),
            rhs: (targets.len(), 1),
        });
    }
    let inv_n = T::one() / T::lit(n.max(1) as f64);
    let mut grad = Matrix::zeros(n, k);
    let mut loss = T::zero();
    let mut correct = 0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let (arg, max) = argmax(row);
        if arg == t {
            correct += 1;
        }
        let z: T = sum(row.iter().map(|&v| (v - max).exp()));
        let log_z = max + z.ln();
        loss += log_z - row[t];
        let g = grad.row_mut(i);
        for (j, gv) in g.iter_mut().enumerate() {
            *gv = (row[j] - log_z).exp() * inv_n;
        }
        g[t] -= inv_n;
    }
    Ok(CrossEntropy {
        loss: loss * inv_n,
        grad,
        correct,
    })
}

/// Index and value of the first maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> (usize, T) {
    row.iter()
        .copied()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, v)| if v > best.1 { (i, v) } else { best })
}

/// Result of [`fd_check`].
#[derive(Clone, Debug)]
pub struct FdReport {
    /// Worst relative error per named block.
    pub groups: Vec<(String, f64)>,
    pub max_rel: f64,
    /// Block and index of the worst entry.
    pub worst: (String, usize),
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` with central differences
/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every entry of `params`.
/// `groups` names consecutive blocks of the flat vector.
///
/// The difference and the division happen in `D`, the output type of `f`, and
/// divide by the step actually taken after rounding `θ ± h` to `f64`. With
/// `D = TwoFloat` rounding in `f` stays far below the difference itself.
pub fn fd_check<D: Scalar>(
    mut f: impl FnMut(&[f64]) -> D,
    params: &[f64],
    analytic: &[f64],
    groups: &[(String, usize)],
    step: f64,
) -> Result<FdReport> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let total: usize = groups.iter().map(|g| g.1).sum();
    if params.len() != analytic.len() || total != params.len() {
        return Err(Error::BufferLength {
            rows: params.len(),
            cols: 1,
            len: analytic.len(),
        });
    }
    let mut theta = params.to_vec();
    let mut report = FdReport {
        groups: Vec::with_capacity(groups.len()),
        max_rel: 0.0,
        worst: (String::new(), 0),
    };
    let mut offset = 0;
    for (name, len) in groups {
        let mut worst = 0.0f64;
        for i in offset..offset + len {
            let orig = theta[i];
            let (hi, lo) = (orig + step, orig - step);
            theta[i] = hi;
            let up = f(&theta);
            theta[i] = lo;
            let down = f(&theta);
            theta[i] = orig;
            let numeric = ((up - down) / (D::lit(hi) - D::lit(lo))).to_f64().unwrap_or(f64::NAN);
            let e = rel_error(analytic[i], numeric);
            worst = worst.max(e);
            if e > report.max_rel || report.worst.0.is_empty() {
                report.max_rel = report.max_rel.max(e);
                report.worst = (name.clone(), i - offset);
            }
        }
        report.groups.push((name.clone(), worst));
        offset += len;
    }
    Ok(report)
}

/// Smallest `|pre-activation|` over every relu in the layer; finite-difference
/// checks are only meaningful when this stays well above the step.
pub fn min_kink_distance<T: Scalar>(p: &LatentGnnParams<T>, trace: &ForwardTrace<T>) -> f64 {
    use crate::tensor::Activation::Relu;
    let min_abs = |m: &Matrix<T>| {
        m.as_slice()
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs().to_f64().unwrap_or(0.0)))
    };
    let mut dist = f64::INFINITY;
    for (k, t) in p.kernels.iter().zip(&trace.kernels) {
        if k.psi.activation == Relu {
            dist = dist.min(min_abs(&t.pre));
        }
        if let (Some(bp), Some((pb, _))) = (&k.psi_back, &t.back) {
            if bp.activation == Relu {
                dist = dist.min(min_abs(pb));
            }
        }
    }
    if p.activation == Relu {
        dist = dist.min(min_abs(&trace.context_pre));
    }
    dist
}

/// Signs of every relu input in the pass, in a fixed order. Two passes with
/// equal patterns lie on the same linear piece of every relu.
pub fn relu_pattern<T: Scalar>(p: &LatentGnnParams<T>, trace: &ForwardTrace<T>) -> Vec<bool> {
    use crate::tensor::Activation::Relu;
    let mut out = Vec::new();
    let mut push = |m: &Matrix<T>| out.extend(m.as_slice().iter().map(|v| *v > T::zero()));
    for (k, t) in p.kernels.iter().zip(&trace.kernels) {
        if k.psi.activation == Relu {
            push(&t.pre);
        }
        if let (Some(bp), Some((pb, _))) = (&k.psi_back, &t.back) {
            if bp.activation == Relu {
                push(pb);
            }
        }
    }
    if p.activation == Relu {
        push(&trace.context_pre);
    }
    out
}
