//! Randomized equivalence and gradient suites.
//!
//! Trial `i` of a run with seed `s` draws its instance from stream `(s, i)`,
//! so results do not depend on thread count or scheduling.

use latentgnn::affinity::LatentKind;
use latentgnn::grad::{backward, fd_check, min_kink_distance, relu_pattern};
use latentgnn::layer::{forward_matrix_form, forward_stepwise, init_params, InitScheme, KernelSpec, LatentGnnParams, LayerDims};
use latentgnn::{Activation, Matrix, Result, SeededRng};
use twofloat::TwoFloat;

use crate::args::VerifyArgs;
use crate::report::{config_comment, emit};
use crate::{usage, CliResult};

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;
/// Instances with any relu input closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: u64,
    pub n: usize,
    pub c: usize,
    pub kernels: usize,
    pub error: f64,
    /// Where the worst gradient error sits; empty for equivalence trials.
    pub worst: String,
    /// Redraws needed to clear the kink margin and keep every difference on one side of each kink.
    pub redraws: u32,
}

fn activation(rng: &mut SeededRng) -> Activation {
    if rng.below(2) == 0 {
        Activation::Relu
    } else {
        Activation::Identity
    }
}

fn random_layer(rng: &mut SeededRng, c: usize, cr: usize, dims: &[usize]) -> Result<LatentGnnParams<f64>> {
    let kernels = dims
        .iter()
        .map(|&d| {
            let mut k = KernelSpec::new(d, LatentKind::ALL[rng.below(LatentKind::ALL.len())]);
            k.rank = 1 + rng.below(d);
            k.psi_activation = activation(rng);
            k.untied = rng.below(4) == 0;
            k
        })
        .collect();
    let mut dims = LayerDims::new(c, cr, kernels);
    dims.activation = activation(rng);
    let mut p = init_params(rng, &dims, InitScheme::KaimingUniform)?;
    p.lambda = rng.uniform(0.5, 1.5);
    p.mixture.iter_mut().for_each(|w| *w = rng.uniform(-1.0, 1.0));
    Ok(p)
}

/// Stepwise vs. materialized output on a random instance with `N ≤ 64`,
/// `c ≤ 16` and up to three kernels of any kind.
pub fn equivalence_trial(seed: u64, index: u64) -> Result<Trial> {
    let mut rng = SeededRng::stream(seed, index);
    let n = 1 + rng.below(64);
    let c = 1 + rng.below(16);
    let cr = 1 + rng.below(c);
    let dims: Vec<usize> = (0..1 + rng.below(3)).map(|_| 1 + rng.below(16)).collect();
    let p = random_layer(&mut rng, c, cr, &dims)?;
    let x: Matrix<f64> = rng.normal_matrix(n, c, 1.0);
    let a = forward_stepwise(&x, &p)?.output;
    let b = forward_matrix_form(&x, &p)?;
    Ok(Trial {
        index,
        n,
        c,
        kernels: dims.len(),
        error: a.max_abs_diff(&b)?,
        worst: String::new(),
        redraws: 0,
    })
}

/// Analytic gradients of `Σ U ⊙ X_aug` for every parameter and the input,
/// against central differences, on `N = 16`, `c = 8`, two kernels with `d = 3`.
pub fn gradient_trial(seed: u64, index: u64) -> Result<Trial> {
    let (n, c, cr) = (16, 8, 4);
    for redraws in 0u32.. {
        let mut rng = SeededRng::stream(seed ^ 0x6ad1_e27b_0000_0000, (index << 16) | redraws as u64);
        let p = random_layer(&mut rng, c, cr, &[3, 3])?;
        let x: Matrix<f64> = rng.normal_matrix(n, c, 1.0);
        let upstream: Matrix<f64> = rng.normal_matrix(n, c, 1.0);
        let trace = forward_stepwise(&x, &p)?;
        if min_kink_distance(&p, &trace) < KINK_MARGIN {
            continue;
        }
        let g = backward(&x, &p, &trace, &upstream)?;
        let n_params = g.params.to_flat().len();
        let mut theta = p.to_flat();
        theta.extend_from_slice(x.as_slice());
        // The residual only adds `U` to the input gradient, so the objective
        // skips it. Differences are taken in double-double arithmetic.
        let mut analytic = g.params.to_flat();
        analytic.extend(g.input.sub(&upstream)?.as_slice());
        let mut groups = p.segments();
        groups.push(("input".to_string(), x.len()));
        let base_pattern = relu_pattern(&p, &trace);
        let mut crossed = false;
        let mut probe = p.clone();
        let upstream_wide: Matrix<TwoFloat> = upstream.cast();
        let report = fd_check(
            |t| {
                probe.set_flat(&t[..n_params]).expect("same layout");
                let wide = probe.cast::<TwoFloat>();
                let xi = Matrix::from_vec(n, c, t[n_params..].to_vec()).expect("same shape").cast();
                let t = forward_stepwise(&xi, &wide).expect("valid instance");
                crossed |= relu_pattern(&wide, &t) != base_pattern;
                wide.lambda * t.context.dot(&upstream_wide).expect("same shape")
            },
            &theta,
            &analytic,
            &groups,
            FD_STEP,
        )?;
        if crossed {
            continue;
        }
        return Ok(Trial {
            index,
            n,
            c,
            kernels: 2,
            error: report.max_rel,
            worst: format!("{}[{}]", report.worst.0, report.worst.1),
            redraws,
        });
    }
    unreachable!("the redraw loop only exits by returning")
}

/// Runs `trial` for `0..count` on `threads` workers, returning results in index order.
pub fn run_trials(
    count: usize,
    threads: usize,
    trial: impl Fn(u64) -> Result<Trial> + Sync,
) -> Result<Vec<Trial>> {
    let threads = threads.clamp(1, count.max(1));
    let mut slots: Vec<Option<Result<Trial>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = count.div_ceil(threads).max(1);
        for (w, part) in slots.chunks_mut(chunk).enumerate() {
            let trial = &trial;
            s.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = Some(trial((w * chunk + j) as u64));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub equivalence: Vec<Trial>,
    pub gradient: Vec<Trial>,
}

impl VerifyReport {
    pub fn max_equivalence(&self) -> f64 {
        self.equivalence.iter().map(|t| t.error).fold(0.0, f64::max)
    }

    pub fn max_gradient(&self) -> f64 {
        self.gradient.iter().map(|t| t.error).fold(0.0, f64::max)
    }
}

pub fn run_verify(seed: u64, trials: usize, threads: usize) -> Result<VerifyReport> {
    Ok(VerifyReport {
        equivalence: run_trials(trials, threads, |i| equivalence_trial(seed, i))?,
        gradient: run_trials(trials, threads, |i| gradient_trial(seed, i))?,
    })
}

pub fn cmd_verify(a: &VerifyArgs) -> CliResult<bool> {
    if a.trials == 0 {
        return usage("--trials must be at least 1");
    }
    if a.threads == 0 {
        return usage("--threads must be at least 1");
    }
    if a.tolerance.is_some_and(|t| !(t >= 0.0)) {
        return usage("--tolerance must be non-negative");
    }
    let eq_tol = a.tolerance.unwrap_or(EQUIVALENCE_TOLERANCE);
    let grad_tol = a.tolerance.unwrap_or(GRADIENT_TOLERANCE);
    let report = run_verify(a.seed, a.trials, a.threads)?;

    let mut csv = config_comment(
        "verify",
        &[
            ("seed", a.seed.to_string()),
            ("trials", a.trials.to_string()),
            ("equivalence_tolerance", format!("{eq_tol:e}")),
            ("gradient_tolerance", format!("{grad_tol:e}")),
        ],
    );
    csv.push_str("check,trial,n,c,kernels,error,worst,redraws\n");
    let mut summary = String::new();
    let mut ok = true;
    for (name, trials, tol) in [
        ("equivalence", &report.equivalence, eq_tol),
        ("gradient", &report.gradient, grad_tol),
    ] {
        for t in trials {
            csv.push_str(&format!(
                "{name},{},{},{},{},{:.6e},{},{}\n",
                t.index, t.n, t.c, t.kernels, t.error, t.worst, t.redraws
            ));
            if !(t.error <= tol) {
                ok = false;
                summary.push_str(&format!(
                    "FAIL {name} trial {} (seed {}): error {:.3e} > {tol:e} {}\n",
                    t.index, a.seed, t.error, t.worst
                ));
            }
        }
    }
    summary.push_str(&format!(
        "max equivalence err {:.3e} (tolerance {eq_tol:e}), max grad rel err {:.3e} (tolerance {grad_tol:e})\n",
        report.max_equivalence(),
        report.max_gradient()
    ));
    summary.push_str(if ok { "verify: ok\n" } else { "verify: FAILED\n" });
    emit(a.out.as_deref(), &csv, &summary)?;
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trials_are_thread_count_independent() {
        let one = run_trials(9, 1, |i| equivalence_trial(3, i)).unwrap();
        let four = run_trials(9, 4, |i| equivalence_trial(3, i)).unwrap();
        assert_eq!(one, four);
        assert!(one.iter().enumerate().all(|(i, t)| t.index == i as u64));
    }

    #[test]
    fn a_few_trials_pass() {
        let r = run_verify(1, 5, 2).unwrap();
        assert!(r.max_equivalence() <= EQUIVALENCE_TOLERANCE);
        assert!(r.max_gradient() <= GRADIENT_TOLERANCE);
    }
}
