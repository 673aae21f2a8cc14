//! Wall-time scaling of the latent layer and the dense block.
//!
//! Each point is the median of `repeats` timed forward passes after one
//! discarded warmup, measured with [`Instant`]. Everything runs on the calling
//! thread. The dense block is timed through the row-streamed path so large `N`
//! does not need an `N x N` buffer; its operation count is the same.

use std::hint::black_box;
use std::time::Instant;

use latentgnn::affinity::LatentKind;
use latentgnn::dense::{dense_flops, dense_forward_streamed, DenseNonLocalParams, STREAM_BLOCK};
use latentgnn::layer::{flops, forward_stepwise, init_params, InitScheme, KernelSpec, LatentGnnParams, LayerDims};
use latentgnn::{Activation, Matrix, SeededRng};

use crate::args::{BenchArgs, BenchVariant};
use crate::report::{config_comment, emit, join, loglog_slope, median, Shape};
use crate::{usage, CliResult};

pub const CSV_HEADER: &str =
    "variant,n,c,c_r,d,kernels,wall_time_ns,wall_time_ns_min,wall_time_ns_max,analytic_flops,bytes_peak_estimate";

/// Columns that depend on the machine rather than the configuration.
pub const TIMING_COLUMNS: [&str; 3] = ["wall_time_ns", "wall_time_ns_min", "wall_time_ns_max"];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub variant: &'static str,
    pub n: usize,
    pub c: usize,
    pub cr: usize,
    pub dims: Vec<usize>,
    pub median_ns: u128,
    pub min_ns: u128,
    pub max_ns: u128,
    pub analytic_flops: u64,
    pub bytes_peak_estimate: u64,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.n,
            self.c,
            self.cr,
            join(&self.dims, ";"),
            self.dims.len(),
            self.median_ns,
            self.min_ns,
            self.max_ns,
            self.analytic_flops,
            self.bytes_peak_estimate
        )
    }
}

/// Live `f64` buffers of the stepwise forward: input, output, bottleneck
/// features and messages, context, and per kernel `Ψ` (twice if untied) and its scatter.
pub fn latent_bytes_estimate(n: usize, c: usize, cr: usize, dims: &[usize]) -> u64 {
    let per_kernel: usize = dims.iter().map(|&d| 2 * n * d + n * cr).sum();
    (8 * (2 * n * c + 4 * n * cr + per_kernel)) as u64
}

/// Input, messages, output and one `block x N` affinity slab.
pub fn dense_bytes_estimate(n: usize, c: usize) -> u64 {
    (8 * (3 * n * c + STREAM_BLOCK.min(n) * n + STREAM_BLOCK.min(n) * c)) as u64
}

fn time<R>(repeats: usize, mut f: impl FnMut() -> R) -> (u128, u128, u128) {
    black_box(f());
    let samples: Vec<u128> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            black_box(f());
            t.elapsed().as_nanos()
        })
        .collect();
    let min = *samples.iter().min().expect("repeats >= 1");
    let max = *samples.iter().max().expect("repeats >= 1");
    (median(samples), min, max)
}

pub fn bench_layer(seed: u64, n: usize, c: usize, cr: usize, dims: &[usize]) -> latentgnn::Result<(LatentGnnParams<f64>, Matrix<f64>)> {
    let mut rng = SeededRng::stream(seed, n as u64);
    let kernels = dims.iter().map(|&d| KernelSpec::new(d, LatentKind::Free)).collect();
    let mut p = init_params(&mut rng, &LayerDims::new(c, cr, kernels), InitScheme::KaimingUniform)?;
    p.lambda = 0.5;
    let x = rng.normal_matrix(n, c, 1.0);
    Ok((p, x))
}

pub fn time_latent(seed: u64, n: usize, shape: &Shape, repeats: usize) -> CliResult<BenchRecord> {
    let (p, x) = bench_layer(seed, n, shape.c, shape.cr, &shape.dims)?;
    let layer_shape = p.dims().shape(n);
    let (median_ns, min_ns, max_ns) = time(repeats, || forward_stepwise(&x, &p).map(|t| t.output));
    Ok(BenchRecord {
        variant: "latentgnn",
        n,
        c: shape.c,
        cr: shape.cr,
        dims: shape.dims.clone(),
        median_ns,
        min_ns,
        max_ns,
        analytic_flops: flops(&layer_shape)?,
        bytes_peak_estimate: latent_bytes_estimate(n, shape.c, shape.cr, &shape.dims),
    })
}

pub fn time_dense(seed: u64, n: usize, shape: &Shape, repeats: usize) -> CliResult<BenchRecord> {
    let mut rng = SeededRng::stream(seed, n as u64);
    // Scaled so that A_sim X W stays O(1) for unit-variance inputs.
    let scale = 1.0 / ((n * shape.c) as f64);
    let p = DenseNonLocalParams {
        w_msg: rng.normal_matrix(shape.c, shape.c, scale),
        variant: shape.affinity,
        activation: Activation::Relu,
        lambda: 0.5,
    };
    let x: Matrix<f64> = rng.normal_matrix(n, shape.c, 1.0);
    let (median_ns, min_ns, max_ns) = time(repeats, || dense_forward_streamed(&x, &p, STREAM_BLOCK));
    Ok(BenchRecord {
        variant: "dense",
        n,
        c: shape.c,
        cr: shape.c,
        dims: vec![n],
        median_ns,
        min_ns,
        max_ns,
        analytic_flops: dense_flops(n, shape.c, shape.affinity)?,
        bytes_peak_estimate: dense_bytes_estimate(n, shape.c),
    })
}

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    pub latent_slope: Option<f64>,
    pub dense_slope: Option<f64>,
    pub csv: String,
}

pub fn slope_of(records: &[BenchRecord], variant: &str) -> Option<f64> {
    let pts: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| (r.n, r.median_ns as f64))
        .collect();
    loglog_slope(&pts)
}

pub fn run_bench(a: &BenchArgs) -> CliResult<BenchOutcome> {
    let shape = Shape::resolve(&a.shape, 64, 32)?;
    if a.repeats < 5 {
        return usage("--repeats must be at least 5");
    }
    if a.n.is_empty() || a.n.contains(&0) {
        return usage("--n needs positive sizes");
    }
    let mut csv = config_comment(
        "bench",
        &[
            vec![
                ("seed", a.seed.to_string()),
                ("n", join(&a.n, ";")),
                ("repeats", a.repeats.to_string()),
                ("dense_max_n", a.dense_max_n.to_string()),
                ("threads", "1".to_string()),
            ],
            shape.fields(),
        ]
        .concat(),
    );
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    let mut records = Vec::new();
    for &n in &a.n {
        if a.variant != BenchVariant::Dense {
            records.push(time_latent(a.seed, n, &shape, a.repeats)?);
        }
        if a.variant != BenchVariant::Latentgnn && n <= a.dense_max_n {
            records.push(time_dense(a.seed, n, &shape, a.repeats)?);
        }
    }
    for r in &records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    Ok(BenchOutcome {
        latent_slope: slope_of(&records, "latentgnn"),
        dense_slope: slope_of(&records, "dense"),
        records,
        csv,
    })
}

pub fn cmd_bench(a: &BenchArgs) -> CliResult<BenchOutcome> {
    let outcome = run_bench(a)?;
    let mut summary = String::new();
    for (name, slope) in [("latentgnn", outcome.latent_slope), ("dense", outcome.dense_slope)] {
        match slope {
            Some(s) => summary.push_str(&format!("log-log slope {name}: {s:.3}\n")),
            None => summary.push_str(&format!("log-log slope {name}: n/a (needs 3 sizes)\n")),
        }
    }
    emit(a.out.as_deref(), &outcome.csv, &summary)?;
    Ok(outcome)
}

/// `dense / latentgnn` median wall time at one size.
pub fn speedup(seed: u64, n: usize, shape: &Shape, repeats: usize) -> CliResult<(f64, BenchRecord, BenchRecord)> {
    let latent = time_latent(seed, n, shape, repeats)?;
    let dense = time_dense(seed, n, shape, repeats)?;
    Ok((dense.median_ns as f64 / latent.median_ns.max(1) as f64, dense, latent))
}
