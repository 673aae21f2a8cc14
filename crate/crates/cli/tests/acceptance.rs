//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fails.

use std::path::Path;
use std::process::Command as Process;
use std::time::{Duration, Instant};

use latentgnn::affinity::{dense_affinity, DenseVariant, LatentAffinity, LatentKind};
use latentgnn::dense::{dense_flops, dense_forward, DenseNonLocalParams};
use latentgnn::io::{load_layer, save_layer, with_suffix};
use latentgnn::layer::{
    flops, forward_stepwise, init_params, mixture_affinity, InitScheme, KernelSpec, LayerDims, LayerShape,
};
use latentgnn::tasks::data::{load_dataset, save_dataset};
use latentgnn::tasks::{gen_grid_beacon, train, BeaconSpec, Model, ModelConfig, ModelVariant, TrainConfig};
use latentgnn::{Activation, Matrix, SeededRng};
use latentgnn_cli::args::{BenchArgs, BenchVariant, Cli, Command, ShapeArgs};
use latentgnn_cli::bench::{run_bench, speedup, TIMING_COLUMNS};
use latentgnn_cli::report::{comparable_body, Shape};
use latentgnn_cli::verify::{equivalence_trial, gradient_trial, run_trials, EQUIVALENCE_TOLERANCE, GRADIENT_TOLERANCE};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn equivalence() -> Outcome {
    let t = Instant::now();
    let trials = run_trials(200, 1, |i| equivalence_trial(0, i)).map_err(|e| e.to_string())?;
    let worst = trials.iter().map(|t| t.error).fold(0.0, f64::max);
    let elapsed = t.elapsed();
    check(
        worst <= EQUIVALENCE_TOLERANCE && elapsed < Duration::from_secs(10),
        format!("max |stepwise - matrix form| {worst:.2e} <= 1e-10 over 200 instances in {}", secs(elapsed)),
    )
}

/// Dense non-local output computed one scalar at a time.
fn dense_by_loops(x: &Matrix<f64>, w: &Matrix<f64>, variant: DenseVariant, act: Activation, lambda: f64) -> Matrix<f64> {
    let (n, c) = x.shape();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..c {
                a[i][j] += x[(i, k)] * x[(j, k)];
            }
        }
        if variant == DenseVariant::Lap {
            let deg: f64 = a[i].iter().sum();
            let deg = deg.max(1e-12);
            a[i].iter_mut().for_each(|v| *v /= deg);
        }
    }
    let mut xw = vec![vec![0.0; c]; n];
    for i in 0..n {
        for o in 0..c {
            for k in 0..c {
                xw[i][o] += x[(i, k)] * w[(k, o)];
            }
        }
    }
    Matrix::from_fn(n, c, |i, o| {
        let mut s = 0.0;
        for j in 0..n {
            s += a[i][j] * xw[j][o];
        }
        let h = match act {
            Activation::Relu => s.max(0.0),
            Activation::Identity => s,
        };
        x[(i, o)] + lambda * h
    })
}

fn dense_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = SeededRng::new(seed);
        let n = 1 + rng.below(32);
        let c = 1 + rng.below(8);
        let variant = if seed % 2 == 0 { DenseVariant::Sim } else { DenseVariant::Lap };
        let act = if rng.below(2) == 0 { Activation::Relu } else { Activation::Identity };
        // Non-negative features keep the normalized degrees away from the guard.
        let x: Matrix<f64> = match variant {
            DenseVariant::Sim => rng.normal_matrix(n, c, 1.0),
            DenseVariant::Lap => rng.uniform_matrix(n, c, 0.0, 1.0),
        };
        let p = DenseNonLocalParams {
            w_msg: rng.normal_matrix(c, c, 1.0 / (n * c) as f64),
            variant,
            activation: act,
            lambda: rng.uniform(0.5, 1.5),
        };
        let fast = dense_forward(&x, &p).map_err(|e| e.to_string())?;
        let slow = dense_by_loops(&x, &p.w_msg, variant, act, p.lambda);
        worst = worst.max(fast.max_abs_diff(&slow).map_err(|e| e.to_string())?);
    }
    check(worst <= 1e-12, format!("max |matrix path - scalar loops| {worst:.2e} <= 1e-12 over 100 seeds, N <= 32"))
}

/// `I - 2 v vᵀ / vᵀ v`.
fn reflection(rng: &mut SeededRng, c: usize) -> Matrix<f64> {
    let v: Vec<f64> = (0..c).map(|_| rng.standard_normal()).collect();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    Matrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / vv)
}

fn identity_bridge() -> Outcome {
    let mut worst_affinity = 0.0f64;
    let mut worst_output = 0.0f64;
    for seed in 0..50 {
        let mut rng = SeededRng::new(1000 + seed);
        let c = 1 + rng.below(8);
        let n = c + rng.below(24);
        let act = if rng.below(2) == 0 { Activation::Relu } else { Activation::Identity };
        let x: Matrix<f64> = rng.normal_matrix(n, c, 1.0);
        let w_dense: Matrix<f64> = rng.normal_matrix(c, c, 1.0 / (n * c) as f64);
        let q = reflection(&mut rng, c);

        let mut spec = KernelSpec::new(n, LatentKind::Free);
        spec.psi_activation = Activation::Identity;
        let mut dims = LayerDims::new(c, c, vec![spec]);
        dims.activation = act;
        let mut p = init_params::<f64>(&mut rng, &dims, InitScheme::KaimingUniform).map_err(|e| e.to_string())?;
        // Ψ = [X_r | 0] and F = diag(I_c, 0), so Ψ F Ψᵀ = X_r X_rᵀ with d = N.
        p.w_in = q.clone();
        p.w_msg = q.transpose().matmul(&w_dense).map_err(|e| e.to_string())?;
        p.w_out = Matrix::identity(c);
        p.kernels[0].psi.theta = Matrix::from_fn(c, n, |i, j| if i == j { 1.0 } else { 0.0 });
        p.kernels[0].latent = LatentAffinity::Free(Matrix::from_fn(n, n, |i, j| if i == j && i < c { 1.0 } else { 0.0 }));
        p.mixture = vec![1.0];
        p.lambda = rng.uniform(0.5, 1.5);

        let reduced = x.matmul(&q).map_err(|e| e.to_string())?;
        let low_rank = mixture_affinity(&reduced, &p).map_err(|e| e.to_string())?;
        let target = dense_affinity(&reduced, DenseVariant::Sim).map_err(|e| e.to_string())?.matrix;
        worst_affinity = worst_affinity.max(low_rank.max_abs_diff(&target).map_err(|e| e.to_string())?);

        let dense = DenseNonLocalParams {
            w_msg: w_dense,
            variant: DenseVariant::Sim,
            activation: act,
            lambda: p.lambda,
        };
        let a = forward_stepwise(&x, &p).map_err(|e| e.to_string())?.output;
        let b = dense_forward(&x, &dense).map_err(|e| e.to_string())?;
        worst_output = worst_output.max(a.max_abs_diff(&b).map_err(|e| e.to_string())?);
    }
    check(
        worst_output <= 1e-10 && worst_affinity <= 1e-10,
        format!(
            "d = N: max |latent - dense output| {worst_output:.2e}, max |Ψ F Ψᵀ - A_sim(X_r)| {worst_affinity:.2e} <= 1e-10 over 50 instances"
        ),
    )
}

fn gradients() -> Outcome {
    let trials = run_trials(50, 4, |s| gradient_trial(s, 0)).map_err(|e| e.to_string())?;
    let worst = trials
        .iter()
        .max_by(|a, b| a.error.total_cmp(&b.error))
        .expect("50 trials");
    let redraws: u32 = trials.iter().map(|t| t.redraws).sum();
    check(
        worst.error <= GRADIENT_TOLERANCE,
        format!(
            "max FD relative error {:.2e} ({}) <= 1e-6 over 50 seeds, step 1e-5, {redraws} kink redraws",
            worst.error, worst.worst
        ),
    )
}

fn shape_args(c: usize, cr: usize, d: usize) -> ShapeArgs {
    ShapeArgs {
        c: Some(c),
        cr: Some(cr),
        d: vec![d],
        kernels: None,
        affinity: "sim".into(),
    }
}

fn scaling() -> Outcome {
    let t = Instant::now();
    let bench = |variant, n: Vec<usize>| {
        run_bench(&BenchArgs {
            seed: 0,
            n,
            shape: shape_args(64, 16, 32),
            repeats: 5,
            variant,
            dense_max_n: 4096,
            out: None,
        })
        .map_err(|e| e.to_string())
    };
    let latent = bench(BenchVariant::Latentgnn, (10..=16).map(|p| 1usize << p).collect())?
        .latent_slope
        .ok_or("no latent slope")?;
    let dense = bench(BenchVariant::Dense, (8..=12).map(|p| 1usize << p).collect())?
        .dense_slope
        .ok_or("no dense slope")?;
    let elapsed = t.elapsed();
    check(
        (0.85..=1.15).contains(&latent) && (1.8..=2.2).contains(&dense) && elapsed < Duration::from_secs(300),
        format!(
            "log-log slope latentgnn {latent:.3} in [0.85, 1.15] over N 1024..65536, dense {dense:.3} in [1.8, 2.2] over N 256..4096, {}",
            secs(elapsed)
        ),
    )
}

fn speed_and_counts() -> Outcome {
    let shape = Shape {
        c: 64,
        cr: 64,
        dims: vec![64],
        affinity: DenseVariant::Sim,
    };
    let (ratio, _, _) = speedup(0, 16384, &shape, 5).map_err(|e| e.to_string())?;
    let need = 0.05 * 16384.0 / 64.0;

    let params = LayerDims::new(1024, 256, vec![KernelSpec::new(100, LatentKind::Free)])
        .parameter_count()
        .message_passing;

    let e = |r: latentgnn::Result<u64>| r.map_err(|e| e.to_string());
    // By hand, two per multiply-add:
    //   N=1 c=1 c_r=1 d=1: in 2, out 2, msg 2, Ψ 2, collect 2, latent 2, scatter 2.
    //   N=2 c=3 c_r=1 d=2: 12 + 12 + 4 + 8 + 8 + 8 + 8.
    //   N=4 c=2 c_r=1 d=(1,3): 16 + 16 + 8 + (8 + 8 + 2 + 8) + (24 + 24 + 18 + 24).
    //   dense N=4 c=2: X Xᵀ 64, X W 32, A · XW 64, plus 16 divisions for lap.
    let counts = [
        (e(flops(&LayerShape::tied(1, 1, 1, vec![1])))?, 14),
        (e(flops(&LayerShape::tied(2, 3, 1, vec![2])))?, 60),
        (e(flops(&LayerShape::tied(4, 2, 1, vec![1, 3])))?, 156),
        (e(dense_flops(1, 1, DenseVariant::Sim))?, 6),
        (e(dense_flops(1, 1, DenseVariant::Lap))?, 7),
        (e(dense_flops(4, 2, DenseVariant::Sim))?, 160),
        (e(dense_flops(4, 2, DenseVariant::Lap))?, 176),
    ];
    let counts_ok = counts.iter().all(|(a, b)| a == b);
    check(
        ratio >= need && (100_000..=400_000).contains(&params) && counts_ok,
        format!(
            "dense/latentgnn wall time {ratio:.1}x >= {need:.1}x at N=16384 c=c_r=d=64; {params} message-passing parameters \
             at c=1024 c_r=256 d=100 in [0.1M, 0.4M]; flop hand counts {}",
            if counts_ok { "match" } else { "differ" }
        ),
    )
}

fn beacon_config(args: &[&str]) -> Result<(TrainConfig, latentgnn::tasks::Dataset<f64>, latentgnn::tasks::Dataset<f64>), String> {
    let mut argv = vec!["latentgnn", "train", "--grid", "16x16", "--classes", "4", "--train-count", "2000", "--eval-count", "500"];
    argv.extend_from_slice(args);
    let cli = <Cli as clap::Parser>::try_parse_from(argv).map_err(|e| e.to_string())?;
    let Command::Train(a) = cli.command else { unreachable!() };
    let p = latentgnn_cli::train::prepare(&a).map_err(|e| e.to_string())?;
    Ok((p.config, p.train_set, p.eval_set))
}

fn accuracy(args: &[&str]) -> Result<f64, String> {
    let (config, tr, ev) = beacon_config(args)?;
    if config.steps > 5000 {
        return Err("more than 5000 steps".into());
    }
    Ok(train(&config, &tr, &ev).map_err(|e| e.to_string())?.final_accuracy)
}

fn learning() -> Outcome {
    let t = Instant::now();
    let local = accuracy(&["--variant", "local-only"])?;
    let latent = accuracy(&["--variant", "latentgnn"])?;
    let mut ablation = Vec::new();
    for seed in ["0", "1", "2"] {
        let one = accuracy(&["--seed", seed, "--stages", "toy"])?;
        let three = accuracy(&["--seed", seed, "--stages", "toy-mixture"])?;
        ablation.push((one, three));
    }
    let elapsed = t.elapsed();
    let ablation_ok = ablation.iter().all(|(one, three)| three >= &(one - 0.01));
    let pairs: Vec<String> = ablation.iter().map(|(a, b)| format!("{a:.3}/{b:.3}")).collect();
    check(
        local <= 0.25 + 0.10 && latent >= local + 0.20 && ablation_ok && elapsed < Duration::from_secs(600),
        format!(
            "beacon 16x16 K=4: local-only {local:.3} <= 0.35, +latentgnn {latent:.3} >= local + 0.20; \
             1-kernel/3-kernel per seed {}; {}",
            pairs.join(" "),
            secs(elapsed)
        ),
    )
}

fn run_binary(args: &[&str], out: &Path) -> Result<String, String> {
    let status = Process::new(env!("CARGO_BIN_EXE_latentgnn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("`{}` exited with {:?}", args.join(" "), status.status.code()));
    }
    std::fs::read_to_string(out).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases: [(&[&str], &[&str]); 5] = [
        (&["verify", "--trials", "20", "--threads", "4"], &[]),
        (&["verify", "--trials", "20", "--threads", "1"], &[]),
        (&["flops"], &[]),
        (&["bench", "--n", "256,512,1024", "--c", "16", "--d", "8"], &TIMING_COLUMNS),
        (&["train", "--steps", "200", "--eval-every", "50", "--train-count", "200", "--eval-count", "100"], &[]),
    ];
    let mut bodies = Vec::new();
    for (i, (args, ignore)) in cases.iter().enumerate() {
        let a = run_binary(args, &dir.path().join(format!("{i}a.csv")))?;
        let b = run_binary(args, &dir.path().join(format!("{i}b.csv")))?;
        let (a, b) = (comparable_body(&a, ignore), comparable_body(&b, ignore));
        if a != b || a.len() < 2 {
            return Err(format!("`{}` bodies differ between reruns", args.join(" ")));
        }
        bodies.push(a);
    }
    check(
        bodies[0] == bodies[1],
        "verify, flops, bench and train CSV bodies byte-identical across reruns and thread counts".into(),
    )
}

fn same_files(a: &Path, b: &Path, suffixes: &[&str]) -> Result<bool, String> {
    for s in suffixes {
        let x = std::fs::read(with_suffix(a, s)).map_err(|e| e.to_string())?;
        let y = std::fs::read(with_suffix(b, s)).map_err(|e| e.to_string())?;
        if x != y {
            return Ok(false);
        }
    }
    Ok(true)
}

fn round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |s: &str| dir.path().join(s);
    let e = |r: latentgnn::Result<()>| r.map_err(|e| e.to_string());

    let mut ok = true;
    for (i, variant) in ModelVariant::ALL.into_iter().enumerate() {
        let mut config = TrainConfig::new(ModelConfig::new(8, 4, variant));
        config.steps = 20;
        config.eval_every = 10;
        let data = gen_grid_beacon::<f64>(3, &BeaconSpec::new(4, 4, 8, 4), 0..16).map_err(|e| e.to_string())?;
        let model = train(&config, &data, &data).map_err(|e| e.to_string())?.model;
        let (a, b) = (path(&format!("m{i}a")), path(&format!("m{i}b")));
        e(model.save(&a))?;
        let loaded = Model::<f64>::load(&a).map_err(|e| e.to_string())?;
        e(loaded.save(&b))?;
        ok &= loaded.to_flat() == model.to_flat() && same_files(&a, &b, &[".manifest", ".bin"])?;
    }

    let mut rng = SeededRng::new(9);
    let mut spec = KernelSpec::new(5, LatentKind::SymmetricFactor);
    spec.rank = 2;
    spec.untied = true;
    let layer = init_params::<f64>(&mut rng, &LayerDims::new(6, 3, vec![spec, KernelSpec::new(4, LatentKind::Identity)]), InitScheme::KaimingUniform)
        .map_err(|e| e.to_string())?;
    e(save_layer(&path("la"), &layer))?;
    let loaded = load_layer::<f64>(&path("la")).map_err(|e| e.to_string())?;
    e(save_layer(&path("lb"), &loaded))?;
    ok &= loaded == layer && same_files(&path("la"), &path("lb"), &[".manifest", ".bin"])?;

    let data = gen_grid_beacon::<f64>(4, &BeaconSpec::new(3, 5, 7, 3), 0..12).map_err(|e| e.to_string())?;
    e(save_dataset(&path("da"), &data))?;
    let loaded = load_dataset::<f64>(&path("da")).map_err(|e| e.to_string())?;
    e(save_dataset(&path("db"), &loaded))?;
    ok &= same_files(&path("da"), &path("db"), &[".manifest", ".features.bin", ".labels.bin"])?;

    check(ok, "save -> load -> save bit-identical for all model variants, a mixed layer and a dataset".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("low-rank equivalence", equivalence),
        ("dense oracle", dense_oracle),
        ("identity bridge", identity_bridge),
        ("gradients", gradients),
        ("complexity scaling", scaling),
        ("speedup and counts", speed_and_counts),
        ("end-to-end learning", learning),
        ("determinism", determinism),
        ("serialization", round_trip),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
