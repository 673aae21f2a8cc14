//! Cross-module properties over many seeded instances.

use latentgnn::affinity::{psi, DenseVariant, LatentAffinity, LatentKind};
use latentgnn::dense::{dense_forward, DenseNonLocalParams};
use latentgnn::layer::{forward_matrix_form, forward_stepwise, init_params, InitScheme, KernelSpec, LayerDims};
use latentgnn::tasks::{gen_grid_beacon, gen_point_clusters, BeaconSpec, ClusterSpec};
use latentgnn::{Activation, Matrix, SeededRng};

fn random_dims(rng: &mut SeededRng) -> LayerDims {
    let c = 1 + rng.below(16);
    let cr = 1 + rng.below(c);
    let kinds = LatentKind::ALL;
    let kernels = (0..1 + rng.below(3))
        .map(|_| {
            let mut k = KernelSpec::new(1 + rng.below(12), kinds[rng.below(kinds.len())]);
            k.rank = 1 + rng.below(k.dim);
            k.psi_activation = if rng.below(2) == 0 { Activation::Relu } else { Activation::Identity };
            k.untied = rng.below(4) == 0;
            k
        })
        .collect();
    let mut d = LayerDims::new(c, cr, kernels);
    d.activation = if rng.below(2) == 0 { Activation::Relu } else { Activation::Identity };
    d
}

#[test]
fn stepwise_equals_matrix_form_over_many_instances() {
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let mut rng = SeededRng::new(seed);
        let dims = random_dims(&mut rng);
        let mut p = init_params::<f64>(&mut rng, &dims, InitScheme::KaimingUniform).unwrap();
        p.lambda = rng.uniform(-2.0, 2.0);
        p.mixture.iter_mut().for_each(|w| *w = rng.uniform(-1.0, 1.0));
        let n = 1 + rng.below(64);
        let x: Matrix<f64> = rng.normal_matrix(n, dims.channels, 1.0);
        let a = forward_stepwise(&x, &p).unwrap().output;
        let b = forward_matrix_form(&x, &p).unwrap();
        worst = worst.max(a.max_abs_diff(&b).unwrap());
    }
    assert!(worst <= 1e-10, "worst difference {worst:e}");
}

#[test]
fn latent_layer_reproduces_the_dense_block_when_d_equals_n() {
    // Ψ = X_r (identity activation, θ = I) and F = I give Ψ F Ψᵀ = X_r X_rᵀ.
    for seed in 0..10 {
        let mut rng = SeededRng::new(seed);
        let (n, c) = (5 + rng.below(10), 6);
        let x: Matrix<f64> = rng.normal_matrix(n, c, 1.0);
        let mut spec = KernelSpec::new(c, LatentKind::Identity);
        spec.psi_activation = Activation::Identity;
        let mut p = init_params::<f64>(&mut rng, &LayerDims::new(c, c, vec![spec]), InitScheme::KaimingUniform).unwrap();
        p.w_in = Matrix::identity(c);
        p.w_out = Matrix::identity(c);
        p.kernels[0].psi.theta = Matrix::identity(c);
        p.kernels[0].latent = LatentAffinity::Identity { dim: c };
        p.mixture = vec![1.0];
        p.lambda = 0.75;
        let dense = DenseNonLocalParams {
            w_msg: p.w_msg.clone(),
            variant: DenseVariant::Sim,
            activation: p.activation,
            lambda: 0.75,
        };
        let psi_x = psi(&x, &p.kernels[0].psi).unwrap();
        assert_eq!(psi_x, x);
        let a = forward_stepwise(&x, &p).unwrap().output;
        let b = dense_forward(&x, &dense).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
    }
}

#[test]
fn any_sample_regenerates_bit_exactly() {
    let beacon = BeaconSpec::new(5, 7, 9, 4);
    let all = gen_grid_beacon::<f64>(99, &beacon, 0..40).unwrap();
    let clusters = ClusterSpec::new(30, 3, 6);
    let all_c = gen_point_clusters::<f64>(99, &clusters, 0..40).unwrap();
    for i in (0..40).rev() {
        assert_eq!(beacon.sample::<f64>(99, i), all.samples[i as usize]);
        assert_eq!(clusters.sample::<f64>(99, i), all_c.samples[i as usize]);
    }
}
