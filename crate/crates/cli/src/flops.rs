//! Analytic operation and parameter counts.

use latentgnn::affinity::LatentKind;
use latentgnn::dense::dense_flops;
use latentgnn::layer::{flops, KernelSpec, LayerDims, ParamCount};

use crate::args::FlopsArgs;
use crate::report::{config_comment, emit, join, Shape};
use crate::{usage, CliResult};

pub const CSV_HEADER: &str =
    "n,c,c_r,d,kernels,latentgnn_flops,dense_flops,ratio,latentgnn_params,latentgnn_core_params,dense_params";

#[derive(Clone, Debug, PartialEq)]
pub struct FlopsRow {
    pub n: usize,
    pub latent_flops: u64,
    pub dense_flops: u64,
    pub params: ParamCount,
    pub dense_params: usize,
}

impl FlopsRow {
    pub fn ratio(&self) -> f64 {
        self.dense_flops as f64 / self.latent_flops as f64
    }
}

pub fn layer_dims(shape: &Shape, latent: LatentKind) -> LayerDims {
    LayerDims::new(
        shape.c,
        shape.cr,
        shape.dims.iter().map(|&d| KernelSpec::new(d, latent)).collect(),
    )
}

pub fn flops_row(n: usize, shape: &Shape, latent: LatentKind) -> CliResult<FlopsRow> {
    let dims = layer_dims(shape, latent);
    Ok(FlopsRow {
        n,
        latent_flops: flops(&dims.shape(n))?,
        dense_flops: dense_flops(n, shape.c, shape.affinity)?,
        params: dims.parameter_count(),
        dense_params: shape.c * shape.c + 1,
    })
}

pub fn cmd_flops(a: &FlopsArgs) -> CliResult<Vec<FlopsRow>> {
    let shape = Shape::resolve(&a.shape, 1024, 100)?;
    let Some(latent) = LatentKind::parse(&a.latent) else {
        return usage(format!("--latent must be identity, free or symmetric-factor, got `{}`", a.latent));
    };
    if a.n.is_empty() || a.n.contains(&0) {
        return usage("--n needs positive sizes");
    }
    let mut csv = config_comment(
        "flops",
        &[vec![("n", join(&a.n, ";")), ("latent", latent.name().to_string())], shape.fields()].concat(),
    );
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    let mut rows = Vec::with_capacity(a.n.len());
    for &n in &a.n {
        let r = flops_row(n, &shape, latent)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{},{},{}\n",
            n,
            shape.c,
            shape.cr,
            join(&shape.dims, ";"),
            shape.dims.len(),
            r.latent_flops,
            r.dense_flops,
            r.ratio(),
            r.params.total,
            r.params.message_passing,
            r.dense_params
        ));
        rows.push(r);
    }
    let p = rows[0].params;
    let summary = format!(
        "latentgnn parameters: {} total, {} in message passing ({:.3}M); dense: {}\n",
        p.total,
        p.message_passing,
        p.message_passing as f64 / 1e6,
        rows[0].dense_params
    );
    emit(a.out.as_deref(), &csv, &summary)?;
    Ok(rows)
}
