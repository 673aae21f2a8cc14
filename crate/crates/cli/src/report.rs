//! CSV plumbing, shape-flag resolution and the log-log slope fit.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use latentgnn::affinity::DenseVariant;

use crate::args::ShapeArgs;
use crate::{usage, CliResult};

/// `v<crate version>`, plus `-<describe>` when `LATENTGNN_GIT_DESCRIBE` was set at build time.
pub fn version_string() -> String {
    let mut v = format!("v{}", env!("CARGO_PKG_VERSION"));
    if let Some(d) = option_env!("LATENTGNN_GIT_DESCRIBE") {
        v.push('-');
        v.push_str(d);
    }
    v
}

/// `# latentgnn <version> <command> k=v ...`
pub fn config_comment(command: &str, fields: &[(&str, String)]) -> String {
    let mut s = format!("# latentgnn {} {command}", version_string());
    for (k, v) in fields {
        let _ = write!(s, " {k}={v}");
    }
    s.push('\n');
    s
}

pub fn join<T: ToString>(items: &[T], sep: &str) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

/// Sends the CSV to `out` or stdout and the summary to the other stream.
pub fn emit(out: Option<&Path>, csv: &str, summary: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            std::fs::write(path, csv)?;
            print!("{summary}");
        }
        None => {
            std::io::stdout().write_all(csv.as_bytes())?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

/// Lines of a CSV that are compared for reproducibility: everything except
/// `#` comments, with the named columns dropped.
pub fn comparable_body(csv: &str, ignore: &[&str]) -> Vec<String> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let Some(header) = lines.next() else { return Vec::new() };
    let keep: Vec<bool> = header.split(',').map(|h| !ignore.contains(&h)).collect();
    let project = |l: &str| {
        l.split(',')
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(v, _)| v)
            .collect::<Vec<_>>()
            .join(",")
    };
    std::iter::once(project(header)).chain(lines.map(project)).collect()
}

pub fn median(mut v: Vec<u128>) -> u128 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Least-squares slope of `ln t` against `ln n`, leaving out the smallest `n`.
/// `None` with fewer than two remaining points.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    let min_n = points.iter().map(|p| p.0).min()?;
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.0 != min_n && p.1 > 0.0)
        .map(|&(n, t)| ((n as f64).ln(), t.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Resolved layer shape flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub c: usize,
    pub cr: usize,
    pub dims: Vec<usize>,
    pub affinity: DenseVariant,
}

impl Shape {
    pub fn resolve(a: &ShapeArgs, default_c: usize, default_d: usize) -> CliResult<Shape> {
        let c = a.c.unwrap_or(default_c);
        let cr = a.cr.unwrap_or_else(|| latentgnn::layer::default_reduced_channels(c));
        let dims = resolve_dims(&a.d, a.kernels, default_d)?;
        let Some(affinity) = DenseVariant::parse(&a.affinity) else {
            return usage(format!("--affinity must be sim or lap, got `{}`", a.affinity));
        };
        if c == 0 || cr == 0 {
            return usage("--c and --cr must be positive");
        }
        Ok(Shape { c, cr, dims, affinity })
    }

    pub fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("c", self.c.to_string()),
            ("c_r", self.cr.to_string()),
            ("d", join(&self.dims, ";")),
            ("affinity", self.affinity.name().to_string()),
        ]
    }
}

/// `--d` list combined with `--kernels`.
pub fn resolve_dims(d: &[usize], kernels: Option<usize>, default_d: usize) -> CliResult<Vec<usize>> {
    let base = if d.is_empty() { vec![default_d] } else { d.to_vec() };
    let dims = match kernels {
        None => base,
        Some(0) => return usage("--kernels must be positive"),
        Some(k) if base.len() == 1 => vec![base[0]; k],
        Some(k) if base.len() == k => base,
        Some(k) => return usage(format!("--kernels {k} does not match {} --d values", base.len())),
    };
    if dims.contains(&0) {
        return usage("--d values must be positive");
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(usize, f64)> = [64, 128, 256, 512].iter().map(|&n| (n, 3.0 * (n as f64).powf(1.5))).collect();
        assert!((loglog_slope(&pts).unwrap() - 1.5).abs() < 1e-12);
        // the smallest point is ignored
        let mut noisy = pts.clone();
        noisy[0].1 = 1e9;
        assert!((loglog_slope(&noisy).unwrap() - 1.5).abs() < 1e-12);
        assert!(loglog_slope(&pts[..2]).is_none());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![5, 1, 3]), 3);
        assert_eq!(median(vec![4, 1, 3, 2]), 2);
    }

    #[test]
    fn dims_resolution() {
        assert_eq!(resolve_dims(&[], None, 7).unwrap(), vec![7]);
        assert_eq!(resolve_dims(&[4], Some(3), 7).unwrap(), vec![4, 4, 4]);
        assert_eq!(resolve_dims(&[4, 5], Some(2), 7).unwrap(), vec![4, 5]);
        assert!(resolve_dims(&[4, 5], Some(3), 7).is_err());
        assert!(resolve_dims(&[0], None, 7).is_err());
    }

    #[test]
    fn comparable_body_drops_comments_and_columns() {
        let csv = "# run at noon\na,time,b\n1,99,2\n3,98,4\n";
        assert_eq!(comparable_body(csv, &["time"]), vec!["a,b", "1,2", "3,4"]);
    }
}
