//! On-disk formats.
//!
//! Every artifact is a text manifest plus one or more raw little-endian blobs
//! next to it:
//!
//! * `<base>.manifest`: one `key=value` per line, in a fixed key order.
//! * `<base>.bin`: parameters as `f64` in canonical order (see
//!   [`LatentGnnParams::segments`]).
//! * datasets add `<base>.features.bin` (`f64`) and `<base>.labels.bin` (`u32`).
//!
//! Values are always widened to `f64` on disk, so `f32` parameters round-trip
//! exactly as well.

use std::fs;
use std::path::{Path, PathBuf};

use crate::affinity::{LatentAffinity, LatentKind, PsiParams};
use crate::error::{Error, Result};
use crate::layer::{KernelParams, LatentGnnParams};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Matrix};

pub const FORMAT_VERSION: u32 = 1;

/// Ordered `key=value` text.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("missing manifest key `{key}`")))
    }

    pub fn get_parsed<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key=value", lineno + 1)))?;
            m.push(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn expect(&self, key: &str, value: &str) -> Result<()> {
        let got = self.get(key)?;
        if got != value {
            return Err(Error::Format(format!("`{key}` is `{got}`, expected `{value}`")));
        }
        Ok(())
    }
}

pub fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn encode_f64<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
    }
    out
}

pub fn decode_f64<T: Scalar>(bytes: &[u8]) -> Result<Vec<T>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!("f64 blob length {} is not a multiple of 8", bytes.len())));
    }
    bytes
        .chunks_exact(8)
        .map(|c| {
            let v = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
            T::try_lit(v).ok_or_else(|| Error::Format(format!("value {v} does not fit {}", T::NAME)))
        })
        .collect()
}

pub fn encode_u32(values: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("label {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_u32(bytes: &[u8]) -> Result<Vec<usize>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!("u32 blob length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")) as usize)
        .collect())
}

/// Appends the manifest keys describing `p` under `prefix`.
pub fn describe_layer<T: Scalar>(m: &mut Manifest, prefix: &str, p: &LatentGnnParams<T>) {
    m.push(format!("{prefix}kind"), "latentgnn");
    m.push(format!("{prefix}channels"), p.channels());
    m.push(format!("{prefix}reduced"), p.reduced_channels());
    m.push(format!("{prefix}activation"), p.activation);
    m.push(format!("{prefix}kernels"), p.kernels.len());
    m.push(format!("{prefix}mixture_len"), p.mixture.len());
    for (i, k) in p.kernels.iter().enumerate() {
        let s = k.spec();
        m.push(format!("{prefix}kernel{i}.dim"), s.dim);
        m.push(format!("{prefix}kernel{i}.latent"), s.latent.name());
        m.push(format!("{prefix}kernel{i}.rank"), s.rank);
        m.push(format!("{prefix}kernel{i}.psi_activation"), s.psi_activation);
        m.push(format!("{prefix}kernel{i}.untied"), s.untied);
    }
}

fn parse_activation(m: &Manifest, key: &str) -> Result<Activation> {
    let raw = m.get(key)?;
    Activation::parse(raw).ok_or_else(|| Error::Format(format!("unknown activation `{raw}`")))
}

/// Rebuilds a zero-valued layer with the shape recorded under `prefix`.
pub fn layer_skeleton<T: Scalar>(m: &Manifest, prefix: &str) -> Result<LatentGnnParams<T>> {
    m.expect(&format!("{prefix}kind"), "latentgnn")?;
    let c: usize = m.get_parsed(&format!("{prefix}channels"))?;
    let cr: usize = m.get_parsed(&format!("{prefix}reduced"))?;
    let k: usize = m.get_parsed(&format!("{prefix}kernels"))?;
    let mixture_len: usize = m.get_parsed(&format!("{prefix}mixture_len"))?;
    if mixture_len != k {
        return Err(Error::Format(format!("mixture_len {mixture_len} != kernels {k}")));
    }
    let mut kernels = Vec::with_capacity(k);
    for i in 0..k {
        let d: usize = m.get_parsed(&format!("{prefix}kernel{i}.dim"))?;
        let rank: usize = m.get_parsed(&format!("{prefix}kernel{i}.rank"))?;
        let kind_raw = m.get(&format!("{prefix}kernel{i}.latent"))?;
        let kind = LatentKind::parse(kind_raw)
            .ok_or_else(|| Error::Format(format!("unknown latent kind `{kind_raw}`")))?;
        let act = parse_activation(m, &format!("{prefix}kernel{i}.psi_activation"))?;
        let untied: bool = m.get_parsed(&format!("{prefix}kernel{i}.untied"))?;
        let latent = match kind {
            LatentKind::Identity => LatentAffinity::Identity { dim: d },
            LatentKind::Free => LatentAffinity::Free(Matrix::zeros(d, d)),
            LatentKind::SymmetricFactor => LatentAffinity::SymmetricFactor(Matrix::zeros(d, rank)),
        };
        kernels.push(KernelParams {
            psi: PsiParams::new(Matrix::zeros(cr, d), act),
            psi_back: untied.then(|| PsiParams::new(Matrix::zeros(cr, d), act)),
            latent,
        });
    }
    Ok(LatentGnnParams {
        w_in: Matrix::zeros(c, cr),
        kernels,
        w_msg: Matrix::zeros(cr, cr),
        mixture: vec![T::zero(); k],
        w_out: Matrix::zeros(cr, c),
        lambda: T::zero(),
        activation: parse_activation(m, &format!("{prefix}activation"))?,
    })
}

/// Writes `<base>.manifest` and `<base>.bin`.
pub fn write_artifact(base: &Path, manifest: &Manifest, blob: &[u8]) -> Result<()> {
    fs::write(with_suffix(base, ".manifest"), manifest.render())?;
    fs::write(with_suffix(base, ".bin"), blob)?;
    Ok(())
}

pub fn read_artifact(base: &Path) -> Result<(Manifest, Vec<u8>)> {
    let text = fs::read_to_string(with_suffix(base, ".manifest"))?;
    let blob = fs::read(with_suffix(base, ".bin"))?;
    Ok((Manifest::parse(&text)?, blob))
}

pub fn layer_manifest<T: Scalar>(p: &LatentGnnParams<T>) -> Manifest {
    let mut m = Manifest::new();
    m.push("format", "latentgnn-layer");
    m.push("version", FORMAT_VERSION);
    describe_layer(&mut m, "", p);
    m.push("params", p.to_flat().len());
    m
}

pub fn save_layer<T: Scalar>(base: &Path, p: &LatentGnnParams<T>) -> Result<()> {
    write_artifact(base, &layer_manifest(p), &encode_f64(&p.to_flat()))
}

pub fn load_layer<T: Scalar>(base: &Path) -> Result<LatentGnnParams<T>> {
    let (m, blob) = read_artifact(base)?;
    layer_from_parts(&m, &blob)
}

pub fn layer_from_parts<T: Scalar>(m: &Manifest, blob: &[u8]) -> Result<LatentGnnParams<T>> {
    m.expect("format", "latentgnn-layer")?;
    m.expect("version", &FORMAT_VERSION.to_string())?;
    let mut p = layer_skeleton(m, "")?;
    let values = decode_f64::<T>(blob)?;
    let expected: usize = m.get_parsed("params")?;
    if values.len() != expected {
        return Err(Error::Format(format!("blob holds {} values, manifest says {expected}", values.len())));
    }
    p.set_flat(&values)?;
    Ok(p)
}
