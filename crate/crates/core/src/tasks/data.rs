//! Dataset generators.
//!
//! Sample `i` of a dataset with seed `s` is drawn from its own ChaCha8 stream
//! `(s, i)`, so any sample can be regenerated alone and generation order does
//! not matter.
//!
//! Grid beacon layout (`c ≥ K + 2` channels):
//!
//! | channel      | every node       | beacon node     |
//! |--------------|------------------|-----------------|
//! | 0            | 1.0              | 1.0             |
//! | 1            | 0.0              | 1.0             |
//! | 2 .. 2+K     | 0.0              | one-hot class   |
//! | 2+K .. c     | N(0, noise²)     | N(0, noise²)    |
//!
//! Point clusters layout (`c ≥ 4`): `x, y, z, 1.0`, then `N(0, 1)` noise.
//! Cluster `k` is an isotropic Gaussian around `(cos 2πk/K, sin 2πk/K, 0)`;
//! with the default spread neighbouring clusters overlap.

use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{decode_f64, decode_u32, encode_f64, encode_u32, with_suffix, Manifest, FORMAT_VERSION};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const BEACON_BIAS: usize = 0;
pub const BEACON_FLAG: usize = 1;
pub const BEACON_CLASS_OFFSET: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Beacon,
    Clusters,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Beacon => "beacon",
            TaskKind::Clusters => "clusters",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "beacon" => Some(TaskKind::Beacon),
            "clusters" => Some(TaskKind::Clusters),
            _ => None,
        }
    }
}

/// How a sample was built; enough to recompute its labels.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Beacon { position: usize, class: usize },
    Clusters {
        points: Matrix<f64>,
        membership: Vec<usize>,
        sizes: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// `N x c`.
    pub features: Matrix<T>,
    /// One label per node.
    pub targets: Vec<usize>,
    /// Absent for samples read back from disk.
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub task: TaskKind,
    pub seed: u64,
    pub nodes: usize,
    pub channels: usize,
    pub classes: usize,
    /// Stream index of the first sample.
    pub first_index: u64,
    pub samples: Vec<Sample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeaconSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub noise: f64,
}

impl BeaconSpec {
    pub fn new(height: usize, width: usize, channels: usize, classes: usize) -> Self {
        BeaconSpec {
            height,
            width,
            channels,
            classes,
            noise: 1.0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes() < 2 {
            return Err(Error::Config("beacon grid needs at least 2 nodes".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("beacon task needs at least 2 classes".into()));
        }
        if self.channels < self.classes + BEACON_CLASS_OFFSET {
            return Err(Error::Config(format!(
                "beacon task with {} classes needs at least {} channels",
                self.classes,
                self.classes + BEACON_CLASS_OFFSET
            )));
        }
        Ok(())
    }

    pub fn sample<T: Scalar>(&self, seed: u64, index: u64) -> Sample<T> {
        let mut rng = SeededRng::stream(seed, index);
        let n = self.nodes();
        let position = rng.below(n);
        let class = rng.below(self.classes);
        let noise_start = BEACON_CLASS_OFFSET + self.classes;
        let mut x = Matrix::zeros(n, self.channels);
        for i in 0..n {
            x[(i, BEACON_BIAS)] = T::one();
            for ch in noise_start..self.channels {
                x[(i, ch)] = T::lit(self.noise * rng.standard_normal());
            }
        }
        x[(position, BEACON_FLAG)] = T::one();
        x[(position, BEACON_CLASS_OFFSET + class)] = T::one();
        Sample {
            features: x,
            targets: vec![class; n],
            provenance: Some(Provenance::Beacon { position, class }),
        }
    }
}

/// Beacon samples `range` of the family `seed`.
pub fn gen_grid_beacon<T: Scalar>(seed: u64, spec: &BeaconSpec, range: Range<u64>) -> Result<Dataset<T>> {
    spec.validate()?;
    Ok(Dataset {
        task: TaskKind::Beacon,
        seed,
        nodes: spec.nodes(),
        channels: spec.channels,
        classes: spec.classes,
        first_index: range.start,
        samples: range.map(|i| spec.sample(seed, i)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterSpec {
    pub points: usize,
    pub classes: usize,
    pub channels: usize,
    /// Standard deviation of every cluster.
    pub spread: f64,
}

impl ClusterSpec {
    pub fn new(points: usize, classes: usize, channels: usize) -> Self {
        ClusterSpec {
            points,
            classes,
            channels,
            spread: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("cluster task needs at least 2 clusters".into()));
        }
        if self.points < 2 * self.classes {
            return Err(Error::Config(format!(
                "cluster task needs N >= 2K, got N = {} and K = {}",
                self.points, self.classes
            )));
        }
        if self.channels < 4 {
            return Err(Error::Config("cluster task needs at least 4 channels".into()));
        }
        Ok(())
    }

    fn sizes(&self, rng: &mut SeededRng) -> Vec<usize> {
        let k = self.classes;
        loop {
            let weights: Vec<f64> = (0..k).map(|_| rng.uniform(0.1, 1.0).powi(2)).collect();
            let total: f64 = weights.iter().sum();
            let mut sizes = vec![2usize; k];
            for _ in 0..self.points - 2 * k {
                let mut u = rng.uniform(0.0, total);
                let mut pick = k - 1;
                for (j, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = j;
                        break;
                    }
                    u -= w;
                }
                sizes[pick] += 1;
            }
            let max = *sizes.iter().max().expect("k >= 2");
            if sizes.iter().filter(|&&s| s == max).count() == 1 {
                return sizes;
            }
        }
    }

    pub fn sample<T: Scalar>(&self, seed: u64, index: u64) -> Sample<T> {
        let mut rng = SeededRng::stream(seed, index);
        let sizes = self.sizes(&mut rng);
        let largest = largest_cluster(&sizes);
        let mut membership: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
            .collect();
        rng.shuffle(&mut membership);
        let n = self.points;
        let mut points = Matrix::zeros(n, 3);
        let mut x = Matrix::zeros(n, self.channels);
        for (i, &k) in membership.iter().enumerate() {
            let angle = std::f64::consts::TAU * k as f64 / self.classes as f64;
            let center = [angle.cos(), angle.sin(), 0.0];
            for (axis, c) in center.iter().enumerate() {
                let v = c + self.spread * rng.standard_normal();
                points[(i, axis)] = v;
                x[(i, axis)] = T::lit(v);
            }
            x[(i, 3)] = T::one();
            for ch in 4..self.channels {
                x[(i, ch)] = T::lit(rng.standard_normal());
            }
        }
        Sample {
            features: x,
            targets: vec![largest; n],
            provenance: Some(Provenance::Clusters {
                points,
                membership,
                sizes,
            }),
        }
    }
}

/// Index of the (unique) largest cluster; ties go to the lowest index.
pub fn largest_cluster(sizes: &[usize]) -> usize {
    sizes
        .iter()
        .enumerate()
        .fold((0, 0), |best, (k, &s)| if s > best.1 { (k, s) } else { best })
        .0
}

pub fn gen_point_clusters<T: Scalar>(seed: u64, spec: &ClusterSpec, range: Range<u64>) -> Result<Dataset<T>> {
    spec.validate()?;
    Ok(Dataset {
        task: TaskKind::Clusters,
        seed,
        nodes: spec.points,
        channels: spec.channels,
        classes: spec.classes,
        first_index: range.start,
        samples: range.map(|i| spec.sample(seed, i)).collect(),
    })
}

/// Writes `<base>.manifest`, `<base>.features.bin` and `<base>.labels.bin`.
pub fn save_dataset<T: Scalar>(base: &Path, d: &Dataset<T>) -> Result<()> {
    let mut m = Manifest::new();
    m.push("format", "latentgnn-dataset");
    m.push("version", FORMAT_VERSION);
    m.push("task", d.task.name());
    m.push("seed", d.seed);
    m.push("first_index", d.first_index);
    m.push("count", d.samples.len());
    m.push("nodes", d.nodes);
    m.push("channels", d.channels);
    m.push("classes", d.classes);
    let mut features = Vec::with_capacity(d.samples.len() * d.nodes * d.channels * 8);
    let mut labels = Vec::with_capacity(d.samples.len() * d.nodes * 4);
    for s in &d.samples {
        features.extend(encode_f64(s.features.as_slice()));
        labels.extend(encode_u32(&s.targets)?);
    }
    std::fs::write(with_suffix(base, ".manifest"), m.render())?;
    std::fs::write(with_suffix(base, ".features.bin"), features)?;
    std::fs::write(with_suffix(base, ".labels.bin"), labels)?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(base: &Path) -> Result<Dataset<T>> {
    let m = Manifest::parse(&std::fs::read_to_string(with_suffix(base, ".manifest"))?)?;
    m.expect("format", "latentgnn-dataset")?;
    m.expect("version", &FORMAT_VERSION.to_string())?;
    let task_raw = m.get("task")?;
    let task = TaskKind::parse(task_raw).ok_or_else(|| Error::Format(format!("unknown task `{task_raw}`")))?;
    let count: usize = m.get_parsed("count")?;
    let nodes: usize = m.get_parsed("nodes")?;
    let channels: usize = m.get_parsed("channels")?;
    let features: Vec<T> = decode_f64(&std::fs::read(with_suffix(base, ".features.bin"))?)?;
    let labels = decode_u32(&std::fs::read(with_suffix(base, ".labels.bin"))?)?;
    if features.len() != count * nodes * channels || labels.len() != count * nodes {
        return Err(Error::Format("dataset blobs do not match manifest dimensions".into()));
    }
    let per = nodes * channels;
    let samples = (0..count)
        .map(|i| {
            Ok(Sample {
                features: Matrix::from_vec(nodes, channels, features[i * per..(i + 1) * per].to_vec())?,
                targets: labels[i * nodes..(i + 1) * nodes].to_vec(),
                provenance: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        task,
        seed: m.get_parsed("seed")?,
        nodes,
        channels,
        classes: m.get_parsed("classes")?,
        first_index: m.get_parsed("first_index")?,
        samples,
    })
}
