//! Seeded synthetic corpus: byte files whose rendered images carry one
//! large-scale texture per family, plus noisy class-mean embeddings.
//!
//! Families (laid out on the row width the renderer will use, so the
//! pattern survives rendering and downscaling):
//!
//! * `bands_h`: horizontal stripes,
//! * `bands_v`: vertical stripes,
//! * `checker`: a block checkerboard,
//! * `ramp`: a smooth top-to-bottom gradient.
//!
//! Stripe counts, intensity levels and phase vary per file; every byte
//! gets additive noise and a small fraction are replaced by random bytes.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::imaging::width_for_size;
use crate::numerics::seeded_rng;
use crate::transfer::EmbeddingSet;

pub const FAMILIES: [&str; 4] = ["bands_h", "bands_v", "checker", "ramp"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub per_family: usize,
    pub min_bytes: usize,
    pub max_bytes: usize,
    /// Half-width of the uniform additive byte noise.
    pub noise: u8,
    /// Fraction of bytes replaced by uniform random bytes.
    pub salt: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            per_family: 200,
            min_bytes: 6 * 1024,
            max_bytes: 48 * 1024,
            noise: 40,
            salt: 0.05,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFile {
    /// `<family>/<family>_<nnn>.bin`
    pub path: String,
    pub family: usize,
    pub bytes: Vec<u8>,
}

fn texture(family: usize, row: usize, col: usize, h: usize, w: usize, p: &FileShape) -> f64 {
    let fr = row as f64 / h as f64;
    let fc = col as f64 / w as f64;
    let stripe = |f: f64| ((f * p.count as f64 + p.phase).floor() as i64).rem_euclid(2) == 0;
    match family {
        0 => {
            if stripe(fr) {
                p.hi
            } else {
                p.lo
            }
        }
        1 => {
            if stripe(fc) {
                p.hi
            } else {
                p.lo
            }
        }
        2 => {
            let half = (p.count / 2).max(2) as f64;
            let a = ((fr * half + p.phase).floor() as i64 + (fc * half).floor() as i64).rem_euclid(2) == 0;
            if a {
                p.hi
            } else {
                p.lo
            }
        }
        _ => p.lo + (p.hi - p.lo) * fr,
    }
}

struct FileShape {
    count: usize,
    phase: f64,
    lo: f64,
    hi: f64,
}

/// Generate one file's bytes.
pub fn synth_bytes(family: usize, len: usize, params: &SynthParams, rng: &mut impl Rng) -> Vec<u8> {
    let shape = FileShape {
        count: rng.random_range(6..=10),
        phase: rng.random_range(0.0..1.0),
        lo: rng.random_range(10.0..70.0),
        hi: rng.random_range(170.0..245.0),
    };
    let w = width_for_size(len as u64);
    let h = len.div_ceil(w);
    let noise = params.noise as f64;
    (0..len)
        .map(|i| {
            if rng.random_bool(params.salt) {
                return rng.random::<u8>();
            }
            let v = texture(family, i / w, i % w, h, w, &shape) + rng.random_range(-noise..=noise);
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// All files, family by family, from one seeded generator.
pub fn synth_corpus(params: &SynthParams) -> Result<Vec<SynthFile>> {
    if params.min_bytes == 0 || params.min_bytes > params.max_bytes || !(0.0..=1.0).contains(&params.salt) {
        return Err(Error::InvalidArgument(format!("bad synthetic corpus parameters {params:?}")));
    }
    let mut rng = seeded_rng(params.seed);
    let mut out = Vec::with_capacity(FAMILIES.len() * params.per_family);
    for (f, name) in FAMILIES.iter().enumerate() {
        for i in 0..params.per_family {
            let len = rng.random_range(params.min_bytes..=params.max_bytes);
            out.push(SynthFile {
                path: format!("{name}/{name}_{i:03}.bin"),
                family: f,
                bytes: synth_bytes(f, len, params, &mut rng),
            });
        }
    }
    Ok(out)
}

/// Write the files under `dir` plus `dir/manifest.csv`; returns the manifest.
pub fn write_corpus(dir: &Path, files: &[SynthFile]) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let path = dir.join(&f.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, &f.bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            path: f.path.clone(),
            label: FAMILIES[f.family].to_string(),
        });
    }
    let manifest = Manifest::new(dir, entries)?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Per-class mean vectors drawn from N(0, 1), one noisy copy per sample
/// with isotropic N(0, sigma^2) noise. `samples` pairs ids with class
/// indices.
pub fn class_mean_embeddings(
    samples: &[(String, usize)],
    n_classes: usize,
    dim: usize,
    sigma: f64,
    seed: u64,
) -> Result<EmbeddingSet> {
    let mut rng = seeded_rng(seed);
    let means: Vec<Vec<f64>> = (0..n_classes).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let mut ids = Vec::with_capacity(samples.len());
    let mut vectors = Vec::with_capacity(samples.len() * dim);
    for (id, c) in samples {
        let mean = means
            .get(*c)
            .ok_or(Error::LabelOutOfRange { label: *c, n_classes })?;
        ids.push(id.clone());
        vectors.extend(mean.iter().map(|m| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (m + sigma * z) as f32
        }));
    }
    EmbeddingSet::new("synthetic-class-means", dim, ids, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{render, ByteStream, RenderOptions};

    #[test]
    fn deterministic_and_sized() {
        let p = SynthParams { per_family: 3, ..Default::default() };
        let a = synth_corpus(&p).unwrap();
        assert_eq!(a, synth_corpus(&p).unwrap());
        assert_eq!(a.len(), 12);
        assert!(a.iter().all(|f| (p.min_bytes..=p.max_bytes).contains(&f.bytes.len())));
        assert_ne!(a, synth_corpus(&SynthParams { seed: 8, ..p }).unwrap());
    }

    /// Row and column variance of the 28x28 rendering separate the
    /// stripe orientations.
    #[test]
    fn textures_survive_downscaling() {
        let p = SynthParams { per_family: 4, ..Default::default() };
        for f in synth_corpus(&p).unwrap() {
            let small = render(&ByteStream::new("x", f.bytes), RenderOptions { side: 28, small: false }).unwrap().image;
            let m = 28;
            let row_means: Vec<f64> = (0..m).map(|r| (0..m).map(|c| small.get(r, c) as f64).sum::<f64>() / m as f64).collect();
            let col_means: Vec<f64> = (0..m).map(|c| (0..m).map(|r| small.get(r, c) as f64).sum::<f64>() / m as f64).collect();
            let var = |v: &[f64]| {
                let mu = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64
            };
            let (vr, vc) = (var(&row_means), var(&col_means));
            match f.family {
                0 => assert!(vr > 4.0 * vc, "{} {vr} {vc}", f.path),
                1 => assert!(vc > 4.0 * vr, "{} {vr} {vc}", f.path),
                _ => {}
            }
        }
    }

    #[test]
    fn embeddings_cluster_by_class() {
        let samples: Vec<(String, usize)> = (0..40).map(|i| (format!("s{i}"), i % 4)).collect();
        let e = class_mean_embeddings(&samples, 4, 16, 0.2, 1).unwrap();
        assert_eq!(e.dim(), 16);
        let v0 = e.vector("s0").unwrap();
        let v4 = e.vector("s4").unwrap();
        let v1 = e.vector("s1").unwrap();
        let d = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>();
        assert!(d(v0, v4) < d(v0, v1));
        assert!(class_mean_embeddings(&[("a".into(), 5)], 4, 16, 0.2, 1).is_err());
    }
}
