//! Labeled sample collections and their train/validation/test partition.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, ByteStream, ImageRecord, ImageStore, RenderOptions};
use crate::numerics::seeded_rng;

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path as written in the manifest; doubles as the sample id.
    pub path: String,
    pub label: String,
}

/// `path,label` CSV. Relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::DuplicatePath(e.path.clone()));
            }
        }
        Ok(Manifest {
            base_dir: base_dir.into(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
            return Err(Error::Malformed {
                offset: 0,
                message: format!("manifest header must be `path,label`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let entries = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(base, entries)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Distinct labels in byte-lexicographic order.
    pub fn label_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Drop entries whose file is smaller than `min_kb * 1024` bytes. Files
/// whose size cannot be read are kept so that ingestion reports them.
pub fn filter_min_size(manifest: &Manifest, min_kb: f64) -> Manifest {
    let min_bytes = min_kb * 1024.0;
    let entries = manifest
        .entries
        .iter()
        .filter(|e| match std::fs::metadata(manifest.resolve(e)) {
            Ok(meta) => meta.len() as f64 >= min_bytes,
            Err(_) => true,
        })
        .cloned()
        .collect();
    Manifest {
        base_dir: manifest.base_dir.clone(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub label: usize,
}

/// Samples with label indices; sample `i` corresponds to record `i` of the
/// image store(s) produced alongside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub label_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn new(label_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if s.label >= label_names.len() {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    n_classes: label_names.len(),
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicatePath(s.id.clone()));
            }
        }
        Ok(Corpus {
            label_names,
            samples,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Label of each id, in the given order.
    pub fn labels_for(&self, ids: &[String]) -> Result<Vec<usize>> {
        let index = self.index();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.samples[i].label)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown sample id {id}")))
            })
            .collect()
    }

    /// Label table stored next to a `.mimg` file.
    pub fn sidecar_path(store: &Path) -> PathBuf {
        let mut s = store.as_os_str().to_owned();
        s.push(".corpus.json");
        PathBuf::from(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let c: Corpus = serde_json::from_slice(&raw)?;
        Corpus::new(c.label_names, c.samples)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub store: ImageStore,
    /// 28x28 twin store, present when `RenderOptions::small` is set.
    pub small_store: Option<ImageStore>,
    pub skipped: Vec<Skipped>,
}

/// Read and render every manifest entry. Unreadable or empty files are
/// skipped and reported; record order follows the manifest.
pub fn ingest(manifest: &Manifest, opts: RenderOptions) -> Result<Ingested> {
    if opts.side == 0 {
        return Err(Error::InvalidArgument("image side must be >= 1".into()));
    }
    let label_names = manifest.label_names();
    let label_index: HashMap<&str, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let rendered: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let path = manifest.resolve(e);
            let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
            imaging::render(&ByteStream::new(e.path.clone(), bytes), opts)
        })
        .collect();

    let mut samples = Vec::new();
    let mut store = ImageStore::default();
    let mut small_store = opts.small.then(ImageStore::default);
    let mut skipped = Vec::new();
    for (entry, out) in manifest.entries.iter().zip(rendered) {
        match out {
            Ok(r) => {
                store.records.push(ImageRecord::from_square(&entry.path, &r.image)?);
                if let (Some(s), Some(img)) = (small_store.as_mut(), r.small.as_ref()) {
                    s.records.push(ImageRecord::from_square(&entry.path, img)?);
                }
                samples.push(Sample {
                    id: entry.path.clone(),
                    label: label_index[entry.label.as_str()],
                });
            }
            Err(err) => skipped.push(Skipped {
                path: entry.path.clone(),
                reason: err.to_string(),
            }),
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Ingested {
        corpus: Corpus::new(label_names, samples)?,
        store,
        small_store,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" | "validation" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            _ => Err(Error::InvalidArgument(format!("unknown subset {s:?}"))),
        }
    }
}

impl SplitAssignment {
    pub fn ids(&self, subset: Subset) -> &[String] {
        match subset {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }
}

/// Bucket sizes for one class: largest-remainder apportionment of
/// `ratios * n`, leftover units going to the largest fractional parts
/// (train first on ties). Each bucket lands within one sample of its
/// exact share.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>().min(n);
    for &b in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[b] += 1;
        left -= 1;
    }
    counts
}

/// Stratified, seeded split. Classes are shuffled independently (in class
/// index order, from one generator) and each is cut into train/val/test.
pub fn split(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be nonnegative and sum to 1"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); corpus.n_classes()];
    for (i, s) in corpus.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::DegenerateClass(corpus.label_names[c].clone()));
    }

    let mut rng = seeded_rng(seed);
    let mut bucket_of = vec![0u8; corpus.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = apportion(members.len(), &ratios);
        for (pos, &i) in members.iter().enumerate() {
            bucket_of[i] = if pos < n_train {
                0
            } else if pos < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    let mut out = SplitAssignment {
        seed,
        ratios,
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for (s, b) in corpus.samples.iter().zip(bucket_of) {
        match b {
            0 => out.train.push(s.id.clone()),
            1 => out.val.push(s.id.clone()),
            _ => out.test.push(s.id.clone()),
        }
    }
    Ok(out)
}
