//! Linear head over frozen-backbone embeddings.
//!
//! The backbone runs outside this crate; its pooled features arrive as a
//! `.memb` file:
//!
//! ```text
//! "MEMB"  u8 version=1  u32 n  u32 d  u16 tag_len, backbone tag (UTF-8)
//! n records: u16 id_len, id (UTF-8), d f32
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::path::Path;

use crate::baselines::softmax::{Softmax, SoftmaxHyper};
use crate::baselines::{accuracy, require_two_classes, Classifier};
use crate::codec::{self, Reader};
use crate::corpus::{Corpus, SplitAssignment, Subset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::training::{select_epoch, TrainRecord};

const MAGIC: &[u8; 4] = b"MEMB";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub backbone_tag: String,
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    /// `vectors` is row-major, `ids.len() x dim`.
    pub fn new(backbone_tag: impl Into<String>, dim: usize, ids: Vec<String>, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimMismatch("embedding dimension must be positive".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::DimMismatch(format!(
                "{} values for {} ids of dimension {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite embedding value for id {}",
                ids[i / dim]
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate embedding id {id}")));
            }
        }
        Ok(EmbeddingSet {
            backbone_tag: backbone_tag.into(),
            dim,
            ids,
            vectors,
            index,
        })
    }

    /// Embeddings from the rows of a matrix (values are stored as f32).
    pub fn from_matrix(backbone_tag: impl Into<String>, ids: Vec<String>, x: &Matrix) -> Result<Self> {
        if ids.len() != x.rows() {
            return Err(Error::DimMismatch(format!("{} ids for {} rows", ids.len(), x.rows())));
        }
        EmbeddingSet::new(backbone_tag, x.cols(), ids, x.data().iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Stack the vectors for `ids` in order. Every unresolved id is listed
    /// in the error.
    pub fn matrix_for(&self, ids: &[String]) -> Result<Matrix> {
        let missing: Vec<String> = ids.iter().filter(|id| !self.index.contains_key(*id)).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::MissingEmbedding(missing));
        }
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            data.extend(self.vector(id).unwrap().iter().map(|&v| v as f64));
        }
        Matrix::new(ids.len(), self.dim, data)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.vectors.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&u32::try_from(self.len()).map_err(|_| too_large("count"))?.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.dim).map_err(|_| too_large("dimension"))?.to_le_bytes());
        codec::put_short_str(&mut out, &self.backbone_tag)?;
        for (i, id) in self.ids.iter().enumerate() {
            codec::put_short_str(&mut out, id)?;
            codec::put_f32s(&mut out, &self.vectors[i * self.dim..(i + 1) * self.dim]);
        }
        Ok(out)
    }

    /// Parse a `.memb` image.
    ///
    /// A record stream that does not end exactly at end of file is
    /// diagnosed: if it would end exactly under some other dimension, or
    /// bytes are left over, the header's length fields are wrong
    /// (`DimMismatch`); otherwise the payload was cut short (`TruncatedFile`).
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        rd.magic(MAGIC)?;
        let at = rd.offset();
        let version = rd.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { version, offset: at });
        }
        let n = rd.u32()? as usize;
        let d = rd.u32()? as usize;
        let tag = rd.short_str()?;
        if d == 0 {
            return Err(Error::DimMismatch(format!("declared dimension 0 at byte {}", at + 5)));
        }
        let body = rd.offset();
        match scan_records(bytes, body, n, d) {
            Ok(end) if end == bytes.len() => {}
            Ok(end) => {
                return Err(Error::DimMismatch(format!(
                    "{} bytes left after {n} records of dimension {d} (byte {end})",
                    bytes.len() - end
                )))
            }
            Err(truncated) => {
                let max_d = (bytes.len() - body) / 4 / n.max(1);
                if let Some(alt) = (1..=max_d).find(|&a| a != d && scan_records(bytes, body, n, a).ok() == Some(bytes.len())) {
                    return Err(Error::DimMismatch(format!(
                        "declared dimension {d} does not fit the payload; it parses as dimension {alt}"
                    )));
                }
                return Err(truncated);
            }
        }
        let mut ids = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * d);
        for _ in 0..n {
            ids.push(rd.short_str()?);
            let at = rd.offset();
            let v = rd.f32_vec(d)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Malformed { offset: at, message: "non-finite embedding value".into() });
            }
            vectors.extend(v);
        }
        EmbeddingSet::new(tag, d, ids, vectors).map_err(|e| Error::Malformed { offset: body, message: e.to_string() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        codec::write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&codec::read_file(path)?)
    }
}

fn too_large(what: &str) -> Error {
    Error::InvalidArgument(format!("embedding {what} does not fit in u32"))
}

/// End offset of `n` records of dimension `d` starting at `start`,
/// reading only the id length prefixes.
fn scan_records(bytes: &[u8], start: usize, n: usize, d: usize) -> Result<usize> {
    let mut rd = Reader::new(bytes);
    rd.take(start)?;
    for _ in 0..n {
        let len = rd.u16()? as usize;
        rd.take(len + 4 * d)?;
    }
    Ok(rd.offset())
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    EmbeddingSet::read(path)
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    set.write(path)
}

#[derive(Debug, Clone)]
pub struct HeadOutcome {
    /// Checkpoint from `selected_epoch`.
    pub model: Softmax,
    pub history: Vec<TrainRecord>,
    pub selected_epoch: usize,
}

/// Retrain the final dense layer: softmax regression on the training
/// embeddings, keeping the epoch with the best validation accuracy.
pub fn train_head(
    embeddings: &EmbeddingSet,
    corpus: &Corpus,
    split: &SplitAssignment,
    hyper: SoftmaxHyper,
) -> Result<HeadOutcome> {
    let train_ids = split.ids(Subset::Train);
    let val_ids = split.ids(Subset::Val);
    let mut missing: Vec<String> = train_ids
        .iter()
        .chain(val_ids)
        .filter(|id| embeddings.vector(id).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingEmbedding(missing));
    }
    let x = embeddings.matrix_for(train_ids)?;
    let vx = embeddings.matrix_for(val_ids)?;
    let y = corpus.labels_for(train_ids)?;
    let vy = corpus.labels_for(val_ids)?;
    train_head_on(&x, &y, &vx, &vy, corpus.n_classes(), hyper)
}

/// [`train_head`] on already-assembled matrices.
pub fn train_head_on(
    x: &Matrix,
    y: &[usize],
    val_x: &Matrix,
    val_y: &[usize],
    n_classes: usize,
    hyper: SoftmaxHyper,
) -> Result<HeadOutcome> {
    if !y.is_empty() {
        require_two_classes(y)?;
    }
    if val_y.is_empty() {
        return Err(Error::InvalidArgument("epoch selection needs a nonempty validation subset".into()));
    }
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, Softmax)> = None;
    let mut failure = None;
    let last = Softmax::fit_with(x, y, n_classes, hyper, |outcome, model| {
        let scored = model
            .predict(x)
            .and_then(|p| Ok((accuracy(&p, y), accuracy(&model.predict(val_x)?, val_y))));
        match scored {
            Ok((train_accuracy, val_accuracy)) => {
                history.push(TrainRecord {
                    epoch: outcome.epoch,
                    loss: outcome.loss,
                    train_accuracy,
                    val_accuracy,
                });
                if best.as_ref().is_none_or(|(a, _)| val_accuracy > *a) {
                    best = Some((val_accuracy, model.clone()));
                }
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    match select_epoch(&history) {
        Some(selected_epoch) => Ok(HeadOutcome {
            model: best.unwrap().1,
            history,
            selected_epoch,
        }),
        None => Err(Error::InvalidArgument(format!(
            "head training ran zero epochs (final model has {} classes)",
            last.n_classes()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(n: usize, d: usize) -> EmbeddingSet {
        let ids = (0..n).map(|i| format!("bin/{i}.exe")).collect();
        let v = (0..n * d).map(|i| i as f32 * 0.25 - 1.0).collect();
        EmbeddingSet::new("backbone-x", d, ids, v).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = set(2, 3);
        let bytes = s.encode().unwrap();
        let back = EmbeddingSet::decode(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.encode().unwrap(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.memb");
        save_embeddings(&s, &p).unwrap();
        assert_eq!(load_embeddings(&p).unwrap(), s);
    }

    #[test]
    fn header_layout() {
        let b = set(2, 3).encode().unwrap();
        assert_eq!(&b[..5], b"MEMB\x01");
        assert_eq!(&b[5..9], &2u32.to_le_bytes());
        assert_eq!(&b[9..13], &3u32.to_le_bytes());
        assert_eq!(&b[13..15], &10u16.to_le_bytes());
        assert_eq!(b.len(), 15 + 10 + 2 * (2 + 9 + 12));
    }

    #[test]
    fn truncated_payload() {
        let b = set(2, 3).encode().unwrap();
        for cut in [b.len() - 1, b.len() - 7, 30] {
            assert!(matches!(EmbeddingSet::decode(&b[..cut]), Err(Error::TruncatedFile { .. })), "cut {cut}");
        }
    }

    #[test]
    fn corrupted_dimension_field() {
        let mut b = set(2, 3).encode().unwrap();
        b[9] = 4;
        assert!(matches!(EmbeddingSet::decode(&b), Err(Error::DimMismatch(_))));
        b[9] = 2;
        assert!(matches!(EmbeddingSet::decode(&b), Err(Error::DimMismatch(_))));
        b[9] = 0;
        assert!(matches!(EmbeddingSet::decode(&b), Err(Error::DimMismatch(_))));
        let mut b = set(2, 3).encode().unwrap();
        b[5] = 1;
        assert!(matches!(EmbeddingSet::decode(&b), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = set(1, 1).encode().unwrap();
        b[4] = 9;
        assert!(matches!(EmbeddingSet::decode(&b), Err(Error::UnsupportedVersion { version: 9, .. })));
        b[0] = b'X';
        assert!(matches!(EmbeddingSet::decode(&b), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn missing_ids_are_all_listed() {
        let s = set(2, 3);
        let err = s
            .matrix_for(&["bin/0.exe".into(), "a".into(), "b".into()])
            .unwrap_err();
        match err {
            Error::MissingEmbedding(ids) => assert_eq!(ids, vec!["a".to_string(), "b".to_string()]),
            e => panic!("{e}"),
        }
    }

    proptest! {
        #[test]
        fn arbitrary_sets_round_trip(n in 0usize..6, d in 1usize..5, seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let ids = (0..n).map(|i| format!("id-{seed}-{i}")).collect();
            let v = (0..n * d).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let s = EmbeddingSet::new("t", d, ids, v).unwrap();
            prop_assert_eq!(EmbeddingSet::decode(&s.encode().unwrap()).unwrap(), s);
        }
    }

    fn toy_corpus(n_per: usize, c: usize) -> (Corpus, SplitAssignment) {
        let mut samples = vec![];
        for i in 0..n_per * c {
            samples.push(Sample { id: format!("s{i}"), label: i % c });
        }
        let corpus = Corpus::new((0..c).map(|k| format!("fam{k}")).collect(), samples).unwrap();
        let split = crate::corpus::split(&corpus, [0.6, 0.2, 0.2], 3).unwrap();
        (corpus, split)
    }

    #[test]
    fn one_hot_embeddings_are_separable_after_one_epoch() {
        let (corpus, split) = toy_corpus(10, 4);
        let ids: Vec<String> = corpus.samples.iter().map(|s| s.id.clone()).collect();
        let v = corpus
            .samples
            .iter()
            .flat_map(|s| (0..4).map(move |k| if k == s.label { 1.0 } else { 0.0 }))
            .collect();
        let e = EmbeddingSet::new("onehot", 4, ids, v).unwrap();
        let hyper = SoftmaxHyper { epochs: 1, ..Default::default() };
        let out = train_head(&e, &corpus, &split, hyper).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].val_accuracy, 1.0);
        assert_eq!(out.selected_epoch, 1);
    }

    #[test]
    fn missing_split_ids_are_reported() {
        let (corpus, split) = toy_corpus(5, 2);
        let keep: Vec<String> = split.train.iter().skip(1).cloned().collect();
        let e = EmbeddingSet::new("p", 1, keep.clone(), vec![0.5; keep.len()]).unwrap();
        match train_head(&e, &corpus, &split, SoftmaxHyper::default()) {
            Err(Error::MissingEmbedding(ids)) => {
                assert!(ids.contains(&split.train[0]));
                assert_eq!(ids.len(), 1 + split.val.len());
            }
            other => panic!("{other:?}"),
        }
    }

    /// With pixels as embeddings the head follows the plain softmax
    /// trajectory: the checkpoint at epoch e equals a fit of e epochs.
    #[test]
    fn pixel_embeddings_match_softmax_baseline() {
        let (corpus, split) = toy_corpus(12, 3);
        let mut rng = seeded_rng(4);
        let ids: Vec<String> = corpus.samples.iter().map(|s| s.id.clone()).collect();
        let pixels: Vec<f32> = corpus
            .samples
            .iter()
            .flat_map(|s| {
                let l = s.label;
                (0..16).map(|j| (if j % 3 == l { 0.6 } else { 0.2 }) + 0.3 * rng.random::<f32>()).collect::<Vec<_>>()
            })
            .collect();
        let e = EmbeddingSet::new("pixels", 16, ids, pixels).unwrap();
        let before = e.clone();
        let hyper = SoftmaxHyper { epochs: 8, seed: 9, ..Default::default() };
        let out = train_head(&e, &corpus, &split, hyper).unwrap();
        assert_eq!(e, before);

        let x = e.matrix_for(&split.train).unwrap();
        let y = corpus.labels_for(&split.train).unwrap();
        let direct = Softmax::fit(&x, &y, 3, SoftmaxHyper { epochs: out.selected_epoch, ..hyper }).unwrap();
        assert_eq!(out.model.weights, direct.weights);
        assert_eq!(out.model.bias, direct.bias);
    }
}
