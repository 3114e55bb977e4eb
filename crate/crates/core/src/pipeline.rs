//! A trained model together with what it needs to score new samples: the
//! feature source, an optional PCA projection and the class names.
//!
//! Saved as one `.mmod` whose kind is the classifier's kind. The JSON
//! header nests the classifier header under `"model"` and the pipeline
//! description under `"pipeline"`; PCA parameters follow the classifier
//! blobs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::container::{header_field, Persist};
use crate::baselines::{
    ClassifierKind, Gnb, GnbHyper, Knn, KnnHyper, Lda, LdaHyper, LinearSvm, Mlp, MlpHyper, ModelFile, ProbMatrix,
    Softmax, SoftmaxHyper, SvmHyper,
};
use crate::corpus::{Corpus, SplitAssignment, Subset};
use crate::error::{Error, Result};
use crate::imaging::{ImageStore, SquareImage};
use crate::interpret::ImageModel;
use crate::numerics::{pca_fit, pca_transform, Matrix, PcaModel};
use crate::smallcnn::{cnn_train, CnnTrainConfig, SmallCnn, SIDE};
use crate::training::TrainRecord;
use crate::transfer::{train_head_on, EmbeddingSet};
use crate::Classifier;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureSource {
    /// Flattened pixels of `side x side` images.
    Pixels { side: usize },
    Embeddings { backbone_tag: String, dim: usize },
}

/// Where feature vectors come from at train or predict time.
#[derive(Debug, Clone, Copy)]
pub enum FeatureData<'a> {
    Store(&'a ImageStore),
    Embeddings(&'a EmbeddingSet),
}

impl FeatureData<'_> {
    pub fn source(&self) -> Result<FeatureSource> {
        match self {
            FeatureData::Store(s) => {
                let first = s.records.first().ok_or(Error::EmptyInput)?;
                if first.width != first.height {
                    return Err(Error::ShapeMismatch(format!("record {} is not square", first.id)));
                }
                Ok(FeatureSource::Pixels { side: first.width as usize })
            }
            FeatureData::Embeddings(e) => Ok(FeatureSource::Embeddings {
                backbone_tag: e.backbone_tag.clone(),
                dim: e.dim(),
            }),
        }
    }

    /// Feature rows for `ids`, in order.
    pub fn matrix(&self, ids: &[String]) -> Result<Matrix> {
        match self {
            FeatureData::Embeddings(e) => e.matrix_for(ids),
            FeatureData::Store(s) => {
                let index = s.index();
                let mut missing: Vec<String> = ids.iter().filter(|id| !index.contains_key(id.as_str())).cloned().collect();
                if !missing.is_empty() {
                    missing.sort();
                    return Err(Error::MissingRecord(missing));
                }
                let mut rows = Vec::with_capacity(ids.len());
                for id in ids {
                    rows.push(s.records[index[id.as_str()]].to_square()?.features());
                }
                if rows.is_empty() {
                    return Err(Error::EmptyInput);
                }
                let d = rows[0].len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(Error::ShapeMismatch("store mixes image sizes".into()));
                }
                Matrix::new(rows.len(), d, rows.concat())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyClassifier {
    Knn(Knn),
    Gnb(Gnb),
    Lda(Lda),
    Softmax(Softmax),
    LinearSvm(LinearSvm),
    Mlp(Mlp),
    SmallCnn(SmallCnn),
}

impl AnyClassifier {
    fn inner(&self) -> &dyn Classifier {
        match self {
            AnyClassifier::Knn(m) => m,
            AnyClassifier::Gnb(m) => m,
            AnyClassifier::Lda(m) => m,
            AnyClassifier::Softmax(m) => m,
            AnyClassifier::LinearSvm(m) => m,
            AnyClassifier::Mlp(m) => m,
            AnyClassifier::SmallCnn(m) => m,
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            AnyClassifier::Knn(_) => ClassifierKind::Knn,
            AnyClassifier::Gnb(_) => ClassifierKind::Gnb,
            AnyClassifier::Lda(_) => ClassifierKind::Lda,
            AnyClassifier::Softmax(_) => ClassifierKind::Softmax,
            AnyClassifier::LinearSvm(_) => ClassifierKind::LinearSvm,
            AnyClassifier::Mlp(_) => ClassifierKind::Mlp,
            AnyClassifier::SmallCnn(_) => ClassifierKind::SmallCnn,
        }
    }

    pub fn to_file(&self) -> ModelFile {
        match self {
            AnyClassifier::Knn(m) => m.to_file(),
            AnyClassifier::Gnb(m) => m.to_file(),
            AnyClassifier::Lda(m) => m.to_file(),
            AnyClassifier::Softmax(m) => m.to_file(),
            AnyClassifier::LinearSvm(m) => m.to_file(),
            AnyClassifier::Mlp(m) => m.to_file(),
            AnyClassifier::SmallCnn(m) => m.to_file(),
        }
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        Ok(match f.kind {
            ClassifierKind::Knn => AnyClassifier::Knn(Knn::from_file(f)?),
            ClassifierKind::Gnb => AnyClassifier::Gnb(Gnb::from_file(f)?),
            ClassifierKind::Lda => AnyClassifier::Lda(Lda::from_file(f)?),
            ClassifierKind::Softmax => AnyClassifier::Softmax(Softmax::from_file(f)?),
            ClassifierKind::LinearSvm => AnyClassifier::LinearSvm(LinearSvm::from_file(f)?),
            ClassifierKind::Mlp => AnyClassifier::Mlp(Mlp::from_file(f)?),
            ClassifierKind::SmallCnn => AnyClassifier::SmallCnn(SmallCnn::from_file(f)?),
        })
    }
}

impl Classifier for AnyClassifier {
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        self.inner().predict_proba(x)
    }
}

/// Learner choice with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainSpec {
    Knn(KnnHyper),
    Gnb(GnbHyper),
    Lda(LdaHyper),
    /// Trained with per-epoch validation and best-epoch selection.
    Softmax(SoftmaxHyper),
    LinearSvm(SvmHyper),
    Mlp(MlpHyper),
    SmallCnn(CnnTrainConfig),
}

impl TrainSpec {
    /// Default hyperparameters for `kind`, with every seed set to `seed`
    /// and every epoch count to `epochs` when given.
    pub fn defaults(kind: ClassifierKind, seed: u64, epochs: Option<usize>) -> Self {
        match kind {
            ClassifierKind::Knn => TrainSpec::Knn(KnnHyper::default()),
            ClassifierKind::Gnb => TrainSpec::Gnb(GnbHyper::default()),
            ClassifierKind::Lda => TrainSpec::Lda(LdaHyper::default()),
            ClassifierKind::Softmax => {
                let d = SoftmaxHyper::default();
                TrainSpec::Softmax(SoftmaxHyper { seed, epochs: epochs.unwrap_or(d.epochs), ..d })
            }
            ClassifierKind::LinearSvm => {
                let d = SvmHyper::default();
                TrainSpec::LinearSvm(SvmHyper { seed, epochs: epochs.unwrap_or(d.epochs), ..d })
            }
            ClassifierKind::Mlp => {
                let d = MlpHyper::default();
                TrainSpec::Mlp(MlpHyper { seed, epochs: epochs.unwrap_or(d.epochs), ..d })
            }
            ClassifierKind::SmallCnn => {
                let d = CnnTrainConfig::default();
                TrainSpec::SmallCnn(CnnTrainConfig { seed, epochs: epochs.unwrap_or(d.epochs), ..d })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub features: FeatureSource,
    pub pca: Option<PcaModel>,
    pub classifier: AnyClassifier,
    pub label_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: TrainedModel,
    /// Per-epoch record for learners with epoch selection.
    pub history: Option<Vec<TrainRecord>>,
    pub selected_epoch: Option<usize>,
}

/// Fit `spec` on the training subset (PCA, when requested, is fitted on
/// the training rows only). Learners with epoch selection use the
/// validation subset.
pub fn train(
    spec: TrainSpec,
    data: FeatureData<'_>,
    corpus: &Corpus,
    split: &SplitAssignment,
    pca_k: Option<usize>,
) -> Result<TrainOutput> {
    let source = data.source()?;
    let train_ids = split.ids(Subset::Train);
    let val_ids = split.ids(Subset::Val);
    let mut x = data.matrix(train_ids)?;
    let y = corpus.labels_for(train_ids)?;
    let c = corpus.n_classes();
    let needs_val = matches!(spec, TrainSpec::Softmax(_) | TrainSpec::SmallCnn(_));
    let (mut vx, vy) = if needs_val {
        (Some(data.matrix(val_ids)?), corpus.labels_for(val_ids)?)
    } else {
        (None, vec![])
    };
    let pca = match pca_k {
        Some(k) => {
            if matches!(spec, TrainSpec::SmallCnn(_)) {
                return Err(Error::InvalidArgument("the CNN consumes images; PCA does not apply".into()));
            }
            let p = pca_fit(&x, k)?;
            x = pca_transform(&p, &x)?;
            if let Some(v) = vx.as_mut() {
                *v = pca_transform(&p, v)?;
            }
            Some(p)
        }
        None => None,
    };
    let (classifier, history, selected_epoch) = match spec {
        TrainSpec::Knn(h) => (AnyClassifier::Knn(Knn::fit(&x, &y, c, h)?), None, None),
        TrainSpec::Gnb(h) => (AnyClassifier::Gnb(Gnb::fit(&x, &y, c, h)?), None, None),
        TrainSpec::Lda(h) => (AnyClassifier::Lda(Lda::fit(&x, &y, c, h)?), None, None),
        TrainSpec::LinearSvm(h) => (AnyClassifier::LinearSvm(LinearSvm::fit(&x, &y, c, h)?), None, None),
        TrainSpec::Mlp(h) => (AnyClassifier::Mlp(Mlp::fit(&x, &y, c, h)?), None, None),
        TrainSpec::Softmax(h) => {
            let out = train_head_on(&x, &y, vx.as_ref().expect("validation rows"), &vy, c, h)?;
            (AnyClassifier::Softmax(out.model), Some(out.history), Some(out.selected_epoch))
        }
        TrainSpec::SmallCnn(cfg) => {
            if source != (FeatureSource::Pixels { side: SIDE }) {
                return Err(Error::InvalidArgument(format!("the CNN needs {SIDE}x{SIDE} images, got {source:?}")));
            }
            let out = cnn_train(&x, &y, vx.as_ref().expect("validation rows"), &vy, c, cfg)?;
            (AnyClassifier::SmallCnn(out.model), Some(out.history), Some(out.selected_epoch))
        }
    };
    Ok(TrainOutput {
        model: TrainedModel {
            features: source,
            pca,
            classifier,
            label_names: corpus.label_names.clone(),
        },
        history,
        selected_epoch,
    })
}

impl TrainedModel {
    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    fn check_source(&self, data: &FeatureData<'_>) -> Result<()> {
        let got = data.source()?;
        let ok = match (&self.features, &got) {
            (FeatureSource::Pixels { side: a }, FeatureSource::Pixels { side: b }) => a == b,
            (FeatureSource::Embeddings { dim: a, .. }, FeatureSource::Embeddings { dim: b, .. }) => a == b,
            _ => false,
        };
        if !ok {
            return Err(Error::DimMismatch(format!(
                "model was trained on {:?}, input provides {:?}",
                self.features, got
            )));
        }
        Ok(())
    }

    /// Raw feature rows to probabilities (applies PCA if present).
    pub fn predict_features(&self, x: &Matrix) -> Result<ProbMatrix> {
        match &self.pca {
            Some(p) => self.classifier.predict_proba(&pca_transform(p, x)?),
            None => self.classifier.predict_proba(x),
        }
    }

    pub fn predict_ids(&self, data: FeatureData<'_>, ids: &[String]) -> Result<ProbMatrix> {
        self.check_source(&data)?;
        self.predict_features(&data.matrix(ids)?)
    }

    pub fn to_file(&self) -> ModelFile {
        let inner = self.classifier.to_file();
        let n_model_blobs = inner.blobs.len();
        let mut blobs = inner.blobs;
        let pca = self.pca.as_ref().map(|p| {
            blobs.push(p.mean.clone());
            blobs.push(p.components.data().to_vec());
            blobs.push(p.explained_variance.clone());
            json!({
                "k": p.n_components(),
                "dim": p.dim(),
                "total_variance": p.total_variance,
                "rank_deficient": p.rank_deficient,
            })
        });
        ModelFile {
            kind: inner.kind,
            header: json!({
                "model": inner.header,
                "pipeline": {
                    "features": self.features,
                    "label_names": self.label_names,
                    "n_model_blobs": n_model_blobs,
                    "pca": pca,
                },
            }),
            blobs,
        }
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        let pipe = f
            .header
            .get("pipeline")
            .ok_or_else(|| Error::InvalidArgument("model file has no pipeline section".into()))?;
        let n_model_blobs: usize = header_field(pipe, "n_model_blobs")?;
        if n_model_blobs > f.blobs.len() {
            return Err(Error::DimMismatch(format!("{n_model_blobs} model blobs declared, {} present", f.blobs.len())));
        }
        let inner = ModelFile {
            kind: f.kind,
            header: header_field(&f.header, "model")?,
            blobs: f.blobs[..n_model_blobs].to_vec(),
        };
        let classifier = AnyClassifier::from_file(&inner)?;
        let rest = &f.blobs[n_model_blobs..];
        let pca_header: Option<serde_json::Value> = header_field(pipe, "pca")?;
        let pca = match pca_header {
            None => {
                if !rest.is_empty() {
                    return Err(Error::DimMismatch(format!("{} unexpected trailing blobs", rest.len())));
                }
                None
            }
            Some(h) => {
                let k: usize = header_field(&h, "k")?;
                let d: usize = header_field(&h, "dim")?;
                crate::baselines::container::expect_blobs(rest, &[d, k * d, k])?;
                Some(PcaModel {
                    mean: rest[0].clone(),
                    components: Matrix::new(k, d, rest[1].clone())?,
                    explained_variance: rest[2].clone(),
                    total_variance: header_field(&h, "total_variance")?,
                    rank_deficient: header_field(&h, "rank_deficient")?,
                })
            }
        };
        let label_names: Vec<String> = header_field(pipe, "label_names")?;
        if label_names.len() != classifier.n_classes() {
            return Err(Error::DimMismatch(format!(
                "{} label names for a {}-class model",
                label_names.len(),
                classifier.n_classes()
            )));
        }
        Ok(TrainedModel {
            features: header_field(pipe, "features")?,
            pca,
            classifier,
            label_names,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_file().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file(&ModelFile::read(path)?)
    }
}

impl ImageModel for TrainedModel {
    fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    fn predict_images(&self, images: &[SquareImage]) -> Result<ProbMatrix> {
        let side = match self.features {
            FeatureSource::Pixels { side } => side,
            FeatureSource::Embeddings { .. } => {
                return Err(Error::InvalidArgument(
                    "the model consumes precomputed embeddings and cannot score images".into(),
                ))
            }
        };
        if let Some(img) = images.iter().find(|i| i.side != side) {
            return Err(Error::ShapeMismatch(format!("model expects {side}x{side} images, got side {}", img.side)));
        }
        if images.is_empty() {
            return Err(Error::EmptyInput);
        }
        let data: Vec<f64> = images.iter().flat_map(|i| i.features()).collect();
        self.predict_features(&Matrix::new(images.len(), side * side, data)?)
    }
}
