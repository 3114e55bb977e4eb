//! Local surrogate explanations over super-pixels.
//!
//! The image is cut into segments ([`slic_segment`]); random subsets of
//! segments are blanked out ([`mask_apply`]); the model is queried on each
//! perturbed image; and a proximity-weighted sparse linear model of the
//! class probability on the presence vector is fitted ([`fit_surrogate`]).
//! Positive weights mark segments that support the class.

mod overlay;
mod slic;
mod surrogate;

pub use overlay::{render_overlay, write_overlay};
pub use slic::{slic_segment, Segmentation, SlicParams};
pub use surrogate::{
    fit_surrogate, proximity, ridge_objective, sample_perturbations, Explanation, PerturbationSample,
    SurrogateParams, KERNEL_WIDTH,
};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::ProbMatrix;
use crate::error::{Error, Result};
use crate::imaging::SquareImage;

/// Anything that scores single square images.
pub trait ImageModel: Sync {
    fn n_classes(&self) -> usize;
    /// One probability row per image, in order.
    fn predict_images(&self, images: &[SquareImage]) -> Result<ProbMatrix>;
}

/// Replacement for removed segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    /// Mean intensity of the removed segment.
    #[default]
    SegmentMean,
    Constant(f32),
}

/// Replace the pixels of every segment with `z = 0`.
pub fn mask_apply(img: &SquareImage, seg: &Segmentation, z: &[u8], fill: Fill) -> Result<SquareImage> {
    if img.side != seg.side || z.len() != seg.n_segments {
        return Err(Error::ShapeMismatch(format!(
            "image side {}, segmentation side {} with {} segments, mask of {}",
            img.side,
            seg.side,
            seg.n_segments,
            z.len()
        )));
    }
    let values: Vec<f32> = match fill {
        Fill::SegmentMean => segment_means(img, seg),
        Fill::Constant(v) => vec![v; seg.n_segments],
    };
    let pixels = img
        .pixels
        .iter()
        .zip(&seg.labels)
        .map(|(&p, &l)| if z[l as usize] == 0 { values[l as usize] } else { p })
        .collect();
    SquareImage::new(img.side, pixels)
}

fn segment_means(img: &SquareImage, seg: &Segmentation) -> Vec<f32> {
    let mut sum = vec![0.0f64; seg.n_segments];
    let mut count = vec![0usize; seg.n_segments];
    for (&p, &l) in img.pixels.iter().zip(&seg.labels) {
        sum[l as usize] += p as f64;
        count[l as usize] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| (s / c.max(1) as f64) as f32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainParams {
    pub top: usize,
    pub slic: SlicParams,
    pub n_samples: usize,
    pub surrogate: SurrogateParams,
    pub fill: Fill,
    pub seed: u64,
}

impl Default for ExplainParams {
    fn default() -> Self {
        ExplainParams {
            top: 5,
            slic: SlicParams::default(),
            n_samples: 1000,
            surrogate: SurrogateParams::default(),
            fill: Fill::SegmentMean,
            seed: 0,
        }
    }
}

/// Everything needed to reproduce and display one explanation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub seed: u64,
    pub params: ExplainParams,
    pub n_segments: usize,
    pub explanations: Vec<Explanation>,
    #[serde(skip)]
    pub segmentation: Option<Segmentation>,
}

impl ExplanationSet {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        std::fs::write(path, v).map_err(|e| Error::io(path, e))
    }
}

/// Images evaluated per model call.
const BATCH: usize = 64;

/// Explain the model's `top` most probable classes on `img` (ties toward
/// the lower class index).
pub fn explain(model: &dyn ImageModel, img: &SquareImage, params: ExplainParams) -> Result<ExplanationSet> {
    if params.top == 0 {
        return Err(Error::InvalidArgument("top must be at least 1".into()));
    }
    let seg = slic_segment(img, params.slic);
    let samples = sample_perturbations(seg.n_segments, params.n_samples, params.seed)?;
    let c = model.n_classes();

    let chunks: Vec<Result<ProbMatrix>> = samples
        .par_chunks(BATCH)
        .map(|chunk| {
            let imgs = chunk
                .iter()
                .map(|s| mask_apply(img, &seg, &s.z, params.fill))
                .collect::<Result<Vec<_>>>()?;
            model.predict_images(&imgs)
        })
        .collect();
    let mut probs = Vec::with_capacity(samples.len() * c);
    for chunk in chunks {
        probs.extend_from_slice(chunk?.data());
    }
    let probs = ProbMatrix::new(samples.len(), c, probs)?;

    let original = probs.row(0);
    let mut classes: Vec<usize> = (0..c).collect();
    classes.sort_by(|&a, &b| original[b].total_cmp(&original[a]).then(a.cmp(&b)));
    let explanations = classes
        .into_iter()
        .take(params.top)
        .map(|k| fit_surrogate(&samples, &probs.column(k), k, params.surrogate))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplanationSet {
        seed: params.seed,
        params,
        n_segments: seg.n_segments,
        explanations,
        segmentation: Some(seg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use rand::Rng;

    fn noise(side: usize, seed: u64) -> SquareImage {
        let mut rng = seeded_rng(seed);
        SquareImage::new(side, (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn masking() {
        let img = noise(16, 1);
        let seg = slic_segment(&img, SlicParams { n_segments: 6, ..Default::default() });
        let k = seg.n_segments;
        assert_eq!(mask_apply(&img, &seg, &vec![1; k], Fill::SegmentMean).unwrap(), img);
        let flat = mask_apply(&img, &seg, &vec![0; k], Fill::SegmentMean).unwrap();
        let means = segment_means(&img, &seg);
        assert!(flat.pixels.iter().zip(&seg.labels).all(|(&p, &l)| p == means[l as usize]));
        let mut z = vec![1; k];
        z[2] = 0;
        let one = mask_apply(&img, &seg, &z, Fill::Constant(0.0)).unwrap();
        for (i, (&a, &b)) in one.pixels.iter().zip(&img.pixels).enumerate() {
            assert_eq!(a != b, seg.labels[i] == 2 && b != 0.0);
        }
        assert!(matches!(mask_apply(&img, &seg, &[1], Fill::SegmentMean), Err(Error::ShapeMismatch(_))));
    }

    /// Class 0 probability tracks the pixel spread inside one planted
    /// segment, which mean filling removes.
    struct Planted {
        mask: Vec<bool>,
    }

    impl ImageModel for Planted {
        fn n_classes(&self) -> usize {
            3
        }

        fn predict_images(&self, images: &[SquareImage]) -> Result<ProbMatrix> {
            let mut p = vec![];
            for img in images {
                let vals: Vec<f64> = img.pixels.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(&v, _)| v as f64).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let spread = vals.iter().any(|v| (v - mean).abs() > 1e-6);
                let p0 = if spread { 0.95 } else { 0.05 };
                p.extend([p0, (1.0 - p0) * 0.6, (1.0 - p0) * 0.4]);
            }
            ProbMatrix::new(images.len(), 3, p)
        }
    }

    #[test]
    fn planted_segment_is_recovered() {
        let img = crate::interpret::slic::tests::textured(40, 5);
        let params = ExplainParams {
            top: 2,
            slic: SlicParams { n_segments: 20, ..Default::default() },
            n_samples: 300,
            seed: 9,
            ..Default::default()
        };
        let seg = slic_segment(&img, params.slic);
        assert!(seg.n_segments >= 10, "{}", seg.n_segments);
        let target = (seg.n_segments / 2) as u32;
        let model = Planted { mask: seg.labels.iter().map(|&l| l == target).collect() };
        let out = explain(&model, &img, params).unwrap();
        assert_eq!(out.explanations.len(), 2);
        assert_eq!(out.explanations[0].target_class, 0);
        assert_eq!(out.explanations[0].top_segment(), Some(target as usize));
        assert!(out.explanations[0].weights[target as usize] > 0.8);
        assert_eq!(out.explanations[1].target_class, 1);
        assert!(out.explanations[1].weights[target as usize] < 0.0);
        let again = explain(&model, &img, params).unwrap();
        assert_eq!(serde_json::to_vec(&again).unwrap(), serde_json::to_vec(&out).unwrap());
    }

    struct Constant;

    impl ImageModel for Constant {
        fn n_classes(&self) -> usize {
            2
        }

        fn predict_images(&self, images: &[SquareImage]) -> Result<ProbMatrix> {
            ProbMatrix::new(images.len(), 2, [0.3, 0.7].repeat(images.len()))
        }
    }

    #[test]
    fn constant_model_explanations_are_degenerate() {
        let params = ExplainParams { top: 2, n_samples: 50, slic: SlicParams { n_segments: 8, ..Default::default() }, ..Default::default() };
        let out = explain(&Constant, &noise(20, 2), params).unwrap();
        assert_eq!(out.explanations[0].target_class, 1);
        assert!(out.explanations.iter().all(|e| e.degenerate && e.weights.iter().all(|&w| w == 0.0)));
    }
}
