//! Small inception-style CNN trained from scratch on 28x28 grayscale images.
//!
//! Topology (a stand-in; no reference layer sizes exist for this task):
//!
//! ```text
//! input 1x28x28
//! stem      conv3x3 -> 8, ReLU
//! block1    [conv1x1 -> 8 | conv3x3 -> 8 | conv5x5 -> 4 | maxpool3 -> conv1x1 -> 4], ReLU each, concat = 24
//! block2    same branches on 24 input channels, concat = 24
//! global average pool -> 24
//! dense -> n_classes, softmax
//! ```
//!
//! All convolutions are stride 1 with same padding. Parameters live in one
//! flat vector; [`CnnArchitecture`] records where each tensor sits.

pub mod layers;
mod train;

pub use train::{cnn_train, CnnTrainConfig, CnnTrainOutcome};

use rand::Rng;
use rayon::prelude::*;

use self::layers::*;
use crate::baselines::container::{expect_blobs, header_field, ClassifierKind, Persist};
use crate::baselines::{check_query, Classifier, ProbMatrix};
use crate::error::{Error, Result};
use crate::numerics::{argmax, seeded_rng, Matrix};

pub const SIDE: usize = 28;
const PLANE: usize = SIDE * SIDE;
const BLOCK_OUT: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub shape: ConvShape,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ConvParams {
    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.weight_offset..self.weight_offset + self.shape.weight_len()]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.bias_offset..self.bias_offset + self.shape.out_c]
    }

    fn fan_in(&self) -> usize {
        self.shape.in_c * self.shape.k * self.shape.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionBlock {
    pub in_c: usize,
    pub branch1: ConvParams,
    pub branch3: ConvParams,
    pub branch5: ConvParams,
    pub pool_proj: ConvParams,
}

impl InceptionBlock {
    fn convs(&self) -> [&ConvParams; 4] {
        [&self.branch1, &self.branch3, &self.branch5, &self.pool_proj]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnArchitecture {
    pub n_classes: usize,
    pub stem: ConvParams,
    pub block1: InceptionBlock,
    pub block2: InceptionBlock,
    pub dense_weight_offset: usize,
    pub dense_bias_offset: usize,
    pub n_params: usize,
}

impl CnnArchitecture {
    pub fn new(n_classes: usize) -> Self {
        let mut next = 0;
        let mut conv = |in_c: usize, out_c: usize, k: usize| {
            let shape = ConvShape { in_c, out_c, k, h: SIDE, w: SIDE };
            let weight_offset = next;
            let bias_offset = next + shape.weight_len();
            next = bias_offset + out_c;
            ConvParams { shape, weight_offset, bias_offset }
        };
        let stem = conv(1, 8, 3);
        let mut block = |in_c: usize| InceptionBlock {
            in_c,
            branch1: conv(in_c, 8, 1),
            branch3: conv(in_c, 8, 3),
            branch5: conv(in_c, 4, 5),
            pool_proj: conv(in_c, 4, 1),
        };
        let block1 = block(8);
        let block2 = block(BLOCK_OUT);
        let dense_weight_offset = next;
        let dense_bias_offset = next + n_classes * BLOCK_OUT;
        CnnArchitecture {
            n_classes,
            stem,
            block1,
            block2,
            dense_weight_offset,
            dense_bias_offset,
            n_params: dense_bias_offset + n_classes,
        }
    }

    fn convs(&self) -> Vec<&ConvParams> {
        let mut v = vec![&self.stem];
        v.extend(self.block1.convs());
        v.extend(self.block2.convs());
        v
    }

    fn dense<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        (
            &p[self.dense_weight_offset..self.dense_bias_offset],
            &p[self.dense_bias_offset..self.n_params],
        )
    }
}

struct BlockCache {
    input: Vec<f64>,
    pre: [Vec<f64>; 4],
    post: [Vec<f64>; 4],
    pooled: Vec<f64>,
    pool_arg: Vec<usize>,
}

struct SampleCache {
    input: Vec<f64>,
    stem_pre: Vec<f64>,
    block1: BlockCache,
    block2: BlockCache,
    block2_out: Vec<f64>,
    gap: Vec<f64>,
    logits: Vec<f64>,
}

fn block_forward(b: &InceptionBlock, p: &[f64], x: Vec<f64>) -> (BlockCache, Vec<f64>) {
    let (pooled, pool_arg) = maxpool3_forward(&x, b.in_c, SIDE, SIDE);
    let run = |c: &ConvParams, input: &[f64]| conv_forward(&c.shape, input, c.weights(p), c.bias(p));
    let pre = [
        run(&b.branch1, &x),
        run(&b.branch3, &x),
        run(&b.branch5, &x),
        run(&b.pool_proj, &pooled),
    ];
    let post = [
        relu_forward(&pre[0]),
        relu_forward(&pre[1]),
        relu_forward(&pre[2]),
        relu_forward(&pre[3]),
    ];
    let out = concat(&[&post[0], &post[1], &post[2], &post[3]]);
    (BlockCache { input: x, pre, post, pooled, pool_arg }, out)
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
fn block_backward(b: &InceptionBlock, p: &[f64], cache: &BlockCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let lens: Vec<usize> = cache.post.iter().map(Vec::len).collect();
    let parts = concat_backward(dout, &lens);
    let mut dx = vec![0.0; cache.input.len()];
    for (i, conv) in b.convs().into_iter().enumerate() {
        let dpre = relu_backward(&cache.pre[i], parts[i]);
        let input = if i == 3 { &cache.pooled } else { &cache.input };
        let (dinput, dw, db) = conv_backward(&conv.shape, input, conv.weights(p), &dpre);
        accumulate(grad, conv, &dw, &db);
        let dinput = if i == 3 {
            maxpool3_backward(&cache.pool_arg, &dinput, cache.input.len())
        } else {
            dinput
        };
        dx.iter_mut().zip(&dinput).for_each(|(a, g)| *a += g);
    }
    dx
}

fn accumulate(grad: &mut [f64], conv: &ConvParams, dw: &[f64], db: &[f64]) {
    let gw = &mut grad[conv.weight_offset..conv.weight_offset + dw.len()];
    gw.iter_mut().zip(dw).for_each(|(a, g)| *a += g);
    let gb = &mut grad[conv.bias_offset..conv.bias_offset + db.len()];
    gb.iter_mut().zip(db).for_each(|(a, g)| *a += g);
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallCnn {
    pub arch: CnnArchitecture,
    pub params: Vec<f64>,
}

impl SmallCnn {
    pub fn zeros(n_classes: usize) -> Self {
        let arch = CnnArchitecture::new(n_classes);
        SmallCnn {
            params: vec![0.0; arch.n_params],
            arch,
        }
    }

    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init(n_classes: usize, seed: u64) -> Self {
        Self::init_with(n_classes, &mut seeded_rng(seed))
    }

    fn init_with(n_classes: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(n_classes);
        for conv in m.arch.convs() {
            let bound = (6.0 / conv.fan_in() as f64).sqrt();
            for w in &mut m.params[conv.weight_offset..conv.bias_offset] {
                *w = rng.random_range(-bound..bound);
            }
        }
        let bound = (6.0 / BLOCK_OUT as f64).sqrt();
        for w in &mut m.params[m.arch.dense_weight_offset..m.arch.dense_bias_offset] {
            *w = rng.random_range(-bound..bound);
        }
        m
    }

    pub fn n_params(&self) -> usize {
        self.arch.n_params
    }

    fn check_batch(&self, x: &Matrix) -> Result<()> {
        if x.cols() != PLANE {
            return Err(Error::ShapeMismatch(format!(
                "small CNN expects {SIDE}x{SIDE}x1 inputs ({PLANE} values), got {}",
                x.cols()
            )));
        }
        Ok(())
    }

    fn forward_sample(&self, x: &[f64]) -> SampleCache {
        let p = &self.params;
        let stem = &self.arch.stem;
        let stem_pre = conv_forward(&stem.shape, x, stem.weights(p), stem.bias(p));
        let (block1, out1) = block_forward(&self.arch.block1, p, relu_forward(&stem_pre));
        let (block2, block2_out) = block_forward(&self.arch.block2, p, out1);
        let gap = gap_forward(&block2_out, BLOCK_OUT, PLANE);
        let (w, b) = self.arch.dense(p);
        let logits = dense_forward(&gap, w, b);
        SampleCache {
            input: x.to_vec(),
            stem_pre,
            block1,
            block2,
            block2_out,
            gap,
            logits,
        }
    }

    /// Cross-entropy of one sample plus its full parameter gradient.
    fn backward_sample(&self, cache: &SampleCache, label: usize) -> (f64, Vec<f64>) {
        let p = &self.params;
        let mut grad = vec![0.0; self.arch.n_params];
        let (loss, dlogits) = softmax_xent(&cache.logits, label);
        let (w, _) = self.arch.dense(p);
        let (dgap, dw, db) = dense_backward(&cache.gap, w, &dlogits);
        grad[self.arch.dense_weight_offset..self.arch.dense_bias_offset].copy_from_slice(&dw);
        grad[self.arch.dense_bias_offset..].copy_from_slice(&db);
        debug_assert_eq!(cache.block2_out.len(), BLOCK_OUT * PLANE);
        let d2 = gap_backward(&dgap, PLANE);
        let d1 = block_backward(&self.arch.block2, p, &cache.block2, &d2, &mut grad);
        let dstem = block_backward(&self.arch.block1, p, &cache.block1, &d1, &mut grad);
        let dstem_pre = relu_backward(&cache.stem_pre, &dstem);
        let stem = &self.arch.stem;
        let (_, dw, db) = conv_backward(&stem.shape, &cache.input, stem.weights(p), &dstem_pre);
        accumulate(&mut grad, stem, &dw, &db);
        (loss, grad)
    }

    /// ReLU on/off states and max-pool winners for every sample.
    ///
    /// Two parameter vectors with the same pattern lie in one linear piece
    /// of the network, which is where finite differences are valid.
    pub fn activation_pattern(&self, x: &Matrix) -> Result<Vec<usize>> {
        self.check_batch(x)?;
        let mut out = vec![];
        for i in 0..x.rows() {
            let c = self.forward_sample(x.row(i));
            let signs = |v: &[f64]| v.iter().map(|&a| usize::from(a > 0.0)).collect::<Vec<_>>();
            out.extend(signs(&c.stem_pre));
            for b in [&c.block1, &c.block2] {
                for pre in &b.pre {
                    out.extend(signs(pre));
                }
                out.extend(&b.pool_arg);
            }
        }
        Ok(out)
    }

    /// Raw class scores, one row per input row.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_batch(x)?;
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .into_par_iter()
            .map(|i| self.forward_sample(x.row(i)).logits)
            .collect();
        let mut z = Matrix::zeros(x.rows(), self.arch.n_classes);
        for (i, r) in rows.iter().enumerate() {
            z.row_mut(i).copy_from_slice(r);
        }
        Ok(z)
    }

    /// Softmax probabilities for a batch of flattened 28x28 images.
    pub fn forward(&self, x: &Matrix) -> Result<ProbMatrix> {
        Ok(ProbMatrix::from_logits(self.logits(x)?))
    }

    /// Mean cross-entropy over `batch` and its gradient, laid out like
    /// `params`. Samples are processed in parallel and summed in batch order.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[usize], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        let (loss, _, grad) = self.batch_step(x, y, batch)?;
        Ok((loss, grad))
    }

    /// Mean loss, number of correct argmax predictions, mean gradient.
    fn batch_step(&self, x: &Matrix, y: &[usize], batch: &[usize]) -> Result<(f64, usize, Vec<f64>)> {
        self.check_batch(x)?;
        if y.len() != x.rows() {
            return Err(Error::ShapeMismatch(format!("{} labels for {} images", y.len(), x.rows())));
        }
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&l) = y.iter().find(|&&l| l >= self.arch.n_classes) {
            return Err(Error::LabelOutOfRange { label: l, n_classes: self.arch.n_classes });
        }
        let per_sample: Vec<(f64, bool, Vec<f64>)> = batch
            .par_iter()
            .map(|&i| {
                let cache = self.forward_sample(x.row(i));
                let correct = argmax(&cache.logits) == y[i];
                let (loss, grad) = self.backward_sample(&cache, y[i]);
                (loss, correct, grad)
            })
            .collect();
        let m = batch.len() as f64;
        let mut grad = vec![0.0; self.arch.n_params];
        let mut loss = 0.0;
        let mut correct = 0;
        for (l, c, g) in &per_sample {
            loss += l;
            correct += usize::from(*c);
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        grad.iter_mut().for_each(|g| *g /= m);
        Ok((loss / m, correct, grad))
    }
}

impl Classifier for SmallCnn {
    fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    fn n_features(&self) -> usize {
        PLANE
    }

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        check_query(x, PLANE)?;
        self.forward(x)
    }
}

impl Persist for SmallCnn {
    const KIND: ClassifierKind = ClassifierKind::SmallCnn;

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "n_classes": self.arch.n_classes,
            "side": SIDE,
            "n_params": self.arch.n_params,
        })
    }

    fn blobs(&self) -> Vec<Vec<f64>> {
        vec![self.params.clone()]
    }

    fn restore(h: &serde_json::Value, blobs: &[Vec<f64>]) -> Result<Self> {
        let c: usize = header_field(h, "n_classes")?;
        let side: usize = header_field(h, "side")?;
        if side != SIDE {
            return Err(Error::ShapeMismatch(format!("checkpoint side {side}, expected {SIDE}")));
        }
        let mut m = SmallCnn::zeros(c);
        expect_blobs(blobs, &[m.arch.n_params])?;
        m.params.copy_from_slice(&blobs[0]);
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{log_sum_exp, softmax_in_place};

    fn random_images(n: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Matrix::new(n, PLANE, (0..n * PLANE).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn parameter_count() {
        let a = CnnArchitecture::new(4);
        assert_eq!(a.n_params, 80 + 1496 + 4440 + 24 * 4 + 4);
        assert_eq!(a.stem.weight_offset, 0);
        assert_eq!(a.block2.pool_proj.bias_offset + 4, a.dense_weight_offset);
    }

    #[test]
    fn zero_weights_give_uniform() {
        let p = SmallCnn::zeros(4).forward(&random_images(3, 1)).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = SmallCnn::init(3, 2);
        let x = random_images(8, 3);
        let all = m.forward(&x).unwrap();
        let one = m.forward(&x.select_rows(&[5])).unwrap();
        assert_eq!(one.row(0), all.row(5));
    }

    /// Direct-loop reference network on `[c][y][x]` arrays.
    mod reference {
        use super::super::*;

        type Map = Vec<Vec<Vec<f64>>>;

        fn conv(x: &Map, c: &ConvParams, p: &[f64]) -> Map {
            let s = c.shape;
            let half = (s.k / 2) as isize;
            let mut y = vec![vec![vec![0.0; SIDE]; SIDE]; s.out_c];
            for o in 0..s.out_c {
                for r in 0..SIDE {
                    for col in 0..SIDE {
                        let mut acc = p[c.bias_offset + o];
                        for i in 0..s.in_c {
                            for ky in 0..s.k {
                                for kx in 0..s.k {
                                    let rr = r as isize + ky as isize - half;
                                    let cc = col as isize + kx as isize - half;
                                    if (0..SIDE as isize).contains(&rr) && (0..SIDE as isize).contains(&cc) {
                                        let wi = c.weight_offset + ((o * s.in_c + i) * s.k + ky) * s.k + kx;
                                        acc += p[wi] * x[i][rr as usize][cc as usize];
                                    }
                                }
                            }
                        }
                        y[o][r][col] = acc.max(0.0);
                    }
                }
            }
            y
        }

        fn pool(x: &Map) -> Map {
            x.iter()
                .map(|ch| {
                    (0..SIDE)
                        .map(|r| {
                            (0..SIDE)
                                .map(|c| {
                                    let mut m = f64::NEG_INFINITY;
                                    for rr in r.saturating_sub(1)..(r + 2).min(SIDE) {
                                        for cc in c.saturating_sub(1)..(c + 2).min(SIDE) {
                                            m = m.max(ch[rr][cc]);
                                        }
                                    }
                                    m
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        }

        fn block(x: &Map, b: &InceptionBlock, p: &[f64]) -> Map {
            let mut out = conv(x, &b.branch1, p);
            out.extend(conv(x, &b.branch3, p));
            out.extend(conv(x, &b.branch5, p));
            out.extend(conv(&pool(x), &b.pool_proj, p));
            out
        }

        pub fn logits(m: &SmallCnn, img: &[f64]) -> Vec<f64> {
            let x: Map = vec![img.chunks(SIDE).map(|r| r.to_vec()).collect()];
            let p = &m.params;
            let h = block(&block(&conv(&x, &m.arch.stem, p), &m.arch.block1, p), &m.arch.block2, p);
            let gap: Vec<f64> = h
                .iter()
                .map(|ch| ch.iter().flatten().sum::<f64>() / (SIDE * SIDE) as f64)
                .collect();
            (0..m.arch.n_classes)
                .map(|k| {
                    let mut z = p[m.arch.dense_bias_offset + k];
                    for (j, g) in gap.iter().enumerate() {
                        z += p[m.arch.dense_weight_offset + k * BLOCK_OUT + j] * g;
                    }
                    z
                })
                .collect()
        }
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut m = SmallCnn::init(3, 7);
        let mut rng = seeded_rng(8);
        for b in &mut m.params[m.arch.stem.bias_offset..m.arch.stem.bias_offset + 8] {
            *b = rng.random_range(-0.1..0.1);
        }
        let x = random_images(2, 9);
        let p = m.forward(&x).unwrap();
        for i in 0..2 {
            let mut z = reference::logits(&m, x.row(i));
            softmax_in_place(&mut z);
            for (a, e) in p.row(i).iter().zip(&z) {
                assert!((a - e).abs() < 1e-10, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut m = SmallCnn::zeros(3);
        let b = m.arch.dense_bias_offset;
        m.params[b..b + 3].copy_from_slice(&[1e3, -1e3, 0.0]);
        let p = m.forward(&random_images(1, 1)).unwrap();
        assert!(p.data().iter().all(|v| v.is_finite()));
        let (loss, grad) = m.loss_and_grad(&random_images(1, 1), &[1], &[0]).unwrap();
        assert!((loss - 2e3).abs() < 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    /// Central differences at h = 1e-5 on sampled parameters. A parameter
    /// whose +-h perturbation flips a ReLU or moves a max-pool winner is
    /// resampled: the loss has a kink there and the difference quotient is
    /// not an estimate of the derivative.
    #[test]
    fn gradient_matches_finite_differences_on_sampled_parameters() {
        let x = random_images(3, 11);
        let y = [0, 2, 1];
        let batch = [0, 1, 2];
        let mut rng = seeded_rng(12);
        let h = 1e-5;
        for point in 0..10 {
            let mut m = SmallCnn::init(3, 100 + point);
            let (_, g) = m.loss_and_grad(&x, &y, &batch).unwrap();
            let pattern = m.activation_pattern(&x).unwrap();
            let (mut checked, mut skipped) = (0, 0);
            while checked < 30 {
                let j = rng.random_range(0..m.n_params());
                let orig = m.params[j];
                m.params[j] = orig + h;
                let lp = m.loss_and_grad(&x, &y, &batch).unwrap().0;
                let same_p = m.activation_pattern(&x).unwrap() == pattern;
                m.params[j] = orig - h;
                let lm = m.loss_and_grad(&x, &y, &batch).unwrap().0;
                let same_m = m.activation_pattern(&x).unwrap() == pattern;
                m.params[j] = orig;
                if !(same_p && same_m) {
                    skipped += 1;
                    continue;
                }
                checked += 1;
                let numeric = (lp - lm) / (2.0 * h);
                let rel = (g[j] - numeric).abs() / g[j].abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "point {point} param {j}: {} vs {numeric}", g[j]);
            }
            assert!(skipped < 10, "{skipped} kink crossings at point {point}");
        }
    }

    #[test]
    fn saturated_exact_fit_has_tiny_gradient() {
        let mut m = SmallCnn::init(2, 3);
        let b = m.arch.dense_bias_offset;
        m.params[b] = 40.0;
        m.params[b + 1] = -40.0;
        let x = random_images(1, 4);
        let (loss, g) = m.loss_and_grad(&x, &[0], &[0]).unwrap();
        assert!(loss < 1e-20);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let m = SmallCnn::init(3, 5);
        let x = random_images(4, 6);
        let y = [0, 1, 2, 1];
        let (l1, g1) = m.loss_and_grad(&x, &y, &[0, 1, 2, 3]).unwrap();
        let (l2, g2) = m.loss_and_grad(&x, &y, &[0, 1, 2, 3, 0, 1, 2, 3]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-3));
        }
    }

    #[test]
    fn loss_is_mean_cross_entropy() {
        let m = SmallCnn::init(3, 5);
        let x = random_images(2, 6);
        let z = m.logits(&x).unwrap();
        let expect = (log_sum_exp(z.row(0)) - z.get(0, 2) + log_sum_exp(z.row(1)) - z.get(1, 0)) / 2.0;
        let (loss, _) = m.loss_and_grad(&x, &[2, 0], &[0, 1]).unwrap();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let m = SmallCnn::zeros(2);
        assert!(matches!(m.forward(&Matrix::zeros(1, 100)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn persist_round_trip() {
        let m = SmallCnn::init(5, 1);
        assert_eq!(SmallCnn::from_file(&m.to_file()).unwrap(), m);
    }
}
