//! SLIC super-pixels on a grayscale image, followed by connectivity
//! enforcement.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::imaging::SquareImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub n_segments: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            n_segments: 200,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// A partition of a square image into 4-connected segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub side: usize,
    /// Row-major, values in `0..n_segments`.
    pub labels: Vec<u32>,
    pub n_segments: usize,
}

impl Segmentation {
    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.side + col] as usize
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_segments];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }

    /// Pixel indices of each segment, in raster order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![vec![]; self.n_segments];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l as usize].push(i);
        }
        m
    }
}

/// Cluster pixels on (intensity x 100, row, col) with the SLIC distance
/// `sqrt(dc^2 + (ds / S)^2 * compactness^2)`, `S = side / sqrt(K)`.
///
/// Seeds sit at the centers of an `ny x nx` grid with
/// `ny = round(sqrt(K))`, `nx = round(K / ny)`; each iteration searches a
/// `2S x 2S` window around every center. Afterwards every label keeps only
/// its largest 4-connected piece; other pieces and pieces smaller than a
/// quarter of the nominal segment area are merged into the largest
/// adjacent region. `K` is clamped to `1..=side^2`.
pub fn slic_segment(img: &SquareImage, params: SlicParams) -> Segmentation {
    let m = img.side;
    let n_pix = m * m;
    let k = params.n_segments.clamp(1, n_pix.max(1));
    let ny = ((k as f64).sqrt().round() as usize).clamp(1, m);
    let nx = ((k as f64 / ny as f64).round() as usize).clamp(1, m);
    let step = (n_pix as f64 / k as f64).sqrt();
    let intensity: Vec<f64> = img.pixels.iter().map(|&p| p as f64 * 100.0).collect();

    // center: (row, col, intensity)
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            let r = (i as f64 + 0.5) * m as f64 / ny as f64;
            let c = (j as f64 + 0.5) * m as f64 / nx as f64;
            let (ri, ci) = ((r as usize).min(m - 1), (c as usize).min(m - 1));
            centers.push([r, c, intensity[ri * m + ci]]);
        }
    }
    let mut labels: Vec<u32> = (0..n_pix)
        .map(|p| {
            let (r, c) = (p / m, p % m);
            let i = (r * ny / m).min(ny - 1);
            let j = (c * nx / m).min(nx - 1);
            (i * nx + j) as u32
        })
        .collect();

    let spatial = params.compactness / step;
    let window = step.ceil() as isize;
    let mut dist = vec![f64::INFINITY; n_pix];
    for _ in 0..params.iterations {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, ctr) in centers.iter().enumerate() {
            let (cr, cc) = (ctr[0].floor() as isize, ctr[1].floor() as isize);
            for r in (cr - window).max(0)..(cr + window + 1).min(m as isize) {
                for c in (cc - window).max(0)..(cc + window + 1).min(m as isize) {
                    let p = r as usize * m + c as usize;
                    let dc = intensity[p] - ctr[2];
                    let dr = r as f64 + 0.5 - ctr[0];
                    let dcol = c as f64 + 0.5 - ctr[1];
                    let d = dc * dc + (dr * dr + dcol * dcol) * spatial * spatial;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = ci as u32;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 4]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            s[0] += (p / m) as f64 + 0.5;
            s[1] += (p % m) as f64 + 0.5;
            s[2] += intensity[p];
            s[3] += 1.0;
        }
        for (ctr, s) in centers.iter_mut().zip(&sums) {
            if s[3] > 0.0 {
                *ctr = [s[0] / s[3], s[1] / s[3], s[2] / s[3]];
            }
        }
    }
    let min_size = ((n_pix as f64 / k as f64) / 4.0).floor() as usize;
    enforce_connectivity(m, &labels, min_size)
}

struct Components {
    /// Component index of each pixel.
    of: Vec<usize>,
    label: Vec<u32>,
    size: Vec<usize>,
}

/// 4-connected components of equal labels, numbered in raster order of
/// their first pixel.
fn components(m: usize, labels: &[u32]) -> Components {
    let mut of = vec![usize::MAX; labels.len()];
    let mut label = vec![];
    let mut size = vec![];
    let mut stack = vec![];
    for start in 0..labels.len() {
        if of[start] != usize::MAX {
            continue;
        }
        let id = size.len();
        let l = labels[start];
        let mut count = 0;
        of[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            count += 1;
            let (r, c) = (p / m, p % m);
            let mut visit = |q: usize| {
                if of[q] == usize::MAX && labels[q] == l {
                    of[q] = id;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - m);
            }
            if r + 1 < m {
                visit(p + m);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < m {
                visit(p + 1);
            }
        }
        label.push(l);
        size.push(count);
    }
    Components { of, label, size }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn enforce_connectivity(m: usize, labels: &[u32], min_size: usize) -> Segmentation {
    let comp = components(m, labels);
    let n = comp.size.len();

    let mut adjacent: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for p in 0..labels.len() {
        let (r, c) = (p / m, p % m);
        for q in [(c + 1 < m).then(|| p + 1), (r + 1 < m).then(|| p + m)].into_iter().flatten() {
            let (a, b) = (comp.of[p], comp.of[q]);
            if a != b {
                adjacent[a].insert(b);
                adjacent[b].insert(a);
            }
        }
    }

    let mut largest_of_label = std::collections::HashMap::new();
    for i in 0..n {
        let e = largest_of_label.entry(comp.label[i]).or_insert(i);
        if comp.size[i] > comp.size[*e] {
            *e = i;
        }
    }
    let keep: Vec<bool> = (0..n)
        .map(|i| largest_of_label[&comp.label[i]] == i && comp.size[i] >= min_size)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    let mut size = comp.size.clone();
    let mut order: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    order.sort_by_key(|&i| (comp.size[i], i));
    for c in order {
        if find(&mut parent, c) != c {
            continue;
        }
        let neighbors: BTreeSet<usize> = adjacent[c]
            .clone()
            .into_iter()
            .map(|a| find(&mut parent, a))
            .filter(|&a| a != c)
            .collect();
        // Largest region, lowest index on ties (BTreeSet iterates ascending).
        let Some(target) = neighbors.iter().copied().fold(None, |best: Option<usize>, a| match best {
            Some(b) if size[b] >= size[a] => Some(b),
            _ => Some(a),
        }) else {
            continue;
        };
        parent[c] = target;
        size[target] += size[c];
        let moved = std::mem::take(&mut adjacent[c]);
        adjacent[target].extend(moved);
    }

    let mut relabel = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut out = Vec::with_capacity(labels.len());
    for p in 0..labels.len() {
        let root = find(&mut parent, comp.of[p]);
        if relabel[root] == u32::MAX {
            relabel[root] = next;
            next += 1;
        }
        out.push(relabel[root]);
    }
    Segmentation {
        side: m,
        labels: out,
        n_segments: next as usize,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Flood-fill check: labels in range, every label nonempty and one
    /// 4-connected piece.
    pub fn assert_valid_partition(seg: &Segmentation) {
        assert_eq!(seg.labels.len(), seg.side * seg.side);
        assert!(seg.labels.iter().all(|&l| (l as usize) < seg.n_segments));
        let comp = components(seg.side, &seg.labels);
        assert_eq!(comp.size.len(), seg.n_segments, "some label is split or missing");
    }

    fn noise(side: usize, seed: u64) -> SquareImage {
        let mut rng = seeded_rng(seed);
        SquareImage::new(side, (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_segment() {
        let seg = slic_segment(&noise(20, 1), SlicParams { n_segments: 1, ..Default::default() });
        assert_eq!(seg.n_segments, 1);
        assert!(seg.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn constant_image_gives_quadrants() {
        let seg = slic_segment(&SquareImage::filled(40, 0.5), SlicParams { n_segments: 4, ..Default::default() });
        assert_eq!(seg.n_segments, 4);
        assert_eq!(seg.sizes(), vec![400; 4]);
        assert_eq!(seg.label(0, 0), seg.label(19, 19));
        assert_ne!(seg.label(0, 0), seg.label(0, 20));
        assert_ne!(seg.label(0, 0), seg.label(20, 0));
    }

    #[test]
    fn two_regions_split_at_the_edge() {
        let m = 224;
        let edge = 97;
        let px = (0..m * m).map(|p| if p % m < edge { 0.1 } else { 0.9 }).collect();
        let img = SquareImage::new(m, px).unwrap();
        let seg = slic_segment(&img, SlicParams { n_segments: 2, ..Default::default() });
        assert_eq!(seg.n_segments, 2);
        for r in 0..m {
            let boundary = (1..m).find(|&c| seg.label(r, c) != seg.label(r, c - 1)).unwrap();
            assert!(boundary.abs_diff(edge) <= 2, "row {r}: boundary at {boundary}");
        }
    }

    /// Smooth field with mild noise.
    pub fn textured(side: usize, seed: u64) -> SquareImage {
        let mut rng = seeded_rng(seed);
        let f = side as f32;
        let px = (0..side * side)
            .map(|p| {
                let (r, c) = ((p / side) as f32 / f, (p % side) as f32 / f);
                let v = 0.5 + 0.2 * (7.0 * r).sin() * (5.0 * c).cos() + 0.1 * (11.0 * (r + c)).sin();
                v + rng.random_range(-0.05..0.05)
            })
            .collect();
        SquareImage::new(side, px).unwrap()
    }

    #[test]
    fn default_count_is_bounded() {
        let seg = slic_segment(&noise(112, 3), SlicParams::default());
        assert_valid_partition(&seg);
        assert!(seg.n_segments <= 300, "{}", seg.n_segments);
        let seg = slic_segment(&textured(112, 3), SlicParams::default());
        assert_valid_partition(&seg);
        assert!((100..=300).contains(&seg.n_segments), "{}", seg.n_segments);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn always_a_connected_partition(seed in 0u64..1000, side in 4usize..40, k in 1usize..60) {
            let seg = slic_segment(&noise(side, seed), SlicParams { n_segments: k, ..Default::default() });
            assert_valid_partition(&seg);
        }
    }
}
