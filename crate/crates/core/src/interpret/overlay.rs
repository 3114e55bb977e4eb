use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::SquareImage;

use super::{Explanation, Segmentation};

const BOUNDARY: [u8; 3] = [255, 0, 0];
const POSITIVE: [f64; 3] = [0.0, 255.0, 0.0];
const NEGATIVE: [f64; 3] = [255.0, 0.0, 0.0];

/// Binary PPM (P6) of the image with segment boundaries in red and each
/// weighted segment tinted green (supports the class) or red (against),
/// with opacity `0.5 * |w| / max|w|`.
pub fn render_overlay(img: &SquareImage, seg: &Segmentation, e: &Explanation) -> Result<Vec<u8>> {
    let m = img.side;
    if seg.side != m || e.weights.len() != seg.n_segments {
        return Err(Error::ShapeMismatch(format!(
            "image side {m}, segmentation side {} with {} segments, {} weights",
            seg.side,
            seg.n_segments,
            e.weights.len()
        )));
    }
    let wmax = e.weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    let mut out = format!("P6\n{m} {m}\n255\n").into_bytes();
    out.reserve(m * m * 3);
    for r in 0..m {
        for c in 0..m {
            let l = seg.label(r, c);
            let edge = (c + 1 < m && seg.label(r, c + 1) != l) || (r + 1 < m && seg.label(r + 1, c) != l);
            if edge {
                out.extend_from_slice(&BOUNDARY);
                continue;
            }
            let g = (img.pixels[r * m + c].clamp(0.0, 1.0) as f64) * 255.0;
            let w = e.weights[l];
            let (alpha, tint) = if wmax > 0.0 && w != 0.0 {
                (0.5 * w.abs() / wmax, if w > 0.0 { POSITIVE } else { NEGATIVE })
            } else {
                (0.0, [0.0; 3])
            };
            for t in tint {
                out.push(((1.0 - alpha) * g + alpha * t).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_overlay(path: &Path, img: &SquareImage, seg: &Segmentation, e: &Explanation) -> Result<()> {
    let bytes = render_overlay(img, seg, e)?;
    std::fs::write(path, bytes).map_err(|err| Error::io(path, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpret::{slic_segment, SlicParams};

    fn explanation(weights: Vec<f64>) -> Explanation {
        Explanation {
            target_class: 0,
            target_probability: 1.0,
            intercept: 0.0,
            weights,
            used_samples: 1,
            local_fit_r2: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn header_boundaries_and_tints() {
        let img = SquareImage::filled(40, 0.5);
        let seg = slic_segment(&img, SlicParams { n_segments: 4, ..Default::default() });
        let mut w = vec![0.0; 4];
        w[seg.label(0, 0)] = 2.0;
        w[seg.label(39, 39)] = -1.0;
        let ppm = render_overlay(&img, &seg, &explanation(w.clone())).unwrap();
        let header = b"P6\n40 40\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        let px = |r: usize, c: usize| {
            let o = header.len() + (r * 40 + c) * 3;
            [ppm[o], ppm[o + 1], ppm[o + 2]]
        };
        assert_eq!(px(0, 19), BOUNDARY);
        assert_eq!(px(5, 5), [64, 191, 64]);
        assert_eq!(px(35, 35), [159, 96, 96]);
        let neutral = if w[seg.label(0, 39)] == 0.0 { (0, 39) } else { (39, 0) };
        assert_eq!(px(neutral.0, neutral.1), [128, 128, 128]);
        assert_eq!(ppm, render_overlay(&img, &seg, &explanation(w)).unwrap());
    }
}
