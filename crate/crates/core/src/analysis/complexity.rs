use serde::{Deserialize, Serialize};

use crate::image::RgbBuffer;

/// Gradient operator used by [`background_complexity`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFilter {
    /// One-pixel forward differences along x and y.
    #[default]
    ForwardDifference,
    /// 3×3 Sobel kernels. Its central differences cancel on a 1-px
    /// checkerboard, so the finest texture scores zero.
    Sobel,
}

impl EdgeFilter {
    /// Largest gradient magnitude for intensities in [0, 1].
    fn max_magnitude(self) -> f64 {
        match self {
            EdgeFilter::ForwardDifference => std::f64::consts::SQRT_2,
            EdgeFilter::Sobel => 4.0 * std::f64::consts::SQRT_2,
        }
    }
}

fn luma(p: [f32; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Mean gradient magnitude of the grayscale image, scaled so that an image
/// with intensities in [0, 1] scores in [0, 1]. Borders replicate the edge
/// pixels.
pub fn background_complexity(img: &RgbBuffer, filter: EdgeFilter) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let gray: Vec<f64> = img.pixels().iter().map(|&p| luma(p)).collect();
    let at = |x: i64, y: i64| gray[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = match filter {
                EdgeFilter::ForwardDifference => (at(x + 1, y) - at(x, y), at(x, y + 1) - at(x, y)),
                EdgeFilter::Sobel => (
                    (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                        - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1)),
                    (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                        - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1)),
                ),
            };
            sum += (gx * gx + gy * gy).sqrt();
        }
    }
    (sum / (w * h) as f64 / filter.max_magnitude()).min(1.0)
}
