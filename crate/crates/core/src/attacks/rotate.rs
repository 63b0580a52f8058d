use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pgd::finish;
use super::{AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Rotates each channel of a `[channels, height, width]` (or `[height,
/// width]`) image counter-clockwise by `degrees` about its center, with
/// bilinear interpolation; pixels mapped from outside the frame take `fill`.
pub fn rotate(x: &Tensor, degrees: f64, fill: f64) -> Result<Tensor> {
    let (c, h, w) = match *x.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => return Err(Error::Shape(format!("rotation needs an image, got shape {:?}", x.shape()))),
    };
    if degrees == 0.0 {
        return Ok(x.clone());
    }
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = x.data();
    let mut out = vec![fill; src.len()];
    for row in 0..h {
        for col in 0..w {
            let (dy, dx) = (row as f64 - cy, col as f64 - cx);
            // Inverse rotation: where does this output pixel come from?
            let sx = snap(cos * dx - sin * dy + cx);
            let sy = snap(sin * dx + cos * dy + cy);
            if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f64 || sx > (w - 1) as f64 {
                continue;
            }
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            for ch in 0..c {
                let at = |y: usize, x: usize| src[ch * h * w + y * w + x];
                let v = if fy == 0.0 && fx == 0.0 {
                    at(y0, x0)
                } else {
                    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
                };
                out[ch * h * w + row * w + col] = v;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Rotation by an angle drawn uniformly from `±max_degrees`, filled with the
/// lower end of the domain.
pub fn rotation_attack(model: &Model, x: &Tensor, y_true: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max = cfg.max_degrees.abs();
    let degrees = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
    let rotated = cfg.clip(&rotate(x, degrees, cfg.clip_range.0)?);
    finish(model, rotated, y_true, 1, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize) -> Tensor {
        Tensor::new(vec![1, h, w], (0..h * w).map(|v| v as f64 / (h * w) as f64).collect()).unwrap()
    }

    #[test]
    fn zero_is_identity() {
        let x = image(5, 4);
        assert_eq!(rotate(&x, 0.0, 0.0).unwrap(), x);
    }

    #[test]
    fn quarter_turn_is_a_permutation() {
        let x = image(4, 4);
        let r = rotate(&x, 90.0, -1.0).unwrap();
        // Counter-clockwise: out[row][col] = in[col][w - 1 - row].
        for row in 0..4 {
            for col in 0..4 {
                assert_eq!(r.data()[row * 4 + col], x.data()[col * 4 + (3 - row)]);
            }
        }
        let mut y = x.clone();
        for _ in 0..4 {
            y = rotate(&y, 90.0, -1.0).unwrap();
        }
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() <= 1e-9));
    }

    #[test]
    fn symmetric_image_survives_half_turn() {
        let data = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.4, 0.3, 0.2, 0.1];
        let x = Tensor::new(vec![3, 3], data).unwrap();
        let r = rotate(&x, 180.0, 0.0).unwrap();
        assert!(r.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn corners_are_filled() {
        let x = Tensor::full(&[1, 8, 8], 1.0);
        let r = rotate(&x, 45.0, 0.0).unwrap();
        assert_eq!(r.data()[0], 0.0);
        assert_eq!(r.data()[3 * 8 + 3], 1.0);
    }
}
