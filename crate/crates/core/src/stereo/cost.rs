use rayon::prelude::*;

use super::{CostVolume, DisparitySign, SgmConfig, StereoError};
use crate::filters::sobel;
use crate::image::GrayImage;

/// Largest `|G_x| + |G_y|` a 0..=255 image can produce.
pub fn max_gradient_magnitude() -> f32 {
    2.0 * 4.0 * 255.0
}

/// `G_0 = |G_x| + |G_y|` from 3x3 Sobel kernels with replicate padding.
pub fn gradient_magnitude(img: &GrayImage) -> Result<GrayImage, StereoError> {
    img.ensure_min_size(3)?;
    let (gx, gy) = sobel(img);
    let data = gx.iter().zip(&gy).map(|(a, b)| a.abs() + b.abs()).collect();
    Ok(GrayImage::new(img.width(), img.height(), data).expect("same size"))
}

/// Windowed sum of absolute gradient differences
/// `C(x, d) = Σ_{|i|,|j|≤n} |G_l(x+i, y+j) − G_r(x∓d+i, y+j)|`.
///
/// Every sample is replicate-clamped independently. Disparities whose
/// centre correspondent leaves the right image get
/// [`SgmConfig::out_of_bounds_cost`].
pub fn matching_cost(grad_l: &GrayImage, grad_r: &GrayImage, cfg: &SgmConfig) -> Result<CostVolume, StereoError> {
    if (grad_l.width(), grad_l.height()) != (grad_r.width(), grad_r.height()) {
        return Err(StereoError::SizeMismatch {
            left: (grad_l.width(), grad_l.height()),
            right: (grad_r.width(), grad_r.height()),
        });
    }
    cfg.validate()?;
    let (w, h) = (grad_l.width(), grad_l.height());
    let dc = cfg.disparity_count();
    let n = cfg.window_radius as isize;
    let sentinel = cfg.out_of_bounds_cost();
    let sign: isize = match cfg.disparity_sign {
        DisparitySign::Negative => -1,
        DisparitySign::Positive => 1,
    };
    let mut costs = vec![0.0f32; w * h * dc];
    let span = w + 2 * n as usize;
    costs.par_chunks_mut(w * dc).enumerate().for_each(|(y, row)| {
        // colsum[x' + n] = Σ_j |G_l(clamp(x'), y+j) − G_r(clamp(x' ± d), y+j)| for virtual x' ∈ [−n, W+n).
        let mut colsum = vec![0.0f64; span];
        let rows: Vec<usize> = (-n..=n).map(|j| (y as isize + j).clamp(0, h as isize - 1) as usize).collect();
        for di in 0..dc {
            let d = (cfg.d_min + di) as isize;
            for (k, slot) in colsum.iter_mut().enumerate() {
                let xv = k as isize - n;
                let xl = xv.clamp(0, w as isize - 1) as usize;
                let xr = (xv + sign * d).clamp(0, w as isize - 1) as usize;
                let mut acc = 0.0f64;
                for &yy in &rows {
                    acc += (grad_l.get(xl, yy) - grad_r.get(xr, yy)).abs() as f64;
                }
                *slot = acc;
            }
            for x in 0..w {
                let centre = x as isize + sign * d;
                let value = if centre < 0 || centre >= w as isize {
                    sentinel
                } else {
                    colsum[x..x + 2 * n as usize + 1].iter().sum::<f64>() as f32
                };
                row[x * dc + di] = value;
            }
        }
    });
    let mut vol = CostVolume::new(w, h, cfg.d_min, dc, costs);
    vol.invalid_floor = sentinel;
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::WorkerPool;

    #[test]
    fn flat_image_has_zero_gradient() {
        let g = gradient_magnitude(&GrayImage::filled(7, 5, 100.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_step_edge() {
        let img = GrayImage::from_fn(6, 5, |x, _| if x >= 3 { 1.0 } else { 0.0 });
        let (gx, gy) = sobel(&img);
        let g = gradient_magnitude(&img).unwrap();
        // Column 2 is the last zero column, left of the step.
        assert_eq!(gx[2 * 6 + 2], 4.0);
        assert_eq!(gy[2 * 6 + 2], 0.0);
        assert_eq!(g.get(2, 2), 4.0);
    }

    #[test]
    fn transpose_swaps_axes() {
        let img = GrayImage::from_fn(9, 6, |x, y| ((x * 37 + y * 91) % 17) as f32 * 9.0);
        let (gx, gy) = sobel(&img);
        let t = img.transposed();
        let (tx, ty) = sobel(&t);
        for y in 0..6 {
            for x in 0..9 {
                assert_eq!(gx[y * 9 + x], ty[x * 6 + y]);
                assert_eq!(gy[y * 9 + x], tx[x * 6 + y]);
            }
        }
        let g = gradient_magnitude(&img).unwrap();
        assert_eq!(gradient_magnitude(&t).unwrap(), g.transposed());
    }

    #[test]
    fn tiny_image_rejected() {
        assert!(matches!(gradient_magnitude(&GrayImage::filled(2, 5, 0.0)), Err(StereoError::ImageTooSmall(_))));
    }

    fn noise(w: usize, h: usize, seed: u64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let mut v = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ seed;
            v ^= v >> 29;
            v = v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
            v ^= v >> 32;
            (v % 256) as f32
        })
    }

    #[test]
    fn identical_inputs_zero_cost_at_zero_disparity() {
        let g = gradient_magnitude(&noise(20, 12, 1)).unwrap();
        let cfg = SgmConfig { d_max: 4, ..SgmConfig::default() };
        let vol = matching_cost(&g, &g, &cfg).unwrap();
        for y in 0..12 {
            for x in 0..20 {
                assert_eq!(vol.at(x, y, 0), 0.0);
            }
        }
    }

    #[test]
    fn shifted_gradient_minimum_at_shift() {
        let gl = gradient_magnitude(&noise(60, 20, 2)).unwrap();
        // Right image content at column x is the left content at x + 5.
        let gr = GrayImage::from_fn(60, 20, |x, y| gl.get((x + 5).min(59), y));
        let cfg = SgmConfig { d_max: 12, ..SgmConfig::default() };
        let vol = matching_cost(&gl, &gr, &cfg).unwrap();
        for y in 3..17 {
            for x in 15..50 {
                let px = vol.pixel(x, y);
                let best = (0..px.len()).min_by(|&a, &b| px[a].total_cmp(&px[b])).unwrap();
                assert_eq!(best, 5, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn single_pixel_window_is_plain_difference() {
        let gl = gradient_magnitude(&noise(16, 8, 3)).unwrap();
        let gr = gradient_magnitude(&noise(16, 8, 4)).unwrap();
        let cfg = SgmConfig { window_radius: 0, d_min: 1, d_max: 6, ..SgmConfig::default() };
        let vol = matching_cost(&gl, &gr, &cfg).unwrap();
        for y in 0..8 {
            for x in 0..16 {
                for di in 0..6 {
                    let d = 1 + di;
                    let got = vol.at(x, y, di);
                    if x < d {
                        assert_eq!(got, cfg.out_of_bounds_cost());
                    } else {
                        assert_eq!(got, (gl.get(x, y) - gr.get(x - d, y)).abs());
                    }
                }
            }
        }
    }

    #[test]
    fn window_sum_matches_direct_definition() {
        let gl = gradient_magnitude(&noise(14, 9, 5)).unwrap();
        let gr = gradient_magnitude(&noise(14, 9, 6)).unwrap();
        let cfg = SgmConfig { d_max: 5, ..SgmConfig::default() };
        let vol = matching_cost(&gl, &gr, &cfg).unwrap();
        for y in 0..9isize {
            for x in 0..14isize {
                for d in 0..=5isize {
                    if x - d < 0 {
                        continue;
                    }
                    let mut acc = 0.0f64;
                    for j in -2..=2 {
                        for i in -2..=2 {
                            acc += (gl.get_clamped(x + i, y + j) - gr.get_clamped(x - d + i, y + j)).abs() as f64;
                        }
                    }
                    let got = vol.at(x as usize, y as usize, d as usize) as f64;
                    assert!((got - acc).abs() <= 1e-3 * (1.0 + acc), "({x},{y},{d})");
                }
            }
        }
    }

    #[test]
    fn positive_sign_samples_right_of_x() {
        let gl = gradient_magnitude(&noise(30, 10, 7)).unwrap();
        let gr = GrayImage::from_fn(30, 10, |x, y| gl.get(x.saturating_sub(3), y));
        let cfg = SgmConfig { d_max: 6, disparity_sign: DisparitySign::Positive, ..SgmConfig::default() };
        let vol = matching_cost(&gl, &gr, &cfg).unwrap();
        let px = vol.pixel(12, 5);
        let best = (0..px.len()).min_by(|&a, &b| px[a].total_cmp(&px[b])).unwrap();
        assert_eq!(best, 3);
        assert_eq!(vol.at(28, 5, 3), cfg.out_of_bounds_cost());
    }

    #[test]
    fn independent_of_pool_size() {
        let gl = gradient_magnitude(&noise(40, 30, 8)).unwrap();
        let gr = gradient_magnitude(&noise(40, 30, 9)).unwrap();
        let cfg = SgmConfig { d_max: 15, ..SgmConfig::default() };
        let one = WorkerPool::new(1).install(|| matching_cost(&gl, &gr, &cfg).unwrap());
        let many = WorkerPool::new(4).install(|| matching_cost(&gl, &gr, &cfg).unwrap());
        assert_eq!(one.costs.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), many.costs.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
